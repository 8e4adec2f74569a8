//! Minibatch SGD training runs.

use std::fs;
use std::path::Path;

use hingenet_core::dataio::{kfold_indices, minibatches, Dataset};
use hingenet_core::layers::gaussian_noise;
use hingenet_core::preprocess::{augment, Augment};
use hingenet_core::{sgd_momentum_step, HeadKind, Mode, RunRng, Schedule, SgdState, Tensor};
use rand::SeedableRng;

use crate::artifact::save_model;
use crate::config::RunConfig;
use crate::data::{prepare, prepare_from, PreparedData};
use crate::error::{HarnessError, Result};
use crate::eval::{cross_objective_eval, EvalConstants};
use crate::metrics::{metrics_csv, updates_csv, MetricsRecord, UpdateRecord};
use crate::model::{Model, Objective};

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Row 0 is the initial evaluation, then one row per epoch.
    pub metrics: Vec<MetricsRecord>,
    /// Filled only when per-update logging is on.
    pub updates: Vec<UpdateRecord>,
    pub warm_started: bool,
}

impl TrainOutcome {
    pub fn final_metrics(&self) -> &MetricsRecord {
        self.metrics.last().expect("the initial evaluation row is always present")
    }

    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.metrics)
    }
}

pub fn eval_constants(config: &RunConfig) -> EvalConstants {
    EvalConstants {
        c: config.svm_c,
        weight_decay: config.weight_decay,
    }
}

pub fn objective(config: &RunConfig, kind: HeadKind) -> Objective {
    Objective {
        kind,
        c: config.svm_c,
        weight_decay: config.weight_decay,
    }
}

/// Loads data, trains, and writes outputs when `out_dir` is set.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    let data = prepare(config)?;
    let outcome = train_prepared(config, &data)?;
    if let Some(dir) = &config.out_dir {
        write_outputs(config, &outcome, dir, None)?;
    }
    Ok(outcome)
}

/// Trains a fresh model on already prepared data. All randomness (weights,
/// shuffling, noise, dropout, augmentation) comes from one generator seeded
/// with `config.seed`.
pub fn train_prepared(config: &RunConfig, data: &PreparedData) -> Result<TrainOutcome> {
    let mut rng = RunRng::seed_from_u64(config.seed);
    let mut model = Model::build(
        &config.layers,
        &data.input_shape,
        config.classes,
        objective(config, config.head),
        config.init_std,
        &mut rng,
    )?;
    model.preprocessing = data.preprocessing.clone();
    fit(model, config, data, &mut rng, false)
}

/// Continues training `source` under `kind`, keeping every weight. The
/// config must describe the same architecture and preprocessing.
pub fn warm_start_prepared(
    source: &Model,
    kind: HeadKind,
    config: &RunConfig,
    data: &PreparedData,
) -> Result<TrainOutcome> {
    let mut rng = RunRng::seed_from_u64(config.seed);
    let template = Model::build(
        &config.layers,
        &data.input_shape,
        config.classes,
        objective(config, kind),
        config.init_std,
        &mut rng,
    )?;
    template.check_compatible(source)?;
    if source.preprocessing != data.preprocessing {
        return Err(HarnessError::Architecture(
            "the source model was trained with different preprocessing".into(),
        ));
    }
    let model = source.with_objective(objective(config, kind))?;
    fit(model, config, data, &mut rng, true)
}

/// Warm start from a saved model; writes outputs when `out_dir` is set.
pub fn warm_start(source_manifest: &Path, config: &RunConfig) -> Result<TrainOutcome> {
    let source = crate::artifact::load_model(source_manifest)?;
    let data = prepare(config)?;
    let outcome = warm_start_prepared(&source, config.head, config, &data)?;
    if let Some(dir) = &config.out_dir {
        write_outputs(config, &outcome, dir, Some(source_manifest))?;
    }
    Ok(outcome)
}

fn evaluate(model: &mut Model, data: &PreparedData, consts: EvalConstants) -> Result<(f64, crate::eval::CrossObjectiveReport)> {
    let own = cross_objective_eval(model, &data.train, consts)?.objective(model.head.spec.kind);
    let test = cross_objective_eval(model, &data.test, consts)?;
    Ok((own, test))
}

fn fit(
    mut model: Model,
    config: &RunConfig,
    data: &PreparedData,
    rng: &mut RunRng,
    warm_started: bool,
) -> Result<TrainOutcome> {
    let n = data.train.len();
    let per_epoch = n.div_ceil(config.batch_size) as u64;
    let total = (config.epochs as u64 * per_epoch).max(1);
    let lr = Schedule::new(config.lr_start, config.lr_end, total)?;
    let noise = Schedule::new(config.noise_start, config.noise_end, total)?;
    let consts = eval_constants(config);
    let lower = model.lower_weight_indices();
    let aug = Augment {
        mirror_prob: config.mirror_prob,
        max_jitter: config.jitter,
    };
    if config.augment && data.input_shape.len() != 3 {
        return Err(HarnessError::config(format!(
            "augmentation needs image input (C×H×W), got {:?}",
            data.input_shape
        )));
    }
    let mut state = SgdState::new(config.momentum, model.params())?;
    let mut updates: u64 = 0;
    let mut metrics = Vec::with_capacity(config.epochs + 1);
    let mut update_log = Vec::new();

    let record = |model: &mut Model, epoch: usize, updates: u64| -> Result<MetricsRecord> {
        let (train_loss, test) = evaluate(model, data, consts)?;
        Ok(MetricsRecord {
            epoch,
            updates,
            lr: lr.at(updates),
            noise_std: noise.at(updates),
            train_loss,
            test_error_pct: test.error_pct,
            avg_xent: test.avg_xent,
            hinge_sq_sum: test.hinge_sq_sum,
            hinge_sq_mean: test.hinge_sq_mean,
        })
    };
    metrics.push(record(&mut model, 0, 0)?);

    for epoch in 1..=config.epochs {
        let plan = minibatches(n, config.batch_size, rng)?;
        let batches = plan.num_batches();
        for (b, idx) in plan.batches().enumerate() {
            let step_lr = lr.at(updates);
            let step_noise = noise.at(updates);
            let mut x = data.train.inputs.select_rows(idx)?;
            if config.augment {
                let mut shape = vec![idx.len()];
                shape.extend(&data.input_shape);
                let (rows, d) = (x.rows(), x.row_len());
                x = augment(&x.reshape(&shape)?, &aug, rng)?.reshape(&[rows, d])?;
            }
            if step_noise > 0.0 {
                x = gaussian_noise(&x, step_noise, rng)?;
            }
            let labels: Vec<usize> = idx.iter().map(|&i| data.train.labels[i]).collect();
            let (out, mut grads) = model.loss_and_grads(&x, &labels, &mut Mode::Train(rng))?;
            if !out.loss.is_finite() {
                return Err(HarnessError::NonFiniteLoss {
                    epoch,
                    minibatch: b + 1,
                    batches,
                    update: updates + 1,
                    loss: out.loss,
                });
            }
            if config.lower_weight_decay > 0.0 {
                let params = model.params();
                for &i in &lower {
                    grads[i].add_scaled_inplace(config.lower_weight_decay, params[i])?;
                }
            }
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            sgd_momentum_step(&mut model.params_mut(), &grad_refs, &mut state, step_lr)?;
            updates += 1;
            if config.log_every_update {
                update_log.push(UpdateRecord {
                    epoch,
                    update: updates,
                    lr: step_lr,
                    noise_std: step_noise,
                    batch_loss: out.loss,
                });
            }
        }
        let row = record(&mut model, epoch, updates)?;
        log::info!(
            "epoch {epoch}: train loss {:.6}, test error {:.2}%",
            row.train_loss,
            row.test_error_pct
        );
        metrics.push(row);
    }
    Ok(TrainOutcome {
        model,
        metrics,
        updates: update_log,
        warm_started,
    })
}

/// Writes `config.txt`, the metrics CSV, the model artifact and (if
/// logged) per-update rows into `dir`. Warm-started runs use a
/// `warmstart_` prefix so they never overwrite the source run.
pub fn write_outputs(config: &RunConfig, outcome: &TrainOutcome, dir: &Path, source: Option<&Path>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let prefix = if outcome.warm_started { "warmstart_" } else { "" };
    let write = |name: String, text: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| HarnessError::io(&p, e))
    };
    let echo = config.echo();
    write(format!("{prefix}config.txt"), echo.clone())?;
    write(format!("{prefix}metrics.csv"), outcome.metrics_csv())?;
    if config.log_every_update {
        write(format!("{prefix}updates.csv"), updates_csv(&outcome.updates))?;
    }
    save_model(&outcome.model, dir.join(format!("{prefix}model.json")), &echo, source)
}

/// Seeded k-fold cross-validation over a raw training split. Preprocessing
/// is refit inside every fold. Returns the final held-out error % per fold.
pub fn cross_validate(config: &RunConfig, raw_train: &Dataset, k: usize) -> Result<Vec<f64>> {
    let mut rng = RunRng::seed_from_u64(config.seed);
    let folds = kfold_indices(raw_train.len(), k, &mut rng)?;
    folds
        .iter()
        .map(|(train_idx, held_idx)| {
            let data = prepare_from(config, raw_train.subset(train_idx)?, raw_train.subset(held_idx)?)?;
            Ok(train_prepared(config, &data)?.final_metrics().test_error_pct)
        })
        .collect()
}
