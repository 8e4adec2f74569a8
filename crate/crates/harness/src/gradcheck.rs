//! Finite-difference verification of whole networks: every parameter
//! tensor and the input, through the configured head.

use hingenet_core::gradcheck::{central_difference, compare, GradcheckReport, DEFAULT_EPS, DEFAULT_TOLERANCE};
use hingenet_core::heads::head_scores;
use hingenet_core::{HeadKind, Layer, Mode, RunRng, Tensor};
use rand::{Rng, SeedableRng};

use crate::config::{parse_layers, LayerSpec, RunConfig};
use crate::error::{HarnessError, Result};
use crate::model::{Model, Objective};

/// Largest layer width, channel count or spatial size a check accepts.
pub const MAX_DIM: usize = 16;

/// Minimum distance from a ReLU or max-pool kink.
const KINK_MARGIN: f64 = 1e-4;
/// Minimum distance of every L1-SVM margin from 1.
const HINGE_MARGIN: f64 = 1e-3;
const MAX_ATTEMPTS: u64 = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckCase {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub input_shape: Vec<usize>,
    pub head: HeadKind,
    pub classes: usize,
    pub batch: usize,
    pub seed: u64,
}

impl GradcheckCase {
    fn new(name: &str, layers: &str, input_shape: &[usize], head: HeadKind) -> Self {
        GradcheckCase {
            name: name.into(),
            layers: parse_layers(layers).expect("built-in layer list"),
            input_shape: input_shape.to_vec(),
            head,
            classes: 4,
            batch: 3,
            seed: 0,
        }
    }
}

/// Dense, ReLU, convolution (padded and unpadded), max-pool, flatten and
/// dropout, under each of the three heads.
pub fn default_suite() -> Vec<GradcheckCase> {
    let mut cases = Vec::new();
    for head in HeadKind::ALL {
        cases.push(GradcheckCase::new(&format!("mlp/{head}"), "dense:8,relu,dense:6,relu", &[5], head));
    }
    cases.push(GradcheckCase::new(
        "conv/l2svm",
        "conv:4:3:0,relu,pool,conv:3:3,relu,flatten,dense:6",
        &[2, 6, 6],
        HeadKind::L2Svm,
    ));
    cases.push(GradcheckCase::new(
        "conv/softmax",
        "conv:3:3,relu,pool,flatten,dense:5,relu",
        &[2, 6, 6],
        HeadKind::Softmax,
    ));
    cases.push(GradcheckCase::new(
        "dropout/l2svm",
        "dense:8,relu,dropout:0.3,dense:6",
        &[5],
        HeadKind::L2Svm,
    ));
    cases
}

/// The config's own network if `layers` is set explicitly, otherwise the
/// default suite. Exceeding [`MAX_DIM`] anywhere is a config error.
pub fn gradcheck(config: &RunConfig) -> Result<GradcheckReport> {
    if !config.is_set("layers") {
        return run_cases(&default_suite());
    }
    let input_shape = config.input_shape.clone().unwrap_or_else(|| vec![6]);
    let case = GradcheckCase {
        name: format!("config/{}", config.head),
        layers: config.layers.clone(),
        input_shape,
        head: config.head,
        classes: config.classes,
        batch: 3,
        seed: config.seed,
    };
    check_tiny(&case)?;
    run_cases(&[case])
}

fn check_tiny(case: &GradcheckCase) -> Result<()> {
    let too_big = |what: &str, v: usize| {
        Err(HarnessError::config(format!(
            "gradcheck needs tiny models: {what} = {v} exceeds {MAX_DIM}"
        )))
    };
    if case.input_shape.iter().any(|&d| d > MAX_DIM) {
        return too_big("input dimension", *case.input_shape.iter().max().unwrap());
    }
    if case.classes > MAX_DIM {
        return too_big("classes", case.classes);
    }
    for l in &case.layers {
        match *l {
            LayerSpec::Dense(n) if n > MAX_DIM => return too_big("dense width", n),
            LayerSpec::Conv { filters, .. } if filters > MAX_DIM => return too_big("conv filters", filters),
            _ => {}
        }
    }
    Ok(())
}

pub fn run_cases(cases: &[GradcheckCase]) -> Result<GradcheckReport> {
    let mut report = GradcheckReport::new(DEFAULT_TOLERANCE);
    for case in cases {
        report.extend(check_case(case)?);
    }
    Ok(report)
}

/// A random model and batch with every ReLU input, pool window and L1
/// margin clear of its kink.
fn sample_point(case: &GradcheckCase) -> Result<(Model, Tensor, Vec<usize>, u64)> {
    let objective = Objective {
        kind: case.head,
        c: 0.7,
        weight_decay: 0.05,
    };
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = RunRng::seed_from_u64(case.seed.wrapping_mul(1_000_003).wrapping_add(attempt));
        let mut model = Model::build(&case.layers, &case.input_shape, case.classes, objective, 0.5, &mut rng)?;
        for p in model.params_mut() {
            for v in p.data_mut() {
                *v = rng.random_range(-0.6..0.6);
            }
        }
        let d: usize = case.input_shape.iter().product();
        let x = Tensor::new(&[case.batch, d], (0..case.batch * d).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let labels: Vec<usize> = (0..case.batch).map(|_| rng.random_range(0..case.classes)).collect();
        let mask_seed = rng.random::<u64>();
        if clear_of_kinks(&mut model, &x, &labels, mask_seed)? {
            return Ok((model, x, labels, mask_seed));
        }
    }
    Err(HarnessError::config(format!(
        "gradcheck case {}: no kink-free point found in {MAX_ATTEMPTS} draws",
        case.name
    )))
}

fn clear_of_kinks(model: &mut Model, x: &Tensor, labels: &[usize], mask_seed: u64) -> Result<bool> {
    let mut shape = vec![x.rows()];
    shape.extend(&model.input_shape);
    let mut h = x.clone().reshape(&shape)?;
    let mut rng = RunRng::seed_from_u64(mask_seed);
    let mut mode = Mode::Train(&mut rng);
    for layer in &mut model.layers {
        let ok = match layer {
            Layer::Relu { .. } => h.data().iter().all(|v| v.abs() > KINK_MARGIN),
            Layer::MaxPool { .. } => pool_windows_clear(&h),
            _ => true,
        };
        if !ok {
            return Ok(false);
        }
        h = layer.forward(&h, &mut mode)?;
    }
    if model.head.spec.kind == HeadKind::L1Svm {
        let s = head_scores(&model.head.weights, &h)?;
        let k = model.num_classes();
        for (i, row) in s.data().chunks(k).enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let t = if labels[i] == j { 1.0 } else { -1.0 };
                if (1.0 - v * t).abs() < HINGE_MARGIN {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

fn pool_windows_clear(x: &Tensor) -> bool {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    x.data().chunks(h * w).all(|plane| {
        (0..h / 2).all(|i| {
            (0..w / 2).all(|j| {
                let mut v = [
                    plane[2 * i * w + 2 * j],
                    plane[2 * i * w + 2 * j + 1],
                    plane[(2 * i + 1) * w + 2 * j],
                    plane[(2 * i + 1) * w + 2 * j + 1],
                ];
                v.sort_by(|a, b| b.total_cmp(a));
                v[0] - v[1] > KINK_MARGIN
            })
        })
    })
}

/// Compares analytic and central-difference gradients for every parameter
/// tensor and the input. Dropout masks are held fixed by reseeding the
/// mask generator for every evaluation.
pub fn check_case(case: &GradcheckCase) -> Result<GradcheckReport> {
    let (mut model, x, labels, mask_seed) = sample_point(case)?;
    let mut mask_rng = RunRng::seed_from_u64(mask_seed);
    let (_, grads, d_x) = model.full_backward(&x, &labels, &mut Mode::Train(&mut mask_rng))?;

    let loss_of = |m: &mut Model, x: &Tensor| -> f64 {
        let mut r = RunRng::seed_from_u64(mask_seed);
        m.loss(x, &labels, &mut Mode::Train(&mut r)).expect("shapes fixed by the first pass")
    };

    let mut report = GradcheckReport::new(DEFAULT_TOLERANCE);
    let names = model.param_names();
    let originals: Vec<Tensor> = model.params().into_iter().cloned().collect();
    for (i, (name, p0)) in names.iter().zip(&originals).enumerate() {
        let mut probe = model.clone();
        let numeric = central_difference(p0, DEFAULT_EPS, |p| {
            *probe.params_mut()[i] = p.clone();
            loss_of(&mut probe, &x)
        });
        report.push(compare(format!("{}/{name}", case.name), &grads[i], &numeric)?);
    }
    let mut probe = model.clone();
    let numeric = central_difference(&x, DEFAULT_EPS, |x| loss_of(&mut probe, x));
    report.push(compare(format!("{}/input", case.name), &d_x, &numeric)?);
    Ok(report)
}
