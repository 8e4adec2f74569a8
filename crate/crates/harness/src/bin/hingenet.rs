use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hingenet::artifact::load_model;
use hingenet::data::load_raw;
use hingenet::eval::error_pct;
use hingenet::train::eval_constants;
use hingenet::{cross_objective_eval, ensemble_predict, HarnessError, RunConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "hingenet", version, about = "Train and evaluate networks with softmax or SVM output objectives")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics.csv, config.txt and model.json/.bin.
    Train(Common),
    /// Score the model named by `model` under all three objectives.
    Eval(Common),
    /// Finite-difference check of the configured network, or of the built-in suite.
    Gradcheck(Common),
    /// Continue training the model named by `warm_start_from` under `head`.
    Warmstart(Common),
    /// Average the models listed in `ensemble` and report test error.
    Ensemble(Common),
}

#[derive(Args)]
struct Common {
    /// Run config (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, HarnessError> {
        let mut cfg = RunConfig::from_file(&self.config)?;
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        if let Some(d) = &self.out_dir {
            cfg.set("out_dir", &d.display().to_string())?;
        }
        Ok(cfg)
    }
}

fn write_json(dir: Option<&Path>, name: &str, value: &serde_json::Value) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("plain JSON values serialize");
    println!("{text}");
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| HarnessError::Io { path: dir.into(), source: e })?;
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| HarnessError::Io { path: p, source: e })?;
    }
    Ok(())
}

fn required<'a>(v: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, HarnessError> {
    v.as_deref()
        .ok_or_else(|| HarnessError::Config(format!("this command needs `{key}` in the config")))
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.load()?;
            eprint!("{}", cfg.echo());
            let out = hingenet::train(&cfg)?;
            let last = out.final_metrics();
            println!(
                "epochs {} updates {} train_loss {} test_error_pct {}",
                last.epoch, last.updates, last.train_loss, last.test_error_pct
            );
            Ok(true)
        }
        Command::Warmstart(c) => {
            let cfg = c.load()?;
            let src = required(&cfg.warm_start_from, "warm_start_from")?.to_path_buf();
            let out = hingenet::warm_start(&src, &cfg)?;
            let first = &out.metrics[0];
            let last = out.final_metrics();
            println!(
                "warm-started from {}: test error {}% -> {}%",
                src.display(),
                first.test_error_pct,
                last.test_error_pct
            );
            Ok(true)
        }
        Command::Eval(c) => {
            let cfg = c.load()?;
            let mut model = load_model(required(&cfg.model, "model")?)?;
            let (_, test) = load_raw(&cfg)?;
            let mut test = test;
            test.inputs = model.preprocessing.apply(&test.flattened())?;
            let report = cross_objective_eval(&mut model, &test, eval_constants(&cfg))?;
            let value = json!({
                "model": cfg.model,
                "head": model.head.spec.kind.to_string(),
                "constants": eval_constants(&cfg),
                "report": report,
            });
            write_json(cfg.out_dir.as_deref(), "eval.json", &value)?;
            Ok(true)
        }
        Command::Ensemble(c) => {
            let cfg = c.load()?;
            let mut members = cfg.ensemble.iter().map(load_model).collect::<Result<Vec<_>, _>>()?;
            let (_, test) = load_raw(&cfg)?;
            let mut member_errors = Vec::new();
            for m in &mut members {
                member_errors.push(error_pct(&m.predict_raw(&test.inputs)?, &test.labels));
            }
            let pred = ensemble_predict(&mut members, &test.inputs)?;
            let value = json!({
                "members": cfg.ensemble,
                "averaging": pred.averaging,
                "member_error_pct": member_errors,
                "ensemble_error_pct": error_pct(&pred.labels, &test.labels),
            });
            write_json(cfg.out_dir.as_deref(), "ensemble.json", &value)?;
            Ok(true)
        }
        Command::Gradcheck(c) => {
            let cfg = c.load()?;
            let report = hingenet::gradcheck::gradcheck(&cfg)?;
            print!("{report}");
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
