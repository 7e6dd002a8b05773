//! `ceils`: generate data, fit models, explain single rows and run or
//! re-score full experiments.
//!
//! Exit codes: 0 success, 2 invalid input, 3 failure while computing.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ceils::data::{generate_credit_like, generate_synthetic, load_csv};
use ceils::experiment::{load_inputs, recompute_metrics, run_experiment, Explainer, ExperimentConfig};
use ceils::Error;

#[derive(Parser)]
#[command(name = "ceils", version, about = "Causal counterfactual explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    /// Two-feature `X1 -> X2` problem with a median-thresholded label.
    Synthetic,
    /// Credit-style table: age, gender, amount, duration, label.
    Credit,
}

#[derive(clap::Args)]
struct RunFlags {
    /// Experiment config (JSON).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(short, long)]
    seed: Option<u64>,
    /// Overrides the config's worker count.
    #[arg(short, long)]
    workers: Option<usize>,
}

impl RunFlags {
    fn load(&self) -> ceils::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(dir) = &self.output_dir {
            cfg.output_dir.clone_from(dir);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Writes a generated dataset as CSV.
    SynthGen {
        #[arg(long, value_enum, default_value = "synthetic")]
        kind: Kind,
        #[arg(short, long, default_value_t = 10_000)]
        n: usize,
        #[arg(short, long, default_value_t = 0)]
        seed: u64,
        /// Destination CSV file.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fits the SCM and classifier and saves them to the output directory.
    Fit(RunFlags),
    /// Explains one CSV row with both generators, printing JSON.
    Explain {
        /// Directory written by `fit` or `experiment`.
        #[arg(short, long)]
        model_dir: PathBuf,
        #[arg(short, long)]
        data: PathBuf,
        /// Data row to explain, counting from 1.
        #[arg(short, long)]
        row: usize,
        #[arg(long, default_value = "label")]
        label: String,
    },
    /// Runs a full experiment and prints the metrics table.
    Experiment(RunFlags),
    /// Recomputes the metrics of a finished run from its results file.
    Metrics {
        /// Directory written by `experiment`.
        #[arg(short = 'd', long)]
        run_dir: PathBuf,
    },
}

fn synth_gen(kind: Kind, n: usize, seed: u64, output: &Path) -> ceils::Result<()> {
    let bundle = match kind {
        Kind::Synthetic => generate_synthetic(n, seed)?,
        Kind::Credit => generate_credit_like(n, seed)?,
    };
    if let Some(dir) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    bundle.write_csv(output, "label")?;
    eprintln!("wrote {} rows to {}", bundle.len(), output.display());
    Ok(())
}

fn fit(flags: &RunFlags) -> ceils::Result<()> {
    let cfg = flags.load()?;
    let (dag, data) = load_inputs(&cfg)?;
    let explainer = Explainer::fit(&data, &dag, &cfg)?;
    explainer.save(&cfg.output_dir)?;
    println!(
        "{}",
        serde_json::json!({
            "output_dir": cfg.output_dir,
            "training_rows": data.train.len(),
            "regressors": explainer.scm.regressor_count(),
            "classifier_training_accuracy": explainer.classifier.training_accuracy(),
            "threshold": explainer.threshold,
        })
    );
    Ok(())
}

fn explain(model_dir: &Path, data: &Path, row: usize, label: &str) -> ceils::Result<()> {
    let explainer = Explainer::load(model_dir)?;
    let bundle = load_csv(data, explainer.scm.graph(), label)?;
    if row == 0 || row > bundle.len() {
        return Err(Error::Config(format!(
            "row {row} outside 1..={}",
            bundle.len()
        )));
    }
    let x = bundle.features.row(row - 1);
    let out = serde_json::json!({
        "row": row,
        "threshold": explainer.threshold,
        "baseline": explainer.baseline(x)?,
        "ceils": explainer.ceils(x)?,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn experiment(flags: &RunFlags) -> ceils::Result<()> {
    let cfg = flags.load()?;
    let out = run_experiment(&cfg)?;
    print!("{}", out.report.to_csv());
    eprintln!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SynthGen {
            kind,
            n,
            seed,
            output,
        } => synth_gen(*kind, *n, *seed, output),
        Command::Fit(flags) => fit(flags),
        Command::Explain {
            model_dir,
            data,
            row,
            label,
        } => explain(model_dir, data, *row, label),
        Command::Experiment(flags) => experiment(flags),
        Command::Metrics { run_dir } => recompute_metrics(run_dir).map(|r| print!("{}", r.to_csv())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
