use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gaugelab::experiments::verify::{format_table, verify, Selector};
use gaugelab::experiments::{find, registry, run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "gaugelab", version, about = "Gauge-corrected SGD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        experiment: String,
        /// JSON config file; command-line flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory [default: out/<experiment>].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        emit_samples: bool,
    },
    /// List registered experiments with their default configs.
    List,
    /// Run the acceptance criteria.
    Verify {
        #[arg(long, conflicts_with = "experiment")]
        all: bool,
        #[arg(long)]
        experiment: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        tol_scale: f64,
    },
}

fn run(cli: Cli) -> gaugelab::Result<bool> {
    match cli.command {
        Command::List => {
            for e in registry() {
                println!("{:<18} {:<8} {}", e.name, e.figure, e.description);
                println!("    {}", serde_json::to_string(&e.default_config())?);
            }
            Ok(true)
        }
        Command::Run { experiment, config, seed, out, steps, emit_samples } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => find(&experiment)?.default_config(),
            };
            if cfg.experiment != experiment {
                return Err(gaugelab::Error::Config(format!(
                    "config is for '{}', not '{experiment}'",
                    cfg.experiment
                )));
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = steps {
                cfg.dynamics.total_steps = Some(n);
            }
            cfg.emit_samples |= emit_samples;
            cfg.output_dir = Some(out.or(cfg.output_dir).unwrap_or_else(|| PathBuf::from("out").join(&experiment)));
            let report = run_experiment(&cfg)?;
            for c in &report.comparisons {
                println!("[{}] {}", if c.passed { "PASS" } else { "FAIL" }, c.describe());
            }
            if let Some(f) = &report.failure {
                println!("run failed: {f}");
            }
            let dir = cfg.output_dir.as_deref().expect("set above");
            println!("{} in {:.1}s, artifacts in {}", report.experiment, report.wall_clock_s, dir.display());
            Ok(report.passed)
        }
        Command::Verify { all, experiment, tol_scale } => {
            let selector = match (all, experiment) {
                (_, Some(name)) => Selector::Experiment(name),
                _ => Selector::All,
            };
            let results = verify(&selector, tol_scale)?;
            print!("{}", format_table(&results));
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
