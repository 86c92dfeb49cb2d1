use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedrec_core::config::{validate_config, DatasetSource, ExperimentConfig};
use fedrec_core::data::{generate_synthetic, write_dataset, DatasetPaths, SynthConfig};
use fedrec_core::experiment::{rerender_verdict, run_experiment, verdict_to_json};
use fedrec_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_AUDIT: u8 = 4;
const EXIT_DELTA: u8 = 5;

#[derive(Parser)]
#[command(
    name = "fedrec",
    version,
    about = "Federated privacy-preserving recommender experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment and write artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Exit with a distinct code when the precision-loss check fails.
        #[arg(long)]
        enforce_delta: bool,
    },
    /// Check a config file and list every violation.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic dataset as CSV.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute the verdict from stored metrics reports.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Config(_) | Error::InvalidConfig(_) => EXIT_CONFIG,
        Error::PrivacyViolation { .. } => EXIT_AUDIT,
        _ => EXIT_RUNTIME,
    }
}

/// Any failure to read or check the config is a configuration error.
fn load(config: &Path) -> Result<ExperimentConfig, Error> {
    validate_config(config).map_err(|e| match e {
        Error::Io { path, source } => Error::Config(format!("{}: {source}", path.display())),
        other => other,
    })
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            enforce_delta,
        } => {
            let mut cfg = load(&config)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let outcome = run_experiment(&cfg)?;
            let v = &outcome.verdict;
            println!(
                "rounds={} ndcg@10 FL={:.4} Sum={:.4} PublicOnly={:.4} mean(Local)={:.4}",
                outcome.summary.rounds_run,
                v.fl_primary,
                v.sum_primary,
                v.public_only_primary.unwrap_or(f64::NAN),
                v.mean_local_primary
            );
            println!(
                "delta gap={:.4} (threshold {}) {}; validity fraction {:.3}; audit {}/{} passed",
                v.primary_gap,
                v.delta_threshold,
                if v.delta_pass { "PASS" } else { "FAIL" },
                v.validity_fraction,
                outcome.audit.passed,
                outcome.audit.messages
            );
            println!("artifacts in {}", cfg.output_dir.display());
            if !outcome.audit.clean() {
                return Ok(EXIT_AUDIT);
            }
            if enforce_delta && !v.delta_pass {
                return Ok(EXIT_DELTA);
            }
            Ok(0)
        }
        Command::Validate { config } => match load(&config) {
            Ok(_) => {
                println!("{}: ok", config.display());
                Ok(0)
            }
            Err(Error::InvalidConfig(violations)) => {
                for v in &violations {
                    println!("{v}");
                }
                println!("{} violation(s)", violations.len());
                Ok(EXIT_CONFIG)
            }
            Err(e) => Err(e),
        },
        Command::Synth { config, out, seed } => {
            let (synth, base_seed) = match config {
                Some(path) => {
                    let cfg = load(&path)?;
                    match cfg.dataset {
                        DatasetSource::Synthetic(s) => (s, cfg.seed),
                        DatasetSource::Files { .. } => {
                            return Err(Error::Config(
                                "synth needs a config with a synthetic dataset".into(),
                            ))
                        }
                    }
                }
                None => (SynthConfig::default(), 0),
            };
            let dataset = generate_synthetic(&synth, seed.unwrap_or(base_seed))?;
            write_dataset(&dataset, &DatasetPaths::in_dir(&out))?;
            println!(
                "wrote {} items, {} users to {}",
                dataset.n_items(),
                dataset.n_users(),
                out.display()
            );
            Ok(0)
        }
        Command::Report { out, delta } => {
            let verdict = rerender_verdict(&out, delta)?;
            println!("{}", verdict_to_json(&verdict)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
