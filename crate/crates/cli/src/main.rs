//! `dsesim`: Monte-Carlo simulation of attacked dynamic state estimation.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 numerical
//! failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dse_core::attacks::{random_attack, AttackSpec, AttackVector};
use dse_core::harness::{
    bench_runtime, emit_report, load_scenario, run_scenario, stream_rng, BenchConfig, PreparedAttack, ReportFormat,
};
use dse_core::model::{load_model, validate_model};
use dse_core::Error;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "dsesim",
    version,
    about = "Attack-resilient dynamic state estimation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario file and write the per-step RMSE report.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to the scenario's `output_path`, else stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Defaults to the output extension, else csv.
        #[arg(long)]
        format: Option<ReportFormat>,
    },
    /// Time MMSE, PCNA and CCKF on random models with n = 3p.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [10, 25, 50])]
        p: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// CSV, or JSON when the extension is `.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an attack vector from an attack spec file. Window attacks emit
    /// one vector per step of the window, as a JSON array.
    AttackGen {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed for random attacks.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a model file and print a validation report as JSON.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Simulate {
            config,
            seed,
            out,
            format,
        } => {
            let mut cfg = load_scenario(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out = out.or_else(|| cfg.output_path.clone());
            let format = match (format, &out) {
                (Some(f), _) => f,
                (None, Some(path)) if has_extension(path, "json") => ReportFormat::Json,
                _ => ReportFormat::Csv,
            };
            let report = run_scenario(&cfg)?;
            match out {
                Some(path) => emit_report(&report, path, format),
                None => {
                    let body = match format {
                        ReportFormat::Csv => report.to_csv(),
                        ReportFormat::Json => report.to_json() + "\n",
                    };
                    write_stdout(&body)
                }
            }
        }
        Command::Bench {
            p,
            reps,
            steps,
            seed,
            out,
        } => {
            let cfg = BenchConfig {
                reps,
                steps,
                seed,
                ..BenchConfig::default()
            };
            let table = bench_runtime(&p, &cfg)?;
            let body = if has_extension(&out, "json") {
                to_json(&table)? + "\n"
            } else {
                table.to_csv()
            };
            write_file(&out, &body)
        }
        Command::AttackGen { model, spec, out, seed } => {
            let model = load_model(&model)?;
            let text = read_file(&spec)?;
            let spec: AttackSpec =
                serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", spec.display())))?;
            let body = match PreparedAttack::new(&spec, &model)? {
                PreparedAttack::None => to_json(&AttackFile::from(&AttackVector::zeros(model.n())))?,
                PreparedAttack::Random { m, magnitude } => {
                    let v = random_attack(&model, m, magnitude, &mut stream_rng(seed, 0, 0))?;
                    to_json(&AttackFile::from(&v))?
                }
                PreparedAttack::Fixed(v) => to_json(&AttackFile::from(&v))?,
                PreparedAttack::Window { bypass, eta } => {
                    let blocks: Vec<AttackFile> = (0..eta)
                        .map(|t| {
                            let phi = bypass.block(t, model.n());
                            let support = (0..phi.len()).filter(|&i| phi[i] != 0.0).collect();
                            AttackFile {
                                phi: phi.as_slice().to_vec(),
                                support,
                            }
                        })
                        .collect();
                    to_json(&blocks)?
                }
            };
            write_file(&out, &(body + "\n"))
        }
        Command::Validate { model } => {
            let model = load_model(&model)?;
            let report = validate_model(&model);
            write_stdout(&(to_json(&report)? + "\n"))?;
            match report.violations.first() {
                None => Ok(()),
                Some(v) => Err(Error::InvalidField {
                    field: v.field.clone(),
                    reason: v.message.clone(),
                }),
            }
        }
    }
}

/// Attack vector with `phi` as a plain list.
#[derive(Serialize)]
struct AttackFile {
    phi: Vec<f64>,
    support: Vec<usize>,
}

impl From<&AttackVector> for AttackFile {
    fn from(v: &AttackVector) -> Self {
        Self {
            phi: v.phi.as_slice().to_vec(),
            support: v.support.clone(),
        }
    }
}

fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Error> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))
}

fn read_file(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, body: &str) -> Result<(), Error> {
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_stdout(body: &str) -> Result<(), Error> {
    std::io::stdout()
        .write_all(body.as_bytes())
        .map_err(|source| Error::Io {
            path: "<stdout>".into(),
            source,
        })
}
