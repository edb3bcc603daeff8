//! Argument parsing and dispatch for the `hcnn` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::bench::{self, BenchOptions};
use super::selftest::{self, SelftestOptions};
use super::{
    eval_run, exit, exit_code, gradcheck_preset, parse_sweep, sweep, train_run, write_gradcheck_csv, ExperimentConfig,
    Precision, RunOptions,
};
use crate::error::{Error, Result};
use crate::models::PRESETS;

#[derive(Debug, Parser)]
#[command(name = "hcnn", version, about = "Fully hyperbolic CNNs in the Lorentz model")]
pub struct Cli {
    /// More log output (-v info is the default, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the geometry and layer invariant suites.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multiplier on the number of cases per suite.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Finite-difference gradient check of every layer of a preset (64-bit).
    Gradcheck {
        #[arg(long, default_value = "lenet-hcnn")]
        preset: String,
        /// Maximum relative error.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the CSV report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a saved run without modifying it.
    Eval {
        /// Run directory holding config.json and model.ckpt.
        #[arg(long)]
        run: PathBuf,
        /// Checkpoint to load instead of <run>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Time forward+backward per layer kind, hyperbolic vs Euclidean.
    Bench {
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 32, value_parser = parse_precision)]
        precision: u8,
        /// Directory for bench.csv (the report is printed either way).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective config for a preset, file and overrides.
    Config(ConfigArgs),
}

fn parse_precision(s: &str) -> std::result::Result<u8, String> {
    let bits: u8 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    Precision::try_from(bits).map(|_| bits)
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON config file (replaces the preset).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, default_value = "lenet-hcnn")]
    pub preset: String,
    /// Swap hyperbolic layers for their Euclidean twins.
    #[arg(long)]
    pub euclidean: bool,
    /// Dotted override, e.g. `train.optimizer.lr=0.01` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<u8>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::preset(&self.preset, self.euclidean).map_err(|e| match e {
                Error::Model(m) => Error::Config(format!("{m} (presets: {})", PRESETS.join(", "))),
                e => e,
            })?,
        };
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("model.seed={s}"));
            overrides.push(format!("train.seed={s}"));
        }
        if let Some(p) = self.precision {
            overrides.push(format!("precision={p}"));
        }
        base.with_overrides(&overrides)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Parent directory of run directories.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Dataset root holding mnist/ (default: $HCNN_DATA_DIR, then ./data).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// One run per value, e.g. `K=-0.5,-1,-2`.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Run sweep points concurrently.
    #[arg(long)]
    pub parallel: bool,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0 | 1) => log::LevelFilter::Info,
        (false, _) => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_target(false).try_init();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    let mut stdout = std::io::stdout().lock();
    match cmd {
        Command::Selftest { seed, scale } => {
            let opts = SelftestOptions {
                seed,
                scale,
                ..Default::default()
            };
            let reports = selftest::run_all(&opts);
            for r in &reports {
                let status = if r.passed() { "PASS" } else { "FAIL" };
                writeln!(stdout, "{status} {:<16} {:>5}/{:<5} cases", r.name, r.cases - r.failed, r.cases)?;
                if let Some(f) = &r.first {
                    writeln!(stdout, "     violated: {}", r.invariant)?;
                    writeln!(stdout, "     first failure (seed {}): {}", f.seed, f.message)?;
                }
            }
            let failed = reports.iter().filter(|r| !r.passed()).count();
            writeln!(stdout, "{} suites, {failed} failed", reports.len())?;
            Ok(if failed == 0 { exit::OK } else { exit::FAILURE })
        }
        Command::Gradcheck {
            preset,
            tol,
            batch,
            seed,
            report,
        } => {
            let rows = gradcheck_preset(&preset, tol, batch, seed)?;
            write_gradcheck_csv(&rows, &mut stdout)?;
            if let Some(p) = report {
                write_gradcheck_csv(&rows, std::fs::File::create(p)?)?;
            }
            let bad: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.layer.as_str()).collect();
            if bad.is_empty() {
                Ok(exit::OK)
            } else {
                log::error!("gradient check failed at tolerance {tol:e}: {}", bad.join(", "));
                Ok(exit::FAILURE)
            }
        }
        Command::Train(args) => {
            let cfg = args.config.resolve()?;
            let opts = RunOptions {
                out: args.out,
                data_dir: args.data_dir,
            };
            let outcomes = match &args.sweep {
                None => vec![(String::new(), train_run(&cfg, &opts))],
                Some(s) => {
                    let (key, values) = parse_sweep(s)?;
                    sweep(&cfg, &key, &values, args.parallel, &opts)?
                }
            };
            let mut code = exit::OK;
            for (value, outcome) in outcomes {
                let label = if value.is_empty() { String::new() } else { format!("[{value}] ") };
                match outcome {
                    Ok(o) => {
                        writeln!(stdout, "{label}{}", o.dir.display())?;
                        writeln!(stdout, "{}", serde_json::to_string(&o.summary)?)?;
                    }
                    Err(e) => {
                        log::error!("{label}{e}");
                        code = code.max(exit_code(&e));
                    }
                }
            }
            Ok(code)
        }
        Command::Eval {
            run,
            checkpoint,
            data_dir,
        } => {
            let r = eval_run(&run, checkpoint.as_deref(), data_dir.as_deref())?;
            writeln!(stdout, "{}", serde_json::to_string_pretty(&r)?)?;
            Ok(exit::OK)
        }
        Command::Bench {
            repeats,
            batch,
            precision,
            out,
        } => {
            let opts = BenchOptions {
                repeats,
                batch,
                ..Default::default()
            };
            let rows = match Precision::try_from(precision).map_err(Error::Config)? {
                Precision::F32 => bench::run::<f32>(&opts)?,
                Precision::F64 => bench::run::<f64>(&opts)?,
            };
            let mut w = csv::Writer::from_writer(&mut stdout);
            for r in &rows {
                w.serialize(r).map_err(crate::training::csv_err)?;
            }
            w.flush()?;
            drop(w);
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                bench::write_csv(&rows, &dir.join("bench.csv"))?;
            }
            Ok(exit::OK)
        }
        Command::Config(args) => {
            let cfg = args.resolve()?;
            writeln!(stdout, "{}", cfg.to_json())?;
            Ok(exit::OK)
        }
    }
}
