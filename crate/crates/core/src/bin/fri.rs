use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fri_core::calcium::{
    double_consistency_detect, preprocess_trace, read_detections_csv, roc_eval, write_detections_csv, write_roc_csv,
    FluorescenceTrace, SpikeTrain,
};
use fri_core::experiment::{
    breakdown_map, load_calcium_models, load_config, load_json, log_grid, reconstruct, run_calcium, run_experiment,
    train_cell, train_models, write_breakdown_csv, CalciumExperimentConfig, Cell, ExperimentConfig, KernelSpec, Problem,
};
use fri_core::rng::substream;
use fri_core::signal_model::{Boundary, DiracStream, SampleSet};
use fri_core::{FriError, Result};

#[derive(Parser)]
#[command(name = "fri", version, about = "Finite-rate-of-innovation reconstruction experiments")]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set friednet.stage1_epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn experiment(&self) -> Result<ExperimentConfig> {
        load_config(&self.config, &self.overrides)
    }

    fn calcium(&self) -> Result<CalciumExperimentConfig> {
        let text = std::fs::read_to_string(&self.config)?;
        let cfg: CalciumExperimentConfig = load_json(&text, &self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct CellArgs {
    /// PSNR of the cell in dB, or `inf` (defaults to the first configured value).
    #[arg(long)]
    psnr: Option<String>,
    /// Separation of the cell (defaults to the first configured value).
    #[arg(long)]
    dt0: Option<f64>,
}

impl CellArgs {
    fn cell(&self, cfg: &ExperimentConfig) -> Result<Cell> {
        let psnr = match self.psnr.as_deref() {
            None => cfg.psnr[0],
            Some("inf") => None,
            Some(s) => Some(s.parse().map_err(|_| FriError::Config(format!("bad --psnr `{s}`")))?),
        };
        Ok(Cell { psnr, dt0: self.dt0.unwrap_or(cfg.dt0[0]) })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw one seeded realization and write its stream and samples.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        cell: CellArgs,
        /// Realization index within the cell's evaluation set.
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a Dirac stream from a samples file with the configured method.
    Reconstruct {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        cell: CellArgs,
        /// One sample per line.
        #[arg(long)]
        samples: PathBuf,
        /// Output `t,a` CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train (or reuse cached) models for every cell of the grid.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the Monte Carlo sweep and write the CSV grid and JSON summary.
    Montecarlo {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Breakdown PSNR over a log-spaced separation grid.
    BreakdownMap {
        #[arg(long, default_value_t = 20)]
        order: usize,
        #[arg(long, default_value_t = 21)]
        samples: usize,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 1e-3)]
        lo: f64,
        #[arg(long, default_value_t = 0.1)]
        hi: f64,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spike detection: the full synthetic run, or one trace with trained models.
    CalciumDetect {
        #[command(flatten)]
        config: ConfigArgs,
        /// Trace CSV `time,fluorescence[,neuropil]`; models come from `<output_dir>/models`.
        #[arg(long, requires = "out")]
        trace: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// ROC curve of detections against ground-truth spikes.
    EvalRoc {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        spikes: PathBuf,
        /// Trace the detections came from (sets the rate and bin count).
        #[arg(long)]
        trace: PathBuf,
        /// Matching tolerance in samples.
        #[arg(long, default_value_t = 2.0)]
        acceptance: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { config, cell, index, out } => {
            let cfg = config.experiment()?;
            let problem = Problem::new(&cfg)?;
            let cell = cell.cell(&cfg)?;
            let seed = fri_core::rng::derive_seed(cfg.seed, index);
            let r = problem.realization(&mut substream(seed, 0), cell)?;
            std::fs::create_dir_all(&out)?;
            r.stream.write_csv(&out.join("stream.csv"))?;
            r.clean.write_csv(&out.join("clean.csv"))?;
            r.noisy.write_csv(&out.join("samples.csv"))?;
            println!("{}", out.display());
        }
        Command::Reconstruct { config, cell, samples, out } => {
            let cfg = config.experiment()?;
            let problem = Problem::new(&cfg)?;
            let y = SampleSet::read_csv(&samples, cfg.tau, Boundary::Periodic)?;
            if y.values.len() != cfg.samples {
                return Err(FriError::Config(format!("config expects {} samples, file has {}", cfg.samples, y.values.len())));
            }
            let models = cfg.output_dir.join("models");
            std::fs::create_dir_all(&models)?;
            let (model, _) = train_cell(&problem, cell.cell(&cfg)?, Some(&models))?;
            let res = reconstruct(&problem, &model, &y)?;
            DiracStream::wrapped(cfg.tau, res.locations, res.amplitudes)?.write_csv(&out)?;
            println!("{}", out.display());
        }
        Command::Train { config } => {
            for p in train_models(&config.experiment()?)? {
                println!("{}", p.display());
            }
        }
        Command::Montecarlo { config } => {
            let cfg = config.experiment()?;
            let summary = run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::BreakdownMap { order, samples, tau, lo, hi, points, out } => {
            let (_, lambda) = KernelSpec::Emoms { order }.frequencies();
            let grid = log_grid(lo, hi, points)?;
            let curve = breakdown_map(order, lambda, tau / samples as f64, &grid)?;
            write_breakdown_csv(&out, &curve)?;
            for p in curve.iter().filter(|p| p.error.is_some()) {
                log::warn!("dt0 = {}: {}", p.dt0, p.error.as_deref().unwrap_or(""));
            }
            println!("{}", out.display());
        }
        Command::CalciumDetect { config, trace, threshold, out } => {
            let mut cfg = config.calcium()?;
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            match (trace, out) {
                (Some(trace), Some(out)) => {
                    let models = load_calcium_models(&cfg.output_dir.join("models"), &cfg.windows, &cfg.train)?;
                    let raw = FluorescenceTrace::read_csv(&trace)?;
                    let clean = preprocess_trace(&raw, cfg.contamination)?;
                    let (det, _) = double_consistency_detect(&models, &clean, &cfg.windows, cfg.threshold)?;
                    write_detections_csv(&out, &det)?;
                    println!("{}", out.display());
                }
                _ => {
                    let summary = run_calcium(&cfg)?;
                    println!("{}", serde_json::to_string_pretty(&summary)?);
                }
            }
        }
        Command::EvalRoc { detections, spikes, trace, acceptance, out } => {
            let det = read_detections_csv(&detections)?;
            let truth = SpikeTrain::read_csv(&spikes)?;
            let trace = FluorescenceTrace::read_csv(&trace)?;
            let roc = roc_eval(&det, &truth, acceptance / trace.sample_rate, trace.len());
            write_roc_csv(&out, &roc)?;
            println!("{}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
