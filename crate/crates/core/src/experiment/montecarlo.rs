use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{hash_value, ExperimentConfig, Layout};
use crate::error::{FriError, Result};
use crate::friednet::{
    reconstruct_friednet, train_encoder, train_known_kernel, train_unknown_kernel, Decoder, Encoder, FriedExample,
    FriedNet,
};
use crate::kernels::{exp_repro_coeffs, ExpReproCoeffs, Kernel};
use crate::nn::{load_params, save_params};
use crate::rng::{derive_seed, stream, substream};
use crate::signal_model::{
    add_noise_sigma, align_estimates, sd_metric_aligned, synthesize, AlignedEstimate, DiracStream, Method,
    ReconstructionResult, SampleSet, SamplingConfig, SdReport,
};
use crate::spectral::{default_split, reconstruct_classical, Denoiser};
use crate::unfolded::{reconstruct_unfolded, train_unfolded, UnfoldedExample, UnfoldedNetwork};

const PURPOSE_TRAIN: u64 = 1;
const PURPOSE_EVAL: u64 = 2;
const PURPOSE_MODEL: u64 = 3;

/// One grid point. `psnr = None` is noiseless.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub psnr: Option<f64>,
    pub dt0: f64,
}

impl Cell {
    /// Seed for one purpose in this cell; depends on the cell values, not on
    /// their position in the grid, so different grids share realizations.
    fn seed(&self, root: u64, purpose: u64) -> u64 {
        let psnr_bits = self.psnr.unwrap_or(f64::INFINITY).to_bits();
        derive_seed(derive_seed(derive_seed(root, purpose), psnr_bits), self.dt0.to_bits())
    }
}

/// One Monte Carlo realization: the truth and its clean and noisy samples.
#[derive(Clone, Debug)]
pub struct Realization {
    pub stream: DiracStream,
    pub clean: SampleSet,
    pub noisy: SampleSet,
}

/// Kernel, moment coefficients and sampling setup shared by a whole sweep.
pub struct Problem {
    pub cfg: ExperimentConfig,
    pub kernel: Kernel,
    pub coeffs: ExpReproCoeffs,
    pub sampling: SamplingConfig,
}

impl Problem {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let kernel = cfg.kernel.build()?;
        let (omega0, lambda) = cfg.kernel.frequencies();
        let coeffs = exp_repro_coeffs(&kernel, cfg.kernel.order(), omega0, lambda, cfg.samples)?;
        Ok(Self { cfg: cfg.clone(), kernel, coeffs, sampling: SamplingConfig::periodic(cfg.samples, cfg.tau) })
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &psnr in &self.cfg.psnr {
            for &dt0 in &self.cfg.dt0 {
                out.push(Cell { psnr, dt0 });
            }
        }
        out
    }

    /// Draws a stream for the configured layout and adds noise relative to the
    /// peak clean sample.
    pub fn realization<R: Rng + ?Sized>(&self, rng: &mut R, cell: Cell) -> Result<Realization> {
        let tau = self.cfg.tau;
        let [lo, hi] = self.cfg.amplitude_range;
        let stream = match self.cfg.layout {
            Layout::Pair => {
                let first = rng.random_range(-0.5 * tau..0.5 * tau - cell.dt0);
                let a = rng.random_range(lo..hi);
                DiracStream::new(tau, vec![first, first + cell.dt0], vec![a, a])?
            }
            Layout::Uniform => DiracStream::random(rng, self.cfg.k, tau, (lo, hi))?,
        };
        let clean = synthesize(&stream, &self.kernel, &self.sampling)?;
        let noisy = match cell.psnr {
            Some(psnr) => add_noise_sigma(&clean, clean.peak() * 10f64.powf(-psnr / 20.0), rng)?,
            None => clean.clone(),
        };
        Ok(Realization { stream, clean, noisy })
    }

    pub fn training_set(&self, cell: Cell) -> Result<Vec<Realization>> {
        let seed = cell.seed(self.cfg.seed, PURPOSE_TRAIN);
        (0..self.cfg.train_size).map(|i| self.realization(&mut substream(seed, i as u64), cell)).collect()
    }

    pub fn evaluation_set(&self, cell: Cell) -> Result<Vec<Realization>> {
        let seed = cell.seed(self.cfg.seed, PURPOSE_EVAL);
        (0..self.cfg.realizations).map(|j| self.realization(&mut substream(seed, j as u64), cell)).collect()
    }

    fn fresh_friednet(&self, cell: Cell) -> Result<FriedNet> {
        let s = &self.cfg.friednet;
        let mut rng = stream(cell.seed(self.cfg.seed, PURPOSE_MODEL));
        let encoder = Encoder::new(self.cfg.samples, self.cfg.k, s.encoder, &mut rng)?;
        let decoder = if s.known_kernel {
            Decoder::fixed(&self.kernel, s.delta, self.sampling)?
        } else {
            let n = self.cfg.samples as f64;
            Decoder::learnable(n, (n / 2.0).floor(), s.delta, self.sampling, &mut rng)?
        };
        FriedNet::new(encoder, decoder)
    }

    fn fresh_unfolded(&self) -> Result<UnfoldedNetwork> {
        let p = self.cfg.kernel.order();
        UnfoldedNetwork::init(p, default_split(p), self.cfg.k, &self.cfg.unfolded.init)
    }

    /// Cache key over everything that determines the trained weights.
    pub fn model_key(&self, cell: Cell) -> Option<String> {
        let c = &self.cfg;
        let family = match c.method {
            Method::Unfolded => json!({"unfolded": c.unfolded}),
            Method::FriedEncoder => json!({"encoder": c.friednet}),
            Method::FriedNet | Method::FriedNetFinetuned => json!({"friednet": c.friednet}),
            _ => return None,
        };
        let v = json!({
            "model": family,
            "kernel": c.kernel,
            "samples": c.samples,
            "k": c.k,
            "tau": c.tau,
            "layout": c.layout,
            "amplitude_range": c.amplitude_range,
            "train_size": c.train_size,
            "seed": c.seed,
            "psnr": cell.psnr,
            "dt0": cell.dt0,
        });
        Some(hash_value(&v))
    }
}

/// A model trained for one cell.
#[derive(Clone, Debug)]
pub enum TrainedModel {
    Classical,
    Unfolded(UnfoldedNetwork),
    Fried(FriedNet),
}

fn checkpoint_path(dir: &Path, method: Method, key: &str) -> PathBuf {
    let family = match method {
        Method::Unfolded => "unfolded",
        Method::FriedEncoder => "encoder",
        _ => "friednet",
    };
    dir.join(format!("{family}-{key}.frit"))
}

fn try_load(problem: &Problem, cell: Cell, path: &Path) -> Result<TrainedModel> {
    let params = load_params(path)?;
    match problem.cfg.method {
        Method::Unfolded => {
            let p = problem.cfg.kernel.order();
            Ok(TrainedModel::Unfolded(UnfoldedNetwork::from_params(p, default_split(p), problem.cfg.k, params)?))
        }
        _ => {
            let mut net = problem.fresh_friednet(cell)?;
            net.load_params(params)?;
            Ok(TrainedModel::Fried(net))
        }
    }
}

/// Trains (or loads from `cache`) the model a cell needs.
pub fn train_cell(problem: &Problem, cell: Cell, cache: Option<&Path>) -> Result<(TrainedModel, Option<PathBuf>)> {
    let Some(key) = problem.model_key(cell) else {
        return Ok((TrainedModel::Classical, None));
    };
    let path = cache.map(|dir| checkpoint_path(dir, problem.cfg.method, &key));
    if let Some(p) = path.as_deref().filter(|p| p.exists()) {
        match try_load(problem, cell, p) {
            Ok(model) => {
                log::info!("loaded cached model {}", p.display());
                return Ok((model, path));
            }
            Err(e) => log::warn!("cached model {} unusable ({e}); retraining", p.display()),
        }
    }
    let data = problem.training_set(cell)?;
    let train_seed = cell.seed(problem.cfg.seed, PURPOSE_MODEL);
    let model = match problem.cfg.method {
        Method::Unfolded => {
            let m = default_split(problem.cfg.kernel.order());
            let examples = data
                .iter()
                .map(|r| UnfoldedExample::from_samples(&r.noisy, &problem.coeffs, r.stream.locations(), m))
                .collect::<Result<Vec<_>>>()?;
            let mut net = problem.fresh_unfolded()?;
            train_unfolded(&mut net, &examples, &problem.cfg.unfolded.train_config(train_seed))?;
            if let Some(p) = &path {
                save_params(p, &net.params)?;
            }
            TrainedModel::Unfolded(net)
        }
        method => {
            let examples: Vec<FriedExample> = data
                .iter()
                .map(|r| FriedExample {
                    noisy: r.noisy.values.clone(),
                    clean: Some(r.clean.values.clone()),
                    locations: r.stream.locations().to_vec(),
                    amplitudes: Some(r.stream.amplitudes().to_vec()),
                })
                .collect();
            let mut net = problem.fresh_friednet(cell)?;
            let tc = problem.cfg.friednet.train_config(train_seed);
            match (method, problem.cfg.friednet.known_kernel) {
                (Method::FriedEncoder, _) => train_encoder(&mut net, &examples, &tc)?,
                (_, true) => train_known_kernel(&mut net, &examples, &tc)?,
                (_, false) => train_unknown_kernel(&mut net, &examples, &tc)?,
            };
            if let Some(p) = &path {
                save_params(p, &net.to_params())?;
            }
            TrainedModel::Fried(net)
        }
    };
    Ok((model, path))
}

/// Reconstructs one noisy realization with the configured method.
pub fn reconstruct(problem: &Problem, model: &TrainedModel, samples: &SampleSet) -> Result<ReconstructionResult> {
    let c = &problem.cfg;
    match (c.method, model) {
        (Method::PronyCadzow, _) => reconstruct_classical(
            samples,
            &problem.coeffs,
            &problem.kernel,
            c.k,
            Denoiser::Cadzow { iterations: c.cadzow_iterations },
        ),
        (Method::PronyPwgd, _) => reconstruct_classical(
            samples,
            &problem.coeffs,
            &problem.kernel,
            c.k,
            Denoiser::Pwgd { delta1: c.pwgd.delta1, delta2: c.pwgd.delta2, iterations: c.pwgd.iterations },
        ),
        (Method::Unfolded, TrainedModel::Unfolded(net)) => {
            reconstruct_unfolded(net, samples, &problem.coeffs, &problem.kernel)
        }
        (Method::FriedEncoder | Method::FriedNet, TrainedModel::Fried(net)) => {
            reconstruct_friednet(net, samples, None, c.method)
        }
        (Method::FriedNetFinetuned, TrainedModel::Fried(net)) => {
            reconstruct_friednet(net, samples, Some(&c.friednet.finetune), c.method)
        }
        (m, _) => Err(FriError::Config(format!("no trained model for method `{}`", m.as_str()))),
    }
}

/// Scores J realizations; a failed reconstruction counts as K misses.
pub fn evaluate_cell(problem: &Problem, cell: Cell, model: &TrainedModel) -> Result<SdReport> {
    let aligned = problem
        .evaluation_set(cell)?
        .iter()
        .map(|r| match reconstruct(problem, model, &r.noisy) {
            Ok(res) => align_estimates(&res, &r.stream),
            Err(FriError::Config(msg)) => Err(FriError::Config(msg)),
            Err(e) => {
                log::debug!("reconstruction failed: {e}");
                Ok(AlignedEstimate {
                    locations: vec![None; r.stream.k()],
                    amplitudes: vec![None; r.stream.k()],
                    errors: vec![None; r.stream.k()],
                    missing: r.stream.k(),
                    spurious: 0,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    sd_metric_aligned(&aligned)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub psnr: Option<f64>,
    pub dt0: f64,
    pub sd_mean: Option<f64>,
    pub sd_median: Option<f64>,
    pub misses: usize,
    pub falses: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub cells: Vec<CellResult>,
}

impl Summary {
    pub fn cell(&self, psnr: Option<f64>, dt0: f64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.psnr == psnr && c.dt0 == dt0)
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn fmt_opt(v: Option<f64>, none: &str) -> String {
    v.map(|x| format!("{x}")).unwrap_or_else(|| none.to_string())
}

/// Writes `sd_mean.csv` (rows PSNR, columns Δt₀) and `summary.json`.
pub fn write_results(dir: &Path, cfg: &ExperimentConfig, summary: &Summary) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("sd_mean.csv"))?;
    let mut header = vec!["psnr".to_string()];
    header.extend(cfg.dt0.iter().map(|d| format!("{d}")));
    w.write_record(&header)?;
    for &psnr in &cfg.psnr {
        let mut row = vec![fmt_opt(psnr, "inf")];
        for &dt0 in &cfg.dt0 {
            row.push(fmt_opt(summary.cell(psnr, dt0).and_then(|c| c.sd_mean), "nan"));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    let text = serde_json::to_string_pretty(summary)?;
    std::fs::write(dir.join("summary.json"), text + "\n")?;
    Ok(())
}

/// Trains every cell's model into `<output_dir>/models`; returns the checkpoints.
pub fn train_models(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let problem = Problem::new(cfg)?;
    let dir = cfg.output_dir.join("models");
    std::fs::create_dir_all(&dir)?;
    let mut out = Vec::new();
    for cell in problem.cells() {
        if let (_, Some(p)) = train_cell(&problem, cell, Some(&dir))? {
            out.push(p);
        }
    }
    Ok(out)
}

/// Full sweep: train (cached), evaluate every cell, write the results.
/// Wall-clock timings go to `timing.json`, outside the reproducible files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Summary> {
    let problem = Problem::new(cfg)?;
    let models = cfg.output_dir.join("models");
    std::fs::create_dir_all(&models)?;
    let mut cells = Vec::new();
    let mut timing = Vec::new();
    for cell in problem.cells() {
        let start = Instant::now();
        let (model, _) = train_cell(&problem, cell, Some(&models))?;
        let report = evaluate_cell(&problem, cell, &model)?;
        log::info!(
            "{} psnr={} dt0={}: sd_mean={:.3e} misses={}",
            cfg.method.as_str(),
            fmt_opt(cell.psnr, "inf"),
            cell.dt0,
            report.mean,
            report.misses
        );
        timing.push(json!({"psnr": cell.psnr, "dt0": cell.dt0, "runtime_s": start.elapsed().as_secs_f64()}));
        cells.push(CellResult {
            psnr: cell.psnr,
            dt0: cell.dt0,
            sd_mean: finite(report.mean),
            sd_median: finite(report.median),
            misses: report.misses,
            falses: report.spurious,
        });
    }
    let summary = Summary { config_hash: cfg.hash(), cells };
    write_results(&cfg.output_dir, cfg, &summary)?;
    std::fs::write(cfg.output_dir.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
    Ok(summary)
}
