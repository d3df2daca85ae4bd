use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::hash_value;
use crate::calcium::{
    double_consistency_detect, preprocess_trace, roc_eval, synth_calcium, train_calcium_models, write_detections_csv,
    write_roc_csv, CalciumModel, CalciumModels, CalciumSynthConfig, CalciumTrainConfig, Detection, FluorescenceTrace,
    RocPoint, SpikeTrain, WindowConfig, DEFAULT_CONTAMINATION,
};
use crate::error::{FriError, Result};
use crate::friednet::{Decoder, Encoder, FriedNet};
use crate::nn::{load_params, save_params};
use crate::rng::{derive_seed, stream, substream};
use crate::signal_model::SamplingConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalciumExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_train_traces")]
    pub train_traces: usize,
    #[serde(default = "default_test_traces")]
    pub test_traces: usize,
    #[serde(default)]
    pub synth: CalciumSynthConfig,
    #[serde(default)]
    pub windows: WindowConfig,
    #[serde(default)]
    pub train: CalciumTrainConfig,
    #[serde(default = "default_contamination")]
    pub contamination: f64,
    /// Probability threshold for the reported detections.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub output_dir: PathBuf,
}

fn default_train_traces() -> usize {
    2
}
fn default_test_traces() -> usize {
    1
}
fn default_contamination() -> f64 {
    DEFAULT_CONTAMINATION
}
fn default_threshold() -> f64 {
    0.1
}

impl CalciumExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_traces == 0 || self.test_traces == 0 {
            return Err(FriError::Config("need at least one training and one test trace".into()));
        }
        let w = &self.windows;
        if w.step == 0 || w.short.iter().chain(&w.long).any(|&l| l < 2) || w.k_long == 0 {
            return Err(FriError::Config("window lengths must be >= 2, step and k_long >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(FriError::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(map) = &mut v {
            map.remove("output_dir");
            map.remove("threshold");
            map.remove("test_traces");
        }
        hash_value(&v)
    }
}

/// Seeded synthetic traces (train first, then test), already neuropil-corrected.
pub fn calcium_datasets(cfg: &CalciumExperimentConfig) -> Result<(Vec<(FluorescenceTrace, SpikeTrain)>, Vec<(FluorescenceTrace, SpikeTrain)>)> {
    let make = |label: u64, count: usize| -> Result<Vec<(FluorescenceTrace, SpikeTrain)>> {
        (0..count)
            .map(|i| {
                let s = synth_calcium(&mut substream(derive_seed(cfg.seed, label), i as u64), &cfg.synth)?;
                Ok((preprocess_trace(&s.trace, cfg.contamination)?, s.spikes))
            })
            .collect()
    };
    Ok((make(1, cfg.train_traces)?, make(2, cfg.test_traces)?))
}

fn model_file(dir: &Path, short: bool, window: usize) -> PathBuf {
    dir.join(format!("{}-{window}.frit", if short { "short" } else { "long" }))
}

/// Same shapes as the trained models, with throwaway weights.
fn skeleton(windows: &WindowConfig, train: &CalciumTrainConfig) -> Result<CalciumModels> {
    let mut rng = stream(0);
    let mut models = CalciumModels::default();
    for &w in &windows.short {
        let n = w as f64;
        let decoder = Decoder::learnable(2.0 * n, 1.5 * n, train.delta, SamplingConfig::open(w, 1.0), &mut rng)?;
        let encoder = Encoder::new(w, 1, train.encoder, &mut rng)?;
        models.short.push(CalciumModel { window: w, encoder, decoder: Some(decoder) });
    }
    for &w in &windows.long {
        let encoder = Encoder::new(w, windows.k_long, train.encoder, &mut rng)?;
        models.long.push(CalciumModel { window: w, encoder, decoder: None });
    }
    Ok(models)
}

pub fn save_calcium_models(dir: &Path, models: &CalciumModels) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for m in &models.short {
        save_params(&model_file(dir, true, m.window), &m.to_params())?;
    }
    for m in &models.long {
        save_params(&model_file(dir, false, m.window), &m.to_params())?;
    }
    Ok(())
}

pub fn load_calcium_models(dir: &Path, windows: &WindowConfig, train: &CalciumTrainConfig) -> Result<CalciumModels> {
    let mut models = skeleton(windows, train)?;
    for m in &mut models.short {
        let params = load_params(&model_file(dir, true, m.window))?;
        let decoder = m.decoder.clone().expect("short models carry a decoder");
        let mut net = FriedNet::new(m.encoder.clone(), decoder)?;
        net.load_params(params)?;
        m.encoder = net.encoder;
        m.decoder = Some(net.decoder);
    }
    for m in &mut models.long {
        let params = load_params(&model_file(dir, false, m.window))?;
        m.encoder = Encoder::from_params(m.window, windows.k_long, train.encoder, params)?;
    }
    Ok(models)
}

/// Trains the window models, or reuses `<dir>` when it holds models for the
/// same configuration hash.
pub fn calcium_models_cached(
    cfg: &CalciumExperimentConfig,
    train: &[(FluorescenceTrace, SpikeTrain)],
    dir: &Path,
) -> Result<CalciumModels> {
    let stamp = dir.join("config_hash");
    let hash = cfg.hash();
    if std::fs::read_to_string(&stamp).map(|s| s.trim() == hash).unwrap_or(false) {
        match load_calcium_models(dir, &cfg.windows, &cfg.train) {
            Ok(m) => return Ok(m),
            Err(e) => log::warn!("cached calcium models unusable ({e}); retraining"),
        }
    }
    let train_cfg = CalciumTrainConfig { seed: derive_seed(cfg.seed, 3), ..cfg.train.clone() };
    let models = train_calcium_models(train, &cfg.windows, &train_cfg)?;
    save_calcium_models(dir, &models)?;
    std::fs::write(&stamp, format!("{hash}\n"))?;
    Ok(models)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalciumSummary {
    pub config_hash: String,
    pub spikes: usize,
    pub bins: usize,
    pub detections: usize,
    /// Best TPR among ROC points with FPR at or below 0.1.
    pub tpr_at_fpr_0_1: f64,
    pub histogram_in_unit_interval: bool,
    pub roc_monotone: bool,
}

pub fn roc_is_monotone(roc: &[RocPoint]) -> bool {
    roc.windows(2).all(|w| w[1].tpr <= w[0].tpr && w[1].fpr <= w[0].fpr)
}

/// Detections and ROC pooled over all test traces. Times of later traces are
/// offset by the durations of the earlier ones.
pub fn run_calcium(cfg: &CalciumExperimentConfig) -> Result<CalciumSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let (train, test) = calcium_datasets(cfg)?;
    let models = calcium_models_cached(cfg, &train, &cfg.output_dir.join("models"))?;
    let mut all: Vec<Detection> = Vec::new();
    let mut truth = Vec::new();
    let mut bins = 0;
    let mut offset = 0.0;
    let mut unit = true;
    let mut hist_rows = Vec::new();
    for (trace, spikes) in &test {
        let (det, hist) = double_consistency_detect(&models, trace, &cfg.windows, 0.0)?;
        let probs = hist.probabilities();
        unit &= probs.iter().all(|p| (0.0..=1.0).contains(p));
        for (b, p) in probs.iter().enumerate() {
            hist_rows.push((offset + (b as f64 + 0.5) / trace.sample_rate, *p));
        }
        all.extend(det.iter().map(|d| Detection { time: d.time + offset, probability: d.probability }));
        truth.extend(spikes.times.iter().map(|t| t + offset));
        bins += hist.bins();
        offset += trace.len() as f64 / trace.sample_rate;
    }
    let truth = SpikeTrain::new(truth)?;
    let acceptance = cfg.windows.acceptance / cfg.synth.sample_rate;
    let roc = roc_eval(&all, &truth, acceptance, bins);
    let reported: Vec<Detection> = all.iter().copied().filter(|d| d.probability >= cfg.threshold).collect();
    write_detections_csv(&cfg.output_dir.join("detections.csv"), &reported)?;
    write_roc_csv(&cfg.output_dir.join("roc.csv"), &roc)?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join("histogram.csv"))?;
    w.write_record(["time", "probability"])?;
    for (t, p) in hist_rows {
        w.write_record([format!("{t}"), format!("{p}")])?;
    }
    w.flush()?;
    let tpr = roc.iter().filter(|r| r.fpr <= 0.1).map(|r| r.tpr).fold(0.0, f64::max);
    let summary = CalciumSummary {
        config_hash: cfg.hash(),
        spikes: truth.times.len(),
        bins,
        detections: reported.len(),
        tpr_at_fpr_0_1: tpr,
        histogram_in_unit_interval: unit,
        roc_monotone: roc_is_monotone(&roc),
    };
    let v = json!(summary);
    std::fs::write(cfg.output_dir.join("summary.json"), serde_json::to_string_pretty(&v)? + "\n")?;
    Ok(summary)
}
