use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{FriError, Result};
use crate::friednet::{EncoderConfig, FinetuneConfig, FriedTrainConfig};
use crate::kernels::{emoms_frequencies, Kernel};
use crate::signal_model::Method;
use crate::unfolded::{UnfoldedInit, UnfoldedTrainConfig, ZeroEigLossConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Emoms { order: usize },
    /// Real E-spline with the symmetric frequency set.
    Espline { order: usize },
}

impl KernelSpec {
    pub fn order(&self) -> usize {
        match self {
            KernelSpec::Emoms { order } | KernelSpec::Espline { order } => *order,
        }
    }

    pub fn build(&self) -> Result<Kernel> {
        match *self {
            KernelSpec::Emoms { order } => Kernel::emoms(order),
            KernelSpec::Espline { order } => {
                let (_, lambda) = emoms_frequencies(order);
                let omega0 = -(order as f64) * lambda / 2.0;
                Kernel::espline(
                    (0..=order).map(|m| crate::kernels::C64::new(0.0, omega0 + lambda * m as f64)).collect(),
                )
            }
        }
    }

    /// (ω₀, λ) of the reproduced exponentials.
    pub fn frequencies(&self) -> (f64, f64) {
        match *self {
            KernelSpec::Emoms { order } => emoms_frequencies(order),
            KernelSpec::Espline { order } => {
                let (_, lambda) = emoms_frequencies(order);
                (-(order as f64) * lambda / 2.0, lambda)
            }
        }
    }
}

/// Where the K Diracs of a realization sit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Two equal-amplitude Diracs exactly Δt₀ apart (K must be 2).
    Pair,
    /// K independent uniform locations; Δt₀ only labels the grid column.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PwgdSettings {
    pub delta1: f64,
    pub delta2: f64,
    pub iterations: usize,
}

impl Default for PwgdSettings {
    fn default() -> Self {
        Self { delta1: 0.9999, delta2: 0.9999, iterations: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnfoldedSettings {
    pub init: UnfoldedInit,
    pub loss: ZeroEigLossConfig,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for UnfoldedSettings {
    fn default() -> Self {
        Self { init: UnfoldedInit::default(), loss: ZeroEigLossConfig::default(), epochs: 10, lr: 1e-3, batch_size: 64 }
    }
}

impl UnfoldedSettings {
    pub fn train_config(&self, seed: u64) -> UnfoldedTrainConfig {
        UnfoldedTrainConfig { epochs: self.epochs, lr: self.lr, batch_size: self.batch_size, seed, loss: self.loss }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FriedSettings {
    pub encoder: EncoderConfig,
    /// Piecewise-linear step of the decoder, in sampling periods.
    pub delta: f64,
    /// Fixed decoder built from the sampling kernel; otherwise learned.
    pub known_kernel: bool,
    pub gamma: f64,
    pub lr_warmup: f64,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage3_epochs: usize,
    pub batch_size: usize,
    /// Adam steps for a learned decoder on node values rather than on d.
    pub decoder_nodes: bool,
    pub finetune: FinetuneConfig,
}

impl Default for FriedSettings {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            delta: 1.0 / 64.0,
            known_kernel: true,
            gamma: 1.0,
            lr_warmup: 1e-3,
            lr_encoder: 1e-4,
            lr_decoder: 1e-3,
            stage1_epochs: 10,
            stage2_epochs: 3,
            stage3_epochs: 3,
            batch_size: 64,
            decoder_nodes: true,
            finetune: FinetuneConfig::default(),
        }
    }
}

impl FriedSettings {
    pub fn train_config(&self, seed: u64) -> FriedTrainConfig {
        FriedTrainConfig {
            gamma: self.gamma,
            lr_warmup: self.lr_warmup,
            lr_encoder: self.lr_encoder,
            lr_decoder: self.lr_decoder,
            stage1_epochs: self.stage1_epochs,
            stage2_epochs: self.stage2_epochs,
            stage3_epochs: self.stage3_epochs,
            batch_size: self.batch_size,
            decoder_nodes: self.decoder_nodes,
            seed,
        }
    }
}

/// One Monte Carlo sweep over a PSNR × Δt₀ grid. A PSNR of `null` means
/// noiseless.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    #[serde(default = "default_kernel")]
    pub kernel: KernelSpec,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub psnr: Vec<Option<f64>>,
    pub dt0: Vec<f64>,
    #[serde(default = "default_layout")]
    pub layout: Layout,
    #[serde(default = "default_amplitudes")]
    pub amplitude_range: [f64; 2],
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default = "default_train_size")]
    pub train_size: usize,
    pub seed: u64,
    #[serde(default = "default_cadzow")]
    pub cadzow_iterations: usize,
    #[serde(default)]
    pub pwgd: PwgdSettings,
    #[serde(default)]
    pub unfolded: UnfoldedSettings,
    #[serde(default)]
    pub friednet: FriedSettings,
    pub output_dir: PathBuf,
}

fn default_kernel() -> KernelSpec {
    KernelSpec::Emoms { order: 20 }
}
fn default_samples() -> usize {
    21
}
fn default_k() -> usize {
    2
}
fn default_tau() -> f64 {
    1.0
}
fn default_layout() -> Layout {
    Layout::Pair
}
fn default_amplitudes() -> [f64; 2] {
    [0.5, 10.0]
}
fn default_realizations() -> usize {
    200
}
fn default_train_size() -> usize {
    10_000
}
fn default_cadzow() -> usize {
    10
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FriError::Config(msg));
        if self.psnr.is_empty() || self.dt0.is_empty() {
            return bad("`psnr` and `dt0` must be nonempty".into());
        }
        if self.realizations == 0 {
            return bad("`realizations` must be at least 1".into());
        }
        if self.k == 0 || self.samples < 2 || !(self.tau > 0.0) {
            return bad(format!("invalid geometry k={}, samples={}, tau={}", self.k, self.samples, self.tau));
        }
        if self.kernel.order() + 1 > self.samples {
            return bad(format!("kernel order {} needs at least {} samples", self.kernel.order(), self.kernel.order() + 1));
        }
        if self.layout == Layout::Pair && self.k != 2 {
            return bad("`layout = pair` requires k = 2".into());
        }
        if let Some(d) = self.dt0.iter().find(|d| !(**d > 0.0 && **d < 0.5 * self.tau)) {
            return bad(format!("dt0 {d} outside (0, tau/2)"));
        }
        if let Some(p) = self.psnr.iter().flatten().find(|p| !p.is_finite()) {
            return bad(format!("psnr {p} is not finite; use null for noiseless"));
        }
        let [lo, hi] = self.amplitude_range;
        if !(lo > 0.0 && hi > lo) {
            return bad(format!("amplitude_range [{lo}, {hi}] must be positive and increasing"));
        }
        if self.method == Method::Oracle {
            return bad("`oracle` is not a runnable method".into());
        }
        let trains = matches!(
            self.method,
            Method::Unfolded | Method::FriedEncoder | Method::FriedNet | Method::FriedNetFinetuned
        );
        if trains && self.train_size == 0 {
            return bad("`train_size` must be positive for learned methods".into());
        }
        Ok(())
    }

    /// Content hash of everything that determines the results.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("output_dir");
        }
        hash_value(&v)
    }
}

/// SHA-256 of the compact JSON form (object keys are sorted by serde_json).
pub fn hash_value(v: &Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

/// Applies `a.b.c=value` to a JSON tree. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| FriError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| FriError::Config(format!("`{}` is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(FriError::Config("empty override key".into()))
}

/// Parses a JSON config, applies overrides and deserializes into `T`;
/// unknown keys are reported with their location.
pub fn load_json<T: serde::de::DeserializeOwned>(text: &str, overrides: &[String]) -> Result<T> {
    let mut v: Value = serde_json::from_str(text).map_err(|e| FriError::Config(format!("invalid JSON: {e}")))?;
    for o in overrides {
        apply_override(&mut v, o)?;
    }
    serde_json::from_value(v).map_err(|e| FriError::Config(e.to_string()))
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: ExperimentConfig = load_json(&text, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}
