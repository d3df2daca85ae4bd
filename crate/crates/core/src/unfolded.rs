//! PWGD unrolled into a fixed number of layers with learnable mixing
//! matrices and thresholds, trained with the zero-eigenvalue loss.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{FriError, Result};
use crate::kernels::{ExpReproCoeffs, Kernel, C64};
use crate::linalg::CMatrix;
use crate::nn::{cmatrix_to_tensor, tensor_to_cmatrix, AdamState, ParamSet, Tape, Tensor, Var};
use crate::rng::stream;
use crate::signal_model::{Method, ReconstructionResult, SampleSet};
use crate::spectral::{amplitudes_ls, build_toeplitz, moments, prony_from_toeplitz, AnnihilatingFilter, ToeplitzMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnfoldedInit {
    pub layers: usize,
    pub delta1: f64,
    pub delta2: f64,
    pub mu0: f64,
}

impl Default for UnfoldedInit {
    fn default() -> Self {
        Self { layers: 5, delta1: 0.9999, delta2: 0.9999, mu0: 0.25 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZeroEigLossConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ZeroEigLossConfig {
    fn default() -> Self {
        Self { alpha: 10.0, beta: 0.005 }
    }
}

/// Per layer: four complex (P−M+1)² matrices `w1..w4` and a threshold
/// pre-activation `mu_raw`, with µ = sigmoid(mu_raw).
#[derive(Clone, Debug, PartialEq)]
pub struct UnfoldedNetwork {
    pub k: usize,
    pub m: usize,
    pub p: usize,
    pub params: ParamSet,
}

const PER_LAYER: usize = 5;

fn logit(mu: f64) -> f64 {
    (mu / (1.0 - mu)).ln()
}

fn scaled_identity(n: usize, c: f64) -> Tensor {
    cmatrix_to_tensor(&CMatrix::identity(n, n).scale(c))
}

impl UnfoldedNetwork {
    /// Initialization at which the forward pass is PWGD with a soft threshold.
    pub fn init(p: usize, m: usize, k: usize, cfg: &UnfoldedInit) -> Result<Self> {
        if cfg.layers == 0 {
            return Err(FriError::InvalidArgument("need at least one layer".into()));
        }
        if m > p || k == 0 || k + 1 > (p - m + 1).min(m + 1) {
            return Err(FriError::InvalidArgument(format!("P = {p}, M = {m}, K = {k} give no valid rank-K matrix")));
        }
        if !(cfg.mu0 > 0.0 && cfg.mu0 < 1.0) {
            return Err(FriError::InvalidArgument(format!("mu0 must lie in (0, 1), got {}", cfg.mu0)));
        }
        let n = p - m + 1;
        let mut params = ParamSet::new();
        for l in 0..cfg.layers {
            params.push(format!("layer{l}.w1"), scaled_identity(n, 1.0 - cfg.delta1));
            params.push(format!("layer{l}.w2"), scaled_identity(n, cfg.delta1));
            params.push(format!("layer{l}.w3"), scaled_identity(n, cfg.delta2));
            params.push(format!("layer{l}.w4"), scaled_identity(n, 1.0 - cfg.delta2));
            params.push(format!("layer{l}.mu_raw"), Tensor::from_vec(vec![logit(cfg.mu0)]));
        }
        Ok(Self { k, m, p, params })
    }

    /// Rebuilds a network from checkpointed parameters.
    pub fn from_params(p: usize, m: usize, k: usize, params: ParamSet) -> Result<Self> {
        let n = p - m + 1;
        if params.is_empty() || params.len() % PER_LAYER != 0 {
            return Err(FriError::Checkpoint(format!("{} tensors is not a whole number of layers", params.len())));
        }
        for (i, t) in params.tensors.iter().enumerate() {
            let want: &[usize] = if i % PER_LAYER == 4 { &[1] } else { &[n, n, 2] };
            if t.shape != want {
                return Err(FriError::Checkpoint(format!("tensor {} has shape {:?}", params.names[i], t.shape)));
            }
        }
        Ok(Self { k, m, p, params })
    }

    pub fn layers(&self) -> usize {
        self.params.len() / PER_LAYER
    }

    pub fn rows(&self) -> usize {
        self.p - self.m + 1
    }

    pub fn mu(&self, layer: usize) -> f64 {
        let raw = self.params.tensors[layer * PER_LAYER + 4].item();
        1.0 / (1.0 + (-raw).exp())
    }

    /// Records the forward pass; `vars` are the parameter handles in
    /// [`ParamSet`] order. Returns the H output of every layer.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &[Var], noisy: Var) -> Result<Vec<Var>> {
        let shape = tape.shape(noisy).to_vec();
        if shape != [self.rows(), self.m + 1, 2] {
            return Err(FriError::DimensionMismatch(format!(
                "network expects a {}x{} matrix, got {shape:?}",
                self.rows(),
                self.m + 1
            )));
        }
        let mut h = noisy;
        let mut l: Option<Var> = None;
        let mut outs = Vec::with_capacity(self.layers());
        for layer in vars.chunks(PER_LAYER) {
            let w2h = tape.cmatmul(layer[1], h)?;
            let mix = match l {
                Some(lv) => {
                    let w1l = tape.cmatmul(layer[0], lv)?;
                    tape.add(w1l, w2h)?
                }
                None => w2h,
            };
            let mu = tape.sigmoid(layer[4]);
            let lv = tape.svd_soft_threshold(mix, mu, self.k)?;
            let w3l = tape.cmatmul(layer[2], lv)?;
            let w4h = tape.cmatmul(layer[3], h)?;
            let sum = tape.add(w3l, w4h)?;
            h = tape.toeplitz_project(sum)?;
            l = Some(lv);
            outs.push(h);
        }
        Ok(outs)
    }

    fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .tensors
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    /// H output of every layer.
    pub fn forward_layers(&self, noisy: &ToeplitzMatrix) -> Result<Vec<CMatrix>> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let x = tape.constant(cmatrix_to_tensor(noisy.entries()));
        let outs = self.forward_tape(&mut tape, &vars, x)?;
        outs.iter().map(|v| tensor_to_cmatrix(tape.value(*v))).collect()
    }

    pub fn forward(&self, noisy: &ToeplitzMatrix) -> Result<ToeplitzMatrix> {
        let last = self.forward_layers(noisy)?.pop().expect("at least one layer");
        Ok(ToeplitzMatrix::from_matrix(&last))
    }

    /// Zero-eigenvalue loss on the tape; `denoised` is the network output,
    /// re-laid out as the (P−K+1)×(K+1) Prony matrix.
    pub fn loss_tape(&self, tape: &mut Tape, denoised: Var, filter: &[C64], cfg: &ZeroEigLossConfig) -> Result<Var> {
        let s_hat = tape.toeplitz_reshape(denoised, self.p - self.k + 1, self.k + 1)?;
        zero_eig_loss_tape(tape, s_hat, filter, cfg)
    }
}

fn filter_tensors(filter: &[C64]) -> (Tensor, Tensor) {
    let n = filter.len();
    let h = CMatrix::from_fn(n, 1, |i, _| filter[i]);
    let proj = CMatrix::identity(n, n) - &h * h.adjoint();
    (cmatrix_to_tensor(&h), cmatrix_to_tensor(&proj))
}

/// `‖Ŝh‖² + α·exp(−β‖Ŝ(I − hhᴴ)‖²)` recorded on a tape.
pub fn zero_eig_loss_tape(tape: &mut Tape, s_hat: Var, filter: &[C64], cfg: &ZeroEigLossConfig) -> Result<Var> {
    let cols = tape.shape(s_hat).get(1).cloned().unwrap_or(0);
    if cols != filter.len() {
        return Err(FriError::DimensionMismatch(format!("matrix has {cols} columns, filter has {}", filter.len())));
    }
    let (h, proj) = filter_tensors(filter);
    let h = tape.constant(h);
    let proj = tape.constant(proj);
    let sh = tape.cmatmul(s_hat, h)?;
    let fit = tape.frob_sq(sh);
    let rest = tape.cmatmul(s_hat, proj)?;
    let energy = tape.frob_sq(rest);
    let e = tape.scale(energy, -cfg.beta);
    let e = tape.exp(e);
    let reg = tape.scale(e, cfg.alpha);
    tape.add(fit, reg)
}

pub fn zero_eig_loss(s_hat: &CMatrix, filter: &[C64], cfg: &ZeroEigLossConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(cmatrix_to_tensor(s_hat));
    let l = zero_eig_loss_tape(&mut tape, s, filter, cfg)?;
    Ok(tape.value(l).item())
}

/// One training pair: the noisy near-square Toeplitz matrix and the
/// unit-norm ground-truth annihilating filter.
#[derive(Clone, Debug)]
pub struct UnfoldedExample {
    pub noisy: ToeplitzMatrix,
    pub filter: Vec<C64>,
}

impl UnfoldedExample {
    pub fn from_samples(samples: &SampleSet, coeffs: &ExpReproCoeffs, locations: &[f64], m: usize) -> Result<Self> {
        let s = moments(samples, coeffs)?;
        let noisy = build_toeplitz(&s, m)?;
        let filter = AnnihilatingFilter::from_locations(locations, s.lambda, s.sampling_period).unit_normalized();
        Ok(Self { noisy, filter })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnfoldedTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: ZeroEigLossConfig,
}

impl Default for UnfoldedTrainConfig {
    fn default() -> Self {
        Self { epochs: 500, lr: 2e-4, batch_size: 64, seed: 0, loss: ZeroEigLossConfig::default() }
    }
}

/// Mean training loss per epoch, measured during the epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "loss"])?;
        for (e, l) in self.epoch_loss.iter().enumerate() {
            w.write_record([e.to_string(), format!("{l}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean zero-eigenvalue loss of the current network over `data`.
pub fn evaluate_unfolded(net: &UnfoldedNetwork, data: &[UnfoldedExample], cfg: &ZeroEigLossConfig) -> Result<f64> {
    if data.is_empty() {
        return Err(FriError::EmptyInput("no examples"));
    }
    let mut total = 0.0;
    for ex in data {
        let mut tape = Tape::new();
        let vars = net.register(&mut tape, false);
        let x = tape.constant(cmatrix_to_tensor(ex.noisy.entries()));
        let out = *net.forward_tape(&mut tape, &vars, x)?.last().unwrap();
        let l = net.loss_tape(&mut tape, out, &ex.filter, cfg)?;
        total += tape.value(l).item();
    }
    Ok(total / data.len() as f64)
}

/// Adam on the mean zero-eigenvalue loss over shuffled mini-batches.
pub fn train_unfolded(net: &mut UnfoldedNetwork, data: &[UnfoldedExample], cfg: &UnfoldedTrainConfig) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(FriError::EmptyInput("no training examples"));
    }
    if cfg.batch_size == 0 {
        return Err(FriError::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = stream(cfg.seed);
    let mut adam = AdamState::new(cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = net.register(&mut tape, true);
            let mut sum: Option<Var> = None;
            for &i in batch {
                let ex = &data[i];
                let x = tape.constant(cmatrix_to_tensor(ex.noisy.entries()));
                let out = *net.forward_tape(&mut tape, &vars, x)?.last().unwrap();
                let l = net.loss_tape(&mut tape, out, &ex.filter, &cfg.loss)?;
                sum = Some(match sum {
                    Some(s) => tape.add(s, l)?,
                    None => l,
                });
            }
            let sum = sum.expect("non-empty batch");
            let batch_total = tape.value(sum).item();
            if !batch_total.is_finite() {
                return Err(FriError::Divergence { epoch, detail: "unfolded loss is not finite".into() });
            }
            total += batch_total;
            let loss = tape.scale(sum, 1.0 / batch.len() as f64);
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = vars.iter().map(|v| grads.tensor(*v)).collect();
            adam.update(&mut net.params.tensors, &g)?;
        }
        let mean = total / data.len() as f64;
        log::debug!("unfolded epoch {epoch}: loss {mean:.6e}");
        log.epoch_loss.push(mean);
    }
    Ok(log)
}

/// Moments → Toeplitz → network → Prony → least-squares amplitudes.
pub fn reconstruct_unfolded(
    net: &UnfoldedNetwork,
    samples: &SampleSet,
    coeffs: &ExpReproCoeffs,
    kernel: &Kernel,
) -> Result<ReconstructionResult> {
    let s = moments(samples, coeffs)?;
    if s.order() != net.p {
        return Err(FriError::DimensionMismatch(format!("network built for P = {}, moments have P = {}", net.p, s.order())));
    }
    let noisy = build_toeplitz(&s, net.m)?;
    let denoised = net.forward(&noisy)?;
    let locations = prony_from_toeplitz(&denoised, net.k, &s)?;
    let fit = amplitudes_ls(&locations, samples, kernel)?;
    Ok(ReconstructionResult { locations, amplitudes: fit.amplitudes, method: Method::Unfolded })
}
