//! FRIED-Net: a convolutional encoder from samples to locations and a
//! piecewise-linear decoder that resynthesizes the samples.

mod decoder;
mod encoder;
mod train;

pub use decoder::{kernel_correlation, Decoder, DecoderMode};
pub use encoder::{batch_tensor, Encoder, EncoderConfig};
pub use train::{train_encoder, train_known_kernel, train_unknown_kernel, FriedExample, FriedLog, FriedTrainConfig};

use serde::{Deserialize, Serialize};

use crate::error::{FriError, Result};
use crate::nn::{ParamSet, Tape, Tensor};
use crate::signal_model::{wrap_location, Boundary, Method, ReconstructionResult, SampleSet};

#[derive(Clone, Debug, PartialEq)]
pub struct FriedNet {
    pub encoder: Encoder,
    pub decoder: Decoder,
}

const DECODER_KEY: &str = "decoder.d";

impl FriedNet {
    pub fn new(encoder: Encoder, decoder: Decoder) -> Result<Self> {
        if encoder.input_len != decoder.config.sample_count {
            return Err(FriError::DimensionMismatch(format!(
                "encoder takes {} samples, decoder emits {}",
                encoder.input_len, decoder.config.sample_count
            )));
        }
        Ok(Self { encoder, decoder })
    }

    /// Encoder tensors followed by the decoder coefficients.
    pub fn to_params(&self) -> ParamSet {
        let mut set = self.encoder.params.clone();
        set.push(DECODER_KEY, self.decoder.coefficients());
        set
    }

    /// Restores weights saved by [`FriedNet::to_params`] into this architecture.
    pub fn load_params(&mut self, mut set: ParamSet) -> Result<()> {
        let pos = set
            .names
            .iter()
            .position(|n| n == DECODER_KEY)
            .ok_or_else(|| FriError::Checkpoint("missing decoder coefficients".into()))?;
        set.names.remove(pos);
        let d = set.tensors.remove(pos);
        let enc = Encoder::from_params(self.encoder.input_len, self.encoder.k, self.encoder.cfg, set)?;
        self.decoder.set_coefficients(&d.data).map_err(|e| FriError::Checkpoint(e.to_string()))?;
        self.encoder = enc;
        Ok(())
    }
}

/// `Σ_n (ŷ[n] − y[n])² + γ Σ_k (t̂_k − t_k)²`.
pub fn friednet_loss(y_hat: &[f64], y: &[f64], t_hat: &[f64], t: &[f64], gamma: f64) -> Result<f64> {
    if y_hat.len() != y.len() || t_hat.len() != t.len() {
        return Err(FriError::DimensionMismatch("loss operands differ in length".into()));
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    Ok(sq(y_hat, y) + gamma * sq(t_hat, t))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub steps: usize,
    /// Initial step size; grown ×1.2 after an accepted step, halved after a rejected one.
    pub lr: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { steps: 100, lr: 1e-5 }
    }
}

fn sample_error(dec: &Decoder, t: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    let a = dec.amplitudes(t, y)?;
    let y_hat = dec.forward(t, &a)?;
    let e = y_hat.values.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok((e, a))
}

/// Per-datum refinement of `t` by gradient descent on the sample error, with
/// amplitudes re-fitted by least squares at every step. Steps that do not
/// lower the error are rejected.
pub fn finetune_datum(t0: &[f64], dec: &Decoder, noisy: &[f64], cfg: &FinetuneConfig) -> Result<Vec<f64>> {
    if noisy.len() != dec.config.sample_count {
        return Err(FriError::DimensionMismatch(format!(
            "decoder emits {} samples, got {}",
            dec.config.sample_count,
            noisy.len()
        )));
    }
    let k = t0.len();
    let mut t = t0.to_vec();
    let (mut err, mut a) = sample_error(dec, &t, noisy)?;
    let mut lr = cfg.lr;
    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let tv = tape.param(Tensor::new(vec![1, k], t.clone())?);
        let av = tape.constant(Tensor::new(vec![1, k], a.clone())?);
        let dv = tape.constant(dec.coefficients());
        let y_hat = dec.forward_tape(&mut tape, tv, av, dv)?;
        let y = tape.constant(Tensor::new(vec![1, noisy.len()], noisy.to_vec())?);
        let l = tape.sq_err(y_hat, y)?;
        let g = tape.backward(l)?.tensor(tv);
        if g.data.iter().all(|v| *v == 0.0) {
            break;
        }
        let candidate: Vec<f64> = t.iter().zip(&g.data).map(|(ti, gi)| ti - lr * gi).collect();
        let (e, a_new) = sample_error(dec, &candidate, noisy)?;
        if e < err {
            t = candidate;
            err = e;
            a = a_new;
            lr *= 1.2;
        } else {
            lr *= 0.5;
            if lr < 1e-14 {
                break;
            }
        }
    }
    Ok(t)
}

/// Locations from the encoder (optionally fine-tuned), amplitudes by least
/// squares against the decoder kernel.
pub fn reconstruct_friednet(
    net: &FriedNet,
    samples: &SampleSet,
    finetune: Option<&FinetuneConfig>,
    method: Method,
) -> Result<ReconstructionResult> {
    let mut t = net.encoder.predict_one(&samples.values)?;
    if let Some(cfg) = finetune {
        t = finetune_datum(&t, &net.decoder, &samples.values, cfg)?;
    }
    if samples.config.boundary == Boundary::Periodic {
        for v in &mut t {
            *v = wrap_location(*v, samples.config.period);
        }
    }
    let amplitudes = net.decoder.amplitudes(&t, &samples.values)?;
    Ok(ReconstructionResult { locations: t, amplitudes, method })
}

#[cfg(test)]
mod tests;
