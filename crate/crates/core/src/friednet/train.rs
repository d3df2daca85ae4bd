use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{FriError, Result};
use crate::nn::{AdamState, Tape, Tensor, Var};
use crate::rng::stream;

use super::encoder::batch_tensor;
use super::FriedNet;

/// One training datum. `clean` and `amplitudes` are only known for synthetic
/// data with a known kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct FriedExample {
    pub noisy: Vec<f64>,
    pub clean: Option<Vec<f64>>,
    pub locations: Vec<f64>,
    pub amplitudes: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FriedTrainConfig {
    pub gamma: f64,
    /// Encoder rate during the location-only warm start.
    pub lr_warmup: f64,
    /// Encoder rate once the sample loss is involved.
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    /// Encoder-only warm start on the location loss.
    pub stage1_epochs: usize,
    /// Known kernel: joint with frozen decoder. Unknown kernel: decoder only.
    pub stage2_epochs: usize,
    /// Unknown kernel only: joint training.
    pub stage3_epochs: usize,
    pub batch_size: usize,
    /// Take the decoder's Adam steps on node values φ̂(iΔ) instead of on d.
    pub decoder_nodes: bool,
    pub seed: u64,
}

impl Default for FriedTrainConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lr_warmup: 1e-4,
            lr_encoder: 1e-4,
            lr_decoder: 1e-5,
            stage1_epochs: 300,
            stage2_epochs: 150,
            stage3_epochs: 150,
            batch_size: 64,
            decoder_nodes: false,
            seed: 0,
        }
    }
}

/// Mean per-example loss of every epoch, by stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FriedLog {
    pub stage1: Vec<f64>,
    pub stage2: Vec<f64>,
    pub stage3: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Amps {
    Truth,
    LeastSquares,
}

#[derive(Clone, Copy)]
struct Stage {
    encoder: bool,
    decoder: bool,
    samples: bool,
    amps: Amps,
    clean_target: bool,
}

const LOCATIONS_ONLY: Stage =
    Stage { encoder: true, decoder: false, samples: false, amps: Amps::Truth, clean_target: false };

struct Trainer<'a> {
    data: &'a [FriedExample],
    order: Vec<usize>,
    rng: crate::rng::FriRng,
    enc_adam: AdamState,
    dec_adam: AdamState,
    cfg: FriedTrainConfig,
}

impl<'a> Trainer<'a> {
    fn new(data: &'a [FriedExample], k: usize, cfg: &FriedTrainConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(FriError::EmptyInput("no training examples"));
        }
        if cfg.batch_size == 0 {
            return Err(FriError::InvalidArgument("batch size must be positive".into()));
        }
        if !(cfg.gamma >= 0.0) {
            return Err(FriError::InvalidArgument(format!("gamma must be non-negative, got {}", cfg.gamma)));
        }
        if let Some(ex) = data.iter().find(|e| e.locations.len() != k) {
            return Err(FriError::DimensionMismatch(format!("example has {} labels, model has K = {k}", ex.locations.len())));
        }
        Ok(Self {
            data,
            order: (0..data.len()).collect(),
            rng: stream(cfg.seed),
            enc_adam: AdamState::new(cfg.lr_warmup),
            dec_adam: AdamState::new(cfg.lr_decoder),
            cfg: *cfg,
        })
    }

    fn epochs(&mut self, net: &mut FriedNet, stage: Stage, count: usize, log: &mut Vec<f64>) -> Result<()> {
        for _ in 0..count {
            let epoch = log.len();
            let loss = self.epoch(net, stage, epoch)?;
            log::debug!("friednet epoch {epoch}: loss {loss:.6e}");
            log.push(loss);
        }
        Ok(())
    }

    fn epoch(&mut self, net: &mut FriedNet, stage: Stage, epoch: usize) -> Result<f64> {
        self.order.shuffle(&mut self.rng);
        let n = net.encoder.input_len;
        let k = net.encoder.k;
        let mut total = 0.0;
        let order = std::mem::take(&mut self.order);
        for batch in order.chunks(self.cfg.batch_size) {
            let rows: Vec<Vec<f64>> = batch.iter().map(|&i| self.data[i].noisy.clone()).collect();
            let labels: Vec<f64> = batch.iter().flat_map(|&i| self.data[i].locations.iter().cloned()).collect();
            let mut tape = Tape::new();
            let enc_vars = net.encoder.register(&mut tape, stage.encoder);
            let x = tape.constant(batch_tensor(&rows, n)?);
            let t_hat = net.encoder.forward_tape(&mut tape, &enc_vars, x)?;
            let t_true = tape.constant(Tensor::new(vec![batch.len(), k], labels)?);
            let loc = tape.sq_err(t_hat, t_true)?;
            let mut dec_var: Option<Var> = None;
            let loss = if stage.samples {
                let t_vals = tape.value(t_hat).data.clone();
                let mut amps = Vec::with_capacity(batch.len() * k);
                let mut targets = Vec::with_capacity(batch.len() * net.decoder.config.sample_count);
                for (b, &i) in batch.iter().enumerate() {
                    let ex = &self.data[i];
                    let target = match (&ex.clean, stage.clean_target) {
                        (Some(c), true) => c,
                        _ => &ex.noisy,
                    };
                    targets.extend_from_slice(target);
                    match (stage.amps, &ex.amplitudes) {
                        (Amps::Truth, Some(a)) => amps.extend_from_slice(a),
                        _ => amps.extend(net.decoder.amplitudes(&t_vals[b * k..(b + 1) * k], target)?),
                    }
                }
                let a = tape.constant(Tensor::new(vec![batch.len(), k], amps)?);
                let d = if stage.decoder {
                    tape.param(net.decoder.coefficients())
                } else {
                    tape.constant(net.decoder.coefficients())
                };
                dec_var = Some(d);
                let y_hat = net.decoder.forward_tape(&mut tape, t_hat, a, d)?;
                let y = tape.constant(Tensor::new(vec![batch.len(), n], targets)?);
                let sample = tape.sq_err(y_hat, y)?;
                let weighted = tape.scale(loc, self.cfg.gamma);
                tape.add(sample, weighted)?
            } else {
                loc
            };
            let batch_total = tape.value(loss).item();
            if !batch_total.is_finite() {
                return Err(FriError::Divergence { epoch, detail: "FRIED-Net loss is not finite".into() });
            }
            total += batch_total;
            let mean = tape.scale(loss, 1.0 / batch.len() as f64);
            let grads = tape.backward(mean)?;
            if stage.encoder {
                let g: Vec<Tensor> = enc_vars.iter().map(|v| grads.tensor(*v)).collect();
                self.enc_adam.update(&mut net.encoder.params.tensors, &g)?;
            }
            if let (true, Some(d)) = (stage.decoder, dec_var) {
                let g = grads.tensor(d);
                if self.cfg.decoder_nodes {
                    let kernel = &mut net.decoder.kernel;
                    let mut v = vec![Tensor::from_vec(kernel.node_values())];
                    self.dec_adam.update(&mut v, &[Tensor::from_vec(kernel.node_gradient(&g.data))])?;
                    kernel.set_node_values(&v[0].data)?;
                } else {
                    let mut coeffs = vec![net.decoder.coefficients()];
                    self.dec_adam.update(&mut coeffs, &[g])?;
                    net.decoder.set_coefficients(&coeffs[0].data)?;
                }
            }
        }
        self.order = order;
        if stage.decoder {
            net.decoder.normalize()?;
        }
        Ok(total / self.data.len() as f64)
    }
}

/// Encoder-only training on the location loss.
pub fn train_encoder(net: &mut FriedNet, data: &[FriedExample], cfg: &FriedTrainConfig) -> Result<FriedLog> {
    let mut t = Trainer::new(data, net.encoder.k, cfg)?;
    let mut log = FriedLog::default();
    t.epochs(net, LOCATIONS_ONLY, cfg.stage1_epochs, &mut log.stage1)?;
    Ok(log)
}

/// Warm start on locations, then joint sample + location loss through the
/// frozen decoder with ground-truth amplitudes and noiseless targets.
pub fn train_known_kernel(net: &mut FriedNet, data: &[FriedExample], cfg: &FriedTrainConfig) -> Result<FriedLog> {
    let mut t = Trainer::new(data, net.encoder.k, cfg)?;
    let mut log = FriedLog::default();
    t.epochs(net, LOCATIONS_ONLY, cfg.stage1_epochs, &mut log.stage1)?;
    t.enc_adam.lr = cfg.lr_encoder;
    let joint = Stage { encoder: true, decoder: false, samples: true, amps: Amps::Truth, clean_target: true };
    t.epochs(net, joint, cfg.stage2_epochs, &mut log.stage2)?;
    Ok(log)
}

/// Warm start, decoder-only fit, then joint training. Targets are the noisy
/// samples, amplitudes come from least squares against the current φ̂, and d
/// is peak-normalized after every epoch.
pub fn train_unknown_kernel(net: &mut FriedNet, data: &[FriedExample], cfg: &FriedTrainConfig) -> Result<FriedLog> {
    let mut t = Trainer::new(data, net.encoder.k, cfg)?;
    let mut log = FriedLog::default();
    net.decoder.normalize()?;
    t.epochs(net, LOCATIONS_ONLY, cfg.stage1_epochs, &mut log.stage1)?;
    let dec_only = Stage { encoder: false, decoder: true, samples: true, amps: Amps::LeastSquares, clean_target: false };
    t.epochs(net, dec_only, cfg.stage2_epochs, &mut log.stage2)?;
    t.enc_adam.lr = cfg.lr_encoder;
    let joint = Stage { encoder: true, decoder: true, ..dec_only };
    t.epochs(net, joint, cfg.stage3_epochs, &mut log.stage3)?;
    Ok(log)
}
