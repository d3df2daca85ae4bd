use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{FriError, Result};
use crate::nn::{ParamSet, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub conv_layers: usize,
    pub filters: usize,
    pub width: usize,
    pub hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { conv_layers: 3, filters: 100, width: 3, hidden: 100 }
    }
}

/// Conv stack (same padding, ReLU) followed by two hidden dense layers and a
/// linear K-output head.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub input_len: usize,
    pub k: usize,
    pub cfg: EncoderConfig,
    pub params: ParamSet,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new(-bound, bound).expect("positive bound");
    let n = shape.iter().product();
    Tensor { shape: shape.to_vec(), data: (0..n).map(|_| dist.sample(rng)).collect() }
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(input_len: usize, k: usize, cfg: EncoderConfig, rng: &mut R) -> Result<Self> {
        if input_len == 0 || k == 0 || cfg.filters == 0 || cfg.hidden == 0 || cfg.width % 2 == 0 {
            return Err(FriError::InvalidArgument(format!("bad encoder shape: N = {input_len}, K = {k}, {cfg:?}")));
        }
        let mut params = ParamSet::new();
        let mut cin = 1;
        for l in 0..cfg.conv_layers {
            let fan = cfg.width * cin;
            params.push(format!("conv{l}.w"), uniform(rng, &[cfg.width, cin, cfg.filters], fan));
            params.push(format!("conv{l}.b"), uniform(rng, &[cfg.filters], fan));
            cin = cfg.filters;
        }
        let mut fin = input_len * cin;
        for (l, fout) in [cfg.hidden, cfg.hidden, k].into_iter().enumerate() {
            params.push(format!("fc{l}.w"), uniform(rng, &[fin, fout], fin));
            params.push(format!("fc{l}.b"), uniform(rng, &[fout], fin));
            fin = fout;
        }
        Ok(Self { input_len, k, cfg, params })
    }

    pub fn from_params(input_len: usize, k: usize, cfg: EncoderConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::new(input_len, k, cfg, &mut crate::rng::stream(0))?;
        if reference.params.names != params.names
            || reference.params.tensors.iter().zip(&params.tensors).any(|(a, b)| a.shape != b.shape)
        {
            return Err(FriError::Checkpoint("encoder checkpoint does not match the architecture".into()));
        }
        Ok(Self { input_len, k, cfg, params })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.value_count()
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .tensors
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    /// `x` is `[B, N]`; returns `[B, K]`.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.input_len {
            return Err(FriError::DimensionMismatch(format!("encoder expects [B, {}], got {shape:?}", self.input_len)));
        }
        let batch = shape[0];
        let mut h = tape.reshape(x, &[batch, self.input_len, 1])?;
        let mut it = vars.chunks(2);
        for _ in 0..self.cfg.conv_layers {
            let wb = it.next().expect("conv params");
            let c = tape.conv1d(h, wb[0], wb[1])?;
            h = tape.relu(c);
        }
        let width = tape.value(h).len() / batch;
        h = tape.reshape(h, &[batch, width])?;
        for l in 0..3 {
            let wb = it.next().expect("dense params");
            h = tape.dense(h, wb[0], wb[1])?;
            if l < 2 {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Location estimates for each input, evaluated in chunks.
    pub fn predict(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(256) {
            let mut tape = Tape::new();
            let vars = self.register(&mut tape, false);
            let x = tape.constant(batch_tensor(chunk, self.input_len)?);
            let y = self.forward_tape(&mut tape, &vars, x)?;
            out.extend(tape.value(y).data.chunks(self.k).map(|c| c.to_vec()));
        }
        Ok(out)
    }

    pub fn predict_one(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(&[y.to_vec()])?.pop().expect("one row"))
    }
}

/// Stacks equal-length rows into a `[B, width]` tensor.
pub fn batch_tensor(rows: &[Vec<f64>], width: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(FriError::DimensionMismatch(format!("expected {width} values, got {}", r.len())));
        }
        data.extend_from_slice(r);
    }
    Tensor::new(vec![rows.len(), width], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;
    use crate::rng::stream;

    #[test]
    fn default_sized_parameter_count() {
        let enc = Encoder::new(21, 2, EncoderConfig::default(), &mut stream(1)).unwrap();
        // 3·100+100, 2·(3·100·100+100), 2100·100+100, 100·100+100, 100·2+2
        assert_eq!(enc.parameter_count(), 400 + 2 * 30_100 + 210_100 + 10_100 + 202);
    }

    #[test]
    fn zero_head_outputs_the_bias() {
        let mut enc = Encoder::new(9, 2, EncoderConfig { filters: 4, hidden: 5, ..Default::default() }, &mut stream(2)).unwrap();
        let last = enc.params.len() - 2;
        enc.params.tensors[last].data.iter_mut().for_each(|v| *v = 0.0);
        enc.params.tensors[last + 1].data = vec![0.25, -0.125];
        for seed in 0..3 {
            let y: Vec<f64> = (0..9).map(|i| ((i + seed) as f64).sin()).collect();
            assert_eq!(enc.predict_one(&y).unwrap(), vec![0.25, -0.125]);
        }
    }

    #[test]
    fn gradients_check_out() {
        let enc = Encoder::new(6, 2, EncoderConfig { filters: 3, hidden: 4, ..Default::default() }, &mut stream(3)).unwrap();
        let x = Tensor::new(vec![2, 6], (0..12).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap();
        let target = Tensor::new(vec![2, 2], vec![0.1, -0.2, 0.3, 0.0]).unwrap();
        let err = gradient_check(&enc.params.tensors, |tape, vars| {
            let xv = tape.constant(x.clone());
            let y = enc.forward_tape(tape, vars, xv)?;
            let t = tape.constant(target.clone());
            tape.sq_err(y, t)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn checkpoint_shape_validation() {
        let cfg = EncoderConfig { filters: 3, hidden: 4, ..Default::default() };
        let enc = Encoder::new(6, 2, cfg, &mut stream(4)).unwrap();
        assert_eq!(Encoder::from_params(6, 2, cfg, enc.params.clone()).unwrap(), enc);
        assert!(Encoder::from_params(7, 2, cfg, enc.params.clone()).is_err());
    }
}
