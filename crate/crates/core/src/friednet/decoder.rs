use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{FriError, Result};
use crate::kernels::{piecewise_from_kernel, write_kernel_csv, Kernel, PiecewiseKernel};
use crate::nn::{PiecewiseGeometry, Tape, Tensor, Var};
use crate::signal_model::{Boundary, SampleSet, SamplingConfig};
use crate::spectral::amplitudes_ls;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderMode {
    Fixed,
    Learnable,
}

/// Piecewise-linear resynthesis `ŷ[n] = Σ_k â_k φ̂(t̂_k/T − n)`, with φ̂ a sum of
/// ReLUs with knots every Δ.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub kernel: PiecewiseKernel,
    pub mode: DecoderMode,
    pub config: SamplingConfig,
}

impl Decoder {
    /// Coefficients fixed to the interpolant of a known kernel.
    pub fn fixed(kernel: &Kernel, delta: f64, config: SamplingConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { kernel: piecewise_from_kernel(kernel, delta)?, mode: DecoderMode::Fixed, config })
    }

    /// Coefficients drawn from U(−0.01, 0.01) on a support of `support_len`
    /// sampling periods; t = 0 sits at local coordinate `anchor`.
    pub fn learnable<R: Rng + ?Sized>(
        support_len: f64,
        anchor: f64,
        delta: f64,
        config: SamplingConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let ratio = support_len / delta;
        if !(ratio >= 1.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(FriError::InvalidArgument(format!("step {delta} does not divide support {support_len}")));
        }
        let dist = Uniform::new(-0.01, 0.01).expect("valid range");
        let d = (0..ratio.round() as usize).map(|_| dist.sample(rng)).collect();
        Ok(Self { kernel: PiecewiseKernel::new(d, delta, anchor)?, mode: DecoderMode::Learnable, config })
    }

    pub fn geometry(&self) -> PiecewiseGeometry {
        PiecewiseGeometry {
            samples: self.config.sample_count,
            sampling_period: self.config.sampling_period(),
            delta: self.kernel.delta(),
            anchor: self.kernel.anchor,
            periodic: self.config.boundary == Boundary::Periodic,
        }
    }

    pub fn as_kernel(&self) -> Kernel {
        Kernel::PiecewiseLinear(self.kernel.clone())
    }

    pub fn coefficients(&self) -> Tensor {
        Tensor::from_vec(self.kernel.coefficients().to_vec())
    }

    pub fn set_coefficients(&mut self, d: &[f64]) -> Result<()> {
        self.kernel.set_coefficients(d)
    }

    /// Samples produced by the decoder for one set of locations and amplitudes.
    pub fn forward(&self, locations: &[f64], amplitudes: &[f64]) -> Result<SampleSet> {
        if locations.len() != amplitudes.len() {
            return Err(FriError::DimensionMismatch(format!(
                "{} locations, {} amplitudes",
                locations.len(),
                amplitudes.len()
            )));
        }
        let k = locations.len();
        let mut tape = Tape::new();
        let t = tape.constant(Tensor::new(vec![1, k], locations.to_vec())?);
        let a = tape.constant(Tensor::new(vec![1, k], amplitudes.to_vec())?);
        let d = tape.constant(self.coefficients());
        let y = self.forward_tape(&mut tape, t, a, d)?;
        Ok(SampleSet { values: tape.value(y).data.clone(), config: self.config })
    }

    /// `t`, `a` are `[B, K]`, `d` the coefficient vector; returns `[B, N]`.
    pub fn forward_tape(&self, tape: &mut Tape, t: Var, a: Var, d: Var) -> Result<Var> {
        tape.piecewise_synth(t, a, d, self.geometry())
    }

    /// The same map written as the layer stack: scale by 1/T with bias −n,
    /// gate to the support, bias −iΔ with ReLU, weights d_i, then weights â_k.
    pub fn forward_tape_layers(&self, tape: &mut Tape, t: Var, a: Var, d: Var) -> Result<Var> {
        let g = self.geometry();
        let knots = self.kernel.knots();
        if g.periodic && self.kernel.support_len() > g.samples as f64 {
            return Err(FriError::InvalidArgument("layer form needs a support no longer than the period".into()));
        }
        let offsets: Vec<f64> = (0..g.samples).map(|n| g.anchor - n as f64).collect();
        let z = tape.affine_expand(t, 1.0 / g.sampling_period, &offsets, g.periodic.then_some(g.samples as f64));
        let z = tape.gate(z, 0.0, self.kernel.support_len());
        let knot_offsets: Vec<f64> = (0..knots).map(|i| -(i as f64) * g.delta).collect();
        let r = tape.affine_expand(z, 1.0, &knot_offsets, None);
        let r = tape.relu(r);
        let phi = tape.contract_last(r, d)?;
        tape.weighted_sum(a, phi)
    }

    /// Least-squares amplitudes against the current φ̂.
    pub fn amplitudes(&self, locations: &[f64], samples: &[f64]) -> Result<Vec<f64>> {
        let set = SampleSet { values: samples.to_vec(), config: self.config };
        Ok(amplitudes_ls(locations, &set, &self.as_kernel())?.amplitudes)
    }

    /// Scales d so that the extremum of φ̂ (larger magnitude wins) is +1.
    pub fn normalize(&mut self) -> Result<f64> {
        self.kernel.normalize_peak()
    }

    /// `t,phi` rows of φ̂ on its support.
    pub fn write_csv(&self, path: &Path, step: f64) -> Result<()> {
        write_kernel_csv(path, &self.as_kernel().tabulate(step))
    }
}

/// Normalized cross-correlation `⟨f, g⟩ / (‖f‖‖g‖)` of two kernels on a grid.
pub fn kernel_correlation(a: &Kernel, b: &Kernel, step: f64) -> f64 {
    let (lo_a, hi_a) = a.support();
    let (lo_b, hi_b) = b.support();
    let (lo, hi) = (lo_a.min(lo_b), hi_a.max(hi_b));
    let count = ((hi - lo) / step).ceil() as usize;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..count {
        let x = lo + (i as f64 + 0.5) * step;
        let (u, v) = (a.eval(x), b.eval(x));
        ab += u * v;
        aa += u * u;
        bb += v * v;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    ab / (aa * bb).sqrt()
}
