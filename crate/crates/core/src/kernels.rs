//! Sampling kernels and their exponential-reproduction coefficients.
//!
//! Every kernel is stored on a local axis `z ∈ [0, L)` and evaluated at user
//! coordinates `x = z − anchor`, so the support in user coordinates is
//! `[−anchor, L − anchor)`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Complex, DMatrix};

use crate::error::{FriError, Result};

pub type C64 = Complex<f64>;

/// Frequencies of the maximal-order kernel for order P: ω₀ = −Pπ/(P+1), λ = 2π/(P+1).
pub fn emoms_frequencies(p: usize) -> (f64, f64) {
    let n = (p + 1) as f64;
    (-(p as f64) * PI / n, 2.0 * PI / n)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Kernel {
    Emoms(EmomsKernel),
    ESpline(ESplineKernel),
    PiecewiseLinear(PiecewiseKernel),
    Tabulated(TabulatedKernel),
    /// `factor · inner(x)`.
    Scaled { inner: Box<Kernel>, factor: f64 },
}

impl Kernel {
    pub fn emoms(p: usize) -> Result<Self> {
        Ok(Kernel::Emoms(EmomsKernel::new(p)?))
    }

    /// Real-valued E-spline; frequencies must come in conjugate-symmetric pairs.
    pub fn espline(omegas: Vec<C64>) -> Result<Self> {
        let k = ESplineKernel::new(omegas)?;
        if !k.is_real() {
            return Err(FriError::InvalidArgument(
                "E-spline frequencies are not conjugate-symmetric; use ESplineKernel::eval_complex".into(),
            ));
        }
        Ok(Kernel::ESpline(k))
    }

    pub fn scaled(self, factor: f64) -> Self {
        Kernel::Scaled { inner: Box::new(self), factor }
    }

    /// Value at user coordinate `x`; zero outside the support.
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Kernel::Emoms(k) => k.eval(x),
            Kernel::ESpline(k) => k.eval_complex(x).re,
            Kernel::PiecewiseLinear(k) => k.eval(x),
            Kernel::Tabulated(k) => k.eval(x),
            Kernel::Scaled { inner, factor } => factor * inner.eval(x),
        }
    }

    /// Support `[lo, hi)` in user coordinates.
    pub fn support(&self) -> (f64, f64) {
        match self {
            Kernel::Emoms(k) => k.support(),
            Kernel::ESpline(k) => (0.0, k.order() as f64),
            Kernel::PiecewiseLinear(k) => (-k.anchor, k.support_len() - k.anchor),
            Kernel::Tabulated(k) => k.support(),
            Kernel::Scaled { inner, .. } => inner.support(),
        }
    }

    pub fn support_len(&self) -> f64 {
        let (lo, hi) = self.support();
        hi - lo
    }

    /// Offset between user and local coordinates (`−lo`).
    pub fn anchor(&self) -> f64 {
        -self.support().0
    }

    /// Samples `(x, φ(x))` on `[lo, hi)` with the given step.
    pub fn tabulate(&self, step: f64) -> Vec<(f64, f64)> {
        let (lo, hi) = self.support();
        let count = ((hi - lo) / step).round() as usize;
        (0..count).map(|i| lo + i as f64 * step).map(|x| (x, self.eval(x))).collect()
    }
}

/// Maximal-order minimum-support kernel reproducing the P+1 exponentials
/// `e^{jω_m t}`, ω_m = −Pπ/(P+1) + 2πm/(P+1).
///
/// On its support it equals `(1/N) Σ_m e^{jω_m t} = sin(πt) / (N sin(πt/N))`
/// with N = P+1, restricted to the window `[−⌊N/2⌋, N − ⌊N/2⌋)`. For odd N
/// both window ends are zeros of the Dirichlet kernel, so the kernel is
/// continuous.
#[derive(Clone, Debug, PartialEq)]
pub struct EmomsKernel {
    order: usize,
}

impl EmomsKernel {
    pub fn new(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(FriError::InvalidArgument("eMOMS order must be at least 1".into()));
        }
        Ok(Self { order: p })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn support(&self) -> (f64, f64) {
        let n = self.order + 1;
        let lo = -((n / 2) as f64);
        (lo, lo + n as f64)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if !(x >= lo && x < hi) {
            return 0.0;
        }
        eval_emoms(self.order, x)
    }
}

/// Dirichlet form of the eMOMS kernel without the support window.
pub fn eval_emoms(p: usize, x: f64) -> f64 {
    let n = (p + 1) as f64;
    let den = (PI * x / n).sin();
    if den.abs() > 1e-6 {
        (PI * x).sin() / (n * den)
    } else {
        let (omega0, lambda) = emoms_frequencies(p);
        (0..=p).map(|m| ((omega0 + lambda * m as f64) * x).cos()).sum::<f64>() / n
    }
}

/// Exponential spline of order P+1: the convolution of the atoms
/// `e^{jω_m t} 1[0,1)(t)`, supported on `[0, P+1]`.
///
/// Evaluated exactly as `β(t) = Σ_k p_k ρ(t − k)` where ρ is the causal Green's
/// function (the divided difference of `e^{zt}` at the nodes α_m = jω_m) and
/// `Σ_k p_k z^k = Π_m (1 − e^{α_m} z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ESplineKernel {
    omegas: Vec<C64>,
    alphas: Vec<C64>,
    poly: Vec<C64>,
}

impl ESplineKernel {
    pub fn new(omegas: Vec<C64>) -> Result<Self> {
        if omegas.is_empty() {
            return Err(FriError::EmptyInput("E-spline needs at least one frequency"));
        }
        let alphas: Vec<C64> = omegas.iter().map(|w| C64::i() * w).collect();
        let mut poly = vec![C64::new(1.0, 0.0)];
        for a in &alphas {
            let r = -a.exp();
            let mut next = vec![C64::new(0.0, 0.0); poly.len() + 1];
            for (i, c) in poly.iter().enumerate() {
                next[i] += c;
                next[i + 1] += c * r;
            }
            poly = next;
        }
        Ok(Self { omegas, alphas, poly })
    }

    /// Frequencies ω_m = ω₀ + mλ for m = 0..=P.
    pub fn uniform(p: usize, omega0: f64, lambda: f64) -> Result<Self> {
        Self::new((0..=p).map(|m| C64::new(omega0 + lambda * m as f64, 0.0)).collect())
    }

    /// Number of atoms, P+1 (equals the support length).
    pub fn order(&self) -> usize {
        self.omegas.len()
    }

    pub fn omegas(&self) -> &[C64] {
        &self.omegas
    }

    fn is_real(&self) -> bool {
        let mut used = vec![false; self.omegas.len()];
        for (i, w) in self.omegas.iter().enumerate() {
            if used[i] {
                continue;
            }
            let target = -w.conj();
            let found = (0..self.omegas.len()).find(|&j| !used[j] && j != i && (self.omegas[j] - target).norm() < 1e-12);
            if (target - w).norm() < 1e-12 {
                used[i] = true;
            } else if let Some(j) = found {
                used[i] = true;
                used[j] = true;
            } else {
                return false;
            }
        }
        true
    }

    /// Divided difference `[α_0, …, α_P] e^{·t}` as entry (0, P) of exp(tJ),
    /// J upper bidiagonal with the nodes on the diagonal.
    fn green(&self, t: f64) -> C64 {
        if t < 0.0 {
            return C64::new(0.0, 0.0);
        }
        let n = self.alphas.len();
        if n == 1 {
            return (self.alphas[0] * t).exp();
        }
        let mut j = DMatrix::<C64>::zeros(n, n);
        for i in 0..n {
            j[(i, i)] = self.alphas[i] * t;
            if i + 1 < n {
                j[(i, i + 1)] = C64::new(t, 0.0);
            }
        }
        j.exp()[(0, n - 1)]
    }

    pub fn eval_complex(&self, t: f64) -> C64 {
        let len = self.order() as f64;
        if !(t >= 0.0 && t < len) {
            return C64::new(0.0, 0.0);
        }
        let last = t.floor() as usize;
        (0..=last).map(|k| self.poly[k] * self.green(t - k as f64)).sum()
    }
}

/// E-spline value at `t` for frequencies ω_m (rad per sample).
pub fn eval_espline(omegas: &[C64], t: f64) -> Result<C64> {
    Ok(ESplineKernel::new(omegas.to_vec())?.eval_complex(t))
}

/// φ̂(z) = Σ_i d_i max(0, z − iΔ) on `[0, L)`, L = IΔ, zero elsewhere.
///
/// Node values and cumulative slopes are cached so evaluation is O(1).
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseKernel {
    d: Vec<f64>,
    delta: f64,
    pub anchor: f64,
    nodes: Vec<f64>,
    slopes: Vec<f64>,
}

impl PiecewiseKernel {
    pub fn new(d: Vec<f64>, delta: f64, anchor: f64) -> Result<Self> {
        if d.is_empty() {
            return Err(FriError::EmptyInput("piecewise kernel needs coefficients"));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(FriError::InvalidArgument(format!("step must be positive, got {delta}")));
        }
        let mut k = Self { d, delta, anchor, nodes: Vec::new(), slopes: Vec::new() };
        k.refresh();
        Ok(k)
    }

    fn refresh(&mut self) {
        let count = self.d.len();
        self.nodes = Vec::with_capacity(count);
        self.slopes = Vec::with_capacity(count);
        let mut v = 0.0;
        let mut slope = 0.0;
        for i in 0..count {
            self.nodes.push(v);
            slope += self.d[i];
            self.slopes.push(slope);
            v += self.delta * slope;
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.d
    }

    pub fn set_coefficients(&mut self, d: &[f64]) -> Result<()> {
        if d.len() != self.d.len() {
            return Err(FriError::DimensionMismatch(format!("expected {} coefficients, got {}", self.d.len(), d.len())));
        }
        self.d.copy_from_slice(d);
        self.refresh();
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn knots(&self) -> usize {
        self.d.len()
    }

    pub fn support_len(&self) -> f64 {
        self.d.len() as f64 * self.delta
    }

    /// Value at local coordinate `z`.
    #[inline]
    pub fn eval_local(&self, z: f64) -> f64 {
        match self.segment(z) {
            Some(j) => self.nodes[j] + (z - j as f64 * self.delta) * self.slopes[j],
            None => 0.0,
        }
    }

    /// Derivative in `z`, using the left slope exactly at a knot.
    #[inline]
    pub fn slope_local(&self, z: f64) -> f64 {
        match self.segment(z) {
            Some(j) => {
                if j > 0 && z == j as f64 * self.delta {
                    self.slopes[j - 1]
                } else {
                    self.slopes[j]
                }
            }
            None => 0.0,
        }
    }

    /// Index of the last knot at or below `z`, if `z` is inside `[0, L)`.
    #[inline]
    pub fn segment(&self, z: f64) -> Option<usize> {
        if !(z >= 0.0 && z < self.support_len()) {
            return None;
        }
        Some(((z / self.delta) as usize).min(self.d.len() - 1))
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_local(x + self.anchor)
    }

    /// Node values φ̂(iΔ) for i = 1..=I; φ̂(0) is always 0.
    pub fn node_values(&self) -> Vec<f64> {
        let mut v = self.nodes[1..].to_vec();
        v.push(self.nodes[self.d.len() - 1] + self.delta * self.slopes[self.d.len() - 1]);
        v
    }

    /// Inverse of [`node_values`](Self::node_values).
    pub fn set_node_values(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.d.len() {
            return Err(FriError::DimensionMismatch(format!("expected {} node values, got {}", self.d.len(), v.len())));
        }
        let mut prev_value = 0.0;
        let mut prev_slope = 0.0;
        for (d, &value) in self.d.iter_mut().zip(v) {
            let slope = (value - prev_value) / self.delta;
            *d = slope - prev_slope;
            prev_value = value;
            prev_slope = slope;
        }
        self.refresh();
        Ok(())
    }

    /// Maps a gradient with respect to d onto the node values.
    pub fn node_gradient(&self, grad_d: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let g = |k: usize| if k < n { grad_d[k] } else { 0.0 };
        (1..=n).map(|j| (g(j - 1) - 2.0 * g(j) + g(j + 1)) / self.delta).collect()
    }

    /// Extremum of φ̂ over the knots, the one with the larger magnitude.
    pub fn extremum(&self) -> f64 {
        let mut vals = self.nodes.clone();
        vals.push(*self.nodes.last().unwrap() + self.delta * self.slopes.last().unwrap());
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if max.abs() >= min.abs() {
            max
        } else {
            min
        }
    }

    /// Divides d by the extremum so the peak of φ̂ is +1.
    pub fn normalize_peak(&mut self) -> Result<f64> {
        let peak = self.extremum();
        if !(peak.abs() > 1e-300) || !peak.is_finite() {
            return Err(FriError::DegenerateKernel("all-zero piecewise coefficients".into()));
        }
        for v in &mut self.d {
            *v /= peak;
        }
        self.refresh();
        Ok(peak)
    }
}

/// Literal ReLU sum `Σ_i d_i max(0, t − iΔ)` (no support window).
pub fn eval_piecewise(d: &[f64], delta: f64, t: f64) -> f64 {
    d.iter().enumerate().map(|(i, di)| di * (t - i as f64 * delta).max(0.0)).sum()
}

/// Piecewise-linear interpolant of `kernel` with knots every `delta` on its support.
///
/// Slope increments: `d_i = s_i − Σ_{j<i} d_j` where s_i is the slope on
/// `[iΔ, (i+1)Δ)`, so that φ̂ interpolates φ at every knot.
pub fn piecewise_from_kernel(kernel: &Kernel, delta: f64) -> Result<PiecewiseKernel> {
    if !(delta > 0.0) {
        return Err(FriError::InvalidArgument(format!("step must be positive, got {delta}")));
    }
    let (lo, hi) = kernel.support();
    let ratio = (hi - lo) / delta;
    let count = ratio.round();
    if (ratio - count).abs() > 1e-9 * ratio.max(1.0) || count < 1.0 {
        return Err(FriError::InvalidArgument(format!(
            "step {delta} does not divide the support length {}",
            hi - lo
        )));
    }
    let count = count as usize;
    let node = |i: usize| kernel.eval(lo + i as f64 * delta);
    let mut d = Vec::with_capacity(count);
    let mut acc = 0.0;
    let mut prev = node(0);
    for i in 0..count {
        let next = node(i + 1);
        let slope = (next - prev) / delta;
        let di = slope - acc;
        d.push(di);
        acc += di;
        prev = next;
    }
    PiecewiseKernel::new(d, delta, -lo)
}

/// Linear interpolation of values on a uniform grid starting at `start`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedKernel {
    pub start: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl TabulatedKernel {
    pub fn new(start: f64, step: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(FriError::EmptyInput("tabulated kernel needs at least two values"));
        }
        if !(step > 0.0) {
            return Err(FriError::InvalidArgument("grid step must be positive".into()));
        }
        Ok(Self { start, step, values })
    }

    pub fn support(&self) -> (f64, f64) {
        (self.start, self.start + (self.values.len() - 1) as f64 * self.step)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.start) / self.step;
        if !(u >= 0.0) || u >= (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let i = u as usize;
        let f = u - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }

    /// Reads a two-column CSV `t,phi` with a uniform `t` grid.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let mut ts = Vec::new();
        let mut vs = Vec::new();
        for rec in rdr.deserialize() {
            let (t, v): (f64, f64) = rec?;
            ts.push(t);
            vs.push(v);
        }
        if ts.len() < 2 {
            return Err(FriError::EmptyInput("tabulated kernel file has fewer than two rows"));
        }
        let step = ts[1] - ts[0];
        for w in ts.windows(2) {
            if ((w[1] - w[0]) - step).abs() > 1e-9 * step.abs().max(1.0) {
                return Err(FriError::InvalidArgument("tabulated kernel grid is not uniform".into()));
            }
        }
        Self::new(ts[0], step, vs)
    }
}

/// Writes `(t, φ(t))` rows as CSV with header `t,phi`.
pub fn write_kernel_csv(path: &Path, rows: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "phi"])?;
    for (t, v) in rows {
        w.write_record([format!("{t}"), format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Coefficients c_{m,n} with `Σ_n c_{m,n} φ(t − n) = e^{jω_m t}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpReproCoeffs {
    pub omega0: f64,
    pub lambda: f64,
    pub sample_count: usize,
    /// c_{m,0} for m = 0..=P.
    pub c0: Vec<C64>,
    /// Row-major (P+1)×N matrix c_{m,n} = c_{m,0} e^{jω_m n}.
    pub c: Vec<C64>,
    /// Max reproduction error observed on the fitting grid.
    pub residual: f64,
}

impl ExpReproCoeffs {
    pub fn order(&self) -> usize {
        self.c0.len() - 1
    }

    pub fn omega(&self, m: usize) -> f64 {
        self.omega0 + self.lambda * m as f64
    }

    pub fn coeff(&self, m: usize, n: usize) -> C64 {
        self.c[m * self.sample_count + n]
    }
}

pub const REPRODUCTION_TOLERANCE: f64 = 1e-8;
const FIT_GRID: usize = 512;

/// Fits c_{m,0} by least squares on a dense grid over one unit interval and
/// checks the reproduction residual against [`REPRODUCTION_TOLERANCE`].
pub fn exp_repro_coeffs(kernel: &Kernel, p: usize, omega0: f64, lambda: f64, n: usize) -> Result<ExpReproCoeffs> {
    if n == 0 {
        return Err(FriError::EmptyInput("sample count is zero"));
    }
    let (lo, hi) = kernel.support();
    let mut c0 = Vec::with_capacity(p + 1);
    let mut residual: f64 = 0.0;
    for m in 0..=p {
        let w = omega0 + lambda * m as f64;
        let mut g = Vec::with_capacity(FIT_GRID);
        let mut target = Vec::with_capacity(FIT_GRID);
        for i in 0..FIT_GRID {
            let t = i as f64 / FIT_GRID as f64;
            let n_min = (t - hi).floor() as i64 + 1;
            let n_max = (t - lo).floor() as i64;
            let gi: C64 = (n_min..=n_max)
                .map(|k| C64::from_polar(kernel.eval(t - k as f64), w * k as f64))
                .sum();
            g.push(gi);
            target.push(C64::from_polar(1.0, w * t));
        }
        let num: C64 = g.iter().zip(&target).map(|(gi, ti)| gi.conj() * ti).sum();
        let den: f64 = g.iter().map(|gi| gi.norm_sqr()).sum();
        if !(den > 0.0) {
            return Err(FriError::ReproductionFailure { residual: f64::INFINITY, tolerance: REPRODUCTION_TOLERANCE });
        }
        let c = num / den;
        let r = g.iter().zip(&target).map(|(gi, ti)| (c * gi - ti).norm()).fold(0.0, f64::max);
        residual = residual.max(r);
        c0.push(c);
    }
    if !(residual <= REPRODUCTION_TOLERANCE) {
        return Err(FriError::ReproductionFailure { residual, tolerance: REPRODUCTION_TOLERANCE });
    }
    let mut c = Vec::with_capacity((p + 1) * n);
    for (m, cm) in c0.iter().enumerate() {
        let w = omega0 + lambda * m as f64;
        for k in 0..n {
            c.push(cm * C64::from_polar(1.0, w * k as f64));
        }
    }
    Ok(ExpReproCoeffs { omega0, lambda, sample_count: n, c0, c, residual })
}
