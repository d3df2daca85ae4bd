//! Moments, Toeplitz embedding, structured low-rank denoising and Prony's method.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FriError, Result};
use crate::kernels::{ExpReproCoeffs, Kernel, C64};
use crate::linalg::{real_lstsq, svd};
pub use crate::linalg::CMatrix;
use crate::signal_model::{kernel_sum_at, wrap_location, Method, ReconstructionResult, SampleSet, SamplingConfig};

/// Exponential moments `s[m] = Σ_n c_{m,n} y[n]`, m = 0..=P.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSequence {
    pub s: Vec<C64>,
    pub lambda: f64,
    pub omega0: f64,
    pub sampling_period: f64,
    pub period: f64,
}

impl MomentSequence {
    pub fn order(&self) -> usize {
        self.s.len() - 1
    }

    pub fn with_values(&self, s: Vec<C64>) -> Self {
        Self { s, ..*self }
    }

    /// CSV rows `m,re,im`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["m", "re", "im"])?;
        for (m, v) in self.s.iter().enumerate() {
            w.write_record([m.to_string(), format!("{}", v.re), format!("{}", v.im)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Moments of a sample vector.
///
/// For periodic streams the identity `s[m] = Σ_k b_k u_k^m` is exact when
/// c_{m,n} is N-periodic in n (λN a multiple of 2π, true for eMOMS with
/// N = P+1); otherwise the periodic wrap leaves a small model error.
pub fn moments(samples: &SampleSet, coeffs: &ExpReproCoeffs) -> Result<MomentSequence> {
    let n = samples.values.len();
    if coeffs.sample_count != n {
        return Err(FriError::DimensionMismatch(format!(
            "coefficients built for {} samples, got {n}",
            coeffs.sample_count
        )));
    }
    let s = (0..=coeffs.order())
        .map(|m| samples.values.iter().enumerate().map(|(k, y)| coeffs.coeff(m, k) * y).sum())
        .collect();
    Ok(MomentSequence {
        s,
        lambda: coeffs.lambda,
        omega0: coeffs.omega0,
        sampling_period: samples.config.sampling_period(),
        period: samples.config.period,
    })
}

/// Toeplitz matrix with `entry(i, j) = s[M + i − j]`, M = cols − 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ToeplitzMatrix {
    entries: CMatrix,
}

impl ToeplitzMatrix {
    pub fn from_moments(s: &[C64], m: usize) -> Result<Self> {
        if s.is_empty() {
            return Err(FriError::EmptyInput("no moments"));
        }
        let p = s.len() - 1;
        if m > p {
            return Err(FriError::InvalidArgument(format!("split M = {m} exceeds P = {p}")));
        }
        let entries = CMatrix::from_fn(p - m + 1, m + 1, |i, j| s[m + i - j]);
        Ok(Self { entries })
    }

    /// Projects an arbitrary matrix onto the Toeplitz set.
    pub fn from_matrix(mat: &CMatrix) -> Self {
        Self { entries: toeplitz_project(mat) }
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    /// The P+1 moments along the diagonals.
    pub fn generator(&self) -> Vec<C64> {
        diagonal_moments(&self.entries)
    }
}

/// Near-square embedding with the default split M = ⌈P/2⌉.
pub fn default_split(p: usize) -> usize {
    p.div_ceil(2)
}

pub fn build_toeplitz(s: &MomentSequence, m: usize) -> Result<ToeplitzMatrix> {
    ToeplitzMatrix::from_moments(&s.s, m)
}

/// Diagonal means of an r×c matrix, indexed as moments `p = (c − 1) + i − j`.
pub fn diagonal_moments(mat: &CMatrix) -> Vec<C64> {
    let (r, c) = mat.shape();
    let len = r + c - 1;
    let mut sums = vec![C64::new(0.0, 0.0); len];
    let mut counts = vec![0usize; len];
    for i in 0..r {
        for j in 0..c {
            let p = c - 1 + i - j;
            sums[p] += mat[(i, j)];
            counts[p] += 1;
        }
    }
    sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect()
}

/// Orthogonal projection onto Toeplitz matrices: every diagonal replaced by its mean.
pub fn toeplitz_project(mat: &CMatrix) -> CMatrix {
    let (r, c) = mat.shape();
    let s = diagonal_moments(mat);
    CMatrix::from_fn(r, c, |i, j| s[c - 1 + i - j])
}

/// Best rank-K approximation (hard threshold of the singular values).
pub fn rank_project(mat: &CMatrix, k: usize) -> Result<CMatrix> {
    let min_dim = mat.nrows().min(mat.ncols());
    if k > min_dim {
        return Err(FriError::InvalidArgument(format!("rank {k} exceeds min dimension {min_dim}")));
    }
    Ok(svd(mat)?.rebuild(|j, s| if j < k { s } else { 0.0 }))
}

/// Singular values shrunk to `max(0, σ_i − μσ_{K+1})`.
pub fn soft_threshold(mat: &CMatrix, k: usize, mu: f64) -> Result<CMatrix> {
    let min_dim = mat.nrows().min(mat.ncols());
    if k + 1 > min_dim {
        return Err(FriError::InvalidArgument(format!("K + 1 = {} exceeds min dimension {min_dim}", k + 1)));
    }
    let d = svd(mat)?;
    let c = mu * d.sigma[k];
    Ok(d.rebuild(|_, s| (s - c).max(0.0)))
}

/// Low-rank step used inside PWGD.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LowRankStep {
    Hard,
    Soft { mu: f64 },
}

fn low_rank(mat: &CMatrix, k: usize, step: LowRankStep) -> Result<CMatrix> {
    match step {
        LowRankStep::Hard => rank_project(mat, k),
        LowRankStep::Soft { mu } => soft_threshold(mat, k, mu),
    }
}

/// Every H iterate of projected Wirtinger gradient descent:
/// `L ← R((1−δ₁)L + δ₁H)`, `H ← T(δ₂L + (1−δ₂)H)`, from L = 0, H = noisy.
pub fn pwgd_iterates(
    noisy: &ToeplitzMatrix,
    k: usize,
    delta1: f64,
    delta2: f64,
    iterations: usize,
    step: LowRankStep,
) -> Result<Vec<CMatrix>> {
    for (name, d) in [("delta1", delta1), ("delta2", delta2)] {
        if !(d > 0.0 && d <= 1.0) {
            return Err(FriError::InvalidArgument(format!("{name} must lie in (0, 1], got {d}")));
        }
    }
    if iterations == 0 {
        return Err(FriError::InvalidArgument("PWGD needs at least one iteration".into()));
    }
    let mut h = noisy.entries().clone();
    let mut l = CMatrix::zeros(h.nrows(), h.ncols());
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mix = l.scale(1.0 - delta1) + h.scale(delta1);
        l = low_rank(&mix, k, step)?;
        h = toeplitz_project(&(l.scale(delta2) + h.scale(1.0 - delta2)));
        out.push(h.clone());
    }
    Ok(out)
}

pub fn pwgd(noisy: &ToeplitzMatrix, k: usize, delta1: f64, delta2: f64, iterations: usize) -> Result<ToeplitzMatrix> {
    let last = pwgd_iterates(noisy, k, delta1, delta2, iterations, LowRankStep::Hard)?.pop().unwrap();
    Ok(ToeplitzMatrix { entries: last })
}

pub const DEFAULT_CADZOW_ITERATIONS: usize = 10;

/// Cadzow's alternating projections, each iterate recorded.
pub fn cadzow_iterates(noisy: &ToeplitzMatrix, k: usize, iterations: usize) -> Result<Vec<CMatrix>> {
    let mut h = noisy.entries().clone();
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        h = toeplitz_project(&rank_project(&h, k)?);
        out.push(h.clone());
    }
    Ok(out)
}

pub fn cadzow(noisy: &ToeplitzMatrix, k: usize, iterations: usize) -> Result<ToeplitzMatrix> {
    let mut it = cadzow_iterates(noisy, k, iterations)?;
    Ok(ToeplitzMatrix { entries: it.pop().unwrap_or_else(|| noisy.entries().clone()) })
}

/// Filter `h` (h[0] = 1) whose polynomial `h0 u^K + … + hK` vanishes at the `roots`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnihilatingFilter {
    pub h: Vec<C64>,
}

impl AnnihilatingFilter {
    pub fn from_roots(roots: &[C64]) -> Self {
        let mut h = vec![C64::new(1.0, 0.0)];
        for r in roots {
            let mut next = vec![C64::new(0.0, 0.0); h.len() + 1];
            for (i, c) in h.iter().enumerate() {
                next[i] += c;
                next[i + 1] -= c * r;
            }
            h = next;
        }
        Self { h }
    }

    /// Filter annihilating the moments of Diracs at `locations`.
    pub fn from_locations(locations: &[f64], lambda: f64, sampling_period: f64) -> Self {
        let roots: Vec<C64> = locations.iter().map(|t| C64::from_polar(1.0, lambda * t / sampling_period)).collect();
        Self::from_roots(&roots)
    }

    pub fn unit_normalized(&self) -> Vec<C64> {
        let norm = self.h.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        self.h.iter().map(|v| v / norm).collect()
    }
}

/// Null vector of the (P−K+1)×(K+1) Prony matrix built from `s`.
pub fn annihilating_filter(s: &[C64], k: usize) -> Result<AnnihilatingFilter> {
    if k == 0 || k + 1 > s.len() {
        return Err(FriError::InvalidArgument(format!("K = {k} incompatible with {} moments", s.len())));
    }
    let mut mat = ToeplitzMatrix::from_moments(s, k)?.into_entries();
    if mat.iter().all(|v| v.norm() == 0.0) {
        return Err(FriError::TrivialNullspace);
    }
    if mat.nrows() < mat.ncols() {
        // pad with zero rows so the thin SVD exposes the full right space
        let cols = mat.ncols();
        mat = mat.resize_vertically(cols, C64::new(0.0, 0.0));
    }
    let d = svd(&mat)?;
    let last = d.v.ncols() - 1;
    let h: Vec<C64> = d.v.column(last).iter().cloned().collect();
    let scale = h.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if h[0].norm() <= 1e-14 * scale {
        return Err(FriError::DegenerateRoots("leading filter coefficient vanishes".into()));
    }
    let h0 = h[0];
    Ok(AnnihilatingFilter { h: h.iter().map(|v| v / h0).collect() })
}

/// Roots of `h0 u^K + h1 u^{K−1} + … + hK` via companion-matrix eigenvalues.
pub fn filter_roots(filter: &AnnihilatingFilter) -> Result<Vec<C64>> {
    let h = &filter.h;
    let k = h.len() - 1;
    if k == 1 {
        return Ok(vec![-h[1] / h[0]]);
    }
    let mut comp = CMatrix::zeros(k, k);
    for j in 0..k {
        comp[(0, j)] = -h[j + 1] / h[0];
    }
    for i in 1..k {
        comp[(i, i - 1)] = C64::new(1.0, 0.0);
    }
    let schur = nalgebra::linalg::Schur::try_new(comp, f64::EPSILON, 10_000)
        .ok_or_else(|| FriError::Numerical("companion eigenvalues did not converge".into()))?;
    let roots: Vec<C64> = schur.eigenvalues().ok_or_else(|| FriError::Numerical("no eigenvalues".into()))?.iter().cloned().collect();
    for (i, a) in roots.iter().enumerate() {
        if !a.re.is_finite() || !a.im.is_finite() {
            return Err(FriError::DegenerateRoots("non-finite root".into()));
        }
        for b in &roots[..i] {
            if (a - b).norm() <= 1e-14 * a.norm().max(1.0) {
                return Err(FriError::DegenerateRoots("repeated root".into()));
            }
        }
    }
    Ok(roots)
}

/// Raw Prony: annihilating filter, roots, `t̂ = T·arg(u)/λ` wrapped into the period.
pub fn prony_locations(s: &MomentSequence, k: usize) -> Result<Vec<f64>> {
    let filter = annihilating_filter(&s.s, k)?;
    let roots = filter_roots(&filter)?;
    let mut locs: Vec<f64> =
        roots.iter().map(|u| wrap_location(s.sampling_period * u.arg() / s.lambda, s.period)).collect();
    locs.sort_by(|a, b| a.total_cmp(b));
    Ok(locs)
}

/// Prony on a denoised matrix: moments re-read off its diagonals first.
pub fn prony_from_toeplitz(mat: &ToeplitzMatrix, k: usize, meta: &MomentSequence) -> Result<Vec<f64>> {
    prony_locations(&meta.with_values(mat.generator()), k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudeFit {
    pub amplitudes: Vec<f64>,
    /// True when the design matrix was numerically rank deficient and the
    /// least-norm solution was returned.
    pub rank_deficient: bool,
}

/// Design matrix Φ[n, k] = φ(t_k/T − n) (periodized when the config is periodic).
pub fn design_matrix(locations: &[f64], kernel: &Kernel, config: &SamplingConfig) -> DMatrix<f64> {
    let n = config.sample_count;
    let mut phi = DMatrix::<f64>::zeros(n, locations.len());
    for (k, &t) in locations.iter().enumerate() {
        for row in 0..n {
            phi[(row, k)] = kernel_sum_at(kernel, &[t], &[1.0], row, config);
        }
    }
    phi
}

/// Least-squares amplitudes, least-norm when the design is rank deficient.
pub fn amplitudes_ls(locations: &[f64], samples: &SampleSet, kernel: &Kernel) -> Result<AmplitudeFit> {
    let phi = design_matrix(locations, kernel, &samples.config);
    solve_ls(&phi, &samples.values)
}

pub(crate) fn solve_ls(phi: &DMatrix<f64>, y: &[f64]) -> Result<AmplitudeFit> {
    if phi.ncols() == 0 {
        return Ok(AmplitudeFit { amplitudes: Vec::new(), rank_deficient: false });
    }
    if phi.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(FriError::Numerical("non-finite least-squares input".into()));
    }
    let (amplitudes, rank_deficient) = real_lstsq(phi, y, 1e-10)?;
    Ok(AmplitudeFit { amplitudes, rank_deficient })
}

/// Denoiser applied to the near-square Toeplitz matrix before Prony.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Denoiser {
    None,
    Cadzow { iterations: usize },
    Pwgd { delta1: f64, delta2: f64, iterations: usize },
}

/// Samples → moments → denoise → Prony → least-squares amplitudes.
pub fn reconstruct_classical(
    samples: &SampleSet,
    coeffs: &ExpReproCoeffs,
    kernel: &Kernel,
    k: usize,
    denoiser: Denoiser,
) -> Result<ReconstructionResult> {
    let s = moments(samples, coeffs)?;
    let p = s.order();
    let noisy = build_toeplitz(&s, default_split(p))?;
    let (denoised, method) = match denoiser {
        Denoiser::None => (noisy, Method::PronyCadzow),
        Denoiser::Cadzow { iterations } => (cadzow(&noisy, k, iterations)?, Method::PronyCadzow),
        Denoiser::Pwgd { delta1, delta2, iterations } => {
            (pwgd(&noisy, k, delta1, delta2, iterations)?, Method::PronyPwgd)
        }
    };
    let locations = prony_from_toeplitz(&denoised, k, &s)?;
    let fit = amplitudes_ls(&locations, samples, kernel)?;
    Ok(ReconstructionResult { locations, amplitudes: fit.amplitudes, method })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{emoms_frequencies, exp_repro_coeffs};
    use crate::rng::substream;
    use crate::signal_model::{add_noise_sigma, synthesize, DiracStream};
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn setup(p: usize) -> (Kernel, ExpReproCoeffs, SamplingConfig) {
        let (w0, l) = emoms_frequencies(p);
        let kernel = Kernel::emoms(p).unwrap();
        let coeffs = exp_repro_coeffs(&kernel, p, w0, l, p + 1).unwrap();
        (kernel, coeffs, SamplingConfig::periodic(p + 1, 1.0))
    }

    fn random_cmatrix(r: usize, cols: usize, seed: u64) -> CMatrix {
        let mut rng = substream(seed, 0);
        CMatrix::from_fn(r, cols, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn zero_samples_give_zero_moments() {
        let (_, coeffs, cfg) = setup(20);
        let s = moments(&SampleSet { values: vec![0.0; 21], config: cfg }, &coeffs).unwrap();
        assert!(s.s.iter().all(|v| v.norm() == 0.0));
        let short = SampleSet { values: vec![0.0; 5], config: SamplingConfig::periodic(5, 1.0) };
        assert!(matches!(moments(&short, &coeffs), Err(FriError::DimensionMismatch(_))));
    }

    #[test]
    fn unit_dirac_at_origin_has_unit_moments() {
        let (kernel, coeffs, cfg) = setup(20);
        let stream = DiracStream::new(1.0, vec![0.0], vec![1.0]).unwrap();
        let s = moments(&synthesize(&stream, &kernel, &cfg).unwrap(), &coeffs).unwrap();
        for v in &s.s {
            assert!((v - c(1.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn moments_match_sum_of_exponentials() {
        let (kernel, coeffs, cfg) = setup(20);
        let stream = DiracStream::new(1.0, vec![0.1, 0.2], vec![3.0, 5.0]).unwrap();
        let s = moments(&synthesize(&stream, &kernel, &cfg).unwrap(), &coeffs).unwrap();
        let t_s = cfg.sampling_period();
        for (m, v) in s.s.iter().enumerate() {
            let want: C64 = stream
                .locations()
                .iter()
                .zip(stream.amplitudes())
                .map(|(t, a)| {
                    let b = C64::from_polar(*a, coeffs.omega0 * t / t_s);
                    b * C64::from_polar(1.0, coeffs.lambda * t / t_s).powu(m as u32)
                })
                .sum();
            assert!((v - want).norm() < 1e-9, "m={m}");
        }
    }

    #[test]
    fn single_dirac_moments_have_constant_modulus() {
        let (kernel, coeffs, cfg) = setup(20);
        let stream = DiracStream::new(1.0, vec![-0.237], vec![2.5]).unwrap();
        let s = moments(&synthesize(&stream, &kernel, &cfg).unwrap(), &coeffs).unwrap();
        for v in &s.s {
            assert!((v.norm() - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn toeplitz_indexing() {
        let s = [c(0.0, 0.0), c(1.0, 0.0), c(2.0, 0.0)];
        let t = ToeplitzMatrix::from_moments(&s, 1).unwrap();
        let want = CMatrix::from_row_slice(2, 2, &[s[1], s[0], s[2], s[1]]);
        assert_eq!(t.entries(), &want);
        assert_eq!(t.generator(), s.to_vec());
        assert!(ToeplitzMatrix::from_moments(&s, 3).is_err());
        let k = ToeplitzMatrix::from_moments(&vec![c(2.0, 1.0); 21], 2).unwrap();
        assert_eq!((k.rows(), k.cols()), (19, 3));
        assert!(k.entries().iter().all(|v| *v == c(2.0, 1.0)));
    }

    #[test]
    fn toeplitz_projection_examples() {
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(3.0, 0.0)]);
        let p = toeplitz_project(&m);
        assert_eq!(p, CMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(2.0, 0.0)]));
        assert_eq!(toeplitz_project(&p), p);
    }

    #[test]
    fn toeplitz_projection_is_orthogonal() {
        let x = random_cmatrix(5, 4, 1);
        let y = random_cmatrix(5, 4, 2);
        let px = toeplitz_project(&x);
        let py = toeplitz_project(&y);
        let inner: C64 = (&x - &px).iter().zip(py.iter()).map(|(a, b)| a * b.conj()).sum();
        assert!(inner.norm() < 1e-13);
    }

    #[test]
    fn rank_projection_cases() {
        let a = random_cmatrix(4, 1, 3);
        let b = random_cmatrix(1, 3, 4);
        let rank1 = &a * &b;
        assert!((rank_project(&rank1, 1).unwrap() - &rank1).norm() < 1e-10);
        let x = random_cmatrix(4, 3, 5);
        assert!((rank_project(&x, 3).unwrap() - &x).norm() < 1e-10);
        // oracle: eigen-decomposition of XᴴX gives the right singular vectors
        let gram = x.adjoint() * &x;
        let eig = gram.clone().symmetric_eigen();
        let mut idx: Vec<usize> = (0..3).collect();
        idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let v2 = CMatrix::from_fn(3, 2, |r, col| eig.eigenvectors[(r, idx[col])]);
        let oracle = &x * &v2 * v2.adjoint();
        assert!((rank_project(&x, 2).unwrap() - oracle).norm() < 1e-10);
        assert!(rank_project(&x, 4).is_err());
    }

    fn noiseless_matrix(p: usize, stream: &DiracStream) -> (MomentSequence, ToeplitzMatrix) {
        let (kernel, coeffs, cfg) = setup(p);
        let s = moments(&synthesize(stream, &kernel, &cfg).unwrap(), &coeffs).unwrap();
        let t = build_toeplitz(&s, default_split(p)).unwrap();
        (s, t)
    }

    #[test]
    fn pwgd_fixed_point_and_cadzow_equivalence() {
        let stream = DiracStream::new(1.0, vec![0.1, 0.2], vec![3.0, 5.0]).unwrap();
        let (_, clean) = noiseless_matrix(20, &stream);
        let out = pwgd(&clean, 2, 1.0, 1.0, 5).unwrap();
        assert!((out.entries() - clean.entries()).norm() < 1e-10 * clean.entries().norm());

        let noisy = ToeplitzMatrix::from_matrix(&(clean.entries() + random_cmatrix(11, 11, 8).scale(0.3)));
        let a = pwgd_iterates(&noisy, 2, 1.0, 1.0, 10, LowRankStep::Hard).unwrap();
        let b = cadzow_iterates(&noisy, 2, 10).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-10);
        }
        assert!(pwgd(&noisy, 2, 0.0, 1.0, 3).is_err());
    }

    #[test]
    fn pwgd_denoises_at_30db() {
        let (kernel, coeffs, cfg) = setup(20);
        let stream = DiracStream::new(1.0, vec![0.1, 0.2], vec![3.0, 5.0]).unwrap();
        let clean = synthesize(&stream, &kernel, &cfg).unwrap();
        let sigma = 5.0 * 10f64.powf(-30.0 / 20.0);
        let mut rng = substream(11, 0);
        let noisy = add_noise_sigma(&clean, sigma, &mut rng).unwrap();
        let t_clean = build_toeplitz(&moments(&clean, &coeffs).unwrap(), 10).unwrap();
        let t_noisy = build_toeplitz(&moments(&noisy, &coeffs).unwrap(), 10).unwrap();
        let den = pwgd(&t_noisy, 2, 0.9999, 0.9999, 20).unwrap();
        let before = (t_noisy.entries() - t_clean.entries()).norm();
        let after = (den.entries() - t_clean.entries()).norm();
        assert!(after < before, "{after} vs {before}");
    }

    #[test]
    fn noiseless_prony_round_trip() {
        let stream = DiracStream::new(1.0, vec![0.1, 0.2], vec![3.0, 5.0]).unwrap();
        let (s, t) = noiseless_matrix(20, &stream);
        let locs = prony_from_toeplitz(&t, 2, &s).unwrap();
        for (a, b) in locs.iter().zip(stream.locations()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn geometric_sequence_has_single_root() {
        let u = C64::from_polar(1.0, 0.7);
        let s: Vec<C64> = (0..7).map(|m| u.powu(m)).collect();
        let f = annihilating_filter(&s, 1).unwrap();
        let roots = filter_roots(&f).unwrap();
        assert!((roots[0] - u).norm() < 1e-12);
        assert!(matches!(annihilating_filter(&vec![c(0.0, 0.0); 7], 1), Err(FriError::TrivialNullspace)));
    }

    #[test]
    fn locations_wrap_into_the_period() {
        // arg(u) near π maps close to +τ/2 and must come back as −τ/2 side
        let meta = MomentSequence { s: vec![], lambda: 2.0 * std::f64::consts::PI / 21.0, omega0: 0.0, sampling_period: 1.0 / 21.0, period: 1.0 };
        let t = -0.499;
        let u = C64::from_polar(1.0, meta.lambda * t / meta.sampling_period);
        let s: Vec<C64> = (0..21).map(|m| u.powu(m)).collect();
        let locs = prony_locations(&meta.with_values(s), 1).unwrap();
        assert!((locs[0] - t).abs() < 1e-10);
        assert!(locs[0] >= -0.5 && locs[0] < 0.5);
    }

    #[test]
    fn amplitude_least_squares() {
        let (kernel, _, cfg) = setup(20);
        let stream = DiracStream::new(1.0, vec![-0.3, 0.2], vec![3.0, 5.0]).unwrap();
        let y = synthesize(&stream, &kernel, &cfg).unwrap();
        let fit = amplitudes_ls(stream.locations(), &y, &kernel).unwrap();
        assert!(!fit.rank_deficient);
        for (a, b) in fit.amplitudes.iter().zip(stream.amplitudes()) {
            assert!((a - b).abs() < 1e-9);
        }
        // K = 1 reduces to a scalar projection
        let noisy = SampleSet { values: y.values.iter().enumerate().map(|(i, v)| v + 0.01 * i as f64).collect(), config: cfg };
        let fit1 = amplitudes_ls(&[0.2], &noisy, &kernel).unwrap();
        let phi = design_matrix(&[0.2], &kernel, &cfg);
        let want = phi.column(0).dot(&DVector::from_column_slice(&noisy.values)) / phi.column(0).norm_squared();
        assert!((fit1.amplitudes[0] - want).abs() < 1e-10);
        let dup = amplitudes_ls(&[0.2, 0.2], &y, &kernel).unwrap();
        assert!(dup.rank_deficient);
        assert!(dup.amplitudes.iter().all(|a| a.is_finite()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn perfect_reconstruction(seed in 0u64..1_000_000, k in 1usize..=4) {
            let (kernel, coeffs, cfg) = setup(20);
            let mut rng = substream(seed, 0);
            let stream = DiracStream::random(&mut rng, k, 1.0, (0.5, 10.0)).unwrap();
            let locs = stream.locations();
            // coincident Diracs are not identifiable; require a minimal gap
            let min_gap = (0..k).flat_map(|i| (0..i).map(move |j| (i, j)))
                .map(|(i, j)| crate::signal_model::circular_diff(locs[i], locs[j], 1.0).abs())
                .fold(1.0, f64::min);
            prop_assume!(min_gap > 0.02);
            let y = synthesize(&stream, &kernel, &cfg).unwrap();
            let res = reconstruct_classical(&y, &coeffs, &kernel, k, Denoiser::None).unwrap();
            for (a, b) in res.locations.iter().zip(locs) {
                prop_assert!(crate::signal_model::circular_diff(*a, *b, 1.0).abs() < 1e-8);
            }
        }

        #[test]
        fn projections_idempotent_and_nonexpansive(seed in 0u64..10_000) {
            let x = random_cmatrix(6, 5, seed);
            let t = toeplitz_project(&x);
            prop_assert!((toeplitz_project(&t) - &t).norm() < 1e-12);
            prop_assert!(t.norm() <= x.norm() + 1e-12);
            let r = rank_project(&x, 2).unwrap();
            let rr = rank_project(&r, 2).unwrap();
            prop_assert!((&rr - &r).norm() < 1e-10);
            prop_assert!(r.norm() <= x.norm() + 1e-12);
        }

        #[test]
        fn pwgd_output_is_toeplitz(seed in 0u64..10_000, d1 in 0.1f64..1.0, d2 in 0.1f64..1.0) {
            let x = ToeplitzMatrix::from_matrix(&random_cmatrix(6, 6, seed));
            let out = pwgd(&x, 2, d1, d2, 3).unwrap();
            prop_assert!((toeplitz_project(out.entries()) - out.entries()).norm() < 1e-13);
        }
    }
}
