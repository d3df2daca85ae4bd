//! Periodic streams of Diracs, their kernel-filtered samples and the
//! location-error metric used to score reconstructions.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FriError, Result};
use crate::kernels::Kernel;

/// Wraps `t` into `[-period/2, period/2)`.
pub fn wrap_location(t: f64, period: f64) -> f64 {
    let half = 0.5 * period;
    let w = (t + half).rem_euclid(period) - half;
    // rem_euclid can return `period` itself for tiny negative inputs
    if w >= half {
        w - period
    } else {
        w
    }
}

/// Signed circular difference `a - b` wrapped into `[-period/2, period/2)`.
pub fn circular_diff(a: f64, b: f64, period: f64) -> f64 {
    wrap_location(a - b, period)
}

/// K Diracs on one period: locations in `[-τ/2, τ/2)` and real amplitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiracStream {
    period: f64,
    locations: Vec<f64>,
    amplitudes: Vec<f64>,
}

impl DiracStream {
    pub fn new(period: f64, locations: Vec<f64>, amplitudes: Vec<f64>) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(FriError::InvalidArgument(format!("period must be positive, got {period}")));
        }
        if locations.is_empty() {
            return Err(FriError::EmptyInput("dirac stream needs at least one location"));
        }
        if locations.len() != amplitudes.len() {
            return Err(FriError::DimensionMismatch(format!(
                "{} locations but {} amplitudes",
                locations.len(),
                amplitudes.len()
            )));
        }
        let half = 0.5 * period;
        for &t in &locations {
            if !(t >= -half && t < half) {
                return Err(FriError::Domain(format!("location {t} outside [-{half}, {half})")));
            }
        }
        if amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(FriError::InvalidArgument("non-finite amplitude".into()));
        }
        Ok(Self { period, locations, amplitudes })
    }

    /// Wraps arbitrary locations into the fundamental period first.
    pub fn wrapped(period: f64, locations: Vec<f64>, amplitudes: Vec<f64>) -> Result<Self> {
        let locations = locations.into_iter().map(|t| wrap_location(t, period)).collect();
        Self::new(period, locations, amplitudes)
    }

    /// Two equal-amplitude Diracs at `first` and `first + dt0`.
    pub fn pair(period: f64, first: f64, dt0: f64, amplitude: f64) -> Result<Self> {
        Self::wrapped(period, vec![first, first + dt0], vec![amplitude, amplitude])
    }

    /// K locations uniform on the period, amplitudes uniform on `amp_range`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, k: usize, period: f64, amp_range: (f64, f64)) -> Result<Self> {
        let half = 0.5 * period;
        let mut locations: Vec<f64> = (0..k).map(|_| rng.random_range(-half..half)).collect();
        locations.sort_by(|a, b| a.total_cmp(b));
        let amplitudes = (0..k).map(|_| rng.random_range(amp_range.0..amp_range.1)).collect();
        Self::new(period, locations, amplitudes)
    }

    pub fn k(&self) -> usize {
        self.locations.len()
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn scaled_amplitudes(&self, factor: f64) -> Self {
        Self {
            period: self.period,
            locations: self.locations.clone(),
            amplitudes: self.amplitudes.iter().map(|a| a * factor).collect(),
        }
    }
}

impl DiracStream {
    /// `t,a` rows with a header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "a"])?;
        for (t, a) in self.locations.iter().zip(&self.amplitudes) {
            w.write_record([format!("{t}"), format!("{a}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, period: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let (mut ts, mut amps) = (Vec::new(), Vec::new());
        for rec in rdr.deserialize() {
            let (t, a): (f64, f64) = rec?;
            ts.push(t);
            amps.push(a);
        }
        Self::new(period, ts, amps)
    }
}

/// How the kernel sum treats the ends of the sample window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Stream repeats with period `sample_count * T`.
    Periodic,
    /// Only the Diracs themselves contribute (calcium windows).
    Open,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub sample_count: usize,
    pub period: f64,
    pub boundary: Boundary,
}

impl SamplingConfig {
    pub fn periodic(sample_count: usize, period: f64) -> Self {
        Self { sample_count, period, boundary: Boundary::Periodic }
    }

    pub fn open(sample_count: usize, period: f64) -> Self {
        Self { sample_count, period, boundary: Boundary::Open }
    }

    /// T = τ / N.
    pub fn sampling_period(&self) -> f64 {
        self.period / self.sample_count as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_count == 0 {
            return Err(FriError::EmptyInput("sample_count is zero"));
        }
        if !(self.period > 0.0) {
            return Err(FriError::InvalidArgument("period must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub values: Vec<f64>,
    pub config: SamplingConfig,
}

impl SampleSet {
    /// One value per line, no header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let text: String = self.values.iter().map(|v| format!("{v}\n")).collect();
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Reads one value per line; the sample count comes from the file.
    pub fn read_csv(path: &Path, period: f64, boundary: Boundary) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let values = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .enumerate()
            .map(|(i, l)| l.parse().map_err(|_| FriError::InvalidArgument(format!("bad sample on line {}", i + 1))))
            .collect::<Result<Vec<f64>>>()?;
        let config = SamplingConfig { sample_count: values.len(), period, boundary };
        config.validate()?;
        Ok(Self { values, config })
    }

    /// Largest absolute sample.
    pub fn peak(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Additive white Gaussian noise set by PSNR relative to a peak amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub psnr_db: f64,
    pub peak_amplitude: f64,
}

impl NoiseSpec {
    /// σ = peak · 10^(−PSNR/20).
    pub fn sigma(&self) -> f64 {
        self.peak_amplitude * 10f64.powf(-self.psnr_db / 20.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PronyCadzow,
    PronyPwgd,
    Unfolded,
    #[serde(rename = "friednet-encoder")]
    FriedEncoder,
    #[serde(rename = "friednet")]
    FriedNet,
    #[serde(rename = "friednet-finetune")]
    FriedNetFinetuned,
    Oracle,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::PronyCadzow => "prony-cadzow",
            Method::PronyPwgd => "prony-pwgd",
            Method::Unfolded => "unfolded",
            Method::FriedEncoder => "friednet-encoder",
            Method::FriedNet => "friednet",
            Method::FriedNetFinetuned => "friednet-finetune",
            Method::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = FriError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| FriError::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub locations: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub method: Method,
}

/// Kernel-weighted sum `Σ_k a_k Σ_l φ(t_k/T − n + lN)` for one sample index.
pub(crate) fn kernel_sum_at(
    kernel: &Kernel,
    locations: &[f64],
    amplitudes: &[f64],
    n: usize,
    config: &SamplingConfig,
) -> f64 {
    let t_s = config.sampling_period();
    let big_n = config.sample_count as f64;
    let mut acc = 0.0;
    for (&t, &a) in locations.iter().zip(amplitudes) {
        let x = t / t_s - n as f64;
        acc += a * match config.boundary {
            Boundary::Open => kernel.eval(x),
            Boundary::Periodic => periodized(kernel, x, big_n),
        };
    }
    acc
}

/// Σ_l φ(x + l·period) over every image that lands in the kernel support.
pub fn periodized(kernel: &Kernel, x: f64, period: f64) -> f64 {
    let (lo, hi) = kernel.support();
    let l_min = ((lo - x) / period).ceil() as i64;
    let l_max = ((hi - x) / period).floor() as i64;
    (l_min..=l_max).map(|l| kernel.eval(x + l as f64 * period)).sum()
}

/// Noiseless samples `y[n] = Σ_k a_k φ(t_k/T − n)` for n = 0..N.
pub fn synthesize(stream: &DiracStream, kernel: &Kernel, config: &SamplingConfig) -> Result<SampleSet> {
    config.validate()?;
    if config.boundary == Boundary::Periodic && (stream.period() - config.period).abs() > 1e-12 * config.period {
        return Err(FriError::DimensionMismatch(format!(
            "stream period {} differs from sampling period {}",
            stream.period(),
            config.period
        )));
    }
    let values: Vec<f64> = (0..config.sample_count)
        .map(|n| kernel_sum_at(kernel, stream.locations(), stream.amplitudes(), n, config))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FriError::Evaluation("kernel produced a non-finite sample".into()));
    }
    Ok(SampleSet { values, config: *config })
}

pub fn add_noise<R: Rng + ?Sized>(samples: &SampleSet, noise: &NoiseSpec, rng: &mut R) -> Result<SampleSet> {
    add_noise_sigma(samples, noise.sigma(), rng)
}

/// Adds i.i.d. N(0, σ²) to every sample.
pub fn add_noise_sigma<R: Rng + ?Sized>(samples: &SampleSet, sigma: f64, rng: &mut R) -> Result<SampleSet> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(FriError::InvalidArgument(format!("noise sigma must be finite and non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(samples.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| FriError::InvalidArgument(e.to_string()))?;
    let values = samples.values.iter().map(|v| v + normal.sample(rng)).collect();
    Ok(SampleSet { values, config: samples.config })
}

/// Estimates matched one-to-one against the truth on the circle.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedEstimate {
    /// Per true Dirac: matched estimate location, if any.
    pub locations: Vec<Option<f64>>,
    pub amplitudes: Vec<Option<f64>>,
    /// Per true Dirac: signed circular error `t̂ − t`.
    pub errors: Vec<Option<f64>>,
    pub missing: usize,
    pub spurious: usize,
}

/// Minimum-cost circular assignment of estimates to true locations.
pub fn align_estimates(result: &ReconstructionResult, truth: &DiracStream) -> Result<AlignedEstimate> {
    if result.locations.len() != result.amplitudes.len() {
        return Err(FriError::DimensionMismatch("estimate locations and amplitudes differ in length".into()));
    }
    let period = truth.period();
    let k = truth.k();
    let e = result.locations.len();
    let n = k.max(e);
    // dummy rows/columns cost more than any real circular distance
    let dummy = period;
    let mut cost = vec![dummy; n * n];
    for i in 0..k {
        for j in 0..e {
            let d = circular_diff(result.locations[j], truth.locations()[i], period);
            cost[i * n + j] = if d.is_finite() { d * d } else { dummy * 4.0 };
        }
    }
    let assign = hungarian(&cost, n);
    let mut out = AlignedEstimate {
        locations: vec![None; k],
        amplitudes: vec![None; k],
        errors: vec![None; k],
        missing: 0,
        spurious: 0,
    };
    for i in 0..k {
        let j = assign[i];
        if j < e && result.locations[j].is_finite() {
            out.locations[i] = Some(result.locations[j]);
            out.amplitudes[i] = Some(result.amplitudes[j]);
            out.errors[i] = Some(circular_diff(result.locations[j], truth.locations()[i], period));
        } else {
            out.missing += 1;
        }
    }
    out.spurious = e.saturating_sub(k - out.missing);
    Ok(out)
}

/// Hungarian algorithm (shortest augmenting path) on a dense n×n cost matrix.
/// Returns `assign[row] = column`.
pub(crate) fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdReport {
    /// SD_k for each Dirac index, NaN when every realization missed it.
    pub per_dirac: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub misses: usize,
    pub spurious: usize,
    pub realizations: usize,
}

/// SD_k = sqrt(mean_j (t̂_k^(j) − t_k^(j))²) over aligned realizations.
pub fn sd_metric_aligned(aligned: &[AlignedEstimate]) -> Result<SdReport> {
    let first = aligned.first().ok_or(FriError::EmptyInput("no realizations"))?;
    let k = first.errors.len();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    let mut misses = 0;
    let mut spurious = 0;
    for a in aligned {
        if a.errors.len() != k {
            return Err(FriError::DimensionMismatch("realizations disagree on K".into()));
        }
        for (i, err) in a.errors.iter().enumerate() {
            if let Some(e) = err {
                sums[i] += e * e;
                counts[i] += 1;
            }
        }
        misses += a.missing;
        spurious += a.spurious;
    }
    let per_dirac: Vec<f64> =
        sums.iter().zip(&counts).map(|(s, &c)| if c == 0 { f64::NAN } else { (s / c as f64).sqrt() }).collect();
    let mut finite: Vec<f64> = per_dirac.iter().copied().filter(|v| v.is_finite()).collect();
    let (mean, median) = if finite.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        finite.sort_by(|a, b| a.total_cmp(b));
        let m = finite.len();
        let median = if m % 2 == 1 { finite[m / 2] } else { 0.5 * (finite[m / 2 - 1] + finite[m / 2]) };
        (finite.iter().sum::<f64>() / m as f64, median)
    };
    Ok(SdReport { per_dirac, mean, median, misses, spurious, realizations: aligned.len() })
}

/// SD for a J×K matrix of estimates of a single fixed truth.
pub fn sd_metric(estimates: &[Vec<f64>], truth: &DiracStream) -> Result<SdReport> {
    if estimates.is_empty() {
        return Err(FriError::EmptyInput("no realizations"));
    }
    let aligned = estimates
        .iter()
        .map(|row| {
            let res = ReconstructionResult {
                locations: row.clone(),
                amplitudes: vec![0.0; row.len()],
                method: Method::Oracle,
            };
            align_estimates(&res, truth)
        })
        .collect::<Result<Vec<_>>>()?;
    sd_metric_aligned(&aligned)
}

/// PSNR below which two equal-amplitude Diracs `Δt0` apart can no longer be
/// resolved from P+1 Fourier coefficients.
///
/// With h = P/2 + 1 and x = Δt0/T:
/// `10 log10( 8 h ln h / (h − sin(λhx/2)/sin(λx/2))² )`.
pub fn breakdown_psnr(p: usize, lambda: f64, dt0_over_t: f64) -> Result<f64> {
    if !(dt0_over_t > 0.0) || !dt0_over_t.is_finite() {
        return Err(FriError::Domain(format!("separation must be positive, got {dt0_over_t}")));
    }
    if p == 0 {
        return Err(FriError::Domain("P must be at least 1".into()));
    }
    let h = p as f64 / 2.0 + 1.0;
    let half = 0.5 * lambda * dt0_over_t;
    let den = half.sin();
    if den.abs() < 1e-12 || !den.is_finite() {
        return Err(FriError::Domain(format!("sin(λx/2) vanishes at x = {dt0_over_t}")));
    }
    let gap = h - (h * half).sin() / den;
    if gap.abs() < f64::MIN_POSITIVE {
        return Err(FriError::Domain("separation is too small to evaluate".into()));
    }
    Ok(10.0 * (8.0 * h * h.ln() / (gap * gap)).log10())
}
