//! Spike detection in fluorescence traces with sliding-window FRIED-Net
//! models and a double-consistency histogram.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{FriError, Result};
use crate::friednet::{
    train_encoder, train_unknown_kernel, Decoder, Encoder, EncoderConfig, FriedExample, FriedNet, FriedTrainConfig,
};
use crate::nn::ParamSet;
use crate::rng::{derive_seed, stream};
use crate::signal_model::SamplingConfig;

pub const DEFAULT_SAMPLE_RATE: f64 = 60.0;
pub const DEFAULT_CONTAMINATION: f64 = 0.7;
/// Label given to a slot with no spike; lies outside the window.
pub const PAD_LABEL: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct FluorescenceTrace {
    pub sample_rate: f64,
    pub values: Vec<f64>,
    pub neuropil: Option<Vec<f64>>,
    /// Set once the neuropil has been subtracted.
    pub neuropil_corrected: bool,
}

impl FluorescenceTrace {
    pub fn new(sample_rate: f64, values: Vec<f64>, neuropil: Option<Vec<f64>>) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(FriError::InvalidArgument(format!("sample rate must be positive, got {sample_rate}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FriError::InvalidArgument("trace contains non-finite values".into()));
        }
        if let Some(np) = &neuropil {
            if np.len() != values.len() {
                return Err(FriError::DimensionMismatch(format!(
                    "neuropil has {} samples, trace has {}",
                    np.len(),
                    values.len()
                )));
            }
        }
        Ok(Self { sample_rate, values, neuropil, neuropil_corrected: false })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Reads `time,fluorescence[,neuropil]`; the rate comes from the time column.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let has_np = rdr.headers()?.len() >= 3;
        let (mut ts, mut vs, mut np) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| FriError::InvalidArgument(format!("missing column {i}")))?
                    .trim()
                    .parse()
                    .map_err(|_| FriError::InvalidArgument(format!("bad number in column {i}")))
            };
            ts.push(field(0)?);
            vs.push(field(1)?);
            if has_np {
                np.push(field(2)?);
            }
        }
        if ts.len() < 2 {
            return Err(FriError::EmptyInput("trace file needs at least two rows"));
        }
        let rate = (ts.len() - 1) as f64 / (ts[ts.len() - 1] - ts[0]);
        Self::new(rate, vs, has_np.then_some(np))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        match &self.neuropil {
            Some(_) => w.write_record(["time", "fluorescence", "neuropil"])?,
            None => w.write_record(["time", "fluorescence"])?,
        }
        for (n, v) in self.values.iter().enumerate() {
            let t = format!("{}", n as f64 / self.sample_rate);
            match &self.neuropil {
                Some(np) => w.write_record([t, format!("{v}"), format!("{}", np[n])])?,
                None => w.write_record([t, format!("{v}")])?,
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `values − r·neuropil`; traces without a neuropil pass through unflagged.
pub fn preprocess_trace(trace: &FluorescenceTrace, r: f64) -> Result<FluorescenceTrace> {
    let Some(np) = &trace.neuropil else {
        return Ok(trace.clone());
    };
    if np.len() != trace.values.len() {
        return Err(FriError::DimensionMismatch("neuropil length differs from trace".into()));
    }
    let values = trace.values.iter().zip(np).map(|(v, n)| v - r * n).collect();
    Ok(FluorescenceTrace { sample_rate: trace.sample_rate, values, neuropil: None, neuropil_corrected: true })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpikeTrain {
    pub times: Vec<f64>,
}

impl SpikeTrain {
    pub fn new(mut times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !t.is_finite()) {
            return Err(FriError::InvalidArgument("spike times must be finite".into()));
        }
        times.sort_by(|a, b| a.total_cmp(b));
        Ok(Self { times })
    }

    /// One time in seconds per line; blank lines and a non-numeric header are skipped.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut times = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            match line.parse::<f64>() {
                Ok(t) => times.push(t),
                Err(_) if i == 0 => continue,
                Err(_) => return Err(FriError::InvalidArgument(format!("bad spike time on line {}", i + 1))),
            }
        }
        Self::new(times)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let text: String = self.times.iter().map(|t| format!("{t}\n")).collect();
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub short: Vec<usize>,
    pub long: Vec<usize>,
    pub k_long: usize,
    pub step: usize,
    /// Matching tolerance in samples.
    pub acceptance: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { short: vec![32, 16], long: vec![128, 64, 32], k_long: 7, step: 1, acceptance: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalciumWindow {
    pub start: usize,
    /// Window samples with the window minimum subtracted.
    pub samples: Vec<f64>,
    /// Spike positions rescaled to `[−0.5, 0.5)`, padded with [`PAD_LABEL`].
    pub labels: Vec<f64>,
    pub spike_count: usize,
}

/// Sliding windows of `len` samples. With `only_with_spikes`, windows without
/// a spike are dropped (training sets).
pub fn make_windows(
    trace: &FluorescenceTrace,
    spikes: Option<&SpikeTrain>,
    len: usize,
    k: usize,
    step: usize,
    only_with_spikes: bool,
) -> Result<Vec<CalciumWindow>> {
    if k == 0 || step == 0 || len < 2 {
        return Err(FriError::InvalidArgument(format!("window {len}, K {k}, step {step}")));
    }
    if len > trace.len() {
        return Err(FriError::InvalidArgument(format!("window of {len} exceeds trace of {}", trace.len())));
    }
    let positions: Vec<f64> = spikes.map(|s| s.times.iter().map(|t| t * trace.sample_rate).collect()).unwrap_or_default();
    let mut out = Vec::new();
    let mut first = 0;
    for start in (0..=trace.len() - len).step_by(step) {
        let lo = start as f64;
        let hi = (start + len) as f64;
        while first < positions.len() && positions[first] < lo {
            first += 1;
        }
        let inside: Vec<f64> = positions[first..].iter().take_while(|&&p| p < hi).cloned().collect();
        if only_with_spikes && inside.is_empty() {
            continue;
        }
        let slice = &trace.values[start..start + len];
        let min = slice.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut labels: Vec<f64> =
            inside.iter().take(k).map(|p| (p - lo - 0.5 * len as f64) / len as f64).collect();
        labels.resize(k, PAD_LABEL);
        out.push(CalciumWindow {
            start,
            samples: slice.iter().map(|v| v - min).collect(),
            labels,
            spike_count: inside.len(),
        });
    }
    Ok(out)
}

/// One sliding-window detector. Short windows carry a learned decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct CalciumModel {
    pub window: usize,
    pub encoder: Encoder,
    pub decoder: Option<Decoder>,
}

impl CalciumModel {
    pub fn k(&self) -> usize {
        self.encoder.k
    }

    pub fn to_params(&self) -> ParamSet {
        match &self.decoder {
            Some(d) => FriedNet { encoder: self.encoder.clone(), decoder: d.clone() }.to_params(),
            None => self.encoder.params.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalciumModels {
    pub short: Vec<CalciumModel>,
    pub long: Vec<CalciumModel>,
}

impl CalciumModels {
    pub fn all(&self) -> impl Iterator<Item = &CalciumModel> {
        self.short.iter().chain(&self.long)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalciumTrainConfig {
    pub encoder: EncoderConfig,
    pub delta: f64,
    /// Full FRIED-Net training of the short-window models.
    pub short: FriedTrainConfig,
    /// Encoder-only training of the long-window models (stage 1 epochs are used).
    pub long: FriedTrainConfig,
    /// Cap on training windows per window length, drawn without replacement.
    pub max_windows: usize,
    pub seed: u64,
}

impl Default for CalciumTrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            delta: 1.0 / 64.0,
            short: FriedTrainConfig {
                gamma: 100.0,
                lr_warmup: 1e-3,
                lr_decoder: 3e-3,
                stage1_epochs: 5,
                stage2_epochs: 3,
                stage3_epochs: 0,
                decoder_nodes: true,
                ..FriedTrainConfig::default()
            },
            long: FriedTrainConfig { gamma: 100.0, lr_warmup: 1e-3, stage1_epochs: 5, ..FriedTrainConfig::default() },
            max_windows: 1000,
            seed: 0,
        }
    }
}

fn training_windows(
    data: &[(FluorescenceTrace, SpikeTrain)],
    len: usize,
    k: usize,
    step: usize,
    cap: usize,
    seed: u64,
) -> Result<Vec<FriedExample>> {
    let mut all = Vec::new();
    for (trace, spikes) in data {
        all.extend(make_windows(trace, Some(spikes), len, k, step, true)?);
    }
    if all.is_empty() {
        return Err(FriError::EmptyInput("no training window contains a spike"));
    }
    if all.len() > cap {
        let mut idx = sample_indices(&mut stream(seed), all.len(), cap).into_vec();
        idx.sort_unstable();
        all = idx.into_iter().map(|i| all[i].clone()).collect();
    }
    Ok(all
        .into_iter()
        .map(|w| FriedExample { noisy: w.samples, clean: None, locations: w.labels, amplitudes: None })
        .collect())
}

/// Trains one model per window length: full FRIED-Net with K = 1 for the
/// short windows, encoder only with K = `k_long` for the long ones.
pub fn train_calcium_models(
    data: &[(FluorescenceTrace, SpikeTrain)],
    windows: &WindowConfig,
    cfg: &CalciumTrainConfig,
) -> Result<CalciumModels> {
    let mut models = CalciumModels::default();
    for (idx, &len) in windows.short.iter().enumerate() {
        let seed = derive_seed(cfg.seed, 100 + idx as u64);
        let examples = training_windows(data, len, 1, windows.step, cfg.max_windows, seed)?;
        let mut rng = stream(seed);
        let w = len as f64;
        let decoder = Decoder::learnable(2.0 * w, 1.5 * w, cfg.delta, SamplingConfig::open(len, 1.0), &mut rng)?;
        let encoder = Encoder::new(len, 1, cfg.encoder, &mut rng)?;
        let mut net = FriedNet::new(encoder, decoder)?;
        let train_cfg = FriedTrainConfig { seed: derive_seed(seed, 1), ..cfg.short };
        train_unknown_kernel(&mut net, &examples, &train_cfg)?;
        models.short.push(CalciumModel { window: len, encoder: net.encoder, decoder: Some(net.decoder) });
    }
    for (idx, &len) in windows.long.iter().enumerate() {
        let seed = derive_seed(cfg.seed, 200 + idx as u64);
        let examples = training_windows(data, len, windows.k_long, windows.step, cfg.max_windows, seed)?;
        let mut rng = stream(seed);
        // the decoder is only a placeholder for the shared training loop
        let decoder = Decoder::learnable(2.0 * len as f64, 1.5 * len as f64, 1.0, SamplingConfig::open(len, 1.0), &mut rng)?;
        let encoder = Encoder::new(len, windows.k_long, cfg.encoder, &mut rng)?;
        let mut net = FriedNet::new(encoder, decoder)?;
        let train_cfg = FriedTrainConfig { seed: derive_seed(seed, 1), ..cfg.long };
        train_encoder(&mut net, &examples, &train_cfg)?;
        models.long.push(CalciumModel { window: len, encoder: net.encoder, decoder: None });
    }
    Ok(models)
}

/// Per-bin detection counts and the number of window evaluations covering
/// each bin; one bin per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionHistogram {
    pub sample_rate: f64,
    pub counts: Vec<f64>,
    pub coverage: Vec<f64>,
}

impl DetectionHistogram {
    /// Normalized counts in `[0, 1]`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.counts.iter().zip(&self.coverage).map(|(c, n)| if *n > 0.0 { c / n } else { 0.0 }).collect()
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub time: f64,
    pub probability: f64,
}

/// Runs every model at every window position and accumulates in-window
/// predictions; a window adds at most one count per bin.
pub fn detection_histogram(models: &CalciumModels, trace: &FluorescenceTrace, step: usize) -> Result<DetectionHistogram> {
    if models.all().next().is_none() {
        return Err(FriError::Config("no trained calcium models".into()));
    }
    let n = trace.len();
    let mut counts = vec![0.0; n];
    let mut coverage = vec![0.0; n];
    for model in models.all() {
        let w = model.window;
        let windows = make_windows(trace, None, w, model.k(), step, false)?;
        let inputs: Vec<Vec<f64>> = windows.iter().map(|x| x.samples.clone()).collect();
        let preds = model.encoder.predict(&inputs)?;
        for (win, pred) in windows.iter().zip(preds) {
            let mut hit = BTreeSet::new();
            for l in pred {
                if !(-0.5..0.5).contains(&l) {
                    continue;
                }
                let p = win.start as f64 + (0.5 + l) * w as f64;
                let b = (p.floor() as usize).clamp(win.start, win.start + w - 1);
                hit.insert(b);
            }
            for b in hit {
                counts[b] += 1.0;
            }
            for c in &mut coverage[win.start..win.start + w] {
                *c += 1.0;
            }
        }
    }
    Ok(DetectionHistogram { sample_rate: trace.sample_rate, counts, coverage })
}

/// Local maxima within ±2 bins whose probability reaches `threshold`.
/// Plateaus report their first bin. Zero bins are never peaks.
pub fn pick_peaks(hist: &DetectionHistogram, threshold: f64) -> Vec<Detection> {
    let p = hist.probabilities();
    let mut out = Vec::new();
    for b in 0..p.len() {
        if p[b] <= 0.0 || p[b] < threshold {
            continue;
        }
        let lo = b.saturating_sub(2);
        let hi = (b + 2).min(p.len() - 1);
        let left_ok = (lo..b).all(|j| p[j] < p[b]);
        let right_ok = (b + 1..=hi).all(|j| p[j] <= p[b]);
        if left_ok && right_ok {
            out.push(Detection { time: (b as f64 + 0.5) / hist.sample_rate, probability: p[b] });
        }
    }
    out
}

pub fn double_consistency_detect(
    models: &CalciumModels,
    trace: &FluorescenceTrace,
    windows: &WindowConfig,
    threshold: f64,
) -> Result<(Vec<Detection>, DetectionHistogram)> {
    let hist = detection_histogram(models, trace, windows.step)?;
    Ok((pick_peaks(&hist, threshold), hist))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// TPR/FPR over thresholds 0, 0.01, …, 1.
///
/// Detections are matched greedily in order of decreasing probability, each
/// to the nearest unmatched spike within `acceptance` seconds, so lowering
/// the threshold only adds matches. FPR counts unmatched detections against
/// the bins left after removing the matched ones.
pub fn roc_eval(detections: &[Detection], truth: &SpikeTrain, acceptance: f64, bins: usize) -> Vec<RocPoint> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b].probability.total_cmp(&detections[a].probability).then(detections[a].time.total_cmp(&detections[b].time))
    });
    let mut used = vec![false; truth.times.len()];
    let mut matched = vec![false; detections.len()];
    for &i in &order {
        let t = detections[i].time;
        let best = truth
            .times
            .iter()
            .enumerate()
            .filter(|(j, s)| !used[*j] && (*s - t).abs() <= acceptance)
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()));
        if let Some((j, _)) = best {
            used[j] = true;
            matched[i] = true;
        }
    }
    let positives = truth.times.len();
    (0..=100)
        .map(|step| {
            let threshold = step as f64 / 100.0;
            let (mut tp, mut fp) = (0usize, 0usize);
            for (d, &m) in detections.iter().zip(&matched) {
                if d.probability >= threshold {
                    if m {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            let tpr = if positives == 0 { 0.0 } else { tp as f64 / positives as f64 };
            let negatives = bins.saturating_sub(tp).max(1);
            RocPoint { threshold, tpr, fpr: fp as f64 / negatives as f64 }
        })
        .collect()
}

pub fn write_detections_csv(path: &Path, detections: &[Detection]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time", "probability"])?;
    for d in detections {
        w.write_record([format!("{}", d.time), format!("{}", d.probability)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_detections_csv(path: &Path) -> Result<Vec<Detection>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let (time, probability): (f64, f64) = rec?;
        out.push(Detection { time, probability });
    }
    Ok(out)
}

pub fn write_roc_csv(path: &Path, roc: &[RocPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "tpr", "fpr"])?;
    for r in roc {
        w.write_record([format!("{}", r.threshold), format!("{}", r.tpr), format!("{}", r.fpr)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalciumSynthConfig {
    pub duration: f64,
    pub sample_rate: f64,
    /// Mean spike rate in Hz (Poisson).
    pub spike_rate: f64,
    pub tau_rise: f64,
    pub tau_decay: f64,
    /// Peak of a single transient.
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub baseline: f64,
    pub drift_amplitude: f64,
    pub neuropil_amplitude: f64,
    pub contamination: f64,
}

impl Default for CalciumSynthConfig {
    fn default() -> Self {
        Self {
            duration: 120.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            spike_rate: 0.45,
            tau_rise: 0.02,
            tau_decay: 0.28,
            amplitude: 1.0,
            noise_sigma: 0.1,
            baseline: 1.0,
            drift_amplitude: 0.2,
            neuropil_amplitude: 0.3,
            contamination: DEFAULT_CONTAMINATION,
        }
    }
}

/// Double-exponential transient with unit peak, `u` in seconds after the spike.
pub fn transient(u: f64, tau_rise: f64, tau_decay: f64) -> f64 {
    if u < 0.0 {
        return 0.0;
    }
    let t_peak = tau_rise * tau_decay / (tau_decay - tau_rise) * (tau_decay / tau_rise).ln();
    let peak = (-t_peak / tau_decay).exp() - (-t_peak / tau_rise).exp();
    ((-u / tau_decay).exp() - (-u / tau_rise).exp()) / peak
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCalcium {
    /// Raw trace including the contaminating neuropil.
    pub trace: FluorescenceTrace,
    pub spikes: SpikeTrain,
    /// Sum of transients only.
    pub clean: Vec<f64>,
}

/// Poisson spikes convolved with a double-exponential transient, plus a
/// baseline, slow drift, scaled neuropil and white noise.
pub fn synth_calcium<R: Rng + ?Sized>(rng: &mut R, cfg: &CalciumSynthConfig) -> Result<SyntheticCalcium> {
    let positive = [cfg.duration, cfg.sample_rate, cfg.tau_rise, cfg.tau_decay];
    if positive.iter().any(|v| !(*v > 0.0)) || cfg.tau_rise >= cfg.tau_decay || cfg.spike_rate < 0.0 || cfg.noise_sigma < 0.0 {
        return Err(FriError::InvalidArgument(format!("invalid calcium synthesis parameters {cfg:?}")));
    }
    let n = (cfg.duration * cfg.sample_rate).round() as usize;
    let mut times = Vec::new();
    if cfg.spike_rate > 0.0 {
        let isi = Exp::new(cfg.spike_rate).map_err(|e| FriError::InvalidArgument(e.to_string()))?;
        let mut t = isi.sample(rng);
        while t < cfg.duration {
            times.push(t);
            t += isi.sample(rng);
        }
    }
    let dt = 1.0 / cfg.sample_rate;
    let reach = 10.0 * cfg.tau_decay;
    let mut clean = vec![0.0; n];
    for &s in &times {
        let first = (s / dt).ceil() as usize;
        let last = (((s + reach) / dt).floor() as usize).min(n.saturating_sub(1));
        for (i, c) in clean.iter_mut().enumerate().take(last + 1).skip(first) {
            *c += cfg.amplitude * transient(i as f64 * dt - s, cfg.tau_rise, cfg.tau_decay);
        }
    }
    let phase = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range");
    let freq = Uniform::new(0.02, 0.2).expect("valid range");
    let drift_phase = phase.sample(rng);
    let components: Vec<(f64, f64)> = (0..3).map(|_| (freq.sample(rng), phase.sample(rng))).collect();
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| FriError::InvalidArgument(e.to_string()))?;
    let mut values = Vec::with_capacity(n);
    let mut neuropil = Vec::with_capacity(n);
    for (i, c) in clean.iter().enumerate() {
        let t = i as f64 * dt;
        let np: f64 = cfg.neuropil_amplitude
            * components.iter().map(|(f, p)| (std::f64::consts::TAU * f * t + p).sin()).sum::<f64>()
            / 3.0;
        let drift = cfg.drift_amplitude * (std::f64::consts::TAU * t / cfg.duration.max(60.0) + drift_phase).sin();
        neuropil.push(np);
        values.push(cfg.baseline + c + drift + cfg.contamination * np + noise.sample(rng));
    }
    Ok(SyntheticCalcium {
        trace: FluorescenceTrace::new(cfg.sample_rate, values, Some(neuropil))?,
        spikes: SpikeTrain::new(times)?,
        clean,
    })
}
