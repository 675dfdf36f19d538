//! Band-limited Johnson-noise synthesis and the instruments used to verify it.
//!
//! Noise is synthesized in the frequency domain one bit period at a time:
//! every FFT bin in `(0, B]` receives an independent complex Gaussian
//! coefficient, every other bin is zero, and an inverse FFT yields the time
//! samples. The band limit is therefore exact inside a period, and separate
//! periods are statistically independent.
//!
//! The generator variance follows the Nyquist formula `4 k T_eff R B`. The DC
//! bin is left empty, so each synthesized period has exactly zero mean.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream, Party, StreamRng};

/// Boltzmann constant, J/K (exact SI value).
pub const BOLTZMANN: f64 = 1.380649e-23;

/// Minimum ratio of sample rate to noise bandwidth (quasi-static margin).
pub const MIN_OVERSAMPLING: f64 = 20.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    Physical,
    /// `4 k T_eff` is fixed to 1 V²/(Ω·Hz).
    #[default]
    Normalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Effective noise temperature, K.
    pub t_eff: f64,
    /// Public noise bandwidth B, Hz.
    pub bandwidth_hz: f64,
    pub sample_rate_hz: f64,
    /// Samples per clock (bit) period, M.
    pub samples_per_bit: usize,
    #[serde(default)]
    pub scale_mode: ScaleMode,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            t_eff: 1e18,
            bandwidth_hz: 1000.0,
            sample_rate_hz: 20_480.0,
            samples_per_bit: 4096,
            scale_mode: ScaleMode::Normalized,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_eff > 0.0) || !self.t_eff.is_finite() {
            return Err(invalid(format!("t_eff must be positive, got {}", self.t_eff)));
        }
        if !(self.bandwidth_hz > 0.0) || !self.bandwidth_hz.is_finite() {
            return Err(invalid(format!(
                "bandwidth_hz must be positive, got {}",
                self.bandwidth_hz
            )));
        }
        if !(self.sample_rate_hz >= MIN_OVERSAMPLING * self.bandwidth_hz) {
            return Err(invalid(format!(
                "sample_rate_hz {} is below {} x bandwidth {}",
                self.sample_rate_hz, MIN_OVERSAMPLING, self.bandwidth_hz
            )));
        }
        if self.samples_per_bit < 2 {
            return Err(invalid("samples_per_bit must be at least 2"));
        }
        if self.band_bins() == 0 {
            return Err(invalid(format!(
                "a bit period of {} samples is shorter than one period of the {} Hz band edge",
                self.samples_per_bit, self.bandwidth_hz
            )));
        }
        Ok(())
    }

    /// `4 k T_eff` in V²/(Ω·Hz).
    pub fn four_kt(&self) -> f64 {
        match self.scale_mode {
            ScaleMode::Physical => 4.0 * BOLTZMANN * self.t_eff,
            ScaleMode::Normalized => 1.0,
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    /// Number of populated FFT bins per bit period.
    pub fn band_bins(&self) -> usize {
        let df = self.sample_rate_hz / self.samples_per_bit as f64;
        (self.bandwidth_hz / df + 1e-9).floor() as usize
    }

    /// Generator variance for resistance `r` at this temperature.
    pub fn variance(&self, r: f64) -> f64 {
        self.four_kt() * r * self.bandwidth_hz
    }
}

/// Reusable per-period synthesizer.
pub struct JohnsonSource {
    four_kt: f64,
    bandwidth_hz: f64,
    bins: usize,
    len: usize,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl std::fmt::Debug for JohnsonSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JohnsonSource")
            .field("four_kt", &self.four_kt)
            .field("bins", &self.bins)
            .field("len", &self.len)
            .finish()
    }
}

impl JohnsonSource {
    pub fn new(cfg: &NoiseConfig) -> Result<Self> {
        Self::with_temperature_ratio(cfg, 1.0)
    }

    /// A source running at `ratio` times the configured effective temperature.
    pub fn with_temperature_ratio(cfg: &NoiseConfig, ratio: f64) -> Result<Self> {
        cfg.validate()?;
        if !(ratio > 0.0) || !ratio.is_finite() {
            return Err(invalid(format!("temperature ratio must be positive, got {ratio}")));
        }
        let len = cfg.samples_per_bit;
        let fft = FftPlanner::new().plan_fft_inverse(len);
        let scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        Ok(Self {
            four_kt: cfg.four_kt() * ratio,
            bandwidth_hz: cfg.bandwidth_hz,
            bins: cfg.band_bins(),
            len,
            fft,
            buf: vec![Complex64::default(); len],
            scratch,
        })
    }

    pub fn period_len(&self) -> usize {
        self.len
    }

    pub fn variance(&self, r: f64) -> f64 {
        self.four_kt * r * self.bandwidth_hz
    }

    /// Synthesizes one bit period into `out` (length must equal the period).
    ///
    /// The number of random draws is independent of `r`, so streams stay
    /// aligned across resistor choices.
    pub fn fill_period(&mut self, r: f64, rng: &mut StreamRng, out: &mut [f64]) -> Result<()> {
        if !(r >= 0.0) || !r.is_finite() {
            return Err(invalid(format!("resistance must be non-negative, got {r}")));
        }
        if out.len() != self.len {
            return Err(Error::LengthMismatch { left: out.len(), right: self.len });
        }
        let scale = (self.variance(r) / self.bins as f64).sqrt() / 2.0;
        self.buf.fill(Complex64::default());
        for k in 1..=self.bins {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let c = Complex64::new(re * scale, im * scale);
            self.buf[k] = c;
            self.buf[self.len - k] = c.conj();
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (o, c) in out.iter_mut().zip(&self.buf) {
            *o = c.re;
        }
        Ok(())
    }

    pub fn period(&mut self, r: f64, rng: &mut StreamRng) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len];
        self.fill_period(r, rng, &mut out)?;
        Ok(out)
    }

    /// `n` samples made of consecutive independent bit periods.
    pub fn samples(&mut self, r: f64, n: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(invalid("sample count must be at least 1"));
        }
        let mut out = Vec::with_capacity(n.div_ceil(self.len) * self.len);
        let mut block = vec![0.0; self.len];
        while out.len() < n {
            self.fill_period(r, rng, &mut block)?;
            out.extend_from_slice(&block);
        }
        out.truncate(n);
        Ok(out)
    }
}

/// Johnson noise of resistor `r`, seeded from `cfg.seed`.
pub fn gen_johnson_noise(cfg: &NoiseConfig, r: f64, n: usize) -> Result<Vec<f64>> {
    let mut rng = stream(cfg.seed, 0, 0, Party::Harness);
    JohnsonSource::new(cfg)?.samples(r, n, &mut rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    /// One-sided density, units²/Hz.
    pub psd: Vec<f64>,
    pub n_segments: usize,
    pub resolution_hz: f64,
}

impl PsdEstimate {
    /// Mean density over bins with `lo <= f <= hi`.
    pub fn band_mean(&self, lo: f64, hi: f64) -> Option<f64> {
        let (sum, n) = self
            .freqs
            .iter()
            .zip(&self.psd)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .fold((0.0, 0usize), |(s, n), (_, p)| (s + p, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// Integrated power over the whole one-sided grid.
    pub fn integral(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.resolution_hz
    }
}

pub const DEFAULT_SEGMENT_LEN: usize = 1024;
pub const DEFAULT_OVERLAP: f64 = 0.5;

/// Welch averaged periodogram with a periodic Hann window.
///
/// The integral of the result over `[0, f_s/2]` equals the mean square of the
/// input up to leakage and estimator noise.
pub fn estimate_psd(
    samples: &[f64],
    sample_rate_hz: f64,
    segment_len: usize,
    overlap: f64,
) -> Result<PsdEstimate> {
    if segment_len < 2 {
        return Err(invalid("segment length must be at least 2"));
    }
    if segment_len > samples.len() {
        return Err(invalid(format!(
            "segment length {segment_len} exceeds data length {}",
            samples.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(invalid(format!("overlap must be in [0, 1), got {overlap}")));
    }
    if !(sample_rate_hz > 0.0) {
        return Err(invalid("sample rate must be positive"));
    }

    let step = (segment_len - (overlap * segment_len as f64).floor() as usize).max(1);
    let n_segments = (samples.len() - segment_len) / step + 1;
    let window: Vec<f64> = (0..segment_len)
        .map(|i| {
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / segment_len as f64).cos()
        })
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();

    let fft = FftPlanner::new().plan_fft_forward(segment_len);
    let mut buf = vec![Complex64::default(); segment_len];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let n_bins = segment_len / 2 + 1;
    let mut acc = vec![0.0; n_bins];

    for s in 0..n_segments {
        let seg = &samples[s * step..s * step + segment_len];
        for ((b, x), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }

    let norm = 1.0 / (sample_rate_hz * window_power * n_segments as f64);
    let nyquist = segment_len.is_multiple_of(2);
    let psd = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (nyquist && k == n_bins - 1) { 1.0 } else { 2.0 };
            a * norm * one_sided
        })
        .collect();
    let resolution_hz = sample_rate_hz / segment_len as f64;
    let freqs = (0..n_bins).map(|k| k as f64 * resolution_hz).collect();
    Ok(PsdEstimate { freqs, psd, n_segments, resolution_hz })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

pub const MIN_MOMENT_SAMPLES: usize = 1000;

/// Sample skewness and excess kurtosis (population estimators).
pub fn gaussianity_check(samples: &[f64]) -> Result<Moments> {
    if samples.len() < MIN_MOMENT_SAMPLES {
        return Err(Error::TooFewSamples { need: MIN_MOMENT_SAMPLES, got: samples.len() });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if !(m2 > f64::EPSILON * mean.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate("zero variance"));
    }
    Ok(Moments { skewness: m3 / m2.powf(1.5), excess_kurtosis: m4 / (m2 * m2) - 3.0 })
}

pub fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}
