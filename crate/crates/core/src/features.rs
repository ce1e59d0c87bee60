//! Log-mel spectrogram frontend: Hann-windowed power STFT, HTK-scale
//! triangular mel filterbank, log compression with a fixed floor.
//!
//! Synthetic-feature workflows bypass this module entirely; it exists so raw
//! 32 kHz mono WAV clips can be turned into student input features.

use std::path::Path;

use ndarray::{Array1, Array2};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MelScale {
    /// `m(f) = 2595 log10(1 + f/700)`
    Htk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterNorm {
    /// Unit-peak triangles, no area normalization.
    None,
}

/// Every knob of the frontend, recorded so alternates can be tested and
/// runs reproduced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Floor added before the log; silence maps to `ln(eps_floor)`.
    pub eps_floor: f64,
    pub window: WindowKind,
    pub mel_scale: MelScale,
    pub filter_norm: FilterNorm,
    /// Frames start at sample 0; no centering/padding of the first frame.
    pub center: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 32_000,
            window_len: 1024,
            hop: 512,
            n_mels: 128,
            f_min: 50.0,
            f_max: 16_000.0,
            eps_floor: 1e-5,
            window: WindowKind::Hann,
            mel_scale: MelScale::Htk,
            filter_norm: FilterNorm::None,
            center: false,
        }
    }
}

/// A single-channel waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl WaveClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid_data("sample rate must be positive"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_data("non-finite sample"));
        }
        Ok(Self { samples, sample_rate })
    }
}

/// Log-mel frames, one row per STFT frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpec {
    pub frames: Array2<f64>,
    pub frame_rate: f64,
}

impl LogMelSpec {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }
}

fn hann(window_len: usize) -> Array1<f64> {
    // periodic form, the spectral-analysis convention
    Array1::from_shape_fn(window_len, |n| {
        0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / window_len as f64).cos()
    })
}

/// Hann-windowed power spectrogram: `T x (window_len/2 + 1)` with
/// `T = 1 + floor((len - window_len) / hop)`. Clips shorter than one window
/// are zero-padded to a single frame.
pub fn stft_power(wave: &WaveClip, window_len: usize, hop: usize) -> Result<Array2<f64>> {
    if wave.samples.is_empty() {
        return Err(Error::invalid_data("empty waveform"));
    }
    if window_len == 0 || !window_len.is_power_of_two() {
        return Err(Error::invalid_argument(format!(
            "window length {window_len} is not a power of two"
        )));
    }
    if hop == 0 {
        return Err(Error::invalid_argument("hop must be positive"));
    }

    let mut samples = wave.samples.clone();
    if samples.len() < window_len {
        samples.resize(window_len, 0.0);
    }
    let n_frames = 1 + (samples.len() - window_len) / hop;
    let n_bins = window_len / 2 + 1;
    let window = hann(window_len);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(window_len);
    let mut out = Array2::zeros((n_frames, n_bins));
    let mut buf = vec![Complex::new(0.0, 0.0); window_len];
    for t in 0..n_frames {
        let start = t * hop;
        for (n, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(samples[start + n] * window[n], 0.0);
        }
        fft.process(&mut buf);
        for f in 0..n_bins {
            out[[t, f]] = buf[f].norm_sqr();
        }
    }
    Ok(out)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels x fft_bins`, unit-peak filters with
/// centers uniformly spaced on the HTK mel scale.
pub fn mel_filterbank(
    n_mels: usize,
    fft_bins: usize,
    f_min: f64,
    f_max: f64,
    sample_rate: u32,
) -> Result<Array2<f64>> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
        return Err(Error::invalid_argument(format!(
            "degenerate frequency range [{f_min}, {f_max}] for sample rate {sample_rate}"
        )));
    }
    if n_mels == 0 || fft_bins < 2 {
        return Err(Error::invalid_argument("need at least one filter and two bins"));
    }

    let mel_lo = hz_to_mel(f_min);
    let mel_hi = hz_to_mel(f_max);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    // FFT bin center frequencies; fft_bins = window/2 + 1
    let bin_hz = |k: usize| k as f64 * nyquist / (fft_bins - 1) as f64;

    let mut fb = Array2::zeros((n_mels, fft_bins));
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..fft_bins {
            let f = bin_hz(k);
            let up = (f - lo) / (mid - lo);
            let down = (hi - f) / (hi - mid);
            fb[[m, k]] = up.min(down).max(0.0);
        }
        if fb.row(m).sum() <= 0.0 {
            return Err(Error::invalid_argument(format!(
                "mel filter {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin"
            )));
        }
    }
    Ok(fb)
}

/// Full frontend: power STFT, mel filterbank, `ln(power + eps_floor)`.
pub fn log_mel_with(wave: &WaveClip, config: &FeatureConfig) -> Result<LogMelSpec> {
    if wave.sample_rate != config.sample_rate {
        return Err(Error::invalid_data(format!(
            "clip is {} Hz, frontend expects {} Hz (resample externally)",
            wave.sample_rate, config.sample_rate
        )));
    }
    let power = stft_power(wave, config.window_len, config.hop)?;
    let fb = mel_filterbank(
        config.n_mels,
        config.window_len / 2 + 1,
        config.f_min,
        config.f_max,
        config.sample_rate,
    )?;
    let mel = power.dot(&fb.t());
    let frames = mel.mapv(|v| (v + config.eps_floor).ln());
    Ok(LogMelSpec {
        frames,
        frame_rate: config.sample_rate as f64 / config.hop as f64,
    })
}

pub fn log_mel(wave: &WaveClip) -> Result<LogMelSpec> {
    log_mel_with(wave, &FeatureConfig::default())
}

/// Read a mono 16-bit PCM or 32-bit float WAV clip. Multi-channel input or a
/// sample rate other than `expected_rate` is rejected; resampling is out of
/// scope.
pub fn read_wav(path: &Path, expected_rate: u32) -> Result<WaveClip> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::invalid_data(format!(
            "{}: {} channels, expected mono",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != expected_rate {
        return Err(Error::invalid_data(format!(
            "{}: sample rate {} Hz, expected {} Hz (resample externally)",
            path.display(),
            spec.sample_rate,
            expected_rate
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?,
        (fmt, bits) => {
            return Err(Error::invalid_data(format!(
                "{}: unsupported WAV encoding {fmt:?}/{bits}-bit (use 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    };
    WaveClip::new(samples, spec.sample_rate)
}
