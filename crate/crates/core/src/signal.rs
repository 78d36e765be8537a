//! Audio front end: WAV loading, 24-band log-Mel frames and SpecAugment-style
//! masking.
//!
//! Everything here runs at [`SAMPLE_RATE`]; audio at other rates is linearly
//! resampled when loaded.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_MELS: usize = 24;
pub const WINDOW_MS: u32 = 32;
pub const FRAME_SHIFT_MS: u32 = 10;
pub const WINDOW_SAMPLES: usize = (SAMPLE_RATE * WINDOW_MS / 1000) as usize;
pub const HOP_SAMPLES: usize = (SAMPLE_RATE * FRAME_SHIFT_MS / 1000) as usize;
pub const MEL_FMIN: f64 = 0.0;
pub const MEL_FMAX: f64 = 8000.0;
/// Floor added before the log so silence maps to `ln(LOG_EPS)`.
pub const LOG_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("waveform has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Format(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Linear-interpolation resampling to `target` Hz.
    pub fn resample(&self, target: u32) -> Waveform {
        if target == self.sample_rate {
            return self.clone();
        }
        let ratio = self.sample_rate as f64 / target as f64;
        let n_out = ((self.samples.len() as f64) / ratio).floor().max(1.0) as usize;
        let last = self.samples.len() - 1;
        let samples = (0..n_out)
            .map(|i| {
                let pos = i as f64 * ratio;
                let lo = (pos.floor() as usize).min(last);
                let hi = (lo + 1).min(last);
                let frac = pos - lo as f64;
                self.samples[lo] * (1.0 - frac) + self.samples[hi] * frac
            })
            .collect();
        Waveform {
            samples,
            sample_rate: target,
        }
    }
}

/// Reads a RIFF/PCM WAV file (integer PCM or 32-bit float), downmixes to
/// mono and resamples to 16 kHz.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_wav(std::io::BufReader::new(file))
}

pub fn read_wav<R: Read>(reader: R) -> Result<Waveform> {
    let reader = hound::WavReader::new(reader).map_err(|e| Error::Format(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format("zero channels".into()));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::Format(format!(
                    "unsupported float width {}",
                    spec.bits_per_sample
                )));
            }
            reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(e.to_string()))?
        }
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(e.to_string()))?
        }
    };
    if interleaved.is_empty() {
        return Err(Error::EmptyInput("WAV file contains no samples".into()));
    }
    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(Waveform::new(mono, spec.sample_rate)?.resample(SAMPLE_RATE))
}

/// Writes a mono 16-bit PCM WAV file.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| Error::Format(e.to_string()))?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(|e| Error::Format(e.to_string()))?;
    }
    writer.finalize().map_err(|e| Error::Format(e.to_string()))
}

/// T×24 log-Mel filterbank energies at a 10 ms shift.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFrames {
    pub values: Array2<f64>,
}

impl MelFrames {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.ncols() != N_MELS {
            return Err(Error::Dimension(format!(
                "expected {N_MELS} Mel bands, got {}",
                values.ncols()
            )));
        }
        if values.nrows() == 0 {
            return Err(Error::EmptyInput("no frames".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite Mel value".into()));
        }
        Ok(Self { values })
    }

    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn mean(&self) -> f64 {
        self.values.mean().unwrap_or(0.0)
    }

    /// Per-utterance mean/variance normalization over all entries. A single
    /// scalar mean and deviation are used so relative band levels survive.
    pub fn normalized(&self) -> MelFrames {
        let mean = self.mean();
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / self.values.len() as f64;
        let std = var.sqrt().max(1e-8);
        MelFrames {
            values: self.values.mapv(|v| (v - mean) / std),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (0..N_MELS).map(|i| format!("mel_{i}")).collect();
        w.write_record(&header)?;
        for row in self.values.rows() {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }
}

/// Expected frame count for `n` samples: `floor((n - W) / H) + 1`.
pub fn frame_count(n: usize) -> Option<usize> {
    (n >= WINDOW_SAMPLES).then(|| (n - WINDOW_SAMPLES) / HOP_SAMPLES + 1)
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular Mel filters over the positive FFT bins, shape `N_MELS × (n_fft/2+1)`.
pub fn mel_filterbank(n_fft: usize, sample_rate: u32) -> Array2<f64> {
    let n_bins = n_fft / 2 + 1;
    let lo = hz_to_mel(MEL_FMIN);
    let hi = hz_to_mel(MEL_FMAX.min(sample_rate as f64 / 2.0));
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut fb = Array2::zeros((N_MELS, n_bins));
    for m in 0..N_MELS {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f >= left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f <= right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

struct MelAnalyzer {
    window: Vec<f64>,
    filters: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelAnalyzer {
    fn new() -> Self {
        // periodic Hann
        let window = (0..WINDOW_SAMPLES)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW_SAMPLES as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(WINDOW_SAMPLES);
        Self {
            window,
            filters: mel_filterbank(WINDOW_SAMPLES, SAMPLE_RATE),
            fft,
        }
    }

    fn frame(&self, chunk: &[f64], out: &mut [f64]) {
        let mut buf: Vec<Complex<f64>> = chunk
            .iter()
            .zip(&self.window)
            .map(|(s, w)| Complex::new(s * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        let n_bins = WINDOW_SAMPLES / 2 + 1;
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        for (m, o) in out.iter_mut().enumerate() {
            let e: f64 = self.filters.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
            *o = (e + LOG_EPS).ln();
        }
    }
}

/// Log-Mel spectrogram with a 32 ms Hann window and 10 ms shift. The
/// waveform mean is removed first.
pub fn mel_spectrogram(w: &Waveform) -> Result<MelFrames> {
    let w = if w.sample_rate == SAMPLE_RATE {
        std::borrow::Cow::Borrowed(w)
    } else {
        std::borrow::Cow::Owned(w.resample(SAMPLE_RATE))
    };
    let n = w.samples.len();
    let t = frame_count(n).ok_or_else(|| {
        Error::TooShort(format!(
            "{n} samples is shorter than one {WINDOW_SAMPLES}-sample window"
        ))
    })?;
    let dc = w.samples.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = w.samples.iter().map(|s| s - dc).collect();
    let analyzer = MelAnalyzer::new();
    let mut values = Array2::zeros((t, N_MELS));
    for (i, mut row) in values.rows_mut().into_iter().enumerate() {
        let start = i * HOP_SAMPLES;
        analyzer.frame(
            &centered[start..start + WINDOW_SAMPLES],
            row.as_slice_mut().expect("standard layout"),
        );
    }
    MelFrames::new(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub max_freq_masks: usize,
    pub max_freq_width: usize,
    pub max_time_masks: usize,
    pub max_time_width: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_freq_masks: 2,
            max_freq_width: 4,
            max_time_masks: 2,
            max_time_width: 20,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Frequency and time masking. Mask counts are drawn uniformly from
/// `0..=max_*_masks` and widths from `0..=max_*_width` (clipped to the axis).
/// Masked cells take the utterance mean.
pub fn spec_augment(m: &MelFrames, cfg: &AugmentConfig) -> MelFrames {
    let mut out = m.clone();
    let fill = m.mean();
    let (t, f) = m.values.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let n_freq = rng.random_range(0..=cfg.max_freq_masks);
    for _ in 0..n_freq {
        let width = rng.random_range(0..=cfg.max_freq_width.min(f));
        let start = rng.random_range(0..=f - width);
        mask_bands(&mut out, start, width, fill);
    }
    let n_time = rng.random_range(0..=cfg.max_time_masks);
    for _ in 0..n_time {
        let width = rng.random_range(0..=cfg.max_time_width.min(t));
        let start = rng.random_range(0..=t - width);
        mask_frames(&mut out, start, width, fill);
    }
    out
}

pub(crate) fn mask_bands(m: &mut MelFrames, start: usize, width: usize, fill: f64) {
    m.values.slice_mut(ndarray::s![.., start..start + width]).fill(fill);
}

pub(crate) fn mask_frames(m: &mut MelFrames, start: usize, width: usize, fill: f64) {
    m.values.slice_mut(ndarray::s![start..start + width, ..]).fill(fill);
}
