//! Waveform IO, log-Mel features and the windowed audio-to-node converter.

use std::path::Path;
use std::sync::Arc;

use hop_tensor::Tensor;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{HopError, Result};

/// Mono audio with samples nominally in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(HopError::param("waveform", "sample rate must be positive"));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Linear-interpolation resampling to another rate.
    pub fn resampled(&self, sample_rate: u32) -> Result<Waveform> {
        if sample_rate == self.sample_rate {
            return Ok(self.clone());
        }
        let n = ((self.samples.len() as f64) * sample_rate as f64 / self.sample_rate as f64).round()
            as usize;
        Waveform::new(resample_linear(&self.samples, n.max(1)), sample_rate)
    }

    /// Samples covering `[start, start + duration)` seconds, zero-padded past
    /// the end.
    pub fn segment(&self, start: f64, samples: usize) -> Waveform {
        let first = (start * self.sample_rate as f64).round() as usize;
        let data = (first..first + samples)
            .map(|i| self.samples.get(i).copied().unwrap_or(0.0))
            .collect();
        Waveform {
            samples: data,
            sample_rate: self.sample_rate,
        }
    }
}

/// Reads a RIFF/PCM16 file. Stereo input is averaged to mono.
pub fn load_waveform(path: &Path) -> Result<Waveform> {
    if !path.exists() {
        return Err(HopError::MissingFile(path.to_path_buf()));
    }
    let unsupported = |detail: String| HopError::UnsupportedEncoding {
        path: path.to_path_buf(),
        detail,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => HopError::io(path, io),
        other => unsupported(other.to_string()),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(unsupported(format!(
            "{:?} with {} bits per sample; only 16-bit PCM is read",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if !(1..=2).contains(&spec.channels) {
        return Err(unsupported(format!("{} channels", spec.channels)));
    }
    let raw: Vec<i16> = reader
        .samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| unsupported(e.to_string()))?;
    let channels = spec.channels as usize;
    let samples: Vec<f64> = raw
        .chunks(channels)
        .map(|frame| frame.iter().map(|&s| s as f64 / 32768.0).sum::<f64>() / channels as f64)
        .collect();
    if samples.is_empty() {
        return Err(HopError::EmptyAudio(path.to_path_buf()));
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Like [`load_waveform`], resampled to `sample_rate`.
pub fn load_waveform_at(path: &Path, sample_rate: u32) -> Result<Waveform> {
    load_waveform(path)?.resampled(sample_rate)
}

/// Writes mono PCM16; samples are clipped to [-1, 1].
pub fn save_waveform(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => HopError::io(path, io),
        other => HopError::io(path, std::io::Error::other(other.to_string())),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &w.samples {
        writer.write_sample(quantize_i16(s)).map_err(wrap)?;
    }
    writer.finalize().map_err(wrap)
}

/// Uses the same 1/32768 scale as [`load_waveform`], so values of the form
/// `k / 32768` survive a save and load unchanged.
pub fn quantize_i16(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Resamples `x` to `n` points by linear interpolation; the first and last
/// samples are kept exactly.
pub fn resample_linear(x: &[f64], n: usize) -> Vec<f64> {
    if x.is_empty() || n == 0 {
        return Vec::new();
    }
    if n == 1 || x.len() == 1 {
        return vec![x[0]; n];
    }
    let scale = (x.len() - 1) as f64 / (n - 1) as f64;
    (0..n)
        .map(|i| {
            if i == n - 1 {
                return x[x.len() - 1];
            }
            let pos = i as f64 * scale;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            if lo + 1 >= x.len() {
                x[x.len() - 1]
            } else {
                x[lo] * (1.0 - frac) + x[lo + 1] * frac
            }
        })
        .collect()
}

/// Interpolation weights as an `n × len` matrix `R` so that `R · x` equals
/// [`resample_linear`] of every column of `x`.
pub fn resample_matrix(len: usize, n: usize) -> Tensor {
    let mut data = vec![0.0; n * len];
    if len == 1 || n == 1 {
        for i in 0..n {
            data[i * len] = 1.0;
        }
    } else {
        let scale = (len - 1) as f64 / (n - 1) as f64;
        for i in 0..n {
            let pos = if i == n - 1 {
                (len - 1) as f64
            } else {
                i as f64 * scale
            };
            let lo = (pos.floor() as usize).min(len - 1);
            let frac = pos - lo as f64;
            data[i * len + lo] += 1.0 - frac;
            if frac > 0.0 {
                data[i * len + lo + 1] += frac;
            }
        }
    }
    Tensor::new([n, len], data).expect("positive extents")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    /// Upper band edge; `None` means Nyquist.
    pub f_max: Option<f64>,
    pub floor: f64,
}

impl MelConfig {
    /// 16 kHz, 512-point frames and a hop of `floor(sr / 15)` so a window of
    /// 34 pose frames at 15 FPS gives 34 Mel frames.
    pub fn full() -> Self {
        MelConfig {
            sample_rate: 16_000,
            n_fft: 512,
            hop: 16_000 / 15,
            n_mels: 128,
            f_min: 0.0,
            f_max: None,
            floor: 1e-10,
        }
    }

    pub fn f_max(&self) -> f64 {
        self.f_max.unwrap_or(self.sample_rate as f64 / 2.0)
    }

    pub fn frame_count(&self, samples: usize) -> Option<usize> {
        (samples >= self.n_fft).then(|| (samples - self.n_fft) / self.hop + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(HopError::param("mel_spectrogram", msg));
        if self.sample_rate == 0 || self.n_fft < 2 || self.hop == 0 {
            return bad("sample rate, window and hop must be positive");
        }
        if self.n_mels == 0 {
            return bad("need at least one mel band");
        }
        if !(self.f_min >= 0.0
            && self.f_min < self.f_max()
            && self.f_max() <= self.sample_rate as f64 / 2.0)
        {
            return bad("band edges must satisfy 0 <= f_min < f_max <= Nyquist");
        }
        if self.floor <= 0.0 {
            return bad("log floor must be positive");
        }
        Ok(())
    }
}

/// Log-Mel energies, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFrames {
    pub frames: Tensor,
    pub n_fft: usize,
    pub hop: usize,
}

impl MelFrames {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn num_bands(&self) -> usize {
        self.frames.shape()[1]
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// The `n_mels + 2` band edges in Hz, equally spaced on the mel scale.
fn band_edges(cfg: &MelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max()));
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Centre frequency of every band in Hz.
pub fn mel_center_frequencies(cfg: &MelConfig) -> Vec<f64> {
    let edges = band_edges(cfg);
    edges[1..=cfg.n_mels].to_vec()
}

/// Unnormalised triangular filters, `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let edges = band_edges(cfg);
    let bins = cfg.n_fft / 2 + 1;
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reusable STFT and filterbank state for one configuration.
pub struct MelExtractor {
    cfg: MelConfig,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(MelExtractor {
            window: periodic_hann(cfg.n_fft),
            filters: mel_filterbank(&cfg),
            fft,
            cfg,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// Power spectrum → Mel filterbank → `ln(max(energy, floor))`.
    pub fn compute(&self, w: &Waveform) -> Result<MelFrames> {
        let cfg = &self.cfg;
        if w.sample_rate != cfg.sample_rate {
            return Err(HopError::param(
                "mel_spectrogram",
                format!(
                    "waveform is {} Hz but the config expects {} Hz",
                    w.sample_rate, cfg.sample_rate
                ),
            ));
        }
        let frames = cfg.frame_count(w.len()).ok_or_else(|| {
            HopError::param(
                "mel_spectrogram",
                format!(
                    "clip of {} samples is shorter than one {}-sample window",
                    w.len(),
                    cfg.n_fft
                ),
            )
        })?;
        let bins = cfg.n_fft / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut power = vec![0.0; bins];
        let mut out = Vec::with_capacity(frames * cfg.n_mels);
        for f in 0..frames {
            let start = f * cfg.hop;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(w.samples[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for filter in &self.filters {
                let e: f64 = filter.iter().zip(&power).map(|(a, b)| a * b).sum();
                out.push(e.max(cfg.floor).ln());
            }
        }
        Ok(MelFrames {
            frames: Tensor::new([frames, cfg.n_mels], out)?,
            n_fft: cfg.n_fft,
            hop: cfg.hop,
        })
    }
}

pub fn mel_spectrogram(w: &Waveform, cfg: &MelConfig) -> Result<MelFrames> {
    MelExtractor::new(cfg.clone())?.compute(w)
}

/// Fixed-length raw-sample windows taken every `stride` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioWindows {
    /// `W × window_len`
    pub windows: Tensor,
    pub window_len: usize,
    pub stride: usize,
}

impl AudioWindows {
    pub fn count(&self) -> usize {
        self.windows.shape()[0]
    }
}

pub fn window_count(samples: usize, window_len: usize, stride: usize) -> Option<usize> {
    (window_len > 0 && stride > 0 && window_len <= samples)
        .then(|| (samples - window_len) / stride + 1)
}

/// Windows start at 0, stride, 2·stride, …; a trailing remainder is dropped.
pub fn window_audio(w: &Waveform, window_len: usize, stride: usize) -> Result<AudioWindows> {
    let count = window_count(w.len(), window_len, stride).ok_or_else(|| {
        HopError::param(
            "window_audio",
            format!(
                "cannot cut {}-sample windows with stride {} from {} samples",
                window_len,
                stride,
                w.len()
            ),
        )
    })?;
    let data: Vec<f64> = (0..count)
        .flat_map(|i| {
            w.samples[i * stride..i * stride + window_len]
                .iter()
                .copied()
        })
        .collect();
    Ok(AudioWindows {
        windows: Tensor::new([count, window_len], data)?,
        window_len,
        stride,
    })
}

/// Resamples every window to `joints · feats` values and lays them out as a
/// `W × joints × feats` tensor, one equal slice per joint node.
pub fn audio_matrix_converter(aw: &AudioWindows, joints: usize, feats: usize) -> Result<Tensor> {
    let n = joints * feats;
    if n == 0 {
        return Err(HopError::param(
            "audio_matrix_converter",
            "joints and features must be positive",
        ));
    }
    let data: Vec<f64> = (0..aw.count())
        .flat_map(|i| resample_linear(aw.windows.row(i), n))
        .collect();
    Ok(Tensor::new([aw.count(), joints, feats], data)?)
}
