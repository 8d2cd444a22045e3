//! Beat consistency between kinematic beats (angular-speed minima) and
//! audio onsets (log-Mel spectral-flux peaks).

use serde::{Deserialize, Serialize};

use crate::audio::{MelConfig, MelExtractor, Waveform};
use crate::error::{HopError, Result};
use crate::pose::PoseSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeatConfig {
    /// Gaussian kernel width in seconds.
    pub sigma: f64,
    /// Onset analysis window and hop, seconds.
    pub window: f64,
    pub hop: f64,
    pub n_mels: usize,
    /// Log compression `ln(1 + γ·e)` applied before differencing.
    pub compression: f64,
    /// Peaks must exceed mean + `threshold`·std of the onset envelope.
    pub threshold: f64,
    /// Minimum spacing of audio beats, seconds.
    pub min_gap: f64,
    /// Width of the centred running mean of angular speed, seconds.
    pub running_mean: f64,
}

impl Default for BeatConfig {
    fn default() -> Self {
        BeatConfig {
            sigma: 0.1,
            window: 0.010,
            hop: 0.002,
            n_mels: 16,
            compression: 100.0,
            threshold: 1.5,
            min_gap: 0.05,
            running_mean: 1.0,
        }
    }
}

impl BeatConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma > 0.0
            && self.window > 0.0
            && self.hop > 0.0
            && self.n_mels > 0
            && self.compression > 0.0
            && self.min_gap >= 0.0
            && self.running_mean > 0.0
            && self.threshold.is_finite();
        if ok {
            Ok(())
        } else {
            Err(HopError::param(
                "beat_consistency",
                "beat settings must be positive and finite",
            ))
        }
    }
}

fn angle(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2])
        .sqrt()
        .atan2(dot)
}

/// Mean joint angular speed (rad/s) at frames `1..T−1` by central
/// differences; entry `k` belongs to frame `k + 1`.
pub fn angular_speed(poses: &PoseSequence) -> Vec<f64> {
    let t = poses.num_frames();
    if t < 3 {
        return Vec::new();
    }
    let j = poses.num_joints().max(1) as f64;
    (1..t - 1)
        .map(|f| {
            let sum: f64 = poses.frames[f - 1]
                .iter()
                .zip(&poses.frames[f + 1])
                .map(|(&a, &b)| angle(a, b))
                .sum();
            sum / j * poses.fps / 2.0
        })
        .collect()
}

/// Times (s, from the first frame) of strict angular-speed minima lying
/// below the centred running mean.
pub fn kinematic_beats(poses: &PoseSequence, cfg: &BeatConfig) -> Vec<f64> {
    let speed = angular_speed(poses);
    let n = speed.len();
    let half = ((cfg.running_mean * poses.fps / 2.0).round() as usize).max(1);
    let mut beats = Vec::new();
    for k in 1..n.saturating_sub(1) {
        if !(speed[k] < speed[k - 1] && speed[k] < speed[k + 1]) {
            continue;
        }
        let (lo, hi) = (k.saturating_sub(half), (k + half + 1).min(n));
        let mean = speed[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        if speed[k] < mean {
            beats.push((k + 1) as f64 / poses.fps);
        }
    }
    beats
}

/// Onset times (s, from the first sample) at frame centres.
pub fn audio_beats(audio: &Waveform, cfg: &BeatConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let sr = audio.sample_rate as f64;
    let n_fft = ((cfg.window * sr).round() as usize).max(2);
    let hop = ((cfg.hop * sr).round() as usize).max(1);
    let mel = MelExtractor::new(MelConfig {
        sample_rate: audio.sample_rate,
        n_fft,
        hop,
        n_mels: cfg.n_mels,
        f_min: 0.0,
        f_max: None,
        floor: 1e-300,
    })?;
    if audio.len() < n_fft {
        return Ok(Vec::new());
    }
    let frames = mel.compute(audio)?.frames;
    let (rows, bands) = (frames.shape()[0], frames.shape()[1]);
    if rows < 3 {
        return Ok(Vec::new());
    }
    let psi: Vec<f64> = frames
        .data()
        .iter()
        .map(|&l| (cfg.compression * l.exp()).ln_1p())
        .collect();
    let mut flux = vec![0.0; rows];
    for i in 1..rows {
        flux[i] = (0..bands)
            .map(|m| (psi[i * bands + m] - psi[(i - 1) * bands + m]).max(0.0))
            .sum();
    }
    let mean = flux.iter().sum::<f64>() / rows as f64;
    let std = (flux.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / rows as f64).sqrt();
    let level = mean + cfg.threshold * std;
    let mut peaks: Vec<usize> = (1..rows)
        .filter(|&i| {
            let next = if i + 1 < rows {
                flux[i + 1]
            } else {
                f64::NEG_INFINITY
            };
            flux[i] > level && flux[i] > flux[i - 1] && flux[i] >= next
        })
        .collect();
    peaks.sort_by(|&a, &b| flux[b].total_cmp(&flux[a]).then(a.cmp(&b)));
    let time = |i: usize| (i * hop) as f64 / sr + n_fft as f64 / (2.0 * sr);
    let mut kept: Vec<f64> = Vec::new();
    for i in peaks {
        let t = time(i);
        if kept.iter().all(|&k| (k - t).abs() >= cfg.min_gap) {
            kept.push(t);
        }
    }
    kept.sort_by(f64::total_cmp);
    Ok(kept)
}

/// Mean over kinematic beats of `exp(−min_a (t_b − t_a)² / 2σ²)`; zero when
/// there are no kinematic beats.
pub fn beat_consistency(audio: &Waveform, poses: &PoseSequence, cfg: &BeatConfig) -> Result<f64> {
    beat_consistency_at(audio, 0.0, poses, 0.0, cfg)
}

/// As [`beat_consistency`] with the audio and the first pose frame placed
/// at the given absolute times.
pub fn beat_consistency_at(
    audio: &Waveform,
    audio_origin: f64,
    poses: &PoseSequence,
    pose_origin: f64,
    cfg: &BeatConfig,
) -> Result<f64> {
    cfg.validate()?;
    let kin = kinematic_beats(poses, cfg);
    if kin.is_empty() {
        return Ok(0.0);
    }
    let aud = audio_beats(audio, cfg)?;
    let two_s2 = 2.0 * cfg.sigma * cfg.sigma;
    let total: f64 = kin
        .iter()
        .map(|&b| {
            let tb = b + pose_origin;
            aud.iter()
                .map(|&a| {
                    let d = tb - (a + audio_origin);
                    (-d * d / two_s2).exp()
                })
                .fold(0.0, f64::max)
        })
        .sum();
    Ok((total / kin.len() as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Skeleton;

    #[test]
    fn constant_pose_scores_zero() {
        let s = Skeleton::ted();
        let poses = PoseSequence {
            fps: 15.0,
            joints: s.names.clone(),
            frames: vec![s.rest.clone(); 34],
        };
        let audio = Waveform::new(vec![0.1; 18_134], 8000).unwrap();
        assert!(kinematic_beats(&poses, &BeatConfig::default()).is_empty());
        assert_eq!(
            beat_consistency(&audio, &poses, &BeatConfig::default()).unwrap(),
            0.0
        );
    }

    #[test]
    fn single_click_is_found() {
        let mut x = vec![0.0; 8000];
        for (k, s) in x.iter_mut().skip(4000).take(40).enumerate() {
            *s = 0.8 * (-(k as f64) / 8.0).exp();
        }
        let beats = audio_beats(&Waveform::new(x, 8000).unwrap(), &BeatConfig::default()).unwrap();
        assert_eq!(beats.len(), 1);
        assert!((beats[0] - 0.5).abs() < 0.01, "{beats:?}");
    }
}
