use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{AnalysisConfig, Spectrogram, SpectrogramKind, Waveform};
use crate::error::{Error, Result};

/// Periodic Hann window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

pub(crate) struct FrameAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    hop: usize,
}

impl FrameAnalyzer {
    pub(crate) fn new(cfg: &AnalysisConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(cfg.win_length);
        Self { fft, window: hann(cfg.win_length), hop: cfg.hop_length }
    }

    /// One-sided spectra of every full frame in `x`.
    pub(crate) fn frames(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let win = self.window.len();
        if x.len() < win {
            return Vec::new();
        }
        let n_frames = 1 + (x.len() - win) / self.hop;
        let n_bins = win / 2 + 1;
        let mut buf = vec![Complex64::new(0.0, 0.0); win];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        (0..n_frames)
            .map(|t| {
                let start = t * self.hop;
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = Complex64::new(x[start + j] * self.window[j], 0.0);
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                buf[..n_bins].to_vec()
            })
            .collect()
    }

    /// `|X|` or `|X|²` per frame and bin.
    pub(crate) fn magnitudes(&self, x: &[f64], power: bool) -> Array2<f64> {
        let frames = self.frames(x);
        let n_bins = self.window.len() / 2 + 1;
        let mut out = Array2::zeros((frames.len(), n_bins));
        for (t, frame) in frames.iter().enumerate() {
            for (k, c) in frame.iter().enumerate() {
                out[[t, k]] = if power { c.norm_sqr() } else { c.norm() };
            }
        }
        out
    }
}

/// Linear-magnitude spectrogram on the unpadded analysis grid.
pub fn magnitude_spectrogram(w: &Waveform, cfg: &AnalysisConfig) -> Result<Spectrogram> {
    if w.len() < cfg.win_length {
        return Err(Error::AudioTooShort { len: w.len(), needed: cfg.win_length });
    }
    let values = FrameAnalyzer::new(cfg).magnitudes(w.samples(), false);
    Ok(Spectrogram {
        values,
        frame_hop_seconds: cfg.hop_seconds(),
        kind: SpectrogramKind::LinearMagnitude,
        sample_rate: w.sample_rate(),
    })
}

fn resynth_padding(len: usize, cfg: &AnalysisConfig) -> (usize, usize) {
    let pad = cfg.win_length - cfg.hop_length;
    let body = len + 2 * pad;
    let extra = (cfg.hop_length - (body - cfg.win_length) % cfg.hop_length) % cfg.hop_length;
    (pad, body + extra)
}

/// `(frames, bins)` of the padded STFT used for masking a `len`-sample buffer.
pub fn resynth_shape(len: usize, cfg: &AnalysisConfig) -> (usize, usize) {
    let (_, padded) = resynth_padding(len, cfg);
    (1 + (padded - cfg.win_length) / cfg.hop_length, cfg.n_fft_bins())
}

/// Complex STFT on the padded resynthesis grid, invertible by weighted overlap-add.
#[derive(Debug, Clone)]
pub struct ComplexStft {
    frames: Vec<Vec<Complex64>>,
    len: usize,
    sample_rate: u32,
    cfg: AnalysisConfig,
}

impl ComplexStft {
    pub fn analyze(w: &Waveform, cfg: &AnalysisConfig) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::EmptyAudio);
        }
        let (pad, padded_len) = resynth_padding(w.len(), cfg);
        let mut padded = vec![0.0; padded_len];
        padded[pad..pad + w.len()].copy_from_slice(w.samples());
        let frames = FrameAnalyzer::new(cfg).frames(&padded);
        Ok(Self { frames, len: w.len(), sample_rate: w.sample_rate(), cfg: cfg.clone() })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames.len(), self.cfg.n_fft_bins())
    }

    /// Element-wise product with a real mask in `[0, 1]`.
    pub fn masked(&self, mask: ArrayView2<'_, f64>) -> Result<Self> {
        if mask.dim() != self.shape() {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} vs STFT {:?}",
                mask.dim(),
                self.shape()
            )));
        }
        if let Some(v) = mask.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::BadParameter(format!("mask value {v} outside [0, 1]")));
        }
        let frames = self
            .frames
            .iter()
            .zip(mask.rows())
            .map(|(frame, m)| frame.iter().zip(m.iter()).map(|(c, g)| c * g).collect())
            .collect();
        Ok(Self { frames, len: self.len, sample_rate: self.sample_rate, cfg: self.cfg.clone() })
    }

    /// Inverse STFT, `Σ w·frame / Σ w²`, trimmed back to the original length.
    pub fn synthesize(&self) -> Waveform {
        let win = self.cfg.win_length;
        let hop = self.cfg.hop_length;
        let window = hann(win);
        let ifft = FftPlanner::new().plan_fft_inverse(win);
        let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
        let (pad, padded_len) = resynth_padding(self.len, &self.cfg);
        let mut acc = vec![0.0; padded_len];
        let mut norm = vec![0.0; padded_len];
        let mut buf = vec![Complex64::new(0.0, 0.0); win];
        let scale = 1.0 / win as f64;
        for (t, frame) in self.frames.iter().enumerate() {
            buf[..frame.len()].copy_from_slice(frame);
            // rebuild the Hermitian half
            for k in frame.len()..win {
                buf[k] = frame[win - k].conj();
            }
            ifft.process_with_scratch(&mut buf, &mut scratch);
            let start = t * hop;
            for j in 0..win {
                acc[start + j] += buf[j].re * scale * window[j];
                norm[start + j] += window[j] * window[j];
            }
        }
        let samples = (pad..pad + self.len)
            .map(|i| if norm[i] > 1e-10 { acc[i] / norm[i] } else { 0.0 })
            .collect();
        Waveform { samples, sample_rate: self.sample_rate }
    }
}

/// `ISTFT(mask ⊙ STFT(w))`; the mask must have shape [`resynth_shape`].
pub fn apply_mask_resynth(w: &Waveform, mask: ArrayView2<'_, f64>, cfg: &AnalysisConfig) -> Result<Waveform> {
    Ok(ComplexStft::analyze(w, cfg)?.masked(mask)?.synthesize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    fn band_energy(w: &Waveform, lo: f64, hi: f64) -> f64 {
        // direct DFT energy oracle over the whole buffer
        let n = w.len();
        let sr = f64::from(w.sample_rate());
        let mut e = 0.0;
        let k_lo = (lo * n as f64 / sr).ceil() as usize;
        let k_hi = (hi * n as f64 / sr).floor() as usize;
        for k in k_lo..=k_hi {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, x) in w.samples().iter().enumerate() {
                let ph = -2.0 * PI * (k * i) as f64 / n as f64;
                re += x * ph.cos();
                im += x * ph.sin();
            }
            e += re * re + im * im;
        }
        e
    }

    #[test]
    fn identity_mask_reconstructs() {
        let cfg = AnalysisConfig::default();
        let mut rng = crate::seed::rng(3);
        for len in [1usize, 100, 1024, 5000, 16_001] {
            let w = Waveform::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), 16_000).unwrap();
            let (t, f) = resynth_shape(len, &cfg);
            let out = apply_mask_resynth(&w, Array2::ones((t, f)).view(), &cfg).unwrap();
            assert_eq!(out.len(), len);
            assert!(rel_l2(out.samples(), w.samples()) <= 1e-6, "len {len}");
        }
    }

    #[test]
    fn zero_mask_silences() {
        let cfg = AnalysisConfig::default();
        let w = Waveform::new((0..3000).map(|i| (i as f64 * 0.01).sin()).collect(), 16_000).unwrap();
        let (t, f) = resynth_shape(w.len(), &cfg);
        let out = apply_mask_resynth(&w, Array2::zeros((t, f)).view(), &cfg).unwrap();
        assert!(out.samples().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cfg = AnalysisConfig::default();
        let w = Waveform::silence(2000, 16_000);
        let (t, f) = resynth_shape(w.len(), &cfg);
        assert!(matches!(
            apply_mask_resynth(&w, Array2::ones((t + 1, f)).view(), &cfg),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn half_band_mask_attenuates_out_of_band_tone() {
        let cfg = AnalysisConfig::default();
        let n = 8000;
        let (f1, f2) = (1000.0, 6000.0);
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / 16_000.0;
                (2.0 * PI * f1 * t).sin() + (2.0 * PI * f2 * t).sin()
            })
            .collect();
        let w = Waveform::new(x, 16_000).unwrap();
        let (t, f) = resynth_shape(n, &cfg);
        let cutoff_bin = (4000.0 * cfg.win_length as f64 / 16_000.0) as usize;
        let mask = Array2::from_shape_fn((t, f), |(_, k)| if k < cutoff_bin { 1.0 } else { 0.0 });
        let out = apply_mask_resynth(&w, mask.view(), &cfg).unwrap();
        let before = band_energy(&w, 5900.0, 6100.0);
        let after = band_energy(&out, 5900.0, 6100.0);
        assert!(10.0 * (before / after).log10() >= 40.0);
        let kept = band_energy(&out, 900.0, 1100.0) / band_energy(&w, 900.0, 1100.0);
        assert!((kept - 1.0).abs() < 1e-3);
    }

    #[test]
    fn magnitude_frame_count() {
        let cfg = AnalysisConfig::default();
        let s = magnitude_spectrogram(&Waveform::silence(5000, 16_000), &cfg).unwrap();
        assert_eq!(s.n_frames(), 1 + (5000 - 1024) / 256);
        assert_eq!(s.n_bins(), 513);
        assert!(matches!(
            magnitude_spectrogram(&Waveform::silence(1000, 16_000), &cfg),
            Err(Error::AudioTooShort { .. })
        ));
    }
}
