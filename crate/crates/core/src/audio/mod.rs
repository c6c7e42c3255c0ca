//! Audio primitives: waveforms, power, SNR-exact mixing, STFT/mel analysis
//! and masked resynthesis.

mod mel;
mod stft;
pub mod wav;

pub use mel::{hz_to_mel, mel_to_hz, mel_spectrogram, MelFilterbank};
pub use stft::{apply_mask_resynth, magnitude_spectrogram, resynth_shape, ComplexStft};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Mono sample buffer with its sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::BadParameter("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    fn check_compatible(&self, other: &Waveform) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::RateMismatch(self.sample_rate, other.sample_rate));
        }
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch(format!(
                "waveform lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }

    /// Sample-wise sum of two equally long waveforms.
    pub fn add(&self, other: &Waveform) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            samples: self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect(),
            sample_rate: self.sample_rate,
        })
    }

    /// Adds `other` into `self` starting at sample `offset`, truncating at the end.
    pub fn add_at(&mut self, other: &Waveform, offset: usize) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::RateMismatch(self.sample_rate, other.sample_rate));
        }
        for (dst, src) in self.samples.iter_mut().skip(offset).zip(&other.samples) {
            *dst += src;
        }
        Ok(())
    }

    /// Concatenates `other` after `self`.
    pub fn concat(&self, other: &Waveform) -> Result<Self> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::RateMismatch(self.sample_rate, other.sample_rate));
        }
        let mut samples = self.samples.clone();
        samples.extend_from_slice(&other.samples);
        Ok(Self { samples, sample_rate: self.sample_rate })
    }

    /// Contiguous sub-range `[start, start + len)`.
    pub fn segment(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len() {
            return Err(Error::ShapeMismatch(format!(
                "segment {start}+{len} exceeds length {}",
                self.len()
            )));
        }
        Ok(Self {
            samples: self.samples[start..start + len].to_vec(),
            sample_rate: self.sample_rate,
        })
    }
}

/// Mean-square power `(1/L) Σ x²`.
pub fn rms_power(w: &Waveform) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let mut acc = 0.0f64;
    for &x in w.samples() {
        acc += x * x;
    }
    Ok(acc / w.len() as f64)
}

/// Signal-to-noise ratio in dB between two components.
pub fn snr_db(signal: &Waveform, noise: &Waveform) -> Result<f64> {
    let ps = rms_power(signal)?;
    let pn = rms_power(noise)?;
    if ps <= 0.0 || pn <= 0.0 {
        return Err(Error::DegeneratePower("zero-power component"));
    }
    Ok(10.0 * (ps / pn).log10())
}

/// Repeats `w` until it holds at least `len` samples, then truncates to `len`.
pub fn tile(w: &Waveform, len: usize) -> Result<Waveform> {
    if w.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let samples = w.samples().iter().copied().cycle().take(len).collect();
    Ok(Waveform { samples, sample_rate: w.sample_rate() })
}

/// Details of one SNR mix, enough to reproduce it.
#[derive(Debug, Clone)]
pub struct MixOutcome {
    pub mixture: Waveform,
    /// Gain applied to the cropped noise.
    pub gain: f64,
    /// Start of the noise crop in samples.
    pub offset: usize,
    /// The cropped, scaled noise actually added.
    pub scaled_noise: Waveform,
}

/// Gain that puts noise of power `p_noise` at `snr_db` below a signal of power `p_signal`.
pub fn snr_gain(p_signal: f64, p_noise: f64, snr_db: f64) -> f64 {
    (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// Adds `noise` to `signal` so the full-clip power ratio equals `snr_db`.
///
/// A noise buffer longer than the signal is cropped at an offset drawn from
/// `crop_seed`; a shorter one is rejected (see [`tile`]).
pub fn mix_at_snr(signal: &Waveform, noise: &Waveform, snr_db: f64, crop_seed: u64) -> Result<Waveform> {
    mix_at_snr_detailed(signal, noise, snr_db, crop_seed).map(|m| m.mixture)
}

pub fn mix_at_snr_detailed(
    signal: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    crop_seed: u64,
) -> Result<MixOutcome> {
    if signal.sample_rate() != noise.sample_rate() {
        return Err(Error::RateMismatch(signal.sample_rate(), noise.sample_rate()));
    }
    if !snr_db.is_finite() {
        return Err(Error::BadParameter(format!("snr_db must be finite, got {snr_db}")));
    }
    if noise.len() < signal.len() {
        return Err(Error::NoiseTooShort { noise: noise.len(), signal: signal.len() });
    }
    let offset = if noise.len() == signal.len() {
        0
    } else {
        seed::rng(crop_seed).random_range(0..=noise.len() - signal.len())
    };
    let cropped = noise.segment(offset, signal.len())?;
    let ps = rms_power(signal)?;
    let pn = rms_power(&cropped)?;
    if ps <= 0.0 {
        return Err(Error::DegeneratePower("signal has zero power"));
    }
    if pn <= 0.0 {
        return Err(Error::DegeneratePower("noise has zero power"));
    }
    let gain = snr_gain(ps, pn, snr_db);
    let scaled_noise = cropped.scaled(gain);
    let mixture = signal.add(&scaled_noise)?;
    Ok(MixOutcome { mixture, gain, offset, scaled_noise })
}

/// Which magnitude a [`Spectrogram`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrogramKind {
    LinearMagnitude,
    Mel,
}

/// `T × F` non-negative matrix with frame timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub values: Array2<f64>,
    pub frame_hop_seconds: f64,
    pub kind: SpectrogramKind,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.values.ncols()
    }
}

/// STFT and mel analysis settings.
///
/// Analysis frames are not padded: a buffer of `len` samples yields
/// `1 + (len - win_length) / hop_length` frames. Resynthesis pads both ends
/// by `win_length - hop_length` zeros, see [`resynth_shape`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub sample_rate: u32,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { sample_rate: 16_000, win_length: 1024, hop_length: 256, n_mels: 64, f_min: 0.0, f_max: 8_000.0 }
    }
}

impl AnalysisConfig {
    pub fn n_fft_bins(&self) -> usize {
        self.win_length / 2 + 1
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_length as f64 / f64::from(self.sample_rate)
    }

    /// Analysis frame count for a buffer of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        if len < self.win_length {
            0
        } else {
            1 + (len - self.win_length) / self.hop_length
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.sample_rate == 0 {
            out.push("sample_rate must be positive".to_string());
        }
        if self.win_length < 4 || !self.win_length.is_multiple_of(2) {
            out.push("win_length must be an even number >= 4".to_string());
        }
        if self.hop_length == 0 || self.hop_length > self.win_length / 2 {
            out.push("hop_length must be in 1..=win_length/2".to_string());
        }
        if self.n_mels == 0 {
            out.push("n_mels must be positive".to_string());
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= f64::from(self.sample_rate) / 2.0) {
            out.push("need 0 <= f_min < f_max <= sample_rate/2".to_string());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = crate::seed::rng(seed);
        Waveform::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), 16_000).unwrap()
    }

    #[test]
    fn rms_of_zeros_and_sine() {
        assert_eq!(rms_power(&Waveform::silence(77, 16_000)).unwrap(), 0.0);
        let n = 1600;
        let sine: Vec<f64> =
            (0..n).map(|i| (2.0 * std::f64::consts::PI * 10.0 * i as f64 / n as f64).sin()).collect();
        let p = rms_power(&Waveform::new(sine, 16_000).unwrap()).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rms_matches_direct_sum() {
        let w = noise(1000, 42);
        let mut oracle = 0.0;
        for i in 0..w.len() {
            oracle += w.samples()[i].powi(2);
        }
        oracle /= 1000.0;
        assert!((rms_power(&w).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn rms_rejects_empty() {
        assert!(matches!(rms_power(&Waveform::silence(0, 8000)), Err(Error::EmptyAudio)));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(Waveform::new(vec![0.0, f64::NAN], 16_000), Err(Error::NonFinite(1))));
    }

    #[test]
    fn gain_closed_forms() {
        assert!((snr_gain(0.3, 0.3, 0.0) - 1.0).abs() < 1e-15);
        assert!((snr_gain(0.3, 0.3, 20.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn mix_hits_requested_snr() {
        let s = noise(4000, 1);
        let n = noise(6000, 2);
        let out = mix_at_snr_detailed(&s, &n, -5.0, 9).unwrap();
        let measured = snr_db(&s, &out.scaled_noise).unwrap();
        assert!((measured + 5.0).abs() < 1e-9);
        // the residual is exactly the scaled crop
        let crop = n.segment(out.offset, s.len()).unwrap();
        for i in 0..s.len() {
            assert!((out.mixture.samples()[i] - s.samples()[i] - out.gain * crop.samples()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn mix_errors() {
        let s = noise(100, 1);
        assert!(matches!(
            mix_at_snr(&Waveform::silence(100, 16_000), &noise(100, 2), 0.0, 0),
            Err(Error::DegeneratePower(_))
        ));
        assert!(matches!(
            mix_at_snr(&s, &Waveform::silence(100, 16_000), 0.0, 0),
            Err(Error::DegeneratePower(_))
        ));
        let other_rate = Waveform::new(vec![0.5; 100], 8000).unwrap();
        assert!(matches!(mix_at_snr(&s, &other_rate, 0.0, 0), Err(Error::RateMismatch(..))));
        assert!(matches!(mix_at_snr(&s, &noise(50, 3), 0.0, 0), Err(Error::NoiseTooShort { .. })));
    }

    #[test]
    fn tile_repeats() {
        let w = Waveform::new(vec![1.0, 2.0, 3.0], 10).unwrap();
        assert_eq!(tile(&w, 7).unwrap().samples(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]);
    }

    #[test]
    fn crop_is_seeded() {
        let s = noise(100, 1);
        let n = noise(1000, 2);
        let a = mix_at_snr_detailed(&s, &n, 3.0, 5).unwrap();
        let b = mix_at_snr_detailed(&s, &n, 3.0, 5).unwrap();
        assert_eq!(a.offset, b.offset);
        assert_eq!(a.mixture, b.mixture);
    }
}
