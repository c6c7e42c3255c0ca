use ndarray::Array2;

use super::stft::FrameAnalyzer;
use super::{AnalysisConfig, Spectrogram, SpectrogramKind, Waveform};
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-style filterbank with unit peak gain.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels × n_fft_bins`
    weights: Array2<f64>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &AnalysisConfig) -> Self {
        let n_bins = cfg.n_fft_bins();
        let (m_lo, m_hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = f64::from(cfg.sample_rate) / cfg.win_length as f64;
        let mut weights = Array2::zeros((cfg.n_mels, n_bins));
        for m in 0..cfg.n_mels {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= c {
                    (f - lo) / (c - lo)
                } else if f > c && f < hi {
                    (hi - f) / (hi - c)
                } else {
                    0.0
                };
                weights[[m, k]] = w;
            }
        }
        Self { weights, centers_hz: edges[1..=cfg.n_mels].to_vec() }
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    /// Peak frequency of each band.
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Projects a `T × bins` power matrix onto the mel bands.
    pub fn apply(&self, power: &Array2<f64>) -> Array2<f64> {
        power.dot(&self.weights.t())
    }
}

/// Mel power spectrogram on the unpadded analysis grid.
pub fn mel_spectrogram(w: &Waveform, cfg: &AnalysisConfig) -> Result<Spectrogram> {
    if w.len() < cfg.win_length {
        return Err(Error::AudioTooShort { len: w.len(), needed: cfg.win_length });
    }
    if w.sample_rate() != cfg.sample_rate {
        return Err(Error::RateMismatch(w.sample_rate(), cfg.sample_rate));
    }
    let power = FrameAnalyzer::new(cfg).magnitudes(w.samples(), true);
    let values = MelFilterbank::new(cfg).apply(&power);
    Ok(Spectrogram { values, frame_hop_seconds: cfg.hop_seconds(), kind: SpectrogramKind::Mel, sample_rate: w.sample_rate() })
}
