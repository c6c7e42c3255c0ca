//! Detection and separation model contracts, reference implementations and
//! the external backend client.

pub mod backend;
pub mod loss;
pub mod reference;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use ndarray::{Array2, Axis};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use backend::{BackendPool, BackendRequest, BackendResponse};
pub use loss::{bce_loss, ema_update, BCE_EPS};
pub use reference::{calibrate_reference_sed, refine_reference_sed, CalibrationClip, CalibrationParams, ReferenceSed};

use crate::audio::{AnalysisConfig, ComplexStft, Spectrogram, SpectrogramKind, Waveform};
use crate::error::{Error, Result};
use crate::events::{ClipPrediction, FrameGrid};
use crate::synth::Prototypes;

/// Environment variables naming external model endpoints.
pub const SED_BACKEND_ENV: &str = "SED_BACKEND";
pub const LASS_BACKEND_ENV: &str = "LASS_BACKEND";

/// Version tag written into model files.
pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    #[default]
    Max,
    /// `sum p^2 / sum p` over frames.
    LinearSoftmax,
    /// The detector's own calibrated clip head; max pooling without one.
    ClipHead,
}

impl Pooling {
    pub fn pool(self, probs: &Array2<f64>) -> Vec<f64> {
        probs
            .columns()
            .into_iter()
            .map(|col| match self {
                Pooling::Max | Pooling::ClipHead => col.iter().copied().fold(0.0, f64::max),
                Pooling::LinearSoftmax => {
                    let s: f64 = col.sum();
                    if s > 0.0 {
                        col.dot(&col) / s
                    } else {
                        0.0
                    }
                }
            })
            .collect()
    }
}

/// Lazily opened connection pool to an external model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalModel {
    pub address: String,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(skip)]
    pool: OnceLock<Arc<BackendPool>>,
}

fn default_pool_size() -> usize {
    4
}

impl PartialEq for ExternalModel {
    fn eq(&self, other: &Self) -> bool {
        self.address == other.address && self.pool_size == other.pool_size
    }
}

impl ExternalModel {
    pub fn new(address: impl Into<String>, pool_size: usize) -> Self {
        Self { address: address.into(), pool_size, pool: OnceLock::new() }
    }

    pub fn pool(&self) -> &BackendPool {
        self.pool.get_or_init(|| Arc::new(BackendPool::new(self.address.clone(), self.pool_size)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SedKind {
    ReferenceTemplate(ReferenceSed),
    ExternalBackend(ExternalModel),
}

/// A sound event detector over a fixed list of target classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SedModelHandle {
    pub class_names: Vec<String>,
    #[serde(default)]
    pub pooling: Pooling,
    pub model: SedKind,
}

#[derive(Serialize, Deserialize)]
struct ModelFile<T> {
    version: u32,
    model: T,
}

fn save_model<T: Serialize>(model: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&ModelFile { version: MODEL_FILE_VERSION, model })?)?;
    Ok(())
}

fn load_model<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f: ModelFile<T> = serde_json::from_str(&fs::read_to_string(path)?)?;
    if f.version != MODEL_FILE_VERSION {
        return Err(Error::Format(format!("model file version {} (expected {MODEL_FILE_VERSION})", f.version)));
    }
    Ok(f.model)
}

impl SedModelHandle {
    pub fn reference(class_names: Vec<String>, model: ReferenceSed) -> Result<Self> {
        if model.n_classes() != class_names.len() {
            return Err(Error::ShapeMismatch(format!("{} templates for {} classes", model.n_classes(), class_names.len())));
        }
        Ok(Self { class_names, pooling: Pooling::Max, model: SedKind::ReferenceTemplate(model) })
    }

    pub fn external(class_names: Vec<String>, address: impl Into<String>, pool_size: usize) -> Self {
        Self { class_names, pooling: Pooling::Max, model: SedKind::ExternalBackend(ExternalModel::new(address, pool_size)) }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_model(self, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_model(path.as_ref())
    }

    pub fn as_reference(&self) -> Option<&ReferenceSed> {
        match &self.model {
            SedKind::ReferenceTemplate(r) => Some(r),
            SedKind::ExternalBackend(_) => None,
        }
    }
}

/// Frame-wise and clip-wise predictions for one clip.
pub fn sed_infer(m: &SedModelHandle, x: &Spectrogram, clip_id: &str, clip_duration: f64) -> Result<(FrameGrid, ClipPrediction)> {
    let n = m.class_names.len();
    let (probs, clip) = match &m.model {
        SedKind::ReferenceTemplate(r) => {
            let (p, head) = r.frame_and_clip_probs(x)?;
            let c = match (m.pooling, head) {
                (Pooling::ClipHead, Some(h)) => h,
                _ => m.pooling.pool(&p),
            };
            (p, c)
        }
        SedKind::ExternalBackend(ext) => {
            let pool = ext.pool();
            let mel = x.values.rows().into_iter().map(|r| r.to_vec()).collect();
            let req = BackendRequest::Sed { id: pool.next_id(), mel, hop_seconds: x.frame_hop_seconds };
            let bad = |msg: String| Error::Backend { clip_id: clip_id.to_string(), msg };
            let BackendResponse::Sed { framewise, clipwise, .. } = pool.call(clip_id, &req)? else {
                return Err(bad("expected a sed reply".into()));
            };
            if framewise.len() != x.n_frames() || framewise.iter().any(|r| r.len() != n) || clipwise.len() != n {
                return Err(bad(format!("reply shape does not match {} frames × {n} classes", x.n_frames())));
            }
            let p = Array2::from_shape_vec((x.n_frames(), n), framewise.concat()).map_err(|e| bad(e.to_string()))?;
            if p.iter().chain(&clipwise).any(|v| !(0.0..=1.0).contains(v)) {
                return Err(bad("probabilities outside [0, 1]".into()));
            }
            (p, clipwise)
        }
    };
    Ok((
        FrameGrid { clip_id: clip_id.to_string(), probs, frame_hop_seconds: x.frame_hop_seconds, clip_duration },
        ClipPrediction { clip_id: clip_id.to_string(), probs: clip },
    ))
}

/// Per-class soft masks over linear STFT bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLass {
    pub analysis: AnalysisConfig,
    pub masks: BTreeMap<String, Vec<f64>>,
}

/// Pass band `[lo, hi]` with raised-cosine skirts of `skirt_hz` on each side.
pub fn band_mask(lo: f64, hi: f64, skirt_hz: f64, cfg: &AnalysisConfig) -> Vec<f64> {
    let bin_hz = f64::from(cfg.sample_rate) / cfg.win_length as f64;
    (0..cfg.n_fft_bins())
        .map(|k| {
            let f = k as f64 * bin_hz;
            let d = if f < lo { lo - f } else if f > hi { f - hi } else { 0.0 };
            if d >= skirt_hz {
                0.0
            } else {
                0.5 * (1.0 + (std::f64::consts::PI * d / skirt_hz).cos())
            }
        })
        .collect()
}

impl ReferenceLass {
    /// One mask per listed class from its prototype band.
    pub fn from_prototypes(classes: &[String], protos: &Prototypes, cfg: &AnalysisConfig, skirt_hz: f64) -> Result<Self> {
        let masks = classes
            .iter()
            .map(|c| {
                let p = protos.get(c).ok_or_else(|| Error::UnknownClass(c.clone()))?;
                Ok((c.clone(), band_mask(p.band.0, p.band.1, skirt_hz, cfg)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { analysis: cfg.clone(), masks })
    }

    pub fn separate(&self, audio: &Waveform, query: &str) -> Result<Waveform> {
        let mask = self.masks.get(query).ok_or_else(|| Error::UnknownQuery(query.to_string()))?;
        if mask.len() != self.analysis.n_fft_bins() || mask.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::ShapeMismatch(format!("mask for {query} is malformed")));
        }
        if audio.is_empty() {
            return Ok(audio.clone());
        }
        let stft = ComplexStft::analyze(audio, &self.analysis)?;
        let (t, _) = stft.shape();
        let m = ndarray::ArrayView1::from(mask.as_slice()).insert_axis(Axis(0));
        let full = m.broadcast((t, mask.len())).expect("row broadcast");
        Ok(stft.masked(full)?.synthesize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LassModelHandle {
    ReferenceMask(ReferenceLass),
    ExternalBackend(ExternalModel),
}

impl LassModelHandle {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_model(self, path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_model(path.as_ref())
    }
}

/// Track for `query` separated out of `audio`.
pub fn lass_separate(m: &LassModelHandle, audio: &Waveform, query: &str, clip_id: &str) -> Result<Waveform> {
    match m {
        LassModelHandle::ReferenceMask(r) => r.separate(audio, query),
        LassModelHandle::ExternalBackend(ext) => {
            let pool = ext.pool();
            let req = BackendRequest::Separate { id: pool.next_id(), sample_rate: audio.sample_rate(), audio: audio.samples().to_vec(), query: query.to_string() };
            let bad = |msg: String| Error::Backend { clip_id: clip_id.to_string(), msg };
            let BackendResponse::Separate { audio: out, .. } = pool.call(clip_id, &req)? else {
                return Err(bad("expected a separate reply".into()));
            };
            if out.len() != audio.len() {
                return Err(bad(format!("separated track has {} samples, input has {}", out.len(), audio.len())));
            }
            Waveform::new(out, audio.sample_rate()).map_err(|e| bad(e.to_string()))
        }
    }
}

/// Serves `sed`/`separate` requests with in-process models, for use behind
/// the backend protocol.
pub fn serve_models<'a>(
    sed: Option<&'a SedModelHandle>,
    lass: Option<&'a LassModelHandle>,
    n_mels_hint: usize,
) -> impl FnMut(BackendRequest) -> Result<BackendResponse> + 'a {
    move |req| match req {
        BackendRequest::Sed { id, mel, hop_seconds } => {
            let m = sed.ok_or_else(|| Error::Config("no sed model loaded".into()))?;
            let cols = mel.first().map_or(n_mels_hint, Vec::len);
            let values = Array2::from_shape_vec((mel.len(), cols), mel.concat()).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
            let x = Spectrogram { values, frame_hop_seconds: hop_seconds, kind: SpectrogramKind::Mel, sample_rate: 0 };
            let (g, c) = sed_infer(m, &x, &id, 0.0)?;
            Ok(BackendResponse::Sed { framewise: g.probs.rows().into_iter().map(|r| r.to_vec()).collect(), clipwise: c.probs, id })
        }
        BackendRequest::Separate { id, sample_rate, audio, query } => {
            let m = lass.ok_or_else(|| Error::Config("no separation model loaded".into()))?;
            let out = lass_separate(m, &Waveform::new(audio, sample_rate)?, &query, &id)?;
            Ok(BackendResponse::Separate { id, audio: out.into_samples() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{mel_spectrogram, rms_power};
    use crate::synth::fixture::{fixture_ontology, fixture_prototypes};
    use crate::synth::render_event;

    fn band_energy(w: &Waveform, lo: f64, hi: f64) -> f64 {
        let n = w.len();
        let mut buf: Vec<rustfft::num_complex::Complex64> = w.samples().iter().map(|&x| x.into()).collect();
        rustfft::FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let sr = f64::from(w.sample_rate());
        (0..=n / 2).filter(|&k| (lo..=hi).contains(&(k as f64 * sr / n as f64))).map(|k| buf[k].norm_sqr()).sum()
    }

    fn lass() -> LassModelHandle {
        let o = fixture_ontology();
        LassModelHandle::ReferenceMask(ReferenceLass::from_prototypes(&o.target_names(), &fixture_prototypes(), &AnalysisConfig::default(), 60.0).unwrap())
    }

    fn ev(class: &str, seed: u64) -> Waveform {
        render_event(&fixture_prototypes()[class], 2.0, 16_000, seed).unwrap()
    }

    #[test]
    fn pooling_is_columnwise_max() {
        let p = Array2::from_shape_vec((3, 2), vec![0.1, 0.9, 0.7, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(Pooling::Max.pool(&p), vec![0.7, 0.9]);
        let ls = Pooling::LinearSoftmax.pool(&p);
        assert!((ls[0] - (0.01 + 0.49 + 0.09) / 1.1).abs() < 1e-12);
    }

    #[test]
    fn separation_keeps_queried_band() {
        let protos = fixture_prototypes();
        let (a, b) = (ev("dog", 1), ev("frying", 2));
        let mix = a.add(&b).unwrap();
        let out = lass_separate(&lass(), &mix, "dog", "c").unwrap();
        assert_eq!(out.len(), mix.len());
        let (da, fb) = (protos["dog"].band, protos["frying"].band);
        assert!(band_energy(&out, da.0, da.1) >= 0.9 * band_energy(&mix, da.0, da.1));
        assert!(band_energy(&out, fb.0, fb.1) <= 0.1 * band_energy(&mix, fb.0, fb.1));
        let absent = lass_separate(&lass(), &mix, "speech", "c").unwrap();
        assert!(rms_power(&absent).unwrap() <= 0.05 * rms_power(&mix).unwrap());
        let silent = Waveform::silence(4000, 16_000);
        assert!(lass_separate(&lass(), &silent, "dog", "c").unwrap().samples().iter().all(|&v| v == 0.0));
        assert!(matches!(lass_separate(&lass(), &mix, "unicorn", "c"), Err(Error::UnknownQuery(_))));
    }

    #[test]
    fn separation_is_linear() {
        let (a, b) = (ev("cat", 3), ev("speech", 4));
        let m = lass();
        let lhs = lass_separate(&m, &a.scaled(2.0).add(&b.scaled(-0.5)).unwrap(), "cat", "c").unwrap();
        let rhs = lass_separate(&m, &a, "cat", "c").unwrap().scaled(2.0).add(&lass_separate(&m, &b, "cat", "c").unwrap().scaled(-0.5)).unwrap();
        let err: f64 = lhs.samples().iter().zip(rhs.samples()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-9);
    }

    #[test]
    fn model_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let r = ReferenceSed { templates: Array2::eye(2), slope: 30.0, bias: vec![-3.0, -4.5], feature_exponent: 0.5, energy_floor: 1e-8, mel_floor: 0.0, clip_top_k: 0, clip_bias: Vec::new() };
        let h = SedModelHandle::reference(vec!["a".into(), "b".into()], r).unwrap();
        h.save(dir.path().join("sed.json")).unwrap();
        assert_eq!(SedModelHandle::load(dir.path().join("sed.json")).unwrap(), h);
        let l = lass();
        l.save(dir.path().join("lass.json")).unwrap();
        assert_eq!(LassModelHandle::load(dir.path().join("lass.json")).unwrap(), l);
        let e = SedModelHandle::external(vec!["a".into()], "tcp://127.0.0.1:9", 2);
        let back: SedModelHandle = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn serve_models_matches_local_inference() {
        let r = ReferenceSed { templates: Array2::eye(64), slope: 30.0, bias: vec![-6.0; 64], feature_exponent: 0.5, energy_floor: 1e-8, mel_floor: 0.0, clip_top_k: 0, clip_bias: Vec::new() };
        let names: Vec<String> = (0..64).map(|i| format!("c{i}")).collect();
        let h = SedModelHandle::reference(names, r).unwrap();
        let x = mel_spectrogram(&ev("dog", 5), &AnalysisConfig::default()).unwrap();
        let (g, c) = sed_infer(&h, &x, "k", 2.0).unwrap();
        let l = lass();
        let mut handle = serve_models(Some(&h), Some(&l), 64);
        let mel = x.values.rows().into_iter().map(|r| r.to_vec()).collect();
        let BackendResponse::Sed { framewise, clipwise, .. } = handle(BackendRequest::Sed { id: "1".into(), mel, hop_seconds: 0.016 }).unwrap() else { panic!() };
        assert_eq!(clipwise, c.probs);
        assert_eq!(framewise.concat(), g.probs.iter().copied().collect::<Vec<_>>());
    }
}
