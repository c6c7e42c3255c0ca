//! Noise selection, curriculum SNR and the augmentation step.

pub mod curriculum;
pub mod llm;
pub mod select;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use curriculum::{curriculum_snr, CurriculumSchedule, SnrPolicy};
pub use llm::{LlmClient, LlmClientConfig, LlmTransport, LLM_ENDPOINT_ENV};
pub use select::{build_prompt, select_noise_rulebased, NoiseSelector, RandomSelector, RuleSelector, Selection, SelectionSource};

use crate::audio::wav::read_wav;
use crate::audio::{mix_at_snr, tile, Waveform};
use crate::error::{Error, Result};
use crate::events::{ClassOntology, WeakLabel};
use crate::seed;
use crate::synth::{render_event, Prototypes, NOISE_SEGMENT_SECONDS};

/// Where the audio of one noise clip comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseClipRef {
    /// Rendered from the class prototype with this seed.
    Synth { seed: u64 },
    Wav { path: PathBuf },
}

/// Noise candidates: every noise class of the ontology with its clips.
#[derive(Debug, Clone)]
pub struct NoisePool {
    ontology: ClassOntology,
    clips: BTreeMap<String, Vec<NoiseClipRef>>,
}

impl NoisePool {
    pub fn new(ontology: ClassOntology, clips: BTreeMap<String, Vec<NoiseClipRef>>) -> Result<Self> {
        for c in ontology.noise() {
            if clips.get(&c.name).is_none_or(Vec::is_empty) {
                return Err(Error::Config(format!("noise pool has no clip for class {}", c.name)));
            }
        }
        if let Some(k) = clips.keys().find(|k| !ontology.is_noise(k)) {
            return Err(Error::UnknownClass(k.clone()));
        }
        Ok(Self { ontology, clips })
    }

    /// `clips_per_class` synthetic clips per noise class.
    pub fn synthetic(ontology: ClassOntology, clips_per_class: usize, base_seed: u64) -> Result<Self> {
        let clips = ontology
            .noise()
            .iter()
            .enumerate()
            .map(|(ci, c)| {
                let refs = (0..clips_per_class)
                    .map(|k| NoiseClipRef::Synth { seed: seed::derive(base_seed, "noise-pool", (ci * 1_000_003 + k) as u64) })
                    .collect();
                (c.name.clone(), refs)
            })
            .collect();
        Self::new(ontology, clips)
    }

    pub fn ontology(&self) -> &ClassOntology {
        &self.ontology
    }

    pub fn clips(&self, class: &str) -> Result<&[NoiseClipRef]> {
        self.clips.get(class).map(Vec::as_slice).ok_or_else(|| Error::UnknownClass(class.to_string()))
    }

    /// Clip `index` of `class`, tiled or cropped to `len` samples.
    pub fn load(&self, class: &str, index: usize, len: usize, sample_rate: u32, protos: &Prototypes) -> Result<Waveform> {
        let r = self
            .clips(class)?
            .get(index)
            .ok_or_else(|| Error::BadParameter(format!("noise clip index {index} out of range for {class}")))?;
        let raw = match r {
            NoiseClipRef::Synth { seed } => {
                let p = protos.get(class).ok_or_else(|| Error::UnknownClass(class.to_string()))?;
                render_event(p, NOISE_SEGMENT_SECONDS, sample_rate, *seed)?
            }
            NoiseClipRef::Wav { path } => {
                let w = read_wav(path)?;
                if w.sample_rate() != sample_rate {
                    return Err(Error::RateMismatch(w.sample_rate(), sample_rate));
                }
                w
            }
        };
        tile(&raw, len)
    }
}

/// One noise component added by [`augment_clip`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentNoise {
    pub class_name: String,
    pub clip_index: usize,
    pub gain: f64,
}

/// Everything needed to re-render an augmented clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentProvenance {
    pub clip_id: String,
    pub selector: String,
    pub selection_source: Option<SelectionSource>,
    pub candidates: Vec<String>,
    pub noise: Vec<AugmentNoise>,
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub skipped: Option<String>,
}

const MAX_NOISE_CLASSES: usize = 3;

/// Adds one to three selected noise classes to `clean` at `snr_db`.
/// `snr_db = None` (clean curriculum phase) and an empty selection pass the
/// input through with the reason recorded.
#[allow(clippy::too_many_arguments)]
pub fn augment_clip(
    clean: &Waveform,
    present: &WeakLabel,
    pool: &NoisePool,
    selector: &dyn NoiseSelector,
    snr_db: Option<f64>,
    seed: u64,
    protos: &Prototypes,
) -> Result<(Waveform, AugmentProvenance)> {
    let mut prov = AugmentProvenance {
        clip_id: present.clip_id.clone(),
        selector: selector.name().to_string(),
        selection_source: None,
        candidates: Vec::new(),
        noise: Vec::new(),
        snr_db,
        seed,
        skipped: None,
    };
    if snr_db.is_none() {
        prov.skipped = Some("clean phase".into());
        return Ok((clean.clone(), prov));
    }
    let sel = selector.select(present, pool.ontology())?;
    prov.selection_source = Some(sel.source);
    prov.candidates = sel.classes;
    if prov.candidates.is_empty() {
        prov.skipped = Some("empty selection".into());
        return Ok((clean.clone(), prov));
    }
    let mut rng = seed::rng(seed);
    let k = rng.random_range(1..=MAX_NOISE_CLASSES).min(prov.candidates.len());
    let mut chosen = prov.candidates.clone();
    chosen.shuffle(&mut rng);
    chosen.truncate(k);
    for class_name in chosen {
        let n = pool.clips(&class_name)?.len();
        prov.noise.push(AugmentNoise { clip_index: rng.random_range(0..n), gain: rng.random_range(0.5..=1.0), class_name });
    }
    let out = render_augmented(clean, &prov, pool, protos)?;
    Ok((out, prov))
}

/// Re-renders an augmented clip from its provenance.
pub fn render_augmented(clean: &Waveform, prov: &AugmentProvenance, pool: &NoisePool, protos: &Prototypes) -> Result<Waveform> {
    let Some(snr) = prov.snr_db.filter(|_| !prov.noise.is_empty()) else {
        return Ok(clean.clone());
    };
    let mut bed = Waveform::silence(clean.len(), clean.sample_rate());
    for n in &prov.noise {
        bed = bed.add(&pool.load(&n.class_name, n.clip_index, clean.len(), clean.sample_rate(), protos)?.scaled(n.gain))?;
    }
    mix_at_snr(clean, &bed, snr, prov.seed)
}
