//! Test-time chain: clip-wise prediction, text queries, per-query
//! separation, remix, final detection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{mel_spectrogram, rms_power, AnalysisConfig, Waveform};
use crate::error::{Error, Result};
use crate::events::{ClipPrediction, FrameGrid, WeakLabel};
use crate::model::{lass_separate, sed_infer, LassModelHandle, SedModelHandle};
use crate::par::{self, Execution};

/// Clip-level query threshold.
pub const QUERY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    pub clip_id: String,
    pub queries: Vec<String>,
}

/// Classes with probability `>= threshold`, most probable first; ties keep
/// `class_names` order.
pub fn queries_from_clipwise(p: &ClipPrediction, class_names: &[String], threshold: f64) -> Result<QuerySet> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::BadParameter(format!("query threshold must be in (0, 1), got {threshold}")));
    }
    if p.probs.len() != class_names.len() {
        return Err(Error::ShapeMismatch(format!("{} probabilities for {} classes", p.probs.len(), class_names.len())));
    }
    let mut idx: Vec<usize> = (0..class_names.len()).filter(|&i| p.probs[i] >= threshold).collect();
    idx.sort_by(|&a, &b| p.probs[b].total_cmp(&p.probs[a]).then(a.cmp(&b)));
    Ok(QuerySet { clip_id: p.clip_id.clone(), queries: idx.into_iter().map(|i| class_names[i].clone()).collect() })
}

/// Sample-wise mean of the tracks.
pub fn remix(tracks: &[Waveform]) -> Result<Waveform> {
    let first = tracks.first().ok_or(Error::EmptyRemix)?;
    let mut acc = vec![0.0; first.len()];
    for t in tracks {
        if t.len() != first.len() {
            return Err(Error::ShapeMismatch(format!("track lengths {} and {}", first.len(), t.len())));
        }
        if t.sample_rate() != first.sample_rate() {
            return Err(Error::RateMismatch(first.sample_rate(), t.sample_rate()));
        }
        acc.iter_mut().zip(t.samples()).for_each(|(a, s)| *a += s);
    }
    let k = tracks.len() as f64;
    Waveform::new(acc.into_iter().map(|v| v / k).collect(), first.sample_rate())
}

/// Rows of the results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    /// No separation.
    NoSeparation,
    /// Ground-truth weak labels as queries.
    GroundTruth,
    /// Every target class as a query.
    AllQueries,
    /// Queries from the model trained on clean data.
    NoFineTune,
    /// Queries from a model fine-tuned with randomly selected noise.
    RandomSelection,
    /// Queries from a model fine-tuned with uniformly random SNR.
    NoCurriculum,
    /// Queries from the model fine-tuned with rule/LLM-selected noise and the curriculum.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::NoSeparation,
        Variant::GroundTruth,
        Variant::AllQueries,
        Variant::NoFineTune,
        Variant::RandomSelection,
        Variant::NoCurriculum,
        Variant::Full,
    ];

    pub fn number(self) -> usize {
        Self::ALL.iter().position(|&v| v == self).expect("listed") + 1
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::NoSeparation => "no separation",
            Variant::GroundTruth => "ground truth queries",
            Variant::AllQueries => "all event queries",
            Variant::NoFineTune => "ours w/o fine-tuning",
            Variant::RandomSelection => "ours w/o noise selection",
            Variant::NoCurriculum => "ours w/o curriculum",
            Variant::Full => "ours",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.number())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let n: usize = s.trim().trim_start_matches('#').parse().map_err(|_| Error::Config(format!("unknown variant `{s}`")))?;
        Self::ALL.get(n.wrapping_sub(1)).copied().ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Which detector produces the final frame-wise output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalModel {
    /// The model trained on clean data.
    #[default]
    Clean,
    /// The fine-tuned query model (clean model for variants without one).
    FineTuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub analysis: AnalysisConfig,
    pub query_threshold: f64,
    pub final_model: FinalModel,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { analysis: AnalysisConfig::default(), query_threshold: QUERY_THRESHOLD, final_model: FinalModel::Clean, exec: Execution::default() }
    }
}

/// Per-clip record of what the chain did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationProvenance {
    pub clip_id: String,
    pub variant: Option<Variant>,
    /// False when the chain bypasses separation by design.
    pub separation: bool,
    pub queries: Vec<String>,
    /// Mean-square power of each kept track, aligned with `kept`.
    pub track_energies: Vec<f64>,
    pub kept: Vec<String>,
    pub dropped: Vec<(String, String)>,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct ClipOutcome {
    pub frames: FrameGrid,
    pub queries: QuerySet,
    /// Clip-wise output of the query model, when one ran.
    pub query_clipwise: Option<ClipPrediction>,
    pub provenance: SeparationProvenance,
}

/// Where queries come from.
#[derive(Debug, Clone)]
pub enum QuerySource<'a> {
    Model(&'a SedModelHandle),
    Fixed(Vec<String>),
}

/// The full chain on one noisy clip. An empty query set, or a set whose
/// separations all fail, sends the unseparated clip to `final_model`.
pub fn detect_with_separation(
    noisy: &Waveform,
    clip_id: &str,
    queries: QuerySource<'_>,
    lass: &LassModelHandle,
    final_model: &SedModelHandle,
    cfg: &PipelineConfig,
) -> Result<ClipOutcome> {
    let duration = noisy.duration_seconds();
    let (q, query_clipwise) = match queries {
        QuerySource::Model(m) => {
            let x = mel_spectrogram(noisy, &cfg.analysis)?;
            let (_, clip) = sed_infer(m, &x, clip_id, duration)?;
            (queries_from_clipwise(&clip, &m.class_names, cfg.query_threshold)?, Some(clip))
        }
        QuerySource::Fixed(list) => (QuerySet { clip_id: clip_id.to_string(), queries: list }, None),
    };
    let mut prov = SeparationProvenance {
        clip_id: clip_id.to_string(),
        variant: None,
        separation: true,
        queries: q.queries.clone(),
        track_energies: Vec::new(),
        kept: Vec::new(),
        dropped: Vec::new(),
        fallback: false,
    };
    let separated = par::map(cfg.exec, &q.queries, |query| lass_separate(lass, noisy, query, clip_id));
    let mut tracks = Vec::new();
    for (query, r) in q.queries.iter().zip(separated) {
        match r {
            Ok(t) => {
                prov.track_energies.push(rms_power(&t).unwrap_or(0.0));
                prov.kept.push(query.clone());
                tracks.push(t);
            }
            Err(e) => {
                log::warn!("clip {clip_id}: separation for `{query}` failed: {e}");
                prov.dropped.push((query.clone(), e.to_string()));
            }
        }
    }
    let input = if tracks.is_empty() {
        prov.fallback = true;
        noisy.clone()
    } else {
        remix(&tracks)?
    };
    let (frames, _) = sed_infer(final_model, &mel_spectrogram(&input, &cfg.analysis)?, clip_id, duration)?;
    Ok(ClipOutcome { frames, queries: q, query_clipwise, provenance: prov })
}

/// The detectors and separator available to a run.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub clean: SedModelHandle,
    pub fine_tuned: Option<SedModelHandle>,
    pub fine_tuned_random_selection: Option<SedModelHandle>,
    pub fine_tuned_no_curriculum: Option<SedModelHandle>,
    pub lass: LassModelHandle,
}

/// A configured chain for one results-table row.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub variant: Variant,
    query_model: Option<SedModelHandle>,
    final_model: SedModelHandle,
    lass: LassModelHandle,
    cfg: PipelineConfig,
}

/// Chain for `kind`, or a configuration error naming the missing model.
pub fn system_variant(kind: Variant, models: &ModelSet, cfg: &PipelineConfig) -> Result<Pipeline> {
    let need = |m: &Option<SedModelHandle>, what: &str| {
        m.clone().ok_or_else(|| Error::Config(format!("variant {kind} needs the {what} model")))
    };
    let query_model = match kind {
        Variant::NoSeparation | Variant::GroundTruth | Variant::AllQueries => None,
        Variant::NoFineTune => Some(models.clean.clone()),
        Variant::RandomSelection => Some(need(&models.fine_tuned_random_selection, "random-selection fine-tuned")?),
        Variant::NoCurriculum => Some(need(&models.fine_tuned_no_curriculum, "no-curriculum fine-tuned")?),
        Variant::Full => Some(need(&models.fine_tuned, "fine-tuned")?),
    };
    let final_model = match (cfg.final_model, &query_model) {
        (FinalModel::Clean, _) => models.clean.clone(),
        (FinalModel::FineTuned, Some(m)) => m.clone(),
        (FinalModel::FineTuned, None) => models.fine_tuned.clone().unwrap_or_else(|| models.clean.clone()),
    };
    Ok(Pipeline { variant: kind, query_model, final_model, lass: models.lass.clone(), cfg: cfg.clone() })
}

impl Pipeline {
    /// Runs the chain on one clip. `weak` is required by the ground-truth row.
    pub fn run(&self, noisy: &Waveform, clip_id: &str, weak: Option<&WeakLabel>) -> Result<ClipOutcome> {
        let source = match self.variant {
            Variant::NoSeparation => {
                let duration = noisy.duration_seconds();
                let (frames, _) = sed_infer(&self.final_model, &mel_spectrogram(noisy, &self.cfg.analysis)?, clip_id, duration)?;
                return Ok(ClipOutcome {
                    frames,
                    queries: QuerySet { clip_id: clip_id.to_string(), queries: Vec::new() },
                    query_clipwise: None,
                    provenance: SeparationProvenance {
                        clip_id: clip_id.to_string(),
                        variant: Some(self.variant),
                        separation: false,
                        queries: Vec::new(),
                        track_energies: Vec::new(),
                        kept: Vec::new(),
                        dropped: Vec::new(),
                        fallback: false,
                    },
                });
            }
            Variant::GroundTruth => {
                let w = weak.ok_or_else(|| Error::Config(format!("variant {} needs weak labels for {clip_id}", self.variant)))?;
                // weak labels in class order, matching the model-driven tie rule
                let order = &self.final_model.class_names;
                QuerySource::Fixed(order.iter().filter(|c| w.contains(c)).cloned().collect())
            }
            Variant::AllQueries => QuerySource::Fixed(self.final_model.class_names.clone()),
            _ => QuerySource::Model(self.query_model.as_ref().expect("query model set for model-driven variants")),
        };
        let mut out = detect_with_separation(noisy, clip_id, source, &self.lass, &self.final_model, &self.cfg)?;
        out.provenance.variant = Some(self.variant);
        Ok(out)
    }

    pub fn query_model(&self) -> Option<&SedModelHandle> {
        self.query_model.as_ref()
    }
}
