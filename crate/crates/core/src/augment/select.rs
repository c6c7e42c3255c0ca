use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{ClassOntology, WeakLabel};

/// Prompt sent to the language model for one clip.
///
/// The event clause lists the clip's annotations in order (`none` when the
/// clip has no annotation); the candidate slot lists the noise vocabulary.
pub fn build_prompt(present: &WeakLabel, ontology: &ClassOntology) -> String {
    let events = if present.present.is_empty() { "none".to_string() } else { present.present.join(", ") };
    let candidates = ontology.noise_names().join(", ");
    format!(
        "This is an audio clip recorded in a household environment. \
         The following events present this clip: {events}.\n\
         Please help me select the event classes in [{candidates}] that may occur in the audio clip.\n\
         Further, apply filtering to ensure that the selected classes do not have any classes similar to \
         those already present in the audio clip."
    )
}

/// Noise classes tagged `env_tag` whose similarity group differs from the
/// group of every class present in the clip. Returned in ontology order.
pub fn select_noise_rulebased(present: &WeakLabel, ontology: &ClassOntology, env_tag: &str) -> Result<Vec<String>> {
    if !ontology.all_tags().contains(env_tag) {
        return Err(Error::UnknownTag(env_tag.to_string()));
    }
    let excluded: BTreeSet<&str> = present
        .present
        .iter()
        .map(|p| ontology.require(p).map(|c| c.similarity_group.as_str()))
        .collect::<Result<_>>()?;
    Ok(ontology
        .noise()
        .iter()
        .filter(|c| c.tags.contains(env_tag) && !excluded.contains(c.similarity_group.as_str()))
        .map(|c| c.name.clone())
        .collect())
}

/// Where a noise selection came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSource {
    Rule,
    Llm,
    /// The language model was unavailable; the rule result was used.
    Fallback,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub classes: Vec<String>,
    pub source: SelectionSource,
}

/// Picks the candidate noise classes for a clip.
pub trait NoiseSelector: Send + Sync {
    fn select(&self, present: &WeakLabel, ontology: &ClassOntology) -> Result<Selection>;
    fn name(&self) -> &'static str;
}

/// Deterministic tag/similarity rule.
#[derive(Debug, Clone)]
pub struct RuleSelector {
    pub env_tag: String,
}

impl NoiseSelector for RuleSelector {
    fn select(&self, present: &WeakLabel, ontology: &ClassOntology) -> Result<Selection> {
        Ok(Selection { classes: select_noise_rulebased(present, ontology, &self.env_tag)?, source: SelectionSource::Rule })
    }

    fn name(&self) -> &'static str {
        "rule"
    }
}

/// Every noise class is a candidate, regardless of environment or similarity.
#[derive(Debug, Clone, Default)]
pub struct RandomSelector;

impl NoiseSelector for RandomSelector {
    fn select(&self, _present: &WeakLabel, ontology: &ClassOntology) -> Result<Selection> {
        Ok(Selection { classes: ontology.noise_names(), source: SelectionSource::Random })
    }

    fn name(&self) -> &'static str {
        "random"
    }
}
