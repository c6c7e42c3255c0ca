//! Event vocabulary, annotations at every granularity, frame/event
//! conversion and DESED-style metadata files.

mod ontology;
mod postprocess;
pub mod tsv;

pub use ontology::{ClassInfo, ClassOntology};
pub use postprocess::{binary_median_filter, frames_to_events, render_frame_labels};

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One strongly-labelled event, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventInstance {
    pub class_name: String,
    pub onset: f64,
    pub offset: f64,
}

impl EventInstance {
    pub fn new(class_name: impl Into<String>, onset: f64, offset: f64) -> Self {
        Self { class_name: class_name.into(), onset, offset }
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

/// Strong annotation of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub clip_id: String,
    pub clip_duration: f64,
    pub events: Vec<EventInstance>,
}

impl Timeline {
    pub fn new(clip_id: impl Into<String>, clip_duration: f64, events: Vec<EventInstance>) -> Result<Self> {
        let t = Self { clip_id: clip_id.into(), clip_duration, events };
        t.check()?;
        Ok(t)
    }

    pub fn empty(clip_id: impl Into<String>, clip_duration: f64) -> Self {
        Self { clip_id: clip_id.into(), clip_duration, events: Vec::new() }
    }

    fn check(&self) -> Result<()> {
        if !(self.clip_duration.is_finite() && self.clip_duration >= 0.0) {
            return Err(Error::BadParameter(format!("clip `{}` has invalid duration", self.clip_id)));
        }
        for e in &self.events {
            if !(e.onset >= 0.0 && e.onset < e.offset && e.offset <= self.clip_duration + 1e-9) {
                return Err(Error::BadParameter(format!(
                    "clip `{}`: event {} [{}, {}] outside [0, {}] or empty",
                    self.clip_id, e.class_name, e.onset, e.offset, self.clip_duration
                )));
            }
        }
        Ok(())
    }

    /// Ensures every event names a known class.
    pub fn check_classes(&self, ontology: &ClassOntology) -> Result<()> {
        for e in &self.events {
            ontology.require(&e.class_name)?;
        }
        Ok(())
    }

    /// Whether any two events of the same class overlap.
    pub fn has_same_class_overlap(&self) -> bool {
        let mut ev: Vec<&EventInstance> = self.events.iter().collect();
        ev.sort_by(|a, b| a.class_name.cmp(&b.class_name).then(a.onset.total_cmp(&b.onset)));
        ev.windows(2).any(|w| w[0].class_name == w[1].class_name && w[1].onset < w[0].offset)
    }

    /// Merges overlapping same-class events and sorts by onset, then class.
    pub fn normalized(&self) -> Self {
        let mut ev = self.events.clone();
        ev.sort_by(|a, b| a.class_name.cmp(&b.class_name).then(a.onset.total_cmp(&b.onset)));
        let mut merged: Vec<EventInstance> = Vec::with_capacity(ev.len());
        for e in ev {
            match merged.last_mut() {
                Some(last) if last.class_name == e.class_name && e.onset < last.offset => {
                    warn!("clip `{}`: merging overlapping `{}` events", self.clip_id, e.class_name);
                    last.offset = last.offset.max(e.offset);
                }
                _ => merged.push(e),
            }
        }
        merged.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.class_name.cmp(&b.class_name)));
        Self { clip_id: self.clip_id.clone(), clip_duration: self.clip_duration, events: merged }
    }
}

/// Clip-level class presence, kept in first-annotation order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeakLabel {
    pub clip_id: String,
    pub present: Vec<String>,
}

impl WeakLabel {
    pub fn new(clip_id: impl Into<String>, present: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let mut out: Vec<String> = Vec::new();
        for p in present {
            let p = p.into();
            if !out.contains(&p) {
                out.push(p);
            }
        }
        Self { clip_id: clip_id.into(), present: out }
    }

    pub fn contains(&self, class: &str) -> bool {
        self.present.iter().any(|p| p == class)
    }

    /// `{0,1}` vector in target order.
    pub fn to_vector(&self, ontology: &ClassOntology) -> Result<Vec<f64>> {
        let mut v = vec![0.0; ontology.n_targets()];
        for p in &self.present {
            let i = ontology.target_index(p).ok_or_else(|| Error::UnknownClass(p.clone()))?;
            v[i] = 1.0;
        }
        Ok(v)
    }
}

pub fn weak_from_strong(t: &Timeline) -> WeakLabel {
    WeakLabel::new(t.clip_id.clone(), t.events.iter().map(|e| e.class_name.clone()))
}

/// Clip-wise class probabilities in target order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub clip_id: String,
    pub probs: Vec<f64>,
}

/// Frame-wise class probabilities, `T × N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGrid {
    pub clip_id: String,
    pub probs: Array2<f64>,
    pub frame_hop_seconds: f64,
    pub clip_duration: f64,
}

impl FrameGrid {
    pub fn n_frames(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.probs.ncols()
    }

    /// Column-wise maximum (max pooling over time).
    pub fn max_pool(&self) -> ClipPrediction {
        let probs = self
            .probs
            .columns()
            .into_iter()
            .map(|c| c.iter().copied().fold(0.0f64, f64::max))
            .collect();
        ClipPrediction { clip_id: self.clip_id.clone(), probs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::collections::BTreeSet;

    #[test]
    fn weak_from_strong_cases() {
        assert!(weak_from_strong(&Timeline::empty("a", 10.0)).present.is_empty());
        let t = Timeline::new(
            "b",
            10.0,
            vec![
                EventInstance::new("dog", 0.0, 1.0),
                EventInstance::new("dog", 2.0, 3.0),
                EventInstance::new("speech", 1.0, 2.0),
            ],
        )
        .unwrap();
        assert_eq!(weak_from_strong(&t).present, vec!["dog", "speech"]);
    }

    #[test]
    fn weak_from_strong_matches_set_scan() {
        let mut rng = crate::seed::rng(50);
        let events: Vec<EventInstance> = (0..50)
            .map(|_| {
                let c = rng.random_range(0..10);
                let on = rng.random_range(0.0..9.0);
                EventInstance::new(format!("c{c}"), on, on + 0.5)
            })
            .collect();
        let t = Timeline::new("x", 10.0, events.clone()).unwrap();
        let mut oracle = BTreeSet::new();
        for e in &events {
            oracle.insert(e.class_name.clone());
        }
        let got: BTreeSet<String> = weak_from_strong(&t).present.into_iter().collect();
        assert_eq!(got, oracle);
        // duplicating every event changes nothing
        let mut doubled = t.clone();
        doubled.events.extend(events);
        assert_eq!(weak_from_strong(&doubled), weak_from_strong(&t));
    }

    #[test]
    fn timeline_bounds_checked() {
        assert!(Timeline::new("a", 5.0, vec![EventInstance::new("x", 4.0, 6.0)]).is_err());
        assert!(Timeline::new("a", 5.0, vec![EventInstance::new("x", 2.0, 2.0)]).is_err());
    }

    #[test]
    fn normalize_merges_same_class_only() {
        let t = Timeline::new(
            "a",
            10.0,
            vec![
                EventInstance::new("x", 0.0, 2.0),
                EventInstance::new("x", 1.5, 3.0),
                EventInstance::new("y", 1.0, 2.5),
            ],
        )
        .unwrap();
        assert!(t.has_same_class_overlap());
        let n = t.normalized();
        assert!(!n.has_same_class_overlap());
        assert_eq!(n.events, vec![EventInstance::new("x", 0.0, 3.0), EventInstance::new("y", 1.0, 2.5)]);
    }

    #[test]
    fn max_pool_is_columnwise_max() {
        let g = FrameGrid {
            clip_id: "c".into(),
            probs: ndarray::array![[0.1, 0.9], [0.4, 0.2], [0.3, 0.5]],
            frame_hop_seconds: 0.1,
            clip_duration: 0.3,
        };
        assert_eq!(g.max_pool().probs, vec![0.4, 0.9]);
    }
}
