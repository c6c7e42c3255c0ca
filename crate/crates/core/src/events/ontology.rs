use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One vocabulary entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub name: String,
    pub tags: BTreeSet<String>,
    pub similarity_group: String,
}

impl ClassInfo {
    pub fn new(name: &str, tags: &[&str], group: &str) -> Self {
        Self {
            name: name.to_string(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
            similarity_group: group.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawOntology {
    target_classes: Vec<ClassInfo>,
    noise_classes: Vec<ClassInfo>,
}

/// Target vocabulary (detected classes) plus the noise-candidate vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOntology", into = "RawOntology")]
pub struct ClassOntology {
    target_classes: Vec<ClassInfo>,
    noise_classes: Vec<ClassInfo>,
    #[serde(skip)]
    index: HashMap<String, (bool, usize)>,
}

impl TryFrom<RawOntology> for ClassOntology {
    type Error = Error;

    fn try_from(raw: RawOntology) -> Result<Self> {
        ClassOntology::new(raw.target_classes, raw.noise_classes)
    }
}

impl From<ClassOntology> for RawOntology {
    fn from(o: ClassOntology) -> Self {
        RawOntology { target_classes: o.target_classes, noise_classes: o.noise_classes }
    }
}

impl ClassOntology {
    pub fn new(target_classes: Vec<ClassInfo>, noise_classes: Vec<ClassInfo>) -> Result<Self> {
        if target_classes.is_empty() || noise_classes.is_empty() {
            return Err(Error::Ontology("need at least one target and one noise class".into()));
        }
        let mut index = HashMap::new();
        for (is_target, list) in [(true, &target_classes), (false, &noise_classes)] {
            for (i, c) in list.iter().enumerate() {
                if c.name.is_empty() || c.name.contains(['\t', ',', '\n']) {
                    return Err(Error::Ontology(format!("invalid class name {:?}", c.name)));
                }
                if c.tags.is_empty() {
                    return Err(Error::Ontology(format!("class `{}` has no environment tag", c.name)));
                }
                if c.similarity_group.is_empty() {
                    return Err(Error::Ontology(format!("class `{}` has no similarity group", c.name)));
                }
                if index.insert(c.name.clone(), (is_target, i)).is_some() {
                    return Err(Error::Ontology(format!("duplicate class name `{}`", c.name)));
                }
            }
        }
        Ok(Self { target_classes, noise_classes, index })
    }

    pub fn n_targets(&self) -> usize {
        self.target_classes.len()
    }

    pub fn n_noise(&self) -> usize {
        self.noise_classes.len()
    }

    pub fn targets(&self) -> &[ClassInfo] {
        &self.target_classes
    }

    pub fn noise(&self) -> &[ClassInfo] {
        &self.noise_classes
    }

    pub fn target_names(&self) -> Vec<String> {
        self.target_classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn noise_names(&self) -> Vec<String> {
        self.noise_classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Position of `name` in target order.
    pub fn target_index(&self, name: &str) -> Option<usize> {
        match self.index.get(name) {
            Some(&(true, i)) => Some(i),
            _ => None,
        }
    }

    pub fn is_noise(&self, name: &str) -> bool {
        matches!(self.index.get(name), Some(&(false, _)))
    }

    pub fn get(&self, name: &str) -> Option<&ClassInfo> {
        self.index.get(name).map(|&(t, i)| if t { &self.target_classes[i] } else { &self.noise_classes[i] })
    }

    pub fn require(&self, name: &str) -> Result<&ClassInfo> {
        self.get(name).ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    /// Every environment tag used by any class.
    pub fn all_tags(&self) -> BTreeSet<String> {
        self.target_classes.iter().chain(&self.noise_classes).flat_map(|c| c.tags.iter().cloned()).collect()
    }
}
