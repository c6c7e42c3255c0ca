//! Fixture worlds, scene sets and detector calibration.

use std::collections::BTreeMap;
use std::fs;
use std::sync::Mutex;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::audio::{mel_spectrogram, AnalysisConfig};
use crate::augment::{augment_clip, select_noise_rulebased, AugmentProvenance, NoisePool, NoiseSelector, SnrPolicy};
use crate::error::{Error, Result};
use crate::events::{render_frame_labels, weak_from_strong, ClassOntology, Timeline};
use crate::model::{calibrate_reference_sed, refine_reference_sed, CalibrationClip, CalibrationParams, ReferenceSed};
use crate::par::Execution;
use crate::seed;
use crate::synth::fixture::{fixture_ontology, fixture_prototypes};
use crate::synth::{compose_scene, random_scene, NoiseEvent, NoiseSpec, Prototypes, SceneDraw, SceneEntry, SceneSetManifest};

/// Class vocabulary and the acoustic recipe of every class.
#[derive(Debug, Clone)]
pub struct World {
    pub ontology: ClassOntology,
    pub prototypes: Prototypes,
}

impl World {
    pub fn fixture() -> Self {
        Self { ontology: fixture_ontology(), prototypes: fixture_prototypes() }
    }

    /// The fixture world, or the ontology and prototypes named by `cfg`.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let (Some(o), Some(p)) = (&cfg.ontology, &cfg.prototypes) else {
            return Ok(Self::fixture());
        };
        let ontology: ClassOntology = serde_json::from_str(&fs::read_to_string(o)?)?;
        let prototypes: Prototypes = serde_json::from_str(&fs::read_to_string(p)?)?;
        for c in ontology.targets().iter().chain(ontology.noise()) {
            if !prototypes.contains_key(&c.name) {
                return Err(Error::Config(format!("prototypes: no entry for class `{}`", c.name)));
            }
        }
        Ok(Self { ontology, prototypes })
    }

    pub fn targets(&self) -> Vec<String> {
        self.ontology.target_names()
    }
}

/// Every scene set of a run.
#[derive(Debug, Clone)]
pub struct SceneSets {
    pub calibration: SceneSetManifest,
    pub clean_test: SceneSetManifest,
    /// Keyed by SNR in dB.
    pub noisy_test: BTreeMap<i32, SceneSetManifest>,
}

/// `n` random scenes named `{prefix}_{i:03}`. Scene `i` always contains
/// target `i mod n_targets`, so every class appears.
pub fn generate_scenes(prefix: &str, n: usize, world: &World, draw: &SceneDraw, sample_rate: u32, base_seed: u64) -> SceneSetManifest {
    let targets = world.targets();
    let scenes = (0..n)
        .map(|i| {
            let s = seed::derive(base_seed, prefix, i as u64);
            let scene = random_scene(&format!("{prefix}_{i:03}"), &targets, draw, sample_rate, s, Some(i % targets.len()));
            SceneEntry { scene, noise: None }
        })
        .collect();
    SceneSetManifest { global_seed: base_seed, scenes }
}

/// Noisy copy of `clean`: each scene gets one to three noise classes drawn
/// from the rule-based selection for its labels. The noise draw of a scene
/// does not depend on `snr_db`, so conditions differ only in level.
pub fn add_test_noise(clean: &SceneSetManifest, world: &World, env_tag: &str, snr_db: f64, base_seed: u64) -> Result<SceneSetManifest> {
    let mut scenes = Vec::with_capacity(clean.scenes.len());
    for (i, entry) in clean.scenes.iter().enumerate() {
        let weak = weak_from_strong(&entry.scene.timeline()?);
        let mut candidates = select_noise_rulebased(&weak, &world.ontology, env_tag)?;
        if candidates.is_empty() {
            return Err(Error::Config(format!("no `{env_tag}` noise class is compatible with scene {}", entry.scene.clip_id)));
        }
        let mut rng = seed::rng_for(base_seed, "test-noise", i as u64);
        let k = rng.random_range(1..=3).min(candidates.len());
        candidates.shuffle(&mut rng);
        candidates.truncate(k);
        let events = candidates
            .into_iter()
            .enumerate()
            .map(|(j, class_name)| NoiseEvent {
                class_name,
                gain: rng.random_range(0.5..=1.0),
                seed: seed::derive(base_seed, "test-noise-render", (i * 8 + j) as u64),
            })
            .collect();
        scenes.push(SceneEntry { scene: entry.scene.clone(), noise: Some(NoiseSpec { events, snr_db }) });
    }
    Ok(SceneSetManifest { global_seed: base_seed, scenes })
}

/// Loads the manifests named in `cfg`, generating the rest from the seed.
pub fn build_scene_sets(cfg: &ExperimentConfig, world: &World) -> Result<SceneSets> {
    let sr = cfg.analysis.sample_rate;
    let draw = &cfg.data.scene_draw;
    let calibration = match &cfg.data.calibration_manifest {
        Some(p) => SceneSetManifest::load(p)?,
        None => generate_scenes("cal", cfg.data.calibration_scenes, world, draw, sr, seed::derive(cfg.seed, "calibration-set", 0)),
    };
    let clean_test = match &cfg.data.clean_test_manifest {
        Some(p) => SceneSetManifest::load(p)?,
        None => generate_scenes("test", cfg.data.test_scenes, world, draw, sr, seed::derive(cfg.seed, "test-set", 0)),
    };
    let mut noisy_test = BTreeMap::new();
    for &snr in &cfg.snr_conditions {
        let m = match cfg.data.noisy_test_manifests.get(&snr.to_string()) {
            Some(p) => SceneSetManifest::load(p)?,
            None => add_test_noise(&clean_test, world, &cfg.data.test_noise_env_tag, f64::from(snr), seed::derive(cfg.seed, "test-noise", 0))?,
        };
        noisy_test.insert(snr, m);
    }
    for m in std::iter::once(&calibration).chain(std::iter::once(&clean_test)).chain(noisy_test.values()) {
        for e in &m.scenes {
            if e.scene.sample_rate != sr {
                return Err(Error::RateMismatch(e.scene.sample_rate, sr));
            }
            e.scene.timeline()?.check_classes(&world.ontology)?;
        }
    }
    Ok(SceneSets { calibration, clean_test, noisy_test })
}

/// Frame targets aligned with analysis frame centres.
pub fn frame_targets(t: &Timeline, class_names: &[String], n_frames: usize, cfg: &AnalysisConfig) -> Result<Array2<f64>> {
    let sr = f64::from(cfg.sample_rate);
    let lead = (cfg.win_length as f64 - cfg.hop_length as f64) / (2.0 * sr);
    render_frame_labels(&t.normalized(), class_names, n_frames, cfg.hop_seconds(), lead)
}

/// Detector calibrated on the clean scenes.
pub fn calibrate_clean(world: &World, scenes: &SceneSetManifest, analysis: &AnalysisConfig, params: &CalibrationParams, exec: Execution) -> Result<ReferenceSed> {
    let names = world.targets();
    let clip = |i: usize| -> Result<CalibrationClip> {
        let (w, t) = compose_scene(&scenes.scenes[i].scene, &world.prototypes)?;
        let x = mel_spectrogram(&w, analysis)?;
        let y = frame_targets(&t, &names, x.n_frames(), analysis)?;
        Ok((x, y))
    };
    calibrate_reference_sed(scenes.scenes.len(), clip, &names, params, exec)
}

/// One augmentation recipe used to fine-tune a detector.
pub struct FineTuneRecipe<'a> {
    pub name: &'static str,
    pub selector: &'a dyn NoiseSelector,
    pub policy: SnrPolicy,
}

/// Augmentation record of one fine-tuning clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub model: String,
    pub epoch: usize,
    #[serde(flatten)]
    pub augmentation: AugmentProvenance,
}

/// Starting point and knobs of [`fine_tune`].
pub struct TuningSetup<'a> {
    /// Usually the clean-calibrated detector.
    pub initial: &'a ReferenceSed,
    pub params: &'a CalibrationParams,
    pub teacher_decay: f64,
}

/// Refines `tuning.initial` epoch by epoch on augmented scenes, in schedule
/// order, with a mean-teacher template update after each epoch.
///
/// Clip `j` of epoch `e` draws its noise and SNR from seeds that depend only
/// on `(e, j)`, so recipes differ only in what they change.
#[allow(clippy::too_many_arguments)]
pub fn fine_tune(
    world: &World,
    scenes: &SceneSetManifest,
    pool: &NoisePool,
    recipe: &FineTuneRecipe<'_>,
    analysis: &AnalysisConfig,
    tuning: &TuningSetup<'_>,
    base_seed: u64,
    exec: Execution,
) -> Result<(ReferenceSed, Vec<AugmentationRecord>)> {
    let names = world.targets();
    let n = scenes.scenes.len();
    let epochs = recipe.policy.total_epochs();
    let records: Mutex<BTreeMap<usize, AugmentationRecord>> = Mutex::new(BTreeMap::new());
    let clip = |j: usize| -> Result<CalibrationClip> {
        let (epoch, i) = (j / n, j % n);
        let (clean, t) = compose_scene(&scenes.scenes[i].scene, &world.prototypes)?;
        let snr = recipe.policy.snr(epoch, seed::derive(base_seed, "fine-tune-snr", j as u64))?;
        let aug_seed = seed::derive(base_seed, "fine-tune-noise", j as u64);
        let (w, prov) = augment_clip(&clean, &weak_from_strong(&t), pool, recipe.selector, snr, aug_seed, &world.prototypes)?;
        records
            .lock()
            .expect("record lock")
            .entry(j)
            .or_insert_with(|| AugmentationRecord { model: recipe.name.to_string(), epoch, augmentation: prov });
        let x = mel_spectrogram(&w, analysis)?;
        let y = frame_targets(&t, &names, x.n_frames(), analysis)?;
        Ok((x, y))
    };
    let sed = refine_reference_sed(tuning.initial, epochs, n, clip, tuning.params, tuning.teacher_decay, exec)?;
    let records = records.into_inner().expect("record lock").into_values().collect();
    Ok((sed, records))
}
