use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::AnalysisConfig;
use crate::augment::{CurriculumSchedule, LlmClientConfig};
use crate::error::{Error, Result};
use crate::metrics::{Condition, PsdsParams};
use crate::model::{CalibrationParams, Pooling};
use crate::par::Execution;
use crate::pipeline::{FinalModel, Variant};
use crate::synth::SceneDraw;

/// Scene sets: generated from the seed unless a manifest is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub calibration_scenes: usize,
    pub test_scenes: usize,
    pub scene_draw: SceneDraw,
    pub calibration_manifest: Option<PathBuf>,
    pub clean_test_manifest: Option<PathBuf>,
    /// SNR (as a string key, e.g. `"-5"`) to a manifest of noisy scenes.
    pub noisy_test_manifests: BTreeMap<String, PathBuf>,
    /// Environment tag of the noise added to the noisy test sets.
    pub test_noise_env_tag: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            calibration_scenes: 60,
            test_scenes: 40,
            scene_draw: SceneDraw::default(),
            calibration_manifest: None,
            clean_test_manifest: None,
            noisy_test_manifests: BTreeMap::new(),
            test_noise_env_tag: "household".into(),
        }
    }
}

/// Augmentation used to recalibrate the fine-tuned detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    pub curriculum: CurriculumSchedule,
    /// SNR range of the variant without curriculum.
    pub random_snr_db: (f64, f64),
    pub env_tag: String,
    pub noise_clips_per_class: usize,
    /// Per-epoch EMA decay of the teacher templates.
    pub teacher_decay: f64,
    pub llm: LlmClientConfig,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            curriculum: CurriculumSchedule { total_epochs: 10, clean_epochs: 1, snr_start_db: 10.0, snr_end_db: -10.0 },
            random_snr_db: (-10.0, 10.0),
            env_tag: "household".into(),
            noise_clips_per_class: 4,
            teacher_decay: 0.85,
            llm: LlmClientConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub scenario1: PsdsParams,
    pub scenario2: PsdsParams,
    pub n_thresholds: usize,
    pub threshold_low: f64,
    pub threshold_high: f64,
    pub median_frames: usize,
    pub recall_threshold: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            scenario1: PsdsParams::scenario1(),
            scenario2: PsdsParams::scenario2(),
            n_thresholds: 50,
            threshold_low: 0.01,
            threshold_high: 0.99,
            median_frames: 7,
            recall_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Custom ontology; requires `prototypes`. Both unset selects the
    /// built-in fixture world.
    pub ontology: Option<PathBuf>,
    pub prototypes: Option<PathBuf>,
    pub snr_conditions: Vec<i32>,
    pub data: DataConfig,
    pub fine_tune: FineTuneConfig,
    pub analysis: AnalysisConfig,
    pub calibration: CalibrationParams,
    /// Clip-wise pooling of the calibrated detectors.
    pub pooling: Pooling,
    /// Raised-cosine skirt of the reference separator masks.
    pub lass_skirt_hz: f64,
    pub query_threshold: f64,
    pub final_model: FinalModel,
    pub scoring: ScoringConfig,
    pub variants: Vec<Variant>,
    /// Test conditions to evaluate.
    pub conditions: Vec<Condition>,
    pub output_dir: PathBuf,
    /// Worker threads; unset uses every logical core.
    pub workers: Option<usize>,
    pub execution: Execution,
    /// External model endpoints; `SED_BACKEND`/`LASS_BACKEND` when unset.
    pub sed_backend: Option<String>,
    pub lass_backend: Option<String>,
    pub backend_pool_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            ontology: None,
            prototypes: None,
            snr_conditions: Condition::NOISY_SNRS.to_vec(),
            data: DataConfig::default(),
            fine_tune: FineTuneConfig::default(),
            analysis: AnalysisConfig::default(),
            calibration: CalibrationParams::default(),
            pooling: Pooling::ClipHead,
            lass_skirt_hz: 60.0,
            query_threshold: crate::pipeline::QUERY_THRESHOLD,
            final_model: FinalModel::Clean,
            scoring: ScoringConfig::default(),
            variants: Variant::ALL.to_vec(),
            conditions: Condition::all(),
            output_dir: PathBuf::from("nrsed-out"),
            workers: None,
            execution: Execution::default(),
            sed_backend: None,
            lass_backend: None,
            backend_pool_size: 4,
        }
    }
}

/// One schema violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn diag(out: &mut Vec<Diagnostic>, field: impl Into<String>, message: impl Into<String>) {
    out.push(Diagnostic { field: field.into(), message: message.into() });
}

impl ExperimentConfig {
    /// Parses a config document; a type error is reported with its field path.
    pub fn from_json(text: &str) -> std::result::Result<Self, Diagnostic> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Diagnostic { field: e.path().to_string(), message: e.inner().to_string() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        let cfg = Self::from_json(&text).map_err(|d| Error::Config(d.to_string()))?;
        let base = path.as_ref().parent().unwrap_or(Path::new("."));
        let cfg = cfg.resolve_paths(base);
        let problems = cfg.validate();
        if !problems.is_empty() {
            return Err(Error::Config(problems.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")));
        }
        Ok(cfg)
    }

    /// Makes relative file references relative to `base`.
    pub fn resolve_paths(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.ontology.iter_mut().for_each(fix);
        self.prototypes.iter_mut().for_each(fix);
        self.data.calibration_manifest.iter_mut().for_each(fix);
        self.data.clean_test_manifest.iter_mut().for_each(fix);
        self.data.noisy_test_manifests.values_mut().for_each(fix);
        self.fine_tune.llm.cache_path.iter_mut().for_each(fix);
        fix(&mut self.output_dir);
        self
    }

    /// Every semantic problem, with field paths. Empty means valid.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut snrs = self.snr_conditions.clone();
        snrs.sort_unstable();
        snrs.dedup();
        let mut want = Condition::NOISY_SNRS.to_vec();
        want.sort_unstable();
        let snrs_ok = snrs == want && self.snr_conditions.len() == want.len();
        if !snrs_ok {
            diag(&mut out, "snr_conditions", format!("must list each of 10, 5, 0 and -5 dB once, got {:?}", self.snr_conditions));
        }
        match (&self.ontology, &self.prototypes) {
            (Some(_), None) => diag(&mut out, "prototypes", "required when ontology is set"),
            (None, Some(_)) => diag(&mut out, "ontology", "required when prototypes is set"),
            _ => {}
        }
        for (field, p) in [("ontology", &self.ontology), ("prototypes", &self.prototypes), ("data.calibration_manifest", &self.data.calibration_manifest), ("data.clean_test_manifest", &self.data.clean_test_manifest)] {
            if let Some(p) = p.as_ref().filter(|p| !p.exists()) {
                diag(&mut out, field, format!("file {} does not exist", p.display()));
            }
        }
        for (k, p) in &self.data.noisy_test_manifests {
            let field = format!("data.noisy_test_manifests.{k}");
            match k.parse::<i32>() {
                Ok(s) if self.snr_conditions.contains(&s) => {}
                _ => diag(&mut out, &field, "key must be one of the SNR conditions"),
            }
            if !p.exists() {
                diag(&mut out, field, format!("file {} does not exist", p.display()));
            }
        }
        if self.data.calibration_scenes == 0 && self.data.calibration_manifest.is_none() {
            diag(&mut out, "data.calibration_scenes", "must be positive");
        }
        if self.data.test_scenes == 0 && self.data.clean_test_manifest.is_none() {
            diag(&mut out, "data.test_scenes", "must be positive");
        }
        let d = &self.data.scene_draw;
        if !(d.clip_duration > 0.0) || d.max_events == 0 || !(d.min_event_seconds > 0.0) || d.min_event_seconds > d.max_event_seconds || !(d.min_gain > 0.0) || d.min_gain > d.max_gain {
            diag(&mut out, "data.scene_draw", "needs positive durations and gains with min <= max");
        } else if d.clip_duration * f64::from(self.analysis.sample_rate) < self.analysis.win_length as f64 {
            diag(&mut out, "data.scene_draw.clip_duration", "shorter than one analysis window");
        }
        for p in self.fine_tune.curriculum.validate() {
            diag(&mut out, "fine_tune.curriculum", p);
        }
        let (lo, hi) = self.fine_tune.random_snr_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            diag(&mut out, "fine_tune.random_snr_db", "needs finite low <= high");
        }
        if !(0.0..1.0).contains(&self.fine_tune.teacher_decay) {
            diag(&mut out, "fine_tune.teacher_decay", "must lie in [0, 1)");
        }
        if self.fine_tune.noise_clips_per_class == 0 {
            diag(&mut out, "fine_tune.noise_clips_per_class", "must be positive");
        }
        if self.fine_tune.llm.attempts == 0 {
            diag(&mut out, "fine_tune.llm.attempts", "must be positive");
        }
        for p in self.analysis.validate() {
            diag(&mut out, "analysis", p);
        }
        let c = &self.calibration;
        if !(c.slope > 0.0) {
            diag(&mut out, "calibration.slope", "must be positive");
        }
        if !(0.0..1.0).contains(&c.min_threshold) {
            diag(&mut out, "calibration.min_threshold", "must be in [0, 1)");
        }
        if !(c.feature_exponent > 0.0) {
            diag(&mut out, "calibration.feature_exponent", "must be positive");
        }
        if !(c.energy_floor >= 0.0) {
            diag(&mut out, "calibration.energy_floor", "must be >= 0");
        }
        if !(c.mel_floor >= 0.0 && c.mel_floor.is_finite()) {
            diag(&mut out, "calibration.mel_floor", "must be finite and >= 0");
        }
        if !(c.hard_negative_weight >= 0.0 && c.hard_negative_weight.is_finite()) {
            diag(&mut out, "calibration.hard_negative_weight", "must be finite and >= 0");
        }
        if !(self.lass_skirt_hz > 0.0) {
            diag(&mut out, "lass_skirt_hz", "must be positive");
        }
        if !(self.query_threshold > 0.0 && self.query_threshold < 1.0) {
            diag(&mut out, "query_threshold", "must be in (0, 1)");
        }
        let s = &self.scoring;
        for (name, p) in [("scoring.scenario1", &s.scenario1), ("scoring.scenario2", &s.scenario2)] {
            for m in p.validate() {
                let field = m.split_whitespace().next().unwrap_or_default();
                diag(&mut out, format!("{name}.{field}"), m.clone());
            }
        }
        if s.n_thresholds < 2 {
            diag(&mut out, "scoring.n_thresholds", "needs at least 2 operating points");
        }
        if !(s.threshold_low > 0.0 && s.threshold_low < s.threshold_high && s.threshold_high < 1.0) {
            diag(&mut out, "scoring.threshold_low", "thresholds must satisfy 0 < low < high < 1");
        }
        if s.median_frames.is_multiple_of(2) {
            diag(&mut out, "scoring.median_frames", "must be odd");
        }
        if !(s.recall_threshold > 0.0 && s.recall_threshold < 1.0) {
            diag(&mut out, "scoring.recall_threshold", "must be in (0, 1)");
        }
        if self.conditions.is_empty() {
            diag(&mut out, "conditions", "must not be empty");
        }
        for (i, c) in self.conditions.iter().enumerate() {
            if self.conditions[..i].contains(c) {
                diag(&mut out, format!("conditions[{i}]"), format!("{c} listed twice"));
            }
            if let Condition::Snr(s) = c {
                if snrs_ok && !self.snr_conditions.contains(s) {
                    diag(&mut out, format!("conditions[{i}]"), format!("{c} is not in snr_conditions"));
                }
            }
        }
        if self.variants.is_empty() {
            diag(&mut out, "variants", "must not be empty");
        }
        if self.workers == Some(0) {
            diag(&mut out, "workers", "must be positive");
        }
        if self.backend_pool_size == 0 {
            diag(&mut out, "backend_pool_size", "must be positive");
        }
        out
    }
}

/// Diagnostics for the config file at `path`: a type error, or every
/// semantic violation. Unreadable files are an error.
pub fn validate_config(path: impl AsRef<Path>) -> Result<Vec<Diagnostic>> {
    let text = fs::read_to_string(path.as_ref())?;
    match ExperimentConfig::from_json(&text) {
        Err(d) => Ok(vec![d]),
        Ok(cfg) => Ok(cfg.resolve_paths(path.as_ref().parent().unwrap_or(Path::new("."))).validate()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(json: &str) -> Vec<Diagnostic> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, json).unwrap();
        validate_config(&p).unwrap()
    }

    #[test]
    fn default_config_is_valid() {
        assert!(ExperimentConfig::default().validate().is_empty());
        assert!(check("{}").is_empty());
        assert!(check(&serde_json::to_string(&ExperimentConfig::default()).unwrap()).is_empty());
    }

    #[test]
    fn missing_snr_condition() {
        let d = check(r#"{"snr_conditions": [10, 5, 0]}"#);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].field, "snr_conditions");
    }

    #[test]
    fn negative_e_max() {
        let d = check(r#"{"scoring": {"scenario1": {"rho_dtc": 0.7, "rho_gtc": 0.7, "rho_cttc": 0.3, "alpha_ct": 0, "alpha_st": 1, "e_max": -1}}}"#);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].field, "scoring.scenario1.e_max");
    }

    #[test]
    fn type_errors_carry_paths() {
        let d = check(r#"{"data": {"test_scenes": "many"}}"#);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].field, "data.test_scenes");
        let d = check(r##"{"variants": ["#9"]}"##);
        assert_eq!(d[0].field, "variants[0]");
        let d = check(r#"{"bogus": 1}"#);
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn missing_files_reported() {
        let d = check(r#"{"ontology": "nope.json", "prototypes": "nope2.json", "data": {"noisy_test_manifests": {"3": "x.json"}}}"#);
        let fields: Vec<&str> = d.iter().map(|d| d.field.as_str()).collect();
        assert!(fields.contains(&"ontology") && fields.contains(&"prototypes"));
        assert_eq!(fields.iter().filter(|f| f.starts_with("data.noisy_test_manifests.3")).count(), 2);
    }

    #[test]
    fn unreadable_file_is_error() {
        assert!(validate_config("/nonexistent/config.json").is_err());
    }
}
