//! End-to-end experiment: scene sets, detector calibration, the seven
//! systems over every test condition, PSDS and recall reports.

mod config;
mod world;

pub use config::{validate_config, DataConfig, Diagnostic, ExperimentConfig, FineTuneConfig, ScoringConfig};
pub use world::{
    add_test_noise, build_scene_sets, calibrate_clean, fine_tune, frame_targets, generate_scenes, AugmentationRecord, FineTuneRecipe,
    SceneSets, TuningSetup, World,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{LlmClient, NoisePool, NoiseSelector, RandomSelector, RuleSelector, SnrPolicy, LLM_ENDPOINT_ENV};
use crate::error::{Error, Result};
use crate::events::tsv::{write_detection_tsv, write_strong_tsv, OperatingPoints};
use crate::events::{frames_to_events, weak_from_strong, ClipPrediction, FrameGrid, Timeline, WeakLabel};
use crate::metrics::plot::{bars_svg, roc_svg};
use crate::metrics::{aggregate_partial, linspace, macro_recall, psds, render_tsv, round_half_up, Condition, PsdsReport, PsdsResult};
use crate::model::{LassModelHandle, ReferenceLass, SedModelHandle, LASS_BACKEND_ENV, SED_BACKEND_ENV};
use crate::par::{self, Execution};
use crate::pipeline::{system_variant, ModelSet, PipelineConfig, SeparationProvenance, Variant};
use crate::synth::SceneSetManifest;

/// Separation record of one (system, condition, clip) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationRecord {
    pub condition: Condition,
    #[serde(flatten)]
    pub separation: SeparationProvenance,
    /// Clip-wise output of the query detector, when one ran.
    pub query_clipwise: Option<Vec<f64>>,
}

/// Both scenario scores of one report cell with their ROC points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDetail {
    pub variant: Variant,
    pub condition: Condition,
    pub p1: PsdsResult,
    pub p2: PsdsResult,
}

/// One row of the clip-wise recall table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub system: String,
    pub values: Vec<(Condition, f64)>,
}

impl RecallRow {
    pub fn get(&self, c: Condition) -> Option<f64> {
        self.values.iter().find(|(x, _)| *x == c).map(|&(_, v)| v)
    }
}

/// Everything a finished run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    /// Noise selector used for fine-tuning: `rule` or `llm`.
    pub selector: String,
    pub reports: Vec<PsdsReport>,
    pub details: Vec<CellDetail>,
    pub recall: Vec<RecallRow>,
}

impl RunOutcome {
    pub fn report(&self, v: Variant) -> Option<&PsdsReport> {
        let label = v.to_string();
        self.reports.iter().find(|r| r.variant == label)
    }

    /// Mean P1+P2 over the noisy conditions of `v`.
    pub fn noisy_average(&self, v: Variant) -> Option<f64> {
        self.report(v).and_then(|r| r.noisy_average)
    }

    pub fn recall(&self, system: &str) -> Option<&RecallRow> {
        self.recall.iter().find(|r| r.system == system)
    }
}

#[derive(Serialize)]
struct RunSummary<'a> {
    status: &'a str,
    error: Option<String>,
    seed: u64,
    selector: Option<&'a str>,
    selection_sources: BTreeMap<String, usize>,
    variants: Vec<Variant>,
    conditions: Vec<Condition>,
    sed_backend: Option<String>,
    lass_backend: Option<String>,
    files: Vec<String>,
}

fn env_or(v: &Option<String>, key: &str) -> Option<String> {
    v.clone().or_else(|| std::env::var(key).ok()).filter(|s| !s.trim().is_empty())
}

struct Writer {
    root: PathBuf,
    files: Vec<String>,
}

impl Writer {
    fn put(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, contents)?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn json(&mut self, rel: &str, v: &impl Serialize) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.put(rel, s)
    }

    fn jsonl<T: Serialize>(&mut self, rel: &str, items: &[T]) -> Result<()> {
        let mut s = String::new();
        for it in items {
            s.push_str(&serde_json::to_string(it)?);
            s.push('\n');
        }
        self.put(rel, s)
    }
}

/// Runs the whole experiment and writes every artifact under
/// `cfg.output_dir`. On failure `run_summary.json` is written with status
/// `failed` and the error, marking whatever was produced as partial.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")));
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let mut w = Writer { root: cfg.output_dir.clone(), files: Vec::new() };
    let _ = fs::remove_file(cfg.output_dir.join("run_summary.json"));
    let res = par::with_workers(cfg.workers.unwrap_or(0), || run_inner(cfg, &mut w));
    match res {
        Ok(out) => Ok(out),
        Err(e) => {
            let summary = RunSummary {
                status: "failed",
                error: Some(e.to_string()),
                seed: cfg.seed,
                selector: None,
                selection_sources: BTreeMap::new(),
                variants: cfg.variants.clone(),
                conditions: cfg.conditions.clone(),
                sed_backend: None,
                lass_backend: None,
                files: w.files.clone(),
            };
            let _ = w.json("run_summary.json", &summary);
            Err(e)
        }
    }
}

fn condition_file(c: Condition) -> String {
    match c {
        Condition::Clean => "clean_test".to_string(),
        Condition::Snr(_) => format!("noisy_{c}"),
    }
}

fn run_inner(cfg: &ExperimentConfig, w: &mut Writer) -> Result<RunOutcome> {
    let exec = cfg.execution;
    let mut timings: BTreeMap<String, f64> = BTreeMap::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, t: &mut BTreeMap<String, f64>| {
        t.insert(name.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let world = World::from_config(cfg)?;
    let names = world.targets();
    let sets = build_scene_sets(cfg, &world)?;
    w.json("scenes/calibration.json", &sets.calibration)?;
    w.json("scenes/clean_test.json", &sets.clean_test)?;
    for (snr, m) in &sets.noisy_test {
        w.json(&format!("scenes/{}.json", condition_file(Condition::Snr(*snr))), m)?;
    }
    let refs: Vec<Timeline> = sets.clean_test.scenes.iter().map(|e| e.scene.timeline().map(|t| t.normalized())).collect::<Result<_>>()?;
    w.put("scenes/test_metadata.tsv", write_strong_tsv(&refs))?;
    let mut durations = String::from("filename\tduration\n");
    for t in &refs {
        let _ = writeln!(durations, "{}\t{}", t.clip_id, t.clip_duration);
    }
    w.put("scenes/test_durations.tsv", durations)?;
    lap("scenes", &mut timings);

    // detectors
    let variants: Vec<Variant> = {
        let mut v = cfg.variants.clone();
        v.sort();
        v.dedup();
        v
    };
    let sed_backend = env_or(&cfg.sed_backend, SED_BACKEND_ENV);
    let lass_backend = env_or(&cfg.lass_backend, LASS_BACKEND_ENV);
    let llm_endpoint = cfg.fine_tune.llm.endpoint.clone().or_else(|| std::env::var(LLM_ENDPOINT_ENV).ok()).filter(|s| !s.trim().is_empty());
    let selector: Box<dyn NoiseSelector> = match &llm_endpoint {
        Some(ep) => {
            let mut c = cfg.fine_tune.llm.clone();
            c.endpoint = Some(ep.clone());
            c.fallback_env_tag = cfg.fine_tune.env_tag.clone();
            Box::new(LlmClient::from_config(c)?)
        }
        None => Box::new(RuleSelector { env_tag: cfg.fine_tune.env_tag.clone() }),
    };
    let random = RandomSelector;
    let mut aug_records = Vec::new();
    let handle = |sed: crate::model::ReferenceSed| -> Result<SedModelHandle> {
        let mut h = SedModelHandle::reference(names.clone(), sed)?;
        h.pooling = cfg.pooling;
        Ok(h)
    };
    let external = |addr: &str| SedModelHandle::external(names.clone(), addr, cfg.backend_pool_size);

    let clean_sed = match &sed_backend {
        Some(_) => None,
        None => Some(calibrate_clean(&world, &sets.calibration, &cfg.analysis, &cfg.calibration, exec)?),
    };
    let clean = match (&sed_backend, &clean_sed) {
        (Some(a), _) => Ok(external(a)),
        (None, Some(sed)) => handle(sed.clone()),
        (None, None) => unreachable!("clean model calibrated without a backend"),
    }?;
    lap("calibrate_clean", &mut timings);
    let needs_pool = sed_backend.is_none() && variants.iter().any(|v| matches!(v, Variant::Full | Variant::RandomSelection | Variant::NoCurriculum));
    let pool = if needs_pool { Some(NoisePool::synthetic(world.ontology.clone(), cfg.fine_tune.noise_clips_per_class, seed_of(cfg, "noise-pool"))?) } else { None };
    let (lo, hi) = cfg.fine_tune.random_snr_db;
    let curriculum = SnrPolicy::Curriculum(cfg.fine_tune.curriculum.clone());
    let uniform = SnrPolicy::UniformRandom { low_db: lo, high_db: hi, total_epochs: cfg.fine_tune.curriculum.total_epochs };
    let tune = |variant: Variant, recipe: FineTuneRecipe<'_>, records: &mut Vec<AugmentationRecord>| -> Result<Option<SedModelHandle>> {
        if !variants.contains(&variant) {
            return Ok(None);
        }
        if let Some(a) = &sed_backend {
            return Ok(Some(external(a)));
        }
        let pool = pool.as_ref().expect("pool built for fine-tuned variants");
        let initial = clean_sed.as_ref().expect("clean model calibrated locally");
        let tuning = TuningSetup { initial, params: &cfg.calibration, teacher_decay: cfg.fine_tune.teacher_decay };
        let (sed, recs) = fine_tune(&world, &sets.calibration, pool, &recipe, &cfg.analysis, &tuning, seed_of(cfg, "fine-tune"), exec)?;
        records.extend(recs);
        Ok(Some(handle(sed)?))
    };
    let fine_tuned = tune(Variant::Full, FineTuneRecipe { name: "fine_tuned", selector: selector.as_ref(), policy: curriculum.clone() }, &mut aug_records)?;
    let fine_tuned_random_selection =
        tune(Variant::RandomSelection, FineTuneRecipe { name: "fine_tuned_random_selection", selector: &random, policy: curriculum }, &mut aug_records)?;
    let fine_tuned_no_curriculum =
        tune(Variant::NoCurriculum, FineTuneRecipe { name: "fine_tuned_no_curriculum", selector: selector.as_ref(), policy: uniform }, &mut aug_records)?;
    lap("fine_tune", &mut timings);

    let lass = match &lass_backend {
        Some(a) => LassModelHandle::ExternalBackend(crate::model::ExternalModel::new(a.clone(), cfg.backend_pool_size)),
        None => LassModelHandle::ReferenceMask(ReferenceLass::from_prototypes(&names, &world.prototypes, &cfg.analysis, cfg.lass_skirt_hz)?),
    };
    let models = ModelSet { clean, fine_tuned, fine_tuned_random_selection, fine_tuned_no_curriculum, lass };
    w.json("models/sed_clean.json", &ModelFile(&models.clean))?;
    for (n, m) in [
        ("fine_tuned", &models.fine_tuned),
        ("fine_tuned_random_selection", &models.fine_tuned_random_selection),
        ("fine_tuned_no_curriculum", &models.fine_tuned_no_curriculum),
    ] {
        if let Some(m) = m {
            w.json(&format!("models/sed_{n}.json"), &ModelFile(m))?;
        }
    }
    w.json("models/lass.json", &ModelFile(&models.lass))?;
    w.jsonl("augmentation.jsonl", &aug_records)?;

    // evaluation grid
    let pcfg = PipelineConfig { analysis: cfg.analysis.clone(), query_threshold: cfg.query_threshold, final_model: cfg.final_model, exec: Execution::Sequential };
    let pipelines = variants.iter().map(|&v| system_variant(v, &models, &pcfg)).collect::<Result<Vec<_>>>()?;
    let mut conditions = cfg.conditions.clone();
    conditions.sort_by_key(|c| c.rank());
    let manifest = |c: Condition| -> &SceneSetManifest {
        match c {
            Condition::Clean => &sets.clean_test,
            Condition::Snr(s) => &sets.noisy_test[&s],
        }
    };
    let weak: Vec<WeakLabel> = refs.iter().map(weak_from_strong).collect();
    let items: Vec<(Condition, usize)> = conditions.iter().flat_map(|&c| (0..sets.clean_test.scenes.len()).map(move |i| (c, i))).collect();
    type CellOut = (FrameGrid, SeparationRecord);
    let per_item: Vec<Vec<CellOut>> = par::try_map(exec, &items, |&(c, i)| -> Result<Vec<CellOut>> {
        let entry = &manifest(c).scenes[i];
        let (audio, _) = entry.render(&world.prototypes)?;
        let id = &entry.scene.clip_id;
        pipelines
            .iter()
            .map(|p| {
                let o = p.run(&audio, id, Some(&weak[i]))?;
                Ok((o.frames, SeparationRecord { condition: c, separation: o.provenance, query_clipwise: o.query_clipwise.map(|q| q.probs) }))
            })
            .collect()
    })?;
    lap("evaluate", &mut timings);

    // regroup by (variant, condition), clips in id order
    let mut cells: BTreeMap<(Variant, usize), Vec<CellOut>> = BTreeMap::new();
    for cell in per_item.into_iter().flatten() {
        let v = cell.1.separation.variant.expect("pipelines tag their variant");
        cells.entry((v, cell.1.condition.rank())).or_default().push(cell);
    }
    for list in cells.values_mut() {
        list.sort_by(|a, b| a.0.clip_id.cmp(&b.0.clip_id));
    }
    let provenance: Vec<&SeparationRecord> = cells.values().flatten().map(|(_, r)| r).collect();
    w.jsonl("provenance.jsonl", &provenance)?;

    // PSDS per cell
    let sc = &cfg.scoring;
    let thresholds = linspace(sc.threshold_low, sc.threshold_high, sc.n_thresholds);
    let keys: Vec<(Variant, usize)> = cells.keys().copied().collect();
    let scored = par::try_map(exec, &keys, |key| -> Result<(CellDetail, OperatingPoints)> {
        let list = &cells[key];
        let condition = list[0].1.condition;
        let sweep = thresholds
            .iter()
            .map(|&th| Ok((th, list.iter().map(|(g, _)| frames_to_events(g, &names, th, sc.median_frames)).collect::<Result<Vec<_>>>()?)))
            .collect::<Result<Vec<_>>>()?;
        let p1 = psds(&sweep, &refs, &names, &sc.scenario1, Execution::Sequential)?;
        let p2 = psds(&sweep, &refs, &names, &sc.scenario2, Execution::Sequential)?;
        Ok((CellDetail { variant: key.0, condition, p1, p2 }, sweep))
    })?;
    lap("score", &mut timings);

    let mut details = Vec::new();
    for (d, sweep) in scored {
        w.put(&format!("detections/v{}_{}.tsv", d.variant.number(), d.condition), write_detection_tsv(&sweep))?;
        details.push(d);
    }
    let mut reports = Vec::new();
    for &v in &variants {
        let row: Vec<(Condition, f64, f64)> = details.iter().filter(|d| d.variant == v).map(|d| (d.condition, d.p1.value, d.p2.value)).collect();
        reports.push(aggregate_partial(&v.to_string(), &row)?);
    }
    w.put("report.tsv", render_tsv(&reports))?;

    // clip-wise recall of the query detectors; ground truth from the labels
    let mut recall = Vec::new();
    let truth: Vec<ClipPrediction> = weak
        .iter()
        .map(|l| ClipPrediction { clip_id: l.clip_id.clone(), probs: names.iter().map(|n| if l.contains(n) { 1.0 } else { 0.0 }).collect() })
        .collect();
    let truth_value = macro_recall(&truth, &weak, &names, sc.recall_threshold)?;
    recall.push(RecallRow { system: "ground truth".into(), values: conditions.iter().map(|&c| (c, truth_value)).collect() });
    for &v in &variants {
        let mut values = Vec::new();
        for &c in &conditions {
            let preds: Option<Vec<ClipPrediction>> = cells[&(v, c.rank())]
                .iter()
                .map(|(g, r)| r.query_clipwise.clone().map(|probs| ClipPrediction { clip_id: g.clip_id.clone(), probs }))
                .collect();
            if let Some(preds) = preds {
                values.push((c, macro_recall(&preds, &weak, &names, sc.recall_threshold)?));
            }
        }
        if !values.is_empty() {
            recall.push(RecallRow { system: v.to_string(), values });
        }
    }
    w.put("macro_recall.tsv", recall_tsv(&recall, &conditions))?;

    let selector_name = selector.name();
    let mut sources: BTreeMap<String, usize> = BTreeMap::new();
    for r in &aug_records {
        if let Some(s) = r.augmentation.selection_source {
            *sources.entry(format!("{}:{}", r.model, serde_json::to_value(s)?.as_str().unwrap_or_default())).or_default() += 1;
        }
    }
    w.json("report.json", &serde_json::json!({ "selector": selector_name, "reports": &reports, "cells": &details, "macro_recall": &recall }))?;

    // figures
    for &c in &conditions {
        for (tag, pick, e_max) in [("P1", 0usize, sc.scenario1.e_max), ("P2", 1, sc.scenario2.e_max)] {
            let curves: Vec<(String, Vec<(f64, f64)>)> = details
                .iter()
                .filter(|d| d.condition == c)
                .map(|d| {
                    let r = if pick == 0 { &d.p1 } else { &d.p2 };
                    (format!("{} {}", d.variant, d.variant.label()), r.staircase(e_max))
                })
                .collect();
            w.put(&format!("plots/roc_{tag}_{c}.svg"), roc_svg(&format!("PSDS {tag} ROC, {c}"), &curves, e_max))?;
        }
    }
    let groups: Vec<String> = conditions.iter().map(ToString::to_string).collect();
    let series: Vec<String> = recall.iter().map(|r| r.system.clone()).collect();
    let values: Vec<Vec<f64>> = recall.iter().map(|r| conditions.iter().map(|&c| r.get(c).unwrap_or(0.0)).collect()).collect();
    w.put("plots/macro_recall.svg", bars_svg("Clip-wise macro recall", &groups, &series, &values))?;
    lap("report", &mut timings);

    w.json("timings.json", &timings)?;
    let mut files = w.files.clone();
    files.push("run_summary.json".into());
    files.sort();
    let summary = RunSummary {
        status: "complete",
        error: None,
        seed: cfg.seed,
        selector: Some(selector_name),
        selection_sources: sources,
        variants: variants.clone(),
        conditions: conditions.clone(),
        sed_backend,
        lass_backend,
        files,
    };
    w.json("run_summary.json", &summary)?;
    Ok(RunOutcome { output_dir: cfg.output_dir.clone(), selector: selector_name.to_string(), reports, details, recall })
}

fn seed_of(cfg: &ExperimentConfig, purpose: &str) -> u64 {
    crate::seed::derive(cfg.seed, purpose, 0)
}

/// Versioned model file, same layout as the handles' own `save`.
struct ModelFile<'a, T>(&'a T);

impl<T: Serialize> Serialize for ModelFile<'_, T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("ModelFile", 2)?;
        st.serialize_field("version", &crate::model::MODEL_FILE_VERSION)?;
        st.serialize_field("model", self.0)?;
        st.end()
    }
}

fn recall_tsv(rows: &[RecallRow], conditions: &[Condition]) -> String {
    let mut s = String::from("system");
    for c in conditions {
        let _ = write!(s, "\t{c}");
    }
    s.push('\n');
    for r in rows {
        s.push_str(&r.system);
        for &c in conditions {
            match r.get(c) {
                Some(v) => {
                    let _ = write!(s, "\t{:.3}", round_half_up(v, 3));
                }
                None => s.push_str("\t-"),
            }
        }
        s.push('\n');
    }
    s
}

/// Reads a finished run's `report.tsv`.
pub fn read_report(dir: impl AsRef<Path>) -> Result<String> {
    Ok(fs::read_to_string(dir.as_ref().join("report.tsv"))?)
}
