//! Polyphonic detection scoring (PSDS), clip-level macro recall and report
//! aggregation.

pub mod plot;
pub mod report;

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use report::{aggregate_partial, aggregate_report, render_json, render_tsv, round_half_up, CellScore, Condition, PsdsReport};

use crate::error::{Error, Result};
use crate::events::{ClipPrediction, EventInstance, Timeline, WeakLabel};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdsParams {
    pub rho_dtc: f64,
    pub rho_gtc: f64,
    pub rho_cttc: f64,
    pub alpha_ct: f64,
    pub alpha_st: f64,
    /// Upper integration limit, false positives per hour.
    pub e_max: f64,
}

impl PsdsParams {
    /// Localization-focused setting.
    pub fn scenario1() -> Self {
        Self { rho_dtc: 0.7, rho_gtc: 0.7, rho_cttc: 0.3, alpha_ct: 0.0, alpha_st: 1.0, e_max: 100.0 }
    }

    /// Confusion-focused setting.
    pub fn scenario2() -> Self {
        Self { rho_dtc: 0.1, rho_gtc: 0.1, rho_cttc: 0.3, alpha_ct: 0.5, alpha_st: 1.0, e_max: 100.0 }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [("rho_dtc", self.rho_dtc), ("rho_gtc", self.rho_gtc), ("rho_cttc", self.rho_cttc)] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        for (name, v) in [("alpha_ct", self.alpha_ct), ("alpha_st", self.alpha_st)] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("{name} must be >= 0, got {v}"));
            }
        }
        if !(self.e_max > 0.0 && self.e_max.is_finite()) {
            out.push(format!("e_max must be > 0, got {}", self.e_max));
        }
        out
    }
}

/// Counts at one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPointStats {
    pub tp: Vec<usize>,
    pub n_refs: Vec<usize>,
    pub fp: Vec<usize>,
    /// `ct[[c, c2]]`: detections of `c` that cross-trigger on references of `c2`.
    pub ct: Array2<usize>,
    pub duration_hours: f64,
}

fn overlap(a: &EventInstance, b: &EventInstance) -> f64 {
    (a.offset.min(b.offset) - a.onset.max(b.onset)).max(0.0)
}

/// Total length of the union of intervals.
fn union_length(mut iv: Vec<(f64, f64)>) -> f64 {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (s, e) in iv {
        match &mut cur {
            Some((_, ce)) if s <= *ce => *ce = ce.max(e),
            _ => {
                if let Some((cs, ce)) = cur {
                    total += ce - cs;
                }
                cur = Some((s, e));
            }
        }
    }
    total + cur.map_or(0.0, |(s, e)| e - s)
}

fn check_references(refs: &[Timeline]) -> Result<()> {
    for t in refs {
        if t.has_same_class_overlap() {
            return Err(Error::BadReference(format!("clip {} has overlapping references of one class", t.clip_id)));
        }
    }
    Ok(())
}

fn class_lookup(class_names: &[String]) -> HashMap<&str, usize> {
    class_names.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect()
}

fn class_of(lookup: &HashMap<&str, usize>, e: &EventInstance) -> Result<usize> {
    lookup.get(e.class_name.as_str()).copied().ok_or_else(|| Error::UnknownClass(e.class_name.clone()))
}

/// Stats of one clip (or of nothing, when the clip has no detections).
fn match_clip(dets: &[EventInstance], refs: &[EventInstance], lookup: &HashMap<&str, usize>, params: &PsdsParams) -> Result<OperatingPointStats> {
    let n = lookup.len();
    let mut s = OperatingPointStats { tp: vec![0; n], n_refs: vec![0; n], fp: vec![0; n], ct: Array2::zeros((n, n)), duration_hours: 0.0 };
    let ref_cls = refs.iter().map(|r| class_of(lookup, r)).collect::<Result<Vec<_>>>()?;
    let det_cls = dets.iter().map(|d| class_of(lookup, d)).collect::<Result<Vec<_>>>()?;
    let mut candidate = vec![false; dets.len()];
    for (i, d) in dets.iter().enumerate() {
        let inter: f64 = refs.iter().zip(&ref_cls).filter(|(_, &c)| c == det_cls[i]).map(|(r, _)| overlap(d, r)).sum();
        candidate[i] = inter / d.duration() >= params.rho_dtc;
    }
    for (r, &c) in refs.iter().zip(&ref_cls) {
        s.n_refs[c] += 1;
        let hits: Vec<(f64, f64)> = dets
            .iter()
            .enumerate()
            .filter(|&(i, _)| candidate[i] && det_cls[i] == c)
            .map(|(_, d)| (d.onset.max(r.onset), d.offset.min(r.offset)))
            .filter(|(a, b)| b > a)
            .collect();
        if union_length(hits) / r.duration() >= params.rho_gtc {
            s.tp[c] += 1;
        }
    }
    for (i, d) in dets.iter().enumerate() {
        if candidate[i] {
            continue;
        }
        let c = det_cls[i];
        let mut triggered = false;
        for c2 in (0..n).filter(|&c2| c2 != c) {
            let inter: f64 = refs.iter().zip(&ref_cls).filter(|(_, &k)| k == c2).map(|(r, _)| overlap(d, r)).sum();
            if inter > 0.0 && inter / d.duration() >= params.rho_cttc {
                s.ct[[c, c2]] += 1;
                triggered = true;
            }
        }
        if !(triggered && params.alpha_ct > 0.0) {
            s.fp[c] += 1;
        }
    }
    Ok(s)
}

impl OperatingPointStats {
    fn absorb(&mut self, o: &OperatingPointStats) {
        for c in 0..self.tp.len() {
            self.tp[c] += o.tp[c];
            self.n_refs[c] += o.n_refs[c];
            self.fp[c] += o.fp[c];
        }
        self.ct += &o.ct;
    }

    /// `(eFPR, effective TPR)` under `params`.
    pub fn roc_point(&self, params: &PsdsParams) -> (f64, f64) {
        let n = self.tp.len();
        let h = self.duration_hours;
        let mut efpr = 0.0;
        for c in 0..n {
            let ct_rate = if n > 1 { (0..n).filter(|&k| k != c).map(|k| self.ct[[c, k]] as f64).sum::<f64>() / (n - 1) as f64 / h } else { 0.0 };
            efpr += self.fp[c] as f64 / h + params.alpha_ct * ct_rate;
        }
        efpr /= n as f64;
        let tprs: Vec<f64> = (0..n).filter(|&c| self.n_refs[c] > 0).map(|c| self.tp[c] as f64 / self.n_refs[c] as f64).collect();
        let k = tprs.len() as f64;
        let mean = tprs.iter().sum::<f64>() / k;
        let var = tprs.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / k;
        (efpr, (mean - params.alpha_st * var.sqrt()).max(0.0))
    }
}

/// Matches detections against references for every clip of `refs`.
/// Detection clips absent from `refs` are rejected.
pub fn match_operating_point(dets: &[Timeline], refs: &[Timeline], class_names: &[String], params: &PsdsParams) -> Result<OperatingPointStats> {
    check_references(refs)?;
    let lookup = class_lookup(class_names);
    let by_clip: BTreeMap<&str, &Timeline> = dets.iter().map(|t| (t.clip_id.as_str(), t)).collect();
    if let Some(extra) = by_clip.keys().find(|k| !refs.iter().any(|r| r.clip_id == **k)) {
        return Err(Error::BadParameter(format!("detections for clip {extra} without references")));
    }
    let n = class_names.len();
    let mut total = OperatingPointStats { tp: vec![0; n], n_refs: vec![0; n], fp: vec![0; n], ct: Array2::zeros((n, n)), duration_hours: 0.0 };
    for r in refs {
        let d = by_clip.get(r.clip_id.as_str()).map_or(&[][..], |t| t.events.as_slice());
        total.absorb(&match_clip(d, &r.events, &lookup, params)?);
        total.duration_hours += r.clip_duration / 3600.0;
    }
    Ok(total)
}

/// PSDS value with the ROC support points it was integrated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdsResult {
    pub value: f64,
    /// `(threshold, eFPR, effective TPR)` per operating point.
    pub points: Vec<(f64, f64, f64)>,
}

impl PsdsResult {
    /// Upper staircase `(e, μ)` from `(0, 0)` to `e_max`.
    pub fn staircase(&self, e_max: f64) -> Vec<(f64, f64)> {
        staircase(self.points.iter().map(|&(_, e, m)| (e, m)).collect(), e_max)
    }
}

fn staircase(mut pts: Vec<(f64, f64)>, e_max: f64) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut out = vec![(0.0, 0.0)];
    let mut best = 0.0;
    for (e, m) in pts {
        if e >= e_max {
            break;
        }
        if m > best {
            best = m;
            out.push((e, m));
        }
    }
    out
}

fn integrate(steps: &[(f64, f64)], e_max: f64) -> f64 {
    let mut area = 0.0;
    for (i, &(e, m)) in steps.iter().enumerate() {
        let next = steps.get(i + 1).map_or(e_max, |s| s.0);
        area += m * (next - e);
    }
    (area / e_max).clamp(0.0, 1.0)
}

/// PSDS over a threshold sweep.
pub fn psds(
    per_threshold: &[(f64, Vec<Timeline>)],
    refs: &[Timeline],
    class_names: &[String],
    params: &PsdsParams,
    exec: Execution,
) -> Result<PsdsResult> {
    if per_threshold.len() < 2 {
        return Err(Error::BadParameter(format!("psds needs at least 2 operating points, got {}", per_threshold.len())));
    }
    if refs.iter().all(|t| t.events.is_empty()) {
        return Err(Error::BadReference("no reference events".into()));
    }
    let problems = params.validate();
    if !problems.is_empty() {
        return Err(Error::BadParameter(problems.join("; ")));
    }
    let stats = par::try_map(exec, per_threshold, |(th, dets)| {
        match_operating_point(dets, refs, class_names, params).map(|s| {
            let (e, m) = s.roc_point(params);
            (*th, e, m)
        })
    })?;
    let value = integrate(&staircase(stats.iter().map(|&(_, e, m)| (e, m)).collect(), params.e_max), params.e_max);
    Ok(PsdsResult { value, points: stats })
}

/// Sweep thresholds `n` values evenly spaced over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Mean over classes with at least one positive of the clip-level recall at
/// `prob >= threshold`.
pub fn macro_recall(preds: &[ClipPrediction], labels: &[WeakLabel], class_names: &[String], threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::BadParameter(format!("threshold must be in (0, 1), got {threshold}")));
    }
    let by_clip: HashMap<&str, &ClipPrediction> = preds.iter().map(|p| (p.clip_id.as_str(), p)).collect();
    let n = class_names.len();
    let (mut tp, mut pos) = (vec![0usize; n], vec![0usize; n]);
    for l in labels {
        let p = by_clip.get(l.clip_id.as_str()).ok_or_else(|| Error::BadParameter(format!("no prediction for clip {}", l.clip_id)))?;
        if p.probs.len() != n {
            return Err(Error::ShapeMismatch(format!("{} probabilities for {n} classes", p.probs.len())));
        }
        for (c, name) in class_names.iter().enumerate() {
            if l.contains(name) {
                pos[c] += 1;
                tp[c] += usize::from(p.probs[c] >= threshold);
            }
        }
    }
    let recalls: Vec<f64> = (0..n).filter(|&c| pos[c] > 0).map(|c| tp[c] as f64 / pos[c] as f64).collect();
    if recalls.is_empty() {
        return Err(Error::Undefined("macro recall without positive labels".into()));
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    fn tl(id: &str, ev: &[(&str, f64, f64)]) -> Timeline {
        Timeline::new(id, 10.0, ev.iter().map(|&(c, s, e)| EventInstance::new(c, s, e)).collect()).unwrap()
    }

    #[test]
    fn perfect_overlap_is_tp() {
        let r = [tl("x", &[("a", 0.0, 10.0)])];
        let s = match_operating_point(&r, &r, &names(), &PsdsParams::scenario1()).unwrap();
        assert_eq!((s.tp[0], s.fp[0]), (1, 0));
    }

    #[test]
    fn short_detection_contrasts_scenarios() {
        let r = [tl("x", &[("a", 0.0, 10.0)])];
        let d = [tl("x", &[("a", 0.0, 1.0)])];
        let s1 = match_operating_point(&d, &r, &names(), &PsdsParams::scenario1()).unwrap();
        assert_eq!((s1.tp[0], s1.fp[0]), (0, 0));
        let s2 = match_operating_point(&d, &r, &names(), &PsdsParams::scenario2()).unwrap();
        assert_eq!(s2.tp[0], 1);
    }

    #[test]
    fn isolated_detection_is_fp_and_cross_trigger() {
        let r = [tl("x", &[("a", 0.0, 2.0), ("b", 5.0, 9.0)])];
        let d = [tl("x", &[("a", 5.0, 8.0)])];
        let s1 = match_operating_point(&d, &r, &names(), &PsdsParams::scenario1()).unwrap();
        assert_eq!((s1.fp[0], s1.ct[[0, 1]]), (1, 1));
        let s2 = match_operating_point(&d, &r, &names(), &PsdsParams::scenario2()).unwrap();
        assert_eq!((s2.fp[0], s2.ct[[0, 1]]), (0, 1));
    }

    #[test]
    fn overlapping_references_rejected() {
        let r = [tl("x", &[("a", 0.0, 5.0), ("a", 4.0, 6.0)])];
        assert!(matches!(match_operating_point(&[], &r, &names(), &PsdsParams::scenario1()), Err(Error::BadReference(_))));
    }

    #[test]
    fn boundary_values() {
        let r = vec![tl("x", &[("a", 0.0, 3.0), ("b", 4.0, 9.0)]), tl("y", &[("b", 1.0, 2.0)])];
        let perfect: Vec<(f64, Vec<Timeline>)> = linspace(0.1, 0.9, 5).into_iter().map(|t| (t, r.clone())).collect();
        let empty: Vec<(f64, Vec<Timeline>)> = linspace(0.1, 0.9, 5).into_iter().map(|t| (t, vec![])).collect();
        for p in [PsdsParams::scenario1(), PsdsParams::scenario2()] {
            assert!((psds(&perfect, &r, &names(), &p, Execution::Sequential).unwrap().value - 1.0).abs() < 1e-9);
            assert_eq!(psds(&empty, &r, &names(), &p, Execution::Sequential).unwrap().value, 0.0);
        }
        assert!(psds(&perfect[..1], &r, &names(), &PsdsParams::scenario1(), Execution::Sequential).is_err());
        let none = vec![tl("x", &[])];
        assert!(matches!(psds(&empty, &none, &names(), &PsdsParams::scenario1(), Execution::Sequential), Err(Error::BadReference(_))));
    }

    #[test]
    fn staircase_integral_by_hand() {
        // (0,0) → μ=0.5 from e=10, μ=0.8 from e=40, flat to 100
        let steps = staircase(vec![(40.0, 0.8), (10.0, 0.5), (60.0, 0.6), (150.0, 1.0)], 100.0);
        assert_eq!(steps, vec![(0.0, 0.0), (10.0, 0.5), (40.0, 0.8)]);
        assert!((integrate(&steps, 100.0) - (0.5 * 30.0 + 0.8 * 60.0) / 100.0).abs() < 1e-12);
    }

    #[test]
    fn macro_recall_cases() {
        let n = names();
        let labels = vec![WeakLabel::new("x", ["a"]), WeakLabel::new("y", ["a", "b"])];
        let perfect = vec![ClipPrediction { clip_id: "x".into(), probs: vec![1.0, 0.0] }, ClipPrediction { clip_id: "y".into(), probs: vec![1.0, 1.0] }];
        assert_eq!(macro_recall(&perfect, &labels, &n, 0.5).unwrap(), 1.0);
        let zero = vec![ClipPrediction { clip_id: "x".into(), probs: vec![0.0; 2] }, ClipPrediction { clip_id: "y".into(), probs: vec![0.0; 2] }];
        assert_eq!(macro_recall(&zero, &labels, &n, 0.5).unwrap(), 0.0);
        let half = vec![ClipPrediction { clip_id: "x".into(), probs: vec![0.2, 0.0] }, ClipPrediction { clip_id: "y".into(), probs: vec![0.6, 0.7] }];
        assert!((macro_recall(&half, &labels, &n, 0.5).unwrap() - 0.75).abs() < 1e-12);
        let none = vec![WeakLabel::new("x", Vec::<String>::new())];
        assert!(matches!(macro_recall(&perfect, &none, &n, 0.5), Err(Error::Undefined(_))));
    }
}
