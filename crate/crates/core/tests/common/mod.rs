//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code under test except for plain data types.
#![allow(dead_code)]

use nrsed::events::tsv::OperatingPoints;
use nrsed::events::{EventInstance, Timeline};
use nrsed::metrics::PsdsParams;
use rand::Rng;

pub fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn inter(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

/// Measure of `[lo, hi]` covered by `cover`, by elementary segments.
fn covered(lo: f64, hi: f64, cover: &[(f64, f64)]) -> f64 {
    let mut cuts = vec![lo, hi];
    for &(a, b) in cover {
        for x in [a, b] {
            if x > lo && x < hi {
                cuts.push(x);
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        if cover.iter().any(|&(a, b)| a <= mid && mid <= b) {
            total += w[1] - w[0];
        }
    }
    total
}

/// `(eFPR, effective TPR)` of one operating point, straight from the
/// definitions.
pub fn roc_point_oracle(dets: &[Timeline], refs: &[Timeline], classes: &[String], p: &PsdsParams) -> (f64, f64) {
    let n = classes.len();
    let cls = |e: &EventInstance| classes.iter().position(|c| *c == e.class_name).expect("known class");
    let (mut tp, mut nref, mut fp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut ct = vec![vec![0.0; n]; n];
    let mut hours = 0.0;
    for r in refs {
        hours += r.clip_duration / 3600.0;
        let ds: Vec<&EventInstance> = dets.iter().filter(|t| t.clip_id == r.clip_id).flat_map(|t| &t.events).collect();
        let cand: Vec<bool> = ds
            .iter()
            .map(|d| {
                let s: f64 = r.events.iter().filter(|g| cls(g) == cls(d)).map(|g| inter((d.onset, d.offset), (g.onset, g.offset))).sum();
                s / (d.offset - d.onset) >= p.rho_dtc
            })
            .collect();
        for g in &r.events {
            let c = cls(g);
            nref[c] += 1.0;
            let cover: Vec<(f64, f64)> = ds.iter().zip(&cand).filter(|(d, &k)| k && cls(d) == c).map(|(d, _)| (d.onset, d.offset)).collect();
            if covered(g.onset, g.offset, &cover) / (g.offset - g.onset) >= p.rho_gtc {
                tp[c] += 1.0;
            }
        }
        for (d, &k) in ds.iter().zip(&cand) {
            if k {
                continue;
            }
            let c = cls(d);
            let mut hit = false;
            for (c2, row) in ct[c].iter_mut().enumerate() {
                if c2 == c {
                    continue;
                }
                let s: f64 = r.events.iter().filter(|g| cls(g) == c2).map(|g| inter((d.onset, d.offset), (g.onset, g.offset))).sum();
                if s > 0.0 && s / (d.offset - d.onset) >= p.rho_cttc {
                    *row += 1.0;
                    hit = true;
                }
            }
            if !hit || p.alpha_ct == 0.0 {
                fp[c] += 1.0;
            }
        }
    }
    let mut efpr = 0.0;
    for c in 0..n {
        let cross = if n > 1 { (0..n).filter(|&k| k != c).map(|k| ct[c][k]).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        efpr += (fp[c] + p.alpha_ct * cross) / hours;
    }
    efpr /= n as f64;
    let tprs: Vec<f64> = (0..n).filter(|&c| nref[c] > 0.0).map(|c| tp[c] / nref[c]).collect();
    let m = tprs.iter().sum::<f64>() / tprs.len() as f64;
    let sd = (tprs.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / tprs.len() as f64).sqrt();
    (efpr, (m - p.alpha_st * sd).max(0.0))
}

/// PSDS by direct integration of `μ(e) = max{μ_j : e_j <= e}` (0 when no
/// point qualifies) over `[0, e_max)`.
pub fn psds_oracle(sweep: &[(f64, Vec<Timeline>)], refs: &[Timeline], classes: &[String], p: &PsdsParams) -> f64 {
    let pts: Vec<(f64, f64)> = sweep.iter().map(|(_, d)| roc_point_oracle(d, refs, classes, p)).collect();
    let mut xs: Vec<f64> = pts.iter().map(|q| q.0).filter(|&e| e < p.e_max).collect();
    xs.push(0.0);
    xs.push(p.e_max);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut area = 0.0;
    for w in xs.windows(2) {
        let mu = pts.iter().filter(|q| q.0 <= w[0]).map(|q| q.1).fold(0.0, f64::max);
        area += mu * (w[1] - w[0]);
    }
    area / p.e_max
}

/// A random sweep of at most 5 clips, 3 classes and 7 thresholds, with
/// disjoint same-class references and some detections copied (jittered)
/// from references.
pub fn random_psds_fixture(seed: u64) -> (OperatingPoints, Vec<Timeline>, Vec<String>) {
    let mut rng = nrsed::seed::rng(seed);
    let n_classes = rng.random_range(1..=3);
    let classes: Vec<String> = (0..n_classes).map(|c| format!("c{c}")).collect();
    let n_clips = rng.random_range(1..=5);
    let duration: f64 = 10.0;
    let mut refs = Vec::new();
    for k in 0..n_clips {
        let mut events = Vec::new();
        for c in &classes {
            // disjoint slots of 5 s
            for slot in 0..2 {
                if rng.random_bool(0.45) {
                    let on = slot as f64 * 5.0 + rng.random_range(0.0..2.0);
                    let off = on + rng.random_range(0.3..2.9);
                    events.push(EventInstance::new(c.as_str(), on, off));
                }
            }
        }
        refs.push(Timeline::new(format!("clip{k}"), duration, events).unwrap());
    }
    if refs.iter().all(|t| t.events.is_empty()) {
        refs[0] = Timeline::new("clip0", duration, vec![EventInstance::new(classes[0].as_str(), 1.0, 3.0)]).unwrap();
    }
    let n_th = rng.random_range(2..=7);
    let mut sweep = Vec::new();
    for i in 0..n_th {
        let th = (i + 1) as f64 / (n_th + 1) as f64;
        let mut dets = Vec::new();
        for r in &refs {
            let mut events = Vec::new();
            for g in &r.events {
                if rng.random_bool(0.6) {
                    let on = (g.onset + rng.random_range(-0.8..0.8)).max(0.0);
                    let off = (g.offset + rng.random_range(-0.8..0.8)).min(duration).max(on + 0.05);
                    let class = if rng.random_bool(0.15) { classes[rng.random_range(0..n_classes)].clone() } else { g.class_name.clone() };
                    events.push(EventInstance::new(class, on, off));
                }
            }
            for _ in 0..rng.random_range(0..3) {
                let on: f64 = rng.random_range(0.0..9.0);
                let off = (on + rng.random_range(0.1..3.0_f64)).min(duration);
                events.push(EventInstance::new(classes[rng.random_range(0..n_classes)].as_str(), on, off));
            }
            dets.push(Timeline::new(r.clip_id.clone(), duration, events).unwrap());
        }
        sweep.push((th, dets));
    }
    (sweep, refs, classes)
}

/// Perfect and empty sweeps over `refs`.
pub fn perfect_sweep(refs: &[Timeline], n: usize) -> Vec<(f64, Vec<Timeline>)> {
    (0..n).map(|i| (i as f64 / n as f64, refs.to_vec())).collect()
}

pub fn empty_sweep(refs: &[Timeline], n: usize) -> Vec<(f64, Vec<Timeline>)> {
    (0..n).map(|i| (i as f64 / n as f64, refs.iter().map(|r| Timeline::empty(r.clip_id.clone(), r.clip_duration)).collect())).collect()
}

pub fn mean_square(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in x {
        s += v * v;
    }
    s / x.len() as f64
}

pub fn snr_db_oracle(signal: &[f64], mixture: &[f64]) -> f64 {
    let noise: Vec<f64> = mixture.iter().zip(signal).map(|(m, s)| m - s).collect();
    10.0 * (mean_square(signal) / mean_square(&noise)).log10()
}

pub fn remix_oracle(tracks: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; tracks[0].len()];
    for (i, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for t in tracks {
            s += t[i];
        }
        *o = s / tracks.len() as f64;
    }
    out
}

/// Filter at `>= th`, then insertion-sort by descending probability keeping
/// the original order among equals.
pub fn query_oracle(probs: &[f64], classes: &[String], th: f64) -> Vec<String> {
    let mut keep: Vec<(f64, &String)> = probs.iter().copied().zip(classes).filter(|(p, _)| *p >= th).collect();
    for i in 1..keep.len() {
        let mut j = i;
        while j > 0 && keep[j - 1].0 < keep[j].0 {
            keep.swap(j - 1, j);
            j -= 1;
        }
    }
    keep.into_iter().map(|(_, c)| c.clone()).collect()
}

/// Mean frame BCE plus mean clip BCE, clamped at `eps`.
pub fn bce_oracle(ps: &[Vec<f64>], ys: &[Vec<f64>], pw: &[f64], yw: &[f64], eps: f64) -> f64 {
    let term = |p: f64, y: f64| {
        let p = p.max(eps).min(1.0 - eps);
        -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    };
    let mut strong = 0.0;
    let mut count = 0.0;
    for (pr, yr) in ps.iter().zip(ys) {
        for (p, y) in pr.iter().zip(yr) {
            strong += term(*p, *y);
            count += 1.0;
        }
    }
    let mut weak = 0.0;
    for (p, y) in pw.iter().zip(yw) {
        weak += term(*p, *y);
    }
    strong / count + weak / pw.len() as f64
}

/// Energy of `x` in `[lo_hz, hi_hz]` by a direct DFT over the bins inside
/// the band.
pub fn band_energy(x: &[f64], sample_rate: u32, lo_hz: f64, hi_hz: f64) -> f64 {
    let n = x.len();
    let df = f64::from(sample_rate) / n as f64;
    let k_lo = (lo_hz / df).ceil().max(1.0) as usize;
    let k_hi = ((hi_hz / df).floor() as usize).min(n / 2);
    let mut e = 0.0;
    for k in k_lo..=k_hi {
        let w = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            let a = w * t as f64;
            re += v * a.cos();
            im += v * a.sin();
        }
        e += re * re + im * im;
    }
    e
}
