use ndarray::{s, Array1, Array2, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::audio::{Spectrogram, SpectrogramKind};
use crate::error::{Error, Result};
use crate::model::loss::ema_update;
use crate::par::{self, Execution};

/// Template detector: frame probability for class `c` is
/// `sigmoid(slope * cos(f(frame), template_c) + bias_c)` where `f` raises the
/// mel power plus `mel_floor` to `feature_exponent`. Frames whose mel power
/// sum is below `energy_floor` score a cosine of zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSed {
    /// N×F, rows L2-normalized.
    pub templates: Array2<f64>,
    pub slope: f64,
    pub bias: Vec<f64>,
    pub feature_exponent: f64,
    pub energy_floor: f64,
    /// Constant added to every mel bin; quiet frames flatten towards it.
    #[serde(default)]
    pub mel_floor: f64,
    /// Clip head: the clip score of class `c` is the mean of its `clip_top_k`
    /// largest frame cosines, mapped through `sigmoid(slope * s + clip_bias_c)`.
    /// An empty `clip_bias` means no clip head.
    #[serde(default)]
    pub clip_top_k: usize,
    #[serde(default)]
    pub clip_bias: Vec<f64>,
}

/// Mean of the `k` largest values (all of them when fewer).
fn top_k_mean(values: impl Iterator<Item = f64>, k: usize) -> f64 {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return 0.0;
    }
    let k = k.clamp(1, v.len());
    v.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    v[..k].iter().sum::<f64>() / k as f64
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Compressed feature of one mel frame, or `None` for a silent frame.
fn feature(frame: ArrayView1<'_, f64>, exponent: f64, floor: f64, mel_floor: f64) -> Option<Array1<f64>> {
    if frame.sum() < floor {
        return None;
    }
    let f = frame.mapv(|v| (v.max(0.0) + mel_floor).powf(exponent));
    let norm = f.dot(&f).sqrt();
    (norm > 0.0).then(|| f / norm)
}

impl ReferenceSed {
    pub fn n_classes(&self) -> usize {
        self.templates.nrows()
    }

    /// Per-class decision threshold on the cosine, `-bias / slope`.
    pub fn thresholds(&self) -> Vec<f64> {
        self.bias.iter().map(|b| -b / self.slope).collect()
    }

    fn check_input(&self, x: &Spectrogram) -> Result<()> {
        if x.kind != SpectrogramKind::Mel {
            return Err(Error::ShapeMismatch("reference detector expects a mel spectrogram".into()));
        }
        if x.n_bins() != self.templates.ncols() {
            return Err(Error::ShapeMismatch(format!("{} mel bins, templates have {}", x.n_bins(), self.templates.ncols())));
        }
        Ok(())
    }

    /// T×N cosine similarities.
    pub fn cosines(&self, x: &Spectrogram) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(cosines(&x.values, &self.templates, self.feature_exponent, self.energy_floor, self.mel_floor))
    }

    /// T×N frame probabilities.
    pub fn frame_probs(&self, x: &Spectrogram) -> Result<Array2<f64>> {
        Ok(self.frame_and_clip_probs(x)?.0)
    }

    pub fn has_clip_head(&self) -> bool {
        self.clip_bias.len() == self.n_classes()
    }

    /// Frame probabilities and, when the model has one, the clip head output.
    pub fn frame_and_clip_probs(&self, x: &Spectrogram) -> Result<(Array2<f64>, Option<Vec<f64>>)> {
        let mut cos = self.cosines(x)?;
        let clip = self.has_clip_head().then(|| {
            cos.columns()
                .into_iter()
                .zip(&self.clip_bias)
                .map(|(col, b)| sigmoid(self.slope * top_k_mean(col.iter().copied(), self.clip_top_k) + b))
                .collect()
        });
        for mut row in cos.rows_mut() {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v = sigmoid(self.slope * *v + b);
            }
        }
        Ok((cos, clip))
    }
}

fn cosines(mel: &Array2<f64>, templates: &Array2<f64>, exponent: f64, floor: f64, mel_floor: f64) -> Array2<f64> {
    let mut out = Array2::zeros((mel.nrows(), templates.nrows()));
    for (t, frame) in mel.rows().into_iter().enumerate() {
        if let Some(f) = feature(frame, exponent, floor, mel_floor) {
            out.row_mut(t).assign(&templates.dot(&f));
        }
    }
    out
}

/// Knobs of [`calibrate_reference_sed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationParams {
    pub slope: f64,
    /// Lower bound on every class threshold, so silence stays below 0.1.
    pub min_threshold: f64,
    pub feature_exponent: f64,
    pub energy_floor: f64,
    pub mel_floor: f64,
    /// Frames averaged by the clip head; 0 disables it.
    pub clip_top_k: usize,
    /// Weight of the hard-negative mean subtracted from each template; 0
    /// keeps plain active-frame means.
    pub hard_negative_weight: f64,
    /// Inactive frames within this many frames of an active one never count
    /// as hard negatives.
    pub hard_negative_guard: usize,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self { slope: 30.0, min_threshold: 0.1, feature_exponent: 0.5, energy_floor: 1e-8, mel_floor: 1.0, clip_top_k: 32, hard_negative_weight: 1.0, hard_negative_guard: 4 }
    }
}

/// One calibration example: mel spectrogram and T×N frame labels in {0,1}.
pub type CalibrationClip = (Spectrogram, Array2<f64>);

fn check_labels(x: &Spectrogram, y: &Array2<f64>, n: usize) -> Result<()> {
    if y.dim() != (x.n_frames(), n) {
        return Err(Error::ShapeMismatch(format!("labels {:?} vs {} frames × {n} classes", y.dim(), x.n_frames())));
    }
    Ok(())
}

/// Fits templates and per-class thresholds from `n_clips` examples produced
/// on demand by `clip(i)`. Examples are regenerated on every pass so nothing
/// but sums and scores is held in memory.
///
/// Templates are the normalized mean feature over active frames, followed by
/// one hard-negative step when `hard_negative_weight > 0`. Each threshold
/// maximizes frame-level balanced accuracy, floored at `min_threshold`;
/// clip-head thresholds do the same on clip scores against clip-level
/// presence.
pub fn calibrate_reference_sed<F>(
    n_clips: usize,
    clip: F,
    class_names: &[String],
    params: &CalibrationParams,
    exec: Execution,
) -> Result<ReferenceSed>
where
    F: Fn(usize) -> Result<CalibrationClip> + Sync,
{
    let n = class_names.len();
    let idx: Vec<usize> = (0..n_clips).collect();

    let partial = par::try_map(exec, &idx, |&i| -> Result<(Array2<f64>, Vec<usize>)> {
        let (x, y) = clip(i)?;
        check_labels(&x, &y, n)?;
        let mut sums = Array2::zeros((n, x.n_bins()));
        let mut counts = vec![0usize; n];
        for (t, frame) in x.values.rows().into_iter().enumerate() {
            let Some(f) = feature(frame, params.feature_exponent, params.energy_floor, params.mel_floor) else { continue };
            for c in 0..n {
                if y[[t, c]] > 0.5 {
                    sums.row_mut(c).scaled_add(1.0, &f);
                    counts[c] += 1;
                }
            }
        }
        Ok((sums, counts))
    })?;
    let Some(n_bins) = partial.first().map(|(s, _)| s.ncols()) else {
        return Err(Error::Calibration(class_names.first().cloned().unwrap_or_default()));
    };
    let mut templates = Array2::<f64>::zeros((n, n_bins));
    let mut counts = vec![0usize; n];
    for (s, k) in &partial {
        if s.ncols() != n_bins {
            return Err(Error::ShapeMismatch("calibration clips disagree on mel bins".into()));
        }
        templates += s;
        counts.iter_mut().zip(k).for_each(|(a, b)| *a += b);
    }
    for (c, mut row) in templates.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if counts[c] == 0 || norm == 0.0 {
            return Err(Error::Calibration(class_names[c].clone()));
        }
        row /= norm;
    }
    if params.hard_negative_weight > 0.0 {
        templates = rocchio_step(&idx, &clip, &templates, params, exec)?;
    }
    fit_thresholds(&idx, &clip, templates, params, exec)
}

/// Sequential recalibration of `initial` over `epochs` consecutive blocks of
/// `clips_per_epoch` examples. Each block yields a student template set by one
/// hard-negative step against the current teacher; the teacher follows by
/// [`ema_update`] with `teacher_decay` and row renormalization. Thresholds are
/// refitted on every example under the final teacher.
pub fn refine_reference_sed<F>(
    initial: &ReferenceSed,
    epochs: usize,
    clips_per_epoch: usize,
    clip: F,
    params: &CalibrationParams,
    teacher_decay: f64,
    exec: Execution,
) -> Result<ReferenceSed>
where
    F: Fn(usize) -> Result<CalibrationClip> + Sync,
{
    if (initial.feature_exponent, initial.energy_floor, initial.mel_floor)
        != (params.feature_exponent, params.energy_floor, params.mel_floor)
    {
        return Err(Error::BadParameter("refinement must keep the initial model's feature settings".into()));
    }
    if epochs == 0 || clips_per_epoch == 0 {
        return Err(Error::BadParameter("refinement needs at least one epoch of examples".into()));
    }
    let mut teacher = initial.templates.clone();
    for e in 0..epochs {
        let idx: Vec<usize> = (e * clips_per_epoch..(e + 1) * clips_per_epoch).collect();
        let student = rocchio_step(&idx, &clip, &teacher, params, exec)?;
        for (mut t, s) in teacher.axis_iter_mut(Axis(0)).zip(student.axis_iter(Axis(0))) {
            let mixed = Array1::from(ema_update(t.as_slice().expect("row-major"), s.as_slice().expect("row-major"), teacher_decay)?);
            let norm = mixed.dot(&mixed).sqrt();
            if norm > 0.0 {
                t.assign(&(mixed / norm));
            }
        }
    }
    let idx: Vec<usize> = (0..epochs * clips_per_epoch).collect();
    fit_thresholds(&idx, &clip, teacher, params, exec)
}

fn fit_thresholds<F>(idx: &[usize], clip: &F, templates: Array2<f64>, params: &CalibrationParams, exec: Execution) -> Result<ReferenceSed>
where
    F: Fn(usize) -> Result<CalibrationClip> + Sync,
{
    let n = templates.nrows();
    type ClassScores = (Vec<f64>, Vec<f64>, f64, bool);
    let scores = par::try_map(exec, idx, |&i| -> Result<Vec<ClassScores>> {
        let (x, y) = clip(i)?;
        check_labels(&x, &y, n)?;
        let cos = cosines(&x.values, &templates, params.feature_exponent, params.energy_floor, params.mel_floor);
        Ok((0..n)
            .map(|c| {
                let (mut pos, mut neg) = (Vec::new(), Vec::new());
                for t in 0..cos.nrows() {
                    if y[[t, c]] > 0.5 { pos.push(cos[[t, c]]) } else { neg.push(cos[[t, c]]) }
                }
                let present = !pos.is_empty();
                (pos, neg, top_k_mean(cos.column(c).iter().copied(), params.clip_top_k), present)
            })
            .collect())
    })?;
    let classes: Vec<usize> = (0..n).collect();
    let thresholds = par::map(exec, &classes, |&c| {
        let pos: Vec<f64> = scores.iter().flat_map(|s| s[c].0.iter().copied()).collect();
        let neg: Vec<f64> = scores.iter().flat_map(|s| s[c].1.iter().copied()).collect();
        balanced_accuracy_threshold(pos, neg).max(params.min_threshold)
    });
    let clip_thresholds: Vec<f64> = if params.clip_top_k == 0 {
        Vec::new()
    } else {
        classes
            .iter()
            .map(|&c| {
                let (pos, neg): (Vec<&ClassScores>, Vec<&ClassScores>) = scores.iter().map(|s| &s[c]).partition(|s| s.3);
                balanced_accuracy_threshold(pos.iter().map(|s| s.2).collect(), neg.iter().map(|s| s.2).collect()).max(params.min_threshold)
            })
            .collect()
    };
    Ok(ReferenceSed {
        templates,
        slope: params.slope,
        bias: thresholds.iter().map(|t| -params.slope * t).collect(),
        feature_exponent: params.feature_exponent,
        energy_floor: params.energy_floor,
        mel_floor: params.mel_floor,
        clip_top_k: params.clip_top_k,
        clip_bias: clip_thresholds.iter().map(|t| -params.slope * t).collect(),
    })
}

const HN_BINS: usize = 200;
const HN_CHUNK: usize = 16;

fn cos_bin(v: f64) -> usize {
    (((v + 1.0) * 0.5 * HN_BINS as f64) as usize).min(HN_BINS - 1)
}

/// Frames within `guard` of an active frame, per class.
fn guarded(y: &Array2<f64>, guard: usize) -> Array2<bool> {
    let (t_max, n) = y.dim();
    let mut near = Array2::from_elem((t_max, n), false);
    for c in 0..n {
        for t in (0..t_max).filter(|&t| y[[t, c]] > 0.5) {
            for u in t.saturating_sub(guard)..(t + guard + 1).min(t_max) {
                near[[u, c]] = true;
            }
        }
    }
    near
}

struct BlockStats {
    pos_hist: Array2<u64>,
    neg_hist: Array2<u64>,
    pos_sums: Array2<f64>,
    neg_sums: Array3<f64>,
}

impl BlockStats {
    fn zeros(n: usize, n_bins: usize) -> Self {
        Self {
            pos_hist: Array2::zeros((n, HN_BINS)),
            neg_hist: Array2::zeros((n, HN_BINS)),
            pos_sums: Array2::zeros((n, n_bins)),
            neg_sums: Array3::zeros((n, HN_BINS, n_bins)),
        }
    }

    fn add(&mut self, o: &Self) {
        self.pos_hist += &o.pos_hist;
        self.neg_hist += &o.neg_hist;
        self.pos_sums += &o.pos_sums;
        self.neg_sums += &o.neg_sums;
    }
}

/// Rocchio step: `t_c ← normalize(mean_active − w · mean_hard)`, where hard
/// negatives are inactive frames, outside the guard band, whose cosine with
/// `templates` clears the class's balanced-accuracy cut. Inactive features are
/// pooled per cosine bin so one pass yields both the cut and the mean above
/// it. Classes without active frames keep their row.
fn rocchio_step<F>(idx: &[usize], clip: &F, templates: &Array2<f64>, params: &CalibrationParams, exec: Execution) -> Result<Array2<f64>>
where
    F: Fn(usize) -> Result<CalibrationClip> + Sync,
{
    let (n, n_bins) = templates.dim();
    let mut total = BlockStats::zeros(n, n_bins);
    for chunk in idx.chunks(HN_CHUNK) {
        let parts = par::try_map(exec, chunk, |&i| -> Result<BlockStats> {
            let (x, y) = clip(i)?;
            check_labels(&x, &y, n)?;
            if x.n_bins() != n_bins {
                return Err(Error::ShapeMismatch(format!("{} mel bins vs templates with {n_bins}", x.n_bins())));
            }
            let mut st = BlockStats::zeros(n, n_bins);
            let near = guarded(&y, params.hard_negative_guard);
            for (t, frame) in x.values.rows().into_iter().enumerate() {
                let Some(f) = feature(frame, params.feature_exponent, params.energy_floor, params.mel_floor) else { continue };
                for c in 0..n {
                    let b = cos_bin(templates.row(c).dot(&f));
                    if y[[t, c]] > 0.5 {
                        st.pos_hist[[c, b]] += 1;
                        st.pos_sums.row_mut(c).scaled_add(1.0, &f);
                    } else if !near[[t, c]] {
                        st.neg_hist[[c, b]] += 1;
                        st.neg_sums.slice_mut(s![c, b, ..]).scaled_add(1.0, &f);
                    }
                }
            }
            Ok(st)
        })?;
        parts.iter().for_each(|p| total.add(p));
    }
    let mut out = templates.clone();
    for c in 0..n {
        let np = total.pos_hist.row(c).sum() as f64;
        let nn = total.neg_hist.row(c).sum() as f64;
        if np == 0.0 {
            continue;
        }
        let mut row = &total.pos_sums.row(c) / np;
        if nn > 0.0 {
            // lowest bin `cut` maximizing balanced accuracy of `bin >= cut`
            let (mut below_p, mut below_n) = (0.0, 0.0);
            let (mut cut, mut best) = (HN_BINS, 0.5);
            for b in 0..HN_BINS {
                let ba = 0.5 * ((np - below_p) / np + below_n / nn);
                if ba > best + 1e-12 {
                    best = ba;
                    cut = b;
                }
                below_p += total.pos_hist[[c, b]] as f64;
                below_n += total.neg_hist[[c, b]] as f64;
            }
            let hard = total.neg_hist.slice(s![c, cut..]).sum();
            if hard > 0 {
                let hard_mean = total.neg_sums.slice(s![c, cut.., ..]).sum_axis(Axis(0)) / hard as f64;
                row.scaled_add(-params.hard_negative_weight, &hard_mean);
            }
        }
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 && norm.is_finite() {
            out.row_mut(c).assign(&(row / norm));
        }
    }
    Ok(out)
}

/// Threshold `θ` maximizing `(TPR + TNR) / 2` for the rule `score > θ`,
/// placed halfway between adjacent distinct scores. Ties keep the lowest.
pub fn balanced_accuracy_threshold(mut pos: Vec<f64>, mut neg: Vec<f64>) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return 0.5;
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut values: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let (mut ip, mut ineg) = (0usize, 0usize);
    let (mut best, mut best_ba) = (values[0] - 1e-3, 0.5);
    for w in values.windows(2) {
        // scores <= w[0] fall below the candidate threshold
        while ip < pos.len() && pos[ip] <= w[0] {
            ip += 1;
        }
        while ineg < neg.len() && neg[ineg] <= w[0] {
            ineg += 1;
        }
        let ba = 0.5 * ((np - ip as f64) / np + ineg as f64 / nn);
        if ba > best_ba + 1e-12 {
            best_ba = ba;
            best = 0.5 * (w[0] + w[1]);
        }
    }
    best
}
