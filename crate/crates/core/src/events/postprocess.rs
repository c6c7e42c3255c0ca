use ndarray::Array2;

use super::{EventInstance, FrameGrid, Timeline};
use crate::error::{Error, Result};

/// Median filter on a binary sequence with zero padding at both ends.
pub fn binary_median_filter(x: &[bool], len: usize) -> Result<Vec<bool>> {
    if len == 0 || len.is_multiple_of(2) {
        return Err(Error::BadParameter(format!("median filter length must be odd, got {len}")));
    }
    let half = len / 2;
    let mut ones = 0usize;
    // running count over the window [i - half, i + half]
    for &v in x.iter().take(half) {
        ones += usize::from(v);
    }
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        if let Some(&v) = x.get(i + half) {
            ones += usize::from(v);
        }
        out.push(ones > half);
        if i >= half {
            ones -= usize::from(x[i - half]);
        }
    }
    Ok(out)
}

/// Thresholds, median-filters and run-merges a frame grid into events.
///
/// A run of active frames `[start, end]` becomes an event
/// `[start·hop, (end+1)·hop]`, clipped to the clip duration.
pub fn frames_to_events(g: &FrameGrid, class_names: &[String], threshold: f64, median_frames: usize) -> Result<Timeline> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::BadParameter(format!("threshold must be in (0, 1), got {threshold}")));
    }
    if median_frames.is_multiple_of(2) {
        return Err(Error::BadParameter(format!("median filter length must be odd, got {median_frames}")));
    }
    if class_names.len() != g.n_classes() {
        return Err(Error::ShapeMismatch(format!("{} class names for {} columns", class_names.len(), g.n_classes())));
    }
    let hop = g.frame_hop_seconds;
    let mut events = Vec::new();
    for (c, name) in class_names.iter().enumerate() {
        let bin: Vec<bool> = g.probs.column(c).iter().map(|&p| p >= threshold).collect();
        let filt = binary_median_filter(&bin, median_frames)?;
        let mut t = 0;
        while t < filt.len() {
            if !filt[t] {
                t += 1;
                continue;
            }
            let start = t;
            while t < filt.len() && filt[t] {
                t += 1;
            }
            let onset = start as f64 * hop;
            let offset = (t as f64 * hop).min(g.clip_duration);
            if offset > onset {
                events.push(EventInstance::new(name.clone(), onset, offset));
            }
        }
    }
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.class_name.cmp(&b.class_name)));
    Timeline::new(g.clip_id.clone(), g.clip_duration, events)
}

/// `{0,1}` frame targets: frame `t` is active for a class when the midpoint of
/// `[t·hop + lead, (t+1)·hop + lead)` lies inside one of its events.
pub fn render_frame_labels(t: &Timeline, class_names: &[String], n_frames: usize, hop: f64, lead: f64) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((n_frames, class_names.len()));
    for e in &t.events {
        let c = class_names
            .iter()
            .position(|n| *n == e.class_name)
            .ok_or_else(|| Error::UnknownClass(e.class_name.clone()))?;
        for f in 0..n_frames {
            let mid = (f as f64 + 0.5) * hop + lead;
            if mid >= e.onset && mid < e.offset {
                out[[f, c]] = 1.0;
            }
        }
    }
    Ok(out)
}
