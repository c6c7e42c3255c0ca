//! DESED-style tab-separated metadata.
//!
//! Strong labels: `filename\tonset\toffset\tevent_label`, one row per event;
//! a clip without events is written as a row with the three trailing fields
//! empty. Weak labels: `filename\tevent_labels` with comma-separated classes.
//! Times are written with millisecond precision.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{EventInstance, Timeline, WeakLabel};
use crate::error::{Error, Result};

pub const STRONG_HEADER: &str = "filename\tonset\toffset\tevent_label";
pub const WEAK_HEADER: &str = "filename\tevent_labels";
/// Strong-label layout with one operating-point column, used for detections.
pub const DETECTION_HEADER: &str = "filename\tonset\toffset\tevent_label\tthreshold";

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
}

fn parse_time(s: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::Row { line, msg: format!("bad {what} `{s}`") })?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Row { line, msg: format!("{what} must be a non-negative number, got `{s}`") });
    }
    Ok(v)
}

struct Grouped {
    order: Vec<String>,
    events: HashMap<String, Vec<EventInstance>>,
}

impl Grouped {
    fn new() -> Self {
        Self { order: Vec::new(), events: HashMap::new() }
    }

    fn entry(&mut self, file: &str) -> &mut Vec<EventInstance> {
        if !self.events.contains_key(file) {
            self.order.push(file.to_string());
        }
        self.events.entry(file.to_string()).or_default()
    }

    fn into_timelines(mut self, durations: &dyn Fn(&str) -> Option<f64>, default_duration: f64) -> Result<Vec<Timeline>> {
        self.order
            .iter()
            .map(|f| {
                let events = self.events.remove(f).unwrap_or_default();
                let max_off = events.iter().map(|e| e.offset).fold(0.0, f64::max);
                let dur = durations(f).unwrap_or(default_duration).max(max_off);
                let t = Timeline::new(f.clone(), dur, events)?;
                Ok(if t.has_same_class_overlap() { t.normalized() } else { t })
            })
            .collect()
    }
}

fn parse_event_row(fields: &[&str], line: usize) -> Result<Option<EventInstance>> {
    if fields[1..4].iter().all(|f| f.trim().is_empty()) {
        return Ok(None);
    }
    let onset = parse_time(fields[1], line, "onset")?;
    let offset = parse_time(fields[2], line, "offset")?;
    if onset >= offset {
        return Err(Error::Row { line, msg: format!("onset {onset} >= offset {offset}") });
    }
    let label = fields[3].trim();
    if label.is_empty() {
        return Err(Error::Row { line, msg: "empty event_label".into() });
    }
    Ok(Some(EventInstance::new(label, onset, offset)))
}

/// Parses strong labels; clip durations come from `durations` when known,
/// otherwise `max(default_duration, last offset)`.
pub fn parse_strong_tsv_with(
    text: &str,
    durations: &dyn Fn(&str) -> Option<f64>,
    default_duration: f64,
) -> Result<Vec<Timeline>> {
    let mut it = lines(text);
    match it.next() {
        Some((_, h)) if h == STRONG_HEADER => {}
        _ => return Err(Error::Format(format!("missing header `{}`", STRONG_HEADER.replace('\t', "\\t")))),
    }
    let mut grouped = Grouped::new();
    for (line, l) in it {
        if l.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Row { line, msg: format!("expected 4 fields, got {}", fields.len()) });
        }
        let ev = parse_event_row(&fields, line)?;
        let slot = grouped.entry(fields[0]);
        slot.extend(ev);
    }
    grouped.into_timelines(durations, default_duration)
}

/// Parses strong labels with durations taken from the last offset per clip.
pub fn parse_strong_tsv(text: &str) -> Result<Vec<Timeline>> {
    parse_strong_tsv_with(text, &|_| None, 0.0)
}

fn fmt_time(t: f64) -> String {
    format!("{t:.3}")
}

pub fn write_strong_tsv(timelines: &[Timeline]) -> String {
    let mut s = String::from(STRONG_HEADER);
    s.push('\n');
    for t in timelines {
        if t.events.is_empty() {
            let _ = writeln!(s, "{}\t\t\t", t.clip_id);
        }
        for e in &t.events {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", t.clip_id, fmt_time(e.onset), fmt_time(e.offset), e.class_name);
        }
    }
    s
}

pub fn parse_weak_tsv(text: &str) -> Result<Vec<WeakLabel>> {
    let mut it = lines(text);
    match it.next() {
        Some((_, h)) if h == WEAK_HEADER => {}
        _ => return Err(Error::Format("missing header `filename\\tevent_labels`".into())),
    }
    let mut out = Vec::new();
    for (line, l) in it {
        if l.trim().is_empty() {
            continue;
        }
        let (file, labels) = l.split_once('\t').ok_or_else(|| Error::Row { line, msg: "expected 2 fields".into() })?;
        out.push(WeakLabel::new(file, labels.split(',').map(str::trim).filter(|s| !s.is_empty())));
    }
    Ok(out)
}

pub fn write_weak_tsv(labels: &[WeakLabel]) -> String {
    let mut s = String::from(WEAK_HEADER);
    s.push('\n');
    for w in labels {
        let _ = writeln!(s, "{}\t{}", w.clip_id, w.present.join(","));
    }
    s
}

/// Reads `filename\tduration` rows (DESED durations file).
pub fn parse_durations_tsv(text: &str) -> Result<HashMap<String, f64>> {
    let mut it = lines(text);
    match it.next() {
        Some((_, "filename\tduration")) => {}
        _ => return Err(Error::Format("missing header `filename\\tduration`".into())),
    }
    let mut out = HashMap::new();
    for (line, l) in it {
        if l.trim().is_empty() {
            continue;
        }
        let (f, d) = l.split_once('\t').ok_or_else(|| Error::Row { line, msg: "expected 2 fields".into() })?;
        out.insert(f.to_string(), parse_time(d, line, "duration")?);
    }
    Ok(out)
}

/// Detection sets keyed by operating point, as read from a detection file.
pub type OperatingPoints = Vec<(f64, Vec<Timeline>)>;

/// Parses detections with a trailing `threshold` column (one operating point
/// per distinct value) or a trailing `score` column (swept over `sweep`).
/// `clips` lists every evaluated clip with its duration, so clips without
/// detections still appear at every operating point.
pub fn parse_detection_tsv(text: &str, clips: &[(String, f64)], sweep: &[f64]) -> Result<OperatingPoints> {
    let mut it = lines(text);
    let header = it.next().map(|(_, h)| h).unwrap_or_default();
    let by_score = match header {
        h if h == DETECTION_HEADER => false,
        "filename\tonset\toffset\tevent_label\tscore" => true,
        _ => {
            return Err(Error::Format(
                "detections need header `filename\\tonset\\toffset\\tevent_label\\t(threshold|score)`".into(),
            ))
        }
    };
    let mut rows: Vec<(f64, String, EventInstance)> = Vec::new();
    for (line, l) in it {
        if l.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Row { line, msg: format!("expected 5 fields, got {}", fields.len()) });
        }
        let value: f64 =
            fields[4].trim().parse().map_err(|_| Error::Row { line, msg: format!("bad value `{}`", fields[4]) })?;
        if let Some(ev) = parse_event_row(&fields[..4], line)? {
            rows.push((value, fields[0].to_string(), ev));
        }
    }
    let thresholds: Vec<f64> = if by_score {
        sweep.to_vec()
    } else {
        let mut t: Vec<f64> = rows.iter().map(|r| r.0).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    };
    let mut out = Vec::with_capacity(thresholds.len());
    for &th in &thresholds {
        let mut per_clip: HashMap<&str, Vec<EventInstance>> = HashMap::new();
        for (v, file, ev) in &rows {
            let keep = if by_score { *v >= th } else { *v == th };
            if keep {
                per_clip.entry(file.as_str()).or_default().push(ev.clone());
            }
        }
        let mut set = Vec::with_capacity(clips.len());
        for (id, dur) in clips {
            let events = per_clip.remove(id.as_str()).unwrap_or_default();
            set.push(Timeline::new(id.clone(), *dur, events)?.normalized());
        }
        if let Some(extra) = per_clip.keys().next() {
            return Err(Error::Format(format!("detections for unknown clip `{extra}`")));
        }
        out.push((th, set));
    }
    Ok(out)
}

pub fn write_detection_tsv(points: &[(f64, Vec<Timeline>)]) -> String {
    let mut s = String::from(DETECTION_HEADER);
    s.push('\n');
    for (th, set) in points {
        for t in set {
            for e in &t.events {
                let _ = writeln!(s, "{}\t{}\t{}\t{}\t{th}", t.clip_id, fmt_time(e.onset), fmt_time(e.offset), e.class_name);
            }
        }
    }
    s
}
