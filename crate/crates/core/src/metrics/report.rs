use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Test conditions: the clean set and four noisy sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    Clean,
    Snr(i32),
}

impl Condition {
    pub const NOISY_SNRS: [i32; 4] = [10, 5, 0, -5];

    /// Clean first, then descending SNR.
    pub fn all() -> Vec<Condition> {
        std::iter::once(Condition::Clean).chain(Self::NOISY_SNRS.iter().map(|&s| Condition::Snr(s))).collect()
    }

    pub fn is_noisy(self) -> bool {
        matches!(self, Condition::Snr(_))
    }

    /// Position in [`Condition::all`] for ordering.
    pub fn rank(self) -> usize {
        match self {
            Condition::Clean => 0,
            Condition::Snr(s) => 1 + Self::NOISY_SNRS.iter().position(|&x| x == s).unwrap_or(Self::NOISY_SNRS.len()),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Clean => f.write_str("clean"),
            Condition::Snr(s) => write!(f, "snr{s}dB"),
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "clean" {
            return Ok(Condition::Clean);
        }
        s.strip_prefix("snr")
            .and_then(|r| r.strip_suffix("dB"))
            .and_then(|n| n.parse().ok())
            .map(Condition::Snr)
            .ok_or_else(|| Error::Config(format!("unknown condition `{s}`")))
    }
}

impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Half-up rounding to `decimals` places, robust to representation error
/// just below the halfway point (0.7345 stored as 0.73449999...).
pub fn round_half_up(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (x * scale + 0.5 + 1e-9).floor() / scale
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub variant: String,
    pub condition: Condition,
    pub p1: f64,
    pub p2: f64,
    pub p1_plus_p2: f64,
}

/// One results-table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdsReport {
    pub variant: String,
    /// In [`Condition::all`] order.
    pub cells: Vec<CellScore>,
    /// Mean P1+P2 over the conditions present (all five for a full row).
    pub average: f64,
    /// Mean P1+P2 over the noisy conditions present.
    pub noisy_average: Option<f64>,
}

/// Sums and averages one row. Every condition must be present exactly once.
pub fn aggregate_report(variant: &str, cells: &[(Condition, f64, f64)]) -> Result<PsdsReport> {
    if let Some(cond) = Condition::all().into_iter().find(|c| !cells.iter().any(|(x, _, _)| x == c)) {
        return Err(Error::Config(format!("{variant}: missing condition {cond}")));
    }
    aggregate_partial(variant, cells)
}

/// Like [`aggregate_report`] for a run over a subset of the conditions.
pub fn aggregate_partial(variant: &str, cells: &[(Condition, f64, f64)]) -> Result<PsdsReport> {
    if cells.is_empty() {
        return Err(Error::Config(format!("{variant}: no conditions")));
    }
    if let Some((c, _, _)) = cells.iter().find(|(c, _, _)| !Condition::all().contains(c)) {
        return Err(Error::Config(format!("{variant}: unexpected condition {c}")));
    }
    let mut out = Vec::new();
    for cond in Condition::all() {
        let matches: Vec<_> = cells.iter().filter(|(c, _, _)| *c == cond).collect();
        match matches.as_slice() {
            [(_, p1, p2)] => out.push(CellScore { variant: variant.to_string(), condition: cond, p1: *p1, p2: *p2, p1_plus_p2: p1 + p2 }),
            [] => {}
            _ => return Err(Error::Config(format!("{variant}: condition {cond} given twice"))),
        }
    }
    let average = out.iter().map(|c| c.p1_plus_p2).sum::<f64>() / out.len() as f64;
    let noisy: Vec<f64> = out.iter().filter(|c| c.condition.is_noisy()).map(|c| c.p1_plus_p2).collect();
    let noisy_average = (!noisy.is_empty()).then(|| noisy.iter().sum::<f64>() / noisy.len() as f64);
    Ok(PsdsReport { variant: variant.to_string(), cells: out, average, noisy_average })
}

fn r3(x: f64) -> String {
    format!("{:.3}", round_half_up(x, 3))
}

impl PsdsReport {
    pub fn cell(&self, c: Condition) -> Option<&CellScore> {
        self.cells.iter().find(|s| s.condition == c)
    }
}

/// Table with one row per report: P1, P2, P1+P2 per condition, then the
/// row average. Values rounded half-up to 3 decimals. Columns cover every
/// condition present in any row; missing cells are `-`.
pub fn render_tsv(reports: &[PsdsReport]) -> String {
    let conds: Vec<Condition> = Condition::all().into_iter().filter(|c| reports.iter().any(|r| r.cell(*c).is_some())).collect();
    let mut s = String::from("system");
    for c in &conds {
        let _ = write!(s, "\t{c}_P1\t{c}_P2\t{c}_P1+P2");
    }
    s.push_str("\taverage\n");
    for r in reports {
        s.push_str(&r.variant);
        for &c in &conds {
            match r.cell(c) {
                Some(c) => {
                    let _ = write!(s, "\t{}\t{}\t{}", r3(c.p1), r3(c.p2), r3(c.p1_plus_p2));
                }
                None => s.push_str("\t-\t-\t-"),
            }
        }
        let _ = writeln!(s, "\t{}", r3(r.average));
    }
    s
}

/// Flat list of cells as JSON.
pub fn render_json(reports: &[PsdsReport]) -> Result<String> {
    let cells: Vec<&CellScore> = reports.iter().flat_map(|r| &r.cells).collect();
    Ok(serde_json::to_string_pretty(&cells)?)
}
