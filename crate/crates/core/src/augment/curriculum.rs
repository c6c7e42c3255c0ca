use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Clean warm-up followed by a linear SNR ramp from easy to hard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub total_epochs: usize,
    pub clean_epochs: usize,
    pub snr_start_db: f64,
    pub snr_end_db: f64,
}

impl Default for CurriculumSchedule {
    /// 200 epochs, the first 10% clean, then 10 dB down to -10 dB.
    fn default() -> Self {
        Self { total_epochs: 200, clean_epochs: 20, snr_start_db: 10.0, snr_end_db: -10.0 }
    }
}

impl CurriculumSchedule {
    pub fn new(total_epochs: usize, clean_epochs: usize, snr_start_db: f64, snr_end_db: f64) -> Result<Self> {
        let s = Self { total_epochs, clean_epochs, snr_start_db, snr_end_db };
        let problems = s.validate();
        if let Some(p) = problems.into_iter().next() {
            return Err(Error::BadParameter(p));
        }
        Ok(s)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.clean_epochs >= self.total_epochs {
            out.push(format!("clean_epochs ({}) must be below total_epochs ({})", self.clean_epochs, self.total_epochs));
        }
        if !(self.snr_start_db.is_finite() && self.snr_end_db.is_finite() && self.snr_start_db > self.snr_end_db) {
            out.push("snr_start_db must be finite and above snr_end_db".to_string());
        }
        out
    }
}

/// SNR for `epoch`, or `None` during the clean phase.
pub fn curriculum_snr(epoch: usize, sched: &CurriculumSchedule) -> Result<Option<f64>> {
    if epoch >= sched.total_epochs {
        return Err(Error::BadEpoch { epoch, total: sched.total_epochs });
    }
    if epoch < sched.clean_epochs {
        return Ok(None);
    }
    let span = sched.total_epochs - 1 - sched.clean_epochs;
    if span == 0 {
        return Ok(Some(sched.snr_end_db));
    }
    let frac = (epoch - sched.clean_epochs) as f64 / span as f64;
    Ok(Some(sched.snr_start_db + (sched.snr_end_db - sched.snr_start_db) * frac))
}

/// How each augmented copy gets its SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SnrPolicy {
    Curriculum(CurriculumSchedule),
    /// Uniform in `[low_db, high_db]` for every epoch and clip, no clean phase.
    UniformRandom { low_db: f64, high_db: f64, total_epochs: usize },
}

impl SnrPolicy {
    pub fn total_epochs(&self) -> usize {
        match self {
            SnrPolicy::Curriculum(s) => s.total_epochs,
            SnrPolicy::UniformRandom { total_epochs, .. } => *total_epochs,
        }
    }

    pub fn snr(&self, epoch: usize, draw_seed: u64) -> Result<Option<f64>> {
        match self {
            SnrPolicy::Curriculum(s) => curriculum_snr(epoch, s),
            SnrPolicy::UniformRandom { low_db, high_db, total_epochs } => {
                if epoch >= *total_epochs {
                    return Err(Error::BadEpoch { epoch, total: *total_epochs });
                }
                Ok(Some(seed::rng(draw_seed).random_range(*low_db..=*high_db)))
            }
        }
    }
}
