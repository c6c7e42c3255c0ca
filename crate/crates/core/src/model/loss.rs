use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::events::{ClipPrediction, FrameGrid};

/// Probability clamp applied before taking logs.
pub const BCE_EPS: f64 = 1e-7;

fn bce_mean(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, y) in pairs {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        sum -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean frame-level BCE plus mean clip-level BCE.
pub fn bce_loss(pred_s: &FrameGrid, pred_w: &ClipPrediction, label_s: ArrayView2<'_, f64>, label_w: &[f64]) -> Result<f64> {
    if pred_s.probs.dim() != label_s.dim() {
        return Err(Error::ShapeMismatch(format!("frame predictions {:?} vs labels {:?}", pred_s.probs.dim(), label_s.dim())));
    }
    if pred_w.probs.len() != label_w.len() {
        return Err(Error::ShapeMismatch(format!("clip predictions {} vs labels {}", pred_w.probs.len(), label_w.len())));
    }
    let strong = bce_mean(pred_s.probs.iter().copied().zip(label_s.iter().copied()));
    let weak = bce_mean(pred_w.probs.iter().copied().zip(label_w.iter().copied()));
    Ok(strong + weak)
}

/// `decay * teacher + (1 - decay) * student`, elementwise.
pub fn ema_update(teacher: &[f64], student: &[f64], decay: f64) -> Result<Vec<f64>> {
    if teacher.len() != student.len() {
        return Err(Error::ShapeMismatch(format!("teacher {} vs student {}", teacher.len(), student.len())));
    }
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::BadParameter(format!("decay must be in [0, 1), got {decay}")));
    }
    Ok(teacher.iter().zip(student).map(|(t, s)| decay * t + (1.0 - decay) * s).collect())
}
