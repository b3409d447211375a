//! Per-frame evaluation metrics: mean average precision, calibrated mean
//! average precision, and class-mean top-5 recall. Everything is rank-based
//! with frame-index (or class-index) ascending tie-breaks, so results are
//! deterministic and invariant under monotone score transforms.

use crate::error::{Result, SsmError};
use crate::numerics::Scalar;

/// Scores plus ground truth for a block of frames.
#[derive(Clone, Debug)]
pub struct ScoredFrames<T> {
    /// Per frame, one score per class (background = class 0).
    pub scores: Vec<Vec<T>>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> ScoredFrames<T> {
    pub fn new(scores: Vec<Vec<T>>, labels: Vec<usize>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(SsmError::Dimension("one label per score row required".into()));
        }
        if scores.is_empty() {
            return Err(SsmError::Argument("no frames".into()));
        }
        let classes = scores[0].len();
        if classes == 0 {
            return Err(SsmError::Dimension("need at least one class".into()));
        }
        for row in &scores {
            if row.len() != classes {
                return Err(SsmError::Dimension("ragged score rows".into()));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(SsmError::Numeric("non-finite score".into()));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(SsmError::Argument(format!(
                "label {bad} outside [0, {classes})"
            )));
        }
        Ok(Self { scores, labels })
    }

    pub fn classes(&self) -> usize {
        self.scores[0].len()
    }

    pub fn frames(&self) -> usize {
        self.scores.len()
    }
}

/// Frames ranked by score for one class, descending, frame index ascending
/// on ties.
fn ranked_frames<T: Scalar>(data: &ScoredFrames<T>, class: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..data.frames()).collect();
    order.sort_by(|&a, &b| {
        data.scores[b][class]
            .partial_cmp(&data.scores[a][class])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    order
}

/// Average precision for one class: mean of precision at each positive rank.
fn average_precision<T: Scalar>(data: &ScoredFrames<T>, class: usize, weight: f64) -> Option<f64> {
    let n_pos = data.labels.iter().filter(|&&y| y == class).count();
    if n_pos == 0 {
        return None;
    }
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut ap = 0.0;
    for &frame in &ranked_frames(data, class) {
        if data.labels[frame] == class {
            tp += 1.0;
            ap += weight * tp / (weight * tp + fp);
        } else {
            fp += 1.0;
        }
    }
    Some(ap / n_pos as f64)
}

/// The calibrated precision sequence `w·TP/(w·TP+FP)` after each ranked
/// frame, with `w = N_neg/N_pos` for the class. Exposed for verification.
pub fn calibrated_precision_sequence<T: Scalar>(
    data: &ScoredFrames<T>,
    class: usize,
) -> Result<Vec<f64>> {
    let n_pos = data.labels.iter().filter(|&&y| y == class).count();
    if n_pos == 0 {
        return Err(SsmError::UndefinedMetric(format!(
            "class {class} has no positives"
        )));
    }
    let w = (data.frames() - n_pos) as f64 / n_pos as f64;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut seq = Vec::with_capacity(data.frames());
    for &frame in &ranked_frames(data, class) {
        if data.labels[frame] == class {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        seq.push(w * tp / (w * tp + fp));
    }
    Ok(seq)
}

fn mean_ap<T: Scalar>(data: &ScoredFrames<T>, calibrated: bool) -> Result<f64> {
    let mut aps = Vec::new();
    // Background (class 0) is excluded from the class mean.
    for class in 1..data.classes() {
        let n_pos = data.labels.iter().filter(|&&y| y == class).count();
        if n_pos == 0 {
            continue;
        }
        let weight = if calibrated {
            (data.frames() - n_pos) as f64 / n_pos as f64
        } else {
            1.0
        };
        if let Some(ap) = average_precision(data, class, weight) {
            aps.push(ap);
        }
    }
    if aps.is_empty() {
        return Err(SsmError::UndefinedMetric(
            "no non-background class has positives".into(),
        ));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Per-frame mean average precision over non-background classes that have
/// at least one positive.
pub fn per_frame_map<T: Scalar>(data: &ScoredFrames<T>) -> Result<f64> {
    mean_ap(data, false)
}

/// Calibrated mAP: precision reweighted by the per-class negative/positive
/// ratio, correcting class imbalance.
pub fn calibrated_map<T: Scalar>(data: &ScoredFrames<T>) -> Result<f64> {
    mean_ap(data, true)
}

/// Fraction of each present class's frames whose true class ranks in the
/// top `min(5, classes)` scores (class-index ascending on ties), averaged
/// over present classes.
pub fn class_mean_top5_recall<T: Scalar>(data: &ScoredFrames<T>) -> Result<f64> {
    let k = data.classes().min(5);
    let mut per_class_hits = vec![0usize; data.classes()];
    let mut per_class_total = vec![0usize; data.classes()];
    for (row, &label) in data.scores.iter().zip(&data.labels) {
        let mut order: Vec<usize> = (0..data.classes()).collect();
        order.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        per_class_total[label] += 1;
        if order[..k].contains(&label) {
            per_class_hits[label] += 1;
        }
    }
    let mut recalls = Vec::new();
    for c in 0..data.classes() {
        if per_class_total[c] > 0 {
            recalls.push(per_class_hits[c] as f64 / per_class_total[c] as f64);
        }
    }
    if recalls.is_empty() {
        return Err(SsmError::UndefinedMetric("no labeled frames".into()));
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}
