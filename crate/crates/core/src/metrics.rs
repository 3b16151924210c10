//! Frame accuracy, segmental edit score and segmental F1@k.

use serde::{Deserialize, Serialize};

use crate::domain::{segments_from_labels, Segment};
use crate::error::{Error, Result};

/// IoU thresholds reported by [`report`].
pub const F1_THRESHOLDS: [f64; 3] = [0.10, 0.25, 0.50];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub edit: f64,
    pub f1_10: f64,
    pub f1_25: f64,
    pub f1_50: f64,
    pub predicted_segments: usize,
    pub ground_truth_segments: usize,
}

impl MetricReport {
    /// Unweighted mean over per-sequence reports.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricReport {
            accuracy: avg(|r| r.accuracy),
            edit: avg(|r| r.edit),
            f1_10: avg(|r| r.f1_10),
            f1_25: avg(|r| r.f1_25),
            f1_50: avg(|r| r.f1_50),
            predicted_segments: reports.iter().map(|r| r.predicted_segments).sum(),
            ground_truth_segments: reports.iter().map(|r| r.ground_truth_segments).sum(),
        })
    }
}

fn check_lengths(pred: &[usize], gt: &[usize]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    if gt.is_empty() {
        return Err(Error::EmptyInput("label array"));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], gt: &[usize]) -> Result<f64> {
    check_lengths(pred, gt)?;
    let correct = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(100.0 * correct as f64 / gt.len() as f64)
}

/// Unit-cost Levenshtein distance with a rolling row.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            let cost = usize::from(x != y);
            row[j + 1] = (above + 1).min(row[j] + 1).min(diag + cost);
            diag = above;
        }
    }
    row[b.len()]
}

/// Edit score over run-length collapsed class sequences:
/// `100 * (1 - d / max(|p|, |g|))`.
pub fn edit_score(pred: &[usize], gt: &[usize]) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyInput("label array"));
    }
    let p: Vec<usize> = segments_from_labels(pred)?.iter().map(|s| s.class).collect();
    let g: Vec<usize> = segments_from_labels(gt)?.iter().map(|s| s.class).collect();
    let d = levenshtein(&p, &g);
    Ok(100.0 * (1.0 - d as f64 / p.len().max(g.len()) as f64))
}

fn iou(a: &Segment, b: &Segment) -> f64 {
    let inter = a.end.min(b.end).saturating_sub(a.start.max(b.start));
    let union = a.end.max(b.end) - a.start.min(b.start);
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMatches {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl SegmentMatches {
    pub fn f1(&self) -> f64 {
        let tp = self.true_positives as f64;
        let precision = tp / (tp + self.false_positives as f64);
        let recall = tp / (tp + self.false_negatives as f64);
        if tp == 0.0 || precision + recall == 0.0 {
            return 0.0;
        }
        100.0 * 2.0 * precision * recall / (precision + recall)
    }
}

/// Greedy in-order matching: each predicted segment takes its best
/// same-class ground-truth segment (lowest index on IoU ties) if the IoU
/// reaches `tau` and that segment is still unmatched.
pub fn match_segments(pred: &[Segment], gt: &[Segment], tau: f64) -> SegmentMatches {
    let mut used = vec![false; gt.len()];
    let mut tp = 0;
    let mut fp = 0;
    for p in pred {
        let best = gt
            .iter()
            .enumerate()
            .filter(|(_, g)| g.class == p.class)
            .map(|(j, g)| (j, iou(p, g)))
            .fold(None, |best: Option<(usize, f64)>, (j, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((j, v)),
            });
        match best {
            Some((j, v)) if v >= tau && !used[j] => {
                used[j] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
    }
    SegmentMatches {
        true_positives: tp,
        false_positives: fp,
        false_negatives: used.iter().filter(|u| !**u).count(),
    }
}

pub fn f1_at(pred: &[usize], gt: &[usize], tau: f64) -> Result<f64> {
    check_lengths(pred, gt)?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidConfig(format!("IoU threshold must lie in (0, 1], got {tau}")));
    }
    let p = segments_from_labels(pred)?;
    let g = segments_from_labels(gt)?;
    Ok(match_segments(&p, &g, tau).f1())
}

pub fn report(pred: &[usize], gt: &[usize]) -> Result<MetricReport> {
    check_lengths(pred, gt)?;
    let [t10, t25, t50] = F1_THRESHOLDS;
    Ok(MetricReport {
        accuracy: accuracy(pred, gt)?,
        edit: edit_score(pred, gt)?,
        f1_10: f1_at(pred, gt, t10)?,
        f1_25: f1_at(pred, gt, t25)?,
        f1_50: f1_at(pred, gt, t50)?,
        predicted_segments: segments_from_labels(pred)?.len(),
        ground_truth_segments: segments_from_labels(gt)?.len(),
    })
}
