//! Segment-wise evaluation: frame labels become gesture segments, which are
//! matched to ground truth by temporal IoU at thresholds `k`.

use crate::error::{Error, Result};
use crate::pipeline::CLASS_NAMES;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.1, 0.25, 0.5];
/// Classes that form segments; background (0) never does.
pub const GESTURE_CLASSES: [usize; 2] = [1, 2];

/// Frames `[start, end)` of one gesture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GestureSegment {
    pub class_id: usize,
    pub start: usize,
    pub end: usize,
}

impl GestureSegment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Maximal runs of equal nonzero labels, in temporal order.
pub fn frames_to_segments(labels: &[usize]) -> Vec<GestureSegment> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let c = labels[i];
        let mut j = i + 1;
        while j < labels.len() && labels[j] == c {
            j += 1;
        }
        if c != 0 {
            out.push(GestureSegment { class_id: c, start: i, end: j });
        }
        i = j;
    }
    out
}

pub fn iou(a: &GestureSegment, b: &GestureSegment) -> f64 {
    let inter = a.end.min(b.end).saturating_sub(a.start.max(b.start));
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn sorted_checked(segs: &[GestureSegment], what: &str) -> Result<Vec<GestureSegment>> {
    let mut s = segs.to_vec();
    s.sort_by_key(|g| (g.start, g.end));
    for g in &s {
        if g.is_empty() || g.class_id == 0 {
            return Err(Error::invalid(format!("{what}: invalid segment {g:?}")));
        }
    }
    if let Some(w) = s.windows(2).find(|w| w[1].start < w[0].end) {
        return Err(Error::invalid(format!("{what}: segments {:?} and {:?} overlap", w[0], w[1])));
    }
    Ok(s)
}

/// Greedy one-to-one matching for one class. Predictions are visited in
/// temporal order; each takes the unmatched ground truth with the highest
/// IoU (earliest on ties) and is a true positive when that IoU reaches `k`.
pub fn match_segments(gt: &[GestureSegment], pred: &[GestureSegment], k: f64) -> Result<Counts> {
    let gt = sorted_checked(gt, "ground truth")?;
    let pred = sorted_checked(pred, "prediction")?;
    if let Some(c) = gt.first().or(pred.first()).map(|s| s.class_id) {
        if gt.iter().chain(&pred).any(|s| s.class_id != c) {
            return Err(Error::invalid("match_segments expects segments of a single class"));
        }
    }
    let mut matched = vec![false; gt.len()];
    let mut counts = Counts::default();
    for p in &pred {
        let mut best: Option<(usize, f64)> = None;
        for (i, g) in gt.iter().enumerate() {
            if matched[i] {
                continue;
            }
            let v = iou(p, g);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        match best {
            Some((i, v)) if v >= k => {
                matched[i] = true;
                counts.tp += 1;
            }
            _ => counts.fp += 1,
        }
    }
    counts.fn_ = matched.iter().filter(|m| !**m).count();
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> Metrics {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Metrics { precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub class_id: usize,
    pub k: f64,
    #[serde(flatten)]
    pub counts: Counts,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Counts and metrics per (class, threshold), classes outermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub entries: Vec<ReportEntry>,
}

fn check_ks(ks: &[f64]) -> Result<()> {
    if ks.is_empty() || ks.iter().any(|k| !(0.0..=1.0).contains(k)) {
        return Err(Error::invalid(format!("IoU thresholds must lie in [0, 1], got {ks:?}")));
    }
    Ok(())
}

pub fn evaluate(gt_frames: &[usize], pred_frames: &[usize], ks: &[f64]) -> Result<EvalReport> {
    if gt_frames.len() != pred_frames.len() {
        return Err(Error::invalid(format!(
            "ground truth has {} frames, prediction has {}",
            gt_frames.len(),
            pred_frames.len()
        )));
    }
    check_ks(ks)?;
    let gt = frames_to_segments(gt_frames);
    let pred = frames_to_segments(pred_frames);
    let mut entries = Vec::new();
    for c in GESTURE_CLASSES {
        let g: Vec<_> = gt.iter().copied().filter(|s| s.class_id == c).collect();
        let p: Vec<_> = pred.iter().copied().filter(|s| s.class_id == c).collect();
        for &k in ks {
            let counts = match_segments(&g, &p, k)?;
            entries.push(ReportEntry {
                class_id: c,
                k,
                counts,
                metrics: f1_from_counts(counts.tp, counts.fp, counts.fn_),
            });
        }
    }
    Ok(EvalReport { entries })
}

impl EvalReport {
    /// Sums counts entry-wise across reports before recomputing metrics.
    pub fn pooled(reports: &[EvalReport]) -> Result<EvalReport> {
        let first = reports.first().ok_or_else(|| Error::invalid("nothing to pool"))?;
        let mut entries = first.entries.clone();
        for r in &reports[1..] {
            if r.entries.len() != entries.len() {
                return Err(Error::invalid("reports use different classes or thresholds"));
            }
            for (e, o) in entries.iter_mut().zip(&r.entries) {
                if e.class_id != o.class_id || e.k != o.k {
                    return Err(Error::invalid("reports use different classes or thresholds"));
                }
                e.counts += o.counts;
            }
        }
        for e in &mut entries {
            e.metrics = f1_from_counts(e.counts.tp, e.counts.fp, e.counts.fn_);
        }
        Ok(EvalReport { entries })
    }

    pub fn get(&self, class_id: usize, k: f64) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| e.class_id == class_id && e.k == k)
    }

    /// F1 at `k` with counts pooled over the gesture classes.
    pub fn overall_f1(&self, k: f64) -> f64 {
        let mut c = Counts::default();
        for e in self.entries.iter().filter(|e| e.k == k) {
            c += e.counts;
        }
        f1_from_counts(c.tp, c.fp, c.fn_).f1
    }

    /// `{"eat": {"0.1": {...}, ...}, "drink": {...}}`
    pub fn to_json(&self) -> serde_json::Value {
        let mut out: BTreeMap<&str, BTreeMap<String, serde_json::Value>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(CLASS_NAMES[e.class_id]).or_default().insert(
                format!("{}", e.k),
                serde_json::json!({
                    "tp": e.counts.tp,
                    "fp": e.counts.fp,
                    "fn": e.counts.fn_,
                    "precision": e.metrics.precision,
                    "recall": e.metrics.recall,
                    "f1": e.metrics.f1,
                }),
            );
        }
        serde_json::to_value(out).expect("report maps to JSON")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8}{:>6}{:>8}{:>8}{:>8}{:>11}{:>9}{:>8}", "class", "k", "TP", "FP", "FN", "precision", "recall", "F1");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{:<8}{:>6}{:>8}{:>8}{:>8}{:>10.2}%{:>8.2}%{:>7.2}%",
                CLASS_NAMES[e.class_id],
                e.k,
                e.counts.tp,
                e.counts.fp,
                e.counts.fn_,
                100.0 * e.metrics.precision,
                100.0 * e.metrics.recall,
                100.0 * e.metrics.f1
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(c: usize, s: usize, e: usize) -> GestureSegment {
        GestureSegment { class_id: c, start: s, end: e }
    }

    #[test]
    fn segments_from_frames() {
        assert_eq!(frames_to_segments(&[0, 1, 1, 0, 2, 2, 2]), vec![seg(1, 1, 3), seg(2, 4, 7)]);
        assert!(frames_to_segments(&[0, 0, 0]).is_empty());
        assert_eq!(frames_to_segments(&[1, 1, 2, 2]), vec![seg(1, 0, 2), seg(2, 2, 4)]);
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&seg(1, 0, 10), &seg(1, 0, 10)), 1.0);
        assert_eq!(iou(&seg(1, 0, 10), &seg(1, 10, 20)), 0.0);
        assert!((iou(&seg(1, 0, 10), &seg(1, 5, 15)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn matching_examples() {
        let c = |tp, fp, fn_| Counts { tp, fp, fn_ };
        assert_eq!(match_segments(&[seg(1, 10, 20)], &[seg(1, 12, 22)], 0.5).unwrap(), c(1, 0, 0));
        // oversegmentation
        assert_eq!(match_segments(&[seg(1, 0, 30)], &[seg(1, 0, 10), seg(1, 12, 28)], 0.25).unwrap(), c(1, 1, 0));
        // merge
        assert_eq!(match_segments(&[seg(1, 0, 10), seg(1, 20, 30)], &[seg(1, 0, 30)], 0.5).unwrap(), c(0, 1, 2));
    }

    #[test]
    fn tie_goes_to_earlier_ground_truth() {
        // pred [5, 15) overlaps [0, 10) and [10, 20) equally and takes [0, 10),
        // leaving [10, 20) for the second prediction
        let gt = [seg(1, 10, 20), seg(1, 0, 10)];
        let pred = [seg(1, 15, 20), seg(1, 5, 15)];
        let c = match_segments(&gt, &pred, 0.3).unwrap();
        assert_eq!(c, Counts { tp: 2, fp: 0, fn_: 0 });
    }

    #[test]
    fn overlap_and_mixed_classes_rejected() {
        assert!(match_segments(&[seg(1, 0, 10), seg(1, 5, 12)], &[], 0.5).is_err());
        assert!(match_segments(&[seg(1, 0, 10)], &[seg(2, 0, 10)], 0.5).is_err());
    }

    #[test]
    fn f1_examples() {
        assert!((f1_from_counts(705, 109, 132).f1 - 0.8540).abs() < 5e-5);
        assert!((f1_from_counts(40, 10, 28).f1 - 0.6780).abs() < 5e-5);
        assert_eq!(f1_from_counts(0, 0, 0), Metrics { precision: 0.0, recall: 0.0, f1: 0.0 });
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(evaluate(&[0, 1], &[0], &DEFAULT_THRESHOLDS).is_err());
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = [0, 1, 1, 0, 2, 2, 0, 1];
        let r = evaluate(&gt, &gt, &DEFAULT_THRESHOLDS).unwrap();
        assert!(r.entries.iter().all(|e| e.metrics.f1 == 1.0));
        let json = r.to_json();
        assert_eq!(json["eat"]["0.5"]["tp"], 2);
        assert_eq!(json["drink"]["0.1"]["f1"], 1.0);
        assert!(r.to_table().contains("drink"));
    }
}
