//! Shared test helpers: a frame-level brute-force evaluator and random
//! label timelines.

#![allow(dead_code)]

use rand::Rng;

/// Counts `(tp, fp, fn)` for `class` straight from frame arrays: segments
/// found by scanning, IoU by counting frames, predictions visited in
/// temporal order, ties broken toward the earlier ground truth.
pub fn brute_force_counts(gt: &[usize], pred: &[usize], class: usize, k: f64) -> (usize, usize, usize) {
    let runs = |labels: &[usize]| -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < labels.len() {
            if labels[i] == class {
                let s = i;
                while i < labels.len() && labels[i] == class {
                    i += 1;
                }
                out.push((s, i));
            } else {
                i += 1;
            }
        }
        out
    };
    let (g, p) = (runs(gt), runs(pred));
    let iou = |a: (usize, usize), b: (usize, usize)| -> f64 {
        let lo = a.0.min(b.0);
        let hi = a.1.max(b.1);
        let (mut inter, mut union) = (0, 0);
        for f in lo..hi {
            let (x, y) = ((a.0..a.1).contains(&f), (b.0..b.1).contains(&f));
            inter += usize::from(x && y);
            union += usize::from(x || y);
        }
        inter as f64 / union as f64
    };
    let mut used = vec![false; g.len()];
    let (mut tp, mut fp) = (0, 0);
    for &ps in &p {
        let mut best: Option<(usize, f64)> = None;
        for (j, &gs) in g.iter().enumerate() {
            if used[j] {
                continue;
            }
            let v = iou(ps, gs);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        match best {
            Some((j, v)) if v >= k => {
                used[j] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
    }
    (tp, fp, g.len() - tp)
}

/// Random timeline of `len` frames with at most `max_segments` segments
/// per gesture class.
pub fn random_timeline<R: Rng>(rng: &mut R, len: usize, max_segments: usize) -> Vec<usize> {
    let mut labels = vec![0; len];
    for class in [1, 2] {
        let n = rng.gen_range(0..=max_segments);
        for _ in 0..n {
            let s = rng.gen_range(0..len);
            let l = rng.gen_range(1..=(len / 6).max(1));
            for f in s..(s + l).min(len) {
                labels[f] = class;
            }
        }
    }
    // keep at most max_segments runs per class by erasing extras
    for class in [1, 2] {
        let mut seen = 0;
        let mut i = 0;
        while i < len {
            if labels[i] == class {
                seen += 1;
                let s = i;
                while i < len && labels[i] == class {
                    i += 1;
                }
                if seen > max_segments {
                    labels[s..i].iter_mut().for_each(|l| *l = 0);
                }
            } else {
                i += 1;
            }
        }
    }
    labels
}
