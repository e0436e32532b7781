//! Synthetic seated-eater skeleton sequences with labeled eat and drink
//! gestures, in pixel coordinates of a 140x140 frame.

use crate::error::{Error, Result};
use crate::graph::{CANONICAL_NODES, LOWER_LIP};
use crate::numeric::{RngStream, Tensor};
use crate::pipeline::SkeletonSequence;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const FRAME_SIZE: f64 = 140.0;

const EAT: usize = 1;
const DRINK: usize = 2;

/// Canonical indices of each hand's keypoints; the last two are the tips
/// (thumb tip and index tip sit at positions 2 and 4).
const LEFT_HAND: [usize; 5] = [13, 14, 15, 16, 17];
const RIGHT_HAND: [usize; 5] = [18, 19, 20, 21, 22];
const LEFT_ELBOW: usize = 7;
const RIGHT_ELBOW: usize = 8;

/// Chewing bob of the hand at the mouth: period in frames, amplitude in pixels.
const CHEW_PERIOD: f64 = 20.0;
const CHEW_AMPLITUDE: f64 = 2.5;

/// Rest pose, image coordinates (y grows downward). The subject faces the
/// camera, so their left side appears on the right of the image.
const REST_POSE: [(f64, f64); CANONICAL_NODES] = [
    (70.0, 40.0),  // nose
    (76.0, 35.0),  // left eye
    (64.0, 35.0),  // right eye
    (82.0, 38.0),  // left ear
    (58.0, 38.0),  // right ear
    (92.0, 70.0),  // left shoulder
    (48.0, 70.0),  // right shoulder
    (100.0, 98.0), // left elbow
    (40.0, 98.0),  // right elbow
    (65.0, 50.0),  // mouth right
    (75.0, 50.0),  // mouth left
    (70.0, 48.0),  // upper lip
    (70.0, 52.0),  // lower lip
    (88.0, 114.0), // left thumb 1
    (84.0, 117.0),
    (81.0, 119.0),
    (91.0, 121.0),
    (90.0, 126.0), // left index tip
    (52.0, 114.0), // right thumb 1
    (56.0, 117.0),
    (59.0, 119.0),
    (49.0, 121.0),
    (50.0, 126.0), // right index tip
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub fps: f64,
    pub duration_seconds: f64,
    /// Inclusive range of eat gestures per sequence.
    pub eat_count: (usize, usize),
    pub drink_count: (usize, usize),
    /// Inclusive gesture length range in frames.
    pub gesture_frames: (usize, usize),
    /// Minimum idle frames between consecutive gestures (at least 1).
    pub min_gap_frames: usize,
    /// Standard deviation of per-keypoint noise, pixels.
    pub jitter: f64,
    /// Probability that a keypoint is dropped (zeroed) in a frame.
    pub keypoint_dropout: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            fps: 24.0,
            duration_seconds: 60.0,
            eat_count: (6, 9),
            drink_count: (1, 3),
            gesture_frames: (48, 96),
            min_gap_frames: 24,
            jitter: 0.8,
            keypoint_dropout: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.fps > 0.0 && self.duration_seconds > 0.0) {
            return bad(format!("fps and duration must be positive ({} fps, {} s)", self.fps, self.duration_seconds));
        }
        if self.eat_count.0 > self.eat_count.1 || self.drink_count.0 > self.drink_count.1 {
            return bad("gesture count ranges must be ordered (min, max)".into());
        }
        let (lo, hi) = self.gesture_frames;
        if lo < 4 || lo > hi {
            return bad(format!("gesture length range ({lo}, {hi}) must be ordered with min >= 4 frames"));
        }
        if self.min_gap_frames == 0 {
            return bad("gestures need at least 1 idle frame between them".into());
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad(format!("jitter must be >= 0, got {}", self.jitter));
        }
        if !(0.0..1.0).contains(&self.keypoint_dropout) {
            return bad(format!("keypoint dropout must be in [0, 1), got {}", self.keypoint_dropout));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.fps * self.duration_seconds).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    class_id: usize,
    start: usize,
    len: usize,
    right_hand: bool,
}

/// Places gestures at random without overlap, keeping `min_gap_frames`
/// idle frames between neighbors.
fn schedule(config: &SynthConfig, rng: &RngStream) -> Result<Vec<Event>> {
    let mut g = rng.generator();
    let total = config.frame_count();
    let eats = g.gen_range(config.eat_count.0..=config.eat_count.1);
    let drinks = g.gen_range(config.drink_count.0..=config.drink_count.1);
    let mut classes: Vec<usize> = std::iter::repeat_n(EAT, eats).chain(std::iter::repeat_n(DRINK, drinks)).collect();
    classes.shuffle(&mut g);
    let lens: Vec<usize> = classes
        .iter()
        .map(|_| g.gen_range(config.gesture_frames.0..=config.gesture_frames.1))
        .collect();
    let n = classes.len();
    let needed = lens.iter().sum::<usize>() + n.saturating_sub(1) * config.min_gap_frames;
    if needed > total {
        return Err(Error::invalid(format!(
            "cannot fit {n} gestures ({needed} frames with gaps) into {total} frames"
        )));
    }
    // split the slack into n + 1 pieces: before, between and after gestures
    let slack = total - needed;
    let mut cuts: Vec<usize> = (0..n).map(|_| g.gen_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut events = Vec::with_capacity(n);
    let mut pos = 0;
    let mut prev_cut = 0;
    for i in 0..n {
        pos += cuts[i] - prev_cut;
        prev_cut = cuts[i];
        events.push(Event {
            class_id: classes[i],
            start: pos,
            len: lens[i],
            right_hand: g.gen_bool(0.75),
        });
        pos += lens[i] + config.min_gap_frames;
    }
    Ok(events)
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Phase fractions `(approach, hold)`; the rest of the gesture is the return.
fn phases(class_id: usize) -> (f64, f64) {
    if class_id == DRINK {
        (0.25, 0.6)
    } else {
        (0.12, 0.74)
    }
}

/// Cup tilt in `[0, 1]`: rises over the second half of a drink's hold and
/// stays up through the return.
fn tilt(i: usize, len: usize) -> f64 {
    let (a, h) = phases(DRINK);
    let u = (i as f64 + 0.5) / len as f64;
    smoothstep((u - a - 0.5 * h) / (0.5 * h))
}

/// Progress toward the mouth in `[0, 1]` at frame `i` of a gesture of `len` frames.
fn reach(class_id: usize, i: usize, len: usize) -> f64 {
    let (a, h) = phases(class_id);
    let u = (i as f64 + 0.5) / len as f64;
    if u < a {
        smoothstep(u / a)
    } else if u < a + h {
        1.0
    } else {
        1.0 - smoothstep((u - a - h) / (1.0 - a - h))
    }
}

fn centroid(pose: &[(f64, f64)], idx: &[usize]) -> (f64, f64) {
    let n = idx.len() as f64;
    let (sx, sy) = idx.iter().fold((0.0, 0.0), |(x, y), &i| (x + pose[i].0, y + pose[i].1));
    (sx / n, sy / n)
}

fn hand_tips(right: bool) -> [usize; 2] {
    let h = if right { RIGHT_HAND } else { LEFT_HAND };
    [h[2], h[4]]
}

/// Generates one labeled sequence in pixel coordinates.
pub fn generate_sequence(config: &SynthConfig, source_id: &str) -> Result<SkeletonSequence> {
    config.validate()?;
    let root = RngStream::new(config.seed);
    let events = schedule(config, &root.derive(0))?;
    let total = config.frame_count();
    if total < 2 {
        return Err(Error::invalid(format!("{total} frames is too short for a sequence")));
    }
    let mut motion = root.derive(1).generator();
    let mut noise_rng = root.derive(2).generator();
    let mut drop_rng = root.derive(3).generator();
    let noise = Normal::new(0.0, config.jitter.max(1e-12)).expect("finite std");

    let fps = config.fps;
    // slow body sway and idle hand drift: random phases and periods
    let sway: Vec<(f64, f64)> = (0..2).map(|_| (motion.gen_range(5.0..9.0), motion.gen_range(0.0..2.0 * PI))).collect();
    let drift: Vec<(f64, f64)> = (0..4).map(|_| (motion.gen_range(2.0..6.0), motion.gen_range(0.0..2.0 * PI))).collect();

    let mut labels = vec![0usize; total];
    let mut active: Vec<Option<(Event, usize)>> = vec![None; total];
    for e in &events {
        for i in 0..e.len {
            labels[e.start + i] = e.class_id;
            active[e.start + i] = Some((*e, i));
        }
    }

    let mut data = vec![0.0; total * CANONICAL_NODES * 3];
    for f in 0..total {
        let t = f as f64 / fps;
        let sx = 1.5 * (2.0 * PI * t / sway[0].0 + sway[0].1).sin();
        let sy = 1.0 * (2.0 * PI * t / sway[1].0 + sway[1].1).sin();
        let mut pose: Vec<(f64, f64)> = REST_POSE.iter().map(|&(x, y)| (x + sx, y + sy)).collect();
        for (h, hand) in [LEFT_HAND, RIGHT_HAND].iter().enumerate() {
            let dx = 3.0 * (2.0 * PI * t / drift[2 * h].0 + drift[2 * h].1).sin();
            let dy = 2.0 * (2.0 * PI * t / drift[2 * h + 1].0 + drift[2 * h + 1].1).sin();
            for &k in hand {
                pose[k].0 += dx;
                pose[k].1 += dy;
            }
        }
        if let Some((e, i)) = active[f] {
            let d = reach(e.class_id, i, e.len);
            let (hand, elbow, side) = if e.right_hand {
                (RIGHT_HAND, RIGHT_ELBOW, -1.0)
            } else {
                (LEFT_HAND, LEFT_ELBOW, 1.0)
            };
            let lip = pose[LOWER_LIP];
            let tips = centroid(&pose, &hand_tips(e.right_hand));
            // both classes share the hold pose; a drink tilts the cup (hand
            // rotation and elbow raise) only over the second half of its hold,
            // while eating bobs slowly as the subject chews
            let tilt = if e.class_id == DRINK { tilt(i, e.len) * d } else { 0.0 };
            let bob = if e.class_id == EAT { CHEW_AMPLITUDE * (2.0 * PI * i as f64 / CHEW_PERIOD).sin() * d } else { 0.0 };
            let target = (lip.0 + side * 1.0, lip.1 + 2.0 + bob);
            let angle = side * (-0.3 * d + 1.0 * tilt);
            let shift = ((target.0 - tips.0) * d, (target.1 - tips.1) * d);
            let pivot = (tips.0 + shift.0, tips.1 + shift.1);
            let (s, c) = angle.sin_cos();
            for &k in &hand {
                let (x, y) = (pose[k].0 + shift.0 - pivot.0, pose[k].1 + shift.1 - pivot.1);
                pose[k] = (pivot.0 + c * x - s * y, pivot.1 + s * x + c * y);
            }
            pose[elbow].0 += 0.3 * shift.0 + side * 10.0 * tilt;
            pose[elbow].1 += 0.3 * shift.1 - 16.0 * tilt;
        }
        for (j, &(x, y)) in pose.iter().enumerate() {
            let o = (f * CANONICAL_NODES + j) * 3;
            if drop_rng.gen::<f64>() < config.keypoint_dropout {
                continue;
            }
            let (nx, ny) = if config.jitter > 0.0 {
                (noise.sample(&mut noise_rng), noise.sample(&mut noise_rng))
            } else {
                (0.0, 0.0)
            };
            let conf: f64 = noise_rng.gen_range(0.6..1.0);
            data[o] = round3((x + nx).clamp(0.0, FRAME_SIZE));
            data[o + 1] = round3((y + ny).clamp(0.0, FRAME_SIZE));
            data[o + 2] = round3(conf);
        }
    }
    let frames = Tensor::from_vec(&[total, CANONICAL_NODES, 3], data)?;
    SkeletonSequence::new(frames, fps, source_id)?.with_labels(labels)
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Per-frame distance from the nearer hand's tip centroid to the lower lip.
/// Frames where any of those keypoints is missing give `None`.
pub fn hand_to_mouth_distance(seq: &SkeletonSequence) -> Vec<Option<f64>> {
    let d = seq.frames.data();
    seq.frames
        .data()
        .chunks(CANONICAL_NODES * 3)
        .enumerate()
        .map(|(f, _)| {
            let at = |j: usize| {
                let o = (f * CANONICAL_NODES + j) * 3;
                (d[o + 2] > 0.0).then_some((d[o], d[o + 1]))
            };
            let lip = at(LOWER_LIP)?;
            [false, true]
                .iter()
                .filter_map(|&right| {
                    let [a, b] = hand_tips(right);
                    let (pa, pb) = (at(a)?, at(b)?);
                    let c = ((pa.0 + pb.0) / 2.0, (pa.1 + pb.1) / 2.0);
                    Some(((c.0 - lip.0).powi(2) + (c.1 - lip.1).powi(2)).sqrt())
                })
                .reduce(f64::min)
        })
        .collect()
}
