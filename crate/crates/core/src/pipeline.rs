//! Keypoint and label ingestion, windowing, and stitching of window
//! predictions back into per-frame labels.

use crate::error::{Error, Result};
use crate::graph::CANONICAL_NODES;
use crate::numeric::{Mode, Tensor};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const CLASS_COUNT: usize = 3;
pub const CLASS_NAMES: [&str; CLASS_COUNT] = ["none", "eat", "drink"];
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.3;
pub const DEFAULT_WINDOW_SECONDS: f64 = 6.0;
pub const DEFAULT_TRAIN_STRIDE: f64 = 0.5;

/// One recording: `frames` is `[T, 23, 3]` holding `(x, y, confidence)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub frames: Tensor,
    pub fps: f64,
    pub labels: Option<Vec<usize>>,
    pub source_id: String,
    /// Set once coordinates have been divided by the frame size.
    pub normalized: bool,
}

impl SkeletonSequence {
    pub fn new(frames: Tensor, fps: f64, source_id: impl Into<String>) -> Result<Self> {
        if frames.rank() != 3 || frames.dim(1) != CANONICAL_NODES || frames.dim(2) != 3 {
            return Err(Error::invalid(format!(
                "sequence frames must be [T, {CANONICAL_NODES}, 3], got {:?}",
                frames.shape()
            )));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        Ok(SkeletonSequence {
            frames,
            fps,
            labels: None,
            source_id: source_id.into(),
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::invalid(format!(
                "{} labels for {} frames in {}",
                labels.len(),
                self.len(),
                self.source_id
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= CLASS_COUNT) {
            return Err(Error::invalid(format!("label {bad} outside 0..{CLASS_COUNT}")));
        }
        self.labels = Some(labels);
        Ok(self)
    }
}

#[derive(Deserialize)]
struct KeypointLine {
    frame: usize,
    kp: Vec<[f64; 3]>,
}

#[derive(Serialize)]
struct KeypointLineOut<'a> {
    frame: usize,
    kp: Vec<&'a [f64]>,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a JSON Lines keypoint file. Keypoints with confidence below
/// `confidence_threshold` become `(0, 0, 0)`; missing frame indices are
/// filled with all-zero frames starting from frame 0.
pub fn load_keypoints(path: &Path, confidence_threshold: f64, fps: f64) -> Result<SkeletonSequence> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<(usize, Vec<[f64; 3]>)> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: KeypointLine = serde_json::from_str(&line).map_err(|e| parse_error(path, lineno, e.to_string()))?;
        if rec.kp.len() != CANONICAL_NODES {
            return Err(parse_error(
                path,
                lineno,
                format!("frame {}: expected {CANONICAL_NODES} keypoints, got {}", rec.frame, rec.kp.len()),
            ));
        }
        for k in &rec.kp {
            if k.iter().any(|v| !v.is_finite()) {
                return Err(parse_error(path, lineno, format!("frame {}: non-finite keypoint", rec.frame)));
            }
            if !(0.0..=1.0).contains(&k[2]) {
                return Err(parse_error(
                    path,
                    lineno,
                    format!("frame {}: confidence {} outside [0, 1]", rec.frame, k[2]),
                ));
            }
        }
        rows.push((rec.frame, rec.kp));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid(format!("{}: frame {} listed twice", path.display(), w[0].0)));
    }
    let total = rows.last().map_or(0, |r| r.0 + 1);
    let mut data = vec![0.0; total * CANONICAL_NODES * 3];
    for (frame, kp) in rows {
        for (j, k) in kp.iter().enumerate() {
            if k[2] >= confidence_threshold && k[2] > 0.0 {
                let o = (frame * CANONICAL_NODES + j) * 3;
                data[o..o + 3].copy_from_slice(k);
            }
        }
    }
    let frames = if total == 0 {
        Tensor::zeros(&[0, CANONICAL_NODES, 3])
    } else {
        Tensor::from_vec(&[total, CANONICAL_NODES, 3], data)?
    };
    let id = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    SkeletonSequence::new(frames, fps, id)
}

/// Writes the JSON Lines keypoint format read by [`load_keypoints`].
pub fn write_keypoints(path: &Path, seq: &SkeletonSequence) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (frame, rows) in seq.frames.data().chunks(CANONICAL_NODES * 3).enumerate() {
        let line = KeypointLineOut {
            frame,
            kp: rows.chunks(3).collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    frame: usize,
    label: usize,
}

/// Dense label array of length `total` from a `frame,label` CSV; frames not
/// listed are background.
pub fn load_labels(path: &Path, total: usize) -> Result<Vec<usize>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if !header.is_empty() && (header.len() != 2 || &header[0] != "frame" || &header[1] != "label") {
        return Err(parse_error(path, 1, format!("expected header `frame,label`, got `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut labels = vec![0; total];
    let mut seen = vec![false; total];
    for rec in reader.deserialize::<LabelRow>() {
        let row = rec.map_err(|e| csv_error(path, e))?;
        if row.label >= CLASS_COUNT {
            return Err(Error::invalid(format!("{}: frame {} has label {} outside 0..{CLASS_COUNT}", path.display(), row.frame, row.label)));
        }
        if row.frame >= total {
            return Err(Error::invalid(format!("{}: frame {} beyond sequence length {total}", path.display(), row.frame)));
        }
        if std::mem::replace(&mut seen[row.frame], true) {
            return Err(Error::invalid(format!("{}: frame {} listed twice", path.display(), row.frame)));
        }
        labels[row.frame] = row.label;
    }
    Ok(labels)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => parse_error(path, line, e.to_string()),
    }
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["frame", "label"]).map_err(|e| csv_error(path, e))?;
    for (f, l) in labels.iter().enumerate() {
        w.write_record([f.to_string(), l.to_string()]).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Divides pixel coordinates by the frame size. Returns the sequence and
/// the number of keypoints that fell outside `[0, 1.05 * dim]`.
pub fn normalize_coordinates(seq: &SkeletonSequence, width: f64, height: f64) -> Result<(SkeletonSequence, usize)> {
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::invalid(format!("frame size must be positive, got {width}x{height}")));
    }
    if seq.normalized {
        return Err(Error::invalid(format!("{} is already normalized", seq.source_id)));
    }
    let mut out = seq.clone();
    let mut outside = 0;
    for k in out.frames.data_mut().chunks_mut(3) {
        if k == [0.0, 0.0, 0.0] {
            continue;
        }
        if !(0.0..=1.05 * width).contains(&k[0]) || !(0.0..=1.05 * height).contains(&k[1]) {
            outside += 1;
        }
        k[0] /= width;
        k[1] /= height;
    }
    out.normalized = true;
    Ok((out, outside))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowOrigin {
    pub source_id: String,
    pub start: usize,
}

/// Fixed-length windows cut from one or more sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    /// `[N, T_win, V, 3]`
    pub windows: Tensor,
    /// `N * T_win`, row-major.
    pub labels: Vec<usize>,
    /// False exactly on zero-padded frames past the end of a sequence.
    pub valid_mask: Vec<bool>,
    pub origin: Vec<WindowOrigin>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.windows.dim(1)
    }

    /// Copies the windows at `indices` (in that order) into a new batch.
    pub fn select(&self, indices: &[usize]) -> Result<WindowBatch> {
        if indices.is_empty() {
            return Err(Error::invalid("empty window selection"));
        }
        let t = self.window_len();
        let per = self.windows.len() / self.len();
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len() * t);
        let mut mask = Vec::with_capacity(indices.len() * t);
        let mut origin = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("window {i} out of range ({} windows)", self.len())));
            }
            data.extend_from_slice(&self.windows.data()[i * per..(i + 1) * per]);
            labels.extend_from_slice(&self.labels[i * t..(i + 1) * t]);
            mask.extend_from_slice(&self.valid_mask[i * t..(i + 1) * t]);
            origin.push(self.origin[i].clone());
        }
        let mut shape = self.windows.shape().to_vec();
        shape[0] = indices.len();
        Ok(WindowBatch {
            windows: Tensor::from_vec(&shape, data)?,
            labels,
            valid_mask: mask,
            origin,
        })
    }

    /// Concatenates batches with equal window geometry.
    pub fn concat(batches: &[WindowBatch]) -> Result<WindowBatch> {
        let first = batches.first().ok_or_else(|| Error::invalid("no window batches to concatenate"))?;
        let mut shape = first.windows.shape().to_vec();
        let mut data = Vec::new();
        let mut out = WindowBatch {
            windows: Tensor::zeros(&[0]),
            labels: Vec::new(),
            valid_mask: Vec::new(),
            origin: Vec::new(),
        };
        for b in batches {
            if b.windows.shape()[1..] != shape[1..] {
                return Err(Error::invalid(format!(
                    "window shapes differ: {:?} vs {:?}",
                    b.windows.shape(),
                    first.windows.shape()
                )));
            }
            data.extend_from_slice(b.windows.data());
            out.labels.extend_from_slice(&b.labels);
            out.valid_mask.extend_from_slice(&b.valid_mask);
            out.origin.extend(b.origin.iter().cloned());
        }
        shape[0] = out.origin.len();
        out.windows = Tensor::from_vec(&shape, data)?;
        Ok(out)
    }
}

pub fn window_length(fps: f64, window_seconds: f64) -> Result<usize> {
    if !(window_seconds > 0.0 && window_seconds.is_finite()) {
        return Err(Error::invalid(format!("window length must be positive, got {window_seconds} s")));
    }
    let t = (fps * window_seconds).round() as usize;
    if t == 0 {
        return Err(Error::invalid(format!("{window_seconds} s at {fps} fps is shorter than one frame")));
    }
    Ok(t)
}

/// Window start frames. Train mode slides by `round(T_win * stride_fraction)`
/// and adds one window flush with the end so the tail is seen; infer mode
/// tiles without overlap.
fn window_starts(total: usize, t_win: usize, stride_fraction: f64, mode: Mode) -> Result<Vec<usize>> {
    match mode {
        Mode::Infer => Ok((0..total.div_ceil(t_win)).map(|i| i * t_win).collect()),
        Mode::Train => {
            if !(stride_fraction > 0.0 && stride_fraction <= 1.0) {
                return Err(Error::invalid(format!("train stride fraction must be in (0, 1], got {stride_fraction}")));
            }
            if total <= t_win {
                return Ok(vec![0]);
            }
            let stride = ((t_win as f64 * stride_fraction).round() as usize).max(1);
            let mut starts: Vec<usize> = (0..=total - t_win).step_by(stride).collect();
            if *starts.last().unwrap() != total - t_win {
                starts.push(total - t_win);
            }
            Ok(starts)
        }
    }
}

/// Cuts `seq` into windows of `round(fps * window_seconds)` frames.
/// Windows reaching past the end are zero-padded and masked.
pub fn make_windows(seq: &SkeletonSequence, window_seconds: f64, stride_fraction: f64, mode: Mode) -> Result<WindowBatch> {
    let total = seq.len();
    if total < 2 {
        return Err(Error::invalid(format!("{} has {total} frames; windowing needs at least 2", seq.source_id)));
    }
    if mode == Mode::Train && seq.labels.is_none() {
        return Err(Error::invalid(format!("{} has no labels to train on", seq.source_id)));
    }
    let t_win = window_length(seq.fps, window_seconds)?;
    let starts = window_starts(total, t_win, stride_fraction, mode)?;
    let frame_len = CANONICAL_NODES * 3;
    let n = starts.len();
    let mut windows = Tensor::zeros(&[n, t_win, CANONICAL_NODES, 3]);
    let mut labels = vec![0; n * t_win];
    let mut mask = vec![false; n * t_win];
    for (w, &s) in starts.iter().enumerate() {
        let end = (s + t_win).min(total);
        let len = end - s;
        windows.data_mut()[w * t_win * frame_len..(w * t_win + len) * frame_len]
            .copy_from_slice(&seq.frames.data()[s * frame_len..end * frame_len]);
        if let Some(l) = &seq.labels {
            labels[w * t_win..w * t_win + len].copy_from_slice(&l[s..end]);
        }
        mask[w * t_win..w * t_win + len].iter_mut().for_each(|m| *m = true);
    }
    Ok(WindowBatch {
        windows,
        labels,
        valid_mask: mask,
        origin: starts
            .into_iter()
            .map(|start| WindowOrigin {
                source_id: seq.source_id.clone(),
                start,
            })
            .collect(),
    })
}

/// Keeps only the canonical keypoints listed in `nodes` (in that order):
/// `[N, T, 23, C] -> [N, T, nodes.len(), C]`.
pub fn select_nodes(windows: &Tensor, nodes: &[usize]) -> Result<Tensor> {
    if windows.rank() != 4 || windows.dim(2) != CANONICAL_NODES {
        return Err(Error::invalid(format!("expected [N, T, {CANONICAL_NODES}, C] windows, got {:?}", windows.shape())));
    }
    if nodes.len() == CANONICAL_NODES && nodes.iter().enumerate().all(|(i, &n)| i == n) {
        return Ok(windows.clone());
    }
    if nodes.is_empty() || nodes.iter().any(|&n| n >= CANONICAL_NODES) {
        return Err(Error::invalid(format!("node selection {nodes:?} is not a subset of the canonical keypoints")));
    }
    let (n, t, c) = (windows.dim(0), windows.dim(1), windows.dim(3));
    let mut out = Vec::with_capacity(n * t * nodes.len() * c);
    for frame in windows.data().chunks(CANONICAL_NODES * c) {
        for &j in nodes {
            out.extend_from_slice(&frame[j * c..(j + 1) * c]);
        }
    }
    Tensor::from_vec(&[n, t, nodes.len(), c], out)
}

/// Per-frame probabilities `[T_total][classes]` from infer-mode windows.
pub fn stitch_probabilities(probs: &Tensor, origins: &[WindowOrigin], total: usize) -> Result<Vec<Vec<f64>>> {
    if probs.rank() != 3 || probs.dim(0) != origins.len() {
        return Err(Error::invalid(format!(
            "probabilities {:?} do not match {} window origins",
            probs.shape(),
            origins.len()
        )));
    }
    let (t_win, c) = (probs.dim(1), probs.dim(2));
    let mut out: Vec<Option<Vec<f64>>> = vec![None; total];
    for (w, o) in origins.iter().enumerate() {
        for i in 0..t_win {
            let f = o.start + i;
            if f >= total {
                break;
            }
            if out[f].is_some() {
                return Err(Error::invalid(format!("frame {f} is covered by more than one window")));
            }
            let row = &probs.data()[(w * t_win + i) * c..(w * t_win + i + 1) * c];
            out[f] = Some(row.to_vec());
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(f, p)| p.ok_or_else(|| Error::invalid(format!("frame {f} is not covered by any window"))))
        .collect()
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn stitch_predictions(probs: &Tensor, origins: &[WindowOrigin], total: usize) -> Result<Vec<usize>> {
    Ok(stitch_probabilities(probs, origins, total)?.iter().map(|p| argmax(p)).collect())
}

/// Probabilities at 6 decimals. The argmax entry absorbs the rounding
/// residue so each printed row sums to exactly 1.
fn rounded_row(p: &[f64]) -> Vec<i64> {
    let top = argmax(p);
    let mut q: Vec<i64> = p.iter().map(|v| (v * 1e6).round() as i64).collect();
    let rest: i64 = q.iter().enumerate().filter(|(i, _)| *i != top).map(|(_, v)| v).sum();
    q[top] = 1_000_000 - rest;
    q
}

/// Writes `frame,label,p_none,p_eat,p_drink`.
pub fn write_predictions(path: &Path, probs: &[Vec<f64>]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "frame,label,p_none,p_eat,p_drink").map_err(io)?;
    for (f, p) in probs.iter().enumerate() {
        if p.len() != CLASS_COUNT {
            return Err(Error::invalid(format!("frame {f}: {} class probabilities, expected {CLASS_COUNT}", p.len())));
        }
        let q = rounded_row(p);
        let cells: Vec<String> = q.iter().map(|v| format!("{}.{:06}", v / 1_000_000, v % 1_000_000)).collect();
        writeln!(w, "{f},{},{}", argmax(p), cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    frame: usize,
    label: usize,
}

/// Frame labels from a prediction CSV written by [`write_predictions`].
pub fn load_prediction_labels(path: &Path) -> Result<Vec<usize>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut labels = Vec::new();
    for (i, rec) in reader.deserialize::<PredictionRow>().enumerate() {
        let row = rec.map_err(|e| csv_error(path, e))?;
        if row.frame != i {
            return Err(parse_error(path, i + 2, format!("expected frame {i}, got {}", row.frame)));
        }
        if row.label >= CLASS_COUNT {
            return Err(parse_error(path, i + 2, format!("label {} outside 0..{CLASS_COUNT}", row.label)));
        }
        labels.push(row.label);
    }
    Ok(labels)
}
