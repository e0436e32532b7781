//! Run configuration, dataset resolution and the five commands:
//! synth, train, predict, eval and inspect-graph.

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TopologyDescriptor, TrainingState};
use crate::error::{Error, Result};
use crate::eval::{evaluate, frames_to_segments, EvalReport, DEFAULT_THRESHOLDS};
use crate::graph::{
    build_topology, hop_distances, partition_adjacency, validate_topology, BodyPart, PartitionedAdjacency,
    SkeletonTopology, CANONICAL_KEYPOINTS, DEFAULT_EPSILON, UNREACHABLE,
};
use crate::model::{compute_loss, init_params, model_forward, train_step, Batch, ModelConfig, ModelParams};
use crate::numeric::loss::log_softmax;
use crate::numeric::{AdamSettings, Mode, RngStream, Tensor};
use crate::par::map_range;
use crate::pipeline::{
    argmax, load_keypoints, load_labels, load_prediction_labels, make_windows, normalize_coordinates, select_nodes,
    stitch_probabilities, write_keypoints, write_labels, write_predictions, SkeletonSequence, WindowBatch,
    DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_TRAIN_STRIDE, DEFAULT_WINDOW_SECONDS,
};
use crate::synth::{generate_sequence, SynthConfig, FRAME_SIZE};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const DATASET_MANIFEST: &str = "dataset.json";
pub const FINAL_CHECKPOINT: &str = "final";
pub const BEST_CHECKPOINT: &str = "best";
pub const METRICS_LOG: &str = "metrics.jsonl";

// rng stream tags
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const STEP_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub parts: Vec<BodyPart>,
    pub confidence_threshold: f64,
    /// Frame rate and frame size for keypoint files outside a dataset
    /// directory; dataset manifests carry their own.
    pub fps: f64,
    pub frame_width: f64,
    pub frame_height: f64,
    pub window_seconds: f64,
    pub train_stride: f64,
    pub model: ModelConfig,
    pub optimizer: AdamSettings,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub train: Vec<PathBuf>,
    pub val: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
    pub thresholds: Vec<f64>,
    /// Stop once the training-set F1 at IoU 0.5 reaches this value.
    pub target_train_f1: Option<f64>,
    pub resume: Option<PathBuf>,
    pub synth: SynthConfig,
    pub synth_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            parts: BodyPart::ALL.to_vec(),
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            fps: 24.0,
            frame_width: FRAME_SIZE,
            frame_height: FRAME_SIZE,
            window_seconds: DEFAULT_WINDOW_SECONDS,
            train_stride: DEFAULT_TRAIN_STRIDE,
            model: ModelConfig::default(),
            optimizer: AdamSettings::default(),
            epochs: 50,
            batch_size: 64,
            seed: 0,
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            target_train_f1: None,
            resume: None,
            synth: SynthConfig::default(),
            synth_count: 20,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return bad(format!("confidence threshold must be in [0, 1], got {}", self.confidence_threshold));
        }
        if !(self.fps > 0.0 && self.frame_width > 0.0 && self.frame_height > 0.0) {
            return bad("fps and frame size must be positive".into());
        }
        if !(self.train_stride > 0.0 && self.train_stride <= 1.0) {
            return bad(format!("train stride fraction must be in (0, 1], got {}", self.train_stride));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|k| !(0.0..=1.0).contains(k)) {
            return bad(format!("IoU thresholds must lie in [0, 1], got {:?}", self.thresholds));
        }
        if let Some(t) = self.target_train_f1 {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("target train F1 must be in [0, 1], got {t}"));
            }
        }
        self.synth.validate()
    }

    pub fn part_set(&self) -> BTreeSet<BodyPart> {
        self.parts.iter().copied().collect()
    }
}

// ---------------------------------------------------------------------------
// datasets

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GestureTotals {
    pub eat: usize,
    pub drink: usize,
}

impl GestureTotals {
    pub fn count(labels: &[usize]) -> Self {
        let segs = frames_to_segments(labels);
        GestureTotals {
            eat: segs.iter().filter(|s| s.class_id == 1).count(),
            drink: segs.iter().filter(|s| s.class_id == 2).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub keypoints: String,
    pub labels: String,
    pub frames: usize,
    pub gestures: GestureTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub fps: f64,
    pub frame_width: f64,
    pub frame_height: f64,
    pub totals: GestureTotals,
    pub sequences: Vec<DatasetEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DATASET_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One keypoint file with its optional label file and capture geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSource {
    pub id: String,
    pub keypoints: PathBuf,
    pub labels: Option<PathBuf>,
    pub fps: f64,
    pub frame_width: f64,
    pub frame_height: f64,
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn files_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Expands dataset directories (with a manifest), plain directories of
/// `.jsonl` files, and single keypoint files. Labels for a bare keypoint
/// file are looked up next to it as `<stem>.csv`.
pub fn resolve_sources(paths: &[PathBuf], config: &RunConfig) -> Result<Vec<SequenceSource>> {
    let mut out = Vec::new();
    let bare = |kp: PathBuf| {
        let labels = kp.with_extension("csv");
        SequenceSource {
            id: stem(&kp),
            labels: labels.is_file().then_some(labels),
            keypoints: kp,
            fps: config.fps,
            frame_width: config.frame_width,
            frame_height: config.frame_height,
        }
    };
    for p in paths {
        if p.join(DATASET_MANIFEST).is_file() {
            let m = DatasetManifest::load(p)?;
            for e in m.sequences {
                out.push(SequenceSource {
                    id: e.id,
                    keypoints: p.join(e.keypoints),
                    labels: Some(p.join(e.labels)),
                    fps: m.fps,
                    frame_width: m.frame_width,
                    frame_height: m.frame_height,
                });
            }
        } else if p.is_dir() {
            out.extend(files_with_extension(p, "jsonl")?.into_iter().map(bare));
        } else if p.is_file() {
            out.push(bare(p.clone()));
        } else {
            return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")));
        }
    }
    let mut seen = BTreeSet::new();
    for s in &out {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::invalid(format!("sequence id '{}' appears more than once", s.id)));
        }
    }
    Ok(out)
}

/// Loads, thresholds and normalizes one sequence, attaching labels when
/// `need_labels` is set.
pub fn load_sequence(src: &SequenceSource, confidence_threshold: f64, need_labels: bool) -> Result<SkeletonSequence> {
    let seq = load_keypoints(&src.keypoints, confidence_threshold, src.fps)?;
    let (mut seq, _) = normalize_coordinates(&seq, src.frame_width, src.frame_height)?;
    seq.source_id = src.id.clone();
    if need_labels {
        let path = src
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("no label file for sequence '{}'", src.id)))?;
        let labels = load_labels(path, seq.len())?;
        seq = seq.with_labels(labels)?;
    }
    Ok(seq)
}

pub fn load_split(paths: &[PathBuf], config: &RunConfig) -> Result<Vec<SkeletonSequence>> {
    resolve_sources(paths, config)?
        .iter()
        .map(|s| load_sequence(s, config.confidence_threshold, true))
        .collect()
}

// ---------------------------------------------------------------------------
// synth

/// Seed of the `i`-th generated sequence.
pub fn sequence_seed(seed: u64, i: usize) -> u64 {
    RngStream::new(seed).derive(i as u64).generator().gen()
}

/// Generates `count` labeled sequences in memory.
pub fn synth_sequences(config: &SynthConfig, count: usize) -> Result<Vec<SkeletonSequence>> {
    config.validate()?;
    (0..count)
        .map(|i| {
            let cfg = SynthConfig {
                seed: sequence_seed(config.seed, i),
                ..config.clone()
            };
            generate_sequence(&cfg, &format!("seq_{i:03}"))
        })
        .collect()
}

/// Writes `count` sequences as `<id>.jsonl` / `<id>.csv` plus the dataset manifest.
pub fn cmd_synth(config: &SynthConfig, count: usize, out: &Path) -> Result<DatasetManifest> {
    let seqs = synth_sequences(config, count)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = DatasetManifest {
        fps: config.fps,
        frame_width: FRAME_SIZE,
        frame_height: FRAME_SIZE,
        totals: GestureTotals::default(),
        sequences: Vec::new(),
        synth: Some(config.clone()),
    };
    for seq in &seqs {
        let labels = seq.labels.as_deref().expect("synthetic sequences are labeled");
        let entry = DatasetEntry {
            id: seq.source_id.clone(),
            keypoints: format!("{}.jsonl", seq.source_id),
            labels: format!("{}.csv", seq.source_id),
            frames: seq.len(),
            gestures: GestureTotals::count(labels),
        };
        write_keypoints(&out.join(&entry.keypoints), seq)?;
        write_labels(&out.join(&entry.labels), labels)?;
        manifest.totals.eat += entry.gestures.eat;
        manifest.totals.drink += entry.gestures.drink;
        manifest.sequences.push(entry);
    }
    write_json(&out.join(DATASET_MANIFEST), &manifest)?;
    Ok(manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// model context and inference

/// Topology, adjacency and the model configuration sized to it.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub topology: SkeletonTopology,
    pub adjacency: PartitionedAdjacency,
    pub nodes: Vec<usize>,
    pub model: ModelConfig,
}

impl ModelContext {
    pub fn new(parts: &BTreeSet<BodyPart>, model: &ModelConfig) -> Result<Self> {
        let topology = build_topology(parts)?;
        let adjacency = partition_adjacency(&topology, DEFAULT_EPSILON)?;
        let model = ModelConfig {
            num_nodes: topology.node_count(),
            ..model.clone()
        };
        model.validate()?;
        Ok(ModelContext {
            nodes: topology.canonical_indices(),
            topology,
            adjacency,
            model,
        })
    }

    pub fn descriptor(&self) -> TopologyDescriptor {
        TopologyDescriptor::of(&self.topology)
    }
}

/// Train-mode windows of every sequence, reduced to the selected nodes.
pub fn training_windows(seqs: &[SkeletonSequence], config: &RunConfig, nodes: &[usize]) -> Result<WindowBatch> {
    let parts = seqs
        .iter()
        .map(|s| make_windows(s, config.window_seconds, config.train_stride, Mode::Train))
        .collect::<Result<Vec<_>>>()?;
    let mut batch = WindowBatch::concat(&parts)?;
    batch.windows = select_nodes(&batch.windows, nodes)?;
    Ok(batch)
}

/// Frame probabilities for a whole sequence and, when it is labeled, the
/// loss summed over valid frames along with the valid frame count.
pub struct SequenceInference {
    pub probs: Vec<Vec<f64>>,
    pub loss: Option<(f64, usize)>,
}

pub fn infer_sequence(
    params: &ModelParams,
    ctx: &ModelContext,
    seq: &SkeletonSequence,
    window_seconds: f64,
    batch_size: usize,
) -> Result<SequenceInference> {
    let windows = make_windows(seq, window_seconds, 1.0, Mode::Infer)?;
    let t_win = windows.window_len();
    let mut probs = Vec::with_capacity(windows.len() * t_win * ctx.model.class_count);
    let mut loss_sum = 0.0;
    let mut frames = 0;
    let indices: Vec<usize> = (0..windows.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let part = windows.select(chunk)?;
        let x = select_nodes(&part.windows, &ctx.nodes)?;
        let logits = model_forward(&x, params, &ctx.model, &ctx.adjacency, &RngStream::new(0), Mode::Infer)?;
        if !logits.all_finite() {
            return Err(Error::NonFinite(format!("logits for {}", seq.source_id)));
        }
        if seq.labels.is_some() {
            let valid = part.valid_mask.iter().filter(|m| **m).count();
            let l = compute_loss(&logits, &part.labels, &part.valid_mask, &ctx.model)?;
            loss_sum += l.total * valid as f64;
            frames += valid;
        }
        probs.extend(log_softmax(&logits).data().iter().map(|v| v.exp()));
    }
    let probs = Tensor::from_vec(&[windows.len(), t_win, ctx.model.class_count], probs)?;
    Ok(SequenceInference {
        probs: stitch_probabilities(&probs, &windows.origin, seq.len())?,
        loss: seq.labels.as_ref().map(|_| (loss_sum, frames)),
    })
}

/// Per-sequence reports, the pooled report, and the frame-weighted mean loss.
#[derive(Debug, Clone)]
pub struct SplitEvaluation {
    pub per_sequence: Vec<(String, EvalReport)>,
    pub pooled: EvalReport,
    pub loss: f64,
}

pub fn evaluate_split(
    params: &ModelParams,
    ctx: &ModelContext,
    seqs: &[SkeletonSequence],
    config: &RunConfig,
) -> Result<SplitEvaluation> {
    let results = map_range(seqs.len(), |i| -> Result<(EvalReport, (f64, usize))> {
        let seq = &seqs[i];
        let inf = infer_sequence(params, ctx, seq, config.window_seconds, config.batch_size)?;
        let pred: Vec<usize> = inf.probs.iter().map(|p| argmax(p)).collect();
        let gt = seq
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("{} has no labels to evaluate against", seq.source_id)))?;
        Ok((evaluate(gt, &pred, &config.thresholds)?, inf.loss.unwrap_or((0.0, 0))))
    });
    let mut per_sequence = Vec::new();
    let (mut loss, mut frames) = (0.0, 0);
    for (seq, r) in seqs.iter().zip(results) {
        let (report, (l, n)) = r?;
        loss += l;
        frames += n;
        per_sequence.push((seq.source_id.clone(), report));
    }
    let reports: Vec<EvalReport> = per_sequence.iter().map(|(_, r)| r.clone()).collect();
    Ok(SplitEvaluation {
        pooled: EvalReport::pooled(&reports)?,
        per_sequence,
        loss: if frames > 0 { loss / frames as f64 } else { 0.0 },
    })
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub global_step: u64,
    pub parameter_count: usize,
    pub train_loss: f64,
    pub train_cross_entropy: f64,
    pub train_smoothing: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_f1: Option<f64>,
    pub best: bool,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub records: Vec<EpochRecord>,
    pub params: ModelParams,
    pub context: ModelContext,
    pub state: TrainingState,
    pub stopped_early: bool,
}

fn batch_context(batch: &WindowBatch, epoch: usize, step: u64) -> String {
    let ids: Vec<String> = batch
        .origin
        .iter()
        .take(4)
        .map(|o| format!("{}@{}", o.source_id, o.start))
        .collect();
    let more = batch.origin.len().saturating_sub(ids.len());
    let tail = if more > 0 { format!(" and {more} more") } else { String::new() };
    format!("epoch {}, step {step}, windows {}{tail}", epoch + 1, ids.join(", "))
}

/// Trains on `config.train`, validating on `config.val` after every epoch.
/// Writes `config.json`, `metrics.jsonl`, and the `final` (every epoch) and
/// `best` (best validation F1 at IoU 0.5) checkpoints under `out`.
pub fn cmd_train(config: &RunConfig, out: &Path, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<TrainSummary> {
    config.validate()?;
    if config.train.is_empty() {
        return Err(Error::invalid("no training data given"));
    }
    let train = load_split(&config.train, config)?;
    let val = load_split(&config.val, config)?;
    train_sequences(config, &train, &val, out, on_epoch)
}

/// [`cmd_train`] on sequences already in memory.
pub fn train_sequences(
    config: &RunConfig,
    train: &[SkeletonSequence],
    val: &[SkeletonSequence],
    out: &Path,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainSummary> {
    config.validate()?;
    let ctx = ModelContext::new(&config.part_set(), &config.model)?;
    let rng = RngStream::new(config.seed);
    let windows = training_windows(train, config, &ctx.nodes)?;
    if windows.is_empty() {
        return Err(Error::invalid("training data produced no windows"));
    }

    let (mut params, mut state) = match &config.resume {
        Some(dir) => {
            let ckpt = load_checkpoint(dir)?;
            if ckpt.model != ctx.model {
                return Err(Error::Checkpoint(format!("{} was trained with a different model configuration", dir.display())));
            }
            if ckpt.topology != ctx.descriptor() {
                return Err(Error::Checkpoint(format!(
                    "{} was trained on {} nodes of parts {:?}, this run selects {} nodes of {:?}",
                    dir.display(),
                    ckpt.topology.nodes.len(),
                    ckpt.topology.parts,
                    ctx.nodes.len(),
                    ctx.topology.parts
                )));
            }
            (ckpt.params, ckpt.state)
        }
        None => (
            init_params(&ctx.model, &rng.derive(INIT_STREAM))?.rounded_to_f32(),
            TrainingState {
                seed: config.seed,
                ..TrainingState::default()
            },
        ),
    };

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("config.json"), config)?;
    let log_path = out.join(METRICS_LOG);
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(config.resume.is_some())
        .write(true)
        .truncate(config.resume.is_none())
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let parameter_count = params.parameter_count();
    let mut records = Vec::new();
    let mut stopped_early = false;
    for epoch in state.epoch..config.epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut rng.derive(SHUFFLE_STREAM).derive(epoch as u64).generator());
        let (mut total, mut ce, mut smooth) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let part = windows.select(chunk)?;
            let batch = Batch {
                inputs: part.windows.clone(),
                labels: part.labels.clone(),
                mask: part.valid_mask.clone(),
            };
            let step_rng = rng.derive(STEP_STREAM).derive(state.global_step);
            let rec = train_step(&mut params, &batch, &ctx.model, &ctx.adjacency, &step_rng, &config.optimizer)
                .map_err(|e| match e {
                    Error::NonFinite(what) => {
                        Error::NonFinite(format!("{what} ({})", batch_context(&part, epoch, state.global_step)))
                    }
                    other => other,
                })?;
            let w = chunk.len() as f64;
            total += rec.total * w;
            ce += rec.cross_entropy * w;
            smooth += rec.smoothing * w;
            state.global_step += 1;
        }
        params = params.rounded_to_f32();
        state.epoch = epoch + 1;

        let n = windows.len() as f64;
        let train_f1 = match config.target_train_f1 {
            Some(_) => Some(evaluate_split(&params, &ctx, train, config)?.pooled.overall_f1(0.5)),
            None => None,
        };
        let val_eval = if val.is_empty() {
            None
        } else {
            Some(evaluate_split(&params, &ctx, val, config)?)
        };
        let val_f1 = val_eval.as_ref().map(|v| v.pooled.overall_f1(0.5));
        let best = match (val_f1, state.best_val_f1) {
            (Some(f), Some(b)) => f > b,
            (Some(_), None) => true,
            _ => false,
        };
        if best {
            state.best_val_f1 = val_f1;
        }
        let ckpt = Checkpoint {
            model: ctx.model.clone(),
            topology: ctx.descriptor(),
            state,
            params: params.clone(),
        };
        if best {
            save_checkpoint(&out.join(BEST_CHECKPOINT), &ckpt)?;
        }
        save_checkpoint(&out.join(FINAL_CHECKPOINT), &ckpt)?;

        let record = EpochRecord {
            epoch: state.epoch,
            global_step: state.global_step,
            parameter_count,
            train_loss: total / n,
            train_cross_entropy: ce / n,
            train_smoothing: smooth / n,
            train_f1,
            val_loss: val_eval.as_ref().map(|v| v.loss),
            val_f1,
            best,
        };
        let line = serde_json::to_string(&record)?;
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        on_epoch(&record);
        records.push(record);
        if let (Some(target), Some(f1)) = (config.target_train_f1, train_f1) {
            if f1 >= target {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainSummary {
        records,
        params,
        context: ctx,
        state,
        stopped_early,
    })
}

// ---------------------------------------------------------------------------
// predict

/// Writes `<out>/<id>.csv` for every input sequence using the checkpoint's
/// topology. `parts`, when given, must select the checkpoint's node count.
pub fn cmd_predict(
    checkpoint: &Path,
    inputs: &[PathBuf],
    config: &RunConfig,
    parts: Option<&BTreeSet<BodyPart>>,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let ckpt = load_checkpoint(checkpoint)?;
    let ctx = ModelContext::new(&ckpt.topology.parts.iter().copied().collect(), &ckpt.model)?;
    if ckpt.model.num_nodes != ctx.nodes.len() || ckpt.topology.nodes != ctx.nodes {
        return Err(Error::invalid(format!(
            "checkpoint model expects V = {} nodes, its topology selects {}",
            ckpt.model.num_nodes,
            ctx.nodes.len()
        )));
    }
    if let Some(parts) = parts {
        let v = build_topology(parts)?.node_count();
        if v != ckpt.model.num_nodes {
            return Err(Error::invalid(format!(
                "checkpoint expects V = {} nodes, the requested parts select V = {v}",
                ckpt.model.num_nodes
            )));
        }
    }
    let sources = resolve_sources(inputs, config)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let results = map_range(sources.len(), |i| -> Result<PathBuf> {
        let seq = load_sequence(&sources[i], config.confidence_threshold, false)?;
        let inf = infer_sequence(&ckpt.params, &ctx, &seq, config.window_seconds, config.batch_size)?;
        let path = out.join(format!("{}.csv", sources[i].id));
        write_predictions(&path, &inf.probs)?;
        Ok(path)
    });
    results.into_iter().collect()
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub per_sequence: BTreeMap<String, EvalReport>,
    pub pooled: EvalReport,
}

impl EvalSummary {
    pub fn to_json(&self) -> serde_json::Value {
        let seqs: BTreeMap<&str, serde_json::Value> =
            self.per_sequence.iter().map(|(id, r)| (id.as_str(), r.to_json())).collect();
        serde_json::json!({ "pooled": self.pooled.to_json(), "sequences": seqs })
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for (id, r) in &self.per_sequence {
            s.push_str(&format!("== {id}\n{}\n", r.to_table()));
        }
        s.push_str(&format!("== pooled\n{}", self.pooled.to_table()));
        s
    }
}

fn label_files(paths: &[PathBuf]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let mut add = |id: String, path: PathBuf| {
        if out.insert(id.clone(), path).is_some() {
            return Err(Error::invalid(format!("sequence id '{id}' appears more than once")));
        }
        Ok(())
    };
    for p in paths {
        if p.join(DATASET_MANIFEST).is_file() {
            for e in DatasetManifest::load(p)?.sequences {
                add(e.id, p.join(e.labels))?;
            }
        } else if p.is_dir() {
            for f in files_with_extension(p, "csv")? {
                add(stem(&f), f)?;
            }
        } else {
            add(stem(p), p.clone())?;
        }
    }
    Ok(out)
}

/// Pairs ground-truth and prediction files by sequence id and evaluates
/// each pair; the pooled report sums counts before computing metrics.
pub fn cmd_eval(gt: &[PathBuf], pred: &[PathBuf], ks: &[f64]) -> Result<EvalSummary> {
    let gt = label_files(gt)?;
    let pred = label_files(pred)?;
    let only_gt: Vec<&String> = gt.keys().filter(|k| !pred.contains_key(*k)).collect();
    let only_pred: Vec<&String> = pred.keys().filter(|k| !gt.contains_key(*k)).collect();
    if !only_gt.is_empty() || !only_pred.is_empty() {
        return Err(Error::invalid(format!(
            "sequence ids differ: without prediction {only_gt:?}, without ground truth {only_pred:?}"
        )));
    }
    if gt.is_empty() {
        return Err(Error::invalid("no sequences to evaluate"));
    }
    let mut per_sequence = BTreeMap::new();
    for (id, gt_path) in &gt {
        let p = load_prediction_labels(&pred[id])?;
        let g = load_labels(gt_path, p.len())?;
        per_sequence.insert(id.clone(), evaluate(&g, &p, ks)?);
    }
    let reports: Vec<EvalReport> = per_sequence.values().cloned().collect();
    Ok(EvalSummary {
        pooled: EvalReport::pooled(&reports)?,
        per_sequence,
    })
}

/// Writes `report.json` and `report.txt` into `out`.
pub fn write_eval_report(summary: &EvalSummary, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("report.json"), &summary.to_json())?;
    let path = out.join("report.txt");
    std::fs::write(&path, summary.to_table()).map_err(|e| Error::io(&path, e))
}

// ---------------------------------------------------------------------------
// inspect-graph

/// Topology JSON with hop distances, partition row sums and warnings.
pub fn inspect_graph(parts: &BTreeSet<BodyPart>) -> Result<serde_json::Value> {
    let topo = build_topology(parts)?;
    let adjacency = partition_adjacency(&topo, DEFAULT_EPSILON)?;
    let hops: Vec<Option<usize>> = hop_distances(&topo, topo.root)?
        .into_iter()
        .map(|d| (d != UNREACHABLE).then_some(d))
        .collect();
    let report = validate_topology(&topo);
    let root = &topo.nodes[topo.root];
    let mut warnings = Vec::new();
    if topo.disconnected {
        let unreachable: Vec<&str> = topo
            .nodes
            .iter()
            .zip(&hops)
            .filter(|(_, h)| h.is_none())
            .map(|(n, _)| n.label.as_str())
            .collect();
        warnings.push(format!(
            "selected subgraph is disconnected; unreachable from the root: {}",
            unreachable.join(", ")
        ));
    }
    warnings.extend(report.problems.iter().cloned());
    Ok(serde_json::json!({
        "parts": topo.parts,
        "node_count": topo.node_count(),
        "nodes": topo.nodes,
        "edges": topo.edges,
        "root": {
            "local": topo.root,
            "canonical": root.canonical_index,
            "source": CANONICAL_KEYPOINTS[root.canonical_index].0,
            "label": root.label,
        },
        "hop_distances": hops,
        "partition_row_sums": adjacency.row_sums(),
        "connected": report.connected,
        "warnings": warnings,
    }))
}
