//! Acceptance checks, one PASS/FAIL line each. Pass criterion numbers as
//! arguments to run a subset: `cargo test --test acceptance -- 1 4 7`.

mod common;

use intake_core::checkpoint::BLOB_FILE;
use intake_core::eval::{evaluate, f1_from_counts, frames_to_segments, GESTURE_CLASSES};
use intake_core::graph::{
    ablation_combinations, build_topology, full_topology, hop_distances, partition_adjacency, partition_masks,
    validate_topology, SkeletonTopology, DEFAULT_EPSILON, PARTITIONS,
};
use intake_core::model::block::{graph_conv_backward, graph_conv_forward};
use intake_core::model::network::{backward, forward};
use intake_core::model::{compute_loss, init_params, BlockConfig, ModelConfig, TcnMode};
use intake_core::numeric::batchnorm::{batch_norm_backward, batch_norm_forward, RunningStats};
use intake_core::numeric::conv::{conv1d_dilated, conv1d_dilated_backward};
use intake_core::numeric::dense::{dense_backward, dense_forward};
use intake_core::numeric::gradcheck::{finite_difference_check, finite_difference_check_with_floor, random_tensor};
use intake_core::numeric::loss::{log_softmax, softmax_cross_entropy, truncated_mse_smoothing};
use intake_core::numeric::lstm::{bilstm_backward, bilstm_forward, LstmWeights};
use intake_core::numeric::{Mode, RngStream, Tensor};
use intake_core::pipeline::{make_windows, stitch_predictions, SkeletonSequence};
use intake_core::run::{cmd_synth, cmd_train, synth_sequences, train_sequences, RunConfig};
use intake_core::synth::SynthConfig;
use rand::SeedableRng;
use std::process::ExitCode;
use std::time::Instant;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn f1_arithmetic() -> Outcome {
    let rows = [
        ((705, 109, 132), 85.40),
        ((693, 114, 139), 84.56),
        ((625, 149, 172), 79.57),
        ((40, 10, 28), 67.80),
        ((38, 11, 29), 65.52),
        ((35, 11, 32), 61.95),
    ];
    let mut worst = 0.0f64;
    for ((tp, fp, fn_), f1) in rows {
        let got = 100.0 * f1_from_counts(tp, fp, fn_).f1;
        worst = worst.max((got - f1).abs());
        ensure((got - f1).abs() < 0.01, || format!("({tp}, {fp}, {fn_}) gave {got:.4}, want {f1}"))?;
    }
    Ok(format!("6 rows, max deviation {worst:.4} pp"))
}

const LINEAR_TOL: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn check(name: &str, err: f64, tol: f64, worst: &mut Vec<String>) -> Result<(), String> {
    worst.push(format!("{name} {err:.1e}"));
    ensure(err < tol, || format!("{name}: relative error {err:.3e} >= {tol:e}"))
}

fn gradients() -> Outcome {
    let mut log = Vec::new();

    // dense, projected onto a fixed cotangent
    let x = random_tensor(&[3, 4, 5], 1);
    let w = random_tensor(&[5, 6], 2);
    let b = random_tensor(&[6], 3);
    let proj = random_tensor(&[3, 4, 6], 4);
    let dot = |y: &Tensor| y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>();
    let g = dense_backward(&x, &w, &proj).map_err(|e| e.to_string())?;
    let f = |xs: &[f64]| dot(&dense_forward(&Tensor::from_vec(x.shape(), xs.to_vec()).unwrap(), &w, &b).unwrap());
    check("dense/input", finite_difference_check(f, x.data(), g.input.data(), 1e-5), LINEAR_TOL, &mut log)?;
    let f = |ws: &[f64]| dot(&dense_forward(&x, &Tensor::from_vec(w.shape(), ws.to_vec()).unwrap(), &b).unwrap());
    check("dense/weight", finite_difference_check(f, w.data(), g.weight.data(), 1e-5), LINEAR_TOL, &mut log)?;
    let f = |bs: &[f64]| dot(&dense_forward(&x, &w, &Tensor::from_vec(b.shape(), bs.to_vec()).unwrap()).unwrap());
    check("dense/bias", finite_difference_check(f, b.data(), g.bias.data(), 1e-5), LINEAR_TOL, &mut log)?;

    // dilated convolution
    for d in [1, 2, 4, 8, 16] {
        let x = random_tensor(&[2, 3, 40], 10 + d as u64);
        let k = random_tensor(&[4, 3, 3], 20 + d as u64);
        let proj = random_tensor(&[2, 4, 40], 30 + d as u64);
        let dot = |y: &Tensor| y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>();
        let (dx, dk) = conv1d_dilated_backward(&x, &k, d, &proj).map_err(|e| e.to_string())?;
        let f = |xs: &[f64]| dot(&conv1d_dilated(&Tensor::from_vec(x.shape(), xs.to_vec()).unwrap(), &k, d).unwrap());
        check(&format!("conv d={d}/input"), finite_difference_check(f, x.data(), dx.data(), 1e-5), LINEAR_TOL, &mut log)?;
        let f = |ks: &[f64]| dot(&conv1d_dilated(&x, &Tensor::from_vec(k.shape(), ks.to_vec()).unwrap(), d).unwrap());
        check(&format!("conv d={d}/kernel"), finite_difference_check(f, k.data(), dk.data(), 1e-5), LINEAR_TOL, &mut log)?;
    }

    // graph convolution over the full skeleton, including the adjacency gradient
    let adj = partition_adjacency(&full_topology(), DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    let support = adj.support();
    let x = random_tensor(&[2, 3, 4, 23], 80);
    let w = random_tensor(&[PARTITIONS, 5, 3], 81);
    let b = random_tensor(&[5], 82);
    let proj = random_tensor(&[2, 5, 4, 23], 83);
    let dot = |y: &Tensor| y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>();
    let gc = |x: &Tensor, w: &Tensor, a: &[f64]| graph_conv_forward(x, w, &b, a, &support).unwrap();
    let (_, partials) = gc(&x, &w, &adj.stacks);
    let g = graph_conv_backward(&x, &w, &adj.stacks, &support, &partials, &proj).map_err(|e| e.to_string())?;
    let f = |v: &[f64]| dot(&gc(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &w, &adj.stacks).0);
    check("graph-conv/input", finite_difference_check(f, x.data(), g.input.data(), 1e-5), LINEAR_TOL, &mut log)?;
    let f = |v: &[f64]| dot(&gc(&x, &Tensor::from_vec(w.shape(), v.to_vec()).unwrap(), &adj.stacks).0);
    check("graph-conv/weight", finite_difference_check(f, w.data(), g.weight.data(), 1e-5), LINEAR_TOL, &mut log)?;
    let on_support: Vec<f64> = support.iter().map(|&i| adj.stacks[i]).collect();
    let grad_support: Vec<f64> = support.iter().map(|&i| g.adjacency.data()[i]).collect();
    let f = |v: &[f64]| {
        let mut a = adj.stacks.clone();
        for (&i, &x) in support.iter().zip(v) {
            a[i] = x;
        }
        dot(&gc(&x, &w, &a).0)
    };
    check("graph-conv/adjacency", finite_difference_check(f, &on_support, &grad_support, 1e-5), LINEAR_TOL, &mut log)?;

    // batch norm in train mode
    let x = random_tensor(&[3, 4, 5, 2], 40);
    let scale = random_tensor(&[4], 41);
    let shift = random_tensor(&[4], 42);
    let proj = random_tensor(&[3, 4, 5, 2], 43);
    let dot = |y: &Tensor| y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>();
    let bn = |x: &Tensor, s: &Tensor, h: &Tensor| {
        let mut stats = RunningStats::new(4);
        batch_norm_forward(x, s, h, &mut stats, Mode::Train, 0.1, 1e-5).unwrap()
    };
    let (_, cache) = bn(&x, &scale, &shift);
    let (dx, ds, dh) = batch_norm_backward(&cache, &scale, &proj).map_err(|e| e.to_string())?;
    let f = |xs: &[f64]| dot(&bn(&Tensor::from_vec(x.shape(), xs.to_vec()).unwrap(), &scale, &shift).0);
    check("batchnorm/input", finite_difference_check(f, x.data(), dx.data(), 1e-5), TOL, &mut log)?;
    let f = |v: &[f64]| dot(&bn(&x, &Tensor::from_vec(&[4], v.to_vec()).unwrap(), &shift).0);
    check("batchnorm/scale", finite_difference_check(f, scale.data(), ds.data(), 1e-5), TOL, &mut log)?;
    let f = |v: &[f64]| dot(&bn(&x, &scale, &Tensor::from_vec(&[4], v.to_vec()).unwrap()).0);
    check("batchnorm/shift", finite_difference_check(f, shift.data(), dh.data(), 1e-5), TOL, &mut log)?;

    // BiLSTM
    let (n, t, feat, h) = (2, 6, 3, 4);
    let x = random_tensor(&[n, t, feat], 50);
    let ws: Vec<Tensor> = [[4 * h, feat], [4 * h, h]]
        .iter()
        .chain([[4 * h, feat], [4 * h, h]].iter())
        .enumerate()
        .map(|(i, s)| random_tensor(s, 51 + i as u64))
        .collect();
    let (bf, bb) = (random_tensor(&[4 * h], 60), random_tensor(&[4 * h], 61));
    let proj = random_tensor(&[n, t, 2 * h], 62);
    let dot = |y: &Tensor| y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>();
    let run = |x: &Tensor, ws: &[Tensor]| {
        let fw = LstmWeights { w_ih: &ws[0], w_hh: &ws[1], bias: &bf };
        let bw = LstmWeights { w_ih: &ws[2], w_hh: &ws[3], bias: &bb };
        bilstm_forward(x, fw, bw).unwrap()
    };
    let (_, cache) = run(&x, &ws);
    let fw = LstmWeights { w_ih: &ws[0], w_hh: &ws[1], bias: &bf };
    let bw = LstmWeights { w_ih: &ws[2], w_hh: &ws[3], bias: &bb };
    let (dx, gf, gb) = bilstm_backward(&x, fw, bw, &cache, &proj).map_err(|e| e.to_string())?;
    let f = |xs: &[f64]| dot(&run(&Tensor::from_vec(x.shape(), xs.to_vec()).unwrap(), &ws).0);
    check("bilstm/input", finite_difference_check(f, x.data(), dx.data(), 1e-5), TOL, &mut log)?;
    for (i, grad) in [&gf.w_ih, &gf.w_hh, &gb.w_ih, &gb.w_hh].into_iter().enumerate() {
        let f = |v: &[f64]| {
            let mut w2 = ws.clone();
            w2[i] = Tensor::from_vec(ws[i].shape(), v.to_vec()).unwrap();
            dot(&run(&x, &w2).0)
        };
        check(&format!("bilstm/weight{i}"), finite_difference_check(f, ws[i].data(), grad.data(), 1e-5), TOL, &mut log)?;
    }

    // both losses
    let logits = random_tensor(&[2, 7, 3], 70);
    let labels: Vec<usize> = (0..14).map(|i| i % 3).collect();
    let mut mask = vec![true; 14];
    mask[5] = false;
    let ce = softmax_cross_entropy(&logits, &labels, &mask).map_err(|e| e.to_string())?;
    let f = |v: &[f64]| {
        softmax_cross_entropy(&Tensor::from_vec(logits.shape(), v.to_vec()).unwrap(), &labels, &mask).unwrap().loss
    };
    check("cross-entropy", finite_difference_check(f, logits.data(), ce.grad.data(), 1e-5), TOL, &mut log)?;
    // the smoothing gradient treats the earlier frame as a constant
    let lp = log_softmax(&random_tensor(&[2, 7, 3], 71));
    let (_, g) = truncated_mse_smoothing(&lp, 0.3, &mask).map_err(|e| e.to_string())?;
    let f = |v: &[f64]| {
        let (c, t) = (3, 7);
        let (mut total, mut pairs) = (0.0, 0);
        for b in 0..2 {
            for s in 1..t {
                let i = b * t + s;
                if !(mask[i] && mask[i - 1]) {
                    continue;
                }
                pairs += 1;
                for k in 0..c {
                    let d = v[i * c + k] - lp.data()[(i - 1) * c + k];
                    total += d.abs().min(0.3).powi(2);
                }
            }
        }
        total / (pairs * c) as f64
    };
    check("smoothing", finite_difference_check(f, lp.data(), g.data(), 1e-6), TOL, &mut log)?;

    // miniature end-to-end model
    check("end-to-end", end_to_end_error()?, TOL, &mut log)?;
    Ok(log.join(", "))
}

fn end_to_end_error() -> Result<f64, String> {
    let cfg = ModelConfig {
        blocks: vec![
            BlockConfig { out_channels: 4, dilation: 1, dropout_rate: 0.2, temporal_kernel: 3 },
            BlockConfig { out_channels: 6, dilation: 2, dropout_rate: 0.2, temporal_kernel: 3 },
        ],
        num_nodes: 4,
        bilstm_hidden: 4,
        dense_widths: vec![5, 5],
        ..ModelConfig::default()
    };
    let topo = build_topology(&[intake_core::graph::BodyPart::Mouth].into_iter().collect()).map_err(|e| e.to_string())?;
    let adj = partition_adjacency(&topo, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    let mut params = init_params(&cfg, &RngStream::new(3)).map_err(|e| e.to_string())?;
    for (i, p) in params.params_mut().into_iter().enumerate() {
        let r = random_tensor(p.value.shape(), 1000 + i as u64);
        for (v, d) in p.value.data_mut().iter_mut().zip(r.data()) {
            *v += 0.3 * d;
        }
    }
    let (n, t) = (2, 8);
    let x = random_tensor(&[n, t, 4, 3], 7);
    let labels: Vec<usize> = (0..n * t).map(|i| (i / 3) % 3).collect();
    let mut mask = vec![true; n * t];
    mask[n * t - 1] = false;
    let rng = RngStream::new(11);
    let out = forward(&x, &params, &cfg, &adj, &rng, Mode::Train, true).map_err(|e| e.to_string())?;
    let loss = compute_loss(&out.logits, &labels, &mask, &cfg).map_err(|e| e.to_string())?;
    let frozen = log_softmax(&out.logits);
    let objective = |p: &intake_core::model::ModelParams| {
        let o = forward(&x, p, &cfg, &adj, &rng, Mode::Train, false).unwrap();
        let ce = softmax_cross_entropy(&o.logits, &labels, &mask).unwrap().loss;
        let lp = log_softmax(&o.logits);
        let (mut total, mut pairs) = (0.0, 0usize);
        for b in 0..n {
            for s in 1..t {
                let i = b * t + s;
                if !(mask[i] && mask[i - 1]) {
                    continue;
                }
                pairs += 1;
                for k in 0..3 {
                    let d = lp.data()[i * 3 + k] - frozen.data()[(i - 1) * 3 + k];
                    total += d.abs().min(cfg.smoothing_tau).powi(2);
                }
            }
        }
        ce + cfg.smoothing_lambda * total / (pairs * 3) as f64
    };
    params.zero_grads();
    backward(&mut params, out.cache.as_ref().unwrap(), &cfg, &adj, &loss.grad).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for k in 0..params.params().len() {
        let base = params.params()[k].value.clone();
        let grad = params.params()[k].grad.clone();
        let err = finite_difference_check_with_floor(
            |d| {
                let mut q = params.clone();
                q.params_mut()[k].value.data_mut().copy_from_slice(d);
                objective(&q)
            },
            base.data(),
            grad.data(),
            1e-5,
            1e-6,
        );
        worst = worst.max(err);
    }
    Ok(worst)
}

fn shapes() -> Outcome {
    let cfg = ModelConfig::default();
    let adj = partition_adjacency(&full_topology(), DEFAULT_EPSILON).map_err(|e| e.to_string())?;
    let params = init_params(&cfg, &RngStream::new(1)).map_err(|e| e.to_string())?;
    let v = cfg.num_nodes;
    for t in [60, 144] {
        let x = random_tensor(&[1, t, v, 3], t as u64);
        let out = forward(&x, &params, &cfg, &adj, &RngStream::new(0), Mode::Infer, true).map_err(|e| e.to_string())?;
        let cache = out.cache.ok_or("no forward cache")?;
        for (i, (y, b)) in cache.block_outputs().iter().zip(&cfg.blocks).enumerate() {
            ensure(y.shape() == [1, b.out_channels, t, v], || format!("T={t} block {i}: {:?}", y.shape()))?;
        }
        ensure(cache.block_outputs().len() == 10, || "expected 10 blocks".into())?;
        ensure(cache.lstm_input().shape() == [1, t, 256 * v], || format!("T={t} reshape: {:?}", cache.lstm_input().shape()))?;
        let lstm = &cache.dense_inputs()[0];
        ensure(lstm.shape() == [1, t, 512], || format!("T={t} BiLSTM: {:?}", lstm.shape()))?;
        ensure(out.logits.shape() == [1, t, 3], || format!("T={t} logits: {:?}", out.logits.shape()))?;
        ensure(out.logits.all_finite(), || "non-finite logits".into())?;
    }
    Ok(format!("10 blocks, [N, T, {}], [N, T, 512], [N, T, 3] at T = 60, 144", 256 * v))
}

fn check_partitions(topo: &SkeletonTopology) -> Result<(), String> {
    let v = topo.node_count();
    let masks = partition_masks(topo).map_err(|e| e.to_string())?;
    let mut neighbor = vec![false; v * v];
    for i in 0..v {
        neighbor[i * v + i] = true;
    }
    for &(a, b) in &topo.edges {
        neighbor[a * v + b] = true;
        neighbor[b * v + a] = true;
    }
    for ij in 0..v * v {
        let hits: f64 = (0..PARTITIONS).map(|p| masks[p * v * v + ij]).sum();
        let want = if neighbor[ij] { 1.0 } else { 0.0 };
        ensure(hits == want, || format!("{:?}: pair ({}, {}) in {hits} partitions", topo.parts, ij / v, ij % v))?;
    }
    ensure(validate_topology(topo).pass, || format!("{:?}: invalid topology", topo.parts))
}

fn graph() -> Outcome {
    let combos = ablation_combinations();
    ensure(combos.len() == 6, || format!("{} combinations", combos.len()))?;
    for parts in &combos {
        check_partitions(&build_topology(parts).map_err(|e| e.to_string())?)?;
    }
    let full = full_topology();
    check_partitions(&full)?;
    let report = validate_topology(&full);
    ensure(report.connected, || "full graph disconnected".into())?;
    let d = hop_distances(&full, full.root).map_err(|e| e.to_string())?;
    ensure(d.iter().all(|&h| h != intake_core::graph::UNREACHABLE), || "unreachable node".into())?;
    let root = &full.nodes[full.root];
    ensure(root.source_index == 90, || format!("root source index {}", root.source_index))?;
    Ok(format!("6 combinations + full graph, root local {} source 90", root.local_index))
}

fn evaluator_oracle() -> Outcome {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let ks = [0.1, 0.25, 0.5, 0.75, 1.0];
    let trials = 10_000;
    for trial in 0..trials {
        let len = 20 + trial % 180;
        let gt = common::random_timeline(&mut rng, len, 8);
        let pred = common::random_timeline(&mut rng, len, 8);
        let report = evaluate(&gt, &pred, &ks).map_err(|e| e.to_string())?;
        for c in GESTURE_CLASSES {
            let n_gt = frames_to_segments(&gt).iter().filter(|s| s.class_id == c).count();
            let n_pred = frames_to_segments(&pred).iter().filter(|s| s.class_id == c).count();
            let mut prev_tp = usize::MAX;
            for &k in &ks {
                let e = report.get(c, k).ok_or("missing entry")?.counts;
                let oracle = common::brute_force_counts(&gt, &pred, c, k);
                ensure((e.tp, e.fp, e.fn_) == oracle, || {
                    format!("trial {trial} class {c} k {k}: got {:?}, oracle {oracle:?}", (e.tp, e.fp, e.fn_))
                })?;
                ensure(e.tp + e.fp == n_pred && e.tp + e.fn_ == n_gt, || format!("trial {trial}: conservation"))?;
                ensure(e.tp <= prev_tp, || format!("trial {trial}: tp rose with k"))?;
                prev_tp = e.tp;
            }
        }
    }
    Ok(format!("{trials} trials, {} thresholds, 2 classes", ks.len()))
}

/// Final train and held-out F1@0.5 of one run, plus the number of epochs it took.
fn learn(mode: TcnMode, train: &[SkeletonSequence], held: &[SkeletonSequence]) -> Result<(f64, f64, usize), String> {
    let mut model = ModelConfig::reduced(23);
    model.tcn_mode = mode;
    model.basic_kernel = 3;
    let mut cfg = RunConfig {
        model,
        epochs: 50,
        batch_size: 16,
        train_stride: 1.0,
        seed: 7,
        target_train_f1: Some(0.95),
        ..Default::default()
    };
    cfg.optimizer.lr = 1e-3;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let summary = train_sequences(&cfg, train, held, dir.path(), &mut |r| {
        eprintln!(
            "  {mode:?} epoch {:2} loss {:.4} train F1@0.5 {:.4} held-out F1@0.5 {:.4}",
            r.epoch,
            r.train_loss,
            r.train_f1.unwrap_or(0.0),
            r.val_f1.unwrap_or(0.0)
        );
    })
    .map_err(|e| e.to_string())?;
    let last = summary.records.last().ok_or("no epochs ran")?;
    Ok((last.train_f1.unwrap_or(0.0), last.val_f1.unwrap_or(0.0), summary.records.len()))
}

fn learnability() -> Outcome {
    let train = synth_sequences(&SynthConfig { seed: 1, ..Default::default() }, 20).map_err(|e| e.to_string())?;
    let held = synth_sequences(&SynthConfig { seed: 2, ..Default::default() }, 5).map_err(|e| e.to_string())?;
    let (dil_train, dil_held, dil_epochs) = learn(TcnMode::Dilated, &train, &held)?;
    let (bas_train, bas_held, bas_epochs) = learn(TcnMode::Basic, &train, &held)?;
    let detail = format!(
        "dilated train {dil_train:.4} held-out {dil_held:.4} ({dil_epochs} epochs); \
         basic train {bas_train:.4} held-out {bas_held:.4} ({bas_epochs} epochs)"
    );
    ensure(dil_train >= 0.95, || format!("dilated train F1 below 0.95: {detail}"))?;
    ensure(dil_held >= 0.80, || format!("dilated held-out F1 below 0.80: {detail}"))?;
    ensure(dil_held - bas_held >= 0.02, || format!("dilated margin below 2 points: {detail}"))?;
    Ok(detail)
}

fn round_trip() -> Outcome {
    for fps in [24.0, 10.0] {
        for total in [143, 144, 145, 300] {
            let labels: Vec<usize> = (0..total).map(|f| (f / 7 + f / 11) % 3).collect();
            let seq = SkeletonSequence::new(Tensor::zeros(&[total, 23, 3]), fps, "r")
                .and_then(|s| s.with_labels(labels.clone()))
                .map_err(|e| e.to_string())?;
            let w = make_windows(&seq, 6.0, 0.5, Mode::Infer).map_err(|e| e.to_string())?;
            let mut probs = Tensor::zeros(&[w.len(), w.window_len(), 3]);
            for (i, l) in w.labels.iter().enumerate() {
                probs.data_mut()[i * 3 + l] = 1.0;
            }
            let back = stitch_predictions(&probs, &w.origin, total).map_err(|e| e.to_string())?;
            ensure(back == labels, || format!("T={total} at {fps} fps did not round-trip"))?;
        }
    }
    Ok("T = 143, 144, 145, 300 at 24 and 10 fps".into())
}

fn determinism() -> Outcome {
    let tiny: RunConfig = serde_json::from_str(
        r#"{
          "synth": {"duration_seconds": 12.0, "eat_count": [1, 2], "drink_count": [0, 1], "gesture_frames": [24, 48]},
          "synth_count": 3,
          "window_seconds": 2.0,
          "batch_size": 4,
          "epochs": 2,
          "seed": 5,
          "model": {
            "blocks": [{"out_channels": 4, "dilation": 1, "dropout_rate": 0.1, "temporal_kernel": 3},
                       {"out_channels": 4, "dilation": 2, "dropout_rate": 0.1, "temporal_kernel": 3}],
            "bilstm_hidden": 4,
            "dense_widths": [4]
          }
        }"#,
    )
    .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let data = dir.path().join(name).join("data");
        cmd_synth(&tiny.synth, tiny.synth_count, &data).map_err(|e| e.to_string())?;
        let cfg = RunConfig { train: vec![data.clone()], val: vec![data], ..tiny.clone() };
        let out = dir.path().join(name).join("run");
        cmd_train(&cfg, &out, &mut |_| {}).map_err(|e| e.to_string())?;
        runs.push(out);
    }
    let mut bytes = 0;
    for ckpt in ["final", "best"] {
        for file in ["manifest.json", BLOB_FILE] {
            let a = std::fs::read(runs[0].join(ckpt).join(file)).map_err(|e| e.to_string())?;
            let b = std::fs::read(runs[1].join(ckpt).join(file)).map_err(|e| e.to_string())?;
            ensure(a == b, || format!("{ckpt}/{file} differs"))?;
            bytes += a.len();
        }
    }
    Ok(format!("final and best checkpoints identical ({bytes} bytes)"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("f1-arithmetic", f1_arithmetic),
        ("gradient-suite", gradients),
        ("shape-conformance", shapes),
        ("graph-suite", graph),
        ("evaluator-oracle", evaluator_oracle),
        ("desk-scale-learnability", learnability),
        ("pipeline-round-trip", round_trip),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !selected.is_empty() && !selected.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
