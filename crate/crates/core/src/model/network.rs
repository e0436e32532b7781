use super::block::{stgcn_block_backward, stgcn_block_forward, BlockCache};
use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::graph::PartitionedAdjacency;
use crate::numeric::activation::{relu_backward, relu_in_place};
use crate::numeric::adam::{adam_step, AdamSettings};
use crate::numeric::batchnorm::{batch_norm_backward, batch_norm_forward, BnCache, RunningStats};
use crate::numeric::dense::{dense_backward, dense_forward};
use crate::numeric::loss::{log_softmax, log_softmax_backward, softmax_cross_entropy, truncated_mse_smoothing};
use crate::numeric::lstm::{bilstm_backward, bilstm_forward, BiLstmCache, LstmWeights};
use crate::numeric::{Mode, RngStream, Tensor};
use serde::{Deserialize, Serialize};

/// Model inputs `[N, T, V, C]` with per-frame labels and validity mask,
/// both flattened over `(N, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
}

pub struct ForwardCache {
    bn_input: BnCache,
    /// Block inputs followed by the final block output.
    block_io: Vec<Tensor>,
    blocks: Vec<BlockCache>,
    lstm_input: Tensor,
    lstm: BiLstmCache,
    dense_inputs: Vec<Tensor>,
}

impl ForwardCache {
    /// Output of every block, `[N, C_i, T, V]`.
    pub fn block_outputs(&self) -> &[Tensor] {
        &self.block_io[1..]
    }

    /// Block features reshaped per frame, `[N, T, C_last * V]`.
    pub fn lstm_input(&self) -> &Tensor {
        &self.lstm_input
    }

    /// Input of each dense layer; the first is the BiLSTM output `[N, T, 2H]`.
    pub fn dense_inputs(&self) -> &[Tensor] {
        &self.dense_inputs
    }
}

pub struct ForwardOutput {
    pub logits: Tensor,
    pub cache: Option<ForwardCache>,
    /// Running statistics after this batch, in [`ModelParams::running_stats`] order.
    pub stats: Option<Vec<RunningStats>>,
}

fn check_input(x: &Tensor, config: &ModelConfig, adjacency: &PartitionedAdjacency) -> Result<(usize, usize, usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::invalid(format!("model input must be [N, T, V, C], got {:?}", x.shape())));
    }
    let (n, t, v, c) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    if c != config.in_channels {
        return Err(Error::invalid(format!("expected {} input channels, got {c}", config.in_channels)));
    }
    if v != config.num_nodes || v != adjacency.node_count {
        return Err(Error::invalid(format!(
            "input has {v} keypoints, model expects {} (graph {})",
            config.num_nodes, adjacency.node_count
        )));
    }
    Ok((n, t, v, c))
}

/// `[N, T, V, C] -> [N, V*C, T]`
fn to_feature_major(x: &Tensor) -> Tensor {
    let (n, t, v, c) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let mut out = Tensor::zeros(&[n, v * c, t]);
    let (src, dst) = (x.data(), out.data_mut());
    for b in 0..n {
        for tt in 0..t {
            for j in 0..v {
                for k in 0..c {
                    dst[(b * v * c + j * c + k) * t + tt] = src[((b * t + tt) * v + j) * c + k];
                }
            }
        }
    }
    out
}

/// `[N, V*C, T] -> [N, C, T, V]`
fn to_channel_major(y: &Tensor, v: usize, c: usize) -> Tensor {
    let (n, t) = (y.dim(0), y.dim(2));
    let mut out = Tensor::zeros(&[n, c, t, v]);
    let (src, dst) = (y.data(), out.data_mut());
    for b in 0..n {
        for k in 0..c {
            for tt in 0..t {
                for j in 0..v {
                    dst[((b * c + k) * t + tt) * v + j] = src[(b * v * c + j * c + k) * t + tt];
                }
            }
        }
    }
    out
}

/// Inverse of [`to_channel_major`].
fn from_channel_major(h: &Tensor) -> Tensor {
    let (n, c, t, v) = (h.dim(0), h.dim(1), h.dim(2), h.dim(3));
    let mut out = Tensor::zeros(&[n, v * c, t]);
    let (src, dst) = (h.data(), out.data_mut());
    for b in 0..n {
        for k in 0..c {
            for tt in 0..t {
                for j in 0..v {
                    dst[(b * v * c + j * c + k) * t + tt] = src[((b * c + k) * t + tt) * v + j];
                }
            }
        }
    }
    out
}

/// `[N, C, T, V] -> [N, T, C*V]`
fn flatten_frames(h: &Tensor) -> Tensor {
    let (n, c, t, v) = (h.dim(0), h.dim(1), h.dim(2), h.dim(3));
    let mut out = Tensor::zeros(&[n, t, c * v]);
    let (src, dst) = (h.data(), out.data_mut());
    for b in 0..n {
        for k in 0..c {
            for tt in 0..t {
                let s = ((b * c + k) * t + tt) * v;
                let d = (b * t + tt) * c * v + k * v;
                dst[d..d + v].copy_from_slice(&src[s..s + v]);
            }
        }
    }
    out
}

fn unflatten_frames(z: &Tensor, c: usize, v: usize) -> Tensor {
    let (n, t) = (z.dim(0), z.dim(1));
    let mut out = Tensor::zeros(&[n, c, t, v]);
    let (src, dst) = (z.data(), out.data_mut());
    for b in 0..n {
        for k in 0..c {
            for tt in 0..t {
                let d = ((b * c + k) * t + tt) * v;
                let s = (b * t + tt) * c * v + k * v;
                dst[d..d + v].copy_from_slice(&src[s..s + v]);
            }
        }
    }
    out
}

fn lstm_weights(p: &super::params::LstmParams) -> LstmWeights<'_> {
    LstmWeights {
        w_ih: &p.w_ih.value,
        w_hh: &p.w_hh.value,
        bias: &p.bias.value,
    }
}

/// Full forward pass. In train mode `rng` drives dropout; the running
/// statistics are returned rather than written so `params` stays shared.
pub fn forward(
    x: &Tensor,
    params: &ModelParams,
    config: &ModelConfig,
    adjacency: &PartitionedAdjacency,
    rng: &RngStream,
    mode: Mode,
    keep_cache: bool,
) -> Result<ForwardOutput> {
    let (_, _, v, c) = check_input(x, config, adjacency)?;
    params.check_matches(config)?;
    let train = mode == Mode::Train;
    let mut stats = Vec::new();

    let mut st = params.input_bn.stats.clone();
    let (y, bn_input) = batch_norm_forward(
        &to_feature_major(x),
        &params.input_bn.scale.value,
        &params.input_bn.shift.value,
        &mut st,
        mode,
        config.bn_momentum,
        config.bn_eps,
    )?;
    if train {
        stats.push(st);
    }
    let mut h = to_channel_major(&y, v, c);
    drop(y);

    let mut block_io = Vec::new();
    let mut block_caches = Vec::new();
    for (i, bp) in params.blocks.iter().enumerate() {
        let out = stgcn_block_forward(&h, bp, config, i, adjacency, mode, &rng.derive(i as u64), keep_cache)?;
        if let Some((a, b)) = out.stats {
            stats.push(a);
            stats.push(b);
        }
        if let Some(cache) = out.cache {
            block_caches.push(cache);
        }
        let next = out.output;
        if keep_cache {
            block_io.push(std::mem::replace(&mut h, next));
        } else {
            h = next;
        }
    }
    let lstm_input = flatten_frames(&h);
    if keep_cache {
        block_io.push(h);
    } else {
        drop(h);
    }
    let (mut z, lstm) = bilstm_forward(
        &lstm_input,
        lstm_weights(&params.lstm_forward),
        lstm_weights(&params.lstm_backward),
    )?;
    let mut dense_inputs = Vec::new();
    let last = params.dense.len() - 1;
    for (i, d) in params.dense.iter().enumerate() {
        let mut out = dense_forward(&z, &d.weight.value, &d.bias.value)?;
        if i < last {
            relu_in_place(&mut out);
        }
        let prev = std::mem::replace(&mut z, out);
        if keep_cache {
            dense_inputs.push(prev);
        }
    }
    let cache = keep_cache.then_some(ForwardCache {
        bn_input,
        block_io,
        blocks: block_caches,
        lstm_input,
        lstm,
        dense_inputs,
    });
    Ok(ForwardOutput {
        logits: z,
        cache,
        stats: train.then_some(stats),
    })
}

/// Per-frame logits `[N, T, classes]` for input `[N, T, V, 3]`.
pub fn model_forward(
    x: &Tensor,
    params: &ModelParams,
    config: &ModelConfig,
    adjacency: &PartitionedAdjacency,
    rng: &RngStream,
    mode: Mode,
) -> Result<Tensor> {
    Ok(forward(x, params, config, adjacency, rng, mode, false)?.logits)
}

/// Accumulates gradients of the loss into every parameter's `grad`.
pub fn backward(
    params: &mut ModelParams,
    cache: &ForwardCache,
    config: &ModelConfig,
    adjacency: &PartitionedAdjacency,
    grad_logits: &Tensor,
) -> Result<()> {
    let mut g = grad_logits.clone();
    let last = params.dense.len() - 1;
    for i in (0..params.dense.len()).rev() {
        let input = &cache.dense_inputs[i];
        let d = &mut params.dense[i];
        let grads = dense_backward(input, &d.weight.value, &g)?;
        d.weight.grad.add_assign(&grads.weight);
        d.bias.grad.add_assign(&grads.bias);
        g = grads.input;
        // inputs of dense layers 1.. are ReLU outputs of the previous layer
        if i > 0 && i <= last {
            g = relu_backward(input, &g);
        }
    }
    let (dz, gf, gb) = bilstm_backward(
        &cache.lstm_input,
        lstm_weights(&params.lstm_forward),
        lstm_weights(&params.lstm_backward),
        &cache.lstm,
        &g,
    )?;
    for (p, gr) in [(&mut params.lstm_forward, gf), (&mut params.lstm_backward, gb)] {
        p.w_ih.grad.add_assign(&gr.w_ih);
        p.w_hh.grad.add_assign(&gr.w_hh);
        p.bias.grad.add_assign(&gr.bias);
    }
    let v = config.num_nodes;
    let mut dh = unflatten_frames(&dz, config.last_channels(), v);
    for i in (0..params.blocks.len()).rev() {
        dh = stgcn_block_backward(
            &cache.block_io[i],
            &cache.block_io[i + 1],
            &cache.blocks[i],
            &mut params.blocks[i],
            config,
            i,
            adjacency,
            &dh,
        )?;
    }
    let dy = from_channel_major(&dh);
    let (_, dscale, dshift) = batch_norm_backward(&cache.bn_input, &params.input_bn.scale.value, &dy)?;
    params.input_bn.scale.grad.add_assign(&dscale);
    params.input_bn.shift.grad.add_assign(&dshift);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub total: f64,
    pub cross_entropy: f64,
    pub smoothing: f64,
    pub grad: Tensor,
    pub probs: Tensor,
}

/// Cross-entropy plus `lambda` times the truncated-MSE smoothing term on
/// log-probabilities.
pub fn compute_loss(logits: &Tensor, labels: &[usize], mask: &[bool], config: &ModelConfig) -> Result<LossOutput> {
    let ce = softmax_cross_entropy(logits, labels, mask)?;
    let mut grad = ce.grad;
    let mut smoothing = 0.0;
    if config.smoothing_lambda > 0.0 && logits.rank() == 3 && logits.dim(1) >= 2 {
        let lp = log_softmax(logits);
        let (s, g) = truncated_mse_smoothing(&lp, config.smoothing_tau, mask)?;
        smoothing = s;
        let back = log_softmax_backward(&lp, &g);
        for (a, b) in grad.data_mut().iter_mut().zip(back.data()) {
            *a += config.smoothing_lambda * b;
        }
    }
    Ok(LossOutput {
        total: ce.loss + config.smoothing_lambda * smoothing,
        cross_entropy: ce.loss,
        smoothing,
        grad,
        probs: ce.probs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub total: f64,
    pub cross_entropy: f64,
    pub smoothing: f64,
}

fn first_non_finite(cache: &ForwardCache, logits: &Tensor) -> String {
    for (i, t) in cache.block_io.iter().enumerate().skip(1) {
        if !t.all_finite() {
            return format!("block{} output", i - 1);
        }
    }
    for (i, t) in cache.dense_inputs.iter().enumerate() {
        if !t.all_finite() {
            return if i == 0 { "bilstm output".into() } else { format!("dense{} output", i - 1) };
        }
    }
    if !logits.all_finite() {
        return "logits".into();
    }
    "loss".into()
}

/// Forward, loss, backward and one Adam update of every parameter.
pub fn train_step(
    params: &mut ModelParams,
    batch: &Batch,
    config: &ModelConfig,
    adjacency: &PartitionedAdjacency,
    rng: &RngStream,
    optimizer: &AdamSettings,
) -> Result<LossRecord> {
    if !batch.inputs.all_finite() {
        return Err(Error::NonFinite("input batch".into()));
    }
    let out = forward(&batch.inputs, params, config, adjacency, rng, Mode::Train, true)?;
    let cache = out.cache.expect("cache requested");
    let loss = compute_loss(&out.logits, &batch.labels, &batch.mask, config)?;
    if !loss.total.is_finite() {
        return Err(Error::NonFinite(first_non_finite(&cache, &out.logits)));
    }
    params.zero_grads();
    backward(params, &cache, config, adjacency, &loss.grad)?;
    if let Some(p) = params.params().into_iter().find(|p| !p.grad.all_finite()) {
        return Err(Error::NonFinite(format!("gradient of {}", p.name)));
    }
    for p in params.params_mut() {
        adam_step(p, optimizer)?;
    }
    for (dst, src) in params.running_stats_mut().into_iter().zip(out.stats.unwrap_or_default()) {
        *dst = src;
    }
    params.zero_grads();
    if let Some(name) = params.first_non_finite() {
        return Err(Error::NonFinite(name));
    }
    Ok(LossRecord {
        total: loss.total,
        cross_entropy: loss.cross_entropy,
        smoothing: loss.smoothing,
    })
}

/// Softmax class probabilities `[N, T, classes]` in inference mode.
pub fn predict_frames(
    params: &ModelParams,
    windows: &Tensor,
    config: &ModelConfig,
    adjacency: &PartitionedAdjacency,
) -> Result<Tensor> {
    let logits = model_forward(windows, params, config, adjacency, &RngStream::new(0), Mode::Infer)?;
    let mut probs = log_softmax(&logits);
    probs.data_mut().iter_mut().for_each(|v| *v = v.exp());
    Ok(probs)
}

#[cfg(test)]
#[allow(clippy::identity_op)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::random_tensor;

    #[test]
    fn permutations_round_trip() {
        let x = random_tensor(&[2, 5, 4, 3], 1);
        let y = to_feature_major(&x);
        let h = to_channel_major(&y, 4, 3);
        assert_eq!(from_channel_major(&h), y);
        let z = flatten_frames(&h);
        assert_eq!(unflatten_frames(&z, 3, 4), h);
        // spot check: h[n=1, c=2, t=3, v=1] == x[n=1, t=3, v=1, c=2]
        assert_eq!(h.data()[((1 * 3 + 2) * 5 + 3) * 4 + 1], x.data()[((1 * 5 + 3) * 4 + 1) * 3 + 2]);
        // z[n, t, c*V + v] == h[n, c, t, v]
        assert_eq!(z.data()[(1 * 5 + 3) * 12 + 2 * 4 + 1], h.data()[((1 * 3 + 2) * 5 + 3) * 4 + 1]);
    }

    #[test]
    fn lambda_zero_is_plain_cross_entropy() {
        let logits = random_tensor(&[1, 6, 3], 2);
        let labels = [0, 1, 2, 2, 1, 0];
        let mut cfg = ModelConfig::reduced(4);
        cfg.smoothing_lambda = 0.0;
        let l = compute_loss(&logits, &labels, &[true; 6], &cfg).unwrap();
        let ce = softmax_cross_entropy(&logits, &labels, &[true; 6]).unwrap();
        assert_eq!(l.total, ce.loss);
        assert_eq!(l.smoothing, 0.0);
    }
}
