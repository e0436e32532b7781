//! One spatial-temporal graph convolution block.
//!
//! ```text
//! x ─ graph conv ─ BN ─ ReLU ─ dropout ─ temporal conv ─ BN ─(+)─ ReLU
//! └──────────── identity or 1x1 projection ─────────────────────┘
//! ```

use super::config::ModelConfig;
use super::params::BlockParams;
use crate::error::{Error, Result};
use crate::graph::{PartitionedAdjacency, PARTITIONS};
use crate::numeric::activation::{dropout, dropout_backward, relu, relu_backward};
use crate::numeric::batchnorm::{batch_norm_backward, batch_norm_forward, BnCache, RunningStats};
use crate::numeric::conv::{temporal_conv_backward, temporal_conv_forward};
use crate::numeric::gemm::{gemm, MatMut, MatRef};
use crate::numeric::{Mode, RngStream, Tensor};
use crate::par;

/// Normalized adjacency multiplied elementwise by the importance mask.
pub fn effective_adjacency(adjacency: &PartitionedAdjacency, importance: &Tensor) -> Vec<f64> {
    adjacency
        .stacks
        .iter()
        .zip(importance.data())
        .map(|(a, m)| a * m)
        .collect()
}

/// Spatial graph convolution:
/// `out[n, o, t, i] = b[o] + sum_p sum_c w[p, o, c] * sum_j a[p, i, j] * x[n, c, t, j]`.
///
/// `support` lists the flat indices of `a` that may be nonzero (see
/// [`PartitionedAdjacency::support`]); entries outside it are ignored. Also
/// returns the per-partition aggregated inputs `[N, 3, C_in, T, V]`, which
/// the backward pass needs.
pub fn graph_conv_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    adjacency: &[f64],
    support: &[usize],
) -> Result<(Tensor, Vec<f64>)> {
    let (n, cin, t, v) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    if weight.rank() != 3 || weight.dim(0) != PARTITIONS || weight.dim(2) != cin {
        return Err(Error::invalid(format!(
            "graph conv weight {:?} does not fit input {:?}",
            weight.shape(),
            x.shape()
        )));
    }
    check_adjacency(adjacency, support, v)?;
    let cout = weight.dim(1);
    let plane = t * v;
    let entries = support_entries(adjacency, support, v);
    let per_sample = par::map_range(n, |b| {
        let xs = &x.data()[b * cin * plane..(b + 1) * cin * plane];
        let mut z = vec![0.0; PARTITIONS * cin * plane];
        let block = cin * plane;
        for (r, xr) in xs.chunks_exact(v).enumerate() {
            for &(p, i, j, a) in &entries {
                z[p * block + r * v + i] += a * xr[j];
            }
        }
        let mut g = vec![0.0; cout * plane];
        for (o, row) in g.chunks_mut(plane).enumerate() {
            row.iter_mut().for_each(|e| *e = bias.data()[o]);
        }
        for p in 0..PARTITIONS {
            gemm(
                1.0,
                MatRef::new(weight.data(), p * cout * cin, cout, cin),
                MatRef::new(&z, p * cin * plane, cin, plane),
                1.0,
                MatMut::new(&mut g, 0, cout, plane),
            );
        }
        (g, z)
    });
    let mut out = Tensor::zeros(&[n, cout, t, v]);
    let mut partials = Vec::with_capacity(n * PARTITIONS * cin * plane);
    for (b, (g, z)) in per_sample.into_iter().enumerate() {
        out.data_mut()[b * cout * plane..(b + 1) * cout * plane].copy_from_slice(&g);
        partials.extend_from_slice(&z);
    }
    Ok((out, partials))
}

fn check_adjacency(adjacency: &[f64], support: &[usize], v: usize) -> Result<()> {
    if adjacency.len() != PARTITIONS * v * v {
        return Err(Error::invalid(format!(
            "adjacency is for {} nodes, input has {v}",
            ((adjacency.len() / PARTITIONS) as f64).sqrt() as usize
        )));
    }
    if support.iter().any(|&k| k >= adjacency.len()) {
        return Err(Error::invalid("adjacency support index out of range"));
    }
    Ok(())
}

/// `(partition, row, column, weight)` for each support index.
fn support_entries(adjacency: &[f64], support: &[usize], v: usize) -> Vec<(usize, usize, usize, f64)> {
    support.iter().map(|&k| (k / (v * v), k / v % v, k % v, adjacency[k])).collect()
}

#[derive(Debug, Clone)]
pub struct GraphConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
    /// Gradient with respect to the effective adjacency, `[3, V, V]`,
    /// nonzero only on the support.
    pub adjacency: Tensor,
}

pub fn graph_conv_backward(
    x: &Tensor,
    weight: &Tensor,
    adjacency: &[f64],
    support: &[usize],
    partials: &[f64],
    grad_out: &Tensor,
) -> Result<GraphConvGrads> {
    let (n, cin, t, v) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let cout = weight.dim(1);
    let plane = t * v;
    if grad_out.shape() != [n, cout, t, v] || partials.len() != n * PARTITIONS * cin * plane {
        return Err(Error::invalid("graph conv backward: shape mismatch"));
    }
    check_adjacency(adjacency, support, v)?;
    let entries = support_entries(adjacency, support, v);
    let per_sample = par::map_range(n, |b| {
        let dg = MatRef::new(grad_out.data(), b * cout * plane, cout, plane);
        let xs = &x.data()[b * cin * plane..(b + 1) * cin * plane];
        let mut dw = vec![0.0; PARTITIONS * cout * cin];
        let mut dz = vec![0.0; PARTITIONS * cin * plane];
        let db: Vec<f64> = grad_out.data()[b * cout * plane..(b + 1) * cout * plane]
            .chunks(plane)
            .map(|r| r.iter().sum())
            .collect();
        for p in 0..PARTITIONS {
            let zoff = (b * PARTITIONS + p) * cin * plane;
            gemm(
                1.0,
                dg,
                MatRef::new(partials, zoff, cin, plane).t(),
                0.0,
                MatMut::new(&mut dw, p * cout * cin, cout, cin),
            );
            gemm(
                1.0,
                MatRef::new(weight.data(), p * cout * cin, cout, cin).t(),
                dg,
                0.0,
                MatMut::new(&mut dz, p * cin * plane, cin, plane),
            );
        }
        let mut dx = vec![0.0; cin * plane];
        let mut da_entries = vec![0.0; entries.len()];
        let block = cin * plane;
        for (r, (dxr, xr)) in dx.chunks_exact_mut(v).zip(xs.chunks_exact(v)).enumerate() {
            for (e, &(p, i, j, a)) in entries.iter().enumerate() {
                let d = dz[p * block + r * v + i];
                dxr[j] += a * d;
                da_entries[e] += d * xr[j];
            }
        }
        let mut da = vec![0.0; PARTITIONS * v * v];
        for (&k, d) in support.iter().zip(&da_entries) {
            da[k] = *d;
        }
        (dx, dw, db, da)
    });
    let mut g = GraphConvGrads {
        input: Tensor::zeros(x.shape()),
        weight: Tensor::zeros(weight.shape()),
        bias: Tensor::zeros(&[cout]),
        adjacency: Tensor::zeros(&[PARTITIONS, v, v]),
    };
    for (b, (dx, dw, db, da)) in per_sample.into_iter().enumerate() {
        g.input.data_mut()[b * cin * plane..(b + 1) * cin * plane].copy_from_slice(&dx);
        acc(g.weight.data_mut(), &dw);
        acc(g.bias.data_mut(), &db);
        acc(g.adjacency.data_mut(), &da);
    }
    Ok(g)
}

fn acc(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// 1x1 channel projection `[N, C_in, T, V] -> [N, C_out, T, V]`.
fn project_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, cin, t, v) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let cout = w.dim(0);
    let plane = t * v;
    let mut out = Tensor::zeros(&[n, cout, t, v]);
    par::for_each_chunk_mut(out.data_mut(), cout * plane, |s, y| {
        for (o, row) in y.chunks_mut(plane).enumerate() {
            row.iter_mut().for_each(|e| *e = b.data()[o]);
        }
        gemm(
            1.0,
            MatRef::new(w.data(), 0, cout, cin),
            MatRef::new(x.data(), s * cin * plane, cin, plane),
            1.0,
            MatMut::new(y, 0, cout, plane),
        );
    });
    out
}

fn project_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, cin, t, v) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    let cout = w.dim(0);
    let plane = t * v;
    let parts = par::map_range(n, |s| {
        let g = MatRef::new(dy.data(), s * cout * plane, cout, plane);
        let mut dx = vec![0.0; cin * plane];
        let mut dw = vec![0.0; cout * cin];
        gemm(1.0, MatRef::new(w.data(), 0, cout, cin).t(), g, 0.0, MatMut::new(&mut dx, 0, cin, plane));
        gemm(1.0, g, MatRef::new(x.data(), s * cin * plane, cin, plane).t(), 0.0, MatMut::new(&mut dw, 0, cout, cin));
        let db: Vec<f64> = dy.data()[s * cout * plane..(s + 1) * cout * plane]
            .chunks(plane)
            .map(|r| r.iter().sum())
            .collect();
        (dx, dw, db)
    });
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[cout]);
    for (s, (a, b, c)) in parts.into_iter().enumerate() {
        dx.data_mut()[s * cin * plane..(s + 1) * cin * plane].copy_from_slice(&a);
        acc(dw.data_mut(), &b);
        acc(db.data_mut(), &c);
    }
    (dx, dw, db)
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    adjacency: Vec<f64>,
    support: Vec<usize>,
    partials: Vec<f64>,
    bn_graph: BnCache,
    relu_out: Tensor,
    dropout_mask: Option<Vec<f64>>,
    tcn_input: Tensor,
    bn_temporal: BnCache,
}

#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub output: Tensor,
    pub cache: Option<BlockCache>,
    /// Updated running statistics `(graph BN, temporal BN)` in train mode.
    pub stats: Option<(RunningStats, RunningStats)>,
}

#[allow(clippy::too_many_arguments)]
pub fn stgcn_block_forward(
    x: &Tensor,
    params: &BlockParams,
    config: &ModelConfig,
    index: usize,
    adjacency: &PartitionedAdjacency,
    mode: Mode,
    rng: &RngStream,
    keep_cache: bool,
) -> Result<BlockOutput> {
    if x.rank() != 4 || x.dim(3) != adjacency.node_count {
        return Err(Error::invalid(format!(
            "block {index}: input {:?} does not match {} graph nodes",
            x.shape(),
            adjacency.node_count
        )));
    }
    let (_, dilation) = config.temporal_geometry(index);
    let a_eff = effective_adjacency(adjacency, &params.edge_importance.value);
    let support = adjacency.support();
    let (g, partials) = graph_conv_forward(x, &params.gcn_weight.value, &params.gcn_bias.value, &a_eff, &support)?;
    let mut st_graph = params.bn_graph.stats.clone();
    let (a1, bn_graph) = batch_norm_forward(
        &g,
        &params.bn_graph.scale.value,
        &params.bn_graph.shift.value,
        &mut st_graph,
        mode,
        config.bn_momentum,
        config.bn_eps,
    )?;
    drop(g);
    let relu_out = relu(&a1);
    drop(a1);
    let (tcn_input, dropout_mask) = dropout(&relu_out, config.blocks[index].dropout_rate, rng, mode)?;
    let c = temporal_conv_forward(&tcn_input, &params.tcn_weight.value, dilation)?;
    let mut st_temporal = params.bn_temporal.stats.clone();
    let (mut s, bn_temporal) = batch_norm_forward(
        &c,
        &params.bn_temporal.scale.value,
        &params.bn_temporal.shift.value,
        &mut st_temporal,
        mode,
        config.bn_momentum,
        config.bn_eps,
    )?;
    match &params.residual {
        Some((w, b)) => s.add_assign(&project_forward(x, &w.value, &b.value)),
        None => s.add_assign(x),
    }
    let output = relu(&s);
    let cache = keep_cache.then_some(BlockCache {
        adjacency: a_eff,
        support,
        partials,
        bn_graph,
        relu_out,
        dropout_mask,
        tcn_input,
        bn_temporal,
    });
    Ok(BlockOutput {
        output,
        cache,
        stats: (mode == Mode::Train).then_some((st_graph, st_temporal)),
    })
}

/// Accumulates parameter gradients into `params` and returns the gradient
/// with respect to the block input.
pub fn stgcn_block_backward(
    x: &Tensor,
    output: &Tensor,
    cache: &BlockCache,
    params: &mut BlockParams,
    config: &ModelConfig,
    index: usize,
    adjacency: &PartitionedAdjacency,
    grad_out: &Tensor,
) -> Result<Tensor> {
    let (_, dilation) = config.temporal_geometry(index);
    let ds = relu_backward(output, grad_out);
    let mut dx = match &mut params.residual {
        Some((w, b)) => {
            let (dx, dw, db) = project_backward(x, &w.value, &ds);
            w.grad.add_assign(&dw);
            b.grad.add_assign(&db);
            dx
        }
        None => ds.clone(),
    };
    let (dc, dscale, dshift) = batch_norm_backward(&cache.bn_temporal, &params.bn_temporal.scale.value, &ds)?;
    params.bn_temporal.scale.grad.add_assign(&dscale);
    params.bn_temporal.shift.grad.add_assign(&dshift);
    let (dd, dk) = temporal_conv_backward(&cache.tcn_input, &params.tcn_weight.value, dilation, &dc)?;
    params.tcn_weight.grad.add_assign(&dk);
    let dr = dropout_backward(cache.dropout_mask.as_deref(), &dd);
    let da1 = relu_backward(&cache.relu_out, &dr);
    let (dg, dscale, dshift) = batch_norm_backward(&cache.bn_graph, &params.bn_graph.scale.value, &da1)?;
    params.bn_graph.scale.grad.add_assign(&dscale);
    params.bn_graph.shift.grad.add_assign(&dshift);
    let g = graph_conv_backward(
        x,
        &params.gcn_weight.value,
        &cache.adjacency,
        &cache.support,
        &cache.partials,
        &dg,
    )?;
    params.gcn_weight.grad.add_assign(&g.weight);
    params.gcn_bias.grad.add_assign(&g.bias);
    let mut dm = g.adjacency;
    for (d, a) in dm.data_mut().iter_mut().zip(&adjacency.stacks) {
        *d *= a;
    }
    params.edge_importance.grad.add_assign(&dm);
    dx.add_assign(&g.input);
    Ok(dx)
}
