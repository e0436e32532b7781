//! Bidirectional LSTM with backpropagation through time.
//!
//! Gate layout along the `4H` axis is `[input, forget, candidate, output]`.
//! Both directions start from zero hidden and cell states.

use super::gemm::{gemm, MatMut, MatRef};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::par;

/// Weights of one direction: `w_ih [4H, F]`, `w_hh [4H, H]`, `bias [4H]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights<'a> {
    pub w_ih: &'a Tensor,
    pub w_hh: &'a Tensor,
    pub bias: &'a Tensor,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

impl LstmGrads {
    fn zeros_like(w: LstmWeights<'_>) -> Self {
        LstmGrads {
            w_ih: Tensor::zeros(w.w_ih.shape()),
            w_hh: Tensor::zeros(w.w_hh.shape()),
            bias: Tensor::zeros(w.bias.shape()),
        }
    }

    fn accumulate(&mut self, other: &LstmGrads) {
        self.w_ih.add_assign(&other.w_ih);
        self.w_hh.add_assign(&other.w_hh);
        self.bias.add_assign(&other.bias);
    }
}

/// Activations of one direction over one sequence, indexed by time.
#[derive(Debug, Clone)]
struct DirectionTrace {
    /// post-activation gates `[T, 4H]`
    gates: Vec<f64>,
    cell: Vec<f64>,
    hidden: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    traces: Vec<(DirectionTrace, DirectionTrace)>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn hidden_size(w: LstmWeights<'_>, features: usize) -> Result<usize> {
    if w.w_hh.rank() != 2 || w.w_ih.rank() != 2 {
        return Err(Error::invalid("LSTM weights must be matrices"));
    }
    let h = w.w_hh.dim(1);
    if h == 0 {
        return Err(Error::invalid("LSTM hidden size must be > 0"));
    }
    if w.w_hh.dim(0) != 4 * h || w.w_ih.shape() != [4 * h, features] || w.bias.len() != 4 * h {
        return Err(Error::invalid(format!(
            "LSTM weight shapes inconsistent with H={h}, F={features}"
        )));
    }
    Ok(h)
}

fn step_order(t: usize, reverse: bool) -> impl Iterator<Item = (usize, Option<usize>)> {
    (0..t).map(move |s| {
        if reverse {
            let cur = t - 1 - s;
            (cur, (s > 0).then_some(cur + 1))
        } else {
            (s, (s > 0).then(|| s - 1))
        }
    })
}

fn run_direction(x: &[f64], t: usize, f: usize, h: usize, w: LstmWeights<'_>, reverse: bool) -> DirectionTrace {
    let g4 = 4 * h;
    let mut pre = vec![0.0; t * g4];
    for row in pre.chunks_mut(g4) {
        row.copy_from_slice(w.bias.data());
    }
    gemm(
        1.0,
        MatRef::new(x, 0, t, f),
        MatRef::new(w.w_ih.data(), 0, g4, f).t(),
        1.0,
        MatMut::new(&mut pre, 0, t, g4),
    );
    let mut gates = vec![0.0; t * g4];
    let mut cell = vec![0.0; t * h];
    let mut hidden = vec![0.0; t * h];
    for (cur, prev) in step_order(t, reverse) {
        let a = &mut pre[cur * g4..(cur + 1) * g4];
        if let Some(p) = prev {
            // a matrix-vector product; too small to be worth packing for gemm
            let hp = &hidden[p * h..(p + 1) * h];
            for (ag, wrow) in a.iter_mut().zip(w.w_hh.data().chunks_exact(h)) {
                *ag += wrow.iter().zip(hp).map(|(w, v)| w * v).sum::<f64>();
            }
        }
        let gt = &mut gates[cur * g4..(cur + 1) * g4];
        for j in 0..h {
            let i_g = sigmoid(a[j]);
            let f_g = sigmoid(a[h + j]);
            let c_g = a[2 * h + j].tanh();
            let o_g = sigmoid(a[3 * h + j]);
            gt[j] = i_g;
            gt[h + j] = f_g;
            gt[2 * h + j] = c_g;
            gt[3 * h + j] = o_g;
            let c_prev = prev.map_or(0.0, |p| cell[p * h + j]);
            let c = f_g * c_prev + i_g * c_g;
            cell[cur * h + j] = c;
            hidden[cur * h + j] = o_g * c.tanh();
        }
    }
    DirectionTrace { gates, cell, hidden }
}

/// Returns `(d_x [T, F], grads)` for one direction. `dh_out` is read with
/// row stride `dh_stride` starting at `dh_offset`.
#[allow(clippy::too_many_arguments)]
fn backprop_direction(
    x: &[f64],
    t: usize,
    f: usize,
    h: usize,
    w: LstmWeights<'_>,
    trace: &DirectionTrace,
    dh_out: &[f64],
    dh_offset: usize,
    dh_stride: usize,
    reverse: bool,
) -> (Vec<f64>, LstmGrads) {
    let g4 = 4 * h;
    let mut d_pre = vec![0.0; t * g4];
    let mut h_prev = vec![0.0; t * h];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let order: Vec<_> = step_order(t, reverse).collect();
    for &(cur, prev) in order.iter().rev() {
        let gt = &trace.gates[cur * g4..(cur + 1) * g4];
        let da = &mut d_pre[cur * g4..(cur + 1) * g4];
        for j in 0..h {
            let (i_g, f_g, c_g, o_g) = (gt[j], gt[h + j], gt[2 * h + j], gt[3 * h + j]);
            let c = trace.cell[cur * h + j];
            let tc = c.tanh();
            let c_prev = prev.map_or(0.0, |p| trace.cell[p * h + j]);
            let dh = dh_out[dh_offset + cur * dh_stride + j] + dh_next[j];
            let d_o = dh * tc;
            let dc = dc_next[j] + dh * o_g * (1.0 - tc * tc);
            da[j] = dc * c_g * i_g * (1.0 - i_g);
            da[h + j] = dc * c_prev * f_g * (1.0 - f_g);
            da[2 * h + j] = dc * i_g * (1.0 - c_g * c_g);
            da[3 * h + j] = d_o * o_g * (1.0 - o_g);
            dc_next[j] = dc * f_g;
        }
        if let Some(p) = prev {
            h_prev[cur * h..(cur + 1) * h].copy_from_slice(&trace.hidden[p * h..(p + 1) * h]);
            dh_next.fill(0.0);
            for (dg, wrow) in d_pre[cur * g4..(cur + 1) * g4].iter().zip(w.w_hh.data().chunks_exact(h)) {
                for (d, w) in dh_next.iter_mut().zip(wrow) {
                    *d += dg * w;
                }
            }
        }
    }
    let mut grads = LstmGrads::zeros_like(w);
    let da = MatRef::new(&d_pre, 0, t, g4);
    gemm(1.0, da.t(), MatRef::new(x, 0, t, f), 0.0, MatMut::new(grads.w_ih.data_mut(), 0, g4, f));
    gemm(1.0, da.t(), MatRef::new(&h_prev, 0, t, h), 0.0, MatMut::new(grads.w_hh.data_mut(), 0, g4, h));
    for row in d_pre.chunks(g4) {
        for (b, v) in grads.bias.data_mut().iter_mut().zip(row) {
            *b += v;
        }
    }
    let mut dx = vec![0.0; t * f];
    gemm(1.0, da, MatRef::new(w.w_ih.data(), 0, g4, f), 0.0, MatMut::new(&mut dx, 0, t, f));
    (dx, grads)
}

fn check_input(input: &Tensor) -> Result<(usize, usize, usize)> {
    if input.rank() != 3 {
        return Err(Error::invalid(format!("BiLSTM input must be [N, T, F], got {:?}", input.shape())));
    }
    Ok((input.dim(0), input.dim(1), input.dim(2)))
}

/// `[N, T, F] -> [N, T, 2H]`, forward-direction features first.
pub fn bilstm_forward(
    input: &Tensor,
    fwd: LstmWeights<'_>,
    bwd: LstmWeights<'_>,
) -> Result<(Tensor, BiLstmCache)> {
    let (n, t, f) = check_input(input)?;
    let h = hidden_size(fwd, f)?;
    if hidden_size(bwd, f)? != h {
        return Err(Error::invalid("BiLSTM directions disagree on hidden size"));
    }
    let traces = par::map_range(n, |b| {
        let x = &input.data()[b * t * f..(b + 1) * t * f];
        (run_direction(x, t, f, h, fwd, false), run_direction(x, t, f, h, bwd, true))
    });
    let mut out = Tensor::zeros(&[n, t, 2 * h]);
    for (b, (tf, tb)) in traces.iter().enumerate() {
        for s in 0..t {
            let row = &mut out.data_mut()[(b * t + s) * 2 * h..(b * t + s + 1) * 2 * h];
            row[..h].copy_from_slice(&tf.hidden[s * h..(s + 1) * h]);
            row[h..].copy_from_slice(&tb.hidden[s * h..(s + 1) * h]);
        }
    }
    Ok((out, BiLstmCache { traces }))
}

/// Returns `(d_input, grads_forward_dir, grads_backward_dir)`.
pub fn bilstm_backward(
    input: &Tensor,
    fwd: LstmWeights<'_>,
    bwd: LstmWeights<'_>,
    cache: &BiLstmCache,
    grad_out: &Tensor,
) -> Result<(Tensor, LstmGrads, LstmGrads)> {
    let (n, t, f) = check_input(input)?;
    let h = hidden_size(fwd, f)?;
    if grad_out.shape() != [n, t, 2 * h] || cache.traces.len() != n {
        return Err(Error::invalid("BiLSTM backward: shape mismatch"));
    }
    let parts = par::map_range(n, |b| {
        let x = &input.data()[b * t * f..(b + 1) * t * f];
        let base = b * t * 2 * h;
        let (tf, tb) = &cache.traces[b];
        let (dxf, gf) = backprop_direction(x, t, f, h, fwd, tf, grad_out.data(), base, 2 * h, false);
        let (dxb, gb) = backprop_direction(x, t, f, h, bwd, tb, grad_out.data(), base + h, 2 * h, true);
        (dxf, dxb, gf, gb)
    });
    let mut dx = Tensor::zeros(input.shape());
    let mut gf = LstmGrads::zeros_like(fwd);
    let mut gb = LstmGrads::zeros_like(bwd);
    for (b, (dxf, dxb, pf, pb)) in parts.into_iter().enumerate() {
        let dst = &mut dx.data_mut()[b * t * f..(b + 1) * t * f];
        for ((d, a), c) in dst.iter_mut().zip(&dxf).zip(&dxb) {
            *d = a + c;
        }
        gf.accumulate(&pf);
        gb.accumulate(&pb);
    }
    Ok((dx, gf, gb))
}
