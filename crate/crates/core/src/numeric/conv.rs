//! Non-causal dilated convolution along the time axis.
//!
//! The general form works on `[N, C, T, V]` and convolves every joint `v`
//! independently with the same `[C_out, C_in, K]` kernel. Zero padding of
//! `dilation * (K - 1) / 2` on both ends keeps `T` unchanged.

use super::gemm::{gemm, MatMut, MatRef};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::par;

struct Geometry {
    n: usize,
    c_in: usize,
    c_out: usize,
    t: usize,
    v: usize,
    k: usize,
    dilation: usize,
}

impl Geometry {
    fn of(x: &Tensor, kernel: &Tensor, dilation: usize) -> Result<Self> {
        if x.rank() != 4 {
            return Err(Error::invalid(format!(
                "temporal conv input must be [N, C, T, V], got {:?}",
                x.shape()
            )));
        }
        if kernel.rank() != 3 {
            return Err(Error::invalid("temporal conv kernel must be [C_out, C_in, K]"));
        }
        let k = kernel.dim(2);
        if k.is_multiple_of(2) {
            return Err(Error::invalid(format!("temporal kernel size must be odd, got {k}")));
        }
        if dilation == 0 {
            return Err(Error::invalid("dilation must be >= 1"));
        }
        if kernel.dim(1) != x.dim(1) {
            return Err(Error::invalid(format!(
                "kernel expects {} input channels, input has {}",
                kernel.dim(1),
                x.dim(1)
            )));
        }
        Ok(Geometry {
            n: x.dim(0),
            c_in: x.dim(1),
            c_out: kernel.dim(0),
            t: x.dim(2),
            v: x.dim(3),
            k,
            dilation,
        })
    }

    /// For tap `k`: the output frame range whose shifted input lies inside
    /// the sequence, and the shift itself.
    fn tap(&self, k: usize) -> Option<(usize, usize, isize)> {
        let pad = (self.dilation * (self.k - 1) / 2) as isize;
        let shift = (k * self.dilation) as isize - pad;
        let t = self.t as isize;
        let lo = 0.max(-shift);
        let hi = t.min(t - shift);
        (hi > lo).then_some((lo as usize, hi as usize, shift))
    }
}

pub fn temporal_conv_forward(x: &Tensor, kernel: &Tensor, dilation: usize) -> Result<Tensor> {
    let g = Geometry::of(x, kernel, dilation)?;
    let plane = g.t * g.v;
    let mut out = Tensor::zeros(&[g.n, g.c_out, g.t, g.v]);
    par::for_each_chunk_mut(out.data_mut(), g.c_out * plane, |n, y| {
        let x_off = n * g.c_in * plane;
        for k in 0..g.k {
            let Some((lo, hi, shift)) = g.tap(k) else { continue };
            let cols = (hi - lo) * g.v;
            let src = (lo as isize + shift) as usize * g.v;
            gemm(
                1.0,
                MatRef::strided(kernel.data(), k, g.c_out, g.c_in, g.c_in * g.k, g.k),
                MatRef::strided(x.data(), x_off + src, g.c_in, cols, plane, 1),
                1.0,
                MatMut::strided(y, lo * g.v, g.c_out, cols, plane, 1),
            );
        }
    });
    Ok(out)
}

/// Returns `(d_input, d_kernel)`.
pub fn temporal_conv_backward(
    x: &Tensor,
    kernel: &Tensor,
    dilation: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let g = Geometry::of(x, kernel, dilation)?;
    if grad_out.shape() != [g.n, g.c_out, g.t, g.v] {
        return Err(Error::invalid("temporal conv: grad_out shape mismatch"));
    }
    let plane = g.t * g.v;
    let mut dx = Tensor::zeros(x.shape());
    par::for_each_chunk_mut(dx.data_mut(), g.c_in * plane, |n, dxn| {
        let y_off = n * g.c_out * plane;
        for k in 0..g.k {
            let Some((lo, hi, shift)) = g.tap(k) else { continue };
            let cols = (hi - lo) * g.v;
            let dst = (lo as isize + shift) as usize * g.v;
            gemm(
                1.0,
                MatRef::strided(kernel.data(), k, g.c_out, g.c_in, g.c_in * g.k, g.k).t(),
                MatRef::strided(grad_out.data(), y_off + lo * g.v, g.c_out, cols, plane, 1),
                1.0,
                MatMut::strided(dxn, dst, g.c_in, cols, plane, 1),
            );
        }
    });
    let partial = par::map_range(g.n, |n| {
        let mut dk = vec![0.0; kernel.len()];
        let x_off = n * g.c_in * plane;
        let y_off = n * g.c_out * plane;
        for k in 0..g.k {
            let Some((lo, hi, shift)) = g.tap(k) else { continue };
            let cols = (hi - lo) * g.v;
            let src = (lo as isize + shift) as usize * g.v;
            gemm(
                1.0,
                MatRef::strided(grad_out.data(), y_off + lo * g.v, g.c_out, cols, plane, 1),
                MatRef::strided(x.data(), x_off + src, g.c_in, cols, plane, 1).t(),
                1.0,
                MatMut::strided(&mut dk, k, g.c_out, g.c_in, g.c_in * g.k, g.k),
            );
        }
        dk
    });
    let mut dkernel = Tensor::zeros(kernel.shape());
    for p in partial {
        for (a, b) in dkernel.data_mut().iter_mut().zip(p) {
            *a += b;
        }
    }
    Ok((dx, dkernel))
}

/// `[N, C_in, T]` convolution with a `[C_out, C_in, K]` kernel, stride 1.
pub fn conv1d_dilated(input: &Tensor, kernel: &Tensor, dilation: usize) -> Result<Tensor> {
    let x = as_4d(input)?;
    let y = temporal_conv_forward(&x, kernel, dilation)?;
    let (n, c, t) = (y.dim(0), y.dim(1), y.dim(2));
    y.reshape(&[n, c, t])
}

pub fn conv1d_dilated_backward(
    input: &Tensor,
    kernel: &Tensor,
    dilation: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let x = as_4d(input)?;
    let gy = as_4d(grad_out)?;
    let (dx, dk) = temporal_conv_backward(&x, kernel, dilation, &gy)?;
    Ok((dx.reshape(input.shape())?, dk))
}

fn as_4d(t: &Tensor) -> Result<Tensor> {
    if t.rank() != 3 {
        return Err(Error::invalid(format!("expected [N, C, T], got {:?}", t.shape())));
    }
    let s = t.shape();
    t.clone().reshape(&[s[0], s[1], s[2], 1])
}
