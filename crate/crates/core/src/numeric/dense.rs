use super::gemm::{gemm, MatMut, MatRef};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Gradients of a dense layer.
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn check(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    if weight.rank() != 2 {
        return Err(Error::invalid("dense weight must be [F_in, F_out]"));
    }
    let (fin, fout) = (weight.dim(0), weight.dim(1));
    let last = *input.shape().last().ok_or_else(|| Error::invalid("dense input is a scalar"))?;
    if last != fin {
        return Err(Error::invalid(format!(
            "dense: input trailing dim {last} does not match F_in {fin}"
        )));
    }
    Ok((input.len() / fin, fin, fout))
}

/// Affine map over the trailing dimension: `input @ weight + bias`.
pub fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (rows, fin, fout) = check(input, weight)?;
    if bias.len() != fout {
        return Err(Error::invalid(format!("dense: bias length {} != F_out {fout}", bias.len())));
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = fout;
    let mut out = Tensor::zeros(&shape);
    for row in out.data_mut().chunks_mut(fout) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        1.0,
        MatRef::new(input.data(), 0, rows, fin),
        MatRef::new(weight.data(), 0, fin, fout),
        1.0,
        MatMut::new(out.data_mut(), 0, rows, fout),
    );
    Ok(out)
}

pub fn dense_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
    let (rows, fin, fout) = check(input, weight)?;
    if grad_out.len() != rows * fout {
        return Err(Error::invalid("dense: grad_out shape mismatch"));
    }
    let mut d_in = Tensor::zeros(input.shape());
    let mut d_w = Tensor::zeros(weight.shape());
    let mut d_b = Tensor::zeros(&[fout]);
    let g = MatRef::new(grad_out.data(), 0, rows, fout);
    gemm(
        1.0,
        g,
        MatRef::new(weight.data(), 0, fin, fout).t(),
        0.0,
        MatMut::new(d_in.data_mut(), 0, rows, fin),
    );
    gemm(
        1.0,
        MatRef::new(input.data(), 0, rows, fin).t(),
        g,
        0.0,
        MatMut::new(d_w.data_mut(), 0, fin, fout),
    );
    for row in grad_out.data().chunks(fout) {
        for (b, x) in d_b.data_mut().iter_mut().zip(row) {
            *b += x;
        }
    }
    Ok(DenseGrads {
        input: d_in,
        weight: d_w,
        bias: d_b,
    })
}
