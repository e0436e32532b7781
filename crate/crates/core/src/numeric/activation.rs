use super::rng::RngStream;
use super::tensor::Tensor;
use super::Mode;
use crate::error::{Error, Result};
use rand::Rng;

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Gradient of ReLU given its forward *output*; zero where the output is 0.
pub fn relu_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (d, y) in g.data_mut().iter_mut().zip(output.data()) {
        if *y <= 0.0 {
            *d = 0.0;
        }
    }
    g
}

pub fn relu_in_place(x: &mut Tensor) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Inverted dropout. Returns the output and, in train mode with a nonzero
/// rate, the scaled keep-mask needed by [`dropout_backward`].
pub fn dropout(x: &Tensor, rate: f64, rng: &RngStream, mode: Mode) -> Result<(Tensor, Option<Vec<f64>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut g = rng.generator();
    let mask: Vec<f64> = (0..x.len())
        .map(|_| if g.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mut y = x.clone();
    for (v, m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((y, Some(mask)))
}

pub fn dropout_backward(mask: Option<&[f64]>, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    if let Some(mask) = mask {
        for (d, m) in g.data_mut().iter_mut().zip(mask) {
            *d *= m;
        }
    }
    g
}
