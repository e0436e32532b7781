use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Cross-entropy result: mean loss over unmasked frames, the per-frame
/// probabilities and the gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub loss: f64,
    pub probs: Tensor,
    pub grad: Tensor,
}

fn frames_and_classes(t: &Tensor) -> Result<(usize, usize)> {
    let c = *t.shape().last().ok_or_else(|| Error::invalid("scalar logits"))?;
    Ok((t.len() / c, c))
}

/// Numerically stable log-softmax over the trailing axis.
pub fn log_softmax(logits: &Tensor) -> Tensor {
    let c = *logits.shape().last().expect("non-scalar logits");
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// Maps a gradient on log-probabilities back onto the logits.
pub fn log_softmax_backward(log_probs: &Tensor, grad: &Tensor) -> Tensor {
    let c = *log_probs.shape().last().expect("non-scalar");
    let mut out = grad.clone();
    for (row, lp) in out.data_mut().chunks_mut(c).zip(log_probs.data().chunks(c)) {
        let s: f64 = row.iter().sum();
        for (g, l) in row.iter_mut().zip(lp) {
            *g -= l.exp() * s;
        }
    }
    out
}

pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize], mask: &[bool]) -> Result<CrossEntropy> {
    let (frames, c) = frames_and_classes(logits)?;
    if labels.len() != frames || mask.len() != frames {
        return Err(Error::invalid(format!(
            "cross entropy: {frames} frames but {} labels / {} mask entries",
            labels.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|m| **m).count();
    if count == 0 {
        return Err(Error::invalid("cross entropy: every frame is masked"));
    }
    if let Some(bad) = labels.iter().zip(mask).find(|(l, m)| **m && **l >= c) {
        return Err(Error::invalid(format!("label {} out of range for {c} classes", bad.0)));
    }
    let lp = log_softmax(logits);
    let mut probs = lp.clone();
    probs.data_mut().iter_mut().for_each(|v| *v = v.exp());
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    let scale = 1.0 / count as f64;
    for i in 0..frames {
        if !mask[i] {
            continue;
        }
        loss -= lp.data()[i * c + labels[i]];
        let g = &mut grad.data_mut()[i * c..(i + 1) * c];
        g.copy_from_slice(&probs.data()[i * c..(i + 1) * c]);
        g[labels[i]] -= 1.0;
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(CrossEntropy {
        loss: loss * scale,
        probs,
        grad,
    })
}

/// Truncated MSE between log-probabilities of consecutive frames.
///
/// `log_probs` is `[N, T, C]`; a pair `(t-1, t)` counts only when both
/// frames are unmasked. The loss is the mean over classes and counted
/// pairs of `min(tau, |lp[t] - lp[t-1]|)^2`. Frame `t-1` is treated as a
/// constant, so the returned gradient is nonzero only on the later frame
/// of each pair.
pub fn truncated_mse_smoothing(log_probs: &Tensor, tau: f64, mask: &[bool]) -> Result<(f64, Tensor)> {
    if tau <= 0.0 {
        return Err(Error::invalid(format!("smoothing tau must be > 0, got {tau}")));
    }
    if log_probs.rank() != 3 {
        return Err(Error::invalid("smoothing expects [N, T, C] log-probabilities"));
    }
    let (n, t, c) = (log_probs.dim(0), log_probs.dim(1), log_probs.dim(2));
    if t < 2 {
        return Err(Error::invalid("smoothing needs at least 2 frames"));
    }
    if mask.len() != n * t {
        return Err(Error::invalid("smoothing: mask length mismatch"));
    }
    let lp = log_probs.data();
    let mut grad = Tensor::zeros(log_probs.shape());
    let pairs = (0..n)
        .flat_map(|b| (1..t).map(move |s| b * t + s))
        .filter(|&i| mask[i] && mask[i - 1])
        .count();
    if pairs == 0 {
        return Ok((0.0, grad));
    }
    let denom = (pairs * c) as f64;
    let mut total = 0.0;
    for b in 0..n {
        for s in 1..t {
            let i = b * t + s;
            if !(mask[i] && mask[i - 1]) {
                continue;
            }
            for k in 0..c {
                let d = lp[i * c + k] - lp[(i - 1) * c + k];
                if d.abs() < tau {
                    total += d * d;
                    grad.data_mut()[i * c + k] = 2.0 * d / denom;
                } else {
                    total += tau * tau;
                }
            }
        }
    }
    Ok((total / denom, grad))
}
