use super::tensor::Tensor;
use super::Mode;
use crate::error::{Error, Result};

/// Saved state for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    shape: Vec<usize>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
}

/// Running statistics carried between batches.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], 1.0),
        }
    }
}

fn layout(x: &Tensor, channels: usize) -> Result<(usize, usize)> {
    if x.rank() < 2 || x.dim(1) != channels {
        return Err(Error::invalid(format!(
            "batch norm over {channels} channels got input {:?}",
            x.shape()
        )));
    }
    Ok((x.dim(0), x.len() / (x.dim(0) * channels)))
}

/// Per-channel normalization of `x` laid out as `[N, C, ...]`.
///
/// Train mode normalizes with the batch statistics over every axis except
/// `C` and folds them into `stats` with `momentum` (unbiased variance for the
/// running estimate). Infer mode reads `stats` only.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_forward(
    x: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    stats: &mut RunningStats,
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor, BnCache)> {
    if eps <= 0.0 {
        return Err(Error::invalid(format!("batch norm eps must be > 0, got {eps}")));
    }
    let c = scale.len();
    if shift.len() != c || stats.mean.len() != c || stats.var.len() != c {
        return Err(Error::invalid("batch norm parameter lengths differ"));
    }
    let (n, l) = layout(x, c)?;
    let count = n * l;
    let xd = x.data();
    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::invalid("batch norm in train mode needs at least 2 values per channel"));
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for b in 0..n {
                for ch in 0..c {
                    let s = &xd[(b * c + ch) * l..(b * c + ch + 1) * l];
                    mean[ch] += s.iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for b in 0..n {
                for ch in 0..c {
                    let s = &xd[(b * c + ch) * l..(b * c + ch + 1) * l];
                    let m = mean[ch];
                    var[ch] += s.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
            let unbias = count as f64 / (count - 1) as f64;
            for ch in 0..c {
                let rm = &mut stats.mean.data_mut()[ch];
                *rm = (1.0 - momentum) * *rm + momentum * mean[ch];
                let rv = &mut stats.var.data_mut()[ch];
                *rv = (1.0 - momentum) * *rv + momentum * var[ch] * unbias;
            }
            (mean, var)
        }
        Mode::Infer => (stats.mean.data().to_vec(), stats.var.data().to_vec()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = Tensor::zeros(x.shape());
    let yd = y.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let (m, is, g, bta) = (mean[ch], inv_std[ch], scale.data()[ch], shift.data()[ch]);
            let r = (b * c + ch) * l..(b * c + ch + 1) * l;
            for i in r {
                let h = (xd[i] - m) * is;
                xhat[i] = h;
                yd[i] = g * h + bta;
            }
        }
    }
    Ok((
        y,
        BnCache {
            shape: x.shape().to_vec(),
            xhat,
            inv_std,
            mode,
        },
    ))
}

/// Returns `(d_input, d_scale, d_shift)`.
pub fn batch_norm_backward(
    cache: &BnCache,
    scale: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    if grad_out.shape() != cache.shape.as_slice() {
        return Err(Error::invalid("batch norm: grad_out shape mismatch"));
    }
    let c = scale.len();
    let n = cache.shape[0];
    let l = grad_out.len() / (n * c);
    let count = (n * l) as f64;
    let dy = grad_out.data();
    let mut dscale = vec![0.0; c];
    let mut dshift = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            for i in (b * c + ch) * l..(b * c + ch + 1) * l {
                dscale[ch] += dy[i] * cache.xhat[i];
                dshift[ch] += dy[i];
            }
        }
    }
    let mut dx = Tensor::zeros(&cache.shape);
    let dxd = dx.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let g = scale.data()[ch];
            let is = cache.inv_std[ch];
            let r = (b * c + ch) * l..(b * c + ch + 1) * l;
            match cache.mode {
                Mode::Train => {
                    // dxhat = g * dy; sums of dxhat and dxhat*xhat are g*dshift and g*dscale
                    let (s1, s2) = (dshift[ch], dscale[ch]);
                    for i in r {
                        dxd[i] = g * is / count * (count * dy[i] - s1 - cache.xhat[i] * s2);
                    }
                }
                Mode::Infer => {
                    for i in r {
                        dxd[i] = g * is * dy[i];
                    }
                }
            }
        }
    }
    Ok((
        dx,
        Tensor::from_vec(&[c], dscale)?,
        Tensor::from_vec(&[c], dshift)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::{finite_difference_check, random_tensor};

    #[test]
    fn constant_channel_maps_to_shift() {
        let x = Tensor::full(&[2, 3, 4, 5], 7.5);
        let scale = Tensor::full(&[3], 2.0);
        let shift = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let mut st = RunningStats::new(3);
        let (y, _) = batch_norm_forward(&x, &scale, &shift, &mut st, Mode::Train, 0.1, 1e-5).unwrap();
        for b in 0..2 {
            for ch in 0..3 {
                for i in 0..20 {
                    assert!((y.data()[(b * 3 + ch) * 20 + i] - shift.data()[ch]).abs() < 1e-12);
                }
            }
        }
        assert!((st.mean.data()[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn train_mode_standardizes() {
        let x = random_tensor(&[3, 2, 6, 4], 9);
        let mut st = RunningStats::new(2);
        let (y, _) = batch_norm_forward(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), &mut st, Mode::Train, 0.1, 1e-5).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|b| y.data()[(b * 2 + ch) * 24..(b * 2 + ch + 1) * 24].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn infer_mode_uses_running_stats() {
        let x = Tensor::full(&[1, 1, 3], 3.0);
        let mut st = RunningStats { mean: Tensor::full(&[1], 1.0), var: Tensor::full(&[1], 4.0) };
        let (y, _) = batch_norm_forward(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), &mut st, Mode::Infer, 0.1, 1e-12).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-9);
        assert_eq!(st.mean.data(), &[1.0]);
    }

    #[test]
    fn non_positive_eps_rejected() {
        let x = Tensor::zeros(&[2, 1, 2]);
        let mut st = RunningStats::new(1);
        let r = batch_norm_forward(&x, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), &mut st, Mode::Train, 0.1, 0.0);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = random_tensor(&[2, 3, 4, 2], 11);
        let scale = random_tensor(&[3], 12);
        let shift = random_tensor(&[3], 13);
        let proj = random_tensor(&[2, 3, 4, 2], 14);
        let loss = |x: &Tensor, g: &Tensor, b: &Tensor| {
            let mut st = RunningStats::new(3);
            let (y, _) = batch_norm_forward(x, g, b, &mut st, Mode::Train, 0.1, 1e-5).unwrap();
            y.data().iter().zip(proj.data()).map(|(a, p)| a * p).sum::<f64>()
        };
        let mut st = RunningStats::new(3);
        let (_, cache) = batch_norm_forward(&x, &scale, &shift, &mut st, Mode::Train, 0.1, 1e-5).unwrap();
        let (dx, dg, db) = batch_norm_backward(&cache, &scale, &proj).unwrap();
        let ex = finite_difference_check(|v| loss(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &scale, &shift), x.data(), dx.data(), 1e-5);
        let eg = finite_difference_check(|v| loss(&x, &Tensor::from_vec(&[3], v.to_vec()).unwrap(), &shift), scale.data(), dg.data(), 1e-5);
        let eb = finite_difference_check(|v| loss(&x, &scale, &Tensor::from_vec(&[3], v.to_vec()).unwrap()), shift.data(), db.data(), 1e-5);
        assert!(ex < 1e-5 && eg < 1e-5 && eb < 1e-5, "{ex} {eg} {eb}");
    }
}
