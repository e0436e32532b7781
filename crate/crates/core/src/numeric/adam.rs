use super::tensor::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A trainable tensor together with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Param {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            step_count: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        AdamSettings {
            lr: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. The gradient is left in place.
pub fn adam_step(param: &mut Param, s: &AdamSettings) -> Result<()> {
    if s.lr <= 0.0 {
        return Err(Error::invalid(format!("learning rate must be > 0, got {}", s.lr)));
    }
    param.step_count += 1;
    let t = param.step_count as i32;
    let bc1 = 1.0 - s.beta1.powi(t);
    let bc2 = 1.0 - s.beta2.powi(t);
    let g = param.grad.data();
    let m = param.adam_m.data_mut();
    for (mi, gi) in m.iter_mut().zip(g) {
        *mi = s.beta1 * *mi + (1.0 - s.beta1) * gi;
    }
    let v = param.adam_v.data_mut();
    for (vi, gi) in v.iter_mut().zip(g) {
        *vi = s.beta2 * *vi + (1.0 - s.beta2) * gi * gi;
    }
    let (m, v) = (param.adam_m.data(), param.adam_v.data());
    for ((x, mi), vi) in param.value.data_mut().iter_mut().zip(m).zip(v) {
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        *x -= s.lr * m_hat / (v_hat.sqrt() + s.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64) -> Param {
        Param::new("x", Tensor::from_vec(&[1], vec![x]).unwrap())
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        for g in [3.0, -0.02] {
            let mut p = scalar(1.0);
            p.grad.data_mut()[0] = g;
            let s = AdamSettings { lr: 0.01, ..Default::default() };
            adam_step(&mut p, &s).unwrap();
            let step = p.value.data()[0] - 1.0;
            assert!((step + 0.01 * g.signum()).abs() < 1e-8, "{step}");
            assert_eq!(p.grad.data()[0], g);
        }
    }

    #[test]
    fn zero_grad_leaves_value_and_counts_step() {
        let mut p = scalar(2.0);
        adam_step(&mut p, &AdamSettings::default()).unwrap();
        assert_eq!(p.value.data()[0], 2.0);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn descends_a_parabola() {
        let mut p = scalar(1.0);
        let s = AdamSettings { lr: 0.1, ..Default::default() };
        for _ in 0..100 {
            p.grad.data_mut()[0] = 2.0 * p.value.data()[0];
            adam_step(&mut p, &s).unwrap();
        }
        assert!(p.value.data()[0].abs() < 0.1, "{}", p.value.data()[0]);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let mut p = scalar(1.0);
        assert!(adam_step(&mut p, &AdamSettings { lr: 0.0, ..Default::default() }).is_err());
    }
}
