use super::tensor::Tensor;
use crate::numeric::rng::RngStream;
use rand::Rng;

/// Compares `analytic` against central differences of the scalar function
/// `f` around `x`, one coordinate at a time.
///
/// Returns the largest `|analytic - numeric| / max(|numeric|, 1e-8)`.
pub fn finite_difference_check<F>(f: F, x: &[f64], analytic: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    finite_difference_check_with_floor(f, x, analytic, h, DEFAULT_FLOOR)
}

pub const DEFAULT_FLOOR: f64 = 1e-8;

/// [`finite_difference_check`] with an explicit absolute floor on the
/// denominator. Deep compositions with an O(1) objective cannot resolve
/// gradient coordinates much below `1e-16 / h`, so they need a larger floor.
pub fn finite_difference_check_with_floor<F>(f: F, x: &[f64], analytic: &[f64], h: f64, floor: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "gradient length differs from input");
    assert!((1e-7..=1e-4).contains(&h), "step h={h} outside [1e-7, 1e-4]");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = numeric.abs().max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// Uniform(-1, 1) tensor from a fixed seed. Test and bench helper.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut g = RngStream::new(seed).generator();
    let n = shape.iter().product();
    let data = (0..n).map(|_| g.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).expect("valid shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_wrong_gradient() {
        let x = [0.3, -1.2, 2.0];
        let f = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        let good: Vec<f64> = x.iter().map(|a| 2.0 * a).collect();
        let bad: Vec<f64> = good.iter().map(|g| 2.0 * g).collect();
        assert!(finite_difference_check(f, &x, &good, 1e-6) < 1e-8);
        let e = finite_difference_check(f, &x, &bad, 1e-6);
        assert!((e - 1.0).abs() < 1e-6, "{e}");
    }
}
