use alloc::vec::Vec;

use super::Tensor;

/// Central finite differences of a scalar function, one element at a time.
pub fn finite_difference_grad<F>(mut f: F, x: &Tensor, eps: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    assert!(eps > 0.0, "eps must be positive");
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((plus - minus) / (2.0 * eps));
    }
    Tensor::new(x.shape().to_vec(), grad).expect("same shape as input")
}

/// `max|a - b| / max(max|a|, max|b|)`, or the absolute difference when
/// both vectors are (numerically) zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(0.0, f64::max);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::from_vec(vec![0.3, -2.0, 5.0]).unwrap();
        let g = finite_difference_grad(|t| t.data().iter().sum(), &x, 1e-5);
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn sum_of_squares() {
        let x = Tensor::from_vec(vec![1.0, 2.0]).unwrap();
        let g = finite_difference_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5);
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }
}
