//! Symmetric window functions.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::SignalError;
#[allow(unused_imports)]
use num_traits::Float;

fn cosine_sum(n: usize, coeffs: &[f64]) -> Result<Vec<f64>, SignalError> {
    if n == 0 {
        return Err(SignalError::InvalidWindowLength);
    }
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let m = (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    sign * c * (2.0 * PI * k as f64 * i as f64 / m).cos()
                })
                .sum()
        })
        .collect())
}

pub fn blackman_window(n: usize) -> Result<Vec<f64>, SignalError> {
    cosine_sum(n, &[0.42, 0.5, 0.08])
}

pub fn hann_window(n: usize) -> Result<Vec<f64>, SignalError> {
    cosine_sum(n, &[0.5, 0.5])
}

pub fn hamming_window(n: usize) -> Result<Vec<f64>, SignalError> {
    cosine_sum(n, &[0.54, 0.46])
}

/// Modified Bessel function of the first kind, order zero (power series).
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

pub fn kaiser_window(n: usize, beta: f64) -> Result<Vec<f64>, SignalError> {
    if n == 0 {
        return Err(SignalError::InvalidWindowLength);
    }
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let denom = bessel_i0(beta);
    let m = (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            let r = 2.0 * i as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blackman_three_points() {
        let w = blackman_window(3).unwrap();
        let endpoint = 0.42 - 0.5 + 0.08;
        assert!((w[0] - endpoint).abs() < 1e-12);
        assert!((w[2] - endpoint).abs() < 1e-12);
        assert!(w[0].abs() < 1e-12);
        assert!((w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blackman_is_symmetric() {
        let w = blackman_window(64).unwrap();
        for i in 0..64 {
            assert!((w[i] - w[63 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn kaiser_beta_zero_is_rectangular() {
        assert!(kaiser_window(17, 0.0).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn kaiser_is_symmetric_and_peaks_at_one() {
        let w = kaiser_window(33, 5.0).unwrap();
        assert!((w[16] - 1.0).abs() < 1e-15);
        for i in 0..33 {
            assert!((w[i] - w[32 - i]).abs() < 1e-14);
        }
        // I0(5) = 27.239871823604442
        assert!((bessel_i0(5.0) - 27.239_871_823_604_442).abs() < 1e-10);
        assert!((w[0] - 1.0 / 27.239_871_823_604_442).abs() < 1e-12);
    }

    #[test]
    fn zero_length_rejected() {
        assert_eq!(blackman_window(0), Err(SignalError::InvalidWindowLength));
        assert_eq!(kaiser_window(0, 1.0), Err(SignalError::InvalidWindowLength));
        assert_eq!(blackman_window(1).unwrap(), vec![1.0]);
    }
}
