//! Windowed-sinc FIR designs. Frequencies are in cycles/sample, `(0, 0.5)`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use super::SignalError;
#[allow(unused_imports)]
use num_traits::Float;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn check_band(low: f64, high: f64) -> Result<(), SignalError> {
    if !(low >= 0.0 && low < high && high <= 0.5) {
        return Err(SignalError::InvalidBand { low, high });
    }
    Ok(())
}

fn check_window(window: &[f64]) -> Result<(), SignalError> {
    if window.is_empty() {
        return Err(SignalError::InvalidWindowLength);
    }
    Ok(())
}

fn centered_index(n: usize, len: usize) -> f64 {
    n as f64 - (len as f64 - 1.0) / 2.0
}

/// Symmetric lowpass with unit DC gain.
pub fn lowpass(cutoff: f64, window: &[f64]) -> Result<Vec<f64>, SignalError> {
    check_band(0.0, cutoff)?;
    check_window(window)?;
    let mut taps: Vec<f64> = window
        .iter()
        .enumerate()
        .map(|(n, w)| w * 2.0 * cutoff * sinc(2.0 * cutoff * centered_index(n, window.len())))
        .collect();
    let dc: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= dc;
    }
    Ok(taps)
}

/// Symmetric bandpass passing `[low, high]`.
pub fn bandpass(low: f64, high: f64, window: &[f64]) -> Result<Vec<f64>, SignalError> {
    check_band(low, high)?;
    check_window(window)?;
    Ok(window
        .iter()
        .enumerate()
        .map(|(n, w)| {
            let m = centered_index(n, window.len());
            w * (2.0 * high * sinc(2.0 * high * m) - 2.0 * low * sinc(2.0 * low * m))
        })
        .collect())
}

/// Anti-symmetric bandpass: the Hilbert transform of [`bandpass`], with the
/// same magnitude passband and a `pi/2` phase offset.
pub fn hilbert_bandpass(low: f64, high: f64, window: &[f64]) -> Result<Vec<f64>, SignalError> {
    check_band(low, high)?;
    check_window(window)?;
    Ok(window
        .iter()
        .enumerate()
        .map(|(n, w)| {
            let m = centered_index(n, window.len());
            if m == 0.0 {
                0.0
            } else {
                w * ((2.0 * PI * low * m).cos() - (2.0 * PI * high * m).cos()) / (PI * m)
            }
        })
        .collect())
}
