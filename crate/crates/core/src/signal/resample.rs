use alloc::vec;
use alloc::vec::Vec;

use super::{center_offset, conv_same_into, design, kaiser_window, Signal, SignalError};
#[allow(unused_imports)]
use num_traits::Float;

/// Passband edge of the anti-aliasing filter, as a fraction of the target
/// Nyquist frequency.
const PASSBAND_FRACTION: f64 = 0.9;
const KAISER_BETA: f64 = 8.0;

/// Windowed-sinc anti-aliasing (when decimating) followed by linear
/// interpolation onto the target grid. Signals already at `target_hz` are
/// returned unchanged.
pub fn resample(x: &Signal, target_hz: f64) -> Result<Signal, SignalError> {
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(SignalError::InvalidTargetRate(target_hz));
    }
    if target_hz == x.sample_rate_hz() {
        return Ok(x.clone());
    }
    if x.is_empty() {
        return Signal::new(Vec::new(), target_hz);
    }
    let ratio = target_hz / x.sample_rate_hz();
    let source = if ratio < 1.0 {
        anti_alias(x.samples(), ratio)?
    } else {
        x.samples().to_vec()
    };

    let out_len = (((x.len() - 1) as f64) * ratio).floor() as usize + 1;
    let last = source.len() - 1;
    let out = (0..out_len)
        .map(|m| {
            let t = m as f64 / ratio;
            let i = (t.floor() as usize).min(last);
            let frac = t - i as f64;
            if i == last || frac == 0.0 {
                source[i]
            } else {
                source[i] * (1.0 - frac) + source[i + 1] * frac
            }
        })
        .collect();
    Signal::new(out, target_hz)
}

fn anti_alias(x: &[f64], ratio: f64) -> Result<Vec<f64>, SignalError> {
    let cutoff = 0.5 * ratio * PASSBAND_FRACTION;
    let half = (16.0 / ratio).round() as usize;
    let len = 2 * half + 1;
    let window = kaiser_window(len, KAISER_BETA)?;
    let taps = design::lowpass(cutoff, &window)?;

    // Edge-extend so a constant input stays exactly constant.
    let mut padded = Vec::with_capacity(x.len() + 2 * half);
    padded.extend(core::iter::repeat_n(x[0], half));
    padded.extend_from_slice(x);
    padded.extend(core::iter::repeat_n(x[x.len() - 1], half));
    let mut filtered = vec![0.0; padded.len()];
    conv_same_into(&padded, &taps, center_offset(len), &mut filtered);
    Ok(filtered[half..half + x.len()].to_vec())
}
