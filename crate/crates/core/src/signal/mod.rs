//! Deterministic DSP primitives: FIR filtering, frequency/phase/group-delay
//! analysis, windows, spectral estimation and resampling.
//!
//! Everything here works on `f64` and is a pure function of its inputs.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

pub mod design;
mod resample;
mod spectrum;
pub mod window;

pub use resample::resample;
pub use spectrum::{
    dft_real, freq_response, wrap_to_half_pi, FrequencyResponse, LinearPhaseFit, Spectrum,
    MAGNITUDE_FLOOR,
};
pub use spectrum::{welch_frequencies, welch_psd};
pub use window::{blackman_window, hamming_window, hann_window, kaiser_window};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("signal is empty")]
    EmptySignal,
    #[error("sample rate must be positive and finite, got {0}")]
    InvalidSampleRate(f64),
    #[error("signal contains a non-finite sample at index {0}")]
    NonFiniteSample(usize),
    #[error("filter must have at least one tap")]
    EmptyKernel,
    #[error("filter tap {0} is not finite")]
    NonFiniteTap(usize),
    #[error("n_fft = {n_fft} is too small for a {taps}-tap filter (need at least {min})")]
    FftTooSmall {
        n_fft: usize,
        taps: usize,
        min: usize,
    },
    #[error("signal of {len} samples is shorter than one {window}-sample window")]
    SignalTooShort { len: usize, window: usize },
    #[error("window length must be at least 1")]
    InvalidWindowLength,
    #[error("target sample rate must be positive and finite, got {0}")]
    InvalidTargetRate(f64),
    #[error("invalid band [{low}, {high}] cycles/sample")]
    InvalidBand { low: f64, high: f64 },
}

/// A sampled 1D waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate_hz: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self, SignalError> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(SignalError::InvalidSampleRate(sample_rate_hz));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::NonFiniteSample(i));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// Taps of an order-`K` FIR filter (`K + 1` coefficients).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Vec<f64>", into = "Vec<f64>"))]
pub struct FirCoefficients(Vec<f64>);

impl FirCoefficients {
    pub fn new(taps: Vec<f64>) -> Result<Self, SignalError> {
        if taps.is_empty() {
            return Err(SignalError::EmptyKernel);
        }
        if let Some(i) = taps.iter().position(|t| !t.is_finite()) {
            return Err(SignalError::NonFiniteTap(i));
        }
        Ok(Self(taps))
    }

    /// The single-tap identity filter.
    pub fn delta() -> Self {
        Self(vec![1.0])
    }

    /// A centered unit impulse of the given length.
    pub fn centered_delta(len: usize) -> Result<Self, SignalError> {
        if len == 0 {
            return Err(SignalError::EmptyKernel);
        }
        let mut taps = vec![0.0; len];
        taps[(len - 1) / 2] = 1.0;
        Ok(Self(taps))
    }

    pub fn taps(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Filter order `K = len - 1`.
    pub fn order(&self) -> usize {
        self.0.len() - 1
    }

    pub fn reversed(&self) -> Self {
        let mut taps = self.0.clone();
        taps.reverse();
        Self(taps)
    }

    pub fn into_taps(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for FirCoefficients {
    type Error = SignalError;

    fn try_from(taps: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(taps)
    }
}

impl From<FirCoefficients> for Vec<f64> {
    fn from(h: FirCoefficients) -> Self {
        h.0
    }
}

/// Offset used by same-length centered convolution: `floor((K - 1) / 2)`.
pub fn center_offset(kernel_len: usize) -> usize {
    kernel_len.saturating_sub(1) / 2
}

/// Accumulates `out(n) += sum_i h(i) * x(n + offset - i)` with zero padding.
///
/// `out` and `x` must have the same length. This is the slice-level kernel
/// behind [`centered_conv`], the autodiff `conv1d` and the front-end.
pub fn conv_same_into(x: &[f64], h: &[f64], offset: usize, out: &mut [f64]) {
    let n = x.len() as isize;
    debug_assert_eq!(out.len(), x.len());
    for (i, &tap) in h.iter().enumerate() {
        if tap == 0.0 {
            continue;
        }
        let shift = offset as isize - i as isize;
        let lo = (-shift).clamp(0, n) as usize;
        let hi = (n - shift).clamp(0, n) as usize;
        if lo >= hi {
            continue;
        }
        let src = &x[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
        for (o, &s) in out[lo..hi].iter_mut().zip(src) {
            *o += tap * s;
        }
    }
}

/// Accumulates `out(n) += sum_i h(i) * x(n + i - offset)` with zero padding,
/// i.e. a same-length convolution with the time-reversed kernel.
pub fn correlate_same_into(x: &[f64], h: &[f64], offset: usize, out: &mut [f64]) {
    let n = x.len() as isize;
    debug_assert_eq!(out.len(), x.len());
    for (i, &tap) in h.iter().enumerate() {
        if tap == 0.0 {
            continue;
        }
        let shift = i as isize - offset as isize;
        let lo = (-shift).clamp(0, n) as usize;
        let hi = (n - shift).clamp(0, n) as usize;
        if lo >= hi {
            continue;
        }
        let src = &x[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
        for (o, &s) in out[lo..hi].iter_mut().zip(src) {
            *o += tap * s;
        }
    }
}

/// Accumulates the kernel gradient of [`conv_same_into`]:
/// `grad_h(i) += sum_n upstream(n) * x(n + offset - i)`.
pub fn conv_same_kernel_grad(x: &[f64], upstream: &[f64], offset: usize, grad_h: &mut [f64]) {
    let n = x.len() as isize;
    for (i, g) in grad_h.iter_mut().enumerate() {
        let shift = offset as isize - i as isize;
        let lo = (-shift).clamp(0, n) as usize;
        let hi = (n - shift).clamp(0, n) as usize;
        if lo >= hi {
            continue;
        }
        let src = &x[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
        *g += upstream[lo..hi]
            .iter()
            .zip(src)
            .map(|(u, s)| u * s)
            .sum::<f64>();
    }
}

/// Causal direct-form FIR filter: `y(n) = sum_i h(i) x(n - i)`.
pub fn fir_filter(x: &Signal, h: &FirCoefficients) -> Result<Signal, SignalError> {
    if x.is_empty() {
        return Err(SignalError::EmptySignal);
    }
    let mut out = vec![0.0; x.len()];
    conv_same_into(x.samples(), h.taps(), 0, &mut out);
    Ok(x.with_samples(out))
}

/// Same-length convolution centered at `floor((K - 1) / 2)`, zero padded at
/// both ends.
pub fn centered_conv(x: &Signal, h: &FirCoefficients) -> Result<Signal, SignalError> {
    if x.is_empty() {
        return Err(SignalError::EmptySignal);
    }
    let mut out = vec![0.0; x.len()];
    conv_same_into(x.samples(), h.taps(), center_offset(h.len()), &mut out);
    Ok(x.with_samples(out))
}
