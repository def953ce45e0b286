//! Learnable filterbank front-end: four FIR kernels applied in parallel to a
//! single-channel input, with hand-derived gradients for every
//! parameterization.

mod kernel;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

pub use kernel::{materialize, project_taps, FrontendKernel, FrontendKind, GammatoneParams};

use crate::autodiff::Tensor;
use crate::signal::{
    center_offset, conv_same_into, conv_same_kernel_grad, correlate_same_into, design,
    freq_response, hamming_window, FrequencyResponse, MAGNITUDE_FLOOR,
};

/// Number of parallel branches in a filterbank.
pub const BRANCHES: usize = 4;

/// Sampling rate the front-end is designed for.
pub const SAMPLE_RATE_HZ: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrontendError {
    #[error("{kind} kernels cannot have length {len}; they need {}", kind.len_requirement())]
    Parity { kind: FrontendKind, len: usize },
    #[error("expected {expected} free parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("invalid gammatone parameters: {0}")]
    InvalidGammatone(&'static str),
    #[error("gammatone kernels cannot be projected from arbitrary taps")]
    NotProjectable,
    #[error("unknown front-end kind")]
    UnknownKind,
    #[error("kernel taps are not finite")]
    NonFinite,
    #[error("a filterbank needs exactly {BRANCHES} kernels, got {0}")]
    KernelCount(usize),
    #[error("filterbank kernels must share kind and length")]
    Heterogeneous,
    #[error("front-end expects a single-channel input of shape [1, N] or [B, 1, N], got {0:?}")]
    ChannelMismatch(Vec<usize>),
    #[error("upstream gradient shape {got:?} does not match the forward output {expected:?}")]
    UpstreamShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("forward state was recorded for a different filterbank")]
    StaleCache,
    #[error("invalid initialization band {low_hz}-{high_hz} Hz")]
    InvalidBand { low_hz: f64, high_hz: f64 },
}

/// Four kernels of identical kind and length, one per branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank {
    kernels: Vec<FrontendKernel>,
}

impl Filterbank {
    pub fn new(kernels: Vec<FrontendKernel>) -> Result<Self, FrontendError> {
        if kernels.len() != BRANCHES {
            return Err(FrontendError::KernelCount(kernels.len()));
        }
        let (kind, len) = (kernels[0].kind(), kernels[0].len());
        if kernels.iter().any(|k| k.kind() != kind || k.len() != len) {
            return Err(FrontendError::Heterogeneous);
        }
        Ok(Self { kernels })
    }

    /// Four copies of the same kernel.
    pub fn uniform(kernel: FrontendKernel) -> Self {
        Self {
            kernels: vec![kernel; BRANCHES],
        }
    }

    pub fn kind(&self) -> FrontendKind {
        self.kernels[0].kind()
    }

    pub fn kernel_len(&self) -> usize {
        self.kernels[0].len()
    }

    pub fn kernels(&self) -> &[FrontendKernel] {
        &self.kernels
    }

    pub fn kernel(&self, b: usize) -> &FrontendKernel {
        &self.kernels[b]
    }

    /// Total number of free parameters across branches.
    pub fn param_count(&self) -> usize {
        self.kernels.iter().map(|k| k.params().len()).sum()
    }

    /// Mutable views of every kernel's free parameters. Call [`Self::resync`]
    /// after modifying them.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.kernels.iter_mut().map(|k| k.params_mut()).collect()
    }

    /// Clamps gammatone parameters and rebuilds every kernel's taps.
    pub fn resync(&mut self) -> Result<(), FrontendError> {
        self.kernels.iter_mut().try_for_each(|k| k.resync())
    }

    pub fn update<F: FnMut(usize, &mut [f64])>(&mut self, mut f: F) -> Result<(), FrontendError> {
        for (b, k) in self.kernels.iter_mut().enumerate() {
            k.update(|p| f(b, p))?;
        }
        Ok(())
    }
}

/// Forward state needed by [`frontend_backward`].
#[derive(Debug, Clone)]
pub struct FrontendCache {
    input: Vec<f64>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    batch: usize,
    n: usize,
    kind: FrontendKind,
    kernel_len: usize,
    /// First-pass outputs of a zero-phase bank, `[b][branch][n]` flattened.
    first_pass: Option<Vec<f64>>,
}

/// Gradients produced by [`frontend_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendGrads {
    /// Gradient on each kernel's free parameters.
    pub params: Vec<Vec<f64>>,
    /// Gradient on each kernel's materialized taps.
    pub taps: Vec<Vec<f64>>,
    /// Gradient on the input, shaped like the forward input.
    pub input: Option<Tensor>,
}

fn split_input(x: &Tensor) -> Result<(usize, usize, Vec<usize>), FrontendError> {
    match *x.shape() {
        [1, n] => Ok((1, n, vec![BRANCHES, n])),
        [b, 1, n] => Ok((b, n, vec![b, BRANCHES, n])),
        _ => Err(FrontendError::ChannelMismatch(x.shape().to_vec())),
    }
}

/// Applies each branch kernel to the input with centered same-length
/// convolution. Zero-phase banks convolve twice, the second time with the
/// time-reversed kernel.
pub fn frontend_forward(
    x: &Tensor,
    bank: &Filterbank,
) -> Result<(Tensor, FrontendCache), FrontendError> {
    let (batch, n, out_shape) = split_input(x)?;
    let k_len = bank.kernel_len();
    let c = center_offset(k_len);
    let zero_phase = bank.kind() == FrontendKind::ZeroPhase;
    let mut out = vec![0.0; batch * BRANCHES * n];
    let mut first = zero_phase.then(|| vec![0.0; batch * BRANCHES * n]);

    for b in 0..batch {
        let xb = &x.data()[b * n..(b + 1) * n];
        for (k, kernel) in bank.kernels().iter().enumerate() {
            let h = kernel.taps().taps();
            let at = (b * BRANCHES + k) * n;
            match first.as_mut() {
                Some(z1) => {
                    let z = &mut z1[at..at + n];
                    conv_same_into(xb, h, c, z);
                    correlate_same_into(z, h, c, &mut out[at..at + n]);
                }
                None => conv_same_into(xb, h, c, &mut out[at..at + n]),
            }
        }
    }

    let cache = FrontendCache {
        input: x.data().to_vec(),
        input_shape: x.shape().to_vec(),
        output_shape: out_shape.clone(),
        batch,
        n,
        kind: bank.kind(),
        kernel_len: k_len,
        first_pass: first,
    };
    let out = Tensor::new(out_shape, out).expect("output shape matches data by construction");
    Ok((out, cache))
}

/// Reverse pass of [`frontend_forward`]. Tap gradients follow
/// `dL/dh(i) = sum_n dL/dz(n) x(n + c - i)` and are then chained to the
/// kernel's free parameters.
pub fn frontend_backward(
    upstream: &Tensor,
    cache: &FrontendCache,
    bank: &Filterbank,
    want_input: bool,
) -> Result<FrontendGrads, FrontendError> {
    if upstream.shape() != cache.output_shape.as_slice() {
        return Err(FrontendError::UpstreamShape {
            expected: cache.output_shape.clone(),
            got: upstream.shape().to_vec(),
        });
    }
    if bank.kind() != cache.kind || bank.kernel_len() != cache.kernel_len {
        return Err(FrontendError::StaleCache);
    }
    let (n, k_len) = (cache.n, cache.kernel_len);
    let c = center_offset(k_len);
    let mut taps = vec![vec![0.0; k_len]; BRANCHES];
    let mut dx = want_input.then(|| vec![0.0; cache.batch * n]);
    let mut dz1 = vec![0.0; n];
    let mut scratch = vec![0.0; k_len];

    for b in 0..cache.batch {
        let xb = &cache.input[b * n..(b + 1) * n];
        for (k, kernel) in bank.kernels().iter().enumerate() {
            let h = kernel.taps().taps();
            let at = (b * BRANCHES + k) * n;
            let up = &upstream.data()[at..at + n];
            match cache.first_pass.as_ref() {
                Some(z1) => {
                    let z = &z1[at..at + n];
                    // Second pass y(n) = sum_i h(i) z(n + i - c) has kernel
                    // gradient sum_n up(n) z(n + i - c): a convolution kernel
                    // gradient at the mirrored offset, read back reversed.
                    scratch.iter_mut().for_each(|v| *v = 0.0);
                    conv_same_kernel_grad(z, up, k_len - 1 - c, &mut scratch);
                    for (g, s) in taps[k].iter_mut().zip(scratch.iter().rev()) {
                        *g += s;
                    }
                    dz1.iter_mut().for_each(|v| *v = 0.0);
                    conv_same_into(up, h, c, &mut dz1);
                    conv_same_kernel_grad(xb, &dz1, c, &mut taps[k]);
                    if let Some(dx) = dx.as_mut() {
                        correlate_same_into(&dz1, h, c, &mut dx[b * n..(b + 1) * n]);
                    }
                }
                None => {
                    conv_same_kernel_grad(xb, up, c, &mut taps[k]);
                    if let Some(dx) = dx.as_mut() {
                        correlate_same_into(up, h, c, &mut dx[b * n..(b + 1) * n]);
                    }
                }
            }
        }
    }

    let params = bank
        .kernels()
        .iter()
        .zip(&taps)
        .map(|(kernel, g)| kernel.param_grad(g))
        .collect();
    let input = dx.map(|d| {
        Tensor::new(cache.input_shape.clone(), d).expect("input shape recorded at forward")
    });
    Ok(FrontendGrads {
        params,
        taps,
        input,
    })
}

/// Frequency bands (Hz) used to initialize non-gammatone kernels.
pub const DEFAULT_INIT_BANDS_HZ: [(f64, f64); BRANCHES] =
    [(25.0, 45.0), (45.0, 80.0), (80.0, 200.0), (200.0, 400.0)];

/// Builds a filterbank with the default initialization bands.
pub fn init_filterbank(
    kind: FrontendKind,
    len: usize,
    seed: u64,
) -> Result<Filterbank, FrontendError> {
    init_filterbank_with_bands(kind, len, seed, &DEFAULT_INIT_BANDS_HZ)
}

/// The seed only matters for gammatone banks, which draw `f ~ U(10, 400) Hz` and `beta ~ N(30, 6^2) Hz` (both
/// stored per-sample) with `alpha = 1e5` and `eta = 4`. Other kinds start from
/// Hamming-windowed bandpass designs projected onto their constraint; the
/// anti-symmetric kinds use the Hilbert-pair design so the passband survives
/// the projection.
pub fn init_filterbank_with_bands(
    kind: FrontendKind,
    len: usize,
    seed: u64,
    bands_hz: &[(f64, f64); BRANCHES],
) -> Result<Filterbank, FrontendError> {
    kind.check_len(len)?;
    let kernels = if kind == FrontendKind::Gammatone {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f_dist = Uniform::new(10.0, 400.0).expect("static bounds");
        let beta_dist = Normal::new(30.0, 6.0).expect("static parameters");
        (0..BRANCHES)
            .map(|_| {
                let f = f_dist.sample(&mut rng) / SAMPLE_RATE_HZ;
                let beta =
                    (beta_dist.sample(&mut rng) / SAMPLE_RATE_HZ).max(GammatoneParams::MIN_BETA);
                FrontendKernel::gammatone(GammatoneParams::new(1e5, 4.0, beta, f)?, len)
            })
            .collect::<Result<Vec<_>, _>>()?
    } else {
        let window = hamming_window(len).map_err(|_| FrontendError::Parity { kind, len })?;
        bands_hz
            .iter()
            .map(|&(low_hz, high_hz)| {
                let (lo, hi) = (low_hz / SAMPLE_RATE_HZ, high_hz / SAMPLE_RATE_HZ);
                let taps = if kind.is_antisymmetric() {
                    design::hilbert_bandpass(lo, hi, &window)
                } else {
                    design::bandpass(lo, hi, &window)
                }
                .map_err(|_| FrontendError::InvalidBand { low_hz, high_hz })?;
                FrontendKernel::from_taps(kind, &taps)
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    Filterbank::new(kernels)
}

/// A scalar or vector entry of an exported kernel's parameter map.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(untagged))]
pub enum ParamValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

/// Taps, parameters and frequency response of one kernel.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KernelExport {
    pub kind: String,
    #[cfg_attr(feature = "serde", serde(rename = "K"))]
    pub k: usize,
    pub taps: Vec<f64>,
    pub params: BTreeMap<String, ParamValue>,
    pub response: ResponseExport,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResponseExport {
    pub freq_hz: Vec<f64>,
    pub magnitude: Vec<f64>,
    pub phase_rad: Vec<f64>,
    /// Samples; `null` in JSON where undefined.
    #[cfg_attr(feature = "serde", serde(with = "nan_as_null"))]
    pub group_delay: Vec<f64>,
}

#[cfg(feature = "serde")]
mod nan_as_null {
    use alloc::vec::Vec;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt = Vec::<Option<f64>>::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
    }
}

/// DFT size used for exported responses: 1024, or larger for long kernels.
pub fn export_n_fft(kernel_len: usize) -> usize {
    (2 * kernel_len).next_power_of_two().max(1024)
}

/// Effective response of a kernel within its branch: the single-pass
/// response, or `|H|^2` with zero phase for zero-phase kernels.
pub fn effective_response(kernel: &FrontendKernel, n_fft: usize) -> FrequencyResponse {
    let r = freq_response(kernel.taps(), n_fft).expect("n_fft chosen to fit the kernel");
    if kernel.kind() != FrontendKind::ZeroPhase {
        return r;
    }
    let magnitude: Vec<f64> = r.magnitude.iter().map(|m| m * m).collect();
    let group_delay_samples = magnitude
        .iter()
        .map(|&m| if m > MAGNITUDE_FLOOR { 0.0 } else { f64::NAN })
        .collect();
    FrequencyResponse {
        n_fft,
        phase_rad: vec![0.0; magnitude.len()],
        magnitude,
        group_delay_samples,
    }
}

pub fn export_kernel(kernel: &FrontendKernel) -> KernelExport {
    let n_fft = export_n_fft(kernel.len());
    let r = effective_response(kernel, n_fft);
    let mut params = BTreeMap::new();
    match kernel.gammatone_params() {
        Some(g) => {
            params.insert("alpha".to_string(), ParamValue::Scalar(g.alpha));
            params.insert("eta".to_string(), ParamValue::Scalar(g.eta));
            params.insert("beta".to_string(), ParamValue::Scalar(g.beta));
            params.insert("f".to_string(), ParamValue::Scalar(g.f));
            params.insert("f_hz".to_string(), ParamValue::Scalar(g.f * SAMPLE_RATE_HZ));
            params.insert("phi".to_string(), ParamValue::Scalar(0.0));
        }
        None => {
            params.insert(
                "free".to_string(),
                ParamValue::Vector(kernel.params().to_vec()),
            );
        }
    }
    KernelExport {
        kind: kernel.kind().name().to_string(),
        k: kernel.len(),
        taps: kernel.taps().taps().to_vec(),
        params,
        response: ResponseExport {
            freq_hz: (0..r.n_bins())
                .map(|k| r.freq_hz(k, SAMPLE_RATE_HZ))
                .collect(),
            magnitude: r.magnitude,
            phase_rad: r.phase_rad,
            group_delay: r.group_delay_samples,
        },
    }
}

pub fn export_kernels(bank: &Filterbank) -> Vec<KernelExport> {
    bank.kernels().iter().map(export_kernel).collect()
}

#[cfg(test)]
mod tests;
