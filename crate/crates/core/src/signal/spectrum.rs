use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::{kaiser_window, FirCoefficients, Signal, SignalError};
#[allow(unused_imports)]
use num_traits::Float;

/// Bins whose magnitude falls below this are treated as spectral zeros:
/// their phase is undefined and they carry no group delay.
pub const MAGNITUDE_FLOOR: f64 = 1e-8;

/// Full complex DFT of a real sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn magnitude(&self, k: usize) -> f64 {
        self.re[k].hypot(self.im[k])
    }

    pub fn phase(&self, k: usize) -> f64 {
        self.im[k].atan2(self.re[k])
    }
}

struct Twiddles {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Twiddles {
    fn new(n: usize) -> Self {
        let (cos, sin) = (0..n)
            .map(|k| {
                let w = 2.0 * PI * k as f64 / n as f64;
                (w.cos(), w.sin())
            })
            .unzip();
        Self { cos, sin }
    }

    /// Bins `0..n_bins` of the DFT of `x` zero-padded (or wrapped) to `n`.
    fn transform(&self, x: &[f64], n_bins: usize) -> Spectrum {
        let n = self.cos.len();
        let mut re = vec![0.0; n_bins];
        let mut im = vec![0.0; n_bins];
        for k in 0..n_bins {
            let (mut r, mut i) = (0.0, 0.0);
            let mut idx = 0usize;
            for &v in x {
                r += v * self.cos[idx];
                i -= v * self.sin[idx];
                idx += k;
                if idx >= n {
                    idx -= n;
                }
            }
            re[k] = r;
            im[k] = i;
        }
        Spectrum { re, im }
    }
}

/// Direct DFT of `x` zero-padded to `n_fft` points; all `n_fft` bins.
/// Inputs longer than `n_fft` are time-aliased.
pub fn dft_real(x: &[f64], n_fft: usize) -> Spectrum {
    let tw = Twiddles::new(n_fft);
    tw.transform(x, n_fft)
}

/// Reduces a phase difference to `(-pi/2, pi/2]`. Sign flips of a real
/// amplitude function show up as jumps of exactly `pi`; this folds them away.
pub fn wrap_to_half_pi(d: f64) -> f64 {
    let mut r = d - (d / PI).round() * PI;
    if r <= -PI / 2.0 {
        r += PI;
    } else if r > PI / 2.0 {
        r -= PI;
    }
    r
}

fn unwrap_2pi(phase: &mut [f64]) {
    let mut offset = 0.0;
    for k in 1..phase.len() {
        let raw = phase[k];
        let prev = phase[k - 1];
        let mut d = raw + offset - prev;
        while d > PI {
            offset -= 2.0 * PI;
            d -= 2.0 * PI;
        }
        while d < -PI {
            offset += 2.0 * PI;
            d += 2.0 * PI;
        }
        phase[k] = raw + offset;
    }
}

/// Magnitude, unwrapped phase and group delay of an FIR filter on the
/// `n_fft / 2 + 1` non-negative frequency bins.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrequencyResponse {
    pub n_fft: usize,
    pub magnitude: Vec<f64>,
    pub phase_rad: Vec<f64>,
    /// `NaN` at bins where the group delay is undefined (spectral zeros).
    #[cfg_attr(feature = "serde", serde(with = "nan_as_null"))]
    pub group_delay_samples: Vec<f64>,
}

impl FrequencyResponse {
    pub fn n_bins(&self) -> usize {
        self.magnitude.len()
    }

    /// Normalized angular frequency of bin `k`, in `[0, pi]`.
    pub fn omega(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.n_fft as f64
    }

    pub fn freq_hz(&self, k: usize, sample_rate_hz: f64) -> f64 {
        k as f64 * sample_rate_hz / self.n_fft as f64
    }

    /// Bins with magnitude above [`MAGNITUDE_FLOOR`].
    pub fn valid_bins(&self) -> impl Iterator<Item = usize> + '_ {
        self.magnitude
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > MAGNITUDE_FLOOR)
            .map(|(k, _)| k)
    }

    /// Least-squares line through the phase on the valid bins. The phase is
    /// unwrapped modulo `pi` first, so sign flips of the real amplitude
    /// function do not count as deviations. The residual is the largest
    /// absolute distance from the line; it is 0 with fewer than two valid
    /// bins.
    pub fn linear_phase_fit(&self) -> LinearPhaseFit {
        let bins: Vec<usize> = self.valid_bins().collect();
        if bins.len() < 2 {
            return LinearPhaseFit {
                delay_samples: 0.0,
                offset_rad: bins.first().map_or(0.0, |&k| self.phase_rad[k]),
                residual_rad: 0.0,
            };
        }
        let mut phase = Vec::with_capacity(bins.len());
        phase.push(self.phase_rad[bins[0]]);
        for w in bins.windows(2) {
            let prev = phase[phase.len() - 1];
            phase.push(prev + wrap_to_half_pi(self.phase_rad[w[1]] - self.phase_rad[w[0]]));
        }
        let omega: Vec<f64> = bins.iter().map(|&k| self.omega(k)).collect();
        let n = bins.len() as f64;
        let mw = omega.iter().sum::<f64>() / n;
        let mp = phase.iter().sum::<f64>() / n;
        let sww: f64 = omega.iter().map(|w| (w - mw) * (w - mw)).sum();
        let swp: f64 = omega
            .iter()
            .zip(&phase)
            .map(|(w, p)| (w - mw) * (p - mp))
            .sum();
        let slope = swp / sww;
        let offset = mp - slope * mw;
        let residual = omega
            .iter()
            .zip(&phase)
            .map(|(w, p)| (p - offset - slope * w).abs())
            .fold(0.0, f64::max);
        LinearPhaseFit {
            delay_samples: -slope,
            offset_rad: offset,
            residual_rad: residual,
        }
    }
}

/// Phase modelled as `offset_rad - delay_samples * omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPhaseFit {
    pub delay_samples: f64,
    pub offset_rad: f64,
    pub residual_rad: f64,
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

pub fn freq_response(h: &FirCoefficients, n_fft: usize) -> Result<FrequencyResponse, SignalError> {
    let min = 2 * h.len();
    if n_fft < min || n_fft < 2 {
        return Err(SignalError::FftTooSmall {
            n_fft,
            taps: h.len(),
            min,
        });
    }
    let n_bins = n_fft / 2 + 1;
    let spec = Twiddles::new(n_fft).transform(h.taps(), n_bins);
    let magnitude: Vec<f64> = (0..n_bins).map(|k| spec.magnitude(k)).collect();
    let raw: Vec<f64> = (0..n_bins).map(|k| spec.phase(k)).collect();

    let valid: Vec<bool> = magnitude.iter().map(|&m| m > MAGNITUDE_FLOOR).collect();
    let dw = 2.0 * PI / n_fft as f64;
    let step = |a: usize, b: usize| -wrap_to_half_pi(raw[b] - raw[a]) / dw;
    let group_delay_samples = (0..n_bins)
        .map(|k| {
            if !valid[k] {
                return f64::NAN;
            }
            let left = k > 0 && valid[k - 1];
            let right = k + 1 < n_bins && valid[k + 1];
            match (left, right) {
                (true, true) => 0.5 * (step(k - 1, k) + step(k, k + 1)),
                (true, false) => step(k - 1, k),
                (false, true) => step(k, k + 1),
                (false, false) => f64::NAN,
            }
        })
        .collect();

    let mut phase_rad = raw;
    unwrap_2pi(&mut phase_rad);
    Ok(FrequencyResponse {
        n_fft,
        magnitude,
        phase_rad,
        group_delay_samples,
    })
}

/// Welch power spectral density: 50%-overlapping Kaiser-windowed segments,
/// one-sided density in units^2/Hz on `window_len / 2 + 1` bins.
pub fn welch_psd(x: &Signal, window_len: usize, kaiser_beta: f64) -> Result<Vec<f64>, SignalError> {
    if window_len == 0 {
        return Err(SignalError::InvalidWindowLength);
    }
    if x.len() < window_len {
        return Err(SignalError::SignalTooShort {
            len: x.len(),
            window: window_len,
        });
    }
    let window = kaiser_window(window_len, kaiser_beta)?;
    let win_power: f64 = window.iter().map(|w| w * w).sum();
    let scale = 1.0 / (x.sample_rate_hz() * win_power);
    let hop = (window_len / 2).max(1);
    let n_bins = window_len / 2 + 1;
    let tw = Twiddles::new(window_len);

    let mut psd = vec![0.0; n_bins];
    let mut segments = 0usize;
    let mut buf = vec![0.0; window_len];
    let mut start = 0;
    while start + window_len <= x.len() {
        for (b, (s, w)) in buf
            .iter_mut()
            .zip(x.samples()[start..start + window_len].iter().zip(&window))
        {
            *b = s * w;
        }
        let spec = tw.transform(&buf, n_bins);
        for (k, p) in psd.iter_mut().enumerate() {
            *p += spec.re[k] * spec.re[k] + spec.im[k] * spec.im[k];
        }
        segments += 1;
        start += hop;
    }
    let nyquist_unpaired = window_len % 2 == 0;
    for (k, p) in psd.iter_mut().enumerate() {
        let one_sided = if k == 0 || (nyquist_unpaired && k == n_bins - 1) {
            1.0
        } else {
            2.0
        };
        *p *= one_sided * scale / segments as f64;
    }
    Ok(psd)
}

/// Center frequencies (Hz) of the [`welch_psd`] bins.
pub fn welch_frequencies(window_len: usize, sample_rate_hz: f64) -> Vec<f64> {
    (0..window_len / 2 + 1)
        .map(|k| k as f64 * sample_rate_hz / window_len as f64)
        .collect()
}
