use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::Range;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    CardiacCycle, DataError, DomainProfile, Label, PhaseWindows, CYCLE_LEN, CYCLE_RATE_HZ,
};
use crate::signal::{
    center_offset, conv_same_into, design, hamming_window, hann_window, welch_psd, FirCoefficients,
    Signal,
};

/// Minimum murmur-phase band-power elevation over the other phase that
/// every generated abnormal cycle must show.
pub const MIN_SELF_CONTRAST_DB: f64 = 3.0;

const CYCLE_MS: f64 = 800.0;
const JITTER: f64 = 0.05;
const S1_ONSET_MS: f64 = 20.0;
const S2_ONSET_FRACTION: f64 = 0.4;
const SOUND_MS: f64 = 60.0;
const MURMUR_TAPS: usize = 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum MurmurPhase {
    Systolic,
    Diastolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Envelope {
    Crescendo,
    Decrescendo,
    CrescendoDecrescendo,
    Uniform,
}

impl Envelope {
    pub const ALL: [Envelope; 4] = [
        Envelope::Crescendo,
        Envelope::Decrescendo,
        Envelope::CrescendoDecrescendo,
        Envelope::Uniform,
    ];

    /// Gain at relative position `t` in `[0, 1]`.
    pub fn gain(self, t: f64) -> f64 {
        match self {
            Envelope::Crescendo => t,
            Envelope::Decrescendo => 1.0 - t,
            Envelope::CrescendoDecrescendo => 1.0 - (2.0 * t - 1.0).abs(),
            Envelope::Uniform => 1.0,
        }
    }
}

/// Band-limited noise burst placed in one cardiac phase.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MurmurSpec {
    pub phase: MurmurPhase,
    pub envelope: Envelope,
    pub band_hz: (f64, f64),
    /// RMS of the burst before enveloping.
    pub amplitude: f64,
}

impl MurmurSpec {
    pub fn new(
        phase: MurmurPhase,
        envelope: Envelope,
        band_hz: (f64, f64),
        amplitude: f64,
    ) -> Result<Self, DataError> {
        let (lo, hi) = band_hz;
        if !(lo > 0.0 && lo < hi && hi < CYCLE_RATE_HZ / 2.0) {
            return Err(DataError::InvalidMurmur(
                "band must satisfy 0 < low < high < 500 Hz",
            ));
        }
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(DataError::InvalidMurmur("amplitude must be positive"));
        }
        Ok(Self {
            phase,
            envelope,
            band_hz,
            amplitude,
        })
    }

    fn window(&self, w: &PhaseWindows) -> Range<usize> {
        match self.phase {
            MurmurPhase::Systolic => w.systole(),
            MurmurPhase::Diastolic => w.diastole(),
        }
    }

    fn other_window(&self, w: &PhaseWindows) -> Range<usize> {
        match self.phase {
            MurmurPhase::Systolic => w.diastole(),
            MurmurPhase::Diastolic => w.systole(),
        }
    }
}

/// How murmurs (and, for normal cycles, confusing breathing noise) are drawn
/// for generated datasets.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MurmurMix {
    /// Probability that an abnormal cycle's murmur is systolic.
    pub systolic_fraction: f64,
    /// Murmur RMS drawn uniformly from this range.
    pub amplitude: (f64, f64),
    /// Probability that a normal cycle carries diastolic breathing noise.
    pub confuser_fraction: f64,
}

impl Default for MurmurMix {
    fn default() -> Self {
        Self {
            systolic_fraction: 0.7,
            amplitude: (0.15, 0.3),
            confuser_fraction: 0.0,
        }
    }
}

impl MurmurMix {
    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::Confuser => Self {
                confuser_fraction: 0.5,
                ..Self::default()
            },
            _ => Self::default(),
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        let (lo, hi) = self.amplitude;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(DataError::InvalidMurmur(
                "amplitude range must be positive and ordered",
            ));
        }
        if !(0.0..=1.0).contains(&self.systolic_fraction)
            || !(0.0..=1.0).contains(&self.confuser_fraction)
        {
            return Err(DataError::InvalidMurmur("fractions must lie in [0, 1]"));
        }
        Ok(())
    }

    fn draw_murmur<R: Rng>(&self, rng: &mut R) -> MurmurSpec {
        let phase = if rng.random_bool(self.systolic_fraction) {
            MurmurPhase::Systolic
        } else {
            MurmurPhase::Diastolic
        };
        let envelope = Envelope::ALL[rng.random_range(0..4)];
        let band = (
            rng.random_range(70.0..120.0),
            rng.random_range(200.0..320.0),
        );
        let amplitude = draw_range(rng, self.amplitude);
        MurmurSpec {
            phase,
            envelope,
            band_hz: band,
            amplitude,
        }
    }

    fn draw_confuser<R: Rng>(&self, rng: &mut R) -> Option<MurmurSpec> {
        if !rng.random_bool(self.confuser_fraction) {
            return None;
        }
        Some(MurmurSpec {
            phase: MurmurPhase::Diastolic,
            envelope: Envelope::CrescendoDecrescendo,
            band_hz: (rng.random_range(40.0..80.0), rng.random_range(150.0..250.0)),
            amplitude: draw_range(rng, self.amplitude),
        })
    }
}

fn draw_range<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Dataset shapes with per-domain counts chosen by [`preset_profiles`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Preset {
    /// Every domain holds `n` normal and `n` abnormal cycles.
    Balanced,
    /// Domain 0 holds at least 70% of all normal cycles.
    Imbalanced,
    /// Balanced counts; half the normal cycles carry diastolic breathing noise.
    Confuser,
}

/// Domain transfer filter fixed by the domain id.
pub(super) fn domain_transfer(domain_id: usize) -> FirCoefficients {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7d0a_11e5_0000 + domain_id as u64);
    let taper = hann_window(7).expect("non-empty window");
    let mut taps: Vec<f64> = taper
        .iter()
        .map(|w| 0.6 * w * rng.sample::<f64, _>(StandardNormal))
        .collect();
    taps[3] += 1.0;
    let norm = taps.iter().map(|t| t * t).sum::<f64>().sqrt();
    taps.iter_mut().for_each(|t| *t /= norm);
    FirCoefficients::new(taps).expect("finite taps")
}

/// `domains` generated profiles with noise floors `0.01 * (d + 1)`.
pub fn preset_profiles(
    preset: Preset,
    domains: usize,
    per_class: usize,
) -> Result<Vec<DomainProfile>, DataError> {
    if domains < 2 {
        return Err(DataError::TooFewProfiles {
            min: 2,
            got: domains,
        });
    }
    (0..domains)
        .map(|d| {
            let normals = match preset {
                Preset::Imbalanced if d == 0 => (7 * (domains - 1) * per_class).div_ceil(3),
                _ => per_class,
            };
            DomainProfile::generated(d, 0.01 * (d + 1) as f64, normals, per_class)
        })
        .collect()
}

fn burst<R: Rng>(out: &mut [f64], start: usize, amplitude: f64, rng: &mut R) {
    let len = (SOUND_MS * CYCLE_RATE_HZ / 1000.0) as usize;
    let w = hann_window(len).expect("non-empty window");
    let f = rng.random_range(30.0..100.0) / CYCLE_RATE_HZ;
    let phi = rng.random_range(0.0..2.0 * PI);
    let decay = 0.4 * len as f64;
    for (n, o) in out[start..start + len].iter_mut().enumerate() {
        let t = n as f64;
        *o += amplitude * w[n] * (-t / decay).exp() * (2.0 * PI * f * t + phi).sin();
    }
}

fn add_murmur<R: Rng>(out: &mut [f64], window: Range<usize>, spec: &MurmurSpec, rng: &mut R) {
    let len = window.len();
    if len == 0 {
        return;
    }
    let pad = MURMUR_TAPS;
    let noise: Vec<f64> = (0..len + 2 * pad)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let taps = design::bandpass(
        spec.band_hz.0 / CYCLE_RATE_HZ,
        spec.band_hz.1 / CYCLE_RATE_HZ,
        &hamming_window(MURMUR_TAPS).expect("non-empty window"),
    )
    .expect("band validated");
    let mut filtered = vec![0.0; noise.len()];
    conv_same_into(&noise, &taps, center_offset(MURMUR_TAPS), &mut filtered);
    let core = &filtered[pad..pad + len];
    let rms = (core.iter().map(|v| v * v).sum::<f64>() / len as f64)
        .sqrt()
        .max(1e-12);
    let denom = (len.max(2) - 1) as f64;
    for (i, (o, v)) in out[window].iter_mut().zip(core).enumerate() {
        *o += spec.amplitude * spec.envelope.gain(i as f64 / denom) * v / rms;
    }
}

fn jitter<R: Rng>(rng: &mut R) -> f64 {
    1.0 + rng.random_range(-JITTER..JITTER)
}

fn generate<R: Rng>(
    label: Label,
    murmur: Option<&MurmurSpec>,
    domain: &DomainProfile,
    rng: &mut R,
    recording_id: alloc::string::String,
) -> Result<CardiacCycle, DataError> {
    if label == Label::Abnormal && murmur.is_none() {
        return Err(DataError::AbnormalWithoutMurmur);
    }
    let ms = CYCLE_RATE_HZ / 1000.0;
    let sound = (SOUND_MS * ms) as usize;
    let period = (CYCLE_MS * jitter(rng) * ms).round() as usize;
    let s1_start = (S1_ONSET_MS * jitter(rng) * ms).round() as usize;
    let s2_start = (S2_ONSET_FRACTION * period as f64 * jitter(rng)).round() as usize;
    let windows = PhaseWindows::new(
        s1_start..s1_start + sound,
        s2_start..s2_start + sound,
        period,
    )?;

    let mut clean = vec![0.0; CYCLE_LEN];
    let a1 = rng.random_range(0.8..1.2);
    let a2 = rng.random_range(0.5..0.9);
    burst(&mut clean, windows.s1.start, a1, rng);
    burst(&mut clean, windows.s2.start, a2, rng);
    if let Some(spec) = murmur {
        add_murmur(&mut clean, spec.window(&windows), spec, rng);
    }

    let h = domain.transfer_fir.taps();
    let mut samples = vec![0.0; CYCLE_LEN];
    conv_same_into(&clean, h, center_offset(h.len()), &mut samples);
    for (i, s) in samples.iter_mut().enumerate() {
        if i < period {
            if domain.noise_sigma > 0.0 {
                *s += domain.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        } else {
            *s = 0.0;
        }
        // Round to single precision so 32-bit float WAV export is lossless.
        *s = *s as f32 as f64;
    }

    let cycle = CardiacCycle::new(
        samples,
        label,
        domain.domain_id,
        recording_id,
        Some(windows),
    )?;
    if let (Label::Abnormal, Some(spec)) = (label, murmur) {
        let contrast_db = phase_contrast_db(&cycle, spec).expect("synthetic cycles carry windows");
        if !(contrast_db >= MIN_SELF_CONTRAST_DB) {
            return Err(DataError::SelfCheck {
                index: 0,
                contrast_db,
            });
        }
    }
    Ok(cycle)
}

/// One synthetic cycle. S1 and S2 are 60 ms damped tone bursts (30–100 Hz)
/// whose timing jitters by ±5%. An abnormal cycle adds `murmur` in its phase
/// window; a normal cycle given a murmur spec receives it as non-pathological
/// noise. The result passes through the domain's transfer filter, gains white
/// noise over the cycle and is zero-padded to 2500 samples.
pub fn synth_cycle(
    label: Label,
    murmur: Option<&MurmurSpec>,
    domain: &DomainProfile,
    seed: u64,
) -> Result<CardiacCycle, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate(
        label,
        murmur,
        domain,
        &mut rng,
        format!("d{}-{seed}", domain.domain_id),
    )
}

/// Generates every profile's normal then abnormal cycles, domain by domain.
/// Cycle `i` draws from its own ChaCha stream `i`, so any subset can be
/// regenerated independently.
pub fn synth_dataset(
    profiles: &[DomainProfile],
    mix: &MurmurMix,
    seed: u64,
) -> Result<Vec<CardiacCycle>, DataError> {
    if profiles.len() < 2 {
        return Err(DataError::TooFewProfiles {
            min: 2,
            got: profiles.len(),
        });
    }
    mix.validate()?;
    let total: usize = profiles.iter().map(DomainProfile::total).sum();
    let mut out = Vec::with_capacity(total);
    let mut index = 0u64;
    for p in profiles {
        p.validate()?;
        for (label, count) in [
            (Label::Normal, p.count_normal),
            (Label::Abnormal, p.count_abnormal),
        ] {
            for k in 0..count {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(index);
                let murmur = match label {
                    Label::Abnormal => Some(mix.draw_murmur(&mut rng)),
                    Label::Normal => mix.draw_confuser(&mut rng),
                };
                let id = format!("d{}-{}-{k:05}", p.domain_id, label.name());
                let cycle =
                    generate(label, murmur.as_ref(), p, &mut rng, id).map_err(|e| match e {
                        DataError::SelfCheck { contrast_db, .. } => DataError::SelfCheck {
                            index: index as usize,
                            contrast_db,
                        },
                        other => other,
                    })?;
                out.push(cycle);
                index += 1;
            }
        }
    }
    Ok(out)
}

/// Mean Welch PSD (dB) of `samples[range]` over `band_hz`.
pub fn band_power_db(
    samples: &[f64],
    range: Range<usize>,
    band_hz: (f64, f64),
) -> Result<f64, DataError> {
    let seg = &samples[range];
    let window = if seg.len() >= 64 {
        64
    } else {
        let p = seg.len().max(1).ilog2();
        1usize << p
    };
    let psd = welch_psd(&Signal::new(seg.to_vec(), CYCLE_RATE_HZ)?, window, 5.0)?;
    let df = CYCLE_RATE_HZ / window as f64;
    let (lo, hi) = band_hz;
    let in_band: Vec<f64> = psd
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = *k as f64 * df;
            f >= lo && f <= hi
        })
        .map(|(_, &p)| p)
        .collect();
    let mean = if in_band.is_empty() {
        let k = (((lo + hi) / 2.0) / df).round() as usize;
        psd[k.min(psd.len() - 1)]
    } else {
        in_band.iter().sum::<f64>() / in_band.len() as f64
    };
    Ok(10.0 * (mean + 1e-30).log10())
}

/// Band power of the murmur's phase window minus that of the other phase
/// window, in dB over the murmur band. `None` when the cycle has no windows.
pub fn phase_contrast_db(cycle: &CardiacCycle, murmur: &MurmurSpec) -> Option<f64> {
    let w = cycle.windows.as_ref()?;
    let on = band_power_db(cycle.samples(), murmur.window(w), murmur.band_hz).ok()?;
    let off = band_power_db(cycle.samples(), murmur.other_window(w), murmur.band_hz).ok()?;
    Some(on - off)
}
