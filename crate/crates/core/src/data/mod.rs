//! Cardiac-cycle records, a seeded multi-domain synthetic generator and the
//! format-independent half of real-recording ingestion.

mod synth;

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

pub use synth::{
    band_power_db, phase_contrast_db, preset_profiles, synth_cycle, synth_dataset, Envelope,
    MurmurMix, MurmurPhase, MurmurSpec, Preset, MIN_SELF_CONTRAST_DB,
};

pub use crate::model::Label;
use crate::signal::{resample, FirCoefficients, Signal, SignalError};

/// Samples per cycle after padding or truncation.
pub const CYCLE_LEN: usize = 2500;
/// Sampling rate of every cycle.
pub const CYCLE_RATE_HZ: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("at least {min} domain profiles are required, got {got}")]
    TooFewProfiles { min: usize, got: usize },
    #[error("abnormal cycles need a murmur")]
    AbnormalWithoutMurmur,
    #[error("invalid murmur: {0}")]
    InvalidMurmur(&'static str),
    #[error("invalid domain profile {domain}: {reason}")]
    InvalidProfile { domain: usize, reason: &'static str },
    #[error("cycle {index}: murmur phase is only {contrast_db:.2} dB above the other phase")]
    SelfCheck { index: usize, contrast_db: f64 },
    #[error("cycle {index} starts at {start_ms} ms, beyond the {len_ms} ms recording")]
    CycleStartBeyondEnd {
        index: usize,
        start_ms: f64,
        len_ms: f64,
    },
    #[error("cycle starts must be finite, non-negative and increasing (cycle {0})")]
    UnorderedStarts(usize),
    #[error("cycle has {0} samples, expected {CYCLE_LEN}")]
    CycleLength(usize),
    #[error("phase windows must be ordered, disjoint and inside the cycle")]
    InvalidWindows,
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Heart-sound and phase boundaries within a cycle, in samples.
///
/// Systole runs from the end of S1 to the start of S2; diastole from the end
/// of S2 to `end`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhaseWindows {
    pub s1: Range<usize>,
    pub s2: Range<usize>,
    pub end: usize,
}

impl PhaseWindows {
    pub fn new(s1: Range<usize>, s2: Range<usize>, end: usize) -> Result<Self, DataError> {
        let ok = s1.start < s1.end
            && s1.end <= s2.start
            && s2.start < s2.end
            && s2.end <= end
            && end <= CYCLE_LEN;
        if !ok {
            return Err(DataError::InvalidWindows);
        }
        Ok(Self { s1, s2, end })
    }

    pub fn systole(&self) -> Range<usize> {
        self.s1.end..self.s2.start
    }

    pub fn diastole(&self) -> Range<usize> {
        self.s2.end..self.end
    }
}

/// One cardiac cycle: 2500 samples at 1 kHz with its label and provenance.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CardiacCycle {
    samples: Vec<f64>,
    pub label: Label,
    pub domain_id: usize,
    pub recording_id: String,
    /// Known for synthetic cycles and for annotated real cycles.
    pub windows: Option<PhaseWindows>,
}

impl CardiacCycle {
    pub fn new(
        samples: Vec<f64>,
        label: Label,
        domain_id: usize,
        recording_id: String,
        windows: Option<PhaseWindows>,
    ) -> Result<Self, DataError> {
        if samples.len() != CYCLE_LEN {
            return Err(DataError::CycleLength(samples.len()));
        }
        Ok(Self {
            samples,
            label,
            domain_id,
            recording_id,
            windows,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn systole_window(&self) -> Option<Range<usize>> {
        self.windows.as_ref().map(PhaseWindows::systole)
    }

    pub fn diastole_window(&self) -> Option<Range<usize>> {
        self.windows.as_ref().map(PhaseWindows::diastole)
    }
}

/// Acquisition characteristics of one simulated source.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DomainProfile {
    pub domain_id: usize,
    pub transfer_fir: FirCoefficients,
    pub noise_sigma: f64,
    pub count_normal: usize,
    pub count_abnormal: usize,
}

impl DomainProfile {
    pub fn new(
        domain_id: usize,
        transfer_fir: FirCoefficients,
        noise_sigma: f64,
        count_normal: usize,
        count_abnormal: usize,
    ) -> Result<Self, DataError> {
        let p = Self {
            domain_id,
            transfer_fir,
            noise_sigma,
            count_normal,
            count_abnormal,
        };
        p.validate()?;
        Ok(p)
    }

    /// A profile whose transfer filter is a smooth random 7-tap shape fixed by
    /// `domain_id` alone.
    pub fn generated(
        domain_id: usize,
        noise_sigma: f64,
        count_normal: usize,
        count_abnormal: usize,
    ) -> Result<Self, DataError> {
        Self::new(
            domain_id,
            synth::domain_transfer(domain_id),
            noise_sigma,
            count_normal,
            count_abnormal,
        )
    }

    pub fn with_counts(mut self, count_normal: usize, count_abnormal: usize) -> Self {
        self.count_normal = count_normal;
        self.count_abnormal = count_abnormal;
        self
    }

    fn validate(&self) -> Result<(), DataError> {
        let invalid = |reason| DataError::InvalidProfile {
            domain: self.domain_id,
            reason,
        };
        if self.transfer_fir.taps().iter().all(|&t| t == 0.0) {
            return Err(invalid("transfer filter is identically zero"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid("noise sigma must be non-negative"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.count_normal + self.count_abnormal
    }
}

/// Zero-pads or truncates to [`CYCLE_LEN`].
pub fn fit_cycle(samples: &[f64]) -> Vec<f64> {
    crate::model::fit_length(samples, CYCLE_LEN)
}

/// Resamples a recording to 1 kHz and cuts it at each annotated cycle start.
/// A cycle runs until the next start (or the end of the recording) and is
/// then padded or truncated to [`CYCLE_LEN`].
pub fn segment_recording(
    recording: &Signal,
    starts_ms: &[f64],
) -> Result<Vec<Vec<f64>>, DataError> {
    let x = resample(recording, CYCLE_RATE_HZ)?;
    let len_ms = x.len() as f64 * 1000.0 / CYCLE_RATE_HZ;
    let mut prev = f64::NEG_INFINITY;
    let mut bounds = Vec::with_capacity(starts_ms.len());
    for (index, &start_ms) in starts_ms.iter().enumerate() {
        if !(start_ms.is_finite() && start_ms >= 0.0 && start_ms > prev) {
            return Err(DataError::UnorderedStarts(index));
        }
        if start_ms >= len_ms {
            return Err(DataError::CycleStartBeyondEnd {
                index,
                start_ms,
                len_ms,
            });
        }
        prev = start_ms;
        bounds.push((start_ms * CYCLE_RATE_HZ / 1000.0).round() as usize);
    }
    Ok(bounds
        .iter()
        .enumerate()
        .map(|(i, &start)| {
            let end = bounds.get(i + 1).copied().unwrap_or(x.len()).max(start);
            fit_cycle(&x.samples()[start..end])
        })
        .collect())
}
