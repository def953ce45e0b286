//! Plot-ready analysis data: front-end filter snapshots over training,
//! gammatone parameter traces, phase audits and Grad-CAM records.

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::data::CardiacCycle;
use crate::frontend::{
    effective_response, export_kernel, export_n_fft, FrontendKind, KernelExport, ParamValue,
    SAMPLE_RATE_HZ,
};
use crate::model::{fit_length, grad_cam, BranchedCnn, Label, ModelError, Posterior};

/// Default spacing of snapshots, in epochs.
pub const DEFAULT_SNAPSHOT_EVERY: usize = 10;

/// Largest phase deviation tolerated for linear-phase kinds.
pub const LINEAR_PHASE_BOUND_RAD: f64 = 1e-6;
/// Largest phase magnitude tolerated for the zero-phase kind.
pub const ZERO_PHASE_BOUND_RAD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpretError {
    #[error("snapshot epoch {got} does not follow epoch {last}")]
    UnorderedEpoch { last: usize, got: usize },
    #[error("expected a gammatone front-end, found {0}")]
    NotGammatone(String),
    #[error("snapshot kernel is missing gammatone parameter {0}")]
    MissingParam(&'static str),
    #[error("snapshots disagree on the number of kernels")]
    KernelCount,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Exported front-end kernels at one epoch, with the linear-phase residual
/// of each kernel's effective response.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FilterSnapshot {
    pub epoch: usize,
    pub kernels: Vec<KernelExport>,
    pub phase_linearity_residual: Vec<f64>,
}

pub fn snapshot_filters(model: &BranchedCnn, epoch: usize) -> FilterSnapshot {
    let bank = model.frontend();
    let kernels = bank.kernels().iter().map(export_kernel).collect();
    let phase_linearity_residual = bank
        .kernels()
        .iter()
        .map(|k| {
            effective_response(k, export_n_fft(k.len()))
                .linear_phase_fit()
                .residual_rad
        })
        .collect();
    FilterSnapshot {
        epoch,
        kernels,
        phase_linearity_residual,
    }
}

/// Whether a snapshot is taken after `epoch` (0 is the initial model).
pub fn snapshot_due(epoch: usize, every: usize, final_epoch: usize) -> bool {
    epoch == 0 || epoch == final_epoch || (every > 0 && epoch % every == 0)
}

/// Snapshots of one run, kept in strictly increasing epoch order.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SnapshotSeries {
    snapshots: Vec<FilterSnapshot>,
}

impl SnapshotSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, snapshot: FilterSnapshot) -> Result<(), InterpretError> {
        if let Some(last) = self.snapshots.last() {
            if snapshot.epoch <= last.epoch {
                return Err(InterpretError::UnorderedEpoch {
                    last: last.epoch,
                    got: snapshot.epoch,
                });
            }
        }
        self.snapshots.push(snapshot);
        Ok(())
    }

    pub fn snapshots(&self) -> &[FilterSnapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Per kernel, the largest residual seen over the run.
    pub fn max_residuals(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for s in &self.snapshots {
            if out.len() < s.phase_linearity_residual.len() {
                out.resize(s.phase_linearity_residual.len(), 0.0);
            }
            for (o, r) in out.iter_mut().zip(&s.phase_linearity_residual) {
                *o = o.max(*r);
            }
        }
        out
    }
}

/// The residual bound a kind guarantees by construction, if any.
pub fn phase_residual_bound(kind: FrontendKind) -> Option<f64> {
    match kind {
        FrontendKind::ZeroPhase => Some(ZERO_PHASE_BOUND_RAD),
        k if k.is_linear_phase() => Some(LINEAR_PHASE_BOUND_RAD),
        _ => None,
    }
}

/// One kernel's gammatone parameters over a series of snapshots.
#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GammatoneTrace {
    pub epochs: Vec<usize>,
    pub alpha: Vec<f64>,
    pub eta: Vec<f64>,
    pub beta: Vec<f64>,
    pub f_hz: Vec<f64>,
}

fn scalar(k: &KernelExport, name: &'static str) -> Result<f64, InterpretError> {
    match k.params.get(name) {
        Some(ParamValue::Scalar(v)) => Ok(*v),
        _ => Err(InterpretError::MissingParam(name)),
    }
}

pub fn gammatone_param_trace(
    snapshots: &[FilterSnapshot],
) -> Result<Vec<GammatoneTrace>, InterpretError> {
    let n_kernels = snapshots.first().map_or(0, |s| s.kernels.len());
    let mut traces = alloc::vec![GammatoneTrace::default(); n_kernels];
    for s in snapshots {
        if s.kernels.len() != n_kernels {
            return Err(InterpretError::KernelCount);
        }
        for (t, k) in traces.iter_mut().zip(&s.kernels) {
            if k.kind != FrontendKind::Gammatone.name() {
                return Err(InterpretError::NotGammatone(k.kind.clone()));
            }
            t.epochs.push(s.epoch);
            t.alpha.push(scalar(k, "alpha")?);
            t.eta.push(scalar(k, "eta")?);
            t.beta.push(scalar(k, "beta")?);
            t.f_hz.push(scalar(k, "f")? * SAMPLE_RATE_HZ);
        }
    }
    Ok(traces)
}

/// A cycle, the model's posterior for it and its Grad-CAM map.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradCamRecord {
    pub recording_id: String,
    pub label: Label,
    pub domain_id: usize,
    pub target: Label,
    pub posterior: Posterior,
    pub waveform: Vec<f64>,
    pub cam: Vec<f64>,
}

pub fn gradcam_record(
    model: &BranchedCnn,
    cycle: &CardiacCycle,
    target: Label,
) -> Result<GradCamRecord, InterpretError> {
    let len = model.config().input_len;
    let waveform = fit_length(cycle.samples(), len);
    let x = Tensor::new(alloc::vec![1, 1, len], waveform.clone()).map_err(ModelError::from)?;
    let posterior = model.forward(&x)?;
    let cam = grad_cam(model, &waveform, target.index())?;
    Ok(GradCamRecord {
        recording_id: cycle.recording_id.clone(),
        label: cycle.label,
        domain_id: cycle.domain_id,
        target,
        posterior,
        waveform,
        cam,
    })
}

/// Summed CAM over the systolic and the diastolic window, or `None` when the
/// cycle carries no phase windows.
pub fn cam_phase_mass(cam: &[f64], cycle: &CardiacCycle) -> Option<(f64, f64)> {
    let sys = cycle.systole_window()?;
    let dia = cycle.diastole_window()?;
    let mass = |r: core::ops::Range<usize>| {
        let hi = r.end.min(cam.len());
        cam[r.start.min(hi)..hi].iter().sum::<f64>()
    };
    Some((mass(sys), mass(dia)))
}
