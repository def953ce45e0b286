use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use super::TrainError;
use crate::data::CardiacCycle;
use crate::model::{fuse_recording, BranchedCnn, Label, Posterior};

/// Mean of sensitivity and specificity.
pub fn macc(sensitivity: f64, specificity: f64) -> f64 {
    (sensitivity + specificity) / 2.0
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Binary confusion counts with abnormal as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Abnormal, Label::Abnormal) => self.tp += 1,
            (Label::Normal, Label::Abnormal) => self.fp += 1,
            (Label::Normal, Label::Normal) => self.tn += 1,
            (Label::Abnormal, Label::Normal) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Recall of the abnormal class; 0 when there are no abnormal samples.
    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Recall of the normal class; 0 when there are no normal samples.
    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub macc: f64,
    pub f1: f64,
    pub per_domain_accuracy: BTreeMap<usize, f64>,
    /// Unweighted mean of `per_domain_accuracy`.
    pub avg_domain_accuracy: f64,
    pub confusion: Confusion,
}

impl EvalReport {
    /// Builds a report from `(truth, predicted, domain)` triples, one per
    /// recording. Domains listed in `expected_domains` that have no
    /// recordings are left out of the average with a warning.
    pub fn from_predictions(items: &[(Label, Label, usize)], expected_domains: &[usize]) -> Self {
        let mut confusion = Confusion::default();
        let mut per_domain: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for &(truth, pred, domain) in items {
            confusion.record(truth, pred);
            let e = per_domain.entry(domain).or_default();
            e.0 += usize::from(truth == pred);
            e.1 += 1;
        }
        for d in expected_domains {
            if !per_domain.contains_key(d) {
                log::warn!("domain {d} has no recordings; excluded from the domain average");
            }
        }
        let per_domain_accuracy: BTreeMap<usize, f64> = per_domain
            .into_iter()
            .map(|(d, (ok, n))| (d, ratio(ok, n)))
            .collect();
        let avg_domain_accuracy = if per_domain_accuracy.is_empty() {
            0.0
        } else {
            per_domain_accuracy.values().sum::<f64>() / per_domain_accuracy.len() as f64
        };
        let (sensitivity, specificity) = (confusion.sensitivity(), confusion.specificity());
        Self {
            sensitivity,
            specificity,
            macc: macc(sensitivity, specificity),
            f1: confusion.f1(),
            per_domain_accuracy,
            avg_domain_accuracy,
            confusion,
        }
    }

    pub fn min_domain_accuracy(&self) -> f64 {
        self.per_domain_accuracy
            .values()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Recording-level predictions: `(recording_id, truth, fused, domain)`.
pub type RecordingPrediction = (String, Label, Posterior, Label, usize);

/// Groups cycles by recording, fuses their posteriors and scores the fused
/// labels.
pub fn evaluate(
    model: &BranchedCnn,
    cycles: &[CardiacCycle],
    batch_size: usize,
) -> Result<EvalReport, TrainError> {
    let (report, _) = evaluate_detailed(model, cycles, batch_size, &[])?;
    Ok(report)
}

pub fn evaluate_detailed(
    model: &BranchedCnn,
    cycles: &[CardiacCycle],
    batch_size: usize,
    expected_domains: &[usize],
) -> Result<(EvalReport, Vec<RecordingPrediction>), TrainError> {
    if cycles.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let inputs: Vec<&[f64]> = cycles.iter().map(CardiacCycle::samples).collect();
    let posteriors = model.predict(&inputs, batch_size)?;
    let mut groups: BTreeMap<&str, (Label, usize, Vec<Posterior>)> = BTreeMap::new();
    for (c, p) in cycles.iter().zip(posteriors) {
        let e = groups
            .entry(c.recording_id.as_str())
            .or_insert_with(|| (c.label, c.domain_id, Vec::new()));
        if e.0 != c.label || e.1 != c.domain_id {
            return Err(TrainError::InconsistentRecording(c.recording_id.clone()));
        }
        e.2.push(p);
    }
    let mut items = Vec::with_capacity(groups.len());
    let mut details = Vec::with_capacity(groups.len());
    for (id, (truth, domain, ps)) in groups {
        let (fused, pred) = fuse_recording(&ps)?;
        items.push((truth, pred, domain));
        details.push((String::from(id), truth, fused, pred, domain));
    }
    Ok((
        EvalReport::from_predictions(&items, expected_domains),
        details,
    ))
}
