use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    effective_batch_size, evaluate_detailed, iterations_per_epoch, DomainQueueSet, EvalReport,
    TrainError, UniformSampler,
};
use crate::autodiff::{AdamConfig, AdamState, Tensor};
use crate::data::CardiacCycle;
use crate::frontend::frontend_backward;
use crate::model::{BranchedCnn, Label};

/// How many mini-batches make up one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum IterationRule {
    /// Training cycles of this domain divided by the batch size.
    ReferenceDomain(usize),
    /// All training cycles divided by the batch size.
    FullPass,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub iterations: IterationRule,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 300,
            adam: AdamConfig::default(),
            seed: 0,
            iterations: IterationRule::ReferenceDomain(0),
            eval_batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's iterations.
    pub train_loss: f64,
    pub validation: Option<EvalReport>,
}

#[derive(Debug, Clone, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainTrace {
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The best-validation-Macc model when validation data was given,
    /// otherwise the model after the final epoch.
    pub model: BranchedCnn,
    pub trace: TrainTrace,
    /// 1-based epoch the returned model comes from.
    pub selected_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
}

fn batch_tensor(
    cycles: &[&CardiacCycle],
    input_len: usize,
) -> Result<(Tensor, Vec<f64>), TrainError> {
    let mut data = Vec::with_capacity(cycles.len() * input_len);
    let mut targets = Vec::with_capacity(cycles.len() * 2);
    for c in cycles {
        data.extend(crate::model::fit_length(c.samples(), input_len));
        let mut t = [0.0; 2];
        t[c.label.index()] = 1.0;
        targets.extend(t);
    }
    Ok((
        Tensor::new(vec![cycles.len(), 1, input_len], data)?,
        targets,
    ))
}

/// One Adam update on a mini-batch. Returns the batch loss and the global
/// gradient norm; non-finite values leave the model untouched.
pub fn train_step<R: Rng>(
    model: &mut BranchedCnn,
    adam: &mut AdamState,
    batch: &[&CardiacCycle],
    rng: &mut R,
    iteration: usize,
) -> Result<StepStats, TrainError> {
    let (x, targets) = batch_tensor(batch, model.config().input_len)?;
    let mut pass = model.forward_train(&x, rng)?;
    let loss_var = pass.graph.cross_entropy(pass.probs, &targets)?;
    let loss = pass.graph.value(loss_var)[0];
    let grads = pass.graph.backward(loss_var)?;

    let upstream = Tensor::new(
        pass.graph.shape(pass.frontend_out).to_vec(),
        grads
            .get(pass.frontend_out)
            .expect("front-end output requires grad")
            .to_vec(),
    )?;
    let front = frontend_backward(&upstream, &pass.frontend_cache, model.frontend(), false)?;
    let mut all_grads: Vec<&[f64]> = pass
        .param_vars
        .iter()
        .map(|&v| grads.get(v).expect("parameters require grad"))
        .collect();
    all_grads.extend(front.params.iter().map(Vec::as_slice));

    let grad_norm = all_grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if !loss.is_finite() || !grad_norm.is_finite() {
        return Err(TrainError::NonFinite {
            iteration,
            lr: adam.config.lr,
            grad_norm,
        });
    }
    adam.step(&mut model.all_params_mut(), &all_grads)?;
    model.frontend_mut().resync()?;
    Ok(StepStats { loss, grad_norm })
}

/// [`train_observed`] without an observer.
pub fn train(
    dataset: &[CardiacCycle],
    validation: Option<&[CardiacCycle]>,
    model: BranchedCnn,
    config: &TrainConfig,
    dbt: bool,
) -> Result<TrainOutcome, TrainError> {
    train_observed(dataset, validation, model, config, dbt, |_, _, _| {})
}

enum Sampler {
    Balanced(DomainQueueSet),
    Uniform(UniformSampler),
}

/// Trains with cross-entropy and Adam. With `dbt`, every batch draws equally
/// from one queue per (domain, class); otherwise batches are drawn uniformly
/// with replacement. `observer` sees the model after every epoch.
pub fn train_observed<F>(
    dataset: &[CardiacCycle],
    validation: Option<&[CardiacCycle]>,
    mut model: BranchedCnn,
    config: &TrainConfig,
    dbt: bool,
    mut observer: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(usize, &BranchedCnn, &EpochRecord),
{
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if config.epochs == 0 {
        return Err(TrainError::InvalidConfig("epochs must be at least 1"));
    }
    let mut sampler_rng = ChaCha8Rng::seed_from_u64(config.seed);
    sampler_rng.set_stream(1);
    let sampler_seed = sampler_rng.random();
    let (mut sampler, batch) = if dbt {
        let keys: Vec<(usize, Label)> = dataset.iter().map(|c| (c.domain_id, c.label)).collect();
        let qs = DomainQueueSet::new(&keys, sampler_seed)?;
        let b_eff = effective_batch_size(config.batch_size, qs.n_queues())?;
        (Sampler::Balanced(qs), b_eff)
    } else {
        if config.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be at least 1"));
        }
        (
            Sampler::Uniform(UniformSampler::new(dataset.len(), sampler_seed)?),
            config.batch_size,
        )
    };
    let iters = match config.iterations {
        IterationRule::ReferenceDomain(d) => {
            let n = dataset.iter().filter(|c| c.domain_id == d).count();
            if n == 0 {
                return Err(TrainError::ReferenceDomain(d));
            }
            iterations_per_epoch(n, batch)
        }
        IterationRule::FullPass => iterations_per_epoch(dataset.len(), batch),
        IterationRule::Fixed(n) => n.max(1),
    };

    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);
    let mut adam = AdamState::new(config.adam, &model.all_param_sizes());
    let expected_domains: Vec<usize> = {
        let mut d: Vec<usize> = dataset.iter().map(|c| c.domain_id).collect();
        d.sort_unstable();
        d.dedup();
        d
    };

    let mut trace = TrainTrace::default();
    let mut best: Option<(f64, usize, BranchedCnn)> = None;
    let mut iteration = 0;
    for epoch in 1..=config.epochs {
        let mut total = 0.0;
        for _ in 0..iters {
            let idx = match &mut sampler {
                Sampler::Balanced(qs) => qs.next_batch(config.batch_size)?,
                Sampler::Uniform(u) => u.next_batch(batch),
            };
            let cycles: Vec<&CardiacCycle> = idx.iter().map(|&i| &dataset[i]).collect();
            iteration += 1;
            let stats = train_step(&mut model, &mut adam, &cycles, &mut dropout_rng, iteration)?;
            total += stats.loss;
            trace.iterations.push(IterationRecord {
                epoch,
                iteration,
                loss: stats.loss,
                grad_norm: stats.grad_norm,
            });
        }
        let validation_report = match validation {
            Some(v) => {
                Some(evaluate_detailed(&model, v, config.eval_batch_size, &expected_domains)?.0)
            }
            None => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss: total / iters as f64,
            validation: validation_report,
        };
        log::info!("epoch {epoch}: train loss {:.4}", record.train_loss);
        if let Some(r) = &record.validation {
            if best.as_ref().is_none_or(|(m, _, _)| r.macc > *m) {
                best = Some((r.macc, epoch, model.clone()));
            }
        }
        observer(epoch, &model, &record);
        trace.epochs.push(record);
    }
    let (model, selected_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => (model, config.epochs),
    };
    Ok(TrainOutcome {
        model,
        trace,
        selected_epoch,
    })
}
