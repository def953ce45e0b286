use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::model::Label;

/// Largest multiple of `n_queues` not exceeding `batch_size`.
pub fn effective_batch_size(batch_size: usize, n_queues: usize) -> Result<usize, TrainError> {
    if batch_size == 0 || n_queues == 0 {
        return Err(TrainError::BatchTooSmall {
            batch_size,
            n_queues,
        });
    }
    let b_eff = n_queues * (batch_size / n_queues);
    if b_eff == 0 {
        return Err(TrainError::BatchTooSmall {
            batch_size,
            n_queues,
        });
    }
    Ok(b_eff)
}

/// `reference_count / b_eff`, at least 1.
pub fn iterations_per_epoch(reference_count: usize, b_eff: usize) -> usize {
    (reference_count / b_eff.max(1)).max(1)
}

#[derive(Debug, Clone)]
struct Queue {
    indices: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Queue {
    fn draw(&mut self) -> usize {
        if self.cursor == self.indices.len() {
            self.indices.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let i = self.indices[self.cursor];
        self.cursor += 1;
        i
    }
}

/// One shuffled queue per (domain, class) pair. Each queue reshuffles on its
/// own the moment it runs out, independently of every other queue.
#[derive(Debug, Clone)]
pub struct DomainQueueSet {
    queues: BTreeMap<(usize, Label), Queue>,
}

impl DomainQueueSet {
    /// Every (domain, class) pair that is absent although its domain occurs.
    pub fn missing_pairs(keys: &[(usize, Label)]) -> Vec<(usize, Label)> {
        let present: alloc::collections::BTreeSet<(usize, Label)> = keys.iter().copied().collect();
        let domains: alloc::collections::BTreeSet<usize> = keys.iter().map(|&(d, _)| d).collect();
        domains
            .into_iter()
            .flat_map(|d| Label::ALL.map(|l| (d, l)))
            .filter(|k| !present.contains(k))
            .collect()
    }

    /// `keys[i]` is the (domain, label) of sample `i`. Every observed domain
    /// must contain both classes.
    pub fn new(keys: &[(usize, Label)], seed: u64) -> Result<Self, TrainError> {
        if keys.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let mut groups: BTreeMap<(usize, Label), Vec<usize>> = BTreeMap::new();
        for (i, &key) in keys.iter().enumerate() {
            groups.entry(key).or_default().push(i);
        }
        let domains: Vec<usize> = groups.keys().map(|&(d, _)| d).collect();
        for &d in &domains {
            for label in Label::ALL {
                if !groups.contains_key(&(d, label)) {
                    return Err(TrainError::EmptyQueue { domain: d, label });
                }
            }
        }
        let queues = groups
            .into_iter()
            .enumerate()
            .map(|(q, (key, mut indices))| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(q as u64);
                indices.shuffle(&mut rng);
                (
                    key,
                    Queue {
                        indices,
                        cursor: 0,
                        rng,
                    },
                )
            })
            .collect();
        Ok(Self { queues })
    }

    pub fn n_queues(&self) -> usize {
        self.queues.len()
    }

    pub fn keys(&self) -> impl Iterator<Item = (usize, Label)> + '_ {
        self.queues.keys().copied()
    }

    /// `B_eff / n_queues` indices from each queue, queue by queue.
    pub fn next_batch(&mut self, batch_size: usize) -> Result<Vec<usize>, TrainError> {
        let b_eff = effective_batch_size(batch_size, self.queues.len())?;
        let per = b_eff / self.queues.len();
        let mut out = Vec::with_capacity(b_eff);
        for q in self.queues.values_mut() {
            for _ in 0..per {
                out.push(q.draw());
            }
        }
        Ok(out)
    }
}

/// Uniform sampling with replacement over all samples.
#[derive(Debug, Clone)]
pub struct UniformSampler {
    n: usize,
    rng: ChaCha8Rng,
}

impl UniformSampler {
    pub fn new(n: usize, seed: u64) -> Result<Self, TrainError> {
        if n == 0 {
            return Err(TrainError::EmptyDataset);
        }
        Ok(Self {
            n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        (0..batch_size)
            .map(|_| self.rng.random_range(0..self.n))
            .collect()
    }
}
