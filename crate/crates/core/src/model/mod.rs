//! Branched CNN classifier: a learnable filterbank feeding four identical
//! convolutional branches, concatenated into a two-layer dense head.

mod cam;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use cam::{grad_cam, GRAD_CAM_SMOOTHING_LEN};

use crate::autodiff::{AutodiffError, Graph, Mode, RunningStats, Tensor, Var};
use crate::frontend::{
    frontend_forward, init_filterbank, Filterbank, FrontendCache, FrontendError, FrontendKernel,
    FrontendKind, BRANCHES,
};

/// Checkpoint layout version written by [`BranchedCnn::state`].
pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("input must have {expected} samples, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot fuse an empty recording")]
    EmptyRecording,
    #[error("class index {0} out of range")]
    InvalidClass(usize),
    #[error("checkpoint was written for a different model configuration")]
    ConfigMismatch,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint buffer {name} has {got} values, expected {expected}")]
    BufferSize {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("checkpoint is missing buffer {0}")]
    MissingBuffer(String),
    #[error("model parameters are not finite")]
    NonFinite,
    #[error("posterior ({0}, {1}) is not a probability distribution")]
    InvalidPosterior(f64, f64),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
}

/// Binary class label; the class index matches the softmax output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Normal, Label::Abnormal];

    pub fn index(self) -> usize {
        match self {
            Label::Normal => 0,
            Label::Abnormal => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Normal),
            1 => Some(Label::Abnormal),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BranchedCnnConfig {
    pub frontend_kind: FrontendKind,
    pub frontend_len: usize,
    pub branch_conv_kernel: usize,
    pub branch_channels: [usize; 2],
    pub dropout_p: f64,
    pub hidden_units: usize,
    pub classes: usize,
    pub input_len: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for BranchedCnnConfig {
    fn default() -> Self {
        Self::with_frontend(FrontendKind::TypeI, FrontendKind::TypeI.default_len())
    }
}

impl BranchedCnnConfig {
    pub fn with_frontend(kind: FrontendKind, len: usize) -> Self {
        Self {
            frontend_kind: kind,
            frontend_len: len,
            branch_conv_kernel: 5,
            branch_channels: [8, 4],
            dropout_p: 0.5,
            hidden_units: 20,
            classes: 2,
            input_len: 2500,
            bn_momentum: RunningStats::DEFAULT_MOMENTUM,
            bn_eps: RunningStats::DEFAULT_EPS,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.frontend_kind.check_len(self.frontend_len)?;
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.into()));
        if self.branch_conv_kernel == 0
            || self.branch_channels.contains(&0)
            || self.hidden_units == 0
        {
            return bad("layer sizes must be positive");
        }
        if self.classes != 2 {
            return bad("the classifier is binary");
        }
        if self.input_len < 4 {
            return bad("input must have at least 4 samples");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout probability must be in [0, 1)");
        }
        if !(self.bn_momentum >= 0.0 && self.bn_momentum < 1.0) || !(self.bn_eps >= 0.0) {
            return bad("batchnorm momentum must be in [0, 1) and eps non-negative");
        }
        Ok(())
    }

    /// Length of each branch output after two width-2 poolings.
    pub fn pooled_len(&self) -> usize {
        self.input_len / 2 / 2
    }

    /// Channels of the concatenated branch outputs.
    pub fn concat_channels(&self) -> usize {
        BRANCHES * self.branch_channels[1]
    }

    pub fn flatten_len(&self) -> usize {
        self.concat_channels() * self.pooled_len()
    }

    /// Shapes of all non-frontend parameters, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let [c1, c2] = self.branch_channels;
        let k = self.branch_conv_kernel;
        let mut out = Vec::new();
        for b in 0..BRANCHES {
            out.push((format!("branch{b}.conv1.weight"), vec![c1, 1, k]));
            out.push((format!("branch{b}.bn1.gamma"), vec![c1]));
            out.push((format!("branch{b}.bn1.beta"), vec![c1]));
            out.push((format!("branch{b}.conv2.weight"), vec![c2, c1, k]));
            out.push((format!("branch{b}.bn2.gamma"), vec![c2]));
            out.push((format!("branch{b}.bn2.beta"), vec![c2]));
        }
        out.push((
            "dense1.weight".into(),
            vec![self.hidden_units, self.flatten_len()],
        ));
        out.push(("dense1.bias".into(), vec![self.hidden_units]));
        out.push((
            "dense2.weight".into(),
            vec![self.classes, self.hidden_units],
        ));
        out.push(("dense2.bias".into(), vec![self.classes]));
        out
    }

    /// Number of trainable scalars, front-end included.
    pub fn param_count(&self) -> usize {
        let head: usize = self
            .param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        let frontend = BRANCHES * self.frontend_kind.param_count(self.frontend_len);
        head + frontend
    }
}

const PER_BRANCH: usize = 6;
const DENSE1_W: usize = BRANCHES * PER_BRANCH;

/// Softmax output over (normal, abnormal).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Posterior {
    pub p_normal: f64,
    pub p_abnormal: f64,
}

impl Posterior {
    pub fn new(p_normal: f64, p_abnormal: f64) -> Result<Self, ModelError> {
        let ok = (0.0..=1.0).contains(&p_normal)
            && (0.0..=1.0).contains(&p_abnormal)
            && (p_normal + p_abnormal - 1.0).abs() <= 1e-9;
        if !ok {
            return Err(ModelError::InvalidPosterior(p_normal, p_abnormal));
        }
        Ok(Self {
            p_normal,
            p_abnormal,
        })
    }

    /// Abnormal iff `p_abnormal >= 0.5`.
    pub fn label(&self) -> Label {
        self.label_at(0.5)
    }

    pub fn label_at(&self, threshold: f64) -> Label {
        if self.p_abnormal >= threshold {
            Label::Abnormal
        } else {
            Label::Normal
        }
    }

    pub fn prob(&self, label: Label) -> f64 {
        match label {
            Label::Normal => self.p_normal,
            Label::Abnormal => self.p_abnormal,
        }
    }
}

/// Averages per-cycle posteriors of one recording; ties go to abnormal.
pub fn fuse_recording(posteriors: &[Posterior]) -> Result<(Posterior, Label), ModelError> {
    fuse_recording_at(posteriors, 0.5)
}

pub fn fuse_recording_at(
    posteriors: &[Posterior],
    threshold: f64,
) -> Result<(Posterior, Label), ModelError> {
    if posteriors.is_empty() {
        return Err(ModelError::EmptyRecording);
    }
    let n = posteriors.len() as f64;
    let p_abnormal = posteriors.iter().map(|p| p.p_abnormal).sum::<f64>() / n;
    let fused = Posterior {
        p_normal: 1.0 - p_abnormal,
        p_abnormal,
    };
    Ok((fused, fused.label_at(threshold)))
}

/// Zero-pads or truncates `samples` to `len`.
pub fn fit_length(samples: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let n = samples.len().min(len);
    out[..n].copy_from_slice(&samples[..n]);
    out
}

/// Graph nodes of interest from one forward pass.
#[derive(Debug)]
pub struct ForwardPass {
    pub graph: Graph,
    pub frontend_cache: FrontendCache,
    /// Front-end output `[B, 4, N]`, recorded as a differentiable leaf.
    pub frontend_out: Var,
    /// Concatenated branch activations `[B, 16, N/4]`.
    pub concat: Var,
    pub logits: Var,
    pub probs: Var,
    /// One node per non-frontend parameter, in [`BranchedCnnConfig::param_shapes`] order.
    pub param_vars: Vec<Var>,
}

impl ForwardPass {
    pub fn posteriors(&self) -> Vec<Posterior> {
        self.graph
            .value(self.probs)
            .chunks(2)
            .map(|p| Posterior {
                p_normal: p[0],
                p_abnormal: p[1],
            })
            .collect()
    }
}

/// Serializable snapshot of every parameter and running statistic.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelState {
    pub version: u32,
    pub config: BranchedCnnConfig,
    pub buffers: BTreeMap<String, Vec<f64>>,
    pub running_stats: Vec<RunningStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchedCnn {
    config: BranchedCnnConfig,
    frontend: Filterbank,
    params: Vec<Vec<f64>>,
    /// `[branch * 2 + layer]`
    running: Vec<RunningStats>,
}

fn uniform<R: Rng>(rng: &mut R, n: usize, limit: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

impl BranchedCnn {
    /// Builds a model with a freshly initialized front-end and weights drawn
    /// from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); batchnorm starts at identity
    /// and biases at zero.
    pub fn new(config: BranchedCnnConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let frontend = init_filterbank(config.frontend_kind, config.frontend_len, seed)?;
        Self::with_frontend(config, frontend, seed)
    }

    pub fn with_frontend(
        config: BranchedCnnConfig,
        frontend: Filterbank,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if frontend.kind() != config.frontend_kind || frontend.kernel_len() != config.frontend_len {
            return Err(ModelError::ConfigMismatch);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f_6465_6c5f_696e);
        let params = config
            .param_shapes()
            .iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                if name.ends_with(".gamma") {
                    vec![1.0; n]
                } else if name.ends_with(".beta") || name.ends_with(".bias") {
                    vec![0.0; n]
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let limit = 1.0 / (fan_in as f64).sqrt();
                    uniform(&mut rng, n, limit)
                }
            })
            .collect();
        let running = (0..BRANCHES)
            .flat_map(|_| config.branch_channels)
            .map(|c| RunningStats {
                momentum: config.bn_momentum,
                eps: config.bn_eps,
                ..RunningStats::new(c)
            })
            .collect();
        Ok(Self {
            config,
            frontend,
            params,
            running,
        })
    }

    pub fn config(&self) -> &BranchedCnnConfig {
        &self.config
    }

    pub fn frontend(&self) -> &Filterbank {
        &self.frontend
    }

    pub fn frontend_mut(&mut self) -> &mut Filterbank {
        &mut self.frontend
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum::<usize>() + self.frontend.param_count()
    }

    /// Non-frontend parameter buffers in storage order.
    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.params.iter_mut().map(Vec::as_mut_slice).collect()
    }

    /// Every trainable buffer: the head parameters followed by the four
    /// front-end kernels. Call [`Filterbank::resync`] on the front-end after
    /// writing through these.
    pub fn all_params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.params.iter_mut().map(Vec::as_mut_slice).collect();
        out.extend(self.frontend.params_mut());
        out
    }

    pub fn all_param_sizes(&self) -> Vec<usize> {
        self.params
            .iter()
            .map(Vec::len)
            .chain(self.frontend.kernels().iter().map(|k| k.params().len()))
            .collect()
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(|v| v.is_finite())
            && self
                .frontend
                .kernels()
                .iter()
                .all(|k| k.params().iter().all(|v| v.is_finite()))
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        let shapes = self.config.param_shapes();
        let idx = shapes.iter().position(|(n, _)| n == name)?;
        Some(&mut self.params[idx])
    }

    /// Records a forward pass over `x` (`[B, 1, input_len]`). Train mode
    /// updates batchnorm running statistics and draws dropout masks from
    /// `rng`.
    pub fn forward_train<R: Rng>(
        &mut self,
        x: &Tensor,
        rng: &mut R,
    ) -> Result<ForwardPass, ModelError> {
        let mut running = core::mem::take(&mut self.running);
        let out = self.record(x, Mode::Train, rng, &mut running);
        self.running = running;
        out
    }

    /// Eval-mode forward pass; leaves the model untouched.
    pub fn forward_eval(&self, x: &Tensor) -> Result<ForwardPass, ModelError> {
        let mut running = self.running.clone();
        // Dropout is inactive in eval mode, so the generator is never drawn.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.record(x, Mode::Eval, &mut rng, &mut running)
    }

    fn check_input(&self, x: &Tensor) -> Result<usize, ModelError> {
        let l = self.config.input_len;
        match *x.shape() {
            [b, 1, n] if n == l => Ok(b),
            [1, n] if n == l => Ok(1),
            [.., n] => Err(ModelError::InputLength {
                expected: l,
                got: n,
            }),
            [] => Err(ModelError::InputLength {
                expected: l,
                got: 0,
            }),
        }
    }

    fn record<R: Rng>(
        &self,
        x: &Tensor,
        mode: Mode,
        rng: &mut R,
        running: &mut [RunningStats],
    ) -> Result<ForwardPass, ModelError> {
        let batch = self.check_input(x)?;
        let x = if x.shape().len() == 2 {
            x.clone().reshape(vec![1, 1, self.config.input_len])?
        } else {
            x.clone()
        };
        let (front, frontend_cache) = frontend_forward(&x, &self.frontend)?;
        let mut g = Graph::new();
        let frontend_out = g.input(&front.requires_grad());
        let param_vars: Vec<Var> = self
            .config
            .param_shapes()
            .into_iter()
            .zip(&self.params)
            .map(|((_, shape), data)| g.leaf(shape, data.clone(), true))
            .collect::<Result<_, _>>()?;

        let p = self.config.dropout_p;
        let mut outs = Vec::with_capacity(BRANCHES);
        for b in 0..BRANCHES {
            let v = &param_vars[b * PER_BRANCH..(b + 1) * PER_BRANCH];
            let mut h = g.slice_channel(frontend_out, b)?;
            for layer in 0..2 {
                let (w, gamma, beta) = (v[3 * layer], v[3 * layer + 1], v[3 * layer + 2]);
                h = g.conv1d(h, w)?;
                h = g.batchnorm(h, gamma, beta, &mut running[2 * b + layer], mode)?;
                h = g.relu(h);
                h = g.dropout(h, p, mode, rng)?;
                h = g.maxpool2(h)?;
            }
            outs.push(h);
        }
        let concat = g.concat_channels(&outs)?;
        let flat = g.reshape(concat, vec![batch, self.config.flatten_len()])?;
        let hidden = g.dense(flat, param_vars[DENSE1_W], param_vars[DENSE1_W + 1])?;
        let hidden = g.relu(hidden);
        let logits = g.dense(hidden, param_vars[DENSE1_W + 2], param_vars[DENSE1_W + 3])?;
        let probs = g.softmax(logits)?;
        Ok(ForwardPass {
            graph: g,
            frontend_cache,
            frontend_out,
            concat,
            logits,
            probs,
            param_vars,
        })
    }

    /// Eval-mode posterior for one cycle of exactly `input_len` samples.
    pub fn forward(&self, cycle: &Tensor) -> Result<Posterior, ModelError> {
        let pass = self.forward_eval(cycle)?;
        Ok(pass.posteriors()[0])
    }

    /// Eval-mode posteriors for many cycles, padded or truncated to
    /// `input_len`, evaluated `batch_size` at a time.
    pub fn predict(
        &self,
        cycles: &[&[f64]],
        batch_size: usize,
    ) -> Result<Vec<Posterior>, ModelError> {
        let l = self.config.input_len;
        let mut out = Vec::with_capacity(cycles.len());
        for chunk in cycles.chunks(batch_size.max(1)) {
            let data: Vec<f64> = chunk.iter().flat_map(|c| fit_length(c, l)).collect();
            let x = Tensor::new(vec![chunk.len(), 1, l], data)?;
            out.extend(self.forward_eval(&x)?.posteriors());
        }
        Ok(out)
    }

    pub fn state(&self) -> ModelState {
        let mut buffers: BTreeMap<String, Vec<f64>> = self
            .config
            .param_shapes()
            .into_iter()
            .map(|(n, _)| n)
            .zip(self.params.iter().cloned())
            .collect();
        for (b, k) in self.frontend.kernels().iter().enumerate() {
            buffers.insert(format!("frontend{b}.params"), k.params().to_vec());
        }
        ModelState {
            version: STATE_VERSION,
            config: self.config.clone(),
            buffers,
            running_stats: self.running.clone(),
        }
    }

    /// Rebuilds a model from a checkpoint.
    pub fn from_state(state: &ModelState) -> Result<Self, ModelError> {
        if state.version != STATE_VERSION {
            return Err(ModelError::UnsupportedVersion(state.version));
        }
        let config = state.config.clone();
        config.validate()?;
        let take = |name: &str, expected: usize| -> Result<Vec<f64>, ModelError> {
            let buf = state
                .buffers
                .get(name)
                .ok_or_else(|| ModelError::MissingBuffer(name.into()))?;
            if buf.len() != expected {
                return Err(ModelError::BufferSize {
                    name: name.into(),
                    expected,
                    got: buf.len(),
                });
            }
            Ok(buf.clone())
        };
        let params = config
            .param_shapes()
            .iter()
            .map(|(name, shape)| take(name, shape.iter().product()))
            .collect::<Result<Vec<_>, _>>()?;
        let per_kernel = config.frontend_kind.param_count(config.frontend_len);
        let kernels = (0..BRANCHES)
            .map(|b| {
                let p = take(&format!("frontend{b}.params"), per_kernel)?;
                Ok(FrontendKernel::new(
                    config.frontend_kind,
                    config.frontend_len,
                    p,
                )?)
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let expected_stats: Vec<usize> =
            (0..BRANCHES).flat_map(|_| config.branch_channels).collect();
        let stats_ok = state.running_stats.len() == expected_stats.len()
            && state
                .running_stats
                .iter()
                .zip(&expected_stats)
                .all(|(s, &c)| s.mean.len() == c && s.var.len() == c);
        if !stats_ok {
            return Err(ModelError::BufferSize {
                name: "running_stats".into(),
                expected: expected_stats.iter().sum(),
                got: state.running_stats.iter().map(|s| s.mean.len()).sum(),
            });
        }
        Ok(Self {
            frontend: Filterbank::new(kernels)?,
            config,
            params,
            running: state.running_stats.clone(),
        })
    }

    /// Loads a checkpoint into this model; the checkpoint's configuration must
    /// match exactly.
    pub fn load_state(&mut self, state: &ModelState) -> Result<(), ModelError> {
        if state.config != self.config {
            return Err(ModelError::ConfigMismatch);
        }
        *self = Self::from_state(state)?;
        Ok(())
    }
}
