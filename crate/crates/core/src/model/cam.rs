use alloc::vec;
use alloc::vec::Vec;

use super::{BranchedCnn, ModelError};
use crate::autodiff::Tensor;
use crate::signal::{blackman_window, center_offset, conv_same_into};

/// Length of the Blackman window used to smooth class activation maps.
pub const GRAD_CAM_SMOOTHING_LEN: usize = 51;

/// Class activation map over the input samples, scaled to `[0, 1]`.
///
/// Channels of the concatenated branch activations are weighted by the mean
/// gradient of the target-class logit, summed and rectified, then upsampled
/// by repetition to the input length and smoothed with a normalized Blackman
/// window. A constant map (for example when every gradient vanishes) is
/// returned as all zeros.
pub fn grad_cam(
    model: &BranchedCnn,
    cycle: &[f64],
    target_class: usize,
) -> Result<Vec<f64>, ModelError> {
    let cfg = model.config();
    if target_class >= cfg.classes {
        return Err(ModelError::InvalidClass(target_class));
    }
    if cycle.len() != cfg.input_len {
        return Err(ModelError::InputLength {
            expected: cfg.input_len,
            got: cycle.len(),
        });
    }
    if !model.is_finite() {
        return Err(ModelError::NonFinite);
    }
    let x = Tensor::new(vec![1, 1, cfg.input_len], cycle.to_vec())?;
    let mut pass = model.forward_eval(&x)?;
    let g = &mut pass.graph;
    let mut onehot = vec![0.0; cfg.classes];
    onehot[target_class] = 1.0;
    let sel = g.leaf(vec![1, cfg.classes], onehot, false)?;
    let picked = g.mul(pass.logits, sel)?;
    let score = g.sum(picked);
    let grads = g.backward(score)?;

    let channels = cfg.concat_channels();
    let len = cfg.pooled_len();
    let acts = g.value(pass.concat);
    let zeros = vec![0.0; acts.len()];
    let dact = grads.get(pass.concat).unwrap_or(&zeros);

    let mut cam = vec![0.0; len];
    for c in 0..channels {
        let row = &dact[c * len..(c + 1) * len];
        let weight = row.iter().sum::<f64>() / len as f64;
        for (m, a) in cam.iter_mut().zip(&acts[c * len..(c + 1) * len]) {
            *m += weight * a;
        }
    }
    for m in &mut cam {
        *m = m.max(0.0);
    }

    let factor = cfg.input_len / len;
    let up: Vec<f64> = (0..cfg.input_len)
        .map(|i| cam[(i / factor).min(len - 1)])
        .collect();

    let mut window = blackman_window(GRAD_CAM_SMOOTHING_LEN).expect("non-empty window");
    let total: f64 = window.iter().sum();
    window.iter_mut().for_each(|w| *w /= total);
    let mut smooth = vec![0.0; up.len()];
    conv_same_into(&up, &window, center_offset(window.len()), &mut smooth);

    let lo = smooth.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = smooth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-300) {
        return Ok(vec![0.0; smooth.len()]);
    }
    Ok(smooth
        .iter()
        .map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect())
}
