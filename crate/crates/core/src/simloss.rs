//! PSNR similarity, the range-targeting augmentation loss and task losses.

use alloc::vec::Vec;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::ndgrad::{log_sum_exp, Graph, NodeId};

/// Added to the MSE inside PSNR; identical images score 100 dB.
pub const PSNR_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    /// Smooth-L1 transition point in dB.
    pub beta: f64,
    pub kd_alpha: f64,
    pub kd_temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 0.0015, beta: 1.0, kd_alpha: 0.5, kd_temperature: 4.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(alloc::format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(alloc::format!("beta must be > 0, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.kd_alpha) {
            return Err(Error::Config(alloc::format!("kd alpha must be in [0, 1], got {}", self.kd_alpha)));
        }
        if !(self.kd_temperature > 0.0) {
            return Err(Error::Config(alloc::format!("kd temperature must be > 0, got {}", self.kd_temperature)));
        }
        Ok(())
    }
}

/// `10 log10(1 / (MSE(x, y) + eps))` for pixels in `[0, 1]`.
pub fn psnr(g: &mut Graph, x: NodeId, y: NodeId) -> Result<NodeId> {
    if g.value(x).shape() != g.value(y).shape() {
        return Err(Error::ShapeMismatch {
            primitive: "psnr",
            lhs: g.value(x).shape().to_vec(),
            rhs: g.value(y).shape().to_vec(),
        });
    }
    let diff = g.sub(y, x)?;
    let sq = g.square(diff);
    let mse = g.mean(sq);
    let shifted = g.add_scalar(mse, PSNR_EPS);
    let log = g.log10(shifted);
    Ok(g.mul_scalar(log, -10.0))
}

/// Plain-value PSNR with the same epsilon.
pub fn psnr_value(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mse = x.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum::<f64>() / x.len() as f64;
    -10.0 * libm::log10(mse + PSNR_EPS)
}

/// Huber-style smooth L1: `0.5 d^2 / beta` inside `|d| < beta`, `|d| - beta/2` outside.
pub fn smooth_l1(g: &mut Graph, diff: NodeId, beta: f64) -> NodeId {
    let abs = g.abs(diff);
    let inner = g.min_scalar(abs, beta);
    let inner_sq = g.square(inner);
    let quadratic = g.mul_scalar(inner_sq, 0.5 / beta);
    let linear = g.sub(abs, inner).expect("same shape");
    g.add(quadratic, linear).expect("same shape")
}

pub fn smooth_l1_value(diff: f64, beta: f64) -> f64 {
    let d = diff.abs();
    if d < beta {
        0.5 * d * d / beta
    } else {
        d - 0.5 * beta
    }
}

/// Result of [`augmentation_loss`].
#[derive(Clone, Debug)]
pub struct AugLoss {
    pub loss: NodeId,
    /// Per-image PSNR nodes.
    pub psnr: Vec<NodeId>,
}

/// Batch mean of `smooth_l1(psnr(x_i, aug_i) - delta)`.
///
/// References should be constants; gradients flow through `augmented`.
pub fn augmentation_loss(
    g: &mut Graph,
    references: &[NodeId],
    augmented: &[NodeId],
    delta: f64,
    beta: f64,
) -> Result<AugLoss> {
    if references.len() != augmented.len() || references.is_empty() {
        return Err(Error::ShapeMismatch {
            primitive: "augmentation_loss",
            lhs: alloc::vec![references.len()],
            rhs: alloc::vec![augmented.len()],
        });
    }
    let mut psnrs = Vec::with_capacity(references.len());
    let mut terms = Vec::with_capacity(references.len());
    for (&x, &y) in references.iter().zip(augmented) {
        let p = psnr(g, x, y)?;
        let gap = g.add_scalar(p, -delta);
        terms.push(smooth_l1(g, gap, beta));
        psnrs.push(p);
    }
    let stacked = g.stack(&terms)?;
    Ok(AugLoss { loss: g.mean(stacked), psnr: psnrs })
}

/// Mean cross-entropy of `[n, k]` logits against `labels`.
pub fn cross_entropy(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
    g.softmax_cross_entropy(logits, labels)
}

/// Row-wise softmax of `logits / temperature`, plain values.
pub fn softened_probs(logits: &Array, temperature: f64) -> Vec<f64> {
    let k = *logits.shape().last().unwrap();
    let inv_t = 1.0 / temperature;
    let mut out: Vec<f64> = logits.data().iter().map(|v| v * inv_t).collect();
    for row in out.chunks_exact_mut(k) {
        let lse = log_sum_exp(row);
        row.iter_mut().for_each(|v| *v = libm::exp(*v - lse));
    }
    out
}

/// `alpha * T^2 * KL(p_teacher || p_student) + (1 - alpha) * CE(student, labels)`,
/// with both distributions softened by `T` and KL averaged over rows.
pub fn kd_loss(
    g: &mut Graph,
    student_logits: NodeId,
    teacher_logits: &Array,
    temperature: f64,
    alpha: f64,
    labels: &[usize],
) -> Result<NodeId> {
    let student_shape = g.value(student_logits).shape().to_vec();
    if student_shape != teacher_logits.shape() {
        return Err(Error::ShapeMismatch {
            primitive: "kd_loss",
            lhs: student_shape,
            rhs: teacher_logits.shape().to_vec(),
        });
    }
    if alpha == 0.0 {
        return cross_entropy(g, student_logits, labels);
    }
    let k = *student_shape.last().unwrap();
    let rows = teacher_logits.len() / k;
    let inv_t = 1.0 / temperature;

    // teacher side in plain values, computed the same way as the graph path
    let scaled: Vec<f64> = teacher_logits.data().iter().map(|v| v * inv_t).collect();
    let mut log_pt = scaled.clone();
    for row in log_pt.chunks_exact_mut(k) {
        let lse = log_sum_exp(row);
        row.iter_mut().for_each(|v| *v -= lse);
    }
    let pt: Vec<f64> = log_pt.iter().map(|&v| libm::exp(v)).collect();
    let neg_entropy: f64 = pt.iter().zip(&log_pt).map(|(p, l)| p * l).sum();

    let soft = g.mul_scalar(student_logits, inv_t);
    let log_ps = g.log_softmax(soft);
    let pt_node = g.constant(Array::new(student_shape, pt)?);
    let weighted = g.mul(pt_node, log_ps)?;
    let cross = g.sum(weighted);
    let neg_cross = g.mul_scalar(cross, -1.0 / rows as f64);
    let kl = g.add_scalar(neg_cross, neg_entropy / rows as f64);
    let kd = g.mul_scalar(kl, alpha * temperature * temperature);
    if alpha == 1.0 {
        return Ok(kd);
    }
    let ce = cross_entropy(g, student_logits, labels)?;
    let ce = g.mul_scalar(ce, 1.0 - alpha);
    g.add(kd, ce)
}

/// `task + lambda * aug`.
pub fn total_loss(g: &mut Graph, task: NodeId, aug: NodeId, lambda: f64) -> Result<NodeId> {
    let weighted = g.mul_scalar(aug, lambda);
    g.add(task, weighted)
}
