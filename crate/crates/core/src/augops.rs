//! Differentiable photometric operations and their composition.
//!
//! Images are channel-first `[C, H, W]` nodes with pixels nominally in
//! `[0, 1]`. Magnitudes are scalar nodes, so gradients reach whatever
//! produced them (the policy's range endpoints during training).

use alloc::vec;
use alloc::vec::Vec;

use crate::array::Array;
use crate::error::Result;
use crate::ndgrad::{Graph, NodeId};

/// Rec. 601 luma weights for R, G, B.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AugOpKind {
    Brightness,
    Contrast,
    Noise,
}

/// Hard magnitude bounds of one operation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpBounds {
    pub lo: f64,
    pub hi: f64,
}

impl AugOpKind {
    /// Canonical application order.
    pub const ALL: [AugOpKind; 3] = [AugOpKind::Brightness, AugOpKind::Contrast, AugOpKind::Noise];

    pub fn name(self) -> &'static str {
        match self {
            AugOpKind::Brightness => "brightness",
            AugOpKind::Contrast => "contrast",
            AugOpKind::Noise => "noise",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Beyond these bounds image content is hardly identifiable.
    pub fn bounds(self) -> OpBounds {
        match self {
            AugOpKind::Brightness | AugOpKind::Contrast => OpBounds { lo: 0.1, hi: 10.0 },
            AugOpKind::Noise => OpBounds { lo: 0.0, hi: 1.0 },
        }
    }

    /// Magnitude that leaves the image unchanged.
    pub fn identity(self) -> f64 {
        match self {
            AugOpKind::Brightness | AugOpKind::Contrast => 1.0,
            AugOpKind::Noise => 0.0,
        }
    }
}

/// `m * x`.
pub fn apply_brightness(g: &mut Graph, x: NodeId, m: NodeId) -> Result<NodeId> {
    g.mul(m, x)
}

/// Scalar luminance mean of a `[3, H, W]` image; plain mean for other layouts.
pub fn luminance_mean(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let shape = g.value(x).shape().to_vec();
    let len = g.value(x).len();
    if shape.len() == 3 && shape[0] == 3 {
        let plane = len / 3;
        let mut weights = Vec::with_capacity(len);
        for w in LUMA {
            weights.extend(core::iter::repeat_n(w / plane as f64, plane));
        }
        let w = g.constant(Array::new(shape, weights)?);
        let weighted = g.mul(w, x)?;
        Ok(g.sum(weighted))
    } else {
        Ok(g.mean(x))
    }
}

/// `m * x + (1 - m) * mu(x)`, blending toward the luminance mean.
///
/// Evaluated as `x + (m - 1) * (x - mu)` so `m = 1` returns `x` bit for bit.
pub fn apply_contrast(g: &mut Graph, x: NodeId, m: NodeId) -> Result<NodeId> {
    let mu = luminance_mean(g, x)?;
    let centered = g.sub(x, mu)?;
    let excess = g.add_scalar(m, -1.0);
    let scaled = g.mul(excess, centered)?;
    g.add(x, scaled)
}

/// `x + m * z` for a fixed standard-normal draw `z`.
pub fn apply_noise(g: &mut Graph, x: NodeId, m: NodeId, z: &[f64]) -> Result<NodeId> {
    let z = g.constant(Array::new(g.value(x).shape().to_vec(), z.to_vec())?);
    let scaled = g.mul(m, z)?;
    g.add(x, scaled)
}

pub fn apply_op(g: &mut Graph, kind: AugOpKind, x: NodeId, m: NodeId, z: &[f64]) -> Result<NodeId> {
    match kind {
        AugOpKind::Brightness => apply_brightness(g, x, m),
        AugOpKind::Contrast => apply_contrast(g, x, m),
        AugOpKind::Noise => apply_noise(g, x, m, z),
    }
}

/// Applies `steps` in the given order, then clamps once to `[0, 1]`.
pub fn compose_in_order(g: &mut Graph, x: NodeId, steps: &[(AugOpKind, NodeId)], z: &[f64]) -> Result<NodeId> {
    let mut out = x;
    for &(kind, m) in steps {
        out = apply_op(g, kind, out, m, z)?;
    }
    Ok(g.clamp(out, 0.0, 1.0))
}

/// One sub-policy in canonical order; ops whose mask is off are skipped.
///
/// `z` is only read when the noise op is applied.
pub fn compose_subpolicy(
    g: &mut Graph,
    x: NodeId,
    magnitudes: [NodeId; 3],
    mask: [bool; 3],
    z: &[f64],
) -> Result<NodeId> {
    let steps: Vec<(AugOpKind, NodeId)> =
        AugOpKind::ALL.into_iter().filter(|k| mask[k.index()]).map(|k| (k, magnitudes[k.index()])).collect();
    compose_in_order(g, x, &steps, z)
}

/// Non-differentiable convenience: augments a plain image.
pub fn augment_image(image: &Array, magnitudes: [f64; 3], mask: [bool; 3], z: &[f64]) -> Result<Array> {
    let mut g = Graph::new();
    let x = g.constant(image.clone());
    let m = magnitudes.map(|v| g.constant(Array::scalar(v)));
    let z = if mask[AugOpKind::Noise.index()] { z.to_vec() } else { vec![] };
    let out = compose_subpolicy(&mut g, x, m, mask, &z)?;
    Ok(g.value(out).clone())
}
