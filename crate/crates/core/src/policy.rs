//! Learnable magnitude ranges and reparameterized sampling.

use alloc::vec;
use alloc::vec::Vec;

use crate::array::Array;
use crate::augops::{AugOpKind, OpBounds};
use crate::ndgrad::{Graph, NodeId};
use crate::rng::{RngContext, Stream};

/// Interval `[a, b]` a magnitude is drawn from, with its hard bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MagnitudeRange {
    pub a: f64,
    pub b: f64,
    pub bounds: OpBounds,
}

impl MagnitudeRange {
    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    /// Clamps both ends into the bounds, then collapses a crossed range to
    /// its midpoint.
    pub fn project(&mut self, identity: f64) {
        let OpBounds { lo, hi } = self.bounds;
        let fix = |v: f64| if v.is_finite() { v.clamp(lo, hi) } else { identity.clamp(lo, hi) };
        self.a = fix(self.a);
        self.b = fix(self.b);
        if self.a > self.b {
            let mid = 0.5 * (self.a + self.b);
            self.a = mid;
            self.b = mid;
        }
    }

    pub fn is_valid(&self) -> bool {
        self.a.is_finite()
            && self.b.is_finite()
            && self.bounds.lo <= self.a
            && self.a <= self.b
            && self.b <= self.bounds.hi
    }
}

/// One magnitude range per operation, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangePolicy {
    pub ranges: [MagnitudeRange; 3],
    /// Probability that each operation is applied to an image.
    pub p_apply: f64,
}

impl RangePolicy {
    /// Narrow bands around the identity magnitudes.
    pub fn initial(p_apply: f64) -> Self {
        Self::from_pairs([(0.9, 1.1), (0.9, 1.1), (0.0, 0.05)], p_apply)
    }

    /// Every sample is the identity transform.
    pub fn identity(p_apply: f64) -> Self {
        Self::from_pairs(AugOpKind::ALL.map(|k| (k.identity(), k.identity())), p_apply)
    }

    pub fn from_pairs(pairs: [(f64, f64); 3], p_apply: f64) -> Self {
        let ranges = AugOpKind::ALL.map(|k| {
            let (a, b) = pairs[k.index()];
            MagnitudeRange { a, b, bounds: k.bounds() }
        });
        Self { ranges, p_apply }
    }

    pub fn range(&self, kind: AugOpKind) -> &MagnitudeRange {
        &self.ranges[kind.index()]
    }

    pub fn project_ranges(mut self) -> Self {
        self.project();
        self
    }

    pub fn project(&mut self) {
        for kind in AugOpKind::ALL {
            self.ranges[kind.index()].project(kind.identity());
        }
    }

    pub fn range_width(&self) -> [f64; 3] {
        self.ranges.map(|r| r.width())
    }

    pub fn is_valid(&self) -> bool {
        self.ranges.iter().all(MagnitudeRange::is_valid)
    }

    /// `[a_brightness, b_brightness, a_contrast, b_contrast, a_noise, b_noise]`.
    pub fn params(&self) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (i, r) in self.ranges.iter().enumerate() {
            out[2 * i] = r.a;
            out[2 * i + 1] = r.b;
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64; 6]) {
        for (i, r) in self.ranges.iter_mut().enumerate() {
            r.a = params[2 * i];
            r.b = params[2 * i + 1];
        }
    }
}

/// Draws for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub u: [f64; 3],
    pub m: [f64; 3],
    pub mask: [bool; 3],
    /// Standard normals for the noise op; empty when noise is masked off.
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubPolicySample {
    pub images: Vec<ImageSample>,
}

/// Samples the sub-policy of image `sample` at `epoch`.
///
/// `m = a + (b - a) * u`, so `dm/da = 1 - u` and `dm/db = u`.
pub fn sample_image(policy: &RangePolicy, seed: u64, epoch: u64, sample: u64, image_len: usize) -> ImageSample {
    let rng = RngContext::new(seed, Stream::Sampling);
    let mut out = ImageSample { u: [0.0; 3], m: [0.0; 3], mask: [false; 3], z: Vec::new() };
    for kind in AugOpKind::ALL {
        let i = kind.index();
        let r = rng.at(epoch, sample, i as u64);
        let range = &policy.ranges[i];
        out.u[i] = r.uniform(0);
        out.m[i] = range.a + (range.b - range.a) * out.u[i];
        out.mask[i] = r.uniform(1) < policy.p_apply;
    }
    if out.mask[AugOpKind::Noise.index()] {
        out.z = vec![0.0; image_len];
        RngContext::new(seed, Stream::Noise).at(epoch, sample, 0).fill_normal(&mut out.z);
    }
    out
}

pub fn sample_subpolicy(
    policy: &RangePolicy,
    seed: u64,
    epoch: u64,
    samples: &[u64],
    image_len: usize,
) -> SubPolicySample {
    SubPolicySample { images: samples.iter().map(|&s| sample_image(policy, seed, epoch, s, image_len)).collect() }
}

/// Graph leaves holding the range endpoints.
#[derive(Clone, Copy, Debug)]
pub struct PolicyNodes {
    pub a: [NodeId; 3],
    pub b: [NodeId; 3],
}

impl PolicyNodes {
    pub fn bind(g: &mut Graph, policy: &RangePolicy) -> Self {
        let a = policy.ranges.map(|r| g.leaf(Array::scalar(r.a)));
        let b = policy.ranges.map(|r| g.leaf(Array::scalar(r.b)));
        Self { a, b }
    }

    /// `a + (b - a) * u` as a node.
    pub fn magnitude(&self, g: &mut Graph, kind: AugOpKind, u: f64) -> NodeId {
        let i = kind.index();
        let width = g.sub(self.b[i], self.a[i]).expect("scalar leaves");
        let offset = g.mul_scalar(width, u);
        g.add(self.a[i], offset).expect("scalar leaves")
    }

    /// Gradients in [`RangePolicy::params`] order.
    pub fn gradients(&self, grads: &crate::ndgrad::Gradients) -> [f64; 6] {
        let mut out = [0.0; 6];
        for i in 0..3 {
            out[2 * i] = grads.of(self.a[i]).item();
            out[2 * i + 1] = grads.of(self.b[i]).item();
        }
        out
    }
}
