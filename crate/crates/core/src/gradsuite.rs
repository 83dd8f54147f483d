//! Finite-difference sweep over every differentiable pipeline.
//!
//! Random points are drawn on small `3 x 8 x 8` images and repaired until
//! they sit away from every kink (clamp bounds, ReLU hinges, the smooth-L1
//! transition), so central differences are meaningful there.

use alloc::vec;
use alloc::vec::Vec;

use crate::array::Array;
use crate::augops::{apply_op, compose_subpolicy, AugOpKind};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_difference_check, GradCheckReport};
use crate::ndgrad::{Graph, NodeId};
use crate::policy::PolicyNodes;
use crate::refmodel::MlpClassifier;
use crate::rng::{RngContext, Stream};
use crate::simloss::{augmentation_loss, cross_entropy, kd_loss, psnr_value, total_loss};

pub const SIDE: usize = 8;
pub const HIDDEN: usize = 8;
pub const CLASSES: usize = 4;
const PIXELS: usize = 3 * SIDE * SIDE;
/// Distance kept from the clamp bounds before clamping.
const CLAMP_MARGIN: f64 = 0.01;
/// Distance kept from zero by every hidden pre-activation.
const RELU_MARGIN: f64 = 0.02;
const REPAIR_ROUNDS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pipeline {
    Brightness,
    Contrast,
    Noise,
    SubPolicy,
    AugLoss,
    Classifier,
    Distill,
    Total,
}

impl Pipeline {
    pub const ALL: [Pipeline; 8] = [
        Pipeline::Brightness,
        Pipeline::Contrast,
        Pipeline::Noise,
        Pipeline::SubPolicy,
        Pipeline::AugLoss,
        Pipeline::Classifier,
        Pipeline::Distill,
        Pipeline::Total,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Brightness => "brightness",
            Pipeline::Contrast => "contrast",
            Pipeline::Noise => "noise",
            Pipeline::SubPolicy => "subpolicy",
            Pipeline::AugLoss => "aug_loss",
            Pipeline::Classifier => "classifier",
            Pipeline::Distill => "distill",
            Pipeline::Total => "total",
        }
    }

    fn mask(self) -> [bool; 3] {
        match self {
            Pipeline::Brightness => [true, false, false],
            Pipeline::Contrast => [false, true, false],
            Pipeline::Noise => [false, false, true],
            _ => [true; 3],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteConfig {
    pub points: usize,
    pub seed: u64,
    pub h: f64,
    pub lambda: f64,
    pub beta: f64,
    pub kd_alpha: f64,
    pub kd_temperature: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { points: 20, seed: 0, h: 1e-3, lambda: 0.0015, beta: 1.0, kd_alpha: 0.5, kd_temperature: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineReport {
    pub pipeline: Pipeline,
    /// Worst relative error over all points and coordinates.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Point index holding the worst error.
    pub worst_point: usize,
    /// Coordinates checked, summed over points.
    pub coordinates: usize,
}

/// One repaired random point.
#[derive(Clone, Debug)]
pub struct SuitePoint {
    pub image: Array,
    /// `(a, b)` per op in canonical order.
    pub ranges: [(f64, f64); 3],
    pub u: [f64; 3],
    pub z: Vec<f64>,
    /// Weights of the linear read-out used by the op-level pipelines.
    pub readout: Array,
    pub model: MlpClassifier,
    pub teacher_logits: Array,
    pub label: usize,
    pub delta: f64,
}

struct Draws {
    rng: RngContext,
    next: u64,
}

impl Draws {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.next += 1;
        lo + (hi - lo) * self.rng.uniform(self.next)
    }

    fn normal(&mut self) -> f64 {
        let mut z = [0.0];
        self.next += 1;
        self.rng.at(self.rng.epoch, self.rng.sample, self.next).fill_normal(&mut z);
        z[0]
    }
}

fn magnitudes(ranges: &[(f64, f64); 3], u: &[f64; 3]) -> [f64; 3] {
    core::array::from_fn(|i| ranges[i].0 + (ranges[i].1 - ranges[i].0) * u[i])
}

/// Pre-clamp and post-clamp pixels of the op chain selected by `mask`.
fn chain_values(image: &Array, m: [f64; 3], mask: [bool; 3], z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = Graph::new();
    let mut x = g.constant(image.clone());
    for kind in AugOpKind::ALL.into_iter().filter(|k| mask[k.index()]) {
        let mag = g.constant(Array::scalar(m[kind.index()]));
        x = apply_op(&mut g, kind, x, mag, z)?;
    }
    let pre = g.value(x).data().to_vec();
    let post = pre.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok((pre, post))
}

fn hidden_preactivations(model: &MlpClassifier, x: &[f64]) -> Vec<f64> {
    let w = model.params()[0].data();
    let b = model.params()[1].data();
    (0..HIDDEN).map(|i| b[i] + x.iter().enumerate().map(|(j, v)| v * w[j * HIDDEN + i]).sum::<f64>()).collect()
}

impl SuitePoint {
    /// Draws point `index` and nudges offending pixels, noise draws and
    /// biases until every kink is out of reach of a step of size `h`.
    pub fn draw(seed: u64, index: u64, beta: f64) -> Result<Self> {
        let mut d = Draws { rng: RngContext::new(seed, Stream::Init).at(index, 1, 0), next: 0 };
        let mut pixels: Vec<f64> = (0..PIXELS).map(|_| d.uniform(0.1, 0.9)).collect();
        let mut z: Vec<f64> = (0..PIXELS).map(|_| d.normal()).collect();
        let ranges = [
            {
                let a = d.uniform(0.6, 1.2);
                (a, a + d.uniform(0.05, 0.5))
            },
            {
                let a = d.uniform(0.6, 1.2);
                (a, a + d.uniform(0.05, 0.5))
            },
            // central differences on -20 log10(m) carry a relative error near
            // h^2 / 3m^2, so the noise std stays well above the step
            {
                let a = d.uniform(0.04, 0.1);
                (a, a + d.uniform(0.01, 0.06))
            },
        ];
        let u = [d.uniform(0.05, 0.95), d.uniform(0.05, 0.95), d.uniform(0.05, 0.95)];
        let m = magnitudes(&ranges, &u);
        let readout = Array::new(vec![3, SIDE, SIDE], (0..PIXELS).map(|_| d.uniform(-1.0, 1.0)).collect())?;

        let masks = [[true, false, false], [false, true, false], [false, false, true], [true; 3]];
        let mut image = Array::new(vec![3, SIDE, SIDE], pixels.clone())?;
        let mut clean = false;
        for _ in 0..REPAIR_ROUNDS {
            let mut bad = [false; PIXELS];
            for mask in masks {
                let (pre, _) = chain_values(&image, m, mask, &z)?;
                for (flag, v) in bad.iter_mut().zip(pre) {
                    *flag |= v.abs() < CLAMP_MARGIN || (v - 1.0).abs() < CLAMP_MARGIN;
                }
            }
            if !bad.contains(&true) {
                clean = true;
                break;
            }
            for (i, _) in bad.iter().enumerate().filter(|(_, &b)| b) {
                pixels[i] = d.uniform(0.1, 0.9);
                z[i] = d.normal();
            }
            image = Array::new(vec![3, SIDE, SIDE], pixels.clone())?;
        }
        if !clean {
            return Err(Error::Config(alloc::format!("gradient suite point {index} could not be repaired")));
        }

        let dims = [PIXELS, HIDDEN, CLASSES];
        let mut model = MlpClassifier::init_params(&dims, seed ^ index.wrapping_mul(0x9E37_79B9))?;
        let (_, augmented) = chain_values(&image, m, [true; 3], &z)?;
        for i in 0..HIDDEN {
            let mut tries = 0;
            loop {
                let ok = [image.data(), &augmented[..]]
                    .iter()
                    .all(|x| hidden_preactivations(&model, x)[i].abs() >= RELU_MARGIN);
                if ok {
                    break;
                }
                tries += 1;
                if tries > REPAIR_ROUNDS {
                    return Err(Error::Config(alloc::format!("gradient suite point {index}: dead hidden unit {i}")));
                }
                model.params_mut()[1].data_mut()[i] = d.uniform(-0.5, 0.5);
            }
        }
        let teacher = MlpClassifier::init_params(&dims, !seed ^ index)?;
        let teacher_logits = teacher.logits(image.data())?;

        // keep the PSNR gap well inside or well outside the quadratic zone
        let gap = if d.uniform(0.0, 1.0) < 0.5 { d.uniform(0.3, 0.7) } else { d.uniform(1.3, 3.0) } * beta;
        let sign = if d.uniform(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
        let delta = psnr_value(image.data(), &augmented) - sign * gap;
        let label = (d.uniform(0.0, CLASSES as f64) as usize).min(CLASSES - 1);
        Ok(Self { image, ranges, u, z, readout, model, teacher_logits, label, delta })
    }

    /// Leaf values for `pipeline`, in the order `build` expects.
    pub fn leaves(&self, pipeline: Pipeline) -> Vec<Array> {
        let mut out = vec![self.image.clone()];
        let policy = self.ranges.iter().flat_map(|&(a, b)| [Array::scalar(a), Array::scalar(b)]);
        match pipeline {
            Pipeline::Brightness | Pipeline::Contrast | Pipeline::Noise => {
                let (a, b) = self.ranges[pipeline_op(pipeline).index()];
                out.extend([Array::scalar(a), Array::scalar(b)]);
            }
            Pipeline::SubPolicy | Pipeline::AugLoss => out.extend(policy),
            Pipeline::Classifier | Pipeline::Distill => out.extend(self.model.params().iter().cloned()),
            Pipeline::Total => {
                out.extend(policy);
                out.extend(self.model.params().iter().cloned());
            }
        }
        out
    }

    /// Scalar loss of `pipeline` on the given leaves.
    pub fn build(&self, cfg: &SuiteConfig, pipeline: Pipeline, g: &mut Graph, leaves: &[NodeId]) -> Result<NodeId> {
        let x = leaves[0];
        let augment = |g: &mut Graph, nodes: &PolicyNodes, mask: [bool; 3]| -> Result<NodeId> {
            let m = AugOpKind::ALL.map(|k| nodes.magnitude(g, k, self.u[k.index()]));
            compose_subpolicy(g, x, m, mask, &self.z)
        };
        let classify = |g: &mut Graph, input: NodeId, params: &[NodeId]| -> Result<NodeId> {
            let flat = g.reshape(input, &[1, PIXELS])?;
            self.model.forward(g, params, flat)
        };
        match pipeline {
            Pipeline::Brightness | Pipeline::Contrast | Pipeline::Noise => {
                // the other ops are masked off, so sharing the leaves is harmless
                let nodes = PolicyNodes { a: [leaves[1]; 3], b: [leaves[2]; 3] };
                let out = augment(g, &nodes, pipeline.mask())?;
                readout(g, out, &self.readout)
            }
            Pipeline::SubPolicy => {
                let out = augment(g, &policy_nodes(&leaves[1..7]), pipeline.mask())?;
                readout(g, out, &self.readout)
            }
            Pipeline::AugLoss => {
                let out = augment(g, &policy_nodes(&leaves[1..7]), pipeline.mask())?;
                let reference = g.constant(self.image.clone());
                Ok(augmentation_loss(g, &[reference], &[out], self.delta, cfg.beta)?.loss)
            }
            Pipeline::Classifier => {
                let logits = classify(g, x, &leaves[1..])?;
                cross_entropy(g, logits, &[self.label])
            }
            Pipeline::Distill => {
                let logits = classify(g, x, &leaves[1..])?;
                kd_loss(g, logits, &self.teacher_logits, cfg.kd_temperature, cfg.kd_alpha, &[self.label])
            }
            Pipeline::Total => {
                let out = augment(g, &policy_nodes(&leaves[1..7]), pipeline.mask())?;
                // the reference is the unperturbed image, held fixed
                let reference = g.constant(self.image.clone());
                let aug = augmentation_loss(g, &[reference], &[out], self.delta, cfg.beta)?.loss;
                let logits = classify(g, out, &leaves[7..])?;
                let task = cross_entropy(g, logits, &[self.label])?;
                total_loss(g, task, aug, cfg.lambda)
            }
        }
    }
}

fn pipeline_op(pipeline: Pipeline) -> AugOpKind {
    match pipeline {
        Pipeline::Contrast => AugOpKind::Contrast,
        Pipeline::Noise => AugOpKind::Noise,
        _ => AugOpKind::Brightness,
    }
}

fn policy_nodes(leaves: &[NodeId]) -> PolicyNodes {
    PolicyNodes { a: [leaves[0], leaves[2], leaves[4]], b: [leaves[1], leaves[3], leaves[5]] }
}

fn readout(g: &mut Graph, image: NodeId, weights: &Array) -> Result<NodeId> {
    let w = g.constant(weights.clone());
    let weighted = g.mul(w, image)?;
    Ok(g.sum(weighted))
}

/// Checks one pipeline over `cfg.points` points.
pub fn check_pipeline(cfg: &SuiteConfig, pipeline: Pipeline) -> Result<PipelineReport> {
    let mut report = PipelineReport { pipeline, max_rel_err: 0.0, max_abs_err: 0.0, worst_point: 0, coordinates: 0 };
    for index in 0..cfg.points {
        let point = SuitePoint::draw(cfg.seed, index as u64, cfg.beta)?;
        let GradCheckReport { max_rel_err, max_abs_err, coordinates, .. } =
            finite_difference_check(|g, leaves| point.build(cfg, pipeline, g, leaves), &point.leaves(pipeline), cfg.h)?;
        if max_rel_err > report.max_rel_err || index == 0 {
            report.max_rel_err = max_rel_err;
            report.worst_point = index;
        }
        report.max_abs_err = report.max_abs_err.max(max_abs_err);
        report.coordinates += coordinates;
    }
    Ok(report)
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<PipelineReport>> {
    Pipeline::ALL.iter().map(|&p| check_pipeline(cfg, p)).collect()
}
