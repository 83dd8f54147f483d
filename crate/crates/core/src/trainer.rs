//! Joint optimization of classifier weights and magnitude ranges.
//!
//! One step builds a single graph: sample a sub-policy per image, augment,
//! classify, and score both the task loss and the range-targeting loss. The
//! task and augmentation terms are differentiated separately and combined as
//! `g_task + lambda * g_aug`, which equals the gradient of the total loss and
//! exposes each term's contribution to the policy.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::array::Array;
use crate::augops::{compose_subpolicy, AugOpKind};
use crate::data::{epoch_order, Dataset};
use crate::error::{Error, Result};
use crate::ndgrad::{Graph, NodeId};
use crate::optim::SgdMomentum;
use crate::policy::{sample_image, PolicyNodes, RangePolicy};
use crate::refmodel::{argmax, MlpClassifier};
use crate::schedule::{Curriculum, CurriculumKind};
use crate::simloss::{augmentation_loss, cross_entropy, kd_loss, total_loss};

/// PSNR reported for unaugmented images.
pub const IDENTITY_PSNR: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumSpec {
    pub kind: CurriculumKind,
    pub delta_start: f64,
    pub delta_end: f64,
}

impl CurriculumSpec {
    pub fn fixed(delta: f64) -> Self {
        Self { kind: CurriculumKind::Fixed, delta_start: delta, delta_end: delta }
    }

    pub fn cosine(delta_start: f64, delta_end: f64) -> Self {
        Self { kind: CurriculumKind::Cosine, delta_start, delta_end }
    }

    pub fn linear(delta_start: f64, delta_end: f64) -> Self {
        Self { kind: CurriculumKind::Linear, delta_start, delta_end }
    }

    pub fn build(&self, total_steps: usize) -> Result<Curriculum> {
        Curriculum::new(self.kind, self.delta_start, self.delta_end, total_steps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KdSettings {
    pub alpha: f64,
    pub temperature: f64,
}

impl Default for KdSettings {
    fn default() -> Self {
        Self { alpha: 0.5, temperature: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub model_lr: f64,
    pub policy_lr: f64,
    pub momentum: f64,
    pub lambda: f64,
    pub beta: f64,
    pub curriculum: CurriculumSpec,
    pub p_apply: f64,
    /// Feed the augmented batch to the classifier with gradients intact.
    pub joint_mode: bool,
    /// When false no augmentation is applied and the policy is never touched.
    pub augment: bool,
    /// Hidden layer widths of the classifier.
    pub hidden: Vec<usize>,
    /// Distillation settings; training then needs a teacher.
    pub kd: Option<KdSettings>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            model_lr: 0.01,
            policy_lr: 0.05,
            momentum: 0.9,
            lambda: 0.0015,
            beta: 1.0,
            curriculum: CurriculumSpec::cosine(40.0, 10.0),
            p_apply: 1.0,
            joint_mode: true,
            augment: true,
            hidden: vec![32],
            kd: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.model_lr > 0.0) || !(self.policy_lr > 0.0) {
            return fail(format!("learning rates must be > 0, got {} and {}", self.model_lr, self.policy_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.beta > 0.0) {
            return fail(format!("beta must be > 0, got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.p_apply) {
            return fail(format!("p_apply must be in [0, 1], got {}", self.p_apply));
        }
        if self.hidden.contains(&0) {
            return fail(format!("hidden widths must be positive, got {:?}", self.hidden));
        }
        if let Some(kd) = &self.kd {
            if !(0.0..=1.0).contains(&kd.alpha) || !(kd.temperature > 0.0) {
                return fail(format!("kd alpha must be in [0, 1] and temperature > 0, got {kd:?}"));
            }
        }
        self.curriculum.build(1)?;
        Ok(())
    }

    pub fn model_dims(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(classes);
        dims
    }
}

/// Loss terms and diagnostics of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub task_loss: f64,
    pub aug_loss: f64,
    pub total_loss: f64,
    pub mean_psnr: f64,
    pub correct: usize,
    pub count: usize,
    /// d(task)/d(policy) in [`RangePolicy::params`] order.
    pub task_policy_grad: [f64; 6],
    /// d(aug)/d(policy), unweighted by lambda.
    pub aug_policy_grad: [f64; 6],
}

/// One row of the range trajectory log.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub epoch: usize,
    pub op: AugOpKind,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub mean_psnr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    /// 1-based.
    pub epoch: usize,
    /// Target PSNR after the epoch's last step.
    pub delta: f64,
    pub mean_psnr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub policy: RangePolicy,
    pub steps: usize,
    /// Largest |d(task)/d(policy)| seen in any step.
    pub max_task_policy_grad: f64,
    /// Smallest per-step max |d(aug)/d(policy)|.
    pub min_aug_policy_grad: f64,
}

impl EpochSummary {
    pub fn records(&self) -> Vec<TrajectoryRecord> {
        AugOpKind::ALL
            .iter()
            .map(|&op| {
                let r = self.policy.range(op);
                TrajectoryRecord {
                    epoch: self.epoch,
                    op,
                    a: r.a,
                    b: r.b,
                    delta: self.delta,
                    mean_psnr: self.mean_psnr,
                    train_loss: self.train_loss,
                    train_acc: self.train_acc,
                    val_acc: self.val_acc,
                }
            })
            .collect()
    }
}

struct AugmentedBatch {
    references: Vec<NodeId>,
    augmented: Vec<NodeId>,
}

/// Adds one augmented copy per image; `samples` are the RNG sample ids.
fn augment_batch<'a>(
    g: &mut Graph,
    nodes: &PolicyNodes,
    policy: &RangePolicy,
    images: impl Iterator<Item = (u64, &'a [f64])>,
    shape: &[usize],
    seed: u64,
    epoch: u64,
) -> Result<AugmentedBatch> {
    let mut batch = AugmentedBatch { references: Vec::new(), augmented: Vec::new() };
    for (sample, pixels) in images {
        let x = g.constant(Array::new(shape.to_vec(), pixels.to_vec())?);
        let draw = sample_image(policy, seed, epoch, sample, pixels.len());
        let magnitudes =
            AugOpKind::ALL.map(|k| if draw.mask[k.index()] { nodes.magnitude(g, k, draw.u[k.index()]) } else { x });
        let out = compose_subpolicy(g, x, magnitudes, draw.mask, &draw.z)?;
        batch.references.push(x);
        batch.augmented.push(out);
    }
    Ok(batch)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub struct Trainer<'t> {
    cfg: TrainConfig,
    model: MlpClassifier,
    policy: RangePolicy,
    model_opt: SgdMomentum,
    policy_opt: SgdMomentum,
    teacher: Option<&'t MlpClassifier>,
}

impl<'t> Trainer<'t> {
    pub fn new(
        cfg: TrainConfig,
        model: MlpClassifier,
        policy: RangePolicy,
        teacher: Option<&'t MlpClassifier>,
    ) -> Result<Self> {
        cfg.validate()?;
        match (&cfg.kd, teacher) {
            (Some(_), None) => return Err(Error::Config("distillation needs a teacher model".into())),
            (Some(_), Some(t)) if t.input_dim() != model.input_dim() || t.classes() != model.classes() => {
                return Err(Error::Config(format!(
                    "teacher dims {:?} do not match student dims {:?}",
                    t.dims(),
                    model.dims()
                )))
            }
            _ => {}
        }
        let model_opt = SgdMomentum::new(cfg.model_lr, cfg.momentum);
        let policy_opt = SgdMomentum::new(cfg.policy_lr, cfg.momentum);
        let policy = policy.project_ranges();
        Ok(Self { cfg, model, policy, model_opt, policy_opt, teacher })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &MlpClassifier {
        &self.model
    }

    pub fn policy(&self) -> &RangePolicy {
        &self.policy
    }

    pub fn into_parts(self) -> (MlpClassifier, RangePolicy) {
        (self.model, self.policy)
    }

    /// One optimizer step on `data[indices]` at target PSNR `delta`.
    pub fn train_step(&mut self, data: &Dataset, indices: &[usize], epoch: u64, delta: f64) -> Result<StepStats> {
        let cfg = &self.cfg;
        let mut g = Graph::new();
        let params = self.model.bind(&mut g);
        let shape = data.image_shape().to_vec();

        let (input, policy_nodes, aug) = if cfg.augment {
            let nodes = PolicyNodes::bind(&mut g, &self.policy);
            let images = indices.iter().map(|&i| (i as u64, data.pixels(i)));
            let batch = augment_batch(&mut g, &nodes, &self.policy, images, &shape, cfg.seed, epoch)?;
            let stacked = g.stack(&batch.augmented)?;
            let aug = augmentation_loss(&mut g, &batch.references, &batch.augmented, delta, cfg.beta)?;
            (stacked, Some(nodes), Some(aug))
        } else {
            let mut pixels = Vec::with_capacity(indices.len() * data.image_len());
            indices.iter().for_each(|&i| pixels.extend_from_slice(data.pixels(i)));
            let mut full_shape = vec![indices.len()];
            full_shape.extend_from_slice(&shape);
            (g.constant(Array::new(full_shape, pixels)?), None, None)
        };
        let input = if cfg.joint_mode { input } else { g.detach(input) };
        let labels: Vec<usize> = indices.iter().map(|&i| data.labels[i]).collect();
        let logits = self.model.forward(&mut g, &params, input)?;

        let task = match (&cfg.kd, self.teacher) {
            (Some(kd), Some(teacher)) => {
                let teacher_logits = teacher.logits(g.value(input).data())?;
                kd_loss(&mut g, logits, &teacher_logits, kd.temperature, kd.alpha, &labels)?
            }
            _ => cross_entropy(&mut g, logits, &labels)?,
        };
        let aug_node = match &aug {
            Some(a) => a.loss,
            None => g.constant(Array::scalar(0.0)),
        };
        let total = total_loss(&mut g, task, aug_node, cfg.lambda)?;

        let (task_v, aug_v, total_v) = (g.scalar(task), g.scalar(aug_node), g.scalar(total));
        if !total_v.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "delta={delta} ranges={:?} task={task_v} aug={aug_v} total={total_v}",
                self.policy.params()
            )));
        }

        let task_grads = g.backward(task)?;
        for (slot, (param, &node)) in self.model.params_mut().iter_mut().zip(&params).enumerate() {
            self.model_opt.update(slot, param.data_mut(), task_grads.of(node).data());
        }

        let mut stats = StepStats {
            task_loss: task_v,
            aug_loss: aug_v,
            total_loss: total_v,
            mean_psnr: IDENTITY_PSNR,
            correct: 0,
            count: indices.len(),
            task_policy_grad: [0.0; 6],
            aug_policy_grad: [0.0; 6],
        };
        let k = self.model.classes();
        stats.correct =
            g.value(logits).data().chunks_exact(k).zip(&labels).filter(|(row, &l)| argmax(row) == l).count();

        if let (Some(nodes), Some(aug)) = (policy_nodes, aug) {
            let aug_grads = g.backward(aug.loss)?;
            stats.task_policy_grad = nodes.gradients(&task_grads);
            stats.aug_policy_grad = nodes.gradients(&aug_grads);
            stats.mean_psnr = aug.psnr.iter().map(|&p| g.scalar(p)).sum::<f64>() / aug.psnr.len() as f64;
            let grad: [f64; 6] =
                core::array::from_fn(|i| stats.task_policy_grad[i] + cfg.lambda * stats.aug_policy_grad[i]);
            let mut phi = self.policy.params();
            self.policy_opt.update(0, &mut phi, &grad);
            self.policy.set_params(&phi);
            self.policy.project();
        }
        Ok(stats)
    }
}

/// Final state and per-epoch history of a run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: MlpClassifier,
    pub policy: RangePolicy,
    pub history: Vec<EpochSummary>,
}

impl TrainOutcome {
    pub fn records(&self) -> Vec<TrajectoryRecord> {
        self.history.iter().flat_map(EpochSummary::records).collect()
    }
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Full training run; `on_epoch` sees each summary as it is produced.
pub fn train(
    cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    teacher: Option<&MlpClassifier>,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let dims = cfg.model_dims(train_set.image_len(), train_set.classes);
    let model = MlpClassifier::init_params(&dims, cfg.seed)?;
    let policy = RangePolicy::initial(cfg.p_apply);
    let mut trainer = Trainer::new(cfg.clone(), model, policy, teacher)?;

    let per_epoch = steps_per_epoch(train_set.len(), cfg.batch_size);
    let curriculum = cfg.curriculum.build((cfg.epochs * per_epoch).max(1))?;
    let mut step = 0;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train_set.len(), cfg.seed, epoch as u64);
        let (mut loss_sum, mut psnr_sum, mut correct, mut seen) = (0.0, 0.0, 0, 0);
        let (mut max_task, mut min_aug) = (0.0f64, f64::INFINITY);
        for batch in order.chunks(cfg.batch_size) {
            let delta = curriculum.delta_at(step)?;
            let stats = trainer.train_step(train_set, batch, epoch as u64, delta)?;
            step += 1;
            loss_sum += stats.total_loss * stats.count as f64;
            psnr_sum += stats.mean_psnr * stats.count as f64;
            correct += stats.correct;
            seen += stats.count;
            max_task = max_task.max(max_abs(&stats.task_policy_grad));
            min_aug = min_aug.min(max_abs(&stats.aug_policy_grad));
        }
        let summary = EpochSummary {
            epoch: epoch + 1,
            delta: curriculum.delta_at(step)?,
            mean_psnr: psnr_sum / seen as f64,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_acc: evaluate(trainer.model(), val_set)?,
            policy: *trainer.policy(),
            steps: per_epoch,
            max_task_policy_grad: max_task,
            min_aug_policy_grad: min_aug,
        };
        on_epoch(&summary);
        history.push(summary);
    }
    let (model, policy) = trainer.into_parts();
    Ok(TrainOutcome { model, policy, history })
}

/// Argmax accuracy on unaugmented images.
pub fn evaluate(model: &MlpClassifier, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Ok(0.0);
    }
    const CHUNK: usize = 256;
    let len = dataset.image_len();
    let k = model.classes();
    let mut correct = 0;
    for start in (0..dataset.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(dataset.len());
        let logits = model.logits(&dataset.images.data()[start * len..end * len])?;
        correct +=
            logits.data().chunks_exact(k).zip(&dataset.labels[start..end]).filter(|(row, &l)| argmax(row) == l).count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Policy-only optimization of the augmentation loss on a fixed batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyFitConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub delta: f64,
    pub beta: f64,
    pub p_apply: f64,
    pub seed: u64,
}

impl Default for PolicyFitConfig {
    fn default() -> Self {
        Self { steps: 2500, lr: 2e-4, momentum: 0.9, delta: 20.0, beta: 1.0, p_apply: 1.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyFitTrace {
    /// Batch-mean achieved PSNR of every step, before its update.
    pub mean_psnr: Vec<f64>,
    pub policy: RangePolicy,
}

/// Minimizes the augmentation loss alone; the classifier plays no part.
pub fn fit_policy(
    data: &Dataset,
    indices: &[usize],
    init: RangePolicy,
    cfg: &PolicyFitConfig,
) -> Result<PolicyFitTrace> {
    let mut policy = init.project_ranges();
    policy.p_apply = cfg.p_apply;
    let mut opt = SgdMomentum::new(cfg.lr, cfg.momentum);
    let shape = data.image_shape().to_vec();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut g = Graph::new();
        let nodes = PolicyNodes::bind(&mut g, &policy);
        let images = indices.iter().map(|&i| (i as u64, data.pixels(i)));
        let batch = augment_batch(&mut g, &nodes, &policy, images, &shape, cfg.seed, step as u64)?;
        let aug = augmentation_loss(&mut g, &batch.references, &batch.augmented, cfg.delta, cfg.beta)?;
        let loss = g.scalar(aug.loss);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("delta={} ranges={:?} aug={loss}", cfg.delta, policy.params())));
        }
        trace.push(aug.psnr.iter().map(|&p| g.scalar(p)).sum::<f64>() / aug.psnr.len() as f64);
        let grads = g.backward(aug.loss)?;
        let grad = nodes.gradients(&grads);
        let mut phi = policy.params();
        opt.update(0, &mut phi, &grad);
        policy.set_params(&phi);
        policy.project();
    }
    Ok(PolicyFitTrace { mean_psnr: trace, policy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    fn small_cfg() -> TrainConfig {
        TrainConfig { epochs: 2, batch_size: 16, hidden: vec![8], ..TrainConfig::default() }
    }

    fn tiny_data() -> (Dataset, Dataset) {
        (generate_synthetic(64, 4, 1).unwrap(), generate_synthetic(32, 4, 2).unwrap())
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lambda: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { model_lr: 0.0, ..TrainConfig::default() }.validate().is_err());
        let fixed_bad = CurriculumSpec { kind: CurriculumKind::Fixed, delta_start: 40.0, delta_end: 5.0 };
        assert!(TrainConfig { curriculum: fixed_bad, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn plain_erm_step_leaves_policy_alone() {
        let (train, _) = tiny_data();
        let cfg = TrainConfig { lambda: 0.0, p_apply: 0.0, ..small_cfg() };
        let model = MlpClassifier::init_params(&cfg.model_dims(3072, 4), 0).unwrap();
        let mut t = Trainer::new(cfg, model, RangePolicy::initial(0.0), None).unwrap();
        let before = *t.policy();
        let s = t.train_step(&train, &[0, 1, 2, 3], 0, 20.0).unwrap();
        assert_eq!(*t.policy(), before);
        assert_eq!(s.mean_psnr, IDENTITY_PSNR);
        assert_eq!(s.aug_policy_grad, [0.0; 6]);
    }

    #[test]
    fn detached_mode_zeroes_task_policy_gradient() {
        let (train, _) = tiny_data();
        for joint in [false, true] {
            let cfg = TrainConfig { joint_mode: joint, ..small_cfg() };
            let model = MlpClassifier::init_params(&cfg.model_dims(3072, 4), 0).unwrap();
            let mut t = Trainer::new(cfg, model, RangePolicy::initial(1.0), None).unwrap();
            let s = t.train_step(&train, &[0, 1, 2, 3, 4, 5, 6, 7], 0, 20.0).unwrap();
            assert!(max_abs(&s.aug_policy_grad) > 0.0);
            if joint {
                assert!(max_abs(&s.task_policy_grad) > 0.0);
            } else {
                assert_eq!(s.task_policy_grad, [0.0; 6]);
            }
        }
    }

    #[test]
    fn small_step_lowers_loss_on_fixed_batch() {
        let (train, _) = tiny_data();
        let cfg = TrainConfig { model_lr: 1e-3, policy_lr: 1e-4, momentum: 0.0, ..small_cfg() };
        let batch: Vec<usize> = (0..16).collect();
        let model = MlpClassifier::init_params(&cfg.model_dims(3072, 4), 3).unwrap();
        let mut t = Trainer::new(cfg.clone(), model, RangePolicy::initial(1.0), None).unwrap();
        let first = t.train_step(&train, &batch, 0, 20.0).unwrap();
        // re-evaluate with the same sample draws (same epoch counter)
        let mut probe = Trainer::new(
            TrainConfig { model_lr: 1e-12, policy_lr: 1e-12, ..cfg },
            t.model().clone(),
            *t.policy(),
            None,
        )
        .unwrap();
        let after = probe.train_step(&train, &batch, 0, 20.0).unwrap();
        assert!(after.total_loss < first.total_loss, "{} vs {}", after.total_loss, first.total_loss);
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let (train_set, val) = tiny_data();
        let cfg = TrainConfig { epochs: 0, ..small_cfg() };
        let out = train(&cfg, &train_set, &val, None, |_| {}).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.policy, RangePolicy::initial(1.0));
        assert_eq!(out.model, MlpClassifier::init_params(&cfg.model_dims(3072, 4), cfg.seed).unwrap());
    }

    #[test]
    fn run_is_deterministic_and_ends_on_delta_end() {
        let (train_set, val) = tiny_data();
        let cfg = TrainConfig { curriculum: CurriculumSpec::cosine(40.0, 20.0), ..small_cfg() };
        let a = train(&cfg, &train_set, &val, None, |_| {}).unwrap();
        let b = train(&cfg, &train_set, &val, None, |_| {}).unwrap();
        assert_eq!(a.records(), b.records());
        assert_eq!(a.model, b.model);
        let last = a.history.last().unwrap();
        assert!((last.delta - 20.0).abs() <= 1e-9);
        assert_eq!(a.records().len(), 3 * cfg.epochs);
        assert!(a.records().iter().all(|r| r.a <= r.b));
    }

    #[test]
    fn zero_weight_model_accuracy_is_class_zero_fraction() {
        let (_, val) = tiny_data();
        let model = MlpClassifier::zeros(&[3072, 4, 4]).unwrap();
        assert_eq!(evaluate(&model, &val).unwrap(), 0.25);
    }

    #[test]
    fn accuracy_ignores_dataset_order() {
        let (train, val) = tiny_data();
        let out = train_for(&train, &val);
        let order = epoch_order(val.len(), 9, 0);
        let mut data = Vec::new();
        order.iter().for_each(|&i| data.extend_from_slice(val.pixels(i)));
        let shuffled = Dataset::new(
            Array::new(val.images.shape().to_vec(), data).unwrap(),
            order.iter().map(|&i| val.labels[i]).collect(),
            4,
            val.split,
        )
        .unwrap();
        assert_eq!(evaluate(&out, &val).unwrap(), evaluate(&out, &shuffled).unwrap());
    }

    fn train_for(train_set: &Dataset, val: &Dataset) -> MlpClassifier {
        train(&small_cfg(), train_set, val, None, |_| {}).unwrap().model
    }

    #[test]
    fn overfits_eight_samples() {
        let data = generate_synthetic(8, 4, 5).unwrap();
        let cfg = TrainConfig {
            epochs: 150,
            batch_size: 8,
            augment: false,
            model_lr: 0.02,
            hidden: vec![32],
            ..TrainConfig::default()
        };
        let out = train(&cfg, &data, &data, None, |_| {}).unwrap();
        assert_eq!(out.history.last().unwrap().val_acc, 1.0);
        assert_eq!(evaluate(&out.model, &data).unwrap(), 1.0);
    }

    #[test]
    fn distillation_needs_matching_teacher() {
        let cfg = TrainConfig { kd: Some(KdSettings::default()), ..small_cfg() };
        let student = MlpClassifier::init_params(&cfg.model_dims(3072, 4), 0).unwrap();
        assert!(Trainer::new(cfg.clone(), student.clone(), RangePolicy::initial(1.0), None).is_err());
        let wrong = MlpClassifier::init_params(&[3072, 4, 3], 0).unwrap();
        assert!(Trainer::new(cfg.clone(), student.clone(), RangePolicy::initial(1.0), Some(&wrong)).is_err());
        let teacher = MlpClassifier::init_params(&[3072, 16, 4], 0).unwrap();
        assert!(Trainer::new(cfg, student, RangePolicy::initial(1.0), Some(&teacher)).is_ok());
    }

    #[test]
    fn kd_with_identical_teacher_at_alpha_one_is_zero() {
        let (train, _) = tiny_data();
        let cfg = TrainConfig { kd: Some(KdSettings { alpha: 1.0, temperature: 4.0 }), ..small_cfg() };
        let student = MlpClassifier::init_params(&cfg.model_dims(3072, 4), 0).unwrap();
        let teacher = student.clone();
        let mut t = Trainer::new(cfg, student, RangePolicy::initial(1.0), Some(&teacher)).unwrap();
        let s = t.train_step(&train, &[0, 1, 2, 3], 0, 30.0).unwrap();
        assert!(s.task_loss.abs() <= 1e-10, "{}", s.task_loss);
    }

    #[test]
    fn kd_alpha_zero_matches_plain_training() {
        let (train_set, val) = tiny_data();
        let teacher = MlpClassifier::init_params(&[3072, 16, 4], 7).unwrap();
        let kd_cfg = TrainConfig { kd: Some(KdSettings { alpha: 0.0, temperature: 4.0 }), ..small_cfg() };
        let a = train(&kd_cfg, &train_set, &val, Some(&teacher), |_| {}).unwrap();
        let b = train(&small_cfg(), &train_set, &val, None, |_| {}).unwrap();
        assert_eq!(a.records(), b.records());
    }

    #[test]
    fn non_finite_loss_aborts() {
        let (mut train, _) = tiny_data();
        train.images.data_mut()[0] = f64::NAN;
        let cfg = small_cfg();
        let model = MlpClassifier::init_params(&cfg.model_dims(3072, 4), 0).unwrap();
        let mut t = Trainer::new(cfg, model, RangePolicy::initial(1.0), None).unwrap();
        match t.train_step(&train, &[0, 1], 0, 20.0) {
            Err(Error::NonFiniteLoss(msg)) => assert!(msg.contains("delta=20")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn policy_fit_moves_toward_target() {
        let data = generate_synthetic(16, 4, 3).unwrap();
        let idx: Vec<usize> = (0..16).collect();
        let cfg = PolicyFitConfig { steps: 300, delta: 20.0, ..PolicyFitConfig::default() };
        let trace = fit_policy(&data, &idx, RangePolicy::initial(1.0), &cfg).unwrap();
        let first = trace.mean_psnr[0];
        let tail = trace.mean_psnr[250..].iter().sum::<f64>() / 50.0;
        assert!((tail - 20.0).abs() < (first - 20.0).abs());
        assert!(trace.policy.is_valid());
    }
}
