//! Data preparation, training runs, sweeps and their on-disk artifacts.

use std::path::Path;

use rangeaug_core::data::{apply_shift, generate_synthetic, Dataset, Split};
use rangeaug_core::refmodel::MlpClassifier;
use rangeaug_core::trainer::{evaluate, steps_per_epoch, train, EpochSummary, TrainOutcome};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{CurriculumConfig, RunConfig};
use crate::csvlog::{sort_sweep, write_sweep, write_trajectory, SweepRow};
use crate::error::{write, Error, Result};
use crate::policy_file::save_policy;
use crate::pool::map_ordered;
use crate::tensorfile::load_tensorfile;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const POLICY_FILE: &str = "policy.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const DISTILL_TRAJECTORY_FILE: &str = "trajectory_distill.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SWEEP_FILE: &str = "sweep.csv";

// generated validation data and the shift draw their own seeds
const VAL_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
const SHIFT_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// Training, clean validation and shifted validation data.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub shifted: Dataset,
}

pub fn prepare_splits(cfg: &RunConfig) -> Result<Splits> {
    let seed = cfg.data_seed();
    let d = &cfg.data;
    let train = match &d.train {
        Some(p) => load_tensorfile(p)?,
        None => generate_synthetic(d.n_train, d.classes, seed)?,
    };
    let val = match &d.val {
        Some(p) => load_tensorfile(p)?,
        None => generate_synthetic(d.n_val, d.classes, seed ^ VAL_SALT)?,
    }
    .with_split(Split::Val);
    if train.image_shape() != val.image_shape() || train.classes != val.classes {
        return Err(Error::Config(format!(
            "train images {:?} with {} classes do not match validation images {:?} with {} classes",
            train.image_shape(),
            train.classes,
            val.image_shape(),
            val.classes
        )));
    }
    let shifted = apply_shift(&val, &cfg.shift()?, seed ^ SHIFT_SALT)?;
    Ok(Splits { train, val, shifted })
}

/// Loads the distillation teacher and checks it fits the data.
pub fn load_teacher(cfg: &RunConfig, splits: &Splits) -> Result<MlpClassifier> {
    let kd = cfg.kd.as_ref().ok_or_else(|| Error::Config("distillation needs kd settings".into()))?;
    let teacher = load_checkpoint(&kd.teacher)?.model;
    if teacher.input_dim() != splits.train.image_len() || teacher.classes() != splits.train.classes {
        return Err(Error::Config(format!(
            "teacher {} has dims {:?}, data needs input {} and {} classes",
            kd.teacher.display(),
            teacher.dims(),
            splits.train.image_len(),
            splits.train.classes
        )));
    }
    Ok(teacher)
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub outcome: TrainOutcome,
    pub val_acc: f64,
    pub shifted_acc: f64,
    pub steps: u64,
}

impl RunReport {
    pub fn final_epoch(&self) -> Option<&EpochSummary> {
        self.outcome.history.last()
    }
}

#[derive(Serialize)]
struct Summary {
    seed: u64,
    epochs: usize,
    steps: u64,
    final_delta: Option<f64>,
    mean_psnr_final: Option<f64>,
    val_acc: f64,
    shifted_acc: f64,
}

pub fn train_run(
    cfg: &RunConfig,
    splits: &Splits,
    teacher: Option<&MlpClassifier>,
    on_epoch: impl FnMut(&EpochSummary),
) -> Result<RunReport> {
    let tc = cfg.train_config()?;
    let outcome = train(&tc, &splits.train, &splits.val, teacher, on_epoch)?;
    let steps = (cfg.epochs * steps_per_epoch(splits.train.len(), cfg.batch_size)) as u64;
    Ok(RunReport {
        val_acc: evaluate(&outcome.model, &splits.val)?,
        shifted_acc: evaluate(&outcome.model, &splits.shifted)?,
        outcome,
        steps,
    })
}

/// Writes checkpoint, policy, trajectory, summary and the resolved config into `dir`.
pub fn write_run(dir: &Path, cfg: &RunConfig, report: &RunReport, trajectory_file: &str) -> Result<()> {
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &report.outcome.model, cfg.seed, report.steps)?;
    save_policy(&dir.join(POLICY_FILE), &report.outcome.policy)?;
    write_trajectory(&dir.join(trajectory_file), &report.outcome.records())?;
    let last = report.final_epoch();
    let summary = Summary {
        seed: cfg.seed,
        epochs: cfg.epochs,
        steps: report.steps,
        final_delta: last.map(|e| e.delta),
        mean_psnr_final: last.map(|e| e.mean_psnr),
        val_acc: report.val_acc,
        shifted_acc: report.shifted_acc,
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write(&dir.join(SUMMARY_FILE), text.as_bytes())?;
    write(&dir.join(CONFIG_FILE), cfg.to_json().as_bytes())
}

/// One training run per candidate curriculum, candidates in parallel.
pub fn run_sweep(cfg: &RunConfig, splits: &Splits, threads: usize) -> Result<Vec<(CurriculumConfig, RunReport)>> {
    if cfg.sweep.is_empty() {
        return Err(Error::Config("sweep needs at least one candidate".into()));
    }
    let configs: Vec<RunConfig> = cfg
        .sweep
        .iter()
        .map(|c| {
            let run = RunConfig { curriculum: c.clone(), ..cfg.clone() };
            run.train_config().map(|_| run)
        })
        .collect::<Result<_>>()?;
    let reports = map_ordered(&configs, threads, |run| train_run(run, splits, None, |_| {}));
    cfg.sweep.iter().cloned().zip(reports).map(|(c, r)| r.map(|r| (c, r))).collect()
}

pub fn sweep_rows(results: &[(CurriculumConfig, RunReport)]) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = results
        .iter()
        .map(|(c, r)| SweepRow {
            candidate: c.label(),
            delta_start: c.delta_start,
            delta_end: c.delta_end,
            kind: c.kind.clone(),
            val_acc: r.val_acc,
            mean_psnr_final: r.final_epoch().map_or(f64::NAN, |e| e.mean_psnr),
        })
        .collect();
    sort_sweep(&mut rows);
    rows
}

/// Writes `sweep.csv` and one artifact directory per candidate.
pub fn write_sweep_artifacts(cfg: &RunConfig, results: &[(CurriculumConfig, RunReport)]) -> Result<Vec<SweepRow>> {
    for (c, report) in results {
        let run = RunConfig { curriculum: c.clone(), ..cfg.clone() };
        write_run(&cfg.out_dir.join(c.label()), &run, report, TRAJECTORY_FILE)?;
    }
    let rows = sweep_rows(results);
    write_sweep(&cfg.out_dir.join(SWEEP_FILE), &rows)?;
    Ok(rows)
}
