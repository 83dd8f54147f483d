//! Command-line front end. `run` returns the process exit code:
//! 0 on success, 1 for invalid input, 2 when a run aborts.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};
use rangeaug_core::augops::augment_image;
use rangeaug_core::data::{apply_shift, generate_synthetic, Dataset};
use rangeaug_core::gradsuite::{run_suite, SuiteConfig};
use rangeaug_core::policy::sample_image;
use rangeaug_core::simloss::psnr_value;
use rangeaug_core::trainer::EpochSummary;
use rangeaug_core::Array;

use crate::config::{RunConfig, KEYS};
use crate::error::{Error, Result};
use crate::policy_file::load_policy;
use crate::pool::thread_count;
use crate::ppm::{load_ppm, save_ppm};
use crate::runner::{
    load_teacher, prepare_splits, run_sweep, train_run, write_run, write_sweep_artifacts, DISTILL_TRAJECTORY_FILE,
    TRAJECTORY_FILE,
};
use crate::tensorfile::{load_tensorfile, save_tensorfile};

/// Tolerance the `gradcheck` subcommand enforces.
pub const GRADCHECK_TOL: f64 = 1e-3;

#[derive(Parser, Debug)]
#[command(name = "rangeaug", version, about = "Learn augmentation magnitude ranges against a PSNR target")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train a classifier and its augmentation ranges.
    Train(RunArgs),
    /// Train once per candidate target schedule and rank by validation accuracy.
    Sweep(RunArgs),
    /// Train a student against a teacher checkpoint (needs kd.teacher).
    Distill(RunArgs),
    /// Apply a saved policy to one image and report the PSNR of each sample.
    Augment(AugmentArgs),
    /// Finite-difference check of every differentiable pipeline.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset as a tensor file.
    GenData(GenDataArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON config; defaults apply to missing keys.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long, value_name = "PATH")]
    policy: PathBuf,
    /// `.ppm` image, or a tensor file together with `--index`.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random points per pipeline.
    #[arg(long, default_value_t = 20)]
    points: usize,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[arg(long, default_value_t = 4000)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Apply the evaluation shift to the generated images.
    #[arg(long)]
    shifted: bool,
}

/// One optional `--<dotted.key> VALUE` flag per config key.
#[derive(Debug, Default)]
struct Overrides(Vec<(String, String)>);

fn key_help(key: &str) -> &'static str {
    match key {
        "epochs" => "training epochs",
        "batch_size" => "images per step",
        "model_lr" => "classifier learning rate",
        "policy_lr" => "range learning rate",
        "momentum" => "SGD momentum for both parameter sets",
        "lambda" => "weight of the PSNR-target loss",
        "beta" => "smooth-L1 transition point in dB",
        "curriculum.kind" => "fixed, linear or cosine",
        "curriculum.delta_start" => "target PSNR at the first step",
        "curriculum.delta_end" => "target PSNR at the last step",
        "p_apply" => "probability each op is applied",
        "joint_mode" => "let the task loss reach the ranges",
        "augment" => "false trains without augmentation",
        "hidden" => "hidden widths, comma separated",
        "kd.teacher" => "teacher checkpoint",
        "kd.alpha" => "weight of the softened KL term",
        "kd.temperature" => "softening temperature",
        "seed" => "run seed",
        "out_dir" => "artifact directory",
        "data.train" => "training tensor file (generated if absent)",
        "data.val" => "validation tensor file (generated if absent)",
        "data.n_train" => "generated training images",
        "data.n_val" => "generated validation images",
        "data.classes" => "generated classes, 2 to 4",
        "data.seed" => "data seed, defaults to the run seed",
        "data.shift.brightness" => "shift brightness factors, JSON list",
        "data.shift.contrast" => "shift contrast factors, JSON list",
        "data.shift.noise" => "shift noise stds, JSON list",
        "sweep" => "candidates such as fixed:5,cosine:40:10",
        _ => "",
    }
}

impl FromArgMatches for Overrides {
    fn from_arg_matches(m: &ArgMatches) -> std::result::Result<Self, clap::Error> {
        let mut out = Self::default();
        out.update_from_arg_matches(m)?;
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> std::result::Result<(), clap::Error> {
        for key in KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                self.0.push((key.to_string(), v.clone()));
            }
        }
        Ok(())
    }
}

impl Args for Overrides {
    fn augment_args(cmd: Command) -> Command {
        KEYS.iter().fold(cmd.next_help_heading("Config keys"), |cmd, &key| {
            cmd.arg(Arg::new(key).long(key).value_name("VALUE").help(key_help(key)))
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

/// Failure of a subcommand, tagged with its exit code.
enum Failure {
    Invalid(Error),
    Abort(Error),
}

fn invalid<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Invalid)
}

fn abort<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Abort)
}

pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Cmd::Train(a) => cmd_train(a, false, out, err),
        Cmd::Distill(a) => cmd_train(a, true, out, err),
        Cmd::Sweep(a) => cmd_sweep(a, out),
        Cmd::Augment(a) => cmd_augment(a, out),
        Cmd::Gradcheck(a) => cmd_gradcheck(a, out),
        Cmd::GenData(a) => cmd_gen_data(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Invalid(e)) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
        Err(Failure::Abort(e)) => {
            let _ = writeln!(err, "aborted: {e}");
            2
        }
    }
}

fn load_config(a: &RunArgs) -> Result<RunConfig> {
    RunConfig::load(a.config.as_deref(), &a.overrides.0)
}

fn epoch_line(e: &EpochSummary) -> String {
    let [b, c, n] = e.policy.ranges;
    format!(
        "epoch {:>3} delta {:.3} psnr {:.3} loss {:.4} train_acc {:.4} val_acc {:.4} \
         brightness [{:.4}, {:.4}] contrast [{:.4}, {:.4}] noise [{:.4}, {:.4}]",
        e.epoch, e.delta, e.mean_psnr, e.train_loss, e.train_acc, e.val_acc, b.a, b.b, c.a, c.b, n.a, n.b
    )
}

fn cmd_train(a: RunArgs, distill: bool, out: &mut dyn Write, err: &mut dyn Write) -> std::result::Result<(), Failure> {
    let mut cfg = invalid(load_config(&a))?;
    if distill && cfg.kd.is_none() {
        return Err(Failure::Invalid(Error::Config("distill needs kd.teacher".into())));
    }
    if !distill {
        // kd settings only take effect under `distill`
        cfg.kd = None;
    }
    let splits = invalid(prepare_splits(&cfg))?;
    let teacher = if distill { Some(invalid(load_teacher(&cfg, &splits))?) } else { None };
    let report = abort(train_run(&cfg, &splits, teacher.as_ref(), |e| {
        let _ = writeln!(err, "{}", epoch_line(e));
    }))?;
    let file = if distill { DISTILL_TRAJECTORY_FILE } else { TRAJECTORY_FILE };
    abort(write_run(&cfg.out_dir, &cfg, &report, file))?;
    let _ = writeln!(
        out,
        "val_acc {:.4} shifted_acc {:.4} artifacts {}",
        report.val_acc,
        report.shifted_acc,
        cfg.out_dir.display()
    );
    Ok(())
}

fn cmd_sweep(a: RunArgs, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    let mut cfg = invalid(load_config(&a))?;
    cfg.kd = None;
    let threads = invalid(thread_count())?;
    let splits = invalid(prepare_splits(&cfg))?;
    let results = abort(run_sweep(&cfg, &splits, threads))?;
    let rows = abort(write_sweep_artifacts(&cfg, &results))?;
    for r in rows {
        let _ = writeln!(out, "{:<16} val_acc {:.4} mean_psnr_final {:.3}", r.candidate, r.val_acc, r.mean_psnr_final);
    }
    Ok(())
}

fn load_input(path: &Path, index: usize) -> Result<Array> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
        return load_ppm(path);
    }
    let data: Dataset = load_tensorfile(path)?;
    if index >= data.len() {
        return Err(Error::Config(format!("--index {index} is past the {} images in {}", data.len(), path.display())));
    }
    Ok(data.image(index))
}

fn cmd_augment(a: AugmentArgs, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    let policy = invalid(load_policy(&a.policy))?;
    let image = invalid(load_input(&a.input, a.index))?;
    if image.shape().len() != 3 || image.shape()[0] != 3 {
        return Err(Failure::Invalid(Error::Config(format!("input shape {:?} is not [3, h, w]", image.shape()))));
    }
    for k in 0..a.samples {
        let s = sample_image(&policy, a.seed, 0, k, image.len());
        let aug = abort(augment_image(&image, s.m, s.mask, &s.z).map_err(Error::from))?;
        let name = format!("aug_{k:04}.ppm");
        abort(save_ppm(&a.out.join(&name), &aug))?;
        let _ = writeln!(
            out,
            "{name} psnr {:.4} brightness {:.6} contrast {:.6} noise {:.6}",
            psnr_value(image.data(), aug.data()),
            s.m[0],
            s.m[1],
            s.m[2]
        );
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    if a.points == 0 {
        return Err(Failure::Invalid(Error::Config("--points must be positive".into())));
    }
    let cfg = SuiteConfig { points: a.points, seed: a.seed, ..SuiteConfig::default() };
    let reports = abort(run_suite(&cfg).map_err(Error::from))?;
    let mut worst = 0.0f64;
    for r in &reports {
        worst = worst.max(r.max_rel_err);
        let _ = writeln!(
            out,
            "{:<11} max_rel_err {:.3e} coordinates {} worst_point {}",
            r.pipeline.name(),
            r.max_rel_err,
            r.coordinates,
            r.worst_point
        );
    }
    let _ = writeln!(out, "overall max_rel_err {worst:.3e} (tolerance {GRADCHECK_TOL:e})");
    if worst > GRADCHECK_TOL {
        return Err(Failure::Abort(Error::Config(format!("gradient mismatch {worst:.3e} exceeds {GRADCHECK_TOL:e}"))));
    }
    Ok(())
}

fn cmd_gen_data(a: GenDataArgs, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    let mut data = invalid(generate_synthetic(a.n, a.classes, a.seed).map_err(Error::from))?;
    if a.shifted {
        let spec = crate::config::ShiftConfig::default().spec();
        data = abort(apply_shift(&data, &spec, a.seed).map_err(Error::from))?;
    }
    abort(save_tensorfile(&a.out, &data))?;
    let _ = writeln!(out, "wrote {} images of {:?} to {}", data.len(), data.image_shape(), a.out.display());
    Ok(())
}
