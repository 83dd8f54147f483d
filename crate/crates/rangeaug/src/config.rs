//! Run configuration: a JSON document mirroring the trainer settings,
//! with command-line overrides addressed by dotted key.

use std::path::{Path, PathBuf};

use rangeaug_core::data::ShiftSpec;
use rangeaug_core::schedule::CurriculumKind;
use rangeaug_core::trainer::{CurriculumSpec, KdSettings, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{read, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    /// `fixed`, `linear` or `cosine`.
    pub kind: String,
    pub delta_start: f64,
    pub delta_end: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self { kind: "cosine".into(), delta_start: 40.0, delta_end: 10.0 }
    }
}

impl CurriculumConfig {
    pub fn fixed(delta: f64) -> Self {
        Self { kind: "fixed".into(), delta_start: delta, delta_end: delta }
    }

    pub fn spec(&self) -> Result<CurriculumSpec> {
        let kind = CurriculumKind::from_name(&self.kind).ok_or_else(|| {
            Error::Config(format!("curriculum.kind {:?} is not one of fixed, linear, cosine", self.kind))
        })?;
        Ok(CurriculumSpec { kind, delta_start: self.delta_start, delta_end: self.delta_end })
    }

    /// Short label such as `fixed-20` or `cosine-40-10`.
    pub fn label(&self) -> String {
        if self.kind == "fixed" {
            format!("fixed-{}", self.delta_end)
        } else {
            format!("{}-{}-{}", self.kind, self.delta_start, self.delta_end)
        }
    }

    /// Parses `fixed:20` or `cosine:40:10` / `linear:40:10`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::Config(format!("sweep candidate {text:?} is not kind:delta or kind:start:end"));
        let parts: Vec<&str> = text.trim().split(':').collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        match parts.as_slice() {
            [kind, d] => Ok(Self { kind: kind.to_string(), delta_start: num(d)?, delta_end: num(d)? }),
            [kind, s, e] => Ok(Self { kind: kind.to_string(), delta_start: num(s)?, delta_end: num(e)? }),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdConfig {
    /// Teacher checkpoint path.
    pub teacher: PathBuf,
    pub alpha: f64,
    pub temperature: f64,
}

impl Default for KdConfig {
    fn default() -> Self {
        let kd = KdSettings::default();
        Self { teacher: PathBuf::from("teacher.ckpt"), alpha: kd.alpha, temperature: kd.temperature }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    pub brightness: Vec<f64>,
    pub contrast: Vec<f64>,
    pub noise: Vec<f64>,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self::from(&ShiftSpec::evaluation())
    }
}

impl From<&ShiftSpec> for ShiftConfig {
    fn from(s: &ShiftSpec) -> Self {
        Self {
            brightness: s.brightness_factors.clone(),
            contrast: s.contrast_factors.clone(),
            noise: s.noise_stds.clone(),
        }
    }
}

impl ShiftConfig {
    pub fn spec(&self) -> ShiftSpec {
        ShiftSpec {
            brightness_factors: self.brightness.clone(),
            contrast_factors: self.contrast.clone(),
            noise_stds: self.noise.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `.ratf` training set; synthetic data is generated when absent.
    pub train: Option<PathBuf>,
    /// `.ratf` validation set; synthetic data is generated when absent.
    pub val: Option<PathBuf>,
    pub n_train: usize,
    pub n_val: usize,
    pub classes: usize,
    /// Seed for generated data and the shift; defaults to the run seed.
    pub seed: Option<u64>,
    pub shift: ShiftConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            val: None,
            n_train: 4000,
            n_val: 1000,
            classes: 4,
            seed: None,
            shift: ShiftConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub model_lr: f64,
    pub policy_lr: f64,
    pub momentum: f64,
    pub lambda: f64,
    pub beta: f64,
    pub curriculum: CurriculumConfig,
    pub p_apply: f64,
    pub joint_mode: bool,
    pub augment: bool,
    pub hidden: Vec<usize>,
    pub kd: Option<KdConfig>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    /// Sweep candidates.
    pub sweep: Vec<CurriculumConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            model_lr: t.model_lr,
            policy_lr: t.policy_lr,
            momentum: t.momentum,
            lambda: t.lambda,
            beta: t.beta,
            curriculum: CurriculumConfig {
                kind: t.curriculum.kind.name().into(),
                delta_start: t.curriculum.delta_start,
                delta_end: t.curriculum.delta_end,
            },
            p_apply: t.p_apply,
            joint_mode: t.joint_mode,
            augment: t.augment,
            hidden: t.hidden,
            kd: None,
            seed: t.seed,
            out_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            sweep: [5.0, 10.0, 20.0, 30.0].map(CurriculumConfig::fixed).to_vec(),
        }
    }
}

/// Every key accepted as an override, in `--help` order.
pub const KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "model_lr",
    "policy_lr",
    "momentum",
    "lambda",
    "beta",
    "curriculum.kind",
    "curriculum.delta_start",
    "curriculum.delta_end",
    "p_apply",
    "joint_mode",
    "augment",
    "hidden",
    "kd.teacher",
    "kd.alpha",
    "kd.temperature",
    "seed",
    "out_dir",
    "data.train",
    "data.val",
    "data.n_train",
    "data.n_val",
    "data.classes",
    "data.seed",
    "data.shift.brightness",
    "data.shift.contrast",
    "data.shift.noise",
    "sweep",
];

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let bytes = read(p)?;
                serde_json::from_slice(&bytes).map_err(|e| Error::format(p, format!("not valid JSON: {e}")))?
            }
            None => Value::Object(Default::default()),
        };
        for (key, raw) in overrides {
            set_dotted(&mut doc, key, raw)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| {
            // name the offending override when one fails on its own
            for (key, raw) in overrides {
                let mut alone = Value::Object(Default::default());
                if set_dotted(&mut alone, key, raw).is_ok() {
                    if let Err(e) = serde_json::from_value::<RunConfig>(alone) {
                        return Error::Config(format!("{key} = {raw:?}: {e}"));
                    }
                }
            }
            let origin = path.map_or("overrides".to_string(), |p| p.display().to_string());
            Error::Config(format!("{origin}: {e}"))
        })?;
        cfg.train_config()?;
        cfg.shift()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            model_lr: self.model_lr,
            policy_lr: self.policy_lr,
            momentum: self.momentum,
            lambda: self.lambda,
            beta: self.beta,
            curriculum: self.curriculum.spec()?,
            p_apply: self.p_apply,
            joint_mode: self.joint_mode,
            augment: self.augment,
            hidden: self.hidden.clone(),
            kd: self.kd.as_ref().map(|k| KdSettings { alpha: k.alpha, temperature: k.temperature }),
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn shift(&self) -> Result<ShiftSpec> {
        let spec = self.data.shift.spec();
        spec.validate()?;
        Ok(spec)
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Sets `key` (dotted path) in `doc`. Values parse as JSON when they can and
/// fall back to plain strings; `hidden` and `sweep` also take comma lists.
pub fn set_dotted(doc: &mut Value, key: &str, raw: &str) -> Result<()> {
    if !KEYS.contains(&key) {
        return Err(Error::Config(format!("unknown key {key:?}")));
    }
    let value = match key {
        "hidden" if !raw.trim_start().starts_with('[') => {
            let dims: std::result::Result<Vec<u64>, _> =
                raw.split(',').filter(|s| !s.trim().is_empty()).map(|s| s.trim().parse()).collect();
            Value::from(dims.map_err(|_| Error::Config(format!("hidden: {raw:?} is not a list of widths")))?)
        }
        "sweep" if !raw.trim_start().starts_with('[') => {
            let cands: Vec<CurriculumConfig> = raw.split(',').map(CurriculumConfig::parse).collect::<Result<_>>()?;
            serde_json::to_value(cands).expect("candidates serialize")
        }
        _ => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())),
    };
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        node = node.as_object_mut().unwrap().entry(part.to_string()).or_insert(Value::Null);
    }
    if !node.is_object() {
        *node = Value::Object(Default::default());
    }
    node.as_object_mut().unwrap().insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::load(None, &[]).unwrap(), cfg);
    }

    #[test]
    fn dotted_overrides() {
        let cfg = RunConfig::load(
            None,
            &ov(&[
                ("curriculum.delta_end", "5"),
                ("joint_mode", "false"),
                ("hidden", "16,8"),
                ("out_dir", "runs/a b"),
                ("kd.alpha", "1"),
                ("sweep", "fixed:5,cosine:40:10"),
                ("data.shift.noise", "[0.1]"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.curriculum.delta_end, 5.0);
        assert_eq!(cfg.curriculum.delta_start, 40.0);
        assert!(!cfg.joint_mode);
        assert_eq!(cfg.hidden, vec![16, 8]);
        assert_eq!(cfg.out_dir, PathBuf::from("runs/a b"));
        assert_eq!(cfg.kd.as_ref().unwrap().alpha, 1.0);
        assert_eq!(cfg.kd.as_ref().unwrap().temperature, 4.0);
        assert_eq!(cfg.sweep[1].label(), "cosine-40-10");
        assert_eq!(cfg.data.shift.noise, vec![0.1]);
    }

    #[test]
    fn schema_violations() {
        assert!(RunConfig::load(None, &ov(&[("nope", "1")])).is_err());
        assert!(RunConfig::load(None, &ov(&[("epochs", "many")])).is_err());
        assert!(RunConfig::load(None, &ov(&[("batch_size", "0")])).is_err());
        assert!(RunConfig::load(None, &ov(&[("curriculum.kind", "step")])).is_err());
        assert!(RunConfig::load(None, &ov(&[("data.shift.brightness", "[20]")])).is_err());
        assert!(RunConfig::load(None, &ov(&[("sweep", "fixed")])).is_err());
    }
}
