//! Run configuration: a TOML file plus `key=value` overrides.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rflcd_core::data::AugmentConfig;
use rflcd_core::model::ModelConfig;
use rflcd_core::objective::LossWeights;
use rflcd_core::optim::{Adam, Schedule};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub data: DataSection,
    pub optim: OptimSection,
    pub io: IoSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub base_width: usize,
    pub dms: bool,
    pub c2fg: bool,
    pub lf: bool,
    pub fusion: String,
    pub c2fg_top: usize,
    pub hidden_init: String,
    pub attention_ratio: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub root: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_root: Option<PathBuf>,
    pub val_fraction: f64,
    pub augment: bool,
    pub flip_prob: f64,
    pub rotate: bool,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    pub lr: f64,
    pub decay_factor: f64,
    pub decay_period: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub side_weight: f64,
    pub fused_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub output_dir: PathBuf,
    pub log_file: String,
    pub best_checkpoint: String,
    pub last_checkpoint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection::from_model(&ModelConfig::default())
    }
}

impl Default for DataSection {
    fn default() -> Self {
        let aug = AugmentConfig::default();
        DataSection {
            root: PathBuf::from("data"),
            val_root: None,
            val_fraction: 0.2,
            augment: true,
            flip_prob: aug.flip_prob,
            rotate: aug.rotate,
            noise_std: aug.noise_std,
        }
    }
}

impl Default for OptimSection {
    fn default() -> Self {
        let (adam, sched, w) = (Adam::default(), Schedule::default(), LossWeights::default());
        OptimSection {
            lr: sched.base_lr,
            decay_factor: sched.factor,
            decay_period: sched.period,
            batch_size: 4,
            epochs: 20,
            seed: 0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            weight_decay: adam.weight_decay,
            side_weight: w.side[0],
            fused_weight: w.fused,
        }
    }
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            output_dir: PathBuf::from("runs/rflcd"),
            log_file: "train_log.jsonl".into(),
            best_checkpoint: "best.ckpt".into(),
            last_checkpoint: "last.ckpt".into(),
            resume: None,
        }
    }
}

/// `(key, description)` for every configuration key, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("model.base_width", "channels at the finest encoder level; level m has base_width * 2^m"),
    ("model.dms", "supervise the side prediction of every stage"),
    ("model.c2fg", "refine side predictions with the coarse-to-fine guiding cascade"),
    ("model.lf", "fuse the side predictions with learned confidences"),
    ("model.fusion", "fusion strategy: lf_softmax, lf_max or gwf"),
    ("model.c2fg_top", "coarsest stage of the cascade (1-3); cells run below it"),
    ("model.hidden_init", "initial cascade hidden state: tanh or verbatim"),
    ("model.attention_ratio", "reduction ratio of the channel-attention perceptrons"),
    ("data.root", "dataset root: A/, B/, label/ directly, or train/ (and val/) subdirectories"),
    ("data.val_root", "separate validation directory (optional)"),
    ("data.val_fraction", "share of tiles held out for validation when the root has no split"),
    ("data.augment", "apply random flips, rotations and noise during training"),
    ("data.flip_prob", "probability of a horizontal flip"),
    ("data.rotate", "draw a random multiple of 90 degrees"),
    ("data.noise_std", "standard deviation of the Gaussian image noise"),
    ("optim.lr", "initial learning rate"),
    ("optim.decay_factor", "learning-rate multiplier applied every decay_period epochs"),
    ("optim.decay_period", "epochs between learning-rate decays"),
    ("optim.batch_size", "tiles per optimizer step"),
    ("optim.epochs", "total training epochs (0 writes the initial checkpoint only)"),
    ("optim.seed", "seed of initialization, shuffling and augmentation"),
    ("optim.beta1", "Adam first-moment decay"),
    ("optim.beta2", "Adam second-moment decay"),
    ("optim.eps", "Adam denominator epsilon"),
    ("optim.weight_decay", "decoupled weight decay"),
    ("optim.side_weight", "loss weight of every supervised side prediction"),
    ("optim.fused_weight", "loss weight of the final prediction"),
    ("io.output_dir", "directory for the log and checkpoints"),
    ("io.log_file", "per-epoch JSON-lines log, relative to output_dir"),
    ("io.best_checkpoint", "best-validation-F1 checkpoint, relative to output_dir"),
    ("io.last_checkpoint", "last-epoch checkpoint, relative to output_dir"),
    ("io.resume", "checkpoint to continue training from (optional)"),
];

/// Keys that may be absent from the serialized defaults.
const OPTIONAL_KEYS: [&str; 2] = ["data.val_root", "io.resume"];

fn flatten(table: &toml::Table, prefix: &str, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(t, &key, out),
            other => out.push((key, other.clone())),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every key with its current value rendered as TOML.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut flat = Vec::new();
        flatten(&self.to_table(), "", &mut flat);
        flat.into_iter().map(|(k, v)| (k, v.to_string())).collect()
    }

    /// Applies `key=value` overrides. Values are parsed as TOML and fall back
    /// to plain strings, so `data.root=d/train` needs no quoting.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table = self.to_table();
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
            let key = key.trim();
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            let raw = raw.trim();
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let (section, field) = key.split_once('.').expect("keys are section.field");
            let sec = table
                .entry(section)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .expect("sections are tables");
            sec.insert(field.to_string(), value);
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?;
        let bad = |key: &str, why: &str| Err(Error::Config(format!("{key}: {why}")));
        let d = &self.data;
        if !(0.0..1.0).contains(&d.val_fraction) {
            return bad("data.val_fraction", "must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&d.flip_prob) {
            return bad("data.flip_prob", "must be in [0, 1]");
        }
        if !(d.noise_std >= 0.0 && d.noise_std.is_finite()) {
            return bad("data.noise_std", "must be finite and non-negative");
        }
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return bad("optim.lr", "must be positive");
        }
        if !(o.decay_factor > 0.0 && o.decay_factor <= 1.0) {
            return bad("optim.decay_factor", "must be in (0, 1]");
        }
        if o.decay_period == 0 {
            return bad("optim.decay_period", "must be positive");
        }
        if o.batch_size == 0 {
            return bad("optim.batch_size", "must be positive");
        }
        if !(0.0..1.0).contains(&o.beta1) {
            return bad("optim.beta1", "must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&o.beta2) {
            return bad("optim.beta2", "must be in [0, 1)");
        }
        if !(o.eps > 0.0) {
            return bad("optim.eps", "must be positive");
        }
        if !(o.weight_decay >= 0.0) {
            return bad("optim.weight_decay", "must be non-negative");
        }
        self.loss_weights().validate().map_err(|e| Error::Config(format!("optim.side_weight/fused_weight: {e}")))?;
        for (key, name) in [
            ("io.log_file", &self.io.log_file),
            ("io.best_checkpoint", &self.io.best_checkpoint),
            ("io.last_checkpoint", &self.io.last_checkpoint),
        ] {
            if name.is_empty() {
                return bad(key, "must not be empty");
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let cfg = ModelConfig {
            base_width: m.base_width,
            dms: m.dms,
            c2fg: m.c2fg,
            lf: m.lf,
            fusion: m.fusion.parse().map_err(|e| Error::Config(format!("model.fusion: {e}")))?,
            c2fg_top: m.c2fg_top,
            hidden_init: m.hidden_init.parse().map_err(|e| Error::Config(format!("model.hidden_init: {e}")))?,
            attention_ratio: m.attention_ratio,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn adam(&self) -> Adam {
        let o = &self.optim;
        Adam {
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            base_lr: self.optim.lr,
            factor: self.optim.decay_factor,
            period: self.optim.decay_period,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            side: [self.optim.side_weight; 4],
            fused: self.optim.fused_weight,
        }
    }

    pub fn augment_config(&self) -> Option<AugmentConfig> {
        self.data.augment.then_some(AugmentConfig {
            flip_prob: self.data.flip_prob,
            rotate: self.data.rotate,
            noise_std: self.data.noise_std,
        })
    }

    pub fn output_path(&self, name: &str) -> PathBuf {
        self.io.output_dir.join(name)
    }
}

impl ModelSection {
    pub fn from_model(cfg: &ModelConfig) -> Self {
        ModelSection {
            base_width: cfg.base_width,
            dms: cfg.dms,
            c2fg: cfg.c2fg,
            lf: cfg.lf,
            fusion: cfg.fusion.as_str().into(),
            c2fg_top: cfg.c2fg_top,
            hidden_init: cfg.hidden_init.as_str().into(),
            attention_ratio: cfg.attention_ratio,
        }
    }
}

/// Help text listing every key with its default and description.
pub fn help_text() -> String {
    let defaults: Vec<(String, String)> = RunConfig::default().entries();
    let mut out = String::from("Configuration keys (TOML sections, or --set key=value):\n");
    for (key, doc) in KEYS {
        let default = defaults
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .unwrap_or_else(|| "(unset)".into());
        let _ = writeln!(out, "  {key} = {default}\n      {doc}");
    }
    out
}

/// Keys of the default configuration missing from [`KEYS`], and documented
/// keys the configuration does not have.
pub fn undocumented_keys() -> (Vec<String>, Vec<String>) {
    let present: Vec<String> = RunConfig::default().entries().into_iter().map(|(k, _)| k).collect();
    let missing_docs = present.iter().filter(|k| !KEYS.iter().any(|(d, _)| d == k)).cloned().collect();
    let stale = KEYS
        .iter()
        .map(|(k, _)| k.to_string())
        .filter(|k| !present.contains(k) && !OPTIONAL_KEYS.contains(&k.as_str()))
        .collect();
    (missing_docs, stale)
}
