use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{BaselineKind, DecSettings, EvalConfig, ExperimentConfig, VanillaSettings};
use crate::bench::BenchConfig;
use crate::canon::ToyArch;
use crate::checks::{Claim1Config, GroupCheckConfig};
use crate::datagen::ComposeConfig;
use crate::error::{Error, Result};
use crate::nn::TrainConfig;
use crate::warp::WarpSampler;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub compose: ComposeConfig,
    pub train_size: usize,
    pub test_size: usize,
    /// Directory holding the four MNIST IDX files; procedural glyphs are
    /// used when unset or when the files are missing.
    pub mnist_dir: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            compose: ComposeConfig::default(),
            train_size: 6000,
            test_size: 10_000,
            mnist_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: ToyArch,
    pub kind: BaselineKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: ToyArch::default(),
            kind: BaselineKind::Augmented,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub pretrain: TrainConfig,
    /// `aux_weight` is the λ of the loss baselines.
    pub finetune: TrainConfig,
    pub augment: WarpSampler,
    pub augment_prob: f64,
    pub val_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            pretrain: e.pretrain,
            finetune: e.finetune,
            augment: e.augment,
            augment_prob: e.augment_prob,
            val_size: e.val_size,
        }
    }
}

/// Inputs resolved relative to the working directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Dataset directory written by `gen`.
    pub data: Option<String>,
    /// Augmented checkpoint directory; required to fine-tune other kinds.
    pub augmented: Option<String>,
    /// Checkpoint directory evaluated by `eval`.
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    pub images: usize,
    pub sampler: WarpSampler,
    /// Grid lines drawn per axis.
    pub grid_lines: usize,
    /// Nearest-neighbour magnification of the output.
    pub zoom: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            images: 4,
            sampler: WarpSampler {
                concentration: 2.0,
                ..WarpSampler::default()
            },
            grid_lines: 8,
            zoom: 2,
        }
    }
}

/// Every command reads the sections it needs from one file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub dec: DecSettings,
    pub vanilla: VanillaSettings,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
    pub check_group: GroupCheckConfig,
    pub claim1: Claim1Config,
    pub demo: DemoConfig,
    pub bench: BenchConfig,
}

/// Keys of `user` with no counterpart in `schema`, as dotted paths. Objects
/// carrying a `mode` tag are enum values and are left to the deserializer.
fn unknown_keys(user: &Value, schema: &Value, path: &str, out: &mut Vec<String>) {
    let (Value::Object(u), Value::Object(s)) = (user, schema) else {
        return;
    };
    if s.contains_key("mode") {
        return;
    }
    for (k, v) in u {
        let p = if path.is_empty() {
            k.clone()
        } else {
            format!("{path}.{k}")
        };
        match s.get(k) {
            Some(sv) => unknown_keys(v, sv, &p, out),
            None => out.push(format!("unknown key {p}")),
        }
    }
}

/// Sets `path` (dotted) in `root` to `value`, parsed as JSON when possible
/// and as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(vec![format!("--set {assignment:?} is not key=value")]))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(vec![format!("--set path {path:?} has an empty segment")]));
        }
        if !cur.is_object() {
            *cur = Value::Object(Default::default());
        }
        let obj = cur.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one segment")
}

impl RunConfig {
    /// Parses a config document with `--set` overrides applied, reporting
    /// every unknown key and every invalid setting at once.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Value = if text.trim().is_empty() {
            Value::Object(Default::default())
        } else {
            serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("config is not valid JSON: {e}")]))?
        };
        if !doc.is_object() {
            return Err(Error::Config(vec!["config must be a JSON object".into()]));
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let schema = serde_json::to_value(Self::default())?;
        let mut errors = Vec::new();
        unknown_keys(&doc, &schema, "", &mut errors);
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        let mut check = |key: &str, r: Result<()>| {
            if let Err(e) = r {
                errors.push(format!("{key}: {e}"));
            }
        };
        check("data.compose", self.data.compose.validate());
        check("train.pretrain", self.train.pretrain.validate());
        check("train.finetune", self.train.finetune.validate());
        check("train.augment", self.train.augment.validate());
        check("eval.sampler", self.eval.sampler.validate());
        check("demo.sampler", self.demo.sampler.validate());
        check("dec.anderson", self.dec.anderson.validate());
        if self.data.compose.classes() != self.model.arch.classes {
            errors.push(format!(
                "model.arch.classes: {} classes but data.compose.digits = {} gives {}",
                self.model.arch.classes,
                self.data.compose.digits,
                self.data.compose.classes()
            ));
        }
        let (c, h, w) = (
            self.data.compose.canvas,
            self.model.arch.input.0,
            self.model.arch.input.1,
        );
        if (h, w) != (c, c) || self.model.arch.input.2 != 1 {
            errors.push(format!(
                "model.arch.input: expected ({c}, {c}, 1) for data.compose.canvas = {c}"
            ));
        }
        if !(0.0..=1.0).contains(&self.train.augment_prob) {
            errors.push("train.augment_prob: must lie in [0, 1]".into());
        }
        if self.dec.grid == 0 {
            errors.push("dec.grid: must be positive".into());
        }
        if !(self.dec.lr_scale > 0.0) {
            errors.push("dec.lr_scale: must be positive".into());
        }
        if self.eval.inv_variants == 0 || self.eval.n_warps == 0 {
            errors.push("eval: inv_variants and n_warps must be positive".into());
        }
        if self.bench.batch == 0 || self.bench.dec_iters == 0 || self.bench.gd_steps == 0 {
            errors.push("bench: batch, dec_iters and gd_steps must be positive".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            arch: self.model.arch.clone(),
            pretrain: self.train.pretrain.clone(),
            finetune: self.train.finetune.clone(),
            augment: self.train.augment,
            augment_prob: self.train.augment_prob,
            dec: self.dec.clone(),
            vanilla: self.vanilla.clone(),
            eval: self.eval.clone(),
            val_size: self.train.val_size,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
