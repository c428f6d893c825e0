//! The experiment configuration: JSON file, `key=value` overrides, the seed
//! environment variable, and a provenance label for every field.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::flow::{PretrainConfig, SdeConfig, TimeGrid};
use crate::io::read_to_string;
use crate::nnet::{Activation, AdamW, MlpConfig};
use crate::rewards::NUM_CHANNELS;
use crate::rlcore::{ClipConfig, FusionConfig, RlSetup, Variant};
use crate::rng::NoiseStream;
use crate::toy::ToyTask;
use crate::treesampler::{WindowSchedule, WrapMode};

pub const SEED_ENV: &str = "TREERPO_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub weights: [f64; NUM_CHANNELS],
}

impl Default for RewardSection {
    fn default() -> Self {
        Self { weights: [1.0; NUM_CHANNELS] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub time_features: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = MlpConfig::default();
        Self {
            hidden_dims: m.hidden_dims,
            activation: m.activation,
            time_features: m.time_features,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub samples_per_class: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        Self {
            steps: p.steps,
            batch_size: p.batch_size,
            lr: p.lr,
            weight_decay: p.weight_decay,
            samples_per_class: 8192,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub samples_per_class: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { samples_per_class: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub depth: usize,
    pub beta: f64,
    pub eta: f64,
    pub eps_low: f64,
    pub eps_high: f64,
    pub clip_clamp: bool,
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub prompts_per_iter: usize,
    pub trees_per_prompt: usize,
    pub a: f64,
    pub t_min: f64,
    pub sigma_t_max: f64,
    pub seed: u64,
    pub wrap: WrapMode,
    /// `None` sweeps every window position once over the run.
    pub shift_interval: Option<usize>,
    pub shift_stride: usize,
    pub checkpoint_every: usize,
    pub reward: RewardSection,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub task: ToyTask,
    pub eval: EvalSection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let sde = SdeConfig::default();
        let clip = ClipConfig::default();
        Self {
            steps: 25,
            depth: sde.depth,
            beta: sde.beta,
            eta: clip.eta,
            eps_low: clip.eps_low,
            eps_high: clip.eps_high,
            clip_clamp: clip.clamp,
            lambda: FusionConfig::default().lambda,
            lr: 5e-6,
            weight_decay: 1e-4,
            iterations: 100,
            prompts_per_iter: 16,
            trees_per_prompt: 1,
            a: sde.a,
            t_min: sde.t_min,
            sigma_t_max: sde.sigma_t_max,
            seed: 0,
            wrap: WrapMode::Cycle,
            shift_interval: None,
            shift_stride: 1,
            checkpoint_every: 0,
            reward: RewardSection::default(),
            model: ModelSection::default(),
            pretrain: PretrainSection::default(),
            task: ToyTask::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Where each default comes from. Keys are dotted JSON paths.
pub const PROVENANCE: &[(&str, &str)] = &[
    ("steps", "published: T = 25 sampling steps"),
    ("depth", "published: tree depth d = 4"),
    ("beta", "published: noise growth beta = 0.7"),
    ("eta", "published: reward sensitivity eta = 0.5"),
    ("eps_low", "published: eps_low = 5e-5"),
    ("eps_high", "published: eps_high = 5e-3"),
    ("clip_clamp", "local: clamp eps into [eps_low, eps_high] for negative rewards"),
    ("lambda", "published: fusion weight lambda = 0.02"),
    ("lr", "published: learning rate 5e-6"),
    ("weight_decay", "published: weight decay 1e-4"),
    ("iterations", "local: 100 iterations at desk scale"),
    ("prompts_per_iter", "published: global batch size 16"),
    ("trees_per_prompt", "local: one tree per prompt"),
    ("a", "local: SDE noise level a = 0.7"),
    ("t_min", "local: time clamp 1e-3"),
    ("sigma_t_max", "local: kernel noise evaluated at min(t, 0.96)"),
    ("seed", "local: fixed seed, overridable by TREERPO_SEED"),
    ("wrap", "local: window restarts after the last position"),
    ("shift_interval", "local: null sweeps every window position once per run"),
    ("shift_stride", "local: window moves one step at a time"),
    ("checkpoint_every", "local: 0 writes only the final checkpoint"),
    ("reward.weights", "published: reward weighting 1:1:1"),
    ("model.hidden_dims", "local: two hidden layers of width 64"),
    ("model.activation", "local: tanh"),
    ("model.time_features", "local: 8 sinusoidal time features"),
    ("pretrain.steps", "local: 3000 pretraining steps"),
    ("pretrain.batch_size", "local: pretraining batch 256"),
    ("pretrain.lr", "local: pretraining learning rate 1e-3"),
    ("pretrain.weight_decay", "local: pretraining weight decay 1e-4"),
    ("pretrain.samples_per_class", "local: 8192 training points per class"),
    ("task.num_classes", "local: 4 mixture components"),
    ("task.radius", "local: component means on a circle of radius 2"),
    ("task.std", "local: component std 0.25"),
    ("eval.samples_per_class", "local: 500 evaluation samples per class"),
];

fn config_error(what: &str, e: serde_json::Error) -> Error {
    Error::Config(format!("{what}: {e} (line {}, column {})", e.line(), e.column()))
}

/// Parses `value` as JSON, falling back to a bare string.
fn parse_override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{}` is not a section", parts[..i].join("."))))?;
        if !obj.contains_key(*part) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.get_mut(*part).expect("checked above");
    }
    Err(Error::Config("empty override key".into()))
}

impl TrainConfig {
    /// Reads `path` (defaults if `None`), applies `key=value` overrides in
    /// order, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => {
                let text = read_to_string(p)?;
                serde_json::from_str::<TrainConfig>(&text).map_err(|e| config_error(&p.display().to_string(), e))?
            }
            None => TrainConfig::default(),
        };
        let cfg = base.with_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut value = serde_json::to_value(self)?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_path(&mut value, key.trim(), parse_override_value(raw.trim()))?;
        }
        serde_json::from_value(value).map_err(|e| Error::Config(format!("after overrides: {e}")))
    }

    /// Applies `TREERPO_SEED` when set.
    pub fn with_env_seed(mut self, env: Option<&str>) -> Result<Self> {
        if let Some(raw) = env {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{raw}` is not an unsigned integer")))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.time_grid()?;
        self.sde_config().validate()?;
        self.clip_config().validate()?;
        self.mlp_config().validate()?;
        self.window_schedule()?;
        if self.prompts_per_iter == 0 || self.trees_per_prompt == 0 {
            return Err(Error::Config("prompts_per_iter and trees_per_prompt must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0 && self.pretrain.lr >= 0.0) {
            return Err(Error::Config("learning rates and weight decay must be >= 0".into()));
        }
        if self.reward.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("reward weights must be finite".into()));
        }
        if self.pretrain.batch_size == 0 || self.pretrain.samples_per_class == 0 {
            return Err(Error::Config("pretraining batch and data size must be >= 1".into()));
        }
        if !(self.task.std > 0.0 && self.task.num_classes > 0) {
            return Err(Error::Config("task needs at least one class and std > 0".into()));
        }
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.steps, self.t_min)
    }

    pub fn sde_config(&self) -> SdeConfig {
        SdeConfig {
            a: self.a,
            t_min: self.t_min,
            beta: self.beta,
            depth: self.depth,
            sigma_t_max: self.sigma_t_max,
        }
    }

    pub fn clip_config(&self) -> ClipConfig {
        ClipConfig {
            eps_low: self.eps_low,
            eps_high: self.eps_high,
            eta: self.eta,
            clamp: self.clip_clamp,
        }
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            num_classes: self.task.num_classes,
            hidden_dims: self.model.hidden_dims.clone(),
            activation: self.model.activation,
            time_features: self.model.time_features,
            ..MlpConfig::default()
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            steps: self.pretrain.steps,
            batch_size: self.pretrain.batch_size,
            lr: self.pretrain.lr,
            weight_decay: self.pretrain.weight_decay,
            t_min: self.t_min,
            seed: self.seed,
        }
    }

    pub fn window_schedule(&self) -> Result<WindowSchedule> {
        let interval = self
            .shift_interval
            .unwrap_or_else(|| WindowSchedule::default_interval(self.iterations, self.steps, self.depth));
        WindowSchedule::new(self.steps, self.depth, interval, self.shift_stride, self.wrap)
    }

    pub fn rl_setup(&self, variant: Variant) -> Result<RlSetup> {
        Ok(RlSetup {
            variant,
            grid: self.time_grid()?,
            sde: self.sde_config(),
            window: self.window_schedule()?,
            clip: self.clip_config(),
            fusion: FusionConfig { lambda: self.lambda },
            optimizer: AdamW::new(self.lr, self.weight_decay),
            prompts_per_iter: self.prompts_per_iter,
            trees_per_prompt: self.trees_per_prompt,
            reward_weights: self.reward.weights,
            task: self.task,
            noise: NoiseStream::new(self.seed),
        })
    }

    /// One `key = value  # provenance` line per leaf field.
    pub fn render_with_provenance(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        let mut leaves = Vec::new();
        flatten("", &value, &mut leaves);
        let mut out = String::new();
        for (key, v) in leaves {
            let label = PROVENANCE
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, l)| *l)
                .ok_or_else(|| Error::Config(format!("no provenance recorded for `{key}`")))?;
            out.push_str(&format!("{key} = {v}  # [{label}]\n"));
        }
        Ok(out)
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}
