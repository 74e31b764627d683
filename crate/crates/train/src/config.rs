//! Run configuration: TOML files, dotted command-line overrides, and the
//! manifest written into every run directory.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use hlps_core::env::{MazeConfig, MazeLayout, RewardMode, Sampling};
use hlps_core::objective::{LossConfig, LossVariant};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ReprVariant {
    Hlps,
    RandomProjection,
    Frozen,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Builtin layout name (`umaze`, `fourrooms`, `open`) or a path to a
    /// text grid file.
    pub layout: String,
    pub noise_sigma: f64,
    pub reward_mode: String,
    pub success_radius: f64,
    pub horizon: u32,
    /// Training goal: "random" or a fixed `[x, y]` point.
    pub goal: GoalSpec,
    /// Goal used by evaluation rollouts.
    pub eval_goal: [f64; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum GoalSpec {
    Named(String),
    Fixed([f64; 2]),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            layout: "umaze".into(),
            noise_sigma: 0.1,
            reward_mode: "sparse".into(),
            success_radius: 0.5,
            horizon: 500,
            goal: GoalSpec::Named("random".into()),
            eval_goal: [1.5, 9.5],
        }
    }
}

impl EnvConfig {
    pub fn layout(&self) -> Result<MazeLayout> {
        if let Some(l) = MazeLayout::builtin(&self.layout) {
            return Ok(l);
        }
        let text = std::fs::read_to_string(&self.layout)
            .with_context(|| format!("layout `{}` is neither builtin nor a readable file", self.layout))?;
        MazeLayout::parse(&text).map_err(|e| anyhow!("layout file `{}`: {e}", self.layout))
    }

    pub fn maze_config(&self, eval_mode: bool) -> Result<MazeConfig> {
        let mut mc = MazeConfig::new(self.layout()?);
        mc.noise_sigma = self.noise_sigma;
        mc.reward_mode = match self.reward_mode.as_str() {
            "dense" => RewardMode::Dense,
            "sparse" => RewardMode::Sparse,
            other => bail!("env.reward_mode must be `dense` or `sparse`, got `{other}`"),
        };
        mc.success_radius = self.success_radius;
        mc.horizon = self.horizon;
        mc.goal_sampling = if eval_mode {
            Sampling::Fixed(self.eval_goal[0], self.eval_goal[1])
        } else {
            match &self.goal {
                GoalSpec::Named(s) if s == "random" => Sampling::Random,
                GoalSpec::Named(other) => bail!("env.goal must be `random` or `[x, y]`, got `{other}`"),
                GoalSpec::Fixed([x, y]) => Sampling::Fixed(*x, *y),
            }
        };
        Ok(mc)
    }
}

/// Every knob of the training procedure. Defaults follow the reference
/// hyperparameters; the desk-scale configs in `configs/` override the
/// budget-sized ones.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_steps: u64,
    /// High-level action interval k.
    pub k: u32,
    /// GP hyperparameter update frequency m.
    pub m: u32,
    /// Batch window size T in high-level segments.
    pub window_segments: u32,
    pub eval_every: u64,
    pub eval_episodes: u32,
    pub warmup_steps: u64,
    pub replay_capacity: usize,
    pub batch_low: usize,
    pub batch_high: usize,
    /// Gradient steps per high-level update event (the event cadence is
    /// every k env steps regardless).
    pub high_grad_steps: u32,
    pub batch_triplets: usize,
    pub batch_windows: usize,
    pub lr_actor_critic: f64,
    pub lr_encoder: f64,
    /// Decoupled L2 shrinkage on encoder weights per encoder update;
    /// bounds the latent scale the representation loss would otherwise
    /// inflate without limit.
    pub encoder_weight_decay: f64,
    pub lr_gp: f64,
    pub hidden_dim: usize,
    pub encoder_hidden: usize,
    pub latent_dim: usize,
    /// Saturation bound on the encoder output (0 disables). Keeps the
    /// latent inside a fixed range so the subgoal box stays stationary.
    pub latent_bound: f64,
    pub discount: f64,
    pub tau: f64,
    pub reward_scale: f64,
    /// Initial half-width of the latent subgoal action box.
    pub subgoal_box: f64,
    pub loss_variant: String,
    pub hinge_margin: f64,
    pub ratio_grad: bool,
    pub repr_variant: ReprVariant,
    pub env: EnvConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_steps: 300_000,
            k: 50,
            m: 100,
            window_segments: 3,
            eval_every: 25_000,
            eval_episodes: 10,
            warmup_steps: 2_000,
            replay_capacity: 1_000_000,
            batch_low: 128,
            batch_high: 128,
            high_grad_steps: 1,
            batch_triplets: 64,
            batch_windows: 32,
            lr_actor_critic: 2e-4,
            lr_encoder: 1e-4,
            encoder_weight_decay: 1e-2,
            lr_gp: 1e-5,
            hidden_dim: 256,
            encoder_hidden: 100,
            latent_dim: 2,
            latent_bound: 5.0,
            discount: 0.99,
            tau: 0.005,
            reward_scale: 0.1,
            subgoal_box: 10.0,
            loss_variant: "softplus".into(),
            hinge_margin: 2.0,
            ratio_grad: false,
            repr_variant: ReprVariant::Hlps,
            env: EnvConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.m < 1 || self.window_segments < 1 {
            bail!("k, m and window_segments must all be at least 1");
        }
        if self.eval_every < self.k as u64 {
            bail!("eval_every ({}) must be at least k ({})", self.eval_every, self.k);
        }
        if self.latent_dim < 1 {
            bail!("latent_dim must be at least 1");
        }
        self.loss_config()?;
        Ok(())
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        let variant = match self.loss_variant.as_str() {
            "softplus" => LossVariant::Softplus,
            "hinge" => LossVariant::Hinge { margin: self.hinge_margin },
            other => bail!("loss_variant must be `softplus` or `hinge`, got `{other}`"),
        };
        Ok(LossConfig {
            variant,
            ratio_grad: self.ratio_grad,
        })
    }

    /// Loads a TOML config file and applies `key.path=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file `{}`", path.display()))?;
        let mut value: toml::Value = text
            .parse()
            .map_err(|e: toml::de::Error| anyhow!("{}: {e}", path.display()))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: TrainConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| anyhow!("{}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_overrides(overrides: &[String]) -> Result<Self> {
        let mut value = toml::Value::try_from(TrainConfig::default())?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: TrainConfig = value.try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Public form of the override application for harness code.
pub fn apply_override_value(root: &mut toml::Value, spec: &str) -> Result<()> {
    apply_override(root, spec)
}

fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{spec}` must be key.path=value"))?;
    let parsed: toml::Value = format!("v = {raw}")
        .parse::<toml::Value>()
        .ok()
        .and_then(|mut t| t.as_table_mut().and_then(|m| m.remove("v")))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{spec}`: `{part}` is not a table"))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!()
}

/// Everything needed to reproduce a run, written before training starts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub seed: u64,
    pub config: TrainConfig,
}

impl RunManifest {
    pub fn new(seed: u64, config: TrainConfig) -> Self {
        RunManifest {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
        }
    }

    pub fn write(&self, run_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(run_dir)?;
        let text = toml::to_string_pretty(self)?;
        std::fs::write(run_dir.join("manifest.toml"), text)?;
        Ok(())
    }

    pub fn read(run_dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(run_dir.join("manifest.toml"))?;
        Ok(toml::from_str(&text)?)
    }
}
