//! Scenario files: a TOML description of one experiment, validated into a
//! [`ScenarioConfig`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::magnitude::{MagnitudeGrid, SamplerConfig, DEFAULT_CANDIDATES, DEFAULT_RATIO};
use crate::mdp::{Cell, GoalCell, GridWorldSpec};
use crate::preserving::StepSchedule;
use crate::sinkhorn::SinkhornParams;
use crate::solvers::SolverOptions;
use crate::training::{TableInit, TrainConfig};

pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_GAMMA: f64 = 0.999;
pub const DEFAULT_ETA_B: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Vi,
    Rvi,
    PreservingRvi,
    TrainDynamics,
    TrainObservations,
    CheckProperties,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Vi => "vi",
            SolverKind::Rvi => "rvi",
            SolverKind::PreservingRvi => "preserving-rvi",
            SolverKind::TrainDynamics => "train-dynamics",
            SolverKind::TrainObservations => "train-observations",
            SolverKind::CheckProperties => "check-properties",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorldPreset {
    Bridge,
}

/// `[world]`: either a preset, optionally with overrides, or a full layout.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldSection {
    preset: Option<WorldPreset>,
    width: Option<i32>,
    height: Option<i32>,
    goals: Option<Vec<GoalCell>>,
    traps: Option<Vec<Cell>>,
    walls: Option<Vec<Cell>>,
    start: Option<Cell>,
    slip: Option<f64>,
}

impl WorldSection {
    fn resolve(self, gamma: f64) -> Result<GridWorldSpec> {
        let missing = |field: &str| Error::Config {
            path: format!("world.{field}"),
            message: "required when no preset is given".into(),
        };
        let mut spec = match self.preset {
            Some(WorldPreset::Bridge) => GridWorldSpec::bridge(),
            None => GridWorldSpec {
                width: self.width.ok_or_else(|| missing("width"))?,
                height: self.height.ok_or_else(|| missing("height"))?,
                goals: Vec::new(),
                traps: Vec::new(),
                walls: Vec::new(),
                start: self.start.ok_or_else(|| missing("start"))?,
                gamma,
                slip: 0.0,
            },
        };
        if let Some(w) = self.width {
            spec.width = w;
        }
        if let Some(h) = self.height {
            spec.height = h;
        }
        if let Some(g) = self.goals {
            spec.goals = g;
        }
        if let Some(t) = self.traps {
            spec.traps = t;
        }
        if let Some(w) = self.walls {
            spec.walls = w;
        }
        if let Some(s) = self.start {
            spec.start = s;
        }
        if let Some(p) = self.slip {
            spec.slip = p;
        }
        spec.gamma = gamma;
        spec.validate().map_err(|e| Error::Config {
            path: "world".into(),
            message: e.to_string(),
        })?;
        Ok(spec)
    }
}

/// `[train]`: the training loop's knobs. The attack budget comes from the
/// top-level `eta_b` / `eta_b_plus`, the trade-off from `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub pretrain_cycles: usize,
    pub cycles: usize,
    pub warmup_cycles: usize,
    pub steps_per_cycle: usize,
    pub q_iters_per_cycle: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub tau_pi: f64,
    pub tau_q: f64,
    pub lr_pi: f64,
    pub lr_q: f64,
    pub lr_critic: f64,
    pub temperature: f64,
    pub static_init: TableInit,
    pub dynamic_init: TableInit,
    pub monotone_eta: bool,
    pub max_episode_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Evaluation magnitudes; `[0, eta_b / 2]` when absent.
    pub eval_etas: Option<Vec<f64>>,
    pub epsilon_tail: f64,
    pub grid_ratio: f64,
    pub grid_candidates: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::with_defaults(
            DEFAULT_ALPHA,
            SamplerConfig::new(0.01, 0.0, 0.0).expect("valid"),
        )
        .expect("valid defaults");
        Self {
            pretrain_cycles: base.pretrain_cycles,
            cycles: base.cycles,
            warmup_cycles: base.warmup_cycles,
            steps_per_cycle: base.steps_per_cycle,
            q_iters_per_cycle: base.q_iters_per_cycle,
            batch_size: base.batch_size,
            buffer_capacity: base.buffer_capacity,
            tau_pi: base.tau_pi,
            tau_q: base.tau_q,
            lr_pi: base.lr_pi,
            lr_q: base.lr_q,
            lr_critic: base.lr_critic,
            temperature: base.temperature,
            static_init: base.static_init,
            dynamic_init: base.dynamic_init,
            monotone_eta: base.monotone_eta,
            max_episode_steps: base.max_episode_steps,
            eval_every: base.eval_every,
            eval_episodes: base.eval_episodes,
            eval_etas: None,
            epsilon_tail: base.sampler.epsilon_tail,
            grid_ratio: DEFAULT_RATIO,
            grid_candidates: DEFAULT_CANDIDATES,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, alpha: f64, eta_b: f64, eta_b_plus: f64) -> Result<TrainConfig> {
        let sampler = SamplerConfig::new(self.epsilon_tail, eta_b, eta_b_plus)?;
        let cfg = TrainConfig {
            alpha,
            pretrain_cycles: self.pretrain_cycles,
            cycles: self.cycles,
            warmup_cycles: self.warmup_cycles,
            steps_per_cycle: self.steps_per_cycle,
            q_iters_per_cycle: self.q_iters_per_cycle,
            batch_size: self.batch_size,
            buffer_capacity: self.buffer_capacity,
            tau_pi: self.tau_pi,
            tau_q: self.tau_q,
            lr_pi: self.lr_pi,
            lr_q: self.lr_q,
            lr_critic: self.lr_critic,
            temperature: self.temperature,
            static_init: self.static_init,
            dynamic_init: self.dynamic_init,
            monotone_eta: self.monotone_eta,
            max_episode_steps: self.max_episode_steps,
            eval_every: self.eval_every,
            eval_episodes: self.eval_episodes,
            eval_etas: self
                .eval_etas
                .clone()
                .unwrap_or_else(|| vec![0.0, eta_b / 2.0]),
            sampler,
            grid: MagnitudeGrid::new(eta_b, self.grid_ratio, self.grid_candidates)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `[preserving]`: iteration budget of the two-timescale solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreservingSection {
    pub iters: usize,
}

impl Default for PreservingSection {
    fn default() -> Self {
        Self { iters: 20_000 }
    }
}

/// `[properties]`: settings of the property checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropertiesSection {
    /// Value floor of the destroy adversary.
    pub r_min: f64,
}

impl Default for PropertiesSection {
    fn default() -> Self {
        Self { r_min: -1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Sup-norm stopping rule of value iteration and robust value iteration.
    pub solver_tol: f64,
    pub max_sweeps: usize,
    /// Trailing residual under which the preserving solver reports convergence.
    pub preserving_tol: f64,
    /// Identity and ordering tolerance of the structure check.
    pub property_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let s = SolverOptions::default();
        Self {
            solver_tol: s.tol,
            max_sweeps: s.max_iters,
            preserving_tol: 1e-6,
            property_tol: 1e-4,
        }
    }
}

impl Tolerances {
    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions::new(self.solver_tol, self.max_sweeps)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    world: WorldSection,
    solver: SolverKind,
    alpha: Option<f64>,
    gamma: Option<f64>,
    eta_b: Option<f64>,
    eta_b_plus: Option<f64>,
    #[serde(default)]
    sinkhorn: SinkhornParams,
    #[serde(default)]
    schedule: StepSchedule,
    #[serde(default)]
    preserving: PreservingSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    properties: PropertiesSection,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    tolerances: Tolerances,
}

/// A fully validated scenario with defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Layout, with `gamma` already applied.
    pub world: GridWorldSpec,
    pub solver: SolverKind,
    pub alpha: f64,
    pub gamma: f64,
    /// Uniform Sinkhorn radius for `rvi`, radius cap for `preserving-rvi`,
    /// magnitude budget for training.
    pub eta_b: f64,
    pub eta_b_plus: f64,
    pub sinkhorn: SinkhornParams,
    pub schedule: StepSchedule,
    pub preserving: PreservingSection,
    pub train: TrainSection,
    pub properties: PropertiesSection,
    pub seed: u64,
    pub tolerances: Tolerances,
}

fn field_err(path: &str, e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        other => Error::Config {
            path: path.into(),
            message: other.to_string(),
        },
    }
}

impl ScenarioConfig {
    /// Parses and validates scenario text. Syntax errors (including duplicate
    /// keys) carry line and column; semantic errors carry the field path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let alpha = file.alpha.unwrap_or(DEFAULT_ALPHA);
        let gamma = file.gamma.unwrap_or(DEFAULT_GAMMA);
        let eta_b = file.eta_b.unwrap_or(DEFAULT_ETA_B);
        let eta_b_plus = file.eta_b_plus.unwrap_or(eta_b);
        let cfg = Self {
            world: file.world.resolve(gamma)?,
            solver: file.solver,
            alpha,
            gamma,
            eta_b,
            eta_b_plus,
            sinkhorn: file.sinkhorn,
            schedule: file.schedule,
            preserving: file.preserving,
            train: file.train,
            properties: file.properties,
            seed: file.seed,
            tolerances: file.tolerances,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |path: &str, message: String| {
            Err(Error::Config {
                path: path.into(),
                message,
            })
        };
        if !(0.0..=1.0).contains(&self.alpha) {
            return cfg_err("alpha", format!("must lie in [0, 1], got {}", self.alpha));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return cfg_err("gamma", format!("must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.eta_b >= 0.0 && self.eta_b.is_finite()) {
            return cfg_err(
                "eta_b",
                format!("must be a non-negative number, got {}", self.eta_b),
            );
        }
        if !(self.eta_b_plus >= self.eta_b && self.eta_b_plus.is_finite()) {
            return cfg_err(
                "eta_b_plus",
                format!(
                    "eta_b_plus ({}) must be at least eta_b ({})",
                    self.eta_b_plus, self.eta_b
                ),
            );
        }
        self.world.validate().map_err(|e| field_err("world", e))?;
        self.sinkhorn
            .validate()
            .map_err(|e| field_err("sinkhorn", e))?;
        self.schedule
            .validate()
            .map_err(|e| field_err("schedule", e))?;
        self.tolerances
            .solver_options()
            .validate()
            .map_err(|e| field_err("tolerances", e))?;
        if !(self.tolerances.property_tol > 0.0) {
            return cfg_err("tolerances.property_tol", "must be positive".into());
        }
        if self.preserving.iters == 0 {
            return cfg_err("preserving.iters", "must be at least 1".into());
        }
        if !self.properties.r_min.is_finite() {
            return cfg_err("properties.r_min", "must be finite".into());
        }
        if matches!(
            self.solver,
            SolverKind::TrainDynamics | SolverKind::TrainObservations
        ) {
            self.train_config().map_err(|e| field_err("train", e))?;
        }
        Ok(())
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        self.train
            .to_config(self.alpha, self.eta_b, self.eta_b_plus)
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScenarioConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}
