use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attacks::{craft_dynamics_direction, craft_rua_direction, perturbed_row, sample_index};
use super::buffer::{ReplayBuffer, TransitionRecord};
use super::eta_q::EtaQTable;
use super::policy::TabularPolicy;
use crate::error::{Error, Result};
use crate::magnitude::{
    expected_q_over_magnitudes, find_eta_star, sample_magnitude, MagnitudeGrid, SamplerConfig,
};
use crate::mdp::{GridWorld, TabularMdp};
use crate::solvers::{value_iteration, SolverOptions};
use crate::tables::QTable;

/// Which part of the interaction the adversary perturbs.
#[derive(Debug, Clone, Copy)]
pub enum AttackSurface<'w> {
    /// Successor distributions, through [`craft_dynamics_direction`].
    Dynamics,
    /// The agent's perceived cell, through random unit directions; attacks
    /// and magnitude tables are action-agnostic.
    Observations(&'w GridWorld),
}

impl AttackSurface<'_> {
    fn table_actions(&self, mdp: &TabularMdp) -> usize {
        match self {
            AttackSurface::Dynamics => mdp.n_actions(),
            AttackSurface::Observations(_) => 1,
        }
    }
}

/// Starting value of the magnitude-table bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableInit {
    /// Every bin of a pair starts at the protagonist critic's value, so every
    /// magnitude looks harmless until data says otherwise.
    Critic,
    /// Every bin starts at the largest absolute reward.
    Optimistic,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    /// Unattacked cycles run by [`train`] before the main loop to give the
    /// protagonist a nominal starting point.
    pub pretrain_cycles: usize,
    pub cycles: usize,
    /// Leading cycles in which only the magnitude tables learn; the
    /// protagonist stays fixed while the adversary's critics settle.
    pub warmup_cycles: usize,
    pub steps_per_cycle: usize,
    pub q_iters_per_cycle: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Polyak factor for the reference policy.
    pub tau_pi: f64,
    /// Polyak factor for the target magnitude tables.
    pub tau_q: f64,
    /// Fraction of the way policy logits move towards the critic per visit.
    pub lr_pi: f64,
    /// Step on magnitude-table bins.
    pub lr_q: f64,
    /// Step of the protagonist's Q-learning critic.
    pub lr_critic: f64,
    pub temperature: f64,
    pub static_init: TableInit,
    pub dynamic_init: TableInit,
    /// Keep magnitude tables non-increasing in `eta` after every step.
    pub monotone_eta: bool,
    /// Episodes are truncated (not terminated) after this many steps.
    pub max_episode_steps: usize,
    /// Evaluate every this many cycles (and after the last one); 0 disables.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub eval_etas: Vec<f64>,
    pub sampler: SamplerConfig,
    pub grid: MagnitudeGrid,
}

impl TrainConfig {
    /// Defaults sized for small gridworlds.
    pub fn with_defaults(alpha: f64, sampler: SamplerConfig) -> Result<Self> {
        let grid = MagnitudeGrid::geometric(sampler.eta_b)?;
        Ok(Self {
            alpha,
            pretrain_cycles: 0,
            cycles: 200,
            warmup_cycles: 0,
            steps_per_cycle: 500,
            q_iters_per_cycle: 50,
            batch_size: 100,
            buffer_capacity: 20_000,
            tau_pi: 0.1,
            tau_q: 0.1,
            lr_pi: 1.0,
            lr_q: 0.1,
            lr_critic: 0.2,
            temperature: 0.002,
            static_init: TableInit::Critic,
            dynamic_init: TableInit::Optimistic,
            monotone_eta: true,
            max_episode_steps: 200,
            eval_every: 10,
            eval_episodes: 20,
            eval_etas: vec![0.0, sampler.eta_b / 2.0],
            sampler,
            grid,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::param(
                "train.alpha",
                format!("must lie in [0, 1], got {}", self.alpha),
            ));
        }
        for (name, v) in [
            ("train.steps_per_cycle", self.steps_per_cycle),
            ("train.q_iters_per_cycle", self.q_iters_per_cycle),
            ("train.batch_size", self.batch_size),
            ("train.buffer_capacity", self.buffer_capacity),
            ("train.max_episode_steps", self.max_episode_steps),
        ] {
            if v == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        if self.buffer_capacity < self.steps_per_cycle {
            return Err(Error::param(
                "train.buffer_capacity",
                "must hold at least one cycle of transitions",
            ));
        }
        for (name, v) in [
            ("train.tau_pi", self.tau_pi),
            ("train.tau_q", self.tau_q),
            ("train.lr_pi", self.lr_pi),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::param(name, format!("must lie in (0, 1], got {v}")));
            }
        }
        for (name, v) in [
            ("train.lr_q", self.lr_q),
            ("train.lr_critic", self.lr_critic),
            ("train.temperature", self.temperature),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if self.eval_etas.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
            return Err(Error::param(
                "train.eval_etas",
                "magnitudes must be non-negative",
            ));
        }
        self.sampler.validate()?;
        if self.grid.eta_b() != self.sampler.eta_b {
            return Err(Error::param(
                "train.grid",
                "grid must start at the sampler's eta_b",
            ));
        }
        Ok(())
    }
}

/// Everything the training loop updates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub policy: TabularPolicy,
    pub reference: TabularPolicy,
    /// Protagonist critic on true states, learned from fresh transitions.
    pub critic: QTable,
    pub q_dynamic: EtaQTable,
    pub q_static: EtaQTable,
    pub target_dynamic: EtaQTable,
    pub target_static: EtaQTable,
    pub buffer: ReplayBuffer,
}

impl TrainState {
    pub fn new(mdp: &TabularMdp, surface: AttackSurface<'_>, cfg: &TrainConfig) -> Result<Self> {
        let policy = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions(), cfg.temperature)?;
        let critic = QTable::from_vec(
            mdp.n_states(),
            mdp.n_actions(),
            vec![mdp.max_abs_reward(); mdp.n_states() * mdp.n_actions()],
        )?;
        Self::with_protagonist(mdp, surface, cfg, policy, critic)
    }

    /// Fresh magnitude tables and buffer around an existing protagonist, for
    /// fine-tuning a pre-trained agent. The reference policy starts as a copy.
    pub fn with_protagonist(
        mdp: &TabularMdp,
        surface: AttackSurface<'_>,
        cfg: &TrainConfig,
        policy: TabularPolicy,
        critic: QTable,
    ) -> Result<Self> {
        if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
            return Err(Error::Shape("policy does not match the MDP".into()));
        }
        if critic.n_states() != mdp.n_states() || critic.n_actions() != mdp.n_actions() {
            return Err(Error::Shape("critic does not match the MDP".into()));
        }
        let q_dynamic = init_table(mdp, surface, cfg, &critic, cfg.dynamic_init)?;
        let q_static = init_table(mdp, surface, cfg, &critic, cfg.static_init)?;
        Ok(Self {
            reference: policy.clone(),
            policy,
            critic,
            target_dynamic: q_dynamic.clone(),
            target_static: q_static.clone(),
            q_dynamic,
            q_static,
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
        })
    }
}

fn init_table(
    mdp: &TabularMdp,
    surface: AttackSurface<'_>,
    cfg: &TrainConfig,
    critic: &QTable,
    init: TableInit,
) -> Result<EtaQTable> {
    let n_tab = surface.table_actions(mdp);
    let fill = match init {
        TableInit::Critic => 0.0,
        TableInit::Optimistic => mdp.max_abs_reward(),
        TableInit::Value(v) if v.is_finite() => v,
        TableInit::Value(v) => {
            return Err(Error::param(
                "train.init",
                format!("must be finite, got {v}"),
            ))
        }
    };
    let mut q = EtaQTable::new(mdp.n_states(), n_tab, cfg.grid.nodes(), fill)?;
    if init == TableInit::Critic {
        for s in 0..mdp.n_states() {
            for a in 0..n_tab {
                let v = if n_tab == 1 {
                    critic.max_value(s)
                } else {
                    critic.get(s, a)
                };
                for k in 0..q.nodes().len() {
                    q.set_node_value(s, a, k, v);
                }
            }
        }
    }
    Ok(q)
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub cycle: usize,
    pub eval_eta: f64,
    pub mean_return: f64,
    pub mean_sampled_eta: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    /// Mean sampled magnitude of each cycle.
    pub cycle_mean_eta: Vec<f64>,
}

impl TrainingLog {
    /// Mean sampled magnitude over all collected transitions.
    pub fn mean_sampled_eta(&self) -> f64 {
        if self.cycle_mean_eta.is_empty() {
            return 0.0;
        }
        self.cycle_mean_eta.iter().sum::<f64>() / self.cycle_mean_eta.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: TrainingLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CollectStats {
    pub steps: usize,
    pub episodes: usize,
    pub mean_eta: f64,
}

/// Rolling environment position between steps.
struct Cursor {
    s: usize,
    t: usize,
}

fn threshold(static_table: &EtaQTable, s: usize, a: usize, alpha: f64, eta_b: f64) -> f64 {
    (1.0 - alpha) * static_table.get(s, a, eta_b) + alpha * static_table.get(s, a, 0.0)
}

fn eta_star(
    dynamic: &EtaQTable,
    static_table: &EtaQTable,
    s: usize,
    a: usize,
    cfg: &TrainConfig,
) -> f64 {
    let q_hat = threshold(static_table, s, a, cfg.alpha, cfg.sampler.eta_b);
    find_eta_star(|eta| dynamic.get(s, a, eta), q_hat, &cfg.grid)
}

fn rua_direction(seed: u64) -> [f64; 2] {
    let d = craft_rua_direction(2, &mut ChaCha8Rng::seed_from_u64(seed));
    [d[0], d[1]]
}

/// Greedy view of a magnitude table at `eta = 0`, used to aim dynamics attacks.
fn q_at_zero(mdp: &TabularMdp, table: &EtaQTable) -> QTable {
    let mut q = QTable::for_mdp(mdp);
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            q.set(s, a, table.get(s, a.min(table.n_actions() - 1), 0.0));
        }
    }
    q
}

/// Collects `steps_per_cycle` attacked transitions into the buffer, starting a
/// fresh episode. Returns the fresh records.
pub fn collect_cycle<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    surface: AttackSurface<'_>,
    state: &mut TrainState,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(Vec<TransitionRecord>, CollectStats)> {
    let aim = match surface {
        AttackSurface::Dynamics => Some(q_at_zero(mdp, &state.target_static)),
        AttackSurface::Observations(_) => None,
    };
    let mut cur = Cursor {
        s: mdp.start_state(),
        t: 0,
    };
    let mut fresh = Vec::with_capacity(cfg.steps_per_cycle);
    let mut episodes = 0;
    let mut eta_sum = 0.0;
    for _ in 0..cfg.steps_per_cycle {
        let s = cur.s;
        let record = match surface {
            AttackSurface::Dynamics => {
                let (a, prob) = state.policy.sample(s, rng);
                let star = eta_star(&state.q_dynamic, &state.q_static, s, a, cfg);
                let eta = sample_magnitude(star, &cfg.sampler, rng);
                let direction =
                    craft_dynamics_direction(mdp, aim.as_ref().expect("dynamics aim"), s, a);
                let row = perturbed_row(mdp.row(s, a), &direction, eta);
                let s_next = sample_index(&row, rng);
                TransitionRecord {
                    s,
                    a,
                    eta,
                    direction_seed: 0,
                    r: mdp.reward(s, a, s_next),
                    s_next,
                    behavior_prob: prob,
                    done: mdp.is_terminal(s_next),
                }
            }
            AttackSurface::Observations(world) => {
                let star = eta_star(&state.q_dynamic, &state.q_static, s, 0, cfg);
                let eta = sample_magnitude(star, &cfg.sampler, rng);
                let seed: u64 = rng.random();
                let seen = world.perceived_state(s, eta, rua_direction(seed));
                let (a, prob) = state.policy.sample(seen, rng);
                let s_next = sample_index(mdp.row(s, a), rng);
                TransitionRecord {
                    s,
                    a,
                    eta,
                    direction_seed: seed,
                    r: mdp.reward(s, a, s_next),
                    s_next,
                    behavior_prob: prob,
                    done: mdp.is_terminal(s_next),
                }
            }
        };
        record.validate()?;
        eta_sum += record.eta;
        state.buffer.push(record);
        fresh.push(record);
        cur.t += 1;
        if record.done || cur.t >= cfg.max_episode_steps {
            episodes += 1;
            cur = Cursor {
                s: mdp.start_state(),
                t: 0,
            };
        } else {
            cur.s = record.s_next;
        }
    }
    let steps = fresh.len();
    Ok((
        fresh,
        CollectStats {
            steps,
            episodes,
            mean_eta: eta_sum / steps.max(1) as f64,
        },
    ))
}

/// Policy input the record was collected under.
fn policy_input(surface: AttackSurface<'_>, rec: &TransitionRecord) -> usize {
    match surface {
        AttackSurface::Dynamics => rec.s,
        AttackSurface::Observations(world) => {
            world.perceived_state(rec.s, rec.eta, rua_direction(rec.direction_seed))
        }
    }
}

/// Q-learning on the protagonist critic, then each record's policy-input
/// logits move towards the critic row of its true state by `lr_pi`
/// (softmax Q-learning when `lr_pi = 1` on dynamics attacks).
pub fn improve_protagonist(
    mdp: &TabularMdp,
    surface: AttackSurface<'_>,
    state: &mut TrainState,
    fresh: &[TransitionRecord],
    cfg: &TrainConfig,
) {
    let gamma = mdp.gamma();
    for rec in fresh {
        let boot = if rec.done {
            0.0
        } else {
            state.critic.max_value(rec.s_next)
        };
        let old = state.critic.get(rec.s, rec.a);
        state.critic.set(
            rec.s,
            rec.a,
            old + cfg.lr_critic * (rec.r + gamma * boot - old),
        );
    }
    for rec in fresh {
        let input = policy_input(surface, rec);
        let q = state.critic.row(rec.s);
        for (l, &q) in state.policy.logits_mut(input).iter_mut().zip(q) {
            *l += cfg.lr_pi * (q - *l);
        }
    }
}

/// `q_iters_per_cycle` batches of importance-weighted TD steps on the dynamic
/// and static magnitude tables.
pub fn q_update_cycle<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    surface: AttackSurface<'_>,
    state: &mut TrainState,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<()> {
    if state.buffer.is_empty() {
        return Err(Error::param("buffer", "no transitions to learn from"));
    }
    let gamma = mdp.gamma();
    let eta_b = cfg.sampler.eta_b;
    for _ in 0..cfg.q_iters_per_cycle {
        for _ in 0..cfg.batch_size {
            let rec = *state.buffer.sample(rng);
            rec.validate()?;
            let (a_tab, a_next, w) = match surface {
                AttackSurface::Dynamics => {
                    let (a_next, _) = state.reference.sample(rec.s_next, rng);
                    (
                        rec.a,
                        a_next,
                        state.reference.prob(rec.s, rec.a) / rec.behavior_prob,
                    )
                }
                AttackSurface::Observations(_) => {
                    let input = policy_input(surface, &rec);
                    (0, 0, state.reference.prob(input, rec.a) / rec.behavior_prob)
                }
            };
            let (boot_dynamic, boot_static) = if rec.done {
                (0.0, 0.0)
            } else {
                let td = &state.target_dynamic;
                let ts = &state.target_static;
                let q_hat = threshold(ts, rec.s_next, a_next, cfg.alpha, eta_b);
                let star = find_eta_star(|eta| td.get(rec.s_next, a_next, eta), q_hat, &cfg.grid);
                let expected = expected_q_over_magnitudes(
                    |eta| td.get(rec.s_next, a_next, eta),
                    star,
                    &cfg.sampler,
                    &cfg.grid,
                );
                (expected, ts.get(rec.s_next, a_next, rec.eta))
            };
            // a weighted step larger than one would overshoot the target
            let step = (cfg.lr_q * w).min(1.0);
            let delta_dynamic =
                state.q_dynamic.get(rec.s, a_tab, rec.eta) - rec.r - gamma * boot_dynamic;
            let delta_static =
                state.q_static.get(rec.s, a_tab, rec.eta) - rec.r - gamma * boot_static;
            if cfg.monotone_eta {
                state
                    .q_dynamic
                    .descend_monotone(rec.s, a_tab, rec.eta, step, delta_dynamic);
                state
                    .q_static
                    .descend_monotone(rec.s, a_tab, rec.eta, step, delta_static);
            } else {
                state
                    .q_dynamic
                    .descend(rec.s, a_tab, rec.eta, step, delta_dynamic);
                state
                    .q_static
                    .descend(rec.s, a_tab, rec.eta, step, delta_static);
            }
        }
    }
    Ok(())
}

/// Mean discounted return of the greedy policy over `episodes` episodes with a
/// fixed attack magnitude. Dynamics attacks are aimed with `aim`; observation
/// attacks use random unit directions.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    surface: AttackSurface<'_>,
    policy: &TabularPolicy,
    aim: &QTable,
    eta: f64,
    episodes: usize,
    max_steps: usize,
    rng: &mut R,
) -> f64 {
    let gamma = mdp.gamma();
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut s = mdp.start_state();
        let mut discount = 1.0;
        let mut ret = 0.0;
        for _ in 0..max_steps {
            if mdp.is_terminal(s) {
                break;
            }
            let (a, s_next) = match surface {
                AttackSurface::Dynamics => {
                    let a = policy.greedy_action(s);
                    let direction = craft_dynamics_direction(mdp, aim, s, a);
                    (
                        a,
                        sample_index(&perturbed_row(mdp.row(s, a), &direction, eta), rng),
                    )
                }
                AttackSurface::Observations(world) => {
                    let seen = world.perceived_state(s, eta, rua_direction(rng.random()));
                    let a = policy.greedy_action(seen);
                    (a, sample_index(mdp.row(s, a), rng))
                }
            };
            ret += discount * mdp.reward(s, a, s_next);
            discount *= gamma;
            s = s_next;
        }
        total += ret;
    }
    total / episodes.max(1) as f64
}

/// Runs the full loop from a fresh state, after `pretrain_cycles` unattacked
/// cycles when requested. The log covers the main loop only.
pub fn train<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    surface: AttackSurface<'_>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut state = TrainState::new(mdp, surface, cfg)?;
    if cfg.pretrain_cycles > 0 {
        let pre = nominal_config(cfg)?;
        let fresh = TrainState::new(mdp, surface, &pre)?;
        let warm = train_from(mdp, surface, &pre, fresh, rng)?.state;
        state = TrainState::with_protagonist(mdp, surface, cfg, warm.policy, warm.critic)?;
    }
    train_from(mdp, surface, cfg, state, rng)
}

/// The pre-training phase: no attacks, no warm-up, no evaluation.
fn nominal_config(cfg: &TrainConfig) -> Result<TrainConfig> {
    let sampler = SamplerConfig::new(cfg.sampler.epsilon_tail, 0.0, 0.0)?;
    Ok(TrainConfig {
        alpha: 1.0,
        pretrain_cycles: 0,
        cycles: cfg.pretrain_cycles,
        warmup_cycles: 0,
        eval_every: 0,
        sampler,
        grid: MagnitudeGrid::new(0.0, 0.5, 1)?,
        ..cfg.clone()
    })
}

/// Runs `cfg.cycles` cycles of collect, protagonist improvement, table
/// updates and polyak averaging, starting from `state`.
pub fn train_from<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    surface: AttackSurface<'_>,
    cfg: &TrainConfig,
    mut state: TrainState,
    rng: &mut R,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut log = TrainingLog::default();
    if cfg.cycles == 0 {
        return Ok(TrainOutcome { state, log });
    }
    // evaluation draws from its own stream so that logging cadence never
    // changes the training trajectory
    let eval_seed: u64 = rng.random();
    let aim = match surface {
        AttackSurface::Dynamics => value_iteration(mdp, SolverOptions::default())?.0,
        AttackSurface::Observations(_) => QTable::for_mdp(mdp),
    };
    for cycle in 1..=cfg.cycles {
        let (fresh, stats) = collect_cycle(mdp, surface, &mut state, cfg, rng)?;
        log.cycle_mean_eta.push(stats.mean_eta);
        if cycle > cfg.warmup_cycles {
            improve_protagonist(mdp, surface, &mut state, &fresh, cfg);
        }
        q_update_cycle(mdp, surface, &mut state, cfg, rng)?;
        state.reference.polyak_from(&state.policy, cfg.tau_pi);
        state
            .target_dynamic
            .polyak_from(&state.q_dynamic, cfg.tau_q);
        state.target_static.polyak_from(&state.q_static, cfg.tau_q);

        let due = cfg.eval_every > 0 && (cycle % cfg.eval_every == 0 || cycle == cfg.cycles);
        if due {
            for (k, &eta) in cfg.eval_etas.iter().enumerate() {
                let mut eval_rng =
                    ChaCha8Rng::seed_from_u64(eval_seed ^ ((cycle as u64) << 8) ^ k as u64);
                let mean_return = evaluate_policy(
                    mdp,
                    surface,
                    &state.policy,
                    &aim,
                    eta,
                    cfg.eval_episodes,
                    cfg.max_episode_steps,
                    &mut eval_rng,
                );
                log.rows.push(LogRow {
                    cycle,
                    eval_eta: eta,
                    mean_return,
                    mean_sampled_eta: stats.mean_eta,
                });
            }
        }
    }
    Ok(TrainOutcome { state, log })
}
