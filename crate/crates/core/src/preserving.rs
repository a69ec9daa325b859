//! Alpha-reward-preserving robust value iteration.
//!
//! Every pair carries its own radius `eta(s, a)`. Q is updated on the fast
//! timescale `c_k = k^-tau_q` towards the robust backup at the current radii;
//! the radii move on the slow timescale `beta_k = k^-tau_eta`, growing while
//! the backup stays above the threshold `q_hat` and shrinking otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::sinkhorn::{RadiusAdversary, RadiusMap};
use crate::solvers::{
    check_distribution, continuation_into, dot, solve_converged, Adversary, SolverOptions,
    SolverReport,
};
use crate::tables::QTable;

/// `q_hat = (1 - alpha) q_worst + alpha q_nominal`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreservationThresholds {
    pub q_nominal: QTable,
    pub q_worst: QTable,
    pub alpha: f64,
    pub q_hat: QTable,
}

impl PreservationThresholds {
    pub fn from_tables(q_nominal: QTable, q_worst: QTable, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if q_nominal.n_states() != q_worst.n_states()
            || q_nominal.n_actions() != q_worst.n_actions()
        {
            return Err(Error::Shape(
                "nominal and worst-case tables differ in shape".into(),
            ));
        }
        // exact endpoints, no rounding from the convex combination
        let q_hat = if alpha == 1.0 {
            q_nominal.clone()
        } else if alpha == 0.0 {
            q_worst.clone()
        } else {
            q_worst.lerp(&q_nominal, alpha)
        };
        Ok(Self {
            q_nominal,
            q_worst,
            alpha,
            q_hat,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(
            "alpha",
            format!("must lie in [0, 1], got {alpha}"),
        ));
    }
    Ok(())
}

/// Solves the nominal and robust problems and combines them.
pub fn compute_thresholds<A: Adversary + ?Sized>(
    mdp: &TabularMdp,
    adversary: &A,
    alpha: f64,
    opts: SolverOptions,
) -> Result<PreservationThresholds> {
    check_alpha(alpha)?;
    let q_nominal = solve_converged(
        mdp,
        &crate::solvers::NominalAdversary,
        opts,
        "value iteration",
    )?;
    let q_worst = solve_converged(mdp, adversary, opts, "robust value iteration")?;
    PreservationThresholds::from_tables(q_nominal, q_worst, alpha)
}

/// Per-pair radii, clipped to `[0, eta_b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusField {
    n_states: usize,
    n_actions: usize,
    eta_b: f64,
    eta: Vec<f64>,
}

impl RadiusField {
    pub fn filled(n_states: usize, n_actions: usize, eta_b: f64) -> Self {
        Self {
            n_states,
            n_actions,
            eta_b,
            eta: vec![eta_b; n_states * n_actions],
        }
    }

    pub fn from_vec(n_states: usize, n_actions: usize, eta_b: f64, eta: Vec<f64>) -> Result<Self> {
        if eta.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "{} radii for {n_states}x{n_actions} pairs",
                eta.len()
            )));
        }
        if let Some(x) = eta.iter().find(|&&x| !(0.0..=eta_b).contains(&x)) {
            return Err(Error::param("eta", format!("{x} outside [0, {eta_b}]")));
        }
        Ok(Self {
            n_states,
            n_actions,
            eta_b,
            eta,
        })
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.eta[s * self.n_actions + a]
    }

    pub fn eta_b(&self) -> f64 {
        self.eta_b
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.eta
    }

    pub fn mean(&self) -> f64 {
        self.eta.iter().sum::<f64>() / self.eta.len().max(1) as f64
    }

    /// Radius of the greedy action in each state.
    pub fn state_radii(&self, q: &QTable) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| self.get(s, q.greedy_action(s)))
            .collect()
    }

    pub fn to_radius_map(&self) -> RadiusMap {
        RadiusMap::PerPair {
            n_actions: self.n_actions,
            values: self.eta.clone(),
        }
    }
}

/// Robbins-Monro step sizes `c_k = k^-tau_q`, `beta_k = k^-tau_eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepSchedule {
    pub tau_q: f64,
    pub tau_eta: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            tau_q: 0.6,
            tau_eta: 0.9,
        }
    }
}

impl StepSchedule {
    pub fn new(tau_q: f64, tau_eta: f64) -> Result<Self> {
        let s = Self { tau_q, tau_eta };
        s.validate()?;
        Ok(s)
    }

    /// Requires `1/2 < tau_q < tau_eta <= 1`, so that the radius moves on the
    /// slower timescale.
    pub fn validate(&self) -> Result<()> {
        if !(0.5 < self.tau_q && self.tau_q < self.tau_eta && self.tau_eta <= 1.0) {
            return Err(Error::param(
                "schedule",
                format!(
                    "need 1/2 < tau_q < tau_eta <= 1, got tau_q={} tau_eta={}",
                    self.tau_q, self.tau_eta
                ),
            ));
        }
        Ok(())
    }

    pub fn c(&self, k: usize) -> f64 {
        (k as f64).powf(-self.tau_q)
    }

    pub fn beta(&self, k: usize) -> f64 {
        (k as f64).powf(-self.tau_eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreservingConfig {
    pub eta_b: f64,
    pub schedule: StepSchedule,
    pub iters: usize,
    /// Report marks convergence when the trailing mean residual is below this.
    pub tol: f64,
    /// Backups within this much of `q_hat` count as meeting it. Set it to the
    /// tolerance the thresholds were solved to, so that exact ties do not
    /// flip the radius direction on rounding noise.
    pub threshold_slack: f64,
}

/// Number of trailing sweeps averaged into the reported residual.
pub const RESIDUAL_WINDOW: usize = 100;

/// Runs the two-timescale iteration for a fixed number of sweeps from `Q = 0`,
/// `eta = eta_b`.
pub fn preserving_rvi<F: RadiusAdversary + ?Sized>(
    mdp: &TabularMdp,
    thresholds: &PreservationThresholds,
    family: &F,
    config: &PreservingConfig,
) -> Result<(QTable, RadiusField, SolverReport)> {
    if config.iters == 0 {
        return Err(Error::param("iters", "must be at least 1"));
    }
    if !(config.eta_b >= 0.0 && config.eta_b.is_finite()) {
        return Err(Error::param(
            "eta_b",
            format!("must be a non-negative number, got {}", config.eta_b),
        ));
    }
    config.schedule.validate()?;
    if !(config.threshold_slack >= 0.0 && config.threshold_slack.is_finite()) {
        return Err(Error::param(
            "threshold_slack",
            format!("must be non-negative, got {}", config.threshold_slack),
        ));
    }
    let (n_s, n_a) = (mdp.n_states(), mdp.n_actions());
    if thresholds.q_hat.n_states() != n_s || thresholds.q_hat.n_actions() != n_a {
        return Err(Error::Shape("thresholds do not match the MDP".into()));
    }

    let mut q = QTable::for_mdp(mdp);
    let mut radii = RadiusField::filled(n_s, n_a, config.eta_b);
    let mut v = vec![0.0; n_s];
    let mut cont = vec![0.0; n_s];
    let mut trailing = std::collections::VecDeque::with_capacity(RESIDUAL_WINDOW);
    let mut q_new = vec![0.0; n_s * n_a];

    for k in 1..=config.iters {
        let c = config.schedule.c(k);
        let beta = config.schedule.beta(k);
        for (s, vs) in v.iter_mut().enumerate() {
            *vs = q.max_value(s);
        }
        let mut residual: f64 = 0.0;
        for s in 0..n_s {
            for a in 0..n_a {
                continuation_into(mdp, &v, s, a, &mut cont);
                let x = if mdp.is_terminal(s) {
                    dot(mdp.row(s, a), &cont)
                } else {
                    let p = family.perturb_at(mdp, s, a, radii.get(s, a), &cont)?;
                    check_distribution(&p, n_s, s, a)?;
                    dot(&p, &cont)
                };
                q_new[s * n_a + a] = x;
                residual = residual.max((x - q.get(s, a)).abs());
            }
        }
        for (i, &x) in q_new.iter().enumerate() {
            let delta = if x >= thresholds.q_hat.as_slice()[i] - config.threshold_slack {
                1.0
            } else {
                -1.0
            };
            let eta = &mut radii.eta[i];
            *eta = (*eta + beta * delta).clamp(0.0, config.eta_b);
            let qi = &mut q.as_mut_slice()[i];
            *qi += c * (x - *qi);
        }
        if trailing.len() == RESIDUAL_WINDOW {
            trailing.pop_front();
        }
        trailing.push_back(residual);
    }
    let final_residual = trailing.iter().sum::<f64>() / trailing.len() as f64;
    let report = SolverReport {
        iterations: config.iters,
        final_residual,
        converged: final_residual <= config.tol,
    };
    Ok((q, radii, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_exact() {
        let n = QTable::from_vec(1, 2, vec![1.0, 0.3]).unwrap();
        let w = QTable::from_vec(1, 2, vec![-0.7, 0.1]).unwrap();
        let t1 = PreservationThresholds::from_tables(n.clone(), w.clone(), 1.0).unwrap();
        assert_eq!(t1.q_hat, n);
        let t0 = PreservationThresholds::from_tables(n.clone(), w.clone(), 0.0).unwrap();
        assert_eq!(t0.q_hat, w);
        let t = PreservationThresholds::from_tables(n, w, 0.25).unwrap();
        assert!((t.q_hat.get(0, 0) - (0.75 * -0.7 + 0.25 * 1.0)).abs() < 1e-15);
    }

    #[test]
    fn alpha_out_of_range() {
        let q = QTable::zeros(1, 1);
        assert!(PreservationThresholds::from_tables(q.clone(), q, 1.5).is_err());
    }

    #[test]
    fn schedule_ordering_enforced() {
        assert!(StepSchedule::new(0.6, 0.9).is_ok());
        assert!(StepSchedule::new(0.5, 0.9).is_err());
        assert!(StepSchedule::new(0.9, 0.6).is_err());
        assert!(StepSchedule::new(0.7, 1.1).is_err());
        let s = StepSchedule::default();
        assert_eq!(s.c(1), 1.0);
        assert!((s.beta(4) - 4f64.powf(-0.9)).abs() < 1e-15);
    }

    #[test]
    fn radius_field_bounds_checked() {
        assert!(RadiusField::from_vec(1, 2, 1.0, vec![0.5, 1.2]).is_err());
        let f = RadiusField::from_vec(1, 2, 1.0, vec![0.5, 1.0]).unwrap();
        assert_eq!(f.mean(), 0.75);
    }
}
