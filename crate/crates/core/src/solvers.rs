//! Value iteration and robust value iteration with a pluggable inner adversary.
//!
//! Sweeps are synchronous: every `(s, a)` is backed up against the same
//! snapshot of `Q`, then the whole table is replaced.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::tables::QTable;

/// Probability-sum slack accepted from an adversary.
pub const DISTRIBUTION_TOL: f64 = 1e-9;

/// Chooses the successor distribution used in a robust backup.
///
/// `continuation[s']` holds `R(s, a, s') + gamma * max_a' Q(s', a')`.
/// Implementations must be stateless per call.
pub trait Adversary {
    fn perturb<'m>(
        &self,
        mdp: &'m TabularMdp,
        s: usize,
        a: usize,
        continuation: &[f64],
    ) -> Result<Cow<'m, [f64]>>;
}

/// The empty uncertainty set: always returns the nominal row.
#[derive(Debug, Clone, Copy, Default)]
pub struct NominalAdversary;

impl Adversary for NominalAdversary {
    fn perturb<'m>(
        &self,
        mdp: &'m TabularMdp,
        s: usize,
        a: usize,
        _continuation: &[f64],
    ) -> Result<Cow<'m, [f64]>> {
        Ok(Cow::Borrowed(mdp.row(s, a)))
    }
}

impl<F> Adversary for F
where
    F: Fn(&TabularMdp, usize, usize, &[f64]) -> Result<Vec<f64>>,
{
    fn perturb<'m>(
        &self,
        mdp: &'m TabularMdp,
        s: usize,
        a: usize,
        continuation: &[f64],
    ) -> Result<Cow<'m, [f64]>> {
        self(mdp, s, a, continuation).map(Cow::Owned)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 100_000,
        }
    }
}

impl SolverOptions {
    pub fn new(tol: f64, max_iters: usize) -> Self {
        Self { tol, max_iters }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::param(
                "tol",
                format!("must be positive, got {}", self.tol),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    /// Sup-norm change of the last sweep.
    pub final_residual: f64,
    pub converged: bool,
}

/// Fills `out` with `R(s, a, .) + gamma * v(.)`.
pub(crate) fn continuation_into(mdp: &TabularMdp, v: &[f64], s: usize, a: usize, out: &mut [f64]) {
    let g = mdp.gamma();
    for ((o, r), vn) in out.iter_mut().zip(mdp.reward_row(s, a)).zip(v) {
        *o = r + g * vn;
    }
}

pub(crate) fn check_distribution(p: &[f64], n: usize, s: usize, a: usize) -> Result<()> {
    let fail = |reason: String| {
        Err(Error::InvalidDistribution {
            state: s,
            action: a,
            reason,
        })
    };
    if p.len() != n {
        return fail(format!("length {} != {n}", p.len()));
    }
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < -DISTRIBUTION_TOL) {
        return fail(format!("entry {x}"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOL {
        return fail(format!("mass {sum}"));
    }
    Ok(())
}

/// Backup for one pair given the current state values. Terminal states are
/// absorbing and never attacked.
pub(crate) fn backup_from_values<A: Adversary + ?Sized>(
    mdp: &TabularMdp,
    v: &[f64],
    s: usize,
    a: usize,
    adversary: &A,
    scratch: &mut [f64],
) -> Result<f64> {
    continuation_into(mdp, v, s, a, scratch);
    if mdp.is_terminal(s) {
        return Ok(dot(mdp.row(s, a), scratch));
    }
    let p = adversary.perturb(mdp, s, a, scratch)?;
    check_distribution(&p, mdp.n_states(), s, a)?;
    Ok(dot(&p, scratch))
}

pub(crate) fn dot(p: &[f64], x: &[f64]) -> f64 {
    p.iter().zip(x).map(|(p, x)| p * x).sum()
}

/// `sum_s' P_xi(s'|s,a) [R(s,a,s') + gamma max_a' Q(s',a')]` with `P_xi`
/// chosen by `adversary`.
pub fn robust_bellman_backup<A: Adversary + ?Sized>(
    mdp: &TabularMdp,
    q: &QTable,
    s: usize,
    a: usize,
    adversary: &A,
) -> Result<f64> {
    let v = q.state_values().values;
    let mut scratch = vec![0.0; mdp.n_states()];
    backup_from_values(mdp, &v, s, a, adversary, &mut scratch)
}

/// One application of the robust operator to every pair.
pub fn apply_robust_operator<A: Adversary + ?Sized>(
    mdp: &TabularMdp,
    q: &QTable,
    adversary: &A,
) -> Result<QTable> {
    let mut out = QTable::for_mdp(mdp);
    sweep(mdp, q, adversary, &mut out)?;
    Ok(out)
}

fn sweep<A: Adversary + ?Sized>(
    mdp: &TabularMdp,
    q: &QTable,
    adversary: &A,
    out: &mut QTable,
) -> Result<f64> {
    let v = q.state_values().values;
    let mut scratch = vec![0.0; mdp.n_states()];
    let mut residual: f64 = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let x = backup_from_values(mdp, &v, s, a, adversary, &mut scratch)?;
            residual = residual.max((x - q.get(s, a)).abs());
            out.set(s, a, x);
        }
    }
    Ok(residual)
}

/// Robust value iteration from `Q = 0`. Stops once a sweep changes `Q` by at
/// most `opts.tol` in sup norm; hitting `max_iters` is reported, not fatal.
pub fn robust_value_iteration<A: Adversary + ?Sized>(
    mdp: &TabularMdp,
    adversary: &A,
    opts: SolverOptions,
) -> Result<(QTable, SolverReport)> {
    opts.validate()?;
    let mut q = QTable::for_mdp(mdp);
    let mut next = QTable::for_mdp(mdp);
    let mut report = SolverReport {
        iterations: 0,
        final_residual: f64::INFINITY,
        converged: false,
    };
    for k in 1..=opts.max_iters {
        let residual = sweep(mdp, &q, adversary, &mut next)?;
        std::mem::swap(&mut q, &mut next);
        report.iterations = k;
        report.final_residual = residual;
        if residual <= opts.tol {
            report.converged = true;
            break;
        }
    }
    Ok((q, report))
}

/// Classical value iteration on the nominal kernel.
pub fn value_iteration(mdp: &TabularMdp, opts: SolverOptions) -> Result<(QTable, SolverReport)> {
    robust_value_iteration(mdp, &NominalAdversary, opts)
}

/// Converged solve, turning a non-converged report into an error.
pub fn solve_converged<A: Adversary + ?Sized>(
    mdp: &TabularMdp,
    adversary: &A,
    opts: SolverOptions,
    solver: &'static str,
) -> Result<QTable> {
    let (q, report) = robust_value_iteration(mdp, adversary, opts)?;
    if !report.converged {
        return Err(Error::NotConverged {
            solver,
            iterations: report.iterations,
            residual: report.final_residual,
        });
    }
    Ok(q)
}
