//! Executable checks of two structural properties of alpha-reward-preserving
//! attacks.
//!
//! Structure preservation: when the worst-case attack flattens every value to
//! a common floor `Rmin`, the preserving solution is the affine rescaling
//! `(1 - alpha) Rmin + alpha Q_nominal`, so nominal orderings survive.
//!
//! Preference change: a nominal preference between two pairs flips under the
//! preserving attack exactly when the worst-case gap outweighs the scaled
//! nominal gap, corrected by the slack each pair keeps above its threshold.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::preserving::PreservationThresholds;
use crate::solvers::{
    backup_from_values, robust_value_iteration, solve_converged, NominalAdversary, SolverOptions,
};
use crate::tables::QTable;

/// Float slack used by the preference biconditional.
pub const PREFERENCE_SLACK: f64 = 1e-9;

/// Teleports a fraction `strength` of every non-terminal successor
/// distribution to an absorbing sink paying `(1 - gamma) r_min` per step, so
/// that at full strength every attacked value collapses to `r_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DestroyAdversary {
    pub r_min: f64,
    pub strength: f64,
}

impl Default for DestroyAdversary {
    fn default() -> Self {
        Self {
            r_min: -1.0,
            strength: 1.0,
        }
    }
}

impl DestroyAdversary {
    pub fn new(r_min: f64) -> Self {
        Self {
            r_min,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.r_min.is_finite() {
            return Err(Error::param(
                "r_min",
                format!("must be finite, got {}", self.r_min),
            ));
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::param(
                "strength",
                format!("must lie in [0, 1], got {}", self.strength),
            ));
        }
        Ok(())
    }
}

/// A state-action pair `(s, a)`.
pub type Pair = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureReport {
    pub alpha: f64,
    pub r_min: f64,
    /// False when the adversary does not flatten the worst case to `r_min`;
    /// the remaining fields are then not meaningful.
    pub applicable: bool,
    /// Largest deviation of the worst-case values from `r_min`.
    pub precondition_error: f64,
    /// False at `alpha = 0`, where every value equals `r_min`.
    pub ordering_checked: bool,
    /// Ordered pairs `(p, p')` with `Q_nominal(p) > Q_nominal(p') + tol` whose
    /// preserving values are not strictly ordered the same way.
    pub violations: Vec<(Pair, Pair)>,
    /// `max |Q_alpha - ((1 - alpha) r_min + alpha Q_nominal)|` over
    /// non-terminal pairs.
    pub max_gap_error: f64,
    pub tol: f64,
}

impl StructureReport {
    pub fn identity_holds(&self) -> bool {
        self.applicable && self.max_gap_error < self.tol
    }

    pub fn passed(&self) -> bool {
        self.identity_holds() && self.violations.is_empty()
    }
}

/// Appends a sink state to `mdp`. Original terminals stay terminal.
fn with_sink(mdp: &TabularMdp, r_min: f64) -> Result<TabularMdp> {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let n1 = n + 1;
    let mut kernel = vec![0.0; n1 * m * n1];
    let mut reward = vec![0.0; n1 * m * n1];
    for s in 0..n1 {
        for a in 0..m {
            let base = (s * m + a) * n1;
            if s == n {
                kernel[base + n] = 1.0;
                reward[base + n] = (1.0 - mdp.gamma()) * r_min;
            } else {
                kernel[base..base + n].copy_from_slice(mdp.row(s, a));
                reward[base..base + n].copy_from_slice(mdp.reward_row(s, a));
                if !mdp.is_terminal(s) {
                    reward[base + n] = (1.0 - mdp.gamma()) * r_min;
                }
            }
        }
    }
    let mut terminal = mdp.terminal_flags().to_vec();
    terminal.push(false);
    TabularMdp::new(
        n1,
        m,
        kernel,
        reward,
        terminal,
        mdp.gamma(),
        mdp.start_state(),
    )
}

/// Worst value the preserving adversary can pick on the teleport segment
/// between the nominal backup `b0` (no attack) and the sink value `floor`
/// (full attack) without dropping below `q_hat`; no attack when every point of
/// the segment is below it.
fn preserving_teleport_value(b0: f64, floor: f64, q_hat: f64) -> f64 {
    let (lo, hi) = (b0.min(floor), b0.max(floor));
    if hi < q_hat {
        b0
    } else {
        q_hat.max(lo)
    }
}

/// Fixed point of the worst-case alpha-preserving backup on the sink MDP.
fn solve_preserving_teleport(
    aug: &TabularMdp,
    q_hat: &QTable,
    opts: SolverOptions,
) -> Result<QTable> {
    let (n, m) = (aug.n_states(), aug.n_actions());
    let sink = n - 1;
    let mut q = QTable::for_mdp(aug);
    let mut next = QTable::for_mdp(aug);
    let mut scratch = vec![0.0; n];
    for k in 1..=opts.max_iters {
        let v = q.state_values().values;
        let mut residual: f64 = 0.0;
        for s in 0..n {
            for a in 0..m {
                let b0 = backup_from_values(aug, &v, s, a, &NominalAdversary, &mut scratch)?;
                let x = if aug.is_terminal(s) {
                    b0
                } else {
                    // the sink column of the continuation is the same for every row
                    preserving_teleport_value(b0, scratch[sink], q_hat.get(s, a))
                };
                residual = residual.max((x - q.get(s, a)).abs());
                next.set(s, a, x);
            }
        }
        std::mem::swap(&mut q, &mut next);
        if residual <= opts.tol {
            return Ok(q);
        }
        if k == opts.max_iters {
            return Err(Error::NotConverged {
                solver: "preserving teleport iteration",
                iterations: k,
                residual,
            });
        }
    }
    unreachable!("max_iters is at least one")
}

/// Solves the nominal problem and the alpha-preserving problem under the
/// destroy adversary, then checks the rescaling identity and ordering transfer
/// on every non-terminal pair of `mdp`.
pub fn check_structure_preservation(
    mdp: &TabularMdp,
    alpha: f64,
    destroy: &DestroyAdversary,
    tol: f64,
) -> Result<StructureReport> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(
            "alpha",
            format!("must lie in [0, 1], got {alpha}"),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tol", format!("must be positive, got {tol}")));
    }
    destroy.validate()?;
    let r_min = destroy.r_min;
    let opts = SolverOptions::new((tol * 1e-3).max(1e-13), 1_000_000);
    let aug = with_sink(mdp, r_min)?;
    let sink = mdp.n_states();
    let t = destroy.strength;
    let teleport = |m: &TabularMdp, s: usize, a: usize, _c: &[f64]| -> Result<Vec<f64>> {
        let mut p: Vec<f64> = m.row(s, a).iter().map(|x| (1.0 - t) * x).collect();
        p[sink] += t;
        Ok(p)
    };

    let q_nominal = solve_converged(&aug, &NominalAdversary, opts, "value iteration")?;
    let (q_worst, report) = robust_value_iteration(&aug, &teleport, opts)?;
    let live: Vec<Pair> = (0..mdp.n_states())
        .filter(|&s| !mdp.is_terminal(s))
        .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
        .collect();
    let precondition_error = live
        .iter()
        .map(|&(s, a)| (q_worst.get(s, a) - r_min).abs())
        .fold(0.0, f64::max);
    let mut out = StructureReport {
        alpha,
        r_min,
        applicable: report.converged && precondition_error <= tol,
        precondition_error,
        ordering_checked: false,
        violations: Vec::new(),
        max_gap_error: f64::NAN,
        tol,
    };
    if !out.applicable {
        return Ok(out);
    }

    let thresholds = PreservationThresholds::from_tables(q_nominal.clone(), q_worst, alpha)?;
    let q_alpha = solve_preserving_teleport(&aug, &thresholds.q_hat, opts)?;
    out.max_gap_error = live
        .iter()
        .map(|&(s, a)| {
            (q_alpha.get(s, a) - ((1.0 - alpha) * r_min + alpha * q_nominal.get(s, a))).abs()
        })
        .fold(0.0, f64::max);
    if alpha > 0.0 {
        out.ordering_checked = true;
        for &p in &live {
            for &pp in &live {
                let nominal_gap = q_nominal.get(p.0, p.1) - q_nominal.get(pp.0, pp.1);
                if nominal_gap > tol && q_alpha.get(p.0, p.1) <= q_alpha.get(pp.0, pp.1) {
                    out.violations.push((p, pp));
                }
            }
        }
    }
    Ok(out)
}

/// One nominal preference `p > p'` that flips under the preserving attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reversal {
    /// The nominally preferred pair.
    pub preferred: Pair,
    pub other: Pair,
    /// `Q_nominal(p) - Q_nominal(p')`, positive.
    pub d_nominal: f64,
    /// `Q_worst(p') - Q_worst(p)`.
    pub d_worst: f64,
    /// `Q_alpha(p) - q_hat(p)`.
    pub epsilon_gap_s: f64,
    /// `Q_alpha(p') - q_hat(p')`.
    pub epsilon_gap_sp: f64,
    /// `alpha / (1 - alpha) d_nominal - delta`, which `d_worst` exceeds.
    pub threshold_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreferenceReport {
    pub alpha: f64,
    /// Ordered pairs with a strictly positive nominal gap.
    pub pairs_tested: usize,
    pub reversals: Vec<Reversal>,
    /// Pairs where reversal and inequality disagree by more than the slack.
    pub biconditional_failures: usize,
    /// Disagreements of the same test with the correction term added instead
    /// of subtracted, `d_worst > alpha / (1 - alpha) d_nominal + delta`.
    pub plus_delta_mismatches: usize,
    /// Every reversal satisfies the inequality and vice versa.
    pub holds: bool,
}

/// For every ordered pair `(p, p')` with `d_nominal > 0`, compares
/// "`Q_alpha(p') > Q_alpha(p)`" with
/// `d_worst > alpha / (1 - alpha) d_nominal - delta`, where
/// `delta = (eps(p') - eps(p)) / (1 - alpha)` and
/// `eps = Q_alpha - ((1 - alpha) q_worst + alpha q_nominal)`.
pub fn check_preference_condition(
    q_nominal: &QTable,
    q_worst: &QTable,
    q_alpha_star: &QTable,
    alpha: f64,
) -> Result<PreferenceReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(
            "alpha",
            format!("must lie strictly inside (0, 1), got {alpha}"),
        ));
    }
    let shape = (q_nominal.n_states(), q_nominal.n_actions());
    for t in [q_worst, q_alpha_star] {
        if (t.n_states(), t.n_actions()) != shape {
            return Err(Error::Shape(
                "preference check needs three tables of the same shape".into(),
            ));
        }
    }
    let q_hat =
        PreservationThresholds::from_tables(q_nominal.clone(), q_worst.clone(), alpha)?.q_hat;
    let n = shape.0 * shape.1;
    let (qn, qw, qa, qh) = (
        q_nominal.as_slice(),
        q_worst.as_slice(),
        q_alpha_star.as_slice(),
        q_hat.as_slice(),
    );
    let eps: Vec<f64> = (0..n).map(|i| qa[i] - qh[i]).collect();
    let scale = alpha / (1.0 - alpha);
    let pair = |i: usize| (i / shape.1, i % shape.1);

    let mut out = PreferenceReport {
        alpha,
        pairs_tested: 0,
        reversals: Vec::new(),
        biconditional_failures: 0,
        plus_delta_mismatches: 0,
        holds: true,
    };
    let disagree = |flip: f64, side: f64| {
        (flip > 0.0) != (side > 0.0)
            && (flip.abs() > PREFERENCE_SLACK || side.abs() > PREFERENCE_SLACK)
    };
    for i in 0..n {
        for j in 0..n {
            let d_nominal = qn[i] - qn[j];
            if !(d_nominal > 0.0) {
                continue;
            }
            out.pairs_tested += 1;
            let d_worst = qw[j] - qw[i];
            let delta = (eps[j] - eps[i]) / (1.0 - alpha);
            let threshold_value = scale * d_nominal - delta;
            let flip = qa[j] - qa[i];
            if disagree(flip, d_worst - threshold_value) {
                out.biconditional_failures += 1;
            }
            if disagree(flip, d_worst - (scale * d_nominal + delta)) {
                out.plus_delta_mismatches += 1;
            }
            if flip > 0.0 {
                out.reversals.push(Reversal {
                    preferred: pair(i),
                    other: pair(j),
                    d_nominal,
                    d_worst,
                    epsilon_gap_s: eps[i],
                    epsilon_gap_sp: eps[j],
                    threshold_value,
                });
            }
        }
    }
    out.holds = out.biconditional_failures == 0;
    Ok(out)
}
