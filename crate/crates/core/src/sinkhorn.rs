//! Entropic optimal-transport worst case over successor distributions.
//!
//! For a nominal row `p0`, continuation values `V'` and radius `eta`, the
//! adversary solves
//!
//! ```text
//! min_pi  sum_ij pi_ij (V'_i + omega D_ij) + lambda sum_ij pi_ij (ln pi_ij - 1)
//! s.t.    sum_i pi_ij = p0_j,   omega = 1 / eta
//! ```
//!
//! and returns the first marginal `p*_i = sum_j pi_ij`. In scaling form the
//! plan is `pi = diag(u) K diag(v)` with `K = exp(-omega D / lambda)`,
//! `u = w = exp(-V' / lambda)` and `v = p0 / (K^T u + eps)`. Only columns with
//! `p0_j > 0` carry mass; every state may receive mass.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::solvers::{dot, Adversary};

/// Exponent magnitude above which the log-domain path is used.
const LOG_DOMAIN_THRESHOLD: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkhornParams {
    /// Fixed entropic regularization. When absent, `lambda_rel * range(V')`
    /// is used per call.
    pub lambda_reg: Option<f64>,
    pub lambda_rel: f64,
    pub epsilon_div: f64,
    pub max_sweeps: usize,
    pub marginal_tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            lambda_reg: None,
            lambda_rel: 0.1,
            epsilon_div: 1e-30,
            max_sweeps: 100,
            marginal_tol: 1e-10,
        }
    }
}

impl SinkhornParams {
    pub fn with_fixed_lambda(lambda: f64) -> Self {
        Self {
            lambda_reg: Some(lambda),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda_reg {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::param(
                    "lambda_reg",
                    format!("must be positive, got {l}"),
                ));
            }
        }
        if !(self.lambda_rel > 0.0 && self.lambda_rel.is_finite()) {
            return Err(Error::param(
                "lambda_rel",
                format!("must be positive, got {}", self.lambda_rel),
            ));
        }
        if !(self.epsilon_div > 0.0) {
            return Err(Error::param(
                "epsilon_div",
                format!("must be positive, got {}", self.epsilon_div),
            ));
        }
        if !(self.marginal_tol > 0.0) {
            return Err(Error::param(
                "marginal_tol",
                format!("must be positive, got {}", self.marginal_tol),
            ));
        }
        if self.max_sweeps == 0 {
            return Err(Error::param("max_sweeps", "must be at least 1"));
        }
        Ok(())
    }

    /// Regularization used for a given continuation vector, or `None` when the
    /// relative rule applies and `V'` is constant.
    pub fn lambda_for(&self, continuation: &[f64]) -> Option<f64> {
        match self.lambda_reg {
            Some(l) => Some(l),
            None => {
                let (lo, hi) = min_max(continuation);
                let range = hi - lo;
                (range > 0.0).then_some(self.lambda_rel * range)
            }
        }
    }
}

/// Squared Euclidean distances between state coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    d: Vec<f64>,
}

impl CostMatrix {
    pub fn squared_euclidean(coords: &[[f64; 2]]) -> Self {
        let n = coords.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let dx = coords[i][0] - coords[j][0];
                let dy = coords[i][1] - coords[j][1];
                d[i * n + j] = dx * dx + dy * dy;
            }
        }
        Self { n, d }
    }

    /// Arbitrary cost matrix; must be square, symmetric, non-negative with a
    /// zero diagonal.
    pub fn from_vec(n: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::Shape(format!(
                "{} entries for a {n}x{n} cost matrix",
                d.len()
            )));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::param(
                    "cost",
                    format!("diagonal entry {i} is {}", d[i * n + i]),
                ));
            }
            for j in 0..n {
                let x = d[i * n + j];
                if !(x >= 0.0 && x.is_finite()) || x != d[j * n + i] {
                    return Err(Error::param(
                        "cost",
                        format!("entry ({i}, {j}) = {x} breaks symmetry or sign"),
                    ));
                }
            }
        }
        Ok(Self { n, d })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        // symmetric, so row j doubles as column j
        self.d[j * self.n..(j + 1) * self.n].iter().copied()
    }
}

/// `plan[i * n + j]` is the mass moved from nominal successor `j` to `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub n: usize,
    pub plan: Vec<f64>,
    pub worst_marginal: Vec<f64>,
    pub lambda: f64,
    pub sweeps: usize,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.n + j]
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.plan[i * self.n + j];
            }
        }
        out
    }

    /// `sum_ij pi_ij D_ij`.
    pub fn transport_cost(&self, cost: &CostMatrix) -> f64 {
        (0..self.n)
            .flat_map(|i| (0..self.n).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j) * cost.get(i, j))
            .sum()
    }
}

fn min_max(x: &[f64]) -> (f64, f64) {
    x.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

fn check_inputs(p0: &[f64], continuation: &[f64], cost: &CostMatrix, eta: f64) -> Result<()> {
    if !(eta > 0.0) {
        return Err(Error::NonPositiveRadius(eta));
    }
    let n = cost.len();
    if p0.len() != n || continuation.len() != n {
        return Err(Error::Shape(format!(
            "nominal row {} / continuation {} / cost {n}x{n}",
            p0.len(),
            continuation.len()
        )));
    }
    Ok(())
}

/// Computes the plan column by column. `column(j, col)` receives each support
/// column in turn. Returns the lambda used and the number of sweeps.
#[allow(clippy::too_many_arguments)]
fn solve_columns(
    p0: &[f64],
    continuation: &[f64],
    cost: &CostMatrix,
    eta: f64,
    params: &SinkhornParams,
    context: &dyn Fn() -> String,
    scratch: &mut Vec<f64>,
    mut column: impl FnMut(usize, &[f64]),
) -> Result<Option<(f64, usize)>> {
    if continuation.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: context(),
            lambda: params.lambda_reg.unwrap_or(f64::NAN),
        });
    }
    let Some(lambda) = params.lambda_for(continuation) else {
        return Ok(None);
    };
    let n = p0.len();
    let omega = 1.0 / eta;
    let (v_min, v_max) = min_max(continuation);
    // u = w = exp(-(V' - min V') / lambda), shifted so the largest weight is 1
    let w_exp_max = (v_max - v_min) / lambda;
    scratch.clear();
    scratch.resize(2 * n, 0.0);
    let (col, log_w) = scratch.split_at_mut(n);
    for (lw, v) in log_w.iter_mut().zip(continuation) {
        *lw = -(v - v_min) / lambda;
    }
    let mut sweeps = 1;
    for (j, &pj) in p0.iter().enumerate() {
        if pj <= 0.0 {
            continue;
        }
        let k_exp_max = cost.column(j).fold(0.0_f64, f64::max) * omega / lambda;
        if w_exp_max + k_exp_max <= LOG_DOMAIN_THRESHOLD {
            // multiplicative form
            for ((c, lw), dij) in col.iter_mut().zip(log_w.iter()).zip(cost.column(j)) {
                *c = lw.exp() * (-omega * dij / lambda).exp();
            }
        } else {
            let mut m = f64::NEG_INFINITY;
            for ((c, lw), dij) in col.iter_mut().zip(log_w.iter()).zip(cost.column(j)) {
                *c = lw - omega * dij / lambda;
                m = m.max(*c);
            }
            for c in col.iter_mut() {
                *c = (*c - m).exp();
            }
        }
        // v_j = p0_j / (K^T u)_j, refined until the column marginal holds
        let mut v = 1.0;
        let mut k = 0;
        loop {
            let sum: f64 = col.iter().sum::<f64>() * v;
            if !sum.is_finite() || sum <= 0.0 {
                return Err(Error::NonFinite {
                    context: context(),
                    lambda,
                });
            }
            if (sum - pj).abs() <= params.marginal_tol || k >= params.max_sweeps {
                break;
            }
            v *= pj / (sum + params.epsilon_div);
            k += 1;
        }
        sweeps = sweeps.max(k);
        for c in col.iter_mut() {
            *c *= v;
        }
        column(j, col);
    }
    Ok(Some((lambda, sweeps)))
}

/// Full transport plan and its first marginal. Errors when `eta <= 0`; callers
/// bypass that case with the nominal row.
pub fn sinkhorn_worst_case(
    p0: &[f64],
    continuation: &[f64],
    cost: &CostMatrix,
    eta: f64,
    params: &SinkhornParams,
) -> Result<TransportPlan> {
    params.validate()?;
    check_inputs(p0, continuation, cost, eta)?;
    let n = p0.len();
    let mut plan = vec![0.0; n * n];
    let mut scratch = Vec::new();
    let solved = solve_columns(
        p0,
        continuation,
        cost,
        eta,
        params,
        &String::new,
        &mut scratch,
        |j, col| {
            for (i, &x) in col.iter().enumerate() {
                plan[i * n + j] = x;
            }
        },
    )?;
    let (lambda, sweeps) = match solved {
        Some(x) => x,
        None => {
            for (j, &p) in p0.iter().enumerate() {
                plan[j * n + j] = p;
            }
            (0.0, 0)
        }
    };
    let worst_marginal = (0..n)
        .map(|i| plan[i * n..(i + 1) * n].iter().sum())
        .collect();
    Ok(TransportPlan {
        n,
        plan,
        worst_marginal,
        lambda,
        sweeps,
    })
}

/// First marginal only, without materialising the plan.
pub fn sinkhorn_marginal(
    p0: &[f64],
    continuation: &[f64],
    cost: &CostMatrix,
    eta: f64,
    params: &SinkhornParams,
) -> Result<Vec<f64>> {
    check_inputs(p0, continuation, cost, eta)?;
    marginal_with_context(
        p0,
        continuation,
        cost,
        eta,
        params,
        &String::new,
        &mut Vec::new(),
    )
}

fn marginal_with_context(
    p0: &[f64],
    continuation: &[f64],
    cost: &CostMatrix,
    eta: f64,
    params: &SinkhornParams,
    context: &dyn Fn() -> String,
    scratch: &mut Vec<f64>,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; p0.len()];
    let solved = solve_columns(
        p0,
        continuation,
        cost,
        eta,
        params,
        context,
        scratch,
        |_, col| {
            for (o, x) in out.iter_mut().zip(col) {
                *o += x;
            }
        },
    )?;
    if solved.is_none() {
        out.copy_from_slice(p0);
    }
    Ok(out)
}

/// Adversary family indexed by a radius; `eta = 0` means no attack.
pub trait RadiusAdversary {
    fn perturb_at<'m>(
        &self,
        mdp: &'m TabularMdp,
        s: usize,
        a: usize,
        eta: f64,
        continuation: &[f64],
    ) -> Result<Cow<'m, [f64]>>;
}

/// Sinkhorn worst case over a fixed cost matrix, at any radius.
#[derive(Debug, Clone)]
pub struct SinkhornFamily {
    pub cost: CostMatrix,
    pub params: SinkhornParams,
}

impl SinkhornFamily {
    pub fn new(coords: &[[f64; 2]], params: SinkhornParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            cost: CostMatrix::squared_euclidean(coords),
            params,
        })
    }

    pub fn for_mdp(mdp: &TabularMdp, coords: &[[f64; 2]], params: SinkhornParams) -> Result<Self> {
        if coords.len() != mdp.n_states() {
            return Err(Error::Shape(format!(
                "{} coordinates for {} states",
                coords.len(),
                mdp.n_states()
            )));
        }
        Self::new(coords, params)
    }

    /// Uniform-radius adversary built from this family.
    pub fn at(&self, radius: RadiusMap) -> SinkhornAdversary<'_> {
        SinkhornAdversary {
            family: Cow::Borrowed(self),
            radius,
        }
    }
}

impl RadiusAdversary for SinkhornFamily {
    fn perturb_at<'m>(
        &self,
        mdp: &'m TabularMdp,
        s: usize,
        a: usize,
        eta: f64,
        continuation: &[f64],
    ) -> Result<Cow<'m, [f64]>> {
        let p0 = mdp.row(s, a);
        if eta <= 0.0 {
            return Ok(Cow::Borrowed(p0));
        }
        check_inputs(p0, continuation, &self.cost, eta)?;
        let context = || format!(" for (s={s}, a={a})");
        let p = marginal_with_context(
            p0,
            continuation,
            &self.cost,
            eta,
            &self.params,
            &context,
            &mut Vec::new(),
        )?;
        // the nominal row is always inside the ball; entropic smoothing can
        // land above it when the nominal mass already sits on the worst successor
        if dot(&p, continuation) > dot(p0, continuation) {
            return Ok(Cow::Borrowed(p0));
        }
        Ok(Cow::Owned(p))
    }
}

/// Per-pair radii, or one radius everywhere.
#[derive(Debug, Clone, PartialEq)]
pub enum RadiusMap {
    Uniform(f64),
    PerPair { n_actions: usize, values: Vec<f64> },
}

impl RadiusMap {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        match self {
            RadiusMap::Uniform(eta) => *eta,
            RadiusMap::PerPair { n_actions, values } => values[s * n_actions + a],
        }
    }

    fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        let bad = |x: f64| !(x >= 0.0 && x.is_finite());
        match self {
            RadiusMap::Uniform(eta) if bad(*eta) => {
                Err(Error::param("radius", format!("got {eta}")))
            }
            RadiusMap::PerPair { n_actions, values } => {
                if *n_actions != mdp.n_actions() || values.len() != mdp.n_states() * mdp.n_actions()
                {
                    return Err(Error::Shape(format!(
                        "radius map of {} entries",
                        values.len()
                    )));
                }
                match values.iter().position(|&x| bad(x)) {
                    Some(i) => Err(Error::param(
                        "radius",
                        format!("entry {i} is {}", values[i]),
                    )),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }
}

/// Sinkhorn adversary with a radius attached to every pair.
#[derive(Debug, Clone)]
pub struct SinkhornAdversary<'f> {
    family: Cow<'f, SinkhornFamily>,
    radius: RadiusMap,
}

impl SinkhornAdversary<'_> {
    pub fn radius(&self) -> &RadiusMap {
        &self.radius
    }

    pub fn family(&self) -> &SinkhornFamily {
        &self.family
    }
}

impl Adversary for SinkhornAdversary<'_> {
    fn perturb<'m>(
        &self,
        mdp: &'m TabularMdp,
        s: usize,
        a: usize,
        continuation: &[f64],
    ) -> Result<Cow<'m, [f64]>> {
        self.family
            .perturb_at(mdp, s, a, self.radius.get(s, a), continuation)
    }
}

/// Robust-value-iteration adversary over the given coordinates and radii.
pub fn make_rvi_adversary(
    mdp: &TabularMdp,
    coords: &[[f64; 2]],
    radius_map: RadiusMap,
    params: SinkhornParams,
) -> Result<SinkhornAdversary<'static>> {
    radius_map.validate(mdp)?;
    let family = SinkhornFamily::for_mdp(mdp, coords, params)?;
    Ok(SinkhornAdversary {
        family: Cow::Owned(family),
        radius: radius_map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> CostMatrix {
        let coords: Vec<[f64; 2]> = (0..n).map(|i| [i as f64, 0.0]).collect();
        CostMatrix::squared_euclidean(&coords)
    }

    #[test]
    fn constant_continuation_returns_nominal() {
        let p0 = [0.2, 0.5, 0.3];
        let plan =
            sinkhorn_worst_case(&p0, &[4.0; 3], &line(3), 1.0, &SinkhornParams::default()).unwrap();
        assert_eq!(plan.worst_marginal, p0.to_vec());
    }

    #[test]
    fn tiny_radius_pins_nominal() {
        let p0 = [0.6, 0.4, 0.0];
        let v = [1.0, 0.0, -2.0];
        let p = sinkhorn_marginal(&p0, &v, &line(3), 1e-4, &SinkhornParams::default()).unwrap();
        for (a, b) in p.iter().zip(&p0) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mass_moves_to_low_value_successor() {
        let p0 = [1.0, 0.0, 0.0];
        let v = [10.0, 0.0, 10.0];
        let plan = sinkhorn_worst_case(
            &p0,
            &v,
            &line(3),
            1.0,
            &SinkhornParams::with_fixed_lambda(0.05),
        )
        .unwrap();
        assert!(plan.worst_marginal[1] > 0.99);
        assert!(dot(&plan.worst_marginal, &v) < dot(&p0, &v));
    }

    #[test]
    fn column_marginal_and_mass() {
        let p0 = [0.1, 0.0, 0.7, 0.2];
        let v = [3.0, -1.0, 0.5, 2.0];
        let plan = sinkhorn_worst_case(&p0, &v, &line(4), 0.7, &SinkhornParams::default()).unwrap();
        for (c, p) in plan.column_sums().iter().zip(&p0) {
            assert!((c - p).abs() <= 1e-10);
        }
        let total: f64 = plan.worst_marginal.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(plan.worst_marginal.iter().all(|&x| x >= 0.0));
        // zero-probability columns carry nothing
        assert!((0..4).all(|i| plan.get(i, 1) == 0.0));
    }

    #[test]
    fn log_domain_matches_multiplicative_form() {
        // same instance at two scales: the large one crosses the log-domain threshold
        let p0 = [0.5, 0.5, 0.0];
        let v = [1.0, 0.0, 0.2];
        let small = sinkhorn_marginal(
            &p0,
            &v,
            &line(3),
            2.0,
            &SinkhornParams::with_fixed_lambda(0.5),
        )
        .unwrap();
        let v_big: Vec<f64> = v.iter().map(|x| x * 100.0).collect();
        let big = sinkhorn_worst_case(
            &p0,
            &v_big,
            &line(3),
            2.0 / 100.0,
            &SinkhornParams::with_fixed_lambda(50.0),
        )
        .unwrap()
        .worst_marginal;
        for (a, b) in small.iter().zip(&big) {
            assert!((a - b).abs() < 1e-12, "{small:?} vs {big:?}");
        }
        // extreme scale stays finite
        let v_huge: Vec<f64> = v.iter().map(|x| x * 1e4).collect();
        let p = sinkhorn_marginal(
            &p0,
            &v_huge,
            &line(3),
            1.0,
            &SinkhornParams::with_fixed_lambda(1.0),
        )
        .unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn non_positive_radius_rejected() {
        let r = sinkhorn_worst_case(&[1.0], &[0.0], &line(1), 0.0, &SinkhornParams::default());
        assert!(matches!(r, Err(Error::NonPositiveRadius(_))));
    }

    #[test]
    fn non_finite_continuation_names_pair() {
        let mdp = TabularMdp::new(
            2,
            1,
            vec![0.5, 0.5, 0.0, 1.0],
            vec![0.0; 4],
            vec![false, true],
            0.9,
            0,
        )
        .unwrap();
        let family =
            SinkhornFamily::for_mdp(&mdp, &[[0.0, 0.0], [1.0, 0.0]], SinkhornParams::default())
                .unwrap();
        let err = family
            .perturb_at(&mdp, 0, 0, 1.0, &[f64::NAN, 0.0])
            .unwrap_err();
        assert!(err.to_string().contains("(s=0, a=0)"), "{err}");
    }

    #[test]
    fn smoothing_above_nominal_falls_back_to_nominal() {
        // all nominal mass already on the worst successor
        let mdp = TabularMdp::new(
            3,
            1,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            vec![0.0; 9],
            vec![false; 3],
            0.9,
            0,
        )
        .unwrap();
        let coords = [[0.0, 0.0], [0.3, 0.0], [0.6, 0.0]];
        let v = [0.0, 1.0, 1.0];
        let params = SinkhornParams::with_fixed_lambda(0.5);
        let family = SinkhornFamily::for_mdp(&mdp, &coords, params).unwrap();
        let raw = sinkhorn_marginal(mdp.row(0, 0), &v, &family.cost, 2.0, &params).unwrap();
        assert!(dot(&raw, &v) > 0.0);
        assert_eq!(
            family.perturb_at(&mdp, 0, 0, 2.0, &v).unwrap().as_ref(),
            mdp.row(0, 0)
        );
    }

    #[test]
    fn cost_matrix_shape() {
        let d = line(3);
        assert_eq!(d.get(0, 2), 4.0);
        assert_eq!(d.get(2, 0), 4.0);
        assert!(CostMatrix::from_vec(2, vec![0.0, 1.0, 2.0, 0.0]).is_err());
        assert!(CostMatrix::from_vec(2, vec![0.0, 1.0, 1.0, 0.0]).is_ok());
    }

    #[test]
    fn zero_radius_map_is_nominal() {
        let mdp = TabularMdp::new(
            2,
            1,
            vec![0.5, 0.5, 0.0, 1.0],
            vec![0.0; 4],
            vec![false, true],
            0.9,
            0,
        )
        .unwrap();
        let adv = make_rvi_adversary(
            &mdp,
            &[[0.0, 0.0], [1.0, 0.0]],
            RadiusMap::Uniform(0.0),
            SinkhornParams::default(),
        )
        .unwrap();
        let p = adv.perturb(&mdp, 0, 0, &[1.0, -1.0]).unwrap();
        assert_eq!(&*p, mdp.row(0, 0));
    }

    #[test]
    fn bad_params_rejected() {
        let p = SinkhornParams {
            lambda_reg: Some(0.0),
            ..SinkhornParams::default()
        };
        assert!(p.validate().is_err());
        let p = SinkhornParams {
            marginal_tol: 0.0,
            ..SinkhornParams::default()
        };
        assert!(p.validate().is_err());
    }
}
