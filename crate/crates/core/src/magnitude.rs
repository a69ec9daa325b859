//! Attack-magnitude selection: candidate grid, largest admissible magnitude,
//! clipped exponential sampling and the expectation of a magnitude-indexed
//! value under that law.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RATIO: f64 = 0.75;
pub const DEFAULT_CANDIDATES: usize = 40;

/// Candidate magnitudes `eta_b * rho^i` for `i < n`, followed by `0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeGrid {
    candidates: Vec<f64>,
}

impl MagnitudeGrid {
    /// With `eta_b = 0` the grid collapses to the single candidate `0`.
    pub fn new(eta_b: f64, rho: f64, n: usize) -> Result<Self> {
        if !(eta_b >= 0.0 && eta_b.is_finite()) {
            return Err(Error::param(
                "eta_b",
                format!("must be a non-negative number, got {eta_b}"),
            ));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::param(
                "rho",
                format!("must lie in (0, 1), got {rho}"),
            ));
        }
        if n == 0 {
            return Err(Error::param("n", "need at least one geometric candidate"));
        }
        if eta_b == 0.0 {
            return Ok(Self {
                candidates: vec![0.0],
            });
        }
        let mut candidates = Vec::with_capacity(n + 1);
        let mut x = eta_b;
        for _ in 0..n {
            candidates.push(x);
            x *= rho;
        }
        candidates.push(0.0);
        Ok(Self { candidates })
    }

    pub fn geometric(eta_b: f64) -> Result<Self> {
        Self::new(eta_b, DEFAULT_RATIO, DEFAULT_CANDIDATES)
    }

    /// Descending, starting at `eta_b`, ending at `0`.
    pub fn candidates(&self) -> &[f64] {
        &self.candidates
    }

    /// Ascending nodes, starting at `0`.
    pub fn nodes(&self) -> Vec<f64> {
        self.candidates.iter().rev().copied().collect()
    }

    pub fn eta_b(&self) -> f64 {
        self.candidates[0]
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Probability mass placed above `eta_star`.
    #[serde(default = "default_epsilon_tail")]
    pub epsilon_tail: f64,
    pub eta_b: f64,
    /// Clip ceiling for sampled magnitudes.
    pub eta_b_plus: f64,
}

fn default_epsilon_tail() -> f64 {
    0.01
}

impl SamplerConfig {
    pub fn new(epsilon_tail: f64, eta_b: f64, eta_b_plus: f64) -> Result<Self> {
        let cfg = Self {
            epsilon_tail,
            eta_b,
            eta_b_plus,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_tail > 0.0 && self.epsilon_tail < 1.0) {
            return Err(Error::param(
                "epsilon_tail",
                format!("must lie in (0, 1), got {}", self.epsilon_tail),
            ));
        }
        if !(self.eta_b >= 0.0 && self.eta_b.is_finite()) {
            return Err(Error::param(
                "eta_b",
                format!("must be a non-negative number, got {}", self.eta_b),
            ));
        }
        if !(self.eta_b_plus >= self.eta_b && self.eta_b_plus.is_finite()) {
            return Err(Error::param(
                "eta_b_plus",
                format!(
                    "eta_b_plus ({}) must be at least eta_b ({})",
                    self.eta_b_plus, self.eta_b
                ),
            ));
        }
        Ok(())
    }

    /// Exponential rate for a given `eta_star > 0`.
    pub fn rate(&self, eta_star: f64) -> f64 {
        -self.epsilon_tail.ln() / eta_star
    }
}

/// Largest candidate `eta` with `q_at(eta) >= q_hat`, or `0` when none
/// qualifies. Candidates are scanned from `eta_b` downwards.
pub fn find_eta_star(q_at: impl Fn(f64) -> f64, q_hat: f64, grid: &MagnitudeGrid) -> f64 {
    grid.candidates
        .iter()
        .copied()
        .find(|&eta| q_at(eta) >= q_hat)
        .unwrap_or(0.0)
}

/// Draws from `Exp(-ln(eps) / eta_star)` clipped to `[0, eta_b_plus]`;
/// `eta_star = 0` returns `0` without consuming randomness.
pub fn sample_magnitude<R: Rng + ?Sized>(eta_star: f64, cfg: &SamplerConfig, rng: &mut R) -> f64 {
    if eta_star <= 0.0 {
        return 0.0;
    }
    let exp = Exp::new(cfg.rate(eta_star)).expect("rate is positive and finite");
    exp.sample(rng).min(cfg.eta_b_plus)
}

/// `E[q(eta)]` under the clipped exponential law with parameter `eta_star`.
///
/// The density part is integrated with trapezoids over the grid nodes in
/// `[0, eta_b_plus]`, each interval weighted by its exact exponential mass
/// `exp(-l x_i) - exp(-l x_{i+1})`; the clip atom at `eta_b_plus` contributes
/// `exp(-l eta_b_plus) q(eta_b_plus)`. Above `eta_b`, `q` is taken constant at
/// `q(eta_b)`. Constants are therefore reproduced exactly.
pub fn expected_q_over_magnitudes(
    q_at: impl Fn(f64) -> f64,
    eta_star: f64,
    cfg: &SamplerConfig,
    grid: &MagnitudeGrid,
) -> f64 {
    if eta_star <= 0.0 {
        return q_at(0.0);
    }
    let rate = cfg.rate(eta_star);
    let top = cfg.eta_b_plus;
    let eta_b = grid.eta_b();
    let q_top = q_at(eta_b.min(top));

    let mut nodes: Vec<(f64, f64)> = grid
        .candidates
        .iter()
        .rev()
        .skip(1)
        .filter(|&&x| x <= top)
        .map(|&x| (x, q_at(x)))
        .collect();
    if nodes.last().map_or(0.0, |n| n.0) < top {
        nodes.push((top, q_top));
    }
    let mut total = 0.0;
    let mut prev_q = q_at(0.0);
    let mut prev_tail = 1.0;
    for (x, q) in nodes {
        let tail = (-rate * x).exp();
        total += (prev_tail - tail) * 0.5 * (prev_q + q);
        prev_q = q;
        prev_tail = tail;
    }
    total + prev_tail * q_top
}
