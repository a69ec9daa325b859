//! Attack directions for dynamics and observation perturbations.

use rand::Rng;

use crate::mdp::TabularMdp;
use crate::solvers::continuation_into;
use crate::tables::QTable;

/// Direction that moves one unit of mass from the best-valued successor in the
/// support of `P(.|s, a)` to the worst-valued state reachable from `s` in one
/// step, with values `R(s, a, s') + gamma max Q(s', .)`. Zero when the two
/// coincide in value.
pub fn craft_dynamics_direction(mdp: &TabularMdp, q: &QTable, s: usize, a: usize) -> Vec<f64> {
    let n = mdp.n_states();
    let v = q.state_values().values;
    let mut cont = vec![0.0; n];
    continuation_into(mdp, &v, s, a, &mut cont);
    let mut direction = vec![0.0; n];
    let row = mdp.row(s, a);
    let best = (0..n)
        .filter(|&t| row[t] > 0.0)
        .fold(None, |acc: Option<usize>, t| match acc {
            Some(b) if cont[b] >= cont[t] => Some(b),
            _ => Some(t),
        });
    let worst = mdp
        .reachable_from(s)
        .into_iter()
        .fold(None, |acc: Option<usize>, t| match acc {
            Some(w) if cont[w] <= cont[t] => Some(w),
            _ => Some(t),
        });
    if let (Some(b), Some(w)) = (best, worst) {
        if cont[w] < cont[b] {
            direction[b] = -1.0;
            direction[w] = 1.0;
        }
    }
    direction
}

/// `P_xi ∝ max(P + eta A, 0)`, renormalised. `eta = 0` returns `P` unchanged.
pub fn perturbed_row(p: &[f64], direction: &[f64], eta: f64) -> Vec<f64> {
    if eta == 0.0 || direction.iter().all(|&d| d == 0.0) {
        return p.to_vec();
    }
    let mut out: Vec<f64> = p
        .iter()
        .zip(direction)
        .map(|(p, d)| (p + eta * d).max(0.0))
        .collect();
    let z: f64 = out.iter().sum();
    if z > 0.0 {
        out.iter_mut().for_each(|x| *x /= z);
        out
    } else {
        p.to_vec()
    }
}

/// Uniform direction in `[-1, 1]^dim` scaled to unit Euclidean norm.
pub fn craft_rua_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    assert!(dim >= 1, "direction dimension must be at least 1");
    loop {
        let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return u.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Samples an index from a probability vector.
pub(crate) fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}
