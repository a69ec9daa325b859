#![allow(dead_code)]

use rand::Rng;
use rprl_core::{QTable, Result, TabularMdp};

/// Dense random MDP without terminals; each row keeps at least one successor.
pub fn random_mdp<R: Rng>(n: usize, m: usize, gamma: f64, rng: &mut R) -> TabularMdp {
    let mut kernel = Vec::with_capacity(n * m * n);
    for _ in 0..n * m {
        let mut row: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.4) {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let keep = rng.random_range(0..n);
        row[keep] += 0.1;
        let total: f64 = row.iter().sum();
        kernel.extend(row.iter().map(|x| x / total));
    }
    let reward = (0..n * m * n)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    TabularMdp::new(n, m, kernel, reward, vec![false; n], gamma, 0).unwrap()
}

pub fn random_coords<R: Rng>(n: usize, rng: &mut R) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)])
        .collect()
}

pub fn random_q<R: Rng>(n: usize, m: usize, scale: f64, rng: &mut R) -> QTable {
    QTable::from_vec(
        n,
        m,
        (0..n * m)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    )
    .unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (upper, lower) = a.split_at_mut(row);
            for (x, y) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *x -= f * y;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x
}

/// Exact Q of the best deterministic stationary policy, by enumerating all
/// `m^n` policies and solving each evaluation system directly.
pub fn q_by_policy_enumeration(mdp: &TabularMdp) -> QTable {
    let (n, m, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let r = |s: usize, a: usize| dot(mdp.row(s, a), mdp.reward_row(s, a));
    let mut best = vec![f64::NEG_INFINITY; n];
    for code in 0..m.pow(n as u32) {
        let pi: Vec<usize> = (0..n).map(|s| (code / m.pow(s as u32)) % m).collect();
        let a_mat = (0..n)
            .map(|s| {
                (0..n)
                    .map(|t| f64::from(u8::from(s == t)) - g * mdp.row(s, pi[s])[t])
                    .collect()
            })
            .collect();
        let v = solve_linear(a_mat, (0..n).map(|s| r(s, pi[s])).collect());
        for s in 0..n {
            best[s] = best[s].max(v[s]);
        }
    }
    let mut q = QTable::zeros(n, m);
    for s in 0..n {
        for a in 0..m {
            q.set(s, a, r(s, a) + g * dot(mdp.row(s, a), &best));
        }
    }
    q
}

/// Two-sided entropic transport cost `min <pi, C> + lambda sum pi (ln pi - 1)`
/// over plans with row sums `p` and column sums `q`. Maximises the dual with
/// damped Newton steps, so the result is exact to rounding.
pub fn entropic_ot(p: &[f64], q: &[f64], cost: &[Vec<f64>], lambda: f64) -> f64 {
    let rows: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
    let cols: Vec<usize> = (0..q.len()).filter(|&j| q[j] > 0.0).collect();
    let (nr, nc) = (rows.len(), cols.len());
    // unknowns: f over rows, g over all columns but the last (pinned to 0)
    let dim = nr + nc - 1;
    let mut x = vec![0.0; dim];
    let pot = |x: &[f64], i: usize, j: usize| {
        let g = if j + 1 < nc { x[nr + j] } else { 0.0 };
        (x[i] + g - cost[rows[i]][cols[j]]) / lambda
    };
    // log-domain Sinkhorn sweeps bring the potentials into range for Newton
    let lse = |v: &[f64]| {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    };
    let (mut f, mut g) = (vec![0.0; nr], vec![0.0; nc]);
    for _ in 0..5 {
        for i in 0..nr {
            let z: Vec<f64> = (0..nc)
                .map(|j| (g[j] - cost[rows[i]][cols[j]]) / lambda)
                .collect();
            f[i] = lambda * (p[rows[i]].ln() - lse(&z));
        }
        for j in 0..nc {
            let z: Vec<f64> = (0..nr)
                .map(|i| (f[i] - cost[rows[i]][cols[j]]) / lambda)
                .collect();
            g[j] = lambda * (q[cols[j]].ln() - lse(&z));
        }
    }
    for i in 0..nr {
        x[i] = f[i] + g[nc - 1];
    }
    for j in 0..nc - 1 {
        x[nr + j] = g[j] - g[nc - 1];
    }
    let dual = |x: &[f64]| {
        let mut d: f64 = (0..nr).map(|i| x[i] * p[rows[i]]).sum();
        d += (0..nc - 1).map(|j| x[nr + j] * q[cols[j]]).sum::<f64>();
        for i in 0..nr {
            for j in 0..nc {
                d -= lambda * pot(x, i, j).exp();
            }
        }
        d
    };
    let mut mu = 1e-6;
    for _ in 0..200 {
        let plan: Vec<Vec<f64>> = (0..nr)
            .map(|i| (0..nc).map(|j| pot(&x, i, j).exp()).collect())
            .collect();
        let mut grad = vec![0.0; dim];
        let mut hess = vec![vec![0.0; dim]; dim];
        for i in 0..nr {
            grad[i] = p[rows[i]] - plan[i].iter().sum::<f64>();
            hess[i][i] = plan[i].iter().sum::<f64>() / lambda;
        }
        for j in 0..nc - 1 {
            let col: f64 = (0..nr).map(|i| plan[i][j]).sum();
            grad[nr + j] = q[cols[j]] - col;
            hess[nr + j][nr + j] = col / lambda;
            for i in 0..nr {
                hess[i][nr + j] = plan[i][j] / lambda;
                hess[nr + j][i] = plan[i][j] / lambda;
            }
        }
        if grad.iter().all(|g| g.abs() < 1e-15) {
            break;
        }
        // Levenberg-Marquardt damping: near-disconnected plans make the
        // Hessian close to singular
        let base = dual(&x);
        let accepted = loop {
            let mut damped = hess.clone();
            for (k, row) in damped.iter_mut().enumerate() {
                row[k] += mu;
            }
            let step = solve_linear(damped, grad.clone());
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
            if dual(&trial) > base {
                mu = (mu * 0.1).max(1e-12);
                break Some(trial);
            }
            if mu > 1e12 {
                break None;
            }
            mu *= 10.0;
        };
        // no ascent left: the dual is maximised to rounding
        match accepted {
            Some(next) => x = next,
            None => break,
        }
    }
    let mut total = 0.0;
    for i in 0..nr {
        for j in 0..nc {
            let pi = pot(&x, i, j).exp();
            if pi > 0.0 {
                total += pi * cost[rows[i]][cols[j]] + lambda * pi * (pi.ln() - 1.0);
            }
        }
    }
    total
}

/// Per-pair candidate rows; the adversary picks the one with the lowest
/// expected continuation, which makes the backup a minimum over a fixed set.
pub struct FiniteSet {
    n_actions: usize,
    rows: Vec<Vec<Vec<f64>>>,
}

impl FiniteSet {
    pub fn random<R: Rng>(mdp: &TabularMdp, extra: usize, rng: &mut R) -> Self {
        let mut rows = Vec::new();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let mut set = vec![mdp.row(s, a).to_vec()];
                for _ in 0..extra {
                    let w: Vec<f64> = (0..mdp.n_states())
                        .map(|_| rng.random::<f64>() + 1e-3)
                        .collect();
                    let t: f64 = w.iter().sum();
                    set.push(w.iter().map(|x| x / t).collect());
                }
                rows.push(set);
            }
        }
        Self {
            n_actions: mdp.n_actions(),
            rows,
        }
    }

    pub fn choice(&self, s: usize, a: usize, k: usize) -> &[f64] {
        &self.rows[s * self.n_actions + a][k]
    }

    pub fn adversary(&self) -> impl Fn(&TabularMdp, usize, usize, &[f64]) -> Result<Vec<f64>> + '_ {
        move |_, s, a, cont| {
            let set = &self.rows[s * self.n_actions + a];
            let best = set
                .iter()
                .min_by(|x, y| dot(x, cont).total_cmp(&dot(y, cont)))
                .unwrap();
            Ok(best.clone())
        }
    }
}
