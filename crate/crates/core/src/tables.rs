//! Dense value tables and greedy policy extraction.

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// Dense `Q(s, a)` table, row-major in `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn for_mdp(mdp: &TabularMdp) -> Self {
        Self::zeros(mdp.n_states(), mdp.n_actions())
    }

    pub fn from_vec(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "{} values for a {n_states}x{n_actions} Q-table",
                values.len()
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `max_a Q(s, a)`.
    pub fn max_value(&self, s: usize) -> f64 {
        self.row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action with ties broken towards the lowest index.
    pub fn greedy_action(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &q) in row.iter().enumerate().skip(1) {
            if q > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn state_values(&self) -> ValueTable {
        ValueTable {
            values: (0..self.n_states).map(|s| self.max_value(s)).collect(),
        }
    }

    /// `|| self - other ||_inf`.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        assert_eq!(
            self.values.len(),
            other.values.len(),
            "Q-table shapes differ"
        );
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Entrywise `(1 - w) * self + w * other`.
    pub fn lerp(&self, other: &QTable, w: f64) -> QTable {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect();
        QTable {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values,
        }
    }
}

/// Dense `V(s)` table.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
}

impl ValueTable {
    pub fn get(&self, s: usize) -> f64 {
        self.values[s]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Deterministic policy: one action per state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreedyPolicy {
    pub actions: Vec<usize>,
}

impl GreedyPolicy {
    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }
}

/// `pi(s) = argmax_a Q(s, a)`, lowest action index on ties.
pub fn greedy_policy(q: &QTable) -> GreedyPolicy {
    GreedyPolicy {
        actions: (0..q.n_states()).map(|s| q.greedy_action(s)).collect(),
    }
}

/// Follows `policy` from `start`, taking the most likely successor at each step
/// (lowest index on ties), until a terminal state or `max_steps` moves.
/// The returned path includes the start state.
pub fn greedy_rollout(
    mdp: &TabularMdp,
    policy: &GreedyPolicy,
    start: usize,
    max_steps: usize,
) -> Vec<usize> {
    let mut path = vec![start];
    let mut s = start;
    for _ in 0..max_steps {
        if mdp.is_terminal(s) {
            break;
        }
        let row = mdp.row(s, policy.action(s));
        let mut next = 0;
        for (t, &p) in row.iter().enumerate() {
            if p > row[next] {
                next = t;
            }
        }
        s = next;
        path.push(s);
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_unique_maxima() {
        let q = QTable::from_vec(2, 3, vec![0.1, 0.5, 0.2, 3.0, -1.0, 2.0]).unwrap();
        assert_eq!(greedy_policy(&q).actions, vec![1, 0]);
    }

    #[test]
    fn greedy_constant_rows_pick_action_zero() {
        let q = QTable::from_vec(3, 4, vec![7.0; 12]).unwrap();
        assert_eq!(greedy_policy(&q).actions, vec![0, 0, 0]);
    }

    #[test]
    fn greedy_tie_prefers_lowest_index() {
        let q = QTable::from_vec(1, 4, vec![0.0, 2.0, 2.0, 1.0]).unwrap();
        assert_eq!(q.greedy_action(0), 1);
    }

    #[test]
    fn state_values_are_row_maxima() {
        let q = QTable::from_vec(2, 2, vec![1.0, -2.0, -5.0, -3.0]).unwrap();
        assert_eq!(q.state_values().values, vec![1.0, -3.0]);
    }

    #[test]
    fn shape_checked() {
        assert!(QTable::from_vec(2, 2, vec![0.0; 3]).is_err());
    }
}
