use crate::error::{Error, Result};

/// `Q((s, a), eta)` stored at fixed magnitude nodes and linearly interpolated
/// between them; values outside the node range are clamped to the end nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaQTable {
    n_states: usize,
    n_actions: usize,
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl EtaQTable {
    /// `nodes` must be strictly increasing.
    pub fn new(n_states: usize, n_actions: usize, nodes: Vec<f64>, init: f64) -> Result<Self> {
        if nodes.is_empty() || nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::param(
                "nodes",
                "must be non-empty and strictly increasing",
            ));
        }
        let m = nodes.len();
        Ok(Self {
            n_states,
            n_actions,
            nodes,
            values: vec![init; n_states * n_actions * m],
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn base(&self, s: usize, a: usize) -> usize {
        (s * self.n_actions + a) * self.nodes.len()
    }

    pub fn node_value(&self, s: usize, a: usize, k: usize) -> f64 {
        self.values[self.base(s, a) + k]
    }

    pub fn set_node_value(&mut self, s: usize, a: usize, k: usize, v: f64) {
        let b = self.base(s, a);
        self.values[b + k] = v;
    }

    /// Interpolation weights: node `i` gets `1 - w`, node `i + 1` gets `w`.
    pub fn locate(&self, eta: f64) -> (usize, f64) {
        let n = &self.nodes;
        if n.len() == 1 || eta <= n[0] {
            return (0, 0.0);
        }
        let last = n.len() - 1;
        if eta >= n[last] {
            return (last - 1, 1.0);
        }
        // first node strictly above eta
        let hi = n.partition_point(|&x| x <= eta);
        let lo = hi - 1;
        (lo, (eta - n[lo]) / (n[hi] - n[lo]))
    }

    pub fn get(&self, s: usize, a: usize, eta: f64) -> f64 {
        let b = self.base(s, a);
        let (i, w) = self.locate(eta);
        if w == 0.0 {
            return self.values[b + i];
        }
        if w == 1.0 {
            return self.values[b + i + 1];
        }
        (1.0 - w) * self.values[b + i] + w * self.values[b + i + 1]
    }

    /// Moves the interpolated value at `eta` by `-step * residual`, spreading the
    /// change over the two neighbouring nodes by their interpolation weights.
    pub fn descend(&mut self, s: usize, a: usize, eta: f64, step: f64, residual: f64) {
        let b = self.base(s, a);
        let (i, w) = self.locate(eta);
        self.values[b + i] -= step * (1.0 - w) * residual;
        if w > 0.0 {
            self.values[b + i + 1] -= step * w * residual;
        }
    }

    /// [`descend`](Self::descend), then restores a non-increasing profile in
    /// `eta` around the touched nodes: nodes above are capped at the upper
    /// touched value and nodes below are raised to the lower one. Large
    /// magnitudes that are rarely sampled thereby inherit what was learned at
    /// smaller ones.
    pub fn descend_monotone(&mut self, s: usize, a: usize, eta: f64, step: f64, residual: f64) {
        self.descend(s, a, eta, step, residual);
        let b = self.base(s, a);
        let m = self.nodes.len();
        let (i, w) = self.locate(eta);
        let hi = if w > 0.0 { i + 1 } else { i };
        let row = &mut self.values[b..b + m];
        let mut cap = row[hi];
        for v in &mut row[hi + 1..] {
            cap = cap.min(*v);
            *v = cap;
        }
        let mut floor = row[i];
        for v in row[..i].iter_mut().rev() {
            floor = floor.max(*v);
            *v = floor;
        }
    }

    pub fn polyak_from(&mut self, other: &EtaQTable, tau: f64) {
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x = (1.0 - tau) * *x + tau * y;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EtaQTable {
        let mut t = EtaQTable::new(1, 1, vec![0.0, 0.5, 1.0], 0.0).unwrap();
        t.set_node_value(0, 0, 0, 1.0);
        t.set_node_value(0, 0, 1, 0.5);
        t.set_node_value(0, 0, 2, -1.0);
        t
    }

    #[test]
    fn nodes_exact_and_linear_between() {
        let t = table();
        assert_eq!(t.get(0, 0, 0.0), 1.0);
        assert_eq!(t.get(0, 0, 0.5), 0.5);
        assert_eq!(t.get(0, 0, 1.0), -1.0);
        assert!((t.get(0, 0, 0.25) - 0.75).abs() < 1e-15);
        assert!((t.get(0, 0, 0.75) - -0.25).abs() < 1e-15);
        assert_eq!(t.get(0, 0, 3.0), -1.0);
        assert_eq!(t.get(0, 0, -1.0), 1.0);
    }

    #[test]
    fn descent_splits_by_weight() {
        let mut t = table();
        t.descend(0, 0, 0.25, 1.0, 1.0);
        assert_eq!(t.node_value(0, 0, 0), 0.5);
        assert_eq!(t.node_value(0, 0, 1), 0.0);
        assert_eq!(t.node_value(0, 0, 2), -1.0);
    }

    #[test]
    fn rejects_unsorted_nodes() {
        assert!(EtaQTable::new(1, 1, vec![0.0, 0.0], 0.0).is_err());
    }
}
