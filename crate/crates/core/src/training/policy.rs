use rand::Rng;

use crate::error::{Error, Result};

/// Softmax policy over per-state logits: `pi(a|s) ∝ exp(logits[s, a] / temperature)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    logits: Vec<f64>,
    temperature: f64,
}

impl TabularPolicy {
    /// Uniform policy.
    pub fn uniform(n_states: usize, n_actions: usize, temperature: f64) -> Result<Self> {
        Self::from_logits(
            n_states,
            n_actions,
            vec![0.0; n_states * n_actions],
            temperature,
        )
    }

    pub fn from_logits(
        n_states: usize,
        n_actions: usize,
        logits: Vec<f64>,
        temperature: f64,
    ) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::param(
                "temperature",
                format!("must be positive, got {temperature}"),
            ));
        }
        if logits.len() != n_states * n_actions || n_actions == 0 {
            return Err(Error::Shape(format!(
                "{} logits for {n_states}x{n_actions}",
                logits.len()
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            logits,
            temperature,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.logits[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Action probabilities in state `s`.
    pub fn probs(&self, s: usize) -> Vec<f64> {
        let row = &self.logits[s * self.n_actions..(s + 1) * self.n_actions];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = row
            .iter()
            .map(|l| ((l - m) / self.temperature).exp())
            .collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
        p
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs(s)[a]
    }

    /// Samples an action, returning it with its probability.
    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> (usize, f64) {
        let p = self.probs(s);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, &pa) in p.iter().enumerate() {
            acc += pa;
            if u < acc {
                return (a, pa);
            }
        }
        // rounding left u above the cumulative sum: take the last action with mass
        let a = p.iter().rposition(|&x| x > 0.0).unwrap_or(0);
        (a, p[a])
    }

    /// Highest-logit action, lowest index on ties.
    pub fn greedy_action(&self, s: usize) -> usize {
        let row = &self.logits[s * self.n_actions..(s + 1) * self.n_actions];
        let mut best = 0;
        for (a, &l) in row.iter().enumerate().skip(1) {
            if l > row[best] {
                best = a;
            }
        }
        best
    }

    /// `self <- (1 - tau) self + tau other`, on logits.
    pub fn polyak_from(&mut self, other: &TabularPolicy, tau: f64) {
        for (x, y) in self.logits.iter_mut().zip(&other.logits) {
            *x = (1.0 - tau) * *x + tau * y;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rows_are_distributions() {
        let p =
            TabularPolicy::from_logits(2, 3, vec![1.0, 2.0, 3.0, -500.0, 0.0, 700.0], 0.5).unwrap();
        for s in 0..2 {
            let sum: f64 = p.probs(s).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn polyak_full_step_copies() {
        let mut a = TabularPolicy::uniform(2, 2, 1.0).unwrap();
        let b = TabularPolicy::from_logits(2, 2, vec![0.3, -1.0, 2.0, 0.1], 1.0).unwrap();
        a.polyak_from(&b, 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_follows_probabilities() {
        let p = TabularPolicy::from_logits(1, 2, vec![0.0, 2f64.ln()], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let ones = (0..n).filter(|_| p.sample(0, &mut rng).0 == 1).count();
        assert!((ones as f64 / n as f64 - 2.0 / 3.0).abs() < 0.02);
    }
}
