use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};

/// One collected transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionRecord {
    pub s: usize,
    pub a: usize,
    pub eta: f64,
    /// Seed that regenerates the attack direction (observation attacks); `0`
    /// for dynamics attacks, whose direction is not needed after the step.
    pub direction_seed: u64,
    pub r: f64,
    pub s_next: usize,
    /// `pi(a | input)` of the behaviour policy at collection time.
    pub behavior_prob: f64,
    pub done: bool,
}

impl TransitionRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.behavior_prob > 0.0 && self.behavior_prob <= 1.0) {
            return Err(Error::RejectedRecord(format!(
                "behavior_prob {} outside (0, 1] for (s={}, a={})",
                self.behavior_prob, self.s, self.a
            )));
        }
        Ok(())
    }
}

/// Fixed-capacity FIFO replay buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    records: VecDeque<TransitionRecord>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::param("buffer_capacity", "must be at least 1"));
        }
        Ok(Self {
            capacity,
            records: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends, evicting the oldest record when full.
    pub fn push(&mut self, record: TransitionRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
    }

    pub fn get(&self, i: usize) -> &TransitionRecord {
        &self.records[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.records.iter()
    }

    /// Uniform draw with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &TransitionRecord {
        &self.records[rng.random_range(0..self.records.len())]
    }
}
