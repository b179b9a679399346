use rand::{Rng, RngCore};

use crate::error::{Error, Result};

/// One stored step of experience.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    /// Reward after reward scaling.
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    /// `true` for columns still acquirable after the step.
    pub next_valid: Vec<bool>,
}

/// Fixed-capacity ring buffer; once full, each push overwrites the oldest entry.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            inserted: 0,
        })
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total pushes since construction.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.next
        };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform draw of `count` transitions, with replacement.
    pub fn sample(&self, count: usize, rng: &mut dyn RngCore) -> Result<Vec<&Transition>> {
        if self.items.len() < count || count == 0 {
            return Err(Error::InvalidInput(format!(
                "cannot sample {count} from a buffer holding {}",
                self.items.len()
            )));
        }
        Ok((0..count)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}
