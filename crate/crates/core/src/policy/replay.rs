use ndarray::{Array1, Array2};
use rand::Rng;

/// One joint transition shared by every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct JointExperience {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub reward: f64,
    pub next_observations: Vec<Vec<f64>>,
}

/// Column-stacked sample: one matrix per agent, one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub observations: Vec<Array2<f64>>,
    pub actions: Vec<Array2<f64>>,
    pub rewards: Array1<f64>,
    pub next_observations: Vec<Array2<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_experiences(items: &[&JointExperience]) -> Self {
        let n = items[0].observations.len();
        let stack = |pick: &dyn Fn(&JointExperience) -> &Vec<Vec<f64>>, agent: usize| {
            let width = pick(items[0])[agent].len();
            let mut m = Array2::zeros((items.len(), width));
            for (mut row, e) in m.rows_mut().into_iter().zip(items) {
                row.as_slice_mut()
                    .unwrap()
                    .copy_from_slice(&pick(e)[agent]);
            }
            m
        };
        Self {
            observations: (0..n).map(|a| stack(&|e| &e.observations, a)).collect(),
            actions: (0..n).map(|a| stack(&|e| &e.actions, a)).collect(),
            rewards: items.iter().map(|e| e.reward).collect(),
            next_observations: (0..n).map(|a| stack(&|e| &e.next_observations, a)).collect(),
        }
    }
}

/// Fixed-capacity FIFO ring with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<JointExperience>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends, evicting the oldest entry once full.
    pub fn push(&mut self, e: JointExperience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.head] = e;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &JointExperience> {
        self.items[self.head..].iter().chain(&self.items[..self.head])
    }

    /// Uniform sample with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Option<Batch> {
        if self.items.is_empty() || batch_size == 0 {
            return None;
        }
        let picks: Vec<&JointExperience> = (0..batch_size)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect();
        Some(Batch::from_experiences(&picks))
    }
}
