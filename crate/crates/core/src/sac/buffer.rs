use rand::Rng;

use crate::autodiff::Tensor;

/// One replay record `{s, a, r, s', c, done}`.
///
/// `done` marks an absorbing termination only; hitting the horizon is stored
/// as `done = false` so the target still bootstraps.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub c: Vec<f64>,
    pub done: bool,
}

/// Row-stacked minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub s: Tensor,
    pub a: Tensor,
    /// `[rows, 1]`.
    pub r: Tensor,
    pub s_next: Tensor,
    pub c: Tensor,
    /// `[rows, 1]`, 1.0 for absorbing transitions.
    pub done: Tensor,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.s.leading()
    }

    pub fn from_transitions(items: &[&Transition]) -> Self {
        let stack = |f: &dyn Fn(&Transition) -> &[f64]| {
            let rows: Vec<&[f64]> = items.iter().map(|t| f(t)).collect();
            let cols = rows.first().map_or(0, |r| r.len());
            let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
            Tensor::new(vec![items.len(), cols], data).expect("transitions hold finite values")
        };
        let col = |f: &dyn Fn(&Transition) -> f64| {
            Tensor::new(vec![items.len(), 1], items.iter().map(|t| f(t)).collect())
                .expect("transitions hold finite values")
        };
        Self {
            s: stack(&|t| &t.s),
            a: stack(&|t| &t.a),
            r: col(&|t| t.r),
            s_next: stack(&|t| &t.s_next),
            c: stack(&|t| &t.c),
            done: col(&|t| f64::from(u8::from(t.done))),
        }
    }
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            next: 0,
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

    /// Appends, overwriting the oldest record once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform draw with replacement over occupied slots.
    pub fn sample<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Option<Batch> {
        if self.items.is_empty() || rows == 0 {
            return None;
        }
        let picks: Vec<&Transition> = (0..rows)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect();
        Some(Batch::from_transitions(&picks))
    }
}
