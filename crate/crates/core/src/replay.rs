//! Ring-buffer experience replay.

use rand::Rng;

use crate::adcore::Tensor;
use crate::envs::Transition;
use crate::error::{Error, Result};

/// A minibatch in column form. Scalars are `[m, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Tensor,
    pub costs: Tensor,
    pub next_states: Tensor,
    /// 1.0 where the transition ended in a true terminal state.
    pub terminals: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_transitions(items: &[&Transition], state_dim: usize, action_dim: usize) -> Result<Self> {
        let m = items.len();
        let mut states = Vec::with_capacity(m * state_dim);
        let mut actions = Vec::with_capacity(m * action_dim);
        let mut next = Vec::with_capacity(m * state_dim);
        let (mut r, mut c, mut t) = (Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m));
        for tr in items {
            states.extend_from_slice(&tr.state);
            actions.extend_from_slice(&tr.action);
            next.extend_from_slice(&tr.next_state);
            r.push(tr.reward);
            c.push(tr.cost);
            t.push(if tr.terminal { 1.0 } else { 0.0 });
        }
        Ok(Self {
            states: Tensor::matrix(m, state_dim, states)?,
            actions: Tensor::matrix(m, action_dim, actions)?,
            rewards: Tensor::matrix(m, 1, r)?,
            costs: Tensor::matrix(m, 1, c)?,
            next_states: Tensor::matrix(m, state_dim, next)?,
            terminals: Tensor::matrix(m, 1, t)?,
        })
    }
}

/// Fixed-capacity store that overwrites the oldest entry when full.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            items: Vec::new(),
            cursor: 0,
        })
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

    /// Slot the next push writes to.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if t.state.len() != self.state_dim || t.next_state.len() != self.state_dim || t.action.len() != self.action_dim {
            return Err(Error::shape(
                "ReplayBuffer::push",
                format!(
                    "state {} / next {} / action {} vs ({}, {})",
                    t.state.len(),
                    t.next_state.len(),
                    t.action.len(),
                    self.state_dim,
                    self.action_dim
                ),
            ));
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Oldest to newest.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// `m` distinct slot indices drawn uniformly.
    pub fn sample_indices<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<usize>> {
        if m > self.len() || m == 0 {
            return Err(Error::BufferUnderflow {
                size: self.len(),
                requested: m,
            });
        }
        Ok(rand::seq::index::sample(rng, self.len(), m).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(m, rng)?;
        let items: Vec<&Transition> = idx.iter().map(|&i| &self.items[i]).collect();
        Batch::from_transitions(&items, self.state_dim, self.action_dim)
    }
}
