use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// One transition `(s, a, s', r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub s: Vec<f64>,
    pub a: u8,
    pub s_next: Vec<f64>,
    pub r: f64,
    pub terminal: bool,
}

/// FIFO ring of experiences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
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

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }
}

/// Uniform sample without replacement; `None` while the buffer holds fewer
/// than `batch_size` experiences.
pub fn sample_indices<R: Rng + ?Sized>(len: usize, batch_size: usize, rng: &mut R) -> Option<Vec<usize>> {
    if batch_size == 0 || len < batch_size {
        return None;
    }
    Some(rand::seq::index::sample(rng, len, batch_size).into_vec())
}

pub fn sample_batch<'a, R: Rng + ?Sized>(
    buffer: &'a ReplayBuffer,
    batch_size: usize,
    rng: &mut R,
) -> Option<Vec<&'a Experience>> {
    let idx = sample_indices(buffer.len(), batch_size, rng)?;
    Some(idx.into_iter().map(|i| &buffer.items[i]).collect())
}
