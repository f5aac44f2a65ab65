//! Fixed-capacity experience replay with uniform without-replacement sampling.

use rand_chacha::ChaCha8Rng;

/// Ring buffer over transitions. After more than `capacity` inserts it holds
/// exactly the most recent `capacity` items.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    data: Vec<T>,
    capacity: usize,
    cursor: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            data: Vec::with_capacity(capacity.min(4096)),
            capacity,
            cursor: 0,
        }
    }

    pub fn push(&mut self, item: T) {
        if self.data.len() < self.capacity {
            self.data.push(item);
        } else {
            self.data[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }

    /// Uniform sample of `batch` distinct items.
    pub fn sample<'a>(&'a self, rng: &mut ChaCha8Rng, batch: usize) -> Vec<&'a T> {
        assert!(batch <= self.len(), "batch larger than buffer");
        rand::seq::index::sample(rng, self.len(), batch)
            .into_iter()
            .map(|i| &self.data[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn ring_keeps_last_capacity_items() {
        let mut buf = ReplayBuffer::new(8);
        for i in 0..30u32 {
            buf.push(i);
        }
        assert_eq!(buf.len(), 8);
        let mut held: Vec<u32> = buf.iter().copied().collect();
        held.sort_unstable();
        assert_eq!(held, (22..30).collect::<Vec<_>>());
    }

    #[test]
    fn sample_is_without_replacement() {
        let mut buf = ReplayBuffer::new(16);
        for i in 0..16u32 {
            buf.push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let batch: Vec<u32> = buf.sample(&mut rng, 10).into_iter().copied().collect();
            let mut unique = batch.clone();
            unique.sort_unstable();
            unique.dedup();
            assert_eq!(unique.len(), batch.len());
        }
    }
}
