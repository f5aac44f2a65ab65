//! Per-episode bookkeeping of which tiles have already paid out the
//! exploration bonus.

/// Set of tile indices visited this episode.
#[derive(Debug, Clone)]
pub struct VisitedSet {
    flags: Vec<bool>,
    count: usize,
}

impl VisitedSet {
    pub fn new(num_tiles: usize) -> Self {
        VisitedSet {
            flags: vec![false; num_tiles],
            count: 0,
        }
    }

    /// Marks `tile` visited. Returns `true` exactly once per tile between
    /// calls to [`clear`](Self::clear).
    pub fn mark(&mut self, tile: usize) -> bool {
        assert!(tile < self.flags.len(), "tile {tile} out of range");
        if self.flags[tile] {
            false
        } else {
            self.flags[tile] = true;
            self.count += 1;
            true
        }
    }

    pub fn contains(&self, tile: usize) -> bool {
        self.flags.get(tile).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn clear(&mut self) {
        self.flags.iter_mut().for_each(|f| *f = false);
        self.count = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_visit_true_second_false() {
        let mut v = VisitedSet::new(10);
        assert!(v.mark(3));
        assert!(!v.mark(3));
        assert_eq!(v.count(), 1);
    }

    #[test]
    fn clear_resets_bonuses() {
        let mut v = VisitedSet::new(4);
        assert!(v.mark(0));
        v.clear();
        assert!(v.mark(0));
    }

    #[test]
    fn true_returns_equal_distinct_tiles() {
        // set-cardinality oracle over a random insertion sequence
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut v = VisitedSet::new(50);
        let mut reference = std::collections::HashSet::new();
        let mut trues = 0;
        for _ in 0..1000 {
            let tile = rng.gen_range(0..50);
            reference.insert(tile);
            if v.mark(tile) {
                trues += 1;
            }
        }
        assert_eq!(trues, reference.len());
        assert_eq!(v.count(), reference.len());
    }
}
