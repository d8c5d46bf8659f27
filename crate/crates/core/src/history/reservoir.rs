use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::seed;

pub const DEFAULT_CAPACITY: usize = 4096;

/// Uniform fixed-size sample of a stream (Algorithm R).
#[derive(Debug, Clone)]
pub struct Reservoir {
    capacity: usize,
    items: Vec<f64>,
    seen: u64,
    version: u64,
    rng: ChaCha8Rng,
}

impl Reservoir {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "reservoir capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            seen: 0,
            version: 0,
            rng: seed::rng(&[seed]),
        }
    }

    pub fn insert(&mut self, x: f64) {
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push(x);
            self.version += 1;
        } else {
            let slot = self.rng.random_range(0..self.seen);
            if (slot as usize) < self.capacity {
                self.items[slot as usize] = x;
                self.version += 1;
            }
        }
    }

    pub fn items(&self) -> &[f64] {
        &self.items
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Bumped whenever the sample contents change.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn ecdf(&self, x: f64) -> Option<f64> {
        crate::stats::ecdf(&self.items, x)
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut s = self.items.clone();
        s.sort_by(f64::total_cmp);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_prefix_until_full() {
        let mut r = Reservoir::new(4, 1);
        for x in [1.0, 2.0, 3.0] {
            r.insert(x);
        }
        assert_eq!(r.items(), &[1.0, 2.0, 3.0]);
        assert_eq!(r.seen(), 3);
        for x in 4..100 {
            r.insert(x as f64);
            assert_eq!(r.items().len(), 4);
            assert_eq!(r.seen(), x as u64);
        }
    }

    #[test]
    fn inclusion_is_uniform() {
        // Each of 20 stream positions should land in a size-5 reservoir
        // with probability 1/4.
        let (cap, len, trials) = (5usize, 20usize, 2000usize);
        let mut hits = vec![0usize; len];
        for trial in 0..trials {
            let mut r = Reservoir::new(cap, trial as u64);
            for i in 0..len {
                r.insert(i as f64);
            }
            for &x in r.items() {
                hits[x as usize] += 1;
            }
        }
        let p = cap as f64 / len as f64;
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for (i, &h) in hits.iter().enumerate() {
            assert!(
                (h as f64 - mean).abs() <= 3.0 * sigma + 1e-9,
                "position {i}: {h} vs {mean} +- {sigma}"
            );
        }
    }
}
