use serde::{Deserialize, Serialize};

/// Count, sum and sum of squares of a stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningMoments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    /// Population variance, clamped at zero.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let m = self.mean();
        (self.sum_sq / self.count as f64 - m * m).max(0.0)
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_computation() {
        let xs = [1.0, 2.0, 3.0];
        let mut m = RunningMoments::default();
        xs.iter().for_each(|&x| m.push(x));
        assert_eq!(m.mean(), 2.0);
        assert!((m.variance() - 2.0 / 3.0).abs() < 1e-15);
    }
}
