//! Small numeric helpers shared by the environment, selectors and reports.

/// Eight-number summary in the order the feature vector uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub total: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Summary {
    pub fn to_array(self) -> [f64; 8] {
        [
            self.min,
            self.max,
            self.mean,
            self.median,
            self.std,
            self.total,
            self.q1,
            self.q3,
        ]
    }
}

/// Quantile of an ascending-sorted slice by linear interpolation between
/// closest ranks (position `q * (n - 1)`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Summarizes `values`, where each value stands for `multiplicity` items.
/// `total` is the sum scaled by the multiplicity; the other statistics are
/// over the values as given. Population standard deviation.
pub fn summarize(values: &[f64], multiplicity: f64) -> Summary {
    assert!(!values.is_empty(), "summary of empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let sum: f64 = sorted.iter().sum();
    let mean = sum / n;
    let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Summary {
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        mean,
        median: quantile_sorted(&sorted, 0.5),
        std: var.sqrt(),
        total: sum * multiplicity,
        q1: quantile_sorted(&sorted, 0.25),
        q3: quantile_sorted(&sorted, 0.75),
    }
}

/// `|{b in sample : b <= x}| / |sample|`; `None` for an empty sample.
pub fn ecdf(sample: &[f64], x: f64) -> Option<f64> {
    if sample.is_empty() {
        return None;
    }
    let below = sample.iter().filter(|&&b| b <= x).count();
    Some(below as f64 / sample.len() as f64)
}

/// ECDF over an ascending-sorted sample in `O(log n)`.
pub fn ecdf_sorted(sorted: &[f64], x: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    Some(sorted.partition_point(|&b| b <= x) as f64 / sorted.len() as f64)
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| -m * m.ln())
        .sum()
}

/// Wilson score interval at z = 1.96 for `successes` out of `n`.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = n as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some(sab / (saa.sqrt() * sbb.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_value_summary() {
        let s = summarize(&[0.5], 1.0);
        for v in [s.min, s.max, s.mean, s.median, s.total, s.q1, s.q3] {
            assert_eq!(v, 0.5);
        }
        assert_eq!(s.std, 0.0);
    }

    #[test]
    fn quartiles_interpolate_linearly() {
        let s = summarize(&[0.4, 0.1, 0.3, 0.2], 1.0);
        assert!((s.mean - 0.25).abs() < 1e-15);
        assert!((s.median - 0.25).abs() < 1e-15);
        assert!((s.total - 1.0).abs() < 1e-15);
        assert!((s.q1 - 0.175).abs() < 1e-15);
        assert!((s.q3 - 0.325).abs() < 1e-15);
    }

    #[test]
    fn ecdf_counts_ties_inclusively() {
        let sample = [1.0, 2.0, 2.0, 5.0];
        assert_eq!(ecdf(&sample, 2.0), Some(0.75));
        assert_eq!(ecdf(&sample, 0.0), Some(0.0));
        assert_eq!(ecdf(&sample, 5.0), Some(1.0));
        assert_eq!(ecdf_sorted(&sample, 2.0), Some(0.75));
        assert_eq!(ecdf(&[], 1.0), None);
    }

    #[test]
    fn entropy_extremes() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        let u = vec![1.0 / 22.0; 22];
        assert!((entropy(&u) - 22f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn wilson_matches_closed_form() {
        // p = 0.5, n = 100: centre 0.5, half-width z*sqrt(0.25/n + z^2/(4n^2))/(1+z^2/n)
        let (lo, hi) = wilson_interval(50, 100);
        let z: f64 = 1.959_963_984_540_054;
        let half = z * (0.0025 + z * z / 40_000.0).sqrt() / (1.0 + z * z / 100.0);
        assert!((lo - (0.5 - half)).abs() < 1e-12);
        assert!((hi - (0.5 + half)).abs() < 1e-12);
    }

    #[test]
    fn pearson_perfect_and_degenerate() {
        let a = [1.0, 2.0, 3.0];
        assert!((pearson(&a, &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&a, &[1.0, 1.0, 1.0]), None);
    }
}
