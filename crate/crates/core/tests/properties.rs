//! Property tests for the numeric invariants the learner relies on.

use proptest::prelude::*;

use opsteer_core::autouser::{compute_ell, threshold};
use opsteer_core::decision::{aggregate_votes, argmax_lowest, ucb_indices, SelectorWeights};
use opsteer_core::history::Reservoir;
use opsteer_core::learning::{update_weights, RewardSignal};
use opsteer_core::vote::{VoteDistribution, VoteMatrix};

fn votes(k: usize, rows: usize) -> impl Strategy<Value = VoteMatrix> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, k), rows).prop_map(move |raw| {
        let mut m = VoteMatrix::new(k);
        for r in raw {
            let s: f64 = r.iter().sum();
            if s > 0.0 {
                m.push_row(&r.iter().map(|x| x / s).collect::<Vec<_>>());
            } else {
                m.push_row(&vec![1.0 / k as f64; k]);
            }
        }
        m
    })
}

fn votes_and_weights() -> impl Strategy<Value = (VoteMatrix, Vec<f64>)> {
    (2usize..24, 1usize..10).prop_flat_map(|(k, rows)| {
        (votes(k, rows), prop::collection::vec(-10.0f64..10.0, rows))
    })
}

proptest! {
    #[test]
    fn aggregation_is_a_distribution((v, w) in votes_and_weights()) {
        let d = aggregate_votes(&v, &w);
        prop_assert_eq!(d.len(), v.cols());
        prop_assert!(d.masses().iter().all(|&m| (0.0..=1.0 + 1e-12).contains(&m)));
        prop_assert!((d.masses().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let e = d.entropy();
        prop_assert!(e >= -1e-12 && e <= (v.cols() as f64).ln() + 1e-9);
    }

    #[test]
    fn aggregation_ignores_positive_scaling((v, w) in votes_and_weights(), c in 0.1f64..10.0) {
        let a = aggregate_votes(&v, &w);
        let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
        let b = aggregate_votes(&v, &scaled);
        for (x, y) in a.masses().iter().zip(b.masses()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn update_is_signed_and_zero_sum_over_operators(
        (v, w) in votes_and_weights(),
        y in prop::sample::select(vec![-1i8, 0, 1]),
    ) {
        // Summing the delta over every possible chosen operator gives zero.
        let k = v.cols();
        let mut total = vec![0.0; w.len()];
        for chosen in 0..k {
            let mut ws = SelectorWeights::new(w.clone());
            update_weights(&mut ws, &v, chosen, RewardSignal::of(y)).unwrap();
            for (t, (new, old)) in total.iter_mut().zip(ws.iter().zip(&w)) {
                *t += new - old;
                if y == 0 {
                    prop_assert_eq!(new.to_bits(), old.to_bits());
                }
            }
        }
        prop_assert!(total.iter().all(|t| t.abs() < 1e-9));
    }

    #[test]
    fn untried_operators_come_first(
        masses in prop::collection::vec(0.0f64..1.0, 2..23),
        seed in 0usize..1000,
    ) {
        let k = masses.len();
        let counts: Vec<u64> = (0..k).map(|i| ((i * 7 + seed) % 5) as u64).collect();
        let idx = ucb_indices(&VoteDistribution::from_masses(masses), &counts);
        let pick = argmax_lowest(&idx);
        match counts.iter().position(|&n| n == 0) {
            Some(first_untried) => prop_assert_eq!(pick, first_untried),
            None => prop_assert!(idx.iter().all(|&x| x <= idx[pick])),
        }
    }

    #[test]
    fn threshold_lies_between_its_anchors(alpha in 0.0f64..=1.0, g in 0.01f64..1.0, k in 2usize..40) {
        let ell = compute_ell(k).unwrap();
        let t = threshold(alpha, g, ell);
        let (lo, hi) = (g.min(g.powf(ell)), g.max(g.powf(ell)));
        prop_assert!(t >= lo - 1e-12 && t <= hi + 1e-12);
    }

    #[test]
    fn reservoir_holds_a_sub_multiset(xs in prop::collection::vec(-1e6f64..1e6, 0..400), cap in 1usize..64, seed: u64) {
        let mut r = Reservoir::new(cap, seed);
        for &x in &xs {
            r.insert(x);
        }
        prop_assert_eq!(r.items().len(), xs.len().min(cap));
        let mut pool = xs.clone();
        for &x in r.items() {
            let at = pool.iter().position(|&p| p == x);
            prop_assert!(at.is_some());
            pool.swap_remove(at.unwrap());
        }
        let sorted = r.sorted();
        prop_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
        if let Some(&max) = sorted.last() {
            prop_assert_eq!(r.ecdf(max), Some(1.0));
        }
    }
}
