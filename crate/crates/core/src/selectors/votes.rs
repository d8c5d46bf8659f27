//! Vote rules for the individual selector families. All pure.

use crate::env::{SurrogateState, FEATURE_COUNT};
use crate::history::{Reservoir, ResolvedDecision, RunningMoments};
use crate::operators::{is_applicable, OperatorCatalog};
use crate::vote::VoteDistribution;

use super::SelectorError;

/// Standardization guard: below this std (or with fewer than two
/// observations) the featurized value is 0.
pub const STD_EPS: f64 = 1e-12;

pub fn uniform_vote(k: usize) -> VoteDistribution {
    VoteDistribution::uniform(k)
}

pub fn dirac_vote(op: usize, k: usize) -> Result<VoteDistribution, SelectorError> {
    if op >= k {
        return Err(SelectorError::NotSelectable(op));
    }
    Ok(VoteDistribution::dirac(op, k))
}

/// Uniform over the operators outside `ops` when every member of `ops`
/// is inapplicable to `state`; uniform over everything otherwise.
/// `ops` are selectable indices.
pub fn applicability_vote(
    ops: &[usize],
    state: &SurrogateState,
    catalog: &OperatorCatalog,
) -> VoteDistribution {
    let k = catalog.selectable_count();
    let all_blocked = ops
        .iter()
        .all(|&op| !is_applicable(catalog.get(catalog.from_selectable(op)).kind, state));
    if !all_blocked || ops.len() >= k {
        return VoteDistribution::uniform(k);
    }
    let mut raw = vec![1.0; k];
    for &op in ops {
        raw[op] = 0.0;
    }
    VoteDistribution::normalize(raw)
}

pub fn single_feature_distance(a: &[f64], b: &[f64], field: usize) -> f64 {
    (a[field] - b[field]).abs()
}

/// `(x - mean) / std` over the moments, or 0 when they are degenerate.
pub fn featurize_standardize(x: f64, moments: &RunningMoments) -> f64 {
    let std = moments.std();
    if moments.count < 2 || std < STD_EPS {
        0.0
    } else {
        (x - moments.mean()) / std
    }
}

/// ECDF of `x` within the reservoir; 0.5 when the reservoir is empty.
pub fn featurize_ecdf(x: f64, reservoir: &Reservoir) -> f64 {
    reservoir.ecdf(x).unwrap_or(0.5)
}

/// `|sum_j u_j phi_j(a_j) - sum_j u_j phi_j(b_j)|`.
pub fn random_projection_distance(
    a: &[f64],
    b: &[f64],
    direction: &[f64; FEATURE_COUNT],
    phi: impl Fn(usize, f64) -> f64,
) -> f64 {
    let pa: f64 = (0..FEATURE_COUNT).map(|j| direction[j] * phi(j, a[j])).sum();
    let pb: f64 = (0..FEATURE_COUNT).map(|j| direction[j] * phi(j, b[j])).sum();
    (pa - pb).abs()
}

/// Orders decisions nearest first; equal distances put the newer record
/// first. Returns `(decision, distance)` pairs; rank 1 is index 0.
pub fn rank_neighbors(
    q: &[ResolvedDecision],
    distance: impl Fn(&ResolvedDecision) -> f64,
) -> Vec<(ResolvedDecision, f64)> {
    let mut ranked: Vec<(ResolvedDecision, f64)> = q.iter().map(|d| (*d, distance(d))).collect();
    ranked.sort_by(|x, y| x.1.total_cmp(&y.1).then(y.0.record.cmp(&x.0.record)));
    ranked
}

/// `weight(O) = sum over ranked neighbours using O of y * alpha^rank`,
/// negatives clamped to zero, then normalized; uniform when nothing is
/// positive. `ranked` yields `(selectable operator, reward)` nearest first.
pub fn history_informed_vote(
    ranked: impl IntoIterator<Item = (usize, i8)>,
    alpha: f64,
    k: usize,
) -> VoteDistribution {
    let mut raw = vec![0.0; k];
    let mut decay = alpha;
    for (op, y) in ranked {
        raw[op] += f64::from(y) * decay;
        decay *= alpha;
    }
    for m in &mut raw {
        if *m < 0.0 {
            *m = 0.0;
        }
    }
    VoteDistribution::normalize(raw)
}

/// Success rate per operator over the `z` nearest neighbours (zero-reward
/// neighbours ignored), normalized; uniform when no operator succeeded.
pub fn knn_vote(ranked: impl IntoIterator<Item = (usize, i8)>, z: usize, k: usize) -> VoteDistribution {
    let mut wins = vec![0u32; k];
    let mut uses = vec![0u32; k];
    for (op, y) in ranked.into_iter().take(z) {
        match y {
            1 => {
                wins[op] += 1;
                uses[op] += 1;
            }
            -1 => uses[op] += 1,
            _ => {}
        }
    }
    let raw = wins
        .iter()
        .zip(&uses)
        .map(|(&w, &u)| if u == 0 { 0.0 } else { f64::from(w) / f64::from(u) })
        .collect();
    VoteDistribution::normalize(raw)
}

/// Elementwise product renormalized; uniform when the supports are disjoint.
pub fn product_vote(a: &[f64], b: &[f64]) -> Result<VoteDistribution, SelectorError> {
    if a.len() != b.len() {
        return Err(SelectorError::LengthMismatch(a.len(), b.len()));
    }
    Ok(VoteDistribution::normalize(
        a.iter().zip(b).map(|(x, y)| x * y).collect(),
    ))
}

/// Share of the total `alpha^r` mass that falls on ranks `1..=top`.
pub fn rank_mass_share(alpha: f64, top: u32) -> f64 {
    let head: f64 = (1..=top).map(|r| alpha.powi(r as i32)).sum();
    let all = alpha / (1.0 - alpha);
    head / all
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, StateParams};

    fn dec(record: usize, operator: usize, reward: i8) -> ResolvedDecision {
        ResolvedDecision {
            record,
            pre: record,
            operator,
            reward,
        }
    }

    #[test]
    fn uniform_and_dirac() {
        assert!(uniform_vote(22).masses().iter().all(|&m| m == 1.0 / 22.0));
        assert_eq!(uniform_vote(1).masses(), &[1.0]);
        assert_eq!(dirac_vote(3, 5).unwrap().masses(), &[0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(dirac_vote(5, 5), Err(SelectorError::NotSelectable(5)));
    }

    #[test]
    fn applicability_blocks_reallow_without_disallowed() {
        let cat = OperatorCatalog::build();
        let cfg = EnvConfig::default();
        let k = cat.selectable_count();
        let reallow = cat.by_name("reallow_for_more").unwrap().index - 1;
        let s = SurrogateState::generate(StateParams::default(), &cfg, 0, "q");
        let v = applicability_vote(&[reallow], &s, &cat);
        assert_eq!(v.masses()[reallow], 0.0);
        assert!(v
            .masses()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != reallow)
            .all(|(_, &m)| (m - 1.0 / (k - 1) as f64).abs() < 1e-15));

        let p = StateParams {
            disallowed_predicates: ["p03".to_string()].into(),
            ..StateParams::default()
        };
        let s = SurrogateState::generate(p, &cfg, 0, "q");
        assert_eq!(applicability_vote(&[reallow], &s, &cat), VoteDistribution::uniform(k));

        let disallow = cat.by_name("disallow_for_more").unwrap().index - 1;
        let p = StateParams {
            disallowed_predicates: cfg.predicate_catalog.iter().map(|p| p.id.clone()).collect(),
            ..StateParams::default()
        };
        let s = SurrogateState::generate(p, &cfg, 0, "q");
        assert_eq!(applicability_vote(&[disallow], &s, &cat).masses()[disallow], 0.0);
    }

    #[test]
    fn ranking_is_nearest_first_with_recency_ties() {
        let q = [dec(0, 0, 1), dec(1, 0, 1), dec(2, 0, 1)];
        let dists = [0.1, 0.5, 0.3];
        let ranked = rank_neighbors(&q, |d| dists[d.record]);
        let order: Vec<usize> = ranked.iter().map(|(d, _)| d.record).collect();
        assert_eq!(order, vec![0, 2, 1]);
        let tied = rank_neighbors(&q, |_| 1.0);
        let order: Vec<usize> = tied.iter().map(|(d, _)| d.record).collect();
        assert_eq!(order, vec![2, 1, 0]);
        assert!(rank_neighbors(&[], |_| 0.0).is_empty());
    }

    #[test]
    fn standardize_examples() {
        let mut m = RunningMoments::default();
        for x in [1.0, 2.0, 3.0] {
            m.push(x);
        }
        assert_eq!(featurize_standardize(2.0, &m), 0.0);
        assert!((featurize_standardize(3.0, &m) - 1.224_744_871_391_589).abs() < 1e-12);
        let mut flat = RunningMoments::default();
        flat.push(4.0);
        flat.push(4.0);
        assert_eq!(featurize_standardize(9.0, &flat), 0.0);
    }

    #[test]
    fn ecdf_featurization() {
        let mut r = Reservoir::new(8, 0);
        assert_eq!(featurize_ecdf(1.0, &r), 0.5);
        for x in [1.0, 2.0, 2.0, 5.0] {
            r.insert(x);
        }
        assert_eq!(featurize_ecdf(0.5, &r), 0.0);
        assert_eq!(featurize_ecdf(5.0, &r), 1.0);
        assert_eq!(featurize_ecdf(2.0, &r), 0.75);
    }

    #[test]
    fn axis_projection_reduces_to_single_feature() {
        let mut e = [0.0; FEATURE_COUNT];
        e[4] = 1.0;
        let a: Vec<f64> = (0..FEATURE_COUNT).map(|j| j as f64 * 0.3).collect();
        let b: Vec<f64> = (0..FEATURE_COUNT).map(|j| (j as f64).sin()).collect();
        let d = random_projection_distance(&a, &b, &e, |_, x| x);
        assert!((d - single_feature_distance(&a, &b, 4)).abs() < 1e-15);
        assert_eq!(random_projection_distance(&a, &a, &e, |_, x| x), 0.0);
    }

    #[test]
    fn history_vote_examples() {
        assert_eq!(history_informed_vote([], 0.811, 4), VoteDistribution::uniform(4));
        assert_eq!(
            history_informed_vote([(2, 1)], 0.811, 4).masses(),
            &[0.0, 0.0, 1.0, 0.0]
        );
        // raw [0.5 - 0.125, 0.25] = [0.375, 0.25]
        let v = history_informed_vote([(0, 1), (1, 1), (0, -1)], 0.5, 2);
        assert!((v.masses()[0] - 0.6).abs() < 1e-15);
        assert!((v.masses()[1] - 0.4).abs() < 1e-15);
        // Only failures: nothing positive, so uniform.
        assert_eq!(history_informed_vote([(1, -1)], 0.5, 2), VoteDistribution::uniform(2));
    }

    #[test]
    fn knn_examples() {
        assert_eq!(knn_vote([(3, 1)], 5, 5).masses(), &[0.0, 0.0, 0.0, 1.0, 0.0]);
        // ops: 0 -> +1,-1 (rate 1/2); 1 -> +1 (rate 1); 2 -> 0 (ignored)
        let v = knn_vote([(0, 1), (1, 1), (0, -1), (2, 0)], 10, 3);
        assert!((v.masses()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((v.masses()[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(v.masses()[2], 0.0);
        // z cuts off the later neighbours.
        assert_eq!(knn_vote([(1, 1), (0, 1)], 1, 2).masses(), &[0.0, 1.0]);
    }

    #[test]
    fn product_examples() {
        let v = product_vote(&[0.5, 0.5, 0.0], &[0.2, 0.6, 0.2]).unwrap();
        for (g, w) in v.masses().iter().zip([0.25, 0.75, 0.0]) {
            assert!((g - w).abs() < 1e-15);
        }
        let u = [1.0 / 3.0; 3];
        let b = [0.2, 0.3, 0.5];
        let v = product_vote(&u, &b).unwrap();
        for (g, w) in v.masses().iter().zip(b) {
            assert!((g - w).abs() < 1e-15);
        }
        assert_eq!(
            product_vote(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            VoteDistribution::uniform(2)
        );
        assert!(product_vote(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn rank_mass_matches_closed_form() {
        assert!((rank_mass_share(0.811, 10) - (1.0 - 0.811f64.powi(10))).abs() < 1e-12);
        assert!((rank_mass_share(0.896, 20) - (1.0 - 0.896f64.powi(20))).abs() < 1e-12);
    }
}
