use std::collections::{BTreeMap, BTreeSet};

use dmf_core::dataio::{
    filter_interactions, normalize, sample_negatives, split, CheckinRecord, Dataset, NormalizeMode,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn record(user: &str, item: &str, count: u32, city: &str) -> CheckinRecord {
    CheckinRecord {
        user_id: user.into(),
        item_id: item.into(),
        count,
        lat: 1.0,
        lon: 2.0,
        city: city.into(),
        timestamp: None,
    }
}

fn grid_records(n_users: usize, n_items: usize, seed: u64) -> Vec<CheckinRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for u in 0..n_users {
        for v in 0..n_items {
            if rng.gen_bool(0.4) {
                out.push(record(&format!("u{u:02}"), &format!("p{v:02}"), rng.gen_range(1..5), "A"));
            }
        }
    }
    out
}

/// Textbook Fisher-Yates from the top index down, one bounded draw per step.
fn fisher_yates(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..(i + 1) as u32) as usize;
        perm.swap(i, j);
    }
    perm
}

#[test]
fn split_matches_fisher_yates_oracle() {
    let dataset = normalize(&grid_records(12, 9, 3), NormalizeMode::Binary).unwrap();
    let mut all: Vec<(usize, usize)> = dataset.train.iter().map(|r| (r.user, r.item)).collect();
    all.sort_unstable();
    for seed in [0u64, 7, 99] {
        let out = split(&dataset, 0.8, seed).unwrap();
        let perm = fisher_yates(all.len(), seed);
        let n_train = (0.8 * all.len() as f64).round() as usize;
        let mut train: Vec<(usize, usize)> = perm[..n_train].iter().map(|&k| all[k]).collect();
        let mut test: Vec<(usize, usize)> = perm[n_train..].iter().map(|&k| all[k]).collect();
        train.sort_unstable();
        test.sort_unstable();
        assert_eq!(out.train.iter().map(|r| (r.user, r.item)).collect::<Vec<_>>(), train);
        assert_eq!(out.test.iter().map(|r| (r.user, r.item)).collect::<Vec<_>>(), test);
    }
}

#[test]
fn split_is_stable_under_resplitting() {
    let dataset = normalize(&grid_records(10, 10, 5), NormalizeMode::Binary).unwrap();
    let once = split(&dataset, 0.9, 7).unwrap();
    assert_eq!(split(&once, 0.9, 7).unwrap(), once);
    assert_eq!(split(&dataset, 0.9, 7).unwrap(), once);
}

fn chi_square(counts: &BTreeMap<usize, u64>, support: &[usize], total: u64) -> f64 {
    let expected = total as f64 / support.len() as f64;
    support
        .iter()
        .map(|j| {
            let o = *counts.get(j).unwrap_or(&0) as f64;
            (o - expected).powi(2) / expected
        })
        .sum()
}

fn assert_uniform(rated: &[usize], n_items: usize, m: usize, draws: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
    for _ in 0..draws {
        for s in sample_negatives(m, rated, n_items, &mut rng) {
            *counts.entry(s.item).or_default() += 1;
        }
    }
    let support: Vec<usize> = (0..n_items).filter(|j| rated.binary_search(j).is_err()).collect();
    assert!(counts.keys().all(|j| rated.binary_search(j).is_err()));
    let df = (support.len() - 1) as f64;
    let chi2 = chi_square(&counts, &support, (draws * m) as u64);
    let bound = 3.0 * (2.0 * df).sqrt();
    assert!((chi2 - df).abs() < bound, "chi2 {chi2} vs df {df} (bound {bound})");
}

#[test]
fn negative_sampling_is_uniform_for_sparse_users() {
    assert_uniform(&[0], 1000, 3, 100_000, 11);
}

#[test]
fn negative_sampling_is_uniform_for_dense_users() {
    let rated: Vec<usize> = (0..1000).filter(|j| j % 5 != 0).collect();
    assert_uniform(&rated, 1000, 3, 50_000, 12);
}

proptest! {
    #[test]
    fn negatives_are_distinct_unrated_and_weighted(
        n_items in 1usize..60,
        mask in prop::collection::vec(any::<bool>(), 60),
        m in 0usize..8,
        seed in any::<u64>(),
    ) {
        let rated: Vec<usize> = (0..n_items).filter(|&j| mask[j]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = sample_negatives(m, &rated, n_items, &mut rng);
        let unrated = n_items - rated.len();
        prop_assert_eq!(out.len(), m.min(unrated));
        let items: BTreeSet<usize> = out.iter().map(|s| s.item).collect();
        prop_assert_eq!(items.len(), out.len());
        for s in &out {
            prop_assert!(s.item < n_items && rated.binary_search(&s.item).is_err());
            prop_assert_eq!(s.rating, 0.0);
            prop_assert_eq!(s.confidence, 1.0 / m as f64);
        }
    }

    #[test]
    fn min_interactions_reaches_the_recount_fixpoint(
        edges in prop::collection::btree_set((0usize..12, 0usize..10), 0..70),
        min in 1usize..4,
    ) {
        let records: Vec<CheckinRecord> =
            edges.iter().map(|&(u, v)| record(&format!("u{u}"), &format!("p{v}"), 1, "A")).collect();
        let kept = filter_interactions(&records, Some(min), None);

        // Oracle: peel one under-connected user or item at a time.
        let mut live: BTreeSet<(usize, usize)> = edges.clone();
        loop {
            let mut deg_u: BTreeMap<usize, usize> = BTreeMap::new();
            let mut deg_v: BTreeMap<usize, usize> = BTreeMap::new();
            for &(u, v) in &live {
                *deg_u.entry(u).or_default() += 1;
                *deg_v.entry(v).or_default() += 1;
            }
            if let Some((&u, _)) = deg_u.iter().find(|(_, &d)| d < min) {
                live.retain(|&(a, _)| a != u);
            } else if let Some((&v, _)) = deg_v.iter().find(|(_, &d)| d < min) {
                live.retain(|&(_, b)| b != v);
            } else {
                break;
            }
        }
        let got: BTreeSet<(usize, usize)> = kept
            .iter()
            .map(|r| (r.user_id[1..].parse().unwrap(), r.item_id[1..].parse().unwrap()))
            .collect();
        prop_assert_eq!(got, live);
    }

    #[test]
    fn dataset_json_round_trips(seed in 0u64..50, fraction in 0.2f64..0.8) {
        let base = normalize(&grid_records(8, 6, seed), NormalizeMode::Minmax).unwrap();
        prop_assume!(base.train.len() >= 5);
        let d = split(&base, fraction, seed).unwrap();
        prop_assert_eq!(Dataset::from_json(&d.to_json().unwrap()).unwrap(), d);
    }
}

#[test]
fn minmax_normalizes_by_the_user_maximum() {
    let records = vec![
        record("a", "x", 2, "A"),
        record("a", "y", 4, "A"),
        record("a", "x", 1, "A"),
        record("b", "y", 5, "B"),
    ];
    let d = normalize(&records, NormalizeMode::Minmax).unwrap();
    let value = |u: &str, i: &str| {
        let (u, i) = (d.users.get(u).unwrap(), d.items.get(i).unwrap());
        d.train.iter().find(|r| r.user == u && r.item == i).unwrap().value
    };
    assert_eq!(value("a", "x"), 0.75);
    assert_eq!(value("a", "y"), 1.0);
    assert_eq!(value("b", "y"), 1.0);
    assert_ne!(d.user_city[d.users.get("a").unwrap()], d.user_city[d.users.get("b").unwrap()]);
}
