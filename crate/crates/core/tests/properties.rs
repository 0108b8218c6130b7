mod common;

use std::collections::BTreeSet;

use common::{
    cd_instance, enumerate_sorted, random_context, random_params, rng, streaming_replay_error,
};
use deep_retrieval::data::{
    evaluate, make_split, preprocess, EvalUser, InteractionRecord, PreprocessConfig, UserHistory,
};
use deep_retrieval::retrieval::{beam_search, ItemPathMapping};
use deep_retrieval::structure::path_count;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn small_params(
    k: usize,
    d: usize,
    seed: u64,
) -> (
    deep_retrieval::structure::StructureParams,
    deep_retrieval::structure::UserContext,
) {
    let mut r = rng(seed);
    let cfg = common::config(k, d, 3, vec![6]);
    let params = random_params(&cfg, 10, &mut r);
    let ctx = random_context(10, &mut r);
    (params, ctx)
}

fn records() -> impl Strategy<Value = Vec<InteractionRecord>> {
    prop::collection::vec((0u64..12, 0u64..25, 1u32..=10, 0u64..1000), 0..200).prop_map(|rows| {
        rows.into_iter()
            .map(
                |(user_id, item_id, half_stars, timestamp)| InteractionRecord {
                    user_id,
                    item_id,
                    rating: f64::from(half_stars) / 2.0,
                    timestamp,
                },
            )
            .collect()
    })
}

fn eval_users() -> impl Strategy<Value = Vec<EvalUser>> {
    prop::collection::vec(
        (
            prop::collection::vec(0usize..30, 0..6),
            prop::collection::vec(0usize..30, 0..6),
        ),
        1..40,
    )
    .prop_map(|users| {
        users
            .into_iter()
            .enumerate()
            .map(|(i, (behavior, truth))| EvalUser {
                user_id: i as u64,
                behavior,
                truth,
            })
            .collect()
    })
}

/// Deterministic stand-in retriever: a fixed function of the behavior.
fn echo_retriever(u: &EvalUser) -> deep_retrieval::Result<Vec<usize>> {
    let base: usize = u.behavior.iter().sum();
    Ok((0..7).map(|i| (base + 3 * i) % 30).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn full_beam_is_exhaustive_enumeration(k in 2usize..=4, d in 1usize..=3, seed in any::<u64>()) {
        let (params, ctx) = small_params(k, d, seed);
        let got = beam_search(&ctx, &params, path_count(k, d) as usize).unwrap();
        let want = enumerate_sorted(&ctx, &params);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!(&g.0, &w.0);
            prop_assert!((g.1 - w.1).abs() <= 1e-12);
        }
    }

    #[test]
    fn wider_beam_never_ranks_worse(
        k in 2usize..=5,
        d in 1usize..=3,
        beam in 1usize..=6,
        extra in 1usize..=6,
        seed in any::<u64>(),
    ) {
        let (params, ctx) = small_params(k, d, seed);
        let narrow = beam_search(&ctx, &params, beam).unwrap();
        let wide = beam_search(&ctx, &params, beam + extra).unwrap();
        prop_assert!(wide.len() >= narrow.len());
        for (n, w) in narrow.iter().zip(&wide) {
            prop_assert!(w.1 >= n.1 - 1e-12, "rank drops from {} to {}", n.1, w.1);
        }
    }

    #[test]
    fn inverted_index_round_trips(
        k in 2usize..=4,
        d in 1usize..=3,
        j in 1usize..=3,
        items in 0usize..40,
        seed in any::<u64>(),
    ) {
        let j = j.min(path_count(k, d) as usize);
        let mapping = ItemPathMapping::random(items, k, d, j, &mut rng(seed)).unwrap();
        mapping.check_consistency().unwrap();
        prop_assert_eq!(mapping.path_sizes().values().sum::<usize>(), items * j);
        for item in 0..items {
            for p in mapping.paths_of(item) {
                prop_assert!(mapping.items_on(p).contains(&item));
            }
        }
        for (p, on) in mapping.inverted() {
            for &item in on {
                prop_assert!(mapping.paths_of(item).contains(p));
            }
        }
        let rebuilt = ItemPathMapping::from_assignments(mapping.assignments().to_vec(), j).unwrap();
        prop_assert_eq!(rebuilt, mapping);
    }

    #[test]
    fn coordinate_descent_objective_never_drops(seed in any::<u64>(), which in 0usize..3) {
        let alpha = [0.0, 1e-3, 1.0][which];
        let out = cd_instance(seed, alpha, 5, 0);
        prop_assert!(out.monotone);
    }

    #[test]
    fn undecayed_tracker_matches_replay(seed in any::<u64>()) {
        prop_assert!(streaming_replay_error(seed) <= 1e-12);
    }

    #[test]
    fn split_groups_partition_users(
        lengths in prop::collection::vec(1usize..8, 0..60),
        n_val in 0usize..10,
        n_test in 0usize..10,
        seed in any::<u64>(),
    ) {
        let histories: Vec<UserHistory> = lengths
            .iter()
            .enumerate()
            .map(|(u, &n)| UserHistory {
                user_id: 100 + u as u64,
                items: (0..n).collect(),
                timestamps: (0..n as u64).collect(),
            })
            .collect();
        match make_split(&histories, n_val, n_test, seed) {
            Err(_) => prop_assert!(n_val + n_test > histories.len()),
            Ok(split) => {
                let train: BTreeSet<u64> = split.train.iter().map(|h| h.user_id).collect();
                let val: BTreeSet<u64> = split.validation.iter().map(|u| u.user_id).collect();
                let test: BTreeSet<u64> = split.test.iter().map(|u| u.user_id).collect();
                prop_assert_eq!((val.len(), test.len()), (n_val, n_test));
                prop_assert!(train.is_disjoint(&val) && train.is_disjoint(&test) && val.is_disjoint(&test));
                prop_assert_eq!(train.len() + val.len() + test.len(), histories.len());
            }
        }
    }

    #[test]
    fn preprocessing_is_idempotent(rows in records(), min_reviews in 0usize..6) {
        let cfg = PreprocessConfig { min_rating: 3.5, min_reviews };
        let (once, stats) = preprocess(&rows, &cfg);
        let (twice, again) = preprocess(&once, &cfg);
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(stats, again);
    }

    #[test]
    fn metrics_ignore_user_order(users in eval_users(), k in 1usize..10, seed in any::<u64>()) {
        let report = evaluate(&users, k, echo_retriever).unwrap();
        let mut shuffled = users.clone();
        shuffled.shuffle(&mut rng(seed));
        prop_assert_eq!(report, evaluate(&shuffled, k, echo_retriever).unwrap());
    }
}

#[test]
fn decayed_tracker_matches_hand_traces() {
    for (i, (cap, eta, steps, expect)) in common::streaming_fixtures().iter().enumerate() {
        assert!(
            common::run_streaming_fixture(*cap, *eta, steps, expect),
            "fixture {i}"
        );
    }
}
