mod common;

use fedrec_core::rerank::{apply_policy, cold_start_list, mmr_rerank, MmrItem, RerankPolicy};

use common::*;

fn ids(list: &[fedrec_core::protocol::FinalItem]) -> Vec<u64> {
    list.iter().map(|f| f.item_id).collect()
}

fn five_items() -> fedrec_core::data::Dataset {
    small_dataset(
        vec![
            item(1, vec![1.0, 0.0], 10, 0),
            item(2, vec![1.0, 0.0], 4, 8),
            item(3, vec![0.0, 1.0], 0, 5),
            item(4, vec![1.0, 1.0], 6, 10),
            item(5, vec![-1.0, 0.0], 8, 2),
        ],
        &[(0, vec![])],
        1,
        1,
    )
}

#[test]
fn mixed_policy_matches_hand_computed_scores() {
    let data = five_items();
    let policy = RerankPolicy {
        diversity_lambda: 0.5,
        freshness_weight: 0.2,
        popularity_weight: 0.3,
        output_size: 4,
    };
    let out = apply_policy(&[1, 2, 3, 4, 5], data.public_view(), &policy, 10).unwrap();
    // MMR order 1, 5, 3, 4, 2; position term 1/(p+1), recency 1/(1+age),
    // popularity divided by the catalog maximum of 10.
    let expected = [
        (1, 1.0 + 0.2 / 11.0 + 0.3),
        (5, 0.5 + 0.2 / 9.0 + 0.3 * 0.8),
        (4, 0.25 + 0.2 + 0.3 * 0.6),
        (2, 0.2 + 0.2 / 3.0 + 0.3 * 0.4),
    ];
    assert_eq!(out.len(), 4);
    for (got, (id, score)) in out.iter().zip(expected) {
        assert_eq!(got.item_id, id);
        assert!(
            (got.score - score).abs() < 1e-12,
            "item {id}: {} vs {score}",
            got.score
        );
    }
    let mmr: Vec<MmrItem> = [1u64, 2, 3, 4, 5]
        .iter()
        .enumerate()
        .map(|(r, &id)| MmrItem {
            item_id: id,
            base_rank: r,
            features: data.item(id).unwrap().feature_vector.clone(),
        })
        .collect();
    assert_eq!(mmr_rerank(&mmr, 0.5, 5).unwrap(), vec![1, 5, 3, 4, 2]);
}

#[test]
fn neutral_policy_keeps_the_request_prefix() {
    let data = five_items();
    let policy = RerankPolicy {
        diversity_lambda: 1.0,
        freshness_weight: 0.0,
        popularity_weight: 0.0,
        output_size: 3,
    };
    let out = apply_policy(&[4, 2, 5, 1], data.public_view(), &policy, 10).unwrap();
    assert_eq!(ids(&out), vec![4, 2, 5]);
}

#[test]
fn dominant_freshness_puts_the_newer_item_first() {
    let data = small_dataset(
        vec![item(1, vec![1.0], 0, 0), item(2, vec![1.0], 0, 9)],
        &[(0, vec![])],
        1,
        1,
    );
    let policy = RerankPolicy {
        diversity_lambda: 1.0,
        freshness_weight: 100.0,
        popularity_weight: 0.0,
        output_size: 2,
    };
    let out = apply_policy(&[1, 2], data.public_view(), &policy, 10).unwrap();
    assert_eq!(ids(&out), vec![2, 1]);
}

#[test]
fn unknown_item_in_request_is_an_error() {
    let data = five_items();
    assert!(apply_policy(&[1, 99], data.public_view(), &RerankPolicy::default(), 0).is_err());
}

#[test]
fn cold_start_lists() {
    let data = five_items();
    let plain = RerankPolicy {
        diversity_lambda: 1.0,
        freshness_weight: 0.0,
        popularity_weight: 0.0,
        output_size: 3,
    };
    assert_eq!(
        ids(&cold_start_list(0, data.public_view(), &plain, 10).unwrap()),
        vec![1, 5, 4]
    );

    let flat = small_dataset(
        vec![
            item(4, vec![1.0], 0, 7),
            item(2, vec![1.0], 0, 9),
            item(3, vec![1.0], 0, 5),
            item(1, vec![1.0], 0, 0),
        ],
        &[(0, vec![])],
        1,
        1,
    );
    assert_eq!(
        ids(&cold_start_list(0, flat.public_view(), &plain, 10).unwrap()),
        vec![1, 2, 3]
    );
    let fresh = RerankPolicy {
        freshness_weight: 10.0,
        ..plain
    };
    assert_eq!(
        ids(&cold_start_list(0, flat.public_view(), &fresh, 10).unwrap()),
        vec![2, 3, 1]
    );
}
