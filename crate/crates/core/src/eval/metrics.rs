//! Ranking metrics over a ranked id list and a relevant set.

use std::collections::HashSet;

use crate::data::ItemId;

fn hits(ranked: &[ItemId], relevant: &HashSet<ItemId>, k: usize) -> usize {
    ranked
        .iter()
        .take(k)
        .filter(|i| relevant.contains(i))
        .count()
}

/// Relevant items in the top k, divided by k.
pub fn precision_at_k(ranked: &[ItemId], relevant: &HashSet<ItemId>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    hits(ranked, relevant, k) as f64 / k as f64
}

/// Relevant items in the top k, divided by the number of relevant items.
pub fn recall_at_k(ranked: &[ItemId], relevant: &HashSet<ItemId>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    hits(ranked, relevant, k) as f64 / relevant.len() as f64
}

/// Binary-gain NDCG: DCG with discount `1/log2(rank+1)` (1-based rank) over
/// the top k, normalized by the ideal DCG of `min(k, |relevant|)` hits.
pub fn ndcg_at_k(ranked: &[ItemId], relevant: &HashSet<ItemId>, k: usize) -> f64 {
    if relevant.is_empty() || k == 0 {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(pos, _)| 1.0 / (pos as f64 + 2.0).log2())
        .sum();
    let ideal: f64 = (0..k.min(relevant.len()))
        .map(|pos| 1.0 / (pos as f64 + 2.0).log2())
        .sum();
    dcg / ideal
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(ids: &[ItemId]) -> HashSet<ItemId> {
        ids.iter().copied().collect()
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[4, 1, 2], &rel(&[4]), 1), 1.0);
        let v = ndcg_at_k(&[1, 4, 2], &rel(&[4]), 2);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&[1, 2, 4], &rel(&[4]), 2), 0.0);
        assert_eq!(ndcg_at_k(&[1, 2], &rel(&[]), 2), 0.0);
    }

    #[test]
    fn ideal_order_is_exactly_one() {
        assert_eq!(ndcg_at_k(&[3, 5, 9, 1], &rel(&[3, 5, 9]), 10), 1.0);
        assert_eq!(ndcg_at_k(&[3, 5, 9, 1], &rel(&[3, 5, 9]), 2), 1.0);
    }

    #[test]
    fn precision_and_recall() {
        let ranked = [7, 2, 8, 1];
        assert_eq!(precision_at_k(&ranked, &rel(&[2, 1]), 2), 0.5);
        assert_eq!(recall_at_k(&ranked, &rel(&[2, 1]), 2), 0.5);
        assert_eq!(recall_at_k(&ranked, &rel(&[2, 1]), 4), 1.0);
    }
}
