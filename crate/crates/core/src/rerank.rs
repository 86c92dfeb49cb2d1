//! Server-side re-ranking of a client's top-T request: MMR diversity,
//! then linear freshness and popularity adjustments.

use serde::{Deserialize, Serialize};

use crate::data::{ItemId, ItemRecord, PublicView, UserId};
use crate::error::{Error, Result};
use crate::math::dot;
use crate::protocol::FinalItem;
use crate::recall::popularity_top;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankPolicy {
    pub diversity_lambda: f64,
    pub freshness_weight: f64,
    pub popularity_weight: f64,
    pub output_size: usize,
}

impl Default for RerankPolicy {
    fn default() -> Self {
        RerankPolicy {
            diversity_lambda: 0.7,
            freshness_weight: 0.1,
            popularity_weight: 0.1,
            output_size: 5,
        }
    }
}

impl RerankPolicy {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.diversity_lambda) {
            v.push(format!(
                "policy.diversity_lambda must be in [0, 1], got {}",
                self.diversity_lambda
            ));
        }
        for (name, w) in [
            ("freshness_weight", self.freshness_weight),
            ("popularity_weight", self.popularity_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                v.push(format!("policy.{name} must be finite and >= 0, got {w}"));
            }
        }
        if self.output_size < 1 {
            v.push("policy.output_size must be >= 1".to_string());
        }
        v
    }
}

/// Cosine similarity; zero vectors are dissimilar to everything.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmrItem {
    pub item_id: ItemId,
    /// 0-based position in the incoming ranking.
    pub base_rank: usize,
    pub features: Vec<f64>,
}

/// Greedy maximal marginal relevance with relevance `1/(base_rank+1)`.
/// The first pick is the most relevant item; each later step picks the
/// argmax of `λ·rel − (1−λ)·max cos(item, picked)`, breaking ties by
/// ascending item id.
pub fn mmr_rerank(items: &[MmrItem], lambda: f64, output_size: usize) -> Result<Vec<ItemId>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    let mut take = output_size;
    if take > items.len() {
        log::warn!(
            "MMR output size {take} exceeds {} items; clamped",
            items.len()
        );
        take = items.len();
    }
    let mut remaining: Vec<&MmrItem> = items.iter().collect();
    let mut picked: Vec<&MmrItem> = Vec::with_capacity(take);
    while picked.len() < take {
        let mut best: Option<(usize, f64)> = None;
        for (idx, cand) in remaining.iter().enumerate() {
            let relevance = 1.0 / (cand.base_rank as f64 + 1.0);
            let redundancy = picked
                .iter()
                .map(|p| cosine(&cand.features, &p.features))
                .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))))
                .unwrap_or(0.0);
            let objective = if picked.is_empty() {
                relevance
            } else {
                lambda * relevance - (1.0 - lambda) * redundancy
            };
            let better = match best {
                None => true,
                Some((b, bv)) => {
                    objective > bv || (objective == bv && cand.item_id < remaining[b].item_id)
                }
            };
            if better {
                best = Some((idx, objective));
            }
        }
        let (idx, _) = best.expect("remaining is non-empty while picking");
        picked.push(remaining.remove(idx));
    }
    Ok(picked.into_iter().map(|p| p.item_id).collect())
}

/// `1/(1 + age)` with age clamped at zero.
pub fn recency_score(current_timestep: i64, created_at: i64) -> f64 {
    1.0 / (1.0 + (current_timestep - created_at).max(0) as f64)
}

/// Re-ranks a top-T request into the final delivered list.
///
/// Items are first ordered by MMR over the request; position `p` in that
/// order contributes `1/(p+1)`, to which the freshness and normalized
/// popularity terms are added. Equal combined scores keep MMR order.
pub fn apply_policy(
    request: &[ItemId],
    view: PublicView<'_>,
    policy: &RerankPolicy,
    current_timestep: i64,
) -> Result<Vec<FinalItem>> {
    let records: Vec<&ItemRecord> = request
        .iter()
        .map(|&id| view.item(id).ok_or(Error::Lookup { kind: "item", id }))
        .collect::<Result<_>>()?;
    let mmr_input: Vec<MmrItem> = records
        .iter()
        .enumerate()
        .map(|(rank, r)| MmrItem {
            item_id: r.item_id,
            base_rank: rank,
            features: r.feature_vector.clone(),
        })
        .collect();
    let order = mmr_rerank(&mmr_input, policy.diversity_lambda, mmr_input.len())?;

    let max_pop = view
        .catalog
        .iter()
        .map(|i| i.popularity_count)
        .max()
        .unwrap_or(0);
    let mut scored: Vec<FinalItem> = order
        .iter()
        .enumerate()
        .map(|(pos, id)| {
            let rec = view.item(*id).expect("looked up above");
            let popularity = if max_pop == 0 {
                0.0
            } else {
                rec.popularity_count as f64 / max_pop as f64
            };
            let score = 1.0 / (pos as f64 + 1.0)
                + policy.freshness_weight * recency_score(current_timestep, rec.created_at)
                + policy.popularity_weight * popularity;
            FinalItem {
                item_id: rec.item_id,
                score,
                features: rec.feature_vector.clone(),
                created_at: rec.created_at,
                popularity_count: rec.popularity_count,
            }
        })
        .collect();
    // stable: ties keep MMR order
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    if policy.output_size > scored.len() {
        log::warn!(
            "policy output size {} exceeds {} requested items",
            policy.output_size,
            scored.len()
        );
    }
    scored.truncate(policy.output_size);
    Ok(scored)
}

/// Popularity-based list for users without history or trained parameters.
pub fn cold_start_list(
    user_id: UserId,
    view: PublicView<'_>,
    policy: &RerankPolicy,
    current_timestep: i64,
) -> Result<Vec<FinalItem>> {
    let (popular, _) = popularity_top(view.catalog, policy.output_size)?;
    log::debug!("cold start for user {user_id}");
    let ids: Vec<ItemId> = popular.iter().map(|c| c.item_id).collect();
    apply_policy(&ids, view, policy, current_timestep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mmr(id: ItemId, rank: usize, f: &[f64]) -> MmrItem {
        MmrItem {
            item_id: id,
            base_rank: rank,
            features: f.to_vec(),
        }
    }

    #[test]
    fn lambda_one_is_prefix() {
        let items = vec![
            mmr(9, 0, &[1.0, 0.0]),
            mmr(3, 1, &[1.0, 0.0]),
            mmr(5, 2, &[0.0, 1.0]),
        ];
        assert_eq!(mmr_rerank(&items, 1.0, 2).unwrap(), vec![9, 3]);
    }

    #[test]
    fn duplicates_are_skipped_for_distinct_item() {
        let items = vec![
            mmr(1, 0, &[1.0, 0.0]),
            mmr(2, 1, &[1.0, 0.0]),
            mmr(3, 2, &[0.0, 1.0]),
        ];
        // second pick: item 2 scores 0.5·0.5 − 0.5·1 = −0.25,
        // item 3 scores 0.5/3 − 0 ≈ 0.167
        assert_eq!(mmr_rerank(&items, 0.5, 2).unwrap(), vec![1, 3]);
    }

    #[test]
    fn single_output_is_top_item() {
        let items = vec![mmr(4, 0, &[1.0]), mmr(2, 1, &[-1.0])];
        for lambda in [0.0, 0.3, 1.0] {
            assert_eq!(mmr_rerank(&items, lambda, 1).unwrap(), vec![4]);
        }
    }

    #[test]
    fn oversized_output_clamps() {
        let items = vec![mmr(4, 0, &[1.0]), mmr(2, 1, &[-1.0])];
        assert_eq!(mmr_rerank(&items, 0.5, 5).unwrap().len(), 2);
    }

    #[test]
    fn zero_vectors_have_zero_similarity() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert_eq!(cosine(&[0.0], &[0.0]), 0.0);
    }
}
