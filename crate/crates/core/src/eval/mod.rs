//! Evaluation harness: the centralized and local-only baselines, ranking
//! metrics under a shared split, and the δ-gap verdict.

mod metrics;
mod split;

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use metrics::{ndcg_at_k, precision_at_k, recall_at_k};
pub use split::{make_split, EvalSplit, EvalUser};

use crate::data::{Dataset, FeatureMap, ItemId, UserId};
use crate::error::{Error, Result};
use crate::ranker::{
    local_gradient, local_train, predict, ClientState, Example, LocalUpdate, RankHyper,
    RankingParams,
};
use crate::recall::rank_order;
use crate::rng::stream;

/// Metric cutoff used for the δ comparison.
pub const PRIMARY_K: usize = 10;

const LOG_LOSS_EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SystemLabel {
    FL,
    Sum,
    Local(UserId),
    PublicOnly,
}

impl fmt::Display for SystemLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemLabel::FL => f.write_str("FL"),
            SystemLabel::Sum => f.write_str("Sum"),
            SystemLabel::Local(u) => write!(f, "Local({u})"),
            SystemLabel::PublicOnly => f.write_str("PublicOnly"),
        }
    }
}

/// Scores a user's candidate pool with relevance probabilities.
pub trait RankingSystem: Sync {
    fn score(&self, user_id: UserId, pool: &[ItemId]) -> Result<Vec<f64>>;
}

/// The logistic ranker evaluated over (public, optional private, item)
/// features.
pub struct LinearSystem<'a> {
    pub params: RankingParams,
    pub dataset: &'a Dataset,
    pub feature_map: FeatureMap,
    pub use_private: bool,
}

impl RankingSystem for LinearSystem<'_> {
    fn score(&self, user_id: UserId, pool: &[ItemId]) -> Result<Vec<f64>> {
        let user = self.dataset.public_user(user_id).ok_or(Error::Lookup {
            kind: "user",
            id: user_id,
        })?;
        let private = if self.use_private {
            let shard = self.dataset.private_shard(user_id).ok_or(Error::Lookup {
                kind: "private user",
                id: user_id,
            })?;
            Some(shard.features())
        } else {
            None
        };
        pool.iter()
            .map(|&id| {
                let item = self
                    .dataset
                    .item(id)
                    .ok_or(Error::Lookup { kind: "item", id })?;
                let x = self.feature_map.featurize(
                    self.dataset.dims(),
                    &user.public_features,
                    private,
                    &item.feature_vector,
                )?;
                predict(&self.params, &x)
            })
            .collect()
    }
}

/// Per-user parameters, e.g. the local-only baselines.
pub struct PerUserSystem<'a> {
    pub params: HashMap<UserId, RankingParams>,
    pub dataset: &'a Dataset,
    pub feature_map: FeatureMap,
}

impl RankingSystem for PerUserSystem<'_> {
    fn score(&self, user_id: UserId, pool: &[ItemId]) -> Result<Vec<f64>> {
        let params = self.params.get(&user_id).ok_or(Error::Lookup {
            kind: "local model",
            id: user_id,
        })?;
        LinearSystem {
            params: params.clone(),
            dataset: self.dataset,
            feature_map: self.feature_map,
            use_private: true,
        }
        .score(user_id, pool)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtK {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserScore {
    pub user_id: UserId,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub system_label: SystemLabel,
    pub split_fingerprint: String,
    pub metrics: Vec<AtK>,
    pub log_loss: f64,
    pub n_users_evaluated: usize,
    pub n_users_failed: usize,
    /// NDCG at [`PRIMARY_K`] per evaluated user.
    pub per_user: Vec<UserScore>,
}

impl MetricsReport {
    pub fn at(&self, k: usize) -> Option<&AtK> {
        self.metrics.iter().find(|m| m.k == k)
    }

    pub fn primary(&self) -> Result<f64> {
        self.at(PRIMARY_K).map(|m| m.ndcg).ok_or_else(|| {
            Error::IncomparableReports(format!("{} has no NDCG@{PRIMARY_K}", self.system_label))
        })
    }
}

struct UserEval {
    user_id: UserId,
    per_k: Vec<(f64, f64, f64)>,
    loss_sum: f64,
    n_scored: usize,
}

/// Ranks each user's pool by descending probability (ties by ascending id)
/// and macro-averages the metrics. Users the system fails on are counted
/// and skipped.
pub fn evaluate_system(
    label: SystemLabel,
    system: &dyn RankingSystem,
    split: &EvalSplit,
    k_values: &[usize],
) -> Result<MetricsReport> {
    if k_values.is_empty() || k_values.contains(&0) {
        return Err(Error::Config("k values must be non-empty and >= 1".into()));
    }
    let mut evals = Vec::with_capacity(split.users.len());
    let mut failed = 0;
    for user in &split.users {
        let pool = user.pool();
        let probs = match system.score(user.user_id, &pool) {
            Ok(p) if p.len() == pool.len() => p,
            Ok(_) | Err(_) => {
                log::warn!("{label}: scoring failed for user {}", user.user_id);
                failed += 1;
                continue;
            }
        };
        let relevant = user.relevant();
        let mut ranked: Vec<(ItemId, f64)> = pool.iter().copied().zip(probs).collect();
        ranked.sort_by(|a, b| rank_order((a.1, a.0), (b.1, b.0)));
        let ids: Vec<ItemId> = ranked.iter().map(|r| r.0).collect();
        let per_k = k_values
            .iter()
            .map(|&k| {
                (
                    precision_at_k(&ids, &relevant, k),
                    recall_at_k(&ids, &relevant, k),
                    ndcg_at_k(&ids, &relevant, k),
                )
            })
            .collect();
        let loss_sum = ranked
            .iter()
            .map(|(id, p)| {
                let p = p.clamp(LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS);
                if relevant.contains(id) {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum();
        evals.push(UserEval {
            user_id: user.user_id,
            per_k,
            loss_sum,
            n_scored: ranked.len(),
        });
    }
    if evals.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let n = evals.len() as f64;
    let metrics = k_values
        .iter()
        .enumerate()
        .map(|(j, &k)| AtK {
            k,
            precision: evals.iter().map(|e| e.per_k[j].0).sum::<f64>() / n,
            recall: evals.iter().map(|e| e.per_k[j].1).sum::<f64>() / n,
            ndcg: evals.iter().map(|e| e.per_k[j].2).sum::<f64>() / n,
        })
        .collect();
    let total_scored: usize = evals.iter().map(|e| e.n_scored).sum();
    let log_loss = evals.iter().map(|e| e.loss_sum).sum::<f64>() / total_scored.max(1) as f64;
    let per_user = match k_values.iter().position(|&k| k == PRIMARY_K) {
        Some(j) => evals
            .iter()
            .map(|e| UserScore {
                user_id: e.user_id,
                ndcg: e.per_k[j].2,
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(MetricsReport {
        system_label: label,
        split_fingerprint: split.fingerprint.clone(),
        metrics,
        log_loss,
        n_users_evaluated: evals.len(),
        n_users_failed: failed,
        per_user,
    })
}

/// Pools every client's labelled candidates. With `use_private = false` the
/// private block is zeroed, giving the public-only baseline.
pub fn pooled_examples(clients: &[ClientState], use_private: bool) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for c in clients {
        if use_private {
            out.extend(c.training_set()?);
        } else {
            let positives: std::collections::HashSet<ItemId> = c
                .own_interactions
                .iter()
                .filter(|e| e.is_positive())
                .map(|e| e.item_id)
                .collect();
            for cand in &c.candidates.items {
                let x =
                    c.feature_map
                        .featurize(c.dims, &c.public_features, None, &cand.features)?;
                let y = if positives.contains(&cand.item_id) {
                    1.0
                } else {
                    0.0
                };
                out.push((x, y));
            }
        }
    }
    Ok(out)
}

/// Mini-batch SGD over pooled examples, starting from `init`, for
/// `epochs` shuffled passes.
pub fn train_pooled(
    init: &RankingParams,
    examples: &[Example],
    hyper: &RankHyper,
    epochs: usize,
    seed: u64,
) -> Result<RankingParams> {
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut theta = init.clone();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut batch: Vec<Example> = Vec::with_capacity(hyper.batch_size);
    for epoch in 0..epochs {
        let mut rng = stream(seed, "central/shuffle", &[epoch as u64]);
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i].clone()));
            let grad = local_gradient(&theta, &batch, hyper.l2_reg)?;
            for (w, g) in theta.weights.iter_mut().zip(&grad) {
                *w -= hyper.learning_rate * g;
            }
        }
        if !theta.is_finite() {
            return Err(Error::Divergence {
                model: "centralized ranker",
                epoch,
            });
        }
    }
    Ok(theta)
}

/// The centralized oracle: one trainer sees every client's candidates and
/// private features. Runs `rounds × local_epochs` epochs so it gets the
/// same number of passes over the data as the federation.
pub fn train_centralized_sum(
    clients: &[ClientState],
    init: &RankingParams,
    hyper: &RankHyper,
    rounds: usize,
    seed: u64,
) -> Result<RankingParams> {
    let examples = pooled_examples(clients, true)?;
    train_pooled(init, &examples, hyper, rounds * hyper.local_epochs, seed)
}

/// Centralized training with private features zeroed.
pub fn train_public_only(
    clients: &[ClientState],
    init: &RankingParams,
    hyper: &RankHyper,
    rounds: usize,
    seed: u64,
) -> Result<RankingParams> {
    let examples = pooled_examples(clients, false)?;
    train_pooled(init, &examples, hyper, rounds * hyper.local_epochs, seed)
}

/// The isolated baseline: `rounds` consecutive local trainings without
/// aggregation.
pub fn train_local_only(
    state: &ClientState,
    init: &RankingParams,
    hyper: &RankHyper,
    rounds: usize,
) -> Result<RankingParams> {
    let mut theta = init.clone();
    for round in 0..rounds {
        if let LocalUpdate::Trained { params, .. } =
            local_train(&theta, state, hyper, round as u64)?
        {
            theta = params;
        }
    }
    Ok(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricGap {
    pub metric: String,
    pub sum: f64,
    pub fl: f64,
    pub gap: f64,
    pub within_delta: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientComparison {
    pub user_id: UserId,
    pub fl: f64,
    pub local: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub split_fingerprint: String,
    pub delta_threshold: f64,
    pub primary_metric: String,
    pub gaps: Vec<MetricGap>,
    /// |P_Sum − P_FL| on the primary metric.
    pub primary_gap: f64,
    pub delta_pass: bool,
    pub fl_primary: f64,
    pub sum_primary: f64,
    pub mean_local_primary: f64,
    pub fl_exceeds_mean_local: bool,
    /// Share of clients whose own FL score beats their local-only score.
    pub validity_fraction: f64,
    pub per_client: Vec<ClientComparison>,
    pub public_only_primary: Option<f64>,
    pub fl_exceeds_public_only: Option<bool>,
}

fn check_comparable(a: &MetricsReport, b: &MetricsReport) -> Result<()> {
    if a.split_fingerprint != b.split_fingerprint {
        return Err(Error::IncomparableReports(format!(
            "{} and {} were computed on different splits",
            a.system_label, b.system_label
        )));
    }
    let ks = |r: &MetricsReport| r.metrics.iter().map(|m| m.k).collect::<Vec<_>>();
    if ks(a) != ks(b) {
        return Err(Error::IncomparableReports(format!(
            "{} and {} use different cutoffs",
            a.system_label, b.system_label
        )));
    }
    Ok(())
}

/// Per-metric |P_Sum − P_FL| against δ, plus the P_FL > P_i validity check.
pub fn delta_precision_report(
    p_sum: &MetricsReport,
    p_fl: &MetricsReport,
    p_locals: &[MetricsReport],
    p_public: Option<&MetricsReport>,
    delta_threshold: f64,
) -> Result<VerdictReport> {
    check_comparable(p_sum, p_fl)?;
    for other in p_locals.iter().chain(p_public) {
        check_comparable(p_fl, other)?;
    }
    let within = |gap: f64| gap < delta_threshold;
    let mut gaps = Vec::new();
    for (s, f) in p_sum.metrics.iter().zip(&p_fl.metrics) {
        for (name, a, b) in [
            ("precision", s.precision, f.precision),
            ("recall", s.recall, f.recall),
            ("ndcg", s.ndcg, f.ndcg),
        ] {
            let gap = (a - b).abs();
            gaps.push(MetricGap {
                metric: format!("{name}@{}", s.k),
                sum: a,
                fl: b,
                gap,
                within_delta: within(gap),
            });
        }
    }
    let ll_gap = (p_sum.log_loss - p_fl.log_loss).abs();
    gaps.push(MetricGap {
        metric: "log_loss".to_string(),
        sum: p_sum.log_loss,
        fl: p_fl.log_loss,
        gap: ll_gap,
        within_delta: within(ll_gap),
    });

    let sum_primary = p_sum.primary()?;
    let fl_primary = p_fl.primary()?;
    let primary_gap = (sum_primary - fl_primary).abs();

    let local_scores = p_locals
        .iter()
        .map(MetricsReport::primary)
        .collect::<Result<Vec<f64>>>()?;
    let mean_local_primary = if local_scores.is_empty() {
        0.0
    } else {
        local_scores.iter().sum::<f64>() / local_scores.len() as f64
    };
    let fl_by_user: HashMap<UserId, f64> =
        p_fl.per_user.iter().map(|u| (u.user_id, u.ndcg)).collect();
    let per_client: Vec<ClientComparison> = p_locals
        .iter()
        .filter_map(|r| match r.system_label {
            SystemLabel::Local(u) => Some((u, r)),
            _ => None,
        })
        .filter_map(|(u, r)| {
            Some(ClientComparison {
                user_id: u,
                fl: *fl_by_user.get(&u)?,
                local: r.primary().ok()?,
            })
        })
        .collect();
    let validity_fraction = if per_client.is_empty() {
        0.0
    } else {
        per_client.iter().filter(|c| c.fl > c.local).count() as f64 / per_client.len() as f64
    };
    let public_only_primary = p_public.map(MetricsReport::primary).transpose()?;

    Ok(VerdictReport {
        split_fingerprint: p_fl.split_fingerprint.clone(),
        delta_threshold,
        primary_metric: format!("ndcg@{PRIMARY_K}"),
        gaps,
        primary_gap,
        delta_pass: within(primary_gap),
        fl_primary,
        sum_primary,
        mean_local_primary,
        fl_exceeds_mean_local: fl_primary > mean_local_primary,
        validity_fraction,
        per_client,
        public_only_primary,
        fl_exceeds_public_only: public_only_primary.map(|p| fl_primary > p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(label: SystemLabel, ndcg: f64, fp: &str) -> MetricsReport {
        MetricsReport {
            system_label: label,
            split_fingerprint: fp.to_string(),
            metrics: vec![AtK {
                k: PRIMARY_K,
                precision: ndcg / 2.0,
                recall: ndcg,
                ndcg,
            }],
            log_loss: 0.5,
            n_users_evaluated: 1,
            n_users_failed: 0,
            per_user: vec![UserScore { user_id: 0, ndcg }],
        }
    }

    #[test]
    fn equal_reports_have_zero_gap() {
        let a = report(SystemLabel::Sum, 0.6, "x");
        let b = report(SystemLabel::FL, 0.6, "x");
        let v = delta_precision_report(&a, &b, &[], None, 1e-9).unwrap();
        assert_eq!(v.primary_gap, 0.0);
        assert!(v.delta_pass);
    }

    #[test]
    fn gap_arithmetic() {
        let a = report(SystemLabel::Sum, 0.80, "x");
        let b = report(SystemLabel::FL, 0.77, "x");
        let v = delta_precision_report(&a, &b, &[], None, 0.05).unwrap();
        assert!((v.primary_gap - 0.03).abs() < 1e-12);
        assert!(v.delta_pass);
        let swapped = delta_precision_report(&b, &a, &[], None, 0.05).unwrap();
        assert_eq!(swapped.primary_gap, v.primary_gap);
    }

    #[test]
    fn mismatched_fingerprints_rejected() {
        let a = report(SystemLabel::Sum, 0.8, "x");
        let b = report(SystemLabel::FL, 0.8, "y");
        assert!(matches!(
            delta_precision_report(&a, &b, &[], None, 0.05),
            Err(Error::IncomparableReports(_))
        ));
    }

    #[test]
    fn validity_counts_clients() {
        let sum = report(SystemLabel::Sum, 0.8, "x");
        let fl = report(SystemLabel::FL, 0.7, "x");
        let local = report(SystemLabel::Local(0), 0.4, "x");
        let public = report(SystemLabel::PublicOnly, 0.75, "x");
        let v = delta_precision_report(&sum, &fl, &[local], Some(&public), 0.05).unwrap();
        assert_eq!(v.validity_fraction, 1.0);
        assert!(v.fl_exceeds_mean_local);
        assert_eq!(v.fl_exceeds_public_only, Some(false));
    }
}
