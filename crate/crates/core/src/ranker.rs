//! Client-side ranking: a logistic scorer trained locally on recalled
//! candidates joined with the client's private features.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dims, FeatureMap, Interaction, ItemId, PrivateShard, UserId};
use crate::error::{Error, Result};
use crate::math::{dot, sigmoid};
use crate::recall::{rank_order, CandidateSet};
use crate::rng::{stream, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingParams {
    pub weights: Vec<f64>,
}

impl RankingParams {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub fn max_abs_diff(&self, other: &RankingParams) -> f64 {
        crate::math::max_abs_diff(&self.weights, &other.weights)
    }

    pub fn l2_norm(&self) -> f64 {
        dot(&self.weights, &self.weights).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankHyper {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
}

impl Default for RankHyper {
    fn default() -> Self {
        RankHyper {
            local_epochs: 1,
            batch_size: 8,
            learning_rate: 0.5,
            l2_reg: 0.01,
        }
    }
}

impl RankHyper {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.local_epochs < 1 {
            v.push("rank.local_epochs must be >= 1".to_string());
        }
        if self.batch_size < 1 {
            v.push("rank.batch_size must be >= 1".to_string());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            v.push(format!(
                "rank.learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            v.push(format!("rank.l2_reg must be >= 0, got {}", self.l2_reg));
        }
        v
    }
}

/// One labelled training example.
pub type Example = (Vec<f64>, f64);

/// Everything one simulated device holds. Never leaves the client.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub user_id: UserId,
    pub private_shard: PrivateShard,
    pub public_features: Vec<f64>,
    pub own_interactions: Vec<Interaction>,
    pub candidates: CandidateSet,
    pub local_params: RankingParams,
    pub rng_seed: u64,
    pub dims: Dims,
    pub feature_map: FeatureMap,
}

impl ClientState {
    pub fn featurize(&self, item_features: &[f64]) -> Result<Vec<f64>> {
        self.feature_map.featurize(
            self.dims,
            &self.public_features,
            Some(self.private_shard.features()),
            item_features,
        )
    }

    /// Candidates labelled 1 when the client has a positive interaction with
    /// them, 0 otherwise. Candidate order is preserved.
    pub fn training_set(&self) -> Result<Vec<Example>> {
        let positives: std::collections::HashSet<ItemId> = self
            .own_interactions
            .iter()
            .filter(|e| e.is_positive())
            .map(|e| e.item_id)
            .collect();
        self.candidates
            .items
            .iter()
            .map(|c| {
                let label = if positives.contains(&c.item_id) {
                    1.0
                } else {
                    0.0
                };
                Ok((self.featurize(&c.features)?, label))
            })
            .collect()
    }
}

fn check_dim(theta: &RankingParams, len: usize) -> Result<()> {
    if theta.dim() != len {
        return Err(Error::Shape {
            context: "ranking parameters vs features",
            expected: theta.dim(),
            actual: len,
        });
    }
    Ok(())
}

/// `σ(θ·x)`.
pub fn predict(theta: &RankingParams, x: &[f64]) -> Result<f64> {
    check_dim(theta, x.len())?;
    Ok(sigmoid(dot(&theta.weights, x)))
}

/// Mean of `(σ(θ·x) − y)·x` over the batch plus `l2·θ`; the last (bias)
/// coordinate is not regularized.
pub fn local_gradient(theta: &RankingParams, batch: &[Example], l2_reg: f64) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let d = theta.dim();
    let mut grad = vec![0.0; d];
    for (x, y) in batch {
        let err = predict(theta, x)? - y;
        for (g, xj) in grad.iter_mut().zip(x) {
            *g += err * xj;
        }
    }
    let n = batch.len() as f64;
    for (j, g) in grad.iter_mut().enumerate() {
        *g /= n;
        if j + 1 < d {
            *g += l2_reg * theta.weights[j];
        }
    }
    Ok(grad)
}

/// Mean binary cross-entropy plus `½·l2·‖θ without bias‖²`; the objective
/// whose gradient [`local_gradient`] returns.
pub fn regularized_log_loss(theta: &RankingParams, batch: &[Example], l2_reg: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for (x, y) in batch {
        check_dim(theta, x.len())?;
        let z = dot(&theta.weights, x);
        // log(1 + e^z) − y·z, stable form
        total += z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
    }
    let d = theta.dim();
    let reg: f64 = theta.weights[..d - 1].iter().map(|w| w * w).sum();
    Ok(total / batch.len() as f64 + 0.5 * l2_reg * reg)
}

/// Outcome of one client's local training.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalUpdate {
    Trained {
        params: RankingParams,
        sample_count: usize,
    },
    /// No candidates: the client contributes nothing this round.
    Skipped,
}

/// The per-round shuffling stream of one client.
pub fn shuffle_rng(client_seed: u64, round: u64) -> Rng {
    stream(client_seed, "client/shuffle", &[round])
}

/// Starts from the global parameters and runs `local_epochs` passes of
/// shuffled mini-batch SGD over the labelled candidates.
pub fn local_train(
    global: &RankingParams,
    state: &ClientState,
    hyper: &RankHyper,
    round: u64,
) -> Result<LocalUpdate> {
    if state.candidates.items.is_empty() {
        return Ok(LocalUpdate::Skipped);
    }
    let examples = state.training_set()?;
    check_dim(global, examples[0].0.len())?;
    let mut theta = global.clone();
    let mut rng = shuffle_rng(state.rng_seed, round);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let batch_size = hyper.batch_size.max(1);
    let mut batch: Vec<Example> = Vec::with_capacity(batch_size);
    for epoch in 0..hyper.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i].clone()));
            let grad = local_gradient(&theta, &batch, hyper.l2_reg)?;
            for (w, g) in theta.weights.iter_mut().zip(&grad) {
                *w -= hyper.learning_rate * g;
            }
        }
        if !theta.is_finite() {
            return Err(Error::Divergence {
                model: "local ranker",
                epoch,
            });
        }
    }
    Ok(LocalUpdate::Trained {
        params: theta,
        sample_count: examples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub user_id: UserId,
    pub entries: Vec<(ItemId, f64)>,
}

impl RankedList {
    pub fn item_ids(&self) -> Vec<ItemId> {
        self.entries.iter().map(|e| e.0).collect()
    }
}

pub fn local_rank(theta: &RankingParams, state: &ClientState) -> Result<RankedList> {
    let mut entries = state
        .candidates
        .items
        .iter()
        .map(|c| Ok((c.item_id, predict(theta, &state.featurize(&c.features)?)?)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| rank_order((a.1, a.0), (b.1, b.0)));
    Ok(RankedList {
        user_id: state.user_id,
        entries,
    })
}

/// First T item ids of the ranked list. T >= list length is clamped to
/// length − 1.
pub fn select_top_t(ranked: &RankedList, t: usize) -> Result<Vec<ItemId>> {
    if t <= 1 {
        return Err(Error::Config(format!("T must be > 1, got {t}")));
    }
    let n = ranked.entries.len();
    let mut take = t;
    if t >= n {
        take = n.saturating_sub(1);
        log::warn!("T={t} >= {n} ranked entries; clamped to {take}");
    }
    if take < 1 {
        return Err(Error::Config(format!(
            "ranked list of user {} too short for a top-T request",
            ranked.user_id
        )));
    }
    Ok(ranked.entries[..take].iter().map(|e| e.0).collect())
}
