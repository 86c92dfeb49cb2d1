//! Server-side recall: biased matrix factorization over the public
//! interaction log, plus a popularity fallback.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ItemId, ItemRecord, PublicView, UserId};
use crate::error::{Error, Result};
use crate::math::{dot, sigmoid};
use crate::rng::stream;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecallHyper {
    pub r: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub epochs: usize,
    pub negative_samples_per_positive: usize,
}

impl Default for RecallHyper {
    fn default() -> Self {
        RecallHyper {
            r: 8,
            learning_rate: 0.05,
            l2_reg: 0.01,
            epochs: 30,
            negative_samples_per_positive: 2,
        }
    }
}

impl RecallHyper {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.r < 1 {
            v.push("recall.r must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            v.push(format!(
                "recall.learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            v.push(format!("recall.l2_reg must be >= 0, got {}", self.l2_reg));
        }
        if self.epochs < 1 {
            v.push("recall.epochs must be >= 1".to_string());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallModel {
    pub r: usize,
    pub user_ids: Vec<UserId>,
    pub item_ids: Vec<ItemId>,
    /// Row-major N×r.
    pub user_factors: Vec<f64>,
    /// Row-major M×r.
    pub item_factors: Vec<f64>,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub global_mean: f64,
    pub popularity_table: BTreeMap<ItemId, u64>,
    #[serde(skip)]
    user_pos: HashMap<UserId, usize>,
    #[serde(skip)]
    item_pos: HashMap<ItemId, usize>,
}

/// Gradient of the per-triple loss with respect to the touched parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleGradient {
    pub user_factor: Vec<f64>,
    pub item_factor: Vec<f64>,
    pub user_bias: f64,
    pub item_bias: f64,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    n_users: usize,
    n_items: usize,
    r: usize,
    model: RecallModel,
}

impl RecallModel {
    /// Zero-initialized model over the given ids.
    pub fn zeros(r: usize, user_ids: Vec<UserId>, item_ids: Vec<ItemId>) -> Self {
        let (n, m) = (user_ids.len(), item_ids.len());
        let mut model = RecallModel {
            r,
            user_factors: vec![0.0; n * r],
            item_factors: vec![0.0; m * r],
            user_bias: vec![0.0; n],
            item_bias: vec![0.0; m],
            global_mean: 0.0,
            popularity_table: BTreeMap::new(),
            user_ids,
            item_ids,
            user_pos: HashMap::new(),
            item_pos: HashMap::new(),
        };
        model.reindex();
        model
    }

    fn reindex(&mut self) {
        self.user_pos = self
            .user_ids
            .iter()
            .enumerate()
            .map(|(i, &u)| (u, i))
            .collect();
        self.item_pos = self
            .item_ids
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, i))
            .collect();
    }

    pub fn user_position(&self, user_id: UserId) -> Option<usize> {
        self.user_pos.get(&user_id).copied()
    }

    pub fn item_position(&self, item_id: ItemId) -> Option<usize> {
        self.item_pos.get(&item_id).copied()
    }

    pub fn user_row(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.r..(u + 1) * self.r]
    }

    pub fn item_row(&self, i: usize) -> &[f64] {
        &self.item_factors[i * self.r..(i + 1) * self.r]
    }

    /// Pre-sigmoid score `global_mean + b_u + b_i + p_u·q_i` by positions.
    pub fn logit(&self, u: usize, i: usize) -> f64 {
        self.global_mean
            + self.user_bias[u]
            + self.item_bias[i]
            + dot(self.user_row(u), self.item_row(i))
    }

    pub fn score(&self, user_id: UserId, item_id: ItemId) -> Result<f64> {
        let u = self.user_position(user_id).ok_or(Error::Lookup {
            kind: "user",
            id: user_id,
        })?;
        let i = self.item_position(item_id).ok_or(Error::Lookup {
            kind: "item",
            id: item_id,
        })?;
        Ok(self.logit(u, i))
    }

    /// `½(σ(z) − y)² + ½λ(‖p‖² + ‖q‖² + b_u² + b_i²)`.
    pub fn triple_loss(&self, u: usize, i: usize, label: f64, l2: f64) -> f64 {
        let err = sigmoid(self.logit(u, i)) - label;
        let p = self.user_row(u);
        let q = self.item_row(i);
        0.5 * err * err
            + 0.5
                * l2
                * (dot(p, p) + dot(q, q) + self.user_bias[u].powi(2) + self.item_bias[i].powi(2))
    }

    pub fn triple_gradient(&self, u: usize, i: usize, label: f64, l2: f64) -> TripleGradient {
        let s = sigmoid(self.logit(u, i));
        let g = (s - label) * s * (1.0 - s);
        let p = self.user_row(u);
        let q = self.item_row(i);
        TripleGradient {
            user_factor: p.iter().zip(q).map(|(pk, qk)| g * qk + l2 * pk).collect(),
            item_factor: q.iter().zip(p).map(|(qk, pk)| g * pk + l2 * qk).collect(),
            user_bias: g + l2 * self.user_bias[u],
            item_bias: g + l2 * self.item_bias[i],
        }
    }

    fn sgd_step(&mut self, u: usize, i: usize, label: f64, lr: f64, l2: f64) {
        let grad = self.triple_gradient(u, i, label, l2);
        let r = self.r;
        for k in 0..r {
            self.user_factors[u * r + k] -= lr * grad.user_factor[k];
            self.item_factors[i * r + k] -= lr * grad.item_factor[k];
        }
        self.user_bias[u] -= lr * grad.user_bias;
        self.item_bias[i] -= lr * grad.item_bias;
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            n_users: self.user_ids.len(),
            n_items: self.item_ids.len(),
            r: self.r,
            model: self.clone(),
        };
        let text = serde_json::to_string(&ckpt)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<RecallModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported recall checkpoint version {}",
                ckpt.version
            )));
        }
        let mut model = ckpt.model;
        let (n, m, r) = (ckpt.n_users, ckpt.n_items, ckpt.r);
        for (context, expected, actual) in [
            ("checkpoint user ids", n, model.user_ids.len()),
            ("checkpoint item ids", m, model.item_ids.len()),
            ("checkpoint user factors", n * r, model.user_factors.len()),
            ("checkpoint item factors", m * r, model.item_factors.len()),
            ("checkpoint user bias", n, model.user_bias.len()),
            ("checkpoint item bias", m, model.item_bias.len()),
            ("checkpoint rank", r, model.r),
        ] {
            if expected != actual {
                return Err(Error::Shape {
                    context,
                    expected,
                    actual,
                });
            }
        }
        model.reindex();
        Ok(model)
    }
}

/// Fits the recall model on public interactions only.
///
/// Positives are logged interactions with feedback >= 0.5. Each positive is
/// paired with `negative_samples_per_positive` items drawn without
/// replacement from the items the user never interacted with.
pub fn train_recall(view: PublicView<'_>, hyper: &RecallHyper, seed: u64) -> Result<RecallModel> {
    let violations = hyper.violations();
    if !violations.is_empty() {
        return Err(Error::Config(violations.join("; ")));
    }
    let user_ids: Vec<UserId> = view.users.iter().map(|u| u.user_id).collect();
    let item_ids: Vec<ItemId> = view.catalog.iter().map(|i| i.item_id).collect();
    let mut model = RecallModel::zeros(hyper.r, user_ids, item_ids);

    let mut init = stream(seed, "recall/init", &[]);
    for v in model
        .user_factors
        .iter_mut()
        .chain(model.item_factors.iter_mut())
    {
        *v = init.gen_range(-0.01..0.01);
    }
    let (sum, count) = view
        .users
        .iter()
        .flat_map(|u| u.interaction_log.iter())
        .fold((0.0, 0usize), |(s, c), e| (s + e.feedback, c + 1));
    model.global_mean = if count > 0 { sum / count as f64 } else { 0.0 };
    model.popularity_table = view
        .catalog
        .iter()
        .map(|i| (i.item_id, i.popularity_count))
        .collect();

    // positions of positives and of never-seen items, per user
    let per_user: Vec<(Vec<usize>, Vec<usize>)> = view
        .users
        .iter()
        .map(|u| {
            let seen = u.seen_items();
            let positives = u
                .interaction_log
                .iter()
                .filter(|e| e.is_positive())
                .map(|e| model.item_pos[&e.item_id])
                .collect();
            let unseen = view
                .catalog
                .iter()
                .enumerate()
                .filter(|(_, it)| !seen.contains(&it.item_id))
                .map(|(i, _)| i)
                .collect();
            (positives, unseen)
        })
        .collect();

    let mut rng = stream(seed, "recall/sgd", &[]);
    let mut triples: Vec<(usize, usize, f64)> = Vec::new();
    for epoch in 0..hyper.epochs {
        triples.clear();
        for (u, (positives, unseen)) in per_user.iter().enumerate() {
            for &i in positives {
                triples.push((u, i, 1.0));
                let n_neg = hyper.negative_samples_per_positive.min(unseen.len());
                for j in sample(&mut rng, unseen.len(), n_neg) {
                    triples.push((u, unseen[j], 0.0));
                }
            }
        }
        triples.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &(u, i, y) in &triples {
            epoch_loss += model.triple_loss(u, i, y, hyper.l2_reg);
            model.sgd_step(u, i, y, hyper.learning_rate, hyper.l2_reg);
        }
        if !epoch_loss.is_finite()
            || !model
                .user_factors
                .iter()
                .chain(&model.item_factors)
                .all(|v| v.is_finite())
        {
            return Err(Error::Divergence {
                model: "recall",
                epoch,
            });
        }
        log::debug!("recall epoch {epoch}: loss {epoch_loss:.6}");
    }
    Ok(model)
}

/// One recalled item with the content the client needs for ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub item_id: ItemId,
    pub score: f64,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub user_id: UserId,
    pub items: Vec<Candidate>,
    /// Set when fewer than K items were available.
    pub degenerate: bool,
}

impl CandidateSet {
    pub fn item_ids(&self) -> Vec<ItemId> {
        self.items.iter().map(|c| c.item_id).collect()
    }

    /// Scalars a candidate push carries: id, score and features per item.
    pub fn float_count(&self) -> usize {
        self.items.iter().map(|c| c.features.len() + 2).sum()
    }
}

/// Descending score, ascending item id.
pub(crate) fn rank_order(a: (f64, ItemId), b: (f64, ItemId)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn top_k(mut scored: Vec<(f64, &ItemRecord)>, k: usize) -> (Vec<Candidate>, bool) {
    scored.sort_by(|a, b| rank_order((a.0, a.1.item_id), (b.0, b.1.item_id)));
    let degenerate = k >= scored.len();
    scored.truncate(k);
    let items = scored
        .into_iter()
        .map(|(score, item)| Candidate {
            item_id: item.item_id,
            score,
            features: item.feature_vector.clone(),
        })
        .collect();
    (items, degenerate)
}

pub fn recall_top_k(
    model: &RecallModel,
    view: PublicView<'_>,
    user_id: UserId,
    k: usize,
    exclude_seen: bool,
) -> Result<CandidateSet> {
    recall_top_k_excluding(model, view, user_id, k, exclude_seen, &HashSet::new())
}

/// Like [`recall_top_k`], also skipping every item in `exclude`.
pub fn recall_top_k_excluding(
    model: &RecallModel,
    view: PublicView<'_>,
    user_id: UserId,
    k: usize,
    exclude_seen: bool,
    exclude: &HashSet<ItemId>,
) -> Result<CandidateSet> {
    if k < 1 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    let u = model.user_position(user_id).ok_or(Error::Lookup {
        kind: "user",
        id: user_id,
    })?;
    let seen = match (exclude_seen, view.user(user_id)) {
        (true, Some(rec)) => rec.seen_items(),
        _ => HashSet::new(),
    };
    let mut scored = Vec::with_capacity(view.catalog.len());
    for item in view.catalog {
        if seen.contains(&item.item_id) || exclude.contains(&item.item_id) {
            continue;
        }
        let i = model.item_position(item.item_id).ok_or(Error::Lookup {
            kind: "item",
            id: item.item_id,
        })?;
        scored.push((model.logit(u, i), item));
    }
    let (items, degenerate) = top_k(scored, k);
    if degenerate {
        log::warn!(
            "user {user_id}: K={k} covers all {} available items",
            items.len()
        );
    }
    Ok(CandidateSet {
        user_id,
        items,
        degenerate,
    })
}

/// Recall for every user in the view, in user order. Users are scored in
/// parallel; each result depends only on its own inputs.
pub fn recall_all(
    model: &RecallModel,
    view: PublicView<'_>,
    k: usize,
    exclude_seen: bool,
    exclude: &HashMap<UserId, HashSet<ItemId>>,
) -> Result<Vec<CandidateSet>> {
    let empty = HashSet::new();
    view.users
        .par_iter()
        .map(|u| {
            let ex = exclude.get(&u.user_id).unwrap_or(&empty);
            recall_top_k_excluding(model, view, u.user_id, k, exclude_seen, ex)
        })
        .collect()
}

/// Top-K items by popularity count, ties by ascending id. Scores are the
/// counts.
pub fn popularity_top(catalog: &[ItemRecord], k: usize) -> Result<(Vec<Candidate>, bool)> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    if k < 1 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    let scored = catalog
        .iter()
        .map(|it| (it.popularity_count as f64, it))
        .collect();
    Ok(top_k(scored, k))
}

/// The same popularity list for every user.
pub fn popularity_recall(view: PublicView<'_>, k: usize) -> Result<Vec<CandidateSet>> {
    let (items, degenerate) = popularity_top(view.catalog, k)?;
    Ok(view
        .users
        .iter()
        .map(|u| CandidateSet {
            user_id: u.user_id,
            items: items.clone(),
            degenerate,
        })
        .collect())
}
