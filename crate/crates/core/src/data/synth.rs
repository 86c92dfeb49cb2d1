//! Synthetic datasets whose labels depend on both public and private user
//! features, so private inputs carry real ranking signal.

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Dims, Interaction, ItemRecord, PrivateShard, PublicUserRecord};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub d_item: usize,
    pub d_pub: usize,
    pub d_pri: usize,
    pub interactions_per_user: usize,
    pub preference_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 50,
            n_items: 300,
            d_item: 6,
            d_pub: 4,
            d_pri: 4,
            interactions_per_user: 150,
            preference_noise: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn dims(&self) -> Dims {
        Dims {
            d_item: self.d_item,
            d_pub: self.d_pub,
            d_pri: self.d_pri,
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_users < 2 {
            v.push(format!("synth.n_users must be >= 2, got {}", self.n_users));
        }
        if self.n_items < 2 {
            v.push(format!("synth.n_items must be >= 2, got {}", self.n_items));
        }
        for (name, d) in [
            ("d_item", self.d_item),
            ("d_pub", self.d_pub),
            ("d_pri", self.d_pri),
        ] {
            if d < 1 {
                v.push(format!("synth.{name} must be >= 1"));
            }
        }
        if self.interactions_per_user < 1 || self.interactions_per_user > self.n_items {
            v.push(format!(
                "synth.interactions_per_user must be in [1, n_items], got {}",
                self.interactions_per_user
            ));
        }
        if !(self.preference_noise >= 0.0 && self.preference_noise.is_finite()) {
            v.push(format!(
                "synth.preference_noise must be finite and >= 0, got {}",
                self.preference_noise
            ));
        }
        v
    }
}

/// Affinity a noisy preference must exceed to be logged as positive feedback.
/// Keeps positives a minority so a held-out positive stands out from random
/// unseen items.
pub const POSITIVE_MARGIN: f64 = 1.0;

/// The latent preference model a synthetic dataset was drawn from.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Per-user taste vector in item-feature space, in user_id order.
    taste: Vec<Vec<f64>>,
    item_features: Vec<Vec<f64>>,
}

impl GroundTruth {
    /// Noiseless affinity of user `u` (0-based id) for item `i` (0-based id).
    /// Labels are `1[affinity + noise > POSITIVE_MARGIN]`.
    pub fn affinity(&self, user: usize, item: usize) -> f64 {
        let d = self.item_features[item].len() as f64;
        dot(&self.taste[user], &self.item_features[item]) / d.sqrt()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normal_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    generate_synthetic_with_truth(config, seed).map(|(ds, _)| ds)
}

/// User ids are `0..n_users`, item ids `0..n_items`.
pub fn generate_synthetic_with_truth(
    config: &SynthConfig,
    seed: u64,
) -> Result<(Dataset, GroundTruth)> {
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(Error::Config(violations.join("; ")));
    }
    let SynthConfig {
        n_users,
        n_items,
        d_item,
        d_pub,
        d_pri,
        interactions_per_user,
        preference_noise,
    } = *config;

    let mut rng = stream(seed, "synth/model", &[]);
    let user_dim = (d_pub + d_pri) as f64;
    let mix_scale = 1.0 / user_dim.sqrt();
    // taste = A·pub + B·pri + shared
    let pub_map: Vec<Vec<f64>> = (0..d_item)
        .map(|_| normal_vec(&mut rng, d_pub, mix_scale))
        .collect();
    let pri_map: Vec<Vec<f64>> = (0..d_item)
        .map(|_| normal_vec(&mut rng, d_pri, mix_scale))
        .collect();
    let shared = normal_vec(&mut rng, d_item, 0.5);

    let mut item_rng = stream(seed, "synth/items", &[]);
    let item_features: Vec<Vec<f64>> = (0..n_items)
        .map(|_| normal_vec(&mut item_rng, d_item, 1.0))
        .collect();
    let created: Vec<i64> = (0..n_items).map(|_| item_rng.gen_range(0..100)).collect();

    let mut users = Vec::with_capacity(n_users);
    let mut shards = Vec::with_capacity(n_users);
    let mut taste = Vec::with_capacity(n_users);
    let mut popularity = vec![0u64; n_items];
    for u in 0..n_users {
        let mut urng = stream(seed, "synth/user", &[u as u64]);
        let public_features = normal_vec(&mut urng, d_pub, 1.0);
        let private_features = normal_vec(&mut urng, d_pri, 1.0);
        let t: Vec<f64> = (0..d_item)
            .map(|k| {
                dot(&pub_map[k], &public_features) + dot(&pri_map[k], &private_features) + shared[k]
            })
            .collect();

        let exposed = sample(&mut urng, n_items, interactions_per_user).into_vec();
        let mut log = Vec::with_capacity(interactions_per_user);
        for (step, item) in exposed.into_iter().enumerate() {
            let affinity = dot(&t, &item_features[item]) / (d_item as f64).sqrt();
            let eps: f64 = StandardNormal.sample(&mut urng);
            let feedback = if affinity + preference_noise * eps > POSITIVE_MARGIN {
                1.0
            } else {
                0.0
            };
            popularity[item] += 1;
            log.push(Interaction {
                item_id: item as u64,
                feedback,
                timestep: step as i64,
            });
        }
        taste.push(t);
        users.push(PublicUserRecord {
            user_id: u as u64,
            public_features,
            interaction_log: log,
        });
        shards.push(PrivateShard::new(u as u64, private_features));
    }

    let catalog = item_features
        .iter()
        .enumerate()
        .map(|(i, f)| ItemRecord {
            item_id: i as u64,
            feature_vector: f.clone(),
            popularity_count: popularity[i],
            created_at: created[i],
        })
        .collect();

    let dataset = Dataset::new(catalog, users, shards, config.dims())?;
    Ok((
        dataset,
        GroundTruth {
            taste,
            item_features,
        },
    ))
}
