//! Reference implementations used as oracles by the integration tests.
//! Written independently of the library code paths they check.
#![allow(dead_code)]

use std::collections::HashSet;
use std::path::PathBuf;

use fedrec_core::config::ExperimentConfig;
use fedrec_core::data::{
    Dataset, Dims, FeatureMap, Interaction, ItemRecord, PrivateShard, PublicUserRecord,
};
use fedrec_core::ranker::{ClientState, RankingParams};
use fedrec_core::recall::{Candidate, CandidateSet};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn acceptance_config(seed: u64, out: &std::path::Path) -> ExperimentConfig {
    let text = std::fs::read_to_string(repo_root().join("configs/acceptance.toml")).unwrap();
    let mut c = ExperimentConfig::from_toml(&text).unwrap();
    c.seed = seed;
    c.output_dir = out.to_path_buf();
    c
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn inner(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Mean cross-entropy plus ½λ‖θ‖² over every coordinate but the last.
pub fn ref_log_loss(theta: &[f64], batch: &[(Vec<f64>, f64)], l2: f64) -> f64 {
    let mut total = 0.0;
    for (x, y) in batch {
        let p = logistic(inner(theta, x));
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    let d = theta.len();
    let reg: f64 = theta[..d - 1].iter().map(|w| w * w).sum();
    total / batch.len() as f64 + 0.5 * l2 * reg
}

/// Closed-form gradient of [`ref_log_loss`].
pub fn ref_gradient(theta: &[f64], batch: &[(Vec<f64>, f64)], l2: f64) -> Vec<f64> {
    let d = theta.len();
    let mut g = vec![0.0; d];
    for (x, y) in batch {
        let e = logistic(inner(theta, x)) - y;
        for j in 0..d {
            g[j] += e * x[j];
        }
    }
    for j in 0..d {
        g[j] /= batch.len() as f64;
        if j + 1 < d {
            g[j] += l2 * theta[j];
        }
    }
    g
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            probe[j] = x[j] + h;
            let up = f(&probe);
            probe[j] = x[j] - h;
            let down = f(&probe);
            probe[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// ‖a − b‖ / max(‖a‖, ‖b‖, tiny).
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Σ n_i·θ_i / Σ n_i, summed in input order.
pub fn ref_weighted_mean(params: &[Vec<f64>], counts: &[usize]) -> Vec<f64> {
    let total: f64 = counts.iter().map(|&n| n as f64).sum();
    let d = params[0].len();
    (0..d)
        .map(|j| {
            params
                .iter()
                .zip(counts)
                .map(|(p, &n)| p[j] * n as f64 / total)
                .sum()
        })
        .collect()
}

pub fn ref_precision(ranked: &[u64], relevant: &HashSet<u64>, k: usize) -> f64 {
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| relevant.contains(i))
        .count();
    hits as f64 / k as f64
}

pub fn ref_recall(ranked: &[u64], relevant: &HashSet<u64>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| relevant.contains(i))
        .count();
    hits as f64 / relevant.len() as f64
}

pub fn ref_ndcg(ranked: &[u64], relevant: &HashSet<u64>, k: usize) -> f64 {
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().enumerate().take(k) {
        if relevant.contains(item) {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal_hits = relevant.len().min(k);
    let mut idcg = 0.0;
    for pos in 0..ideal_hits {
        idcg += 1.0 / ((pos + 2) as f64).log2();
    }
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// A hand-built client with concatenated features and the given candidates.
/// Items in `positives` get feedback 1.
pub fn toy_client(
    items: &[(u64, Vec<f64>)],
    positives: &[u64],
    public: Vec<f64>,
    private: Vec<f64>,
    d: usize,
    rng_seed: u64,
) -> ClientState {
    let dims = Dims {
        d_item: items[0].1.len(),
        d_pub: public.len(),
        d_pri: private.len(),
    };
    ClientState {
        user_id: 1,
        private_shard: PrivateShard::new(1, private),
        public_features: public,
        own_interactions: positives
            .iter()
            .enumerate()
            .map(|(t, &item_id)| Interaction {
                item_id,
                feedback: 1.0,
                timestep: t as i64,
            })
            .collect(),
        candidates: CandidateSet {
            user_id: 1,
            items: items
                .iter()
                .map(|(id, f)| Candidate {
                    item_id: *id,
                    score: 0.0,
                    features: f.clone(),
                })
                .collect(),
            degenerate: false,
        },
        local_params: RankingParams {
            weights: vec![0.0; d],
        },
        rng_seed,
        dims,
        feature_map: FeatureMap::Concat,
    }
}

/// Files under `dir`, relative paths sorted, with their bytes.
pub fn snapshot(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn item(
    item_id: u64,
    features: Vec<f64>,
    popularity_count: u64,
    created_at: i64,
) -> ItemRecord {
    ItemRecord {
        item_id,
        feature_vector: features,
        popularity_count,
        created_at,
    }
}

/// Users with zero public and private features of the given widths and
/// logs of `(item, feedback)` at timesteps 0, 1, 2, ...
pub fn small_dataset(
    catalog: Vec<ItemRecord>,
    logs: &[(u64, Vec<(u64, f64)>)],
    d_pub: usize,
    d_pri: usize,
) -> Dataset {
    let dims = Dims {
        d_item: catalog[0].feature_vector.len(),
        d_pub,
        d_pri,
    };
    let users = logs
        .iter()
        .map(|(uid, log)| PublicUserRecord {
            user_id: *uid,
            public_features: vec![0.0; d_pub],
            interaction_log: log
                .iter()
                .enumerate()
                .map(|(t, &(item_id, feedback))| Interaction {
                    item_id,
                    feedback,
                    timestep: t as i64,
                })
                .collect(),
        })
        .collect();
    let shards = logs
        .iter()
        .map(|(uid, _)| PrivateShard::new(*uid, vec![0.0; d_pri]))
        .collect();
    Dataset::new(catalog, users, shards, dims).unwrap()
}
