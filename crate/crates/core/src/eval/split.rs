use std::collections::{HashMap, HashSet};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, Interaction, ItemId, UserId};
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalUser {
    pub user_id: UserId,
    pub held_out: Vec<ItemId>,
    pub negatives: Vec<ItemId>,
}

impl EvalUser {
    /// Held-out positives and sampled negatives, ascending by id.
    pub fn pool(&self) -> Vec<ItemId> {
        let mut pool: Vec<ItemId> = self
            .held_out
            .iter()
            .chain(&self.negatives)
            .copied()
            .collect();
        pool.sort_unstable();
        pool
    }

    pub fn relevant(&self) -> HashSet<ItemId> {
        self.held_out.iter().copied().collect()
    }
}

/// Leave-last-out split with sampled negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub seed: u64,
    pub holdout_per_user: usize,
    pub negatives_per_positive: usize,
    pub users: Vec<EvalUser>,
    pub excluded_users: Vec<UserId>,
    pub fingerprint: String,
}

/// Holds out each user's last `holdout_per_user` positive interactions
/// (by timestep, ties by item id). A user qualifies with at least
/// `holdout_per_user + 1` interactions, `holdout_per_user` of them positive.
/// Negatives are drawn from items the user never interacted with.
pub fn make_split(
    dataset: &Dataset,
    holdout_per_user: usize,
    negatives_per_positive: usize,
    seed: u64,
) -> Result<EvalSplit> {
    if holdout_per_user < 1 {
        return Err(Error::Config("holdout_per_user must be >= 1".into()));
    }
    let mut users = Vec::new();
    let mut excluded_users = Vec::new();
    for user in dataset.public_store() {
        let mut positives: Vec<&Interaction> = user
            .interaction_log
            .iter()
            .filter(|e| e.is_positive())
            .collect();
        if user.interaction_log.len() < holdout_per_user + 1 || positives.len() < holdout_per_user {
            excluded_users.push(user.user_id);
            continue;
        }
        positives.sort_by_key(|e| (e.timestep, e.item_id));
        let held_out: Vec<ItemId> = positives[positives.len() - holdout_per_user..]
            .iter()
            .map(|e| e.item_id)
            .collect();
        let seen = user.seen_items();
        let unseen: Vec<ItemId> = dataset
            .catalog()
            .iter()
            .map(|i| i.item_id)
            .filter(|id| !seen.contains(id))
            .collect();
        let n_neg = (holdout_per_user * negatives_per_positive).min(unseen.len());
        let mut rng = stream(seed, "split/negatives", &[user.user_id]);
        let mut negatives: Vec<ItemId> = sample(&mut rng, unseen.len(), n_neg)
            .into_iter()
            .map(|i| unseen[i])
            .collect();
        negatives.sort_unstable();
        users.push(EvalUser {
            user_id: user.user_id,
            held_out,
            negatives,
        });
    }
    if users.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let fingerprint = fingerprint(
        seed,
        holdout_per_user,
        negatives_per_positive,
        users.iter().map(|u| u.user_id),
    );
    Ok(EvalSplit {
        seed,
        holdout_per_user,
        negatives_per_positive,
        users,
        excluded_users,
        fingerprint,
    })
}

fn fingerprint(
    seed: u64,
    holdout: usize,
    negatives: usize,
    users: impl Iterator<Item = UserId>,
) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((holdout as u64).to_le_bytes());
    h.update((negatives as u64).to_le_bytes());
    for u in users {
        h.update(u.to_le_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

impl EvalSplit {
    pub fn user(&self, user_id: UserId) -> Option<&EvalUser> {
        self.users.iter().find(|u| u.user_id == user_id)
    }

    /// The same split restricted to some users. Keeps the fingerprint: the
    /// restriction selects rows of one split, it is not a new split.
    pub fn restrict(&self, user_ids: &[UserId]) -> EvalSplit {
        let keep: HashSet<UserId> = user_ids.iter().copied().collect();
        EvalSplit {
            users: self
                .users
                .iter()
                .filter(|u| keep.contains(&u.user_id))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// Items of each evaluated user's pool; no system may train on these.
    pub fn pool_items(&self) -> HashMap<UserId, HashSet<ItemId>> {
        self.users
            .iter()
            .map(|u| (u.user_id, u.pool().into_iter().collect()))
            .collect()
    }

    /// The dataset with held-out interactions removed from the public logs.
    pub fn training_dataset(&self, dataset: &Dataset) -> Result<Dataset> {
        let held: HashMap<UserId, HashSet<ItemId>> = self
            .users
            .iter()
            .map(|u| (u.user_id, u.relevant()))
            .collect();
        let logs = dataset
            .public_store()
            .iter()
            .map(|u| {
                let drop = held.get(&u.user_id);
                let log = u
                    .interaction_log
                    .iter()
                    .filter(|e| !(e.is_positive() && drop.is_some_and(|d| d.contains(&e.item_id))))
                    .copied()
                    .collect();
                (u.user_id, log)
            })
            .collect();
        dataset.with_interaction_logs(logs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dims, ItemRecord, PrivateShard, PublicUserRecord};

    fn dataset(logs: Vec<Vec<(ItemId, i64)>>) -> Dataset {
        let catalog = (0..20)
            .map(|i| ItemRecord {
                item_id: i,
                feature_vector: vec![i as f64],
                popularity_count: 0,
                created_at: 0,
            })
            .collect();
        let n = logs.len();
        let users = logs
            .into_iter()
            .enumerate()
            .map(|(u, log)| PublicUserRecord {
                user_id: u as u64,
                public_features: vec![0.0],
                interaction_log: log
                    .into_iter()
                    .map(|(item_id, timestep)| Interaction {
                        item_id,
                        feedback: 1.0,
                        timestep,
                    })
                    .collect(),
            })
            .collect();
        let shards = (0..n)
            .map(|u| PrivateShard::new(u as u64, vec![1.0]))
            .collect();
        Dataset::new(
            catalog,
            users,
            shards,
            Dims {
                d_item: 1,
                d_pub: 1,
                d_pri: 1,
            },
        )
        .unwrap()
    }

    #[test]
    fn last_interaction_is_held_out() {
        let ds = dataset(vec![vec![(4, 1), (7, 2), (2, 3)]]);
        let split = make_split(&ds, 1, 5, 0).unwrap();
        assert_eq!(split.users[0].held_out, vec![2]);
        assert_eq!(split.users[0].negatives.len(), 5);
        let train = split.training_dataset(&ds).unwrap();
        let log = &train.public_user(0).unwrap().interaction_log;
        assert_eq!(
            log.iter().map(|e| e.item_id).collect::<Vec<_>>(),
            vec![4, 7]
        );
    }

    #[test]
    fn timestep_ties_break_by_item_id() {
        let ds = dataset(vec![vec![(4, 1), (9, 3), (7, 3)]]);
        let split = make_split(&ds, 1, 1, 0).unwrap();
        assert_eq!(split.users[0].held_out, vec![9]);
    }

    #[test]
    fn short_histories_are_excluded() {
        let ds = dataset(vec![vec![(4, 1)], vec![(1, 0), (2, 1)]]);
        let split = make_split(&ds, 1, 3, 0).unwrap();
        assert_eq!(split.excluded_users, vec![0]);
        assert_eq!(split.users.len(), 1);
        assert!(matches!(
            make_split(&dataset(vec![vec![(4, 1)]]), 1, 3, 0),
            Err(Error::EmptyEvaluation)
        ));
    }

    #[test]
    fn negatives_are_seeded_and_unseen() {
        let ds = dataset(vec![vec![(4, 1), (7, 2), (2, 3)]]);
        let a = make_split(&ds, 1, 10, 8).unwrap();
        assert_eq!(a, make_split(&ds, 1, 10, 8).unwrap());
        assert!(a.users[0].negatives.iter().all(|n| ![4, 7, 2].contains(n)));
    }
}
