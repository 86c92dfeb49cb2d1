//! Dataset schema and the public/private partition.
//!
//! Server-side code only ever receives a [`PublicView`]; private shards are
//! reachable solely through [`Dataset::private_shard`], which the simulated
//! clients use to build their own state.

mod csv_io;
mod synth;

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use csv_io::{load_dataset, write_dataset, DatasetPaths};
pub use synth::{generate_synthetic, generate_synthetic_with_truth, GroundTruth, SynthConfig};

pub type UserId = u64;
pub type ItemId = u64;

/// Feedback at or above this value counts as a positive interaction.
pub const POSITIVE_FEEDBACK: f64 = 0.5;

/// Prefix of every private-scope marker; the audit scans for it.
pub const PRIVATE_MARKER_PREFIX: &str = "private-scope:v1:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_item: usize,
    pub d_pub: usize,
    pub d_pri: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: ItemId,
    pub feature_vector: Vec<f64>,
    pub popularity_count: u64,
    pub created_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub item_id: ItemId,
    pub feedback: f64,
    pub timestep: i64,
}

impl Interaction {
    pub fn is_positive(&self) -> bool {
        self.feedback >= POSITIVE_FEEDBACK
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicUserRecord {
    pub user_id: UserId,
    pub public_features: Vec<f64>,
    pub interaction_log: Vec<Interaction>,
}

impl PublicUserRecord {
    pub fn positive_items(&self) -> HashSet<ItemId> {
        self.interaction_log
            .iter()
            .filter(|e| e.is_positive())
            .map(|e| e.item_id)
            .collect()
    }

    pub fn seen_items(&self) -> HashSet<ItemId> {
        self.interaction_log.iter().map(|e| e.item_id).collect()
    }
}

/// Tamper-evident tag binding a private record to its owner and contents.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivateMarker(String);

impl PrivateMarker {
    fn compute(user_id: UserId, values: &[f64]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(user_id.to_le_bytes());
        for v in values {
            hasher.update(v.to_bits().to_le_bytes());
        }
        let digest = hex::encode(&hasher.finalize()[..8]);
        PrivateMarker(format!("{PRIVATE_MARKER_PREFIX}{user_id}:{digest}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for PrivateMarker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Client-only profile features. Never part of any server-side structure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrivateShard {
    user_id: UserId,
    private_features: Vec<f64>,
    marker: PrivateMarker,
}

impl PrivateShard {
    pub fn new(user_id: UserId, private_features: Vec<f64>) -> Self {
        let marker = PrivateMarker::compute(user_id, &private_features);
        PrivateShard {
            user_id,
            private_features,
            marker,
        }
    }

    pub fn user_id(&self) -> UserId {
        self.user_id
    }

    pub fn features(&self) -> &[f64] {
        &self.private_features
    }

    pub fn marker(&self) -> &PrivateMarker {
        &self.marker
    }

    /// True when the marker still matches the owner and the feature values.
    pub fn verify_marker(&self) -> bool {
        PrivateMarker::compute(self.user_id, &self.private_features) == self.marker
    }
}

/// Immutable dataset. Updates go through [`Dataset::record_interaction`],
/// which returns a new version.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    catalog: Vec<ItemRecord>,
    public_store: Vec<PublicUserRecord>,
    private_shards: Vec<PrivateShard>,
    dims: Dims,
    item_index: HashMap<ItemId, usize>,
    user_index: HashMap<UserId, usize>,
}

/// The server-visible part of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct PublicView<'a> {
    pub catalog: &'a [ItemRecord],
    pub users: &'a [PublicUserRecord],
    pub dims: Dims,
    item_index: &'a HashMap<ItemId, usize>,
    user_index: &'a HashMap<UserId, usize>,
}

impl<'a> PublicView<'a> {
    pub fn item(&self, item_id: ItemId) -> Option<&'a ItemRecord> {
        self.item_index.get(&item_id).map(|&i| &self.catalog[i])
    }

    pub fn user(&self, user_id: UserId) -> Option<&'a PublicUserRecord> {
        self.user_index.get(&user_id).map(|&i| &self.users[i])
    }

    pub fn item_position(&self, item_id: ItemId) -> Option<usize> {
        self.item_index.get(&item_id).copied()
    }

    pub fn user_position(&self, user_id: UserId) -> Option<usize> {
        self.user_index.get(&user_id).copied()
    }
}

impl Dataset {
    pub fn new(
        catalog: Vec<ItemRecord>,
        mut public_store: Vec<PublicUserRecord>,
        mut private_shards: Vec<PrivateShard>,
        dims: Dims,
    ) -> Result<Self> {
        if catalog.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        if public_store.is_empty() {
            return Err(Error::Coverage("dataset has no users".into()));
        }
        let mut item_index = HashMap::with_capacity(catalog.len());
        for (pos, item) in catalog.iter().enumerate() {
            if item.feature_vector.len() != dims.d_item {
                return Err(Error::Shape {
                    context: "item feature vector",
                    expected: dims.d_item,
                    actual: item.feature_vector.len(),
                });
            }
            if item_index.insert(item.item_id, pos).is_some() {
                return Err(Error::Uniqueness {
                    kind: "item",
                    id: item.item_id,
                });
            }
        }

        public_store.sort_by_key(|u| u.user_id);
        private_shards.sort_by_key(|s| s.user_id);
        let mut user_index = HashMap::with_capacity(public_store.len());
        for (pos, user) in public_store.iter().enumerate() {
            if user.public_features.len() != dims.d_pub {
                return Err(Error::Shape {
                    context: "public user features",
                    expected: dims.d_pub,
                    actual: user.public_features.len(),
                });
            }
            if user_index.insert(user.user_id, pos).is_some() {
                return Err(Error::Uniqueness {
                    kind: "user",
                    id: user.user_id,
                });
            }
            if user
                .interaction_log
                .windows(2)
                .any(|w| w[0].timestep > w[1].timestep)
            {
                return Err(Error::Config(format!(
                    "interaction log of user {} is not sorted by timestep",
                    user.user_id
                )));
            }
            for e in &user.interaction_log {
                if !item_index.contains_key(&e.item_id) {
                    return Err(Error::Lookup {
                        kind: "item",
                        id: e.item_id,
                    });
                }
                if !(0.0..=1.0).contains(&e.feedback) {
                    return Err(Error::Config(format!(
                        "feedback {} of user {} outside [0, 1]",
                        e.feedback, user.user_id
                    )));
                }
            }
        }

        let mut shard_ids = HashSet::with_capacity(private_shards.len());
        for shard in &private_shards {
            if shard.private_features.len() != dims.d_pri {
                return Err(Error::Shape {
                    context: "private user features",
                    expected: dims.d_pri,
                    actual: shard.private_features.len(),
                });
            }
            if !shard_ids.insert(shard.user_id) {
                return Err(Error::Uniqueness {
                    kind: "private user",
                    id: shard.user_id,
                });
            }
            if !user_index.contains_key(&shard.user_id) {
                return Err(Error::Coverage(format!(
                    "user {} has a private shard but no public record",
                    shard.user_id
                )));
            }
        }
        if let Some(missing) = public_store
            .iter()
            .find(|u| !shard_ids.contains(&u.user_id))
        {
            return Err(Error::Coverage(format!(
                "user {} has a public record but no private shard",
                missing.user_id
            )));
        }

        Ok(Dataset {
            catalog,
            public_store,
            private_shards,
            dims,
            item_index,
            user_index,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn n_items(&self) -> usize {
        self.catalog.len()
    }

    pub fn n_users(&self) -> usize {
        self.public_store.len()
    }

    pub fn catalog(&self) -> &[ItemRecord] {
        &self.catalog
    }

    pub fn public_store(&self) -> &[PublicUserRecord] {
        &self.public_store
    }

    pub fn user_ids(&self) -> Vec<UserId> {
        self.public_store.iter().map(|u| u.user_id).collect()
    }

    pub fn public_view(&self) -> PublicView<'_> {
        PublicView {
            catalog: &self.catalog,
            users: &self.public_store,
            dims: self.dims,
            item_index: &self.item_index,
            user_index: &self.user_index,
        }
    }

    pub fn item(&self, item_id: ItemId) -> Option<&ItemRecord> {
        self.item_index.get(&item_id).map(|&i| &self.catalog[i])
    }

    pub fn public_user(&self, user_id: UserId) -> Option<&PublicUserRecord> {
        self.user_index
            .get(&user_id)
            .map(|&i| &self.public_store[i])
    }

    /// Client-side access to a user's own shard.
    pub fn private_shard(&self, user_id: UserId) -> Option<&PrivateShard> {
        self.private_shards
            .binary_search_by_key(&user_id, |s| s.user_id)
            .ok()
            .map(|i| &self.private_shards[i])
    }

    pub fn private_shards(&self) -> &[PrivateShard] {
        &self.private_shards
    }

    /// Same public data, different private shards. Used to show that
    /// server-side code is insensitive to private contents.
    pub fn with_private_shards(&self, shards: Vec<PrivateShard>) -> Result<Dataset> {
        Dataset::new(
            self.catalog.clone(),
            self.public_store.clone(),
            shards,
            self.dims,
        )
    }

    /// Same catalog and private shards with replaced interaction logs.
    pub fn with_interaction_logs(
        &self,
        mut logs: HashMap<UserId, Vec<Interaction>>,
    ) -> Result<Dataset> {
        let public_store = self
            .public_store
            .iter()
            .map(|u| PublicUserRecord {
                user_id: u.user_id,
                public_features: u.public_features.clone(),
                interaction_log: logs.remove(&u.user_id).unwrap_or_default(),
            })
            .collect();
        Dataset::new(
            self.catalog.clone(),
            public_store,
            self.private_shards.clone(),
            self.dims,
        )
    }

    /// Service-layer recording: returns a new version with the interaction
    /// added to the user's public log and the item's popularity bumped.
    pub fn record_interaction(
        &self,
        user_id: UserId,
        item_id: ItemId,
        feedback: f64,
        timestep: i64,
    ) -> Result<Dataset> {
        let &user_pos = self.user_index.get(&user_id).ok_or(Error::Lookup {
            kind: "user",
            id: user_id,
        })?;
        let &item_pos = self.item_index.get(&item_id).ok_or(Error::Lookup {
            kind: "item",
            id: item_id,
        })?;
        if !(0.0..=1.0).contains(&feedback) {
            return Err(Error::Config(format!("feedback {feedback} outside [0, 1]")));
        }
        let mut next = self.clone();
        let log = &mut next.public_store[user_pos].interaction_log;
        let at = log.partition_point(|e| e.timestep <= timestep);
        log.insert(
            at,
            Interaction {
                item_id,
                feedback,
                timestep,
            },
        );
        next.catalog[item_pos].popularity_count += 1;
        Ok(next)
    }
}

/// How a (user, item) pair is turned into the ranking model's input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    /// `[public ‖ private ‖ item ‖ 1]`.
    Concat,
    /// `[public ‖ private ‖ item ‖ (public ‖ private) ⊗ item ‖ 1]`. The outer
    /// product block lets a linear scorer rank items differently per user.
    #[default]
    Crossed,
}

impl FeatureMap {
    pub fn dim(&self, dims: Dims) -> usize {
        let base = dims.d_pub + dims.d_pri + dims.d_item + 1;
        match self {
            FeatureMap::Concat => base,
            FeatureMap::Crossed => base + (dims.d_pub + dims.d_pri) * dims.d_item,
        }
    }

    /// Builds the feature vector. Absent private features are replaced by
    /// zeros so every model variant shares one parameter dimension.
    pub fn featurize(
        &self,
        dims: Dims,
        public_features: &[f64],
        private_features: Option<&[f64]>,
        item_features: &[f64],
    ) -> Result<Vec<f64>> {
        check_len("public features", dims.d_pub, public_features.len())?;
        if let Some(p) = private_features {
            check_len("private features", dims.d_pri, p.len())?;
        }
        check_len("item features", dims.d_item, item_features.len())?;

        let mut x = Vec::with_capacity(self.dim(dims));
        x.extend_from_slice(public_features);
        match private_features {
            Some(p) => x.extend_from_slice(p),
            None => x.extend(std::iter::repeat_n(0.0, dims.d_pri)),
        }
        x.extend_from_slice(item_features);
        if *self == FeatureMap::Crossed {
            let user_len = dims.d_pub + dims.d_pri;
            for a in 0..user_len {
                let u = x[a];
                for &f in item_features {
                    x.push(u * f);
                }
            }
        }
        x.push(1.0);
        Ok(x)
    }
}

/// `[public ‖ private ‖ item ‖ 1]` with zero substitution for absent
/// private features.
pub fn featurize(
    dims: Dims,
    public_features: &[f64],
    private_features: Option<&[f64]>,
    item: &ItemRecord,
) -> Result<Vec<f64>> {
    FeatureMap::Concat.featurize(
        dims,
        public_features,
        private_features,
        &item.feature_vector,
    )
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Shape {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> Dims {
        Dims {
            d_item: 2,
            d_pub: 2,
            d_pri: 1,
        }
    }

    fn item(id: ItemId, pop: u64) -> ItemRecord {
        ItemRecord {
            item_id: id,
            feature_vector: vec![id as f64, 1.0],
            popularity_count: pop,
            created_at: 0,
        }
    }

    fn user(id: UserId) -> PublicUserRecord {
        PublicUserRecord {
            user_id: id,
            public_features: vec![0.1, 0.2],
            interaction_log: vec![],
        }
    }

    fn small() -> Dataset {
        Dataset::new(
            (1..=6).map(|i| item(i, 0)).collect(),
            vec![user(1), user(2)],
            vec![
                PrivateShard::new(1, vec![0.7]),
                PrivateShard::new(2, vec![-0.3]),
            ],
            dims(),
        )
        .unwrap()
    }

    #[test]
    fn featurize_concatenates_with_bias() {
        let it = ItemRecord {
            item_id: 1,
            feature_vector: vec![4.0, 5.0],
            popularity_count: 0,
            created_at: 0,
        };
        let x = featurize(dims(), &[1.0, 2.0], Some(&[3.0]), &it).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0, 4.0, 5.0, 1.0]);
    }

    #[test]
    fn featurize_zero_fills_absent_private() {
        let it = ItemRecord {
            item_id: 1,
            feature_vector: vec![4.0, 5.0],
            popularity_count: 0,
            created_at: 0,
        };
        let x = featurize(dims(), &[1.0, 2.0], None, &it).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 0.0, 4.0, 5.0, 1.0]);
    }

    #[test]
    fn featurize_rejects_wrong_item_length() {
        let it = ItemRecord {
            item_id: 1,
            feature_vector: vec![4.0, 5.0, 6.0],
            popularity_count: 0,
            created_at: 0,
        };
        assert!(matches!(
            featurize(dims(), &[1.0, 2.0], Some(&[3.0]), &it),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn crossed_layout_appends_outer_product_before_bias() {
        let x = FeatureMap::Crossed
            .featurize(dims(), &[1.0, 2.0], Some(&[3.0]), &[4.0, 5.0])
            .unwrap();
        assert_eq!(x.len(), FeatureMap::Crossed.dim(dims()));
        assert_eq!(
            x,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 4.0, 5.0, 8.0, 10.0, 12.0, 15.0, 1.0]
        );
    }

    #[test]
    fn record_interaction_appends_and_bumps_popularity() {
        let ds = small();
        let next = ds.record_interaction(1, 5, 1.0, 9).unwrap();
        assert_eq!(next.public_user(1).unwrap().interaction_log.len(), 1);
        assert_eq!(next.item(5).unwrap().popularity_count, 1);
        // prior version untouched
        assert_eq!(ds.item(5).unwrap().popularity_count, 0);
        assert_eq!(next.private_shards(), ds.private_shards());
    }

    #[test]
    fn record_interaction_unknown_item() {
        assert!(matches!(
            small().record_interaction(1, 999, 1.0, 0),
            Err(Error::Lookup {
                kind: "item",
                id: 999
            })
        ));
    }

    #[test]
    fn record_interaction_is_append_only() {
        let ds = small()
            .record_interaction(2, 3, 1.0, 1)
            .unwrap()
            .record_interaction(2, 3, 0.0, 4)
            .unwrap();
        let log = &ds.public_user(2).unwrap().interaction_log;
        assert_eq!(log.len(), 2);
        assert_eq!(log[0].timestep, 1);
        assert_eq!(log[1].timestep, 4);
    }

    #[test]
    fn coverage_is_bijective() {
        let err = Dataset::new(
            vec![item(1, 0)],
            vec![user(1), user(7)],
            vec![PrivateShard::new(1, vec![0.0])],
            dims(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Coverage(_)));
    }

    #[test]
    fn marker_detects_tampering() {
        let mut shard = PrivateShard::new(3, vec![1.5]);
        assert!(shard.verify_marker());
        assert!(shard.marker().as_str().starts_with(PRIVATE_MARKER_PREFIX));
        shard.private_features[0] = 1.6;
        assert!(!shard.verify_marker());
    }
}
