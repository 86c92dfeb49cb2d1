use serde::{Deserialize, Serialize};

use crate::data::{ItemId, UserId};
use crate::recall::Candidate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityId {
    Server,
    Client(UserId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    CandidatePush,
    GlobalParamsPush,
    LocalUpdateUpload,
    TopTRequest,
    FinalListPush,
}

impl MessageKind {
    pub const ALL: [MessageKind; 5] = [
        MessageKind::CandidatePush,
        MessageKind::GlobalParamsPush,
        MessageKind::LocalUpdateUpload,
        MessageKind::TopTRequest,
        MessageKind::FinalListPush,
    ];

    /// Every JSON key the canonical form of this kind's payload may contain,
    /// at any depth.
    pub fn schema(&self) -> &'static [&'static str] {
        match self {
            MessageKind::CandidatePush => &[
                "user_id",
                "items",
                "degenerate",
                "item_id",
                "score",
                "features",
            ],
            MessageKind::GlobalParamsPush => &["round", "weights"],
            MessageKind::LocalUpdateUpload => &["weights", "sample_count"],
            MessageKind::TopTRequest => &["item_ids"],
            MessageKind::FinalListPush => &[
                "user_id",
                "items",
                "item_id",
                "score",
                "features",
                "created_at",
                "popularity_count",
            ],
        }
    }

    pub fn is_upload(&self) -> bool {
        matches!(
            self,
            MessageKind::LocalUpdateUpload | MessageKind::TopTRequest
        )
    }
}

/// Item content delivered with the final list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalItem {
    pub item_id: ItemId,
    pub score: f64,
    pub features: Vec<f64>,
    pub created_at: i64,
    pub popularity_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Payload {
    CandidatePush {
        user_id: UserId,
        items: Vec<Candidate>,
        degenerate: bool,
    },
    GlobalParamsPush {
        round: usize,
        weights: Vec<f64>,
    },
    LocalUpdateUpload {
        weights: Vec<f64>,
        sample_count: usize,
    },
    TopTRequest {
        item_ids: Vec<ItemId>,
    },
    FinalListPush {
        user_id: UserId,
        items: Vec<FinalItem>,
    },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::CandidatePush { .. } => MessageKind::CandidatePush,
            Payload::GlobalParamsPush { .. } => MessageKind::GlobalParamsPush,
            Payload::LocalUpdateUpload { .. } => MessageKind::LocalUpdateUpload,
            Payload::TopTRequest { .. } => MessageKind::TopTRequest,
            Payload::FinalListPush { .. } => MessageKind::FinalListPush,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: EntityId,
    pub receiver: EntityId,
    #[serde(flatten)]
    pub payload: Payload,
    pub byte_size: usize,
}

/// Fixed per-message header: kind tag plus tagged sender and receiver ids.
pub const HEADER_BYTES: usize = 1 + 2 * (1 + 8);

impl Message {
    pub fn new(sender: EntityId, receiver: EntityId, payload: Payload) -> Self {
        let mut msg = Message {
            sender,
            receiver,
            payload,
            byte_size: 0,
        };
        msg.byte_size = msg.wire_bytes().len();
        msg
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    /// Canonical text form, the one the audit scans.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("message serialization is infallible")
    }

    /// Little-endian binary encoding used for byte accounting.
    pub fn wire_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.push(self.kind() as u8);
        put_entity(&mut out, self.sender);
        put_entity(&mut out, self.receiver);
        match &self.payload {
            Payload::CandidatePush {
                user_id,
                items,
                degenerate,
            } => {
                out.extend(user_id.to_le_bytes());
                out.push(u8::from(*degenerate));
                out.extend((items.len() as u32).to_le_bytes());
                let d = items.first().map_or(0, |c| c.features.len());
                out.extend((d as u32).to_le_bytes());
                for c in items {
                    out.extend(c.item_id.to_le_bytes());
                    out.extend(c.score.to_le_bytes());
                    put_floats(&mut out, &c.features);
                }
            }
            Payload::GlobalParamsPush { round, weights } => {
                out.extend((*round as u32).to_le_bytes());
                out.extend((weights.len() as u32).to_le_bytes());
                put_floats(&mut out, weights);
            }
            Payload::LocalUpdateUpload {
                weights,
                sample_count,
            } => {
                out.extend((weights.len() as u32).to_le_bytes());
                put_floats(&mut out, weights);
                out.extend((*sample_count as u64).to_le_bytes());
            }
            Payload::TopTRequest { item_ids } => {
                out.extend((item_ids.len() as u32).to_le_bytes());
                for id in item_ids {
                    out.extend(id.to_le_bytes());
                }
            }
            Payload::FinalListPush { user_id, items } => {
                out.extend(user_id.to_le_bytes());
                out.extend((items.len() as u32).to_le_bytes());
                let d = items.first().map_or(0, |c| c.features.len());
                out.extend((d as u32).to_le_bytes());
                for it in items {
                    out.extend(it.item_id.to_le_bytes());
                    out.extend(it.score.to_le_bytes());
                    out.extend(it.created_at.to_le_bytes());
                    out.extend(it.popularity_count.to_le_bytes());
                    put_floats(&mut out, &it.features);
                }
            }
        }
        out
    }
}

fn put_entity(out: &mut Vec<u8>, id: EntityId) {
    match id {
        EntityId::Server => {
            out.push(0);
            out.extend(0u64.to_le_bytes());
        }
        EntityId::Client(u) => {
            out.push(1);
            out.extend(u.to_le_bytes());
        }
    }
}

fn put_floats(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend(v.to_le_bytes());
    }
}
