//! Centralized cross-device federation: initialization, client sampling,
//! rounds, weighted aggregation, message archive and byte accounting.

mod audit;
mod message;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use audit::{audit_message, AuditVerdict, Auditor};
pub use message::{EntityId, FinalItem, Message, MessageKind, Payload, HEADER_BYTES};

use crate::data::UserId;
use crate::error::{Error, Result};
use crate::ranker::{local_train, ClientState, LocalUpdate, RankHyper, RankingParams};
use crate::recall::CandidateSet;
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Weighted by each client's sample count.
    #[default]
    SampleCount,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedConfig {
    pub rounds: usize,
    pub participation_fraction: f64,
    pub dropout_prob: f64,
    pub weighting: Weighting,
    /// Stop once ‖Θ_t − Θ_{t−1}‖∞ falls below this; `None` runs all rounds.
    pub early_stop_tolerance: Option<f64>,
    /// Worker threads for client simulation; 0 uses the global pool.
    pub threads: usize,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            rounds: 20,
            participation_fraction: 1.0,
            dropout_prob: 0.0,
            weighting: Weighting::SampleCount,
            early_stop_tolerance: Some(1e-6),
            threads: 0,
        }
    }
}

impl FedConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.rounds < 1 {
            v.push("federation.rounds must be >= 1".to_string());
        }
        if !(self.participation_fraction > 0.0 && self.participation_fraction <= 1.0) {
            v.push(format!(
                "federation.participation_fraction must be in (0, 1], got {}",
                self.participation_fraction
            ));
        }
        if !(self.dropout_prob >= 0.0 && self.dropout_prob < 1.0) {
            v.push(format!(
                "federation.dropout_prob must be in [0, 1), got {}",
                self.dropout_prob
            ));
        }
        if let Some(tol) = self.early_stop_tolerance {
            if !(tol >= 0.0 && tol.is_finite()) {
                v.push(format!(
                    "federation.early_stop_tolerance must be >= 0, got {tol}"
                ));
            }
        }
        v
    }
}

/// Global parameters: uniform(−0.01, 0.01), bias (last coordinate) zero.
pub fn init_global(d: usize, seed: u64) -> Result<RankingParams> {
    if d < 1 {
        return Err(Error::Config("parameter dimension must be >= 1".into()));
    }
    let mut rng = stream(seed, "rank/init", &[]);
    let mut weights: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.01..0.01)).collect();
    weights[d - 1] = 0.0;
    Ok(RankingParams { weights })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: UserId,
    pub params: RankingParams,
    pub sample_count: usize,
}

/// `Θ = Σ n_i·θ_i / Σ n_i` (or the plain mean under [`Weighting::Uniform`]).
///
/// Updates are summed in client-id order, so the result does not depend on
/// the order they arrived in. Each coordinate is clamped to the range of the
/// inputs to absorb rounding.
pub fn aggregate(updates: &[ClientUpdate], weighting: Weighting) -> Result<RankingParams> {
    let first = updates.first().ok_or(Error::NoParticipants)?;
    let d = first.params.dim();
    for u in updates {
        if u.params.dim() != d {
            return Err(Error::Shape {
                context: "client update",
                expected: d,
                actual: u.params.dim(),
            });
        }
        if !u.params.is_finite() {
            return Err(Error::RejectedUpdate {
                client: u.client_id,
            });
        }
        if u.sample_count < 1 {
            return Err(Error::Config(format!(
                "client {} reported zero samples",
                u.client_id
            )));
        }
    }
    let mut ordered: Vec<&ClientUpdate> = updates.iter().collect();
    ordered.sort_by(|a, b| {
        a.client_id.cmp(&b.client_id).then_with(|| {
            a.params
                .weights
                .iter()
                .map(|w| w.to_bits())
                .cmp(b.params.weights.iter().map(|w| w.to_bits()))
        })
    });

    let weight = |u: &ClientUpdate| match weighting {
        Weighting::SampleCount => u.sample_count as f64,
        Weighting::Uniform => 1.0,
    };
    let total: f64 = ordered.iter().map(|u| weight(u)).sum();
    let mut weights = vec![0.0; d];
    for u in &ordered {
        let w = weight(u);
        for (acc, v) in weights.iter_mut().zip(&u.params.weights) {
            *acc += w * v;
        }
    }
    for (j, acc) in weights.iter_mut().enumerate() {
        let (lo, hi) = ordered
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| {
                (lo.min(u.params.weights[j]), hi.max(u.params.weights[j]))
            });
        *acc = (*acc / total).clamp(lo, hi);
    }
    Ok(RankingParams { weights })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub sampled: Vec<UserId>,
    pub survivors: Vec<UserId>,
}

/// Samples ⌈fraction·N⌉ clients without replacement, then drops each with
/// `dropout_prob`. If everyone drops, the lowest sampled id is kept.
pub fn select_clients(
    all_clients: &[UserId],
    participation_fraction: f64,
    dropout_prob: f64,
    seed: u64,
    round_index: usize,
) -> Result<Selection> {
    if all_clients.is_empty() {
        return Err(Error::Config("no clients to sample".into()));
    }
    if !(participation_fraction > 0.0 && participation_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "participation fraction {participation_fraction} outside (0, 1]"
        )));
    }
    if !(0.0..1.0).contains(&dropout_prob) {
        return Err(Error::Config(format!(
            "dropout probability {dropout_prob} outside [0, 1)"
        )));
    }
    let mut ids = all_clients.to_vec();
    ids.sort_unstable();
    let n = ids.len();
    let m = ((participation_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = stream(seed, "federation/sample", &[round_index as u64]);
    let mut sampled: Vec<UserId> = sample(&mut rng, n, m).into_iter().map(|i| ids[i]).collect();
    sampled.sort_unstable();
    let mut survivors: Vec<UserId> = sampled
        .iter()
        .copied()
        .filter(|_| rng.gen::<f64>() >= dropout_prob)
        .collect();
    if survivors.is_empty() {
        survivors.push(sampled[0]);
    }
    Ok(Selection { sampled, survivors })
}

/// The surviving clients of [`select_clients`].
pub fn sample_clients(
    all_clients: &[UserId],
    participation_fraction: f64,
    dropout_prob: f64,
    seed: u64,
    round_index: usize,
) -> Result<Vec<UserId>> {
    select_clients(
        all_clients,
        participation_fraction,
        dropout_prob,
        seed,
        round_index,
    )
    .map(|s| s.survivors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub global: RankingParams,
    pub rounds_completed: usize,
    /// Candidate sets still to be delivered; sent at the start of the next
    /// round.
    pub pending_candidates: Vec<CandidateSet>,
}

impl ServerState {
    pub fn new(global: RankingParams, candidates: Vec<CandidateSet>) -> Self {
        ServerState {
            global,
            rounds_completed: 0,
            pending_candidates: candidates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round_index: usize,
    pub sampled_clients: Vec<UserId>,
    pub participating_clients: Vec<UserId>,
    pub messages: Vec<Message>,
    pub verdicts: Vec<AuditVerdict>,
    pub bytes_up: usize,
    pub bytes_down: usize,
    /// No update arrived; Θ was left unchanged.
    pub void: bool,
    pub global_params_after: RankingParams,
}

impl RoundLog {
    pub fn theta_norm(&self) -> f64 {
        self.global_params_after.l2_norm()
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(AuditVerdict::passed)
    }

    /// Downlink bytes of candidate pushes addressed to one client.
    pub fn candidate_bytes_to(&self, client: UserId) -> usize {
        self.messages
            .iter()
            .filter(|m| {
                m.kind() == MessageKind::CandidatePush && m.receiver == EntityId::Client(client)
            })
            .map(|m| m.byte_size)
            .sum()
    }
}

/// Collects messages, audits each one as it is sent and keeps byte totals.
pub struct Channel<'a> {
    auditor: &'a Auditor,
    round: usize,
    pub messages: Vec<Message>,
    pub verdicts: Vec<AuditVerdict>,
    pub bytes_up: usize,
    pub bytes_down: usize,
}

impl<'a> Channel<'a> {
    pub fn new(auditor: &'a Auditor, round: usize) -> Self {
        Channel {
            auditor,
            round,
            messages: Vec::new(),
            verdicts: Vec::new(),
            bytes_up: 0,
            bytes_down: 0,
        }
    }

    /// Archives the message; a failed audit aborts with a privacy violation.
    pub fn send(&mut self, msg: Message) -> Result<()> {
        let verdict = self.auditor.audit(&msg);
        if let AuditVerdict::Fail(reasons) = &verdict {
            return Err(Error::PrivacyViolation {
                round: self.round,
                reason: format!(
                    "{:?} from {:?}: {}",
                    msg.kind(),
                    msg.sender,
                    reasons.join("; ")
                ),
            });
        }
        if msg.receiver == EntityId::Server {
            self.bytes_up += msg.byte_size;
        } else {
            self.bytes_down += msg.byte_size;
        }
        self.messages.push(msg);
        self.verdicts.push(verdict);
        Ok(())
    }
}

pub fn candidate_push(set: &CandidateSet) -> Message {
    Message::new(
        EntityId::Server,
        EntityId::Client(set.user_id),
        Payload::CandidatePush {
            user_id: set.user_id,
            items: set.items.clone(),
            degenerate: set.degenerate,
        },
    )
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// One federated round: push Θ to the sampled clients, train the survivors
/// locally, collect uploads, aggregate.
///
/// `clients` must be sorted by user id. Clients train in parallel; uploads
/// are archived and aggregated in client-id order.
pub fn run_round(
    server: &ServerState,
    clients: &[ClientState],
    fed: &FedConfig,
    rank: &RankHyper,
    round_index: usize,
    seed: u64,
    auditor: &Auditor,
) -> Result<(ServerState, RoundLog)> {
    let mut channel = Channel::new(auditor, round_index);
    for set in &server.pending_candidates {
        channel.send(candidate_push(set))?;
    }

    let ids: Vec<UserId> = clients.iter().map(|c| c.user_id).collect();
    let selection = select_clients(
        &ids,
        fed.participation_fraction,
        fed.dropout_prob,
        seed,
        round_index,
    )?;
    for &id in &selection.sampled {
        channel.send(Message::new(
            EntityId::Server,
            EntityId::Client(id),
            Payload::GlobalParamsPush {
                round: round_index,
                weights: server.global.weights.clone(),
            },
        ))?;
    }

    let participants: Vec<&ClientState> = selection
        .survivors
        .iter()
        .map(|id| {
            ids.binary_search(id)
                .map(|pos| &clients[pos])
                .map_err(|_| Error::Lookup {
                    kind: "client",
                    id: *id,
                })
        })
        .collect::<Result<_>>()?;
    let global = &server.global;
    let outcomes: Vec<Result<(UserId, LocalUpdate)>> = with_pool(fed.threads, || {
        participants
            .par_iter()
            .map(|c| local_train(global, c, rank, round_index as u64).map(|u| (c.user_id, u)))
            .collect()
    })?;

    let mut updates = Vec::new();
    for outcome in outcomes {
        let (client_id, update) = outcome?;
        if let LocalUpdate::Trained {
            params,
            sample_count,
        } = update
        {
            channel.send(Message::new(
                EntityId::Client(client_id),
                EntityId::Server,
                Payload::LocalUpdateUpload {
                    weights: params.weights.clone(),
                    sample_count,
                },
            ))?;
            updates.push(ClientUpdate {
                client_id,
                params,
                sample_count,
            });
        }
    }

    let void = updates.is_empty();
    let global_after = if void {
        log::warn!("round {round_index}: no client updates, global parameters unchanged");
        server.global.clone()
    } else {
        aggregate(&updates, fed.weighting)?
    };
    let next = ServerState {
        global: global_after.clone(),
        rounds_completed: server.rounds_completed + 1,
        pending_candidates: Vec::new(),
    };
    let log = RoundLog {
        round_index,
        sampled_clients: selection.sampled,
        participating_clients: updates.iter().map(|u| u.client_id).collect(),
        messages: channel.messages,
        verdicts: channel.verdicts,
        bytes_up: channel.bytes_up,
        bytes_down: channel.bytes_down,
        void,
        global_params_after: global_after,
    };
    Ok((next, log))
}

/// Runs up to `fed.rounds` rounds, stopping early once Θ stops moving.
pub fn run_federation(
    mut server: ServerState,
    clients: &[ClientState],
    fed: &FedConfig,
    rank: &RankHyper,
    seed: u64,
    auditor: &Auditor,
) -> Result<(ServerState, Vec<RoundLog>)> {
    let mut logs = Vec::with_capacity(fed.rounds);
    for round in 0..fed.rounds {
        let (next, log) = run_round(&server, clients, fed, rank, round, seed, auditor)?;
        let moved = next.global.max_abs_diff(&server.global);
        server = next;
        logs.push(log);
        if let Some(tol) = fed.early_stop_tolerance {
            if moved < tol {
                log::info!("stopping after round {round}: max change {moved:e} < {tol:e}");
                break;
            }
        }
    }
    Ok((server, logs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upd(id: UserId, w: &[f64], n: usize) -> ClientUpdate {
        ClientUpdate {
            client_id: id,
            params: RankingParams {
                weights: w.to_vec(),
            },
            sample_count: n,
        }
    }

    #[test]
    fn equal_weight_mean() {
        let out = aggregate(
            &[upd(1, &[1.0, 3.0], 1), upd(2, &[3.0, 5.0], 1)],
            Weighting::SampleCount,
        )
        .unwrap();
        assert_eq!(out.weights, vec![2.0, 4.0]);
    }

    #[test]
    fn single_update_identity() {
        let out = aggregate(&[upd(1, &[0.3, -7.25], 9)], Weighting::SampleCount).unwrap();
        assert_eq!(out.weights, vec![0.3, -7.25]);
    }

    #[test]
    fn sample_weighted_mean() {
        let out = aggregate(
            &[upd(1, &[0.0, 0.0], 3), upd(2, &[4.0, 8.0], 1)],
            Weighting::SampleCount,
        )
        .unwrap();
        assert_eq!(out.weights, vec![1.0, 2.0]);
        let uniform = aggregate(
            &[upd(1, &[0.0, 0.0], 3), upd(2, &[4.0, 8.0], 1)],
            Weighting::Uniform,
        )
        .unwrap();
        assert_eq!(uniform.weights, vec![2.0, 4.0]);
    }

    #[test]
    fn aggregate_errors() {
        assert!(matches!(
            aggregate(&[], Weighting::SampleCount),
            Err(Error::NoParticipants)
        ));
        assert!(matches!(
            aggregate(
                &[upd(1, &[0.0], 1), upd(2, &[0.0, 1.0], 1)],
                Weighting::SampleCount
            ),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            aggregate(
                &[upd(1, &[0.0], 1), upd(7, &[f64::NAN], 1)],
                Weighting::SampleCount
            ),
            Err(Error::RejectedUpdate { client: 7 })
        ));
    }

    #[test]
    fn init_global_rules() {
        let a = init_global(6, 7).unwrap();
        assert_eq!(a, init_global(6, 7).unwrap());
        assert_eq!(a.weights[5], 0.0);
        assert!(a.weights.iter().all(|w| w.abs() <= 0.01));
        assert!(matches!(init_global(0, 7), Err(Error::Config(_))));
    }

    #[test]
    fn sampling_rules() {
        let ids: Vec<UserId> = (0..10).collect();
        assert_eq!(sample_clients(&ids, 1.0, 0.0, 3, 0).unwrap(), ids);
        let half = select_clients(&ids, 0.5, 0.0, 3, 1).unwrap();
        assert_eq!(half.sampled.len(), 5);
        assert_eq!(half, select_clients(&ids, 0.5, 0.0, 3, 1).unwrap());
        assert!(matches!(
            sample_clients(&[], 1.0, 0.0, 3, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dropout_always_leaves_a_survivor() {
        let ids: Vec<UserId> = (0..3).collect();
        for round in 0..50 {
            let sel = select_clients(&ids, 1.0, 0.99, 1, round).unwrap();
            assert!(!sel.survivors.is_empty());
            assert!(sel.survivors.iter().all(|s| sel.sampled.contains(s)));
        }
    }
}
