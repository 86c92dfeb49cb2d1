//! End-to-end run: data → recall → federated rounds → serving → evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{DatasetSource, ExperimentConfig};
use crate::data::{generate_synthetic, load_dataset, Dataset, UserId};
use crate::error::{Error, Result, ResultExt};
use crate::eval::{
    delta_precision_report, evaluate_system, make_split, train_centralized_sum, train_local_only,
    train_public_only, EvalSplit, LinearSystem, MetricsReport, PerUserSystem, SystemLabel,
    VerdictReport,
};
use crate::protocol::{
    candidate_push, init_global, run_round, Auditor, Channel, EntityId, Message, MessageKind,
    Payload, RoundLog, ServerState,
};
use crate::ranker::{local_rank, select_top_t, ClientState, RankingParams};
use crate::recall::{recall_all, recall_top_k, train_recall, CandidateSet, RecallModel};
use crate::rerank::{apply_policy, cold_start_list};
use crate::rng::derive_seed;

/// Per-round line of the round-log export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round_index: usize,
    pub participants: Vec<UserId>,
    pub bytes_up: usize,
    pub bytes_down: usize,
    pub theta_norm: f64,
    pub void: bool,
    pub messages: usize,
    pub audit_passed: usize,
    pub audit_failed: usize,
}

impl RoundSummary {
    fn of(log: &RoundLog) -> Self {
        let passed = log.verdicts.iter().filter(|v| v.passed()).count();
        RoundSummary {
            round_index: log.round_index,
            participants: log.participating_clients.clone(),
            bytes_up: log.bytes_up,
            bytes_down: log.bytes_down,
            theta_norm: log.theta_norm(),
            void: log.void,
            messages: log.messages.len(),
            audit_passed: passed,
            audit_failed: log.verdicts.len() - passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub messages: usize,
    pub passed: usize,
    pub failed: usize,
    pub server_bound: usize,
    pub by_kind: BTreeMap<String, usize>,
    pub violation: Option<String>,
}

impl AuditSummary {
    fn new() -> Self {
        AuditSummary {
            messages: 0,
            passed: 0,
            failed: 0,
            server_bound: 0,
            by_kind: BTreeMap::new(),
            violation: None,
        }
    }

    fn absorb(&mut self, messages: &[Message], verdicts: &[crate::protocol::AuditVerdict]) {
        for (m, v) in messages.iter().zip(verdicts) {
            self.messages += 1;
            if v.passed() {
                self.passed += 1;
            } else {
                self.failed += 1;
            }
            if m.receiver == EntityId::Server {
                self.server_bound += 1;
            }
            *self.by_kind.entry(format!("{:?}", m.kind())).or_default() += 1;
        }
    }

    pub fn clean(&self) -> bool {
        self.failed == 0 && self.violation.is_none()
    }
}

/// Messages of the serving pass: candidate push, top-T request, final list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServingLog {
    pub messages: Vec<Message>,
    pub verdicts: Vec<crate::protocol::AuditVerdict>,
    pub bytes_up: usize,
    pub bytes_down: usize,
    pub cold_start_users: Vec<UserId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub rounds_run: usize,
    pub delta_pass: bool,
    pub audit_clean: bool,
    pub artifacts: Vec<String>,
}

/// Everything an in-process caller may want from a run.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub final_params: RankingParams,
    pub round_logs: Vec<RoundLog>,
    pub serving: ServingLog,
    pub reports: Vec<MetricsReport>,
    pub local_reports: Vec<MetricsReport>,
    pub verdict: VerdictReport,
    pub audit: AuditSummary,
    pub summary: RunSummary,
}

pub fn load_or_generate(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.dataset {
        DatasetSource::Synthetic(s) => generate_synthetic(s, config.seed),
        DatasetSource::Files { .. } => load_dataset(&config.dataset.paths().expect("file source")),
    }
}

/// Artifacts land under the output directory; each is recorded in the run
/// summary as a path relative to it.
struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }
}

/// Clients built from the training view of the dataset.
pub fn build_clients(
    train: &Dataset,
    candidates: Vec<CandidateSet>,
    init: &RankingParams,
    config: &ExperimentConfig,
) -> Result<Vec<ClientState>> {
    candidates
        .into_iter()
        .map(|set| {
            let user = train.public_user(set.user_id).ok_or(Error::Lookup {
                kind: "user",
                id: set.user_id,
            })?;
            let shard = train.private_shard(set.user_id).ok_or(Error::Lookup {
                kind: "private user",
                id: set.user_id,
            })?;
            Ok(ClientState {
                user_id: set.user_id,
                private_shard: shard.clone(),
                public_features: user.public_features.clone(),
                own_interactions: user.interaction_log.clone(),
                candidates: set,
                local_params: init.clone(),
                rng_seed: derive_seed(config.seed, "client", &[user.user_id]),
                dims: train.dims(),
                feature_map: config.pipeline.feature_map,
            })
        })
        .collect()
}

fn serve(
    model: &RecallModel,
    train: &Dataset,
    clients: &[ClientState],
    theta: &RankingParams,
    config: &ExperimentConfig,
    auditor: &Auditor,
) -> Result<ServingLog> {
    let view = train.public_view();
    let now = view
        .users
        .iter()
        .flat_map(|u| u.interaction_log.iter().map(|e| e.timestep))
        .max()
        .unwrap_or(0)
        + 1;
    let mut channel = Channel::new(auditor, config.federation.rounds);
    let mut cold = Vec::new();
    for client in clients {
        let uid = client.user_id;
        let history = view.user(uid).map_or(0, |u| u.interaction_log.len());
        let items = if history == 0 {
            cold.push(uid);
            cold_start_list(uid, view, &config.policy, now)?
        } else {
            let serving = recall_top_k(model, view, uid, config.pipeline.k, true)?;
            channel.send(candidate_push(&serving))?;
            let state = ClientState {
                candidates: serving,
                ..client.clone()
            };
            let ranked = local_rank(theta, &state)?;
            let request = select_top_t(&ranked, config.pipeline.t)?;
            channel.send(Message::new(
                EntityId::Client(uid),
                EntityId::Server,
                Payload::TopTRequest {
                    item_ids: request.clone(),
                },
            ))?;
            apply_policy(&request, view, &config.policy, now)?
        };
        channel.send(Message::new(
            EntityId::Server,
            EntityId::Client(uid),
            Payload::FinalListPush {
                user_id: uid,
                items,
            },
        ))?;
    }
    Ok(ServingLog {
        messages: channel.messages,
        verdicts: channel.verdicts,
        bytes_up: channel.bytes_up,
        bytes_down: channel.bytes_down,
        cold_start_users: cold,
    })
}

/// Trains and evaluates all four systems on one split.
pub fn evaluate_all(
    full: &Dataset,
    split: &EvalSplit,
    clients: &[ClientState],
    theta_fl: &RankingParams,
    init: &RankingParams,
    config: &ExperimentConfig,
) -> Result<(Vec<MetricsReport>, Vec<MetricsReport>)> {
    let ks = &config.evaluation.k_values;
    let fmap = config.pipeline.feature_map;
    let rounds = config.federation.rounds;
    let system = |params: RankingParams, use_private| LinearSystem {
        params,
        dataset: full,
        feature_map: fmap,
        use_private,
    };

    let fl = evaluate_system(SystemLabel::FL, &system(theta_fl.clone(), true), split, ks)?;
    let sum_params = train_centralized_sum(clients, init, &config.rank, rounds, config.seed)?;
    let sum = evaluate_system(SystemLabel::Sum, &system(sum_params, true), split, ks)?;
    let pub_params = train_public_only(clients, init, &config.rank, rounds, config.seed)?;
    let public = evaluate_system(
        SystemLabel::PublicOnly,
        &system(pub_params, false),
        split,
        ks,
    )?;

    let evaluated: std::collections::HashSet<UserId> =
        split.users.iter().map(|u| u.user_id).collect();
    let mut locals = Vec::new();
    for c in clients.iter().filter(|c| evaluated.contains(&c.user_id)) {
        let params = train_local_only(c, init, &config.rank, rounds)?;
        let per_user = PerUserSystem {
            params: [(c.user_id, params)].into_iter().collect(),
            dataset: full,
            feature_map: fmap,
        };
        locals.push(evaluate_system(
            SystemLabel::Local(c.user_id),
            &per_user,
            &split.restrict(&[c.user_id]),
            ks,
        )?);
    }
    Ok((vec![fl, sum, public], locals))
}

/// Runs the whole pipeline and writes every artifact under
/// `config.output_dir`. A privacy violation aborts the run after the audit
/// summary and the rounds completed so far are written.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate(Path::new(".")).context("config")?;
    let mut out = Artifacts::new(&config.output_dir)?;
    let seed = config.seed;

    let full = load_or_generate(config).context("core-data")?;
    if config.pipeline.k >= full.n_items() {
        log::warn!(
            "K={} covers the whole catalog of {} items; candidate sets are degenerate",
            config.pipeline.k,
            full.n_items()
        );
    }
    let split = make_split(
        &full,
        config.evaluation.holdout_per_user,
        config.evaluation.negatives_per_positive,
        seed,
    )
    .context("eval-harness")?;
    let train = split.training_dataset(&full).context("eval-harness")?;

    let model = train_recall(train.public_view(), &config.recall, seed).context("recall-engine")?;
    let ckpt = out.dir.join("recall_model.json");
    model.save(&ckpt)?;
    out.written.push("recall_model.json".into());
    let candidates = recall_all(
        &model,
        train.public_view(),
        config.pipeline.k,
        false,
        &split.pool_items(),
    )
    .context("recall-engine")?;

    let d = config.pipeline.feature_map.dim(full.dims());
    let init = init_global(d, seed).context("fed-protocol")?;
    let clients = build_clients(&train, candidates.clone(), &init, config)?;
    let auditor = Auditor::new(&full);

    let mut audit = AuditSummary::new();
    let mut server = ServerState::new(init.clone(), candidates);
    let mut round_logs = Vec::new();
    let mut summaries = Vec::new();
    for round in 0..config.federation.rounds {
        let step = run_round(
            &server,
            &clients,
            &config.federation,
            &config.rank,
            round,
            seed,
            &auditor,
        );
        let (next, log) = match step {
            Ok(ok) => ok,
            Err(e) => {
                if let Error::PrivacyViolation { reason, .. } = &e {
                    audit.violation = Some(reason.clone());
                    out.write_json("audit_summary.json", &audit)?;
                    out.write_json("rounds.json", &summaries)?;
                }
                return Err(e).context("fed-protocol");
            }
        };
        audit.absorb(&log.messages, &log.verdicts);
        summaries.push(RoundSummary::of(&log));
        out.write_json(&format!("rounds/round_{round:03}.json"), &log)?;
        let moved = next.global.max_abs_diff(&server.global);
        server = next;
        round_logs.push(log);
        if let Some(tol) = config.federation.early_stop_tolerance {
            if moved < tol {
                log::info!("early stop after round {round}");
                break;
            }
        }
    }
    out.write_json("rounds.json", &summaries)?;
    let theta = server.global.clone();

    let serving = match serve(&model, &train, &clients, &theta, config, &auditor) {
        Ok(s) => s,
        Err(e) => {
            if let Error::PrivacyViolation { reason, .. } = &e {
                audit.violation = Some(reason.clone());
                out.write_json("audit_summary.json", &audit)?;
            }
            return Err(e).context("serving");
        }
    };
    audit.absorb(&serving.messages, &serving.verdicts);
    out.write_json("serving_log.json", &serving)?;
    out.write_json("audit_summary.json", &audit)?;

    let (reports, local_reports) =
        evaluate_all(&full, &split, &clients, &theta, &init, config).context("eval-harness")?;
    out.write_json("metrics_fl.json", &reports[0])?;
    out.write_json("metrics_sum.json", &reports[1])?;
    out.write_json("metrics_public_only.json", &reports[2])?;
    out.write_json("metrics_local.json", &local_reports)?;
    let verdict = delta_precision_report(
        &reports[1],
        &reports[0],
        &local_reports,
        Some(&reports[2]),
        config.evaluation.delta_threshold,
    )
    .context("eval-harness")?;
    out.write_json("verdict.json", &verdict)?;

    let mut artifacts = out.written.clone();
    artifacts.push("summary.json".into());
    let summary = RunSummary {
        seed,
        rounds_run: round_logs.len(),
        delta_pass: verdict.delta_pass,
        audit_clean: audit.clean(),
        artifacts,
    };
    out.write_json("summary.json", &summary)?;

    Ok(ExperimentOutcome {
        final_params: theta,
        round_logs,
        serving,
        reports,
        local_reports,
        verdict,
        audit,
        summary,
    })
}

/// Recomputes the verdict from stored metrics reports.
pub fn rerender_verdict(dir: &Path, delta_threshold: Option<f64>) -> Result<VerdictReport> {
    let read = |name: &str| -> Result<String> {
        let p = dir.join(name);
        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
    };
    let fl: MetricsReport = serde_json::from_str(&read("metrics_fl.json")?)?;
    let sum: MetricsReport = serde_json::from_str(&read("metrics_sum.json")?)?;
    let public: MetricsReport = serde_json::from_str(&read("metrics_public_only.json")?)?;
    let locals: Vec<MetricsReport> = serde_json::from_str(&read("metrics_local.json")?)?;
    let delta = match delta_threshold {
        Some(d) => d,
        None => {
            let old: VerdictReport = serde_json::from_str(&read("verdict.json")?)?;
            old.delta_threshold
        }
    };
    delta_precision_report(&sum, &fl, &locals, Some(&public), delta)
}

/// Download bytes of one client's candidate push versus pushing the whole
/// catalog in the same message shape.
pub fn candidate_vs_catalog_bytes(set: &CandidateSet, dataset: &Dataset) -> (usize, usize) {
    let full = CandidateSet {
        user_id: set.user_id,
        items: dataset
            .catalog()
            .iter()
            .map(|i| crate::recall::Candidate {
                item_id: i.item_id,
                score: 0.0,
                features: i.feature_vector.clone(),
            })
            .collect(),
        degenerate: true,
    };
    (
        candidate_push(set).byte_size,
        candidate_push(&full).byte_size,
    )
}

pub fn count_kind(messages: &[Message], kind: MessageKind) -> usize {
    messages.iter().filter(|m| m.kind() == kind).count()
}

pub fn verdict_to_json(verdict: &VerdictReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(verdict)?)
}
