//! Checkpoint evaluation: metric runs over held-out generated rooms,
//! baseline comparison on identical episode tuples, and per-step
//! trajectory dumps.
//!
//! Every agent in a comparison sees the same `(room, start pose, target,
//! action-stream seed)` tuples; the gated and ungated agents additionally
//! share the policy parameters, so any metric difference comes from the
//! termination gate alone.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::control::ControlMode;
use crate::env::{generate_room, Action, AgentPose, Episode, GridRoom};
use crate::error::{Error, Result};
use crate::judge::JudgeNet;
use crate::metrics::{optimal_episode_length, split_report, EpisodeRecord, MetricsReport};
use crate::perception::{detect, EmbeddingSet};
use crate::rl::{worker_rollout, PolicyNet, RolloutCarry, TrajStep};
use crate::seeding;

/// Which agent runs an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    /// Uniform random actions.
    Random,
    /// Policy only; Done comes from the policy distribution (gate off).
    GateOff,
    /// Policy plus the termination judge (gate on).
    GateOn,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Random => "random",
            AgentKind::GateOff => "gate_off",
            AgentKind::GateOn => "gate_on",
        }
    }
}

/// One evaluation episode: a room instance, a start seed and a target.
#[derive(Debug, Clone)]
pub struct EvalEpisodeSpec {
    pub room: GridRoom,
    pub room_id: String,
    pub target_type: usize,
    pub reset_seed: u64,
    pub action_seed: u64,
}

/// Networks reconstructed from a checkpoint against a configuration.
pub struct LoadedAgent {
    pub policy_net: PolicyNet,
    pub judge_net: JudgeNet,
    pub checkpoint: Checkpoint,
    pub embeddings: EmbeddingSet,
}

pub fn load_agent(cfg: &RunConfig, checkpoint: Checkpoint) -> Result<LoadedAgent> {
    let meta = &checkpoint.meta;
    if meta.n_types != cfg.catalog.len()
        || meta.d_emb != cfg.d_emb
        || meta.embedding_seed != cfg.embedding_seed
        || meta.recurrent != cfg.net.recurrent
    {
        return Err(Error::Checkpoint(format!(
            "checkpoint incompatible with configuration: \
             checkpoint (n_types {}, d_emb {}, embedding_seed {}, recurrent {}) \
             vs config (n_types {}, d_emb {}, embedding_seed {}, recurrent {})",
            meta.n_types,
            meta.d_emb,
            meta.embedding_seed,
            meta.recurrent,
            cfg.catalog.len(),
            cfg.d_emb,
            cfg.embedding_seed,
            cfg.net.recurrent
        )));
    }
    let policy_net = PolicyNet::new(cfg.policy_net_config(), cfg.adjacency()?)?;
    let judge_net = JudgeNet::new(cfg.judge_net_config())?;
    let embeddings = EmbeddingSet::new(cfg.catalog.len(), cfg.d_emb, cfg.embedding_seed)?;
    // Surface dimension mismatches now rather than mid-episode.
    for layer in policy_net.init_params(0)?.layers() {
        let loaded = checkpoint.policy.get(&layer.name)?;
        if loaded.weights.shape() != layer.weights.shape()
            || loaded.bias.shape() != layer.bias.shape()
        {
            return Err(Error::Checkpoint(format!(
                "checkpoint layer `{}` has shape {:?}, configuration expects {:?}",
                layer.name,
                loaded.weights.shape(),
                layer.weights.shape()
            )));
        }
    }
    Ok(LoadedAgent {
        policy_net,
        judge_net,
        checkpoint,
        embeddings,
    })
}

/// Held-out evaluation episodes: rooms and episode seeds derive from
/// `eval_seed` in a stream disjoint from training.
pub fn build_eval_specs(cfg: &RunConfig, eval_seed: u64) -> Result<Vec<EvalEpisodeSpec>> {
    let mut specs = Vec::new();
    let mut room_index = 0u64;
    for preset_name in &cfg.eval.presets {
        let preset = cfg.preset(preset_name)?;
        for _ in 0..cfg.eval.rooms_per_preset {
            let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix3(
                eval_seed,
                seeding::TAG_EVAL,
                room_index,
            ));
            let room = generate_room(preset, &cfg.catalog, rng.gen())?;
            let mut present: Vec<usize> = room.objects.iter().map(|o| o.type_id).collect();
            present.sort_unstable();
            present.dedup();
            let allowed: Vec<usize> = if cfg.eval.targets.is_empty() {
                present.clone()
            } else {
                let filtered: Vec<usize> = present
                    .iter()
                    .copied()
                    .filter(|t| cfg.eval.targets.contains(t))
                    .collect();
                if filtered.is_empty() {
                    present.clone()
                } else {
                    filtered
                }
            };
            for episode in 0..cfg.eval.episodes_per_room {
                let target_type = allowed[rng.gen_range(0..allowed.len())];
                specs.push(EvalEpisodeSpec {
                    room: room.clone(),
                    room_id: format!("{preset_name}#{room_index}"),
                    target_type,
                    reset_seed: rng.gen(),
                    action_seed: rng.gen(),
                });
                let _ = episode;
            }
            room_index += 1;
        }
    }
    Ok(specs)
}

/// Run one episode and return its record plus the full step trace.
pub fn run_episode(
    cfg: &RunConfig,
    agent: &LoadedAgent,
    kind: AgentKind,
    spec: &EvalEpisodeSpec,
) -> Result<(EpisodeRecord, Vec<TrajStep>)> {
    let episode_config = cfg.episode_config(spec.target_type);
    let mut episode = Episode::start(spec.room.clone(), episode_config.clone(), spec.reset_seed)?;
    let start_pose = episode.start_pose;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.action_seed);
    let steps = match kind {
        AgentKind::Random => run_random(&mut episode, &mut rng)?,
        AgentKind::GateOff => {
            let mut carry = RolloutCarry::fresh(agent.policy_net.cfg().hidden_dim);
            let traj = worker_rollout(
                &mut episode,
                &agent.embeddings,
                &agent.policy_net,
                &agent.checkpoint.policy,
                None,
                ControlMode::Eval,
                &mut carry,
                &mut rng,
                episode_config.max_steps,
            )?;
            traj.steps
        }
        AgentKind::GateOn => {
            let mut carry = RolloutCarry::fresh(agent.policy_net.cfg().hidden_dim);
            let traj = worker_rollout(
                &mut episode,
                &agent.embeddings,
                &agent.policy_net,
                &agent.checkpoint.policy,
                Some((&agent.judge_net, &agent.checkpoint.judge)),
                ControlMode::Eval,
                &mut carry,
                &mut rng,
                episode_config.max_steps,
            )?;
            traj.steps
        }
    };
    let optimal = optimal_episode_length(&spec.room, &start_pose, spec.target_type, &episode_config);
    let record = EpisodeRecord {
        success: episode.success,
        actions_taken: episode.steps_taken,
        optimal_actions: optimal,
        room_id: spec.room_id.clone(),
        target_type: spec.target_type,
        seed: spec.reset_seed,
    };
    Ok((record, steps))
}

fn run_random(episode: &mut Episode, rng: &mut ChaCha8Rng) -> Result<Vec<TrajStep>> {
    while !episode.terminated {
        let detections = detect(&episode.room, &episode.pose);
        let action = Action::ALL[rng.gen_range(0..Action::COUNT)];
        episode.step(action, &detections)?;
    }
    Ok(Vec::new())
}

/// Evaluate one agent over the full held-out spec list.
pub fn evaluate(
    cfg: &RunConfig,
    agent: &LoadedAgent,
    kind: AgentKind,
    eval_seed: u64,
) -> Result<(MetricsReport, Vec<EpisodeRecord>)> {
    let specs = build_eval_specs(cfg, eval_seed)?;
    let mut records = Vec::with_capacity(specs.len());
    for spec in &specs {
        let (record, _) = run_episode(cfg, agent, kind, spec)?;
        records.push(record);
    }
    let report = split_report(&records, cfg.eval.length_threshold)?;
    Ok((report, records))
}

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub agents: Vec<CompareRow>,
}

#[derive(Debug, Serialize)]
pub struct CompareRow {
    pub agent: String,
    pub report: MetricsReport,
}

impl CompareReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("agent,filter,n,sr,spl\n");
        for row in &self.agents {
            for bucket in [&row.report.overall, &row.report.long_episodes] {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    row.agent, bucket.filter, bucket.n, bucket.sr, bucket.spl
                ));
            }
        }
        out
    }
}

/// Random vs gate-off vs gate-on over identical episode tuples.
pub fn compare(cfg: &RunConfig, agent: &LoadedAgent, eval_seed: u64) -> Result<CompareReport> {
    let mut agents = Vec::new();
    for kind in [AgentKind::Random, AgentKind::GateOff, AgentKind::GateOn] {
        let (report, _) = evaluate(cfg, agent, kind, eval_seed)?;
        agents.push(CompareRow {
            agent: kind.name().to_string(),
            report,
        });
    }
    Ok(CompareReport { agents })
}

// Trajectory dump format, versioned.
pub const TRAJECTORY_DUMP_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct TrajectoryDump {
    pub version: u32,
    pub room_id: String,
    pub room_seed: u64,
    pub target_type: usize,
    pub agent: String,
    pub steps: Vec<DumpStep>,
    pub outcome: DumpOutcome,
}

#[derive(Debug, Serialize)]
pub struct DumpStep {
    pub t: u32,
    pub pose: AgentPose,
    pub action: String,
    pub rule_fired: crate::control::RuleFired,
    pub p_con: [f64; 6],
    pub judge: Option<crate::judge::JudgeOutput>,
    pub reward: f64,
    pub effective: bool,
}

#[derive(Debug, Serialize)]
pub struct DumpOutcome {
    pub success: bool,
    pub steps: u32,
    pub optimal_actions: Option<u32>,
    pub total_reward: f64,
}

/// Run one gated or ungated episode and dump every step as JSON.
pub fn dump_episode(
    cfg: &RunConfig,
    agent: &LoadedAgent,
    kind: AgentKind,
    spec: &EvalEpisodeSpec,
    path: &Path,
) -> Result<TrajectoryDump> {
    if kind == AgentKind::Random {
        return Err(Error::Config(
            "trajectory dumps need a policy agent (gate_on or gate_off)".to_string(),
        ));
    }
    let (record, steps) = run_episode(cfg, agent, kind, spec)?;
    let dump = TrajectoryDump {
        version: TRAJECTORY_DUMP_VERSION,
        room_id: spec.room_id.clone(),
        room_seed: spec.room.seed,
        target_type: spec.target_type,
        agent: kind.name().to_string(),
        steps: steps
            .iter()
            .enumerate()
            .map(|(t, s)| DumpStep {
                t: t as u32,
                pose: s.pose,
                action: s.action.name().to_string(),
                rule_fired: s.rule_fired,
                p_con: s.p_con,
                judge: s.judge,
                reward: s.reward,
                effective: s.effective,
            })
            .collect(),
        outcome: DumpOutcome {
            success: record.success,
            steps: record.actions_taken,
            optimal_actions: record.optimal_actions,
            total_reward: steps.iter().map(|s| s.reward).sum(),
        },
    };
    std::fs::write(path, serde_json::to_string_pretty(&dump)?)?;
    Ok(dump)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;
    use crate::orchestrator::train;

    fn quick_cfg() -> RunConfig {
        parse_config_str(
            "\
preset.tiny.width = 8
preset.tiny.height = 8
preset.tiny.obstacle_density = 0.05
preset.tiny.types = 0,1
preset.tiny.min_instances = 1
preset.tiny.max_instances = 1
train.presets = tiny
eval.presets = tiny
train.workers = 1
train.episodes_total = 4
train.episodes_joint = 4
env.max_steps = 25
net.gcn_dim = 4
net.trunk_dim = 16
net.hidden_dim = 16
judge.common_dim = 8
judge.buffer_capacity = 8
eval.rooms_per_preset = 2
eval.episodes_per_room = 2
",
        )
        .unwrap()
    }

    fn trained_agent(cfg: &RunConfig) -> LoadedAgent {
        let dir = tempfile::tempdir().unwrap();
        let outcome = train(cfg, dir.path()).unwrap();
        load_agent(cfg, outcome.checkpoint).unwrap()
    }

    #[test]
    fn eval_specs_are_deterministic_and_counted() {
        let cfg = quick_cfg();
        let a = build_eval_specs(&cfg, 9).unwrap();
        let b = build_eval_specs(&cfg, 9).unwrap();
        assert_eq!(a.len(), 4); // 1 preset x 2 rooms x 2 episodes
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.room, y.room);
            assert_eq!(x.target_type, y.target_type);
            assert_eq!(x.reset_seed, y.reset_seed);
            assert_eq!(x.action_seed, y.action_seed);
        }
    }

    #[test]
    fn evaluation_produces_reports_for_all_agents() {
        let cfg = quick_cfg();
        let agent = trained_agent(&cfg);
        for kind in [AgentKind::Random, AgentKind::GateOff, AgentKind::GateOn] {
            let (report, records) = evaluate(&cfg, &agent, kind, 3).unwrap();
            assert_eq!(report.overall.n, 4);
            assert_eq!(records.len(), 4);
            assert!(report.overall.spl <= report.overall.sr + 1e-12);
            // Optimal length is a lower bound on every successful episode.
            for r in &records {
                if r.success {
                    assert!(r.actions_taken >= r.optimal_actions.unwrap());
                }
            }
        }
    }

    #[test]
    fn evaluation_is_reproducible() {
        let cfg = quick_cfg();
        let agent = trained_agent(&cfg);
        let (report_a, records_a) = evaluate(&cfg, &agent, AgentKind::GateOn, 7).unwrap();
        let (report_b, records_b) = evaluate(&cfg, &agent, AgentKind::GateOn, 7).unwrap();
        assert_eq!(report_a, report_b);
        assert_eq!(records_a, records_b);
    }

    #[test]
    fn incompatible_checkpoint_is_rejected() {
        let cfg = quick_cfg();
        let dir = tempfile::tempdir().unwrap();
        let outcome = train(&cfg, dir.path()).unwrap();
        let mut other = quick_cfg();
        other.embedding_seed += 1;
        assert!(matches!(
            load_agent(&other, outcome.checkpoint),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn dump_rejects_random_agent() {
        let cfg = quick_cfg();
        let agent = trained_agent(&cfg);
        let specs = build_eval_specs(&cfg, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.json");
        assert!(dump_episode(&cfg, &agent, AgentKind::Random, &specs[0], &path).is_err());
        let dump = dump_episode(&cfg, &agent, AgentKind::GateOn, &specs[0], &path).unwrap();
        assert!(path.exists());
        assert_eq!(dump.version, TRAJECTORY_DUMP_VERSION);
        assert_eq!(dump.steps.len() as u32, dump.outcome.steps);
    }
}
