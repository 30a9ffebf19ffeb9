//! Reward-supervised parallel training.
//!
//! Workers repeatedly snapshot the shared parameters, roll out a bounded
//! segment in training mode (actions sampled straight from the policy),
//! submit actor-critic gradients, and route every effective step's reward
//! into the judge labeling pipeline. Judge batches fire whenever the shared
//! buffer reaches capacity; after the joint phase ends the judge is frozen
//! read-only. Asynchronous workers are the default; a synchronous
//! round-based mode exists for reproducible multi-worker runs, and
//! single-worker runs are bit-deterministic in either mode.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
use crate::config::{CollectMode, RunConfig};
use crate::control::ControlMode;
use crate::env::{generate_room, Episode, GridRoom};
use crate::error::{Error, Result};
use crate::judge::{
    label_from_reward, push_sample, train_on_batch, BatchBuffer, JudgeLabel, JudgeNet,
};
use crate::nn::{sgd_step, Gradients, NetworkParams};
use crate::perception::EmbeddingSet;
use crate::rl::{a2c_update, worker_rollout, A2cCoefficients, PolicyNet, RolloutCarry, TrajStep};
use crate::seeding;

/// Authoritative parameter store. Snapshot reads are consistent copies;
/// gradient application is atomic and bumps a version counter.
pub struct SharedParams {
    inner: Mutex<SharedInner>,
}

struct SharedInner {
    policy: NetworkParams,
    judge: NetworkParams,
    policy_version: u64,
    judge_version: u64,
}

impl SharedParams {
    pub fn new(policy: NetworkParams, judge: NetworkParams) -> Self {
        SharedParams {
            inner: Mutex::new(SharedInner {
                policy,
                judge,
                policy_version: 0,
                judge_version: 0,
            }),
        }
    }

    pub fn snapshot_policy(&self) -> (NetworkParams, u64) {
        let inner = self.inner.lock().unwrap();
        (inner.policy.clone(), inner.policy_version)
    }

    pub fn snapshot_judge(&self) -> (NetworkParams, u64) {
        let inner = self.inner.lock().unwrap();
        (inner.judge.clone(), inner.judge_version)
    }

    pub fn apply_policy_gradients(&self, grads: &Gradients, learning_rate: f64) -> Result<u64> {
        let mut inner = self.inner.lock().unwrap();
        sgd_step(&mut inner.policy, grads, learning_rate)?;
        inner.policy_version += 1;
        Ok(inner.policy_version)
    }

    /// One serialized judge update at the current parameters; returns the
    /// pre-update mean focal loss and the new version.
    pub fn train_judge(
        &self,
        net: &JudgeNet,
        batch: &[crate::judge::JudgeSample],
        gamma: f64,
        learning_rate: f64,
    ) -> Result<(f64, u64)> {
        let mut inner = self.inner.lock().unwrap();
        let loss = train_on_batch(net, &mut inner.judge, batch, gamma, learning_rate)?;
        inner.judge_version += 1;
        Ok((loss, inner.judge_version))
    }

    pub fn into_parts(self) -> (NetworkParams, NetworkParams, u64, u64) {
        let inner = self.inner.into_inner().unwrap();
        (
            inner.policy,
            inner.judge,
            inner.policy_version,
            inner.judge_version,
        )
    }
}

/// One row of the judge training log.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgeBatchRow {
    pub batch: u64,
    pub mean_focal_loss: f64,
    pub positive_fraction: f64,
}

/// One row of the episode training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub episode: u64,
    pub worker: usize,
    pub steps: u32,
    pub ret: f64,
    pub success: bool,
    /// Present when a judge batch fired while this episode was processed.
    pub judge_loss: Option<f64>,
    pub judge_pos_frac: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub episode_rows: Vec<EpisodeRow>,
    pub judge_rows: Vec<JudgeBatchRow>,
    /// Judge labels in collection order (true = positive).
    pub judge_labels: Vec<bool>,
    pub judge_frozen_at_batch: Option<u64>,
    pub checkpoint_path: PathBuf,
    pub train_log_path: PathBuf,
    pub judge_log_path: PathBuf,
}

struct JudgeTracker {
    rows: Vec<JudgeBatchRow>,
    labels: Vec<bool>,
    ema: Option<f64>,
    best_ema: f64,
    batches_since_improvement: usize,
    frozen_at_batch: Option<u64>,
}

struct TrainShared<'a> {
    ctx: &'a TrainContext,
    params: SharedParams,
    buffer: Mutex<BatchBuffer>,
    judge: Mutex<JudgeTracker>,
    episodes_started: AtomicU64,
    episodes_completed: AtomicU64,
    judge_frozen: AtomicBool,
    rows: Mutex<Vec<EpisodeRow>>,
}

/// Immutable per-run context shared by all workers.
struct TrainContext {
    cfg: RunConfig,
    embeddings: EmbeddingSet,
    policy_net: PolicyNet,
    judge_net: JudgeNet,
    coefficients: A2cCoefficients,
}

fn episode_setup(ctx: &TrainContext, episode_index: u64) -> Result<(GridRoom, Episode)> {
    let cfg = &ctx.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix3(
        cfg.seed,
        seeding::TAG_EPISODE,
        episode_index,
    ));
    let preset_name = &cfg.train.presets[rng.gen_range(0..cfg.train.presets.len())];
    let preset = cfg.preset(preset_name)?;
    let room = generate_room(preset, &cfg.catalog, rng.gen())?;

    let mut present: Vec<usize> = room.objects.iter().map(|o| o.type_id).collect();
    present.sort_unstable();
    present.dedup();
    let allowed: Vec<usize> = if cfg.train.targets.is_empty() {
        present.clone()
    } else {
        let filtered: Vec<usize> = present
            .iter()
            .copied()
            .filter(|t| cfg.train.targets.contains(t))
            .collect();
        if filtered.is_empty() {
            present.clone()
        } else {
            filtered
        }
    };
    let target = allowed[rng.gen_range(0..allowed.len())];
    let episode = Episode::start(room.clone(), cfg.episode_config(target), rng.gen())?;
    Ok((room, episode))
}

fn process_judge_steps(
    shared: &TrainShared<'_>,
    room: &GridRoom,
    target_type: usize,
    steps: &[TrajStep],
    last_batch: &mut Option<(f64, f64)>,
) -> Result<()> {
    let ctx = shared.ctx;
    if shared.judge_frozen.load(Ordering::SeqCst) {
        return Ok(());
    }
    for step in steps {
        if !step.effective {
            continue;
        }
        if ctx.cfg.judge.collect == CollectMode::DoneOnly
            && step.action != crate::env::Action::Done
        {
            continue;
        }
        let label = if ctx.cfg.judge.oracle_labels {
            let within = room.instances_of(target_type).any(|inst| {
                step.pose.position.distance_m(inst.position) < ctx.cfg.env.success_distance
            });
            if within {
                JudgeLabel::Positive
            } else {
                JudgeLabel::Negative
            }
        } else {
            label_from_reward(step.reward, ctx.cfg.judge.tau)
        };

        // Freezing can happen between steps; re-check under the buffer lock
        // so a frozen judge never receives another sample or update.
        let batch = {
            let mut buffer = shared.buffer.lock().unwrap();
            if shared.judge_frozen.load(Ordering::SeqCst) {
                return Ok(());
            }
            shared
                .judge
                .lock()
                .unwrap()
                .labels
                .push(label == JudgeLabel::Positive);
            push_sample(&mut buffer, step.state_emb.clone(), label)?
        };
        if let Some(batch) = batch {
            let positive_fraction = crate::judge::positive_fraction(&batch);
            let (loss, _) = shared.params.train_judge(
                &ctx.judge_net,
                &batch,
                ctx.cfg.judge.gamma,
                ctx.cfg.judge.learning_rate,
            )?;
            let mut tracker = shared.judge.lock().unwrap();
            let batch_index = tracker.rows.len() as u64;
            tracker.rows.push(JudgeBatchRow {
                batch: batch_index,
                mean_focal_loss: loss,
                positive_fraction,
            });
            *last_batch = Some((loss, positive_fraction));

            // Optional auto-freeze on stalled EMA loss.
            let beta = 0.8;
            let ema = match tracker.ema {
                Some(prev) => beta * prev + (1.0 - beta) * loss,
                None => loss,
            };
            tracker.ema = Some(ema);
            if ema < tracker.best_ema * 0.99 {
                tracker.best_ema = ema;
                tracker.batches_since_improvement = 0;
            } else {
                tracker.batches_since_improvement += 1;
            }
            if ctx.cfg.train.auto_freeze
                && tracker.batches_since_improvement >= ctx.cfg.train.auto_freeze_window
                && tracker.frozen_at_batch.is_none()
            {
                tracker.frozen_at_batch = Some(batch_index);
                shared.judge_frozen.store(true, Ordering::SeqCst);
            }
        }
    }
    Ok(())
}

fn maybe_freeze_by_schedule(shared: &TrainShared<'_>) {
    let completed = shared.episodes_completed.load(Ordering::SeqCst);
    if completed >= shared.ctx.cfg.train.episodes_joint
        && !shared.judge_frozen.load(Ordering::SeqCst)
    {
        shared.judge_frozen.store(true, Ordering::SeqCst);
        let mut tracker = shared.judge.lock().unwrap();
        if tracker.frozen_at_batch.is_none() {
            tracker.frozen_at_batch = Some(tracker.rows.len() as u64);
        }
    }
}

/// Run one full episode: segment rollouts, gradient submission, judge
/// sample routing, completion bookkeeping.
fn run_episode(
    shared: &TrainShared<'_>,
    worker: usize,
    episode_index: u64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let ctx = shared.ctx;
    let (room, mut episode) = episode_setup(ctx, episode_index)?;
    let target_type = episode.config.target_type;
    let mut carry = RolloutCarry::fresh(ctx.policy_net.cfg().hidden_dim);
    let mut last_batch = None;

    while !episode.terminated {
        let (policy_params, _) = shared.params.snapshot_policy();
        let traj = worker_rollout(
            &mut episode,
            &ctx.embeddings,
            &ctx.policy_net,
            &policy_params,
            None,
            ControlMode::Train,
            &mut carry,
            rng,
            ctx.cfg.net.bptt_window,
        )?;
        let (grads, _) = a2c_update(&traj, &ctx.policy_net, &policy_params, &ctx.coefficients)?;
        shared
            .params
            .apply_policy_gradients(&grads, ctx.cfg.rl.learning_rate)?;
        process_judge_steps(shared, &room, target_type, &traj.steps, &mut last_batch)?;
    }

    shared.episodes_completed.fetch_add(1, Ordering::SeqCst);
    maybe_freeze_by_schedule(shared);
    shared.rows.lock().unwrap().push(EpisodeRow {
        episode: episode_index,
        worker,
        steps: episode.steps_taken,
        ret: episode.total_reward,
        success: episode.success,
        judge_loss: last_batch.map(|(l, _)| l),
        judge_pos_frac: last_batch.map(|(_, f)| f),
    });
    Ok(())
}

fn run_async(shared: &TrainShared<'_>) -> Result<()> {
    let workers = shared.ctx.cfg.train.workers;
    let total = shared.ctx.cfg.train.episodes_total;
    let errors: Mutex<Vec<Error>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for worker in 0..workers {
            let errors = &errors;
            scope.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix3(
                    shared.ctx.cfg.seed,
                    seeding::TAG_WORKER,
                    worker as u64,
                ));
                loop {
                    let ep = shared.episodes_started.fetch_add(1, Ordering::SeqCst);
                    if ep >= total {
                        break;
                    }
                    if let Err(e) = run_episode(shared, worker, ep, &mut rng) {
                        errors.lock().unwrap().push(e);
                        break;
                    }
                }
            });
        }
    });
    match errors.into_inner().unwrap().into_iter().next() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

struct WorkerSlot {
    episode_index: u64,
    room: GridRoom,
    episode: Episode,
    carry: RolloutCarry,
    rng: ChaCha8Rng,
    last_batch: Option<(f64, f64)>,
}

/// Synchronous mode: one segment per active worker per round, computed
/// against a common snapshot, applied in worker order. Deterministic for
/// any worker count.
fn run_sync(shared: &TrainShared<'_>) -> Result<()> {
    let ctx = shared.ctx;
    let workers = ctx.cfg.train.workers;
    let total = ctx.cfg.train.episodes_total;
    let mut slots: Vec<Option<WorkerSlot>> = (0..workers).map(|_| None).collect();

    loop {
        // Claim episodes for idle workers, in worker order.
        for slot in slots.iter_mut() {
            if slot.is_none() {
                let next = shared.episodes_started.load(Ordering::SeqCst);
                if next >= total {
                    continue;
                }
                shared.episodes_started.store(next + 1, Ordering::SeqCst);
                let (room, episode) = episode_setup(ctx, next)?;
                slot.replace(WorkerSlot {
                    episode_index: next,
                    room,
                    episode,
                    carry: RolloutCarry::fresh(ctx.policy_net.cfg().hidden_dim),
                    // Action stream keyed by episode index: the schedule of
                    // worker-to-episode assignment cannot perturb replays.
                    rng: ChaCha8Rng::seed_from_u64(seeding::mix3(
                        ctx.cfg.seed,
                        seeding::TAG_EPISODE ^ seeding::TAG_WORKER,
                        next,
                    )),
                    last_batch: None,
                });
            }
        }
        if slots.iter().all(Option::is_none) {
            return Ok(());
        }

        let (policy_params, _) = shared.params.snapshot_policy();
        // Roll segments in parallel against the common snapshot.
        let mut results: Vec<Option<Result<(crate::rl::Trajectory, Gradients)>>> =
            (0..workers).map(|_| None).collect();
        std::thread::scope(|scope| {
            for (slot, result) in slots.iter_mut().zip(results.iter_mut()) {
                let Some(slot) = slot.as_mut() else { continue };
                let policy_params = &policy_params;
                scope.spawn(move || {
                    let out = worker_rollout(
                        &mut slot.episode,
                        &ctx.embeddings,
                        &ctx.policy_net,
                        policy_params,
                        None,
                        ControlMode::Train,
                        &mut slot.carry,
                        &mut slot.rng,
                        ctx.cfg.net.bptt_window,
                    )
                    .and_then(|traj| {
                        let (grads, _) =
                            a2c_update(&traj, &ctx.policy_net, policy_params, &ctx.coefficients)?;
                        Ok((traj, grads))
                    });
                    *result = Some(out);
                });
            }
        });

        // Apply in worker order.
        for worker in 0..workers {
            let Some(result) = results[worker].take() else { continue };
            let (traj, grads) = result?;
            shared
                .params
                .apply_policy_gradients(&grads, ctx.cfg.rl.learning_rate)?;
            let slot = slots[worker].as_mut().expect("active slot");
            let target_type = slot.episode.config.target_type;
            process_judge_steps(
                shared,
                &slot.room,
                target_type,
                &traj.steps,
                &mut slot.last_batch,
            )?;
            if traj.ended {
                let slot = slots[worker].take().expect("active slot");
                shared.episodes_completed.fetch_add(1, Ordering::SeqCst);
                maybe_freeze_by_schedule(shared);
                shared.rows.lock().unwrap().push(EpisodeRow {
                    episode: slot.episode_index,
                    worker,
                    steps: slot.episode.steps_taken,
                    ret: slot.episode.total_reward,
                    success: slot.episode.success,
                    judge_loss: slot.last_batch.map(|(l, _)| l),
                    judge_pos_frac: slot.last_batch.map(|(_, f)| f),
                });
            }
        }
    }
}

fn write_logs(
    out_dir: &Path,
    rows: &[EpisodeRow],
    judge_rows: &[JudgeBatchRow],
) -> Result<(PathBuf, PathBuf)> {
    let train_log_path = out_dir.join("train_log.csv");
    let mut text = String::from("episode,worker,steps,return,success,judge_loss,judge_pos_frac\n");
    for row in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.episode,
            row.worker,
            row.steps,
            row.ret,
            u8::from(row.success),
            row.judge_loss.map(|v| v.to_string()).unwrap_or_default(),
            row.judge_pos_frac.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    std::fs::write(&train_log_path, text)?;

    let judge_log_path = out_dir.join("judge_log.csv");
    let mut text = String::from("batch,mean_focal_loss,positive_fraction\n");
    for row in judge_rows {
        text.push_str(&format!(
            "{},{},{}\n",
            row.batch, row.mean_focal_loss, row.positive_fraction
        ));
    }
    std::fs::write(&judge_log_path, text)?;
    Ok((train_log_path, judge_log_path))
}

/// Train per the configuration, writing `checkpoint.json`, `train_log.csv`
/// and `judge_log.csv` into `out_dir`.
pub fn train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let embeddings = EmbeddingSet::new(cfg.catalog.len(), cfg.d_emb, cfg.embedding_seed)?;
    let policy_net = PolicyNet::new(cfg.policy_net_config(), cfg.adjacency()?)?;
    let judge_net = JudgeNet::new(cfg.judge_net_config())?;
    let policy_params = policy_net.init_params(seeding::mix(cfg.seed, seeding::TAG_POLICY_INIT))?;
    let judge_params = judge_net.init_params(seeding::mix(cfg.seed, seeding::TAG_JUDGE_INIT))?;

    let ctx = TrainContext {
        cfg: cfg.clone(),
        embeddings,
        policy_net,
        judge_net,
        coefficients: cfg.a2c_coefficients(),
    };
    let shared = TrainShared {
        ctx: &ctx,
        params: SharedParams::new(policy_params, judge_params),
        buffer: Mutex::new(BatchBuffer::new(cfg.judge.buffer_capacity)?),
        judge: Mutex::new(JudgeTracker {
            rows: Vec::new(),
            labels: Vec::new(),
            ema: None,
            best_ema: f64::INFINITY,
            batches_since_improvement: 0,
            frozen_at_batch: None,
        }),
        episodes_started: AtomicU64::new(0),
        episodes_completed: AtomicU64::new(0),
        judge_frozen: AtomicBool::new(cfg.train.episodes_joint == 0),
        rows: Mutex::new(Vec::new()),
    };

    if cfg.train.sync || cfg.train.workers == 1 {
        run_sync(&shared)?;
    } else {
        run_async(&shared)?;
    }

    let mut rows = shared.rows.into_inner().unwrap();
    rows.sort_by_key(|r| r.episode);
    let tracker = shared.judge.into_inner().unwrap();
    let (policy, judge, policy_version, judge_version) = shared.params.into_parts();

    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        meta: CheckpointMeta {
            n_types: cfg.catalog.len(),
            d_emb: cfg.d_emb,
            embedding_seed: cfg.embedding_seed,
            recurrent: cfg.net.recurrent,
        },
        policy,
        judge,
        policy_version,
        judge_version,
    };
    let checkpoint_path = out_dir.join("checkpoint.json");
    save_checkpoint(&checkpoint, &checkpoint_path)?;
    let (train_log_path, judge_log_path) = write_logs(out_dir, &rows, &tracker.rows)?;

    Ok(TrainOutcome {
        checkpoint,
        episode_rows: rows,
        judge_rows: tracker.rows,
        judge_labels: tracker.labels,
        judge_frozen_at_batch: tracker.frozen_at_batch,
        checkpoint_path,
        train_log_path,
        judge_log_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    fn tiny_train_config(extra: &str) -> RunConfig {
        let base = "\
preset.tiny.width = 8
preset.tiny.height = 8
preset.tiny.obstacle_density = 0.1
preset.tiny.types = 0,1
preset.tiny.min_instances = 1
preset.tiny.max_instances = 1
train.presets = tiny
eval.presets = tiny
train.workers = 1
train.episodes_total = 12
train.episodes_joint = 12
env.max_steps = 30
net.gcn_dim = 4
net.trunk_dim = 16
net.hidden_dim = 16
judge.common_dim = 8
judge.buffer_capacity = 16
";
        parse_config_str(&format!("{base}{extra}")).unwrap()
    }

    #[test]
    fn single_worker_training_is_reproducible_and_logs_every_episode() {
        let cfg = tiny_train_config("");
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = train(&cfg, dir_a.path()).unwrap();
        let b = train(&cfg, dir_b.path()).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.episode_rows.len(), 12);
        assert_eq!(a.episode_rows, b.episode_rows);
        assert_eq!(
            std::fs::read(&a.checkpoint_path).unwrap(),
            std::fs::read(&b.checkpoint_path).unwrap()
        );
        assert_eq!(
            std::fs::read(&a.train_log_path).unwrap(),
            std::fs::read(&b.train_log_path).unwrap()
        );
        // Episode indices run 0..N in order after sorting.
        for (i, row) in a.episode_rows.iter().enumerate() {
            assert_eq!(row.episode, i as u64);
        }
    }

    #[test]
    fn zero_joint_episodes_never_trains_the_judge() {
        let cfg = tiny_train_config("train.episodes_joint = 0\n");
        let dir = tempfile::tempdir().unwrap();
        let outcome = train(&cfg, dir.path()).unwrap();
        assert!(outcome.judge_rows.is_empty());
        assert!(outcome.judge_labels.is_empty());
        assert_eq!(outcome.checkpoint.judge_version, 0);

        // Judge parameters identical to a fresh init with the same seed.
        let judge_net = JudgeNet::new(cfg.judge_net_config()).unwrap();
        let fresh = judge_net
            .init_params(seeding::mix(cfg.seed, seeding::TAG_JUDGE_INIT))
            .unwrap();
        assert_eq!(outcome.checkpoint.judge, fresh);
    }

    #[test]
    fn judge_batches_are_full_and_phase_freeze_holds() {
        let cfg = tiny_train_config("train.episodes_joint = 6\ntrain.episodes_total = 14\n");
        let dir = tempfile::tempdir().unwrap();
        let outcome = train(&cfg, dir.path()).unwrap();
        // Labels are pushed per collected sample; batches of exactly 16.
        assert_eq!(
            outcome.judge_rows.len() as u64,
            outcome.checkpoint.judge_version
        );
        if let Some(frozen_at) = outcome.judge_frozen_at_batch {
            assert_eq!(outcome.judge_rows.len() as u64, frozen_at);
        }
    }

    #[test]
    fn sync_multi_worker_is_deterministic() {
        let cfg = tiny_train_config("train.workers = 3\ntrain.sync = true\n");
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = train(&cfg, dir_a.path()).unwrap();
        let b = train(&cfg, dir_b.path()).unwrap();
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.episode_rows, b.episode_rows);
    }

    #[test]
    fn async_multi_worker_completes_all_episodes() {
        let cfg = tiny_train_config("train.workers = 3\n");
        let dir = tempfile::tempdir().unwrap();
        let outcome = train(&cfg, dir.path()).unwrap();
        assert_eq!(outcome.episode_rows.len(), 12);
        let episodes: Vec<u64> = outcome.episode_rows.iter().map(|r| r.episode).collect();
        assert_eq!(episodes, (0..12).collect::<Vec<u64>>());
    }
}
