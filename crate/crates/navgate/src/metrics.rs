//! Evaluation metrics: success rate, success weighted by path length, the
//! long-episode split, optimal episode lengths, and EMA curve smoothing.
//!
//! Episode lengths are measured in actions including the final Done, for
//! both the optimal and the actual path, which keeps SPL ≤ SR exact.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::env::{
    heading_delta, Action, AgentPose, Cell, EpisodeConfig, GridRoom, HEADING_STEP_DEG,
    PITCH_LIMIT_DEG, PITCH_STEP_DEG,
};
use crate::error::{Error, Result};
use crate::perception::detect;

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub success: bool,
    /// Actions taken, including the final Done when present.
    pub actions_taken: u32,
    /// Minimal action count to a successful Done; `None` when unreachable.
    pub optimal_actions: Option<u32>,
    pub room_id: String,
    pub target_type: usize,
    pub seed: u64,
}

/// Metrics over one filtered subset of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBucket {
    pub filter: String,
    pub n: usize,
    pub sr: f64,
    pub spl: f64,
    /// Records without an optimal length, excluded from the SPL numerator.
    pub unreachable_excluded: usize,
}

/// Overall metrics plus the long-episode split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: MetricsBucket,
    pub long_episodes: MetricsBucket,
    pub length_threshold: u32,
}

impl MetricsReport {
    /// CSV rows `(filter, n, sr, spl)` with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("filter,n,sr,spl\n");
        for bucket in [&self.overall, &self.long_episodes] {
            out.push_str(&format!(
                "{},{},{},{}\n",
                bucket.filter, bucket.n, bucket.sr, bucket.spl
            ));
        }
        out
    }
}

/// Fraction of successful episodes.
pub fn success_rate(records: &[EpisodeRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("episode records".to_string()));
    }
    Ok(records.iter().filter(|r| r.success).count() as f64 / records.len() as f64)
}

/// Success weighted by path length: `(1/N) * sum S_n * O_n / max(L_n, O_n)`.
///
/// Records with an unreachable target contribute nothing to the numerator
/// (they are necessarily failures) and are reported via the second value.
pub fn spl(records: &[EpisodeRecord]) -> Result<(f64, usize)> {
    if records.is_empty() {
        return Err(Error::Empty("episode records".to_string()));
    }
    let mut total = 0.0;
    let mut excluded = 0;
    for record in records {
        match record.optimal_actions {
            Some(optimal) => {
                if record.success {
                    let o = f64::from(optimal);
                    let l = f64::from(record.actions_taken.max(optimal));
                    total += o / l;
                }
            }
            None => excluded += 1,
        }
    }
    Ok((total / records.len() as f64, excluded))
}

fn bucket(records: &[EpisodeRecord], filter: &str) -> Result<MetricsBucket> {
    let sr = success_rate(records)?;
    let (spl_value, excluded) = spl(records)?;
    Ok(MetricsBucket {
        filter: filter.to_string(),
        n: records.len(),
        sr,
        spl: spl_value,
        unreachable_excluded: excluded,
    })
}

/// Overall metrics plus the bucket of episodes with optimal length at or
/// above `length_threshold`. An empty long bucket is reported with n = 0.
pub fn split_report(records: &[EpisodeRecord], length_threshold: u32) -> Result<MetricsReport> {
    let overall = bucket(records, "all")?;
    let long: Vec<EpisodeRecord> = records
        .iter()
        .filter(|r| r.optimal_actions.map(|o| o >= length_threshold).unwrap_or(false))
        .cloned()
        .collect();
    let filter_name = format!("L>={length_threshold}");
    let long_episodes = if long.is_empty() {
        MetricsBucket {
            filter: filter_name,
            n: 0,
            sr: 0.0,
            spl: 0.0,
            unreachable_excluded: 0,
        }
    } else {
        bucket(&long, &filter_name)?
    };
    Ok(MetricsReport {
        overall,
        long_episodes,
        length_threshold,
    })
}

/// Exponential moving average: `y_0 = x_0`, `y_t = beta y_{t-1} + (1-beta) x_t`.
pub fn ema_smooth(series: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Domain(format!("beta must lie in [0, 1), got {beta}")));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut current = match series.first() {
        Some(first) => *first,
        None => return Ok(Vec::new()),
    };
    out.push(current);
    for x in &series[1..] {
        current = beta * current + (1.0 - beta) * x;
        out.push(current);
    }
    Ok(out)
}

const HEADINGS: i32 = 360 / HEADING_STEP_DEG;
const PITCHES: i32 = 2 * (PITCH_LIMIT_DEG / PITCH_STEP_DEG) + 1;

fn pose_index(room: &GridRoom, pose: &AgentPose) -> usize {
    let cell = (pose.position.y * room.width + pose.position.x) as usize;
    let heading = (pose.heading / HEADING_STEP_DEG) as usize;
    let pitch = ((pose.pitch + PITCH_LIMIT_DEG) / PITCH_STEP_DEG) as usize;
    (cell * HEADINGS as usize + heading) * PITCHES as usize + pitch
}

/// Apply one motion action to a pose (no environment bookkeeping).
fn apply_motion(room: &GridRoom, pose: &AgentPose, action: Action) -> AgentPose {
    let mut next = *pose;
    match action {
        Action::MoveAhead => {
            let (dx, dy) = heading_delta(pose.heading);
            let dest = Cell::new(pose.position.x + dx, pose.position.y + dy);
            if room.is_free(dest) {
                next.position = dest;
            }
        }
        Action::RotateLeft => next.heading = (pose.heading - HEADING_STEP_DEG).rem_euclid(360),
        Action::RotateRight => next.heading = (pose.heading + HEADING_STEP_DEG).rem_euclid(360),
        Action::LookUp => next.pitch = (pose.pitch + PITCH_STEP_DEG).min(PITCH_LIMIT_DEG),
        Action::LookDown => next.pitch = (pose.pitch - PITCH_STEP_DEG).max(-PITCH_LIMIT_DEG),
        Action::Done => {}
    }
    next
}

fn success_now(room: &GridRoom, pose: &AgentPose, target_type: usize, config: &EpisodeConfig) -> bool {
    let detections = detect(room, pose);
    room.instances_of(target_type)
        .any(|inst| crate::env::success_check(pose, inst, &detections, config))
}

/// Minimal number of actions (including the final Done) from `start_pose`
/// to a successful termination, by breadth-first search over the pose graph
/// (position x heading x pitch) with the five motion actions as edges.
pub fn optimal_episode_length(
    room: &GridRoom,
    start_pose: &AgentPose,
    target_type: usize,
    config: &EpisodeConfig,
) -> Option<u32> {
    let goal_config = EpisodeConfig {
        target_type,
        ..config.clone()
    };
    if success_now(room, start_pose, target_type, &goal_config) {
        return Some(1);
    }
    let state_count = (room.width * room.height * HEADINGS * PITCHES) as usize;
    let mut visited = vec![false; state_count];
    visited[pose_index(room, start_pose)] = true;
    let mut queue = VecDeque::new();
    queue.push_back((*start_pose, 0u32));
    const MOTIONS: [Action; 5] = [
        Action::MoveAhead,
        Action::RotateLeft,
        Action::RotateRight,
        Action::LookUp,
        Action::LookDown,
    ];
    while let Some((pose, depth)) = queue.pop_front() {
        for action in MOTIONS {
            let next = apply_motion(room, &pose, action);
            let idx = pose_index(room, &next);
            if visited[idx] {
                continue;
            }
            visited[idx] = true;
            if success_now(room, &next, target_type, &goal_config) {
                return Some(depth + 2); // motions so far + this one + Done
            }
            queue.push_back((next, depth + 1));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_room, Catalog, HeightBand};
    use crate::testutil::{empty_room_with, mug_at, object_at};

    fn record(success: bool, optimal: u32, taken: u32) -> EpisodeRecord {
        EpisodeRecord {
            success,
            actions_taken: taken,
            optimal_actions: Some(optimal),
            room_id: "r".to_string(),
            target_type: 0,
            seed: 0,
        }
    }

    #[test]
    fn success_rate_cases() {
        assert_eq!(
            success_rate(&[record(true, 1, 1), record(true, 1, 2)]).unwrap(),
            1.0
        );
        assert_eq!(
            success_rate(&[record(false, 1, 1), record(false, 1, 2)]).unwrap(),
            0.0
        );
        let mixed = vec![
            record(true, 1, 1),
            record(true, 2, 2),
            record(true, 3, 3),
            record(false, 1, 5),
        ];
        assert!((success_rate(&mixed).unwrap() - 0.75).abs() < 1e-12);
        assert!(success_rate(&[]).is_err());
    }

    #[test]
    fn spl_cases() {
        // Every success optimal: SPL = SR.
        let records = vec![record(true, 4, 4), record(false, 3, 9), record(true, 2, 2)];
        let (value, _) = spl(&records).unwrap();
        assert!((value - success_rate(&records).unwrap()).abs() < 1e-12);

        // Single success taking twice the optimum.
        let records = vec![record(true, 3, 6)];
        assert!((spl(&records).unwrap().0 - 0.5).abs() < 1e-12);

        // Frozen hand evaluation: {(S=1,O=4,L=5), (S=0,O=3,L=7)} -> 0.4.
        let records = vec![record(true, 4, 5), record(false, 3, 7)];
        assert!((spl(&records).unwrap().0 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn spl_never_exceeds_sr() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let records: Vec<EpisodeRecord> = (0..20)
                .map(|_| {
                    let optimal = rng.gen_range(1..12);
                    let taken = rng.gen_range(1..30);
                    let mut r = record(rng.gen_bool(0.5), optimal, taken);
                    if rng.gen_bool(0.05) {
                        r.optimal_actions = None;
                        r.success = false;
                    }
                    r
                })
                .collect();
            let sr = success_rate(&records).unwrap();
            let (spl_value, _) = spl(&records).unwrap();
            assert!(spl_value <= sr + 1e-12);
        }
    }

    #[test]
    fn unreachable_records_are_excluded_and_counted() {
        let mut unreachable = record(false, 1, 7);
        unreachable.optimal_actions = None;
        let records = vec![record(true, 2, 2), unreachable];
        let (value, excluded) = spl(&records).unwrap();
        assert_eq!(excluded, 1);
        assert!((value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn split_report_filters_by_optimal_length() {
        let records = vec![
            record(true, 3, 3),
            record(true, 9, 12),
            record(false, 9, 100),
            record(true, 3, 4),
        ];
        let report = split_report(&records, 5).unwrap();
        assert_eq!(report.overall.n, 4);
        assert_eq!(report.long_episodes.n, 2);
        assert!((report.long_episodes.sr - 0.5).abs() < 1e-12);

        // All short: the long bucket is empty and flagged by n = 0.
        let report = split_report(&[record(true, 3, 3)], 5).unwrap();
        assert_eq!(report.long_episodes.n, 0);

        // Threshold 1 makes both buckets identical.
        let report = split_report(&records, 1).unwrap();
        assert_eq!(report.overall, {
            let mut b = report.long_episodes.clone();
            b.filter = "all".to_string();
            b
        });
    }

    #[test]
    fn ema_cases() {
        let constant = vec![0.7; 10];
        assert_eq!(ema_smooth(&constant, 0.8).unwrap(), constant);

        let series = vec![0.1, 0.9, 0.4];
        assert_eq!(ema_smooth(&series, 0.0).unwrap(), series);

        let out = ema_smooth(&[0.0, 1.0], 0.8).unwrap();
        assert!((out[0] - 0.0).abs() < 1e-15);
        assert!((out[1] - 0.2).abs() < 1e-15);

        assert!(ema_smooth(&[1.0], 1.0).is_err());
        assert!(ema_smooth(&[], 0.8).unwrap().is_empty());
    }

    #[test]
    fn optimal_length_is_one_when_starting_in_success() {
        let room = empty_room_with(vec![mug_at(5, 7)]);
        let pose = AgentPose {
            position: Cell::new(5, 5),
            heading: 0,
            pitch: 0,
        };
        let config = EpisodeConfig::default();
        assert_eq!(optimal_episode_length(&room, &pose, 0, &config), Some(1));
    }

    #[test]
    fn walled_off_target_is_unreachable() {
        let mut room = empty_room_with(vec![mug_at(8, 8)]);
        // Box the target in completely.
        for (x, y) in [(7, 7), (8, 7), (9, 7), (7, 8), (9, 8), (7, 9), (8, 9), (9, 9)] {
            room.set_blocked(Cell::new(x, y), true);
        }
        let pose = AgentPose {
            position: Cell::new(1, 1),
            heading: 0,
            pitch: 0,
        };
        let config = EpisodeConfig::default();
        assert_eq!(optimal_episode_length(&room, &pose, 0, &config), None);
    }

    #[test]
    fn high_target_requires_the_look_up_action() {
        // A high-band object next to the agent: the shortest plan has to
        // raise the pitch before Done.
        let room = empty_room_with(vec![object_at(7, 5, 7, 0.85, HeightBand::High)]);
        let pose = AgentPose {
            position: Cell::new(5, 5),
            heading: 0,
            pitch: 0,
        };
        let config = EpisodeConfig::default();
        // LookUp + Done.
        assert_eq!(optimal_episode_length(&room, &pose, 7, &config), Some(2));
    }

    /// Exhaustive enumeration oracle: try every action sequence up to
    /// `max_depth` through the real environment and return the shortest
    /// successful one. Exponential; only for tiny rooms.
    pub(crate) fn brute_force_optimal(
        room: &GridRoom,
        start: &AgentPose,
        target_type: usize,
        config: &EpisodeConfig,
        max_depth: u32,
    ) -> Option<u32> {
        fn recurse(
            room: &GridRoom,
            pose: &AgentPose,
            config: &EpisodeConfig,
            steps_taken: u32,
            budget: u32,
            best: &mut Option<u32>,
        ) {
            if budget == 0 {
                return;
            }
            if let Some(b) = *best {
                if steps_taken + 1 >= b {
                    return;
                }
            }
            for action in Action::ALL {
                let detections = detect(room, pose);
                let (next, outcome) =
                    crate::env::step(room, pose, config, steps_taken, action, &detections)
                        .expect("valid step");
                if outcome.terminated {
                    if outcome.success {
                        let len = outcome.steps_taken;
                        if best.map(|b| len < b).unwrap_or(true) {
                            *best = Some(len);
                        }
                    }
                    continue;
                }
                recurse(room, &next, config, outcome.steps_taken, budget - 1, best);
            }
        }
        let mut best = None;
        let config = EpisodeConfig {
            target_type,
            // Keep max_steps clear of the search horizon.
            max_steps: max_depth + 2,
            ..config.clone()
        };
        recurse(room, start, &config, 0, max_depth, &mut best);
        best
    }

    #[test]
    fn bfs_matches_brute_force_on_random_tiny_rooms() {
        let catalog = Catalog::default_desk();
        let preset = crate::env::RoomPreset {
            name: "tiny".to_string(),
            width: 6,
            height: 6,
            obstacle_density: 0.15,
            object_types: vec![0, 4],
            min_instances: 1,
            max_instances: 1,
        };
        let config = EpisodeConfig::default();
        for seed in 0..12u64 {
            let room = generate_room(&preset, &catalog, seed).unwrap();
            let pose = crate::env::reset(
                &room,
                &EpisodeConfig {
                    target_type: 0,
                    ..config.clone()
                },
                seed,
            )
            .unwrap();
            for target in [0usize, 4] {
                let bfs = optimal_episode_length(&room, &pose, target, &config);
                let brute = brute_force_optimal(&room, &pose, target, &config, 8);
                match bfs {
                    Some(len) if len <= 8 => {
                        assert_eq!(brute, Some(len), "seed {seed} target {target}")
                    }
                    _ => assert_eq!(brute, None, "seed {seed} target {target}"),
                }
            }
        }
    }
}
