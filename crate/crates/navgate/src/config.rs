//! Run configuration: a flat `key = value` text format with dotted section
//! prefixes, validated against a fixed schema with defaults for every key.
//! Unknown keys are rejected by name. The resolved configuration (defaults
//! applied) serializes back to the same format, and every run writes that
//! echo beside its outputs.

use std::collections::BTreeMap;
use std::path::Path;

use crate::env::{Catalog, EpisodeConfig, HeightBand, ObjectType, RoomPreset};
use crate::error::{Error, Result};
use crate::judge::JudgeNetConfig;
use crate::nn::{normalize_adjacency, Tensor};
use crate::rl::{A2cCoefficients, PolicyNetConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjacencyKind {
    /// 1 for type pairs that can co-occur in some preset, plus self-loops.
    CoOccurrence,
    Full,
    Identity,
}

impl AdjacencyKind {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "co_occurrence" => Ok(AdjacencyKind::CoOccurrence),
            "full" => Ok(AdjacencyKind::Full),
            "identity" => Ok(AdjacencyKind::Identity),
            other => Err(Error::Config(format!("unknown adjacency kind `{other}`"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            AdjacencyKind::CoOccurrence => "co_occurrence",
            AdjacencyKind::Full => "full",
            AdjacencyKind::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectMode {
    /// A judge sample at every effective step.
    AllEffective,
    /// Only at effective steps where Done was the sampled action.
    DoneOnly,
}

impl CollectMode {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "all_effective" => Ok(CollectMode::AllEffective),
            "done_only" => Ok(CollectMode::DoneOnly),
            other => Err(Error::Config(format!("unknown collect mode `{other}`"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            CollectMode::AllEffective => "all_effective",
            CollectMode::DoneOnly => "done_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSection {
    pub max_steps: u32,
    pub step_penalty: f64,
    pub success_reward: f64,
    pub success_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSection {
    pub gcn_dim: usize,
    pub gcn_layers: usize,
    pub trunk_dim: usize,
    pub hidden_dim: usize,
    pub recurrent: bool,
    pub bptt_window: u32,
    pub leaky_slope: f64,
    pub adjacency: AdjacencyKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlSection {
    pub gamma: f64,
    pub entropy_weight: f64,
    pub value_weight: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeSection {
    pub common_dim: usize,
    pub expansion: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub tau: f64,
    pub buffer_capacity: usize,
    pub collect: CollectMode,
    /// Ablation: label from the success condition instead of the reward.
    pub oracle_labels: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub workers: usize,
    pub episodes_joint: u64,
    pub episodes_total: u64,
    pub presets: Vec<String>,
    /// Allowed target types; empty means every type present in a room.
    pub targets: Vec<usize>,
    pub sync: bool,
    pub auto_freeze: bool,
    pub auto_freeze_window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub presets: Vec<String>,
    pub rooms_per_preset: u32,
    pub episodes_per_room: u32,
    pub targets: Vec<usize>,
    pub length_threshold: u32,
}

/// The full resolved configuration of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub d_emb: usize,
    pub embedding_seed: u64,
    pub env: EnvSection,
    pub net: NetSection,
    pub rl: RlSection,
    pub judge: JudgeSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub catalog: Catalog,
    pub presets: Vec<RoomPreset>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let catalog = Catalog::default_desk();
        let all_types: Vec<usize> = (0..catalog.len()).collect();
        let presets = vec![
            RoomPreset {
                name: "room-16".to_string(),
                width: 16,
                height: 16,
                obstacle_density: 0.10,
                object_types: all_types.clone(),
                min_instances: 1,
                max_instances: 2,
            },
            RoomPreset {
                name: "room-20".to_string(),
                width: 20,
                height: 20,
                obstacle_density: 0.12,
                object_types: all_types.clone(),
                min_instances: 1,
                max_instances: 2,
            },
            RoomPreset {
                name: "room-24".to_string(),
                width: 24,
                height: 24,
                obstacle_density: 0.12,
                object_types: all_types,
                min_instances: 1,
                max_instances: 3,
            },
        ];
        RunConfig {
            seed: 0,
            d_emb: 16,
            embedding_seed: 42,
            env: EnvSection {
                max_steps: 100,
                step_penalty: -0.01,
                success_reward: 5.0,
                success_distance: 1.5,
            },
            net: NetSection {
                gcn_dim: 8,
                gcn_layers: 1,
                trunk_dim: 64,
                hidden_dim: 64,
                recurrent: true,
                bptt_window: 20,
                leaky_slope: 0.01,
                adjacency: AdjacencyKind::CoOccurrence,
            },
            rl: RlSection {
                gamma: 0.99,
                entropy_weight: 0.01,
                value_weight: 0.5,
                learning_rate: 1e-3,
            },
            judge: JudgeSection {
                common_dim: 64,
                expansion: 2,
                learning_rate: 1e-3,
                gamma: 0.7,
                tau: 4.0,
                buffer_capacity: 64,
                collect: CollectMode::AllEffective,
                oracle_labels: false,
            },
            train: TrainSection {
                workers: 4,
                episodes_joint: 20_000,
                episodes_total: 50_000,
                presets: vec!["room-16".to_string(), "room-20".to_string()],
                targets: Vec::new(),
                sync: false,
                auto_freeze: false,
                auto_freeze_window: 100,
            },
            eval: EvalSection {
                presets: vec![
                    "room-16".to_string(),
                    "room-20".to_string(),
                    "room-24".to_string(),
                ],
                rooms_per_preset: 10,
                episodes_per_room: 5,
                targets: Vec::new(),
                length_threshold: 5,
            },
            catalog,
            presets,
        }
    }
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: expected an unsigned integer, got `{value}`")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: expected an unsigned integer, got `{value}`")))
}

fn parse_u32(key: &str, value: &str) -> Result<u32> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: expected an unsigned integer, got `{value}`")))
}

fn parse_i32(key: &str, value: &str) -> Result<i32> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: expected an integer, got `{value}`")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let v: f64 = value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: expected a number, got `{value}`")))?;
    if !v.is_finite() {
        return Err(Error::Config(format!("`{key}`: value must be finite")));
    }
    Ok(v)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "`{key}`: expected `true` or `false`, got `{value}`"
        ))),
    }
}

fn parse_name_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_id_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_usize(key, s))
        .collect()
}

#[derive(Default)]
struct CatalogDraft {
    name: BTreeMap<usize, String>,
    size: BTreeMap<usize, f64>,
    band: BTreeMap<usize, HeightBand>,
}

#[derive(Default, Clone)]
struct PresetDraft {
    width: Option<i32>,
    height: Option<i32>,
    obstacle_density: Option<f64>,
    types: Option<Vec<usize>>,
    min_instances: Option<u32>,
    max_instances: Option<u32>,
}

/// Parse and validate a configuration file; missing keys take defaults.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut catalog_draft = CatalogDraft::default();
    let mut preset_drafts: BTreeMap<String, PresetDraft> = BTreeMap::new();
    let mut preset_order: Vec<String> = Vec::new();

    for (line_no, raw_line) in text.lines().enumerate() {
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`", line_no + 1))
        })?;
        let key = key.trim();
        let value = value.trim();

        match key {
            "seed" => cfg.seed = parse_u64(key, value)?,
            "d_emb" => cfg.d_emb = parse_usize(key, value)?,
            "embedding_seed" => cfg.embedding_seed = parse_u64(key, value)?,

            "env.max_steps" => cfg.env.max_steps = parse_u32(key, value)?,
            "env.step_penalty" => cfg.env.step_penalty = parse_f64(key, value)?,
            "env.success_reward" => cfg.env.success_reward = parse_f64(key, value)?,
            "env.success_distance" => cfg.env.success_distance = parse_f64(key, value)?,

            "net.gcn_dim" => cfg.net.gcn_dim = parse_usize(key, value)?,
            "net.gcn_layers" => cfg.net.gcn_layers = parse_usize(key, value)?,
            "net.trunk_dim" => cfg.net.trunk_dim = parse_usize(key, value)?,
            "net.hidden_dim" => cfg.net.hidden_dim = parse_usize(key, value)?,
            "net.recurrent" => cfg.net.recurrent = parse_bool(key, value)?,
            "net.bptt_window" => cfg.net.bptt_window = parse_u32(key, value)?,
            "net.leaky_slope" => cfg.net.leaky_slope = parse_f64(key, value)?,
            "net.adjacency" => cfg.net.adjacency = AdjacencyKind::parse(value)?,

            "rl.gamma" => cfg.rl.gamma = parse_f64(key, value)?,
            "rl.entropy_weight" => cfg.rl.entropy_weight = parse_f64(key, value)?,
            "rl.value_weight" => cfg.rl.value_weight = parse_f64(key, value)?,
            "rl.learning_rate" => cfg.rl.learning_rate = parse_f64(key, value)?,

            "judge.common_dim" => cfg.judge.common_dim = parse_usize(key, value)?,
            "judge.expansion" => cfg.judge.expansion = parse_usize(key, value)?,
            "judge.learning_rate" => cfg.judge.learning_rate = parse_f64(key, value)?,
            "judge.gamma" => cfg.judge.gamma = parse_f64(key, value)?,
            "judge.tau" => cfg.judge.tau = parse_f64(key, value)?,
            "judge.buffer_capacity" => cfg.judge.buffer_capacity = parse_usize(key, value)?,
            "judge.collect" => cfg.judge.collect = CollectMode::parse(value)?,
            "judge.oracle_labels" => cfg.judge.oracle_labels = parse_bool(key, value)?,

            "train.workers" => cfg.train.workers = parse_usize(key, value)?,
            "train.episodes_joint" => cfg.train.episodes_joint = parse_u64(key, value)?,
            "train.episodes_total" => cfg.train.episodes_total = parse_u64(key, value)?,
            "train.presets" => cfg.train.presets = parse_name_list(value),
            "train.targets" => cfg.train.targets = parse_id_list(key, value)?,
            "train.sync" => cfg.train.sync = parse_bool(key, value)?,
            "train.auto_freeze" => cfg.train.auto_freeze = parse_bool(key, value)?,
            "train.auto_freeze_window" => {
                cfg.train.auto_freeze_window = parse_usize(key, value)?
            }

            "eval.presets" => cfg.eval.presets = parse_name_list(value),
            "eval.rooms_per_preset" => cfg.eval.rooms_per_preset = parse_u32(key, value)?,
            "eval.episodes_per_room" => cfg.eval.episodes_per_room = parse_u32(key, value)?,
            "eval.targets" => cfg.eval.targets = parse_id_list(key, value)?,
            "eval.length_threshold" => cfg.eval.length_threshold = parse_u32(key, value)?,

            _ if key.starts_with("catalog.") => {
                let rest = &key["catalog.".len()..];
                let (index, field) = rest.split_once('.').ok_or_else(|| {
                    Error::UnknownKey(key.to_string())
                })?;
                let index = parse_usize(key, index)?;
                match field {
                    "name" => {
                        catalog_draft.name.insert(index, value.to_string());
                    }
                    "size" => {
                        catalog_draft.size.insert(index, parse_f64(key, value)?);
                    }
                    "band" => {
                        catalog_draft.band.insert(index, HeightBand::parse(value)?);
                    }
                    _ => return Err(Error::UnknownKey(key.to_string())),
                }
            }

            _ if key.starts_with("preset.") => {
                let rest = &key["preset.".len()..];
                let (name, field) = rest.rsplit_once('.').ok_or_else(|| {
                    Error::UnknownKey(key.to_string())
                })?;
                if name.is_empty() {
                    return Err(Error::UnknownKey(key.to_string()));
                }
                if !preset_drafts.contains_key(name) {
                    preset_order.push(name.to_string());
                }
                let draft = preset_drafts.entry(name.to_string()).or_default();
                match field {
                    "width" => draft.width = Some(parse_i32(key, value)?),
                    "height" => draft.height = Some(parse_i32(key, value)?),
                    "obstacle_density" => {
                        draft.obstacle_density = Some(parse_f64(key, value)?)
                    }
                    "types" => draft.types = Some(parse_id_list(key, value)?),
                    "min_instances" => draft.min_instances = Some(parse_u32(key, value)?),
                    "max_instances" => draft.max_instances = Some(parse_u32(key, value)?),
                    _ => return Err(Error::UnknownKey(key.to_string())),
                }
            }

            _ => return Err(Error::UnknownKey(key.to_string())),
        }
    }

    // A configuration that touches any catalog key must define the whole
    // catalog; the default is replaced, not patched.
    if !catalog_draft.name.is_empty()
        || !catalog_draft.size.is_empty()
        || !catalog_draft.band.is_empty()
    {
        let count = catalog_draft
            .name
            .keys()
            .chain(catalog_draft.size.keys())
            .chain(catalog_draft.band.keys())
            .max()
            .map(|m| m + 1)
            .unwrap_or(0);
        let mut types = Vec::with_capacity(count);
        for i in 0..count {
            let name = catalog_draft
                .name
                .get(&i)
                .ok_or_else(|| Error::Config(format!("catalog.{i}.name missing")))?;
            let size = *catalog_draft
                .size
                .get(&i)
                .ok_or_else(|| Error::Config(format!("catalog.{i}.size missing")))?;
            let band = *catalog_draft
                .band
                .get(&i)
                .ok_or_else(|| Error::Config(format!("catalog.{i}.band missing")))?;
            types.push(ObjectType {
                type_id: i,
                name: name.clone(),
                physical_size: size,
                height_band: band,
            });
        }
        cfg.catalog = Catalog::new(types)?;
        // Default presets refer to the default catalog; rebuild their pools.
        let all: Vec<usize> = (0..cfg.catalog.len()).collect();
        for preset in &mut cfg.presets {
            preset.object_types = all.clone();
        }
    }

    // Presets defined in the file are added, or replace defaults by name.
    for name in preset_order {
        let draft = preset_drafts.get(&name).cloned().unwrap_or_default();
        let existing = cfg.presets.iter().find(|p| p.name == name).cloned();
        let base = existing.unwrap_or(RoomPreset {
            name: name.clone(),
            width: 0,
            height: 0,
            obstacle_density: 0.1,
            object_types: (0..cfg.catalog.len()).collect(),
            min_instances: 1,
            max_instances: 2,
        });
        let preset = RoomPreset {
            name: name.clone(),
            width: draft.width.unwrap_or(base.width),
            height: draft.height.unwrap_or(base.height),
            obstacle_density: draft.obstacle_density.unwrap_or(base.obstacle_density),
            object_types: draft.types.unwrap_or(base.object_types),
            min_instances: draft.min_instances.unwrap_or(base.min_instances),
            max_instances: draft.max_instances.unwrap_or(base.max_instances),
        };
        if preset.width < 4 || preset.height < 4 {
            return Err(Error::Config(format!(
                "preset.{name}: width and height (>= 4) are required"
            )));
        }
        cfg.presets.retain(|p| p.name != name);
        cfg.presets.push(preset);
    }

    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<()> {
    if cfg.d_emb < 2 {
        return Err(Error::Config("`d_emb`: must be at least 2".to_string()));
    }
    if cfg.env.max_steps == 0 {
        return Err(Error::Config("`env.max_steps`: must be positive".to_string()));
    }
    if cfg.env.success_distance <= 0.0 {
        return Err(Error::Config(
            "`env.success_distance`: must be positive".to_string(),
        ));
    }
    if !(cfg.net.gcn_layers == 1 || cfg.net.gcn_layers == 2) {
        return Err(Error::Config("`net.gcn_layers`: must be 1 or 2".to_string()));
    }
    if cfg.net.gcn_dim == 0 || cfg.net.trunk_dim == 0 || cfg.net.hidden_dim == 0 {
        return Err(Error::Config("network dimensions must be positive".to_string()));
    }
    if cfg.net.bptt_window == 0 {
        return Err(Error::Config("`net.bptt_window`: must be positive".to_string()));
    }
    if !(cfg.net.leaky_slope > 0.0 && cfg.net.leaky_slope < 1.0) {
        return Err(Error::Config(
            "`net.leaky_slope`: must lie in (0, 1)".to_string(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.rl.gamma) {
        return Err(Error::Config("`rl.gamma`: must lie in [0, 1]".to_string()));
    }
    if cfg.judge.gamma < 0.0 {
        return Err(Error::Config("`judge.gamma`: must be >= 0".to_string()));
    }
    if cfg.judge.buffer_capacity == 0 {
        return Err(Error::Config(
            "`judge.buffer_capacity`: must be positive".to_string(),
        ));
    }
    if cfg.judge.common_dim == 0 || cfg.judge.expansion == 0 {
        return Err(Error::Config("judge dimensions must be positive".to_string()));
    }
    if cfg.train.workers == 0 {
        return Err(Error::Config("`train.workers`: must be at least 1".to_string()));
    }
    if cfg.train.episodes_joint > cfg.train.episodes_total {
        return Err(Error::Config(
            "`train.episodes_joint`: must not exceed train.episodes_total".to_string(),
        ));
    }
    for list in [&cfg.train.targets, &cfg.eval.targets] {
        for t in list {
            cfg.catalog.get(*t)?;
        }
    }
    for (key, names) in [("train.presets", &cfg.train.presets), ("eval.presets", &cfg.eval.presets)] {
        if names.is_empty() {
            return Err(Error::Config(format!("`{key}`: must name at least one preset")));
        }
        for name in names {
            cfg.preset(name)?;
        }
    }
    if cfg.eval.rooms_per_preset == 0 || cfg.eval.episodes_per_room == 0 {
        return Err(Error::Config(
            "eval room and episode counts must be positive".to_string(),
        ));
    }
    Ok(())
}

impl RunConfig {
    pub fn preset(&self, name: &str) -> Result<&RoomPreset> {
        self.presets
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))
    }

    pub fn episode_config(&self, target_type: usize) -> EpisodeConfig {
        EpisodeConfig {
            max_steps: self.env.max_steps,
            step_penalty: self.env.step_penalty,
            success_reward: self.env.success_reward,
            success_distance: self.env.success_distance,
            target_type,
        }
    }

    pub fn policy_net_config(&self) -> PolicyNetConfig {
        PolicyNetConfig {
            n_types: self.catalog.len(),
            d_emb: self.d_emb,
            gcn_dim: self.net.gcn_dim,
            gcn_layers: self.net.gcn_layers,
            trunk_dim: self.net.trunk_dim,
            hidden_dim: self.net.hidden_dim,
            recurrent: self.net.recurrent,
            leaky_slope: self.net.leaky_slope,
        }
    }

    pub fn judge_net_config(&self) -> JudgeNetConfig {
        JudgeNetConfig {
            d_emb: self.d_emb,
            common_dim: self.judge.common_dim,
            expansion: self.judge.expansion,
            leaky_slope: self.net.leaky_slope,
        }
    }

    pub fn a2c_coefficients(&self) -> A2cCoefficients {
        A2cCoefficients {
            gamma: self.rl.gamma,
            entropy_weight: self.rl.entropy_weight,
            value_weight: self.rl.value_weight,
        }
    }

    /// Row-normalized type adjacency per the configured kind, over the
    /// presets actually used for training.
    pub fn adjacency(&self) -> Result<Tensor> {
        let n = self.catalog.len();
        let mut adj = Tensor::zeros(vec![n, n]);
        match self.net.adjacency {
            AdjacencyKind::Identity => {}
            AdjacencyKind::Full => {
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            adj.set2(i, j, 1.0);
                        }
                    }
                }
            }
            AdjacencyKind::CoOccurrence => {
                for name in &self.train.presets {
                    let preset = self.preset(name)?;
                    for &a in &preset.object_types {
                        for &b in &preset.object_types {
                            if a != b {
                                adj.set2(a, b, 1.0);
                            }
                        }
                    }
                }
            }
        }
        normalize_adjacency(&adj)
    }

    /// Serialize every key back to the flat text format, defaults included.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("seed", self.seed.to_string());
        kv("d_emb", self.d_emb.to_string());
        kv("embedding_seed", self.embedding_seed.to_string());
        kv("env.max_steps", self.env.max_steps.to_string());
        kv("env.step_penalty", self.env.step_penalty.to_string());
        kv("env.success_reward", self.env.success_reward.to_string());
        kv("env.success_distance", self.env.success_distance.to_string());
        kv("net.gcn_dim", self.net.gcn_dim.to_string());
        kv("net.gcn_layers", self.net.gcn_layers.to_string());
        kv("net.trunk_dim", self.net.trunk_dim.to_string());
        kv("net.hidden_dim", self.net.hidden_dim.to_string());
        kv("net.recurrent", self.net.recurrent.to_string());
        kv("net.bptt_window", self.net.bptt_window.to_string());
        kv("net.leaky_slope", self.net.leaky_slope.to_string());
        kv("net.adjacency", self.net.adjacency.name().to_string());
        kv("rl.gamma", self.rl.gamma.to_string());
        kv("rl.entropy_weight", self.rl.entropy_weight.to_string());
        kv("rl.value_weight", self.rl.value_weight.to_string());
        kv("rl.learning_rate", self.rl.learning_rate.to_string());
        kv("judge.common_dim", self.judge.common_dim.to_string());
        kv("judge.expansion", self.judge.expansion.to_string());
        kv("judge.learning_rate", self.judge.learning_rate.to_string());
        kv("judge.gamma", self.judge.gamma.to_string());
        kv("judge.tau", self.judge.tau.to_string());
        kv("judge.buffer_capacity", self.judge.buffer_capacity.to_string());
        kv("judge.collect", self.judge.collect.name().to_string());
        kv("judge.oracle_labels", self.judge.oracle_labels.to_string());
        kv("train.workers", self.train.workers.to_string());
        kv("train.episodes_joint", self.train.episodes_joint.to_string());
        kv("train.episodes_total", self.train.episodes_total.to_string());
        kv("train.presets", self.train.presets.join(","));
        kv(
            "train.targets",
            self.train
                .targets
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("train.sync", self.train.sync.to_string());
        kv("train.auto_freeze", self.train.auto_freeze.to_string());
        kv(
            "train.auto_freeze_window",
            self.train.auto_freeze_window.to_string(),
        );
        kv("eval.presets", self.eval.presets.join(","));
        kv("eval.rooms_per_preset", self.eval.rooms_per_preset.to_string());
        kv("eval.episodes_per_room", self.eval.episodes_per_room.to_string());
        kv(
            "eval.targets",
            self.eval
                .targets
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("eval.length_threshold", self.eval.length_threshold.to_string());
        for t in self.catalog.types() {
            kv(&format!("catalog.{}.name", t.type_id), t.name.clone());
            kv(
                &format!("catalog.{}.size", t.type_id),
                t.physical_size.to_string(),
            );
            kv(
                &format!("catalog.{}.band", t.type_id),
                t.height_band.name().to_string(),
            );
        }
        for p in &self.presets {
            kv(&format!("preset.{}.width", p.name), p.width.to_string());
            kv(&format!("preset.{}.height", p.name), p.height.to_string());
            kv(
                &format!("preset.{}.obstacle_density", p.name),
                p.obstacle_density.to_string(),
            );
            kv(
                &format!("preset.{}.types", p.name),
                p.object_types
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            );
            kv(
                &format!("preset.{}.min_instances", p.name),
                p.min_instances.to_string(),
            );
            kv(
                &format!("preset.{}.max_instances", p.name),
                p.max_instances.to_string(),
            );
        }
        out
    }
}
