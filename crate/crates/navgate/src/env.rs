//! Deterministic discrete navigation environment.
//!
//! A room is a grid of 0.25 m cells with blocked cells and placed objects.
//! The agent occupies a free cell with one of eight headings (45° steps) and
//! a camera pitch in 30° steps clamped to ±60°. Six actions: MoveAhead,
//! RotateLeft, RotateRight, LookUp, LookDown, Done. Done is the only action
//! that can end an episode successfully; success requires the target type to
//! be visible and an instance of it to be closer than the success distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perception::Detection;
use crate::seeding;

/// Edge length of one grid cell in meters; MoveAhead covers exactly this.
pub const CELL_SIZE_M: f64 = 0.25;
pub const HEADING_STEP_DEG: i32 = 45;
pub const PITCH_STEP_DEG: i32 = 30;
pub const PITCH_LIMIT_DEG: i32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HeightBand {
    Low,
    Mid,
    High,
}

impl HeightBand {
    pub fn rank(self) -> i32 {
        match self {
            HeightBand::Low => 0,
            HeightBand::Mid => 1,
            HeightBand::High => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(HeightBand::Low),
            "mid" => Ok(HeightBand::Mid),
            "high" => Ok(HeightBand::High),
            other => Err(Error::Config(format!("unknown height band `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeightBand::Low => "low",
            HeightBand::Mid => "mid",
            HeightBand::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    /// Cell center in meters; x grows east, y grows north.
    pub fn center_m(self) -> (f64, f64) {
        (
            (f64::from(self.x) + 0.5) * CELL_SIZE_M,
            (f64::from(self.y) + 0.5) * CELL_SIZE_M,
        )
    }

    pub fn distance_m(self, other: Cell) -> f64 {
        let (ax, ay) = self.center_m();
        let (bx, by) = other.center_m();
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }
}

/// One object-type entry of the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectType {
    pub type_id: usize,
    pub name: String,
    /// Characteristic physical extent in meters; drives apparent bbox area.
    pub physical_size: f64,
    pub height_band: HeightBand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    types: Vec<ObjectType>,
}

impl Catalog {
    pub fn new(types: Vec<ObjectType>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::Config("catalog has no object types".to_string()));
        }
        for (i, t) in types.iter().enumerate() {
            if t.type_id != i {
                return Err(Error::Config(format!(
                    "catalog type_id {} at position {i}; ids must be contiguous from 0",
                    t.type_id
                )));
            }
            if t.physical_size <= 0.0 {
                return Err(Error::Config(format!(
                    "object type `{}` has non-positive physical_size",
                    t.name
                )));
            }
        }
        Ok(Catalog { types })
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn get(&self, type_id: usize) -> Result<&ObjectType> {
        self.types
            .get(type_id)
            .ok_or_else(|| Error::Config(format!("type_id {type_id} outside the catalog")))
    }

    pub fn types(&self) -> &[ObjectType] {
        &self.types
    }

    /// Desk-object catalog used when the configuration defines none.
    pub fn default_desk() -> Self {
        let spec: [(&str, f64, HeightBand); 10] = [
            ("mug", 0.10, HeightBand::Low),
            ("book", 0.22, HeightBand::Low),
            ("bin", 0.35, HeightBand::Low),
            ("lamp", 0.45, HeightBand::Mid),
            ("monitor", 0.55, HeightBand::Mid),
            ("plant", 0.60, HeightBand::Mid),
            ("chair", 0.90, HeightBand::Mid),
            ("painting", 0.85, HeightBand::High),
            ("shelf", 1.40, HeightBand::High),
            ("clock", 0.30, HeightBand::High),
        ];
        let types = spec
            .iter()
            .enumerate()
            .map(|(i, (name, size, band))| ObjectType {
                type_id: i,
                name: (*name).to_string(),
                physical_size: *size,
                height_band: *band,
            })
            .collect();
        Catalog::new(types).expect("default catalog is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub type_id: usize,
    pub position: Cell,
    pub physical_size: f64,
    pub height_band: HeightBand,
}

/// Procedural-generation recipe for a family of rooms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomPreset {
    pub name: String,
    pub width: i32,
    pub height: i32,
    pub obstacle_density: f64,
    /// Object types placed in every room of this preset.
    pub object_types: Vec<usize>,
    pub min_instances: u32,
    pub max_instances: u32,
}

impl RoomPreset {
    fn validate(&self, catalog: &Catalog) -> Result<()> {
        if self.width < 4 || self.height < 4 {
            return Err(Error::Config(format!(
                "preset `{}`: rooms must be at least 4x4",
                self.name
            )));
        }
        if !(0.0..0.9).contains(&self.obstacle_density) {
            return Err(Error::Config(format!(
                "preset `{}`: obstacle_density must lie in [0, 0.9)",
                self.name
            )));
        }
        if self.object_types.is_empty() {
            return Err(Error::Config(format!(
                "preset `{}` has an empty object pool",
                self.name
            )));
        }
        for t in &self.object_types {
            catalog.get(*t)?;
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return Err(Error::Config(format!(
                "preset `{}`: need 1 <= min_instances <= max_instances",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRoom {
    pub width: i32,
    pub height: i32,
    /// Row-major, `true` = blocked.
    occupancy: Vec<bool>,
    pub objects: Vec<ObjectInstance>,
    pub room_preset_id: String,
    pub seed: u64,
}

impl GridRoom {
    /// Assemble a room from raw parts (fixtures, hand-built scenarios).
    /// `occupancy` is row-major with `true` = blocked.
    pub fn from_parts(
        width: i32,
        height: i32,
        occupancy: Vec<bool>,
        objects: Vec<ObjectInstance>,
        room_preset_id: String,
        seed: u64,
    ) -> Self {
        GridRoom {
            width,
            height,
            occupancy,
            objects,
            room_preset_id,
            seed,
        }
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.x >= 0 && cell.y >= 0 && cell.x < self.width && cell.y < self.height
    }

    pub fn is_blocked(&self, cell: Cell) -> bool {
        if !self.in_bounds(cell) {
            return true;
        }
        self.occupancy[(cell.y * self.width + cell.x) as usize]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        !self.is_blocked(cell)
    }

    pub fn set_blocked(&mut self, cell: Cell, blocked: bool) {
        assert!(self.in_bounds(cell));
        self.occupancy[(cell.y * self.width + cell.x) as usize] = blocked;
    }

    /// Free cells in row-major order.
    pub fn free_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = Cell::new(x, y);
                if self.is_free(c) {
                    out.push(c);
                }
            }
        }
        out
    }

    pub fn instances_of(&self, type_id: usize) -> impl Iterator<Item = &ObjectInstance> {
        self.objects.iter().filter(move |o| o.type_id == type_id)
    }

    /// Check every structural invariant; used by tests and fixture loading.
    pub fn validate(&self) -> Result<()> {
        if self.width < 4 || self.height < 4 {
            return Err(Error::Config("room smaller than 4x4".to_string()));
        }
        if self.occupancy.len() != (self.width * self.height) as usize {
            return Err(Error::Config("occupancy length mismatch".to_string()));
        }
        if self.objects.is_empty() {
            return Err(Error::Config("room contains no objects".to_string()));
        }
        for obj in &self.objects {
            if !self.in_bounds(obj.position) || self.is_blocked(obj.position) {
                return Err(Error::Config(format!(
                    "object of type {} not on a free cell",
                    obj.type_id
                )));
            }
            if obj.physical_size <= 0.0 {
                return Err(Error::Config("object with non-positive size".to_string()));
            }
        }
        // All free cells mutually reachable.
        let free = self.free_cells();
        if free.is_empty() {
            return Err(Error::Config("room has no free cells".to_string()));
        }
        let reached = flood_fill(self, free[0]);
        if reached != free.len() {
            return Err(Error::Config(format!(
                "free space disconnected: {} of {} cells reachable",
                reached,
                free.len()
            )));
        }
        Ok(())
    }
}

fn flood_fill(room: &GridRoom, start: Cell) -> usize {
    let mut seen = vec![false; (room.width * room.height) as usize];
    let idx = |c: Cell| (c.y * room.width + c.x) as usize;
    let mut stack = vec![start];
    seen[idx(start)] = true;
    let mut count = 0;
    while let Some(c) = stack.pop() {
        count += 1;
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let n = Cell::new(c.x + dx, c.y + dy);
            if room.is_free(n) && !seen[idx(n)] {
                seen[idx(n)] = true;
                stack.push(n);
            }
        }
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPose {
    pub position: Cell,
    /// Degrees clockwise from north (+y), one of {0, 45, ..., 315}.
    pub heading: i32,
    /// Degrees, one of {-60, -30, 0, 30, 60}; positive looks up.
    pub pitch: i32,
}

impl AgentPose {
    pub fn validate(&self, room: &GridRoom) -> Result<()> {
        if self.heading % HEADING_STEP_DEG != 0 || !(0..360).contains(&self.heading) {
            return Err(Error::Contract(format!("invalid heading {}", self.heading)));
        }
        if self.pitch % PITCH_STEP_DEG != 0 || self.pitch.abs() > PITCH_LIMIT_DEG {
            return Err(Error::Contract(format!("invalid pitch {}", self.pitch)));
        }
        if !room.is_free(self.position) {
            return Err(Error::Contract("agent on a blocked cell".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    MoveAhead,
    RotateLeft,
    RotateRight,
    LookUp,
    LookDown,
    Done,
}

impl Action {
    pub const COUNT: usize = 6;
    pub const ALL: [Action; 6] = [
        Action::MoveAhead,
        Action::RotateLeft,
        Action::RotateRight,
        Action::LookUp,
        Action::LookDown,
        Action::Done,
    ];
    /// Index of Done within every 6-way action distribution.
    pub const DONE_INDEX: usize = 5;

    pub fn index(self) -> usize {
        match self {
            Action::MoveAhead => 0,
            Action::RotateLeft => 1,
            Action::RotateRight => 2,
            Action::LookUp => 3,
            Action::LookDown => 4,
            Action::Done => 5,
        }
    }

    pub fn from_index(index: usize) -> Result<Action> {
        Action::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::Domain(format!("action index {index} outside the action set")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::MoveAhead => "MoveAhead",
            Action::RotateLeft => "RotateLeft",
            Action::RotateRight => "RotateRight",
            Action::LookUp => "LookUp",
            Action::LookDown => "LookDown",
            Action::Done => "Done",
        }
    }
}

/// Unit step for a heading; diagonal headings move one diagonal cell.
pub fn heading_delta(heading: i32) -> (i32, i32) {
    match heading.rem_euclid(360) {
        0 => (0, 1),
        45 => (1, 1),
        90 => (1, 0),
        135 => (1, -1),
        180 => (0, -1),
        225 => (-1, -1),
        270 => (-1, 0),
        315 => (-1, 1),
        h => unreachable!("heading {h} is not a 45 degree step"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub terminated: bool,
    pub success: bool,
    pub collision: bool,
    pub steps_taken: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_steps: u32,
    pub step_penalty: f64,
    pub success_reward: f64,
    /// Meters; success requires strictly closer than this.
    pub success_distance: f64,
    pub target_type: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            max_steps: 100,
            step_penalty: -0.01,
            success_reward: 5.0,
            success_distance: 1.5,
            target_type: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".to_string()));
        }
        if self.success_distance <= 0.0 {
            return Err(Error::Config(
                "success_distance must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// Generate a room deterministically from `(preset, seed)`.
///
/// Obstacles are sampled at the preset density, then the largest connected
/// free component is kept and the rest blocked so that all free cells stay
/// mutually reachable. Objects land on distinct free cells.
pub fn generate_room(preset: &RoomPreset, catalog: &Catalog, seed: u64) -> Result<GridRoom> {
    preset.validate(catalog)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix3(
        seed,
        seeding::TAG_ROOM,
        seeding::fnv1a(&preset.name),
    ));
    let mut room = GridRoom {
        width: preset.width,
        height: preset.height,
        occupancy: vec![false; (preset.width * preset.height) as usize],
        objects: Vec::new(),
        room_preset_id: preset.name.clone(),
        seed,
    };

    for y in 0..room.height {
        for x in 0..room.width {
            if rng.gen::<f64>() < preset.obstacle_density {
                room.set_blocked(Cell::new(x, y), true);
            }
        }
    }
    keep_largest_component(&mut room);

    // Worst-case object count plus space for the agent.
    let slots = preset.object_types.len() * preset.max_instances as usize + 1;
    if room.free_cells().len() < slots {
        // Degenerate draw; fall back to an empty room rather than failing.
        for v in &mut room.occupancy {
            *v = false;
        }
    }

    let mut taken: Vec<Cell> = Vec::new();
    for &type_id in &preset.object_types {
        let ty = catalog.get(type_id)?;
        let count = rng.gen_range(preset.min_instances..=preset.max_instances);
        for _ in 0..count {
            let free: Vec<Cell> = room
                .free_cells()
                .into_iter()
                .filter(|c| !taken.contains(c))
                .collect();
            if free.is_empty() {
                return Err(Error::Config(format!(
                    "preset `{}`: room too small for its object pool",
                    preset.name
                )));
            }
            let cell = free[rng.gen_range(0..free.len())];
            taken.push(cell);
            room.objects.push(ObjectInstance {
                type_id,
                position: cell,
                physical_size: ty.physical_size,
                height_band: ty.height_band,
            });
        }
    }
    room.validate()?;
    Ok(room)
}

fn keep_largest_component(room: &mut GridRoom) {
    let idx = |c: Cell, w: i32| (c.y * w + c.x) as usize;
    let mut component = vec![usize::MAX; (room.width * room.height) as usize];
    let mut sizes: Vec<usize> = Vec::new();
    for y in 0..room.height {
        for x in 0..room.width {
            let start = Cell::new(x, y);
            if room.is_blocked(start) || component[idx(start, room.width)] != usize::MAX {
                continue;
            }
            let id = sizes.len();
            let mut stack = vec![start];
            component[idx(start, room.width)] = id;
            let mut size = 0;
            while let Some(c) = stack.pop() {
                size += 1;
                for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                    let n = Cell::new(c.x + dx, c.y + dy);
                    if room.is_free(n) && component[idx(n, room.width)] == usize::MAX {
                        component[idx(n, room.width)] = id;
                        stack.push(n);
                    }
                }
            }
            sizes.push(size);
        }
    }
    if sizes.is_empty() {
        // Fully blocked draw; clear everything.
        for v in &mut room.occupancy {
            *v = false;
        }
        return;
    }
    let best = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    for y in 0..room.height {
        for x in 0..room.width {
            let c = Cell::new(x, y);
            if room.is_free(c) && component[idx(c, room.width)] != best {
                room.set_blocked(c, true);
            }
        }
    }
}

/// Uniform starting pose over free cells and headings, level pitch.
pub fn reset(room: &GridRoom, config: &EpisodeConfig, seed: u64) -> Result<AgentPose> {
    config.validate()?;
    if room.instances_of(config.target_type).next().is_none() {
        return Err(Error::EpisodeSetup(format!(
            "target type {} absent from room `{}`",
            config.target_type, room.room_preset_id
        )));
    }
    let free = room.free_cells();
    if free.is_empty() {
        return Err(Error::EpisodeSetup("room has no free cells".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix(seed, seeding::TAG_RESET));
    let position = free[rng.gen_range(0..free.len())];
    let heading = HEADING_STEP_DEG * rng.gen_range(0..8);
    Ok(AgentPose {
        position,
        heading,
        pitch: 0,
    })
}

/// True iff `target` is strictly within the success distance and a detection
/// of its type exists in the current frame.
pub fn success_check(
    pose: &AgentPose,
    target: &ObjectInstance,
    detections: &[Detection],
    config: &EpisodeConfig,
) -> bool {
    let distance = pose.position.distance_m(target.position);
    distance < config.success_distance && detections.iter().any(|d| d.type_id == target.type_id)
}

/// Advance one action. `steps_taken` counts completed steps before this one;
/// `detections` must belong to the current pose (Done's visibility check).
pub fn step(
    room: &GridRoom,
    pose: &AgentPose,
    config: &EpisodeConfig,
    steps_taken: u32,
    action: Action,
    detections: &[Detection],
) -> Result<(AgentPose, StepOutcome)> {
    if steps_taken >= config.max_steps {
        return Err(Error::Contract("episode already terminated".to_string()));
    }
    let mut next = *pose;
    let mut collision = false;
    let mut success = false;
    let steps_now = steps_taken + 1;
    let mut terminated = steps_now >= config.max_steps;

    match action {
        Action::MoveAhead => {
            let (dx, dy) = heading_delta(pose.heading);
            let dest = Cell::new(pose.position.x + dx, pose.position.y + dy);
            if room.is_free(dest) {
                next.position = dest;
            } else {
                collision = true;
            }
        }
        Action::RotateLeft => {
            next.heading = (pose.heading - HEADING_STEP_DEG).rem_euclid(360);
        }
        Action::RotateRight => {
            next.heading = (pose.heading + HEADING_STEP_DEG).rem_euclid(360);
        }
        Action::LookUp => {
            next.pitch = (pose.pitch + PITCH_STEP_DEG).min(PITCH_LIMIT_DEG);
        }
        Action::LookDown => {
            next.pitch = (pose.pitch - PITCH_STEP_DEG).max(-PITCH_LIMIT_DEG);
        }
        Action::Done => {
            terminated = true;
            success = room
                .instances_of(config.target_type)
                .any(|inst| success_check(pose, inst, detections, config));
        }
    }

    let reward = if success {
        config.success_reward + config.step_penalty
    } else {
        config.step_penalty
    };
    Ok((
        next,
        StepOutcome {
            reward,
            terminated,
            success,
            collision,
            steps_taken: steps_now,
        },
    ))
}

/// Room, config and live agent state of one running episode.
#[derive(Debug, Clone)]
pub struct Episode {
    pub room: GridRoom,
    pub config: EpisodeConfig,
    pub pose: AgentPose,
    pub start_pose: AgentPose,
    pub steps_taken: u32,
    pub terminated: bool,
    pub success: bool,
    pub total_reward: f64,
}

impl Episode {
    pub fn start(room: GridRoom, config: EpisodeConfig, seed: u64) -> Result<Self> {
        let pose = reset(&room, &config, seed)?;
        Ok(Episode {
            room,
            config,
            pose,
            start_pose: pose,
            steps_taken: 0,
            terminated: false,
            success: false,
            total_reward: 0.0,
        })
    }

    pub fn step(&mut self, action: Action, detections: &[Detection]) -> Result<StepOutcome> {
        if self.terminated {
            return Err(Error::Contract("episode already terminated".to_string()));
        }
        let (pose, outcome) = step(
            &self.room,
            &self.pose,
            &self.config,
            self.steps_taken,
            action,
            detections,
        )?;
        self.pose = pose;
        self.steps_taken = outcome.steps_taken;
        self.terminated = outcome.terminated;
        self.success = outcome.success;
        self.total_reward += outcome.reward;
        Ok(outcome)
    }
}
