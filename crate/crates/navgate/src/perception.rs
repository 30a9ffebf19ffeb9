//! Synthetic object detection and observation encoding.
//!
//! Detections are derived from room geometry alone: an object is visible
//! when it lies inside the 90° field of view, within range, with a clear
//! grid line of sight, and in a height band the current pitch exposes. The
//! apparent bounding-box area is `(size / distance)^2` clamped to 1 — the
//! implicit depth signal everything downstream feeds on: for a known object
//! type, area alone determines distance.
//!
//! Observations are summarized per object type in a [`ContextMatrix`], and
//! for the target type folded into a [`StateEmb`] together with a fixed
//! random projection of the whole frame and the target's type embedding.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{AgentPose, Cell, GridRoom, HeightBand};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::seeding;

/// Normalized frame edge; bbox centers land in [0, 300]².
pub const FRAME_SIZE: f64 = 300.0;
/// Maximum detection distance in meters.
pub const DETECT_RANGE_M: f64 = 5.0;
/// Half the field of view, degrees.
pub const FOV_HALF_DEG: f64 = 45.0;
/// At level pitch, low-band objects are visible only within this range.
pub const CLOSE_RANGE_M: f64 = 2.0;
/// Dimension of the scene embedding (random projection of the context).
pub const SCENE_DIM: usize = 64;

const EPS: f64 = 1e-9;

/// One visible object instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub type_id: usize,
    pub instance_index: usize,
    /// Bbox center in the normalized 300x300 frame.
    pub x_c: f64,
    pub y_c: f64,
    /// Normalized bbox area in [0, 1].
    pub bbx_area: f64,
    /// Euclidean distance in meters. Simulator-internal; never fed to the
    /// networks.
    pub distance: f64,
}

/// Per-type summary row `{b, x_c, y_c, bbx, cs}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    /// Binary visibility indicator.
    pub b: f64,
    pub x_c: f64,
    pub y_c: f64,
    pub bbx: f64,
    /// Cosine similarity between this type's embedding and the target's.
    pub cs: f64,
}

impl DetectionRow {
    pub fn hidden(cs: f64) -> Self {
        DetectionRow {
            b: 0.0,
            x_c: 0.0,
            y_c: 0.0,
            bbx: 0.0,
            cs,
        }
    }

    /// Network-input features; coordinates scaled to [0, 1] and the bbox
    /// area on a clipped log scale, so all five entries share a comparable
    /// range. Raw areas span 1e-4..1 (apparent size is a distance RATIO),
    /// which buries small object types' entire near/far dynamic range in a
    /// few percent of the feature scale; the log maps equal size ratios to
    /// equal feature differences for every type, keeping the boundary
    /// monotone in distance. Exactly 0 for a hidden row, 1 for a
    /// frame-filling box.
    pub fn features(&self) -> [f64; 5] {
        let size_feature = if self.bbx <= 0.0 {
            0.0
        } else {
            (1.0 + self.bbx.ln() / 8.0).clamp(0.0, 1.0)
        };
        [
            self.b,
            self.x_c / FRAME_SIZE,
            self.y_c / FRAME_SIZE,
            size_feature,
            self.cs,
        ]
    }
}

/// One [`DetectionRow`] per catalog type, indexed by `type_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMatrix {
    rows: Vec<DetectionRow>,
}

impl ContextMatrix {
    pub fn rows(&self) -> &[DetectionRow] {
        &self.rows
    }

    pub fn row(&self, type_id: usize) -> Result<&DetectionRow> {
        self.rows
            .get(type_id)
            .ok_or_else(|| Error::Domain(format!("type_id {type_id} outside the context matrix")))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Flattened normalized features, 5 per type, row-major.
    pub fn flat_features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows.len() * 5);
        for row in &self.rows {
            out.extend_from_slice(&row.features());
        }
        out
    }

    /// Binary visibility vector over types.
    pub fn visibility(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.b).collect()
    }
}

/// Unit-norm pseudo-embedding standing in for a word vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeEmbedding {
    vector: Vec<f64>,
}

impl TypeEmbedding {
    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Deterministic unit vector keyed by `(type_id, embedding_seed)`.
pub fn type_embedding(type_id: usize, d_emb: usize, embedding_seed: u64) -> Result<TypeEmbedding> {
    if d_emb < 2 {
        return Err(Error::Domain(format!(
            "embedding dimension must be at least 2, got {d_emb}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix3(
        embedding_seed,
        seeding::TAG_TYPE_EMBEDDING,
        type_id as u64,
    ));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut vector: Vec<f64> = (0..d_emb).map(|_| normal.sample(&mut rng)).collect();
    let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    // A zero draw has probability zero; fall back to a basis vector anyway.
    if norm < 1e-12 {
        vector = vec![0.0; d_emb];
        vector[0] = 1.0;
    } else {
        for v in &mut vector {
            *v /= norm;
        }
    }
    Ok(TypeEmbedding { vector })
}

/// `u . v / (|u| |v|)`; errors on a zero vector.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(
            format!("vectors of equal length {}", u.len()),
            format!("{}", v.len()),
        ));
    }
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain(
            "cosine similarity of a zero vector".to_string(),
        ));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Type embeddings for a whole catalog plus the fixed scene projection.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    d_emb: usize,
    types: Vec<TypeEmbedding>,
    /// `SCENE_DIM x (5 * n_types)` random projection of the flat context.
    scene_projection: Tensor,
}

impl EmbeddingSet {
    pub fn new(n_types: usize, d_emb: usize, embedding_seed: u64) -> Result<Self> {
        if n_types == 0 {
            return Err(Error::Config("empty catalog".to_string()));
        }
        let types = (0..n_types)
            .map(|id| type_embedding(id, d_emb, embedding_seed))
            .collect::<Result<Vec<_>>>()?;
        let in_dim = 5 * n_types;
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix(
            embedding_seed,
            seeding::TAG_SCENE_PROJECTION,
        ));
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let scale = 1.0 / (in_dim as f64).sqrt();
        let data = (0..SCENE_DIM * in_dim)
            .map(|_| normal.sample(&mut rng) * scale)
            .collect();
        Ok(EmbeddingSet {
            d_emb,
            types,
            scene_projection: Tensor::matrix(SCENE_DIM, in_dim, data)?,
        })
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn d_emb(&self) -> usize {
        self.d_emb
    }

    pub fn get(&self, type_id: usize) -> Result<&TypeEmbedding> {
        self.types
            .get(type_id)
            .ok_or_else(|| Error::Domain(format!("type_id {type_id} outside the embedding set")))
    }
}

/// Target-frame embedding fed to the termination judge.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEmb {
    /// Fixed random projection of the flattened context matrix.
    pub scene_emb: Vec<f64>,
    /// The target type's detection row.
    pub tag_vec: DetectionRow,
    /// The target's type embedding.
    pub target_emb: Vec<f64>,
    /// True iff the target is visible in this frame.
    pub effective: bool,
}

impl StateEmb {
    pub fn dim(&self) -> usize {
        self.scene_emb.len() + 5 + self.target_emb.len()
    }
}

fn expected_band_rank(pitch: i32) -> i32 {
    if pitch > 0 {
        HeightBand::High.rank()
    } else if pitch < 0 {
        HeightBand::Low.rank()
    } else {
        HeightBand::Mid.rank()
    }
}

fn band_visible(pitch: i32, band: HeightBand, distance_m: f64) -> bool {
    if pitch > 0 {
        band == HeightBand::High
    } else if pitch < 0 {
        band == HeightBand::Low
    } else {
        band == HeightBand::Mid
            || (band == HeightBand::Low && distance_m <= CLOSE_RANGE_M + EPS)
    }
}

/// Signed bearing from the agent's heading to `target`, in (-180, 180].
fn bearing_deg(pose: &AgentPose, target: Cell) -> f64 {
    let (ax, ay) = pose.position.center_m();
    let (tx, ty) = target.center_m();
    if pose.position == target {
        return 0.0;
    }
    // atan2(east, north): clockwise-from-north convention, like headings.
    let absolute = (tx - ax).atan2(ty - ay).to_degrees();
    let mut rel = absolute - f64::from(pose.heading);
    while rel > 180.0 {
        rel -= 360.0;
    }
    while rel <= -180.0 {
        rel += 360.0;
    }
    rel
}

/// Cells a sight line crosses strictly between two cell centers.
///
/// Supercover traversal: when the line passes exactly through a cell corner
/// both side cells are included, so vision never slips between two blocked
/// cells touching diagonally.
fn ray_cells(from: Cell, to: Cell) -> Vec<Cell> {
    let mut out = Vec::new();
    if from == to {
        return out;
    }
    let (x0, y0) = (f64::from(from.x) + 0.5, f64::from(from.y) + 0.5);
    let (x1, y1) = (f64::from(to.x) + 0.5, f64::from(to.y) + 0.5);
    let dx = x1 - x0;
    let dy = y1 - y0;
    let step_x: i32 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i32 = if dy > 0.0 { 1 } else { -1 };
    let mut cx = from.x;
    let mut cy = from.y;
    // Parametric distance to the next vertical / horizontal boundary.
    let t_delta_x = if dx != 0.0 { (1.0 / dx).abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { (1.0 / dy).abs() } else { f64::INFINITY };
    let mut t_max_x = if dx != 0.0 { 0.5 * t_delta_x } else { f64::INFINITY };
    let mut t_max_y = if dy != 0.0 { 0.5 * t_delta_y } else { f64::INFINITY };

    while cx != to.x || cy != to.y {
        if (t_max_x - t_max_y).abs() < 1e-12 {
            // Exact corner: include both side cells, then step diagonally.
            out.push(Cell::new(cx + step_x, cy));
            out.push(Cell::new(cx, cy + step_y));
            cx += step_x;
            cy += step_y;
            t_max_x += t_delta_x;
            t_max_y += t_delta_y;
        } else if t_max_x < t_max_y {
            cx += step_x;
            t_max_x += t_delta_x;
        } else {
            cy += step_y;
            t_max_y += t_delta_y;
        }
        if cx == to.x && cy == to.y {
            break;
        }
        out.push(Cell::new(cx, cy));
    }
    out
}

/// All objects visible from `pose`.
pub fn detect(room: &GridRoom, pose: &AgentPose) -> Vec<Detection> {
    let mut detections = Vec::new();
    for (instance_index, obj) in room.objects.iter().enumerate() {
        let distance = pose.position.distance_m(obj.position);
        if distance > DETECT_RANGE_M + EPS {
            continue;
        }
        let bearing = bearing_deg(pose, obj.position);
        if bearing.abs() > FOV_HALF_DEG + EPS {
            continue;
        }
        if !band_visible(pose.pitch, obj.height_band, distance) {
            continue;
        }
        if ray_cells(pose.position, obj.position)
            .iter()
            .any(|c| room.is_blocked(*c))
        {
            continue;
        }
        let d = distance.max(EPS);
        let bbx_area = (obj.physical_size / d).powi(2).min(1.0);
        let x_c = (150.0 * (1.0 + bearing / FOV_HALF_DEG)).clamp(0.0, FRAME_SIZE);
        let y_c = 150.0
            - 75.0 * f64::from(obj.height_band.rank() - expected_band_rank(pose.pitch));
        detections.push(Detection {
            type_id: obj.type_id,
            instance_index,
            x_c,
            y_c,
            bbx_area,
            distance,
        });
    }
    detections
}

/// Fold raw detections into one row per type. Multiple instances of a type
/// are represented by the one with the largest bbox area.
pub fn build_context_matrix(
    detections: &[Detection],
    target_type: usize,
    embeddings: &EmbeddingSet,
) -> Result<ContextMatrix> {
    let target_emb = embeddings.get(target_type)?;
    let mut rows = Vec::with_capacity(embeddings.len());
    for type_id in 0..embeddings.len() {
        let cs = if type_id == target_type {
            1.0
        } else {
            cosine_similarity(embeddings.get(type_id)?.vector(), target_emb.vector())?
        };
        let best = detections
            .iter()
            .filter(|d| d.type_id == type_id)
            .max_by(|a, b| a.bbx_area.total_cmp(&b.bbx_area));
        let row = match best {
            Some(d) => DetectionRow {
                b: 1.0,
                x_c: d.x_c,
                y_c: d.y_c,
                bbx: d.bbx_area,
                cs,
            },
            None => DetectionRow::hidden(cs),
        };
        rows.push(row);
    }
    Ok(ContextMatrix { rows })
}

/// Assemble the judge input for the current frame.
pub fn build_state_emb(
    context: &ContextMatrix,
    target_type: usize,
    embeddings: &EmbeddingSet,
) -> Result<StateEmb> {
    if context.len() != embeddings.len() {
        return Err(Error::shape(
            format!("context with {} rows", embeddings.len()),
            format!("{} rows", context.len()),
        ));
    }
    let scene_emb = embeddings
        .scene_projection
        .matvec(&context.flat_features())?;
    let tag_vec = *context.row(target_type)?;
    Ok(StateEmb {
        scene_emb,
        tag_vec,
        target_emb: embeddings.get(target_type)?.vector().to_vec(),
        effective: tag_vec.b == 1.0,
    })
}
