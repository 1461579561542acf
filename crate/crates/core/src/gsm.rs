//! Grounded state: entity nodes lifted from a scene, a bounded FIFO entity
//! memory, and the entity set handed to cross-attention.

use std::collections::{HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{distance, norm, Matrix};
use crate::world_sim::{
    apply_perturbation, Category, Color, Perturbation, PerturbationKind, Scene, Size, Vec3,
    WorldObject,
};
use crate::{Error, Result};

pub const ATTR_DIM: usize = 10;
pub const NOISE_DIM: usize = 4;
/// attribute block, position, noise channel, bias
pub const RAW_DIM: usize = ATTR_DIM + 3 + NOISE_DIM + 1;
pub const APPEARANCE_DIM: usize = 32;
/// Entity rows fed to attention: appearance followed by position.
pub const ENTITY_ROW_DIM: usize = APPEARANCE_DIM + 3;
pub const MEMORY_CAPACITY: usize = 16;

/// One-hot attribute block: category (4) ⊕ color (4) ⊕ size (2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttrBlock(pub [f64; ATTR_DIM]);

impl AttrBlock {
    pub fn new(category: Category, color: Color, size: Size) -> Self {
        let mut v = [0.0; ATTR_DIM];
        v[category.index()] = 1.0;
        v[4 + color.index()] = 1.0;
        v[8 + size.index()] = 1.0;
        Self(v)
    }

    pub fn of(object: &WorldObject) -> Self {
        Self::new(object.category, object.color, object.size)
    }

    fn hot(&self, range: std::ops::Range<usize>) -> Option<usize> {
        let start = range.start;
        let mut hits = self.0[range].iter().enumerate().filter(|(_, v)| **v == 1.0);
        let first = hits.next()?.0;
        hits.next().is_none().then_some(start + first)
    }

    pub fn category(&self) -> Option<Category> {
        self.hot(0..4).map(|i| Category::ALL[i])
    }

    pub fn color(&self) -> Option<Color> {
        self.hot(4..8).map(|i| Color::ALL[i - 4])
    }

    pub fn size(&self) -> Option<Size> {
        self.hot(8..10).map(|i| Size::ALL[i - 8])
    }

    /// Exactly one hot entry per attribute group and zeros elsewhere.
    pub fn is_valid(&self) -> bool {
        let ones = self.0.iter().filter(|v| **v == 1.0).count();
        let zeros = self.0.iter().filter(|v| **v == 0.0).count();
        ones == 3
            && zeros == ATTR_DIM - 3
            && self.category().is_some()
            && self.color().is_some()
            && self.size().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityNode {
    pub id: u32,
    pub position: Vec3,
    pub attr: AttrBlock,
    pub appearance: Vec<f64>,
    pub birth_step: u64,
    pub confidence: f64,
}

impl EntityNode {
    pub fn row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(ENTITY_ROW_DIM);
        row.extend_from_slice(&self.appearance);
        row.extend_from_slice(&self.position);
        row
    }
}

/// Linear appearance encoder followed by L2 normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub weights: Matrix,
}

impl EncoderParams {
    pub fn random<R: Rng + ?Sized>(std: f64, rng: &mut R) -> Self {
        Self {
            weights: Matrix::random(APPEARANCE_DIM, RAW_DIM, std, rng),
        }
    }

    /// Fixed encoder used where only attributes and positions matter.
    pub fn reference() -> Self {
        Self::random(0.5, &mut ChaCha8Rng::seed_from_u64(0x5eed))
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
        }
    }

    pub fn forward(&self, raw: &[f64]) -> Result<EncoderCache> {
        let pre = self.weights.matvec(raw);
        let pre_norm = norm(&pre);
        if !(pre_norm > 0.0 && pre_norm.is_finite()) {
            return Err(Error::NonFinite("encoder pre-activation"));
        }
        let appearance = pre.iter().map(|v| v / pre_norm).collect();
        Ok(EncoderCache {
            raw: raw.to_vec(),
            appearance,
            pre_norm,
        })
    }

    /// Accumulates `∂L/∂W` into `grad` given `∂L/∂appearance`.
    pub fn backward(&self, cache: &EncoderCache, d_appearance: &[f64], grad: &mut EncoderParams) {
        let e = &cache.appearance;
        let proj: f64 = e.iter().zip(d_appearance).map(|(a, b)| a * b).sum();
        let d_pre: Vec<f64> = d_appearance
            .iter()
            .zip(e)
            .map(|(d, ei)| (d - ei * proj) / cache.pre_norm)
            .collect();
        grad.weights.add_outer(1.0, &d_pre, &cache.raw);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderCache {
    pub raw: Vec<f64>,
    pub appearance: Vec<f64>,
    pub pre_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub step: u64,
    pub nodes: Vec<EntityNode>,
}

impl SceneGraph {
    /// Centroid of the observed entities plus a count feature.
    pub fn observation_summary(&self) -> Vec<f64> {
        observation_summary(self.nodes.iter().map(|n| &n.position))
    }
}

pub const OBS_DIM: usize = 4;

pub fn observation_summary<'a>(positions: impl Iterator<Item = &'a Vec3>) -> Vec<f64> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for p in positions {
        for k in 0..3 {
            sum[k] += p[k];
        }
        n += 1;
    }
    let denom = n.max(1) as f64;
    vec![sum[0] / denom, sum[1] / denom, sum[2] / denom, n as f64 / 6.0]
}

/// Noise channel input for one object. Lighting shifts every object along
/// a shared direction; feature noise draws an independent direction per object.
pub fn noise_channel(p: Option<&Perturbation>, object_id: u32) -> [f64; NOISE_DIM] {
    let mut out = [0.0; NOISE_DIM];
    let Some(p) = p else { return out };
    if p.magnitude == 0.0 || p.kind.is_geometric() {
        return out;
    }
    let seed = match p.kind {
        PerturbationKind::Lighting => p.seed,
        _ => p.seed ^ (u64::from(object_id) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut out {
        *v = rng.sample(StandardNormal);
    }
    let n = norm(&out);
    for v in &mut out {
        *v *= p.magnitude / n;
    }
    out
}

pub fn raw_features(object: &WorldObject, noise: &[f64; NOISE_DIM]) -> Vec<f64> {
    let mut x = Vec::with_capacity(RAW_DIM);
    x.extend_from_slice(&AttrBlock::of(object).0);
    x.extend_from_slice(&object.position);
    x.extend_from_slice(noise);
    x.push(1.0);
    x
}

/// Detection confidence falls off with distance from the gripper, which
/// makes "largest confidence" the nearest-in-view choice.
pub fn detection_confidence(position: &Vec3, gripper: &Vec3) -> f64 {
    1.0 / (1.0 + distance(position, gripper))
}

pub fn encode_entities(
    scene: &Scene,
    perturbation: Option<&Perturbation>,
    params: &EncoderParams,
    step: u64,
) -> Result<SceneGraph> {
    encode_entities_cached(scene, perturbation, params, step).map(|(graph, _)| graph)
}

/// Same as [`encode_entities`] but also returns per-node encoder caches for
/// backpropagation, in node order.
pub fn encode_entities_cached(
    scene: &Scene,
    perturbation: Option<&Perturbation>,
    params: &EncoderParams,
    step: u64,
) -> Result<(SceneGraph, Vec<EncoderCache>)> {
    let observed = match perturbation {
        Some(p) => apply_perturbation(scene, p)?.scene,
        None => scene.clone(),
    };
    let mut nodes = Vec::with_capacity(observed.objects.len());
    let mut caches = Vec::with_capacity(observed.objects.len());
    for object in &observed.objects {
        let noise = noise_channel(perturbation, object.id);
        let cache = params.forward(&raw_features(object, &noise))?;
        nodes.push(EntityNode {
            id: object.id,
            position: object.position,
            attr: AttrBlock::of(object),
            appearance: cache.appearance.clone(),
            birth_step: step,
            confidence: detection_confidence(&object.position, &observed.gripper_position),
        });
        caches.push(cache);
    }
    Ok((SceneGraph { step, nodes }, caches))
}

/// Bounded FIFO memory over entity nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityMemory {
    nodes: VecDeque<EntityNode>,
    capacity: usize,
}

impl Default for EntityMemory {
    fn default() -> Self {
        Self::with_capacity(MEMORY_CAPACITY)
    }
}

impl EntityMemory {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            nodes: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn nodes(&self) -> impl Iterator<Item = &EntityNode> {
        self.nodes.iter()
    }

    pub fn insert(&mut self, node: EntityNode) {
        if self.capacity == 0 {
            return;
        }
        while self.nodes.len() >= self.capacity {
            self.nodes.pop_front();
        }
        self.nodes.push_back(node);
    }
}

pub fn update_memory(mut memory: EntityMemory, graph: &SceneGraph) -> EntityMemory {
    for node in &graph.nodes {
        memory.insert(node.clone());
    }
    memory
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySet {
    pub entities: Vec<EntityNode>,
    pub embeddings: Matrix,
}

impl EntitySet {
    pub fn from_nodes(entities: Vec<EntityNode>) -> Result<Self> {
        let rows: Vec<Vec<f64>> = entities.iter().map(EntityNode::row).collect();
        let embeddings = if rows.is_empty() {
            Matrix::zeros(0, ENTITY_ROW_DIM)
        } else {
            Matrix::from_rows(&rows)?
        };
        if !embeddings.is_finite() {
            return Err(Error::NonFinite("entity embeddings"));
        }
        Ok(Self {
            entities,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.entities.iter().map(|e| e.id).collect()
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.entities.iter().position(|e| e.id == id)
    }
}

/// Current-frame nodes first, then memory nodes (newest first) whose id is
/// not already present.
pub fn assemble_entity_set(graph: &SceneGraph, memory: &EntityMemory) -> Result<EntitySet> {
    if graph.nodes.is_empty() && memory.is_empty() {
        return Err(Error::EmptyState);
    }
    let mut seen: HashSet<u32> = graph.nodes.iter().map(|n| n.id).collect();
    let mut entities = graph.nodes.clone();
    for node in memory.nodes.iter().rev() {
        if seen.insert(node.id) {
            entities.push(node.clone());
        }
    }
    EntitySet::from_nodes(entities)
}

/// Entities of a clean scene under the reference encoder; used wherever only
/// attributes and geometry matter (labels, template resolution).
pub fn ground_truth_entities(scene: &Scene) -> Result<EntitySet> {
    let graph = encode_entities(scene, None, &EncoderParams::reference(), 0)?;
    EntitySet::from_nodes(graph.nodes)
}
