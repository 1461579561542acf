//! Deterministic tabletop world: attributed objects, a virtual gripper,
//! scripted reaching demonstrations and parametric observation perturbations.
//!
//! Perturbation magnitudes are an internal convention: radians for
//! viewpoint rotation about the table centre, meters for layout jitter and
//! raw noise-channel amplitude for lighting and feature noise.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{distance, norm};
use crate::policy::ActionVector;
use crate::{Error, Result};

pub const TABLE_MIN: [f64; 3] = [0.0, 0.0, 0.0];
pub const TABLE_MAX: [f64; 3] = [1.0, 1.0, 0.3];
pub const TABLE_CENTER: [f64; 2] = [0.5, 0.5];
pub const GRASP_RADIUS: f64 = 0.03;
pub const MAX_STEP: f64 = 0.1;
pub const GRIPPER_START_HEIGHT: f64 = 0.25;
const MAX_DEMO_STEPS: usize = 64;

pub type Vec3 = [f64; 3];

macro_rules! attribute_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($name), " `{}`"),
                        other
                    ))),
                }
            }
        }
    };
}

attribute_enum!(Category { Block => "block", Mug => "mug", Bottle => "bottle", Fruit => "fruit" });
attribute_enum!(Color { Red => "red", Green => "green", Blue => "blue", Yellow => "yellow" });
attribute_enum!(Size { Small => "small", Large => "large" });

impl Size {
    /// Resting height of the object's grasp point.
    pub fn grasp_height(self) -> f64 {
        match self {
            Size::Small => 0.02,
            Size::Large => 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub id: u32,
    pub category: Category,
    pub color: Color,
    pub size: Size,
    pub position: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<WorldObject>,
    pub gripper_position: Vec3,
    pub rng_seed: u64,
}

impl Scene {
    pub fn object(&self, id: u32) -> Option<&WorldObject> {
        self.objects.iter().find(|o| o.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_separation: f64,
    /// Objects are placed in `[margin, 1 - margin]²`.
    pub placement_margin: f64,
    pub max_retries: usize,
    pub categories: Vec<Category>,
    pub colors: Vec<Color>,
    pub sizes: Vec<Size>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            min_objects: 3,
            max_objects: 6,
            min_separation: 0.08,
            placement_margin: 0.15,
            max_retries: 200,
            categories: Category::ALL.to_vec(),
            colors: Color::ALL.to_vec(),
            sizes: Size::ALL.to_vec(),
        }
    }
}

impl SceneConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: SceneConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::Config(format!(
                "object count range {}..={} is empty",
                self.min_objects, self.max_objects
            )));
        }
        if self.categories.is_empty() || self.colors.is_empty() || self.sizes.is_empty() {
            return Err(Error::Config("attribute palettes must be nonempty".into()));
        }
        if !(0.0..0.5).contains(&self.placement_margin) || self.min_separation < 0.0 {
            return Err(Error::Config("placement geometry out of range".into()));
        }
        Ok(())
    }
}

pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(config.min_objects..=config.max_objects);
    let lo = config.placement_margin;
    let hi = 1.0 - config.placement_margin;

    let mut objects: Vec<WorldObject> = Vec::with_capacity(count);
    for id in 0..count as u32 {
        let category = config.categories[rng.random_range(0..config.categories.len())];
        let color = config.colors[rng.random_range(0..config.colors.len())];
        let size = config.sizes[rng.random_range(0..config.sizes.len())];
        let mut placed = None;
        for _ in 0..config.max_retries {
            let xy = [rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
            let clear = objects.iter().all(|o| {
                let dx = o.position[0] - xy[0];
                let dy = o.position[1] - xy[1];
                (dx * dx + dy * dy).sqrt() >= config.min_separation
            });
            if clear {
                placed = Some(xy);
                break;
            }
        }
        let xy = placed.ok_or_else(|| Error::Generation {
            attempts: config.max_retries,
            reason: format!("could not place object {id} of {count}: table too crowded"),
        })?;
        objects.push(WorldObject {
            id,
            category,
            color,
            size,
            position: [xy[0], xy[1], size.grasp_height()],
        });
    }

    let gripper_position = [
        rng.random_range(0.1..=0.9),
        rng.random_range(0.1..=0.9),
        GRIPPER_START_HEIGHT,
    ];
    Ok(Scene {
        objects,
        gripper_position,
        rng_seed: seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Viewpoint,
    Layout,
    Lighting,
    FeatureNoise,
}

impl PerturbationKind {
    pub const ALL: &'static [PerturbationKind] = &[
        PerturbationKind::Viewpoint,
        PerturbationKind::Layout,
        PerturbationKind::Lighting,
        PerturbationKind::FeatureNoise,
    ];

    /// Geometric kinds move positions; the others only touch appearance.
    pub fn is_geometric(self) -> bool {
        matches!(self, PerturbationKind::Viewpoint | PerturbationKind::Layout)
    }
}

/// An element of the perturbation group together with its distance to the
/// identity. `reversed` flips the rotation direction of viewpoint shifts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub kind: PerturbationKind,
    pub magnitude: f64,
    #[serde(default)]
    pub reversed: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Perturbation {
    pub fn new(kind: PerturbationKind, magnitude: f64, seed: u64) -> Self {
        Self {
            kind,
            magnitude,
            reversed: false,
            seed,
        }
    }

    /// Viewpoint rotation by a signed angle in radians.
    pub fn viewpoint(angle: f64) -> Self {
        Self {
            kind: PerturbationKind::Viewpoint,
            magnitude: angle.abs(),
            reversed: angle < 0.0,
            seed: 0,
        }
    }

    pub fn signed_angle(&self) -> f64 {
        if self.reversed {
            -self.magnitude
        } else {
            self.magnitude
        }
    }

    pub fn inverse(&self) -> Self {
        Self {
            reversed: !self.reversed,
            ..*self
        }
    }

    /// Composition of two viewpoint rotations; `None` for other kinds.
    pub fn compose_viewpoints(&self, other: &Perturbation) -> Option<Perturbation> {
        (self.kind == PerturbationKind::Viewpoint && other.kind == PerturbationKind::Viewpoint)
            .then(|| Perturbation::viewpoint(self.signed_angle() + other.signed_angle()))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.magnitude.is_finite() || self.magnitude < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "perturbation magnitude must be finite and nonnegative, got {}",
                self.magnitude
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedScene {
    pub scene: Scene,
    /// Set when at least one object had to be clamped back onto the table.
    pub clamped: bool,
}

pub fn apply_perturbation(scene: &Scene, p: &Perturbation) -> Result<PerturbedScene> {
    p.validate()?;
    if p.magnitude == 0.0 || !p.kind.is_geometric() {
        return Ok(PerturbedScene {
            scene: scene.clone(),
            clamped: false,
        });
    }
    let mut out = scene.clone();
    let mut clamped = false;
    match p.kind {
        PerturbationKind::Viewpoint => {
            let (s, c) = p.signed_angle().sin_cos();
            for o in &mut out.objects {
                let dx = o.position[0] - TABLE_CENTER[0];
                let dy = o.position[1] - TABLE_CENTER[1];
                o.position[0] = TABLE_CENTER[0] + c * dx - s * dy;
                o.position[1] = TABLE_CENTER[1] + s * dx + c * dy;
                clamped |= clamp_to_table(&mut o.position);
            }
        }
        PerturbationKind::Layout => {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ scene.rng_seed.rotate_left(17));
            for o in &mut out.objects {
                // uniform in the disc of radius `magnitude`
                let r = p.magnitude * rng.random::<f64>().sqrt();
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                o.position[0] += r * theta.cos();
                o.position[1] += r * theta.sin();
                clamped |= clamp_to_table(&mut o.position);
            }
        }
        PerturbationKind::Lighting | PerturbationKind::FeatureNoise => unreachable!(),
    }
    Ok(PerturbedScene { scene: out, clamped })
}

fn clamp_to_table(p: &mut Vec3) -> bool {
    let mut hit = false;
    for i in 0..3 {
        let v = p[i].clamp(TABLE_MIN[i], TABLE_MAX[i]);
        hit |= v != p[i];
        p[i] = v;
    }
    hit
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PickStatus {
    Moved,
    Grasped { id: u32 },
    Missed,
    AmbiguousGrasp { ids: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub gripper_position: Vec3,
    pub status: PickStatus,
}

impl StepOutcome {
    pub fn grasped(&self) -> Option<u32> {
        match self.status {
            PickStatus::Grasped { id } => Some(id),
            _ => None,
        }
    }

    pub fn attempted_grasp(&self) -> bool {
        !matches!(self.status, PickStatus::Moved)
    }
}

/// Moves the gripper by the (clamped) displacement and, when the grip flag
/// is set, closes it.
pub fn execute_pick(scene: &Scene, action: &ActionVector) -> StepOutcome {
    let delta = action.clamped_delta();
    let mut gripper = [
        scene.gripper_position[0] + delta[0],
        scene.gripper_position[1] + delta[1],
        scene.gripper_position[2] + delta[2],
    ];
    clamp_to_table(&mut gripper);
    if !action.grip_closed() {
        return StepOutcome {
            gripper_position: gripper,
            status: PickStatus::Moved,
        };
    }
    let within: Vec<u32> = scene
        .objects
        .iter()
        .filter(|o| distance(&o.position, &gripper) <= GRASP_RADIUS)
        .map(|o| o.id)
        .collect();
    let status = match within.as_slice() {
        [] => PickStatus::Missed,
        [id] => PickStatus::Grasped { id: *id },
        _ => PickStatus::AmbiguousGrasp { ids: within },
    };
    StepOutcome {
        gripper_position: gripper,
        status,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: usize,
    pub gripper_position: Vec3,
    pub action: ActionVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub target_id: u32,
    pub steps: Vec<TrajectoryStep>,
    pub final_gripper_position: Vec3,
}

impl Trajectory {
    pub fn t_end(&self) -> usize {
        self.steps.len() - 1
    }
}

pub fn scripted_demonstration(scene: &Scene, target_id: u32) -> Result<Trajectory> {
    scripted_demonstration_from(scene, target_id, scene.gripper_position)
}

/// Straight-line reach at full step length, closing the gripper on the step
/// that lands on the target.
pub fn scripted_demonstration_from(scene: &Scene, target_id: u32, start: Vec3) -> Result<Trajectory> {
    let target = scene
        .object(target_id)
        .ok_or(Error::Unreachable(target_id))?
        .position;
    let inside = |p: &Vec3| (0..3).all(|i| (TABLE_MIN[i]..=TABLE_MAX[i]).contains(&p[i]));
    if !inside(&target) || !inside(&start) {
        return Err(Error::Unreachable(target_id));
    }
    let mut pos = start;
    let mut steps = Vec::new();
    for t in 0..MAX_DEMO_STEPS {
        let diff = [target[0] - pos[0], target[1] - pos[1], target[2] - pos[2]];
        let dist = norm(&diff);
        if dist <= MAX_STEP {
            steps.push(TrajectoryStep {
                t,
                gripper_position: pos,
                action: ActionVector::new(diff, 1.0),
            });
            return Ok(Trajectory {
                target_id,
                steps,
                final_gripper_position: target,
            });
        }
        let s = MAX_STEP / dist;
        let delta = [diff[0] * s, diff[1] * s, diff[2] * s];
        steps.push(TrajectoryStep {
            t,
            gripper_position: pos,
            action: ActionVector::new(delta, 0.0),
        });
        pos = [pos[0] + delta[0], pos[1] + delta[1], pos[2] + delta[2]];
    }
    Err(Error::Unreachable(target_id))
}

/// Replays every action of a trajectory through [`execute_pick`] and returns
/// the outcome of the last step.
pub fn replay(scene: &Scene, trajectory: &Trajectory) -> StepOutcome {
    let mut state = scene.clone();
    state.gripper_position = trajectory
        .steps
        .first()
        .map_or(scene.gripper_position, |s| s.gripper_position);
    let mut last = StepOutcome {
        gripper_position: state.gripper_position,
        status: PickStatus::Moved,
    };
    for step in &trajectory.steps {
        last = execute_pick(&state, &step.action);
        state.gripper_position = last.gripper_position;
        if last.attempted_grasp() {
            break;
        }
    }
    last
}

/// One JSONL record per trajectory step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub scene_seed: u64,
    pub target_id: u32,
    pub t: usize,
    pub gripper_position: Vec3,
    pub delta: Vec3,
    pub grip: f64,
}

pub fn trajectory_records(scene: &Scene, trajectory: &Trajectory) -> Vec<TrajectoryRecord> {
    trajectory
        .steps
        .iter()
        .map(|s| TrajectoryRecord {
            scene_seed: scene.rng_seed,
            target_id: trajectory.target_id,
            t: s.t,
            gripper_position: s.gripper_position,
            delta: s.action.delta,
            grip: s.action.grip,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_object_scene(separation: f64) -> Scene {
        let obj = |id, x: f64| WorldObject {
            id,
            category: Category::Block,
            color: Color::Red,
            size: Size::Small,
            position: [x, 0.5, 0.02],
        };
        Scene {
            objects: vec![obj(0, 0.4), obj(1, 0.4 + separation)],
            gripper_position: [0.4, 0.5, 0.02],
            rng_seed: 0,
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let config = SceneConfig::default();
        let a = serde_json::to_string(&generate_scene(7, &config).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_scene(7, &config).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scene_invariants_hold() {
        let config = SceneConfig::default();
        for seed in 0..200 {
            let scene = generate_scene(seed, &config).unwrap();
            assert!((3..=6).contains(&scene.objects.len()));
            for (i, a) in scene.objects.iter().enumerate() {
                assert_eq!(a.id as usize, i);
                for k in 0..3 {
                    assert!((TABLE_MIN[k]..=TABLE_MAX[k]).contains(&a.position[k]));
                }
                for b in &scene.objects[i + 1..] {
                    assert!(distance(&a.position[..2], &b.position[..2]) >= config.min_separation);
                }
            }
        }
    }

    #[test]
    fn crowded_table_is_a_generation_error() {
        let config = SceneConfig {
            min_objects: 6,
            max_objects: 6,
            min_separation: 0.9,
            max_retries: 20,
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(1, &config), Err(Error::Generation { .. })));
    }

    #[test]
    fn config_parses_flat_toml() {
        let config = SceneConfig::from_toml_str(
            "min_objects = 4\nmax_objects = 4\nmin_separation = 0.1\ncolors = [\"red\", \"blue\"]\n",
        )
        .unwrap();
        assert_eq!(config.min_objects, 4);
        assert_eq!(config.colors, vec![Color::Red, Color::Blue]);
        assert!(SceneConfig::from_toml_str("min_objects = \"four\"").is_err());
        assert!(SceneConfig::from_toml_str("min_objects = 5\nmax_objects = 4").is_err());
    }

    #[test]
    fn zero_magnitude_is_identity_for_every_kind() {
        let scene = generate_scene(3, &SceneConfig::default()).unwrap();
        for &kind in PerturbationKind::ALL {
            let out = apply_perturbation(&scene, &Perturbation::new(kind, 0.0, 9)).unwrap();
            assert_eq!(out.scene, scene);
            assert!(!out.clamped);
        }
    }

    #[test]
    fn negative_magnitude_rejected() {
        let scene = generate_scene(3, &SceneConfig::default()).unwrap();
        let p = Perturbation::new(PerturbationKind::Layout, -0.1, 0);
        assert!(apply_perturbation(&scene, &p).is_err());
    }

    #[test]
    fn viewpoint_then_inverse_restores_positions() {
        let scene = generate_scene(11, &SceneConfig::default()).unwrap();
        let p = Perturbation::viewpoint(0.37);
        let there = apply_perturbation(&scene, &p).unwrap().scene;
        let back = apply_perturbation(&there, &p.inverse()).unwrap().scene;
        for (a, b) in scene.objects.iter().zip(&back.objects) {
            assert!(distance(&a.position, &b.position) < 1e-9);
        }
    }

    #[test]
    fn viewpoint_is_rigid() {
        let scene = generate_scene(5, &SceneConfig::default()).unwrap();
        let out = apply_perturbation(&scene, &Perturbation::viewpoint(0.8)).unwrap().scene;
        for i in 0..scene.objects.len() {
            for j in 0..scene.objects.len() {
                let before = distance(&scene.objects[i].position, &scene.objects[j].position);
                let after = distance(&out.objects[i].position, &out.objects[j].position);
                assert!((before - after).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layout_jitter_bounded_by_magnitude() {
        let config = SceneConfig::default();
        for seed in 0..100 {
            let scene = generate_scene(seed, &config).unwrap();
            let p = Perturbation::new(PerturbationKind::Layout, 0.05, seed * 31 + 1);
            let out = apply_perturbation(&scene, &p).unwrap().scene;
            for (a, b) in scene.objects.iter().zip(&out.objects) {
                assert!(distance(&a.position, &b.position) <= 0.05 + 1e-15);
            }
        }
    }

    #[test]
    fn photometric_kinds_leave_positions_alone() {
        let scene = generate_scene(2, &SceneConfig::default()).unwrap();
        for kind in [PerturbationKind::Lighting, PerturbationKind::FeatureNoise] {
            let out = apply_perturbation(&scene, &Perturbation::new(kind, 0.5, 4)).unwrap();
            assert_eq!(out.scene, scene);
        }
    }

    #[test]
    fn layout_near_edge_is_clamped_and_flagged() {
        let mut scene = two_object_scene(0.2);
        scene.objects[0].position = [0.999, 0.999, 0.02];
        let mut flagged = false;
        for seed in 0..20 {
            let p = Perturbation::new(PerturbationKind::Layout, 0.3, seed);
            let out = apply_perturbation(&scene, &p).unwrap();
            flagged |= out.clamped;
            for o in &out.scene.objects {
                assert!(o.position[0] <= 1.0 && o.position[1] <= 1.0);
            }
        }
        assert!(flagged);
    }

    #[test]
    fn grasp_at_object_position() {
        let scene = two_object_scene(0.2);
        let out = execute_pick(&scene, &ActionVector::new([0.0; 3], 1.0));
        assert_eq!(out.status, PickStatus::Grasped { id: 0 });
    }

    #[test]
    fn open_gripper_never_grasps() {
        let scene = two_object_scene(0.2);
        let out = execute_pick(&scene, &ActionVector::new([0.0; 3], 0.0));
        assert_eq!(out.status, PickStatus::Moved);
        assert_eq!(out.grasped(), None);
    }

    #[test]
    fn two_objects_in_radius_is_ambiguous() {
        let mut scene = two_object_scene(0.02);
        scene.gripper_position = [0.41, 0.5, 0.02];
        let out = execute_pick(&scene, &ActionVector::new([0.0; 3], 1.0));
        assert_eq!(out.status, PickStatus::AmbiguousGrasp { ids: vec![0, 1] });
    }

    #[test]
    fn far_grasp_misses() {
        let mut scene = two_object_scene(0.2);
        scene.gripper_position = [0.1, 0.1, 0.2];
        let out = execute_pick(&scene, &ActionVector::new([0.0; 3], 1.0));
        assert_eq!(out.status, PickStatus::Missed);
    }

    #[test]
    fn demo_from_target_is_single_step() {
        let scene = two_object_scene(0.2);
        let demo = scripted_demonstration(&scene, 0).unwrap();
        assert_eq!(demo.steps.len(), 1);
        assert_eq!(replay(&scene, &demo).grasped(), Some(0));
    }

    #[test]
    fn demo_for_missing_target_errors() {
        let scene = two_object_scene(0.2);
        assert!(matches!(scripted_demonstration(&scene, 9), Err(Error::Unreachable(9))));
    }

    #[test]
    fn demos_reach_and_replay_over_many_scenes() {
        let config = SceneConfig::default();
        for seed in 0..1000u64 {
            let scene = generate_scene(seed, &config).unwrap();
            let target = (seed % scene.objects.len() as u64) as u32;
            let demo = scripted_demonstration(&scene, target).unwrap();
            let goal = scene.object(target).unwrap().position;
            assert!(distance(&demo.final_gripper_position, &goal) <= GRASP_RADIUS);
            for step in &demo.steps {
                assert!(norm(&step.action.delta) <= MAX_STEP + 1e-12);
            }
            assert_eq!(replay(&scene, &demo).grasped(), Some(target));
        }
    }

    #[test]
    fn color_marginals_are_uniform() {
        let config = SceneConfig::default();
        let mut counts = [0usize; 4];
        let mut total = 0usize;
        for seed in 0..10_000u64 {
            for o in generate_scene(seed, &config).unwrap().objects {
                counts[o.color.index()] += 1;
                total += 1;
            }
        }
        for c in counts {
            let share = c as f64 / total as f64;
            assert!((share - 0.25).abs() <= 0.02, "share {share}");
        }
    }
}
