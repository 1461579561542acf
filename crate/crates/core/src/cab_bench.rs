//! Procedural ambiguity benchmark: scenes with attribute collisions and
//! instructions labelled by the attribute-dropping rule.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::{sha256_hex, sha256_parts};
use crate::gsm::ground_truth_entities;
use crate::jsonl;
use crate::planner::{
    category_nouns, extract_template, realize, resolve_template, size_adjectives, Ambiguity,
    Instruction, Surface, SymbolicSubGoal,
};
use crate::world_sim::{generate_scene, Scene, SceneConfig, WorldObject};
use crate::{Error, Result};

pub const GRAMMAR_VERSION: &str = "cab-grammar/1";
pub const SCENE_SCHEMA: &str = "cab-scene/1";
pub const INSTRUCTION_SCHEMA: &str = "cab-instruction/1";
pub const SPLIT_SCHEMA: &str = "cab-split/1";

pub const TRAIN_SCENES: usize = 32;
pub const VAL_SCENES: usize = 8;
pub const TEST_SCENES: usize = 8;
pub const TOTAL_SCENES: usize = TRAIN_SCENES + VAL_SCENES + TEST_SCENES;
pub const UNAMBIGUOUS_PER_SCENE: usize = 25;
pub const AMBIGUOUS_PER_SCENE: usize = 25;

/// How many scenes get each object count; the mean is 231/48 ≈ 4.81.
pub const OBJECT_COUNT_PLAN: [(usize, usize); 4] = [(3, 6), (4, 12), (5, 15), (6, 15)];

const MAX_SCENE_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: u32,
    pub split: Split,
    pub scene: Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction_id: u32,
    pub scene_id: u32,
    pub split: Split,
    pub text: String,
    pub template: String,
    pub ambiguity: Ambiguity,
    pub referent_ids: BTreeSet<u32>,
}

impl InstructionRecord {
    pub fn instruction(&self) -> Instruction {
        Instruction {
            tokens: Instruction::tokenize(&self.text),
            ambiguity_label: self.ambiguity,
            referent_ids: self.referent_ids.clone(),
        }
    }

    pub fn subgoal(&self) -> Result<SymbolicSubGoal> {
        self.template.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub grammar_version: String,
    pub seed: u64,
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
    pub scenes_sha256: String,
    pub instructions_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CabDataset {
    pub grammar_version: String,
    pub seed: u64,
    pub scenes: Vec<SceneRecord>,
    pub instructions: Vec<InstructionRecord>,
}

impl CabDataset {
    pub fn scene(&self, scene_id: u32) -> Option<&SceneRecord> {
        self.scenes.iter().find(|s| s.scene_id == scene_id)
    }

    pub fn scene_ids(&self, split: Split) -> Vec<u32> {
        self.scenes.iter().filter(|s| s.split == split).map(|s| s.scene_id).collect()
    }

    pub fn scenes_in(&self, split: Split) -> impl Iterator<Item = &SceneRecord> {
        self.scenes.iter().filter(move |s| s.split == split)
    }

    pub fn instructions_in(&self, split: Split) -> impl Iterator<Item = &InstructionRecord> {
        self.instructions.iter().filter(move |i| i.split == split)
    }

    pub fn scenes_jsonl(&self) -> Result<Vec<u8>> {
        jsonl::to_bytes(SCENE_SCHEMA, &self.scenes)
    }

    pub fn instructions_jsonl(&self) -> Result<Vec<u8>> {
        jsonl::to_bytes(INSTRUCTION_SCHEMA, &self.instructions)
    }

    /// Digest over the exported scene and instruction files.
    pub fn digest(&self) -> Result<String> {
        let scenes = self.scenes_jsonl()?;
        let instructions = self.instructions_jsonl()?;
        Ok(sha256_parts([scenes.as_slice(), instructions.as_slice()]))
    }

    /// Structural checks: unique scene ids, instructions pointing at scenes of
    /// their own split, consistent labels, and resolver agreement on every
    /// instruction.
    pub fn validate(&self) -> Result<()> {
        let mut splits = BTreeMap::new();
        for s in &self.scenes {
            if splits.insert(s.scene_id, s.split).is_some() {
                return Err(Error::SplitMix(format!("scene {} listed twice", s.scene_id)));
            }
        }
        let mut entity_sets = BTreeMap::new();
        for s in &self.scenes {
            entity_sets.insert(s.scene_id, ground_truth_entities(&s.scene)?);
        }
        for inst in &self.instructions {
            let split = splits.get(&inst.scene_id).ok_or_else(|| {
                Error::InvalidArgument(format!("instruction {} names unknown scene {}", inst.instruction_id, inst.scene_id))
            })?;
            if *split != inst.split {
                return Err(Error::SplitMix(format!(
                    "instruction {} is {} but scene {} is {}",
                    inst.instruction_id, inst.split, inst.scene_id, split
                )));
            }
            let instruction = inst.instruction();
            if !instruction.is_consistent() {
                return Err(Error::InvalidArgument(format!("instruction {} label disagrees with referents", inst.instruction_id)));
            }
            let goal = extract_template(&instruction)?;
            if goal.canonical() != inst.template {
                return Err(Error::InvalidArgument(format!(
                    "instruction {} parses to {} but records {}",
                    inst.instruction_id, goal, inst.template
                )));
            }
            let resolved = resolve_template(&goal, &entity_sets[&inst.scene_id]).ids();
            if resolved != inst.referent_ids {
                return Err(Error::InvalidArgument(format!(
                    "instruction {} resolves to {:?} but records {:?}",
                    inst.instruction_id, resolved, inst.referent_ids
                )));
            }
        }
        Ok(())
    }
}

fn matching<'a>(goal: &SymbolicSubGoal, scene: &'a Scene) -> Vec<&'a WorldObject> {
    scene.objects.iter().filter(|o| goal.matches_object(o)).collect()
}

/// Slot mask over (size, color, category).
fn restrict(object: &WorldObject, mask: u8) -> Option<SymbolicSubGoal> {
    SymbolicSubGoal::grasp(
        (mask & 4 != 0).then_some(object.category),
        (mask & 2 != 0).then_some(object.color),
        (mask & 1 != 0).then_some(object.size),
    )
    .ok()
}

/// For every object, each minimal slot subset that singles it out.
pub fn unambiguous_templates(scene: &Scene) -> Vec<(SymbolicSubGoal, u32)> {
    let mut out = Vec::new();
    for object in &scene.objects {
        let unique = |mask: u8| restrict(object, mask).is_some_and(|g| matching(&g, scene).len() == 1);
        for mask in 1u8..8 {
            let minimal = unique(mask) && (1u8..8).all(|sub| sub == mask || sub & mask != sub || !unique(sub));
            if minimal {
                out.push((restrict(object, mask).expect("nonempty mask"), object.id));
            }
        }
    }
    out
}

/// Templates reached by dropping attributes from each object's full
/// description, in every order, until at least two objects match.
pub fn ambiguous_templates(scene: &Scene) -> Vec<SymbolicSubGoal> {
    const ORDERS: [[u8; 3]; 6] = [[1, 2, 4], [1, 4, 2], [2, 1, 4], [2, 4, 1], [4, 1, 2], [4, 2, 1]];
    let mut found = BTreeSet::new();
    for object in &scene.objects {
        for order in ORDERS {
            let mut mask = 7u8;
            let mut dropped = 0;
            loop {
                let Some(goal) = restrict(object, mask) else { break };
                if matching(&goal, scene).len() >= 2 {
                    found.insert(goal);
                    break;
                }
                if dropped == 3 {
                    break;
                }
                mask &= !order[dropped];
                dropped += 1;
            }
        }
    }
    found.into_iter().collect()
}

fn random_surface<R: Rng + ?Sized>(goal: &SymbolicSubGoal, rng: &mut R) -> Surface {
    Surface {
        verb: rng.random_range(0..3),
        noun: rng.random_range(0..goal.category.map_or(1, |c| category_nouns(c).len())),
        adjective: rng.random_range(0..goal.size.map_or(1, |s| size_adjectives(s).len())),
    }
}

pub fn build_dataset(seed: u64) -> Result<CabDataset> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut counts: Vec<usize> = OBJECT_COUNT_PLAN
        .iter()
        .flat_map(|&(count, scenes)| std::iter::repeat_n(count, scenes))
        .collect();
    counts.shuffle(&mut master);

    let mut splits: Vec<Split> = std::iter::repeat_n(Split::Train, TRAIN_SCENES)
        .chain(std::iter::repeat_n(Split::Val, VAL_SCENES))
        .chain(std::iter::repeat_n(Split::Test, TEST_SCENES))
        .collect();
    splits.shuffle(&mut master);

    let mut scenes = Vec::with_capacity(TOTAL_SCENES);
    let mut instructions = Vec::with_capacity(TOTAL_SCENES * (UNAMBIGUOUS_PER_SCENE + AMBIGUOUS_PER_SCENE));
    for (scene_idx, (&count, &split)) in counts.iter().zip(&splits).enumerate() {
        let scene_id = scene_idx as u32;
        let config = SceneConfig {
            min_objects: count,
            max_objects: count,
            ..SceneConfig::default()
        };
        let mut built = None;
        for _ in 0..MAX_SCENE_ATTEMPTS {
            let scene = generate_scene(master.next_u64(), &config)?;
            let unambiguous = unambiguous_templates(&scene);
            let ambiguous = ambiguous_templates(&scene);
            if !unambiguous.is_empty() && !ambiguous.is_empty() {
                built = Some((scene, unambiguous, ambiguous));
                break;
            }
        }
        let (scene, unambiguous, ambiguous) = built.ok_or_else(|| Error::Generation {
            attempts: MAX_SCENE_ATTEMPTS,
            reason: format!("scene {scene_id}: no ambiguous and unambiguous description pair"),
        })?;

        let entities = ground_truth_entities(&scene)?;
        let mut push = |goal: &SymbolicSubGoal, rng: &mut ChaCha8Rng| {
            let text = realize(goal, random_surface(goal, rng));
            let referent_ids = resolve_template(goal, &entities).ids();
            let ambiguity = Ambiguity::from_match_count(referent_ids.len()).expect("template matches its source object");
            instructions.push(InstructionRecord {
                instruction_id: instructions.len() as u32,
                scene_id,
                split,
                text,
                template: goal.canonical(),
                ambiguity,
                referent_ids,
            });
        };
        for k in 0..UNAMBIGUOUS_PER_SCENE {
            push(&unambiguous[k % unambiguous.len()].0, &mut master);
        }
        for k in 0..AMBIGUOUS_PER_SCENE {
            push(&ambiguous[k % ambiguous.len()], &mut master);
        }
        scenes.push(SceneRecord { scene_id, split, scene });
    }
    Ok(CabDataset {
        grammar_version: GRAMMAR_VERSION.to_string(),
        seed,
        scenes,
        instructions,
    })
}

pub const SCENES_FILE: &str = "scenes.jsonl";
pub const INSTRUCTIONS_FILE: &str = "instructions.jsonl";
pub const SPLIT_FILE: &str = "split.json";

/// Writes `scenes.jsonl`, `instructions.jsonl` and `split.json` into `dir`.
pub fn export_dataset(ds: &CabDataset, dir: &Path) -> Result<SplitManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scenes = ds.scenes_jsonl()?;
    let instructions = ds.instructions_jsonl()?;
    let manifest = SplitManifest {
        grammar_version: ds.grammar_version.clone(),
        seed: ds.seed,
        train: ds.scene_ids(Split::Train),
        val: ds.scene_ids(Split::Val),
        test: ds.scene_ids(Split::Test),
        scenes_sha256: sha256_hex(&scenes),
        instructions_sha256: sha256_hex(&instructions),
    };
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    };
    write(SCENES_FILE, &scenes)?;
    write(INSTRUCTIONS_FILE, &instructions)?;
    let mut split = serde_json::to_value(&manifest)?;
    split["schema"] = SPLIT_SCHEMA.into();
    write(SPLIT_FILE, &serde_json::to_vec_pretty(&split)?)?;
    Ok(manifest)
}

pub fn import_dataset(dir: &Path) -> Result<CabDataset> {
    let split_path = dir.join(SPLIT_FILE);
    let text = std::fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: split_path.clone(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    let found = value.get("schema").and_then(|v| v.as_str()).unwrap_or("");
    if found != SPLIT_SCHEMA {
        return Err(Error::SchemaVersion {
            path: split_path,
            expected: SPLIT_SCHEMA.into(),
            found: found.into(),
        });
    }
    let manifest: SplitManifest = serde_json::from_value(value).map_err(|e| Error::Schema {
        path: split_path.clone(),
        line: 0,
        reason: e.to_string(),
    })?;
    if manifest.grammar_version != GRAMMAR_VERSION {
        return Err(Error::SchemaVersion {
            path: split_path,
            expected: GRAMMAR_VERSION.into(),
            found: manifest.grammar_version,
        });
    }

    let scenes_path = dir.join(SCENES_FILE);
    let instructions_path = dir.join(INSTRUCTIONS_FILE);
    let scenes: Vec<SceneRecord> = jsonl::read(&scenes_path, SCENE_SCHEMA)?;
    let instructions: Vec<InstructionRecord> = jsonl::read(&instructions_path, INSTRUCTION_SCHEMA)?;
    let ds = CabDataset {
        grammar_version: manifest.grammar_version.clone(),
        seed: manifest.seed,
        scenes,
        instructions,
    };
    for (recorded, bytes) in [
        (&manifest.scenes_sha256, ds.scenes_jsonl()?),
        (&manifest.instructions_sha256, ds.instructions_jsonl()?),
    ] {
        let found = sha256_hex(&bytes);
        if *recorded != found {
            return Err(Error::DigestMismatch {
                expected: recorded.clone(),
                found,
            });
        }
    }
    for split in Split::ALL {
        let listed = match split {
            Split::Train => &manifest.train,
            Split::Val => &manifest.val,
            Split::Test => &manifest.test,
        };
        if *listed != ds.scene_ids(split) {
            return Err(Error::SplitMix(format!("{split} scene list disagrees with {SCENES_FILE}")));
        }
    }
    ds.validate()?;
    Ok(ds)
}

/// Summary counts for fidelity checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub scenes: BTreeMap<Split, usize>,
    pub instructions: usize,
    pub ambiguous: usize,
    pub unambiguous: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub mean_objects: f64,
}

pub fn dataset_stats(ds: &CabDataset) -> DatasetStats {
    let counts: Vec<usize> = ds.scenes.iter().map(|s| s.scene.objects.len()).collect();
    let ambiguous = ds.instructions.iter().filter(|i| i.ambiguity == Ambiguity::Ambiguous).count();
    DatasetStats {
        scenes: Split::ALL.iter().map(|s| (*s, ds.scene_ids(*s).len())).collect(),
        instructions: ds.instructions.len(),
        ambiguous,
        unambiguous: ds.instructions.len() - ambiguous,
        min_objects: counts.iter().copied().min().unwrap_or(0),
        max_objects: counts.iter().copied().max().unwrap_or(0),
        mean_objects: counts.iter().sum::<usize>() as f64 / counts.len().max(1) as f64,
    }
}
