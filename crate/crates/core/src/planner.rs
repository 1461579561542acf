//! Grammar-based prospective planner: normalizes instructions into symbolic
//! `grasp_*` templates and resolves templates against grounded entities.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gsm::{AttrBlock, EntityNode, EntitySet, ATTR_DIM};
use crate::world_sim::{Category, Color, Size, WorldObject};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ambiguity {
    Unambiguous,
    Ambiguous,
}

impl Ambiguity {
    pub fn from_match_count(n: usize) -> Option<Self> {
        match n {
            0 => None,
            1 => Some(Ambiguity::Unambiguous),
            _ => Some(Ambiguity::Ambiguous),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub tokens: Vec<String>,
    pub ambiguity_label: Ambiguity,
    pub referent_ids: BTreeSet<u32>,
}

impl Instruction {
    pub fn tokenize(text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_lowercase).collect()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Label and referents must agree: one referent iff unambiguous.
    pub fn is_consistent(&self) -> bool {
        Ambiguity::from_match_count(self.referent_ids.len()) == Some(self.ambiguity_label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Grasp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymbolicSubGoal {
    pub verb: Verb,
    pub category: Option<Category>,
    pub color: Option<Color>,
    pub size: Option<Size>,
}

pub const TEMPLATE_DIM: usize = ATTR_DIM;

impl SymbolicSubGoal {
    pub fn grasp(category: Option<Category>, color: Option<Color>, size: Option<Size>) -> Result<Self> {
        let goal = Self {
            verb: Verb::Grasp,
            category,
            color,
            size,
        };
        if goal.slot_count() == 0 {
            return Err(Error::InvalidArgument("sub-goal needs at least one attribute slot".into()));
        }
        Ok(goal)
    }

    pub fn slot_count(&self) -> usize {
        usize::from(self.category.is_some())
            + usize::from(self.color.is_some())
            + usize::from(self.size.is_some())
    }

    /// Canonical snake_case template, e.g. `grasp_small_red_block`.
    pub fn canonical(&self) -> String {
        let mut s = String::from("grasp");
        if let Some(size) = self.size {
            s.push('_');
            s.push_str(size.name());
        }
        if let Some(color) = self.color {
            s.push('_');
            s.push_str(color.name());
        }
        if let Some(category) = self.category {
            s.push('_');
            s.push_str(category.name());
        }
        s
    }

    /// Slot one-hots; unset slots are all-zero wildcards.
    pub fn features(&self) -> Vec<f64> {
        let mut v = vec![0.0; TEMPLATE_DIM];
        if let Some(c) = self.category {
            v[c.index()] = 1.0;
        }
        if let Some(c) = self.color {
            v[4 + c.index()] = 1.0;
        }
        if let Some(s) = self.size {
            v[8 + s.index()] = 1.0;
        }
        v
    }

    pub fn matches_attr(&self, attr: &AttrBlock) -> bool {
        self.category.is_none_or(|c| attr.category() == Some(c))
            && self.color.is_none_or(|c| attr.color() == Some(c))
            && self.size.is_none_or(|s| attr.size() == Some(s))
    }

    pub fn matches_object(&self, object: &WorldObject) -> bool {
        self.category.is_none_or(|c| object.category == c)
            && self.color.is_none_or(|c| object.color == c)
            && self.size.is_none_or(|s| object.size == s)
    }
}

impl fmt::Display for SymbolicSubGoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl FromStr for SymbolicSubGoal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('_');
        if parts.next() != Some("grasp") {
            return Err(Error::Parse {
                position: 0,
                reason: format!("template `{s}` must start with grasp"),
            });
        }
        let (mut category, mut color, mut size) = (None, None, None);
        for (i, part) in parts.enumerate() {
            let dup = || Error::Parse {
                position: i + 1,
                reason: format!("repeated slot `{part}`"),
            };
            if let Ok(v) = part.parse::<Size>() {
                if size.replace(v).is_some() {
                    return Err(dup());
                }
            } else if let Ok(v) = part.parse::<Color>() {
                if color.replace(v).is_some() {
                    return Err(dup());
                }
            } else if let Ok(v) = part.parse::<Category>() {
                if category.replace(v).is_some() {
                    return Err(dup());
                }
            } else {
                return Err(Error::Parse {
                    position: i + 1,
                    reason: format!("unknown slot `{part}`"),
                });
            }
        }
        SymbolicSubGoal::grasp(category, color, size).map_err(|_| Error::Parse {
            position: 1,
            reason: "template has no slots".into(),
        })
    }
}

const VERB_PHRASES: &[&[&str]] = &[&["pick", "up"], &["get"], &["grab"]];

fn category_word(word: &str) -> Option<Category> {
    match word {
        "block" | "cube" => Some(Category::Block),
        "mug" | "cup" => Some(Category::Mug),
        "bottle" => Some(Category::Bottle),
        "fruit" | "apple" => Some(Category::Fruit),
        _ => None,
    }
}

fn size_word(word: &str) -> Option<Size> {
    match word {
        "small" | "little" => Some(Size::Small),
        "large" | "big" => Some(Size::Large),
        _ => None,
    }
}

/// Surface nouns per category, canonical word first.
pub fn category_nouns(category: Category) -> &'static [&'static str] {
    match category {
        Category::Block => &["block", "cube"],
        Category::Mug => &["mug", "cup"],
        Category::Bottle => &["bottle"],
        Category::Fruit => &["fruit", "apple"],
    }
}

pub fn size_adjectives(size: Size) -> &'static [&'static str] {
    match size {
        Size::Small => &["small", "little"],
        Size::Large => &["large", "big"],
    }
}

/// Closed vocabulary of the instruction grammar, in feature order.
pub const VOCAB: &[&str] = &[
    "pick", "up", "get", "grab", "the", "one", "small", "little", "large", "big", "red", "green",
    "blue", "yellow", "block", "cube", "mug", "cup", "bottle", "fruit", "apple",
];

/// Binary bag-of-words over [`VOCAB`]; raw instruction features.
pub fn bag_of_words(tokens: &[String]) -> Vec<f64> {
    let mut v = vec![0.0; VOCAB.len()];
    for t in tokens {
        if let Some(i) = VOCAB.iter().position(|w| w == t) {
            v[i] = 1.0;
        }
    }
    v
}

pub fn extract_template(instruction: &Instruction) -> Result<SymbolicSubGoal> {
    parse_tokens(&instruction.tokens)
}

pub fn parse_tokens(tokens: &[String]) -> Result<SymbolicSubGoal> {
    let err = |position: usize, reason: &str| Error::Parse {
        position,
        reason: reason.to_string(),
    };
    let mut pos = VERB_PHRASES
        .iter()
        .find(|phrase| {
            tokens.len() >= phrase.len() && phrase.iter().zip(tokens).all(|(a, b)| a == b)
        })
        .map(|phrase| phrase.len())
        .ok_or_else(|| err(0, "expected `pick up`, `get` or `grab`"))?;
    if tokens.get(pos).map(String::as_str) != Some("the") {
        return Err(err(pos, "expected `the`"));
    }
    pos += 1;

    let (mut size, mut color) = (None, None);
    loop {
        let Some(word) = tokens.get(pos) else {
            return Err(err(pos, "missing noun"));
        };
        if let Some(s) = size_word(word) {
            if size.replace(s).is_some() {
                return Err(err(pos, "size given twice"));
            }
        } else if let Ok(c) = word.parse::<Color>() {
            if color.replace(c).is_some() {
                return Err(err(pos, "color given twice"));
            }
        } else {
            break;
        }
        pos += 1;
    }

    let noun = &tokens[pos];
    let category = if noun == "one" {
        if size.is_none() && color.is_none() {
            return Err(err(pos, "`one` needs a size or color"));
        }
        None
    } else {
        Some(category_word(noun).ok_or_else(|| err(pos, "unknown noun"))?)
    };
    if pos + 1 != tokens.len() {
        return Err(err(pos + 1, "trailing tokens"));
    }
    SymbolicSubGoal::grasp(category, color, size)
}

/// Choice of paraphrase for each lexical slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Surface {
    pub verb: usize,
    pub noun: usize,
    pub adjective: usize,
}

pub fn realize(goal: &SymbolicSubGoal, surface: Surface) -> String {
    let mut words: Vec<&str> = VERB_PHRASES[surface.verb % VERB_PHRASES.len()].to_vec();
    words.push("the");
    if let Some(size) = goal.size {
        let adjs = size_adjectives(size);
        words.push(adjs[surface.adjective % adjs.len()]);
    }
    if let Some(color) = goal.color {
        words.push(color.name());
    }
    match goal.category {
        Some(c) => {
            let nouns = category_nouns(c);
            words.push(nouns[surface.noun % nouns.len()]);
        }
        None => words.push("one"),
    }
    words.join(" ")
}

/// Every distinct surface form of a template.
pub fn paraphrases(goal: &SymbolicSubGoal) -> Vec<String> {
    let nouns = goal.category.map_or(1, |c| category_nouns(c).len());
    let adjs = goal.size.map_or(1, |s| size_adjectives(s).len());
    let mut out = Vec::new();
    for verb in 0..VERB_PHRASES.len() {
        for noun in 0..nouns {
            for adjective in 0..adjs {
                out.push(realize(goal, Surface { verb, noun, adjective }));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub entities: Vec<EntityNode>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn ids(&self) -> BTreeSet<u32> {
        self.entities.iter().map(|e| e.id).collect()
    }
}

pub fn resolve_template(goal: &SymbolicSubGoal, entities: &EntitySet) -> CandidateSet {
    CandidateSet {
        entities: entities
            .entities
            .iter()
            .filter(|e| goal.matches_attr(&e.attr))
            .cloned()
            .collect(),
    }
}

/// Highest detection confidence; equal confidences go to the lowest id.
pub fn tiebreak_by_confidence(candidates: &CandidateSet) -> Result<&EntityNode> {
    candidates
        .entities
        .iter()
        .reduce(|best, e| {
            if e.confidence > best.confidence || (e.confidence == best.confidence && e.id < best.id) {
                e
            } else {
                best
            }
        })
        .ok_or(Error::EmptyCandidates)
}

/// Result of one planning round.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub subgoal: SymbolicSubGoal,
    pub candidates: CandidateSet,
    pub invocations: usize,
    /// Grounding failed twice; the agent should ask for clarification.
    pub clarify: bool,
}

/// Parses once; if the template grounds to nothing, re-invokes once on the
/// current entity set and then gives up with a clarify.
pub fn plan(instruction: &Instruction, entities: &EntitySet) -> Result<PlanOutcome> {
    let mut invocations = 0;
    let mut last = None;
    for _ in 0..2 {
        invocations += 1;
        let subgoal = extract_template(instruction)?;
        let candidates = resolve_template(&subgoal, entities);
        let grounded = !candidates.is_empty();
        last = Some((subgoal, candidates));
        if grounded {
            break;
        }
    }
    let (subgoal, candidates) = last.expect("at least one invocation");
    Ok(PlanOutcome {
        clarify: candidates.is_empty(),
        subgoal,
        candidates,
        invocations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsm::APPEARANCE_DIM;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn parse(text: &str) -> Result<SymbolicSubGoal> {
        parse_tokens(&Instruction::tokenize(text))
    }

    fn entity(id: u32, category: Category, color: Color, size: Size, confidence: f64) -> EntityNode {
        EntityNode {
            id,
            position: [0.5, 0.5, 0.02],
            attr: AttrBlock::new(category, color, size),
            appearance: vec![0.0; APPEARANCE_DIM],
            birth_step: 0,
            confidence,
        }
    }

    #[test]
    fn blue_block() {
        let g = parse("pick up the blue block").unwrap();
        assert_eq!(g.color, Some(Color::Blue));
        assert_eq!(g.category, Some(Category::Block));
        assert_eq!(g.size, None);
        assert_eq!(g.canonical(), "grasp_blue_block");
    }

    #[test]
    fn red_one_leaves_category_unset() {
        let g = parse("get the red one").unwrap();
        assert_eq!(g.color, Some(Color::Red));
        assert_eq!(g.category, None);
    }

    #[test]
    fn apple_paraphrases_agree() {
        assert_eq!(parse("grab the apple").unwrap(), parse("get the apple").unwrap());
        assert_eq!(parse("grab the apple").unwrap().canonical(), "grasp_fruit");
    }

    #[test]
    fn green_mug_template() {
        assert_eq!(parse("pick up the green mug").unwrap().canonical(), "grasp_green_mug");
    }

    #[test]
    fn every_paraphrase_maps_to_its_template() {
        for &category in [None, Some(Category::Block), Some(Category::Fruit)].iter() {
            for &color in [None, Some(Color::Green)].iter() {
                for &size in [None, Some(Size::Large)].iter() {
                    let Ok(goal) = SymbolicSubGoal::grasp(category, color, size) else {
                        continue;
                    };
                    for text in paraphrases(&goal) {
                        assert_eq!(parse(&text).unwrap(), goal, "{text}");
                    }
                }
            }
        }
    }

    #[test]
    fn out_of_grammar_is_a_parse_error() {
        for text in [
            "",
            "pick the block",
            "get a block",
            "get the one",
            "get the red red block",
            "get the block please",
            "get the spoon",
            "get the red",
        ] {
            assert!(matches!(parse(text), Err(Error::Parse { .. })), "{text}");
        }
    }

    #[test]
    fn canonical_reparse_is_identity() {
        for category in std::iter::once(None).chain(Category::ALL.iter().copied().map(Some)) {
            for color in std::iter::once(None).chain(Color::ALL.iter().copied().map(Some)) {
                for size in std::iter::once(None).chain(Size::ALL.iter().copied().map(Some)) {
                    if let Ok(g) = SymbolicSubGoal::grasp(category, color, size) {
                        assert_eq!(g.canonical().parse::<SymbolicSubGoal>().unwrap(), g);
                    }
                }
            }
        }
        assert!("grasp".parse::<SymbolicSubGoal>().is_err());
        assert!("grasp_red_red".parse::<SymbolicSubGoal>().is_err());
    }

    #[test]
    fn resolve_unique_match() {
        let set = EntitySet::from_nodes(vec![
            entity(0, Category::Block, Color::Blue, Size::Small, 0.5),
            entity(1, Category::Block, Color::Red, Size::Small, 0.5),
        ])
        .unwrap();
        let goal = SymbolicSubGoal::grasp(None, Some(Color::Blue), None).unwrap();
        assert_eq!(resolve_template(&goal, &set).ids(), BTreeSet::from([0]));
    }

    #[test]
    fn resolve_category_matches_all_blocks() {
        let set = EntitySet::from_nodes(vec![
            entity(0, Category::Block, Color::Red, Size::Small, 0.5),
            entity(1, Category::Block, Color::Red, Size::Large, 0.5),
            entity(2, Category::Block, Color::Blue, Size::Small, 0.5),
            entity(3, Category::Mug, Color::Blue, Size::Small, 0.5),
        ])
        .unwrap();
        let goal = SymbolicSubGoal::grasp(Some(Category::Block), None, None).unwrap();
        assert_eq!(resolve_template(&goal, &set).ids(), BTreeSet::from([0, 1, 2]));
        let green = SymbolicSubGoal::grasp(None, Some(Color::Green), None).unwrap();
        assert!(resolve_template(&green, &set).is_empty());
    }

    #[test]
    fn resolve_agrees_with_attribute_filter_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let nodes: Vec<EntityNode> = (0..rng.random_range(1..8u32))
                .map(|id| {
                    entity(
                        id,
                        Category::ALL[rng.random_range(0..4)],
                        Color::ALL[rng.random_range(0..4)],
                        Size::ALL[rng.random_range(0..2)],
                        0.5,
                    )
                })
                .collect();
            let set = EntitySet::from_nodes(nodes.clone()).unwrap();
            let pick = |rng: &mut ChaCha8Rng, n: usize| rng.random_bool(0.5).then(|| rng.random_range(0..n));
            let Ok(goal) = SymbolicSubGoal::grasp(
                pick(&mut rng, 4).map(|i| Category::ALL[i]),
                pick(&mut rng, 4).map(|i| Color::ALL[i]),
                pick(&mut rng, 2).map(|i| Size::ALL[i]),
            ) else {
                continue;
            };
            let expected: BTreeSet<u32> = nodes
                .iter()
                .filter(|n| {
                    goal.category.is_none_or(|c| n.attr.0[c.index()] == 1.0)
                        && goal.color.is_none_or(|c| n.attr.0[4 + c.index()] == 1.0)
                        && goal.size.is_none_or(|s| n.attr.0[8 + s.index()] == 1.0)
                })
                .map(|n| n.id)
                .collect();
            assert_eq!(resolve_template(&goal, &set).ids(), expected);
        }
    }

    #[test]
    fn tiebreak_prefers_confidence_then_low_id() {
        let c = CandidateSet {
            entities: vec![
                entity(4, Category::Block, Color::Red, Size::Small, 0.9),
                entity(2, Category::Block, Color::Red, Size::Small, 0.4),
            ],
        };
        assert_eq!(tiebreak_by_confidence(&c).unwrap().id, 4);
        let tied = CandidateSet {
            entities: vec![
                entity(5, Category::Block, Color::Red, Size::Small, 0.7),
                entity(3, Category::Block, Color::Red, Size::Small, 0.7),
            ],
        };
        assert_eq!(tiebreak_by_confidence(&tied).unwrap().id, 3);
        assert!(matches!(
            tiebreak_by_confidence(&CandidateSet { entities: vec![] }),
            Err(Error::EmptyCandidates)
        ));
    }

    #[test]
    fn tiebreak_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let n = rng.random_range(1..10);
            let entities: Vec<EntityNode> = (0..n)
                .map(|i| {
                    // coarse confidences so ties happen
                    let conf = f64::from(rng.random_range(0..4u32)) / 4.0;
                    entity(i * 3 % 17, Category::Mug, Color::Red, Size::Large, conf)
                })
                .collect();
            let mut best = &entities[0];
            for e in &entities {
                if e.confidence > best.confidence || (e.confidence == best.confidence && e.id < best.id) {
                    best = e;
                }
            }
            let c = CandidateSet { entities: entities.clone() };
            assert_eq!(tiebreak_by_confidence(&c).unwrap().id, best.id);
        }
    }

    #[test]
    fn plan_reinvokes_once_then_clarifies() {
        let set = EntitySet::from_nodes(vec![entity(0, Category::Mug, Color::Red, Size::Small, 0.5)]).unwrap();
        let instruction = Instruction {
            tokens: Instruction::tokenize("get the green one"),
            ambiguity_label: Ambiguity::Unambiguous,
            referent_ids: BTreeSet::from([0]),
        };
        let out = plan(&instruction, &set).unwrap();
        assert_eq!(out.invocations, 2);
        assert!(out.clarify);
        let found = Instruction {
            tokens: Instruction::tokenize("get the red one"),
            ..instruction
        };
        let out = plan(&found, &set).unwrap();
        assert_eq!(out.invocations, 1);
        assert!(!out.clarify);
    }

    #[test]
    fn bag_of_words_covers_vocabulary() {
        let v = bag_of_words(&Instruction::tokenize("pick up the big blue cube"));
        assert_eq!(v.iter().sum::<f64>(), 6.0);
        assert_eq!(v.len(), VOCAB.len());
    }
}
