use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gsm::{
    encode_entities_cached, EncoderCache, EncoderParams, EntitySet, SceneGraph, APPEARANCE_DIM,
    OBS_DIM,
};
use crate::planner::{bag_of_words, SymbolicSubGoal, TEMPLATE_DIM, VOCAB};
use crate::policy::{policy_forward, ActionVector, PolicyCache, PolicyInput, PolicyParams, PolicyWiring};
use crate::saca::{saca_forward_cached, SacaCache, SacaParams, VerifiedGoal, ATTENTION_DIM};
use crate::world_sim::{Perturbation, Scene, Vec3};
use crate::Result;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Contrastive weight forced to zero.
    NoGac,
    /// Bag-of-words instruction features replace the template as the query.
    NoPlanner,
    /// Entity rows replaced by fixed patch mixtures; the encoder gets no gradient.
    NoGsm,
    /// Raw instruction features appended to the policy input.
    LangToFast,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoGac,
        Ablation::NoPlanner,
        Ablation::NoGsm,
        Ablation::LangToFast,
    ];
}

/// Semantic input of the policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    #[default]
    VerifiedGoal,
    Subgoal,
    Language,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingModel {
    pub ablation: Ablation,
    pub conditioning: Conditioning,
    pub encoder: EncoderParams,
    pub saca: SacaParams,
    pub policy: PolicyParams,
}

/// Entities perceived in one frame plus the encoder caches of the nodes the
/// encoder gradient may reach (empty under the patch ablation).
#[derive(Debug, Clone)]
pub struct Perception {
    pub graph: SceneGraph,
    pub caches: Vec<EncoderCache>,
}

#[derive(Debug, Clone)]
pub struct StepForward {
    pub entities: EntitySet,
    pub query_features: Vec<f64>,
    pub goal: VerifiedGoal,
    pub saca_cache: SacaCache,
    pub input: PolicyInput,
    pub action: ActionVector,
    pub policy_cache: PolicyCache,
}

impl GroundingModel {
    pub fn query_dim(ablation: Ablation) -> usize {
        match ablation {
            Ablation::NoPlanner => VOCAB.len(),
            _ => TEMPLATE_DIM,
        }
    }

    pub fn goal_dim(conditioning: Conditioning) -> usize {
        match conditioning {
            Conditioning::VerifiedGoal => ATTENTION_DIM,
            Conditioning::Subgoal => TEMPLATE_DIM,
            Conditioning::Language => VOCAB.len(),
        }
    }

    pub fn policy_input_dim(ablation: Ablation, conditioning: Conditioning) -> usize {
        let extra = if ablation == Ablation::LangToFast { VOCAB.len() } else { 0 };
        Self::goal_dim(conditioning) + OBS_DIM + 3 + extra
    }

    pub fn new<R: Rng + ?Sized>(
        ablation: Ablation,
        conditioning: Conditioning,
        hidden: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        let encoder = EncoderParams::random(init_scale, rng);
        let saca = SacaParams::random(Self::query_dim(ablation), ATTENTION_DIM, init_scale, rng);
        let policy = PolicyParams::random(Self::policy_input_dim(ablation, conditioning), hidden, rng);
        Self {
            ablation,
            conditioning,
            encoder,
            saca,
            policy,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            ablation: self.ablation,
            conditioning: self.conditioning,
            encoder: self.encoder.zeros_like(),
            saca: self.saca.zeros_like(),
            policy: self.policy.zeros_like(),
        }
    }

    pub fn wiring(&self) -> PolicyWiring {
        match self.ablation {
            Ablation::LangToFast => PolicyWiring::LanguageToFast,
            _ => PolicyWiring::Bottleneck,
        }
    }

    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("encoder.weights", self.encoder.weights.data()),
            ("saca.w_q", self.saca.w_q.data()),
            ("saca.w_k", self.saca.w_k.data()),
            ("saca.w_v", self.saca.w_v.data()),
            ("policy.w1", self.policy.w1.data()),
            ("policy.b1", &self.policy.b1),
            ("policy.w2", self.policy.w2.data()),
            ("policy.b2", &self.policy.b2),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("encoder.weights", self.encoder.weights.data_mut()),
            ("saca.w_q", self.saca.w_q.data_mut()),
            ("saca.w_k", self.saca.w_k.data_mut()),
            ("saca.w_v", self.saca.w_v.data_mut()),
            ("policy.w1", self.policy.w1.data_mut()),
            ("policy.b1", &mut self.policy.b1),
            ("policy.w2", self.policy.w2.data_mut()),
            ("policy.b2", &mut self.policy.b2),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    pub fn query_features(&self, tokens: &[String], subgoal: &SymbolicSubGoal) -> Vec<f64> {
        match self.ablation {
            Ablation::NoPlanner => bag_of_words(tokens),
            _ => subgoal.features(),
        }
    }

    pub fn perceive(&self, scene: &Scene, perturbation: Option<&Perturbation>, step: u64) -> Result<Perception> {
        let (mut graph, caches) = encode_entities_cached(scene, perturbation, &self.encoder, step)?;
        if self.ablation != Ablation::NoGsm {
            return Ok(Perception { graph, caches });
        }
        // Fixed per-scene mixing: every patch keeps half of its own object and
        // spreads the rest over all objects.
        let n = graph.nodes.len();
        let mut rng = ChaCha8Rng::seed_from_u64(scene.rng_seed ^ 0x9a7c_4e5d);
        let originals: Vec<(Vec<f64>, Vec3)> = graph.nodes.iter().map(|node| (node.appearance.clone(), node.position)).collect();
        for (i, node) in graph.nodes.iter_mut().enumerate() {
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            let mut app = vec![0.0; APPEARANCE_DIM];
            let mut pos = [0.0; 3];
            for (j, (a, p)) in originals.iter().enumerate() {
                let w = 0.5 * raw[j] / total + if i == j { 0.5 } else { 0.0 };
                for (x, y) in app.iter_mut().zip(a) {
                    *x += w * y;
                }
                for k in 0..3 {
                    pos[k] += w * p[k];
                }
            }
            node.appearance = app;
            node.position = pos;
        }
        Ok(Perception { graph, caches: Vec::new() })
    }

    fn policy_goal(&self, goal: &VerifiedGoal, tokens: &[String], subgoal: &SymbolicSubGoal) -> Vec<f64> {
        match self.conditioning {
            Conditioning::VerifiedGoal => goal.g.clone(),
            Conditioning::Subgoal => subgoal.features(),
            Conditioning::Language => bag_of_words(tokens),
        }
    }

    /// Attention over `entities` followed by one policy step.
    pub fn act(
        &self,
        entities: EntitySet,
        obs: Vec<f64>,
        gripper: Vec3,
        tokens: &[String],
        subgoal: &SymbolicSubGoal,
    ) -> Result<StepForward> {
        let query_features = self.query_features(tokens, subgoal);
        let (goal, saca_cache) = saca_forward_cached(&query_features, &entities, &self.saca)?;
        let input = self
            .wiring()
            .assemble(self.policy_goal(&goal, tokens, subgoal), obs, gripper, tokens);
        let (action, policy_cache) = policy_forward(&input, &self.policy)?;
        Ok(StepForward {
            entities,
            query_features,
            goal,
            saca_cache,
            input,
            action,
            policy_cache,
        })
    }
}
