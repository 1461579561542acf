//! Fast action policy: a two-layer perceptron over the verified goal,
//! an observation summary and the gripper state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{norm, Matrix};
use crate::planner::bag_of_words;
use crate::world_sim::{Vec3, MAX_STEP};
use crate::{Error, Result};

/// Normalized action width: three displacement components plus grip.
pub const ACTION_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionVector {
    pub delta: Vec3,
    pub grip: f64,
}

impl ActionVector {
    pub fn new(delta: Vec3, grip: f64) -> Self {
        Self { delta, grip }
    }

    /// Displacement shortened to at most [`MAX_STEP`].
    pub fn clamped_delta(&self) -> Vec3 {
        let n = norm(&self.delta);
        if n > MAX_STEP {
            let s = MAX_STEP / n;
            [self.delta[0] * s, self.delta[1] * s, self.delta[2] * s]
        } else {
            self.delta
        }
    }

    pub fn grip_closed(&self) -> bool {
        self.grip >= 0.5
    }

    /// Regression target: displacement in units of the step length, then grip.
    pub fn normalized(&self) -> [f64; ACTION_DIM] {
        [
            self.delta[0] / MAX_STEP,
            self.delta[1] / MAX_STEP,
            self.delta[2] / MAX_STEP,
            self.grip,
        ]
    }

    /// Inverse of [`ActionVector::normalized`], clamping the displacement and
    /// the grip into their valid ranges.
    pub fn from_normalized(v: &[f64; ACTION_DIM]) -> Self {
        let raw = Self::new([v[0] * MAX_STEP, v[1] * MAX_STEP, v[2] * MAX_STEP], v[3]);
        Self::new(raw.clamped_delta(), v[3].clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyInput {
    pub g: Vec<f64>,
    pub obs: Vec<f64>,
    pub q: Vec3,
    /// Raw instruction features. Only the language-to-policy ablation sets this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction_features: Option<Vec<f64>>,
}

impl PolicyInput {
    pub fn features(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        x.extend_from_slice(&self.g);
        x.extend_from_slice(&self.obs);
        x.extend_from_slice(&self.q);
        if let Some(f) = &self.instruction_features {
            x.extend_from_slice(f);
        }
        x
    }

    pub fn dim(&self) -> usize {
        self.g.len() + self.obs.len() + 3 + self.instruction_features.as_ref().map_or(0, Vec::len)
    }

    /// Dotted paths of the populated fields, as they appear in episode logs.
    pub fn field_paths(&self) -> Vec<&'static str> {
        let mut paths = vec!["g", "obs", "q"];
        if self.instruction_features.is_some() {
            paths.push("instruction_features");
        }
        paths
    }
}

/// How instructions may reach the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyWiring {
    /// Instructions only reach the policy through the verified goal.
    Bottleneck,
    /// Bag-of-words instruction features are appended to the policy input.
    LanguageToFast,
}

impl PolicyWiring {
    pub fn assemble(self, g: Vec<f64>, obs: Vec<f64>, q: Vec3, tokens: &[String]) -> PolicyInput {
        PolicyInput {
            g,
            obs,
            q,
            instruction_features: match self {
                PolicyWiring::Bottleneck => None,
                PolicyWiring::LanguageToFast => Some(bag_of_words(tokens)),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w1: Matrix::zeros(hidden, input_dim),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(ACTION_DIM, hidden),
            b2: vec![0.0; ACTION_DIM],
        }
    }

    /// Fan-in scaled Gaussian initialization.
    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w1: Matrix::random(hidden, input_dim, (1.0 / input_dim as f64).sqrt(), rng),
            b1: vec![0.0; hidden],
            w2: Matrix::random(ACTION_DIM, hidden, (1.0 / hidden as f64).sqrt(), rng),
            b2: vec![0.0; ACTION_DIM],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden())
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().chain(&self.b2).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCache {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    /// Unclamped network output in normalized action units.
    pub output: [f64; ACTION_DIM],
}

pub fn policy_forward(input: &PolicyInput, params: &PolicyParams) -> Result<(ActionVector, PolicyCache)> {
    let x = input.features();
    if x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "policy input",
            expected: params.input_dim(),
            actual: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("policy input"));
    }
    let mut h = params.w1.matvec(&x);
    for (hi, b) in h.iter_mut().zip(&params.b1) {
        *hi = (*hi + b).tanh();
    }
    let y = params.w2.matvec(&h);
    let mut output = [0.0; ACTION_DIM];
    for (k, o) in output.iter_mut().enumerate() {
        *o = y[k] + params.b2[k];
    }
    let action = ActionVector::from_normalized(&output);
    Ok((action, PolicyCache { x, h, output }))
}

/// Accumulates parameter gradients into `grad` and returns `∂L/∂x` for the
/// concatenated input features.
pub fn policy_backward(
    params: &PolicyParams,
    cache: &PolicyCache,
    d_output: &[f64; ACTION_DIM],
    grad: &mut PolicyParams,
) -> Vec<f64> {
    grad.w2.add_outer(1.0, d_output, &cache.h);
    for (g, d) in grad.b2.iter_mut().zip(d_output) {
        *g += d;
    }
    let dh = params.w2.matvec_t(d_output);
    let dz: Vec<f64> = dh.iter().zip(&cache.h).map(|(d, h)| d * (1.0 - h * h)).collect();
    grad.w1.add_outer(1.0, &dz, &cache.x);
    for (g, d) in grad.b1.iter_mut().zip(&dz) {
        *g += d;
    }
    params.w1.matvec_t(&dz)
}

/// One logged policy step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStepRecord {
    pub policy_input: PolicyInput,
    pub action: ActionVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub passed: bool,
    pub steps_checked: usize,
    pub replays: usize,
    pub identical_replays: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    /// The first violation as an error, if any.
    pub fn into_result(self) -> Result<Self> {
        match self.violations.first() {
            Some(path) => Err(Error::BottleneckViolation { path: path.clone() }),
            None => Ok(self),
        }
    }
}

/// Checks that no instruction-derived field reached the policy, then replays
/// every step with each alternative instruction and requires bitwise-equal
/// actions.
pub fn bottleneck_audit(
    steps: &[PolicyStepRecord],
    params: &PolicyParams,
    wiring: PolicyWiring,
    alternatives: &[Vec<String>],
) -> Result<AuditReport> {
    let mut violations = Vec::new();
    let mut replays = 0;
    let mut identical = 0;
    for (i, step) in steps.iter().enumerate() {
        let input = &step.policy_input;
        if input.instruction_features.is_some() {
            violations.push(format!("steps[{i}].policy_input.instruction_features"));
        }
        let mut step_ok = true;
        for tokens in alternatives {
            let replay = wiring.assemble(input.g.clone(), input.obs.clone(), input.q, tokens);
            let (action, _) = policy_forward(&replay, params)?;
            replays += 1;
            if bits(&action) == bits(&step.action) {
                identical += 1;
            } else {
                step_ok = false;
            }
        }
        if !step_ok {
            violations.push(format!("steps[{i}].action"));
        }
    }
    Ok(AuditReport {
        passed: violations.is_empty(),
        steps_checked: steps.len(),
        replays,
        identical_replays: identical,
        violations,
    })
}

fn bits(a: &ActionVector) -> [u64; 4] {
    [a.delta[0].to_bits(), a.delta[1].to_bits(), a.delta[2].to_bits(), a.grip.to_bits()]
}
