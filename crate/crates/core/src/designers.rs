//! Incentive designers: the differentiable incentive network used by the
//! meta-gradient designer, outer-objective surrogate helpers, and the
//! baseline designers (dual RL in discrete and continuous action spaces,
//! static tax schedules, free market).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffgraph::{ParamRole, Parameter, Tape, Tensor, Var};
use crate::nets::{self, Adam, Head, MlpSpec};

#[derive(Debug, thiserror::Error)]
pub enum DesignerError {
    #[error("incentive levels must be non-empty and finite")]
    BadLevels,
    #[error("discrete designer action space {size} exceeds cap {cap}")]
    ActionSpaceTooLarge { size: usize, cap: usize },
    #[error("non-finite sample from continuous designer after resampling")]
    NonFiniteSample,
    #[error("trajectory lengths disagree")]
    LengthMismatch,
    #[error(transparent)]
    Net(#[from] nets::NetsError),
    #[error(transparent)]
    Graph(#[from] crate::diffgraph::DiffError),
}

/// Designer-owned differentiable map from a global observation to a bounded
/// incentive (or tax-rate) vector.
pub struct IncentiveNet {
    pub spec: MlpSpec,
    pub params: Vec<Parameter>,
}

impl IncentiveNet {
    /// Head over per-action incentives in (0, 2), used in the escape room.
    pub fn for_escape_room(
        obs_len: usize,
        n_actions: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self, DesignerError> {
        let mut layers = vec![obs_len];
        layers.extend_from_slice(hidden);
        layers.push(n_actions);
        let spec = MlpSpec::new(layers, Head::ScaledSigmoid { lo: 0.0, hi: 2.0 }, seed)?;
        let params = spec.init("designer", ParamRole::Designer);
        Ok(IncentiveNet { spec, params })
    }

    /// Head over marginal tax rates in (0, 1), one per bracket.
    pub fn for_tax(
        obs_len: usize,
        n_brackets: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self, DesignerError> {
        let mut layers = vec![obs_len];
        layers.extend_from_slice(hidden);
        layers.push(n_brackets);
        let spec = MlpSpec::new(layers, Head::ScaledSigmoid { lo: 0.0, hi: 1.0 }, seed)?;
        let params = spec.init("designer", ParamRole::Designer);
        Ok(IncentiveNet { spec, params })
    }

    pub fn register<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        nets::register(tape, &self.params)
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        vars: &[Var<'t>],
        input: &[f64],
    ) -> Result<Var<'t>, DesignerError> {
        let x = tape.constant(Tensor::vector(input.to_vec()));
        Ok(nets::mlp_forward(&self.spec, vars, x)?)
    }

    /// Evaluate the head without building a persistent graph.
    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>, DesignerError> {
        let tape = Tape::new();
        let vars = self.register(&tape);
        let out = self.forward(&tape, &vars, input)?;
        Ok(out.value().data)
    }
}

/// Probability ratio for the outer clipped surrogate: exp(logp - logp_old)
/// where logp_old is the same node detached. The value is exactly 1; the
/// gradient flows through everything logp depends on.
pub fn outer_ratio<'t>(logp: Var<'t>) -> Var<'t> {
    (logp - logp.detach()).exp()
}

/// Clipped-surrogate term for one step: min(r * A, clip(r) * A).
pub fn clipped_term<'t>(ratio: Var<'t>, advantage: f64, clip_eps: f64) -> Var<'t> {
    let adv = ratio.tape.scalar(advantage);
    let unclipped = ratio * adv;
    let clipped = ratio.clip(1.0 - clip_eps, 1.0 + clip_eps) * adv;
    unclipped.min(clipped)
}

/// Hyperparameters for the meta-gradient designer's outer update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaGradConfig {
    /// Learning rate for the surrogate (welfare) term.
    pub alpha_id: f64,
    /// Learning rate for the incentivization-cost term, stepped by its own
    /// optimizer as the two terms live on different scales.
    pub alpha_cost: f64,
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub critic_lr: f64,
    pub critic_tau: f64,
}

impl Default for MetaGradConfig {
    fn default() -> Self {
        MetaGradConfig {
            alpha_id: 7.93e-4,
            alpha_cost: 6.03e-5,
            clip_eps: 0.2,
            gamma: 0.99,
            gae_lambda: 0.97,
            critic_lr: 1e-3,
            critic_tau: 0.01,
        }
    }
}

/// Decode a flat categorical index into one incentive level per slot,
/// lexicographically: the first slot is the most significant digit.
pub fn decode_levels(index: usize, levels: &[f64], n_slots: usize) -> Vec<f64> {
    let base = levels.len();
    let mut rem = index;
    let mut out = vec![0.0; n_slots];
    for slot in (0..n_slots).rev() {
        out[slot] = levels[rem % base];
        rem /= base;
    }
    out
}

const DISCRETE_ACTION_CAP: usize = 4096;

/// Baseline designer that is itself an RL agent over a discretized incentive
/// space: one categorical action picks an incentive level for every
/// agent-action slot at once.
pub struct DualDiscreteDesigner {
    pub levels: Vec<f64>,
    pub n_slots: usize,
    pub spec: MlpSpec,
    pub params: Vec<Parameter>,
    pub adam: Adam,
    pub lr: f64,
    pub gamma: f64,
    pub entropy_coef: f64,
}

impl DualDiscreteDesigner {
    pub fn new(
        obs_len: usize,
        n_slots: usize,
        levels: Vec<f64>,
        hidden: &[usize],
        lr: f64,
        gamma: f64,
        entropy_coef: f64,
        seed: u64,
    ) -> Result<Self, DesignerError> {
        if levels.is_empty() || levels.iter().any(|l| !l.is_finite()) {
            return Err(DesignerError::BadLevels);
        }
        let size = levels.len().checked_pow(n_slots as u32).unwrap_or(usize::MAX);
        if size > DISCRETE_ACTION_CAP {
            return Err(DesignerError::ActionSpaceTooLarge { size, cap: DISCRETE_ACTION_CAP });
        }
        let mut layers = vec![obs_len];
        layers.extend_from_slice(hidden);
        layers.push(size);
        let spec = MlpSpec::new(layers, Head::Softmax, seed)?;
        let params = spec.init("dual_d", ParamRole::Designer);
        let adam = Adam::new(lr, &params);
        Ok(DualDiscreteDesigner { levels, n_slots, spec, params, adam, lr, gamma, entropy_coef })
    }

    pub fn n_choices(&self) -> usize {
        self.levels.len().pow(self.n_slots as u32)
    }

    /// Sample a composite action for one step and return its decoded head.
    pub fn act(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<(usize, Vec<f64>), DesignerError> {
        let tape = Tape::new();
        let vars = nets::register(&tape, &self.params);
        let x = tape.constant(Tensor::vector(obs.to_vec()));
        let probs = nets::mlp_forward(&self.spec, &vars, x)?.value();
        let choice = nets::sample_action(&probs, 0.0, rng)?;
        Ok((choice, decode_levels(choice, &self.levels, self.n_slots)))
    }

    /// One REINFORCE ascent step from a full episode. `rewards` is the
    /// designer's per-step reward (welfare minus incentive totals).
    pub fn update(
        &mut self,
        observations: &[Vec<f64>],
        choices: &[usize],
        rewards: &[f64],
    ) -> Result<(), DesignerError> {
        if observations.len() != choices.len() || choices.len() != rewards.len() {
            return Err(DesignerError::LengthMismatch);
        }
        let returns = crate::agents::discounted_returns(rewards, self.gamma);
        let tape = Tape::new();
        let vars = nets::register(&tape, &self.params);
        let mut objective = tape.scalar(0.0);
        for ((obs, &choice), &g) in observations.iter().zip(choices).zip(&returns) {
            let x = tape.constant(Tensor::vector(obs.to_vec()));
            let probs = nets::mlp_forward(&self.spec, &vars, x)?;
            let logp = probs.index(choice).log();
            let entropy = -(probs * probs.log()).sum();
            objective = objective + logp.scale(g) + entropy.scale(self.entropy_coef);
        }
        let grads = tape.grad(objective, &vars, false)?;
        let grad_vals: Vec<_> = grads.iter().map(|g| g.value()).collect();
        self.adam.step_ascent(&mut self.params, &grad_vals);
        Ok(())
    }
}

/// Baseline designer with a Gaussian policy in an unbounded pre-squash space:
/// u ~ Normal(mu(obs), I), the emitted head is sigmoid(u) scaled to the
/// target range.
pub struct DualContinuousDesigner {
    pub spec: MlpSpec,
    pub params: Vec<Parameter>,
    pub adam: Adam,
    pub lr: f64,
    pub gamma: f64,
    pub lo: f64,
    pub hi: f64,
}

impl DualContinuousDesigner {
    pub fn new(
        obs_len: usize,
        n_slots: usize,
        (lo, hi): (f64, f64),
        hidden: &[usize],
        lr: f64,
        gamma: f64,
        seed: u64,
    ) -> Result<Self, DesignerError> {
        let mut layers = vec![obs_len];
        layers.extend_from_slice(hidden);
        layers.push(n_slots);
        let spec = MlpSpec::new(layers, Head::Linear, seed)?;
        let params = spec.init("dual_c", ParamRole::Designer);
        let adam = Adam::new(lr, &params);
        Ok(DualContinuousDesigner { spec, params, adam, lr, gamma, lo, hi })
    }

    fn mean(&self, obs: &[f64]) -> Result<Vec<f64>, DesignerError> {
        let tape = Tape::new();
        let vars = nets::register(&tape, &self.params);
        let x = tape.constant(Tensor::vector(obs.to_vec()));
        Ok(nets::mlp_forward(&self.spec, &vars, x)?.value().data)
    }

    /// Sample the pre-squash vector and the emitted head for one step.
    pub fn act(
        &self,
        obs: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, Vec<f64>), DesignerError> {
        let mu = self.mean(obs)?;
        for _attempt in 0..2 {
            let u: Vec<f64> = mu
                .iter()
                .map(|m| m + standard_normal(rng))
                .collect();
            if u.iter().all(|v| v.is_finite()) {
                let head = u
                    .iter()
                    .map(|v| self.lo + (self.hi - self.lo) * sigmoid(*v))
                    .collect();
                return Ok((u, head));
            }
        }
        Err(DesignerError::NonFiniteSample)
    }

    /// REINFORCE on the Gaussian log-density of the sampled pre-squash
    /// vectors (unit covariance, so logp = -0.5 * |u - mu|^2 + const).
    pub fn update(
        &mut self,
        observations: &[Vec<f64>],
        samples: &[Vec<f64>],
        rewards: &[f64],
    ) -> Result<(), DesignerError> {
        if observations.len() != samples.len() || samples.len() != rewards.len() {
            return Err(DesignerError::LengthMismatch);
        }
        let returns = crate::agents::discounted_returns(rewards, self.gamma);
        let tape = Tape::new();
        let vars = nets::register(&tape, &self.params);
        let mut objective = tape.scalar(0.0);
        for ((obs, u), &g) in observations.iter().zip(samples).zip(&returns) {
            let x = tape.constant(Tensor::vector(obs.to_vec()));
            let mu = nets::mlp_forward(&self.spec, &vars, x)?;
            let diff = tape.constant(Tensor::vector(u.clone())) - mu;
            let logp = (diff * diff).sum().scale(-0.5);
            objective = objective + logp.scale(g);
        }
        let grads = tape.grad(objective, &vars, false)?;
        let grad_vals: Vec<_> = grads.iter().map(|g| g.value()).collect();
        self.adam.step_ascent(&mut self.params, &grad_vals);
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Box-Muller draw; consumes two uniforms deterministically.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Non-learning tax designers for the economy.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum FixedTaxPolicy {
    /// All marginal rates zero.
    FreeMarket,
    /// A fixed progressive schedule (defaults to the US federal 2018 rates).
    Static { rates: Vec<f64> },
}

impl FixedTaxPolicy {
    pub fn us_federal() -> Self {
        FixedTaxPolicy::Static { rates: crate::env::gtb::tax::us_federal_rates() }
    }

    pub fn rates(&self, n_brackets: usize) -> Vec<f64> {
        match self {
            FixedTaxPolicy::FreeMarket => vec![0.0; n_brackets],
            FixedTaxPolicy::Static { rates } => rates.clone(),
        }
    }
}
