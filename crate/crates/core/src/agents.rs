//! Independent learners whose update rule is an explicit differentiable
//! function of the incentive parameters.
//!
//! Every update here returns the post-update policy parameters as *graph
//! nodes* built with `create_graph`, so an outer objective evaluated on the
//! updated parameters can still be differentiated with respect to the
//! incentive parameters that entered the agents' rewards.

use crate::diffgraph::{DiffError, Tape, Tensor, Var};
use crate::nets::{self, Adam, MlpSpec, NetsError};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("non-finite return in trajectory")]
    NonFiniteReturn,
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Nets(#[from] NetsError),
}

/// One agent's view of an episode: per-step observation, action, environment
/// reward, realized incentive, and done flag.
#[derive(Debug, Clone, Default)]
pub struct AgentTrajectorySlice {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub env_rewards: Vec<f64>,
    pub incentives: Vec<f64>,
    pub dones: Vec<bool>,
}

impl AgentTrajectorySlice {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.is_empty() {
            return Err(AgentError::EmptyTrajectory);
        }
        let n = self.len();
        if self.obs.len() != n
            || self.env_rewards.len() != n
            || self.incentives.len() != n
            || self.dones.len() != n
        {
            return Err(AgentError::EmptyTrajectory);
        }
        if self.env_rewards.iter().chain(&self.incentives).any(|r| !r.is_finite()) {
            return Err(AgentError::NonFiniteReturn);
        }
        Ok(())
    }
}

/// Shared inputs to an agent update on one tape.
pub struct UpdateCtx<'a, 't> {
    pub tape: &'t Tape,
    pub spec: &'a MlpSpec,
    pub theta: &'a [Var<'t>],
    pub traj: &'a AgentTrajectorySlice,
    /// Incentive-linked reward contributions, one node per step. When absent,
    /// the realized incentives from the trajectory are used as constants.
    pub incentives: Option<&'a [Var<'t>]>,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub explore_eps: f64,
}

impl<'a, 't> UpdateCtx<'a, 't> {
    /// Total reward per step: environment reward plus incentive, as a node.
    /// With a frozen designer and zero incentives this equals the
    /// environment reward exactly (x + 0.0 is bit-identical).
    pub fn total_rewards(&self) -> Vec<Var<'t>> {
        (0..self.traj.len())
            .map(|t| {
                let env = self.tape.scalar(self.traj.env_rewards[t]);
                let inc = match self.incentives {
                    Some(nodes) => nodes[t],
                    None => self.tape.scalar(self.traj.incentives[t]),
                };
                env + inc
            })
            .collect()
    }

    fn policy_terms(&self, t: usize) -> Result<(Var<'t>, Var<'t>), AgentError> {
        let obs = self.tape.constant(Tensor::vector(self.traj.obs[t].clone()));
        let probs = nets::mlp_forward(self.spec, self.theta, obs)?;
        let mixed = nets::mixed_policy(probs, self.explore_eps)?;
        let logp = mixed.index(self.traj.actions[t]).log();
        let entropy = -(probs * probs.log()).sum();
        Ok((logp, entropy))
    }
}

/// Discounted return nodes G_t built backwards over one slice.
pub fn return_nodes<'t>(
    rewards: &[Var<'t>],
    dones: &[bool],
    gamma: f64,
) -> Vec<Var<'t>> {
    let n = rewards.len();
    let mut out: Vec<Option<Var<'t>>> = vec![None; n];
    for t in (0..n).rev() {
        let mut g = rewards[t];
        if t + 1 < n && !dones[t] {
            g = g + out[t + 1].unwrap().scale(gamma);
        }
        out[t] = Some(g);
    }
    out.into_iter().map(Option::unwrap).collect()
}

/// Discounted returns-to-go over plain rewards (no graph).
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = 0.0;
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

/// GAE advantages over plain deltas (no graph). With lambda = 1 this equals
/// the discounted Monte-Carlo advantage.
pub fn gae(deltas: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = deltas.len();
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        if dones[t] {
            acc = 0.0;
        }
        acc = deltas[t] + gamma * lambda * acc;
        out[t] = acc;
    }
    out
}

/// GAE advantages as graph nodes (deltas may be incentive-linked).
pub fn gae_nodes<'t>(
    deltas: &[Var<'t>],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Vec<Var<'t>> {
    let n = deltas.len();
    let mut out: Vec<Option<Var<'t>>> = vec![None; n];
    for t in (0..n).rev() {
        let mut a = deltas[t];
        if t + 1 < n && !dones[t] {
            a = a + out[t + 1].unwrap().scale(gamma * lambda);
        }
        out[t] = Some(a);
    }
    out.into_iter().map(Option::unwrap).collect()
}

/// One REINFORCE ascent step; returns updated parameters as graph nodes.
pub fn pg_update<'t>(ctx: &UpdateCtx<'_, 't>, lr: f64) -> Result<Vec<Var<'t>>, AgentError> {
    ctx.traj.validate()?;
    let rewards = ctx.total_rewards();
    let returns = return_nodes(&rewards, &ctx.traj.dones, ctx.gamma);
    let mut objective = ctx.tape.scalar(0.0);
    for t in 0..ctx.traj.len() {
        let (logp, entropy) = ctx.policy_terms(t)?;
        objective = objective + logp * returns[t] + entropy.scale(ctx.entropy_coef);
    }
    let grads = ctx.tape.grad(objective, ctx.theta, true)?;
    Ok(ctx
        .theta
        .iter()
        .zip(grads)
        .map(|(&p, g)| p + g.scale(lr))
        .collect())
}

/// Critic bundle: main and target value networks (plain tensors, not
/// incentive-linked — only the policy update carries the designer gradient).
#[derive(Debug, Clone)]
pub struct Critic {
    pub spec: MlpSpec,
    pub params: Vec<crate::diffgraph::Parameter>,
    pub target: Vec<crate::diffgraph::Parameter>,
    pub adam: Adam,
    /// Target update rate: target <- c_v * main + (1 - c_v) * target.
    pub c_v: f64,
}

impl Critic {
    pub fn new(spec: MlpSpec, lr: f64, c_v: f64, prefix: &str) -> Self {
        let params = spec.init(prefix, crate::diffgraph::ParamRole::AgentCritic);
        let target = params.clone();
        let adam = Adam::new(lr, &params);
        Critic { spec, params, target, adam, c_v }
    }

    /// V(obs) under the given parameter set, computed on a throwaway tape.
    pub fn value_with(&self, params: &[crate::diffgraph::Parameter], obs: &[f64]) -> f64 {
        let tape = Tape::new();
        let vars = nets::register(&tape, params);
        let input = tape.constant(Tensor::vector(obs.to_vec()));
        nets::mlp_forward(&self.spec, &vars, input).expect("critic forward").index(0).item()
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.value_with(&self.params, obs)
    }

    pub fn target_value(&self, obs: &[f64]) -> f64 {
        self.value_with(&self.target, obs)
    }

    /// Regress the main network toward per-step targets, then soft-update
    /// the target network by rate c_v.
    pub fn regress(&mut self, obs: &[Vec<f64>], targets: &[f64]) {
        let tape = Tape::new();
        let vars = nets::register(&tape, &self.params);
        let mut loss = tape.scalar(0.0);
        for (o, &y) in obs.iter().zip(targets) {
            let input = tape.constant(Tensor::vector(o.clone()));
            let v = nets::mlp_forward(&self.spec, &vars, input).expect("critic forward").index(0);
            let err = v.add_const(-y);
            loss = loss + err * err;
        }
        loss = loss.scale(1.0 / obs.len().max(1) as f64);
        let grads: Vec<Tensor> = tape
            .grad(loss, &vars, false)
            .expect("critic grad")
            .iter()
            .map(|g| g.value())
            .collect();
        self.adam.step_descent(&mut self.params, &grads);
        for (tgt, main) in self.target.iter_mut().zip(&self.params) {
            for (tv, mv) in tgt.value.data.iter_mut().zip(&main.value.data) {
                *tv = self.c_v * mv + (1.0 - self.c_v) * *tv;
            }
        }
    }
}

/// Actor-critic step: TD(0) advantage from the target critic, policy ascent
/// with incentive linkage, then a critic regression toward the TD targets.
pub fn actor_critic_update<'t>(
    ctx: &UpdateCtx<'_, 't>,
    critic: &mut Critic,
    lr: f64,
) -> Result<Vec<Var<'t>>, AgentError> {
    ctx.traj.validate()?;
    let rewards = ctx.total_rewards();
    let n = ctx.traj.len();
    let mut objective = ctx.tape.scalar(0.0);
    let mut td_targets = Vec::with_capacity(n);
    for t in 0..n {
        let v_next = if ctx.traj.dones[t] || t + 1 >= n {
            0.0
        } else {
            critic.target_value(&ctx.traj.obs[t + 1])
        };
        let v_here = critic.target_value(&ctx.traj.obs[t]);
        // delta stays a graph node: the reward part carries the incentive link.
        let delta = rewards[t].add_const(ctx.gamma * v_next - v_here);
        td_targets.push(rewards[t].item() + ctx.gamma * v_next);
        let (logp, entropy) = ctx.policy_terms(t)?;
        objective = objective + logp * delta + entropy.scale(ctx.entropy_coef);
    }
    let grads = ctx.tape.grad(objective, ctx.theta, true)?;
    let updated = ctx.theta.iter().zip(grads).map(|(&p, g)| p + g.scale(lr)).collect();
    critic.regress(&ctx.traj.obs, &td_targets);
    Ok(updated)
}

/// How the differentiable policy step is applied.
pub enum StepRule<'o> {
    /// Plain gradient ascent with the given learning rate.
    Sgd { lr: f64 },
    /// Adam with frozen adaptive state: the second-moment denominator is
    /// computed from realized gradient values and held constant; only the
    /// first-moment direction stays incentive-linked.
    FrozenAdam { adam: &'o mut Adam },
}

fn apply_step<'t>(
    tape: &'t Tape,
    theta: &[Var<'t>],
    grads: &[Var<'t>],
    rule: &mut StepRule<'_>,
) -> Vec<Var<'t>> {
    match rule {
        StepRule::Sgd { lr } => {
            theta.iter().zip(grads).map(|(&p, &g)| p + g.scale(*lr)).collect()
        }
        StepRule::FrozenAdam { adam } => {
            let grad_values: Vec<Tensor> = grads.iter().map(|g| g.value()).collect();
            let (denoms, bc1, _) = adam.peek_next_denominator(&grad_values);
            let beta1 = adam.beta1;
            let lr = adam.lr;
            let updated = theta
                .iter()
                .zip(grads)
                .enumerate()
                .map(|(i, (&p, &g))| {
                    let m_prev = tape.constant(adam.prev_moment(i).clone());
                    let m_next = m_prev.scale(beta1) + g.scale(1.0 - beta1);
                    let denom = tape.constant(denoms[i].clone());
                    p + (m_next / denom).scale(lr / bc1)
                })
                .collect();
            adam.advance_state(&grad_values);
            updated
        }
    }
}

/// PPO step on data collected under the current parameters.
///
/// Advantages are GAE over TD residuals from the target critic; the ratio
/// starts at exactly 1, so the first gradient equals the advantage-weighted
/// policy gradient, with the incentive link carried by the advantages.
pub fn ppo_update<'t>(
    ctx: &UpdateCtx<'_, 't>,
    critic: &mut Critic,
    clip_eps: f64,
    lambda: f64,
    mut rule: StepRule<'_>,
) -> Result<Vec<Var<'t>>, AgentError> {
    ctx.traj.validate()?;
    assert!(clip_eps > 0.0, "clip epsilon must be positive");
    let rewards = ctx.total_rewards();
    let n = ctx.traj.len();
    let mut deltas = Vec::with_capacity(n);
    let mut value_targets = Vec::with_capacity(n);
    for t in 0..n {
        let v_next = if ctx.traj.dones[t] || t + 1 >= n {
            0.0
        } else {
            critic.target_value(&ctx.traj.obs[t + 1])
        };
        let v_here = critic.target_value(&ctx.traj.obs[t]);
        deltas.push(rewards[t].add_const(ctx.gamma * v_next - v_here));
        value_targets.push((t, v_here));
    }
    let advantages = gae_nodes(&deltas, &ctx.traj.dones, ctx.gamma, lambda);
    let mut objective = ctx.tape.scalar(0.0);
    for t in 0..n {
        let (logp, entropy) = ctx.policy_terms(t)?;
        let ratio = (logp - logp.detach()).exp();
        let clipped = ratio.clip(1.0 - clip_eps, 1.0 + clip_eps);
        let adv = advantages[t];
        let surrogate = (ratio * adv).min(clipped * adv);
        objective = objective + surrogate + entropy.scale(ctx.entropy_coef);
    }
    let grads = ctx.tape.grad(objective, ctx.theta, true)?;
    let updated = apply_step(ctx.tape, ctx.theta, &grads, &mut rule);
    // Lambda-return critic targets from realized advantages.
    let targets: Vec<f64> = value_targets
        .iter()
        .map(|&(t, v)| v + advantages[t].item())
        .collect();
    critic.regress(&ctx.traj.obs, &targets);
    Ok(updated)
}

/// One squared-TD-loss descent step for a softmax-Q agent.
///
/// The target `r_tot + gamma * max_a Q'(o', a)` keeps its incentive link via
/// the reward node; the bootstrap uses constant target-network values.
pub fn q_softmax_update<'t>(
    ctx: &UpdateCtx<'_, 't>,
    target_q: impl Fn(&[f64]) -> Tensor,
    lr: f64,
) -> Result<Vec<Var<'t>>, AgentError> {
    ctx.traj.validate()?;
    let rewards = ctx.total_rewards();
    let n = ctx.traj.len();
    let mut loss = ctx.tape.scalar(0.0);
    for t in 0..n {
        let bootstrap = if ctx.traj.dones[t] || t + 1 >= n {
            0.0
        } else {
            let q_next = target_q(&ctx.traj.obs[t + 1]);
            q_next.data[q_next.argmax()]
        };
        let target = rewards[t].add_const(ctx.gamma * bootstrap);
        let obs = ctx.tape.constant(Tensor::vector(ctx.traj.obs[t].clone()));
        let q = nets::mlp_forward(ctx.spec, ctx.theta, obs)?;
        let pred = q.index(ctx.traj.actions[t]);
        let err = target - pred;
        loss = loss + err * err;
    }
    let grads = ctx.tape.grad(loss, ctx.theta, true)?;
    Ok(ctx.theta.iter().zip(grads).map(|(&p, g)| p - g.scale(lr)).collect())
}

/// Policy induced by a Q-vector at temperature `tau`: softmax(tau * Q).
pub fn q_induced_policy<'t>(q: Var<'t>, tau: f64) -> Var<'t> {
    nets::softmax(q.scale(tau))
}

impl Adam {
    /// Update moment state for realized gradients without touching parameters.
    /// Used after a frozen-moment differentiable step has been applied
    /// through the graph.
    pub fn advance_state(&mut self, grads: &[Tensor]) {
        // Reuse step_ascent's moment arithmetic on throwaway parameters.
        let mut dummy: Vec<crate::diffgraph::Parameter> = grads
            .iter()
            .enumerate()
            .map(|(i, g)| {
                crate::diffgraph::Parameter::new(
                    format!("dummy{i}"),
                    crate::diffgraph::ParamRole::AgentPolicy,
                    Tensor::zeros(g.shape),
                )
            })
            .collect();
        self.step_ascent(&mut dummy, grads);
    }
}
