//! Escape-room training loops: the meta-gradient designer that
//! differentiates through the agents' policy-gradient step, and the dual-RL
//! baselines where the designer is itself a reinforcement learner.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{self, AgentTrajectorySlice, Critic, UpdateCtx};
use crate::designers::{
    self, DualContinuousDesigner, DualDiscreteDesigner, IncentiveNet,
};
use crate::diffgraph::{ParamRole, Parameter, Tape, Var};
use crate::env::escape_room::{
    agent_obs, designer_obs, er_step, ErConfig, ErState, N_ACTIONS,
};
use crate::harness::config::{DesignerChoice, RunConfig};
use crate::harness::output::MetricsRecord;
use crate::harness::HarnessError;
use crate::nets::{self, Head, MlpSpec};

/// One episode as seen by every participant.
pub struct ErTrajectory {
    pub slices: Vec<AgentTrajectorySlice>,
    pub designer_obs: Vec<Vec<f64>>,
    pub joint: Vec<Vec<usize>>,
    pub designer_rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub psi: f64,
    pub explore_eps: f64,
    /// How many learning passes have consumed this trajectory.
    pub uses: u32,
}

impl ErTrajectory {
    pub fn len(&self) -> usize {
        self.joint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint.is_empty()
    }

    /// Environment welfare minus incentive cost.
    pub fn net_welfare(&self) -> f64 {
        self.designer_rewards.iter().sum::<f64>() - self.psi
    }
}

/// Sample one episode. `emit_head` produces the per-action incentive vector
/// for the current global state; pass a closure that returns zeros for a
/// designer-free run.
pub fn rollout_er(
    cfg: &ErConfig,
    specs: &[MlpSpec],
    params: &[Vec<Parameter>],
    emit_head: &mut dyn FnMut(&[f64], &mut ChaCha8Rng) -> Vec<f64>,
    explore_eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ErTrajectory, HarnessError> {
    let n = cfg.n_agents;
    let mut slices = vec![AgentTrajectorySlice::default(); n];
    let mut traj = ErTrajectory {
        slices: Vec::new(),
        designer_obs: Vec::new(),
        joint: Vec::new(),
        designer_rewards: Vec::new(),
        dones: Vec::new(),
        psi: 0.0,
        explore_eps,
        uses: 0,
    };
    let mut state = ErState::reset(cfg);
    loop {
        let dobs = designer_obs(cfg, &state);
        let head = emit_head(&dobs, rng);
        if head.len() != N_ACTIONS {
            return Err(HarnessError::Internal(format!(
                "incentive head has {} entries",
                head.len()
            )));
        }
        let mut joint = Vec::with_capacity(n);
        let mut obs_all = Vec::with_capacity(n);
        for i in 0..n {
            let obs = agent_obs(cfg, &state, i);
            let probs = nets::eval_mlp(&specs[i], &params[i], &obs);
            let probs_t = crate::diffgraph::Tensor::vector(probs);
            let a = nets::sample_action(&probs_t, explore_eps, rng)?;
            joint.push(a);
            obs_all.push(obs);
        }
        let (next, env_rewards, done) = er_step(cfg, &state, &joint)?;
        for i in 0..n {
            let inc = head[joint[i]];
            slices[i].obs.push(obs_all[i].clone());
            slices[i].actions.push(joint[i]);
            slices[i].env_rewards.push(env_rewards[i]);
            slices[i].incentives.push(inc);
            slices[i].dones.push(done);
            traj.psi += inc;
        }
        traj.designer_rewards.push(env_rewards.iter().sum());
        traj.designer_obs.push(dobs);
        traj.joint.push(joint);
        traj.dones.push(done);
        state = next;
        if done {
            break;
        }
    }
    traj.slices = slices;
    Ok(traj)
}

/// Per-step designer advantages from GAE over the designer critic.
fn designer_advantages(
    critic: &Critic,
    traj: &ErTrajectory,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = traj.len();
    let mut deltas = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for t in 0..n {
        let v = critic.value(&traj.designer_obs[t]);
        let v_next = if traj.dones[t] || t + 1 >= n {
            0.0
        } else {
            critic.value(&traj.designer_obs[t + 1])
        };
        deltas.push(traj.designer_rewards[t] + gamma * v_next - v);
        values.push(v);
    }
    let adv = agents::gae(&deltas, &traj.dones, gamma, lambda);
    (adv, values)
}

pub struct ErMetaGradDesigner {
    pub net: IncentiveNet,
    pub critic: Critic,
    pub adam_id: nets::Adam,
    pub adam_cost: nets::Adam,
}

impl ErMetaGradDesigner {
    pub fn new(rc: &RunConfig, cfg: &ErConfig) -> Result<Self, HarnessError> {
        let meta = &rc.er.meta;
        let net = IncentiveNet::for_escape_room(
            cfg.designer_obs_len(),
            N_ACTIONS,
            &rc.er.designer_hidden,
            rc.seed.wrapping_mul(0x9e3779b9).wrapping_add(7),
        )?;
        let critic_spec = MlpSpec::new(
            vec![cfg.designer_obs_len(), 64, 1],
            Head::Linear,
            rc.seed.wrapping_mul(0x9e3779b9).wrapping_add(11),
        )?;
        let critic = Critic::new(critic_spec, meta.critic_lr, meta.critic_tau, "designer_critic");
        let adam_id = nets::Adam::new(meta.alpha_id, &net.params);
        let adam_cost = nets::Adam::new(meta.alpha_cost, &net.params);
        Ok(ErMetaGradDesigner { net, critic, adam_id, adam_cost })
    }
}

/// Everything a run produces.
pub struct RunOutcome {
    pub records: Vec<MetricsRecord>,
    pub final_test_welfare: f64,
    /// All learned parameters, for checkpointing.
    pub params: Vec<Parameter>,
    /// Final incentive head at the start state (escape-room MetaGrad only).
    pub final_head: Option<Vec<f64>>,
    /// Final marginal tax rates (economy only).
    pub final_rates: Option<Vec<f64>>,
}

pub struct ErAgents {
    pub specs: Vec<MlpSpec>,
    pub params: Vec<Vec<Parameter>>,
}

impl ErAgents {
    fn new(rc: &RunConfig, cfg: &ErConfig) -> Result<Self, HarnessError> {
        let mut specs = Vec::new();
        let mut params = Vec::new();
        for i in 0..cfg.n_agents {
            let mut layers = vec![cfg.agent_obs_len()];
            layers.extend_from_slice(&rc.er.agent_hidden);
            layers.push(N_ACTIONS);
            let spec = MlpSpec::new(
                layers,
                Head::Softmax,
                rc.seed.wrapping_mul(0x2545f491).wrapping_add(i as u64),
            )?;
            params.push(spec.init(&format!("agent{i}"), ParamRole::AgentPolicy));
            specs.push(spec);
        }
        Ok(ErAgents { specs, params })
    }
}

/// Frozen-policy evaluation: no exploration, incentives still emitted.
/// Returns (mean net welfare, mean psi, mean per-agent total returns).
pub fn eval_er(
    cfg: &ErConfig,
    agents: &ErAgents,
    emit_head: &mut dyn FnMut(&[f64], &mut ChaCha8Rng) -> Vec<f64>,
    episodes: u64,
    seed: u64,
) -> Result<(f64, f64, Vec<f64>), HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut welfare = 0.0;
    let mut psi = 0.0;
    let mut returns = vec![0.0; cfg.n_agents];
    for _ in 0..episodes {
        let traj = rollout_er(cfg, &agents.specs, &agents.params, emit_head, 0.0, &mut rng)?;
        welfare += traj.net_welfare();
        psi += traj.psi;
        for (i, s) in traj.slices.iter().enumerate() {
            returns[i] += s
                .env_rewards
                .iter()
                .zip(&s.incentives)
                .map(|(r, c)| r + c)
                .sum::<f64>();
        }
    }
    let e = episodes.max(1) as f64;
    for r in returns.iter_mut() {
        *r /= e;
    }
    Ok((welfare / e, psi / e, returns))
}

use crate::harness::check_finite;

/// One meta-gradient iteration: update agents through the graph on the
/// cached trajectory, roll a validation episode under the updated policies,
/// ascend the outer clipped surrogate, descend the incentive cost, regress
/// the designer critic, then advance the real agent parameters and pipeline
/// the validation trajectory into the next cache.
#[allow(clippy::too_many_arguments)]
fn metagrad_iteration(
    rc: &RunConfig,
    cfg: &ErConfig,
    agents_state: &mut ErAgents,
    designer: &mut ErMetaGradDesigner,
    cached: &mut ErTrajectory,
    explore_eps: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ErTrajectory, HarnessError> {
    let meta = rc.er.meta.clone();
    let n = cfg.n_agents;
    let tape = Tape::new();
    let eta_vars = designer.net.register(&tape);

    // Re-emit incentives on the cached trajectory as graph nodes of eta.
    let mut cost = tape.scalar(0.0);
    let mut inc_nodes: Vec<Vec<Var<'_>>> = vec![Vec::new(); n];
    for t in 0..cached.len() {
        let head = designer.net.forward(&tape, &eta_vars, &cached.designer_obs[t])?;
        for i in 0..n {
            let inc = head.index(cached.joint[t][i]);
            inc_nodes[i].push(inc);
            cost = cost + inc;
        }
    }

    // Differentiable agent updates on the cached trajectory.
    cached.uses += 1;
    let mut theta_hats = Vec::with_capacity(n);
    for i in 0..n {
        let theta_vars = nets::register(&tape, &agents_state.params[i]);
        let ctx = UpdateCtx {
            tape: &tape,
            spec: &agents_state.specs[i],
            theta: &theta_vars,
            traj: &cached.slices[i],
            incentives: Some(&inc_nodes[i]),
            gamma: rc.er.gamma,
            entropy_coef: rc.er.entropy_coef,
            explore_eps: cached.explore_eps,
        };
        theta_hats.push(agents::pg_update(&ctx, rc.er.agent_lr)?);
    }

    // Validation rollout under the updated policy values.
    let hat_params: Vec<Vec<Parameter>> = agents_state
        .params
        .iter()
        .zip(&theta_hats)
        .map(|(ps, vars)| {
            ps.iter()
                .zip(vars)
                .map(|(p, v)| Parameter::new(p.name.clone(), p.role, v.value()))
                .collect()
        })
        .collect();
    let net_ref = &designer.net;
    let mut emit = |dobs: &[f64], _rng: &mut ChaCha8Rng| net_ref.eval(dobs).expect("incentive eval");
    let mut validation = rollout_er(
        cfg,
        &agents_state.specs,
        &hat_params,
        &mut emit,
        explore_eps,
        rng,
    )?;

    // Outer clipped surrogate on the validation trajectory, through theta-hat.
    validation.uses += 1;
    let (advantages, values) =
        designer_advantages(&designer.critic, &validation, meta.gamma, meta.gae_lambda);
    let mut surrogate = tape.scalar(0.0);
    for t in 0..validation.len() {
        let mut logp_sum = tape.scalar(0.0);
        for i in 0..n {
            let obs = tape.constant(crate::diffgraph::Tensor::vector(
                validation.slices[i].obs[t].clone(),
            ));
            let probs = nets::mlp_forward(&agents_state.specs[i], &theta_hats[i], obs)?;
            let mixed = nets::mixed_policy(probs, validation.explore_eps)?;
            logp_sum = logp_sum + mixed.index(validation.joint[t][i]).log();
        }
        let ratio = designers::outer_ratio(logp_sum);
        surrogate = surrogate + designers::clipped_term(ratio, advantages[t], meta.clip_eps);
    }
    let g_surr: Vec<_> = tape.grad(surrogate, &eta_vars, false)?.iter().map(|g| g.value()).collect();
    let g_cost: Vec<_> = tape.grad(cost, &eta_vars, false)?.iter().map(|g| g.value()).collect();
    check_finite(
        "outer gradient",
        g_surr.iter().chain(&g_cost).flat_map(|t| t.data.iter().copied()),
    )?;
    designer.adam_id.step_ascent(&mut designer.net.params, &g_surr);
    designer.adam_cost.step_descent(&mut designer.net.params, &g_cost);

    // Critic regression toward lambda-return targets on the same stream.
    let targets: Vec<f64> = values.iter().zip(&advantages).map(|(v, a)| v + a).collect();
    designer.critic.regress(&validation.designer_obs, &targets);

    // Agents actually take the step they were differentiated through.
    for (ps, vars) in agents_state.params.iter_mut().zip(&theta_hats) {
        for (p, v) in ps.iter_mut().zip(vars) {
            p.value = v.value();
        }
        check_finite("agent parameters", ps.iter().flat_map(|p| p.value.data.iter().copied()))?;
    }

    debug_assert!(cached.uses <= 2, "trajectory consumed more than twice");
    Ok(std::mem::replace(cached, validation))
}

pub enum ErDesignerState {
    Meta(Box<ErMetaGradDesigner>, Option<ErTrajectory>),
    DualD(DualDiscreteDesigner),
    DualC(DualContinuousDesigner),
    None,
}

/// A resumable escape-room run: training can be advanced episode by episode
/// and evaluated at any point, which the hyperparameter search uses to
/// continue survivors from their own state.
pub struct ErRun {
    pub rc: RunConfig,
    pub cfg: ErConfig,
    agents: ErAgents,
    designer: ErDesignerState,
    rng: ChaCha8Rng,
    pub episode: u64,
    train_acc: f64,
    train_count: u64,
    pub records: Vec<MetricsRecord>,
}

impl ErRun {
    pub fn new(rc: &RunConfig) -> Result<Self, HarnessError> {
        let cfg = ErConfig::new(rc.er.n_agents, rc.er.lever_threshold)?;
        let agents = ErAgents::new(rc, &cfg)?;
        let rng = ChaCha8Rng::seed_from_u64(rc.seed.wrapping_mul(0x5851f42d).wrapping_add(1));
        let designer = match rc.designer {
            DesignerChoice::MetaGrad => {
                ErDesignerState::Meta(Box::new(ErMetaGradDesigner::new(rc, &cfg)?), None)
            }
            DesignerChoice::DualDiscrete => ErDesignerState::DualD(DualDiscreteDesigner::new(
                cfg.designer_obs_len(),
                N_ACTIONS,
                rc.er.dual_levels.clone(),
                &rc.er.dual_hidden,
                rc.er.dual_lr,
                rc.er.gamma,
                rc.er.entropy_coef,
                rc.seed.wrapping_mul(0x9e3779b9).wrapping_add(13),
            )?),
            DesignerChoice::DualContinuous => {
                ErDesignerState::DualC(DualContinuousDesigner::new(
                    cfg.designer_obs_len(),
                    N_ACTIONS,
                    (0.0, 2.0),
                    &rc.er.dual_hidden,
                    rc.er.dual_lr,
                    rc.er.gamma,
                    rc.seed.wrapping_mul(0x9e3779b9).wrapping_add(13),
                )?)
            }
            DesignerChoice::StaticSchedule | DesignerChoice::FreeMarket => ErDesignerState::None,
        };
        Ok(ErRun {
            rc: rc.clone(),
            cfg,
            agents,
            designer,
            rng,
            episode: 0,
            train_acc: 0.0,
            train_count: 0,
            records: Vec::new(),
        })
    }

    /// Frozen-policy evaluation with the current designer and agents.
    pub fn eval_now(&mut self) -> Result<MetricsRecord, HarnessError> {
        let eval_seed = self.rc.seed.wrapping_mul(0xa076_1d64).wrapping_add(self.episode);
        let train_welfare = self.train_acc / self.train_count.max(1) as f64;
        let (welfare, psi, returns) = match &self.designer {
            ErDesignerState::Meta(d, _) => {
                let net = &d.net;
                let mut emit =
                    |dobs: &[f64], _r: &mut ChaCha8Rng| net.eval(dobs).expect("incentive eval");
                eval_er(&self.cfg, &self.agents, &mut emit, self.rc.eval_episodes, eval_seed)?
            }
            ErDesignerState::DualD(d) => {
                let mut emit = |dobs: &[f64], r: &mut ChaCha8Rng| {
                    d.act(dobs, r).expect("dual designer action").1
                };
                eval_er(&self.cfg, &self.agents, &mut emit, self.rc.eval_episodes, eval_seed)?
            }
            ErDesignerState::DualC(d) => {
                let mut emit = |dobs: &[f64], r: &mut ChaCha8Rng| {
                    d.act(dobs, r).expect("dual designer action").1
                };
                eval_er(&self.cfg, &self.agents, &mut emit, self.rc.eval_episodes, eval_seed)?
            }
            ErDesignerState::None => {
                let mut emit = |_: &[f64], _: &mut ChaCha8Rng| vec![0.0; N_ACTIONS];
                eval_er(&self.cfg, &self.agents, &mut emit, self.rc.eval_episodes, eval_seed)?
            }
        };
        check_finite("evaluation welfare", [welfare, psi])?;
        Ok(MetricsRecord {
            episode: self.episode,
            train_welfare,
            test_welfare: welfare,
            psi,
            agent_returns: returns,
            ..MetricsRecord::default()
        })
    }

    /// Advance training by one episode.
    pub fn train_episode(&mut self) -> Result<(), HarnessError> {
        let e = self.episode;
        let eps = self.rc.er.explore.at(e);
        let rc = self.rc.clone();
        match &mut self.designer {
            ErDesignerState::Meta(d, cache) => {
                if cache.is_none() {
                    let net = &d.net;
                    let mut emit = |dobs: &[f64], _r: &mut ChaCha8Rng| {
                        net.eval(dobs).expect("incentive eval")
                    };
                    *cache = Some(rollout_er(
                        &self.cfg,
                        &self.agents.specs,
                        &self.agents.params,
                        &mut emit,
                        eps,
                        &mut self.rng,
                    )?);
                }
                let cached = cache.as_mut().expect("cache filled above");
                self.train_acc += cached.net_welfare();
                self.train_count += 1;
                let retired = metagrad_iteration(
                    &rc,
                    &self.cfg,
                    &mut self.agents,
                    d,
                    cached,
                    eps,
                    &mut self.rng,
                )?;
                debug_assert!(retired.uses == 2 || e == 0);
            }
            ErDesignerState::DualD(d) => {
                let mut obs_log = Vec::new();
                let mut choice_log = Vec::new();
                let mut emit = |dobs: &[f64], r: &mut ChaCha8Rng| {
                    let (choice, head) = d.act(dobs, r).expect("dual designer action");
                    obs_log.push(dobs.to_vec());
                    choice_log.push(choice);
                    head
                };
                let traj = rollout_er(
                    &self.cfg,
                    &self.agents.specs,
                    &self.agents.params,
                    &mut emit,
                    eps,
                    &mut self.rng,
                )?;
                self.train_acc += traj.net_welfare();
                self.train_count += 1;
                plain_agent_updates(&rc, &mut self.agents, &traj)?;
                let rewards = designer_net_rewards(&traj);
                d.update(&obs_log, &choice_log, &rewards)?;
            }
            ErDesignerState::DualC(d) => {
                let mut obs_log = Vec::new();
                let mut sample_log = Vec::new();
                let mut emit = |dobs: &[f64], r: &mut ChaCha8Rng| {
                    let (u, head) = d.act(dobs, r).expect("dual designer action");
                    obs_log.push(dobs.to_vec());
                    sample_log.push(u);
                    head
                };
                let traj = rollout_er(
                    &self.cfg,
                    &self.agents.specs,
                    &self.agents.params,
                    &mut emit,
                    eps,
                    &mut self.rng,
                )?;
                self.train_acc += traj.net_welfare();
                self.train_count += 1;
                plain_agent_updates(&rc, &mut self.agents, &traj)?;
                let rewards = designer_net_rewards(&traj);
                d.update(&obs_log, &sample_log, &rewards)?;
            }
            ErDesignerState::None => {
                let mut emit = |_: &[f64], _: &mut ChaCha8Rng| vec![0.0; N_ACTIONS];
                let traj = rollout_er(
                    &self.cfg,
                    &self.agents.specs,
                    &self.agents.params,
                    &mut emit,
                    eps,
                    &mut self.rng,
                )?;
                self.train_acc += traj.net_welfare();
                self.train_count += 1;
                plain_agent_updates(&rc, &mut self.agents, &traj)?;
            }
        }
        self.episode += 1;
        Ok(())
    }

    /// Train to the configured budget with periodic evaluation rows.
    pub fn run_to_budget(&mut self) -> Result<(), HarnessError> {
        if self.records.is_empty() {
            let rec = self.eval_now()?;
            self.records.push(rec);
        }
        while self.episode < self.rc.episodes {
            self.train_episode()?;
            if self.episode % self.rc.eval_every == 0 || self.episode == self.rc.episodes {
                let rec = self.eval_now()?;
                self.records.push(rec);
                self.train_acc = 0.0;
                self.train_count = 0;
            }
        }
        Ok(())
    }

    pub fn outcome(self) -> Result<RunOutcome, HarnessError> {
        let final_test_welfare = self.records.last().map(|r| r.test_welfare).unwrap_or(0.0);
        let mut params = Vec::new();
        for ps in &self.agents.params {
            params.extend(ps.iter().cloned());
        }
        let final_head = match &self.designer {
            ErDesignerState::Meta(d, _) => {
                params.extend(d.net.params.iter().cloned());
                params.extend(d.critic.params.iter().cloned());
                let start = designer_obs(&self.cfg, &ErState::reset(&self.cfg));
                Some(d.net.eval(&start)?)
            }
            ErDesignerState::DualD(d) => {
                params.extend(d.params.iter().cloned());
                None
            }
            ErDesignerState::DualC(d) => {
                params.extend(d.params.iter().cloned());
                None
            }
            ErDesignerState::None => None,
        };
        Ok(RunOutcome {
            records: self.records,
            final_test_welfare,
            params,
            final_head,
            final_rates: None,
        })
    }
}

impl ErRun {
    /// Load previously saved parameters (by name) into this run.
    pub fn load_params(&mut self, path: &std::path::Path) -> Result<(), HarnessError> {
        for ps in &mut self.agents.params {
            nets::load_checkpoint(path, ps)?;
        }
        match &mut self.designer {
            ErDesignerState::Meta(d, _) => {
                nets::load_checkpoint(path, &mut d.net.params)?;
                nets::load_checkpoint(path, &mut d.critic.params)?;
                d.critic.target = d.critic.params.clone();
            }
            ErDesignerState::DualD(d) => nets::load_checkpoint(path, &mut d.params)?,
            ErDesignerState::DualC(d) => nets::load_checkpoint(path, &mut d.params)?,
            ErDesignerState::None => {}
        }
        Ok(())
    }

    /// Deterministic single-episode replay under the frozen policy; returns
    /// a human-readable step log.
    pub fn replay_episode(&mut self, seed: u64) -> Result<String, HarnessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = match &self.designer {
            ErDesignerState::Meta(d, _) => {
                let net = &d.net;
                let mut emit =
                    |dobs: &[f64], _r: &mut ChaCha8Rng| net.eval(dobs).expect("incentive eval");
                rollout_er(&self.cfg, &self.agents.specs, &self.agents.params, &mut emit, 0.0, &mut rng)?
            }
            ErDesignerState::DualD(d) => {
                let mut emit = |dobs: &[f64], r: &mut ChaCha8Rng| {
                    d.act(dobs, r).expect("dual designer action").1
                };
                rollout_er(&self.cfg, &self.agents.specs, &self.agents.params, &mut emit, 0.0, &mut rng)?
            }
            ErDesignerState::DualC(d) => {
                let mut emit = |dobs: &[f64], r: &mut ChaCha8Rng| {
                    d.act(dobs, r).expect("dual designer action").1
                };
                rollout_er(&self.cfg, &self.agents.specs, &self.agents.params, &mut emit, 0.0, &mut rng)?
            }
            ErDesignerState::None => {
                let mut emit = |_: &[f64], _: &mut ChaCha8Rng| vec![0.0; N_ACTIONS];
                rollout_er(&self.cfg, &self.agents.specs, &self.agents.params, &mut emit, 0.0, &mut rng)?
            }
        };
        let names = ["lever", "start", "door"];
        let mut log = String::new();
        use std::fmt::Write as _;
        for t in 0..traj.len() {
            let acts: Vec<&str> = traj.joint[t].iter().map(|&a| names[a]).collect();
            let incs: Vec<String> = traj
                .slices
                .iter()
                .map(|s| format!("{:+.3}", s.incentives[t]))
                .collect();
            writeln!(
                log,
                "step {t}: actions=[{}] env_welfare={:+.1} incentives=[{}]",
                acts.join(", "),
                traj.designer_rewards[t],
                incs.join(", ")
            )
            .expect("string write");
        }
        writeln!(
            log,
            "episode welfare {:+.3} (incentive cost {:.3})",
            traj.net_welfare(),
            traj.psi
        )
        .expect("string write");
        Ok(log)
    }
}

/// Run the escape room to budget under the configured designer.
pub fn run_er(rc: &RunConfig) -> Result<RunOutcome, HarnessError> {
    let mut run = ErRun::new(rc)?;
    run.run_to_budget()?;
    run.outcome()
}

/// Designer's per-step learning reward: welfare minus incentives emitted.
fn designer_net_rewards(traj: &ErTrajectory) -> Vec<f64> {
    (0..traj.len())
        .map(|t| {
            let paid: f64 = traj.slices.iter().map(|s| s.incentives[t]).sum();
            traj.designer_rewards[t] - paid
        })
        .collect()
}

/// Ordinary policy-gradient step for every agent, incentives as constants.
fn plain_agent_updates(
    rc: &RunConfig,
    agents_state: &mut ErAgents,
    traj: &ErTrajectory,
) -> Result<(), HarnessError> {
    for i in 0..agents_state.params.len() {
        let tape = Tape::new();
        let theta_vars = nets::register(&tape, &agents_state.params[i]);
        let ctx = UpdateCtx {
            tape: &tape,
            spec: &agents_state.specs[i],
            theta: &theta_vars,
            traj: &traj.slices[i],
            incentives: None,
            gamma: rc.er.gamma,
            entropy_coef: rc.er.entropy_coef,
            explore_eps: traj.explore_eps,
        };
        let updated = agents::pg_update(&ctx, rc.er.agent_lr)?;
        for (p, v) in agents_state.params[i].iter_mut().zip(&updated) {
            p.value = v.value();
        }
        check_finite(
            "agent parameters",
            agents_state.params[i].iter().flat_map(|p| p.value.data.iter().copied()),
        )?;
    }
    Ok(())
}
