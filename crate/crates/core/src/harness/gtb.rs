//! Economy training loops: proximal-policy agents with shared parameters,
//! and a tax designer that is either the meta-gradient learner, a fixed
//! schedule, or absent (free market). Curriculum: free-market pretraining,
//! then designer introduction under an annealed cap on marginal rates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{self, AgentTrajectorySlice, Critic, StepRule, UpdateCtx};
use crate::designers::{self, IncentiveNet};
use crate::diffgraph::{ParamRole, Parameter, Tape, Tensor, Var};
use crate::env::gtb::metrics::{crra_utility, crra_node};
use crate::env::gtb::{EconomyState, GtbConfig, N_ACTIONS};
use crate::harness::config::{anneal_cap, DesignerChoice, RunConfig};
use crate::harness::er::RunOutcome;
use crate::harness::output::MetricsRecord;
use crate::harness::{check_finite, HarnessError};
use crate::nets::{self, Head, MlpSpec};

/// One economy episode with everything needed to rebuild the designer's
/// influence on agent rewards as a graph.
pub struct GtbTrajectory {
    /// Per-agent realized slices; `env_rewards` holds the full realized
    /// reward (utility delta including redistribution), incentives zero.
    pub slices: Vec<AgentTrajectorySlice>,
    pub designer_obs_steps: Vec<Vec<f64>>,
    pub designer_rewards: Vec<f64>,
    /// Coin per agent after each step.
    pub coins: Vec<Vec<f64>>,
    /// Designer observation at each period start, in period order.
    pub period_obs: Vec<Vec<f64>>,
    pub period_incomes: Vec<Vec<f64>>,
    pub period_adjustments: Vec<Vec<f64>>,
    pub rates_used: Vec<Vec<f64>>,
    pub explore_eps: f64,
    pub cap: f64,
    pub uses: u32,
    pub swf: f64,
    pub final_prod: f64,
    pub mean_eq: f64,
    pub income_pre: Vec<f64>,
    pub income_post: Vec<f64>,
    pub tax_paid: Vec<f64>,
    pub gathered: Vec<f64>,
    pub built: Vec<f64>,
    pub traded: Vec<f64>,
}

impl GtbTrajectory {
    pub fn len(&self) -> usize {
        self.designer_rewards.len()
    }
}

/// Sample one economy episode. `emit_rates` maps the designer observation at
/// a period start to the (already capped) marginal rates for that period.
pub fn rollout_gtb(
    scenario: &GtbConfig,
    spec: &MlpSpec,
    params: &[Parameter],
    emit_rates: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    explore_eps: f64,
    cap: f64,
    env_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<GtbTrajectory, HarnessError> {
    let n = scenario.n_agents;
    let mut state = EconomyState::new(scenario.clone(), env_seed)?;
    let mut traj = GtbTrajectory {
        slices: vec![AgentTrajectorySlice::default(); n],
        designer_obs_steps: Vec::new(),
        designer_rewards: Vec::new(),
        coins: Vec::new(),
        period_obs: Vec::new(),
        period_incomes: Vec::new(),
        period_adjustments: Vec::new(),
        rates_used: Vec::new(),
        explore_eps,
        cap,
        uses: 0,
        swf: 0.0,
        final_prod: 0.0,
        mean_eq: 0.0,
        income_pre: vec![0.0; n],
        income_post: vec![0.0; n],
        tax_paid: vec![0.0; n],
        gathered: vec![0.0; n],
        built: vec![0.0; n],
        traded: vec![0.0; n],
    };
    for _t in 0..scenario.horizon {
        if state.at_period_start() {
            let dobs = state.designer_obs();
            let rates = emit_rates(&dobs);
            state.set_tax_rates(rates.clone())?;
            traj.period_obs.push(dobs);
            traj.rates_used.push(rates);
        }
        let dobs = state.designer_obs();
        let mut joint = Vec::with_capacity(n);
        let mut obs_all = Vec::with_capacity(n);
        for i in 0..n {
            let obs = state.agent_obs(i);
            let probs = nets::eval_mlp(spec, params, &obs);
            let a = nets::sample_action(&Tensor::vector(probs), explore_eps, rng)?;
            joint.push(a);
            obs_all.push(obs);
        }
        let outcome = state.step(&joint)?;
        for i in 0..n {
            traj.slices[i].obs.push(obs_all[i].clone());
            traj.slices[i].actions.push(joint[i]);
            traj.slices[i].env_rewards.push(outcome.rewards[i]);
            traj.slices[i].incentives.push(0.0);
            traj.slices[i].dones.push(outcome.done);
        }
        traj.designer_obs_steps.push(dobs);
        traj.designer_rewards.push(outcome.designer_reward);
        traj.coins.push(state.coins());
        if outcome.done {
            break;
        }
    }
    for p in &state.periods_done {
        traj.period_incomes.push(p.incomes.clone());
        traj.period_adjustments.push(p.adjustments.clone());
    }
    traj.swf = state.welfare.swf;
    traj.final_prod = state.welfare.prod.last().copied().unwrap_or(0.0);
    traj.mean_eq = if state.welfare.eq.is_empty() {
        0.0
    } else {
        state.welfare.eq.iter().sum::<f64>() / state.welfare.eq.len() as f64
    };
    for (i, a) in state.agents.iter().enumerate() {
        traj.income_pre[i] = a.income_build + a.income_trade;
        traj.income_post[i] = a.coin;
        traj.tax_paid[i] = a.tax_paid;
        traj.gathered[i] = a.gathered as f64;
        traj.built[i] = a.built as f64;
        traj.traded[i] = (a.trades_buy + a.trades_sell) as f64;
    }
    Ok(traj)
}

/// Shared-parameter agent bundle for the economy.
pub struct GtbAgents {
    pub spec: MlpSpec,
    pub params: Vec<Parameter>,
    pub critic: Critic,
    pub adam: nets::Adam,
}

impl GtbAgents {
    pub fn new(rc: &RunConfig, scenario: &GtbConfig) -> Result<Self, HarnessError> {
        let obs_len = scenario.agent_obs_len();
        let mut layers = vec![obs_len];
        layers.extend_from_slice(&rc.gtb.agent.hidden);
        layers.push(N_ACTIONS);
        let spec = MlpSpec::new(
            layers,
            Head::Softmax,
            rc.seed.wrapping_mul(0x2545f491).wrapping_add(21),
        )?;
        let params = spec.init("worker", ParamRole::AgentPolicy);
        let critic_spec = MlpSpec::new(
            vec![obs_len, 64, 1],
            Head::Linear,
            rc.seed.wrapping_mul(0x2545f491).wrapping_add(22),
        )?;
        let critic = Critic::new(
            critic_spec,
            rc.gtb.agent.critic_lr,
            rc.gtb.agent.critic_tau,
            "worker_critic",
        );
        let adam = nets::Adam::new(rc.gtb.agent.lr, &params);
        Ok(GtbAgents { spec, params, critic, adam })
    }
}

/// Concatenate per-agent slices into one update stream; episode boundaries
/// carry done flags so advantage estimation never crosses agents.
fn combined_slice(traj: &GtbTrajectory) -> AgentTrajectorySlice {
    let mut all = AgentTrajectorySlice::default();
    for s in &traj.slices {
        all.obs.extend(s.obs.iter().cloned());
        all.actions.extend(s.actions.iter().copied());
        all.env_rewards.extend(s.env_rewards.iter().copied());
        all.incentives.extend(s.incentives.iter().copied());
        let mut dones = s.dones.clone();
        if let Some(last) = dones.last_mut() {
            *last = true;
        }
        all.dones.extend(dones);
    }
    all
}

/// Build the eta-linked reward corrections for every agent and step on the
/// cached trajectory: the coin path is reconstructed as
/// realized constant + (adjustment(eta) - realized adjustment) summed over
/// closed periods, and the correction is the utility-delta difference
/// between that path and the realized one.
fn eta_reward_corrections<'t>(
    tape: &'t Tape,
    scenario: &GtbConfig,
    net: &IncentiveNet,
    eta_vars: &[Var<'t>],
    traj: &GtbTrajectory,
) -> Result<Vec<Vec<Var<'t>>>, HarnessError> {
    let n = scenario.n_agents;
    let spp = scenario.steps_per_period();
    let eta_crra = scenario.crra_eta;
    let schedule = scenario.schedule(vec![0.0; scenario.n_brackets()])?;
    let zero = tape.scalar(0.0);
    let mut corr: Vec<Var<'t>> = vec![zero; n];
    let mut corr_active = false;
    let mut out: Vec<Vec<Var<'t>>> = vec![Vec::with_capacity(traj.len()); n];
    for t in 0..traj.len() {
        let prev_corr = corr.clone();
        let prev_active = corr_active;
        if (t + 1) % spp == 0 {
            let p = (t + 1) / spp - 1;
            if p < traj.period_obs.len() {
                let head = net.forward(tape, eta_vars, &traj.period_obs[p])?;
                let capped = head.clip(0.0, traj.cap);
                let rate_nodes: Vec<Var<'t>> =
                    (0..scenario.n_brackets()).map(|b| capped.index(b)).collect();
                let adj =
                    schedule.adjustment_nodes(tape, &rate_nodes, &traj.period_incomes[p])?;
                for i in 0..n {
                    let realized = traj.period_adjustments[p][i];
                    corr[i] = corr[i] + adj[i].add_const(-realized);
                }
                corr_active = true;
            }
        }
        for i in 0..n {
            if !corr_active {
                out[i].push(tape.scalar(0.0));
                continue;
            }
            let coin_now = traj.coins[t][i];
            let coin_prev = if t == 0 { 0.0 } else { traj.coins[t - 1][i] };
            let c_now = corr[i].add_const(coin_now);
            let u_now = crra_node(c_now, eta_crra);
            let u_now_real = crra_utility(coin_now, 0.0, eta_crra)
                .map_err(|e| HarnessError::Internal(e.to_string()))?;
            let (u_prev, u_prev_real) = if prev_active {
                let c_prev = prev_corr[i].add_const(coin_prev);
                (
                    crra_node(c_prev, eta_crra),
                    crra_utility(coin_prev, 0.0, eta_crra)
                        .map_err(|e| HarnessError::Internal(e.to_string()))?,
                )
            } else {
                (tape.scalar(0.0), 0.0)
            };
            let node = u_now - u_prev;
            out[i].push(node.add_const(-(u_now_real - u_prev_real)));
        }
    }
    Ok(out)
}

pub struct GtbMetaGradDesigner {
    pub net: IncentiveNet,
    pub critic: Critic,
    pub adam_id: nets::Adam,
}

impl GtbMetaGradDesigner {
    pub fn new(rc: &RunConfig, scenario: &GtbConfig) -> Result<Self, HarnessError> {
        let meta = &rc.gtb.meta;
        let net = IncentiveNet::for_tax(
            scenario.designer_obs_len(),
            scenario.n_brackets(),
            &rc.gtb.designer_hidden,
            rc.seed.wrapping_mul(0x9e3779b9).wrapping_add(31),
        )?;
        let critic_spec = MlpSpec::new(
            vec![scenario.designer_obs_len(), 64, 1],
            Head::Linear,
            rc.seed.wrapping_mul(0x9e3779b9).wrapping_add(37),
        )?;
        let critic = Critic::new(critic_spec, meta.critic_lr, meta.critic_tau, "tax_critic");
        let adam_id = nets::Adam::new(meta.alpha_id, &net.params);
        Ok(GtbMetaGradDesigner { net, critic, adam_id })
    }

    pub fn capped_rates(&self, dobs: &[f64], cap: f64) -> Vec<f64> {
        self.net
            .eval(dobs)
            .expect("tax head eval")
            .into_iter()
            .map(|r| r.min(cap).max(0.0))
            .collect()
    }
}

fn designer_advantages(
    critic: &Critic,
    traj: &GtbTrajectory,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = traj.len();
    let mut deltas = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let dones = vec![false; n];
    for t in 0..n {
        let v = critic.value(&traj.designer_obs_steps[t]);
        let v_next = if t + 1 >= n {
            0.0
        } else {
            critic.value(&traj.designer_obs_steps[t + 1])
        };
        deltas.push(traj.designer_rewards[t] + gamma * v_next - v);
        values.push(v);
    }
    let adv = agents::gae(&deltas, &dones, gamma, lambda);
    (adv, values)
}

/// Ordinary (non-meta) proximal-policy step on one episode.
fn plain_ppo_update(
    rc: &RunConfig,
    agents_state: &mut GtbAgents,
    traj: &GtbTrajectory,
) -> Result<(), HarnessError> {
    let slice = combined_slice(traj);
    let tape = Tape::new();
    let theta_vars = nets::register(&tape, &agents_state.params);
    let ctx = UpdateCtx {
        tape: &tape,
        spec: &agents_state.spec,
        theta: &theta_vars,
        traj: &slice,
        incentives: None,
        gamma: rc.gtb.agent.gamma,
        entropy_coef: rc.gtb.agent.entropy_coef,
        explore_eps: traj.explore_eps,
    };
    let updated = agents::ppo_update(
        &ctx,
        &mut agents_state.critic,
        rc.gtb.agent.clip_eps,
        rc.gtb.agent.gae_lambda,
        StepRule::FrozenAdam { adam: &mut agents_state.adam },
    )?;
    for (p, v) in agents_state.params.iter_mut().zip(&updated) {
        p.value = v.value();
    }
    check_finite(
        "agent parameters",
        agents_state.params.iter().flat_map(|p| p.value.data.iter().copied()),
    )?;
    Ok(())
}

/// One meta-gradient iteration on the economy; mirrors the escape-room loop
/// but with the tax linkage built from period records and zero incentive
/// cost (collected taxes are fully redistributed).
#[allow(clippy::too_many_arguments)]
fn metagrad_iteration(
    rc: &RunConfig,
    scenario: &GtbConfig,
    agents_state: &mut GtbAgents,
    designer: &mut GtbMetaGradDesigner,
    cached: &mut GtbTrajectory,
    explore_eps: f64,
    cap: f64,
    env_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<GtbTrajectory, HarnessError> {
    let meta = rc.gtb.meta.clone();
    let n = scenario.n_agents;
    let tape = Tape::new();
    let eta_vars = designer.net.register(&tape);

    let corrections = eta_reward_corrections(&tape, scenario, &designer.net, &eta_vars, cached)?;
    let mut combined_inc = Vec::new();
    for agent_nodes in &corrections {
        combined_inc.extend(agent_nodes.iter().copied());
    }
    let slice = combined_slice(cached);
    cached.uses += 1;
    let theta_vars = nets::register(&tape, &agents_state.params);
    let ctx = UpdateCtx {
        tape: &tape,
        spec: &agents_state.spec,
        theta: &theta_vars,
        traj: &slice,
        incentives: Some(&combined_inc),
        gamma: rc.gtb.agent.gamma,
        entropy_coef: rc.gtb.agent.entropy_coef,
        explore_eps: cached.explore_eps,
    };
    let theta_hat = agents::ppo_update(
        &ctx,
        &mut agents_state.critic,
        rc.gtb.agent.clip_eps,
        rc.gtb.agent.gae_lambda,
        StepRule::FrozenAdam { adam: &mut agents_state.adam },
    )?;

    let hat_params: Vec<Parameter> = agents_state
        .params
        .iter()
        .zip(&theta_hat)
        .map(|(p, v)| Parameter::new(p.name.clone(), p.role, v.value()))
        .collect();
    let designer_ref = &*designer;
    let mut emit = |dobs: &[f64]| designer_ref.capped_rates(dobs, cap);
    let mut validation = rollout_gtb(
        scenario,
        &agents_state.spec,
        &hat_params,
        &mut emit,
        explore_eps,
        cap,
        env_seed,
        rng,
    )?;
    validation.uses += 1;

    let (advantages, values) =
        designer_advantages(&designer.critic, &validation, meta.gamma, meta.gae_lambda);
    let mut surrogate = tape.scalar(0.0);
    for t in 0..validation.len() {
        let mut logp_sum = tape.scalar(0.0);
        for i in 0..n {
            let obs = tape.constant(Tensor::vector(validation.slices[i].obs[t].clone()));
            let probs = nets::mlp_forward(&agents_state.spec, &theta_hat, obs)?;
            let mixed = nets::mixed_policy(probs, validation.explore_eps)?;
            logp_sum = logp_sum + mixed.index(validation.slices[i].actions[t]).log();
        }
        let ratio = designers::outer_ratio(logp_sum);
        surrogate = surrogate + designers::clipped_term(ratio, advantages[t], meta.clip_eps);
    }
    let g_surr: Vec<Tensor> =
        tape.grad(surrogate, &eta_vars, false)?.iter().map(|g| g.value()).collect();
    check_finite(
        "outer gradient",
        g_surr.iter().flat_map(|t| t.data.iter().copied()),
    )?;
    designer.adam_id.step_ascent(&mut designer.net.params, &g_surr);

    let targets: Vec<f64> = values.iter().zip(&advantages).map(|(v, a)| v + a).collect();
    designer.critic.regress(&validation.designer_obs_steps, &targets);

    for (p, v) in agents_state.params.iter_mut().zip(&theta_hat) {
        p.value = v.value();
    }
    check_finite(
        "agent parameters",
        agents_state.params.iter().flat_map(|p| p.value.data.iter().copied()),
    )?;

    debug_assert!(cached.uses <= 2, "trajectory consumed more than twice");
    Ok(std::mem::replace(cached, validation))
}

fn record_from(traj: &GtbTrajectory, episode: u64, train_welfare: f64) -> MetricsRecord {
    MetricsRecord {
        episode,
        train_welfare,
        test_welfare: traj.swf,
        psi: 0.0,
        agent_returns: traj
            .slices
            .iter()
            .map(|s| s.env_rewards.iter().sum::<f64>())
            .collect(),
        prod: traj.final_prod,
        eq: traj.mean_eq,
        swf: traj.swf,
        income_pre: traj.income_pre.clone(),
        income_post: traj.income_post.clone(),
        tax_paid: traj.tax_paid.clone(),
        gathered: traj.gathered.clone(),
        built: traj.built.clone(),
        traded: traj.traded.clone(),
    }
}

/// Mean over eval episodes, folded into a single record.
fn mean_records(mut recs: Vec<MetricsRecord>, episode: u64, train_welfare: f64) -> MetricsRecord {
    let k = recs.len().max(1) as f64;
    let mut acc = recs.remove(0);
    for r in &recs {
        acc.test_welfare += r.test_welfare;
        acc.prod += r.prod;
        acc.eq += r.eq;
        acc.swf += r.swf;
        for (a, b) in acc.agent_returns.iter_mut().zip(&r.agent_returns) {
            *a += b;
        }
        for (a, b) in acc.income_pre.iter_mut().zip(&r.income_pre) {
            *a += b;
        }
        for (a, b) in acc.income_post.iter_mut().zip(&r.income_post) {
            *a += b;
        }
        for (a, b) in acc.tax_paid.iter_mut().zip(&r.tax_paid) {
            *a += b;
        }
        for (a, b) in acc.gathered.iter_mut().zip(&r.gathered) {
            *a += b;
        }
        for (a, b) in acc.built.iter_mut().zip(&r.built) {
            *a += b;
        }
        for (a, b) in acc.traded.iter_mut().zip(&r.traded) {
            *a += b;
        }
    }
    acc.test_welfare /= k;
    acc.prod /= k;
    acc.eq /= k;
    acc.swf /= k;
    for v in acc
        .agent_returns
        .iter_mut()
        .chain(acc.income_pre.iter_mut())
        .chain(acc.income_post.iter_mut())
        .chain(acc.tax_paid.iter_mut())
        .chain(acc.gathered.iter_mut())
        .chain(acc.built.iter_mut())
        .chain(acc.traded.iter_mut())
    {
        *v /= k;
    }
    acc.episode = episode;
    acc.train_welfare = train_welfare;
    acc
}

/// A resumable economy run (same shape as the escape-room runner).
pub struct GtbRun {
    pub rc: RunConfig,
    pub scenario: GtbConfig,
    agents: GtbAgents,
    meta: Option<(GtbMetaGradDesigner, Option<GtbTrajectory>)>,
    static_rates: Vec<f64>,
    rng: ChaCha8Rng,
    pub episode: u64,
    train_acc: f64,
    train_count: u64,
    pub records: Vec<MetricsRecord>,
}

impl GtbRun {
    pub fn new(rc: &RunConfig) -> Result<Self, HarnessError> {
        let scenario = rc.gtb.scenario.clone();
        scenario.validate()?;
        let agents = GtbAgents::new(rc, &scenario)?;
        let rng = ChaCha8Rng::seed_from_u64(rc.seed.wrapping_mul(0x5851f42d).wrapping_add(2));
        let meta = match rc.designer {
            DesignerChoice::MetaGrad => Some((GtbMetaGradDesigner::new(rc, &scenario)?, None)),
            DesignerChoice::DualDiscrete | DesignerChoice::DualContinuous => {
                return Err(HarnessError::Internal(
                    "dual-RL designers are implemented for the escape room only".into(),
                ))
            }
            _ => None,
        };
        let static_rates = match rc.designer {
            DesignerChoice::StaticSchedule => rc
                .gtb
                .static_rates
                .clone()
                .unwrap_or_else(crate::env::gtb::tax::us_federal_rates),
            _ => vec![0.0; scenario.n_brackets()],
        };
        Ok(GtbRun {
            rc: rc.clone(),
            scenario,
            agents,
            meta,
            static_rates,
            rng,
            episode: 0,
            train_acc: 0.0,
            train_count: 0,
            records: Vec::new(),
        })
    }

    fn phase1(&self) -> u64 {
        self.rc.gtb.phase1_episodes.min(self.rc.episodes)
    }

    fn env_seed_for(&self, episode: u64) -> u64 {
        self.rc.seed.wrapping_mul(0x94d0_49bb).wrapping_add(episode)
    }

    fn eval_seed_for(&self, episode: u64) -> u64 {
        self.rc.seed.wrapping_mul(0xbf58_476d).wrapping_add(episode).wrapping_add(7)
    }

    fn cap_at(&self, episode: u64) -> f64 {
        if episode >= self.phase1() {
            anneal_cap(episode - self.phase1(), self.rc.gtb.anneal_episodes)
        } else {
            1.0
        }
    }

    /// Frozen-policy evaluation averaged over the configured eval episodes.
    pub fn eval_now(&mut self) -> Result<MetricsRecord, HarnessError> {
        let episode = self.episode;
        let cap = self.cap_at(episode);
        let train_welfare = self.train_acc / self.train_count.max(1) as f64;
        let phase1 = self.phase1();
        let mut recs = Vec::new();
        let mut eval_rng = ChaCha8Rng::seed_from_u64(self.eval_seed_for(episode));
        for k in 0..self.rc.eval_episodes {
            let mut emit: Box<dyn FnMut(&[f64]) -> Vec<f64> + '_> = match &self.meta {
                Some((d, _)) if episode >= phase1 => {
                    Box::new(move |dobs: &[f64]| d.capped_rates(dobs, cap))
                }
                _ => {
                    let rates = if episode >= phase1 {
                        self.static_rates.clone()
                    } else {
                        vec![0.0; self.scenario.n_brackets()]
                    };
                    Box::new(move |_: &[f64]| rates.clone())
                }
            };
            let traj = rollout_gtb(
                &self.scenario,
                &self.agents.spec,
                &self.agents.params,
                &mut emit,
                0.0,
                cap,
                self.eval_seed_for(episode).wrapping_add(1000 + k),
                &mut eval_rng,
            )?;
            recs.push(record_from(&traj, episode, train_welfare));
        }
        let rec = mean_records(recs, episode, train_welfare);
        check_finite("evaluation welfare", [rec.swf, rec.prod, rec.eq])?;
        Ok(rec)
    }

    /// Advance training by one episode.
    pub fn train_episode(&mut self) -> Result<(), HarnessError> {
        let e = self.episode;
        let eps = self.rc.gtb.explore.at(e);
        let in_phase2 = e >= self.phase1();
        let cap = self.cap_at(e);
        let rc = self.rc.clone();
        let env_seed = self.env_seed_for(e);
        match &mut self.meta {
            Some((d, cache)) if in_phase2 => {
                if cache.is_none() {
                    let d_ref = &*d;
                    let mut emit = |dobs: &[f64]| d_ref.capped_rates(dobs, cap);
                    *cache = Some(rollout_gtb(
                        &self.scenario,
                        &self.agents.spec,
                        &self.agents.params,
                        &mut emit,
                        eps,
                        cap,
                        env_seed,
                        &mut self.rng,
                    )?);
                }
                let cached = cache.as_mut().expect("cache filled above");
                self.train_acc += cached.swf;
                self.train_count += 1;
                metagrad_iteration(
                    &rc,
                    &self.scenario,
                    &mut self.agents,
                    d,
                    cached,
                    eps,
                    cap,
                    env_seed.wrapping_add(1),
                    &mut self.rng,
                )?;
            }
            _ => {
                let rates = if in_phase2 {
                    self.static_rates.clone()
                } else {
                    vec![0.0; self.scenario.n_brackets()]
                };
                let mut emit = |_: &[f64]| rates.clone();
                let traj = rollout_gtb(
                    &self.scenario,
                    &self.agents.spec,
                    &self.agents.params,
                    &mut emit,
                    eps,
                    cap,
                    env_seed,
                    &mut self.rng,
                )?;
                self.train_acc += traj.swf;
                self.train_count += 1;
                plain_ppo_update(&rc, &mut self.agents, &traj)?;
            }
        }
        self.episode += 1;
        Ok(())
    }

    /// Load previously saved parameters (by name) into this run.
    pub fn load_params(&mut self, path: &std::path::Path) -> Result<(), HarnessError> {
        nets::load_checkpoint(path, &mut self.agents.params)?;
        nets::load_checkpoint(path, &mut self.agents.critic.params)?;
        self.agents.critic.target = self.agents.critic.params.clone();
        if let Some((d, _)) = &mut self.meta {
            nets::load_checkpoint(path, &mut d.net.params)?;
            nets::load_checkpoint(path, &mut d.critic.params)?;
            d.critic.target = d.critic.params.clone();
        }
        Ok(())
    }

    /// Deterministic single-episode replay under the frozen policy; returns
    /// a human-readable period-by-period log.
    pub fn replay_episode(&mut self, seed: u64) -> Result<String, HarnessError> {
        let cap = self.cap_at(self.episode.max(self.phase1()));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let static_rates = self.static_rates.clone();
        let traj = match &self.meta {
            Some((d, _)) => {
                let mut emit = |dobs: &[f64]| d.capped_rates(dobs, cap);
                rollout_gtb(
                    &self.scenario,
                    &self.agents.spec,
                    &self.agents.params,
                    &mut emit,
                    0.0,
                    cap,
                    seed.wrapping_add(1),
                    &mut rng,
                )?
            }
            None => {
                let mut emit = |_: &[f64]| static_rates.clone();
                rollout_gtb(
                    &self.scenario,
                    &self.agents.spec,
                    &self.agents.params,
                    &mut emit,
                    0.0,
                    cap,
                    seed.wrapping_add(1),
                    &mut rng,
                )?
            }
        };
        let mut log = String::new();
        use std::fmt::Write as _;
        for (p, rates) in traj.rates_used.iter().enumerate() {
            let rs: Vec<String> = rates.iter().map(|r| format!("{r:.3}")).collect();
            writeln!(log, "period {p}: marginal rates [{}]", rs.join(", ")).expect("string write");
            if let (Some(inc), Some(adj)) =
                (traj.period_incomes.get(p), traj.period_adjustments.get(p))
            {
                let incs: Vec<String> = inc.iter().map(|v| format!("{v:.2}")).collect();
                let adjs: Vec<String> = adj.iter().map(|v| format!("{v:+.2}")).collect();
                writeln!(log, "  incomes     [{}]", incs.join(", ")).expect("string write");
                writeln!(log, "  adjustments [{}]", adjs.join(", ")).expect("string write");
            }
        }
        let coins: Vec<String> = traj.income_post.iter().map(|v| format!("{v:.2}")).collect();
        writeln!(
            log,
            "final coin [{}]  swf {:.3}  productivity {:.2}  equality {:.3}",
            coins.join(", "),
            traj.swf,
            traj.final_prod,
            traj.mean_eq
        )
        .expect("string write");
        writeln!(
            log,
            "activity: gathered {:?} built {:?} trades {:?}",
            traj.gathered, traj.built, traj.traded
        )
        .expect("string write");
        Ok(log)
    }

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
        let mut params = self.agents.params.clone();
        params.extend(self.agents.critic.params.iter().cloned());
        let final_rates = match &self.meta {
            Some((d, _)) => {
                params.extend(d.net.params.iter().cloned());
                params.extend(d.critic.params.iter().cloned());
                let probe = EconomyState::new(self.scenario.clone(), 0)?;
                Some(d.capped_rates(&probe.designer_obs(), 1.0))
            }
            None => match self.rc.designer {
                DesignerChoice::StaticSchedule => Some(self.static_rates.clone()),
                _ => None,
            },
        };
        Ok(RunOutcome {
            records: self.records,
            final_test_welfare,
            params,
            final_head: None,
            final_rates,
        })
    }
}

/// Run the economy to budget under the configured designer.
pub fn run_gtb(rc: &RunConfig) -> Result<RunOutcome, HarnessError> {
    let mut run = GtbRun::new(rc)?;
    run.run_to_budget()?;
    run.outcome()
}
