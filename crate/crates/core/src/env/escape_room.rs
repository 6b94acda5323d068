//! The Escape Room game ER(n, m): n agents, three positions (lever, start,
//! door). Exiting the door pays +10 but requires at least m agents at the
//! lever; any other movement costs -1; staying put is free.

pub const LEVER: usize = 0;
pub const START: usize = 1;
pub const DOOR: usize = 2;
pub const N_POSITIONS: usize = 3;
pub const N_ACTIONS: usize = 3;
pub const MAX_STEPS: usize = 5;

pub const EXIT_REWARD: f64 = 10.0;
pub const MOVE_COST: f64 = -1.0;

#[derive(Debug, thiserror::Error)]
pub enum ErError {
    #[error("invalid action index {0}")]
    InvalidAction(usize),
    #[error("joint action has {got} entries, expected {want}")]
    WrongArity { want: usize, got: usize },
    #[error("incentive head has length {0}, expected {}", N_ACTIONS)]
    HeadLength(usize),
    #[error("ER(n={n}, m={m}) requires 0 < m < n")]
    BadConfig { n: usize, m: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct ErConfig {
    pub n_agents: usize,
    pub lever_threshold: usize,
}

impl ErConfig {
    pub fn new(n: usize, m: usize) -> Result<Self, ErError> {
        if m == 0 || m >= n {
            return Err(ErError::BadConfig { n, m });
        }
        Ok(ErConfig { n_agents: n, lever_threshold: m })
    }

    /// Maximum total environment reward over any joint behavior:
    /// 10(n - m) - m, before incentive costs.
    pub fn optimal_env_welfare(&self) -> f64 {
        EXIT_REWARD * (self.n_agents - self.lever_threshold) as f64
            - self.lever_threshold as f64
    }

    pub fn agent_obs_len(&self) -> usize {
        N_POSITIONS * self.n_agents
    }

    pub fn designer_obs_len(&self) -> usize {
        N_POSITIONS * self.n_agents
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErState {
    pub positions: Vec<usize>,
    pub step: usize,
}

impl ErState {
    pub fn reset(cfg: &ErConfig) -> Self {
        ErState { positions: vec![START; cfg.n_agents], step: 0 }
    }
}

/// Advance the game one simultaneous move. Actions are target positions.
///
/// The lever threshold is resolved with post-move positions. Episode ends on
/// a successful door exit or when the step cap elapses.
pub fn er_step(
    cfg: &ErConfig,
    state: &ErState,
    joint: &[usize],
) -> Result<(ErState, Vec<f64>, bool), ErError> {
    if joint.len() != cfg.n_agents {
        return Err(ErError::WrongArity { want: cfg.n_agents, got: joint.len() });
    }
    if let Some(&a) = joint.iter().find(|&&a| a >= N_ACTIONS) {
        return Err(ErError::InvalidAction(a));
    }
    let next: Vec<usize> = joint.to_vec();
    let levers = next.iter().filter(|&&p| p == LEVER).count();
    let met = levers >= cfg.lever_threshold;
    let mut rewards = Vec::with_capacity(cfg.n_agents);
    for (i, &target) in next.iter().enumerate() {
        let r = if target == DOOR && met {
            EXIT_REWARD
        } else if target == state.positions[i] {
            0.0
        } else {
            MOVE_COST
        };
        rewards.push(r);
    }
    let exited = met && next.iter().any(|&p| p == DOOR);
    let step = state.step + 1;
    let done = exited || step >= MAX_STEPS;
    Ok((ErState { positions: next, step }, rewards, done))
}

/// Agent i's view: one-hot of its own position, then one-hots of the others
/// in index order.
pub fn agent_obs(cfg: &ErConfig, state: &ErState, agent: usize) -> Vec<f64> {
    let mut obs = vec![0.0; cfg.agent_obs_len()];
    obs[state.positions[agent]] = 1.0;
    let mut block = 1;
    for (j, &p) in state.positions.iter().enumerate() {
        if j == agent {
            continue;
        }
        obs[block * N_POSITIONS + p] = 1.0;
        block += 1;
    }
    obs
}

/// Designer view: concatenated one-hots of all agents' positions.
pub fn designer_obs(cfg: &ErConfig, state: &ErState) -> Vec<f64> {
    let mut obs = vec![0.0; cfg.designer_obs_len()];
    for (i, &p) in state.positions.iter().enumerate() {
        obs[i * N_POSITIONS + p] = 1.0;
    }
    obs
}

/// One-hot encoding of the joint action, one block per agent.
pub fn joint_action_onehot(cfg: &ErConfig, joint: &[usize]) -> Vec<f64> {
    let mut v = vec![0.0; cfg.n_agents * N_ACTIONS];
    for (i, &a) in joint.iter().enumerate() {
        v[i * N_ACTIONS + a] = 1.0;
    }
    v
}

/// Apply a per-action incentive head to one step's rewards.
///
/// Agent i receives `head[a_i]` on top of its environment reward; the
/// incentivization cost accrues the same amounts; the designer's reward is
/// the sum of environment rewards.
pub fn er_apply_incentives(
    env_rewards: &[f64],
    head: &[f64],
    joint: &[usize],
) -> Result<(Vec<f64>, f64, f64), ErError> {
    if head.len() != N_ACTIONS {
        return Err(ErError::HeadLength(head.len()));
    }
    let mut totals = Vec::with_capacity(env_rewards.len());
    let mut psi = 0.0;
    for (i, &r) in env_rewards.iter().enumerate() {
        let inc = head[joint[i]];
        totals.push(r + inc);
        psi += inc;
    }
    let r_id: f64 = env_rewards.iter().sum();
    Ok((totals, psi, r_id))
}
