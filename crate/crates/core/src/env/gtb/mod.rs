//! Gather-Trade-Build: a desk-scale grid economy with stochastic resource
//! regeneration, skill-heterogeneous agents, house building, a continuous
//! double auction, and bracketed taxation with lump-sum redistribution.

pub mod auction;
pub mod metrics;
pub mod tax;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use auction::{AuctionError, OrderBook, Resource, Side, Trade, MAX_PRICE};
use metrics::{crra_utility, WelfareMetrics};
use tax::{TaxError, TaxSchedule};

pub const N_MOVES: usize = 4;
/// no-op, 4 moves, gather, build, then 2 resources x {bid, ask} x 11 prices.
pub const N_ACTIONS: usize = 7 + 2 * 2 * (MAX_PRICE + 1);

#[derive(Debug, thiserror::Error)]
pub enum GtbError {
    #[error("malformed action id {0}")]
    BadAction(usize),
    #[error("joint action has {got} entries, expected {want}")]
    WrongArity { want: usize, got: usize },
    #[error("invalid scenario: {0}")]
    BadScenario(String),
    #[error(transparent)]
    Tax(#[from] TaxError),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LaborCosts {
    pub movement: f64,
    pub gather: f64,
    pub build: f64,
    pub trade: f64,
}

impl Default for LaborCosts {
    fn default() -> Self {
        LaborCosts { movement: 0.1, gather: 0.2, build: 1.0, trade: 0.05 }
    }
}

/// Scenario description; serializable as TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GtbConfig {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub horizon: usize,
    pub periods: usize,
    /// Probability per step that a harvested spawn cell regrows.
    pub regen_prob: f64,
    /// Explicit spawn cell coordinates; when absent a quadrant layout is
    /// generated from the grid size.
    pub wood_cells: Option<Vec<[usize; 2]>>,
    pub stone_cells: Option<Vec<[usize; 2]>>,
    /// Per-agent gather success probability.
    pub collect_skills: Vec<f64>,
    /// Coin minted per house built, per agent (geometric ladder by default).
    pub build_payments: Vec<f64>,
    pub labor: LaborCosts,
    pub crra_eta: f64,
    pub tax_thresholds: Vec<f64>,
    pub order_lifetime: usize,
    /// Egocentric window radius for agent observations.
    pub window_radius: usize,
    /// Materials each agent holds at episode start. Small endowments let
    /// short-horizon scenarios reach the build payoff without first
    /// assembling the full gather chain by chance.
    pub initial_wood: u64,
    pub initial_stone: u64,
}

impl Default for GtbConfig {
    fn default() -> Self {
        GtbConfig {
            width: 15,
            height: 15,
            n_agents: 4,
            horizon: 100,
            periods: 10,
            regen_prob: 0.05,
            wood_cells: None,
            stone_cells: None,
            collect_skills: vec![0.4, 0.6, 0.8, 1.0],
            build_payments: vec![10.0, 13.0, 16.9, 21.97],
            labor: LaborCosts::default(),
            crra_eta: 0.23,
            tax_thresholds: tax::default_thresholds(),
            order_lifetime: 50,
            window_radius: 2,
            initial_wood: 0,
            initial_stone: 0,
        }
    }
}

impl GtbConfig {
    pub fn validate(&self) -> Result<(), GtbError> {
        if self.horizon % self.periods != 0 {
            return Err(GtbError::BadScenario(format!(
                "horizon {} not divisible into {} periods",
                self.horizon, self.periods
            )));
        }
        if self.collect_skills.len() != self.n_agents || self.build_payments.len() != self.n_agents
        {
            return Err(GtbError::BadScenario("skill vectors must match agent count".into()));
        }
        if self.tax_thresholds.is_empty() || self.tax_thresholds[0] != 0.0 {
            return Err(GtbError::BadScenario("tax thresholds must start at 0".into()));
        }
        Ok(())
    }

    pub fn steps_per_period(&self) -> usize {
        self.horizon / self.periods
    }

    pub fn n_brackets(&self) -> usize {
        self.tax_thresholds.len()
    }

    pub fn schedule(&self, rates: Vec<f64>) -> Result<TaxSchedule, TaxError> {
        TaxSchedule::new(self.tax_thresholds.clone(), rates)
    }

    /// Quadrant layout: wood in the upper-left block, stone lower-right.
    pub fn spawn_layout(&self) -> (Vec<[usize; 2]>, Vec<[usize; 2]>) {
        if let (Some(w), Some(s)) = (&self.wood_cells, &self.stone_cells) {
            return (w.clone(), s.clone());
        }
        let block = (self.width.min(self.height) / 4).max(2);
        let mut wood = Vec::new();
        let mut stone = Vec::new();
        for dy in 0..block {
            for dx in 0..block {
                wood.push([1 + dx, 1 + dy]);
                stone.push([self.width - 2 - dx, self.height - 2 - dy]);
            }
        }
        (wood, stone)
    }

    pub fn agent_obs_len(&self) -> usize {
        let win = 2 * self.window_radius + 1;
        8 + win * win * 4 + 44 + self.n_brackets() + 3
    }

    pub fn designer_obs_len(&self) -> usize {
        6 * self.n_agents + 44 + self.n_brackets() + 3
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Empty,
    Wood { available: bool },
    Stone { available: bool },
    House { owner: usize },
}

#[derive(Debug, Clone, Default)]
pub struct AgentEconState {
    pub x: usize,
    pub y: usize,
    pub wood: u32,
    pub stone: u32,
    /// Total coin owned, including amounts escrowed behind resting bids.
    pub coin: f64,
    pub escrow_coin: f64,
    pub escrow_wood: u32,
    pub escrow_stone: u32,
    pub labor: f64,
    pub period_income: f64,
    // per-episode activity counters
    pub gathered: u64,
    pub built: u64,
    pub trades_buy: u64,
    pub trades_sell: u64,
    pub income_build: f64,
    pub income_trade: f64,
    pub tax_paid: f64,
}

/// Decoded agent action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GtbAction {
    NoOp,
    Move(usize),
    Gather,
    Build,
    Trade { resource: Resource, side: Side, price: usize },
}

pub fn decode_action(a: usize) -> Result<GtbAction, GtbError> {
    Ok(match a {
        0 => GtbAction::NoOp,
        1..=4 => GtbAction::Move(a - 1),
        5 => GtbAction::Gather,
        6 => GtbAction::Build,
        7..=50 => {
            let q = a - 7;
            let resource = Resource::from_index(q / 22);
            let side = if (q % 22) / 11 == 0 { Side::Bid } else { Side::Ask };
            GtbAction::Trade { resource, side, price: q % 11 }
        }
        _ => return Err(GtbError::BadAction(a)),
    })
}

/// Record of one completed tax period.
#[derive(Debug, Clone)]
pub struct PeriodRecord {
    pub step: usize,
    pub rates: Vec<f64>,
    pub incomes: Vec<f64>,
    pub taxes: Vec<f64>,
    /// share - own tax, the realized coin adjustment per agent.
    pub adjustments: Vec<f64>,
    /// Designer observation captured when the period's rates were set.
    pub obs_at_start: Vec<f64>,
}

pub struct EconomyState {
    pub cfg: GtbConfig,
    pub cells: Vec<Cell>,
    pub agents: Vec<AgentEconState>,
    pub book: OrderBook,
    pub t: usize,
    pub current_rates: Vec<f64>,
    pub welfare: WelfareMetrics,
    pub periods_done: Vec<PeriodRecord>,
    prev_utility: Vec<f64>,
    gather_rng: ChaCha8Rng,
    regen_rng: ChaCha8Rng,
}

pub struct StepOutcome {
    pub rewards: Vec<f64>,
    pub trades: Vec<Trade>,
    /// prod_t * eq_t after this step.
    pub designer_reward: f64,
    pub done: bool,
}

impl EconomyState {
    pub fn new(cfg: GtbConfig, seed: u64) -> Result<Self, GtbError> {
        cfg.validate()?;
        let mut cells = vec![Cell::Empty; cfg.width * cfg.height];
        let (wood, stone) = cfg.spawn_layout();
        for [x, y] in wood {
            cells[y * cfg.width + x] = Cell::Wood { available: true };
        }
        for [x, y] in stone {
            cells[y * cfg.width + x] = Cell::Stone { available: true };
        }
        let mut agents = Vec::new();
        for i in 0..cfg.n_agents {
            // Start positions spread along the middle row.
            let x = (i + 1) * cfg.width / (cfg.n_agents + 1);
            let y = cfg.height / 2;
            agents.push(AgentEconState {
                x,
                y,
                wood: cfg.initial_wood,
                stone: cfg.initial_stone,
                ..Default::default()
            });
        }
        let n_brackets = cfg.n_brackets();
        let eta = cfg.crra_eta;
        let prev_utility = agents
            .iter()
            .map(|a| crra_utility(a.coin, a.labor, eta).expect("initial utility"))
            .collect();
        Ok(EconomyState {
            cfg,
            cells,
            agents,
            book: OrderBook::new(),
            t: 0,
            current_rates: vec![0.0; n_brackets],
            welfare: WelfareMetrics::default(),
            periods_done: Vec::new(),
            prev_utility,
            gather_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6a09e667f3bcc908),
            regen_rng: ChaCha8Rng::seed_from_u64(seed ^ 0xbb67ae8584caa73b),
        })
    }

    /// Set marginal rates for the upcoming period. Called at period starts.
    pub fn set_tax_rates(&mut self, rates: Vec<f64>) -> Result<(), GtbError> {
        if rates.len() != self.cfg.n_brackets() {
            return Err(GtbError::BadScenario(format!(
                "expected {} rates, got {}",
                self.cfg.n_brackets(),
                rates.len()
            )));
        }
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(GtbError::BadScenario("rates outside [0,1]".into()));
        }
        self.current_rates = rates;
        Ok(())
    }

    pub fn at_period_start(&self) -> bool {
        self.t % self.cfg.steps_per_period() == 0 && self.t < self.cfg.horizon
    }

    pub fn coins(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.coin).collect()
    }

    fn cell(&self, x: usize, y: usize) -> Cell {
        self.cells[y * self.cfg.width + x]
    }

    fn cell_mut(&mut self, x: usize, y: usize) -> &mut Cell {
        &mut self.cells[y * self.cfg.width + x]
    }

    /// Advance the economy one step. Agents act in index order.
    pub fn step(&mut self, joint: &[usize]) -> Result<StepOutcome, GtbError> {
        if joint.len() != self.cfg.n_agents {
            return Err(GtbError::WrongArity { want: self.cfg.n_agents, got: joint.len() });
        }
        let mut trades = Vec::new();
        for (i, &aid) in joint.iter().enumerate() {
            let action = decode_action(aid)?;
            self.apply_action(i, action, &mut trades);
        }
        // Refund expired orders, then regrow resources.
        let expired = self.book.expire(self.t, self.cfg.order_lifetime);
        for (resource, side, order) in expired {
            self.refund(resource, side, &order);
        }
        let regen = self.cfg.regen_prob;
        for cell in self.cells.iter_mut() {
            match cell {
                Cell::Wood { available } | Cell::Stone { available } if !*available => {
                    if self.regen_rng.gen::<f64>() < regen {
                        *available = true;
                    }
                }
                _ => {}
            }
        }
        self.t += 1;
        // Period boundary: tax and redistribute before computing rewards.
        if self.t % self.cfg.steps_per_period() == 0 {
            self.close_period()?;
        }
        let eta = self.cfg.crra_eta;
        let mut rewards = Vec::with_capacity(self.cfg.n_agents);
        for (i, a) in self.agents.iter().enumerate() {
            let u = crra_utility(a.coin, a.labor, eta)
                .map_err(|e| GtbError::BadScenario(e.to_string()))?;
            rewards.push(u - self.prev_utility[i]);
            self.prev_utility[i] = u;
        }
        let designer_reward = self.welfare.record_step(&self.coins());
        let done = self.t >= self.cfg.horizon;
        if done {
            let resting = self.book.drain_all();
            for (resource, side, order) in resting {
                self.refund(resource, side, &order);
            }
        }
        Ok(StepOutcome { rewards, trades, designer_reward, done })
    }

    fn refund(&mut self, _resource: Resource, side: Side, order: &Order) {
        let a = &mut self.agents[order.agent];
        match side {
            Side::Bid => a.escrow_coin -= order.price as f64,
            Side::Ask => match _resource {
                Resource::Wood => a.escrow_wood -= 1,
                Resource::Stone => a.escrow_stone -= 1,
            },
        }
    }

    fn apply_action(&mut self, i: usize, action: GtbAction, trades: &mut Vec<Trade>) {
        let labor = self.cfg.labor;
        match action {
            GtbAction::NoOp => {}
            GtbAction::Move(dir) => {
                let (x, y) = (self.agents[i].x, self.agents[i].y);
                let (nx, ny) = match dir {
                    0 if y > 0 => (x, y - 1),
                    1 if y + 1 < self.cfg.height => (x, y + 1),
                    2 if x > 0 => (x - 1, y),
                    3 if x + 1 < self.cfg.width => (x + 1, y),
                    _ => return, // blocked by edge: rejected, no labor
                };
                if matches!(self.cell(nx, ny), Cell::House { .. }) {
                    return; // blocked by house
                }
                self.agents[i].x = nx;
                self.agents[i].y = ny;
                self.agents[i].labor += labor.movement;
            }
            GtbAction::Gather => {
                let (x, y) = (self.agents[i].x, self.agents[i].y);
                let success = match self.cell(x, y) {
                    Cell::Wood { available: true } | Cell::Stone { available: true } => {
                        self.gather_rng.gen::<f64>() < self.cfg.collect_skills[i]
                    }
                    _ => return, // not a harvestable cell: rejected
                };
                self.agents[i].labor += labor.gather;
                if success {
                    match self.cell_mut(x, y) {
                        Cell::Wood { available } => {
                            *available = false;
                            self.agents[i].wood += 1;
                        }
                        Cell::Stone { available } => {
                            *available = false;
                            self.agents[i].stone += 1;
                        }
                        _ => unreachable!(),
                    }
                    self.agents[i].gathered += 1;
                }
            }
            GtbAction::Build => {
                let (x, y) = (self.agents[i].x, self.agents[i].y);
                let a = &self.agents[i];
                let free_wood = a.wood - a.escrow_wood;
                let free_stone = a.stone - a.escrow_stone;
                if !matches!(self.cell(x, y), Cell::Empty) || free_wood < 1 || free_stone < 1 {
                    return; // rejected: no labor
                }
                *self.cell_mut(x, y) = Cell::House { owner: i };
                let payment = self.cfg.build_payments[i];
                let a = &mut self.agents[i];
                a.wood -= 1;
                a.stone -= 1;
                a.coin += payment;
                a.period_income += payment;
                a.income_build += payment;
                a.built += 1;
                a.labor += labor.build;
            }
            GtbAction::Trade { resource, side, price } => {
                let a = &self.agents[i];
                match side {
                    Side::Bid => {
                        let free_coin = a.coin - a.escrow_coin;
                        if free_coin < price as f64 {
                            return; // insufficient escrow
                        }
                    }
                    Side::Ask => {
                        let free = match resource {
                            Resource::Wood => a.wood - a.escrow_wood,
                            Resource::Stone => a.stone - a.escrow_stone,
                        };
                        if free < 1 {
                            return;
                        }
                    }
                }
                match self.book.submit(i, resource, side, price, self.t) {
                    Ok(Some(trade)) => {
                        self.settle(&trade, side);
                        self.agents[i].labor += labor.trade;
                        trades.push(trade);
                    }
                    Ok(None) => {
                        // Order rests: escrow the funds/goods.
                        let a = &mut self.agents[i];
                        match side {
                            Side::Bid => a.escrow_coin += price as f64,
                            Side::Ask => match resource {
                                Resource::Wood => a.escrow_wood += 1,
                                Resource::Stone => a.escrow_stone += 1,
                            },
                        }
                        a.labor += labor.trade;
                    }
                    Err(AuctionError::SelfCross) => {} // rejected, no labor
                    Err(AuctionError::BadPrice(_)) => unreachable!("prices decoded in range"),
                }
            }
        }
    }

    /// Move coin and goods for an executed trade. `incoming_side` is the side
    /// of the order that triggered the match.
    fn settle(&mut self, trade: &Trade, incoming_side: Side) {
        let price = trade.price as f64;
        // The resting counterparty's escrow is released.
        match incoming_side {
            Side::Bid => {
                // Standing ask held one resource unit in escrow.
                let seller = &mut self.agents[trade.seller];
                match trade.resource {
                    Resource::Wood => {
                        seller.escrow_wood -= 1;
                        seller.wood -= 1;
                    }
                    Resource::Stone => {
                        seller.escrow_stone -= 1;
                        seller.stone -= 1;
                    }
                }
            }
            Side::Ask => {
                // Standing bid held its price in coin escrow.
                let buyer = &mut self.agents[trade.buyer];
                buyer.escrow_coin -= trade.bid_escrow as f64;
                // Incoming ask sells straight from inventory.
                let seller = &mut self.agents[trade.seller];
                match trade.resource {
                    Resource::Wood => seller.wood -= 1,
                    Resource::Stone => seller.stone -= 1,
                }
            }
        }
        let buyer = &mut self.agents[trade.buyer];
        buyer.coin -= price;
        match trade.resource {
            Resource::Wood => buyer.wood += 1,
            Resource::Stone => buyer.stone += 1,
        }
        buyer.trades_buy += 1;
        let seller = &mut self.agents[trade.seller];
        seller.coin += price;
        seller.period_income += price;
        seller.income_trade += price;
        seller.trades_sell += 1;
    }

    fn close_period(&mut self) -> Result<(), GtbError> {
        let schedule = self.cfg.schedule(self.current_rates.clone())?;
        let incomes: Vec<f64> = self.agents.iter().map(|a| a.period_income).collect();
        let taxes: Vec<f64> = incomes
            .iter()
            .map(|&z| schedule.tax_total(z))
            .collect::<Result<_, _>>()?;
        let adjusted = schedule.redistribute(&incomes)?;
        let adjustments: Vec<f64> = adjusted
            .iter()
            .zip(&incomes)
            .map(|(zt, z)| zt - z)
            .collect();
        for (i, a) in self.agents.iter_mut().enumerate() {
            a.coin += adjustments[i];
            a.tax_paid += taxes[i];
            a.period_income = 0.0;
        }
        self.periods_done.push(PeriodRecord {
            step: self.t,
            rates: self.current_rates.clone(),
            incomes,
            taxes,
            adjustments,
            obs_at_start: Vec::new(),
        });
        Ok(())
    }

    /// Flat observation for one agent.
    pub fn agent_obs(&self, i: usize) -> Vec<f64> {
        let a = &self.agents[i];
        let cfg = &self.cfg;
        let mut obs = Vec::with_capacity(cfg.agent_obs_len());
        obs.push(a.x as f64 / cfg.width as f64);
        obs.push(a.y as f64 / cfg.height as f64);
        obs.push(a.wood as f64 / 10.0);
        obs.push(a.stone as f64 / 10.0);
        obs.push(a.coin / 100.0);
        obs.push(cfg.collect_skills[i]);
        obs.push(cfg.build_payments[i] / 20.0);
        obs.push(a.labor / 100.0);
        let r = cfg.window_radius as isize;
        for dy in -r..=r {
            for dx in -r..=r {
                let x = a.x as isize + dx;
                let y = a.y as isize + dy;
                let mut ch = [0.0; 4];
                if x >= 0 && y >= 0 && (x as usize) < cfg.width && (y as usize) < cfg.height {
                    match self.cell(x as usize, y as usize) {
                        Cell::Wood { available: true } => ch[0] = 1.0,
                        Cell::Stone { available: true } => ch[1] = 1.0,
                        Cell::House { .. } => ch[2] = 1.0,
                        _ => {}
                    }
                    if self
                        .agents
                        .iter()
                        .enumerate()
                        .any(|(j, o)| j != i && o.x == x as usize && o.y == y as usize)
                    {
                        ch[3] = 1.0;
                    }
                }
                obs.extend_from_slice(&ch);
            }
        }
        self.push_market_obs(&mut obs);
        obs.extend_from_slice(&self.current_rates);
        let schedule = self.cfg.schedule(self.current_rates.clone()).expect("valid rates");
        let marginal = marginal_rate(&schedule, a.period_income);
        obs.push(marginal);
        obs.push((self.t % cfg.steps_per_period()) as f64 / cfg.steps_per_period() as f64);
        obs.push(a.period_income / 100.0);
        obs
    }

    /// Flat global observation for the designer. Excludes agents' private
    /// skills and utility parameters.
    pub fn designer_obs(&self) -> Vec<f64> {
        let cfg = &self.cfg;
        let mut obs = Vec::with_capacity(cfg.designer_obs_len());
        for a in &self.agents {
            obs.push(a.x as f64 / cfg.width as f64);
            obs.push(a.y as f64 / cfg.height as f64);
            obs.push(a.wood as f64 / 10.0);
            obs.push(a.stone as f64 / 10.0);
            obs.push(a.coin / 100.0);
            obs.push(a.period_income / 100.0);
        }
        self.push_market_obs(&mut obs);
        obs.extend_from_slice(&self.current_rates);
        obs.push(self.t as f64 / cfg.horizon as f64);
        obs.push(metrics::productivity(&self.coins()) / 100.0);
        obs.push(metrics::equality_index(&self.coins()));
        obs
    }

    fn push_market_obs(&self, obs: &mut Vec<f64>) {
        for r in [Resource::Wood, Resource::Stone] {
            let (bids, asks) = self.book.depth(r);
            obs.extend(bids.iter().map(|&c| c as f64 / 4.0));
            obs.extend(asks.iter().map(|&c| c as f64 / 4.0));
        }
    }
}

use auction::Order;

/// Marginal rate applying to the bracket that contains income z.
pub fn marginal_rate(schedule: &TaxSchedule, z: f64) -> f64 {
    let mut rate = schedule.rates[0];
    for (b, &m) in schedule.thresholds.iter().enumerate() {
        if z > m {
            rate = schedule.rates[b];
        }
    }
    rate
}
