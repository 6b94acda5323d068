//! Welfare metrics: CRRA utility, equality index, productivity, and the
//! social welfare objective.

use crate::diffgraph::Var;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("CRRA curvature must be positive, got {0}")]
    BadCurvature(f64),
    #[error("negative coin {0}")]
    NegativeCoin(f64),
}

/// CRRA coin utility minus cumulative labor:
/// u = (coin^(1-eta) - 1) / (1-eta) - labor, with eta = 1 meaning log utility.
pub fn crra_utility(coin: f64, labor: f64, eta_crra: f64) -> Result<f64, MetricsError> {
    if eta_crra <= 0.0 {
        return Err(MetricsError::BadCurvature(eta_crra));
    }
    if coin < 0.0 {
        return Err(MetricsError::NegativeCoin(coin));
    }
    let crra = if (eta_crra - 1.0).abs() < 1e-12 {
        coin.max(crate::diffgraph::LOG_FLOOR).ln()
    } else {
        (coin.powf(1.0 - eta_crra) - 1.0) / (1.0 - eta_crra)
    };
    Ok(crra - labor)
}

/// CRRA term as a graph node. The coin node is floored at a tiny positive
/// value so the power rule stays finite at zero coin.
pub fn crra_node<'t>(coin: Var<'t>, eta_crra: f64) -> Var<'t> {
    let guarded = coin.clip(crate::diffgraph::LOG_FLOOR, f64::INFINITY);
    if (eta_crra - 1.0).abs() < 1e-12 {
        guarded.log()
    } else {
        guarded
            .pow_const(1.0 - eta_crra)
            .add_const(-1.0)
            .scale(1.0 / (1.0 - eta_crra))
    }
}

/// Gini coefficient by pairwise differences.
pub fn gini(coins: &[f64]) -> f64 {
    let n = coins.len();
    let total: f64 = coins.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut diff = 0.0;
    for i in 0..n {
        for j in 0..n {
            diff += (coins[i] - coins[j]).abs();
        }
    }
    diff / (2.0 * n as f64 * total)
}

/// Equality index in [0,1]: 1 - N/(N-1) * Gini. Uniform coin gives exactly 1;
/// a single holder gives exactly 0. All-zero coin is 1 by convention.
pub fn equality_index(coins: &[f64]) -> f64 {
    let n = coins.len();
    if n <= 1 {
        return 1.0;
    }
    let total: f64 = coins.iter().sum();
    if total <= 0.0 {
        return 1.0;
    }
    // Folding N/(N-1) into the Gini ratio keeps the endpoints exact: a
    // single holder gives diff = 2(N-1) * total, so the quotient is 1.
    let mut diff = 0.0;
    for i in 0..n {
        for j in 0..n {
            diff += (coins[i] - coins[j]).abs();
        }
    }
    let eq = 1.0 - diff / (2.0 * (n - 1) as f64 * total);
    eq.clamp(0.0, 1.0)
}

/// Productivity: total coin over agents.
pub fn productivity(coins: &[f64]) -> f64 {
    coins.iter().sum()
}

/// Per-episode welfare accumulator: swf = sum_t prod_t * eq_t.
#[derive(Debug, Clone, Default)]
pub struct WelfareMetrics {
    pub prod: Vec<f64>,
    pub eq: Vec<f64>,
    pub swf: f64,
}

impl WelfareMetrics {
    pub fn record_step(&mut self, coins: &[f64]) -> f64 {
        let p = productivity(coins);
        let e = equality_index(coins);
        self.prod.push(p);
        self.eq.push(e);
        let r = p * e;
        self.swf += r;
        r
    }
}
