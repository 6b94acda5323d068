//! Bracketed marginal taxation with lump-sum redistribution.

use crate::diffgraph::{Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum TaxError {
    #[error("negative income {0}")]
    NegativeIncome(f64),
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error("empty agent set")]
    NoAgents,
}

/// Bracket thresholds m_0 = 0 < m_1 < ... < m_{B-1} (the top bracket is
/// unbounded) with per-bracket marginal rates in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct TaxSchedule {
    pub thresholds: Vec<f64>,
    pub rates: Vec<f64>,
}

impl TaxSchedule {
    pub fn new(thresholds: Vec<f64>, rates: Vec<f64>) -> Result<Self, TaxError> {
        if thresholds.is_empty() || thresholds[0] != 0.0 {
            return Err(TaxError::BadSchedule("thresholds must start at 0".into()));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TaxError::BadSchedule("thresholds must be strictly increasing".into()));
        }
        if rates.len() != thresholds.len() {
            return Err(TaxError::BadSchedule(format!(
                "need one rate per bracket: {} thresholds, {} rates",
                thresholds.len(),
                rates.len()
            )));
        }
        if rates.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(TaxError::BadSchedule("rates must lie in [0,1]".into()));
        }
        Ok(TaxSchedule { thresholds, rates })
    }

    pub fn n_brackets(&self) -> usize {
        self.rates.len()
    }

    pub fn with_rates(&self, rates: Vec<f64>) -> Result<Self, TaxError> {
        Self::new(self.thresholds.clone(), rates)
    }

    /// Income mass of `z` inside each bracket: the coefficient of each
    /// marginal rate in T(z). An income exactly at a threshold m_{b+1}
    /// belongs to bracket b.
    pub fn bracket_masses(&self, z: f64) -> Result<Vec<f64>, TaxError> {
        if z < 0.0 {
            return Err(TaxError::NegativeIncome(z));
        }
        let b_count = self.n_brackets();
        let mut masses = vec![0.0; b_count];
        for b in 0..b_count {
            let lo = self.thresholds[b];
            let hi = if b + 1 < b_count { self.thresholds[b + 1] } else { f64::INFINITY };
            masses[b] = if z > hi {
                hi - lo
            } else if z > lo {
                z - lo
            } else {
                0.0
            };
        }
        Ok(masses)
    }

    /// Total tax on income z: piecewise-linear marginal taxation.
    pub fn tax_total(&self, z: f64) -> Result<f64, TaxError> {
        let masses = self.bracket_masses(z)?;
        Ok(masses.iter().zip(&self.rates).map(|(m, r)| m * r).sum())
    }

    /// Tax as a graph node, linear in the given rate nodes, so the designer
    /// can differentiate through the taxation of realized incomes.
    pub fn tax_total_node<'t>(
        &self,
        tape: &'t Tape,
        rate_nodes: &[Var<'t>],
        z: f64,
    ) -> Result<Var<'t>, TaxError> {
        let masses = self.bracket_masses(z)?;
        let mut total = tape.scalar(0.0);
        // Zero-mass brackets stay in the sum so the rate parameters remain
        // connected even when nobody earns into them; 0 + r * 0 is exact.
        for (b, &mass) in masses.iter().enumerate() {
            total = total + rate_nodes[b].scale(mass);
        }
        Ok(total)
    }

    /// Lump-sum redistribution: every agent pays its tax and receives an
    /// equal share of the pot. Conserves the income total bit-exactly: a
    /// residual correction nudges one entry until the left-fold sums match.
    pub fn redistribute(&self, incomes: &[f64]) -> Result<Vec<f64>, TaxError> {
        if incomes.is_empty() {
            return Err(TaxError::NoAgents);
        }
        let taxes: Vec<f64> = incomes
            .iter()
            .map(|&z| self.tax_total(z))
            .collect::<Result<_, _>>()?;
        let pot: f64 = taxes.iter().sum();
        let share = pot / incomes.len() as f64;
        let mut adjusted: Vec<f64> = incomes
            .iter()
            .zip(&taxes)
            .map(|(&z, &t)| z + (share - t))
            .collect();
        // Repair the last entry so the sequential sum reproduces the income
        // total bit for bit. Starting from target - prefix keeps the error
        // within a couple of ulps; every entry is nonnegative, so one float
        // step of the last entry moves the fold by at most one ulp of the
        // total and the walk cannot skip past it.
        let target: f64 = incomes.iter().sum();
        let n = adjusted.len();
        if n == 1 {
            adjusted[0] = target;
            return Ok(adjusted);
        }
        for _ in 0..1024 {
            let prefix: f64 = adjusted[..n - 1].iter().sum();
            if prefix + adjusted[n - 1] == target {
                return Ok(adjusted);
            }
            // Walk the last entry one float at a time. Entries are
            // nonnegative, so each step moves the rounded total by at most
            // one ulp and the walk cannot jump over the target.
            let mut x = target - prefix;
            for _ in 0..64 {
                let total = prefix + x;
                if total == target {
                    adjusted[n - 1] = x;
                    return Ok(adjusted);
                }
                x = if total < target { x.next_up() } else { x.next_down() };
            }
            // The prefix can sit exactly halfway between representable
            // totals, in which case ties-to-even makes every odd-mantissa
            // target unreachable from the last entry alone. Shift the
            // largest earlier entry one float to break the alignment.
            let k = adjusted[..n - 1]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            adjusted[k] = adjusted[k].next_up();
        }
        Ok(adjusted)
    }

    /// Per-agent redistribution adjustments (share minus own tax) as graph
    /// nodes linear in the rate nodes.
    pub fn adjustment_nodes<'t>(
        &self,
        tape: &'t Tape,
        rate_nodes: &[Var<'t>],
        incomes: &[f64],
    ) -> Result<Vec<Var<'t>>, TaxError> {
        if incomes.is_empty() {
            return Err(TaxError::NoAgents);
        }
        let taxes: Vec<Var<'t>> = incomes
            .iter()
            .map(|&z| self.tax_total_node(tape, rate_nodes, z))
            .collect::<Result<_, _>>()?;
        let mut pot = tape.scalar(0.0);
        for t in &taxes {
            pot = pot + *t;
        }
        let share = pot.scale(1.0 / incomes.len() as f64);
        Ok(taxes.into_iter().map(|t| share - t).collect())
    }
}

/// 2018-style US federal progressive ladder over 7 brackets.
pub fn us_federal_rates() -> Vec<f64> {
    vec![0.10, 0.12, 0.22, 0.24, 0.32, 0.35, 0.37]
}

/// Default bracket thresholds at desk scale.
pub fn default_thresholds() -> Vec<f64> {
    vec![0.0, 10.0, 39.0, 84.0, 160.0, 204.0, 510.0]
}
