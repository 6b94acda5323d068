//! Property tests for bracketed taxation: continuity at thresholds, exact
//! conservation under redistribution, and the rate-derivative identity
//! dT/dr_b = bracket mass.

use incentive_lab::diffgraph::{Tape, Tensor};
use incentive_lab::env::gtb::tax::{default_thresholds, us_federal_rates, TaxSchedule};
use proptest::prelude::*;

fn arb_rates() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..=1.0, 7)
}

fn arb_incomes() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..600.0, 2..12)
}

fn schedule(rates: Vec<f64>) -> TaxSchedule {
    TaxSchedule::new(default_thresholds(), rates).unwrap()
}

#[test]
fn schedule_validation() {
    assert!(TaxSchedule::new(vec![1.0, 2.0], vec![0.1, 0.1]).is_err(), "must start at 0");
    assert!(TaxSchedule::new(vec![0.0, 2.0, 2.0], vec![0.1; 3]).is_err(), "strictly increasing");
    assert!(TaxSchedule::new(vec![0.0, 2.0], vec![0.1]).is_err(), "arity");
    assert!(TaxSchedule::new(vec![0.0, 2.0], vec![0.1, 1.5]).is_err(), "rate range");
}

#[test]
fn hand_computed_tax_example() {
    // Thresholds [0, 10, 39, ...] with US federal rates: income 50 pays
    // 10*0.10 + 29*0.12 + 11*0.22.
    let s = schedule(us_federal_rates());
    let expected = 10.0 * 0.10 + 29.0 * 0.12 + 11.0 * 0.22;
    assert!((s.tax_total(50.0).unwrap() - expected).abs() < 1e-12);
    assert_eq!(s.tax_total(0.0).unwrap(), 0.0);
    assert!(s.tax_total(-1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn tax_is_continuous_at_thresholds(rates in arb_rates(), b in 1usize..7) {
        let s = schedule(rates);
        let m = s.thresholds[b];
        let below = s.tax_total(m - 1e-9).unwrap();
        let at = s.tax_total(m).unwrap();
        let above = s.tax_total(m + 1e-9).unwrap();
        prop_assert!((at - below).abs() < 1e-8, "jump below threshold {b}: {below} vs {at}");
        prop_assert!((above - at).abs() < 1e-8, "jump above threshold {b}: {at} vs {above}");
    }

    #[test]
    fn tax_is_monotone_in_income(rates in arb_rates(), z1 in 0.0f64..600.0, z2 in 0.0f64..600.0) {
        let s = schedule(rates);
        let (lo, hi) = if z1 <= z2 { (z1, z2) } else { (z2, z1) };
        prop_assert!(s.tax_total(lo).unwrap() <= s.tax_total(hi).unwrap() + 1e-12);
    }

    #[test]
    fn redistribution_conserves_total_income_exactly(
        rates in arb_rates(),
        incomes in arb_incomes(),
    ) {
        let s = schedule(rates);
        let adjusted = s.redistribute(&incomes).unwrap();
        let before: f64 = incomes.iter().fold(0.0, |a, &b| a + b);
        let after: f64 = adjusted.iter().fold(0.0, |a, &b| a + b);
        prop_assert_eq!(before.to_bits(), after.to_bits(),
            "redistribution changed the left-fold total: {} vs {}", before, after);
    }

    #[test]
    fn rate_gradient_equals_bracket_mass(rates in arb_rates(), z in 0.0f64..600.0) {
        let s = schedule(rates.clone());
        let masses = s.bracket_masses(z).unwrap();
        let tape = Tape::new();
        let rate_leaves: Vec<_> = rates.iter().map(|&r| tape.leaf(Tensor::scalar(r))).collect();
        let total = s.tax_total_node(&tape, &rate_leaves, z).unwrap();
        let grads = tape.grad(total, &rate_leaves, false).unwrap();
        for (g, &m) in grads.iter().zip(&masses) {
            prop_assert!((g.item() - m).abs() <= 1e-8,
                "dT/dr = {} but bracket mass is {}", g.item(), m);
        }
    }

    #[test]
    fn graph_tax_matches_numeric_tax(rates in arb_rates(), z in 0.0f64..600.0) {
        let s = schedule(rates.clone());
        let tape = Tape::new();
        let rate_leaves: Vec<_> = rates.iter().map(|&r| tape.leaf(Tensor::scalar(r))).collect();
        let node = s.tax_total_node(&tape, &rate_leaves, z).unwrap();
        prop_assert!((node.item() - s.tax_total(z).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_rates_give_exactly_zero_adjustments(incomes in arb_incomes()) {
        let s = schedule(vec![0.0; 7]);
        let adjusted = s.redistribute(&incomes).unwrap();
        for (a, z) in adjusted.iter().zip(&incomes) {
            prop_assert_eq!(a.to_bits(), z.to_bits(), "zero tax must be a bit-exact no-op");
        }
    }
}

#[test]
fn adjustment_nodes_match_realized_adjustments() {
    let rates = us_federal_rates();
    let s = schedule(rates.clone());
    let incomes = vec![0.0, 25.0, 120.0, 480.0];
    let adjusted = s.redistribute(&incomes).unwrap();
    let tape = Tape::new();
    let rate_leaves: Vec<_> = rates.iter().map(|&r| tape.leaf(Tensor::scalar(r))).collect();
    let nodes = s.adjustment_nodes(&tape, &rate_leaves, &incomes).unwrap();
    for ((node, a), z) in nodes.iter().zip(&adjusted).zip(&incomes) {
        // The graph version is share - tax without the residual nudge, so
        // it agrees to rounding rather than bitwise.
        assert!((node.item() - (a - z)).abs() < 1e-9);
    }
}
