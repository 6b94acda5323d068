//! Designer policies: incentive heads, the outer clipped surrogate, the
//! discrete/continuous baseline designers, and fixed tax schedules.

use incentive_lab::designers::{
    clipped_term, decode_levels, outer_ratio, DualContinuousDesigner, DualDiscreteDesigner,
    IncentiveNet,
};
use incentive_lab::diffgraph::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn decode_levels_is_lexicographic_with_leading_slot_most_significant() {
    let levels = [0.0, 1.0];
    assert_eq!(decode_levels(0, &levels, 3), vec![0.0, 0.0, 0.0]);
    assert_eq!(decode_levels(1, &levels, 3), vec![0.0, 0.0, 1.0]);
    assert_eq!(decode_levels(4, &levels, 3), vec![1.0, 0.0, 0.0]);
    assert_eq!(decode_levels(7, &levels, 3), vec![1.0, 1.0, 1.0]);
    let five = [0.0, 0.5, 1.0, 1.5, 2.0];
    assert_eq!(decode_levels(0, &five, 3), vec![0.0; 3]);
    assert_eq!(decode_levels(124, &five, 3), vec![2.0, 2.0, 2.0]);
    // 124 = 4*25 + 4*5 + 4 is the last of 5^3 = 125 composite choices.
    assert_eq!(decode_levels(30, &five, 3), vec![0.5, 0.5, 0.0]);
}

#[test]
fn oversized_discrete_action_space_is_rejected() {
    // 5 levels over 6 slots is 15625 composite actions, past the cap.
    let err = DualDiscreteDesigner::new(4, 6, vec![0.0, 0.5, 1.0, 1.5, 2.0], &[8], 1e-3, 0.99, 0.01, 0);
    assert!(err.is_err());
    // 4096 exactly (8^4) still fits.
    let ok = DualDiscreteDesigner::new(
        4,
        4,
        vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0],
        &[8],
        1e-3,
        0.99,
        0.01,
        0,
    );
    assert!(ok.is_ok());
}

#[test]
fn discrete_designer_emits_decoded_heads() {
    let d = DualDiscreteDesigner::new(3, 2, vec![0.0, 1.0, 2.0], &[8], 1e-3, 0.99, 0.01, 5).unwrap();
    assert_eq!(d.n_choices(), 9);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (choice, head) = d.act(&[0.1, 0.2, 0.3], &mut rng).unwrap();
    assert_eq!(head, decode_levels(choice, &d.levels, 2));
}

#[test]
fn continuous_designer_head_stays_in_range() {
    let d = DualContinuousDesigner::new(3, 4, (0.0, 2.0), &[8], 1e-3, 0.99, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (_, head) = d.act(&[0.5, -0.5, 1.0], &mut rng).unwrap();
        assert!(head.iter().all(|&v| v > 0.0 && v < 2.0));
    }
}

#[test]
fn gaussian_sampler_is_roughly_standard() {
    // Box-Muller mean and sigma over many draws; the squashed head of a
    // zero-mean designer should straddle the range midpoint.
    let d = DualContinuousDesigner::new(2, 1, (0.0, 2.0), &[4], 1e-3, 0.99, 77).unwrap();
    let mut zeroed = d;
    for p in zeroed.params.iter_mut() {
        p.value = Tensor::zeros(p.value.shape);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut heads: Vec<f64> = (0..4001)
        .map(|_| zeroed.act(&[0.3, 0.7], &mut rng).unwrap().1[0])
        .collect();
    heads.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = heads[heads.len() / 2];
    assert!((median - 1.0).abs() < 0.06, "median head {median}, expected near 1.0");
}

#[test]
fn zero_learning_rate_designer_updates_are_no_ops() {
    let mut d = DualDiscreteDesigner::new(3, 2, vec![0.0, 1.0], &[8], 0.0, 0.99, 0.01, 5).unwrap();
    let before: Vec<Vec<f64>> = d.params.iter().map(|p| p.value.data.clone()).collect();
    d.update(
        &[vec![0.1, 0.2, 0.3], vec![0.3, 0.2, 0.1]],
        &[1, 2],
        &[1.0, -0.5],
    )
    .unwrap();
    for (p, b) in d.params.iter().zip(&before) {
        assert_eq!(&p.value.data, b);
    }
}

#[test]
fn discrete_designer_reinforces_rewarded_choices() {
    // A one-step bandit: choice 1 pays +1, everything else 0. After updates
    // the probability of choice 1 must rise.
    let mut d = DualDiscreteDesigner::new(2, 1, vec![0.0, 1.0, 2.0], &[8], 0.05, 0.99, 0.0, 5).unwrap();
    let obs = vec![1.0, 0.0];
    let prob_of = |d: &DualDiscreteDesigner, c: usize| -> f64 {
        let tape = Tape::new();
        let vars = incentive_lab::nets::register(&tape, &d.params);
        let x = tape.constant(Tensor::vector(obs.clone()));
        incentive_lab::nets::mlp_forward(&d.spec, &vars, x).unwrap().value().data[c]
    };
    let before = prob_of(&d, 1);
    for _ in 0..50 {
        for c in 0..3 {
            let r = if c == 1 { 1.0 } else { 0.0 };
            d.update(&[obs.clone()], &[c], &[r]).unwrap();
        }
    }
    let after = prob_of(&d, 1);
    assert!(after > before + 0.1, "choice probability did not rise: {before} -> {after}");
}

#[test]
fn outer_ratio_is_one_with_gradient_through_logp() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(0.4));
    let logp = x * x; // stand-in for a log-probability
    let ratio = outer_ratio(logp);
    assert_eq!(ratio.item(), 1.0);
    // d ratio / dx at evaluation equals d logp / dx = 2x.
    let g = tape.grad(ratio, &[x], false).unwrap()[0].item();
    assert!((g - 0.8).abs() < 1e-12);
}

#[test]
fn clipped_term_bounds_the_improvement_incentive() {
    // Positive advantage: the term value is ratio*A = A at evaluation, and
    // the clip keeps the gradient from exceeding the trust region once the
    // ratio would move outside it.
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(0.0));
    let term = clipped_term(outer_ratio(x.add_const(0.3)), 2.0, 0.2);
    assert!((term.item() - 2.0).abs() < 1e-12);
    let g = tape.grad(term, &[x], false).unwrap()[0].item();
    assert!((g - 2.0).abs() < 1e-12, "inside the clip range the gradient is A * dlogp");
}

#[test]
fn incentive_net_eval_matches_registered_forward() {
    let net = IncentiveNet::for_escape_room(6, 3, &[8], 3).unwrap();
    let obs = vec![0.3, -0.4, 1.0, 0.0, 0.5, -1.0];
    let plain = net.eval(&obs).unwrap();
    let tape = Tape::new();
    let vars = net.register(&tape);
    let graph = net.forward(&tape, &vars, &obs).unwrap().value().data;
    assert_eq!(plain, graph);
    assert!(plain.iter().all(|&v| v > 0.0 && v < 2.0));
    let tax = IncentiveNet::for_tax(6, 7, &[8], 3).unwrap();
    assert!(tax.eval(&obs).unwrap().iter().all(|&v| v > 0.0 && v < 1.0));
}
