//! Agent update rules: return/advantage oracles, incentive linkage checked
//! against finite differences for every update kind, and exact neutrality
//! when incentives are zero.

use incentive_lab::agents::{
    self, discounted_returns, gae, pg_update, ppo_update, q_softmax_update, AgentTrajectorySlice,
    Critic, StepRule, UpdateCtx,
};
use incentive_lab::diffgraph::{ParamRole, Tape, Tensor, Var};
use incentive_lab::nets::{self, Adam, Head, MlpSpec};

const FD_EPS: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// A small fixed trajectory over 2-dim observations and 3 actions.
fn toy_slice() -> AgentTrajectorySlice {
    AgentTrajectorySlice {
        obs: vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![0.5, -0.5],
        ],
        actions: vec![0, 2, 1, 0],
        env_rewards: vec![0.0, -1.0, 2.0, 10.0],
        incentives: vec![0.0; 4],
        dones: vec![false, false, false, true],
    }
}

fn toy_spec(seed: u64) -> MlpSpec {
    MlpSpec::new(vec![2, 5, 3], Head::Softmax, seed).unwrap()
}

#[test]
fn discounted_returns_match_hand_rollup() {
    let r = discounted_returns(&[1.0, 2.0, 3.0], 0.5);
    assert!((r[2] - 3.0).abs() < 1e-12);
    assert!((r[1] - (2.0 + 0.5 * 3.0)).abs() < 1e-12);
    assert!((r[0] - (1.0 + 0.5 * 3.5)).abs() < 1e-12);
}

#[test]
fn gae_reduces_to_monte_carlo_at_lambda_one() {
    let deltas = [0.3, -1.2, 0.8];
    let dones = [false, false, true];
    let adv = gae(&deltas, &dones, 0.9, 1.0);
    // With lambda = 1 the recursion is a plain discounted sum of deltas.
    let expect2 = 0.8;
    let expect1 = -1.2 + 0.9 * expect2;
    let expect0 = 0.3 + 0.9 * expect1;
    assert!((adv[2] - expect2).abs() < 1e-12);
    assert!((adv[1] - expect1).abs() < 1e-12);
    assert!((adv[0] - expect0).abs() < 1e-12);
}

#[test]
fn gae_resets_at_episode_boundaries() {
    let deltas = [1.0, 1.0, 1.0, 1.0];
    let dones = [false, true, false, true];
    let adv = gae(&deltas, &dones, 0.9, 0.95);
    // The second segment must not see the first segment's accumulator.
    assert_eq!(adv[2], adv[0]);
    assert_eq!(adv[3], adv[1]);
    assert!(adv[0] > adv[1]);
}

/// Finite-difference oracle for the incentive linkage of one update kind:
/// pick an outer loss L = sum of squares of updated parameters, and compare
/// dL/d(incentive at step k) computed through the graph against central
/// differences where the perturbed incentive enters as a realized constant.
fn check_incentive_linkage(
    name: &str,
    update: impl for<'t> Fn(&UpdateCtx<'_, 't>) -> Vec<Var<'t>>,
) {
    let spec = toy_spec(3);
    let params = spec.init("agent", ParamRole::AgentPolicy);
    let base = toy_slice();

    let outer_of = |incentive_shift: &[f64]| -> f64 {
        let mut traj = base.clone();
        for (v, s) in traj.incentives.iter_mut().zip(incentive_shift) {
            *v += s;
        }
        let tape = Tape::new();
        let theta = nets::register(&tape, &params);
        let ctx = UpdateCtx {
            tape: &tape,
            spec: &spec,
            theta: &theta,
            traj: &traj,
            incentives: None,
            gamma: 0.9,
            entropy_coef: 0.01,
            explore_eps: 0.1,
        };
        let updated = update(&ctx);
        updated
            .iter()
            .map(|v| v.value().data.iter().map(|x| x * x).sum::<f64>())
            .sum()
    };

    // Graph path: incentives as leaves, differentiate the outer loss.
    let tape = Tape::new();
    let inc_leaves: Vec<Var> = base.incentives.iter().map(|&v| tape.leaf(Tensor::scalar(v))).collect();
    let theta = nets::register(&tape, &params);
    let ctx = UpdateCtx {
        tape: &tape,
        spec: &spec,
        theta: &theta,
        traj: &base,
        incentives: Some(&inc_leaves),
        gamma: 0.9,
        entropy_coef: 0.01,
        explore_eps: 0.1,
    };
    let updated = update(&ctx);
    let mut loss = tape.scalar(0.0);
    for v in &updated {
        loss = loss + (*v * *v).sum();
    }
    let grads = tape.grad(loss, &inc_leaves, false).unwrap();

    for k in 0..base.len() {
        let mut hi = vec![0.0; base.len()];
        let mut lo = vec![0.0; base.len()];
        hi[k] = FD_EPS;
        lo[k] = -FD_EPS;
        let fd = (outer_of(&hi) - outer_of(&lo)) / (2.0 * FD_EPS);
        let an = grads[k].item();
        assert!(
            rel_err(an, fd) <= 1e-4,
            "{name}: step {k}: graph {an} vs finite difference {fd}"
        );
    }
}

#[test]
fn policy_gradient_update_carries_incentive_linkage() {
    check_incentive_linkage("pg", |ctx| pg_update(ctx, 0.05).unwrap());
}

#[test]
fn ppo_sgd_update_carries_incentive_linkage() {
    // Fresh critic per evaluation so the update is a pure function of the
    // incentives (regression happens after the differentiable step).
    check_incentive_linkage("ppo_sgd", |ctx| {
        let mut critic = Critic::new(
            MlpSpec::new(vec![2, 4, 1], Head::Linear, 7).unwrap(),
            1e-3,
            0.05,
            "c",
        );
        ppo_update(ctx, &mut critic, 0.2, 0.95, StepRule::Sgd { lr: 0.05 }).unwrap()
    });
}

/// The frozen-Adam step holds the adaptive denominator at its realized value
/// and links only the first-moment direction. The finite-difference oracle
/// must freeze the denominator the same way: inner gradients are recovered
/// with a unit SGD step, then the Adam formula is applied numerically with
/// the denominator fixed at the unperturbed gradients.
#[test]
fn ppo_frozen_adam_update_carries_incentive_linkage() {
    let spec = toy_spec(3);
    let params = spec.init("agent", ParamRole::AgentPolicy);
    let base = toy_slice();
    let lr = 3e-4;
    let (beta1, beta2, eps_adam) = (0.9, 0.999, 1e-8);
    let fresh_critic = || {
        Critic::new(MlpSpec::new(vec![2, 4, 1], Head::Linear, 7).unwrap(), 1e-3, 0.05, "c")
    };

    // Inner PPO gradients as a function of realized incentive shifts.
    let inner_grads = |shift: &[f64]| -> Vec<Vec<f64>> {
        let mut traj = base.clone();
        for (v, s) in traj.incentives.iter_mut().zip(shift) {
            *v += s;
        }
        let tape = Tape::new();
        let theta = nets::register(&tape, &params);
        let ctx = UpdateCtx {
            tape: &tape,
            spec: &spec,
            theta: &theta,
            traj: &traj,
            incentives: None,
            gamma: 0.9,
            entropy_coef: 0.01,
            explore_eps: 0.1,
        };
        let updated =
            ppo_update(&ctx, &mut fresh_critic(), 0.2, 0.95, StepRule::Sgd { lr: 1.0 }).unwrap();
        updated
            .iter()
            .zip(&params)
            .map(|(v, p)| {
                v.value().data.iter().zip(&p.value.data).map(|(u, t)| u - t).collect()
            })
            .collect()
    };

    let g0 = inner_grads(&vec![0.0; base.len()]);
    // First-step Adam with frozen denominator: theta + lr * g / denom0
    // (the bias corrections cancel at t = 1 for the first moment).
    let bc2 = 1.0 - beta2;
    let _ = beta1;
    let denom0: Vec<Vec<f64>> = g0
        .iter()
        .map(|g| g.iter().map(|x| ((1.0 - beta2) * x * x / bc2).sqrt() + eps_adam).collect())
        .collect();
    let outer_of = |shift: &[f64]| -> f64 {
        let g = inner_grads(shift);
        let mut loss = 0.0;
        for ((gv, dv), p) in g.iter().zip(&denom0).zip(&params) {
            for ((x, d), t) in gv.iter().zip(dv).zip(&p.value.data) {
                let upd = t + lr * x / d;
                loss += upd * upd;
            }
        }
        loss
    };

    // Graph path.
    let tape = Tape::new();
    let inc_leaves: Vec<Var> = base.incentives.iter().map(|&v| tape.leaf(Tensor::scalar(v))).collect();
    let theta = nets::register(&tape, &params);
    let ctx = UpdateCtx {
        tape: &tape,
        spec: &spec,
        theta: &theta,
        traj: &base,
        incentives: Some(&inc_leaves),
        gamma: 0.9,
        entropy_coef: 0.01,
        explore_eps: 0.1,
    };
    let mut adam = Adam::new(lr, &params);
    let updated = ppo_update(
        &ctx,
        &mut fresh_critic(),
        0.2,
        0.95,
        StepRule::FrozenAdam { adam: &mut adam },
    )
    .unwrap();
    let mut loss = tape.scalar(0.0);
    for v in &updated {
        loss = loss + (*v * *v).sum();
    }
    let grads = tape.grad(loss, &inc_leaves, false).unwrap();
    for k in 0..base.len() {
        let mut hi = vec![0.0; base.len()];
        let mut lo = vec![0.0; base.len()];
        hi[k] = FD_EPS;
        lo[k] = -FD_EPS;
        let fd = (outer_of(&hi) - outer_of(&lo)) / (2.0 * FD_EPS);
        let an = grads[k].item();
        assert!(
            rel_err(an, fd) <= 1e-4,
            "ppo_adam: step {k}: graph {an} vs frozen-denominator fd {fd}"
        );
    }
    // The realized updated values equal a numeric first Adam step exactly.
    let mut check = params.clone();
    let mut plain = Adam::new(lr, &check);
    let g0_tensors: Vec<Tensor> = g0
        .iter()
        .zip(&params)
        .map(|(g, p)| Tensor { data: g.clone(), shape: p.value.shape })
        .collect();
    plain.step_ascent(&mut check, &g0_tensors);
    for (v, p) in updated.iter().zip(&check) {
        for (a, b) in v.value().data.iter().zip(&p.value.data) {
            assert!((a - b).abs() < 1e-12, "frozen step diverged from numeric Adam: {a} vs {b}");
        }
    }
}

#[test]
fn actor_critic_update_carries_incentive_linkage() {
    check_incentive_linkage("actor_critic", |ctx| {
        let mut critic = Critic::new(
            MlpSpec::new(vec![2, 4, 1], Head::Linear, 7).unwrap(),
            1e-3,
            0.05,
            "c",
        );
        agents::actor_critic_update(ctx, &mut critic, 0.05).unwrap()
    });
}

#[test]
fn q_softmax_update_carries_incentive_linkage() {
    let q_spec = MlpSpec::new(vec![2, 5, 3], Head::Linear, 5).unwrap();
    let target_params = q_spec.init("qt", ParamRole::AgentPolicy);
    let spec2 = q_spec.clone();
    check_incentive_linkage("q_softmax", move |ctx| {
        let tp = target_params.clone();
        let spec = spec2.clone();
        q_softmax_update(
            ctx,
            move |obs| Tensor::vector(incentive_lab::nets::eval_mlp(&spec, &tp, obs)),
            0.05,
        )
        .unwrap()
    });
}

/// Zero incentives must reproduce the plain update bit for bit: the reward
/// node is env + 0.0, identical arithmetic to env + realized-zero constant.
#[test]
fn zero_incentives_are_bit_neutral() {
    let spec = toy_spec(3);
    let params = spec.init("agent", ParamRole::AgentPolicy);
    let traj = toy_slice();

    let run = |with_leaves: bool| -> Vec<Vec<f64>> {
        let tape = Tape::new();
        let inc: Vec<Var> = traj.incentives.iter().map(|_| tape.scalar(0.0)).collect();
        let theta = nets::register(&tape, &params);
        let ctx = UpdateCtx {
            tape: &tape,
            spec: &spec,
            theta: &theta,
            traj: &traj,
            incentives: if with_leaves { Some(&inc) } else { None },
            gamma: 0.9,
            entropy_coef: 0.01,
            explore_eps: 0.1,
        };
        pg_update(&ctx, 0.05)
            .unwrap()
            .iter()
            .map(|v| v.value().data)
            .collect()
    };
    let with = run(true);
    let without = run(false);
    for (a, b) in with.iter().zip(&without) {
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.to_bits(), y.to_bits(), "zero incentive changed the update");
        }
    }
}

#[test]
fn ppo_first_ratio_is_exactly_one() {
    // exp(logp - detach(logp)) is exp(0) at evaluation time.
    let tape = Tape::new();
    let spec = toy_spec(9);
    let params = spec.init("a", ParamRole::AgentPolicy);
    let theta = nets::register(&tape, &params);
    let obs = tape.constant(Tensor::vector(vec![1.0, 0.5]));
    let probs = nets::mlp_forward(&spec, &theta, obs).unwrap();
    let logp = probs.index(1).log();
    let ratio = (logp - logp.detach()).exp();
    assert_eq!(ratio.item(), 1.0);
}

#[test]
fn mismatched_slice_is_rejected() {
    let mut traj = toy_slice();
    traj.actions.pop();
    let tape = Tape::new();
    let spec = toy_spec(3);
    let params = spec.init("agent", ParamRole::AgentPolicy);
    let theta = nets::register(&tape, &params);
    let ctx = UpdateCtx {
        tape: &tape,
        spec: &spec,
        theta: &theta,
        traj: &traj,
        incentives: None,
        gamma: 0.9,
        entropy_coef: 0.0,
        explore_eps: 0.0,
    };
    assert!(pg_update(&ctx, 0.05).is_err());
}

#[test]
fn critic_regression_reduces_value_error() {
    let mut critic = Critic::new(
        MlpSpec::new(vec![2, 8, 1], Head::Linear, 13).unwrap(),
        0.05,
        1.0,
        "c",
    );
    let obs = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
    let targets = vec![2.0, -1.0, 0.5];
    let err = |c: &Critic| -> f64 {
        obs.iter()
            .zip(&targets)
            .map(|(o, &y)| (c.value(o) - y).powi(2))
            .sum()
    };
    let before = err(&critic);
    for _ in 0..200 {
        critic.regress(&obs, &targets);
    }
    let after = err(&critic);
    assert!(after < before * 0.1, "critic did not fit: {before} -> {after}");
    // c_v = 1 keeps the target network equal to the main one.
    for (o, _) in obs.iter().zip(&targets) {
        assert_eq!(critic.value(o), critic.target_value(o));
    }
}
