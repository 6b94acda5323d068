//! Gradient checks for the differentiation engine: every operation against
//! central finite differences, mixed second-order partials, and a small
//! bilevel chain-rule check through an inner update.

use incentive_lab::diffgraph::{Shape, Tape, Tensor, Var};

const FD_EPS: f64 = 1e-5;
const REL_TOL: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Check d(output)/d(x) against central differences for a scalar-valued
/// function of one vector leaf.
fn gradcheck(name: &str, x0: &[f64], f: impl for<'a> Fn(&'a Tape, Var<'a>) -> Var<'a>) {
    let eval = |xs: &[f64]| -> f64 {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(xs.to_vec()));
        f(&tape, x).item()
    };
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(x0.to_vec()));
    let out = f(&tape, x);
    let grad = tape.grad(out, &[x], false).expect("grad").remove(0).value();
    for j in 0..x0.len() {
        let mut hi = x0.to_vec();
        let mut lo = x0.to_vec();
        hi[j] += FD_EPS;
        lo[j] -= FD_EPS;
        let fd = (eval(&hi) - eval(&lo)) / (2.0 * FD_EPS);
        assert!(
            rel_err(grad.data[j], fd) <= REL_TOL,
            "{name}: coordinate {j}: analytic {} vs fd {fd}",
            grad.data[j]
        );
    }
}

#[test]
fn gradcheck_arithmetic() {
    let x0 = [1.3, -0.7, 0.4];
    gradcheck("add", &x0, |t, x| (x + t.constant(Tensor::vector(vec![0.5, 1.0, -2.0]))).sum());
    gradcheck("sub", &x0, |t, x| (t.constant(Tensor::vector(vec![0.5, 1.0, -2.0])) - x).sum());
    gradcheck("mul", &x0, |t, x| (x * t.constant(Tensor::vector(vec![0.5, 1.5, -2.0]))).sum());
    gradcheck("div", &x0, |t, x| (x / t.constant(Tensor::vector(vec![0.5, 1.5, -2.0]))).sum());
    gradcheck("div_by_x", &x0, |t, x| (t.constant(Tensor::vector(vec![0.5, 1.5, -2.0])) / x).sum());
    gradcheck("neg", &x0, |_, x| (-x).sum());
    gradcheck("scale", &x0, |_, x| x.scale(-1.7).sum());
    gradcheck("add_const", &x0, |_, x| x.add_const(3.2).sum());
    gradcheck("self_mul", &x0, |_, x| (x * x).sum());
}

#[test]
fn gradcheck_nonlinear() {
    let x0 = [1.3, -0.7, 0.4];
    gradcheck("exp", &x0, |_, x| x.exp().sum());
    gradcheck("tanh", &x0, |_, x| x.tanh().sum());
    gradcheck("sigmoid", &x0, |_, x| x.sigmoid().sum());
    gradcheck("log", &[0.9, 1.7, 0.2], |_, x| x.log().sum());
    gradcheck("pow", &[0.9, 1.7, 0.2], |_, x| x.pow_const(1.77).sum());
    // Clip and relu checked strictly inside and outside the active range.
    gradcheck("clip", &[-1.5, 0.3, 1.9], |_, x| x.clip(-1.0, 1.0).sum());
    gradcheck("relu", &[-0.8, 0.6, 1.4], |_, x| x.relu().sum());
}

#[test]
fn gradcheck_reductions_and_indexing() {
    let x0 = [1.3, -0.7, 0.4, 2.1];
    gradcheck("sum", &x0, |_, x| x.sum());
    gradcheck("max", &x0, |_, x| x.max());
    gradcheck("index", &x0, |_, x| x.index(2));
    gradcheck("broadcast", &[0.37], |_, x| {
        (x.index(0).broadcast(Shape::Vector(4))
            * x.tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0])))
        .sum()
    });
    gradcheck("min", &x0, |t, x| {
        x.min(t.constant(Tensor::vector(vec![0.0, 0.0, 1.0, 1.0]))).sum()
    });
}

#[test]
fn gradcheck_linear_algebra() {
    // 2x3 matrix as the leaf, fixed vector operand.
    let w0 = [0.3, -0.2, 0.9, 1.1, 0.4, -0.6];
    let eval = |ws: &[f64]| -> f64 {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::matrix(2, 3, ws.to_vec()));
        let x = tape.constant(Tensor::vector(vec![0.5, -1.0, 2.0]));
        (w.matvec(x) * tape.constant(Tensor::vector(vec![1.0, -2.0]))).sum().item()
    };
    let tape = Tape::new();
    let w = tape.leaf(Tensor::matrix(2, 3, w0.to_vec()));
    let x = tape.constant(Tensor::vector(vec![0.5, -1.0, 2.0]));
    let out = (w.matvec(x) * tape.constant(Tensor::vector(vec![1.0, -2.0]))).sum();
    let grad = tape.grad(out, &[w], false).unwrap().remove(0).value();
    for j in 0..w0.len() {
        let mut hi = w0.to_vec();
        let mut lo = w0.to_vec();
        hi[j] += FD_EPS;
        lo[j] -= FD_EPS;
        let fd = (eval(&hi) - eval(&lo)) / (2.0 * FD_EPS);
        assert!(rel_err(grad.data[j], fd) <= REL_TOL, "matvec coord {j}");
    }

    gradcheck("matvec_x", &[0.5, -1.0, 2.0], |t, x| {
        let w = t.constant(Tensor::matrix(2, 3, w0.to_vec()));
        (w.matvec(x) * t.constant(Tensor::vector(vec![1.0, -2.0]))).sum()
    });
    gradcheck("matvec_t", &[0.5, -1.0], |t, g| {
        let w = t.constant(Tensor::matrix(2, 3, w0.to_vec()));
        (w.matvec_t(g) * t.constant(Tensor::vector(vec![1.0, -2.0, 0.5]))).sum()
    });
    gradcheck("outer", &[0.5, -1.0], |t, u| {
        let v = t.constant(Tensor::vector(vec![1.0, 2.0, -0.5]));
        (u.outer(v) * t.constant(Tensor::matrix(2, 3, w0.to_vec()))).sum()
    });
}

#[test]
fn mixed_partials_commute() {
    // f(x, y) = exp(x * y) + x^3 * sigmoid(y); d2f/dxdy must equal d2f/dydx.
    let check = |x0: f64, y0: f64| {
        let fxy = {
            let tape = Tape::new();
            let x = tape.leaf(Tensor::scalar(x0));
            let y = tape.leaf(Tensor::scalar(y0));
            let f = (x * y).exp() + x.pow_const(3.0) * y.sigmoid();
            let dx = tape.grad(f, &[x], true).unwrap()[0];
            tape.grad(dx, &[y], false).unwrap()[0].item()
        };
        let fyx = {
            let tape = Tape::new();
            let x = tape.leaf(Tensor::scalar(x0));
            let y = tape.leaf(Tensor::scalar(y0));
            let f = (x * y).exp() + x.pow_const(3.0) * y.sigmoid();
            let dy = tape.grad(f, &[y], true).unwrap()[0];
            tape.grad(dy, &[x], false).unwrap()[0].item()
        };
        assert!(
            (fxy - fyx).abs() <= 1e-8,
            "mixed partials differ at ({x0}, {y0}): {fxy} vs {fyx}"
        );
    };
    check(0.7, -0.3);
    check(-1.1, 0.9);
    check(0.2, 0.2);
}

#[test]
fn second_order_matches_finite_difference() {
    // d/dy [d/dx exp(xy)] = exp(xy) * (1 + xy), checked analytically.
    let (x0, y0) = (0.6, -0.4);
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(x0));
    let y = tape.leaf(Tensor::scalar(y0));
    let f = (x * y).exp();
    let dx = tape.grad(f, &[x], true).unwrap()[0];
    let dxdy = tape.grad(dx, &[y], false).unwrap()[0].item();
    let expected = (x0 * y0).exp() * (1.0 + x0 * y0);
    assert!((dxdy - expected).abs() <= 1e-10, "{dxdy} vs {expected}");
}

/// Bilevel check: theta' = theta + lr * dJ/dtheta with J(theta, eta), then
/// L(theta'); dL/deta through the update must match finite differences over
/// the whole two-stage pipeline.
#[test]
fn gradient_flows_through_inner_update() {
    let lr = 0.05;
    let theta0 = 0.3;
    let pipeline = |eta0: f64| -> f64 {
        let tape = Tape::new();
        let theta = tape.leaf(Tensor::scalar(theta0));
        let eta = tape.leaf(Tensor::scalar(eta0));
        // Inner objective couples eta and theta nonlinearly.
        let j = (theta * eta).sigmoid() + theta * theta * eta;
        let g = tape.grad(j, &[theta], true).unwrap()[0];
        let theta_new = theta + g.scale(lr);
        // Outer loss depends on eta only through theta_new.
        let loss = (theta_new - tape.scalar(1.0)) * (theta_new - tape.scalar(1.0));
        loss.item()
    };
    let eta0 = 0.8;
    let tape = Tape::new();
    let theta = tape.leaf(Tensor::scalar(theta0));
    let eta = tape.leaf(Tensor::scalar(eta0));
    let j = (theta * eta).sigmoid() + theta * theta * eta;
    let g = tape.grad(j, &[theta], true).unwrap()[0];
    let theta_new = theta + g.scale(lr);
    let loss = (theta_new - tape.scalar(1.0)) * (theta_new - tape.scalar(1.0));
    let dl_deta =
        incentive_lab::diffgraph::grad_through_update(&tape, loss, &[eta]).unwrap()[0].item();
    let fd = (pipeline(eta0 + FD_EPS) - pipeline(eta0 - FD_EPS)) / (2.0 * FD_EPS);
    assert!(rel_err(dl_deta, fd) <= 1e-6, "bilevel: {dl_deta} vs {fd}");
}

#[test]
fn detached_update_reports_unreachable() {
    let tape = Tape::new();
    let theta = tape.leaf(Tensor::scalar(0.3));
    let eta = tape.leaf(Tensor::scalar(0.8));
    let j = theta * eta;
    // Detached gradient severs the eta dependence.
    let g = tape.grad(j, &[theta], false).unwrap()[0];
    let theta_new = theta + g.scale(0.05);
    let loss = theta_new * theta_new;
    let err = incentive_lab::diffgraph::grad_through_update(&tape, loss, &[eta]);
    assert!(err.is_err(), "expected a not-reachable error after detaching");
}

#[test]
fn forward_reevaluation_is_bit_identical() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.3, -1.2, 0.9]));
    let out = (x.tanh().exp() * x.sigmoid()).sum();
    let first = out.item();
    tape.bind(x.id, Tensor::vector(vec![0.3, -1.2, 0.9])).unwrap();
    tape.forward().unwrap();
    assert_eq!(first.to_bits(), out.item().to_bits());
}

#[test]
fn log_is_floored_with_zero_gradient_below() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.5, 0.0, -1.0]));
    let out = x.log();
    let v = out.value();
    assert_eq!(v.data[0], 0.5f64.ln());
    assert_eq!(v.data[1], incentive_lab::diffgraph::LOG_FLOOR.ln());
    assert_eq!(v.data[2], incentive_lab::diffgraph::LOG_FLOOR.ln());
    let g = tape.grad(out.sum(), &[x], false).unwrap()[0].value();
    assert_eq!(g.data[0], 2.0);
    assert_eq!(g.data[1], 0.0, "gradient must vanish below the floor");
    assert_eq!(g.data[2], 0.0);
}
