//! Small dense networks and output heads built on the diffgraph engine,
//! plus optimizers, checkpoints, and the exploration schedule.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffgraph::{ParamRole, Parameter, Shape, Tape, Tensor, Var};

#[derive(Debug, thiserror::Error)]
pub enum NetsError {
    #[error("input length {got} does not match spec input size {want}")]
    DimensionMismatch { want: usize, got: usize },
    #[error("invalid spec: {0}")]
    BadSpec(String),
    #[error("exploration epsilon {0} outside [0,1]")]
    BadEpsilon(f64),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(#[from] serde_json::Error),
}

/// Output head of an MLP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Head {
    Softmax,
    Linear,
    /// Sigmoid rescaled to lie strictly in (lo, hi).
    ScaledSigmoid { lo: f64, hi: f64 },
}

/// Architecture of a dense network: `layers` = [input, hidden..., output].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layers: Vec<usize>,
    pub head: Head,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layers: Vec<usize>, head: Head, seed: u64) -> Result<Self, NetsError> {
        if layers.len() < 3 {
            return Err(NetsError::BadSpec(format!(
                "need at least one hidden layer, got layer sizes {layers:?}"
            )));
        }
        if layers.iter().any(|&n| n == 0) {
            return Err(NetsError::BadSpec("zero-width layer".into()));
        }
        if let Head::ScaledSigmoid { lo, hi } = head {
            if lo >= hi {
                return Err(NetsError::BadSpec(format!("scaled sigmoid needs lo < hi, got ({lo},{hi})")));
            }
        }
        Ok(MlpSpec { layers, head, seed })
    }

    pub fn input_size(&self) -> usize {
        self.layers[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layers.last().unwrap()
    }

    /// Seed-deterministic initialization: weights uniform in
    /// [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
    pub fn init(&self, prefix: &str, role: ParamRole) -> Vec<Parameter> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut params = Vec::new();
        for (l, pair) in self.layers.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let w: Vec<f64> = (0..fan_out * fan_in).map(|_| dist.sample(&mut rng)).collect();
            params.push(Parameter::new(
                format!("{prefix}.w{l}"),
                role,
                Tensor::matrix(fan_out, fan_in, w),
            ));
            params.push(Parameter::new(
                format!("{prefix}.b{l}"),
                role,
                Tensor::zeros(Shape::Vector(fan_out)),
            ));
        }
        params
    }
}

/// Register parameter values as leaves on a tape, in declaration order.
pub fn register<'t>(tape: &'t Tape, params: &[Parameter]) -> Vec<Var<'t>> {
    params.iter().map(|p| tape.leaf(p.value.clone())).collect()
}

/// Forward pass through the MLP: ReLU hidden layers, then the head.
///
/// `params` must be the `init` layout: alternating weight and bias vars.
pub fn mlp_forward<'t>(
    spec: &MlpSpec,
    params: &[Var<'t>],
    input: Var<'t>,
) -> Result<Var<'t>, NetsError> {
    let got = input.value().numel();
    if got != spec.input_size() {
        return Err(NetsError::DimensionMismatch { want: spec.input_size(), got });
    }
    let n_layers = spec.layers.len() - 1;
    debug_assert_eq!(params.len(), 2 * n_layers);
    let mut x = input;
    for l in 0..n_layers {
        let (w, b) = (params[2 * l], params[2 * l + 1]);
        x = w.matvec(x) + b;
        if l + 1 < n_layers {
            x = x.relu();
        }
    }
    Ok(apply_head(spec.head, x))
}

fn apply_head(head: Head, logits: Var<'_>) -> Var<'_> {
    match head {
        Head::Linear => logits,
        Head::Softmax => softmax(logits),
        Head::ScaledSigmoid { lo, hi } => logits.sigmoid().scale(hi - lo).add_const(lo),
    }
}

/// Numerically stable softmax over a vector.
/// Plain numeric forward pass over parameter values, for rollouts where no
/// gradient is needed. Matches `mlp_forward` exactly on the same inputs.
pub fn eval_mlp(spec: &MlpSpec, params: &[Parameter], input: &[f64]) -> Vec<f64> {
    assert_eq!(input.len(), spec.input_size(), "input size mismatch");
    let n_layers = spec.layers.len() - 1;
    let mut x = input.to_vec();
    for l in 0..n_layers {
        let w = &params[2 * l].value;
        let b = &params[2 * l + 1].value;
        let x_t = crate::diffgraph::Tensor::vector(x);
        let mut y = w.matvec(&x_t).data;
        for (yi, bi) in y.iter_mut().zip(&b.data) {
            *yi += bi;
        }
        if l + 1 < n_layers {
            for yi in y.iter_mut() {
                if *yi < 0.0 {
                    *yi = 0.0;
                }
            }
        }
        x = y;
    }
    match spec.head {
        Head::Linear => x,
        Head::ScaledSigmoid { lo, hi } => x
            .iter()
            .map(|z| (1.0 / (1.0 + (-z).exp())) * (hi - lo) + lo)
            .collect(),
        Head::Softmax => {
            let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = x.iter().map(|z| (z - m).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.iter().map(|e| e / total).collect()
        }
    }
}

pub fn softmax(z: Var<'_>) -> Var<'_> {
    let shape = z.shape();
    let m = z.max();
    let e = (z - m.broadcast(shape)).exp();
    let total = e.sum();
    e / total
}

/// Exploration-mixed policy: (1-eps) * probs + eps/|A|, as a graph node.
pub fn mixed_policy(probs: Var<'_>, eps: f64) -> Result<Var<'_>, NetsError> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(NetsError::BadEpsilon(eps));
    }
    let n = probs.value().numel() as f64;
    Ok(probs.scale(1.0 - eps).add_const(eps / n))
}

/// Draw an action index from the exploration-mixed policy.
pub fn sample_action(probs: &Tensor, eps: f64, rng: &mut impl Rng) -> Result<usize, NetsError> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(NetsError::BadEpsilon(eps));
    }
    let n = probs.numel();
    let uniform = eps / n as f64;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.data.iter().enumerate() {
        acc += (1.0 - eps) * p + uniform;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(n - 1)
}

/// Linear exploration decay from `start` to `end` over `div` episodes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub start: f64,
    pub end: f64,
    pub div: u64,
}

impl ExplorationSchedule {
    pub fn constant(eps: f64) -> Self {
        ExplorationSchedule { start: eps, end: eps, div: 1 }
    }

    pub fn at(&self, episode: u64) -> f64 {
        if self.div == 0 || episode >= self.div {
            return self.end;
        }
        let frac = episode as f64 / self.div as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Adam with bias correction. One instance per parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, params: &[Parameter]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| Tensor::zeros(p.value.shape)).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape)).collect(),
            t: 0,
        }
    }

    /// Ascend: params move in the direction of `grads`.
    pub fn step_ascent(&mut self, params: &mut [Parameter], grads: &[Tensor]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for j in 0..g.data.len() {
                let gj = g.data[j];
                self.m[i].data[j] = self.beta1 * self.m[i].data[j] + (1.0 - self.beta1) * gj;
                self.v[i].data[j] = self.beta2 * self.v[i].data[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = self.m[i].data[j] / bc1;
                let vhat = self.v[i].data[j] / bc2;
                p.value.data[j] += self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    pub fn step_descent(&mut self, params: &mut [Parameter], grads: &[Tensor]) {
        let neg: Vec<Tensor> = grads.iter().map(|g| g.map(|x| -x)).collect();
        self.step_ascent(params, &neg);
    }

    /// Moment state for the frozen-moment differentiable step (see agents).
    pub fn peek_next_denominator(&self, grads: &[Tensor]) -> (Vec<Tensor>, f64, f64) {
        let t = self.t + 1;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        let denom: Vec<Tensor> = self
            .v
            .iter()
            .zip(grads)
            .map(|(v, g)| {
                v.zip(g, |vj, gj| {
                    let vnext = self.beta2 * vj + (1.0 - self.beta2) * gj * gj;
                    (vnext / bc2).sqrt() + self.eps
                })
            })
            .collect();
        (denom, bc1, bc2)
    }

    pub fn prev_moment(&self, i: usize) -> &Tensor {
        &self.m[i]
    }
}

/// Plain gradient ascent on tensors.
pub fn sgd_ascent(params: &mut [Parameter], grads: &[Tensor], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        for j in 0..g.data.len() {
            p.value.data[j] += lr * g.data[j];
        }
    }
}

/// Clip gradients jointly by global L2 norm; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().map(|g| g.data.iter().map(|x| x * x).sum::<f64>()).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data.iter_mut() {
                *x *= k;
            }
        }
    }
    norm
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    role: ParamRole,
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Save parameters as a flat name -> array JSON map (human-diffable).
pub fn save_checkpoint(path: &Path, params: &[Parameter]) -> Result<(), NetsError> {
    let mut map = BTreeMap::new();
    for p in params {
        let shape = match p.value.shape {
            Shape::Scalar => vec![],
            Shape::Vector(n) => vec![n],
            Shape::Matrix(r, c) => vec![r, c],
        };
        map.insert(
            p.name.clone(),
            CheckpointEntry { role: p.role, shape, data: p.value.data.clone() },
        );
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(&map)?)?;
    Ok(())
}

/// Load a checkpoint back into an existing parameter layout (by name).
pub fn load_checkpoint(path: &Path, params: &mut [Parameter]) -> Result<(), NetsError> {
    let text = std::fs::read_to_string(path)?;
    let map: BTreeMap<String, CheckpointEntry> = serde_json::from_str(&text)?;
    for p in params.iter_mut() {
        let entry = map
            .get(&p.name)
            .ok_or_else(|| NetsError::BadSpec(format!("checkpoint missing parameter {}", p.name)))?;
        if entry.data.len() != p.value.numel() {
            return Err(NetsError::BadSpec(format!("checkpoint size mismatch for {}", p.name)));
        }
        p.value.data.clone_from(&entry.data);
    }
    Ok(())
}
