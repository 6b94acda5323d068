//! Reverse-mode differentiation over a dynamic computation graph.
//!
//! Nodes are evaluated eagerly as they are recorded, so a [`Var`] always
//! carries a value. `grad` walks the tape backwards and *records the adjoint
//! computation as new nodes*: with `create_graph` the returned gradients are
//! ordinary graph nodes and can be differentiated again, which is what allows
//! an outer objective to be differentiated through an inner gradient step.

use std::cell::{Cell, RefCell};

use super::tensor::{Shape, Tensor};

/// Floor applied to `log` inputs; clamp events are counted in diagnostics.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("leaf node {0:?} has no bound value")]
    UnboundLeaf(NodeId),
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("gradient requires a scalar output, got shape {0}")]
    NonScalarOutput(Shape),
    #[error("parameter {0:?} is not reachable from the output (was the update built with create_graph?)")]
    NotReachable(NodeId),
    #[error("gradient target {0:?} is not a leaf with requires_grad")]
    NotALeaf(NodeId),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, DiffError>;

/// Operation kind with parent links inline.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf(Shape),
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId, f64),
    MatVec(NodeId, NodeId),
    MatVecT(NodeId, NodeId),
    Outer(NodeId, NodeId),
    Exp(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    PowConst(NodeId, f64),
    Clip(NodeId, f64, f64),
    /// 1 where parent lies in [lo, hi], 0 outside. Not differentiable.
    ClipMask(NodeId, f64, f64),
    /// 1 where a <= b elementwise, 0 otherwise. Not differentiable.
    LeMask(NodeId, NodeId),
    /// 1 where a > b elementwise, 0 otherwise. Not differentiable.
    GtMask(NodeId, NodeId),
    Sum(NodeId),
    /// Max over all elements; subgradient routes to the lowest argmax index.
    Max(NodeId),
    /// One-hot of the argmax (lowest index on ties). Not differentiable.
    MaxMask(NodeId),
    /// Fill `shape` with the scalar parent.
    Broadcast(NodeId, Shape),
    Index(NodeId, usize),
    /// Scalar parent scattered into position `i` of a zero tensor of `shape`.
    Scatter(NodeId, usize, Shape),
    /// Elementwise minimum; ties route the subgradient to the first operand.
    Min2(NodeId, NodeId),
}

struct Node {
    op: Op,
    value: Option<Tensor>,
    requires_grad: bool,
}

/// A node in the computation graph, tied to its tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub tape: &'t Tape,
    pub id: NodeId,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    log_clamps: Cell<u64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of times a `log` input was clamped to [`LOG_FLOOR`].
    pub fn log_clamp_count(&self) -> u64 {
        self.log_clamps.get()
    }

    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        let shape = value.shape;
        self.insert(Node { op: Op::Leaf(shape), value: Some(value), requires_grad: true })
    }

    /// A leaf with a declared shape but no value yet; `bind` it before `forward`.
    pub fn leaf_unbound(&self, shape: Shape) -> Var<'_> {
        self.insert(Node { op: Op::Leaf(shape), value: None, requires_grad: true })
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.insert(Node { op: Op::Const, value: Some(value), requires_grad: false })
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    /// Bind (or re-bind) a leaf value. Downstream values are stale until `forward`.
    pub fn bind(&self, id: NodeId, value: Tensor) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let node = &mut nodes[id.0];
        match node.op {
            Op::Leaf(shape) => {
                if value.shape != shape {
                    return Err(DiffError::ShapeMismatch {
                        op: "bind",
                        detail: format!("expected {shape}, got {}", value.shape),
                    });
                }
                node.value = Some(value);
                Ok(())
            }
            _ => Err(DiffError::NotALeaf(id)),
        }
    }

    /// Re-evaluate every node in topological (insertion) order.
    ///
    /// Identical bindings give bit-identical values: evaluation is
    /// sequential double-precision arithmetic with no reordering.
    pub fn forward(&self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            let op = self.nodes.borrow()[i].op.clone();
            match op {
                Op::Leaf(_) => {
                    if self.nodes.borrow()[i].value.is_none() {
                        return Err(DiffError::UnboundLeaf(NodeId(i)));
                    }
                }
                Op::Const => {}
                _ => {
                    let v = self.eval(&op)?;
                    self.nodes.borrow_mut()[i].value = Some(v);
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, id: NodeId) -> Tensor {
        self.nodes.borrow()[id.0].value.clone().expect("node has no value; call forward()")
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id.0].requires_grad
    }

    fn insert(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var { tape: self, id: NodeId(nodes.len() - 1) }
    }

    fn parent_value(&self, id: NodeId) -> Result<Tensor> {
        self.nodes.borrow()[id.0].value.clone().ok_or(DiffError::UnboundLeaf(id))
    }

    /// Record an operation, evaluating it eagerly. Shape mismatches are
    /// construction errors.
    pub fn push(&self, op: Op) -> Result<Var<'_>> {
        let value = self.eval(&op)?;
        let requires_grad = self.op_requires_grad(&op);
        Ok(self.insert(Node { op, value: Some(value), requires_grad }))
    }

    fn op_requires_grad(&self, op: &Op) -> bool {
        use Op::*;
        let rg = |id: &NodeId| self.nodes.borrow()[id.0].requires_grad;
        match op {
            Leaf(_) => true,
            Const | ClipMask(..) | LeMask(..) | GtMask(..) | MaxMask(..) => false,
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatVec(a, b) | MatVecT(a, b)
            | Outer(a, b) | Min2(a, b) => rg(a) || rg(b),
            Neg(a) | Scale(a, _) | AddConst(a, _) | Exp(a) | Log(a) | Tanh(a) | Sigmoid(a)
            | PowConst(a, _) | Clip(a, _, _) | Sum(a) | Max(a) | Broadcast(a, _)
            | Index(a, _) | Scatter(a, _, _) => rg(a),
        }
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        use Op::*;
        let mismatch = |opname: &'static str, detail: String| DiffError::ShapeMismatch {
            op: opname,
            detail,
        };
        Ok(match op {
            Leaf(_) | Const => unreachable!("leaves and constants are inserted with values"),
            Add(a, b) => broadcast_zip("add", &self.parent_value(*a)?, &self.parent_value(*b)?, |x, y| x + y)?,
            Sub(a, b) => broadcast_zip("sub", &self.parent_value(*a)?, &self.parent_value(*b)?, |x, y| x - y)?,
            Mul(a, b) => broadcast_zip("mul", &self.parent_value(*a)?, &self.parent_value(*b)?, |x, y| x * y)?,
            Div(a, b) => broadcast_zip("div", &self.parent_value(*a)?, &self.parent_value(*b)?, |x, y| x / y)?,
            Neg(a) => self.parent_value(*a)?.map(|x| -x),
            Scale(a, k) => self.parent_value(*a)?.map(|x| k * x),
            AddConst(a, k) => self.parent_value(*a)?.map(|x| x + k),
            MatVec(w, x) => {
                let (w, x) = (self.parent_value(*w)?, self.parent_value(*x)?);
                match (w.shape, x.shape) {
                    (Shape::Matrix(_, c), Shape::Vector(n)) if c == n => w.matvec(&x),
                    _ => return Err(mismatch("matvec", format!("{} x {}", w.shape, x.shape))),
                }
            }
            MatVecT(w, g) => {
                let (w, g) = (self.parent_value(*w)?, self.parent_value(*g)?);
                match (w.shape, g.shape) {
                    (Shape::Matrix(r, _), Shape::Vector(n)) if r == n => w.matvec_t(&g),
                    _ => return Err(mismatch("matvec_t", format!("{} x {}", w.shape, g.shape))),
                }
            }
            Outer(u, v) => {
                let (u, v) = (self.parent_value(*u)?, self.parent_value(*v)?);
                match (u.shape, v.shape) {
                    (Shape::Vector(_), Shape::Vector(_)) => Tensor::outer(&u, &v),
                    _ => return Err(mismatch("outer", format!("{} x {}", u.shape, v.shape))),
                }
            }
            Exp(a) => self.parent_value(*a)?.map(f64::exp),
            Log(a) => {
                let x = self.parent_value(*a)?;
                let clamps = x.data.iter().filter(|&&v| v < LOG_FLOOR).count() as u64;
                if clamps > 0 {
                    self.log_clamps.set(self.log_clamps.get() + clamps);
                }
                x.map(|v| v.max(LOG_FLOOR).ln())
            }
            Tanh(a) => self.parent_value(*a)?.map(f64::tanh),
            Sigmoid(a) => self.parent_value(*a)?.map(|x| 1.0 / (1.0 + (-x).exp())),
            PowConst(a, p) => self.parent_value(*a)?.map(|x| x.powf(*p)),
            Clip(a, lo, hi) => self.parent_value(*a)?.map(|x| x.clamp(*lo, *hi)),
            ClipMask(a, lo, hi) => {
                self.parent_value(*a)?.map(|x| if x >= *lo && x <= *hi { 1.0 } else { 0.0 })
            }
            LeMask(a, b) => broadcast_zip(
                "le_mask",
                &self.parent_value(*a)?,
                &self.parent_value(*b)?,
                |x, y| if x <= y { 1.0 } else { 0.0 },
            )?,
            GtMask(a, b) => broadcast_zip(
                "gt_mask",
                &self.parent_value(*a)?,
                &self.parent_value(*b)?,
                |x, y| if x > y { 1.0 } else { 0.0 },
            )?,
            Sum(a) => Tensor::scalar(self.parent_value(*a)?.sum()),
            Max(a) => {
                let v = self.parent_value(*a)?;
                Tensor::scalar(v.data[v.argmax()])
            }
            MaxMask(a) => {
                let v = self.parent_value(*a)?;
                let mut out = Tensor::zeros(v.shape);
                out.data[v.argmax()] = 1.0;
                out
            }
            Broadcast(a, shape) => {
                let v = self.parent_value(*a)?;
                if v.shape != Shape::Scalar {
                    return Err(mismatch("broadcast", format!("source {}", v.shape)));
                }
                Tensor::full(*shape, v.item())
            }
            Index(a, i) => {
                let v = self.parent_value(*a)?;
                if *i >= v.numel() {
                    return Err(mismatch("index", format!("{} out of {}", i, v.numel())));
                }
                Tensor::scalar(v.data[*i])
            }
            Scatter(a, i, shape) => {
                let v = self.parent_value(*a)?;
                if v.shape != Shape::Scalar || *i >= shape.numel() {
                    return Err(mismatch("scatter", format!("{} into {shape} at {i}", v.shape)));
                }
                let mut out = Tensor::zeros(*shape);
                out.data[*i] = v.item();
                out
            }
            Min2(a, b) => {
                let (a, b) = (self.parent_value(*a)?, self.parent_value(*b)?);
                if a.shape != b.shape {
                    return Err(mismatch("min", format!("{} vs {}", a.shape, b.shape)));
                }
                a.zip(&b, f64::min)
            }
        })
    }

    /// Reverse-mode gradient of a scalar `output` with respect to leaf `wrt`.
    ///
    /// With `create_graph`, the returned vars are live graph nodes and can be
    /// differentiated again; without it they are detached constants.
    pub fn grad<'t>(
        &'t self,
        output: Var<'t>,
        wrt: &[Var<'t>],
        create_graph: bool,
    ) -> Result<Vec<Var<'t>>> {
        let out_value = self.parent_value(output.id)?;
        if out_value.shape != Shape::Scalar {
            return Err(DiffError::NonScalarOutput(out_value.shape));
        }
        for w in wrt {
            let nodes = self.nodes.borrow();
            let node = &nodes[w.id.0];
            if !matches!(node.op, Op::Leaf(_)) || !node.requires_grad {
                return Err(DiffError::NotALeaf(w.id));
            }
        }

        let mut adjoint: Vec<Option<NodeId>> = vec![None; output.id.0 + 1];
        adjoint[output.id.0] = Some(self.scalar(1.0).id);

        for idx in (0..=output.id.0).rev() {
            let Some(g_id) = adjoint[idx] else { continue };
            if !self.nodes.borrow()[idx].requires_grad {
                continue;
            }
            let op = self.nodes.borrow()[idx].op.clone();
            let g = Var { tape: self, id: g_id };
            self.backprop_one(NodeId(idx), &op, g, &mut adjoint)?;
        }

        let mut out = Vec::with_capacity(wrt.len());
        for w in wrt {
            let g = adjoint
                .get(w.id.0)
                .copied()
                .flatten()
                .ok_or(DiffError::NotReachable(w.id))?;
            let var = Var { tape: self, id: g };
            out.push(if create_graph { var } else { self.constant(self.value(g)) });
        }
        Ok(out)
    }

    /// Accumulate VJP contributions from one node into its parents' adjoints.
    fn backprop_one<'t>(
        &'t self,
        node: NodeId,
        op: &Op,
        g: Var<'t>,
        adjoint: &mut Vec<Option<NodeId>>,
    ) -> Result<()> {
        use Op::*;
        let out = Var { tape: self, id: node };
        let mut acc = |tape: &Self, p: NodeId, contrib: Var<'t>| {
            if !tape.nodes.borrow()[p.0].requires_grad {
                return;
            }
            adjoint[p.0] = Some(match adjoint[p.0] {
                None => contrib.id,
                Some(existing) => {
                    let e = Var { tape: self, id: existing };
                    (e + contrib).id
                }
            });
        };
        // `reduce` collapses a broadcasted contribution back to a scalar parent.
        let reduce = |p: NodeId, contrib: Var<'t>| -> Var<'t> {
            let p_scalar = matches!(self.value(p).shape, Shape::Scalar);
            let c_scalar = matches!(self.value(contrib.id).shape, Shape::Scalar);
            if p_scalar && !c_scalar {
                contrib.sum()
            } else {
                contrib
            }
        };
        match op.clone() {
            Leaf(_) | Const | ClipMask(..) | LeMask(..) | GtMask(..) | MaxMask(..) => {}
            Add(a, b) => {
                acc(self, a, reduce(a, g));
                acc(self, b, reduce(b, g));
            }
            Sub(a, b) => {
                acc(self, a, reduce(a, g));
                acc(self, b, reduce(b, -g));
            }
            Mul(a, b) => {
                let bv = Var { tape: self, id: b };
                let av = Var { tape: self, id: a };
                acc(self, a, reduce(a, g * bv));
                acc(self, b, reduce(b, g * av));
            }
            Div(a, b) => {
                let bv = Var { tape: self, id: b };
                let av = Var { tape: self, id: a };
                acc(self, a, reduce(a, g / bv));
                acc(self, b, reduce(b, -((g * av) / (bv * bv))));
            }
            Neg(a) => acc(self, a, -g),
            Scale(a, k) => acc(self, a, g.scale(k)),
            AddConst(a, _) => acc(self, a, g),
            MatVec(w, x) => {
                let xv = Var { tape: self, id: x };
                let wv = Var { tape: self, id: w };
                acc(self, w, g.outer(xv));
                acc(self, x, wv.matvec_t(g));
            }
            MatVecT(w, u) => {
                let uv = Var { tape: self, id: u };
                let wv = Var { tape: self, id: w };
                acc(self, w, uv.outer(g));
                acc(self, u, wv.matvec(g));
            }
            Outer(u, v) => {
                let uv = Var { tape: self, id: u };
                let vv = Var { tape: self, id: v };
                acc(self, u, g.matvec(vv));
                acc(self, v, g.matvec_t(uv));
            }
            Exp(a) => acc(self, a, g * out),
            Log(a) => acc(self, a, g / Var { tape: self, id: a }),
            Tanh(a) => acc(self, a, g * (-(out * out)).add_const(1.0)),
            Sigmoid(a) => acc(self, a, g * out * (-out).add_const(1.0)),
            PowConst(a, p) => {
                let av = Var { tape: self, id: a };
                acc(self, a, g * av.pow_const(p - 1.0).scale(p));
            }
            Clip(a, lo, hi) => {
                let mask = self.push(Op::ClipMask(a, lo, hi))?;
                acc(self, a, g * mask);
            }
            Sum(a) => {
                let shape = self.value(a).shape;
                acc(self, a, g.broadcast(shape));
            }
            Max(a) => {
                let shape = self.value(a).shape;
                let mask = self.push(Op::MaxMask(a))?;
                acc(self, a, g.broadcast(shape) * mask);
            }
            Broadcast(a, _) => acc(self, a, g.sum()),
            Index(a, i) => {
                let shape = self.value(a).shape;
                acc(self, a, self.push(Op::Scatter(g.id, i, shape))?);
            }
            Scatter(a, i, _) => acc(self, a, g.index(i)),
            Min2(a, b) => {
                let mask = self.push(Op::LeMask(a, b))?;
                acc(self, a, g * mask);
                acc(self, b, g * (-mask).add_const(1.0));
            }
        }
        Ok(())
    }
}

fn broadcast_zip(
    opname: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape == b.shape {
        return Ok(a.zip(b, f));
    }
    // Scalar broadcasting only; anything richer is a non-goal.
    match (a.shape, b.shape) {
        (Shape::Scalar, _) => {
            let av = a.item();
            Ok(b.map(|x| f(av, x)))
        }
        (_, Shape::Scalar) => {
            let bv = b.item();
            Ok(a.map(|x| f(x, bv)))
        }
        _ => Err(DiffError::ShapeMismatch {
            op: opname,
            detail: format!("{} vs {}", a.shape, b.shape),
        }),
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.value(self.id)
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn shape(&self) -> Shape {
        self.value().shape
    }

    fn unary(&self, f: impl FnOnce(NodeId) -> Op) -> Var<'t> {
        self.tape.push(f(self.id)).expect("unary op")
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp)
    }

    /// Natural log with the input clamped to at least [`LOG_FLOOR`].
    /// The clamp is a real graph op, so the gradient is zero below the floor.
    pub fn log(self) -> Var<'t> {
        let guarded = self.unary(|a| Op::Clip(a, LOG_FLOOR, f64::INFINITY));
        guarded.unary(Op::Log)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid)
    }

    pub fn relu(self) -> Var<'t> {
        self.clip(0.0, f64::INFINITY)
    }

    /// Clamp values into [lo, hi]; gradient is exactly 1 inside, 0 strictly outside.
    pub fn clip(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(|a| Op::Clip(a, lo, hi))
    }

    pub fn pow_const(self, p: f64) -> Var<'t> {
        self.unary(|a| Op::PowConst(a, p))
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        self.unary(|a| Op::Scale(a, k))
    }

    pub fn add_const(self, k: f64) -> Var<'t> {
        self.unary(|a| Op::AddConst(a, k))
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum)
    }

    pub fn max(self) -> Var<'t> {
        self.unary(Op::Max)
    }

    pub fn index(self, i: usize) -> Var<'t> {
        self.unary(|a| Op::Index(a, i))
    }

    pub fn broadcast(self, shape: Shape) -> Var<'t> {
        self.unary(|a| Op::Broadcast(a, shape))
    }

    pub fn matvec(self, x: Var<'t>) -> Var<'t> {
        self.tape.push(Op::MatVec(self.id, x.id)).expect("matvec")
    }

    pub fn matvec_t(self, g: Var<'t>) -> Var<'t> {
        self.tape.push(Op::MatVecT(self.id, g.id)).expect("matvec_t")
    }

    pub fn outer(self, v: Var<'t>) -> Var<'t> {
        self.tape.push(Op::Outer(self.id, v.id)).expect("outer")
    }

    pub fn min(self, other: Var<'t>) -> Var<'t> {
        self.tape.push(Op::Min2(self.id, other.id)).expect("min")
    }

    /// Comparison mask (self > other), constant under differentiation.
    pub fn gt_mask(self, other: Var<'t>) -> Var<'t> {
        self.tape.push(Op::GtMask(self.id, other.id)).expect("gt_mask")
    }

    /// Detached copy: same value, no gradient connectivity.
    pub fn detach(self) -> Var<'t> {
        self.tape.constant(self.value())
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.push(Op::Add(self.id, rhs.id)).expect("add")
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.push(Op::Sub(self.id, rhs.id)).expect("sub")
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.push(Op::Mul(self.id, rhs.id)).expect("mul")
    }
}

impl<'t> std::ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.push(Op::Div(self.id, rhs.id)).expect("div")
    }
}

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.push(Op::Neg(self.id)).expect("neg")
    }
}
