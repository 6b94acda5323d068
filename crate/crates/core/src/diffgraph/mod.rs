//! Differentiation engine: dynamic graph, first- and mixed second-order
//! gradients, and named parameters.

mod tape;
mod tensor;

pub use tape::{DiffError, NodeId, Op, Result, Tape, Var, LOG_FLOOR};
pub use tensor::{Shape, Tensor};

/// What a parameter belongs to; fixed for the lifetime of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ParamRole {
    AgentPolicy,
    AgentCritic,
    Designer,
    DesignerCritic,
}

/// A named value that lives across tapes; each iteration re-registers it
/// as a leaf on a fresh tape.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, role: ParamRole, value: Tensor) -> Self {
        Parameter { name: name.into(), role, value }
    }
}

/// Gradient of an outer scalar with respect to designer parameters, chained
/// through an inner parameter update that was built with `create_graph`.
///
/// Fails with [`DiffError::NotReachable`] when the update was detached and
/// the dependency on the designer parameters is severed.
pub fn grad_through_update<'t>(
    tape: &'t Tape,
    outer: Var<'t>,
    designer_params: &[Var<'t>],
) -> Result<Vec<Tensor>> {
    let grads = tape.grad(outer, designer_params, false)?;
    Ok(grads.iter().map(|g| g.value()).collect())
}
