use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::ParamId;
use crate::tensor::Tensor;

/// Adjoint of one recorded op: given the output gradient and which parents need
/// a gradient, returns one optional gradient per parent.
pub(crate) type Backward = Box<dyn Fn(&Tensor, &[bool]) -> Result<Vec<Option<Tensor>>>>;

struct Node {
    op: &'static str,
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<Backward>,
    requires_grad: bool,
}

/// Single-writer record of executed ops. Nodes are appended in execution
/// order, so node order is always a valid topological order.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<(ParamId, usize)>>,
    buffer_updates: RefCell<Vec<(ParamId, Tensor)>>,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
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

    fn push_node(&self, op: &'static str, value: Rc<Tensor>, parents: Vec<usize>, backward: Option<Backward>, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value, parents, backward, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push_node("constant", Rc::new(t), Vec::new(), None, false)
    }

    /// A differentiable input (gradient available through [`Gradients::of`]).
    pub fn leaf(&self, t: Tensor) -> Var<'_> {
        self.push_node("leaf", Rc::new(t), Vec::new(), None, true)
    }

    /// A trainable parameter. Its gradient is collected by [`Gradients::param`].
    pub fn param(&self, id: ParamId, value: Rc<Tensor>) -> Var<'_> {
        let v = self.push_node("param", value, Vec::new(), None, true);
        self.params.borrow_mut().push((id, v.id));
        v
    }

    pub(crate) fn push<F>(&self, op: &'static str, value: Tensor, parents: &[Var<'_>], backward: F) -> Var<'_>
    where
        F: Fn(&Tensor, &[bool]) -> Result<Vec<Option<Tensor>>> + 'static,
    {
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].requires_grad)
        };
        let bw: Option<Backward> = if requires { Some(Box::new(backward)) } else { None };
        self.push_node(op, Rc::new(value), ids, bw, requires)
    }

    pub fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Op names in recording order.
    pub fn ops(&self) -> Vec<&'static str> {
        self.nodes.borrow().iter().map(|n| n.op).collect()
    }

    /// Parent ids of node `id`.
    pub fn parents(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].parents.clone()
    }

    /// Running-statistics updates produced by batch norm in training mode.
    pub(crate) fn record_buffer(&self, id: ParamId, value: Tensor) {
        self.buffer_updates.borrow_mut().push((id, value));
    }

    pub fn take_buffer_updates(&self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut *self.buffer_updates.borrow_mut())
    }

    /// Reverse-topological accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if !nodes[loss.id].value.is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::ones(nodes[loss.id].value.shape()));
        for i in (0..=loss.id).rev() {
            let node = &nodes[i];
            let Some(bw) = node.backward.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = bw(&g, &needs)?;
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "op {}", node.op);
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "grad shape from op {}", node.op);
                match grads[p].as_mut() {
                    Some(acc) => acc.axpy(1.0, &pg),
                    None => grads[p] = Some(pg),
                }
            }
        }
        Ok(Gradients { grads, params: self.params.borrow().clone() })
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of a leaf or parameter node; `None` when the loss does not depend on it.
    pub fn of(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a parameter summed over every use on the tape.
    pub fn param(&self, id: ParamId) -> Option<Tensor> {
        let mut acc: Option<Tensor> = None;
        for &(pid, node) in &self.params {
            if pid != id {
                continue;
            }
            if let Some(g) = &self.grads[node] {
                match acc.as_mut() {
                    Some(a) => a.axpy(1.0, g),
                    None => acc = Some(g.clone()),
                }
            }
        }
        acc
    }

    /// All parameter gradients keyed by id.
    pub fn params(&self) -> HashMap<ParamId, Tensor> {
        let mut out: HashMap<ParamId, Tensor> = HashMap::new();
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                match out.get_mut(&pid) {
                    Some(a) => a.axpy(1.0, g),
                    None => {
                        out.insert(pid, g.clone());
                    }
                }
            }
        }
        out
    }
}
