//! Parameter storage and the basic trainable layers.

mod layers;
mod params;

pub use layers::{kaiming_uniform, BatchNorm2d, Conv2d, ConvBnRelu, Linear};
pub use params::{ParamId, ParamStore};

use std::cell::{RefCell, RefMut};

use crate::autograd::{Tape, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Everything a forward pass needs: the tape, read-only parameters, the mode
/// flag and the dropout generator.
pub struct Ctx<'t> {
    pub tape: &'t Tape,
    pub store: &'t ParamStore,
    pub training: bool,
    dropout_rng: RefCell<Rng>,
}

impl<'t> Ctx<'t> {
    pub fn new(tape: &'t Tape, store: &'t ParamStore, training: bool, dropout_rng: Rng) -> Self {
        Ctx { tape, store, training, dropout_rng: RefCell::new(dropout_rng) }
    }

    /// Evaluation-mode context; dropout is the identity so the generator is never drawn.
    pub fn eval(tape: &'t Tape, store: &'t ParamStore) -> Self {
        Self::new(tape, store, false, crate::rng::from_u64(0))
    }

    pub fn param(&self, id: ParamId) -> Var<'t> {
        self.tape.param(id, self.store.get_rc(id))
    }

    pub fn input(&self, t: Tensor) -> Var<'t> {
        self.tape.constant(t)
    }

    pub fn dropout_rng(&self) -> RefMut<'_, Rng> {
        self.dropout_rng.borrow_mut()
    }
}
