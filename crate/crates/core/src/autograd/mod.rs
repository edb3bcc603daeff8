//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s in execution
//! order, so the recording is already topologically sorted; [`Tape::backward`]
//! walks it once in reverse. Vars are cheap `Copy` handles borrowing the tape.
//!
//! ```
//! use hcnn::autograd::Tape;
//! use hcnn::tensor::Tensor;
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_f64(&[2], &[2.0, 3.0]).unwrap());
//! let loss = x.mul(x).unwrap().sum_all();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 6.0]);
//! ```
//!
//! A tape is a single-threaded session. Separate tapes share nothing and can
//! run on separate threads.

mod gradcheck;
mod ops;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

pub use gradcheck::{gradcheck, gradcheck_many, GradcheckOptions, GradcheckReport, GradcheckStatus};
pub use ops::Unary;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Computes parent gradients from `(grad_out, parent values, output value)`.
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
    op: &'static str,
}

/// A non-finite value observed while the anomaly detector was on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anomaly {
    pub op: &'static str,
    pub node: usize,
    /// Set when the non-finite value was a gradient flowing out of `op`.
    pub backward: bool,
}

impl fmt::Display for Anomaly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = if self.backward { "gradient" } else { "output" };
        write!(f, "non-finite {what} of `{}` at node {}", self.op, self.node)
    }
}

pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Tensor<T>>>>,
    backward_done: Cell<bool>,
    record: bool,
    detect_anomaly: Cell<bool>,
    anomalies: RefCell<Vec<Anomaly>>,
    guard_eps: Cell<T>,
    kink_signature: Cell<Option<u64>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    /// A recording tape.
    pub fn new() -> Self {
        Self::with_recording(true)
    }

    /// A tape that stores values only; nothing requires grad and backward
    /// closures are never built.
    pub fn inference() -> Self {
        Self::with_recording(false)
    }

    fn with_recording(record: bool) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            backward_done: Cell::new(false),
            record,
            detect_anomaly: Cell::new(false),
            anomalies: RefCell::new(Vec::new()),
            guard_eps: Cell::new(T::lit(T::GUARD_EPS)),
            kink_signature: Cell::new(None),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    /// Checks every op output for NaN/Inf and records offenders.
    pub fn set_detect_anomaly(&self, on: bool) {
        self.detect_anomaly.set(on);
    }

    pub fn anomalies(&self) -> Vec<Anomaly> {
        self.anomalies.borrow().clone()
    }

    pub fn guard_eps(&self) -> T {
        self.guard_eps.get()
    }

    pub fn set_guard_eps(&self, eps: T) {
        self.guard_eps.set(eps);
    }

    /// Starts hashing which side of each clamp boundary every element falls
    /// on. Two evaluations with different signatures crossed a kink.
    pub fn track_kinks(&self) {
        self.kink_signature.set(Some(0xcbf2_9ce4_8422_2325));
    }

    pub fn kink_signature(&self) -> Option<u64> {
        self.kink_signature.get()
    }

    pub(crate) fn note_kinks(&self, sides: impl Iterator<Item = i8>) {
        if let Some(mut h) = self.kink_signature.get() {
            let node = self.nodes.borrow().len() as u64;
            for (i, side) in sides.enumerate() {
                if side != 0 {
                    h ^= (node << 40) ^ ((i as u64) << 2) ^ (side as u8 as u64);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
            self.kink_signature.set(Some(h));
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A trainable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(value, Vec::new(), None, self.record, "leaf")
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(value, Vec::new(), None, false, "constant")
    }

    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(v))
    }

    fn push_node(
        &self,
        value: Tensor<T>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        requires_grad: bool,
        op: &'static str,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if self.detect_anomaly.get() && !value.all_finite() {
            self.anomalies.borrow_mut().push(Anomaly {
                op,
                node: id,
                backward: false,
            });
        }
        nodes.push(Node {
            value: Rc::new(value),
            parents,
            backward,
            requires_grad,
            op,
        });
        Var { tape: self, id }
    }

    /// Records an op. `backward` is only boxed when some parent needs grad.
    pub(crate) fn push_op<F>(&self, op: &'static str, parents: &[Var<'_, T>], value: Tensor<T>, backward: F) -> Var<'_, T>
    where
        F: Fn(&Tensor<T>, &[&Tensor<T>], &Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let requires_grad = self.record && {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].requires_grad)
        };
        let ids = parents.iter().map(|p| p.id).collect();
        let bw: Option<BackwardFn<T>> = if requires_grad { Some(Box::new(backward)) } else { None };
        self.push_node(value, ids, bw, requires_grad, op)
    }

    pub fn value(&self, v: Var<'_, T>) -> Rc<Tensor<T>> {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn requires_grad(&self, v: Var<'_, T>) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    pub fn op_name(&self, v: Var<'_, T>) -> &'static str {
        self.nodes.borrow()[v.id].op
    }

    /// Propagates `d loss / d node` to every node that requires grad.
    ///
    /// Calling this twice without [`Tape::reset_grads`] is an error.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        if self.backward_done.get() {
            return Err(Error::Backward(
                "backward already ran on this tape; call reset_grads first".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::Backward(
                "loss is detached: no input on its path requires grad".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(bw) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let parent_vals: Vec<&Tensor<T>> =
                node.parents.iter().map(|&p| nodes[p].value.as_ref()).collect();
            let parent_grads = bw(&g, &parent_vals, &node.value);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "op `{}`", node.op);
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                if self.detect_anomaly.get() && !pg.all_finite() {
                    self.anomalies.borrow_mut().push(Anomaly {
                        op: node.op,
                        node: id,
                        backward: true,
                    });
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "grad shape from `{}`", node.op);
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        *self.grads.borrow_mut() = grads;
        self.backward_done.set(true);
        Ok(())
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.borrow().get(v.id).cloned().flatten()
    }

    pub fn reset_grads(&self) {
        self.grads.borrow_mut().clear();
        self.backward_done.set(false);
    }
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn rank(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.rank()
    }

    pub fn last_dim(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.last_dim()
    }

    pub fn item(&self) -> T {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(*self)
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.grad(*self)
    }
}
