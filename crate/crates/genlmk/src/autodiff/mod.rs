//! Minimal reverse-mode automatic differentiation over `ndarray`.
//!
//! A [`Tensor`] is a cheaply clonable handle to a node in a dynamically built
//! computation graph. Operations record a backward closure that scatters the
//! upstream gradient into the node's parents; [`Tensor::backward`] walks the
//! graph in reverse topological order. The engine is deliberately small:
//! exactly the operations the landmark pipeline needs, each with a
//! hand-derived, gradient-checked adjoint.

mod conv;
mod ops;

pub use conv::{col2im, conv2d, conv_out_dim, im2col, upsample_nearest2};

use crate::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};
use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

type BackwardFn<F> = Box<dyn Fn(&Node<F>)>;

pub(crate) struct Node<F: Scalar> {
    id: u64,
    data: RefCell<ArrayD<F>>,
    grad: RefCell<Option<ArrayD<F>>>,
    requires_grad: bool,
    parents: Vec<Tensor<F>>,
    backward: Option<BackwardFn<F>>,
}

/// Handle to a node of the computation graph.
pub struct Tensor<F: Scalar> {
    node: Rc<Node<F>>,
}

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor {
            node: Rc::clone(&self.node),
        }
    }
}

impl<F: Scalar> Tensor<F> {
    fn new(data: ArrayD<F>, requires_grad: bool) -> Self {
        Tensor {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    /// Leaf that participates in gradient computation (network weights).
    pub fn param(data: ArrayD<F>) -> Self {
        Tensor::new(data, true)
    }

    /// Leaf excluded from gradient computation (inputs, buffered fakes).
    pub fn constant(data: ArrayD<F>) -> Self {
        Tensor::new(data, false)
    }

    pub fn scalar(v: F) -> Self {
        Tensor::constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub(crate) fn from_op(
        data: ArrayD<F>,
        parents: Vec<Tensor<F>>,
        backward: BackwardFn<F>,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        Tensor {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents: if requires_grad { parents } else { Vec::new() },
                backward: if requires_grad { Some(backward) } else { None },
            }),
        }
    }

    pub fn data(&self) -> Ref<'_, ArrayD<F>> {
        self.node.data.borrow()
    }

    /// Mutable access to the raw buffer (optimizer updates). Only valid on
    /// leaves between training steps.
    pub fn data_mut(&self) -> RefMut<'_, ArrayD<F>> {
        self.node.data.borrow_mut()
    }

    pub fn grad(&self) -> Option<ArrayD<F>> {
        self.node.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn shape(&self) -> Vec<usize> {
        self.data().shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy of the value, severed from the graph.
    pub fn detach(&self) -> Tensor<F> {
        Tensor::constant(self.data().clone())
    }

    /// Scalar value of a 0-d (or single-element) tensor.
    pub fn item(&self) -> F {
        let d = self.data();
        debug_assert_eq!(d.len(), 1, "item() on non-scalar tensor");
        *d.iter().next().expect("empty tensor")
    }

    pub(crate) fn accum_grad(&self, g: &ArrayD<F>) {
        if !self.node.requires_grad {
            return;
        }
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => *acc += g,
            None => *slot = Some(g.clone()),
        }
    }

    /// Reverse-mode sweep seeding `d(self)/d(self) = 1`. `self` must be
    /// scalar-shaped (the loss).
    pub fn backward(&self) {
        assert_eq!(self.len(), 1, "backward() requires a scalar loss");
        let seed = ArrayD::from_elem(self.data().raw_dim(), F::one());
        self.accum_grad(&seed);
        let order = self.topo_order();
        for t in order.iter().rev() {
            if let Some(bw) = &t.node.backward {
                bw(&t.node);
            }
        }
    }

    fn topo_order(&self) -> Vec<Tensor<F>> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        // Iterative DFS; graphs can be deep (residual stacks, long chains).
        enum Frame<F: Scalar> {
            Enter(Tensor<F>),
            Exit(Tensor<F>),
        }
        let mut stack = vec![Frame::Enter(self.clone())];
        while let Some(frame) = stack.pop() {
            match frame {
                Frame::Enter(t) => {
                    if !t.requires_grad() || !seen.insert(t.node.id) {
                        continue;
                    }
                    stack.push(Frame::Exit(t.clone()));
                    for p in &t.node.parents {
                        stack.push(Frame::Enter(p.clone()));
                    }
                }
                Frame::Exit(t) => order.push(t),
            }
        }
        order
    }
}

impl<F: Scalar> Node<F> {
    pub(crate) fn out_grad(&self) -> ArrayD<F> {
        self.grad
            .borrow()
            .clone()
            .expect("backward called before gradient was seeded")
    }

    pub(crate) fn parent(&self, i: usize) -> &Tensor<F> {
        &self.parents[i]
    }
}
