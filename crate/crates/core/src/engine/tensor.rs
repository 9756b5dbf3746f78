//! Dense row-major tensors that record the operations producing them.
//!
//! A [`Tensor`] is a cheap reference-counted handle. Operations on tensors
//! that require gradients attach a [`Node`] holding the parents and a
//! one-shot backward closure; [`Tensor::backward`] walks those nodes in
//! reverse topological order and deposits gradients on the leaves.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Backward closure: receives the gradient of the node output and returns one
/// optional gradient per parent, in parent order.
pub(crate) type BackwardFn = Box<dyn FnOnce(&[f64]) -> Vec<Option<Vec<f64>>>>;

pub(crate) struct Node {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: RefCell<Option<Node>>,
    consumed: Cell<bool>,
}

#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("tracked", &self.0.node.borrow().is_some())
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Builds a constant tensor, checking that the buffer fills the shape.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {} values, got {}",
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::raw(shape.to_vec(), data, false))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::raw(shape.to_vec(), vec![0.0; numel(shape)], false)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::raw(shape.to_vec(), vec![value; numel(shape)], false)
    }

    pub fn scalar(value: f64) -> Self {
        Self::raw(vec![1], vec![value], false)
    }

    /// A leaf that accumulates gradients during backward.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(t.requires_grad())
    }

    /// Returns a leaf copy of this tensor with gradient tracking enabled.
    pub fn requires_grad(self) -> Self {
        let inner = match Rc::try_unwrap(self.0) {
            Ok(inner) => (inner.shape, inner.data),
            Err(rc) => (rc.shape.clone(), rc.data.clone()),
        };
        Self::raw(inner.0, inner.1, true)
    }

    /// A constant copy without any graph history.
    pub fn detach(&self) -> Self {
        Self::raw(self.0.shape.clone(), self.0.data.clone(), false)
    }

    pub(crate) fn raw(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Rc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node: RefCell::new(None),
            consumed: Cell::new(false),
        }))
    }

    /// Records the output of an operation. The node is only attached when at
    /// least one parent takes part in differentiation.
    pub(crate) fn from_op<F>(shape: Vec<usize>, data: Vec<f64>, parents: Vec<Tensor>, backward: F) -> Self
    where
        F: FnOnce(&[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    {
        debug_assert_eq!(numel(&shape), data.len());
        let tracked = parents.iter().any(|p| p.0.requires_grad);
        let node = tracked.then(|| Node {
            parents,
            backward: Box::new(backward),
        });
        Tensor(Rc::new(Inner {
            shape,
            data,
            requires_grad: tracked,
            grad: RefCell::new(None),
            node: RefCell::new(node),
            consumed: Cell::new(false),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.0.data[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.borrow().is_none() && !self.0.consumed.get()
    }

    pub fn grad(&self) -> Option<Ref<'_, Vec<f64>>> {
        let g = self.0.grad.borrow();
        if g.is_some() {
            Some(Ref::map(g, |g| g.as_ref().unwrap()))
        } else {
            None
        }
    }

    pub fn take_grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow_mut().take()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    fn key(&self) -> *const Inner {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a scalar. Gradients reaching the same tensor
    /// along several paths are summed; leaf gradients accumulate across calls.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Rank(self.shape().to_vec()));
        }
        if self.0.consumed.get() {
            return Err(Error::StaleGraph);
        }
        if !self.0.requires_grad {
            return Err(Error::NotDifferentiable);
        }

        let order = self.topo_order()?;
        let mut grads: HashMap<*const Inner, Vec<f64>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.key()) else {
                continue;
            };
            let node = t.0.node.borrow_mut().take();
            match node {
                None => {
                    if t.0.requires_grad {
                        let mut slot = t.0.grad.borrow_mut();
                        match slot.as_mut() {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                            None => *slot = Some(g),
                        }
                    }
                }
                Some(Node { parents, backward }) => {
                    t.0.consumed.set(true);
                    let parent_grads = backward(&g);
                    debug_assert_eq!(parent_grads.len(), parents.len());
                    for (p, pg) in parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.0.requires_grad {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match grads.get_mut(&p.key()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(p.key(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the tracked subgraph, parents before children.
    fn topo_order(&self) -> Result<Vec<Tensor>> {
        let mut order = Vec::new();
        let mut seen: HashMap<*const Inner, ()> = HashMap::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if seen.insert(t.key(), ()).is_some() {
                continue;
            }
            if t.0.consumed.get() {
                return Err(Error::StaleGraph);
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.0.node.borrow().as_ref() {
                for p in &node.parents {
                    if p.0.requires_grad && !seen.contains_key(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        Ok(order)
    }
}
