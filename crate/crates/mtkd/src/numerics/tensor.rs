//! Dense N-dimensional tensors with reverse-mode gradient tracking.
//!
//! A `Tensor` is an immutable-shape, interior-mutable value. Operations on
//! tensors that require gradients record their inputs, forming a DAG;
//! [`Tensor::backward`] walks that DAG in reverse topological order and
//! accumulates gradients into the leaf tensors that were created with
//! `requires_grad`. Operations whose inputs all have gradient tracking
//! disabled produce detached leaves and retain no graph, so frozen-model
//! inference is free of bookkeeping.
//!
//! Graphs are single-threaded values (`Rc` internally); independent graphs
//! may live on different threads.

use std::cell::{Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::{backprop_step, Op};
use super::scalar::Scalar;
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(super) struct Inner<T: Scalar> {
    pub(super) id: u64,
    pub(super) shape: Vec<usize>,
    pub(super) data: RefCell<Vec<T>>,
    pub(super) grad: RefCell<Option<Vec<T>>>,
    pub(super) requires_grad: bool,
    pub(super) op: Op<T>,
}

pub struct Tensor<T: Scalar> {
    pub(super) inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, op: Op<T>) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                op,
            }),
        }
    }

    /// A leaf tensor from row-major values.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} wants {} values, got {}", shape, expect, data.len()),
            ));
        }
        Ok(Self::build(shape.to_vec(), data, false, Op::Leaf))
    }

    /// A leaf tensor that will accumulate gradients during [`Tensor::backward`].
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::shape(
                "param",
                format!("shape {:?} wants {} values, got {}", shape, expect, data.len()),
            ));
        }
        Ok(Self::build(shape.to_vec(), data, true, Op::Leaf))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self::build(shape.to_vec(), vec![T::ZERO; n], false, Op::Leaf)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n: usize = shape.iter().product();
        Self::build(shape.to_vec(), vec![value; n], false, Op::Leaf)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(vec![1], vec![value], false, Op::Leaf)
    }

    /// Internal: result of an op. Tracks the graph only when some input does.
    pub(super) fn from_op(shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Self {
        let requires = op.inputs().iter().any(|t| t.inner.requires_grad);
        if requires {
            Self::build(shape, data, true, op)
        } else {
            Self::build(shape, data, false, Op::Leaf)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn elem_count(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    /// Mutable access to the raw values (used by the optimizer). The graph
    /// that produced this tensor, if any, is not invalidated meaningfully:
    /// callers mutate only leaves between training steps.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.elem_count() != 1 {
            return Err(Error::shape(
                "item",
                format!("expected scalar, got shape {:?}", self.inner.shape),
            ));
        }
        Ok(self.inner.data.borrow()[0])
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Add `grad` into this tensor's gradient buffer, as a backward pass
    /// would. Used when gradients are computed externally (e.g. reduced
    /// across a batch) and then applied to a master copy of the parameters.
    pub fn accumulate_grad(&self, grad: &[T]) -> Result<()> {
        if grad.len() != self.elem_count() {
            return Err(Error::shape(
                "accumulate_grad",
                format!(
                    "gradient has {} values, tensor has {}",
                    grad.len(),
                    self.elem_count()
                ),
            ));
        }
        self.accumulate_persistent(grad);
        Ok(())
    }

    /// A detached copy: same values, no graph, no gradient tracking.
    pub fn detach(&self) -> Tensor<T> {
        Self::build(
            self.inner.shape.clone(),
            self.inner.data.borrow().clone(),
            false,
            Op::Leaf,
        )
    }

    pub(crate) fn dims4(&self, what: &'static str) -> Result<[usize; 4]> {
        match self.inner.shape[..] {
            [a, b, c, d] => Ok([a, b, c, d]),
            _ => Err(Error::shape(
                what,
                format!("expected 4-d tensor, got shape {:?}", self.inner.shape),
            )),
        }
    }

    fn accumulate_persistent(&self, grad: &[T]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (b, g) in buf.iter_mut().zip(grad.iter()) {
                    *b += *g;
                }
            }
            None => *slot = Some(grad.to_vec()),
        }
    }

    /// Reverse-mode accumulation from a scalar loss.
    ///
    /// Gradients land in the `grad` buffers of every reachable leaf created
    /// with `requires_grad`; intermediate results do not retain gradients.
    /// Calling `backward` again without [`Tensor::zero_grad`] accumulates on
    /// top of the previous pass.
    pub fn backward(&self) -> Result<()> {
        if self.elem_count() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.inner.shape),
            ));
        }
        if !self.inner.requires_grad {
            return Err(Error::arg(
                "backward on a detached graph: no tensor in it requires gradients".to_string(),
            ));
        }

        let order = topo_order(self);
        let mut flowing: HashMap<u64, Vec<T>> = HashMap::new();
        flowing.insert(self.inner.id, vec![T::ONE]);
        let mut reached_leaf = false;

        for t in order.iter().rev() {
            let Some(grad) = flowing.remove(&t.inner.id) else {
                continue;
            };
            backprop_step(t, &grad, &mut |input: &Tensor<T>, g: Vec<T>| {
                if !input.inner.requires_grad {
                    return;
                }
                if matches!(input.inner.op, Op::Leaf) {
                    input.accumulate_persistent(&g);
                    reached_leaf = true;
                } else {
                    match flowing.get_mut(&input.inner.id) {
                        Some(buf) => {
                            for (b, v) in buf.iter_mut().zip(g.iter()) {
                                *b += *v;
                            }
                        }
                        None => {
                            flowing.insert(input.inner.id, g);
                        }
                    }
                }
            });
        }

        if !reached_leaf {
            return Err(Error::arg(
                "backward on a detached graph: no tensor in it requires gradients".to_string(),
            ));
        }
        Ok(())
    }
}

/// Post-order over the op DAG: inputs before consumers.
fn topo_order<T: Scalar>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack: Vec<(Tensor<T>, bool)> = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.inner.id) {
            continue;
        }
        stack.push((t.clone(), true));
        for input in t.inner.op.inputs() {
            stack.push((input.clone(), false));
        }
    }
    order
}
