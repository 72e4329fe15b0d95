//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a shared handle to an n-dimensional array of `f64` values.
//! Operations record their inputs and a backward closure so that calling
//! [`Tensor::backward`] on a scalar result accumulates gradients into every
//! tensor that participated in its computation and has `requires_grad` set.
//!
//! Gradients accumulate additively across backward passes; callers zero them
//! explicitly between optimizer steps. A computation graph is confined to a
//! single thread.

mod adam;
mod gradcheck;
mod ops;

pub use adam::{zero_grads, AdamState};
pub use gradcheck::grad_check;
pub use ops::Activation;

use crate::error::{Error, Result};
use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

/// Backward closure: maps (output values, output gradient) to one gradient
/// vector per parent. An empty vector marks a parent that needs no gradient.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<Vec<f64>>>;

pub(crate) struct Inner {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
}

/// Shared handle to a node of the computation graph.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .finish()
    }
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::Dim(format!(
            "shape {:?} holds {} values, got {}",
            shape, expected, len
        )));
    }
    Ok(())
}

impl Tensor {
    /// New leaf tensor from raw values.
    pub fn new(shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<Self> {
        check_len(shape, values.len())?;
        let n = values.len();
        Ok(Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape: shape.to_vec(),
                values,
                grad: vec![0.0; n],
                requires_grad,
                parents: Vec::new(),
                backward: None,
            })),
        })
    }

    /// Leaf tensor of zeros.
    pub fn zeros(shape: &[usize], requires_grad: bool) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; n], requires_grad).expect("consistent shape")
    }

    /// Scalar constant.
    pub fn scalar(v: f64) -> Self {
        Tensor::new(&[1], vec![v], false).expect("scalar")
    }

    /// Result node of an operation. Parents and the backward closure are only
    /// retained when some parent participates in differentiation.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let n = values.len();
        debug_assert_eq!(shape.iter().product::<usize>(), n);
        let (parents, backward) = if requires_grad {
            (parents, Some(backward))
        } else {
            (Vec::new(), None)
        };
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                values,
                grad: vec![0.0; n],
                requires_grad,
                parents,
                backward,
            })),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    /// Copy of the stored values.
    pub fn values(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    /// Copy of the accumulated gradient.
    pub fn grad(&self) -> Vec<f64> {
        self.inner.borrow().grad.clone()
    }

    /// Borrow values without copying. Crate-internal hot path.
    pub(crate) fn vals(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |i| i.values.as_slice())
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert_eq!(inner.values.len(), 1, "item() on non-scalar tensor");
        inner.values[0]
    }

    pub fn zero_grad(&self) {
        let mut inner = self.inner.borrow_mut();
        inner.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Overwrite stored values in place (optimizer updates, grad-check probes).
    /// Panics on length mismatch.
    pub fn set_values(&self, values: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.values.len(), values.len(), "set_values length");
        inner.values.copy_from_slice(values);
    }

    pub(crate) fn nudge_value(&self, idx: usize, delta: f64) {
        self.inner.borrow_mut().values[idx] += delta;
    }

    pub(crate) fn add_to_grad(&self, g: &[f64]) {
        let mut inner = self.inner.borrow_mut();
        for (dst, src) in inner.grad.iter_mut().zip(g) {
            *dst += src;
        }
    }

    fn ptr(&self) -> *const RefCell<Inner> {
        Rc::as_ptr(&self.inner)
    }

    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const RefCell<Inner>> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.ptr()) {
                continue;
            }
            stack.push((node.clone(), true));
            let inner = node.inner.borrow();
            for p in &inner.parents {
                if !visited.contains(&p.ptr()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    /// Reverse-mode pass from a scalar. Adds one J^T·1 contribution into the
    /// persistent gradient of every reachable tensor with `requires_grad`.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::Contract(format!(
                "backward() requires a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut flow: HashMap<*const RefCell<Inner>, Vec<f64>> = HashMap::new();
        flow.insert(self.ptr(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = flow.remove(&node.ptr()) else {
                continue;
            };
            node.add_to_grad(&g);
            let inner = node.inner.borrow();
            if let Some(bf) = &inner.backward {
                let parent_grads = bf(&inner.values, &g);
                debug_assert_eq!(parent_grads.len(), inner.parents.len());
                for (parent, pg) in inner.parents.iter().zip(parent_grads) {
                    if pg.is_empty() || !parent.requires_grad() {
                        continue;
                    }
                    match flow.entry(parent.ptr()) {
                        std::collections::hash_map::Entry::Occupied(mut e) => {
                            for (dst, src) in e.get_mut().iter_mut().zip(&pg) {
                                *dst += src;
                            }
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(pg);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
