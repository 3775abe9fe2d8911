//! Differentiable dense-tensor substrate.
//!
//! A [`Tape`] records every operation performed on its [`Tensor`]s during a
//! forward pass; [`Tensor::backward`] replays the records in reverse and
//! accumulates gradients. Gradients of leaf tensors persist across backward
//! calls (repeated calls accumulate); gradients of operation outputs are
//! recomputed per call.
//!
//! A tape and its tensors are confined to one thread at a time. Independent
//! tapes (one per subject, per fold) can run on separate threads; parameter
//! values travel between threads as plain [`crate::mat::Mat`] data.

mod ops;

pub use ops::{bce_with_logits, cross_entropy_with_logits};

use crate::scalar::Scalar;
use std::cell::RefCell;
use std::rc::Rc;

pub(crate) struct TensorData<F> {
    pub shape: Vec<usize>,
    pub values: Vec<F>,
    pub grad: Option<Vec<F>>,
    pub requires_grad: bool,
}

impl<F: Scalar> TensorData<F> {
    fn accumulate(&mut self, contrib: &[F]) {
        let g = self
            .grad
            .get_or_insert_with(|| vec![F::zero(); contrib.len()]);
        debug_assert_eq!(g.len(), contrib.len());
        for (gi, ci) in g.iter_mut().zip(contrib) {
            *gi += *ci;
        }
    }
}

struct Node<F> {
    back: Box<dyn Fn()>,
    out: Rc<RefCell<TensorData<F>>>,
}

struct TapeShared<F> {
    nodes: RefCell<Vec<Node<F>>>,
}

/// Records operations for reverse-mode differentiation.
pub struct Tape<F: Scalar> {
    inner: Rc<TapeShared<F>>,
}

impl<F: Scalar> Clone for Tape<F> {
    fn clone(&self) -> Self {
        Self {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(TapeShared {
                nodes: RefCell::new(Vec::new()),
            }),
        }
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.inner.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Creates a differentiable leaf (a parameter).
    pub fn leaf(&self, shape: &[usize], values: Vec<F>) -> Tensor<F> {
        self.make(shape, values, true)
    }

    /// Creates a non-differentiable constant.
    pub fn constant(&self, shape: &[usize], values: Vec<F>) -> Tensor<F> {
        self.make(shape, values, false)
    }

    /// Creates a scalar constant.
    pub fn scalar(&self, value: F) -> Tensor<F> {
        self.constant(&[], vec![value])
    }

    fn make(&self, shape: &[usize], values: Vec<F>, requires_grad: bool) -> Tensor<F> {
        let len: usize = shape.iter().product();
        assert_eq!(
            values.len(),
            len,
            "tensor: {} values for shape {:?}",
            values.len(),
            shape
        );
        Tensor {
            data: Rc::new(RefCell::new(TensorData {
                shape: shape.to_vec(),
                values,
                grad: None,
                requires_grad,
            })),
            tape: self.clone(),
        }
    }

    fn push_node(&self, out: &Tensor<F>, back: Box<dyn Fn()>) {
        self.inner.nodes.borrow_mut().push(Node {
            back,
            out: Rc::clone(&out.data),
        });
    }

    fn same_tape(&self, other: &Tape<F>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Handle to a value recorded on a [`Tape`].
pub struct Tensor<F: Scalar> {
    data: Rc<RefCell<TensorData<F>>>,
    tape: Tape<F>,
}

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Self {
            data: Rc::clone(&self.data),
            tape: self.tape.clone(),
        }
    }
}

impl<F: Scalar> Tensor<F> {
    pub fn shape(&self) -> Vec<usize> {
        self.data.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.data.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.data.borrow().requires_grad
    }

    pub fn values(&self) -> Vec<F> {
        self.data.borrow().values.clone()
    }

    /// Scalar value; panics if the tensor is not a single element.
    pub fn item(&self) -> F {
        let d = self.data.borrow();
        assert_eq!(
            d.values.len(),
            1,
            "item: tensor has shape {:?}, expected a scalar",
            d.shape
        );
        d.values[0]
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.data.borrow().grad.clone()
    }

    /// Clears the stored gradient.
    pub fn zero_grad(&self) {
        self.data.borrow_mut().grad = None;
    }

    pub fn tape(&self) -> &Tape<F> {
        &self.tape
    }

    /// Reverse pass from a scalar loss.
    ///
    /// Gradients of operation outputs are reset at the start of each call;
    /// leaf gradients persist, so repeated calls accumulate into leaves.
    pub fn backward(&self) {
        {
            let d = self.data.borrow();
            assert_eq!(
                d.values.len(),
                1,
                "backward: loss must be scalar, got shape {:?}",
                d.shape
            );
        }
        let nodes = self.tape.inner.nodes.borrow();
        for node in nodes.iter() {
            let mut out = node.out.borrow_mut();
            if out.requires_grad {
                let n = out.values.len();
                match &mut out.grad {
                    Some(g) => g.iter_mut().for_each(|x| *x = F::zero()),
                    None => out.grad = Some(vec![F::zero(); n]),
                }
            }
        }
        self.data.borrow_mut().accumulate(&[F::one()]);
        for node in nodes.iter().rev() {
            (node.back)();
        }
    }

    pub(crate) fn binary_check(&self, other: &Tensor<F>, op: &str) {
        assert!(
            self.tape.same_tape(&other.tape),
            "{op}: tensors belong to different tapes"
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_roundtrip() {
        let tape: Tape<f64> = Tape::new();
        let t = tape.leaf(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.shape(), vec![2, 2]);
        assert_eq!(t.values(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(t.requires_grad());
        assert!(t.grad().is_none());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let tape: Tape<f64> = Tape::new();
        let w = tape.leaf(&[2, 2], vec![1.0, -2.0, 0.5, 3.0]);
        let loss = w.sum();
        loss.backward();
        assert_eq!(w.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn repeated_backward_accumulates_on_leaves() {
        let tape: Tape<f64> = Tape::new();
        let w = tape.leaf(&[2], vec![0.3, -0.7]);
        let loss = w.sigmoid().sum();
        loss.backward();
        let g1 = w.grad().unwrap();
        loss.backward();
        let g2 = w.grad().unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }

    #[test]
    #[should_panic(expected = "loss must be scalar")]
    fn backward_rejects_non_scalar() {
        let tape: Tape<f64> = Tape::new();
        let w = tape.leaf(&[2, 2], vec![1.0; 4]);
        let y = w.sigmoid();
        y.backward();
    }

    #[test]
    fn constants_receive_no_grad() {
        let tape: Tape<f64> = Tape::new();
        let w = tape.leaf(&[2], vec![1.0, 2.0]);
        let c = tape.constant(&[2], vec![5.0, 7.0]);
        let loss = w.mul(&c).sum();
        loss.backward();
        assert_eq!(w.grad().unwrap(), vec![5.0, 7.0]);
        assert!(c.grad().is_none());
    }
}
