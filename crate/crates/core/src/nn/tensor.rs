//! Reference-counted tensors with a reverse-mode tape.

use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::real::Real;

type BackwardFn<F> = Box<dyn Fn(&BackwardCtx<'_, F>)>;

struct Backward<F: Real> {
    parents: Vec<Tensor<F>>,
    apply: BackwardFn<F>,
}

struct Node<F: Real> {
    shape: Vec<usize>,
    data: RefCell<Vec<F>>,
    grad: RefCell<Option<Vec<F>>>,
    requires_grad: bool,
    backward: Option<Backward<F>>,
}

/// What a backward closure sees: the gradient flowing into the op's output,
/// the output values, and the op's inputs.
pub struct BackwardCtx<'a, F: Real> {
    pub grad: &'a [F],
    pub out: &'a [F],
    pub parents: &'a [Tensor<F>],
}

/// A dense row-major tensor. Cloning is cheap and shares storage.
pub struct Tensor<F: Real>(Rc<Node<F>>);

impl<F: Real> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<F: Real> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Real> Tensor<F> {
    fn from_node(shape: Vec<usize>, data: Vec<F>, requires_grad: bool, backward: Option<Backward<F>>) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            backward,
        }))
    }

    /// A constant (no gradient).
    pub fn new(data: Vec<F>, shape: &[usize]) -> Self {
        Self::from_node(shape.to_vec(), data, false, None)
    }

    /// A trainable leaf.
    pub fn param(data: Vec<F>, shape: &[usize]) -> Self {
        Self::from_node(shape.to_vec(), data, true, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(vec![F::zero(); numel(shape)], shape)
    }

    pub fn filled(value: F, shape: &[usize]) -> Self {
        Self::new(vec![value; numel(shape)], shape)
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Self {
        Self::new(data.iter().map(|&v| F::lit(v)).collect(), shape)
    }

    /// Result of an op. Parents that need no gradient are dropped, and if
    /// none needs one the result is a plain constant.
    pub fn from_op(
        data: Vec<F>,
        shape: Vec<usize>,
        parents: Vec<Tensor<F>>,
        apply: impl Fn(&BackwardCtx<'_, F>) + 'static,
    ) -> Self {
        if parents.iter().any(Tensor::requires_grad) {
            Self::from_node(
                shape,
                data,
                true,
                Some(Backward {
                    parents,
                    apply: Box::new(apply),
                }),
            )
        } else {
            Self::from_node(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dims(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.backward.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<F>> {
        self.0.data.borrow()
    }

    /// In-place access for optimizers and running statistics.
    pub fn data_mut(&self) -> RefMut<'_, Vec<F>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.0.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.borrow().iter().map(|v| v.as_f64()).collect()
    }

    /// The value of a single-element tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.numel(), 1, "item() on a tensor of shape {:?}", self.shape());
        self.0.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<F>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Adds into this tensor's gradient buffer, allocating it on first use.
    pub fn accumulate_with(&self, f: impl FnOnce(&mut [F])) {
        if !self.0.requires_grad {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        let g = slot.get_or_insert_with(|| vec![F::zero(); self.numel()]);
        f(g);
    }

    pub fn accumulate(&self, delta: &[F]) {
        self.accumulate_with(|g| {
            for (a, d) in g.iter_mut().zip(delta) {
                *a += *d;
            }
        });
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Back-propagates from a single-element tensor. Leaf gradients
    /// accumulate; intermediate gradients are released as they are consumed.
    pub fn backward(&self) {
        assert_eq!(self.numel(), 1, "backward() needs a scalar");
        if !self.requires_grad() {
            return;
        }
        self.accumulate(&[F::one()]);

        // iterative post-order DFS
        let mut order: Vec<Tensor<F>> = Vec::new();
        let mut seen: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor<F>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(bw) = &t.0.backward {
                for p in &bw.parents {
                    if p.requires_grad() && !seen.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        for t in order.iter().rev() {
            let Some(bw) = &t.0.backward else { continue };
            let grad = t.0.grad.borrow_mut().take();
            let Some(grad) = grad else { continue };
            let out = t.0.data.borrow();
            (bw.apply)(&BackwardCtx {
                grad: &grad,
                out: &out,
                parents: &bw.parents,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_do_not_record() {
        let a = Tensor::<f64>::new(vec![1.0, 2.0], &[2]);
        let b = Tensor::from_op(vec![2.0, 4.0], vec![2], vec![a.clone()], |_| {});
        assert!(!b.requires_grad());
        assert!(b.is_leaf());
    }

    #[test]
    fn shared_parent_accumulates() {
        let a = Tensor::<f64>::param(vec![3.0], &[1]);
        // y = a * a, built by hand
        let y = Tensor::from_op(vec![9.0], vec![1], vec![a.clone(), a.clone()], |ctx| {
            let (x0, x1) = (ctx.parents[0].data()[0], ctx.parents[1].data()[0]);
            ctx.parents[0].accumulate(&[ctx.grad[0] * x1]);
            ctx.parents[1].accumulate(&[ctx.grad[0] * x0]);
        });
        y.backward();
        assert_eq!(a.grad().unwrap(), vec![6.0]);
    }
}
