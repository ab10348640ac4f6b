use crate::error::{Result, TensorError};
use crate::ops::activation::Activation;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Recorded operation and whatever it cached for the backward pass.
pub(crate) enum Op<T: Scalar> {
    Leaf,
    MatMul { a: Var, b: Var },
    Linear { x: Var, w: Var, b: Option<Var> },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Affine { x: Var, mul: T },
    Activation { x: Var, kind: Activation },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    DepthwiseConv2d { x: Var, w: Var, stride: usize, pad: usize },
    MaxPool { x: Var, argmax: Vec<usize> },
    GlobalAvgPool { x: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, training: bool },
    Dropout { x: Var, mask: Vec<T> },
    Reshape { x: Var },
    SwapLeading { x: Var },
    Narrow { x: Var, start: usize },
    Concat { parts: Vec<Var> },
    Sum { x: Var },
    Mean { x: Var },
    WeightedCrossEntropy { logits: Var, probs: Vec<T>, coef: Vec<T>, labels: Vec<usize> },
    BinaryCrossEntropy { pred: Var, target: Vec<T>, mask: Option<Vec<T>>, count: T },
}

pub(crate) struct Node<T: Scalar> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Tensor<T>>,
}

/// Ordered record of executed differentiable operations.
///
/// Every operation appends one node; `backward` walks the nodes in exact
/// reverse order. Leaf gradients accumulate across calls until
/// [`Tape::zero_grad`].
pub struct Tape<T: Scalar = f32> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient buffers for one backward pass, lazily allocated per node.
pub(crate) struct GradAcc<'a, T: Scalar> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<'a, T: Scalar> GradAcc<'a, T> {
    /// Mutable gradient buffer of `v`, or `None` when `v` takes no gradient.
    pub(crate) fn slot(&mut self, v: Var) -> Option<&mut [T]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(
            self.grads[v.0]
                .get_or_insert_with(|| vec![T::zero(); node.value.numel()])
                .as_mut_slice(),
        )
    }

    pub(crate) fn value(&self, v: Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adds `g` into the gradient of `v`.
    pub(crate) fn add(&mut self, v: Var, g: &[T]) {
        if let Some(slot) = self.slot(v) {
            for (s, &x) in slot.iter_mut().zip(g) {
                *s = *s + x;
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse-mode pass from a scalar `loss`.
    ///
    /// Every gradient-requiring leaf reachable from `loss` gets
    /// `d loss / d leaf` added to its stored gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.value(loss).numel();
        if n != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let (head, _) = self.nodes.split_at(i + 1);
            let node = &head[i];
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            let mut acc = GradAcc {
                nodes: &head[..i],
                grads: &mut grads[..i],
            };
            crate::ops::backward(&node.op, &node.value, &g, &mut acc);
        }
        for (i, g) in grads.into_iter().enumerate() {
            let (Some(g), node) = (g, &mut self.nodes[i]) else { continue };
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            match &mut node.grad {
                Some(existing) => {
                    for (e, x) in existing.data_mut().iter_mut().zip(g) {
                        *e = *e + x;
                    }
                }
                None => node.grad = Some(Tensor::from_vec(node.value.shape(), g)),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![1.0, -2.0, 5.0]));
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates_exactly() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2, 2], vec![0.3, -1.2, 2.5, 0.7]));
        let t = tape.tanh(x);
        let y = tape.mul(t, x).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        let once = tape.grad(x).unwrap().clone();
        tape.backward(s).unwrap();
        let twice = tape.grad(x).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[3]));
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(TensorError::Contract(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]));
        let c = tape.constant(Tensor::from_vec(&[2], vec![3.0, 4.0]));
        let y = tape.mul(x, c).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[3.0, 4.0]);
        assert!(tape.grad(c).is_none());
    }
}
