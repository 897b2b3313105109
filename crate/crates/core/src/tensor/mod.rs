//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, cheaply clonable handle. Tensors produced by
//! an op on inputs that require gradients carry a graph node; calling
//! [`backward`] on a scalar walks those nodes in reverse topological order and
//! returns the accumulated gradients of every leaf that requires them.

mod autograd;
mod element;
pub mod kink;
pub mod ops;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use autograd::{backward, Gradients};
pub(crate) use autograd::{Backward, Node};
pub use element::{DType, Element};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Identity of a tensor within the process. Stable for the tensor's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(u64);

impl TensorId {
    pub(crate) fn fresh() -> Self {
        TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

pub struct Tensor<T: Element>(Arc<Inner<T>>);

struct Inner<T: Element> {
    id: TensorId,
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.node.as_ref().map(|n| n.op.name()))
            .finish()
    }
}

fn check_len(op: &'static str, shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::shape(op, format!("zero extent in shape {shape:?}")));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::shape(
            op,
            format!("shape {shape:?} holds {n} elements but buffer has {len}"),
        ));
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    fn make(
        id: TensorId,
        data: Vec<T>,
        shape: Vec<usize>,
        requires_grad: bool,
        node: Option<Node<T>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Inner {
            id,
            shape,
            data,
            requires_grad,
            node,
        }))
    }

    /// A constant leaf. Gradients never flow into it.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_len("from_vec", shape, data.len())?;
        Ok(Self::make(TensorId::fresh(), data, shape.to_vec(), false, None))
    }

    /// A trainable leaf: [`backward`] reports its gradient.
    pub fn variable(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_len("variable", shape, data.len())?;
        Ok(Self::make(TensorId::fresh(), data, shape.to_vec(), true, None))
    }

    pub(crate) fn leaf_with_id(id: TensorId, data: Vec<T>, shape: Vec<usize>) -> Self {
        Self::make(id, data, shape, true, None)
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = shape.iter().product();
        Self::from_vec(vec![value; n], shape)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::make(TensorId::fresh(), vec![value], vec![1], false, None)
    }

    /// Output of an op. A graph node is recorded only if some input needs a gradient.
    pub(crate) fn from_op(
        data: Vec<T>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<T>>,
        op: impl Backward<T> + 'static,
    ) -> Self {
        let requires_grad = inputs.iter().any(|t| t.requires_grad());
        let node = requires_grad.then(|| Node {
            inputs,
            op: Box::new(op),
        });
        Self::make(TensorId::fresh(), data, shape, requires_grad, node)
    }

    pub fn id(&self) -> TensorId {
        self.0.id
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

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub(crate) fn node(&self) -> Option<&Node<T>> {
        self.0.node.as_ref()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    /// `[B, C, H, W]` extents, or a shape error naming `op`.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match *self.shape() {
            [b, c, h, w] => Ok([b, c, h, w]),
            ref s => Err(Error::shape(op, format!("expected rank-4 [B,C,H,W], got {s:?}"))),
        }
    }

    /// Same values, no graph link, no gradient.
    pub fn detach(&self) -> Self {
        Self::make(
            TensorId::fresh(),
            self.to_vec(),
            self.shape().to_vec(),
            false,
            None,
        )
    }

    /// Same values as a fresh trainable leaf.
    pub fn to_variable(&self) -> Self {
        Self::make(
            TensorId::fresh(),
            self.to_vec(),
            self.shape().to_vec(),
            true,
            None,
        )
    }

    /// Constant copy converted to another element type.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|v| U::from_f64(v.as_f64())).collect();
        Tensor::make(TensorId::fresh(), data, self.shape().to_vec(), false, None)
    }

    pub fn backward(&self) -> Result<Gradients<T>> {
        backward(self)
    }
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
