use std::collections::{HashMap, HashSet};

use super::{Element, Tensor, TensorId};
use crate::error::{Error, Result};

/// Vector-Jacobian product of one recorded op.
pub(crate) trait Backward<T: Element>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradient w.r.t. each input given the upstream gradient `grad` of the
    /// output (whose values are `out`). Entries may be `None` for inputs that
    /// do not require a gradient.
    fn backward(&self, inputs: &[Tensor<T>], out: &[T], grad: &[T]) -> Vec<Option<Vec<T>>>;
}

pub(crate) struct Node<T: Element> {
    pub(crate) inputs: Vec<Tensor<T>>,
    pub(crate) op: Box<dyn Backward<T>>,
}

/// Leaf gradients produced by [`backward`], keyed by tensor identity.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T: Element> {
    map: HashMap<TensorId, Vec<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        self.map.get(&t.id()).map(Vec::as_slice)
    }

    pub fn get_by_id(&self, id: TensorId) -> Option<&[T]> {
        self.map.get(&id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Reverse topological order of every grad-requiring tensor reachable from `root`
/// (root first). Iterative post-order DFS; inputs are expanded in argument order,
/// so the order depends only on graph structure.
fn reverse_topo<T: Element>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut visited = HashSet::new();
    let mut post = Vec::new();
    let mut stack: Vec<(Tensor<T>, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id());
    while let Some((t, next)) = stack.pop() {
        let inputs = t.node().map(|n| n.inputs.as_slice()).unwrap_or(&[]);
        if let Some(child) = inputs[next..].iter().position(|c| c.requires_grad() && !visited.contains(&c.id())) {
            let idx = next + child;
            let c = inputs[idx].clone();
            stack.push((t, idx + 1));
            visited.insert(c.id());
            stack.push((c, 0));
        } else {
            post.push(t);
        }
    }
    post.reverse();
    post
}

/// Backpropagates from a one-element `loss`.
pub fn backward<T: Element>(loss: &Tensor<T>) -> Result<Gradients<T>> {
    if loss.numel() != 1 {
        return Err(Error::Contract(format!(
            "backward needs a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.requires_grad() {
        return Err(Error::Contract(
            "backward called on a tensor with no graph (no input requires grad)".into(),
        ));
    }

    let order = reverse_topo(loss);
    let mut pending: HashMap<TensorId, Vec<T>> = HashMap::new();
    pending.insert(loss.id(), vec![T::one()]);
    let mut leaves = HashMap::new();

    for t in &order {
        let Some(grad) = pending.remove(&t.id()) else {
            continue;
        };
        let Some(node) = t.node() else {
            leaves.insert(t.id(), grad);
            continue;
        };
        let input_grads = node.op.backward(&node.inputs, t.data(), &grad);
        debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op.name());
        for (input, g) in node.inputs.iter().zip(input_grads) {
            let Some(g) = g else { continue };
            if !input.requires_grad() {
                continue;
            }
            debug_assert_eq!(g.len(), input.numel(), "{}", node.op.name());
            match pending.get_mut(&input.id()) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                None => {
                    pending.insert(input.id(), g);
                }
            }
        }
    }
    Ok(Gradients { map: leaves })
}
