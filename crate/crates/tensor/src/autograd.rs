//! Tape-free reverse-mode differentiation over a reference-counted graph.
//!
//! Every [`Var`] owns its value and, when any input requires a gradient,
//! links to its parents plus a closure mapping the output gradient to one
//! gradient per parent. Graphs that never touch a gradient-requiring leaf
//! keep no links, so intermediate activations are freed as soon as they go
//! out of scope (inference mode).

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::{Float, Shape, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Float> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
}

/// A value in the computation graph.
#[derive(Clone)]
pub struct Var<T: Float>(Rc<Node<T>>);

impl<T: Float> Var<T> {
    fn make(value: Tensor<T>, requires_grad: bool, parents: Vec<Var<T>>, backward: Option<BackwardFn<T>>) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            parents,
            backward,
        }))
    }

    /// A leaf that gradients are accumulated into.
    pub fn param(value: Tensor<T>) -> Self {
        Self::make(value, true, Vec::new(), None)
    }

    /// A leaf without gradient tracking.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::make(value, false, Vec::new(), None)
    }

    pub fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Self::make(value, requires_grad, Vec::new(), None)
    }

    /// Builds an interior node. `backward` receives the output gradient and
    /// returns one optional gradient per parent, in order. It is dropped
    /// unread when no parent requires a gradient.
    pub fn from_op(
        value: Tensor<T>,
        parents: &[&Var<T>],
        backward: impl Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Self {
        let requires_grad = !value.is_meta() && parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            let parents = parents.iter().map(|p| (*p).clone()).collect();
            Self::make(value, true, parents, Some(Box::new(backward)))
        } else {
            Self::make(value, false, Vec::new(), None)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> Shape {
        self.0.value.shape()
    }

    pub fn is_meta(&self) -> bool {
        self.0.value.is_meta()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::constant(self.value().clone())
    }

    /// Back-propagates from this node, seeding its gradient with ones.
    pub fn backward(&self) -> Gradients<T> {
        let seed = Tensor::ones(self.shape());
        self.backward_with(seed)
    }

    pub fn backward_with(&self, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.shape(), "gradient seed shape mismatch");
        let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
        if !self.requires_grad() {
            return Gradients { grads };
        }
        let order = self.topo_order();
        grads.insert(self.id(), seed);
        for node in order.iter().rev() {
            let Some(backward) = node.0.backward.as_ref() else {
                continue;
            };
            // Interior gradients are consumed here; leaves keep theirs.
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            let pgrads = backward(&g);
            debug_assert_eq!(pgrads.len(), node.0.parents.len());
            for (parent, pg) in node.0.parents.iter().zip(pgrads) {
                let Some(pg) = pg else { continue };
                if !parent.requires_grad() {
                    continue;
                }
                assert_eq!(pg.shape(), parent.shape(), "gradient shape mismatch for parent");
                match grads.get_mut(&parent.id()) {
                    Some(acc) => acc.add_assign(&pg),
                    None => {
                        grads.insert(parent.id(), pg);
                    }
                }
            }
        }
        Gradients { grads }
    }

    /// Nodes reachable from `self` in topological order (parents first).
    fn topo_order(&self) -> Vec<Var<T>> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Var<T>, bool)> = vec![(self.clone(), false)];
        while let Some((v, expanded)) = stack.pop() {
            if expanded {
                order.push(v);
                continue;
            }
            if !visited.insert(v.id()) {
                continue;
            }
            stack.push((v.clone(), true));
            for p in &v.0.parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

impl<T: Float> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id(), self.value())
    }
}

/// Gradients of leaves with respect to the back-propagated root.
pub struct Gradients<T: Float> {
    grads: HashMap<u64, Tensor<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(&v.id())
    }

    pub fn take(&mut self, v: &Var<T>) -> Option<Tensor<T>> {
        self.grads.remove(&v.id())
    }
}
