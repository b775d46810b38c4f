//! A small reverse-mode automatic differentiation tape.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Values are
//! dense row-major `ndarray` tensors. Complex tensors use a trailing axis of
//! length two holding `(re, im)`. Calling [`Graph::backward`] on a scalar
//! returns gradients for every leaf that requires them: inputs created with
//! [`Graph::input`] and trainable parameters.
//!
//! Graphs are single-threaded; independent graphs may live on separate threads.

mod complex;
mod conv;
mod norm;
mod ops;
mod percentile;
mod spatial;

pub mod check;

pub use complex::{complex_to_real, real_to_complex};
pub use conv::Conv2dSpec;
pub use ops::concat;
pub use percentile::percentile_sorted;
pub use spatial::{avg_pool_matrix, bilinear_matrix, box_valid_matrix};

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};

use crate::{Error, Real, Result};

pub(crate) type BackwardFn<F> = Box<dyn Fn(&ArrayD<F>) -> Vec<Option<ArrayD<F>>>>;

struct Node<F: Real> {
    value: Rc<ArrayD<F>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<F>>,
    requires_grad: bool,
}

/// Operation tape.
pub struct Graph<F: Real> {
    nodes: RefCell<Vec<Node<F>>>,
    params: RefCell<BTreeMap<String, usize>>,
    record: bool,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, F: Real> {
    graph: &'g Graph<F>,
    id: usize,
}

impl<F: Real> std::fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    /// A graph that records backward closures.
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(BTreeMap::new()),
            record: true,
        }
    }

    /// A forward-only graph; nothing requires gradients.
    pub fn inference() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn leaf(&self, value: ArrayD<F>, requires_grad: bool) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(standard(value)),
            parents: Vec::new(),
            backward: None,
            requires_grad: requires_grad && self.record,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub fn constant(&self, value: ArrayD<F>) -> Var<'_, F> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: F) -> Var<'_, F> {
        self.leaf(ArrayD::from_elem(IxDyn(&[]), value), false)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn input(&self, value: ArrayD<F>) -> Var<'_, F> {
        self.leaf(value, true)
    }

    /// A named parameter leaf. Repeated calls with the same path return the
    /// same node, so shared weights accumulate a single gradient.
    pub fn parameter(&self, path: &str, trainable: bool, init: impl FnOnce() -> ArrayD<F>) -> Var<'_, F> {
        if let Some(&id) = self.params.borrow().get(path) {
            return Var { graph: self, id };
        }
        let v = self.leaf(init(), trainable);
        self.params.borrow_mut().insert(path.to_string(), v.id);
        v
    }

    /// Makes `var` the node returned for parameter `path`, so weights can be
    /// fed as explicit inputs (for example in gradient checks).
    pub fn bind_parameter(&self, path: &str, var: Var<'_, F>) {
        self.params.borrow_mut().insert(path.to_string(), var.id);
    }

    pub(crate) fn push<B>(&self, value: ArrayD<F>, parents: &[usize], backward: B) -> Var<'_, F>
    where
        B: Fn(&ArrayD<F>) -> Vec<Option<ArrayD<F>>> + 'static,
    {
        let mut nodes = self.nodes.borrow_mut();
        let requires = self.record && parents.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            value: Rc::new(standard(value)),
            parents: parents.to_vec(),
            backward: if requires { Some(Box::new(backward)) } else { None },
            requires_grad: requires,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<ArrayD<F>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<Gradients<F>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<ArrayD<F>>> = (0..=loss.id).map(|_| None).collect();
        let mut leaves = HashMap::new();
        if !root.requires_grad {
            return Ok(Gradients {
                leaves,
                params: self.params.borrow().clone(),
            });
        }
        grads[loss.id] = Some(ArrayD::from_elem(root.value.raw_dim(), F::one()));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.backward {
                Some(back) => {
                    let parent_grads = back(&g);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (&p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !nodes[p].requires_grad {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "gradient shape for node {p}");
                        match &mut grads[p] {
                            Some(acc) => *acc += &pg,
                            slot => *slot = Some(standard(pg)),
                        }
                    }
                }
                None => {
                    leaves.insert(id, g);
                }
            }
        }
        Ok(Gradients {
            leaves,
            params: self.params.borrow().clone(),
        })
    }
}

fn standard<F: Real>(a: ArrayD<F>) -> ArrayD<F> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<F: Real> {
    leaves: HashMap<usize, ArrayD<F>>,
    params: BTreeMap<String, usize>,
}

impl<F: Real> Gradients<F> {
    pub fn wrt(&self, v: Var<'_, F>) -> Option<&ArrayD<F>> {
        self.leaves.get(&v.id)
    }

    pub fn param(&self, path: &str) -> Option<&ArrayD<F>> {
        self.params.get(path).and_then(|id| self.leaves.get(id))
    }

    /// `(path, gradient)` for every parameter that received one.
    pub fn params(&self) -> impl Iterator<Item = (&str, &ArrayD<F>)> {
        self.params
            .iter()
            .filter_map(|(p, id)| self.leaves.get(id).map(|g| (p.as_str(), g)))
    }
}

impl<'g, F: Real> Var<'g, F> {
    pub fn graph(&self) -> &'g Graph<F> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<ArrayD<F>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires(self.id)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> F {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a tensor of {} elements", v.len());
        *v.iter().next().expect("one element")
    }

    pub(crate) fn same_graph(&self, other: Var<'g, F>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "variables belong to different graphs"
        );
    }
}
