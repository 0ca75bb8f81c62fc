use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::ops::{self, Primitive};
use super::{NdError, NodeRef, Tensor};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

enum NodeKind {
    Leaf,
    Op {
        prim: Primitive,
        /// Inputs as seen by the forward pass (tape links kept for routing).
        inputs: Vec<Tensor>,
        argmax: Option<Vec<usize>>,
    },
}

struct Node {
    kind: NodeKind,
    output: Arc<Vec<f64>>,
}

/// Define-by-run gradient tape.
///
/// Nodes are appended in execution order, so parents always precede their
/// children and a single reverse sweep computes every gradient.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), nodes: RefCell::new(Vec::new()) }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record `value` as a leaf whose gradient will be reported by [`Tape::backward`].
    pub fn watch(&self, value: &Tensor) -> Tensor {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node { kind: NodeKind::Leaf, output: value.shared_data() });
        Tensor::from_parts(value.shape().to_vec(), value.shared_data(), Some(NodeRef { tape: self.id, index }))
    }

    /// Apply a primitive. The result is recorded only if some input is tracked.
    pub fn apply(&self, prim: Primitive, inputs: &[&Tensor]) -> Result<Tensor, NdError> {
        let mut tracked = false;
        for x in inputs {
            if let Some(node) = x.node() {
                if node.tape != self.id {
                    return Err(NdError::Tape { expected: self.id, found: node.tape });
                }
                tracked = true;
            }
        }
        let fwd = ops::forward(&prim, inputs)?;
        let output = Arc::new(fwd.data);
        if !tracked {
            return Ok(Tensor::from_parts(fwd.shape, output, None));
        }
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node {
            kind: NodeKind::Op {
                prim,
                inputs: inputs.iter().map(|&x| x.clone()).collect(),
                argmax: fwd.argmax,
            },
            output: Arc::clone(&output),
        });
        Ok(Tensor::from_parts(fwd.shape, output, Some(NodeRef { tape: self.id, index })))
    }

    pub fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
        self.apply(Primitive::MatMul { order_invariant: false }, &[a, b])
    }

    /// Matmul whose dot products do not depend on the order of the contracted axis.
    pub fn matmul_unordered(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
        self.apply(Primitive::MatMul { order_invariant: true }, &[a, b])
    }

    pub fn add(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&self, a: &Tensor, c: f64) -> Result<Tensor, NdError> {
        self.apply(Primitive::ScalarMul(c), &[a])
    }

    pub fn exp(&self, a: &Tensor) -> Result<Tensor, NdError> {
        self.apply(Primitive::Exp, &[a])
    }

    pub fn log(&self, a: &Tensor) -> Result<Tensor, NdError> {
        self.apply(Primitive::Log, &[a])
    }

    pub fn tanh(&self, a: &Tensor) -> Result<Tensor, NdError> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn prelu(&self, x: &Tensor, slope: &Tensor) -> Result<Tensor, NdError> {
        self.apply(Primitive::Prelu, &[x, slope])
    }

    pub fn max_pool_channel(&self, x: &Tensor, window: usize) -> Result<Tensor, NdError> {
        self.apply(Primitive::MaxPoolChannel { window }, &[x])
    }

    pub fn sum(&self, x: &Tensor) -> Result<Tensor, NdError> {
        self.apply(Primitive::ReduceSum, &[x])
    }

    pub fn cumsum(&self, x: &Tensor, axis: usize) -> Result<Tensor, NdError> {
        self.apply(Primitive::CumsumTime { axis }, &[x])
    }

    pub fn conv_temporal(&self, x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor, NdError> {
        match bias {
            Some(b) => self.apply(Primitive::ConvTemporal, &[x, w, b]),
            None => self.apply(Primitive::ConvTemporal, &[x, w]),
        }
    }

    pub fn conv_channel_time(&self, x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor, NdError> {
        match bias {
            Some(b) => self.apply(Primitive::ConvChannelTime, &[x, w, b]),
            None => self.apply(Primitive::ConvChannelTime, &[x, w]),
        }
    }

    pub fn concat(&self, xs: &[&Tensor], axis: usize) -> Result<Tensor, NdError> {
        self.apply(Primitive::Concat { axis }, xs)
    }

    pub fn reshape(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor, NdError> {
        self.apply(Primitive::Reshape { shape: shape.to_vec() }, &[x])
    }

    pub fn masked_fill(&self, x: &Tensor, mask: Vec<bool>, value: f64) -> Result<Tensor, NdError> {
        self.apply(Primitive::MaskedFill { mask: mask.into(), value }, &[x])
    }

    /// Reverse sweep from a scalar `loss`, returning gradients of every watched leaf.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients, NdError> {
        if loss.len() != 1 {
            return Err(NdError::Rank(loss.shape().to_vec()));
        }
        let Some(root) = loss.node() else {
            return Ok(Gradients { tape: self.id, leaves: HashMap::new() });
        };
        if root.tape != self.id {
            return Err(NdError::Tape { expected: self.id, found: root.tape });
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.index + 1];
        grads[root.index] = Some(vec![1.0]);
        let mut leaves = HashMap::new();
        for index in (0..=root.index).rev() {
            let Some(g) = grads[index].take() else { continue };
            let node = &nodes[index];
            match &node.kind {
                NodeKind::Leaf => {
                    leaves.insert(index, g);
                }
                NodeKind::Op { prim, inputs, argmax } => {
                    let needs: Vec<bool> = inputs.iter().map(|x| x.node().is_some()).collect();
                    let input_grads = ops::backward(prim, inputs, &node.output, argmax.as_deref(), &g, &needs);
                    for (x, gx) in inputs.iter().zip(input_grads) {
                        let (Some(parent), Some(gx)) = (x.node(), gx) else { continue };
                        match &mut grads[parent.index] {
                            Some(acc) => acc.iter_mut().zip(&gx).for_each(|(a, b)| *a += b),
                            slot @ None => *slot = Some(gx),
                        }
                    }
                }
            }
        }
        Ok(Gradients { tape: self.id, leaves })
    }
}

/// Gradients of watched leaves from one backward sweep.
pub struct Gradients {
    tape: u64,
    leaves: HashMap<usize, Vec<f64>>,
}

impl Gradients {
    /// Gradient with respect to a watched leaf; zeros if the loss never reached it.
    pub fn wrt(&self, leaf: &Tensor) -> Result<Tensor, NdError> {
        let Some(node) = leaf.node() else {
            return Err(NdError::Untracked);
        };
        if node.tape != self.tape {
            return Err(NdError::Tape { expected: self.tape, found: node.tape });
        }
        match self.leaves.get(&node.index) {
            Some(g) => Tensor::new(leaf.shape().to_vec(), g.clone()),
            None => Ok(Tensor::zeros(leaf.shape())),
        }
    }
}
