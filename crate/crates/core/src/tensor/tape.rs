use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use super::{Tensor, TensorError};

/// Computes input gradients from the output gradient.
///
/// `needs[i]` tells whether input `i` is tracked; the returned vector has one
/// slot per input and untracked slots may be `None`.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send>;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Operation kinds recorded on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    MatMul,
    Conv2d,
    Upsample2x,
    Concat,
    Slice,
    Reshape,
    GlobalAvgPool,
    ReplicateSpatial,
    Sum,
    Mean,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::MatMul => "matmul",
            OpKind::Conv2d => "conv2d",
            OpKind::Upsample2x => "upsample_nearest2x",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Reshape => "reshape",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::ReplicateSpatial => "replicate_spatial",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
        };
        f.write_str(name)
    }
}

struct NodeRecord {
    op: OpKind,
    /// One entry per op input; `None` for inputs that were not tracked.
    parents: Vec<Option<usize>>,
    shape: Vec<usize>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<NodeRecord>,
    consumed: bool,
}

/// Append-only record of tracked operations.
///
/// Cloning a `Tape` yields another handle to the same recording. A tape is
/// meant to be driven from one logical thread; parallel work uses one tape
/// per worker.
#[derive(Clone)]
pub struct Tape {
    id: u64,
    inner: Arc<Mutex<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("nodes", &self.len())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            inner: Arc::new(Mutex::new(TapeInner::default())),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.lock().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Op kinds in recording order.
    pub fn ops(&self) -> Vec<OpKind> {
        self.lock().nodes.iter().map(|n| n.op).collect()
    }

    /// Registers `value` as a leaf and returns a tracked handle sharing its data.
    pub fn track(&self, value: &Tensor) -> Tensor {
        let id = self.push(OpKind::Leaf, Vec::new(), value.shape().to_vec(), None);
        Tensor {
            shape: value.shape.clone(),
            data: value.data.clone(),
            node: Some(NodeRef {
                tape: self.clone(),
                index: id,
            }),
        }
    }

    fn lock(&self) -> MutexGuard<'_, TapeInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn push(
        &self,
        op: OpKind,
        parents: Vec<Option<usize>>,
        shape: Vec<usize>,
        backward: Option<BackwardFn>,
    ) -> usize {
        let mut inner = self.lock();
        inner.nodes.push(NodeRecord {
            op,
            parents,
            shape,
            backward,
        });
        inner.nodes.len() - 1
    }

    pub(crate) fn same_as(&self, other: &Tape) -> bool {
        self.id == other.id
    }
}

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub(crate) tape: Tape,
    pub(crate) index: usize,
}

/// Builds the output tensor of an op and records it when any input is tracked.
pub(crate) fn record(
    op: OpKind,
    inputs: &[&Tensor],
    shape: Vec<usize>,
    data: Vec<f64>,
    backward: impl Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>> + Send + 'static,
) -> Result<Tensor, TensorError> {
    let mut tape: Option<&Tape> = None;
    for input in inputs {
        if let Some(node) = &input.node {
            match tape {
                None => tape = Some(&node.tape),
                Some(t) if t.same_as(&node.tape) => {}
                Some(_) => return Err(TensorError::TapeMismatch { op }),
            }
        }
    }
    let out = Tensor::from_parts(shape, Arc::new(data));
    let Some(tape) = tape else {
        return Ok(out);
    };
    if tape.lock().consumed {
        return Err(TensorError::TapeConsumed);
    }
    let parents = inputs
        .iter()
        .map(|t| t.node.as_ref().map(|n| n.index))
        .collect();
    let index = tape.push(op, parents, out.shape().to_vec(), Some(Box::new(backward)));
    Ok(Tensor {
        node: Some(NodeRef {
            tape: tape.clone(),
            index,
        }),
        ..out
    })
}

/// Gradients produced by [`Tensor::backward`], keyed by tape node.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape_id: u64,
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient of the root with respect to `t`, if `t` was reachable.
    pub fn get(&self, t: &Tensor) -> Option<&Tensor> {
        let node = t.node.as_ref()?;
        if node.tape.id != self.tape_id {
            return None;
        }
        self.grads.get(&node.index)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

pub(crate) fn backward(root: &Tensor) -> Result<Gradients, TensorError> {
    if !root.shape().is_empty() {
        return Err(TensorError::NonScalarRoot {
            shape: root.shape().to_vec(),
        });
    }
    let node = root.node.as_ref().ok_or(TensorError::Untracked)?;
    let mut inner = node.tape.lock();
    if inner.consumed {
        return Err(TensorError::TapeConsumed);
    }
    inner.consumed = true;

    let mut slots: Vec<Option<Vec<f64>>> = vec![None; node.index + 1];
    slots[node.index] = Some(vec![1.0]);
    for id in (0..=node.index).rev() {
        let Some(grad) = slots[id].take() else {
            continue;
        };
        let record = &mut inner.nodes[id];
        if let Some(f) = record.backward.take() {
            let needs: Vec<bool> = record.parents.iter().map(Option::is_some).collect();
            let parent_grads = f(&grad, &needs);
            for (parent, pg) in record.parents.iter().zip(parent_grads) {
                if let (Some(p), Some(pg)) = (parent, pg) {
                    match &mut slots[*p] {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += g),
                        slot @ None => *slot = Some(pg),
                    }
                }
            }
        }
        slots[id] = Some(grad);
    }

    let grads = slots
        .into_iter()
        .enumerate()
        .filter_map(|(id, g)| {
            g.map(|g| {
                let shape = inner.nodes[id].shape.clone();
                (id, Tensor::from_parts(shape, Arc::new(g)))
            })
        })
        .collect();
    Ok(Gradients {
        tape_id: node.tape.id,
        grads,
    })
}
