//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Every value lives in a [`Graph`] arena and is addressed by a copyable
//! [`Var`] handle. Operations are methods on the graph: they execute
//! eagerly, validate their contracts, and (when the graph is recording and
//! the result depends on a `requires_grad` tensor) push a record onto a
//! tape. [`Graph::backward`] replays the tape in reverse and accumulates
//! `dLoss/dTensor` into every tensor that requires gradients. Calling
//! `backward` twice without clearing doubles the accumulated gradients.
//!
//! The engine is deliberately small: rank ≤ 4 dense tensors, single
//! threaded per graph, deterministic reduction order, and broadcasting
//! limited to singleton extents on same-rank operands. Forward results on
//! finite inputs are checked to be finite; a NaN/Inf is surfaced as an
//! error rather than propagated.

mod backward;
mod ops;

pub(crate) use ops::lerp_taps;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a tensor stored in a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

/// Shape, row-major data, and gradient state of one recorded tensor.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) grad: Option<Vec<f64>>,
    pub(crate) requires_grad: bool,
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }
    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Sigmoid,
    Log,
    Exp,
    Sqrt,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ReduceKind {
    Sum,
    Mean,
    Max,
    Min,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Matmul { a: Var, b: Var },
    Transpose { x: Var },
    Binary { kind: BinaryKind, a: Var, b: Var },
    Unary { kind: UnaryKind, x: Var },
    Clamp { x: Var, lo: f64, hi: f64 },
    /// out = x * mul + add
    Affine { x: Var, mul: f64 },
    Softmax { x: Var, axis: usize },
    Reduce { kind: ReduceKind, x: Var, axis: Option<usize> },
    Reshape { x: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize, len: usize },
    AvgPool { x: Var, factor: usize },
    ResizeBilinear { x: Var },
}

pub(crate) struct Record {
    pub(crate) op: Op,
    pub(crate) out: Var,
}

/// Arena of tensors plus the tape of executed operations.
///
/// A graph and its tensors may be moved between threads but never shared
/// mutably; each training iteration builds a fresh graph.
pub struct Graph {
    pub(crate) nodes: Vec<Tensor>,
    pub(crate) tape: Vec<Record>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Recording graph: operations on `requires_grad` tensors are taped.
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), tape: Vec::new(), recording: true }
    }

    /// Inference graph: nothing is taped, gradients never flow.
    pub fn inference() -> Self {
        Graph { nodes: Vec::new(), tape: Vec::new(), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tape_len(&self) -> usize {
        self.tape.len()
    }

    // ── Creation ────────────────────────────────────────────────────

    pub fn leaf(&mut self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Var> {
        if data.len() != numel(shape) {
            return Err(TensorError::Dimension {
                op: "leaf",
                detail: format!("data length {} does not match shape {:?}", data.len(), shape),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        Ok(self.push(shape.to_vec(), data, requires_grad && self.recording))
    }

    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> Result<Var> {
        self.leaf(data, shape, false)
    }

    /// Rank-0 constant.
    pub fn scalar(&mut self, v: f64) -> Result<Var> {
        self.leaf(vec![v], &[], false)
    }

    pub fn zeros(&mut self, shape: &[usize], requires_grad: bool) -> Var {
        self.push(shape.to_vec(), vec![0.0; numel(shape)], requires_grad && self.recording)
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Tensor { shape, data, grad: None, requires_grad });
        Var(id)
    }

    pub(crate) fn record(&mut self, op: Op, out: Var) {
        if self.recording && self.nodes[out.0].requires_grad {
            self.tape.push(Record { op, out });
        }
    }

    pub(crate) fn out_requires(&self, inputs: &[Var]) -> bool {
        self.recording && inputs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ── Access ──────────────────────────────────────────────────────

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0]
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Value of a single-element tensor.
    pub fn item(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].numel(), 1);
        self.nodes[v.0].data[0]
    }

    pub fn clear_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Visits each taped op exactly once,
    /// in reverse execution order. Gradients of this pass are added into
    /// each `requires_grad` tensor's persistent `grad` buffer, so repeated
    /// calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut temp: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        temp[loss.0] = Some(vec![1.0]);
        for i in (0..self.tape.len()).rev() {
            // Records are never mutated after creation; split borrows by
            // taking the op out and putting it back.
            let rec_out = self.tape[i].out;
            if temp[rec_out.0].is_none() {
                continue;
            }
            let op = self.tape[i].op.clone();
            backward::apply(&self.nodes, &op, rec_out, &mut temp);
        }
        for (node, t) in self.nodes.iter_mut().zip(temp.into_iter()) {
            if !node.requires_grad {
                continue;
            }
            let contribution = match t {
                Some(g) => g,
                None => continue,
            };
            match &mut node.grad {
                Some(g) => {
                    for (gi, ci) in g.iter_mut().zip(contribution.iter()) {
                        *gi += ci;
                    }
                }
                None => node.grad = Some(contribution),
            }
        }
        Ok(())
    }
}

pub(crate) fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}
