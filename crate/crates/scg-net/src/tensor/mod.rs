//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Values are flat row-major buffers, immutable after construction except for
//! the gradient slot on leaves. Every operation produced from tensors that
//! require gradients records a tape node (operation kind, input handles,
//! saved intermediates); node ids grow monotonically, so creation order is a
//! valid topological order and [`Tensor::backward`] replays the tape newest
//! to oldest exactly once per reachable node.
//!
//! A tape and its tensors belong to one execution context and are not `Send`.

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::error::{Error, Result};

pub mod io;
mod ops;

pub use ops::CustomOp;
pub(crate) use ops::{matmul_nn as matmul_nn_raw, matmul_nt as matmul_nt_raw, matmul_tn as matmul_tn_raw};

thread_local! {
    static NEXT_NODE_ID: Cell<u64> = const { Cell::new(1) };
}

fn fresh_id() -> u64 {
    NEXT_NODE_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Exp,
    Log,
    Relu,
    Sqrt,
    Square,
    Neg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ReduceKind {
    Sum,
    Mean,
}

/// Operation record: identifier, input references, saved state.
pub(crate) enum Expr {
    Leaf,
    Unary(UnaryKind, Tensor),
    Scale(f64, Tensor),
    AddScalar(Tensor),
    Clamp { lo: f64, hi: f64, input: Tensor },
    Binary(BinaryKind, Tensor, Tensor),
    Matmul(Tensor, Tensor),
    Reduce(ReduceKind, Tensor, Vec<usize>),
    Reshape(Tensor),
    Transpose(Tensor),
    Select(Tensor, usize),
    Stack(Vec<Tensor>),
    Diagonal(Tensor),
    DiagEmbed(Tensor),
    Custom(Rc<dyn CustomOp>, Vec<Tensor>),
}

impl Expr {
    fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Expr::Leaf => Vec::new(),
            Expr::Unary(_, a)
            | Expr::Scale(_, a)
            | Expr::AddScalar(a)
            | Expr::Clamp { input: a, .. }
            | Expr::Reduce(_, a, _)
            | Expr::Reshape(a)
            | Expr::Transpose(a)
            | Expr::Select(a, _)
            | Expr::Diagonal(a)
            | Expr::DiagEmbed(a) => vec![a],
            Expr::Binary(_, a, b) | Expr::Matmul(a, b) => vec![a, b],
            Expr::Stack(xs) => xs.iter().collect(),
            Expr::Custom(_, xs) => xs.iter().collect(),
        }
    }
}

pub(crate) struct TapeNode {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    expr: Expr,
}

/// Dense tensor handle. Cloning is cheap (shared node).
#[derive(Clone)]
pub struct Tensor {
    node: Rc<TapeNode>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

fn check_shape(data_len: usize, shape: &[usize]) -> Result<()> {
    let numel: usize = shape.iter().product();
    if shape.iter().any(|&d| d == 0) || numel != data_len {
        return Err(Error::ShapeMismatch {
            op: "from_vec",
            lhs: vec![data_len],
            rhs: shape.to_vec(),
        });
    }
    Ok(())
}

impl Tensor {
    pub(crate) fn new_node(
        data: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
        expr: Expr,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            node: Rc::new(TapeNode {
                id: fresh_id(),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                expr,
            }),
        }
    }

    /// Constant leaf (no gradient tracking).
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_shape(data.len(), shape)?;
        Ok(Self::new_node(data, shape.to_vec(), false, Expr::Leaf))
    }

    /// Leaf that accumulates a gradient during backward.
    pub fn parameter(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_shape(data.len(), shape)?;
        Ok(Self::new_node(data, shape.to_vec(), true, Expr::Leaf))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::new_node(vec![0.0; numel], shape.to_vec(), false, Expr::Leaf)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::new_node(vec![value; numel], shape.to_vec(), false, Expr::Leaf)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    /// Shape `[1]` tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Self::new_node(vec![value], vec![1], false, Expr::Leaf)
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::new_node(data, vec![n, n], false, Expr::Leaf)
    }

    /// Copy of the value as a constant leaf; gradients do not flow past it.
    pub fn detach(&self) -> Self {
        Self::new_node(self.node.data.clone(), self.node.shape.clone(), false, Expr::Leaf)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn numel(&self) -> usize {
        self.node.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.node.data
    }

    /// Value of a single-element tensor.
    ///
    /// Panics when the tensor holds more than one element.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.node.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.node.grad.borrow().clone()
    }

    /// Gradient of a leaf, zeros when backward never reached it.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        self.node
            .grad
            .borrow()
            .clone()
            .unwrap_or_else(|| vec![0.0; self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    fn accumulate_leaf_grad(&self, g: &[f64]) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => {
                for (e, &v) in existing.iter_mut().zip(g) {
                    *e += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse pass from a scalar loss. Leaf gradients accumulate across
    /// calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss { elements: self.numel() });
        }
        if !self.node.requires_grad {
            return Ok(());
        }

        // Reachable differentiable nodes; ids are creation-ordered, so
        // descending id order is a reverse topological order.
        let mut order: Vec<Rc<TapeNode>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![Rc::clone(&self.node)];
        while let Some(node) = stack.pop() {
            if !seen.insert(node.id) {
                continue;
            }
            for input in node.expr.inputs() {
                if input.node.requires_grad {
                    stack.push(Rc::clone(&input.node));
                }
            }
            order.push(node);
        }
        order.sort_unstable_by(|a, b| b.id.cmp(&a.id));

        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.node.id, vec![1.0]);

        for node in &order {
            let Some(g) = grads.remove(&node.id) else {
                continue;
            };
            if let Expr::Leaf = node.expr {
                Tensor { node: Rc::clone(node) }.accumulate_leaf_grad(&g);
                continue;
            }
            let inputs = node.expr.inputs();
            let needs: Vec<bool> = inputs.iter().map(|t| t.node.requires_grad).collect();
            let input_grads = ops::backward_step(&node.expr, &g, &node.shape, &node.data, &needs);
            debug_assert_eq!(input_grads.len(), inputs.len());
            for (input, ig) in inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !input.node.requires_grad {
                    continue;
                }
                debug_assert_eq!(ig.len(), input.numel());
                match grads.entry(input.node.id) {
                    std::collections::hash_map::Entry::Occupied(mut e) => {
                        for (acc, v) in e.get_mut().iter_mut().zip(ig) {
                            *acc += v;
                        }
                    }
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(ig);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Integer-valued tensor used for label masks and predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntTensor {
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl IntTensor {
    pub fn new(data: Vec<u8>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch {
                op: "int_tensor",
                lhs: vec![data.len()],
                rhs: shape.to_vec(),
            });
        }
        Ok(IntTensor { shape: shape.to_vec(), data })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}
