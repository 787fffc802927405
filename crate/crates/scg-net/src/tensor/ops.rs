//! Tensor operations: forward evaluation and the matching backward rules.
//!
//! Elementwise binary ops broadcast with trailing-axis alignment (a size-1
//! axis stretches, nothing else does). Backward for a broadcast op
//! accumulates straight into the operand-shaped buffer, which performs the
//! reduction over stretched axes in the same pass.

use std::rc::Rc;

use super::{BinaryKind, Expr, ReduceKind, Tensor, UnaryKind};
use crate::error::{Error, Result};

/// Differentiable operation implemented outside the core op set.
///
/// The implementor saves whatever forward intermediates its backward rule
/// needs. `needs[i]` tells which inputs actually require a gradient.
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn backward(&self, grad_out: &[f64], inputs: &[Tensor], needs: &[bool]) -> Vec<Option<Vec<f64>>>;
}

// ── Broadcasting machinery ──────────────────────────────────────────

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Row-major strides with 0 on axes the operand broadcasts over,
/// left-padded to the output rank.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - shape.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for d in (0..shape.len()).rev() {
        strides[offset + d] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

/// Visits every output position of a broadcast pair, handing the callback
/// the flat indices into both operands.
fn broadcast_zip(
    a_shape: &[usize],
    b_shape: &[usize],
    out_shape: &[usize],
    mut f: impl FnMut(usize, usize),
) {
    let numel: usize = out_shape.iter().product();
    let rank = out_shape.len();
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let mut coords = vec![0usize; rank];
    let mut ia = 0usize;
    let mut ib = 0usize;
    for _ in 0..numel {
        f(ia, ib);
        for d in (0..rank).rev() {
            coords[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
        }
    }
}

// ── Raw matrix kernels (shared with the nn module) ──────────────────

/// a[m×k] · b[k×p]
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * p..(i + 1) * p];
        for (t, &av) in a_row.iter().enumerate() {
            let b_row = &b[t * p..(t + 1) * p];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// a[m×k] · b[p×k]ᵀ
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..p {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                s += av * bv;
            }
            out[i * p + j] = s;
        }
    }
    out
}

/// a[m×k]ᵀ · b[m×p]
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * p];
    for t in 0..m {
        let a_row = &a[t * k..(t + 1) * k];
        let b_row = &b[t * p..(t + 1) * p];
        for (i, &av) in a_row.iter().enumerate() {
            let o_row = &mut out[i * p..(i + 1) * p];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

// ── Forward builders ────────────────────────────────────────────────

impl Tensor {
    fn unary(&self, kind: UnaryKind) -> Result<Tensor> {
        let data: Vec<f64> = match kind {
            UnaryKind::Exp => self.data().iter().map(|&x| x.exp()).collect(),
            UnaryKind::Log => {
                if let Some(&bad) = self.data().iter().find(|&&x| x < 0.0) {
                    return Err(Error::Domain { op: "log", value: bad });
                }
                self.data().iter().map(|&x| x.ln()).collect()
            }
            UnaryKind::Relu => self.data().iter().map(|&x| x.max(0.0)).collect(),
            UnaryKind::Sqrt => {
                if let Some(&bad) = self.data().iter().find(|&&x| x < 0.0) {
                    return Err(Error::Domain { op: "sqrt", value: bad });
                }
                self.data().iter().map(|&x| x.sqrt()).collect()
            }
            UnaryKind::Square => self.data().iter().map(|&x| x * x).collect(),
            UnaryKind::Neg => self.data().iter().map(|&x| -x).collect(),
        };
        let rg = self.requires_grad();
        let expr = if rg { Expr::Unary(kind, self.clone()) } else { Expr::Leaf };
        Ok(Tensor::new_node(data, self.shape().to_vec(), rg, expr))
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Exp)
    }

    /// Natural log; negative inputs are a domain error, zero yields `-inf`
    /// (callers add an epsilon where zeros are possible).
    pub fn log(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Log)
    }

    /// max(x, 0); the derivative at exactly 0 is defined as 0.
    pub fn relu(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Relu)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Sqrt)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Square)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Neg)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|&x| x * c).collect();
        let rg = self.requires_grad();
        let expr = if rg { Expr::Scale(c, self.clone()) } else { Expr::Leaf };
        Ok(Tensor::new_node(data, self.shape().to_vec(), rg, expr))
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|&x| x + c).collect();
        let rg = self.requires_grad();
        let expr = if rg { Expr::AddScalar(self.clone()) } else { Expr::Leaf };
        Ok(Tensor::new_node(data, self.shape().to_vec(), rg, expr))
    }

    /// Clamp to `[lo, hi]`; gradient passes through strictly inside the
    /// interval and is zero outside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|&x| x.clamp(lo, hi)).collect();
        let rg = self.requires_grad();
        let expr = if rg { Expr::Clamp { lo, hi, input: self.clone() } } else { Expr::Leaf };
        Ok(Tensor::new_node(data, self.shape().to_vec(), rg, expr))
    }

    fn binary(&self, kind: BinaryKind, other: &Tensor) -> Result<Tensor> {
        let op = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let out_shape = broadcast_shape(op, self.shape(), other.shape())?;
        let numel: usize = out_shape.iter().product();
        let a = self.data();
        let b = other.data();
        let mut data = vec![0.0; numel];
        let apply = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        if self.shape() == other.shape() {
            for (o, (&x, &y)) in data.iter_mut().zip(a.iter().zip(b)) {
                *o = apply(x, y);
            }
        } else {
            let mut cursor = 0usize;
            broadcast_zip(self.shape(), other.shape(), &out_shape, |ia, ib| {
                data[cursor] = apply(a[ia], b[ib]);
                cursor += 1;
            });
        }
        let rg = self.requires_grad() || other.requires_grad();
        let expr = if rg {
            Expr::Binary(kind, self.clone(), other.clone())
        } else {
            Expr::Leaf
        };
        Ok(Tensor::new_node(data, out_shape, rg, expr))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Add, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Sub, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Mul, other)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Div, other)
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a_shape, b_shape) = (self.shape(), other.shape());
        if a_shape.len() != 2 || b_shape.len() != 2 || a_shape[1] != b_shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a_shape.to_vec(),
                rhs: b_shape.to_vec(),
            });
        }
        let (m, k, p) = (a_shape[0], a_shape[1], b_shape[1]);
        let data = matmul_nn(self.data(), other.data(), m, k, p);
        let rg = self.requires_grad() || other.requires_grad();
        let expr = if rg { Expr::Matmul(self.clone(), other.clone()) } else { Expr::Leaf };
        Ok(Tensor::new_node(data, vec![m, p], rg, expr))
    }

    fn reduce(&self, kind: ReduceKind, axes: &[usize]) -> Result<Tensor> {
        let rank = self.shape().len();
        let mut axes: Vec<usize> = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        for &a in &axes {
            if a >= rank {
                return Err(Error::InvalidAxis { axis: a, rank });
            }
        }
        let out_shape: Vec<usize> = self
            .shape()
            .iter()
            .enumerate()
            .filter(|(d, _)| !axes.contains(d))
            .map(|(_, &s)| s)
            .collect();
        let out_shape = if out_shape.is_empty() { vec![1] } else { out_shape };
        let out_numel: usize = out_shape.iter().product();
        let count: usize = axes.iter().map(|&a| self.shape()[a]).product();
        let mut data = vec![0.0; out_numel];
        for_each_reduced(self.shape(), &axes, |in_idx, out_idx| {
            data[out_idx] += self.data()[in_idx];
        });
        if kind == ReduceKind::Mean {
            let inv = 1.0 / count as f64;
            for v in &mut data {
                *v *= inv;
            }
        }
        let rg = self.requires_grad();
        let expr = if rg { Expr::Reduce(kind, self.clone(), axes) } else { Expr::Leaf };
        Ok(Tensor::new_node(data, out_shape, rg, expr))
    }

    /// Sum over the given axes (removed from the shape).
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor> {
        self.reduce(ReduceKind::Sum, axes)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor> {
        self.reduce(ReduceKind::Mean, axes)
    }

    /// Sum of every element, shape `[1]`.
    pub fn sum_all(&self) -> Result<Tensor> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce(ReduceKind::Sum, &axes)
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.reduce(ReduceKind::Mean, &axes)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let rg = self.requires_grad();
        let expr = if rg { Expr::Reshape(self.clone()) } else { Expr::Leaf };
        Ok(Tensor::new_node(self.data().to_vec(), shape.to_vec(), rg, expr))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                lhs: self.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data()[i * c + j];
            }
        }
        let rg = self.requires_grad();
        let expr = if rg { Expr::Transpose(self.clone()) } else { Expr::Leaf };
        Ok(Tensor::new_node(data, vec![c, r], rg, expr))
    }

    /// Subtensor at `index` along axis 0.
    pub fn select0(&self, index: usize) -> Result<Tensor> {
        if self.shape().is_empty() || index >= self.shape()[0] {
            return Err(Error::InvalidAxis { axis: index, rank: self.shape().first().copied().unwrap_or(0) });
        }
        let block: usize = self.shape()[1..].iter().product::<usize>().max(1);
        let out_shape = if self.shape().len() == 1 { vec![1] } else { self.shape()[1..].to_vec() };
        let data = self.data()[index * block..(index + 1) * block].to_vec();
        let rg = self.requires_grad();
        let expr = if rg { Expr::Select(self.clone(), index) } else { Expr::Leaf };
        Ok(Tensor::new_node(data, out_shape, rg, expr))
    }

    /// Stack equal-shaped tensors along a new leading axis.
    pub fn stack0(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::ShapeMismatch {
            op: "stack0",
            lhs: vec![0],
            rhs: vec![],
        })?;
        let mut data = Vec::with_capacity(parts.len() * first.numel());
        for p in parts {
            if p.shape() != first.shape() {
                return Err(Error::ShapeMismatch {
                    op: "stack0",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            data.extend_from_slice(p.data());
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(first.shape());
        let rg = parts.iter().any(|p| p.requires_grad());
        let expr = if rg { Expr::Stack(parts.to_vec()) } else { Expr::Leaf };
        Ok(Tensor::new_node(data, shape, rg, expr))
    }

    /// Diagonal of a square matrix as a vector.
    pub fn diagonal(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::ShapeMismatch { op: "diagonal", lhs: s.to_vec(), rhs: vec![] });
        }
        let n = s[0];
        let data: Vec<f64> = (0..n).map(|i| self.data()[i * n + i]).collect();
        let rg = self.requires_grad();
        let expr = if rg { Expr::Diagonal(self.clone()) } else { Expr::Leaf };
        Ok(Tensor::new_node(data, vec![n], rg, expr))
    }

    /// Vector to diagonal matrix.
    pub fn diag_embed(&self) -> Result<Tensor> {
        if self.shape().len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "diag_embed",
                lhs: self.shape().to_vec(),
                rhs: vec![],
            });
        }
        let n = self.shape()[0];
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = self.data()[i];
        }
        let rg = self.requires_grad();
        let expr = if rg { Expr::DiagEmbed(self.clone()) } else { Expr::Leaf };
        Ok(Tensor::new_node(data, vec![n, n], rg, expr))
    }

    /// Sum of the main diagonal.
    pub fn trace(&self) -> Result<Tensor> {
        self.diagonal()?.sum_all()
    }

    /// Result of a differentiable operation implemented outside the core set.
    pub(crate) fn from_custom_op(
        op: Rc<dyn CustomOp>,
        inputs: Vec<Tensor>,
        data: Vec<f64>,
        shape: Vec<usize>,
    ) -> Tensor {
        let rg = inputs.iter().any(|t| t.requires_grad());
        let expr = if rg { Expr::Custom(op, inputs) } else { Expr::Leaf };
        Tensor::new_node(data, shape, rg, expr)
    }
}

/// Visits each input element of a reduction with its output slot.
fn for_each_reduced(shape: &[usize], axes: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let numel: usize = shape.iter().product();
    // Output strides, 0 on reduced axes.
    let mut out_strides = vec![0usize; rank];
    let mut acc = 1usize;
    for d in (0..rank).rev() {
        if !axes.contains(&d) {
            out_strides[d] = acc;
            acc *= shape[d];
        }
    }
    let mut coords = vec![0usize; rank];
    let mut out_idx = 0usize;
    for in_idx in 0..numel {
        f(in_idx, out_idx);
        for d in (0..rank).rev() {
            coords[d] += 1;
            out_idx += out_strides[d];
            if coords[d] < shape[d] {
                break;
            }
            coords[d] = 0;
            out_idx -= out_strides[d] * shape[d];
        }
    }
}

// ── Backward rules ──────────────────────────────────────────────────

/// Gradient of each input of `expr` given the output gradient.
/// Entries are `None` when the input does not need a gradient.
pub(crate) fn backward_step(
    expr: &Expr,
    g: &[f64],
    out_shape: &[usize],
    out_data: &[f64],
    needs: &[bool],
) -> Vec<Option<Vec<f64>>> {
    match expr {
        Expr::Leaf => Vec::new(),
        Expr::Unary(kind, a) => {
            let x = a.data();
            let grad: Vec<f64> = match kind {
                UnaryKind::Exp => g.iter().zip(out_data).map(|(&gv, &y)| gv * y).collect(),
                UnaryKind::Log => g.iter().zip(x).map(|(&gv, &xv)| gv / xv).collect(),
                UnaryKind::Relu => g
                    .iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect(),
                UnaryKind::Sqrt => g
                    .iter()
                    .zip(out_data)
                    .map(|(&gv, &y)| gv * 0.5 / y)
                    .collect(),
                UnaryKind::Square => g.iter().zip(x).map(|(&gv, &xv)| gv * 2.0 * xv).collect(),
                UnaryKind::Neg => g.iter().map(|&gv| -gv).collect(),
            };
            vec![Some(grad)]
        }
        Expr::Scale(c, _) => vec![Some(g.iter().map(|&gv| gv * c).collect())],
        Expr::AddScalar(_) => vec![Some(g.to_vec())],
        Expr::Clamp { lo, hi, input } => {
            let x = input.data();
            vec![Some(
                g.iter()
                    .zip(x)
                    .map(|(&gv, &xv)| if xv > *lo && xv < *hi { gv } else { 0.0 })
                    .collect(),
            )]
        }
        Expr::Binary(kind, a, b) => {
            let (ad, bd) = (a.data(), b.data());
            let mut ga = if needs[0] { Some(vec![0.0; a.numel()]) } else { None };
            let mut gb = if needs[1] { Some(vec![0.0; b.numel()]) } else { None };
            let mut cursor = 0usize;
            broadcast_zip(a.shape(), b.shape(), out_shape, |ia, ib| {
                let gv = g[cursor];
                cursor += 1;
                match kind {
                    BinaryKind::Add => {
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += gv;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] += gv;
                        }
                    }
                    BinaryKind::Sub => {
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += gv;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] -= gv;
                        }
                    }
                    BinaryKind::Mul => {
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += gv * bd[ib];
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] += gv * ad[ia];
                        }
                    }
                    BinaryKind::Div => {
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += gv / bd[ib];
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] -= gv * ad[ia] / (bd[ib] * bd[ib]);
                        }
                    }
                }
            });
            vec![ga, gb]
        }
        Expr::Matmul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let p = b.shape()[1];
            let ga = needs[0].then(|| matmul_nt(g, b.data(), m, p, k));
            let gb = needs[1].then(|| matmul_tn(a.data(), g, m, k, p));
            vec![ga, gb]
        }
        Expr::Reduce(kind, a, axes) => {
            let count: usize = axes.iter().map(|&ax| a.shape()[ax]).product();
            let factor = match kind {
                ReduceKind::Sum => 1.0,
                ReduceKind::Mean => 1.0 / count as f64,
            };
            let mut grad = vec![0.0; a.numel()];
            for_each_reduced(a.shape(), axes, |in_idx, out_idx| {
                grad[in_idx] = g[out_idx] * factor;
            });
            vec![Some(grad)]
        }
        Expr::Reshape(_) => vec![Some(g.to_vec())],
        Expr::Transpose(a) => {
            let (r, c) = (a.shape()[0], a.shape()[1]);
            // g has shape c×r; transpose it back to r×c.
            let mut grad = vec![0.0; r * c];
            for i in 0..c {
                for j in 0..r {
                    grad[j * c + i] = g[i * r + j];
                }
            }
            vec![Some(grad)]
        }
        Expr::Select(a, index) => {
            let block: usize = a.shape()[1..].iter().product::<usize>().max(1);
            let mut grad = vec![0.0; a.numel()];
            grad[index * block..(index + 1) * block].copy_from_slice(g);
            vec![Some(grad)]
        }
        Expr::Stack(parts) => {
            let block = parts[0].numel();
            parts
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    if p.requires_grad() {
                        Some(g[i * block..(i + 1) * block].to_vec())
                    } else {
                        None
                    }
                })
                .collect()
        }
        Expr::Diagonal(a) => {
            let n = a.shape()[0];
            let mut grad = vec![0.0; n * n];
            for i in 0..n {
                grad[i * n + i] = g[i];
            }
            vec![Some(grad)]
        }
        Expr::DiagEmbed(a) => {
            let n = a.shape()[0];
            let grad: Vec<f64> = (0..n).map(|i| g[i * n + i]).collect();
            vec![Some(grad)]
        }
        Expr::Custom(op, inputs) => op.backward(g, inputs, needs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(data.to_vec(), shape).unwrap()
    }

    fn p(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::parameter(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn relu_definition() {
        let x = t(&[-1.0, 0.0, 2.0], &[3]);
        assert_eq!(x.relu().unwrap().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn exp_of_zero_is_one() {
        let x = t(&[0.0], &[1]);
        assert_eq!(x.exp().unwrap().data(), &[1.0]);
    }

    #[test]
    fn log_rejects_negative() {
        let x = t(&[1.0, -0.5], &[2]);
        match x.log() {
            Err(Error::Domain { op, value }) => {
                assert_eq!(op, "log");
                assert_eq!(value, -0.5);
            }
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn add_shape_mismatch_names_both_shapes() {
        let a = t(&[1.0, 2.0], &[2]);
        let b = t(&[1.0, 2.0, 3.0], &[3]);
        match a.add(&b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2]);
                assert_eq!(rhs, vec![3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn broadcast_row_times_column() {
        let col = t(&[1.0, 2.0], &[2, 1]);
        let row = t(&[10.0, 20.0, 30.0], &[1, 3]);
        let out = col.mul(&row).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert_eq!(out.data(), &[10.0, 20.0, 30.0, 20.0, 40.0, 60.0]);
    }

    #[test]
    fn broadcast_backward_reduces() {
        let col = p(&[1.0, 2.0], &[2, 1]);
        let row = p(&[10.0, 20.0, 30.0], &[1, 3]);
        let loss = col.mul(&row).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(col.grad().unwrap(), vec![60.0, 60.0]);
        assert_eq!(row.grad().unwrap(), vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::eye(2);
        let m = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        assert_eq!(i2.matmul(&m).unwrap().data(), m.data());
    }

    #[test]
    fn matmul_orthogonal_rows() {
        let a = t(&[1.0, 0.0], &[1, 2]);
        let b = t(&[0.0, 5.0], &[2, 1]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn matmul_inner_mismatch() {
        let a = t(&[1.0, 2.0], &[1, 2]);
        let b = t(&[1.0, 2.0, 3.0], &[3, 1]);
        assert!(a.matmul(&b).is_err());
    }

    #[test]
    fn sum_all_and_mean() {
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        assert_eq!(x.sum_all().unwrap().item(), 10.0);
        let m = t(&[2.0, 4.0], &[2]);
        assert_eq!(m.mean_all().unwrap().item(), 3.0);
    }

    #[test]
    fn sum_over_axis() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let rows = x.sum_axes(&[1]).unwrap();
        assert_eq!(rows.shape(), &[2]);
        assert_eq!(rows.data(), &[6.0, 15.0]);
        let cols = x.sum_axes(&[0]).unwrap();
        assert_eq!(cols.data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn invalid_axis_rejected() {
        let x = t(&[1.0, 2.0], &[2]);
        match x.sum_axes(&[3]) {
            Err(Error::InvalidAxis { axis, rank }) => {
                assert_eq!(axis, 3);
                assert_eq!(rank, 1);
            }
            other => panic!("expected invalid axis, got {other:?}"),
        }
    }

    #[test]
    fn mean_axis_backward_scales() {
        let x = p(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let loss = x.mean_axes(&[0]).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn transpose_roundtrip() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let xt = x.transpose().unwrap();
        assert_eq!(xt.shape(), &[3, 2]);
        assert_eq!(xt.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(xt.transpose().unwrap().data(), x.data());
    }

    #[test]
    fn select_and_stack_are_inverses() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]);
        let parts: Vec<Tensor> = (0..3).map(|i| x.select0(i).unwrap()).collect();
        let restacked = Tensor::stack0(&parts).unwrap();
        assert_eq!(restacked.shape(), x.shape());
        assert_eq!(restacked.data(), x.data());
    }

    #[test]
    fn select_backward_scatters() {
        let x = p(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let loss = x.select0(1).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_and_embed() {
        let x = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let d = x.diagonal().unwrap();
        assert_eq!(d.data(), &[1.0, 4.0]);
        assert_eq!(x.trace().unwrap().item(), 5.0);
        let m = d.diag_embed().unwrap();
        assert_eq!(m.data(), &[1.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn clamp_gradient_pass_through_inside_only() {
        let x = p(&[-0.5, 0.5, 1.5], &[3]);
        let loss = x.clamp(0.0, 1.0).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn div_backward() {
        let a = p(&[6.0], &[1]);
        let b = p(&[2.0], &[1]);
        let loss = a.div(&b).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.5]);
        assert_eq!(b.grad().unwrap(), vec![-1.5]);
    }

    #[test]
    fn forward_is_reproducible() {
        let run = || {
            let a = t(&[0.3, -1.2, 2.5, 0.0, 1.0, -0.7], &[2, 3]);
            let b = t(&[1.5, 0.25, -2.0], &[3]);
            a.mul(&b)
                .unwrap()
                .exp()
                .unwrap()
                .sum_all()
                .unwrap()
                .item()
                .to_bits()
        };
        assert_eq!(run(), run());
    }
}
