//! Forward values and vector-Jacobian products for every primitive.

use crate::error::{Error, Result};
use crate::tensor::{Shape, TensorValue};

/// Primitive operation kinds recordable on a [`Tape`](super::Tape).
///
/// Binary elementwise kinds require identical shapes; the only broadcast is
/// [`OpKind::AddBias`] (and the per-row scale of [`OpKind::ScaleRows`]).
/// Concatenation and slicing act on the last axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    /// `[m,n] x [n] -> [m]`
    MatVec,
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul,
    Add,
    Subtract,
    Hadamard,
    Divide,
    Scale(f64),
    AddScalar(f64),
    Sigmoid,
    /// Overflow-safe `max(x,0) + ln(1 + e^{-|x|})`.
    Softplus,
    Exp,
    Log,
    Square,
    /// Gradient passes only where `lo <= x <= hi`.
    Clamp { lo: f64, hi: f64 },
    /// Sum of all elements to a scalar.
    ReduceSum,
    /// `[r,c] -> [r]`
    RowSum,
    /// Inner product of two same-shape tensors, to a scalar.
    Dot,
    /// `[r,c] + [c]` broadcast over rows.
    AddBias,
    /// `[r,c] * [r]` broadcast over columns.
    ScaleRows,
    Concat,
    /// Columns `start..end` of the last axis.
    Slice { start: usize, end: usize },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatVec => "matvec",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Subtract => "subtract",
            OpKind::Hadamard => "hadamard",
            OpKind::Divide => "divide",
            OpKind::Scale(_) => "scalar-scale",
            OpKind::AddScalar(_) => "add-scalar",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softplus => "softplus",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Square => "square",
            OpKind::Clamp { .. } => "clamp",
            OpKind::ReduceSum => "reduce-sum",
            OpKind::RowSum => "row-sum",
            OpKind::Dot => "dot",
            OpKind::AddBias => "broadcast-add-bias",
            OpKind::ScaleRows => "scale-rows",
            OpKind::Concat => "concat",
            OpKind::Slice { .. } => "slice",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::MatVec
            | OpKind::MatMul
            | OpKind::Add
            | OpKind::Subtract
            | OpKind::Hadamard
            | OpKind::Divide
            | OpKind::Dot
            | OpKind::AddBias
            | OpKind::ScaleRows => Some(2),
            OpKind::Concat => None,
            _ => Some(1),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn mismatch(op: OpKind, a: &TensorValue, b: &TensorValue) -> Error {
    Error::ShapeMismatch {
        op: op.name(),
        left: a.shape().clone(),
        right: b.shape().clone(),
    }
}

fn matrix_dims(op: OpKind, a: &TensorValue, b: &TensorValue) -> Result<(usize, usize)> {
    a.shape().as_matrix().ok_or_else(|| mismatch(op, a, b))
}

/// `C = op(A) * op(B)` through `matrixmultiply`, where `op` is an optional
/// transpose. `a` is logically `m x k` and `b` is `k x n` after transposition.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    assert!(a.len() >= m * k && b.len() >= k * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold at least m*k and k*n elements and `c` holds
    // m*n, so every strided access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

fn zip_map(a: &TensorValue, b: &TensorValue, f: impl Fn(f64, f64) -> f64) -> TensorValue {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    TensorValue::from_parts(a.shape().clone(), data)
}

/// Output shape check plus forward evaluation.
pub fn forward(op: OpKind, inputs: &[&TensorValue]) -> Result<TensorValue> {
    if let Some(n) = op.arity() {
        if inputs.len() != n {
            return Err(Error::Invalid(format!(
                "{} takes {n} inputs, got {}",
                op.name(),
                inputs.len()
            )));
        }
    } else if inputs.is_empty() {
        return Err(Error::Invalid(format!("{} needs at least one input", op.name())));
    }

    let out = match op {
        OpKind::MatVec => {
            let (a, x) = (inputs[0], inputs[1]);
            let (m, n) = matrix_dims(op, a, x)?;
            if x.shape().rank() != 1 || x.len() != n {
                return Err(mismatch(op, a, x));
            }
            let y = gemm(m, n, 1, a.data(), false, x.data(), false);
            TensorValue::from_parts(Shape::vector(m), y)
        }
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = matrix_dims(op, a, b)?;
            let (k2, n) = b.shape().as_matrix().ok_or_else(|| mismatch(op, a, b))?;
            if k != k2 {
                return Err(mismatch(op, a, b));
            }
            TensorValue::from_parts(Shape::matrix(m, n), gemm(m, k, n, a.data(), false, b.data(), false))
        }
        OpKind::Add | OpKind::Subtract | OpKind::Hadamard | OpKind::Divide => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(op, a, b));
            }
            match op {
                OpKind::Add => zip_map(a, b, |x, y| x + y),
                OpKind::Subtract => zip_map(a, b, |x, y| x - y),
                OpKind::Hadamard => zip_map(a, b, |x, y| x * y),
                _ => zip_map(a, b, |x, y| x / y),
            }
        }
        OpKind::Scale(c) => inputs[0].map(|x| c * x),
        OpKind::AddScalar(c) => inputs[0].map(|x| x + c),
        OpKind::Sigmoid => inputs[0].map(sigmoid),
        OpKind::Softplus => inputs[0].map(softplus),
        OpKind::Exp => inputs[0].map(f64::exp),
        OpKind::Log => inputs[0].map(f64::ln),
        OpKind::Square => inputs[0].map(|x| x * x),
        OpKind::Clamp { lo, hi } => inputs[0].map(|x| x.clamp(lo, hi)),
        OpKind::ReduceSum => TensorValue::scalar(inputs[0].data().iter().sum()),
        OpKind::RowSum => {
            let x = inputs[0];
            let (r, c) = x
                .shape()
                .as_matrix()
                .ok_or_else(|| mismatch(op, x, x))?;
            let data = (0..r).map(|i| x.data()[i * c..(i + 1) * c].iter().sum()).collect();
            TensorValue::from_parts(Shape::vector(r), data)
        }
        OpKind::Dot => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(op, a, b));
            }
            TensorValue::scalar(a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum())
        }
        OpKind::AddBias => {
            let (x, b) = (inputs[0], inputs[1]);
            let (_, c) = matrix_dims(op, x, b)?;
            if b.shape().rank() != 1 || b.len() != c {
                return Err(mismatch(op, x, b));
            }
            let data = x
                .data()
                .chunks_exact(c)
                .flat_map(|row| row.iter().zip(b.data()).map(|(u, v)| u + v))
                .collect();
            TensorValue::from_parts(x.shape().clone(), data)
        }
        OpKind::ScaleRows => {
            let (x, s) = (inputs[0], inputs[1]);
            let (r, c) = matrix_dims(op, x, s)?;
            if s.shape().rank() != 1 || s.len() != r {
                return Err(mismatch(op, x, s));
            }
            let data = x
                .data()
                .chunks_exact(c)
                .zip(s.data())
                .flat_map(|(row, &k)| row.iter().map(move |u| u * k))
                .collect();
            TensorValue::from_parts(x.shape().clone(), data)
        }
        OpKind::Concat => concat(inputs)?,
        OpKind::Slice { start, end } => {
            let x = inputs[0];
            let c = x.shape().last();
            if x.shape().rank() == 0 || x.shape().rank() > 2 || start >= end || end > c {
                return Err(Error::ShapeMismatch {
                    op: op.name(),
                    left: x.shape().clone(),
                    right: Shape::vector(end.saturating_sub(start)),
                });
            }
            let w = end - start;
            let data: Vec<f64> = x
                .data()
                .chunks_exact(c)
                .flat_map(|row| row[start..end].iter().copied())
                .collect();
            let shape = if x.shape().rank() == 1 {
                Shape::vector(w)
            } else {
                Shape::matrix(data.len() / w, w)
            };
            TensorValue::from_parts(shape, data)
        }
    };
    Ok(out)
}

fn concat(inputs: &[&TensorValue]) -> Result<TensorValue> {
    let first = inputs[0];
    let rank = first.shape().rank();
    let rows = match rank {
        1 => 1,
        2 => first.shape().dims()[0],
        _ => return Err(mismatch(OpKind::Concat, first, first)),
    };
    for t in &inputs[1..] {
        let ok = t.shape().rank() == rank && (rank == 1 || t.shape().dims()[0] == rows);
        if !ok {
            return Err(mismatch(OpKind::Concat, first, t));
        }
    }
    let width: usize = inputs.iter().map(|t| t.shape().last()).sum();
    let mut data = Vec::with_capacity(rows * width);
    for i in 0..rows {
        for t in inputs {
            let c = t.shape().last();
            data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
    }
    let shape = if rank == 1 {
        Shape::vector(width)
    } else {
        Shape::matrix(rows, width)
    };
    Ok(TensorValue::from_parts(shape, data))
}

/// Adjoints of each input given the output adjoint `g`. Entries whose
/// `needs` flag is false come back as `None`.
pub fn backward(
    op: OpKind,
    inputs: &[&TensorValue],
    output: &TensorValue,
    g: &TensorValue,
    needs: &[bool],
) -> Vec<Option<TensorValue>> {
    let mut out: Vec<Option<TensorValue>> = vec![None; inputs.len()];
    let unary = |f: &dyn Fn(usize) -> f64| {
        let data = (0..g.len()).map(f).collect();
        Some(TensorValue::from_parts(inputs[0].shape().clone(), data))
    };
    let gd = g.data();
    match op {
        OpKind::MatVec => {
            let (a, x) = (inputs[0], inputs[1]);
            let (m, n) = a.shape().as_matrix().expect("checked in forward");
            if needs[0] {
                out[0] = Some(TensorValue::from_parts(a.shape().clone(), gemm(m, 1, n, gd, false, x.data(), false)));
            }
            if needs[1] {
                out[1] = Some(TensorValue::from_parts(x.shape().clone(), gemm(n, m, 1, a.data(), true, gd, false)));
            }
        }
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = a.shape().as_matrix().expect("checked in forward");
            let (_, n) = b.shape().as_matrix().expect("checked in forward");
            if needs[0] {
                out[0] = Some(TensorValue::from_parts(a.shape().clone(), gemm(m, n, k, gd, false, b.data(), true)));
            }
            if needs[1] {
                out[1] = Some(TensorValue::from_parts(b.shape().clone(), gemm(k, m, n, a.data(), true, gd, false)));
            }
        }
        OpKind::Add => {
            out[0] = needs[0].then(|| g.clone());
            out[1] = needs[1].then(|| g.clone());
        }
        OpKind::Subtract => {
            out[0] = needs[0].then(|| g.clone());
            out[1] = needs[1].then(|| g.map(|x| -x));
        }
        OpKind::Hadamard => {
            let (a, b) = (inputs[0], inputs[1]);
            out[0] = needs[0].then(|| zip_map(g, b, |u, v| u * v));
            out[1] = needs[1].then(|| zip_map(g, a, |u, v| u * v));
        }
        OpKind::Divide => {
            let (a, b) = (inputs[0], inputs[1]);
            out[0] = needs[0].then(|| zip_map(g, b, |u, v| u / v));
            if needs[1] {
                let (ad, bd) = (a.data(), b.data());
                let data = (0..gd.len()).map(|i| -gd[i] * ad[i] / (bd[i] * bd[i])).collect();
                out[1] = Some(TensorValue::from_parts(b.shape().clone(), data));
            }
        }
        OpKind::Scale(c) => out[0] = Some(g.map(|u| c * u)),
        OpKind::AddScalar(_) => out[0] = Some(g.clone()),
        OpKind::Sigmoid => {
            let y = output.data();
            out[0] = unary(&|i| gd[i] * y[i] * (1.0 - y[i]));
        }
        OpKind::Softplus => {
            let x = inputs[0].data();
            out[0] = unary(&|i| gd[i] * sigmoid(x[i]));
        }
        OpKind::Exp => {
            let y = output.data();
            out[0] = unary(&|i| gd[i] * y[i]);
        }
        OpKind::Log => {
            let x = inputs[0].data();
            out[0] = unary(&|i| gd[i] / x[i]);
        }
        OpKind::Square => {
            let x = inputs[0].data();
            out[0] = unary(&|i| 2.0 * x[i] * gd[i]);
        }
        OpKind::Clamp { lo, hi } => {
            let x = inputs[0].data();
            out[0] = unary(&|i| if x[i] >= lo && x[i] <= hi { gd[i] } else { 0.0 });
        }
        OpKind::ReduceSum => {
            out[0] = Some(TensorValue::filled(inputs[0].shape().clone(), gd[0]));
        }
        OpKind::RowSum => {
            let c = inputs[0].shape().last();
            let data = (0..inputs[0].len()).map(|i| gd[i / c]).collect();
            out[0] = Some(TensorValue::from_parts(inputs[0].shape().clone(), data));
        }
        OpKind::Dot => {
            let (a, b) = (inputs[0], inputs[1]);
            out[0] = needs[0].then(|| b.map(|v| gd[0] * v));
            out[1] = needs[1].then(|| a.map(|v| gd[0] * v));
        }
        OpKind::AddBias => {
            let b = inputs[1];
            out[0] = needs[0].then(|| g.clone());
            if needs[1] {
                let c = b.len();
                let mut db = vec![0.0; c];
                for row in gd.chunks_exact(c) {
                    for (acc, u) in db.iter_mut().zip(row) {
                        *acc += u;
                    }
                }
                out[1] = Some(TensorValue::from_parts(b.shape().clone(), db));
            }
        }
        OpKind::ScaleRows => {
            let (x, s) = (inputs[0], inputs[1]);
            let c = x.shape().last();
            if needs[0] {
                let data = gd
                    .chunks_exact(c)
                    .zip(s.data())
                    .flat_map(|(row, &k)| row.iter().map(move |u| u * k))
                    .collect();
                out[0] = Some(TensorValue::from_parts(x.shape().clone(), data));
            }
            if needs[1] {
                let data = gd
                    .chunks_exact(c)
                    .zip(x.data().chunks_exact(c))
                    .map(|(gr, xr)| gr.iter().zip(xr).map(|(u, v)| u * v).sum())
                    .collect();
                out[1] = Some(TensorValue::from_parts(s.shape().clone(), data));
            }
        }
        OpKind::Concat => {
            let width = g.shape().last();
            let rows = g.len() / width;
            let mut offset = 0;
            for (k, t) in inputs.iter().enumerate() {
                let c = t.shape().last();
                if needs[k] {
                    let mut data = Vec::with_capacity(t.len());
                    for i in 0..rows {
                        data.extend_from_slice(&gd[i * width + offset..i * width + offset + c]);
                    }
                    out[k] = Some(TensorValue::from_parts(t.shape().clone(), data));
                }
                offset += c;
            }
        }
        OpKind::Slice { start, end } => {
            let x = inputs[0];
            let c = x.shape().last();
            let w = end - start;
            let mut data = vec![0.0; x.len()];
            for (i, row) in gd.chunks_exact(w).enumerate() {
                data[i * c + start..i * c + end].copy_from_slice(row);
            }
            out[0] = Some(TensorValue::from_parts(x.shape().clone(), data));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_overflow_safe() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
    }

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        assert_eq!(gemm(2, 2, 2, &a, false, &b, false), vec![19.0, 22.0, 43.0, 50.0]);
        // A^T B
        assert_eq!(gemm(2, 2, 2, &a, true, &b, false), vec![26.0, 30.0, 38.0, 44.0]);
        // A B^T
        assert_eq!(gemm(2, 2, 2, &a, false, &b, true), vec![17.0, 23.0, 39.0, 53.0]);
    }
}
