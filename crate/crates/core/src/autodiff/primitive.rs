//! Differentiable primitives: forward evaluation and vector-Jacobian products.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::GraphError;

/// A graph primitive together with its static parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Op<T> {
    /// `[m, k] x [k, n] -> [m, n]`
    MatMul,
    /// Elementwise sum; the right operand may also be a row vector
    /// broadcast over the last axis of the left operand.
    Add,
    Sub,
    Mul,
    Scale(T),
    /// Tensor times a one-element tensor.
    ScaleBy,
    Recip,
    Sum,
    Reshape(Vec<usize>),
    Transpose,
    ConcatRows,
    /// Stride 1, zero "same" padding, odd kernel. Inputs: image
    /// `[ci, h, w]`, kernel `[co, ci, kh, kw]`, bias `[co]`.
    Conv2d,
    Relu,
    Softplus,
    /// First derivative of softplus (the logistic sigmoid). Its own
    /// derivative is the softplus second derivative.
    SoftplusPrime,
    /// Along the last axis.
    L2Normalize,
    /// Along the last axis.
    Softmax,
    /// Logits `[c]` against a class index.
    CrossEntropy(usize),
    /// Mean over the rows of `[n, e]`.
    MeanPool,
    SquaredL2,
    /// Anisotropic squared total variation of `[h, w]` or `[c, h, w]`.
    TotalVariation,
}

/// Canonical name of every primitive, in declaration order.
pub const PRIMITIVE_NAMES: [&str; 21] = [
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "scale_by",
    "recip",
    "sum",
    "reshape",
    "transpose",
    "concat_rows",
    "conv2d",
    "relu",
    "softplus",
    "softplus_prime",
    "l2_normalize",
    "softmax",
    "cross_entropy",
    "mean_pool",
    "squared_l2",
    "total_variation",
];

/// Parameters passed alongside a primitive name.
#[derive(Debug, Clone, PartialEq)]
pub enum OpParams<T> {
    None,
    Factor(T),
    Target(usize),
    Shape(Vec<usize>),
}

impl<T: Scalar> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::ScaleBy => "scale_by",
            Op::Recip => "recip",
            Op::Sum => "sum",
            Op::Reshape(_) => "reshape",
            Op::Transpose => "transpose",
            Op::ConcatRows => "concat_rows",
            Op::Conv2d => "conv2d",
            Op::Relu => "relu",
            Op::Softplus => "softplus",
            Op::SoftplusPrime => "softplus_prime",
            Op::L2Normalize => "l2_normalize",
            Op::Softmax => "softmax",
            Op::CrossEntropy(_) => "cross_entropy",
            Op::MeanPool => "mean_pool",
            Op::SquaredL2 => "squared_l2",
            Op::TotalVariation => "total_variation",
        }
    }

    /// Resolves a primitive by name. Hyphens and underscores are
    /// interchangeable, and the long descriptive names are accepted.
    pub fn parse(name: &str, params: OpParams<T>) -> Result<Self, GraphError> {
        let key = name.trim().to_ascii_lowercase().replace('-', "_");
        let missing = |p: &'static str| GraphError::MissingParam { primitive: p };
        let op = match key.as_str() {
            "matmul" => Op::MatMul,
            "add" => Op::Add,
            "sub" => Op::Sub,
            "mul" => Op::Mul,
            "scale" => match params {
                OpParams::Factor(f) => Op::Scale(f),
                _ => return Err(missing("scale")),
            },
            "scale_by" => Op::ScaleBy,
            "recip" => Op::Recip,
            "sum" => Op::Sum,
            "reshape" => match params {
                OpParams::Shape(s) => Op::Reshape(s),
                _ => return Err(missing("reshape")),
            },
            "transpose" => Op::Transpose,
            "concat_rows" => Op::ConcatRows,
            "conv2d" => Op::Conv2d,
            "relu" => Op::Relu,
            "softplus" => Op::Softplus,
            "softplus_prime" | "sigmoid" => Op::SoftplusPrime,
            "l2_normalize" => Op::L2Normalize,
            "softmax" => Op::Softmax,
            "cross_entropy" | "cross_entropy_with_index_target" => match params {
                OpParams::Target(t) => Op::CrossEntropy(t),
                _ => return Err(missing("cross_entropy")),
            },
            "mean_pool" => Op::MeanPool,
            "squared_l2" | "squared_l2_distance" => Op::SquaredL2,
            "total_variation" => Op::TotalVariation,
            _ => return Err(GraphError::UnknownPrimitive(name.to_string())),
        };
        Ok(op)
    }

    pub fn arity(&self) -> usize {
        match self {
            Op::MatMul | Op::Add | Op::Sub | Op::Mul | Op::ScaleBy | Op::ConcatRows => 2,
            Op::SquaredL2 => 2,
            Op::Conv2d => 3,
            _ => 1,
        }
    }

    pub fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>, GraphError> {
        let name = self.name();
        if inputs.len() != self.arity() {
            return Err(GraphError::Arity {
                primitive: name,
                expected: self.arity(),
                got: inputs.len(),
            });
        }
        let x = inputs[0];
        let shape_err = |lhs: &Tensor<T>, rhs: &Tensor<T>| GraphError::Shape {
            primitive: name,
            lhs: lhs.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        };
        let invalid = |reason: String| GraphError::InvalidInput {
            primitive: name,
            shape: x.shape().to_vec(),
            reason,
        };
        let out = match self {
            Op::MatMul => {
                let b = inputs[1];
                let (xs, bs) = (x.shape(), b.shape());
                if xs.len() != 2 || bs.len() != 2 || xs[1] != bs[0] {
                    return Err(shape_err(x, b));
                }
                let out = matmul(x.data(), b.data(), xs[0], xs[1], bs[1]);
                Tensor::new(vec![xs[0], bs[1]], out).expect("matmul shape")
            }
            Op::Add => {
                let b = inputs[1];
                if x.shape() == b.shape() {
                    x.add(b).expect("same shape")
                } else if is_row_broadcast(x.shape(), b.shape()) {
                    let n = b.len();
                    let mut out = x.clone();
                    for row in out.data_mut().chunks_mut(n) {
                        for (o, &v) in row.iter_mut().zip(b.data()) {
                            *o += v;
                        }
                    }
                    out
                } else {
                    return Err(shape_err(x, b));
                }
            }
            Op::Sub | Op::Mul | Op::SquaredL2 => {
                let b = inputs[1];
                if x.shape() != b.shape() {
                    return Err(shape_err(x, b));
                }
                match self {
                    Op::Sub => x.sub(b).expect("same shape"),
                    Op::Mul => x.zip_map(b, |p, q| p * q).expect("same shape"),
                    _ => Tensor::scalar(
                        x.data()
                            .iter()
                            .zip(b.data())
                            .map(|(&p, &q)| (p - q) * (p - q))
                            .sum(),
                    ),
                }
            }
            Op::Scale(f) => x.scale(*f),
            Op::ScaleBy => {
                let s = inputs[1];
                if s.len() != 1 {
                    return Err(shape_err(x, s));
                }
                x.scale(s.item())
            }
            Op::Recip => {
                if x.data().iter().any(|v| *v == T::zero()) {
                    return Err(invalid("division by zero".into()));
                }
                x.map(|v| v.recip())
            }
            Op::Sum => Tensor::scalar(x.sum()),
            Op::Reshape(shape) => x.reshape(shape).map_err(|_| GraphError::Shape {
                primitive: name,
                lhs: x.shape().to_vec(),
                rhs: shape.clone(),
            })?,
            Op::Transpose => {
                if x.ndim() != 2 {
                    return Err(invalid("expected a matrix".into()));
                }
                let (m, n) = (x.shape()[0], x.shape()[1]);
                transpose(x.data(), m, n, vec![n, m])
            }
            Op::ConcatRows => {
                let b = inputs[1];
                if x.ndim() != 2 || b.ndim() != 2 || x.shape()[1] != b.shape()[1] {
                    return Err(shape_err(x, b));
                }
                let mut data = x.data().to_vec();
                data.extend_from_slice(b.data());
                Tensor::new(vec![x.shape()[0] + b.shape()[0], x.shape()[1]], data)
                    .expect("concat shape")
            }
            Op::Conv2d => conv2d_forward(x, inputs[1], inputs[2])?,
            Op::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
            Op::Softplus => x.map(softplus),
            Op::SoftplusPrime => x.map(sigmoid),
            Op::L2Normalize => {
                let n = last_dim(x);
                let mut out = x.clone();
                for row in out.data_mut().chunks_mut(n) {
                    let norm = row_norm(row);
                    for v in row.iter_mut() {
                        *v /= norm;
                    }
                }
                out
            }
            Op::Softmax => {
                let n = last_dim(x);
                let mut out = x.clone();
                for row in out.data_mut().chunks_mut(n) {
                    softmax_in_place(row);
                }
                out
            }
            Op::CrossEntropy(target) => {
                if x.ndim() != 1 {
                    return Err(invalid("logits must be a vector".into()));
                }
                if *target >= x.len() {
                    return Err(invalid(format!(
                        "target {target} out of range for {} classes",
                        x.len()
                    )));
                }
                Tensor::scalar(log_sum_exp(x.data()) - x.data()[*target])
            }
            Op::MeanPool => {
                if x.ndim() != 2 {
                    return Err(invalid("expected [rows, features]".into()));
                }
                let (rows, cols) = (x.shape()[0], x.shape()[1]);
                let mut out = vec![T::zero(); cols];
                for row in x.data().chunks(cols) {
                    for (o, &v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                let inv = T::one() / T::of(rows as f64);
                Tensor::from_vec(out.into_iter().map(|v| v * inv).collect())
            }
            Op::TotalVariation => {
                let (c, h, w) = image_dims(x).ok_or_else(|| invalid("expected [h, w] or [c, h, w]".into()))?;
                Tensor::scalar(total_variation(x.data(), c, h, w))
            }
        };
        Ok(out)
    }

    /// Vector-Jacobian products for each input; `None` where `needs[i]`
    /// is false.
    pub fn vjp(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>> {
        let x = inputs[0];
        let g = grad.data();
        let mut res: Vec<Option<Tensor<T>>> = vec![None; inputs.len()];
        let like = |t: &Tensor<T>, data: Vec<T>| Tensor::new(t.shape().to_vec(), data).expect("vjp shape");
        match self {
            Op::MatMul => {
                let b = inputs[1];
                let (m, k, n) = (x.shape()[0], x.shape()[1], b.shape()[1]);
                if needs[0] {
                    let mut ga = vec![T::zero(); m * k];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let bp = &b.data()[p * n..(p + 1) * n];
                            ga[i * k + p] = dot(gi, bp);
                        }
                    }
                    res[0] = Some(like(x, ga));
                }
                if needs[1] {
                    let mut gb = vec![T::zero(); k * n];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a = x.data()[i * k + p];
                            if a != T::zero() {
                                axpy_slice(&mut gb[p * n..(p + 1) * n], a, gi);
                            }
                        }
                    }
                    res[1] = Some(like(b, gb));
                }
            }
            Op::Add => {
                let b = inputs[1];
                if needs[0] {
                    res[0] = Some(grad.clone());
                }
                if needs[1] {
                    if x.shape() == b.shape() {
                        res[1] = Some(grad.clone());
                    } else {
                        let n = b.len();
                        let mut gb = vec![T::zero(); n];
                        for row in g.chunks(n) {
                            for (o, &v) in gb.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        res[1] = Some(like(b, gb));
                    }
                }
            }
            Op::Sub => {
                if needs[0] {
                    res[0] = Some(grad.clone());
                }
                if needs[1] {
                    res[1] = Some(grad.scale(-T::one()));
                }
            }
            Op::Mul => {
                let b = inputs[1];
                if needs[0] {
                    res[0] = Some(grad.zip_map(b, |p, q| p * q).expect("mul vjp"));
                }
                if needs[1] {
                    res[1] = Some(grad.zip_map(x, |p, q| p * q).expect("mul vjp"));
                }
            }
            Op::SquaredL2 => {
                let b = inputs[1];
                let two_g = T::of(2.0) * grad.item();
                let diff = x.sub(b).expect("same shape");
                if needs[0] {
                    res[0] = Some(diff.scale(two_g));
                }
                if needs[1] {
                    res[1] = Some(diff.scale(-two_g));
                }
            }
            Op::Scale(f) => res[0] = Some(grad.scale(*f)),
            Op::ScaleBy => {
                let s = inputs[1];
                if needs[0] {
                    res[0] = Some(grad.scale(s.item()));
                }
                if needs[1] {
                    let v = dot(g, x.data());
                    res[1] = Some(like(s, vec![v]));
                }
            }
            Op::Recip => {
                res[0] = Some(grad.zip_map(output, |gv, y| -gv * y * y).expect("recip vjp"));
            }
            Op::Sum => res[0] = Some(Tensor::full(x.shape(), grad.item())),
            Op::Reshape(_) => res[0] = Some(like(x, g.to_vec())),
            Op::Transpose => {
                let (m, n) = (x.shape()[0], x.shape()[1]);
                res[0] = Some(transpose(g, n, m, vec![m, n]));
            }
            Op::ConcatRows => {
                let split = x.len();
                if needs[0] {
                    res[0] = Some(like(x, g[..split].to_vec()));
                }
                if needs[1] {
                    res[1] = Some(like(inputs[1], g[split..].to_vec()));
                }
            }
            Op::Conv2d => {
                let (gx, gk, gb) = conv2d_vjp(x, inputs[1], grad, needs);
                res[0] = gx;
                res[1] = gk;
                res[2] = gb;
            }
            Op::Relu => {
                // subgradient 0 at the kink
                res[0] = Some(
                    grad.zip_map(x, |gv, v| if v > T::zero() { gv } else { T::zero() })
                        .expect("relu vjp"),
                );
            }
            Op::Softplus => {
                res[0] = Some(grad.zip_map(x, |gv, v| gv * sigmoid(v)).expect("softplus vjp"));
            }
            Op::SoftplusPrime => {
                res[0] = Some(
                    grad.zip_map(x, |gv, v| gv * softplus_second(v))
                        .expect("softplus' vjp"),
                );
            }
            Op::L2Normalize => {
                let n = last_dim(x);
                let mut gx = vec![T::zero(); x.len()];
                for ((xr, yr), (gr, outr)) in x
                    .data()
                    .chunks(n)
                    .zip(output.data().chunks(n))
                    .zip(g.chunks(n).zip(gx.chunks_mut(n)))
                {
                    let norm = row_norm(xr);
                    let proj = dot(yr, gr);
                    for ((o, &gv), &yv) in outr.iter_mut().zip(gr).zip(yr) {
                        *o = (gv - yv * proj) / norm;
                    }
                }
                res[0] = Some(like(x, gx));
            }
            Op::Softmax => {
                let n = last_dim(x);
                let mut gx = vec![T::zero(); x.len()];
                for ((yr, gr), outr) in output.data().chunks(n).zip(g.chunks(n)).zip(gx.chunks_mut(n)) {
                    let proj = dot(yr, gr);
                    for ((o, &gv), &yv) in outr.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - proj);
                    }
                }
                res[0] = Some(like(x, gx));
            }
            Op::CrossEntropy(target) => {
                let coef = softmax_minus_onehot(x.data(), *target);
                let gv = grad.item();
                res[0] = Some(like(x, coef.into_iter().map(|c| c * gv).collect()));
            }
            Op::MeanPool => {
                let rows = x.shape()[0];
                let inv = T::one() / T::of(rows as f64);
                let row: Vec<T> = g.iter().map(|&v| v * inv).collect();
                let data = (0..rows).flat_map(|_| row.iter().copied()).collect();
                res[0] = Some(like(x, data));
            }
            Op::TotalVariation => {
                let (c, h, w) = image_dims(x).expect("checked in forward");
                let mut gx = vec![T::zero(); x.len()];
                total_variation_grad(x.data(), c, h, w, grad.item(), &mut gx);
                res[0] = Some(like(x, gx));
            }
        }
        for (r, &need) in res.iter_mut().zip(needs) {
            if !need {
                *r = None;
            }
        }
        res
    }
}

fn is_row_broadcast(a: &[usize], b: &[usize]) -> bool {
    b.len() == 1 && a.len() >= 2 && a[a.len() - 1] == b[0]
}

fn last_dim<T: Scalar>(x: &Tensor<T>) -> usize {
    x.shape().last().copied().unwrap_or(1)
}

fn image_dims<T: Scalar>(x: &Tensor<T>) -> Option<(usize, usize, usize)> {
    match *x.shape() {
        [h, w] => Some((1, h, w)),
        [c, h, w] => Some((c, h, w)),
        _ => None,
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&p, &q) in a.iter().zip(b) {
        acc += p * q;
    }
    acc
}

#[inline]
fn axpy_slice<T: Scalar>(out: &mut [T], a: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

fn row_norm<T: Scalar>(row: &[T]) -> T {
    // keeps all-zero rows finite
    dot(row, row).sqrt().max(T::min_positive_value())
}

pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let v = a[i * k + p];
            if v != T::zero() {
                axpy_slice(row, v, &b[p * n..(p + 1) * n]);
            }
        }
    }
    out
}

fn transpose<T: Scalar>(data: &[T], m: usize, n: usize, shape: Vec<usize>) -> Tensor<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = data[i * n + j];
        }
    }
    Tensor::new(shape, out).expect("transpose shape")
}

pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus_second<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * sigmoid(-x)
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    out
}

fn log_sum_exp<T: Scalar>(x: &[T]) -> T {
    let max = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    max + x.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

/// `softmax(x) - onehot(target)`, with the target component accumulated
/// from the other classes so that its sign survives when `p[target]`
/// rounds to one.
pub(crate) fn softmax_minus_onehot<T: Scalar>(x: &[T], target: usize) -> Vec<T> {
    let mut p = softmax(x);
    let rest: T = p
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target)
        .map(|(_, &v)| v)
        .sum();
    p[target] = -rest;
    p
}

fn total_variation<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> T {
    let mut acc = T::zero();
    for ch in 0..c {
        let img = &x[ch * h * w..(ch + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                let v = img[i * w + j];
                if i + 1 < h {
                    let d = img[(i + 1) * w + j] - v;
                    acc += d * d;
                }
                if j + 1 < w {
                    let d = img[i * w + j + 1] - v;
                    acc += d * d;
                }
            }
        }
    }
    acc
}

fn total_variation_grad<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, g: T, out: &mut [T]) {
    let two_g = T::of(2.0) * g;
    for ch in 0..c {
        let off = ch * h * w;
        for i in 0..h {
            for j in 0..w {
                let p = off + i * w + j;
                if i + 1 < h {
                    let q = p + w;
                    let d = two_g * (x[q] - x[p]);
                    out[q] += d;
                    out[p] -= d;
                }
                if j + 1 < w {
                    let q = p + 1;
                    let d = two_g * (x[q] - x[p]);
                    out[q] += d;
                    out[p] -= d;
                }
            }
        }
    }
}

struct ConvDims {
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

fn conv_dims<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, b: &Tensor<T>) -> Result<ConvDims, GraphError> {
    let err = || GraphError::Shape {
        primitive: "conv2d",
        lhs: x.shape().to_vec(),
        rhs: k.shape().to_vec(),
    };
    let (&[ci, h, w], &[co, kci, kh, kw]) = (x.shape(), k.shape()) else {
        return Err(err());
    };
    if kci != ci || kh % 2 == 0 || kw % 2 == 0 {
        return Err(err());
    }
    if b.shape() != [co] {
        return Err(GraphError::Shape {
            primitive: "conv2d",
            lhs: k.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(ConvDims { ci, co, h, w, kh, kw })
}

/// Output rows/cols range for a kernel offset under "same" padding.
#[inline]
fn valid_range(len: usize, offset: usize, pad: usize) -> (usize, usize) {
    // source index = out + offset - pad must lie in [0, len)
    let lo = pad.saturating_sub(offset);
    let hi = (len + pad).saturating_sub(offset).min(len);
    (lo, hi.max(lo))
}

fn conv2d_forward<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, GraphError> {
    let d = conv_dims(x, k, b)?;
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    let plane = d.h * d.w;
    let mut out = vec![T::zero(); d.co * plane];
    let (xd, kd) = (x.data(), k.data());
    for co in 0..d.co {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.iter_mut().for_each(|v| *v = b.data()[co]);
        for ci in 0..d.ci {
            let src = &xd[ci * plane..(ci + 1) * plane];
            for dy in 0..d.kh {
                let (y0, y1) = valid_range(d.h, dy, ph);
                for dx in 0..d.kw {
                    let wv = kd[((co * d.ci + ci) * d.kh + dy) * d.kw + dx];
                    if wv == T::zero() {
                        continue;
                    }
                    let (x0, x1) = valid_range(d.w, dx, pw);
                    for y in y0..y1 {
                        let sy = y + dy - ph;
                        let orow = &mut o[y * d.w + x0..y * d.w + x1];
                        let srow = &src[sy * d.w + x0 + dx - pw..sy * d.w + x1 + dx - pw];
                        axpy_slice(orow, wv, srow);
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![d.co, d.h, d.w], out).expect("conv shape"))
}

type ConvGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

fn conv2d_vjp<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> ConvGrads<T> {
    let (ci_n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co_n, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let (ph, pw) = (kh / 2, kw / 2);
    let plane = h * w;
    let (xd, kd, g) = (x.data(), k.data(), grad.data());
    let mut gx = needs[0].then(|| vec![T::zero(); x.len()]);
    let mut gk = needs[1].then(|| vec![T::zero(); k.len()]);
    for co in 0..co_n {
        let go = &g[co * plane..(co + 1) * plane];
        for ci in 0..ci_n {
            let src = &xd[ci * plane..(ci + 1) * plane];
            for dy in 0..kh {
                let (y0, y1) = valid_range(h, dy, ph);
                for dx in 0..kw {
                    let (x0, x1) = valid_range(w, dx, pw);
                    let kidx = ((co * ci_n + ci) * kh + dy) * kw + dx;
                    let wv = kd[kidx];
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let sy = y + dy - ph;
                        let grow = &go[y * w + x0..y * w + x1];
                        let s0 = sy * w + x0 + dx - pw;
                        if gk.is_some() {
                            acc += dot(grow, &src[s0..s0 + grow.len()]);
                        }
                        if let Some(gx) = gx.as_mut() {
                            let dst = &mut gx[ci * plane + s0..ci * plane + s0 + grow.len()];
                            axpy_slice(dst, wv, grow);
                        }
                    }
                    if let Some(gk) = gk.as_mut() {
                        gk[kidx] += acc;
                    }
                }
            }
        }
    }
    let gb = needs[2].then(|| Tensor::from_fn(&[co_n], |co| g[co * plane..(co + 1) * plane].iter().copied().sum()));
    (
        gx.map(|d| Tensor::new(x.shape().to_vec(), d).expect("conv vjp")),
        gk.map(|d| Tensor::new(k.shape().to_vec(), d).expect("conv vjp")),
        gb,
    )
}
