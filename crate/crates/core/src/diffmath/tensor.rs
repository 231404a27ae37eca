//! Dense row-major 64-bit float tensors and the forward math for every
//! primitive. These functions are pure; the tape records them and reuses
//! them both when building the graph and when replaying it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense multi-dimensional array of `f64` in row-major order.
///
/// A scalar is represented by the empty shape `[]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Config(format!(
                "tensor shape {:?} implies {} values, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::Config(format!("tensor shape {:?} has a zero dim", shape)));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Row-major matrix of shape `(rows, cols)`.
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    pub fn scalar_value(&self) -> Result<f64> {
        if self.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::Config(format!(
                "expected scalar tensor, got shape {:?}",
                self.shape
            )))
        }
    }

    /// Size of the trailing axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element of a rank-2 tensor.
    pub fn at2(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[row * self.shape[1] + col]
    }
}

/// Broadcast compatibility per the leading-batch rule: shapes are equal, or
/// `rhs` matches a suffix of `lhs` (rhs is then repeated over the leading
/// axes of lhs).
fn broadcast_kind(lhs: &[usize], rhs: &[usize]) -> Option<usize> {
    if lhs.len() < rhs.len() {
        return None;
    }
    let offset = lhs.len() - rhs.len();
    if lhs[offset..] == rhs[..] {
        Some(offset)
    } else {
        None
    }
}

fn binary(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let Some(_) = broadcast_kind(&a.shape, &b.shape) else {
        return Err(Error::shapes(op, &a.shape, &b.shape));
    };
    let blen = b.data.len();
    let data = a
        .data
        .iter()
        .enumerate()
        .map(|(i, &av)| f(av, b.data[i % blen]))
        .collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Reduce a gradient of `from` shape down to `to` shape by summing the
/// leading broadcast axes. Inverse of the broadcast in `binary`.
pub(crate) fn reduce_to_shape(grad: &Tensor, to: &[usize]) -> Tensor {
    if grad.shape() == to {
        return grad.clone();
    }
    let tlen: usize = to.iter().product();
    let mut out = vec![0.0; tlen];
    for (i, &g) in grad.data.iter().enumerate() {
        out[i % tlen] += g;
    }
    Tensor {
        shape: to.to_vec(),
        data: out,
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("sub", a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary("mul", a, b, |x, y| x * y)
}

pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if b.data.iter().any(|&v| v == 0.0) {
        return Err(Error::domain("div", "division by zero"));
    }
    binary("div", a, b, |x, y| x / y)
}

pub fn neg(a: &Tensor) -> Tensor {
    a.map(|v| -v)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    a.map(|v| c * v)
}

pub fn add_scalar(a: &Tensor, c: f64) -> Tensor {
    a.map(|v| v + c)
}

/// `(m, k) x (k, n) -> (m, n)` matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::shapes("matmul", &a.shape, &b.shape));
    }
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = b.shape[1];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Transpose of a rank-2 tensor.
pub fn transpose(a: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 {
        return Err(Error::shapes("transpose", &a.shape, &[]));
    }
    let (m, n) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Concatenate along the trailing axis; all other axes must match.
pub fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Config("concat of zero tensors".into()));
    }
    let rank = parts[0].rank();
    if rank == 0 {
        return Err(Error::shapes("concat", &[], &[]));
    }
    let lead = &parts[0].shape[..rank - 1];
    for p in parts.iter().skip(1) {
        if p.rank() != rank || &p.shape[..rank - 1] != lead {
            return Err(Error::shapes("concat", &parts[0].shape, &p.shape));
        }
    }
    let total_last: usize = parts.iter().map(|p| p.last_dim()).sum();
    let lead_count: usize = lead.iter().product();
    let mut data = Vec::with_capacity(lead_count * total_last);
    for row in 0..lead_count {
        for p in parts {
            let w = p.last_dim();
            data.extend_from_slice(&p.data[row * w..(row + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total_last);
    Tensor::new(shape, data)
}

/// Slice `[start, start+len)` of the trailing axis.
pub fn slice_last(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    if a.rank() == 0 || start + len > a.last_dim() || len == 0 {
        return Err(Error::Config(format!(
            "slice [{start}, {}) out of range for shape {:?}",
            start + len,
            a.shape
        )));
    }
    let w = a.last_dim();
    let lead_count = a.len() / w;
    let mut data = Vec::with_capacity(lead_count * len);
    for row in 0..lead_count {
        data.extend_from_slice(&a.data[row * w + start..row * w + start + len]);
    }
    let mut shape = a.shape.clone();
    *shape.last_mut().unwrap() = len;
    Tensor::new(shape, data)
}

pub fn sum(a: &Tensor) -> f64 {
    a.data.iter().sum()
}

pub fn mean(a: &Tensor) -> f64 {
    sum(a) / a.len() as f64
}

pub fn square_norm(a: &Tensor) -> f64 {
    a.data.iter().map(|v| v * v).sum()
}

/// Numerically safe logistic function.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe softplus: `max(x, 0) + ln(1 + exp(-|x|))`.
pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    a.map(sigmoid_scalar)
}

pub fn tanh(a: &Tensor) -> Tensor {
    a.map(f64::tanh)
}

pub fn relu(a: &Tensor) -> Tensor {
    a.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn softplus(a: &Tensor) -> Tensor {
    a.map(softplus_scalar)
}

pub fn exp(a: &Tensor) -> Result<Tensor> {
    let out = a.map(f64::exp);
    if !out.all_finite() {
        return Err(Error::domain("exp", "overflow to non-finite"));
    }
    Ok(out)
}

pub fn log(a: &Tensor) -> Result<Tensor> {
    if a.data.iter().any(|&v| v <= 0.0) {
        return Err(Error::domain("log", "log of non-positive value"));
    }
    Ok(a.map(f64::ln))
}

pub fn sqrt(a: &Tensor) -> Result<Tensor> {
    if a.data.iter().any(|&v| v < 0.0) {
        return Err(Error::domain("sqrt", "sqrt of negative value"));
    }
    Ok(a.map(f64::sqrt))
}

pub fn clamp_min(a: &Tensor, floor: f64) -> Tensor {
    a.map(|v| v.max(floor))
}

pub fn clamp_abs(a: &Tensor, bound: f64) -> Tensor {
    a.map(|v| v.clamp(-bound, bound))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_enforced() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn broadcast_only_over_leading_axis() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(vec![10.0, 20.0, 30.0]);
        let c = add(&a, &b).unwrap();
        assert_eq!(c.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        // (3,) + (2,3) is rejected: broadcast never widens lhs.
        assert!(add(&b, &a).is_err());
        // trailing-dim mismatch is rejected.
        let d = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(add(&a, &d).is_err());
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let a = Tensor::new(vec![3, 3], (0..9).map(|i| i as f64).collect()).unwrap();
        assert_eq!(matmul(&eye, &a).unwrap(), a);
    }

    #[test]
    fn softplus_closed_form_and_saturation() {
        assert!((softplus_scalar(0.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(softplus_scalar(800.0).is_finite());
        assert!(softplus_scalar(-800.0) > 0.0);
        assert_eq!(softplus_scalar(800.0), 800.0);
    }

    #[test]
    fn sigmoid_saturation_finite() {
        let t = Tensor::from_vec(vec![-1000.0, 0.0, 1000.0]);
        let s = sigmoid(&t);
        assert!(s.all_finite());
        assert!(s.data()[0] < 1e-300);
        assert_eq!(s.data()[1], 0.5);
        assert_eq!(s.data()[2], 1.0);
    }

    #[test]
    fn guarded_domains() {
        assert!(log(&Tensor::from_vec(vec![1.0, 0.0])).is_err());
        assert!(div(&Tensor::from_vec(vec![1.0]), &Tensor::from_vec(vec![0.0])).is_err());
        assert!(exp(&Tensor::from_vec(vec![1e9])).is_err());
        assert!(sqrt(&Tensor::from_vec(vec![-1.0])).is_err());
    }

    #[test]
    fn concat_slice_roundtrip() {
        let a = Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::new(vec![2, 3], vec![5., 6., 7., 8., 9., 10.]).unwrap();
        let c = concat_last(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 5]);
        assert_eq!(slice_last(&c, 0, 2).unwrap(), a);
        assert_eq!(slice_last(&c, 2, 3).unwrap(), b);
    }
}
