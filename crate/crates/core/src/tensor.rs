//! Dense row-major `f64` tensors.
//!
//! Every layer, objective and preprocessing stage in the crate exchanges
//! [`Tensor`] values. Batches are laid out batch-first (`N × D` for feature
//! rows, `N × C × H × W` for images).

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Pointwise operations accepted by [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    /// `max(x, s)`; scalar operand only.
    MaxWithScalar,
    /// `x * s`; scalar operand only.
    Scale,
}

/// Right-hand side of an elementwise operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

impl<'a> From<&'a Tensor> for Operand<'a> {
    fn from(t: &'a Tensor) -> Self {
        Operand::Tensor(t)
    }
}

impl From<f64> for Operand<'_> {
    fn from(s: f64) -> Self {
        Operand::Scalar(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    /// Index of the largest element along the axis; ties resolve to the
    /// lowest index. Indices are returned as `f64` values.
    Argmax,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= PREVIEW {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..PREVIEW])
        }
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::invalid_shape(
                "Tensor::new",
                format!("dimensions must be positive, got {shape:?}"),
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid_shape(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// # Panics
    /// If any dimension is zero.
    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "dimensions must be positive, got {shape:?}"
        );
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }

    /// Builds a rank-2 tensor from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::invalid_shape(
                    "Tensor::from_rows",
                    format!("row {i} has {} values, row 0 has {d}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::new(&[n, d], data)
    }

    /// Rank-1 tensor.
    pub fn vector(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(&[n], values)
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

    /// Always false: dimensions are positive.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Leading dimension; the batch size for batch-first tensors.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all non-leading dimensions.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Gathers leading-axis slices, e.g. the rows of a minibatch.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let n = self.rows();
        let w = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            if i >= n {
                return Err(Error::domain(
                    "select_rows",
                    format!("row index {i} out of range for {n} rows"),
                ));
            }
            data.extend_from_slice(&self.data[i * w..(i + 1) * w]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self::new(&shape, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn require_rank2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::invalid_shape(
                op,
                format!("expected a rank-2 tensor, got {:?}", self.shape),
            )),
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.require_rank2("transpose")?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new(&[c, r], data)
    }

    /// `self · other` for `[m×k]·[k×n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.require_rank2("matmul")?;
        let (k2, n) = other.require_rank2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            Strided::row_major(&self.data, k),
            Strided::row_major(&other.data, n),
            &mut out,
        );
        Self::new(&[m, n], out)
    }

    /// `selfᵀ · other` for `[k×m]ᵀ·[k×n]`, without materializing the transpose.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        let (k, m) = self.require_rank2("matmul_tn")?;
        let (k2, n) = other.require_rank2("matmul_tn")?;
        if k != k2 {
            return Err(Error::shape("matmul_tn", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            Strided::transposed(&self.data, m),
            Strided::row_major(&other.data, n),
            &mut out,
        );
        Self::new(&[m, n], out)
    }

    /// `self · otherᵀ` for `[m×k]·[n×k]ᵀ`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.require_rank2("matmul_nt")?;
        let (n, k2) = other.require_rank2("matmul_nt")?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            Strided::row_major(&self.data, k),
            Strided::transposed(&other.data, k),
            &mut out,
        );
        Self::new(&[m, n], out)
    }

    pub fn elementwise<'a>(&self, op: ElementwiseOp, rhs: impl Into<Operand<'a>>) -> Result<Tensor> {
        let rhs = rhs.into();
        let f: fn(f64, f64) -> f64 = match op {
            ElementwiseOp::Add => |a, b| a + b,
            ElementwiseOp::Sub => |a, b| a - b,
            ElementwiseOp::Mul | ElementwiseOp::Scale => |a, b| a * b,
            ElementwiseOp::MaxWithScalar => f64::max,
        };
        match rhs {
            Operand::Scalar(s) => Ok(self.map(|a| f(a, s))),
            Operand::Tensor(other) => {
                if matches!(op, ElementwiseOp::MaxWithScalar | ElementwiseOp::Scale) {
                    return Err(Error::domain(
                        "elementwise",
                        format!("{op:?} takes a scalar operand"),
                    ));
                }
                if self.shape != other.shape {
                    return Err(Error::shape("elementwise", &self.shape, &other.shape));
                }
                let data = self
                    .data
                    .iter()
                    .zip(&other.data)
                    .map(|(&a, &b)| f(a, b))
                    .collect();
                Ok(Tensor {
                    shape: self.shape.clone(),
                    data,
                })
            }
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Add, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Sub, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Mul, other)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|a| a * s)
    }

    pub fn max_scalar(&self, s: f64) -> Tensor {
        self.map(|a| a.max(s))
    }

    /// `self += alpha * other`.
    pub fn add_scaled_inplace(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_scaled_inplace", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Reduces one axis away. Reducing the only axis of a rank-1 tensor gives
    /// a one-element rank-1 tensor.
    pub fn reduce(&self, op: ReduceOp, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::domain(
                "reduce",
                format!("axis {axis} out of range for shape {:?}", self.shape),
            ));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| self.data[(o * len + j) * inner + i];
                out[o * inner + i] = match op {
                    ReduceOp::Sum => (0..len).map(at).sum(),
                    ReduceOp::Mean => (0..len).map(at).sum::<f64>() / len as f64,
                    ReduceOp::Argmax => argmax_by(len, at) as f64,
                };
            }
        }
        let mut shape: Vec<usize> = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Self::new(&shape, out)
    }

    /// Per-row argmax of a rank-2 tensor, lowest index on ties.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        let (n, k) = self.require_rank2("argmax_rows")?;
        Ok((0..n)
            .map(|i| argmax_slice(&self.data[i * k..(i + 1) * k]))
            .collect())
    }
}

/// Lowest index of the maximum; NaN entries never win.
pub fn argmax_slice(values: &[f64]) -> usize {
    argmax_by(values.len(), |j| values[j])
}

fn argmax_by(len: usize, at: impl Fn(usize) -> f64) -> usize {
    let mut best = 0;
    let mut best_val = at(0);
    for j in 1..len {
        let v = at(j);
        if v > best_val || (best_val.is_nan() && !v.is_nan()) {
            best = j;
            best_val = v;
        }
    }
    best
}

struct Strided<'a> {
    data: &'a [f64],
    row_stride: isize,
    col_stride: isize,
}

impl<'a> Strided<'a> {
    fn row_major(data: &'a [f64], cols: usize) -> Self {
        Strided {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// View of a row-major `[cols_of_view × rows_of_view]` buffer as its transpose.
    fn transposed(data: &'a [f64], stored_cols: usize) -> Self {
        Strided {
            data,
            row_stride: 1,
            col_stride: stored_cols as isize,
        }
    }
}

/// Row-major `out[m×n] = a[m×k] · b[k×n]`. Single-threaded, so the
/// accumulation order is fixed and repeated calls are bit-identical.
fn gemm(m: usize, k: usize, n: usize, a: Strided<'_>, b: Strided<'_>, out: &mut [f64]) {
    debug_assert_eq!(a.data.len(), m * k);
    debug_assert_eq!(b.data.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    // SAFETY: the strides describe in-bounds views of `a.data` (m×k),
    // `b.data` (k×n) and `out` (m×n), checked by the asserts above; `out`
    // does not alias either input.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
