//! Dense row-major arrays and the differentiable primitives the models are
//! built from.
//!
//! Everything here works in `f64`. The batched kernels used by the layers go
//! through [`gemm`], a thin strided wrapper over `matrixmultiply::dgemm`, so
//! transposes and column blocks of a stacked weight matrix never need to be
//! materialized.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Dense multi-dimensional array of `f64` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that every extent is positive and that the
    /// extents multiply out to `data.len()`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) || shape.iter().product::<usize>() != data.len() {
            return Err(Error::InvalidShape {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "extents must be positive: {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape {
                shape: vec![rows.len(), cols],
                len: rows.iter().map(Vec::len).sum(),
            });
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    /// 1-D tensor.
    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Leading extent.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of values per leading index.
    pub fn row_len(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    /// Values of the `i`-th slice along the leading axis.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new(vec![c, r], out)
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: vec![],
            }),
        }
    }
}

/// Read-only strided matrix view.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> MatRef<'a> {
    /// Row-major `rows × cols` view over the start of `data`.
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a [f64], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        if rows > 0 && cols > 0 {
            assert!(
                (rows - 1) * rs + (cols - 1) * cs < data.len(),
                "strided view out of bounds"
            );
        }
        Self {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c = alpha · a · b + beta · c`, with `c` row-major `a.rows × b.cols`.
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    gemm_strided(alpha, a, b, beta, c, b.cols);
}

/// As [`gemm`], writing rows of `c` `c_rs` elements apart.
pub(crate) fn gemm_strided(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64], c_rs: usize) {
    assert_eq!(a.cols, b.rows, "gemm inner extents");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(c_rs >= n && (m - 1) * c_rs + n <= c.len(), "gemm output too small");
    if k == 0 {
        for row in 0..m {
            for v in &mut c[row * c_rs..row * c_rs + n] {
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: the views were bounds-checked on construction and `c` holds
    // m rows of n elements at row stride c_rs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            c_rs as isize,
            1,
        );
    }
}

/// Standard matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm(1.0, MatRef::new(&a.data, m, k), MatRef::new(&b.data, k, n), 0.0, &mut out);
    Tensor::new(vec![m, n], out)
}

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    /// Identity, used by the output layer that emits raw logits.
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    /// Derivative at the pre-activation `x`. ReLU's derivative at 0 is 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    /// Derivative expressed through the output `y = apply(x)`.
    #[inline]
    pub(crate) fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "linear" | "identity" => Ok(Activation::Linear),
            other => Err(Error::UnknownActivation(other.to_string())),
        }
    }
}

/// Logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(kind: Activation, x: &Tensor) -> Tensor {
    x.map(|v| kind.apply(v))
}

pub fn activation_grad(kind: Activation, x: &Tensor) -> Tensor {
    x.map(|v| kind.derivative(v))
}

/// Probabilities are clamped to this floor before taking the log.
pub const PROB_FLOOR: f64 = 1e-15;

/// Row-wise softmax of a `batch × C` tensor, stabilized by max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (b, c) = logits.dims2("softmax")?;
    let mut out = logits.data.clone();
    for row in out.chunks_exact_mut(c) {
        softmax_row(row);
    }
    Tensor::new(vec![b, c], out)
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Mean categorical cross-entropy of softmax(logits) against one-hot targets,
/// with the gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, onehot: &Tensor) -> Result<(f64, Tensor)> {
    if logits.shape != onehot.shape {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            left: logits.shape.clone(),
            right: onehot.shape.clone(),
        });
    }
    let (_, c) = onehot.dims2("softmax_cross_entropy")?;
    let mut labels = Vec::with_capacity(onehot.rows());
    for (row_idx, row) in onehot.data.chunks_exact(c).enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != c - 1 {
            return Err(Error::InvalidOneHot { row: row_idx });
        }
        labels.push(row.iter().position(|&v| v == 1.0).unwrap_or(0));
    }
    softmax_cross_entropy_labels(logits, &labels)
}

/// Same as [`softmax_cross_entropy`] with integer class labels.
pub fn softmax_cross_entropy_labels(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = logits.dims2("softmax_cross_entropy")?;
    if c < 2 {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy (need at least 2 classes)",
            left: logits.shape.clone(),
            right: vec![],
        });
    }
    if labels.len() != b {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy labels",
            left: logits.shape.clone(),
            right: vec![labels.len()],
        });
    }
    let mut grad = logits.data.clone();
    let mut loss = 0.0;
    let scale = 1.0 / b as f64;
    for (row, &label) in grad.chunks_exact_mut(c).zip(labels) {
        if label >= c {
            return Err(Error::ClassOutOfRange(label));
        }
        softmax_row(row);
        loss -= row[label].max(PROB_FLOOR).ln();
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok((loss * scale, Tensor::new(vec![b, c], grad)?))
}

/// Default central-difference step.
pub const FD_EPS: f64 = 1e-5;

/// Relative error between an analytic and a numeric derivative.
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-12)
}

/// Compares `analytic_grad` against central differences of `f` at `x`,
/// returning the largest per-coordinate relative error.
pub fn finite_diff_check<F>(mut f: F, x: &Tensor, analytic_grad: &Tensor, eps: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    if x.shape != analytic_grad.shape {
        return Err(Error::ShapeMismatch {
            op: "finite_diff_check",
            left: x.shape.clone(),
            right: analytic_grad.shape.clone(),
        });
    }
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let plus = f(&probe);
        probe.data[i] = orig - eps;
        let minus = f(&probe);
        probe.data[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        if !numeric.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        worst = worst.max(relative_error(analytic_grad.data[i], numeric));
    }
    Ok(worst)
}
