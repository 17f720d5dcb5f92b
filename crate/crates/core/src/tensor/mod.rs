//! Dense row-major tensors and a reverse-mode tape.
//!
//! The kernel is deliberately small: matrix products, elementwise adds, row
//! broadcasts of bias vectors, row/column slicing, softmax, layer norm, GELU
//! and a masked cross-entropy. Everything the transformer in [`crate::model`]
//! needs and nothing else.

mod tape;

pub use tape::{Gradients, Tape, Var};

use std::fmt;

use num_traits::{Float, FromPrimitive, ToPrimitive};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("index {index} out of range for extent {extent} in {op}")]
    Index { op: &'static str, index: usize, extent: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("cross-entropy called with no flagged positions")]
    EmptyLoss,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Floating point element type. `f32` is the working precision; `f64` exists
/// so gradient checks can run with a tight tolerance.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Send + Sync + fmt::Debug + fmt::Display + 'static
{
    /// `c = alpha * op(a) * op(b) + beta * c` on raw strided storage.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing `m×k`, `k×n`
    /// and `m×n` regions.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major operand description for [`gemm`]: a buffer holding an
/// `rows×cols` matrix, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, F> {
    pub data: &'a [F],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, F> MatRef<'a, F> {
    pub fn new(data: &'a [F], rows: usize, cols: usize) -> Self {
        MatRef { data, rows, cols, transposed: false }
    }

    pub fn t(self) -> Self {
        MatRef { transposed: !self.transposed, ..self }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out (+)= op(a) · op(b)`; `out` is row-major `m×n`.
pub(crate) fn gemm<F: Scalar>(a: MatRef<'_, F>, b: MatRef<'_, F>, out: &mut [F], accumulate: bool) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "gemm inner extents");
    assert_eq!(out.len(), m * n, "gemm output extent");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            out.iter_mut().for_each(|v| *v = F::zero());
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    let beta = if accumulate { F::one() } else { F::zero() };
    // SAFETY: extents checked above; `out` is uniquely borrowed.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            F::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: fmt::Debug> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || numel != data.len() {
            return Err(TensorError::Dimension {
                op: "tensor",
                detail: format!("shape {:?} holds {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: F) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::Dimension { op: "from_rows", detail: "ragged rows".into() });
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Extent of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    /// Product of all extents but the last.
    pub fn rows(&self) -> usize {
        self.numel() / self.cols()
    }

    pub fn row(&self, i: usize) -> &[F] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    /// Plain matrix product without recording. Used at inference time and by tests.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        let (m, k) = as_matrix(self, "matmul")?;
        let (k2, n) = as_matrix(other, "matmul")?;
        if k != k2 {
            return Err(TensorError::Dimension {
                op: "matmul",
                detail: format!("{m}x{k} · {k2}x{n}"),
            });
        }
        let mut out = vec![F::zero(); m * n];
        gemm(MatRef::new(&self.data, m, k), MatRef::new(&other.data, k, n), &mut out, false);
        Ok(Tensor { shape: vec![m, n], data: out })
    }
}

pub(crate) fn as_matrix<F: Scalar>(t: &Tensor<F>, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(TensorError::Dimension { op, detail: format!("expected a matrix, got {s:?}") }),
    }
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_row<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = sum.recip();
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

/// Softmax over the last axis.
pub fn softmax<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = x.clone();
    let c = out.cols();
    for row in out.data.chunks_mut(c) {
        softmax_row(row);
    }
    out
}

/// Layer normalization over the last axis: `(x - mean) / sqrt(var + eps) * gain + bias`.
pub fn layer_norm<F: Scalar>(
    x: &Tensor<F>,
    gain: Option<&[F]>,
    bias: Option<&[F]>,
    eps: F,
) -> Tensor<F> {
    let mut out = x.clone();
    let d = out.cols();
    for row in out.data.chunks_mut(d) {
        let (mean, inv_std) = moments(row, eps);
        for (j, v) in row.iter_mut().enumerate() {
            let mut y = (*v - mean) * inv_std;
            if let Some(g) = gain {
                y = y * g[j];
            }
            if let Some(b) = bias {
                y = y + b[j];
            }
            *v = y;
        }
    }
    out
}

pub(crate) fn moments<F: Scalar>(row: &[F], eps: F) -> (F, F) {
    let n = F::from_usize(row.len()).unwrap();
    let mean = row.iter().fold(F::zero(), |a, &v| a + v) / n;
    let var = row.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
    (mean, (var + eps).sqrt().recip())
}

// sqrt(2/pi) for the tanh form of GELU.
const GELU_K: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// GELU, tanh approximation: `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu<F: Scalar>(x: F) -> F {
    let k = F::lit(GELU_K);
    let c = F::lit(GELU_C);
    let half = F::lit(0.5);
    half * x * (F::one() + (k * (x + c * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<F: Scalar>(x: F) -> F {
    let k = F::lit(GELU_K);
    let c = F::lit(GELU_C);
    let half = F::lit(0.5);
    let three = F::lit(3.0);
    let u = k * (x + c * x * x * x);
    let t = u.tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * k * (F::one() + three * c * x * x)
}
