//! Dense row-major `f64` tensors and the primitive numeric operations the
//! layers are assembled from. Each differentiable primitive has a matching
//! `*_backward` that takes the upstream gradient plus whatever the forward
//! pass returned.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(self.strides())
            .zip(&self.shape)
            .map(|((&i, s), &d)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
                i * s
            })
            .sum()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_shape(other.shape())?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_shape(other.shape())?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_shape(other.shape())?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::dim(format!(
                "expected shape {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::dim(format!(
                "{what}: expected rank {rank}, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Errors if any element is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "{what}: non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }

    /// Copy of `[start, start+len)` along axis 0.
    pub fn slice_outer(&self, start: usize, len: usize) -> Result<Self> {
        let outer = self.shape[0];
        if len == 0 || start + len > outer {
            return Err(Error::dim(format!(
                "slice {start}..{} out of range for axis of {outer}",
                start + len
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Self {
            shape,
            data: self.data[start * inner..(start + len) * inner].to_vec(),
        })
    }

    /// Concatenates along axis 0.
    pub fn concat_outer(parts: &[Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("nothing to concatenate"))?;
        let inner = &first.shape[1..];
        let mut data = Vec::new();
        let mut outer = 0;
        for p in parts {
            if &p.shape[1..] != inner {
                return Err(Error::dim(format!(
                    "cannot concatenate {:?} with {:?}",
                    first.shape, p.shape
                )));
            }
            outer += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = outer;
        Ok(Self { shape, data })
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on raw row-major buffers, where `op`
/// optionally transposes. `a` is `m×k` after `op`, `b` is `k×n` after `op`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the buffers are exactly m*k, k*n and m*n long (asserted above)
    // and the strides describe row-major layouts of those extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn matrix_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(Error::dim(format!(
            "{what}: expected a matrix, got shape {s:?}"
        ))),
    }
}

/// Matrix product of `M×K` and `K×N`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims(a, "matmul lhs")?;
    let (k2, n) = matrix_dims(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner dimensions disagree: {:?} · {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        m,
        k,
        n,
        1.0,
        a.data(),
        false,
        b.data(),
        false,
        0.0,
        &mut out,
    );
    Tensor::new(&[m, n], out)
}

/// Returns `(dA, dB)` for `C = A·B`: `dA = dC·Bᵀ`, `dB = Aᵀ·dC`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, k) = matrix_dims(a, "matmul lhs")?;
    let (_, n) = matrix_dims(b, "matmul rhs")?;
    dc.expect_shape(&[m, n])?;
    let mut da = vec![0.0; m * k];
    gemm(m, n, k, 1.0, dc.data(), false, b.data(), true, 0.0, &mut da);
    let mut db = vec![0.0; k * n];
    gemm(k, m, n, 1.0, a.data(), true, dc.data(), false, 0.0, &mut db);
    Ok((Tensor::new(&[m, k], da)?, Tensor::new(&[k, n], db)?))
}

/// Numerically stable softmax of a slice, written into `out`.
pub(crate) fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Given `y = softmax(x)` and `dy`, writes `dx = y ⊙ (dy − ⟨y, dy⟩)`.
pub(crate) fn softmax_backward_into(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    let inner: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(dy) {
        *d = yi * (gi - inner);
    }
}

/// Softmax of a 1-D tensor.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(1, "softmax")?;
    let mut out = vec![0.0; x.len()];
    softmax_into(x.data(), &mut out);
    Tensor::new(x.shape(), out)
}

pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    y.expect_rank(1, "softmax_backward")?;
    dy.expect_shape(y.shape())?;
    let mut dx = vec![0.0; y.len()];
    softmax_backward_into(y.data(), dy.data(), &mut dx);
    Tensor::new(y.shape(), dx)
}

/// Row-wise softmax of a `B×N` matrix.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (_, n) = matrix_dims(x, "softmax_rows")?;
    let mut out = vec![0.0; x.len()];
    for (xr, or) in x.data().chunks(n).zip(out.chunks_mut(n)) {
        softmax_into(xr, or);
    }
    Tensor::new(x.shape(), out)
}

pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    let (_, n) = matrix_dims(y, "softmax_rows_backward")?;
    dy.expect_shape(y.shape())?;
    let mut dx = vec![0.0; y.len()];
    for ((yr, gr), dr) in y
        .data()
        .chunks(n)
        .zip(dy.data().chunks(n))
        .zip(dx.chunks_mut(n))
    {
        softmax_backward_into(yr, gr, dr);
    }
    Tensor::new(y.shape(), dx)
}

/// Pointwise nonlinearities. Derivatives are evaluated from the forward
/// output, so callers only need to keep `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// f′(x) expressed through y = f(x).
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn elementwise(x: &Tensor, f: Activation) -> Tensor {
    x.map(|v| f.apply(v))
}

/// `dx = dy ⊙ f′` where `y` is the cached forward output.
pub fn elementwise_backward(y: &Tensor, dy: &Tensor, f: Activation) -> Result<Tensor> {
    y.zip_with(dy, |yv, g| g * f.derivative_from_output(yv))
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_difference_grad(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Numeric(format!("step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let plus = f(&probe);
        probe.data[i] = orig - h;
        let minus = f(&probe);
        probe.data[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "function is not finite near coordinate {i}"
            )));
        }
        grad.data[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn max_rel_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_shape(b.shape())?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| rel_error(x, y))
        .fold(0.0, f64::max))
}
