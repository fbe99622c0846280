use crate::{Real, Result, TensorError};

/// Row-major two-dimensional tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: [usize; 2],
    data: Vec<F>,
    /// Whether a graph leaf created from this tensor tracks gradients.
    pub requires_grad: bool,
}

impl<F: Real> Tensor<F> {
    pub fn new(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(TensorError::Length {
                shape: vec![rows, cols],
                len: data.len(),
            });
        }
        Ok(Self {
            shape: [rows, cols],
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, F::zero())
    }

    pub fn full(rows: usize, cols: usize, value: F) -> Self {
        Self {
            shape: [rows, cols],
            data: vec![value; rows * cols],
            requires_grad: false,
        }
    }

    pub fn scalar(value: F) -> Self {
        Self::full(1, 1, value)
    }

    pub fn row(data: Vec<F>) -> Self {
        let n = data.len();
        Self {
            shape: [1, n],
            data,
            requires_grad: false,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self {
            shape: [rows, cols],
            data,
            requires_grad: false,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { F::one() } else { F::zero() })
    }

    pub fn tracked(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn at(&self, r: usize, c: usize) -> F {
        self.data[r * self.shape[1] + c]
    }

    pub fn row_slice(&self, r: usize) -> &[F] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> F {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
            requires_grad: false,
        }
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|x| G::of(x.as_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    /// Plain (untracked) matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let [m, k] = self.shape;
        let [k2, n] = other.shape;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: self.shape.to_vec(),
                rhs: other.shape.to_vec(),
            });
        }
        let mut out = Self::zeros(m, n);
        F::gemm(
            m,
            k,
            n,
            &self.data,
            k as isize,
            1,
            &other.data,
            n as isize,
            1,
            F::zero(),
            &mut out.data,
            n as isize,
            1,
        );
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        let [m, k] = self.shape;
        let [n, k2] = other.shape;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul_nt",
                lhs: self.shape.to_vec(),
                rhs: other.shape.to_vec(),
            });
        }
        let mut out = Self::zeros(m, n);
        F::gemm(
            m,
            k,
            n,
            &self.data,
            k as isize,
            1,
            &other.data,
            1,
            k as isize,
            F::zero(),
            &mut out.data,
            n as isize,
            1,
        );
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        let [k, m] = self.shape;
        let [k2, n] = other.shape;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul_tn",
                lhs: self.shape.to_vec(),
                rhs: other.shape.to_vec(),
            });
        }
        let mut out = Self::zeros(m, n);
        F::gemm(
            m,
            k,
            n,
            &self.data,
            1,
            m as isize,
            &other.data,
            n as isize,
            1,
            F::zero(),
            &mut out.data,
            n as isize,
            1,
        );
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let [r, c] = self.shape;
        Self::from_fn(c, r, |i, j| self.data[j * c + i])
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let c = self.shape[1];
        Self {
            shape: [end - start, c],
            data: self.data[start * c..end * c].to_vec(),
            requires_grad: false,
        }
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        let w = end - start;
        Self::from_fn(self.rows(), w, |r, c| self.at(r, start + c))
    }

    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let rows = parts.first().map_or(0, |p| p.rows());
        if let Some(bad) = parts.iter().find(|p| p.rows() != rows) {
            return Err(TensorError::Shape {
                op: "concat_cols",
                lhs: vec![rows],
                rhs: bad.shape.to_vec(),
            });
        }
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row_slice(r));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: F) -> Self {
        self.map(|x| x * s)
    }

    /// `self + s·other`
    pub fn axpy(&self, s: F, other: &Self) -> Result<Self> {
        self.zip(other, "axpy", |a, b| a + s * b)
    }

    fn zip(&self, other: &Self, op: &'static str, f: impl Fn(F, F) -> F) -> Result<Self> {
        if self.shape != other.shape {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape.to_vec(),
                rhs: other.shape.to_vec(),
            });
        }
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            requires_grad: false,
        })
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
