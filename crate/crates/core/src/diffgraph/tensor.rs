//! Dense double-precision arrays: scalars, vectors, and matrices.
//!
//! Shapes are ranked 0/1/2; anything richer is out of scope for the
//! desk-scale networks used here.

use std::fmt;

/// Shape of a [`Tensor`]: rank 0, 1, or 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Shape::Scalar => write!(f, "()"),
            Shape::Vector(n) => write!(f, "({n})"),
            Shape::Matrix(r, c) => write!(f, "({r}x{c})"),
        }
    }
}

/// Row-major dense array of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub data: Vec<f64>,
    pub shape: Shape,
}

impl Tensor {
    pub fn scalar(v: f64) -> Self {
        Tensor { data: vec![v], shape: Shape::Scalar }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor { data, shape: Shape::Vector(n) }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Tensor { data, shape: Shape::Matrix(rows, cols) }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor { data: vec![0.0; shape.numel()], shape }
    }

    pub fn full(shape: Shape, v: f64) -> Self {
        Tensor { data: vec![v; shape.numel()], shape }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Scalar value; panics if not rank 0.
    pub fn item(&self) -> f64 {
        assert!(matches!(self.shape, Shape::Scalar), "item() on non-scalar {}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix-vector product: self (r x c) * x (c) -> (r).
    pub fn matvec(&self, x: &Tensor) -> Tensor {
        let (r, c) = match self.shape {
            Shape::Matrix(r, c) => (r, c),
            _ => panic!("matvec lhs must be a matrix, got {}", self.shape),
        };
        assert_eq!(x.shape, Shape::Vector(c), "matvec rhs shape mismatch");
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let mut acc = 0.0;
            for j in 0..c {
                acc += row[j] * x.data[j];
            }
            out[i] = acc;
        }
        Tensor::vector(out)
    }

    /// Transposed matrix-vector product: self^T (c x r)^T ... i.e. self (r x c), g (r) -> (c).
    pub fn matvec_t(&self, g: &Tensor) -> Tensor {
        let (r, c) = match self.shape {
            Shape::Matrix(r, c) => (r, c),
            _ => panic!("matvec_t lhs must be a matrix, got {}", self.shape),
        };
        assert_eq!(g.shape, Shape::Vector(r), "matvec_t rhs shape mismatch");
        let mut out = vec![0.0; c];
        for i in 0..r {
            let gi = g.data[i];
            let row = &self.data[i * c..(i + 1) * c];
            for j in 0..c {
                out[j] += row[j] * gi;
            }
        }
        Tensor::vector(out)
    }

    /// Outer product u (m) ⊗ v (n) -> (m x n).
    pub fn outer(u: &Tensor, v: &Tensor) -> Tensor {
        let m = match u.shape {
            Shape::Vector(m) => m,
            _ => panic!("outer lhs must be a vector"),
        };
        let n = match v.shape {
            Shape::Vector(n) => n,
            _ => panic!("outer rhs must be a vector"),
        };
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ui = u.data[i];
            for j in 0..n {
                out[i * n + j] = ui * v.data[j];
            }
        }
        Tensor::matrix(m, n, out)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { data: self.data.iter().map(|&v| f(v)).collect(), shape: self.shape }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "zip shape mismatch");
        Tensor {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            shape: self.shape,
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Index of the maximum element, ties broken by lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.data.len() {
            if self.data[i] > self.data[best] {
                best = i;
            }
        }
        best
    }
}
