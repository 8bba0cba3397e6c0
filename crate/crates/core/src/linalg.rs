//! Dense row-major matrices and the scalar nonlinearities used by every
//! other module. Plain loops, 64-bit throughout; tolerances elsewhere rely
//! on the deterministic accumulation order (ascending inner index) used here.

use crate::Error;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build from a row-major buffer. Rejects length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, Error> {
        if data.len() != rows * cols {
            return Err(Error::config(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!(
                "non-finite entry {} at ({}, {})",
                data[pos],
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from explicit rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, Error> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::config("ragged rows".to_string()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Matrix::from_vec(r, c, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Elementwise map into a new matrix.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// C = self · rhs. Inner accumulation runs over ascending k, one partial
    /// sum per output entry, so results are bit-identical to a naive
    /// i-j-k triple loop.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix, Error> {
        if self.cols != rhs.rows {
            return Err(Error::shape("matmul", self.shape(), rhs.shape()));
        }
        let n = rhs.cols;
        let mut out = vec![0.0; self.rows * n];
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out[i * n..(i + 1) * n];
            for (k, &a) in a_row.iter().enumerate() {
                let b_row = &rhs.data[k * n..(k + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: self.rows,
            cols: n,
            data: out,
        })
    }

    /// Elementwise product.
    pub fn hadamard(&self, rhs: &Matrix) -> Result<Matrix, Error> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape("hadamard", self.shape(), rhs.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix, Error> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape("add", self.shape(), rhs.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix, Error> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape("sub", self.shape(), rhs.shape()));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|x| c * x)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    /// Largest absolute entry (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, rhs: &Matrix) -> Result<f64, Error> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape("max_abs_diff", self.shape(), rhs.shape()));
        }
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .fold(0.0, |m, (&a, &b)| m.max((a - b).abs())))
    }
}

/// Logistic function, computed in the branch form that never exponentiates
/// a large positive argument.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// SiLU(x) = x · σ(x). Near-identity for large positive x, near-zero for
/// negative x.
#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d/dx SiLU(x) = σ(x) · (1 + x · (1 − σ(x))).
#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Independent naive i-j-k triple-loop product; the oracle `matmul` is
    /// checked against.
    fn matmul_oracle(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn matmul_identity_left() {
        let mut rng = Rng::new(1);
        let b = rng.normal_matrix(3, 2);
        let c = Matrix::identity(3).matmul(&b).unwrap();
        assert_eq!(c, b);
    }

    #[test]
    fn matmul_scalar_case() {
        let a = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![3.0]]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().get(0, 0), 6.0);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = Rng::new(42);
        let a = rng.normal_matrix(5, 4);
        let b = rng.normal_matrix(4, 3);
        let c = a.matmul(&b).unwrap();
        let expect = matmul_oracle(&a, &b);
        let scale = expect.max_abs();
        assert!(c.max_abs_diff(&expect).unwrap() <= 1e-12 * scale);
    }

    #[test]
    fn matmul_associative_on_random_triples() {
        let mut rng = Rng::new(7);
        for _ in 0..10 {
            let a = rng.normal_matrix(4, 3);
            let b = rng.normal_matrix(3, 5);
            let c = rng.normal_matrix(5, 2);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = right.max_abs().max(1.0);
            assert!(left.max_abs_diff(&right).unwrap() <= 1e-10 * scale);
        }
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        match a.matmul(&b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (4, 2));
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![f64::INFINITY, 0.0]).is_err());
        assert!(Matrix::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn hadamard_ones_and_zeros() {
        let mut rng = Rng::new(3);
        let a = rng.normal_matrix(3, 4);
        let ones = a.map(|_| 1.0);
        let zeros = Matrix::zeros(3, 4);
        assert_eq!(a.hadamard(&ones).unwrap(), a);
        assert_eq!(a.hadamard(&zeros).unwrap(), zeros);
    }

    #[test]
    fn transpose_is_involution() {
        let mut rng = Rng::new(4);
        let a = rng.normal_matrix(3, 5);
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn silu_fixed_points() {
        assert_eq!(silu(0.0), 0.0);
        assert!((silu(20.0) - 20.0).abs() < 1e-7);
        assert!(silu(-20.0).abs() < 1e-7);
    }

    #[test]
    fn silu_grad_fixed_points() {
        assert_eq!(silu_grad(0.0), 0.5);
        assert!((silu_grad(30.0) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn silu_grad_matches_central_difference() {
        let h = 1e-6;
        for &x in &[-3.0, -1.0, 0.5, 2.0] {
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!(
                (silu_grad(x) - fd).abs() <= 1e-6,
                "x={x}: analytic {} vs fd {fd}",
                silu_grad(x)
            );
        }
    }

    #[test]
    fn silu_bounds_on_grid() {
        // global minimum is about -0.2785 near x = -1.278
        let mut x = -30.0;
        while x <= 30.0 {
            let y = silu(x);
            assert!(y > -0.2785 - 1e-4, "silu({x}) = {y} below global bound");
            assert!(y <= x.max(0.0) + 1e-12, "silu({x}) = {y} above max(x,0)");
            x += 0.01;
        }
    }

    #[test]
    fn sigmoid_stable_at_extremes() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert!(silu(-800.0).abs() < 1e-300 || silu(-800.0) == 0.0);
    }
}
