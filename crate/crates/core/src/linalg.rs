//! Dense linear solves sized for small transition matrices.

use thiserror::Error;

use crate::scalar::{solve_tol, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is {rows}x{cols} but right-hand side has length {rhs}")]
    ShapeMismatch { rows: usize, cols: usize, rhs: usize },
    #[error("singular system: no usable pivot in column {column}")]
    Singular { column: usize },
}

/// LU factorization with row pivoting, kept around so iterative refinement
/// can reuse it.
struct LuFactors<T> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> LuFactors<T> {
    fn factor(a: &[T], n: usize) -> Result<Self, LinalgError> {
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_mag = lu[col * n + col].abs();
            for row in col + 1..n {
                let mag = lu[row * n + col].abs();
                if mag > pivot_mag {
                    pivot_mag = mag;
                    pivot_row = row;
                }
            }
            if pivot_mag == T::zero() {
                return Err(LinalgError::Singular { column: col });
            }
            if pivot_row != col {
                for k in 0..n {
                    lu.swap(col * n + k, pivot_row * n + k);
                }
                perm.swap(col, pivot_row);
            }
            let pivot = lu[col * n + col];
            for row in col + 1..n {
                let factor = lu[row * n + col] / pivot;
                lu[row * n + col] = factor;
                for k in col + 1..n {
                    let sub = factor * lu[col * n + k];
                    lu[row * n + k] = lu[row * n + k] - sub;
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for row in 1..n {
            let mut acc = x[row];
            for col in 0..row {
                acc = acc - self.lu[row * n + col] * x[col];
            }
            x[row] = acc;
        }
        for row in (0..n).rev() {
            let mut acc = x[row];
            for col in row + 1..n {
                acc = acc - self.lu[row * n + col] * x[col];
            }
            x[row] = acc / self.lu[row * n + row];
        }
        x
    }
}

fn residual<T: Scalar>(a: &[T], x: &[T], b: &[T], n: usize) -> Vec<T> {
    let mut r = b.to_vec();
    for row in 0..n {
        let mut acc = T::zero();
        for col in 0..n {
            acc = acc + a[row * n + col] * x[col];
        }
        r[row] = r[row] - acc;
    }
    r
}

fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

/// Solves `a * x = b` for a row-major square `a` by partially pivoted
/// Gaussian elimination, with one iterative-refinement pass when the
/// residual is out of tolerance.
pub fn solve_dense<T: Scalar>(a: &[T], b: &[T]) -> Result<Vec<T>, LinalgError> {
    let n = b.len();
    if a.len() != n * n {
        let cols = if n == 0 { 0 } else { a.len() / n };
        return Err(LinalgError::ShapeMismatch { rows: n, cols, rhs: n });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let factors = LuFactors::factor(a, n)?;
    let mut x = factors.solve(b);
    let r = residual(a, &x, b, n);
    let scale = T::one() + inf_norm(&x);
    if inf_norm(&r) > solve_tol::<T>() * scale {
        let dx = factors.solve(&r);
        for (xi, di) in x.iter_mut().zip(dx) {
            *xi = *xi + di;
        }
    }
    Ok(x)
}

/// Builds the row-major matrix `I - c * p` used by the discounted moment
/// equations, where `p` is a row-major transition matrix.
pub fn identity_minus_scaled<T: Scalar>(p: &[T], n: usize, c: T) -> Vec<T> {
    let mut a = vec![T::zero(); n * n];
    for row in 0..n {
        for col in 0..n {
            let diag = if row == col { T::one() } else { T::zero() };
            a[row * n + col] = diag - c * p[row * n + col];
        }
    }
    a
}

/// Maximum absolute difference between two equally sized vectors.
pub fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
