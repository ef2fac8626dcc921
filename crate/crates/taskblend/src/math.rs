//! Minimal dense linear-algebra kernel: row-major matrices, a stabilized
//! softmax, a partial-pivot ridge solver, and cosine similarity.
//!
//! Problem sizes here are small (T ≤ ~64 tasks, d ≤ ~10^4 coordinates), so
//! everything is plain `Vec<f64>` with no sparse or blocked paths.

use thiserror::Error;

/// Norms below this are treated as zero vectors.
pub const ZERO_NORM_GUARD: f64 = 1e-30;

/// Pivot magnitude below which Gaussian elimination calls a system singular.
pub const PIVOT_TOL: f64 = 1e-12;

/// Ridge added on retry when elimination hits a singular pivot.
pub const RIDGE_FALLBACK: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum MathError {
    #[error("dimension mismatch: {context} ({left} vs {right})")]
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },
    #[error("matrix is singular even after ridge {ridge:e}")]
    Singular { ridge: f64 },
    #[error("zero vector in {context} (norm below {ZERO_NORM_GUARD:e})")]
    ZeroVector { context: &'static str },
}

/// Dense row-major matrix. Rows are per-task gradients when used as the
/// gradient matrix G = [g_1, ..., g_T].
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// wᵀ·M for a length-`rows` weight vector: the weighted row combination.
    pub fn weighted_row_sum(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.rows, "weight length must match row count");
        let mut out = vec![0.0; self.cols];
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            for (o, &g) in out.iter_mut().zip(self.row(i)) {
                *o += wi * g;
            }
        }
        out
    }

    /// Gram matrix M·Mᵀ (rows × rows).
    pub fn gram(&self) -> Matrix {
        let mut g = Matrix::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in i..self.rows {
                let v = dot(self.row(i), self.row(j));
                g.set(i, j, v);
                g.set(j, i, v);
            }
        }
        g
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    assert_eq!(u.len(), v.len(), "dot length mismatch");
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

pub fn norm(v: &[f64]) -> f64 {
    norm_sq(v).sqrt()
}

/// u + s·v, in place on `u`.
pub fn axpy(u: &mut [f64], s: f64, v: &[f64]) {
    assert_eq!(u.len(), v.len(), "axpy length mismatch");
    for (a, b) in u.iter_mut().zip(v) {
        *a += s * b;
    }
}

pub fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

pub fn sub(u: &[f64], v: &[f64]) -> Vec<f64> {
    assert_eq!(u.len(), v.len(), "sub length mismatch");
    u.iter().zip(v).map(|(a, b)| a - b).collect()
}

/// Numerically stabilized softmax: shifts by the max entry, so adding a
/// constant to every input leaves the output unchanged. Output entries are
/// positive and sum to 1.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "softmax of empty vector");
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Solution of a ridge-regularized linear system.
#[derive(Debug, Clone)]
pub struct RidgeSolution {
    pub x: Vec<f64>,
    /// True when the requested ridge was insufficient and the solve retried
    /// with [`RIDGE_FALLBACK`].
    pub used_fallback: bool,
}

/// Solves (A + ridge·I)x = b by Gaussian elimination with partial pivoting.
/// If a pivot falls below [`PIVOT_TOL`], retries once with ridge
/// [`RIDGE_FALLBACK`] and flags the fallback.
pub fn solve_linear_ridge(a: &Matrix, b: &[f64], ridge: f64) -> Result<RidgeSolution, MathError> {
    if a.rows() != a.cols() {
        return Err(MathError::DimensionMismatch {
            context: "solve_linear_ridge matrix must be square",
            left: a.rows(),
            right: a.cols(),
        });
    }
    if a.rows() != b.len() {
        return Err(MathError::DimensionMismatch {
            context: "solve_linear_ridge rhs length",
            left: a.rows(),
            right: b.len(),
        });
    }
    match gauss_solve(a, b, ridge) {
        Some(x) => Ok(RidgeSolution {
            x,
            used_fallback: false,
        }),
        None => match gauss_solve(a, b, RIDGE_FALLBACK.max(ridge)) {
            Some(x) => Ok(RidgeSolution {
                x,
                used_fallback: true,
            }),
            None => Err(MathError::Singular {
                ridge: RIDGE_FALLBACK.max(ridge),
            }),
        },
    }
}

fn gauss_solve(a: &Matrix, b: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let n = a.rows();
    if n == 0 {
        return Some(Vec::new());
    }
    // Augmented copy [A + ridge·I | b].
    let mut m = vec![0.0; n * (n + 1)];
    for i in 0..n {
        for j in 0..n {
            m[i * (n + 1) + j] = a.get(i, j) + if i == j { ridge } else { 0.0 };
        }
        m[i * (n + 1) + n] = b[i];
    }
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&p, &q| {
                m[p * (n + 1) + col]
                    .abs()
                    .total_cmp(&m[q * (n + 1) + col].abs())
            })
            .unwrap();
        if m[pivot_row * (n + 1) + col].abs() < PIVOT_TOL {
            return None;
        }
        if pivot_row != col {
            for j in 0..=n {
                m.swap(col * (n + 1) + j, pivot_row * (n + 1) + j);
            }
        }
        let pivot = m[col * (n + 1) + col];
        for row in (col + 1)..n {
            let factor = m[row * (n + 1) + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..=n {
                m[row * (n + 1) + j] -= factor * m[col * (n + 1) + j];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = m[row * (n + 1) + n];
        for j in (row + 1)..n {
            acc -= m[row * (n + 1) + j] * x[j];
        }
        x[row] = acc / m[row * (n + 1) + row];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// u·v / (‖u‖‖v‖), clamped to [-1, 1]. Errors on (near-)zero inputs.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, MathError> {
    let nu = norm(u);
    let nv = norm(v);
    if nu < ZERO_NORM_GUARD {
        return Err(MathError::ZeroVector {
            context: "cosine_similarity lhs",
        });
    }
    if nv < ZERO_NORM_GUARD {
        return Err(MathError::ZeroVector {
            context: "cosine_similarity rhs",
        });
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}
