//! Dense kernels shared by the samplers and estimators.
//!
//! Everything here is small and deterministic: Cholesky factorization with a
//! relative pivot threshold, triangular solves, log-determinants, the
//! Sherman-Morrison downdate used by reverse iterative sampling, and a
//! minimum-norm least squares solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;

/// Design matrix with one point per row.
pub type PointMatrix = DMatrix<f64>;

/// Symmetric positive semidefinite matrix. Stored symmetrized as `(A + A')/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdMatrix(DMatrix<f64>);

impl PsdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::BadShape(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::BadShape("empty matrix".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite matrix entry".into()));
        }
        Ok(Self::symmetrized(m))
    }

    /// Like [`PsdMatrix::new`] for matrices known to be square and finite.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        PsdMatrix((m + t) * 0.5)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::BadShape("rows must form a square matrix".into()));
        }
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn identity(d: usize) -> Self {
        PsdMatrix(DMatrix::identity(d, d))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        PsdMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scaled(&self, c: f64) -> Self {
        PsdMatrix(&self.0 * c)
    }
}

/// Lower Cholesky factor with positive diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerTriangular(DMatrix<f64>);

impl LowerTriangular {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// `L L'`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.0 * self.0.transpose()
    }

    /// `L v`.
    pub fn mul_vec(&self, v: &Vector) -> Vector {
        &self.0 * v
    }

    /// Forward substitution, `L^-1 b`.
    pub fn solve_lower(&self, b: &Vector) -> Vector {
        let n = self.dim();
        let l = &self.0;
        let mut x = b.clone();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= l[(i, j)] * x[j];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }

    /// Back substitution against the transpose, `L'^-1 b`.
    pub fn solve_upper_transpose(&self, b: &Vector) -> Vector {
        let n = self.dim();
        let l = &self.0;
        let mut x = b.clone();
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= l[(j, i)] * x[j];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }

    /// `(L L')^-1 b`.
    pub fn solve(&self, b: &Vector) -> Vector {
        self.solve_upper_transpose(&self.solve_lower(b))
    }

    /// `ln det(L L') = 2 sum ln L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.0.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }
}

/// Cholesky factor `L` with `L L' = A`.
///
/// A pivot at or below `d * eps * max_i A_ii` is reported as
/// [`Error::NotPositiveDefinite`].
pub fn cholesky_lower(a: &PsdMatrix) -> Result<LowerTriangular> {
    cholesky_of(a.as_matrix())
}

pub(crate) fn cholesky_of(a: &DMatrix<f64>) -> Result<LowerTriangular> {
    let n = a.nrows();
    let max_diag = a
        .diagonal()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let threshold = n as f64 * f64::EPSILON * max_diag.max(0.0);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for p in 0..j {
            pivot -= l[(j, p)] * l[(j, p)];
        }
        if !(pivot > threshold) {
            return Err(Error::NotPositiveDefinite { column: j, pivot });
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(LowerTriangular(l))
}

pub fn solve_psd(a: &PsdMatrix, b: &Vector) -> Result<Vector> {
    check_dim(a.dim(), b.len())?;
    Ok(cholesky_lower(a)?.solve(b))
}

pub fn log_det_psd(a: &PsdMatrix) -> Result<f64> {
    Ok(cholesky_lower(a)?.log_det())
}

pub fn invert_psd(a: &PsdMatrix) -> Result<PsdMatrix> {
    let l = cholesky_lower(a)?;
    let d = a.dim();
    let mut inv = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut e = Vector::zeros(d);
        e[j] = 1.0;
        inv.set_column(j, &l.solve(&e));
    }
    Ok(PsdMatrix::symmetrized(inv))
}

/// `(A - x x')^-1` from `A^-1` by Sherman-Morrison.
pub fn downdate_inverse(ainv: &PsdMatrix, x: &Vector) -> Result<PsdMatrix> {
    check_dim(ainv.dim(), x.len())?;
    let u = ainv.as_matrix() * x;
    let leverage = x.dot(&u);
    if leverage >= 1.0 - 1e-12 {
        return Err(Error::SingularDowndate { leverage });
    }
    let m = ainv.as_matrix() + (&u * u.transpose()) / (1.0 - leverage);
    Ok(PsdMatrix::symmetrized(m))
}

/// `(A + x x')^-1` from `A^-1` by Sherman-Morrison.
pub fn update_inverse(ainv: &PsdMatrix, x: &Vector) -> Result<PsdMatrix> {
    check_dim(ainv.dim(), x.len())?;
    let u = ainv.as_matrix() * x;
    let leverage = x.dot(&u);
    let m = ainv.as_matrix() - (&u * u.transpose()) / (1.0 + leverage);
    Ok(PsdMatrix::symmetrized(m))
}

/// Minimum-norm least squares solution `X^+ y`.
///
/// Singular values below `d * eps * sigma_max` are treated as zero.
pub fn pseudo_solve(x: &PointMatrix, y: &Vector) -> Result<Vector> {
    if x.nrows() == 0 {
        return Err(Error::BadShape("design matrix has no rows".into()));
    }
    check_dim(x.nrows(), y.len())?;
    let d = x.ncols();
    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let tol = rank_tolerance(&svd.singular_values, d);
    let mut w = Vector::zeros(d);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol && s > 0.0 {
            let coef = u.column(i).dot(y) / s;
            w += v_t.row(i).transpose() * coef;
        }
    }
    Ok(w)
}

fn rank_tolerance(singular_values: &Vector, d: usize) -> f64 {
    let sigma_max = singular_values.iter().cloned().fold(0.0, f64::max);
    d as f64 * f64::EPSILON * sigma_max
}

/// Number of singular values of `x` above `d eps sigma_max`, the cutoff
/// [`pseudo_solve`] uses.
pub fn numerical_rank(x: &PointMatrix) -> usize {
    if x.is_empty() {
        return 0;
    }
    let s = x.clone().singular_values();
    let tol = rank_tolerance(&s, x.ncols());
    s.iter().filter(|&&v| v > tol && v > 0.0).count()
}

/// `x' Sigma^-1 x`.
pub fn leverage_score(x: &Vector, sigma_hat: &PsdMatrix) -> Result<f64> {
    let z = solve_psd(sigma_hat, x)?;
    Ok(x.dot(&z).max(0.0))
}

/// `sum_i x_i x_i'`.
pub fn gram(points: &[Vector]) -> DMatrix<f64> {
    let d = points.first().map_or(0, |p| p.len());
    let mut g = DMatrix::zeros(d, d);
    for p in points {
        g.ger(1.0, p, p, 1.0);
    }
    g
}

/// Determinant of a Gram-type PSD matrix, 0 when it fails to factor.
pub fn gram_determinant(g: &DMatrix<f64>) -> f64 {
    gram_log_determinant(g).map_or(0.0, f64::exp)
}

/// `ln det` of a Gram-type PSD matrix, `None` when singular.
pub fn gram_log_determinant(g: &DMatrix<f64>) -> Option<f64> {
    cholesky_of(g).ok().map(|l| l.log_det())
}

/// Stack points as rows of a design matrix.
pub fn stack_rows(points: &[Vector]) -> PointMatrix {
    let d = points.first().map_or(0, |p| p.len());
    DMatrix::from_fn(points.len(), d, |i, j| points[i][j])
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}
