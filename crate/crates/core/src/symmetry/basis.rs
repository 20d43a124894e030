//! Symmetry basis: orthonormal columns spanning `null(S)` with
//! `S = I ⊗ R^T - P ⊗ I_3` acting on node-major stacked coordinates.

use nalgebra::{Complex, DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::Permutation;
use crate::error::{dim_err, Result, TsgError};

pub const DEFAULT_NULL_TOL: f64 = 1e-6;

/// Tolerance for matching eigenvalues of `P` and `R^T` on the unit circle.
const EIGEN_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisMethod {
    EigenPair,
    SvdNullspace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryBasis {
    /// `3 n_a x n_r`, orthonormal columns.
    pub u: DMatrix<f64>,
    pub n_r: usize,
    pub method: BasisMethod,
    pub tol: f64,
    /// Singular values were found close to the cut-off (within a factor 10).
    pub gap_warning: bool,
}

impl SymmetryBasis {
    /// Basis of the whole space (no reduction).
    pub fn identity(dim: usize) -> Self {
        Self { u: DMatrix::identity(dim, dim), n_r: dim, method: BasisMethod::SvdNullspace, tol: 0.0, gap_warning: false }
    }

    pub fn full_dim(&self) -> usize {
        self.u.nrows()
    }

    /// `max |U^T U - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.u.transpose() * &self.u - DMatrix::<f64>::identity(self.n_r, self.n_r)).amax()
    }

    /// `max |S U|`.
    pub fn null_residual(&self, s: &DMatrix<f64>) -> f64 {
        (s * &self.u).amax()
    }
}

/// `S = I_{n_a} ⊗ R^T - P ⊗ I_3` for a permutation restricted to the free nodes.
pub fn build_s(p_free: &Permutation, r: &Matrix3<f64>) -> DMatrix<f64> {
    let n = p_free.len();
    let rt = r.transpose();
    let mut s = DMatrix::zeros(3 * n, 3 * n);
    for i in 0..n {
        for a in 0..3 {
            for b in 0..3 {
                s[(3 * i + a, 3 * i + b)] += rt[(a, b)];
            }
            s[(3 * i + a, 3 * p_free.image(i) + a)] -= 1.0;
        }
    }
    s
}

/// Right singular vectors of `S` whose singular values are `<= tol`.
pub fn basis_svd(s: &DMatrix<f64>, tol: f64) -> Result<SymmetryBasis> {
    let m = s.nrows();
    if s.ncols() != m {
        return dim_err(format!("S must be square, got {}x{}", m, s.ncols()));
    }
    if s.iter().all(|v| *v == 0.0) {
        return Ok(SymmetryBasis { tol, method: BasisMethod::SvdNullspace, ..SymmetryBasis::identity(m) });
    }
    let svd = s.clone().svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| TsgError::Numerical("SVD did not return V".into()))?;
    let sigma = &svd.singular_values;
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let null: Vec<usize> = order.iter().copied().filter(|&k| sigma[k] <= tol).collect();
    let gap_warning = sigma.iter().any(|&x| x > tol / 10.0 && x < tol * 10.0);
    if gap_warning {
        log::warn!("singular values of S lie within a factor 10 of the cut-off {tol:e}");
    }
    let mut u = DMatrix::zeros(m, null.len());
    for (col, &k) in null.iter().enumerate() {
        u.set_column(col, &v_t.row(k).transpose());
    }
    Ok(SymmetryBasis { n_r: null.len(), u, method: BasisMethod::SvdNullspace, tol, gap_warning })
}

/// Eigenpairs of a permutation matrix, built cycle by cycle: a cycle of
/// length `L` contributes `lambda = exp(2 pi i k / L)` with eigenvector
/// `v_{a_j} = lambda^j / sqrt(L)` along the cycle `a_0 -> a_1 -> ...`.
pub(crate) fn permutation_eigenpairs(p: &Permutation) -> Vec<(Complex<f64>, DVector<Complex<f64>>)> {
    let n = p.len();
    let mut out = Vec::with_capacity(n);
    for cycle in p.cycles() {
        let len = cycle.len();
        let norm = 1.0 / (len as f64).sqrt();
        for k in 0..len {
            let lambda = root_of_unity(k, len);
            let mut v = DVector::from_element(n, Complex::new(0.0, 0.0));
            for (j, &node) in cycle.iter().enumerate() {
                v[node] = root_of_unity(j * k % len, len) * norm;
            }
            out.push((lambda, v));
        }
    }
    out
}

fn root_of_unity(k: usize, n: usize) -> Complex<f64> {
    if 4 * k == n {
        return Complex::new(0.0, 1.0);
    }
    if 2 * k == n {
        return Complex::new(-1.0, 0.0);
    }
    if 4 * k == 3 * n {
        return Complex::new(0.0, -1.0);
    }
    if k == 0 {
        return Complex::new(1.0, 0.0);
    }
    Complex::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / n as f64)
}

/// Orthonormal eigenpairs of a 3x3 orthogonal matrix `a`.
///
/// The real eigenvalue `det(a)` has an axis `e`; on the orthogonal plane `a`
/// acts as a planar rotation, which is either `±I` (two real eigenvectors) or
/// has the conjugate pair `c ± i s` with eigenvectors `(b1 ∓ i b2)/sqrt 2`.
pub(crate) fn orthogonal3_eigenpairs(a: &Matrix3<f64>) -> Vec<(Complex<f64>, [Complex<f64>; 3])> {
    let det_sign = a.determinant().signum();
    let shifted = a - Matrix3::identity() * det_sign;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let k = (0..3)
        .min_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]))
        .unwrap_or(2);
    let axis: Vector3<f64> = v_t.row(k).transpose().normalize();

    let pick = (0..3).min_by(|&x, &y| axis[x].abs().total_cmp(&axis[y].abs())).unwrap_or(0);
    let mut seed = Vector3::zeros();
    seed[pick] = 1.0;
    let b1 = (seed - axis * axis.dot(&seed)).normalize();
    let b2 = axis.cross(&b1);

    let ab1 = a * b1;
    let c = b1.dot(&ab1);
    let s = b2.dot(&ab1);

    let real = |v: Vector3<f64>| [Complex::new(v.x, 0.0), Complex::new(v.y, 0.0), Complex::new(v.z, 0.0)];
    let mut out = vec![(Complex::new(det_sign, 0.0), real(axis))];
    if s.abs() <= 1e-12 {
        let lam = Complex::new(c.signum(), 0.0);
        out.push((lam, real(b1)));
        out.push((lam, real(b2)));
    } else {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let w: [Complex<f64>; 3] = std::array::from_fn(|i| Complex::new(b1[i] * h, -b2[i] * h));
        let w_bar: [Complex<f64>; 3] = std::array::from_fn(|i| w[i].conj());
        out.push((Complex::new(c, s), w));
        out.push((Complex::new(c, -s), w_bar));
    }
    out
}

/// Basis from common eigenvalues of `P` and `R^T`: each matching pair
/// contributes `v ⊗ w`, and the complex vectors are realised through their
/// real and imaginary parts.
pub fn basis_eigen(p_free: &Permutation, r: &Matrix3<f64>) -> Result<SymmetryBasis> {
    let n = p_free.len();
    let dim = 3 * n;
    let p_pairs = permutation_eigenpairs(p_free);
    let r_pairs = orthogonal3_eigenpairs(&r.transpose());

    let mut complex_basis: Vec<DVector<Complex<f64>>> = Vec::new();
    for (lp, v) in &p_pairs {
        for (lr, w) in &r_pairs {
            if (lp - lr).norm() > EIGEN_MATCH_TOL {
                continue;
            }
            let u = DVector::from_fn(dim, |idx, _| v[idx / 3] * w[idx % 3]);
            complex_basis.push(u);
        }
    }
    let n_r = complex_basis.len();
    if n_r == 0 {
        return Err(TsgError::Symmetry("P and R^T share no eigenvalue; the invariant subspace is trivial".into()));
    }

    let mut accepted: Vec<DVector<f64>> = Vec::with_capacity(n_r);
    for u in &complex_basis {
        for part in [u.map(|c| c.re), u.map(|c| c.im)] {
            if accepted.len() == n_r {
                break;
            }
            if let Some(q) = orthogonalize(&part, &accepted) {
                accepted.push(q);
            }
        }
    }
    if accepted.len() != n_r {
        return Err(TsgError::Numerical(format!(
            "realification produced {} vectors for a {n_r}-dimensional eigenspace",
            accepted.len()
        )));
    }
    let u = DMatrix::from_columns(&accepted);
    Ok(SymmetryBasis { u, n_r, method: BasisMethod::EigenPair, tol: EIGEN_MATCH_TOL, gap_warning: false })
}

/// Two passes of Gram-Schmidt against `basis`; `None` when `x` is dependent.
fn orthogonalize(x: &DVector<f64>, basis: &[DVector<f64>]) -> Option<DVector<f64>> {
    let norm0 = x.norm();
    if norm0 < 1e-10 {
        return None;
    }
    let mut y = x.clone();
    for _ in 0..2 {
        for b in basis {
            let d = b.dot(&y);
            y.axpy(-d, b, 1.0);
        }
    }
    let norm = y.norm();
    if norm < 1e-8 * norm0.max(1.0) {
        return None;
    }
    Some(y / norm)
}

/// Largest principal angle between the column spans of two orthonormal bases,
/// computed as `asin ||(I - A A^T) B||_2` (accurate for small angles).
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if b.ncols() == 0 {
        return 0.0;
    }
    let residual = b - a * (a.transpose() * b);
    let s = residual.svd(false, false).singular_values.max();
    s.min(1.0).asin()
}
