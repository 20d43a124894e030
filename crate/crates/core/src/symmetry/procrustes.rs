use nalgebra::{DMatrix, Matrix3};

use super::{relation_residual, Permutation};
use crate::error::{dim_err, Result, TsgError};

/// Relative singular-value threshold below which the coordinate cloud is
/// treated as lower-dimensional.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RotationFit {
    pub rotation: Matrix3<f64>,
    /// `max |N R - P N|`.
    pub residual: f64,
    /// The nodes are coplanar, so the transform along the plane normal is not
    /// determined by the data; the proper (`det = +1`) completion is returned.
    pub planar: bool,
}

/// Orthogonal `R` minimising `||N R - P N||_F` for centered coordinates `N`.
///
/// Full-rank clouds get the unique orthogonal Procrustes solution, which may
/// be improper. Coplanar clouds get the proper completion. Collinear or
/// degenerate clouds are rejected.
pub fn fit_rotation(n: &DMatrix<f64>, perm: &Permutation) -> Result<RotationFit> {
    if n.ncols() != 3 || n.nrows() != perm.len() {
        return dim_err(format!("coordinates are {}x{} for {} nodes", n.nrows(), n.ncols(), perm.len()));
    }
    let sv = n.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let rank = sv.iter().filter(|s| **s > RANK_TOL * smax.max(f64::MIN_POSITIVE)).count();

    if perm.is_identity() && rank >= 2 {
        return Ok(RotationFit { rotation: Matrix3::identity(), residual: 0.0, planar: rank == 2 });
    }
    if rank < 2 {
        return Err(TsgError::Numerical(format!(
            "coordinate matrix has rank {rank}; the transform is not unique"
        )));
    }

    let pn = perm.apply_rows(n);
    let m_dyn = n.transpose() * pn;
    let m = Matrix3::from_iterator(m_dyn.iter().copied());
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(TsgError::Numerical("SVD failed in rotation fit".into())),
    };
    let mut rotation = u * v_t;
    if rank == 2 && rotation.determinant() < 0.0 {
        // flip the direction paired with the vanishing singular value
        let k = (0..3)
            .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
            .unwrap_or(2);
        let mut d = Matrix3::identity();
        d[(k, k)] = -1.0;
        rotation = u * d * v_t;
    }
    let residual = relation_residual(n, perm, &rotation);
    Ok(RotationFit { rotation, residual, planar: rank == 2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symmetry::center_rows;

    #[test]
    fn identity_permutation_gives_identity() {
        let n = center_rows(&DMatrix::from_row_slice(4, 3, &[1.0, 0.2, 0.3, -0.4, 1.0, 0.1, 0.3, -0.7, 1.0, 0.0, 0.0, 0.0]));
        let fit = fit_rotation(&n, &Permutation::identity(4)).unwrap();
        assert_eq!(fit.rotation, Matrix3::identity());
        assert_eq!(fit.residual, 0.0);
    }

    #[test]
    fn planar_half_turn() {
        let n = DMatrix::from_row_slice(4, 3, &[0.5, 0.0, 0.0, 0.0, 0.5, 0.0, -0.5, 0.0, 0.0, 0.0, -0.5, 0.0]);
        let p = Permutation::from_one_based(&[3, 4, 1, 2]).unwrap();
        let fit = fit_rotation(&n, &p).unwrap();
        assert!(fit.planar);
        let expected = Matrix3::from_diagonal(&nalgebra::Vector3::new(-1.0, -1.0, 1.0));
        assert!((fit.rotation - expected).amax() < 1e-14);
        assert!(fit.residual < 1e-15);
    }

    #[test]
    fn collinear_is_rejected() {
        let n = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        let p = Permutation::new(vec![1, 0]).unwrap();
        assert!(fit_rotation(&n, &p).is_err());
    }
}
