//! Fixture-level checks of the structural operators.

mod common;

use nalgebra::DVector;
use tsg::structure::{
    assemble_mass, assemble_stiffness, build_connectivity, force_density, kron_i3, partition_selectors, AssembledSystem,
    ExternalForce, StructureFile, TensegrityStructure,
};

fn file(name: &str) -> StructureFile {
    serde_json::from_str(&std::fs::read_to_string(common::fixture(name)).unwrap()).unwrap()
}

#[test]
fn tbar_incidence_rows_sum_to_zero() {
    let c = build_connectivity(&common::structure("tbar")).unwrap().to_dense();
    assert_eq!(c.shape(), (6, 4));
    for row in c.row_iter() {
        assert_eq!(row.sum(), 0.0);
        assert_eq!(row.iter().filter(|v| **v != 0.0).count(), 2);
    }
}

#[test]
fn empty_member_list_is_rejected() {
    let mut f = file("tbar");
    f.bars.clear();
    f.strings.clear();
    f.materials.clear();
    let err = TensegrityStructure::from_file(f).unwrap_err();
    assert!(err.to_string().contains("no members"), "{err}");
}

#[test]
fn tbar_partial_partition_selectors() {
    let mut f = file("tbar");
    f.free = Some(vec![0, 1]);
    f.constrained = Some(vec![2, 3]);
    let s = TensegrityStructure::from_file(f).unwrap();
    let (e_a, e_b) = partition_selectors(&s).unwrap();
    assert_eq!(e_a.transpose() * &e_a, nalgebra::DMatrix::identity(6, 6));
    assert_eq!((e_a.transpose() * &e_b).amax(), 0.0);
}

#[test]
fn stiffness_rows_sum_to_zero_on_fixtures() {
    for name in ["tbar", "lander"] {
        let s = common::structure(name);
        let c = build_connectivity(&s).unwrap();
        let x = force_density(&s, &s.stacked_coords(), 0.0).unwrap();
        let k = assemble_stiffness(&c, &x).unwrap();
        for row in k.row_iter() {
            assert!(row.sum().abs() <= 1e-12 * x.amax(), "{name}");
        }
    }
}

#[test]
fn mass_matrix_matches_incidence_formula() {
    // M_s = (|C|^T diag(m) |C| + diag(|C|^T m)) / 6
    for name in ["tbar", "lander"] {
        let s = common::structure(name);
        let c = build_connectivity(&s).unwrap();
        let m = s.member_masses();
        let abs_c = c.to_dense().abs();
        let diag = nalgebra::DMatrix::from_diagonal(&(abs_c.transpose() * &m));
        let oracle = (abs_c.transpose() * nalgebra::DMatrix::from_diagonal(&m) * &abs_c + diag) / 6.0;
        let ms = assemble_mass(&c, &m).unwrap();
        assert!((ms - oracle).amax() <= 1e-15, "{name}");
    }
}

#[test]
fn fixtures_are_prestressed() {
    // bars push and strings never push; the scissored T-bar start leaves some strings slack
    for name in ["tbar", "lander"] {
        let s = common::structure(name);
        let x = force_density(&s, &s.stacked_coords(), 0.0).unwrap();
        let n_bars = s.bars().count();
        assert!(x.rows(0, n_bars).iter().all(|v| *v < 0.0), "{name} bars");
        let strings = x.rows(n_bars, x.len() - n_bars);
        assert!(strings.iter().all(|v| *v >= 0.0), "{name} strings");
        assert!(strings.iter().any(|v| *v > 0.0), "{name} taut");
    }
}

#[test]
fn assembled_stiffness_is_kronecker_lift() {
    let s = common::structure("lander");
    let a = AssembledSystem::assemble(&s, ExternalForce::zero(36)).unwrap();
    let n = s.stacked_coords() + DVector::from_fn(36, |i, _| 1e-3 * ((i * 7 % 11) as f64 - 5.0));
    let k = a.stiffness(&n, 0.0).unwrap();
    assert_eq!(k, kron_i3(&a.stiffness_s(&n, 0.0).unwrap()));
    assert!((&k - k.transpose()).amax() == 0.0);
}
