//! Symmetry detection, verification and basis construction on the fixtures.

mod common;

use std::time::Instant;

use nalgebra::{DMatrix, Matrix3, Vector3};
use proptest::prelude::*;
use tsg::pipeline::{choose_action, external_force, symmetry_basis};
use tsg::structure::{ExternalForce, StructureFile, TensegrityStructure};
use tsg::symmetry::{
    basis_eigen, basis_svd, build_s, candidate_actions, center_rows, coords_matrix, detect_permutations, fit_rotation,
    max_principal_angle, orbits, symmetrize_force, validate_assumptions, verify_group, verify_symmetry, BasisMethod,
    Permutation, SymmetryAction, DEFAULT_MAX_NODES, DEFAULT_NULL_TOL, DEFAULT_SYMMETRY_TOL,
};

fn perms(name: &str) -> Vec<Permutation> {
    let s = common::structure(name);
    detect_permutations(s.n_nodes(), &s.bar_pairs(), &s.string_pairs(), DEFAULT_MAX_NODES).unwrap()
}

#[test]
fn detected_permutations_contain_the_stated_ones() {
    let tbar = perms("tbar");
    assert!(tbar.iter().any(|p| p.is_identity()));
    assert!(tbar.contains(&Permutation::from_one_based(&common::TBAR_PERM).unwrap()));
    let lander = perms("lander");
    assert!(lander.contains(&Permutation::from_one_based(&common::LANDER_PERM).unwrap()));
}

#[test]
fn detected_permutations_preserve_member_kinds() {
    for name in ["tbar", "lander"] {
        let s = common::structure(name);
        let norm = |(a, b): (usize, usize)| (a.min(b), a.max(b));
        let mut bars: Vec<_> = s.bar_pairs().into_iter().map(norm).collect();
        let mut strings: Vec<_> = s.string_pairs().into_iter().map(norm).collect();
        bars.sort();
        strings.sort();
        for p in perms(name) {
            for (set, label) in [(&bars, "bar"), (&strings, "string")] {
                let mut mapped: Vec<_> = set.iter().map(|&(a, b)| norm((p.image(a), p.image(b)))).collect();
                mapped.sort();
                assert_eq!(&mapped, set, "{name}: {label} set not preserved by {:?}", p.as_slice());
            }
        }
    }
}

#[test]
fn fitted_rotations_match_stated_matrices() {
    for (name, r) in [("tbar", common::tbar_rotation()), ("lander", common::lander_rotation())] {
        let s = common::structure(name);
        let n = center_rows(&coords_matrix(s.coords()));
        let fit = fit_rotation(&n, &common::stated_action(name).perm).unwrap();
        assert!((fit.rotation - r).amax() <= 1e-9, "{name}: {}", fit.rotation);
        assert!(fit.residual <= 1e-12);
    }
}

#[test]
fn selection_picks_the_stated_action() {
    for name in ["tbar", "lander"] {
        let choice = choose_action(&common::structure(name), DEFAULT_SYMMETRY_TOL).unwrap();
        let want = common::stated_action(name);
        assert!(choice.report.all_pass(), "{name}: {:?}", choice.report.failures());
        assert_eq!(choice.action.perm, want.perm, "{name}");
        assert!((choice.action.rotation - want.rotation).amax() <= 1e-9);
    }
}

#[test]
fn exact_configuration_verifies_and_perturbation_fails() {
    // node i mapped by R^T lands on node p(i): build the T-bar pairs exactly
    let r = common::tbar_rotation();
    let a = Vector3::new(0.31, 0.07, 0.12);
    let b = Vector3::new(-0.05, 0.44, -0.12);
    let pts = [a, b, r.transpose() * a, r.transpose() * b];
    let mut n = coords_matrix(&pts);
    let p = Permutation::from_one_based(&common::TBAR_PERM).unwrap();
    let v = verify_symmetry(&n, &p, &r, 1e-12).unwrap();
    assert!(v.pass && v.residual <= 1e-12);
    n[(1, 0)] += 1e-3;
    let v = verify_symmetry(&n, &p, &r, 1e-6).unwrap();
    assert!(!v.pass && v.residual >= 1e-3 / 2.0);
}

#[test]
fn c2_group_verifies_on_tbar() {
    let n = coords_matrix(common::structure("tbar").coords());
    let group = [SymmetryAction::identity(4), common::stated_action("tbar")];
    assert!(verify_group(&n, &group, 1e-10).unwrap().iter().all(|v| v.pass));
}

#[test]
fn prism_reflection_verifies() {
    // square prism: corners (+-1, +-1) at z = 0 and z = 1
    let pts: Vec<Vector3<f64>> = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
        .iter()
        .flat_map(|&(x, y)| [Vector3::new(x, y, 0.0), Vector3::new(x, y, 1.0)])
        .collect();
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
    let map: Vec<usize> =
        pts.iter().map(|p| pts.iter().position(|q| (s.transpose() * p - q).norm() < 1e-12).unwrap()).collect();
    let action = SymmetryAction::new(Permutation::new(map).unwrap(), s, Vector3::zeros()).unwrap();
    let v = verify_group(&coords_matrix(&pts), &[action], 1e-12).unwrap();
    assert!(v[0].pass);
}

#[test]
fn orbit_decompositions() {
    let tbar = orbits(&Permutation::from_one_based(&common::TBAR_PERM).unwrap());
    assert_eq!(tbar.orbits, vec![vec![0, 2], vec![1, 3]]);
    let lander = orbits(&Permutation::from_one_based(&common::LANDER_PERM).unwrap());
    assert_eq!(lander.orbits.len(), 6);
    assert!(lander.orbits.iter().all(|o| o.len() == 2));
}

fn rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().filter(|s| **s > 1e-9).count()
}

#[test]
fn s_has_the_stated_nullity() {
    for (name, nullity) in [("tbar", 6), ("lander", 18)] {
        let a = common::stated_action(name);
        let s = build_s(&a.perm, &a.rotation);
        assert_eq!(s.ncols() - rank(&s), nullity, "{name}");
    }
}

#[test]
fn tbar_bases_span_the_closed_form() {
    let s = common::structure("tbar");
    let a = common::stated_action("tbar");
    let closed = common::tbar_closed_form_basis();
    assert!((closed.transpose() * &closed - DMatrix::identity(6, 6)).amax() <= 1e-15);
    for method in [BasisMethod::SvdNullspace, BasisMethod::EigenPair] {
        let start = Instant::now();
        let b = symmetry_basis(&s, &a, method, DEFAULT_NULL_TOL).unwrap();
        assert!(start.elapsed().as_secs_f64() < 1.0);
        assert_eq!(b.n_r, 6);
        assert!(b.orthonormality_error() <= 1e-12, "{method:?}");
        assert!(b.null_residual(&build_s(&a.perm, &a.rotation)) <= 1e-8, "{method:?}");
        assert!(max_principal_angle(&b.u, &closed) <= 1e-8, "{method:?}");
    }
}

#[test]
fn eigen_and_svd_bases_agree_on_lander() {
    let a = common::stated_action("lander");
    let svd = basis_svd(&build_s(&a.perm, &a.rotation), 1e-6).unwrap();
    let eig = basis_eigen(&a.perm, &a.rotation).unwrap();
    assert_eq!((svd.n_r, eig.n_r), (18, 18));
    assert!(max_principal_angle(&svd.u, &eig.u) <= 1e-8);
}

fn structure_file(name: &str) -> StructureFile {
    serde_json::from_str(&std::fs::read_to_string(common::fixture(name)).unwrap()).unwrap()
}

#[test]
fn assumption_checks_on_fixtures_and_violations() {
    for name in ["tbar", "lander"] {
        let s = common::structure(name);
        let a = common::stated_action(name);
        let report = validate_assumptions(&s, &a, &external_force(&s, Some(&a)).unwrap(), &s.initial_conditions(), 1e-8)
            .unwrap();
        assert!(report.all_pass(), "{name}: {:?}", report.failures());
    }

    let s = common::structure("tbar");
    let a = common::stated_action("tbar");
    let mut pattern = DMatrix::zeros(4, 3);
    pattern[(0, 0)] = 1.0;
    let point = ExternalForce::periodic(&pattern, 1.0, 0.3);
    let report = validate_assumptions(&s, &a, &point, &s.initial_conditions(), 1e-8).unwrap();
    assert_eq!(report.failures(), vec!["forces"]);

    // string (1, 2) maps onto string (3, 4); stiffen only the first
    let mut f = structure_file("tbar");
    f.materials[2].youngs_modulus *= 1.5;
    let s = TensegrityStructure::from_file(f).unwrap();
    let report = validate_assumptions(&s, &a, &ExternalForce::zero(12), &s.initial_conditions(), 1e-8).unwrap();
    assert!(report.failures().contains(&"member_properties"));
}

#[test]
fn asymmetric_start_has_no_valid_action() {
    let mut f = structure_file("tbar");
    f.velocities = Some(vec![[0.1, 0.0, 0.0], [0.0; 3], [0.0; 3], [0.0; 3]]);
    let s = TensegrityStructure::from_file(f).unwrap();
    let choice = choose_action(&s, DEFAULT_SYMMETRY_TOL).unwrap();
    assert!(choice.report.failures().contains(&"initial_conditions"));
    assert!(!candidate_actions(&s, DEFAULT_MAX_NODES, DEFAULT_SYMMETRY_TOL).unwrap().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn symmetrized_forces_are_invariant(values in prop::collection::vec(-10.0f64..10.0, 36), lander in any::<bool>()) {
        let (name, n) = if lander { ("lander", 12) } else { ("tbar", 4) };
        let a = common::stated_action(name);
        let f0 = DMatrix::from_row_slice(n, 3, &values[..3 * n]);
        let f = symmetrize_force(&f0, &a).unwrap();
        let pfr = a.perm.matrix() * &f * a.rotation_dyn();
        prop_assert!((pfr - &f).amax() <= 1e-12);
        // averaging is idempotent
        prop_assert!((symmetrize_force(&f, &a).unwrap() - &f).amax() <= 1e-12);
    }

    #[test]
    fn invariant_subspace_is_equivariant(coeffs in prop::collection::vec(-1.0f64..1.0, 18), lander in any::<bool>()) {
        // any U z satisfies the symmetry relation about the origin
        let name = if lander { "lander" } else { "tbar" };
        let a = common::stated_action(name);
        let b = basis_svd(&build_s(&a.perm, &a.rotation), 1e-6).unwrap();
        let z = nalgebra::DVector::from_column_slice(&coeffs[..b.n_r]);
        let n = tsg::symmetry::unstack(&(&b.u * z)).unwrap();
        let lhs = &n * a.rotation_dyn();
        prop_assert!((lhs - a.perm.matrix() * &n).amax() <= 1e-12);
    }
}
