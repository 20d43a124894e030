//! Free-node and symmetry reductions, the integrator, and oracle equivalence.

mod common;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use tsg::dynamics::{
    centralize, integrate, integrate_full, integrate_reduced, reconstruct, reduce_free, reduce_sym, uniform_grid,
    ConstrainedMotion, SecondOrderSystem, Trajectory,
};
use tsg::structure::{AssembledSystem, ExternalForce};
use tsg::symmetry::{unstack, verify_symmetry, SymmetryBasis};

#[test]
fn free_mass_is_the_selected_block() {
    let p = common::pipeline("tbar");
    let a = &p.assembled;
    assert_eq!(p.free.mass, a.e_a.transpose() * &a.mass * &a.e_a);
    // all nodes free: E_a is the identity
    assert_eq!(p.free.mass, a.mass);
}

#[test]
fn unloaded_free_system_has_no_load() {
    let s = common::structure("tbar");
    let a = AssembledSystem::assemble(&s, ExternalForce::zero(12)).unwrap();
    let free = reduce_free(&a, &s.initial_conditions(), &ConstrainedMotion::Static).unwrap();
    assert_eq!(free.load(&free.q0, 0.3).unwrap().amax(), 0.0);
}

#[test]
fn reduced_systems_have_the_stated_sizes() {
    let tbar = common::pipeline("tbar");
    assert_eq!(tbar.reduced.dim(), 6);
    let lander = common::pipeline("lander");
    assert_eq!(lander.reduced.dim(), 18);
    let m = lander.reduced.m_r();
    assert!((m - m.transpose()).amax() <= 1e-12);
}

#[test]
fn identity_basis_reproduces_the_free_system() {
    let p = common::pipeline("tbar");
    let reduced = reduce_sym(&p.free, &SymmetryBasis::identity(12)).unwrap();
    let grid = uniform_grid(0.2, 21).unwrap();
    let a = integrate_full(&p.free, &grid, 1e-3).unwrap().trajectory;
    let b = integrate_reduced(&reduced, &grid, 1e-3).unwrap().trajectory;
    assert_eq!(a.sup_distance(&b).unwrap(), 0.0);
}

#[test]
fn full_and_reduced_integration_agree() {
    for name in ["tbar", "lander"] {
        let p = common::pipeline(name);
        let grid = uniform_grid(1.0, 1001).unwrap();
        let start = Instant::now();
        let full = integrate_full(&p.free, &grid, 1e-3).unwrap().trajectory;
        let z = integrate_reduced(&p.reduced, &grid, 1e-3).unwrap().trajectory;
        let lifted = reconstruct(&p.basis, &z).unwrap();
        assert!(start.elapsed().as_secs_f64() < 10.0);
        let sup = full.sup_distance(&lifted).unwrap();
        assert!(sup <= 1e-5, "{name}: sup distance {sup:e}");
    }
}

#[test]
fn full_trajectory_stays_in_the_invariant_subspace() {
    for name in ["tbar", "lander"] {
        let p = common::pipeline(name);
        let u = &p.basis.u;
        let proj = DMatrix::identity(u.nrows(), u.nrows()) - u * u.transpose();
        let full = integrate_full(&p.free, &uniform_grid(1.0, 101).unwrap(), 1e-3).unwrap().trajectory;
        let worst = full.states.iter().map(|s| (&proj * s).amax()).fold(0.0, f64::max);
        assert!(worst <= 1e-6, "{name}: {worst:e}");
    }
}

#[test]
fn reconstruction_has_the_closed_form_structure() {
    // n_a = (1/sqrt 2) [z; (I_2 (x) R) z] in the closed-form basis, so the
    // second node pair is the first rotated, for any basis of the same span
    let p = common::pipeline("tbar");
    let r = common::tbar_rotation();
    let z = DVector::from_fn(6, |i, _| 0.1 * i as f64 - 0.2);
    let n = &p.basis.u * &z;
    for k in 0..2 {
        let first = n.fixed_rows::<3>(3 * k).into_owned();
        let second = n.fixed_rows::<3>(6 + 3 * k).into_owned();
        assert!((second - r * first).amax() <= 1e-14);
    }
    let closed = common::tbar_closed_form_basis();
    let n = &closed * &z;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    assert!((n.rows(0, 6) - &z * s).amax() <= 1e-15);
    assert!((p.basis.u.transpose() * (&p.basis.u * &z) - &z).amax() <= 1e-13);
    let zero = Trajectory::new(vec![0.0], vec![DVector::zeros(6)], None).unwrap();
    assert_eq!(reconstruct(&p.basis, &zero).unwrap().states[0], DVector::zeros(12));
}

#[test]
fn zero_reduced_state_stays_zero() {
    let z = SecondOrderSystem::linear(
        DMatrix::identity(6, 6),
        DMatrix::zeros(6, 6),
        DMatrix::identity(6, 6),
        |_| DVector::zeros(6),
        DVector::zeros(6),
        DVector::zeros(6),
    )
    .unwrap();
    let out = integrate(&z, &uniform_grid(1.0, 11).unwrap(), 1e-3).unwrap();
    assert!(out.trajectory.states.iter().all(|s| s.amax() == 0.0));
}

#[test]
fn centred_ground_truth_is_symmetric() {
    for name in ["tbar", "lander"] {
        let p = common::pipeline(name);
        let truth = common::truth(&p);
        let a = &p.action;
        for s in truth.states.iter().step_by(50) {
            let v = verify_symmetry(&unstack(s).unwrap(), &a.perm, &a.rotation, 1e-8).unwrap();
            assert!(v.pass, "{name}: residual {:e}", v.residual);
        }
        assert!(centralize(&truth).unwrap().sup_distance(&truth).unwrap() <= 1e-15);
    }
}

#[test]
fn fixture_motion_is_not_trivial() {
    // the held-out error of a still or a linear predictor is far above the quality bar
    for name in ["tbar", "lander"] {
        let p = common::pipeline(name);
        let truth = common::truth(&p);
        let n0 = &truth.states[0];
        let num: f64 = truth.states.iter().map(|s| (s - n0).norm_squared()).sum();
        let den: f64 = truth.states.iter().map(|s| s.norm_squared()).sum();
        assert!((num / den).sqrt() > 0.05, "{name}");
    }
}

fn oscillator_error(dt: f64) -> f64 {
    let sys = SecondOrderSystem::linear(
        DMatrix::identity(1, 1),
        DMatrix::zeros(1, 1),
        DMatrix::from_element(1, 1, 1.0),
        |_| DVector::zeros(1),
        DVector::from_element(1, 1.0),
        DVector::zeros(1),
    )
    .unwrap();
    let grid = uniform_grid(10.0, 11).unwrap();
    let out = integrate(&sys, &grid, dt).unwrap().trajectory;
    grid.iter().zip(&out.states).map(|(t, s)| (s[0] - t.cos()).abs()).fold(0.0, f64::max)
}

#[test]
fn integrator_is_fourth_order() {
    for dt in [0.1, 0.05] {
        let ratio = oscillator_error(dt) / oscillator_error(dt / 2.0);
        assert!((14.0..=18.0).contains(&ratio), "dt {dt}: ratio {ratio}");
    }
}

#[test]
fn undamped_energy_is_conserved() {
    let p = common::pipeline("tbar");
    let drift = p.simulate(&uniform_grid(1.0, 1001).unwrap(), 1e-3).unwrap().1.unwrap();
    assert!(drift <= 1e-4, "drift {drift:e}");
}

#[test]
fn trajectory_csv_round_trip() {
    let p = common::pipeline("tbar");
    let truth = p.simulate(&uniform_grid(0.1, 11).unwrap(), 1e-3).unwrap().0;
    let mut buf = Vec::new();
    truth.write_csv(&mut buf).unwrap();
    let back = Trajectory::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, truth);
}
