//! Fixture loading shared by the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, Matrix3};
use tsg::dynamics::{uniform_grid, Trajectory};
use tsg::pipeline::Pipeline;
use tsg::structure::TensegrityStructure;
use tsg::symmetry::{Permutation, SymmetryAction};

pub const TBAR_PERM: [usize; 4] = [3, 4, 1, 2];
pub const LANDER_PERM: [usize; 12] = [3, 4, 1, 2, 6, 5, 8, 7, 12, 11, 10, 9];

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.json"))
}

pub fn structure(name: &str) -> TensegrityStructure {
    TensegrityStructure::load(fixture(name)).expect("fixture loads")
}

pub fn tbar_rotation() -> Matrix3<f64> {
    Matrix3::from_diagonal(&nalgebra::Vector3::new(-1.0, -1.0, 1.0))
}

pub fn lander_rotation() -> Matrix3<f64> {
    Matrix3::new(-1.0, 0.0, 0.0, 0.0, -0.6, 0.8, 0.0, 0.8, 0.6)
}

/// The action stated for each fixture, about the origin.
pub fn stated_action(name: &str) -> SymmetryAction {
    let (perm, r) = match name {
        "tbar" => (Permutation::from_one_based(&TBAR_PERM).unwrap(), tbar_rotation()),
        "lander" => (Permutation::from_one_based(&LANDER_PERM).unwrap(), lander_rotation()),
        _ => panic!("unknown fixture {name}"),
    };
    SymmetryAction::new(perm, r, nalgebra::Vector3::zeros()).unwrap()
}

pub fn pipeline(name: &str) -> Pipeline {
    Pipeline::with_action(structure(name), stated_action(name)).expect("pipeline builds")
}

/// Ground truth on the standard grid: 1001 samples over one second.
pub fn truth(p: &Pipeline) -> Trajectory {
    p.simulate(&uniform_grid(1.0, 1001).unwrap(), 1e-3).unwrap().0
}

/// `(1/sqrt 2) [I_6; I_2 (x) R]` for the T-bar half-turn.
pub fn tbar_closed_form_basis() -> DMatrix<f64> {
    let r = tbar_rotation();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    DMatrix::from_fn(12, 6, |i, j| {
        if i < 6 {
            if i == j { s } else { 0.0 }
        } else {
            let (bi, bj) = ((i - 6) / 3, j / 3);
            if bi == bj { s * r[((i - 6) % 3, j % 3)] } else { 0.0 }
        }
    })
}
