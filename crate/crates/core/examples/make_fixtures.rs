//! Regenerates `fixtures/tbar.json` and `fixtures/lander.json`.
//!
//!     cargo run --example make_fixtures -- crates/core/fixtures
//!
//! Both structures are prestressed into self-equilibrium: member force
//! densities are solved from the node balance and rest lengths follow from
//! `x = EA (1/l0 - 1/l)`. Initial velocities and loads are symmetric under
//! the structure's half-turn so the reduced model applies. Both start at
//! rest from a symmetric distortion that keeps bar lengths fixed.

use std::path::PathBuf;

use nalgebra::{DVector, Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsg::structure::{LoadSpec, MaterialSpec, RayleighDamping, StructureFile};
use tsg::symmetry::{symmetrize_force, Permutation, SymmetryAction};

/// Half bar length of the raw lander coordinates; spacing is 2.
const HALF: f64 = 2.0;
/// Initial turns of the two T-bar bars about z (rad). Unequal angles leave
/// the half-turn about z as the only symmetry of the start state.
const SHORT: f64 = 0.4;
const DELTA: [f64; 2] = [0.15, -0.1];
/// Initial twist of every lander bar about its radial line (rad).
const TWIST: f64 = 0.15;
/// Amplitude and frequency of the periodic lander load (N, Hz).
const LOAD: f64 = 0.003;
const FREQ: f64 = 1.0;

struct Spec {
    nodes: Vec<Vector3<f64>>,
    bars: Vec<[usize; 2]>,
    strings: Vec<[usize; 2]>,
    bar: (f64, f64, f64),
    string: (f64, f64, f64),
    /// Tension carried by every string (N).
    string_tension: f64,
}

/// Force densities `(x_bar, x_string)` putting the structure in
/// self-equilibrium with the given string tension.
fn prestress(spec: &Spec) -> (f64, f64) {
    let n = spec.nodes.len();
    let balance = |members: &[[usize; 2]]| {
        let mut u = DVector::<f64>::zeros(3 * n);
        for &[i, j] in members {
            let d = spec.nodes[i] - spec.nodes[j];
            for a in 0..3 {
                u[3 * i + a] += d[a];
                u[3 * j + a] -= d[a];
            }
        }
        u
    };
    let (ub, us) = (balance(&spec.bars), balance(&spec.strings));
    let ratio = -us.dot(&ub) / ub.dot(&ub);
    let residual = (&ub * ratio + &us).amax();
    assert!(residual < 1e-12, "no uniform self-stress: residual {residual:e}");
    let [i, j] = spec.strings[0];
    let x_s = spec.string_tension / (spec.nodes[i] - spec.nodes[j]).norm();
    (ratio * x_s, x_s)
}

fn materials(spec: &Spec) -> Vec<MaterialSpec> {
    let (x_b, x_s) = prestress(spec);
    let member = |&[i, j]: &[usize; 2], (e, a, m): (f64, f64, f64), x: f64| {
        let l = (spec.nodes[i] - spec.nodes[j]).norm();
        MaterialSpec {
            youngs_modulus: e,
            area: a,
            rest_length: Some(1.0 / (x / (e * a) + 1.0 / l)),
            mass: Some(m),
            density: None,
        }
    };
    spec.bars
        .iter()
        .map(|b| member(b, spec.bar, x_b))
        .chain(spec.strings.iter().map(|s| member(s, spec.string, x_s)))
        .collect()
}

fn rows(v: &[Vector3<f64>]) -> Vec<[f64; 3]> {
    v.iter().map(|p| [p.x, p.y, p.z]).collect()
}

/// Planar cross: two bars on the diagonals of a square of strings.
fn tbar() -> StructureFile {
    let nodes = vec![
        Vector3::new(0.5, 0.0, 0.0),
        Vector3::new(0.0, SHORT, 0.0),
        Vector3::new(-0.5, 0.0, 0.0),
        Vector3::new(0.0, -SHORT, 0.0),
    ];
    let spec = Spec {
        nodes: nodes.clone(),
        bars: vec![[0, 2], [1, 3]],
        strings: vec![[0, 1], [1, 2], [2, 3], [3, 0]],
        // light elastic members: (E, A, member mass)
        bar: (8.1e9, 1e-9, 0.01),
        string: (2.0e6, 1e-8, 2e-5),
        string_tension: 0.002,
    };
    // released from rest with the bars scissored about z
    let start: Vec<Vector3<f64>> = nodes
        .iter()
        .enumerate()
        .map(|(i, p)| Rotation3::new(Vector3::z() * DELTA[i % 2]) * p)
        .collect();
    StructureFile {
        name: Some("tbar".into()),
        nodes: rows(&start),
        bars: spec.bars.clone(),
        strings: spec.strings.clone(),
        materials: materials(&spec),
        free: Some(vec![0, 1, 2, 3]),
        constrained: Some(vec![]),
        gravity: 0.0,
        damping: RayleighDamping::default(),
        velocities: Some(vec![[0.0; 3]; 4]),
        load: None,
    }
}

/// Six-bar expanded octahedron. Bars come in three parallel pairs (nodes
/// `4k..4k+4`) spaced at half the bar length, which is the equilibrium
/// shape with 24 equal strings. Coordinates are turned so the half-turn
/// axis, the original z axis, points along (0, 1, 2) / sqrt(5).
fn lander() -> StructureFile {
    let raw = [
        (0.0, 1.0, HALF),
        (0.0, 1.0, -HALF),
        (0.0, -1.0, HALF),
        (0.0, -1.0, -HALF),
        (HALF, 0.0, 1.0),
        (-HALF, 0.0, 1.0),
        (HALF, 0.0, -1.0),
        (-HALF, 0.0, -1.0),
        (1.0, HALF, 0.0),
        (1.0, -HALF, 0.0),
        (-1.0, HALF, 0.0),
        (-1.0, -HALF, 0.0),
    ];
    let theta = -(1.0 / 5f64.sqrt()).asin();
    let q = Matrix3::new(1.0, 0.0, 0.0, 0.0, theta.cos(), -theta.sin(), 0.0, theta.sin(), theta.cos());
    let nodes: Vec<Vector3<f64>> = raw.iter().map(|&(x, y, z)| q * Vector3::new(x, y, z) / (2.0 * HALF)).collect();
    let axis = q * Vector3::z();

    let bars = vec![[0, 1], [2, 3], [4, 5], [6, 7], [8, 9], [10, 11]];
    let mut strings = Vec::new();
    for i in 0..12 {
        for j in i + 1..12 {
            let d = (nodes[i] - nodes[j]).norm() * 2.0 * HALF;
            if (d - 6f64.sqrt()).abs() < 1e-9 && i / 4 != j / 4 {
                strings.push([i, j]);
            }
        }
    }
    assert_eq!(strings.len(), 24);

    let spec = Spec {
        nodes: nodes.clone(),
        bars: bars.clone(),
        strings: strings.clone(),
        // light elastic members: (E, A, member mass)
        bar: (1.0e9, 1e-9, 0.01),
        string: (1.0e6, 1e-8, 2e-5),
        string_tension: 0.002,
    };

    // released from rest with every bar twisted by TWIST about its radial line
    let mut start = nodes.clone();
    for &[i, j] in &bars {
        let mid = (nodes[i] + nodes[j]) / 2.0;
        let twist = Rotation3::new(mid.normalize() * TWIST);
        start[i] = mid + twist * (nodes[i] - mid);
        start[j] = mid + twist * (nodes[j] - mid);
    }

    let perm = Permutation::from_one_based(&[3, 4, 1, 2, 6, 5, 8, 7, 12, 11, 10, 9]).unwrap();
    let rotation = 2.0 * axis * axis.transpose() - Matrix3::identity();
    let action = SymmetryAction::new(perm, rotation, Vector3::zeros()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let f0 = nalgebra::DMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0));
    let mut f = symmetrize_force(&f0, &action).unwrap() * LOAD;
    // zero net force keeps the centroid at rest
    let mean = f.row_mean();
    for mut r in f.row_iter_mut() {
        r -= &mean;
    }
    let pattern = (0..12).map(|i| [f[(i, 0)], f[(i, 1)], f[(i, 2)]]).collect();

    StructureFile {
        name: Some("lander".into()),
        nodes: rows(&start),
        bars,
        strings,
        materials: materials(&spec),
        free: Some((0..12).collect()),
        constrained: Some(vec![]),
        gravity: 0.0,
        damping: RayleighDamping::default(),
        velocities: Some(vec![[0.0; 3]; 12]),
        load: Some(LoadSpec { pattern, frequency: FREQ, phase: 0.0, symmetrize: false }),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crates/core/fixtures".into()));
    std::fs::create_dir_all(&dir)?;
    for (name, file) in [("tbar.json", tbar()), ("lander.json", lander())] {
        let path = dir.join(name);
        std::fs::write(&path, serde_json::to_string_pretty(&file)? + "\n")?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
