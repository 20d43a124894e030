//! Geometric symmetry of a tensegrity: node permutations that preserve the
//! bar/string graph, the orthogonal transform that realises them in space,
//! node orbits, and the invariant subspace basis built from them.
//!
//! Convention: with node coordinates as rows of `N` (n x 3) and a permutation
//! `p` whose matrix has `P[i][p(i)] = 1`, a symmetry satisfies
//! `(N - 1 c^T) R = P (N - 1 c^T)`, i.e. node `i` transformed by `R` lands on
//! node `p(i)`.

mod basis;
mod detect;
mod procrustes;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::structure::{ExternalForce, InitialConditions, MemberKind, TensegrityStructure};

pub use basis::{
    basis_eigen, basis_svd, build_s, max_principal_angle, BasisMethod, SymmetryBasis,
    DEFAULT_NULL_TOL,
};
pub use detect::{detect_permutations, DEFAULT_MAX_NODES};
pub use procrustes::{fit_rotation, RotationFit};

/// Default absolute tolerance (m) when checking the symmetry relation.
pub const DEFAULT_SYMMETRY_TOL: f64 = 1e-8;

/// A node permutation stored as an index map: node `i` goes to `self[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &j in &map {
            if j >= map.len() || seen[j] {
                return invalid(format!("{map:?} is not a permutation"));
            }
            seen[j] = true;
        }
        Ok(Self(map))
    }

    /// From a 1-based index list.
    pub fn from_one_based(map: &[usize]) -> Result<Self> {
        if map.iter().any(|&i| i == 0) {
            return invalid("1-based permutation contains 0");
        }
        Self::new(map.iter().map(|i| i - 1).collect())
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn image(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &j) in self.0.iter().enumerate() {
            inv[j] = i;
        }
        Self(inv)
    }

    /// `self` after `other`: `i -> self(other(i))`.
    pub fn compose(&self, other: &Self) -> Self {
        Self(other.0.iter().map(|&j| self.0[j]).collect())
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    /// Permutation matrix with `P[i][p(i)] = 1`, so `(P N)_i = N_{p(i)}`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.0.len();
        let mut p = DMatrix::zeros(n, n);
        for (i, &j) in self.0.iter().enumerate() {
            p[(i, j)] = 1.0;
        }
        p
    }

    /// `P A` without forming `P`.
    pub fn apply_rows(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(a.nrows(), a.ncols(), |i, c| a[(self.0[i], c)])
    }

    pub fn cycles(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.0.len()];
        let mut cycles = Vec::new();
        for start in 0..self.0.len() {
            if seen[start] {
                continue;
            }
            let mut cycle = vec![start];
            seen[start] = true;
            let mut j = self.0[start];
            while j != start {
                seen[j] = true;
                cycle.push(j);
                j = self.0[j];
            }
            cycles.push(cycle);
        }
        cycles
    }

    pub fn order(&self) -> usize {
        self.cycles().iter().map(Vec::len).fold(1, lcm)
    }

    /// Restriction to the node subset `ids` (positions follow `ids`).
    pub fn restrict(&self, ids: &[usize]) -> Result<Self> {
        let pos: HashMap<usize, usize> = ids.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let map = ids
            .iter()
            .map(|&i| {
                pos.get(&self.0[i]).copied().ok_or_else(|| {
                    crate::error::TsgError::Symmetry(format!(
                        "permutation maps node {i} outside the selected node set"
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(map)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    /// Proper rotation (`det R = +1`).
    Cyclic,
    /// Improper element (reflection or rotoreflection, `det R = -1`).
    DihedralElement,
}

/// One group element `(P, R)` about the symmetry center `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryAction {
    pub perm: Permutation,
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
    pub order: usize,
    pub kind: ActionKind,
}

impl SymmetryAction {
    pub fn new(perm: Permutation, rotation: Matrix3<f64>, center: Vector3<f64>) -> Result<Self> {
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if orth > 1e-10 || (det.abs() - 1.0).abs() > 1e-10 {
            return invalid(format!(
                "transform is not orthogonal (|R^T R - I| = {orth:e}, det = {det})"
            ));
        }
        let order = action_order(&perm, &rotation)?;
        let kind = if det > 0.0 { ActionKind::Cyclic } else { ActionKind::DihedralElement };
        Ok(Self { perm, rotation, center, order, kind })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            perm: Permutation::identity(n),
            rotation: Matrix3::identity(),
            center: Vector3::zeros(),
            order: 1,
            kind: ActionKind::Cyclic,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.perm.is_identity() && (self.rotation - Matrix3::identity()).amax() <= 1e-12
    }

    pub fn rotation_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(3, 3, self.rotation.iter().copied())
    }
}

fn action_order(perm: &Permutation, r: &Matrix3<f64>) -> Result<usize> {
    const MAX_ORDER: usize = 1024;
    let mut power = *r;
    let mut p = perm.clone();
    for k in 1..=MAX_ORDER {
        if p.is_identity() && (power - Matrix3::identity()).amax() <= 1e-9 {
            return Ok(k);
        }
        power *= r;
        p = p.compose(perm);
    }
    invalid(format!("action has no finite order below {MAX_ORDER}"))
}

/// Node-coordinate matrix (n x 3) from points.
pub fn coords_matrix(points: &[Vector3<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), 3, |i, c| points[i][c])
}

/// Reshape a node-major stacked vector into an n x 3 matrix.
pub fn unstack(n: &DVector<f64>) -> Result<DMatrix<f64>> {
    if n.len() % 3 != 0 {
        return dim_err(format!("stacked coordinate length {} is not a multiple of 3", n.len()));
    }
    Ok(DMatrix::from_fn(n.len() / 3, 3, |i, c| n[3 * i + c]))
}

/// Inverse of [`unstack`].
pub fn restack(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.transpose().iter().copied())
}

/// Mean of the rows of `m`.
pub fn centroid(m: &DMatrix<f64>) -> Vector3<f64> {
    let mut c = Vector3::zeros();
    if m.nrows() == 0 {
        return c;
    }
    for i in 0..m.nrows() {
        for d in 0..3 {
            c[d] += m[(i, d)];
        }
    }
    c / m.nrows() as f64
}

pub fn center_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let c = centroid(m);
    DMatrix::from_fn(m.nrows(), 3, |i, d| m[(i, d)] - c[d])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification {
    pub residual: f64,
    pub pass: bool,
}

/// Max-norm residual of `(N - 1c^T) R - P (N - 1c^T)` with `c` the centroid of `N`.
pub fn verify_symmetry(n: &DMatrix<f64>, perm: &Permutation, r: &Matrix3<f64>, tol: f64) -> Result<Verification> {
    if n.ncols() != 3 || n.nrows() != perm.len() {
        return dim_err(format!(
            "coordinates are {}x{}, permutation acts on {} nodes",
            n.nrows(),
            n.ncols(),
            perm.len()
        ));
    }
    let centered = center_rows(n);
    let residual = relation_residual(&centered, perm, r);
    Ok(Verification { residual, pass: residual <= tol })
}

/// `max |A R - P A|` for an n x 3 matrix `A` (no centering).
pub(crate) fn relation_residual(a: &DMatrix<f64>, perm: &Permutation, r: &Matrix3<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        let src = perm.image(i);
        for c in 0..3 {
            let rotated = a[(i, 0)] * r[(0, c)] + a[(i, 1)] * r[(1, c)] + a[(i, 2)] * r[(2, c)];
            worst = worst.max((rotated - a[(src, c)]).abs());
        }
    }
    worst
}

/// Check every element of a (not necessarily closed) group independently.
pub fn verify_group(q: &DMatrix<f64>, elements: &[SymmetryAction], tol: f64) -> Result<Vec<Verification>> {
    elements.iter().map(|e| verify_symmetry(q, &e.perm, &e.rotation, tol)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrbitDecomposition {
    pub orbits: Vec<Vec<usize>>,
}

/// Cycles of `p`, each listed from its smallest node, ordered by that node.
pub fn orbits(p: &Permutation) -> OrbitDecomposition {
    let mut orbits: Vec<Vec<usize>> = p.cycles();
    for o in &mut orbits {
        let k = o.iter().enumerate().min_by_key(|(_, v)| **v).map(|(k, _)| k).unwrap_or(0);
        o.rotate_left(k);
    }
    orbits.sort();
    OrbitDecomposition { orbits }
}

/// Group average `(1/k) sum_j (P^T)^j F R^j` over the cyclic group generated by
/// the action. The result satisfies `F R = P F`; for an involution this is
/// `(F + P F R) / 2`.
pub fn symmetrize_force(f0: &DMatrix<f64>, action: &SymmetryAction) -> Result<DMatrix<f64>> {
    if f0.ncols() != 3 || f0.nrows() != action.perm.len() {
        return dim_err(format!("force matrix is {}x{}", f0.nrows(), f0.ncols()));
    }
    let inv = action.perm.inverse();
    let r = action.rotation_dyn();
    let mut term = f0.clone();
    let mut acc = f0.clone();
    for _ in 1..action.order {
        term = inv.apply_rows(&term) * &r;
        acc += &term;
    }
    Ok(acc / action.order as f64)
}

/// Symmetrize a stacked force vector over the nodes it covers.
pub fn symmetrize_force_vec(f0: &DVector<f64>, action: &SymmetryAction) -> Result<DVector<f64>> {
    Ok(restack(&symmetrize_force(&unstack(f0)?, action)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Per-assumption outcome of [`validate_assumptions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub connectivity: Check,
    pub constraints: Check,
    pub gravity: Check,
    pub forces: Check,
    pub initial_conditions: Check,
    pub member_properties: Check,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.checks().iter().all(|(_, c)| c.pass)
    }

    pub fn checks(&self) -> [(&'static str, &Check); 6] {
        [
            ("connectivity", &self.connectivity),
            ("constraints", &self.constraints),
            ("gravity", &self.gravity),
            ("forces", &self.forces),
            ("initial_conditions", &self.initial_conditions),
            ("member_properties", &self.member_properties),
        ]
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks().iter().filter(|(_, c)| !c.pass).map(|(n, _)| *n).collect()
    }
}

fn member_map(structure: &TensegrityStructure) -> HashMap<(usize, usize), usize> {
    structure
        .members()
        .iter()
        .enumerate()
        .map(|(k, m)| ((m.nodes.0.min(m.nodes.1), m.nodes.0.max(m.nodes.1)), k))
        .collect()
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300)
}

/// Sample times used to check a time-dependent load for symmetry.
const FORCE_CHECK_TIMES: [f64; 8] = [0.0, 0.0731, 0.1919, 0.25, 0.4142, 0.5, 0.7071, 1.0];

/// Report whether the structure, loads and initial state are compatible with
/// the symmetry action (connectivity, constraints, gravity, loads, initial
/// state and per-orbit member properties).
pub fn validate_assumptions(
    structure: &TensegrityStructure,
    action: &SymmetryAction,
    external: &ExternalForce,
    ics: &InitialConditions,
    tol: f64,
) -> Result<AssumptionReport> {
    let n = structure.n_nodes();
    if action.perm.len() != n {
        return dim_err(format!("action acts on {} nodes, structure has {n}", action.perm.len()));
    }
    let p = &action.perm;
    let r = &action.rotation;
    let members = member_map(structure);

    // (a) graph and geometry
    let mut mismatched = Vec::new();
    for (k, m) in structure.members().iter().enumerate() {
        let (i, j) = (p.image(m.nodes.0), p.image(m.nodes.1));
        match members.get(&(i.min(j), i.max(j))) {
            Some(&img) if structure.members()[img].kind == m.kind => {}
            _ => mismatched.push(k),
        }
    }
    let geometry = verify_symmetry(&coords_matrix(structure.coords()), p, r, tol)?;
    let connectivity = Check::new(
        mismatched.is_empty() && geometry.pass,
        if mismatched.is_empty() {
            format!("bar/string graph preserved; geometric residual {:.3e}", geometry.residual)
        } else {
            format!("members {mismatched:?} are not mapped onto members of the same kind")
        },
    );

    // (b) constraint set
    let constrained: std::collections::HashSet<usize> = structure.constrained().iter().copied().collect();
    let escaping: Vec<usize> =
        structure.constrained().iter().copied().filter(|&i| !constrained.contains(&p.image(i))).collect();
    let constraints = Check::new(
        escaping.is_empty(),
        if escaping.is_empty() {
            "constrained set is invariant".to_string()
        } else {
            format!("constrained nodes {escaping:?} map onto free nodes")
        },
    );

    // (c) gravity
    let c = crate::structure::build_connectivity(structure)?;
    let g = crate::structure::assemble_gravity(&c, &structure.member_masses(), structure.gravity)?;
    let g_res = relation_residual(&unstack(&g)?, p, r);
    let g_scale = g.amax().max(1.0);
    let gravity = Check::new(g_res <= tol * g_scale, format!("gravity residual {g_res:.3e}"));

    // (d) external loads
    let mut f_res: f64 = 0.0;
    for &t in &FORCE_CHECK_TIMES {
        let f = external.eval(t);
        if f.len() != 3 * n {
            return dim_err(format!("external force has length {}, expected {}", f.len(), 3 * n));
        }
        let res = relation_residual(&unstack(&f)?, p, r) / f.amax().max(1.0);
        f_res = f_res.max(res);
    }
    let forces = Check::new(f_res <= tol, format!("relative load residual {f_res:.3e}"));

    // (e) initial state, positions and velocities relative to their centroids
    let phi = verify_symmetry(&unstack(&ics.phi)?, p, r, tol)?;
    let psi_scale = ics.psi.amax().max(1.0);
    let psi = verify_symmetry(&unstack(&ics.psi)?, p, r, tol * psi_scale)?;
    let initial_conditions = Check::new(
        phi.pass && psi.pass,
        format!("position residual {:.3e}, velocity residual {:.3e}", phi.residual, psi.residual),
    );

    // (f) member properties constant along member orbits
    let mut differing = Vec::new();
    for (k, m) in structure.members().iter().enumerate() {
        let (i, j) = (p.image(m.nodes.0), p.image(m.nodes.1));
        if let Some(&img) = members.get(&(i.min(j), i.max(j))) {
            let o = &structure.members()[img];
            let same = o.kind == m.kind
                && rel_close(o.youngs_modulus, m.youngs_modulus)
                && rel_close(o.area, m.area)
                && rel_close(o.rest_length, m.rest_length)
                && rel_close(o.mass, m.mass);
            if !same {
                differing.push(k);
            }
        }
    }
    let member_properties = Check::new(
        differing.is_empty(),
        if differing.is_empty() {
            "member properties uniform on orbits".to_string()
        } else {
            format!("members {differing:?} differ from their symmetric images")
        },
    );

    Ok(AssumptionReport { connectivity, constraints, gravity, forces, initial_conditions, member_properties })
}

/// Geometric symmetries realised by graph automorphisms: every non-identity
/// automorphism that keeps the free set invariant and admits an orthogonal
/// transform with residual `<= tol`.
pub fn candidate_actions(structure: &TensegrityStructure, max_nodes: usize, tol: f64) -> Result<Vec<SymmetryAction>> {
    let perms = detect_permutations(structure.n_nodes(), &structure.bar_pairs(), &structure.string_pairs(), max_nodes)?;
    let coords = coords_matrix(structure.coords());
    let center = centroid(&coords);
    let centered = center_rows(&coords);
    let mut out = Vec::new();
    for p in perms.into_iter().filter(|p| !p.is_identity()) {
        if p.restrict(structure.free()).is_err() {
            continue;
        }
        let fit = match fit_rotation(&centered, &p) {
            Ok(f) => f,
            Err(_) => continue,
        };
        if fit.residual > tol {
            continue;
        }
        out.push(SymmetryAction::new(p, fit.rotation, center)?);
    }
    Ok(out)
}

/// Pick the action used for reduction: among candidates whose full assumption
/// report passes, the one of smallest order, proper rotations first, then the
/// lexicographically smallest permutation.
pub fn select_action(
    structure: &TensegrityStructure,
    candidates: &[SymmetryAction],
    external: &ExternalForce,
    ics: &InitialConditions,
    tol: f64,
) -> Result<Option<SymmetryAction>> {
    let mut valid = Vec::new();
    for a in candidates {
        if validate_assumptions(structure, a, external, ics, tol)?.all_pass() {
            valid.push(a);
        }
    }
    valid.sort_by(|a, b| rank_key(a).cmp(&rank_key(b)));
    Ok(valid.first().map(|a| (*a).clone()))
}

fn rank_key(a: &SymmetryAction) -> (usize, bool, &Permutation) {
    (a.order, a.kind == ActionKind::DihedralElement, &a.perm)
}

/// Sort actions by the preference used in [`select_action`].
pub fn rank_actions(actions: &mut [SymmetryAction]) {
    actions.sort_by(|a, b| rank_key(a).cmp(&rank_key(b)));
}

/// `symmetry.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryFile {
    /// 0-based image list: node `i` maps to `permutation[i]`.
    pub permutation: Vec<usize>,
    /// Row-major 3x3 transform.
    pub rotation: [f64; 9],
    pub center: [f64; 3],
    pub orbits: Vec<Vec<usize>>,
    pub residual: f64,
    pub n_r: usize,
    pub order: usize,
    pub kind: ActionKind,
}

impl SymmetryFile {
    pub fn from_action(action: &SymmetryAction, residual: f64, n_r: usize) -> Self {
        let r = &action.rotation;
        Self {
            permutation: action.perm.as_slice().to_vec(),
            rotation: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            center: [action.center.x, action.center.y, action.center.z],
            orbits: orbits(&action.perm).orbits,
            residual,
            n_r,
            order: action.order,
            kind: action.kind,
        }
    }

    pub fn to_action(&self) -> Result<SymmetryAction> {
        let perm = Permutation::new(self.permutation.clone())?;
        let r = Matrix3::from_row_slice(&self.rotation);
        SymmetryAction::new(perm, r, Vector3::from(self.center))
    }
}

/// Kind-aware adjacency used by permutation search and tests.
pub(crate) fn kind_code(kind: MemberKind) -> u8 {
    match kind {
        MemberKind::Bar => 1,
        MemberKind::String => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tbar_perm() -> Permutation {
        Permutation::from_one_based(&[3, 4, 1, 2]).unwrap()
    }

    #[test]
    fn permutation_matrix_convention() {
        let p = tbar_perm();
        let pm = p.matrix();
        assert_eq!(pm[(0, 2)], 1.0);
        assert_eq!(pm[(2, 0)], 1.0);
        assert_eq!((pm.transpose() * &pm), DMatrix::identity(4, 4));
        let a = DMatrix::from_fn(4, 3, |i, c| (3 * i + c) as f64);
        assert_eq!(p.apply_rows(&a), &pm * &a);
    }

    #[test]
    fn orbit_examples() {
        assert_eq!(orbits(&tbar_perm()).orbits, vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(orbits(&Permutation::identity(3)).orbits, vec![vec![0], vec![1], vec![2]]);
        let lander = Permutation::from_one_based(&[3, 4, 1, 2, 6, 5, 8, 7, 12, 11, 10, 9]).unwrap();
        let o = orbits(&lander).orbits;
        assert_eq!(o.len(), 6);
        assert!(o.iter().all(|c| c.len() == 2));
        assert_eq!(o, vec![vec![0, 2], vec![1, 3], vec![4, 5], vec![6, 7], vec![8, 11], vec![9, 10]]);
    }

    #[test]
    fn order_and_inverse() {
        let p = Permutation::new(vec![1, 2, 0, 4, 3]).unwrap();
        assert_eq!(p.order(), 6);
        assert!(p.compose(&p.inverse()).is_identity());
        assert!(Permutation::new(vec![0, 0]).is_err());
    }

    #[test]
    fn restrict_rejects_mixing() {
        let p = tbar_perm();
        assert_eq!(p.restrict(&[0, 2]).unwrap().as_slice(), &[1, 0]);
        assert!(p.restrict(&[0, 1]).is_err());
    }

    #[test]
    fn identity_action_has_zero_residual() {
        let n = DMatrix::from_fn(5, 3, |i, c| ((i * 7 + c * 3) % 5) as f64 * 0.3 - 0.2);
        let v = verify_symmetry(&n, &Permutation::identity(5), &Matrix3::identity(), 0.0).unwrap();
        assert_eq!(v.residual, 0.0);
        assert!(v.pass);
    }

    #[test]
    fn empty_group_is_vacuous() {
        let n = DMatrix::zeros(2, 3);
        assert!(verify_group(&n, &[], 1e-9).unwrap().is_empty());
    }

    #[test]
    fn symmetrize_fixed_point_and_zero() {
        let action = SymmetryAction::new(
            tbar_perm(),
            Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)),
            Vector3::zeros(),
        )
        .unwrap();
        let zero = DMatrix::zeros(4, 3);
        assert_eq!(symmetrize_force(&zero, &action).unwrap(), zero);
        let sym = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 3.0, -4.0, 5.0, 6.0, -1.0, -2.0, 3.0, 4.0, -5.0, 6.0]);
        assert_eq!(symmetrize_force(&sym, &action).unwrap(), sym);
    }

    #[test]
    fn action_order_of_quarter_turn() {
        let r = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let a = SymmetryAction::new(Permutation::new(vec![1, 2, 3, 0]).unwrap(), r, Vector3::zeros()).unwrap();
        assert_eq!(a.order, 4);
        assert_eq!(a.kind, ActionKind::Cyclic);
        assert!(SymmetryAction::new(Permutation::identity(4), r * 1.1, Vector3::zeros()).is_err());
    }
}
