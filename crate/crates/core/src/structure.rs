//! Tensegrity topology, materials and the assembly of the global mass,
//! stiffness and gravity operators.
//!
//! Coordinates are stacked node-major: `n = [x1 y1 z1 x2 y2 z2 ...]`, so the
//! three-dimensional operators are Kronecker products of the node-level
//! matrices with `I_3`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result, TsgError};

pub const DEFAULT_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemberKind {
    Bar,
    String,
}

/// Material entry of the structure file, one per member (bars first, then
/// strings, each in file order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    #[serde(rename = "E")]
    pub youngs_modulus: f64,
    #[serde(rename = "A")]
    pub area: f64,
    /// Defaults to the member length in the initial configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rest_length: Option<f64>,
    /// Lumped member mass (kg). Takes precedence over `density`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    /// Linear density (kg/m); mass = density * rest length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
}

/// Time-periodic external load `F(t) = pattern * sin(2 pi f t + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub pattern: Vec<[f64; 3]>,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
    /// Group-average the pattern under the detected symmetry before use.
    #[serde(default)]
    pub symmetrize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RayleighDamping {
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
}

/// On-disk structure document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub nodes: Vec<[f64; 3]>,
    #[serde(default)]
    pub bars: Vec<[usize; 2]>,
    #[serde(default)]
    pub strings: Vec<[usize; 2]>,
    pub materials: Vec<MaterialSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constrained: Option<Vec<usize>>,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    #[serde(default)]
    pub damping: RayleighDamping,
    /// Initial nodal velocities; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocities: Option<Vec<[f64; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load: Option<LoadSpec>,
}

fn default_gravity() -> f64 {
    DEFAULT_GRAVITY
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub nodes: (usize, usize),
    pub kind: MemberKind,
    pub youngs_modulus: f64,
    pub area: f64,
    pub rest_length: f64,
    pub mass: f64,
}

impl Member {
    pub fn axial_stiffness(&self) -> f64 {
        self.youngs_modulus * self.area
    }
}

/// A validated tensegrity: geometry, members (bars before strings) and the
/// free/constrained node partition.
#[derive(Debug, Clone, PartialEq)]
pub struct TensegrityStructure {
    pub name: String,
    coords: Vec<Vector3<f64>>,
    members: Vec<Member>,
    n_bars: usize,
    free: Vec<usize>,
    constrained: Vec<usize>,
    pub gravity: f64,
    pub damping: RayleighDamping,
    velocities: Vec<Vector3<f64>>,
    pub load: Option<LoadSpec>,
}

impl TensegrityStructure {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let file: StructureFile = serde_json::from_str(&text)?;
        Self::from_file(file)
    }

    pub fn from_file(file: StructureFile) -> Result<Self> {
        let n_nodes = file.nodes.len();
        if n_nodes == 0 {
            return invalid("structure has no nodes");
        }
        let coords: Vec<Vector3<f64>> = file.nodes.iter().map(|p| Vector3::from(*p)).collect();
        if coords.iter().any(|c| !c.iter().all(|v| v.is_finite())) {
            return invalid("non-finite node coordinate");
        }

        let pairs: Vec<(usize, usize, MemberKind)> = file
            .bars
            .iter()
            .map(|b| (b[0], b[1], MemberKind::Bar))
            .chain(file.strings.iter().map(|s| (s[0], s[1], MemberKind::String)))
            .collect();
        let raw: Vec<(usize, usize)> = pairs.iter().map(|&(i, j, _)| (i, j)).collect();
        check_members(n_nodes, &raw)?;
        if file.materials.len() != pairs.len() {
            return invalid(format!(
                "expected {} material entries (one per member), found {}",
                pairs.len(),
                file.materials.len()
            ));
        }

        let mut members = Vec::with_capacity(pairs.len());
        for (k, (&(i, j, kind), mat)) in pairs.iter().zip(&file.materials).enumerate() {
            let length = (coords[i] - coords[j]).norm();
            let rest_length = mat.rest_length.unwrap_or(length);
            if !(rest_length > 0.0) || !rest_length.is_finite() {
                return invalid(format!("member {k}: rest length must be positive"));
            }
            if !(mat.youngs_modulus >= 0.0) || !(mat.area >= 0.0) {
                return invalid(format!("member {k}: E and A must be nonnegative"));
            }
            let mass = match (mat.mass, mat.density) {
                (Some(m), _) => m,
                (None, Some(rho)) => rho * rest_length,
                (None, None) => return invalid(format!("member {k}: missing mass or density")),
            };
            if !(mass > 0.0) || !mass.is_finite() {
                return invalid(format!("member {k}: nonpositive member mass"));
            }
            members.push(Member {
                nodes: (i, j),
                kind,
                youngs_modulus: mat.youngs_modulus,
                area: mat.area,
                rest_length,
                mass,
            });
        }

        let (free, constrained) = resolve_partition(n_nodes, file.free, file.constrained)?;

        let velocities = match file.velocities {
            Some(v) if v.len() != n_nodes => {
                return invalid(format!("expected {n_nodes} velocities, found {}", v.len()))
            }
            Some(v) => v.iter().map(|p| Vector3::from(*p)).collect(),
            None => vec![Vector3::zeros(); n_nodes],
        };
        if let Some(load) = &file.load {
            if load.pattern.len() != n_nodes {
                return invalid(format!(
                    "load pattern needs {n_nodes} rows, found {}",
                    load.pattern.len()
                ));
            }
        }
        if !file.gravity.is_finite() {
            return invalid("gravity must be finite");
        }

        Ok(Self {
            name: file.name.unwrap_or_else(|| "structure".into()),
            coords,
            members,
            n_bars: file.bars.len(),
            free,
            constrained,
            gravity: file.gravity,
            damping: file.damping,
            velocities,
            load: file.load,
        })
    }

    /// Inverse of [`from_file`](Self::from_file) for resolved values.
    pub fn to_file(&self) -> StructureFile {
        let pair = |m: &Member| [m.nodes.0, m.nodes.1];
        StructureFile {
            name: Some(self.name.clone()),
            nodes: self.coords.iter().map(|c| [c.x, c.y, c.z]).collect(),
            bars: self.bars().map(pair).collect(),
            strings: self.strings().map(pair).collect(),
            materials: self
                .members
                .iter()
                .map(|m| MaterialSpec {
                    youngs_modulus: m.youngs_modulus,
                    area: m.area,
                    rest_length: Some(m.rest_length),
                    mass: Some(m.mass),
                    density: None,
                })
                .collect(),
            free: Some(self.free.clone()),
            constrained: Some(self.constrained.clone()),
            gravity: self.gravity,
            damping: self.damping,
            velocities: Some(self.velocities.iter().map(|c| [c.x, c.y, c.z]).collect()),
            load: self.load.clone(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn coords(&self) -> &[Vector3<f64>] {
        &self.coords
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn bars(&self) -> impl Iterator<Item = &Member> {
        self.members[..self.n_bars].iter()
    }

    pub fn strings(&self) -> impl Iterator<Item = &Member> {
        self.members[self.n_bars..].iter()
    }

    pub fn bar_pairs(&self) -> Vec<(usize, usize)> {
        self.bars().map(|m| m.nodes).collect()
    }

    pub fn string_pairs(&self) -> Vec<(usize, usize)> {
        self.strings().map(|m| m.nodes).collect()
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn constrained(&self) -> &[usize] {
        &self.constrained
    }

    pub fn member_masses(&self) -> DVector<f64> {
        DVector::from_iterator(self.members.len(), self.members.iter().map(|m| m.mass))
    }

    /// Initial coordinates stacked node-major (length `3 n_n`).
    pub fn stacked_coords(&self) -> DVector<f64> {
        stack(&self.coords)
    }

    pub fn initial_conditions(&self) -> InitialConditions {
        InitialConditions { phi: stack(&self.coords), psi: stack(&self.velocities) }
    }

    pub fn velocities(&self) -> &[Vector3<f64>] {
        &self.velocities
    }

    /// Replace the initial velocity field.
    pub fn set_velocities(&mut self, v: Vec<Vector3<f64>>) -> Result<()> {
        if v.len() != self.n_nodes() {
            return dim_err(format!("expected {} velocities, got {}", self.n_nodes(), v.len()));
        }
        self.velocities = v;
        Ok(())
    }

    /// Elastic strain energy of the configuration `n` (slack strings store none).
    pub fn strain_energy(&self, n: &DVector<f64>) -> Result<f64> {
        check_len(n, 3 * self.n_nodes(), "coordinate vector")?;
        let mut energy = 0.0;
        for m in &self.members {
            let len = member_length(n, m.nodes);
            let stretch = len - m.rest_length;
            if m.kind == MemberKind::String && stretch < 0.0 {
                continue;
            }
            energy += 0.5 * m.axial_stiffness() / m.rest_length * stretch * stretch;
        }
        Ok(energy)
    }
}

fn resolve_partition(
    n_nodes: usize,
    free: Option<Vec<usize>>,
    constrained: Option<Vec<usize>>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let complement = |set: &[usize]| -> Vec<usize> {
        let s: HashSet<usize> = set.iter().copied().collect();
        (0..n_nodes).filter(|i| !s.contains(i)).collect()
    };
    let (mut free, mut constrained) = match (free, constrained) {
        (None, None) => ((0..n_nodes).collect(), Vec::new()),
        (Some(f), None) => {
            let c = complement(&f);
            (f, c)
        }
        (None, Some(c)) => {
            let f = complement(&c);
            (f, c)
        }
        (Some(f), Some(c)) => (f, c),
    };
    free.sort_unstable();
    constrained.sort_unstable();
    let mut seen = vec![false; n_nodes];
    for &i in free.iter().chain(&constrained) {
        if i >= n_nodes {
            return invalid(format!("node index {i} out of range"));
        }
        if seen[i] {
            return invalid(format!("node {i} listed twice in free/constrained sets"));
        }
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return invalid("free and constrained sets do not cover every node");
    }
    Ok((free, constrained))
}

fn check_members(n_nodes: usize, members: &[(usize, usize)]) -> Result<()> {
    if members.is_empty() {
        return invalid("no members");
    }
    let mut seen = HashSet::new();
    for (k, &(i, j)) in members.iter().enumerate() {
        if i >= n_nodes || j >= n_nodes {
            return invalid(format!("member {k} references a node outside 0..{n_nodes}"));
        }
        if i == j {
            return invalid(format!("member {k} is a self-loop on node {i}"));
        }
        if !seen.insert((i.min(j), i.max(j))) {
            return invalid(format!("duplicate member ({i}, {j})"));
        }
    }
    Ok(())
}

pub(crate) fn stack(v: &[Vector3<f64>]) -> DVector<f64> {
    DVector::from_iterator(3 * v.len(), v.iter().flat_map(|c| [c.x, c.y, c.z]))
}

pub(crate) fn check_len(v: &DVector<f64>, n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return dim_err(format!("{what}: expected length {n}, got {}", v.len()));
    }
    Ok(())
}

fn member_length(n: &DVector<f64>, (i, j): (usize, usize)) -> f64 {
    let d = n.fixed_rows::<3>(3 * i) - n.fixed_rows::<3>(3 * j);
    d.norm()
}

/// Signed incidence matrix: row `k` holds `+1` at the first node of member `k`
/// and `-1` at the second.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectivityMatrix {
    n_nodes: usize,
    rows: Vec<(usize, usize)>,
}

impl ConnectivityMatrix {
    pub fn from_members(n_nodes: usize, members: &[(usize, usize)]) -> Result<Self> {
        check_members(n_nodes, members)?;
        Ok(Self { n_nodes, rows: members.to_vec() })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_members(&self) -> usize {
        self.rows.len()
    }

    pub fn members(&self) -> &[(usize, usize)] {
        &self.rows
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.rows.len(), self.n_nodes);
        for (k, &(i, j)) in self.rows.iter().enumerate() {
            c[(k, i)] = 1.0;
            c[(k, j)] = -1.0;
        }
        c
    }
}

pub fn build_connectivity(structure: &TensegrityStructure) -> Result<ConnectivityMatrix> {
    let pairs: Vec<(usize, usize)> = structure.members.iter().map(|m| m.nodes).collect();
    ConnectivityMatrix::from_members(structure.n_nodes(), &pairs)
}

fn check_masses(c: &ConnectivityMatrix, masses: &DVector<f64>) -> Result<()> {
    if masses.len() != c.n_members() {
        return dim_err(format!("{} member masses for {} members", masses.len(), c.n_members()));
    }
    if let Some(k) = masses.iter().position(|m| !(*m > 0.0) || !m.is_finite()) {
        return invalid(format!("nonpositive member mass at member {k}"));
    }
    Ok(())
}

/// Consistent node-level mass matrix `M_s = (|C|^T diag(m) |C| + diag part) / 6`.
pub fn assemble_mass(c: &ConnectivityMatrix, masses: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_masses(c, masses)?;
    let mut ms = DMatrix::zeros(c.n_nodes, c.n_nodes);
    for (&(i, j), &m) in c.rows.iter().zip(masses.iter()) {
        ms[(i, i)] += m / 3.0;
        ms[(j, j)] += m / 3.0;
        ms[(i, j)] += m / 6.0;
        ms[(j, i)] += m / 6.0;
    }
    Ok(ms)
}

/// Gravity load vector: every member puts half its weight on each end node,
/// along `+z` (it enters the dynamics with a minus sign).
pub fn assemble_gravity(
    c: &ConnectivityMatrix,
    masses: &DVector<f64>,
    gravity_const: f64,
) -> Result<DVector<f64>> {
    if masses.len() != c.n_members() {
        return dim_err(format!("{} member masses for {} members", masses.len(), c.n_members()));
    }
    if masses.iter().any(|m| *m < 0.0 || !m.is_finite()) {
        return invalid("negative member mass");
    }
    let mut g = DVector::zeros(3 * c.n_nodes);
    for (&(i, j), &m) in c.rows.iter().zip(masses.iter()) {
        g[3 * i + 2] += 0.5 * gravity_const * m;
        g[3 * j + 2] += 0.5 * gravity_const * m;
    }
    Ok(g)
}

/// Linear-elastic force densities `x = EA (1/l0 - 1/l)`; strings cannot carry
/// compression and are clamped at zero.
pub fn force_density(structure: &TensegrityStructure, n: &DVector<f64>, _t: f64) -> Result<DVector<f64>> {
    check_len(n, 3 * structure.n_nodes(), "coordinate vector")?;
    let mut x = DVector::zeros(structure.n_members());
    for (k, m) in structure.members.iter().enumerate() {
        let len = member_length(n, m.nodes);
        if !(len > 0.0) {
            return Err(TsgError::Numerical(format!(
                "member {k} has zero length (nodes {} and {} coincide)",
                m.nodes.0, m.nodes.1
            )));
        }
        let q = m.axial_stiffness() * (1.0 / m.rest_length - 1.0 / len);
        x[k] = match m.kind {
            MemberKind::String => q.max(0.0),
            MemberKind::Bar => q,
        };
    }
    Ok(x)
}

/// Node-level stiffness `K_s = C^T diag(x) C`.
pub fn assemble_stiffness(c: &ConnectivityMatrix, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    if x.len() != c.n_members() {
        return dim_err(format!("{} force densities for {} members", x.len(), c.n_members()));
    }
    let mut ks = DMatrix::zeros(c.n_nodes, c.n_nodes);
    for (&(i, j), &q) in c.rows.iter().zip(x.iter()) {
        ks[(i, i)] += q;
        ks[(j, j)] += q;
        ks[(i, j)] -= q;
        ks[(j, i)] -= q;
    }
    Ok(ks)
}

/// `A ⊗ I_3`.
pub fn kron_i3(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(&DMatrix::<f64>::identity(3, 3))
}

/// Selection matrices `(E_a, E_b)` with `n = E_a n_a + E_b n_b`.
pub fn partition_selectors(structure: &TensegrityStructure) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = structure.n_nodes();
    let overlap: HashSet<usize> = structure.free.iter().copied().collect();
    if structure.constrained.iter().any(|c| overlap.contains(c)) {
        return invalid("free and constrained sets overlap");
    }
    Ok((selector(n, &structure.free), selector(n, &structure.constrained)))
}

pub(crate) fn selector(n_nodes: usize, ids: &[usize]) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(3 * n_nodes, 3 * ids.len());
    for (col, &node) in ids.iter().enumerate() {
        for d in 0..3 {
            e[(3 * node + d, 3 * col + d)] = 1.0;
        }
    }
    e
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialConditions {
    pub phi: DVector<f64>,
    pub psi: DVector<f64>,
}

/// External load `f_ex(t)` as a closure over time.
#[derive(Clone)]
pub struct ExternalForce {
    dim: usize,
    f: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
}

impl fmt::Debug for ExternalForce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalForce").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl ExternalForce {
    pub fn zero(dim: usize) -> Self {
        Self { dim, f: Arc::new(move |_| DVector::zeros(dim)) }
    }

    pub fn from_fn(dim: usize, f: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static) -> Self {
        Self { dim, f: Arc::new(f) }
    }

    /// `F(t) = pattern * sin(2 pi f t + phase)` with `pattern` an `n x 3` matrix.
    pub fn periodic(pattern: &DMatrix<f64>, frequency: f64, phase: f64) -> Self {
        let base = DVector::from_iterator(pattern.len(), pattern.transpose().iter().copied());
        let dim = base.len();
        Self::from_fn(dim, move |t| {
            &base * (2.0 * std::f64::consts::PI * frequency * t + phase).sin()
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        (self.f)(t)
    }
}

/// Global operators of the full (unreduced) dynamics
/// `M n'' + D n' + K(n, t) n - f_ex(t) + g = 0`.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub structure: Arc<TensegrityStructure>,
    pub connectivity: ConnectivityMatrix,
    pub mass_s: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub gravity: DVector<f64>,
    pub e_a: DMatrix<f64>,
    pub e_b: DMatrix<f64>,
    pub external: ExternalForce,
}

impl AssembledSystem {
    pub fn assemble(structure: &TensegrityStructure, external: ExternalForce) -> Result<Self> {
        let dim = 3 * structure.n_nodes();
        if external.dim() != dim {
            return dim_err(format!("external force has dimension {}, expected {dim}", external.dim()));
        }
        let c = build_connectivity(structure)?;
        let masses = structure.member_masses();
        let mass_s = assemble_mass(&c, &masses)?;
        let mass = kron_i3(&mass_s);
        let gravity = assemble_gravity(&c, &masses, structure.gravity)?;
        let (e_a, e_b) = partition_selectors(structure)?;

        let RayleighDamping { alpha, beta } = structure.damping;
        let mut damping = &mass * alpha;
        if beta != 0.0 {
            let phi = structure.stacked_coords();
            let x0 = force_density(structure, &phi, 0.0)?;
            damping += kron_i3(&assemble_stiffness(&c, &x0)?) * beta;
        }

        Ok(Self {
            structure: Arc::new(structure.clone()),
            connectivity: c,
            mass_s,
            mass,
            damping,
            gravity,
            e_a,
            e_b,
            external,
        })
    }

    pub fn dim(&self) -> usize {
        self.mass.nrows()
    }

    pub fn stiffness_s(&self, n: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        let x = force_density(&self.structure, n, t)?;
        assemble_stiffness(&self.connectivity, &x)
    }

    /// `K(n, t) = K_s(n, t) ⊗ I_3`.
    pub fn stiffness(&self, n: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        Ok(kron_i3(&self.stiffness_s(n, t)?))
    }

    pub fn external_force(&self, t: f64) -> DVector<f64> {
        self.external.eval(t)
    }
}
