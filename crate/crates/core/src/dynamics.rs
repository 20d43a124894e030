//! Free-node and symmetry-reduced equations of motion, the fixed-step
//! fourth-order integrator used as ground truth, and trajectory I/O.
//!
//! Both reduced forms share one shape, `M q'' + D q' + K(q, t) q = w(q, t)`,
//! represented by [`SecondOrderSystem`].

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{dim_err, invalid, Result, TsgError};
use crate::structure::{check_len, AssembledSystem, InitialConditions};
use crate::symmetry::SymmetryBasis;

pub type StiffnessFn = Arc<dyn Fn(&DVector<f64>, f64) -> Result<DMatrix<f64>> + Send + Sync>;
pub type LoadFn = Arc<dyn Fn(&DVector<f64>, f64) -> Result<DVector<f64>> + Send + Sync>;
pub type PotentialFn = Arc<dyn Fn(&DVector<f64>) -> Result<f64> + Send + Sync>;

pub const DEFAULT_DT: f64 = 1e-3;

/// `M q'' + D q' + K(q, t) q = w(q, t)` with initial state `(q0, v0)`.
#[derive(Clone)]
pub struct SecondOrderSystem {
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    stiffness: StiffnessFn,
    load: LoadFn,
    /// Potential energy, when the restoring force derives from one.
    potential: Option<PotentialFn>,
    pub q0: DVector<f64>,
    pub v0: DVector<f64>,
}

impl fmt::Debug for SecondOrderSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecondOrderSystem")
            .field("dim", &self.dim())
            .field("q0", &self.q0)
            .field("v0", &self.v0)
            .finish_non_exhaustive()
    }
}

impl SecondOrderSystem {
    pub fn new(
        mass: DMatrix<f64>,
        damping: DMatrix<f64>,
        stiffness: StiffnessFn,
        load: LoadFn,
        q0: DVector<f64>,
        v0: DVector<f64>,
    ) -> Result<Self> {
        let d = mass.nrows();
        if mass.ncols() != d || damping.shape() != (d, d) {
            return dim_err("mass and damping must be square and of equal size");
        }
        check_len(&q0, d, "initial coordinates")?;
        check_len(&v0, d, "initial velocities")?;
        Ok(Self { mass, damping, stiffness, load, potential: None, q0, v0 })
    }

    /// Constant-coefficient system with a time-dependent load.
    pub fn linear(
        mass: DMatrix<f64>,
        damping: DMatrix<f64>,
        stiffness: DMatrix<f64>,
        load: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        q0: DVector<f64>,
        v0: DVector<f64>,
    ) -> Result<Self> {
        if stiffness.shape() != mass.shape() {
            return dim_err("stiffness must match the mass matrix");
        }
        let k = stiffness.clone();
        let potential_k = stiffness;
        let mut sys = Self::new(
            mass,
            damping,
            Arc::new(move |_, _| Ok(k.clone())),
            Arc::new(move |_, t| Ok(load(t))),
            q0,
            v0,
        )?;
        sys.potential = Some(Arc::new(move |q| Ok(0.5 * q.dot(&(&potential_k * q)))));
        Ok(sys)
    }

    pub fn with_potential(mut self, potential: PotentialFn) -> Self {
        self.potential = Some(potential);
        self
    }

    pub fn dim(&self) -> usize {
        self.mass.nrows()
    }

    pub fn stiffness(&self, q: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        (self.stiffness)(q, t)
    }

    pub fn load(&self, q: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        (self.load)(q, t)
    }

    /// `M a + D v + K(q,t) q - w(q,t)`.
    pub fn residual(&self, q: &DVector<f64>, v: &DVector<f64>, a: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        Ok(&self.mass * a + &self.damping * v + self.stiffness(q, t)? * q - self.load(q, t)?)
    }

    /// `1/2 v^T M v + V(q)`; `None` without a potential.
    pub fn energy(&self, q: &DVector<f64>, v: &DVector<f64>) -> Result<Option<f64>> {
        match &self.potential {
            Some(p) => Ok(Some(0.5 * v.dot(&(&self.mass * v)) + p(q)?)),
            None => Ok(None),
        }
    }

    /// Galerkin projection onto the columns of `u`: `q = U z`.
    pub fn project(&self, u: &DMatrix<f64>) -> Result<Self> {
        if u.nrows() != self.dim() {
            return dim_err(format!("basis has {} rows, system dimension is {}", u.nrows(), self.dim()));
        }
        let ut = u.transpose();
        let mass = &ut * &self.mass * u;
        let damping = &ut * &self.damping * u;
        let (stiff, load) = (self.stiffness.clone(), self.load.clone());
        let (u1, u2) = (u.clone(), u.clone());
        let (ut1, ut2) = (ut.clone(), ut.clone());
        let stiffness: StiffnessFn = Arc::new(move |z, t| {
            let q = &u1 * z;
            Ok(&ut1 * stiff(&q, t)? * &u1)
        });
        let load: LoadFn = Arc::new(move |z, t| Ok(&ut2 * load(&(&u2 * z), t)?));
        let potential = self.potential.clone().map(|p| {
            let u3 = u.clone();
            Arc::new(move |z: &DVector<f64>| p(&(&u3 * z))) as PotentialFn
        });
        Ok(Self { mass, damping, stiffness, load, potential, q0: &ut * &self.q0, v0: &ut * &self.v0 })
    }
}

/// Free-node system `M_a n_a'' + D_a n_a' + K_a n_a = w_a`.
pub type FreeSystem = SecondOrderSystem;

/// Motion prescribed on the constrained nodes.
#[derive(Clone)]
pub enum ConstrainedMotion {
    /// Constrained nodes stay at their initial coordinates.
    Static,
    /// `t -> (n_b, n_b', n_b'')`.
    Prescribed(Arc<dyn Fn(f64) -> (DVector<f64>, DVector<f64>, DVector<f64>) + Send + Sync>),
}

/// Restrict the full dynamics to the free nodes, moving the constrained-node
/// inertia, damping and stiffness couplings into the load `w_a`.
pub fn reduce_free(sys: &AssembledSystem, ics: &InitialConditions, motion: &ConstrainedMotion) -> Result<FreeSystem> {
    let dim = sys.dim();
    check_len(&ics.phi, dim, "initial coordinates")?;
    check_len(&ics.psi, dim, "initial velocities")?;
    let n_b_dim = sys.e_b.ncols();
    let e_a = sys.e_a.clone();
    let e_b = sys.e_b.clone();
    let e_at = e_a.transpose();

    let nb0 = sys.e_b.transpose() * &ics.phi;
    let nb_motion: Arc<dyn Fn(f64) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> + Send + Sync> =
        match motion {
            ConstrainedMotion::Static => {
                let nb0 = nb0.clone();
                Arc::new(move |_| Ok((nb0.clone(), DVector::zeros(n_b_dim), DVector::zeros(n_b_dim))))
            }
            ConstrainedMotion::Prescribed(f) => {
                let f = f.clone();
                Arc::new(move |t| {
                    let (nb, nbd, nbdd) = f(t);
                    if nb.len() != n_b_dim || nbd.len() != n_b_dim || nbdd.len() != n_b_dim {
                        return dim_err(format!(
                            "constrained motion must return position, velocity and acceleration of length {n_b_dim}"
                        ));
                    }
                    Ok((nb, nbd, nbdd))
                })
            }
        };
    let (nb_init, nbd_init, _) = nb_motion(0.0)?;

    let mass_a = &e_at * &sys.mass * &e_a;
    let damping_a = &e_at * &sys.damping * &e_a;
    let phi_a = &e_at * (&ics.phi - &e_b * &nb_init);
    let psi_a = &e_at * (&ics.psi - &e_b * &nbd_init);

    let full_coords = {
        let (e_a, e_b, nb_motion) = (e_a.clone(), e_b.clone(), nb_motion.clone());
        move |n_a: &DVector<f64>, t: f64| -> Result<DVector<f64>> {
            let (nb, _, _) = nb_motion(t)?;
            Ok(&e_a * n_a + &e_b * nb)
        }
    };

    let stiffness: StiffnessFn = {
        let (asm, e_a, e_at, full) = (sys.clone(), e_a.clone(), e_at.clone(), full_coords.clone());
        Arc::new(move |n_a, t| {
            let n = full(n_a, t)?;
            Ok(&e_at * asm.stiffness(&n, t)? * &e_a)
        })
    };
    let load: LoadFn = {
        let (asm, e_b, e_at, full, nb_motion) = (sys.clone(), e_b, e_at.clone(), full_coords.clone(), nb_motion);
        Arc::new(move |n_a, t| {
            let mut rhs = asm.external_force(t) - &asm.gravity;
            if n_b_dim > 0 {
                let (nb, nbd, nbdd) = nb_motion(t)?;
                let n = full(n_a, t)?;
                let k = asm.stiffness(&n, t)?;
                rhs -= &asm.mass * (&e_b * nbdd) + &asm.damping * (&e_b * nbd) + k * (&e_b * nb);
            }
            Ok(&e_at * rhs)
        })
    };
    let potential: PotentialFn = {
        let (asm, full) = (sys.clone(), full_coords);
        Arc::new(move |n_a| {
            let n = full(n_a, 0.0)?;
            Ok(asm.structure.strain_energy(&n)? + asm.gravity.dot(&n))
        })
    };

    Ok(SecondOrderSystem::new(mass_a, damping_a, stiffness, load, phi_a, psi_a)?.with_potential(potential))
}

/// Symmetry-reduced system in the coordinates `z` with `n_a = U z`.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub system: SecondOrderSystem,
    /// `K_r(z0, 0)`, the operator used by the physics loss.
    pub k_frozen: DMatrix<f64>,
    /// `||K_r(z0, 0)||_F`.
    pub k_fro: f64,
}

impl ReducedSystem {
    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn m_r(&self) -> &DMatrix<f64> {
        &self.system.mass
    }

    pub fn d_r(&self) -> &DMatrix<f64> {
        &self.system.damping
    }

    pub fn k_r(&self, z: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        self.system.stiffness(z, t)
    }

    pub fn w_r(&self, z: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        self.system.load(z, t)
    }

    pub fn z0(&self) -> &DVector<f64> {
        &self.system.q0
    }

    pub fn zdot0(&self) -> &DVector<f64> {
        &self.system.v0
    }
}

/// Project the free-node system onto the symmetry basis.
pub fn reduce_sym(free: &FreeSystem, basis: &SymmetryBasis) -> Result<ReducedSystem> {
    let system = free.project(&basis.u)?;
    let k_frozen = system.stiffness(&system.q0, 0.0)?;
    let k_fro = k_frozen.norm();
    Ok(ReducedSystem { system, k_frozen, k_fro })
}

/// Sampled trajectory; `states[k]` is the coordinate vector at `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub velocities: Option<Vec<DVector<f64>>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<DVector<f64>>, velocities: Option<Vec<DVector<f64>>>) -> Result<Self> {
        if times.len() != states.len() {
            return dim_err(format!("{} times for {} states", times.len(), states.len()));
        }
        if let Some(v) = &velocities {
            if v.len() != times.len() {
                return dim_err(format!("{} velocities for {} times", v.len(), times.len()));
            }
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("trajectory times must be strictly increasing");
        }
        let dim = states.first().map_or(0, |s| s.len());
        let ragged = states.iter().chain(velocities.iter().flatten()).any(|s| s.len() != dim);
        if ragged {
            return dim_err("trajectory vectors differ in length");
        }
        Ok(Self { times, states, velocities })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    /// Apply a linear map to every state (and velocity).
    pub fn map_linear(&self, a: &DMatrix<f64>) -> Result<Self> {
        if a.ncols() != self.dim() {
            return dim_err(format!("map has {} columns, trajectory dimension is {}", a.ncols(), self.dim()));
        }
        Ok(Self {
            times: self.times.clone(),
            states: self.states.iter().map(|s| a * s).collect(),
            velocities: self.velocities.as_ref().map(|v| v.iter().map(|s| a * s).collect()),
        })
    }

    /// Largest absolute componentwise difference between two trajectories on the same grid.
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        if self.len() != other.len() || self.dim() != other.dim() {
            return dim_err("trajectories differ in length or dimension");
        }
        Ok(self.states.iter().zip(&other.states).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.dim();
        if dim % 3 != 0 {
            return dim_err("node trajectories need a multiple of 3 coordinates");
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        let axes = ["x", "y", "z"];
        for prefix in ["n", "v"] {
            if prefix == "v" && self.velocities.is_none() {
                break;
            }
            for k in 0..dim {
                header.push(format!("{prefix}{}{}", k / 3 + 1, axes[k % 3]));
            }
        }
        w.write_record(&header)?;
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:?}")];
            row.extend(self.states[i].iter().map(|v| format!("{v:?}")));
            if let Some(vel) = &self.velocities {
                row.extend(vel[i].iter().map(|v| format!("{v:?}")));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("t") {
            return invalid("trajectory CSV must start with a `t` column");
        }
        let n_pos = header.iter().filter(|h| h.starts_with('n')).count();
        let n_vel = header.iter().filter(|h| h.starts_with('v')).count();
        if n_pos == 0 || n_pos % 3 != 0 || (n_vel != 0 && n_vel != n_pos) || 1 + n_pos + n_vel != header.len() {
            return invalid("unexpected trajectory CSV header layout");
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut vels = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| TsgError::InvalidInput(format!("bad number `{s}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() != header.len() {
                return invalid("ragged trajectory CSV row");
            }
            times.push(vals[0]);
            states.push(DVector::from_column_slice(&vals[1..1 + n_pos]));
            if n_vel > 0 {
                vels.push(DVector::from_column_slice(&vals[1 + n_pos..]));
            }
        }
        Self::new(times, states, if n_vel > 0 { Some(vels) } else { None })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

pub fn uniform_grid(t_end: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(t_end > 0.0) {
        return invalid("grid needs at least 2 points and a positive end time");
    }
    let h = t_end / (points - 1) as f64;
    Ok((0..points).map(|k| if k + 1 == points { t_end } else { k as f64 * h }).collect())
}

/// Integration result with the total-energy drift, when an energy is defined.
#[derive(Debug, Clone)]
pub struct Integration {
    pub trajectory: Trajectory,
    /// `max_t |E(t) - E(0)| / |E(0)|`.
    pub energy_drift: Option<f64>,
}

/// Classic fixed-step fourth-order Runge-Kutta on the first-order form
/// `q' = v`, `v' = M^{-1}(w - D v - K(q,t) q)`. Each grid interval is split
/// into equal substeps no longer than `dt`.
pub fn integrate(sys: &SecondOrderSystem, grid: &[f64], dt: f64) -> Result<Integration> {
    if grid.is_empty() || grid[0] != 0.0 {
        return invalid("time grid must start at 0");
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("time grid must be strictly increasing");
    }
    if !(dt > 0.0) {
        return invalid("step size must be positive");
    }
    let chol: Cholesky<f64, Dyn> = Cholesky::new(sys.mass.clone())
        .ok_or_else(|| TsgError::Numerical("mass matrix is not positive definite".into()))?;

    let accel = |q: &DVector<f64>, v: &DVector<f64>, t: f64| -> Result<DVector<f64>> {
        let rhs = sys.load(q, t)? - &sys.damping * v - sys.stiffness(q, t)? * q;
        Ok(chol.solve(&rhs))
    };

    let mut q = sys.q0.clone();
    let mut v = sys.v0.clone();
    let mut states = vec![q.clone()];
    let mut vels = vec![v.clone()];
    let e0 = sys.energy(&q, &v)?;
    let mut drift: f64 = 0.0;

    for w in grid.windows(2) {
        let span = w[1] - w[0];
        let steps = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        for s in 0..steps {
            let t = w[0] + s as f64 * h;
            let k1q = v.clone();
            let k1v = accel(&q, &v, t)?;
            let q2 = &q + &k1q * (0.5 * h);
            let v2 = &v + &k1v * (0.5 * h);
            let k2v = accel(&q2, &v2, t + 0.5 * h)?;
            let q3 = &q + &v2 * (0.5 * h);
            let v3 = &v + &k2v * (0.5 * h);
            let k3v = accel(&q3, &v3, t + 0.5 * h)?;
            let q4 = &q + &v3 * h;
            let v4 = &v + &k3v * h;
            let k4v = accel(&q4, &v4, t + h)?;
            q += (k1q + &v2 * 2.0 + &v3 * 2.0 + &v4) * (h / 6.0);
            v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
            if !(q.iter().chain(v.iter()).all(|x| x.is_finite())) {
                return Err(TsgError::Numerical(format!("integration diverged near t = {t}")));
            }
        }
        if let (Some(e0), Some(e)) = (e0, sys.energy(&q, &v)?) {
            drift = drift.max((e - e0).abs() / e0.abs().max(f64::MIN_POSITIVE));
        }
        states.push(q.clone());
        vels.push(v.clone());
    }
    Ok(Integration {
        trajectory: Trajectory::new(grid.to_vec(), states, Some(vels))?,
        energy_drift: e0.map(|_| drift),
    })
}

pub fn integrate_full(free: &FreeSystem, grid: &[f64], dt: f64) -> Result<Integration> {
    integrate(free, grid, dt)
}

pub fn integrate_reduced(reduced: &ReducedSystem, grid: &[f64], dt: f64) -> Result<Integration> {
    integrate(&reduced.system, grid, dt)
}

/// `n_a(t) = U z(t)` for every sample (velocities likewise).
pub fn reconstruct(basis: &SymmetryBasis, z: &Trajectory) -> Result<Trajectory> {
    z.map_linear(&basis.u)
}

/// Subtract the per-time nodal centroid from positions and the velocity
/// centroid from velocities.
pub fn centralize(traj: &Trajectory) -> Result<Trajectory> {
    let center = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let m = crate::symmetry::unstack(x)?;
        Ok(crate::symmetry::restack(&crate::symmetry::center_rows(&m)))
    };
    Ok(Trajectory {
        times: traj.times.clone(),
        states: traj.states.iter().map(center).collect::<Result<_>>()?,
        velocities: match &traj.velocities {
            Some(v) => Some(v.iter().map(center).collect::<Result<_>>()?),
            None => None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(k: f64, q0: f64, v0: f64) -> SecondOrderSystem {
        SecondOrderSystem::linear(
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, k),
            |_| DVector::zeros(1),
            DVector::from_element(1, q0),
            DVector::from_element(1, v0),
        )
        .unwrap()
    }

    #[test]
    fn harmonic_oscillator_matches_cosine() {
        let grid = uniform_grid(1.0, 1001).unwrap();
        let out = integrate(&oscillator(1.0, 1.0, 0.0), &grid, 1e-3).unwrap();
        let err = grid
            .iter()
            .zip(&out.trajectory.states)
            .map(|(t, s)| (s[0] - t.cos()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-6, "max error {err}");
    }

    #[test]
    fn free_drift_is_linear() {
        let grid = uniform_grid(1.0, 11).unwrap();
        let out = integrate(&oscillator(0.0, 0.5, 2.0), &grid, 1e-2).unwrap();
        for (t, s) in grid.iter().zip(&out.trajectory.states) {
            assert!((s[0] - (0.5 + 2.0 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_state_stays_zero() {
        let grid = uniform_grid(1.0, 5).unwrap();
        let out = integrate(&oscillator(3.0, 0.0, 0.0), &grid, 1e-3).unwrap();
        assert!(out.trajectory.states.iter().all(|s| s[0] == 0.0));
    }

    #[test]
    fn singular_mass_is_rejected() {
        let sys = SecondOrderSystem::linear(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            |_| DVector::zeros(1),
            DVector::zeros(1),
            DVector::zeros(1),
        )
        .unwrap();
        assert!(integrate(&sys, &[0.0, 1.0], 0.1).is_err());
    }

    #[test]
    fn grid_must_increase() {
        assert!(integrate(&oscillator(1.0, 1.0, 0.0), &[0.0, 0.5, 0.5], 1e-3).is_err());
        assert!(Trajectory::new(vec![0.0, 0.0], vec![DVector::zeros(3), DVector::zeros(3)], None).is_err());
    }

    #[test]
    fn centralize_removes_offset() {
        let s = DVector::from_vec(vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        let traj = Trajectory::new(vec![0.0], vec![s.clone()], None).unwrap();
        let c = centralize(&traj).unwrap();
        assert_eq!(c.states[0], DVector::from_vec(vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0]));
        let shifted = Trajectory::new(
            vec![0.0],
            vec![&c.states[0] + DVector::from_vec(vec![0.25, -3.0, 7.5, 0.25, -3.0, 7.5])],
            None,
        )
        .unwrap();
        assert_eq!(centralize(&shifted).unwrap().states[0], c.states[0]);
        assert_eq!(centralize(&c).unwrap(), c);
    }
}
