//! End-to-end plumbing shared by the command-line tool and the integration
//! tests: symmetry selection, reduction, ground-truth simulation, training
//! and evaluation.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    centralize, integrate_full, reduce_free, reduce_sym, ConstrainedMotion, FreeSystem, ReducedSystem, Trajectory,
};
use crate::error::{dim_err, invalid, Result, TsgError};
use crate::metrics::Metrics;
use crate::net::{
    Checkpoint, FourierFeatureMap, HardConstraintAnsatz, Mlp, Mode, Model, CHECKPOINT_VERSION, DEFAULT_FOURIER_K,
    DEFAULT_FOURIER_SIGMA, DEFAULT_HIDDEN, DEFAULT_RHO,
};
use crate::structure::{AssembledSystem, ExternalForce, InitialConditions, TensegrityStructure};
use crate::symmetry::{
    basis_eigen, basis_svd, build_s, candidate_actions, rank_actions, select_action, symmetrize_force, validate_assumptions,
    AssumptionReport, BasisMethod, SymmetryAction, SymmetryBasis, DEFAULT_MAX_NODES, DEFAULT_NULL_TOL,
    DEFAULT_SYMMETRY_TOL,
};
use crate::train::{sample_split, train, Problem, TrainConfig, TrainState};

/// External load described by the structure file. A `symmetrize` pattern is
/// group-averaged under `action`; without an action it is used as given.
pub fn external_force(structure: &TensegrityStructure, action: Option<&SymmetryAction>) -> Result<ExternalForce> {
    let n = structure.n_nodes();
    let Some(spec) = &structure.load else {
        return Ok(ExternalForce::zero(3 * n));
    };
    let mut pattern = DMatrix::from_fn(n, 3, |i, a| spec.pattern[i][a]);
    if spec.symmetrize {
        if let Some(a) = action {
            pattern = symmetrize_force(&pattern, a)?;
        }
    }
    Ok(ExternalForce::periodic(&pattern, spec.frequency, spec.phase))
}

/// Symmetry choice for a structure.
#[derive(Debug, Clone)]
pub struct SymmetryChoice {
    pub action: SymmetryAction,
    pub report: AssumptionReport,
}

/// Pick the reduction action. Candidates passing every assumption check win;
/// otherwise the best-ranked geometric candidate is returned with its failing
/// report, and without any candidate the identity.
pub fn choose_action(structure: &TensegrityStructure, tol: f64) -> Result<SymmetryChoice> {
    let ics = structure.initial_conditions();
    let mut candidates = candidate_actions(structure, DEFAULT_MAX_NODES, tol)?;
    // loads marked for symmetrization are symmetric under whichever action is chosen
    let symmetrized = structure.load.as_ref().is_some_and(|l| l.symmetrize);
    let probe = if symmetrized { ExternalForce::zero(3 * structure.n_nodes()) } else { external_force(structure, None)? };
    let action = match select_action(structure, &candidates, &probe, &ics, tol)? {
        Some(a) => a,
        None => {
            rank_actions(&mut candidates);
            candidates.into_iter().next().unwrap_or_else(|| SymmetryAction::identity(structure.n_nodes()))
        }
    };
    let external = external_force(structure, Some(&action))?;
    let report = validate_assumptions(structure, &action, &external, &ics, tol)?;
    Ok(SymmetryChoice { action, report })
}

/// Orthonormal basis of the invariant subspace of the free coordinates.
pub fn symmetry_basis(
    structure: &TensegrityStructure,
    action: &SymmetryAction,
    method: BasisMethod,
    tol: f64,
) -> Result<SymmetryBasis> {
    let p_free = action.perm.restrict(structure.free())?;
    match method {
        BasisMethod::SvdNullspace => basis_svd(&build_s(&p_free, &action.rotation), tol),
        BasisMethod::EigenPair => basis_eigen(&p_free, &action.rotation),
    }
}

/// Everything derived from one structure file.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub structure: Arc<TensegrityStructure>,
    pub action: SymmetryAction,
    pub report: AssumptionReport,
    pub ics: InitialConditions,
    pub assembled: AssembledSystem,
    pub free: FreeSystem,
    pub basis: SymmetryBasis,
    pub reduced: ReducedSystem,
}

impl Pipeline {
    /// Build with an automatically chosen action.
    pub fn new(structure: TensegrityStructure) -> Result<Self> {
        let choice = choose_action(&structure, DEFAULT_SYMMETRY_TOL)?;
        Self::with_action(structure, choice.action)
    }

    pub fn with_action(structure: TensegrityStructure, action: SymmetryAction) -> Result<Self> {
        if action.center.amax() > 1e-9 {
            return Err(TsgError::Symmetry(format!(
                "symmetry center {:?} is not the origin; the reduction acts on origin-centred coordinates",
                action.center.as_slice()
            )));
        }
        let external = external_force(&structure, Some(&action))?;
        let ics = structure.initial_conditions();
        let report = validate_assumptions(&structure, &action, &external, &ics, DEFAULT_SYMMETRY_TOL)?;
        let assembled = AssembledSystem::assemble(&structure, external)?;
        let free = reduce_free(&assembled, &ics, &ConstrainedMotion::Static)?;
        let basis = symmetry_basis(&structure, &action, BasisMethod::SvdNullspace, DEFAULT_NULL_TOL)?;
        let reduced = reduce_sym(&free, &basis)?;
        Ok(Self { structure: assembled.structure.clone(), action, report, ics, assembled, free, basis, reduced })
    }

    /// Ground truth: integrate the free-node system and return all node
    /// coordinates and velocities, centred per time when nothing is
    /// constrained.
    pub fn simulate(&self, grid: &[f64], dt: f64) -> Result<(Trajectory, Option<f64>)> {
        let run = integrate_full(&self.free, grid, dt)?;
        let full = self.to_nodes(&run.trajectory)?;
        let out = if self.structure.constrained().is_empty() { centralize(&full)? } else { full };
        Ok((out, run.energy_drift))
    }

    /// Lift free-node coordinates to all nodes with the constrained nodes at rest.
    fn to_nodes(&self, free: &Trajectory) -> Result<Trajectory> {
        let e_a = &self.assembled.e_a;
        let base = &self.assembled.e_b * (self.assembled.e_b.transpose() * &self.ics.phi);
        Ok(Trajectory {
            times: free.times.clone(),
            states: free.states.iter().map(|s| e_a * s + &base).collect(),
            velocities: free.velocities.as_ref().map(|v| v.iter().map(|s| e_a * s).collect()),
        })
    }

    /// Coordinates learned by `mode` from full node coordinates.
    pub fn coordinates(&self, mode: Mode, nodes: &DVector<f64>) -> Result<DVector<f64>> {
        if nodes.len() != self.assembled.dim() {
            return dim_err(format!("state has length {}, expected {}", nodes.len(), self.assembled.dim()));
        }
        let n_a = self.assembled.e_a.transpose() * nodes;
        Ok(match mode {
            Mode::Sympinn => self.basis.u.transpose() * n_a,
            Mode::Pinn => n_a,
        })
    }

    /// Training problem on the samples `indices` of `truth`.
    pub fn problem(&self, mode: Mode, truth: &Trajectory, indices: &[usize]) -> Result<Problem> {
        let system = match mode {
            Mode::Sympinn => self.reduced.system.clone(),
            Mode::Pinn => self.free.clone(),
        };
        let mut times = Vec::with_capacity(indices.len());
        let mut refs = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = truth.states.get(i).ok_or_else(|| TsgError::InvalidInput(format!("sample {i} out of range")))?;
            times.push(truth.times[i]);
            refs.push(self.coordinates(mode, s)?);
        }
        Problem::new(system, times, refs)
    }

    /// Fresh network for `mode`.
    pub fn model(&self, mode: Mode, cfg: &ModelConfig, seed: u64) -> Result<Model> {
        let map = FourierFeatureMap::new(cfg.fourier_k, cfg.sigma, seed)?;
        let (dim, ansatz) = match mode {
            Mode::Sympinn => {
                let r = &self.reduced;
                (r.dim(), Some(HardConstraintAnsatz::new(r.z0(), r.zdot0(), cfg.rho)?))
            }
            Mode::Pinn => (self.free.dim(), None),
        };
        let mut sizes = vec![map.out_dim()];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(dim);
        let mlp = Mlp::new(&sizes, seed)?;
        Model::new(map, mlp, ansatz)
    }

    /// Package a trained model for later evaluation.
    pub fn checkpoint(&self, mode: Mode, seed: u64, model: Model, train_indices: Vec<usize>) -> Checkpoint {
        let u = match mode {
            Mode::Sympinn => self.basis.u.clone(),
            Mode::Pinn => DMatrix::identity(self.free.dim(), self.free.dim()),
        };
        let n_nodes = self.structure.n_nodes();
        let free = self.structure.free().to_vec();
        let constrained_coords = (0..n_nodes)
            .filter(|i| !free.contains(i))
            .flat_map(|i| self.ics.phi.fixed_rows::<3>(3 * i).iter().copied().collect::<Vec<_>>())
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            mode,
            seed,
            model,
            basis: u.transpose().as_slice().to_vec(),
            basis_shape: (u.nrows(), u.ncols()),
            n_nodes,
            free,
            constrained_coords,
            train_indices,
        }
    }

    /// Split, train and score one configuration.
    pub fn run(&self, truth: &Trajectory, run: &RunConfig) -> Result<RunOutcome> {
        let (train_idx, test_idx) = sample_split(truth.len(), run.train.sampling_rate, run.train.seed)?;
        let problem = self.problem(run.mode, truth, &train_idx)?;
        let model = self.model(run.mode, &run.model, run.train.seed)?;
        let start = Instant::now();
        let (model, state) = train(&problem, &model, &run.train)?;
        let train_seconds = start.elapsed().as_secs_f64();
        let n_params = model.mlp.n_params();
        let checkpoint = self.checkpoint(run.mode, run.train.seed, model, train_idx);
        let metrics = evaluate(&checkpoint, truth, &test_idx)?;
        Ok(RunOutcome { summary: RunSummary { re: metrics.re, mse: metrics.mse, train_seconds, n_params }, metrics, checkpoint, state })
    }
}

/// Error of a checkpoint on the samples `indices` of `truth` (all samples
/// outside the checkpoint's training set when `indices` is empty).
pub fn evaluate(checkpoint: &Checkpoint, truth: &Trajectory, indices: &[usize]) -> Result<Metrics> {
    if truth.dim() != 3 * checkpoint.n_nodes {
        return dim_err(format!("trajectory has dimension {}, checkpoint covers {} nodes", truth.dim(), checkpoint.n_nodes));
    }
    let owned: Vec<usize>;
    let indices = if indices.is_empty() {
        owned = (0..truth.len()).filter(|i| !checkpoint.train_indices.contains(i)).collect();
        &owned
    } else {
        indices
    };
    if indices.is_empty() {
        return invalid("no samples to evaluate");
    }
    let mut y = Vec::with_capacity(indices.len());
    let mut p = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = truth.states.get(i).ok_or_else(|| TsgError::InvalidInput(format!("sample {i} out of range")))?;
        y.push(s.clone());
        p.push(checkpoint.predict_nodes(truth.times[i])?);
    }
    Metrics::compute(&y, &p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub fourier_k: usize,
    pub sigma: f64,
    pub rho: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: DEFAULT_HIDDEN.to_vec(), fourier_k: DEFAULT_FOURIER_K, sigma: DEFAULT_FOURIER_SIGMA, rho: DEFAULT_RHO }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn new(mode: Mode) -> Self {
        Self { mode, model: ModelConfig::default(), train: TrainConfig::default() }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Metrics file written after training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub re: f64,
    pub mse: f64,
    pub train_seconds: f64,
    pub n_params: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub metrics: Metrics,
    pub checkpoint: Checkpoint,
    pub state: TrainState,
}

/// Inputs, configuration and outputs of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub inputs: Vec<PathBuf>,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(inputs: Vec<PathBuf>, config: &RunConfig, outputs: Vec<PathBuf>) -> Self {
        Self {
            inputs,
            config_hash: config.hash(),
            seed: config.train.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs,
        }
    }
}

/// One `(rate, seed)` cell of a comparison sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub rate: f64,
    pub seed: u64,
    pub mode: Mode,
    pub re: f64,
    pub mse: f64,
    pub seconds: f64,
}

/// Mean and spread of one method at one rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub rate: f64,
    pub mode: Mode,
    pub re_mean: f64,
    pub re_min: f64,
    pub re_max: f64,
    pub mse_mean: f64,
    pub seconds_mean: f64,
}

/// Worker count: `TSG_THREADS` when set, else the available parallelism.
pub fn thread_limit() -> usize {
    std::env::var("TSG_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Train both methods at every `(rate, seed)`. Rows are ordered by rate,
/// seed, then method regardless of how many workers run.
pub fn compare(
    pipeline: &Pipeline,
    truth: &Trajectory,
    rates: &[f64],
    seeds: &[u64],
    base: &RunConfig,
    threads: usize,
) -> Result<Vec<CompareRow>> {
    let jobs: Vec<(f64, u64, Mode)> = rates
        .iter()
        .flat_map(|&r| seeds.iter().flat_map(move |&s| [(r, s, Mode::Sympinn), (r, s, Mode::Pinn)]))
        .collect();
    let run_job = |&(rate, seed, mode): &(f64, u64, Mode)| -> Result<CompareRow> {
        let mut cfg = base.clone();
        cfg.mode = mode;
        cfg.train.seed = seed;
        cfg.train.sampling_rate = rate;
        let out = pipeline.run(truth, &cfg)?;
        log::info!("rate {rate} seed {seed} {mode:?}: re {:.3e} in {:.1} s", out.summary.re, out.summary.train_seconds);
        Ok(CompareRow { rate, seed, mode, re: out.summary.re, mse: out.summary.mse, seconds: out.summary.train_seconds })
    };
    let threads = threads.clamp(1, jobs.len().max(1));
    if threads == 1 {
        return jobs.iter().map(run_job).collect();
    }
    let mut results: Vec<Option<Result<CompareRow>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = results.chunks_mut(jobs.len().div_ceil(threads)).zip(jobs.chunks(jobs.len().div_ceil(threads))).collect();
        for (slots, work) in chunks {
            let run_job = &run_job;
            scope.spawn(move || {
                for (slot, job) in slots.iter_mut().zip(work) {
                    *slot = Some(run_job(job));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Per-rate mean and range for each method, ordered by rate then method.
pub fn summarize(rows: &[CompareRow]) -> Vec<RateSummary> {
    let mut rates: Vec<f64> = rows.iter().map(|r| r.rate).collect();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    let mut out = Vec::new();
    for rate in rates {
        for mode in [Mode::Sympinn, Mode::Pinn] {
            let sel: Vec<&CompareRow> = rows.iter().filter(|r| r.rate == rate && r.mode == mode).collect();
            if sel.is_empty() {
                continue;
            }
            let k = sel.len() as f64;
            out.push(RateSummary {
                rate,
                mode,
                re_mean: sel.iter().map(|r| r.re).sum::<f64>() / k,
                re_min: sel.iter().map(|r| r.re).fold(f64::INFINITY, f64::min),
                re_max: sel.iter().map(|r| r.re).fold(f64::NEG_INFINITY, f64::max),
                mse_mean: sel.iter().map(|r| r.mse).sum::<f64>() / k,
                seconds_mean: sel.iter().map(|r| r.seconds).sum::<f64>() / k,
            });
        }
    }
    out
}
