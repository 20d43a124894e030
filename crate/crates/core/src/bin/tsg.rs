//! Command-line front end: symmetry detection, basis export, ground-truth
//! simulation, training, evaluation and rate sweeps.
//!
//! Exit codes: 0 success, 2 bad input, 3 numerical failure, 4 symmetry
//! validation failure.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tsg::dynamics::{uniform_grid, Trajectory};
use tsg::net::{Checkpoint, Mode};
use tsg::pipeline::{
    choose_action, compare, evaluate, summarize, symmetry_basis, thread_limit, CompareRow, ModelConfig, Pipeline,
    RateSummary, RunConfig, RunManifest,
};
use tsg::structure::TensegrityStructure;
use tsg::symmetry::{
    build_s, center_rows, coords_matrix, verify_symmetry, BasisMethod, SymmetryAction, SymmetryFile,
    DEFAULT_NULL_TOL, DEFAULT_SYMMETRY_TOL,
};
use tsg::{Result, TsgError};

/// Bounds every exported basis must meet.
const BASIS_ORTH_TOL: f64 = 1e-12;
const BASIS_NULL_TOL: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "tsg", version, about = "Symmetry-reduced physics-informed learning of tensegrity dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Eig,
    Svd,
}

#[derive(Subcommand)]
enum Command {
    /// Detect the symmetry action used for reduction and write symmetry.json.
    Detect {
        structure: PathBuf,
        #[arg(short, long, default_value = "symmetry.json")]
        output: PathBuf,
        /// Absolute tolerance on the symmetry relation (m).
        #[arg(long, default_value_t = DEFAULT_SYMMETRY_TOL)]
        tol: f64,
    },
    /// Build the invariant-subspace basis U of the free coordinates.
    Basis {
        structure: PathBuf,
        symmetry: PathBuf,
        #[arg(long, value_enum, default_value = "svd")]
        method: MethodArg,
        /// Singular-value cut-off of the nullspace method.
        #[arg(long, default_value_t = DEFAULT_NULL_TOL)]
        tol: f64,
        #[arg(short, long, default_value = "basis.json")]
        output: PathBuf,
    },
    /// Integrate the full equations of motion and write a trajectory CSV.
    Simulate {
        structure: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1001)]
        points: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(short, long, default_value = "traj.csv")]
        output: PathBuf,
    },
    /// Train one model on a sampled subset of a trajectory.
    Train {
        structure: PathBuf,
        trajectory: PathBuf,
        #[arg(long, value_enum, default_value = "sympinn")]
        mode: Mode,
        #[arg(long, default_value_t = 0.5)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = tsg::net::DEFAULT_RHO)]
        rho: f64,
        #[arg(long, value_delimiter = ',', default_value = "32,32")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = tsg::net::DEFAULT_FOURIER_K)]
        fourier_k: usize,
        /// Train even when the symmetry assumptions fail.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value = "run")]
        out_dir: PathBuf,
    },
    /// Score a checkpoint on the samples it was not trained on.
    Eval {
        checkpoint: PathBuf,
        trajectory: PathBuf,
        /// Score every sample instead of the held-out ones.
        #[arg(long)]
        all: bool,
        #[arg(short, long, default_value = "metrics.json")]
        output: PathBuf,
    },
    /// Sweep sampling rates and seeds for both methods.
    Compare {
        structure: PathBuf,
        trajectory: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5")]
        rates: Vec<f64>,
        /// Number of seeds, run as 0..seeds.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Train even when the symmetry assumptions fail.
        #[arg(long)]
        force: bool,
        #[arg(long, default_value = "compare")]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Detect { structure, output, tol } => detect(&structure, &output, tol),
        Command::Basis { structure, symmetry, method, tol, output } => basis(&structure, &symmetry, method, tol, &output),
        Command::Simulate { structure, t_end, points, dt, output } => simulate(&structure, t_end, points, dt, &output),
        Command::Train { structure, trajectory, mode, rate, seed, rho, hidden, fourier_k, force, out_dir } => {
            let mut cfg = RunConfig::new(mode);
            cfg.model = ModelConfig { hidden, fourier_k, rho, ..ModelConfig::default() };
            cfg.train.sampling_rate = rate;
            cfg.train.seed = seed;
            train(&structure, &trajectory, &cfg, force, &out_dir)
        }
        Command::Eval { checkpoint, trajectory, all, output } => eval(&checkpoint, &trajectory, all, &output),
        Command::Compare { structure, trajectory, rates, seeds, force, out_dir } => {
            sweep(&structure, &trajectory, &rates, seeds, force, &out_dir)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn detect(path: &Path, output: &Path, tol: f64) -> Result<()> {
    let structure = TensegrityStructure::load(path)?;
    let choice = choose_action(&structure, tol)?;
    if !choice.report.all_pass() {
        for (name, check) in choice.report.checks().iter().filter(|(_, c)| !c.pass) {
            eprintln!("{name}: {}", check.detail);
        }
        return Err(TsgError::Symmetry(format!("no action satisfies {:?}", choice.report.failures())));
    }
    let a = &choice.action;
    let residual = verify_symmetry(&center_rows(&coords_matrix(structure.coords())), &a.perm, &a.rotation, tol)?.residual;
    let n_r = symmetry_basis(&structure, a, BasisMethod::SvdNullspace, DEFAULT_NULL_TOL)?.n_r;
    write_json(output, &SymmetryFile::from_action(a, residual, n_r))?;
    println!("permutation {:?} order {} residual {residual:.3e} n_r {n_r}", a.perm.to_one_based(), a.order);
    println!("R = {:?}", SymmetryFile::from_action(a, residual, n_r).rotation);
    Ok(())
}

/// `basis.json`: `u` is row-major with `rows x n_r` entries.
#[derive(Serialize)]
struct BasisFile {
    method: BasisMethod,
    n_r: usize,
    rows: usize,
    u: Vec<f64>,
    orthonormality_error: f64,
    null_residual: f64,
}

fn basis(path: &Path, symmetry: &Path, method: MethodArg, tol: f64, output: &Path) -> Result<()> {
    let structure = TensegrityStructure::load(path)?;
    let file: SymmetryFile = serde_json::from_str(&std::fs::read_to_string(symmetry)?)?;
    let action: SymmetryAction = file.to_action()?;
    let method = match method {
        MethodArg::Eig => BasisMethod::EigenPair,
        MethodArg::Svd => BasisMethod::SvdNullspace,
    };
    let b = symmetry_basis(&structure, &action, method, tol)?;
    let s = build_s(&action.perm.restrict(structure.free())?, &action.rotation);
    let (orth, null) = (b.orthonormality_error(), b.null_residual(&s));
    if orth > BASIS_ORTH_TOL || null > BASIS_NULL_TOL {
        return Err(TsgError::Numerical(format!("basis rejected: |U^T U - I| = {orth:e}, |S U| = {null:e}")));
    }
    if b.gap_warning {
        log::warn!("singular values lie close to the cut-off {tol:e}");
    }
    let u = b.u.transpose().as_slice().to_vec();
    write_json(output, &BasisFile { method, n_r: b.n_r, rows: b.u.nrows(), u, orthonormality_error: orth, null_residual: null })?;
    println!("n_r {} of {} (|U^T U - I| = {orth:.1e}, |S U| = {null:.1e})", b.n_r, b.u.nrows());
    Ok(())
}

fn simulate(path: &Path, t_end: f64, points: usize, dt: f64, output: &Path) -> Result<()> {
    let structure = TensegrityStructure::load(path)?;
    let choice = choose_action(&structure, DEFAULT_SYMMETRY_TOL)?;
    let pipeline = Pipeline::with_action(structure, choice.action)?;
    let (traj, drift) = pipeline.simulate(&uniform_grid(t_end, points)?, dt)?;
    traj.save(output)?;
    match drift {
        Some(d) => println!("{} samples, energy drift {d:.3e}", traj.len()),
        None => println!("{} samples", traj.len()),
    }
    Ok(())
}

/// Pipeline for training. SymPINN needs the detected action to pass every
/// assumption unless forced; the baseline falls back to the identity.
fn training_pipeline(path: &Path, sympinn: bool, force: bool) -> Result<Pipeline> {
    let structure = TensegrityStructure::load(path)?;
    let choice = choose_action(&structure, DEFAULT_SYMMETRY_TOL)?;
    if choice.report.all_pass() {
        return Pipeline::with_action(structure, choice.action);
    }
    let failures = choice.report.failures();
    if sympinn && !force {
        return Err(TsgError::Symmetry(format!("assumptions fail: {failures:?} (use --force to train anyway)")));
    }
    log::warn!("symmetry assumptions fail: {failures:?}");
    if sympinn {
        return Pipeline::with_action(structure, choice.action);
    }
    let n = structure.n_nodes();
    Pipeline::with_action(structure, SymmetryAction::identity(n))
}

fn load_truth(path: &Path, pipeline: &Pipeline) -> Result<Trajectory> {
    let truth = Trajectory::load(path)?;
    if truth.dim() != pipeline.assembled.dim() {
        return Err(TsgError::Dimension(format!(
            "trajectory has {} coordinates, structure has {}",
            truth.dim(),
            pipeline.assembled.dim()
        )));
    }
    Ok(truth)
}

fn train(path: &Path, traj: &Path, cfg: &RunConfig, force: bool, out_dir: &Path) -> Result<()> {
    let pipeline = training_pipeline(path, cfg.mode == Mode::Sympinn, force)?;
    let truth = load_truth(traj, &pipeline)?;
    let outcome = pipeline.run(&truth, cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let files = ["checkpoint.json", "history.csv", "metrics.json"].map(|f| out_dir.join(f));
    outcome.checkpoint.save(&files[0])?;
    outcome.state.write_history(File::create(&files[1])?)?;
    write_json(&files[2], &outcome.summary)?;
    let manifest = RunManifest::new(vec![path.to_path_buf(), traj.to_path_buf()], cfg, files.to_vec());
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    let s = &outcome.summary;
    println!("re {:.4e} mse {:.4e} in {:.2} s ({} parameters)", s.re, s.mse, s.train_seconds, s.n_params);
    Ok(())
}

fn eval(checkpoint: &Path, traj: &Path, all: bool, output: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let truth = Trajectory::load(traj)?;
    let indices: Vec<usize> = if all { (0..truth.len()).collect() } else { Vec::new() };
    let metrics = evaluate(&ck, &truth, &indices)?;
    write_json(output, &metrics)?;
    println!("re {:.4e} mse {:.4e}", metrics.re, metrics.mse);
    Ok(())
}

fn sweep(path: &Path, traj: &Path, rates: &[f64], seeds: u64, force: bool, out_dir: &Path) -> Result<()> {
    if rates.is_empty() || seeds == 0 {
        return Err(TsgError::InvalidInput("need at least one rate and one seed".into()));
    }
    let pipeline = training_pipeline(path, true, force)?;
    let truth = load_truth(traj, &pipeline)?;
    let seeds: Vec<u64> = (0..seeds).collect();
    let rows = compare(&pipeline, &truth, rates, &seeds, &RunConfig::new(Mode::Sympinn), thread_limit())?;
    let summary = summarize(&rows);

    std::fs::create_dir_all(out_dir)?;
    for mode in [Mode::Sympinn, Mode::Pinn] {
        let name = match mode {
            Mode::Sympinn => "sympinn.csv",
            Mode::Pinn => "pinn.csv",
        };
        let mut w = csv::Writer::from_path(out_dir.join(name))?;
        w.write_record(["rate", "re", "mse", "seconds"])?;
        for r in rows.iter().filter(|r| r.mode == mode) {
            w.write_record([r.rate, r.re, r.mse, r.seconds].map(|v| v.to_string()))?;
        }
        w.flush()?;
    }
    write_json(&out_dir.join("summary.json"), &summary)?;
    print_table(&mut std::io::stdout().lock(), &summary, &rows)?;
    Ok(())
}

fn print_table(out: &mut impl Write, summary: &[RateSummary], rows: &[CompareRow]) -> Result<()> {
    let n_seeds = rows.iter().filter(|r| r.mode == Mode::Sympinn && r.rate == rows[0].rate).count();
    writeln!(out, "RE mean [min, max] and mean training time over {n_seeds} seeds")?;
    writeln!(out, "{:>6} | {:^33} {:>8} | {:^33} {:>8}", "rate", "SymPINN RE", "time s", "PINN RE", "time s")?;
    for pair in summary.chunks(2) {
        let cell = |s: &RateSummary| format!("{:.3e} [{:.2e}, {:.2e}]", s.re_mean, s.re_min, s.re_max);
        if let [s, p] = pair {
            writeln!(
                out,
                "{:>6.2} | {:^33} {:>8.2} | {:^33} {:>8.2}",
                s.rate,
                cell(s),
                s.seconds_mean,
                cell(p),
                p.seconds_mean
            )?;
        }
    }
    Ok(())
}
