//! Differentiable losses, the two-stage Adam then L-BFGS loop and the
//! train/test split.

pub mod optim;
pub mod tape;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{Adam, AdamConfig, Lbfgs, LbfgsConfig, LbfgsStep};
pub use tape::{Mat, Tape, Var};

use crate::dynamics::SecondOrderSystem;
use crate::error::{dim_err, invalid, Result, TsgError};
use crate::net::{loss_norm, LayerLayout, LossConfig, Model, ResidualOperator};

/// Where the physics loss evaluates the stiffness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StiffnessMode {
    /// `K(q0, 0)` for every collocation time.
    #[default]
    Frozen,
    /// `K(q(t_i), t_i)` at the current prediction, refreshed once per Adam
    /// epoch and per L-BFGS step and held constant for differentiation.
    Relinearized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub lbfgs: LbfgsConfig,
    /// Relative change of the total loss that ends a stage.
    pub tol: f64,
    pub seed: u64,
    pub sampling_rate: f64,
    pub loss: LossConfig,
    pub stiffness: StiffnessMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            lbfgs: LbfgsConfig::default(),
            tol: 1e-5,
            seed: 0,
            sampling_rate: 0.5,
            loss: LossConfig::default(),
            stiffness: StiffnessMode::Frozen,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let a = &self.adam;
        let l = &self.lbfgs;
        let positive = [a.lr, a.eps, self.tol, l.c1, l.c2].iter().all(|v| *v > 0.0);
        if !positive || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return invalid("optimizer settings must be positive with betas in [0, 1)");
        }
        if l.history_size == 0 || l.max_fn_evals_per_iter == 0 || l.max_inner_iters == 0 || !(l.c1 < l.c2 && l.c2 < 1.0) {
            return invalid("L-BFGS needs positive budgets and 0 < c1 < c2 < 1");
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return invalid("sampling rate must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Adam,
    Lbfgs,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Adam => "adam",
            Stage::Lbfgs => "lbfgs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub physics: f64,
    pub data: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub stage: Stage,
    pub loss: LossParts,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub params: Vec<f64>,
    pub history: Vec<HistoryEntry>,
    pub adam_epochs: usize,
    pub lbfgs_iters: usize,
    /// Loss evaluations spent inside L-BFGS.
    pub lbfgs_evals: usize,
    pub adam_seconds: f64,
    pub lbfgs_seconds: f64,
    /// Some L-BFGS step found no decrease and was rolled back.
    pub line_search_failed: bool,
}

impl TrainState {
    pub fn seconds(&self) -> f64 {
        self.adam_seconds + self.lbfgs_seconds
    }

    pub fn write_history<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "stage", "L", "L_G", "L_D", "wall_ms"])?;
        for h in &self.history {
            w.write_record([
                h.epoch.to_string(),
                h.stage.as_str().to_string(),
                format!("{:?}", h.loss.total),
                format!("{:?}", h.loss.physics),
                format!("{:?}", h.loss.data),
                format!("{:.3}", h.wall_ms),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Training data and the dynamics the residual is taken from. Collocation
/// and measurement times coincide.
#[derive(Debug, Clone)]
pub struct Problem {
    pub system: SecondOrderSystem,
    pub times: Vec<f64>,
    pub refs: Vec<DVector<f64>>,
}

impl Problem {
    pub fn new(system: SecondOrderSystem, times: Vec<f64>, refs: Vec<DVector<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != refs.len() {
            return invalid("training needs one reference per sample time");
        }
        if refs.iter().any(|r| r.len() != system.dim()) {
            return dim_err("reference dimension differs from the system");
        }
        Ok(Self { system, times, refs })
    }

    /// Operators frozen at the initial state.
    pub fn operator(&self) -> Result<ResidualOperator> {
        let stiffness = self.system.stiffness(&self.system.q0, 0.0)?;
        let norm = stiffness.norm();
        Ok(ResidualOperator { mass: self.system.mass.clone(), damping: self.system.damping.clone(), stiffness, norm })
    }

    /// Loads `w(q0, t_i)`.
    pub fn frozen_loads(&self) -> Result<Vec<DVector<f64>>> {
        self.times.iter().map(|t| self.system.load(&self.system.q0, *t)).collect()
    }
}

/// Per-time stiffness and loads at the current predictions.
fn relinearize(problem: &Problem, model: &Model) -> Result<(Vec<Mat>, Mat)> {
    let mut ks = Vec::with_capacity(problem.times.len());
    let mut loads = Vec::with_capacity(problem.times.len());
    for &t in &problem.times {
        let q = model.predict(t)?;
        ks.push(Mat::from_nalgebra(&problem.system.stiffness(&q, t)?));
        loads.push(problem.system.load(&q, t)?);
    }
    Ok((ks, Mat::from_rows(&loads, problem.system.dim())))
}

/// The training loss with everything independent of the parameters
/// precomputed.
pub struct CompiledLoss {
    layout: Vec<LayerLayout>,
    n_params: usize,
    dim: usize,
    cfg: LossConfig,
    gamma: [Mat; 3],
    /// `Some(rho)` for the hard-constrained form.
    rho: Option<f64>,
    times: Vec<f64>,
    /// Rows `z0 + t z0'` and `z0'`.
    base: Option<(Mat, Mat)>,
    mass: Mat,
    damping: Mat,
    stiffness: Mat,
    stiffness_rows: Option<Vec<Mat>>,
    loads: Mat,
    refs: Mat,
    norm: f64,
    /// Row of `t = 0` with `(q0, v0)` for the soft initial-condition penalty.
    initial: Option<(usize, Mat, Mat)>,
}

impl CompiledLoss {
    pub fn new(problem: &Problem, model: &Model, cfg: LossConfig) -> Result<Self> {
        cfg.validate()?;
        let dim = problem.system.dim();
        if model.dim() != dim {
            return dim_err(format!("model output {} but system dimension {dim}", model.dim()));
        }
        let b = problem.times.len();
        let nf = model.map.out_dim();
        let mut gamma = [Mat::zeros(b, nf), Mat::zeros(b, nf), Mat::zeros(b, nf)];
        for (i, &t) in problem.times.iter().enumerate() {
            let j = model.map.jet(t);
            gamma[0].row_mut(i).copy_from_slice(&j.v);
            gamma[1].row_mut(i).copy_from_slice(&j.d);
            gamma[2].row_mut(i).copy_from_slice(&j.dd);
        }
        let op = problem.operator()?;
        let loads = problem.frozen_loads()?;
        let base = model.ansatz.as_ref().map(|a| {
            let mut c0 = Mat::zeros(b, dim);
            let mut c1 = Mat::zeros(b, dim);
            for (i, &t) in problem.times.iter().enumerate() {
                for k in 0..dim {
                    c0.row_mut(i)[k] = a.z0[k] + t * a.zdot0[k];
                    c1.row_mut(i)[k] = a.zdot0[k];
                }
            }
            (c0, c1)
        });
        let initial = if model.ansatz.is_none() {
            let i0 = problem
                .times
                .iter()
                .position(|t| *t == 0.0)
                .ok_or_else(|| TsgError::InvalidInput("training times must include t = 0".into()))?;
            Some((
                i0,
                Mat::from_vec(1, dim, problem.system.q0.as_slice().to_vec()),
                Mat::from_vec(1, dim, problem.system.v0.as_slice().to_vec()),
            ))
        } else {
            None
        };
        Ok(Self {
            layout: model.mlp.layout(),
            n_params: model.mlp.n_params(),
            dim,
            cfg,
            gamma,
            rho: model.ansatz.as_ref().map(|a| a.rho),
            times: problem.times.clone(),
            base,
            mass: Mat::from_nalgebra(&op.mass),
            damping: Mat::from_nalgebra(&op.damping),
            stiffness: Mat::from_nalgebra(&op.stiffness),
            stiffness_rows: None,
            loads: Mat::from_rows(&loads, dim),
            refs: Mat::from_rows(&problem.refs, dim),
            norm: loss_norm(op.norm),
            initial,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Replace the stiffness and loads by per-time values.
    pub fn set_linearization(&mut self, stiffness_rows: Vec<Mat>, loads: Mat) -> Result<()> {
        if stiffness_rows.len() != self.times.len() || loads.rows != self.times.len() || loads.cols != self.dim {
            return dim_err("linearization does not match the collocation set");
        }
        self.stiffness_rows = Some(stiffness_rows);
        self.loads = loads;
        Ok(())
    }

    /// Record the loss on a fresh tape; returns the tape, the total and its parts.
    pub fn record(&self, theta: &[f64]) -> Result<(Tape, Var, LossParts)> {
        if theta.len() != self.n_params {
            return dim_err(format!("{} parameters given, loss expects {}", theta.len(), self.n_params));
        }
        let second = self.rho.is_none();
        let mut tape = Tape::new();
        let mut h0 = tape.constant(self.gamma[0].clone());
        let mut h1 = tape.constant(self.gamma[1].clone());
        let mut h2 = second.then(|| tape.constant(self.gamma[2].clone()));
        let last = self.layout.len() - 1;
        for (li, l) in self.layout.iter().enumerate() {
            let w = tape.param(theta, l.w, l.n_out, l.n_in);
            let b = tape.param(theta, l.b, 1, l.n_out);
            let a0 = tape.matmul_t(h0, w);
            let a0 = tape.add_bias(a0, b);
            let a1 = tape.matmul_t(h1, w);
            let a2 = h2.map(|h| tape.matmul_t(h, w));
            if li == last {
                (h0, h1, h2) = (a0, a1, a2);
            } else {
                // tanh jet: h' = s a', h'' = s a'' - 2 h s a'^2 with s = 1 - h^2
                let t = tape.tanh(a0);
                let s = tape.one_minus_sq(t);
                let d1 = tape.mul(s, a1);
                h2 = match a2 {
                    Some(a2) => {
                        let sa2 = tape.mul(s, a2);
                        let ta1 = tape.mul(t, d1);
                        let ta1a1 = tape.mul(ta1, a1);
                        let corr = tape.scale(ta1a1, 2.0);
                        Some(tape.sub(sa2, corr))
                    }
                    None => None,
                };
                (h0, h1) = (t, d1);
            }
        }

        let (z, z_dot, z_ddot) = match (self.rho, &self.base) {
            (Some(rho), Some((c0, c1))) => {
                let c0 = tape.constant(c0.clone());
                let c1 = tape.constant(c1.clone());
                let zt = tape.scale_rows(h0, self.times.iter().map(|t| rho * t * t).collect());
                let z = tape.add(c0, zt);
                let dt = tape.scale_rows(h0, self.times.iter().map(|t| 2.0 * rho * t).collect());
                let z_dot = tape.add(c1, dt);
                let a = tape.scale(h0, 2.0 * rho);
                let b = tape.scale_rows(h1, self.times.iter().map(|t| 2.0 * rho * t).collect());
                let z_ddot = tape.add(a, b);
                (z, z_dot, z_ddot)
            }
            _ => (h0, h1, h2.expect("second derivative is recorded without an ansatz")),
        };

        let ma = tape.matmul_const_t(z_ddot, self.mass.clone());
        let dv = tape.matmul_const_t(z_dot, self.damping.clone());
        let kq = match &self.stiffness_rows {
            Some(rows) => tape.row_matmul(z, rows.clone()),
            None => tape.matmul_const_t(z, self.stiffness.clone()),
        };
        let w = tape.constant(self.loads.clone());
        let r = tape.add(ma, dv);
        let r = tape.add(r, kq);
        let r = tape.sub(r, w);
        let rs = tape.sum_sq(r);
        let l_g = tape.scale(rs, 1.0 / (self.times.len() as f64 * self.norm));

        let refs = tape.constant(self.refs.clone());
        let e = tape.sub(z, refs);
        let es = tape.sum_sq(e);
        let mut l_d = tape.scale(es, 1.0 / self.times.len() as f64);
        if let Some((i0, q0, v0)) = &self.initial {
            let q = tape.rows(z, vec![*i0]);
            let v = tape.rows(z_dot, vec![*i0]);
            let q0 = tape.constant(q0.clone());
            let v0 = tape.constant(v0.clone());
            let eq = tape.sub(q, q0);
            let ev = tape.sub(v, v0);
            let sq = tape.sum_sq(eq);
            let sv = tape.sum_sq(ev);
            let ic = tape.add(sq, sv);
            l_d = tape.add(l_d, ic);
        }
        let wg = tape.scale(l_g, self.cfg.lambda_g);
        let wd = tape.scale(l_d, self.cfg.lambda_d);
        let total = tape.add(wg, wd);
        let parts = LossParts { total: tape.scalar(total), physics: tape.scalar(l_g), data: tape.scalar(l_d) };
        Ok((tape, total, parts))
    }

    pub fn value(&self, theta: &[f64]) -> Result<LossParts> {
        let parts = self.record(theta)?.2;
        if !parts.total.is_finite() {
            return Err(TsgError::Numerical(format!("loss is not finite ({})", parts.total)));
        }
        Ok(parts)
    }

    /// Loss parts and the gradient of the total with respect to `theta`.
    pub fn grad(&self, theta: &[f64]) -> Result<(LossParts, Vec<f64>)> {
        let (tape, total, parts) = self.record(theta)?;
        let g = tape.backward(total, self.n_params)?;
        Ok((parts, g))
    }
}

/// `d z_theta / dt` by forward propagation of the time derivative.
pub fn t_derivative(model: &Model, t: f64) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(model.network_jet(t)?.d))
}

/// Uniform split without replacement; index 0 (`t = 0`) is always in the
/// training set. Both index lists are sorted.
pub fn sample_split(n_times: usize, rate: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(rate > 0.0 && rate <= 1.0) {
        return invalid(format!("sampling rate {rate} outside (0, 1]"));
    }
    let n_train = ((rate * n_times as f64).round() as usize).max(1);
    if n_times == 0 || n_train >= n_times {
        return invalid(format!("rate {rate} on {n_times} points leaves no test samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train: Vec<usize> = sample(&mut rng, n_times - 1, n_train - 1).into_iter().map(|i| i + 1).collect();
    train.push(0);
    train.sort_unstable();
    let mut is_train = vec![false; n_times];
    train.iter().for_each(|&i| is_train[i] = true);
    let test = (0..n_times).filter(|&i| !is_train[i]).collect();
    Ok((train, test))
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    (cur - prev).abs() / prev.abs().max(f64::MIN_POSITIVE)
}

/// Adam for up to `max_epochs`, then L-BFGS for up to `max_iters` steps.
/// Each stage stops once the relative change of the total loss drops below
/// `tol`. Returns the best parameters seen.
pub fn train(problem: &Problem, model: &Model, cfg: &TrainConfig) -> Result<(Model, TrainState)> {
    cfg.validate()?;
    let mut loss = CompiledLoss::new(problem, model, cfg.loss)?;
    let mut theta = model.mlp.params().to_vec();
    let mut state = TrainState {
        params: theta.clone(),
        history: Vec::new(),
        adam_epochs: 0,
        lbfgs_iters: 0,
        lbfgs_evals: 0,
        adam_seconds: 0.0,
        lbfgs_seconds: 0.0,
        line_search_failed: false,
    };
    let mut best = (f64::INFINITY, theta.clone());
    let mut work = model.clone();
    let mut refresh = |loss: &mut CompiledLoss, theta: &[f64]| -> Result<()> {
        if cfg.stiffness == StiffnessMode::Relinearized {
            work.mlp.set_params(theta)?;
            let (ks, w) = relinearize(problem, &work)?;
            loss.set_linearization(ks, w)?;
        }
        Ok(())
    };

    let start = Instant::now();
    let mut adam = Adam::new(cfg.adam, theta.len());
    let mut prev: Option<f64> = None;
    for epoch in 0..cfg.adam.max_epochs {
        refresh(&mut loss, &theta)?;
        let (parts, g) = loss.grad(&theta).map_err(|e| diverged(e, Stage::Adam, epoch))?;
        state.history.push(HistoryEntry {
            epoch,
            stage: Stage::Adam,
            loss: parts,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if parts.total < best.0 {
            best = (parts.total, theta.clone());
        }
        state.adam_epochs = epoch + 1;
        if let Some(p) = prev {
            if relative_change(p, parts.total) < cfg.tol {
                break;
            }
        }
        prev = Some(parts.total);
        adam.step(&mut theta, &g)?;
    }
    state.adam_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    if cfg.lbfgs.max_iters > 0 {
        theta = best.1.clone();
        let mut lbfgs = Lbfgs::new(cfg.lbfgs);
        let mut prev = if best.0.is_finite() { Some(best.0) } else { None };
        for it in 0..cfg.lbfgs.max_iters {
            refresh(&mut loss, &theta)?;
            let mut f = |x: &[f64]| loss.grad(x).map(|(p, g)| (p.total, g));
            let step = lbfgs.step(&mut theta, &mut f).map_err(|e| diverged(e, Stage::Lbfgs, it))?;
            state.line_search_failed |= step.line_search_failed;
            state.lbfgs_evals += step.evaluations;
            let parts = loss.value(&theta)?;
            state.history.push(HistoryEntry {
                epoch: it,
                stage: Stage::Lbfgs,
                loss: parts,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            state.lbfgs_iters = it + 1;
            if parts.total < best.0 {
                best = (parts.total, theta.clone());
            }
            let stalled = prev.is_some_and(|p| relative_change(p, parts.total) < cfg.tol);
            if stalled || step.iterations == 0 {
                break;
            }
            prev = Some(parts.total);
        }
    }
    state.lbfgs_seconds = start.elapsed().as_secs_f64();

    let mut out = model.clone();
    if best.0.is_finite() {
        out.mlp.set_params(&best.1)?;
    }
    state.params = out.mlp.params().to_vec();
    Ok((out, state))
}

fn diverged(e: TsgError, stage: Stage, step: usize) -> TsgError {
    match e {
        TsgError::Numerical(msg) => TsgError::Numerical(format!("training diverged in {} step {step}: {msg}", stage.as_str())),
        other => other,
    }
}

/// Stiffness at every collocation time for the current model, in the form
/// the plain-`f64` physics loss takes.
pub fn stiffness_at_predictions(problem: &Problem, model: &Model) -> Result<Vec<DMatrix<f64>>> {
    problem.times.iter().map(|&t| problem.system.stiffness(&model.predict(t)?, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_and_anchor() {
        let (train, test) = sample_split(1001, 0.5, 3).unwrap();
        assert_eq!((train.len(), test.len()), (501, 500));
        assert_eq!(train[0], 0);
        assert_eq!(sample_split(1001, 0.5, 3).unwrap(), (train, test));
        assert_ne!(sample_split(1001, 0.5, 4).unwrap().0, sample_split(1001, 0.5, 3).unwrap().0);
    }

    #[test]
    fn split_rejects_empty_test_set() {
        assert!(sample_split(10, 1.0, 0).is_err());
        assert!(sample_split(10, 0.0, 0).is_err());
    }
}
