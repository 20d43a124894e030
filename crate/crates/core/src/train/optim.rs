//! Adam and limited-memory BFGS over a flat parameter vector.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, TsgError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_epochs: 1000 }
    }
}

/// Bias-corrected first and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        Self { cfg, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if grad.len() != theta.len() || grad.len() != self.m.len() {
            return invalid("gradient length does not match the parameters");
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(TsgError::Numerical("non-finite gradient in Adam step".into()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for i in 0..theta.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    /// Outer steps of the refinement stage.
    pub max_iters: usize,
    pub history_size: usize,
    /// Function evaluations allowed within one outer step.
    pub max_fn_evals_per_iter: usize,
    /// Quasi-Newton iterations allowed within one outer step.
    pub max_inner_iters: usize,
    pub c1: f64,
    pub c2: f64,
    /// Stop when the largest gradient entry falls below this.
    pub tol_grad: f64,
    /// Stop when the directional derivative, the step or the loss change
    /// falls below this in absolute value.
    pub tol_change: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iters: 10,
            history_size: 10,
            max_fn_evals_per_iter: 50,
            max_inner_iters: 50,
            c1: 1e-4,
            c2: 0.9,
            tol_grad: 1e-7,
            tol_change: 1e-9,
        }
    }
}

const MAX_LINE_SEARCH: usize = 25;

/// Outcome of one call to [`Lbfgs::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsStep {
    pub loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// The line search produced no decrease; parameters were restored.
    pub line_search_failed: bool,
}

/// L-BFGS with the two-loop recursion and a strong-Wolfe line search. The
/// curvature history persists across calls to [`Lbfgs::step`].
#[derive(Debug, Clone)]
pub struct Lbfgs {
    cfg: LbfgsConfig,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    rho: VecDeque<f64>,
    h_diag: f64,
    prev: Option<(Vec<f64>, Vec<f64>)>,
    total_iters: usize,
}

impl Lbfgs {
    pub fn new(cfg: LbfgsConfig) -> Self {
        Self { cfg, s: VecDeque::new(), y: VecDeque::new(), rho: VecDeque::new(), h_diag: 1.0, prev: None, total_iters: 0 }
    }

    pub fn config(&self) -> &LbfgsConfig {
        &self.cfg
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = g.iter().map(|x| -x).collect();
        let k = self.s.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = self.rho[i] * dot(&self.s[i], &q);
            axpy(-alpha[i], &self.y[i], &mut q);
        }
        q.iter_mut().for_each(|v| *v *= self.h_diag);
        for i in 0..k {
            let beta = self.rho[i] * dot(&self.y[i], &q);
            axpy(alpha[i] - beta, &self.s[i], &mut q);
        }
        q
    }

    /// One refinement step from `x`, mutating it in place. `f` returns the
    /// loss and its gradient.
    pub fn step<F>(&mut self, x: &mut [f64], f: &mut F) -> Result<LbfgsStep>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        let (mut loss, mut g) = f(x)?;
        let mut evals = 1;
        let start = (x.to_vec(), loss);
        if max_abs(&g) <= self.cfg.tol_grad {
            return Ok(LbfgsStep { loss, iterations: 0, evaluations: evals, line_search_failed: false });
        }
        let mut iters = 0;
        let mut failed = false;
        while iters < self.cfg.max_inner_iters {
            iters += 1;
            self.total_iters += 1;
            if let Some((s_prev, g_prev)) = self.prev.take() {
                let y: Vec<f64> = g.iter().zip(&g_prev).map(|(a, b)| a - b).collect();
                let ys = dot(&y, &s_prev);
                if ys > 1e-10 {
                    if self.s.len() == self.cfg.history_size {
                        self.s.pop_front();
                        self.y.pop_front();
                        self.rho.pop_front();
                    }
                    self.h_diag = ys / dot(&y, &y);
                    self.s.push_back(s_prev);
                    self.y.push_back(y);
                    self.rho.push_back(1.0 / ys);
                }
            }
            let d = if self.total_iters == 1 { g.iter().map(|v| -v).collect() } else { self.direction(&g) };
            let t0 = if self.total_iters == 1 { (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0) } else { 1.0 };
            let gtd = dot(&g, &d);
            if gtd > -self.cfg.tol_change {
                break;
            }
            let prev_loss = loss;
            let x0 = x.to_vec();
            let ls = strong_wolfe(f, &x0, t0, &d, loss, &g, gtd, &self.cfg)?;
            evals += ls.evals;
            if !(ls.f <= prev_loss) {
                x.copy_from_slice(&x0);
                failed = true;
                break;
            }
            for (xi, di) in x.iter_mut().zip(&d) {
                *xi += ls.t * di;
            }
            let step: Vec<f64> = d.iter().map(|v| v * ls.t).collect();
            self.prev = Some((step.clone(), g));
            loss = ls.f;
            g = ls.g;
            if evals >= self.cfg.max_fn_evals_per_iter
                || max_abs(&g) <= self.cfg.tol_grad
                || max_abs(&step) <= self.cfg.tol_change
                || (loss - prev_loss).abs() < self.cfg.tol_change
            {
                break;
            }
        }
        if loss > start.1 {
            x.copy_from_slice(&start.0);
            loss = start.1;
            failed = true;
        }
        Ok(LbfgsStep { loss, iterations: iters, evaluations: evals, line_search_failed: failed })
    }
}

struct LineSearch {
    f: f64,
    g: Vec<f64>,
    t: f64,
    evals: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimiser of the cubic through `(x1, f1, g1)` and `(x2, f2, g2)`, clamped
/// to `bounds`; the midpoint when the cubic has no real minimiser.
fn cubic_interpolate(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, bounds: Option<(f64, f64)>) -> f64 {
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let t = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if t.is_finite() {
            return t.max(lo).min(hi);
        }
    }
    0.5 * (lo + hi)
}

/// Bracketing phase followed by zoom with cubic interpolation.
#[allow(clippy::too_many_arguments)]
fn strong_wolfe<F>(
    obj: &mut F,
    x: &[f64],
    mut t: f64,
    d: &[f64],
    f: f64,
    g: &[f64],
    gtd: f64,
    cfg: &LbfgsConfig,
) -> Result<LineSearch>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (c1, c2) = (cfg.c1, cfg.c2);
    let d_norm = max_abs(d);
    let mut eval = |t: f64| -> Result<(f64, Vec<f64>, f64)> {
        let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        match obj(&xt) {
            Ok((fv, gv)) => {
                let gtd = dot(&gv, d);
                Ok((fv, gv, gtd))
            }
            // an overflowing trial behaves like a very high loss
            Err(TsgError::Numerical(_)) => Ok((f64::INFINITY, vec![0.0; d.len()], f64::INFINITY)),
            Err(e) => Err(e),
        }
    };

    let (mut f_new, mut g_new, mut gtd_new) = eval(t)?;
    let mut evals = 1;
    let (mut t_prev, mut f_prev, mut g_prev, mut gtd_prev) = (0.0, f, g.to_vec(), gtd);
    let mut done = false;
    let mut ls_iter = 0;

    let mut bracket: Vec<f64>;
    let mut bracket_f: Vec<f64>;
    let mut bracket_g: Vec<Vec<f64>>;
    let mut bracket_gtd: Vec<f64>;
    loop {
        if ls_iter >= MAX_LINE_SEARCH {
            bracket = vec![0.0, t];
            bracket_f = vec![f, f_new];
            bracket_g = vec![g.to_vec(), g_new];
            bracket_gtd = vec![gtd, gtd_new];
            break;
        }
        if f_new > f + c1 * t * gtd || !f_new.is_finite() || (ls_iter > 1 && f_new >= f_prev) {
            bracket = vec![t_prev, t];
            bracket_f = vec![f_prev, f_new];
            bracket_g = vec![g_prev, g_new];
            bracket_gtd = vec![gtd_prev, gtd_new];
            break;
        }
        if gtd_new.abs() <= -c2 * gtd {
            bracket = vec![t];
            bracket_f = vec![f_new];
            bracket_g = vec![g_new];
            bracket_gtd = vec![gtd_new];
            done = true;
            break;
        }
        if gtd_new >= 0.0 {
            bracket = vec![t_prev, t];
            bracket_f = vec![f_prev, f_new];
            bracket_g = vec![g_prev, g_new];
            bracket_gtd = vec![gtd_prev, gtd_new];
            break;
        }
        let min_step = t + 0.01 * (t - t_prev);
        let max_step = t * 10.0;
        let tmp = t;
        t = cubic_interpolate(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, Some((min_step, max_step)));
        t_prev = tmp;
        f_prev = f_new;
        g_prev = g_new;
        gtd_prev = gtd_new;
        (f_new, g_new, gtd_new) = eval(t)?;
        evals += 1;
        ls_iter += 1;
    }

    let order = |bf: &[f64]| if bf[0] <= bf[bf.len() - 1] { (0, 1) } else { (1, 0) };
    let (mut low, mut high) = if bracket.len() == 2 { order(&bracket_f) } else { (0, 0) };
    let mut insufficient = false;
    while !done && ls_iter < MAX_LINE_SEARCH {
        let (bmin, bmax) = (bracket[0].min(bracket[1]), bracket[0].max(bracket[1]));
        if (bracket[1] - bracket[0]).abs() * d_norm < cfg.tol_change {
            break;
        }
        let (f0, f1) = (bracket_f[0], bracket_f[1]);
        t = if f0.is_finite() && f1.is_finite() {
            cubic_interpolate(bracket[0], f0, bracket_gtd[0], bracket[1], f1, bracket_gtd[1], None)
        } else {
            0.5 * (bmin + bmax)
        };
        let eps = 0.1 * (bmax - bmin);
        if (bmax - t).min(t - bmin) < eps {
            if insufficient || t >= bmax || t <= bmin {
                t = if (t - bmax).abs() < (t - bmin).abs() { bmax - eps } else { bmin + eps };
                insufficient = false;
            } else {
                insufficient = true;
            }
        } else {
            insufficient = false;
        }
        (f_new, g_new, gtd_new) = eval(t)?;
        evals += 1;
        ls_iter += 1;
        if f_new > f + c1 * t * gtd || f_new >= bracket_f[low] {
            bracket[high] = t;
            bracket_f[high] = f_new;
            bracket_g[high] = g_new;
            bracket_gtd[high] = gtd_new;
            (low, high) = order(&bracket_f);
        } else {
            if gtd_new.abs() <= -c2 * gtd {
                done = true;
            } else if gtd_new * (bracket[high] - bracket[low]) >= 0.0 {
                bracket[high] = bracket[low];
                bracket_f[high] = bracket_f[low];
                bracket_g[high] = bracket_g[low].clone();
                bracket_gtd[high] = bracket_gtd[low];
            }
            bracket[low] = t;
            bracket_f[low] = f_new;
            bracket_g[low] = g_new;
            bracket_gtd[low] = gtd_new;
        }
    }
    Ok(LineSearch { f: bracket_f[low], g: bracket_g.swap_remove(low), t: bracket[low], evals })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_is_lr() {
        let mut adam = Adam::new(AdamConfig::default(), 2);
        let mut theta = vec![0.5, -1.0];
        adam.step(&mut theta, &[1.0, -3.0]).unwrap();
        assert!((theta[0] - (0.5 - 1e-3)).abs() < 1e-10);
        assert!((theta[1] - (-1.0 + 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut adam = Adam::new(AdamConfig::default(), 3);
        let mut theta = vec![1.0, 2.0, 3.0];
        for _ in 0..10 {
            adam.step(&mut theta, &[0.0; 3]).unwrap();
        }
        assert_eq!(theta, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut adam = Adam::new(AdamConfig::default(), 1);
        assert!(adam.step(&mut [0.0], &[f64::NAN]).is_err());
    }

    #[test]
    fn cubic_interpolation_of_quadratic_is_exact() {
        // f(x) = (x - 2)^2
        let t = cubic_interpolate(0.0, 4.0, -4.0, 3.0, 1.0, 2.0, None);
        assert!((t - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rosenbrock_is_solved() {
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            Ok((v, vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]))
        };
        let cfg = LbfgsConfig { max_inner_iters: 200, max_fn_evals_per_iter: 500, ..Default::default() };
        let mut opt = Lbfgs::new(cfg);
        let mut x = vec![-1.2, 1.0];
        let out = opt.step(&mut x, &mut f).unwrap();
        assert!(out.loss < 1e-12, "{out:?}");
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn convex_quadratic_within_d_plus_two_iterations() {
        // f(x) = 1/2 x^T A x - b^T x with A = B^T B + I
        let d = 6;
        let bm: Vec<f64> = (0..d * d).map(|k| ((k * 7 + 3) % 11) as f64 / 11.0 - 0.5).collect();
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = (0..d).map(|k| bm[k * d + i] * bm[k * d + j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
            }
        }
        let b: Vec<f64> = (0..d).map(|i| 1.0 + i as f64).collect();
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let ax: Vec<f64> = (0..d).map(|i| dot(&a[i * d..(i + 1) * d], x)).collect();
            let g: Vec<f64> = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
            Ok((0.5 * dot(x, &ax) - dot(&b, x), g))
        };
        // finite termination needs (near) exact line minimisation, so the
        // curvature condition is tightened; the cubic step is exact on a quadratic
        let cfg = LbfgsConfig { max_inner_iters: d + 2, max_fn_evals_per_iter: 1000, c2: 1e-8, tol_change: 0.0, tol_grad: 0.0, ..Default::default() };
        let mut x = vec![0.0; d];
        let out = Lbfgs::new(cfg).step(&mut x, &mut f).unwrap();
        // exact minimum value -b^T A^{-1} b / 2 from a direct solve
        let am = nalgebra::DMatrix::from_row_slice(d, d, &a);
        let x_star = am.lu().solve(&nalgebra::DVector::from_column_slice(&b)).unwrap();
        let f_star = -0.5 * dot(&b, x_star.as_slice());
        assert!(out.iterations <= d + 2);
        assert!((out.loss - f_star).abs() <= 1e-14 * f_star.abs(), "{out:?} vs {f_star}");
    }

    #[test]
    fn stationary_point_needs_one_evaluation() {
        let mut calls = 0;
        let mut f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            calls += 1;
            Ok((x[0] * x[0], vec![2.0 * x[0]]))
        };
        let mut x = vec![0.0];
        let out = Lbfgs::new(LbfgsConfig::default()).step(&mut x, &mut f).unwrap();
        assert_eq!((out.evaluations, out.iterations), (1, 0));
        assert_eq!(calls, 1);
    }
}
