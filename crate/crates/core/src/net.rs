//! Fourier-feature MLP, the hard-constrained ansatz and the two loss terms,
//! evaluated in plain `f64`. The differentiable versions used for training
//! live in [`crate::train`] and must agree with these to rounding.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result, TsgError};

pub const DEFAULT_FOURIER_K: usize = 8;
pub const DEFAULT_FOURIER_SIGMA: f64 = 5.0;
pub const DEFAULT_RHO: f64 = 20.0;
pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

/// Value and first two derivatives with respect to `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub v: Vec<f64>,
    pub d: Vec<f64>,
    pub dd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierFeatureMap {
    freqs: Vec<f64>,
}

impl FourierFeatureMap {
    /// `K` frequencies `|w|` with `w ~ N(0, sigma^2)`, deterministic in `seed`.
    pub fn new(k: usize, sigma: f64, seed: u64) -> Result<Self> {
        if k == 0 {
            return invalid("at least one Fourier frequency is required");
        }
        let normal = Normal::new(0.0, sigma).map_err(|e| TsgError::InvalidInput(format!("frequency scale: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self { freqs: (0..k).map(|_| normal.sample(&mut rng).abs()).collect() })
    }

    pub fn from_freqs(freqs: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() || freqs.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return invalid("frequencies must be finite, nonnegative and nonempty");
        }
        Ok(Self { freqs })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn k(&self) -> usize {
        self.freqs.len()
    }

    pub fn out_dim(&self) -> usize {
        2 * self.freqs.len()
    }

    /// `[sin(2 pi w_1 t), cos(2 pi w_1 t), ..., sin(2 pi w_K t), cos(2 pi w_K t)]`.
    pub fn features(&self, t: f64) -> Vec<f64> {
        self.jet(t).v
    }

    pub fn jet(&self, t: f64) -> Jet {
        let n = self.out_dim();
        let (mut v, mut d, mut dd) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for (k, w) in self.freqs.iter().enumerate() {
            let a = 2.0 * PI * w;
            let (s, c) = (a * t).sin_cos();
            v[2 * k] = s;
            v[2 * k + 1] = c;
            d[2 * k] = a * c;
            d[2 * k + 1] = -a * s;
            dd[2 * k] = -a * a * s;
            dd[2 * k + 1] = -a * a * c;
        }
        Jet { v, d, dd }
    }
}

/// Fully connected tanh network with a linear output layer. Parameters are
/// stored flat, layer by layer, weights (`out x in`, row-major) then biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Offsets of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub n_in: usize,
    pub n_out: usize,
    pub w: usize,
    pub b: usize,
}

impl Mlp {
    /// Weights and biases uniform in `+-1/sqrt(fan_in)`.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut mlp = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        for layer in mlp.layout() {
            let bound = 1.0 / (layer.n_in as f64).sqrt();
            for p in &mut mlp.params[layer.w..layer.b + layer.n_out] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return invalid("network needs an input and an output layer of positive width");
        }
        let n: usize = sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; n] })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut mlp = Self::zeros(sizes)?;
        mlp.set_params(&params)?;
        Ok(mlp)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_in(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_out(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.params.len() {
            return dim_err(format!("{} parameters given, network has {}", theta.len(), self.params.len()));
        }
        self.params.copy_from_slice(theta);
        Ok(())
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let l = LayerLayout { n_in: w[0], n_out: w[1], w: off, b: off + w[0] * w[1] };
                off = l.b + l.n_out;
                l
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_jet(&Jet { v: x.to_vec(), d: vec![0.0; x.len()], dd: vec![0.0; x.len()] })?.v)
    }

    /// Propagate a second-order jet in `t` through the network.
    pub fn forward_jet(&self, x: &Jet) -> Result<Jet> {
        if x.v.len() != self.n_in() || x.d.len() != self.n_in() || x.dd.len() != self.n_in() {
            return dim_err(format!("network input is {}, got {}", self.n_in(), x.v.len()));
        }
        let layers = self.layout();
        let mut h = x.clone();
        for (li, l) in layers.iter().enumerate() {
            let w = &self.params[l.w..l.b];
            let b = &self.params[l.b..l.b + l.n_out];
            let mut a = Jet { v: b.to_vec(), d: vec![0.0; l.n_out], dd: vec![0.0; l.n_out] };
            for o in 0..l.n_out {
                let row = &w[o * l.n_in..(o + 1) * l.n_in];
                for k in 0..l.n_in {
                    a.v[o] += row[k] * h.v[k];
                    a.d[o] += row[k] * h.d[k];
                    a.dd[o] += row[k] * h.dd[k];
                }
            }
            if li + 1 < layers.len() {
                for o in 0..l.n_out {
                    let t = a.v[o].tanh();
                    let s = 1.0 - t * t;
                    let (d1, d2) = (a.d[o], a.dd[o]);
                    a.v[o] = t;
                    a.d[o] = s * d1;
                    a.dd[o] = s * d2 - 2.0 * t * s * d1 * d1;
                }
            }
            h = a;
        }
        Ok(h)
    }
}

/// `z(t) = z0 + t z0' + rho t^2 z_theta(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardConstraintAnsatz {
    pub z0: Vec<f64>,
    pub zdot0: Vec<f64>,
    pub rho: f64,
}

impl HardConstraintAnsatz {
    pub fn new(z0: &DVector<f64>, zdot0: &DVector<f64>, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return invalid("rho must be positive");
        }
        if z0.len() != zdot0.len() {
            return dim_err("z0 and its derivative differ in length");
        }
        Ok(Self { z0: z0.as_slice().to_vec(), zdot0: zdot0.as_slice().to_vec(), rho })
    }
}

/// Coordinates and the derivatives used by the physics residual.
#[derive(Debug, Clone, PartialEq)]
pub struct AnsatzEval {
    pub z: DVector<f64>,
    pub z_dot: DVector<f64>,
    pub z_ddot: DVector<f64>,
}

/// Network of the (reduced) coordinates. With an ansatz the output is
/// `z_theta` of the hard-constrained form; without one the network output is
/// the coordinate vector itself and its derivatives are exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub map: FourierFeatureMap,
    pub mlp: Mlp,
    pub ansatz: Option<HardConstraintAnsatz>,
}

impl Model {
    pub fn new(map: FourierFeatureMap, mlp: Mlp, ansatz: Option<HardConstraintAnsatz>) -> Result<Self> {
        if mlp.n_in() != map.out_dim() {
            return dim_err(format!("network input {} but {} Fourier features", mlp.n_in(), map.out_dim()));
        }
        if let Some(a) = &ansatz {
            if a.z0.len() != mlp.n_out() {
                return dim_err(format!("ansatz dimension {} but network output {}", a.z0.len(), mlp.n_out()));
            }
        }
        Ok(Self { map, mlp, ansatz })
    }

    pub fn dim(&self) -> usize {
        self.mlp.n_out()
    }

    /// `z_theta(t)` with its first and second time derivatives.
    pub fn network_jet(&self, t: f64) -> Result<Jet> {
        self.mlp.forward_jet(&self.map.jet(t))
    }

    pub fn z_theta(&self, t: f64) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.mlp.forward(&self.map.features(t))?))
    }

    pub fn eval(&self, t: f64) -> Result<AnsatzEval> {
        let j = self.network_jet(t)?;
        let n = self.dim();
        Ok(match &self.ansatz {
            Some(a) => {
                let rho = a.rho;
                let z = DVector::from_fn(n, |i, _| a.z0[i] + t * a.zdot0[i] + rho * t * t * j.v[i]);
                let z_dot = DVector::from_fn(n, |i, _| a.zdot0[i] + 2.0 * rho * t * j.v[i]);
                let z_ddot = DVector::from_fn(n, |i, _| 2.0 * rho * j.v[i] + 2.0 * rho * t * j.d[i]);
                AnsatzEval { z, z_dot, z_ddot }
            }
            None => AnsatzEval {
                z: DVector::from_vec(j.v),
                z_dot: DVector::from_vec(j.d),
                z_ddot: DVector::from_vec(j.dd),
            },
        })
    }

    pub fn predict(&self, t: f64) -> Result<DVector<f64>> {
        let z_theta = self.z_theta(t)?;
        Ok(match &self.ansatz {
            Some(a) => DVector::from_fn(self.dim(), |i, _| a.z0[i] + t * a.zdot0[i] + a.rho * t * t * z_theta[i]),
            None => z_theta,
        })
    }
}

/// Constant operators of the residual `M a + D v + K q - w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualOperator {
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    /// Stiffness used when no per-time matrices are supplied.
    pub stiffness: DMatrix<f64>,
    /// Divisor of the physics loss, `||K||_F` at the frozen point.
    pub norm: f64,
}

/// Stiffness used at each collocation time.
#[derive(Debug, Clone, Copy)]
pub enum StiffnessAt<'a> {
    Frozen,
    PerTime(&'a [DMatrix<f64>]),
}

/// `(1/N) sum ||M z'' + D z' + K z - w||^2 / norm`.
pub fn physics_loss(
    op: &ResidualOperator,
    model: &Model,
    times: &[f64],
    loads: &[DVector<f64>],
    stiffness: StiffnessAt<'_>,
) -> Result<f64> {
    if times.is_empty() || loads.len() != times.len() {
        return invalid("physics loss needs one load per collocation time");
    }
    let mut sum = 0.0;
    for (i, &t) in times.iter().enumerate() {
        let e = model.eval(t)?;
        let k = match stiffness {
            StiffnessAt::Frozen => &op.stiffness,
            StiffnessAt::PerTime(ks) => &ks[i],
        };
        let r = &op.mass * &e.z_ddot + &op.damping * &e.z_dot + k * &e.z - &loads[i];
        sum += r.norm_squared();
    }
    Ok(sum / (times.len() as f64 * loss_norm(op.norm)))
}

/// Guarded normalizer; a vanishing `||K||_F` leaves the loss unscaled.
pub(crate) fn loss_norm(norm: f64) -> f64 {
    if norm > 1e-12 {
        norm
    } else {
        1.0
    }
}

/// `(1/N) sum ||z(t) - z_ref(t)||^2`.
pub fn data_loss(model: &Model, times: &[f64], refs: &[DVector<f64>]) -> Result<f64> {
    if times.is_empty() || refs.len() != times.len() {
        return invalid("data loss needs one reference per sample");
    }
    let mut sum = 0.0;
    for (t, r) in times.iter().zip(refs) {
        sum += (model.predict(*t)? - r).norm_squared();
    }
    Ok(sum / times.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_g: f64,
    pub lambda_d: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_g: 1.0, lambda_d: 10.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_g >= 0.0 && self.lambda_d >= 0.0) || self.lambda_g + self.lambda_d == 0.0 {
            return invalid("loss weights must be nonnegative and not both zero");
        }
        Ok(())
    }
}

pub fn total_loss(cfg: &LossConfig, l_g: f64, l_d: f64) -> f64 {
    cfg.lambda_g * l_g + cfg.lambda_d * l_d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Hard-constrained network of the symmetry-reduced coordinates.
    Sympinn,
    /// Plain network of all free coordinates with a soft initial-condition penalty.
    Pinn,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained model plus what is needed to map its output back to node coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub mode: Mode,
    pub seed: u64,
    pub model: Model,
    /// `n_a = U q`, stored row-major with shape `basis_shape`.
    pub basis: Vec<f64>,
    pub basis_shape: (usize, usize),
    pub n_nodes: usize,
    pub free: Vec<usize>,
    /// Stacked coordinates of the constrained nodes, held fixed.
    pub constrained_coords: Vec<f64>,
    pub train_indices: Vec<usize>,
}

impl Checkpoint {
    pub fn basis_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.basis_shape.0, self.basis_shape.1, &self.basis)
    }

    /// Full stacked node coordinates at `t`.
    pub fn predict_nodes(&self, t: f64) -> Result<DVector<f64>> {
        let u = self.basis_matrix();
        let n_a = u * self.model.predict(t)?;
        let constrained: Vec<usize> = (0..self.n_nodes).filter(|i| !self.free.contains(i)).collect();
        let mut n = DVector::zeros(3 * self.n_nodes);
        for (k, &i) in self.free.iter().enumerate() {
            n.fixed_rows_mut::<3>(3 * i).copy_from(&n_a.fixed_rows::<3>(3 * k));
        }
        for (k, &i) in constrained.iter().enumerate() {
            for a in 0..3 {
                n[3 * i + a] = self.constrained_coords[3 * k + a];
            }
        }
        Ok(n)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if ck.version != CHECKPOINT_VERSION {
            return invalid(format!("unsupported checkpoint version {}", ck.version));
        }
        if ck.basis.len() != ck.basis_shape.0 * ck.basis_shape.1 || ck.basis_shape.1 != ck.model.dim() {
            return dim_err("checkpoint basis does not match the model");
        }
        if ck.basis_shape.0 != 3 * ck.free.len() || ck.constrained_coords.len() != 3 * (ck.n_nodes - ck.free.len()) {
            return dim_err("checkpoint node partition is inconsistent");
        }
        Ok(ck)
    }
}
