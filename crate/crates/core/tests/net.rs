//! Network, ansatz and loss checks against finite differences and against
//! the plain-`f64` reference losses.

mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsg::net::{data_loss, physics_loss, FourierFeatureMap, LossConfig, Mlp, Mode, Model, StiffnessAt};
use tsg::pipeline::{ModelConfig, Pipeline};
use tsg::symmetry::{unstack, verify_symmetry};
use tsg::train::{sample_split, t_derivative, CompiledLoss, Problem};

fn narrow() -> ModelConfig {
    ModelConfig { hidden: vec![8, 8], ..ModelConfig::default() }
}

/// Parameters drawn uniformly in `+-scale`.
fn random_params(model: &mut Model, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: Vec<f64> = (0..model.mlp.n_params()).map(|_| rng.random_range(-scale..scale)).collect();
    model.mlp.set_params(&theta).unwrap();
}

fn problem(p: &Pipeline, mode: Mode) -> Problem {
    let truth = common::truth(p);
    let (train, _) = sample_split(truth.len(), 0.05, 7).unwrap();
    p.problem(mode, &truth, &train).unwrap()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

#[test]
fn parameter_gradients_match_central_differences() {
    for name in ["tbar", "lander"] {
        let p = common::pipeline(name);
        for mode in [Mode::Sympinn, Mode::Pinn] {
            let prob = problem(&p, mode);
            let mut model = p.model(mode, &narrow(), 3).unwrap();
            random_params(&mut model, 11, 0.5);
            let loss = CompiledLoss::new(&prob, &model, LossConfig::default()).unwrap();
            let theta = model.mlp.params().to_vec();
            let (_, g) = loss.grad(&theta).unwrap();
            let fd: Vec<f64> = (0..theta.len())
                .map(|i| {
                    let h = 1e-6 * theta[i].abs().max(1.0);
                    let (mut up, mut down) = (theta.clone(), theta.clone());
                    up[i] += h;
                    down[i] -= h;
                    (loss.value(&up).unwrap().total - loss.value(&down).unwrap().total) / (2.0 * h)
                })
                .collect();
            let e = rel(&g, &fd);
            assert!(e <= 1e-5, "{name} {mode:?}: relative gradient error {e:e}");
        }
    }
}

#[test]
fn recorded_loss_matches_reference_losses() {
    for name in ["tbar", "lander"] {
        let p = common::pipeline(name);
        let prob = problem(&p, Mode::Sympinn);
        let model = p.model(Mode::Sympinn, &ModelConfig::default(), 5).unwrap();
        let cfg = LossConfig::default();
        let parts = CompiledLoss::new(&prob, &model, cfg).unwrap().value(model.mlp.params()).unwrap();
        let loads = prob.frozen_loads().unwrap();
        let l_g = physics_loss(&prob.operator().unwrap(), &model, &prob.times, &loads, StiffnessAt::Frozen).unwrap();
        let l_d = data_loss(&model, &prob.times, &prob.refs).unwrap();
        assert!((parts.physics - l_g).abs() <= 1e-12 * l_g, "{name}");
        assert!((parts.data - l_d).abs() <= 1e-12 * l_d, "{name}");
        assert!((parts.total - (cfg.lambda_g * l_g + cfg.lambda_d * l_d)).abs() <= 1e-12 * parts.total);
    }
}

#[test]
fn time_derivatives_match_central_differences() {
    for name in ["tbar", "lander"] {
        let p = common::pipeline(name);
        for mode in [Mode::Sympinn, Mode::Pinn] {
            let mut model = p.model(mode, &narrow(), 1).unwrap();
            random_params(&mut model, 2, 0.5);
            for t in [0.0, 0.137, 0.5, 0.93] {
                let h = 1e-5;
                let zt = |s: f64| model.z_theta(s).unwrap();
                let fd = (zt(t + h) - zt(t - h)) / (2.0 * h);
                let d = t_derivative(&model, t).unwrap();
                assert!(rel(d.as_slice(), fd.as_slice()) <= 1e-6, "{name} {mode:?} t {t}");

                let e = model.eval(t).unwrap();
                let z = |s: f64| model.predict(s).unwrap();
                let fd1 = (z(t + h) - z(t - h)) / (2.0 * h);
                let fd2 = (z(t + h) - 2.0 * z(t) + z(t - h)) / (h * h);
                if mode == Mode::Pinn {
                    assert!(rel(e.z_dot.as_slice(), fd1.as_slice()) <= 1e-6, "{name} t {t}");
                } else {
                    // the hard-constrained velocity drops the t^2 z_theta' term by design
                    let a = model.ansatz.as_ref().unwrap();
                    let zt = model.z_theta(t).unwrap();
                    let approx = DVector::from_fn(zt.len(), |i, _| a.zdot0[i] + 2.0 * a.rho * t * zt[i]);
                    assert!((&e.z_dot - &approx).amax() <= 1e-12, "{name} t {t}");
                }
                if mode == Mode::Pinn {
                    assert!(rel(e.z_ddot.as_slice(), fd2.as_slice()) <= 1e-4, "{name} t {t}");
                }
            }
        }
    }
}

#[test]
fn sine_readout_derivative_is_exact() {
    // one linear layer picking sin(2 pi w t) out of the embedding
    let w = 1.7;
    let map = FourierFeatureMap::from_freqs(vec![w]).unwrap();
    let mlp = Mlp::from_params(&[2, 1], vec![1.0, 0.0, 0.0]).unwrap();
    let model = Model::new(map, mlp, None).unwrap();
    let two_pi_w = 2.0 * std::f64::consts::PI * w;
    for t in [0.0, 0.21, 0.8] {
        let d = t_derivative(&model, t).unwrap()[0];
        assert!((d - two_pi_w * (two_pi_w * t).cos()).abs() <= 1e-12);
    }
}

#[test]
fn rho_is_threaded_into_the_ansatz() {
    let p = common::pipeline("tbar");
    let model = p.model(Mode::Sympinn, &ModelConfig::default(), 0).unwrap();
    assert_eq!(model.ansatz.as_ref().unwrap().rho, 20.0);
    assert_eq!(model.dim(), 6);
    assert!(p.model(Mode::Pinn, &ModelConfig::default(), 0).unwrap().ansatz.is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn hard_constraint_holds_exactly(seed in any::<u64>(), scale in 0.1f64..10.0, lander in any::<bool>()) {
        let p = common::pipeline(if lander { "lander" } else { "tbar" });
        let mut model = p.model(Mode::Sympinn, &ModelConfig::default(), seed).unwrap();
        random_params(&mut model, seed ^ 0x5eed, scale);
        let e = model.eval(0.0).unwrap();
        prop_assert_eq!(&e.z, p.reduced.z0());
        prop_assert_eq!(&e.z_dot, p.reduced.zdot0());
        prop_assert_eq!(&model.predict(0.0).unwrap(), p.reduced.z0());
    }

    #[test]
    fn reconstructed_predictions_are_symmetric(seed in any::<u64>(), scale in 0.1f64..10.0, t in 0.0f64..1.0, lander in any::<bool>()) {
        let p = common::pipeline(if lander { "lander" } else { "tbar" });
        let mut model = p.model(Mode::Sympinn, &ModelConfig::default(), seed).unwrap();
        random_params(&mut model, seed.wrapping_add(1), scale);
        let ck = p.checkpoint(Mode::Sympinn, seed, model, vec![0]);
        let n = ck.predict_nodes(t).unwrap();
        let v = verify_symmetry(&unstack(&n).unwrap(), &p.action.perm, &p.action.rotation, 1e-10).unwrap();
        prop_assert!(v.pass, "residual {:e}", v.residual);
    }
}

#[test]
fn constant_network_has_constant_acceleration() {
    let p = common::pipeline("tbar");
    let mut model = p.model(Mode::Sympinn, &ModelConfig::default(), 0).unwrap();
    let mut theta = vec![0.0; model.mlp.n_params()];
    let last = *model.mlp.layout().last().unwrap();
    for k in 0..last.n_out {
        theta[last.b + k] = 0.1 * k as f64;
    }
    model.mlp.set_params(&theta).unwrap();
    for t in [0.0, 0.4, 0.9] {
        let e = model.eval(t).unwrap();
        let want = DVector::from_fn(6, |k, _| 2.0 * 20.0 * 0.1 * k as f64);
        assert!((e.z_ddot - want).amax() <= 1e-12);
    }
}
