use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::residual::PrototypeMode;
use crate::specmath::Matrix;

fn small_arch() -> Architecture {
    Architecture { input_dim: 6, hidden: vec![8], feature_dim: 8, num_classes: 3, domain_hidden: 8, teacher_dim: 5, rectify_features: true }
}

fn random_inputs(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn random_targets(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

#[test]
fn zero_student_outputs_zero() {
    let s = MlpStudent::zeros(small_arch()).unwrap();
    let c = s.forward(&[1.0, -2.0, 0.5, 3.0, 0.0, 1.0]).unwrap();
    assert!(c.features().iter().all(|&v| v == 0.0));
    assert!(c.logits.iter().all(|&v| v == 0.0));
}

#[test]
fn identity_layer_passes_positive_input() {
    let arch = Architecture { input_dim: 4, hidden: vec![], feature_dim: 4, num_classes: 2, domain_hidden: 4, teacher_dim: 3, rectify_features: true };
    let mut s = MlpStudent::zeros(arch).unwrap();
    let layer = s.trunk_layers()[0];
    s.set_layer(layer, Matrix::identity(4).as_slice(), &[0.0; 4]).unwrap();
    let x = [0.5, 1.0, 2.0, 3.5];
    assert_eq!(s.forward(&x).unwrap().features(), &x);
}

/// Straight-line re-implementation with explicit loops over named tensors.
fn reference_forward(s: &MlpStudent, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = s.params();
    let dense = |d: &Dense, v: &[f64], rect: bool| -> Vec<f64> {
        (0..d.out)
            .map(|o| {
                let mut acc = p[d.b_off + o];
                for i in 0..d.inp {
                    acc += p[d.w_off + o * d.inp + i] * v[i];
                }
                if rect && acc < 0.0 {
                    0.0
                } else {
                    acc
                }
            })
            .collect()
    };
    let layers = s.layers();
    let nt = s.trunk_layers().len();
    let mut h = x.to_vec();
    for d in &layers[..nt] {
        h = dense(d, &h, true);
    }
    let logits = dense(&layers[nt], &h, false);
    let a = dense(&layers[nt + 1], &h, true);
    let dom = dense(&layers[nt + 2], &a, false);
    (h, logits, dom)
}

#[test]
fn forward_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = MlpStudent::init(Architecture::standard(32, 6, 16), &mut rng).unwrap();
    for _ in 0..20 {
        let x: Vec<f64> = (0..32).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c = s.forward(&x).unwrap();
        let (z, l, h) = reference_forward(&s, &x);
        for (a, b) in c.features().iter().zip(&z).chain(c.logits.iter().zip(&l)).chain(c.domain_pred.iter().zip(&h)) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
    assert!(s.forward(&[f64::NAN; 32]).is_err());
    assert!(s.forward(&[0.0; 31]).is_err());
}

#[test]
fn ce_loss_examples() {
    let (l, g) = ce_loss(&[0.3; 4], 2);
    assert!((l - 4f64.ln()).abs() < 1e-15);
    assert!((g.iter().sum::<f64>()).abs() < 1e-15);
    let (l, _) = ce_loss(&[0.0, 100.0, 0.0], 1);
    assert!((0.0..1e-40).contains(&l));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let logits: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y = rng.random_range(0..5);
        let (_, g) = ce_loss(&logits, y);
        for i in 0..5 {
            let h = 1e-5;
            let mut lp = logits.clone();
            let mut lm = logits.clone();
            lp[i] += h;
            lm[i] -= h;
            let fd = (ce_loss(&lp, y).0 - ce_loss(&lm, y).0) / (2.0 * h);
            assert!((fd - g[i]).abs() / g[i].abs().max(fd.abs()).max(1e-6) < 1e-6);
        }
    }
}

/// Worst relative error of the analytic gradient against central
/// differences over every parameter.
fn max_fd_error(seed: u64, lambda: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = MlpStudent::init(small_arch(), &mut rng).unwrap();
    let x = random_inputs(4, 6, &mut rng);
    let labels: Vec<usize> = (0..4).map(|i| i % 3).collect();
    let idx: Vec<usize> = (0..4).collect();
    let t = random_targets(4, 5, &mut rng);
    let (_, g) = batch_loss_grad(&s, &x, &labels, &idx, Some(&t), lambda, false).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for j in 0..s.num_params() {
        let mut sp = s.clone();
        sp.params_mut()[j] += h;
        let mut sm = s.clone();
        sm.params_mut()[j] -= h;
        let lp = batch_loss_grad(&sp, &x, &labels, &idx, Some(&t), lambda, false).unwrap().0.total;
        let lm = batch_loss_grad(&sm, &x, &labels, &idx, Some(&t), lambda, false).unwrap().0.total;
        let fd = (lp - lm) / (2.0 * h);
        worst = worst.max((fd - g[j]).abs() / g[j].abs().max(fd.abs()).max(1e-6));
    }
    worst
}

#[test]
fn gradient_matches_finite_differences() {
    for seed in 0..5 {
        let e = max_fd_error(seed, 0.7);
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
}

#[test]
fn lambda_zero_step_equals_ce_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = MlpStudent::init(small_arch(), &mut rng).unwrap();
    let x = random_inputs(16, 6, &mut rng);
    let labels: Vec<usize> = (0..16).map(|i| i % 3).collect();
    let idx: Vec<usize> = (0..16).collect();
    let t = random_targets(16, 5, &mut rng);
    let cfg = TrainConfig { lambda_tgt: 0.0, ..TrainConfig::default() };
    let (mut a, mut b) = (s.clone(), s.clone());
    let (mut oa, mut ob) = (Sgd::new(s.num_params()), Sgd::new(s.num_params()));
    for _ in 0..3 {
        tgt_step(&mut a, &mut oa, &x, &labels, &idx, Some(&t), &cfg).unwrap();
        tgt_step(&mut b, &mut ob, &x, &labels, &idx, None, &cfg).unwrap();
    }
    assert!(a.params().iter().zip(b.params()).all(|(p, q)| p.to_bits() == q.to_bits()));

    let frozen = TrainConfig { lr: 0.0, ..TrainConfig::default() };
    let mut c = s.clone();
    let mut oc = Sgd::new(s.num_params());
    tgt_step(&mut c, &mut oc, &x, &labels, &idx, Some(&t), &frozen).unwrap();
    assert_eq!(c.params(), s.params());
}

#[test]
fn loss_is_affine_in_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = MlpStudent::init(small_arch(), &mut rng).unwrap();
    let x = random_inputs(10, 6, &mut rng);
    let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
    let idx: Vec<usize> = (0..10).collect();
    let t = random_targets(10, 5, &mut rng);
    let base = batch_loss_grad(&s, &x, &labels, &idx, Some(&t), 0.0, false).unwrap().0;
    for lam in [0.5, 1.0, 2.0] {
        let l = batch_loss_grad(&s, &x, &labels, &idx, Some(&t), lam, false).unwrap().0;
        assert!((l.total - (base.total + lam * base.domain)).abs() < 1e-12);
    }
}

#[test]
fn detached_domain_leaves_trunk_gradient_as_ce() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let s = MlpStudent::init(small_arch(), &mut rng).unwrap();
    let x = random_inputs(8, 6, &mut rng);
    let labels: Vec<usize> = (0..8).map(|i| i % 3).collect();
    let idx: Vec<usize> = (0..8).collect();
    let t = random_targets(8, 5, &mut rng);
    let (_, gd) = batch_loss_grad(&s, &x, &labels, &idx, Some(&t), 1.0, true).unwrap();
    let (_, gc) = batch_loss_grad(&s, &x, &labels, &idx, None, 0.0, false).unwrap();
    let trunk_end = s.layers()[s.trunk_layers().len()].w_off;
    assert_eq!(&gd[..trunk_end], &gc[..trunk_end]);
}

fn toy_run(epochs: usize, mode: PrototypeMode) -> (MlpStudent, TrainOutcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s = MlpStudent::init(small_arch(), &mut rng).unwrap();
    let x = random_inputs(60, 6, &mut rng);
    let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
    let teacher = random_inputs(60, 5, &mut rng);
    let data = TrainSet { inputs: &x, labels: &labels, num_classes: 3, teacher: Some(&teacher) };
    let probe = Probe { id_inputs: x.clone(), id_labels: labels.clone(), far_inputs: random_inputs(20, 6, &mut rng) };
    let cfg = TrainConfig { epochs, batch_size: 16, record_geometry_every: 2, prototype_mode: mode, ..TrainConfig::default() };
    let out = train(&s, &data, &cfg, Some(&probe)).unwrap();
    (s, out)
}

#[test]
fn zero_epochs_returns_init() {
    let (s, out) = toy_run(0, PrototypeMode::Precomputed);
    assert_eq!(out.student, s);
    assert!(out.trace.points.is_empty());
}

#[test]
fn training_is_deterministic_and_traced() {
    for mode in [PrototypeMode::Precomputed, PrototypeMode::Ema] {
        let (_, a) = toy_run(5, mode);
        let (_, b) = toy_run(5, mode);
        assert!(a.student.params().iter().zip(b.student.params()).all(|(p, q)| p.to_bits() == q.to_bits()));
        let epochs: Vec<usize> = a.trace.points.iter().map(|p| p.epoch).collect();
        assert_eq!(epochs, vec![2, 4, 5]);
        assert!(a.epoch_losses.last().unwrap().ce < a.epoch_losses[0].ce + 1e-9);
    }
    let mut csv = Vec::new();
    toy_run(2, PrototypeMode::Precomputed).1.trace.write_csv(&mut csv).unwrap();
    assert!(String::from_utf8(csv).unwrap().starts_with("epoch,r_eff,pr,rho_k,rho_within,fpr95_mds_far\n2,"));
}

#[test]
fn lambda_without_teacher_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = MlpStudent::init(small_arch(), &mut rng).unwrap();
    let x = random_inputs(6, 6, &mut rng);
    let labels = vec![0, 1, 2, 0, 1, 2];
    let data = TrainSet { inputs: &x, labels: &labels, num_classes: 3, teacher: None };
    assert!(train(&s, &data, &TrainConfig::default(), None).is_err());
    let missing = vec![0, 1, 0, 1, 0, 1];
    let data = TrainSet { inputs: &x, labels: &missing, num_classes: 3, teacher: None };
    let cfg = TrainConfig { lambda_tgt: 0.0, ..TrainConfig::default() };
    assert!(matches!(train(&s, &data, &cfg, None), Err(crate::DscError::EmptyClass(2))));
}

#[test]
fn binary_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = MlpStudent::init(Architecture::standard(10, 4, 7), &mut rng).unwrap();
    let mut buf = Vec::new();
    s.write_binary(&mut buf).unwrap();
    assert_eq!(MlpStudent::read_binary(&buf[..]).unwrap(), s);
    assert!(MlpStudent::read_binary(&buf[..buf.len() - 8]).is_err());
}
