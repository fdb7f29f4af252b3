//! Cross-module invariants: residual projector, domain loss, generator
//! reproducibility, report aggregation and scorer orientation.

use dsc_core::harness::report::{mean_std, read_report_csv, summarize, write_report_csv, ReportRow};
use dsc_core::harness::run::{cell_geometry, fit_scorers, prepare_seed, train_cell};
use dsc_core::harness::ExperimentConfig;
use dsc_core::residual::{build_class_projector, cosine_domain_loss};
use dsc_core::specmath::{dot, norm, sym_eig, Matrix};
use dsc_core::synthgen::{gen_single_domain, GeneratorSpec};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

/// Orthonormal basis of the column span (modified Gram-Schmidt).
fn orthonormal_cols(u: &Matrix) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    for j in 0..u.cols() {
        let mut v = u.col(j);
        for b in &q {
            let c = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let n = norm(&v);
        if n > 1e-9 {
            q.push(v.iter().map(|x| x / n).collect());
        }
    }
    q
}

fn gram_condition(u: &Matrix) -> f64 {
    let e = sym_eig(&u.transpose().matmul(u).unwrap()).unwrap();
    e.values[0] / e.values[e.values.len() - 1].max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn class_directions_are_suppressed(u in matrix(12, 4), coef in prop::collection::vec(-2.0f64..2.0, 4)) {
        prop_assume!(gram_condition(&u) <= 1e3);
        prop_assume!(norm(&coef) > 1e-3);
        let v = u.mat_vec(&coef).unwrap();
        let p = build_class_projector(&u, 1e-8).unwrap();
        let r = p.apply_complement(&v);
        prop_assert!(norm(&r) <= 1e-4 * norm(&v), "{} vs {}", norm(&r), norm(&v));
    }

    #[test]
    fn complement_leaves_orthogonal_vectors(u in matrix(10, 3), w in prop::collection::vec(-2.0f64..2.0, 10), log_eps in -8.0f64..0.0) {
        let mut v = w.clone();
        for b in orthonormal_cols(&u) {
            let c = dot(&v, &b);
            v.iter_mut().zip(&b).for_each(|(x, y)| *x -= c * y);
        }
        let p = build_class_projector(&u, 10f64.powf(log_eps)).unwrap();
        let r = p.apply_complement(&v);
        let err = norm(&r.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());
        prop_assert!(err <= 1e-10 * (1.0 + norm(&v)), "{err}");
    }

    #[test]
    fn projector_is_symmetric_with_spectrum_in_unit_interval(u in matrix(8, 3), log_eps in -8.0f64..1.0) {
        let p = build_class_projector(&u, 10f64.powf(log_eps)).unwrap().p_cls;
        prop_assert_eq!(p.asymmetry(), 0.0);
        for l in sym_eig(&p).unwrap().values {
            prop_assert!(l > -1e-10 && l < 1.0 + 1e-10, "{l}");
        }
    }

    #[test]
    fn domain_loss_range_and_radial_stationarity(
        h in prop::collection::vec(-5.0f64..5.0, 6),
        t in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        let (l, g) = cosine_domain_loss(&h, &t);
        prop_assert!((0.0..=2.0).contains(&l));
        prop_assert!(dot(&g, &h).abs() <= 1e-8 * norm(&g) * norm(&h) + 1e-300);
    }

    #[test]
    fn summary_mean_inside_range_and_std_nonnegative(xs in prop::collection::vec(-1.0f64..1.0, 1..12)) {
        let m = mean_std(&xs);
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m.mean >= lo - 1e-15 && m.mean <= hi + 1e-15);
        prop_assert!(m.std >= 0.0);
    }

    #[test]
    fn report_rows_round_trip_through_csv(vals in prop::collection::vec(0.0f64..1.0, 10), seed in 0u64..1000, lambda in 0.0f64..3.0) {
        let row = ReportRow {
            backbone: if lambda == 0.0 { "ce" } else { "tgt" }.into(),
            lambda,
            seed,
            split: "indomain".into(),
            scorer: "knn".into(),
            fpr95: vals[0],
            fpr98: vals[1],
            auroc: vals[2],
            aupr_in: vals[3],
            aupr_out: vals[4],
            accuracy: vals[5],
            r_eff: vals[6] * 32.0,
            pr: vals[7] * 32.0,
            rho_k: vals[8],
            rho_within: vals[9],
        };
        let mut buf = Vec::new();
        write_report_csv(&mut buf, std::slice::from_ref(&row)).unwrap();
        prop_assert_eq!(read_report_csv(&buf[..]).unwrap(), vec![row.clone()]);
        prop_assert_eq!(summarize(&[row]).unwrap()[0].n, 1);
    }
}

#[test]
fn generator_is_bit_reproducible() {
    let spec = GeneratorSpec { n: 300, seed: 77, ..GeneratorSpec::default() };
    assert_eq!(gen_single_domain(&spec).unwrap(), gen_single_domain(&spec).unwrap());
}

/// Every scorer ranks the far-domain cluster below ID test data, for CE and TGT students.
#[test]
fn scorers_rank_far_cluster_below_id() {
    let mut cfg = ExperimentConfig::default();
    cfg.train.record_geometry_every = 0;
    let data = prepare_seed(&cfg, 0).unwrap();
    for lambda in [0.0, 1.0] {
        let st = train_cell(&cfg, &data, lambda).unwrap().student;
        let id = st.features(&data.splits.id_test.inputs).unwrap();
        let far = st.features(&data.splits.far_ood.inputs).unwrap();
        for sc in fit_scorers(&cfg, &st, &data).unwrap() {
            let (a, b) =
                if sc.kind().uses_teacher_space() { (&data.teacher_feats[1], &data.teacher_feats[4]) } else { (&id, &far) };
            let (mi, mf) = (sc.score(a).unwrap().mean(), sc.score(b).unwrap().mean());
            assert!(mf < mi, "lambda={lambda} {}: far {mf} vs id {mi}", sc.kind().name());
        }
    }
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        idx.iter().enumerate().for_each(|(k, &i)| r[i] = k as f64);
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Within-class spread is the severity dial: more spread, more within-class variance share.
#[test]
fn within_class_spread_raises_rho_within() {
    let sigmas = [0.1, 0.5, 1.0, 1.5, 2.0];
    let mut rho = Vec::new();
    for &s in &sigmas {
        let mut cfg = ExperimentConfig::default();
        cfg.train.record_geometry_every = 0;
        cfg.generator.within_class_spread = s;
        let data = prepare_seed(&cfg, 0).unwrap();
        let st = train_cell(&cfg, &data, 0.0).unwrap().student;
        rho.push(cell_geometry(&st, &data).unwrap().rho_within);
    }
    assert!(spearman(&sigmas, &rho) > 0.0, "rho_within {rho:?}");
}
