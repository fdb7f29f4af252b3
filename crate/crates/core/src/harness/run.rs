//! Experiment grid: one job per (λ, seed) cell, single-writer merge.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, OutputFormat};
use super::report::{
    paired_differences, summarize, write_geometry_csv, write_json, write_paired_csv, write_report_csv,
    write_summary_csv, write_summary_json, GeometryRow, PairedRow, ReportRow, SummaryRow,
};
use crate::bounds::{check_prop1, check_theorem1, write_bounds_csv, BoundKind, BoundReport, BoundSettings, Pairing};
use crate::error::{DscError, Result};
use crate::metrics::evaluate;
use crate::residual::TeacherStats;
use crate::rng::{derive_seed, stage, stream};
use crate::scorers::{argmax, fit_knn, FitInputs, FittedScorer, ScorerKind};
use crate::specmath::{
    class_subspace, covariance_split, nullspace_audit, spectral_summary, FeatureMatrix, Matrix, NullspaceAudit,
};
use crate::student::{train, Architecture, MlpStudent, Probe, TrainConfig, TrainOutcome, TrainSet};
use crate::synthgen::{gen_single_domain, teacher_embed, GeneratorSpec, SplitSet, SyntheticTeacher};

/// OOD splits evaluated per cell, with their report names.
pub const EVAL_SPLITS: [&str; 2] = ["indomain", "outdomain"];

pub fn backbone_name(lambda: f64) -> &'static str {
    if lambda == 0.0 {
        "ce"
    } else {
        "tgt"
    }
}

pub fn cell_label(lambda: f64, seed: u64) -> String {
    format!("{}_l{}_s{}", backbone_name(lambda), lambda, seed)
}

/// Data and frozen teacher for one seed; shared by every λ of that seed.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub seed: u64,
    pub splits: SplitSet,
    pub teacher_dim: usize,
    /// Teacher embeddings, in `SplitSet::NAMES` order.
    pub teacher_feats: Vec<Matrix>,
}

impl SeedData {
    pub fn ood(&self, name: &str) -> Result<(&Matrix, &Matrix)> {
        match name {
            "indomain" => Ok((&self.splits.indomain_ood.inputs, &self.teacher_feats[2])),
            "outdomain" => Ok((&self.splits.outdomain_ood.inputs, &self.teacher_feats[3])),
            other => Err(DscError::invalid(format!("unknown evaluation split `{other}`"))),
        }
    }
}

pub fn generator_for_seed(cfg: &ExperimentConfig, seed: u64) -> GeneratorSpec {
    GeneratorSpec { seed: derive_seed(cfg.root_seed, &[seed, stage::DATA]), ..cfg.generator.clone() }
}

pub fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let gen = generator_for_seed(cfg, seed);
    let splits = gen_single_domain(&gen)?;
    let teacher = SyntheticTeacher::new(&gen, &cfg.teacher, &mut stream(cfg.root_seed, &[seed, stage::TEACHER]))?;
    let teacher_feats = splits.splits().iter().map(|s| teacher_embed(&teacher, &s.inputs)).collect::<Result<_>>()?;
    Ok(SeedData { seed, splits, teacher_dim: teacher.dim(), teacher_feats })
}

pub fn architecture(cfg: &ExperimentConfig, data: &SeedData) -> Architecture {
    let s = &cfg.student;
    Architecture {
        input_dim: data.splits.train.inputs.cols(),
        hidden: s.hidden.clone(),
        feature_dim: s.feature_dim,
        num_classes: data.splits.train.num_classes,
        domain_hidden: s.domain_hidden.unwrap_or(s.feature_dim),
        teacher_dim: data.teacher_dim,
        rectify_features: s.rectify_features,
    }
}

/// Training settings of one cell. The init and shuffle streams ignore λ, so
/// CE and TGT students of a seed start from the same weights and see the same batches.
pub fn cell_train_config(cfg: &ExperimentConfig, seed: u64, lambda: f64) -> TrainConfig {
    TrainConfig { lambda_tgt: lambda, seed: derive_seed(cfg.root_seed, &[seed, stage::SHUFFLE]), ..cfg.train.clone() }
}

fn head_rows(m: &Matrix, n: usize) -> Matrix {
    m.select_rows(&(0..n.min(m.rows())).collect::<Vec<_>>())
}

pub fn train_cell(cfg: &ExperimentConfig, data: &SeedData, lambda: f64) -> Result<TrainOutcome> {
    let init = MlpStudent::init(architecture(cfg, data), &mut stream(cfg.root_seed, &[data.seed, stage::INIT]))?;
    let tr = &data.splits.train;
    let set = TrainSet { inputs: &tr.inputs, labels: &tr.labels, num_classes: tr.num_classes, teacher: Some(&data.teacher_feats[0]) };
    let id = &data.splits.id_test;
    let np = cfg.probe_size.min(id.len());
    let probe = Probe {
        id_inputs: head_rows(&id.inputs, np),
        id_labels: id.labels[..np].to_vec(),
        far_inputs: head_rows(&data.splits.far_ood.inputs, cfg.probe_size),
    };
    train(&init, &set, &cell_train_config(cfg, data.seed, lambda), Some(&probe))
}

pub fn train_features(student: &MlpStudent, data: &SeedData) -> Result<FeatureMatrix> {
    let tr = &data.splits.train;
    student.labeled_features(&tr.inputs, &tr.labels, tr.num_classes)
}

pub fn fit_scorers(cfg: &ExperimentConfig, student: &MlpStudent, data: &SeedData) -> Result<Vec<FittedScorer>> {
    let train = train_features(student, data)?;
    let tr = &data.splits.train;
    let teacher_train = FeatureMatrix::new(data.teacher_feats[0].clone(), tr.labels.clone(), tr.num_classes)?;
    let head = student.head();
    let inputs = FitInputs { train: &train, head: &head, teacher_train: Some(&teacher_train) };
    cfg.scorers.iter().map(|&k| FittedScorer::fit(k, &inputs, &cfg.scorer)).collect()
}

fn score_split(scorer: &FittedScorer, student_feats: &Matrix, teacher_feats: &Matrix) -> Result<Vec<f64>> {
    let feats = if scorer.kind().uses_teacher_space() { teacher_feats } else { student_feats };
    Ok(scorer.score(feats)?.into_vec())
}

/// Test accuracy and ID-test geometry shared by every row of a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellGeometry {
    pub accuracy: f64,
    pub r_eff: f64,
    pub pr: f64,
    pub rho_k: f64,
    pub rho_within: f64,
}

pub fn cell_geometry(student: &MlpStudent, data: &SeedData) -> Result<CellGeometry> {
    let id = &data.splits.id_test;
    let feats = student.labeled_features(&id.inputs, &id.labels, id.num_classes)?;
    let logits = student.head().logits_matrix(feats.data())?;
    let correct = (0..logits.rows()).filter(|&i| argmax(logits.row(i)) == id.labels[i]).count();
    let k = id.num_classes.saturating_sub(1).max(1);
    let summary = spectral_summary(&covariance_split(&feats)?, &[k])?;
    Ok(CellGeometry {
        accuracy: correct as f64 / id.len() as f64,
        r_eff: summary.r_eff,
        pr: summary.pr,
        rho_k: summary.rho(k).unwrap_or(1.0),
        rho_within: summary.rho_within,
    })
}

pub fn evaluate_cell(
    student: &MlpStudent,
    scorers: &[FittedScorer],
    data: &SeedData,
    lambda: f64,
) -> Result<Vec<ReportRow>> {
    let geo = cell_geometry(student, data)?;
    let id_feats = student.features(&data.splits.id_test.inputs)?;
    let mut rows = Vec::with_capacity(2 * scorers.len());
    for split in EVAL_SPLITS {
        let (ood_inputs, ood_teacher) = data.ood(split)?;
        let ood_feats = student.features(ood_inputs)?;
        for sc in scorers {
            let si = score_split(sc, &id_feats, &data.teacher_feats[1])?;
            let so = score_split(sc, &ood_feats, ood_teacher)?;
            let e = evaluate(&si, &so)?;
            rows.push(ReportRow {
                backbone: backbone_name(lambda).to_string(),
                lambda,
                seed: data.seed,
                split: split.to_string(),
                scorer: sc.kind().name().to_string(),
                fpr95: e.fpr_at_95,
                fpr98: e.fpr_at_98,
                auroc: e.auroc,
                aupr_in: e.aupr_in,
                aupr_out: e.aupr_out,
                accuracy: geo.accuracy,
                r_eff: geo.r_eff,
                pr: geo.pr,
                rho_k: geo.rho_k,
                rho_within: geo.rho_within,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub backbone: String,
    pub lambda: f64,
    pub seed: u64,
    pub split: String,
    pub audit: NullspaceAudit,
}

pub const AUDIT_HEADER: &str = "backbone,lambda,seed,split,id_mean,ood_mean,separated";

pub fn write_audit_csv<W: Write>(mut w: W, rows: &[AuditRow]) -> Result<()> {
    writeln!(w, "{AUDIT_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.backbone, r.lambda, r.seed, r.split, r.audit.id_mean, r.audit.ood_mean, r.audit.separated
        )?;
    }
    Ok(())
}

/// Null-space audit of ID test vs each OOD split, in the class subspace of the training features.
pub fn audit_cell(student: &MlpStudent, data: &SeedData, lambda: f64) -> Result<Vec<AuditRow>> {
    let train = train_features(student, data)?;
    let p = class_subspace(&covariance_split(&train)?, train.num_classes().saturating_sub(1).max(1))?;
    let id = student.features(&data.splits.id_test.inputs)?;
    EVAL_SPLITS
        .iter()
        .map(|&split| {
            let ood = student.features(data.ood(split)?.0)?;
            Ok(AuditRow {
                backbone: backbone_name(lambda).to_string(),
                lambda,
                seed: data.seed,
                split: split.to_string(),
                audit: nullspace_audit(&id, &ood, &p)?,
            })
        })
        .collect()
}

/// Distance bound plus both logit bounds for each OOD split.
pub fn bound_cell(cfg: &ExperimentConfig, student: &MlpStudent, data: &SeedData, lambda: f64) -> Result<Vec<BoundReport>> {
    let train = train_features(student, data)?;
    let p = class_subspace(&covariance_split(&train)?, train.num_classes().saturating_sub(1).max(1))?;
    let knn = fit_knn(train.data(), cfg.scorer.knn_k, false)?;
    let head = student.head();
    let id = student.features(&data.splits.id_test.inputs)?;
    let settings = BoundSettings {
        n_pairs: cfg.bound_pairs,
        pairing: Pairing::Unpaired,
        seed: derive_seed(cfg.root_seed, &[data.seed, stage::BOUNDS]),
    };
    let mut out = Vec::new();
    for split in EVAL_SPLITS {
        let ood = student.features(data.ood(split)?.0)?;
        let inst = format!("{}-l{}-s{}-{}", backbone_name(lambda), lambda, data.seed, split);
        out.push(check_theorem1(&inst, &id, &ood, &knn, &p, &settings)?);
        for kind in [BoundKind::Energy, BoundKind::Msp] {
            out.push(check_prop1(&inst, &id, &ood, &head, &p, kind, &settings)?);
        }
    }
    Ok(out)
}

/// Everything one (λ, seed) cell produces.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub lambda: f64,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub geometry: Vec<GeometryRow>,
    pub bounds: Vec<BoundReport>,
    pub audit: Vec<AuditRow>,
    pub student: MlpStudent,
    pub teacher_stats: Option<TeacherStats>,
    pub scorers: Vec<FittedScorer>,
}

pub fn run_cell(cfg: &ExperimentConfig, data: &SeedData, lambda: f64) -> Result<CellResult> {
    let outcome = train_cell(cfg, data, lambda)?;
    let student = outcome.student;
    let scorers = fit_scorers(cfg, &student, data)?;
    let rows = evaluate_cell(&student, &scorers, data, lambda)?;
    let geometry = outcome
        .trace
        .points
        .iter()
        .map(|p| GeometryRow {
            backbone: backbone_name(lambda).to_string(),
            lambda,
            seed: data.seed,
            epoch: p.epoch,
            r_eff: p.r_eff,
            pr: p.pr,
            rho_k: p.rho_k,
            rho_within: p.rho_within,
            fpr95_mds_far: p.fpr95_mds_far,
        })
        .collect();
    Ok(CellResult {
        lambda,
        seed: data.seed,
        rows,
        geometry,
        bounds: bound_cell(cfg, &student, data, lambda)?,
        audit: audit_cell(&student, data, lambda)?,
        student,
        teacher_stats: outcome.teacher_stats,
        scorers,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub cells: Vec<CellResult>,
    pub rows: Vec<ReportRow>,
    pub geometry: Vec<GeometryRow>,
    pub bounds: Vec<BoundReport>,
    pub audit: Vec<AuditRow>,
    pub summary: Vec<SummaryRow>,
    pub paired: Vec<PairedRow>,
}

/// Run every cell without touching the disk. Cells are merged in (λ, seed)
/// grid order regardless of which worker finished first.
pub fn compute_grid(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| DscError::invalid(format!("worker pool: {e}")))?;
    let cells = pool.install(|| -> Result<Vec<CellResult>> {
        let seeds: Vec<SeedData> = cfg
            .seeds
            .par_iter()
            .map(|&s| prepare_seed(cfg, s).map_err(|e| e.context(&format!("seed={s}"))))
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<_>>()?;
        let jobs: Vec<(f64, &SeedData)> =
            cfg.lambda_grid.iter().flat_map(|&l| seeds.iter().map(move |d| (l, d))).collect();
        jobs.par_iter()
            .map(|&(l, d)| run_cell(cfg, d, l).map_err(|e| e.context(&format!("lambda={l}, seed={}", d.seed))))
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    })?;
    let rows: Vec<ReportRow> = cells.iter().flat_map(|c| c.rows.iter().cloned()).collect();
    let summary = summarize(&rows)?;
    let paired = paired_differences(&rows);
    Ok(RunOutput {
        geometry: cells.iter().flat_map(|c| c.geometry.iter().cloned()).collect(),
        bounds: cells.iter().flat_map(|c| c.bounds.iter().cloned()).collect(),
        audit: cells.iter().flat_map(|c| c.audit.iter().cloned()).collect(),
        rows,
        summary,
        paired,
        cells,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        DscError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?))
}

#[derive(serde::Serialize)]
struct AuditJson<'a> {
    backbone: &'a str,
    lambda: f64,
    seed: u64,
    split: &'a str,
    id_mean: f64,
    ood_mean: f64,
    separated: bool,
}

/// Write the tables (and per-cell artifacts when enabled) under `cfg.out_dir`.
pub fn write_outputs(cfg: &ExperimentConfig, out: &RunOutput) -> Result<Vec<PathBuf>> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut file = |name: &str| -> Result<BufWriter<File>> {
        let p = dir.join(name);
        let f = create(&p)?;
        written.push(p);
        Ok(f)
    };
    match cfg.format {
        OutputFormat::Csv => {
            write_report_csv(file("report.csv")?, &out.rows)?;
            write_geometry_csv(file("geometry.csv")?, &out.geometry)?;
            write_bounds_csv(file("bounds.csv")?, &out.bounds)?;
            write_summary_csv(file("summary.csv")?, &out.summary)?;
            write_paired_csv(file("paired.csv")?, &out.paired)?;
            write_audit_csv(file("audit.csv")?, &out.audit)?;
        }
        OutputFormat::Json => {
            write_json(file("report.json")?, &out.rows)?;
            write_json(file("geometry.json")?, &out.geometry)?;
            write_json(file("bounds.json")?, &out.bounds)?;
            write_summary_json(file("summary.json")?, &out.summary)?;
            write_json(file("paired.json")?, &out.paired)?;
            let audit: Vec<AuditJson> = out
                .audit
                .iter()
                .map(|r| AuditJson {
                    backbone: &r.backbone,
                    lambda: r.lambda,
                    seed: r.seed,
                    split: &r.split,
                    id_mean: r.audit.id_mean,
                    ood_mean: r.audit.ood_mean,
                    separated: r.audit.separated,
                })
                .collect();
            write_json(file("audit.json")?, &audit)?;
        }
    }
    if cfg.save_artifacts {
        for c in &out.cells {
            write_cell_artifacts(&dir.join("artifacts").join(cell_label(c.lambda, c.seed)), c)?;
        }
    }
    Ok(written)
}

pub fn write_cell_artifacts(dir: &Path, c: &CellResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    c.student.write_binary(create(&dir.join("student.dscm"))?)?;
    if let Some(ts) = &c.teacher_stats {
        ts.write_binary(create(&dir.join("teacher_stats.dsct"))?)?;
    }
    for sc in &c.scorers {
        sc.write_bundle(create(&dir.join(format!("scorer_{}.dscs", sc.kind().name())))?)?;
    }
    Ok(())
}

/// Full grid: compute, then write tables and artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let out = compute_grid(cfg)?;
    write_outputs(cfg, &out)?;
    Ok(out)
}

/// Scorers a config uses, for callers that want names.
pub fn scorer_names(kinds: &[ScorerKind]) -> Vec<&'static str> {
    kinds.iter().map(|k| k.name()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::parse_str(
            "seeds = 0\nlambda_grid = 0\nscorers = msp\nn = 240\nepochs = 2\nprobe_size = 64\nbound_pairs = 200\nsave_artifacts = false\n",
        )
        .unwrap();
        cfg.student.hidden = vec![16];
        cfg.student.feature_dim = 8;
        cfg
    }

    #[test]
    fn one_seed_one_scorer_gives_two_rows() {
        let out = compute_grid(&tiny()).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows[0].split, "indomain");
        assert_eq!(out.rows[1].split, "outdomain");
        assert!(out.rows.iter().all(|r| r.backbone == "ce" && r.scorer == "msp"));
        assert_eq!(out.bounds.len(), 6);
        assert_eq!(out.audit.len(), 2);
    }

    #[test]
    fn grid_row_count_and_merge_order() {
        let mut cfg = tiny();
        cfg.seeds = vec![3, 1];
        cfg.lambda_grid = vec![0.0, 1.0];
        cfg.scorers = vec![ScorerKind::Msp, ScorerKind::Mds, ScorerKind::TeacherMds];
        cfg.jobs = 2;
        let out = compute_grid(&cfg).unwrap();
        assert_eq!(out.rows.len(), 2 * 2 * 3 * 2);
        let order: Vec<(f64, u64)> = out.cells.iter().map(|c| (c.lambda, c.seed)).collect();
        assert_eq!(order, vec![(0.0, 3), (0.0, 1), (1.0, 3), (1.0, 1)]);
        // teacher-space rows do not depend on the student
        let t: Vec<f64> =
            out.rows.iter().filter(|r| r.scorer == "teacher_mds" && r.seed == 3).map(|r| r.auroc).collect();
        assert_eq!(t[0], t[2]);
        assert_eq!(out.paired.len(), 2 * 3 * 2);
    }

    #[test]
    fn cell_errors_carry_grid_context() {
        let mut cfg = tiny();
        cfg.train.lr = 1e9;
        cfg.train.epochs = 20;
        let err = compute_grid(&cfg).unwrap_err();
        assert!(err.to_string().contains("lambda=0, seed=0"), "{err}");
    }
}
