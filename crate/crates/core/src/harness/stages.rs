//! Stage-by-stage pipeline over files on disk, used by the CLI subcommands.
//!
//! Layout under a work directory:
//!
//! ```text
//! data_s{seed}/{split}.dscf            student inputs with labels
//! data_s{seed}/teacher_{split}.dscf    teacher embeddings of the same rows
//! artifacts/{backbone}_l{λ}_s{seed}/   student.dscm, teacher_stats.dsct, scorer_*.dscs, tables
//! ```

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::report::{write_geometry_csv, write_report_csv, GeometryRow, ReportRow};
use super::run::{
    audit_cell, bound_cell, cell_label, evaluate_cell, fit_scorers, prepare_seed, train_cell, write_audit_csv,
    backbone_name, SeedData,
};
use crate::bounds::write_bounds_csv;
use crate::error::{DscError, Result};
use crate::scorers::FittedScorer;
use crate::specmath::FeatureMatrix;
use crate::student::MlpStudent;
use crate::synthgen::{export_splits, Split, SplitSet};

pub fn data_dir(work: &Path, seed: u64) -> PathBuf {
    work.join(format!("data_s{seed}"))
}

pub fn cell_dir(work: &Path, lambda: f64, seed: u64) -> PathBuf {
    work.join("artifacts").join(cell_label(lambda, seed))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| DscError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| DscError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Generate one seed's splits and teacher embeddings and write them out.
pub fn generate(cfg: &ExperimentConfig, work: &Path, seed: u64) -> Result<SeedData> {
    let data = prepare_seed(cfg, seed)?;
    let dir = data_dir(work, seed);
    export_splits(&dir, &super::run::generator_for_seed(cfg, seed), &data.splits)?;
    for (name, (m, split)) in SplitSet::NAMES.iter().zip(data.teacher_feats.iter().zip(data.splits.splits())) {
        FeatureMatrix::new(m.clone(), split.labels.clone(), split.num_classes)?
            .write_binary(create(&dir.join(format!("teacher_{name}.dscf")))?)?;
    }
    Ok(data)
}

pub fn load_seed_data(work: &Path, seed: u64) -> Result<SeedData> {
    let dir = data_dir(work, seed);
    let mut splits = Vec::with_capacity(5);
    let mut teacher_feats = Vec::with_capacity(5);
    for (k, name) in SplitSet::NAMES.iter().enumerate() {
        let fm = FeatureMatrix::read_binary(open(&dir.join(format!("{name}.dscf")))?)?;
        let n = fm.n() as u64;
        splits.push(Split {
            labels: fm.labels().to_vec(),
            num_classes: fm.num_classes(),
            ids: (k as u64 * n..(k as u64 + 1) * n).collect(),
            inputs: fm.data().clone(),
        });
        let t = FeatureMatrix::read_binary(open(&dir.join(format!("teacher_{name}.dscf")))?)?;
        if t.n() != fm.n() {
            return Err(DscError::Format(format!("teacher_{name}.dscf has {} rows, expected {}", t.n(), fm.n())));
        }
        teacher_feats.push(t.data().clone());
    }
    let teacher_dim = teacher_feats[0].cols();
    let mut it = splits.into_iter();
    let mut next = || it.next().expect("five splits");
    let splits = SplitSet { train: next(), id_test: next(), indomain_ood: next(), outdomain_ood: next(), far_ood: next() };
    Ok(SeedData { seed, splits, teacher_dim, teacher_feats })
}

/// Train one cell from data on disk; writes the student, teacher statistics and geometry trace.
pub fn train_stage(cfg: &ExperimentConfig, work: &Path, seed: u64, lambda: f64) -> Result<PathBuf> {
    let data = load_seed_data(work, seed)?;
    let outcome = train_cell(cfg, &data, lambda)?;
    let dir = cell_dir(work, lambda, seed);
    fs::create_dir_all(&dir)?;
    outcome.student.write_binary(create(&dir.join("student.dscm"))?)?;
    if let Some(ts) = &outcome.teacher_stats {
        ts.write_binary(create(&dir.join("teacher_stats.dsct"))?)?;
    }
    let rows: Vec<GeometryRow> = outcome
        .trace
        .points
        .iter()
        .map(|p| GeometryRow {
            backbone: backbone_name(lambda).to_string(),
            lambda,
            seed,
            epoch: p.epoch,
            r_eff: p.r_eff,
            pr: p.pr,
            rho_k: p.rho_k,
            rho_within: p.rho_within,
            fpr95_mds_far: p.fpr95_mds_far,
        })
        .collect();
    write_geometry_csv(create(&dir.join("geometry.csv"))?, &rows)?;
    Ok(dir)
}

pub fn load_student(work: &Path, seed: u64, lambda: f64) -> Result<MlpStudent> {
    MlpStudent::read_binary(open(&cell_dir(work, lambda, seed).join("student.dscm"))?)
}

pub fn audit_stage(work: &Path, seed: u64, lambda: f64) -> Result<PathBuf> {
    let data = load_seed_data(work, seed)?;
    let student = load_student(work, seed, lambda)?;
    let path = cell_dir(work, lambda, seed).join("audit.csv");
    write_audit_csv(create(&path)?, &audit_cell(&student, &data, lambda)?)?;
    Ok(path)
}

/// Fit the configured scorers on the stored student and write one bundle each.
pub fn score_stage(cfg: &ExperimentConfig, work: &Path, seed: u64, lambda: f64) -> Result<Vec<PathBuf>> {
    let data = load_seed_data(work, seed)?;
    let student = load_student(work, seed, lambda)?;
    let dir = cell_dir(work, lambda, seed);
    fit_scorers(cfg, &student, &data)?
        .iter()
        .map(|sc| {
            let p = dir.join(format!("scorer_{}.dscs", sc.kind().name()));
            sc.write_bundle(create(&p)?)?;
            Ok(p)
        })
        .collect()
}

/// Evaluate stored scorer bundles on both OOD splits.
pub fn eval_stage(cfg: &ExperimentConfig, work: &Path, seed: u64, lambda: f64) -> Result<(PathBuf, Vec<ReportRow>)> {
    let data = load_seed_data(work, seed)?;
    let student = load_student(work, seed, lambda)?;
    let dir = cell_dir(work, lambda, seed);
    let scorers = cfg
        .scorers
        .iter()
        .map(|k| FittedScorer::read_bundle(open(&dir.join(format!("scorer_{}.dscs", k.name())))?))
        .collect::<Result<Vec<_>>>()?;
    let rows = evaluate_cell(&student, &scorers, &data, lambda)?;
    let path = dir.join("report.csv");
    write_report_csv(create(&path)?, &rows)?;
    Ok((path, rows))
}

pub fn bounds_stage(cfg: &ExperimentConfig, work: &Path, seed: u64, lambda: f64) -> Result<PathBuf> {
    let data = load_seed_data(work, seed)?;
    let student = load_student(work, seed, lambda)?;
    let path = cell_dir(work, lambda, seed).join("bounds.csv");
    write_bounds_csv(create(&path)?, &bound_cell(cfg, &student, &data, lambda)?)?;
    Ok(path)
}
