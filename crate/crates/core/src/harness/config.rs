//! Plain-text `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys, repeated keys and malformed values are errors carrying the
//! line number. Lists are comma separated. Every key is optional.
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `seed` | root seed | 2026 |
//! | `seeds` | seed indices | 0,1,2,3,4 |
//! | `lambda_grid` | λ values, 0 is the CE baseline | 0,0.5,1,1.5,2 |
//! | `scorers` | scorer roster | all ten |
//! | `out_dir` | output directory | dsc_out |
//! | `jobs` | worker threads | 1 |
//! | `format` | `csv` or `json` | csv |
//! | `save_artifacts` | write binary bundles per cell | true |
//! | `d_y`, `d_d`, `c_total`, `c_train`, `n` | generator shape | 16, 16, 9, 6, 2000 |
//! | `sigma` | within-class spread | 0.1 |
//! | `anchor_scale`, `domain_jitter` | generator geometry | 0.45, 0.4 |
//! | `ood_shift`, `far_shift` | domain shift lengths | 3, 6 |
//! | `teacher_dim`, `teacher_hidden` | teacher widths | 16, 64 |
//! | `teacher_class_gain`, `teacher_domain_gain` | teacher input gains | 0.1, 1 |
//! | `hidden`, `feature_dim`, `domain_hidden` | student widths | 64,64 / 32 / 32 |
//! | `rectify_features` | rectified feature layer | true |
//! | `lr`, `momentum`, `weight_decay` | optimizer | 0.05, 0.9, 0.005 |
//! | `batch_size`, `epochs` | schedule | 64, 60 |
//! | `prototype_mode`, `ema_momentum`, `projector_eps` | teacher statistics | precomputed, 0.9, 1e-4 |
//! | `record_geometry_every`, `probe_size` | geometry trace | 10, 1024 |
//! | `detach_domain` | stop domain gradients at the trunk | false |
//! | `energy_temperature`, `mds_shrink`, `mds_per_class` | scorer settings | 1, auto, false |
//! | `knn_k`, `knn_normalize`, `vim_dim` | scorer settings | 10, true, C−1 |
//! | `react_percentile`, `react_per_dim`, `scale_percentile`, `nci_gamma` | scorer settings | 90, false, 85, 0.1 |
//! | `bound_pairs` | pairs for the ε̂ estimate | 10000 |

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{DscError, Result};
use crate::scorers::{ScorerConfig, ScorerKind, Shrinkage};
use crate::student::TrainConfig;
use crate::synthgen::{GeneratorSpec, TeacherSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = DscError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(DscError::invalid(format!("unknown format `{other}` (csv or json)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentShape {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    /// `None` means equal to the feature dimension.
    pub domain_hidden: Option<usize>,
    pub rectify_features: bool,
}

impl Default for StudentShape {
    fn default() -> Self {
        StudentShape { hidden: vec![64, 64], feature_dim: 32, domain_hidden: None, rectify_features: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub root_seed: u64,
    pub seeds: Vec<u64>,
    pub lambda_grid: Vec<f64>,
    pub scorers: Vec<ScorerKind>,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub format: OutputFormat,
    pub save_artifacts: bool,
    pub generator: GeneratorSpec,
    pub teacher: TeacherSpec,
    pub student: StudentShape,
    /// `lambda_tgt` and `seed` are set per cell.
    pub train: TrainConfig,
    pub scorer: ScorerConfig,
    pub probe_size: usize,
    pub bound_pairs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            root_seed: 2026,
            seeds: (0..5).collect(),
            lambda_grid: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            scorers: ScorerKind::ALL.to_vec(),
            out_dir: PathBuf::from("dsc_out"),
            jobs: 1,
            format: OutputFormat::Csv,
            save_artifacts: true,
            generator: GeneratorSpec::default(),
            teacher: TeacherSpec::default(),
            student: StudentShape::default(),
            train: TrainConfig::default(),
            scorer: ScorerConfig::default(),
            probe_size: 1024,
            bound_pairs: crate::bounds::DEFAULT_PAIRS,
        }
    }
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    let items: Vec<&str> = v.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err("empty list element".into());
    }
    items.into_iter().map(|s| s.parse::<T>().map_err(|_| format!("cannot parse `{s}`"))).collect()
}

fn parse_one<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse `{v}`"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

fn positive_f64(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = parse_one(v)?;
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(format!("expected a positive number, got `{v}`"))
    }
}

fn nonneg_f64(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = parse_one(v)?;
    if x.is_finite() && x >= 0.0 {
        Ok(x)
    } else {
        Err(format!("expected a nonnegative number, got `{v}`"))
    }
}

impl ExperimentConfig {
    /// Apply one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "seed" => self.root_seed = parse_one(v)?,
            "seeds" => self.seeds = parse_list(v)?,
            "lambda_grid" => {
                let grid: Vec<f64> = parse_list(v)?;
                if grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                    return Err("lambda values must be finite and nonnegative".into());
                }
                self.lambda_grid = grid;
            }
            "scorers" => {
                self.scorers = v
                    .split(',')
                    .map(|s| s.trim().parse::<ScorerKind>().map_err(|e| e.to_string()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "out_dir" => self.out_dir = PathBuf::from(v),
            "jobs" => self.jobs = parse_one(v)?,
            "format" => self.format = v.parse().map_err(|e: DscError| e.to_string())?,
            "save_artifacts" => self.save_artifacts = parse_bool(v)?,
            "d_y" => self.generator.d_y = parse_one(v)?,
            "d_d" => self.generator.d_d = parse_one(v)?,
            "c_total" => self.generator.c_total = parse_one(v)?,
            "c_train" => self.generator.c_train = parse_one(v)?,
            "n" => self.generator.n = parse_one(v)?,
            "sigma" => self.generator.within_class_spread = nonneg_f64(v)?,
            "anchor_scale" => self.generator.anchor_scale = nonneg_f64(v)?,
            "domain_jitter" => self.generator.domain_jitter = nonneg_f64(v)?,
            "ood_shift" => self.generator.ood_domain_shift = positive_f64(v)?,
            "far_shift" => self.generator.far_domain_shift = positive_f64(v)?,
            "teacher_dim" => self.teacher.dim = parse_one(v)?,
            "teacher_hidden" => self.teacher.hidden = parse_one(v)?,
            "teacher_class_gain" => self.teacher.class_gain = parse_one(v)?,
            "teacher_domain_gain" => self.teacher.domain_gain = parse_one(v)?,
            "hidden" => self.student.hidden = parse_list(v)?,
            "feature_dim" => self.student.feature_dim = parse_one(v)?,
            "domain_hidden" => self.student.domain_hidden = Some(parse_one(v)?),
            "rectify_features" => self.student.rectify_features = parse_bool(v)?,
            "lr" => self.train.lr = positive_f64(v)?,
            "momentum" => self.train.momentum = nonneg_f64(v)?,
            "weight_decay" => self.train.weight_decay = nonneg_f64(v)?,
            "batch_size" => self.train.batch_size = parse_one(v)?,
            "epochs" => self.train.epochs = parse_one(v)?,
            "prototype_mode" => self.train.prototype_mode = v.parse().map_err(|e: DscError| e.to_string())?,
            "ema_momentum" => self.train.ema_momentum = nonneg_f64(v)?,
            "projector_eps" => self.train.projector_eps = positive_f64(v)?,
            "record_geometry_every" => self.train.record_geometry_every = parse_one(v)?,
            "detach_domain" => self.train.detach_domain = parse_bool(v)?,
            "probe_size" => self.probe_size = parse_one(v)?,
            "energy_temperature" => self.scorer.energy_temperature = positive_f64(v)?,
            "mds_shrink" => {
                self.scorer.mds_shrink = if v == "auto" { Shrinkage::Auto } else { Shrinkage::Fixed(positive_f64(v)?) }
            }
            "mds_per_class" => self.scorer.mds_per_class = parse_bool(v)?,
            "knn_k" => self.scorer.knn_k = parse_one(v)?,
            "knn_normalize" => self.scorer.knn_normalize = parse_bool(v)?,
            "vim_dim" => self.scorer.vim_dim = Some(parse_one(v)?),
            "react_percentile" => self.scorer.react_percentile = positive_f64(v)?,
            "react_per_dim" => self.scorer.react_per_dim = parse_bool(v)?,
            "scale_percentile" => self.scorer.scale_percentile = positive_f64(v)?,
            "nci_gamma" => self.scorer.nci_gamma = nonneg_f64(v)?,
            "bound_pairs" => self.bound_pairs = parse_one(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Grid-level checks that do not belong to a single key.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(DscError::Config { line: 0, msg: msg.to_string() });
        if self.seeds.is_empty() || self.lambda_grid.is_empty() || self.scorers.is_empty() {
            return bad("seeds, lambda_grid and scorers must be nonempty");
        }
        let mut seen = HashSet::new();
        if !self.seeds.iter().all(|s| seen.insert(*s)) {
            return bad("seeds must be distinct");
        }
        let mut lambdas: Vec<u64> = self.lambda_grid.iter().map(|l| l.to_bits()).collect();
        lambdas.sort_unstable();
        lambdas.dedup();
        if lambdas.len() != self.lambda_grid.len() {
            return bad("lambda_grid values must be distinct");
        }
        if self.jobs == 0 || self.probe_size == 0 || self.bound_pairs == 0 {
            return bad("jobs, probe_size and bound_pairs must be positive");
        }
        self.generator.validate().map_err(|e| DscError::Config { line: 0, msg: e.to_string() })?;
        self.train.validate().map_err(|e| DscError::Config { line: 0, msg: e.to_string() })?;
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| DscError::Config { line, msg: format!("expected `key = value`, got `{content}`") })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(DscError::Config { line, msg: format!("key `{key}` given twice") });
            }
            if value.trim().is_empty() {
                return Err(DscError::Config { line, msg: format!("key `{key}` has no value") });
            }
            cfg.set(key, value).map_err(|msg| DscError::Config { line, msg: format!("{key}: {msg}") })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DscError::Config { line: 0, msg: format!("cannot read {}: {e}", path.display()) })?;
    ExperimentConfig::parse_str(&text)
}
