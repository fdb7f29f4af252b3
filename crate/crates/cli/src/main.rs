//! `dsclab`: drive the laboratory from the command line.
//!
//! Exit codes: 0 success, 1 other failure, 2 config error, 3 numerical abort.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dsc_core::harness::report::{write_json, write_paired_csv, write_summary_csv, write_summary_json};
use dsc_core::harness::{paired_differences, parse_config, read_report_csv, run_experiment, stages, summarize};
use dsc_core::harness::{ExperimentConfig, OutputFormat};
use dsc_core::DscError;

#[derive(Parser)]
#[command(name = "dsclab", version, about = "Domain-sensitivity collapse laboratory")]
struct Cli {
    /// Plain-text key = value config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output / work directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run only this seed index.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated λ values.
    #[arg(long, global = true)]
    lambda: Option<String>,
    /// Comma-separated scorer names.
    #[arg(long, global = true)]
    scorers: Option<String>,
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Write each seed's splits and teacher embeddings under OUT/data_s{seed}.
    Generate,
    /// Train one student per (λ, seed) from generated data.
    Train,
    /// Null-space audit of stored students.
    Audit,
    /// Fit the scorer roster on stored students and write bundles.
    Score,
    /// Evaluate stored scorer bundles on both OOD splits.
    Eval,
    /// Numerical checks of the failure bounds for stored students.
    Bounds,
    /// The full grid: every stage for every (λ, seed), plus summaries.
    Run,
    /// Aggregate a report table over seeds.
    Summarize {
        /// Report to read; defaults to OUT/report.csv.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, DscError> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    let flag = |e: String| DscError::Config { line: 0, msg: e };
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(l) = &cli.lambda {
        cfg.set("lambda_grid", l).map_err(|e| flag(format!("--lambda: {e}")))?;
    }
    if let Some(s) = &cli.scorers {
        cfg.set("scorers", s).map_err(|e| flag(format!("--scorers: {e}")))?;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(f) = cli.format {
        cfg.format = match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn each_cell(
    cfg: &ExperimentConfig,
    mut f: impl FnMut(u64, f64) -> Result<Vec<PathBuf>, DscError>,
) -> Result<Vec<PathBuf>, DscError> {
    let mut out = Vec::new();
    for &l in &cfg.lambda_grid {
        for &s in &cfg.seeds {
            out.extend(f(s, l).map_err(|e| e.context(&format!("lambda={l}, seed={s}")))?);
        }
    }
    Ok(out)
}

fn summarize_cmd(cfg: &ExperimentConfig, report: Option<&Path>) -> Result<Vec<PathBuf>, DscError> {
    let src = report.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.join("report.csv"));
    let file = File::open(&src)
        .map_err(|e| DscError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", src.display()))))?;
    let rows = read_report_csv(BufReader::new(file))?;
    let summary = summarize(&rows)?;
    let paired = paired_differences(&rows);
    std::fs::create_dir_all(&cfg.out_dir)?;
    let create = |name: &str| -> Result<(PathBuf, BufWriter<File>), DscError> {
        let p = cfg.out_dir.join(name);
        Ok((p.clone(), BufWriter::new(File::create(p)?)))
    };
    let (a, b) = match cfg.format {
        OutputFormat::Csv => {
            let (a, fa) = create("summary.csv")?;
            write_summary_csv(fa, &summary)?;
            let (b, fb) = create("paired.csv")?;
            write_paired_csv(fb, &paired)?;
            (a, b)
        }
        OutputFormat::Json => {
            let (a, fa) = create("summary.json")?;
            write_summary_json(fa, &summary)?;
            let (b, fb) = create("paired.json")?;
            write_json(fb, &paired)?;
            (a, b)
        }
    };
    Ok(vec![a, b])
}

fn execute(cli: &Cli) -> Result<Vec<PathBuf>, DscError> {
    let cfg = load_config(cli)?;
    let work = cfg.out_dir.clone();
    match &cli.command {
        Command::Generate => cfg
            .seeds
            .iter()
            .map(|&s| stages::generate(&cfg, &work, s).map(|_| stages::data_dir(&work, s)))
            .collect(),
        Command::Train => each_cell(&cfg, |s, l| Ok(vec![stages::train_stage(&cfg, &work, s, l)?])),
        Command::Audit => each_cell(&cfg, |s, l| Ok(vec![stages::audit_stage(&work, s, l)?])),
        Command::Score => each_cell(&cfg, |s, l| stages::score_stage(&cfg, &work, s, l)),
        Command::Eval => each_cell(&cfg, |s, l| Ok(vec![stages::eval_stage(&cfg, &work, s, l)?.0])),
        Command::Bounds => each_cell(&cfg, |s, l| Ok(vec![stages::bounds_stage(&cfg, &work, s, l)?])),
        Command::Run => {
            let out = run_experiment(&cfg)?;
            eprintln!("{} rows from {} cells", out.rows.len(), out.cells.len());
            Ok(vec![work])
        }
        Command::Summarize { report } => summarize_cmd(&cfg, report.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dsclab: {e}");
            ExitCode::from(if e.is_config() {
                2
            } else if e.is_numerical() {
                3
            } else {
                1
            })
        }
    }
}
