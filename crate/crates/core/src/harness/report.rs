//! Report rows, seed aggregation and CSV/JSON emission.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::Serialize;

use crate::error::{DscError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub backbone: String,
    pub lambda: f64,
    pub seed: u64,
    pub split: String,
    pub scorer: String,
    pub fpr95: f64,
    pub fpr98: f64,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub accuracy: f64,
    pub r_eff: f64,
    pub pr: f64,
    pub rho_k: f64,
    pub rho_within: f64,
}

pub const REPORT_HEADER: &str =
    "backbone,lambda,seed,split,scorer,fpr95,fpr98,auroc,aupr_in,aupr_out,accuracy,r_eff,pr,rho_k,rho_within";

impl ReportRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.backbone,
            self.lambda,
            self.seed,
            self.split,
            self.scorer,
            self.fpr95,
            self.fpr98,
            self.auroc,
            self.aupr_in,
            self.aupr_out,
            self.accuracy,
            self.r_eff,
            self.pr,
            self.rho_k,
            self.rho_within
        )
    }
}

pub fn write_report_csv<W: Write>(mut w: W, rows: &[ReportRow]) -> Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn read_report_csv<R: BufRead>(r: R) -> Result<Vec<ReportRow>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| DscError::Format("empty report".into()))??;
    if header.trim() != REPORT_HEADER {
        return Err(DscError::Format(format!("unexpected report header `{header}`")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 15 {
            return Err(DscError::Format(format!("report line {}: expected 15 fields, got {}", i + 2, f.len())));
        }
        let num = |k: usize| -> Result<f64> {
            f[k].parse().map_err(|_| DscError::Format(format!("report line {}: bad number `{}`", i + 2, f[k])))
        };
        rows.push(ReportRow {
            backbone: f[0].to_string(),
            lambda: num(1)?,
            seed: f[2].parse().map_err(|_| DscError::Format(format!("report line {}: bad seed", i + 2)))?,
            split: f[3].to_string(),
            scorer: f[4].to_string(),
            fpr95: num(5)?,
            fpr98: num(6)?,
            auroc: num(7)?,
            aupr_in: num(8)?,
            aupr_out: num(9)?,
            accuracy: num(10)?,
            r_eff: num(11)?,
            pr: num(12)?,
            rho_k: num(13)?,
            rho_within: num(14)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometryRow {
    pub backbone: String,
    pub lambda: f64,
    pub seed: u64,
    pub epoch: usize,
    pub r_eff: f64,
    pub pr: f64,
    pub rho_k: f64,
    pub rho_within: f64,
    pub fpr95_mds_far: f64,
}

pub const GEOMETRY_HEADER: &str = "backbone,lambda,seed,epoch,r_eff,pr,rho_k,rho_within,fpr95_mds_far";

pub fn write_geometry_csv<W: Write>(mut w: W, rows: &[GeometryRow]) -> Result<()> {
    writeln!(w, "{GEOMETRY_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.backbone, r.lambda, r.seed, r.epoch, r.r_eff, r.pr, r.rho_k, r.rho_within, r.fpr95_mds_far
        )?;
    }
    Ok(())
}

/// Mean and sample standard deviation (`n − 1`); the std is 0 when `n = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(xs: &[f64]) -> MeanStd {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub backbone: String,
    pub lambda: f64,
    pub scorer: String,
    pub split: String,
    pub n: usize,
    pub fpr95: MeanStd,
    pub fpr98: MeanStd,
    pub auroc: MeanStd,
    pub aupr_in: MeanStd,
    pub aupr_out: MeanStd,
    pub accuracy: MeanStd,
    pub r_eff: MeanStd,
    /// `100·(CE − TGT)` of the FPR@95 means; TGT rows only.
    pub fpr95_reduction_pp: Option<f64>,
    /// `100·(TGT − CE)` of the AUROC means; TGT rows only.
    pub auroc_gain_pp: Option<f64>,
    /// `TGT − CE` of the r_eff means; TGT rows only.
    pub r_eff_increase: Option<f64>,
}

pub const SUMMARY_NOTE: &str =
    "# mean and sample std (n-1) across seeds of one synthetic generator family; n=1 rows carry std 0";
pub const SUMMARY_HEADER: &str = "backbone,lambda,scorer,split,n,fpr95_mean,fpr95_std,fpr98_mean,fpr98_std,auroc_mean,auroc_std,aupr_in_mean,aupr_in_std,aupr_out_mean,aupr_out_std,accuracy_mean,accuracy_std,r_eff_mean,r_eff_std,fpr95_reduction_pp,auroc_gain_pp,r_eff_increase";

type GroupKey = (u8, u64, String, String);

fn key_of(r: &ReportRow) -> Result<GroupKey> {
    let b = match r.backbone.as_str() {
        "ce" => 0,
        "tgt" => 1,
        other => return Err(DscError::invalid(format!("unknown backbone `{other}`"))),
    };
    Ok((b, r.lambda.to_bits(), r.scorer.clone(), r.split.clone()))
}

/// Aggregate rows over seeds, keyed by backbone, λ, scorer and split.
pub fn summarize(rows: &[ReportRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(DscError::invalid("summarize needs at least one row"));
    }
    let mut groups: BTreeMap<GroupKey, Vec<&ReportRow>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for r in rows {
        if (r.backbone == "ce") != (r.lambda == 0.0) {
            return Err(DscError::invalid(format!("backbone `{}` does not match lambda {}", r.backbone, r.lambda)));
        }
        let k = key_of(r)?;
        if !seen.insert((k.clone(), r.seed)) {
            return Err(DscError::invalid(format!(
                "duplicate row for {} lambda={} scorer={} split={} seed={}",
                r.backbone, r.lambda, r.scorer, r.split, r.seed
            )));
        }
        groups.entry(k).or_default().push(r);
    }
    let seeds_of = |g: &[&ReportRow]| g.iter().map(|r| r.seed).collect::<BTreeSet<_>>();
    let reference = seeds_of(groups.values().next().expect("nonempty"));
    if groups.values().any(|g| seeds_of(g) != reference) {
        return Err(DscError::invalid("mixed incompatible grids: groups cover different seed sets"));
    }

    let mut out = Vec::with_capacity(groups.len());
    let mut ce_means: BTreeMap<(String, String), (f64, f64, f64)> = BTreeMap::new();
    for ((b, lbits, scorer, split), g) in &groups {
        let col = |f: fn(&ReportRow) -> f64| mean_std(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
        let row = SummaryRow {
            backbone: if *b == 0 { "ce" } else { "tgt" }.to_string(),
            lambda: f64::from_bits(*lbits),
            scorer: scorer.clone(),
            split: split.clone(),
            n: g.len(),
            fpr95: col(|r| r.fpr95),
            fpr98: col(|r| r.fpr98),
            auroc: col(|r| r.auroc),
            aupr_in: col(|r| r.aupr_in),
            aupr_out: col(|r| r.aupr_out),
            accuracy: col(|r| r.accuracy),
            r_eff: col(|r| r.r_eff),
            fpr95_reduction_pp: None,
            auroc_gain_pp: None,
            r_eff_increase: None,
        };
        if *b == 0 {
            ce_means.insert((scorer.clone(), split.clone()), (row.fpr95.mean, row.auroc.mean, row.r_eff.mean));
        }
        out.push(row);
    }
    for row in out.iter_mut().filter(|r| r.backbone == "tgt") {
        if let Some(&(fpr, auroc, r_eff)) = ce_means.get(&(row.scorer.clone(), row.split.clone())) {
            row.fpr95_reduction_pp = Some(100.0 * (fpr - row.fpr95.mean));
            row.auroc_gain_pp = Some(100.0 * (row.auroc.mean - auroc));
            row.r_eff_increase = Some(row.r_eff.mean - r_eff);
        }
    }
    Ok(out)
}

pub fn write_summary_csv<W: Write>(mut w: W, rows: &[SummaryRow]) -> Result<()> {
    writeln!(w, "{SUMMARY_NOTE}")?;
    writeln!(w, "{SUMMARY_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let ms = [r.fpr95, r.fpr98, r.auroc, r.aupr_in, r.aupr_out, r.accuracy, r.r_eff]
            .iter()
            .map(|m| format!("{},{}", m.mean, m.std))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.backbone,
            r.lambda,
            r.scorer,
            r.split,
            r.n,
            ms,
            opt(r.fpr95_reduction_pp),
            opt(r.auroc_gain_pp),
            opt(r.r_eff_increase)
        )?;
    }
    Ok(())
}

/// Per-seed TGT − CE differences for one λ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedRow {
    pub lambda: f64,
    pub seed: u64,
    pub scorer: String,
    pub split: String,
    /// `r_eff(TGT) − r_eff(CE)`
    pub r_eff_increase: f64,
    /// `FPR@95(CE) − FPR@95(TGT)`
    pub fpr95_reduction: f64,
}

pub const PAIRED_HEADER: &str = "lambda,seed,scorer,split,r_eff_increase,fpr95_reduction";

pub fn paired_differences(rows: &[ReportRow]) -> Vec<PairedRow> {
    let ce: BTreeMap<(u64, &str, &str), &ReportRow> = rows
        .iter()
        .filter(|r| r.backbone == "ce")
        .map(|r| ((r.seed, r.scorer.as_str(), r.split.as_str()), r))
        .collect();
    rows.iter()
        .filter(|r| r.backbone == "tgt")
        .filter_map(|t| {
            ce.get(&(t.seed, t.scorer.as_str(), t.split.as_str())).map(|c| PairedRow {
                lambda: t.lambda,
                seed: t.seed,
                scorer: t.scorer.clone(),
                split: t.split.clone(),
                r_eff_increase: t.r_eff - c.r_eff,
                fpr95_reduction: c.fpr95 - t.fpr95,
            })
        })
        .collect()
}

pub fn write_paired_csv<W: Write>(mut w: W, rows: &[PairedRow]) -> Result<()> {
    writeln!(w, "{PAIRED_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{},{}", r.lambda, r.seed, r.scorer, r.split, r.r_eff_increase, r.fpr95_reduction)?;
    }
    Ok(())
}

pub fn write_json<W: Write, T: Serialize>(w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(w, value).map_err(|e| DscError::Format(e.to_string()))
}

/// Summary as JSON, with the aggregation note carried alongside the rows.
pub fn write_summary_json<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    #[derive(Serialize)]
    struct Noted<'a> {
        note: &'a str,
        rows: &'a [SummaryRow],
    }
    write_json(w, &Noted { note: SUMMARY_NOTE.trim_start_matches("# "), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(backbone: &str, lambda: f64, seed: u64, fpr95: f64) -> ReportRow {
        ReportRow {
            backbone: backbone.into(),
            lambda,
            seed,
            split: "outdomain".into(),
            scorer: "mds".into(),
            fpr95,
            fpr98: fpr95,
            auroc: 1.0 - fpr95,
            aupr_in: 0.5,
            aupr_out: 0.5,
            accuracy: 0.99,
            r_eff: 5.0 + seed as f64,
            pr: 4.0,
            rho_k: 0.8,
            rho_within: 0.1,
        }
    }

    #[test]
    fn single_row_has_zero_std() {
        let s = summarize(&[row("ce", 0.0, 0, 0.3)]).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].n, 1);
        assert_eq!(s[0].fpr95.std, 0.0);
    }

    #[test]
    fn two_seed_mean_and_std() {
        let s = summarize(&[row("ce", 0.0, 0, 0.2), row("ce", 0.0, 1, 0.4)]).unwrap();
        assert!((s[0].fpr95.mean - 0.3).abs() < 1e-15);
        // sqrt(((0.1)² + (0.1)²)/1)
        assert!((s[0].fpr95.std - 0.02f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn improvement_is_ce_minus_tgt() {
        let rows = [row("ce", 0.0, 0, 0.5), row("ce", 0.0, 1, 0.7), row("tgt", 1.0, 0, 0.2), row("tgt", 1.0, 1, 0.4)];
        let s = summarize(&rows).unwrap();
        let t = s.iter().find(|r| r.backbone == "tgt").unwrap();
        assert!((t.fpr95_reduction_pp.unwrap() - 30.0).abs() < 1e-9);
        assert!(s.iter().find(|r| r.backbone == "ce").unwrap().fpr95_reduction_pp.is_none());
        let p = paired_differences(&rows);
        assert_eq!(p.len(), 2);
        assert!((p[0].fpr95_reduction - 0.3).abs() < 1e-12);
    }

    #[test]
    fn incompatible_grids_are_rejected() {
        assert!(summarize(&[]).is_err());
        assert!(summarize(&[row("ce", 0.0, 0, 0.2), row("ce", 0.0, 0, 0.3)]).is_err());
        assert!(summarize(&[row("ce", 0.0, 0, 0.2), row("tgt", 1.0, 1, 0.3)]).is_err());
        assert!(summarize(&[row("tgt", 0.0, 0, 0.2)]).is_err());
    }

    #[test]
    fn report_csv_round_trip() {
        let rows = vec![row("ce", 0.0, 3, 0.125), row("tgt", 1.5, 3, 0.0625)];
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_report_csv(&buf[..]).unwrap(), rows);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(REPORT_HEADER) && !text.contains('\r'));
    }
}
