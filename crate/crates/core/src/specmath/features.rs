use std::io::{BufRead, Read, Write};

use super::matrix::Matrix;
use crate::container::{BinReader, BinWriter};
use crate::error::{DscError, Result};

pub const FEATURES_MAGIC: &[u8; 4] = b"DSCF";

/// `n×d` representation vectors with one integer class id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl FeatureMatrix {
    pub fn new(data: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if data.rows() == 0 {
            return Err(DscError::invalid("feature matrix needs at least one row"));
        }
        if labels.len() != data.rows() {
            return Err(DscError::DimensionMismatch { expected: data.rows(), got: labels.len() });
        }
        if num_classes == 0 {
            return Err(DscError::invalid("num_classes must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DscError::invalid(format!("label {bad} out of range for {num_classes} classes")));
        }
        if !data.all_finite() {
            return Err(DscError::invalid("feature matrix has non-finite entries"));
        }
        Ok(FeatureMatrix { data, labels, num_classes })
    }

    /// Infers the class count as `max(label) + 1`.
    pub fn with_inferred_classes(data: Matrix, labels: Vec<usize>) -> Result<Self> {
        let c = labels.iter().copied().max().map_or(1, |m| m + 1);
        FeatureMatrix::new(data, labels, c)
    }

    /// All rows get label 0 in a single class.
    pub fn unlabeled(data: Matrix) -> Result<Self> {
        let n = data.rows();
        FeatureMatrix::new(data, vec![0; n], 1)
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn n(&self) -> usize {
        self.data.rows()
    }

    pub fn d(&self) -> usize {
        self.data.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row(i)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn select(&self, idx: &[usize]) -> Result<FeatureMatrix> {
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        FeatureMatrix::new(self.data.select_rows(idx), labels, self.num_classes)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("label");
        for j in 0..self.d() {
            header.push_str(&format!(",f{j}"));
        }
        writeln!(w, "{header}")?;
        for i in 0..self.n() {
            let mut line = self.labels[i].to_string();
            for &x in self.row(i) {
                line.push(',');
                line.push_str(&format!("{x:?}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<FeatureMatrix> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| DscError::Format("empty feature CSV".into()))??;
        let cols: Vec<&str> = header.trim_end().split(',').collect();
        if cols.first() != Some(&"label") {
            return Err(DscError::Format("feature CSV header must start with `label`".into()));
        }
        for (j, c) in cols[1..].iter().enumerate() {
            if *c != format!("f{j}") {
                return Err(DscError::Format(format!("unexpected header column `{c}`")));
            }
        }
        let d = cols.len() - 1;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim_end().split(',').collect();
            if fields.len() != d + 1 {
                return Err(DscError::Format(format!(
                    "line {}: expected {} fields, got {}",
                    lineno + 2,
                    d + 1,
                    fields.len()
                )));
            }
            let label: usize = fields[0]
                .parse()
                .map_err(|_| DscError::Format(format!("line {}: bad label `{}`", lineno + 2, fields[0])))?;
            labels.push(label);
            for f in &fields[1..] {
                data.push(
                    f.parse::<f64>()
                        .map_err(|_| DscError::Format(format!("line {}: bad value `{f}`", lineno + 2)))?,
                );
            }
        }
        let n = labels.len();
        FeatureMatrix::with_inferred_classes(Matrix::from_vec(n, d, data)?, labels)
    }

    /// `DSCF` · u32 n · u32 d · n × (i32 label, d × f64)
    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        let mut out = BinWriter::new(w, FEATURES_MAGIC)?;
        out.usize(self.n())?;
        out.usize(self.d())?;
        for i in 0..self.n() {
            let label = i32::try_from(self.labels[i])
                .map_err(|_| DscError::Format("label does not fit in i32".into()))?;
            out.i32(label)?;
            out.f64s(self.row(i))?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<FeatureMatrix> {
        let mut inp = BinReader::new(r, FEATURES_MAGIC)?;
        let n = inp.usize()?;
        let d = inp.usize()?;
        let mut labels = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let label = inp.i32()?;
            if label < 0 {
                return Err(DscError::Format(format!("negative label {label}")));
            }
            labels.push(label as usize);
            data.extend(inp.f64s(d)?);
        }
        inp.finish()?;
        FeatureMatrix::with_inferred_classes(Matrix::from_vec(n, d, data)?, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_out_of_range_label() {
        let m = Matrix::zeros(2, 2);
        assert!(FeatureMatrix::new(m.clone(), vec![0, 2], 2).is_err());
        assert!(FeatureMatrix::new(m, vec![0, 1], 2).is_ok());
    }

    #[test]
    fn csv_header_layout() {
        let fm = FeatureMatrix::new(Matrix::from_vec(1, 2, vec![0.5, -1.0]).unwrap(), vec![1], 2).unwrap();
        let mut buf = Vec::new();
        fm.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "label,f0,f1\n1,0.5,-1.0\n");
    }

    #[test]
    fn binary_bad_magic() {
        let err = FeatureMatrix::read_binary(&b"NOPE\0\0\0\0"[..]).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    proptest! {
        #[test]
        fn csv_and_binary_round_trip_bit_exact(
            rows in prop::collection::vec((0usize..5, prop::collection::vec(-1e6f64..1e6, 3)), 1..20)
        ) {
            let labels: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let data: Vec<f64> = rows.iter().flat_map(|r| r.1.clone()).collect();
            let fm = FeatureMatrix::with_inferred_classes(
                Matrix::from_vec(rows.len(), 3, data).unwrap(), labels).unwrap();

            let mut bin = Vec::new();
            fm.write_binary(&mut bin).unwrap();
            prop_assert_eq!(bin.len(), 12 + rows.len() * (4 + 24));
            prop_assert_eq!(&FeatureMatrix::read_binary(&bin[..]).unwrap(), &fm);

            let mut csv = Vec::new();
            fm.write_csv(&mut csv).unwrap();
            prop_assert_eq!(&FeatureMatrix::read_csv(&csv[..]).unwrap(), &fm);
        }
    }
}
