use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header prefix that marks a target column in dataset CSV files.
pub const TARGET_PREFIX: &str = "y_";
/// Header prefix of provenance columns ignored as features.
pub const META_PREFIX: &str = "meta_";

/// Paired observations; row `i` of `inputs` maps to row `i` of `targets`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
    input_names: Vec<String>,
    target_names: Vec<String>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        let input_names = (0..inputs.ncols()).map(|i| format!("x{i}")).collect();
        let target_names = (0..targets.ncols()).map(|i| format!("{i}")).collect();
        Self::with_names(inputs, targets, input_names, target_names)
    }

    /// Target names are given without the CSV prefix.
    pub fn with_names(
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
        input_names: Vec<String>,
        target_names: Vec<String>,
    ) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::DimensionMismatch { expected: inputs.nrows(), got: targets.nrows() });
        }
        if input_names.len() != inputs.ncols() {
            return Err(Error::DimensionMismatch { expected: inputs.ncols(), got: input_names.len() });
        }
        if target_names.len() != targets.ncols() {
            return Err(Error::DimensionMismatch { expected: targets.ncols(), got: target_names.len() });
        }
        if inputs.nrows() == 0 || inputs.ncols() == 0 || targets.ncols() == 0 {
            return Err(Error::EmptyInput);
        }
        if !inputs.iter().chain(targets.iter()).all(|v| v.is_finite()) {
            return Err(Error::Numerical("dataset contains non-finite values".into()));
        }
        Ok(Self { inputs, targets, input_names, target_names })
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn target_names(&self) -> &[String] {
        &self.target_names
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.ncols()
    }

    /// Rows `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)]);
        Self {
            inputs: pick(&self.inputs),
            targets: pick(&self.targets),
            input_names: self.input_names.clone(),
            target_names: self.target_names.clone(),
        }
    }

    /// Stacks the rows of `other` below these. Column names must match.
    pub fn append(&mut self, other: &Dataset) -> Result<()> {
        if other.input_names != self.input_names || other.target_names != self.target_names {
            return Err(Error::Config("dataset columns differ".into()));
        }
        let n = self.len();
        let stack = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            DMatrix::from_fn(n + b.nrows(), a.ncols(), |i, j| if i < n { a[(i, j)] } else { b[(i - n, j)] })
        };
        self.inputs = stack(&self.inputs, &other.inputs);
        self.targets = stack(&self.targets, &other.targets);
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = self
            .input_names
            .iter()
            .cloned()
            .chain(self.target_names.iter().map(|n| format!("{TARGET_PREFIX}{n}")))
            .collect();
        w.write_record(&header)?;
        for i in 0..self.len() {
            let row: Vec<String> = self
                .inputs
                .row(i)
                .iter()
                .chain(self.targets.row(i).iter())
                .map(|v| format!("{v:e}"))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV whose header marks target columns with `y_`; columns
    /// prefixed `meta_` are skipped.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        Ok(Self::read_csv_with_meta(reader)?.0)
    }

    /// Like [`Dataset::read_csv`], also returning the `meta_` columns
    /// (names without prefix, then row-major values).
    pub fn read_csv_with_meta<R: Read>(reader: R) -> Result<(Self, Vec<String>, Vec<Vec<f64>>)> {
        #[derive(Clone, Copy, PartialEq)]
        enum Kind {
            Input,
            Target,
            Meta,
        }
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let kinds: Vec<Kind> = header
            .iter()
            .map(|h| {
                if h.starts_with(TARGET_PREFIX) {
                    Kind::Target
                } else if h.starts_with(META_PREFIX) {
                    Kind::Meta
                } else {
                    Kind::Input
                }
            })
            .collect();
        let names = |kind: Kind, strip: usize| -> Vec<String> {
            header.iter().zip(&kinds).filter(|(_, k)| **k == kind).map(|(h, _)| h[strip..].to_string()).collect()
        };
        let input_names = names(Kind::Input, 0);
        let target_names = names(Kind::Target, TARGET_PREFIX.len());
        let meta_names = names(Kind::Meta, META_PREFIX.len());
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut meta = Vec::new();
        let mut rows = 0;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != kinds.len() {
                return Err(Error::DimensionMismatch { expected: kinds.len(), got: rec.len() });
            }
            let mut m = Vec::with_capacity(meta_names.len());
            for (field, &k) in rec.iter().zip(&kinds) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number {field:?} in dataset row {}", rows + 1)))?;
                match k {
                    Kind::Input => xs.push(v),
                    Kind::Target => ys.push(v),
                    Kind::Meta => m.push(v),
                }
            }
            meta.push(m);
            rows += 1;
        }
        let inputs = DMatrix::from_row_slice(rows, input_names.len(), &xs);
        let targets = DMatrix::from_row_slice(rows, target_names.len(), &ys);
        Ok((Self::with_names(inputs, targets, input_names, target_names)?, meta_names, meta))
    }
}

/// Per-column affine normalization `x̃ = (x − mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Column means and (population) standard deviations; constant columns
    /// get scale 1.
    pub fn from_columns(m: &DMatrix<f64>) -> Self {
        let n = m.nrows() as f64;
        let mut mean = Vec::with_capacity(m.ncols());
        let mut scale = Vec::with_capacity(m.ncols());
        for col in m.column_iter() {
            let mu = col.sum() / n;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            mean.push(mu);
            scale.push(if var > 1e-24 { var.sqrt() } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] - self.mean[j]) / self.scale[j])
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.scale[j]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.5, -1.0, 1e-9]);
        let y = DMatrix::from_row_slice(3, 1, &[0.1, 0.2, 0.3]);
        let d = Dataset::with_names(x, y, vec!["a".into(), "b".into()], vec!["t".into()]).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("a,b,y_t\n"));
        assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn rejects_nan_and_mismatch() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        let y = DMatrix::from_row_slice(2, 1, &[0.0, 0.0]);
        assert!(Dataset::new(x, y.clone()).is_err());
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(matches!(Dataset::new(x, y), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn normalization_is_recomputable() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0]);
        let n = Normalization::from_columns(&x);
        assert_eq!(n.mean, vec![2.5, 5.0]);
        assert_eq!(n.scale[1], 1.0);
        let z = n.apply(&x);
        let again = Normalization::from_columns(&z);
        assert!(again.mean.iter().all(|m| m.abs() < 1e-15));
        assert!((again.scale[0] - 1.0).abs() < 1e-15);
    }
}
