use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::report::fmt_f64;

/// Labeled feature matrix. Rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    label_count: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, label_count: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= label_count) {
            return Err(Error::invalid(format!("label {bad} outside [0, {label_count})")));
        }
        Ok(Dataset {
            features,
            labels,
            label_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_count: self.label_count,
        }
    }

    /// Per-label sample counts.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.label_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Writes `x0,..,x{d-1},label` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let header: Vec<String> = (0..self.input_dim())
            .map(|j| format!("x{j}"))
            .chain(std::iter::once("label".to_string()))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (row, y) in self.features.outer_iter().zip(&self.labels) {
            for v in row {
                out.push_str(&fmt_f64(*v));
                out.push(',');
            }
            out.push_str(&y.to_string());
            out.push('\n');
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, label_count: usize) -> Result<Dataset> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))?;
        let columns: Vec<&str> = header.split(',').collect();
        if columns.last() != Some(&"label") {
            return Err(parse_err(1, "last column must be `label`".into()));
        }
        let dim = columns.len() - 1;
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(parse_err(
                    i + 2,
                    format!("expected {} fields, found {}", dim + 1, fields.len()),
                ));
            }
            for f in &fields[..dim] {
                values.push(f.parse::<f64>().map_err(|e| parse_err(i + 2, format!("`{f}`: {e}")))?);
            }
            labels.push(
                fields[dim]
                    .parse::<usize>()
                    .map_err(|e| parse_err(i + 2, format!("label `{}`: {e}", fields[dim])))?,
            );
        }
        let features = Array2::from_shape_vec((labels.len(), dim), values).map_err(|e| Error::shape(e.to_string()))?;
        Dataset::new(features, labels, label_count)
    }
}
