//! Irregular binary functional observations and the cached design rows used
//! by every solver iteration.
//!
//! Data live in long CSV format `subject,time,y` (header required), one row
//! per observation, so subjects may have different numbers of measurements.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::bspline::BSplineBasis;
use crate::error::{Error, Result};

/// One subject: observation times in `[0, T]` and binary outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub times: Vec<f64>,
    pub outcomes: Vec<u8>,
}

/// Binary functional dataset with `n` subjects and `N = sum_i m_i`
/// observations in total.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFunctionalDataset {
    subjects: Vec<Subject>,
    domain_end: f64,
    total_count: usize,
}

impl BinaryFunctionalDataset {
    /// Validates and wraps pre-grouped subjects.
    pub fn from_subjects(subjects: Vec<Subject>, domain_end: f64) -> Result<Self> {
        if domain_end <= 0.0 || !domain_end.is_finite() {
            return Err(Error::invalid(format!(
                "domain end must be positive, got {domain_end}"
            )));
        }
        if subjects.is_empty() {
            return Err(Error::invalid("dataset has no subjects".to_string()));
        }
        let mut total = 0;
        for subject in &subjects {
            if subject.times.is_empty() || subject.times.len() != subject.outcomes.len() {
                return Err(Error::invalid(format!(
                    "subject {} must have matching, non-empty times and outcomes",
                    subject.id
                )));
            }
            for &t in &subject.times {
                if !t.is_finite() || t < 0.0 || t > domain_end {
                    return Err(Error::OutOfDomain {
                        value: t,
                        domain_end,
                    });
                }
            }
            if subject.outcomes.iter().any(|&y| y > 1) {
                return Err(Error::invalid(format!(
                    "subject {} has an outcome outside {{0, 1}}",
                    subject.id
                )));
            }
            total += subject.times.len();
        }
        Ok(Self {
            subjects,
            domain_end,
            total_count: total,
        })
    }

    /// Reads a `subject,time,y` CSV. Subjects are grouped by id in
    /// first-appearance order; times need not be sorted.
    pub fn load_csv(path: impl AsRef<Path>, domain_end: f64) -> Result<Self> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let data_err = |line: usize, message: String| Error::Data {
            path: display.clone(),
            line,
            message,
        };
        let reader = BufReader::new(File::open(path)?);
        let mut subjects: Vec<Subject> = Vec::new();
        let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
        let mut saw_header = false;
        for (line_no, line) in reader.lines().enumerate() {
            let line_no = line_no + 1;
            let line = line?;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if !saw_header {
                if trimmed.trim() != "subject,time,y" {
                    return Err(data_err(
                        line_no,
                        "expected header `subject,time,y`".to_string(),
                    ));
                }
                saw_header = true;
                continue;
            }
            if trimmed.is_empty() {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').collect();
            if fields.len() != 3 {
                return Err(data_err(
                    line_no,
                    format!("expected 3 comma-separated fields, got {}", fields.len()),
                ));
            }
            let id = fields[0].trim();
            if id.is_empty() {
                return Err(data_err(line_no, "empty subject id".to_string()));
            }
            let time: f64 = fields[1]
                .trim()
                .parse()
                .map_err(|_| data_err(line_no, format!("malformed time `{}`", fields[1])))?;
            if !time.is_finite() || time < 0.0 || time > domain_end {
                return Err(data_err(
                    line_no,
                    format!("time {time} outside the domain [0, {domain_end}]"),
                ));
            }
            let y: i64 = fields[2]
                .trim()
                .parse()
                .map_err(|_| data_err(line_no, format!("malformed outcome `{}`", fields[2])))?;
            if y != 0 && y != 1 {
                return Err(data_err(
                    line_no,
                    format!("outcome {y} is not in {{0, 1}}"),
                ));
            }
            let slot = *index.entry(id.to_string()).or_insert_with(|| {
                subjects.push(Subject {
                    id: id.to_string(),
                    times: Vec::new(),
                    outcomes: Vec::new(),
                });
                subjects.len() - 1
            });
            subjects[slot].times.push(time);
            subjects[slot].outcomes.push(y as u8);
        }
        if !saw_header {
            return Err(data_err(1, "empty file".to_string()));
        }
        if subjects.is_empty() {
            return Err(data_err(1, "no data rows after the header".to_string()));
        }
        Self::from_subjects(subjects, domain_end)
    }

    /// Writes the same `subject,time,y` schema this type reads.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "subject,time,y")?;
        for subject in &self.subjects {
            for (t, y) in subject.times.iter().zip(subject.outcomes.iter()) {
                writeln!(out, "{},{t},{y}", subject.id)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn num_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// Total observation count `N`.
    pub fn total_count(&self) -> usize {
        self.total_count
    }

    pub fn domain_end(&self) -> f64 {
        self.domain_end
    }

    /// Signed outcomes `q_ij = 2 y_ij - 1`, stacked subject-major.
    pub fn signed_outcomes(&self) -> DVector<f64> {
        let mut q = DVector::zeros(self.total_count);
        let mut row = 0;
        for subject in &self.subjects {
            for &y in &subject.outcomes {
                q[row] = 2.0 * f64::from(y) - 1.0;
                row += 1;
            }
        }
        q
    }
}

/// Per-observation basis rows `B_ij`, stacked subject-major, plus the
/// per-subject cross-product matrices reused by the coefficient updates.
#[derive(Debug, Clone)]
pub struct DesignCache {
    rows: DMatrix<f64>,
    offsets: Vec<usize>,
    subject_grams: Vec<DMatrix<f64>>,
    /// First non-zero column of each row; at most `d + 1` columns starting
    /// there are non-zero.
    row_starts: Vec<usize>,
    bandwidth: usize,
}

impl DesignCache {
    /// Evaluates the basis at every observation time.
    pub fn new(data: &BinaryFunctionalDataset, basis: &BSplineBasis) -> Result<Self> {
        if data.domain_end() > basis.domain_end() {
            return Err(Error::DimensionMismatch(format!(
                "data domain [0, {}] exceeds the basis domain [0, {}]",
                data.domain_end(),
                basis.domain_end()
            )));
        }
        let l = basis.num_basis();
        let bandwidth = (basis.degree() + 1).min(l);
        let n_total = data.total_count();
        let mut rows = DMatrix::zeros(n_total, l);
        let mut offsets = Vec::with_capacity(data.num_subjects() + 1);
        let mut subject_grams = Vec::with_capacity(data.num_subjects());
        let mut row_starts = Vec::with_capacity(n_total);
        let mut row = 0;
        offsets.push(0);
        for subject in data.subjects() {
            let mut gram = DMatrix::zeros(l, l);
            for &t in &subject.times {
                let values = basis.eval(t, 0)?;
                for j in 0..l {
                    rows[(row, j)] = values[j];
                }
                let first = (0..l).find(|&j| values[j] != 0.0).unwrap_or(0);
                row_starts.push(first.min(l - bandwidth));
                gram.ger(1.0, &values, &values, 1.0);
                row += 1;
            }
            subject_grams.push(gram);
            offsets.push(row);
        }
        Ok(Self {
            rows,
            offsets,
            subject_grams,
            row_starts,
            bandwidth,
        })
    }

    /// Stacked design matrix, `N x L`.
    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn num_obs(&self) -> usize {
        self.rows.nrows()
    }

    pub fn num_basis(&self) -> usize {
        self.rows.ncols()
    }

    pub fn num_subjects(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Row range of subject `i`.
    pub fn subject_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// `sum_j B_ij B_ij^T` for subject `i`.
    pub fn subject_gram(&self, i: usize) -> &DMatrix<f64> {
        &self.subject_grams[i]
    }

    /// Columns that can be non-zero in row `r`.
    pub fn row_window(&self, r: usize) -> std::ops::Range<usize> {
        self.row_starts[r]..self.row_starts[r] + self.bandwidth
    }

    /// `B_r . coef` using only the non-zero window of row `r`.
    pub fn row_dot(&self, r: usize, coef: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for c in self.row_window(r) {
            acc += self.rows[(r, c)] * coef[c];
        }
        acc
    }

    /// `B . coef` over all rows.
    pub fn mult_coef(&self, coef: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.num_obs(), |r, _| self.row_dot(r, coef))
    }

    /// `B^T B` over all observations.
    pub fn total_gram(&self) -> DMatrix<f64> {
        let l = self.num_basis();
        let mut total = DMatrix::zeros(l, l);
        for gram in &self.subject_grams {
            total += gram;
        }
        total
    }
}
