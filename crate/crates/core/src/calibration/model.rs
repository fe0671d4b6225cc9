//! Per-iteration variance correction coefficients and their text format.
//!
//! The file format is one line per EP iteration,
//!
//! ```text
//! iter=0 alpha1=1.0371842119012847e0 alpha2=-3.1180057410128331e-3
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Every iteration index
//! in `0..L` must appear exactly once.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("alpha1 and alpha2 lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("calibration model is empty")]
    Empty,
    #[error("non-finite coefficient at iteration {0}")]
    NonFinite(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("iteration {0} appears more than once")]
    DuplicateIteration(usize),
    #[error("iteration {0} is missing")]
    MissingIteration(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationModel {
    alpha1: Vec<f64>,
    alpha2: Vec<f64>,
}

impl CalibrationModel {
    pub fn new(alpha1: Vec<f64>, alpha2: Vec<f64>) -> Result<Self, ModelError> {
        if alpha1.len() != alpha2.len() {
            return Err(ModelError::LengthMismatch(alpha1.len(), alpha2.len()));
        }
        if alpha1.is_empty() {
            return Err(ModelError::Empty);
        }
        if let Some(i) = (0..alpha1.len()).find(|&i| !(alpha1[i].is_finite() && alpha2[i].is_finite())) {
            return Err(ModelError::NonFinite(i));
        }
        Ok(Self { alpha1, alpha2 })
    }

    /// `α₁ = 1, α₂ = 0` for every iteration: the plain `1/Aₙₙ` approximation.
    pub fn identity(iterations: usize) -> Self {
        let n = iterations.max(1);
        Self {
            alpha1: vec![1.0; n],
            alpha2: vec![0.0; n],
        }
    }

    pub fn iterations(&self) -> usize {
        self.alpha1.len()
    }

    pub fn alpha1(&self) -> &[f64] {
        &self.alpha1
    }

    pub fn alpha2(&self) -> &[f64] {
        &self.alpha2
    }

    /// `(α₁, α₂)` of iteration `ell`. Panics when `ell` is out of range.
    pub fn coefficients(&self, ell: usize) -> (f64, f64) {
        (self.alpha1[ell], self.alpha2[ell])
    }

    /// Text form with 17 significant digits, so parsing restores every bit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (ell, (a1, a2)) in self.alpha1.iter().zip(&self.alpha2).enumerate() {
            writeln!(out, "iter={ell} alpha1={a1:.16e} alpha2={a2:.16e}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut entries: Vec<Option<(f64, f64)>> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ModelError::Parse { line: line_no, message };
            let mut iter = None;
            let mut a1 = None;
            let mut a2 = None;
            for token in line.split_whitespace() {
                let (key, value) = token
                    .split_once('=')
                    .ok_or_else(|| err(format!("expected key=value, found {token:?}")))?;
                let slot_is_set = match key {
                    "iter" => {
                        let v = value
                            .parse::<usize>()
                            .map_err(|e| err(format!("bad iteration index {value:?}: {e}")))?;
                        iter.replace(v).is_some()
                    }
                    "alpha1" | "alpha2" => {
                        let v = value
                            .parse::<f64>()
                            .map_err(|e| err(format!("bad float {value:?}: {e}")))?;
                        if !v.is_finite() {
                            return Err(err(format!("non-finite {key}")));
                        }
                        let slot = if key == "alpha1" { &mut a1 } else { &mut a2 };
                        slot.replace(v).is_some()
                    }
                    other => return Err(err(format!("unknown key {other:?}"))),
                };
                if slot_is_set {
                    return Err(err(format!("repeated key {key:?}")));
                }
            }
            let (Some(ell), Some(a1), Some(a2)) = (iter, a1, a2) else {
                return Err(err("line needs iter, alpha1 and alpha2".into()));
            };
            // Keeps a hostile index from allocating an enormous table.
            if ell > 1_000_000 {
                return Err(err(format!("iteration index {ell} too large")));
            }
            if entries.len() <= ell {
                entries.resize(ell + 1, None);
            }
            if entries[ell].replace((a1, a2)).is_some() {
                return Err(ModelError::DuplicateIteration(ell));
            }
        }
        if entries.is_empty() {
            return Err(ModelError::Empty);
        }
        let mut alpha1 = Vec::with_capacity(entries.len());
        let mut alpha2 = Vec::with_capacity(entries.len());
        for (ell, e) in entries.into_iter().enumerate() {
            let (a1, a2) = e.ok_or(ModelError::MissingIteration(ell))?;
            alpha1.push(a1);
            alpha2.push(a2);
        }
        Self::new(alpha1, alpha2)
    }
}
