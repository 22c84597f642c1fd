//! Line-oriented model configuration: `key = value` pairs, matrices given
//! row by row. No structured-format dependency, trivially diffable.
//!
//! ```text
//! kind = butterworth        # or: explicit
//! order = 4                 # butterworth only
//! fc_hz = 1.0               # butterworth only
//! a_row = -1.0  0.0         # explicit only, repeated per row
//! b_row = 1.0
//! c_row = 1.0  0.0
//! h = 0.0  0.0              # explicit only, optional (defaults to zero)
//! sigma_u = 1.0
//! sigma_z = 0.5
//! assumed_snr_db = 10.0     # optional estimation-side override
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ContinuousLTISystem, butterworth};

/// Which realization the config describes.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Butterworth {
        order: usize,
        fc_hz: f64,
    },
    Explicit {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        h: Option<Vec<f64>>,
    },
}

/// Parsed model configuration; build the system with
/// [`ModelConfig::build_system`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub sigma_u: f64,
    pub sigma_z: f64,
    pub assumed_snr_db: Option<f64>,
}

fn parse_err(path: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(path: &str, line: usize, key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("{key}: expected a number, got {v:?}")))
}

fn parse_row(path: &str, line: usize, key: &str, v: &str) -> Result<Vec<f64>> {
    let row: Vec<f64> = v
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| {
                parse_err(path, line, format!("{key}: expected numbers, got {tok:?}"))
            })
        })
        .collect::<Result<_>>()?;
    if row.is_empty() {
        return Err(parse_err(path, line, format!("{key}: empty row")));
    }
    Ok(row)
}

impl ModelConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_named(&text, &path.display().to_string())
    }

    /// Parses config text; `path` labels error messages.
    pub fn parse_named(text: &str, path: &str) -> Result<Self> {
        let mut kind: Option<(String, usize)> = None;
        let mut order: Option<usize> = None;
        let mut fc_hz: Option<f64> = None;
        let mut sigma_u: Option<f64> = None;
        let mut sigma_z: Option<f64> = None;
        let mut assumed: Option<f64> = None;
        let mut a: Vec<Vec<f64>> = Vec::new();
        let mut b: Vec<Vec<f64>> = Vec::new();
        let mut c: Vec<Vec<f64>> = Vec::new();
        let mut h: Option<Vec<f64>> = None;

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(parse_err(path, line, format!("expected `key = value`, got {trimmed:?}")));
            };
            let key = key.trim();
            let value = value.trim();
            let dup = |what: &str| parse_err(path, line, format!("duplicate key {what}"));
            match key {
                "kind" => {
                    if kind.is_some() {
                        return Err(dup("kind"));
                    }
                    kind = Some((value.to_string(), line));
                }
                "order" => {
                    if order.is_some() {
                        return Err(dup("order"));
                    }
                    order = Some(value.parse::<usize>().map_err(|_| {
                        parse_err(path, line, format!("order: expected a positive integer, got {value:?}"))
                    })?);
                }
                "fc_hz" => {
                    if fc_hz.is_some() {
                        return Err(dup("fc_hz"));
                    }
                    fc_hz = Some(parse_f64(path, line, key, value)?);
                }
                "sigma_u" => {
                    if sigma_u.is_some() {
                        return Err(dup("sigma_u"));
                    }
                    sigma_u = Some(parse_f64(path, line, key, value)?);
                }
                "sigma_z" => {
                    if sigma_z.is_some() {
                        return Err(dup("sigma_z"));
                    }
                    sigma_z = Some(parse_f64(path, line, key, value)?);
                }
                "assumed_snr_db" => {
                    if assumed.is_some() {
                        return Err(dup("assumed_snr_db"));
                    }
                    assumed = Some(parse_f64(path, line, key, value)?);
                }
                "a_row" => a.push(parse_row(path, line, key, value)?),
                "b_row" => b.push(parse_row(path, line, key, value)?),
                "c_row" => c.push(parse_row(path, line, key, value)?),
                "h" => {
                    if h.is_some() {
                        return Err(dup("h"));
                    }
                    h = Some(parse_row(path, line, key, value)?);
                }
                other => {
                    return Err(parse_err(path, line, format!("unknown key {other:?}")));
                }
            }
        }

        let (kind_name, kind_line) =
            kind.ok_or_else(|| parse_err(path, 0, "missing required key `kind`"))?;
        let sigma_u =
            sigma_u.ok_or_else(|| parse_err(path, 0, "missing required key `sigma_u`"))?;
        let sigma_z =
            sigma_z.ok_or_else(|| parse_err(path, 0, "missing required key `sigma_z`"))?;

        let kind = match kind_name.as_str() {
            "butterworth" => {
                if !a.is_empty() || !b.is_empty() || !c.is_empty() || h.is_some() {
                    return Err(parse_err(
                        path,
                        kind_line,
                        "butterworth model must not carry explicit matrix rows",
                    ));
                }
                ModelKind::Butterworth {
                    order: order.ok_or_else(|| {
                        parse_err(path, kind_line, "butterworth model requires `order`")
                    })?,
                    fc_hz: fc_hz.ok_or_else(|| {
                        parse_err(path, kind_line, "butterworth model requires `fc_hz`")
                    })?,
                }
            }
            "explicit" => {
                if order.is_some() || fc_hz.is_some() {
                    return Err(parse_err(
                        path,
                        kind_line,
                        "explicit model must not carry `order` or `fc_hz`",
                    ));
                }
                if a.is_empty() || b.is_empty() || c.is_empty() {
                    return Err(parse_err(
                        path,
                        kind_line,
                        "explicit model requires a_row, b_row, and c_row entries",
                    ));
                }
                ModelKind::Explicit { a, b, c, h }
            }
            other => {
                return Err(parse_err(
                    path,
                    kind_line,
                    format!("kind must be `butterworth` or `explicit`, got {other:?}"),
                ));
            }
        };
        Ok(ModelConfig {
            kind,
            sigma_u,
            sigma_z,
            assumed_snr_db: assumed,
        })
    }

    /// Cutoff frequency when the family declares one.
    pub fn fc_hz(&self) -> Option<f64> {
        match &self.kind {
            ModelKind::Butterworth { fc_hz, .. } => Some(*fc_hz),
            ModelKind::Explicit { .. } => None,
        }
    }

    pub fn build_system(&self) -> Result<ContinuousLTISystem> {
        match &self.kind {
            ModelKind::Butterworth { order, fc_hz } => {
                butterworth(*order, *fc_hz, self.sigma_u, self.sigma_z)
            }
            ModelKind::Explicit { a, b, c, h } => {
                let to_matrix = |rows: &Vec<Vec<f64>>, name: &str| -> Result<DMatrix<f64>> {
                    let width = rows[0].len();
                    if rows.iter().any(|r| r.len() != width) {
                        return Err(Error::InvalidInput(format!(
                            "{name} rows have inconsistent widths"
                        )));
                    }
                    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
                };
                let a = to_matrix(a, "a_row")?;
                let b = to_matrix(b, "b_row")?;
                let c = to_matrix(c, "c_row")?;
                let h = match h {
                    Some(v) => DVector::from_column_slice(v),
                    None => DVector::zeros(a.nrows()),
                };
                let vz = DVector::from_element(c.nrows(), self.sigma_z * self.sigma_z);
                ContinuousLTISystem::new(a, b, c, h, self.sigma_u, vz)
            }
        }
    }
}
