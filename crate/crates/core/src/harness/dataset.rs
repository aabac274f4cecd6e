//! Raw data, per-dimension input scaling to the unit cube and an optional
//! response transform. Everything the engine sees is on the scaled side.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{extended_design, Observations};
use crate::error::{GpError, Result};

/// Affine map of one input dimension onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleMap {
    pub min: f64,
    pub max: f64,
}

impl ScaleMap {
    pub fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Self { min, max }
    }

    /// A zero-width range maps everything to 0.5.
    pub fn is_constant(&self) -> bool {
        self.max <= self.min
    }

    pub fn scale(&self, x: f64) -> f64 {
        if self.is_constant() {
            0.5
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }

    pub fn unscale(&self, s: f64) -> f64 {
        if self.is_constant() {
            self.min
        } else {
            self.min + s * (self.max - self.min)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseTransform {
    #[default]
    Identity,
    Center,
    Standardize,
}

/// `y_model = (y - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseMap {
    pub shift: f64,
    pub scale: f64,
}

impl ResponseMap {
    pub const IDENTITY: Self = Self { shift: 0.0, scale: 1.0 };

    pub fn fit(y: &DVector<f64>, transform: ResponseTransform) -> Self {
        let n = y.len() as f64;
        let mean = y.mean();
        match transform {
            ResponseTransform::Identity => Self::IDENTITY,
            ResponseTransform::Center => Self { shift: mean, scale: 1.0 },
            ResponseTransform::Standardize => {
                let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
                let sd = var.sqrt();
                Self { shift: mean, scale: if sd > 0.0 { sd } else { 1.0 } }
            }
        }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.shift) / self.scale
    }

    pub fn back_mean(&self, m: f64) -> f64 {
        self.shift + self.scale * m
    }

    pub fn back_variance(&self, v: f64) -> f64 {
        self.scale * self.scale * v
    }
}

/// Training data with the maps needed to move between raw and model scales.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub x_raw: DMatrix<f64>,
    pub x_scaled: DMatrix<f64>,
    /// Response on the original scale.
    pub y: DVector<f64>,
    pub scale_maps: Vec<ScaleMap>,
    pub response: ResponseMap,
    /// Non-fatal ingestion notes, also sent to the log.
    pub warnings: Vec<String>,
}

impl Dataset {
    /// Scales each input column by its observed range.
    pub fn from_raw(x_raw: DMatrix<f64>, y: DVector<f64>, transform: ResponseTransform) -> Result<Self> {
        let maps = x_raw.column_iter().map(|c| ScaleMap::fit(c.iter().copied())).collect();
        Self::with_maps(x_raw, y, maps, transform)
    }

    /// Scales with externally fixed maps, e.g. the known bounds of a design domain.
    pub fn with_maps(
        x_raw: DMatrix<f64>,
        y: DVector<f64>,
        scale_maps: Vec<ScaleMap>,
        transform: ResponseTransform,
    ) -> Result<Self> {
        if x_raw.nrows() != y.len() {
            return Err(GpError::DimensionMismatch { expected: x_raw.nrows(), found: y.len() });
        }
        if scale_maps.len() != x_raw.ncols() {
            return Err(GpError::DimensionMismatch { expected: x_raw.ncols(), found: scale_maps.len() });
        }
        if x_raw.nrows() < 2 {
            return Err(GpError::Data(format!("need at least 2 rows, found {}", x_raw.nrows())));
        }
        if x_raw.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(GpError::Data("non-finite value in data".into()));
        }
        let names = (1..=x_raw.ncols()).map(|i| format!("x{i}")).collect();
        let mut warnings = Vec::new();
        for (i, m) in scale_maps.iter().enumerate() {
            if m.is_constant() {
                let w = format!("input column {} is constant; scaled to 0.5", i + 1);
                log::warn!("{w}");
                warnings.push(w);
            }
        }
        let x_scaled = scale_matrix(&x_raw, &scale_maps);
        let response = ResponseMap::fit(&y, transform);
        Ok(Self { names, x_raw, x_scaled, y, scale_maps, response, warnings })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn m_x(&self) -> usize {
        self.x_raw.ncols()
    }

    /// The extended design (1, X_scaled).
    pub fn f(&self) -> DMatrix<f64> {
        extended_design(&self.x_scaled)
    }

    /// Scaled inputs with the transformed response.
    pub fn observations(&self) -> Observations {
        let y = self.y.map(|v| self.response.forward(v));
        Observations::new(self.x_scaled.clone(), y).expect("shapes checked at construction")
    }

    pub fn scale_queries(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if raw.ncols() != self.m_x() {
            return Err(GpError::DimensionMismatch { expected: self.m_x(), found: raw.ncols() });
        }
        Ok(scale_matrix(raw, &self.scale_maps))
    }

    pub fn unscale(&self, scaled: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(scaled.nrows(), scaled.ncols(), |r, c| self.scale_maps[c].unscale(scaled[(r, c)]))
    }

    /// Raw inputs under their names, then the original response as `y`;
    /// readable by [`ingest_csv`] with response column `y`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.names.iter().map(String::as_str).chain(["y"]))?;
        for (row, y) in self.x_raw.row_iter().zip(self.y.iter()) {
            out.write_record(row.iter().chain([y]).map(f64::to_string))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Bounds of the scaled domain.
    pub fn unit_bounds(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0); self.m_x()]
    }
}

fn scale_matrix(raw: &DMatrix<f64>, maps: &[ScaleMap]) -> DMatrix<f64> {
    DMatrix::from_fn(raw.nrows(), raw.ncols(), |r, c| maps[c].scale(raw[(r, c)]))
}

/// Which CSV column holds the response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ResponseColumn {
    /// Zero-based column index.
    Index(usize),
    Name(String),
}

impl std::str::FromStr for ResponseColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(s.parse().map(ResponseColumn::Index).unwrap_or_else(|_| ResponseColumn::Name(s.to_string())))
    }
}

/// Reads a numeric CSV with a header row. Every column except the response
/// becomes an input.
pub fn ingest_csv(path: &Path, response: &ResponseColumn, transform: ResponseTransform) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let target = match response {
        ResponseColumn::Index(i) if *i < headers.len() => *i,
        ResponseColumn::Index(i) => return Err(GpError::Data(format!("response column {i} out of range"))),
        ResponseColumn::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| GpError::Data(format!("response column '{name}' not found")))?,
    };
    if headers.len() < 2 {
        return Err(GpError::Data("need at least one input column besides the response".into()));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(GpError::Data(format!("row {} has {} fields, expected {}", line + 2, rec.len(), headers.len())));
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, s)| {
                s.parse::<f64>()
                    .map_err(|_| GpError::Data(format!("non-numeric cell '{s}' at row {}, column {}", line + 2, c + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(vals);
    }
    if rows.len() < 2 {
        return Err(GpError::Data(format!("need at least 2 rows, found {}", rows.len())));
    }
    let inputs: Vec<usize> = (0..headers.len()).filter(|&c| c != target).collect();
    let x = DMatrix::from_fn(rows.len(), inputs.len(), |r, c| rows[r][inputs[c]]);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r[target]));
    let mut ds = Dataset::from_raw(x, y, transform)?;
    ds.names = inputs.iter().map(|&c| headers[c].clone()).collect();
    Ok(ds)
}
