//! CSV encodings shared by every tabular output.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mc::{Activation, McEstimate};
use crate::solver::VariancePoint;

/// Column order of the shared variance schema.
pub const VARIANCE_COLUMNS: [&str; 11] = [
    "m",
    "n",
    "sigma",
    "sigma2",
    "alpha",
    "gamma",
    "method",
    "k_used",
    "value",
    "std_error",
    "within_validity",
];

fn encode<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let io = |e: csv::Error| Error::InvalidArgument(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.serialize(row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Header plus one line per point; absent fields are left empty.
pub fn variance_csv(points: &[VariancePoint]) -> Result<String> {
    encode(points, &VARIANCE_COLUMNS)
}

pub const DEPTH_COLUMNS: [&str; 8] = [
    "layer",
    "width",
    "sigma2",
    "alpha",
    "gamma",
    "activation",
    "value",
    "std_error",
];

#[derive(Debug, Clone, Serialize)]
pub struct DepthRow {
    pub layer: usize,
    pub width: usize,
    pub sigma2: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub activation: &'static str,
    pub value: f64,
    pub std_error: f64,
}

impl DepthRow {
    pub fn from_estimate(
        layer: usize,
        width: usize,
        sigma2: f64,
        alpha: f64,
        gamma: f64,
        activation: Activation,
        e: &McEstimate,
    ) -> Self {
        Self {
            layer,
            width,
            sigma2,
            alpha,
            gamma,
            activation: activation.name(),
            value: e.mean,
            std_error: e.std_error,
        }
    }
}

pub fn depth_csv(rows: &[DepthRow]) -> Result<String> {
    encode(rows, &DEPTH_COLUMNS)
}
