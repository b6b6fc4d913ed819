//! Bundled published reference values and their comparison tolerances.

use serde::{Deserialize, Serialize};

use crate::analysis::Quantity;
use crate::{Error, Result};

const REFERENCE: &str = include_str!("../data/reference.toml");

/// Tolerance attached to one reference cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Tolerance {
    /// Published uncertainty; `k` standard deviations of the combined
    /// reference and simulation uncertainty are accepted.
    Sigma {
        sigma: f64,
        k: f64,
    },
    Relative {
        relative: f64,
    },
    Absolute {
        absolute: f64,
    },
}

impl Tolerance {
    /// Largest accepted deviation from `reference` for an observation with
    /// uncertainty `observed_sigma`.
    pub fn bound(&self, reference: f64, observed_sigma: f64, scale: f64) -> f64 {
        match *self {
            Tolerance::Sigma { sigma, k } => scale * k * sigma.hypot(observed_sigma),
            Tolerance::Relative { relative } => scale * relative * reference.abs(),
            Tolerance::Absolute { absolute } => scale * absolute,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceCell {
    pub table: String,
    pub row: String,
    pub column: String,
    pub value: f64,
    pub tolerance: Tolerance,
    /// Cells with `check = false` are reported but never fail a comparison.
    #[serde(default = "yes")]
    pub check: bool,
    #[serde(default)]
    pub note: Option<String>,
}

impl ReferenceCell {
    pub fn key(&self) -> String {
        cell_key(&self.table, &self.row, &self.column)
    }

    pub fn accepts(&self, observed: Quantity, scale: f64) -> bool {
        (observed.value - self.value).abs() <= self.tolerance.bound(self.value, observed.sigma, scale)
    }
}

/// Lookup key `table/row/column`.
pub fn cell_key(table: &str, row: &str, column: &str) -> String {
    format!("{table}/{row}/{column}")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    cell: Vec<ReferenceCell>,
}

/// Every bundled reference cell in file order.
pub fn reference_cells() -> Result<Vec<ReferenceCell>> {
    let f: File = toml::from_str(REFERENCE)
        .map_err(|e| Error::InvalidState(format!("bundled reference table is malformed: {e}")))?;
    Ok(f.cell)
}

/// The published value of one cell.
pub fn reference_value(table: &str, row: &str, column: &str) -> Result<ReferenceCell> {
    let key = cell_key(table, row, column);
    reference_cells()?
        .into_iter()
        .find(|c| c.key() == key)
        .ok_or_else(|| Error::NotFound(format!("reference cell {key}")))
}
