//! JSON interchange formats for matrices and a few file helpers.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::SMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{c, ChiMatrix, DensityMatrix, Op, C64};

pub const BASIS_LABEL: &str = "pauli-IXYZ";
pub const CONVENTION: &str = "unnormalized";

fn qubit_map() -> BTreeMap<String, String> {
    [("z".to_string(), "S-bright".to_string())].into_iter().collect()
}

/// Square complex matrix stored as separate real and imaginary row lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub basis: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convention: Option<String>,
    pub dim: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
    pub qubit_map: BTreeMap<String, String>,
}

impl MatrixJson {
    fn from_matrix<const N: usize>(m: &SMatrix<C64, N, N>, basis: &str, convention: Option<&str>) -> Self {
        let rows = |f: fn(&C64) -> f64| (0..N).map(|i| (0..N).map(|j| f(&m[(i, j)])).collect()).collect();
        Self {
            basis: basis.to_string(),
            convention: convention.map(str::to_string),
            dim: N,
            re: rows(|z| z.re),
            im: rows(|z| z.im),
            qubit_map: qubit_map(),
        }
    }

    fn to_matrix<const N: usize>(&self) -> Result<SMatrix<C64, N, N>> {
        let bad = |what: &str| Error::InvalidArgument(format!("matrix JSON: {what}"));
        if self.dim != N {
            return Err(bad(&format!("dim {} where {N} is required", self.dim)));
        }
        let shaped = |rows: &Vec<Vec<f64>>| rows.len() == N && rows.iter().all(|r| r.len() == N);
        if !shaped(&self.re) || !shaped(&self.im) {
            return Err(bad("re/im must be dim x dim"));
        }
        if self.re.iter().chain(&self.im).flatten().any(|v| !v.is_finite()) {
            return Err(bad("non-finite entry"));
        }
        Ok(SMatrix::from_fn(|i, j| c(self.re[i][j], self.im[i][j])))
    }

    pub fn from_chi(chi: &ChiMatrix) -> Self {
        Self::from_matrix(chi.matrix(), BASIS_LABEL, Some(CONVENTION))
    }

    pub fn to_chi(&self) -> Result<ChiMatrix> {
        if self.basis != BASIS_LABEL {
            return Err(Error::InvalidArgument(format!("unsupported χ basis {:?}", self.basis)));
        }
        if self.convention.as_deref().is_some_and(|c| c != CONVENTION) {
            return Err(Error::InvalidArgument(format!("unsupported χ convention {:?}", self.convention)));
        }
        ChiMatrix::new(self.to_matrix::<16>()?)
    }

    pub fn from_density(rho: &Op) -> Self {
        Self::from_matrix(rho, "computational", None)
    }

    pub fn to_density(&self) -> Result<DensityMatrix> {
        DensityMatrix::new(self.to_matrix::<4>()?)
    }
}

/// Writes pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
