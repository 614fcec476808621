//! On-disk fit result.

use std::path::{Path, PathBuf};

use kinetic_mmm_core::dataset::{load_csv, ColumnMapping, TimeSeriesDataset};
use kinetic_mmm_core::inference::PosteriorDraws;
use kinetic_mmm_core::metrics::FitMetrics;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const FORMAT: &str = "kinetic-mmm-fit/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub format: String,
    pub dataset_path: PathBuf,
    pub dataset_fingerprint: String,
    pub mapping: ColumnMapping,
    pub metrics: FitMetrics,
    pub converged: bool,
    pub unconverged: Vec<String>,
    pub posterior: PosteriorDraws,
}

impl FitFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read fit file {}: {e}", path.display())))?;
        let f: Self = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Mismatch(format!("{} is not a fit file: {e}", path.display())))?;
        if f.format != FORMAT {
            return Err(CliError::Mismatch(format!("unsupported fit format {:?}", f.format)));
        }
        Ok(f)
    }

    /// Loads the dataset (`data` or the recorded path) and checks the
    /// fingerprint.
    pub fn dataset(&self, data: Option<&Path>) -> Result<TimeSeriesDataset, CliError> {
        let path = data.unwrap_or(&self.dataset_path);
        if !path.exists() {
            return Err(CliError::Config(format!("dataset {} does not exist", path.display())));
        }
        let ds = load_csv(path, &self.mapping).map_err(|e| CliError::Mismatch(format!("{}: {e}", path.display())))?;
        let fp = ds.fingerprint();
        if fp != self.dataset_fingerprint {
            return Err(CliError::Mismatch(format!(
                "dataset {} has fingerprint {fp}, fit was made on {}",
                path.display(),
                self.dataset_fingerprint
            )));
        }
        Ok(ds)
    }
}
