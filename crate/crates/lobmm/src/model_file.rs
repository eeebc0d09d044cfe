//! Calibrated-model file: a single JSON document (schema `model.v1`)
//! holding every law parameter and histogram needed to simulate, solve
//! and backtest.

use crate::calib::{CalibrationSet, IntensityTable, SizeLawTables};
use crate::laws::DiscretePmf;
use crate::regen::{DtHistogram, RegenerationTable};
use crate::stream::ReplayQuality;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const MODEL_SCHEMA: &str = "model.v1";

#[derive(Error, Debug)]
pub enum ModelFileError {
    #[error("io error on model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema `{0}`, expected `{MODEL_SCHEMA}`")]
    BadSchema(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub min_count: u32,
    /// Observed span of the calibration data, seconds.
    pub span_s: f64,
    pub quality: ReplayQuality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema: String,
    pub q_max: u32,
    pub lot_contracts: u32,
    /// Currency per tick (per contract).
    pub tick_size: f64,
    pub intensity_bid: IntensityTable,
    pub intensity_ask: IntensityTable,
    pub size_laws: SizeLawTables,
    pub regen: RegenerationTable,
    /// Overall P[O^e = Follow] for the side-only models.
    pub follow_marginal: f64,
    /// Unconditional establishment-delay histogram.
    pub dt_marginal: DtHistogram,
    /// Revealed-queue law behind price moves; estimated once per model by
    /// a self-consistent pre-run when absent.
    pub hidden_law: Option<DiscretePmf>,
    pub meta: ModelMeta,
}

impl ModelFile {
    pub fn from_calibration(set: &CalibrationSet, tick_size: f64) -> ModelFile {
        ModelFile {
            schema: MODEL_SCHEMA.to_string(),
            q_max: set.q_max,
            lot_contracts: crate::book::LOT_CONTRACTS,
            tick_size,
            intensity_bid: set.intensity_bid.clone(),
            intensity_ask: set.intensity_ask.clone(),
            size_laws: set.size_laws.clone(),
            regen: set.regen.clone(),
            follow_marginal: set.follow_marginal,
            dt_marginal: set.dt_marginal.clone(),
            hidden_law: None,
            meta: ModelMeta {
                min_count: set.min_count,
                span_s: set.span_s,
                quality: set.quality.clone(),
            },
        }
    }

    /// Symmetric (bid/ask averaged) intensity table.
    pub fn symmetric_intensity(&self) -> IntensityTable {
        let mut t = self.intensity_bid.clone();
        t.merge(&self.intensity_ask);
        t
    }

    /// Rebuild sampling caches dropped by serialization.
    pub fn ensure_cdf(&mut self) {
        for cell in &mut self.size_laws.cancel {
            cell.law.ensure_cdf();
        }
        for cell in &mut self.size_laws.market {
            cell.law.ensure_cdf();
        }
        self.regen.ensure_cdf();
        self.dt_marginal.ensure_cdf();
        if let Some(h) = &mut self.hidden_law {
            h.ensure_cdf();
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelFileError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelFile, ModelFileError> {
        let file = std::fs::File::open(path)?;
        let mut model: ModelFile = serde_json::from_reader(std::io::BufReader::new(file))?;
        if model.schema != MODEL_SCHEMA {
            return Err(ModelFileError::BadSchema(model.schema));
        }
        model.ensure_cdf();
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn round_trips_through_json() {
        let file = synthetic::stable_model0(29.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.v1.json");
        file.save(&path).unwrap();
        let back = ModelFile::load(&path).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn schema_is_checked() {
        let mut file = synthetic::stable_model0(29.5);
        file.schema = "model.v0".into();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        file.save(&path).unwrap();
        assert!(matches!(ModelFile::load(&path), Err(ModelFileError::BadSchema(_))));
    }
}
