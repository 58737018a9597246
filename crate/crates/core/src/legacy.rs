//! Read-only view of the deployed scorer.
//!
//! A [`FrozenModel`] wraps either an internally trained [`GbdtModel`] or a
//! per-row probability table exported by an external system. Nothing here
//! can mutate the wrapped source once constructed.

use crate::dataset::{Dataset, FeatureMatrix};
use crate::gbdt::{GbdtError, GbdtModel};
use crate::metrics::{logit, sigmoid};
use crate::par;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

/// Score-file probabilities are clipped to `[PROBA_CLIP, 1 - PROBA_CLIP]`.
pub const PROBA_CLIP: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LegacyError {
    #[error("cannot read score file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("score file: {0}")]
    Csv(#[from] csv::Error),
    #[error("score file header must be `row_id,probability`, got `{0}`")]
    Header(String),
    #[error("score file line {line}: probability `{value}` outside [0, 1]")]
    BadProbability { line: usize, value: String },
    #[error("score file has duplicate row_id `{0}`")]
    DuplicateRow(String),
    #[error("no legacy score for row_id `{0}`")]
    UnknownRow(String),
    #[error(transparent)]
    Model(#[from] GbdtError),
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Gbdt(GbdtModel),
    ScoreTable(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModel {
    source: Source,
    fingerprint: String,
}

/// Serializable description of where the frozen scores come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LegacyArtifact {
    Gbdt { fingerprint: String, model: GbdtModel },
    ScoreFile { fingerprint: String, path: String },
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl FrozenModel {
    pub fn from_gbdt(model: GbdtModel) -> Self {
        let fingerprint = sha256_hex(model.to_json().as_bytes());
        FrozenModel {
            source: Source::Gbdt(model),
            fingerprint,
        }
    }

    /// Loads a `row_id,probability` CSV.
    pub fn from_score_file(path: &Path) -> Result<Self, LegacyError> {
        let file = std::fs::File::open(path).map_err(|source| LegacyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header != ["row_id", "probability"] {
            return Err(LegacyError::Header(header.join(",")));
        }
        let mut table = BTreeMap::new();
        for (k, rec) in reader.records().enumerate() {
            let rec = rec?;
            let id = rec.get(0).unwrap_or_default().trim().to_string();
            let raw = rec.get(1).unwrap_or_default().trim();
            let p: f64 = match raw.parse::<f64>() {
                Ok(p) if (0.0..=1.0).contains(&p) => p,
                _ => {
                    return Err(LegacyError::BadProbability {
                        line: k + 2,
                        value: raw.to_string(),
                    })
                }
            };
            if table.insert(id.clone(), p.clamp(PROBA_CLIP, 1.0 - PROBA_CLIP)).is_some() {
                return Err(LegacyError::DuplicateRow(id));
            }
        }
        Ok(Self::from_table(table))
    }

    fn from_table(table: BTreeMap<String, f64>) -> Self {
        let mut canon = String::new();
        for (id, p) in &table {
            canon.push_str(id);
            canon.push(',');
            canon.push_str(&format!("{p:?}\n"));
        }
        FrozenModel {
            fingerprint: sha256_hex(canon.as_bytes()),
            source: Source::ScoreTable(table),
        }
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn gbdt(&self) -> Option<&GbdtModel> {
        match &self.source {
            Source::Gbdt(m) => Some(m),
            Source::ScoreTable(_) => None,
        }
    }

    /// Base logit for one row. Internal models score the features; score
    /// tables look up the row id.
    pub fn base_logit(&self, row_id: &str, x: &[f64]) -> Result<f64, LegacyError> {
        match &self.source {
            Source::Gbdt(m) => Ok(m.predict_logit(x)?),
            Source::ScoreTable(t) => t
                .get(row_id)
                .map(|&p| logit(p))
                .ok_or_else(|| LegacyError::UnknownRow(row_id.to_string())),
        }
    }

    pub fn base_proba(&self, row_id: &str, x: &[f64]) -> Result<f64, LegacyError> {
        match &self.source {
            Source::ScoreTable(t) => t
                .get(row_id)
                .copied()
                .ok_or_else(|| LegacyError::UnknownRow(row_id.to_string())),
            Source::Gbdt(_) => self.base_logit(row_id, x).map(sigmoid),
        }
    }

    /// Base logits for a batch of rows, in row order.
    pub fn base_logits(&self, row_ids: &[String], x: &FeatureMatrix) -> Result<Vec<f64>, LegacyError> {
        par::map_range(x.n_rows(), |i| self.base_logit(&row_ids[i], x.row(i)))
            .into_iter()
            .collect()
    }

    pub fn dataset_logits(&self, data: &Dataset) -> Result<Vec<f64>, LegacyError> {
        self.base_logits(&data.row_ids, &data.x)
    }

    pub fn artifact(&self, score_path: Option<&str>) -> LegacyArtifact {
        match &self.source {
            Source::Gbdt(m) => LegacyArtifact::Gbdt {
                fingerprint: self.fingerprint.clone(),
                model: m.clone(),
            },
            Source::ScoreTable(_) => LegacyArtifact::ScoreFile {
                fingerprint: self.fingerprint.clone(),
                path: score_path.unwrap_or_default().to_string(),
            },
        }
    }

    pub fn from_artifact(artifact: &LegacyArtifact, base_dir: &Path) -> Result<Self, LegacyError> {
        match artifact {
            LegacyArtifact::Gbdt { model, .. } => Ok(Self::from_gbdt(model.clone())),
            LegacyArtifact::ScoreFile { path, .. } => {
                let p = Path::new(path);
                let resolved = if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
                Self::from_score_file(&resolved)
            }
        }
    }
}
