//! Batch scoring from a saved bundle.

use super::{files, read_json, AggregateArtifact, LegacyFile, PipelineError};
use crate::aggregator::{predict_final, ExpertFn, GateModel};
use crate::dataset::{FeatureMatrix, IngestSchema};
use crate::expr::parse;
use crate::legacy::FrozenModel;
use crate::metrics::sigmoid;
use serde::Deserialize;
use std::path::Path;
use std::sync::Arc;

const STAGE: &str = "predict";

/// The part of an expert artifact scoring needs.
#[derive(Debug, Deserialize)]
struct StoredExpert {
    region_id: usize,
    dsl_text: String,
}

/// Everything needed to score rows, loaded once.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub schema: IngestSchema,
    pub frozen: FrozenModel,
    pub experts: Vec<ExpertFn>,
    pub gate: GateModel,
}

impl Scorer {
    pub fn load(bundle: &Path) -> Result<Self, PipelineError> {
        let err = |m: String| PipelineError::new(STAGE, m);
        let schema: IngestSchema = read_json(&bundle.join(files::SCHEMA), STAGE)?;
        let legacy: LegacyFile = read_json(&bundle.join(files::LEGACY), STAGE)?;
        let frozen = FrozenModel::from_artifact(&legacy.legacy, bundle).map_err(|e| err(e.to_string()))?;
        let agg: AggregateArtifact = read_json(&bundle.join(files::AGGREGATE), STAGE)?;
        let names: Arc<[String]> = schema.feature_names().into();
        let mut experts = Vec::with_capacity(agg.expert_ids.len());
        for &id in &agg.expert_ids {
            let stored: StoredExpert = read_json(&bundle.join(files::expert(id)), STAGE)?;
            if stored.region_id != id {
                return Err(err(format!("expert file for region {id} holds region {}", stored.region_id)));
            }
            let expr = parse(&stored.dsl_text, &names).map_err(|e| err(format!("expert {id}: {e}")))?;
            experts.push(ExpertFn::new(expr));
        }
        Ok(Scorer {
            schema,
            frozen,
            experts,
            gate: agg.gate,
        })
    }

    /// Legacy and final probabilities for each row.
    pub fn score(&self, row_ids: &[String], x: &FeatureMatrix) -> Result<(Vec<f64>, Vec<f64>), PipelineError> {
        let err = |m: String| PipelineError::new(STAGE, m);
        let logits = self.frozen.base_logits(row_ids, x).map_err(|e| err(e.to_string()))?;
        let fin = predict_final(x, &logits, &self.experts, &self.gate).map_err(|e| err(e.to_string()))?;
        Ok((logits.iter().map(|&z| sigmoid(z)).collect(), fin))
    }

    /// One row, for latency measurement and embedding.
    pub fn score_row(&self, row_id: &str, row: &[f64], buf: &mut Vec<f64>) -> Result<f64, PipelineError> {
        let z = self
            .frozen
            .base_logit(row_id, row)
            .map_err(|e| PipelineError::new(STAGE, e.to_string()))?;
        if self.gate.fallback {
            return Ok(sigmoid(z));
        }
        crate::aggregator::context_row(row, z, &self.experts, buf);
        Ok(sigmoid(self.gate.logit(buf)))
    }
}

/// Scores `input` with the bundle and writes `row_id,legacy_proba,final_proba`.
/// Returns the number of rows written.
pub fn predict(bundle: &Path, input: &Path, output: &Path) -> Result<usize, PipelineError> {
    let err = |m: String| PipelineError::new(STAGE, m);
    let scorer = Scorer::load(bundle)?;
    let rows = scorer.schema.transform(input).map_err(|e| err(e.to_string()))?;
    let (legacy, fin) = scorer.score(&rows.row_ids, &rows.x)?;
    let mut w = csv::Writer::from_path(output).map_err(|e| err(e.to_string()))?;
    w.write_record(["row_id", "legacy_proba", "final_proba"])
        .map_err(|e| err(e.to_string()))?;
    for i in 0..rows.row_ids.len() {
        w.write_record([rows.row_ids[i].clone(), legacy[i].to_string(), fin[i].to_string()])
            .map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| err(e.to_string()))?;
    Ok(rows.row_ids.len())
}
