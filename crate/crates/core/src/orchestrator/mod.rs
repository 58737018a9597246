//! Stage sequencing and bundle persistence.
//!
//! A bundle directory holds one file per stage output:
//!
//! ```text
//! config.json  schema.json  legacy.json  stats.json  regions.json
//! chains/region_000.jsonl ...   experts/region_000.json ...
//! aggregate.json  report.json  report.txt  scores.csv
//! ```
//!
//! Every stage can be rerun from the files of the stages before it.

mod predict;

pub use predict::{predict, Scorer};

use crate::aggregator::{predict_final, train_gate, ExpertFn, GateConfig, GateModel};
use crate::chain::{null_expert, run_chain, ChainConfig, ChainContext, ExpertArtifact, ExpertMetrics, TranscriptEntry};
use crate::dataset::{feature_stats, load_csv_with_ids, split_indices, Dataset, FeatureStats, IngestSchema};
use crate::gbdt::{self, GbdtConfig};
use crate::legacy::{FrozenModel, LegacyArtifact};
use crate::metrics::{auc, sigmoid, EvalReport, ReportTable};
use crate::par;
use crate::provider::ProviderConfig;
use crate::regions::{mine_regions, Region, RegionConfig};
use crate::tpe::TpeConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::{Path, PathBuf};

pub mod files {
    pub const CONFIG: &str = "config.json";
    pub const SCHEMA: &str = "schema.json";
    pub const LEGACY: &str = "legacy.json";
    pub const LEGACY_SCORES: &str = "legacy_scores.csv";
    pub const STATS: &str = "stats.json";
    pub const REGIONS: &str = "regions.json";
    pub const CHAINS: &str = "chains";
    pub const EXPERTS: &str = "experts";
    pub const AGGREGATE: &str = "aggregate.json";
    pub const REPORT: &str = "report.json";
    pub const REPORT_TXT: &str = "report.txt";
    pub const SCORES: &str = "scores.csv";

    pub fn expert(region_id: usize) -> String {
        format!("{EXPERTS}/region_{region_id:03}.json")
    }

    pub fn transcript(region_id: usize) -> String {
        format!("{CHAINS}/region_{region_id:03}.jsonl")
    }
}

/// A hard failure, tagged with the stage that raised it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineError {
    pub stage: String,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: &str, message: impl Into<String>) -> Self {
        PipelineError {
            stage: stage.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

impl std::error::Error for PipelineError {}

fn tag<E: fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::new(stage, e.to_string())
}

/// Where the frozen scores come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LegacySource {
    /// Train an internal GBDT on the training split, optionally on a subset
    /// of features.
    Gbdt {
        #[serde(default)]
        gbdt: GbdtConfig,
        #[serde(default)]
        features: Option<Vec<String>>,
    },
    /// `row_id,probability` file covering every row.
    ScoreFile { path: PathBuf },
}

impl Default for LegacySource {
    fn default() -> Self {
        LegacySource::Gbdt {
            gbdt: GbdtConfig::default(),
            features: None,
        }
    }
}

fn default_row_id() -> Option<String> {
    Some("row_id".into())
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_seed() -> u64 {
    42
}
fn default_output() -> PathBuf {
    PathBuf::from("bundle")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub data_path: PathBuf,
    pub target_column: String,
    #[serde(default = "default_row_id")]
    pub row_id_column: Option<String>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Master seed; the split, legacy, optimizer and gate seeds derive from it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub legacy: LegacySource,
    #[serde(default)]
    pub regions: RegionConfig,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub tpe: TpeConfig,
    #[serde(default)]
    pub gate: GateConfig,
    /// Not part of the stored config: a bundle does not record where it lives.
    #[serde(default = "default_output", skip_serializing)]
    pub output_dir: PathBuf,
    /// Chain workers; 0 uses every core. Not stored either, since it cannot
    /// change any output.
    #[serde(default, skip_serializing)]
    pub workers: usize,
}

impl PipelineConfig {
    pub fn new(data_path: impl Into<PathBuf>, target_column: &str) -> Self {
        PipelineConfig {
            data_path: data_path.into(),
            target_column: target_column.into(),
            row_id_column: default_row_id(),
            train_fraction: default_train_fraction(),
            seed: default_seed(),
            legacy: LegacySource::default(),
            regions: RegionConfig::default(),
            chain: ChainConfig::default(),
            provider: ProviderConfig::default(),
            tpe: TpeConfig::default(),
            gate: GateConfig::default(),
            output_dir: default_output(),
            workers: 0,
        }
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::new("config", format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(tag("config"))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.data_path);
        fix(&mut cfg.output_dir);
        if let LegacySource::ScoreFile { path } = &mut cfg.legacy {
            fix(path);
        }
        Ok(cfg)
    }

    /// Copy with every derived seed filled in from `seed`.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.tpe.seed = c.seed;
        c.gate.seed = c.seed;
        if let LegacySource::Gbdt { gbdt, .. } = &mut c.legacy {
            gbdt.seed = c.seed;
        }
        c
    }

    /// sha256 of the stored config, embedded in every artifact.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, stage: &'static str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(tag(stage))?;
    }
    std::fs::write(path, to_json_bytes(value)).map_err(|e| PipelineError::new(stage, format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, stage: &str) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::new(stage, format!("missing bundle component {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::new(stage, format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegacyFile {
    pub config_sha256: String,
    pub legacy: LegacyArtifact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub config_sha256: String,
    pub stats: FeatureStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionsFile {
    pub config_sha256: String,
    pub n_leaves: usize,
    pub total_abs_residual: f64,
    pub regions: Vec<Region>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertFile {
    pub config_sha256: String,
    #[serde(flatten)]
    pub expert: ExpertArtifact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateArtifact {
    pub config_sha256: String,
    pub expert_ids: Vec<usize>,
    #[serde(flatten)]
    pub gate: GateModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_sha256: String,
    pub legacy: EvalReport,
    #[serde(rename = "final")]
    pub final_: EvalReport,
    pub n_experts: usize,
    pub non_null_experts: Vec<usize>,
    pub fallback: bool,
}

/// Data and split, rebuilt identically by every stage.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: PipelineConfig,
    pub sha: String,
    pub data: Dataset,
    pub schema: IngestSchema,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub train: Dataset,
    pub val: Dataset,
}

pub fn prepare(config: &PipelineConfig) -> Result<Prepared, PipelineError> {
    let config = config.resolved();
    let (data, schema) = load_csv_with_ids(
        &config.data_path,
        &config.target_column,
        config.row_id_column.as_deref(),
        None,
    )
    .map_err(tag("data"))?;
    let (train_idx, val_idx) = split_indices(&data.target, config.train_fraction, config.seed).map_err(tag("data"))?;
    Ok(Prepared {
        sha: config.fingerprint(),
        train: data.subset(&train_idx),
        val: data.subset(&val_idx),
        config,
        data,
        schema,
        train_idx,
        val_idx,
    })
}

/// Trains or loads the frozen model and writes config, schema and legacy
/// artifacts.
pub fn stage_legacy(p: &Prepared, bundle: &Path) -> Result<FrozenModel, PipelineError> {
    const S: &str = "train-legacy";
    std::fs::create_dir_all(bundle).map_err(tag(S))?;
    write_json(&bundle.join(files::CONFIG), &p.config, S)?;
    write_json(&bundle.join(files::SCHEMA), &p.schema, S)?;
    let (frozen, artifact) = match &p.config.legacy {
        LegacySource::Gbdt { gbdt: cfg, features } => {
            let mut cfg = cfg.clone();
            if let Some(names) = features {
                let idx = names
                    .iter()
                    .map(|n| {
                        p.train
                            .feature_index(n)
                            .ok_or_else(|| PipelineError::new(S, format!("legacy feature `{n}` not in data")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                cfg.features = Some(idx);
            }
            let model = gbdt::train(&p.train.x, &p.train.target, &cfg).map_err(tag(S))?;
            let frozen = FrozenModel::from_gbdt(model);
            let art = frozen.artifact(None);
            (frozen, art)
        }
        LegacySource::ScoreFile { path } => {
            let frozen = FrozenModel::from_score_file(path).map_err(tag(S))?;
            std::fs::copy(path, bundle.join(files::LEGACY_SCORES)).map_err(tag(S))?;
            let art = frozen.artifact(Some(files::LEGACY_SCORES));
            (frozen, art)
        }
    };
    write_json(
        &bundle.join(files::LEGACY),
        &LegacyFile {
            config_sha256: p.sha.clone(),
            legacy: artifact,
        },
        S,
    )?;
    log::info!("legacy model fingerprint {}", frozen.fingerprint());
    Ok(frozen)
}

pub fn load_legacy(bundle: &Path, stage: &'static str) -> Result<FrozenModel, PipelineError> {
    let f: LegacyFile = read_json(&bundle.join(files::LEGACY), stage)?;
    FrozenModel::from_artifact(&f.legacy, bundle).map_err(tag(stage))
}

pub fn stage_regions(p: &Prepared, bundle: &Path, frozen: &FrozenModel) -> Result<(FeatureStats, Vec<Region>), PipelineError> {
    const S: &str = "regions";
    let stats = feature_stats(&p.train, &p.val).map_err(tag(S))?;
    let (regions, cart) = mine_regions(frozen, &p.train, &p.config.regions).map_err(tag(S))?;
    write_json(
        &bundle.join(files::STATS),
        &StatsFile {
            config_sha256: p.sha.clone(),
            stats: stats.clone(),
        },
        S,
    )?;
    write_json(
        &bundle.join(files::REGIONS),
        &RegionsFile {
            config_sha256: p.sha.clone(),
            n_leaves: cart.tree.leaves().count(),
            total_abs_residual: cart.total_abs_residual,
            regions: regions.clone(),
        },
        S,
    )?;
    log::info!("{} hard regions selected", regions.len());
    Ok((stats, regions))
}

pub fn load_regions(bundle: &Path, stage: &'static str) -> Result<(FeatureStats, Vec<Region>), PipelineError> {
    let s: StatsFile = read_json(&bundle.join(files::STATS), stage)?;
    let r: RegionsFile = read_json(&bundle.join(files::REGIONS), stage)?;
    Ok((s.stats, r.regions))
}

fn null_artifact(region: &Region, data: &Dataset, legacy_auc: f64, reason: &str) -> ExpertArtifact {
    let e = null_expert(region, &data.feature_names);
    ExpertArtifact {
        region_id: region.id,
        region: region.clone(),
        dsl_text: e.serialize(),
        params: Default::default(),
        null: true,
        successes: 0,
        iterations: 0,
        boundary_refined: false,
        history: vec![crate::chain::HistoryItem {
            t: 0,
            intent: String::new(),
            accepted: false,
            a_t: None,
            reason: reason.into(),
        }],
        metrics: ExpertMetrics {
            legacy_auc,
            a_series: vec![legacy_auc],
            final_auc: legacy_auc,
        },
    }
}

/// Runs one chain per region on up to `workers` threads and writes
/// transcripts and expert artifacts in region order.
pub fn stage_evolve(
    p: &Prepared,
    bundle: &Path,
    frozen: &FrozenModel,
    stats: &FeatureStats,
    regions: &[Region],
) -> Result<Vec<ExpertArtifact>, PipelineError> {
    const S: &str = "evolve";
    let train_logits = frozen.dataset_logits(&p.train).map_err(tag(S))?;
    let val_logits = frozen.dataset_logits(&p.val).map_err(tag(S))?;
    let train_proba: Vec<f64> = train_logits.iter().map(|&z| sigmoid(z)).collect();
    let legacy_val_auc = auc(&p.val.target, &val_logits).map_err(tag(S))?;
    let ctx = ChainContext {
        train: &p.train,
        val: &p.val,
        train_logits: &train_logits,
        val_logits: &val_logits,
        train_proba: &train_proba,
        stats,
        regions,
        legacy_val_auc,
    };
    // fail fast on provider configuration before spawning workers
    p.config.provider.build().map_err(tag(S))?;

    let cfg = &p.config;
    let outcomes = par::with_workers(cfg.workers, || {
        par::map_slice(regions, |region| {
            let mut provider = cfg.provider.build().map_err(|e| e.to_string())?;
            run_chain(region, provider.as_mut(), &ctx, &cfg.chain, &cfg.tpe).map_err(|e| e.to_string())
        })
    });

    let _ = std::fs::remove_dir_all(bundle.join(files::CHAINS));
    let _ = std::fs::remove_dir_all(bundle.join(files::EXPERTS));
    std::fs::create_dir_all(bundle.join(files::CHAINS)).map_err(tag(S))?;
    let mut artifacts = Vec::with_capacity(regions.len());
    for (region, outcome) in regions.iter().zip(outcomes) {
        let (artifact, transcript): (ExpertArtifact, Vec<TranscriptEntry>) = match outcome {
            Ok(o) => (o.artifact, o.transcript),
            Err(reason) => {
                log::warn!("chain for region {} failed: {reason}", region.id);
                (null_artifact(region, &p.train, legacy_val_auc, &reason), Vec::new())
            }
        };
        let mut lines = String::new();
        for entry in &transcript {
            lines.push_str(&serde_json::to_string(entry).expect("transcript serializes"));
            lines.push('\n');
        }
        std::fs::write(bundle.join(files::transcript(region.id)), lines).map_err(tag(S))?;
        write_json(
            &bundle.join(files::expert(region.id)),
            &ExpertFile {
                config_sha256: p.sha.clone(),
                expert: artifact.clone(),
            },
            S,
        )?;
        log::info!(
            "region {}: {} after {} iterations, A {:.6} -> {:.6}",
            region.id,
            if artifact.null { "null expert" } else { "expert" },
            artifact.iterations,
            legacy_val_auc,
            artifact.metrics.final_auc
        );
        artifacts.push(artifact);
    }
    Ok(artifacts)
}

pub fn load_experts(bundle: &Path, regions: &[Region], stage: &'static str) -> Result<Vec<ExpertArtifact>, PipelineError> {
    regions
        .iter()
        .map(|r| read_json::<ExpertFile>(&bundle.join(files::expert(r.id)), stage).map(|f| f.expert))
        .collect()
}

fn expert_fns(experts: &[ExpertArtifact], data: &Dataset, stage: &'static str) -> Result<Vec<ExpertFn>, PipelineError> {
    experts
        .iter()
        .map(|a| {
            a.expr(&data.feature_names)
                .map(ExpertFn::new)
                .map_err(|e| PipelineError::new(stage, format!("expert {}: {e}", a.region_id)))
        })
        .collect()
}

pub fn stage_aggregate(
    p: &Prepared,
    bundle: &Path,
    frozen: &FrozenModel,
    experts: &[ExpertArtifact],
) -> Result<AggregateArtifact, PipelineError> {
    const S: &str = "aggregate";
    let fns = expert_fns(experts, &p.train, S)?;
    let logits = frozen.dataset_logits(&p.train).map_err(tag(S))?;
    let gate = train_gate(
        &p.train.x,
        &p.train.target,
        &logits,
        &p.train.feature_names,
        &fns,
        &p.config.gate,
    )
    .map_err(tag(S))?;
    let art = AggregateArtifact {
        config_sha256: p.sha.clone(),
        expert_ids: experts.iter().map(|e| e.region_id).collect(),
        gate,
    };
    write_json(&bundle.join(files::AGGREGATE), &art, S)?;
    log::info!(
        "gate: fallback={} gate_val auc {:.6} vs legacy {:.6}",
        art.gate.fallback,
        art.gate.gate_val.gate_auc,
        art.gate.gate_val.legacy_auc
    );
    Ok(art)
}

pub fn load_aggregate(bundle: &Path, stage: &'static str) -> Result<AggregateArtifact, PipelineError> {
    read_json(&bundle.join(files::AGGREGATE), stage)
}

/// Scores every row, writes `scores.csv` and the validation report.
pub fn stage_eval(
    p: &Prepared,
    bundle: &Path,
    frozen: &FrozenModel,
    experts: &[ExpertArtifact],
    agg: &AggregateArtifact,
) -> Result<RunReport, PipelineError> {
    const S: &str = "eval";
    let fns = expert_fns(experts, &p.data, S)?;
    let logits = frozen.dataset_logits(&p.data).map_err(tag(S))?;
    let fin = predict_final(&p.data.x, &logits, &fns, &agg.gate).map_err(tag(S))?;
    let legacy: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();

    let pick = |v: &[f64]| p.val_idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let legacy_report = EvalReport::compute("legacy", &p.val.target, &pick(&legacy)).map_err(tag(S))?;
    let final_report = EvalReport::compute("final", &p.val.target, &pick(&fin))
        .map_err(tag(S))?
        .against(&legacy_report);
    let report = RunReport {
        config_sha256: p.sha.clone(),
        legacy: legacy_report,
        final_: final_report,
        n_experts: experts.len(),
        non_null_experts: experts.iter().filter(|e| !e.null).map(|e| e.region_id).collect(),
        fallback: agg.gate.fallback,
    };
    write_json(&bundle.join(files::REPORT), &report, S)?;
    let table = ReportTable(&[report.legacy.clone(), report.final_.clone()]).to_string();
    let txt = format!(
        "validation split ({} rows), {} experts ({} non-null), gate fallback: {}\n\n{table}",
        p.val.n_rows(),
        report.n_experts,
        report.non_null_experts.len(),
        report.fallback
    );
    std::fs::write(bundle.join(files::REPORT_TXT), txt).map_err(tag(S))?;

    let mut split = vec!["train"; p.data.n_rows()];
    for &i in &p.val_idx {
        split[i] = "val";
    }
    let mut w = csv::Writer::from_path(bundle.join(files::SCORES)).map_err(tag(S))?;
    w.write_record(["row_id", "split", "legacy_proba", "final_proba"]).map_err(tag(S))?;
    for i in 0..p.data.n_rows() {
        w.write_record([
            p.data.row_ids[i].as_str(),
            split[i],
            &legacy[i].to_string(),
            &fin[i].to_string(),
        ])
        .map_err(tag(S))?;
    }
    w.flush().map_err(tag(S))?;
    Ok(report)
}

pub fn load_report(bundle: &Path) -> Result<RunReport, PipelineError> {
    read_json(&bundle.join(files::REPORT), "eval")
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub regions: Vec<Region>,
    pub experts: Vec<ExpertArtifact>,
    pub aggregate: AggregateArtifact,
    pub report: RunReport,
}

/// All stages into `config.output_dir`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutput, PipelineError> {
    let p = prepare(config)?;
    let bundle = config.output_dir.as_path();
    let frozen = stage_legacy(&p, bundle)?;
    let (stats, regions) = stage_regions(&p, bundle, &frozen)?;
    let experts = stage_evolve(&p, bundle, &frozen, &stats, &regions)?;
    let aggregate = stage_aggregate(&p, bundle, &frozen, &experts)?;
    let report = stage_eval(&p, bundle, &frozen, &experts, &aggregate)?;
    Ok(RunOutput {
        regions,
        experts,
        aggregate,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::from_rows;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    /// Legacy sees x1 and x2; inside x3 > 0.5 the truth adds an x4 effect.
    fn write_task(dir: &Path, n: usize) -> PathBuf {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.gen::<f64>()).collect()).collect();
        let y: Vec<u8> = rows
            .iter()
            .map(|r| {
                let z = 3.0 * r[0] - 2.0 * r[1] + if r[2] > 0.5 { 4.0 * (r[3] - 0.5) } else { 0.0 };
                u8::from(rng.gen::<f64>() < sigmoid(z))
            })
            .collect();
        let path = dir.join("data.csv");
        from_rows(&rows, y, None).unwrap().write_csv(&path, "y").unwrap();
        path
    }

    fn config(dir: &Path, out: &str) -> PipelineConfig {
        let mut c = PipelineConfig::new(write_task(dir, 1500), "y");
        c.legacy = LegacySource::Gbdt {
            gbdt: GbdtConfig {
                n_trees: 30,
                ..Default::default()
            },
            features: Some(vec!["x1".into(), "x2".into()]),
        };
        c.regions.k_max = 2;
        c.chain.t_max = 4;
        c.tpe.m = 30;
        c.output_dir = dir.join(out);
        c
    }

    fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let path = e.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(dir).unwrap().display().to_string();
                    out.insert(rel, std::fs::read(&path).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn config_defaults_and_required_fields() {
        let c: PipelineConfig = serde_json::from_str(r#"{"data_path": "d.csv", "target_column": "y"}"#).unwrap();
        assert_eq!(c, PipelineConfig::new("d.csv", "y"));
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"data_path": "d.csv"}"#).is_err());
        let stored = serde_json::to_value(c.resolved()).unwrap();
        assert!(stored.get("output_dir").is_none());
        assert_eq!(stored["chain"]["t_max"], 12);
        assert_eq!(stored["tpe"]["seed"], 42);
    }

    #[test]
    fn pipeline_runs_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), "a");
        let out = run_pipeline(&c).unwrap();
        assert!(!out.regions.is_empty());
        assert_eq!(out.report.final_.n, 300);
        // safety holds whatever the chains found
        if out.aggregate.gate.fallback {
            assert_eq!(out.report.final_.auc, out.report.legacy.auc);
        }
        let mut c2 = c.clone();
        c2.output_dir = dir.path().join("b");
        c2.workers = 1;
        run_pipeline(&c2).unwrap();
        let a = read_dir_bytes(&c.output_dir);
        let b = read_dir_bytes(&c2.output_dir);
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        for (k, v) in &a {
            assert!(v == &b[k], "{k} differs");
        }
    }

    #[test]
    fn stages_reload_from_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), "a");
        run_pipeline(&c).unwrap();
        let bundle = c.output_dir.as_path();
        let before = std::fs::read(bundle.join(files::AGGREGATE)).unwrap();
        let p = prepare(&c).unwrap();
        let frozen = load_legacy(bundle, "aggregate").unwrap();
        let (_, regions) = load_regions(bundle, "aggregate").unwrap();
        let experts = load_experts(bundle, &regions, "aggregate").unwrap();
        stage_aggregate(&p, bundle, &frozen, &experts).unwrap();
        assert_eq!(std::fs::read(bundle.join(files::AGGREGATE)).unwrap(), before);
    }

    #[test]
    fn predict_reproduces_recorded_scores() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), "a");
        run_pipeline(&c).unwrap();
        let out = dir.path().join("pred.csv");
        let n = predict(&c.output_dir, &c.data_path, &out).unwrap();
        assert_eq!(n, 1500);
        let mut recorded = csv::Reader::from_path(c.output_dir.join(files::SCORES)).unwrap();
        let mut scored = csv::Reader::from_path(&out).unwrap();
        for (a, b) in recorded.records().zip(scored.records()) {
            let (a, b) = (a.unwrap(), b.unwrap());
            assert_eq!(&a[0], &b[0]);
            let f = |s: &str| s.parse::<f64>().unwrap();
            assert!((f(&a[2]) - f(&b[1])).abs() <= 1e-12);
            assert!((f(&a[3]) - f(&b[2])).abs() <= 1e-12);
        }
    }

    #[test]
    fn predict_names_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), "a");
        run_pipeline(&c).unwrap();
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "row_id,x1,x2,x4\n0,0.1,0.2,0.3\n").unwrap();
        let err = predict(&c.output_dir, &bad, &dir.path().join("o.csv")).unwrap_err();
        assert_eq!(err.stage, "predict");
        assert!(err.message.contains("x3"), "{err}");
        let err = predict(&dir.path().join("nope"), &bad, &dir.path().join("o.csv")).unwrap_err();
        assert!(err.message.contains("missing bundle component"));
    }

    #[test]
    fn prediction_path_stays_offline() {
        let src = include_str!("predict.rs");
        for word in ["provider", "tpe", "optimize", "reqwest", "chain"] {
            assert!(!src.contains(word), "predict.rs mentions `{word}`");
        }
    }

    #[test]
    fn perfect_legacy_gives_pass_through() {
        let dir = tempfile::tempdir().unwrap();
        // labels are a deterministic function of x1, which the legacy sees
        let rows: Vec<Vec<f64>> = (0..400).map(|i| vec![(i as f64 * 0.61803).fract(), (i as f64 * 0.3).fract()]).collect();
        let y: Vec<u8> = rows.iter().map(|r| u8::from(r[0] > 0.5)).collect();
        let path = dir.path().join("d.csv");
        from_rows(&rows, y, None).unwrap().write_csv(&path, "y").unwrap();
        let mut c = PipelineConfig::new(&path, "y");
        c.output_dir = dir.path().join("out");
        c.regions.min_mean_residual = 0.2;
        let out = run_pipeline(&c).unwrap();
        assert!(out.regions.is_empty());
        assert!(out.aggregate.gate.fallback);
        let d = out.report.final_.deltas.unwrap();
        assert_eq!([d.auc, d.ks, d.accuracy, d.logloss], [0.0; 4]);
    }

    #[test]
    fn stage_errors_are_tagged() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), "a");
        c.target_column = "nope".into();
        assert_eq!(run_pipeline(&c).unwrap_err().stage, "data");
        let mut c = config(dir.path(), "a");
        c.provider = ProviderConfig::Llm(crate::provider::LlmConfig {
            api_key_env: "RESBOOST_UNSET_KEY_FOR_TEST".into(),
            ..Default::default()
        });
        assert_eq!(run_pipeline(&c).unwrap_err().stage, "evolve");
    }
}
