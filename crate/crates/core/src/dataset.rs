//! CSV ingestion, deterministic preprocessing, stratified splitting and the
//! per-feature IV/PSI statistics used as prompt priors.
//!
//! Ingestion produces two things: the [`Dataset`] itself and an
//! [`IngestSchema`] recording how raw columns were turned into features
//! (medians for imputation, category lists for one-hot expansion). The schema
//! is what the prediction path replays on unseen files.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

/// Number of quantile bins used for IV and PSI.
pub const STAT_BINS: usize = 10;
/// Pseudo-count added to every bin's class (or population) count.
pub const STAT_SMOOTHING: f64 = 0.5;

const MISSING_TOKENS: [&str; 6] = ["", "na", "nan", "null", "none", "?"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("target column `{0}` not found in header")]
    MissingTarget(String),
    #[error("target column `{column}` row {row}: value `{value}` is not 0 or 1")]
    BadTarget {
        column: String,
        row: usize,
        value: String,
    },
    #[error("column `{0}` has no parseable values")]
    EmptyColumn(String),
    #[error("input is missing feature column `{0}`")]
    MissingColumn(String),
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("dataset has no rows")]
    NoRows,
    #[error("dataset has no feature columns")]
    NoFeatures,
    #[error("split needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("train fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("information value needs both classes in the training data")]
    SingleClassIv,
    #[error("population stability needs a non-empty validation set")]
    EmptyValidation,
    #[error("feature schemas differ between datasets")]
    SchemaMismatch,
    #[error("row {row}: expected {expected} features, got {got}")]
    RowWidth {
        row: usize,
        expected: usize,
        got: usize,
    },
}

/// Row-major matrix of finite feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_rows * n_cols, "matrix shape mismatch");
        FeatureMatrix {
            n_rows,
            n_cols,
            values,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_cols {
                return Err(DataError::RowWidth {
                    row: i,
                    expected: n_cols,
                    got: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Ok(FeatureMatrix::new(rows.len(), n_cols, values))
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.n_cols.max(1)).take(self.n_rows)
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix::new(idx.len(), self.n_cols, values)
    }
}

/// Immutable labelled table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: FeatureMatrix,
    pub target: Vec<u8>,
    pub feature_names: Arc<[String]>,
    pub feature_descriptions: Option<Arc<[String]>>,
    pub row_ids: Vec<String>,
}

impl Dataset {
    pub fn new(
        x: FeatureMatrix,
        target: Vec<u8>,
        feature_names: Vec<String>,
        row_ids: Vec<String>,
    ) -> Result<Self, DataError> {
        if x.n_rows() == 0 {
            return Err(DataError::NoRows);
        }
        if x.n_cols() == 0 {
            return Err(DataError::NoFeatures);
        }
        assert_eq!(target.len(), x.n_rows());
        assert_eq!(row_ids.len(), x.n_rows());
        assert_eq!(feature_names.len(), x.n_cols());
        let mut seen = BTreeSet::new();
        for name in &feature_names {
            if !seen.insert(name) {
                return Err(DataError::DuplicateColumn(name.clone()));
            }
        }
        debug_assert!(target.iter().all(|&t| t <= 1));
        Ok(Dataset {
            x,
            target,
            feature_names: feature_names.into(),
            feature_descriptions: None,
            row_ids,
        })
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.x.n_rows()
    }

    #[inline]
    pub fn n_features(&self) -> usize {
        self.x.n_cols()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            target: idx.iter().map(|&i| self.target[i]).collect(),
            feature_names: Arc::clone(&self.feature_names),
            feature_descriptions: self.feature_descriptions.clone(),
            row_ids: idx.iter().map(|&i| self.row_ids[i].clone()).collect(),
        }
    }

    pub fn positives(&self) -> usize {
        self.target.iter().filter(|&&t| t == 1).count()
    }

    /// Writes `row_id`, every feature and the target column. Floats use the
    /// shortest round-trip rendering, so reloading reproduces the matrix.
    pub fn write_csv(&self, path: &Path, target_column: &str) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["row_id".to_string()];
        header.extend(self.feature_names.iter().cloned());
        header.push(target_column.to_string());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = Vec::with_capacity(self.n_features() + 2);
            rec.push(self.row_ids[i].clone());
            rec.extend(self.x.row(i).iter().map(|v| format!("{v}")));
            rec.push(self.target[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(())
    }
}

/// How one raw CSV column maps onto features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnSpec {
    Numeric { name: String, median: f64 },
    Categorical { name: String, categories: Vec<String> },
}

impl ColumnSpec {
    fn feature_names(&self) -> Vec<String> {
        match self {
            ColumnSpec::Numeric { name, .. } => vec![name.clone()],
            ColumnSpec::Categorical { name, categories } => {
                categories.iter().map(|c| format!("{name}={c}")).collect()
            }
        }
    }

    fn raw_name(&self) -> &str {
        match self {
            ColumnSpec::Numeric { name, .. } | ColumnSpec::Categorical { name, .. } => name,
        }
    }

    fn push_features(&self, cell: &str, out: &mut Vec<f64>) {
        match self {
            ColumnSpec::Numeric { median, .. } => {
                out.push(parse_number(cell).unwrap_or(*median));
            }
            ColumnSpec::Categorical { categories, .. } => {
                let cell = cell.trim();
                out.extend(
                    categories
                        .iter()
                        .map(|c| if c == cell { 1.0 } else { 0.0 }),
                );
            }
        }
    }
}

/// Replayable record of the preprocessing applied at ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSchema {
    pub target_column: String,
    pub row_id_column: Option<String>,
    pub columns: Vec<ColumnSpec>,
}

/// Rows prepared for scoring: no labels required.
#[derive(Debug, Clone)]
pub struct ScoringInput {
    pub row_ids: Vec<String>,
    pub x: FeatureMatrix,
    pub target: Option<Vec<u8>>,
}

impl IngestSchema {
    pub fn feature_names(&self) -> Vec<String> {
        self.columns.iter().flat_map(ColumnSpec::feature_names).collect()
    }

    /// Applies the recorded preprocessing to a new file. The target column is
    /// optional here; feature columns are not.
    pub fn transform(&self, path: &Path) -> Result<ScoringInput, DataError> {
        let table = RawTable::read(path)?;
        let mut positions = Vec::with_capacity(self.columns.len());
        for spec in &self.columns {
            let pos = table
                .column(spec.raw_name())
                .ok_or_else(|| DataError::MissingColumn(spec.raw_name().to_string()))?;
            positions.push(pos);
        }
        let target = match table.column(&self.target_column) {
            Some(t) => Some(parse_target(&table, t, &self.target_column)?),
            None => None,
        };
        let row_ids = table.row_ids(self.row_id_column.as_deref());
        let width: usize = self.columns.iter().map(|c| c.feature_names().len()).sum();
        let mut values = Vec::with_capacity(table.rows.len() * width);
        for row in &table.rows {
            for (spec, &pos) in self.columns.iter().zip(&positions) {
                spec.push_features(&row[pos], &mut values);
            }
        }
        Ok(ScoringInput {
            row_ids,
            x: FeatureMatrix::new(table.rows.len(), width, values),
            target,
        })
    }
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl RawTable {
    fn read(path: &Path) -> Result<Self, DataError> {
        let file = std::fs::File::open(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut seen = BTreeSet::new();
        for h in &header {
            if !seen.insert(h.as_str()) {
                return Err(DataError::DuplicateColumn(h.clone()));
            }
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(RawTable { header, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn row_ids(&self, row_id_column: Option<&str>) -> Vec<String> {
        match row_id_column.and_then(|c| self.column(c)) {
            Some(pos) => self.rows.iter().map(|r| r[pos].trim().to_string()).collect(),
            None => (0..self.rows.len()).map(|i| i.to_string()).collect(),
        }
    }
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    MISSING_TOKENS.iter().any(|m| t.eq_ignore_ascii_case(m))
}

fn parse_number(cell: &str) -> Option<f64> {
    if is_missing(cell) {
        return None;
    }
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_target(table: &RawTable, pos: usize, name: &str) -> Result<Vec<u8>, DataError> {
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let cell = r[pos].trim();
            match cell.parse::<f64>() {
                Ok(v) if v == 0.0 => Ok(0),
                Ok(v) if v == 1.0 => Ok(1),
                _ => Err(DataError::BadTarget {
                    column: name.to_string(),
                    row: i,
                    value: cell.to_string(),
                }),
            }
        })
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Loads a labelled CSV. Numeric columns with gaps are median-imputed;
/// columns with any non-numeric value are one-hot expanded in lexicographic
/// category order. A column named `row_id`, when present, supplies row ids.
pub fn load_csv(
    path: &Path,
    target_column: &str,
    descriptions: Option<&HashMap<String, String>>,
) -> Result<(Dataset, IngestSchema), DataError> {
    load_csv_with_ids(path, target_column, Some("row_id"), descriptions)
}

pub fn load_csv_with_ids(
    path: &Path,
    target_column: &str,
    row_id_column: Option<&str>,
    descriptions: Option<&HashMap<String, String>>,
) -> Result<(Dataset, IngestSchema), DataError> {
    let table = RawTable::read(path)?;
    let target_pos = table
        .column(target_column)
        .ok_or_else(|| DataError::MissingTarget(target_column.to_string()))?;
    if table.rows.is_empty() {
        return Err(DataError::NoRows);
    }
    let target = parse_target(&table, target_pos, target_column)?;
    let id_pos = row_id_column.and_then(|c| table.column(c));

    let mut columns = Vec::new();
    for (pos, name) in table.header.iter().enumerate() {
        if pos == target_pos || Some(pos) == id_pos {
            continue;
        }
        let cells: Vec<&str> = table.rows.iter().map(|r| r[pos].as_str()).collect();
        let present: Vec<&str> = cells.iter().copied().filter(|c| !is_missing(c)).collect();
        if present.is_empty() {
            return Err(DataError::EmptyColumn(name.clone()));
        }
        let parsed: Vec<Option<f64>> = present.iter().map(|c| c.trim().parse::<f64>().ok()).collect();
        if parsed.iter().all(Option::is_some) {
            let mut finite: Vec<f64> = parsed.into_iter().flatten().filter(|v| v.is_finite()).collect();
            if finite.is_empty() {
                return Err(DataError::EmptyColumn(name.clone()));
            }
            columns.push(ColumnSpec::Numeric {
                name: name.clone(),
                median: median(&mut finite),
            });
        } else {
            let categories: BTreeSet<String> = present.iter().map(|c| c.trim().to_string()).collect();
            columns.push(ColumnSpec::Categorical {
                name: name.clone(),
                categories: categories.into_iter().collect(),
            });
        }
    }
    if columns.is_empty() {
        return Err(DataError::NoFeatures);
    }

    let schema = IngestSchema {
        target_column: target_column.to_string(),
        row_id_column: id_pos.map(|p| table.header[p].clone()),
        columns,
    };
    let input = schema.transform(path)?;
    let mut data = Dataset::new(input.x, target, schema.feature_names(), input.row_ids)?;
    if let Some(desc) = descriptions {
        let expanded: Vec<String> = schema
            .columns
            .iter()
            .flat_map(|spec| {
                let base = desc.get(spec.raw_name()).cloned().unwrap_or_default();
                spec.feature_names().into_iter().map(move |f| match spec {
                    ColumnSpec::Categorical { name, .. } if !base.is_empty() => {
                        format!("{base} ({})", &f[name.len() + 1..])
                    }
                    _ => base.clone(),
                })
            })
            .collect();
        data.feature_descriptions = Some(expanded.into());
    }
    Ok((data, schema))
}

/// Seeded train/validation split. Stratified by target whenever both classes
/// have at least two members. Returned rows keep their original order.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let (train_idx, val_idx) = split_indices(&data.target, train_fraction, seed)?;
    Ok((data.subset(&train_idx), data.subset(&val_idx)))
}

/// Index-level split used by [`split`] and by the gate's inner fold.
pub fn split_indices(
    target: &[u8],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    let n = target.len();
    if n < 2 {
        return Err(DataError::TooFewRows(n));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::BadFraction(train_fraction));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let classes: [Vec<usize>; 2] = [
        (0..n).filter(|&i| target[i] == 0).collect(),
        (0..n).filter(|&i| target[i] == 1).collect(),
    ];
    let mut train = Vec::with_capacity(n_train);
    if classes.iter().all(|c| c.len() >= 2) {
        // largest-remainder allocation of the train quota across classes
        let ideal: Vec<f64> = classes
            .iter()
            .map(|c| n_train as f64 * c.len() as f64 / n as f64)
            .collect();
        let mut quota: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
        let mut order = [0usize, 1];
        order.sort_by(|&a, &b| {
            let fa = ideal[a] - ideal[a].floor();
            let fb = ideal[b] - ideal[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let mut missing = n_train - quota.iter().sum::<usize>();
        for &k in order.iter().cycle().take(4) {
            if missing == 0 {
                break;
            }
            if quota[k] < classes[k].len() {
                quota[k] += 1;
                missing -= 1;
            }
        }
        for (k, members) in classes.iter().enumerate() {
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            train.extend_from_slice(&shuffled[..quota[k]]);
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        train.extend_from_slice(&all[..n_train]);
    }
    train.sort_unstable();
    let in_train: BTreeSet<usize> = train.iter().copied().collect();
    let val = (0..n).filter(|i| !in_train.contains(i)).collect();
    Ok((train, val))
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    if lo == hi || w == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + w * (sorted[hi] - sorted[lo])
    }
}

/// `IV = sum_b (g_b - b_b) ln(g_b / b_b)` over smoothed class shares.
pub fn information_value(events: &[f64], non_events: &[f64], smoothing: f64) -> f64 {
    let ge: f64 = events.iter().map(|e| e + smoothing).sum();
    let gn: f64 = non_events.iter().map(|e| e + smoothing).sum();
    events
        .iter()
        .zip(non_events)
        .map(|(e, ne)| {
            let g = (e + smoothing) / ge;
            let b = (ne + smoothing) / gn;
            (g - b) * (g / b).ln()
        })
        .sum()
}

/// `PSI = sum_b (p_b - q_b) ln(p_b / q_b)` over smoothed population shares.
pub fn population_stability(expected: &[f64], actual: &[f64], smoothing: f64) -> f64 {
    information_value(expected, actual, smoothing)
}

/// Bin index under the `value <= edge` convention.
#[inline]
pub fn bin_of(edges: &[f64], value: f64) -> usize {
    edges.partition_point(|&e| e < value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// 10th..90th percentiles of the training values.
    pub deciles: Vec<f64>,
    pub iv: f64,
    pub psi: f64,
}

impl FeatureSummary {
    pub fn interdecile_range(&self) -> f64 {
        self.deciles[self.deciles.len() - 1] - self.deciles[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub features: Vec<FeatureSummary>,
}

impl FeatureStats {
    pub fn get(&self, name: &str) -> Option<&FeatureSummary> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Feature indices ordered by IV descending, ties by index.
    pub fn ranked_by_iv(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.features.len()).collect();
        idx.sort_by(|&a, &b| {
            self.features[b]
                .iv
                .total_cmp(&self.features[a].iv)
                .then(a.cmp(&b))
        });
        idx
    }
}

/// Per-feature summaries plus IV (train) and PSI (train vs validation) over
/// ten train-quantile bins with 0.5 pseudo-counts.
pub fn feature_stats(train: &Dataset, val: &Dataset) -> Result<FeatureStats, DataError> {
    if train.feature_names != val.feature_names {
        return Err(DataError::SchemaMismatch);
    }
    let pos = train.positives();
    if pos == 0 || pos == train.n_rows() {
        return Err(DataError::SingleClassIv);
    }
    if val.n_rows() == 0 {
        return Err(DataError::EmptyValidation);
    }
    let features = (0..train.n_features())
        .map(|j| {
            let column = train.x.column(j);
            let mut sorted = column.clone();
            sorted.sort_by(f64::total_cmp);
            let deciles: Vec<f64> = (1..STAT_BINS)
                .map(|k| quantile_sorted(&sorted, k as f64 / STAT_BINS as f64))
                .collect();
            let mut edges = deciles.clone();
            edges.dedup();
            let n_bins = edges.len() + 1;

            let mut events = vec![0.0; n_bins];
            let mut non_events = vec![0.0; n_bins];
            for (v, &t) in column.iter().zip(&train.target) {
                let b = bin_of(&edges, *v);
                if t == 1 {
                    events[b] += 1.0;
                } else {
                    non_events[b] += 1.0;
                }
            }
            let train_counts: Vec<f64> = events.iter().zip(&non_events).map(|(a, b)| a + b).collect();
            let mut val_counts = vec![0.0; n_bins];
            for i in 0..val.n_rows() {
                val_counts[bin_of(&edges, val.x.get(i, j))] += 1.0;
            }
            FeatureSummary {
                name: train.feature_names[j].clone(),
                min: sorted[0],
                max: sorted[sorted.len() - 1],
                mean: column.iter().sum::<f64>() / column.len() as f64,
                deciles,
                iv: information_value(&events, &non_events, STAT_SMOOTHING),
                psi: population_stability(&train_counts, &val_counts, STAT_SMOOTHING),
            }
        })
        .collect();
    Ok(FeatureStats { features })
}

/// Convenience for tests and synthetic tasks: a dataset from in-memory rows
/// with ids `0..n` and generated names `x1..xd` when `names` is `None`.
pub fn from_rows(
    rows: &[Vec<f64>],
    target: Vec<u8>,
    names: Option<Vec<String>>,
) -> Result<Dataset, DataError> {
    let x = FeatureMatrix::from_rows(rows)?;
    let names = names.unwrap_or_else(|| (1..=x.n_cols()).map(|j| format!("x{j}")).collect());
    let ids = (0..x.n_rows()).map(|i| i.to_string()).collect();
    Dataset::new(x, target, names, ids)
}

/// Counts of each target class, keyed by label.
pub fn class_balance(target: &[u8]) -> BTreeMap<u8, usize> {
    let mut m = BTreeMap::new();
    for &t in target {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_small_numeric_csv() {
        let f = write_tmp("a,y\n0.5,0\n1.5,1\n2.5,1\n");
        let (d, _) = load_csv(f.path(), "y", None).unwrap();
        assert_eq!((d.n_rows(), d.n_features()), (3, 1));
        assert_eq!(d.target, vec![0, 1, 1]);
        assert_eq!(d.row_ids, vec!["0", "1", "2"]);
    }

    #[test]
    fn imputes_missing_with_median() {
        let f = write_tmp("a,y\n1.0,0\n3.0,1\n,1\n");
        let (d, schema) = load_csv(f.path(), "y", None).unwrap();
        assert_eq!(d.x.column(0), vec![1.0, 3.0, 2.0]);
        assert_eq!(
            schema.columns[0],
            ColumnSpec::Numeric {
                name: "a".into(),
                median: 2.0
            }
        );
    }

    #[test]
    fn one_hot_is_lexicographic() {
        let f = write_tmp("c,y\nb,0\na,1\n");
        let (d, _) = load_csv(f.path(), "y", None).unwrap();
        assert_eq!(&d.feature_names[..], &["c=a".to_string(), "c=b".to_string()]);
        assert_eq!(d.x.row(0), &[0.0, 1.0]);
        assert_eq!(d.x.row(1), &[1.0, 0.0]);
    }

    #[test]
    fn ingestion_errors() {
        let f = write_tmp("a,y\n1,0\n");
        assert!(matches!(load_csv(f.path(), "label", None), Err(DataError::MissingTarget(_))));
        let f = write_tmp("a,y\n1,0\n2,2\n");
        assert!(matches!(load_csv(f.path(), "y", None), Err(DataError::BadTarget { .. })));
        let f = write_tmp("a,b,y\n1,,0\n2,NA,1\n");
        assert!(matches!(load_csv(f.path(), "y", None), Err(DataError::EmptyColumn(c)) if c == "b"));
        assert!(matches!(
            load_csv(Path::new("/nonexistent/file.csv"), "y", None),
            Err(DataError::Io { .. })
        ));
    }

    #[test]
    fn row_id_column_and_descriptions() {
        let f = write_tmp("row_id,c,a,y\nr1,u,1,0\nr2,v,2,1\n");
        let desc: HashMap<String, String> =
            [("c".to_string(), "colour".to_string())].into_iter().collect();
        let (d, schema) = load_csv(f.path(), "y", Some(&desc)).unwrap();
        assert_eq!(d.row_ids, vec!["r1", "r2"]);
        assert_eq!(schema.row_id_column.as_deref(), Some("row_id"));
        let descs = d.feature_descriptions.unwrap();
        assert_eq!(descs[0], "colour (u)");
        assert_eq!(descs[2], "");
    }

    #[test]
    fn load_write_load_is_identity() {
        let f = write_tmp("c,a,y\nb,0.1,0\na,,1\nb,0.30000000000000004,1\n");
        let (d, _) = load_csv(f.path(), "y", None).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        d.write_csv(out.path(), "y").unwrap();
        let (again, _) = load_csv(out.path(), "y", None).unwrap();
        assert_eq!(again.x, d.x);
        assert_eq!(again.target, d.target);
        assert_eq!(again.feature_names, d.feature_names);
    }

    #[test]
    fn transform_requires_feature_columns() {
        let f = write_tmp("a,b,y\n1,2,0\n3,4,1\n");
        let (_, schema) = load_csv(f.path(), "y", None).unwrap();
        let g = write_tmp("a,y\n1,0\n");
        assert!(matches!(schema.transform(g.path()), Err(DataError::MissingColumn(c)) if c == "b"));
        let h = write_tmp("b,a\n7,8\n");
        let input = schema.transform(h.path()).unwrap();
        assert_eq!(input.x.row(0), &[8.0, 7.0]);
        assert!(input.target.is_none());
    }

    fn toy(n: usize, pos_every: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let target = (0..n).map(|i| u8::from(i % pos_every == 0)).collect();
        from_rows(&rows, target, None).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = toy(10, 2);
        let (a, b) = split(&d, 0.8, 1).unwrap();
        assert_eq!((a.n_rows(), b.n_rows()), (8, 2));
        let (a2, _) = split(&d, 0.8, 1).unwrap();
        assert_eq!(a.row_ids, a2.row_ids);
        assert!(split(&toy(1, 1), 0.5, 0).is_err());
        assert!(split(&d, 1.0, 0).is_err());
        assert!(split(&d, 0.0, 0).is_err());
    }

    #[test]
    fn split_is_stratified() {
        let d = toy(100, 2);
        let (train, val) = split(&d, 0.8, 3).unwrap();
        assert_eq!(train.positives(), 40);
        assert_eq!(train.n_rows() - train.positives(), 40);
        assert_eq!(val.positives(), 10);
    }

    #[test]
    fn split_is_a_partition_for_many_seeds() {
        let d = toy(37, 3);
        for seed in 0..50 {
            let (a, b) = split(&d, 0.7, seed).unwrap();
            let mut ids: Vec<&String> = a.row_ids.iter().chain(&b.row_ids).collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 37);
            assert_eq!(a.n_rows(), 26);
        }
    }

    #[test]
    fn iv_two_bin_hand_case() {
        // shares (0.8, 0.2) for events and (0.2, 0.8) for non-events
        let iv = information_value(&[8.0, 2.0], &[2.0, 8.0], 0.0);
        assert_abs_diff_eq!(iv, 1.2 * 4f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(iv, 1.663_553_233_343_869_6, epsilon = 1e-9);
        let psi = population_stability(&[30.0, 70.0], &[60.0, 40.0], 0.0);
        let expected = (0.3 - 0.6) * (0.3f64 / 0.6).ln() + (0.7 - 0.4) * (0.7f64 / 0.4).ln();
        assert_abs_diff_eq!(psi, expected, epsilon = 1e-9);
    }

    #[test]
    fn psi_zero_for_identical_samples() {
        let d = toy(200, 3);
        let stats = feature_stats(&d, &d).unwrap();
        assert!(stats.features[0].psi.abs() <= 1e-12);
        assert!(stats.features[0].iv >= 0.0);
        assert_eq!(stats.features[0].deciles.len(), 9);
    }

    #[test]
    fn iv_vanishes_for_independent_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen::<f64>()]).collect();
        let target = (0..n).map(|_| u8::from(rng.gen_bool(0.3))).collect();
        let d = from_rows(&rows, target, None).unwrap();
        let stats = feature_stats(&d, &d).unwrap();
        assert!(stats.features[0].iv <= 0.01, "iv = {}", stats.features[0].iv);
    }

    #[test]
    fn iv_and_psi_invariant_under_monotone_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 800;
        let base: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let target: Vec<u8> = base.iter().map(|v| u8::from(rng.gen::<f64>() < 0.5 + 0.2 * v.tanh())).collect();
        let mk = |f: &dyn Fn(f64) -> f64| {
            let rows: Vec<Vec<f64>> = base.iter().map(|&v| vec![f(v)]).collect();
            let d = from_rows(&rows, target.clone(), None).unwrap();
            let (tr, va) = split(&d, 0.6, 4).unwrap();
            feature_stats(&tr, &va).unwrap().features[0].clone()
        };
        let plain = mk(&|v| v);
        let exp = mk(&|v| v.exp());
        let affine = mk(&|v| 3.0 * v + 1.0);
        assert_abs_diff_eq!(plain.iv, exp.iv, epsilon = 1e-12);
        assert_abs_diff_eq!(plain.psi, exp.psi, epsilon = 1e-12);
        assert_abs_diff_eq!(plain.iv, affine.iv, epsilon = 1e-12);
        assert_abs_diff_eq!(plain.psi, affine.psi, epsilon = 1e-12);
    }

    #[test]
    fn stats_errors() {
        let one_class = from_rows(&[vec![1.0], vec![2.0]], vec![1, 1], None).unwrap();
        assert!(matches!(feature_stats(&one_class, &one_class), Err(DataError::SingleClassIv)));
    }
}
