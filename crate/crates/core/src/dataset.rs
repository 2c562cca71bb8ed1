//! Survey ingestion: schema validation, numeric encoding and deterministic splits.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema json error: {0}")]
    SchemaJson(#[from] serde_json::Error),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("column `{0}` is not declared in the schema")]
    UnknownColumn(String),
    #[error("row {row}: answer `{value}` is out of range for `{variable}`")]
    OutOfRangeAnswer {
        row: usize,
        variable: String,
        value: String,
    },
    #[error("row {row}: cannot parse decision `{value}`")]
    UnparseableDecision { row: usize, value: String },
    #[error("row {row}: duplicate record id `{id}`")]
    DuplicateRecordId { row: usize, id: String },
    #[error("unknown level `{value}` for categorical variable `{variable}`")]
    UnknownCategoricalLevel { variable: String, value: String },
    #[error("split fractions must be positive and sum to 1: {0:?}")]
    BadFractions(Vec<f64>),
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("record `{record}` has no value for `{variable}`")]
    MissingAnswer { record: String, variable: String },
}

/// Kind of answer a survey question collects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariableKind {
    Binary,
    Ordinal { min: i64, max: i64 },
    Categorical { levels: Vec<String> },
    Count,
    FreeText,
}

impl VariableKind {
    pub fn is_free_text(&self) -> bool {
        matches!(self, VariableKind::FreeText)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariableKind,
    /// Question wording shown to the model; falls back to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
}

impl VariableSpec {
    pub fn prompt_label(&self) -> &str {
        self.question.as_deref().unwrap_or(&self.name)
    }
}

/// Which survey variables carry the four 1-5 perception indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorColumns {
    pub threat_injury: String,
    pub threat_death: String,
    pub risk_home: String,
    pub risk_neighborhood: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveySchema {
    pub event_name: String,
    pub decision_column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
    /// Free-text columns whose contents are situational statements for the prompt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context_columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indicators: Option<IndicatorColumns>,
    /// Socio-demographic and order-awareness variables fed to the pattern classifier.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classifier_extras: Vec<String>,
    pub variables: Vec<VariableSpec>,
}

impl SurveySchema {
    pub fn from_json_str(s: &str) -> Result<Self, DatasetError> {
        let schema: SurveySchema = serde_json::from_str(s)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let mut s = String::new();
        File::open(path)?.read_to_string(&mut s)?;
        Self::from_json_str(&s)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for v in &self.variables {
            if !seen.insert(v.name.as_str()) {
                return Err(DatasetError::InvalidSchema(format!(
                    "duplicate variable `{}`",
                    v.name
                )));
            }
            match &v.kind {
                VariableKind::Ordinal { min, max } if min > max => {
                    return Err(DatasetError::InvalidSchema(format!(
                        "ordinal `{}` has min > max",
                        v.name
                    )))
                }
                VariableKind::Categorical { levels } if levels.is_empty() => {
                    return Err(DatasetError::InvalidSchema(format!(
                        "categorical `{}` has no levels",
                        v.name
                    )))
                }
                _ => {}
            }
        }
        let decision = self.variable(&self.decision_column).ok_or_else(|| {
            DatasetError::InvalidSchema(format!(
                "decision column `{}` is not a variable",
                self.decision_column
            ))
        })?;
        if decision.kind.is_free_text() {
            return Err(DatasetError::InvalidSchema(
                "decision column cannot be free text".into(),
            ));
        }
        if let Some(id) = &self.id_column {
            if seen.contains(id.as_str()) {
                return Err(DatasetError::InvalidSchema(format!(
                    "id column `{id}` must not also be a variable"
                )));
            }
        }
        for c in &self.context_columns {
            match self.variable(c) {
                Some(v) if v.kind.is_free_text() => {}
                _ => {
                    return Err(DatasetError::InvalidSchema(format!(
                        "context column `{c}` must be a free-text variable"
                    )))
                }
            }
        }
        if let Some(ind) = &self.indicators {
            for name in [
                &ind.threat_injury,
                &ind.threat_death,
                &ind.risk_home,
                &ind.risk_neighborhood,
            ] {
                match self.variable(name).map(|v| &v.kind) {
                    Some(VariableKind::Ordinal { min: 1, max: 5 }) => {}
                    _ => {
                        return Err(DatasetError::InvalidSchema(format!(
                            "indicator `{name}` must be an ordinal 1-5 variable"
                        )))
                    }
                }
            }
        }
        for c in &self.classifier_extras {
            match self.variable(c) {
                Some(v) if !v.kind.is_free_text() && v.name != self.decision_column => {}
                _ => {
                    return Err(DatasetError::InvalidSchema(format!(
                        "classifier extra `{c}` must be a non-free-text predictor"
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn variable(&self, name: &str) -> Option<&VariableSpec> {
        self.variables.iter().find(|v| v.name == name)
    }

    /// Variables that enter a [`FeatureVector`], in schema order. The decision
    /// column is the label and never a feature.
    pub fn feature_variables(&self) -> impl Iterator<Item = &VariableSpec> {
        self.variables
            .iter()
            .filter(move |v| !v.kind.is_free_text() && v.name != self.decision_column)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.feature_variables().map(|v| v.name.clone()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_variables().position(|v| v.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DecisionValue {
    Evacuate,
    Stay,
}

impl DecisionValue {
    pub fn parse_answer(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "evacuate" | "evacuated" | "yes" | "y" | "1" | "true" => Some(Self::Evacuate),
            "stay" | "stayed" | "no" | "n" | "0" | "false" => Some(Self::Stay),
            _ => None,
        }
    }

    /// Past-tense word substituted into the reflection prompt.
    pub fn label_word(self) -> &'static str {
        match self {
            Self::Evacuate => "evacuated",
            Self::Stay => "stayed",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Evacuate => "Evacuate",
            Self::Stay => "Stay",
        }
    }
}

impl fmt::Display for DecisionValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub record_id: String,
    /// Raw answers; absent keys are missing answers.
    pub answers: BTreeMap<String, String>,
    pub decision: DecisionValue,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context_notes: Vec<String>,
}

impl SurveyRecord {
    pub fn answer(&self, name: &str) -> Option<&str> {
        self.answers.get(name).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: SurveySchema,
    pub records: Vec<SurveyRecord>,
}

fn parse_binary(s: &str) -> Option<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "yes" | "y" | "true" | "1" => Some(1.0),
        "no" | "n" | "false" | "0" => Some(0.0),
        _ => None,
    }
}

fn parse_count(s: &str) -> Option<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && *v >= 0.0)
}

fn parse_ordinal(s: &str, min: i64, max: i64) -> Option<f64> {
    let v = s.trim().parse::<f64>().ok()?;
    (v.is_finite() && v >= min as f64 && v <= max as f64).then_some(v)
}

pub fn load_dataset(
    path: impl AsRef<Path>,
    schema: &SurveySchema,
) -> Result<Dataset, DatasetError> {
    let file = File::open(path)?;
    read_dataset(file, schema)
}

/// Parses survey CSV from any reader. Row indices in errors are 1-based data rows.
pub fn read_dataset<R: Read>(reader: R, schema: &SurveySchema) -> Result<Dataset, DatasetError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    for v in &schema.variables {
        if !headers.iter().any(|h| h == &v.name) {
            return Err(DatasetError::MissingColumn(v.name.clone()));
        }
    }
    let id_pos = match &schema.id_column {
        Some(id) => Some(
            headers
                .iter()
                .position(|h| h == id)
                .ok_or_else(|| DatasetError::MissingColumn(id.clone()))?,
        ),
        None => None,
    };
    for (i, h) in headers.iter().enumerate() {
        if Some(i) != id_pos && schema.variable(h).is_none() {
            return Err(DatasetError::UnknownColumn(h.clone()));
        }
    }

    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (idx, row) in rdr.records().enumerate() {
        let row = row?;
        let row_no = idx + 1;
        let mut answers = BTreeMap::new();
        let mut decision = None;
        let mut recorded_id = None;
        for (i, cell) in row.iter().enumerate() {
            if Some(i) == id_pos {
                recorded_id = Some(cell.trim().to_string());
                continue;
            }
            let name = &headers[i];
            let spec = schema
                .variable(name)
                .expect("header checked against schema");
            if name == &schema.decision_column {
                decision = Some(DecisionValue::parse_answer(cell).ok_or_else(|| {
                    DatasetError::UnparseableDecision {
                        row: row_no,
                        value: cell.to_string(),
                    }
                })?);
            }
            if cell.trim().is_empty() {
                continue;
            }
            let valid = match &spec.kind {
                VariableKind::Binary => parse_binary(cell).is_some(),
                VariableKind::Ordinal { min, max } => parse_ordinal(cell, *min, *max).is_some(),
                VariableKind::Count => parse_count(cell).is_some(),
                VariableKind::Categorical { .. } | VariableKind::FreeText => true,
            };
            if !valid {
                return Err(DatasetError::OutOfRangeAnswer {
                    row: row_no,
                    variable: name.clone(),
                    value: cell.to_string(),
                });
            }
            let value = if spec.kind.is_free_text() {
                cell.to_string()
            } else {
                cell.trim().to_string()
            };
            answers.insert(name.clone(), value);
        }
        let decision = decision.ok_or_else(|| DatasetError::UnparseableDecision {
            row: row_no,
            value: String::new(),
        })?;
        let record_id = recorded_id
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| format!("row-{row_no}"));
        if !ids.insert(record_id.clone()) {
            return Err(DatasetError::DuplicateRecordId {
                row: row_no,
                id: record_id,
            });
        }
        let context_notes = schema
            .context_columns
            .iter()
            .filter_map(|c| answers.get(c).cloned())
            .collect();
        records.push(SurveyRecord {
            record_id,
            answers,
            decision,
            context_notes,
        });
    }
    Ok(Dataset {
        schema: schema.clone(),
        records,
    })
}

impl Dataset {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = Vec::new();
        if let Some(id) = &self.schema.id_column {
            header.push(id);
        }
        header.extend(self.schema.variables.iter().map(|v| v.name.as_str()));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row: Vec<&str> = Vec::with_capacity(header.len());
            if self.schema.id_column.is_some() {
                row.push(&r.record_id);
            }
            for v in &self.schema.variables {
                row.push(r.answer(&v.name).unwrap_or(""));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn subset(&self, records: Vec<SurveyRecord>) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observation {
    Observed,
    Imputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub mask: Vec<Observation>,
}

/// Per-variable training means used to impute missing answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingStats {
    pub names: Vec<String>,
    pub means: Vec<f64>,
}

fn encode_value(spec: &VariableSpec, raw: &str) -> Result<f64, DatasetError> {
    let bad = || DatasetError::OutOfRangeAnswer {
        row: 0,
        variable: spec.name.clone(),
        value: raw.to_string(),
    };
    match &spec.kind {
        VariableKind::Binary => parse_binary(raw).ok_or_else(bad),
        VariableKind::Ordinal { min, max } => parse_ordinal(raw, *min, *max).ok_or_else(bad),
        VariableKind::Count => parse_count(raw).ok_or_else(bad),
        VariableKind::Categorical { levels } => levels
            .iter()
            .position(|l| l == raw.trim())
            .map(|i| i as f64)
            .ok_or_else(|| DatasetError::UnknownCategoricalLevel {
                variable: spec.name.clone(),
                value: raw.to_string(),
            }),
        VariableKind::FreeText => unreachable!("free text never encoded"),
    }
}

impl EncodingStats {
    /// Computes means over the observed answers of `train`. A variable with no
    /// observations falls back to 0 (or the ordinal minimum).
    pub fn fit(train: &Dataset) -> Result<Self, DatasetError> {
        let mut names = Vec::new();
        let mut means = Vec::new();
        for spec in train.schema.feature_variables() {
            let mut sum = 0.0;
            let mut n = 0usize;
            for r in &train.records {
                if let Some(raw) = r.answer(&spec.name) {
                    sum += encode_value(spec, raw)?;
                    n += 1;
                }
            }
            let fallback = match spec.kind {
                VariableKind::Ordinal { min, .. } => min as f64,
                _ => 0.0,
            };
            names.push(spec.name.clone());
            means.push(if n > 0 { sum / n as f64 } else { fallback });
        }
        Ok(Self { names, means })
    }
}

pub fn encode_record(
    record: &SurveyRecord,
    schema: &SurveySchema,
    stats: &EncodingStats,
) -> Result<FeatureVector, DatasetError> {
    let mut values = Vec::with_capacity(stats.names.len());
    let mut mask = Vec::with_capacity(stats.names.len());
    for (i, spec) in schema.feature_variables().enumerate() {
        debug_assert_eq!(stats.names.get(i), Some(&spec.name));
        match record.answer(&spec.name) {
            Some(raw) => {
                values.push(encode_value(spec, raw)?);
                mask.push(Observation::Observed);
            }
            None => {
                values.push(stats.means[i]);
                mask.push(Observation::Imputed);
            }
        }
    }
    Ok(FeatureVector { values, mask })
}

pub fn encode_dataset(
    dataset: &Dataset,
    stats: &EncodingStats,
) -> Result<Vec<FeatureVector>, DatasetError> {
    dataset
        .records
        .iter()
        .map(|r| encode_record(r, &dataset.schema, stats))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Partitions follow stored record order.
    InOrder,
    /// Records are shuffled with the seed before partitioning.
    Shuffled,
}

/// Partition sizes: `floor(f * n)` for every fraction, remainder to the last.
pub fn partition_sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>, DatasetError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.is_empty()
        || fractions.iter().any(|f| !(f.is_finite() && *f > 0.0))
        || (sum - 1.0).abs() > 1e-9
    {
        return Err(DatasetError::BadFractions(fractions.to_vec()));
    }
    let mut sizes: Vec<usize> = fractions
        .iter()
        .map(|f| (f * n as f64 + 1e-9).floor() as usize)
        .collect();
    let assigned: usize = sizes[..sizes.len() - 1].iter().sum();
    *sizes.last_mut().unwrap() = n.saturating_sub(assigned);
    Ok(sizes)
}

pub fn split_dataset(
    dataset: &Dataset,
    fractions: &[f64],
    seed: u64,
    mode: SplitMode,
) -> Result<Vec<Dataset>, DatasetError> {
    let sizes = partition_sizes(dataset.len(), fractions)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if mode == SplitMode::Shuffled {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for size in sizes {
        let records = order[start..start + size]
            .iter()
            .map(|&i| dataset.records[i].clone())
            .collect();
        out.push(dataset.subset(records));
        start += size;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_records: usize,
    pub evacuation_rate: f64,
    pub event_name: String,
}

pub fn manifest(dataset: &Dataset) -> Result<DatasetManifest, DatasetError> {
    if dataset.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let evacuees = dataset
        .records
        .iter()
        .filter(|r| r.decision == DecisionValue::Evacuate)
        .count();
    Ok(DatasetManifest {
        n_records: dataset.len(),
        evacuation_rate: evacuees as f64 / dataset.len() as f64,
        event_name: dataset.schema.event_name.clone(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn tiny_schema() -> SurveySchema {
        SurveySchema::from_json_str(
            r#"{
              "event_name": "Test",
              "decision_column": "evacuated",
              "id_column": "id",
              "context_columns": ["notes"],
              "variables": [
                {"name": "flames", "kind": "binary", "question": "Did you see flames?"},
                {"name": "risk", "kind": "ordinal", "min": 1, "max": 5},
                {"name": "tenure", "kind": "categorical", "levels": ["<1", "1-5", ">5"]},
                {"name": "adults", "kind": "count"},
                {"name": "notes", "kind": "free_text"},
                {"name": "evacuated", "kind": "binary"}
              ]
            }"#,
        )
        .unwrap()
    }

    fn load(csv: &str) -> Result<Dataset, DatasetError> {
        read_dataset(csv.as_bytes(), &tiny_schema())
    }

    #[test]
    fn header_only_file_is_empty_dataset() {
        let ds = load("id,flames,risk,tenure,adults,notes,evacuated\n").unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn ordinal_out_of_range_is_rejected_with_row() {
        let err = load(
            "id,flames,risk,tenure,adults,notes,evacuated\n\
             a,Yes,3,<1,2,,Yes\n\
             b,No,6,<1,2,,No\n",
        )
        .unwrap_err();
        match err {
            DatasetError::OutOfRangeAnswer { row, variable, .. } => {
                assert_eq!(row, 2);
                assert_eq!(variable, "risk");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_bad_decision() {
        assert!(matches!(
            load("id,flames,risk,tenure,notes,evacuated\n"),
            Err(DatasetError::MissingColumn(c)) if c == "adults"
        ));
        assert!(matches!(
            load("id,flames,risk,tenure,adults,notes,evacuated\na,Yes,3,<1,2,,maybe\n"),
            Err(DatasetError::UnparseableDecision { row: 1, .. })
        ));
    }

    #[test]
    fn encoding_rules() {
        let ds = load(
            "id,flames,risk,tenure,adults,notes,evacuated\n\
             a,Yes,2,<1,1,I'm not in the area ordered to evacuate,Yes\n\
             b,No,4,>5,3,,No\n\
             c,Yes,,1-5,,,No\n",
        )
        .unwrap();
        assert_eq!(
            ds.records[0].context_notes,
            vec!["I'm not in the area ordered to evacuate".to_string()]
        );
        let train = ds.subset(ds.records[..2].to_vec());
        let stats = EncodingStats::fit(&train).unwrap();
        let fv = encode_record(&ds.records[0], &ds.schema, &stats).unwrap();
        assert_eq!(fv.values, vec![1.0, 2.0, 0.0, 1.0]);
        let fv = encode_record(&ds.records[2], &ds.schema, &stats).unwrap();
        // risk missing; training values {2, 4} -> 3.0 imputed
        assert_eq!(fv.values[1], 3.0);
        assert_eq!(fv.mask[1], Observation::Imputed);
        assert_eq!(fv.mask[0], Observation::Observed);
        assert_eq!(fv.values[2], 1.0);
        assert_eq!(fv.values[3], 2.0);
    }

    #[test]
    fn unknown_categorical_level() {
        let ds =
            load("id,flames,risk,tenure,adults,notes,evacuated\na,Yes,2,forever,1,,Yes\n").unwrap();
        let stats = EncodingStats {
            names: ds.schema.feature_names(),
            means: vec![0.0; 4],
        };
        assert!(matches!(
            encode_record(&ds.records[0], &ds.schema, &stats),
            Err(DatasetError::UnknownCategoricalLevel { .. })
        ));
    }

    #[test]
    fn split_sizes() {
        assert_eq!(partition_sizes(10, &[0.8, 0.2]).unwrap(), vec![8, 2]);
        assert_eq!(partition_sizes(334, &[0.7, 0.3]).unwrap(), vec![233, 101]);
        assert_eq!(partition_sizes(100, &[0.29, 0.71]).unwrap(), vec![29, 71]);
        assert!(partition_sizes(10, &[0.5, 0.4]).is_err());
        assert!(partition_sizes(10, &[1.2, -0.2]).is_err());
    }

    #[test]
    fn manifest_rates() {
        let schema = tiny_schema();
        let mk = |n_evac: usize, n: usize| Dataset {
            schema: schema.clone(),
            records: (0..n)
                .map(|i| SurveyRecord {
                    record_id: i.to_string(),
                    answers: BTreeMap::new(),
                    decision: if i < n_evac {
                        DecisionValue::Evacuate
                    } else {
                        DecisionValue::Stay
                    },
                    context_notes: vec![],
                })
                .collect(),
        };
        let m = manifest(&mk(181, 334)).unwrap();
        assert!((m.evacuation_rate * 100.0 - 54.19).abs() < 0.005);
        assert_eq!(manifest(&mk(5, 5)).unwrap().evacuation_rate, 1.0);
        assert!(matches!(
            manifest(&mk(0, 0)),
            Err(DatasetError::EmptyDataset)
        ));
    }
}
