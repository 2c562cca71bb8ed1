//! Per-indicator variable weighting and cumulative-weight subset selection.
//!
//! Each perception indicator is regressed on every encoded survey variable
//! (standardized on the training partition). Variables are then ranked by
//! absolute weight and the shortest prefix whose weight mass reaches `theta`
//! of the total is kept.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{encode_dataset, Dataset, DatasetError, EncodingStats, SurveySchema};
use crate::eval::logistic::{fit_logistic, LogisticConfig};

/// Relative slack when comparing cumulative weight against `theta * total`.
pub const COVERAGE_TOL: f64 = 1e-12;
pub const DEFAULT_THETA: f64 = 0.8;
pub const DEFAULT_REG_STRENGTH: f64 = 1e-3;
/// Indicator values at or above this level count as "high" for the logistic family.
pub const LOGISTIC_HIGH_LEVEL: f64 = 4.0;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("schema declares no perception indicators")]
    NoIndicators,
    #[error("normal equations are singular")]
    SingularFit,
    #[error("{records} records cannot identify {variables} unregularized weights")]
    TooFewRecords { records: usize, variables: usize },
    #[error("theta must lie in (0, 1], got {0}")]
    BadTheta(f64),
    #[error("all weights are zero")]
    AllZeroWeights,
    #[error("elbow detection needs at least 3 variables, got {0}")]
    TooFewVariables(usize),
    #[error("invalid theta mode `{0}`")]
    BadThetaMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorKind {
    ThreatInjury,
    ThreatDeath,
    RiskHome,
    RiskNeighborhood,
}

impl IndicatorKind {
    pub const ALL: [IndicatorKind; 4] = [
        IndicatorKind::ThreatInjury,
        IndicatorKind::ThreatDeath,
        IndicatorKind::RiskHome,
        IndicatorKind::RiskNeighborhood,
    ];

    pub fn is_threat(self) -> bool {
        matches!(
            self,
            IndicatorKind::ThreatInjury | IndicatorKind::ThreatDeath
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IndicatorKind::ThreatInjury => "threat_injury",
            IndicatorKind::ThreatDeath => "threat_death",
            IndicatorKind::RiskHome => "risk_home",
            IndicatorKind::RiskNeighborhood => "risk_neighborhood",
        }
    }
}

impl fmt::Display for IndicatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerceptionIndicator {
    pub kind: IndicatorKind,
    pub source_variable: String,
}

impl PerceptionIndicator {
    pub fn all_from_schema(schema: &SurveySchema) -> Result<Vec<Self>, SelectionError> {
        let ind = schema
            .indicators
            .as_ref()
            .ok_or(SelectionError::NoIndicators)?;
        Ok(IndicatorKind::ALL
            .iter()
            .map(|&kind| PerceptionIndicator {
                kind,
                source_variable: match kind {
                    IndicatorKind::ThreatInjury => ind.threat_injury.clone(),
                    IndicatorKind::ThreatDeath => ind.threat_death.clone(),
                    IndicatorKind::RiskHome => ind.risk_home.clone(),
                    IndicatorKind::RiskNeighborhood => ind.risk_neighborhood.clone(),
                },
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableWeight {
    pub variable: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub indicator: PerceptionIndicator,
    /// One weight per predictor, in schema order.
    pub weights: Vec<VariableWeight>,
    pub intercept: f64,
    pub residual_norm: f64,
}

impl WeightVector {
    pub fn abs_total(&self) -> f64 {
        self.weights.iter().map(|w| w.weight.abs()).sum()
    }

    /// Positions sorted by |w| descending, ties by schema order.
    fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.weights.len()).collect();
        idx.sort_by(|&a, &b| {
            self.weights[b]
                .weight
                .abs()
                .partial_cmp(&self.weights[a].weight.abs())
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSubset {
    pub indicator: PerceptionIndicator,
    pub theta: f64,
    pub coverage: f64,
    pub selected: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionFamily {
    #[default]
    Ridge,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub reg_strength: f64,
    pub family: RegressionFamily,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            reg_strength: DEFAULT_REG_STRENGTH,
            family: RegressionFamily::Ridge,
        }
    }
}

/// How `theta` is chosen for each indicator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaMode {
    Elbow,
    Fixed(f64),
    All,
}

impl FromStr for ThetaMode {
    type Err = SelectionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "elbow" => Ok(ThetaMode::Elbow),
            "all" => Ok(ThetaMode::All),
            other => other
                .parse::<f64>()
                .map_err(|_| SelectionError::BadThetaMode(other.to_string()))
                .and_then(|t| {
                    if t > 0.0 && t <= 1.0 {
                        Ok(ThetaMode::Fixed(t))
                    } else {
                        Err(SelectionError::BadTheta(t))
                    }
                }),
        }
    }
}

impl fmt::Display for ThetaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThetaMode::Elbow => f.write_str("elbow"),
            ThetaMode::All => f.write_str("all"),
            ThetaMode::Fixed(t) => write!(f, "{t}"),
        }
    }
}

impl Serialize for ThetaMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ThetaMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Standardized design matrix: returns (Z, column means, column std devs).
/// Zero-variance columns become all-zero.
pub fn standardize(rows: &[Vec<f64>]) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    let mut means = vec![0.0; p];
    for r in rows {
        for (m, v) in means.iter_mut().zip(r) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    let mut sds = vec![0.0; p];
    for r in rows {
        for j in 0..p {
            sds[j] += (r[j] - means[j]).powi(2);
        }
    }
    sds.iter_mut()
        .for_each(|s| *s = (*s / n.max(1) as f64).sqrt());
    let z = DMatrix::from_fn(n, p, |i, j| {
        if sds[j] > 1e-12 {
            (rows[i][j] - means[j]) / sds[j]
        } else {
            0.0
        }
    });
    (z, means, sds)
}

/// Solves `(Z'Z + λI) w = Z'(y - ȳ)`. Returns (w, ȳ, residual norm).
pub fn ridge_solve(
    z: &DMatrix<f64>,
    y: &[f64],
    reg_strength: f64,
) -> Result<(Vec<f64>, f64, f64), SelectionError> {
    let (n, p) = z.shape();
    if reg_strength == 0.0 && n < p {
        return Err(SelectionError::TooFewRecords {
            records: n,
            variables: p,
        });
    }
    let y_mean = y.iter().sum::<f64>() / n.max(1) as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = z.transpose() * z;
    for j in 0..p {
        gram[(j, j)] += reg_strength;
    }
    let rhs = z.transpose() * &yc;
    let w = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram.lu().solve(&rhs).ok_or(SelectionError::SingularFit)?,
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(SelectionError::SingularFit);
    }
    let resid = (yc - z * &w).norm();
    Ok((w.iter().copied().collect(), y_mean, resid))
}

pub fn fit_indicator_weights(
    train: &Dataset,
    stats: &EncodingStats,
    indicator: &PerceptionIndicator,
    config: &FitConfig,
) -> Result<WeightVector, SelectionError> {
    let encoded = encode_dataset(train, stats)?;
    let target = train
        .schema
        .feature_index(&indicator.source_variable)
        .ok_or_else(|| DatasetError::MissingColumn(indicator.source_variable.clone()))?;
    let names: Vec<String> = stats
        .names
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != target)
        .map(|(_, n)| n.clone())
        .collect();
    let rows: Vec<Vec<f64>> = encoded
        .iter()
        .map(|fv| {
            fv.values
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != target)
                .map(|(_, v)| *v)
                .collect()
        })
        .collect();
    let y: Vec<f64> = encoded.iter().map(|fv| fv.values[target]).collect();
    if rows.is_empty() {
        return Err(SelectionError::TooFewRecords {
            records: 0,
            variables: names.len(),
        });
    }
    let (z, _, _) = standardize(&rows);

    let (w, intercept, residual_norm) = match config.family {
        RegressionFamily::Ridge => ridge_solve(&z, &y, config.reg_strength)?,
        RegressionFamily::Logistic => {
            let zrows: Vec<Vec<f64>> = (0..z.nrows())
                .map(|i| z.row(i).iter().copied().collect())
                .collect();
            let labels: Vec<bool> = y.iter().map(|v| *v >= LOGISTIC_HIGH_LEVEL).collect();
            let cfg = LogisticConfig {
                l2: config.reg_strength,
                standardize: false,
                ..LogisticConfig::default()
            };
            let model = fit_logistic(&zrows, &labels, &cfg);
            let resid = zrows
                .iter()
                .zip(&labels)
                .map(|(r, &l)| (model.probability(r) - if l { 1.0 } else { 0.0 }).powi(2))
                .sum::<f64>()
                .sqrt();
            (model.weights.clone(), model.intercept, resid)
        }
    };
    Ok(WeightVector {
        indicator: indicator.clone(),
        weights: names
            .into_iter()
            .zip(w)
            .map(|(variable, weight)| VariableWeight { variable, weight })
            .collect(),
        intercept,
        residual_norm,
    })
}

pub fn select_variables(
    weights: &WeightVector,
    theta: f64,
) -> Result<VariableSubset, SelectionError> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(SelectionError::BadTheta(theta));
    }
    let total = weights.abs_total();
    if total == 0.0 {
        return Err(SelectionError::AllZeroWeights);
    }
    let ranking = weights.ranking();
    let mut selected = Vec::new();
    let mut cum = 0.0;
    for &i in &ranking {
        let w = weights.weights[i].weight.abs();
        if theta == 1.0 {
            if w == 0.0 {
                break;
            }
        } else if cum >= theta * total - COVERAGE_TOL * total {
            break;
        }
        cum += w;
        selected.push(weights.weights[i].variable.clone());
    }
    Ok(VariableSubset {
        indicator: weights.indicator.clone(),
        theta,
        coverage: cum / total,
        selected,
    })
}

pub const ELBOW_MIN: f64 = 0.5;
pub const ELBOW_MAX: f64 = 0.95;

/// Elbow of the sorted |w| curve: the point farthest from the chord joining the
/// first and last values. Theta is the weight mass strictly before the elbow,
/// clamped to `[ELBOW_MIN, ELBOW_MAX]`; a curve lying on its chord yields
/// [`DEFAULT_THETA`].
pub fn detect_elbow(weights: &WeightVector) -> Result<f64, SelectionError> {
    let m = weights.weights.len();
    if m < 3 {
        return Err(SelectionError::TooFewVariables(m));
    }
    let sorted: Vec<f64> = weights
        .ranking()
        .into_iter()
        .map(|i| weights.weights[i].weight.abs())
        .collect();
    let total: f64 = sorted.iter().sum();
    let (first, last) = (sorted[0], sorted[m - 1]);
    if total == 0.0 || first == 0.0 {
        return Ok(DEFAULT_THETA);
    }
    let slope = (last - first) / (m - 1) as f64;
    // perpendicular distance is proportional to vertical gap for a fixed chord
    let mut best = (0usize, 0.0f64);
    for (i, v) in sorted.iter().enumerate() {
        let gap = (first + slope * i as f64 - v).abs();
        if gap > best.1 {
            best = (i, gap);
        }
    }
    if best.1 <= 1e-9 * first {
        return Ok(DEFAULT_THETA);
    }
    let before: f64 = sorted[..best.0].iter().sum();
    Ok((before / total).clamp(ELBOW_MIN, ELBOW_MAX))
}

pub fn resolve_theta(weights: &WeightVector, mode: ThetaMode) -> Result<f64, SelectionError> {
    match mode {
        ThetaMode::Elbow => detect_elbow(weights),
        ThetaMode::Fixed(t) => Ok(t),
        ThetaMode::All => Ok(1.0),
    }
}

/// Fits all four indicators and selects a subset for each.
pub fn select_all(
    train: &Dataset,
    stats: &EncodingStats,
    config: &FitConfig,
    mode: ThetaMode,
) -> Result<(Vec<WeightVector>, Vec<VariableSubset>), SelectionError> {
    let mut all_w = Vec::new();
    let mut all_s = Vec::new();
    for ind in PerceptionIndicator::all_from_schema(&train.schema)? {
        let w = fit_indicator_weights(train, stats, &ind, config)?;
        let theta = resolve_theta(&w, mode)?;
        all_s.push(select_variables(&w, theta)?);
        all_w.push(w);
    }
    Ok((all_w, all_s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wv(ws: &[f64]) -> WeightVector {
        WeightVector {
            indicator: PerceptionIndicator {
                kind: IndicatorKind::RiskHome,
                source_variable: "y".into(),
            },
            weights: ws
                .iter()
                .enumerate()
                .map(|(i, &w)| VariableWeight {
                    variable: format!("x{i}"),
                    weight: w,
                })
                .collect(),
            intercept: 0.0,
            residual_norm: 0.0,
        }
    }

    #[test]
    fn cumulative_selection() {
        let s = select_variables(&wv(&[0.5, -0.3, 0.1, 0.1]), 0.8).unwrap();
        assert_eq!(s.selected, vec!["x0", "x1"]);
        assert!((s.coverage - 0.8).abs() < 1e-12);
    }

    #[test]
    fn full_theta_takes_nonzero() {
        let s = select_variables(&wv(&[0.0, 0.2, 0.5, 0.0, 0.1]), 1.0).unwrap();
        assert_eq!(s.selected, vec!["x2", "x1", "x4"]);
        assert_eq!(s.coverage, 1.0);
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(
            select_variables(&wv(&[1.0]), 0.0),
            Err(SelectionError::BadTheta(_))
        ));
        assert!(matches!(
            select_variables(&wv(&[1.0]), 1.5),
            Err(SelectionError::BadTheta(_))
        ));
        assert!(matches!(
            select_variables(&wv(&[0.0, 0.0]), 0.5),
            Err(SelectionError::AllZeroWeights)
        ));
        assert!(matches!(
            detect_elbow(&wv(&[0.6, 0.4])),
            Err(SelectionError::TooFewVariables(2))
        ));
    }

    #[test]
    fn ties_follow_schema_order() {
        let s = select_variables(&wv(&[0.25, 0.25, 0.25, 0.25]), 0.5).unwrap();
        assert_eq!(s.selected, vec!["x0", "x1"]);
    }

    #[test]
    fn elbow_values() {
        // chord (0,0.9)-(3,0.02): vertical gaps 0, 0.5567, 0.2833, 0 -> elbow at 1
        let t = detect_elbow(&wv(&[0.9, 0.05, 0.03, 0.02])).unwrap();
        assert!((t - 0.9).abs() < 1e-12);
        assert_eq!(detect_elbow(&wv(&[0.2; 6])).unwrap(), DEFAULT_THETA);
        // evenly spaced values lie on the chord
        assert_eq!(
            detect_elbow(&wv(&[0.4, 0.3, 0.2, 0.1])).unwrap(),
            DEFAULT_THETA
        );
    }

    #[test]
    fn theta_mode_parse() {
        assert_eq!("elbow".parse::<ThetaMode>().unwrap(), ThetaMode::Elbow);
        assert_eq!("all".parse::<ThetaMode>().unwrap(), ThetaMode::All);
        assert_eq!("0.7".parse::<ThetaMode>().unwrap(), ThetaMode::Fixed(0.7));
        assert!("1.7".parse::<ThetaMode>().is_err());
        assert!("knee".parse::<ThetaMode>().is_err());
    }
}
