//! Feature blocks and the cross-sectional score model: four base factors plus
//! generated factors, combined by pooled ridge regression.

use std::collections::BTreeSet;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{evaluate, parse};
use crate::matrix::{is_missing, Matrix, MISSING};
use crate::panel::{cross_sectional_zscore, Panel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("underdetermined fit: {rows} usable rows for {features} features (need at least {})", features + 1)]
    Underdetermined { rows: usize, features: usize },
    #[error("normal equations are singular; use a positive ridge lambda")]
    Singular,
    #[error("feature names do not match the model: expected {expected:?}, got {got:?}")]
    NameMismatch { expected: Vec<String>, got: Vec<String> },
    #[error("invalid feature block: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Named (date x instrument) feature matrices sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    names: Vec<String>,
    matrices: Vec<Matrix>,
}

impl FeatureBlock {
    pub fn new(names: Vec<String>, matrices: Vec<Matrix>) -> Result<Self> {
        if names.len() != matrices.len() {
            return Err(ModelError::Invalid(format!("{} names for {} matrices", names.len(), matrices.len())));
        }
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(ModelError::Invalid("feature names must be unique".into()));
        }
        if let Some(first) = matrices.first() {
            if matrices.iter().any(|m| m.shape() != first.shape()) {
                return Err(ModelError::Invalid("feature matrices differ in shape".into()));
            }
        }
        Ok(FeatureBlock { names, matrices })
    }

    /// Z-scores each raw matrix cross-sectionally.
    pub fn from_raw(names: Vec<String>, raw: &[Matrix]) -> Result<Self> {
        FeatureBlock::new(names, raw.iter().map(cross_sectional_zscore).collect())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.matrices
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.matrices.first().map(Matrix::shape)
    }

    /// Appends a raw feature after z-scoring it.
    pub fn with_raw(&self, name: impl Into<String>, raw: &Matrix) -> Result<Self> {
        let mut names = self.names.clone();
        let mut matrices = self.matrices.clone();
        names.push(name.into());
        matrices.push(cross_sectional_zscore(raw));
        FeatureBlock::new(names, matrices)
    }
}

pub const BASE_FACTORS: [(&str, &str); 4] = [
    ("intraday_return", "close / open - 1"),
    ("daily_return", "close / DELAY(close, 1) - 1"),
    ("rel_volume_20", "volume / TS_MEAN(volume, 20)"),
    ("norm_range", "(high - low) / close"),
];

/// The four price-volume base factors, raw (before z-scoring).
pub fn base_factors_raw(panel: &Panel) -> Vec<Matrix> {
    BASE_FACTORS
        .iter()
        .map(|(_, text)| evaluate(&parse(text).expect("base factor text parses"), panel))
        .collect()
}

pub fn base_factors(panel: &Panel) -> FeatureBlock {
    let names = BASE_FACTORS.iter().map(|(n, _)| n.to_string()).collect();
    FeatureBlock::from_raw(names, &base_factors_raw(panel)).expect("base factors share the panel shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearRidge,
    Passthrough,
}

/// A fitted linear combiner. Passthrough is the single-feature identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub kind: ModelKind,
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub ridge_lambda: f64,
}

impl ScoreModel {
    pub fn passthrough(name: impl Into<String>) -> Self {
        ScoreModel { kind: ModelKind::Passthrough, feature_names: vec![name.into()], weights: vec![1.0], ridge_lambda: 0.0 }
    }

    /// Pooled ridge regression (no intercept) of labels on features over every
    /// (date, instrument) cell in `rows` where all inputs are present.
    pub fn fit(features: &FeatureBlock, labels: &Matrix, rows: Range<usize>, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(ModelError::Invalid(format!("ridge lambda must be >= 0, got {lambda}")));
        }
        let p = features.len();
        if p == 0 {
            return Err(ModelError::Invalid("no features".into()));
        }
        if features.shape() != Some(labels.shape()) {
            return Err(ModelError::Invalid("labels and features differ in shape".into()));
        }
        let mut xtx = DMatrix::<f64>::zeros(p, p);
        let mut xty = DVector::<f64>::zeros(p);
        let mut x = vec![0.0; p];
        let mut usable = 0usize;
        let rows = rows.start..rows.end.min(labels.rows());
        for t in rows {
            'cell: for c in 0..labels.cols() {
                let y = labels.raw(t, c);
                if is_missing(y) {
                    continue;
                }
                for (slot, m) in x.iter_mut().zip(features.matrices()) {
                    let v = m.raw(t, c);
                    if is_missing(v) {
                        continue 'cell;
                    }
                    *slot = v;
                }
                usable += 1;
                for i in 0..p {
                    xty[i] += x[i] * y;
                    for j in 0..p {
                        xtx[(i, j)] += x[i] * x[j];
                    }
                }
            }
        }
        if usable < p + 1 {
            return Err(ModelError::Underdetermined { rows: usable, features: p });
        }
        for i in 0..p {
            xtx[(i, i)] += lambda;
        }
        let w = xtx.lu().solve(&xty).ok_or(ModelError::Singular)?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Singular);
        }
        Ok(ScoreModel {
            kind: ModelKind::LinearRidge,
            feature_names: features.names().to_vec(),
            weights: w.iter().copied().collect(),
            ridge_lambda: lambda,
        })
    }

    /// Linear score per cell of `rows`; cells outside `rows`, or with any
    /// contributing feature missing, are missing.
    pub fn predict(&self, features: &FeatureBlock, rows: Range<usize>) -> Result<Matrix> {
        if features.names() != self.feature_names.as_slice() {
            return Err(ModelError::NameMismatch { expected: self.feature_names.clone(), got: features.names().to_vec() });
        }
        let (n, m) = features.shape().ok_or_else(|| ModelError::Invalid("no features".into()))?;
        let mut out = Matrix::missing(n, m);
        for t in rows.start..rows.end.min(n) {
            for c in 0..m {
                let mut s = 0.0;
                for (w, f) in self.weights.iter().zip(features.matrices()) {
                    let v = f.raw(t, c);
                    if is_missing(v) {
                        s = MISSING;
                        break;
                    }
                    s += w * v;
                }
                out.set(t, c, s);
            }
        }
        Ok(out)
    }

    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }
}
