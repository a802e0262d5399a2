//! Per-segment feature vectors: the estimated parameters plus summaries of
//! the fit residual.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adles::EstimationResult;
use crate::signal::{Label, Vowel};

/// Number of numeric features per segment.
pub const FEATURE_DIM: usize = 6;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] =
    ["alpha", "beta", "delta", "res_energy", "res_mean_abs", "res_max_abs"];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("estimation result has an empty residual series")]
    EmptyResidual,
    #[error("feature table: {0}")]
    Table(String),
}

/// Where a segment came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMeta {
    pub segment_id: String,
    pub speaker_id: String,
    pub vowel: Vowel,
    pub label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFeatures {
    pub segment_id: String,
    pub speaker_id: String,
    pub vowel: Vowel,
    pub label: Option<Label>,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    #[serde(alias = "residual_energy")]
    pub res_energy: f64,
    #[serde(alias = "residual_mean_abs")]
    pub res_mean_abs: f64,
    #[serde(alias = "residual_max_abs")]
    pub res_max_abs: f64,
    pub converged: bool,
}

impl SegmentFeatures {
    pub fn vector(&self) -> [f64; FEATURE_DIM] {
        [
            self.alpha,
            self.beta,
            self.delta,
            self.res_energy,
            self.res_mean_abs,
            self.res_max_abs,
        ]
    }
}

pub fn featurize(result: &EstimationResult, meta: &SegmentMeta) -> Result<SegmentFeatures, FeatureError> {
    let res = &result.residual;
    if res.values.is_empty() {
        return Err(FeatureError::EmptyResidual);
    }
    Ok(SegmentFeatures {
        segment_id: meta.segment_id.clone(),
        speaker_id: meta.speaker_id.clone(),
        vowel: meta.vowel,
        label: meta.label,
        alpha: result.params.alpha,
        beta: result.params.beta,
        delta: result.params.delta,
        res_energy: res.energy,
        res_mean_abs: res.mean_abs(),
        res_max_abs: res.max_abs(),
        converged: result.converged,
    })
}

/// Column means and population standard deviations of a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "cannot fit a scaler on no rows");
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..dim)
            .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Self { mean, std }
    }

    /// Z-score one row; zero-variance columns map to 0.
    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }
}

pub fn matrix(features: &[SegmentFeatures]) -> Vec<Vec<f64>> {
    features.iter().map(|f| f.vector().to_vec()).collect()
}

/// Fit the scaler on `train` only and apply it to both sets.
pub fn standardize(
    train: &[SegmentFeatures],
    apply_to: &[SegmentFeatures],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Scaler) {
    let train_m = matrix(train);
    let scaler = Scaler::fit(&train_m);
    let train_z = scaler.transform(&train_m);
    let other_z = scaler.transform(&matrix(apply_to));
    (train_z, other_z, scaler)
}

const CSV_HEADER: [&str; 11] = [
    "segment_id",
    "speaker_id",
    "vowel",
    "label",
    "alpha",
    "beta",
    "delta",
    "res_energy",
    "res_mean_abs",
    "res_max_abs",
    "converged",
];

pub fn write_csv<W: Write>(out: W, features: &[SegmentFeatures]) -> Result<(), FeatureError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| FeatureError::Table(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for f in features {
        w.write_record([
            f.segment_id.clone(),
            f.speaker_id.clone(),
            f.vowel.to_string(),
            f.label.map(|l| l.to_string()).unwrap_or_default(),
            f.alpha.to_string(),
            f.beta.to_string(),
            f.delta.to_string(),
            f.res_energy.to_string(),
            f.res_mean_abs.to_string(),
            f.res_max_abs.to_string(),
            f.converged.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| FeatureError::Table(e.to_string()))
}

#[derive(Deserialize)]
struct CsvRow {
    segment_id: String,
    speaker_id: String,
    vowel: String,
    label: String,
    alpha: f64,
    beta: f64,
    delta: f64,
    res_energy: f64,
    res_mean_abs: f64,
    res_max_abs: f64,
    converged: bool,
}

/// Read features from either the CSV table or per-segment JSON lines.
pub fn read_features<R: Read>(mut input: R) -> Result<Vec<SegmentFeatures>, FeatureError> {
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| FeatureError::Table(e.to_string()))?;
    if text.trim_start().starts_with('{') {
        return text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| FeatureError::Table(format!("line {}: {e}", i + 1)))
            })
            .collect();
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    reader
        .deserialize::<CsvRow>()
        .enumerate()
        .map(|(i, row)| {
            let bad = |e: String| FeatureError::Table(format!("row {}: {e}", i + 1));
            let row = row.map_err(|e| bad(e.to_string()))?;
            let label = if row.label.is_empty() {
                None
            } else {
                Some(row.label.parse().map_err(bad)?)
            };
            Ok(SegmentFeatures {
                segment_id: row.segment_id,
                speaker_id: row.speaker_id,
                vowel: row.vowel.parse().map_err(bad)?,
                label,
                alpha: row.alpha,
                beta: row.beta,
                delta: row.delta,
                res_energy: row.res_energy,
                res_mean_abs: row.res_mean_abs,
                res_max_abs: row.res_max_abs,
                converged: row.converged,
            })
        })
        .collect()
}
