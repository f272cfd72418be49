use polecast_core::featurize::FeatureRecord;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::train::{pooled_rmse, rmse, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEval {
    pub id: u64,
    pub order: usize,
    pub device_id: usize,
    pub rmse: f64,
    pub base_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_records: usize,
    /// Corrected prediction against the full target, pooled over samples.
    pub rmse: f64,
    /// Base prediction alone against the full target.
    pub base_rmse: f64,
    pub records: Vec<RecordEval>,
}

pub struct Evaluation {
    pub report: EvalReport,
    /// `(base, corrected)` predictions per record.
    pub predictions: Vec<(Vec<f64>, Vec<f64>)>,
}

pub fn evaluate(model: &Model<f32>, records: &[FeatureRecord]) -> Result<Evaluation> {
    let predictions: Vec<(Vec<f64>, Vec<f64>)> =
        records.par_iter().map(|r| model.predict_pair(r)).collect::<Result<_>>()?;
    let per_record = records
        .iter()
        .zip(&predictions)
        .map(|(r, (b, c))| RecordEval {
            id: r.id,
            order: r.order,
            device_id: r.device_id,
            rmse: rmse(c, &r.target.samples),
            base_rmse: rmse(b, &r.target.samples),
        })
        .collect();
    let target = |i: usize| records[i].target.samples.as_slice();
    let report = EvalReport {
        n_records: records.len(),
        rmse: pooled_rmse(predictions.iter().enumerate().map(|(i, (_, c))| (c.as_slice(), target(i)))),
        base_rmse: pooled_rmse(predictions.iter().enumerate().map(|(i, (b, _))| (b.as_slice(), target(i)))),
        records: per_record,
    };
    Ok(Evaluation { report, predictions })
}
