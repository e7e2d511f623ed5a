use serde::{Deserialize, Serialize};

use super::PropertyRecord;
use crate::error::{Error, Result};

/// Target z-normalization fitted on the training split only, with
/// population (not sample) standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl TargetScaler {
    pub fn fit(records: &[PropertyRecord], train_idxs: &[usize]) -> Result<Self> {
        if train_idxs.is_empty() {
            return Err(Error::EmptyInput("target scaler training split".to_string()));
        }
        let n = train_idxs.len() as f64;
        let mut mean = [0.0; 2];
        for &i in train_idxs {
            mean[0] += records[i].sap_score;
            mean[1] += records[i].ei_score;
        }
        mean[0] /= n;
        mean[1] /= n;
        let mut var = [0.0; 2];
        for &i in train_idxs {
            var[0] += (records[i].sap_score - mean[0]).powi(2);
            var[1] += (records[i].ei_score - mean[1]).powi(2);
        }
        var[0] /= n;
        var[1] /= n;
        let std = [var[0].sqrt(), var[1].sqrt()];
        for (k, &s) in std.iter().enumerate() {
            if s <= 0.0 {
                return Err(Error::DegenerateTarget(format!(
                    "target {k} is constant on the training split"
                )));
            }
        }
        Ok(TargetScaler { mean, std })
    }

    pub fn normalize(&self, sap: f64, ei: f64) -> [f64; 2] {
        [
            (sap - self.mean[0]) / self.std[0],
            (ei - self.mean[1]) / self.std[1],
        ]
    }

    pub fn denormalize(&self, z: [f64; 2]) -> [f64; 2] {
        [
            z[0] * self.std[0] + self.mean[0],
            z[1] * self.std[1] + self.mean[1],
        ]
    }
}
