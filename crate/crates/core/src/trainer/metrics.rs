//! Regression metrics on the original score scale, plus subgroup slicing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datahub::{band_accuracy, BandTable, PropertyRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// None when the target has zero variance over the evaluated set.
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub sap: TargetMetrics,
    pub ei: TargetMetrics,
    /// Arithmetic mean of the two MAEs.
    pub mean_mae: f64,
}

fn target_metrics(errs: impl Iterator<Item = (f64, f64)> + Clone) -> TargetMetrics {
    let mut n = 0usize;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut mean = 0.0;
    for (_, t) in errs.clone() {
        n += 1;
        mean += t;
    }
    mean /= n as f64;
    let mut ss_tot = 0.0;
    for (p, t) in errs {
        let e = p - t;
        abs_sum += e.abs();
        sq_sum += e * e;
        ss_tot += (t - mean) * (t - mean);
    }
    TargetMetrics {
        mae: abs_sum / n as f64,
        rmse: (sq_sum / n as f64).sqrt(),
        r2: (ss_tot > 0.0).then(|| 1.0 - sq_sum / ss_tot),
    }
}

/// MAE/RMSE/R2 per target plus Mean_MAE, on de-normalized values.
pub fn regression_metrics(preds: &[[f64; 2]], targets: &[[f64; 2]]) -> Result<RegressionMetrics> {
    if preds.is_empty() {
        return Err(Error::EmptyInput("metrics over empty set".into()));
    }
    if preds.len() != targets.len() {
        return Err(Error::ShapeError {
            op: "regression_metrics".into(),
            detail: format!("{} predictions vs {} targets", preds.len(), targets.len()),
        });
    }
    let col = |c: usize| preds.iter().zip(targets).map(move |(p, t)| (p[c], t[c]));
    let sap = target_metrics(col(0));
    let ei = target_metrics(col(1));
    Ok(RegressionMetrics {
        sap,
        ei,
        mean_mae: 0.5 * (sap.mae + ei.mae),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub group: String,
    pub n: usize,
    /// True when the group is smaller than the reporting threshold.
    pub flagged: bool,
    pub metrics: RegressionMetrics,
    pub band_acc_sap: f64,
    pub band_acc_ei: f64,
}

/// Per-group metrics sliced by one categorical field, in sorted group
/// order, followed by an `__all__` row. The aggregate row's MAEs are the
/// size-weighted means of the group MAEs (summed in row order), so the
/// aggregation identity holds exactly; its other metrics are global.
pub fn subgroup_report(
    records: &[PropertyRecord],
    idxs: &[usize],
    preds: &[[f64; 2]],
    cat_field: usize,
    table: &BandTable,
    min_size: usize,
) -> Result<Vec<SubgroupRow>> {
    if idxs.len() != preds.len() {
        return Err(Error::ShapeError {
            op: "subgroup_report".into(),
            detail: format!("{} indices vs {} predictions", idxs.len(), preds.len()),
        });
    }
    if cat_field >= 5 {
        return Err(Error::InvalidConfig(format!(
            "categorical field index {cat_field} out of range"
        )));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (pos, &i) in idxs.iter().enumerate() {
        groups.entry(records[i].cats[cat_field].as_str()).or_default().push(pos);
    }
    let mut rows = Vec::with_capacity(groups.len() + 1);
    let mut weighted = [0.0f64; 2];
    for (name, positions) in &groups {
        let gp: Vec<[f64; 2]> = positions.iter().map(|&p| preds[p]).collect();
        let gt: Vec<[f64; 2]> = positions
            .iter()
            .map(|&p| {
                let r = &records[idxs[p]];
                [r.sap_score, r.ei_score]
            })
            .collect();
        let metrics = regression_metrics(&gp, &gt)?;
        let sap_p: Vec<f64> = gp.iter().map(|v| v[0]).collect();
        let sap_t: Vec<f64> = gt.iter().map(|v| v[0]).collect();
        let ei_p: Vec<f64> = gp.iter().map(|v| v[1]).collect();
        let ei_t: Vec<f64> = gt.iter().map(|v| v[1]).collect();
        weighted[0] += positions.len() as f64 * metrics.sap.mae;
        weighted[1] += positions.len() as f64 * metrics.ei.mae;
        rows.push(SubgroupRow {
            group: (*name).to_string(),
            n: positions.len(),
            flagged: positions.len() < min_size,
            metrics,
            band_acc_sap: band_accuracy(&sap_p, &sap_t, table)?,
            band_acc_ei: band_accuracy(&ei_p, &ei_t, table)?,
        });
    }
    let all_t: Vec<[f64; 2]> = idxs
        .iter()
        .map(|&i| [records[i].sap_score, records[i].ei_score])
        .collect();
    let global = regression_metrics(preds, &all_t)?;
    let n = idxs.len() as f64;
    let mae_sap = weighted[0] / n;
    let mae_ei = weighted[1] / n;
    let sap_p: Vec<f64> = preds.iter().map(|v| v[0]).collect();
    let sap_t: Vec<f64> = all_t.iter().map(|v| v[0]).collect();
    let ei_p: Vec<f64> = preds.iter().map(|v| v[1]).collect();
    let ei_t: Vec<f64> = all_t.iter().map(|v| v[1]).collect();
    rows.push(SubgroupRow {
        group: "__all__".to_string(),
        n: idxs.len(),
        flagged: false,
        metrics: RegressionMetrics {
            sap: TargetMetrics {
                mae: mae_sap,
                ..global.sap
            },
            ei: TargetMetrics {
                mae: mae_ei,
                ..global.ei
            },
            mean_mae: 0.5 * (mae_sap + mae_ei),
        },
        band_acc_sap: band_accuracy(&sap_p, &sap_t, table)?,
        band_acc_ei: band_accuracy(&ei_p, &ei_t, table)?,
    });
    Ok(rows)
}
