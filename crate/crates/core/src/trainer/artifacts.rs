//! Flat-file outputs for runs: predictions, metrics, ablation table,
//! confusion matrices, and the subgroup report. All writers are
//! deterministic; identical inputs produce byte-identical files.

use std::path::Path;

use serde::Serialize;

use super::ablation::AblationOutcome;
use super::metrics::SubgroupRow;
use crate::datahub::{BandTable, Partition, PropertyRecord, PARTITION_COUNT};
use crate::error::Result;

/// Shortest f64 text that parses back to the same value.
fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Pretty JSON with a trailing newline.
pub fn write_metrics_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    std::fs::write(path, body)?;
    Ok(())
}

/// Per-property predictions with true and predicted band letters.
pub fn write_predictions_csv(
    path: &Path,
    records: &[PropertyRecord],
    idxs: &[usize],
    preds: &[[f64; 2]],
    table: &BandTable,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "uprn",
        "sap_true",
        "sap_pred",
        "sap_band_true",
        "sap_band_pred",
        "ei_true",
        "ei_pred",
        "ei_band_true",
        "ei_band_pred",
    ])?;
    for (&i, p) in idxs.iter().zip(preds) {
        let r = &records[i];
        let sap_pred = fmt(p[0]);
        let ei_pred = fmt(p[1]);
        let sap_true = fmt(r.sap_score);
        let ei_true = fmt(r.ei_score);
        w.write_record([
            r.uprn.as_str(),
            &sap_true,
            &sap_pred,
            table.band(r.sap_score)?.label(),
            table.band_of_prediction(p[0]).label(),
            &ei_true,
            &ei_pred,
            table.band(r.ei_score)?.label(),
            table.band_of_prediction(p[1]).label(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per modality subset. Failed configurations keep their row with
/// the error kind in `status` and empty metric cells.
pub fn write_ablation_csv(path: &Path, outcomes: &[AblationOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "config",
        "status",
        "n_test",
        "sap_mae",
        "sap_rmse",
        "sap_r2",
        "ei_mae",
        "ei_rmse",
        "ei_r2",
        "mean_mae",
        "band_acc_sap",
        "band_acc_ei",
        "best_epoch",
    ])?;
    for o in outcomes {
        match &o.result {
            Ok((e, _)) => w.write_record([
                o.modalities.label(),
                "ok".into(),
                e.n_test.to_string(),
                fmt(e.metrics.sap.mae),
                fmt(e.metrics.sap.rmse),
                fmt_opt(e.metrics.sap.r2),
                fmt(e.metrics.ei.mae),
                fmt(e.metrics.ei.rmse),
                fmt_opt(e.metrics.ei.r2),
                fmt(e.metrics.mean_mae),
                fmt(e.band_acc_sap),
                fmt(e.band_acc_ei),
                e.best_epoch.to_string(),
            ])?,
            Err(err) => {
                let mut row = vec![o.modalities.label(), err.kind().to_string()];
                row.extend(std::iter::repeat_with(String::new).take(11));
                w.write_record(row)?
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Merged-band confusion counts for both targets, stacked by a leading
/// `target` column. Rows are truth, columns prediction.
pub fn write_confusion_csv(
    path: &Path,
    sap: &[[u64; PARTITION_COUNT]; PARTITION_COUNT],
    ei: &[[u64; PARTITION_COUNT]; PARTITION_COUNT],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let labels: Vec<&str> = (0..PARTITION_COUNT)
        .map(|i| Partition::from_index(i).unwrap().label())
        .collect();
    let mut header = vec!["target", "truth"];
    header.extend(labels.iter().copied());
    w.write_record(&header)?;
    for (name, m) in [("sap", sap), ("ei", ei)] {
        for (t, row) in m.iter().enumerate() {
            let mut rec = vec![name.to_string(), labels[t].to_string()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-group error report; the final `__all__` row aggregates groups by
/// size-weighted mean absolute error.
pub fn write_subgroup_csv(path: &Path, field: &str, rows: &[SubgroupRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "field",
        "group",
        "n",
        "flagged",
        "sap_mae",
        "sap_rmse",
        "sap_r2",
        "ei_mae",
        "ei_rmse",
        "ei_r2",
        "mean_mae",
        "band_acc_sap",
        "band_acc_ei",
    ])?;
    for r in rows {
        w.write_record([
            field.to_string(),
            r.group.clone(),
            r.n.to_string(),
            r.flagged.to_string(),
            fmt(r.metrics.sap.mae),
            fmt(r.metrics.sap.rmse),
            fmt_opt(r.metrics.sap.r2),
            fmt(r.metrics.ei.mae),
            fmt(r.metrics.ei.rmse),
            fmt_opt(r.metrics.ei.r2),
            fmt(r.metrics.mean_mae),
            fmt(r.band_acc_sap),
            fmt(r.band_acc_ei),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::metrics::{RegressionMetrics, TargetMetrics};
    use super::super::run::tests::toy_records;
    use crate::error::Error;
    use crate::fusionnet::{Modality, ModalitySet};

    fn sample_metrics() -> RegressionMetrics {
        RegressionMetrics {
            sap: TargetMetrics {
                mae: 1.5,
                rmse: 2.25,
                r2: Some(0.9375),
            },
            ei: TargetMetrics {
                mae: 0.5,
                rmse: 0.5,
                r2: None,
            },
            mean_mae: 1.0,
        }
    }

    #[test]
    fn predictions_csv_has_bands_and_round_trip_floats() {
        let records = toy_records(3, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("predictions.csv");
        let preds = vec![[91.999999999999986, 20.5], [55.0, 69.0], [1.0, 100.0]];
        write_predictions_csv(&path, &records, &[0, 1, 2], &preds, &BandTable::default())
            .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "uprn,sap_true,sap_pred,sap_band_true,sap_band_pred,ei_true,ei_pred,ei_band_true,ei_band_pred"
        );
        let first = lines.next().unwrap();
        assert!(first.starts_with("u0,"));
        assert!(first.contains(",91.99999999999999,"), "{first}");
        assert!(first.ends_with(",G"));
        let parsed: f64 = first.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(parsed, preds[0][0]);
    }

    #[test]
    fn ablation_csv_keeps_failed_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ablation.csv");
        let outcomes = vec![
            AblationOutcome {
                modalities: ModalitySet::single(Modality::Tabular),
                result: Err(Error::TrainingDiverged("non-finite loss".into())),
            },
            AblationOutcome {
                modalities: ModalitySet::full(),
                result: Err(Error::EmptyInput("train/val split".into())),
            },
        ];
        write_ablation_csv(&path, &outcomes).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "tab,training_diverged,,,,,,,,,,,");
        assert_eq!(lines[2], "tab_text_spatial,empty_input,,,,,,,,,,,");
    }

    #[test]
    fn confusion_csv_layout_is_stacked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("confusion.csv");
        let mut sap = [[0u64; PARTITION_COUNT]; PARTITION_COUNT];
        sap[0][0] = 7;
        sap[4][1] = 2;
        let ei = [[1u64; PARTITION_COUNT]; PARTITION_COUNT];
        write_confusion_csv(&path, &sap, &ei).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "target,truth,AB,C,D,E,FG");
        assert_eq!(lines.len(), 1 + 2 * PARTITION_COUNT);
        assert_eq!(lines[1], "sap,AB,7,0,0,0,0");
        assert_eq!(lines[5], "sap,FG,0,2,0,0,0");
        assert_eq!(lines[6], "ei,AB,1,1,1,1,1");
    }

    #[test]
    fn subgroup_csv_empty_r2_cell() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("subgroup.csv");
        let rows = vec![SubgroupRow {
            group: "Flat".into(),
            n: 4,
            flagged: true,
            metrics: sample_metrics(),
            band_acc_sap: 0.75,
            band_acc_ei: 0.25,
        }];
        write_subgroup_csv(&path, "property_type", &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "property_type,Flat,4,true,1.5,2.25,0.9375,0.5,0.5,,1,0.75,0.25"
        );
    }

    #[test]
    fn metrics_json_is_pretty_with_newline() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.json");
        write_metrics_json(&path, &sample_metrics()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.ends_with("}\n"));
        assert!(text.contains("\n  \"sap\""));
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["ei"]["r2"], serde_json::Value::Null);
    }
}
