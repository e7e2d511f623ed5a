//! Attribution artifacts on disk. Every file carries the seed and the
//! checkpoint digest it was computed from, so a reader can tell two runs
//! apart without a sidecar manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::occlusion::OcclusionReport;
use super::shapley::ShapleyReport;
use super::spatial::{BoundaryPermutationReport, PermutationImportance};
use super::PointSaliency;
use crate::error::Result;

/// What produced an artifact: the attribution seed and the digest of the
/// model checkpoint it ran against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub checkpoint: String,
}

/// Shortest f64 representation that parses back to the same value.
fn fmt(v: f64) -> String {
    format!("{v}")
}

fn write_rows(path: &Path, header: &str, rows: Vec<String>) -> Result<()> {
    let mut out = String::with_capacity(rows.len() * 64 + header.len() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_shapley_csv(path: &Path, report: &ShapleyReport, prov: &Provenance) -> Result<()> {
    let rows = report
        .features
        .iter()
        .enumerate()
        .map(|(f, feature)| {
            format!(
                "{feature},{},{},{},{},{},{}",
                fmt(report.mean_abs_sap[f]),
                fmt(report.mean_abs_ei[f]),
                report.n_samples,
                report.n_background,
                prov.seed,
                prov.checkpoint
            )
        })
        .collect();
    write_rows(
        path,
        "feature,mean_abs_sap,mean_abs_ei,n_samples,n_background,seed,checkpoint",
        rows,
    )
}

pub fn write_occlusion_csv(path: &Path, report: &OcclusionReport, prov: &Provenance) -> Result<()> {
    let rows = report
        .rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.field,
                r.coverage,
                fmt(r.delta_sap),
                fmt(r.delta_ei),
                report.n,
                prov.seed,
                prov.checkpoint
            )
        })
        .collect();
    write_rows(
        path,
        "field,coverage,delta_sap,delta_ei,n,seed,checkpoint",
        rows,
    )
}

pub fn write_spatial_permutation_csv(
    path: &Path,
    rows: &[PermutationImportance],
    prov: &Provenance,
) -> Result<()> {
    let body = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{},{}",
                r.feature,
                fmt(r.baseline.sap.mae),
                fmt(r.baseline.ei.mae),
                fmt(r.permuted.sap.mae),
                fmt(r.permuted.ei.mae),
                fmt(r.delta_mae_sap),
                fmt(r.delta_mae_ei),
                prov.seed,
                prov.checkpoint
            )
        })
        .collect();
    write_rows(
        path,
        "feature,baseline_mae_sap,baseline_mae_ei,permuted_mae_sap,permuted_mae_ei,delta_mae_sap,delta_mae_ei,seed,checkpoint",
        body,
    )
}

#[derive(Serialize)]
struct BoundaryPermutationArtifact<'a> {
    seed: u64,
    checkpoint: &'a str,
    report: &'a BoundaryPermutationReport,
}

pub fn write_boundary_permutation_json(
    path: &Path,
    report: &BoundaryPermutationReport,
    prov: &Provenance,
) -> Result<()> {
    let doc = BoundaryPermutationArtifact {
        seed: prov.seed,
        checkpoint: &prov.checkpoint,
        report,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn write_saliency_csv(path: &Path, sal: &[PointSaliency], prov: &Provenance) -> Result<()> {
    let mut rows = Vec::new();
    for s in sal {
        for (p, point) in s.points.iter().enumerate() {
            rows.push(format!(
                "{},{},{},{},{},{},{},{}",
                s.uprn,
                p,
                fmt(point[0]),
                fmt(point[1]),
                fmt(s.sap[p]),
                fmt(s.ei[p]),
                prov.seed,
                prov.checkpoint
            ));
        }
    }
    write_rows(
        path,
        "uprn,point_index,x,y,sap_grad,ei_grad,seed,checkpoint",
        rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{RegressionMetrics, TargetMetrics};

    fn metrics(mae: f64) -> RegressionMetrics {
        RegressionMetrics {
            sap: TargetMetrics {
                mae,
                rmse: mae * 1.5,
                r2: Some(0.5),
            },
            ei: TargetMetrics {
                mae: mae + 0.5,
                rmse: mae * 1.6,
                r2: Some(0.25),
            },
            mean_mae: mae + 0.25,
        }
    }

    fn prov() -> Provenance {
        Provenance {
            seed: 17,
            checkpoint: "abc123".into(),
        }
    }

    #[test]
    fn shapley_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shapley.csv");
        let report = ShapleyReport {
            features: vec!["total_floor_area".into(), "main_fuel".into()],
            mean_abs_sap: vec![1.25, 0.5],
            mean_abs_ei: vec![0.75, 0.0625],
            n_samples: 4,
            n_background: 2,
        };
        write_shapley_csv(&path, &report, &prov()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "feature,mean_abs_sap,mean_abs_ei,n_samples,n_background,seed,checkpoint\n\
             total_floor_area,1.25,0.75,4,2,17,abc123\n\
             main_fuel,0.5,0.0625,4,2,17,abc123\n"
        );
    }

    #[test]
    fn occlusion_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("occ.csv");
        let report = OcclusionReport {
            rows: vec![super::super::OcclusionRow {
                field: "walls".into(),
                coverage: 9,
                delta_sap: 0.125,
                delta_ei: 2.5,
            }],
            n: 10,
        };
        write_occlusion_csv(&path, &report, &prov()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "field,coverage,delta_sap,delta_ei,n,seed,checkpoint\nwalls,9,0.125,2.5,10,17,abc123\n"
        );
    }

    #[test]
    fn permutation_artifacts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("perm.csv");
        let rows = vec![PermutationImportance {
            feature: "height".into(),
            baseline: metrics(2.0),
            permuted: metrics(3.0),
            delta_mae_sap: 1.0,
            delta_mae_ei: 1.0,
        }];
        write_spatial_permutation_csv(&csv, &rows, &prov()).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("feature,baseline_mae_sap,"));
        assert!(text.contains("height,2,2.5,3,3.5,1,1,17,abc123"));

        let json = dir.path().join("boundary.json");
        let report = BoundaryPermutationReport {
            n: 12,
            baseline: metrics(2.0),
            permuted: metrics(4.0),
            delta_mae_sap: 2.0,
            delta_mae_ei: 2.0,
            delta_r2_sap: Some(-0.25),
            delta_r2_ei: None,
        };
        write_boundary_permutation_json(&json, &report, &prov()).unwrap();
        let text = std::fs::read_to_string(&json).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["seed"], 17);
        assert_eq!(doc["checkpoint"], "abc123");
        assert_eq!(doc["report"]["n"], 12);
        assert_eq!(doc["report"]["baseline"]["sap"]["mae"], 2.0);
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn saliency_csv_one_row_per_point() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sal.csv");
        let sal = vec![PointSaliency {
            uprn: "u7".into(),
            points: vec![[0.5, -0.5], [1.0, 0.0]],
            sap: vec![0.25, 0.125],
            ei: vec![0.5, 0.0625],
        }];
        write_saliency_csv(&path, &sal, &prov()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "uprn,point_index,x,y,sap_grad,ei_grad,seed,checkpoint\n\
             u7,0,0.5,-0.5,0.25,0.5,17,abc123\n\
             u7,1,1,0,0.125,0.0625,17,abc123\n"
        );
    }
}
