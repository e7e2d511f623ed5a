//! Scenario outputs: a per-property table and a GeoJSON layer for maps.

use std::fs;
use std::path::Path;

use serde_json::json;

use super::scenario::ScenarioOutcome;
use crate::datahub::PropertyRecord;
use crate::error::{Error, Result};

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Per-property scenario table; conversion failures leave empty cells.
pub fn write_scenario_csv(path: &Path, outcome: &ScenarioOutcome) -> Result<()> {
    let mut out = String::from(
        "uprn,eligible,sap_pre,sap_post,delta_sap,ei_pre,ei_post,delta_ei,\
         cost_pre,cost_post,delta_cost,eco2_pre,eco2_post,delta_eco2\n",
    );
    for r in &outcome.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.uprn,
            r.eligible,
            fmt(r.sap_pre),
            fmt(r.sap_post),
            fmt(r.delta_sap),
            fmt(r.ei_pre),
            fmt(r.ei_post),
            fmt(r.delta_ei),
            fmt_opt(r.cost_pre),
            fmt_opt(r.cost_post),
            fmt_opt(r.delta_cost),
            fmt_opt(r.eco2_pre),
            fmt_opt(r.eco2_post),
            fmt_opt(r.delta_eco2),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// FeatureCollection with one polygon per evaluated property. Rings are
/// closed as GeoJSON requires; properties carry the full scenario row, so
/// ineligible properties show up flagged rather than dropped.
pub fn write_scenario_geojson(
    path: &Path,
    records: &[PropertyRecord],
    idxs: &[usize],
    outcome: &ScenarioOutcome,
) -> Result<()> {
    if idxs.len() != outcome.rows.len() {
        return Err(Error::ShapeError {
            op: "write_scenario_geojson".into(),
            detail: format!("{} indices vs {} rows", idxs.len(), outcome.rows.len()),
        });
    }
    let features: Vec<serde_json::Value> = idxs
        .iter()
        .zip(&outcome.rows)
        .map(|(&i, row)| {
            let rec = &records[i];
            let mut ring: Vec<[f64; 2]> = rec.footprint.clone();
            if ring.first() != ring.last() {
                if let Some(&first) = ring.first() {
                    ring.push(first);
                }
            }
            Ok(json!({
                "type": "Feature",
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [ring],
                },
                "properties": serde_json::to_value(row)?,
            }))
        })
        .collect::<Result<_>>()?;
    let doc = json!({
        "type": "FeatureCollection",
        "name": outcome.spec.name.label(),
        "features": features,
    });
    let mut text = serde_json::to_string(&doc)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::scenario::{
        EligibilityFlag, ScenarioAggregates, ScenarioKind, ScenarioRow, ScenarioSpec,
    };
    use crate::trainer::tests_support::toy_records;
    use std::collections::BTreeMap;

    fn outcome_of(rows: Vec<ScenarioRow>) -> ScenarioOutcome {
        let n = rows.len();
        ScenarioOutcome {
            spec: ScenarioSpec {
                name: ScenarioKind::WallInsulation,
                eligibility_flag: EligibilityFlag::NeedsWall,
                text_replacements: BTreeMap::new(),
                categorical_overrides: BTreeMap::new(),
                numeric_overrides: BTreeMap::new(),
                tariff_deflator: 1.0,
            },
            rows,
            exceptions: vec![],
            aggregates: ScenarioAggregates {
                n,
                n_eligible: 1,
                n_conversion_failures: 0,
                total_delta_cost: 0.0,
                total_delta_eco2: 0.0,
                mean_delta_cost: None,
                mean_delta_eco2: None,
                mean_delta_sap: None,
                mean_delta_ei: None,
            },
        }
    }

    fn row(uprn: &str, eligible: bool, with_cost: bool) -> ScenarioRow {
        ScenarioRow {
            uprn: uprn.into(),
            eligible,
            sap_pre: 50.0,
            sap_post: 52.5,
            delta_sap: 2.5,
            ei_pre: 60.0,
            ei_post: 61.0,
            delta_ei: 1.0,
            cost_pre: with_cost.then_some(400.0),
            cost_post: with_cost.then_some(350.0),
            delta_cost: with_cost.then_some(50.0),
            eco2_pre: with_cost.then_some(1200.0),
            eco2_post: with_cost.then_some(1100.0),
            delta_eco2: with_cost.then_some(100.0),
        }
    }

    #[test]
    fn csv_has_empty_cells_for_failed_conversions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        write_scenario_csv(&path, &outcome_of(vec![row("a", true, true), row("b", false, false)]))
            .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("uprn,eligible,sap_pre"));
        assert_eq!(lines[1], "a,true,50,52.5,2.5,60,61,1,400,350,50,1200,1100,100");
        assert_eq!(lines[2], "b,false,50,52.5,2.5,60,61,1,,,,,,");
    }

    #[test]
    fn geojson_closes_rings_and_flags_ineligible_rows() {
        let records = toy_records(3, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.geojson");
        let outcome = outcome_of(vec![
            row(&records[0].uprn, true, true),
            row(&records[1].uprn, false, true),
            row(&records[2].uprn, true, false),
        ]);
        write_scenario_geojson(&path, &records, &[0, 1, 2], &outcome).unwrap();
        let doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(doc["type"], "FeatureCollection");
        assert_eq!(doc["name"], "wall_insulation");
        let features = doc["features"].as_array().unwrap();
        assert_eq!(features.len(), 3);
        for f in features {
            let ring = f["geometry"]["coordinates"][0].as_array().unwrap();
            assert_eq!(ring.first(), ring.last());
            assert_eq!(ring.len(), 5, "4-vertex footprint plus closure");
        }
        assert_eq!(features[0]["properties"]["eligible"], true);
        assert_eq!(features[1]["properties"]["eligible"], false);
        assert_eq!(features[2]["properties"]["cost_pre"], serde_json::Value::Null);
        assert_eq!(features[0]["properties"]["delta_cost"], 50.0);
    }

    #[test]
    fn geojson_rejects_misaligned_rows() {
        let records = toy_records(2, 2);
        let dir = tempfile::tempdir().unwrap();
        let outcome = outcome_of(vec![row("a", true, true)]);
        let err = write_scenario_geojson(&dir.path().join("x.geojson"), &records, &[0, 1], &outcome)
            .unwrap_err();
        assert_eq!(err.kind(), "shape_error");
    }
}
