//! Source parsing and three-way linkage.
//!
//! Policy: structurally broken rows are skipped and counted, never silently
//! dropped; duplicate keys within one source are hard errors; records that
//! survive parsing but cannot be linked to geometry or to at least one text
//! field are excluded and counted.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PropertyRecord, TEXT_FIELDS};
use crate::error::{Error, Result};
use crate::geometry::{
    build_spatial_features, footprint_area, ring_self_intersects, FootprintPolygon,
};

/// Expected properties.csv header, in order.
pub const PROPERTIES_HEADER: [&str; 15] = [
    "uprn",
    "construction_age_band",
    "property_type",
    "built_form",
    "energy_tariff",
    "main_fuel",
    "total_floor_area",
    "number_habitable_rooms",
    "number_heated_rooms",
    "photo_supply",
    "sap_score",
    "ei_score",
    "needs_wall",
    "needs_roof",
    "needs_glazing",
];

/// One parsed properties.csv row.
#[derive(Debug, Clone)]
pub struct EpcRow {
    pub uprn: String,
    pub cats: [String; 5],
    pub nums: [f64; 4],
    pub sap_score: f64,
    pub ei_score: f64,
    pub needs_wall: bool,
    pub needs_roof: bool,
    pub needs_glazing: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    /// Boundary sequence length fed to the geometry pipeline.
    pub boundary_len: usize,
    /// Expected embedding width.
    pub text_dim: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            boundary_len: crate::geometry::BOUNDARY_LEN,
            text_dim: 768,
        }
    }
}

/// Counts from one ingest run. Everything that was dropped or flagged shows
/// up here; linked_records is what the rest of the pipeline sees.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub properties_rows: usize,
    pub malformed_properties: usize,
    pub out_of_range_targets: usize,
    pub boundary_rows: usize,
    pub malformed_boundaries: usize,
    pub degenerate_geometry: usize,
    pub self_intersecting: usize,
    pub multi_polygon_uprns: usize,
    pub embedding_rows: usize,
    pub malformed_embeddings: usize,
    pub unmatched_geometry: usize,
    pub missing_text: usize,
    pub missing_numeric: [usize; 4],
    pub linked_records: usize,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

/// Optional numeric cell: empty means missing (NaN).
fn parse_num_cell(s: &str) -> Option<f64> {
    let t = s.trim();
    if t.is_empty() {
        return Some(f64::NAN);
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads and validates properties.csv. Unparseable rows are skipped and
/// counted; duplicate uprns abort.
pub fn read_properties_csv(path: &Path, report: &mut IngestReport) -> Result<Vec<EpcRow>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let header = reader.headers()?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got != PROPERTIES_HEADER {
        return Err(Error::ParseError {
            source_name: path.display().to_string(),
            line: 1,
            detail: format!(
                "unexpected header {:?}; expected {:?}",
                got, PROPERTIES_HEADER
            ),
        });
    }
    let mut rows = Vec::new();
    let mut seen: BTreeMap<String, ()> = BTreeMap::new();
    for (i, result) in reader.records().enumerate() {
        report.properties_rows += 1;
        let record = match result {
            Ok(r) => r,
            Err(_) => {
                report.malformed_properties += 1;
                continue;
            }
        };
        if record.len() != PROPERTIES_HEADER.len() {
            report.malformed_properties += 1;
            continue;
        }
        let uprn = record[0].trim().to_string();
        if uprn.is_empty() {
            report.malformed_properties += 1;
            continue;
        }
        if seen.insert(uprn.clone(), ()).is_some() {
            return Err(Error::DuplicateKey {
                key: uprn,
                source_name: path.display().to_string(),
            });
        }
        let cats = [
            record[1].trim().to_string(),
            record[2].trim().to_string(),
            record[3].trim().to_string(),
            record[4].trim().to_string(),
            record[5].trim().to_string(),
        ];
        let mut nums = [0.0; 4];
        let mut ok = true;
        for c in 0..4 {
            match parse_num_cell(&record[6 + c]) {
                Some(v) => nums[c] = v,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        let sap = record[10].trim().parse::<f64>().ok();
        let ei = record[11].trim().parse::<f64>().ok();
        let needs_wall = parse_bool(&record[12]);
        let needs_roof = parse_bool(&record[13]);
        let needs_glazing = parse_bool(&record[14]);
        let (sap, ei, needs_wall, needs_roof, needs_glazing) =
            match (sap, ei, needs_wall, needs_roof, needs_glazing) {
                (Some(a), Some(b), Some(c2), Some(d), Some(e)) if ok => (a, b, c2, d, e),
                _ => {
                    report.malformed_properties += 1;
                    continue;
                }
            };
        if !(1.0..=100.0).contains(&sap) || !(1.0..=100.0).contains(&ei) {
            report.out_of_range_targets += 1;
            continue;
        }
        let _ = i;
        rows.push(EpcRow {
            uprn,
            cats,
            nums,
            sap_score: sap,
            ei_score: ei,
            needs_wall,
            needs_roof,
            needs_glazing,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(path.display().to_string()));
    }
    Ok(rows)
}

#[derive(Debug, Deserialize)]
struct BoundaryLine {
    uprn: String,
    points: Vec<[f64; 2]>,
    #[serde(default)]
    holes: Vec<Vec<[f64; 2]>>,
    height: f64,
}

/// Reads boundaries.jsonl. A uprn may map to several polygons; all valid
/// ones are returned and the linker keeps the largest.
pub fn read_boundaries_jsonl(
    path: &Path,
    report: &mut IngestReport,
) -> Result<BTreeMap<String, Vec<FootprintPolygon>>> {
    let file = std::fs::File::open(path)?;
    let mut out: BTreeMap<String, Vec<FootprintPolygon>> = BTreeMap::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.boundary_rows += 1;
        let parsed: BoundaryLine = match serde_json::from_str(&line) {
            Ok(p) => p,
            Err(_) => {
                report.malformed_boundaries += 1;
                continue;
            }
        };
        match FootprintPolygon::new(parsed.uprn.clone(), parsed.points, parsed.holes, parsed.height)
        {
            Ok(poly) => {
                if footprint_area(&poly).is_err() {
                    report.degenerate_geometry += 1;
                    continue;
                }
                if ring_self_intersects(&poly.points) {
                    report.self_intersecting += 1;
                }
                out.entry(parsed.uprn).or_default().push(poly);
            }
            Err(_) => {
                report.degenerate_geometry += 1;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct TextLine {
    uprn: String,
    field: String,
    vector: Vec<f64>,
}

type TextMap = BTreeMap<String, Vec<Option<Vec<f64>>>>;

/// Reads text_embeddings.jsonl into per-uprn field slots. Unknown field
/// names and wrong widths are counted as malformed; a repeated
/// (uprn, field) pair is a hard error.
pub fn read_text_embeddings_jsonl(
    path: &Path,
    text_dim: usize,
    report: &mut IngestReport,
) -> Result<TextMap> {
    let file = std::fs::File::open(path)?;
    let mut out: TextMap = BTreeMap::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.embedding_rows += 1;
        let parsed: TextLine = match serde_json::from_str(&line) {
            Ok(p) => p,
            Err(_) => {
                report.malformed_embeddings += 1;
                continue;
            }
        };
        let Some(field_idx) = super::text_field_index(&parsed.field) else {
            report.malformed_embeddings += 1;
            continue;
        };
        if parsed.vector.len() != text_dim || parsed.vector.iter().any(|v| !v.is_finite()) {
            report.malformed_embeddings += 1;
            continue;
        }
        let slots = out
            .entry(parsed.uprn.clone())
            .or_insert_with(|| vec![None; TEXT_FIELDS.len()]);
        if slots[field_idx].is_some() {
            return Err(Error::DuplicateKey {
                key: format!("{}/{}", parsed.uprn, parsed.field),
                source_name: path.display().to_string(),
            });
        }
        slots[field_idx] = Some(parsed.vector);
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct KeyedVector {
    #[serde(alias = "field", alias = "key")]
    key: String,
    vector: Vec<f64>,
}

/// Reads a {key|field, vector} JSONL map (mask and replacement embeddings).
pub fn read_embedding_map_jsonl(path: &Path, text_dim: usize) -> Result<BTreeMap<String, Vec<f64>>> {
    let file = std::fs::File::open(path)?;
    let mut out = BTreeMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: KeyedVector = serde_json::from_str(&line).map_err(|e| Error::ParseError {
            source_name: path.display().to_string(),
            line: lineno + 1,
            detail: e.to_string(),
        })?;
        if parsed.vector.len() != text_dim {
            return Err(Error::ParseError {
                source_name: path.display().to_string(),
                line: lineno + 1,
                detail: format!(
                    "vector width {} does not match text dim {}",
                    parsed.vector.len(),
                    text_dim
                ),
            });
        }
        if out.insert(parsed.key.clone(), parsed.vector).is_some() {
            return Err(Error::DuplicateKey {
                key: parsed.key,
                source_name: path.display().to_string(),
            });
        }
    }
    Ok(out)
}

/// Joins the three sources. EPC rows without usable geometry or without any
/// text field are excluded and counted. When several polygons share a uprn,
/// the largest footprint wins.
pub fn link_records(
    epc_rows: Vec<EpcRow>,
    mut boundaries: BTreeMap<String, Vec<FootprintPolygon>>,
    mut text: TextMap,
    opts: IngestOptions,
    report: &mut IngestReport,
) -> Result<Vec<PropertyRecord>> {
    let mut records = Vec::with_capacity(epc_rows.len());
    for row in epc_rows {
        let Some(polys) = boundaries.remove(&row.uprn) else {
            report.unmatched_geometry += 1;
            continue;
        };
        if polys.len() > 1 {
            report.multi_polygon_uprns += 1;
        }
        let poly = polys
            .into_iter()
            .map(|p| {
                let area = footprint_area(&p).expect("validated at read");
                (p, area)
            })
            .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite areas"))
            .map(|(p, _)| p)
            .expect("non-empty polygon list");
        let fields = match text.remove(&row.uprn) {
            Some(f) if f.iter().any(Option::is_some) => f,
            _ => {
                report.missing_text += 1;
                continue;
            }
        };
        let (spatial, boundary) = match build_spatial_features(&poly, opts.boundary_len) {
            Ok(x) => x,
            Err(_) => {
                report.degenerate_geometry += 1;
                continue;
            }
        };
        for c in 0..4 {
            if row.nums[c].is_nan() {
                report.missing_numeric[c] += 1;
            }
        }
        records.push(PropertyRecord {
            uprn: row.uprn,
            cats: row.cats,
            nums: row.nums,
            text: fields,
            spatial,
            boundary,
            footprint: poly.points,
            sap_score: row.sap_score,
            ei_score: row.ei_score,
            needs_wall: row.needs_wall,
            needs_roof: row.needs_roof,
            needs_glazing: row.needs_glazing,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput(
            "no records survived linkage".to_string(),
        ));
    }
    report.linked_records = records.len();
    Ok(records)
}
