//! Dense batch assembly from linked records.

use super::ModelConfig;
use crate::datahub::{BandTable, Featurizer, PropertyRecord, Vocab, TEXT_FIELDS};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// One model-ready batch. Targets stay on the original score scale; the
/// trainer normalizes them with its fitted scaler.
#[derive(Debug, Clone)]
pub struct BatchInput {
    pub n: usize,
    pub uprns: Vec<String>,
    pub cat_idx: [Vec<u32>; 5],
    /// (B, 4) standardized numerics.
    pub nums: Tensor,
    /// (B, 8, h); absent fields zeroed.
    pub text: Tensor,
    /// Row-major (B, 8) presence mask, 1.0 = field present.
    pub text_mask: Vec<f64>,
    /// (B, L, 2) normalized boundary points.
    pub boundary: Tensor,
    /// (B, 3) standardized area/height/orientation.
    pub spatial_nums: Tensor,
    /// Original-scale (sap, ei) per row.
    pub targets: Vec<[f64; 2]>,
    pub sap_band: Vec<u32>,
    pub ei_band: Vec<u32>,
}

/// Assembles the rows at `idxs` into one batch. Returns the batch and the
/// number of categorical cells that fell back to the unknown index.
pub fn make_batch(
    records: &[PropertyRecord],
    idxs: &[usize],
    vocab: &Vocab,
    feat: &Featurizer,
    bands: &BandTable,
    config: &ModelConfig,
) -> Result<(BatchInput, usize)> {
    if idxs.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let n = idxs.len();
    let h = config.text_dim;
    let l = config.boundary_len;
    let k = TEXT_FIELDS.len();

    let mut uprns = Vec::with_capacity(n);
    let mut cat_idx: [Vec<u32>; 5] = Default::default();
    let mut nums = Vec::with_capacity(n * 4);
    let mut text = vec![0.0; n * k * h];
    let mut text_mask = vec![0.0; n * k];
    let mut boundary = Vec::with_capacity(n * l * 2);
    let mut spatial_nums = Vec::with_capacity(n * 3);
    let mut targets = Vec::with_capacity(n);
    let mut sap_band = Vec::with_capacity(n);
    let mut ei_band = Vec::with_capacity(n);
    let mut unknown = 0usize;

    for (row, &i) in idxs.iter().enumerate() {
        let rec = records.get(i).ok_or_else(|| Error::ShapeError {
            op: "make_batch".into(),
            detail: format!("index {i} out of range for {} records", records.len()),
        })?;
        uprns.push(rec.uprn.clone());

        let (cats, numeric) = feat.tabular_row(vocab, rec);
        for f in 0..5 {
            if cats[f] == 0 && !rec.cats[f].trim().is_empty() {
                unknown += 1;
            }
            cat_idx[f].push(cats[f]);
        }
        nums.extend_from_slice(&numeric);

        for (f, field) in rec.text.iter().enumerate() {
            if let Some(v) = field {
                if v.len() != h {
                    return Err(Error::ShapeError {
                        op: "make_batch".into(),
                        detail: format!(
                            "text field {} of {} has width {}, expected {}",
                            TEXT_FIELDS[f],
                            rec.uprn,
                            v.len(),
                            h
                        ),
                    });
                }
                text[(row * k + f) * h..(row * k + f + 1) * h].copy_from_slice(v);
                text_mask[row * k + f] = 1.0;
            }
        }

        if rec.boundary.points.len() != l {
            return Err(Error::ShapeError {
                op: "make_batch".into(),
                detail: format!(
                    "boundary of {} has {} points, expected {}",
                    rec.uprn,
                    rec.boundary.points.len(),
                    l
                ),
            });
        }
        for p in &rec.boundary.points {
            boundary.push(p[0]);
            boundary.push(p[1]);
        }
        spatial_nums.extend_from_slice(&feat.spatial_row(rec));

        targets.push([rec.sap_score, rec.ei_score]);
        sap_band.push(bands.band(rec.sap_score)?.index() as u32);
        ei_band.push(bands.band(rec.ei_score)?.index() as u32);
    }

    Ok((
        BatchInput {
            n,
            uprns,
            cat_idx,
            nums: Tensor::new(vec![n, 4], nums)?,
            text: Tensor::new(vec![n, k, h], text)?,
            text_mask,
            boundary: Tensor::new(vec![n, l, 2], boundary)?,
            spatial_nums: Tensor::new(vec![n, 3], spatial_nums)?,
            targets,
            sap_band,
            ei_band,
        },
        unknown,
    ))
}
