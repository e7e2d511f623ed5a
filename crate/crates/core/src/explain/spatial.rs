//! Permutation importance for the spatial channel: shuffled numeric
//! columns and deranged boundary shapes.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusionnet::{make_batch, FusionModel, Modality};
use crate::trainer::{regression_metrics, Pipeline, RegressionMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialFeatureKind {
    Area,
    Height,
    Orientation,
}

impl SpatialFeatureKind {
    pub const ALL: [SpatialFeatureKind; 3] = [
        SpatialFeatureKind::Area,
        SpatialFeatureKind::Height,
        SpatialFeatureKind::Orientation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SpatialFeatureKind::Area => "footprint_area",
            SpatialFeatureKind::Height => "height",
            SpatialFeatureKind::Orientation => "orientation",
        }
    }

    fn column(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationImportance {
    pub feature: String,
    pub baseline: RegressionMetrics,
    pub permuted: RegressionMetrics,
    pub delta_mae_sap: f64,
    pub delta_mae_ei: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPermutationReport {
    pub n: usize,
    pub baseline: RegressionMetrics,
    pub permuted: RegressionMetrics,
    pub delta_mae_sap: f64,
    pub delta_mae_ei: f64,
    pub delta_r2_sap: Option<f64>,
    pub delta_r2_ei: Option<f64>,
}

/// Cyclic permutation of 0..n with no fixed points (Sattolo's algorithm),
/// so every row receives a different row's data.
pub fn seeded_derangement(n: usize, seed: u64) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "derangement needs at least 2 rows, got {n}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut a: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        a.swap(i, j);
    }
    Ok(a)
}

fn require_spatial(model: &FusionModel) -> Result<()> {
    if !model.modalities().contains(Modality::Spatial) {
        return Err(Error::InvalidConfig(
            "permutation importance needs a model with the spatial encoder".into(),
        ));
    }
    Ok(())
}

fn targets_of(pipe: &Pipeline, idxs: &[usize]) -> Vec<[f64; 2]> {
    idxs.iter()
        .map(|&i| [pipe.records[i].sap_score, pipe.records[i].ei_score])
        .collect()
}

/// Predictions with one standardized spatial-numeric column rewired
/// through `mapping` across the whole evaluated set.
fn predict_with_column_mapping(
    model: &FusionModel,
    pipe: &Pipeline,
    idxs: &[usize],
    kind: SpatialFeatureKind,
    mapping: &[usize],
    batch_size: usize,
) -> Result<Vec<[f64; 2]>> {
    let c = kind.column();
    let col: Vec<f64> = idxs
        .iter()
        .map(|&i| pipe.featurizer.spatial_row(&pipe.records[i])[c])
        .collect();
    let mut preds = Vec::with_capacity(idxs.len());
    let mut offset = 0usize;
    for chunk in idxs.chunks(batch_size.max(1)) {
        let (mut batch, _) = make_batch(
            pipe.records,
            chunk,
            pipe.vocab,
            pipe.featurizer,
            pipe.bands,
            model.config(),
        )?;
        for b in 0..batch.n {
            batch.spatial_nums.data_mut()[b * 3 + c] = col[mapping[offset + b]];
        }
        let out = model.predict(&batch)?;
        for row in out.y_hat.data().chunks_exact(2) {
            preds.push(pipe.scaler.denormalize([row[0], row[1]]));
        }
        offset += batch.n;
    }
    Ok(preds)
}

/// Shuffles each standardized spatial numeric across the evaluated set in
/// turn and reports the metric change against the unshuffled baseline.
pub fn spatial_permutation(
    model: &FusionModel,
    pipe: &Pipeline,
    idxs: &[usize],
    seed: u64,
    batch_size: usize,
) -> Result<Vec<PermutationImportance>> {
    if idxs.is_empty() {
        return Err(Error::EmptyInput("spatial permutation".into()));
    }
    require_spatial(model)?;
    let targets = targets_of(pipe, idxs);
    let identity: Vec<usize> = (0..idxs.len()).collect();
    let base_preds = predict_with_column_mapping(
        model,
        pipe,
        idxs,
        SpatialFeatureKind::Area,
        &identity,
        batch_size,
    )?;
    let baseline = regression_metrics(&base_preds, &targets)?;

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(3);
    for kind in SpatialFeatureKind::ALL {
        let mut mapping = identity.clone();
        for i in (1..mapping.len()).rev() {
            let j = rng.gen_range(0..=i);
            mapping.swap(i, j);
        }
        let preds = predict_with_column_mapping(model, pipe, idxs, kind, &mapping, batch_size)?;
        let permuted = regression_metrics(&preds, &targets)?;
        out.push(PermutationImportance {
            feature: kind.label().to_string(),
            baseline,
            permuted,
            delta_mae_sap: permuted.sap.mae - baseline.sap.mae,
            delta_mae_ei: permuted.ei.mae - baseline.ei.mae,
        });
    }
    Ok(out)
}

/// Gives every property a different property's boundary polyline (spatial
/// numerics stay honest) and reports the damage.
pub fn boundary_permutation(
    model: &FusionModel,
    pipe: &Pipeline,
    idxs: &[usize],
    seed: u64,
    batch_size: usize,
) -> Result<BoundaryPermutationReport> {
    require_spatial(model)?;
    let mapping = seeded_derangement(idxs.len(), seed)?;
    let targets = targets_of(pipe, idxs);
    let l = model.config().boundary_len;

    let mut base_preds = Vec::with_capacity(idxs.len());
    let mut perm_preds = Vec::with_capacity(idxs.len());
    let mut offset = 0usize;
    for chunk in idxs.chunks(batch_size.max(1)) {
        let (batch, _) = make_batch(
            pipe.records,
            chunk,
            pipe.vocab,
            pipe.featurizer,
            pipe.bands,
            model.config(),
        )?;
        let out = model.predict(&batch)?;
        for row in out.y_hat.data().chunks_exact(2) {
            base_preds.push(pipe.scaler.denormalize([row[0], row[1]]));
        }

        let mut swapped = batch;
        for b in 0..swapped.n {
            let donor = &pipe.records[idxs[mapping[offset + b]]];
            let dst = &mut swapped.boundary.data_mut()[b * l * 2..(b + 1) * l * 2];
            for (p, point) in donor.boundary.points.iter().enumerate() {
                dst[p * 2] = point[0];
                dst[p * 2 + 1] = point[1];
            }
        }
        let out = model.predict(&swapped)?;
        for row in out.y_hat.data().chunks_exact(2) {
            perm_preds.push(pipe.scaler.denormalize([row[0], row[1]]));
        }
        offset += swapped.n;
    }

    let baseline = regression_metrics(&base_preds, &targets)?;
    let permuted = regression_metrics(&perm_preds, &targets)?;
    Ok(BoundaryPermutationReport {
        n: idxs.len(),
        baseline,
        permuted,
        delta_mae_sap: permuted.sap.mae - baseline.sap.mae,
        delta_mae_ei: permuted.ei.mae - baseline.ei.mae,
        delta_r2_sap: permuted.sap.r2.zip(baseline.sap.r2).map(|(p, b)| p - b),
        delta_r2_ei: permuted.ei.r2.zip(baseline.ei.r2).map(|(p, b)| p - b),
    })
}
