//! Distribution of per-sample fusion gate weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusionnet::{make_batch, FusionModel};
use crate::trainer::Pipeline;

/// Bin width 0.02 over [0, 1]; the final bin is closed at 1.
pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateStats {
    pub modalities: Vec<String>,
    pub mean: Vec<f64>,
    /// Population standard deviation per modality.
    pub std: Vec<f64>,
    pub histogram: Vec<Vec<u64>>,
    pub n: usize,
}

/// Gate weight summary over `idxs`, eval mode. Single-modality models
/// yield the degenerate distribution at weight 1.
pub fn gate_weight_stats(
    model: &FusionModel,
    pipe: &Pipeline,
    idxs: &[usize],
    batch_size: usize,
) -> Result<GateStats> {
    if idxs.is_empty() {
        return Err(Error::EmptyInput("gate statistics".into()));
    }
    let n_mod = model.modalities().len();
    let mut sum = vec![0.0f64; n_mod];
    let mut sumsq = vec![0.0f64; n_mod];
    let mut histogram = vec![vec![0u64; HISTOGRAM_BINS]; n_mod];
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
        for row in out.alpha.data().chunks_exact(n_mod) {
            for (m, &a) in row.iter().enumerate() {
                sum[m] += a;
                sumsq[m] += a * a;
                let bin = ((a / 0.02) as usize).min(HISTOGRAM_BINS - 1);
                histogram[m][bin] += 1;
            }
        }
    }
    let n = idxs.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sumsq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| (sq / n - m * m).max(0.0).sqrt())
        .collect();
    Ok(GateStats {
        modalities: model.modalities().iter().map(|m| m.short_name().to_string()).collect(),
        mean,
        std,
        histogram,
        n: idxs.len(),
    })
}
