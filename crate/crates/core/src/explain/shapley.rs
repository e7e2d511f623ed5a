//! Exact Shapley attribution for the nine tabular features.
//!
//! With only nine features, all 2^9 coalitions are enumerable, so the
//! values are exact rather than sampled. The value function marginalizes
//! out-of-coalition features over a background set drawn from training
//! data, holding the sample's text and spatial inputs fixed.

use serde::{Deserialize, Serialize};

use crate::datahub::{CAT_FIELDS, NUM_FIELDS};
use crate::diffcore::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::fusionnet::{FusionModel, Modality, Mode};
use crate::trainer::Pipeline;

/// The nine attributed features: five categorical, then four numeric,
/// in schema order.
pub const TABULAR_FEATURES: [&str; 9] = [
    CAT_FIELDS[0],
    CAT_FIELDS[1],
    CAT_FIELDS[2],
    CAT_FIELDS[3],
    CAT_FIELDS[4],
    NUM_FIELDS[0],
    NUM_FIELDS[1],
    NUM_FIELDS[2],
    NUM_FIELDS[3],
];

const N_FEATURES: usize = TABULAR_FEATURES.len();

/// Exact Shapley values by full coalition enumeration. `v` maps a feature
/// bitmask (bit i set means feature i present) to the value function.
/// Exponential in `n`; intended for n <= 16.
pub fn exact_shapley(n: usize, v: &mut dyn FnMut(u16) -> Result<f64>) -> Result<Vec<f64>> {
    if n == 0 || n > 16 {
        return Err(Error::InvalidConfig(format!(
            "shapley enumeration supports 1..=16 features, got {n}"
        )));
    }
    let full = 1usize << n;
    let mut values = vec![0.0f64; full];
    for (mask, slot) in values.iter_mut().enumerate() {
        *slot = v(mask as u16)?;
    }
    shapley_from_table(n, &values)
}

/// Shapley values from a precomputed table of v over all 2^n masks.
pub(crate) fn shapley_from_table(n: usize, values: &[f64]) -> Result<Vec<f64>> {
    let full = 1usize << n;
    if values.len() != full {
        return Err(Error::ShapeError {
            op: "shapley_from_table".into(),
            detail: format!("{} values for {} coalitions", values.len(), full),
        });
    }
    // weight[s] = s! (n-1-s)! / n! for a coalition of size s not containing i.
    let mut fact = [1.0f64; 17];
    for i in 1..=16 {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..n).map(|s| fact[s] * fact[n - 1 - s] / fact[n]).collect();
    let mut phi = vec![0.0f64; n];
    for mask in 0..full {
        let size = (mask as u32).count_ones() as usize;
        for (i, phi_i) in phi.iter_mut().enumerate() {
            if mask & (1 << i) == 0 {
                *phi_i += weight[size] * (values[mask | (1 << i)] - values[mask]);
            }
        }
    }
    Ok(phi)
}

/// Per-feature mean absolute Shapley value over a set of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub features: Vec<String>,
    pub mean_abs_sap: Vec<f64>,
    pub mean_abs_ei: Vec<f64>,
    pub n_samples: usize,
    pub n_background: usize,
}

/// Caches the frozen parts of the value function for one sample: latents
/// of the non-tabular modalities, and the raw feature rows.
struct SampleContext {
    cat: [u32; 5],
    nums_std: [f64; 4],
    fixed_z: Vec<(Modality, Vec<f64>)>,
}

fn tabular_row(pipe: &Pipeline, idx: usize) -> ([u32; 5], [f64; 4]) {
    pipe.featurizer.tabular_row(pipe.vocab, &pipe.records[idx])
}

/// Latents of every non-tabular modality for one sample, eval mode.
fn frozen_latents(model: &FusionModel, pipe: &Pipeline, idx: usize) -> Result<Vec<(Modality, Vec<f64>)>> {
    let rec = &pipe.records[idx];
    let mut out = Vec::new();
    for m in model.modalities().iter() {
        match m {
            Modality::Tabular => {}
            Modality::Text => {
                let mut g = Graph::new();
                let (text, mask) = text_tensor(pipe, idx)?;
                let node = g.input(text);
                let z = model.encode_text(&mut g, node, &mask, Mode::Eval)?;
                out.push((Modality::Text, g.value(z).data().to_vec()));
            }
            Modality::Spatial => {
                let mut g = Graph::new();
                let flat: Vec<f64> = rec.boundary.points.iter().flatten().copied().collect();
                let boundary =
                    g.input(Tensor::new(vec![1, rec.boundary.points.len(), 2], flat)?);
                let nums =
                    g.input(Tensor::new(vec![1, 3], pipe.featurizer.spatial_row(rec).to_vec())?);
                let z = model.encode_spatial(&mut g, boundary, nums, Mode::Eval)?;
                out.push((Modality::Spatial, g.value(z).data().to_vec()));
            }
        }
    }
    Ok(out)
}

fn text_tensor(pipe: &Pipeline, idx: usize) -> Result<(Tensor, Vec<f64>)> {
    let rec = &pipe.records[idx];
    let k = rec.text.len();
    let h = rec
        .text
        .iter()
        .flatten()
        .next()
        .map(Vec::len)
        .ok_or_else(|| Error::EmptyInput(format!("no text fields for {}", rec.uprn)))?;
    let mut data = vec![0.0; k * h];
    let mut mask = vec![0.0; k];
    for (f, slot) in rec.text.iter().enumerate() {
        if let Some(vec) = slot {
            data[f * h..(f + 1) * h].copy_from_slice(vec);
            mask[f] = 1.0;
        }
    }
    Ok((Tensor::new(vec![1, k, h], data)?, mask))
}

/// Value table over all coalitions for one sample: entry [mask] holds the
/// background-averaged denormalized prediction, per target.
fn coalition_table(
    model: &FusionModel,
    pipe: &Pipeline,
    ctx: &SampleContext,
    background: &[([u32; 5], [f64; 4])],
) -> Result<[Vec<f64>; 2]> {
    let n_bg = background.len();
    let full = 1usize << N_FEATURES;
    let rows = full * n_bg;
    let mut cat_idx: [Vec<u32>; 5] = Default::default();
    for c in &mut cat_idx {
        c.reserve(rows);
    }
    let mut nums = Vec::with_capacity(rows * 4);
    for mask in 0..full {
        for (bg_cat, bg_num) in background {
            for f in 0..5 {
                cat_idx[f].push(if mask & (1 << f) != 0 { ctx.cat[f] } else { bg_cat[f] });
            }
            for f in 0..4 {
                nums.push(if mask & (1 << (5 + f)) != 0 {
                    ctx.nums_std[f]
                } else {
                    bg_num[f]
                });
            }
        }
    }

    let mut table = [vec![0.0f64; full], vec![0.0f64; full]];
    // Chunked evaluation keeps peak graph memory modest.
    let chunk_rows = 4096.min(rows);
    let mut row = 0;
    while row < rows {
        let b = chunk_rows.min(rows - row);
        let mut g = Graph::new();
        let chunk_cats: [Vec<u32>; 5] = std::array::from_fn(|f| cat_idx[f][row..row + b].to_vec());
        let nums_node = g.input(Tensor::new(vec![b, 4], nums[row * 4..(row + b) * 4].to_vec())?);
        let z_tab = model.encode_tabular(&mut g, &chunk_cats, nums_node, Mode::Eval)?;
        let mut zs = Vec::with_capacity(1 + ctx.fixed_z.len());
        for m in model.modalities().iter() {
            if m == Modality::Tabular {
                zs.push(z_tab);
            } else {
                let z = ctx
                    .fixed_z
                    .iter()
                    .find(|(fm, _)| *fm == m)
                    .map(|(_, v)| v)
                    .expect("latent cached per modality");
                let mut tiled = Vec::with_capacity(b * z.len());
                for _ in 0..b {
                    tiled.extend_from_slice(z);
                }
                zs.push(g.input(Tensor::new(vec![b, z.len()], tiled)?));
            }
        }
        let nodes = model.fuse(&mut g, &zs, Mode::Eval)?;
        let y = g.value(nodes.y_hat).data();
        for (r, pair) in y.chunks_exact(2).enumerate() {
            let denorm = pipe.scaler.denormalize([pair[0], pair[1]]);
            let mask = (row + r) / n_bg;
            table[0][mask] += denorm[0];
            table[1][mask] += denorm[1];
        }
        row += b;
    }
    for t in &mut table {
        for v in t.iter_mut() {
            *v /= n_bg as f64;
        }
    }
    Ok(table)
}

/// Exact Shapley values for one sample: `[target][feature]`, on the
/// denormalized score scale.
pub fn shapley_sample(
    model: &FusionModel,
    pipe: &Pipeline,
    sample: usize,
    background_idxs: &[usize],
) -> Result<[[f64; 9]; 2]> {
    let (table, _) = shapley_sample_with_table(model, pipe, sample, background_idxs)?;
    Ok(table)
}

/// As [`shapley_sample`], additionally returning the coalition value
/// tables for efficiency-axiom checks: `tables[t][mask]`.
pub fn shapley_sample_with_table(
    model: &FusionModel,
    pipe: &Pipeline,
    sample: usize,
    background_idxs: &[usize],
) -> Result<([[f64; 9]; 2], [Vec<f64>; 2])> {
    if background_idxs.is_empty() {
        return Err(Error::InvalidConfig("shapley needs a non-empty background set".into()));
    }
    if !model.modalities().contains(Modality::Tabular) {
        return Err(Error::InvalidConfig(
            "tabular shapley needs a model with the tabular modality".into(),
        ));
    }
    let (cat, nums_std) = tabular_row(pipe, sample);
    let ctx = SampleContext {
        cat,
        nums_std,
        fixed_z: frozen_latents(model, pipe, sample)?,
    };
    let background: Vec<([u32; 5], [f64; 4])> =
        background_idxs.iter().map(|&b| tabular_row(pipe, b)).collect();
    let tables = coalition_table(model, pipe, &ctx, &background)?;
    let mut phi = [[0.0f64; 9]; 2];
    for t in 0..2 {
        let values = shapley_from_table(N_FEATURES, &tables[t])?;
        phi[t].copy_from_slice(&values);
    }
    Ok((phi, tables))
}

/// Mean absolute Shapley value per feature over `samples`.
pub fn shapley_report(
    model: &FusionModel,
    pipe: &Pipeline,
    samples: &[usize],
    background_idxs: &[usize],
) -> Result<ShapleyReport> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("shapley samples".into()));
    }
    let mut acc = [[0.0f64; 9]; 2];
    for &s in samples {
        let phi = shapley_sample(model, pipe, s, background_idxs)?;
        for t in 0..2 {
            for f in 0..9 {
                acc[t][f] += phi[t][f].abs();
            }
        }
    }
    let n = samples.len() as f64;
    Ok(ShapleyReport {
        features: TABULAR_FEATURES.iter().map(|s| s.to_string()).collect(),
        mean_abs_sap: acc[0].iter().map(|v| v / n).collect(),
        mean_abs_ei: acc[1].iter().map(|v| v / n).collect(),
        n_samples: samples.len(),
        n_background: background_idxs.len(),
    })
}
