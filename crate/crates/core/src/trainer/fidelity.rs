//! Finite-difference verification of the composed training objective:
//! every encoder, the gate, both heads, dropout, and the loss in one graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::loss::{total_loss, LossConfig};
use crate::datahub::{TargetScaler, BAND_COUNT, TEXT_FIELDS};
use crate::diffcore::{grad_check, GradCheckConfig, GradCheckReport, Graph, Tensor};
use crate::error::Result;
use crate::fusionnet::{BatchInput, FusionModel, ModalitySet, Mode, ModelConfig};

/// Vocabulary sizes of the probe batch; arbitrary but must stay in sync
/// with the category indices it draws.
const PROBE_VOCAB: [usize; 5] = [5, 7, 4, 6, 3];

/// Fully populated synthetic batch, deterministic in `seed`. One text
/// field is absent so the masked pooling path is exercised.
fn probe_batch(cfg: &ModelConfig, n: usize, seed: u64) -> BatchInput {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut val = |k: usize| -> Vec<f64> { (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let k = TEXT_FIELDS.len();
    let mut text_mask = vec![1.0; n * k];
    text_mask[k - 1] = 0.0;
    BatchInput {
        n,
        uprns: (0..n).map(|i| format!("probe{i}")).collect(),
        cat_idx: std::array::from_fn(|f| {
            (0..n).map(|i| ((i * 3 + f) % PROBE_VOCAB[f]) as u32).collect()
        }),
        nums: Tensor::new(vec![n, 4], val(n * 4)).expect("probe nums"),
        text: Tensor::new(vec![n, k, cfg.text_dim], val(n * k * cfg.text_dim)).expect("probe text"),
        text_mask,
        boundary: Tensor::new(vec![n, cfg.boundary_len, 2], val(n * cfg.boundary_len * 2))
            .expect("probe boundary"),
        spatial_nums: Tensor::new(vec![n, 3], val(n * 3)).expect("probe spatial"),
        targets: (0..n).map(|i| [35.0 + 9.0 * i as f64, 42.0 + 7.0 * i as f64]).collect(),
        sap_band: (0..n).map(|i| (i % BAND_COUNT) as u32).collect(),
        ei_band: (0..n).map(|i| ((i + 3) % BAND_COUNT) as u32).collect(),
    }
}

/// Compares reverse-mode gradients of the full objective against central
/// finite differences at sampled coordinates of every parameter tensor.
///
/// The model is freshly initialized from `seed` and dropout runs under a
/// fixed seed, so the objective is a pure function of the parameters.
pub fn objective_grad_check(
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    n: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    model_cfg.validate()?;
    loss_cfg.validate()?;
    let batch = probe_batch(model_cfg, n.max(1), seed);
    let model = FusionModel::new(model_cfg, ModalitySet::full(), PROBE_VOCAB, seed)?;
    let scaler = TargetScaler {
        mean: [50.0, 55.0],
        std: [18.0, 16.0],
    };
    let mut store = model.store.clone();
    let loss_cfg = *loss_cfg;
    let model_cfg = model_cfg.clone();
    grad_check(&mut store, GradCheckConfig::default(), move |store| {
        let probe =
            FusionModel::from_parts(&model_cfg, ModalitySet::full(), PROBE_VOCAB, store.clone())?;
        let mut g = Graph::new();
        let nodes = probe.forward(&mut g, &batch, Mode::Train { dropout_seed: seed ^ 0xd0 })?;
        let loss = total_loss(
            &mut g,
            nodes.y_hat,
            nodes.band_logits,
            &batch.targets,
            &batch.sap_band,
            &batch.ei_band,
            &scaler,
            &loss_cfg,
        )?;
        Ok((g, loss))
    })
}
