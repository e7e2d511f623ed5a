//! Training loop with balanced batches, plateau schedule, and early
//! stopping on total validation loss.

use serde::{Deserialize, Serialize};

use super::loss::{total_loss, LossConfig};
use super::metrics::{regression_metrics, RegressionMetrics};
use crate::datahub::{
    balanced_batches, band_accuracy, confusion_matrix_merged, BandTable, Featurizer,
    PropertyRecord, Split, TargetScaler, Vocab, PARTITION_COUNT,
};
use crate::diffcore::{mix_seed, AdamConfig, Graph, OptimState};
use crate::error::{Error, Result};
use crate::fusionnet::{make_batch, FusionModel, ModalitySet, Mode, ModelConfig};

/// Seed-mixing tags; one base seed fans out to independent streams.
const TAG_INIT: u64 = 1;
const TAG_SAMPLER: u64 = 2;
const TAG_DROPOUT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early stop after this many epochs without validation improvement.
    pub patience: usize,
    pub adam: AdamConfig,
    /// Plateau epochs before the learning rate is scaled down.
    pub sched_patience: usize,
    pub sched_factor: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            max_epochs: 50,
            patience: 10,
            adam: AdamConfig::default(),
            sched_patience: 5,
            sched_factor: 0.5,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig(
                "batch size, epochs, and patience must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.sched_factor) {
            return Err(Error::InvalidConfig(format!(
                "scheduler factor {} outside (0, 1)",
                self.sched_factor
            )));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metrics: RegressionMetrics,
    pub lr_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights the returned model carries.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_epoch: usize,
    /// Epochs where the plateau schedule reduced the learning rate.
    pub lr_events: Vec<usize>,
}

/// Shared context for one training or evaluation pass.
pub struct Pipeline<'a> {
    pub records: &'a [PropertyRecord],
    pub vocab: &'a Vocab,
    pub featurizer: &'a Featurizer,
    pub scaler: &'a TargetScaler,
    pub bands: &'a BandTable,
}

/// Raw-scale predictions for `idxs`, evaluated in fixed batch order.
pub fn predict_scores(
    model: &FusionModel,
    pipe: &Pipeline,
    idxs: &[usize],
    batch_size: usize,
) -> Result<Vec<[f64; 2]>> {
    let mut preds = Vec::with_capacity(idxs.len());
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
            preds.push(pipe.scaler.denormalize([row[0], row[1]]));
        }
    }
    Ok(preds)
}

/// Mean loss plus raw-scale predictions over a split, eval mode.
fn loss_and_preds(
    model: &FusionModel,
    pipe: &Pipeline,
    idxs: &[usize],
    batch_size: usize,
    loss_cfg: &LossConfig,
) -> Result<(f64, Vec<[f64; 2]>)> {
    let mut preds = Vec::with_capacity(idxs.len());
    let mut loss_sum = 0.0;
    for chunk in idxs.chunks(batch_size.max(1)) {
        let (batch, _) = make_batch(
            pipe.records,
            chunk,
            pipe.vocab,
            pipe.featurizer,
            pipe.bands,
            model.config(),
        )?;
        let mut g = Graph::new();
        let nodes = model.forward(&mut g, &batch, Mode::Eval)?;
        let loss = total_loss(
            &mut g,
            nodes.y_hat,
            nodes.band_logits,
            &batch.targets,
            &batch.sap_band,
            &batch.ei_band,
            pipe.scaler,
            loss_cfg,
        )?;
        loss_sum += g.value(loss).data()[0] * chunk.len() as f64;
        for row in g.value(nodes.y_hat).data().chunks_exact(2) {
            preds.push(pipe.scaler.denormalize([row[0], row[1]]));
        }
    }
    Ok((loss_sum / idxs.len() as f64, preds))
}

/// Trains a fresh model. Deterministic in (data, configs, seed): the seed
/// fans out to initialization, batch order, and dropout streams.
#[allow(clippy::too_many_arguments)]
pub fn train(
    pipe: &Pipeline,
    split: &Split,
    model_cfg: &ModelConfig,
    modalities: ModalitySet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(FusionModel, TrainReport)> {
    cfg.validate()?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::EmptyInput("train/val split".into()));
    }
    let mut model = FusionModel::new(
        model_cfg,
        modalities,
        pipe.vocab.sizes(),
        mix_seed(seed, TAG_INIT),
    )?;
    let mut optim = OptimState::new(&model.store, cfg.adam, cfg.sched_patience, cfg.sched_factor)?;
    let sampler_seed = mix_seed(seed, TAG_SAMPLER);
    let dropout_base = mix_seed(seed, TAG_DROPOUT);

    let mut epochs: Vec<EpochStats> = Vec::new();
    let mut lr_events = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_store = None;
    let mut stale = 0usize;
    let mut stopped_epoch = 0usize;

    for epoch in 0..cfg.max_epochs {
        stopped_epoch = epoch;
        let batches = balanced_batches(
            pipe.records,
            &split.train,
            pipe.bands,
            cfg.batch_size,
            sampler_seed,
            epoch as u64,
        )?;
        let mut train_loss_sum = 0.0;
        let mut seen = 0usize;
        for (bi, chunk) in batches.iter().enumerate() {
            let (batch, _) = make_batch(
                pipe.records,
                chunk,
                pipe.vocab,
                pipe.featurizer,
                pipe.bands,
                model_cfg,
            )?;
            let mut g = Graph::new();
            let dropout_seed = mix_seed(dropout_base, ((epoch as u64) << 32) | bi as u64);
            let nodes = model.forward(&mut g, &batch, Mode::Train { dropout_seed })?;
            let loss = total_loss(
                &mut g,
                nodes.y_hat,
                nodes.band_logits,
                &batch.targets,
                &batch.sap_band,
                &batch.ei_band,
                pipe.scaler,
                &cfg.loss,
            )?;
            let lv = g.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "non-finite loss {lv} at epoch {epoch}, batch {bi}"
                )));
            }
            g.backward(loss)?;
            g.flush_param_grads(&mut model.store);
            optim.step(&mut model.store).map_err(|e| match e {
                Error::TrainingDiverged(msg) => Error::TrainingDiverged(format!(
                    "{msg} at epoch {epoch}, batch {bi}"
                )),
                other => other,
            })?;
            train_loss_sum += lv * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = train_loss_sum / seen as f64;

        let (val_loss, val_preds) =
            loss_and_preds(&model, pipe, &split.val, cfg.batch_size, &cfg.loss)?;
        let val_targets: Vec<[f64; 2]> = split
            .val
            .iter()
            .map(|&i| [pipe.records[i].sap_score, pipe.records[i].ei_score])
            .collect();
        let val_metrics = regression_metrics(&val_preds, &val_targets)?;
        if optim.observe_val_loss(val_loss) {
            lr_events.push(epoch);
        }
        epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_metrics,
            lr_scale: optim.lr_scale(),
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_store = Some(model.store.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    model.store = best_store.expect("at least one epoch ran");
    Ok((
        model,
        TrainReport {
            epochs,
            best_epoch,
            best_val_loss: best_val,
            stopped_epoch,
            lr_events,
        },
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub n: usize,
    pub metrics: RegressionMetrics,
    pub band_acc_sap: f64,
    pub band_acc_ei: f64,
    pub confusion_sap: [[u64; PARTITION_COUNT]; PARTITION_COUNT],
    pub confusion_ei: [[u64; PARTITION_COUNT]; PARTITION_COUNT],
    /// Raw-scale predictions aligned with the evaluated index list.
    pub preds: Vec<[f64; 2]>,
}

/// Full evaluation of a split: regression metrics, merged-band accuracy,
/// and merged-space confusion matrices.
pub fn evaluate(
    model: &FusionModel,
    pipe: &Pipeline,
    idxs: &[usize],
    batch_size: usize,
) -> Result<EvalOutcome> {
    let preds = predict_scores(model, pipe, idxs, batch_size)?;
    let targets: Vec<[f64; 2]> = idxs
        .iter()
        .map(|&i| [pipe.records[i].sap_score, pipe.records[i].ei_score])
        .collect();
    let metrics = regression_metrics(&preds, &targets)?;
    let sap_p: Vec<f64> = preds.iter().map(|v| v[0]).collect();
    let sap_t: Vec<f64> = targets.iter().map(|v| v[0]).collect();
    let ei_p: Vec<f64> = preds.iter().map(|v| v[1]).collect();
    let ei_t: Vec<f64> = targets.iter().map(|v| v[1]).collect();
    Ok(EvalOutcome {
        n: idxs.len(),
        metrics,
        band_acc_sap: band_accuracy(&sap_p, &sap_t, pipe.bands)?,
        band_acc_ei: band_accuracy(&ei_p, &ei_t, pipe.bands)?,
        confusion_sap: confusion_matrix_merged(&sap_p, &sap_t, pipe.bands)?,
        confusion_ei: confusion_matrix_merged(&ei_p, &ei_t, pipe.bands)?,
        preds,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::datahub::joint_stratified_split;
    use crate::datahub::SplitRatios;
    use crate::fusionnet::Modality;
    use crate::geometry::{build_spatial_features, FootprintPolygon};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    /// Small learnable dataset: targets are smooth functions of the
    /// tabular numerics, with matching text/spatial fields present so any
    /// modality subset can train.
    pub(crate) fn toy_records(n: usize, seed: u64) -> Vec<PropertyRecord> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let poly = FootprintPolygon::new(
            "base",
            vec![[0.0, 0.0], [10.0, 0.0], [10.0, 6.0], [0.0, 6.0]],
            vec![],
            5.0,
        )
        .unwrap();
        (0..n)
            .map(|i| {
                let a: f64 = rng.gen_range(-1.0..1.0);
                let b: f64 = rng.gen_range(-1.0..1.0);
                let sap = (55.0 + 18.0 * a - 9.0 * b).clamp(1.0, 100.0);
                let ei = (60.0 - 12.0 * a + 14.0 * b).clamp(1.0, 100.0);
                let ptype = if i % 2 == 0 { "House" } else { "Flat" };
                let (spatial, boundary) = build_spatial_features(&poly, 8).unwrap();
                let text: Vec<Option<Vec<f64>>> = (0..8)
                    .map(|f| (f < 2).then(|| vec![a, b, 0.5, -0.25, 1.0]))
                    .collect();
                PropertyRecord {
                    uprn: format!("u{i}"),
                    cats: [
                        "1950".into(),
                        ptype.into(),
                        "Detached".into(),
                        "std".into(),
                        "gas".into(),
                    ],
                    nums: [60.0 + 30.0 * a, 4.0 + b, 3.0, 0.0],
                    text,
                    spatial,
                    boundary,
                    footprint: poly.points.clone(),
                    sap_score: sap,
                    ei_score: ei,
                    needs_wall: a < 0.0,
                    needs_roof: false,
                    needs_glazing: false,
                }
            })
            .collect()
    }

    pub(crate) fn tiny_model_config() -> ModelConfig {
        ModelConfig {
            latent_dim: 8,
            cat_embed_dim: 3,
            text_dim: 5,
            boundary_len: 8,
            numeric_mlp: [8, 6],
            spatial_numeric_mlp: [5, 3],
            gate_hidden: 6,
            fusion_mlp: [12, 8],
            dropout: 0.05,
            n_bands: 7,
        }
    }

    fn fit_pipeline(
        records: &[PropertyRecord],
    ) -> (Split, Vocab, Featurizer, TargetScaler, BandTable) {
        let table = BandTable::default();
        let split = joint_stratified_split(records, &table, SplitRatios::default(), 11).unwrap();
        let vocab = Vocab::build(records);
        let feat = Featurizer::fit(records, &split.train).unwrap();
        let scaler = TargetScaler::fit(records, &split.train).unwrap();
        (split, vocab, feat, scaler, table)
    }

    fn run_train(
        records: &[PropertyRecord],
        epochs: usize,
        seed: u64,
    ) -> (FusionModel, TrainReport, EvalOutcome) {
        let (split, vocab, feat, scaler, table) = fit_pipeline(records);
        let pipe = Pipeline {
            records,
            vocab: &vocab,
            featurizer: &feat,
            scaler: &scaler,
            bands: &table,
        };
        let cfg = TrainConfig {
            batch_size: 32,
            max_epochs: epochs,
            patience: 10,
            ..TrainConfig::default()
        };
        let (model, report) =
            train(&pipe, &split, &tiny_model_config(), ModalitySet::full(), &cfg, seed).unwrap();
        let eval = evaluate(&model, &pipe, &split.test, 32).unwrap();
        (model, report, eval)
    }

    #[test]
    fn training_learns_and_restores_best_weights() {
        let records = toy_records(240, 5);
        let (_, report, eval) = run_train(&records, 8, 17);
        assert!(report.epochs.len() <= 8);
        let first = report.epochs.first().unwrap().train_loss;
        let last = report.epochs.last().unwrap().train_loss;
        assert!(last < first, "no learning: {first} -> {last}");
        let min_val = report
            .epochs
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_val_loss, min_val);
        assert_eq!(
            report.epochs[report.best_epoch].val_loss,
            report.best_val_loss
        );
        assert_eq!(eval.n, eval.preds.len());
        assert!(eval.metrics.sap.mae.is_finite());
    }

    #[test]
    fn same_seed_reproduces_the_report() {
        let records = toy_records(160, 9);
        let (_, a, ea) = run_train(&records, 4, 21);
        let (_, b, eb) = run_train(&records, 4, 21);
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&ea.preds).unwrap(),
            serde_json::to_string(&eb.preds).unwrap()
        );
        let (_, c, _) = run_train(&records, 4, 22);
        assert_ne!(a, c);
    }

    #[test]
    fn early_stopping_respects_patience() {
        let records = toy_records(120, 3);
        let (split, vocab, feat, scaler, table) = fit_pipeline(&records);
        let pipe = Pipeline {
            records: &records,
            vocab: &vocab,
            featurizer: &feat,
            scaler: &scaler,
            bands: &table,
        };
        let cfg = TrainConfig {
            batch_size: 32,
            max_epochs: 40,
            patience: 2,
            ..TrainConfig::default()
        };
        let (_, report) = train(
            &pipe,
            &split,
            &tiny_model_config(),
            ModalitySet::full(),
            &cfg,
            7,
        )
        .unwrap();
        assert!(report.stopped_epoch <= report.best_epoch + 2);
        assert!(report.stopped_epoch < 40 || report.epochs.len() == 40);
    }

    #[test]
    fn single_modality_training_runs() {
        let records = toy_records(100, 13);
        let (split, vocab, feat, scaler, table) = fit_pipeline(&records);
        let pipe = Pipeline {
            records: &records,
            vocab: &vocab,
            featurizer: &feat,
            scaler: &scaler,
            bands: &table,
        };
        let cfg = TrainConfig {
            batch_size: 32,
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let (model, _) = train(
            &pipe,
            &split,
            &tiny_model_config(),
            ModalitySet::single(Modality::Tabular),
            &cfg,
            7,
        )
        .unwrap();
        let eval = evaluate(&model, &pipe, &split.test, 16).unwrap();
        assert_eq!(eval.preds.len(), split.test.len());
    }
}
