//! Modality ablation: retrains the model on every non-empty modality
//! subset under identical data splits and seed, then scores each variant
//! on the held-out test set.

use serde::{Deserialize, Serialize};

use super::metrics::RegressionMetrics;
use super::run::{evaluate, train, Pipeline, TrainConfig};
use crate::datahub::{Split, PARTITION_COUNT};
use crate::error::Result;
use crate::fusionnet::{FusionModel, ModalitySet, ModelConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationEntry {
    pub label: String,
    pub n_test: usize,
    pub metrics: RegressionMetrics,
    pub band_acc_sap: f64,
    pub band_acc_ei: f64,
    pub confusion_sap: [[u64; PARTITION_COUNT]; PARTITION_COUNT],
    pub confusion_ei: [[u64; PARTITION_COUNT]; PARTITION_COUNT],
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

/// One subset's result; failures are carried, not fatal, so a broken
/// configuration cannot sink the rest of the sweep.
pub struct AblationOutcome {
    pub modalities: ModalitySet,
    pub result: Result<(AblationEntry, FusionModel)>,
}

fn run_one(
    pipe: &Pipeline,
    split: &Split,
    model_cfg: &ModelConfig,
    modalities: ModalitySet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(AblationEntry, FusionModel)> {
    let (model, report) = train(pipe, split, model_cfg, modalities, cfg, seed)?;
    let eval = evaluate(&model, pipe, &split.test, cfg.batch_size)?;
    Ok((
        AblationEntry {
            label: modalities.label(),
            n_test: eval.n,
            metrics: eval.metrics,
            band_acc_sap: eval.band_acc_sap,
            band_acc_ei: eval.band_acc_ei,
            confusion_sap: eval.confusion_sap,
            confusion_ei: eval.confusion_ei,
            best_epoch: report.best_epoch,
            stopped_epoch: report.stopped_epoch,
        },
        model,
    ))
}

/// Trains and evaluates all seven modality subsets with shared splits and
/// seed. Order is fixed: singles, pairs, then the full set.
pub fn run_ablation(
    pipe: &Pipeline,
    split: &Split,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Vec<AblationOutcome> {
    ModalitySet::all_subsets()
        .into_iter()
        .map(|modalities| AblationOutcome {
            modalities,
            result: run_one(pipe, split, model_cfg, modalities, cfg, seed),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::run::tests::{tiny_model_config, toy_records};
    use crate::datahub::{
        joint_stratified_split, BandTable, Featurizer, SplitRatios, TargetScaler, Vocab,
    };

    #[test]
    fn sweep_covers_all_seven_subsets_in_fixed_order() {
        let records = toy_records(140, 31);
        let table = BandTable::default();
        let split =
            joint_stratified_split(&records, &table, SplitRatios::default(), 11).unwrap();
        let vocab = Vocab::build(&records);
        let feat = Featurizer::fit(&records, &split.train).unwrap();
        let scaler = TargetScaler::fit(&records, &split.train).unwrap();
        let pipe = Pipeline {
            records: &records,
            vocab: &vocab,
            featurizer: &feat,
            scaler: &scaler,
            bands: &table,
        };
        let cfg = TrainConfig {
            batch_size: 32,
            max_epochs: 1,
            ..TrainConfig::default()
        };
        let out = run_ablation(&pipe, &split, &tiny_model_config(), &cfg, 3);
        let labels: Vec<String> = out.iter().map(|o| o.modalities.label()).collect();
        assert_eq!(
            labels,
            ["tab", "text", "spatial", "tab_text", "tab_spatial", "text_spatial",
             "tab_text_spatial"]
        );
        for o in &out {
            let (entry, model) = o.result.as_ref().expect("subset should train");
            assert_eq!(entry.label, o.modalities.label());
            assert_eq!(entry.n_test, split.test.len());
            assert_eq!(model.modalities(), o.modalities);
            let total: u64 = entry.confusion_sap.iter().flatten().sum();
            assert_eq!(total as usize, split.test.len());
        }
    }
}
