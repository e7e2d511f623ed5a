//! Training objective: Huber regression plus weighted band cross-entropy.

use serde::{Deserialize, Serialize};

use crate::datahub::{TargetScaler, BAND_COUNT};
use crate::diffcore::{Graph, NodeId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Huber threshold on the normalized target scale.
    pub delta: f64,
    pub w_sap: f64,
    pub w_ei: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            delta: 1.0,
            w_sap: 0.1,
            w_ei: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "huber delta {} must be positive",
                self.delta
            )));
        }
        if self.w_sap < 0.0 || self.w_ei < 0.0 {
            return Err(Error::InvalidConfig("band loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Builds the scalar objective on an existing graph.
///
/// `y_hat` is (B, 2) on the normalized scale; `band_logits` is
/// (B, 2*n_bands) with the SAP head first. Targets come in on the
/// original score scale; band labels were derived from those same scores.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    g: &mut Graph,
    y_hat: NodeId,
    band_logits: NodeId,
    targets: &[[f64; 2]],
    sap_band: &[u32],
    ei_band: &[u32],
    scaler: &TargetScaler,
    cfg: &LossConfig,
) -> Result<NodeId> {
    cfg.validate()?;
    let norm: Vec<f64> = targets
        .iter()
        .flat_map(|t| scaler.normalize(t[0], t[1]))
        .collect();
    let mut loss = g.huber_loss(y_hat, &norm, cfg.delta)?;
    if cfg.w_sap > 0.0 {
        let logits = g.narrow(band_logits, 0, BAND_COUNT)?;
        let ce = g.cross_entropy_loss(logits, sap_band)?;
        let scaled = g.scale_const(ce, cfg.w_sap);
        loss = g.add(loss, scaled)?;
    }
    if cfg.w_ei > 0.0 {
        let logits = g.narrow(band_logits, BAND_COUNT, BAND_COUNT)?;
        let ce = g.cross_entropy_loss(logits, ei_band)?;
        let scaled = g.scale_const(ce, cfg.w_ei);
        loss = g.add(loss, scaled)?;
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    fn identity_scaler() -> TargetScaler {
        TargetScaler {
            mean: [0.0, 0.0],
            std: [1.0, 1.0],
        }
    }

    fn eval_loss(cfg: &LossConfig) -> f64 {
        let mut g = Graph::new();
        let y_hat = g.input(Tensor::new(vec![2, 2], vec![1.0, 1.0, 0.0, 0.5]).unwrap());
        let mut logits = vec![0.0; 2 * 14];
        logits[0] = 1.0; // sample 0, sap class 0
        logits[7 + 3] = 2.0; // sample 0, ei class 3
        logits[14 + 2] = 0.5; // sample 1, sap class 2
        let band = g.input(Tensor::new(vec![2, 14], logits).unwrap());
        let targets = [[0.5, 1.0], [2.0, -1.0]];
        let loss = total_loss(
            &mut g,
            y_hat,
            band,
            &targets,
            &[0, 2],
            &[3, 6],
            &identity_scaler(),
            cfg,
        )
        .unwrap();
        g.value(loss).data()[0]
    }

    #[test]
    fn matches_hand_computed_two_sample_batch() {
        // Huber (delta 1) on errors {0.5, 0, -2, 1.5}, averaged over 4:
        // (0.125 + 0 + 1.5 + 1.0) / 4 = 0.65625.
        let huber = 0.65625;
        // Softmax cross-entropy per sample from the planted logits.
        let ce = |hot: f64, n_others: f64| (hot.exp() + n_others).ln() - hot;
        let ce_sap = (ce(1.0, 6.0) + ce(0.5, 6.0)) / 2.0;
        let ce_ei = (ce(2.0, 6.0) + ((1.0f64 + 6.0).ln() - 0.0)) / 2.0;
        let expect = huber + 0.1 * ce_sap + 0.1 * ce_ei;
        let got = eval_loss(&LossConfig::default());
        assert!(
            (got - expect).abs() < 1e-12,
            "got {got}, expected {expect}"
        );
    }

    #[test]
    fn zero_weights_reduce_to_huber() {
        let cfg = LossConfig {
            delta: 1.0,
            w_sap: 0.0,
            w_ei: 0.0,
        };
        assert_eq!(eval_loss(&cfg), 0.65625);
    }

    #[test]
    fn perfect_fit_with_saturated_logits_is_near_zero() {
        let mut g = Graph::new();
        let y_hat = g.input(Tensor::new(vec![1, 2], vec![0.25, -0.5]).unwrap());
        let mut logits = vec![-50.0; 14];
        logits[1] = 50.0;
        logits[7 + 4] = 50.0;
        let band = g.input(Tensor::new(vec![1, 14], logits).unwrap());
        let loss = total_loss(
            &mut g,
            y_hat,
            band,
            &[[0.25, -0.5]],
            &[1],
            &[4],
            &identity_scaler(),
            &LossConfig::default(),
        )
        .unwrap();
        assert!(g.value(loss).data()[0] < 1e-12);
    }

    #[test]
    fn scaler_moves_targets_to_normalized_space() {
        let scaler = TargetScaler {
            mean: [50.0, 60.0],
            std: [10.0, 20.0],
        };
        let mut g = Graph::new();
        let y_hat = g.input(Tensor::new(vec![1, 2], vec![0.5, -0.25]).unwrap());
        let band = g.input(Tensor::zeros(vec![1, 14]));
        let cfg = LossConfig {
            delta: 1.0,
            w_sap: 0.0,
            w_ei: 0.0,
        };
        // Raw (55, 55) normalizes to (0.5, -0.25): exact fit, zero loss.
        let loss = total_loss(&mut g, y_hat, band, &[[55.0, 55.0]], &[2], &[2], &scaler, &cfg)
            .unwrap();
        assert_eq!(g.value(loss).data()[0], 0.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = LossConfig::default();
        cfg.delta = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = LossConfig::default();
        cfg.w_sap = -0.1;
        assert!(cfg.validate().is_err());
    }
}
