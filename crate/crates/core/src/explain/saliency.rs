//! Input-gradient saliency over boundary points.

use serde::{Deserialize, Serialize};

use crate::diffcore::Graph;
use crate::error::{Error, Result};
use crate::fusionnet::{make_batch, FusionModel, Modality, Mode};
use crate::trainer::Pipeline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSaliency {
    pub uprn: String,
    /// Normalized boundary polyline the gradients refer to.
    pub points: Vec<[f64; 2]>,
    /// Per-point gradient magnitude of the SAP prediction, score scale.
    pub sap: Vec<f64>,
    pub ei: Vec<f64>,
}

/// Gradient of each raw-scale prediction w.r.t. the boundary points of one
/// property, reduced to an L2 magnitude per point.
pub fn point_saliency(model: &FusionModel, pipe: &Pipeline, idx: usize) -> Result<PointSaliency> {
    if !model.modalities().contains(Modality::Spatial) {
        return Err(Error::InvalidConfig(
            "point saliency needs a model with the spatial encoder".into(),
        ));
    }
    let (batch, _) = make_batch(
        pipe.records,
        &[idx],
        pipe.vocab,
        pipe.featurizer,
        pipe.bands,
        model.config(),
    )?;
    let l = model.config().boundary_len;
    let mut per_target = Vec::with_capacity(2);
    for t in 0..2 {
        let mut g = Graph::new();
        let nodes = model.forward(&mut g, &batch, Mode::Eval)?;
        let boundary = nodes.boundary_input.ok_or_else(|| Error::ShapeError {
            op: "point_saliency".into(),
            detail: "spatial model produced no boundary input node".into(),
        })?;
        // y_hat is (1, 2) in normalized units; picking one column and
        // scaling by the target's std gives the raw-scale gradient.
        let mut coef = vec![0.0; 2];
        coef[t] = 1.0;
        let score = g.weighted_sum(nodes.y_hat, coef)?;
        g.backward(score)?;
        let grad = g.grad(boundary).ok_or_else(|| Error::ShapeError {
            op: "point_saliency".into(),
            detail: "boundary input received no gradient".into(),
        })?;
        let std = pipe.scaler.std[t];
        let mags: Vec<f64> = (0..l)
            .map(|p| std * (grad[p * 2].powi(2) + grad[p * 2 + 1].powi(2)).sqrt())
            .collect();
        per_target.push(mags);
    }
    let ei = per_target.pop().expect("two targets");
    let sap = per_target.pop().expect("two targets");
    Ok(PointSaliency {
        uprn: pipe.records[idx].uprn.clone(),
        points: pipe.records[idx].boundary.points.clone(),
        sap,
        ei,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::{BandTable, Featurizer, TargetScaler, Vocab};
    use crate::fusionnet::ModalitySet;
    use crate::trainer::tests_support::{tiny_model_config, toy_records};

    #[test]
    fn gradient_magnitudes_match_finite_differences() {
        let records = toy_records(6, 12);
        let idxs: Vec<usize> = (0..records.len()).collect();
        let vocab = Vocab::build(&records);
        let feat = Featurizer::fit(&records, &idxs).unwrap();
        let scaler = TargetScaler::fit(&records, &idxs).unwrap();
        let bands = BandTable::default();
        let pipe = Pipeline {
            records: &records,
            vocab: &vocab,
            featurizer: &feat,
            scaler: &scaler,
            bands: &bands,
        };
        let model =
            FusionModel::new(&tiny_model_config(), ModalitySet::full(), vocab.sizes(), 7).unwrap();
        let sal = point_saliency(&model, &pipe, 2).unwrap();
        assert_eq!(sal.uprn, "u2");
        assert_eq!(sal.points.len(), 8);
        assert_eq!(sal.sap.len(), 8);
        assert_eq!(sal.ei.len(), 8);

        // Rebuild the raw gradient for SAP via central differences on the
        // batch boundary tensor and compare point magnitudes.
        let (batch, _) = make_batch(&records, &[2], &vocab, &feat, &bands, model.config()).unwrap();
        let eps = 1e-5;
        let std = scaler.std[0];
        for p in 0..8 {
            let mut fd = [0.0f64; 2];
            for c in 0..2 {
                let mut plus = batch.clone();
                plus.boundary.data_mut()[p * 2 + c] += eps;
                let mut minus = batch.clone();
                minus.boundary.data_mut()[p * 2 + c] -= eps;
                let yp = model.predict(&plus).unwrap().y_hat.data()[0];
                let ym = model.predict(&minus).unwrap().y_hat.data()[0];
                fd[c] = (yp - ym) / (2.0 * eps);
            }
            let fd_mag = std * (fd[0] * fd[0] + fd[1] * fd[1]).sqrt();
            let got = sal.sap[p];
            let rel = (got - fd_mag).abs() / (got.abs() + fd_mag.abs()).max(1e-8);
            assert!(rel < 1e-4, "point {p}: ad {got} vs fd {fd_mag}");
        }
    }

    #[test]
    fn non_spatial_model_is_rejected() {
        let records = toy_records(4, 1);
        let idxs: Vec<usize> = (0..records.len()).collect();
        let vocab = Vocab::build(&records);
        let feat = Featurizer::fit(&records, &idxs).unwrap();
        let scaler = TargetScaler::fit(&records, &idxs).unwrap();
        let bands = BandTable::default();
        let pipe = Pipeline {
            records: &records,
            vocab: &vocab,
            featurizer: &feat,
            scaler: &scaler,
            bands: &bands,
        };
        let model = FusionModel::new(
            &tiny_model_config(),
            ModalitySet::new(&[crate::fusionnet::Modality::Tabular]).unwrap(),
            vocab.sizes(),
            7,
        )
        .unwrap();
        assert_eq!(point_saliency(&model, &pipe, 0).unwrap_err().kind(), "invalid_config");
    }
}
