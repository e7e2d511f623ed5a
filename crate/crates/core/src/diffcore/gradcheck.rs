//! Central finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Base step; the actual step scales with the coordinate's magnitude.
    pub step: f64,
    /// Coordinates sampled per parameter tensor.
    pub samples_per_param: usize,
    pub seed: u64,
    /// Disagreement between the full-step and half-step quotients beyond
    /// which the coordinate is treated as locally non-smooth and skipped.
    pub smooth_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            samples_per_param: 4,
            seed: 0x9d5c,
            smooth_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// Coordinates where a kink sat inside the difference window, making
    /// the quotient meaningless as a derivative estimate.
    pub coords_skipped: usize,
    /// Parameter name, flat index, reverse-mode and finite-difference values
    /// at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Relative disagreement used throughout: |a-b| / max(floor, |a|+|b|).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of `build`'s scalar output against
/// central finite differences at sampled parameter coordinates.
///
/// `build` must be a pure function of the store: any stochastic op inside
/// (dropout) has to draw from fixed seeds, otherwise the difference
/// quotients measure noise.
///
/// Each coordinate is compared at an off-center base point rather than the
/// stored value: initializers put parameters exactly on piecewise
/// boundaries (zero biases whose whole fan-in is zeroed by relu or dropout
/// sit precisely on the relu kink), where the two one-sided slopes differ
/// and no difference quotient reproduces the reverse-mode convention.
///
/// Each quotient is then computed at the full and the half step. A smooth
/// function gives near-identical values; a piecewise boundary (relu, huber
/// transition) inside the window does not, and such coordinates say nothing
/// about the reverse-mode result, so they are skipped and counted.
pub fn grad_check<F>(
    store: &mut ParamStore,
    cfg: GradCheckConfig,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<(Graph, NodeId)>,
{
    // Any sub-step offset works; it only has to clear the stored value.
    const OFFSET: f64 = 0.37;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        coords_skipped: 0,
        worst: None,
    };
    store.zero_grads();
    let n_params = store.len();
    for pi in 0..n_params {
        let pid = ParamId(pi);
        let (len, name) = {
            let p = store.get(pid);
            (p.value.numel(), p.name.clone())
        };
        for _ in 0..cfg.samples_per_param.min(len) {
            let j = rng.gen_range(0..len);
            let original = store.get(pid).value.data()[j];
            let h = cfg.step * original.abs().max(1.0);
            let center = original + OFFSET * h;

            store.value_mut(pid).data_mut()[j] = center;
            let (mut graph, loss) = build(store)?;
            if !graph.value(loss).data()[0].is_finite() {
                return Err(Error::TrainingDiverged(
                    "non-finite loss during gradient check".to_string(),
                ));
            }
            graph.backward(loss)?;
            graph.flush_param_grads(store);
            let ad = store.get(pid).grad[j];
            store.zero_grads();

            let mut probe = |x: f64| -> Result<f64> {
                store.value_mut(pid).data_mut()[j] = x;
                let (g, l) = build(store)?;
                let v = g.value(l).data()[0];
                if !v.is_finite() {
                    return Err(Error::TrainingDiverged(
                        "non-finite loss during gradient check".to_string(),
                    ));
                }
                Ok(v)
            };
            let fd_full = (probe(center + h)? - probe(center - h)?) / (2.0 * h);
            let fd_half = (probe(center + 0.5 * h)? - probe(center - 0.5 * h)?) / h;
            store.value_mut(pid).data_mut()[j] = original;

            if rel_err(fd_full, fd_half) > cfg.smooth_tol {
                report.coords_skipped += 1;
                continue;
            }
            let err = rel_err(ad, fd_half);
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((name.clone(), j, ad, fd_half));
            }
        }
    }
    Ok(report)
}
