//! Score/cost/emission conversions.
//!
//! SAP is tied to annual energy cost through the energy cost factor
//! ECF = d * cost / (TFA + 45); EI to annual CO2 through the carbon factor
//! CF = eCO2 / (TFA + 45). Both score maps are piecewise with a log branch
//! strictly above the breakpoint and a linear branch at and below it,
//! clamped to [1, 100]. The linear branch owns the breakpoint so that the
//! inverse (which switches at the linear-branch score) round-trips there;
//! the two branches differ only at that single factor value.

use crate::error::{Error, Result};

/// ECF value where the SAP formula switches branches.
pub const ECF_BREAK: f64 = 3.5;
/// CF value where the EI formula switches branches.
pub const CF_BREAK: f64 = 28.3;

/// SAP score at the breakpoint as the linear branch sees it. The inverse
/// uses the linear branch from this score upward.
pub fn sap_break_score() -> f64 {
    100.0 - 16.21 * ECF_BREAK
}

/// EI score at the breakpoint as the linear branch sees it.
pub fn ei_break_score() -> f64 {
    100.0 - 1.34 * CF_BREAK
}

/// Open score interval no ECF reaches: the log branch tops out at
/// 108.8 - 120.5*log10(3.5) = 43.2398 while the linear branch never goes
/// below 43.265. Scores inside invert onto the wrong branch side, so
/// round-trip checks skip them. The EI map has no such gap: its branches
/// overlap instead.
pub fn sap_unreachable_interval() -> (f64, f64) {
    (108.8 - 120.5 * ECF_BREAK.log10(), sap_break_score())
}

fn positive(what: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::OutOfRange(format!("{what} must be positive, got {v}")));
    }
    Ok(())
}

fn score(what: &str, v: f64) -> Result<()> {
    if !v.is_finite() || !(1.0..=100.0).contains(&v) {
        return Err(Error::OutOfRange(format!("{what} must lie in [1, 100], got {v}")));
    }
    Ok(())
}

/// SAP score implied by an annual energy cost in GBP/yr, for a dwelling of
/// `tfa` m^2 under tariff deflator `d`.
pub fn sap_from_cost(cost: f64, tfa: f64, d: f64) -> Result<f64> {
    positive("annual cost", cost)?;
    positive("floor area", tfa)?;
    positive("tariff deflator", d)?;
    let ecf = d * cost / (tfa + 45.0);
    let raw = if ecf > ECF_BREAK {
        108.8 - 120.5 * ecf.log10()
    } else {
        100.0 - 16.21 * ecf
    };
    Ok(raw.clamp(1.0, 100.0))
}

/// Annual energy cost in GBP/yr implied by a SAP score.
pub fn cost_from_sap(sap: f64, tfa: f64, d: f64) -> Result<f64> {
    score("sap", sap)?;
    positive("floor area", tfa)?;
    positive("tariff deflator", d)?;
    let ecf = if sap >= sap_break_score() {
        (100.0 - sap) / 16.21
    } else {
        10f64.powf((108.8 - sap) / 120.5)
    };
    Ok(ecf * (tfa + 45.0) / d)
}

/// EI score implied by annual equivalent CO2 emissions in kg/yr.
pub fn ei_from_eco2(eco2: f64, tfa: f64) -> Result<f64> {
    positive("annual emissions", eco2)?;
    positive("floor area", tfa)?;
    let cf = eco2 / (tfa + 45.0);
    let raw = if cf > CF_BREAK {
        200.0 - 95.0 * cf.log10()
    } else {
        100.0 - 1.34 * cf
    };
    Ok(raw.clamp(1.0, 100.0))
}

/// Annual equivalent CO2 emissions in kg/yr implied by an EI score.
pub fn eco2_from_ei(ei: f64, tfa: f64) -> Result<f64> {
    score("ei", ei)?;
    positive("floor area", tfa)?;
    let cf = if ei >= ei_break_score() {
        (100.0 - ei) / 1.34
    } else {
        10f64.powf((200.0 - ei) / 95.0)
    };
    Ok(cf * (tfa + 45.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn worked_sap_examples() {
        // ECF = 1000/145 = 6.8966, log branch.
        let sap = sap_from_cost(1000.0, 100.0, 1.0).unwrap();
        assert_relative_eq!(sap, 108.8 - 120.5 * (1000.0f64 / 145.0).log10(), epsilon = 1e-12);
        assert!((sap - 7.74).abs() < 0.01);
        // ECF = 1, linear branch.
        assert_relative_eq!(sap_from_cost(145.0, 100.0, 1.0).unwrap(), 83.79, epsilon = 1e-12);
        // Inverse of the linear example lands back on the cost.
        assert_relative_eq!(cost_from_sap(83.79, 100.0, 1.0).unwrap(), 145.0, epsilon = 1e-9);
    }

    #[test]
    fn worked_ei_examples() {
        // CF = 10, linear branch.
        assert_relative_eq!(ei_from_eco2(1000.0, 55.0).unwrap(), 86.6, epsilon = 1e-12);
        // Branch values at CF = 28.3.
        let linear = 100.0 - 1.34 * CF_BREAK;
        let log = 200.0 - 95.0 * CF_BREAK.log10();
        assert!((linear - log).abs() < 0.01);
    }

    #[test]
    fn sap_branch_gap_is_small_and_where_expected() {
        let (lo, hi) = sap_unreachable_interval();
        assert!(lo < hi);
        assert!((hi - lo) < 0.03);
        assert_relative_eq!(hi, 43.265, epsilon = 1e-9);
        assert!((lo - 43.2398).abs() < 1e-3);
    }

    #[test]
    fn round_trips_at_spec_scores() {
        for s in [20.0, 43.265, 50.0, 90.0] {
            let cost = cost_from_sap(s, 80.0, 1.0).unwrap();
            let back = sap_from_cost(cost, 80.0, 1.0).unwrap();
            assert!((back - s).abs() / s < 1e-9, "sap {s} -> {back}");
        }
        for e in [30.0, 62.08, 90.0] {
            let eco2 = eco2_from_ei(e, 80.0).unwrap();
            let back = ei_from_eco2(eco2, 80.0).unwrap();
            assert!((back - e).abs() / e < 1e-9, "ei {e} -> {back}");
        }
    }

    #[test]
    fn round_trips_on_grid_outside_the_gap() {
        // Endpoints excluded: sap 100 inverts to cost 0, outside the
        // forward domain.
        let (lo, hi) = sap_unreachable_interval();
        for i in 1..=1000 {
            let s = 1.0 + 99.0 * i as f64 / 1001.0;
            if s > lo && s < hi {
                continue;
            }
            let back = sap_from_cost(cost_from_sap(s, 92.0, 1.25).unwrap(), 92.0, 1.25).unwrap();
            assert!((back - s).abs() / s < 1e-9, "sap grid {s} -> {back}");
            let back = ei_from_eco2(eco2_from_ei(s, 92.0).unwrap(), 92.0).unwrap();
            assert!((back - s).abs() / s < 1e-9, "ei grid {s} -> {back}");
        }
    }

    #[test]
    fn forward_maps_are_monotone_non_increasing() {
        // 100k-point log grid over ECF (equivalently CF) in [1e-3, 1e3];
        // tfa 55 makes cost = 100 * factor.
        let mut prev_sap = f64::INFINITY;
        let mut prev_ei = f64::INFINITY;
        for i in 0..100_000 {
            let f = 10f64.powf(-3.0 + 6.0 * i as f64 / 99_999.0);
            let sap = sap_from_cost(100.0 * f, 55.0, 1.0).unwrap();
            let ei = ei_from_eco2(100.0 * f, 55.0).unwrap();
            assert!(sap <= prev_sap + 1e-12, "sap rose at factor {f}");
            assert!(ei <= prev_ei + 1e-12, "ei rose at factor {f}");
            prev_sap = sap;
            prev_ei = ei;
        }
    }

    #[test]
    fn deflator_scaling_is_exact_for_binary_factors() {
        for s in [10.0, 43.0, 43.3, 62.0, 62.1, 95.0] {
            let base = cost_from_sap(s, 77.0, 0.9).unwrap();
            assert_eq!(cost_from_sap(s, 77.0, 1.8).unwrap(), base / 2.0);
            assert_eq!(cost_from_sap(s, 77.0, 3.6).unwrap(), base / 4.0);
        }
    }

    #[test]
    fn score_improvement_means_cost_reduction_outside_the_gap() {
        let (lo, hi) = sap_unreachable_interval();
        let mut scores: Vec<f64> = (0..500)
            .map(|i| 1.0 + 99.0 * i as f64 / 499.0)
            .filter(|&s| !(s > lo && s < hi))
            .collect();
        scores.push(43.2);
        scores.push(43.27);
        scores.sort_by(f64::total_cmp);
        for w in scores.windows(2) {
            if w[0] == w[1] {
                continue;
            }
            let c0 = cost_from_sap(w[0], 64.0, 1.0).unwrap();
            let c1 = cost_from_sap(w[1], 64.0, 1.0).unwrap();
            assert!(c1 < c0, "cost failed to fall from sap {} to {}", w[0], w[1]);
        }
    }

    #[test]
    fn out_of_range_inputs_are_rejected() {
        assert_eq!(sap_from_cost(0.0, 80.0, 1.0).unwrap_err().kind(), "out_of_range");
        assert_eq!(sap_from_cost(100.0, -1.0, 1.0).unwrap_err().kind(), "out_of_range");
        assert_eq!(sap_from_cost(100.0, 80.0, 0.0).unwrap_err().kind(), "out_of_range");
        assert_eq!(cost_from_sap(0.5, 80.0, 1.0).unwrap_err().kind(), "out_of_range");
        assert_eq!(cost_from_sap(101.0, 80.0, 1.0).unwrap_err().kind(), "out_of_range");
        assert_eq!(cost_from_sap(f64::NAN, 80.0, 1.0).unwrap_err().kind(), "out_of_range");
        assert_eq!(ei_from_eco2(-3.0, 80.0).unwrap_err().kind(), "out_of_range");
        assert_eq!(eco2_from_ei(0.0, 80.0).unwrap_err().kind(), "out_of_range");
        // sap = 100 maps to zero cost on the linear branch.
        assert_eq!(cost_from_sap(100.0, 80.0, 1.0).unwrap(), 0.0);
    }
}
