//! Retrofit scenario projection: score/cost/CO2 conversions, intervention
//! edits over eligible records, and per-property plus aggregate reporting.

mod artifacts;
mod convert;
mod scenario;

pub use artifacts::{write_scenario_csv, write_scenario_geojson};
pub use convert::{
    cost_from_sap, eco2_from_ei, ei_break_score, ei_from_eco2, sap_break_score, sap_from_cost,
    sap_unreachable_interval, CF_BREAK, ECF_BREAK,
};
pub use scenario::{
    apply_scenario, evaluate_scenario, read_scenario_spec, EligibilityFlag, ScenarioAggregates,
    ScenarioException, ScenarioKind, ScenarioOutcome, ScenarioRow, ScenarioSpec,
};
