//! Post-hoc attribution over a frozen model: gate-weight statistics,
//! exact Shapley values for the nine tabular features, text-field
//! occlusion, spatial feature and boundary permutations, and per-point
//! boundary saliency.

mod artifacts;
mod gates;
mod occlusion;
mod saliency;
mod shapley;
mod spatial;

pub use artifacts::{
    write_boundary_permutation_json, write_occlusion_csv, write_saliency_csv, write_shapley_csv,
    write_spatial_permutation_csv, Provenance,
};
pub use gates::{gate_weight_stats, GateStats, HISTOGRAM_BINS};
pub use occlusion::{text_field_occlusion, OcclusionReport, OcclusionRow};
pub use saliency::{point_saliency, PointSaliency};
pub use shapley::{exact_shapley, shapley_report, shapley_sample, ShapleyReport, TABULAR_FEATURES};
pub use spatial::{
    boundary_permutation, seeded_derangement, spatial_permutation, BoundaryPermutationReport,
    PermutationImportance, SpatialFeatureKind,
};
