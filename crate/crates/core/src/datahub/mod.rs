//! Dataset assembly: ingest and linkage of the three sources, banding,
//! target scaling, train/val/test splitting, and balanced batch sampling.

mod bands;
mod featurizer;
mod ingest;
mod sampler;
mod scaler;
mod split;

pub use bands::{
    band_accuracy, confusion_matrix_merged, Band, BandTable, Partition, BAND_COUNT,
    PARTITION_COUNT,
};
pub use featurizer::{Featurizer, Vocab};
pub use ingest::{
    link_records, read_boundaries_jsonl, read_embedding_map_jsonl, read_properties_csv,
    read_text_embeddings_jsonl, EpcRow, IngestOptions, IngestReport, PROPERTIES_HEADER,
};
pub use sampler::balanced_batches;
pub use scaler::TargetScaler;
pub use split::{
    joint_stratified_split, read_split_json, write_split_json, Split, SplitRatios,
};

use crate::geometry::{BoundarySequence, SpatialFeatures};

/// Categorical EPC fields, in schema order.
pub const CAT_FIELDS: [&str; 5] = [
    "construction_age_band",
    "property_type",
    "built_form",
    "energy_tariff",
    "main_fuel",
];

/// Numeric EPC fields, in schema order.
pub const NUM_FIELDS: [&str; 4] = [
    "total_floor_area",
    "number_habitable_rooms",
    "number_heated_rooms",
    "photo_supply",
];

/// Free-text EPC fields carried as precomputed sentence embeddings.
pub const TEXT_FIELDS: [&str; 8] = [
    "walls",
    "roof",
    "windows",
    "floor",
    "mainheat",
    "mainheatcont",
    "hotwater",
    "lighting",
];

/// Index of a text field name, if known.
pub fn text_field_index(name: &str) -> Option<usize> {
    TEXT_FIELDS.iter().position(|&f| f == name)
}

/// One fully linked property: EPC tabular fields, text-field embeddings,
/// processed geometry, targets, and retrofit eligibility flags.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyRecord {
    pub uprn: String,
    /// Aligned with [`CAT_FIELDS`]; empty string means unknown.
    pub cats: [String; 5],
    /// Aligned with [`NUM_FIELDS`]; NaN means missing.
    pub nums: [f64; 4],
    /// Aligned with [`TEXT_FIELDS`]; at least one entry is always present.
    pub text: Vec<Option<Vec<f64>>>,
    pub spatial: SpatialFeatures,
    pub boundary: BoundarySequence,
    /// Original exterior ring, kept for map output.
    pub footprint: Vec<[f64; 2]>,
    pub sap_score: f64,
    pub ei_score: f64,
    pub needs_wall: bool,
    pub needs_roof: bool,
    pub needs_glazing: bool,
}

impl PropertyRecord {
    /// Number of text fields present.
    pub fn text_count(&self) -> usize {
        self.text.iter().filter(|t| t.is_some()).count()
    }
}
