//! Intervention scenarios: edit eligible records, re-predict, convert.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::convert::{cost_from_sap, eco2_from_ei};
use crate::datahub::{text_field_index, PropertyRecord, CAT_FIELDS, NUM_FIELDS};
use crate::error::{Error, Result};
use crate::fusionnet::FusionModel;
use crate::trainer::{predict_scores, Pipeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    WallInsulation,
    RoofInsulation,
    GlazingUpgrade,
    Custom,
}

impl ScenarioKind {
    pub fn label(self) -> &'static str {
        match self {
            ScenarioKind::WallInsulation => "wall_insulation",
            ScenarioKind::RoofInsulation => "roof_insulation",
            ScenarioKind::GlazingUpgrade => "glazing_upgrade",
            ScenarioKind::Custom => "custom",
        }
    }
}

/// Which ingested needs_* column gates the intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EligibilityFlag {
    NeedsWall,
    NeedsRoof,
    NeedsGlazing,
}

impl EligibilityFlag {
    pub fn label(self) -> &'static str {
        match self {
            EligibilityFlag::NeedsWall => "needs_wall",
            EligibilityFlag::NeedsRoof => "needs_roof",
            EligibilityFlag::NeedsGlazing => "needs_glazing",
        }
    }

    pub fn applies(self, record: &PropertyRecord) -> bool {
        match self {
            EligibilityFlag::NeedsWall => record.needs_wall,
            EligibilityFlag::NeedsRoof => record.needs_roof,
            EligibilityFlag::NeedsGlazing => record.needs_glazing,
        }
    }
}

fn default_deflator() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: ScenarioKind,
    pub eligibility_flag: EligibilityFlag,
    /// Text field -> key into the replacement-embedding dictionary.
    #[serde(default)]
    pub text_replacements: BTreeMap<String, String>,
    #[serde(default)]
    pub categorical_overrides: BTreeMap<String, String>,
    #[serde(default)]
    pub numeric_overrides: BTreeMap<String, f64>,
    #[serde(default = "default_deflator")]
    pub tariff_deflator: f64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.tariff_deflator.is_finite() || self.tariff_deflator <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tariff deflator must be positive, got {}",
                self.tariff_deflator
            )));
        }
        for field in self.text_replacements.keys() {
            if text_field_index(field).is_none() {
                return Err(Error::InvalidConfig(format!("unknown text field {field}")));
            }
        }
        for field in self.categorical_overrides.keys() {
            if !CAT_FIELDS.contains(&field.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "unknown categorical field {field}"
                )));
            }
        }
        for (field, value) in &self.numeric_overrides {
            if !NUM_FIELDS.contains(&field.as_str()) {
                return Err(Error::InvalidConfig(format!("unknown numeric field {field}")));
            }
            if !value.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "override for {field} must be finite, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Reads and validates a scenario file.
pub fn read_scenario_spec(path: &Path) -> Result<ScenarioSpec> {
    let text = std::fs::read_to_string(path)?;
    let spec: ScenarioSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    Ok(spec)
}

/// Applies the intervention to every eligible record and returns the
/// edited copy; the input is untouched and ineligible records pass through
/// verbatim.
pub fn apply_scenario(
    records: &[PropertyRecord],
    spec: &ScenarioSpec,
    replacements: &BTreeMap<String, Vec<f64>>,
) -> Result<Vec<PropertyRecord>> {
    spec.validate()?;
    let mut swaps: Vec<(usize, &Vec<f64>)> = Vec::with_capacity(spec.text_replacements.len());
    for (field, key) in &spec.text_replacements {
        let f = text_field_index(field).expect("validated");
        let vector = replacements.get(key).ok_or_else(|| {
            Error::InvalidConfig(format!("replacement embedding {key} not found"))
        })?;
        swaps.push((f, vector));
    }
    let cat_edits: Vec<(usize, &String)> = spec
        .categorical_overrides
        .iter()
        .map(|(field, v)| (CAT_FIELDS.iter().position(|c| c == field).expect("validated"), v))
        .collect();
    let num_edits: Vec<(usize, f64)> = spec
        .numeric_overrides
        .iter()
        .map(|(field, v)| (NUM_FIELDS.iter().position(|c| c == field).expect("validated"), *v))
        .collect();

    Ok(records
        .iter()
        .map(|r| {
            let mut out = r.clone();
            if spec.eligibility_flag.applies(r) {
                for (f, vector) in &swaps {
                    out.text[*f] = Some((*vector).clone());
                }
                for (c, value) in &cat_edits {
                    out.cats[*c] = (*value).clone();
                }
                for (n, value) in &num_edits {
                    out.nums[*n] = *value;
                }
            }
            out
        })
        .collect())
}

/// One property's pre/post scores and implied annual cost/emissions.
/// Conversion fields are None when the conversion failed for that row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub uprn: String,
    pub eligible: bool,
    pub sap_pre: f64,
    pub sap_post: f64,
    /// post - pre: positive means the score improved.
    pub delta_sap: f64,
    pub ei_pre: f64,
    pub ei_post: f64,
    pub delta_ei: f64,
    pub cost_pre: Option<f64>,
    pub cost_post: Option<f64>,
    /// pre - post: positive means money saved.
    pub delta_cost: Option<f64>,
    pub eco2_pre: Option<f64>,
    pub eco2_post: Option<f64>,
    /// pre - post: positive means emissions avoided.
    pub delta_eco2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioException {
    pub uprn: String,
    /// Which conversion failed: cost_pre, cost_post, eco2_pre, or eco2_post.
    pub quantity: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAggregates {
    pub n: usize,
    pub n_eligible: usize,
    /// Rows where at least one conversion failed.
    pub n_conversion_failures: usize,
    /// Sums over rows in row order; failed conversions contribute nothing.
    pub total_delta_cost: f64,
    pub total_delta_eco2: f64,
    /// Totals divided by the eligible count; None when nothing was eligible.
    pub mean_delta_cost: Option<f64>,
    pub mean_delta_eco2: Option<f64>,
    pub mean_delta_sap: Option<f64>,
    pub mean_delta_ei: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub spec: ScenarioSpec,
    pub rows: Vec<ScenarioRow>,
    pub exceptions: Vec<ScenarioException>,
    pub aggregates: ScenarioAggregates,
}

/// Predicts scores before and after the intervention over `idxs` and
/// converts both sides to annual cost and CO2 using each record's floor
/// area (the post side sees any overridden value). Per-row conversion
/// failures land in the exceptions list without aborting the sweep.
pub fn evaluate_scenario(
    model: &FusionModel,
    pipe: &Pipeline,
    idxs: &[usize],
    spec: &ScenarioSpec,
    replacements: &BTreeMap<String, Vec<f64>>,
    batch_size: usize,
) -> Result<ScenarioOutcome> {
    if idxs.is_empty() {
        return Err(Error::EmptyInput("scenario evaluation".into()));
    }
    let h = model.config().text_dim;
    for (field, key) in &spec.text_replacements {
        if let Some(v) = replacements.get(key) {
            if v.len() != h {
                return Err(Error::InvalidConfig(format!(
                    "replacement {key} for {field} has length {}, text width is {h}",
                    v.len()
                )));
            }
        }
    }
    let modified = apply_scenario(pipe.records, spec, replacements)?;
    let post_pipe = Pipeline {
        records: &modified,
        vocab: pipe.vocab,
        featurizer: pipe.featurizer,
        scaler: pipe.scaler,
        bands: pipe.bands,
    };
    let pre = predict_scores(model, pipe, idxs, batch_size)?;
    let post = predict_scores(model, &post_pipe, idxs, batch_size)?;

    let d = spec.tariff_deflator;
    let mut rows = Vec::with_capacity(idxs.len());
    let mut exceptions = Vec::new();
    let mut n_eligible = 0usize;
    let mut n_failures = 0usize;
    let mut totals = [0.0f64; 2];
    let mut score_totals = [0.0f64; 2];
    for (pos, &i) in idxs.iter().enumerate() {
        let rec = &pipe.records[i];
        let eligible = spec.eligibility_flag.applies(rec);
        n_eligible += eligible as usize;
        let tfa_pre = rec.nums[0];
        let tfa_post = modified[i].nums[0];
        let [sap_pre, ei_pre] = pre[pos];
        let [sap_post, ei_post] = post[pos];

        let mut failed = false;
        let mut convert = |quantity: &str, r: Result<f64>| match r {
            Ok(v) => Some(v),
            Err(e) => {
                failed = true;
                exceptions.push(ScenarioException {
                    uprn: rec.uprn.clone(),
                    quantity: quantity.to_string(),
                    detail: e.to_string(),
                });
                None
            }
        };
        let cost_pre = convert("cost_pre", cost_from_sap(sap_pre, tfa_pre, d));
        let cost_post = convert("cost_post", cost_from_sap(sap_post, tfa_post, d));
        let eco2_pre = convert("eco2_pre", eco2_from_ei(ei_pre, tfa_pre));
        let eco2_post = convert("eco2_post", eco2_from_ei(ei_post, tfa_post));
        n_failures += failed as usize;

        let delta_cost = cost_pre.zip(cost_post).map(|(a, b)| a - b);
        let delta_eco2 = eco2_pre.zip(eco2_post).map(|(a, b)| a - b);
        if let Some(v) = delta_cost {
            totals[0] += v;
        }
        if let Some(v) = delta_eco2 {
            totals[1] += v;
        }
        score_totals[0] += sap_post - sap_pre;
        score_totals[1] += ei_post - ei_pre;

        rows.push(ScenarioRow {
            uprn: rec.uprn.clone(),
            eligible,
            sap_pre,
            sap_post,
            delta_sap: sap_post - sap_pre,
            ei_pre,
            ei_post,
            delta_ei: ei_post - ei_pre,
            cost_pre,
            cost_post,
            delta_cost,
            eco2_pre,
            eco2_post,
            delta_eco2,
        });
    }

    let per_eligible = |total: f64| (n_eligible > 0).then(|| total / n_eligible as f64);
    let aggregates = ScenarioAggregates {
        n: idxs.len(),
        n_eligible,
        n_conversion_failures: n_failures,
        total_delta_cost: totals[0],
        total_delta_eco2: totals[1],
        mean_delta_cost: per_eligible(totals[0]),
        mean_delta_eco2: per_eligible(totals[1]),
        mean_delta_sap: per_eligible(score_totals[0]),
        mean_delta_ei: per_eligible(score_totals[1]),
    };
    Ok(ScenarioOutcome {
        spec: spec.clone(),
        rows,
        exceptions,
        aggregates,
    })
}
