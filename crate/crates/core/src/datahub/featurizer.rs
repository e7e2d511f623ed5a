use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{PropertyRecord, CAT_FIELDS};
use crate::error::{Error, Result};

/// Categorical vocabularies. Index 0 is reserved for unknown or empty
/// values; known values are numbered 1.. in sorted order, so the mapping is
/// independent of record order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    maps: [BTreeMap<String, u32>; 5],
}

impl Vocab {
    pub fn build(records: &[PropertyRecord]) -> Vocab {
        let mut maps: [BTreeMap<String, u32>; 5] = Default::default();
        for rec in records {
            for (f, val) in rec.cats.iter().enumerate() {
                if !val.is_empty() {
                    maps[f].entry(val.clone()).or_insert(0);
                }
            }
        }
        for map in &mut maps {
            for (i, (_, v)) in map.iter_mut().enumerate() {
                *v = (i + 1) as u32;
            }
        }
        Vocab { maps }
    }

    /// Table sizes including the unknown slot.
    pub fn sizes(&self) -> [usize; 5] {
        let mut s = [0; 5];
        for (i, m) in self.maps.iter().enumerate() {
            s[i] = m.len() + 1;
        }
        s
    }

    /// Index of a value; unknown and empty map to 0.
    pub fn lookup(&self, field: usize, value: &str) -> u32 {
        self.maps[field].get(value).copied().unwrap_or(0)
    }

    /// Values of one field in index order (1..), for serialization.
    pub fn values(&self, field: usize) -> Vec<&str> {
        self.maps[field].keys().map(String::as_str).collect()
    }

    /// Rebuilds a vocabulary from per-field value lists in index order.
    pub fn from_values(lists: [Vec<String>; 5]) -> Result<Vocab> {
        let mut maps: [BTreeMap<String, u32>; 5] = Default::default();
        for (f, list) in lists.into_iter().enumerate() {
            for (i, v) in list.into_iter().enumerate() {
                if maps[f].insert(v, (i + 1) as u32).is_some() {
                    return Err(Error::InvalidConfig(format!(
                        "duplicate vocabulary value in field {}",
                        CAT_FIELDS[f]
                    )));
                }
            }
        }
        // Sorted-order indices are an invariant other code relies on.
        for map in &maps {
            let mut last = 0;
            for &v in map.values() {
                if v != last + 1 {
                    return Err(Error::InvalidConfig(
                        "vocabulary values out of sorted order".to_string(),
                    ));
                }
                last = v;
            }
        }
        Ok(Vocab { maps })
    }
}

/// Numeric preprocessing fitted on the training split: median imputation
/// for missing values, then z-scoring with population statistics. Constant
/// columns standardize to zero via a unit divisor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub medians: [f64; 4],
    pub num_mean: [f64; 4],
    pub num_std: [f64; 4],
    pub spat_mean: [f64; 3],
    pub spat_std: [f64; 3],
}

fn median(sorted: &mut Vec<f64>) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

impl Featurizer {
    pub fn fit(records: &[PropertyRecord], train_idxs: &[usize]) -> Result<Self> {
        if train_idxs.is_empty() {
            return Err(Error::EmptyInput("featurizer training split".to_string()));
        }
        let mut medians = [0.0; 4];
        for c in 0..4 {
            let mut vals: Vec<f64> = train_idxs
                .iter()
                .map(|&i| records[i].nums[c])
                .filter(|v| !v.is_nan())
                .collect();
            medians[c] = median(&mut vals).ok_or_else(|| {
                Error::EmptyInput(format!(
                    "numeric column {} has no observed training values",
                    super::NUM_FIELDS[c]
                ))
            })?;
        }
        let n = train_idxs.len() as f64;
        let mut num_mean = [0.0; 4];
        let mut spat_mean = [0.0; 3];
        for &i in train_idxs {
            let r = &records[i];
            for c in 0..4 {
                let v = if r.nums[c].is_nan() { medians[c] } else { r.nums[c] };
                num_mean[c] += v;
            }
            spat_mean[0] += r.spatial.footprint_area;
            spat_mean[1] += r.spatial.height;
            spat_mean[2] += r.spatial.orientation;
        }
        num_mean.iter_mut().for_each(|m| *m /= n);
        spat_mean.iter_mut().for_each(|m| *m /= n);
        let mut num_var = [0.0; 4];
        let mut spat_var = [0.0; 3];
        for &i in train_idxs {
            let r = &records[i];
            for c in 0..4 {
                let v = if r.nums[c].is_nan() { medians[c] } else { r.nums[c] };
                num_var[c] += (v - num_mean[c]).powi(2);
            }
            spat_var[0] += (r.spatial.footprint_area - spat_mean[0]).powi(2);
            spat_var[1] += (r.spatial.height - spat_mean[1]).powi(2);
            spat_var[2] += (r.spatial.orientation - spat_mean[2]).powi(2);
        }
        let floor = |v: f64| {
            let s = (v / n).sqrt();
            if s < 1e-12 {
                1.0
            } else {
                s
            }
        };
        Ok(Featurizer {
            medians,
            num_mean,
            num_std: [
                floor(num_var[0]),
                floor(num_var[1]),
                floor(num_var[2]),
                floor(num_var[3]),
            ],
            spat_mean,
            spat_std: [floor(spat_var[0]), floor(spat_var[1]), floor(spat_var[2])],
        })
    }

    /// Categorical indices and standardized numerics for one record.
    pub fn tabular_row(&self, vocab: &Vocab, rec: &PropertyRecord) -> ([u32; 5], [f64; 4]) {
        let mut cats = [0u32; 5];
        for f in 0..5 {
            cats[f] = vocab.lookup(f, &rec.cats[f]);
        }
        let mut nums = [0.0; 4];
        for c in 0..4 {
            let v = if rec.nums[c].is_nan() {
                self.medians[c]
            } else {
                rec.nums[c]
            };
            nums[c] = (v - self.num_mean[c]) / self.num_std[c];
        }
        (cats, nums)
    }

    /// Standardized (area, height, orientation) for one record.
    pub fn spatial_row(&self, rec: &PropertyRecord) -> [f64; 3] {
        [
            (rec.spatial.footprint_area - self.spat_mean[0]) / self.spat_std[0],
            (rec.spatial.height - self.spat_mean[1]) / self.spat_std[1],
            (rec.spatial.orientation - self.spat_mean[2]) / self.spat_std[2],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundarySequence, SpatialFeatures};
    use approx::assert_relative_eq;

    fn rec(cat: &str, tfa: f64) -> PropertyRecord {
        PropertyRecord {
            uprn: String::new(),
            cats: [
                cat.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ],
            nums: [tfa, 4.0, 3.0, 0.0],
            text: vec![None; 8],
            spatial: SpatialFeatures {
                footprint_area: 50.0,
                height: 6.0,
                orientation: 0.5,
            },
            boundary: BoundarySequence {
                points: vec![],
                r_max: 1.0,
                centroid: [0.0, 0.0],
            },
            footprint: vec![],
            sap_score: 50.0,
            ei_score: 50.0,
            needs_wall: false,
            needs_roof: false,
            needs_glazing: false,
        }
    }

    #[test]
    fn vocab_is_sorted_and_reserves_unknown() {
        let records = vec![rec("zeta", 80.0), rec("alpha", 90.0), rec("zeta", 70.0)];
        let v = Vocab::build(&records);
        assert_eq!(v.lookup(0, "alpha"), 1);
        assert_eq!(v.lookup(0, "zeta"), 2);
        assert_eq!(v.lookup(0, "missing"), 0);
        assert_eq!(v.lookup(0, ""), 0);
        assert_eq!(v.sizes()[0], 3);
        assert_eq!(v.sizes()[1], 1); // only the unknown slot

        let rebuilt = Vocab::from_values([
            v.values(0).iter().map(|s| s.to_string()).collect(),
            vec![],
            vec![],
            vec![],
            vec![],
        ])
        .unwrap();
        assert_eq!(rebuilt, v);
    }

    #[test]
    fn medians_impute_missing() {
        let mut records = vec![rec("a", 80.0), rec("a", 100.0), rec("a", f64::NAN)];
        records[2].nums[0] = f64::NAN;
        let f = Featurizer::fit(&records, &[0, 1, 2]).unwrap();
        assert_relative_eq!(f.medians[0], 90.0);
        // Missing value standardizes to the same thing as the median.
        let (_, row_missing) = f.tabular_row(&Vocab::build(&records), &records[2]);
        let with_median = {
            let mut r = records[2].clone();
            r.nums[0] = 90.0;
            f.tabular_row(&Vocab::build(&records), &r).1
        };
        assert_eq!(row_missing, with_median);
    }

    #[test]
    fn constant_columns_standardize_to_zero() {
        let records = vec![rec("a", 80.0), rec("a", 80.0)];
        let f = Featurizer::fit(&records, &[0, 1]).unwrap();
        let (_, nums) = f.tabular_row(&Vocab::build(&records), &records[0]);
        assert_eq!(nums[0], 0.0);
        assert_eq!(f.num_std[0], 1.0);
    }

    #[test]
    fn all_missing_column_errors() {
        let mut records = vec![rec("a", f64::NAN), rec("a", f64::NAN)];
        records[0].nums[0] = f64::NAN;
        records[1].nums[0] = f64::NAN;
        assert!(Featurizer::fit(&records, &[0, 1]).is_err());
    }

    #[test]
    fn standardization_uses_population_std() {
        let records = vec![rec("a", 80.0), rec("a", 100.0)];
        let f = Featurizer::fit(&records, &[0, 1]).unwrap();
        // Population std of {80,100} is 10.
        assert_relative_eq!(f.num_std[0], 10.0);
        let (_, nums) = f.tabular_row(&Vocab::build(&records), &records[0]);
        assert_relative_eq!(nums[0], -1.0);
    }
}
