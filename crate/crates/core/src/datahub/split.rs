//! Joint stratified splitting and the split-file format.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{BandTable, PropertyRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidConfig(format!("split ratios {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Record indices per split, each sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Splits within each (property type, SAP band, EI band) stratum so the
/// joint label distribution carries over to every split. Strata with fewer
/// than 3 records go wholly to train. Deterministic for a given seed: strata
/// are visited in sorted key order with a single seeded generator.
pub fn joint_stratified_split(
    records: &[PropertyRecord],
    table: &BandTable,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Split> {
    ratios.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyInput("split".to_string()));
    }
    let mut strata: BTreeMap<(String, u8, u8), Vec<usize>> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        let key = (
            rec.cats[1].clone(), // property_type
            table.band(rec.sap_score)?.index() as u8,
            table.band(rec.ei_score)?.index() as u8,
        );
        strata.entry(key).or_default().push(i);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for (_, mut idxs) in strata {
        idxs.shuffle(&mut rng);
        let n = idxs.len();
        if n < 3 {
            split.train.extend(idxs);
            continue;
        }
        let n_train = (ratios.train * n as f64).floor() as usize;
        let n_val = (ratios.val * n as f64).floor() as usize;
        split.train.extend(&idxs[..n_train]);
        split.val.extend(&idxs[n_train..n_train + n_val]);
        split.test.extend(&idxs[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitFile {
    seed: u64,
    train: Vec<String>,
    val: Vec<String>,
    test: Vec<String>,
}

pub fn write_split_json(path: &Path, records: &[PropertyRecord], split: &Split) -> Result<()> {
    let uprns = |idxs: &[usize]| idxs.iter().map(|&i| records[i].uprn.clone()).collect();
    let file = SplitFile {
        seed: split.seed,
        train: uprns(&split.train),
        val: uprns(&split.val),
        test: uprns(&split.test),
    };
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Loads a split file and resolves its uprns against the given records.
/// Unknown uprns, duplicates, or records missing from the file are errors:
/// a stale split must not silently drop data.
pub fn read_split_json(path: &Path, records: &[PropertyRecord]) -> Result<Split> {
    let text = std::fs::read_to_string(path)?;
    let file: SplitFile = serde_json::from_str(&text)?;
    let mut by_uprn: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        by_uprn.insert(rec.uprn.as_str(), i);
    }
    let mut seen = vec![false; records.len()];
    let mut resolve = |uprns: &[String]| -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(uprns.len());
        for u in uprns {
            let &i = by_uprn.get(u.as_str()).ok_or_else(|| Error::ParseError {
                source_name: "split.json".to_string(),
                line: 0,
                detail: format!("unknown uprn {u}"),
            })?;
            if seen[i] {
                return Err(Error::DuplicateKey {
                    key: u.clone(),
                    source_name: "split.json".to_string(),
                });
            }
            seen[i] = true;
            out.push(i);
        }
        out.sort_unstable();
        Ok(out)
    };
    let split = Split {
        train: resolve(&file.train)?,
        val: resolve(&file.val)?,
        test: resolve(&file.test)?,
        seed: file.seed,
    };
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::ParseError {
            source_name: "split.json".to_string(),
            line: 0,
            detail: format!("record {} not assigned to any split", records[missing].uprn),
        });
    }
    Ok(split)
}
