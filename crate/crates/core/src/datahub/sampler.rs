//! Label-balanced batch construction.
//!
//! Batches hold the joint (SAP partition, EI partition) label mix of the
//! remaining pool as closely as integer counts allow, via largest-remainder
//! apportionment computed against what is left rather than the full epoch.
//! Each epoch covers every training index exactly once; only the final batch
//! may run short.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{BandTable, PropertyRecord};
use crate::diffcore::mix_seed;
use crate::error::{Error, Result};

pub fn balanced_batches(
    records: &[PropertyRecord],
    train_idxs: &[usize],
    table: &BandTable,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".to_string()));
    }
    if train_idxs.is_empty() {
        return Err(Error::EmptyInput("balanced batches".to_string()));
    }
    let mut queues: BTreeMap<(u8, u8), Vec<usize>> = BTreeMap::new();
    for &i in train_idxs {
        let rec: &PropertyRecord = &records[i];
        let key = (
            BandTable::partition(table.band(rec.sap_score)?).index() as u8,
            BandTable::partition(table.band(rec.ei_score)?).index() as u8,
        );
        queues.entry(key).or_default().push(i);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(seed, epoch));
    for q in queues.values_mut() {
        q.shuffle(&mut rng);
    }
    let mut pools: Vec<Vec<usize>> = queues.into_values().collect();
    let mut remaining: usize = pools.iter().map(Vec::len).sum();
    let mut batches = Vec::with_capacity(remaining.div_ceil(batch_size));
    while remaining > 0 {
        let size = batch_size.min(remaining);
        // Largest-remainder quotas over the remaining counts.
        let mut quotas: Vec<usize> = Vec::with_capacity(pools.len());
        let mut fracs: Vec<(f64, usize)> = Vec::with_capacity(pools.len());
        let mut assigned = 0usize;
        for (j, pool) in pools.iter().enumerate() {
            let exact = size as f64 * pool.len() as f64 / remaining as f64;
            let q = exact.floor() as usize;
            quotas.push(q);
            assigned += q;
            fracs.push((exact - q as f64, j));
        }
        // Ties break toward the lower label index.
        fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite").then(a.1.cmp(&b.1)));
        for &(_, j) in fracs.iter().take(size - assigned) {
            quotas[j] += 1;
        }
        let mut batch = Vec::with_capacity(size);
        for (pool, &q) in pools.iter_mut().zip(&quotas) {
            let at = pool.len() - q;
            batch.extend(pool.drain(at..));
        }
        remaining -= batch.len();
        debug_assert_eq!(batch.len(), size);
        batches.push(batch);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundarySequence, SpatialFeatures};

    fn rec(uprn: &str, sap: f64, ei: f64) -> PropertyRecord {
        PropertyRecord {
            uprn: uprn.to_string(),
            cats: Default::default(),
            nums: [0.0; 4],
            text: vec![None; 8],
            spatial: SpatialFeatures {
                footprint_area: 1.0,
                height: 1.0,
                orientation: 0.0,
            },
            boundary: BoundarySequence {
                points: vec![],
                r_max: 1.0,
                centroid: [0.0, 0.0],
            },
            footprint: vec![],
            sap_score: sap,
            ei_score: ei,
            needs_wall: false,
            needs_roof: false,
            needs_glazing: false,
        }
    }

    #[test]
    fn three_to_one_mix_gives_96_32() {
        // 768 records at (C,C) and 256 at (E,E): every full batch of 128
        // holds exactly 96 and 32.
        let mut records = Vec::new();
        for i in 0..768 {
            records.push(rec(&format!("a{i}"), 75.0, 75.0));
        }
        for i in 0..256 {
            records.push(rec(&format!("b{i}"), 45.0, 45.0));
        }
        let idxs: Vec<usize> = (0..records.len()).collect();
        let table = BandTable::default();
        let batches = balanced_batches(&records, &idxs, &table, 128, 5, 0).unwrap();
        assert_eq!(batches.len(), 8);
        for batch in &batches {
            assert_eq!(batch.len(), 128);
            let majority = batch.iter().filter(|&&i| i < 768).count();
            assert_eq!(majority, 96);
            assert_eq!(batch.len() - majority, 32);
        }
    }

    #[test]
    fn epoch_covers_each_index_exactly_once() {
        let mut records = Vec::new();
        for i in 0..107 {
            let sap = [95.0, 75.0, 60.0, 45.0, 10.0][i % 5];
            records.push(rec(&format!("r{i}"), sap, 75.0));
        }
        let idxs: Vec<usize> = (0..records.len()).step_by(2).collect();
        let table = BandTable::default();
        let batches = balanced_batches(&records, &idxs, &table, 16, 3, 2).unwrap();
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, idxs);
        // Only the last batch may be short.
        for b in &batches[..batches.len() - 1] {
            assert_eq!(b.len(), 16);
        }
    }

    #[test]
    fn deterministic_per_seed_and_epoch() {
        let records: Vec<PropertyRecord> = (0..50)
            .map(|i| rec(&format!("r{i}"), 40.0 + (i % 50) as f64, 60.0))
            .collect();
        let idxs: Vec<usize> = (0..50).collect();
        let table = BandTable::default();
        let a = balanced_batches(&records, &idxs, &table, 8, 7, 1).unwrap();
        let b = balanced_batches(&records, &idxs, &table, 8, 7, 1).unwrap();
        let c = balanced_batches(&records, &idxs, &table, 8, 7, 2).unwrap();
        let d = balanced_batches(&records, &idxs, &table, 8, 8, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
