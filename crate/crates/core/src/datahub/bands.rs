//! Score banding and the merged five-way partition used for classification
//! targets, reported accuracies, and confusion matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// EPC band letters, best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
}

pub const BAND_COUNT: usize = 7;

impl Band {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Band> {
        [Band::A, Band::B, Band::C, Band::D, Band::E, Band::F, Band::G]
            .get(i)
            .copied()
    }

    pub fn label(self) -> &'static str {
        ["A", "B", "C", "D", "E", "F", "G"][self.index()]
    }
}

/// Merged partition: sparse outer bands are pooled so per-class counts stay
/// meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Partition {
    AB,
    C,
    D,
    E,
    FG,
}

pub const PARTITION_COUNT: usize = 5;

impl Partition {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Partition> {
        [
            Partition::AB,
            Partition::C,
            Partition::D,
            Partition::E,
            Partition::FG,
        ]
        .get(i)
        .copied()
    }

    pub fn label(self) -> &'static str {
        ["AB", "C", "D", "E", "FG"][self.index()]
    }
}

/// Minimum score per band, descending from A to G. The default is the
/// standard EPC table; custom tables must stay strictly decreasing and
/// reach down to 1 so every score in [1,100] lands in a band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandTable {
    mins: [f64; BAND_COUNT],
}

impl Default for BandTable {
    fn default() -> Self {
        BandTable {
            mins: [92.0, 81.0, 69.0, 55.0, 39.0, 21.0, 1.0],
        }
    }
}

impl BandTable {
    pub fn new(mins: [f64; BAND_COUNT]) -> Result<Self> {
        for w in mins.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::InvalidConfig(format!(
                    "band minimums must be strictly decreasing, got {mins:?}"
                )));
            }
        }
        if mins[0] > 100.0 || mins[BAND_COUNT - 1] > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "band minimums must cover [1,100], got {mins:?}"
            )));
        }
        Ok(BandTable { mins })
    }

    pub fn mins(&self) -> &[f64; BAND_COUNT] {
        &self.mins
    }

    /// Band of a score already known to be in [1,100].
    pub fn band(&self, score: f64) -> Result<Band> {
        if !score.is_finite() || !(1.0..=100.0).contains(&score) {
            return Err(Error::OutOfRange(format!(
                "score {score} outside [1,100]"
            )));
        }
        for (i, &min) in self.mins.iter().enumerate() {
            if score >= min {
                return Ok(Band::from_index(i).expect("index in range"));
            }
        }
        // mins reach down to at most 1, so every valid score matched above.
        unreachable!("band table covers [1,100]")
    }

    /// Band of a model prediction: clamps into [1,100] first.
    pub fn band_of_prediction(&self, score: f64) -> Band {
        let clamped = if score.is_nan() { 1.0 } else { score.clamp(1.0, 100.0) };
        self.band(clamped).expect("clamped score is in range")
    }

    pub fn partition(band: Band) -> Partition {
        match band {
            Band::A | Band::B => Partition::AB,
            Band::C => Partition::C,
            Band::D => Partition::D,
            Band::E => Partition::E,
            Band::F | Band::G => Partition::FG,
        }
    }
}

/// Share of predictions whose merged partition matches the truth's.
pub fn band_accuracy(pred: &[f64], truth: &[f64], table: &BandTable) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::EmptyInput(
            "band accuracy needs matching non-empty slices".to_string(),
        ));
    }
    let mut hits = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        let pp = BandTable::partition(table.band_of_prediction(p));
        let tp = BandTable::partition(table.band(t)?);
        if pp == tp {
            hits += 1;
        }
    }
    Ok(hits as f64 / pred.len() as f64)
}

/// 5x5 confusion counts in merged-partition space; rows are truth,
/// columns are predictions.
pub fn confusion_matrix_merged(
    pred: &[f64],
    truth: &[f64],
    table: &BandTable,
) -> Result<[[u64; PARTITION_COUNT]; PARTITION_COUNT]> {
    if pred.len() != truth.len() {
        return Err(Error::EmptyInput(
            "confusion matrix needs matching slices".to_string(),
        ));
    }
    let mut m = [[0u64; PARTITION_COUNT]; PARTITION_COUNT];
    for (&p, &t) in pred.iter().zip(truth) {
        let pp = BandTable::partition(table.band_of_prediction(p)).index();
        let tp = BandTable::partition(table.band(t)?).index();
        m[tp][pp] += 1;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_band_edges() {
        let t = BandTable::default();
        let cases = [
            (100.0, Band::A),
            (92.0, Band::A),
            (91.999, Band::B),
            (81.0, Band::B),
            (80.5, Band::C),
            (69.0, Band::C),
            (55.0, Band::D),
            (54.9, Band::E),
            (39.0, Band::E),
            (21.0, Band::F),
            (20.9, Band::G),
            (1.0, Band::G),
        ];
        for (score, want) in cases {
            assert_eq!(t.band(score).unwrap(), want, "score {score}");
        }
    }

    #[test]
    fn out_of_range_scores_rejected() {
        let t = BandTable::default();
        assert!(t.band(0.99).is_err());
        assert!(t.band(100.01).is_err());
        assert!(t.band(f64::NAN).is_err());
    }

    #[test]
    fn predictions_are_clamped() {
        let t = BandTable::default();
        assert_eq!(t.band_of_prediction(150.0), Band::A);
        assert_eq!(t.band_of_prediction(-5.0), Band::G);
        assert_eq!(t.band_of_prediction(70.0), Band::C);
    }

    #[test]
    fn partitions_merge_outer_bands() {
        assert_eq!(BandTable::partition(Band::A), Partition::AB);
        assert_eq!(BandTable::partition(Band::B), Partition::AB);
        assert_eq!(BandTable::partition(Band::C), Partition::C);
        assert_eq!(BandTable::partition(Band::D), Partition::D);
        assert_eq!(BandTable::partition(Band::E), Partition::E);
        assert_eq!(BandTable::partition(Band::F), Partition::FG);
        assert_eq!(BandTable::partition(Band::G), Partition::FG);
    }

    #[test]
    fn custom_tables_validated() {
        assert!(BandTable::new([90.0, 80.0, 70.0, 60.0, 50.0, 40.0, 1.0]).is_ok());
        assert!(BandTable::new([90.0, 90.0, 70.0, 60.0, 50.0, 40.0, 1.0]).is_err());
        assert!(BandTable::new([90.0, 80.0, 70.0, 60.0, 50.0, 40.0, 2.0]).is_err());
        assert!(BandTable::new([101.0, 80.0, 70.0, 60.0, 50.0, 40.0, 1.0]).is_err());
    }

    #[test]
    fn accuracy_counts_merged_matches() {
        let t = BandTable::default();
        // 95 vs 85: A vs B -> same partition. 70 vs 50: C vs E -> different.
        let acc = band_accuracy(&[95.0, 70.0], &[85.0, 50.0], &t).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn confusion_rows_are_truth() {
        let t = BandTable::default();
        let m = confusion_matrix_merged(&[95.0, 20.0], &[60.0, 60.0], &t).unwrap();
        // Truth D (index 2); predictions AB (0) and FG (4).
        assert_eq!(m[2][0], 1);
        assert_eq!(m[2][4], 1);
        let total: u64 = m.iter().flatten().sum();
        assert_eq!(total, 2);
    }
}
