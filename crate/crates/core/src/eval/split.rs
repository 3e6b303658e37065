//! Label-stratified 6:2:2 train / validation / test split.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ehr::CohortRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

/// Split weights in tenths.
const WEIGHTS: [u64; 3] = [6, 2, 2];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub assignment: BTreeMap<String, Split>,
}

/// Per-class split sizes. Each split gets the floor of its share; leftover
/// members go to the largest fractional remainders, then to the split
/// furthest below its cumulative target over the classes allocated so far,
/// then to the earliest split.
pub fn class_sizes(n_class: u64, cumulative_n: u64, allocated: [u64; 3]) -> [u64; 3] {
    let mut sizes = [0u64; 3];
    let mut rem = [0u64; 3];
    for k in 0..3 {
        sizes[k] = n_class * WEIGHTS[k] / 10;
        rem[k] = n_class * WEIGHTS[k] % 10;
    }
    let extras = n_class - sizes.iter().sum::<u64>();
    // deficits in tenths
    let deficit: Vec<i128> = (0..3)
        .map(|k| (cumulative_n * WEIGHTS[k]) as i128 - 10 * (allocated[k] + sizes[k]) as i128)
        .collect();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rem[b].cmp(&rem[a]).then(deficit[b].cmp(&deficit[a])).then(a.cmp(&b)));
    for &k in order.iter().take(extras as usize) {
        sizes[k] += 1;
    }
    sizes
}

/// Stratified split, cases allocated before non-cases.
pub fn split_622(cohort: &[CohortRecord], seed: u64) -> Result<SplitAssignment> {
    let mut cases: Vec<&str> = cohort.iter().filter(|r| r.label.is_case()).map(|r| r.id()).collect();
    let mut non: Vec<&str> = cohort.iter().filter(|r| !r.label.is_case()).map(|r| r.id()).collect();
    for (name, class) in [("case", &cases), ("non-case", &non)] {
        if class.len() < 3 {
            return Err(Error::Data(format!(
                "cannot stratify: only {} {name} patients (need at least 3)",
                class.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    let mut allocated = [0u64; 3];
    let mut cumulative = 0u64;
    for class in [&mut cases, &mut non] {
        class.sort_unstable();
        class.shuffle(&mut rng);
        cumulative += class.len() as u64;
        let sizes = class_sizes(class.len() as u64, cumulative, allocated);
        let mut it = class.iter();
        for (k, split) in Split::ALL.iter().enumerate() {
            for id in it.by_ref().take(sizes[k] as usize) {
                if assignment.insert(id.to_string(), *split).is_some() {
                    return Err(Error::Structural(format!("duplicate patient id {id}")));
                }
            }
            allocated[k] += sizes[k];
        }
    }
    Ok(SplitAssignment { seed, assignment })
}

impl SplitAssignment {
    pub fn get(&self, id: &str) -> Option<Split> {
        self.assignment.get(id).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.assignment.values().filter(|&&s| s == split).count()
    }

    /// Records of one split in cohort order; records without an assignment are skipped.
    pub fn select<'a>(&self, cohort: &'a [CohortRecord], split: Split) -> Vec<&'a CohortRecord> {
        cohort.iter().filter(|r| self.get(r.id()) == Some(split)).collect()
    }

    pub fn select_owned(&self, cohort: &[CohortRecord], split: Split) -> Vec<CohortRecord> {
        self.select(cohort, split).into_iter().cloned().collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("patient_id,split\n");
        for (id, s) in &self.assignment {
            out.push_str(&format!("{id},{s}\n"));
        }
        out
    }

    pub fn from_csv(text: &str, seed: u64) -> Result<Self> {
        let mut assignment = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 && line.starts_with("patient_id") || line.trim().is_empty() {
                continue;
            }
            let (id, s) = line
                .split_once(',')
                .ok_or_else(|| Error::Data(format!("split line {}: expected id,split", i + 1)))?;
            assignment.insert(id.to_string(), s.trim().parse()?);
        }
        Ok(SplitAssignment { seed, assignment })
    }
}
