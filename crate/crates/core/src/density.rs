//! Distinct-patient feature density for raw ICD codes, PheWAS groups and
//! subword pieces.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ehr::{CohortRecord, CodeSystem};
use crate::encoders::NarrativeView;
use crate::error::{Error, Result};
use crate::subword::{SubwordVocab, CLS_ID, PAD_ID, UNK_ID};
use crate::terminology::GroupingTable;

pub const DEFAULT_TOP_K: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityEncoding {
    RawIcd,
    Phewas,
    Subword,
}

impl DensityEncoding {
    pub const ALL: [DensityEncoding; 3] = [DensityEncoding::RawIcd, DensityEncoding::Phewas, DensityEncoding::Subword];

    pub fn as_str(self) -> &'static str {
        match self {
            DensityEncoding::RawIcd => "raw_icd",
            DensityEncoding::Phewas => "phewas",
            DensityEncoding::Subword => "subword",
        }
    }
}

impl fmt::Display for DensityEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DensityEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw_icd" | "raw" | "icd" => Ok(DensityEncoding::RawIcd),
            "phewas" => Ok(DensityEncoding::Phewas),
            "subword" => Ok(DensityEncoding::Subword),
            other => Err(Error::Usage(format!("unknown density encoding {other:?}"))),
        }
    }
}

/// How features are pulled out of each patient.
#[derive(Debug, Clone, Copy)]
pub enum Extractor<'a> {
    RawIcd,
    Phewas(&'a GroupingTable),
    /// Pieces of each narrative; `truncated` counts only what fits the model window.
    Subword {
        vocab: &'a SubwordVocab,
        narratives: &'a [NarrativeView],
        truncated: bool,
    },
}

impl Extractor<'_> {
    pub fn encoding(&self) -> DensityEncoding {
        match self {
            Extractor::RawIcd => DensityEncoding::RawIcd,
            Extractor::Phewas(_) => DensityEncoding::Phewas,
            Extractor::Subword { .. } => DensityEncoding::Subword,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub encoding: DensityEncoding,
    /// (feature, unique patients), count descending then feature ascending.
    pub entries: Vec<(String, usize)>,
}

impl DensityProfile {
    pub fn counts(&self) -> Vec<usize> {
        self.entries.iter().map(|(_, n)| *n).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,feature,unique_patients,encoding\n");
        for (i, (f, n)) in self.entries.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", i + 1, csv_field(f), n, self.encoding));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Ranks features by the number of distinct patients carrying them.
pub fn rank_features<I, S>(per_patient: I, top_k: usize) -> Vec<(String, usize)>
where
    I: IntoIterator<Item = S>,
    S: IntoIterator<Item = String>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for feats in per_patient {
        let distinct: HashSet<String> = feats.into_iter().collect();
        for f in distinct {
            *counts.entry(f).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, usize)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(top_k);
    entries
}

pub fn feature_density(cohort: &[CohortRecord], extractor: Extractor<'_>, top_k: usize) -> DensityProfile {
    let raw_dx = |r: &CohortRecord| -> Vec<String> {
        r.history
            .iter()
            .flat_map(|e| &e.diagnoses)
            .filter(|c| matches!(c.system, CodeSystem::Icd9 | CodeSystem::Icd10))
            .map(|c| c.to_string())
            .collect()
    };
    let entries = match extractor {
        Extractor::RawIcd => rank_features(cohort.iter().map(raw_dx), top_k),
        Extractor::Phewas(grouping) => rank_features(
            cohort.iter().map(|r| {
                r.history
                    .iter()
                    .flat_map(|e| &e.diagnoses)
                    .map(|c| grouping.group_or_keep(c))
                    .filter(|c| c.system == CodeSystem::Phewas)
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
            }),
            top_k,
        ),
        Extractor::Subword {
            vocab,
            narratives,
            truncated,
        } => {
            let ids: HashSet<&str> = cohort.iter().map(CohortRecord::id).collect();
            rank_features(
                narratives
                    .iter()
                    .filter(|n| ids.contains(n.patient_id.as_str()))
                    .map(|n| {
                        let toks = if truncated {
                            vocab.tokenize(&n.text)
                        } else {
                            vocab.tokenize_words(&n.text)
                        };
                        toks.into_iter()
                            .filter(|&t| t != CLS_ID && t != PAD_ID && t != UNK_ID)
                            .map(|t| vocab.piece(t).unwrap_or_default().to_string())
                            .collect::<Vec<_>>()
                    }),
                top_k,
            )
        }
    };
    DensityProfile {
        encoding: extractor.encoding(),
        entries,
    }
}
