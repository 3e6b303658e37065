//! Test-set metrics per cancer subgroup.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricReport};
use crate::ehr::{CancerType, CohortRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CancerGroup {
    LungOnly,
    BreastOnly,
    ColorectalOnly,
    Multiple,
}

impl CancerGroup {
    pub const ALL: [CancerGroup; 4] = [
        CancerGroup::LungOnly,
        CancerGroup::BreastOnly,
        CancerGroup::ColorectalOnly,
        CancerGroup::Multiple,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CancerGroup::LungOnly => "lung only",
            CancerGroup::BreastOnly => "breast only",
            CancerGroup::ColorectalOnly => "colorectal only",
            CancerGroup::Multiple => "more than one cancer",
        }
    }

    /// None for a record with no cancer type.
    pub fn of(record: &CohortRecord) -> Option<CancerGroup> {
        let types = &record.patient.demographics.cancer_types;
        if types.len() > 1 {
            return Some(CancerGroup::Multiple);
        }
        types.iter().next().map(|t| match t {
            CancerType::Lung => CancerGroup::LungOnly,
            CancerType::Breast => CancerGroup::BreastOnly,
            CancerType::Colorectal => CancerGroup::ColorectalOnly,
        })
    }
}

impl fmt::Display for CancerGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub group: CancerGroup,
    pub report: MetricReport,
}

/// `scores[i]` is the predicted probability for `records[i]`. Empty groups
/// get a row with n = 0.
pub fn subgroup_eval(records: &[CohortRecord], scores: &[f64], threshold: f64) -> Result<Vec<SubgroupRow>> {
    if records.len() != scores.len() {
        return Err(Error::Usage(format!(
            "{} records but {} scores",
            records.len(),
            scores.len()
        )));
    }
    let groups: Vec<CancerGroup> = records
        .iter()
        .map(|r| CancerGroup::of(r).ok_or_else(|| Error::Data(format!("patient {} has no cancer type", r.id()))))
        .collect::<Result<_>>()?;
    CancerGroup::ALL
        .iter()
        .map(|&g| {
            let (s, y): (Vec<f64>, Vec<f64>) = records
                .iter()
                .zip(scores)
                .zip(&groups)
                .filter(|(_, &gg)| gg == g)
                .map(|((r, &s), _)| (s, r.label.as_f64()))
                .unzip();
            let report = if s.is_empty() {
                MetricReport::empty(threshold)
            } else {
                compute_metrics(&s, &y, threshold)?
            };
            Ok(SubgroupRow { group: g, report })
        })
        .collect()
}

pub fn subgroup_csv(rows: &[SubgroupRow]) -> String {
    let mut out = format!("group,{}\n", MetricReport::CSV_HEADER);
    for r in rows {
        out.push_str(&format!("{},{}\n", r.group.as_str(), r.report.csv_fields()));
    }
    out
}
