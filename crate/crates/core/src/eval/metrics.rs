//! Thresholded classification metrics and the rank-statistic AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Confusion {
    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.n())
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: u64,
    pub threshold: f64,
    pub confusion: Confusion,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub accuracy: f64,
    /// Absent when only one class is present.
    pub auc: Option<f64>,
}

impl MetricReport {
    pub fn from_confusion(confusion: Confusion, threshold: f64, auc: Option<f64>) -> Self {
        MetricReport {
            n: confusion.n(),
            threshold,
            confusion,
            f1: confusion.f1(),
            precision: confusion.precision(),
            recall: confusion.recall(),
            specificity: confusion.specificity(),
            accuracy: confusion.accuracy(),
            auc,
        }
    }

    pub fn empty(threshold: f64) -> Self {
        MetricReport::from_confusion(Confusion::default(), threshold, None)
    }

    pub const CSV_HEADER: &'static str = "n,f1,precision,recall,auc,specificity,accuracy,tp,fp,tn,fn";

    /// Values for [`Self::CSV_HEADER`]; absent AUC is an empty field.
    pub fn csv_fields(&self) -> String {
        let c = &self.confusion;
        format!(
            "{},{:.6},{:.6},{:.6},{},{:.6},{:.6},{},{},{},{}",
            self.n,
            self.f1,
            self.precision,
            self.recall,
            self.auc.map(|a| format!("{a:.6}")).unwrap_or_default(),
            self.specificity,
            self.accuracy,
            c.tp,
            c.fp,
            c.tn,
            c.fn_
        )
    }
}

impl MetricReport {
    /// Inverse of [`Self::csv_fields`]. Metrics are recomputed from the
    /// confusion counts; AUC is taken as written.
    pub fn parse_csv_fields(fields: &str, threshold: f64) -> Result<Self> {
        let cols: Vec<&str> = fields.split(',').collect();
        if cols.len() != 11 {
            return Err(Error::Data(format!("metric row has {} fields, expected 11", cols.len())));
        }
        let count = |i: usize| {
            cols[i]
                .parse::<u64>()
                .map_err(|e| Error::Data(format!("metric field {:?}: {e}", cols[i])))
        };
        let auc = match cols[4] {
            "" => None,
            a => Some(a.parse::<f64>().map_err(|e| Error::Data(format!("auc field {a:?}: {e}")))?),
        };
        let confusion = Confusion {
            tp: count(7)?,
            fp: count(8)?,
            tn: count(9)?,
            fn_: count(10)?,
        };
        Ok(MetricReport::from_confusion(confusion, threshold, auc))
    }
}

fn check(scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Data("labels must be 0 or 1".into()));
    }
    Ok(())
}

pub fn confusion(scores: &[f64], labels: &[f64], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Pairwise rank statistic: share of (positive, negative) pairs ranked
/// correctly, ties counting one half. Computed from exact integer counts.
pub fn auc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut twice_u, mut neg_below) = (0u128, 0u128);
    let (mut n_pos, mut n_neg) = (0u128, 0u128);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let (mut p, mut q) = (0u128, 0u128);
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] == 1.0 {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        twice_u += 2 * p * neg_below + p * q;
        neg_below += q;
        n_pos += p;
        n_neg += q;
        i = j;
    }
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    Some(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

pub fn compute_metrics(scores: &[f64], labels: &[f64], threshold: f64) -> Result<MetricReport> {
    check(scores, labels)?;
    Ok(MetricReport::from_confusion(
        confusion(scores, labels, threshold),
        threshold,
        auc(scores, labels),
    ))
}

/// Threshold among the observed scores maximizing F1 (lowest on ties).
pub fn f1_optimal_threshold(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check(scores, labels)?;
    let mut cands: Vec<f64> = scores.to_vec();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let mut best = (f64::NEG_INFINITY, 0.5);
    for t in cands {
        let f = confusion(scores, labels, t).f1();
        if f > best.0 {
            best = (f, t);
        }
    }
    Ok(best.1)
}
