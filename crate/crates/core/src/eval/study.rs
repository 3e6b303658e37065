//! Feature-combination study: one test report per (model, feature set).

use serde::{Deserialize, Serialize};

use super::metrics::MetricReport;
use crate::encoders::FeatureSet;
use crate::error::{Error, Result};

pub const DEFAULT_COMBOS: [FeatureSet; 3] = [FeatureSet::DIAG, FeatureSet::DIAG_DEMO, FeatureSet::ALL];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub model: String,
    pub features: FeatureSet,
    pub report: MetricReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

/// Runs `run(model, combo)` for every pair, models outermost.
pub fn feature_combination_study<F>(models: &[&str], combos: &[FeatureSet], mut run: F) -> Result<StudyTable>
where
    F: FnMut(&str, FeatureSet) -> Result<MetricReport>,
{
    if models.is_empty() || combos.is_empty() {
        return Err(Error::Config("study needs at least one model and one feature set".into()));
    }
    let mut rows = Vec::with_capacity(models.len() * combos.len());
    for &model in models {
        for &features in combos {
            log::info!("study: {model} on {}", features.display_name());
            rows.push(StudyRow {
                model: model.to_string(),
                features,
                report: run(model, features)?,
            });
        }
    }
    Ok(StudyTable { rows })
}

impl StudyTable {
    pub fn get(&self, model: &str, features: FeatureSet) -> Option<&MetricReport> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.features == features)
            .map(|r| &r.report)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("model,features,{}\n", MetricReport::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.model, r.features.name(), r.report.csv_fields()));
        }
        out
    }

    /// Models as rows, feature sets as columns, F1 in the cells.
    pub fn to_text(&self) -> String {
        let mut models: Vec<&str> = Vec::new();
        let mut combos: Vec<FeatureSet> = Vec::new();
        for r in &self.rows {
            if !models.contains(&r.model.as_str()) {
                models.push(&r.model);
            }
            if !combos.contains(&r.features) {
                combos.push(r.features);
            }
        }
        let mut header = vec!["model".to_string()];
        header.extend(combos.iter().map(|c| c.display_name()));
        let body: Vec<Vec<String>> = models
            .iter()
            .map(|&m| {
                let mut row = vec![m.to_string()];
                row.extend(
                    combos
                        .iter()
                        .map(|&c| self.get(m, c).map(|r| format!("{:.3}", r.f1)).unwrap_or_else(|| "-".into())),
                );
                row
            })
            .collect();
        render_aligned(&header, &body)
    }
}

/// Space-padded columns; the first column is left-aligned, the rest right-aligned.
pub fn render_aligned(header: &[String], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            if i < width.len() {
                width[i] = width[i].max(cell.chars().count());
            } else {
                width.push(cell.chars().count());
            }
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = width[i])
                } else {
                    format!("{c:>w$}", w = width[i])
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    out.push_str(&line(&width.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>()));
    for row in rows {
        out.push_str(&line(row));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::metrics::Confusion;

    #[test]
    fn one_row_per_pair() {
        let t = feature_combination_study(&["a", "b"], &DEFAULT_COMBOS, |_, _| {
            Ok(MetricReport::from_confusion(Confusion { tp: 1, fp: 1, tn: 1, fn_: 1 }, 0.5, None))
        })
        .unwrap();
        assert_eq!(t.rows.len(), 6);
        assert_eq!(t.to_csv().lines().count(), 7);
        assert_eq!(t.to_text().lines().count(), 4);
    }

    #[test]
    fn aligned_columns() {
        let s = render_aligned(&["m".into(), "f1".into()], &[vec!["long name".into(), "0.5".into()]]);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "m           f1");
        assert_eq!(lines[2], "long name  0.5");
    }
}
