//! Code grouping (ICD to PheWAS, clinical RxNorm to ingredient RxCUI),
//! code descriptions and the distinct-patient frequency filter.

use std::collections::{BTreeMap, HashMap, HashSet};

use log::warn;

use crate::ehr::{CohortRecord, Code, CodeSystem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupingTable {
    entries: HashMap<Code, Code>,
    pub provenance: String,
}

/// Result of grouping a single code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouped {
    pub code: Code,
    /// The source code had no table entry and became its own group.
    pub unmapped: bool,
}

/// Counters for grouping misses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GroupingAudit {
    pub mapped: usize,
    pub unmapped: usize,
}

impl GroupingAudit {
    pub fn record(&mut self, g: &Grouped) {
        if g.unmapped {
            self.unmapped += 1;
        } else {
            self.mapped += 1;
        }
    }
}

fn target_system(src: CodeSystem) -> Option<CodeSystem> {
    match src {
        CodeSystem::Icd9 | CodeSystem::Icd10 => Some(CodeSystem::Phewas),
        CodeSystem::RxnormClinical => Some(CodeSystem::RxcuiIngredient),
        _ => None,
    }
}

impl GroupingTable {
    pub fn new(provenance: impl Into<String>) -> Self {
        GroupingTable {
            entries: HashMap::new(),
            provenance: provenance.into(),
        }
    }

    pub fn insert(&mut self, src: Code, dst: Code) -> Result<()> {
        let expected = target_system(src.system).ok_or_else(|| {
            Error::Data(format!("{src} cannot be a grouping source"))
        })?;
        if dst.system != expected {
            return Err(Error::Data(format!(
                "{src} must group into {expected}, got {dst}"
            )));
        }
        self.entries.insert(src, dst);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Maps a raw code to its group. Codes missing from the table become
    /// singleton groups carrying the original value.
    pub fn group_code(&self, code: &Code) -> Result<Grouped> {
        let target = target_system(code.system).ok_or_else(|| {
            Error::Usage(format!("cannot group {code}: not an ICD or clinical RxNorm code"))
        })?;
        Ok(match self.entries.get(code) {
            Some(g) => Grouped {
                code: g.clone(),
                unmapped: false,
            },
            None => Grouped {
                code: Code::new(target, code.value.clone()),
                unmapped: true,
            },
        })
    }

    /// Groups a code that is already known to be groupable, passing grouped
    /// codes through unchanged.
    pub fn group_or_keep(&self, code: &Code) -> Code {
        match self.group_code(code) {
            Ok(g) => g.code,
            Err(_) => code.clone(),
        }
    }

    /// TSV with columns `src_system, src_value, dst_system, dst_value`.
    pub fn from_tsv(text: &str, provenance: impl Into<String>) -> Result<Self> {
        let mut table = GroupingTable::new(provenance);
        for (lineno, line) in data_lines(text) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 4 {
                return Err(Error::Data(format!(
                    "grouping line {lineno}: expected 4 columns, got {}",
                    cols.len()
                )));
            }
            table.insert(
                Code::new(cols[0].parse()?, cols[1]),
                Code::new(cols[2].parse()?, cols[3]),
            )?;
        }
        Ok(table)
    }

    pub fn to_tsv(&self) -> String {
        let sorted: BTreeMap<&Code, &Code> = self.entries.iter().collect();
        let mut out = String::from("src_system\tsrc_value\tdst_system\tdst_value\n");
        for (s, d) in sorted {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", s.system, s.value, d.system, d.value));
        }
        out
    }
}

/// Iterates non-empty, non-comment lines, skipping a header whose first
/// column does not parse as a code system.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(i, l)| {
            if l.trim().is_empty() || l.starts_with('#') {
                return false;
            }
            let first = l.split('\t').next().unwrap_or("");
            !(*i == 1 && first.parse::<CodeSystem>().is_err())
        })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DescriptionTable {
    entries: HashMap<Code, String>,
}

impl DescriptionTable {
    /// Stores `text` lowercased. Empty descriptions are rejected.
    pub fn insert(&mut self, code: Code, text: &str) -> Result<()> {
        let text = text.trim().to_lowercase();
        if text.is_empty() {
            return Err(Error::Data(format!("empty description for {code}")));
        }
        self.entries.insert(code, text);
        Ok(())
    }

    pub fn get(&self, code: &Code) -> Option<&str> {
        self.entries.get(code).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// TSV with columns `system, value, text`.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut table = DescriptionTable::default();
        for (lineno, line) in data_lines(text) {
            let mut cols = line.splitn(3, '\t');
            let (Some(sys), Some(value), Some(desc)) = (cols.next(), cols.next(), cols.next())
            else {
                return Err(Error::Data(format!("description line {lineno}: expected 3 columns")));
            };
            table.insert(Code::new(sys.parse()?, value), desc)?;
        }
        Ok(table)
    }

    pub fn to_tsv(&self) -> String {
        let sorted: BTreeMap<&Code, &String> = self.entries.iter().collect();
        let mut out = String::from("system\tvalue\ttext\n");
        for (c, t) in sorted {
            out.push_str(&format!("{}\t{}\t{}\n", c.system, c.value, t));
        }
        out
    }
}

/// Grouped codes kept by the frequency filter, with their distinct-patient counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RetainedVocab {
    /// Sorted by code.
    pub diagnoses: Vec<(Code, usize)>,
    /// Sorted by code.
    pub medications: Vec<(Code, usize)>,
    pub min_patients: usize,
}

impl RetainedVocab {
    pub fn is_empty(&self) -> bool {
        self.diagnoses.is_empty() && self.medications.is_empty()
    }
}

/// Distinct patients per grouped code over the records' histories.
pub fn grouped_patient_counts(
    cohort: &[CohortRecord],
    grouping: &GroupingTable,
) -> Result<(BTreeMap<Code, usize>, BTreeMap<Code, usize>)> {
    let mut dx: BTreeMap<Code, usize> = BTreeMap::new();
    let mut rx: BTreeMap<Code, usize> = BTreeMap::new();
    for rec in cohort {
        let mut seen_dx = HashSet::new();
        let mut seen_rx = HashSet::new();
        for enc in &rec.history {
            for c in &enc.diagnoses {
                seen_dx.insert(grouping.group_code(c)?.code);
            }
            for c in &enc.medications {
                seen_rx.insert(grouping.group_code(c)?.code);
            }
        }
        for c in seen_dx {
            *dx.entry(c).or_default() += 1;
        }
        for c in seen_rx {
            *rx.entry(c).or_default() += 1;
        }
    }
    Ok((dx, rx))
}

/// Keeps grouped codes seen in at least `min_patients` distinct patients.
pub fn frequency_filter(
    cohort: &[CohortRecord],
    grouping: &GroupingTable,
    min_patients: usize,
) -> Result<RetainedVocab> {
    if min_patients < 1 {
        return Err(Error::Config("min_patients must be >= 1".into()));
    }
    if cohort.is_empty() {
        warn!("frequency filter called on an empty cohort");
        return Ok(RetainedVocab {
            min_patients,
            ..Default::default()
        });
    }
    let (dx, rx) = grouped_patient_counts(cohort, grouping)?;
    let keep = |m: BTreeMap<Code, usize>| -> Vec<(Code, usize)> {
        m.into_iter().filter(|(_, n)| *n >= min_patients).collect()
    };
    let out = RetainedVocab {
        diagnoses: keep(dx),
        medications: keep(rx),
        min_patients,
    };
    if out.is_empty() {
        warn!("frequency filter (min_patients = {min_patients}) retained no codes");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::{Demographics, Encounter, Label, Patient};

    fn icd(v: &str) -> Code {
        Code::new(CodeSystem::Icd10, v)
    }

    #[test]
    fn lookup_and_fallback() {
        let mut t = GroupingTable::new("fixture");
        t.insert(icd("C34.1"), Code::new(CodeSystem::Phewas, "165.1")).unwrap();
        t.insert(
            Code::new(CodeSystem::RxnormClinical, "12345"),
            Code::new(CodeSystem::RxcuiIngredient, "999"),
        )
        .unwrap();

        let g = t.group_code(&icd("C34.1")).unwrap();
        assert_eq!(g.code, Code::new(CodeSystem::Phewas, "165.1"));
        assert!(!g.unmapped);

        let g = t.group_code(&icd("Z99.9")).unwrap();
        assert_eq!(g.code, Code::new(CodeSystem::Phewas, "Z99.9"));
        assert!(g.unmapped);
        let mut audit = GroupingAudit::default();
        audit.record(&g);
        assert_eq!(audit.unmapped, 1);

        let g = t
            .group_code(&Code::new(CodeSystem::RxnormClinical, "12345"))
            .unwrap();
        assert_eq!(g.code, Code::new(CodeSystem::RxcuiIngredient, "999"));
    }

    #[test]
    fn wrong_system_is_a_usage_error() {
        let t = GroupingTable::new("x");
        let err = t.group_code(&Code::new(CodeSystem::Phewas, "165.1"));
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn insert_rejects_wrong_target_system() {
        let mut t = GroupingTable::new("x");
        assert!(t
            .insert(icd("A"), Code::new(CodeSystem::RxcuiIngredient, "1"))
            .is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let mut t = GroupingTable::new("x");
        t.insert(icd("C34.1"), Code::new(CodeSystem::Phewas, "165.1")).unwrap();
        let text = t.to_tsv();
        let back = GroupingTable::from_tsv(&text, "x").unwrap();
        assert_eq!(back, t);

        let mut d = DescriptionTable::default();
        d.insert(icd("C34.1"), "Malignant Neoplasm of Upper Lobe").unwrap();
        assert_eq!(d.get(&icd("C34.1")), Some("malignant neoplasm of upper lobe"));
        assert_eq!(DescriptionTable::from_tsv(&d.to_tsv()).unwrap(), d);
    }

    fn record(id: &str, visits: &[&[&str]]) -> CohortRecord {
        let history: Vec<Encounter> = visits
            .iter()
            .enumerate()
            .map(|(i, codes)| Encounter {
                date: i as i64 * 10,
                diagnoses: codes.iter().map(|c| icd(c)).collect(),
                medications: vec![],
            })
            .collect();
        CohortRecord {
            patient: Patient {
                id: id.into(),
                demographics: Demographics {
                    sex: crate::ehr::Sex::Male,
                    race: crate::ehr::Race::White,
                    ethnicity: crate::ehr::Ethnicity::NotHispanic,
                    birth_offset: -20000,
                    smoking_status: crate::ehr::SmokingStatus::Never,
                    cancer_types: [crate::ehr::CancerType::Lung].into(),
                },
                encounters: history.clone(),
            },
            label: Label::Noncase,
            index_date: 100,
            history,
        }
    }

    #[test]
    fn threshold_comparison() {
        let mut cohort = Vec::new();
        for i in 0..12 {
            let mut codes = vec!["A"];
            if i < 9 {
                codes.push("B");
            }
            if i < 10 {
                codes.push("C");
            }
            cohort.push(record(&format!("p{i}"), &[&codes]));
        }
        let v = frequency_filter(&cohort, &GroupingTable::default(), 10).unwrap();
        let kept: Vec<&str> = v.diagnoses.iter().map(|(c, _)| c.value.as_str()).collect();
        assert_eq!(kept, vec!["A", "C"]);
        assert_eq!(v.diagnoses[0].1, 12);
    }

    #[test]
    fn counts_distinct_patients_not_encounters() {
        let cohort = vec![record("p", &[&["A"], &["A"], &["A"], &["A"], &["A"]])];
        let v = frequency_filter(&cohort, &GroupingTable::default(), 2).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn empty_cohort_gives_empty_vocab() {
        let v = frequency_filter(&[], &GroupingTable::default(), 10).unwrap();
        assert!(v.is_empty());
        assert!(frequency_filter(&[], &GroupingTable::default(), 0).is_err());
    }
}
