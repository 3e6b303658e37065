//! Patient records and the case/non-case labeling rules.
//!
//! Dates are integer days relative to an arbitrary epoch. A case is a cancer
//! patient whose first heart-failure diagnosis falls strictly after the first
//! cancer diagnosis and who has at least one visit `gap_days` or more before
//! that onset. Non-cases are cancer patients with no heart-failure code at all.
//! Everyone else is excluded with a reason code.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default minimum distance between the gap visit and heart-failure onset.
pub const DEFAULT_GAP_DAYS: i64 = 183;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CodeSystem {
    Icd9,
    Icd10,
    RxnormClinical,
    RxcuiIngredient,
    Phewas,
}

impl CodeSystem {
    pub fn as_str(self) -> &'static str {
        match self {
            CodeSystem::Icd9 => "ICD9",
            CodeSystem::Icd10 => "ICD10",
            CodeSystem::RxnormClinical => "RXNORM_CLINICAL",
            CodeSystem::RxcuiIngredient => "RXCUI_INGREDIENT",
            CodeSystem::Phewas => "PHEWAS",
        }
    }

    pub fn is_diagnosis(self) -> bool {
        matches!(self, CodeSystem::Icd9 | CodeSystem::Icd10 | CodeSystem::Phewas)
    }
}

impl fmt::Display for CodeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CodeSystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ICD9" => CodeSystem::Icd9,
            "ICD10" => CodeSystem::Icd10,
            "RXNORM_CLINICAL" => CodeSystem::RxnormClinical,
            "RXCUI_INGREDIENT" => CodeSystem::RxcuiIngredient,
            "PHEWAS" => CodeSystem::Phewas,
            other => return Err(Error::Data(format!("unknown code system {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Code {
    pub system: CodeSystem,
    pub value: String,
}

impl Code {
    pub fn new(system: CodeSystem, value: impl Into<String>) -> Self {
        Code {
            system,
            value: value.into(),
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.system, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encounter {
    pub date: i64,
    #[serde(default)]
    pub diagnoses: Vec<Code>,
    #[serde(default)]
    pub medications: Vec<Code>,
}

impl Encounter {
    pub fn codes(&self) -> impl Iterator<Item = &Code> {
        self.diagnoses.iter().chain(&self.medications)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Sex {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Race {
    White,
    Black,
    Asian,
    Other,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Ethnicity {
    Hispanic,
    NotHispanic,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SmokingStatus {
    Never,
    Former,
    Current,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CancerType {
    Lung,
    Breast,
    Colorectal,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::Female, Sex::Male];
}
impl Race {
    pub const ALL: [Race; 5] = [Race::White, Race::Black, Race::Asian, Race::Other, Race::Unknown];
}
impl Ethnicity {
    pub const ALL: [Ethnicity; 3] = [Ethnicity::Hispanic, Ethnicity::NotHispanic, Ethnicity::Unknown];
}
impl SmokingStatus {
    pub const ALL: [SmokingStatus; 4] = [
        SmokingStatus::Never,
        SmokingStatus::Former,
        SmokingStatus::Current,
        SmokingStatus::Unknown,
    ];
}
impl CancerType {
    pub const ALL: [CancerType; 3] = [CancerType::Lung, CancerType::Breast, CancerType::Colorectal];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub sex: Sex,
    pub race: Race,
    pub ethnicity: Ethnicity,
    /// Date of birth on the same day axis as encounters.
    pub birth_offset: i64,
    pub smoking_status: SmokingStatus,
    pub cancer_types: BTreeSet<CancerType>,
}

impl Demographics {
    /// Whole years of age on `date`.
    pub fn age_at(&self, date: i64) -> u32 {
        let years = (date - self.birth_offset) as f64 / 365.25;
        years.floor().max(0.0) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patient {
    pub id: String,
    pub demographics: Demographics,
    pub encounters: Vec<Encounter>,
}

impl Patient {
    /// Checks the structural invariants of a single record.
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Structural("patient with empty id".into()));
        }
        for pair in self.encounters.windows(2) {
            if pair[1].date < pair[0].date {
                return Err(Error::Structural(format!(
                    "patient {}: encounters not sorted by date ({} after {})",
                    self.id, pair[1].date, pair[0].date
                )));
            }
        }
        for enc in &self.encounters {
            if enc.diagnoses.is_empty() && enc.medications.is_empty() {
                return Err(Error::Structural(format!(
                    "patient {}: encounter on day {} has no codes",
                    self.id, enc.date
                )));
            }
            if let Some(code) = enc.codes().find(|c| c.value.is_empty()) {
                return Err(Error::Structural(format!(
                    "patient {}: empty {} code value",
                    self.id, code.system
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Case,
    Noncase,
}

impl Label {
    pub fn is_case(self) -> bool {
        self == Label::Case
    }

    pub fn as_f64(self) -> f64 {
        if self.is_case() {
            1.0
        } else {
            0.0
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Case => "CASE",
            Label::Noncase => "NONCASE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub patient: Patient,
    pub label: Label,
    pub index_date: i64,
    /// Encounters visible to the predictor.
    pub history: Vec<Encounter>,
}

impl CohortRecord {
    pub fn id(&self) -> &str {
        &self.patient.id
    }

    pub fn age_at_index(&self) -> u32 {
        self.patient.demographics.age_at(self.index_date)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExclusionReason {
    TooFewVisits,
    NoCancer,
    HfBeforeCancer,
    NoGapVisit,
}

impl ExclusionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::TooFewVisits => "TOO_FEW_VISITS",
            ExclusionReason::NoCancer => "NO_CANCER",
            ExclusionReason::HfBeforeCancer => "HF_BEFORE_CANCER",
            ExclusionReason::NoGapVisit => "NO_GAP_VISIT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub patient_id: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledCohort {
    /// Sorted by patient id.
    pub records: Vec<CohortRecord>,
    /// Sorted by patient id.
    pub excluded: Vec<Exclusion>,
}

impl LabeledCohort {
    pub fn n_cases(&self) -> usize {
        self.records.iter().filter(|r| r.label.is_case()).count()
    }
}

/// Set of codes, e.g. the heart-failure or cancer definitions.
pub type CodeSet = HashSet<Code>;

/// Splits patients into cases, non-cases and exclusions.
pub fn label_cohort(
    patients: &[Patient],
    hf_codes: &CodeSet,
    cancer_codes: &CodeSet,
    gap_days: i64,
) -> Result<LabeledCohort> {
    if hf_codes.is_empty() {
        return Err(Error::Config("heart-failure code set is empty".into()));
    }
    if cancer_codes.is_empty() {
        return Err(Error::Config("cancer code set is empty".into()));
    }
    if gap_days < 0 {
        return Err(Error::Config(format!("gap_days must be >= 0, got {gap_days}")));
    }

    let mut seen = HashSet::with_capacity(patients.len());
    for p in patients {
        p.validate()?;
        if !seen.insert(p.id.as_str()) {
            return Err(Error::Structural(format!("duplicate patient id {}", p.id)));
        }
    }

    let mut out = LabeledCohort::default();
    for p in patients {
        match label_patient(p, hf_codes, cancer_codes, gap_days) {
            Ok(rec) => out.records.push(rec),
            Err(reason) => out.excluded.push(Exclusion {
                patient_id: p.id.clone(),
                reason,
            }),
        }
    }
    out.records.sort_by(|a, b| a.patient.id.cmp(&b.patient.id));
    out.excluded.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    Ok(out)
}

fn label_patient(
    p: &Patient,
    hf_codes: &CodeSet,
    cancer_codes: &CodeSet,
    gap_days: i64,
) -> std::result::Result<CohortRecord, ExclusionReason> {
    if p.encounters.len() < 2 {
        return Err(ExclusionReason::TooFewVisits);
    }
    let first_with = |set: &CodeSet| {
        p.encounters
            .iter()
            .find(|e| e.diagnoses.iter().any(|c| set.contains(c)))
            .map(|e| e.date)
    };
    let cancer_date = first_with(cancer_codes).ok_or(ExclusionReason::NoCancer)?;

    match first_with(hf_codes) {
        None => Ok(CohortRecord {
            patient: p.clone(),
            label: Label::Noncase,
            index_date: p.encounters.last().map(|e| e.date).unwrap_or_default(),
            history: p.encounters.clone(),
        }),
        Some(onset) if onset <= cancer_date => Err(ExclusionReason::HfBeforeCancer),
        Some(onset) => {
            if !p.encounters.iter().any(|e| e.date <= onset - gap_days) {
                return Err(ExclusionReason::NoGapVisit);
            }
            let history = p
                .encounters
                .iter()
                .filter(|e| e.date < onset)
                .cloned()
                .collect();
            Ok(CohortRecord {
                patient: p.clone(),
                label: Label::Case,
                index_date: onset,
                history,
            })
        }
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

/// Parses a `system<TAB>value` code list. Lines starting with `#` are skipped.
pub fn parse_code_set(text: &str) -> Result<CodeSet> {
    let mut set = CodeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let (Some(sys), Some(value)) = (cols.next(), cols.next()) else {
            return Err(Error::Data(format!("code set line {}: expected 2 columns", lineno + 1)));
        };
        set.insert(Code::new(sys.trim().parse()?, value.trim()));
    }
    Ok(set)
}

pub fn format_code_set(set: &CodeSet) -> String {
    let sorted: BTreeSet<&Code> = set.iter().collect();
    let mut out = String::new();
    for c in sorted {
        out.push_str(c.system.as_str());
        out.push('\t');
        out.push_str(&c.value);
        out.push('\n');
    }
    out
}
