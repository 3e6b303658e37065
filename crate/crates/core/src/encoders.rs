//! The three competing feature views of a cohort record: one-hot vector,
//! elapsed-time visit sequence, and narrative text.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ehr::{
    CancerType, CohortRecord, Code, CodeSystem, Demographics, Ethnicity, Race, Sex, SmokingStatus,
};
use crate::error::{Error, Result};
use crate::terminology::{frequency_filter, DescriptionTable, GroupingTable};

/// Which record parts feed a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct FeatureSet {
    pub diagnoses: bool,
    pub medications: bool,
    pub demographics: bool,
}

impl FeatureSet {
    pub const DIAG: FeatureSet = FeatureSet {
        diagnoses: true,
        medications: false,
        demographics: false,
    };
    pub const DIAG_DEMO: FeatureSet = FeatureSet {
        diagnoses: true,
        medications: false,
        demographics: true,
    };
    pub const ALL: FeatureSet = FeatureSet {
        diagnoses: true,
        medications: true,
        demographics: true,
    };

    pub fn name(self) -> &'static str {
        match (self.diagnoses, self.medications, self.demographics) {
            (true, false, false) => "diag",
            (true, false, true) => "diag_demo",
            (true, true, true) => "all",
            (true, true, false) => "diag_med",
            (false, true, false) => "med",
            (false, true, true) => "med_demo",
            (false, false, true) => "demo",
            (false, false, false) => "none",
        }
    }

    /// Row label in the feature-combination table.
    pub fn display_name(self) -> String {
        let mut parts = Vec::new();
        if self.diagnoses {
            parts.push("Diagnosis");
        }
        if self.medications {
            parts.push("Medication");
        }
        if self.demographics {
            parts.push("Demographic");
        }
        parts.join("+")
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let set = |diagnoses, medications, demographics| FeatureSet {
            diagnoses,
            medications,
            demographics,
        };
        Ok(match s {
            "diag" => FeatureSet::DIAG,
            "diag_demo" => FeatureSet::DIAG_DEMO,
            "all" => FeatureSet::ALL,
            "diag_med" => set(true, true, false),
            "med" => set(false, true, false),
            "med_demo" => set(false, true, true),
            "demo" => set(false, false, true),
            other => return Err(Error::Config(format!("unknown feature set {other:?}"))),
        })
    }
}

impl From<FeatureSet> for String {
    fn from(f: FeatureSet) -> String {
        f.name().to_string()
    }
}

impl TryFrom<String> for FeatureSet {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Width of the demographic block: sex, race, ethnicity, smoking, cancer
/// types and standardized age.
pub const DEMOGRAPHIC_DIM: usize = 2 + 5 + 3 + 4 + 3 + 1;

/// Grouped-code vocabulary and age statistics fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct FeatureVocab {
    pub diagnoses: Vec<Code>,
    pub medications: Vec<Code>,
    pub age_mean: f64,
    pub age_std: f64,
    pub min_patients: usize,
    index: HashMap<Code, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    diagnoses: Vec<Code>,
    medications: Vec<Code>,
    age_mean: f64,
    age_std: f64,
    min_patients: usize,
}

impl From<VocabRepr> for FeatureVocab {
    fn from(r: VocabRepr) -> Self {
        FeatureVocab::new(r.diagnoses, r.medications, r.age_mean, r.age_std, r.min_patients)
    }
}

impl From<FeatureVocab> for VocabRepr {
    fn from(v: FeatureVocab) -> Self {
        VocabRepr {
            diagnoses: v.diagnoses,
            medications: v.medications,
            age_mean: v.age_mean,
            age_std: v.age_std,
            min_patients: v.min_patients,
        }
    }
}

impl FeatureVocab {
    pub fn new(
        diagnoses: Vec<Code>,
        medications: Vec<Code>,
        age_mean: f64,
        age_std: f64,
        min_patients: usize,
    ) -> Self {
        let index = diagnoses
            .iter()
            .chain(&medications)
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        FeatureVocab {
            diagnoses,
            medications,
            age_mean,
            age_std: if age_std > 0.0 { age_std } else { 1.0 },
            min_patients,
            index,
        }
    }

    /// Fits on training records only: frequency-filtered grouped codes and
    /// the age mean / standard deviation.
    pub fn fit(train: &[CohortRecord], grouping: &GroupingTable, min_patients: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("cannot fit a vocabulary on an empty training split".into()));
        }
        let retained = frequency_filter(train, grouping, min_patients)?;
        let ages: Vec<f64> = train.iter().map(|r| r.age_at_index() as f64).collect();
        let mean = ages.iter().sum::<f64>() / ages.len() as f64;
        let var = ages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / ages.len() as f64;
        Ok(FeatureVocab::new(
            retained.diagnoses.into_iter().map(|(c, _)| c).collect(),
            retained.medications.into_iter().map(|(c, _)| c).collect(),
            mean,
            var.sqrt(),
            min_patients,
        ))
    }

    pub fn standardize_age(&self, age: f64) -> f64 {
        (age - self.age_mean) / self.age_std
    }

    fn code_dim(&self, features: FeatureSet) -> usize {
        let mut d = 0;
        if features.diagnoses {
            d += self.diagnoses.len();
        }
        if features.medications {
            d += self.medications.len();
        }
        d
    }

    /// Model input width for a feature set.
    pub fn input_dim(&self, features: FeatureSet) -> usize {
        self.code_dim(features) + if features.demographics { DEMOGRAPHIC_DIM } else { 0 }
    }

    /// Input position of a grouped code, if retained and selected.
    pub fn slot(&self, grouped: &Code, features: FeatureSet) -> Option<usize> {
        let &i = self.index.get(grouped)?;
        let nd = self.diagnoses.len();
        if i < nd {
            features.diagnoses.then_some(i)
        } else if features.medications {
            Some(i - nd + if features.diagnoses { nd } else { 0 })
        } else {
            None
        }
    }

    pub fn feature_names(&self, features: FeatureSet) -> Vec<String> {
        let mut names = Vec::with_capacity(self.input_dim(features));
        if features.diagnoses {
            names.extend(self.diagnoses.iter().map(|c| format!("dx:{c}")));
        }
        if features.medications {
            names.extend(self.medications.iter().map(|c| format!("rx:{c}")));
        }
        if features.demographics {
            names.extend(Sex::ALL.iter().map(|v| format!("sex={}", sex_text(*v))));
            names.extend(Race::ALL.iter().map(|v| format!("race={v:?}").to_lowercase()));
            names.extend(Ethnicity::ALL.iter().map(|v| format!("ethnicity={v:?}").to_lowercase()));
            names.extend(SmokingStatus::ALL.iter().map(|v| format!("smoking={v:?}").to_lowercase()));
            names.extend(CancerType::ALL.iter().map(|v| format!("cancer={v:?}").to_lowercase()));
            names.push("age_std".into());
        }
        names
    }
}

fn pos<V: PartialEq>(all: &[V], v: V) -> usize {
    all.iter().position(|x| *x == v).expect("enum value listed in ALL")
}

impl FeatureVocab {
    /// Demographic block for a record: category indicators then standardized age.
    pub fn demographic_block(&self, rec: &CohortRecord) -> [f64; DEMOGRAPHIC_DIM] {
        let d = &rec.patient.demographics;
        let mut out = [0.0; DEMOGRAPHIC_DIM];
        out[pos(&Sex::ALL, d.sex)] = 1.0;
        out[2 + pos(&Race::ALL, d.race)] = 1.0;
        out[7 + pos(&Ethnicity::ALL, d.ethnicity)] = 1.0;
        out[10 + pos(&SmokingStatus::ALL, d.smoking_status)] = 1.0;
        for c in &d.cancer_types {
            out[14 + pos(&CancerType::ALL, *c)] = 1.0;
        }
        out[17] = self.standardize_age(rec.age_at_index() as f64);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotView {
    pub patient_id: String,
    pub label: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceStep {
    /// Sorted input positions of the codes present at this visit.
    pub active: Vec<usize>,
    pub elapsed_days: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceView {
    pub patient_id: String,
    pub label: f64,
    pub steps: Vec<SequenceStep>,
    /// Demographic block appended to every step (empty when not selected).
    pub static_features: Vec<f64>,
    pub input_dim: usize,
}

impl SequenceView {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Sparse input vector of step `t`.
    pub fn step_input(&self, t: usize) -> Vec<(usize, f64)> {
        let offset = self.input_dim - self.static_features.len();
        let mut v: Vec<(usize, f64)> = self.steps[t].active.iter().map(|&i| (i, 1.0)).collect();
        v.extend(
            self.static_features
                .iter()
                .enumerate()
                .filter(|(_, x)| **x != 0.0)
                .map(|(k, x)| (offset + k, *x)),
        );
        v
    }

    /// Grouped-code input positions present anywhere in the sequence.
    pub fn code_support(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.steps.iter().flat_map(|s| s.active.iter().copied()).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// A record dropped from sequence modeling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceExclusion {
    pub patient_id: String,
    pub usable_encounters: usize,
}

/// Equal-length sequences stacked for one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub seq_len: usize,
    pub input_dim: usize,
    pub patient_ids: Vec<String>,
    /// `[batch][step]` sparse inputs.
    pub inputs: Vec<Vec<Vec<(usize, f64)>>>,
    /// `[batch][step]` elapsed days.
    pub elapsed: Vec<Vec<u32>>,
    pub labels: Vec<f64>,
}

impl SequenceBatch {
    pub fn from_views(views: &[&SequenceView]) -> Result<Self> {
        let Some(first) = views.first() else {
            return Err(Error::Usage("empty sequence batch".into()));
        };
        let seq_len = first.len();
        let input_dim = first.input_dim;
        if views.iter().any(|v| v.len() != seq_len || v.input_dim != input_dim) {
            return Err(Error::Structural("sequence batch members differ in length or width".into()));
        }
        Ok(SequenceBatch {
            seq_len,
            input_dim,
            patient_ids: views.iter().map(|v| v.patient_id.clone()).collect(),
            inputs: views
                .iter()
                .map(|v| (0..seq_len).map(|t| v.step_input(t)).collect())
                .collect(),
            elapsed: views
                .iter()
                .map(|v| v.steps.iter().map(|s| s.elapsed_days).collect())
                .collect(),
            labels: views.iter().map(|v| v.label).collect(),
        })
    }

    /// (batch, seq_len, input_dim)
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.labels.len(), self.seq_len, self.input_dim)
    }
}

/// Encodes records against a fitted vocabulary.
#[derive(Debug, Clone, Copy)]
pub struct FeatureEncoder<'a> {
    pub vocab: &'a FeatureVocab,
    pub grouping: &'a GroupingTable,
    pub features: FeatureSet,
}

impl<'a> FeatureEncoder<'a> {
    pub fn new(vocab: &'a FeatureVocab, grouping: &'a GroupingTable, features: FeatureSet) -> Self {
        FeatureEncoder {
            vocab,
            grouping,
            features,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.vocab.input_dim(self.features)
    }

    fn encounter_slots(&self, enc: &crate::ehr::Encounter) -> Vec<usize> {
        let mut slots: Vec<usize> = enc
            .codes()
            .filter_map(|c| self.vocab.slot(&self.grouping.group_or_keep(c), self.features))
            .collect();
        slots.sort_unstable();
        slots.dedup();
        slots
    }

    fn static_block(&self, rec: &CohortRecord) -> Vec<f64> {
        if self.features.demographics {
            self.vocab.demographic_block(rec).to_vec()
        } else {
            Vec::new()
        }
    }

    pub fn encode_onehot(&self, rec: &CohortRecord) -> OneHotView {
        let mut values = vec![0.0; self.input_dim()];
        for enc in &rec.history {
            for s in self.encounter_slots(enc) {
                values[s] = 1.0;
            }
        }
        let stat = self.static_block(rec);
        let offset = values.len() - stat.len();
        values[offset..].copy_from_slice(&stat);
        OneHotView {
            patient_id: rec.id().to_string(),
            label: rec.label.as_f64(),
            values,
        }
    }

    /// One step per encounter that keeps at least one code after filtering.
    pub fn build_sequence(&self, rec: &CohortRecord) -> std::result::Result<SequenceView, SequenceExclusion> {
        let mut steps = Vec::new();
        let mut prev_date = None;
        for enc in &rec.history {
            let active = self.encounter_slots(enc);
            if active.is_empty() {
                continue;
            }
            let elapsed = prev_date.map_or(0, |p: i64| (enc.date - p).max(0) as u32);
            prev_date = Some(enc.date);
            steps.push(SequenceStep {
                active,
                elapsed_days: elapsed,
            });
        }
        if steps.len() < 2 {
            return Err(SequenceExclusion {
                patient_id: rec.id().to_string(),
                usable_encounters: steps.len(),
            });
        }
        Ok(SequenceView {
            patient_id: rec.id().to_string(),
            label: rec.label.as_f64(),
            steps,
            static_features: self.static_block(rec),
            input_dim: self.input_dim(),
        })
    }
}

/// Groups sequence indices into length-homogeneous batches of at most
/// `max_batch`, ordered by length then input order.
pub fn bucket_indices(lengths: &[usize], max_batch: usize) -> Result<Vec<Vec<usize>>> {
    if max_batch == 0 {
        return Err(Error::Usage("max_batch must be >= 1".into()));
    }
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &len) in lengths.iter().enumerate() {
        by_len.entry(len).or_default().push(i);
    }
    Ok(by_len
        .into_values()
        .flat_map(|idx| idx.chunks(max_batch).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect())
}

pub fn bucket_minibatches(seqs: &[SequenceView], max_batch: usize) -> Result<Vec<SequenceBatch>> {
    let lengths: Vec<usize> = seqs.iter().map(SequenceView::len).collect();
    bucket_indices(&lengths, max_batch)?
        .into_iter()
        .map(|idx| {
            let views: Vec<&SequenceView> = idx.iter().map(|&i| &seqs[i]).collect();
            SequenceBatch::from_views(&views)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeView {
    pub patient_id: String,
    pub label: u8,
    pub text: String,
}

/// Codes rendered by their literal value because no description was found.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NarrativeAudit {
    pub missing_descriptions: Vec<Code>,
}

/// Section separator between demographics, diagnoses and medications.
pub const SECTION_SEPARATOR: &str = " ; ";

fn sex_text(s: Sex) -> &'static str {
    match s {
        Sex::Female => "female",
        Sex::Male => "male",
    }
}

fn race_text(r: Race) -> &'static str {
    match r {
        Race::White => "white",
        Race::Black => "black or african american",
        Race::Asian => "asian",
        Race::Other => "other race",
        Race::Unknown => "unknown race",
    }
}

fn ethnicity_text(e: Ethnicity) -> &'static str {
    match e {
        Ethnicity::Hispanic => "hispanic or latino",
        Ethnicity::NotHispanic => "not hispanic or latino",
        Ethnicity::Unknown => "unknown ethnicity",
    }
}

fn smoking_text(s: SmokingStatus) -> &'static str {
    match s {
        SmokingStatus::Never => "never",
        SmokingStatus::Former => "former",
        SmokingStatus::Current => "current",
        SmokingStatus::Unknown => "unknown",
    }
}

fn cancer_text(c: CancerType) -> &'static str {
    match c {
        CancerType::Lung => "lung cancer",
        CancerType::Breast => "breast cancer",
        CancerType::Colorectal => "colorectal cancer",
    }
}

/// `the patient is a {age} year old {race} {sex}, {ethnicity}, {smoking} smoker, with {cancers}.`
pub fn demographics_sentence(d: &Demographics, age: u32) -> String {
    let cancers: Vec<&str> = d.cancer_types.iter().map(|c| cancer_text(*c)).collect();
    format!(
        "the patient is a {age} year old {} {}, {}, {} smoker, with {}.",
        race_text(d.race),
        sex_text(d.sex),
        ethnicity_text(d.ethnicity),
        smoking_text(d.smoking_status),
        cancers.join(" and ")
    )
}

/// Grouped codes of one section ordered by last occurrence, each paired with
/// the raw code seen at that last occurrence.
fn last_occurrence_order<'r>(
    rec: &'r CohortRecord,
    grouping: &GroupingTable,
    diagnoses: bool,
) -> Vec<(Code, &'r Code)> {
    let mut last: HashMap<Code, ((usize, usize), &Code)> = HashMap::new();
    for (ei, enc) in rec.history.iter().enumerate() {
        let list = if diagnoses { &enc.diagnoses } else { &enc.medications };
        for (ci, raw) in list.iter().enumerate() {
            last.insert(grouping.group_or_keep(raw), ((ei, ci), raw));
        }
    }
    let mut ordered: Vec<(Code, ((usize, usize), &Code))> = last.into_iter().collect();
    ordered.sort_by_key(|(_, (pos, _))| *pos);
    ordered.into_iter().map(|(g, (_, raw))| (g, raw)).collect()
}

/// Serializes a record into narrative text from code descriptions.
pub fn encode_narrative(
    rec: &CohortRecord,
    grouping: &GroupingTable,
    descriptions: &DescriptionTable,
    features: FeatureSet,
) -> Result<(NarrativeView, NarrativeAudit)> {
    if rec.history.is_empty() {
        return Err(Error::Data(format!("patient {} has no history to narrate", rec.id())));
    }
    let mut audit = NarrativeAudit::default();
    let mut describe = |group: &Code, raw: &Code| -> String {
        if let Some(d) = descriptions.get(group).or_else(|| descriptions.get(raw)) {
            d.to_string()
        } else {
            audit.missing_descriptions.push(group.clone());
            group.value.to_lowercase()
        }
    };

    let mut sections = Vec::with_capacity(3);
    if features.demographics {
        sections.push(demographics_sentence(&rec.patient.demographics, rec.age_at_index()));
    }
    for (on, diag) in [(features.diagnoses, true), (features.medications, false)] {
        if !on {
            continue;
        }
        let parts: Vec<String> = last_occurrence_order(rec, grouping, diag)
            .into_iter()
            .map(|(g, raw)| describe(&g, raw))
            .collect();
        if !parts.is_empty() {
            sections.push(parts.join(", "));
        }
    }
    if sections.is_empty() {
        return Err(Error::Data(format!(
            "patient {} has nothing to narrate for feature set {}",
            rec.id(),
            features
        )));
    }
    Ok((
        NarrativeView {
            patient_id: rec.id().to_string(),
            label: rec.label.is_case() as u8,
            text: sections.join(SECTION_SEPARATOR),
        },
        audit,
    ))
}

/// Grouped codes for a record that fall under a system family, used by the
/// density analysis.
pub fn grouped_history_codes(rec: &CohortRecord, grouping: &GroupingTable, system: CodeSystem) -> HashSet<Code> {
    rec.history
        .iter()
        .flat_map(|e| e.codes())
        .map(|c| grouping.group_or_keep(c))
        .filter(|c| c.system == system)
        .collect()
}
