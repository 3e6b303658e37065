//! Synthetic cancer cohorts with planted, controllable label signals.
//!
//! Every generated patient passes [`label_cohort`](crate::ehr::label_cohort)
//! and receives the label it was generated with. A patient is built from a
//! *content template* (visit codes, demographics, age at index) plus a visit
//! date schedule; cases additionally get a final encounter carrying the
//! heart-failure code, which the labeling step cuts from the history.
//!
//! Signal modes:
//! - `Bag`: cases carry a handful of frequent signal codes more often.
//! - `Timing`: both classes draw content from one distribution; only the
//!   spacing of visits differs (cases have short gaps before the index date).
//! - `Synonym`: carriers get one of many rare codes whose descriptions share a
//!   single token; each code stays under the frequency-filter threshold.
//! - `None`: content and timing are independent of the label.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ehr::{
    CancerType, Code, CodeSet, CodeSystem, Demographics, Encounter, Ethnicity, Label, Patient,
    Race, Sex, SmokingStatus,
};
use crate::error::{Error, Result};
use crate::terminology::{DescriptionTable, GroupingTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SignalMode {
    Bag,
    Timing,
    Synonym,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SignalLocation {
    Diagnoses,
    Medications,
}

/// Categorical distributions for one label class. Weights need not sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMix {
    /// female, male
    pub sex: [f64; 2],
    /// white, black, asian, other, unknown
    pub race: [f64; 5],
    /// hispanic, not hispanic, unknown
    pub ethnicity: [f64; 3],
    /// never, former, current, unknown
    pub smoking: [f64; 4],
    /// lung only, breast only, colorectal only, more than one
    pub cancer: [f64; 4],
    pub age_median: f64,
    pub age_iqr: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicMix {
    pub case: ClassMix,
    pub noncase: ClassMix,
}

impl Default for DemographicMix {
    fn default() -> Self {
        let smoking = [0.45, 0.35, 0.15, 0.05];
        DemographicMix {
            case: ClassMix {
                sex: [1099.0, 503.0],
                race: [1066.0, 476.0, 11.0, 45.0, 4.0],
                ethnicity: [39.0, 1556.0, 7.0],
                smoking,
                cancer: [593.0, 568.0, 271.0, 170.0],
                age_median: 64.0,
                age_iqr: [56.0, 73.0],
            },
            noncase: ClassMix {
                sex: [7469.0, 3735.0],
                race: [8341.0, 2055.0, 163.0, 550.0, 95.0],
                ethnicity: [366.0, 10714.0, 124.0],
                smoking,
                cancer: [4093.0, 4024.0, 2447.0, 640.0],
                age_median: 61.0,
                age_iqr: [53.0, 69.0],
            },
        }
    }
}

/// Shape of the fixture terminology the generator draws codes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UniverseConfig {
    pub n_dx_groups: usize,
    pub max_codes_per_group: usize,
    pub n_ingredients: usize,
    pub max_clinical_per_ingredient: usize,
    /// Exponent of the power-law popularity over groups and ingredients.
    pub popularity_exponent: f64,
    pub seed: u64,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        UniverseConfig {
            n_dx_groups: 700,
            max_codes_per_group: 4,
            n_ingredients: 260,
            max_clinical_per_ingredient: 3,
            popularity_exponent: 0.8,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub case_fraction: f64,
    pub signal_mode: SignalMode,
    pub n_synonym_codes: usize,
    /// Rarity cap per synonym code.
    pub max_code_patients: usize,
    /// Frequency-filter threshold the synonym codes must stay under.
    pub frequency_threshold: usize,
    pub synonym_location: SignalLocation,
    pub synonym_token: String,
    /// Share of cases carrying a signal code (`Bag`, `Synonym`).
    pub carrier_rate_case: f64,
    /// Share of non-cases carrying a signal code (`Bag`, `Synonym`).
    pub carrier_rate_noncase: f64,
    pub min_visits: usize,
    pub max_visits: usize,
    pub seed: u64,
    pub demographic_mix: DemographicMix,
    pub universe: UniverseConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_patients: 4000,
            case_fraction: 1602.0 / 12806.0,
            signal_mode: SignalMode::Synonym,
            n_synonym_codes: 50,
            max_code_patients: 9,
            frequency_threshold: 10,
            synonym_location: SignalLocation::Diagnoses,
            synonym_token: "anthracycline".into(),
            carrier_rate_case: 0.8,
            carrier_rate_noncase: 0.01,
            min_visits: 3,
            max_visits: 10,
            seed: 7,
            demographic_mix: DemographicMix::default(),
            universe: UniverseConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn n_cases(&self) -> usize {
        (self.n_patients as f64 * self.case_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.n_patients < 2 {
            return cfg(format!("n_patients must be >= 2, got {}", self.n_patients));
        }
        if !(self.case_fraction > 0.0 && self.case_fraction < 1.0) {
            return cfg(format!("case_fraction must be in (0, 1), got {}", self.case_fraction));
        }
        let n_case = self.n_cases();
        if n_case == 0 || n_case == self.n_patients {
            return cfg("case_fraction leaves one class empty".into());
        }
        if self.min_visits < 2 || self.max_visits < self.min_visits {
            return cfg(format!(
                "visit range [{}, {}] invalid (need 2 <= min <= max)",
                self.min_visits, self.max_visits
            ));
        }
        for (name, r) in [
            ("carrier_rate_case", self.carrier_rate_case),
            ("carrier_rate_noncase", self.carrier_rate_noncase),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return cfg(format!("{name} must be in [0, 1], got {r}"));
            }
        }
        if self.universe.n_dx_groups < 10 || self.universe.n_ingredients < 10 {
            return cfg("universe needs at least 10 diagnosis groups and 10 ingredients".into());
        }
        if self.signal_mode == SignalMode::Synonym {
            if self.n_synonym_codes == 0 || self.max_code_patients == 0 {
                return cfg("synonym mode needs n_synonym_codes >= 1 and max_code_patients >= 1".into());
            }
            if self.max_code_patients >= self.frequency_threshold {
                return cfg(format!(
                    "max_code_patients ({}) must stay below the frequency threshold ({})",
                    self.max_code_patients, self.frequency_threshold
                ));
            }
            if self.synonym_token.trim().is_empty() || self.synonym_token.contains(char::is_whitespace) {
                return cfg("synonym_token must be a single word".into());
            }
            let (a, b) = self.synonym_carriers();
            let capacity = self.n_synonym_codes * self.max_code_patients;
            if a + b > capacity {
                return cfg(format!(
                    "synonym mode infeasible: {} carriers needed but {} codes x {} patients = {}",
                    a + b,
                    self.n_synonym_codes,
                    self.max_code_patients,
                    capacity
                ));
            }
        }
        Ok(())
    }

    /// Number of (case, non-case) synonym carriers.
    fn synonym_carriers(&self) -> (usize, usize) {
        let n_case = self.n_cases();
        let n_non = self.n_patients - n_case;
        (
            (n_case as f64 * self.carrier_rate_case).round() as usize,
            (n_non as f64 * self.carrier_rate_noncase).round() as usize,
        )
    }
}

/// The fixture tables a synthetic cohort references.
#[derive(Debug, Clone, Default)]
pub struct Terminology {
    pub grouping: GroupingTable,
    pub descriptions: DescriptionTable,
    pub hf_codes: CodeSet,
    pub cancer_codes: CodeSet,
    /// Planted signal codes for the configured mode.
    pub signal_codes: Vec<Code>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    /// Sorted by id.
    pub patients: Vec<Patient>,
    /// Ground-truth label per patient id.
    pub truth: BTreeMap<String, Label>,
    pub terminology: Terminology,
}

impl SyntheticCohort {
    pub fn truth_csv(&self) -> String {
        let mut out = String::from("patient_id,label\n");
        for (id, label) in &self.truth {
            out.push_str(&format!("{id},{}\n", label.as_str()));
        }
        out
    }
}

const SITES: &[&str] = &[
    "cardiac", "renal", "hepatic", "pulmonary", "cerebral", "coronary", "gastric", "thyroid",
    "pancreatic", "splenic", "vascular", "ocular", "dermal", "spinal", "pelvic", "prostatic",
    "ovarian", "biliary", "esophageal", "intestinal", "lymphatic", "muscular", "articular",
    "bronchial", "tracheal", "cervical", "lumbar", "thoracic", "abdominal", "cranial", "venous",
    "arterial", "mitral", "aortic", "valvular", "adrenal", "pituitary", "urinary", "osseous",
    "synovial", "peripheral", "mesenteric",
];

const CONDITIONS: &[&str] = &[
    "hypertension", "insufficiency", "stenosis", "infarction", "fibrillation", "edema",
    "anemia", "neuropathy", "effusion", "hemorrhage", "thrombosis", "embolism", "ischemia",
    "inflammation", "infection", "obstruction", "calculus", "cyst", "polyp", "ulcer", "hernia",
    "fracture", "sprain", "dysplasia", "hyperplasia", "atrophy", "fibrosis", "sclerosis",
    "dysfunction", "disorder", "pain", "lesion", "abscess", "aneurysm", "arrhythmia",
    "regurgitation", "nodule", "mass", "deficiency", "failure",
];

const MODIFIERS: &[&str] = &[
    "unspecified", "acute", "chronic", "recurrent", "primary", "secondary", "bilateral",
    "mild", "severe", "congenital", "transient", "persistent",
];

const SYLLABLES: &[&str] = &[
    "al", "ben", "cor", "dax", "el", "fen", "gal", "hy", "ir", "jo", "ka", "lo", "mer", "nal",
    "or", "pra", "quin", "ro", "sul", "tra", "ul", "var", "xen", "zo", "cli", "dro", "flu",
    "gli", "mi", "pro",
];

const DRUG_SUFFIXES: &[&str] = &[
    "olol", "pril", "statin", "sartan", "azole", "mycin", "cillin", "oxacin", "tidine",
    "prazole", "dipine", "afil", "ide", "one", "ine", "amab", "tinib", "parin", "semide",
    "lukast",
];

const FORMS: &[&str] = &["oral tablet", "oral capsule", "injectable solution", "oral solution"];

struct Universe {
    terminology: Terminology,
    /// (group popularity weight, member codes with within-group weights)
    dx_groups: Vec<(f64, Vec<(Code, f64)>)>,
    meds: Vec<(f64, Vec<Code>)>,
    cancer_by_type: BTreeMap<CancerType, Vec<Code>>,
    hf: Vec<Code>,
}

fn fixed_code(
    term: &mut Terminology,
    raw: Code,
    raw_desc: &str,
    group: Code,
    group_desc: &str,
) -> Result<()> {
    term.grouping.insert(raw.clone(), group.clone())?;
    term.descriptions.insert(raw, raw_desc)?;
    term.descriptions.insert(group, group_desc)?;
    Ok(())
}

fn build_universe(cfg: &GeneratorConfig) -> Result<Universe> {
    let u = &cfg.universe;
    let mut rng = ChaCha8Rng::seed_from_u64(u.seed);
    let mut term = Terminology {
        grouping: GroupingTable::new(format!("synthetic fixture, universe seed {}", u.seed)),
        ..Default::default()
    };
    let phe = |v: &str| Code::new(CodeSystem::Phewas, v);
    let icd10 = |v: &str| Code::new(CodeSystem::Icd10, v);
    let icd9 = |v: &str| Code::new(CodeSystem::Icd9, v);

    let mut cancer_by_type = BTreeMap::new();
    let cancers = [
        (CancerType::Lung, "C34.90", "162.9", "165.1", "malignant neoplasm of unspecified part of bronchus or lung", "cancer of bronchus lung"),
        (CancerType::Breast, "C50.919", "174.9", "174.1", "malignant neoplasm of unspecified site of female breast", "breast cancer female"),
        (CancerType::Colorectal, "C18.9", "153.9", "153", "malignant neoplasm of colon unspecified", "colorectal cancer"),
    ];
    for (ty, v10, v9, group, desc, gdesc) in cancers {
        fixed_code(&mut term, icd10(v10), desc, phe(group), gdesc)?;
        fixed_code(&mut term, icd9(v9), desc, phe(group), gdesc)?;
        term.cancer_codes.insert(icd10(v10));
        term.cancer_codes.insert(icd9(v9));
        cancer_by_type.insert(ty, vec![icd10(v10), icd9(v9)]);
    }
    let hf = vec![icd10("I50.9"), icd10("I50.22"), icd9("428.0")];
    for (c, d) in hf.iter().zip([
        "heart failure unspecified",
        "chronic systolic congestive heart failure",
        "congestive heart failure unspecified",
    ]) {
        fixed_code(&mut term, c.clone(), d, phe("428"), "congestive heart failure")?;
        term.hf_codes.insert(c.clone());
    }

    let mut pairs: Vec<(usize, usize)> = (0..SITES.len())
        .flat_map(|s| (0..CONDITIONS.len()).map(move |c| (s, c)))
        .collect();
    pairs.shuffle(&mut rng);
    if u.n_dx_groups > pairs.len() {
        return Err(Error::Config(format!(
            "at most {} diagnosis groups supported, got {}",
            pairs.len(),
            u.n_dx_groups
        )));
    }
    let mut dx_groups = Vec::with_capacity(u.n_dx_groups);
    for (g, &(s, c)) in pairs.iter().take(u.n_dx_groups).enumerate() {
        let group = phe(&format!("{}.{}", 300 + g / 10, g % 10));
        let gdesc = format!("{} {}", SITES[s], CONDITIONS[c]);
        term.descriptions.insert(group.clone(), &gdesc)?;
        let n_codes = rng.random_range(1..=u.max_codes_per_group.max(1));
        let mut mods: Vec<&str> = MODIFIERS.to_vec();
        mods.shuffle(&mut rng);
        let mut members = Vec::with_capacity(n_codes);
        for k in 0..n_codes {
            let code = if k % 2 == 0 {
                icd10(&format!("Z{:03}.{}", g, k))
            } else {
                icd9(&format!("V{:03}.{}", g, k))
            };
            term.grouping.insert(code.clone(), group.clone())?;
            term.descriptions
                .insert(code.clone(), &format!("{} {}", mods[k % mods.len()], gdesc))?;
            members.push((code, 1.0 / ((k + 1) * (k + 1)) as f64));
        }
        let weight = 1.0 / ((g + 5) as f64).powf(u.popularity_exponent);
        dx_groups.push((weight, members));
    }

    let mut names = BTreeSet::new();
    let mut meds = Vec::with_capacity(u.n_ingredients);
    let mut j = 0;
    while meds.len() < u.n_ingredients {
        let name = format!(
            "{}{}{}",
            SYLLABLES.choose(&mut rng).unwrap(),
            SYLLABLES.choose(&mut rng).unwrap(),
            DRUG_SUFFIXES.choose(&mut rng).unwrap()
        );
        if !names.insert(name.clone()) {
            continue;
        }
        let ingredient = Code::new(CodeSystem::RxcuiIngredient, format!("{}", 10000 + j));
        term.descriptions.insert(ingredient.clone(), &name)?;
        let n_clin = rng.random_range(1..=u.max_clinical_per_ingredient.max(1));
        let mut members = Vec::with_capacity(n_clin);
        for k in 0..n_clin {
            let clin = Code::new(CodeSystem::RxnormClinical, format!("{}", 500000 + j * 10 + k));
            let dose = [5, 10, 20, 25, 40, 50, 100, 250, 500][rng.random_range(0..9)];
            let form = FORMS.choose(&mut rng).unwrap();
            term.grouping.insert(clin.clone(), ingredient.clone())?;
            term.descriptions
                .insert(clin.clone(), &format!("{name} {dose} mg {form}"))?;
            members.push(clin);
        }
        let weight = 1.0 / ((j + 5) as f64).powf(u.popularity_exponent);
        meds.push((weight, members));
        j += 1;
    }

    Ok(Universe {
        terminology: term,
        dx_groups,
        meds,
        cancer_by_type,
        hf,
    })
}

/// Adds the planted signal codes for the configured mode to the terminology.
fn plant_signal_codes(cfg: &GeneratorConfig, uni: &mut Universe) -> Result<()> {
    let term = &mut uni.terminology;
    match cfg.signal_mode {
        SignalMode::Synonym => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.universe.seed ^ 0x5157);
            for i in 0..cfg.n_synonym_codes {
                let site = SITES[rng.random_range(0..SITES.len())];
                let cond = CONDITIONS[rng.random_range(0..CONDITIONS.len())];
                match cfg.synonym_location {
                    SignalLocation::Diagnoses => {
                        let raw = Code::new(CodeSystem::Icd10, format!("T{:03}.{}", i / 10, i % 10));
                        let group = Code::new(CodeSystem::Phewas, format!("{}.{}", 900 + i / 10, i % 10));
                        let desc = format!("{site} {cond} following {} therapy", cfg.synonym_token);
                        fixed_code(term, raw.clone(), &desc, group, &desc)?;
                        term.signal_codes.push(raw);
                    }
                    SignalLocation::Medications => {
                        let raw = Code::new(CodeSystem::RxnormClinical, format!("{}", 900000 + i));
                        let ingredient = Code::new(CodeSystem::RxcuiIngredient, format!("{}", 90000 + i));
                        let name = format!(
                            "{}{}rubicin",
                            SYLLABLES[rng.random_range(0..SYLLABLES.len())],
                            SYLLABLES[rng.random_range(0..SYLLABLES.len())]
                        );
                        let gdesc = format!("{name} {}", cfg.synonym_token);
                        fixed_code(term, raw.clone(), &format!("{gdesc} 10 mg injectable solution"), ingredient, &gdesc)?;
                        term.signal_codes.push(raw);
                    }
                }
            }
        }
        SignalMode::Bag => {
            // mid-popularity groups and ingredients so they survive the frequency filter
            for g in [40usize, 55, 70, 85, 100, 115] {
                term.signal_codes.push(uni.dx_groups[g % uni.dx_groups.len()].1[0].0.clone());
            }
            for m in [20usize, 30, 40, 50] {
                term.signal_codes.push(uni.meds[m % uni.meds.len()].1[0].clone());
            }
        }
        SignalMode::Timing | SignalMode::None => {}
    }
    Ok(())
}

/// A patient's label-independent content: visit codes and demographics.
#[derive(Clone)]
struct Template {
    visits: Vec<(Vec<Code>, Vec<Code>)>,
    sex: Sex,
    race: Race,
    ethnicity: Ethnicity,
    smoking: SmokingStatus,
    cancers: BTreeSet<CancerType>,
    age: f64,
}

fn weighted_index(rng: &mut ChaCha8Rng, cumulative: &[f64]) -> usize {
    let total = *cumulative.last().unwrap();
    let x = rng.random::<f64>() * total;
    cumulative.partition_point(|&c| c <= x).min(cumulative.len() - 1)
}

fn cumsum(ws: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    ws.map(|w| {
        acc += w;
        acc
    })
    .collect()
}

struct Sampler<'a> {
    uni: &'a Universe,
    dx_cum: Vec<f64>,
    within_cum: Vec<Vec<f64>>,
    med_cum: Vec<f64>,
}

impl<'a> Sampler<'a> {
    fn new(uni: &'a Universe) -> Self {
        Sampler {
            uni,
            dx_cum: cumsum(uni.dx_groups.iter().map(|g| g.0)),
            within_cum: uni
                .dx_groups
                .iter()
                .map(|g| cumsum(g.1.iter().map(|m| m.1)))
                .collect(),
            med_cum: cumsum(uni.meds.iter().map(|m| m.0)),
        }
    }

    fn diagnosis(&self, rng: &mut ChaCha8Rng) -> Code {
        let g = weighted_index(rng, &self.dx_cum);
        let k = weighted_index(rng, &self.within_cum[g]);
        self.uni.dx_groups[g].1[k].0.clone()
    }

    fn medication(&self, rng: &mut ChaCha8Rng) -> Code {
        let m = weighted_index(rng, &self.med_cum);
        self.uni.meds[m].1.choose(rng).unwrap().clone()
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T], weights: &[f64]) -> T {
    items[weighted_index(rng, &cumsum(weights.iter().copied()))]
}

fn sample_template(
    rng: &mut ChaCha8Rng,
    cfg: &GeneratorConfig,
    sampler: &Sampler,
    mix: &ClassMix,
) -> Template {
    let cancer_kind = weighted_index(rng, &cumsum(mix.cancer.iter().copied()));
    let cancers: BTreeSet<CancerType> = if cancer_kind < 3 {
        [CancerType::ALL[cancer_kind]].into()
    } else {
        let mut all = CancerType::ALL.to_vec();
        all.shuffle(rng);
        all.into_iter().take(2).collect()
    };
    let sd = ((mix.age_iqr[1] - mix.age_iqr[0]) / 1.349).max(1.0);
    let age = Normal::new(mix.age_median, sd)
        .expect("finite normal")
        .sample(rng)
        .clamp(18.0, 95.0);

    let n_visits = rng.random_range(cfg.min_visits..=cfg.max_visits);
    let mut visits = Vec::with_capacity(n_visits);
    for v in 0..n_visits {
        let mut dx = Vec::new();
        if v == 0 {
            for ty in &cancers {
                // most cancer diagnoses are recorded in ICD-10, the rest in ICD-9
                let codes = &sampler.uni.cancer_by_type[ty];
                let k = usize::from(rng.random::<f64>() >= 0.85);
                dx.push(codes[k].clone());
            }
        }
        for _ in 0..rng.random_range(1..=3) {
            dx.push(sampler.diagnosis(rng));
        }
        let mut rx = Vec::new();
        for _ in 0..rng.random_range(0..=2) {
            rx.push(sampler.medication(rng));
        }
        visits.push((dx, rx));
    }

    Template {
        visits,
        sex: pick(rng, &Sex::ALL, &mix.sex),
        race: pick(rng, &Race::ALL, &mix.race),
        ethnicity: pick(rng, &Ethnicity::ALL, &mix.ethnicity),
        smoking: pick(rng, &SmokingStatus::ALL, &mix.smoking),
        cancers,
        age,
    }
}

/// Day offsets of the history visits relative to the first one, plus the
/// gap from the last history visit to the heart-failure encounter.
fn schedule(rng: &mut ChaCha8Rng, n_visits: usize, mode: SignalMode, label: Label, gap_days: i64) -> (Vec<i64>, i64) {
    let mut offsets = vec![0i64];
    let hf_gap;
    if mode == SignalMode::Timing {
        if label.is_case() {
            offsets.push(rng.random_range(gap_days + 20..=gap_days + 220));
            for _ in 2..n_visits {
                let last = *offsets.last().unwrap();
                offsets.push(last + rng.random_range(0..=3));
            }
            hf_gap = rng.random_range(1..=3);
        } else {
            for _ in 1..n_visits {
                let last = *offsets.last().unwrap();
                offsets.push(last + rng.random_range(120..=365));
            }
            hf_gap = 0;
        }
    } else {
        for _ in 1..n_visits {
            let last = *offsets.last().unwrap();
            offsets.push(last + rng.random_range(15..=180));
        }
        // guarantee a gap visit for every template, whatever its label
        let span = *offsets.last().unwrap();
        if span < gap_days {
            for o in offsets.iter_mut().skip(1) {
                *o += gap_days - span;
            }
        }
        hf_gap = rng.random_range(7..=120);
    }
    (offsets, hf_gap)
}

/// Generates a cohort. Deterministic for a fixed configuration.
pub fn generate(cfg: &GeneratorConfig) -> Result<SyntheticCohort> {
    cfg.validate()?;
    let mut uni = build_universe(cfg)?;
    plant_signal_codes(cfg, &mut uni)?;
    let sampler = Sampler::new(&uni);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gap_days = crate::ehr::DEFAULT_GAP_DAYS;

    let n = cfg.n_patients;
    let n_case = cfg.n_cases();
    let mut labels: Vec<Label> = (0..n)
        .map(|i| if i < n_case { Label::Case } else { Label::Noncase })
        .collect();
    labels.shuffle(&mut rng);

    // content templates; without a content signal both classes draw from one distribution
    let shared_mix = matches!(cfg.signal_mode, SignalMode::Timing | SignalMode::None);
    let mixes: Vec<&ClassMix> = labels
        .iter()
        .map(|label| {
            if shared_mix || !label.is_case() {
                &cfg.demographic_mix.noncase
            } else {
                &cfg.demographic_mix.case
            }
        })
        .collect();
    let mut templates: Vec<Template> = mixes
        .into_iter()
        .map(|mix| sample_template(&mut rng, cfg, &sampler, mix))
        .collect();

    // planted codes
    let signal = &uni.terminology.signal_codes;
    match cfg.signal_mode {
        SignalMode::Synonym => {
            let (want_case, want_non) = cfg.synonym_carriers();
            let mut case_idx: Vec<usize> = (0..n).filter(|&i| labels[i].is_case()).collect();
            let mut non_idx: Vec<usize> = (0..n).filter(|&i| !labels[i].is_case()).collect();
            case_idx.shuffle(&mut rng);
            non_idx.shuffle(&mut rng);
            let mut carriers: Vec<usize> = case_idx[..want_case]
                .iter()
                .chain(&non_idx[..want_non])
                .copied()
                .collect();
            carriers.shuffle(&mut rng);
            for (k, &i) in carriers.iter().enumerate() {
                let code = signal[k % signal.len()].clone();
                let t = &mut templates[i];
                let v = rng.random_range(0..t.visits.len());
                match cfg.synonym_location {
                    SignalLocation::Diagnoses => t.visits[v].0.push(code),
                    SignalLocation::Medications => t.visits[v].1.push(code),
                }
            }
        }
        SignalMode::Bag => {
            for i in 0..n {
                let rate = if labels[i].is_case() {
                    cfg.carrier_rate_case
                } else {
                    cfg.carrier_rate_noncase
                };
                for code in signal {
                    if rng.random::<f64>() < rate * 0.4 {
                        let t = &mut templates[i];
                        let v = rng.random_range(0..t.visits.len());
                        if code.system.is_diagnosis() {
                            t.visits[v].0.push(code.clone());
                        } else {
                            t.visits[v].1.push(code.clone());
                        }
                    }
                }
            }
        }
        SignalMode::Timing | SignalMode::None => {}
    }

    let mut patients = Vec::with_capacity(n);
    let mut truth = BTreeMap::new();
    for (i, (label, t)) in labels.iter().zip(&templates).enumerate() {
        let id = format!("P{i:06}");
        let (offsets, hf_gap) = schedule(&mut rng, t.visits.len(), cfg.signal_mode, *label, gap_days);
        let start = rng.random_range(0..=1500i64);
        let mut encounters: Vec<Encounter> = t
            .visits
            .iter()
            .zip(&offsets)
            .map(|((dx, rx), off)| Encounter {
                date: start + off,
                diagnoses: dx.clone(),
                medications: rx.clone(),
            })
            .collect();
        let last = encounters.last().map(|e| e.date).unwrap_or(start);
        let index_date = if label.is_case() {
            let onset = last + hf_gap;
            encounters.push(Encounter {
                date: onset,
                diagnoses: vec![uni.hf.choose(&mut rng).unwrap().clone()],
                medications: vec![],
            });
            onset
        } else {
            last
        };
        let birth_offset =
            index_date - (t.age.floor() * 365.25).ceil() as i64 - rng.random_range(0..300i64);
        patients.push(Patient {
            id: id.clone(),
            demographics: Demographics {
                sex: t.sex,
                race: t.race,
                ethnicity: t.ethnicity,
                birth_offset,
                smoking_status: t.smoking,
                cancer_types: t.cancers.clone(),
            },
            encounters,
        });
        truth.insert(id, *label);
    }

    Ok(SyntheticCohort {
        patients,
        truth,
        terminology: uni.terminology,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::label_cohort;

    fn small(mode: SignalMode) -> GeneratorConfig {
        GeneratorConfig {
            n_patients: 400,
            signal_mode: mode,
            ..Default::default()
        }
    }

    #[test]
    fn generated_patients_pass_labeling_with_their_truth() {
        for mode in [SignalMode::Bag, SignalMode::Timing, SignalMode::Synonym, SignalMode::None] {
            let c = generate(&small(mode)).unwrap();
            let t = &c.terminology;
            let out = label_cohort(&c.patients, &t.hf_codes, &t.cancer_codes, 183).unwrap();
            assert!(out.excluded.is_empty(), "{mode:?}: {:?}", &out.excluded[..1]);
            for r in &out.records {
                assert_eq!(c.truth[r.id()], r.label, "{mode:?} {}", r.id());
            }
        }
    }

    #[test]
    fn synonym_codes_stay_rare() {
        let c = generate(&small(SignalMode::Synonym)).unwrap();
        for code in &c.terminology.signal_codes {
            let n = c
                .patients
                .iter()
                .filter(|p| p.encounters.iter().any(|e| e.codes().any(|x| x == code)))
                .count();
            assert!(n <= 9, "{code} in {n} patients");
        }
    }

    #[test]
    fn infeasible_synonym_config_is_rejected() {
        let cfg = GeneratorConfig {
            n_patients: 10000,
            n_synonym_codes: 5,
            ..Default::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config(_))));
        let cfg = GeneratorConfig {
            max_code_patients: 10,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn bad_fractions_are_rejected() {
        for f in [0.0, 1.0, -0.1, 1.5] {
            let cfg = GeneratorConfig {
                case_fraction: f,
                ..Default::default()
            };
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn same_seed_same_cohort() {
        let a = generate(&small(SignalMode::Bag)).unwrap();
        let b = generate(&small(SignalMode::Bag)).unwrap();
        assert_eq!(a.patients, b.patients);
        let mut cfg = small(SignalMode::Bag);
        cfg.seed += 1;
        let c = generate(&cfg).unwrap();
        assert_ne!(a.patients, c.patients);
    }
}
