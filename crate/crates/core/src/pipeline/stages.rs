use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, FittedModel};
use super::manifest::{hash_files, unix_now, RunManifest, StageRecord};
use super::{ModelKind, PipelineConfig, Precision, Workspace};
use crate::density::{feature_density, DensityEncoding, Extractor};
use crate::ehr::{format_code_set, label_cohort, parse_code_set, CohortRecord, Patient};
use crate::encoders::{encode_narrative, FeatureEncoder, FeatureSet, FeatureVocab, NarrativeView, OneHotView, SequenceView};
use crate::error::{Error, Result};
use crate::eval::cv::grid_search_cv;
use crate::eval::metrics::{compute_metrics, MetricReport};
use crate::eval::split::{split_622, Split, SplitAssignment};
use crate::eval::study::{feature_combination_study, render_aligned, StudyTable};
use crate::eval::subgroup::{subgroup_csv, subgroup_eval};
use crate::explain::{lime_explain, Explanation, LimeConfig, NarrativeScorer, TextScorer};
use crate::models::tlstm::{TLstm, TLstmConfig};
use crate::models::train::{log_csv, train, TrainConfig, TrainOutcome};
use crate::models::transformer::{Transformer, TransformerConfig};
use crate::models::{Differentiable, TokenizedNarrative};
use crate::scalar::Scalar;
use crate::subword::SubwordVocab;
use crate::synth::generate;
use crate::terminology::{DescriptionTable, GroupingTable};

/// One pipeline command with the arguments that shape its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    Synth,
    Label,
    Encode { features: FeatureSet },
    Vocab { features: FeatureSet },
    Density { encoding: DensityEncoding, top_k: usize },
    Train { model: ModelKind, features: FeatureSet },
    Evaluate { model: ModelKind, features: FeatureSet },
    Subgroup { model: ModelKind, features: FeatureSet },
    Explain { features: FeatureSet },
    Report,
}

const PATIENTS: &str = "patients.jsonl";
const TRUTH: &str = "truth.csv";
const GROUPING: &str = "terminology/grouping.tsv";
const DESCRIPTIONS: &str = "terminology/descriptions.tsv";
const HF_CODES: &str = "terminology/hf_codes.tsv";
const CANCER_CODES: &str = "terminology/cancer_codes.tsv";
const SIGNAL_CODES: &str = "terminology/signal_codes.tsv";
const COHORT: &str = "cohort.jsonl";
const EXCLUSIONS: &str = "exclusions.csv";
const SPLIT: &str = "split.csv";
const REPORT: &str = "report.txt";
const TABLE3: &str = "results/table3.csv";

fn enc(f: FeatureSet, file: &str) -> String {
    format!("encoded/{f}/{file}")
}

fn tag(m: ModelKind, f: FeatureSet) -> String {
    format!("{m}_{f}")
}

fn checkpoint_path(m: ModelKind, f: FeatureSet) -> String {
    format!("models/{}.json", tag(m, f))
}

fn predictions_path(m: ModelKind, f: FeatureSet) -> String {
    format!("results/predictions_{}.csv", tag(m, f))
}

fn metrics_path(m: ModelKind, f: FeatureSet) -> String {
    format!("results/metrics_{}.csv", tag(m, f))
}

fn subgroup_path(m: ModelKind, f: FeatureSet) -> String {
    format!("results/subgroup_{}.csv", tag(m, f))
}

/// Inputs read and outputs written by one stage run.
struct Io {
    inputs: Vec<String>,
    outputs: Vec<String>,
}

impl Io {
    fn new(inputs: &[&str]) -> Self {
        Io {
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            outputs: Vec::new(),
        }
    }

    fn input(&mut self, p: impl Into<String>) {
        self.inputs.push(p.into());
    }

    fn write_text(&mut self, ws: &Workspace, rel: &str, text: &str) -> Result<()> {
        ws.write_text(rel, text)?;
        self.outputs.push(rel.to_string());
        Ok(())
    }

    fn write_jsonl<T: Serialize>(&mut self, ws: &Workspace, rel: &str, items: &[T]) -> Result<()> {
        ws.write_jsonl(rel, items)?;
        self.outputs.push(rel.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, ws: &Workspace, rel: &str, value: &T) -> Result<()> {
        ws.write_json(rel, value)?;
        self.outputs.push(rel.to_string());
        Ok(())
    }
}

/// Runs a stage and records it in the run manifest. `synth` starts a new
/// manifest; other stages require the configuration to match the one
/// already recorded.
pub fn run_stage(ws: &Workspace, cfg: &PipelineConfig, stage: &Stage) -> Result<StageRecord> {
    execute(ws, cfg, stage)
}

pub(crate) fn execute(ws: &Workspace, cfg: &PipelineConfig, stage: &Stage) -> Result<StageRecord> {
    cfg.validate()?;
    let mut manifest = match (stage, RunManifest::load(ws)?) {
        (Stage::Synth, _) | (_, None) => RunManifest::new(cfg),
        (_, Some(m)) => {
            if &m.config != cfg {
                return Err(Error::Config(format!(
                    "configuration differs from the one recorded in {}; use a fresh output directory",
                    ws.path(super::MANIFEST_FILE).display()
                )));
            }
            m
        }
    };
    log::info!("stage {stage:?}");
    let started = unix_now();
    let io = match stage {
        Stage::Synth => synth(ws, cfg)?,
        Stage::Label => label(ws, cfg)?,
        Stage::Encode { features } => encode(ws, cfg, *features)?,
        Stage::Vocab { features } => vocab(ws, cfg, *features)?,
        Stage::Density { encoding, top_k } => density(ws, cfg, *encoding, *top_k)?,
        Stage::Train { model, features } => train_stage(ws, cfg, *model, *features)?,
        Stage::Evaluate { model, features } => evaluate(ws, cfg, *model, *features)?,
        Stage::Subgroup { model, features } => subgroup(ws, *model, *features)?,
        Stage::Explain { features } => explain(ws, cfg, *features)?,
        Stage::Report => report(ws, cfg)?,
    };
    let rec = StageRecord {
        stage: stage.clone(),
        inputs: hash_files(ws, &io.inputs)?,
        outputs: hash_files(ws, &io.outputs)?,
        started_unix: started,
        finished_unix: unix_now(),
    };
    manifest.record(rec.clone());
    manifest.save(ws)?;
    Ok(rec)
}

/// Every stage in dependency order: data, encodings for each studied
/// feature set, density profiles, models, subgroups, explanations, report.
pub fn run_all(ws: &Workspace, cfg: &PipelineConfig) -> Result<StudyTable> {
    execute(ws, cfg, &Stage::Synth)?;
    execute(ws, cfg, &Stage::Label)?;
    let mut combos: Vec<FeatureSet> = cfg.study_features.clone();
    if !combos.contains(&cfg.features) {
        combos.push(cfg.features);
    }
    let needs_vocab = cfg.models.contains(&ModelKind::Transformer);
    for &f in &combos {
        execute(ws, cfg, &Stage::Encode { features: f })?;
        if needs_vocab || f == cfg.features {
            execute(ws, cfg, &Stage::Vocab { features: f })?;
        }
    }
    for encoding in DensityEncoding::ALL {
        execute(
            ws,
            cfg,
            &Stage::Density {
                encoding,
                top_k: cfg.density_top_k,
            },
        )?;
    }
    let models: Vec<&str> = cfg.models.iter().map(|m| m.as_str()).collect();
    let table = feature_combination_study(&models, &combos, |m, f| {
        let model: ModelKind = m.parse()?;
        execute(ws, cfg, &Stage::Train { model, features: f })?;
        execute(ws, cfg, &Stage::Evaluate { model, features: f })?;
        read_metrics(ws, model, f)?
            .remove(&Split::Test)
            .ok_or_else(|| Error::Data(format!("no test metrics for {m} on {f}")))
    })?;
    for &model in &cfg.models {
        execute(
            ws,
            cfg,
            &Stage::Subgroup {
                model,
                features: cfg.features,
            },
        )?;
    }
    if needs_vocab {
        execute(ws, cfg, &Stage::Explain { features: cfg.features })?;
    }
    execute(ws, cfg, &Stage::Report)?;
    Ok(table)
}

fn synth(ws: &Workspace, cfg: &PipelineConfig) -> Result<Io> {
    let cohort = generate(&cfg.generator)?;
    let t = &cohort.terminology;
    let mut io = Io::new(&[]);
    io.write_jsonl(ws, PATIENTS, &cohort.patients)?;
    io.write_text(ws, TRUTH, &cohort.truth_csv())?;
    io.write_text(ws, GROUPING, &t.grouping.to_tsv())?;
    io.write_text(ws, DESCRIPTIONS, &t.descriptions.to_tsv())?;
    io.write_text(ws, HF_CODES, &format_code_set(&t.hf_codes))?;
    io.write_text(ws, CANCER_CODES, &format_code_set(&t.cancer_codes))?;
    io.write_text(ws, SIGNAL_CODES, &format_code_set(&t.signal_codes.iter().cloned().collect()))?;
    Ok(io)
}

fn label(ws: &Workspace, cfg: &PipelineConfig) -> Result<Io> {
    let mut io = Io::new(&[PATIENTS, HF_CODES, CANCER_CODES]);
    let patients: Vec<Patient> = ws.read_jsonl(PATIENTS)?;
    let hf = parse_code_set(&ws.read_text(HF_CODES)?)?;
    let cancer = parse_code_set(&ws.read_text(CANCER_CODES)?)?;
    let cohort = label_cohort(&patients, &hf, &cancer, cfg.gap_days)?;
    let split = split_622(&cohort.records, cfg.seed)?;
    let mut excl = String::from("patient_id,reason\n");
    for e in &cohort.excluded {
        excl.push_str(&format!("{},{}\n", e.patient_id, e.reason.as_str()));
    }
    log::info!(
        "labeled {} patients: {} cases, {} excluded",
        cohort.records.len(),
        cohort.n_cases(),
        cohort.excluded.len()
    );
    io.write_jsonl(ws, COHORT, &cohort.records)?;
    io.write_text(ws, EXCLUSIONS, &excl)?;
    io.write_text(ws, SPLIT, &split.to_csv())?;
    Ok(io)
}

fn load_split(ws: &Workspace, cfg: &PipelineConfig) -> Result<SplitAssignment> {
    SplitAssignment::from_csv(&ws.read_text(SPLIT)?, cfg.seed)
}

fn load_grouping(ws: &Workspace) -> Result<GroupingTable> {
    GroupingTable::from_tsv(&ws.read_text(GROUPING)?, GROUPING)
}

fn encode(ws: &Workspace, cfg: &PipelineConfig, f: FeatureSet) -> Result<Io> {
    let mut io = Io::new(&[COHORT, SPLIT, GROUPING, DESCRIPTIONS]);
    let records: Vec<CohortRecord> = ws.read_jsonl(COHORT)?;
    let split = load_split(ws, cfg)?;
    let grouping = load_grouping(ws)?;
    let descriptions = DescriptionTable::from_tsv(&ws.read_text(DESCRIPTIONS)?)?;
    let train_recs = split.select_owned(&records, Split::Train);
    let vocab = FeatureVocab::fit(&train_recs, &grouping, cfg.min_patients)?;
    let encoder = FeatureEncoder::new(&vocab, &grouping, f);

    let onehot: Vec<OneHotView> = records.iter().map(|r| encoder.encode_onehot(r)).collect();
    let mut sequences = Vec::new();
    let mut seq_excl = String::from("patient_id,usable_encounters\n");
    for r in &records {
        match encoder.build_sequence(r) {
            Ok(s) => sequences.push(s),
            Err(e) => seq_excl.push_str(&format!("{},{}\n", e.patient_id, e.usable_encounters)),
        }
    }
    let mut narratives = Vec::new();
    let mut audit = String::from("patient_id,issue,detail\n");
    for r in &records {
        match encode_narrative(r, &grouping, &descriptions, f) {
            Ok((n, a)) => {
                for c in a.missing_descriptions {
                    audit.push_str(&format!("{},missing_description,{c}\n", r.id()));
                }
                narratives.push(n);
            }
            Err(Error::Data(msg)) => audit.push_str(&format!("{},excluded,\"{msg}\"\n", r.id())),
            Err(e) => return Err(e),
        }
    }
    log::info!(
        "encoded {f}: one-hot width {}, {} sequences, {} narratives",
        encoder.input_dim(),
        sequences.len(),
        narratives.len()
    );
    io.write_json(ws, &enc(f, "feature_vocab.json"), &vocab)?;
    io.write_jsonl(ws, &enc(f, "onehot.jsonl"), &onehot)?;
    io.write_jsonl(ws, &enc(f, "sequences.jsonl"), &sequences)?;
    io.write_text(ws, &enc(f, "sequence_exclusions.csv"), &seq_excl)?;
    io.write_jsonl(ws, &enc(f, "narratives.jsonl"), &narratives)?;
    io.write_text(ws, &enc(f, "narrative_audit.csv"), &audit)?;
    Ok(io)
}

fn vocab(ws: &Workspace, cfg: &PipelineConfig, f: FeatureSet) -> Result<Io> {
    let narr_path = enc(f, "narratives.jsonl");
    let mut io = Io::new(&[&narr_path, SPLIT]);
    let narratives: Vec<NarrativeView> = ws.read_jsonl(&narr_path)?;
    let split = load_split(ws, cfg)?;
    let train: Vec<NarrativeView> = narratives
        .into_iter()
        .filter(|n| split.get(&n.patient_id) == Some(Split::Train))
        .collect();
    let v = SubwordVocab::build(&train, cfg.subword.vocab_size)?.with_max_len(cfg.subword.max_len);
    io.write_text(ws, &enc(f, "subword_vocab.txt"), &v.to_text())?;
    Ok(io)
}

fn load_vocab(ws: &Workspace, cfg: &PipelineConfig, f: FeatureSet) -> Result<SubwordVocab> {
    SubwordVocab::from_text(&ws.read_text(&enc(f, "subword_vocab.txt"))?, cfg.subword.max_len)
}

fn density(ws: &Workspace, cfg: &PipelineConfig, encoding: DensityEncoding, top_k: usize) -> Result<Io> {
    if top_k < 1 {
        return Err(Error::Usage("top_k must be >= 1".into()));
    }
    let mut io = Io::new(&[COHORT]);
    let records: Vec<CohortRecord> = ws.read_jsonl(COHORT)?;
    let profile = match encoding {
        DensityEncoding::RawIcd => feature_density(&records, Extractor::RawIcd, top_k),
        DensityEncoding::Phewas => {
            io.input(GROUPING);
            let g = load_grouping(ws)?;
            feature_density(&records, Extractor::Phewas(&g), top_k)
        }
        DensityEncoding::Subword => {
            let f = cfg.features;
            io.input(enc(f, "narratives.jsonl"));
            io.input(enc(f, "subword_vocab.txt"));
            let narratives: Vec<NarrativeView> = ws.read_jsonl(&enc(f, "narratives.jsonl"))?;
            let vocab = load_vocab(ws, cfg, f)?;
            feature_density(
                &records,
                Extractor::Subword {
                    vocab: &vocab,
                    narratives: &narratives,
                    truncated: false,
                },
                top_k,
            )
        }
    };
    io.write_text(ws, &format!("density/{encoding}_top{top_k}.csv"), &profile.to_csv())?;
    Ok(io)
}

fn by_split<X: Clone>(items: &[X], id: impl Fn(&X) -> &str, split: &SplitAssignment, which: &[Split]) -> Vec<X> {
    items
        .iter()
        .filter(|x| split.get(id(x)).is_some_and(|s| which.contains(&s)))
        .cloned()
        .collect()
}

fn tokenized(narratives: &[NarrativeView], vocab: &SubwordVocab) -> Vec<TokenizedNarrative> {
    narratives
        .iter()
        .map(|n| TokenizedNarrative {
            patient_id: n.patient_id.clone(),
            label: n.label,
            ids: vocab.tokenize(&n.text),
        })
        .collect()
}

fn seeded(t: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..t.clone() }
}

fn fit_deep<T: Scalar, M: Differentiable<T>>(
    model: M,
    tr: &[M::Input],
    va: &[M::Input],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    if tr.is_empty() || va.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    train(model, tr, Some(va), cfg)
}

fn train_stage(ws: &Workspace, cfg: &PipelineConfig, m: ModelKind, f: FeatureSet) -> Result<Io> {
    let split = load_split(ws, cfg)?;
    let mut io = Io::new(&[SPLIT]);
    let (ckpt, log) = match m {
        ModelKind::Logistic | ModelKind::Svm | ModelKind::Stumps => {
            let path = enc(f, "onehot.jsonl");
            io.input(&path);
            let all: Vec<OneHotView> = ws.read_jsonl(&path)?;
            let merged = by_split(&all, |x| &x.patient_id, &split, &[Split::Train, Split::Validation]);
            let train_cfg = seeded(&cfg.onehot.train, cfg.seed);
            let cv = grid_search_cv(&cfg.onehot.grid(m)?, &merged, cfg.onehot.folds, &train_cfg, cfg.seed)?;
            log::info!("{m}: best grid point {}", cv.best().describe());
            let ckpt = Checkpoint::new(m, f, train_cfg.threshold, None, FittedModel::OneHot(cv.model.clone()));
            (ckpt, cv.table_csv())
        }
        ModelKind::Tlstm => {
            let path = enc(f, "sequences.jsonl");
            io.input(&path);
            let all: Vec<SequenceView> = ws.read_jsonl(&path)?;
            let tr = by_split(&all, |x| &x.patient_id, &split, &[Split::Train]);
            let va = by_split(&all, |x| &x.patient_id, &split, &[Split::Validation]);
            let input_dim = all
                .first()
                .map(|s| s.input_dim)
                .ok_or_else(|| Error::Data(format!("{path} is empty")))?;
            let mc = TLstmConfig {
                input_dim,
                hidden: cfg.tlstm.hidden,
                fc: cfg.tlstm.fc,
                seed: cfg.seed,
            };
            let tc = seeded(&cfg.tlstm.train, cfg.seed);
            match cfg.precision {
                Precision::F64 => {
                    let o = fit_deep(TLstm::<f64>::new(mc)?, &tr, &va, &tc)?;
                    (Checkpoint::new(m, f, o.threshold, Some(o.best_epoch), FittedModel::Tlstm(o.model)), log_csv(&o.log))
                }
                Precision::F32 => {
                    let o = fit_deep(TLstm::<f32>::new(mc)?, &tr, &va, &tc)?;
                    (Checkpoint::new(m, f, o.threshold, Some(o.best_epoch), FittedModel::Tlstm32(o.model)), log_csv(&o.log))
                }
            }
        }
        ModelKind::Transformer => {
            let (npath, vpath) = (enc(f, "narratives.jsonl"), enc(f, "subword_vocab.txt"));
            io.input(&npath);
            io.input(&vpath);
            let narratives: Vec<NarrativeView> = ws.read_jsonl(&npath)?;
            let vocab = load_vocab(ws, cfg, f)?;
            let tokens = tokenized(&narratives, &vocab);
            let tr = by_split(&tokens, |x| &x.patient_id, &split, &[Split::Train]);
            let va = by_split(&tokens, |x| &x.patient_id, &split, &[Split::Validation]);
            let t = &cfg.transformer;
            let mc = TransformerConfig {
                vocab_size: vocab.len(),
                max_len: cfg.subword.max_len,
                d_model: t.d_model,
                n_layers: t.n_layers,
                n_heads: t.n_heads,
                d_ff: t.d_ff,
                seed: cfg.seed,
            };
            let tc = seeded(&t.train, cfg.seed);
            match cfg.precision {
                Precision::F64 => {
                    let o = fit_deep(Transformer::<f64>::new(mc)?, &tr, &va, &tc)?;
                    (
                        Checkpoint::new(m, f, o.threshold, Some(o.best_epoch), FittedModel::Transformer(o.model)),
                        log_csv(&o.log),
                    )
                }
                Precision::F32 => {
                    let o = fit_deep(Transformer::<f32>::new(mc)?, &tr, &va, &tc)?;
                    (
                        Checkpoint::new(m, f, o.threshold, Some(o.best_epoch), FittedModel::Transformer32(o.model)),
                        log_csv(&o.log),
                    )
                }
            }
        }
    };
    io.write_json(ws, &checkpoint_path(m, f), &ckpt)?;
    io.write_text(ws, &format!("models/{}_log.csv", tag(m, f)), &log)?;
    Ok(io)
}

fn load_checkpoint(ws: &Workspace, m: ModelKind, f: FeatureSet) -> Result<Checkpoint> {
    let c: Checkpoint = ws.read_json(&checkpoint_path(m, f))?;
    c.validate()?;
    if c.model != m || c.features != f {
        return Err(Error::Data(format!(
            "{} holds a {} model on {}",
            checkpoint_path(m, f),
            c.model,
            c.features
        )));
    }
    Ok(c)
}

/// (patient id, label, score) for every patient the model can score.
fn score_all(ws: &Workspace, cfg: &PipelineConfig, c: &Checkpoint, io: &mut Io) -> Result<Vec<(String, f64, f64)>> {
    let f = c.features;
    let rows = match c.model {
        ModelKind::Logistic | ModelKind::Svm | ModelKind::Stumps => {
            let path = enc(f, "onehot.jsonl");
            io.input(&path);
            let xs: Vec<OneHotView> = ws.read_jsonl(&path)?;
            let s = c.predict_onehot(&xs)?;
            xs.into_iter().zip(s).map(|(x, s)| (x.patient_id, x.label, s)).collect()
        }
        ModelKind::Tlstm => {
            let path = enc(f, "sequences.jsonl");
            io.input(&path);
            let xs: Vec<SequenceView> = ws.read_jsonl(&path)?;
            let s = c.predict_sequences(&xs)?;
            xs.into_iter().zip(s).map(|(x, s)| (x.patient_id, x.label, s)).collect()
        }
        ModelKind::Transformer => {
            let (npath, vpath) = (enc(f, "narratives.jsonl"), enc(f, "subword_vocab.txt"));
            io.input(&npath);
            io.input(&vpath);
            let narratives: Vec<NarrativeView> = ws.read_jsonl(&npath)?;
            let xs = tokenized(&narratives, &load_vocab(ws, cfg, f)?);
            let s = c.predict_tokens(&xs)?;
            xs.into_iter()
                .zip(s)
                .map(|(x, s)| (x.patient_id, f64::from(x.label), s))
                .collect()
        }
    };
    Ok(rows)
}

fn evaluate(ws: &Workspace, cfg: &PipelineConfig, m: ModelKind, f: FeatureSet) -> Result<Io> {
    let mut io = Io::new(&[SPLIT, &checkpoint_path(m, f)]);
    let c = load_checkpoint(ws, m, f)?;
    let split = load_split(ws, cfg)?;
    let rows = score_all(ws, cfg, &c, &mut io)?;
    let mut preds = String::from("patient_id,split,label,score\n");
    let mut per_split: BTreeMap<Split, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (id, y, s) in &rows {
        let Some(sp) = split.get(id) else { continue };
        if sp == Split::Train {
            continue;
        }
        preds.push_str(&format!("{id},{sp},{y},{s}\n"));
        let e = per_split.entry(sp).or_default();
        e.0.push(*s);
        e.1.push(*y);
    }
    let mut metrics = format!("split,{}\n", MetricReport::CSV_HEADER);
    for sp in [Split::Validation, Split::Test] {
        let r = match per_split.get(&sp) {
            Some((s, y)) => compute_metrics(s, y, c.threshold)?,
            None => MetricReport::empty(c.threshold),
        };
        if sp == Split::Test {
            log::info!("{m} on {f}: test F1 {:.3} AUC {:?}", r.f1, r.auc);
        }
        metrics.push_str(&format!("{sp},{}\n", r.csv_fields()));
    }
    io.write_text(ws, &predictions_path(m, f), &preds)?;
    io.write_text(ws, &metrics_path(m, f), &metrics)?;
    Ok(io)
}

fn read_metrics(ws: &Workspace, m: ModelKind, f: FeatureSet) -> Result<BTreeMap<Split, MetricReport>> {
    let threshold = load_checkpoint(ws, m, f)?.threshold;
    let mut out = BTreeMap::new();
    for line in ws.read_text(&metrics_path(m, f))?.lines().skip(1) {
        let (sp, rest) = line
            .split_once(',')
            .ok_or_else(|| Error::Data(format!("bad metrics row {line:?}")))?;
        out.insert(sp.parse()?, MetricReport::parse_csv_fields(rest, threshold)?);
    }
    Ok(out)
}

fn subgroup(ws: &Workspace, m: ModelKind, f: FeatureSet) -> Result<Io> {
    let preds_path = predictions_path(m, f);
    let mut io = Io::new(&[COHORT, &preds_path, &checkpoint_path(m, f)]);
    let threshold = load_checkpoint(ws, m, f)?.threshold;
    let mut scores: BTreeMap<String, f64> = BTreeMap::new();
    for line in ws.read_text(&preds_path)?.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Data(format!("{preds_path}: bad row {line:?}")));
        }
        if cols[1] == Split::Test.as_str() {
            let s = cols[3]
                .parse()
                .map_err(|e| Error::Data(format!("{preds_path}: score {:?}: {e}", cols[3])))?;
            scores.insert(cols[0].to_string(), s);
        }
    }
    let records: Vec<CohortRecord> = ws.read_jsonl(COHORT)?;
    let test: Vec<CohortRecord> = records.into_iter().filter(|r| scores.contains_key(r.id())).collect();
    let s: Vec<f64> = test.iter().map(|r| scores[r.id()]).collect();
    let rows = subgroup_eval(&test, &s, threshold)?;
    io.write_text(ws, &subgroup_path(m, f), &subgroup_csv(&rows))?;
    Ok(io)
}

fn explain_with<S: TextScorer>(scorer: &S, narratives: &[NarrativeView], n: usize, lime: &LimeConfig) -> Result<Vec<Explanation>> {
    let mut scored: Vec<(f64, &NarrativeView)> = narratives
        .iter()
        .map(|x| Ok((scorer.score_text(&x.text)?, x)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.patient_id.cmp(&b.1.patient_id)));
    scored
        .into_iter()
        .take(n)
        .map(|(_, x)| lime_explain(scorer, x, lime))
        .collect()
}

fn explain(ws: &Workspace, cfg: &PipelineConfig, f: FeatureSet) -> Result<Io> {
    let m = ModelKind::Transformer;
    let (npath, vpath) = (enc(f, "narratives.jsonl"), enc(f, "subword_vocab.txt"));
    let mut io = Io::new(&[SPLIT, &checkpoint_path(m, f), &npath, &vpath]);
    let c = load_checkpoint(ws, m, f)?;
    let vocab = load_vocab(ws, cfg, f)?;
    let split = load_split(ws, cfg)?;
    let narratives: Vec<NarrativeView> = ws.read_jsonl(&npath)?;
    let cases: Vec<NarrativeView> = narratives
        .into_iter()
        .filter(|x| x.label == 1 && split.get(&x.patient_id) == Some(Split::Test))
        .collect();
    let lime = LimeConfig {
        seed: cfg.seed,
        ..cfg.explain.lime
    };
    let n = cfg.explain.n_patients;
    let expl = match &c.body {
        FittedModel::Transformer(model) => explain_with(&NarrativeScorer { model, vocab: &vocab }, &cases, n, &lime)?,
        FittedModel::Transformer32(model) => explain_with(&NarrativeScorer { model, vocab: &vocab }, &cases, n, &lime)?,
        _ => return Err(Error::Data("explain needs a transformer checkpoint".into())),
    };
    let mut text = String::new();
    for e in &expl {
        text.push_str(&format!("{}\n{}\n\n", e.patient_id, e.to_text()));
    }
    io.write_jsonl(ws, &format!("results/explanations_{f}.jsonl"), &expl)?;
    io.write_text(ws, &format!("results/explanations_{f}.txt"), &text)?;
    Ok(io)
}

/// Parses `results/metrics_{model}_{features}.csv`.
fn parse_result_name(rel: &str, prefix: &str) -> Option<(ModelKind, FeatureSet)> {
    let stem = rel.strip_prefix(&format!("results/{prefix}_"))?.strip_suffix(".csv")?;
    let (m, f) = stem.split_once('_')?;
    Some((m.parse().ok()?, f.parse().ok()?))
}

fn report(ws: &Workspace, cfg: &PipelineConfig) -> Result<Io> {
    let mut io = Io::new(&[]);
    let files = ws.list("results")?;
    let mut found: BTreeSet<(ModelKind, FeatureSet)> = BTreeSet::new();
    for rel in &files {
        if let Some(key) = parse_result_name(rel, "metrics") {
            io.input(rel.clone());
            io.input(checkpoint_path(key.0, key.1));
            found.insert(key);
        }
    }
    if found.is_empty() {
        return Err(Error::MissingArtifact(ws.path("results/metrics_<model>_<features>.csv")));
    }
    let mut combos: Vec<FeatureSet> = cfg.study_features.clone();
    for (_, f) in &found {
        if !combos.contains(f) {
            combos.push(*f);
        }
    }
    let mut table = StudyTable::default();
    for m in ModelKind::ALL {
        for &f in &combos {
            if found.contains(&(m, f)) {
                if let Some(r) = read_metrics(ws, m, f)?.remove(&Split::Test) {
                    table.rows.push(crate::eval::study::StudyRow {
                        model: m.as_str().to_string(),
                        features: f,
                        report: r,
                    });
                }
            }
        }
    }

    let mut out = String::from("Test F1 by model and feature set\n\n");
    out.push_str(&table.to_text());

    out.push_str(&format!("\nTest metrics on {}\n\n", cfg.features.display_name()));
    let header: Vec<String> = ["model", "F1", "precision", "recall", "AUC", "specificity", "accuracy", "n"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for r in table.rows.iter().filter(|r| r.features == cfg.features) {
        let x = &r.report;
        rows.push(vec![
            r.model.clone(),
            format!("{:.3}", x.f1),
            format!("{:.3}", x.precision),
            format!("{:.3}", x.recall),
            x.auc.map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into()),
            format!("{:.3}", x.specificity),
            format!("{:.3}", x.accuracy),
            x.n.to_string(),
        ]);
    }
    out.push_str(&render_aligned(&header, &rows));

    for rel in &files {
        let Some((m, f)) = parse_result_name(rel, "subgroup") else { continue };
        io.input(rel.clone());
        out.push_str(&format!("\nSubgroups, {m} on {}\n\n", f.display_name()));
        let text = ws.read_text(rel)?;
        let mut lines = text.lines();
        let head: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
        let pick = ["group", "n", "f1", "precision", "recall", "auc"];
        let idx: Vec<usize> = pick
            .iter()
            .map(|p| head.iter().position(|h| h == p).ok_or_else(|| Error::Data(format!("{rel}: no column {p}"))))
            .collect::<Result<_>>()?;
        let rows: Vec<Vec<String>> = lines
            .map(|l| {
                let cols: Vec<&str> = l.split(',').collect();
                idx.iter()
                    .map(|&i| match cols.get(i).map(|v| (v, v.parse::<f64>())) {
                        Some((v, Ok(x))) if v.contains('.') => format!("{x:.3}"),
                        Some((v, _)) if !v.is_empty() => v.to_string(),
                        _ => "-".into(),
                    })
                    .collect()
            })
            .collect();
        out.push_str(&render_aligned(&pick.iter().map(|s| s.to_string()).collect::<Vec<_>>(), &rows));
    }
    io.write_text(ws, TABLE3, &table.to_csv())?;
    io.write_text(ws, REPORT, &out)?;
    Ok(io)
}
