#![allow(dead_code)]

use hfrisk::ehr::{label_cohort, CohortRecord, DEFAULT_GAP_DAYS};
use hfrisk::encoders::{encode_narrative, FeatureEncoder, FeatureSet, FeatureVocab, NarrativeView, OneHotView, SequenceStep, SequenceView};
use hfrisk::eval::{auc, compute_metrics, split_622, MetricReport, Split};
use hfrisk::models::linear::{LinearLoss, LinearModel};
use hfrisk::models::stumps::{train_boosted_stumps, StumpConfig};
use hfrisk::models::tlstm::{TLstm, TLstmConfig};
use hfrisk::models::train::{train, TrainConfig};
use hfrisk::models::transformer::{Transformer, TransformerConfig};
use hfrisk::models::{Differentiable, Labeled, TokenizedNarrative};
use hfrisk::subword::SubwordVocab;
use hfrisk::synth::{generate, GeneratorConfig, SyntheticCohort};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_sequences(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<SequenceView> {
    (0..n)
        .map(|i| {
            let len = rng.random_range(1..=4);
            SequenceView {
                patient_id: format!("s{i}"),
                label: (i % 2) as f64,
                steps: (0..len)
                    .map(|t| {
                        let mut active: Vec<usize> = (0..dim).filter(|_| rng.random_bool(0.4)).collect();
                        if active.is_empty() {
                            active.push(rng.random_range(0..dim));
                        }
                        SequenceStep {
                            active,
                            elapsed_days: if t == 0 { 0 } else { rng.random_range(0..400) },
                        }
                    })
                    .collect(),
                static_features: vec![],
                input_dim: dim,
            }
        })
        .collect()
}

pub fn random_tokens(rng: &mut ChaCha8Rng, vocab: u32, max_len: usize, n: usize) -> Vec<TokenizedNarrative> {
    (0..n)
        .map(|i| {
            let len = rng.random_range(1..max_len);
            let mut ids = vec![2u32];
            ids.extend((1..len).map(|_| rng.random_range(1..vocab)));
            if i == 2 {
                ids.push(0);
            }
            TokenizedNarrative {
                patient_id: format!("t{i}"),
                label: (i % 2) as u8,
                ids,
            }
        })
        .collect()
}

pub fn perturb<M: Differentiable<f64>>(m: &mut M, rng: &mut ChaCha8Rng, scale: f64) {
    for p in m.params_mut() {
        *p += rng.random_range(-scale..scale);
    }
}

/// Small shapes used by the gradient suite.
pub fn small_tlstm(seed: u64) -> TLstm<f64> {
    TLstm::new(TLstmConfig {
        input_dim: 5,
        hidden: 8,
        fc: 4,
        seed,
    })
    .unwrap()
}

pub fn small_transformer(seed: u64) -> Transformer<f64> {
    Transformer::new(TransformerConfig {
        vocab_size: 12,
        max_len: 8,
        d_model: 16,
        n_layers: 2,
        n_heads: 4,
        d_ff: 16,
        seed,
    })
    .unwrap()
}

/// A generated, labeled and split cohort with its encoders fitted on train.
pub struct Prepared {
    pub cohort: SyntheticCohort,
    pub train: Vec<CohortRecord>,
    pub val: Vec<CohortRecord>,
    pub test: Vec<CohortRecord>,
    pub vocab: FeatureVocab,
}

pub fn prepare(cfg: &GeneratorConfig) -> Prepared {
    let cohort = generate(cfg).unwrap();
    let t = &cohort.terminology;
    let labeled = label_cohort(&cohort.patients, &t.hf_codes, &t.cancer_codes, DEFAULT_GAP_DAYS).unwrap();
    let split = split_622(&labeled.records, cfg.seed).unwrap();
    let train = split.select_owned(&labeled.records, Split::Train);
    let val = split.select_owned(&labeled.records, Split::Validation);
    let test = split.select_owned(&labeled.records, Split::Test);
    let vocab = FeatureVocab::fit(&train, &t.grouping, 10).unwrap();
    Prepared {
        cohort,
        train,
        val,
        test,
        vocab,
    }
}

fn test_auc(scores: Vec<f64>, xs: &[impl Labeled]) -> f64 {
    let y: Vec<f64> = xs.iter().map(|x| x.label()).collect();
    auc(&scores, &y).unwrap()
}

impl Prepared {
    pub fn encoder(&self, f: FeatureSet) -> FeatureEncoder<'_> {
        FeatureEncoder::new(&self.vocab, &self.cohort.terminology.grouping, f)
    }

    pub fn onehot(&self, f: FeatureSet) -> (Vec<OneHotView>, Vec<OneHotView>) {
        let enc = self.encoder(f);
        let oh = |rs: &[CohortRecord]| rs.iter().map(|r| enc.encode_onehot(r)).collect::<Vec<_>>();
        let mut tr = oh(&self.train);
        tr.extend(oh(&self.val));
        (tr, oh(&self.test))
    }

    pub fn linear_auc(&self, f: FeatureSet, loss: LinearLoss) -> f64 {
        let (tr, te) = self.onehot(f);
        let m = LinearModel::<f64>::new(tr[0].values.len(), loss, 1e-4).unwrap();
        let tc = TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 10,
            patience: 0,
            ..Default::default()
        };
        let m = train(m, &tr, None, &tc).unwrap().model;
        test_auc(m.predict_proba_batch(&te).unwrap(), &te)
    }

    pub fn stumps_auc(&self, f: FeatureSet) -> f64 {
        let (tr, te) = self.onehot(f);
        let m = train_boosted_stumps::<f64>(&tr, &StumpConfig::default()).unwrap();
        test_auc(m.predict_proba_batch(&te).unwrap(), &te)
    }

    pub fn tlstm_auc(&self, f: FeatureSet, seed: u64) -> f64 {
        let enc = self.encoder(f);
        let sq = |rs: &[CohortRecord]| rs.iter().filter_map(|r| enc.build_sequence(r).ok()).collect::<Vec<_>>();
        let (tr, va, te) = (sq(&self.train), sq(&self.val), sq(&self.test));
        let m = TLstm::<f64>::new(TLstmConfig {
            input_dim: enc.input_dim(),
            hidden: 16,
            fc: 8,
            seed,
        })
        .unwrap();
        let tc = TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 10,
            patience: 3,
            seed,
            ..Default::default()
        };
        let o = train(m, &tr, Some(&va), &tc).unwrap();
        test_auc(o.model.predict_proba_batch(&te).unwrap(), &te)
    }

    pub fn narratives(&self, rs: &[CohortRecord], f: FeatureSet) -> Vec<NarrativeView> {
        let t = &self.cohort.terminology;
        rs.iter()
            .filter_map(|r| encode_narrative(r, &t.grouping, &t.descriptions, f).ok().map(|x| x.0))
            .collect()
    }

    pub fn transformer_auc(&self, f: FeatureSet, seed: u64) -> f64 {
        self.transformer_report(f, seed, false).auc.unwrap()
    }

    /// Test metrics of the small transformer at its fitted threshold.
    pub fn transformer_report(&self, f: FeatureSet, seed: u64, tune_threshold: bool) -> MetricReport {
        let (tr, va, te) = (
            self.narratives(&self.train, f),
            self.narratives(&self.val, f),
            self.narratives(&self.test, f),
        );
        let sv = SubwordVocab::build(&tr, 2000).unwrap();
        let tok = |ns: &[NarrativeView]| {
            ns.iter()
                .map(|n| TokenizedNarrative {
                    patient_id: n.patient_id.clone(),
                    label: n.label,
                    ids: sv.tokenize(&n.text),
                })
                .collect::<Vec<_>>()
        };
        let (ttr, tva, tte) = (tok(&tr), tok(&va), tok(&te));
        let m = Transformer::<f64>::new(TransformerConfig {
            vocab_size: sv.len(),
            max_len: sv.max_len,
            d_model: 32,
            n_layers: 1,
            n_heads: 4,
            d_ff: 64,
            seed,
        })
        .unwrap();
        let tc = TrainConfig {
            learning_rate: 1e-3,
            max_epochs: 8,
            patience: 3,
            seed,
            tune_threshold,
            ..Default::default()
        };
        let o = train(m, &ttr, Some(&tva), &tc).unwrap();
        let y: Vec<f64> = tte.iter().map(|x| x.label()).collect();
        compute_metrics(&o.model.predict_proba_batch(&tte).unwrap(), &y, o.threshold).unwrap()
    }
}

/// Textbook LSTM cell followed by the same tanh head, read from a T-LSTM
/// parameter vector (gate order i, f, o, candidate).
pub fn lstm_reference_logit(m: &TLstm<f64>, x: &SequenceView) -> f64 {
    let c = m.config;
    let (d, h, f) = (c.input_dim, c.hidden, c.fc);
    let p = m.params();
    let l = m.layout();
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut hs = vec![0.0; h];
    let mut cs = vec![0.0; h];
    for t in 0..x.len() {
        let input = x.step_input(t);
        let mut z = vec![0.0; 4 * h];
        for (k, zk) in z.iter_mut().enumerate() {
            let mut s = p[l.b + k];
            for &(j, v) in &input {
                assert!(j < d);
                s += p[l.w_x + j * 4 * h + k] * v;
            }
            for (q, hq) in hs.iter().enumerate() {
                s += p[l.u + k * h + q] * hq;
            }
            *zk = s;
        }
        for k in 0..h {
            let (i, fg, o, g) = (sig(z[k]), sig(z[h + k]), sig(z[2 * h + k]), z[3 * h + k].tanh());
            cs[k] = fg * cs[k] + i * g;
            hs[k] = o * cs[k].tanh();
        }
    }
    let mut logit = p[l.b_out];
    for r in 0..f {
        let mut s = p[l.b_fc + r];
        for (q, hq) in hs.iter().enumerate() {
            s += p[l.w_fc + r * h + q] * hq;
        }
        logit += s.tanh() * p[l.w_out + r];
    }
    logit
}

pub fn timing_config(seed: u64) -> GeneratorConfig {
    GeneratorConfig {
        n_patients: 4000,
        case_fraction: 0.5,
        signal_mode: hfrisk::synth::SignalMode::Timing,
        seed,
        ..Default::default()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Brute-force pair count: (2 * concordant + ties, 2 * pairs).
pub fn pairwise_auc(scores: &[f64], labels: &[f64]) -> Option<(u64, u64)> {
    let (mut num, mut pairs) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1.0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0.0 {
                continue;
            }
            pairs += 1;
            num += if si > sj {
                2
            } else if si == sj {
                1
            } else {
                0
            };
        }
    }
    (pairs > 0).then_some((num, 2 * pairs))
}

pub const ALPHABET: [char; 5] = ['a', 'b', 'c', 'd', 'e'];

/// Random vocabulary over a-d; `e` never appears.
pub fn random_vocab(rng: &mut ChaCha8Rng) -> SubwordVocab {
    use hfrisk::subword::{CLS, PAD, UNK};
    let mut set = std::collections::BTreeSet::new();
    for _ in 0..rng.random_range(3..30) {
        let len = rng.random_range(1..=4);
        let p: String = (0..len).map(|_| ALPHABET[rng.random_range(0..4)]).collect();
        if rng.random_bool(0.5) {
            set.insert(format!("##{p}"));
        } else {
            set.insert(p);
        }
    }
    for c in &ALPHABET[..rng.random_range(1..=4)] {
        set.insert(c.to_string());
        set.insert(format!("##{c}"));
    }
    let mut lines = vec![PAD.to_string(), UNK.to_string(), CLS.to_string()];
    lines.extend(set);
    SubwordVocab::from_text(&(lines.join("\n") + "\n"), 512).unwrap()
}

pub fn random_word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(1..=12);
    (0..len)
        .map(|_| ALPHABET[if rng.random_bool(0.97) { rng.random_range(0..4) } else { 4 }])
        .collect()
}

/// Reference segmentation: at each position take the longest listed piece.
pub fn greedy_oracle(vocab: &SubwordVocab, word: &str) -> Option<Vec<String>> {
    let chars: Vec<char> = word.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let prefix = if i == 0 { "" } else { "##" };
        let best = (i + 1..=chars.len())
            .rev()
            .map(|j| (j, format!("{prefix}{}", chars[i..j].iter().collect::<String>())))
            .find(|(_, p)| vocab.contains(p))?;
        out.push(best.1);
        i = best.0;
    }
    Some(out)
}

/// Whether tokenizer output agrees with the oracle and is greedy-maximal.
pub fn check_greedy_fixture(vocab: &SubwordVocab, word: &str) -> std::result::Result<(), String> {
    use hfrisk::subword::{detokenize, CLS_ID, UNK_ID};
    let got = vocab
        .segment_word(word)
        .map(|ids| vocab.decode(&ids).into_iter().map(String::from).collect::<Vec<_>>());
    let want = greedy_oracle(vocab, word);
    if got != want {
        return Err(format!("{word:?}: {got:?} vs oracle {want:?}"));
    }
    match got {
        Some(pieces) => {
            let refs: Vec<&str> = pieces.iter().map(String::as_str).collect();
            if detokenize(&refs) != vec![word.to_string()] {
                return Err(format!("{word:?}: pieces {pieces:?} do not rejoin"));
            }
            for k in 0..pieces.len().saturating_sub(1) {
                let next = pieces[k + 1].trim_start_matches("##").chars().next().unwrap();
                if vocab.contains(&format!("{}{next}", pieces[k])) {
                    return Err(format!("{word:?}: {} extends by {next}", pieces[k]));
                }
            }
            let ids = vocab.tokenize(word);
            if ids[0] != CLS_ID || ids[1..].contains(&UNK_ID) {
                return Err(format!("{word:?}: bad ids {ids:?}"));
            }
        }
        None => {
            if vocab.tokenize(word) != vec![CLS_ID, UNK_ID] {
                return Err(format!("{word:?}: expected [CLS] [UNK]"));
            }
        }
    }
    Ok(())
}

/// One LIME trial against a random additive model; true when the
/// surrogate's top-3 segments match the model's.
pub fn lime_additive_trial(rng: &mut ChaCha8Rng, trial: u64) -> bool {
    use hfrisk::explain::{lime_explain, LimeConfig};
    let d = rng.random_range(4..=14);
    let names: Vec<String> = (0..d).map(|k| format!("finding {trial} {k}")).collect();
    let weights: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let text = format!("{} ; {}", names[..d / 2].join(", "), names[d / 2..].join(", "));
    let model = |t: &str| -> f64 {
        let present: Vec<&str> = t.split([',', ';']).map(str::trim).collect();
        names
            .iter()
            .zip(&weights)
            .filter(|(n, _)| present.contains(&n.as_str()))
            .map(|(_, w)| w)
            .sum()
    };
    let cfg = LimeConfig {
        n_samples: 300,
        seed: trial,
        ..Default::default()
    };
    let x = NarrativeView {
        patient_id: format!("p{trial}"),
        label: 1,
        text,
    };
    let e = lime_explain(&model, &x, &cfg).unwrap();
    let mut want: Vec<usize> = (0..d).collect();
    want.sort_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()).then(a.cmp(&b)));
    want.truncate(3);
    e.ranking().into_iter().take(3).collect::<Vec<_>>() == want
}

pub fn small_pipeline_config() -> hfrisk::pipeline::PipelineConfig {
    let mut cfg = hfrisk::pipeline::PipelineConfig::default().with_seed(11);
    cfg.generator.n_patients = 400;
    cfg.generator.case_fraction = 0.3;
    cfg.study_features = vec![FeatureSet::DIAG, FeatureSet::ALL];
    cfg.subword.vocab_size = 300;
    cfg.subword.max_len = 128;
    cfg.density_top_k = 50;
    cfg.onehot.folds = 3;
    cfg.onehot.logistic_grid = vec![1e-3];
    cfg.onehot.svm_grid = vec![1e-3];
    cfg.onehot.stumps_grid.truncate(1);
    cfg.onehot.train.max_epochs = 3;
    cfg.tlstm.hidden = 8;
    cfg.tlstm.fc = 4;
    cfg.tlstm.train.max_epochs = 2;
    cfg.transformer.d_model = 16;
    cfg.transformer.n_layers = 1;
    cfg.transformer.n_heads = 2;
    cfg.transformer.d_ff = 32;
    cfg.transformer.train.max_epochs = 2;
    cfg.transformer.train.learning_rate = 1e-3;
    cfg.explain.n_patients = 2;
    cfg.explain.lime.n_samples = 60;
    cfg
}
