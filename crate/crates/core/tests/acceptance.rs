//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p hfrisk --test acceptance`; a release build
//! (`--release`) is several times faster for criteria 5-7.

mod common;

use std::time::{Duration, Instant};

use common::*;
use hfrisk::encoders::FeatureSet;
use hfrisk::eval::{auc, compute_metrics, split_622, Split};
use hfrisk::density::{feature_density, Extractor};
use hfrisk::ehr::{label_cohort, DEFAULT_GAP_DAYS};
use hfrisk::models::gradcheck::check_gradients;
use hfrisk::models::linear::LinearLoss;
use hfrisk::models::{g_decay, Differentiable};
use hfrisk::pipeline::{replay, run_all, RunManifest, Workspace, MANIFEST_FILE};
use hfrisk::subword::{SubwordVocab, CLS_ID};
use hfrisk::synth::{generate, GeneratorConfig, SignalMode};
use rand::Rng;

const SEEDS: [u64; 3] = [1, 2, 3];

const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;
const LSTM_TOL: f64 = 1e-12;
const THESIS_MARGIN: f64 = 0.15;
const TLSTM_MIN_AUC: f64 = 0.80;
const NULL_BAND: (f64, f64) = (0.45, 0.55);
const SPLIT_TOL: f64 = 0.005;
const LIME_MIN_HITS: usize = 95;

/// Criteria known to fail with the pinned seeds. They still print FAIL.
const DOCUMENTED_FAILURES: &[&str] = &["C7"];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within_budget(v: Verdict, took: Duration, budget: Duration) -> Verdict {
    if took <= budget {
        v
    } else {
        verdict(false, format!("{}; took {:.1}s over the {}s budget", v.detail, took.as_secs_f64(), budget.as_secs()))
    }
}

fn c1_gradients() -> Verdict {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = seeded_rng(100 + seed);
        let mut m = small_tlstm(seed);
        perturb(&mut m, &mut rng, 0.3);
        let data = random_sequences(&mut rng, 5, 3);
        worst = worst.max(check_gradients(&m, &data, GRAD_EPS, 1).unwrap().max_rel_error);

        let mut rng = seeded_rng(200 + seed);
        let mut m = small_transformer(seed);
        perturb(&mut m, &mut rng, 0.2);
        let data = random_tokens(&mut rng, 12, 8, 3);
        worst = worst.max(check_gradients(&m, &data, GRAD_EPS, 1).unwrap().max_rel_error);
    }
    let took = t0.elapsed();
    within_budget(
        verdict(worst < GRAD_TOL, format!("max relative error {worst:.2e} (< {GRAD_TOL:.0e}), T-LSTM and transformer, 5 seeds each")),
        took,
        Duration::from_secs(60),
    )
}

fn c2_degeneration() -> Verdict {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = seeded_rng(seed);
        let mut m = small_tlstm(seed);
        perturb(&mut m, &mut rng, 0.5);
        for mut x in random_sequences(&mut rng, 5, 20) {
            x.steps.iter_mut().for_each(|s| s.elapsed_days = 0);
            worst = worst.max((m.logit(&x).unwrap() - lstm_reference_logit(&m, &x)).abs());
        }
    }
    let g0 = g_decay(0.0f64);
    let decreasing = (1..=10_000).all(|dt| g_decay(dt as f64) < g_decay((dt - 1) as f64));
    verdict(
        worst <= LSTM_TOL && g0 == 1.0 && decreasing,
        format!("max |logit - LSTM| {worst:.1e} (<= {LSTM_TOL:.0e}), g(0) = {g0}, strictly decreasing on [0, 1e4]: {decreasing}"),
    )
}

fn c3_metrics() -> Verdict {
    let mut rng = seeded_rng(33);
    let mut bad = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=500);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..40) as f64 / 39.0).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
        let want = pairwise_auc(&s, &y).map(|(a, b)| a as f64 / b as f64);
        let t = rng.random::<f64>();
        let m = compute_metrics(&s, &y, t).unwrap();
        let c = m.confusion;
        let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (p, r) = (div(c.tp, c.tp + c.fp), div(c.tp, c.tp + c.fn_));
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let recount = s.iter().zip(&y).filter(|(si, yi)| **si >= t && **yi == 1.0).count() as u64;
        let ok = auc(&s, &y) == want
            && m.auc == want
            && recount == c.tp
            && c.n() == n as u64
            && m.precision == p
            && m.recall == r
            && m.f1 == f1
            && m.specificity == div(c.tn, c.tn + c.fp)
            && m.accuracy == div(c.tp + c.tn, n as u64);
        bad += usize::from(!ok);
    }
    verdict(bad == 0, format!("{}/200 random sets match the brute-force oracle exactly", 200 - bad))
}

fn c4_density() -> Verdict {
    let t0 = Instant::now();
    let mut failures = Vec::new();
    for seed in SEEDS {
        let cfg = GeneratorConfig {
            n_patients: 2000,
            seed,
            ..Default::default()
        };
        let p = prepare(&cfg);
        let records: Vec<_> = p.train.iter().chain(&p.val).chain(&p.test).cloned().collect();
        let grouping = &p.cohort.terminology.grouping;
        let raw = feature_density(&records, Extractor::RawIcd, 400).counts();
        let phe = feature_density(&records, Extractor::Phewas(grouping), 400).counts();
        if let Some(r) = (0..raw.len()).find(|&r| phe.get(r).copied().unwrap_or(0) < raw[r]) {
            failures.push(format!("seed {seed}: rank {} PheWAS below raw ICD", r + 1));
        }
        let narratives = p.narratives(&records, FeatureSet::ALL);
        let vocab = SubwordVocab::build(&narratives, 2000).unwrap();
        let sub = feature_density(
            &records,
            Extractor::Subword {
                vocab: &vocab,
                narratives: &narratives,
                truncated: false,
            },
            400,
        )
        .counts();
        if sub[0] < phe[0] {
            failures.push(format!("seed {seed}: rank-1 subword {} < PheWAS {}", sub[0], phe[0]));
        }
    }
    let took = t0.elapsed();
    let detail = if failures.is_empty() {
        "PheWAS >= raw ICD at every rank <= 400 and rank-1 subword >= PheWAS, n = 2000, seeds 1-3".to_string()
    } else {
        failures.join("; ")
    };
    within_budget(verdict(failures.is_empty(), detail), took, Duration::from_secs(30))
}

fn c5_thesis() -> Verdict {
    let t0 = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for seed in SEEDS {
        let p = prepare(&GeneratorConfig {
            n_patients: 4000,
            signal_mode: SignalMode::Synonym,
            n_synonym_codes: 50,
            max_code_patients: 9,
            frequency_threshold: 10,
            seed,
            ..Default::default()
        });
        let lin = p.linear_auc(FeatureSet::ALL, LinearLoss::Logistic);
        let tr = p.transformer_auc(FeatureSet::ALL, seed);
        pass &= tr >= lin + THESIS_MARGIN;
        parts.push(format!("seed {seed}: transformer {tr:.3} vs linear {lin:.3}"));
    }
    within_budget(
        verdict(pass, format!("{} (margin {THESIS_MARGIN})", parts.join(", "))),
        t0.elapsed(),
        Duration::from_secs(600),
    )
}

fn c6_timing() -> Verdict {
    let t0 = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for seed in SEEDS {
        let p = prepare(&timing_config(seed));
        let lin = p.linear_auc(FeatureSet::ALL, LinearLoss::Logistic);
        let tl = p.tlstm_auc(FeatureSet::ALL, seed);
        pass &= (NULL_BAND.0..=NULL_BAND.1).contains(&lin) && tl >= TLSTM_MIN_AUC;
        parts.push(format!("seed {seed}: linear {lin:.3}, T-LSTM {tl:.3}"));
    }
    within_budget(
        verdict(
            pass,
            format!("{} (linear in [{}, {}], T-LSTM >= {TLSTM_MIN_AUC})", parts.join(", "), NULL_BAND.0, NULL_BAND.1),
        ),
        t0.elapsed(),
        Duration::from_secs(600),
    )
}

fn c7_null() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for seed in SEEDS {
        let p = prepare(&GeneratorConfig {
            n_patients: 4000,
            case_fraction: 0.5,
            signal_mode: SignalMode::None,
            seed,
            ..Default::default()
        });
        let aucs = [
            ("logistic", p.linear_auc(FeatureSet::ALL, LinearLoss::Logistic)),
            ("svm", p.linear_auc(FeatureSet::ALL, LinearLoss::Hinge)),
            ("stumps", p.stumps_auc(FeatureSet::ALL)),
            ("tlstm", p.tlstm_auc(FeatureSet::ALL, seed)),
            ("transformer", p.transformer_auc(FeatureSet::ALL, seed)),
        ];
        let n1 = p.test.iter().filter(|r| r.label.is_case()).count() as f64;
        let n0 = p.test.len() as f64 - n1;
        // rank-sum standard deviation of AUC when scores ignore the label
        let sd = ((n1 + n0 + 1.0) / (12.0 * n1 * n0)).sqrt();
        for (name, a) in aucs {
            if !(NULL_BAND.0..=NULL_BAND.1).contains(&a) {
                pass = false;
                parts.push(format!("seed {seed} {name} {a:.3} outside band (z = {:.2}, null sd {sd:.4})", (a - 0.5) / sd));
            }
        }
        let (lo, hi) = aucs.iter().fold((1.0f64, 0.0f64), |(l, h), (_, a)| (l.min(*a), h.max(*a)));
        parts.push(format!("seed {seed}: {lo:.3}-{hi:.3}"));
    }
    verdict(pass, format!("all five models, {} (band [{}, {}])", parts.join(", "), NULL_BAND.0, NULL_BAND.1))
}

fn c8_split() -> Verdict {
    let c = generate(&GeneratorConfig {
        n_patients: 12_806,
        signal_mode: SignalMode::Bag,
        ..Default::default()
    })
    .unwrap();
    let t = &c.terminology;
    let cohort = label_cohort(&c.patients, &t.hf_codes, &t.cancer_codes, DEFAULT_GAP_DAYS).unwrap();
    let s = split_622(&cohort.records, 7).unwrap();
    let sizes: Vec<usize> = Split::ALL.iter().map(|&k| s.count(k)).collect();
    let target = 1602.0 / 12806.0;
    let fracs: Vec<f64> = Split::ALL
        .iter()
        .map(|&k| {
            let part = s.select(&cohort.records, k);
            part.iter().filter(|r| r.label.is_case()).count() as f64 / part.len() as f64
        })
        .collect();
    let pass = cohort.records.len() == 12_806
        && sizes == [7683, 2562, 2561]
        && fracs.iter().all(|f| (f - target).abs() <= SPLIT_TOL);
    verdict(
        pass,
        format!(
            "{} patients -> {:?}, case fractions {:.4}/{:.4}/{:.4} (target {target:.4} +/- {SPLIT_TOL})",
            cohort.records.len(),
            sizes,
            fracs[0],
            fracs[1],
            fracs[2]
        ),
    )
}

fn c9_tokenizer() -> Verdict {
    let vocab = SubwordVocab::build_from_texts(["heart failure"], 40).unwrap();
    let long = vec!["heart failure"; 300].join(" ");
    let ids = vocab.tokenize(&long);
    let truncated = ids.len() == 512 && ids[0] == CLS_ID && vocab.tokenize_words(&long).len() == 600;

    let mut rng = seeded_rng(2024);
    let mut first_error = None;
    for fixture in 0..1000 {
        let v = random_vocab(&mut rng);
        let w = random_word(&mut rng);
        if let Err(e) = check_greedy_fixture(&v, &w) {
            first_error.get_or_insert(format!("fixture {fixture}: {e}"));
        }
    }
    let mut rng = seeded_rng(77);
    let round_trip = (0..50).all(|_| {
        let v = random_vocab(&mut rng);
        let text = v.to_text();
        SubwordVocab::from_text(&text, 512).is_ok_and(|b| b == v && b.to_text().as_bytes() == text.as_bytes())
    });
    let pass = truncated && first_error.is_none() && round_trip;
    verdict(
        pass,
        format!(
            "600 pieces -> {} ids; greedy maximality {}; vocab round trip {}",
            ids.len(),
            first_error.unwrap_or_else(|| "holds on 1000 fixtures".into()),
            if round_trip { "bit-exact" } else { "differs" }
        ),
    )
}

fn c10_lime() -> Verdict {
    let mut rng = seeded_rng(10);
    let hits = (0..100).filter(|&t| lime_additive_trial(&mut rng, t)).count();
    verdict(hits >= LIME_MIN_HITS, format!("top-3 ranking recovered in {hits}/100 additive trials (>= {LIME_MIN_HITS})"))
}

fn c11_reproducibility() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path().join("run"));
    let cfg = small_pipeline_config();
    if let Err(e) = run_all(&ws, &cfg) {
        return verdict(false, format!("pipeline run failed: {e}"));
    }
    let manifest = RunManifest::from_path(&ws.path(MANIFEST_FILE)).unwrap();
    let again = Workspace::new(dir.path().join("replay"));
    match replay(&manifest, &again) {
        Ok(r) => {
            let csvs = r.matched.iter().filter(|p| p.ends_with(".csv")).count();
            verdict(
                r.is_exact(),
                format!(
                    "{} artifacts ({csvs} CSV) identical after replay, {} differ",
                    r.matched.len(),
                    r.mismatched.len()
                ),
            )
        }
        Err(e) => verdict(false, format!("replay failed: {e}")),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("gradient suite", c1_gradients),
        ("T-LSTM degeneration", c2_degeneration),
        ("metrics oracle", c3_metrics),
        ("density dominance", c4_density),
        ("subword beats one-hot", c5_thesis),
        ("sequence beats one-hot", c6_timing),
        ("null control", c7_null),
        ("split fidelity", c8_split),
        ("tokenizer contract", c9_tokenizer),
        ("LIME fidelity", c10_lime),
        ("reproducibility", c11_reproducibility),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = Vec::new();
    let mut ran = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = format!("C{}", i + 1);
        if filter.as_ref().is_some_and(|f| !id.eq_ignore_ascii_case(f) && !name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let v = run();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!("{status} {id:>3} {name}: {} [{:.1}s]", v.detail, t0.elapsed().as_secs_f64());
        if !v.pass {
            failed.push(id);
        }
    }
    let (known, unexpected): (Vec<&String>, Vec<&String>) = failed.iter().partition(|id| DOCUMENTED_FAILURES.contains(&id.as_str()));
    println!("acceptance: {} of {ran} criteria passed", ran - failed.len());
    if !known.is_empty() {
        println!("documented failures (see the decisions ledger): {known:?}");
    }
    if !unexpected.is_empty() {
        println!("undocumented failures: {unexpected:?}");
        std::process::exit(1);
    }
}
