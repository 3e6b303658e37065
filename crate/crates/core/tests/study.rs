mod common;

use common::{prepare, Prepared};
use hfrisk::density::{feature_density, Extractor};
use hfrisk::encoders::FeatureSet;
use hfrisk::eval::compute_metrics;
use hfrisk::eval::study::feature_combination_study;
use hfrisk::eval::subgroup::{subgroup_eval, CancerGroup};
use hfrisk::subword::SubwordVocab;
use hfrisk::synth::{GeneratorConfig, SignalLocation};

#[test]
fn medication_signal_needs_medication_features() {
    let cfg = GeneratorConfig {
        synonym_location: SignalLocation::Medications,
        seed: 3,
        ..Default::default()
    };
    let p = prepare(&cfg);
    let table = feature_combination_study(&["transformer"], &[FeatureSet::DIAG, FeatureSet::ALL], |_, f| {
        Ok(p.transformer_report(f, 3, true))
    })
    .unwrap();
    assert_eq!(table.rows.len(), 2);
    let diag = table.get("transformer", FeatureSet::DIAG).unwrap();
    let all = table.get("transformer", FeatureSet::ALL).unwrap();
    assert!(diag.f1 < all.f1, "diag {:.3} vs all {:.3}", diag.f1, all.f1);
}

fn small(seed: u64) -> Prepared {
    prepare(&GeneratorConfig {
        n_patients: 1500,
        n_synonym_codes: 20,
        seed,
        ..Default::default()
    })
}

#[test]
fn subgroups_partition_the_test_set() {
    let p = small(4);
    let scores: Vec<f64> = (0..p.test.len()).map(|i| (i * 37 % 101) as f64 / 100.0).collect();
    let rows = subgroup_eval(&p.test, &scores, 0.5).unwrap();
    assert_eq!(rows.len(), CancerGroup::ALL.len());
    assert_eq!(rows.iter().map(|r| r.report.n).sum::<u64>(), p.test.len() as u64);
    for row in &rows {
        let (s, y): (Vec<f64>, Vec<f64>) = p
            .test
            .iter()
            .zip(&scores)
            .filter(|(r, _)| CancerGroup::of(r) == Some(row.group))
            .map(|(r, &s)| (s, r.label.as_f64()))
            .unzip();
        if s.is_empty() {
            assert_eq!(row.report.n, 0);
        } else {
            assert_eq!(row.report, compute_metrics(&s, &y, 0.5).unwrap());
        }
    }
}

#[test]
fn grouping_and_subword_dominance() {
    for seed in [1u64, 2] {
        let p = prepare(&GeneratorConfig {
            n_patients: 2000,
            seed,
            ..Default::default()
        });
        let records: Vec<_> = p.train.iter().chain(&p.val).chain(&p.test).cloned().collect();
        let grouping = &p.cohort.terminology.grouping;
        let raw = feature_density(&records, Extractor::RawIcd, 400).counts();
        let phe = feature_density(&records, Extractor::Phewas(grouping), 400).counts();
        for r in 0..raw.len() {
            assert!(phe.get(r).copied().unwrap_or(0) >= raw[r], "seed {seed} rank {r}");
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
        assert!(sub[0] >= phe[0]);
    }
}
