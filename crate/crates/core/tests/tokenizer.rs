mod common;

use common::{check_greedy_fixture, random_vocab, random_word};
use hfrisk::subword::{SubwordVocab, CLS_ID};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn greedy_maximality_on_random_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for fixture in 0..1000 {
        let vocab = random_vocab(&mut rng);
        let word = random_word(&mut rng);
        if let Err(e) = check_greedy_fixture(&vocab, &word) {
            panic!("fixture {fixture}: {e}");
        }
    }
}

#[test]
fn over_length_input_truncates_to_exactly_512() {
    let vocab = SubwordVocab::build_from_texts(["heart failure"], 40).unwrap();
    // "heart" and "failure" are whole pieces; 600 words give 600 pieces
    let text = vec!["heart failure"; 300].join(" ");
    assert_eq!(vocab.tokenize_words(&text).len(), 600);
    let ids = vocab.tokenize(&text);
    assert_eq!(ids.len(), 512);
    assert_eq!(ids[0], CLS_ID);
    assert_eq!(&ids[1..5], &vocab.tokenize_words("heart failure heart failure")[..]);
    for n in [1usize, 100, 511] {
        let short = vec!["heart"; n].join(" ");
        assert_eq!(vocab.tokenize(&short).len(), n + 1);
    }
}

#[test]
fn length_bound_holds_for_any_max_len() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base = SubwordVocab::build_from_texts(["alpha beta gamma delta"], 60).unwrap();
    for _ in 0..200 {
        let max_len = rng.random_range(1..40);
        let vocab = base.clone().with_max_len(max_len);
        let n = rng.random_range(0..60);
        let text: Vec<&str> = (0..n).map(|_| ["alpha", "beta", "gamma", "delta", "zeta"][rng.random_range(0..5)]).collect();
        assert!(vocab.tokenize(&text.join(" ")).len() <= max_len);
    }
}

#[test]
fn vocab_serialization_round_trips_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let v = random_vocab(&mut rng);
        let text = v.to_text();
        let back = SubwordVocab::from_text(&text, 512).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_text().as_bytes(), text.as_bytes());
    }
    let corpus = ["the patient is a 64 year old white female", "lung cancer ; fibrosis, edema"];
    let v = SubwordVocab::build_from_texts(corpus, 150).unwrap();
    assert_eq!(SubwordVocab::from_text(&v.to_text(), 512).unwrap(), v);
}
