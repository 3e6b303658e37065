mod common;

use common::{perturb, random_sequences, random_tokens, seeded_rng, small_tlstm, small_transformer};
use hfrisk::models::gradcheck::check_gradients;
use hfrisk::models::linear::{LinearLoss, LinearModel};
use rand::Rng;

const TOL: f64 = 1e-4;

#[test]
fn tlstm_gradients_match_finite_differences() {
    for seed in 0..5u64 {
        let mut rng = seeded_rng(100 + seed);
        let mut m = small_tlstm(seed);
        perturb(&mut m, &mut rng, 0.3);
        let data = random_sequences(&mut rng, 5, 3);
        let r = check_gradients(&m, &data, 1e-5, 1).unwrap();
        assert!(r.max_rel_error < TOL, "seed {seed}: {r:?}");
    }
}

#[test]
fn transformer_gradients_match_finite_differences() {
    for seed in 0..5u64 {
        let mut rng = seeded_rng(200 + seed);
        let mut m = small_transformer(seed);
        perturb(&mut m, &mut rng, 0.2);
        let data = random_tokens(&mut rng, 12, 8, 3);
        let r = check_gradients(&m, &data, 1e-5, 1).unwrap();
        assert!(r.max_rel_error < TOL, "seed {seed}: {r:?}");
    }
}

#[test]
fn linear_logistic_gradients_match_finite_differences() {
    let mut rng = seeded_rng(9);
    let mut m = LinearModel::<f64>::new(6, LinearLoss::Logistic, 0.0).unwrap();
    perturb(&mut m, &mut rng, 0.5);
    let data: Vec<_> = (0..8)
        .map(|i| hfrisk::encoders::OneHotView {
            patient_id: String::new(),
            label: (i % 2) as f64,
            values: (0..6).map(|_| rng.random_range(0..2) as f64).collect(),
        })
        .collect();
    let r = check_gradients(&m, &data, 1e-6, 1).unwrap();
    assert!(r.max_rel_error < TOL, "{r:?}");
}
