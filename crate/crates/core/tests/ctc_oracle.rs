mod common;

use common::*;
use gossipspeech::ctc::{self, Alphabet};
use gossipspeech::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn two_frame_example_matches_enumeration() {
    // (a,a), (a,_), (_,a) collapse to "a": 3 * 0.25
    let probs = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
    assert!((ctc_brute_force(&probs, &[0], 1) - 0.75).abs() < 1e-15);
    let loss = ctc::ctc_loss(&ln_matrix(&probs), 2, &[0], 1).unwrap();
    assert!((loss.value - 0.2876820724517809).abs() < 1e-12);
}

#[test]
fn loss_matches_brute_force_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let frames = rng.random_range(1..=4);
        let symbols = rng.random_range(1..=2);
        let len = rng.random_range(0..=2);
        let label: Vec<usize> = (0..len).map(|_| rng.random_range(0..symbols)).collect();
        let probs = random_probs(&mut rng, frames, symbols + 1);
        let expected = ctc_brute_force(&probs, &label, symbols);
        let loss = ctc::ctc_loss(&ln_matrix(&probs), frames, &label, symbols).unwrap();
        if expected == 0.0 {
            assert!(!loss.is_feasible(), "{label:?} over {frames} frames");
        } else {
            let got = (-loss.value).exp();
            assert!((got - expected).abs() / expected < 1e-9, "{got} vs {expected}");
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 60 {
        let frames = rng.random_range(2..=5);
        let symbols = 2;
        let len = rng.random_range(1..=2);
        let label: Vec<usize> = (0..len).map(|_| rng.random_range(0..symbols)).collect();
        let valid = rng.random_range(1..=frames);
        let logits: Vec<f64> = (0..frames * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = Matrix::from_vec(frames, 3, logits.clone());
        let out = ctc::ctc_grad(&ctc::log_softmax(&m).unwrap(), valid, &label, symbols).unwrap();
        if !out.is_feasible() {
            continue;
        }
        let numeric = central_differences(&logits, 1e-5, |x| {
            let m = Matrix::from_vec(frames, 3, x.to_vec());
            ctc::ctc_loss(&ctc::log_softmax(&m).unwrap(), valid, &label, symbols).unwrap().value
        });
        let err = max_relative_error(out.grad.as_slice(), &numeric, 1e-6);
        assert!(err < 1e-4, "relative error {err}");
        for t in valid..frames {
            assert!(out.grad.row(t).iter().all(|&g| g == 0.0));
        }
        checked += 1;
    }
}

#[test]
fn posterior_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let frames = rng.random_range(4..=12);
        let probs = random_probs(&mut rng, frames, 4);
        let label: Vec<usize> = (0..rng.random_range(0..=3)).map(|_| rng.random_range(0..3)).collect();
        let valid = rng.random_range(label.len().max(1) + 1..=frames);
        let Some((_, gamma)) = ctc::ctc_posteriors(&ln_matrix(&probs), valid, &label, 3).unwrap() else {
            continue;
        };
        let mut total = 0.0;
        for t in 0..valid {
            let s: f64 = gamma.row(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-8);
            total += s;
        }
        assert!((total - valid as f64).abs() < 1e-7);
    }
}

#[test]
fn long_sequences_stay_finite() {
    // 2048 frames would underflow any linear-space product
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let probs = random_probs(&mut rng, 2048, 6);
    let label: Vec<usize> = (0..200).map(|i| i % 5).collect();
    let loss = ctc::ctc_loss(&ln_matrix(&probs), 2048, &label, 5).unwrap();
    assert!(loss.value.is_finite() && loss.value > 0.0);
}

fn canonical_expansion(label: &[usize], blank: usize) -> Vec<usize> {
    let mut path = Vec::new();
    for (i, &k) in label.iter().enumerate() {
        if i > 0 && label[i - 1] == k {
            path.push(blank);
        }
        path.push(k);
    }
    path
}

proptest! {
    #[test]
    fn greedy_inverts_canonical_expansion(label in prop::collection::vec(0usize..3, 0..=6)) {
        let alphabet = Alphabet::new(['x', 'y', 'z']).unwrap();
        let mut path = canonical_expansion(&label, 3);
        if path.is_empty() {
            path.push(3);
        }
        let rows: Vec<Vec<f64>> = path
            .iter()
            .map(|&k| (0..4).map(|c| if c == k { 2.0 } else { -1.0 }).collect())
            .collect();
        let decoded = ctc::greedy_decode(&Matrix::from_rows(&rows), path.len(), &alphabet);
        let expected: String = label.iter().map(|&k| ['x', 'y', 'z'][k]).collect();
        prop_assert_eq!(decoded, expected);
    }

    #[test]
    fn log_softmax_normalizes(row in prop::collection::vec(-50.0f64..50.0, 1..8)) {
        let m = ctc::log_softmax(&Matrix::from_rows(&[row])).unwrap();
        let s: f64 = m.row(0).iter().map(|v| v.exp()).sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }
}
