//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code paths it checks.

#![allow(dead_code)]

use gossipspeech::data::{FeatureSequence, Transcript};
use gossipspeech::Matrix;
use rand::Rng;

/// Edit distance by plain exhaustive recursion.
pub fn edit_distance_recursive<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    match (a, b) {
        ([], _) => b.len(),
        (_, []) => a.len(),
        ([x, ra @ ..], [y, rb @ ..]) => {
            let sub = edit_distance_recursive(ra, rb) + usize::from(x != y);
            let del = edit_distance_recursive(ra, b) + 1;
            let ins = edit_distance_recursive(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

fn collapse_path(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Sum of path probabilities over all `classes^frames` frame labelings
/// that collapse to `label`. `probs` is in linear space.
pub fn ctc_brute_force(probs: &[Vec<f64>], label: &[usize], blank: usize) -> f64 {
    let frames = probs.len();
    let classes = probs[0].len();
    let mut total = 0.0;
    let mut path = vec![0usize; frames];
    for code in 0..classes.pow(frames as u32) {
        let mut c = code;
        for p in path.iter_mut() {
            *p = c % classes;
            c /= classes;
        }
        if collapse_path(&path, blank) == label {
            total += path.iter().enumerate().map(|(t, &k)| probs[t][k]).product::<f64>();
        }
    }
    total
}

/// A random probability matrix with entries bounded away from zero.
pub fn random_probs<R: Rng>(rng: &mut R, frames: usize, classes: usize) -> Vec<Vec<f64>> {
    (0..frames)
        .map(|_| {
            let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

pub fn ln_matrix(probs: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(&probs.iter().map(|r| r.iter().map(|v| v.ln()).collect()).collect::<Vec<_>>())
}

/// Central differences of `f` around `x` with step `h`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn random_features<R: Rng>(rng: &mut R, frames: usize, dim: usize) -> FeatureSequence {
    let data = (0..frames * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureSequence::from_raw(Matrix::from_vec(frames, dim, data)).unwrap()
}

/// Transcript with `label` and no padding; text is irrelevant to the loss.
pub fn transcript(label: &[usize]) -> Transcript {
    Transcript { ids: label.to_vec(), valid_len: label.len(), text: String::new() }
}

/// Log-softmax computed independently of the library.
pub fn log_softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + z.ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

/// `-ln` of the brute-force path sum over the first `valid` rows of `logits`.
pub fn brute_force_loss_from_logits(logits: &Matrix, valid: usize, label: &[usize], blank: usize) -> f64 {
    let lp = log_softmax_rows(logits);
    let probs: Vec<Vec<f64>> = (0..valid).map(|t| lp.row(t).iter().map(|v| v.exp()).collect()).collect();
    -ctc_brute_force(&probs, label, blank).ln()
}
