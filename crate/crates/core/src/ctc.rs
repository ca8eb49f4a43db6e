//! Connectionist temporal classification: log-space forward-backward loss,
//! its gradient with respect to pre-softmax logits, and greedy decoding.
//!
//! The blank is always the last output class (`Alphabet::blank_id`).

use crate::matrix::{log_add, log_sum_exp, Matrix};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CtcError {
    #[error("non-finite logit at frame {frame}, class {class}")]
    NonFinite { frame: usize, class: usize },
    #[error("valid length {valid_len} outside 1..={rows}")]
    BadValidLength { valid_len: usize, rows: usize },
    #[error("label token {token} at position {position} is not below blank id {blank}")]
    BadToken { token: usize, position: usize, blank: usize },
    #[error("duplicate symbol {0:?} in alphabet")]
    DuplicateSymbol(char),
    #[error("alphabet is empty")]
    EmptyAlphabet,
}

/// Ordered output symbols; the blank is implicit and sits after them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
}

impl Alphabet {
    pub fn new(symbols: impl IntoIterator<Item = char>) -> Result<Self, CtcError> {
        let symbols: Vec<char> = symbols.into_iter().collect();
        if symbols.is_empty() {
            return Err(CtcError::EmptyAlphabet);
        }
        for (i, c) in symbols.iter().enumerate() {
            if symbols[..i].contains(c) {
                return Err(CtcError::DuplicateSymbol(*c));
            }
        }
        Ok(Self { symbols })
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn blank_id(&self) -> usize {
        self.symbols.len()
    }

    /// Transcript padding id; distinct from every symbol and from blank.
    pub fn pad_id(&self) -> usize {
        self.symbols.len() + 1
    }

    /// Width of the model's output layer.
    pub fn output_width(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        self.symbols.iter().position(|&s| s == c)
    }

    pub fn symbol(&self, id: usize) -> Option<char> {
        self.symbols.get(id).copied()
    }
}

/// Pre-softmax scores for `valid_len` leading frames; later rows are padding.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    pub values: Matrix,
    pub valid_len: usize,
}

impl LogitMatrix {
    pub fn new(values: Matrix, valid_len: usize) -> Self {
        Self { values, valid_len }
    }
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax(logits: &Matrix) -> Result<Matrix, CtcError> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        if let Some(class) = row.iter().position(|v| !v.is_finite()) {
            return Err(CtcError::NonFinite { frame: r, class });
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    Ok(out)
}

/// Negative log-likelihood of a label; `+inf` when no alignment exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtcLoss {
    pub value: f64,
}

impl CtcLoss {
    pub fn is_feasible(&self) -> bool {
        self.value.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtcGrad {
    pub loss: CtcLoss,
    /// d loss / d logits, same shape as the input; zero past `valid_len`
    /// and everywhere when the label is infeasible.
    pub grad: Matrix,
}

impl CtcGrad {
    pub fn is_feasible(&self) -> bool {
        self.loss.is_feasible()
    }
}

/// Minimum frame count that can emit `label`: one per token plus a blank
/// between each pair of equal neighbours.
pub fn min_frames(label: &[usize]) -> usize {
    label.len() + label.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_inputs(
    log_probs: &Matrix,
    valid_len: usize,
    label: &[usize],
    blank: usize,
) -> Result<(), CtcError> {
    if valid_len == 0 || valid_len > log_probs.rows() {
        return Err(CtcError::BadValidLength { valid_len, rows: log_probs.rows() });
    }
    if let Some((position, &token)) = label.iter().enumerate().find(|(_, &t)| t >= blank) {
        return Err(CtcError::BadToken { token, position, blank });
    }
    Ok(())
}

fn extend_label(label: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * label.len() + 1);
    ext.push(blank);
    for &t in label {
        ext.push(t);
        ext.push(blank);
    }
    ext
}

/// Log-space forward variables, `valid_len x ext.len()`.
fn forward(log_probs: &Matrix, valid_len: usize, ext: &[usize], blank: usize) -> Vec<f64> {
    let s_len = ext.len();
    let mut alpha = vec![f64::NEG_INFINITY; valid_len * s_len];
    alpha[0] = log_probs.get(0, ext[0]);
    if s_len > 1 {
        alpha[1] = log_probs.get(0, ext[1]);
    }
    for t in 1..valid_len {
        let (prev, cur) = alpha.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        let cur = &mut cur[..s_len];
        let row = log_probs.row(t);
        for s in 0..s_len {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = if acc == f64::NEG_INFINITY { acc } else { acc + row[ext[s]] };
        }
    }
    alpha
}

/// Log-space backward variables excluding the emission at the current frame.
fn backward(log_probs: &Matrix, valid_len: usize, ext: &[usize], blank: usize) -> Vec<f64> {
    let s_len = ext.len();
    let mut beta = vec![f64::NEG_INFINITY; valid_len * s_len];
    let last = valid_len - 1;
    beta[last * s_len + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[last * s_len + s_len - 2] = 0.0;
    }
    for t in (0..last).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_len);
        let cur = &mut cur[t * s_len..];
        let next = &next[..s_len];
        let row = log_probs.row(t + 1);
        for s in 0..s_len {
            let mut acc = next[s] + row[ext[s]];
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1] + row[ext[s + 1]]);
            }
            if s + 2 < s_len && ext[s + 2] != blank && ext[s + 2] != ext[s] {
                acc = log_add(acc, next[s + 2] + row[ext[s + 2]]);
            }
            cur[s] = acc;
        }
    }
    beta
}

fn log_likelihood(alpha: &[f64], valid_len: usize, s_len: usize) -> f64 {
    let last = &alpha[(valid_len - 1) * s_len..valid_len * s_len];
    if s_len > 1 {
        log_add(last[s_len - 1], last[s_len - 2])
    } else {
        last[0]
    }
}

/// `-log P(label | log_probs)` summed over all collapsing alignments of the
/// first `valid_len` frames.
pub fn ctc_loss(
    log_probs: &Matrix,
    valid_len: usize,
    label: &[usize],
    blank: usize,
) -> Result<CtcLoss, CtcError> {
    check_inputs(log_probs, valid_len, label, blank)?;
    if valid_len < min_frames(label) {
        return Ok(CtcLoss { value: f64::INFINITY });
    }
    let ext = extend_label(label, blank);
    let alpha = forward(log_probs, valid_len, &ext, blank);
    Ok(CtcLoss { value: -log_likelihood(&alpha, valid_len, ext.len()) })
}

/// Per-frame posterior over output classes. `None` for infeasible labels.
pub fn ctc_posteriors(
    log_probs: &Matrix,
    valid_len: usize,
    label: &[usize],
    blank: usize,
) -> Result<Option<(f64, Matrix)>, CtcError> {
    check_inputs(log_probs, valid_len, label, blank)?;
    if valid_len < min_frames(label) {
        return Ok(None);
    }
    let ext = extend_label(label, blank);
    let s_len = ext.len();
    let alpha = forward(log_probs, valid_len, &ext, blank);
    let log_p = log_likelihood(&alpha, valid_len, s_len);
    if !log_p.is_finite() {
        return Ok(None);
    }
    let beta = backward(log_probs, valid_len, &ext, blank);
    let classes = log_probs.cols();
    let mut gamma = Matrix::zeros(log_probs.rows(), classes);
    let mut acc = vec![f64::NEG_INFINITY; classes];
    for t in 0..valid_len {
        acc.fill(f64::NEG_INFINITY);
        for (s, &k) in ext.iter().enumerate() {
            let v = alpha[t * s_len + s] + beta[t * s_len + s];
            acc[k] = log_add(acc[k], v);
        }
        for (g, a) in gamma.row_mut(t).iter_mut().zip(&acc) {
            *g = (a - log_p).exp();
        }
    }
    Ok(Some((-log_p, gamma)))
}

/// Loss and gradient with respect to the logits that produced `log_probs`:
/// `softmax - posterior` on valid frames, zero elsewhere.
pub fn ctc_grad(
    log_probs: &Matrix,
    valid_len: usize,
    label: &[usize],
    blank: usize,
) -> Result<CtcGrad, CtcError> {
    let mut grad = Matrix::zeros(log_probs.rows(), log_probs.cols());
    match ctc_posteriors(log_probs, valid_len, label, blank)? {
        None => Ok(CtcGrad { loss: CtcLoss { value: f64::INFINITY }, grad }),
        Some((loss, gamma)) => {
            for t in 0..valid_len {
                let lp = log_probs.row(t);
                let g = gamma.row(t);
                for ((out, l), p) in grad.row_mut(t).iter_mut().zip(lp).zip(g) {
                    *out = l.exp() - p;
                }
            }
            Ok(CtcGrad { loss: CtcLoss { value: loss }, grad })
        }
    }
}

/// Frame-wise argmax over the first `valid_len` rows; ties go to the lowest class.
pub fn best_path(scores: &Matrix, valid_len: usize) -> Vec<usize> {
    (0..valid_len.min(scores.rows()))
        .map(|t| {
            let row = scores.row(t);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Collapses repeats, then drops blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
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

pub fn greedy_decode(scores: &Matrix, valid_len: usize, alphabet: &Alphabet) -> String {
    collapse(&best_path(scores, valid_len), alphabet.blank_id())
        .into_iter()
        .filter_map(|k| alphabet.symbol(k))
        .collect()
}

/// Numerically stable `logsumexp` of a row; exposed for tests and callers
/// that need the partition function.
pub fn row_log_sum_exp(row: &[f64]) -> f64 {
    log_sum_exp(row)
}
