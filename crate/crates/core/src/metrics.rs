//! Edit-distance scoring: word and character error rates.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScoreError {
    #[error("empty reference")]
    EmptyReference,
}

/// Counts of one optimal edit script.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EditOps {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl EditOps {
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

impl std::ops::AddAssign for EditOps {
    fn add_assign(&mut self, rhs: Self) {
        self.substitutions += rhs.substitutions;
        self.deletions += rhs.deletions;
        self.insertions += rhs.insertions;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalScore {
    pub wer: f64,
    pub cer: f64,
    /// Word-level operations.
    pub edit_ops: EditOps,
    /// Reference length in words.
    pub ref_len: usize,
}

/// Unit-cost Levenshtein distance plus one optimal decomposition.
///
/// When several scripts are optimal the backtrace prefers the diagonal
/// (match or substitution), then deletion, then insertion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> (usize, EditOps) {
    let n = reference.len();
    let m = hypothesis.len();
    let width = m + 1;
    let mut table = vec![0usize; (n + 1) * width];
    for i in 0..=n {
        table[i * width] = i;
    }
    for (j, cell) in table[..width].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let diag = table[(i - 1) * width + j - 1] + cost;
            let del = table[(i - 1) * width + j] + 1;
            let ins = table[i * width + j - 1] + 1;
            table[i * width + j] = diag.min(del).min(ins);
        }
    }

    let mut ops = EditOps::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = table[i * width + j];
        if i > 0 && j > 0 {
            let cost = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if table[(i - 1) * width + j - 1] + cost == here {
                ops.substitutions += cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && table[(i - 1) * width + j] + 1 == here {
            ops.deletions += 1;
            i -= 1;
        } else {
            ops.insertions += 1;
            j -= 1;
        }
    }
    (table[n * width + m], ops)
}

/// Uppercases, collapses whitespace runs to one space and trims.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.to_uppercase())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn words(normalized: &str) -> Vec<&str> {
    if normalized.is_empty() {
        Vec::new()
    } else {
        normalized.split(' ').collect()
    }
}

/// Word-level edit operations and reference word count after normalization.
pub fn word_edits(reference: &str, hypothesis: &str) -> (EditOps, usize) {
    let r = normalize_text(reference);
    let h = normalize_text(hypothesis);
    let rw = words(&r);
    let hw = words(&h);
    let (_, ops) = edit_distance(&rw, &hw);
    (ops, rw.len())
}

/// Character-level edit operations (spaces included) and reference length.
pub fn char_edits(reference: &str, hypothesis: &str) -> (EditOps, usize) {
    let r: Vec<char> = normalize_text(reference).chars().collect();
    let h: Vec<char> = normalize_text(hypothesis).chars().collect();
    let (_, ops) = edit_distance(&r, &h);
    (ops, r.len())
}

pub fn word_error_rate(reference: &str, hypothesis: &str) -> Result<f64, ScoreError> {
    let (ops, n) = word_edits(reference, hypothesis);
    if n == 0 {
        return Err(ScoreError::EmptyReference);
    }
    Ok(ops.total() as f64 / n as f64)
}

pub fn char_error_rate(reference: &str, hypothesis: &str) -> Result<f64, ScoreError> {
    let (ops, n) = char_edits(reference, hypothesis);
    if n == 0 {
        return Err(ScoreError::EmptyReference);
    }
    Ok(ops.total() as f64 / n as f64)
}

pub fn score(reference: &str, hypothesis: &str) -> Result<EvalScore, ScoreError> {
    let (edit_ops, ref_len) = word_edits(reference, hypothesis);
    if ref_len == 0 {
        return Err(ScoreError::EmptyReference);
    }
    Ok(EvalScore {
        wer: edit_ops.total() as f64 / ref_len as f64,
        cer: char_error_rate(reference, hypothesis)?,
        edit_ops,
        ref_len,
    })
}

/// Renders a rate as a percentage with at most two decimals, e.g. `0.15` as `15%`.
pub fn format_rate(rate: f64) -> String {
    let s = format!("{:.2}", rate * 100.0);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}%")
}
