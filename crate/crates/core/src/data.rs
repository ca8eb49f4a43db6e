//! Feature/transcript containers, padding, the synthetic corpus and the two
//! agent-partitioning schemes, plus the on-disk feature and manifest formats.

use crate::ctc::Alphabet;
use crate::matrix::Matrix;
use crate::metrics::normalize_text;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const FEATURE_MAGIC: &[u8; 4] = b"GSF1";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const PARTITION_FILE: &str = "partition.json";

/// Global salt for the per-character feature embeddings. Fixed so that the
/// same character always sounds the same regardless of corpus seed.
const EMBEDDING_SALT: u64 = 0x6f55_1d2e_a7c3_0b19;
const LEXICON_SEED: u64 = 0x1e1c_0e55;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    FeatureDim { expected: usize, got: usize },
    #[error("empty feature matrix")]
    EmptyFeatures,
    #[error("character {ch:?} at position {position} is not in the alphabet")]
    OutOfAlphabet { ch: char, position: usize },
    #[error("{clips} clips cannot be shared among {agents} agents")]
    TooFewClips { clips: usize, agents: usize },
    #[error("need at least one agent")]
    NoAgents,
    #[error("user size list mismatch: {0}")]
    UserSizes(String),
    #[error("bad magic in feature file")]
    BadMagic,
    #[error("truncated feature payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("feature file dimensions {rows}x{cols} overflow")]
    Overflow { rows: u32, cols: u32 },
    #[error("trailing bytes after feature payload")]
    TrailingBytes,
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("invalid data config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_owned(), source }
}

/// A `T x F` feature matrix whose rows at and beyond `valid_len` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    matrix: Matrix,
    valid_len: usize,
}

impl FeatureSequence {
    /// Wraps an unpadded matrix; every row counts as valid.
    pub fn from_raw(matrix: Matrix) -> Result<Self, DataError> {
        if matrix.rows() == 0 {
            return Err(DataError::EmptyFeatures);
        }
        let valid_len = matrix.rows();
        Ok(Self { matrix, valid_len })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn valid_len(&self) -> usize {
        self.valid_len
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.matrix.row(t)
    }

    /// The valid prefix as a fresh unpadded matrix.
    pub fn raw(&self) -> Matrix {
        let cols = self.matrix.cols();
        Matrix::from_vec(self.valid_len, cols, self.matrix.as_slice()[..self.valid_len * cols].to_vec())
    }
}

/// Zero-pads or truncates `raw` to exactly `target_len` rows.
pub fn pad_features(raw: &Matrix, target_len: usize, feature_dim: usize) -> Result<FeatureSequence, DataError> {
    if raw.cols() != feature_dim {
        return Err(DataError::FeatureDim { expected: feature_dim, got: raw.cols() });
    }
    if raw.rows() == 0 || target_len == 0 {
        return Err(DataError::EmptyFeatures);
    }
    let valid_len = raw.rows().min(target_len);
    let mut data = raw.as_slice()[..valid_len * feature_dim].to_vec();
    data.resize(target_len * feature_dim, 0.0);
    Ok(FeatureSequence { matrix: Matrix::from_vec(target_len, feature_dim, data), valid_len })
}

/// Token ids padded to a fixed length with the alphabet's pad id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub ids: Vec<usize>,
    pub valid_len: usize,
    pub text: String,
}

impl Transcript {
    pub fn label(&self) -> &[usize] {
        &self.ids[..self.valid_len]
    }
}

/// Normalizes `text`, maps it through `alphabet` and pads/trims to `max_len`.
pub fn encode_transcript(text: &str, alphabet: &Alphabet, max_len: usize) -> Result<Transcript, DataError> {
    let normalized = normalize_text(text);
    let mut ids = Vec::with_capacity(max_len);
    for (position, ch) in normalized.chars().enumerate() {
        let id = alphabet.id_of(ch).ok_or(DataError::OutOfAlphabet { ch, position })?;
        if ids.len() < max_len {
            ids.push(id);
        }
    }
    let valid_len = ids.len();
    let kept: String = normalized.chars().take(valid_len).collect();
    ids.resize(max_len, alphabet.pad_id());
    Ok(Transcript { ids, valid_len, text: kept })
}

/// One padded training/evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureSequence,
    pub transcript: Transcript,
}

/// An unpadded utterance: raw features and its text.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub features: Matrix,
    pub text: String,
}

impl Clip {
    pub fn to_sample(&self, alphabet: &Alphabet, pad_frames: usize, pad_chars: usize) -> Result<Sample, DataError> {
        Ok(Sample {
            features: pad_features(&self.features, pad_frames, self.features.cols())?,
            transcript: encode_transcript(&self.text, alphabet, pad_chars)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentDataset {
    pub agent_id: usize,
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
}

impl AgentDataset {
    /// Splits `samples` 70/30, training first, keeping at least one
    /// training example whenever there is any data.
    pub fn split(agent_id: usize, mut samples: Vec<Sample>) -> Self {
        let n_train = train_count(samples.len());
        let validation = samples.split_off(n_train);
        if validation.is_empty() && !samples.is_empty() {
            log::warn!("agent {agent_id} has no validation data ({} clips)", samples.len());
        }
        Self { agent_id, train: samples, validation }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Training share of `n` clips: `floor(0.7 n)`, but never zero when `n > 0`.
pub fn train_count(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        (n * 7 / 10).max(1)
    }
}

/// Pools every agent's splits, in agent order.
pub fn pool(agents: &[AgentDataset]) -> AgentDataset {
    AgentDataset {
        agent_id: 0,
        train: agents.iter().flat_map(|a| a.train.iter().cloned()).collect(),
        validation: agents.iter().flat_map(|a| a.validation.iter().cloned()).collect(),
    }
}

/// Clip indices each agent receives: seeded shuffle, then round-robin.
pub fn uniform_assignment(n_clips: usize, n_agents: usize, seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    if n_agents == 0 {
        return Err(DataError::NoAgents);
    }
    if n_clips < n_agents {
        return Err(DataError::TooFewClips { clips: n_clips, agents: n_agents });
    }
    let mut order: Vec<usize> = (0..n_clips).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::with_capacity(n_clips / n_agents + 1); n_agents];
    for (k, idx) in order.into_iter().enumerate() {
        out[k % n_agents].push(idx);
    }
    Ok(out)
}

pub fn partition_uniform(samples: &[Sample], n_agents: usize, seed: u64) -> Result<Vec<AgentDataset>, DataError> {
    Ok(uniform_assignment(samples.len(), n_agents, seed)?
        .into_iter()
        .enumerate()
        .map(|(agent, idx)| AgentDataset::split(agent, idx.into_iter().map(|i| samples[i].clone()).collect()))
        .collect())
}

/// Agent `i` gets exactly user `i`'s clips.
pub fn partition_per_user(user_sizes: &[usize], clips_by_user: Vec<Vec<Sample>>) -> Result<Vec<AgentDataset>, DataError> {
    if user_sizes.len() != clips_by_user.len() {
        return Err(DataError::UserSizes(format!(
            "{} sizes for {} users",
            user_sizes.len(),
            clips_by_user.len()
        )));
    }
    if user_sizes.is_empty() {
        return Err(DataError::NoAgents);
    }
    for (i, (&size, clips)) in user_sizes.iter().zip(&clips_by_user).enumerate() {
        if size == 0 || size != clips.len() {
            return Err(DataError::UserSizes(format!("user {i}: size {size}, {} clips", clips.len())));
        }
    }
    Ok(clips_by_user.into_iter().enumerate().map(|(i, c)| AgentDataset::split(i, c)).collect())
}

/// Splits a flat, user-ordered list into consecutive groups of `sizes`.
pub fn group_by_sizes<T>(items: Vec<T>, sizes: &[usize]) -> Result<Vec<Vec<T>>, DataError> {
    let total: usize = sizes.iter().sum();
    if total != items.len() {
        return Err(DataError::UserSizes(format!("sizes sum to {total}, have {} clips", items.len())));
    }
    let mut it = items.into_iter();
    Ok(sizes.iter().map(|&n| it.by_ref().take(n).collect()).collect())
}

/// Heterogeneous per-user clip counts summing to `total`, each at least 1.
/// Weights are uniform in `[0.25, 1.75]`, apportioned by largest remainder.
pub fn user_size_profile(n_users: usize, total: usize, seed: u64) -> Result<Vec<usize>, DataError> {
    if n_users == 0 {
        return Err(DataError::NoAgents);
    }
    if total < n_users {
        return Err(DataError::TooFewClips { clips: total, agents: n_users });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..n_users).map(|_| rng.random_range(0.25..1.75)).collect();
    let wsum: f64 = weights.iter().sum();
    let spare = (total - n_users) as f64;
    let exact: Vec<f64> = weights.iter().map(|w| w / wsum * spare).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| 1 + e.floor() as usize).collect();
    let mut left = total - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..n_users).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    Uniform,
    PerUser,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub agents: usize,
    pub seed: u64,
    /// Per-user clip counts, consecutive in manifest order (`per_user` only).
    pub user_sizes: Vec<usize>,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self { scheme: PartitionScheme::Uniform, agents: 20, seed: 0, user_sizes: Vec::new() }
    }
}

impl PartitionSpec {
    pub fn apply(&self, samples: Vec<Sample>) -> Result<Vec<AgentDataset>, DataError> {
        match self.scheme {
            PartitionScheme::Uniform => partition_uniform(&samples, self.agents, self.seed),
            PartitionScheme::PerUser => {
                if self.user_sizes.len() != self.agents {
                    return Err(DataError::UserSizes(format!(
                        "{} user sizes for {} agents",
                        self.user_sizes.len(),
                        self.agents
                    )));
                }
                partition_per_user(&self.user_sizes, group_by_sizes(samples, &self.user_sizes)?)
            }
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let text = serde_json::to_string_pretty(self).expect("partition spec serializes");
        std::fs::write(path, text + "\n").map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| DataError::Json { path: path.to_owned(), source })
    }
}

/// Distinct words over the non-space symbols, no letter repeated back to back.
pub fn synthetic_lexicon(alphabet: &Alphabet, size: usize, len_range: (usize, usize)) -> Result<Vec<String>, DataError> {
    let letters: Vec<char> = alphabet.symbols().iter().copied().filter(|c| *c != ' ').collect();
    let (lo, hi) = len_range;
    if letters.is_empty() || lo == 0 || hi < lo {
        return Err(DataError::Config(format!("cannot build words of length {lo}..={hi}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(LEXICON_SEED);
    let mut words: Vec<String> = Vec::with_capacity(size);
    let mut attempts = 0;
    while words.len() < size {
        attempts += 1;
        if attempts > 1000 * size.max(1) {
            return Err(DataError::Config(format!("cannot draw {size} distinct words")));
        }
        let len = rng.random_range(lo..=hi);
        let mut word = String::with_capacity(len);
        let mut prev = None;
        for _ in 0..len {
            let choices: Vec<char> = letters.iter().copied().filter(|&c| Some(c) != prev).collect();
            if choices.is_empty() {
                break;
            }
            let c = choices[rng.random_range(0..choices.len())];
            word.push(c);
            prev = Some(c);
        }
        if word.chars().count() == len && !words.contains(&word) {
            words.push(word);
        }
    }
    Ok(words)
}

/// Deterministic embedding row for a character.
pub fn char_embedding(ch: char, feature_dim: usize) -> Vec<f64> {
    let key = (ch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ EMBEDDING_SALT;
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    (0..feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub lexicon: Vec<String>,
    pub words_range: (usize, usize),
    pub frames_per_char: usize,
    pub noise_sigma: f64,
    pub feature_dim: usize,
    pub n_clips: usize,
    pub seed: u64,
}

/// Synthetic utterances: each character becomes `frames_per_char` copies of
/// its embedding plus Gaussian noise. Values are rounded through `f32` so
/// that the feature-file round trip is lossless.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<Clip>, DataError> {
    let (lo, hi) = spec.words_range;
    if spec.n_clips == 0 || spec.lexicon.is_empty() || lo == 0 || hi < lo || spec.frames_per_char == 0 {
        return Err(DataError::Config("degenerate synthetic corpus spec".into()));
    }
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| DataError::Config(format!("noise_sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cache: Vec<(char, Vec<f64>)> = Vec::new();
    let mut clips = Vec::with_capacity(spec.n_clips);
    for _ in 0..spec.n_clips {
        let n_words = rng.random_range(lo..=hi);
        let words: Vec<&str> =
            (0..n_words).map(|_| spec.lexicon[rng.random_range(0..spec.lexicon.len())].as_str()).collect();
        let text = words.join(" ");
        let rows = text.chars().count() * spec.frames_per_char;
        let mut data = Vec::with_capacity(rows * spec.feature_dim);
        for ch in text.chars() {
            let emb = match cache.iter().find(|(c, _)| *c == ch) {
                Some((_, e)) => e.clone(),
                None => {
                    let e = char_embedding(ch, spec.feature_dim);
                    cache.push((ch, e.clone()));
                    e
                }
            };
            for _ in 0..spec.frames_per_char {
                for &v in &emb {
                    let x = v + noise.sample(&mut rng);
                    data.push(x as f32 as f64);
                }
            }
        }
        clips.push(Clip { features: Matrix::from_vec(rows, spec.feature_dim, data), text });
    }
    Ok(clips)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Output symbols in id order; a space separates words.
    pub alphabet: String,
    pub lexicon_size: usize,
    pub word_len: (usize, usize),
    pub words_per_clip: (usize, usize),
    pub frames_per_char: usize,
    pub noise_sigma: f64,
    pub feature_dim: usize,
    pub n_clips: usize,
    pub pad_frames: usize,
    pub pad_chars: usize,
    pub partition: PartitionSpec,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            alphabet: "ABCD ".into(),
            lexicon_size: 20,
            word_len: (2, 4),
            words_per_clip: (1, 3),
            frames_per_char: 3,
            noise_sigma: 0.1,
            feature_dim: 16,
            n_clips: 1100,
            pad_frames: 256,
            pad_chars: 64,
            partition: PartitionSpec::default(),
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn alphabet(&self) -> Result<Alphabet, DataError> {
        Alphabet::new(self.alphabet.chars()).map_err(|e| DataError::Config(e.to_string()))
    }

    pub fn synth_spec(&self) -> Result<SynthSpec, DataError> {
        let alphabet = self.alphabet()?;
        Ok(SynthSpec {
            lexicon: synthetic_lexicon(&alphabet, self.lexicon_size, self.word_len)?,
            words_range: self.words_per_clip,
            frames_per_char: self.frames_per_char,
            noise_sigma: self.noise_sigma,
            feature_dim: self.feature_dim,
            n_clips: self.n_clips,
            seed: self.seed,
        })
    }

    /// The partition spec with per-user sizes filled in when needed.
    pub fn resolved_partition(&self) -> Result<PartitionSpec, DataError> {
        let mut spec = self.partition.clone();
        if spec.scheme == PartitionScheme::PerUser && spec.user_sizes.is_empty() {
            spec.user_sizes = user_size_profile(spec.agents, self.n_clips, spec.seed)?;
        }
        Ok(spec)
    }

    pub fn generate(&self) -> Result<Vec<Clip>, DataError> {
        generate_synthetic(&self.synth_spec()?)
    }

    pub fn to_samples(&self, clips: &[Clip]) -> Result<Vec<Sample>, DataError> {
        let alphabet = self.alphabet()?;
        clips
            .iter()
            .map(|c| {
                if c.features.cols() != self.feature_dim {
                    return Err(DataError::FeatureDim { expected: self.feature_dim, got: c.features.cols() });
                }
                c.to_sample(&alphabet, self.pad_frames, self.pad_chars)
            })
            .collect()
    }

    /// Generates, pads and partitions the corpus in memory.
    pub fn build_agents(&self) -> Result<Vec<AgentDataset>, DataError> {
        let clips = self.generate()?;
        self.resolved_partition()?.apply(self.to_samples(&clips)?)
    }
}

/// Writes a raw `T x F` matrix as little-endian `f32`.
pub fn write_feature_file(path: &Path, features: &Matrix) -> Result<(), DataError> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(12 + features.as_slice().len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(features.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(features.cols() as u32).to_le_bytes());
    for &v in features.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn decode_features(bytes: &[u8]) -> Result<Matrix, DataError> {
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(DataError::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(DataError::Truncated { expected: 12, found: bytes.len() });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let payload = (rows as usize)
        .checked_mul(cols as usize)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(12))
        .filter(|&n| n <= isize::MAX as usize)
        .ok_or(DataError::Overflow { rows, cols })?;
    if bytes.len() < payload {
        return Err(DataError::Truncated { expected: payload, found: bytes.len() });
    }
    if bytes.len() > payload {
        return Err(DataError::TrailingBytes);
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Matrix::from_vec(rows as usize, cols as usize, data))
}

pub fn read_feature_file(path: &Path) -> Result<Matrix, DataError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    decode_features(&bytes)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub text: String,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), DataError> {
    let mut out = String::from("# features\ttranscript\n");
    for e in entries {
        out.push_str(&e.path);
        out.push('\t');
        out.push_str(&e.text);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let (p, text) = line
            .split_once('\t')
            .ok_or_else(|| DataError::Manifest { line: i + 1, reason: "missing tab separator".into() })?;
        entries.push(ManifestEntry { path: p.to_owned(), text: text.to_owned() });
    }
    Ok(entries)
}

/// Writes feature files, the manifest and the partition spec under `dir`.
pub fn write_corpus(dir: &Path, clips: &[Clip], partition: &PartitionSpec) -> Result<(), DataError> {
    let feat_dir = dir.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(io_err(&feat_dir))?;
    let mut entries = Vec::with_capacity(clips.len());
    for (i, clip) in clips.iter().enumerate() {
        let rel = format!("features/clip_{i:06}.gsf");
        write_feature_file(&dir.join(&rel), &clip.features)?;
        entries.push(ManifestEntry { path: rel, text: clip.text.clone() });
    }
    write_manifest(&dir.join(MANIFEST_FILE), &entries)?;
    partition.write(&dir.join(PARTITION_FILE))
}

/// Loads clips listed in a manifest; feature paths are relative to it.
pub fn load_manifest_clips(manifest: &Path) -> Result<Vec<Clip>, DataError> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|e| Ok(Clip { features: read_feature_file(&base.join(&e.path))?, text: e.text }))
        .collect()
}
