//! Binary checkpoint of every agent's parameters, Adam state and RNG position.
//!
//! Layout (little-endian):
//!
//! ```text
//! "GSCK" | u16 version | u8 method | u32 round | u32 agents | u32 params
//! | u32 len | model config JSON
//! | per agent: u32 len | record
//! | u64 FNV-1a of everything above
//! ```
//!
//! A record is `u32 id | [u8; 32] rng seed | u64 rng stream | u128 rng word
//! position | u64 adam step | f64 lr, beta1, beta2, eps | params | m | v`,
//! with the three vectors stored as `f64` so that resuming is exact.

use super::{AgentState, Method};
use crate::nn::{AdamState, ModelConfig};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GSCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint incompatible with config: {0}")]
    Incompatible(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentCheckpoint {
    pub id: usize,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub adam: AdamState,
    pub params: Vec<f64>,
}

impl AgentCheckpoint {
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_stream(self.rng_stream);
        rng.set_word_pos(self.rng_word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub method: Method,
    pub round: usize,
    pub model: ModelConfig,
    pub param_count: usize,
    pub agents: Vec<AgentCheckpoint>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn put_floats(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub(crate) fn capture(method: Method, model: &ModelConfig, round: usize, agents: &[AgentState]) -> Self {
        Self {
            method,
            round,
            model: model.clone(),
            param_count: agents.first().map_or(0, |a| a.params.len()),
            agents: agents
                .iter()
                .map(|a| AgentCheckpoint {
                    id: a.id,
                    rng_seed: a.rng.get_seed(),
                    rng_stream: a.rng.get_stream(),
                    rng_word_pos: a.rng.get_word_pos(),
                    adam: a.adam.clone(),
                    params: a.params.values.clone(),
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.method.code());
        out.extend_from_slice(&(self.round as u32).to_le_bytes());
        out.extend_from_slice(&(self.agents.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.param_count as u32).to_le_bytes());
        let cfg = serde_json::to_vec(&self.model).expect("model config serializes");
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        for a in &self.agents {
            let mut rec = Vec::with_capacity(108 + 24 * self.param_count);
            rec.extend_from_slice(&(a.id as u32).to_le_bytes());
            rec.extend_from_slice(&a.rng_seed);
            rec.extend_from_slice(&a.rng_stream.to_le_bytes());
            rec.extend_from_slice(&a.rng_word_pos.to_le_bytes());
            rec.extend_from_slice(&a.adam.t.to_le_bytes());
            put_floats(&mut rec, &[a.adam.lr, a.adam.beta1, a.adam.beta2, a.adam.eps]);
            put_floats(&mut rec, &a.params);
            put_floats(&mut rec, &a.adam.m);
            put_floats(&mut rec, &a.adam.v);
            out.extend_from_slice(&(rec.len() as u32).to_le_bytes());
            out.extend_from_slice(&rec);
        }
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    /// Parses a complete checkpoint; nothing is returned unless every
    /// record decodes and the checksum matches.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut r = Reader { buf: &bytes[4..] };
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        if bytes.len() < 8 + 6 {
            return Err(CheckpointError::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv1a(body) != u64::from_le_bytes(tail.try_into().unwrap()) {
            return Err(CheckpointError::Checksum);
        }
        let mut r = Reader { buf: &body[6..] };
        let method = Method::from_code(r.u8()?)
            .ok_or_else(|| CheckpointError::Malformed("unknown method code".into()))?;
        let round = r.u32()? as usize;
        let n_agents = r.u32()? as usize;
        let param_count = r.u32()? as usize;
        let cfg_len = r.u32()? as usize;
        let model: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)
            .map_err(|e| CheckpointError::Malformed(format!("model config: {e}")))?;
        let mut agents = Vec::with_capacity(n_agents.min(1 << 16));
        for _ in 0..n_agents {
            let len = r.u32()? as usize;
            let mut rec = Reader { buf: r.take(len)? };
            let id = rec.u32()? as usize;
            let rng_seed = rec.array::<32>()?;
            let rng_stream = rec.u64()?;
            let rng_word_pos = u128::from_le_bytes(rec.array()?);
            let t = rec.u64()?;
            let (lr, beta1, beta2, eps) = (rec.f64()?, rec.f64()?, rec.f64()?, rec.f64()?);
            let params = rec.floats(param_count)?;
            let m = rec.floats(param_count)?;
            let v = rec.floats(param_count)?;
            if !rec.buf.is_empty() {
                return Err(CheckpointError::Malformed(format!("agent {id}: trailing bytes")));
            }
            agents.push(AgentCheckpoint {
                id,
                rng_seed,
                rng_stream,
                rng_word_pos,
                adam: AdamState { m, v, t, lr, beta1, beta2, eps },
                params,
            });
        }
        if !r.buf.is_empty() {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        Ok(Self { method, round, model, param_count, agents })
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn check_compatible(
        &self,
        method: Method,
        model: &ModelConfig,
        n_agents: usize,
        param_count: usize,
    ) -> Result<(), CheckpointError> {
        let bad = |msg: String| Err(CheckpointError::Incompatible(msg));
        if self.method != method {
            return bad(format!("checkpoint method {}, config method {}", self.method.as_str(), method.as_str()));
        }
        self.check_model(model, param_count)?;
        if self.agents.len() != n_agents {
            return bad(format!("checkpoint has {} agents, config has {n_agents}", self.agents.len()));
        }
        Ok(())
    }

    /// Ignores the init seed and dropout, which do not affect shapes.
    pub fn check_model(&self, model: &ModelConfig, param_count: usize) -> Result<(), CheckpointError> {
        let shape = |m: &ModelConfig| (m.input_features, m.stack, m.hidden, m.ff_dim, m.alphabet_size);
        if shape(&self.model) != shape(model) || self.param_count != param_count {
            return Err(CheckpointError::Incompatible(format!(
                "checkpoint model {:?} ({} params), config model {:?} ({param_count} params)",
                shape(&self.model),
                self.param_count,
                shape(model)
            )));
        }
        Ok(())
    }
}
