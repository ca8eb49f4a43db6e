//! Simulator for peer-to-peer (gossip) training of CTC acoustic models.
//!
//! Modules, bottom-up:
//!
//! - [`metrics`]: edit distance, WER and CER.
//! - [`ctc`]: CTC loss, its logit gradient and greedy decoding.
//! - [`nn`]: the GRU acoustic model with hand-written backprop and Adam.
//! - [`data`]: padding, transcripts, the synthetic corpus, partitioning, file formats.
//! - [`topology`]: communication graphs and aggregation weights.
//! - [`p2p`]: the round loop, Pull-gossip and P2P-BN aggregation, the central
//!   baseline, metrics CSV and checkpoints.
//!
//! Per-agent and per-sample work runs on rayon when the `parallel` feature
//! is on (default). Every reduction happens in a fixed order, so results
//! do not depend on the worker count.

pub mod ctc;
pub mod data;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod p2p;
pub mod par;
pub mod topology;

pub use ctc::Alphabet;
pub use matrix::Matrix;
pub use nn::{AcousticModel, ModelConfig};
pub use p2p::{Method, MetricsRecord, RunConfig, Simulation};
pub use par::Workers;
