//! Synchronous round-based simulation: every agent trains locally, then
//! every agent aggregates from a frozen snapshot of its peers' models.
//! The centralized baseline is the same loop with one agent holding the
//! pooled data and no communication.

mod aggregate;
mod checkpoint;
mod record;

pub use aggregate::{aggregate, p2p_bn_aggregate, pull_gossip_aggregate};
pub use checkpoint::{AgentCheckpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use record::{parse_csv, to_csv, MetricsRecord, AVERAGE_AGENT, CSV_HEADER};

use crate::ctc;
use crate::data::{self, AgentDataset, Sample};
use crate::metrics::{char_edits, word_edits};
use crate::nn::{self, AcousticModel, AdamState, ModelConfig, NnError, OptimConfig, ParamVector};
use crate::par::{map_nested, Executor, Workers};
use crate::topology::{Topology, TopologyError, TopologySpec};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum P2pError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("parameter length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no agent with id {0}")]
    UnknownAgent(usize),
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("agent {agent}: {source}")]
    Agent { agent: usize, source: NnError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Central,
    PullGossip,
    P2pBn,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Central => "central",
            Self::PullGossip => "pull_gossip",
            Self::P2pBn => "p2p_bn",
        }
    }

    fn code(&self) -> u8 {
        match self {
            Self::Central => 0,
            Self::PullGossip => 1,
            Self::P2pBn => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        [Self::Central, Self::PullGossip, Self::P2pBn].into_iter().find(|m| m.code() == code)
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "central" => Ok(Self::Central),
            "pull_gossip" => Ok(Self::PullGossip),
            "p2p_bn" => Ok(Self::P2pBn),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub rounds: usize,
    /// Full passes over local data per round.
    pub local_epochs: usize,
    pub batch_size: usize,
    pub topology: TopologySpec,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub eval_every: usize,
    pub seed: u64,
    /// Write measured seconds into metrics; off keeps the CSV reproducible.
    pub record_wallclock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::PullGossip,
            rounds: 40,
            local_epochs: 1,
            batch_size: 8,
            topology: TopologySpec::default(),
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            eval_every: 1,
            seed: 0,
            record_wallclock: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), P2pError> {
        if self.rounds == 0 {
            return Err(P2pError::Config("rounds must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(P2pError::Config("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(P2pError::Config("eval_every must be at least 1".into()));
        }
        self.model.validate()?;
        Ok(())
    }

    pub fn is_eval_round(&self, round: usize) -> bool {
        round.is_multiple_of(self.eval_every) || round == self.rounds
    }
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    pub params: ParamVector,
    pub adam: AdamState,
    pub dataset: AgentDataset,
    pub rng: ChaCha8Rng,
    pub history: Vec<MetricsRecord>,
}

/// Agent `id`'s private stream: one ChaCha stream per agent under the run seed.
pub fn agent_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64 + 1);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainStats {
    /// Mean over this step's optimizer steps; `None` if nothing trained.
    pub loss: Option<f64>,
    pub skipped: usize,
    pub steps: usize,
}

/// `local_epochs` seeded-shuffled passes over the agent's training split.
pub fn local_train_step(
    model: &AcousticModel,
    agent: &mut AgentState,
    local_epochs: usize,
    batch_size: usize,
    optim: &OptimConfig,
) -> Result<TrainStats, NnError> {
    let n = agent.dataset.train.len();
    if n == 0 {
        log::info!("agent {} has no training data; skipping local training", agent.id);
        return Ok(TrainStats::default());
    }
    let mut stats = TrainStats::default();
    let mut loss_sum = 0.0;
    let mut loss_batches = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..local_epochs {
        order.sort_unstable();
        order.shuffle(&mut agent.rng);
        for chunk in order.chunks(batch_size.max(1)) {
            let batch: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let s = &agent.dataset.train[i];
                    (&s.features, &s.transcript)
                })
                .collect();
            let out = nn::train_batch(
                model,
                &mut agent.params.values,
                &mut agent.adam,
                optim,
                &batch,
                &mut agent.rng,
            )?;
            stats.skipped += out.skipped;
            if out.stepped {
                stats.steps += 1;
            }
            if let Some(l) = out.loss {
                loss_sum += l;
                loss_batches += 1;
            }
        }
    }
    stats.loss = (loss_batches > 0).then(|| loss_sum / loss_batches as f64);
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalSummary {
    /// Mean CTC loss over feasible samples (`+inf` if none were feasible).
    pub loss: Option<f64>,
    pub wer: Option<f64>,
    pub cer: Option<f64>,
}

/// Eval-mode loss and greedy-decoding error rates over `samples`. Error
/// rates are corpus level: total edits over total reference length.
pub fn evaluate_samples(
    model: &AcousticModel,
    params: &[f64],
    samples: &[Sample],
    alphabet: &ctc::Alphabet,
) -> Result<EvalSummary, NnError> {
    if samples.is_empty() {
        return Ok(EvalSummary::default());
    }
    let per_sample = map_nested(samples, |s| -> Result<_, NnError> {
        let (logits, _) = model.forward(params, &s.features, None)?;
        let log_probs = ctc::log_softmax(&logits.values)?;
        let loss = ctc::ctc_loss(&log_probs, logits.valid_len, s.transcript.label(), alphabet.blank_id())?;
        let hyp = ctc::greedy_decode(&log_probs, logits.valid_len, alphabet);
        let (w, wn) = word_edits(&s.transcript.text, &hyp);
        let (c, cn) = char_edits(&s.transcript.text, &hyp);
        Ok((loss.value, w.total(), wn, c.total(), cn))
    });
    let (mut loss_sum, mut feasible) = (0.0, 0usize);
    let (mut we, mut wn, mut ce, mut cn) = (0usize, 0usize, 0usize, 0usize);
    for r in per_sample {
        let (loss, a, b, c, d) = r?;
        if loss.is_finite() {
            loss_sum += loss;
            feasible += 1;
        }
        we += a;
        wn += b;
        ce += c;
        cn += d;
    }
    Ok(EvalSummary {
        loss: Some(if feasible > 0 { loss_sum / feasible as f64 } else { f64::INFINITY }),
        wer: (wn > 0).then(|| we as f64 / wn as f64),
        cer: (cn > 0).then(|| ce as f64 / cn as f64),
    })
}

/// The simulation state: agents, topology and round counter.
pub struct Simulation {
    config: RunConfig,
    model: AcousticModel,
    alphabet: ctc::Alphabet,
    topology: Option<Topology>,
    agents: Vec<AgentState>,
    round: usize,
    executor: Executor,
}

impl std::fmt::Debug for Simulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulation")
            .field("method", &self.config.method)
            .field("agents", &self.agents.len())
            .field("round", &self.round)
            .finish()
    }
}

impl Simulation {
    /// Fresh run. For [`Method::Central`] the agents' splits are pooled
    /// into a single agent; otherwise agent `i` owns `datasets[i]`. All
    /// agents start from the same initial parameters.
    pub fn new(
        config: RunConfig,
        alphabet: ctc::Alphabet,
        datasets: Vec<AgentDataset>,
        workers: Workers,
    ) -> Result<Self, P2pError> {
        config.validate()?;
        if alphabet.len() != config.model.alphabet_size {
            return Err(P2pError::Config(format!(
                "alphabet has {} symbols but the model expects {}",
                alphabet.len(),
                config.model.alphabet_size
            )));
        }
        let datasets = match config.method {
            Method::Central => vec![data::pool(&datasets)],
            _ => datasets,
        };
        if datasets.is_empty() {
            return Err(P2pError::Config("no agents".into()));
        }
        let topology = match config.method {
            Method::Central => None,
            _ => Some(config.topology.build(datasets.len(), config.seed)?),
        };
        let model = AcousticModel::new(config.model.clone())?;
        let init = model.init_params(&mut ChaCha8Rng::seed_from_u64(config.model.seed));
        let agents = datasets
            .into_iter()
            .enumerate()
            .map(|(id, mut dataset)| {
                dataset.agent_id = id;
                AgentState {
                    id,
                    params: init.clone(),
                    adam: AdamState::new(init.len(), &config.optim),
                    dataset,
                    rng: agent_rng(config.seed, id),
                    history: Vec::new(),
                }
            })
            .collect();
        Ok(Self { config, model, alphabet, topology, agents, round: 0, executor: Executor::new(workers) })
    }

    /// Restores agent parameters, optimizer and RNG state from a checkpoint
    /// taken from a run with the same config and data.
    pub fn resume(
        config: RunConfig,
        alphabet: ctc::Alphabet,
        datasets: Vec<AgentDataset>,
        checkpoint: &Checkpoint,
        workers: Workers,
    ) -> Result<Self, P2pError> {
        let mut sim = Self::new(config, alphabet, datasets, workers)?;
        checkpoint.check_compatible(sim.config.method, &sim.config.model, sim.agents.len(), sim.model.param_count())?;
        for (agent, saved) in sim.agents.iter_mut().zip(&checkpoint.agents) {
            agent.params.values.clone_from(&saved.params);
            agent.adam = saved.adam.clone();
            agent.rng = saved.rng();
        }
        sim.round = checkpoint.round;
        Ok(sim)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &AcousticModel {
        &self.model
    }

    pub fn alphabet(&self) -> &ctc::Alphabet {
        &self.alphabet
    }

    pub fn topology(&self) -> Option<&Topology> {
        self.topology.as_ref()
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [AgentState] {
        &mut self.agents
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn is_finished(&self) -> bool {
        self.round >= self.config.rounds
    }

    /// Phase 1: every agent trains on its own pre-round state.
    pub fn train_phase(&mut self) -> Result<Vec<TrainStats>, P2pError> {
        let model = &self.model;
        let cfg = &self.config;
        self.executor
            .map_mut(&mut self.agents, |a| {
                local_train_step(model, a, cfg.local_epochs, cfg.batch_size, &cfg.optim)
                    .map_err(|source| P2pError::Agent { agent: a.id, source })
            })
            .into_iter()
            .collect()
    }

    /// Phase 2: every agent aggregates from the same frozen snapshot.
    pub fn communicate_phase(&mut self) -> Result<(), P2pError> {
        let Some(topology) = &self.topology else {
            return Ok(());
        };
        let snapshot: Vec<Vec<f64>> = self.agents.iter().map(|a| a.params.values.clone()).collect();
        let ids: Vec<usize> = (0..self.agents.len()).collect();
        let method = self.config.method;
        let updated = self.executor.map(&ids, |&i| aggregate(method, topology, &snapshot, i));
        for (agent, new) in self.agents.iter_mut().zip(updated) {
            agent.params.values = new?;
        }
        Ok(())
    }

    /// One full round. Returns each agent's training stats.
    pub fn run_round(&mut self) -> Result<Vec<TrainStats>, P2pError> {
        let stats = self.train_phase()?;
        self.communicate_phase()?;
        self.round += 1;
        Ok(stats)
    }

    pub fn evaluate_agent(&self, agent: &AgentState) -> Result<EvalSummary, NnError> {
        evaluate_samples(&self.model, &agent.params.values, &agent.dataset.validation, &self.alphabet)
    }

    /// Per-agent records followed by the across-agent average row.
    pub fn evaluate_all(&self, stats: Option<&[TrainStats]>, wallclock: f64) -> Result<Vec<MetricsRecord>, P2pError> {
        let model = &self.model;
        let alphabet = &self.alphabet;
        let evals = self.executor.map(&self.agents, |a| {
            evaluate_samples(model, &a.params.values, &a.dataset.validation, alphabet)
                .map_err(|source| P2pError::Agent { agent: a.id, source })
        });
        let mut records = Vec::with_capacity(self.agents.len() + 1);
        for (i, e) in evals.into_iter().enumerate() {
            let e = e?;
            let st = stats.map(|s| s[i]).unwrap_or_default();
            records.push(MetricsRecord {
                round: self.round,
                agent: i as i64,
                train_loss: st.loss,
                val_loss: e.loss,
                val_wer: e.wer,
                val_cer: e.cer,
                skipped: st.skipped,
                wallclock,
            });
        }
        let avg = MetricsRecord::average(self.round, &records, wallclock);
        records.push(avg);
        Ok(records)
    }

    /// Runs to `config.rounds`, handing each evaluated round's records to
    /// `sink`. A fresh simulation first reports round 0 (initial models);
    /// `on_checkpoint` is called after every evaluated round.
    pub fn run<S, C>(&mut self, mut sink: S, mut on_checkpoint: C) -> Result<(), P2pError>
    where
        S: FnMut(&[MetricsRecord]),
        C: FnMut(&Simulation) -> Result<(), P2pError>,
    {
        let record_wallclock = self.config.record_wallclock;
        let clock = |t: Instant| if record_wallclock { t.elapsed().as_secs_f64() } else { 0.0 };
        if self.round == 0 {
            let start = Instant::now();
            let records = self.evaluate_all(None, 0.0)?;
            let wc = clock(start);
            let records = with_wallclock(records, wc);
            self.push_history(&records);
            sink(&records);
        }
        while !self.is_finished() {
            let start = Instant::now();
            let stats = self.run_round()?;
            log::debug!("round {} finished", self.round);
            if self.config.is_eval_round(self.round) {
                let records = self.evaluate_all(Some(&stats), 0.0)?;
                let records = with_wallclock(records, clock(start));
                if let Some(avg) = records.last() {
                    let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
                    log::info!(
                        "round {}: avg train loss {}, val loss {}, wer {}",
                        self.round,
                        show(avg.train_loss),
                        show(avg.val_loss),
                        show(avg.val_wer)
                    );
                }
                self.push_history(&records);
                sink(&records);
                on_checkpoint(self)?;
            }
        }
        Ok(())
    }

    fn push_history(&mut self, records: &[MetricsRecord]) {
        for (agent, r) in self.agents.iter_mut().zip(records) {
            agent.history.push(r.clone());
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self.config.method, &self.config.model, self.round, &self.agents)
    }
}

fn with_wallclock(mut records: Vec<MetricsRecord>, wallclock: f64) -> Vec<MetricsRecord> {
    records.iter_mut().for_each(|r| r.wallclock = wallclock);
    records
}

/// Convenience driver: runs a simulation to completion and returns every record.
pub fn run_simulation(
    config: RunConfig,
    alphabet: ctc::Alphabet,
    datasets: Vec<AgentDataset>,
    workers: Workers,
) -> Result<Vec<MetricsRecord>, P2pError> {
    let mut sim = Simulation::new(config, alphabet, datasets, workers)?;
    let mut all = Vec::new();
    sim.run(|r| all.extend_from_slice(r), |_| Ok(()))?;
    Ok(all)
}

/// Centralized baseline over an already pooled dataset.
pub fn run_central(
    pooled: AgentDataset,
    mut config: RunConfig,
    alphabet: ctc::Alphabet,
    workers: Workers,
) -> Result<Vec<MetricsRecord>, P2pError> {
    if pooled.train.is_empty() {
        return Err(P2pError::Config("pooled training set is empty".into()));
    }
    config.method = Method::Central;
    run_simulation(config, alphabet, vec![pooled], workers)
}
