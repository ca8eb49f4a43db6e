use gossipspeech::data::{AgentDataset, DataConfig, PartitionSpec};
use gossipspeech::nn::{AdamState, ModelConfig};
use gossipspeech::p2p::{
    self, aggregate, local_train_step, to_csv, Checkpoint, CheckpointError, Method, RunConfig, Simulation, AVERAGE_AGENT,
};
use gossipspeech::topology::{Topology, TopologySpec};
use gossipspeech::{Alphabet, Workers};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(n_clips: usize, agents: usize) -> (Alphabet, Vec<AgentDataset>) {
    let cfg = DataConfig {
        n_clips,
        feature_dim: 4,
        pad_frames: 48,
        pad_chars: 16,
        partition: PartitionSpec { agents, ..Default::default() },
        ..Default::default()
    };
    (cfg.alphabet().unwrap(), cfg.build_agents().unwrap())
}

fn run_config(method: Method, rounds: usize) -> RunConfig {
    RunConfig {
        method,
        rounds,
        model: ModelConfig { input_features: 4, hidden: 8, ff_dim: 8, ..Default::default() },
        ..Default::default()
    }
}

fn spread(sim: &Simulation) -> f64 {
    let agents = sim.agents();
    let dim = agents[0].params.values.len();
    (0..dim)
        .map(|k| {
            let vals = agents.iter().map(|a| a.params.values[k]);
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            hi - lo
        })
        .fold(0.0, f64::max)
}

fn randomize(sim: &mut Simulation, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for a in sim.agents_mut() {
        a.params.values.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
}

#[test]
fn local_step_counts_batches() {
    let (alphabet, agents) = data(23, 1);
    assert_eq!(agents[0].train.len(), 16);
    let cfg = run_config(Method::Central, 1);
    let sim = Simulation::new(cfg.clone(), alphabet, vec![agents[0].clone()], Workers::sequential()).unwrap();
    let mut agent = sim.agents()[0].clone();
    let stats = local_train_step(sim.model(), &mut agent, 1, 8, &cfg.optim).unwrap();
    assert_eq!((stats.steps, agent.adam.t), (2, 2));
    assert!(stats.loss.unwrap().is_finite());

    let mut idle = sim.agents()[0].clone();
    let stats = local_train_step(sim.model(), &mut idle, 0, 8, &cfg.optim).unwrap();
    assert_eq!(stats.steps, 0);
    assert_eq!(idle.params, sim.agents()[0].params);

    let mut again = sim.agents()[0].clone();
    local_train_step(sim.model(), &mut again, 1, 8, &cfg.optim).unwrap();
    assert_eq!(again.params, agent.params);
}

#[test]
fn identical_models_are_a_fixed_point() {
    let (alphabet, agents) = data(40, 8);
    for method in [Method::PullGossip, Method::P2pBn] {
        let cfg = RunConfig { local_epochs: 0, ..run_config(method, 5) };
        let mut sim = Simulation::new(cfg, alphabet.clone(), agents.clone(), Workers::sequential()).unwrap();
        let init = sim.agents()[0].params.clone();
        for _ in 0..5 {
            sim.run_round().unwrap();
        }
        assert!(sim.agents().iter().all(|a| a.params == init), "{method:?}");
    }
}

#[test]
fn pull_gossip_reaches_consensus() {
    let (alphabet, agents) = data(55, 55);
    let cfg = RunConfig { local_epochs: 0, topology: TopologySpec::Sparse { k: 3 }, ..run_config(Method::PullGossip, 50) };
    let mut sim = Simulation::new(cfg, alphabet, agents, Workers::sequential()).unwrap();
    randomize(&mut sim, 4);
    let initial = spread(&sim);
    let mut last = initial;
    for _ in 0..50 {
        sim.run_round().unwrap();
        let s = spread(&sim);
        assert!(s <= last + 1e-12, "spread grew from {last} to {s}");
        last = s;
    }
    assert!(last < 1e-3 * initial, "spread after 50 rounds: {last} (initial {initial})");
}

#[test]
fn aggregation_is_convex_and_conserves_the_mean_on_rings() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 9;
    let snapshot: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let topo = Topology::sparse(n, 3, 1).unwrap();
    for method in [Method::PullGossip, Method::P2pBn] {
        for i in 0..n {
            let out = aggregate(method, &topo, &snapshot, i).unwrap();
            for k in 0..6 {
                let lo = snapshot.iter().map(|x| x[k]).fold(f64::INFINITY, f64::min);
                let hi = snapshot.iter().map(|x| x[k]).fold(f64::NEG_INFINITY, f64::max);
                assert!(out[k] >= lo - 1e-12 && out[k] <= hi + 1e-12);
            }
        }
    }
    let ring = Topology::ring(n, false).unwrap();
    let updated: Vec<Vec<f64>> = (0..n).map(|i| aggregate(Method::PullGossip, &ring, &snapshot, i).unwrap()).collect();
    for k in 0..6 {
        let before: f64 = snapshot.iter().map(|x| x[k]).sum::<f64>() / n as f64;
        let after: f64 = updated.iter().map(|x| x[k]).sum::<f64>() / n as f64;
        assert!((before - after).abs() < 1e-10);
    }
}

#[test]
fn two_agent_ring_example() {
    let ring = Topology::ring(2, true).unwrap();
    let snapshot = vec![vec![0.0, 2.0], vec![4.0, 6.0]];
    assert_eq!(aggregate(Method::PullGossip, &ring, &snapshot, 0).unwrap(), vec![2.0, 4.0]);
    assert_eq!(aggregate(Method::PullGossip, &ring, &snapshot, 1).unwrap(), vec![2.0, 4.0]);
    assert_eq!(aggregate(Method::P2pBn, &ring, &snapshot, 0).unwrap(), vec![2.0, 4.0]);
}

#[test]
fn aggregation_ignores_processing_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 12;
    let snapshot: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let topo = Topology::sparse(n, 3, 8).unwrap();
    for method in [Method::PullGossip, Method::P2pBn] {
        let forward: Vec<_> = (0..n).map(|i| aggregate(method, &topo, &snapshot, i).unwrap()).collect();
        let mut backward: Vec<_> = (0..n).rev().map(|i| aggregate(method, &topo, &snapshot, i).unwrap()).collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }
}

#[test]
fn checkpoint_resume_continues_identically() {
    let (alphabet, agents) = data(60, 4);
    let cfg = run_config(Method::P2pBn, 6);
    let full = p2p::run_simulation(cfg.clone(), alphabet.clone(), agents.clone(), Workers::sequential()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.gsck");
    let mut first = Simulation::new(RunConfig { rounds: 3, ..cfg.clone() }, alphabet.clone(), agents.clone(), Workers::sequential())
        .unwrap();
    first.run(|_| {}, |s| s.checkpoint().write(&path).map_err(Into::into)).unwrap();

    let ck = Checkpoint::read(&path).unwrap();
    assert_eq!(ck.round, 3);
    let mut resumed = Simulation::resume(cfg.clone(), alphabet.clone(), agents.clone(), &ck, Workers::sequential()).unwrap();
    let mut tail = Vec::new();
    resumed.run(|r| tail.extend_from_slice(r), |_| Ok(())).unwrap();
    let expected: Vec<_> = full.iter().filter(|r| r.round > 3).cloned().collect();
    assert_eq!(to_csv(&tail), to_csv(&expected));

    let wrong = RunConfig { method: Method::PullGossip, ..cfg };
    assert!(Simulation::resume(wrong, alphabet, agents, &ck, Workers::sequential()).is_err());

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::Checksum)));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..10]), Err(CheckpointError::Truncated)));
    assert!(matches!(Checkpoint::from_bytes(b"NOPE0000000000"), Err(CheckpointError::BadMagic)));
}

#[test]
fn central_pools_data_and_steps_per_batch() {
    let (alphabet, agents) = data(50, 5);
    let n_train: usize = agents.iter().map(|a| a.train.len()).sum();
    let cfg = run_config(Method::Central, 1);
    let mut sim = Simulation::new(cfg, alphabet, agents, Workers::sequential()).unwrap();
    assert_eq!(sim.agents().len(), 1);
    assert_eq!(sim.agents()[0].dataset.train.len(), n_train);
    let stats = sim.run_round().unwrap();
    assert_eq!(stats[0].steps, n_train.div_ceil(8));
    assert_eq!(sim.agents()[0].adam.t, n_train.div_ceil(8) as u64);
}

#[test]
fn empty_validation_gives_absent_metrics_and_average_row() {
    let (alphabet, mut agents) = data(40, 4);
    agents[2].validation.clear();
    let cfg = run_config(Method::PullGossip, 1);
    let sim = Simulation::new(cfg, alphabet, agents, Workers::sequential()).unwrap();
    let rows = sim.evaluate_all(None, 0.0).unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!((rows[2].val_loss, rows[2].val_wer, rows[2].val_cer), (None, None, None));
    let avg = &rows[4];
    assert_eq!(avg.agent, AVERAGE_AGENT);
    let present: Vec<f64> = rows[..4].iter().filter_map(|r| r.val_wer).collect();
    assert_eq!(present.len(), 3);
    assert!((avg.val_wer.unwrap() - present.iter().sum::<f64>() / 3.0).abs() < 1e-15);
}

#[test]
fn worker_count_does_not_change_results() {
    let (alphabet, agents) = data(60, 6);
    for method in [Method::Central, Method::PullGossip, Method::P2pBn] {
        let cfg = RunConfig { model: ModelConfig { dropout_rate: 0.2, ..run_config(method, 2).model }, ..run_config(method, 2) };
        let a = p2p::run_simulation(cfg.clone(), alphabet.clone(), agents.clone(), Workers::sequential()).unwrap();
        let b = p2p::run_simulation(cfg, alphabet.clone(), agents.clone(), Workers::new(4)).unwrap();
        assert_eq!(to_csv(&a), to_csv(&b), "{method:?}");
    }
}

#[test]
fn fresh_agents_share_initial_parameters() {
    let (alphabet, agents) = data(30, 5);
    let sim = Simulation::new(run_config(Method::P2pBn, 1), alphabet, agents, Workers::sequential()).unwrap();
    assert!(sim.agents().windows(2).all(|w| w[0].params == w[1].params));
    assert!(sim.agents().iter().all(|a| a.adam == AdamState::new(a.params.values.len(), &sim.config().optim)));
    assert_ne!(sim.agents()[0].rng, sim.agents()[1].rng);
}
