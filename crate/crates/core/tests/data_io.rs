mod common;

use gossipspeech::data::{
    self, encode_transcript, pad_features, partition_per_user, partition_uniform, read_feature_file,
    read_manifest, write_corpus, write_feature_file, AgentDataset, DataConfig, DataError, ManifestEntry,
    PartitionScheme, PartitionSpec, Sample,
};
use gossipspeech::nn::{AcousticModel, ModelConfig};
use gossipspeech::{Alphabet, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dummy_samples(n: usize) -> Vec<Sample> {
    let alphabet = Alphabet::new(['A']).unwrap();
    (0..n)
        .map(|i| Sample {
            features: pad_features(&Matrix::from_vec(1, 1, vec![i as f64]), 1, 1).unwrap(),
            transcript: encode_transcript("A", &alphabet, 2).unwrap(),
        })
        .collect()
}

fn ids(agent: &AgentDataset) -> Vec<usize> {
    agent.train.iter().chain(&agent.validation).map(|s| s.features.frame(0)[0] as usize).collect()
}

proptest! {
    #[test]
    fn feature_file_round_trip(rows in 1usize..20, cols in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| (rng.random::<f32>() * 10.0 - 5.0) as f64).collect();
        let m = Matrix::from_vec(rows, cols, data);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.gsf");
        write_feature_file(&path, &m).unwrap();
        let back = read_feature_file(&path).unwrap();
        prop_assert_eq!(
            back.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        prop_assert_eq!((back.rows(), back.cols()), (rows, cols));
    }

    #[test]
    fn uniform_partition_is_a_permutation(n in 1usize..200, agents in 1usize..30, seed in any::<u64>()) {
        prop_assume!(n >= agents);
        let parts = partition_uniform(&dummy_samples(n), agents, seed).unwrap();
        let mut all: Vec<usize> = parts.iter().flat_map(ids).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = parts.iter().map(|a| a.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for a in &parts {
            prop_assert_eq!(a.train.len(), data::train_count(a.len()));
        }
    }
}

#[test]
fn seven_by_three_round_trip_and_bad_magic() {
    let dir = tempfile::tempdir().unwrap();
    let m = Matrix::from_vec(7, 3, (0..21).map(|v| v as f64 * 0.25 - 1.0).collect());
    let p = dir.path().join("m.gsf");
    write_feature_file(&p, &m).unwrap();
    assert_eq!(read_feature_file(&p).unwrap(), m);
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(bytes.len(), 12 + 21 * 4);
    assert_eq!(&bytes[..4], b"GSF1");
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"GSF2");
    std::fs::write(&p, &bad).unwrap();
    assert!(matches!(read_feature_file(&p), Err(DataError::BadMagic)));
    std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
    assert!(matches!(read_feature_file(&p), Err(DataError::Truncated { .. })));
}

#[test]
fn manifest_skips_comments_and_counts_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DataConfig { n_clips: 12, feature_dim: 4, ..Default::default() };
    let clips = cfg.generate().unwrap();
    write_corpus(dir.path(), &clips, &cfg.partition).unwrap();
    let manifest = read_manifest(&dir.path().join(data::MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.len(), 12);
    let loaded = data::load_manifest_clips(&dir.path().join(data::MANIFEST_FILE)).unwrap();
    assert_eq!(loaded, clips);
    let text = std::fs::read_to_string(dir.path().join(data::MANIFEST_FILE)).unwrap();
    assert!(text.starts_with('#'));

    let p = dir.path().join("m.tsv");
    std::fs::write(&p, "# c\nfeatures/a.gsf\tAB\n\nno tab here\n").unwrap();
    match read_manifest(&p) {
        Err(DataError::Manifest { line, .. }) => assert_eq!(line, 4),
        other => panic!("{other:?}"),
    }
    let entries = vec![ManifestEntry { path: "a".into(), text: "AB CD".into() }];
    data::write_manifest(&p, &entries).unwrap();
    assert_eq!(read_manifest(&p).unwrap(), entries);
}

#[test]
fn uniform_partition_boundaries() {
    let one_each = partition_uniform(&dummy_samples(55), 55, 0).unwrap();
    assert!(one_each.iter().all(|a| a.train.len() == 1 && a.validation.is_empty()));
    assert!(matches!(partition_uniform(&dummy_samples(3), 4, 0), Err(DataError::TooFewClips { .. })));
    let a = partition_uniform(&dummy_samples(40), 6, 9).unwrap();
    let b = partition_uniform(&dummy_samples(40), 6, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn lj_speech_scale_split() {
    // 13100 clips over 55 agents: 45 agents of 238 and 10 of 239
    let assignment = data::uniform_assignment(13100, 55, 0).unwrap();
    let trains: Vec<usize> = assignment.iter().map(|a| data::train_count(a.len())).collect();
    assert_eq!(trains.iter().filter(|&&t| t == 166).count(), 45);
    assert_eq!(trains.iter().filter(|&&t| t == 167).count(), 10);
}

#[test]
fn per_user_partition_keeps_users_apart() {
    let samples = dummy_samples(44);
    let groups = data::group_by_sizes(samples, &[4, 40]).unwrap();
    let parts = partition_per_user(&[4, 40], groups).unwrap();
    assert_eq!(parts[0].len(), 4);
    assert_eq!(parts[1].len(), 40);
    assert_eq!(ids(&parts[0]), vec![0, 1, 2, 3]);
    assert!(ids(&parts[1]).iter().all(|&i| i >= 4));

    let single = partition_per_user(&[10], vec![dummy_samples(10)]).unwrap();
    assert_eq!((single[0].train.len(), single[0].validation.len()), (7, 3));
    assert!(partition_per_user(&[3, 3], vec![dummy_samples(3)]).is_err());
    assert!(partition_per_user(&[4], vec![dummy_samples(3)]).is_err());
}

#[test]
fn userlibri_profile() {
    let cfg = DataConfig {
        n_clips: 55 * 47,
        feature_dim: 2,
        words_per_clip: (1, 1),
        partition: PartitionSpec { scheme: PartitionScheme::PerUser, agents: 55, seed: 3, user_sizes: vec![] },
        ..Default::default()
    };
    let agents = cfg.build_agents().unwrap();
    assert_eq!(agents.len(), 55);
    let mean_train = agents.iter().map(|a| a.train.len()).sum::<usize>() as f64 / 55.0;
    assert!((mean_train - 32.9).abs() < 1.0, "{mean_train}");
    let sizes: Vec<usize> = agents.iter().map(AgentDataset::len).collect();
    assert_eq!(sizes, cfg.resolved_partition().unwrap().user_sizes);
}

#[test]
fn synthetic_generation_is_deterministic() {
    let cfg = DataConfig { n_clips: 30, noise_sigma: 0.0, ..Default::default() };
    assert_eq!(cfg.generate().unwrap(), cfg.generate().unwrap());
    let noisy = DataConfig { n_clips: 30, ..Default::default() };
    assert_eq!(noisy.generate().unwrap(), noisy.generate().unwrap());
    for c in noisy.generate().unwrap() {
        assert_eq!(c.features.rows(), 3 * c.text.chars().count());
    }
}

#[test]
fn padding_is_invisible_to_loss_and_gradient() {
    let model = AcousticModel::new(ModelConfig { input_features: 4, alphabet_size: 3, ..Default::default() }).unwrap();
    let alphabet = Alphabet::new("AB ".chars()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = model.init_params(&mut rng).values;
    let raw = Matrix::from_vec(9, 4, (0..36).map(|_| rng.random_range(-1.0..1.0)).collect());
    let t = encode_transcript("AB A", &alphabet, 64).unwrap();
    let results: Vec<_> = [9, 18, 256]
        .iter()
        .map(|&len| {
            let x = pad_features(&raw, len, 4).unwrap();
            model.sample_gradient(&params, &x, &t, None).unwrap()
        })
        .collect();
    for r in &results[1..] {
        assert_eq!(r, &results[0]);
    }
}
