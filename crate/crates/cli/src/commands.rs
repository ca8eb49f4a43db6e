use crate::config::ExperimentConfig;
use crate::plot;
use crate::Failure;
use anyhow::{anyhow, Context};
use gossipspeech::data::{self, AgentDataset, PartitionSpec};
use gossipspeech::nn::AcousticModel;
use gossipspeech::p2p::{self, parse_csv, Checkpoint, CSV_HEADER};
use gossipspeech::par::Executor;
use gossipspeech::{Alphabet, Method, MetricsRecord, Simulation, Workers};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.gsck";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const TOPOLOGY_FILE: &str = "topology.json";

type Result<T> = std::result::Result<T, Failure>;

/// Classifies an error as a data/config problem or a runtime failure.
trait Classify<T> {
    fn data(self) -> Result<T>;
    fn runtime(self) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn data(self) -> Result<T> {
        self.map_err(|e| Failure::Data(e.into()))
    }

    fn runtime(self) -> Result<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).runtime()
}

pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let partition = cfg.data.resolved_partition().data()?;
    let clips = cfg.data.generate().data()?;
    create_dir(out)?;
    data::write_corpus(out, &clips, &partition)
        .with_context(|| format!("writing corpus to {}", out.display()))
        .runtime()?;
    let mut resolved = cfg.clone();
    resolved.data_dir = out.to_owned();
    resolved.data.partition = partition;
    resolved.write(&out.join(CONFIG_FILE)).runtime()?;
    log::info!("wrote {} clips to {}", clips.len(), out.display());
    Ok(())
}

/// Clips from `manifest`, split into agents by `partition`.
fn load_agents(
    cfg: &ExperimentConfig,
    manifest: &Path,
    partition: &Path,
) -> Result<(Alphabet, Vec<AgentDataset>)> {
    if !manifest.exists() {
        return Err(Failure::Data(anyhow!("no corpus manifest at {}; run gen-data first", manifest.display())));
    }
    let clips = data::load_manifest_clips(manifest).data()?;
    if let Some(c) = clips.first() {
        if c.features.cols() != cfg.run.model.input_features {
            return Err(Failure::Data(anyhow!(
                "corpus has {} features per frame but the model expects {}",
                c.features.cols(),
                cfg.run.model.input_features
            )));
        }
    }
    let alphabet = cfg.data.alphabet().data()?;
    let samples = cfg.data.to_samples(&clips).data()?;
    let spec = PartitionSpec::read(partition).data()?;
    let agents = spec.apply(samples).data()?;
    Ok((alphabet, agents))
}

/// Existing metrics rows up to and including `round`, for a resumed run.
fn metrics_before(path: &Path, round: usize) -> Result<Vec<MetricsRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).data()?;
    let records = parse_csv(&text)
        .map_err(|(line, msg)| anyhow!("{}: line {line}: {msg}", path.display()))
        .data()?;
    Ok(records.into_iter().filter(|r| r.round <= round).collect())
}

pub fn train(
    mut cfg: ExperimentConfig,
    method: Method,
    out: &Path,
    resume: Option<&Path>,
    workers: Workers,
) -> Result<()> {
    cfg.run.method = method;
    cfg.out_dir = out.to_owned();
    cfg.validate().data()?;
    let (alphabet, agents) = load_agents(
        &cfg,
        &cfg.data_dir.join(data::MANIFEST_FILE),
        &cfg.data_dir.join(data::PARTITION_FILE),
    )?;
    let (mut sim, kept) = match resume {
        Some(path) => {
            let ck = Checkpoint::read(path).with_context(|| format!("reading checkpoint {}", path.display())).data()?;
            let kept = metrics_before(&out.join(METRICS_FILE), ck.round)?;
            let sim = Simulation::resume(cfg.run.clone(), alphabet, agents, &ck, workers).data()?;
            log::info!("resuming {} at round {}", method.as_str(), ck.round);
            (sim, kept)
        }
        None => (Simulation::new(cfg.run.clone(), alphabet, agents, workers).data()?, Vec::new()),
    };

    create_dir(&out.join(CHECKPOINT_DIR))?;
    cfg.write(&out.join(CONFIG_FILE)).runtime()?;
    if let Some(topology) = sim.topology() {
        let path = out.join(TOPOLOGY_FILE);
        topology.write_json(&path).with_context(|| format!("writing {}", path.display())).runtime()?;
    }

    let metrics_path = out.join(METRICS_FILE);
    let file = File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display())).runtime()?;
    let mut csv = BufWriter::new(file);
    writeln!(csv, "{CSV_HEADER}").runtime()?;
    let mut write_rows = |rows: &[MetricsRecord]| -> std::io::Result<()> {
        for r in rows {
            writeln!(csv, "{}", r.to_csv_row())?;
        }
        csv.flush()
    };
    write_rows(&kept).runtime()?;

    let mut sink_error = None;
    let ck_dir = out.join(CHECKPOINT_DIR);
    sim.run(
        |rows| {
            if sink_error.is_none() {
                sink_error = write_rows(rows).err();
            }
        },
        |s| {
            let path = ck_dir.join(format!("round_{:05}.gsck", s.round()));
            s.checkpoint().write(&path).map_err(Into::into)
        },
    )
    .runtime()?;
    if let Some(e) = sink_error {
        return Err(Failure::Runtime(anyhow!(e).context(format!("writing {}", metrics_path.display()))));
    }
    let final_path = out.join(CHECKPOINT_FILE);
    sim.checkpoint().write(&final_path).with_context(|| format!("writing {}", final_path.display())).runtime()?;
    log::info!("finished {} rounds; outputs in {}", sim.round(), out.display());
    Ok(())
}

pub fn plot(metrics: &[PathBuf], out: &Path) -> Result<()> {
    let mut series = Vec::with_capacity(metrics.len());
    for path in metrics {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).data()?;
        let records = parse_csv(&text)
            .map_err(|(line, msg)| anyhow!("{}: line {line}: {msg}", path.display()))
            .data()?;
        let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        series.push(plot::Series { label, records });
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    std::fs::write(out, plot::render(&series)).with_context(|| format!("writing {}", out.display())).runtime()
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub manifest: &'a Path,
    pub partition: Option<&'a Path>,
}

pub fn eval(mut cfg: ExperimentConfig, args: EvalArgs<'_>, workers: Workers) -> Result<()> {
    let ck = Checkpoint::read(args.checkpoint)
        .with_context(|| format!("reading checkpoint {}", args.checkpoint.display()))
        .data()?;
    cfg.run.model = ck.model.clone();
    cfg.validate().data()?;
    let default_partition;
    let partition = match args.partition {
        Some(p) => p,
        None => {
            default_partition = args.manifest.parent().unwrap_or(Path::new(".")).join(data::PARTITION_FILE);
            &default_partition
        }
    };
    let (alphabet, mut agents) = load_agents(&cfg, args.manifest, partition)?;
    if ck.method == Method::Central {
        agents = vec![data::pool(&agents)];
    }
    if agents.len() != ck.agents.len() {
        return Err(Failure::Data(anyhow!(
            "checkpoint holds {} agents but the partition yields {}",
            ck.agents.len(),
            agents.len()
        )));
    }
    let model = AcousticModel::new(ck.model.clone()).data()?;
    if model.param_count() != ck.param_count {
        return Err(Failure::Data(anyhow!("checkpoint parameter count does not match its model config")));
    }
    let pairs: Vec<(&AgentDataset, &[f64])> =
        agents.iter().zip(&ck.agents).map(|(a, s)| (a, s.params.as_slice())).collect();
    let evals = Executor::new(workers).map(&pairs, |(a, params)| {
        p2p::evaluate_samples(&model, params, &a.validation, &alphabet)
    });
    let mut rows = Vec::with_capacity(evals.len() + 1);
    for (i, e) in evals.into_iter().enumerate() {
        let e = e.runtime()?;
        rows.push(MetricsRecord {
            round: ck.round,
            agent: i as i64,
            train_loss: None,
            val_loss: e.loss,
            val_wer: e.wer,
            val_cer: e.cer,
            skipped: 0,
            wallclock: 0.0,
        });
    }
    let avg = MetricsRecord::average(ck.round, &rows, 0.0);
    print!("{}", eval_table(&ck, &avg, &rows));
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn eval_table(ck: &Checkpoint, avg: &MetricsRecord, rows: &[MetricsRecord]) -> String {
    let mut out = format!("method {} round {} agents {}\n", ck.method.as_str(), ck.round, rows.len());
    out.push_str(&format!(
        "average\tval_loss {}\tval_wer {}\tval_cer {}\n",
        cell(avg.val_loss),
        cell(avg.val_wer),
        cell(avg.val_cer)
    ));
    out.push_str("agent\tval_loss\tval_wer\tval_cer\n");
    for r in rows {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.agent, cell(r.val_loss), cell(r.val_wer), cell(r.val_cer)));
    }
    out
}
