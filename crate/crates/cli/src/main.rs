use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ringdsq::baselines::{Greedy, NoLaneChange, Policy, PolicyKind, RuleBased};
use ringdsq::env::episode_seed;
use ringdsq::harness::{
    default_sweep_ranges, evaluate, run_episode, sweep_connectivity, write_eval_csv, write_sweep_csv, Checkpoint,
    TrainConfig, Trainer,
};
use ringdsq::sim::trace::{read_trace, render_steps, TraceWriter};
use serde::Serialize;
use sha2::{Digest, Sha256};

const SEED_ENV: &str = "RINGDSQ_SEED";
const VERSION: &str = env!("RINGDSQ_BUILD_VERSION");

#[derive(Parser)]
#[command(name = "ringdsq", version = VERSION, about = "Ring-road lane-change agent experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write its checkpoint.
    Train {
        /// JSON training config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the laptop-sized profile (2e4 warm-up, 1e5 learning steps, 30 vehicles).
        #[arg(long, conflicts_with = "config")]
        desk: bool,
        /// Overrides the config seed (the RINGDSQ_SEED variable is used when absent).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Also save the untrained network as it stood after warm-up.
        #[arg(long)]
        warmup_out: Option<PathBuf>,
        /// Continue from a saved trainer state instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Save the full trainer state (replay buffer included) for later resumption.
        #[arg(long)]
        state_out: Option<PathBuf>,
        /// Stop after this many environment steps instead of the full budget.
        #[arg(long)]
        stop_at: Option<u64>,
    },
    /// Evaluate a policy with greedy rollouts.
    Evaluate {
        /// Checkpoint; required for learned policies.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value = "dsq-linear")]
        policy: String,
        /// Total vehicle count; repeat or comma-separate for several scenarios.
        #[arg(long, value_delimiter = ',', default_values_t = [20, 30, 40, 50])]
        vehicles: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        episodes: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [1000])]
        seeds: Vec<u64>,
        /// Connectivity range override in meters.
        #[arg(long)]
        connectivity: Option<f64>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write a vehicle trace of the first episode of the first scenario.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Evaluate one checkpoint across connectivity ranges.
    Sweep {
        #[arg(long)]
        ckpt: PathBuf,
        /// Ranges as start:end:step in meters.
        #[arg(long)]
        ranges: Option<String>,
        #[arg(long)]
        vehicles: Option<usize>,
        #[arg(long, default_value_t = 10)]
        episodes: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [1000])]
        seeds: Vec<u64>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Fit the saturating trend and report the optimal range.
        #[arg(long)]
        fit: bool,
        #[arg(long, default_value_t = 100.0)]
        x0: f64,
        #[arg(long, default_value_t = 0.1)]
        ratio: f64,
    },
    /// Print a recorded trace as one text line per step.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config_sha256: String,
    outputs: Vec<String>,
}

fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let text = serde_json::to_string(config)?;
    Ok(hex::encode(Sha256::digest(text.as_bytes())))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_metadata<T: Serialize>(primary: &Path, command: &str, seed: Option<u64>, config: &T, outputs: &[&Path]) -> Result<()> {
    let meta = Metadata {
        command,
        version: VERSION,
        seed,
        config_sha256: config_hash(config)?,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = sidecar_path(primary);
    std::fs::write(&path, serde_json::to_string_pretty(&meta)?).with_context(|| format!("writing {}", path.display()))
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("{SEED_ENV}={s} is not an integer"))?)),
        Err(_) => Ok(None),
    }
}

fn parse_ranges(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad range component '{p}'")))
        .collect::<Result<_>>()?;
    let [start, end, step] = parts[..] else {
        bail!("ranges must look like start:end:step, got '{spec}'");
    };
    if !(step > 0.0) || end < start || !(start > 0.0) {
        bail!("ranges need 0 < start <= end and a positive step, got '{spec}'");
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + step * i as f64).collect())
}

fn train(
    config: Option<PathBuf>,
    desk: bool,
    seed: Option<u64>,
    out: PathBuf,
    log: Option<PathBuf>,
    warmup_out: Option<PathBuf>,
    resume: Option<PathBuf>,
    state_out: Option<PathBuf>,
    stop_at: Option<u64>,
) -> Result<()> {
    let seed = match seed {
        Some(s) => Some(s),
        None => env_seed()?,
    };
    let mut trainer = if let Some(path) = resume {
        if config.is_some() || desk || seed.is_some() {
            bail!("--resume continues the saved run; --config, --desk and --seed cannot be combined with it");
        }
        Trainer::load(&path).with_context(|| format!("loading trainer state {}", path.display()))?
    } else {
        let mut c = match (&config, desk) {
            (Some(path), _) => TrainConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            (None, true) => TrainConfig::desk(0),
            (None, false) => TrainConfig::default(),
        };
        if let Some(s) = seed {
            c.seed = s;
        }
        Trainer::new(c)?
    };
    let target = stop_at.unwrap_or(trainer.config.total_steps);
    let report_every = (trainer.config.total_steps / 20).max(1);
    while trainer.step < target.min(trainer.config.total_steps) {
        let next = (trainer.step / report_every + 1) * report_every;
        trainer.run_until(next.min(target))?;
        let recent: Vec<f64> = trainer.log.iter().rev().filter_map(|r| r.episode_return).take(5).collect();
        let mean = if recent.is_empty() { f64::NAN } else { recent.iter().sum::<f64>() / recent.len() as f64 };
        eprintln!(
            "step {:>8}/{}  gradient steps {:>8}  recent episode return {:.1}",
            trainer.step, trainer.config.total_steps, trainer.learner.updates, mean
        );
    }
    trainer.checkpoint().save(&out).with_context(|| format!("writing {}", out.display()))?;
    let mut outputs: Vec<&Path> = vec![&out];
    if let Some(path) = &warmup_out {
        match trainer.warmup_checkpoint() {
            Some(c) => c.save(path)?,
            None => bail!("warm-up has not finished; no post-warm-up snapshot to write"),
        }
        outputs.push(path);
    }
    if let Some(path) = &log {
        trainer.write_log_csv(BufWriter::new(File::create(path)?))?;
        outputs.push(path);
    }
    if let Some(path) = &state_out {
        trainer.save(path)?;
        outputs.push(path);
    }
    write_metadata(&out, "train", Some(trainer.config.seed), &trainer.config, &outputs)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn load_policy_checkpoint(kind: PolicyKind, ckpt: Option<&Path>) -> Result<Option<Checkpoint>> {
    match (kind.pooling(), ckpt) {
        (Some(_), None) => bail!("policy {kind} needs --ckpt"),
        (_, Some(path)) => Ok(Some(
            Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?,
        )),
        (None, None) => Ok(None),
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cmd(
    ckpt: Option<PathBuf>,
    policy: String,
    vehicles: Vec<usize>,
    episodes: u64,
    seeds: Vec<u64>,
    connectivity: Option<f64>,
    csv: Option<PathBuf>,
    trace: Option<PathBuf>,
) -> Result<()> {
    let kind: PolicyKind = policy.parse()?;
    let checkpoint = load_policy_checkpoint(kind, ckpt.as_deref())?;
    let mut base = checkpoint.as_ref().map(|c| c.env.clone()).unwrap_or_default();
    if let Some(range) = connectivity {
        base = base.with_connectivity(range);
    }
    let mut policy_impl: Box<dyn Policy + '_> = match (kind, &checkpoint) {
        (PolicyKind::NoLaneChange, _) => Box::new(NoLaneChange),
        (PolicyKind::RuleBased, _) => Box::new(RuleBased),
        (k, Some(c)) => Box::new(Greedy {
            net: &c.online,
            pooling: k.pooling().expect("learned policy"),
        }),
        (k, None) => bail!("policy {k} needs --ckpt"),
    };
    if let Some(c) = &checkpoint {
        if let Some(p) = kind.pooling() {
            if p != c.agent.pooling {
                eprintln!("note: checkpoint was trained with {:?} pooling, evaluating as {kind}", c.agent.pooling);
            }
        }
    }
    let mut results = Vec::new();
    println!("policy,vehicles,episodes,mean,median,sd,lane_changes,collisions");
    for &n in &vehicles {
        let config = base.with_vehicles(n);
        let stats = evaluate(policy_impl.as_mut(), &config, episodes, &seeds)?;
        println!(
            "{kind},{n},{},{:.3},{:.3},{:.3},{},{}",
            stats.count(),
            stats.mean,
            stats.median,
            stats.sd,
            stats.lane_changes(),
            stats.collisions()
        );
        results.push((kind.to_string(), n, stats));
    }
    if let Some(path) = &trace {
        let config = base.with_vehicles(vehicles[0]);
        let mut writer = TraceWriter::new(BufWriter::new(File::create(path)?));
        run_episode(policy_impl.as_mut(), &config, episode_seed(seeds[0], 0), Some(&mut writer))?;
        writer.finish()?;
    }
    if let Some(path) = &csv {
        let rows: Vec<(String, usize, &_)> = results.iter().map(|(k, n, s)| (k.clone(), *n, s)).collect();
        write_eval_csv(BufWriter::new(File::create(path)?), &rows)?;
        let mut outputs: Vec<&Path> = vec![path];
        if let Some(t) = &trace {
            outputs.push(t);
        }
        let described = (kind.name(), &vehicles, episodes, &seeds, &base);
        write_metadata(path, "evaluate", seeds.first().copied(), &described, &outputs)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep_cmd(
    ckpt: PathBuf,
    ranges: Option<String>,
    vehicles: Option<usize>,
    episodes: u64,
    seeds: Vec<u64>,
    csv: Option<PathBuf>,
    fit: bool,
    x0: f64,
    ratio: f64,
) -> Result<()> {
    let checkpoint = Checkpoint::load(&ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let ranges = match ranges {
        Some(s) => parse_ranges(&s)?,
        None => default_sweep_ranges(),
    };
    let mut config = checkpoint.env.clone();
    if let Some(n) = vehicles {
        config = config.with_vehicles(n);
    }
    let pooling = checkpoint.agent.pooling;
    let mut result = sweep_connectivity(&checkpoint.online, pooling, &config, &ranges, episodes, &seeds)?;
    println!("range,mean,median,sd");
    for p in &result.points {
        println!("{},{:.3},{:.3},{:.3}", p.range, p.stats.mean, p.stats.median, p.stats.sd);
    }
    if fit {
        result.fit(x0, ratio)?;
        let t = result.trend.expect("fit sets the trend");
        println!("trend: a={:.4} b={:.4} c={:.4} residual={:.4}{}", t.a, t.b, t.c, t.residual, if t.degenerate { " (degenerate)" } else { "" });
        match result.x_optimal {
            Some(x) => println!("optimal range: {x:.1} m (g0 = {:.6})", result.g0.unwrap_or(f64::NAN)),
            None => println!("optimal range: no saturation detected (b = {:.4})", t.b),
        }
    }
    if let Some(path) = &csv {
        write_sweep_csv(BufWriter::new(File::create(path)?), &result)?;
        let described = (&ranges, episodes, &seeds, &config, pooling);
        write_metadata(path, "sweep", seeds.first().copied(), &described, &[path])?;
    }
    Ok(())
}

fn replay(trace: PathBuf) -> Result<()> {
    let rows = read_trace(BufReader::new(File::open(&trace).with_context(|| format!("opening {}", trace.display()))?))?;
    let mut out = std::io::stdout().lock();
    for line in render_steps(&rows) {
        match writeln!(out, "{line}") {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
            other => other?,
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            config,
            desk,
            seed,
            out,
            log,
            warmup_out,
            resume,
            state_out,
            stop_at,
        } => train(config, desk, seed, out, log, warmup_out, resume, state_out, stop_at),
        Command::Evaluate {
            ckpt,
            policy,
            vehicles,
            episodes,
            seeds,
            connectivity,
            csv,
            trace,
        } => evaluate_cmd(ckpt, policy, vehicles, episodes, seeds, connectivity, csv, trace),
        Command::Sweep {
            ckpt,
            ranges,
            vehicles,
            episodes,
            seeds,
            csv,
            fit,
            x0,
            ratio,
        } => sweep_cmd(ckpt, ranges, vehicles, episodes, seeds, csv, fit, x0, ratio),
        Command::Replay { trace } => replay(trace),
    }
}
