//! Greedy rollouts, multi-seed evaluation and connectivity sweeps.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::stats::Summary;
use super::trend::{baseline_gradient, fit_saturating_trend, optimal_range, Trend};
use crate::agent::Pooling;
use crate::baselines::{Greedy, Policy};
use crate::env::{episode_seed, Env, EnvConfig};
use crate::error::{Error, Result};
use crate::neural::QNetwork;
use crate::sim::trace::TraceWriter;

/// Default sweep grid: 50 m to 500 m in 25 m steps.
pub fn default_sweep_ranges() -> Vec<f64> {
    (0..19).map(|i| 50.0 + 25.0 * i as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub episode: u64,
    pub total_return: f64,
    pub steps: u64,
    pub lane_changes: u64,
    pub loops: u64,
    pub collided: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalStats {
    pub fn from_records(mut episodes: Vec<EpisodeRecord>) -> Result<Self> {
        episodes.sort_by_key(|e| (e.seed, e.episode));
        let returns: Vec<f64> = episodes.iter().map(|e| e.total_return).collect();
        let s = Summary::of(&returns).ok_or_else(|| Error::Config("evaluation needs at least one episode".into()))?;
        Ok(Self {
            mean: s.mean,
            median: s.median,
            sd: s.sd,
            episodes,
        })
    }

    pub fn count(&self) -> usize {
        self.episodes.len()
    }

    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.total_return).collect()
    }

    pub fn lane_changes(&self) -> u64 {
        self.episodes.iter().map(|e| e.lane_changes).sum()
    }

    pub fn collisions(&self) -> usize {
        self.episodes.iter().filter(|e| e.collided).count()
    }
}

/// One full episode of `policy` on a world seeded with `world_seed`.
pub fn run_episode<W: Write>(
    policy: &mut dyn Policy,
    config: &EnvConfig,
    world_seed: u64,
    mut trace: Option<&mut TraceWriter<W>>,
) -> Result<(f64, u64, u64, u64, bool)> {
    let mut env = Env::new(config.clone())?;
    env.reset_with_seed(world_seed)?;
    let (mut ret, mut lane_changes, mut loops, mut collided) = (0.0, 0, 0, false);
    if let Some(t) = trace.as_mut() {
        t.record(env.world())?;
    }
    while !env.is_done() {
        let action = policy.act(env.observation(), env.world());
        let out = env.step(action)?;
        ret += out.reward;
        lane_changes += u64::from(out.events.cav_lane_change_initiated);
        loops += u64::from(out.events.cav_loop_completed);
        collided |= out.breakdown.collision > 0.0 || out.events.cav_collided(env.world().cav().id);
        if let Some(t) = trace.as_mut() {
            t.record(env.world())?;
        }
    }
    Ok((ret, env.steps(), lane_changes, loops, collided))
}

/// Evaluates `policy` for `episodes` episodes under each seed in `seeds`.
///
/// Episode `k` of seed `s` always uses the same world, so results depend only on the inputs.
pub fn evaluate(policy: &mut dyn Policy, config: &EnvConfig, episodes: u64, seeds: &[u64]) -> Result<EvalStats> {
    if episodes == 0 || seeds.is_empty() {
        return Err(Error::Config("evaluation needs at least one episode and one seed".into()));
    }
    let mut records = Vec::new();
    for &seed in seeds {
        for k in 0..episodes {
            let (total_return, steps, lane_changes, loops, collided) =
                run_episode::<std::io::Sink>(policy, config, episode_seed(seed, k), None)?;
            records.push(EpisodeRecord {
                seed,
                episode: k,
                total_return,
                steps,
                lane_changes,
                loops,
                collided,
            });
        }
    }
    EvalStats::from_records(records)
}

/// Greedy evaluation of a network.
pub fn evaluate_network(
    net: &QNetwork,
    pooling: Pooling,
    config: &EnvConfig,
    episodes: u64,
    seeds: &[u64],
) -> Result<EvalStats> {
    evaluate(&mut Greedy { net, pooling }, config, episodes, seeds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub range: f64,
    pub stats: EvalStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub trend: Option<Trend>,
    pub x_optimal: Option<f64>,
    /// Trend slope at `x0`.
    pub g0: Option<f64>,
}

impl SweepResult {
    pub fn means(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.range, p.stats.mean)).collect()
    }

    /// Fits the trend and locates the optimal range; a flat or falling trend leaves `x_optimal` empty.
    pub fn fit(&mut self, x0: f64, ratio: f64) -> Result<()> {
        let trend = fit_saturating_trend(&self.means())?;
        self.g0 = Some(baseline_gradient(&trend, x0));
        self.x_optimal = match optimal_range(&trend, x0, ratio) {
            Ok(x) => Some(x),
            Err(Error::NoSaturation(_)) => None,
            Err(e) => return Err(e),
        };
        self.trend = Some(trend);
        Ok(())
    }
}

/// Evaluates one trained network at each connectivity range without retraining.
pub fn sweep_connectivity(
    net: &QNetwork,
    pooling: Pooling,
    config: &EnvConfig,
    ranges: &[f64],
    episodes: u64,
    seeds: &[u64],
) -> Result<SweepResult> {
    if ranges.is_empty() {
        return Err(Error::Config("sweep needs at least one range".into()));
    }
    if ranges.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("sweep ranges must be ascending".into()));
    }
    let points = ranges
        .iter()
        .map(|&range| {
            let stats = evaluate_network(net, pooling, &config.with_connectivity(range), episodes, seeds)?;
            Ok(SweepPoint { range, stats })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        points,
        trend: None,
        x_optimal: None,
        g0: None,
    })
}

/// Per-episode CSV: `policy,vehicles,seed,episode,return,steps,lane_changes,loops,collided`.
pub fn write_eval_csv<W: Write>(writer: W, rows: &[(String, usize, &EvalStats)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["policy", "vehicles", "seed", "episode", "return", "steps", "lane_changes", "loops", "collided"])?;
    for (policy, vehicles, stats) in rows {
        for e in &stats.episodes {
            w.write_record([
                policy.clone(),
                vehicles.to_string(),
                e.seed.to_string(),
                e.episode.to_string(),
                e.total_return.to_string(),
                e.steps.to_string(),
                e.lane_changes.to_string(),
                e.loops.to_string(),
                e.collided.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-range CSV: `range,mean,median,sd,episodes,trend`, the last column holding the fitted value.
pub fn write_sweep_csv<W: Write>(writer: W, sweep: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["range", "mean", "median", "sd", "episodes", "trend"])?;
    for p in &sweep.points {
        let fitted = sweep.trend.map(|t| t.value(p.range).to_string()).unwrap_or_default();
        w.write_record([
            p.range.to_string(),
            p.stats.mean.to_string(),
            p.stats.median.to_string(),
            p.stats.sd.to_string(),
            p.stats.count().to_string(),
            fitted,
        ])?;
    }
    w.flush()?;
    Ok(())
}
