//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance` runs everything. Criterion numbers given as
//! arguments (`cargo test --test acceptance -- 1 2 5`) restrict the run.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ringdsq::agent::{embed_downstream, greedy_action, q_values, q_values_batch, BatchForward, Pooling};
use ringdsq::baselines::NoLaneChange;
use ringdsq::env::{compute_reward, RewardEvents, RewardWeights};
use ringdsq::harness::{
    default_sweep_ranges, evaluate, evaluate_network, fit_saturating_trend, optimal_range, spearman,
    sweep_connectivity, Checkpoint, SweepResult, TrainConfig, Trainer,
};
use ringdsq::neural::{AdamState, QNetwork};
use ringdsq::observe::{weights, Observation, WeightScheme};
use ringdsq::sim::{IdmParams, LaneChangeParams, Maneuver, TrackConfig, Vehicle, VehicleKind, WorldState};
use ringdsq::Action;

const DESK_SEEDS: [u64; 3] = [1, 2, 3];
const EVAL_SEEDS: [u64; 1] = [1000];
const EVAL_EPISODES: u64 = 10;
const LINEAR: Pooling = Pooling::Weighted(WeightScheme::Linear);
const POOLINGS: [Pooling; 4] = [
    Pooling::Weighted(WeightScheme::Uniform),
    LINEAR,
    Pooling::Weighted(WeightScheme::Quadratic),
    Pooling::UnnormalizedSum,
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_obs(rng: &mut impl Rng, rows: usize) -> Observation {
    let mut downstream: Vec<[f64; 3]> = (0..rows)
        .map(|_| {
            [
                rng.random_range(0.1..1.0),
                rng.random_range(-0.6..0.6),
                rng.random_range(-3..=3) as f64,
            ]
        })
        .collect();
    downstream.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let local = std::array::from_fn(|_| {
        [
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.6..0.6),
            rng.random_range(-1..=1) as f64,
        ]
    });
    let cav = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
    let action_mask = [rng.random_bool(0.7), true, rng.random_bool(0.7)];
    Observation {
        downstream,
        local,
        cav,
        action_mask,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn probe_loss(net: &QNetwork, batch: &[&Observation], coeff: &Array2<f64>, pooling: Pooling) -> f64 {
    (q_values_batch(net, batch, pooling).unwrap() * coeff).sum()
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let (mut checked, mut kinks) = (0usize, 0usize);
    for k in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k);
        let net = QNetwork::new(&mut rng);
        let pooling = POOLINGS[k as usize % POOLINGS.len()];
        let obs: Vec<Observation> = (0..3).map(|i| random_obs(&mut rng, i * 2)).collect();
        let refs: Vec<&Observation> = obs.iter().collect();
        let coeff = Array2::from_shape_fn((refs.len(), 3), |_| rng.random_range(-1.0..1.0));
        let grads = BatchForward::run(&net, &refs, pooling).unwrap().backward(&net, coeff.view()).unwrap();
        let centre = probe_loss(&net, &refs, &coeff, pooling);
        let tensor_count = net.tensors().len();
        for t in 0..tensor_count {
            let len = net.tensors()[t].len();
            for _ in 0..8 {
                let i = rng.random_range(0..len);
                let mut plus = net.clone();
                plus.tensors_mut()[t][i] += h;
                let mut minus = net.clone();
                minus.tensors_mut()[t][i] -= h;
                let up = (probe_loss(&plus, &refs, &coeff, pooling) - centre) / h;
                let down = (centre - probe_loss(&minus, &refs, &coeff, pooling)) / h;
                // Disagreeing one-sided slopes mean a ReLU kink lies inside the stencil.
                if (up - down).abs() > 1e-3 * up.abs().max(down.abs()).max(1e-3) {
                    kinks += 1;
                    continue;
                }
                let numeric = 0.5 * (up + down);
                let analytic = grads.tensors()[t][i];
                worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6));
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-4 && checked >= 9 * (checked + kinks) / 10 && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!("max rel err {worst:.2e} over {checked} entries ({kinks} kinks skipped), {elapsed:.2?}"),
    )
}

fn adam_oracle() -> Outcome {
    let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
    let mut adam = AdamState::new(&[2], lr);
    let mut theta = [1.0, -0.5];
    let g = [4.0, -0.25];
    adam.step(vec![theta.as_mut_slice()], &[&g]).unwrap();
    let mut err: f64 = 0.0;
    for i in 0..2 {
        let m_hat = (1.0 - b1) * g[i] / (1.0 - b1);
        let v_hat = (1.0 - b2) * g[i] * g[i] / (1.0 - b2);
        let expected = [1.0, -0.5][i] - lr * m_hat / (v_hat.sqrt() + eps);
        err = err.max((theta[i] - expected).abs());
    }
    let mut second = AdamState::new(&[3], 1e-3);
    let mut still = [0.3, -7.0, 2.5];
    second.step(vec![still.as_mut_slice()], &[&[0.0; 3]]).unwrap();
    let no_op = still == [0.3, -7.0, 2.5];
    outcome(err <= 1e-10 && no_op, format!("hand error {err:.1e}, zero-gradient no-op {no_op}"))
}

fn permutation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let nets: Vec<QNetwork> = (0..4).map(|_| QNetwork::new(&mut rng)).collect();
    let mut worst: f64 = 0.0;
    let mut same_actions = true;
    for k in 0..100 {
        let rows = rng.random_range(0..12);
        let obs = random_obs(&mut rng, rows);
        let mut shuffled = obs.clone();
        rand::seq::SliceRandom::shuffle(shuffled.downstream.as_mut_slice(), &mut rng);
        let pooling = POOLINGS[k % POOLINGS.len()];
        let net = &nets[k % nets.len()];
        let a = q_values(&obs, net, pooling).unwrap();
        let b = q_values(&shuffled, net, pooling).unwrap();
        worst = worst.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        same_actions &= greedy_action(&a, &obs.action_mask) == greedy_action(&b, &shuffled.action_mask);
    }
    outcome(worst <= 1e-9 && same_actions, format!("max |ΔQ| {worst:.1e}, greedy actions identical {same_actions}"))
}

fn normalization_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = QNetwork::new(&mut rng);
    let mut drift: f64 = 0.0;
    let mut ratio_err: f64 = 0.0;
    for _ in 0..100 {
        let rows = rng.random_range(1..15);
        let obs = random_obs(&mut rng, rows);
        let doubled: Vec<[f64; 3]> = obs.downstream.iter().chain(&obs.downstream).copied().collect();
        for scheme in [WeightScheme::Uniform, WeightScheme::Linear, WeightScheme::Quadratic] {
            let p = Pooling::Weighted(scheme);
            let a = embed_downstream(&obs.downstream, &net.phi, p).unwrap();
            let b = embed_downstream(&doubled, &net.phi, p).unwrap();
            drift = drift.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        }
        let a = embed_downstream(&obs.downstream, &net.phi, Pooling::UnnormalizedSum).unwrap();
        let b = embed_downstream(&doubled, &net.phi, Pooling::UnnormalizedSum).unwrap();
        ratio_err = ratio_err.max((norm(&b) / norm(&a) - 2.0).abs());
    }
    outcome(
        drift <= 1e-9 && ratio_err <= 1e-6,
        format!("weighted drift {drift:.1e}, sum norm ratio 2 ± {ratio_err:.1e}"),
    )
}

fn weight_schemes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_sum: f64 = 0.0;
    let mut nonnegative = true;
    for _ in 0..1000 {
        let n = rng.random_range(1..30);
        let dx: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        for scheme in [WeightScheme::Uniform, WeightScheme::Linear, WeightScheme::Quadratic] {
            let w = weights(&dx, scheme);
            nonnegative &= w.iter().all(|x| *x >= 0.0);
            worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
        }
    }
    let linear = weights(&[0.5, 1.0], WeightScheme::Linear);
    let quadratic = weights(&[0.5, 1.0], WeightScheme::Quadratic);
    let exact = linear == vec![2.0 / 3.0, 1.0 / 3.0] && quadratic == vec![0.8, 0.2];
    outcome(
        nonnegative && worst_sum <= 1e-12 && exact,
        format!(
            "nonnegative {nonnegative}, max |Σw-1| {worst_sum:.1e}, linear {linear:?}, quadratic {quadratic:?}"
        ),
    )
}

fn speed_variance(world: &WorldState) -> f64 {
    let n = world.vehicles.len() as f64;
    let mean = world.vehicles.iter().map(|v| v.speed).sum::<f64>() / n;
    world.vehicles.iter().map(|v| (v.speed - mean).powi(2)).sum::<f64>() / n
}

fn platoon_safety() -> Outcome {
    let start = Instant::now();
    let n = 20;
    let track = TrackConfig::default();
    let idm = IdmParams::default().with_desired_speed(25.0);
    let spacing = track.length / n as f64;
    let length = 5.0;
    // Equilibrium speed for the spacing, by bisection on the equilibrium gap.
    let (mut lo, mut hi) = (0.0, idm.desired_speed);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if idm.equilibrium_gap(mid) < spacing - length {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let vehicles = (0..n)
        .map(|i| Vehicle {
            id: i,
            kind: if i == 0 { VehicleKind::Cav } else { VehicleKind::Hdv },
            position: i as f64 * spacing,
            lane: 0,
            speed: lo + if i % 2 == 0 { 1.0 } else { -1.0 },
            length,
            idm,
            accel_noise_sd: 0.0,
            maneuver: Maneuver::None,
            cumulative_distance: 0.0,
            lc_cooldown: 0.0,
        })
        .collect();
    let lane_change = LaneChangeParams {
        enabled: false,
        ..LaneChangeParams::default()
    };
    let mut world = WorldState::from_vehicles(track, lane_change, vehicles, 0).unwrap();
    let mut collisions = 0;
    let mut samples = Vec::new();
    for t in 1..=10_000 {
        collisions += world.step(Action::KeepLane).collisions.len();
        if t % 100 == 0 {
            samples.push(speed_variance(&world));
        }
    }
    // After the first 1000 steps the variance must not grow until it reaches round-off level.
    const FLOOR: f64 = 1e-12;
    let settled = &samples[10..];
    let monotone = settled.windows(2).all(|w| w[1] <= w[0] || w[1] <= FLOOR);
    let elapsed = start.elapsed();
    outcome(
        collisions == 0 && monotone && elapsed < Duration::from_secs(5),
        format!(
            "v_eq {lo:.3} m/s, collisions {collisions}, variance {:.2e} -> {:.2e}, monotone {monotone}, {elapsed:.2?}",
            samples[0],
            samples[samples.len() - 1]
        ),
    )
}

fn reward_accounting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let w = RewardWeights {
            w1: rng.random_range(0.0..3.0),
            w2: rng.random_range(0.0..3.0),
            w3: rng.random_range(0.0..3.0),
            w4: rng.random_range(0.0..3.0),
            destination_bonus: rng.random_range(0.0..500.0),
            collision_penalty: rng.random_range(0.0..500.0),
            lane_change_penalty: rng.random_range(0.0..5.0),
        };
        let events = RewardEvents {
            loop_completed: rng.random_bool(0.5),
            collided: rng.random_bool(0.5),
            lane_change_initiated: rng.random_bool(0.5),
        };
        let v_max = rng.random_range(10.0..60.0);
        let v = rng.random_range(0.0..v_max);
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        let expected = w.w1 * (v / v_max) + w.w2 * w.destination_bonus * ind(events.loop_completed)
            - w.w3 * w.collision_penalty * ind(events.collided)
            - w.w4 * w.lane_change_penalty * ind(events.lane_change_initiated);
        let r = compute_reward(events, v, v_max, &w);
        if r.total != expected || r.total != r.speed + r.destination - r.collision - r.lane_change {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of 1000 combinations differ"))
}

fn trend_recovery() -> Outcome {
    let (a, b, c) = (1000.0, 400.0, 74.0);
    let points: Vec<(f64, f64)> = default_sweep_ranges().into_iter().map(|x| (x, a - b * (-x / c).exp())).collect();
    let t = fit_saturating_trend(&points).unwrap();
    let rel = [(t.a - a) / a, (t.b - b) / b, (t.c - c) / c].map(f64::abs);
    let worst = rel.iter().copied().fold(0.0, f64::max);
    let x = optimal_range(&t, 100.0, 0.1).unwrap();
    outcome(
        worst <= 1e-3 && (x - 270.4).abs() <= 0.5,
        format!("a {:.3} b {:.3} c {:.3} (max rel err {worst:.1e}), x_optimal {x:.2} m", t.a, t.b, t.c),
    )
}

fn checkpoint_round_trip() -> Outcome {
    let mut config = TrainConfig::desk(11);
    config.warmup_steps = 300;
    config.total_steps = 900;
    let mut unbroken = Trainer::new(config.clone()).unwrap();
    unbroken.run().unwrap();

    let ckpt = unbroken.checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let ckpt_exact = loaded == ckpt && loaded.to_json().unwrap() == ckpt.to_json().unwrap();

    let mut first = Trainer::new(config).unwrap();
    first.run_until(600).unwrap();
    let state = dir.path().join("state.json");
    first.save(&state).unwrap();
    let mut resumed = Trainer::load(&state).unwrap();
    resumed.run().unwrap();
    let losses_equal = resumed.losses() == unbroken.losses() && !unbroken.losses().is_empty();
    let final_equal = resumed.checkpoint() == unbroken.checkpoint();
    outcome(
        ckpt_exact && losses_equal && final_equal,
        format!(
            "checkpoint bit-exact {ckpt_exact}, resumed losses identical {losses_equal} ({} updates), final state identical {final_equal}",
            unbroken.losses().len()
        ),
    )
}

/// Desk-scale runs shared by criteria 7 to 10.
struct DeskRun {
    seed: u64,
    trainer: Trainer,
    elapsed: Duration,
}

fn desk_train(seed: u64, pooling: Pooling) -> DeskRun {
    let mut config = TrainConfig::desk(seed);
    config.agent.pooling = pooling;
    let start = Instant::now();
    let mut trainer = Trainer::new(config).unwrap();
    trainer.run().unwrap();
    let elapsed = start.elapsed();
    eprintln!("  trained {pooling:?} seed {seed} in {elapsed:.1?}");
    DeskRun { seed, trainer, elapsed }
}

fn determinism(reference: &DeskRun) -> Outcome {
    let repeat = desk_train(reference.seed, reference.trainer.config.agent.pooling);
    let logs = repeat.trainer.log == reference.trainer.log;
    let ckpt = repeat.trainer.checkpoint() == reference.trainer.checkpoint()
        && repeat.trainer.checkpoint().to_json().unwrap() == reference.trainer.checkpoint().to_json().unwrap();
    outcome(
        logs && ckpt,
        format!(
            "seed {}: loss logs identical {logs} ({} rows), checkpoints identical {ckpt}",
            reference.seed,
            reference.trainer.log.len()
        ),
    )
}

fn learning_progress(runs: &[DeskRun]) -> Outcome {
    let mut beats_baseline = 0;
    let mut beats_untrained = 0;
    let mut rows = Vec::new();
    for run in runs {
        let env = &run.trainer.config.env;
        let pooling = run.trainer.config.agent.pooling;
        let baseline = evaluate(&mut NoLaneChange, env, EVAL_EPISODES, &EVAL_SEEDS).unwrap().mean;
        let untrained = run.trainer.warmup_checkpoint().unwrap();
        let before = evaluate_network(&untrained.online, pooling, env, EVAL_EPISODES, &EVAL_SEEDS).unwrap().mean;
        let after = evaluate_network(&run.trainer.learner.pair.online, pooling, env, EVAL_EPISODES, &EVAL_SEEDS)
            .unwrap()
            .mean;
        beats_baseline += usize::from(after > baseline);
        beats_untrained += usize::from(after > before);
        rows.push(format!(
            "seed {}: trained {after:.1} vs no-lc {baseline:.1} vs untrained {before:.1} ({:.0?})",
            run.seed, run.elapsed
        ));
    }
    outcome(
        beats_baseline >= 2 && beats_untrained == runs.len(),
        format!(
            "beats no-lc {beats_baseline}/3, beats untrained {beats_untrained}/3; {}",
            rows.join("; ")
        ),
    )
}

fn sweep(run: &DeskRun) -> SweepResult {
    let pooling = run.trainer.config.agent.pooling;
    sweep_connectivity(
        &run.trainer.learner.pair.online,
        pooling,
        &run.trainer.config.env,
        &default_sweep_ranges(),
        EVAL_EPISODES,
        &EVAL_SEEDS,
    )
    .unwrap()
}

fn range_direction(sweeps: &[(u64, SweepResult)]) -> Outcome {
    let mut ok = true;
    let mut rows = Vec::new();
    for (seed, s) in sweeps {
        let means = s.means();
        let (lo, hi) = (means[0], means[means.len() - 1]);
        ok &= hi.1 >= lo.1;
        rows.push(format!("seed {seed}: {:.0} m {:.1} -> {:.0} m {:.1}", lo.0, lo.1, hi.0, hi.1));
    }
    outcome(ok, rows.join("; "))
}

/// Spearman correlation of the seed-averaged sweep curve.
fn averaged_spearman(sweeps: &[(u64, SweepResult)]) -> f64 {
    let ranges: Vec<f64> = sweeps[0].1.means().iter().map(|p| p.0).collect();
    let mean: Vec<f64> = (0..ranges.len())
        .map(|i| sweeps.iter().map(|(_, s)| s.points[i].stats.mean).sum::<f64>() / sweeps.len() as f64)
        .collect();
    spearman(&ranges, &mean)
}

fn per_seed_spearman(sweeps: &[(u64, SweepResult)]) -> Vec<String> {
    sweeps
        .iter()
        .map(|(seed, s)| {
            let (x, y): (Vec<f64>, Vec<f64>) = s.means().into_iter().unzip();
            format!("{seed}:{:.2}", spearman(&x, &y))
        })
        .collect()
}

fn sum_model_contrast(weighted: &[(u64, SweepResult)], sum: &[(u64, SweepResult)]) -> Outcome {
    let rho_w = averaged_spearman(weighted);
    let rho_s = averaged_spearman(sum);
    outcome(
        rho_s < rho_w,
        format!(
            "spearman sum {rho_s:.3} vs weighted {rho_w:.3} (per seed sum [{}], weighted [{}])",
            per_seed_spearman(sum).join(" "),
            per_seed_spearman(weighted).join(" ")
        ),
    )
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |k: u32| selected.is_empty() || selected.contains(&k);
    let mut results: Vec<(String, Outcome)> = Vec::new();
    let mut report = |id: &str, name: &str, o: Outcome| {
        println!("{} {id:>3} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id.to_string(), o));
    };

    if wants(1) {
        report("1", "gradient correctness", gradient_check());
    }
    if wants(2) {
        report("2", "adam oracle", adam_oracle());
    }
    if wants(3) {
        report("3", "permutation invariance", permutation_invariance());
    }
    if wants(4) {
        report("4", "normalization property", normalization_property());
    }
    if wants(5) {
        report("5", "weight schemes", weight_schemes());
    }
    if wants(6) {
        report("6", "platoon safety", platoon_safety());
    }
    if wants(9) {
        report("9a", "trend recovery", trend_recovery());
    }
    if wants(11) {
        report("11", "checkpoint round trip", checkpoint_round_trip());
    }
    if wants(12) {
        report("12", "reward accounting", reward_accounting());
    }

    let needs_linear = [7, 8, 9, 10].into_iter().any(wants);
    if needs_linear {
        let linear: Vec<DeskRun> = DESK_SEEDS.iter().map(|&s| desk_train(s, LINEAR)).collect();
        if wants(7) {
            report("7", "determinism", determinism(&linear[0]));
        }
        if wants(8) {
            report("8", "learning progress", learning_progress(&linear));
        }
        if wants(9) || wants(10) {
            let weighted: Vec<(u64, SweepResult)> = linear.iter().map(|r| (r.seed, sweep(r))).collect();
            if wants(9) {
                report("9b", "range direction", range_direction(&weighted));
            }
            if wants(10) {
                let sum: Vec<(u64, SweepResult)> = DESK_SEEDS
                    .iter()
                    .map(|&s| {
                        let run = desk_train(s, Pooling::UnnormalizedSum);
                        (s, sweep(&run))
                    })
                    .collect();
                report("10", "sum model contrast", sum_model_contrast(&weighted, &sum));
            }
        }
    }

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(id, _)| id.as_str()).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
