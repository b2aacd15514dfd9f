//! Acceptance suite: one PASS/FAIL line per criterion, then a single
//! assertion that every criterion passed.

mod common;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ivtlab::expcli::{cmd_lmc, cmd_run, LmcOptions, RunOptions};
use ivtlab::fisher::{FisherDiagonal, FisherLedger};
use ivtlab::geometry::{lmc_scan, EvalSet};
use ivtlab::ivt::{apply_transform, build_transform, coefficient};
use ivtlab::metrics::{
    average_accuracy, forgetting_measure, last_accuracy, metrics_report, AccuracyMatrix,
};
use ivtlab::paramspace::{
    build_network, build_network_for_classes, expand_head, Activation, Batch, HeadInit,
    NetworkSpec, ParamVector,
};
use ivtlab::quadlab::{
    forgetting_and_bound, proposition1_gap, proposition1_predict, random_psd, solve_incremental,
    solve_oracle, GeneratorConfig, QuadraticTask,
};
use ivtlab::trainers::{objective_and_grad, run_sequence, AnchorPenalty, Archetype};

const EXACTNESS_TOL: f64 = 1e-10;
const EXACTNESS_BUDGET: Duration = Duration::from_secs(5);
const SCALAR_TOL: f64 = 1e-12;
const MIDPOINT_TOL: f64 = 1e-12;
/// Relative slack on the forgetting bound, covering rounding only.
const BOUND_SLACK: f64 = 1e-12;
const BOUND_EQUALITY_TOL: f64 = 1e-9;
const GRADIENT_TOL: f64 = 1e-5;
/// Floor on the finite-difference denominator so near-zero partials are
/// judged absolutely.
const GRADIENT_FLOOR: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;
const BARRIER_DROP: f64 = 0.10;
const ORACLE_PATH_DROP: f64 = 0.05;
const BENCHMARK_BUDGET: Duration = Duration::from_secs(120);
const SEEDS: [u64; 3] = [0, 1, 2];

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn scalar_task(a: f64, mu: f64) -> QuadraticTask {
    QuadraticTask::new(DMatrix::from_element(1, 1, a), DVector::from_element(1, mu)).unwrap()
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn c1_two_task_exactness() -> Check {
    let start = Instant::now();
    let trials =
        proposition1_gap(&GeneratorConfig::default(), 2, 100, 1).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let max = trials.iter().map(|t| t.gap_full).fold(0.0, f64::max);
    let max_dim = trials.iter().map(|t| t.dim).max().unwrap_or(0);
    ensure(
        trials.len() == 100 && max_dim <= 20 && max <= EXACTNESS_TOL && elapsed < EXACTNESS_BUDGET,
        format!(
            "100 instances, dim <= {max_dim}, max gap {max:e} <= {EXACTNESS_TOL:e}, {elapsed:.2?}"
        ),
    )
}

fn c2_scalar_example() -> Check {
    let (t1, t2) = (scalar_task(1.0, 0.0), scalar_task(1.0, 1.0));
    let anchor = DVector::from_element(1, 0.0);
    let h1 = DMatrix::from_element(1, 1, 1.0);
    let theta2 = solve_incremental(&t2, &anchor, &h1).map_err(|e| e.to_string())?[0];
    let star2 = solve_oracle(&[t1, t2], &anchor, &h1).map_err(|e| e.to_string())?[0];
    let c = coefficient(1.0, 1.0);

    // The same numbers coordinate-wise through the network-parameter path.
    let spec = NetworkSpec {
        input_dim: 1,
        hidden_dims: vec![],
        activation: Activation::Relu,
        num_classes: 1,
    };
    let p = build_network(&spec, 0).map_err(|e| e.to_string())?;
    let anchor_p = p.with_values(vec![0.0; p.len()]).unwrap();
    let current = p.with_values(vec![theta2; p.len()]).unwrap();
    let ones = FisherDiagonal::new(p.layout().clone(), vec![1.0; p.len()]).unwrap();
    let t = build_transform(&ones, &ones, &anchor_p).map_err(|e| e.to_string())?;
    let moved = apply_transform(&t, &current).map_err(|e| e.to_string())?;
    let applied_err = moved
        .values()
        .iter()
        .map(|v| (v - 1.0 / 3.0).abs())
        .fold(0.0, f64::max);

    let ok = (theta2 - 0.5).abs() <= SCALAR_TOL
        && (star2 - 1.0 / 3.0).abs() <= SCALAR_TOL
        && (c - 2.0 / 3.0).abs() <= SCALAR_TOL
        && applied_err <= SCALAR_TOL;
    ensure(
        ok,
        format!("theta_2 {theta2}, oracle {star2}, coefficient {c}, transformed max error {applied_err:e}"),
    )
}

fn c3_midpoint() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=20);
        let h = random_psd(&mut rng, n, 1e-6);
        let anchor = normal_vec(&mut rng, n);
        let theta = normal_vec(&mut rng, n);
        let pred = proposition1_predict(&anchor, &theta, &h, &h).map_err(|e| e.to_string())?;
        let mid = (&theta + &anchor) * 0.5;
        worst = worst.max((pred - mid).amax());
    }
    ensure(
        worst <= MIDPOINT_TOL,
        format!("200 instances, max deviation {worst:e} <= {MIDPOINT_TOL:e}"),
    )
}

fn c4_forgetting_bound() -> Check {
    let mut worst_ratio = 0.0f64;
    let mut worst_eq = 0.0f64;
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.random_range(1..=20);
        let h = random_psd(&mut rng, n, 1e-6);
        let theta1 = normal_vec(&mut rng, n);
        let theta = normal_vec(&mut rng, n);
        let r = forgetting_and_bound(&h, &theta, &theta1, 0.0).map_err(|e| e.to_string())?;
        worst_ratio = worst_ratio.max(r.forgetting / (r.bound.bound_value * (1.0 + BOUND_SLACK)));
        let along = &theta1 + DVector::from_vec(r.bound.attained_direction.clone()) * 1.7;
        let e = forgetting_and_bound(&h, &along, &theta1, 0.0).map_err(|e| e.to_string())?;
        worst_eq = worst_eq.max((e.forgetting - e.bound.bound_value).abs());
    }
    ensure(
        worst_ratio <= 1.0 && worst_eq <= BOUND_EQUALITY_TOL,
        format!("50 instances, max forgetting/bound {worst_ratio:.15}, top-eigenvector gap {worst_eq:e}"),
    )
}

fn c5_gradients() -> Check {
    let mut worst = 0.0f64;
    let mut largest = 0usize;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = NetworkSpec {
            input_dim: rng.random_range(1..=4),
            hidden_dims: (0..rng.random_range(0..=2))
                .map(|_| rng.random_range(2..=6))
                .collect(),
            activation: if seed % 2 == 0 {
                Activation::Tanh
            } else {
                Activation::Relu
            },
            num_classes: rng.random_range(2..=4),
        };
        let p = build_network(&spec, seed).map_err(|e| e.to_string())?;
        let n = p.len();
        largest = largest.max(n);
        if n > 200 {
            return Err(format!("seed {seed}: {n} parameters"));
        }
        let anchor = p
            .with_values(
                (0..n)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            )
            .unwrap();
        let fisher = FisherDiagonal::new(
            p.layout().clone(),
            (0..n).map(|_| rng.random_range(0.0..2.0)).collect(),
        )
        .unwrap();
        let pen = AnchorPenalty {
            strength: rng.random_range(0.1..5.0),
            fisher: &fisher,
            anchor: &anchor,
        };
        let rows = 5;
        let x: Vec<f64> = (0..rows * spec.input_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let y: Vec<usize> = (0..rows)
            .map(|_| rng.random_range(0..spec.num_classes))
            .collect();
        let batch = Batch::new(spec.input_dim, &x, &y).unwrap();
        let (_, g) = objective_and_grad(&p, batch, None, Some(&pen)).map_err(|e| e.to_string())?;
        let f = |v: Vec<f64>| {
            objective_and_grad(&p.with_values(v).unwrap(), batch, None, Some(&pen))
                .unwrap()
                .0
        };
        for j in 0..n {
            let mut plus = p.values().to_vec();
            plus[j] += FD_STEP;
            let mut minus = p.values().to_vec();
            minus[j] -= FD_STEP;
            let fd = (f(plus) - f(minus)) / (2.0 * FD_STEP);
            let an = g.values()[j];
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(GRADIENT_FLOOR));
        }
    }
    ensure(
        worst <= GRADIENT_TOL,
        format!("20 networks up to {largest} parameters, max relative error {worst:e} <= {GRADIENT_TOL:e}"),
    )
}

fn c6_coefficients() -> Check {
    let mut checked = 0usize;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = NetworkSpec {
            input_dim: 2,
            hidden_dims: vec![rng.random_range(1..=4)],
            activation: Activation::Tanh,
            num_classes: 2,
        };
        let p1 = build_network_for_classes(&spec, &[0, 1], seed).unwrap();
        let p2 = expand_head(&p1, &[2, 3], HeadInit::Zeros, seed).unwrap();
        // Some coordinates with zero prior curvature besides the new head.
        let draw = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if rng.random_bool(0.3) {
                        0.0
                    } else {
                        rng.random_range(0.0..3.0)
                    }
                })
                .collect()
        };
        let mut ledger = FisherLedger::new();
        ledger
            .commit_task(
                1,
                FisherDiagonal::new(p1.layout().clone(), draw(&mut rng, p1.len())).unwrap(),
            )
            .unwrap();
        let prior = ledger.cumulative_for(p2.layout()).unwrap();
        let fresh = FisherDiagonal::new(p2.layout().clone(), draw(&mut rng, p2.len())).unwrap();
        let anchor = p2
            .with_values(
                (0..p2.len())
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            )
            .unwrap();
        let current: ParamVector = p2
            .with_values(
                (0..p2.len())
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            )
            .unwrap();
        let t = build_transform(&prior, &fresh, &anchor).map_err(|e| e.to_string())?;
        let moved = apply_transform(&t, &current).map_err(|e| e.to_string())?;
        for i in 0..p2.len() {
            let (c, pf) = (t.coefficients()[i], prior.values()[i]);
            let ok_c = if pf > 0.0 {
                (0.5..=1.0).contains(&c)
            } else {
                c == 1.0
            };
            let (a, x, y) = (anchor.values()[i], current.values()[i], moved.values()[i]);
            let ok_seg = a.min(x) <= y && y <= a.max(x);
            if !(ok_c && ok_seg) {
                return Err(format!(
                    "seed {seed} coordinate {i}: prior {pf}, coefficient {c}, {a} -> {y} -> {x}"
                ));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} coordinates over 100 ledgers: coefficients in [1/2, 1], 1 at zero prior, all on segment"))
}

fn c7_golden_trace() -> Check {
    let stream = common::micro_stream();
    let method = common::micro_method();
    let walk = common::hand_walk(&stream, &method);
    let rec = run_sequence(&stream, &method).map_err(|e| e.to_string())?;
    let same = |a: &[f64], b: &[f64]| {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
    };
    let ok = same(
        rec.checkpoints[0].params.values(),
        walk.after_task1.values(),
    ) && same(
        rec.checkpoints[1].params.values(),
        walk.after_task2.values(),
    ) && same(
        rec.checkpoints[1].ledger.per_task()[&2].values(),
        &walk.fisher_task2,
    ) && rec.ivt_log.len() == walk.after_each_transform.len();
    ensure(
        ok,
        format!(
            "2 epochs x 3 batches per task, {} transform firings, {} parameters bit-identical",
            rec.ivt_log.len(),
            walk.after_task2.len()
        ),
    )
}

fn task1_path(seed: u64, archetype: Archetype) -> Result<(f64, f64, f64), String> {
    let stream = common::benchmark_stream(seed);
    let rec = run_sequence(&stream, &common::benchmark_method(archetype, false, seed))
        .map_err(|e| e.to_string())?;
    let set = EvalSet {
        name: "task1".into(),
        data: stream.tasks[0].test.clone(),
        scope: stream.classes_through(2),
    };
    let (anchor, target) = (&rec.checkpoints[0].params, &rec.checkpoints[1].params);
    let scan =
        lmc_scan(anchor, target, None, std::slice::from_ref(&set)).map_err(|e| e.to_string())?;
    let mid = lmc_scan(
        anchor,
        target,
        Some(vec![scan.lambda_hat / 2.0]),
        std::slice::from_ref(&set),
    )
    .map_err(|e| e.to_string())?;
    let at0 = scan.points[0].evals[0].accuracy;
    let min = scan
        .points
        .iter()
        .map(|p| p.evals[0].accuracy)
        .fold(f64::INFINITY, f64::min);
    let mid = mid
        .point(scan.lambda_hat / 2.0)
        .ok_or("midpoint missing from scan")?;
    Ok((at0, mid.evals[0].accuracy, min))
}

fn c8_interpolation() -> Check {
    let mut naive = Vec::new();
    let mut worst_oracle_drop = f64::NEG_INFINITY;
    for seed in SEEDS {
        let (a0, mid, _) = task1_path(seed, Archetype::Naive)?;
        naive.push((a0, mid));
        let (o0, _, omin) = task1_path(seed, Archetype::FullReplayOracle)?;
        worst_oracle_drop = worst_oracle_drop.max(o0 - omin);
    }
    let n = naive.len() as f64;
    let anchor_mean = naive.iter().map(|p| p.0).sum::<f64>() / n;
    let mid_mean = naive.iter().map(|p| p.1).sum::<f64>() / n;
    ensure(
        mid_mean <= anchor_mean - BARRIER_DROP && worst_oracle_drop <= ORACLE_PATH_DROP,
        format!(
            "naive task-1 midpoint {:.3} vs anchor {:.3} (per seed {:?}); oracle worst drop {:.3} <= {ORACLE_PATH_DROP}",
            mid_mean,
            anchor_mean,
            naive.iter().map(|p| format!("{:.3}/{:.3}", p.1, p.0)).collect::<Vec<_>>(),
            worst_oracle_drop
        ),
    )
}

fn c9_ivt_benefit() -> Check {
    let start = Instant::now();
    let mut sums = [[0.0f64; 2]; 2];
    for seed in SEEDS {
        let stream = common::benchmark_stream(seed);
        for (k, use_ivt) in [false, true].into_iter().enumerate() {
            let rec = run_sequence(
                &stream,
                &common::benchmark_method(Archetype::QuadReg, use_ivt, seed),
            )
            .map_err(|e| e.to_string())?;
            let r = metrics_report(&rec.accuracy, Default::default()).map_err(|e| e.to_string())?;
            sums[k][0] += r.aa;
            sums[k][1] += r.fm.expect("three tasks");
        }
    }
    let elapsed = start.elapsed();
    let n = SEEDS.len() as f64;
    let (aa0, fm0, aa1, fm1) = (
        sums[0][0] / n,
        sums[0][1] / n,
        sums[1][0] / n,
        sums[1][1] / n,
    );
    ensure(
        fm1 < fm0 && aa1 > aa0 && elapsed < BENCHMARK_BUDGET,
        format!(
            "AA {aa0:.4} -> {aa1:.4}, FM {fm0:.4} -> {fm1:.4} with the transform, {elapsed:.2?}"
        ),
    )
}

fn c10_metrics() -> Check {
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.random_range(2..=8);
        let rows: Vec<Vec<f64>> = (1..=t)
            .map(|k| (0..k).map(|_| rng.random::<f64>()).collect())
            .collect();
        let overall: Vec<f64> = (0..t).map(|_| rng.random::<f64>()).collect();
        let m =
            AccuracyMatrix::from_rows(rows.clone(), overall.clone()).map_err(|e| e.to_string())?;

        let mut aa = 0.0;
        for v in &overall {
            aa += v;
        }
        aa /= t as f64;
        let la = overall[t - 1];
        let mut fm = 0.0;
        for i in 0..t - 1 {
            let mut best = f64::NEG_INFINITY;
            for row in &rows[i..t - 1] {
                best = best.max(row[i]);
            }
            fm += best - rows[t - 1][i];
        }
        fm /= (t - 1) as f64;
        let got = (
            average_accuracy(&m).unwrap(),
            last_accuracy(&m).unwrap(),
            forgetting_measure(&m).unwrap(),
        );
        if got != (aa, la, fm) {
            return Err(format!(
                "seed {seed}: {got:?} vs brute force {:?}",
                (aa, la, fm)
            ));
        }
    }
    let hand = AccuracyMatrix::from_rows(vec![vec![0.8], vec![0.7, 0.9]], vec![0.8, 0.8]).unwrap();
    let fm = forgetting_measure(&hand).unwrap();
    ensure(
        (fm - 0.1).abs() <= 1e-12,
        format!("200 matrices exact; 0.8 -> 0.7 gives FM {fm:.12}"),
    )
}

const DETERMINISM_CONFIG: &str = r#"
name = "determinism"
seeds = [0, 1]

[dataset]
kind = "gaussian"
dim = 2
classes = 6
separation = 4.0
train_per_class = 30
test_per_class = 30

[stream]
base_classes = 2
num_tasks = 3

[method]
archetype = "quad_reg_replay"
use_ivt = true

[method.model]
hidden_dims = [16]
activation = "tanh"

[method.train]
epochs = 6
batch_size = 16
learning_rate = 0.05
ivt_interval = 3
regularizer_strength = 10.0
"#;

fn c11_determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let cfg = dir.join("det.toml");
    std::fs::write(&cfg, DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    let mut accuracy = Vec::new();
    let mut scans = Vec::new();
    for round in 0..2 {
        let out = dir.join("bundle");
        cmd_run(&RunOptions {
            config: cfg.clone(),
            force: true,
            seed: None,
            out: Some(out.clone()),
            output_root: dir.to_path_buf(),
        })
        .map_err(|e| e.to_string())?;
        let mut files = Vec::new();
        for seed in [0, 1] {
            files.push(
                std::fs::read(out.join(format!("seed-{seed}/accuracy.csv")))
                    .map_err(|e| e.to_string())?,
            );
        }
        accuracy.push(files);
        let (scan_dir, _) = cmd_lmc(&LmcOptions {
            config: cfg.clone(),
            anchor: out.join("seed-0/checkpoints/task1.ckpt"),
            target: out.join("seed-0/checkpoints/task3.ckpt"),
            out: Some(dir.join(format!("scan{round}"))),
            output_root: dir.to_path_buf(),
            force: true,
        })
        .map_err(|e| e.to_string())?;
        scans.push(std::fs::read(scan_dir.join("scan.csv")).map_err(|e| e.to_string())?);
    }
    ensure(
        accuracy[0] == accuracy[1] && scans[0] == scans[1],
        format!(
            "2 invocations: {} accuracy CSVs and a {}-byte scan CSV byte-identical",
            accuracy[0].len(),
            scans[0].len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 11] = [
        (
            "two-task prediction equals the oracle",
            c1_two_task_exactness,
        ),
        ("scalar worked example", c2_scalar_example),
        ("equal curvatures give the midpoint", c3_midpoint),
        ("spectral forgetting bound", c4_forgetting_bound),
        ("penalized gradients match finite differences", c5_gradients),
        ("transform coefficients and segments", c6_coefficients),
        ("golden trace of the training loop", c7_golden_trace),
        (
            "interpolation barrier and stable oracle path",
            c8_interpolation,
        ),
        ("directional benefit of the transform", c9_ivt_benefit),
        ("metric formulas", c10_metrics),
        ("end-to-end determinism", c11_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail}", i + 1),
            Err(detail) => {
                println!("FAIL [{:>2}] {name}: {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
