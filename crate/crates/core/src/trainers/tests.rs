use super::*;
use crate::fisher::FisherDiagonal;
use crate::paramspace::{build_network, Batch, NetworkSpec, OptimizerKind};
use crate::taskdata::{
    make_incremental_stream, synth_gaussian_tasks, GaussianTaskConfig, TaskStream,
};

fn stream(classes: usize, tasks: usize, seed: u64) -> TaskStream {
    let data = synth_gaussian_tasks(&GaussianTaskConfig {
        dim: 2,
        classes,
        clusters_per_class: 1,
        separation: 6.0,
        train_per_class: 40,
        test_per_class: 40,
        seed,
    })
    .unwrap();
    make_incremental_stream(&data, classes / tasks, tasks, seed).unwrap()
}

fn method(archetype: Archetype, use_ivt: bool) -> MethodSpec {
    MethodSpec::new(
        archetype,
        use_ivt,
        ModelSpec {
            hidden_dims: vec![8],
            activation: Activation::Tanh,
        },
        TrainConfig {
            epochs: 6,
            batch_size: 16,
            learning_rate: 0.1,
            seed: 5,
            ivt_interval: 3,
            ..TrainConfig::default()
        },
    )
}

#[test]
fn derive_seed_separates_streams() {
    assert_ne!(derive_seed(1, &[3, 1, 1]), derive_seed(1, &[3, 1, 2]));
    assert_ne!(derive_seed(1, &[3]), derive_seed(2, &[3]));
    assert_eq!(derive_seed(9, &[4, 2]), derive_seed(9, &[4, 2]));
}

#[test]
fn penalty_gradient_matches_finite_differences() {
    let spec = NetworkSpec {
        input_dim: 2,
        hidden_dims: vec![4],
        activation: Activation::Tanh,
        num_classes: 3,
    };
    let p = build_network(&spec, 2).unwrap();
    let n = p.len();
    let anchor = p
        .with_values((0..n).map(|i| (i as f64 * 0.37).sin()).collect())
        .unwrap();
    let fisher = FisherDiagonal::new(
        p.layout().clone(),
        (0..n).map(|i| 0.1 + (i % 5) as f64).collect(),
    )
    .unwrap();
    let pen = AnchorPenalty {
        strength: 0.7,
        fisher: &fisher,
        anchor: &anchor,
    };
    let x = [0.4, -0.3, 1.1, 0.2, -0.8, 0.9];
    let y = [0, 2, 1];
    let batch = Batch::new(2, &x, &y).unwrap();
    let (_, g) = objective_and_grad(&p, batch, None, Some(&pen)).unwrap();
    let h = 1e-5;
    for j in 0..n {
        let mut plus = p.values().to_vec();
        plus[j] += h;
        let mut minus = p.values().to_vec();
        minus[j] -= h;
        let fp = objective_and_grad(&p.with_values(plus).unwrap(), batch, None, Some(&pen))
            .unwrap()
            .0;
        let fm = objective_and_grad(&p.with_values(minus).unwrap(), batch, None, Some(&pen))
            .unwrap()
            .0;
        let fd = (fp - fm) / (2.0 * h);
        let rel = (fd - g.values()[j]).abs() / fd.abs().max(g.values()[j].abs()).max(1e-5);
        assert!(rel < 1e-6, "coordinate {j}: fd {fd} vs {}", g.values()[j]);
    }
}

#[test]
fn one_task_stream_gives_one_by_one_matrix() {
    let s = stream(2, 1, 3);
    let rec = run_sequence(&s, &method(Archetype::Naive, false)).unwrap();
    assert_eq!(rec.accuracy.num_tasks(), 1);
    assert_eq!(rec.checkpoints.len(), 1);
}

#[test]
fn ivt_leaves_task_one_untouched() {
    let s = stream(4, 2, 3);
    let mut a = Trainer::new(&s, method(Archetype::QuadReg, false)).unwrap();
    let mut b = Trainer::new(&s, method(Archetype::QuadReg, true)).unwrap();
    a.train_next().unwrap();
    b.train_next().unwrap();
    assert_eq!(a.state().params, b.state().params);
    assert!(b.record().ivt_log.is_empty());
    b.train_next().unwrap();
    let fired: Vec<usize> = b.record().ivt_log.iter().map(|f| f.epoch).collect();
    assert_eq!(fired, vec![3, 6]);
    for f in &b.record().ivt_log {
        assert!((0.5..=1.0).contains(&f.mean_coefficient));
    }
}

#[test]
fn runs_are_deterministic() {
    let s = stream(4, 2, 11);
    for arch in [
        Archetype::Naive,
        Archetype::QuadRegReplay,
        Archetype::FullReplayOracle,
        Archetype::JointMtl,
    ] {
        let mut m = method(arch, true);
        m.train.regularizer_strength = 1.0;
        let a = run_sequence(&s, &m).unwrap();
        let b = run_sequence(&s, &m).unwrap();
        assert_eq!(a.accuracy, b.accuracy);
        assert_eq!(a.checkpoints, b.checkpoints);
    }
}

#[test]
fn huge_penalty_pins_shared_coordinates() {
    let s = stream(4, 2, 7);
    let mut m = method(Archetype::QuadReg, false);
    m.train.optimizer = OptimizerKind::Adam;
    m.train.learning_rate = 1e-4;
    m.train.regularizer_strength = 1e9;
    let mut tr = Trainer::new(&s, m).unwrap();
    tr.train_next().unwrap();
    let anchor = tr.state().params.clone().unwrap();
    let prior = tr.state().ledger.cumulative().unwrap().clone();
    tr.train_next().unwrap();
    let after = tr.state().params.clone().unwrap();
    let lifted = anchor.reconcile_to(&after).unwrap();
    let prior = prior.pad_to(after.layout()).unwrap();
    let mut checked = 0;
    for j in 0..after.len() {
        if prior.values()[j] > 1e-8 {
            checked += 1;
            assert!(
                (after.values()[j] - lifted.values()[j]).abs() < 1e-3,
                "coordinate {j}"
            );
        }
    }
    assert!(checked > 0);
}

#[test]
fn naive_fine_tuning_forgets() {
    let s = stream(4, 2, 21);
    let mut m = method(Archetype::Naive, false);
    m.train.epochs = 20;
    let rec = run_sequence(&s, &m).unwrap();
    let before = rec.accuracy.get(1, 1).unwrap();
    let after = rec.accuracy.get(2, 1).unwrap();
    assert!(before - after >= 0.20, "task 1 went {before} -> {after}");
}

#[test]
fn oracle_retains_at_least_as_well_as_naive() {
    let s = stream(4, 2, 21);
    let mut naive = method(Archetype::Naive, false);
    naive.train.epochs = 20;
    let mut oracle = naive.clone();
    oracle.archetype = Archetype::FullReplayOracle;
    let a = run_sequence(&s, &naive).unwrap();
    let b = run_sequence(&s, &oracle).unwrap();
    assert!(b.accuracy.get(2, 1).unwrap() >= a.accuracy.get(2, 1).unwrap());
    let joint = train_joint_mtl(&s, &oracle).unwrap();
    assert_ne!(&joint, &b.checkpoints[1].params);
}

#[test]
fn oracle_and_joint_match_plain_training_on_one_task() {
    let s = stream(2, 1, 3);
    let plain = run_sequence(&s, &method(Archetype::Naive, false)).unwrap();
    let oracle = run_sequence(&s, &method(Archetype::FullReplayOracle, false)).unwrap();
    let joint = train_joint_mtl(&s, &method(Archetype::Naive, false)).unwrap();
    assert_eq!(plain.checkpoints[0].params, oracle.checkpoints[0].params);
    assert_eq!(plain.checkpoints[0].params.values(), joint.values());
}

#[test]
fn replay_respects_budget() {
    let s = stream(6, 3, 2);
    let mut m = method(Archetype::Replay, false);
    m.memory = Some(crate::taskdata::MemoryConfig {
        per_class_budget: 5,
        policy: crate::taskdata::MemoryPolicy::Herding,
    });
    let mut tr = Trainer::new(&s, m).unwrap();
    while !tr.is_finished() {
        tr.train_next().unwrap();
        let mem = tr.state().memory.as_ref().unwrap();
        assert!(mem.store().values().all(|v| v.len() <= 5));
        assert_eq!(mem.store().len(), 2 * tr.state().completed);
    }
}

#[test]
fn failure_keeps_completed_tasks() {
    let s = stream(4, 2, 3);
    let mut m = method(Archetype::Naive, false);
    // Huge steps overflow during the second task at the latest.
    m.train.learning_rate = 1e300;
    let err = run_sequence(&s, &m).unwrap_err();
    assert_eq!(
        err.record.checkpoints.len(),
        err.record.accuracy.num_tasks()
    );
    assert!(matches!(err.error, crate::Error::InTask { .. }));
}

#[test]
fn invalid_specs_rejected() {
    let mut m = method(Archetype::Replay, false);
    m.head_mask = HeadMask::Current;
    assert!(m.validate().is_err());
    let mut m = method(Archetype::Naive, false);
    m.train.epochs = 0;
    assert!(m.validate().is_err());
}
