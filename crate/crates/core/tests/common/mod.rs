//! Fixtures shared by the integration test targets.

#![allow(dead_code)]

use ivtlab::paramspace::{
    build_network_for_classes, expand_head, loss_and_grad, sgd_step, Activation, HeadInit,
    NetworkSpec, OptimizerKind, OptimizerState, ParamVector, TrainConfig,
};
use ivtlab::taskdata::{
    make_incremental_stream, synth_gaussian_tasks, GaussianTaskConfig, TaskStream,
};
use ivtlab::trainers::{derive_seed, Archetype, MethodSpec, ModelSpec};

/// Two tasks of two classes with three examples each, so batches of two
/// give three batches per epoch.
pub fn micro_stream() -> TaskStream {
    let data = synth_gaussian_tasks(&GaussianTaskConfig {
        dim: 2,
        classes: 4,
        clusters_per_class: 1,
        separation: 3.0,
        train_per_class: 3,
        test_per_class: 3,
        seed: 17,
    })
    .unwrap();
    make_incremental_stream(&data, 2, 2, 5).unwrap()
}

pub fn micro_method() -> MethodSpec {
    MethodSpec::new(
        Archetype::QuadReg,
        true,
        ModelSpec {
            hidden_dims: vec![3],
            activation: Activation::Tanh,
        },
        TrainConfig {
            epochs: 2,
            batch_size: 2,
            learning_rate: 0.3,
            momentum: 0.5,
            seed: 42,
            ivt_interval: 1,
            regularizer_strength: 2.5,
            optimizer: OptimizerKind::Sgd,
            shuffle: false,
        },
    )
}

pub struct Walk {
    pub after_task1: ParamVector,
    pub after_task2: ParamVector,
    pub fisher_task1: Vec<f64>,
    pub fisher_task2: Vec<f64>,
    /// Parameters right after each transform firing.
    pub after_each_transform: Vec<Vec<f64>>,
}

/// Steps the training procedure by hand from the network primitives:
/// batch gradients, squared-gradient Fisher averaged over batches, the
/// anchor penalty, momentum SGD, and the per-coordinate pull towards the
/// anchor after every epoch of the second task.
pub fn hand_walk(stream: &TaskStream, method: &MethodSpec) -> Walk {
    let cfg = &method.train;
    let spec = |n: usize| NetworkSpec {
        input_dim: stream.dim(),
        hidden_dims: method.model.hidden_dims.clone(),
        activation: method.model.activation,
        num_classes: n,
    };

    let run_epochs = |p: &mut ParamVector,
                      data: &ivtlab::taskdata::LabeledDataset,
                      mask: &[usize],
                      anchor: Option<(&ParamVector, &[f64])>,
                      transforms: &mut Vec<Vec<f64>>|
     -> Vec<f64> {
        let mut velocity = OptimizerState::new(OptimizerKind::Sgd, p.len());
        let mut fisher = Vec::new();
        for _epoch in 0..cfg.epochs {
            let mut sq = vec![0.0; p.len()];
            let mut batches = 0usize;
            let idx: Vec<usize> = (0..data.len()).collect();
            for chunk in idx.chunks(cfg.batch_size) {
                let part = data.gather(chunk);
                let (_, g) = loss_and_grad(p, part.batch(), Some(mask)).unwrap();
                let mut g = g.values().to_vec();
                for (s, v) in sq.iter_mut().zip(&g) {
                    *s += v * v;
                }
                batches += 1;
                if let Some((a, prior)) = anchor {
                    for i in 0..g.len() {
                        g[i] +=
                            cfg.regularizer_strength * (prior[i] * (p.values()[i] - a.values()[i]));
                    }
                }
                let gv = ivtlab::paramspace::GradientVector::new(p.layout().clone(), g).unwrap();
                sgd_step(p, &gv, cfg.learning_rate, cfg.momentum, &mut velocity).unwrap();
            }
            fisher = sq.iter().map(|s| s / batches as f64).collect();
            if let Some((a, prior)) = anchor {
                let moved: Vec<f64> = (0..p.len())
                    .map(|i| {
                        let (x, ai, pf, ff) = (p.values()[i], a.values()[i], prior[i], fisher[i]);
                        let c = if pf > 0.0 {
                            (pf + ff) / (2.0 * pf + ff)
                        } else {
                            1.0
                        };
                        if c == 1.0 {
                            x
                        } else {
                            (ai + c * (x - ai)).clamp(ai.min(x), ai.max(x))
                        }
                    })
                    .collect();
                *p = p.with_values(moved).unwrap();
                transforms.push(p.values().to_vec());
                velocity = OptimizerState::new(OptimizerKind::Sgd, p.len());
            }
        }
        fisher
    };

    let t1 = &stream.tasks[0];
    let mut p = build_network_for_classes(
        &spec(t1.class_ids.len()),
        &t1.class_ids,
        derive_seed(cfg.seed, &[1]),
    )
    .unwrap();
    let mut transforms = Vec::new();
    let fisher_task1 = run_epochs(&mut p, &t1.train, &t1.class_ids, None, &mut transforms);
    let after_task1 = p.clone();

    let t2 = &stream.tasks[1];
    let mut q = expand_head(
        &p,
        &t2.class_ids,
        HeadInit::Zeros,
        derive_seed(cfg.seed, &[2, 2]),
    )
    .unwrap();
    // With zero-initialized columns the anchor is the freshly grown network.
    let anchor = q.clone();
    let prior = p
        .layout()
        .embed(&fisher_task1, q.layout(), |_| {
            Ok(vec![0.0; spec(0).feature_dim() + 1])
        })
        .unwrap();
    let mask: Vec<usize> = stream.classes_through(2);
    let fisher_task2 = run_epochs(
        &mut q,
        &t2.train,
        &mask,
        Some((&anchor, &prior)),
        &mut transforms,
    );
    Walk {
        after_task1,
        after_task2: q,
        fisher_task1,
        fisher_task2,
        after_each_transform: transforms,
    }
}

/// The separable three-task benchmark: six 2-D Gaussian classes, two per
/// task. Dataset, class order and training all follow `seed`.
pub fn benchmark_stream(seed: u64) -> TaskStream {
    let data = synth_gaussian_tasks(&GaussianTaskConfig {
        dim: 2,
        classes: 6,
        clusters_per_class: 1,
        separation: 4.0,
        train_per_class: 100,
        test_per_class: 100,
        seed,
    })
    .unwrap();
    make_incremental_stream(&data, 2, 3, seed).unwrap()
}

pub fn benchmark_method(archetype: Archetype, use_ivt: bool, seed: u64) -> MethodSpec {
    MethodSpec::new(
        archetype,
        use_ivt,
        ModelSpec {
            hidden_dims: vec![32],
            activation: Activation::Tanh,
        },
        TrainConfig {
            epochs: 60,
            batch_size: 32,
            learning_rate: 0.05,
            seed,
            ivt_interval: 10,
            regularizer_strength: 100.0,
            ..TrainConfig::default()
        },
    )
}
