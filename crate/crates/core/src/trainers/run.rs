use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::AnchorPenalty;
use super::{Archetype, HeadMask, IvtFisherSource, MethodSpec};
use crate::error::{Error, Result};
use crate::fisher::{BatchGradient, FisherAccumulator, FisherDiagonal, FisherLedger, FisherMode};
use crate::ivt::{apply_transform, build_transform, schedule_hook};
use crate::metrics::AccuracyMatrix;
use crate::paramspace::{
    build_network_for_classes, evaluate_accuracy, expand_head, features, loss_and_grad,
    per_example_grads, ClassId, NetworkSpec, OptimizerState, ParamVector,
};
use crate::taskdata::{LabeledDataset, ReplayMemory, StreamManifest, TaskStream};

const TAG_INIT: u64 = 1;
const TAG_HEAD: u64 = 2;
const TAG_SHUFFLE: u64 = 3;
const TAG_MEMORY: u64 = 4;

/// Mixes `parts` into `base` with the splitmix64 finalizer, giving
/// independent streams for each purpose, task and epoch.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// One application of the increment transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvtFiring {
    pub task: usize,
    pub epoch: usize,
    pub mean_coefficient: f64,
    /// Euclidean length of the jump the transform made.
    pub displacement_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCheckpoint {
    pub task_id: usize,
    pub params: ParamVector,
    pub ledger: FisherLedger,
    pub optimizer: OptimizerState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: MethodSpec,
    pub stream: StreamManifest,
    pub checkpoints: Vec<TaskCheckpoint>,
    pub accuracy: AccuracyMatrix,
    pub wall_clock_secs: Vec<f64>,
    pub ivt_log: Vec<IvtFiring>,
    /// Set by callers that run from a config file.
    pub config_digest: Option<String>,
}

/// Error from a sequence run, with everything completed before it.
#[derive(Debug)]
pub struct RunFailure {
    pub record: RunRecord,
    pub error: Error,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} completed task(s))",
            self.error,
            self.record.checkpoints.len()
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Box<RunFailure>> for Error {
    fn from(f: Box<RunFailure>) -> Error {
        f.error
    }
}

/// Everything carried from one task to the next.
#[derive(Clone, Debug, Default)]
pub struct LearnerState {
    pub params: Option<ParamVector>,
    pub ledger: FisherLedger,
    pub optimizer: Option<OptimizerState>,
    pub memory: Option<ReplayMemory>,
    pub completed: usize,
}

/// Steps a method through a stream one task at a time.
pub struct Trainer<'s> {
    stream: &'s TaskStream,
    method: MethodSpec,
    state: LearnerState,
    record: RunRecord,
}

impl<'s> Trainer<'s> {
    pub fn new(stream: &'s TaskStream, method: MethodSpec) -> Result<Self> {
        method.validate()?;
        if stream.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let memory = method
            .effective_memory()
            .map(|m| {
                ReplayMemory::new(
                    &m,
                    stream.dim(),
                    derive_seed(method.train.seed, &[TAG_MEMORY]),
                )
            })
            .transpose()?;
        let record = RunRecord {
            method: method.clone(),
            stream: stream.manifest(),
            checkpoints: Vec::new(),
            accuracy: AccuracyMatrix::new(),
            wall_clock_secs: Vec::new(),
            ivt_log: Vec::new(),
            config_digest: None,
        };
        Ok(Self {
            stream,
            method,
            state: LearnerState {
                memory,
                ..LearnerState::default()
            },
            record,
        })
    }

    pub fn state(&self) -> &LearnerState {
        &self.state
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn into_record(self) -> RunRecord {
        self.record
    }

    pub fn is_finished(&self) -> bool {
        self.state.completed == self.stream.len()
    }

    /// Trains, evaluates and checkpoints the next task.
    pub fn train_next(&mut self) -> Result<()> {
        let t = self.state.completed + 1;
        if t > self.stream.len() {
            return Err(Error::InvalidConfig(
                "every task in the stream is already trained".into(),
            ));
        }
        let start = Instant::now();
        let firings = if self.method.archetype == Archetype::JointMtl {
            self.train_joint(t)
        } else {
            self.train_incremental(t)
        }
        .map_err(|e| e.in_task(t))?;
        let params = self.state.params.as_ref().expect("trained parameters");
        let row = evaluate_row(params, self.stream, t).map_err(|e| e.in_task(t))?;
        let overall = overall_accuracy(params, self.stream, t).map_err(|e| e.in_task(t))?;
        self.record.accuracy.push_row(row, overall)?;
        self.record.checkpoints.push(TaskCheckpoint {
            task_id: t,
            params: params.clone(),
            ledger: self.state.ledger.clone(),
            optimizer: self.state.optimizer.clone().expect("optimizer state"),
        });
        self.record.ivt_log.extend(firings);
        self.record
            .wall_clock_secs
            .push(start.elapsed().as_secs_f64());
        self.state.completed = t;
        Ok(())
    }

    fn spec(&self, num_classes: usize) -> NetworkSpec {
        NetworkSpec {
            input_dim: self.stream.dim(),
            hidden_dims: self.method.model.hidden_dims.clone(),
            activation: self.method.model.activation,
            num_classes,
        }
    }

    fn train_incremental(&mut self, t: usize) -> Result<Vec<IvtFiring>> {
        let task = &self.stream.tasks[t - 1];
        let seed = self.method.train.seed;
        let previous = self.state.params.take();
        let mut params = match &previous {
            None => build_network_for_classes(
                &self.spec(task.class_ids.len()),
                &task.class_ids,
                derive_seed(seed, &[TAG_INIT]),
            )?,
            Some(p) => expand_head(
                p,
                &task.class_ids,
                self.method.head_init,
                derive_seed(seed, &[TAG_HEAD, t as u64]),
            )?,
        };
        let mut opt = match self.state.optimizer.take() {
            Some(mut o) if !self.method.reset_optimizer_each_task => {
                o.resize(params.len());
                o
            }
            _ => OptimizerState::new(self.method.train.optimizer, params.len()),
        };

        let pool = match self.method.archetype {
            Archetype::FullReplayOracle => self.stream.train_through(t)?,
            Archetype::Replay | Archetype::QuadRegReplay => {
                let mut pool = task.train.clone();
                if let Some(mem) = &self.state.memory {
                    pool.extend(&mem.as_dataset())?;
                }
                pool
            }
            _ => task.train.clone(),
        };
        let mask = match self.method.head_mask {
            HeadMask::Seen => self.stream.classes_through(t),
            HeadMask::Current => task.class_ids.clone(),
        };

        // Previous solution and prior Fisher, both expressed in the grown
        // layout. The anchor's new head columns take their recorded
        // initialization.
        let prior = match &previous {
            Some(p) => Some((
                p.reconcile_to(&params)?,
                self.state.ledger.cumulative_for(params.layout())?,
            )),
            None => None,
        };
        let strength = self.method.penalty_strength();
        let penalty = match &prior {
            Some((anchor, fisher)) if strength > 0.0 => Some(AnchorPenalty {
                strength,
                fisher,
                anchor,
            }),
            _ => None,
        };
        let ivt = match &prior {
            Some((anchor, fisher)) if self.method.use_ivt => Some((anchor, fisher)),
            _ => None,
        };

        let fit = fit(
            &mut params,
            &mut opt,
            &pool,
            &mask,
            penalty.as_ref(),
            ivt,
            &self.method,
            t,
        )?;
        self.state.ledger.commit_task(t, fit.task_fisher)?;
        if let Some(mem) = &mut self.state.memory {
            let extractor =
                |row: &[f64]| features(&params, row).expect("row width checked by stream");
            mem.update(&task.train, &task.class_ids, Some(&extractor))?;
        }
        self.state.params = Some(params);
        self.state.optimizer = Some(opt);
        Ok(fit.firings)
    }

    fn train_joint(&mut self, t: usize) -> Result<Vec<IvtFiring>> {
        let (params, opt, fisher) = joint_fit(self.stream, t, &self.method)?;
        self.state.ledger.commit_task(t, fisher)?;
        self.state.params = Some(params);
        self.state.optimizer = Some(opt);
        Ok(Vec::new())
    }
}

struct FitOutcome {
    task_fisher: FisherDiagonal,
    firings: Vec<IvtFiring>,
}

/// The epoch loop shared by every archetype.
#[allow(clippy::too_many_arguments)]
fn fit(
    params: &mut ParamVector,
    opt: &mut OptimizerState,
    pool: &LabeledDataset,
    mask: &[ClassId],
    penalty: Option<&AnchorPenalty<'_>>,
    ivt: Option<(&ParamVector, &FisherDiagonal)>,
    method: &MethodSpec,
    t: usize,
) -> Result<FitOutcome> {
    if pool.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cfg = &method.train;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut latest: Option<FisherDiagonal> = None;
    let mut epoch_sum: Vec<f64> = vec![0.0; params.len()];
    let mut firings = Vec::new();

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.sort_unstable();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                &[TAG_SHUFFLE, t as u64, epoch as u64],
            )));
        }
        let mut acc = FisherAccumulator::new(params.layout().clone(), method.fisher_mode);
        for chunk in order.chunks(cfg.batch_size) {
            let data = pool.gather(chunk);
            let batch = data.batch();
            let (_, mut grad) = loss_and_grad(params, batch, Some(mask))?;
            match method.fisher_mode {
                FisherMode::BatchMeanSq => acc.accumulate_batch(BatchGradient::Mean(&grad))?,
                FisherMode::PerSampleSq => {
                    let per = per_example_grads(params, batch, Some(mask))?;
                    acc.accumulate_batch(BatchGradient::PerSample(&per))?
                }
            }
            if let Some(p) = penalty {
                p.add_gradient(params, &mut grad)?;
            }
            opt.step(params, &grad, cfg)?;
        }
        let f = acc.finalize()?;
        for (s, v) in epoch_sum.iter_mut().zip(f.values()) {
            *s += v;
        }
        latest = Some(f);

        if let Some((anchor, prior)) = ivt {
            if schedule_hook(epoch, cfg.ivt_interval) {
                let fresh = task_fisher(
                    method.ivt_fisher,
                    latest.as_ref(),
                    &epoch_sum,
                    epoch,
                    params,
                )?;
                let transform = build_transform(prior, &fresh, anchor)?;
                let moved = apply_transform(&transform, params)?;
                let displacement_norm = moved.sub(params)?.norm();
                *params = moved;
                if method.reset_optimizer_on_ivt {
                    opt.reset();
                }
                firings.push(IvtFiring {
                    task: t,
                    epoch,
                    mean_coefficient: transform.mean_coefficient(),
                    displacement_norm,
                });
            }
        }
    }
    Ok(FitOutcome {
        task_fisher: task_fisher(
            method.ivt_fisher,
            latest.as_ref(),
            &epoch_sum,
            cfg.epochs,
            params,
        )?,
        firings,
    })
}

fn task_fisher(
    source: IvtFisherSource,
    latest: Option<&FisherDiagonal>,
    epoch_sum: &[f64],
    epochs: usize,
    params: &ParamVector,
) -> Result<FisherDiagonal> {
    match source {
        IvtFisherSource::Latest => latest.cloned().ok_or(Error::NoBatches),
        IvtFisherSource::RunningMean => FisherDiagonal::new(
            params.layout().clone(),
            epoch_sum.iter().map(|s| s / epochs as f64).collect(),
        ),
    }
}

/// Trains from scratch on the union of tasks `1..=t` with every seen class
/// in the head.
fn joint_fit(
    stream: &TaskStream,
    t: usize,
    method: &MethodSpec,
) -> Result<(ParamVector, OptimizerState, FisherDiagonal)> {
    let classes = stream.classes_through(t);
    let spec = NetworkSpec {
        input_dim: stream.dim(),
        hidden_dims: method.model.hidden_dims.clone(),
        activation: method.model.activation,
        num_classes: classes.len(),
    };
    let mut params =
        build_network_for_classes(&spec, &classes, derive_seed(method.train.seed, &[TAG_INIT]))?;
    let mut opt = OptimizerState::new(method.train.optimizer, params.len());
    let pool = stream.train_through(t)?;
    let out = fit(
        &mut params,
        &mut opt,
        &pool,
        &classes,
        None,
        None,
        method,
        t,
    )?;
    Ok((params, opt, out.task_fisher))
}

/// Parameters of a single run over every task's training split at once.
pub fn train_joint_mtl(stream: &TaskStream, method: &MethodSpec) -> Result<ParamVector> {
    method.validate()?;
    if stream.is_empty() {
        return Err(Error::EmptyDataset);
    }
    joint_fit(stream, stream.len(), method).map(|(p, _, _)| p)
}

fn evaluate_row(params: &ParamVector, stream: &TaskStream, t: usize) -> Result<Vec<f64>> {
    let scope = stream.classes_through(t);
    stream.tasks[..t]
        .iter()
        .map(|task| evaluate_accuracy(params, task.test.batch(), &scope))
        .collect()
}

fn overall_accuracy(params: &ParamVector, stream: &TaskStream, t: usize) -> Result<f64> {
    let scope = stream.classes_through(t);
    let test = stream.test_through(t)?;
    evaluate_accuracy(params, test.batch(), &scope)
}

/// Trains every task in order, evaluating after each one.
pub fn run_sequence(
    stream: &TaskStream,
    method: &MethodSpec,
) -> std::result::Result<RunRecord, Box<RunFailure>> {
    let mut trainer = match Trainer::new(stream, method.clone()) {
        Ok(t) => t,
        Err(error) => {
            return Err(Box::new(RunFailure {
                record: RunRecord {
                    method: method.clone(),
                    stream: stream.manifest(),
                    checkpoints: Vec::new(),
                    accuracy: AccuracyMatrix::new(),
                    wall_clock_secs: Vec::new(),
                    ivt_log: Vec::new(),
                    config_digest: None,
                },
                error,
            }))
        }
    };
    while !trainer.is_finished() {
        if let Err(error) = trainer.train_next() {
            return Err(Box::new(RunFailure {
                record: trainer.into_record(),
                error,
            }));
        }
    }
    Ok(trainer.into_record())
}
