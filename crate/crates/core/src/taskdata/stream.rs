use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledDataset, Split, SplitDataset};
use crate::error::{Error, Result};
use crate::paramspace::ClassId;

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    /// 1-based position in the stream.
    pub task_id: usize,
    pub class_ids: Vec<ClassId>,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub class_order: Vec<ClassId>,
    pub class_order_seed: u64,
}

/// Task sizes for `total` classes: `base` first, the rest split evenly.
pub fn task_sizes(total: usize, base: usize, num_tasks: usize) -> Result<Vec<usize>> {
    if num_tasks == 0 || base == 0 {
        return Err(Error::IndivisibleClasses(
            "need at least one task and one base class".into(),
        ));
    }
    if base > total {
        return Err(Error::IndivisibleClasses(format!(
            "{base} base classes but only {total} classes"
        )));
    }
    if num_tasks == 1 {
        if base != total {
            return Err(Error::IndivisibleClasses(format!(
                "single task must hold all {total} classes, not {base}"
            )));
        }
        return Ok(vec![base]);
    }
    let rest = total - base;
    let incr = num_tasks - 1;
    if rest == 0 || !rest.is_multiple_of(incr) {
        return Err(Error::IndivisibleClasses(format!(
            "{rest} remaining classes cannot be split into {incr} equal non-empty tasks"
        )));
    }
    let mut sizes = vec![base];
    sizes.extend(std::iter::repeat_n(rest / incr, incr));
    Ok(sizes)
}

/// Splits `data` into a class-incremental stream. The class order is a
/// seeded permutation of the sorted class ids; task 1 receives the first
/// `base_classes` classes of that order.
pub fn make_incremental_stream(
    data: &SplitDataset,
    base_classes: usize,
    num_tasks: usize,
    seed: u64,
) -> Result<TaskStream> {
    let mut order: Vec<ClassId> = data.classes().into_iter().collect();
    let sizes = task_sizes(order.len(), base_classes, num_tasks)?;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut tasks = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for (t, size) in sizes.into_iter().enumerate() {
        let class_ids = order[start..start + size].to_vec();
        start += size;
        tasks.push(Task {
            task_id: t + 1,
            train: data.train.filter_classes(&class_ids),
            test: data.test.filter_classes(&class_ids),
            class_ids,
        });
    }
    Ok(TaskStream {
        tasks,
        class_order: order,
        class_order_seed: seed,
    })
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tasks.first().map(|t| t.train.dim()).unwrap_or(0)
    }

    /// Classes of tasks `1..=t` in stream order.
    pub fn classes_through(&self, t: usize) -> Vec<ClassId> {
        self.tasks[..t]
            .iter()
            .flat_map(|task| task.class_ids.iter().copied())
            .collect()
    }

    /// Union of the training splits of tasks `1..=t`.
    pub fn train_through(&self, t: usize) -> Result<LabeledDataset> {
        LabeledDataset::concat(
            self.dim(),
            Split::Train,
            self.tasks[..t].iter().map(|x| &x.train),
        )
    }

    /// Union of the test splits of tasks `1..=t`.
    pub fn test_through(&self, t: usize) -> Result<LabeledDataset> {
        LabeledDataset::concat(
            self.dim(),
            Split::Test,
            self.tasks[..t].iter().map(|x| &x.test),
        )
    }

    pub fn manifest(&self) -> StreamManifest {
        StreamManifest {
            class_order_seed: self.class_order_seed,
            class_order: self.class_order.clone(),
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskManifest {
                    task_id: t.task_id,
                    class_ids: t.class_ids.clone(),
                    train_examples: t.train.len(),
                    test_examples: t.test.len(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub task_id: usize,
    pub class_ids: Vec<ClassId>,
    pub train_examples: usize,
    pub test_examples: usize,
}

/// Provenance record of a stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub class_order_seed: u64,
    pub class_order: Vec<ClassId>,
    pub tasks: Vec<TaskManifest>,
}
