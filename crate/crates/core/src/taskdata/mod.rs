//! Class-incremental task streams, dataset ingestion and replay memory.

mod dataset;
mod io;
mod memory;
mod stream;
mod synth;

pub use dataset::{LabeledDataset, Split, SplitDataset};
pub use io::{load_csv, load_idx, parse_idx, CsvSchema, IdxTensor};
pub use memory::{herding_order, FeatureExtractor, MemoryConfig, MemoryPolicy, ReplayMemory};
pub use stream::{
    make_incremental_stream, task_sizes, StreamManifest, Task, TaskManifest, TaskStream,
};
pub use synth::{sample_clusters, synth_gaussian_tasks, ClusterMean, GaussianTaskConfig};
