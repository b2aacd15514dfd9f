//! Increment vector transformation (IVT) for class-incremental learning,
//! with linear-mode-connectivity scans, loss-landscape grids and an analytic
//! quadratic-task laboratory.

pub mod checkpoint;
pub mod error;
pub mod expcli;
pub mod fisher;
pub mod geometry;
pub mod ivt;
pub mod metrics;
pub mod paramspace;
pub mod quadlab;
pub mod taskdata;
pub mod trainers;

pub use error::{Error, Result};
