//! Monte Carlo harness for adaptive robust control with ellipsoidal set
//! learning: plant simulation, the ARC/ORC/RC controller variants, metrics
//! and file export.

pub mod config;
pub mod error;
pub mod export;
pub mod expr;
pub mod harness;
pub mod plant;

pub use config::{Controller, Experiment, ExperimentConfig};
pub use error::{Result, SimError};
pub use harness::{run_experiment, ExperimentResult};
