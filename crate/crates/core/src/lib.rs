//! Sequential decision-data engine for TTY trajectories: task catalog, the KTB1
//! episode container, repacking, sequence loaders, screen rasterization,
//! recurrent offline RL losses and training, and evaluation statistics.

pub mod algo;
pub mod dataset;
pub mod env;
pub mod exec;
pub mod loader;
pub mod render;
pub mod repack;
pub mod stats;
pub mod store;
pub mod synth;

pub use exec::Exec;
