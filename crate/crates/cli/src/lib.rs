//! Command-line pipeline for kernsne: single embedding runs, kernel x
//! initialization sweeps, re-scoring and plotting.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod plot;
pub mod svg;
pub mod sweep;

pub use commands::{cmd_eval, cmd_featurize, cmd_ingest};
pub use config::{HdSpace, InputFormat, RunConfig};
pub use pipeline::{cmd_embed, RunSummary, Stage, StageError};
pub use plot::cmd_plot;
pub use sweep::{cmd_sweep, SweepReport, SweepRow};
