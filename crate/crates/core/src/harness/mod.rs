//! Benchmark protocol: data loading, train/test splitting, grid search,
//! experiment sweeps and the statistics computed over their results.

pub mod data;
pub mod experiment;
pub mod protocol;
pub mod stats;

pub use data::{load_csv, DataError, Dataset, TargetColumn};
pub use experiment::{
    read_fronts, read_records, run_cell, run_experiment, Budget, ExperimentError, ExperimentSpec,
    FrontMember, FrontRecord, RunRecord, Variant,
};
pub use protocol::{halving_grid_search, protocol_split, ProtocolError, ProtocolSplit};
pub use stats::{aggregates, Aggregates, AggregateRow, Group};
