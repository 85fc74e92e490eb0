//! Grid search, held-out evaluation, ranking and export.

pub mod config;
pub mod errmap;
pub mod eval;
pub mod export;
pub mod grid;
pub mod rank;

pub use config::{GrappaConfig, RunConfig};
pub use errmap::{error_map, write_error_maps, ErrorMap};
pub use eval::{evaluate, run_grid, train_bank, select_frames, EvalRecord, FrameLosses, GridRun, Status};
pub use export::{parse_records_csv, records_csv, summarize, write_outputs, Summary};
pub use grid::{GridSpec, HyperParams};
pub use rank::{normalize_and_rank, NormalizedRecord};

use crate::error::Result;
use crate::par::Exec;
use crate::sim::simulate;

/// Simulates one subject per configured seed and runs the grid on each.
pub fn run_all(config: &RunConfig, exec: Exec) -> Result<Vec<EvalRecord>> {
    config.validate()?;
    let mut records = Vec::new();
    for &seed in &config.seeds {
        let ds = simulate(&config.simulation, seed)?;
        let run = GridRun {
            ts: &ds.timeseries,
            seed,
            options: config.training,
            held_out: config.held_out_frames,
            workers: config.workers,
            exec,
        };
        records.extend(run_grid(&config.grid, &run)?);
    }
    Ok(records)
}
