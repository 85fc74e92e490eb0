use super::grid::GridSpec;
use crate::error::{Error, Result};
use crate::net::TrainOptions;
use crate::sim::SimConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Settings for the linear baselines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrappaConfig {
    pub kernel: usize,
    /// Ridge weight; `None` picks one relative to the normal matrix.
    pub lambda: Option<f64>,
}

impl Default for GrappaConfig {
    fn default() -> Self {
        Self { kernel: 5, lambda: None }
    }
}

/// Top-level JSON configuration. Every section is optional; unknown keys
/// are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub simulation: SimConfig,
    pub grid: GridSpec,
    pub training: TrainOptions,
    pub grappa: GrappaConfig,
    /// One simulated subject per seed.
    pub seeds: Vec<u64>,
    pub held_out_frames: usize,
    /// Worker threads; 0 lets the runtime decide.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            simulation: SimConfig::default(),
            grid: GridSpec::default(),
            training: TrainOptions::default(),
            grappa: GrappaConfig::default(),
            seeds: vec![1, 2, 3, 4, 5],
            held_out_frames: 20,
            workers: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.training.budget.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.held_out_frames == 0 || self.held_out_frames >= self.simulation.frames {
            return Err(Error::Config(format!(
                "held_out_frames {} must be in 1..{}",
                self.held_out_frames, self.simulation.frames
            )));
        }
        if self.grappa.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("grappa kernel {} must be odd", self.grappa.kernel)));
        }
        Ok(())
    }
}
