use super::{Gradients, RakiNetwork};
use crate::augment::TrainingSet;
use crate::error::{Error, Result};
use crate::num::{l1_loss_batch, AdamConfig, AdamState, Tensor3};
use crate::par::Exec;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

pub const DEFAULT_BATCH_SIZE: usize = 48;

/// Stopping rule, checked at epoch boundaries. Training stops at whichever
/// limit is hit first; at least one must be set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub max_epochs: Option<usize>,
    pub max_seconds: Option<f64>,
}

impl Budget {
    pub fn epochs(n: usize) -> Self {
        Self {
            max_epochs: Some(n),
            max_seconds: None,
        }
    }

    pub fn seconds(s: f64) -> Self {
        Self {
            max_epochs: None,
            max_seconds: Some(s),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.max_epochs, self.max_seconds) {
            (None, None) => Err(Error::Config("budget needs max_epochs or max_seconds".into())),
            (Some(0), _) => Err(Error::Config("max_epochs must be >= 1".into())),
            (_, Some(s)) if !(s > 0.0 && s.is_finite()) => Err(Error::Config(format!("max_seconds {s} must be positive"))),
            _ => Ok(()),
        }
    }
}

impl Default for Budget {
    fn default() -> Self {
        Self::epochs(200)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub budget: Budget,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            budget: Budget::default(),
            batch_size: DEFAULT_BATCH_SIZE,
            optimizer: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: usize,
    pub seconds: f64,
    pub final_loss: f64,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
}

/// Trains `net` on `set` with L1 loss and Adam. Inputs and targets are used
/// as stored (already normalized); the set's scale is copied onto the
/// network for later inference.
pub fn train(
    net: &mut RakiNetwork,
    set: &TrainingSet,
    options: &TrainOptions,
    rng: &mut Rng,
    exec: Exec,
) -> Result<TrainRecord> {
    options.budget.validate()?;
    if options.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if set.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    net.scale = set.scale;
    let n = set.len();
    let batch_size = options.batch_size.min(n);
    let mut adam = AdamState::new(options.optimizer, &net.param_sizes());
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::new();
    let start = Instant::now();
    loop {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            let inputs: Vec<Tensor3> = chunk.iter().map(|&i| set.samples[i].input.clone()).collect();
            let targets: Vec<Tensor3> = chunk.iter().map(|&i| set.samples[i].target.clone()).collect();
            let (loss, Gradients(grads)) = net.forward_backward(&inputs, rng, exec, |out| l1_loss_batch(out, &targets))?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {}", history.len() + 1)));
            }
            let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adam.step(&mut net.param_blocks(), &grad_refs)?;
            epoch_loss += loss * chunk.len() as f64;
        }
        history.push(epoch_loss / n as f64);
        if !net.is_finite() {
            return Err(Error::Numerical(format!("non-finite weights at epoch {}", history.len())));
        }
        let seconds = start.elapsed().as_secs_f64();
        let epochs_done = options.budget.max_epochs.is_some_and(|m| history.len() >= m);
        let time_done = options.budget.max_seconds.is_some_and(|s| seconds >= s);
        if epochs_done || time_done {
            return Ok(TrainRecord {
                epochs: history.len(),
                seconds,
                final_loss: *history.last().unwrap_or(&f64::NAN),
                history,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::build_split_slice_set;
    use crate::net::{build_network, tests::cfg};
    use crate::sim::{simulate, SimConfig};

    fn small_set() -> TrainingSet {
        let config = SimConfig {
            matrix: 16,
            coils: 4,
            sms_factor: 2,
            frames: 2,
            ..SimConfig::default()
        };
        let ds = simulate(&config, 11).unwrap();
        build_split_slice_set(&ds.timeseries.calibration, 0, 0).unwrap()
    }

    #[test]
    fn budget_validation() {
        assert!(Budget::epochs(0).validate().is_err());
        assert!(Budget { max_epochs: None, max_seconds: None }.validate().is_err());
        assert!(Budget::seconds(-1.0).validate().is_err());
        assert!(Budget::seconds(0.5).validate().is_ok());
    }

    #[test]
    fn loss_decreases_and_records_epochs() {
        let set = small_set();
        let mut net = build_network(&cfg(1, 3, 0, 0, 4), &mut Rng::new(1)).unwrap();
        let options = TrainOptions {
            budget: Budget::epochs(30),
            optimizer: AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() },
            ..TrainOptions::default()
        };
        let rec = train(&mut net, &set, &options, &mut Rng::new(2), Exec::Sequential).unwrap();
        assert_eq!(rec.epochs, 30);
        assert_eq!(rec.history.len(), 30);
        assert!(rec.final_loss < 0.5 * rec.history[0], "{:?}", rec.history);
        assert_eq!(net.scale, set.scale);
    }

    #[test]
    fn training_is_deterministic_across_exec_modes() {
        let set = small_set();
        let mut c = cfg(3, 3, 4, 8, 4);
        c.batch_norm = true;
        c.dropout = true;
        let opts = TrainOptions { budget: Budget::epochs(2), ..TrainOptions::default() };
        let mut a = build_network(&c, &mut Rng::new(1)).unwrap();
        let mut b = a.clone();
        let ra = train(&mut a, &set, &opts, &mut Rng::new(9), Exec::Sequential).unwrap();
        let rb = train(&mut b, &set, &opts, &mut Rng::new(9), Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.history, rb.history);
    }

    #[test]
    fn time_budget_stops_training() {
        let set = small_set();
        let mut net = build_network(&cfg(1, 3, 0, 0, 4), &mut Rng::new(1)).unwrap();
        let opts = TrainOptions { budget: Budget::seconds(1e-9), ..TrainOptions::default() };
        let rec = train(&mut net, &set, &opts, &mut Rng::new(2), Exec::Sequential).unwrap();
        assert_eq!(rec.epochs, 1);
    }

    #[test]
    fn divergence_is_reported() {
        let set = small_set();
        let mut net = build_network(&cfg(1, 3, 0, 0, 4), &mut Rng::new(1)).unwrap();
        let opts = TrainOptions {
            budget: Budget::epochs(3),
            optimizer: AdamConfig { learning_rate: f64::INFINITY, ..AdamConfig::default() },
            ..TrainOptions::default()
        };
        let err = train(&mut net, &set, &opts, &mut Rng::new(2), Exec::Sequential).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
    }
}
