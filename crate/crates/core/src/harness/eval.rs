use super::grid::{GridSpec, HyperParams};
use crate::augment::{build_set, Provenance, TrainingSet};
use crate::error::{Error, Result};
use crate::net::{build_network, train, NetworkBank, RakiNetwork, TrainOptions, TrainRecord, Unaliaser};
use crate::par::Exec;
use crate::rng::Rng;
use crate::sim::{MultiCoil, SimTimeseries};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;

/// `count` held-out frame indices spread evenly over frames `1..frames`.
pub fn select_frames(frames: usize, count: usize) -> Result<Vec<usize>> {
    let available = frames.saturating_sub(1);
    if count == 0 || count > available {
        return Err(Error::Data(format!(
            "{count} held-out frames requested, {available} available after the training frame"
        )));
    }
    Ok((0..count).map(|i| 1 + i * available / count).collect())
}

/// Factor applied to k-space before taking L1 so losses are on the same
/// scale as training: one over the largest magnitude in the training frame.
pub fn eval_scale(ts: &SimTimeseries) -> f64 {
    let m = ts.frames[0].max_magnitude();
    if m > 0.0 {
        1.0 / m
    } else {
        1.0
    }
}

/// Sum of absolute real and imaginary differences.
pub fn plane_l1(est: &[Complex64], truth: &[Complex64]) -> f64 {
    est.iter().zip(truth).map(|(a, b)| (a.re - b.re).abs() + (a.im - b.im).abs()).sum()
}

/// Per-frame and mean held-out L1, averaged over every real and imaginary
/// value of every slice and coil.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameLosses {
    pub frames: Vec<usize>,
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

impl FrameLosses {
    fn from_sums(frames: Vec<usize>, sums: &[f64], values: usize) -> Self {
        let per_frame: Vec<f64> = sums.iter().map(|s| s / values as f64).collect();
        let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
        Self { frames, per_frame, mean }
    }
}

/// Held-out loss of any unaliasing model against the simulator's truth
/// for each selected frame, in the acquisition (shifted) frame.
pub fn evaluate(model: &dyn Unaliaser, ts: &SimTimeseries, frames: &[usize], exec: Exec) -> Result<FrameLosses> {
    let scale = eval_scale(ts);
    let mut sums = Vec::with_capacity(frames.len());
    for &f in frames {
        let frame = ts.frames.get(f).ok_or_else(|| Error::Data(format!("frame {f} missing")))?;
        let est = model.unalias_shifted(frame, exec)?;
        let mut sum = 0.0;
        for (s, mc) in est.iter().enumerate() {
            let truth = ts.truth(f, s);
            for (e, t) in mc.coils.iter().zip(&truth.coils) {
                sum += plane_l1(e, t) * scale;
            }
        }
        sums.push(sum);
    }
    Ok(FrameLosses::from_sums(frames.to_vec(), &sums, values_per_frame(ts)))
}

fn values_per_frame(ts: &SimTimeseries) -> usize {
    2 * ts.sms_factor() * ts.coil_count() * ts.grid().len()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "message")]
pub enum Status {
    Ok,
    Failed(String),
}

impl Status {
    pub fn is_ok(&self) -> bool {
        matches!(self, Status::Ok)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub seed: u64,
    pub hyper: HyperParams,
    pub provenance: Provenance,
    pub status: Status,
    /// Fewest epochs completed by any of the combination's networks.
    pub epochs: usize,
    /// Total training time over the combination's networks.
    pub wall_seconds: f64,
    pub frames: Vec<usize>,
    pub per_frame_l1: Vec<f64>,
    pub mean_l1: f64,
}

/// Everything a grid run needs besides the grid itself.
#[derive(Clone, Debug)]
pub struct GridRun<'a> {
    pub ts: &'a SimTimeseries,
    pub seed: u64,
    pub options: TrainOptions,
    pub held_out: usize,
    pub workers: usize,
    pub exec: Exec,
}

struct TaskOutput {
    epochs: usize,
    seconds: f64,
    sums: Vec<f64>,
}

fn run_task(
    hp: &HyperParams,
    set: &TrainingSet,
    run: &GridRun,
    frames: &[usize],
    task_id: u64,
    scale: f64,
) -> Result<TaskOutput> {
    let ts = run.ts;
    let mut rng = Rng::for_task(run.seed, task_id);
    let mut net = build_network(&hp.network_config(ts.coil_count()), &mut rng)?;
    let rec = train(&mut net, set, &run.options, &mut rng, Exec::Sequential)?;
    let sums = frames
        .iter()
        .map(|&f| {
            let est = estimate_plane(&net, &ts.frames[f])?;
            let truth = &ts.truth(f, set.target_slice).coils[set.target_coil];
            let l1 = plane_l1(&est, truth) * scale;
            if l1.is_finite() {
                Ok(l1)
            } else {
                Err(Error::Numerical(format!("non-finite held-out loss on frame {f}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskOutput {
        epochs: rec.epochs,
        seconds: rec.seconds,
        sums,
    })
}

/// One network's k-space estimate for an aliased frame.
pub fn estimate_plane(net: &RakiNetwork, aliased: &MultiCoil) -> Result<Vec<Complex64>> {
    let y = net.infer(&aliased.to_tensor().scaled(net.scale))?.scaled(1.0 / net.scale);
    Ok(y.to_complex_planes()?.remove(0))
}

/// Trains one network per `(slice, coil)` for every grid point and scores
/// them on the held-out frames.
///
/// Grid points that train identical networks (see
/// [`HyperParams::effective`]) share one run. Each `(run, slice, coil)`
/// task draws from its own random stream, so results do not depend on the
/// worker count. A failing task marks its grid point as failed.
pub fn run_grid(grid: &GridSpec, run: &GridRun) -> Result<Vec<EvalRecord>> {
    let combos = grid.combinations()?;
    let ts = run.ts;
    if ts.frames.len() < 2 {
        return Err(Error::Data("need a training frame and at least one held-out frame".into()));
    }
    run.options.budget.validate()?;
    let frames = select_frames(ts.frames.len(), run.held_out)?;
    let (n, coils) = (ts.sms_factor(), ts.coil_count());
    let scale = eval_scale(ts);

    let mut runs: Vec<HyperParams> = Vec::new();
    let mut run_of: BTreeMap<HyperParams, usize> = BTreeMap::new();
    for c in &combos {
        let e = c.effective();
        if let std::collections::btree_map::Entry::Vacant(slot) = run_of.entry(e) {
            slot.insert(runs.len());
            runs.push(e);
        }
    }

    let mut sets: BTreeMap<(Provenance, usize, usize), TrainingSet> = BTreeMap::new();
    for prov in runs.iter().map(HyperParams::provenance).collect::<std::collections::BTreeSet<_>>() {
        for s in 0..n {
            for c in 0..coils {
                sets.insert((prov, s, c), build_set(prov, &ts.calibration, &ts.frames[0], s, c)?);
            }
        }
    }

    let per_run = n * coils;
    let outputs: Vec<Result<TaskOutput>> = run.exec.install(run.workers, || {
        run.exec.map_range(runs.len() * per_run, |task| {
            let hp = &runs[task / per_run];
            let (s, c) = ((task % per_run) / coils, task % coils);
            let start = Instant::now();
            let out = run_task(hp, &sets[&(hp.provenance(), s, c)], run, &frames, task as u64, scale);
            out.map(|mut o| {
                o.seconds = start.elapsed().as_secs_f64().max(o.seconds);
                o
            })
        })
    });

    let values = values_per_frame(ts);
    let mut results: Vec<(Status, usize, f64, FrameLosses)> = Vec::with_capacity(runs.len());
    for chunk in outputs.chunks(per_run) {
        let mut sums = vec![0.0; frames.len()];
        let mut epochs = usize::MAX;
        let mut seconds = 0.0;
        let mut status = Status::Ok;
        for r in chunk {
            match r {
                Ok(o) => {
                    sums.iter_mut().zip(&o.sums).for_each(|(a, b)| *a += b);
                    epochs = epochs.min(o.epochs);
                    seconds += o.seconds;
                }
                Err(e) => {
                    if status.is_ok() {
                        status = Status::Failed(e.to_string());
                    }
                }
            }
        }
        let losses = if status.is_ok() {
            FrameLosses::from_sums(frames.clone(), &sums, values)
        } else {
            FrameLosses {
                frames: frames.clone(),
                per_frame: vec![f64::NAN; frames.len()],
                mean: f64::NAN,
            }
        };
        results.push((status, if epochs == usize::MAX { 0 } else { epochs }, seconds, losses));
    }

    Ok(combos
        .iter()
        .map(|hp| {
            let (status, epochs, seconds, losses) = &results[run_of[&hp.effective()]];
            EvalRecord {
                seed: run.seed,
                hyper: *hp,
                provenance: hp.provenance(),
                status: status.clone(),
                epochs: *epochs,
                wall_seconds: *seconds,
                frames: losses.frames.clone(),
                per_frame_l1: losses.per_frame.clone(),
                mean_l1: losses.mean,
            }
        })
        .collect())
}

/// Trains the full `(slice, coil)` bank for one grid point. Task ids and
/// random streams match the first run of [`run_grid`].
pub fn train_bank(
    ts: &SimTimeseries,
    hyper: &HyperParams,
    options: &TrainOptions,
    seed: u64,
    workers: usize,
    exec: Exec,
) -> Result<(NetworkBank, Vec<TrainRecord>)> {
    options.budget.validate()?;
    let hp = hyper.effective();
    let (n, coils) = (ts.sms_factor(), ts.coil_count());
    let cfg = hp.network_config(coils);
    cfg.validate()?;
    let trained = exec.install(workers, || {
        exec.map_range(n * coils, |task| -> Result<(RakiNetwork, TrainRecord)> {
            let (s, c) = (task / coils, task % coils);
            let set = build_set(hp.provenance(), &ts.calibration, &ts.frames[0], s, c)?;
            let mut rng = Rng::for_task(seed, task as u64);
            let mut net = build_network(&cfg, &mut rng)?;
            let rec = train(&mut net, &set, options, &mut rng, Exec::Sequential)?;
            Ok((net, rec))
        })
    });
    let mut bank = NetworkBank::new(n, coils, ts.shifts.clone())?;
    let mut records = Vec::with_capacity(n * coils);
    for (task, r) in trained.into_iter().enumerate() {
        let (net, rec) = r?;
        bank.insert(task / coils, task % coils, net)?;
        records.push(rec);
    }
    Ok((bank, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Budget, NetworkBank};
    use crate::num::AdamConfig;
    use crate::sim::{simulate, SimConfig};

    /// Returns the simulator's own truth for every slice.
    struct Oracle<'a> {
        ts: &'a SimTimeseries,
        frame: usize,
    }

    impl Unaliaser for Oracle<'_> {
        fn sms_factor(&self) -> usize {
            self.ts.sms_factor()
        }
        fn coil_count(&self) -> usize {
            self.ts.coil_count()
        }
        fn shifts(&self) -> &[f64] {
            &self.ts.shifts
        }
        fn estimate(&self, slice: usize, coil: usize, _: &MultiCoil) -> Result<Vec<Complex64>> {
            Ok(self.ts.truth(self.frame, slice).coils[coil].clone())
        }
    }

    fn small(seed: u64, sigma: f64) -> SimTimeseries {
        let cfg = SimConfig { matrix: 16, coils: 3, frames: 6, noise_sigma: sigma, ..SimConfig::default() };
        simulate(&cfg, seed).unwrap().timeseries
    }

    #[test]
    fn frame_selection() {
        assert_eq!(select_frames(21, 20).unwrap(), (1..=20).collect::<Vec<_>>());
        let idx = select_frames(503, 20).unwrap();
        assert_eq!(idx.len(), 20);
        assert_eq!(idx[0], 1);
        let gaps: Vec<usize> = idx.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|&g| g == 25 || g == 26), "{gaps:?}");
        assert!(select_frames(5, 5).is_err());
        assert!(select_frames(5, 0).is_err());
    }

    #[test]
    fn oracle_scores_zero() {
        let ts = small(1, 0.05);
        let l = evaluate(&Oracle { ts: &ts, frame: 3 }, &ts, &[3], Exec::Sequential).unwrap();
        assert_eq!(l.per_frame, vec![0.0]);
        assert_eq!(l.mean, 0.0);
    }

    #[test]
    fn grid_bookkeeping_and_dedup() {
        let ts = small(2, 0.01);
        let grid = GridSpec {
            num_layers: vec![1, 2],
            filter_size: vec![3],
            num_filters: vec![4, 8],
            penultimate_filters: vec![4],
            batch_norm: vec![false],
            dropout: vec![false],
            split_slice: vec![true],
        };
        let run = GridRun {
            ts: &ts,
            seed: 5,
            options: TrainOptions { budget: Budget::epochs(10), ..TrainOptions::default() },
            held_out: 4,
            workers: 1,
            exec: Exec::Sequential,
        };
        let recs = run_grid(&grid, &run).unwrap();
        assert_eq!(recs.len(), 4);
        for r in &recs {
            assert!(r.status.is_ok());
            assert_eq!(r.epochs, 10);
            assert_eq!(r.per_frame_l1.len(), 4);
            let mean = r.per_frame_l1.iter().sum::<f64>() / 4.0;
            assert!((mean - r.mean_l1).abs() < 1e-15);
        }
        // single-layer points differ only in unused settings
        assert_eq!(recs[0].per_frame_l1, recs[1].per_frame_l1);
        assert_ne!(recs[2].hyper, recs[3].hyper);
        assert_eq!(recs[2].per_frame_l1, recs[3].per_frame_l1);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let ts = small(3, 0.01);
        let grid = GridSpec::single(3, 3, 4, 4, true, true);
        let mut run = GridRun {
            ts: &ts,
            seed: 9,
            options: TrainOptions { budget: Budget::epochs(3), ..TrainOptions::default() },
            held_out: 2,
            workers: 1,
            exec: Exec::Parallel,
        };
        let a = run_grid(&grid, &run).unwrap();
        run.workers = 8;
        let b = run_grid(&grid, &run).unwrap();
        run.exec = Exec::Sequential;
        let c = run_grid(&grid, &run).unwrap();
        let strip = |v: &[EvalRecord]| v.iter().map(|r| (r.hyper, r.per_frame_l1.clone())).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(strip(&a), strip(&c));
    }

    #[test]
    fn train_bank_reproduces_first_grid_run() {
        let ts = small(7, 0.01);
        let grid = GridSpec::single(2, 3, 4, 4, false, false);
        let run = GridRun {
            ts: &ts,
            seed: 11,
            options: TrainOptions { budget: Budget::epochs(5), ..TrainOptions::default() },
            held_out: 3,
            workers: 1,
            exec: Exec::Sequential,
        };
        let recs = run_grid(&grid, &run).unwrap();
        let (bank, train_recs) = train_bank(&ts, &recs[0].hyper, &run.options, 11, 2, Exec::Parallel).unwrap();
        assert!(bank.is_complete());
        assert_eq!(train_recs.len(), 6);
        let losses = evaluate(&bank, &ts, &recs[0].frames, Exec::Sequential).unwrap();
        for (a, b) in losses.per_frame.iter().zip(&recs[0].per_frame_l1) {
            assert!((a - b).abs() <= 1e-12 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn divergent_training_is_marked_failed() {
        let ts = small(4, 0.01);
        let run = GridRun {
            ts: &ts,
            seed: 1,
            options: TrainOptions {
                budget: Budget::epochs(2),
                optimizer: AdamConfig { learning_rate: f64::INFINITY, ..AdamConfig::default() },
                ..TrainOptions::default()
            },
            held_out: 2,
            workers: 1,
            exec: Exec::Sequential,
        };
        let recs = run_grid(&GridSpec::single(1, 3, 4, 4, false, false), &run).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| !r.status.is_ok() && r.mean_l1.is_nan()));
    }

    #[test]
    fn more_noise_raises_held_out_loss() {
        let lo = small(6, 0.02);
        let hi = small(6, 0.04);
        let fit = |ts: &SimTimeseries| {
            let mut bank = NetworkBank::new(2, 3, ts.shifts.clone()).unwrap();
            let opts = TrainOptions {
                budget: Budget::epochs(300),
                optimizer: AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() },
                ..TrainOptions::default()
            };
            let hp = GridSpec::single(1, 3, 1, 1, false, false).combinations().unwrap()[1];
            for s in 0..2 {
                for c in 0..3 {
                    let set = build_set(Provenance::SplitSlice, &ts.calibration, &ts.frames[0], s, c).unwrap();
                    let mut net = build_network(&hp.network_config(3), &mut Rng::new(1)).unwrap();
                    train(&mut net, &set, &opts, &mut Rng::new(2), Exec::Sequential).unwrap();
                    bank.insert(s, c, net).unwrap();
                }
            }
            evaluate(&bank, ts, &[1, 2, 3, 4, 5], Exec::Sequential).unwrap().mean
        };
        // both series share phantoms, coils, modulation and noise draws
        assert!(fit(&hi) > fit(&lo));
    }
}
