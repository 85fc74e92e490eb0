mod model;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use model::{Manifest, Method};
use raki_core::grappa::{GrappaBank, GrappaMethod};
use raki_core::harness::{
    error_map, evaluate, parse_records_csv, run_all, select_frames, summarize, train_bank, write_error_maps,
    write_outputs, HyperParams, RunConfig,
};
use raki_core::net::Budget;
use raki_core::par::Exec;
use raki_core::sim::{read_dataset, shift_multicoil, simulate, write_dataset};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "raki", version, about = "RAKI networks and slice-GRAPPA for simultaneous multi-slice k-space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; omitted sections take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "RAKI_OUT_DIR", default_value = "raki-out")]
    out_dir: PathBuf,
    /// Worker threads (0 = one per core). Overrides the config file.
    #[arg(long, env = "RAKI_WORKERS")]
    workers: Option<usize>,
    /// Run everything on the calling thread.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        Ok(cfg)
    }

    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a subject and write the dataset container.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to `<out-dir>/dataset_seed<seed>.rsms`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one configuration for every slice and coil of a dataset.
    Train(TrainArgs),
    /// Run the configured grid over every seed and export the records.
    Grid {
        #[command(flatten)]
        common: Common,
    },
    /// Score a trained model on held-out frames and write error maps.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Model directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Frame for the error maps; defaults to the first held-out frame.
        #[arg(long)]
        frame: Option<usize>,
    },
    /// Rank an existing `records.csv` and rewrite `summary.json`.
    Report {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out-dir>/records.csv`.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Configurations to print.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "raki")]
    method: Method,
    /// Model directory; defaults to `<out-dir>/model`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Seeds the network initialization; defaults to the dataset seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 5)]
    filter_size: usize,
    #[arg(long, default_value_t = 32)]
    filters: usize,
    #[arg(long, default_value_t = 128)]
    penultimate: usize,
    #[arg(long)]
    batch_norm: bool,
    #[arg(long)]
    dropout: bool,
    #[arg(long)]
    split_slice: bool,
    /// Epoch budget; replaces the configured budget.
    #[arg(long)]
    epochs: Option<usize>,
    /// Wall-clock budget per network in seconds; replaces the configured budget.
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// GRAPPA kernel size; defaults to the configured one.
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, seed, out } => cmd_simulate(&common, seed, out),
        Command::Train(args) => cmd_train(&args),
        Command::Grid { common } => cmd_grid(&common),
        Command::Eval { common, dataset, model, frame } => cmd_eval(&common, &dataset, &model, frame),
        Command::Report { common, records, top } => cmd_report(&common, records, top),
    }
}

fn cmd_simulate(common: &Common, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = common.load()?;
    let seed = seed.unwrap_or(cfg.seeds[0]);
    let ds = simulate(&cfg.simulation, seed)?;
    let path = out.unwrap_or_else(|| common.out_dir.join(format!("dataset_seed{seed}.rsms")));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    write_dataset(&path, &ds).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let ds = read_dataset(&a.dataset).with_context(|| format!("reading {}", a.dataset.display()))?;
    let ts = &ds.timeseries;
    let seed = a.seed.unwrap_or(ds.seed);
    let dir = a.model.clone().unwrap_or_else(|| a.common.out_dir.join("model"));
    let exec = a.common.exec();
    let mut manifest = Manifest {
        method: a.method,
        sms_factor: ts.sms_factor(),
        coils: ts.coil_count(),
        shifts: ts.shifts.clone(),
        seed,
        hyper: None,
    };
    match a.method {
        Method::Raki => {
            let hyper = HyperParams {
                num_layers: a.layers,
                filter_size: a.filter_size,
                num_filters: a.filters,
                penultimate_filters: (a.layers > 1).then_some(a.penultimate),
                batch_norm: a.batch_norm,
                dropout: a.dropout,
                split_slice: a.split_slice,
            };
            let mut options = cfg.training;
            if a.epochs.is_some() || a.seconds.is_some() {
                options.budget = Budget { max_epochs: a.epochs, max_seconds: a.seconds };
            }
            if let Some(lr) = a.learning_rate {
                options.optimizer.learning_rate = lr;
            }
            let (bank, records) = train_bank(ts, &hyper, &options, seed, cfg.workers, exec)?;
            manifest.hyper = Some(hyper);
            model::save_networks(&dir, &manifest, &bank)?;
            let epochs = records.iter().map(|r| r.epochs).min().unwrap_or(0);
            let worst = records.iter().map(|r| r.final_loss).fold(0.0, f64::max);
            println!("trained {} networks ({}), {epochs} epochs, worst final loss {worst:.4e}", records.len(), hyper.key());
        }
        Method::SliceGrappa | Method::SplitSliceGrappa => {
            let method = if a.method == Method::SliceGrappa { GrappaMethod::Slice } else { GrappaMethod::SplitSlice };
            let kernel = a.kernel.unwrap_or(cfg.grappa.kernel);
            let lambda = a.lambda.or(cfg.grappa.lambda);
            let bank = exec.install(cfg.workers, || {
                GrappaBank::fit(method, &ts.calibration, &ts.frames[0], &ts.shifts, kernel, lambda, exec)
            })?;
            model::save_kernels(&dir, &manifest, &bank)?;
            println!("fitted {} {} kernels", bank.kernels.len(), method.as_str());
        }
    }
    println!("{}", dir.display());
    Ok(())
}

fn cmd_grid(common: &Common) -> Result<()> {
    let cfg = common.load()?;
    let combos = cfg.grid.combinations()?.len();
    eprintln!("{combos} combinations x {} seeds", cfg.seeds.len());
    let records = run_all(&cfg, common.exec())?;
    let summary = write_outputs(&common.out_dir, &records)?;
    let failed = records.iter().filter(|r| !r.status.is_ok()).count();
    println!("{} records ({failed} failed) in {}", records.len(), common.out_dir.display());
    for g in &summary.groups {
        println!("seed {}: best {} (mean L1 {:.4e})", g.seed, g.best_config, g.best_mean_l1);
    }
    Ok(())
}

#[derive(Serialize)]
struct SliceReport {
    slice: usize,
    median_percent_error: f64,
    kspace_l1: f64,
}

#[derive(Serialize)]
struct EvalReport {
    method: Method,
    frames: Vec<usize>,
    per_frame_l1: Vec<f64>,
    mean_l1: f64,
    error_map_frame: usize,
    slices: Vec<SliceReport>,
}

fn cmd_eval(common: &Common, dataset: &Path, model_dir: &Path, frame: Option<usize>) -> Result<()> {
    let cfg = common.load()?;
    let ds = read_dataset(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let ts = &ds.timeseries;
    let (manifest, model) = model::load(model_dir)?;
    if manifest.coils != ts.coil_count() || manifest.sms_factor != ts.sms_factor() {
        bail!(
            "model is for {} slices x {} coils, dataset has {} x {}",
            manifest.sms_factor,
            manifest.coils,
            ts.sms_factor(),
            ts.coil_count()
        );
    }
    let exec = common.exec();
    let frames = select_frames(ts.frames.len(), cfg.held_out_frames.min(ts.frames.len() - 1))?;
    let losses = exec.install(cfg.workers, || evaluate(model.as_ref(), ts, &frames, exec))?;

    let f = frame.unwrap_or(frames[0]);
    if f >= ts.frames.len() {
        bail!("frame {f} out of range (dataset has {} frames)", ts.frames.len());
    }
    let recon = exec.install(cfg.workers, || model.unalias(&ts.frames[f], exec))?;
    let truth: Vec<_> = (0..ts.sms_factor()).map(|s| shift_multicoil(&ts.truth(f, s), -ts.shifts[s])).collect();
    let support: Option<Vec<Vec<bool>>> = (0..ts.sms_factor()).map(|s| ds.support(s)).collect();
    let maps = error_map(&recon, &truth, support.as_deref())?;
    write_error_maps(&common.out_dir, "error", &maps)?;

    let report = EvalReport {
        method: manifest.method,
        frames: losses.frames,
        per_frame_l1: losses.per_frame,
        mean_l1: losses.mean,
        error_map_frame: f,
        slices: maps
            .iter()
            .map(|m| SliceReport { slice: m.slice, median_percent_error: m.median_percent, kspace_l1: m.kspace_l1 })
            .collect(),
    };
    std::fs::write(common.out_dir.join("eval.json"), serde_json::to_vec_pretty(&report)?)?;
    println!("mean held-out L1 {:.4e} over {} frames", report.mean_l1, report.frames.len());
    for s in &report.slices {
        println!("slice {}: median error {:.2}%, k-space L1 {:.4e}", s.slice, s.median_percent_error, s.kspace_l1);
    }
    Ok(())
}

fn cmd_report(common: &Common, records: Option<PathBuf>, top: usize) -> Result<()> {
    let path = records.unwrap_or_else(|| common.out_dir.join("records.csv"));
    let data = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let recs = parse_records_csv(&data).with_context(|| format!("parsing {}", path.display()))?;
    let (_, summary) = summarize(&recs)?;
    std::fs::create_dir_all(&common.out_dir)?;
    std::fs::write(common.out_dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    println!("{} records, {} seeds", recs.len(), summary.groups.len());
    println!("{:<32} {:>8} {:>12} {:>11}", "config", "groups", "norm. loss", "percentile");
    for c in summary.configs.iter().take(top) {
        println!(
            "{:<32} {:>8} {:>12.4} {:>11.2}",
            c.config, c.groups, c.median_normalized_loss, c.median_percentile
        );
    }
    if let Some(s) = &summary.split_slice {
        println!(
            "split-slice vs standard over {} pairs: median L1 {:.4e} vs {:.4e}, median normalized reduction {:.4}",
            s.pairs, s.split_slice_median_l1, s.standard_median_l1, s.median_normalized_reduction
        );
    }
    Ok(())
}
