//! Command-line front end. Every subcommand writes its artifacts and the
//! resolved configuration into the run directory.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baseline::{grid_search, write_grid_csv, BaselineMethod};
use crate::checkpoint::{load_checkpoint, save_checkpoint, TrainingMeta};
use crate::config::RunConfig;
use crate::dataset::{append_ext, build_dataset, Dataset, Split};
use crate::error::{io_err, LseError, Result};
use crate::eval::{
    evaluate_baseline, evaluate_lse, lambda_sweep, snr_sweep, tradeoff_curve, write_lambda_csv, write_plot_data,
    write_report_json, write_reports_csv, write_snr_csv, Method,
};
use crate::train::{train, write_log, Precision};

/// Thread count override for data-parallel work.
pub const THREADS_ENV: &str = "LSE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "lse", version, about = "Learned spike encoding for RF channel windows")]
pub struct Cli {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory receiving all outputs.
    #[arg(long, global = true, default_value = "run")]
    pub run_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset.
    Generate {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        windows_per_count: Option<usize>,
    },
    /// Grid-search the temporal-contrast baselines.
    Gridsearch {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train the encoder, decoder and SNN.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, value_parser = parse_precision)]
        precision: Option<Precision>,
    },
    /// Report metrics for a checkpoint and the configured baselines.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint path without the `.json` / `.bin` suffix.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write the baseline sparsity/error trade-off curves.
        #[arg(long)]
        tradeoff: bool,
    },
    /// Train across λ values and seeds.
    SweepLambda {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Evaluate on fresh single-SNR test sets.
    SweepSnr {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        windows: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset stem, or a split name (`train`, `val`, `test`) to use the
    /// run directory's dataset.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub split: Option<Split>,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(format!("unknown precision {other:?} (expected f32 or f64)")),
    }
}

impl DataArgs {
    fn resolve(&self, run_dir: &Path, default: Split) -> Result<(PathBuf, Split)> {
        let default_stem = run_dir.join("dataset");
        match self.dataset.as_deref() {
            None => Ok((default_stem, self.split.unwrap_or(default))),
            Some(s) => match s.parse::<Split>() {
                Ok(split) => Ok((default_stem, split)),
                Err(_) => Ok((PathBuf::from(s), self.split.unwrap_or(default))),
            },
        }
    }
}

fn load_dataset(stem: &Path) -> Result<Dataset> {
    let manifest = append_ext(stem, "json");
    if !manifest.exists() {
        return Err(LseError::InvalidInput(format!(
            "dataset manifest {} not found; run `lse generate` first",
            manifest.display()
        )));
    }
    Dataset::load(stem)
}

fn resolve_checkpoint(path: &Path, run_dir: &Path) -> PathBuf {
    if append_ext(path, "json").exists() || path.is_absolute() {
        path.to_path_buf()
    } else {
        run_dir.join(path)
    }
}

pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| LseError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let dir = cli.run_dir.as_path();
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    match cli.command {
        Command::Generate {
            seed,
            windows_per_count,
        } => {
            if let Some(s) = seed {
                cfg.generator.seed = s;
            }
            if let Some(w) = windows_per_count {
                cfg.generator.windows_per_count = w;
            }
            cfg.validate()?;
            cfg.write_resolved(dir)?;
            let ds = build_dataset(&cfg.generator)?;
            let m = ds.save(&dir.join("dataset"))?;
            log::info!(
                "wrote {} windows ({} / {} / {})",
                ds.len(),
                m.counts.train,
                m.counts.val,
                m.counts.test
            );
        }
        Command::Gridsearch { data } => {
            cfg.write_resolved(dir)?;
            let (stem, split) = data.resolve(dir, Split::Train)?;
            let ds = load_dataset(&stem)?;
            let samples = ds.split(split);
            let results = BaselineMethod::ALL
                .iter()
                .map(|&m| grid_search(&cfg.baselines.grid.points(m), samples))
                .collect::<Result<Vec<_>>>()?;
            let path = dir.join("gridsearch.csv");
            let file = fs::File::create(&path).map_err(io_err(&path))?;
            write_grid_csv(file, &results)?;
            let best: Vec<_> = results.iter().map(|r| r.best).collect();
            let path = dir.join("gridsearch_optimum.json");
            fs::write(&path, serde_json::to_string_pretty(&best)?).map_err(io_err(&path))?;
            for r in &results {
                log::info!("{} (mse {:.5})", r.best, r.best_mse);
            }
        }
        Command::Train {
            data,
            lambda,
            seed,
            epochs,
            batch_size,
            precision,
        } => {
            let t = &mut cfg.training;
            if let Some(v) = lambda {
                t.lambda = v;
            }
            if let Some(v) = seed {
                t.seed = v;
            }
            if let Some(v) = epochs {
                t.max_epochs = v;
            }
            if let Some(v) = batch_size {
                t.batch_size = v;
            }
            if let Some(v) = precision {
                t.precision = v;
            }
            cfg.validate()?;
            cfg.write_resolved(dir)?;
            let (stem, _) = data.resolve(dir, Split::Train)?;
            let ds = load_dataset(&stem)?;
            let trained = train(&ds, &cfg.model, &cfg.training)?;
            write_log(&trained.report.records, &dir.join("train_log.csv"))?;
            let meta = TrainingMeta {
                seed: cfg.training.seed,
                lambda: cfg.training.lambda,
                batch_size: cfg.training.batch_size,
                learning_rate: cfg.training.learning_rate,
                epochs_run: trained.report.epochs_run,
                best_epoch: trained.report.best_epoch,
                best_val_loss: trained.report.best_val.total,
            };
            save_checkpoint(&trained.model, Some(&meta), &dir.join("best.ckpt"))?;
            log::info!(
                "best epoch {} of {}, validation loss {:.5}",
                meta.best_epoch,
                meta.epochs_run,
                meta.best_val_loss
            );
        }
        Command::Eval {
            data,
            checkpoint,
            tradeoff,
        } => {
            cfg.write_resolved(dir)?;
            let (stem, split) = data.resolve(dir, Split::Test)?;
            let ds = load_dataset(&stem)?;
            let samples = ds.split(split);
            let mut reports = Vec::new();
            if let Some(ck) = checkpoint {
                let ck = load_checkpoint(&resolve_checkpoint(&ck, dir))?;
                reports.push(evaluate_lse(&ck.model, samples, cfg.evaluation.batch_size)?);
            }
            for p in &cfg.baselines.params {
                reports.push(evaluate_baseline(p, samples)?);
            }
            write_reports_csv(&reports, &dir.join("metrics.csv"))?;
            for r in &reports {
                let path = dir.join(format!("metrics_{}.json", r.method.to_lowercase()));
                write_report_json(r, cfg.evaluation.per_window, &path)?;
                log::info!(
                    "{}: rec {:.4}, dft {:.4}, sparsity {:.3}",
                    r.method,
                    r.rec_rmse.mean,
                    r.dft_rmse.mean,
                    r.sparsity.mean
                );
            }
            if tradeoff {
                for m in BaselineMethod::ALL {
                    let pts = tradeoff_curve(&cfg.baselines.grid.points(m), samples)?;
                    let x: Vec<f64> = pts.iter().map(|p| p.sparsity).collect();
                    let y: Vec<f64> = pts.iter().map(|p| p.rec_rmse).collect();
                    let path = dir.join(format!("tradeoff_{}.dat", m.label().to_lowercase()));
                    write_plot_data(&path, &x, &y, None)?;
                }
            }
        }
        Command::SweepLambda { data, lambdas, seeds } => {
            if let Some(l) = lambdas {
                cfg.evaluation.lambdas = l;
            }
            if let Some(s) = seeds {
                cfg.evaluation.lambda_seeds = s;
            }
            cfg.validate()?;
            cfg.write_resolved(dir)?;
            let (stem, _) = data.resolve(dir, Split::Train)?;
            let ds = load_dataset(&stem)?;
            let ev = &cfg.evaluation;
            let points = lambda_sweep(&ds, &ev.lambdas, &ev.lambda_seeds, &cfg.model, &cfg.training)?;
            write_lambda_csv(&points, &dir.join("lambda_sweep.csv"))?;
            let x: Vec<f64> = points.iter().map(|p| p.lambda).collect();
            let sp: Vec<f64> = points.iter().map(|p| p.sparsity_mean).collect();
            let sps: Vec<f64> = points.iter().map(|p| p.sparsity_std).collect();
            let mse: Vec<f64> = points.iter().map(|p| p.val_mse_mean).collect();
            let mses: Vec<f64> = points.iter().map(|p| p.val_mse_std).collect();
            write_plot_data(&dir.join("lambda_sparsity.dat"), &x, &sp, Some(&sps))?;
            write_plot_data(&dir.join("lambda_val_mse.dat"), &x, &mse, Some(&mses))?;
        }
        Command::SweepSnr { checkpoint, windows } => {
            if let Some(w) = windows {
                cfg.evaluation.snr_windows = w;
            }
            cfg.validate()?;
            cfg.write_resolved(dir)?;
            let model = match checkpoint {
                Some(ck) => Some(load_checkpoint(&resolve_checkpoint(&ck, dir))?.model),
                None => None,
            };
            let mut methods: Vec<Method<'_>> = cfg.baselines.params.iter().map(|&p| Method::Baseline(p)).collect();
            if let Some(m) = &model {
                methods.push(Method::Lse(m));
            }
            let ev = &cfg.evaluation;
            let rows = snr_sweep(&methods, &ev.snr_db, ev.snr_windows, &cfg.generator, ev.snr_seed)?;
            write_snr_csv(&rows, &dir.join("snr_sweep.csv"))?;
            for m in &methods {
                let label = m.label();
                let mine: Vec<_> = rows.iter().filter(|r| r.method == label).collect();
                let x: Vec<f64> = mine.iter().map(|r| r.snr_db).collect();
                let y: Vec<f64> = mine.iter().map(|r| r.rec_rmse.mean).collect();
                let s: Vec<f64> = mine.iter().map(|r| r.rec_rmse.std).collect();
                let path = dir.join(format!("snr_{}.dat", label.to_lowercase()));
                write_plot_data(&path, &x, &y, Some(&s))?;
            }
        }
    }
    Ok(())
}
