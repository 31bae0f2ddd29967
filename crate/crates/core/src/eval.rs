//! Per-window metrics, aggregate reports, and the experiment sweeps.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{encode_window, BaselineParams};
use crate::dataset::{build_snr_test_set, Dataset};
use crate::error::{io_err, LseError, Result};
use crate::model::{LseModel, ModelConfig};
use crate::signal::{GeneratorConfig, Sample};
use crate::spectrum::dft_magnitudes;
use crate::spikes::SpikeTrain;
use crate::train::{evaluate_loss, train_model, TrainConfig};

fn check_pair(x: &[f64], x_hat: &[f64]) -> Result<()> {
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(LseError::Structure(format!(
            "metric inputs have lengths {} and {}",
            x.len(),
            x_hat.len()
        )));
    }
    Ok(())
}

/// Root mean squared error over all `2K` values.
pub fn rec_rmse(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    check_pair(x, x_hat)?;
    let mse = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    Ok(mse.sqrt())
}

/// RMSE between DFT magnitude spectra of two `(2, K)` windows read as
/// `row0 + j·row1`, both scaled by the peak magnitude of `x`.
pub fn dft_mag_rmse(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    check_pair(x, x_hat)?;
    if !x.len().is_multiple_of(2) {
        return Err(LseError::Structure("windows must have two rows".into()));
    }
    let k = x.len() / 2;
    let mx = dft_magnitudes(&x[..k], &x[k..]);
    let mh = dft_magnitudes(&x_hat[..k], &x_hat[k..]);
    let peak = mx.iter().cloned().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let mse = mx.iter().zip(&mh).map(|(a, b)| ((a - b) * scale).powi(2)).sum::<f64>() / k as f64;
    Ok(mse.sqrt())
}

/// Fraction of zero entries.
pub fn sparsity(z: &SpikeTrain) -> f64 {
    z.sparsity()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub rec_rmse: f64,
    pub dft_rmse: f64,
    pub sparsity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freq_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amp_rmse: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(LseError::Structure("no values to aggregate".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    /// Snapshot of the evaluated configuration.
    pub config: String,
    pub n_windows: usize,
    pub rec_rmse: Stat,
    pub dft_rmse: Stat,
    pub sparsity: Stat,
    pub freq_rmse: Option<Stat>,
    pub amp_rmse: Option<Stat>,
    pub per_window: Vec<WindowMetrics>,
}

impl MetricsReport {
    pub fn from_windows(method: String, config: String, per_window: Vec<WindowMetrics>) -> Result<Self> {
        if per_window.is_empty() {
            return Err(LseError::Structure(format!("{method}: cannot report on an empty test set")));
        }
        let col = |f: fn(&WindowMetrics) -> f64| per_window.iter().map(f).collect::<Vec<_>>();
        let opt = |f: fn(&WindowMetrics) -> Option<f64>| -> Result<Option<Stat>> {
            let v: Option<Vec<f64>> = per_window.iter().map(f).collect();
            v.map(|v| Stat::of(&v)).transpose()
        };
        Ok(Self {
            n_windows: per_window.len(),
            rec_rmse: Stat::of(&col(|w| w.rec_rmse))?,
            dft_rmse: Stat::of(&col(|w| w.dft_rmse))?,
            sparsity: Stat::of(&col(|w| w.sparsity))?,
            freq_rmse: opt(|w| w.freq_rmse)?,
            amp_rmse: opt(|w| w.amp_rmse)?,
            method,
            config,
            per_window,
        })
    }
}

pub fn evaluate_baseline(params: &BaselineParams, samples: &[Sample]) -> Result<MetricsReport> {
    params.validate()?;
    let per_window = samples
        .par_iter()
        .map(|s| {
            let (z, recon) = encode_window(params, &s.window);
            Ok(WindowMetrics {
                rec_rmse: rec_rmse(&s.window.values, &recon)?,
                dft_rmse: dft_mag_rmse(&s.window.values, &recon)?,
                sparsity: z.sparsity(),
                freq_rmse: None,
                amp_rmse: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_windows(params.method().label().into(), params.to_string(), per_window)
}

pub fn evaluate_lse(model: &LseModel<f32>, samples: &[Sample], batch_size: usize) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(LseError::Structure("LSE: cannot report on an empty test set".into()));
    }
    let preds = model.predict(samples, batch_size)?;
    let per_window = samples
        .iter()
        .zip(&preds)
        .map(|(s, p)| {
            Ok(WindowMetrics {
                rec_rmse: rec_rmse(&s.window.values, &p.x_hat)?,
                dft_rmse: dft_mag_rmse(&s.window.values, &p.x_hat)?,
                sparsity: p.spikes.sparsity(),
                freq_rmse: Some(rec_rmse(&s.target.freqs, &p.freqs)?),
                amp_rmse: Some(rec_rmse(&s.target.amps, &p.amps)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let config = format!("tau={} alpha={}", model.config.tau, model.config.surrogate_alpha);
    MetricsReport::from_windows("LSE".into(), config, per_window)
}

const REPORT_HEADER: [&str; 13] = [
    "method",
    "config",
    "n_windows",
    "rec_rmse_mean",
    "rec_rmse_std",
    "dft_rmse_mean",
    "dft_rmse_std",
    "sparsity_mean",
    "sparsity_std",
    "freq_rmse_mean",
    "freq_rmse_std",
    "amp_rmse_mean",
    "amp_rmse_std",
];

/// One row per report; frequency and amplitude columns are empty for baselines.
pub fn write_reports_csv(reports: &[MetricsReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(REPORT_HEADER)?;
    let opt = |s: Option<Stat>| match s {
        Some(s) => [s.mean.to_string(), s.std.to_string()],
        None => [String::new(), String::new()],
    };
    for r in reports {
        let [fm, fs] = opt(r.freq_rmse);
        let [am, as_] = opt(r.amp_rmse);
        w.write_record([
            r.method.clone(),
            r.config.clone(),
            r.n_windows.to_string(),
            r.rec_rmse.mean.to_string(),
            r.rec_rmse.std.to_string(),
            r.dft_rmse.mean.to_string(),
            r.dft_rmse.std.to_string(),
            r.sparsity.mean.to_string(),
            r.sparsity.std.to_string(),
            fm,
            fs,
            am,
            as_,
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Full report as JSON; per-window arrays only when `per_window` is set.
pub fn write_report_json(report: &MetricsReport, per_window: bool, path: &Path) -> Result<()> {
    let mut r = report.clone();
    if !per_window {
        r.per_window.clear();
    }
    fs::write(path, serde_json::to_string_pretty(&r)?).map_err(io_err(path))
}

/// Whitespace-separated `x y` lines, plus `x y std` when `std` is given.
pub fn write_plot_data(path: &Path, x: &[f64], y: &[f64], std: Option<&[f64]>) -> Result<()> {
    if x.len() != y.len() || std.is_some_and(|s| s.len() != x.len()) {
        return Err(LseError::Structure("plot columns differ in length".into()));
    }
    let mut out = String::new();
    for i in 0..x.len() {
        match std {
            Some(s) => out.push_str(&format!("{} {} {}\n", x[i], y[i], s[i])),
            None => out.push_str(&format!("{} {}\n", x[i], y[i])),
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub method: String,
    pub params: String,
    pub sparsity: f64,
    pub rec_rmse: f64,
}

/// Mean sparsity and reconstruction RMSE of every grid point.
pub fn tradeoff_curve(grid: &[BaselineParams], samples: &[Sample]) -> Result<Vec<TradeoffPoint>> {
    grid.iter()
        .map(|p| {
            let r = evaluate_baseline(p, samples)?;
            Ok(TradeoffPoint {
                method: r.method,
                params: r.config,
                sparsity: r.sparsity.mean,
                rec_rmse: r.rec_rmse.mean,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub lambda: f64,
    pub seeds: Vec<u64>,
    pub sparsity_mean: f64,
    pub sparsity_std: f64,
    pub val_mse_mean: f64,
    pub val_mse_std: f64,
}

/// Trains one model per `(λ, seed)` and reports validation sparsity and
/// reconstruction MSE of each best checkpoint, averaged over seeds.
pub fn lambda_sweep(
    dataset: &Dataset,
    lambdas: &[f64],
    seeds: &[u64],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<LambdaPoint>> {
    if seeds.is_empty() {
        return Err(LseError::InvalidInput("lambda sweep needs at least one seed".into()));
    }
    let jobs: Vec<(f64, u64)> = lambdas.iter().flat_map(|&l| seeds.iter().map(move |&s| (l, s))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(lambda, seed)| {
            let cfg = TrainConfig {
                lambda,
                seed,
                ..train_cfg.clone()
            };
            let t = train_model::<f32>(&dataset.train, &dataset.val, model_cfg, &cfg)?;
            let val = evaluate_loss(&t.model, &dataset.val, cfg.batch_size, lambda)?;
            Ok((1.0 - val.omega, val.l1))
        })
        .collect::<Result<Vec<_>>>()?;
    lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let chunk = &runs[i * seeds.len()..(i + 1) * seeds.len()];
            let sp = Stat::of(&chunk.iter().map(|r| r.0).collect::<Vec<_>>())?;
            let mse = Stat::of(&chunk.iter().map(|r| r.1).collect::<Vec<_>>())?;
            Ok(LambdaPoint {
                lambda,
                seeds: seeds.to_vec(),
                sparsity_mean: sp.mean,
                sparsity_std: sp.std,
                val_mse_mean: mse.mean,
                val_mse_std: mse.std,
            })
        })
        .collect()
}

pub enum Method<'a> {
    Baseline(BaselineParams),
    Lse(&'a LseModel<f32>),
}

impl Method<'_> {
    pub fn label(&self) -> String {
        match self {
            Method::Baseline(p) => p.method().label().into(),
            Method::Lse(_) => "LSE".into(),
        }
    }

    pub fn evaluate(&self, samples: &[Sample]) -> Result<MetricsReport> {
        match self {
            Method::Baseline(p) => evaluate_baseline(p, samples),
            Method::Lse(m) => evaluate_lse(m, samples, 256),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub snr_db: f64,
    pub method: String,
    pub rec_rmse: Stat,
    pub dft_rmse: Stat,
}

/// Evaluates every method on a fresh single-SNR test set per entry of `snrs`.
pub fn snr_sweep(
    methods: &[Method<'_>],
    snrs: &[f64],
    n_windows: usize,
    generator: &GeneratorConfig,
    seed: u64,
) -> Result<Vec<SnrRow>> {
    let mut rows = Vec::new();
    for &snr in snrs {
        let test = build_snr_test_set(generator, snr, n_windows, seed)?;
        for m in methods {
            let r = m.evaluate(&test)?;
            rows.push(SnrRow {
                snr_db: snr,
                method: r.method,
                rec_rmse: r.rec_rmse,
                dft_rmse: r.dft_rmse,
            });
        }
    }
    Ok(rows)
}

pub fn write_snr_csv(rows: &[SnrRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["snr_db", "method", "rec_rmse_mean", "rec_rmse_std", "dft_rmse_mean", "dft_rmse_std"])?;
    for r in rows {
        w.write_record([
            r.snr_db.to_string(),
            r.method.clone(),
            r.rec_rmse.mean.to_string(),
            r.rec_rmse.std.to_string(),
            r.dft_rmse.mean.to_string(),
            r.dft_rmse.std.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_lambda_csv(points: &[LambdaPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "n_seeds", "sparsity_mean", "sparsity_std", "val_mse_mean", "val_mse_std"])?;
    for p in points {
        w.write_record([
            p.lambda.to_string(),
            p.seeds.len().to_string(),
            p.sparsity_mean.to_string(),
            p.sparsity_std.to_string(),
            p.val_mse_mean.to_string(),
            p.val_mse_std.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(LseError::InvalidInput("rank correlation needs two equal series of length >= 2".into()));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Number of adjacent pairs where `v` increases.
pub fn increases(v: &[f64]) -> usize {
    v.windows(2).filter(|w| w[1] > w[0]).count()
}

/// Number of adjacent pairs where `v` decreases.
pub fn decreases(v: &[f64]) -> usize {
    v.windows(2).filter(|w| w[1] < w[0]).count()
}
