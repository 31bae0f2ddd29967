//! Temporal-contrast spike encoders (TBR, SF, MW) and their reconstruction.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LseError, Result};
use crate::signal::{RealWindow, Sample};
use crate::spikes::SpikeTrain;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Tbr,
    Sf,
    Mw,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 3] = [BaselineMethod::Tbr, BaselineMethod::Sf, BaselineMethod::Mw];

    pub fn label(self) -> &'static str {
        match self {
            BaselineMethod::Tbr => "TBR",
            BaselineMethod::Sf => "SF",
            BaselineMethod::Mw => "MW",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum BaselineParams {
    /// Threshold `μ(x') + δ σ(x')` over first-order differences.
    Tbr { delta: f64 },
    Sf { threshold: f64 },
    /// Moving-window baseline of `window` samples.
    Mw { threshold: f64, window: usize },
}

impl BaselineParams {
    /// Optimal grid points reported for the reference dataset.
    pub fn reference(method: BaselineMethod) -> Self {
        match method {
            BaselineMethod::Tbr => BaselineParams::Tbr { delta: 0.005 },
            BaselineMethod::Sf => BaselineParams::Sf { threshold: 0.2 },
            BaselineMethod::Mw => BaselineParams::Mw {
                threshold: 0.06,
                window: 3,
            },
        }
    }

    pub fn method(&self) -> BaselineMethod {
        match self {
            BaselineParams::Tbr { .. } => BaselineMethod::Tbr,
            BaselineParams::Sf { .. } => BaselineMethod::Sf,
            BaselineParams::Mw { .. } => BaselineMethod::Mw,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BaselineParams::Tbr { delta } if !(delta > 0.0) => {
                Err(LseError::InvalidInput(format!("TBR delta must be positive, got {delta}")))
            }
            BaselineParams::Sf { threshold } | BaselineParams::Mw { threshold, .. } if !(threshold > 0.0) => {
                Err(LseError::InvalidInput(format!("threshold must be positive, got {threshold}")))
            }
            BaselineParams::Mw { window, .. } if window < 2 => {
                Err(LseError::InvalidInput(format!("MW window must be at least 2, got {window}")))
            }
            _ => Ok(()),
        }
    }

    pub fn encode(&self, x: &[f64]) -> BaselineEncoding {
        match *self {
            BaselineParams::Tbr { delta } => encode_tbr(x, delta),
            BaselineParams::Sf { threshold } => encode_sf(x, threshold),
            BaselineParams::Mw { threshold, window } => encode_mw(x, threshold, window),
        }
    }
}

impl fmt::Display for BaselineParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineParams::Tbr { delta } => write!(f, "TBR(delta={delta})"),
            BaselineParams::Sf { threshold } => write!(f, "SF(threshold={threshold})"),
            BaselineParams::Mw { threshold, window } => write!(f, "MW(threshold={threshold}, window={window})"),
        }
    }
}

/// One encoded channel plus what the decoder needs to undo it.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineEncoding {
    pub spikes: Vec<i8>,
    pub effective_threshold: f64,
    pub x0: f64,
}

fn first(x: &[f64]) -> f64 {
    x.first().copied().unwrap_or(0.0)
}

/// Threshold-based representation. The threshold is the mean plus `delta`
/// standard deviations of the signed first-order differences, floored at 0.
pub fn encode_tbr(x: &[f64], delta: f64) -> BaselineEncoding {
    let mut spikes = vec![0i8; x.len()];
    if x.len() < 2 {
        return BaselineEncoding {
            spikes,
            effective_threshold: 0.0,
            x0: first(x),
        };
    }
    let diffs: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let n = diffs.len() as f64;
    let mu = diffs.iter().sum::<f64>() / n;
    let sigma = (diffs.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = (mu + delta * sigma).max(0.0);
    for (k, d) in diffs.iter().enumerate() {
        if d.abs() > threshold {
            spikes[k + 1] = if *d > 0.0 { 1 } else { -1 };
        }
    }
    BaselineEncoding {
        spikes,
        effective_threshold: threshold,
        x0: x[0],
    }
}

/// Step-forward encoding: the baseline jumps to the current sample whenever
/// it fires.
pub fn encode_sf(x: &[f64], threshold: f64) -> BaselineEncoding {
    let mut spikes = vec![0i8; x.len()];
    let mut base = first(x);
    for k in 1..x.len() {
        if x[k] - base > threshold {
            spikes[k] = 1;
            base = x[k];
        } else if base - x[k] > threshold {
            spikes[k] = -1;
            base = x[k];
        }
    }
    BaselineEncoding {
        spikes,
        effective_threshold: threshold,
        x0: first(x),
    }
}

/// Moving-window encoding: the baseline at step `k` is the mean of the last
/// `min(k + 1, window)` samples, current one included.
pub fn encode_mw(x: &[f64], threshold: f64, window: usize) -> BaselineEncoding {
    let window = window.max(1);
    let mut spikes = vec![0i8; x.len()];
    for k in 1..x.len() {
        let lo = (k + 1).saturating_sub(window);
        let base = x[lo..=k].iter().sum::<f64>() / (k + 1 - lo) as f64;
        if x[k] - base > threshold {
            spikes[k] = 1;
        } else if base - x[k] > threshold {
            spikes[k] = -1;
        }
    }
    BaselineEncoding {
        spikes,
        effective_threshold: threshold,
        x0: first(x),
    }
}

/// Threshold-weighted cumulative sum from the stored first sample, clipped
/// to `[0, 1]`.
pub fn decode_temporal_contrast(enc: &BaselineEncoding) -> Vec<f64> {
    let mut level = enc.x0;
    enc.spikes
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            if k > 0 {
                level += s as f64 * enc.effective_threshold;
            }
            level.clamp(0.0, 1.0)
        })
        .collect()
}

/// Encodes both channels of a window independently and reconstructs it.
pub fn encode_window(params: &BaselineParams, w: &RealWindow) -> (SpikeTrain, Vec<f64>) {
    let mut spikes = Vec::with_capacity(2 * w.len);
    let mut recon = Vec::with_capacity(2 * w.len);
    for c in 0..2 {
        let enc = params.encode(w.channel(c));
        recon.extend(decode_temporal_contrast(&enc));
        spikes.extend(enc.spikes);
    }
    (SpikeTrain::new(spikes, w.len), recon)
}

/// Inclusive arithmetic range `start, start + step, ...` up to `stop`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridRange {
    pub fn new(start: f64, stop: f64, step: f64) -> Self {
        Self { start, stop, step }
    }

    pub fn values(&self) -> Vec<f64> {
        if !(self.step > 0.0) || self.stop < self.start {
            return if self.stop == self.start { vec![self.start] } else { Vec::new() };
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        // Rounded to suppress accumulated binary error (0.001 * 3 etc.).
        (0..n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect()
    }
}

/// Search space of each method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub tbr_delta: GridRange,
    pub sf_threshold: GridRange,
    pub mw_threshold: GridRange,
    pub mw_window: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            tbr_delta: GridRange::new(0.001, 0.01, 0.001),
            sf_threshold: GridRange::new(0.05, 0.3, 0.05),
            mw_threshold: GridRange::new(0.01, 0.6, 0.05),
            mw_window: vec![2, 3, 4],
        }
    }
}

impl GridConfig {
    pub fn points(&self, method: BaselineMethod) -> Vec<BaselineParams> {
        match method {
            BaselineMethod::Tbr => self
                .tbr_delta
                .values()
                .into_iter()
                .map(|delta| BaselineParams::Tbr { delta })
                .collect(),
            BaselineMethod::Sf => self
                .sf_threshold
                .values()
                .into_iter()
                .map(|threshold| BaselineParams::Sf { threshold })
                .collect(),
            BaselineMethod::Mw => self
                .mw_threshold
                .values()
                .into_iter()
                .flat_map(|threshold| {
                    self.mw_window
                        .iter()
                        .map(move |&window| BaselineParams::Mw { threshold, window })
                })
                .collect(),
        }
    }
}

/// Mean per-window reconstruction MSE of `params` over `samples`.
pub fn mean_reconstruction_mse(params: &BaselineParams, samples: &[Sample]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let total: f64 = samples
        .par_iter()
        .map(|s| {
            let (_, recon) = encode_window(params, &s.window);
            let n = recon.len() as f64;
            recon
                .iter()
                .zip(&s.window.values)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / n
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    total / samples.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSearchResult {
    pub best: BaselineParams,
    pub best_mse: f64,
    /// Every evaluated point with its mean MSE, in grid order.
    pub evaluations: Vec<(BaselineParams, f64)>,
}

/// Exhaustive search for the grid point with the lowest mean reconstruction
/// MSE. Ties keep the earliest point.
pub fn grid_search(grid: &[BaselineParams], samples: &[Sample]) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(LseError::InvalidInput("empty parameter grid".into()));
    }
    if samples.is_empty() {
        return Err(LseError::InvalidInput("grid search needs at least one window".into()));
    }
    for p in grid {
        p.validate()?;
    }
    let evaluations: Vec<(BaselineParams, f64)> =
        grid.iter().map(|p| (*p, mean_reconstruction_mse(p, samples))).collect();
    let (best, best_mse) = evaluations
        .iter()
        .copied()
        .fold(None::<(BaselineParams, f64)>, |acc, (p, m)| match acc {
            Some((_, bm)) if bm <= m => acc,
            _ => Some((p, m)),
        })
        .expect("non-empty grid");
    Ok(GridSearchResult {
        best,
        best_mse,
        evaluations,
    })
}

/// CSV with columns `method, delta, threshold, window, mean_mse, optimal`.
pub fn write_grid_csv<W: Write>(out: W, results: &[GridSearchResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "delta", "threshold", "window", "mean_mse", "optimal"])?;
    for r in results {
        for (p, mse) in &r.evaluations {
            let (delta, threshold, window) = match *p {
                BaselineParams::Tbr { delta } => (delta.to_string(), String::new(), String::new()),
                BaselineParams::Sf { threshold } => (String::new(), threshold.to_string(), String::new()),
                BaselineParams::Mw { threshold, window } => (String::new(), threshold.to_string(), window.to_string()),
            };
            let optimal = if *p == r.best { "1" } else { "0" };
            w.write_record([p.method().label(), &delta, &threshold, &window, &mse.to_string(), optimal])?;
        }
    }
    w.flush().map_err(|e| LseError::Csv(e.into()))?;
    Ok(())
}
