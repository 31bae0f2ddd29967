//! Composite loss, the training loop with early stopping, and the epoch log.

use std::path::Path;

use lse_autodiff::{lit, Adam, AdamConfig, Graph, Real, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{io_err, LseError, Result};
use crate::model::{batch_input, batch_targets, Forward, LseModel, Mode, ModelConfig};
use crate::signal::Sample;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the spike-density penalty.
    pub lambda: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 1e-3,
            lambda: 0.2,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(LseError::InvalidInput(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(LseError::InvalidInput("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(LseError::InvalidInput("learning_rate must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(LseError::InvalidInput("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub omega: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l1: f64, l2: f64, l3: f64, omega: f64, lambda: f64) -> Self {
        Self {
            l1,
            l2,
            l3,
            omega,
            total: l1 + l2 + l3 + lambda * omega,
        }
    }
}

fn mean_sq(a: &[f64], b: &[f64], what: &str) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(LseError::Structure(format!("{what}: lengths {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// Loss over flattened arrays; every term is a mean over its elements.
#[allow(clippy::too_many_arguments)]
pub fn compute_loss(
    x: &[f64],
    x_hat: &[f64],
    f: &[f64],
    f_hat: &[f64],
    a: &[f64],
    a_hat: &[f64],
    z: &[f64],
    lambda: f64,
) -> Result<LossBreakdown> {
    let l1 = mean_sq(x, x_hat, "reconstruction")?;
    let l2 = mean_sq(f, f_hat, "frequency")?;
    let l3 = mean_sq(a, a_hat, "amplitude")?;
    if z.len() != x.len() {
        return Err(LseError::Structure(format!("spikes {} vs input {}", z.len(), x.len())));
    }
    let omega = z.iter().map(|v| v.abs()).sum::<f64>() / z.len() as f64;
    Ok(LossBreakdown::new(l1, l2, l3, omega, lambda))
}

/// Loss terms as graph nodes.
pub struct GraphLoss {
    pub l1: Var,
    pub l2: Var,
    pub l3: Var,
    pub omega: Var,
    pub total: Var,
}

impl GraphLoss {
    pub fn build<T: Real>(g: &mut Graph<T>, fw: &Forward<T>, x: Var, f: Var, a: Var, lambda: f64) -> Result<Self> {
        let l1 = g.mse(fw.x_hat, x)?;
        let l2 = g.mse(fw.f_hat, f)?;
        let l3 = g.mse(fw.a_hat, a)?;
        let dense = g.abs(fw.z);
        let omega = g.mean(dense);
        let weighted = g.scale(omega, lit(lambda));
        let total = g.add(l1, l2)?;
        let total = g.add(total, l3)?;
        let total = g.add(total, weighted)?;
        Ok(Self {
            l1,
            l2,
            l3,
            omega,
            total,
        })
    }

    pub fn values<T: Real>(&self, g: &Graph<T>, lambda: f64) -> LossBreakdown {
        let v = |var: Var| g.value(var).item().to_f64().unwrap_or(f64::NAN);
        LossBreakdown::new(v(self.l1), v(self.l2), v(self.l3), v(self.omega), lambda)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val: LossBreakdown,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

pub struct Trained<T> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: LseModel<T>,
    pub report: TrainReport,
}

/// Sample-weighted running mean of batch losses.
#[derive(Default)]
struct Accumulator {
    sum: [f64; 4],
    count: usize,
}

impl Accumulator {
    fn add(&mut self, l: &LossBreakdown, n: usize) {
        for (s, v) in self.sum.iter_mut().zip([l.l1, l.l2, l.l3, l.omega]) {
            *s += v * n as f64;
        }
        self.count += n;
    }

    fn finish(&self, lambda: f64) -> LossBreakdown {
        let c = self.count.max(1) as f64;
        LossBreakdown::new(self.sum[0] / c, self.sum[1] / c, self.sum[2] / c, self.sum[3] / c, lambda)
    }
}

/// One optimizer step; returns the batch loss measured before the update.
pub fn train_step<T: Real>(
    model: &mut LseModel<T>,
    adam: &mut Adam<T>,
    batch: &[Sample],
    lambda: f64,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let x = g.constant(batch_input::<T>(batch)?);
    let (f, a) = batch_targets::<T>(batch, model.config.outputs)?;
    let (f, a) = (g.constant(f), g.constant(a));
    let fw = model.forward(&mut g, x, Mode::Train)?;
    let loss = GraphLoss::build(&mut g, &fw, x, f, a, lambda)?;
    let values = loss.values(&g, lambda);
    if !values.total.is_finite() {
        return Ok(values);
    }
    let mut grads = g.backward(loss.total)?;
    let grads: Vec<Tensor<T>> = fw
        .params
        .iter()
        .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(g.shape(v).to_vec())))
        .collect();
    let grad_refs: Vec<&Tensor<T>> = grads.iter().collect();
    adam.step(&mut model.params_mut(), &grad_refs)?;
    model.apply_batch_stats(&fw.bn_stats)?;
    Ok(values)
}

/// Eval-mode loss over `samples`, in batches.
pub fn evaluate_loss<T: Real>(
    model: &LseModel<T>,
    samples: &[Sample],
    batch_size: usize,
    lambda: f64,
) -> Result<LossBreakdown> {
    if samples.is_empty() {
        return Err(LseError::InvalidInput("cannot evaluate the loss of an empty set".into()));
    }
    let mut acc = Accumulator::default();
    for chunk in samples.chunks(batch_size.max(1)) {
        let mut g = Graph::new();
        let x = g.constant(batch_input::<T>(chunk)?);
        let (f, a) = batch_targets::<T>(chunk, model.config.outputs)?;
        let (f, a) = (g.constant(f), g.constant(a));
        let fw = model.forward(&mut g, x, Mode::Eval)?;
        let loss = GraphLoss::build(&mut g, &fw, x, f, a, lambda)?;
        acc.add(&loss.values(&g, lambda), chunk.len());
    }
    Ok(acc.finish(lambda))
}

/// Trains from a fresh initialization seeded with `cfg.seed`.
pub fn train_model<T: Real>(
    train: &[Sample],
    val: &[Sample],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<Trained<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(LseError::InvalidInput("training needs non-empty train and validation splits".into()));
    }
    let mut model = LseModel::<T>::new(model_cfg.clone(), cfg.seed)?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::new();
    let mut best: Option<(usize, LossBreakdown, LseModel<T>)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;
    let mut stopped_early = false;
    let mut batch: Vec<Sample> = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut acc = Accumulator::default();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(idx.iter().map(|&i| train[i].clone()));
            let loss = train_step(&mut model, &mut adam, &batch, cfg.lambda)?;
            if !loss.total.is_finite() {
                return Err(LseError::NonFinite { epoch, batch: b });
            }
            acc.add(&loss, batch.len());
        }
        let train_loss = acc.finish(cfg.lambda);
        let val_loss = evaluate_loss(&model, val, cfg.batch_size, cfg.lambda)?;
        if !val_loss.total.is_finite() {
            return Err(LseError::NonFinite {
                epoch,
                batch: usize::MAX,
            });
        }
        log::info!(
            "epoch {epoch}: train {:.5} (omega {:.3}), val {:.5} (L1 {:.5}, omega {:.3})",
            train_loss.total,
            train_loss.omega,
            val_loss.total,
            val_loss.l1,
            val_loss.omega
        );
        records.push(EpochRecord {
            epoch,
            split: Split::Train,
            loss: train_loss,
        });
        records.push(EpochRecord {
            epoch,
            split: Split::Val,
            loss: val_loss,
        });
        epochs_run = epoch;
        if best.as_ref().is_none_or(|(_, b, _)| val_loss.total < b.total) {
            best = Some((epoch, val_loss, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_epoch, best_val, model) = best.expect("at least one epoch runs");
    Ok(Trained {
        model,
        report: TrainReport {
            records,
            epochs_run,
            best_epoch,
            best_val,
            stopped_early,
        },
    })
}

/// Trains on the dataset's train split, validating on its val split, at
/// the configured precision. The result is narrowed to `f32`.
pub fn train(dataset: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Trained<f32>> {
    match cfg.precision {
        Precision::F32 => train_model::<f32>(&dataset.train, &dataset.val, model_cfg, cfg),
        Precision::F64 => {
            let t = train_model::<f64>(&dataset.train, &dataset.val, model_cfg, cfg)?;
            Ok(Trained {
                model: t.model.cast(),
                report: t.report,
            })
        }
    }
}

pub fn write_log(records: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "split", "L1", "L2", "L3", "omega", "total"])?;
    for r in records {
        let split = match r.split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        let l = &r.loss;
        w.write_record([
            r.epoch.to_string(),
            split.to_string(),
            l.l1.to_string(),
            l.l2.to_string(),
            l.l3.to_string(),
            l.omega.to_string(),
            l.total.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| LseError::Structure(format!("bad log field {i} in {}", path.display())))
        };
        let split = row.get(1).unwrap_or_default().parse()?;
        out.push(EpochRecord {
            epoch: num(0)? as usize,
            split,
            loss: LossBreakdown {
                l1: num(2)?,
                l2: num(3)?,
                l3: num(4)?,
                omega: num(5)?,
                total: num(6)?,
            },
        });
    }
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{generate_sample, GeneratorConfig};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            channels: 6,
            snn_input: 8,
            snn_hidden: 6,
            ..ModelConfig::default()
        }
    }

    fn samples(n: usize, seed: u64) -> Vec<Sample> {
        let cfg = GeneratorConfig {
            window_len: 16,
            ..GeneratorConfig::default()
        };
        (0..n)
            .map(|i| generate_sample(&cfg, seed, i as u64, 1 + i % 5, None).unwrap())
            .collect()
    }

    #[test]
    fn loss_examples() {
        let x = [0.2, 0.8, 0.5, 0.1];
        let f = [0.3, 0.0];
        let a = [1.0, 0.0];
        let perfect = compute_loss(&x, &x, &f, &f, &a, &a, &[0.0; 4], 0.7).unwrap();
        assert_eq!(perfect.total, 0.0);
        let dense = compute_loss(&x, &x, &f, &f, &a, &a, &[1.0, -1.0, -1.0, 1.0], 0.3).unwrap();
        assert_eq!(dense.omega, 1.0);
        assert_eq!(dense.total, 0.3);
        let worst = compute_loss(&[1.0; 4], &[0.0; 4], &f, &f, &a, &a, &[0.0; 4], 0.0).unwrap();
        assert_eq!(worst.l1, 1.0);
        assert!(compute_loss(&x, &x[..3], &f, &f, &a, &a, &[0.0; 4], 0.0).is_err());
        assert!(compute_loss(&x, &x, &f, &f, &a, &a, &[0.0; 3], 0.0).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { lambda: 1.5, ..ok.clone() },
            TrainConfig { lambda: -0.1, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig { learning_rate: 0.0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn graph_loss_matches_plain_loss() {
        let model = LseModel::<f64>::new(tiny_model(), 3).unwrap();
        let batch = samples(5, 1);
        let mut g = Graph::new();
        let x = g.constant(batch_input::<f64>(&batch).unwrap());
        let (f, a) = batch_targets::<f64>(&batch, 5).unwrap();
        let (fv, av) = (f.data().to_vec(), a.data().to_vec());
        let (f, a) = (g.constant(f), g.constant(a));
        let fw = model.forward(&mut g, x, Mode::Train).unwrap();
        let graph = GraphLoss::build(&mut g, &fw, x, f, a, 0.4).unwrap().values(&g, 0.4);
        let plain = compute_loss(
            g.value(x).data(),
            g.value(fw.x_hat).data(),
            &fv,
            g.value(fw.f_hat).data(),
            &av,
            g.value(fw.a_hat).data(),
            g.value(fw.z).data(),
            0.4,
        )
        .unwrap();
        for (p, q) in [
            (plain.l1, graph.l1),
            (plain.l2, graph.l2),
            (plain.l3, graph.l3),
            (plain.omega, graph.omega),
            (plain.total, graph.total),
        ] {
            assert!((p - q).abs() < 1e-12, "{p} vs {q}");
        }
    }

    #[test]
    fn zero_lambda_removes_the_sparsity_gradient() {
        let model = LseModel::<f64>::new(tiny_model(), 4).unwrap();
        let batch = samples(4, 2);
        let grads = |with_omega: bool| {
            let mut g = Graph::new();
            let x = g.constant(batch_input::<f64>(&batch).unwrap());
            let (f, a) = batch_targets::<f64>(&batch, 5).unwrap();
            let (f, a) = (g.constant(f), g.constant(a));
            let fw = model.forward(&mut g, x, Mode::Train).unwrap();
            let root = if with_omega {
                GraphLoss::build(&mut g, &fw, x, f, a, 0.0).unwrap().total
            } else {
                let l1 = g.mse(fw.x_hat, x).unwrap();
                let l2 = g.mse(fw.f_hat, f).unwrap();
                let l3 = g.mse(fw.a_hat, a).unwrap();
                let s = g.add(l1, l2).unwrap();
                g.add(s, l3).unwrap()
            };
            let gr = g.backward(root).unwrap();
            fw.params.iter().map(|&p| gr.get(p).unwrap().data().to_vec()).collect::<Vec<_>>()
        };
        assert_eq!(grads(true), grads(false));
    }

    #[test]
    fn training_is_reproducible_in_f64() {
        let train = samples(12, 5);
        let val = samples(6, 6);
        let cfg = TrainConfig {
            batch_size: 5,
            max_epochs: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_model::<f64>(&train, &val, &tiny_model(), &cfg).unwrap();
        let b = train_model::<f64>(&train, &val, &tiny_model(), &cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.model, b.model);
        assert_eq!(a.report.records.len(), 6);
    }

    #[test]
    fn every_logged_total_obeys_the_identity() {
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 2,
            lambda: 0.3,
            ..TrainConfig::default()
        };
        let t = train_model::<f64>(&samples(10, 7), &samples(5, 8), &tiny_model(), &cfg).unwrap();
        for r in &t.report.records {
            let l = r.loss;
            assert_eq!(l.total, l.l1 + l.l2 + l.l3 + 0.3 * l.omega);
            for v in [l.l1, l.l2, l.l3, l.omega] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn zero_patience_stops_one_epoch_after_the_best() {
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 40,
            patience: 0,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let t = train_model::<f64>(&samples(8, 9), &samples(4, 10), &tiny_model(), &cfg).unwrap();
        let r = &t.report;
        if r.stopped_early {
            assert_eq!(r.epochs_run, r.best_epoch + 1);
        } else {
            assert_eq!(r.epochs_run, 40);
        }
        let vals: Vec<f64> = r.split_records(Split::Val).map(|e| e.loss.total).collect();
        let best = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(vals[r.best_epoch - 1], best);
    }

    #[test]
    fn log_round_trips() {
        let cfg = TrainConfig {
            batch_size: 4,
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let t = train_model::<f64>(&samples(8, 1), &samples(4, 2), &tiny_model(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_log(&t.report.records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,split,L1,L2,L3,omega,total\n1,train,"));
        assert_eq!(read_log(&path).unwrap(), t.report.records);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let cfg = TrainConfig::default();
        assert!(train_model::<f64>(&[], &samples(2, 1), &tiny_model(), &cfg).is_err());
        assert!(evaluate_loss(&LseModel::<f64>::new(tiny_model(), 0).unwrap(), &[], 4, 0.2).is_err());
    }
}
