//! The learned spike encoder: a conv encoder, the ternary spike bottleneck,
//! a transposed-conv decoder, and a two-headed LIF network regressing
//! normalized frequencies and amplitudes from the spike train.

use lse_autodiff::{lit, BatchNormStats, Graph, Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LseError, Result};
use crate::signal::Sample;
use crate::spikes::SpikeTrain;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Feature maps of the two hidden conv layers.
    pub channels: usize,
    pub kernel: usize,
    pub snn_input: usize,
    pub snn_hidden: usize,
    /// Width of each output head; must equal the generator's `max_components`.
    pub outputs: usize,
    /// Spike threshold of the bottleneck.
    pub tau: f64,
    /// Slope of the arctangent surrogate in the LIF layers.
    pub surrogate_alpha: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub beta_init: f64,
    pub theta_init: f64,
    /// Let the regression losses reach the encoder through the spike train.
    /// When false the SNN sees a detached copy of the spikes.
    pub snn_grad_to_encoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 128,
            kernel: 7,
            snn_input: 128,
            snn_hidden: 64,
            outputs: 5,
            tau: 0.1,
            surrogate_alpha: 2.0,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            beta_init: 0.9,
            theta_init: 1.0,
            snn_grad_to_encoder: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LseError::InvalidInput(m.to_string()));
        if self.channels == 0 || self.snn_input == 0 || self.snn_hidden == 0 || self.outputs == 0 {
            return bad("layer widths must be positive");
        }
        if self.kernel.is_multiple_of(2) {
            return bad("kernel length must be odd");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.surrogate_alpha > 0.0) {
            return bad("surrogate_alpha must be positive");
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return bad("batchnorm momentum must lie in [0, 1] and eps be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

/// One LIF layer: synaptic weights `(out, in)`, per-neuron decay and threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct Lif<T> {
    pub weight: Tensor<T>,
    pub beta: Tensor<T>,
    pub theta: Tensor<T>,
}

/// Three conv layers with batchnorm + tanh after the first two.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack<T> {
    pub convs: [Conv<T>; 3],
    pub norms: [BatchNorm<T>; 2],
    pub transpose: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snn<T> {
    pub input: Lif<T>,
    pub hidden: Lif<T>,
    pub freq_head: Lif<T>,
    pub amp_head: Lif<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LseModel<T> {
    pub config: ModelConfig,
    pub encoder: ConvStack<T>,
    pub decoder: ConvStack<T>,
    pub snn: Snn<T>,
}

const STACK_PARAMS: [&str; 10] = [
    "conv1.weight",
    "conv1.bias",
    "bn1.scale",
    "bn1.shift",
    "conv2.weight",
    "conv2.bias",
    "bn2.scale",
    "bn2.shift",
    "conv3.weight",
    "conv3.bias",
];
const SNN_PARAMS: [&str; 12] = [
    "input.weight",
    "input.beta",
    "input.theta",
    "hidden.weight",
    "hidden.beta",
    "hidden.theta",
    "freq_head.weight",
    "freq_head.beta",
    "freq_head.theta",
    "amp_head.weight",
    "amp_head.beta",
    "amp_head.theta",
];
const STACK_BUFFERS: [&str; 4] = ["bn1.running_mean", "bn1.running_var", "bn2.running_mean", "bn2.running_var"];

fn uniform<T: Real>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| lit(rng.random_range(-bound..=bound)))
}

impl<T: Real> Conv<T> {
    /// Uniform `±1/sqrt(fan_in)` with `fan_in = c_in · kernel`.
    fn init(c_in: usize, c_out: usize, kernel: usize, transpose: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        let shape = if transpose { [c_in, c_out, kernel] } else { [c_out, c_in, kernel] };
        Self {
            weight: uniform(&shape, bound, rng),
            bias: uniform(&[c_out], bound, rng),
        }
    }
}

impl<T: Real> BatchNorm<T> {
    fn init(c: usize) -> Self {
        Self {
            scale: Tensor::full([c], T::one()),
            shift: Tensor::zeros([c]),
            running_mean: Tensor::zeros([c]),
            running_var: Tensor::full([c], T::one()),
        }
    }

    fn update(&mut self, stats: &BatchNormStats<T>, momentum: f64) {
        let m: T = lit(momentum);
        let keep = T::one() - m;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = keep * *r + m * b;
        }
    }
}

impl<T: Real> Lif<T> {
    fn init(inputs: usize, outputs: usize, cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        Self {
            weight: uniform(&[outputs, inputs], 1.0 / (inputs as f64).sqrt(), rng),
            beta: Tensor::full([outputs], lit(cfg.beta_init)),
            theta: Tensor::full([outputs], lit(cfg.theta_init)),
        }
    }
}

impl<T: Real> ConvStack<T> {
    fn init(widths: [usize; 4], kernel: usize, transpose: bool, rng: &mut impl Rng) -> Self {
        Self {
            convs: [
                Conv::init(widths[0], widths[1], kernel, transpose, rng),
                Conv::init(widths[1], widths[2], kernel, transpose, rng),
                Conv::init(widths[2], widths[3], kernel, transpose, rng),
            ],
            norms: [BatchNorm::init(widths[1]), BatchNorm::init(widths[2])],
            transpose,
        }
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let [c0, c1, c2] = &self.convs;
        let [n0, n1] = &self.norms;
        vec![
            &c0.weight, &c0.bias, &n0.scale, &n0.shift, &c1.weight, &c1.bias, &n1.scale, &n1.shift, &c2.weight,
            &c2.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let [c0, c1, c2] = &mut self.convs;
        let [n0, n1] = &mut self.norms;
        vec![
            &mut c0.weight,
            &mut c0.bias,
            &mut n0.scale,
            &mut n0.shift,
            &mut c1.weight,
            &mut c1.bias,
            &mut n1.scale,
            &mut n1.shift,
            &mut c2.weight,
            &mut c2.bias,
        ]
    }

    fn buffers(&self) -> Vec<&Tensor<T>> {
        let [n0, n1] = &self.norms;
        vec![&n0.running_mean, &n0.running_var, &n1.running_mean, &n1.running_var]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let [n0, n1] = &mut self.norms;
        vec![
            &mut n0.running_mean,
            &mut n0.running_var,
            &mut n1.running_mean,
            &mut n1.running_var,
        ]
    }

    /// `vars` are this stack's bound parameters in [`STACK_PARAMS`] order.
    fn forward(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        mut h: Var,
        mode: Mode,
        cfg: &ModelConfig,
        stats: &mut Vec<BatchNormStats<T>>,
    ) -> Result<Var> {
        let eps: T = lit(cfg.bn_eps);
        for layer in 0..3 {
            let (w, b) = (vars[4 * layer], vars[4 * layer + 1]);
            h = if self.transpose {
                g.conv1d_transpose(h, w, b)?
            } else {
                g.conv1d(h, w, b)?
            };
            if layer < 2 {
                let (scale, shift) = (vars[4 * layer + 2], vars[4 * layer + 3]);
                h = match mode {
                    Mode::Train => {
                        let (out, s) = g.batchnorm1d_train(h, scale, shift, eps)?;
                        stats.push(s);
                        out
                    }
                    Mode::Eval => {
                        let bn = &self.norms[layer];
                        g.batchnorm1d_eval(h, scale, shift, bn.running_mean.data(), bn.running_var.data(), eps)?
                    }
                };
                h = g.tanh(h);
            }
        }
        Ok(h)
    }
}

impl<T: Real> Snn<T> {
    fn params(&self) -> Vec<&Tensor<T>> {
        [&self.input, &self.hidden, &self.freq_head, &self.amp_head]
            .into_iter()
            .flat_map(|l| [&l.weight, &l.beta, &l.theta])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        [&mut self.input, &mut self.hidden, &mut self.freq_head, &mut self.amp_head]
            .into_iter()
            .flat_map(|l| [&mut l.weight, &mut l.beta, &mut l.theta])
            .collect()
    }
}

/// Graph handles of one forward pass.
pub struct Forward<T> {
    /// Encoder features `(N, 2, K)`.
    pub y: Var,
    /// Spike train `(N, 2, K)` with entries in {-1, 0, 1}.
    pub z: Var,
    /// Reconstruction `(N, 2, K)` in (0, 1).
    pub x_hat: Var,
    /// Normalized frequency estimates `(N, outputs)`.
    pub f_hat: Var,
    /// Amplitude estimates `(N, outputs)`.
    pub a_hat: Var,
    /// Bound parameters in [`LseModel::param_names`] order.
    pub params: Vec<Var>,
    /// Training-mode batch statistics, encoder then decoder.
    pub bn_stats: Vec<BatchNormStats<T>>,
}

/// Per-window inference output.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub x_hat: Vec<f64>,
    pub spikes: SpikeTrain,
    pub freqs: Vec<f64>,
    pub amps: Vec<f64>,
}

const ENC: std::ops::Range<usize> = 0..10;
const DEC: std::ops::Range<usize> = 10..20;
const SNN: std::ops::Range<usize> = 20..32;

impl<T: Real> LseModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, k) = (config.channels, config.kernel);
        let encoder = ConvStack::init([2, c, c, 2], k, false, &mut rng);
        let decoder = ConvStack::init([2, c, c, 2], k, true, &mut rng);
        let snn = Snn {
            input: Lif::init(2, config.snn_input, &config, &mut rng),
            hidden: Lif::init(config.snn_input, config.snn_hidden, &config, &mut rng),
            freq_head: Lif::init(config.snn_hidden, config.outputs, &config, &mut rng),
            amp_head: Lif::init(config.snn_hidden, config.outputs, &config, &mut rng),
        };
        Ok(Self {
            config,
            encoder,
            decoder,
            snn,
        })
    }

    pub fn param_names() -> Vec<String> {
        let stack = |prefix: &'static str| STACK_PARAMS.iter().map(move |n| format!("{prefix}.{n}"));
        stack("encoder")
            .chain(stack("decoder"))
            .chain(SNN_PARAMS.iter().map(|n| format!("snn.{n}")))
            .collect()
    }

    pub fn buffer_names() -> Vec<String> {
        let stack = |prefix: &'static str| STACK_BUFFERS.iter().map(move |n| format!("{prefix}.{n}"));
        stack("encoder").chain(stack("decoder")).collect()
    }

    /// Learnable tensors in [`Self::param_names`] order.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.params());
        v.extend(self.snn.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        v.extend(self.snn.params_mut());
        v
    }

    /// Batchnorm running statistics in [`Self::buffer_names`] order.
    pub fn buffers(&self) -> Vec<&Tensor<T>> {
        let mut v = self.encoder.buffers();
        v.extend(self.decoder.buffers());
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.encoder.buffers_mut();
        v.extend(self.decoder.buffers_mut());
        v
    }

    pub fn encoder_param_count(&self) -> usize {
        param_count(&self.encoder.params())
    }

    pub fn decoder_param_count(&self) -> usize {
        param_count(&self.decoder.params())
    }

    pub fn snn_param_count(&self) -> usize {
        param_count(&self.snn.params())
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.params())
    }

    /// Places the parameters on `g`, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .map(|p| if trainable { g.param(p.clone()) } else { g.constant(p.clone()) })
            .collect()
    }

    pub fn encoder_forward(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        x: Var,
        mode: Mode,
        stats: &mut Vec<BatchNormStats<T>>,
    ) -> Result<Var> {
        let xs = g.shape(x);
        if xs.len() != 3 || xs[1] != 2 {
            return Err(LseError::Structure(format!("encoder expects (N, 2, K) input, got {xs:?}")));
        }
        self.encoder.forward(g, &vars[ENC], x, mode, &self.config, stats)
    }

    pub fn spike_encode(&self, g: &mut Graph<T>, y: Var) -> Result<Var> {
        Ok(g.spike_threshold_ste(y, lit(self.config.tau))?)
    }

    pub fn decoder_forward(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        z: Var,
        mode: Mode,
        stats: &mut Vec<BatchNormStats<T>>,
    ) -> Result<Var> {
        let logits = self.decoder.forward(g, &vars[DEC], z, mode, &self.config, stats)?;
        Ok(g.sigmoid(logits))
    }

    /// Runs the LIF recurrence over the `K` time steps of `z` from zero
    /// state. The output heads integrate without firing; their final
    /// membrane potentials go through a sigmoid.
    pub fn snn_forward(&self, g: &mut Graph<T>, vars: &[Var], z: Var) -> Result<(Var, Var)> {
        let zs = g.shape(z).to_vec();
        if zs.len() != 3 || zs[1] != 2 {
            return Err(LseError::Structure(format!("snn expects (N, 2, K) spikes, got {zs:?}")));
        }
        let (n, steps) = (zs[0], zs[2]);
        let v = &vars[SNN];
        let cfg = &self.config;
        let alpha: T = lit(cfg.surrogate_alpha);
        let (h1, h2, out) = (cfg.snn_input, cfg.snn_hidden, cfg.outputs);
        let mut u1 = g.constant(Tensor::zeros([n, h1]));
        let mut s1 = g.constant(Tensor::zeros([n, h1]));
        let mut u2 = g.constant(Tensor::zeros([n, h2]));
        let mut s2 = g.constant(Tensor::zeros([n, h2]));
        let mut uf = g.constant(Tensor::zeros([n, out]));
        let mut ua = g.constant(Tensor::zeros([n, out]));
        let no_reset = g.constant(Tensor::zeros([n, out]));
        for t in 0..steps {
            let input = g.select_step(z, t)?;
            u1 = g.lif_step(u1, s1, input, v[0], v[1], v[2])?;
            s1 = g.fire(u1, v[2], alpha)?;
            u2 = g.lif_step(u2, s2, s1, v[3], v[4], v[5])?;
            s2 = g.fire(u2, v[5], alpha)?;
            uf = g.lif_step(uf, no_reset, s2, v[6], v[7], v[8])?;
            ua = g.lif_step(ua, no_reset, s2, v[9], v[10], v[11])?;
        }
        Ok((g.sigmoid(uf), g.sigmoid(ua)))
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Forward<T>> {
        let params = self.bind(g, mode == Mode::Train);
        let mut bn_stats = Vec::new();
        let y = self.encoder_forward(g, &params, x, mode, &mut bn_stats)?;
        let z = self.spike_encode(g, y)?;
        let x_hat = self.decoder_forward(g, &params, z, mode, &mut bn_stats)?;
        let snn_in = if self.config.snn_grad_to_encoder {
            z
        } else {
            let copy = g.value(z).clone();
            g.constant(copy)
        };
        let (f_hat, a_hat) = self.snn_forward(g, &params, snn_in)?;
        Ok(Forward {
            y,
            z,
            x_hat,
            f_hat,
            a_hat,
            params,
            bn_stats,
        })
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, stats: &[BatchNormStats<T>]) -> Result<()> {
        if stats.len() != 4 {
            return Err(LseError::Structure(format!("expected 4 batchnorm updates, got {}", stats.len())));
        }
        let m = self.config.bn_momentum;
        let [e0, e1] = &mut self.encoder.norms;
        let [d0, d1] = &mut self.decoder.norms;
        for (bn, s) in [e0, e1, d0, d1].into_iter().zip(stats) {
            bn.update(s, m);
        }
        Ok(())
    }

    /// Eval-mode inference in batches of `batch_size`.
    pub fn predict(&self, samples: &[Sample], batch_size: usize) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(batch_size.max(1)) {
            let mut g = Graph::new();
            let x = g.constant(batch_input(chunk)?);
            let fw = self.forward(&mut g, x, Mode::Eval)?;
            let k = chunk[0].window.len;
            let m = self.config.outputs;
            let (xh, z, f, a) = (g.value(fw.x_hat), g.value(fw.z), g.value(fw.f_hat), g.value(fw.a_hat));
            for j in 0..chunk.len() {
                let to64 = |t: &Tensor<T>, lo: usize, n: usize| -> Vec<f64> {
                    t.data()[lo..lo + n].iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
                };
                let spikes = z.data()[j * 2 * k..(j + 1) * 2 * k]
                    .iter()
                    .map(|v| v.to_f64().unwrap_or(0.0) as i8)
                    .collect();
                out.push(Prediction {
                    x_hat: to64(xh, j * 2 * k, 2 * k),
                    spikes: SpikeTrain::new(spikes, k),
                    freqs: to64(f, j * m, m),
                    amps: to64(a, j * m, m),
                });
            }
        }
        Ok(out)
    }

    pub fn cast<U: Real>(&self) -> LseModel<U> {
        let conv = |c: &Conv<T>| Conv {
            weight: c.weight.cast(),
            bias: c.bias.cast(),
        };
        let bn = |b: &BatchNorm<T>| BatchNorm {
            scale: b.scale.cast(),
            shift: b.shift.cast(),
            running_mean: b.running_mean.cast(),
            running_var: b.running_var.cast(),
        };
        let stack = |s: &ConvStack<T>| ConvStack {
            convs: [conv(&s.convs[0]), conv(&s.convs[1]), conv(&s.convs[2])],
            norms: [bn(&s.norms[0]), bn(&s.norms[1])],
            transpose: s.transpose,
        };
        let lif = |l: &Lif<T>| Lif {
            weight: l.weight.cast(),
            beta: l.beta.cast(),
            theta: l.theta.cast(),
        };
        LseModel {
            config: self.config.clone(),
            encoder: stack(&self.encoder),
            decoder: stack(&self.decoder),
            snn: Snn {
                input: lif(&self.snn.input),
                hidden: lif(&self.snn.hidden),
                freq_head: lif(&self.snn.freq_head),
                amp_head: lif(&self.snn.amp_head),
            },
        }
    }
}

/// Total scalar count of `tensors`.
pub fn param_count<T: Real>(tensors: &[&Tensor<T>]) -> usize {
    tensors.iter().map(|t| t.len()).sum()
}

/// Stacks window values into an `(N, 2, K)` tensor.
pub fn batch_input<T: Real>(samples: &[Sample]) -> Result<Tensor<T>> {
    let Some(first) = samples.first() else {
        return Err(LseError::Structure("empty batch".into()));
    };
    let k = first.window.len;
    let mut data = Vec::with_capacity(samples.len() * 2 * k);
    for s in samples {
        if s.window.len != k || s.window.values.len() != 2 * k {
            return Err(LseError::Structure("windows in a batch must share one length".into()));
        }
        data.extend(s.window.values.iter().map(|&v| lit::<T>(v)));
    }
    Ok(Tensor::new([samples.len(), 2, k], data)?)
}

/// Stacks normalized frequency and amplitude targets into two `(N, M)` tensors.
pub fn batch_targets<T: Real>(samples: &[Sample], m: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut f = Vec::with_capacity(samples.len() * m);
    let mut a = Vec::with_capacity(samples.len() * m);
    for s in samples {
        if s.target.freqs.len() != m || s.target.amps.len() != m {
            return Err(LseError::Structure(format!(
                "targets have {} components, model expects {m}",
                s.target.freqs.len()
            )));
        }
        f.extend(s.target.freqs.iter().map(|&v| lit::<T>(v)));
        a.extend(s.target.amps.iter().map(|&v| lit::<T>(v)));
    }
    Ok((Tensor::new([samples.len(), m], f)?, Tensor::new([samples.len(), m], a)?))
}
