//! Synthetic sum-of-sinusoids channel responses.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LseError, Result};

/// Generator settings. Defaults reproduce the 60 GHz Doppler setup:
/// `T = 0.27 ms`, `K = 64`, up to five components, SNR in {5, 10, 15, 20} dB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Sampling period `T` in seconds.
    pub sample_period_s: f64,
    /// Window length `K` in samples.
    pub window_len: usize,
    pub carrier_hz: f64,
    /// Maximum number of sinusoidal components.
    pub max_components: usize,
    pub snr_db_set: Vec<f64>,
    /// Windows generated for each active-component count in `1..=max_components`.
    pub windows_per_count: usize,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            sample_period_s: 0.27e-3,
            window_len: 64,
            carrier_hz: 60e9,
            max_components: 5,
            snr_db_set: vec![5.0, 10.0, 15.0, 20.0],
            windows_per_count: 3000,
            split: [0.75, 0.15, 0.10],
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LseError::InvalidInput(m));
        if !(self.sample_period_s > 0.0 && self.sample_period_s.is_finite()) {
            return bad(format!("sample period must be positive, got {}", self.sample_period_s));
        }
        if self.window_len < 2 {
            return bad(format!("window length must be at least 2, got {}", self.window_len));
        }
        if self.max_components == 0 {
            return bad("max_components must be at least 1".into());
        }
        if self.snr_db_set.is_empty() {
            return bad("snr_db_set must not be empty".into());
        }
        if self.split.iter().any(|&s| !(0.0..=1.0).contains(&s)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions must lie in [0, 1] and sum to 1, got {:?}", self.split));
        }
        Ok(())
    }

    /// Highest representable frequency `1 / (2T)`.
    pub fn max_freq_hz(&self) -> f64 {
        1.0 / (2.0 * self.sample_period_s)
    }

    pub fn total_windows(&self) -> usize {
        self.windows_per_count * self.max_components
    }
}

/// Parameters of one window. Active components come first, sorted by
/// ascending frequency; the remaining slots hold zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub freqs_hz: Vec<f64>,
    pub amps: Vec<f64>,
    pub phases: Vec<f64>,
    pub m_active: usize,
    /// `f64::INFINITY` means noiseless.
    pub snr_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelWindow {
    pub samples: Vec<Complex64>,
    pub gt: GroundTruth,
}

/// Affine map between raw and `[0, 1]` values: `raw = offset + scale * value`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub offset: f64,
    pub scale: f64,
}

/// `(2, K)` real view of a window, row 0 real part, row 1 imaginary part,
/// jointly min-max normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct RealWindow {
    pub values: Vec<f64>,
    pub len: usize,
    pub norm: Norm,
}

impl RealWindow {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.len..(c + 1) * self.len]
    }

    pub fn denormalize(&self) -> Vec<f64> {
        self.values.iter().map(|&v| self.norm.offset + self.norm.scale * v).collect()
    }
}

/// Regression targets in normalized units (`f / (1 / 2T)`, amplitudes as is).
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub freqs: Vec<f64>,
    pub amps: Vec<f64>,
    pub phases: Vec<f64>,
    pub m_active: usize,
    pub snr_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub window: RealWindow,
    pub target: Target,
}

/// Independent random stream for window `index` of a run seeded with `seed`.
pub fn window_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn sample_ground_truth(m_active: usize, cfg: &GeneratorConfig, rng: &mut impl Rng) -> Result<GroundTruth> {
    if m_active == 0 || m_active > cfg.max_components {
        return Err(LseError::InvalidInput(format!(
            "active component count {m_active} outside 1..={}",
            cfg.max_components
        )));
    }
    if cfg.snr_db_set.is_empty() {
        return Err(LseError::InvalidInput("snr_db_set must not be empty".into()));
    }
    let f_max = cfg.max_freq_hz();
    let mut comps: Vec<(f64, f64, f64)> = (0..m_active)
        .map(|_| {
            let f = rng.random_range(0.0..=f_max);
            let phi = rng.random_range(0.0..TAU);
            // (0, 1]
            let a = 1.0 - rng.random::<f64>();
            (f, a, phi)
        })
        .collect();
    let peak = comps.iter().map(|c| c.1).fold(0.0, f64::max);
    for c in &mut comps {
        c.1 /= peak;
    }
    comps.sort_by(|x, y| x.0.total_cmp(&y.0));
    let snr_db = cfg.snr_db_set[rng.random_range(0..cfg.snr_db_set.len())];
    let m = cfg.max_components;
    let mut gt = GroundTruth {
        freqs_hz: vec![0.0; m],
        amps: vec![0.0; m],
        phases: vec![0.0; m],
        m_active,
        snr_db,
    };
    for (j, (f, a, phi)) in comps.into_iter().enumerate() {
        gt.freqs_hz[j] = f;
        gt.amps[j] = a;
        gt.phases[j] = phi;
    }
    Ok(gt)
}

/// Complex noise variance giving `snr_db` for the total sinusoid power.
pub fn noise_variance(gt: &GroundTruth) -> f64 {
    let power: f64 = gt.amps.iter().map(|a| a * a).sum();
    power / 10f64.powf(gt.snr_db / 10.0)
}

pub fn generate_window(gt: &GroundTruth, cfg: &GeneratorConfig, rng: &mut impl Rng) -> ChannelWindow {
    let t = cfg.sample_period_s;
    let sigma2 = noise_variance(gt);
    let noise = (sigma2 > 0.0).then(|| Normal::new(0.0, (sigma2 / 2.0).sqrt()).expect("finite std"));
    let samples = (0..cfg.window_len)
        .map(|k| {
            let mut x = Complex64::new(0.0, 0.0);
            for ((&f, &a), &phi) in gt.freqs_hz.iter().zip(&gt.amps).zip(&gt.phases) {
                if a != 0.0 {
                    x += Complex64::from_polar(a, TAU * f * k as f64 * t + phi);
                }
            }
            if let Some(n) = &noise {
                x += Complex64::new(n.sample(rng), n.sample(rng));
            }
            x
        })
        .collect();
    ChannelWindow {
        samples,
        gt: gt.clone(),
    }
}

impl RealWindow {
    /// Joint min-max over both rows. A constant window keeps `scale = 1`
    /// and `offset = min`, mapping every value to 0.
    pub fn from_channel(w: &ChannelWindow) -> Self {
        let len = w.samples.len();
        let raw: Vec<f64> = w
            .samples
            .iter()
            .map(|c| c.re)
            .chain(w.samples.iter().map(|c| c.im))
            .collect();
        Self::normalize(raw, len)
    }

    pub fn normalize(raw: Vec<f64>, len: usize) -> Self {
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = if hi > lo { hi - lo } else { 1.0 };
        let values = raw.iter().map(|&v| (v - lo) / scale).collect();
        Self {
            values,
            len,
            norm: Norm { offset: lo, scale },
        }
    }
}

impl Target {
    pub fn from_ground_truth(gt: &GroundTruth, cfg: &GeneratorConfig) -> Self {
        let f_max = cfg.max_freq_hz();
        Self {
            freqs: gt.freqs_hz.iter().map(|f| f / f_max).collect(),
            amps: gt.amps.clone(),
            phases: gt.phases.clone(),
            m_active: gt.m_active,
            snr_db: gt.snr_db,
        }
    }
}

pub fn to_real_window(w: &ChannelWindow, cfg: &GeneratorConfig) -> Sample {
    Sample {
        window: RealWindow::from_channel(w),
        target: Target::from_ground_truth(&w.gt, cfg),
    }
}

/// Generates window `index` with `m_active` components. When `snr_db` is
/// given it replaces the draw from the configured set.
pub fn generate_sample(cfg: &GeneratorConfig, seed: u64, index: u64, m_active: usize, snr_db: Option<f64>) -> Result<Sample> {
    let mut rng = window_rng(seed, index);
    let mut gt = sample_ground_truth(m_active, cfg, &mut rng)?;
    if let Some(snr) = snr_db {
        gt.snr_db = snr;
    }
    let w = generate_window(&gt, cfg, &mut rng);
    Ok(to_real_window(&w, cfg))
}

/// Shuffled index permutation used to split a dataset.
pub fn split_permutation(total: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(&mut window_rng(seed, u64::MAX));
    idx
}

/// Partition sizes for `total` windows.
pub fn split_sizes(total: usize, split: [f64; 3]) -> [usize; 3] {
    let train = ((total as f64) * split[0]).round() as usize;
    let val = (((total as f64) * split[1]).round() as usize).min(total - train);
    [train, val, total - train - val]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GeneratorConfig {
        GeneratorConfig::default()
    }

    #[test]
    fn single_component_amplitude_is_one() {
        let mut rng = window_rng(3, 0);
        let gt = sample_ground_truth(1, &cfg(), &mut rng).unwrap();
        assert_eq!(gt.amps, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&gt.freqs_hz[1..], &[0.0; 4]);
    }

    #[test]
    fn frequencies_within_nyquist() {
        let c = cfg();
        let f_max = c.max_freq_hz();
        assert!((f_max - 1851.851851851852).abs() < 1e-9);
        for i in 0..500 {
            let gt = sample_ground_truth(5, &c, &mut window_rng(1, i)).unwrap();
            assert!(gt.freqs_hz.iter().all(|&f| (0.0..=f_max).contains(&f)));
            assert!(gt.phases.iter().all(|&p| (0.0..TAU).contains(&p)));
        }
    }

    #[test]
    fn components_sorted_with_trailing_inactive() {
        let c = cfg();
        for i in 0..200 {
            let m = 1 + (i as usize % 5);
            let gt = sample_ground_truth(m, &c, &mut window_rng(2, i)).unwrap();
            assert!(gt.freqs_hz[..m].windows(2).all(|w| w[0] <= w[1]));
            assert!(gt.amps[..m].iter().all(|&a| a > 0.0 && a <= 1.0));
            assert_eq!(gt.amps[..m].iter().copied().fold(0.0, f64::max), 1.0);
            assert!(gt.amps[m..].iter().all(|&a| a == 0.0));
            assert!(gt.freqs_hz[m..].iter().all(|&f| f == 0.0));
            assert!(c.snr_db_set.contains(&gt.snr_db));
        }
    }

    #[test]
    fn active_count_out_of_range() {
        let mut rng = window_rng(0, 0);
        assert!(sample_ground_truth(0, &cfg(), &mut rng).is_err());
        assert!(sample_ground_truth(6, &cfg(), &mut rng).is_err());
    }

    fn noiseless(f: f64) -> GroundTruth {
        GroundTruth {
            freqs_hz: vec![f, 0.0, 0.0, 0.0, 0.0],
            amps: vec![1.0, 0.0, 0.0, 0.0, 0.0],
            phases: vec![0.0; 5],
            m_active: 1,
            snr_db: f64::INFINITY,
        }
    }

    #[test]
    fn zero_frequency_is_constant() {
        let w = generate_window(&noiseless(0.0), &cfg(), &mut window_rng(0, 0));
        assert!(w.samples.iter().all(|&s| s == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn single_tone_has_unit_modulus() {
        let w = generate_window(&noiseless(731.0), &cfg(), &mut window_rng(0, 0));
        assert!(w.samples.iter().all(|s| (s.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn noise_power_matches_snr() {
        let c = cfg();
        let mut gt = noiseless(0.0);
        gt.snr_db = 20.0;
        let mut rng = window_rng(9, 0);
        let mut acc = 0.0;
        let mut n = 0usize;
        for _ in 0..400 {
            let w = generate_window(&gt, &c, &mut rng);
            for s in &w.samples {
                acc += (s - Complex64::new(1.0, 0.0)).norm_sqr();
                n += 1;
            }
        }
        let p = acc / n as f64;
        assert!((p - 0.01).abs() < 0.001, "empirical noise power {p}");
    }

    #[test]
    fn normalization_range_and_inverse() {
        let s = generate_sample(&cfg(), 4, 17, 3, None).unwrap();
        let v = &s.window.values;
        assert_eq!(v.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
        assert_eq!(v.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
        assert_eq!(v.len(), 128);
    }

    #[test]
    fn constant_window_uses_degenerate_rule() {
        let w = ChannelWindow {
            samples: vec![Complex64::new(1.0, 1.0); 8],
            gt: noiseless(0.0),
        };
        let r = RealWindow::from_channel(&w);
        assert_eq!(r.norm, Norm { offset: 1.0, scale: 1.0 });
        assert!(r.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nyquist_frequency_normalizes_to_one() {
        let c = cfg();
        let mut gt = noiseless(c.max_freq_hz());
        gt.snr_db = 10.0;
        let t = Target::from_ground_truth(&gt, &c);
        assert!((t.freqs[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn split_sizes_reference() {
        assert_eq!(split_sizes(15_000, [0.75, 0.15, 0.10]), [11_250, 2_250, 1_500]);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let mut c = cfg();
        c.split = [0.5, 0.5, 0.5];
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.snr_db_set.clear();
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.window_len = 1;
        assert!(c.validate().is_err());
    }
}
