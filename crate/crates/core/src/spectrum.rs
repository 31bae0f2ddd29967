use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANS: RefCell<HashMap<usize, Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

/// Forward DFT `X[m] = Σ_k x[k] e^{-j2πkm/K}` (unnormalized).
pub fn dft(x: &[Complex64]) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    if buf.is_empty() {
        return buf;
    }
    let plan = PLANS.with(|p| {
        p.borrow_mut()
            .entry(buf.len())
            .or_insert_with(|| FftPlanner::new().plan_fft_forward(buf.len()))
            .clone()
    });
    plan.process(&mut buf);
    buf
}

/// DFT magnitudes of the complex sequence `re + j·im`.
pub fn dft_magnitudes(re: &[f64], im: &[f64]) -> Vec<f64> {
    let x: Vec<Complex64> = re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect();
    dft(&x).iter().map(|c| c.norm()).collect()
}
