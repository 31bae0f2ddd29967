/// Ternary `(2, K)` spike train, row 0 real part, row 1 imaginary part.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeTrain {
    pub values: Vec<i8>,
    pub len: usize,
}

impl SpikeTrain {
    pub fn new(values: Vec<i8>, len: usize) -> Self {
        debug_assert!(values.iter().all(|v| (-1..=1).contains(v)));
        Self { values, len }
    }

    pub fn channel(&self, c: usize) -> &[i8] {
        &self.values[c * self.len..(c + 1) * self.len]
    }

    /// Mean absolute spike value (the Ω penalty).
    pub fn density(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|v| v.unsigned_abs() as usize).sum::<usize>() as f64 / self.values.len() as f64
    }

    /// Fraction of zeros, `1 - density`.
    pub fn sparsity(&self) -> f64 {
        if self.values.is_empty() {
            return 1.0;
        }
        self.values.iter().filter(|&&v| v == 0).count() as f64 / self.values.len() as f64
    }
}
