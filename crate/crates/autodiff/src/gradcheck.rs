//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

const GRAD_FLOOR: f64 = 1e-6;

/// Builds `f` on a fresh graph with `params` as trainable leaves and returns
/// its scalar output together with the leaf handles.
fn build<F>(f: &F, params: &[Tensor<f64>]) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok((g, vars, out))
}

/// Largest normwise relative error between reverse-mode and central
/// finite-difference gradients, taken over all parameters:
/// `max_p ‖g_ad − g_fd‖∞ / max(‖g_ad‖∞, ‖g_fd‖∞, 1e-6)`.
///
/// The floor keeps parameters whose true gradient is identically zero (a
/// conv bias feeding batchnorm) from reporting pure finite-difference noise.
///
/// `f` must be smooth at the probe point. The spike threshold and LIF firing
/// ops are not differentiable there and deliberately use surrogate
/// gradients, so graphs containing them will not pass.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (g, vars, out) = build(&f, params)?;
    let grads = g.backward(out)?;
    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let (g, _, out) = build(&f, ps)?;
        Ok(g.value(out).item())
    };
    let mut worst = 0.0f64;
    let mut probe = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params[pi].shape().to_vec()));
        let mut max_diff = 0.0f64;
        let mut max_mag = GRAD_FLOOR;
        for j in 0..params[pi].len() {
            let orig = probe[pi].data()[j];
            probe[pi].data_mut()[j] = orig + eps;
            let up = eval(&probe)?;
            probe[pi].data_mut()[j] = orig - eps;
            let down = eval(&probe)?;
            probe[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[j];
            max_diff = max_diff.max((a - numeric).abs());
            max_mag = max_mag.max(a.abs()).max(numeric.abs());
        }
        worst = worst.max(max_diff / max_mag);
    }
    Ok(worst)
}
