use lse_autodiff::{grad_check, ste_forward, Graph, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-scale..scale))
}

/// `sum(v ⊙ r)` with a fixed random `r`, so every output element matters.
fn project(g: &mut Graph<f64>, v: Var, r: &Tensor<f64>) -> Result<Var> {
    let r = g.constant(r.clone());
    let p = g.mul(v, r)?;
    Ok(g.sum(p))
}

const FD_EPS: f64 = 1e-6;

#[test]
fn conv1d_identity_kernel() {
    let mut g = Graph::<f64>::new();
    let x = Tensor::new([1, 1, 6], vec![0.3, -1.0, 2.0, 0.0, 5.5, -0.25]).unwrap();
    let mut w = Tensor::zeros([1, 1, 7]);
    w.data_mut()[3] = 1.0;
    let xv = g.constant(x.clone());
    let wv = g.constant(w);
    let bv = g.constant(Tensor::zeros([1]));
    let y = g.conv1d(xv, wv, bv).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn conv1d_zero_padding_edges() {
    let mut g = Graph::<f64>::new();
    let xv = g.constant(Tensor::full([1, 1, 5], 1.0));
    let wv = g.constant(Tensor::full([1, 1, 3], 1.0));
    let bv = g.constant(Tensor::zeros([1]));
    let y = g.conv1d(xv, wv, bv).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 3.0, 3.0, 3.0, 2.0]);
}

#[test]
fn conv1d_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = vec![
        random(&[2, 3, 9], &mut rng, 1.0),
        random(&[4, 3, 7], &mut rng, 0.5),
        random(&[4], &mut rng, 0.5),
    ];
    let r = random(&[2, 4, 9], &mut rng, 1.0);
    let err = grad_check(
        |g, p| {
            let y = g.conv1d(p[0], p[1], p[2])?;
            project(g, y, &r)
        },
        &params,
        FD_EPS,
    )
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn conv1d_rejects_bad_shapes() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros([1, 2, 8]));
    let w = g.constant(Tensor::zeros([3, 4, 7]));
    let b = g.constant(Tensor::zeros([3]));
    assert!(g.conv1d(x, w, b).is_err());
    let w_even = g.constant(Tensor::zeros([3, 2, 6]));
    assert!(g.conv1d(x, w_even, b).is_err());
}

#[test]
fn conv_transpose_identity_kernel() {
    let mut g = Graph::<f64>::new();
    let x = Tensor::new([1, 1, 4], vec![1.0, 2.0, -3.0, 0.5]).unwrap();
    let mut w = Tensor::zeros([1, 1, 7]);
    w.data_mut()[3] = 1.0;
    let xv = g.constant(x.clone());
    let wv = g.constant(w);
    let bv = g.constant(Tensor::zeros([1]));
    let y = g.conv1d_transpose(xv, wv, bv).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn conv_transpose_is_conv_input_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, c_in, c_out, k) = (2, 3, 5, 10);
    let w = random(&[c_out, c_in, 7], &mut rng, 1.0);
    let upstream = random(&[n, c_out, k], &mut rng, 1.0);

    // Input gradient of conv1d for loss = <conv1d(x), upstream>.
    let mut g = Graph::<f64>::new();
    let x = g.param(random(&[n, c_in, k], &mut rng, 1.0));
    let wv = g.constant(w.clone());
    let bv = g.constant(Tensor::zeros([c_out]));
    let y = g.conv1d(x, wv, bv).unwrap();
    let loss = project(&mut g, y, &upstream).unwrap();
    let grads = g.backward(loss).unwrap();
    let dx = grads.get(x).unwrap().clone();

    // Transposed conv maps (c_out channels) -> (c_in channels) with the same weight.
    let mut h = Graph::<f64>::new();
    let up = h.constant(upstream);
    let wt = h.constant(w);
    let bt = h.constant(Tensor::zeros([c_in]));
    let out = h.conv1d_transpose(up, wt, bt).unwrap();
    for (a, b) in h.value(out).data().iter().zip(dx.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv_transpose_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = vec![
        random(&[2, 3, 8], &mut rng, 1.0),
        random(&[3, 2, 7], &mut rng, 0.5),
        random(&[2], &mut rng, 0.5),
    ];
    let r = random(&[2, 2, 8], &mut rng, 1.0);
    let err = grad_check(
        |g, p| {
            let y = g.conv1d_transpose(p[0], p[1], p[2])?;
            project(g, y, &r)
        },
        &params,
        FD_EPS,
    )
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn batchnorm_standardized_input_passes_through() {
    // Channel 0: ±1 pattern, channel 1: ±1 shifted pattern; both zero mean, unit variance.
    let data = vec![1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, 1.0, -1.0];
    let x = Tensor::new([2, 2, 4], data).unwrap();
    let mut g = Graph::<f64>::new();
    let xv = g.constant(x.clone());
    let s = g.constant(Tensor::full([2], 1.0));
    let b = g.constant(Tensor::zeros([2]));
    let (y, stats) = g.batchnorm1d_train(xv, s, b, 1e-5).unwrap();
    for (a, e) in g.value(y).data().iter().zip(x.data()) {
        assert!((a - e).abs() < 1e-5);
    }
    assert!(stats.mean.iter().all(|m| m.abs() < 1e-15));
    // Unbiased variance of 8 samples of ±1.
    assert!(stats.var.iter().all(|v| (v - 8.0 / 7.0).abs() < 1e-12));
}

#[test]
fn batchnorm_constant_input_gives_shift() {
    let mut g = Graph::<f64>::new();
    let xv = g.constant(Tensor::full([3, 2, 5], 4.2));
    let s = g.constant(Tensor::full([2], 1.7));
    let b = g.constant(Tensor::new([2], vec![0.25, -3.0]).unwrap());
    let (y, _) = g.batchnorm1d_train(xv, s, b, 1e-5).unwrap();
    for (j, v) in g.value(y).data().iter().enumerate() {
        let c = if (j / 5) % 2 == 0 { 0.25 } else { -3.0 };
        assert!((v - c).abs() < 1e-12);
    }
}

#[test]
fn batchnorm_eval_uses_running_stats() {
    let mut g = Graph::<f64>::new();
    let xv = g.constant(Tensor::new([1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap());
    let s = g.constant(Tensor::full([1], 1.0));
    let b = g.constant(Tensor::zeros([1]));
    // Initial running statistics (mean 0, var 1) are almost the identity.
    let y = g.batchnorm1d_eval(xv, s, b, &[0.0], &[1.0], 1e-5).unwrap();
    for (a, e) in g.value(y).data().iter().zip([1.0, 2.0, 3.0]) {
        assert!((a - e / (1.0f64 + 1e-5).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = vec![
        random(&[3, 4, 6], &mut rng, 2.0),
        random(&[4], &mut rng, 1.5),
        random(&[4], &mut rng, 1.0),
    ];
    let r = random(&[3, 4, 6], &mut rng, 1.0);
    let train = grad_check(
        |g, p| {
            let (y, _) = g.batchnorm1d_train(p[0], p[1], p[2], 1e-5)?;
            project(g, y, &r)
        },
        &params,
        FD_EPS,
    )
    .unwrap();
    assert!(train <= 1e-4, "train-mode relative error {train}");
    let eval = grad_check(
        |g, p| {
            let y = g.batchnorm1d_eval(p[0], p[1], p[2], &[0.1, -0.2, 0.0, 0.3], &[0.5, 1.0, 2.0, 0.7], 1e-5)?;
            project(g, y, &r)
        },
        &params,
        FD_EPS,
    )
    .unwrap();
    assert!(eval <= 1e-4, "eval-mode relative error {eval}");
}

#[test]
fn pointwise_values_and_derivatives() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::new([4], vec![0.0, 0.5, 2.0, -3.0]).unwrap());
    let t = g.tanh(x);
    let s = g.sigmoid(x);
    let h = g.hard_tanh(x);
    assert_eq!(g.value(t).data()[0], 0.0);
    assert_eq!(g.value(s).data()[0], 0.5);
    assert_eq!(g.value(h).data(), &[0.0, 0.5, 1.0, -1.0]);
    let loss = g.sum(h);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0]);
}

#[test]
fn tanh_sigmoid_gradients_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = vec![random(&[12], &mut rng, 3.0)];
    let r = random(&[12], &mut rng, 1.0);
    for kind in 0..2 {
        let err = grad_check(
            |g, p| {
                let y = if kind == 0 { g.tanh(p[0]) } else { g.sigmoid(p[0]) };
                project(g, y, &r)
            },
            &params,
            FD_EPS,
        )
        .unwrap();
        assert!(err <= 1e-6, "kind {kind}: relative error {err}");
    }
}

#[test]
fn spike_threshold_cases() {
    let mut g = Graph::<f64>::new();
    let y = g.param(Tensor::new([5], vec![0.05, -0.3, 0.1, 0.5, 1.5]).unwrap());
    let z = g.spike_threshold_ste(y, 0.1).unwrap();
    assert_eq!(g.value(z).data(), &[0.0, -1.0, 1.0, 1.0, 1.0]);
    let r = g.constant(Tensor::new([5], vec![2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let p = g.mul(z, r).unwrap();
    let loss = g.sum(p);
    let grads = g.backward(loss).unwrap();
    // Straight-through inside [-1, 1], blocked outside.
    assert_eq!(grads.get(y).unwrap().data(), &[2.0, 3.0, 4.0, 5.0, 0.0]);
    assert!(g.spike_threshold_ste(y, 0.0).is_err());
}

#[test]
fn spike_threshold_exhaustive_probes_around_tau() {
    let tau = 0.1f64;
    let mut probes = Vec::new();
    for base in [tau, -tau] {
        for j in -50i32..=50 {
            probes.push(base + j as f64 * 1e-4);
        }
        probes.push(base);
        probes.push(f64::from_bits(base.to_bits() + 1));
        probes.push(f64::from_bits(base.to_bits() - 1));
    }
    for y in probes {
        let expected = if y.abs() >= tau { y.signum() } else { 0.0 };
        assert_eq!(ste_forward(y, tau), expected, "y = {y}");
    }
}

#[test]
fn lif_worked_example() {
    // Single neuron, beta 0.9, theta 1, weighted input 0.6 per step.
    let mut g = Graph::<f64>::new();
    let w = g.constant(Tensor::new([1, 1], vec![0.6]).unwrap());
    let beta = g.constant(Tensor::full([1], 0.9));
    let theta = g.constant(Tensor::full([1], 1.0));
    let input = g.constant(Tensor::full([1, 1], 1.0));
    let mut u = g.constant(Tensor::zeros([1, 1]));
    let mut s = g.constant(Tensor::zeros([1, 1]));
    let mut us = Vec::new();
    let mut ss = Vec::new();
    for _ in 0..3 {
        u = g.lif_step(u, s, input, w, beta, theta).unwrap();
        s = g.fire(u, theta, 2.0).unwrap();
        us.push(g.value(u).item());
        ss.push(g.value(s).item());
    }
    for (a, e) in us.iter().zip([0.6, 1.14, 0.626]) {
        assert!((a - e).abs() < 1e-12, "{us:?}");
    }
    assert_eq!(ss, vec![0.0, 1.0, 0.0]);
}

#[test]
fn lif_memoryless_and_silent_cases() {
    let mut g = Graph::<f64>::new();
    let w = g.constant(Tensor::new([2, 3], vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap());
    let theta = g.constant(Tensor::full([2], 1.0));
    let zero_beta = g.constant(Tensor::zeros([2]));
    let u0 = g.constant(Tensor::new([1, 2], vec![7.0, -3.0]).unwrap());
    let s0 = g.constant(Tensor::zeros([1, 2]));
    let x = g.constant(Tensor::new([1, 3], vec![1.0, -1.0, 1.0]).unwrap());
    let u = g.lif_step(u0, s0, x, w, zero_beta, theta).unwrap();
    assert_eq!(g.value(u).data(), &[0.1 - 0.2 + 0.3, -0.4 - 0.5 + 0.6]);

    let beta = g.constant(Tensor::full([2], 0.9));
    let silent = g.constant(Tensor::zeros([1, 3]));
    let mut u = g.constant(Tensor::zeros([1, 2]));
    let mut s = s0;
    for _ in 0..10 {
        u = g.lif_step(u, s, silent, w, beta, theta).unwrap();
        s = g.fire(u, theta, 2.0).unwrap();
        assert!(g.value(u).data().iter().all(|&v| v == 0.0));
        assert!(g.value(s).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn lif_membrane_gradients_match_finite_differences() {
    // Several chained membrane updates with constant reset spikes; the firing
    // op itself is excluded because its gradient is a surrogate.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (n, i, h) = (3, 4, 5);
    let params = vec![
        random(&[h, i], &mut rng, 1.0),
        Tensor::from_fn([h], |_| rng.random_range(0.5..0.95)),
        Tensor::from_fn([h], |_| rng.random_range(0.5..1.5)),
        random(&[n, i], &mut rng, 1.0),
    ];
    let resets: Vec<Tensor<f64>> = (0..4)
        .map(|_| Tensor::from_fn([n, h], |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }))
        .collect();
    let r = random(&[n, h], &mut rng, 1.0);
    let err = grad_check(
        |g, p| {
            let mut u = g.constant(Tensor::zeros([n, h]));
            for reset in &resets {
                let s = g.constant(reset.clone());
                u = g.lif_step(u, s, p[3], p[0], p[1], p[2])?;
            }
            project(g, u, &r)
        },
        &params,
        FD_EPS,
    )
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn fire_uses_arctan_surrogate() {
    let mut g = Graph::<f64>::new();
    let u = g.param(Tensor::new([1, 3], vec![0.5, 1.0, 2.5]).unwrap());
    let theta = g.param(Tensor::full([3], 1.0));
    let s = g.fire(u, theta, 2.0).unwrap();
    assert_eq!(g.value(s).data(), &[0.0, 1.0, 1.0]);
    let loss = g.sum(s);
    let grads = g.backward(loss).unwrap();
    let expect: Vec<f64> = [0.5f64, 1.0, 2.5]
        .iter()
        .map(|&v| 1.0 / (1.0 + (2.0 * (v - 1.0)).powi(2)))
        .collect();
    for (a, e) in grads.get(u).unwrap().data().iter().zip(&expect) {
        assert!((a - e).abs() < 1e-15);
    }
    for (a, e) in grads.get(theta).unwrap().data().iter().zip(&expect) {
        assert!((a + e).abs() < 1e-15);
    }
}

#[test]
fn fan_out_gradients_accumulate() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
    let a = g.scale(x, 2.0);
    let b = g.scale(x, 3.0);
    let c = g.mul(x, x).unwrap();
    let ab = g.add(a, b).unwrap();
    let abc = g.add(ab, c).unwrap();
    let loss = g.sum(abc);
    let grads = g.backward(loss).unwrap();
    // d/dx (2x + 3x + x²) = 5 + 2x
    assert_eq!(grads.get(x).unwrap().data(), &[7.0, 1.0, 6.0]);
}

#[test]
fn linear_map_gradient_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = vec![random(&[3, 4], &mut rng, 1.0), random(&[2, 4], &mut rng, 1.0)];
    let err = grad_check(|g, p| {
        let y = g.matmul(p[0], p[1])?;
        Ok(g.sum(y))
    }, &params, FD_EPS)
    .unwrap();
    assert!(err < 1e-9, "relative error {err}");
}

#[test]
fn composed_conv_batchnorm_tanh_mse() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = vec![
        random(&[3, 2, 7], &mut rng, 0.5),
        random(&[3], &mut rng, 0.2),
        Tensor::from_fn([3], |_| rng.random_range(0.5..1.5)),
        random(&[3], &mut rng, 0.3),
        random(&[3, 2, 7], &mut rng, 0.5),
        random(&[2], &mut rng, 0.2),
    ];
    let x = Tensor::from_fn([4, 2, 12], |_| rng.random_range(0.0..1.0));
    let target = Tensor::from_fn([4, 2, 12], |_| rng.random_range(0.0..1.0));
    let err = grad_check(
        |g, p| {
            let xv = g.constant(x.clone());
            let tv = g.constant(target.clone());
            let h = g.conv1d(xv, p[0], p[1])?;
            let (h, _) = g.batchnorm1d_train(h, p[2], p[3], 1e-5)?;
            let h = g.tanh(h);
            let y = g.conv1d_transpose(h, p[4], p[5])?;
            let y = g.sigmoid(y);
            g.mse(y, tv)
        },
        &params,
        FD_EPS,
    )
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn elementwise_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // Keep |x| away from 0 so abs is smooth at the probe point.
    let params = vec![
        Tensor::from_fn([10], |_| rng.random_range(0.2..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }),
        random(&[10], &mut rng, 1.0),
    ];
    let err = grad_check(
        |g, p| {
            let a = g.abs(p[0]);
            let b = g.sub(a, p[1])?;
            let c = g.square(b);
            let d = g.scale(c, 0.7);
            let e = g.mul(d, p[1])?;
            Ok(g.mean(e))
        },
        &params,
        FD_EPS,
    )
    .unwrap();
    assert!(err <= 1e-4, "relative error {err}");
}

#[test]
fn select_step_routes_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_fn([2, 2, 3], |j| j as f64));
    let s = g.select_step(x, 1).unwrap();
    assert_eq!(g.value(s).data(), &[1.0, 4.0, 7.0, 10.0]);
    let loss = g.sum(s);
    let grads = g.backward(loss).unwrap();
    let gx = grads.get(x).unwrap().data();
    for (j, &v) in gx.iter().enumerate() {
        assert_eq!(v, if j % 3 == 1 { 1.0 } else { 0.0 });
    }
    assert!(g.select_step(x, 3).is_err());
}

#[test]
fn backward_requires_scalar_root() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::zeros([3]));
    let y = g.tanh(x);
    assert!(g.backward(y).is_err());
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::<f64>::new();
    let c = g.constant(Tensor::full([2], 3.0));
    let p = g.param(Tensor::full([2], 2.0));
    let m = g.mul(c, p).unwrap();
    let loss = g.sum(m);
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(p).unwrap().data(), &[3.0, 3.0]);
}

/// Scalar-loop reference of the LIF recurrence for one layer.
fn lif_reference(
    inputs: &[Vec<f64>],
    w: &[f64],
    beta: &[f64],
    theta: &[f64],
    h: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let i = inputs[0].len();
    let mut u = vec![0.0; h];
    let mut s = vec![0.0; h];
    let mut us = Vec::new();
    let mut ss = Vec::new();
    for x in inputs {
        let mut next = vec![0.0; h];
        for j in 0..h {
            let mut acc = 0.0;
            for q in 0..i {
                acc += w[j * i + q] * x[q];
            }
            next[j] = beta[j] * u[j] + acc - theta[j] * s[j];
        }
        u = next;
        s = (0..h).map(|j| if u[j] >= theta[j] { 1.0 } else { 0.0 }).collect();
        us.push(u.clone());
        ss.push(s.clone());
    }
    (us, ss)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lif_matches_scalar_reference(seed in any::<u64>(), steps in 1usize..20, h in 1usize..6, i in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..h * i).map(|_| rng.random_range(-1.5..1.5)).collect();
        let beta: Vec<f64> = (0..h).map(|_| rng.random_range(0.0..1.0)).collect();
        let theta: Vec<f64> = (0..h).map(|_| rng.random_range(0.2..2.0)).collect();
        let inputs: Vec<Vec<f64>> = (0..steps)
            .map(|_| (0..i).map(|_| rng.random_range(-1i32..=1) as f64).collect())
            .collect();
        let (ref_u, ref_s) = lif_reference(&inputs, &w, &beta, &theta, h);

        let mut g = Graph::<f64>::new();
        let wv = g.constant(Tensor::new([h, i], w).unwrap());
        let bv = g.constant(Tensor::new([h], beta).unwrap());
        let tv = g.constant(Tensor::new([h], theta).unwrap());
        let mut u = g.constant(Tensor::zeros([1, h]));
        let mut s = g.constant(Tensor::zeros([1, h]));
        for (step, x) in inputs.iter().enumerate() {
            let xv = g.constant(Tensor::new([1, i], x.clone()).unwrap());
            u = g.lif_step(u, s, xv, wv, bv, tv).unwrap();
            s = g.fire(u, tv, 2.0).unwrap();
            for j in 0..h {
                prop_assert!((g.value(u).data()[j] - ref_u[step][j]).abs() <= 1e-12);
                prop_assert_eq!(g.value(s).data()[j], ref_s[step][j]);
            }
        }
    }

    #[test]
    fn spike_output_is_ternary(values in proptest::collection::vec(-5.0f64..5.0, 1..64), tau in 0.01f64..2.0) {
        let mut g = Graph::<f64>::new();
        let n = values.len();
        let y = g.constant(Tensor::new([n], values).unwrap());
        let z = g.spike_threshold_ste(y, tau).unwrap();
        prop_assert!(g.value(z).data().iter().all(|&v| v == -1.0 || v == 0.0 || v == 1.0));
    }
}
