//! Tape-based reverse-mode graph.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep.

use ndarray::Array2;

use crate::error::{AutodiffError, Result};
use crate::kernels::{self, ConvDims};
use crate::tensor::{lit, Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise activation applied by [`Graph::pointwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    Tanh,
    Sigmoid,
    HardTanh,
}

/// Batch statistics produced by a training-mode batchnorm, used by the
/// caller to update its running estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T> {
    pub mean: Vec<T>,
    /// Unbiased per-channel variance.
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Square(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Pointwise(Var, Pointwise),
    SpikeSte(Var),
    Matmul {
        x: Var,
        w: Var,
    },
    Conv {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
        padded: Array2<T>,
        /// Cross-correlation weight when the node is a transposed conv.
        flipped: Option<Vec<T>>,
    },
    BatchNorm {
        x: Var,
        scale: Var,
        shift: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        /// Batch statistics were used (gradient flows through mean/var).
        batch_stats: bool,
    },
    SelectStep {
        x: Var,
        step: usize,
    },
    LifStep {
        u_prev: Var,
        s_prev: Var,
        s_in: Var,
        w: Var,
        beta: Var,
        theta: Var,
    },
    Fire {
        u: Var,
        theta: Var,
        alpha: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(AutodiffError::Shape(msg))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, needs))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).map(f);
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.data(a).len().max(1);
        let s: T = self.data(a).iter().copied().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s / lit(n as f64)), Op::Mean(a), needs)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    pub fn pointwise(&mut self, a: Var, kind: Pointwise) -> Var {
        let f = match kind {
            Pointwise::Tanh => |x: T| x.tanh(),
            Pointwise::Sigmoid => |x: T| T::one() / (T::one() + (-x).exp()),
            Pointwise::HardTanh => |x: T| x.max(-T::one()).min(T::one()),
        };
        self.unary(a, f, Op::Pointwise(a, kind))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.pointwise(a, Pointwise::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.pointwise(a, Pointwise::Sigmoid)
    }

    pub fn hard_tanh(&mut self, a: Var) -> Var {
        self.pointwise(a, Pointwise::HardTanh)
    }

    /// Ternary hard threshold: `sign(y)` where `|y| >= tau`, else 0. The
    /// backward pass uses the hard-tanh derivative at the input.
    pub fn spike_threshold_ste(&mut self, a: Var, tau: T) -> Result<Var> {
        if !(tau > T::zero()) {
            return Err(AutodiffError::Invalid(format!("threshold must be positive, got {tau}")));
        }
        Ok(self.unary(a, move |y| ste_forward(y, tau), Op::SpikeSte(a)))
    }

    /// `x(N, I) · w(H, I)ᵀ -> (N, H)`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return shape_err(format!("matmul: {xs:?} · {ws:?}ᵀ"));
        }
        let (n, i, h) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); n * h];
        kernels::matmul_nt(self.data(x), self.data(w), n, i, h, T::zero(), &mut out);
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(Tensor::new([n, h], out)?, Op::Matmul { x, w }, needs))
    }

    fn conv_dims(&self, x: Var, w: Var, b: Var, transpose: bool) -> Result<ConvDims> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 3 || ws.len() != 3 || bs.len() != 1 {
            return shape_err(format!("conv1d: input {xs:?}, weight {ws:?}, bias {bs:?}"));
        }
        let (c_in, c_out) = if transpose { (ws[0], ws[1]) } else { (ws[1], ws[0]) };
        if xs[1] != c_in || bs[0] != c_out {
            return shape_err(format!(
                "conv1d: input {xs:?}, weight {ws:?}, bias {bs:?} (transpose={transpose})"
            ));
        }
        if ws[2] % 2 == 0 {
            return Err(AutodiffError::Invalid(format!("kernel length {} must be odd", ws[2])));
        }
        Ok(ConvDims {
            batch: xs[0],
            c_in,
            c_out,
            len: xs[2],
            taps: ws[2],
        })
    }

    /// Stride-1 cross-correlation with zero padding `taps / 2`.
    /// Shapes: input `(N, C_in, K)`, weight `(C_out, C_in, taps)`, bias `(C_out)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let dims = self.conv_dims(x, w, b, false)?;
        let (out, padded) = kernels::conv1d_forward(self.data(x), self.data(w), self.data(b), dims);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let value = Tensor::new([dims.batch, dims.c_out, dims.len], out)?;
        Ok(self.push(
            value,
            Op::Conv {
                x,
                w,
                b,
                dims,
                padded,
                flipped: None,
            },
            needs,
        ))
    }

    /// Adjoint of [`Graph::conv1d`] with the same stride and padding, so the
    /// length is preserved. Weight `(C_in, C_out, taps)`.
    pub fn conv1d_transpose(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let dims = self.conv_dims(x, w, b, true)?;
        let flipped = kernels::transpose_kernel(self.data(w), dims.c_in, dims.c_out, dims.taps);
        let (out, padded) = kernels::conv1d_forward(self.data(x), &flipped, self.data(b), dims);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let value = Tensor::new([dims.batch, dims.c_out, dims.len], out)?;
        Ok(self.push(
            value,
            Op::Conv {
                x,
                w,
                b,
                dims,
                padded,
                flipped: Some(flipped),
            },
            needs,
        ))
    }

    fn bn_check(&self, x: Var, scale: Var, shift: Var) -> Result<(usize, usize, usize)> {
        let xs = self.shape(x);
        if xs.len() != 3 || self.shape(scale) != [xs[1]] || self.shape(shift) != [xs[1]] {
            return shape_err(format!(
                "batchnorm: input {xs:?}, scale {:?}, shift {:?}",
                self.shape(scale),
                self.shape(shift)
            ));
        }
        Ok((xs[0], xs[1], xs[2]))
    }

    /// Training-mode batch normalization over the `N` and `K` axes of an
    /// `(N, C, K)` input.
    pub fn batchnorm1d_train(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        eps: T,
    ) -> Result<(Var, BatchNormStats<T>)> {
        let (n, c, k) = self.bn_check(x, scale, shift)?;
        if n == 0 {
            return Err(AutodiffError::Invalid("batchnorm needs a non-empty batch".into()));
        }
        let stats = kernels::channel_stats(self.data(x), n, c, k);
        let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = kernels::normalize(
            self.data(x),
            (n, c, k),
            &stats.mean,
            &inv_std,
            self.data(scale),
            self.data(shift),
        );
        let m = n * k;
        let unbiased = if m > 1 {
            let f: T = lit(m as f64 / (m - 1) as f64);
            stats.var.iter().map(|&v| v * f).collect()
        } else {
            stats.var.clone()
        };
        let needs = self.needs(x) || self.needs(scale) || self.needs(shift);
        let v = self.push(
            Tensor::new([n, c, k], y)?,
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat,
                inv_std,
                batch_stats: true,
            },
            needs,
        );
        Ok((
            v,
            BatchNormStats {
                mean: stats.mean,
                var: unbiased,
            },
        ))
    }

    /// Inference-mode batch normalization with fixed running statistics.
    pub fn batchnorm1d_eval(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (n, c, k) = self.bn_check(x, scale, shift)?;
        if running_mean.len() != c || running_var.len() != c {
            return shape_err(format!("batchnorm running stats must have {c} channels"));
        }
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = kernels::normalize(
            self.data(x),
            (n, c, k),
            running_mean,
            &inv_std,
            self.data(scale),
            self.data(shift),
        );
        let needs = self.needs(x) || self.needs(scale) || self.needs(shift);
        Ok(self.push(
            Tensor::new([n, c, k], y)?,
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat,
                inv_std,
                batch_stats: false,
            },
            needs,
        ))
    }

    /// Slice `x[:, :, step]` of an `(N, C, K)` tensor into `(N, C)`.
    pub fn select_step(&mut self, x: Var, step: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 || step >= xs[2] {
            return shape_err(format!("select_step {step} of {xs:?}"));
        }
        let (n, c, k) = (xs[0], xs[1], xs[2]);
        let src = self.data(x);
        let out: Vec<T> = (0..n * c).map(|j| src[j * k + step]).collect();
        let needs = self.needs(x);
        Ok(self.push(Tensor::new([n, c], out)?, Op::SelectStep { x, step }, needs))
    }

    /// Membrane update of a leaky integrate-and-fire layer:
    /// `u = beta ⊙ u_prev + s_in · Wᵀ − theta ⊙ s_prev`.
    ///
    /// Shapes: `u_prev`, `s_prev` are `(N, H)`, `s_in` is `(N, I)`, `w` is
    /// `(H, I)`, `beta` and `theta` are `(H)`. The reset spike `s_prev` is
    /// treated as a constant in the backward pass.
    pub fn lif_step(
        &mut self,
        u_prev: Var,
        s_prev: Var,
        s_in: Var,
        w: Var,
        beta: Var,
        theta: Var,
    ) -> Result<Var> {
        let ws = self.shape(w);
        if ws.len() != 2 {
            return shape_err(format!("lif_step weight {ws:?}"));
        }
        let (h, i) = (ws[0], ws[1]);
        let ss = self.shape(s_in);
        if ss.len() != 2 || ss[1] != i {
            return shape_err(format!("lif_step input {ss:?} vs weight {ws:?}"));
        }
        let n = ss[0];
        if self.shape(u_prev) != [n, h] || self.shape(s_prev) != [n, h] {
            return shape_err(format!(
                "lif_step state {:?}/{:?}, expected [{n}, {h}]",
                self.shape(u_prev),
                self.shape(s_prev)
            ));
        }
        if self.shape(beta) != [h] || self.shape(theta) != [h] {
            return shape_err(format!("lif_step beta/theta must be [{h}]"));
        }
        let mut out = vec![T::zero(); n * h];
        kernels::matmul_nt(self.data(s_in), self.data(w), n, i, h, T::zero(), &mut out);
        let (up, sp, b, th) = (
            self.data(u_prev),
            self.data(s_prev),
            self.data(beta),
            self.data(theta),
        );
        for row in 0..n {
            for j in 0..h {
                let idx = row * h + j;
                out[idx] = out[idx] + b[j] * up[idx] - th[j] * sp[idx];
            }
        }
        let needs = [u_prev, s_in, w, beta, theta].iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::new([n, h], out)?,
            Op::LifStep {
                u_prev,
                s_prev,
                s_in,
                w,
                beta,
                theta,
            },
            needs,
        ))
    }

    /// Heaviside firing `s = [u >= theta]` with the arctangent-family
    /// surrogate `1 / (1 + (alpha (u - theta))²)` in the backward pass.
    pub fn fire(&mut self, u: Var, theta: Var, alpha: T) -> Result<Var> {
        let us = self.shape(u);
        if us.len() != 2 || self.shape(theta) != [us[1]] {
            return shape_err(format!("fire: u {us:?}, theta {:?}", self.shape(theta)));
        }
        let h = us[1];
        let th = self.data(theta);
        let out: Vec<T> = self
            .data(u)
            .iter()
            .enumerate()
            .map(|(idx, &v)| if v >= th[idx % h] { T::one() } else { T::zero() })
            .collect();
        let value = Tensor::new(us.to_vec(), out)?;
        let needs = self.needs(u) || self.needs(theta);
        Ok(self.push(value, Op::Fire { u, theta, alpha }, needs))
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return shape_err(format!(
                "backward root must be a scalar, got {:?}",
                self.shape(root)
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root).to_vec(), T::one()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop(node, g.data(), &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Mutable gradient buffer for `v`, or `None` when `v` takes no gradient.
    fn slot<'a>(&self, grads: &'a mut [Option<Tensor<T>>], v: Var) -> Option<&'a mut [T]> {
        if !self.needs(v) {
            return None;
        }
        let entry = &mut grads[v.0];
        if entry.is_none() {
            *entry = Some(Tensor::zeros(self.shape(v).to_vec()));
        }
        entry.as_mut().map(|t| t.data_mut())
    }

    fn backprop(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(ga) = self.slot(grads, v) {
                        ga.iter_mut().zip(g).for_each(|(d, &s)| *d = *d + s);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &s)| *d = *d + s);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.iter_mut().zip(g).for_each(|(d, &s)| *d = *d - s);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &s), &o) in ga.iter_mut().zip(g).zip(bv) {
                        *d = *d + s * o;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((d, &s), &o) in gb.iter_mut().zip(g).zip(av) {
                        *d = *d + s * o;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(d, &s)| *d = *d + s * *c);
                }
            }
            Op::Square(a) => {
                let av = self.data(*a);
                let two: T = lit(2.0);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &s), &x) in ga.iter_mut().zip(g).zip(av) {
                        *d = *d + two * x * s;
                    }
                }
            }
            Op::Abs(a) => {
                let av = self.data(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &s), &x) in ga.iter_mut().zip(g).zip(av) {
                        let sign = if x > T::zero() {
                            T::one()
                        } else if x < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        *d = *d + sign * s;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::Mean(a) => {
                let n: T = lit(self.data(*a).len().max(1) as f64);
                if let Some(ga) = self.slot(grads, *a) {
                    let s = g[0] / n;
                    ga.iter_mut().for_each(|d| *d = *d + s);
                }
            }
            Op::Pointwise(a, kind) => {
                let (xv, yv) = (self.data(*a), node.value.data());
                if let Some(ga) = self.slot(grads, *a) {
                    for (j, d) in ga.iter_mut().enumerate() {
                        let local = match kind {
                            Pointwise::Tanh => T::one() - yv[j] * yv[j],
                            Pointwise::Sigmoid => yv[j] * (T::one() - yv[j]),
                            Pointwise::HardTanh => hard_tanh_grad(xv[j]),
                        };
                        *d = *d + local * g[j];
                    }
                }
            }
            Op::SpikeSte(a) => {
                let xv = self.data(*a);
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, &s), &x) in ga.iter_mut().zip(g).zip(xv) {
                        *d = *d + hard_tanh_grad(x) * s;
                    }
                }
            }
            Op::Matmul { x, w } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (n, i, h) = (xs[0], xs[1], ws[0]);
                let (xv, wv) = (self.data(*x), self.data(*w));
                if let Some(gx) = self.slot(grads, *x) {
                    kernels::matmul_nn_acc(g, wv, n, h, i, gx);
                }
                if let Some(gw) = self.slot(grads, *w) {
                    kernels::matmul_tn_acc(g, xv, n, h, i, gw);
                }
            }
            Op::Conv {
                x,
                w,
                b,
                dims,
                padded,
                flipped,
            } => {
                let conv_w = flipped.as_deref().unwrap_or_else(|| self.data(*w));
                let cg = kernels::conv1d_backward(g, padded, conv_w, *dims, self.needs(*x));
                if let (Some(dx), Some(gx)) = (cg.input, self.slot(grads, *x)) {
                    gx.iter_mut().zip(dx).for_each(|(d, s)| *d = *d + s);
                }
                if let Some(gw) = self.slot(grads, *w) {
                    let dw = if flipped.is_some() {
                        kernels::untranspose_kernel(&cg.weight, dims.c_in, dims.c_out, dims.taps)
                    } else {
                        cg.weight
                    };
                    gw.iter_mut().zip(dw).for_each(|(d, s)| *d = *d + s);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gb.iter_mut().zip(cg.bias).for_each(|(d, s)| *d = *d + s);
                }
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let xs = self.shape(*x);
                let (n, c, k) = (xs[0], xs[1], xs[2]);
                let (sum_dy, sum_dy_xhat) = kernels::channel_grad_sums(g, xhat, n, c, k);
                let gamma = self.data(*scale);
                if let Some(gx) = self.slot(grads, *x) {
                    let m: T = lit((n * k) as f64);
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * k;
                            let coef = gamma[ch] * inv_std[ch];
                            for j in base..base + k {
                                let dx = if *batch_stats {
                                    coef * (g[j] - sum_dy[ch] / m - xhat[j] * sum_dy_xhat[ch] / m)
                                } else {
                                    coef * g[j]
                                };
                                gx[j] = gx[j] + dx;
                            }
                        }
                    }
                }
                if let Some(gs) = self.slot(grads, *scale) {
                    gs.iter_mut().zip(&sum_dy_xhat).for_each(|(d, &s)| *d = *d + s);
                }
                if let Some(gb) = self.slot(grads, *shift) {
                    gb.iter_mut().zip(&sum_dy).for_each(|(d, &s)| *d = *d + s);
                }
            }
            Op::SelectStep { x, step } => {
                let k = self.shape(*x)[2];
                if let Some(gx) = self.slot(grads, *x) {
                    for (j, &s) in g.iter().enumerate() {
                        gx[j * k + step] = gx[j * k + step] + s;
                    }
                }
            }
            Op::LifStep {
                u_prev,
                s_prev,
                s_in,
                w,
                beta,
                theta,
            } => {
                let (n, h) = (node.value.shape()[0], node.value.shape()[1]);
                let i = self.shape(*w)[1];
                let (up, sp) = (self.data(*u_prev), self.data(*s_prev));
                let b = self.data(*beta);
                if let Some(gu) = self.slot(grads, *u_prev) {
                    for (idx, d) in gu.iter_mut().enumerate() {
                        *d = *d + g[idx] * b[idx % h];
                    }
                }
                if let Some(gb) = self.slot(grads, *beta) {
                    for (idx, &s) in g.iter().enumerate() {
                        gb[idx % h] = gb[idx % h] + s * up[idx];
                    }
                }
                if let Some(gt) = self.slot(grads, *theta) {
                    for (idx, &s) in g.iter().enumerate() {
                        gt[idx % h] = gt[idx % h] - s * sp[idx];
                    }
                }
                let (wv, sv) = (self.data(*w), self.data(*s_in));
                if let Some(gs) = self.slot(grads, *s_in) {
                    kernels::matmul_nn_acc(g, wv, n, h, i, gs);
                }
                if let Some(gw) = self.slot(grads, *w) {
                    kernels::matmul_tn_acc(g, sv, n, h, i, gw);
                }
            }
            Op::Fire { u, theta, alpha } => {
                let h = self.shape(*theta)[0];
                let (uv, th) = (self.data(*u), self.data(*theta));
                let surrogate: Vec<T> = uv
                    .iter()
                    .enumerate()
                    .map(|(idx, &v)| {
                        let z = *alpha * (v - th[idx % h]);
                        g[idx] / (T::one() + z * z)
                    })
                    .collect();
                if let Some(gu) = self.slot(grads, *u) {
                    gu.iter_mut().zip(&surrogate).for_each(|(d, &s)| *d = *d + s);
                }
                if let Some(gt) = self.slot(grads, *theta) {
                    for (idx, &s) in surrogate.iter().enumerate() {
                        gt[idx % h] = gt[idx % h] - s;
                    }
                }
            }
        }
    }
}

#[inline]
fn hard_tanh_grad<T: Real>(x: T) -> T {
    if x.abs() <= T::one() {
        T::one()
    } else {
        T::zero()
    }
}

/// Forward rule of the ternary spike threshold.
#[inline]
pub fn ste_forward<T: Real>(y: T, tau: T) -> T {
    if y.abs() >= tau {
        y.signum()
    } else {
        T::zero()
    }
}
