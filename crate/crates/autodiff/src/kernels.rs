//! Raw numeric kernels behind the graph operators. All tensors are row-major
//! slices; batched signals use the `[N, C, K]` layout.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, ArrayViewMut2};

use crate::tensor::{lit, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len: usize,
    pub taps: usize,
}

impl ConvDims {
    fn pad(&self) -> usize {
        self.taps / 2
    }

    /// Per-sample stride in the padded buffer.
    fn padded_len(&self) -> usize {
        self.len + 2 * self.pad()
    }

    fn out_cols(&self) -> usize {
        self.batch * self.padded_len() - 2 * self.pad()
    }
}

/// Same-length 1D cross-correlation with zero padding `taps / 2`.
///
/// Every sample is laid out side by side in one `(c_in, N * (K + 2p))` buffer,
/// so the convolution becomes `taps` shifted GEMMs. Columns that straddle two
/// samples only ever read padding and are discarded.
pub(crate) fn conv1d_forward<T: Real>(
    x: &[T],
    weight: &[T],
    bias: &[T],
    d: ConvDims,
) -> (Vec<T>, Array2<T>) {
    let pad = d.pad();
    let lp = d.padded_len();
    let lout = d.out_cols();
    let mut padded = Array2::<T>::zeros((d.c_in, d.batch * lp));
    {
        let buf = padded.as_slice_mut().expect("standard layout");
        let row = d.batch * lp;
        for n in 0..d.batch {
            for i in 0..d.c_in {
                let src = &x[(n * d.c_in + i) * d.len..][..d.len];
                buf[i * row + n * lp + pad..][..d.len].copy_from_slice(src);
            }
        }
    }
    let w = ArrayView3::from_shape((d.c_out, d.c_in, d.taps), weight).expect("weight shape");
    let mut full = Array2::<T>::zeros((d.c_out, lout));
    for t in 0..d.taps {
        general_mat_mul(
            T::one(),
            &w.slice(s![.., .., t]),
            &padded.slice(s![.., t..t + lout]),
            T::one(),
            &mut full,
        );
    }
    let full_buf = full.as_slice().expect("standard layout");
    let mut out = vec![T::zero(); d.batch * d.c_out * d.len];
    for n in 0..d.batch {
        for o in 0..d.c_out {
            let src = &full_buf[o * lout + n * lp..][..d.len];
            let dst = &mut out[(n * d.c_out + o) * d.len..][..d.len];
            for (y, &v) in dst.iter_mut().zip(src) {
                *y = v + bias[o];
            }
        }
    }
    (out, padded)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub(crate) fn conv1d_backward<T: Real>(
    dy: &[T],
    padded: &Array2<T>,
    weight: &[T],
    d: ConvDims,
    need_input: bool,
) -> ConvGrads<T> {
    let pad = d.pad();
    let lp = d.padded_len();
    let lout = d.out_cols();
    let mut dfull = Array2::<T>::zeros((d.c_out, lout));
    let mut dbias = vec![T::zero(); d.c_out];
    {
        let buf = dfull.as_slice_mut().expect("standard layout");
        for n in 0..d.batch {
            for o in 0..d.c_out {
                let src = &dy[(n * d.c_out + o) * d.len..][..d.len];
                buf[o * lout + n * lp..][..d.len].copy_from_slice(src);
                dbias[o] = dbias[o] + src.iter().copied().sum::<T>();
            }
        }
    }
    let mut dw = Array3::<T>::zeros((d.c_out, d.c_in, d.taps));
    for t in 0..d.taps {
        let mut dst: ArrayViewMut2<T> = dw.slice_mut(s![.., .., t]);
        general_mat_mul(
            T::one(),
            &dfull,
            &padded.slice(s![.., t..t + lout]).t(),
            T::zero(),
            &mut dst,
        );
    }
    let input = need_input.then(|| {
        let w = ArrayView3::from_shape((d.c_out, d.c_in, d.taps), weight).expect("weight shape");
        let mut dpad = Array2::<T>::zeros((d.c_in, d.batch * lp));
        for t in 0..d.taps {
            general_mat_mul(
                T::one(),
                &w.slice(s![.., .., t]).t(),
                &dfull,
                T::one(),
                &mut dpad.slice_mut(s![.., t..t + lout]),
            );
        }
        let buf = dpad.as_slice().expect("standard layout");
        let row = d.batch * lp;
        let mut dx = vec![T::zero(); d.batch * d.c_in * d.len];
        for n in 0..d.batch {
            for i in 0..d.c_in {
                dx[(n * d.c_in + i) * d.len..][..d.len]
                    .copy_from_slice(&buf[i * row + n * lp + pad..][..d.len]);
            }
        }
        dx
    });
    ConvGrads {
        input,
        weight: dw.into_raw_vec_and_offset().0,
        bias: dbias,
    }
}

/// Maps a transposed-conv weight `(c_in, c_out, taps)` onto the equivalent
/// cross-correlation weight `(c_out, c_in, taps)` with reversed taps.
pub(crate) fn transpose_kernel<T: Real>(weight: &[T], c_in: usize, c_out: usize, taps: usize) -> Vec<T> {
    let mut out = vec![T::zero(); weight.len()];
    for i in 0..c_in {
        for o in 0..c_out {
            for t in 0..taps {
                out[(o * c_in + i) * taps + (taps - 1 - t)] = weight[(i * c_out + o) * taps + t];
            }
        }
    }
    out
}

/// Inverse of [`transpose_kernel`] (the mapping is an involution up to the
/// channel roles).
pub(crate) fn untranspose_kernel<T: Real>(conv_w: &[T], c_in: usize, c_out: usize, taps: usize) -> Vec<T> {
    let mut out = vec![T::zero(); conv_w.len()];
    for i in 0..c_in {
        for o in 0..c_out {
            for t in 0..taps {
                out[(i * c_out + o) * taps + t] = conv_w[(o * c_in + i) * taps + (taps - 1 - t)];
            }
        }
    }
    out
}

pub(crate) struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Per-channel statistics over the `N` and `K` axes of an `[N, C, K]` buffer.
/// Returns biased variances.
pub(crate) fn channel_stats<T: Real>(x: &[T], n: usize, c: usize, k: usize) -> BatchStats<T> {
    let count: T = lit((n * k) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = T::zero();
        for s in 0..n {
            acc = acc + x[(s * c + ch) * k..][..k].iter().copied().sum::<T>();
        }
        let m = acc / count;
        let mut sq = T::zero();
        for s in 0..n {
            for &v in &x[(s * c + ch) * k..][..k] {
                let dv = v - m;
                sq = sq + dv * dv;
            }
        }
        mean[ch] = m;
        var[ch] = sq / count;
    }
    BatchStats { mean, var }
}

/// Affine normalization `y = scale * (x - mean) * inv_std + shift`.
/// Returns `(y, xhat)`.
pub(crate) fn normalize<T: Real>(
    x: &[T],
    (n, c, k): (usize, usize, usize),
    mean: &[T],
    inv_std: &[T],
    scale: &[T],
    shift: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * k;
            for j in base..base + k {
                let h = (x[j] - mean[ch]) * inv_std[ch];
                xhat[j] = h;
                y[j] = scale[ch] * h + shift[ch];
            }
        }
    }
    (y, xhat)
}

/// Sums of `dy` and `dy * xhat` per channel.
pub(crate) fn channel_grad_sums<T: Real>(dy: &[T], xhat: &[T], n: usize, c: usize, k: usize) -> (Vec<T>, Vec<T>) {
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * k;
            for j in base..base + k {
                sum_dy[ch] = sum_dy[ch] + dy[j];
                sum_dy_xhat[ch] = sum_dy_xhat[ch] + dy[j] * xhat[j];
            }
        }
    }
    (sum_dy, sum_dy_xhat)
}

/// `out(N, H) = x(N, I) · w(H, I)ᵀ`, accumulated into `out` with factor `beta`.
pub(crate) fn matmul_nt<T: Real>(x: &[T], w: &[T], n: usize, i: usize, h: usize, beta: T, out: &mut [T]) {
    let xv = ArrayView2::from_shape((n, i), x).expect("lhs shape");
    let wv = ArrayView2::from_shape((h, i), w).expect("rhs shape");
    let mut ov = ndarray::ArrayViewMut2::from_shape((n, h), out).expect("out shape");
    general_mat_mul(T::one(), &xv, &wv.t(), beta, &mut ov);
}

/// `out(N, I) += g(N, H) · w(H, I)`.
pub(crate) fn matmul_nn_acc<T: Real>(g: &[T], w: &[T], n: usize, h: usize, i: usize, out: &mut [T]) {
    let gv = ArrayView2::from_shape((n, h), g).expect("lhs shape");
    let wv = ArrayView2::from_shape((h, i), w).expect("rhs shape");
    let mut ov = ndarray::ArrayViewMut2::from_shape((n, i), out).expect("out shape");
    general_mat_mul(T::one(), &gv, &wv, T::one(), &mut ov);
}

/// `out(H, I) += g(N, H)ᵀ · x(N, I)`.
pub(crate) fn matmul_tn_acc<T: Real>(g: &[T], x: &[T], n: usize, h: usize, i: usize, out: &mut [T]) {
    let gv = ArrayView2::from_shape((n, h), g).expect("lhs shape");
    let xv = ArrayView2::from_shape((n, i), x).expect("rhs shape");
    let mut ov = ndarray::ArrayViewMut2::from_shape((h, i), out).expect("out shape");
    general_mat_mul(T::one(), &gv.t(), &xv, T::one(), &mut ov);
}
