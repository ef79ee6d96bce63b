//! Network building blocks: complex 2-D convolution (with its transposed and
//! gradient forms), per-part group normalization, per-part leaky rectifier,
//! and the random Fourier time embedding.
//!
//! Complex convolution follows the natural complex algebra
//!
//! ```text
//! out = (Wr * xr - Wi * xi) + i (Wr * xi + Wi * xr)
//! ```
//!
//! realized directly with complex multiplies. Backpropagation through a
//! complex-linear map uses conj(W) for the input gradient and g * conj(x)
//! for the weight gradient (the real-pair Jacobian transpose).

use num_complex::Complex64;

use super::tensor::FeatureMap;

/// Negative slope of the leaky rectifier, applied to re and im separately.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Group-normalization variance damping.
pub const GN_EPS: f64 = 1e-6;

/// Static geometry of one convolution: shapes, stride, dilation and the
/// "same" zero padding that yields out = ceil(in / stride) per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_shape: (usize, usize),
    pub out_shape: (usize, usize),
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    /// Zero padding before the first sample, per axis.
    pub pad: (i64, i64),
}

fn axis_geom(n: usize, k: usize, s: usize, d: usize) -> (usize, i64) {
    let eff_k = (k - 1) * d + 1;
    let out = n.div_ceil(s);
    let total_pad = ((out - 1) * s + eff_k).saturating_sub(n);
    (out, (total_pad / 2) as i64)
}

impl ConvGeom {
    pub fn new(
        in_shape: (usize, usize),
        kernel: (usize, usize),
        stride: (usize, usize),
        dilation: (usize, usize),
    ) -> Self {
        let (out_f, pad_f) = axis_geom(in_shape.0, kernel.0, stride.0, dilation.0);
        let (out_t, pad_t) = axis_geom(in_shape.1, kernel.1, stride.1, dilation.1);
        Self {
            in_shape,
            out_shape: (out_f, out_t),
            kernel,
            stride,
            dilation,
            pad: (pad_f, pad_t),
        }
    }
}

#[inline]
fn maybe_conj(w: Complex64, conj: bool) -> Complex64 {
    if conj {
        w.conj()
    } else {
        w
    }
}

/// Gather form: out[cd, p] = bias[cd] + sum_cs sum_k W[cd, cs, k] x[cs, q(p, k)]
/// with q = p * stride + k * dilation - pad. This is the forward convolution
/// (conj = false) and the transposed convolution's input gradient
/// (conj = true).
pub fn gather(
    src: &FeatureMap,
    w: &[Complex64],
    c_dst: usize,
    bias: Option<&[Complex64]>,
    geom: &ConvGeom,
    conj: bool,
) -> FeatureMap {
    debug_assert_eq!(src.spatial_shape(), geom.in_shape);
    let c_src = src.channels;
    let (out_f, out_t) = geom.out_shape;
    let (in_f, in_t) = geom.in_shape;
    let (k_f, k_t) = geom.kernel;
    debug_assert_eq!(w.len(), c_dst * c_src * k_f * k_t);
    let mut out = FeatureMap::zeros(c_dst, out_f, out_t);
    for cd in 0..c_dst {
        let b = bias.map_or(Complex64::ZERO, |b| b[cd]);
        for pf in 0..out_f {
            for pt in 0..out_t {
                let mut acc = b;
                for cs in 0..c_src {
                    let w_base = ((cd * c_src + cs) * k_f) * k_t;
                    for kf in 0..k_f {
                        let qf = (pf * geom.stride.0 + kf * geom.dilation.0) as i64 - geom.pad.0;
                        if qf < 0 || qf >= in_f as i64 {
                            continue;
                        }
                        let src_base = (cs * in_f + qf as usize) * in_t;
                        for kt in 0..k_t {
                            let qt =
                                (pt * geom.stride.1 + kt * geom.dilation.1) as i64 - geom.pad.1;
                            if qt < 0 || qt >= in_t as i64 {
                                continue;
                            }
                            let wv = maybe_conj(w[w_base + kf * k_t + kt], conj);
                            acc += wv * src.data[src_base + qt as usize];
                        }
                    }
                }
                let i = out.idx(cd, pf, pt);
                out.data[i] = acc;
            }
        }
    }
    out
}

/// Scatter form, the geometric transpose of [`gather`]:
/// out[cd, q(p, k)] += W[cs, cd, k] src[cs, p]. This is the transposed
/// convolution's forward pass (conj = false) and the convolution's input
/// gradient (conj = true).
pub fn scatter(
    src: &FeatureMap,
    w: &[Complex64],
    c_dst: usize,
    bias: Option<&[Complex64]>,
    geom: &ConvGeom,
    conj: bool,
) -> FeatureMap {
    debug_assert_eq!(src.spatial_shape(), geom.out_shape);
    let c_src = src.channels;
    let (out_f, out_t) = geom.out_shape;
    let (in_f, in_t) = geom.in_shape;
    let (k_f, k_t) = geom.kernel;
    debug_assert_eq!(w.len(), c_src * c_dst * k_f * k_t);
    let mut out = FeatureMap::zeros(c_dst, in_f, in_t);
    if let Some(bias) = bias {
        let plane = out.plane();
        for cd in 0..c_dst {
            out.data[cd * plane..(cd + 1) * plane].fill(bias[cd]);
        }
    }
    for cs in 0..c_src {
        for cd in 0..c_dst {
            let w_base = ((cs * c_dst + cd) * k_f) * k_t;
            for pf in 0..out_f {
                for pt in 0..out_t {
                    let v = src.data[src.idx(cs, pf, pt)];
                    if v == Complex64::ZERO {
                        continue;
                    }
                    for kf in 0..k_f {
                        let qf = (pf * geom.stride.0 + kf * geom.dilation.0) as i64 - geom.pad.0;
                        if qf < 0 || qf >= in_f as i64 {
                            continue;
                        }
                        let out_base = (cd * in_f + qf as usize) * in_t;
                        for kt in 0..k_t {
                            let qt =
                                (pt * geom.stride.1 + kt * geom.dilation.1) as i64 - geom.pad.1;
                            if qt < 0 || qt >= in_t as i64 {
                                continue;
                            }
                            let wv = maybe_conj(w[w_base + kf * k_t + kt], conj);
                            out.data[out_base + qt as usize] += wv * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Which factor carries the conjugate in the weight-gradient bilinear form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConjSide {
    /// Convolution: dW[cd, cs, k] = sum_p g[cd, p] conj(x[cs, q(p, k)]).
    InSide,
    /// Transposed convolution: dW[cs, cd, k] = sum_p conj(u[cs, p]) g[cd, q(p, k)].
    OutSide,
}

/// Weight gradient shared by the convolution (out_side = output gradient,
/// in_side = input, ConjSide::InSide) and the transposed convolution
/// (out_side = input, in_side = output gradient, ConjSide::OutSide).
/// Result layout is [c(out_side), c(in_side), k_f, k_t].
pub fn weight_grad(
    out_side: &FeatureMap,
    in_side: &FeatureMap,
    geom: &ConvGeom,
    conj: ConjSide,
) -> Vec<Complex64> {
    debug_assert_eq!(out_side.spatial_shape(), geom.out_shape);
    debug_assert_eq!(in_side.spatial_shape(), geom.in_shape);
    let (out_f, out_t) = geom.out_shape;
    let (in_f, in_t) = geom.in_shape;
    let (k_f, k_t) = geom.kernel;
    let mut dw = vec![Complex64::ZERO; out_side.channels * in_side.channels * k_f * k_t];
    for ca in 0..out_side.channels {
        for cb in 0..in_side.channels {
            let w_base = ((ca * in_side.channels + cb) * k_f) * k_t;
            for kf in 0..k_f {
                for kt in 0..k_t {
                    let mut acc = Complex64::ZERO;
                    for pf in 0..out_f {
                        let qf = (pf * geom.stride.0 + kf * geom.dilation.0) as i64 - geom.pad.0;
                        if qf < 0 || qf >= in_f as i64 {
                            continue;
                        }
                        let a_base = (ca * out_f + pf) * out_t;
                        let b_base = (cb * in_f + qf as usize) * in_t;
                        for pt in 0..out_t {
                            let qt =
                                (pt * geom.stride.1 + kt * geom.dilation.1) as i64 - geom.pad.1;
                            if qt < 0 || qt >= in_t as i64 {
                                continue;
                            }
                            let a = out_side.data[a_base + pt];
                            let b = in_side.data[b_base + qt as usize];
                            acc += match conj {
                                ConjSide::InSide => a * b.conj(),
                                ConjSide::OutSide => a.conj() * b,
                            };
                        }
                    }
                    dw[w_base + kf * k_t + kt] = acc;
                }
            }
        }
    }
    dw
}

/// Per-channel sum of a gradient map (the bias gradient).
pub fn bias_grad(g: &FeatureMap) -> Vec<Complex64> {
    (0..g.channels)
        .map(|c| {
            let base = c * g.plane();
            g.data[base..base + g.plane()]
                .iter()
                .fold(Complex64::ZERO, |a, &b| a + b)
        })
        .collect()
}

/// Standalone complex convolution without bias (the raw linear operation).
pub fn complex_conv(
    input: &FeatureMap,
    w: &[Complex64],
    c_out: usize,
    stride: (usize, usize),
    dilation: (usize, usize),
    kernel: (usize, usize),
) -> FeatureMap {
    let geom = ConvGeom::new(input.spatial_shape(), kernel, stride, dilation);
    gather(input, w, c_out, None, &geom, false)
}

/// Largest divisor of `channels` that is at most 8; the group count used by
/// every normalization in the network.
pub fn num_groups(channels: usize) -> usize {
    (1..=channels.min(8))
        .rev()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}

/// Cache for the group-norm backward pass: the normalized (pre-affine) map
/// and the inverse standard deviation per (group, part).
#[derive(Debug, Clone)]
pub struct GroupNormCache {
    pub xhat: FeatureMap,
    pub inv_sigma: Vec<[f64; 2]>,
}

/// Group normalization applied to the real and imaginary parts separately,
/// with per-channel per-part affine parameters (`gamma`, `beta` are
/// interleaved as [c][re, im]).
pub fn group_norm_forward(
    x: &FeatureMap,
    gamma: &[f64],
    beta: &[f64],
) -> (FeatureMap, GroupNormCache) {
    let c = x.channels;
    let groups = num_groups(c);
    let gsize = c / groups;
    let plane = x.plane();
    let n = (gsize * plane) as f64;

    let mut xhat = FeatureMap::zeros(c, x.n_freq, x.n_frames);
    let mut inv_sigma = vec![[0.0f64; 2]; groups];
    for g in 0..groups {
        let start = g * gsize * plane;
        let end = start + gsize * plane;
        let slice = &x.data[start..end];
        let (mut mean_re, mut mean_im) = (0.0, 0.0);
        for v in slice {
            mean_re += v.re;
            mean_im += v.im;
        }
        mean_re /= n;
        mean_im /= n;
        let (mut var_re, mut var_im) = (0.0, 0.0);
        for v in slice {
            var_re += (v.re - mean_re) * (v.re - mean_re);
            var_im += (v.im - mean_im) * (v.im - mean_im);
        }
        var_re /= n;
        var_im /= n;
        let is_re = 1.0 / (var_re + GN_EPS).sqrt();
        let is_im = 1.0 / (var_im + GN_EPS).sqrt();
        inv_sigma[g] = [is_re, is_im];
        for (dst, v) in xhat.data[start..end].iter_mut().zip(slice) {
            *dst = Complex64::new((v.re - mean_re) * is_re, (v.im - mean_im) * is_im);
        }
    }

    let mut out = FeatureMap::zeros(c, x.n_freq, x.n_frames);
    for ch in 0..c {
        let (g_re, g_im) = (gamma[2 * ch], gamma[2 * ch + 1]);
        let (b_re, b_im) = (beta[2 * ch], beta[2 * ch + 1]);
        let base = ch * plane;
        for i in base..base + plane {
            let v = xhat.data[i];
            out.data[i] = Complex64::new(g_re * v.re + b_re, g_im * v.im + b_im);
        }
    }
    (out, GroupNormCache { xhat, inv_sigma })
}

/// Backward pass of [`group_norm_forward`]. Returns (dx, dgamma, dbeta) with
/// the affine gradients interleaved like the parameters.
pub fn group_norm_backward(
    g_out: &FeatureMap,
    cache: &GroupNormCache,
    gamma: &[f64],
) -> (FeatureMap, Vec<f64>, Vec<f64>) {
    let c = g_out.channels;
    let groups = cache.inv_sigma.len();
    let gsize = c / groups;
    let plane = g_out.plane();
    let n = (gsize * plane) as f64;

    let mut dgamma = vec![0.0f64; 2 * c];
    let mut dbeta = vec![0.0f64; 2 * c];
    for ch in 0..c {
        let base = ch * plane;
        let (mut dg_re, mut dg_im, mut db_re, mut db_im) = (0.0, 0.0, 0.0, 0.0);
        for i in base..base + plane {
            let g = g_out.data[i];
            let xh = cache.xhat.data[i];
            dg_re += g.re * xh.re;
            dg_im += g.im * xh.im;
            db_re += g.re;
            db_im += g.im;
        }
        dgamma[2 * ch] = dg_re;
        dgamma[2 * ch + 1] = dg_im;
        dbeta[2 * ch] = db_re;
        dbeta[2 * ch + 1] = db_im;
    }

    let mut dx = FeatureMap::zeros(c, g_out.n_freq, g_out.n_frames);
    for g in 0..groups {
        let start = g * gsize * plane;
        let end = start + gsize * plane;
        // dxhat = g_out * gamma (per part); means over the group
        let (mut m1_re, mut m1_im, mut m2_re, mut m2_im) = (0.0, 0.0, 0.0, 0.0);
        for i in start..end {
            let ch = i / plane;
            let dxh_re = g_out.data[i].re * gamma[2 * ch];
            let dxh_im = g_out.data[i].im * gamma[2 * ch + 1];
            let xh = cache.xhat.data[i];
            m1_re += dxh_re;
            m1_im += dxh_im;
            m2_re += dxh_re * xh.re;
            m2_im += dxh_im * xh.im;
        }
        m1_re /= n;
        m1_im /= n;
        m2_re /= n;
        m2_im /= n;
        let [is_re, is_im] = cache.inv_sigma[g];
        for i in start..end {
            let ch = i / plane;
            let dxh_re = g_out.data[i].re * gamma[2 * ch];
            let dxh_im = g_out.data[i].im * gamma[2 * ch + 1];
            let xh = cache.xhat.data[i];
            dx.data[i] = Complex64::new(
                is_re * (dxh_re - m1_re - xh.re * m2_re),
                is_im * (dxh_im - m1_im - xh.im * m2_im),
            );
        }
    }
    (dx, dgamma, dbeta)
}

#[inline]
fn lrelu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[inline]
fn lrelu_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Leaky rectifier applied to re and im separately.
pub fn leaky_relu_map(x: &FeatureMap) -> FeatureMap {
    FeatureMap {
        channels: x.channels,
        n_freq: x.n_freq,
        n_frames: x.n_frames,
        data: x
            .data
            .iter()
            .map(|v| Complex64::new(lrelu(v.re), lrelu(v.im)))
            .collect(),
    }
}

/// Backward of [`leaky_relu_map`] given the pre-activation map.
pub fn leaky_relu_backward(g: &FeatureMap, pre: &FeatureMap) -> FeatureMap {
    FeatureMap {
        channels: g.channels,
        n_freq: g.n_freq,
        n_frames: g.n_frames,
        data: g
            .data
            .iter()
            .zip(&pre.data)
            .map(|(gv, pv)| Complex64::new(gv.re * lrelu_grad(pv.re), gv.im * lrelu_grad(pv.im)))
            .collect(),
    }
}

pub fn leaky_relu_complex(v: Complex64) -> Complex64 {
    Complex64::new(lrelu(v.re), lrelu(v.im))
}

pub fn leaky_relu_complex_grad(g: Complex64, pre: Complex64) -> Complex64 {
    Complex64::new(g.re * lrelu_grad(pre.re), g.im * lrelu_grad(pre.im))
}

/// Random Fourier feature embedding of the diffusion time:
/// [sin(2 pi f_k t), ..., cos(2 pi f_k t), ...] of length 2 * freqs.len().
pub fn fourier_time_embedding(t: f64, freqs: &[f64]) -> Vec<f64> {
    let mut emb = Vec::with_capacity(2 * freqs.len());
    emb.extend(freqs.iter().map(|f| (std::f64::consts::TAU * f * t).sin()));
    emb.extend(freqs.iter().map(|f| (std::f64::consts::TAU * f * t).cos()));
    emb
}

/// Complex affine layer applied to the (real) time embedding:
/// e[c] = sum_d W[c, d] emb[d] + b[c].
pub fn temb_affine(emb: &[f64], w: &[Complex64], b: &[Complex64], channels: usize) -> Vec<Complex64> {
    let dim = emb.len();
    debug_assert_eq!(w.len(), channels * dim);
    (0..channels)
        .map(|c| {
            let mut acc = b[c];
            for (d, &e) in emb.iter().enumerate() {
                acc += w[c * dim + d] * e;
            }
            acc
        })
        .collect()
}

/// Gradients of [`temb_affine`]: since the embedding is real,
/// dW[c, d] = g[c] * emb[d] and db[c] = g[c]. Returned interleaved (re, im).
pub fn temb_affine_backward(g: &[Complex64], emb: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dim = emb.len();
    let mut dw = vec![0.0f64; g.len() * dim * 2];
    let mut db = vec![0.0f64; g.len() * 2];
    for (c, gc) in g.iter().enumerate() {
        db[2 * c] = gc.re;
        db[2 * c + 1] = gc.im;
        for (d, &e) in emb.iter().enumerate() {
            dw[2 * (c * dim + d)] = gc.re * e;
            dw[2 * (c * dim + d) + 1] = gc.im * e;
        }
    }
    (dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(c: usize, f: usize, t: usize, rng: &mut impl Rng) -> FeatureMap {
        let mut m = FeatureMap::zeros(c, f, t);
        for v in &mut m.data {
            *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        m
    }

    #[test]
    fn same_padding_shapes() {
        let g = ConvGeom::new((16, 10), (4, 4), (2, 1), (2, 1));
        assert_eq!(g.out_shape, (8, 10));
        let g = ConvGeom::new((7, 7), (4, 4), (2, 2), (1, 1));
        assert_eq!(g.out_shape, (4, 4));
    }

    #[test]
    fn real_weights_real_input_match_real_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = FeatureMap::zeros(1, 5, 5);
        for v in &mut x.data {
            *v = Complex64::new(rng.random_range(-1.0..1.0), 0.0);
        }
        let w: Vec<Complex64> = (0..4)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), 0.0))
            .collect();
        let out = complex_conv(&x, &w, 1, (1, 1), (1, 1), (2, 2));
        assert!(out.data.iter().all(|v| v.im == 0.0));

        // plain real correlation with the same geometry as the oracle
        let geom = ConvGeom::new((5, 5), (2, 2), (1, 1), (1, 1));
        for pf in 0..geom.out_shape.0 {
            for pt in 0..geom.out_shape.1 {
                let mut acc = 0.0;
                for kf in 0..2 {
                    for kt in 0..2 {
                        let qf = (pf + kf) as i64 - geom.pad.0;
                        let qt = (pt + kt) as i64 - geom.pad.1;
                        if qf >= 0 && qf < 5 && qt >= 0 && qt < 5 {
                            acc += w[kf * 2 + kt].re * x.data[(qf * 5 + qt) as usize].re;
                        }
                    }
                }
                assert_abs_diff_eq!(out.data[out.idx(0, pf, pt)].re, acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn imaginary_identity_kernel_rotates_by_ninety_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_map(1, 4, 4, &mut rng);
        let w = vec![Complex64::new(0.0, 1.0)];
        let out = complex_conv(&x, &w, 1, (1, 1), (1, 1), (1, 1));
        for (o, v) in out.data.iter().zip(&x.data) {
            let rotated = Complex64::new(0.0, 1.0) * v;
            assert_abs_diff_eq!(o.re, rotated.re, epsilon = 1e-12);
            assert_abs_diff_eq!(o.im, rotated.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn matches_brute_force_complex_convolution() {
        // random 3x3 input, 1 channel, fixed 2x2 complex kernel against a
        // four-real-correlation direct-summation oracle
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_map(1, 3, 3, &mut rng);
        let w = vec![
            Complex64::new(0.5, -0.25),
            Complex64::new(-1.0, 0.75),
            Complex64::new(0.1, 0.3),
            Complex64::new(0.0, -0.6),
        ];
        let out = complex_conv(&x, &w, 1, (1, 1), (1, 1), (2, 2));
        let geom = ConvGeom::new((3, 3), (2, 2), (1, 1), (1, 1));
        for pf in 0..geom.out_shape.0 {
            for pt in 0..geom.out_shape.1 {
                let (mut rr, mut ii, mut ri, mut ir) = (0.0, 0.0, 0.0, 0.0);
                for kf in 0..2usize {
                    for kt in 0..2usize {
                        let qf = (pf + kf) as i64 - geom.pad.0;
                        let qt = (pt + kt) as i64 - geom.pad.1;
                        if qf >= 0 && qf < 3 && qt >= 0 && qt < 3 {
                            let xv = x.data[(qf * 3 + qt) as usize];
                            let wv = w[kf * 2 + kt];
                            rr += wv.re * xv.re;
                            ii += wv.im * xv.im;
                            ri += wv.re * xv.im;
                            ir += wv.im * xv.re;
                        }
                    }
                }
                let expected = Complex64::new(rr - ii, ri + ir);
                let got = out.data[out.idx(0, pf, pt)];
                assert_abs_diff_eq!(got.re, expected.re, epsilon = 1e-12);
                assert_abs_diff_eq!(got.im, expected.im, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn conv_commutes_with_unit_complex_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_map(2, 6, 5, &mut rng);
        let w: Vec<Complex64> = (0..3 * 2 * 4 * 4)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let c = Complex64::from_polar(1.0, 0.83);
        let scaled = FeatureMap {
            data: x.data.iter().map(|v| c * v).collect(),
            ..x.clone()
        };
        let lhs = complex_conv(&scaled, &w, 3, (2, 1), (1, 2), (4, 4));
        let rhs = complex_conv(&x, &w, 3, (2, 1), (1, 2), (4, 4));
        for (a, b) in lhs.data.iter().zip(&rhs.data) {
            let cb = c * b;
            assert_abs_diff_eq!(a.re, cb.re, epsilon = 1e-12);
            assert_abs_diff_eq!(a.im, cb.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn scatter_is_the_adjoint_of_gather() {
        // <gather(x), g> == <x, scatter(g, conj)> over real coordinates
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let geom = ConvGeom::new((6, 7), (3, 2), (2, 2), (2, 1));
        let x = random_map(2, 6, 7, &mut rng);
        let g = random_map(3, geom.out_shape.0, geom.out_shape.1, &mut rng);
        let w: Vec<Complex64> = (0..3 * 2 * 3 * 2)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let fwd = gather(&x, &w, 3, None, &geom, false);
        let back = scatter(&g, &w, 2, None, &geom, true);
        let lhs: f64 = fwd
            .data
            .iter()
            .zip(&g.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        let rhs: f64 = x
            .data
            .iter()
            .zip(&back.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
    }

    #[test]
    fn group_counts_divide_channels() {
        assert_eq!(num_groups(16), 8);
        assert_eq!(num_groups(32), 8);
        assert_eq!(num_groups(12), 6);
        assert_eq!(num_groups(3), 3);
        assert_eq!(num_groups(1), 1);
    }

    #[test]
    fn group_norm_normalizes_per_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_map(4, 5, 5, &mut rng);
        let gamma = vec![1.0; 8];
        let beta = vec![0.0; 8];
        let (out, cache) = group_norm_forward(&x, &gamma, &beta);
        let groups = num_groups(4);
        let gsize = 4 / groups;
        let plane = x.plane();
        for g in 0..groups {
            let slice = &out.data[g * gsize * plane..(g + 1) * gsize * plane];
            let n = slice.len() as f64;
            let mean_re: f64 = slice.iter().map(|v| v.re).sum::<f64>() / n;
            let var_re: f64 = slice.iter().map(|v| (v.re - mean_re).powi(2)).sum::<f64>() / n;
            assert_abs_diff_eq!(mean_re, 0.0, epsilon = 1e-10);
            assert_relative_eq!(var_re, 1.0, max_relative = 1e-3);
        }
        assert_eq!(cache.inv_sigma.len(), groups);
    }

    #[test]
    fn fourier_embedding_shape_and_t_zero() {
        let freqs = vec![0.3, -1.2, 4.0, 0.01];
        let emb = fourier_time_embedding(0.0, &freqs);
        assert_eq!(emb.len(), 8);
        for &s in &emb[..4] {
            assert_eq!(s, 0.0);
        }
        for &c in &emb[4..] {
            assert_eq!(c, 1.0);
        }
        let e1 = fourier_time_embedding(0.4, &freqs);
        assert!(e1.iter().all(|v| (-1.0..=1.0).contains(v)));
        let e2 = fourier_time_embedding(0.5, &freqs);
        assert_ne!(e1, e2);
    }
}
