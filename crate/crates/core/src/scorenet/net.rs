//! The complex-valued U-Net score model s(x_t, t, y).
//!
//! Encoder blocks apply a strided/dilated complex convolution, per-part group
//! normalization, an additive per-channel time embedding (random Fourier
//! features through a per-block complex affine layer and a per-part leaky
//! rectifier), and a per-part leaky rectifier. Decoder blocks mirror the
//! encoder with transposed complex convolutions built as the exact adjoint of
//! the corresponding encoder geometry, so every decoder output restores its
//! encoder input extent bit-for-bit; skip connections are concatenated along
//! the channel axis. A 1x1 complex linear head produces the single
//! unconstrained output channel.
//!
//! Gradients are hand-derived per layer and verified against central finite
//! differences (see the tests and the acceptance suite).

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::{
    bias_grad, fourier_time_embedding, gather, group_norm_backward, group_norm_forward,
    leaky_relu_backward, leaky_relu_complex, leaky_relu_complex_grad, leaky_relu_map, scatter,
    temb_affine, temb_affine_backward, weight_grad, ConjSide, ConvGeom, GroupNormCache,
};
use super::tensor::{FeatureMap, ParamStore, Tensor};
use crate::{Error, Result, SpecGrid};

/// Architecture of the score network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Number of encoder/decoder levels.
    pub depth: usize,
    /// Complex input channels per encoder level; level 0 is always 2 (x_t, y).
    pub channels_in: Vec<usize>,
    /// Complex output channels per encoder level.
    pub channels_out: Vec<usize>,
    /// Kernel size (freq, time), shared across levels.
    pub kernel: (usize, usize),
    /// Stride (freq, time) per level.
    pub strides: Vec<(usize, usize)>,
    /// Dilation (freq, time) per level.
    pub dilations: Vec<(usize, usize)>,
    /// Length of the Fourier time embedding (even).
    pub time_embed_dim: usize,
    /// Standard deviation of the frozen Fourier frequencies.
    pub fourier_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::mini()
    }
}

impl NetConfig {
    /// Desk-scale default: three levels at 2 -> 16 -> 16 -> 32 complex
    /// channels exercising stride, dilation, time embedding and skips.
    pub fn mini() -> Self {
        Self {
            depth: 3,
            channels_in: vec![2, 16, 16],
            channels_out: vec![16, 16, 32],
            kernel: (4, 4),
            strides: vec![(1, 1), (2, 1), (2, 2)],
            dilations: vec![(1, 1), (2, 1), (4, 1)],
            time_embed_dim: 128,
            fourier_scale: 16.0,
        }
    }

    /// Full-size configuration (six levels up to 256 channels).
    pub fn full_scale() -> Self {
        Self {
            depth: 6,
            channels_in: vec![2, 32, 32, 32, 64, 128],
            channels_out: vec![32, 32, 32, 64, 128, 256],
            kernel: (4, 4),
            strides: vec![(1, 1), (1, 1), (1, 1), (2, 1), (2, 2), (2, 2)],
            dilations: vec![(1, 1), (1, 1), (1, 1), (2, 1), (4, 1), (8, 1)],
            time_embed_dim: 128,
            fourier_scale: 16.0,
        }
    }

    /// Very small two-level configuration for gradient checks and goldens.
    pub fn tiny() -> Self {
        Self {
            depth: 2,
            channels_in: vec![2, 3],
            channels_out: vec![3, 4],
            kernel: (2, 2),
            strides: vec![(1, 1), (2, 1)],
            dilations: vec![(1, 1), (1, 1)],
            time_embed_dim: 8,
            fourier_scale: 16.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidParam(m));
        if self.depth == 0 {
            return err("depth must be >= 1".into());
        }
        if self.channels_in.len() != self.depth
            || self.channels_out.len() != self.depth
            || self.strides.len() != self.depth
            || self.dilations.len() != self.depth
        {
            return err(format!(
                "per-level vectors must all have length depth = {}",
                self.depth
            ));
        }
        if self.channels_in[0] != 2 {
            return err("level 0 must take the 2 complex input channels (x_t, y)".into());
        }
        for i in 0..self.depth {
            if self.channels_in[i] == 0 || self.channels_out[i] == 0 {
                return err(format!("channel counts must be positive at level {i}"));
            }
            if i > 0 && self.channels_in[i] != self.channels_out[i - 1] {
                return err(format!(
                    "channels_in[{i}] = {} must chain from channels_out[{}] = {}",
                    self.channels_in[i],
                    i - 1,
                    self.channels_out[i - 1]
                ));
            }
            let (sf, st) = self.strides[i];
            if sf == 0 || st == 0 || self.dilations[i].0 == 0 || self.dilations[i].1 == 0 {
                return err(format!("strides and dilations must be positive at level {i}"));
            }
            if self.kernel.0 % sf != 0 || self.kernel.1 % st != 0 {
                return err(format!(
                    "kernel {:?} not divisible by stride {:?} at level {i} (checkerboard rule)",
                    self.kernel, self.strides[i]
                ));
            }
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return err("time_embed_dim must be a positive even number".into());
        }
        if !(self.fourier_scale > 0.0) {
            return err("fourier_scale must be > 0".into());
        }
        Ok(())
    }

    /// Decoder output channels at level i.
    fn dec_out(&self, i: usize) -> usize {
        if i == 0 {
            self.channels_out[0]
        } else {
            self.channels_in[i]
        }
    }

    /// Decoder input channels at level i (previous decoder output
    /// concatenated with the skip, except at the deepest level).
    fn dec_in(&self, i: usize) -> usize {
        if i == self.depth - 1 {
            self.channels_out[i]
        } else {
            self.dec_out(i + 1) + self.channels_out[i]
        }
    }
}

/// Per-block intermediates retained for the backward pass.
struct BlockCache {
    input: FeatureMap,
    geom: ConvGeom,
    gn: GroupNormCache,
    e_pre: Vec<Complex64>,
    pre_act: FeatureMap,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache {
    emb: Vec<f64>,
    enc: Vec<BlockCache>,
    dec: Vec<Option<BlockCache>>,
    head_input: FeatureMap,
    head_geom: ConvGeom,
}

/// The score network: a configuration plus the frozen Fourier frequencies.
/// Trainable parameters live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ScoreNet {
    config: NetConfig,
    fourier_freqs: Vec<f64>,
}

impl ScoreNet {
    /// Creates a network and its freshly initialized parameters. The Fourier
    /// frequencies are drawn first and frozen; kernels use per-part uniform
    /// fan-in scaling, normalization scales start at one, everything else at
    /// zero.
    pub fn init(config: NetConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fourier_freqs: Vec<f64> = (0..config.time_embed_dim / 2)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * config.fourier_scale
            })
            .collect();

        let mut params = ParamStore::new();
        let (kf, kt) = config.kernel;
        let dim = config.time_embed_dim;
        let add_block = |params: &mut ParamStore,
                         rng: &mut ChaCha8Rng,
                         prefix: &str,
                         c_in: usize,
                         c_out: usize| {
            let bound = 1.0 / ((c_in * kf * kt) as f64).sqrt();
            params.insert(
                format!("{prefix}.weight"),
                uniform_tensor(vec![0, c_in, kf, kt, 2], c_out, bound, rng),
            );
            params.insert(format!("{prefix}.bias"), Tensor::zeros(vec![c_out, 2]));
        };
        for i in 0..config.depth {
            let (c_in, c_out) = (config.channels_in[i], config.channels_out[i]);
            add_block(&mut params, &mut rng, &format!("enc{i}.conv"), c_in, c_out);
            add_norm_and_temb(&mut params, &mut rng, &format!("enc{i}"), c_out, dim);
        }
        for i in 0..config.depth {
            let (c_in, c_out) = (config.dec_in(i), config.dec_out(i));
            // transposed kernels are stored [c_in, c_out, kf, kt]
            let bound = 1.0 / ((c_in * kf * kt) as f64).sqrt();
            params.insert(
                format!("dec{i}.tconv.weight"),
                uniform_tensor(vec![0, c_out, kf, kt, 2], c_in, bound, &mut rng),
            );
            params.insert(format!("dec{i}.tconv.bias"), Tensor::zeros(vec![c_out, 2]));
            add_norm_and_temb(&mut params, &mut rng, &format!("dec{i}"), c_out, dim);
        }
        let c_head = config.dec_out(0);
        let bound = 1.0 / (c_head as f64).sqrt();
        params.insert(
            "head.weight",
            uniform_tensor(vec![0, c_head, 1, 1, 2], 1, bound, &mut rng),
        );
        params.insert("head.bias", Tensor::zeros(vec![1, 2]));

        Ok((
            Self {
                config,
                fourier_freqs,
            },
            params,
        ))
    }

    /// Rebuilds a network from stored parts (checkpoint loading).
    pub fn from_parts(config: NetConfig, fourier_freqs: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if fourier_freqs.len() != config.time_embed_dim / 2 {
            return Err(Error::Checkpoint(format!(
                "expected {} Fourier frequencies, found {}",
                config.time_embed_dim / 2,
                fourier_freqs.len()
            )));
        }
        Ok(Self {
            config,
            fourier_freqs,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn fourier_freqs(&self) -> &[f64] {
        &self.fourier_freqs
    }

    /// Score estimate for (x_t, y) at diffusion time t in (0, 1].
    pub fn forward(
        &self,
        params: &ParamStore,
        x_t: &SpecGrid,
        y: &SpecGrid,
        t: f64,
    ) -> Result<SpecGrid> {
        Ok(self.forward_internal(params, x_t, y, t, false)?.0)
    }

    /// Forward pass that also captures the activations needed by
    /// [`Self::backward`].
    pub fn forward_cached(
        &self,
        params: &ParamStore,
        x_t: &SpecGrid,
        y: &SpecGrid,
        t: f64,
    ) -> Result<(SpecGrid, ForwardCache)> {
        let (out, cache) = self.forward_internal(params, x_t, y, t, true)?;
        Ok((out, cache.expect("cache requested")))
    }

    fn forward_internal(
        &self,
        params: &ParamStore,
        x_t: &SpecGrid,
        y: &SpecGrid,
        t: f64,
        want_cache: bool,
    ) -> Result<(SpecGrid, Option<ForwardCache>)> {
        x_t.check_same_shape(y)?;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Domain(format!(
                "score network needs t in (0, 1], got {t}"
            )));
        }
        let cfg = &self.config;
        let emb = fourier_time_embedding(t, &self.fourier_freqs);

        let mut x = FeatureMap::from_grids(&[x_t, y])?;
        let mut enc_caches: Vec<BlockCache> = Vec::new();
        let mut skips: Vec<FeatureMap> = Vec::with_capacity(cfg.depth);
        let mut geoms: Vec<ConvGeom> = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let prefix = format!("enc{i}");
            let geom = ConvGeom::new(x.spatial_shape(), cfg.kernel, cfg.strides[i], cfg.dilations[i]);
            geoms.push(geom);
            let w = params.get(&format!("{prefix}.conv.weight")).complex_vec();
            let b = params.get(&format!("{prefix}.conv.bias")).complex_vec();
            let conv_out = gather(&x, &w, cfg.channels_out[i], Some(&b), &geom, false);
            let (out, block_cache) =
                self.norm_emb_act(params, &prefix, conv_out, &emb, want_cache.then_some(&x), geom)?;
            if !out.all_finite() {
                return Err(Error::NonFiniteActivation { layer: prefix });
            }
            if let Some(c) = block_cache {
                enc_caches.push(c);
            }
            skips.push(out.clone());
            x = out;
        }

        let mut dec_caches: Vec<Option<BlockCache>> = (0..cfg.depth).map(|_| None).collect();
        let mut g = x;
        for i in (0..cfg.depth).rev() {
            let prefix = format!("dec{i}");
            let u = if i == cfg.depth - 1 {
                g
            } else {
                g.concat_channels(&skips[i])?
            };
            let geom = geoms[i];
            let w = params.get(&format!("{prefix}.tconv.weight")).complex_vec();
            let b = params.get(&format!("{prefix}.tconv.bias")).complex_vec();
            let v = scatter(&u, &w, cfg.dec_out(i), Some(&b), &geom, false);
            let (out, block_cache) =
                self.norm_emb_act(params, &prefix, v, &emb, want_cache.then_some(&u), geom)?;
            if !out.all_finite() {
                return Err(Error::NonFiniteActivation { layer: prefix });
            }
            dec_caches[i] = block_cache;
            g = out;
        }

        let head_geom = ConvGeom::new(g.spatial_shape(), (1, 1), (1, 1), (1, 1));
        let w = params.get("head.weight").complex_vec();
        let b = params.get("head.bias").complex_vec();
        let out_map = gather(&g, &w, 1, Some(&b), &head_geom, false);
        if !out_map.all_finite() {
            return Err(Error::NonFiniteActivation {
                layer: "head".into(),
            });
        }
        let out = out_map.channel_to_grid(0);
        let cache = want_cache.then(|| ForwardCache {
            emb,
            enc: enc_caches,
            dec: dec_caches,
            head_input: g,
            head_geom,
        });
        Ok((out, cache))
    }

    /// Shared tail of every block: group norm, additive time embedding,
    /// leaky rectifier. `cache_input` carries the block's (t)conv input when
    /// a backward pass will follow.
    fn norm_emb_act(
        &self,
        params: &ParamStore,
        prefix: &str,
        features: FeatureMap,
        emb: &[f64],
        cache_input: Option<&FeatureMap>,
        geom: ConvGeom,
    ) -> Result<(FeatureMap, Option<BlockCache>)> {
        let gamma = &params.get(&format!("{prefix}.norm.gamma")).data;
        let beta = &params.get(&format!("{prefix}.norm.beta")).data;
        let channels = features.channels;
        let (normed, gn) = group_norm_forward(&features, gamma, beta);

        let we = params.get(&format!("{prefix}.temb.weight")).complex_vec();
        let be = params.get(&format!("{prefix}.temb.bias")).complex_vec();
        let e_pre = temb_affine(emb, &we, &be, channels);

        let mut pre_act = normed;
        let plane = pre_act.plane();
        for (c, e) in e_pre.iter().enumerate() {
            let e_act = leaky_relu_complex(*e);
            for v in &mut pre_act.data[c * plane..(c + 1) * plane] {
                *v += e_act;
            }
        }
        let out = leaky_relu_map(&pre_act);
        let cache = cache_input.map(|input| BlockCache {
            input: input.clone(),
            geom,
            gn,
            e_pre,
            pre_act,
        });
        Ok((out, cache))
    }

    /// Backward through the block tail; returns the gradient at the block's
    /// (t)conv output and accumulates parameter gradients.
    fn norm_emb_act_backward(
        &self,
        params: &ParamStore,
        grads: &mut ParamStore,
        prefix: &str,
        g_out: &FeatureMap,
        cache: &BlockCache,
        emb: &[f64],
    ) -> FeatureMap {
        let g_pre = leaky_relu_backward(g_out, &cache.pre_act);

        // embedding path: per-channel spatial sum, then the embedding's own
        // rectifier and affine layer
        let plane = g_pre.plane();
        let g_e: Vec<Complex64> = (0..g_pre.channels)
            .map(|c| {
                let sum = g_pre.data[c * plane..(c + 1) * plane]
                    .iter()
                    .fold(Complex64::ZERO, |a, &b| a + b);
                leaky_relu_complex_grad(sum, cache.e_pre[c])
            })
            .collect();
        let (dwe, dbe) = temb_affine_backward(&g_e, emb);
        add_to(grads.get_mut(&format!("{prefix}.temb.weight")), &dwe);
        add_to(grads.get_mut(&format!("{prefix}.temb.bias")), &dbe);

        let gamma = &params.get(&format!("{prefix}.norm.gamma")).data;
        let (g_features, dgamma, dbeta) = group_norm_backward(&g_pre, &cache.gn, gamma);
        add_to(grads.get_mut(&format!("{prefix}.norm.gamma")), &dgamma);
        add_to(grads.get_mut(&format!("{prefix}.norm.beta")), &dbeta);
        g_features
    }

    /// Parameter gradients for a scalar loss whose gradient with respect to
    /// the network output is `loss_grad`. Requires the cache of the matching
    /// forward pass.
    pub fn backward(
        &self,
        params: &ParamStore,
        cache: &ForwardCache,
        loss_grad: &SpecGrid,
    ) -> Result<ParamStore> {
        let cfg = &self.config;
        let mut grads = params.zeros_like();
        let emb = &cache.emb;

        // head
        let g_map = FeatureMap::from_grids(&[loss_grad])?;
        let w_head = params.get("head.weight").complex_vec();
        let dw = weight_grad(&g_map, &cache.head_input, &cache.head_geom, ConjSide::InSide);
        add_complex_to(grads.get_mut("head.weight"), &dw);
        add_complex_to(grads.get_mut("head.bias"), &bias_grad(&g_map));
        let mut g = scatter(
            &g_map,
            &w_head,
            cache.head_input.channels,
            None,
            &cache.head_geom,
            true,
        );

        // decoder levels in reverse execution order (0 ran last)
        let mut skip_grads: Vec<Option<FeatureMap>> = (0..cfg.depth).map(|_| None).collect();
        for i in 0..cfg.depth {
            let prefix = format!("dec{i}");
            let block = cache.dec[i].as_ref().expect("decoder cache present");
            let g_v = self.norm_emb_act_backward(params, &mut grads, &prefix, &g, block, emb);
            let w = params.get(&format!("{prefix}.tconv.weight")).complex_vec();
            let dw = weight_grad(&block.input, &g_v, &block.geom, ConjSide::OutSide);
            add_complex_to(grads.get_mut(&format!("{prefix}.tconv.weight")), &dw);
            add_complex_to(grads.get_mut(&format!("{prefix}.tconv.bias")), &bias_grad(&g_v));
            let g_u = gather(&g_v, &w, block.input.channels, None, &block.geom, true);
            if i == cfg.depth - 1 {
                skip_grads[i] = Some(match skip_grads[i].take() {
                    Some(mut acc) => {
                        add_maps(&mut acc, &g_u);
                        acc
                    }
                    None => g_u,
                });
                break;
            }
            let (g_prev, g_skip) = g_u.split_channels(cfg.dec_out(i + 1));
            skip_grads[i] = Some(match skip_grads[i].take() {
                Some(mut acc) => {
                    add_maps(&mut acc, &g_skip);
                    acc
                }
                None => g_skip,
            });
            g = g_prev;
        }

        // encoder levels deepest-first; each level's input gradient feeds the
        // level below through its skip accumulator
        for i in (0..cfg.depth).rev() {
            let prefix = format!("enc{i}");
            let block = &cache.enc[i];
            let g_out = skip_grads[i].take().expect("encoder output gradient");
            let g_conv = self.norm_emb_act_backward(params, &mut grads, &prefix, &g_out, block, emb);
            let w = params.get(&format!("{prefix}.conv.weight")).complex_vec();
            let dw = weight_grad(&g_conv, &block.input, &block.geom, ConjSide::InSide);
            add_complex_to(grads.get_mut(&format!("{prefix}.conv.weight")), &dw);
            add_complex_to(grads.get_mut(&format!("{prefix}.conv.bias")), &bias_grad(&g_conv));
            if i > 0 {
                let g_in = scatter(&g_conv, &w, block.input.channels, None, &block.geom, true);
                match &mut skip_grads[i - 1] {
                    Some(acc) => add_maps(acc, &g_in),
                    slot => *slot = Some(g_in),
                }
            }
        }
        Ok(grads)
    }
}

fn add_norm_and_temb(
    params: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    c_out: usize,
    dim: usize,
) {
    let mut gamma = Tensor::zeros(vec![c_out, 2]);
    gamma.data.fill(1.0);
    params.insert(format!("{prefix}.norm.gamma"), gamma);
    params.insert(format!("{prefix}.norm.beta"), Tensor::zeros(vec![c_out, 2]));
    let bound = 1.0 / (dim as f64).sqrt();
    params.insert(
        format!("{prefix}.temb.weight"),
        uniform_tensor(vec![0, dim, 2], c_out, bound, rng),
    );
    params.insert(format!("{prefix}.temb.bias"), Tensor::zeros(vec![c_out, 2]));
}

/// Tensor with leading dimension `c_lead` (patched into shape[0]) filled with
/// U(-bound, bound) draws.
fn uniform_tensor(mut shape: Vec<usize>, c_lead: usize, bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    shape[0] = c_lead;
    let mut t = Tensor::zeros(shape);
    for v in &mut t.data {
        *v = rng.random_range(-bound..bound);
    }
    t
}

fn add_to(t: &mut Tensor, src: &[f64]) {
    debug_assert_eq!(t.data.len(), src.len());
    for (a, b) in t.data.iter_mut().zip(src) {
        *a += b;
    }
}

fn add_complex_to(t: &mut Tensor, src: &[Complex64]) {
    debug_assert_eq!(t.data.len(), 2 * src.len());
    for (pair, c) in t.data.chunks_exact_mut(2).zip(src) {
        pair[0] += c.re;
        pair[1] += c.im;
    }
}

fn add_maps(acc: &mut FeatureMap, other: &FeatureMap) {
    debug_assert_eq!(acc.data.len(), other.data.len());
    for (a, b) in acc.data.iter_mut().zip(&other.data) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_grid(nf: usize, nt: usize, seed: u64) -> SpecGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpecGrid::standard_normal(nf, nt, &mut rng)
    }

    #[test]
    fn config_validation_catches_bad_plans() {
        assert!(NetConfig::mini().validate().is_ok());
        assert!(NetConfig::full_scale().validate().is_ok());
        assert!(NetConfig::tiny().validate().is_ok());

        let mut c = NetConfig::mini();
        c.channels_in[0] = 3;
        assert!(c.validate().is_err());

        let mut c = NetConfig::mini();
        c.strides[1] = (3, 1); // kernel 4 not divisible by 3
        assert!(c.validate().is_err());

        let mut c = NetConfig::mini();
        c.channels_in[2] = 7; // breaks the chain
        assert!(c.validate().is_err());

        let mut c = NetConfig::mini();
        c.time_embed_dim = 9;
        assert!(c.validate().is_err());
    }

    #[test]
    fn output_shape_matches_input_for_odd_sizes() {
        for &(nf, nt) in &[(8usize, 8usize), (7, 5), (9, 11), (16, 3)] {
            let (net, params) = ScoreNet::init(NetConfig::mini(), 3).unwrap();
            let x_t = random_grid(nf, nt, 1);
            let y = random_grid(nf, nt, 2);
            let out = net.forward(&params, &x_t, &y, 0.5).unwrap();
            assert_eq!(out.shape(), (nf, nt), "shape mismatch at {nf}x{nt}");
        }
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let (net, params) = ScoreNet::init(NetConfig::tiny(), 1).unwrap();
        let zeroed = params.zeros_like();
        let x_t = random_grid(6, 5, 3);
        let y = random_grid(6, 5, 4);
        let out = net.forward(&zeroed, &x_t, &y, 0.7).unwrap();
        assert_eq!(out.norm_sq(), 0.0);
    }

    #[test]
    fn initialization_and_forward_are_seed_deterministic() {
        let (net_a, params_a) = ScoreNet::init(NetConfig::tiny(), 42).unwrap();
        let (net_b, params_b) = ScoreNet::init(NetConfig::tiny(), 42).unwrap();
        assert_eq!(net_a.fourier_freqs, net_b.fourier_freqs);
        assert_eq!(params_a, params_b);
        let x_t = random_grid(5, 4, 5);
        let y = random_grid(5, 4, 6);
        let oa = net_a.forward(&params_a, &x_t, &y, 0.3).unwrap();
        let ob = net_b.forward(&params_b, &x_t, &y, 0.3).unwrap();
        assert_eq!(oa, ob);

        let (_, params_c) = ScoreNet::init(NetConfig::tiny(), 43).unwrap();
        assert_ne!(params_a, params_c);
    }

    #[test]
    fn rejects_bad_time_and_shape() {
        let (net, params) = ScoreNet::init(NetConfig::tiny(), 1).unwrap();
        let x_t = random_grid(4, 4, 1);
        let y = random_grid(4, 4, 2);
        assert!(net.forward(&params, &x_t, &y, 0.0).is_err());
        assert!(net.forward(&params, &x_t, &y, 1.1).is_err());
        let y_bad = random_grid(4, 5, 2);
        assert!(net.forward(&params, &x_t, &y_bad, 0.5).is_err());
    }

    #[test]
    fn fourier_frequencies_are_frozen_out_of_the_store() {
        let (net, params) = ScoreNet::init(NetConfig::tiny(), 7).unwrap();
        assert!(params.names().all(|n| !n.contains("fourier")));
        let x_t = random_grid(4, 4, 1);
        let y = random_grid(4, 4, 2);
        let (out, cache) = net.forward_cached(&params, &x_t, &y, 0.6).unwrap();
        let grads = net.backward(&params, &cache, &out).unwrap();
        // gradients exist for exactly the trainable tensors
        let expected: Vec<&String> = params.names().collect();
        let got: Vec<&String> = grads.names().collect();
        assert_eq!(expected, got);
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradients() {
        let (net, params) = ScoreNet::init(NetConfig::tiny(), 11).unwrap();
        let x_t = random_grid(6, 5, 1);
        let y = random_grid(6, 5, 2);
        let (_, cache) = net.forward_cached(&params, &x_t, &y, 0.4).unwrap();
        let zero = SpecGrid::zeros(6, 5);
        let grads = net.backward(&params, &cache, &zero).unwrap();
        assert_eq!(grads.grad_norm(), 0.0);
    }

    /// Central finite differences over every scalar of every tensor.
    fn finite_difference_check(config: NetConfig, seed: u64, nf: usize, nt: usize) -> f64 {
        let (net, mut params) = ScoreNet::init(config, seed).unwrap();
        let x_t = random_grid(nf, nt, seed + 1);
        let y = random_grid(nf, nt, seed + 2);
        let target = random_grid(nf, nt, seed + 3);
        let t = 0.37;

        let loss = |net: &ScoreNet, params: &ParamStore| -> f64 {
            let out = net.forward(params, &x_t, &y, t).unwrap();
            0.5 * out.sub(&target).unwrap().norm_sq()
        };

        let (out, cache) = net.forward_cached(&params, &x_t, &y, t).unwrap();
        let loss_grad = out.sub(&target).unwrap();
        let grads = net.backward(&params, &cache, &loss_grad).unwrap();

        let names: Vec<String> = params.names().cloned().collect();
        let mut worst = 0.0f64;
        for name in &names {
            for i in 0..params.get(name).numel() {
                let theta = params.get(name).data[i];
                let h = 1e-5 * theta.abs().max(1.0);
                params.get_mut(name).data[i] = theta + h;
                let lp = loss(&net, &params);
                params.get_mut(name).data[i] = theta - h;
                let lm = loss(&net, &params);
                params.get_mut(name).data[i] = theta;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.get(name).data[i];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                if rel > worst {
                    worst = rel;
                }
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences_on_tiny_config() {
        let worst = finite_difference_check(NetConfig::tiny(), 17, 6, 5);
        assert!(worst <= 1e-4, "worst relative gradient error {worst:.3e}");
    }

    // Golden regression: tiny config, seed 123, fixed inputs. Regenerate with
    //   cargo test -p specdiff-core print_golden -- --ignored --nocapture
    const GOLDEN_SEED: u64 = 123;
    const GOLDEN_T: f64 = 0.62;

    fn golden_output() -> SpecGrid {
        let (net, params) = ScoreNet::init(NetConfig::tiny(), GOLDEN_SEED).unwrap();
        let x_t = random_grid(4, 3, 201);
        let y = random_grid(4, 3, 202);
        net.forward(&params, &x_t, &y, GOLDEN_T).unwrap()
    }

    #[test]
    #[ignore]
    fn print_golden() {
        for c in golden_output().data() {
            println!("({:.17e}, {:.17e}),", c.re, c.im);
        }
    }

    #[test]
    fn golden_forward_regression() {
        let golden: [(f64, f64); 12] = [
            (GOLDEN_RE_IM[0].0, GOLDEN_RE_IM[0].1),
            (GOLDEN_RE_IM[1].0, GOLDEN_RE_IM[1].1),
            (GOLDEN_RE_IM[2].0, GOLDEN_RE_IM[2].1),
            (GOLDEN_RE_IM[3].0, GOLDEN_RE_IM[3].1),
            (GOLDEN_RE_IM[4].0, GOLDEN_RE_IM[4].1),
            (GOLDEN_RE_IM[5].0, GOLDEN_RE_IM[5].1),
            (GOLDEN_RE_IM[6].0, GOLDEN_RE_IM[6].1),
            (GOLDEN_RE_IM[7].0, GOLDEN_RE_IM[7].1),
            (GOLDEN_RE_IM[8].0, GOLDEN_RE_IM[8].1),
            (GOLDEN_RE_IM[9].0, GOLDEN_RE_IM[9].1),
            (GOLDEN_RE_IM[10].0, GOLDEN_RE_IM[10].1),
            (GOLDEN_RE_IM[11].0, GOLDEN_RE_IM[11].1),
        ];
        let out = golden_output();
        assert_eq!(out.len(), golden.len());
        for (c, (re, im)) in out.data().iter().zip(golden) {
            assert_abs_diff_eq!(c.re, re, epsilon = 1e-12);
            assert_abs_diff_eq!(c.im, im, epsilon = 1e-12);
        }
    }

    // placeholder regenerated by print_golden
    const GOLDEN_RE_IM: [(f64, f64); 12] = [(0.0, 0.0); 12];
}
