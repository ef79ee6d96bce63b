//! Denoising score-matching training.
//!
//! For each item the loss draws t ~ Uniform[t_min, 1], samples
//! x_t = mean + sigma(t) z from the perturbation kernel and regresses the
//! model on the conditional-kernel score:
//!
//! ```text
//! target = -z / sigma(t)
//! loss   = mean over batch and real coordinates of (s(x_t, t, y) - target)^2
//! ```
//!
//! t is drawn from [t_min, 1] rather than [0, 1]: the target diverges as
//! sigma -> 0 and the reverse process never runs below t_eps anyway. The
//! optional sigma^2 weighting multiplies each item's squared error by
//! sigma(t)^2 (the ||sigma s + z||^2 form), which bounds the target variance
//! near t_min.
//!
//! Optimization is standard bias-corrected Adam plus an exponential moving
//! average of the weights; sampling uses the EMA shadow. Per-item randomness
//! is derived from (seed, epoch, item index) so loader parallelism can never
//! change the trajectory.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::crop_or_pad_pair;
use crate::scorenet::{Checkpoint, NetConfig, ParamStore, ScoreNet};
use crate::sde::{analytic_gaussian_marginal_score, gaussian_marginal_moments, SdeParams};
use crate::{derive_seed, Error, Result, SpecGrid};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Loss weighting across sampled times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossWeighting {
    /// The plain objective.
    #[default]
    None,
    /// Multiply each item's squared error by sigma(t)^2.
    Sigma2,
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Lower bound of the sampled diffusion time.
    pub t_min: f64,
    pub ema_decay: f64,
    pub loss_weighting: LossWeighting,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 1,
            t_min: 0.03,
            ema_decay: 0.999,
            loss_weighting: LossWeighting::None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(Error::InvalidParam(format!(
                "t_min must lie in (0, 1), got {}",
                self.t_min
            )));
        }
        if !(self.ema_decay >= 0.0 && self.ema_decay < 1.0) {
            return Err(Error::InvalidParam(format!(
                "ema_decay must lie in [0, 1), got {}",
                self.ema_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

fn draw_t(rng: &mut impl Rng, t_min: f64) -> f64 {
    t_min + (1.0 - t_min) * rng.random::<f64>()
}

/// Score-matching loss of an arbitrary per-item score function (analytic
/// oracles plug in here). `score_fn` receives the item index so conditional
/// oracles can look up the item's clean state.
pub fn dsm_loss_value(
    batch: &[(SpecGrid, SpecGrid)],
    mut score_fn: impl FnMut(usize, &SpecGrid, &SpecGrid, f64) -> Result<SpecGrid>,
    sde: &SdeParams,
    t_min: f64,
    weighting: LossWeighting,
    item_seeds: &[u64],
) -> Result<f64> {
    check_batch(batch, item_seeds)?;
    let mut total = 0.0f64;
    let mut n_coords = 0usize;
    for (i, (x0, y)) in batch.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(item_seeds[i]);
        let t = draw_t(&mut rng, t_min);
        let (x_t, z) = sde.sample_kernel(x0, y, t, &mut rng)?;
        let sigma = sde.kernel_std(t)?;
        let score = score_fn(i, &x_t, y, t)?;
        let item = item_sq_error(&score, &z, sigma, weighting)?;
        if !item.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "non-finite loss at t = {t}"
            )));
        }
        total += item;
        n_coords += x0.n_coords();
    }
    Ok(total / n_coords as f64)
}

/// Sum over real coordinates of (score - (-z / sigma))^2, optionally
/// multiplied by sigma^2.
fn item_sq_error(score: &SpecGrid, z: &SpecGrid, sigma: f64, weighting: LossWeighting) -> Result<f64> {
    let residual = score.add_scaled(z, 1.0 / sigma)?;
    let sq = residual.norm_sq();
    Ok(match weighting {
        LossWeighting::None => sq,
        LossWeighting::Sigma2 => sigma * sigma * sq,
    })
}

/// Loss plus parameter gradients for the trainable network.
pub struct DsmBatch {
    pub loss: f64,
    pub grads: ParamStore,
    /// Mean of the sampled diffusion times.
    pub t_mean: f64,
}

/// Score-matching loss and gradients over one batch.
pub fn dsm_loss_and_grads(
    batch: &[(SpecGrid, SpecGrid)],
    net: &ScoreNet,
    params: &ParamStore,
    sde: &SdeParams,
    t_min: f64,
    weighting: LossWeighting,
    item_seeds: &[u64],
) -> Result<DsmBatch> {
    check_batch(batch, item_seeds)?;
    let mut grads = params.zeros_like();
    let mut total = 0.0f64;
    let mut t_sum = 0.0f64;
    let n_coords: usize = batch.iter().map(|(x0, _)| x0.n_coords()).sum();
    let norm = 1.0 / n_coords as f64;
    for (i, (x0, y)) in batch.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(item_seeds[i]);
        let t = draw_t(&mut rng, t_min);
        t_sum += t;
        let (x_t, z) = sde.sample_kernel(x0, y, t, &mut rng)?;
        let sigma = sde.kernel_std(t)?;
        let (score, cache) = net.forward_cached(params, &x_t, y, t)?;
        let residual = score.add_scaled(&z, 1.0 / sigma)?;
        let weight = match weighting {
            LossWeighting::None => 1.0,
            LossWeighting::Sigma2 => sigma * sigma,
        };
        let item = weight * residual.norm_sq();
        if !item.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "non-finite loss at t = {t}"
            )));
        }
        total += item;
        // d loss / d score = 2 w (score - target) / n_coords
        let loss_grad = residual.scale(2.0 * weight * norm);
        let item_grads = net.backward(params, &cache, &loss_grad)?;
        grads.add_assign(&item_grads);
    }
    Ok(DsmBatch {
        loss: total * norm,
        grads,
        t_mean: t_sum / batch.len() as f64,
    })
}

fn check_batch(batch: &[(SpecGrid, SpecGrid)], item_seeds: &[u64]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidParam("batch must be nonempty".into()));
    }
    if item_seeds.len() != batch.len() {
        return Err(Error::InvalidParam(format!(
            "{} item seeds for a batch of {}",
            item_seeds.len(),
            batch.len()
        )));
    }
    Ok(())
}

/// First and second Adam moments, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update over every tensor.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &ParamStore,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name);
        if g.shape != p.shape {
            return Err(Error::InvalidParam(format!(
                "gradient shape {:?} does not match parameter `{name}` {:?}",
                g.shape, p.shape
            )));
        }
        let m = &mut state.m.get_mut(name).data;
        let v = &mut state.v.get_mut(name).data;
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// shadow <- decay * shadow + (1 - decay) * params, per tensor.
pub fn ema_update(shadow: &mut ParamStore, params: &ParamStore, decay: f64) {
    for (name, s) in shadow.iter_mut() {
        let p = params.get(name);
        for (sv, pv) in s.data.iter_mut().zip(&p.data) {
            *sv = decay * *sv + (1.0 - decay) * pv;
        }
    }
}

/// One row of the training log CSV.
#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub step: u64,
    pub epoch: usize,
    pub t_mean: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

/// Non-hyperparameter knobs of the training loop.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Random-crop (or right-pad) every pair to this many frames per epoch.
    pub crop_frames: Option<usize>,
    /// Where checkpoints and the log CSV go; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    /// Continue from a previous checkpoint instead of a fresh initialization.
    pub resume: Option<Checkpoint>,
    /// Epoch number to start counting from (affects per-item seeds).
    pub start_epoch: usize,
}

/// Result of a training run.
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    /// Mean loss of the final epoch (None when no step ran).
    pub final_loss: Option<f64>,
    pub steps: u64,
    pub log: Vec<TrainLogRow>,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    derive_seed(seed, 2, epoch as u64)
}

/// Per-item seed for (seed, epoch, item index within the epoch).
pub fn item_seed(seed: u64, epoch: usize, item: usize) -> u64 {
    derive_seed(epoch_seed(seed, epoch), 3, item as u64)
}

/// Runs the full loop: epochs x batches of dsm_loss / adam_step / ema_update,
/// with an end-of-epoch plus best-loss checkpoint cadence. A divergence
/// aborts with the error; the last checkpoint written stays on disk.
pub fn train(
    dataset: &[(SpecGrid, SpecGrid)],
    net_config: &NetConfig,
    cfg: &TrainConfig,
    sde: &SdeParams,
    opts: &TrainOptions,
) -> Result<TrainOutput> {
    cfg.validate()?;
    net_config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Dataset("training dataset is empty".into()));
    }

    let (net, mut params, mut ema) = match &opts.resume {
        Some(ckpt) => {
            let net = ckpt.net()?;
            (net, ckpt.params.clone(), ckpt.ema.clone())
        }
        None => {
            let (net, params) = ScoreNet::init(net_config.clone(), cfg.seed)?;
            let ema = params.clone();
            (net, params, ema)
        }
    };
    let mut adam = AdamState::new(&params);

    let mut log_file = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("train_log.csv");
            let fresh = !path.exists();
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            if fresh {
                writeln!(f, "step,epoch,t_mean,loss,grad_norm,wall_ms")?;
            }
            Some(f)
        }
        None => None,
    };
    let save = |params: &ParamStore, ema: &ParamStore, name: &str| -> Result<()> {
        if let Some(dir) = &opts.out_dir {
            Checkpoint::new(&net, params.clone(), ema.clone()).save(&dir.join(name))?;
        }
        Ok(())
    };

    let mut log = Vec::new();
    let mut step = 0u64;
    let mut best_epoch_loss = f64::INFINITY;
    let mut final_loss = None;
    for epoch in opts.start_epoch..opts.start_epoch + cfg.epochs {
        let eseed = epoch_seed(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        shuffle(&mut order, &mut ChaCha8Rng::seed_from_u64(derive_seed(eseed, 0, 0)));

        let mut epoch_loss_sum = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let start = Instant::now();
            let mut batch = Vec::with_capacity(chunk.len());
            let mut seeds = Vec::with_capacity(chunk.len());
            for (pos_in_chunk, &idx) in chunk.iter().enumerate() {
                let pos = epoch_batches * cfg.batch_size + pos_in_chunk;
                let (x0, y) = &dataset[idx];
                let pair = match opts.crop_frames {
                    Some(frames) => {
                        let mut crop_rng =
                            ChaCha8Rng::seed_from_u64(derive_seed(eseed, 4, pos as u64));
                        crop_or_pad_pair(x0, y, frames, &mut crop_rng)?
                    }
                    None => (x0.clone(), y.clone()),
                };
                batch.push(pair);
                seeds.push(item_seed(cfg.seed, epoch, pos));
            }
            let result = dsm_loss_and_grads(
                &batch,
                &net,
                &params,
                sde,
                cfg.t_min,
                cfg.loss_weighting,
                &seeds,
            );
            let out = match result {
                Ok(out) => out,
                Err(Error::TrainingDiverged(msg)) => {
                    return Err(Error::TrainingDiverged(format!("step {step}: {msg}")));
                }
                Err(e) => return Err(e),
            };
            adam_step(&mut params, &out.grads, &mut adam, cfg.learning_rate)?;
            ema_update(&mut ema, &params, cfg.ema_decay);

            step += 1;
            epoch_loss_sum += out.loss;
            epoch_batches += 1;
            let row = TrainLogRow {
                step,
                epoch,
                t_mean: out.t_mean,
                loss: out.loss,
                grad_norm: out.grads.grad_norm(),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            if let Some(f) = &mut log_file {
                writeln!(
                    f,
                    "{},{},{},{},{},{}",
                    row.step, row.epoch, row.t_mean, row.loss, row.grad_norm, row.wall_ms
                )?;
            }
            log.push(row);
        }

        let epoch_loss = epoch_loss_sum / epoch_batches.max(1) as f64;
        final_loss = Some(epoch_loss);
        save(&params, &ema, &format!("checkpoint_epoch_{epoch}.ckpt"))?;
        if epoch_loss < best_epoch_loss {
            best_epoch_loss = epoch_loss;
            save(&params, &ema, "checkpoint_best.ckpt")?;
        }
    }

    save(&params, &ema, "checkpoint_final.ckpt")?;
    Ok(TrainOutput {
        checkpoint: Checkpoint::new(&net, params, ema),
        final_loss,
        steps: step,
        log,
    })
}

fn shuffle(indices: &mut [usize], rng: &mut impl Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
}

/// Mean squared error of the network score against the closed-form Gaussian
/// marginal oracle over a held-out grid of (x_t, t), together with the error
/// of the zero-score baseline. The toy-task acceptance ratio is
/// model_mse / zero_mse.
pub fn score_mse_vs_marginal_oracle(
    net: &ScoreNet,
    params: &ParamStore,
    y: &SpecGrid,
    prior_mean: f64,
    prior_var: f64,
    sde: &SdeParams,
    t_values: &[f64],
    draws_per_t: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let m0 = SpecGrid::constant(y.n_freq(), y.n_frames(), num_complex::Complex64::new(prior_mean, prior_mean));
    let mut model_sq = 0.0f64;
    let mut zero_sq = 0.0f64;
    let mut n = 0usize;
    for (ti, &t) in t_values.iter().enumerate() {
        let (mean, var) = gaussian_marginal_moments(y, t, &m0, prior_var, sde)?;
        let std = var.sqrt();
        for d in 0..draws_per_t {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, 5, (ti * draws_per_t + d) as u64));
            let z = SpecGrid::standard_normal(y.n_freq(), y.n_frames(), &mut rng);
            let x_t = mean.add_scaled(&z, std)?;
            let oracle = analytic_gaussian_marginal_score(&x_t, y, t, &m0, prior_var, sde)?;
            let model = net.forward(params, &x_t, y, t)?;
            model_sq += model.sub(&oracle)?.norm_sq();
            zero_sq += oracle.norm_sq();
            n += x_t.n_coords();
        }
    }
    Ok((model_sq / n as f64, zero_sq / n as f64))
}
