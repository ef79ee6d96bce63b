//! The mean-reverting forward SDE, its Gaussian perturbation kernel, the
//! reverse SDE and the analytic score oracles.
//!
//! Forward process per real coordinate:
//!
//! ```text
//! dx_t = gamma (y - x_t) dt + g(t) dw,
//! g(t) = sigma_min (sigma_max/sigma_min)^t sqrt(2 log(sigma_max/sigma_min))
//! ```
//!
//! The affine drift makes the transition density Gaussian with closed-form
//! moments:
//!
//! ```text
//! mean(t) = exp(-gamma t) x0 + (1 - exp(-gamma t)) y
//! var(t)  = sigma_min^2 ((sigma_max/sigma_min)^{2t} - exp(-2 gamma t))
//!           * log(sigma_max/sigma_min) / (gamma + log(sigma_max/sigma_min))
//! ```
//!
//! `var(t)` is the variance of each real coordinate; real and imaginary
//! parts evolve as independent real SDEs, which makes the complex kernel
//! circular by construction. Every score convention in the crate (the
//! -z/sigma training target, prior sampling, corrector norms) uses this
//! single per-coordinate convention.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{derive_seed, Error, Result, SpecGrid};

/// Stiffness and diffusion-schedule bounds of the forward process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeParams {
    /// Mean-reversion stiffness, > 0.
    pub gamma: f64,
    /// Diffusion schedule lower bound, > 0 (transformed-amplitude units).
    pub sigma_min: f64,
    /// Diffusion schedule upper bound, > sigma_min.
    pub sigma_max: f64,
}

impl Default for SdeParams {
    fn default() -> Self {
        Self {
            gamma: 1.5,
            sigma_min: 0.05,
            sigma_max: 0.5,
        }
    }
}

impl SdeParams {
    /// Validated constructor; requires gamma > 0 and 0 < sigma_min < sigma_max.
    pub fn new(gamma: f64, sigma_min: f64, sigma_max: f64) -> Result<Self> {
        let p = Self {
            gamma,
            sigma_min,
            sigma_max,
        };
        p.validate()?;
        Ok(p)
    }

    /// Test hook: a degenerate schedule with sigma_min == sigma_max, for which
    /// g(t) and the kernel variance vanish identically and the process reduces
    /// to the deterministic relaxation dx = gamma (y - x) dt.
    pub fn zero_diffusion(gamma: f64, sigma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !(sigma > 0.0) {
            return Err(Error::InvalidParam(
                "zero-diffusion hook requires gamma > 0 and sigma > 0".into(),
            ));
        }
        Ok(Self {
            gamma,
            sigma_min: sigma,
            sigma_max: sigma,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParam(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return Err(Error::InvalidParam(format!(
                "need 0 < sigma_min < sigma_max, got sigma_min = {}, sigma_max = {}",
                self.sigma_min, self.sigma_max
            )));
        }
        Ok(())
    }

    /// log(sigma_max / sigma_min); zero only for the zero-diffusion hook.
    pub fn log_ratio(&self) -> f64 {
        (self.sigma_max / self.sigma_min).ln()
    }

    /// Forward drift gamma * (y - x), elementwise over real coordinates.
    pub fn drift(&self, x: &SpecGrid, y: &SpecGrid) -> Result<SpecGrid> {
        x.zip_map(y, |xv, yv| (yv - xv) * self.gamma)
    }

    /// Diffusion coefficient g(t) on t in [0, 1].
    pub fn diffusion(&self, t: f64) -> Result<f64> {
        check_unit_interval(t)?;
        let log_ratio = self.log_ratio();
        Ok(self.sigma_min * (self.sigma_max / self.sigma_min).powf(t) * (2.0 * log_ratio).sqrt())
    }

    /// Kernel mean exp(-gamma t) x0 + (1 - exp(-gamma t)) y for t >= 0.
    pub fn kernel_mean(&self, x0: &SpecGrid, y: &SpecGrid, t: f64) -> Result<SpecGrid> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("kernel mean needs t >= 0, got {t}")));
        }
        let decay = (-self.gamma * t).exp();
        x0.zip_map(y, |x0v, yv| x0v * decay + yv * (1.0 - decay))
    }

    /// Per-real-coordinate kernel variance sigma(t)^2 on t in [0, 1].
    pub fn kernel_variance(&self, t: f64) -> Result<f64> {
        check_unit_interval(t)?;
        let log_ratio = self.log_ratio();
        let ratio_sq = (self.sigma_max / self.sigma_min).powf(2.0 * t);
        Ok(self.sigma_min * self.sigma_min * (ratio_sq - (-2.0 * self.gamma * t).exp()) * log_ratio
            / (self.gamma + log_ratio))
    }

    /// Per-real-coordinate kernel standard deviation sigma(t).
    pub fn kernel_std(&self, t: f64) -> Result<f64> {
        Ok(self.kernel_variance(t)?.sqrt())
    }

    /// Draws x_t from the perturbation kernel. Returns (x_t, z) with
    /// x_t = mean + sigma(t) z so callers can form the score-matching target
    /// -z / sigma(t). At t = 0 the kernel is degenerate and (x0, 0) is
    /// returned.
    pub fn sample_kernel(
        &self,
        x0: &SpecGrid,
        y: &SpecGrid,
        t: f64,
        rng: &mut impl Rng,
    ) -> Result<(SpecGrid, SpecGrid)> {
        let mean = self.kernel_mean(x0, y, t)?;
        let std = self.kernel_std(t)?;
        if std == 0.0 {
            let (nf, nt) = x0.shape();
            return Ok((mean, SpecGrid::zeros(nf, nt)));
        }
        let z = SpecGrid::standard_normal(x0.n_freq(), x0.n_frames(), rng);
        let x_t = mean.add_scaled(&z, std)?;
        Ok((x_t, z))
    }

    /// Reverse-SDE drift f(x, t) - g(t)^2 * score.
    pub fn reverse_drift(
        &self,
        x: &SpecGrid,
        t: f64,
        y: &SpecGrid,
        score: &SpecGrid,
    ) -> Result<SpecGrid> {
        let g = self.diffusion(t)?;
        self.drift(x, y)?.add_scaled(score, -g * g)
    }
}

fn check_unit_interval(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t must lie in [0, 1], got {t}")));
    }
    Ok(())
}

/// Score of the perturbation kernel itself: -(x_t - mean) / sigma(t)^2 per
/// real coordinate, where `mean` is the kernel mean for the conditioning
/// (x0, y). Rejects t <= 0 (sigma = 0 singularity).
pub fn analytic_conditional_score(
    x_t: &SpecGrid,
    mean: &SpecGrid,
    t: f64,
    params: &SdeParams,
) -> Result<SpecGrid> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!(
            "conditional score needs t > 0, got {t}"
        )));
    }
    let var = params.kernel_variance(t)?;
    x_t.zip_map(mean, |xv, mv| -(xv - mv) / var)
}

/// Score of the Gaussian marginal that results from pushing a per-coordinate
/// Gaussian prior N(prior_mean, prior_var) through the affine forward
/// process:
///
/// ```text
/// x_t ~ N(exp(-gamma t) m0 + (1 - exp(-gamma t)) y,
///         exp(-2 gamma t) s0^2 + sigma(t)^2)
/// ```
///
/// This is the verification oracle used against the sampler and the trained
/// network; with prior_var = 0 it reduces to the conditional score at
/// x0 = prior_mean.
pub fn analytic_gaussian_marginal_score(
    x_t: &SpecGrid,
    y: &SpecGrid,
    t: f64,
    prior_mean: &SpecGrid,
    prior_var: f64,
    params: &SdeParams,
) -> Result<SpecGrid> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("marginal score needs t > 0, got {t}")));
    }
    if !(prior_var >= 0.0) {
        return Err(Error::Domain(format!(
            "prior variance must be >= 0, got {prior_var}"
        )));
    }
    let (mean, var) = gaussian_marginal_moments(y, t, prior_mean, prior_var, params)?;
    x_t.zip_map(&mean, |xv, mv| -(xv - mv) / var)
}

/// Closed-form (mean grid, per-coordinate variance) of the Gaussian marginal
/// described in [`analytic_gaussian_marginal_score`].
pub fn gaussian_marginal_moments(
    y: &SpecGrid,
    t: f64,
    prior_mean: &SpecGrid,
    prior_var: f64,
    params: &SdeParams,
) -> Result<(SpecGrid, f64)> {
    let mean = params.kernel_mean(prior_mean, y, t)?;
    let decay = (-2.0 * params.gamma * t).exp();
    let var = decay * prior_var + params.kernel_variance(t)?;
    Ok((mean, var))
}

/// Euler-Maruyama discretization of the forward SDE with uniform steps on
/// [0, 1], evaluating g at the left endpoint:
///
/// ```text
/// x_{k+1} = x_k + gamma (y - x_k) dt + g(t_k) sqrt(dt) z_k
/// ```
///
/// Returns the full trajectory of length n_steps + 1 starting at x0. This is
/// the simulation oracle the closed-form kernel moments are checked against.
pub fn euler_maruyama_forward(
    x0: &SpecGrid,
    y: &SpecGrid,
    params: &SdeParams,
    n_steps: usize,
    rng: &mut impl Rng,
) -> Result<Vec<SpecGrid>> {
    if n_steps == 0 {
        return Err(Error::InvalidParam("n_steps must be >= 1".into()));
    }
    x0.check_same_shape(y)?;
    let dt = 1.0 / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut trajectory = Vec::with_capacity(n_steps + 1);
    let mut x = x0.clone();
    trajectory.push(x.clone());
    for k in 0..n_steps {
        let g = params.diffusion(k as f64 * dt)?;
        let scale = g * sqrt_dt;
        x = x.zip_map(y, |xv, yv| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            xv + (yv - xv) * (params.gamma * dt) + Complex64::new(re, im) * scale
        })?;
        trajectory.push(x.clone());
    }
    Ok(trajectory)
}

/// Empirical vs closed-form kernel moments at one recorded time.
#[derive(Debug, Clone)]
pub struct KernelCheck {
    pub t: f64,
    /// Largest |empirical mean - exact mean| over coordinates, in units of
    /// the Monte-Carlo standard error sqrt(var(t) / n_paths).
    pub max_mean_err_se: f64,
    /// Per-coordinate sample variance averaged over coordinates.
    pub empirical_var: f64,
    pub exact_var: f64,
    /// |empirical_var - exact_var| / exact_var.
    pub var_rel_err: f64,
}

/// Streams `n_paths` Euler-Maruyama trajectories (each with its own seed
/// derived from `seed`) and compares ensemble moments against the closed-form
/// kernel at the requested times. Times are snapped to the step grid.
pub fn ensemble_kernel_check(
    x0: &SpecGrid,
    y: &SpecGrid,
    params: &SdeParams,
    n_paths: usize,
    n_steps: usize,
    times: &[f64],
    seed: u64,
) -> Result<Vec<KernelCheck>> {
    if n_paths == 0 {
        return Err(Error::InvalidParam("n_paths must be >= 1".into()));
    }
    x0.check_same_shape(y)?;
    let dt = 1.0 / n_steps as f64;
    let mut record_steps: Vec<usize> = times
        .iter()
        .map(|&t| ((t * n_steps as f64).round() as usize).min(n_steps))
        .collect();
    record_steps.sort_unstable();
    record_steps.dedup();

    let n_coords = x0.n_coords();
    let mut sums = vec![vec![0.0f64; n_coords]; record_steps.len()];
    let mut sum_sqs = vec![vec![0.0f64; n_coords]; record_steps.len()];

    for path in 0..n_paths {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, path as u64));
        let mut x = x0.clone();
        let mut next_record = 0;
        if record_steps[0] == 0 {
            accumulate(&x, &mut sums[0], &mut sum_sqs[0]);
            next_record = 1;
        }
        for k in 0..n_steps {
            let g = params.diffusion(k as f64 * dt)?;
            let scale = g * dt.sqrt();
            x = x.zip_map(y, |xv, yv| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                xv + (yv - xv) * (params.gamma * dt) + Complex64::new(re, im) * scale
            })?;
            if next_record < record_steps.len() && k + 1 == record_steps[next_record] {
                accumulate(&x, &mut sums[next_record], &mut sum_sqs[next_record]);
                next_record += 1;
            }
        }
    }

    let n = n_paths as f64;
    record_steps
        .iter()
        .zip(sums.iter().zip(&sum_sqs))
        .map(|(&step, (sum, sum_sq))| {
            let t = step as f64 * dt;
            let exact_mean = params.kernel_mean(x0, y, t)?;
            let exact_var = params.kernel_variance(t)?;
            let se = (exact_var / n).sqrt();
            let mut max_mean_err_se = 0.0f64;
            let mut var_acc = 0.0f64;
            for (i, exact) in exact_mean.coords().enumerate() {
                let mean = sum[i] / n;
                let var = (sum_sq[i] - n * mean * mean) / (n - 1.0);
                var_acc += var;
                if se > 0.0 {
                    max_mean_err_se = max_mean_err_se.max((mean - exact).abs() / se);
                } else if mean != exact {
                    max_mean_err_se = f64::INFINITY;
                }
            }
            let empirical_var = var_acc / n_coords as f64;
            let var_rel_err = if exact_var > 0.0 {
                (empirical_var - exact_var).abs() / exact_var
            } else {
                empirical_var.abs()
            };
            Ok(KernelCheck {
                t,
                max_mean_err_se,
                empirical_var,
                exact_var,
                var_rel_err,
            })
        })
        .collect()
}

fn accumulate(x: &SpecGrid, sum: &mut [f64], sum_sq: &mut [f64]) {
    for (i, c) in x.coords().enumerate() {
        sum[i] += c;
        sum_sq[i] += c * c;
    }
}

/// Stiffness-criterion report: the mean-squared distance of the kernel mean
/// at t = 1 from y over all complex bins, its closed-form identity
/// exp(-2 gamma) E[|x0 - y|^2], and the pass/fail against the 1e-3 rule.
#[derive(Debug, Clone)]
pub struct StiffnessReport {
    /// Empirical mean over all bins of |mean(1) - y|^2.
    pub mu1_mse: f64,
    /// exp(-2 gamma) * empirical mean of |x0 - y|^2 (algebraic identity).
    pub identity_rhs: f64,
    /// Mean over all bins of |x0 - y|^2.
    pub pair_mse: f64,
    pub threshold: f64,
    pub passes: bool,
}

/// Evaluates the stiffness-calibration criterion E[|mean(1) - y|^2] < 1e-3
/// over all complex bins of the supplied spectrogram pairs.
pub fn stiffness_report(pairs: &[(SpecGrid, SpecGrid)], params: &SdeParams) -> Result<StiffnessReport> {
    if pairs.is_empty() {
        return Err(Error::Dataset("stiffness check needs at least one pair".into()));
    }
    let mut mu1_acc = 0.0f64;
    let mut pair_acc = 0.0f64;
    let mut n_bins = 0usize;
    for (x0, y) in pairs {
        let mu1 = params.kernel_mean(x0, y, 1.0)?;
        mu1_acc += mu1.sub(y)?.norm_sq();
        pair_acc += x0.sub(y)?.norm_sq();
        n_bins += x0.len();
    }
    let mu1_mse = mu1_acc / n_bins as f64;
    let pair_mse = pair_acc / n_bins as f64;
    let identity_rhs = (-2.0 * params.gamma).exp() * pair_mse;
    let threshold = 1e-3;
    Ok(StiffnessReport {
        mu1_mse,
        identity_rhs,
        pair_mse,
        threshold,
        passes: mu1_mse < threshold,
    })
}
