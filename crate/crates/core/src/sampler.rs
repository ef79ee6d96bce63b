//! Reverse-process inference: prior sampling at t = 1 and the
//! predictor-corrector loop that carries the state down to t_eps.
//!
//! The predictor is one reverse-diffusion discretization step of the reverse
//! SDE; the corrector is annealed Langevin dynamics whose step size is set
//! from the signal-to-noise parameter r. Within an iteration the corrector
//! runs before the predictor, on a uniform time grid from 1 down to t_eps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{sde::SdeParams, Error, Result, SpecGrid};

/// Reverse-process controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Number of predictor iterations.
    pub n_steps: usize,
    /// Stopping time of the reverse process, in (0, 1).
    pub t_eps: f64,
    /// Corrector signal-to-noise parameter r.
    pub snr_r: f64,
    /// Langevin corrector steps per iteration.
    pub corrector_steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 50,
            t_eps: 0.03,
            snr_r: 0.33,
            corrector_steps: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidParam("n_steps must be >= 1".into()));
        }
        if !(self.t_eps > 0.0 && self.t_eps < 1.0) {
            return Err(Error::InvalidParam(format!(
                "t_eps must lie in (0, 1), got {}",
                self.t_eps
            )));
        }
        if !(self.snr_r > 0.0) {
            return Err(Error::InvalidParam(format!(
                "snr_r must be > 0, got {}",
                self.snr_r
            )));
        }
        Ok(())
    }

    /// Uniform time grid t_k = 1 - k (1 - t_eps) / n_steps. The endpoints are
    /// pinned so the grid hits exactly 1 and t_eps.
    pub fn time_grid(&self) -> Vec<f64> {
        let n = self.n_steps;
        let span = 1.0 - self.t_eps;
        (0..=n)
            .map(|k| {
                if k == 0 {
                    1.0
                } else if k == n {
                    self.t_eps
                } else {
                    1.0 - k as f64 * span / n as f64
                }
            })
            .collect()
    }
}

/// A score estimate s(x_t, t, y), implemented by the analytic oracles and by
/// the trained network.
pub trait ScoreModel {
    fn score(&self, x_t: &SpecGrid, y: &SpecGrid, t: f64) -> Result<SpecGrid>;
}

/// Always returns the zero grid. Baseline model and test hook.
#[derive(Debug, Clone, Copy)]
pub struct ZeroScore;

impl ScoreModel for ZeroScore {
    fn score(&self, x_t: &SpecGrid, _y: &SpecGrid, _t: f64) -> Result<SpecGrid> {
        let (nf, nt) = x_t.shape();
        Ok(SpecGrid::zeros(nf, nt))
    }
}

/// Closed-form score of the Gaussian marginal induced by a per-coordinate
/// Gaussian prior N(prior_mean, prior_var). The sampler-fidelity oracle.
#[derive(Debug, Clone)]
pub struct GaussianMarginalOracle {
    pub prior_mean: SpecGrid,
    pub prior_var: f64,
    pub params: SdeParams,
}

impl ScoreModel for GaussianMarginalOracle {
    fn score(&self, x_t: &SpecGrid, y: &SpecGrid, t: f64) -> Result<SpecGrid> {
        crate::sde::analytic_gaussian_marginal_score(
            x_t,
            y,
            t,
            &self.prior_mean,
            self.prior_var,
            &self.params,
        )
    }
}

/// Conditional-kernel score for a known clean state x0 (delta prior).
#[derive(Debug, Clone)]
pub struct ConditionalScoreOracle {
    pub x0: SpecGrid,
    pub params: SdeParams,
}

impl ScoreModel for ConditionalScoreOracle {
    fn score(&self, x_t: &SpecGrid, y: &SpecGrid, t: f64) -> Result<SpecGrid> {
        let mean = self.params.kernel_mean(&self.x0, y, t)?;
        crate::sde::analytic_conditional_score(x_t, &mean, t, &self.params)
    }
}

/// Draws the reverse-process start x_1 ~ N(y, sigma(1)^2 I) per real
/// coordinate.
pub fn sample_prior(y: &SpecGrid, params: &SdeParams, rng: &mut impl Rng) -> Result<SpecGrid> {
    let std = params.kernel_std(1.0)?;
    if std == 0.0 {
        return Ok(y.clone());
    }
    let z = SpecGrid::standard_normal(y.n_freq(), y.n_frames(), rng);
    y.add_scaled(&z, std)
}

/// One reverse-diffusion predictor step from t to t - dt:
///
/// ```text
/// x <- x - [f(x, t) - g(t)^2 s(x, t, y)] dt + g(t) sqrt(dt) z
/// ```
pub fn predictor_step(
    x: &SpecGrid,
    t: f64,
    dt: f64,
    y: &SpecGrid,
    model: &dyn ScoreModel,
    params: &SdeParams,
    rng: &mut impl Rng,
) -> Result<SpecGrid> {
    let z = SpecGrid::standard_normal(x.n_freq(), x.n_frames(), rng);
    predictor_step_with_noise(x, t, dt, y, model, params, &z)
}

/// Deterministic predictor step with a caller-supplied noise grid (z = 0
/// gives the pure reverse-drift update).
pub fn predictor_step_with_noise(
    x: &SpecGrid,
    t: f64,
    dt: f64,
    y: &SpecGrid,
    model: &dyn ScoreModel,
    params: &SdeParams,
    z: &SpecGrid,
) -> Result<SpecGrid> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("predictor needs dt > 0, got {dt}")));
    }
    if !(t - dt >= 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!(
            "predictor step from t = {t} by dt = {dt} leaves [0, 1]"
        )));
    }
    let score = model.score(x, y, t)?;
    let rev = params.reverse_drift(x, t, y, &score)?;
    let g = params.diffusion(t)?;
    x.add_scaled(&rev, -dt)?.add_scaled(z, g * dt.sqrt())
}

/// Result of one Langevin corrector step.
#[derive(Debug, Clone)]
pub struct CorrectorOutcome {
    pub x: SpecGrid,
    /// True when the score norm was zero and the step was skipped.
    pub skipped: bool,
    /// The Langevin step size eps actually applied (0 when skipped).
    pub step_size: f64,
}

/// One annealed Langevin corrector step:
///
/// ```text
/// eps = 2 (r ||z|| / ||s||)^2,   x <- x + eps s + sqrt(2 eps) z
/// ```
///
/// with norms over all real coordinates of the grid jointly. A zero score
/// norm skips the step.
pub fn corrector_step(
    x: &SpecGrid,
    t: f64,
    y: &SpecGrid,
    model: &dyn ScoreModel,
    snr_r: f64,
    rng: &mut impl Rng,
) -> Result<CorrectorOutcome> {
    let z = SpecGrid::standard_normal(x.n_freq(), x.n_frames(), rng);
    corrector_step_with_noise(x, t, y, model, snr_r, &z)
}

/// Corrector step with a caller-supplied noise grid.
pub fn corrector_step_with_noise(
    x: &SpecGrid,
    t: f64,
    y: &SpecGrid,
    model: &dyn ScoreModel,
    snr_r: f64,
    z: &SpecGrid,
) -> Result<CorrectorOutcome> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("corrector needs t > 0, got {t}")));
    }
    let score = model.score(x, y, t)?;
    let score_norm = score.norm_sq().sqrt();
    if score_norm == 0.0 {
        return Ok(CorrectorOutcome {
            x: x.clone(),
            skipped: true,
            step_size: 0.0,
        });
    }
    let z_norm = z.norm_sq().sqrt();
    let ratio = snr_r * z_norm / score_norm;
    let eps = 2.0 * ratio * ratio;
    let x = x.add_scaled(&score, eps)?.add_scaled(z, (2.0 * eps).sqrt())?;
    Ok(CorrectorOutcome {
        x,
        skipped: false,
        step_size: eps,
    })
}

/// Diagnostics accumulated over a predictor-corrector run.
#[derive(Debug, Clone, Default)]
pub struct SamplerStats {
    /// Corrector steps skipped because the score norm was zero.
    pub corrector_skips: usize,
}

/// Runs the full predictor-corrector reverse process: draws the prior at
/// t = 1, then for each of the n_steps grid intervals applies the configured
/// number of corrector steps followed by one predictor step, and returns the
/// state at t_eps.
pub fn pc_sample(
    y: &SpecGrid,
    model: &dyn ScoreModel,
    params: &SdeParams,
    config: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<SpecGrid> {
    Ok(pc_sample_detailed(y, model, params, config, rng)?.0)
}

/// [`pc_sample`] variant that also reports sampler diagnostics.
pub fn pc_sample_detailed(
    y: &SpecGrid,
    model: &dyn ScoreModel,
    params: &SdeParams,
    config: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<(SpecGrid, SamplerStats)> {
    config.validate()?;
    let grid = config.time_grid();
    let mut stats = SamplerStats::default();
    let mut x = sample_prior(y, params, rng)?;
    for k in 0..config.n_steps {
        let t = grid[k];
        let dt = grid[k] - grid[k + 1];
        for _ in 0..config.corrector_steps {
            let outcome = corrector_step(&x, t, y, model, config.snr_r, rng)?;
            if outcome.skipped {
                stats.corrector_skips += 1;
            }
            x = outcome.x;
        }
        x = predictor_step(&x, t, dt, y, model, params, rng)?;
        if !x.all_finite() {
            return Err(Error::Divergence {
                step: k,
                t: grid[k + 1],
                max_abs: x.max_abs_coord(),
            });
        }
    }
    Ok((x, stats))
}

/// Convex blend w * x_hat + (1 - w) * y of two equal-length waveforms.
pub fn blend_output(x_hat: &[f64], y: &[f64], w: f64) -> Result<Vec<f64>> {
    if x_hat.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x_hat.len(),
            right: y.len(),
        });
    }
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Domain(format!("blend weight must lie in [0, 1], got {w}")));
    }
    Ok(x_hat
        .iter()
        .zip(y)
        .map(|(&a, &b)| w * a + (1.0 - w) * b)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // Frozen from scripts/oracle_constants.py.
    const SIGMA1_SQ: f64 = 0.151_307_508_385_531_1;

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        assert!(SamplerConfig {
            n_steps: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SamplerConfig {
            t_eps: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn time_grid_hits_endpoints_exactly() {
        let c = SamplerConfig {
            n_steps: 7,
            t_eps: 0.03,
            ..Default::default()
        };
        let grid = c.time_grid();
        assert_eq!(grid.len(), 8);
        assert_eq!(grid[0], 1.0);
        assert_eq!(grid[7], 0.03);
        let dt = grid[0] - grid[1];
        for w in grid.windows(2) {
            assert_abs_diff_eq!(w[0] - w[1], dt, epsilon = 1e-12);
        }
    }

    #[test]
    fn prior_zero_diffusion_returns_y() {
        let p = SdeParams::zero_diffusion(1.5, 0.05).unwrap();
        let y = SpecGrid::scalar(Complex64::new(0.4, -0.7));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_prior(&y, &p, &mut rng).unwrap(), y);
    }

    #[test]
    fn prior_monte_carlo_moments() {
        let p = SdeParams::default();
        let y = SpecGrid::scalar(Complex64::ZERO);
        let n = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (mut sum, mut sq) = (0.0f64, 0.0f64);
        for _ in 0..n {
            let x = sample_prior(&y, &p, &mut rng).unwrap().get(0, 0);
            sum += x.re + x.im;
            sq += x.re * x.re + x.im * x.im;
        }
        let n2 = (2 * n) as f64;
        let mean = sum / n2;
        let var = (sq - n2 * mean * mean) / (n2 - 1.0);
        assert_relative_eq!(var, SIGMA1_SQ, max_relative = 0.02);
        let se = (SIGMA1_SQ / n2).sqrt();
        assert!(mean.abs() < 3.0 * se, "prior mean {mean} vs 3 SE {}", 3.0 * se);
    }

    #[test]
    fn predictor_zero_score_zero_diffusion_is_reverse_drift() {
        let p = SdeParams::zero_diffusion(2.0, 0.1).unwrap();
        let x = SpecGrid::scalar(Complex64::new(0.8, -0.3));
        let y = SpecGrid::scalar(Complex64::new(0.1, 0.1));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dt = 0.02;
        let stepped = predictor_step(&x, 0.5, dt, &y, &ZeroScore, &p, &mut rng).unwrap();
        let expected = x
            .zip_map(&y, |xv, yv| xv - (yv - xv) * (2.0 * dt))
            .unwrap();
        assert!(stepped.sub(&expected).unwrap().max_abs_coord() < 1e-15);
    }

    #[test]
    fn predictor_noise_hook_matches_drift_integration() {
        let p = SdeParams::default();
        let x = SpecGrid::scalar(Complex64::new(0.8, -0.3));
        let y = SpecGrid::scalar(Complex64::new(0.1, 0.1));
        let z = SpecGrid::scalar(Complex64::ZERO);
        let model = ZeroScore;
        let t = 0.9;
        let dt = 0.05;
        let stepped = predictor_step_with_noise(&x, t, dt, &y, &model, &p, &z).unwrap();
        let score = model.score(&x, &y, t).unwrap();
        let rev = p.reverse_drift(&x, t, &y, &score).unwrap();
        let expected = x.add_scaled(&rev, -dt).unwrap();
        assert!(stepped.sub(&expected).unwrap().max_abs_coord() < 1e-15);
    }

    #[test]
    fn predictor_moves_towards_kernel_mean_for_delta_prior_score() {
        // scalar toy: x0 = y = 0, so the kernel mean is 0; a displaced state
        // must move towards it under the deterministic reverse update
        let p = SdeParams::default();
        let x0 = SpecGrid::scalar(Complex64::ZERO);
        let y = SpecGrid::scalar(Complex64::ZERO);
        let model = ConditionalScoreOracle {
            x0: x0.clone(),
            params: p,
        };
        let x = SpecGrid::scalar(Complex64::new(1.0, -1.0));
        let z = SpecGrid::scalar(Complex64::ZERO);
        let dt = 1e-3;
        let stepped = predictor_step_with_noise(&x, 1.0, dt, &y, &model, &p, &z).unwrap();
        let c = stepped.get(0, 0);
        assert!(c.re > 0.0 && c.re < 1.0, "re moved to {}", c.re);
        assert!(c.im < 0.0 && c.im > -1.0, "im moved to {}", c.im);
    }

    struct FixedScore(SpecGrid);

    impl ScoreModel for FixedScore {
        fn score(&self, _x: &SpecGrid, _y: &SpecGrid, _t: f64) -> Result<SpecGrid> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn corrector_step_size_formula() {
        // ||s|| = ||z|| and r = 0.33 give eps = 2 * 0.33^2 = 0.2178
        let x = SpecGrid::scalar(Complex64::ZERO);
        let y = SpecGrid::scalar(Complex64::ZERO);
        let s = SpecGrid::scalar(Complex64::new(0.6, 0.8));
        let z = SpecGrid::scalar(Complex64::new(0.8, -0.6));
        let outcome =
            corrector_step_with_noise(&x, 0.5, &y, &FixedScore(s), 0.33, &z).unwrap();
        assert!(!outcome.skipped);
        assert_relative_eq!(outcome.step_size, 0.2178, max_relative = 1e-12);
    }

    #[test]
    fn corrector_scaling_score_by_c_scales_eps_by_inv_c_sq() {
        let x = SpecGrid::scalar(Complex64::ZERO);
        let y = SpecGrid::scalar(Complex64::ZERO);
        let s = SpecGrid::scalar(Complex64::new(0.3, -0.4));
        let z = SpecGrid::scalar(Complex64::new(1.0, 2.0));
        let base = corrector_step_with_noise(&x, 0.5, &y, &FixedScore(s.clone()), 0.33, &z)
            .unwrap()
            .step_size;
        let c = 5.0;
        let scaled = corrector_step_with_noise(&x, 0.5, &y, &FixedScore(s.scale(c)), 0.33, &z)
            .unwrap()
            .step_size;
        assert_relative_eq!(scaled, base / (c * c), max_relative = 1e-12);
    }

    #[test]
    fn corrector_zero_score_skips() {
        let x = SpecGrid::scalar(Complex64::new(0.2, 0.4));
        let y = SpecGrid::scalar(Complex64::ZERO);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let outcome = corrector_step(&x, 0.5, &y, &ZeroScore, 0.33, &mut rng).unwrap();
        assert!(outcome.skipped);
        assert_eq!(outcome.x, x);
    }

    #[test]
    fn corrector_zero_noise_leaves_state_unchanged() {
        let x = SpecGrid::scalar(Complex64::new(0.2, 0.4));
        let y = SpecGrid::scalar(Complex64::ZERO);
        let s = SpecGrid::scalar(Complex64::new(1.0, 1.0));
        let z = SpecGrid::scalar(Complex64::ZERO);
        let outcome = corrector_step_with_noise(&x, 0.5, &y, &FixedScore(s), 0.33, &z).unwrap();
        assert!(!outcome.skipped);
        assert_eq!(outcome.step_size, 0.0);
        assert_eq!(outcome.x, x);
    }

    #[test]
    fn pc_sample_zero_diffusion_zero_score_returns_y() {
        let p = SdeParams::zero_diffusion(1.5, 0.05).unwrap();
        let y = SpecGrid::scalar(Complex64::new(0.4, -0.2));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (out, stats) =
            pc_sample_detailed(&y, &ZeroScore, &p, &SamplerConfig::default(), &mut rng).unwrap();
        assert!(out.sub(&y).unwrap().max_abs_coord() < 1e-12);
        assert_eq!(stats.corrector_skips, 50);
    }

    #[test]
    fn pc_sample_is_seed_deterministic() {
        let p = SdeParams::default();
        let y = SpecGrid::constant(3, 2, Complex64::new(0.5, 0.5));
        let model = GaussianMarginalOracle {
            prior_mean: SpecGrid::zeros(3, 2),
            prior_var: 1.0,
            params: p,
        };
        let cfg = SamplerConfig::default();
        let a = pc_sample(&y, &model, &p, &cfg, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b = pc_sample(&y, &model, &p, &cfg, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pc_sample_reports_divergence_with_step_index() {
        let p = SdeParams::default();
        let y = SpecGrid::scalar(Complex64::ZERO);
        let model = FixedScore(SpecGrid::scalar(Complex64::new(f64::MAX, 0.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let err = pc_sample(&y, &model, &p, &SamplerConfig::default(), &mut rng).unwrap_err();
        match err {
            Error::Divergence { step, .. } => assert!(step < 50),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn blend_endpoints_and_linearity() {
        let s = vec![0.1, -0.2, 0.3];
        let n = vec![0.05, 0.05, -0.05];
        let y: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + b).collect();
        assert_eq!(blend_output(&s, &y, 1.0).unwrap(), s);
        assert_eq!(blend_output(&s, &y, 0.0).unwrap(), y);
        let m = blend_output(&s, &y, 0.8).unwrap();
        for ((mv, sv), nv) in m.iter().zip(&s).zip(&n) {
            assert_abs_diff_eq!(*mv, sv + 0.2 * nv, epsilon = 1e-15);
        }
        assert!(blend_output(&s, &y[..2], 0.5).is_err());
    }
}
