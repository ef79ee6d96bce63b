//! STFT analysis/synthesis and the amplitude-compression transform pair.
//!
//! The STFT is one-sided with a periodic Hann window and centered frames
//! (the input is reflection-padded by half a DFT length at both ends), so the
//! frame count is a deterministic function of the input length:
//! T = floor(len / hop) + 1. Synthesis uses overlap-add with the
//! squared-window normalization, which reconstructs exactly wherever the
//! window overlap covers the signal.
//!
//! The amplitude transform compresses heavy-tailed STFT magnitudes while
//! leaving the phase untouched:
//!
//! ```text
//! c~ = (|c|^alpha / beta) exp(i angle(c))   <=>   c = beta |c~|^{1/alpha} exp(i angle(c~))
//! ```
//!
//! Zero maps to zero by definition in both directions.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, SpecGrid};

/// STFT resolution parameters. The window is always a periodic Hann of the
/// DFT length and the transform is always one-sided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    /// DFT length F (even).
    pub dft_length: usize,
    /// Hop between frames, <= F.
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            dft_length: 512,
            hop: 128,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dft_length < 2 || self.dft_length % 2 != 0 {
            return Err(Error::InvalidParam(format!(
                "dft_length must be even and >= 2, got {}",
                self.dft_length
            )));
        }
        if self.hop == 0 || self.hop > self.dft_length {
            return Err(Error::InvalidParam(format!(
                "hop must satisfy 1 <= hop <= dft_length, got {}",
                self.hop
            )));
        }
        // overlap-add feasibility: the squared window summed over the hop
        // lattice must be bounded away from zero everywhere
        let w = periodic_hann(self.dft_length);
        let mut min_ola = f64::INFINITY;
        for r in 0..self.hop {
            let s: f64 = (r..self.dft_length)
                .step_by(self.hop)
                .map(|j| w[j] * w[j])
                .sum();
            min_ola = min_ola.min(s);
        }
        if min_ola <= 1e-10 {
            return Err(Error::InvalidParam(format!(
                "window/hop combination violates the overlap-add condition (min sum {min_ola:.3e})"
            )));
        }
        Ok(())
    }

    /// Number of one-sided frequency bins, F/2 + 1.
    pub fn n_freq(&self) -> usize {
        self.dft_length / 2 + 1
    }

    /// Number of frames produced for an input of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }
}

/// Periodic Hann window w[n] = 0.5 (1 - cos(2 pi n / len)).
pub fn periodic_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (std::f64::consts::TAU * n as f64 / len as f64).cos()))
        .collect()
}

fn reflect_pad(x: &[f64], pad: usize) -> Result<Vec<f64>> {
    if x.len() < pad + 1 {
        return Err(Error::Domain(format!(
            "input of {} samples is shorter than the {}-sample reflection pad",
            x.len(),
            pad
        )));
    }
    let mut out = Vec::with_capacity(x.len() + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[x.len() - 2 - i]));
    Ok(out)
}

/// One-sided centered STFT of a real signal. Output shape is
/// (F/2 + 1) x (floor(len / hop) + 1), frequency-major.
pub fn stft(x: &[f64], cfg: &StftConfig) -> Result<SpecGrid> {
    cfg.validate()?;
    if x.is_empty() {
        return Err(Error::Domain("cannot transform an empty signal".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("input contains non-finite samples".into()));
    }
    let f_len = cfg.dft_length;
    let pad = f_len / 2;
    let padded = reflect_pad(x, pad)?;
    let n_frames = cfg.n_frames(x.len());
    let n_freq = cfg.n_freq();
    let window = periodic_hann(f_len);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(f_len);
    let mut buf = vec![Complex64::ZERO; f_len];
    let mut grid = SpecGrid::zeros(n_freq, n_frames);
    for ti in 0..n_frames {
        let start = ti * cfg.hop;
        for j in 0..f_len {
            buf[j] = Complex64::new(padded[start + j] * window[j], 0.0);
        }
        fft.process(&mut buf);
        for fi in 0..n_freq {
            grid.set(fi, ti, buf[fi]);
        }
    }
    Ok(grid)
}

/// Overlap-add inverse STFT with squared-window normalization, trimmed to
/// `length` samples. The grid must come from a matching [`StftConfig`].
pub fn istft(spec: &SpecGrid, length: usize, cfg: &StftConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let f_len = cfg.dft_length;
    if spec.n_freq() != cfg.n_freq() {
        return Err(Error::InvalidParam(format!(
            "grid has {} frequency bins but the config implies {}",
            spec.n_freq(),
            cfg.n_freq()
        )));
    }
    let n_frames = spec.n_frames();
    let pad = f_len / 2;
    let total = (n_frames - 1) * cfg.hop + f_len;
    if pad + length > total {
        return Err(Error::InvalidParam(format!(
            "requested {length} samples but the grid only covers {}",
            total - pad
        )));
    }
    let window = periodic_hann(f_len);

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(f_len);
    let mut buf = vec![Complex64::ZERO; f_len];
    let mut acc = vec![0.0f64; total];
    let mut wsum = vec![0.0f64; total];
    let scale = 1.0 / f_len as f64;
    for ti in 0..n_frames {
        // Hermitian extension of the one-sided spectrum
        for fi in 0..cfg.n_freq() {
            buf[fi] = spec.get(fi, ti);
        }
        for fi in 1..f_len / 2 {
            buf[f_len - fi] = spec.get(fi, ti).conj();
        }
        ifft.process(&mut buf);
        let start = ti * cfg.hop;
        for j in 0..f_len {
            acc[start + j] += buf[j].re * scale * window[j];
            wsum[start + j] += window[j] * window[j];
        }
    }
    Ok((0..length)
        .map(|n| {
            let i = n + pad;
            if wsum[i] > 1e-12 {
                acc[i] / wsum[i]
            } else {
                0.0
            }
        })
        .collect())
}

/// Amplitude-compression parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformConfig {
    /// Magnitude exponent, in (0, 1].
    pub alpha: f64,
    /// Magnitude divisor, > 0.
    pub beta: f64,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 3.0,
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidParam(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Forward amplitude compression c -> (|c|^alpha / beta) exp(i angle(c)).
///
/// Implemented as multiplication by the positive real |c|^{alpha-1} / beta, so
/// the phase is preserved exactly.
pub fn amp_transform(spec: &SpecGrid, cfg: &TransformConfig) -> SpecGrid {
    spec.map(|c| {
        let m = c.norm();
        if m == 0.0 {
            Complex64::ZERO
        } else {
            c * (m.powf(cfg.alpha - 1.0) / cfg.beta)
        }
    })
}

/// Inverse of [`amp_transform`]: c~ -> (beta |c~|)^{1/alpha} exp(i angle(c~)),
/// which restores |c| = (beta |c~|)^{1/alpha} from |c~| = |c|^alpha / beta.
pub fn amp_inverse(spec: &SpecGrid, cfg: &TransformConfig) -> SpecGrid {
    let beta_pow = cfg.beta.powf(1.0 / cfg.alpha);
    spec.map(|c| {
        let m = c.norm();
        if m == 0.0 {
            Complex64::ZERO
        } else {
            c * (beta_pow * m.powf(1.0 / cfg.alpha - 1.0))
        }
    })
}

/// A normalized utterance (pair): waveforms divided by `factor`, which is
/// the peak amplitude of the clean reference in training mode or of the noisy
/// input when no clean signal is available.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub clean: Option<Vec<f64>>,
    pub noisy: Vec<f64>,
    /// Peak value used; multiply by it to undo the normalization exactly.
    pub factor: f64,
}

/// Peak-normalizes a (clean, noisy) pair by max |clean|, or the noisy signal
/// alone by max |noisy| when the clean reference is absent (inference).
pub fn normalize_pair(clean: Option<&[f64]>, noisy: &[f64]) -> Result<Normalized> {
    if noisy.is_empty() {
        return Err(Error::Normalization("noisy signal is empty".into()));
    }
    if let Some(c) = clean {
        if c.len() != noisy.len() {
            return Err(Error::LengthMismatch {
                left: c.len(),
                right: noisy.len(),
            });
        }
    }
    let reference = clean.unwrap_or(noisy);
    let factor = reference.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if factor == 0.0 {
        return Err(Error::Normalization(
            "reference signal is identically zero".into(),
        ));
    }
    Ok(Normalized {
        clean: clean.map(|c| c.iter().map(|&v| v / factor).collect()),
        noisy: noisy.iter().map(|&v| v / factor).collect(),
        factor,
    })
}

/// Undoes [`normalize_pair`] by multiplying the waveform by the stored factor.
pub fn denormalize(x: &[f64], factor: f64) -> Vec<f64> {
    x.iter().map(|&v| v * factor).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> StftConfig {
        StftConfig {
            dft_length: 64,
            hop: 16,
        }
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::default().validate().is_ok());
        assert!(StftConfig { dft_length: 63, hop: 16 }.validate().is_err());
        assert!(StftConfig { dft_length: 64, hop: 0 }.validate().is_err());
        assert!(StftConfig { dft_length: 64, hop: 128 }.validate().is_err());
        // hop = F fails overlap-add for a Hann window (w[0] = 0)
        assert!(StftConfig { dft_length: 64, hop: 64 }.validate().is_err());
    }

    #[test]
    fn stft_shape_and_zero_signal() {
        let cfg = small_cfg();
        let x = vec![0.0; 400];
        let g = stft(&x, &cfg).unwrap();
        assert_eq!(g.shape(), (33, 400 / 16 + 1));
        assert_eq!(g.norm_sq(), 0.0);
        assert!(stft(&[], &cfg).is_err());
    }

    #[test]
    fn bin_exact_cosine_concentrates_in_window_mainlobe() {
        // direct DFT evaluation of the windowed frame as the oracle, plus the
        // mainlobe (k-1..k+1) carrying >= 99% of the one-sided frame energy
        let cfg = small_cfg();
        let f_len = cfg.dft_length;
        let k = 9usize;
        let n = 512;
        let x: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * k as f64 * i as f64 / f_len as f64).cos())
            .collect();
        let g = stft(&x, &cfg).unwrap();

        let ti = g.n_frames() / 2; // interior frame
        // oracle: O(F^2) direct DFT of the same windowed slice
        let w = periodic_hann(f_len);
        let pad = f_len / 2;
        let padded = reflect_pad(&x, pad).unwrap();
        let start = ti * cfg.hop;
        for fi in 0..g.n_freq() {
            let mut acc = Complex64::ZERO;
            for j in 0..f_len {
                let phase = -std::f64::consts::TAU * fi as f64 * j as f64 / f_len as f64;
                acc += Complex64::from_polar(padded[start + j] * w[j], phase);
            }
            let got = g.get(fi, ti);
            assert_abs_diff_eq!(got.re, acc.re, epsilon = 1e-9);
            assert_abs_diff_eq!(got.im, acc.im, epsilon = 1e-9);
        }

        let frame_energy: f64 = (0..g.n_freq()).map(|fi| g.get(fi, ti).norm_sqr()).sum();
        let mainlobe: f64 = (k - 1..=k + 1).map(|fi| g.get(fi, ti).norm_sqr()).sum();
        assert!(
            mainlobe / frame_energy >= 0.99,
            "mainlobe fraction {}",
            mainlobe / frame_energy
        );
        // and the peak bin is k
        let peak = (0..g.n_freq())
            .max_by(|&a, &b| {
                g.get(a, ti)
                    .norm_sqr()
                    .partial_cmp(&g.get(b, ti).norm_sqr())
                    .unwrap()
            })
            .unwrap();
        assert_eq!(peak, k);
    }

    #[test]
    fn impulse_at_frame_center_gives_flat_alternating_spectrum() {
        // an impulse centered in frame m lands on the window peak, so that
        // frame's spectrum is w[F/2] * (-1)^k; across frames a fixed bin
        // traces the window shape sampled at hop intervals
        let cfg = small_cfg();
        let f_len = cfg.dft_length;
        let m = 8usize;
        let n0 = m * cfg.hop;
        let mut x = vec![0.0; 400];
        x[n0] = 1.0;
        let g = stft(&x, &cfg).unwrap();
        for fi in 0..g.n_freq() {
            let expected = if fi % 2 == 0 { 1.0 } else { -1.0 };
            assert_abs_diff_eq!(g.get(fi, m).re, expected, epsilon = 1e-9);
            assert_abs_diff_eq!(g.get(fi, m).im, 0.0, epsilon = 1e-9);
        }
        let w = periodic_hann(f_len);
        for dm in 1..(f_len / 2 / cfg.hop) {
            let expected = w[f_len / 2 - dm * cfg.hop];
            assert_abs_diff_eq!(g.get(0, m - dm).re.abs(), expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn roundtrip_is_near_exact() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = stft(&x, &cfg).unwrap();
        let y = istft(&g, x.len(), &cfg).unwrap();
        let max_err = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-6, "roundtrip max abs error {max_err}");
    }

    #[test]
    fn istft_zero_grid_and_linearity() {
        let cfg = small_cfg();
        let zero = SpecGrid::zeros(cfg.n_freq(), 10);
        let y = istft(&zero, 100, &cfg).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = stft(&x, &cfg).unwrap();
        let a = 2.5;
        let ya = istft(&g.scale(a), x.len(), &cfg).unwrap();
        let y = istft(&g, x.len(), &cfg).unwrap();
        for (va, v) in ya.iter().zip(&y) {
            assert_abs_diff_eq!(*va, a * v, epsilon = 1e-10);
        }
    }

    #[test]
    fn istft_rejects_mismatched_config() {
        let cfg = small_cfg();
        let g = SpecGrid::zeros(20, 10);
        assert!(istft(&g, 10, &cfg).is_err());
    }

    #[test]
    fn parseval_energy_within_one_percent() {
        let cfg = StftConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<f64> = (0..65536).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = stft(&x, &cfg).unwrap();
        // per-frame Parseval with one-sided double counting, window
        // compensation via the overlap-add constant sum(w^2) / hop
        let f_len = cfg.dft_length as f64;
        let mut spec_energy = 0.0;
        for ti in 0..g.n_frames() {
            let mut e = g.get(0, ti).norm_sqr() + g.get(g.n_freq() - 1, ti).norm_sqr();
            for fi in 1..g.n_freq() - 1 {
                e += 2.0 * g.get(fi, ti).norm_sqr();
            }
            spec_energy += e / f_len;
        }
        let w = periodic_hann(cfg.dft_length);
        let ola: f64 = w.iter().map(|v| v * v).sum::<f64>() / cfg.hop as f64;
        let time_energy: f64 = x.iter().map(|v| v * v).sum();
        assert_relative_eq!(spec_energy / ola, time_energy, max_relative = 0.01);
    }

    #[test]
    fn amp_transform_zero_and_reference_point() {
        let cfg = TransformConfig::default();
        let zero = SpecGrid::scalar(Complex64::ZERO);
        assert_eq!(amp_transform(&zero, &cfg).get(0, 0), Complex64::ZERO);
        assert_eq!(amp_inverse(&zero, &cfg).get(0, 0), Complex64::ZERO);

        // |c| = 9, alpha = 0.5, beta = 3 -> |c~| = 1, angle preserved
        let c = Complex64::from_polar(9.0, 1.1);
        let g = SpecGrid::scalar(c);
        let t = amp_transform(&g, &cfg);
        assert_relative_eq!(t.get(0, 0).norm(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(t.get(0, 0).arg(), 1.1, max_relative = 1e-12);
        let back = amp_inverse(&t, &cfg);
        assert_relative_eq!(back.get(0, 0).re, c.re, max_relative = 1e-12);
        assert_relative_eq!(back.get(0, 0).im, c.im, max_relative = 1e-12);
    }

    #[test]
    fn amp_roundtrip_on_random_grid() {
        let cfg = TransformConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let g = SpecGrid::standard_normal(6, 5, &mut rng).scale(4.0);
        let rt = amp_inverse(&amp_transform(&g, &cfg), &cfg);
        for (a, b) in g.data().iter().zip(rt.data()) {
            assert_relative_eq!(a.re, b.re, max_relative = 1e-9);
            assert_relative_eq!(a.im, b.im, max_relative = 1e-9);
        }
    }

    #[test]
    fn normalization_modes_and_errors() {
        let clean = vec![0.5, -0.25, 0.1];
        let noisy = vec![0.6, -0.5, 0.2];
        let n = normalize_pair(Some(&clean), &noisy).unwrap();
        assert_eq!(n.factor, 0.5);
        assert_eq!(n.clean.unwrap(), vec![1.0, -0.5, 0.2]);
        assert_eq!(n.noisy, vec![1.2, -1.0, 0.4]);

        let y = vec![2.0, -1.0];
        let n = normalize_pair(None, &y).unwrap();
        assert_eq!(n.factor, 2.0);
        assert_eq!(n.noisy, vec![1.0, -0.5]);
        assert_eq!(denormalize(&n.noisy, n.factor), y);

        assert!(normalize_pair(Some(&[0.0, 0.0]), &[1.0, 2.0]).is_err());
        assert!(normalize_pair(None, &[]).is_err());
        assert!(normalize_pair(Some(&clean), &noisy[..2]).is_err());
    }
}
