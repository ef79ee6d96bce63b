//! Scale-invariant BSS-eval metrics.
//!
//! An estimate is decomposed by orthogonal projection onto the subspace
//! spanned by the clean signal s and the noise n = y - s:
//!
//! ```text
//! s_target = (<est, s> / ||s||^2) s
//! e_interf = P(est) - s_target        (P = projection onto span{s, n})
//! e_artif  = est - P(est)
//! ```
//!
//! so that est = s_target + e_interf + e_artif exactly. The three ratios are
//!
//! ```text
//! SI-SDR = 10 log10(||s_target||^2 / ||est - s_target||^2)
//! SI-SIR = 10 log10(||s_target||^2 / ||e_interf||^2)
//! SI-SAR = 10 log10(||s_target + e_interf||^2 / ||e_artif||^2)
//! ```
//!
//! Exact-reconstruction denominators yield IEEE +infinity; aggregate
//! reporting excludes infinities from the mean/CI and counts them instead.

use crate::{Error, Result};

/// Orthogonal decomposition of an estimate against (clean, noise).
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
    /// Set when the noise was (numerically) linearly dependent on the clean
    /// signal and the projection fell back to span{s}.
    pub degenerate_noise: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_lengths(est: &[f64], s: &[f64], n: Option<&[f64]>) -> Result<()> {
    if est.len() != s.len() {
        return Err(Error::LengthMismatch {
            left: est.len(),
            right: s.len(),
        });
    }
    if let Some(n) = n {
        if n.len() != s.len() {
            return Err(Error::LengthMismatch {
                left: n.len(),
                right: s.len(),
            });
        }
    }
    if s.is_empty() {
        return Err(Error::Metrics("empty signals".into()));
    }
    Ok(())
}

/// Decomposes `est` into target, interference and artifact components via
/// Gram-Schmidt on {s, n}. Errors on a zero clean reference; a noise vector
/// linearly dependent on s degrades gracefully to projection onto span{s}
/// with `degenerate_noise` set.
pub fn si_decompose(est: &[f64], s: &[f64], n: &[f64]) -> Result<Decomposition> {
    check_lengths(est, s, Some(n))?;
    let s_energy = dot(s, s);
    if s_energy == 0.0 {
        return Err(Error::Metrics("clean reference is identically zero".into()));
    }
    let alpha = dot(est, s) / s_energy;
    let s_target: Vec<f64> = s.iter().map(|&v| alpha * v).collect();

    // Gram-Schmidt: remove the s-component from n
    let proj = dot(n, s) / s_energy;
    let n_orth: Vec<f64> = n.iter().zip(s).map(|(&nv, &sv)| nv - proj * sv).collect();
    let n_orth_energy = dot(&n_orth, &n_orth);
    let n_energy = dot(n, n);
    // dependence threshold relative to the original noise energy
    let degenerate_noise = n_orth_energy <= 1e-24 * n_energy.max(1e-300);

    let beta = if degenerate_noise {
        0.0
    } else {
        dot(est, &n_orth) / n_orth_energy
    };
    let e_interf: Vec<f64> = n_orth.iter().map(|&v| beta * v).collect();
    let e_artif: Vec<f64> = est
        .iter()
        .zip(&s_target)
        .zip(&e_interf)
        .map(|((&ev, &tv), &iv)| ev - tv - iv)
        .collect();
    Ok(Decomposition {
        s_target,
        e_interf,
        e_artif,
        degenerate_noise,
    })
}

fn ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

/// Scale-invariant signal-to-distortion ratio in dB.
pub fn si_sdr(est: &[f64], s: &[f64]) -> Result<f64> {
    check_lengths(est, s, None)?;
    let s_energy = dot(s, s);
    if s_energy == 0.0 {
        return Err(Error::Metrics("clean reference is identically zero".into()));
    }
    let alpha = dot(est, s) / s_energy;
    let target_energy = alpha * alpha * s_energy;
    let err_energy: f64 = est
        .iter()
        .zip(s)
        .map(|(&ev, &sv)| {
            let d = ev - alpha * sv;
            d * d
        })
        .sum();
    Ok(ratio_db(target_energy, err_energy))
}

/// Scale-invariant signal-to-interference ratio in dB.
pub fn si_sir(est: &[f64], s: &[f64], n: &[f64]) -> Result<f64> {
    let d = si_decompose(est, s, n)?;
    Ok(ratio_db(dot(&d.s_target, &d.s_target), dot(&d.e_interf, &d.e_interf)))
}

/// Scale-invariant signal-to-artifacts ratio in dB.
pub fn si_sar(est: &[f64], s: &[f64], n: &[f64]) -> Result<f64> {
    let d = si_decompose(est, s, n)?;
    let filtered: Vec<f64> = d
        .s_target
        .iter()
        .zip(&d.e_interf)
        .map(|(&a, &b)| a + b)
        .collect();
    Ok(ratio_db(dot(&filtered, &filtered), dot(&d.e_artif, &d.e_artif)))
}

/// Per-utterance metric row.
#[derive(Debug, Clone)]
pub struct UtteranceEval {
    pub id: String,
    pub si_sdr: f64,
    pub si_sir: f64,
    pub si_sar: f64,
}

/// Mean and 95% confidence interval of one metric over finite utterances.
#[derive(Debug, Clone, Copy)]
pub struct MetricSummary {
    pub mean: f64,
    /// Half-width 1.96 * SE of the mean (0 when n_finite < 2).
    pub ci95: f64,
    pub n_finite: usize,
    pub n_infinite: usize,
}

fn summarize(values: impl Iterator<Item = f64>) -> MetricSummary {
    let mut finite = Vec::new();
    let mut n_infinite = 0usize;
    for v in values {
        if v.is_finite() {
            finite.push(v);
        } else {
            n_infinite += 1;
        }
    }
    let n = finite.len();
    if n == 0 {
        return MetricSummary {
            mean: f64::NAN,
            ci95: f64::NAN,
            n_finite: 0,
            n_infinite,
        };
    }
    let mean = finite.iter().sum::<f64>() / n as f64;
    let ci95 = if n >= 2 {
        let var = finite.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        1.96 * (var / n as f64).sqrt()
    } else {
        0.0
    };
    MetricSummary {
        mean,
        ci95,
        n_finite: n,
        n_infinite,
    }
}

/// Per-utterance rows plus per-metric aggregates.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<UtteranceEval>,
    pub sdr: MetricSummary,
    pub sir: MetricSummary,
    pub sar: MetricSummary,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<UtteranceEval>) -> Self {
        let sdr = summarize(rows.iter().map(|r| r.si_sdr));
        let sir = summarize(rows.iter().map(|r| r.si_sir));
        let sar = summarize(rows.iter().map(|r| r.si_sar));
        Self {
            rows,
            sdr,
            sir,
            sar,
        }
    }
}

/// Evaluates one (estimate, clean, noisy) triple.
pub fn evaluate_utterance(id: &str, est: &[f64], clean: &[f64], noisy: &[f64]) -> Result<UtteranceEval> {
    if noisy.len() != clean.len() {
        return Err(Error::LengthMismatch {
            left: noisy.len(),
            right: clean.len(),
        });
    }
    let n: Vec<f64> = noisy.iter().zip(clean).map(|(&y, &s)| y - s).collect();
    Ok(UtteranceEval {
        id: id.to_string(),
        si_sdr: si_sdr(est, clean)?,
        si_sir: si_sir(est, clean, &n)?,
        si_sar: si_sar(est, clean, &n)?,
    })
}
