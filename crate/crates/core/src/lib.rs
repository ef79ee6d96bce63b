//! Score-based generative speech enhancement in the complex STFT domain.
//!
//! The toolkit is built around a mean-reverting diffusion process whose drift
//! pulls a clean spectrogram towards its noisy counterpart while an
//! exponentially growing diffusion term injects Gaussian noise. Because the
//! drift is affine the perturbation kernel is Gaussian with closed-form
//! moments, which gives us analytic score oracles to verify everything
//! against: the Euler-Maruyama simulator, the predictor-corrector sampler,
//! the denoising score-matching loss, and the trained complex U-Net.
//!
//! Modules:
//! - [`grid`]: complex spectrogram state, stored as (re, im) coordinate pairs
//! - [`sde`]: forward/reverse SDE, perturbation kernel, analytic scores,
//!   Euler-Maruyama oracle
//! - [`sampler`]: prior sampling and the predictor-corrector reverse loop
//! - [`scorenet`]: trainable complex-valued U-Net score model
//! - [`trainer`]: denoising score-matching loss, Adam, EMA, training loop
//! - [`dsp`]: STFT/iSTFT and the amplitude compression transform pair
//! - [`metrics`]: SI-SDR / SI-SIR / SI-SAR with aggregate reporting
//! - [`dataio`]: WAV I/O, paired datasets, cropping, synthetic toy data

pub mod dataio;
pub mod dsp;
pub mod grid;
pub mod metrics;
pub mod sampler;
pub mod scorenet;
pub mod sde;
pub mod trainer;

pub use grid::SpecGrid;
pub use sde::SdeParams;

/// Errors shared across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("sampler diverged at step {step} (t = {t:.6}): max |coordinate| = {max_abs:.3e}")]
    Divergence { step: usize, t: f64, max_abs: f64 },
    #[error("non-finite activations in layer `{layer}`")]
    NonFiniteActivation { layer: String },
    #[error("length mismatch: {left} vs {right} samples")]
    LengthMismatch { left: usize, right: usize },
    #[error("normalization error: {0}")]
    Normalization(String),
    #[error("WAV format error in `{field}`: {message}")]
    WavFormat { field: String, message: String },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("metrics error: {0}")]
    Metrics(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged: {0}")]
    TrainingDiverged(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Derives an independent per-item seed from a master seed, a stream tag and
/// an item index (SplitMix64 finalizer over the mixed words).
///
/// Used everywhere a master seed fans out to parallel work items so that the
/// result never depends on scheduling order.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
