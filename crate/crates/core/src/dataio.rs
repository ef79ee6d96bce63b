//! Audio file I/O, paired-dataset ingestion, spectrogram cropping and the
//! synthetic toy-data generators used by the oracle test suites.
//!
//! WAV support is deliberately narrow: mono RIFF/WAVE, 16-bit PCM or 32-bit
//! IEEE float. PCM samples are scaled by 1/32768; writing always emits 32-bit
//! float, for which read-after-write is bit exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{derive_seed, Error, Result, SpecGrid};

/// One clean/noisy utterance pair; the clean side is absent at inference.
#[derive(Debug, Clone)]
pub struct UtterancePair {
    pub id: String,
    pub clean: Option<Vec<f64>>,
    pub noisy: Vec<f64>,
    pub sample_rate: u32,
}

fn wav_err(field: &str, message: impl Into<String>) -> Error {
    Error::WavFormat {
        field: field.to_string(),
        message: message.into(),
    }
}

fn read_u16(data: &[u8], pos: usize, field: &str) -> Result<u16> {
    data.get(pos..pos + 2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .ok_or_else(|| wav_err(field, "truncated header"))
}

fn read_u32(data: &[u8], pos: usize, field: &str) -> Result<u32> {
    data.get(pos..pos + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| wav_err(field, "truncated header"))
}

/// Decoded mono waveform with samples in [-1, 1].
#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// Reads a mono 16-bit PCM or 32-bit float WAV file.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    if data.len() < 12 || &data[0..4] != b"RIFF" || &data[8..12] != b"WAVE" {
        return Err(wav_err("riff", "not a RIFF/WAVE file"));
    }

    let mut pos = 12usize;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut payload: Option<&[u8]> = None;
    while pos + 8 <= data.len() {
        let id = &data[pos..pos + 4];
        let size = read_u32(&data, pos + 4, "chunk")? as usize;
        let body_start = pos + 8;
        let body_end = (body_start + size).min(data.len());
        match id {
            b"fmt " => {
                let format = read_u16(&data, body_start, "format")?;
                let channels = read_u16(&data, body_start + 2, "channels")?;
                let rate = read_u32(&data, body_start + 4, "sample_rate")?;
                let bits = read_u16(&data, body_start + 14, "bits_per_sample")?;
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => payload = Some(&data[body_start..body_end]),
            _ => {}
        }
        // chunks are word-aligned
        pos = body_start + size + (size & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| wav_err("fmt", "missing fmt chunk"))?;
    let payload = payload.ok_or_else(|| wav_err("data", "missing data chunk"))?;
    if channels != 1 {
        return Err(wav_err(
            "channels",
            format!("only mono is supported, got {channels} channels"),
        ));
    }
    let samples = match (format, bits) {
        (1, 16) => payload
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
            .collect(),
        (3, 32) => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
        _ => {
            return Err(wav_err(
                "format",
                format!("unsupported encoding (format tag {format}, {bits} bits); expected PCM-16 or float-32"),
            ))
        }
    };
    Ok(Waveform {
        samples,
        sample_rate: rate,
    })
}

/// Writes a mono 32-bit float WAV file. Reading it back is bit exact for
/// samples that are exactly representable in f32 (which includes everything
/// previously read by [`read_wav`]).
pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let data_len = (samples.len() * 4) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 4);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&3u16.to_le_bytes()); // IEEE float
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 4).to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    out.extend_from_slice(&32u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Result of pairing two directories: matched pairs plus diagnostics for
/// everything skipped.
#[derive(Debug)]
pub struct LoadReport {
    pub pairs: Vec<UtterancePair>,
    pub warnings: Vec<String>,
}

fn wav_names(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut map = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case("wav"))
            == Some(true)
        {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                map.insert(name.to_string(), path.clone());
            }
        }
    }
    Ok(map)
}

/// Pairs clean and noisy WAV files by identical filename. Orphans and
/// invalid pairs are reported in the warnings and skipped; an empty
/// intersection is an error.
pub fn load_pairs(clean_dir: &Path, noisy_dir: &Path) -> Result<LoadReport> {
    let clean = wav_names(clean_dir)?;
    let noisy = wav_names(noisy_dir)?;
    let mut warnings = Vec::new();
    for name in clean.keys() {
        if !noisy.contains_key(name) {
            warnings.push(format!("{name}: no noisy counterpart, skipped"));
        }
    }
    for name in noisy.keys() {
        if !clean.contains_key(name) {
            warnings.push(format!("{name}: no clean counterpart, skipped"));
        }
    }

    let mut pairs = Vec::new();
    for (name, clean_path) in &clean {
        let Some(noisy_path) = noisy.get(name) else {
            continue;
        };
        let c = read_wav(clean_path)?;
        let n = read_wav(noisy_path)?;
        if c.sample_rate != n.sample_rate {
            warnings.push(format!(
                "{name}: sample rate mismatch ({} vs {}), rejected",
                c.sample_rate, n.sample_rate
            ));
            continue;
        }
        if c.samples.len() != n.samples.len() {
            warnings.push(format!(
                "{name}: length mismatch ({} vs {} samples), rejected",
                c.samples.len(),
                n.samples.len()
            ));
            continue;
        }
        pairs.push(UtterancePair {
            id: name.trim_end_matches(".wav").trim_end_matches(".WAV").to_string(),
            clean: Some(c.samples),
            noisy: n.samples,
            sample_rate: c.sample_rate,
        });
    }
    if pairs.is_empty() {
        return Err(Error::Dataset(format!(
            "no usable pairs between {} and {}",
            clean_dir.display(),
            noisy_dir.display()
        )));
    }
    Ok(LoadReport { pairs, warnings })
}

/// Draws the crop start for a spectrogram of `n_frames` frames; 0 when the
/// grid is not longer than the target.
pub fn crop_start(n_frames: usize, target: usize, rng: &mut impl Rng) -> usize {
    if n_frames <= target {
        0
    } else {
        rng.random_range(0..=n_frames - target)
    }
}

/// Crops to `target` frames starting at `start`, or zero-pads frames on the
/// right when the grid is shorter than the target.
pub fn crop_or_pad_at(spec: &SpecGrid, target: usize, start: usize) -> SpecGrid {
    assert!(target >= 1, "target frame count must be >= 1");
    let t = spec.n_frames();
    if t == target && start == 0 {
        return spec.clone();
    }
    SpecGrid::from_fn(spec.n_freq(), target, |fi, ti| {
        let src = start + ti;
        if src < t {
            spec.get(fi, src)
        } else {
            Complex64::ZERO
        }
    })
}

/// Random crop (or right zero-pad) to `target` frames.
pub fn crop_or_pad(spec: &SpecGrid, target: usize, rng: &mut impl Rng) -> SpecGrid {
    let start = crop_start(spec.n_frames(), target, rng);
    crop_or_pad_at(spec, target, start)
}

/// Crops a (clean, noisy) pair with one shared random start.
pub fn crop_or_pad_pair(
    a: &SpecGrid,
    b: &SpecGrid,
    target: usize,
    rng: &mut impl Rng,
) -> Result<(SpecGrid, SpecGrid)> {
    a.check_same_shape(b)?;
    let start = crop_start(a.n_frames(), target, rng);
    Ok((
        crop_or_pad_at(a, target, start),
        crop_or_pad_at(b, target, start),
    ))
}

/// How the noisy side of a synthetic pair is derived from the clean side.
#[derive(Debug, Clone, Copy)]
pub enum NoiseLaw {
    /// y = x0 + delta, the same complex offset in every bin.
    Offset(Complex64),
    /// y = x0 + independent N(0, std^2) per real coordinate.
    Gaussian { std: f64 },
    /// y is this constant everywhere, independent of x0.
    FixedNoisy(Complex64),
}

/// Generates `n` synthetic spectrogram pairs with x0 per real coordinate
/// drawn from N(mean, var) and y derived per the chosen law. Feeds the
/// analytic Gaussian oracles.
pub fn toy_gaussian_pairs(
    n: usize,
    n_freq: usize,
    n_frames: usize,
    mean: f64,
    var: f64,
    law: NoiseLaw,
    seed: u64,
) -> Result<Vec<(SpecGrid, SpecGrid)>> {
    if !(var >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "prior variance must be >= 0, got {var}"
        )));
    }
    let std = var.sqrt();
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1, i as u64));
            let x0 = SpecGrid::from_fn(n_freq, n_frames, |_, _| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(mean + std * re, mean + std * im)
            });
            let y = match law {
                NoiseLaw::Offset(delta) => x0.map(|c| c + delta),
                NoiseLaw::Gaussian { std } => x0.map(|c| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    c + Complex64::new(std * re, std * im)
                }),
                NoiseLaw::FixedNoisy(value) => {
                    SpecGrid::constant(x0.n_freq(), x0.n_frames(), value)
                }
            };
            Ok((x0, y))
        })
        .collect()
}
