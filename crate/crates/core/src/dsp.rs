//! Differentiable STFT/ISTFT, Griffin-Lim inversion, and patch-wise norms.
//!
//! The forward transform is a windowed one-sided DFT per frame. The inverse
//! is weighted overlap-add with division by the accumulated squared window,
//! which reconstructs exactly for any config whose hop divides `n_fft`.
//! Gradients flow through these maps via their exact real-linear adjoints
//! ([`stft_adjoint`], [`istft_adjoint`]) — never via finite differences. The
//! adjoints are defined with respect to the real inner product on complex
//! entries, `sum(Re*Re + Im*Im)` over the stored one-sided bins.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::rng::StreamSeed;

/// Analysis window kind. Only Hann (periodic) is provided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
}

/// STFT analysis/synthesis parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    #[serde(default = "default_window")]
    pub window: WindowKind,
    #[serde(default = "default_center")]
    pub center: bool,
}

fn default_window() -> WindowKind {
    WindowKind::Hann
}
fn default_center() -> bool {
    true
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            n_fft: 512,
            hop: 128,
            window: WindowKind::Hann,
            center: true,
        }
    }
}

impl StftConfig {
    pub fn new(n_fft: usize, hop: usize, center: bool) -> Result<Self> {
        let cfg = StftConfig {
            n_fft,
            hop,
            window: WindowKind::Hann,
            center,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check the type invariants: power-of-two `n_fft`, `hop | n_fft`,
    /// `hop < n_fft`. A periodic Hann window then satisfies overlap-add
    /// for every admissible hop.
    pub fn validate(&self) -> Result<()> {
        if self.n_fft == 0 || !self.n_fft.is_power_of_two() {
            return Err(Error::parameter(format!(
                "n_fft must be a power of two, got {}",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.hop >= self.n_fft || self.n_fft % self.hop != 0 {
            return Err(Error::parameter(format!(
                "hop must divide n_fft and be < n_fft, got hop={} n_fft={}",
                self.hop, self.n_fft
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Periodic Hann window of length `n_fft`.
    pub fn window_values(&self) -> Array1<f64> {
        let n = self.n_fft;
        Array1::from_iter((0..n).map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos())))
    }

    fn pad(&self) -> usize {
        if self.center {
            self.n_fft / 2
        } else {
            0
        }
    }

    fn padded_len(&self, origin_len: usize) -> usize {
        origin_len + 2 * self.pad()
    }

    /// Number of analysis frames for a signal of `origin_len` samples.
    pub fn num_frames(&self, origin_len: usize) -> Result<usize> {
        let padded = self.padded_len(origin_len);
        if padded < self.n_fft {
            return Err(Error::parameter(format!(
                "clip of {origin_len} samples too short for n_fft {} without centering",
                self.n_fft
            )));
        }
        Ok(1 + (padded - self.n_fft) / self.hop)
    }

    /// Canonical signal length for a magnitude-only spectrogram of `frames`
    /// frames: the largest length with that frame count, so any originating
    /// clip embeds into it by zero extension.
    pub fn origin_len_for_frames(&self, frames: usize) -> Result<usize> {
        if frames == 0 {
            return Err(Error::parameter("frame count must be >= 1"));
        }
        let len = if self.center {
            frames * self.hop - 1
        } else {
            self.n_fft + frames * self.hop - 1
        };
        if len == 0 {
            return Err(Error::parameter("frame count yields an empty signal"));
        }
        debug_assert_eq!(self.num_frames(len).unwrap(), frames);
        Ok(len)
    }
}

/// Complex STFT frames, `[channels, frames, bins]` with `bins = n_fft/2 + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: Array3<Complex64>,
    config: StftConfig,
    origin_length: usize,
}

impl Spectrogram {
    pub fn new(frames: Array3<Complex64>, config: StftConfig, origin_length: usize) -> Result<Self> {
        config.validate()?;
        let (_, f, b) = frames.dim();
        if b != config.bins() {
            return Err(Error::parameter(format!(
                "spectrogram has {b} bins, config wants {}",
                config.bins()
            )));
        }
        let expected = config.num_frames(origin_length)?;
        if f != expected {
            return Err(Error::parameter(format!(
                "spectrogram has {f} frames, expected {expected} for {origin_length} samples"
            )));
        }
        if !frames.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::numeric("spectrogram contains non-finite entries"));
        }
        Ok(Spectrogram {
            frames,
            config,
            origin_length,
        })
    }

    pub fn frames(&self) -> &Array3<Complex64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array3<Complex64> {
        self.frames
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn origin_length(&self) -> usize {
        self.origin_length
    }

    pub fn channels(&self) -> usize {
        self.frames.dim().0
    }

    pub fn num_frames(&self) -> usize {
        self.frames.dim().1
    }

    pub fn bins(&self) -> usize {
        self.frames.dim().2
    }

    /// Elementwise magnitudes.
    pub fn magnitude(&self) -> Array3<f64> {
        self.frames.mapv(|c| c.norm())
    }
}

/// Patch-wise l2 norms of a clip, one value per patch of `patch_len` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchNorms {
    pub values: Vec<f64>,
    pub patch_len: usize,
}

// Cached FFT plans, keyed by size.
fn fft_pair(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    type Cache = Mutex<HashMap<usize, (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("fft cache poisoned");
    map.entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
        })
        .clone()
}

/// Short-time Fourier transform: windowed one-sided DFT per frame.
/// Linear in the input; zero-pads `n_fft/2` on both sides when centering.
pub fn stft(clip: &AudioClip, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let len = clip.num_samples();
    let frames = cfg.num_frames(len)?;
    let n = cfg.n_fft;
    let bins = cfg.bins();
    let window = cfg.window_values();
    let (fft, _) = fft_pair(n);
    let pad = cfg.pad();
    let padded_len = cfg.padded_len(len);

    let mut out = Array3::<Complex64>::zeros((clip.channels(), frames, bins));
    let mut padded = vec![0.0f64; padded_len];
    let mut buf = vec![Complex64::default(); n];
    for c in 0..clip.channels() {
        padded.iter_mut().for_each(|v| *v = 0.0);
        padded[pad..pad + len].copy_from_slice(clip.channel(c));
        for m in 0..frames {
            let start = m * cfg.hop;
            for j in 0..n {
                buf[j] = Complex64::new(padded[start + j] * window[j], 0.0);
            }
            fft.process(&mut buf);
            for k in 0..bins {
                out[[c, m, k]] = buf[k];
            }
        }
    }
    Spectrogram::new(out, *cfg, len)
}

// Shared overlap-add normalization: sum of squared window values at every
// padded position, given the frame layout.
fn window_square_sum(cfg: &StftConfig, frames: usize, padded_len: usize) -> Vec<f64> {
    let window = cfg.window_values();
    let mut wsum = vec![0.0f64; padded_len];
    for m in 0..frames {
        let start = m * cfg.hop;
        for j in 0..cfg.n_fft {
            wsum[start + j] += window[j] * window[j];
        }
    }
    wsum
}

const WSUM_EPS: f64 = 1e-12;

/// Inverse STFT by weighted overlap-add. For any valid config this is an
/// exact left inverse of [`stft`] on the original sample range.
pub fn istft(spec: &Spectrogram, cfg: &StftConfig) -> Result<AudioClip> {
    if spec.config() != cfg {
        return Err(Error::parameter(
            "istft config does not match the spectrogram's config",
        ));
    }
    let (channels, frames, bins) = spec.frames.dim();
    let n = cfg.n_fft;
    let len = spec.origin_length;
    let pad = cfg.pad();
    let padded_len = cfg.padded_len(len);
    let window = cfg.window_values();
    let (_, ifft) = fft_pair(n);
    let wsum = window_square_sum(cfg, frames, padded_len);

    let mut out = Array2::<f64>::zeros((channels, len));
    let mut acc = vec![0.0f64; padded_len];
    let mut buf = vec![Complex64::default(); n];
    for c in 0..channels {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for m in 0..frames {
            // Hermitian extension of the one-sided spectrum.
            for k in 0..bins {
                buf[k] = spec.frames[[c, m, k]];
            }
            for k in 1..n / 2 {
                buf[n - k] = spec.frames[[c, m, k]].conj();
            }
            ifft.process(&mut buf);
            let start = m * cfg.hop;
            let scale = 1.0 / n as f64;
            for j in 0..n {
                acc[start + j] += buf[j].re * scale * window[j];
            }
        }
        for i in 0..len {
            let p = pad + i;
            out[[c, i]] = if wsum[p] > WSUM_EPS { acc[p] / wsum[p] } else { 0.0 };
        }
    }
    AudioClip::new(out, spec_rate_hint(spec))
}

// Spectrograms do not carry a sample rate; callers that need one re-wrap the
// samples. Use a 1 Hz placeholder only for rate-agnostic plumbing.
fn spec_rate_hint(_spec: &Spectrogram) -> u32 {
    1
}

/// Inverse STFT that restores the sample rate of the originating clip.
pub fn istft_with_rate(spec: &Spectrogram, cfg: &StftConfig, sample_rate: u32) -> Result<AudioClip> {
    let clip = istft(spec, cfg)?;
    AudioClip::new(clip.into_samples(), sample_rate)
}

/// Exact adjoint of [`stft`] as a real-linear map: for every time signal `u`
/// and spectrogram `v`, `inner(stft(u), v) == inner(u, stft_adjoint(v))`.
pub fn stft_adjoint(cotangent: &Spectrogram, cfg: &StftConfig, length: usize) -> Result<AudioClip> {
    if cotangent.config() != cfg {
        return Err(Error::parameter(
            "stft_adjoint config does not match the cotangent's config",
        ));
    }
    if cotangent.origin_length != length {
        return Err(Error::parameter(format!(
            "stft_adjoint length {length} does not match cotangent origin length {}",
            cotangent.origin_length
        )));
    }
    let (channels, frames, bins) = cotangent.frames.dim();
    let n = cfg.n_fft;
    let pad = cfg.pad();
    let padded_len = cfg.padded_len(length);
    let window = cfg.window_values();
    let (_, ifft) = fft_pair(n);

    let mut out = Array2::<f64>::zeros((channels, length));
    let mut acc = vec![0.0f64; padded_len];
    let mut buf = vec![Complex64::default(); n];
    for c in 0..channels {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for m in 0..frames {
            // Adjoint of the one-sided forward DFT: embed the cotangent at
            // bins 0..=n/2, zero elsewhere, unnormalized inverse transform,
            // then the real part. No Hermitian doubling, no 1/n.
            for k in 0..bins {
                buf[k] = cotangent.frames[[c, m, k]];
            }
            for k in bins..n {
                buf[k] = Complex64::default();
            }
            ifft.process(&mut buf);
            let start = m * cfg.hop;
            for j in 0..n {
                acc[start + j] += buf[j].re * window[j];
            }
        }
        for i in 0..length {
            out[[c, i]] = acc[pad + i];
        }
    }
    AudioClip::new(out, 1)
}

/// Exact adjoint of [`istft`] as a real-linear map: for every spectrogram `v`
/// and time signal `g`, `inner(istft(v), g) == inner(v, istft_adjoint(g))`.
///
/// Used to backpropagate through the synthesis path of frequency-domain
/// models and frequency-domain perturbation crafting.
pub fn istft_adjoint(cotangent: &AudioClip, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    let len = cotangent.num_samples();
    let frames = cfg.num_frames(len)?;
    let n = cfg.n_fft;
    let bins = cfg.bins();
    let pad = cfg.pad();
    let padded_len = cfg.padded_len(len);
    let window = cfg.window_values();
    let (fft, _) = fft_pair(n);
    let wsum = window_square_sum(cfg, frames, padded_len);

    let mut out = Array3::<Complex64>::zeros((cotangent.channels(), frames, bins));
    let mut divided = vec![0.0f64; padded_len];
    let mut buf = vec![Complex64::default(); n];
    let inv_n = 1.0 / n as f64;
    for c in 0..cotangent.channels() {
        divided.iter_mut().for_each(|v| *v = 0.0);
        let g = cotangent.channel(c);
        for i in 0..len {
            let p = pad + i;
            divided[p] = if wsum[p] > WSUM_EPS { g[i] / wsum[p] } else { 0.0 };
        }
        for m in 0..frames {
            let start = m * cfg.hop;
            for j in 0..n {
                buf[j] = Complex64::new(divided[start + j] * window[j], 0.0);
            }
            fft.process(&mut buf);
            for k in 0..bins {
                // interior bins appear twice in the Hermitian extension
                let mult = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                out[[c, m, k]] = buf[k] * (mult * inv_n);
            }
        }
    }
    Spectrogram::new(out, *cfg, len)
}

/// Iterative phase reconstruction from an STFT magnitude, starting from the
/// given initial phase (radians). Returns the signal and the per-iteration
/// spectral-convergence error `|| |stft(x)| - magnitude ||_F / ||magnitude||_F`.
pub fn griffin_lim_from_phase(
    magnitude: &Array3<f64>,
    phase: &Array3<f64>,
    cfg: &StftConfig,
    iters: usize,
    sample_rate: u32,
) -> Result<(AudioClip, Vec<f64>)> {
    cfg.validate()?;
    if iters == 0 {
        return Err(Error::parameter("griffin_lim needs iters >= 1"));
    }
    if magnitude.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::parameter("magnitude must be finite and >= 0"));
    }
    if magnitude.dim() != phase.dim() {
        return Err(Error::parameter("magnitude/phase shape mismatch"));
    }
    let (_, frames, bins) = magnitude.dim();
    if bins != cfg.bins() {
        return Err(Error::parameter(format!(
            "magnitude has {bins} bins, config wants {}",
            cfg.bins()
        )));
    }
    let origin_len = cfg.origin_len_for_frames(frames)?;
    let mag_norm = magnitude.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut estimate = Array3::<Complex64>::zeros(magnitude.dim());
    ndarray::Zip::from(&mut estimate)
        .and(magnitude)
        .and(phase)
        .for_each(|e, &a, &p| *e = Complex64::from_polar(a, p));

    let mut trace = Vec::with_capacity(iters);
    const TINY: f64 = 1e-300;
    for _ in 0..iters {
        let spec = Spectrogram::new(estimate, *cfg, origin_len)?;
        let x = istft_with_rate(&spec, cfg, sample_rate)?;
        let rebuilt = stft(&x, cfg)?;
        let err = if mag_norm > 0.0 {
            let num = rebuilt
                .frames()
                .iter()
                .zip(magnitude.iter())
                .map(|(r, &a)| {
                    let d = r.norm() - a;
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            num / mag_norm
        } else {
            0.0
        };
        trace.push(err);
        let mut next = rebuilt.into_frames();
        ndarray::Zip::from(&mut next).and(magnitude).for_each(|r, &a| {
            let norm = r.norm();
            *r = if norm > TINY {
                *r * (a / norm)
            } else {
                Complex64::new(a, 0.0)
            };
        });
        estimate = next;
    }
    let spec = Spectrogram::new(estimate, *cfg, origin_len)?;
    let out = istft_with_rate(&spec, cfg, sample_rate)?;
    Ok((out, trace))
}

/// Griffin-Lim with a seed-deterministic uniform random initial phase.
pub fn griffin_lim(
    magnitude: &Array3<f64>,
    cfg: &StftConfig,
    iters: usize,
    seed: u64,
    sample_rate: u32,
) -> Result<AudioClip> {
    Ok(griffin_lim_with_trace(magnitude, cfg, iters, seed, sample_rate)?.0)
}

/// As [`griffin_lim`], also returning the spectral-convergence error trace.
pub fn griffin_lim_with_trace(
    magnitude: &Array3<f64>,
    cfg: &StftConfig,
    iters: usize,
    seed: u64,
    sample_rate: u32,
) -> Result<(AudioClip, Vec<f64>)> {
    let mut rng = StreamSeed::new(seed).derive("griffin-lim-phase").rng();
    let mut phase = Array3::<f64>::zeros(magnitude.dim());
    for v in phase.iter_mut() {
        *v = rand::Rng::gen_range(&mut rng, -PI..PI);
    }
    griffin_lim_from_phase(magnitude, &phase, cfg, iters, sample_rate)
}

/// Patch-wise l2 norms with window length `l` samples: `values[n]` is the l2
/// norm over all channels of samples `[n*l, (n+1)*l)`; the final partial
/// patch is kept.
pub fn patch_l2_norms(clip: &AudioClip, l: usize) -> Result<PatchNorms> {
    if l == 0 {
        return Err(Error::parameter("patch length must be >= 1"));
    }
    let len = clip.num_samples();
    let n_patches = len.div_ceil(l);
    let mut values = vec![0.0f64; n_patches];
    for c in 0..clip.channels() {
        let row = clip.channel(c);
        for (n, v) in values.iter_mut().enumerate() {
            let start = n * l;
            let end = ((n + 1) * l).min(len);
            *v += row[start..end].iter().map(|x| x * x).sum::<f64>();
        }
    }
    for v in values.iter_mut() {
        *v = v.sqrt();
    }
    Ok(PatchNorms {
        values,
        patch_len: l,
    })
}

/// Write dB magnitudes (`20*log10(|.| + 1e-10)`) as one CSV grid per channel:
/// row = frame, column = bin. Returns the written paths.
pub fn export_magnitude_csv(
    spec: &Spectrogram,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for c in 0..spec.channels() {
        let path = dir.join(format!("{stem}_ch{c}.csv"));
        let mut w = BufWriter::new(File::create(&path)?);
        for m in 0..spec.num_frames() {
            let mut row = String::new();
            for k in 0..spec.bins() {
                if k > 0 {
                    row.push(',');
                }
                let db = 20.0 * (spec.frames[[c, m, k]].norm() + 1e-10).log10();
                row.push_str(&format!("{db:.4}"));
            }
            writeln!(w, "{row}")?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}
