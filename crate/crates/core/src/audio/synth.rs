//! Deterministic synthetic multi-source material.
//!
//! Desk-scale stand-in for a real stem dataset: a recipe names a few sources
//! with generator kinds loosely modelled on vocals (harmonic chirp), bass
//! (low sine), drums (pulsed filtered noise), and accompaniment (broadband
//! noise). Everything is a pure function of `(recipe, seed)`.

use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, SourceSet};
use crate::error::{Error, Result};
use crate::rng::StreamSeed;

/// Generator kind for one synthetic source.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceKind {
    /// "Vocals-like": a stack of harmonics on a frequency glide.
    HarmonicChirp {
        #[serde(default = "default_chirp_f0")]
        f0_hz: f64,
        #[serde(default = "default_chirp_f1")]
        f1_hz: f64,
        #[serde(default = "default_partials")]
        partials: usize,
    },
    /// "Bass-like": a single low-frequency sine.
    LowSine {
        #[serde(default = "default_bass_freq")]
        freq_hz: f64,
    },
    /// "Drums-like": one-pole filtered noise gated by a periodic
    /// percussive envelope.
    FilteredNoise {
        #[serde(default = "default_pulse_hz")]
        pulse_hz: f64,
        #[serde(default = "default_noise_smooth")]
        smoothing: f64,
    },
    /// "Other-like": sustained low-passed broadband noise.
    Broadband {
        #[serde(default = "default_noise_smooth")]
        smoothing: f64,
    },
}

fn default_chirp_f0() -> f64 {
    600.0
}
fn default_chirp_f1() -> f64 {
    1400.0
}
fn default_partials() -> usize {
    3
}
fn default_bass_freq() -> f64 {
    80.0
}
fn default_pulse_hz() -> f64 {
    2.0
}
fn default_noise_smooth() -> f64 {
    0.9
}

/// One named source in a recipe.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SourceSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: SourceKind,
    /// Peak amplitude of this source in the mix.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_amplitude() -> f64 {
    0.25
}

/// Recipe for [`crate::audio::synth_source_set`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthRecipe {
    pub sources: Vec<SourceSpec>,
    pub duration_s: f64,
    pub sample_rate: u32,
    /// Silent region at the start of every source, included in `duration_s`.
    #[serde(default)]
    pub leading_silence_s: f64,
    #[serde(default = "default_channels")]
    pub channels: usize,
}

fn default_channels() -> usize {
    1
}

impl SynthRecipe {
    /// Two-source (vocals-like + bass-like) mono recipe, handy for tests.
    pub fn two_source_default(duration_s: f64, sample_rate: u32) -> Self {
        SynthRecipe {
            sources: vec![
                SourceSpec {
                    name: "vocals".into(),
                    kind: SourceKind::HarmonicChirp {
                        f0_hz: default_chirp_f0(),
                        f1_hz: default_chirp_f1(),
                        partials: default_partials(),
                    },
                    amplitude: default_amplitude(),
                },
                SourceSpec {
                    name: "bass".into(),
                    kind: SourceKind::LowSine {
                        freq_hz: default_bass_freq(),
                    },
                    amplitude: default_amplitude(),
                },
            ],
            duration_s,
            sample_rate,
            leading_silence_s: 0.0,
            channels: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.duration_s <= 0.0 {
            return Err(Error::parameter("duration_s must be positive"));
        }
        if self.sources.len() < 2 {
            return Err(Error::parameter("recipe must name at least 2 sources"));
        }
        if self.sample_rate == 0 {
            return Err(Error::parameter("sample_rate must be positive"));
        }
        if self.channels == 0 {
            return Err(Error::parameter("channels must be >= 1"));
        }
        if self.leading_silence_s < 0.0 || self.leading_silence_s >= self.duration_s {
            return Err(Error::parameter(
                "leading_silence_s must be in [0, duration_s)",
            ));
        }
        Ok(())
    }
}

/// 10 ms raised-cosine fade at both edges of the active region, to avoid
/// clicks at the silence boundary.
fn fade_envelope(active_len: usize, sample_rate: u32) -> impl Fn(usize) -> f64 {
    let ramp = ((sample_rate as f64 * 0.01) as usize).min(active_len / 2).max(1);
    move |i: usize| {
        if i < ramp {
            0.5 * (1.0 - (PI * i as f64 / ramp as f64).cos())
        } else if i + ramp >= active_len {
            let j = active_len - 1 - i;
            0.5 * (1.0 - (PI * j as f64 / ramp as f64).cos())
        } else {
            1.0
        }
    }
}

fn gen_channel(
    kind: &SourceKind,
    amplitude: f64,
    active_len: usize,
    sample_rate: u32,
    seed: StreamSeed,
) -> Vec<f64> {
    let sr = sample_rate as f64;
    let mut rng = seed.rng();
    let fade = fade_envelope(active_len, sample_rate);
    let mut out = vec![0.0f64; active_len];
    match kind {
        SourceKind::HarmonicChirp { f0_hz, f1_hz, partials } => {
            let partials = (*partials).max(1);
            let duration = active_len as f64 / sr;
            let phases: Vec<f64> = (0..partials)
                .map(|_| rand::Rng::gen_range(&mut rng, 0.0..2.0 * PI))
                .collect();
            for (i, v) in out.iter_mut().enumerate() {
                let t = i as f64 / sr;
                // linear glide f0 -> f1, integrated to phase
                let phase = 2.0 * PI * (f0_hz * t + (f1_hz - f0_hz) * t * t / (2.0 * duration));
                let mut s = 0.0;
                for (p, ph) in phases.iter().enumerate() {
                    let k = (p + 1) as f64;
                    s += (k * phase + ph).sin() / k;
                }
                *v = s;
            }
        }
        SourceKind::LowSine { freq_hz } => {
            let phase0 = rand::Rng::gen_range(&mut rng, 0.0..2.0 * PI);
            for (i, v) in out.iter_mut().enumerate() {
                let t = i as f64 / sr;
                *v = (2.0 * PI * freq_hz * t + phase0).sin();
            }
        }
        SourceKind::FilteredNoise { pulse_hz, smoothing } => {
            let a = smoothing.clamp(0.0, 0.9999);
            let period = (sr / pulse_hz.max(1e-3)).max(1.0);
            let decay = 12.0; // envelope decay rate within each pulse period
            let mut state = 0.0;
            for (i, v) in out.iter_mut().enumerate() {
                let white: f64 = rand::Rng::gen_range(&mut rng, -1.0..1.0);
                state = a * state + (1.0 - a) * white;
                let pos = (i as f64 % period) / period;
                *v = state * (-decay * pos).exp();
            }
        }
        SourceKind::Broadband { smoothing } => {
            let a = smoothing.clamp(0.0, 0.9999);
            let mut state = 0.0;
            for v in out.iter_mut() {
                let white: f64 = rand::Rng::gen_range(&mut rng, -1.0..1.0);
                state = a * state + (1.0 - a) * white;
                *v = state;
            }
        }
    }
    // normalize peak to the requested amplitude, then fade edges
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
    for (i, v) in out.iter_mut().enumerate() {
        *v *= scale * fade(i);
    }
    out
}

pub(super) fn synthesize(recipe: &SynthRecipe, seed: u64) -> Result<SourceSet> {
    recipe.validate()?;
    let sr = recipe.sample_rate;
    let total = (recipe.duration_s * sr as f64).round() as usize;
    let silence = (recipe.leading_silence_s * sr as f64).round() as usize;
    if total == 0 {
        return Err(Error::parameter("duration rounds to zero samples"));
    }
    let active = total - silence;
    let root = StreamSeed::new(seed);

    let mut sources = Vec::with_capacity(recipe.sources.len());
    for (si, spec) in recipe.sources.iter().enumerate() {
        let mut samples = Array2::<f64>::zeros((recipe.channels, total));
        for c in 0..recipe.channels {
            let stream = root
                .derive_indexed("synth-source", si)
                .derive_indexed("channel", c);
            let body = gen_channel(&spec.kind, spec.amplitude, active, sr, stream);
            samples
                .row_mut(c)
                .as_slice_mut()
                .expect("row is contiguous")[silence..]
                .copy_from_slice(&body);
        }
        sources.push((spec.name.clone(), AudioClip::new(samples, sr)?));
    }
    SourceSet::from_sources(sources)
}
