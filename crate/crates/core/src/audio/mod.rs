//! Audio clips, WAV I/O, and deterministic synthetic test material.

mod synth;
mod wav;

pub use synth::{SourceKind, SourceSpec, SynthRecipe};
pub use wav::{read_wav, write_wav, Encoding, WriteInfo};

use ndarray::Array2;

use crate::error::{Error, Result};

/// A time-domain multichannel signal. Samples are stored channel-major
/// (`[channels, num_samples]`), nominally in `[-1, 1]`, always finite.
///
/// Clips are immutable after construction and cheap to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl AudioClip {
    /// Build a clip, validating the type invariants: at least one channel,
    /// at least one sample, a positive sample rate, and no NaN/Inf.
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::parameter("sample_rate must be positive"));
        }
        let (channels, len) = samples.dim();
        if channels == 0 {
            return Err(Error::parameter("clip must have at least one channel"));
        }
        if len == 0 {
            return Err(Error::parameter("clip must have at least one sample"));
        }
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("clip contains non-finite samples"));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    /// Mono clip from a sample vector.
    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let n = samples.len();
        let arr = Array2::from_shape_vec((1, n), samples)
            .map_err(|e| Error::parameter(format!("bad mono shape: {e}")))?;
        AudioClip::new(arr, sample_rate)
    }

    /// All-zero clip of the given shape.
    pub fn zeros(channels: usize, num_samples: usize, sample_rate: u32) -> Result<Self> {
        AudioClip::new(Array2::zeros((channels, num_samples)), sample_rate)
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.num_samples() as f64 / self.sample_rate as f64
    }

    /// One channel as a contiguous slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        self.samples
            .row(c)
            .to_slice()
            .expect("channel rows are contiguous")
    }

    pub fn same_shape(&self, other: &AudioClip) -> bool {
        self.samples.dim() == other.samples.dim() && self.sample_rate == other.sample_rate
    }

    fn require_same_shape(&self, other: &AudioClip, op: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::parameter(format!(
                "{op}: shape mismatch ({}x{}@{} vs {}x{}@{})",
                self.channels(),
                self.num_samples(),
                self.sample_rate,
                other.channels(),
                other.num_samples(),
                other.sample_rate
            )));
        }
        Ok(())
    }

    /// Elementwise sum.
    pub fn add(&self, other: &AudioClip) -> Result<AudioClip> {
        self.require_same_shape(other, "add")?;
        AudioClip::new(&self.samples + &other.samples, self.sample_rate)
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &AudioClip) -> Result<AudioClip> {
        self.require_same_shape(other, "sub")?;
        AudioClip::new(&self.samples - &other.samples, self.sample_rate)
    }

    pub fn scale(&self, factor: f64) -> Result<AudioClip> {
        AudioClip::new(&self.samples * factor, self.sample_rate)
    }

    /// Global l2 norm over all channels and samples.
    pub fn l2_norm(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Sub-clip covering samples `[start, end)` on every channel.
    pub fn slice_samples(&self, start: usize, end: usize) -> Result<AudioClip> {
        if start >= end || end > self.num_samples() {
            return Err(Error::parameter(format!(
                "slice [{start}, {end}) out of range for {} samples",
                self.num_samples()
            )));
        }
        let view = self.samples.slice(ndarray::s![.., start..end]);
        AudioClip::new(view.to_owned(), self.sample_rate)
    }

    /// All samples of all channels, channel-major, as one flat vector.
    pub fn flat(&self) -> Vec<f64> {
        self.samples.iter().copied().collect()
    }
}

/// Named sources plus the mixture that is their exact elementwise sum.
#[derive(Debug, Clone)]
pub struct SourceSet {
    sources: Vec<(String, AudioClip)>,
    mixture: AudioClip,
}

/// Tolerance for the mixture-equals-sum invariant.
const MIXTURE_SUM_TOL: f64 = 1e-6;

impl SourceSet {
    /// Validate all invariants: consistent shapes/rates and
    /// `mixture == sum(sources)` within `1e-6` absolute.
    pub fn new(sources: Vec<(String, AudioClip)>, mixture: AudioClip) -> Result<Self> {
        if sources.len() < 2 {
            return Err(Error::parameter("a SourceSet needs at least 2 sources"));
        }
        for (name, clip) in &sources {
            if !clip.same_shape(&mixture) {
                return Err(Error::parameter(format!(
                    "source '{name}' does not match mixture shape/rate"
                )));
            }
        }
        let mut sum = Array2::<f64>::zeros(mixture.samples().dim());
        for (_, clip) in &sources {
            sum += clip.samples();
        }
        let max_err = (&sum - mixture.samples())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if max_err > MIXTURE_SUM_TOL {
            return Err(Error::parameter(format!(
                "mixture differs from source sum by {max_err:.3e} (> {MIXTURE_SUM_TOL:.0e})"
            )));
        }
        Ok(SourceSet { sources, mixture })
    }

    /// Build the mixture as the exact sum of the given sources.
    pub fn from_sources(sources: Vec<(String, AudioClip)>) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::parameter("no sources given"));
        }
        let mut sum = Array2::<f64>::zeros(sources[0].1.samples().dim());
        for (_, clip) in &sources {
            sum += clip.samples();
        }
        let mixture = AudioClip::new(sum, sources[0].1.sample_rate())?;
        SourceSet::new(sources, mixture)
    }

    pub fn sources(&self) -> &[(String, AudioClip)] {
        &self.sources
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn source(&self, index: usize) -> &AudioClip {
        &self.sources[index].1
    }

    pub fn source_name(&self, index: usize) -> &str {
        &self.sources[index].0
    }

    pub fn source_names(&self) -> Vec<String> {
        self.sources.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn mixture(&self) -> &AudioClip {
        &self.mixture
    }
}

/// Generate a deterministic multi-source clip set from a recipe and seed.
///
/// The same `(recipe, seed)` pair always yields the same `SourceSet`; the
/// mixture is the exact sample-wise sum of the sources.
pub fn synth_source_set(recipe: &SynthRecipe, seed: u64) -> Result<SourceSet> {
    synth::synthesize(recipe, seed)
}
