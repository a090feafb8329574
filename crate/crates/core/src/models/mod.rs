//! Differentiable separation models.
//!
//! Two toy architectures mirror the frequency-vs-time split of full-scale
//! separators:
//!
//! - `mask_freq` — a per-frame two-layer net over magnitude bins (hidden 64,
//!   tanh) emitting per-source sigmoid masks applied to the complex mixture
//!   STFT, then inverse-transformed;
//! - `conv_time` — three same-padded 1-D conv layers (16 ch / kernel 15 /
//!   tanh, twice, then a linear layer with one output channel per source),
//!   applied to each audio channel independently.
//!
//! Both have hand-derived backward passes. `input_gradient` is the exact
//! vector-Jacobian product of the forward map and is checked against central
//! finite differences in the acceptance suite. Weights always hold values
//! that are exactly representable in `f32`, so weight files round-trip
//! bit-exactly; all arithmetic runs in `f64`.

mod conv_time;
mod io;
mod mask_freq;
mod nn;
mod train;

pub use train::fit_toy;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::rng::StreamSeed;

pub(crate) const HIDDEN: usize = 64;
pub(crate) const CONV_CHANNELS: usize = 16;
pub(crate) const KERNEL: usize = 15;

/// Built-in architecture identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureId {
    MaskFreq,
    ConvTime,
}

impl std::fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ArchitectureId::MaskFreq => write!(f, "mask_freq"),
            ArchitectureId::ConvTime => write!(f, "conv_time"),
        }
    }
}

impl std::str::FromStr for ArchitectureId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask_freq" => Ok(ArchitectureId::MaskFreq),
            "conv_time" => Ok(ArchitectureId::ConvTime),
            other => Err(Error::parameter(format!("unknown architecture '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct MaskFreqWeights {
    /// [HIDDEN, bins]
    pub enc_w: Array2<f64>,
    pub enc_b: Array1<f64>,
    /// [sources * bins, HIDDEN]
    pub mask_w: Array2<f64>,
    pub mask_b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvLayer {
    /// [out, in, KERNEL]
    pub w: Array3<f64>,
    pub b: Array1<f64>,
    pub tanh: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvTimeWeights {
    pub layers: Vec<ConvLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum ModelKind {
    MaskFreq(MaskFreqWeights),
    ConvTime(ConvTimeWeights),
}

/// Seed bookkeeping carried in the weight-file header.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    pub init_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<String>,
}

/// A differentiable separation model: a forward map from a mixture to one
/// estimate per source, plus its input-gradient (vector-Jacobian) contract.
///
/// Immutable after construction; `forward` and `input_gradient` are reentrant
/// and safe to call from many threads on the same model.
#[derive(Debug, Clone)]
pub struct SeparationModel {
    pub(crate) kind: ModelKind,
    num_sources: usize,
    source_names: Vec<String>,
    stft_cfg: StftConfig,
    provenance: Provenance,
}

/// Input for [`SeparationModel::input_gradient`]: the point to differentiate
/// at, one AudioClip-shaped cotangent per source, and the source whose output
/// Jacobian is contracted. Only `cotangent[target_source]` participates.
#[derive(Debug, Clone)]
pub struct GradientRequest {
    pub input: AudioClip,
    pub cotangent: Vec<AudioClip>,
    pub target_source: usize,
}

impl GradientRequest {
    /// Request with the given cotangent on `target_source` and (implicitly)
    /// zero on every other source.
    pub fn for_target(input: AudioClip, target_source: usize, cotangent: AudioClip) -> Self {
        let mut slots = Vec::new();
        for _ in 0..target_source {
            slots.push(
                AudioClip::zeros(input.channels(), input.num_samples(), input.sample_rate())
                    .expect("zero clip"),
            );
        }
        slots.push(cotangent);
        GradientRequest {
            input,
            cotangent: slots,
            target_source,
        }
    }
}

// Round to f32 precision so serialized weights are lossless.
pub(crate) fn quantize_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn init_tensor(shape: &[usize], fan_in: usize, seed: StreamSeed) -> Vec<f64> {
    let s = 1.0 / (fan_in as f64).sqrt();
    let mut rng = seed.rng();
    let n: usize = shape.iter().product();
    (0..n)
        .map(|_| quantize_f32(rand::Rng::gen_range(&mut rng, -s..s)))
        .collect()
}

impl SeparationModel {
    /// Deterministically initialize a model: same `(arch, num_sources, seed)`
    /// always yields identical weights.
    pub fn init(arch: ArchitectureId, num_sources: usize, seed: u64) -> Result<Self> {
        Self::init_with_stft(arch, num_sources, seed, StftConfig::default())
    }

    /// As [`SeparationModel::init`] with an explicit STFT config (used by the
    /// `mask_freq` architecture and as the default frequency-domain crafting
    /// grid for any model).
    pub fn init_with_stft(
        arch: ArchitectureId,
        num_sources: usize,
        seed: u64,
        stft_cfg: StftConfig,
    ) -> Result<Self> {
        if num_sources == 0 {
            return Err(Error::parameter("num_sources must be >= 1"));
        }
        stft_cfg.validate()?;
        let root = StreamSeed::new(seed).derive("model-init");
        let kind = match arch {
            ArchitectureId::MaskFreq => {
                let bins = stft_cfg.bins();
                let enc_w = Array2::from_shape_vec(
                    (HIDDEN, bins),
                    init_tensor(&[HIDDEN, bins], bins, root.derive("enc_w")),
                )
                .expect("shape");
                let enc_b = Array1::from_vec(init_tensor(&[HIDDEN], bins, root.derive("enc_b")));
                let mask_w = Array2::from_shape_vec(
                    (num_sources * bins, HIDDEN),
                    init_tensor(&[num_sources * bins, HIDDEN], HIDDEN, root.derive("mask_w")),
                )
                .expect("shape");
                let mask_b = Array1::from_vec(init_tensor(
                    &[num_sources * bins],
                    HIDDEN,
                    root.derive("mask_b"),
                ));
                ModelKind::MaskFreq(MaskFreqWeights {
                    enc_w,
                    enc_b,
                    mask_w,
                    mask_b,
                })
            }
            ArchitectureId::ConvTime => {
                let dims = [
                    (CONV_CHANNELS, 1usize, true),
                    (CONV_CHANNELS, CONV_CHANNELS, true),
                    (num_sources, CONV_CHANNELS, false),
                ];
                let mut layers = Vec::with_capacity(dims.len());
                for (li, (out_ch, in_ch, tanh)) in dims.into_iter().enumerate() {
                    let fan_in = in_ch * KERNEL;
                    let w = Array3::from_shape_vec(
                        (out_ch, in_ch, KERNEL),
                        init_tensor(
                            &[out_ch, in_ch, KERNEL],
                            fan_in,
                            root.derive_indexed("conv_w", li),
                        ),
                    )
                    .expect("shape");
                    let b = Array1::from_vec(init_tensor(
                        &[out_ch],
                        fan_in,
                        root.derive_indexed("conv_b", li),
                    ));
                    layers.push(ConvLayer { w, b, tanh });
                }
                ModelKind::ConvTime(ConvTimeWeights { layers })
            }
        };
        Ok(SeparationModel {
            kind,
            num_sources,
            source_names: (0..num_sources).map(|i| format!("source_{i}")).collect(),
            stft_cfg,
            provenance: Provenance {
                init_seed: seed,
                training: None,
            },
        })
    }

    pub fn architecture(&self) -> ArchitectureId {
        match self.kind {
            ModelKind::MaskFreq(_) => ArchitectureId::MaskFreq,
            ModelKind::ConvTime(_) => ArchitectureId::ConvTime,
        }
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    pub fn source_names(&self) -> &[String] {
        &self.source_names
    }

    pub fn set_source_names(&mut self, names: Vec<String>) -> Result<()> {
        if names.len() != self.num_sources {
            return Err(Error::parameter("source name count mismatch"));
        }
        self.source_names = names;
        Ok(())
    }

    pub fn stft_config(&self) -> &StftConfig {
        &self.stft_cfg
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub(crate) fn set_training_note(&mut self, note: String) {
        self.provenance.training = Some(note);
    }

    /// True when the two models share every weight value bit-for-bit.
    pub fn same_weights(&self, other: &SeparationModel) -> bool {
        self.kind == other.kind
    }

    /// Separate a mixture: one estimate per source, each with the shape and
    /// sample rate of the input. Deterministic.
    pub fn forward(&self, x: &AudioClip) -> Result<Vec<AudioClip>> {
        match &self.kind {
            ModelKind::MaskFreq(w) => mask_freq::forward(w, self, x),
            ModelKind::ConvTime(w) => conv_time::forward(w, self, x),
        }
    }

    /// Vector-Jacobian product of the target source's output with respect to
    /// the input samples: returns `J^T * cotangent[target_source]`.
    pub fn input_gradient(&self, req: &GradientRequest) -> Result<AudioClip> {
        if req.target_source >= self.num_sources {
            return Err(Error::parameter(format!(
                "target_source {} out of range for {} sources",
                req.target_source, self.num_sources
            )));
        }
        let cot = req
            .cotangent
            .get(req.target_source)
            .ok_or_else(|| Error::parameter("cotangent missing the target_source entry"))?;
        if !cot.same_shape(&req.input) {
            return Err(Error::parameter(
                "cotangent shape does not match forward output shape",
            ));
        }
        let mut slots: Vec<Option<&Array2<f64>>> = vec![None; self.num_sources];
        slots[req.target_source] = Some(cot.samples());
        let (grad, _) = self.backward(&req.input, &slots, false)?;
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("non-finite input gradient (model backward)"));
        }
        AudioClip::new(grad, req.input.sample_rate())
    }

    /// Shared backward pass. `cotangents[s]` is the time-domain cotangent for
    /// source `s` (`None` = zero). Returns the input gradient and, when
    /// requested, the weight gradients.
    pub(crate) fn backward(
        &self,
        x: &AudioClip,
        cotangents: &[Option<&Array2<f64>>],
        want_weights: bool,
    ) -> Result<(Array2<f64>, Option<WeightGrads>)> {
        if cotangents.len() != self.num_sources {
            return Err(Error::parameter("cotangent slot count mismatch"));
        }
        match &self.kind {
            ModelKind::MaskFreq(w) => mask_freq::backward(w, self, x, cotangents, want_weights),
            ModelKind::ConvTime(w) => conv_time::backward(w, self, x, cotangents, want_weights),
        }
    }

    pub(crate) fn apply_update(&mut self, grads: &WeightGrads, lr: f64) {
        match (&mut self.kind, grads) {
            (ModelKind::MaskFreq(w), WeightGrads::MaskFreq(g)) => {
                step2(&mut w.enc_w, &g.enc_w, lr);
                step1(&mut w.enc_b, &g.enc_b, lr);
                step2(&mut w.mask_w, &g.mask_w, lr);
                step1(&mut w.mask_b, &g.mask_b, lr);
            }
            (ModelKind::ConvTime(w), WeightGrads::ConvTime(g)) => {
                for (layer, lg) in w.layers.iter_mut().zip(g.iter()) {
                    step3(&mut layer.w, &lg.0, lr);
                    step1(&mut layer.b, &lg.1, lr);
                }
            }
            _ => unreachable!("gradient kind mismatch"),
        }
    }
}

fn step1(w: &mut Array1<f64>, g: &Array1<f64>, lr: f64) {
    ndarray::Zip::from(w)
        .and(g)
        .for_each(|wv, gv| *wv = quantize_f32(*wv - lr * gv));
}
fn step2(w: &mut Array2<f64>, g: &Array2<f64>, lr: f64) {
    ndarray::Zip::from(w)
        .and(g)
        .for_each(|wv, gv| *wv = quantize_f32(*wv - lr * gv));
}
fn step3(w: &mut Array3<f64>, g: &Array3<f64>, lr: f64) {
    ndarray::Zip::from(w)
        .and(g)
        .for_each(|wv, gv| *wv = quantize_f32(*wv - lr * gv));
}

#[derive(Debug, Clone)]
pub(crate) struct MaskFreqGrads {
    pub enc_w: Array2<f64>,
    pub enc_b: Array1<f64>,
    pub mask_w: Array2<f64>,
    pub mask_b: Array1<f64>,
}

#[derive(Debug, Clone)]
pub(crate) enum WeightGrads {
    MaskFreq(MaskFreqGrads),
    ConvTime(Vec<(Array3<f64>, Array1<f64>)>),
}

/// Deterministically initialize a model (free-function form of
/// [`SeparationModel::init`]).
pub fn init_model(arch: ArchitectureId, num_sources: usize, seed: u64) -> Result<SeparationModel> {
    SeparationModel::init(arch, num_sources, seed)
}
