//! Frequency-domain mask architecture: a per-frame two-layer net over
//! magnitude bins emits one sigmoid mask per source; each mask multiplies the
//! complex mixture STFT and the result is inverse-transformed.
//!
//! Gradients flow through the synthesis path via `istft_adjoint`, through the
//! mask/magnitude nonlinearities by hand, and back to the time domain via
//! `stft_adjoint`.

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::audio::AudioClip;
use crate::dsp::{istft_adjoint, stft, stft_adjoint, Spectrogram};
use crate::error::Result;
use crate::models::nn::sigmoid;
use crate::models::{MaskFreqGrads, MaskFreqWeights, SeparationModel, WeightGrads};

struct Activations {
    spec: Spectrogram,
    /// [channels*frames, bins] magnitudes
    mag: Array2<f64>,
    /// [channels*frames, HIDDEN] post-tanh
    hidden: Array2<f64>,
    /// [channels*frames, sources*bins] pre-sigmoid
    logits: Array2<f64>,
}

fn run_frontend(w: &MaskFreqWeights, model: &SeparationModel, x: &AudioClip) -> Result<Activations> {
    let cfg = model.stft_config();
    let spec = stft(x, cfg)?;
    let (channels, frames, bins) = spec.frames().dim();
    let rows = channels * frames;
    let mut mag = Array2::<f64>::zeros((rows, bins));
    for c in 0..channels {
        for f in 0..frames {
            for b in 0..bins {
                mag[[c * frames + f, b]] = spec.frames()[[c, f, b]].norm();
            }
        }
    }
    let mut hidden = mag.dot(&w.enc_w.t()) + &w.enc_b;
    hidden.mapv_inplace(f64::tanh);
    let logits = hidden.dot(&w.mask_w.t()) + &w.mask_b;
    Ok(Activations {
        spec,
        mag,
        hidden,
        logits,
    })
}

pub(super) fn forward(
    w: &MaskFreqWeights,
    model: &SeparationModel,
    x: &AudioClip,
) -> Result<Vec<AudioClip>> {
    let acts = run_frontend(w, model, x)?;
    let cfg = model.stft_config();
    let (channels, frames, bins) = acts.spec.frames().dim();
    let mut outputs = Vec::with_capacity(model.num_sources());
    for s in 0..model.num_sources() {
        let mut masked = Array3::<Complex64>::zeros((channels, frames, bins));
        for c in 0..channels {
            for f in 0..frames {
                let row = c * frames + f;
                for b in 0..bins {
                    let m = sigmoid(acts.logits[[row, s * bins + b]]);
                    masked[[c, f, b]] = acts.spec.frames()[[c, f, b]] * m;
                }
            }
        }
        let spec = Spectrogram::new(masked, *cfg, x.num_samples())?;
        let clip = crate::dsp::istft_with_rate(&spec, cfg, x.sample_rate())?;
        outputs.push(clip);
    }
    Ok(outputs)
}

pub(super) fn backward(
    w: &MaskFreqWeights,
    model: &SeparationModel,
    x: &AudioClip,
    cotangents: &[Option<&Array2<f64>>],
    want_weights: bool,
) -> Result<(Array2<f64>, Option<WeightGrads>)> {
    let acts = run_frontend(w, model, x)?;
    let cfg = model.stft_config();
    let (channels, frames, bins) = acts.spec.frames().dim();
    let rows = channels * frames;
    let sources = model.num_sources();

    let mut spec_cot = Array3::<Complex64>::zeros((channels, frames, bins));
    let mut logits_cot = Array2::<f64>::zeros((rows, sources * bins));

    for (s, slot) in cotangents.iter().enumerate() {
        let Some(g) = slot else { continue };
        let g_clip = AudioClip::new((*g).clone(), x.sample_rate())?;
        let g_spec = istft_adjoint(&g_clip, cfg)?;
        for c in 0..channels {
            for f in 0..frames {
                let row = c * frames + f;
                for b in 0..bins {
                    let gv = g_spec.frames()[[c, f, b]];
                    let xv = acts.spec.frames()[[c, f, b]];
                    let m = sigmoid(acts.logits[[row, s * bins + b]]);
                    // path through the mask application, mask held fixed
                    spec_cot[[c, f, b]] += gv * m;
                    // path into the mask itself
                    let mask_cot = gv.re * xv.re + gv.im * xv.im;
                    logits_cot[[row, s * bins + b]] = mask_cot * m * (1.0 - m);
                }
            }
        }
    }

    let hidden_cot = logits_cot.dot(&w.mask_w);
    let mut pre_cot = hidden_cot;
    ndarray::Zip::from(&mut pre_cot)
        .and(&acts.hidden)
        .for_each(|p, &h| *p *= 1.0 - h * h);
    let mag_cot = pre_cot.dot(&w.enc_w);

    // d|X|/dX = X / |X| (zero subgradient at the origin)
    for c in 0..channels {
        for f in 0..frames {
            let row = c * frames + f;
            for b in 0..bins {
                let xv = acts.spec.frames()[[c, f, b]];
                let norm = xv.norm();
                if norm > 0.0 {
                    spec_cot[[c, f, b]] += xv * (mag_cot[[row, b]] / norm);
                }
            }
        }
    }

    let spec_cot = Spectrogram::new(spec_cot, *cfg, x.num_samples())?;
    let grad = stft_adjoint(&spec_cot, cfg, x.num_samples())?;

    let weight_grads = if want_weights {
        Some(WeightGrads::MaskFreq(MaskFreqGrads {
            enc_w: pre_cot.t().dot(&acts.mag),
            enc_b: pre_cot.sum_axis(ndarray::Axis(0)),
            mask_w: logits_cot.t().dot(&acts.hidden),
            mask_b: logits_cot.sum_axis(ndarray::Axis(0)),
        }))
    } else {
        None
    };

    Ok((grad.into_samples(), weight_grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tests::random_clip;
    use crate::models::{ArchitectureId, ModelKind};

    #[test]
    fn masks_stay_in_open_unit_interval() {
        let model = SeparationModel::init(ArchitectureId::MaskFreq, 2, 3).unwrap();
        let ModelKind::MaskFreq(w) = &model.kind else {
            unreachable!()
        };
        let x = random_clip(1, 2000, 23);
        let acts = run_frontend(w, &model, &x).unwrap();
        for &logit in acts.logits.iter() {
            let m = sigmoid(logit);
            assert!(m > 0.0 && m < 1.0);
        }
    }

    #[test]
    fn forward_matches_manual_mask_multiply() {
        // output == istft(mask ⊙ stft(x)) with the mask recomputed by hand
        let model = SeparationModel::init(ArchitectureId::MaskFreq, 2, 3).unwrap();
        let ModelKind::MaskFreq(w) = &model.kind else {
            unreachable!()
        };
        let x = random_clip(1, 1800, 29);
        let out = model.forward(&x).unwrap();
        let acts = run_frontend(w, &model, &x).unwrap();
        let (channels, frames, bins) = acts.spec.frames().dim();
        let mut masked = Array3::<Complex64>::zeros((channels, frames, bins));
        for f in 0..frames {
            for b in 0..bins {
                let m = sigmoid(acts.logits[[f, b]]); // source 0, channel 0
                masked[[0, f, b]] = acts.spec.frames()[[0, f, b]] * m;
            }
        }
        let spec = Spectrogram::new(masked, *model.stft_config(), x.num_samples()).unwrap();
        let manual =
            crate::dsp::istft_with_rate(&spec, model.stft_config(), x.sample_rate()).unwrap();
        let max_err = manual
            .samples()
            .iter()
            .zip(out[0].samples().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-12);
    }
}
