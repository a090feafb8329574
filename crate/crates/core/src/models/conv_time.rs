//! Time-domain convolutional architecture: three same-padded 1-D conv layers
//! applied to each audio channel independently (weights shared across
//! channels), the last layer emitting one output channel per source.

use ndarray::{Array1, Array2, Array3};

use crate::audio::AudioClip;
use crate::error::Result;
use crate::models::nn::{conv1d_forward, conv1d_grad_input, conv1d_grad_weights};
use crate::models::{ConvTimeWeights, SeparationModel, WeightGrads};

// Per-audio-channel activations: input of each layer plus pre/post of tanh.
struct LayerTrace {
    /// Post-activation output of each layer, input channel included at [0].
    outputs: Vec<Array2<f64>>,
}

fn run_layers(w: &ConvTimeWeights, x_channel: &[f64]) -> LayerTrace {
    let len = x_channel.len();
    let mut outputs = Vec::with_capacity(w.layers.len() + 1);
    outputs.push(
        Array2::from_shape_vec((1, len), x_channel.to_vec()).expect("channel shape"),
    );
    for layer in &w.layers {
        let mut z = conv1d_forward(&layer.w, &layer.b, outputs.last().expect("input"));
        if layer.tanh {
            z.mapv_inplace(f64::tanh);
        }
        outputs.push(z);
    }
    LayerTrace { outputs }
}

pub(super) fn forward(
    w: &ConvTimeWeights,
    model: &SeparationModel,
    x: &AudioClip,
) -> Result<Vec<AudioClip>> {
    let channels = x.channels();
    let len = x.num_samples();
    let sources = model.num_sources();
    let mut out = vec![Array2::<f64>::zeros((channels, len)); sources];
    for c in 0..channels {
        let trace = run_layers(w, x.channel(c));
        let y = trace.outputs.last().expect("final layer");
        for s in 0..sources {
            out[s].row_mut(c).assign(&y.row(s));
        }
    }
    out.into_iter()
        .map(|samples| AudioClip::new(samples, x.sample_rate()))
        .collect()
}

pub(super) fn backward(
    w: &ConvTimeWeights,
    model: &SeparationModel,
    x: &AudioClip,
    cotangents: &[Option<&Array2<f64>>],
    want_weights: bool,
) -> Result<(Array2<f64>, Option<WeightGrads>)> {
    let channels = x.channels();
    let len = x.num_samples();
    let sources = model.num_sources();

    let mut input_grad = Array2::<f64>::zeros((channels, len));
    let mut weight_grads: Option<Vec<(Array3<f64>, Array1<f64>)>> = if want_weights {
        Some(
            w.layers
                .iter()
                .map(|l| (Array3::zeros(l.w.dim()), Array1::zeros(l.b.len())))
                .collect(),
        )
    } else {
        None
    };

    for c in 0..channels {
        let trace = run_layers(w, x.channel(c));

        // assemble the cotangent of the final conv output for this channel
        let mut upstream = Array2::<f64>::zeros((sources, len));
        let mut any = false;
        for (s, slot) in cotangents.iter().enumerate() {
            if let Some(g) = slot {
                upstream.row_mut(s).assign(&g.row(c));
                any = true;
            }
        }
        if !any && !want_weights {
            continue;
        }

        for (li, layer) in w.layers.iter().enumerate().rev() {
            // cotangent of the layer's pre-activation
            if layer.tanh {
                let post = &trace.outputs[li + 1];
                ndarray::Zip::from(&mut upstream)
                    .and(post)
                    .for_each(|u, &z| *u *= 1.0 - z * z);
            }
            if let Some(grads) = weight_grads.as_mut() {
                let (wg, bg) = conv1d_grad_weights(layer.w.dim(), &trace.outputs[li], &upstream);
                grads[li].0 += &wg;
                grads[li].1 += &bg;
            }
            upstream = conv1d_grad_input(&layer.w, &upstream);
        }
        input_grad.row_mut(c).assign(&upstream.row(0));
    }

    Ok((input_grad, weight_grads.map(WeightGrads::ConvTime)))
}
