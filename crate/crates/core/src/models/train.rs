//! Plain stochastic gradient descent on synthetic source sets.

use ndarray::Array2;

use crate::audio::SourceSet;
use crate::error::{Error, Result};
use crate::models::SeparationModel;
use crate::rng::StreamSeed;

/// Train a model by SGD on the mean squared error between `forward(mixture)`
/// and the true sources. Deterministic per seed; clip order is reshuffled
/// each epoch. Returns the trained model and the per-epoch mean loss trace
/// (evaluated at the weights each clip was visited with).
///
/// `epochs == 0` returns the model unchanged with an empty trace.
pub fn fit_toy(
    model: &SeparationModel,
    data: &[SourceSet],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(SeparationModel, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::parameter("fit_toy needs at least one SourceSet"));
    }
    for (i, set) in data.iter().enumerate() {
        if set.num_sources() != model.num_sources() {
            return Err(Error::parameter(format!(
                "SourceSet {i} has {} sources, model separates {}",
                set.num_sources(),
                model.num_sources()
            )));
        }
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::parameter("lr must be finite and >= 0"));
    }

    let mut trained = model.clone();
    trained.set_source_names(data[0].sources().iter().map(|(n, _)| n.clone()).collect())?;
    if epochs == 0 {
        return Ok((trained, Vec::new()));
    }

    let root = StreamSeed::new(seed).derive("fit-toy");
    let mut trace = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..epochs {
        shuffle(&mut order, root.derive_indexed("epoch", epoch));
        let mut epoch_loss = 0.0;
        for &idx in &order {
            let set = &data[idx];
            let x = set.mixture();
            let outputs = trained.forward(x)?;
            let scale = 1.0
                / (set.num_sources() * x.channels() * x.num_samples()) as f64;

            let mut loss = 0.0;
            let mut cot_store: Vec<Array2<f64>> = Vec::with_capacity(outputs.len());
            for (s, out) in outputs.iter().enumerate() {
                let diff = out.samples() - set.source(s).samples();
                loss += diff.iter().map(|d| d * d).sum::<f64>() * scale;
                cot_store.push(diff * (2.0 * scale));
            }
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "training loss diverged at epoch {epoch}, clip {idx}"
                )));
            }
            epoch_loss += loss;

            let slots: Vec<Option<&Array2<f64>>> = cot_store.iter().map(Some).collect();
            let (_, grads) = trained.backward(x, &slots, true)?;
            trained.apply_update(&grads.expect("weight grads requested"), lr);
        }
        trace.push(epoch_loss / data.len() as f64);
    }

    trained.set_training_note(format!(
        "fit_toy epochs={epochs} lr={lr} seed={seed} clips={}",
        data.len()
    ));
    Ok((trained, trace))
}

fn shuffle(order: &mut [usize], seed: StreamSeed) {
    let mut rng = seed.rng();
    for i in (1..order.len()).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
}
