//! Scratch calibration runs (not part of the deliverable test surface).

use sepadv_core::attacks::{AttackConfig, AttackMethod};
use sepadv_core::audio::{synth_source_set, AudioClip, SourceSet, SynthRecipe};
use sepadv_core::harness::{match_di, DiMatch};
use sepadv_core::metrics::{di, ds, median, GroundMetric};
use sepadv_core::models::{fit_toy, ArchitectureId, SeparationModel};
use sepadv_core::rng::{fill_uniform, StreamSeed};

fn ds_for(model: &SeparationModel, set: &SourceSet, adversarial: &AudioClip) -> f64 {
    let clean = model.forward(set.mixture()).unwrap();
    let adv = model.forward(adversarial).unwrap();
    ds(
        GroundMetric::Sdr,
        set.source(0),
        &clean[0],
        &adv[0],
        Some(set),
        0,
    )
    .unwrap()
    .db
}

fn noise_at_di(x: &AudioClip, target_di_db: f64, seed: u64) -> AudioClip {
    let mut data = vec![0.0f64; x.channels() * x.num_samples()];
    let mut rng = StreamSeed::new(seed).derive("noise-baseline").rng();
    fill_uniform(&mut rng, &mut data, -1.0, 1.0);
    let arr = ndarray::Array2::from_shape_vec((x.channels(), x.num_samples()), data).unwrap();
    let noise = AudioClip::new(arr, x.sample_rate()).unwrap();
    let want_energy = x.energy() / 10f64.powf(target_di_db / 10.0);
    let scale = (want_energy / noise.energy()).sqrt();
    noise.scale(scale).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let train_lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);

    // overlapping chirp ranges force input-dependent masks
    let recipe: SynthRecipe = serde_json::from_str(
        r#"{
        "sources": [
            {"name": "vocals", "kind": "harmonic-chirp", "f0_hz": 400.0, "f1_hz": 1400.0, "partials": 2},
            {"name": "other", "kind": "harmonic-chirp", "f0_hz": 1700.0, "f1_hz": 500.0, "partials": 2}
        ],
        "duration_s": 1.0, "sample_rate": 8000, "channels": 1
    }"#,
    )
    .unwrap();
    let data: Vec<SourceSet> = (0..8)
        .map(|i| synth_source_set(&recipe, 500 + i).unwrap())
        .collect();

    let t0 = std::time::Instant::now();
    let model = SeparationModel::init(ArchitectureId::MaskFreq, 2, 42).unwrap();
    let (trained, trace) = fit_toy(&model, &data, epochs, train_lr, 7).unwrap();
    println!(
        "trained mask_freq e={epochs} lr={train_lr}: loss {:.5} -> {:.5} [{:.1}s]",
        trace[0],
        trace.last().unwrap(),
        t0.elapsed().as_secs_f64()
    );

    for target_di in [30.0f64, 25.0, 20.0] {
        let policy = DiMatch {
            target_db: target_di,
            tolerance_db: 1.0,
            max_steps: 12,
        };
        // random-noise baseline: median DS over seeded noises at this DI
        let t0 = std::time::Instant::now();
        let mut noise_ds: Vec<f64> = Vec::new();
        for set in &data {
            for s in 0..12 {
                let noise = noise_at_di(set.mixture(), target_di, 9000 + s);
                let adv = set.mixture().add(&noise).unwrap();
                noise_ds.push(ds_for(&trained, set, &adv));
            }
        }
        let noise_med = median(&noise_ds).unwrap();
        println!(
            "  DI {target_di}: noise baseline median DS {noise_med:.4} dB [{:.1}s]",
            t0.elapsed().as_secs_f64()
        );

        for (label, method, iters, lr) in [
            ("gd", AttackMethod::Gd, 40usize, 0.2),
            ("pgd", AttackMethod::Pgd, 40, 0.0),
            ("fgsm", AttackMethod::Fgsm, 1, 0.0),
        ] {
            let mut ds_values = Vec::new();
            let mut di_values = Vec::new();
            let t0 = std::time::Instant::now();
            for set in &data {
                let mut cfg = AttackConfig::new(method);
                cfg.iterations = iters;
                if method == AttackMethod::Gd {
                    cfg.lr = lr;
                    cfg.lambda = 1.0;
                } else {
                    cfg.epsilon = 0.01;
                }
                cfg.seed = 11;
                let (_, result, di_db) = match_di(&trained, set, &cfg, &policy).unwrap();
                ds_values.push(ds_for(&trained, set, &result.adversarial));
                di_values.push((di_db * 10.0).round() / 10.0);
            }
            let med = median(&ds_values).unwrap();
            println!(
                "  DI {target_di}: {label} DS median {med:.4} dB (ratio vs noise {:.1}x), DI {:?} [{:.1}s]",
                med / noise_med,
                di_values,
                t0.elapsed().as_secs_f64()
            );
        }
    }
}
