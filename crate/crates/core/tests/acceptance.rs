//! Acceptance suite: one test per criterion, each printing a pass line with
//! the measured values. Oracles (finite differences, random-noise baselines,
//! brute-force medians) live in this file and are independent of the library
//! paths they check.

mod common;

use ndarray::Array2;
use sepadv_core::audio::AudioClip;
use sepadv_core::dsp::{istft_with_rate, stft, stft_adjoint, Spectrogram, StftConfig};
use sepadv_core::models::{ArchitectureId, GradientRequest, SeparationModel};
use sepadv_core::parallel;
use sepadv_core::rng::{fill_uniform, StreamSeed};

fn random_clip(channels: usize, len: usize, seed: u64) -> AudioClip {
    let mut rng = StreamSeed::new(seed).derive("acceptance").rng();
    let mut data = vec![0.0f64; channels * len];
    fill_uniform(&mut rng, &mut data, -0.5, 0.5);
    AudioClip::new(Array2::from_shape_vec((channels, len), data).unwrap(), 8000).unwrap()
}

/// Directional loss used by the finite-difference oracle:
/// `L(x) = <f(x)[target], cotangent>`.
fn probe_loss(model: &SeparationModel, x: &AudioClip, target: usize, cot: &AudioClip) -> f64 {
    let out = model.forward(x).unwrap();
    out[target]
        .samples()
        .iter()
        .zip(cot.samples().iter())
        .map(|(a, b)| a * b)
        .sum()
}

/// Criterion 1: input_gradient vs central finite differences on both
/// architectures, 0.25 s @ 8 kHz clips, float64; max relative error < 1e-4
/// and < 60 s runtime per architecture.
#[test]
fn criterion_1_gradient_correctness() {
    let len = 2000; // 0.25 s @ 8 kHz
    for arch in [ArchitectureId::MaskFreq, ArchitectureId::ConvTime] {
        let start = std::time::Instant::now();
        let model = SeparationModel::init(arch, 2, 42).unwrap();
        let x = random_clip(1, len, 1001);
        let cot = random_clip(1, len, 1002);
        let target = 0usize;

        let req = GradientRequest::for_target(x.clone(), target, cot.clone());
        let vjp = model.input_gradient(&req).unwrap();

        let h = 1e-4;
        let fd: Vec<f64> = parallel::par_map_indexed(len, |i| {
            let mut plus = x.samples().clone();
            plus[[0, i]] += h;
            let mut minus = x.samples().clone();
            minus[[0, i]] -= h;
            let lp = probe_loss(
                &model,
                &AudioClip::new(plus, x.sample_rate()).unwrap(),
                target,
                &cot,
            );
            let lm = probe_loss(
                &model,
                &AudioClip::new(minus, x.sample_rate()).unwrap(),
                target,
                &cot,
            );
            (lp - lm) / (2.0 * h)
        });

        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let max_rel = vjp
            .channel(0)
            .iter()
            .zip(fd.iter())
            .map(|(g, f)| (g - f).abs() / scale)
            .fold(0.0f64, f64::max);
        let elapsed = start.elapsed().as_secs_f64();
        assert!(
            max_rel < 1e-4,
            "criterion 1 FAIL [{arch}]: max relative error {max_rel:.3e}"
        );
        assert!(
            elapsed < 60.0,
            "criterion 1 FAIL [{arch}]: took {elapsed:.1} s (>= 60 s)"
        );
        println!(
            "criterion 1 PASS [{arch}]: max rel err {max_rel:.3e} (< 1e-4), {elapsed:.1} s"
        );
    }
}

/// Criterion 2: STFT adjoint identity on 100 random pairs (relative error
/// < 1e-8) and istft∘stft round trip (max abs error < 1e-6).
#[test]
fn criterion_2_stft_adjoint_and_round_trip() {
    let cfg = StftConfig::default();
    let len = 3000;
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let u = random_clip(1, len, 2000 + trial);
        let frames = cfg.num_frames(len).unwrap();
        let mut rng = StreamSeed::new(3000 + trial).derive("adjoint-v").rng();
        let mut v = ndarray::Array3::<num_complex::Complex64>::zeros((1, frames, cfg.bins()));
        for entry in v.iter_mut() {
            *entry = num_complex::Complex64::new(
                rand::Rng::gen_range(&mut rng, -1.0..1.0),
                rand::Rng::gen_range(&mut rng, -1.0..1.0),
            );
        }
        let v = Spectrogram::new(v, cfg, len).unwrap();

        let su = stft(&u, &cfg).unwrap();
        let lhs: f64 = su
            .frames()
            .iter()
            .zip(v.frames().iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        let adj = stft_adjoint(&v, &cfg, len).unwrap();
        let rhs: f64 = u
            .samples()
            .iter()
            .zip(adj.samples().iter())
            .map(|(a, b)| a * b)
            .sum();
        let rel = (lhs - rhs).abs() / lhs.abs().max(1e-30);
        worst = worst.max(rel);
    }
    assert!(
        worst < 1e-8,
        "criterion 2 FAIL: adjoint identity max rel err {worst:.3e}"
    );

    let clip = random_clip(2, 5000, 4000);
    let round = istft_with_rate(&stft(&clip, &cfg).unwrap(), &cfg, clip.sample_rate()).unwrap();
    let max_abs = round
        .samples()
        .iter()
        .zip(clip.samples().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(
        max_abs < 1e-6,
        "criterion 2 FAIL: round trip max abs err {max_abs:.3e}"
    );
    println!(
        "criterion 2 PASS: adjoint max rel err {worst:.3e} (< 1e-8), round trip {max_abs:.3e} (< 1e-6)"
    );
}
