//! Perturbation crafting: gradient descent, FGSM, and PGD, under l2, sup, or
//! short-term-power-ratio (STPR) constraints, in the time or frequency
//! domain.
//!
//! None of the crafting operations ever sees a ground-truth source: the
//! reference is always the model's own separation of the clean input,
//! computed once and held constant (stop-gradient).
//!
//! The GD loss is `L(eta) = -||f(x+eta) - f(x)||_2^2 + lambda * C(eta)`,
//! minimized by fixed-step descent on the data term. The l2 and STPR
//! regularizers are nonsmooth at zero, so their step is the proximal
//! (shrinkage) map of `lr*lambda*C`; this coincides with plain gradient
//! descent whenever the step does not overshoot the origin, and keeps large
//! `lambda` runs stable. The sup regularizer uses a magnitude-capped
//! subgradient step.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::dsp::{
    griffin_lim, istft_adjoint, istft_with_rate, patch_l2_norms, stft, Spectrogram, StftConfig,
};
use crate::error::{Error, Result};
use crate::models::{GradientRequest, SeparationModel};
use crate::rng::{fill_uniform, StreamSeed};

/// Constraint `C` limiting the perturbation magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConstraintKind {
    /// Global l2 norm `||eta||_2`.
    L2,
    /// Supremum norm `||eta||_inf`.
    Sup,
    /// Short-term power ratio: `|| theta(eta, l) / theta(x, l) ||_1` with
    /// patch-wise l2 norms; silent input patches are floored.
    Stpr {
        #[serde(default = "default_stpr_patch")]
        patch_len: usize,
        #[serde(default = "default_stpr_floor")]
        floor: f64,
    },
}

fn default_stpr_patch() -> usize {
    2048
}
fn default_stpr_floor() -> f64 {
    1e-6
}

impl Default for ConstraintKind {
    fn default() -> Self {
        ConstraintKind::L2
    }
}

impl ConstraintKind {
    /// STPR with the default ~46 ms patch (2048 samples at 44.1 kHz), scaled
    /// proportionally to the sample rate.
    pub fn stpr_for_rate(sample_rate: u32) -> ConstraintKind {
        let patch_len = ((2048.0 * sample_rate as f64 / 44100.0).round() as usize).max(1);
        ConstraintKind::Stpr {
            patch_len,
            floor: default_stpr_floor(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let ConstraintKind::Stpr { patch_len, floor } = self {
            if *patch_len == 0 {
                return Err(Error::parameter("stpr patch_len must be >= 1"));
            }
            if !(*floor > 0.0) {
                return Err(Error::parameter("stpr floor must be > 0"));
            }
        }
        Ok(())
    }
}

/// Attack algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Gd,
    Fgsm,
    Pgd,
}

impl std::fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackMethod::Gd => write!(f, "gd"),
            AttackMethod::Fgsm => write!(f, "fgsm"),
            AttackMethod::Pgd => write!(f, "pgd"),
        }
    }
}

/// Where the perturbation is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CraftDomain {
    #[default]
    Time,
    Frequency,
}

/// All attack hyperparameters. `epsilon` is the FGSM/PGD amplitude bound,
/// `lambda` the GD regularization weight, `step` the PGD step size
/// (default `epsilon / sqrt(iterations)`), `lr` the GD step size,
/// `init_scale` the amplitude of the random initialization, and `delta` an
/// optional hard constraint threshold used for reporting only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub method: AttackMethod,
    #[serde(default)]
    pub target_source: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub domain: CraftDomain,
    #[serde(default)]
    pub constraint: ConstraintKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

fn default_epsilon() -> f64 {
    0.1
}
fn default_iterations() -> usize {
    300
}
fn default_lr() -> f64 {
    1e-3
}
fn default_init_scale() -> f64 {
    1e-4
}

impl AttackConfig {
    pub fn new(method: AttackMethod) -> Self {
        AttackConfig {
            method,
            target_source: 0,
            epsilon: default_epsilon(),
            lambda: 0.0,
            iterations: default_iterations(),
            step: None,
            lr: default_lr(),
            init_scale: default_init_scale(),
            seed: 0,
            domain: CraftDomain::Time,
            constraint: ConstraintKind::default(),
            delta: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            AttackMethod::Fgsm | AttackMethod::Pgd => {
                if !(self.epsilon > 0.0) {
                    return Err(Error::parameter("epsilon must be > 0 for fgsm/pgd"));
                }
                if self.domain == CraftDomain::Frequency {
                    return Err(Error::parameter(
                        "frequency-domain crafting is defined for the gd method only",
                    ));
                }
            }
            AttackMethod::Gd => {
                if !(self.lr > 0.0) {
                    return Err(Error::parameter("lr must be > 0 for gd"));
                }
            }
        }
        if self.lambda < 0.0 {
            return Err(Error::parameter("lambda must be >= 0"));
        }
        if self.iterations == 0 {
            return Err(Error::parameter("iterations must be >= 1"));
        }
        if self.init_scale < 0.0 {
            return Err(Error::parameter("init_scale must be >= 0"));
        }
        if let Some(step) = self.step {
            if !(step > 0.0) {
                return Err(Error::parameter("step must be > 0 when set"));
            }
        }
        self.constraint.validate()
    }

    /// PGD step size: configured value or the `epsilon / sqrt(T)` default.
    pub fn pgd_step(&self) -> f64 {
        self.step
            .unwrap_or(self.epsilon / (self.iterations as f64).sqrt())
    }
}

/// Crafted perturbation plus its optimization traces. `adversarial` is
/// exactly `x + eta` sample-wise. Traces are evaluated at the iterate
/// entering each step; all three have length `iterations` (1 for FGSM, where
/// they evaluate the crafted perturbation itself).
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub eta: AudioClip,
    pub adversarial: AudioClip,
    pub loss_trace: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub constraint_trace: Vec<f64>,
    pub config: AttackConfig,
}

impl AttackResult {
    /// Post-hoc check of the optional hard threshold: `C(eta) < delta`.
    pub fn within_delta(&self, x: &AudioClip) -> Result<Option<bool>> {
        match self.config.delta {
            None => Ok(None),
            Some(delta) => {
                let c = constraint_value(&self.eta, x, &self.config.constraint)?;
                Ok(Some(c < delta))
            }
        }
    }

    /// CSV trace export: `iteration,loss,objective,constraint`.
    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        writeln!(w, "iteration,loss,objective,constraint")?;
        for (i, ((l, o), c)) in self
            .loss_trace
            .iter()
            .zip(self.objective_trace.iter())
            .zip(self.constraint_trace.iter())
            .enumerate()
        {
            writeln!(w, "{i},{l},{o},{c}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluate the constraint `C(eta)` (the STPR kind also needs `x`).
pub fn constraint_value(eta: &AudioClip, x: &AudioClip, c: &ConstraintKind) -> Result<f64> {
    if !eta.same_shape(x) {
        return Err(Error::parameter("constraint_value: shape mismatch"));
    }
    c.validate()?;
    Ok(match c {
        ConstraintKind::L2 => eta.l2_norm(),
        ConstraintKind::Sup => eta.max_abs(),
        ConstraintKind::Stpr { patch_len, floor } => {
            let eta_norms = patch_l2_norms(eta, *patch_len)?;
            let x_norms = patch_l2_norms(x, *patch_len)?;
            eta_norms
                .values
                .iter()
                .zip(x_norms.values.iter())
                .map(|(e, xv)| e / xv.max(*floor))
                .sum()
        }
    })
}

/// Subgradient of `C` at `eta` (zero on silent patches / at the origin).
#[cfg_attr(not(test), allow(dead_code))]
fn constraint_gradient(eta: &Array2<f64>, x: &AudioClip, c: &ConstraintKind) -> Result<Array2<f64>> {
    Ok(match c {
        ConstraintKind::L2 => {
            let norm = eta.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                Array2::zeros(eta.dim())
            } else {
                eta / norm
            }
        }
        ConstraintKind::Sup => {
            let max = eta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut g = Array2::zeros(eta.dim());
            if max > 0.0 {
                ndarray::Zip::from(&mut g).and(eta).for_each(|gv, &ev| {
                    if ev.abs() >= max {
                        *gv = ev.signum();
                    }
                });
            }
            g
        }
        ConstraintKind::Stpr { patch_len, floor } => {
            let eta_clip = AudioClip::new(eta.clone(), x.sample_rate())?;
            let eta_norms = patch_l2_norms(&eta_clip, *patch_len)?;
            let x_norms = patch_l2_norms(x, *patch_len)?;
            let mut g = Array2::zeros(eta.dim());
            let len = eta.ncols();
            for (n, (en, xn)) in eta_norms
                .values
                .iter()
                .zip(x_norms.values.iter())
                .enumerate()
            {
                if *en == 0.0 {
                    continue;
                }
                let denom = en * xn.max(*floor);
                let start = n * patch_len;
                let end = ((n + 1) * patch_len).min(len);
                for ch in 0..eta.nrows() {
                    for t in start..end {
                        g[[ch, t]] = eta[[ch, t]] / denom;
                    }
                }
            }
            g
        }
    })
}

/// Proximal / capped-subgradient step of `t * C`, applied in place.
fn apply_constraint_step(
    eta: &mut Array2<f64>,
    x: &AudioClip,
    c: &ConstraintKind,
    t: f64,
) -> Result<()> {
    if t == 0.0 {
        return Ok(());
    }
    match c {
        ConstraintKind::L2 => {
            let norm = eta.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if norm <= t { 0.0 } else { 1.0 - t / norm };
            eta.mapv_inplace(|v| v * scale);
        }
        ConstraintKind::Sup => {
            // capped subgradient: shrink the entries attaining the max
            let max = eta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if max > 0.0 {
                let delta = t.min(max);
                eta.mapv_inplace(|v| {
                    if v.abs() >= max {
                        v - v.signum() * delta
                    } else {
                        v
                    }
                });
            }
        }
        ConstraintKind::Stpr { patch_len, floor } => {
            let eta_clip = AudioClip::new(eta.clone(), x.sample_rate())?;
            let eta_norms = patch_l2_norms(&eta_clip, *patch_len)?;
            let x_norms = patch_l2_norms(x, *patch_len)?;
            let len = eta.ncols();
            for (n, (en, xn)) in eta_norms
                .values
                .iter()
                .zip(x_norms.values.iter())
                .enumerate()
            {
                if *en == 0.0 {
                    continue;
                }
                let threshold = t / xn.max(*floor);
                let scale = if *en <= threshold {
                    0.0
                } else {
                    1.0 - threshold / en
                };
                let start = n * patch_len;
                let end = ((n + 1) * patch_len).min(len);
                for ch in 0..eta.nrows() {
                    for tt in start..end {
                        eta[[ch, tt]] *= scale;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Elementwise clamp of `candidate` into the sup-norm epsilon ball around
/// `center`. Idempotent.
pub fn project_sup_ball(
    candidate: &AudioClip,
    center: &AudioClip,
    epsilon: f64,
) -> Result<AudioClip> {
    if !candidate.same_shape(center) {
        return Err(Error::parameter("project_sup_ball: shape mismatch"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::parameter("project_sup_ball: epsilon must be > 0"));
    }
    let mut out = candidate.samples().clone();
    ndarray::Zip::from(&mut out)
        .and(center.samples())
        .for_each(|v, &c| *v = v.clamp(c - epsilon, c + epsilon));
    AudioClip::new(out, candidate.sample_rate())
}

fn seeded_noise(shape: (usize, usize), scale: f64, seed: StreamSeed) -> Array2<f64> {
    let mut data = vec![0.0f64; shape.0 * shape.1];
    if scale > 0.0 {
        let mut rng = seed.rng();
        fill_uniform(&mut rng, &mut data, -scale, scale);
    }
    Array2::from_shape_vec(shape, data).expect("noise shape")
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

// Frozen reference separation f(x)[target] (stop-gradient).
fn frozen_reference(model: &SeparationModel, x: &AudioClip, target: usize) -> Result<Array2<f64>> {
    if target >= model.num_sources() {
        return Err(Error::parameter(format!(
            "target_source {target} out of range for {} sources",
            model.num_sources()
        )));
    }
    Ok(model.forward(x)?[target].samples().clone())
}

// One forward + data-term gradient evaluation at `point`, against the frozen
// reference. Returns (-||diff||^2, gradient of +||diff||^2 wrt the input).
fn data_term(
    model: &SeparationModel,
    point: &AudioClip,
    target: usize,
    reference: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    let out = model.forward(point)?;
    let diff = out[target].samples() - reference;
    let sq_norm: f64 = diff.iter().map(|d| d * d).sum();
    let cot = AudioClip::new(&diff * 2.0, point.sample_rate())?;
    let req = GradientRequest::for_target(point.clone(), target, cot);
    let grad = model.input_gradient(&req)?;
    Ok((-sq_norm, grad.into_samples()))
}

/// Gradient-descent attack, crafting in the configured domain. The reference
/// `f(x)` is computed once and receives no gradient.
pub fn craft_gd(model: &SeparationModel, x: &AudioClip, cfg: &AttackConfig) -> Result<AttackResult> {
    if cfg.method != AttackMethod::Gd {
        return Err(Error::parameter("craft_gd requires method = gd"));
    }
    cfg.validate()?;
    let reference = frozen_reference(model, x, cfg.target_source)?;
    let init = seeded_noise(
        x.samples().dim(),
        cfg.init_scale,
        StreamSeed::new(cfg.seed).derive("attack-init"),
    );

    match cfg.domain {
        CraftDomain::Time => craft_gd_time(model, x, cfg, &reference, init),
        CraftDomain::Frequency => craft_gd_frequency(model, x, cfg, &reference, init),
    }
}

fn craft_gd_time(
    model: &SeparationModel,
    x: &AudioClip,
    cfg: &AttackConfig,
    reference: &Array2<f64>,
    mut eta: Array2<f64>,
) -> Result<AttackResult> {
    let mut loss_trace = Vec::with_capacity(cfg.iterations);
    let mut objective_trace = Vec::with_capacity(cfg.iterations);
    let mut constraint_trace = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        let eta_clip = AudioClip::new(eta.clone(), x.sample_rate())
            .map_err(|_| Error::numeric(format!("non-finite eta at iteration {iter}")))?;
        let adv = x.add(&eta_clip)?;
        let (objective, data_grad) = data_term(model, &adv, cfg.target_source, reference)?;
        let c_value = constraint_value(&eta_clip, x, &cfg.constraint)?;
        let loss = objective + cfg.lambda * c_value;
        if !loss.is_finite() {
            return Err(Error::numeric(format!(
                "gd loss became non-finite at iteration {iter}"
            )));
        }
        loss_trace.push(loss);
        objective_trace.push(objective);
        constraint_trace.push(c_value);

        // descend the data term (objective = -||diff||^2, so stepping along
        // +grad of ||diff||^2 descends it), then the regularizer step
        eta.scaled_add(cfg.lr, &data_grad);
        apply_constraint_step(&mut eta, x, &cfg.constraint, cfg.lr * cfg.lambda)?;
    }

    let eta_clip = AudioClip::new(eta, x.sample_rate())
        .map_err(|_| Error::numeric("non-finite final eta".to_string()))?;
    let adversarial = x.add(&eta_clip)?;
    Ok(AttackResult {
        eta: eta_clip,
        adversarial,
        loss_trace,
        objective_trace,
        constraint_trace,
        config: cfg.clone(),
    })
}

// Frequency-domain GD: eta is parameterized as complex STFT coefficients and
// synthesized by direct istft (exact and linear); the data step becomes a
// spectrally preconditioned time step via istft_adjoint. The regularizer
// prox acts on the synthesized time signal and is re-encoded, which leaves
// the synthesized perturbation unchanged (istft∘stft = id).
fn craft_gd_frequency(
    model: &SeparationModel,
    x: &AudioClip,
    cfg: &AttackConfig,
    reference: &Array2<f64>,
    init: Array2<f64>,
) -> Result<AttackResult> {
    let stft_cfg: StftConfig = *model.stft_config();
    let init_clip = AudioClip::new(init, x.sample_rate())?;
    let mut coeffs: Array3<Complex64> = stft(&init_clip, &stft_cfg)?.into_frames();

    let mut loss_trace = Vec::with_capacity(cfg.iterations);
    let mut objective_trace = Vec::with_capacity(cfg.iterations);
    let mut constraint_trace = Vec::with_capacity(cfg.iterations);

    let synth = |coeffs: &Array3<Complex64>| -> Result<AudioClip> {
        let spec = Spectrogram::new(coeffs.clone(), stft_cfg, x.num_samples())?;
        istft_with_rate(&spec, &stft_cfg, x.sample_rate())
    };

    for iter in 0..cfg.iterations {
        let eta_clip = synth(&coeffs)
            .map_err(|_| Error::numeric(format!("non-finite eta at iteration {iter}")))?;
        let adv = x.add(&eta_clip)?;
        let (objective, data_grad) = data_term(model, &adv, cfg.target_source, reference)?;
        let c_value = constraint_value(&eta_clip, x, &cfg.constraint)?;
        let loss = objective + cfg.lambda * c_value;
        if !loss.is_finite() {
            return Err(Error::numeric(format!(
                "gd loss became non-finite at iteration {iter}"
            )));
        }
        loss_trace.push(loss);
        objective_trace.push(objective);
        constraint_trace.push(c_value);

        // chain rule through the synthesis: d(loss)/d(coeffs) via the exact
        // istft adjoint; data_grad is of +||diff||^2, so descend along +grad
        let grad_clip = AudioClip::new(data_grad, x.sample_rate())?;
        let coeff_grad = istft_adjoint(&grad_clip, &stft_cfg)?;
        ndarray::Zip::from(&mut coeffs)
            .and(coeff_grad.frames())
            .for_each(|c, &g| *c += g * cfg.lr);

        if cfg.lambda > 0.0 {
            let mut eta_time = synth(&coeffs)?.into_samples();
            apply_constraint_step(&mut eta_time, x, &cfg.constraint, cfg.lr * cfg.lambda)?;
            let eta_clip = AudioClip::new(eta_time, x.sample_rate())?;
            coeffs = stft(&eta_clip, &stft_cfg)?.into_frames();
        }
    }

    let eta_clip =
        synth(&coeffs).map_err(|_| Error::numeric("non-finite final eta".to_string()))?;
    let adversarial = x.add(&eta_clip)?;
    Ok(AttackResult {
        eta: eta_clip,
        adversarial,
        loss_trace,
        objective_trace,
        constraint_trace,
        config: cfg.clone(),
    })
}

/// Fast gradient sign method: a single sign step of the squared-error loss
/// against the stop-gradient reference, evaluated at a seed-deterministic
/// probe point `x + r0` to escape the zero-gradient stationary point.
pub fn craft_fgsm(
    model: &SeparationModel,
    x: &AudioClip,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    if cfg.method != AttackMethod::Fgsm {
        return Err(Error::parameter("craft_fgsm requires method = fgsm"));
    }
    cfg.validate()?;
    let reference = frozen_reference(model, x, cfg.target_source)?;
    let probe_noise = seeded_noise(
        x.samples().dim(),
        cfg.init_scale,
        StreamSeed::new(cfg.seed).derive("attack-init"),
    );
    let probe = AudioClip::new(x.samples() + &probe_noise, x.sample_rate())?;
    let (_, grad) = data_term(model, &probe, cfg.target_source, &reference)?;
    let eta = grad.mapv(|g| cfg.epsilon * sign(g));
    let eta_clip = AudioClip::new(eta, x.sample_rate())?;
    let adversarial = x.add(&eta_clip)?;

    // single-entry traces evaluated at the crafted perturbation
    let out = model.forward(&adversarial)?;
    let diff = out[cfg.target_source].samples() - &reference;
    let objective = -diff.iter().map(|d| d * d).sum::<f64>();
    let c_value = constraint_value(&eta_clip, x, &cfg.constraint)?;
    Ok(AttackResult {
        eta: eta_clip,
        adversarial,
        loss_trace: vec![objective + cfg.lambda * c_value],
        objective_trace: vec![objective],
        constraint_trace: vec![c_value],
        config: cfg.clone(),
    })
}

/// Projected gradient descent: iterated sign steps on the squared-error loss
/// against the stop-gradient reference, clamped to the sup-norm epsilon ball
/// of `x` after every step. Default step size `epsilon/sqrt(T)`.
pub fn craft_pgd(model: &SeparationModel, x: &AudioClip, cfg: &AttackConfig) -> Result<AttackResult> {
    if cfg.method != AttackMethod::Pgd {
        return Err(Error::parameter("craft_pgd requires method = pgd"));
    }
    cfg.validate()?;
    let reference = frozen_reference(model, x, cfg.target_source)?;
    let alpha = cfg.pgd_step();

    let init = seeded_noise(
        x.samples().dim(),
        cfg.init_scale,
        StreamSeed::new(cfg.seed).derive("attack-init"),
    );
    let start = AudioClip::new(x.samples() + &init, x.sample_rate())?;
    let mut adv = project_sup_ball(&start, x, cfg.epsilon)?;

    let mut loss_trace = Vec::with_capacity(cfg.iterations);
    let mut objective_trace = Vec::with_capacity(cfg.iterations);
    let mut constraint_trace = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        let (objective, grad) = data_term(model, &adv, cfg.target_source, &reference)?;
        if !objective.is_finite() {
            return Err(Error::numeric(format!(
                "pgd objective became non-finite at iteration {iter}"
            )));
        }
        let eta_now = adv.sub(x)?;
        let c_value = constraint_value(&eta_now, x, &cfg.constraint)?;
        loss_trace.push(objective + cfg.lambda * c_value);
        objective_trace.push(objective);
        constraint_trace.push(c_value);

        // ascend the squared error, then project back onto the epsilon ball
        let stepped = AudioClip::new(
            adv.samples() + &grad.mapv(|g| alpha * sign(g)),
            x.sample_rate(),
        )?;
        adv = project_sup_ball(&stepped, x, cfg.epsilon)?;
    }

    let eta = adv.sub(x)?;
    let adversarial = x.add(&eta)?;
    Ok(AttackResult {
        eta,
        adversarial,
        loss_trace,
        objective_trace,
        constraint_trace,
        config: cfg.clone(),
    })
}

/// Dispatch on `cfg.method`.
pub fn craft(model: &SeparationModel, x: &AudioClip, cfg: &AttackConfig) -> Result<AttackResult> {
    match cfg.method {
        AttackMethod::Gd => craft_gd(model, x, cfg),
        AttackMethod::Fgsm => craft_fgsm(model, x, cfg),
        AttackMethod::Pgd => craft_pgd(model, x, cfg),
    }
}

/// Magnitude-only resynthesis of a crafted perturbation: discard the phase of
/// `stft(eta)` and rebuild a time signal with Griffin-Lim. Mirrors crafting
/// in the frequency domain followed by phase reconstruction; the direct
/// istft path inside [`craft_gd`] is lossless and preferred.
pub fn resynthesize_eta_magnitude(
    eta: &AudioClip,
    stft_cfg: &StftConfig,
    iters: usize,
    seed: u64,
) -> Result<AudioClip> {
    let spec = stft(eta, stft_cfg)?;
    let magnitude = spec.magnitude();
    let rebuilt = griffin_lim(&magnitude, stft_cfg, iters, seed, eta.sample_rate())?;
    // canonical Griffin-Lim length is >= the true length; trim back
    rebuilt.slice_samples(0, eta.num_samples())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ArchitectureId;

    fn test_clip(len: usize, seed: u64) -> AudioClip {
        let mut rng = StreamSeed::new(seed).derive("attacks-test").rng();
        let mut data = vec![0.0f64; len];
        fill_uniform(&mut rng, &mut data, -0.5, 0.5);
        AudioClip::mono(data, 8000).unwrap()
    }

    fn small_model() -> SeparationModel {
        SeparationModel::init(ArchitectureId::MaskFreq, 2, 7).unwrap()
    }

    #[test]
    fn constraint_value_examples() {
        let x = test_clip(1024, 1);
        // eta = x under stpr: every ratio is 1, value = patch count
        let stpr = ConstraintKind::Stpr {
            patch_len: 100,
            floor: 1e-6,
        };
        let v = constraint_value(&x, &x, &stpr).unwrap();
        assert!((v - 11.0).abs() < 1e-9); // ceil(1024/100) = 11 patches

        // hand example: eta patch norms [5,10], x patch norms [10,10]
        let eta = AudioClip::mono(vec![5.0, 0.0, 10.0, 0.0], 8000).unwrap();
        let xref = AudioClip::mono(vec![10.0, 0.0, 10.0, 0.0], 8000).unwrap();
        let stpr2 = ConstraintKind::Stpr {
            patch_len: 2,
            floor: 1e-6,
        };
        let v2 = constraint_value(&eta, &xref, &stpr2).unwrap();
        assert!((v2 - 1.5).abs() < 1e-12);

        // eta = 0 gives 0 for all kinds
        let zero = AudioClip::zeros(1, 1024, 8000).unwrap();
        for kind in [ConstraintKind::L2, ConstraintKind::Sup, stpr] {
            assert_eq!(constraint_value(&zero, &x, &kind).unwrap(), 0.0);
        }
    }

    #[test]
    fn constraint_gradients_match_finite_differences() {
        let x = test_clip(64, 3);
        let eta = test_clip(64, 4).scale(0.3).unwrap();
        let kinds = [
            ConstraintKind::L2,
            ConstraintKind::Stpr {
                patch_len: 16,
                floor: 1e-6,
            },
        ];
        let h = 1e-7;
        for kind in kinds {
            let g = constraint_gradient(eta.samples(), &x, &kind).unwrap();
            for i in (0..64).step_by(7) {
                let mut plus = eta.samples().clone();
                plus[[0, i]] += h;
                let mut minus = eta.samples().clone();
                minus[[0, i]] -= h;
                let cp =
                    constraint_value(&AudioClip::new(plus, 8000).unwrap(), &x, &kind).unwrap();
                let cm =
                    constraint_value(&AudioClip::new(minus, 8000).unwrap(), &x, &kind).unwrap();
                let fd = (cp - cm) / (2.0 * h);
                assert!(
                    (fd - g[[0, i]]).abs() < 1e-5,
                    "{kind:?} sample {i}: fd {fd} vs {n}",
                    n = g[[0, i]]
                );
            }
        }
    }

    #[test]
    fn project_sup_ball_contract() {
        let center = test_clip(128, 5);
        let inside = project_sup_ball(&center, &center, 0.1).unwrap();
        assert_eq!(inside.samples(), center.samples());

        let pushed = center
            .add(&AudioClip::new(Array2::from_elem((1, 128), 0.2), 8000).unwrap())
            .unwrap();
        let clamped = project_sup_ball(&pushed, &center, 0.1).unwrap();
        let eta = clamped.sub(&center).unwrap();
        assert!(eta.samples().iter().all(|&v| (v - 0.1).abs() < 1e-15));

        let twice = project_sup_ball(&clamped, &center, 0.1).unwrap();
        assert_eq!(twice.samples(), clamped.samples());
    }

    #[test]
    fn fgsm_alphabet_and_sup_norm() {
        let model = small_model();
        let x = test_clip(1500, 11);
        let mut cfg = AttackConfig::new(AttackMethod::Fgsm);
        cfg.epsilon = 0.05;
        cfg.seed = 3;
        let result = craft_fgsm(&model, &x, &cfg).unwrap();
        let eps = cfg.epsilon;
        for &v in result.eta.samples().iter() {
            assert!(
                v == eps || v == -eps || v == 0.0,
                "eta value {v} not in {{-eps, 0, +eps}}"
            );
        }
        assert_eq!(result.eta.max_abs(), eps);
        assert_eq!(result.loss_trace.len(), 1);
        // adversarial = x + eta exactly
        let recon = x.add(&result.eta).unwrap();
        assert_eq!(recon.samples(), result.adversarial.samples());
    }

    #[test]
    fn pgd_projection_invariant_at_every_iterate() {
        let model = small_model();
        let x = test_clip(1500, 13);
        let mut cfg = AttackConfig::new(AttackMethod::Pgd);
        cfg.epsilon = 0.02;
        cfg.iterations = 8;
        cfg.constraint = ConstraintKind::Sup;
        cfg.init_scale = 0.05; // deliberately larger than epsilon
        cfg.seed = 5;
        let result = craft_pgd(&model, &x, &cfg).unwrap();
        assert_eq!(result.constraint_trace.len(), 8);
        for (i, &c) in result.constraint_trace.iter().enumerate() {
            assert!(c <= cfg.epsilon + 1e-9, "iterate {i}: sup {c}");
        }
        assert!(result.eta.max_abs() <= cfg.epsilon + 1e-9);
        // default step size
        assert!((cfg.pgd_step() - cfg.epsilon / (8.0f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gd_huge_lambda_shrinks_eta_to_nothing() {
        let model = small_model();
        let x = test_clip(1500, 17);
        let mut cfg = AttackConfig::new(AttackMethod::Gd);
        cfg.lambda = 1e9;
        cfg.iterations = 5;
        cfg.lr = 1e-3;
        cfg.init_scale = 1e-4;
        cfg.constraint = ConstraintKind::L2;
        let result = craft_gd(&model, &x, &cfg).unwrap();
        let bound = cfg.init_scale * (x.num_samples() as f64).sqrt();
        assert!(
            result.eta.l2_norm() < bound,
            "eta norm {} not below {bound}",
            result.eta.l2_norm()
        );
        assert!(result.loss_trace.last().unwrap() <= &result.loss_trace[0]);
    }

    #[test]
    fn gd_loss_decreases_and_is_deterministic() {
        let model = small_model();
        let x = test_clip(1500, 19);
        let mut cfg = AttackConfig::new(AttackMethod::Gd);
        cfg.iterations = 10;
        cfg.lr = 0.05;
        cfg.lambda = 0.5;
        cfg.seed = 21;
        let a = craft_gd(&model, &x, &cfg).unwrap();
        let b = craft_gd(&model, &x, &cfg).unwrap();
        assert_eq!(a.eta.samples(), b.eta.samples());
        assert_eq!(a.loss_trace, b.loss_trace);
        assert!(a.loss_trace.last().unwrap() <= &a.loss_trace[0]);
        assert_eq!(a.loss_trace.len(), 10);
    }

    #[test]
    fn gd_frequency_domain_runs_and_reduces_loss() {
        let model = small_model();
        let x = test_clip(1500, 23);
        let mut cfg = AttackConfig::new(AttackMethod::Gd);
        cfg.domain = CraftDomain::Frequency;
        cfg.iterations = 10;
        cfg.lr = 0.02;
        cfg.lambda = 0.1;
        cfg.constraint = ConstraintKind::stpr_for_rate(8000);
        let result = craft_gd(&model, &x, &cfg).unwrap();
        assert!(result.loss_trace.last().unwrap() <= &result.loss_trace[0]);
        let recon = x.add(&result.eta).unwrap();
        assert_eq!(recon.samples(), result.adversarial.samples());
    }

    #[test]
    fn paper_protocol_configs_are_valid() {
        // GD: 300 iterations with the published lambda grid
        for lambda in [90.0, 170.0, 290.0, 500.0] {
            let mut cfg = AttackConfig::new(AttackMethod::Gd);
            cfg.iterations = 300;
            cfg.lambda = lambda;
            cfg.constraint = ConstraintKind::stpr_for_rate(44100);
            cfg.validate().unwrap();
        }
        // FGSM/PGD: the published epsilon grid
        for epsilon in [0.05, 0.1, 0.2, 0.5] {
            for method in [AttackMethod::Fgsm, AttackMethod::Pgd] {
                let mut cfg = AttackConfig::new(method);
                cfg.epsilon = epsilon;
                cfg.validate().unwrap();
            }
        }
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = AttackConfig::new(AttackMethod::Pgd);
        cfg.epsilon = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg = AttackConfig::new(AttackMethod::Gd);
        cfg.lambda = -1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = AttackConfig::new(AttackMethod::Fgsm);
        cfg.domain = CraftDomain::Frequency;
        assert!(cfg.validate().is_err());

        let mut cfg = AttackConfig::new(AttackMethod::Gd);
        cfg.iterations = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn attack_config_round_trips_through_json() {
        let mut cfg = AttackConfig::new(AttackMethod::Gd);
        cfg.constraint = ConstraintKind::Stpr {
            patch_len: 372,
            floor: 1e-6,
        };
        cfg.lambda = 90.0;
        let json = serde_json::to_string(&cfg).unwrap();
        let back: AttackConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn trace_csv_is_written() {
        let model = small_model();
        let x = test_clip(1200, 29);
        let mut cfg = AttackConfig::new(AttackMethod::Gd);
        cfg.iterations = 3;
        let result = craft_gd(&model, &x, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        result.write_trace_csv(&path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert_eq!(body.lines().count(), 4); // header + 3 iterations
    }

    #[test]
    fn griffin_lim_resynthesis_keeps_shape() {
        let eta = test_clip(1600, 31).scale(0.01).unwrap();
        let cfg = StftConfig::default();
        let rebuilt = resynthesize_eta_magnitude(&eta, &cfg, 8, 3).unwrap();
        assert_eq!(rebuilt.num_samples(), eta.num_samples());
        assert_eq!(rebuilt.channels(), 1);
    }
}
