//! Experiment orchestration: white-box method sweeps, white/gray/black-box
//! transfer studies, and untargeted-source effect tables.
//!
//! Crafting happens exactly once per (clip, attack config) on the source
//! model; every target consumes the identical perturbation, which is
//! checksum-verified in the report rows. Clip x config jobs run in parallel;
//! report assembly is a deterministic reduce ordered by
//! (clip id, config id, target label). Failed attacks never abort a sweep:
//! their rows are flagged and excluded from medians.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{craft, AttackConfig, AttackMethod, AttackResult};
use crate::audio::{AudioClip, SourceSet};
use crate::error::{Error, Result};
use crate::metrics::{di, ds, dsa, median, GroundMetric};
use crate::models::SeparationModel;
use crate::parallel;

/// Adversary knowledge for a (source, target) model pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    White,
    Gray,
    Black,
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Condition::White => write!(f, "white"),
            Condition::Gray => write!(f, "gray"),
            Condition::Black => write!(f, "black"),
        }
    }
}

/// A labelled model acting as an attack target under a declared condition.
#[derive(Debug, Clone)]
pub struct TargetRef {
    pub label: String,
    pub model: SeparationModel,
    pub condition: Condition,
}

/// DI-matching policy: tune lambda (GD) or epsilon (FGSM/PGD) by bisection
/// until `DI` lands within `tolerance_db` of `target_db`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DiMatch {
    pub target_db: f64,
    #[serde(default = "default_di_tolerance")]
    pub tolerance_db: f64,
    #[serde(default = "default_di_steps")]
    pub max_steps: usize,
}

fn default_di_tolerance() -> f64 {
    1.0
}
fn default_di_steps() -> usize {
    12
}

/// The full experiment matrix: clips, a source model, labelled targets with
/// declared conditions, an attack grid, and the metrics to evaluate.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub clips: Vec<(String, SourceSet)>,
    pub source_label: String,
    pub source_model: SeparationModel,
    pub targets: Vec<TargetRef>,
    pub attack_grid: Vec<AttackConfig>,
    pub metrics: Vec<GroundMetric>,
    pub di_match: Option<DiMatch>,
}

impl ExperimentPlan {
    /// Structural validation, including the condition taxonomy: white needs
    /// the identical model, gray the same architecture with different
    /// weights, black a different architecture.
    pub fn validate(&self) -> Result<()> {
        if self.clips.is_empty() {
            return Err(Error::PlanValidation("plan has no clips".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::PlanValidation("plan names no metrics".into()));
        }
        for cfg in &self.attack_grid {
            cfg.validate()
                .map_err(|e| Error::PlanValidation(format!("attack config: {e}")))?;
            if cfg.target_source >= self.source_model.num_sources() {
                return Err(Error::PlanValidation(format!(
                    "attack target_source {} out of range",
                    cfg.target_source
                )));
            }
        }
        for (id, set) in &self.clips {
            if set.num_sources() != self.source_model.num_sources() {
                return Err(Error::PlanValidation(format!(
                    "clip '{id}' has {} sources, source model separates {}",
                    set.num_sources(),
                    self.source_model.num_sources()
                )));
            }
        }
        for target in &self.targets {
            let same_arch = target.model.architecture() == self.source_model.architecture();
            let same_weights = target.model.same_weights(&self.source_model);
            let ok = match target.condition {
                Condition::White => same_arch && same_weights,
                Condition::Gray => same_arch && !same_weights,
                Condition::Black => !same_arch,
            };
            if !ok {
                return Err(Error::PlanValidation(format!(
                    "target '{}' declared {} but architecture/weight relation does not match",
                    target.label, target.condition
                )));
            }
            if target.model.num_sources() != self.source_model.num_sources() {
                return Err(Error::PlanValidation(format!(
                    "target '{}' separates a different number of sources",
                    target.label
                )));
            }
        }
        Ok(())
    }
}

/// One evaluated (clip, attack config, target) cell.
#[derive(Debug, Clone)]
pub struct TransferRow {
    pub condition: Condition,
    pub source_label: String,
    pub target_label: String,
    pub clip_id: String,
    pub config_id: String,
    pub method: AttackMethod,
    pub di_db: f64,
    /// DS per requested ground metric, in plan order.
    pub ds_db: Vec<(GroundMetric, f64)>,
    pub dsa_db: f64,
    pub eta_sha256: String,
    /// Whether DI landed inside the matching tolerance (when enabled).
    pub di_matched: Option<bool>,
    pub failed: bool,
    pub note: String,
}

/// Rows plus bookkeeping for an experiment run.
#[derive(Debug, Clone, Default)]
pub struct TransferReport {
    pub rows: Vec<TransferRow>,
    pub failed_rows: usize,
}

impl TransferReport {
    /// Median DS (dB) over the non-failed rows of a condition and metric.
    pub fn median_ds(&self, condition: Condition, metric: GroundMetric) -> Option<f64> {
        let values: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| !r.failed && r.condition == condition)
            .filter_map(|r| {
                r.ds_db
                    .iter()
                    .find(|(m, _)| *m == metric)
                    .map(|(_, v)| *v)
            })
            .filter(|v| v.is_finite())
            .collect();
        median(&values)
    }

    /// Median DS per (method, config id), for noise-level sweep curves.
    pub fn median_ds_by_config(
        &self,
        condition: Condition,
        metric: GroundMetric,
    ) -> Vec<(String, f64, f64)> {
        let mut configs: Vec<String> = self
            .rows
            .iter()
            .filter(|r| r.condition == condition)
            .map(|r| r.config_id.clone())
            .collect();
        configs.sort();
        configs.dedup();
        configs
            .into_iter()
            .filter_map(|cfg_id| {
                let rows: Vec<&TransferRow> = self
                    .rows
                    .iter()
                    .filter(|r| !r.failed && r.condition == condition && r.config_id == cfg_id)
                    .collect();
                let ds_values: Vec<f64> = rows
                    .iter()
                    .filter_map(|r| {
                        r.ds_db
                            .iter()
                            .find(|(m, _)| *m == metric)
                            .map(|(_, v)| *v)
                    })
                    .filter(|v| v.is_finite())
                    .collect();
                let di_values: Vec<f64> = rows
                    .iter()
                    .map(|r| r.di_db)
                    .filter(|v| v.is_finite())
                    .collect();
                match (median(&di_values), median(&ds_values)) {
                    (Some(di_med), Some(ds_med)) => Some((cfg_id, di_med, ds_med)),
                    _ => None,
                }
            })
            .collect()
    }

    /// CSV export, one row per evaluated cell.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        writeln!(
            w,
            "condition,source,target,clip_id,config_id,method,di_db,{},dsa_db,eta_sha256,di_matched,failed,note",
            metric_columns(&self.rows)
        )?;
        for r in &self.rows {
            let ds_cols: String = r
                .ds_db
                .iter()
                .map(|(_, v)| fmt_db(*v))
                .collect::<Vec<_>>()
                .join(",");
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.condition,
                r.source_label,
                r.target_label,
                r.clip_id,
                r.config_id,
                r.method,
                fmt_db(r.di_db),
                ds_cols,
                fmt_db(r.dsa_db),
                r.eta_sha256,
                r.di_matched.map(|b| b.to_string()).unwrap_or_default(),
                r.failed,
                r.note.replace(',', ";")
            )?;
        }
        w.flush()?;
        Ok(())
    }

    /// Summary JSON with per-condition medians.
    pub fn summary_json(&self, metrics: &[GroundMetric]) -> serde_json::Value {
        let mut conditions = serde_json::Map::new();
        for condition in [Condition::White, Condition::Gray, Condition::Black] {
            let mut per_metric = serde_json::Map::new();
            for metric in metrics {
                if let Some(v) = self.median_ds(condition, *metric) {
                    per_metric.insert(format!("ds_{metric}_db"), serde_json::json!(v));
                }
            }
            if !per_metric.is_empty() {
                conditions.insert(condition.to_string(), serde_json::Value::Object(per_metric));
            }
        }
        serde_json::json!({
            "rows": self.rows.len(),
            "failed_rows": self.failed_rows,
            "median_ds_by_condition": conditions,
        })
    }
}

fn metric_columns(rows: &[TransferRow]) -> String {
    match rows.first() {
        Some(r) => r
            .ds_db
            .iter()
            .map(|(m, _)| format!("ds_{m}_db"))
            .collect::<Vec<_>>()
            .join(","),
        None => "ds_sdr_db".into(),
    }
}

fn fmt_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.4}")
    }
}

fn sha256_of_clip(clip: &AudioClip) -> String {
    let mut hasher = Sha256::new();
    hasher.update((clip.channels() as u64).to_le_bytes());
    hasher.update((clip.num_samples() as u64).to_le_bytes());
    for v in clip.samples().iter() {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Tune one attack so its DI lands near `policy.target_db`, by bisection over
/// lambda (GD) or epsilon (FGSM/PGD) in log space after bracketing by
/// repeated x4 expansion. DI is monotone in the tuned parameter: increasing
/// in lambda (stronger regularization, weaker noise), decreasing in epsilon.
/// Returns the matched config, its attack result, and the achieved DI; if the
/// target cannot be bracketed the closest run is returned with a warning.
pub fn match_di(
    model: &SeparationModel,
    set: &SourceSet,
    base: &AttackConfig,
    policy: &DiMatch,
) -> Result<(AttackConfig, AttackResult, f64)> {
    let x = set.mixture();
    let run = |param: f64| -> Result<(AttackConfig, AttackResult, f64)> {
        let mut cfg = base.clone();
        match cfg.method {
            AttackMethod::Gd => cfg.lambda = param,
            AttackMethod::Fgsm | AttackMethod::Pgd => cfg.epsilon = param,
        }
        let result = craft(model, x, &cfg)?;
        let di_db = di(x, &result.eta)?;
        Ok((cfg, result, di_db))
    };
    // di rises with the parameter for GD (lambda), falls for FGSM/PGD (eps)
    let rising = base.method == AttackMethod::Gd;

    let p0 = match base.method {
        AttackMethod::Gd => {
            if base.lambda > 0.0 {
                base.lambda
            } else {
                1e-3
            }
        }
        _ => base.epsilon,
    };
    let mut best = run(p0)?;
    if (best.2 - policy.target_db).abs() <= policy.tolerance_db {
        return Ok(best);
    }

    // bracket the target
    let mut lo = (p0, best.2);
    let mut hi = (p0, best.2);
    let needs_higher_di = best.2 < policy.target_db;
    let grow_param = needs_higher_di == rising;
    let mut probe = p0;
    let mut bracketed = false;
    for _ in 0..10 {
        probe = if grow_param { probe * 4.0 } else { probe / 4.0 };
        let candidate = run(probe)?;
        if (candidate.2 - policy.target_db).abs() < (best.2 - policy.target_db).abs() {
            best = candidate.clone();
        }
        if (candidate.2 - policy.target_db).abs() <= policy.tolerance_db {
            return Ok(candidate);
        }
        let straddles = (candidate.2 < policy.target_db) != needs_higher_di;
        if straddles {
            if grow_param {
                hi = (probe, candidate.2);
            } else {
                lo = (probe, candidate.2);
            }
            bracketed = true;
            break;
        }
        if grow_param {
            lo = (probe, candidate.2);
        } else {
            hi = (probe, candidate.2);
        }
    }
    if !bracketed {
        log::warn!(
            "di matching could not bracket {} dB (best {:.2} dB); keeping closest run",
            policy.target_db,
            best.2
        );
        return Ok(best);
    }
    let (mut lo_p, mut hi_p) = if lo.0 < hi.0 { (lo.0, hi.0) } else { (hi.0, lo.0) };

    for _ in 0..policy.max_steps {
        // geometric midpoint
        let mid = ((lo_p.ln() + hi_p.ln()) / 2.0).exp();
        let candidate = run(mid)?;
        if (candidate.2 - policy.target_db).abs() < (best.2 - policy.target_db).abs() {
            best = candidate.clone();
        }
        if (candidate.2 - policy.target_db).abs() <= policy.tolerance_db {
            return Ok(candidate);
        }
        // decide which side of the bracket to keep
        let candidate_low_di = candidate.2 < policy.target_db;
        let low_param_gives_low_di = rising;
        if candidate_low_di == low_param_gives_low_di {
            lo_p = mid;
        } else {
            hi_p = mid;
        }
    }
    Ok(best)
}

struct CraftedJob {
    clip_idx: usize,
    config_idx: usize,
    result: Result<(AttackConfig, AttackResult, f64, Option<bool>)>,
}

// Craft once per (clip, config) on the source model, in parallel.
fn craft_all(plan: &ExperimentPlan) -> Vec<CraftedJob> {
    let jobs: Vec<(usize, usize)> = (0..plan.clips.len())
        .flat_map(|ci| (0..plan.attack_grid.len()).map(move |gi| (ci, gi)))
        .collect();
    parallel::par_map(&jobs, |&(clip_idx, config_idx)| {
        let set = &plan.clips[clip_idx].1;
        let base = &plan.attack_grid[config_idx];
        let result = (|| {
            let (cfg, result, di_db) = match &plan.di_match {
                Some(policy) => match_di(&plan.source_model, set, base, policy)?,
                None => {
                    let result = craft(&plan.source_model, set.mixture(), base)?;
                    let di_db = di(set.mixture(), &result.eta)?;
                    (base.clone(), result, di_db)
                }
            };
            let matched = plan
                .di_match
                .as_ref()
                .map(|p| (di_db - p.target_db).abs() <= p.tolerance_db);
            Ok((cfg, result, di_db, matched))
        })();
        CraftedJob {
            clip_idx,
            config_idx,
            result,
        }
    })
}

fn evaluate_row(
    plan: &ExperimentPlan,
    target: &TargetRef,
    clip_idx: usize,
    config_idx: usize,
    cfg: &AttackConfig,
    attack: &AttackResult,
    di_db: f64,
    matched: Option<bool>,
) -> TransferRow {
    let (clip_id, set) = &plan.clips[clip_idx];
    let config_id = format!("{}-{config_idx}", cfg.method);
    let base_row = TransferRow {
        condition: target.condition,
        source_label: plan.source_label.clone(),
        target_label: target.label.clone(),
        clip_id: clip_id.clone(),
        config_id,
        method: cfg.method,
        di_db,
        ds_db: Vec::new(),
        dsa_db: f64::NAN,
        eta_sha256: sha256_of_clip(&attack.eta),
        di_matched: matched,
        failed: false,
        note: String::new(),
    };
    let filled = (|| -> Result<TransferRow> {
        let mut row = base_row.clone();
        let x = set.mixture();
        let y = set.source(cfg.target_source);
        let sep_clean = &target.model.forward(x)?[cfg.target_source];
        let sep_adv = &target.model.forward(&attack.adversarial)?[cfg.target_source];
        for metric in &plan.metrics {
            let value = ds(
                *metric,
                y,
                sep_clean,
                sep_adv,
                Some(set),
                cfg.target_source,
            )?;
            row.ds_db.push((*metric, value.db));
        }
        row.dsa_db = dsa(y, sep_clean, &attack.eta)?.db;
        Ok(row)
    })();
    match filled {
        Ok(row) => row,
        Err(e) => {
            let mut row = base_row;
            row.failed = true;
            row.note = format!("evaluation failed: {e}");
            row
        }
    }
}

fn assemble(
    plan: &ExperimentPlan,
    crafted: Vec<CraftedJob>,
    targets: &[TargetRef],
) -> TransferReport {
    let mut rows = Vec::new();
    let mut failed_rows = 0usize;
    for job in crafted {
        match &job.result {
            Ok((cfg, attack, di_db, matched)) => {
                for target in targets {
                    let row = evaluate_row(
                        plan,
                        target,
                        job.clip_idx,
                        job.config_idx,
                        cfg,
                        attack,
                        *di_db,
                        *matched,
                    );
                    if row.failed {
                        failed_rows += 1;
                    }
                    rows.push(row);
                }
            }
            Err(e) => {
                // flag one row per target so the failure stays visible
                let (clip_id, _) = &plan.clips[job.clip_idx];
                let base = &plan.attack_grid[job.config_idx];
                for target in targets {
                    failed_rows += 1;
                    rows.push(TransferRow {
                        condition: target.condition,
                        source_label: plan.source_label.clone(),
                        target_label: target.label.clone(),
                        clip_id: clip_id.clone(),
                        config_id: format!("{}-{}", base.method, job.config_idx),
                        method: base.method,
                        di_db: f64::NAN,
                        ds_db: Vec::new(),
                        dsa_db: f64::NAN,
                        eta_sha256: String::new(),
                        di_matched: None,
                        failed: true,
                        note: format!("attack failed: {e}"),
                    });
                }
            }
        }
    }
    rows.sort_by(|a, b| {
        (&a.clip_id, &a.config_id, &a.target_label).cmp(&(&b.clip_id, &b.config_id, &b.target_label))
    });
    TransferReport { rows, failed_rows }
}

/// White-box sweep: craft and evaluate on the source model itself, one row
/// per (clip, attack config). An empty attack grid yields an empty report
/// with a warning.
pub fn run_whitebox(plan: &ExperimentPlan) -> Result<TransferReport> {
    plan.validate()?;
    if plan.attack_grid.is_empty() {
        log::warn!("run_whitebox: empty attack grid, empty report");
        return Ok(TransferReport::default());
    }
    let crafted = craft_all(plan);
    let white_target = [TargetRef {
        label: plan.source_label.clone(),
        model: plan.source_model.clone(),
        condition: Condition::White,
    }];
    Ok(assemble(plan, crafted, &white_target))
}

/// Transfer study: craft once per (clip, config) on the source model, then
/// evaluate the identical perturbation on every declared target.
pub fn run_transfer(plan: &ExperimentPlan) -> Result<TransferReport> {
    plan.validate()?;
    if plan.targets.is_empty() {
        return Err(Error::PlanValidation(
            "run_transfer needs at least one target".into(),
        ));
    }
    if plan.attack_grid.is_empty() {
        log::warn!("run_transfer: empty attack grid, empty report");
        return Ok(TransferReport::default());
    }
    let crafted = craft_all(plan);
    Ok(assemble(plan, crafted, &plan.targets))
}

/// Per-source DS table for an attack aimed at one source.
#[derive(Debug, Clone)]
pub struct UntargetedReport {
    pub target_source: usize,
    pub source_names: Vec<String>,
    /// (clip id, per-source DS_SDR in dB)
    pub rows: Vec<(String, Vec<f64>)>,
}

impl UntargetedReport {
    /// Median DS over clips for one source index.
    pub fn median_ds(&self, source: usize) -> Option<f64> {
        let values: Vec<f64> = self
            .rows
            .iter()
            .map(|(_, ds)| ds[source])
            .filter(|v| v.is_finite())
            .collect();
        median(&values)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        writeln!(w, "clip_id,{}", self.source_names.join(","))?;
        for (clip, ds) in &self.rows {
            let cols: Vec<String> = ds.iter().map(|v| fmt_db(*v)).collect();
            writeln!(w, "{clip},{}", cols.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Craft against `cfg.target_source` only and report DS_SDR for every source
/// output, clip by clip.
pub fn untargeted_effects(
    model: &SeparationModel,
    clips: &[(String, SourceSet)],
    cfg: &AttackConfig,
) -> Result<UntargetedReport> {
    if model.num_sources() < 2 {
        return Err(Error::PlanValidation(
            "untargeted_effects needs a model with >= 2 sources".into(),
        ));
    }
    cfg.validate()?;
    if cfg.target_source >= model.num_sources() {
        return Err(Error::PlanValidation("target_source out of range".into()));
    }
    if clips.is_empty() {
        return Err(Error::PlanValidation("no clips given".into()));
    }

    let rows = parallel::par_map(clips, |(clip_id, set)| -> Result<(String, Vec<f64>)> {
        let x = set.mixture();
        let attack = craft(model, x, cfg)?;
        let clean = model.forward(x)?;
        let adv = model.forward(&attack.adversarial)?;
        let mut per_source = Vec::with_capacity(model.num_sources());
        for s in 0..model.num_sources() {
            let value = ds(
                GroundMetric::Sdr,
                set.source(s),
                &clean[s],
                &adv[s],
                Some(set),
                s,
            )?;
            per_source.push(value.db);
        }
        Ok((clip_id.clone(), per_source))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(UntargetedReport {
        target_source: cfg.target_source,
        source_names: model.source_names().to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{synth_source_set, SynthRecipe};
    use crate::models::ArchitectureId;

    fn toy_plan(grid: Vec<AttackConfig>) -> ExperimentPlan {
        let recipe = SynthRecipe::two_source_default(0.4, 8000);
        let clips = vec![
            ("clip0".to_string(), synth_source_set(&recipe, 100).unwrap()),
            ("clip1".to_string(), synth_source_set(&recipe, 101).unwrap()),
        ];
        let source = SeparationModel::init(ArchitectureId::MaskFreq, 2, 1).unwrap();
        let gray = SeparationModel::init(ArchitectureId::MaskFreq, 2, 2).unwrap();
        let black = SeparationModel::init(ArchitectureId::ConvTime, 2, 3).unwrap();
        ExperimentPlan {
            clips,
            source_label: "mask_A".into(),
            source_model: source.clone(),
            targets: vec![
                TargetRef {
                    label: "mask_A".into(),
                    model: source,
                    condition: Condition::White,
                },
                TargetRef {
                    label: "mask_B".into(),
                    model: gray,
                    condition: Condition::Gray,
                },
                TargetRef {
                    label: "conv_C".into(),
                    model: black,
                    condition: Condition::Black,
                },
            ],
            attack_grid: grid,
            metrics: vec![GroundMetric::Sdr],
            di_match: None,
        }
    }

    fn quick_gd() -> AttackConfig {
        let mut cfg = AttackConfig::new(AttackMethod::Gd);
        cfg.iterations = 4;
        cfg.lr = 0.05;
        cfg.seed = 9;
        cfg
    }

    #[test]
    fn condition_taxonomy_is_validated() {
        let mut plan = toy_plan(vec![quick_gd()]);
        plan.validate().unwrap();

        // declaring the gray twin as black must fail
        plan.targets[1].condition = Condition::Black;
        assert!(matches!(
            plan.validate(),
            Err(Error::PlanValidation(_))
        ));

        // declaring a different-seed model as white must fail
        let mut plan = toy_plan(vec![quick_gd()]);
        plan.targets[0].model = SeparationModel::init(ArchitectureId::MaskFreq, 2, 99).unwrap();
        assert!(plan.validate().is_err());
    }

    #[test]
    fn empty_grid_gives_empty_report() {
        let plan = toy_plan(vec![]);
        let report = run_whitebox(&plan).unwrap();
        assert!(report.rows.is_empty());
    }

    #[test]
    fn empty_target_list_is_validation_error() {
        let mut plan = toy_plan(vec![quick_gd()]);
        plan.targets.clear();
        assert!(matches!(
            run_transfer(&plan),
            Err(Error::PlanValidation(_))
        ));
    }

    #[test]
    fn transfer_reuses_one_eta_per_clip_config() {
        let plan = toy_plan(vec![quick_gd()]);
        let report = run_transfer(&plan).unwrap();
        assert_eq!(report.rows.len(), 2 * 1 * 3);
        // same (clip, config) rows share the checksum across targets
        for clip in ["clip0", "clip1"] {
            let sums: Vec<&String> = report
                .rows
                .iter()
                .filter(|r| r.clip_id == clip)
                .map(|r| &r.eta_sha256)
                .collect();
            assert_eq!(sums.len(), 3);
            assert!(sums.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn whitebox_rows_match_transfer_white_rows() {
        let plan = toy_plan(vec![quick_gd()]);
        let white = run_whitebox(&plan).unwrap();
        let transfer = run_transfer(&plan).unwrap();
        for row in &white.rows {
            let twin = transfer
                .rows
                .iter()
                .find(|r| {
                    r.condition == Condition::White
                        && r.clip_id == row.clip_id
                        && r.config_id == row.config_id
                })
                .expect("white row present in transfer report");
            assert_eq!(row.eta_sha256, twin.eta_sha256);
            assert_eq!(row.ds_db, twin.ds_db);
            assert_eq!(row.di_db, twin.di_db);
        }
    }

    #[test]
    fn untargeted_effects_zero_eta_gives_zero_ds() {
        let model = SeparationModel::init(ArchitectureId::MaskFreq, 2, 1).unwrap();
        let recipe = SynthRecipe::two_source_default(0.4, 8000);
        let clips = vec![("c".to_string(), synth_source_set(&recipe, 5).unwrap())];
        let mut cfg = quick_gd();
        cfg.init_scale = 0.0; // eta stays exactly zero: f(x+0) == f(x)
        let report = untargeted_effects(&model, &clips, &cfg).unwrap();
        for (_, ds) in &report.rows {
            for &v in ds {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn untargeted_effects_rejects_single_source_model() {
        let model = SeparationModel::init(ArchitectureId::MaskFreq, 1, 1).unwrap();
        let recipe = SynthRecipe::two_source_default(0.4, 8000);
        let clips = vec![("c".to_string(), synth_source_set(&recipe, 5).unwrap())];
        assert!(untargeted_effects(&model, &clips, &quick_gd()).is_err());
    }

    #[test]
    fn report_csv_written_and_ordered() {
        let plan = toy_plan(vec![quick_gd()]);
        let report = run_transfer(&plan).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transfer.csv");
        report.write_csv(&path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert_eq!(body.lines().count(), 1 + report.rows.len());
        // rows sorted by (clip, config, target label)
        let ordered: Vec<(String, String, String)> = report
            .rows
            .iter()
            .map(|r| (r.clip_id.clone(), r.config_id.clone(), r.target_label.clone()))
            .collect();
        let mut sorted = ordered.clone();
        sorted.sort();
        assert_eq!(ordered, sorted);
    }
}
