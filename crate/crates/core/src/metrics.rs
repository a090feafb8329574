//! Ground metrics (SDR, scalar-projection SIR) and the degradation metrics
//! DS/DI/DSA, with median-of-medians aggregation.
//!
//! SIR here is the filter-order-1 simplification of the BSSEval family: the
//! estimate is projected onto the target source by a single scalar
//! coefficient and the remainder onto the orthogonalized span of the
//! non-target sources. Every report header carries this caveat.
//!
//! Metric values are dB and may be the `+inf`/`-inf` sentinels (zero residual
//! and zero target projection respectively). Degradation arithmetic that
//! touches a sentinel saturates and sets an explicit flag rather than
//! silently producing huge finite numbers.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, SourceSet};
use crate::error::{Error, Result};
use crate::parallel;

/// Note attached to every serialized report.
pub const SIR_CAVEAT: &str =
    "SIR is a scalar-projection simplification (no distortion filters)";

/// Ground metric choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundMetric {
    Sdr,
    Sir,
}

impl std::fmt::Display for GroundMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GroundMetric::Sdr => write!(f, "sdr"),
            GroundMetric::Sir => write!(f, "sir"),
        }
    }
}

/// Which degradation a report describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Ds,
    Di,
    Dsa,
    /// Raw ground-metric aggregation (no differencing).
    Ground,
}

impl std::fmt::Display for Quantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Quantity::Ds => write!(f, "ds"),
            Quantity::Di => write!(f, "di"),
            Quantity::Dsa => write!(f, "dsa"),
            Quantity::Ground => write!(f, "ground"),
        }
    }
}

/// A degradation value in dB plus a saturation flag set when sentinel
/// arithmetic (`inf - finite` etc.) occurred.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Degradation {
    pub db: f64,
    pub saturated: bool,
}


/// Signal-to-distortion ratio `10*log10(||ref||^2 / ||ref - est||^2)` in dB.
///
/// Returns `+inf` when the residual is exactly zero and `-inf` when the
/// reference is all-zero but the estimate is not; errors when both are zero.
pub fn sdr(reference: &AudioClip, estimate: &AudioClip) -> Result<f64> {
    if !reference.same_shape(estimate) {
        return Err(Error::parameter("sdr: shape mismatch"));
    }
    let ref_energy = reference.energy();
    let resid_energy: f64 = reference
        .samples()
        .iter()
        .zip(estimate.samples().iter())
        .map(|(r, e)| {
            let d = r - e;
            d * d
        })
        .sum();
    if ref_energy == 0.0 && resid_energy == 0.0 {
        return Err(Error::UndefinedMetric(
            "sdr of two all-zero signals".into(),
        ));
    }
    if resid_energy == 0.0 {
        return Ok(f64::INFINITY);
    }
    if ref_energy == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (ref_energy / resid_energy).log10())
}

/// Scalar-projection signal-to-interference ratio.
///
/// The estimate is projected onto the target source; the remainder is
/// projected onto the Gram-Schmidt-orthogonalized span of the other sources.
/// `SIR = 10*log10(||s_target||^2 / ||e_interf||^2)`; `+inf` when the
/// interference component vanishes, `-inf` when the target projection does.
pub fn sir(sources: &SourceSet, target_index: usize, estimate: &AudioClip) -> Result<f64> {
    if sources.num_sources() < 2 {
        return Err(Error::parameter("sir needs at least 2 sources"));
    }
    if target_index >= sources.num_sources() {
        return Err(Error::parameter("sir target index out of range"));
    }
    if !estimate.same_shape(sources.source(0)) {
        return Err(Error::parameter("sir: estimate shape mismatch"));
    }

    let est = estimate.flat();
    let target = sources.source(target_index).flat();
    let target_energy: f64 = dot(&target, &target);
    if target_energy == 0.0 {
        return Err(Error::UndefinedMetric("sir: target source is silent".into()));
    }

    let coeff = dot(&est, &target) / target_energy;
    let target_part_energy = coeff * coeff * target_energy;

    let mut resid: Vec<f64> = est
        .iter()
        .zip(target.iter())
        .map(|(e, t)| e - coeff * t)
        .collect();

    // Gram-Schmidt over the non-target sources; dependence check per vector.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..sources.num_sources() {
        if i == target_index {
            continue;
        }
        let mut v = sources.source(i).flat();
        let orig_norm = dot(&v, &v).sqrt();
        if orig_norm == 0.0 {
            return Err(Error::UndefinedMetric(format!(
                "sir: source '{}' is silent",
                sources.source_name(i)
            )));
        }
        for b in &basis {
            let c = dot(&v, b);
            for (vv, bv) in v.iter_mut().zip(b.iter()) {
                *vv -= c * bv;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm < 1e-10 * orig_norm {
            return Err(Error::UndefinedMetric(format!(
                "sir: source '{}' is linearly dependent on the others",
                sources.source_name(i)
            )));
        }
        for vv in v.iter_mut() {
            *vv /= norm;
        }
        basis.push(v);
    }

    let mut interf = vec![0.0f64; resid.len()];
    for b in &basis {
        let c = dot(&resid, b);
        for (iv, bv) in interf.iter_mut().zip(b.iter()) {
            *iv += c * bv;
        }
    }
    let interf_energy = dot(&interf, &interf);
    let _ = &mut resid;

    if target_part_energy == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if interf_energy == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (target_part_energy / interf_energy).log10())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn metric_value(
    metric: GroundMetric,
    reference: &AudioClip,
    estimate: &AudioClip,
    sources: Option<&SourceSet>,
    target_index: usize,
) -> Result<f64> {
    match metric {
        GroundMetric::Sdr => sdr(reference, estimate),
        GroundMetric::Sir => {
            let sources = sources.ok_or_else(|| {
                Error::parameter("sir requires the SourceSet of references")
            })?;
            sir(sources, target_index, estimate)
        }
    }
}

// Sentinel-aware difference a - b with saturation flags.
fn saturating_diff(a: f64, b: f64) -> Result<Degradation> {
    if a.is_infinite() && b.is_infinite() && a == b {
        return Err(Error::UndefinedMetric(
            "degradation of two like-signed infinite metrics".into(),
        ));
    }
    let db = a - b;
    Ok(Degradation {
        db,
        saturated: a.is_infinite() || b.is_infinite(),
    })
}

/// Degradation of separation: `metric(y, sep_clean) - metric(y, sep_adv)`.
/// `sources` is required for SIR.
pub fn ds(
    metric: GroundMetric,
    y: &AudioClip,
    sep_clean: &AudioClip,
    sep_adv: &AudioClip,
    sources: Option<&SourceSet>,
    target_index: usize,
) -> Result<Degradation> {
    let clean = metric_value(metric, y, sep_clean, sources, target_index)?;
    let adv = metric_value(metric, y, sep_adv, sources, target_index)?;
    saturating_diff(clean, adv)
}

/// Degradation of input: `SDR(x, x + eta)`, computed in closed form as
/// `10*log10(||x||^2 / ||eta||^2)` (the residual of `(x, x+eta)` is `eta`).
pub fn di(x: &AudioClip, eta: &AudioClip) -> Result<f64> {
    if !x.same_shape(eta) {
        return Err(Error::parameter("di: shape mismatch"));
    }
    let x_energy = x.energy();
    let eta_energy = eta.energy();
    if x_energy == 0.0 && eta_energy == 0.0 {
        return Err(Error::UndefinedMetric("di of all-zero signals".into()));
    }
    if eta_energy == 0.0 {
        return Ok(f64::INFINITY);
    }
    if x_energy == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (x_energy / eta_energy).log10())
}

/// Degradation of separation with additive noise:
/// `SDR(y, sep_clean) - SDR(y, sep_clean + eta)`.
pub fn dsa(y: &AudioClip, sep_clean: &AudioClip, eta: &AudioClip) -> Result<Degradation> {
    let noisy = sep_clean.add(eta)?;
    let clean = sdr(y, sep_clean)?;
    let with_noise = sdr(y, &noisy)?;
    saturating_diff(clean, with_noise)
}

/// Signals needed to evaluate one track's ground metric per frame.
#[derive(Debug, Clone)]
pub enum TrackSignals {
    Sdr {
        reference: AudioClip,
        estimate: AudioClip,
    },
    Sir {
        sources: SourceSet,
        target_index: usize,
        estimate: AudioClip,
    },
}

/// One track's frame series: `None` marks frames where the metric is
/// undefined (skipped and counted, per the aggregation contract).
#[derive(Debug, Clone)]
pub struct FrameSeries {
    pub track_id: String,
    pub values: Vec<Option<f64>>,
}

/// Per-track summary inside a [`MetricsReport`].
#[derive(Debug, Clone, Serialize)]
pub struct TrackSummary {
    pub track_id: String,
    pub frame_values: Vec<f64>,
    pub track_median: f64,
    pub skipped_frames: usize,
}

/// Median-of-medians report: frame values per track, per-track medians, and
/// the global median over track medians.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub quantity: Quantity,
    pub metric: GroundMetric,
    pub per_track: Vec<TrackSummary>,
    pub global_median: f64,
    pub skipped_tracks: usize,
    pub caveat: &'static str,
}

/// Exact median; an even count averages the central pair. Values may include
/// the infinite sentinels, never NaN.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in metric values"));
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Aggregate pre-computed frame series by median-of-medians. Tracks whose
/// frames are all undefined are excluded and counted; an empty result is an
/// undefined-metric error.
pub fn aggregate_frames(
    tracks: &[FrameSeries],
    metric: GroundMetric,
    quantity: Quantity,
) -> Result<MetricsReport> {
    if tracks.is_empty() {
        return Err(Error::parameter("aggregate needs at least one track"));
    }
    let mut per_track = Vec::new();
    let mut skipped_tracks = 0usize;
    for series in tracks {
        let defined: Vec<f64> = series.values.iter().filter_map(|v| *v).collect();
        let skipped = series.values.len() - defined.len();
        match median(&defined) {
            Some(track_median) => per_track.push(TrackSummary {
                track_id: series.track_id.clone(),
                frame_values: defined,
                track_median,
                skipped_frames: skipped,
            }),
            None => skipped_tracks += 1,
        }
    }
    let medians: Vec<f64> = per_track.iter().map(|t| t.track_median).collect();
    let global_median = median(&medians).ok_or_else(|| {
        Error::UndefinedMetric("all tracks were excluded from aggregation".into())
    })?;
    Ok(MetricsReport {
        quantity,
        metric,
        per_track,
        global_median,
        skipped_tracks,
        caveat: SIR_CAVEAT,
    })
}

/// Frame-wise ground-metric values for one track. Frames where the metric is
/// undefined yield `None`. If no full frame fits, the whole signal is one
/// frame.
pub fn frame_values(
    signals: &TrackSignals,
    metric: GroundMetric,
    frame_len: usize,
    hop: usize,
) -> Result<Vec<Option<f64>>> {
    if frame_len == 0 || hop == 0 {
        return Err(Error::parameter("frame_len and hop must be >= 1"));
    }
    match (signals, metric) {
        (TrackSignals::Sdr { .. }, GroundMetric::Sdr) => {}
        (TrackSignals::Sir { .. }, GroundMetric::Sir) => {}
        _ => {
            return Err(Error::parameter(
                "track signals do not match the requested ground metric",
            ))
        }
    }
    let total = match signals {
        TrackSignals::Sdr { reference, .. } => reference.num_samples(),
        TrackSignals::Sir { estimate, .. } => estimate.num_samples(),
    };
    let spans: Vec<(usize, usize)> = if total < frame_len {
        vec![(0, total)]
    } else {
        (0..)
            .map(|i| i * hop)
            .take_while(|start| start + frame_len <= total)
            .map(|start| (start, start + frame_len))
            .collect()
    };
    let mut out = Vec::with_capacity(spans.len());
    for (start, end) in spans {
        let value = match signals {
            TrackSignals::Sdr {
                reference,
                estimate,
            } => {
                let r = reference.slice_samples(start, end)?;
                let e = estimate.slice_samples(start, end)?;
                sdr(&r, &e)
            }
            TrackSignals::Sir {
                sources,
                target_index,
                estimate,
            } => slice_source_set(sources, start, end)
                .and_then(|s| sir(&s, *target_index, &estimate.slice_samples(start, end)?)),
        };
        match value {
            Ok(v) => out.push(Some(v)),
            Err(Error::UndefinedMetric(_)) => out.push(None),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn slice_source_set(set: &SourceSet, start: usize, end: usize) -> Result<SourceSet> {
    let sources = set
        .sources()
        .iter()
        .map(|(name, clip)| Ok((name.clone(), clip.slice_samples(start, end)?)))
        .collect::<Result<Vec<_>>>()?;
    SourceSet::new(sources, set.mixture().slice_samples(start, end)?)
}

/// Frame the signals, evaluate the ground metric per frame and track, then
/// aggregate by median-of-medians: per-track median first, then the median
/// over tracks. Tracks evaluate in parallel.
pub fn aggregate(
    frame_len: usize,
    hop: usize,
    tracks: &[(String, TrackSignals)],
    metric: GroundMetric,
    quantity: Quantity,
) -> Result<MetricsReport> {
    let series: Vec<Result<FrameSeries>> = parallel::par_map(tracks, |(id, signals)| {
        Ok(FrameSeries {
            track_id: id.clone(),
            values: frame_values(signals, metric, frame_len, hop)?,
        })
    });
    let series = series.into_iter().collect::<Result<Vec<_>>>()?;
    aggregate_frames(&series, metric, quantity)
}

fn fmt_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.6}")
    }
}

impl MetricsReport {
    /// CSV rows `(quantity, metric, track_id, frame_index, value_db, flags)`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        writeln!(w, "# {}", self.caveat)?;
        writeln!(w, "quantity,metric,track_id,frame_index,value_db,flags")?;
        for track in &self.per_track {
            for (i, v) in track.frame_values.iter().enumerate() {
                let flags = if v.is_infinite() { "saturated" } else { "" };
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    self.quantity,
                    self.metric,
                    track.track_id,
                    i,
                    fmt_db(*v),
                    flags
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Summary JSON: per-track medians plus the global median. Non-finite
    /// values are encoded as strings.
    pub fn summary_json(&self) -> serde_json::Value {
        let db = |v: f64| -> serde_json::Value {
            if v.is_finite() {
                serde_json::json!(v)
            } else {
                serde_json::json!(fmt_db(v))
            }
        };
        serde_json::json!({
            "quantity": self.quantity.to_string(),
            "metric": self.metric.to_string(),
            "caveat": self.caveat,
            "global_median_db": db(self.global_median),
            "skipped_tracks": self.skipped_tracks,
            "per_track": self.per_track.iter().map(|t| serde_json::json!({
                "track_id": t.track_id,
                "median_db": db(t.track_median),
                "frames": t.frame_values.len(),
                "skipped_frames": t.skipped_frames,
            })).collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn clip(v: Vec<f64>) -> AudioClip {
        AudioClip::mono(v, 8000).unwrap()
    }

    #[test]
    fn sdr_formula_and_sentinels() {
        let reference = clip(vec![1.0, 0.0, 0.0, 0.0]);
        // residual energy = ref_energy / 100 -> 20 dB
        let est = clip(vec![0.9, 0.0, 0.0, 0.0]);
        let v = sdr(&reference, &est).unwrap();
        assert!((v - 20.0).abs() < 1e-9);

        assert_eq!(sdr(&reference, &reference).unwrap(), f64::INFINITY);

        // estimate = 0: residual = reference -> 0 dB
        let zero = clip(vec![0.0; 4]);
        assert_eq!(sdr(&reference, &zero).unwrap(), 0.0);

        assert_eq!(sdr(&zero, &reference).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(
            sdr(&zero, &zero),
            Err(Error::UndefinedMetric(_))
        ));
    }

    fn orthogonal_pair() -> SourceSet {
        // orthogonal unit-norm y1, y2
        let y1 = clip(vec![1.0, 0.0, 0.0, 0.0]);
        let y2 = clip(vec![0.0, 1.0, 0.0, 0.0]);
        SourceSet::from_sources(vec![("a".into(), y1), ("b".into(), y2)]).unwrap()
    }

    #[test]
    fn sir_orthogonal_hand_example() {
        let set = orthogonal_pair();
        let est = clip(vec![1.0, 0.5, 0.0, 0.0]); // y1 + 0.5*y2
        let v = sir(&set, 0, &est).unwrap();
        assert!((v - 10.0 * (1.0f64 / 0.25).log10()).abs() < 1e-9); // ~6.021 dB

        // exact target -> +inf
        let exact = clip(vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(sir(&set, 0, &exact).unwrap(), f64::INFINITY);

        // pure non-target -> -inf (zero target projection)
        let interf = clip(vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(sir(&set, 0, &interf).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn sir_rejects_dependent_sources() {
        let y1 = clip(vec![1.0, 2.0, 0.0, 0.0]);
        let y2 = clip(vec![2.0, 4.0, 0.0, 0.0]);
        let y3 = clip(vec![0.0, 0.0, 1.0, 0.0]);
        let mix = y1.add(&y2).unwrap().add(&y3).unwrap();
        let set = SourceSet::new(
            vec![("t".into(), y3), ("a".into(), y1), ("b".into(), y2)],
            mix,
        )
        .unwrap();
        let est = clip(vec![0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            sir(&set, 0, &est),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn sir_scale_invariance_for_orthogonal_sources() {
        let set = orthogonal_pair();
        let est = clip(vec![0.7, 0.2, 0.1, 0.0]);
        let a = sir(&set, 0, &est).unwrap();
        let b = sir(&set, 0, &est.scale(3.5).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn ds_identity_and_saturation() {
        let y = clip(vec![1.0, 0.2, -0.3, 0.4]);
        let sep = clip(vec![0.9, 0.25, -0.2, 0.35]);
        let zero_ds = ds(GroundMetric::Sdr, &y, &sep, &sep, None, 0).unwrap();
        assert_eq!(zero_ds.db, 0.0);
        assert!(!zero_ds.saturated);

        // clean separation equals y -> +inf minus finite -> saturated +inf
        let adv = clip(vec![0.5, 0.0, 0.0, 0.0]);
        let saturated = ds(GroundMetric::Sdr, &y, &y, &adv, None, 0).unwrap();
        assert_eq!(saturated.db, f64::INFINITY);
        assert!(saturated.saturated);

        // inf - inf is undefined
        assert!(matches!(
            ds(GroundMetric::Sdr, &y, &y, &y, None, 0),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn ds_antisymmetric() {
        let y = clip(vec![1.0, 0.2, -0.3, 0.4]);
        let a = clip(vec![0.9, 0.25, -0.2, 0.35]);
        let b = clip(vec![0.5, 0.1, -0.4, 0.2]);
        let ab = ds(GroundMetric::Sdr, &y, &a, &b, None, 0).unwrap();
        let ba = ds(GroundMetric::Sdr, &y, &b, &a, None, 0).unwrap();
        assert!((ab.db + ba.db).abs() < 1e-12);
    }

    #[test]
    fn di_closed_form() {
        let x = clip(vec![1.0, -1.0, 1.0, -1.0]);
        let eta = x.scale(0.01).unwrap(); // ||eta||^2 = 1e-4 ||x||^2
        let v = di(&x, &eta).unwrap();
        assert!((v - 40.0).abs() < 1e-9);

        let zero = clip(vec![0.0; 4]);
        assert_eq!(di(&x, &zero).unwrap(), f64::INFINITY);
    }

    #[test]
    fn di_closed_form_matches_sdr_route() {
        let x = crate::models::tests::random_clip(2, 512, 61);
        let eta = crate::models::tests::random_clip(2, 512, 62).scale(0.05).unwrap();
        let closed = di(&x, &eta).unwrap();
        let via_sdr = sdr(&x, &x.add(&eta).unwrap()).unwrap();
        let rel = (closed - via_sdr).abs() / closed.abs();
        assert!(rel < 1e-12, "rel err {rel}");
    }

    #[test]
    fn dsa_zero_eta_is_zero() {
        let y = clip(vec![1.0, 0.2, -0.3, 0.4]);
        let sep = clip(vec![0.9, 0.25, -0.2, 0.35]);
        let zero = clip(vec![0.0; 4]);
        let v = dsa(&y, &sep, &zero).unwrap();
        assert_eq!(v.db, 0.0);
    }

    #[test]
    fn dsa_negligible_eta_is_negligible() {
        // eta 60 dB below the clean residual -> DSA ~ 0 within 0.01 dB
        let y = clip(vec![1.0, 0.5, -0.5, 0.25]);
        let sep = clip(vec![0.9, 0.55, -0.45, 0.2]);
        let resid_energy: f64 = y
            .samples()
            .iter()
            .zip(sep.samples().iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let dir = clip(vec![1.0, 1.0, 1.0, 1.0]);
        let eta_scale = (resid_energy * 1e-6 / dir.energy()).sqrt();
        let eta = dir.scale(eta_scale).unwrap();
        let v = dsa(&y, &sep, &eta).unwrap();
        assert!(v.db.abs() < 0.01, "dsa {}", v.db);
    }

    #[test]
    fn median_of_medians_hand_example() {
        let tracks = vec![
            FrameSeries {
                track_id: "t1".into(),
                values: vec![Some(1.0), Some(2.0), Some(9.0)],
            },
            FrameSeries {
                track_id: "t2".into(),
                values: vec![Some(4.0), Some(4.0)],
            },
        ];
        let report = aggregate_frames(&tracks, GroundMetric::Sdr, Quantity::Ground).unwrap();
        assert_eq!(report.per_track[0].track_median, 2.0);
        assert_eq!(report.per_track[1].track_median, 4.0);
        assert_eq!(report.global_median, 3.0);
    }

    #[test]
    fn single_track_global_is_track_median() {
        let tracks = vec![FrameSeries {
            track_id: "only".into(),
            values: vec![Some(5.0), Some(1.0), Some(3.0)],
        }];
        let report = aggregate_frames(&tracks, GroundMetric::Sdr, Quantity::Ground).unwrap();
        assert_eq!(report.global_median, 3.0);
    }

    #[test]
    fn all_silent_track_excluded_with_flag() {
        let tracks = vec![
            FrameSeries {
                track_id: "good".into(),
                values: vec![Some(2.0), None],
            },
            FrameSeries {
                track_id: "silent".into(),
                values: vec![None, None],
            },
        ];
        let report = aggregate_frames(&tracks, GroundMetric::Sdr, Quantity::Ground).unwrap();
        assert_eq!(report.skipped_tracks, 1);
        assert_eq!(report.per_track.len(), 1);
        assert_eq!(report.per_track[0].skipped_frames, 1);

        let all_bad = vec![FrameSeries {
            track_id: "silent".into(),
            values: vec![None],
        }];
        assert!(matches!(
            aggregate_frames(&all_bad, GroundMetric::Sdr, Quantity::Ground),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn aggregate_signals_end_to_end() {
        // 3 seconds at 8 kHz, 1 s frames: silent-reference frames are skipped
        let mut reference = Array2::zeros((1, 24000));
        for i in 0..16000 {
            reference[[0, i]] = (i as f64 * 0.001).sin();
        }
        let reference = AudioClip::new(reference, 8000).unwrap();
        let estimate = reference.scale(0.9).unwrap();
        let tracks = vec![(
            "t0".to_string(),
            TrackSignals::Sdr {
                reference,
                estimate,
            },
        )];
        let report =
            aggregate(8000, 8000, &tracks, GroundMetric::Sdr, Quantity::Ground).unwrap();
        assert_eq!(report.per_track[0].frame_values.len(), 2);
        assert_eq!(report.per_track[0].skipped_frames, 1);
        // scaling by 0.9 -> SDR = 10*log10(1/0.01) = 20 dB in every frame
        assert!((report.global_median - 20.0).abs() < 1e-9);
    }

    #[test]
    fn report_csv_and_json_shapes() {
        let tracks = vec![FrameSeries {
            track_id: "t".into(),
            values: vec![Some(1.0), Some(f64::INFINITY)],
        }];
        let report = aggregate_frames(&tracks, GroundMetric::Sdr, Quantity::Ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        report.write_csv(&path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert!(body.contains("ds,sdr,t,0,1.000000,"));
        assert!(body.contains("ds,sdr,t,1,inf,saturated"));
        let json = report.summary_json();
        assert_eq!(json["per_track"][0]["frames"], 2);
    }
}
