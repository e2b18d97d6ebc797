//! Error-versus-reject analysis.
//!
//! A decision threshold is calibrated on impostor similarities for a target
//! FMR (match iff `similarity >= threshold`). Images are then rejected in
//! ascending quality order (ties broken by ascending id); a pair survives only
//! while both of its images survive. FNMR over the surviving genuine pairs,
//! as a function of the rejected fraction `r`, is the EvR curve, and
//! `pAUC_ρ = (1/ρ) ∫₀^ρ FNMR(r) dr` summarizes its low-rejection region.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, EmbeddingTable, IngestError, PairLabel, PairRecord, ScoreRecord};

/// Default FMR operating point.
pub const DEFAULT_FMR: f64 = 1e-3;
/// Default pAUC upper limits (1%, 5%, 10%, 20%).
pub const DEFAULT_RHOS: [f64; 4] = [0.01, 0.05, 0.10, 0.20];
/// Rejection grid resolution: steps of 1/500 = 0.002.
pub const DEFAULT_GRID_DIVISIONS: u32 = 500;

/// Slack when converting `r·M` to a count, so grid values such as
/// 0.006 · 500 do not lose a whole image to rounding.
const COUNT_EPS: f64 = 1e-9;
/// Slack when matching ρ against the last grid point.
const RHO_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EvrError {
    #[error("impostor similarity list is empty")]
    EmptyImpostors,
    #[error("genuine similarity list is empty")]
    EmptyGenuine,
    #[error("target FMR {0} must lie in [0, 1)")]
    InvalidTarget(f64),
    #[error("invalid rejection ratios: {0}")]
    InvalidRatios(String),
    #[error("no quality score for image {0:?}")]
    MissingScore(String),
    #[error("no genuine pairs remain at rejection ratio {ratio}; choose smaller ratios")]
    NoGenuineRetained { ratio: f64 },
    #[error("no impostor pairs remain at rejection ratio {ratio} for per-level calibration")]
    NoImpostorRetained { ratio: f64 },
    #[error("rho {0} must be positive")]
    InvalidRho(f64),
    #[error("rho {rho} lies beyond the curve's last rejection ratio {last}")]
    RhoBeyondCurve { rho: f64, last: f64 },
    #[error("backbone {name:?}: {source}")]
    Backbone {
        name: String,
        #[source]
        source: Box<EvrError>,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

pub type Result<T, E = EvrError> = std::result::Result<T, E>;

/// Fraction of impostor similarities at or above `threshold`.
pub fn fmr_at(impostor: &[f64], threshold: f64) -> f64 {
    if impostor.is_empty() {
        return 0.0;
    }
    impostor.iter().filter(|&&s| s >= threshold).count() as f64 / impostor.len() as f64
}

/// Fraction of genuine similarities below `threshold`.
pub fn fnmr_at(genuine: &[f64], threshold: f64) -> Result<f64> {
    if genuine.is_empty() {
        return Err(EvrError::EmptyGenuine);
    }
    Ok(genuine.iter().filter(|&&s| s < threshold).count() as f64 / genuine.len() as f64)
}

/// Smallest candidate threshold whose FMR does not exceed `target_fmr`.
///
/// Candidates are the distinct impostor similarities plus the next float
/// above the maximum, so the result always exists and FMR at the next smaller
/// candidate exceeds the target.
pub fn calibrate_threshold(impostor: &[f64], target_fmr: f64) -> Result<f64> {
    if impostor.is_empty() {
        return Err(EvrError::EmptyImpostors);
    }
    if !(0.0..1.0).contains(&target_fmr) {
        return Err(EvrError::InvalidTarget(target_fmr));
    }
    let mut sorted = impostor.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    // Walk distinct values in ascending order; at value sorted[i] (first of its
    // run) exactly n - i impostors are >= it.
    let mut i = 0;
    while i < sorted.len() {
        if (sorted.len() - i) as f64 / n <= target_fmr {
            return Ok(sorted[i]);
        }
        let v = sorted[i];
        while i < sorted.len() && sorted[i] == v {
            i += 1;
        }
    }
    Ok(sorted[sorted.len() - 1].next_up())
}

/// A verification pair reduced to what EvR needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub id_a: String,
    pub id_b: String,
    pub similarity: f64,
}

/// Genuine and impostor pairs of one recognition backbone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimilaritySet {
    pub genuine: Vec<ScoredPair>,
    pub impostor: Vec<ScoredPair>,
}

impl SimilaritySet {
    pub fn from_pairs(pairs: &[PairRecord]) -> Self {
        let mut set = SimilaritySet::default();
        for p in pairs {
            let sp = ScoredPair {
                id_a: p.id_a.clone(),
                id_b: p.id_b.clone(),
                similarity: p.similarity,
            };
            match p.label {
                PairLabel::Genuine => set.genuine.push(sp),
                PairLabel::Impostor => set.impostor.push(sp),
            }
        }
        set
    }

    pub fn len(&self) -> usize {
        self.genuine.len() + self.impostor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn all(&self) -> impl Iterator<Item = &ScoredPair> {
        self.genuine.iter().chain(&self.impostor)
    }

    /// Distinct image ids referenced by any pair, sorted.
    pub fn image_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .all()
            .flat_map(|p| [p.id_a.as_str(), p.id_b.as_str()])
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        ids.sort_unstable();
        ids
    }

    /// Keeps only pairs whose images both satisfy `keep`.
    pub fn retain_images(&self, keep: impl Fn(&str) -> bool) -> SimilaritySet {
        let filter = |v: &[ScoredPair]| {
            v.iter()
                .filter(|p| keep(&p.id_a) && keep(&p.id_b))
                .cloned()
                .collect()
        };
        SimilaritySet {
            genuine: filter(&self.genuine),
            impostor: filter(&self.impostor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Calibrate once on the full impostor set and hold the threshold fixed.
    #[default]
    Fixed,
    /// Recalibrate on the retained impostors at every rejection level.
    PerLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvrPoint {
    pub rejection_ratio: f64,
    pub fnmr: f64,
    pub retained_genuine: usize,
    pub retained_impostor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvrCurve {
    /// Threshold calibrated on the full impostor set.
    pub threshold: f64,
    pub target_fmr: f64,
    pub mode: ThresholdMode,
    pub total_images: usize,
    pub points: Vec<EvrPoint>,
    /// Per-point thresholds when `mode` is `PerLevel`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_thresholds: Option<Vec<f64>>,
}

impl EvrCurve {
    pub fn last_ratio(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.rejection_ratio)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "rejection_ratio,fnmr,retained_genuine,retained_impostor")?;
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{}",
                p.rejection_ratio, p.fnmr, p.retained_genuine, p.retained_impostor
            )?;
        }
        out.flush()
    }
}

/// Number of images rejected at ratio `r` out of `total`: ⌊r·M⌋.
pub fn reject_count(ratio: f64, total: usize) -> usize {
    ((ratio * total as f64 + COUNT_EPS).floor() as usize).min(total)
}

/// Rejection grid `{0, 1/d, 2/d, …}` up to and including `max_ratio`.
pub fn ratio_grid(max_ratio: f64, divisions: u32) -> Vec<f64> {
    let d = f64::from(divisions);
    let steps = (max_ratio * d + COUNT_EPS).floor() as u32;
    let mut grid: Vec<f64> = (0..=steps).map(|k| f64::from(k) / d).collect();
    if let Some(&last) = grid.last() {
        if max_ratio - last > RHO_EPS {
            grid.push(max_ratio);
        }
    }
    grid
}

pub fn default_ratio_grid(rhos: &[f64]) -> Vec<f64> {
    let max = rhos.iter().copied().fold(0.0, f64::max);
    ratio_grid(max, DEFAULT_GRID_DIVISIONS)
}

fn validate_ratios(ratios: &[f64]) -> Result<()> {
    match ratios.first() {
        None => return Err(EvrError::InvalidRatios("empty list".into())),
        Some(&r0) if r0 != 0.0 => {
            return Err(EvrError::InvalidRatios(format!("first ratio must be 0, got {r0}")))
        }
        _ => {}
    }
    for w in ratios.windows(2) {
        if w[1] <= w[0] {
            return Err(EvrError::InvalidRatios(format!(
                "ratios must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    if let Some(&r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(EvrError::InvalidRatios(format!("{r} is outside [0, 1]")));
    }
    Ok(())
}

/// Position of every image in rejection order: ascending quality, ties by id.
fn rejection_ranks<'a>(ids: &[&'a str], quality: &HashMap<String, f64>) -> Result<HashMap<&'a str, usize>> {
    let mut keyed = Vec::with_capacity(ids.len());
    for &id in ids {
        let q = *quality
            .get(id)
            .ok_or_else(|| EvrError::MissingScore(id.to_owned()))?;
        keyed.push((q, id));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(keyed.into_iter().enumerate().map(|(rank, (_, id))| (id, rank)).collect())
}

pub fn evr_curve(
    quality: &HashMap<String, f64>,
    pairs: &SimilaritySet,
    ratios: &[f64],
    target_fmr: f64,
    mode: ThresholdMode,
) -> Result<EvrCurve> {
    validate_ratios(ratios)?;
    if pairs.genuine.is_empty() {
        return Err(EvrError::EmptyGenuine);
    }
    let impostor_sims: Vec<f64> = pairs.impostor.iter().map(|p| p.similarity).collect();
    let threshold = calibrate_threshold(&impostor_sims, target_fmr)?;

    let ids = pairs.image_ids();
    let ranks = rejection_ranks(&ids, quality)?;
    // A pair is rejected as soon as its lower-ranked image is.
    let survival = |p: &ScoredPair| ranks[p.id_a.as_str()].min(ranks[p.id_b.as_str()]);
    let genuine: Vec<(usize, f64)> = pairs.genuine.iter().map(|p| (survival(p), p.similarity)).collect();
    let impostor: Vec<(usize, f64)> = pairs.impostor.iter().map(|p| (survival(p), p.similarity)).collect();

    let mut points = Vec::with_capacity(ratios.len());
    let mut level_thresholds = Vec::new();
    for &ratio in ratios {
        let k = reject_count(ratio, ids.len());
        let kept_impostor: Vec<f64> = impostor.iter().filter(|(s, _)| *s >= k).map(|(_, v)| *v).collect();
        let t = match mode {
            ThresholdMode::Fixed => threshold,
            ThresholdMode::PerLevel => {
                if kept_impostor.is_empty() {
                    return Err(EvrError::NoImpostorRetained { ratio });
                }
                calibrate_threshold(&kept_impostor, target_fmr)?
            }
        };
        let kept_genuine: Vec<f64> = genuine.iter().filter(|(s, _)| *s >= k).map(|(_, v)| *v).collect();
        if kept_genuine.is_empty() {
            return Err(EvrError::NoGenuineRetained { ratio });
        }
        points.push(EvrPoint {
            rejection_ratio: ratio,
            fnmr: fnmr_at(&kept_genuine, t)?,
            retained_genuine: kept_genuine.len(),
            retained_impostor: kept_impostor.len(),
        });
        level_thresholds.push(t);
    }

    Ok(EvrCurve {
        threshold,
        target_fmr,
        mode,
        total_images: ids.len(),
        points,
        level_thresholds: (mode == ThresholdMode::PerLevel).then_some(level_thresholds),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaucResult {
    pub rho: f64,
    /// `(1/ρ) ∫₀^ρ FNMR(r) dr`.
    pub value: f64,
    /// The same integral without the `1/ρ` normalization.
    pub integral: f64,
}

/// Trapezoidal partial area under the curve's FNMR over `[0, ρ]`, linearly
/// interpolating at ρ when it falls between grid points.
pub fn pauc(curve: &EvrCurve, rho: f64) -> Result<PaucResult> {
    let xy: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.rejection_ratio, p.fnmr)).collect();
    pauc_of_points(&xy, rho)
}

/// [`pauc`] over raw `(r, FNMR)` points with strictly increasing `r` from 0.
pub fn pauc_of_points(points: &[(f64, f64)], rho: f64) -> Result<PaucResult> {
    if !(rho > 0.0) {
        return Err(EvrError::InvalidRho(rho));
    }
    let last = points.last().map_or(0.0, |p| p.0);
    if points.len() < 2 || rho > last + RHO_EPS || points[0].0 != 0.0 {
        return Err(EvrError::RhoBeyondCurve { rho, last });
    }
    let rho_eff = rho.min(last);
    let mut area = 0.0;
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= rho_eff {
            break;
        }
        if x1 <= rho_eff {
            area += 0.5 * (y0 + y1) * (x1 - x0);
        } else {
            let y_rho = y0 + (y1 - y0) * (rho_eff - x0) / (x1 - x0);
            area += 0.5 * (y0 + y_rho) * (rho_eff - x0);
            break;
        }
    }
    Ok(PaucResult {
        rho,
        value: area / rho,
        integral: area,
    })
}

/// Successfully parsed quality scores plus the ids whose parse failed.
#[derive(Debug, Clone, Default)]
pub struct QualityScores {
    pub scores: HashMap<String, f64>,
    pub failed: HashSet<String>,
}

impl QualityScores {
    pub fn from_records(records: &[ScoreRecord]) -> Self {
        let mut q = QualityScores::default();
        for r in records {
            match r.score {
                Some(s) if !r.is_failed() => {
                    q.scores.insert(r.image_id.clone(), s);
                }
                _ => {
                    q.failed.insert(r.image_id.clone());
                }
            }
        }
        q
    }
}

/// Where to find one backbone's pairs (and embeddings for pairs without an
/// explicit similarity).
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneSource {
    pub name: String,
    pub pairs: PathBuf,
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub name: String,
    pub pairs: SimilaritySet,
}

pub fn load_backbones(sources: &[BackboneSource]) -> Result<Vec<Backbone>> {
    sources
        .iter()
        .map(|src| {
            let wrap = |e: EvrError| EvrError::Backbone {
                name: src.name.clone(),
                source: Box::new(e),
            };
            let table: Option<EmbeddingTable> = src
                .embeddings
                .as_ref()
                .map(ingest::load_embeddings)
                .transpose()
                .map_err(|e| wrap(e.into()))?;
            let pairs = ingest::load_pairs(&src.pairs, table.as_ref()).map_err(|e| wrap(e.into()))?;
            Ok(Backbone {
                name: src.name.clone(),
                pairs: SimilaritySet::from_pairs(&pairs),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvrSettings {
    pub target_fmr: f64,
    pub rhos: Vec<f64>,
    pub ratios: Vec<f64>,
    pub mode: ThresholdMode,
}

impl Default for EvrSettings {
    fn default() -> Self {
        Self {
            target_fmr: DEFAULT_FMR,
            rhos: DEFAULT_RHOS.to_vec(),
            ratios: default_ratio_grid(&DEFAULT_RHOS),
            mode: ThresholdMode::Fixed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackboneEvaluation {
    pub backbone: String,
    pub curve: EvrCurve,
    pub pauc: Vec<PaucResult>,
    /// Pairs dropped because one of their images failed to parse.
    pub dropped_pairs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodEvaluation {
    pub backbones: Vec<BackboneEvaluation>,
    /// Arithmetic mean of `pauc[i].value` across backbones, per ρ.
    pub mean_pauc: Vec<f64>,
    /// Arithmetic mean of the unnormalized integrals, per ρ.
    pub mean_integral: Vec<f64>,
}

/// EvR + pAUC for one quality method on every backbone, averaged across
/// backbones. Pairs touching an image whose score failed to parse are
/// dropped; an image with no score record at all is an error.
pub fn evaluate_method(
    scores: &QualityScores,
    backbones: &[Backbone],
    settings: &EvrSettings,
) -> Result<MethodEvaluation> {
    let mut results = Vec::with_capacity(backbones.len());
    for b in backbones {
        let wrap = |e: EvrError| EvrError::Backbone {
            name: b.name.clone(),
            source: Box::new(e),
        };
        let usable = b.pairs.retain_images(|id| !scores.failed.contains(id));
        let curve = evr_curve(&scores.scores, &usable, &settings.ratios, settings.target_fmr, settings.mode)
            .map_err(wrap)?;
        let pauc = settings
            .rhos
            .iter()
            .map(|&rho| pauc(&curve, rho))
            .collect::<Result<Vec<_>>>()
            .map_err(wrap)?;
        results.push(BackboneEvaluation {
            backbone: b.name.clone(),
            curve,
            pauc,
            dropped_pairs: b.pairs.len() - usable.len(),
        });
    }
    let mean = |f: fn(&PaucResult) -> f64| -> Vec<f64> {
        (0..settings.rhos.len())
            .map(|i| {
                if results.is_empty() {
                    f64::NAN
                } else {
                    results.iter().map(|r| f(&r.pauc[i])).sum::<f64>() / results.len() as f64
                }
            })
            .collect()
    };
    Ok(MethodEvaluation {
        mean_pauc: mean(|p| p.value),
        mean_integral: mean(|p| p.integral),
        backbones: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(a: &str, b: &str, s: f64) -> ScoredPair {
        ScoredPair {
            id_a: a.into(),
            id_b: b.into(),
            similarity: s,
        }
    }

    #[test]
    fn calibrate_ten_values() {
        let imp: Vec<f64> = (0..10).map(|i| f64::from(i) / 10.0).collect();
        let t = calibrate_threshold(&imp, 0.1).unwrap();
        assert_eq!(t, 0.9);
        assert_eq!(fmr_at(&imp, t), 0.1);
    }

    #[test]
    fn calibrate_zero_target_goes_above_max() {
        let imp = [0.2, 0.7, 0.4];
        let t = calibrate_threshold(&imp, 0.0).unwrap();
        assert_eq!(t, 0.7f64.next_up());
        assert_eq!(fmr_at(&imp, t), 0.0);
    }

    #[test]
    fn calibrate_with_ties() {
        let t = calibrate_threshold(&[0.5, 0.5, 0.5], 0.5).unwrap();
        assert!(t > 0.5);
        assert_eq!(fmr_at(&[0.5, 0.5, 0.5], t), 0.0);
    }

    #[test]
    fn calibrate_errors() {
        assert!(matches!(calibrate_threshold(&[], 0.1), Err(EvrError::EmptyImpostors)));
        assert!(matches!(calibrate_threshold(&[0.1], 1.0), Err(EvrError::InvalidTarget(_))));
        assert!(matches!(calibrate_threshold(&[0.1], -0.1), Err(EvrError::InvalidTarget(_))));
    }

    #[test]
    fn fnmr_examples() {
        assert!((fnmr_at(&[0.95, 0.85, 0.5], 0.9).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(fnmr_at(&[0.95, 0.99], 0.9).unwrap(), 0.0);
        assert_eq!(fnmr_at(&[0.1, 0.2], 0.9).unwrap(), 1.0);
        assert!(fnmr_at(&[], 0.9).is_err());
    }

    fn four_images() -> (HashMap<String, f64>, SimilaritySet) {
        let quality = [("A", 10.0), ("B", 20.0), ("C", 30.0), ("D", 40.0)]
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect();
        // Impostor similarities chosen so that FMR 0.5 calibrates to 0.9.
        let set = SimilaritySet {
            genuine: vec![pair("A", "B", 0.3), pair("B", "C", 0.8), pair("C", "D", 0.95)],
            impostor: vec![pair("A", "C", 0.9), pair("B", "D", 0.1)],
        };
        (quality, set)
    }

    #[test]
    fn hand_enumerated_curve() {
        let (quality, set) = four_images();
        let curve = evr_curve(&quality, &set, &[0.0, 0.25, 0.5], 0.5, ThresholdMode::Fixed).unwrap();
        assert_eq!(curve.threshold, 0.9);
        let fnmr: Vec<f64> = curve.points.iter().map(|p| p.fnmr).collect();
        assert!((fnmr[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(fnmr[1], 0.5);
        assert_eq!(fnmr[2], 0.0);
        let kept: Vec<usize> = curve.points.iter().map(|p| p.retained_genuine).collect();
        assert_eq!(kept, vec![3, 2, 1]);
    }

    #[test]
    fn rejecting_everything_errors() {
        let (quality, set) = four_images();
        let err = evr_curve(&quality, &set, &[0.0, 0.75], 0.5, ThresholdMode::Fixed).unwrap_err();
        assert!(matches!(err, EvrError::NoGenuineRetained { ratio } if ratio == 0.75));
    }

    #[test]
    fn missing_score_named() {
        let (mut quality, set) = four_images();
        quality.remove("C");
        let err = evr_curve(&quality, &set, &[0.0], 0.5, ThresholdMode::Fixed).unwrap_err();
        assert!(matches!(err, EvrError::MissingScore(id) if id == "C"));
    }

    #[test]
    fn constant_quality_rejects_in_id_order() {
        let (mut quality, set) = four_images();
        quality.values_mut().for_each(|q| *q = 50.0);
        let a = evr_curve(&quality, &set, &[0.0, 0.25, 0.5], 0.5, ThresholdMode::Fixed).unwrap();
        let b = evr_curve(&quality, &set, &[0.0, 0.25, 0.5], 0.5, ThresholdMode::Fixed).unwrap();
        assert_eq!(a, b);
        // id order A < B < C < D is the same as the quality order above.
        assert_eq!(a.points[1].fnmr, 0.5);
    }

    #[test]
    fn all_genuine_above_threshold_is_zero() {
        let (quality, mut set) = four_images();
        set.genuine.iter_mut().for_each(|p| p.similarity = 0.99);
        let curve = evr_curve(&quality, &set, &[0.0, 0.25, 0.5], 0.5, ThresholdMode::Fixed).unwrap();
        assert!(curve.points.iter().all(|p| p.fnmr == 0.0));
    }

    #[test]
    fn ratios_validated() {
        let (quality, set) = four_images();
        for bad in [vec![], vec![0.1], vec![0.0, 0.2, 0.1], vec![0.0, 1.5]] {
            assert!(matches!(
                evr_curve(&quality, &set, &bad, 0.5, ThresholdMode::Fixed),
                Err(EvrError::InvalidRatios(_))
            ));
        }
    }

    #[test]
    fn per_level_recalibrates() {
        let (quality, set) = four_images();
        let curve = evr_curve(&quality, &set, &[0.0, 0.25], 0.5, ThresholdMode::PerLevel).unwrap();
        let ts = curve.level_thresholds.unwrap();
        assert_eq!(ts[0], 0.9);
        // At r = 0.25 (A rejected) only impostor (B, D, 0.1) remains.
        assert_eq!(ts[1], 0.1f64.next_up());
    }

    #[test]
    fn pauc_constant_and_linear() {
        let constant = [(0.0, 0.05), (0.1, 0.05), (0.2, 0.05)];
        for rho in [0.01, 0.05, 0.1, 0.2] {
            assert!((pauc_of_points(&constant, rho).unwrap().value - 0.05).abs() < 1e-15);
        }
        let linear = [(0.0, 0.1), (0.2, 0.0)];
        let p = pauc_of_points(&linear, 0.2).unwrap();
        assert!((p.value - 0.05).abs() < 1e-15);
        assert!((p.integral - 0.01).abs() < 1e-15);
    }

    #[test]
    fn pauc_interpolates_inside_segment() {
        // FNMR = 0.1 - 0.5 r on [0, 0.2]; mean over [0, 0.1] = 0.1 - 0.025.
        let p = pauc_of_points(&[(0.0, 0.1), (0.2, 0.0)], 0.1).unwrap();
        assert!((p.value - 0.075).abs() < 1e-15);
    }

    #[test]
    fn pauc_errors() {
        let pts = [(0.0, 0.1), (0.2, 0.0)];
        assert!(matches!(pauc_of_points(&pts, 0.0), Err(EvrError::InvalidRho(_))));
        assert!(matches!(pauc_of_points(&pts, -1.0), Err(EvrError::InvalidRho(_))));
        assert!(matches!(pauc_of_points(&pts, 0.3), Err(EvrError::RhoBeyondCurve { .. })));
    }

    #[test]
    fn default_grid_shape() {
        let g = default_ratio_grid(&DEFAULT_RHOS);
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[5], 0.01);
        assert_eq!(g[25], 0.05);
        assert_eq!(g[100], 0.2);
        assert_eq!(ratio_grid(0.011, 500).last(), Some(&0.011));
    }

    #[test]
    fn reject_count_floors() {
        assert_eq!(reject_count(0.25, 4), 1);
        assert_eq!(reject_count(0.3, 4), 1);
        assert_eq!(reject_count(0.006, 500), 3);
        assert_eq!(reject_count(1.0, 7), 7);
    }

    fn backbone(name: &str, set: SimilaritySet) -> Backbone {
        Backbone { name: name.into(), pairs: set }
    }

    #[test]
    fn method_mean_across_backbones() {
        let (quality, set) = four_images();
        let scores = QualityScores { scores: quality, failed: HashSet::new() };
        let settings = EvrSettings {
            target_fmr: 0.5,
            rhos: vec![0.5],
            ratios: vec![0.0, 0.25, 0.5],
            mode: ThresholdMode::Fixed,
        };
        let one = evaluate_method(&scores, &[backbone("a", set.clone())], &settings).unwrap();
        assert_eq!(one.mean_pauc[0], one.backbones[0].pauc[0].value);

        let mut better = set.clone();
        better.genuine[0].similarity = 0.99;
        let two = evaluate_method(&scores, &[backbone("a", set), backbone("b", better)], &settings).unwrap();
        let expected = (two.backbones[0].pauc[0].value + two.backbones[1].pauc[0].value) / 2.0;
        assert_eq!(two.mean_pauc[0], expected);
    }

    #[test]
    fn failed_scores_drop_pairs() {
        let (mut quality, set) = four_images();
        quality.remove("A");
        let scores = QualityScores { scores: quality, failed: ["A".to_owned()].into() };
        let settings = EvrSettings { target_fmr: 0.5, rhos: vec![0.2], ratios: vec![0.0, 0.2], mode: ThresholdMode::Fixed };
        let eval = evaluate_method(&scores, &[backbone("arcface", set)], &settings).unwrap();
        assert_eq!(eval.backbones[0].dropped_pairs, 2);
    }

    #[test]
    fn backbone_error_is_named() {
        let err = load_backbones(&[BackboneSource {
            name: "transface".into(),
            pairs: "/definitely/missing.csv".into(),
            embeddings: None,
        }])
        .unwrap_err();
        assert!(err.to_string().contains("transface"), "{err}");
    }

    proptest! {
        #[test]
        fn calibration_contract(
            imp in proptest::collection::vec((0u32..200).prop_map(|v| f64::from(v) / 200.0), 1..300),
            target in prop_oneof![Just(0.0), Just(0.001), Just(0.01), Just(0.1), 0.0f64..0.99],
        ) {
            let t = calibrate_threshold(&imp, target).unwrap();
            prop_assert!(fmr_at(&imp, t) <= target);
            let smaller = imp.iter().copied().filter(|&v| v < t).fold(f64::NEG_INFINITY, f64::max);
            if smaller.is_finite() {
                prop_assert!(fmr_at(&imp, smaller) > target);
            }
        }

        #[test]
        fn dominated_curve_has_smaller_pauc(
            ys in proptest::collection::vec((0.0f64..0.5, 0.0f64..0.5), 2..30),
            rho_frac in 0.01f64..1.0,
        ) {
            let n = ys.len();
            let lower: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, (a, _))| (i as f64 / (n - 1) as f64, *a)).collect();
            let upper: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, (a, b))| (i as f64 / (n - 1) as f64, a + b)).collect();
            let rho = rho_frac;
            prop_assert!(pauc_of_points(&lower, rho).unwrap().value <= pauc_of_points(&upper, rho).unwrap().value + 1e-15);
        }
    }
}
