//! Consistency and synthetic-precision analytics over parsed score records.
//!
//! Failed parses never enter a statistic; each report carries how many were
//! left out.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::artifact::DegradationVector;
use crate::degrade::{BenchmarkItem, GroundTruth};
use crate::ingest::{Distance, Manifest, ScoreRecord, ScoreVariant};
use crate::protocol::{AttributeAssessment, Compression, DetectionFlags, Lighting, Resolution, Sharpness};
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("need at least 2 images parsed under both variants, found {0}")]
    TooFewCommon(usize),
    #[error("no usable {0} records")]
    Empty(&'static str),
    #[error("image {0:?} has a non-zero ground truth; L0 analysis takes clean images only")]
    NonZeroTruth(String),
    #[error("image {id:?}: malformed ground truth ({reason})")]
    MalformedTruth { id: String, reason: String },
    #[error("prediction and truth lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

pub type Result<T, E = AnalysisError> = std::result::Result<T, E>;

fn percent(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

// ---------------------------------------------------------------------------
// Cross-prompt

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossPromptStats {
    pub variant_a: ScoreVariant,
    pub variant_b: ScoreVariant,
    pub n: usize,
    pub mae: f64,
    /// Absent when either side has zero variance.
    pub pearson: Option<f64>,
    /// Mean of `b − a`.
    pub bias: f64,
    pub failed_a: usize,
    pub failed_b: usize,
}

/// Agreement statistics over images present in both maps.
pub fn cross_prompt_values(a: &HashMap<String, f64>, b: &HashMap<String, f64>) -> Result<(usize, f64, Option<f64>, f64)> {
    let mut ids: Vec<&String> = a.keys().filter(|k| b.contains_key(*k)).collect();
    ids.sort();
    if ids.len() < 2 {
        return Err(AnalysisError::TooFewCommon(ids.len()));
    }
    let xs: Vec<f64> = ids.iter().map(|id| a[*id]).collect();
    let ys: Vec<f64> = ids.iter().map(|id| b[*id]).collect();
    let n = ids.len() as f64;
    let mae = xs.iter().zip(&ys).map(|(x, y)| (y - x).abs()).sum::<f64>() / n;
    let bias = xs.iter().zip(&ys).map(|(x, y)| y - x).sum::<f64>() / n;
    Ok((ids.len(), mae, stats::pearson(&xs, &ys), bias))
}

/// Compares two score files; `a` is the reference (bias is `b − a`).
pub fn cross_prompt(a: &[ScoreRecord], b: &[ScoreRecord]) -> Result<CrossPromptStats> {
    let variant = |rs: &[ScoreRecord]| rs.first().map(|r| r.variant);
    let (va, vb) = match (variant(a), variant(b)) {
        (Some(va), Some(vb)) => (va, vb),
        _ => return Err(AnalysisError::TooFewCommon(0)),
    };
    let (ma, failed_a) = crate::ingest::usable_scores(a);
    let (mb, failed_b) = crate::ingest::usable_scores(b);
    let (n, mae, pearson, bias) = cross_prompt_values(&ma, &mb)?;
    Ok(CrossPromptStats {
        variant_a: va,
        variant_b: vb,
        n,
        mae,
        pearson,
        bias,
        failed_a,
        failed_b,
    })
}

// ---------------------------------------------------------------------------
// Internal consistency

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Sharpness,
    Resolution,
    Lighting,
    Compression,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::Sharpness,
        Dimension::Resolution,
        Dimension::Lighting,
        Dimension::Compression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Sharpness => "sharpness",
            Dimension::Resolution => "resolution",
            Dimension::Lighting => "lighting",
            Dimension::Compression => "compression",
        }
    }

    /// Option labels in declaration order.
    pub fn labels(self) -> Vec<&'static str> {
        match self {
            Dimension::Sharpness => Sharpness::ALL.iter().map(|l| l.label()).collect(),
            Dimension::Resolution => Resolution::ALL.iter().map(|l| l.label()).collect(),
            Dimension::Lighting => Lighting::ALL.iter().map(|l| l.label()).collect(),
            Dimension::Compression => Compression::ALL.iter().map(|l| l.label()).collect(),
        }
    }

    /// Severity chains, best first. Lighting has a dark and a bright branch.
    pub fn chains(self) -> Vec<(&'static str, Vec<&'static str>)> {
        let all = |labels: Vec<&'static str>| vec![("all", labels)];
        match self {
            Dimension::Lighting => vec![
                ("dark", Lighting::DARK_CHAIN.iter().map(|l| l.label()).collect()),
                ("bright", Lighting::BRIGHT_CHAIN.iter().map(|l| l.label()).collect()),
            ],
            other => all(other.labels()),
        }
    }

    pub fn label_of(self, a: &AttributeAssessment) -> &'static str {
        match self {
            Dimension::Sharpness => a.sharpness.label(),
            Dimension::Resolution => a.resolution.label(),
            Dimension::Lighting => a.lighting.label(),
            Dimension::Compression => a.compression.label(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelStats {
    pub label: &'static str,
    pub count: usize,
    pub mean: Option<f64>,
    pub quartiles: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainCheck {
    pub chain: &'static str,
    pub monotone_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelGroupStats {
    pub dimension: Dimension,
    pub labels: Vec<LabelStats>,
    pub chains: Vec<ChainCheck>,
}

impl LabelGroupStats {
    pub fn monotone_ok(&self) -> bool {
        self.chains.iter().all(|c| c.monotone_ok)
    }
}

/// Whether the populated means along `chain` never increase.
fn chain_ok(means: &HashMap<&str, f64>, chain: &[&str]) -> bool {
    let present: Vec<f64> = chain.iter().filter_map(|l| means.get(l).copied()).collect();
    present.windows(2).all(|w| w[1] <= w[0])
}

/// Per-dimension label statistics over attribute assessments.
pub fn internal_consistency_of(assessments: &[AttributeAssessment]) -> Result<Vec<LabelGroupStats>> {
    if assessments.is_empty() {
        return Err(AnalysisError::Empty("classification"));
    }
    Ok(Dimension::ALL
        .iter()
        .map(|&dim| {
            let mut groups: HashMap<&str, Vec<f64>> = HashMap::new();
            for a in assessments {
                groups.entry(dim.label_of(a)).or_default().push(a.score);
            }
            let labels: Vec<LabelStats> = dim
                .labels()
                .into_iter()
                .map(|label| {
                    let xs = groups.get(label).map(Vec::as_slice).unwrap_or(&[]);
                    LabelStats {
                        label,
                        count: xs.len(),
                        mean: stats::mean(xs),
                        quartiles: stats::quartiles(xs),
                    }
                })
                .collect();
            let means: HashMap<&str, f64> = labels.iter().filter_map(|l| Some((l.label, l.mean?))).collect();
            let chains = dim
                .chains()
                .into_iter()
                .map(|(chain, order)| ChainCheck {
                    chain,
                    monotone_ok: chain_ok(&means, &order),
                })
                .collect();
            LabelGroupStats {
                dimension: dim,
                labels,
                chains,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InternalReport {
    pub groups: Vec<LabelGroupStats>,
    pub used: usize,
    pub failed: usize,
}

pub fn internal_consistency(records: &[ScoreRecord]) -> Result<InternalReport> {
    let mut assessments = Vec::new();
    let mut failed = 0;
    for r in records.iter().filter(|r| r.variant == ScoreVariant::Classification) {
        match (&r.attributes, r.is_failed()) {
            (Some(a), false) => assessments.push(*a),
            _ => failed += 1,
        }
    }
    Ok(InternalReport {
        groups: internal_consistency_of(&assessments)?,
        used: assessments.len(),
        failed,
    })
}

// ---------------------------------------------------------------------------
// Distance sensitivity

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceRow {
    pub distance: Distance,
    pub count: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceReport {
    pub rows: Vec<DistanceRow>,
    /// `mean(d1) < mean(d2) < mean(d3)`, all three populated.
    pub monotone: bool,
    /// Distance-tagged images without a usable score.
    pub unscored: usize,
}

pub fn distance_sensitivity(scores: &HashMap<String, f64>, manifest: &Manifest) -> Result<DistanceReport> {
    let mut groups: BTreeMap<Distance, Vec<f64>> = BTreeMap::new();
    let mut unscored = 0;
    for r in manifest.iter() {
        let Some(d) = r.distance else { continue };
        match scores.get(&r.id) {
            Some(&s) => groups.entry(d).or_default().push(s),
            None => unscored += 1,
        }
    }
    if groups.is_empty() {
        return Err(AnalysisError::Empty("distance-tagged"));
    }
    let rows: Vec<DistanceRow> = Distance::ALL
        .iter()
        .map(|&d| {
            let xs = groups.get(&d).map(Vec::as_slice).unwrap_or(&[]);
            DistanceRow {
                distance: d,
                count: xs.len(),
                mean: stats::mean(xs),
                std: stats::sample_std(xs),
            }
        })
        .collect();
    let means: Option<Vec<f64>> = rows.iter().map(|r| r.mean).collect();
    let monotone = means.is_some_and(|m| m.windows(2).all(|w| w[0] < w[1]));
    Ok(DistanceReport {
        rows,
        monotone,
        unscored,
    })
}

/// Label counts per distance and dimension, in long format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttributeCount {
    pub distance: Distance,
    pub dimension: Dimension,
    pub label: &'static str,
    pub count: usize,
}

pub fn attribute_distribution(records: &[ScoreRecord], manifest: &Manifest) -> Result<Vec<AttributeCount>> {
    let mut counts: BTreeMap<(Distance, Dimension, &'static str), usize> = BTreeMap::new();
    let mut any = false;
    for r in records {
        let (Some(a), false) = (&r.attributes, r.is_failed()) else { continue };
        let Some(d) = manifest.get(&r.image_id).and_then(|m| m.distance) else { continue };
        any = true;
        for dim in Dimension::ALL {
            *counts.entry((d, dim, dim.label_of(a))).or_default() += 1;
        }
    }
    if !any {
        return Err(AnalysisError::Empty("distance-tagged classification"));
    }
    let mut out = Vec::new();
    for d in Distance::ALL {
        for dim in Dimension::ALL {
            for label in dim.labels() {
                out.push(AttributeCount {
                    distance: d,
                    dimension: dim,
                    label,
                    count: counts.get(&(d, dim, label)).copied().unwrap_or(0),
                });
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Synthetic detection metrics

/// A detection prediction paired with the image's ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDetection {
    pub image_id: String,
    pub flags: DetectionFlags,
    pub truth: GroundTruth,
}

pub const L0_BUCKETS: [&str; 4] = ["0", "1", "2", ">=3"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L0Bucket {
    pub label: &'static str,
    pub count: usize,
    pub percent: f64,
    pub mean_quality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L0Report {
    pub total: usize,
    pub buckets: [L0Bucket; 4],
}

/// False-positive counts on clean images, bucketed as 0, 1, 2 and ≥3.
pub fn l0_analysis(detections: &[LabeledDetection]) -> Result<L0Report> {
    if detections.is_empty() {
        return Err(AnalysisError::Empty("clean detection"));
    }
    let mut scores: [Vec<f64>; 4] = Default::default();
    for d in detections {
        if !d.truth.vector.is_zero() {
            return Err(AnalysisError::NonZeroTruth(d.image_id.clone()));
        }
        let fp = d.flags.vector().count_ones() as usize;
        scores[fp.min(3)].push(d.flags.quality_score);
    }
    let total = detections.len();
    let buckets = [0, 1, 2, 3].map(|i| L0Bucket {
        label: L0_BUCKETS[i],
        count: scores[i].len(),
        percent: percent(scores[i].len(), total),
        mean_quality: stats::mean(&scores[i]),
    });
    Ok(L0Report { total, buckets })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L2Report {
    pub total: usize,
    /// Percent of items with 0, 1, 2 and 3 of their 3 artifacts flagged.
    pub completeness: [f64; 4],
    pub completeness_counts: [usize; 4],
    pub hard_recall: f64,
}

fn check_mixed_truth(d: &LabeledDetection) -> Result<usize> {
    let malformed = |reason: String| AnalysisError::MalformedTruth {
        id: d.image_id.clone(),
        reason,
    };
    if d.truth.vector.count_ones() != 3 {
        return Err(malformed(format!("{} bits set, expected 3", d.truth.vector.count_ones())));
    }
    match d.truth.hard_index {
        Some(h) if h < DegradationVector::LEN && d.truth.vector.get(h) => Ok(h),
        Some(h) => Err(malformed(format!("hard_index {h} is not a set bit"))),
        None => Err(malformed("no hard_index".into())),
    }
}

/// Completeness over the three true artifacts and hard-artifact recall.
pub fn l2_analysis(detections: &[LabeledDetection]) -> Result<L2Report> {
    if detections.is_empty() {
        return Err(AnalysisError::Empty("mixed detection"));
    }
    let mut counts = [0usize; 4];
    let mut recalled = 0;
    for d in detections {
        let hard = check_mixed_truth(d)?;
        let pred = d.flags.vector();
        counts[pred.intersection(d.truth.vector).count_ones() as usize] += 1;
        if pred.get(hard) {
            recalled += 1;
        }
    }
    let total = detections.len();
    Ok(L2Report {
        total,
        completeness: counts.map(|c| percent(c, total)),
        completeness_counts: counts,
        hard_recall: percent(recalled, total),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HammingReport {
    pub total: usize,
    /// Percent of items at Hamming distance 0..=5.
    pub distribution: [f64; 6],
    pub counts: [usize; 6],
}

pub fn hamming_analysis(predicted: &[DegradationVector], truth: &[DegradationVector]) -> Result<HammingReport> {
    if predicted.len() != truth.len() {
        return Err(AnalysisError::LengthMismatch(predicted.len(), truth.len()));
    }
    if predicted.is_empty() {
        return Err(AnalysisError::Empty("detection"));
    }
    let mut counts = [0usize; 6];
    for (p, t) in predicted.iter().zip(truth) {
        counts[p.hamming(*t) as usize] += 1;
    }
    let total = predicted.len();
    Ok(HammingReport {
        total,
        distribution: counts.map(|c| percent(c, total)),
        counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticReport {
    pub l0: Option<L0Report>,
    pub l2: Option<L2Report>,
    /// Hamming distribution over mixed items.
    pub hamming: Option<HammingReport>,
    pub failed: usize,
    /// Parsed detections whose image is neither a clean nor a mixed benchmark id.
    pub unmatched: usize,
}

fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Err(AnalysisError::Empty(_)) => Ok(None),
        other => other.map(Some),
    }
}

/// Splits detection records into clean and mixed sets using the benchmark's
/// ground truth, then runs the L0, L2 and Hamming analyses.
pub fn synthetic_report(records: &[ScoreRecord], items: &[BenchmarkItem]) -> Result<SyntheticReport> {
    let mut truths: HashMap<&str, GroundTruth> = HashMap::new();
    for item in items {
        truths.insert(&item.clean_id, GroundTruth::CLEAN);
        truths.insert(&item.mixed_id, item.truth());
    }
    let mut clean = Vec::new();
    let mut mixed = Vec::new();
    let mut failed = 0;
    let mut unmatched = 0;
    for r in records.iter().filter(|r| r.variant == ScoreVariant::Detection) {
        let Some(flags) = r.flags.filter(|_| !r.is_failed()) else {
            failed += 1;
            continue;
        };
        let Some(&truth) = truths.get(r.image_id.as_str()) else {
            unmatched += 1;
            continue;
        };
        let det = LabeledDetection {
            image_id: r.image_id.clone(),
            flags,
            truth,
        };
        if truth.vector.is_zero() {
            clean.push(det);
        } else {
            mixed.push(det);
        }
    }
    if clean.is_empty() && mixed.is_empty() {
        return Err(AnalysisError::Empty("detection"));
    }
    let pred: Vec<DegradationVector> = mixed.iter().map(|d| d.flags.vector()).collect();
    let truth: Vec<DegradationVector> = mixed.iter().map(|d| d.truth.vector).collect();
    Ok(SyntheticReport {
        l0: optional(l0_analysis(&clean))?,
        l2: optional(l2_analysis(&mixed))?,
        hamming: optional(hamming_analysis(&pred, &truth))?,
        failed,
        unmatched,
    })
}
