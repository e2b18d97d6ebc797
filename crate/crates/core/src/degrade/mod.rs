//! Mix Degradation benchmark: each clean image gets three distinct artifacts,
//! one at hard intensity and two mild, with a five-bit ground-truth vector.

mod ops;
mod rng;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use ops::{
    exposure, gaussian_blur, gaussian_noise, jpeg_round_trip, low_resolution, mean_abs_deviation, to_rgb,
};
pub use rng::{item_seed, MixRng, SCHEME as RNG_SCHEME};

use crate::artifact::{ArtifactKind, DegradationVector};
use crate::ingest::{write_jsonl, ImageRecord, ImageVariant, IngestError, Manifest};

#[derive(Debug, thiserror::Error)]
pub enum DegradeError {
    #[error("unsupported pixel layout {0}; expected 8-bit gray, gray+alpha, RGB or RGBA")]
    UnsupportedLayout(String),
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("invalid degradation specs: {0}")]
    InvalidSpecs(String),
    #[error("invalid degradation ranges: {0}")]
    InvalidRanges(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DegradeError + '_ {
    move |source| DegradeError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Mild,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegradationParams {
    Blur { sigma: f64 },
    Noise { sigma: f64, seed: u64 },
    LowRes { factor: f64 },
    Compression { quality: u8 },
    BadLighting { ev: f64 },
}

impl DegradationParams {
    pub fn kind(&self) -> ArtifactKind {
        match self {
            DegradationParams::Blur { .. } => ArtifactKind::Blur,
            DegradationParams::Noise { .. } => ArtifactKind::Noise,
            DegradationParams::LowRes { .. } => ArtifactKind::LowRes,
            DegradationParams::Compression { .. } => ArtifactKind::Compression,
            DegradationParams::BadLighting { .. } => ArtifactKind::BadLighting,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    #[serde(flatten)]
    pub params: DegradationParams,
    pub tier: Tier,
}

impl DegradationSpec {
    pub fn kind(&self) -> ArtifactKind {
        self.params.kind()
    }
}

/// Inclusive `[lo, hi]` interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span<T> {
    pub lo: T,
    pub hi: T,
}

impl<T> Span<T> {
    pub const fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierSpans<T> {
    pub mild: Span<T>,
    pub hard: Span<T>,
}

impl<T: Copy> TierSpans<T> {
    pub fn get(&self, tier: Tier) -> Span<T> {
        match tier {
            Tier::Mild => self.mild,
            Tier::Hard => self.hard,
        }
    }
}

/// Parameter ranges per artifact and tier. Exposure spans are magnitudes in
/// EV; the sign is drawn separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationRanges {
    pub blur_sigma: TierSpans<f64>,
    pub noise_sigma: TierSpans<f64>,
    pub low_res_factor: TierSpans<f64>,
    pub jpeg_quality: TierSpans<u8>,
    pub exposure_ev: TierSpans<f64>,
}

impl Default for DegradationRanges {
    fn default() -> Self {
        Self {
            blur_sigma: TierSpans {
                mild: Span::new(0.8, 1.5),
                hard: Span::new(2.5, 4.0),
            },
            noise_sigma: TierSpans {
                mild: Span::new(0.02, 0.05),
                hard: Span::new(0.08, 0.15),
            },
            low_res_factor: TierSpans {
                mild: Span::new(0.4, 0.6),
                hard: Span::new(0.1, 0.2),
            },
            jpeg_quality: TierSpans {
                mild: Span::new(40, 60),
                hard: Span::new(5, 15),
            },
            exposure_ev: TierSpans {
                mild: Span::new(0.3, 0.6),
                hard: Span::new(1.0, 1.5),
            },
        }
    }
}

impl DegradationRanges {
    /// Checks each span lies in its parameter's domain and that the hard
    /// span is strictly more severe than the mild one (no overlap).
    pub fn validate(&self) -> Result<(), DegradeError> {
        fn span(name: &str, s: Span<f64>, lo: f64, hi: f64) -> Result<(), DegradeError> {
            if !(s.lo.is_finite() && s.hi.is_finite() && lo <= s.lo && s.lo <= s.hi && s.hi <= hi) {
                return Err(DegradeError::InvalidRanges(format!(
                    "{name} [{}, {}] must be ordered within [{lo}, {hi}]",
                    s.lo, s.hi
                )));
            }
            Ok(())
        }
        let bad = |name: &str| DegradeError::InvalidRanges(format!("{name}: hard range must be strictly more severe than mild"));
        for tier in [Tier::Mild, Tier::Hard] {
            span("blur_sigma", self.blur_sigma.get(tier), 1e-6, 100.0)?;
            span("noise_sigma", self.noise_sigma.get(tier), 0.0, 1.0)?;
            span("low_res_factor", self.low_res_factor.get(tier), 1e-6, 1.0)?;
            span("exposure_ev", self.exposure_ev.get(tier), 0.0, 16.0)?;
            let q = self.jpeg_quality.get(tier);
            if !(1 <= q.lo && q.lo <= q.hi && q.hi <= 100) {
                return Err(DegradeError::InvalidRanges(format!(
                    "jpeg_quality [{}, {}] must be ordered within [1, 100]",
                    q.lo, q.hi
                )));
            }
        }
        if self.blur_sigma.hard.lo <= self.blur_sigma.mild.hi {
            return Err(bad("blur_sigma"));
        }
        if self.noise_sigma.hard.lo <= self.noise_sigma.mild.hi {
            return Err(bad("noise_sigma"));
        }
        if self.low_res_factor.hard.hi >= self.low_res_factor.mild.lo {
            return Err(bad("low_res_factor"));
        }
        if self.jpeg_quality.hard.hi >= self.jpeg_quality.mild.lo {
            return Err(bad("jpeg_quality"));
        }
        if self.exposure_ev.hard.lo <= self.exposure_ev.mild.hi {
            return Err(bad("exposure_ev"));
        }
        Ok(())
    }

    /// Whether `spec`'s parameter lies in its tier's range.
    pub fn contains(&self, spec: &DegradationSpec) -> bool {
        let inside = |s: Span<f64>, v: f64| s.lo <= v && v <= s.hi;
        match spec.params {
            DegradationParams::Blur { sigma } => inside(self.blur_sigma.get(spec.tier), sigma),
            DegradationParams::Noise { sigma, .. } => inside(self.noise_sigma.get(spec.tier), sigma),
            DegradationParams::LowRes { factor } => inside(self.low_res_factor.get(spec.tier), factor),
            DegradationParams::Compression { quality } => {
                let s = self.jpeg_quality.get(spec.tier);
                s.lo <= quality && quality <= s.hi
            }
            DegradationParams::BadLighting { ev } => inside(self.exposure_ev.get(spec.tier), ev.abs()),
        }
    }

    fn draw(&self, kind: ArtifactKind, tier: Tier, rng: &mut MixRng) -> DegradationParams {
        let uniform = |s: Span<f64>, rng: &mut MixRng| rng.uniform(s.lo, s.hi);
        match kind {
            ArtifactKind::Blur => DegradationParams::Blur {
                sigma: uniform(self.blur_sigma.get(tier), rng),
            },
            ArtifactKind::Noise => {
                let sigma = uniform(self.noise_sigma.get(tier), rng);
                DegradationParams::Noise {
                    sigma,
                    seed: rng.next_u64(),
                }
            }
            ArtifactKind::LowRes => DegradationParams::LowRes {
                factor: uniform(self.low_res_factor.get(tier), rng),
            },
            ArtifactKind::Compression => {
                let s = self.jpeg_quality.get(tier);
                let quality = s.lo + rng.below(usize::from(s.hi - s.lo) + 1) as u8;
                DegradationParams::Compression { quality }
            }
            ArtifactKind::BadLighting => {
                let magnitude = uniform(self.exposure_ev.get(tier), rng);
                let ev = if rng.unit() < 0.5 { -magnitude } else { magnitude };
                DegradationParams::BadLighting { ev }
            }
        }
    }
}

/// Samples three distinct artifacts for one item.
///
/// Draw order on a [`MixRng`] seeded with `seed`:
/// 1. three kinds without replacement: `below(5)`, `below(4)`, `below(3)`
///    index into the remaining kinds in bit order;
/// 2. `below(3)` picks the hard one among the three in draw order;
/// 3. parameters for each drawn kind, in draw order (blur: σ; noise: σ then a
///    `next_u64` noise seed; low_res: factor; compression: `lo + below(hi-lo+1)`;
///    bad_lighting: magnitude, then negative iff `unit() < 0.5`).
///
/// The result is sorted by bit position.
pub fn sample_mix(seed: u64, ranges: &DegradationRanges) -> [DegradationSpec; 3] {
    let mut rng = MixRng::new(seed);
    let mut pool = ArtifactKind::ALL.to_vec();
    let mut kinds = [ArtifactKind::Blur; 3];
    for (i, slot) in kinds.iter_mut().enumerate() {
        *slot = pool.remove(rng.below(5 - i));
    }
    let hard = rng.below(3);
    let mut specs = [0, 1, 2].map(|i| {
        let tier = if i == hard { Tier::Hard } else { Tier::Mild };
        DegradationSpec {
            params: ranges.draw(kinds[i], tier, &mut rng),
            tier,
        }
    });
    specs.sort_by_key(|s| s.kind());
    specs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub vector: DegradationVector,
    pub hard_index: Option<usize>,
}

impl GroundTruth {
    pub const CLEAN: GroundTruth = GroundTruth {
        vector: DegradationVector::ZERO,
        hard_index: None,
    };
}

pub fn ground_truth(specs: &[DegradationSpec]) -> Result<GroundTruth, DegradeError> {
    let mut mask = 0u8;
    let mut hard = None;
    for s in specs {
        let bit = s.kind().bit();
        if mask & (1 << bit) != 0 {
            return Err(DegradeError::InvalidSpecs(format!("duplicate kind {}", s.kind())));
        }
        mask |= 1 << bit;
        if s.tier == Tier::Hard {
            if hard.is_some() {
                return Err(DegradeError::InvalidSpecs("more than one hard artifact".into()));
            }
            hard = Some(bit);
        }
    }
    if !specs.is_empty() && hard.is_none() {
        return Err(DegradeError::InvalidSpecs("no hard artifact".into()));
    }
    Ok(GroundTruth {
        vector: DegradationVector::from_mask(mask).expect("five-bit mask"),
        hard_index: hard,
    })
}

/// One line of the ground-truth file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawItem")]
pub struct BenchmarkItem {
    pub clean_id: String,
    pub mixed_id: String,
    pub vector: DegradationVector,
    pub hard_index: usize,
    pub seed: u64,
    pub specs: Vec<DegradationSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawItem {
    clean_id: String,
    mixed_id: String,
    vector: DegradationVector,
    hard_index: usize,
    seed: u64,
    specs: Vec<DegradationSpec>,
}

impl TryFrom<RawItem> for BenchmarkItem {
    type Error = String;

    fn try_from(r: RawItem) -> Result<Self, String> {
        let item = BenchmarkItem {
            clean_id: r.clean_id,
            mixed_id: r.mixed_id,
            vector: r.vector,
            hard_index: r.hard_index,
            seed: r.seed,
            specs: r.specs,
        };
        item.validate()?;
        Ok(item)
    }
}

impl BenchmarkItem {
    pub fn new(clean_id: &str, seed: u64, specs: Vec<DegradationSpec>) -> Result<Self, DegradeError> {
        let truth = ground_truth(&specs)?;
        let item = BenchmarkItem {
            clean_id: clean_id.to_owned(),
            mixed_id: mixed_id(clean_id),
            vector: truth.vector,
            hard_index: truth.hard_index.unwrap_or(usize::MAX),
            seed,
            specs,
        };
        item.validate().map_err(DegradeError::InvalidSpecs)?;
        Ok(item)
    }

    pub fn truth(&self) -> GroundTruth {
        GroundTruth {
            vector: self.vector,
            hard_index: Some(self.hard_index),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.specs.len() != 3 {
            return Err(format!("expected 3 specs, found {}", self.specs.len()));
        }
        let truth = ground_truth(&self.specs).map_err(|e| e.to_string())?;
        if truth.vector != self.vector {
            return Err(format!("vector {} does not match specs {}", self.vector, truth.vector));
        }
        if truth.hard_index != Some(self.hard_index) {
            return Err(format!("hard_index {} does not match specs", self.hard_index));
        }
        Ok(())
    }
}

pub fn mixed_id(clean_id: &str) -> String {
    format!("{clean_id}__mixed")
}

/// Applies one artifact. For compression the encoded JPEG is discarded.
pub fn apply_degradation(image: &RgbImage, spec: &DegradationSpec) -> Result<RgbImage, DegradeError> {
    match spec.params {
        DegradationParams::Blur { sigma } => gaussian_blur(image, sigma),
        DegradationParams::Noise { sigma, seed } => gaussian_noise(image, sigma, seed),
        DegradationParams::LowRes { factor } => low_resolution(image, factor),
        DegradationParams::Compression { quality } => Ok(jpeg_round_trip(image, quality)?.0),
        DegradationParams::BadLighting { ev } => exposure(image, ev),
    }
}

#[derive(Debug, Clone)]
pub struct DegradedImage {
    pub pixels: RgbImage,
    /// The artifact's own JPEG encoding, kept when compression was the last
    /// operation applied.
    pub jpeg: Option<Vec<u8>>,
}

impl DegradedImage {
    pub fn extension(&self) -> &'static str {
        if self.jpeg.is_some() {
            "jpg"
        } else {
            "png"
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, DegradeError> {
        if let Some(bytes) = &self.jpeg {
            return Ok(bytes.clone());
        }
        let mut out = std::io::Cursor::new(Vec::new());
        self.pixels.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

/// Applies `specs` in ascending bit order.
pub fn degrade_image(image: &RgbImage, specs: &[DegradationSpec]) -> Result<DegradedImage, DegradeError> {
    let mut ordered = specs.to_vec();
    ordered.sort_by_key(|s| s.kind());
    let mut pixels = image.clone();
    let mut jpeg = None;
    for spec in &ordered {
        if let DegradationParams::Compression { quality } = spec.params {
            let (decoded, bytes) = jpeg_round_trip(&pixels, quality)?;
            pixels = decoded;
            jpeg = Some(bytes);
        } else {
            pixels = apply_degradation(&pixels, spec)?;
            jpeg = None;
        }
    }
    Ok(DegradedImage { pixels, jpeg })
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, DegradeError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    to_rgb(image::load_from_memory(&bytes)?)
}

/// File stem for an id: unsafe characters become `_`, and a short digest is
/// appended whenever that changed anything so distinct ids stay distinct.
pub fn file_stem(id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if clean == id && !id.starts_with('.') {
        return clean;
    }
    let digest = Sha256::digest(id.as_bytes());
    let tag: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
    format!("{clean}-{tag}")
}

pub const IMAGES_DIR: &str = "images";
pub const GROUND_TRUTH_FILE: &str = "generate_ground_truth.jsonl";
pub const CLEAN_MANIFEST_FILE: &str = "generate_clean.jsonl";
pub const MIXED_MANIFEST_FILE: &str = "generate_mixed.jsonl";
/// Clean followed by mixed records, for scoring both in one pass.
pub const ALL_MANIFEST_FILE: &str = "generate_all.jsonl";

#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    pub items: Vec<BenchmarkItem>,
    /// Clean ids that could not be processed, with the reason.
    pub skipped: Vec<(String, String)>,
    pub clean_manifest: PathBuf,
    pub mixed_manifest: PathBuf,
    pub all_manifest: PathBuf,
    pub ground_truth: PathBuf,
}

/// Generates one mixed image per clean image under `out_dir`, plus the
/// ground-truth file and clean/mixed manifests.
pub fn generate_benchmark(
    clean: &Manifest,
    master_seed: u64,
    ranges: &DegradationRanges,
    out_dir: &Path,
) -> Result<BenchmarkOutput, DegradeError> {
    ranges.validate()?;
    let images_dir = out_dir.join(IMAGES_DIR);
    fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;

    let results: Vec<Result<(ImageRecord, ImageRecord, BenchmarkItem), (String, String)>> = clean
        .records()
        .par_iter()
        .map(|record| {
            let source = clean.resolve(record);
            let fail = |e: DegradeError| (record.id.clone(), e.to_string());
            let image = load_rgb(&source).map_err(fail)?;
            let seed = item_seed(master_seed, &record.id);
            let specs = sample_mix(seed, ranges);
            let item = BenchmarkItem::new(&record.id, seed, specs.to_vec()).map_err(fail)?;
            let degraded = degrade_image(&image, &specs).map_err(fail)?;
            let rel = format!("{IMAGES_DIR}/{}.{}", file_stem(&item.mixed_id), degraded.extension());
            let target = out_dir.join(&rel);
            let bytes = degraded.encode().map_err(fail)?;
            fs::write(&target, bytes).map_err(|e| fail(io_err(&target)(e)))?;

            let abs = fs::canonicalize(&source).unwrap_or(source);
            let clean_rec = ImageRecord {
                path: abs.to_string_lossy().into_owned(),
                variant: Some(ImageVariant::Clean),
                ..record.clone()
            };
            let mixed_rec = ImageRecord {
                id: item.mixed_id.clone(),
                path: rel,
                variant: Some(ImageVariant::Mixed),
                ..record.clone()
            };
            Ok((clean_rec, mixed_rec, item))
        })
        .collect();

    let mut clean_records = Vec::new();
    let mut mixed_records = Vec::new();
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok((c, m, item)) => {
                clean_records.push(c);
                mixed_records.push(m);
                items.push(item);
            }
            Err((id, reason)) => {
                tracing::warn!(id = %id, "skipping image: {reason}");
                skipped.push((id, reason));
            }
        }
    }

    let write = |name: &str, f: &dyn Fn(&mut dyn Write) -> std::io::Result<()>| -> Result<PathBuf, DegradeError> {
        let path = out_dir.join(name);
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))?;
        Ok(path)
    };
    let ground_truth = write(GROUND_TRUTH_FILE, &|w| write_jsonl(w, &items))?;
    let clean_manifest = write(CLEAN_MANIFEST_FILE, &|w| write_jsonl(w, &clean_records))?;
    let mixed_manifest = write(MIXED_MANIFEST_FILE, &|w| write_jsonl(w, &mixed_records))?;
    let all_manifest = write(ALL_MANIFEST_FILE, &|w| {
        write_jsonl(&mut *w, &clean_records)?;
        write_jsonl(w, &mixed_records)
    })?;

    Ok(BenchmarkOutput {
        items,
        skipped,
        clean_manifest,
        mixed_manifest,
        all_manifest,
        ground_truth,
    })
}
