//! Loaders for image manifests, embeddings, verification pairs and score files.
//!
//! Manifests, embeddings and scores are JSON Lines; pairs are CSV with the
//! header `id_a,id_b,label[,similarity]`. Every writer here produces the
//! exact bytes its loader expects, so load → write → load is stable.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{AttributeAssessment, DetectionFlags, ParseStatus, PromptVariant};

/// Dataset tags whose images may carry a capture-distance label.
pub const SURVEILLANCE_DATASETS: &[&str] = &["scface"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: duplicate id {id:?}")]
    DuplicateId { path: PathBuf, id: String },
    #[error("vector dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("no embedding for image {0:?}")]
    MissingEmbedding(String),
}

impl IngestError {
    fn io(path: &Path, source: io::Error) -> Self {
        IngestError::Io {
            path: path.to_owned(),
            source,
        }
    }

    fn line(path: &Path, line: usize, message: impl fmt::Display) -> Self {
        IngestError::Line {
            path: path.to_owned(),
            line,
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    D1,
    D2,
    D3,
}

impl Distance {
    pub const ALL: [Distance; 3] = [Distance::D1, Distance::D2, Distance::D3];

    pub fn name(self) -> &'static str {
        match self {
            Distance::D1 => "d1",
            Distance::D2 => "d2",
            Distance::D3 => "d3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageVariant {
    Clean,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    pub path: String,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<Distance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<ImageVariant>,
}

impl ImageRecord {
    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.path.is_empty() {
            return Err(format!("image {:?} has an empty path", self.id));
        }
        if self.distance.is_some()
            && !SURVEILLANCE_DATASETS
                .iter()
                .any(|d| d.eq_ignore_ascii_case(&self.dataset))
        {
            return Err(format!(
                "image {:?}: distance given for non-surveillance dataset {:?}",
                self.id, self.dataset
            ));
        }
        Ok(())
    }
}

/// Ordered image records with unique ids. Relative paths resolve against
/// `base_dir`, the directory holding the manifest file.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    records: Vec<ImageRecord>,
    index: HashMap<String, usize>,
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<ImageRecord>, base_dir: impl Into<PathBuf>) -> Result<Self, String> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            r.validate()?;
            if index.insert(r.id.clone(), i).is_some() {
                return Err(format!("duplicate id {:?}", r.id));
            }
        }
        Ok(Self {
            records,
            index,
            base_dir: base_dir.into(),
        })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ImageRecord> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, record: &ImageRecord) -> PathBuf {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn write_jsonl<W: Write>(&self, out: W) -> io::Result<()> {
        write_jsonl(out, &self.records)
    }
}

impl<'a> IntoIterator for &'a Manifest {
    type Item = &'a ImageRecord;
    type IntoIter = std::slice::Iter<'a, ImageRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| IngestError::io(path, e))
}

/// Reads JSON Lines, skipping blank lines. Errors carry the 1-based line number.
fn read_jsonl<T: DeserializeOwned, R: Read>(reader: R, path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| IngestError::line(path, i + 1, e))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, items: &[T]) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let base_dir = path.parent().map(Path::to_owned).unwrap_or_default();
    parse_manifest(open(path)?, path, base_dir)
}

pub fn parse_manifest<R: Read>(reader: R, path: &Path, base_dir: PathBuf) -> Result<Manifest> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ImageRecord =
            serde_json::from_str(&line).map_err(|e| IngestError::line(path, i + 1, e))?;
        record
            .validate()
            .map_err(|m| IngestError::line(path, i + 1, m))?;
        if !seen.insert(record.id.clone()) {
            return Err(IngestError::DuplicateId {
                path: path.to_owned(),
                id: record.id,
            });
        }
        records.push(record);
    }
    Manifest::new(records, base_dir).map_err(|m| IngestError::line(path, 0, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

/// Embeddings keyed by image id; all vectors share one dimension.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn from_records(records: Vec<EmbeddingRecord>) -> Result<Self, String> {
        let mut table = EmbeddingTable::default();
        for r in records {
            table.insert(r.id, r.vector)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, id: String, vector: Vec<f64>) -> Result<(), String> {
        if vector.is_empty() {
            return Err(format!("embedding {id:?} is empty"));
        }
        if self.vectors.is_empty() {
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(format!(
                "embedding {id:?} has dimension {}, expected {}",
                vector.len(),
                self.dim
            ));
        }
        if norm(&vector) == 0.0 {
            return Err(format!("embedding {id:?} has zero norm"));
        }
        if self.vectors.contains_key(&id) {
            return Err(format!("duplicate embedding id {id:?}"));
        }
        self.vectors.insert(id, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    /// Cosine similarity between the embeddings of two images.
    pub fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        let u = self
            .get(a)
            .ok_or_else(|| IngestError::MissingEmbedding(a.to_owned()))?;
        let v = self
            .get(b)
            .ok_or_else(|| IngestError::MissingEmbedding(b.to_owned()))?;
        cosine_similarity(u, v)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let mut table = EmbeddingTable::default();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: EmbeddingRecord =
            serde_json::from_str(&line).map_err(|e| IngestError::line(path, i + 1, e))?;
        table
            .insert(r.id, r.vector)
            .map_err(|m| IngestError::line(path, i + 1, m))?;
    }
    Ok(table)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `u·v / (‖u‖‖v‖)`, clamped to [-1, 1].
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(IngestError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(IngestError::ZeroNorm);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Genuine,
    Impostor,
}

impl PairLabel {
    pub fn name(self) -> &'static str {
        match self {
            PairLabel::Genuine => "genuine",
            PairLabel::Impostor => "impostor",
        }
    }
}

impl FromStr for PairLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "genuine" => Ok(PairLabel::Genuine),
            "impostor" => Ok(PairLabel::Impostor),
            other => Err(format!("label {other:?} is not one of genuine, impostor")),
        }
    }
}

/// A verification pair with its similarity resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub id_a: String,
    pub id_b: String,
    pub label: PairLabel,
    pub similarity: f64,
}

/// Loads `id_a,id_b,label[,similarity]` rows. A similarity in the file wins;
/// otherwise it is computed from `embeddings`.
pub fn load_pairs(path: impl AsRef<Path>, embeddings: Option<&EmbeddingTable>) -> Result<Vec<PairRecord>> {
    let path = path.as_ref();
    parse_pairs(open(path)?, path, embeddings)
}

pub fn parse_pairs<R: Read>(
    reader: R,
    path: &Path,
    embeddings: Option<&EmbeddingTable>,
) -> Result<Vec<PairRecord>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = csv
        .headers()
        .map_err(|e| IngestError::line(path, 1, e))?
        .clone();
    let expected = ["id_a", "id_b", "label", "similarity"];
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < 3 || names.len() > 4 || names.iter().zip(expected).any(|(a, b)| *a != b) {
        return Err(IngestError::line(
            path,
            1,
            format!("expected header id_a,id_b,label[,similarity], got {}", names.join(",")),
        ));
    }

    let mut pairs = Vec::new();
    for row in csv.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            IngestError::line(path, line, e)
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let err = |m: String| IngestError::line(path, line, m);
        if row.len() < 3 || row.len() > 4 {
            return Err(err(format!("expected 3 or 4 fields, got {}", row.len())));
        }
        let id_a = row[0].to_owned();
        let id_b = row[1].to_owned();
        if id_a.is_empty() || id_b.is_empty() {
            return Err(err("empty image id".into()));
        }
        if id_a == id_b {
            return Err(err(format!("pair compares {id_a:?} with itself")));
        }
        let label: PairLabel = row[2].parse().map_err(err)?;
        let explicit = row.get(3).filter(|s| !s.is_empty());
        let similarity = match explicit {
            Some(text) => {
                let s: f64 = text
                    .parse()
                    .map_err(|_| err(format!("similarity {text:?} is not a number")))?;
                if !(-1.0..=1.0).contains(&s) {
                    return Err(err(format!("similarity {s} is outside [-1, 1]")));
                }
                s
            }
            None => {
                let table = embeddings.ok_or_else(|| {
                    err(format!(
                        "pair ({id_a}, {id_b}) has no similarity and no embeddings were given"
                    ))
                })?;
                table.similarity(&id_a, &id_b).map_err(|e| err(e.to_string()))?
            }
        };
        pairs.push(PairRecord {
            id_a,
            id_b,
            label,
            similarity,
        });
    }
    Ok(pairs)
}

pub fn write_pairs<W: Write>(mut out: W, pairs: &[PairRecord]) -> io::Result<()> {
    writeln!(out, "id_a,id_b,label,similarity")?;
    for p in pairs {
        writeln!(out, "{},{},{},{}", p.id_a, p.id_b, p.label.name(), p.similarity)?;
    }
    out.flush()
}

/// Which prompt produced a score, or `Baseline` for an external FIQA method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    Simple,
    Utility,
    Reliability,
    Classification,
    Detection,
    Baseline,
}

impl ScoreVariant {
    pub fn name(self) -> &'static str {
        match self.prompt() {
            Some(p) => p.name(),
            None => "baseline",
        }
    }

    pub fn prompt(self) -> Option<PromptVariant> {
        match self {
            ScoreVariant::Simple => Some(PromptVariant::Simple),
            ScoreVariant::Utility => Some(PromptVariant::Utility),
            ScoreVariant::Reliability => Some(PromptVariant::Reliability),
            ScoreVariant::Classification => Some(PromptVariant::Classification),
            ScoreVariant::Detection => Some(PromptVariant::Detection),
            ScoreVariant::Baseline => None,
        }
    }
}

impl From<PromptVariant> for ScoreVariant {
    fn from(v: PromptVariant) -> Self {
        match v {
            PromptVariant::Simple => ScoreVariant::Simple,
            PromptVariant::Utility => ScoreVariant::Utility,
            PromptVariant::Reliability => ScoreVariant::Reliability,
            PromptVariant::Classification => ScoreVariant::Classification,
            PromptVariant::Detection => ScoreVariant::Detection,
        }
    }
}

impl fmt::Display for ScoreVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One quality judgment for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRecord {
    pub image_id: String,
    pub source: String,
    pub variant: ScoreVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<AttributeAssessment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags: Option<DetectionFlags>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    pub parse_status: ParseStatus,
}

impl ScoreRecord {
    /// A successfully parsed baseline score.
    pub fn baseline(image_id: impl Into<String>, source: impl Into<String>, score: f64) -> Self {
        Self {
            image_id: image_id.into(),
            source: source.into(),
            variant: ScoreVariant::Baseline,
            score: Some(score),
            attributes: None,
            flags: None,
            raw: None,
            parse_status: ParseStatus::Ok,
        }
    }

    pub fn is_failed(&self) -> bool {
        self.parse_status == ParseStatus::Failed
    }

    pub fn validate(&self) -> Result<(), String> {
        let failed = self.is_failed();
        match (failed, self.score) {
            (true, Some(_)) => return Err("failed record carries a score".into()),
            (false, None) => return Err("parsed record has no score".into()),
            (false, Some(s)) if !s.is_finite() => return Err(format!("score {s} is not finite")),
            // Baseline methods use their own scales; only rank order matters downstream.
            (false, Some(s)) if self.variant != ScoreVariant::Baseline && !(0.0..=100.0).contains(&s) => {
                return Err(format!("score {s} is outside [0, 100]"));
            }
            _ => {}
        }
        if self.flags.is_some() && self.variant != ScoreVariant::Detection {
            return Err("detection flags on a non-detection record".into());
        }
        if self.attributes.is_some() && self.variant != ScoreVariant::Classification {
            return Err("attributes on a non-classification record".into());
        }
        if !failed {
            if self.variant == ScoreVariant::Detection && self.flags.is_none() {
                return Err("parsed detection record without flags".into());
            }
            if self.variant == ScoreVariant::Classification && self.attributes.is_none() {
                return Err("parsed classification record without attributes".into());
            }
        }
        Ok(())
    }
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    parse_scores(open(path)?, path)
}

pub fn parse_scores<R: Read>(reader: R, path: &Path) -> Result<Vec<ScoreRecord>> {
    let records: Vec<ScoreRecord> = read_jsonl(reader, path)?;
    let mut seen = HashSet::new();
    for (i, r) in records.iter().enumerate() {
        r.validate().map_err(|m| {
            IngestError::line(path, i + 1, format!("image {:?}: {m}", r.image_id))
        })?;
        if !seen.insert((r.image_id.as_str(), r.source.as_str(), r.variant)) {
            return Err(IngestError::DuplicateId {
                path: path.to_owned(),
                id: r.image_id.clone(),
            });
        }
    }
    Ok(records)
}

pub fn write_scores<W: Write>(out: W, records: &[ScoreRecord]) -> io::Result<()> {
    write_jsonl(out, records)
}

/// Scores of successfully parsed records, keyed by image id, plus the number
/// of failed records left out.
pub fn usable_scores(records: &[ScoreRecord]) -> (HashMap<String, f64>, usize) {
    let mut map = HashMap::with_capacity(records.len());
    let mut failed = 0;
    for r in records {
        match r.score {
            Some(s) if !r.is_failed() => {
                map.insert(r.image_id.clone(), s);
            }
            _ => failed += 1,
        }
    }
    (map, failed)
}

/// Generic JSON Lines loader for record types defined elsewhere.
pub fn load_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    read_jsonl(open(path)?, path)
}
