//! `fiqa`: generate a degradation benchmark, score images with a VLM
//! endpoint, and evaluate the scores.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fiqa_core::analysis;
use fiqa_core::client::{batch_score_blocking, latency_report};
use fiqa_core::degrade::{self, BenchmarkItem};
use fiqa_core::evr::{self, BackboneSource, EvrSettings, QualityScores, ThresholdMode};
use fiqa_core::ingest::{self, Manifest, ScoreRecord, ScoreVariant};
use fiqa_core::report::{self, LatencyRow, PaucGroup, PaucRow, Table, TableFixture};
use serde::Serialize;

use config::{parse_named_path, CommonArgs, Settings};

#[derive(Debug, Parser)]
#[command(name = "fiqa", version, about = "Zero-shot VLM face image quality evaluation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the mixed-degradation benchmark from a clean manifest
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Clean image manifest (JSON Lines)
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
    },
    /// Query the VLM endpoint for every image in a manifest
    Score {
        #[command(flatten)]
        common: CommonArgs,
        /// Image manifest (JSON Lines)
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        /// Endpoint base URL, e.g. http://localhost:8000/v1
        #[arg(long, value_name = "URL")]
        base_url: Option<String>,
        /// Bypass the response cache
        #[arg(long)]
        no_cache: bool,
    },
    /// Error-versus-reject curves and partial AUC per quality method
    Evr {
        #[command(flatten)]
        common: CommonArgs,
        /// Score files; each (source, variant) in them is one method
        #[arg(long, value_name = "PATH", num_args = 1..)]
        scores: Vec<PathBuf>,
        /// Verification pairs per backbone
        #[arg(long, value_name = "NAME=PATH", value_parser = parse_named_path)]
        pairs: Vec<(String, PathBuf)>,
        /// Embeddings per backbone, for pairs without a similarity column
        #[arg(long, value_name = "NAME=PATH", value_parser = parse_named_path)]
        embeddings: Vec<(String, PathBuf)>,
        /// Hold the full-set threshold fixed or recalibrate per rejection level
        #[arg(long, value_enum)]
        threshold_mode: Option<ModeArg>,
    },
    /// Score analyses: cross-prompt, label consistency, distance, synthetic detection
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        mode: AnalyzeMode,
        /// Score files
        #[arg(long, value_name = "PATH", num_args = 1..)]
        scores: Vec<PathBuf>,
        /// Image manifest with distance tags (distance mode)
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        /// Benchmark ground truth (synthetic mode)
        #[arg(long, value_name = "PATH")]
        ground_truth: Option<PathBuf>,
    },
    /// Per-image latency of a scoring run
    Latency {
        #[command(flatten)]
        common: CommonArgs,
        /// Image manifest (JSON Lines)
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        /// Endpoint base URL
        #[arg(long, value_name = "URL")]
        base_url: Option<String>,
        /// Bypass the response cache
        #[arg(long)]
        no_cache: bool,
        /// Reference method timing to show alongside, e.g. eDifFIQA=0.7
        #[arg(long, value_name = "NAME=MS", value_parser = parse_reference)]
        reference: Vec<(String, f64)>,
    },
    /// Collect the Markdown outputs in the output directory into report.md
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// JSON table fixture to render into the report
        #[arg(long, value_name = "PATH")]
        fixture: Option<PathBuf>,
        /// Document title
        #[arg(long, default_value = "FIQA evaluation report")]
        title: String,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Fixed,
    PerLevel,
}

impl From<ModeArg> for ThresholdMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fixed => ThresholdMode::Fixed,
            ModeArg::PerLevel => ThresholdMode::PerLevel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AnalyzeMode {
    Consistency,
    Internal,
    Distance,
    Synthetic,
}

impl AnalyzeMode {
    fn name(self) -> &'static str {
        match self {
            AnalyzeMode::Consistency => "consistency",
            AnalyzeMode::Internal => "internal",
            AnalyzeMode::Distance => "distance",
            AnalyzeMode::Synthetic => "synthetic",
        }
    }
}

fn parse_reference(s: &str) -> Result<(String, f64), String> {
    let (name, ms) = s.split_once('=').ok_or_else(|| format!("expected NAME=MS, got {s:?}"))?;
    let ms: f64 = ms.parse().map_err(|_| format!("bad milliseconds in {s:?}"))?;
    if name.is_empty() || !ms.is_finite() || ms < 0.0 {
        return Err(format!("bad reference {s:?}"));
    }
    Ok((name.to_owned(), ms))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_ansi(std::env::var_os("NO_COLOR").is_none())
        .with_writer(std::io::stderr)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate { common, manifest } => {
            let s = Settings::resolve(&common)?;
            cmd_generate(&s, manifest)
        }
        Command::Score {
            common,
            manifest,
            base_url,
            no_cache,
        } => {
            let s = Settings::resolve(&common)?;
            cmd_score(&s, manifest, base_url.as_deref(), no_cache)
        }
        Command::Evr {
            common,
            scores,
            pairs,
            embeddings,
            threshold_mode,
        } => {
            let mut s = Settings::resolve(&common)?;
            if !scores.is_empty() {
                s.scores = scores;
            }
            if !pairs.is_empty() {
                s.pairs = pairs.into_iter().collect();
            }
            if !embeddings.is_empty() {
                s.embeddings = embeddings.into_iter().collect();
            }
            if let Some(m) = threshold_mode {
                s.threshold_mode = m.into();
            }
            cmd_evr(&s)
        }
        Command::Analyze {
            common,
            mode,
            scores,
            manifest,
            ground_truth,
        } => {
            let mut s = Settings::resolve(&common)?;
            if !scores.is_empty() {
                s.scores = scores;
            }
            s.manifest = manifest.or(s.manifest);
            s.ground_truth = ground_truth.or(s.ground_truth);
            cmd_analyze(&s, mode)
        }
        Command::Latency {
            common,
            manifest,
            base_url,
            no_cache,
            reference,
        } => {
            let s = Settings::resolve(&common)?;
            cmd_latency(&s, manifest, base_url.as_deref(), no_cache, &reference)
        }
        Command::Report { common, fixture, title } => {
            let s = Settings::resolve(&common)?;
            cmd_report(&s, fixture.as_deref(), &title)
        }
    }
}

// ---------------------------------------------------------------------------
// Helpers

fn require<'a>(p: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path> {
    let p = p
        .as_deref()
        .ok_or_else(|| anyhow!("no {what}: pass {flag} or set it in the config"))?;
    if !p.exists() {
        bail!("{what} {} does not exist", p.display());
    }
    Ok(p)
}

fn load_manifest(p: &Path) -> Result<Manifest> {
    ingest::load_manifest(p).with_context(|| format!("loading manifest {}", p.display()))
}

/// File-name-safe form of a model or method name.
fn slug(name: &str) -> String {
    degrade::file_stem(name)
}

fn stem(stage: &str, model: &str, variant: &str) -> String {
    format!("{stage}_{}_{variant}", slug(model))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

/// Writes `{stem}.json`, `{stem}.md` and one CSV per table.
fn write_outputs(out: &Path, stem: &str, json: &impl Serialize, tables: &[(&str, Table)]) -> Result<()> {
    write_json(&out.join(format!("{stem}.json")), json)?;
    let mut md = String::new();
    for (i, (title, table)) in tables.iter().enumerate() {
        if !md.is_empty() {
            md.push('\n');
        }
        md.push_str(&format!("**{title}**\n\n{}", table.to_markdown()));
        let csv_name = if i == 0 { format!("{stem}.csv") } else { format!("{stem}_{}.csv", slug(title)) };
        write_file(&out.join(csv_name), table.to_csv())?;
    }
    write_file(&out.join(format!("{stem}.md")), md)
}

/// Score records grouped by (source, variant), in first-appearance order.
fn load_score_groups(paths: &[PathBuf]) -> Result<Vec<((String, ScoreVariant), Vec<ScoreRecord>)>> {
    if paths.is_empty() {
        bail!("no score files: pass --scores or set `scores` in the config");
    }
    let mut groups: Vec<((String, ScoreVariant), Vec<ScoreRecord>)> = Vec::new();
    for p in paths {
        let records = ingest::load_scores(p).with_context(|| format!("loading scores {}", p.display()))?;
        for r in records {
            let key = (r.source.clone(), r.variant);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => {
                    if v.iter().any(|x| x.image_id == r.image_id) {
                        bail!("image {:?} scored twice by {} ({})", r.image_id, key.0, key.1);
                    }
                    v.push(r);
                }
                None => groups.push((key, vec![r])),
            }
        }
    }
    Ok(groups)
}

fn prepare_out(s: &Settings) -> Result<&Path> {
    fs::create_dir_all(&s.out).with_context(|| format!("creating {}", s.out.display()))?;
    Ok(&s.out)
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_generate(s: &Settings, manifest: Option<PathBuf>) -> Result<()> {
    let manifest = manifest.or(s.manifest.clone());
    let path = require(&manifest, "clean manifest", "--manifest")?;
    let clean = load_manifest(path)?;
    let out = prepare_out(s)?;
    let res = degrade::generate_benchmark(&clean, s.seed, &s.ranges, out)?;
    println!(
        "generated {} mixed images ({} skipped) in {}",
        res.items.len(),
        res.skipped.len(),
        out.display()
    );
    for (id, reason) in &res.skipped {
        println!("skipped {id}: {reason}");
    }
    Ok(())
}

fn cmd_score(s: &Settings, manifest: Option<PathBuf>, base_url: Option<&str>, no_cache: bool) -> Result<()> {
    let manifest = manifest.or(s.manifest.clone());
    let m = load_manifest(require(&manifest, "manifest", "--manifest")?)?;
    let cfg = s.endpoint_config(base_url, no_cache)?;
    let out = prepare_out(s)?;
    let model = cfg.model.clone();
    let results = batch_score_blocking(cfg, &m, s.variant)?;
    let records: Vec<ScoreRecord> = results.iter().map(|r| r.to_score_record(&model)).collect();
    let path = out.join(format!("{}.jsonl", stem("score", &model, s.variant.name())));
    let mut buf = Vec::new();
    ingest::write_scores(&mut buf, &records)?;
    write_file(&path, buf)?;
    let failed = records.iter().filter(|r| r.is_failed()).count();
    println!("{failed}/{} failed", records.len());
    for r in results.iter().filter(|r| r.outcome.is_failed()) {
        tracing::warn!(id = %r.image_id, "{}", r.outcome.diagnostic);
    }
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct EvrMethodOutput<'a> {
    method: &'a str,
    variant: ScoreVariant,
    settings: &'a EvrSettings,
    evaluation: &'a evr::MethodEvaluation,
}

fn cmd_evr(s: &Settings) -> Result<()> {
    if s.pairs.is_empty() {
        bail!("no backbones: pass --pairs NAME=PATH or set `pairs` in the config");
    }
    for (name, p) in s.pairs.iter().chain(&s.embeddings) {
        if !p.exists() {
            bail!("backbone {name}: {} does not exist", p.display());
        }
    }
    if let Some(name) = s.embeddings.keys().find(|k| !s.pairs.contains_key(*k)) {
        bail!("embeddings given for backbone {name} without a pairs file");
    }
    let sources: Vec<BackboneSource> = s
        .pairs
        .iter()
        .map(|(name, pairs)| BackboneSource {
            name: name.clone(),
            pairs: pairs.clone(),
            embeddings: s.embeddings.get(name).cloned(),
        })
        .collect();
    let backbones = evr::load_backbones(&sources)?;
    let groups = load_score_groups(&s.scores)?;
    let settings = EvrSettings {
        target_fmr: s.fmr,
        rhos: s.rhos.clone(),
        ratios: s.ratios(),
        mode: s.threshold_mode,
    };
    let out = prepare_out(s)?;

    let mut baselines = Vec::new();
    let mut by_variant: BTreeMap<ScoreVariant, Vec<PaucRow>> = BTreeMap::new();
    let mut integral_rows = Vec::new();
    for ((method, variant), records) in &groups {
        let scores = QualityScores::from_records(records);
        let eval = evr::evaluate_method(&scores, &backbones, &settings)
            .with_context(|| format!("method {method} ({variant})"))?;
        let base = stem("evr", method, variant.name());
        for b in &eval.backbones {
            let mut buf = Vec::new();
            b.curve.write_csv(&mut buf)?;
            write_file(&out.join(format!("{base}_{}.csv", slug(&b.backbone))), buf)?;
            if b.dropped_pairs > 0 {
                tracing::info!(method = %method, backbone = %b.backbone, "dropped {} pairs with failed scores", b.dropped_pairs);
            }
        }
        write_json(
            &out.join(format!("{base}.json")),
            &EvrMethodOutput {
                method,
                variant: *variant,
                settings: &settings,
                evaluation: &eval,
            },
        )?;
        let row = PaucRow {
            method: method.clone(),
            values: eval.mean_pauc.clone(),
        };
        integral_rows.push(PaucRow {
            method: format!("{method} ({variant})"),
            values: eval.mean_integral.clone(),
        });
        if *variant == ScoreVariant::Baseline {
            baselines.push(row);
        } else {
            by_variant.entry(*variant).or_default().push(row);
        }
    }

    let mut table_groups = Vec::new();
    let titled = !baselines.is_empty() || by_variant.len() > 1;
    if !baselines.is_empty() {
        table_groups.push(PaucGroup {
            title: Some("Supervised / Specialized Baselines".into()),
            rows: baselines,
        });
    }
    for (variant, rows) in by_variant {
        let name = variant.name();
        let mut cap = name[..1].to_uppercase();
        cap.push_str(&name[1..]);
        table_groups.push(PaucGroup {
            title: titled.then(|| format!("Vision-Language Models (Zero-Shot - {cap} Prompt)")),
            rows,
        });
    }
    let table = report::pauc_table(&s.rhos, &table_groups);
    let integral = report::pauc_table(&s.rhos, &[PaucGroup { title: None, rows: integral_rows }]);
    write_file(&out.join("evr_table.md"), table.to_markdown())?;
    write_file(&out.join("evr_table.csv"), table.to_csv())?;
    write_file(&out.join("evr_integral.csv"), integral.to_csv())?;
    print!("{}", table.to_markdown());
    Ok(())
}

fn cmd_analyze(s: &Settings, mode: AnalyzeMode) -> Result<()> {
    let groups = load_score_groups(&s.scores)?;
    let out = prepare_out(s)?;
    let mut written = 0usize;
    match mode {
        AnalyzeMode::Consistency => {
            let mut models: Vec<&str> = Vec::new();
            for ((m, _), _) in &groups {
                if !models.contains(&m.as_str()) {
                    models.push(m);
                }
            }
            for model in models {
                let mine: Vec<&((String, ScoreVariant), Vec<ScoreRecord>)> =
                    groups.iter().filter(|((m, _), _)| m == model).collect();
                if mine.len() < 2 {
                    continue;
                }
                let reference = mine
                    .iter()
                    .find(|((_, v), _)| *v == ScoreVariant::Simple)
                    .unwrap_or(&mine[0]);
                let rows = mine
                    .iter()
                    .filter(|g| !std::ptr::eq(**g, *reference))
                    .map(|(_, recs)| analysis::cross_prompt(&reference.1, recs))
                    .collect::<Result<Vec<_>, _>>()
                    .with_context(|| format!("model {model}"))?;
                let table = report::cross_prompt_table(model, &rows);
                let st = stem("consistency", model, reference.0 .1.name());
                write_outputs(out, &st, &rows, &[("Cross-prompt agreement", table)])?;
                written += 1;
            }
            if written == 0 {
                bail!("consistency needs at least two prompt variants scored by the same model");
            }
        }
        AnalyzeMode::Internal => {
            for ((model, variant), recs) in groups.iter().filter(|((_, v), _)| *v == ScoreVariant::Classification) {
                let rep = analysis::internal_consistency(recs).with_context(|| format!("model {model}"))?;
                for g in &rep.groups {
                    if !g.monotone_ok() {
                        println!("{model}: {} labels are not monotone in score", g.dimension.name());
                    }
                }
                let st = stem("internal", model, variant.name());
                write_outputs(
                    out,
                    &st,
                    &rep,
                    &[
                        ("Score by label", report::internal_table(&rep)),
                        ("Monotonicity", report::chain_table(&rep)),
                    ],
                )?;
                written += 1;
            }
            if written == 0 {
                bail!("internal mode needs classification-prompt scores");
            }
        }
        AnalyzeMode::Distance => {
            let m = load_manifest(require(&s.manifest, "manifest", "--manifest")?)?;
            for ((model, variant), recs) in &groups {
                let (scores, _) = ingest::usable_scores(recs);
                let rep = analysis::distance_sensitivity(&scores, &m).with_context(|| format!("model {model}"))?;
                let st = stem("distance", model, variant.name());
                let mut tables = vec![("Quality by distance", report::distance_table(&rep))];
                if *variant == ScoreVariant::Classification {
                    let counts = analysis::attribute_distribution(recs, &m)?;
                    let mut t = Table::new(["Distance", "Dimension", "Label", "Count"], 3);
                    for c in &counts {
                        t.push(vec![
                            c.distance.name().to_owned(),
                            c.dimension.name().to_owned(),
                            c.label.to_owned(),
                            c.count.to_string(),
                        ]);
                    }
                    tables.push(("Attribute labels by distance", t));
                }
                write_outputs(out, &st, &rep, &tables)?;
                println!("{model} ({variant}): monotone = {}", rep.monotone);
            }
        }
        AnalyzeMode::Synthetic => {
            let gt = require(&s.ground_truth, "ground truth", "--ground-truth")?;
            let items: Vec<BenchmarkItem> =
                ingest::load_jsonl(gt).with_context(|| format!("loading ground truth {}", gt.display()))?;
            for ((model, variant), recs) in groups.iter().filter(|((_, v), _)| *v == ScoreVariant::Detection) {
                let rep = analysis::synthetic_report(recs, &items).with_context(|| format!("model {model}"))?;
                let mut tables = Vec::new();
                if let Some(l0) = &rep.l0 {
                    tables.push(("L0 false positives", report::l0_table(&[report::L0Row::from_report(model.as_str(), l0)])));
                }
                if let Some(l2) = &rep.l2 {
                    tables.push(("L2 completeness", report::l2_table(&[report::L2Row::from_report(model.as_str(), l2)])));
                }
                if let Some(h) = &rep.hamming {
                    tables.push(("Hamming distance", report::hamming_table(&[report::HammingRow::from_report(model.as_str(), h)])));
                }
                write_outputs(out, &stem("synthetic", model, variant.name()), &rep, &tables)?;
                if rep.unmatched > 0 {
                    tracing::warn!(model = %model, "{} detections match no benchmark image", rep.unmatched);
                }
                written += 1;
            }
            if written == 0 {
                bail!("synthetic mode needs detection-prompt scores");
            }
        }
    }
    println!("{} analysis written to {}", mode.name(), out.display());
    Ok(())
}

fn cmd_latency(
    s: &Settings,
    manifest: Option<PathBuf>,
    base_url: Option<&str>,
    no_cache: bool,
    references: &[(String, f64)],
) -> Result<()> {
    let manifest = manifest.or(s.manifest.clone());
    let m = load_manifest(require(&manifest, "manifest", "--manifest")?)?;
    let cfg = s.endpoint_config(base_url, no_cache)?;
    let out = prepare_out(s)?;
    let model = cfg.model.clone();
    let start = Instant::now();
    let results = batch_score_blocking(cfg, &m, s.variant)?;
    let wall = start.elapsed().as_secs_f64();
    let mut rep = latency_report(&results);
    if rep.uncached > 0 && wall > 0.0 {
        rep.throughput = Some(rep.count as f64 / wall);
    }
    let mut rows: Vec<LatencyRow> = references
        .iter()
        .map(|(name, ms)| LatencyRow {
            method: name.clone(),
            mean_ms: Some(*ms),
            images: None,
            cache_hits: None,
        })
        .collect();
    rows.push(LatencyRow::from_report(format!("{model} ({})", s.variant), &rep));
    let table = report::latency_table(&rows);
    write_outputs(out, &stem("latency", &model, s.variant.name()), &rep, &[("Latency", table)])?;
    match rep.mean_ms {
        Some(ms) => println!("{ms:.1} ms/image over {} uncached requests", rep.uncached),
        None => println!("no uncached requests; latency not measured"),
    }
    Ok(())
}

fn cmd_report(s: &Settings, fixture: Option<&Path>, title: &str) -> Result<()> {
    let out = prepare_out(s)?;
    let mut sections: Vec<(String, String)> = Vec::new();
    if let Some(p) = fixture {
        let text = fs::read_to_string(p).with_context(|| format!("reading fixture {}", p.display()))?;
        let fx: TableFixture = serde_json::from_str(&text).with_context(|| format!("parsing fixture {}", p.display()))?;
        for (heading, table) in fx.tables() {
            sections.push((heading.to_owned(), table.to_markdown()));
        }
    }
    let mut mds: Vec<PathBuf> = fs::read_dir(out)
        .with_context(|| format!("listing {}", out.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "md") && p.file_name().is_some_and(|n| n != "report.md"))
        .collect();
    mds.sort();
    for p in mds {
        let heading = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let body = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        sections.push((heading, body));
    }
    if sections.is_empty() {
        bail!("nothing to report: no Markdown outputs in {} and no fixture", out.display());
    }
    let path = out.join("report.md");
    write_file(&path, report::document(title, &sections))?;
    println!("wrote {}", path.display());
    Ok(())
}
