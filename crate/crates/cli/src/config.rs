//! Run configuration: a flat TOML file merged with command-line flags.
//! Flags win over the file, the file wins over defaults. Relative paths in
//! the file resolve against the file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fiqa_core::client::EndpointConfig;
use fiqa_core::degrade::{DegradationRanges, Span};
use fiqa_core::evr::{ThresholdMode, DEFAULT_FMR, DEFAULT_GRID_DIVISIONS, DEFAULT_RHOS};
use fiqa_core::protocol::PromptVariant;
use serde::Deserialize;

pub const DEFAULT_OUT: &str = "fiqa-out";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model: Option<String>,
    pub variant: Option<String>,
    pub fmr: Option<f64>,
    pub rho: Option<Vec<f64>>,
    pub threshold_mode: Option<ThresholdMode>,
    pub grid_divisions: Option<u32>,

    pub manifest: Option<PathBuf>,
    pub scores: Option<Vec<PathBuf>>,
    pub pairs: Option<BTreeMap<String, PathBuf>>,
    pub embeddings: Option<BTreeMap<String, PathBuf>>,
    pub ground_truth: Option<PathBuf>,

    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub timeout_secs: Option<f64>,
    pub max_in_flight: Option<usize>,
    pub retries: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub cache_dir: Option<PathBuf>,

    pub blur_sigma_mild: Option<[f64; 2]>,
    pub blur_sigma_hard: Option<[f64; 2]>,
    pub noise_sigma_mild: Option<[f64; 2]>,
    pub noise_sigma_hard: Option<[f64; 2]>,
    pub low_res_factor_mild: Option<[f64; 2]>,
    pub low_res_factor_hard: Option<[f64; 2]>,
    pub jpeg_quality_mild: Option<[u8; 2]>,
    pub jpeg_quality_hard: Option<[u8; 2]>,
    pub exposure_ev_mild: Option<[f64; 2]>,
    pub exposure_ev_hard: Option<[f64; 2]>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().map(Path::to_owned).unwrap_or_default();
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut cfg.out, &mut cfg.manifest, &mut cfg.ground_truth, &mut cfg.cache_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        cfg.scores.iter_mut().flatten().for_each(fix);
        cfg.pairs.iter_mut().flat_map(|m| m.values_mut()).for_each(fix);
        cfg.embeddings.iter_mut().flat_map(|m| m.values_mut()).for_each(fix);
        Ok(cfg)
    }

    pub fn ranges(&self) -> DegradationRanges {
        let mut r = DegradationRanges::default();
        let f = |t: &mut Span<f64>, v: Option<[f64; 2]>| {
            if let Some([lo, hi]) = v {
                *t = Span::new(lo, hi);
            }
        };
        f(&mut r.blur_sigma.mild, self.blur_sigma_mild);
        f(&mut r.blur_sigma.hard, self.blur_sigma_hard);
        f(&mut r.noise_sigma.mild, self.noise_sigma_mild);
        f(&mut r.noise_sigma.hard, self.noise_sigma_hard);
        f(&mut r.low_res_factor.mild, self.low_res_factor_mild);
        f(&mut r.low_res_factor.hard, self.low_res_factor_hard);
        f(&mut r.exposure_ev.mild, self.exposure_ev_mild);
        f(&mut r.exposure_ev.hard, self.exposure_ev_hard);
        if let Some([lo, hi]) = self.jpeg_quality_mild {
            r.jpeg_quality.mild = Span::new(lo, hi);
        }
        if let Some([lo, hi]) = self.jpeg_quality_hard {
            r.jpeg_quality.hard = Span::new(lo, hi);
        }
        r
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct CommonArgs {
    /// TOML config file
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed for benchmark generation
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Prompt variant: simple, utility, reliability, classification or detection
    #[arg(long, value_name = "NAME")]
    pub variant: Option<PromptVariant>,
    /// Model name sent to the endpoint and used in output names
    #[arg(long, value_name = "NAME")]
    pub model: Option<String>,
    /// Target false match rate for threshold calibration
    #[arg(long, value_name = "X")]
    pub fmr: Option<f64>,
    /// Comma-separated pAUC limits, e.g. 0.01,0.05,0.1,0.2
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub rho: Option<Vec<f64>>,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub out: PathBuf,
    pub seed: u64,
    pub model: Option<String>,
    pub variant: PromptVariant,
    pub fmr: f64,
    pub rhos: Vec<f64>,
    pub threshold_mode: ThresholdMode,
    pub grid_divisions: u32,
    pub manifest: Option<PathBuf>,
    pub scores: Vec<PathBuf>,
    pub pairs: BTreeMap<String, PathBuf>,
    pub embeddings: BTreeMap<String, PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub ranges: DegradationRanges,
    pub endpoint: EndpointSettings,
}

#[derive(Debug, Clone, Default)]
pub struct EndpointSettings {
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub timeout_secs: Option<f64>,
    pub max_in_flight: Option<usize>,
    pub retries: Option<u32>,
    pub backoff_ms: Option<u64>,
    pub cache_dir: Option<PathBuf>,
}

impl Settings {
    pub fn resolve(common: &CommonArgs) -> Result<Self> {
        let file = match &common.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let variant = match (&common.variant, &file.variant) {
            (Some(v), _) => *v,
            (None, Some(v)) => v.parse().map_err(anyhow::Error::msg).context("config key `variant`")?,
            (None, None) => PromptVariant::Simple,
        };
        let s = Settings {
            out: common.out.clone().or(file.out.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            seed: common.seed.or(file.seed).unwrap_or(0),
            model: common.model.clone().or(file.model.clone()),
            variant,
            fmr: common.fmr.or(file.fmr).unwrap_or(DEFAULT_FMR),
            rhos: common.rho.clone().or(file.rho.clone()).unwrap_or_else(|| DEFAULT_RHOS.to_vec()),
            threshold_mode: file.threshold_mode.unwrap_or_default(),
            grid_divisions: file.grid_divisions.unwrap_or(DEFAULT_GRID_DIVISIONS),
            manifest: file.manifest.clone(),
            scores: file.scores.clone().unwrap_or_default(),
            pairs: file.pairs.clone().unwrap_or_default(),
            embeddings: file.embeddings.clone().unwrap_or_default(),
            ground_truth: file.ground_truth.clone(),
            ranges: file.ranges(),
            endpoint: EndpointSettings {
                base_url: file.base_url.clone(),
                api_key_env: file.api_key_env.clone(),
                temperature: file.temperature,
                max_tokens: file.max_tokens,
                timeout_secs: file.timeout_secs,
                max_in_flight: file.max_in_flight,
                retries: file.retries,
                backoff_ms: file.backoff_ms,
                cache_dir: file.cache_dir.clone(),
            },
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.fmr) {
            bail!("fmr must be in [0, 1), got {}", self.fmr);
        }
        if self.rhos.is_empty() {
            bail!("rho list is empty");
        }
        if let Some(r) = self.rhos.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            bail!("rho values must be in (0, 1], got {r}");
        }
        if self.grid_divisions == 0 {
            bail!("grid_divisions must be positive");
        }
        let mut paths: Vec<(String, &Path)> = Vec::new();
        if let Some(p) = &self.manifest {
            paths.push(("manifest".into(), p));
        }
        if let Some(p) = &self.ground_truth {
            paths.push(("ground_truth".into(), p));
        }
        paths.extend(self.scores.iter().map(|p| ("scores".to_owned(), p.as_path())));
        paths.extend(self.pairs.iter().map(|(k, p)| (format!("pairs for backbone {k}"), p.as_path())));
        paths.extend(self.embeddings.iter().map(|(k, p)| (format!("embeddings for backbone {k}"), p.as_path())));
        for (what, p) in paths {
            if !p.exists() {
                bail!("{what}: {} does not exist", p.display());
            }
        }
        for name in self.embeddings.keys() {
            if !self.pairs.contains_key(name) {
                bail!("embeddings given for backbone {name} without a pairs file");
            }
        }
        Ok(())
    }

    /// Endpoint config for `model`, with an optional base URL override.
    pub fn endpoint_config(&self, base_url: Option<&str>, no_cache: bool) -> Result<EndpointConfig> {
        let Some(url) = base_url.map(str::to_owned).or(self.endpoint.base_url.clone()) else {
            bail!("no endpoint: set base_url in the config or pass --base-url");
        };
        let Some(model) = self.model.clone() else {
            bail!("no model: set model in the config or pass --model");
        };
        let e = &self.endpoint;
        let mut c = EndpointConfig::new(url, model);
        c.api_key_env = e.api_key_env.clone();
        if let Some(v) = e.temperature {
            c.temperature = v;
        }
        if let Some(v) = e.max_tokens {
            c.max_tokens = v;
        }
        if let Some(v) = e.timeout_secs {
            c.timeout_secs = v;
        }
        if let Some(v) = e.max_in_flight {
            c.max_in_flight = v;
        }
        if let Some(v) = e.retries {
            c.retries = v;
        }
        if let Some(v) = e.backoff_ms {
            c.backoff_ms = v;
        }
        if !no_cache {
            c.cache_dir = Some(e.cache_dir.clone().unwrap_or_else(|| self.out.join("cache")));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn ratios(&self) -> Vec<f64> {
        let max = self.rhos.iter().copied().fold(0.0, f64::max);
        fiqa_core::evr::ratio_grid(max, self.grid_divisions)
    }
}

/// Parses `NAME=PATH`.
pub fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_owned(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got {s:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "fmr = 0.01\nseed = 5\nout = \"results\"\nvariant = \"utility\"\n").unwrap();
        let common = CommonArgs {
            config: Some(cfg),
            seed: Some(9),
            ..Default::default()
        };
        let s = Settings::resolve(&common).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.fmr, 0.01);
        assert_eq!(s.out, dir.path().join("results"));
        assert_eq!(s.variant, PromptVariant::Utility);
        assert_eq!(s.rhos, DEFAULT_RHOS.to_vec());
    }

    #[test]
    fn unknown_keys_and_missing_paths_fail() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "fmrr = 0.01\n").unwrap();
        let common = CommonArgs {
            config: Some(cfg.clone()),
            ..Default::default()
        };
        assert!(Settings::resolve(&common).is_err());
        std::fs::write(&cfg, "pairs = { arcface = \"missing.csv\" }\n").unwrap();
        let err = Settings::resolve(&common).unwrap_err().to_string();
        assert!(err.contains("arcface"), "{err}");
    }

    #[test]
    fn ranges_override() {
        let f: FileConfig = toml::from_str("jpeg_quality_hard = [2, 8]\nblur_sigma_mild = [0.5, 1.0]").unwrap();
        let r = f.ranges();
        assert_eq!(r.jpeg_quality.hard, Span::new(2, 8));
        assert_eq!(r.blur_sigma.mild, Span::new(0.5, 1.0));
        assert_eq!(r.noise_sigma, DegradationRanges::default().noise_sigma);
    }

    #[test]
    fn named_paths() {
        assert_eq!(parse_named_path("a=b/c.csv").unwrap(), ("a".into(), PathBuf::from("b/c.csv")));
        assert!(parse_named_path("abc").is_err());
    }
}
