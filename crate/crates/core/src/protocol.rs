//! Prompt templates and response parsing for VLM quality queries.
//!
//! Each [`PromptVariant`] maps to one frozen template under `prompts/` and one
//! response schema. Responses are parsed strictly; the only tolerated
//! deviations are surrounding prose or code fences around the JSON object and
//! boolean flags written as strings. Both mark the outcome as
//! [`ParseStatus::Recovered`]. Out-of-range scores are never clamped.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::artifact::DegradationVector;

/// Version tag of the template set in `prompts/`. Bump when any template text changes.
pub const PROMPT_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    Simple,
    Utility,
    Reliability,
    Classification,
    Detection,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 5] = [
        PromptVariant::Simple,
        PromptVariant::Utility,
        PromptVariant::Reliability,
        PromptVariant::Classification,
        PromptVariant::Detection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PromptVariant::Simple => "simple",
            PromptVariant::Utility => "utility",
            PromptVariant::Reliability => "reliability",
            PromptVariant::Classification => "classification",
            PromptVariant::Detection => "detection",
        }
    }

    /// JSON key that carries the scalar score in this variant's response.
    pub fn expected_key(self) -> &'static str {
        match self {
            PromptVariant::Simple | PromptVariant::Classification => "Quality Score",
            PromptVariant::Utility => "Utility Score",
            PromptVariant::Reliability => "Reliability Score",
            PromptVariant::Detection => "quality_score",
        }
    }

    fn template_source(self) -> &'static str {
        match self {
            PromptVariant::Simple => include_str!("../prompts/simple.txt"),
            PromptVariant::Utility => include_str!("../prompts/utility.txt"),
            PromptVariant::Reliability => include_str!("../prompts/reliability.txt"),
            PromptVariant::Classification => include_str!("../prompts/classification.txt"),
            PromptVariant::Detection => include_str!("../prompts/detection.txt"),
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                format!("unknown prompt variant {s:?} (expected one of simple, utility, reliability, classification, detection)")
            })
    }
}

/// A composed prompt ready to be sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system: String,
    pub user: String,
    pub expected_key: &'static str,
}

impl RenderedPrompt {
    /// The text hashed into cache keys: both messages, separated unambiguously.
    pub fn cache_text(&self) -> String {
        format!("{PROMPT_VERSION}\n[system]\n{}\n[user]\n{}", self.system, self.user)
    }
}

pub fn render_prompt(variant: PromptVariant) -> RenderedPrompt {
    let (system, user) = split_template(variant.template_source());
    RenderedPrompt {
        system,
        user,
        expected_key: variant.expected_key(),
    }
}

fn split_template(source: &str) -> (String, String) {
    let mut system = Vec::new();
    let mut user = Vec::new();
    let mut section: Option<&mut Vec<&str>> = None;
    for line in source.lines() {
        match line.trim_end() {
            "[system]" => section = Some(&mut system),
            "[user]" => section = Some(&mut user),
            _ => {
                if let Some(lines) = section.as_mut() {
                    lines.push(line);
                }
            }
        }
    }
    (system.join("\n").trim().to_owned(), user.join("\n").trim().to_owned())
}

macro_rules! option_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $label)] $variant),+
        }

        impl $name {
            /// Every option in declaration order, which is also increasing severity.
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }

            /// Case-sensitive match against the verbatim option strings.
            pub fn from_label(s: &str) -> Option<Self> {
                match s {
                    $($label => Some($name::$variant),)+
                    _ => None,
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }
    };
}

option_enum!(Sharpness {
    Clear => "Clear",
    SlightlyBlurred => "Slightly Blurred",
    ModeratelyBlurred => "Moderately Blurred",
    StronglyBlurred => "Strongly Blurred",
});

option_enum!(Resolution {
    High => "High",
    Medium => "Medium",
    Low => "Low",
    VeryLow => "Very Low",
});

option_enum!(
    /// Balanced plus three dark and three bright intensities. The options do
    /// not form a single severity order; see [`Lighting::DARK_CHAIN`] and
    /// [`Lighting::BRIGHT_CHAIN`].
    Lighting {
        Balanced => "Balanced",
        SlightlyDark => "Slightly Dark",
        ModeratelyDark => "Moderately Dark",
        StronglyDark => "Strongly Dark",
        SlightlyBright => "Slightly Bright",
        ModeratelyBright => "Moderately Bright",
        StronglyBright => "Strongly Bright",
    }
);

impl Lighting {
    pub const DARK_CHAIN: [Lighting; 4] = [
        Lighting::Balanced,
        Lighting::SlightlyDark,
        Lighting::ModeratelyDark,
        Lighting::StronglyDark,
    ];
    pub const BRIGHT_CHAIN: [Lighting; 4] = [
        Lighting::Balanced,
        Lighting::SlightlyBright,
        Lighting::ModeratelyBright,
        Lighting::StronglyBright,
    ];
}

option_enum!(Compression {
    None => "None",
    Minimal => "Minimal",
    Moderate => "Moderate",
    Severe => "Severe",
});

/// Categorical judgments plus the scalar score from the classification prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeAssessment {
    pub sharpness: Sharpness,
    pub resolution: Resolution,
    pub lighting: Lighting,
    pub compression: Compression,
    pub score: f64,
}

/// Output of the synthetic detection prompt. Field order is the bit order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionFlags {
    pub has_blur: bool,
    pub has_noise: bool,
    pub has_low_res: bool,
    pub has_compression: bool,
    pub has_bad_lighting: bool,
    pub quality_score: f64,
}

impl DetectionFlags {
    pub const FLAG_KEYS: [&'static str; 5] = [
        "has_blur",
        "has_noise",
        "has_low_res",
        "has_compression",
        "has_bad_lighting",
    ];

    pub fn from_vector(vector: DegradationVector, quality_score: f64) -> Self {
        Self {
            has_blur: vector.get(0),
            has_noise: vector.get(1),
            has_low_res: vector.get(2),
            has_compression: vector.get(3),
            has_bad_lighting: vector.get(4),
            quality_score,
        }
    }

    pub fn flags(&self) -> [bool; 5] {
        [
            self.has_blur,
            self.has_noise,
            self.has_low_res,
            self.has_compression,
            self.has_bad_lighting,
        ]
    }

    pub fn vector(&self) -> DegradationVector {
        DegradationVector::from_bits(self.flags())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    Recovered,
    Failed,
}

impl fmt::Display for ParseStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseStatus::Ok => "ok",
            ParseStatus::Recovered => "recovered",
            ParseStatus::Failed => "failed",
        })
    }
}

/// Result of parsing one response. `payload` is present iff the status is not
/// `Failed`; failed outcomes keep the raw response for auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome<T> {
    pub status: ParseStatus,
    pub payload: Option<T>,
    pub diagnostic: String,
    pub raw: Option<String>,
}

impl<T> ParseOutcome<T> {
    fn success(payload: T, notes: Vec<String>) -> Self {
        let status = if notes.is_empty() {
            ParseStatus::Ok
        } else {
            ParseStatus::Recovered
        };
        Self {
            status,
            payload: Some(payload),
            diagnostic: notes.join("; "),
            raw: None,
        }
    }

    pub fn failed(raw: &str, diagnostic: impl Into<String>) -> Self {
        Self {
            status: ParseStatus::Failed,
            payload: None,
            diagnostic: diagnostic.into(),
            raw: Some(raw.to_owned()),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.status == ParseStatus::Failed
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> ParseOutcome<U> {
        ParseOutcome {
            status: self.status,
            payload: self.payload.map(f),
            diagnostic: self.diagnostic,
            raw: self.raw,
        }
    }
}

/// The parsed payload of any variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Judgment {
    Score(f64),
    Attributes(AttributeAssessment),
    Detection(DetectionFlags),
}

impl Judgment {
    pub fn score(&self) -> f64 {
        match self {
            Judgment::Score(s) => *s,
            Judgment::Attributes(a) => a.score,
            Judgment::Detection(d) => d.quality_score,
        }
    }
}

/// A JSON object located inside a raw response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveredJson<'a> {
    pub json: &'a str,
    /// True when anything other than surrounding whitespace was stripped.
    pub recovered: bool,
}

/// Locates the first balanced top-level JSON object in `raw` that is valid
/// JSON, stripping fences and prose around it. The object text is returned
/// verbatim.
pub fn recover_json(raw: &str) -> Result<RecoveredJson<'_>, String> {
    let trimmed = raw.trim();
    let mut saw_open = false;
    let mut saw_unbalanced = false;
    for (start, _) in raw.match_indices('{') {
        saw_open = true;
        let Some(end) = balanced_object_end(&raw[start..]) else {
            saw_unbalanced = true;
            continue;
        };
        let candidate = &raw[start..start + end];
        if matches!(serde_json::from_str::<Value>(candidate), Ok(Value::Object(_))) {
            return Ok(RecoveredJson {
                json: candidate,
                recovered: candidate != trimmed,
            });
        }
    }
    Err(if !saw_open {
        "no JSON object found in response".to_owned()
    } else if saw_unbalanced {
        "no balanced JSON object found (response truncated?)".to_owned()
    } else {
        "no valid JSON object found in response".to_owned()
    })
}

/// Byte length of the balanced `{...}` prefix of `s`, honoring string
/// literals and escapes. `s` must start with `{`.
fn balanced_object_end(s: &str) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, b) in s.bytes().enumerate() {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_object(raw: &str) -> Result<(Map<String, Value>, Vec<String>), String> {
    let found = recover_json(raw)?;
    let mut notes = Vec::new();
    if found.recovered {
        notes.push("stripped text around the JSON object".to_owned());
    }
    match serde_json::from_str::<Value>(found.json) {
        Ok(Value::Object(map)) => Ok((map, notes)),
        Ok(_) => Err("response is not a JSON object".to_owned()),
        Err(e) => Err(format!("invalid JSON: {e}")),
    }
}

fn read_score(map: &Map<String, Value>, key: &str) -> Result<f64, String> {
    let value = map
        .get(key)
        .ok_or_else(|| format!("missing key {key:?}"))?;
    let score = value
        .as_f64()
        .ok_or_else(|| format!("{key:?} is not numeric: {value}"))?;
    if !(0.0..=100.0).contains(&score) {
        return Err(format!("{key:?} = {score} is outside [0, 100]"));
    }
    Ok(score)
}

fn note_extra_keys(map: &Map<String, Value>, allowed: &[&str], notes: &mut Vec<String>) {
    let extra: Vec<&str> = map
        .keys()
        .map(String::as_str)
        .filter(|k| !allowed.contains(k))
        .collect();
    if !extra.is_empty() {
        notes.push(format!("ignored extra keys {extra:?}"));
    }
}

/// Parses a single-score response keyed by `expected_key`.
pub fn parse_scalar(raw: &str, expected_key: &str) -> ParseOutcome<f64> {
    let (map, mut notes) = match parse_object(raw) {
        Ok(v) => v,
        Err(e) => return ParseOutcome::failed(raw, e),
    };
    let score = match read_score(&map, expected_key) {
        Ok(s) => s,
        Err(e) => return ParseOutcome::failed(raw, e),
    };
    note_extra_keys(&map, &[expected_key], &mut notes);
    ParseOutcome::success(score, notes)
}

const ATTRIBUTE_KEYS: [&str; 4] = ["Sharpness", "Resolution", "Lighting", "Compression"];

fn read_option<T>(
    map: &Map<String, Value>,
    key: &str,
    from_label: impl Fn(&str) -> Option<T>,
) -> Result<T, String> {
    let value = map
        .get(key)
        .ok_or_else(|| format!("missing field {key:?}"))?;
    let text = value
        .as_str()
        .ok_or_else(|| format!("{key:?} is not a string: {value}"))?;
    from_label(text).ok_or_else(|| format!("{key:?} = {text:?} is not one of the allowed options"))
}

/// Parses a classification response: four option fields plus `"Quality Score"`.
pub fn parse_attributes(raw: &str) -> ParseOutcome<AttributeAssessment> {
    let (map, mut notes) = match parse_object(raw) {
        Ok(v) => v,
        Err(e) => return ParseOutcome::failed(raw, e),
    };
    let score_key = PromptVariant::Classification.expected_key();
    let parsed = (|| {
        Ok::<_, String>(AttributeAssessment {
            sharpness: read_option(&map, "Sharpness", Sharpness::from_label)?,
            resolution: read_option(&map, "Resolution", Resolution::from_label)?,
            lighting: read_option(&map, "Lighting", Lighting::from_label)?,
            compression: read_option(&map, "Compression", Compression::from_label)?,
            score: read_score(&map, score_key)?,
        })
    })();
    match parsed {
        Ok(assessment) => {
            let mut allowed = ATTRIBUTE_KEYS.to_vec();
            allowed.push(score_key);
            note_extra_keys(&map, &allowed, &mut notes);
            ParseOutcome::success(assessment, notes)
        }
        Err(e) => ParseOutcome::failed(raw, e),
    }
}

fn read_flag(map: &Map<String, Value>, key: &str, notes: &mut Vec<String>) -> Result<bool, String> {
    match map.get(key) {
        None => Err(format!("missing flag {key:?}")),
        Some(Value::Bool(b)) => Ok(*b),
        Some(Value::String(s)) => {
            let coerced = match s.trim().to_ascii_lowercase().as_str() {
                "true" => true,
                "false" => false,
                _ => return Err(format!("{key:?} = {s:?} is not a boolean")),
            };
            notes.push(format!("coerced {key:?} from string {s:?}"));
            Ok(coerced)
        }
        Some(other) => Err(format!("{key:?} is not a boolean: {other}")),
    }
}

/// Parses a detection response: five boolean flags plus `quality_score`.
pub fn parse_detection(raw: &str) -> ParseOutcome<DetectionFlags> {
    let (map, mut notes) = match parse_object(raw) {
        Ok(v) => v,
        Err(e) => return ParseOutcome::failed(raw, e),
    };
    let score_key = PromptVariant::Detection.expected_key();
    let mut flags = [false; 5];
    for (slot, key) in flags.iter_mut().zip(DetectionFlags::FLAG_KEYS) {
        match read_flag(&map, key, &mut notes) {
            Ok(b) => *slot = b,
            Err(e) => return ParseOutcome::failed(raw, e),
        }
    }
    let score = match read_score(&map, score_key) {
        Ok(s) => s,
        Err(e) => return ParseOutcome::failed(raw, e),
    };
    let mut allowed = DetectionFlags::FLAG_KEYS.to_vec();
    allowed.push(score_key);
    note_extra_keys(&map, &allowed, &mut notes);
    ParseOutcome::success(
        DetectionFlags::from_vector(DegradationVector::from_bits(flags), score),
        notes,
    )
}

/// Dispatches to the parser matching `variant`.
pub fn parse_response(variant: PromptVariant, raw: &str) -> ParseOutcome<Judgment> {
    match variant {
        PromptVariant::Simple | PromptVariant::Utility | PromptVariant::Reliability => {
            parse_scalar(raw, variant.expected_key()).map(Judgment::Score)
        }
        PromptVariant::Classification => parse_attributes(raw).map(Judgment::Attributes),
        PromptVariant::Detection => parse_detection(raw).map(Judgment::Detection),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simple_prompt_wording() {
        let p = render_prompt(PromptVariant::Simple);
        assert!(p.system.contains("expert image quality assessor for face images"));
        assert!(p.user.contains("evaluate the image quality for facial analysis"));
        assert_eq!(p.expected_key, "Quality Score");
        assert!(p.user.contains("{\"Quality Score\": <0-100>}"));
        assert!(p.user.ends_with("Return only the JSON object."));
    }

    #[test]
    fn semantic_variants_keep_role_and_change_key() {
        let simple = render_prompt(PromptVariant::Simple);
        let utility = render_prompt(PromptVariant::Utility);
        let reliability = render_prompt(PromptVariant::Reliability);
        assert_eq!(utility.system, simple.system);
        assert_eq!(reliability.system, simple.system);
        assert_eq!(utility.expected_key, "Utility Score");
        assert!(utility.user.contains("evaluate the image utility for a face recognition model"));
        assert_eq!(reliability.expected_key, "Reliability Score");
        assert!(reliability.user.contains("evaluate the image reliability for face verification"));
    }

    #[test]
    fn classification_prompt_lists_every_option() {
        let p = render_prompt(PromptVariant::Classification);
        let labels = Sharpness::ALL
            .iter()
            .map(|o| o.label())
            .chain(Resolution::ALL.iter().map(|o| o.label()))
            .chain(Lighting::ALL.iter().map(|o| o.label()))
            .chain(Compression::ALL.iter().map(|o| o.label()));
        for label in labels {
            assert!(p.user.contains(&format!("\"{label}\"")), "missing option {label}");
        }
        assert_eq!(p.expected_key, "Quality Score");
    }

    #[test]
    fn detection_prompt_enumerates_issues() {
        let p = render_prompt(PromptVariant::Detection);
        assert!(p.system.contains("expert biometric image quality analyst"));
        assert!(p.user.contains(
            "blur, noise, pixelation (low_res), jpeg artifacts (compression), and bad lighting (under/overexposed)"
        ));
        assert!(p.user.contains("Return STRICT JSON"));
        for key in DetectionFlags::FLAG_KEYS {
            assert!(p.user.contains(key));
        }
    }

    #[test]
    fn render_is_deterministic() {
        for v in PromptVariant::ALL {
            assert_eq!(render_prompt(v), render_prompt(v));
        }
    }

    #[test]
    fn recover_plain_object_is_ok() {
        let r = recover_json(r#"{"Quality Score": 85}"#).unwrap();
        assert_eq!(r.json, r#"{"Quality Score": 85}"#);
        assert!(!r.recovered);
    }

    #[test]
    fn recover_fenced_object() {
        let raw = "```json\n{\"Quality Score\": 42}\n```";
        let r = recover_json(raw).unwrap();
        assert_eq!(r.json, "{\"Quality Score\": 42}");
        assert!(r.recovered);
    }

    #[test]
    fn recover_fails_without_object() {
        assert!(recover_json("I cannot assess this.").is_err());
        assert!(recover_json(r#"{"Quality Score": 8"#).is_err());
    }

    #[test]
    fn recover_skips_invalid_brace_groups() {
        let raw = r#"Rating {draft} follows: {"Quality Score": 60}"#;
        assert_eq!(recover_json(raw).unwrap().json, r#"{"Quality Score": 60}"#);
    }

    #[test]
    fn recover_handles_braces_in_strings() {
        let raw = r#"x {"note": "a } b", "Quality Score": 1} y"#;
        assert_eq!(recover_json(raw).unwrap().json, r#"{"note": "a } b", "Quality Score": 1}"#);
    }

    #[test]
    fn scalar_examples() {
        let ok = parse_scalar(r#"{"Quality Score": 85}"#, "Quality Score");
        assert_eq!(ok.status, ParseStatus::Ok);
        assert_eq!(ok.payload, Some(85.0));

        let range = parse_scalar(r#"{"Quality Score": 150}"#, "Quality Score");
        assert_eq!(range.status, ParseStatus::Failed);
        assert!(range.payload.is_none());
        assert_eq!(range.raw.as_deref(), Some(r#"{"Quality Score": 150}"#));

        let key = parse_scalar(r#"{"score": 85}"#, "Quality Score");
        assert_eq!(key.status, ParseStatus::Failed);
    }

    #[test]
    fn scalar_extra_keys_are_recovered() {
        let out = parse_scalar(r#"{"Quality Score": 70, "reason": "sharp"}"#, "Quality Score");
        assert_eq!(out.status, ParseStatus::Recovered);
        assert_eq!(out.payload, Some(70.0));
        assert!(out.diagnostic.contains("reason"));
    }

    #[test]
    fn scalar_does_not_accept_numeric_strings() {
        let out = parse_scalar(r#"{"Quality Score": "85"}"#, "Quality Score");
        assert!(out.is_failed());
    }

    #[test]
    fn attributes_examples() {
        let ok = parse_attributes(
            r#"{"Sharpness": "Clear", "Resolution": "High", "Lighting": "Balanced", "Compression": "None", "Quality Score": 70}"#,
        );
        assert_eq!(ok.status, ParseStatus::Ok);
        let a = ok.payload.unwrap();
        assert_eq!(a.sharpness, Sharpness::Clear);
        assert_eq!(a.score, 70.0);

        let bad = parse_attributes(
            r#"{"Sharpness": "Blurry-ish", "Resolution": "High", "Lighting": "Balanced", "Compression": "None", "Quality Score": 70}"#,
        );
        assert!(bad.is_failed());

        let missing = parse_attributes(
            r#"{"Sharpness": "Clear", "Resolution": "High", "Lighting": "Balanced", "Quality Score": 70}"#,
        );
        assert!(missing.is_failed());
        assert!(missing.diagnostic.contains("Compression"));
    }

    #[test]
    fn attribute_options_are_case_sensitive() {
        let out = parse_attributes(
            r#"{"Sharpness": "clear", "Resolution": "High", "Lighting": "Balanced", "Compression": "None", "Quality Score": 70}"#,
        );
        assert!(out.is_failed());
    }

    #[test]
    fn detection_examples() {
        let clean = parse_detection(
            r#"{"quality_score": 95, "has_blur": false, "has_noise": false, "has_low_res": false, "has_compression": false, "has_bad_lighting": false}"#,
        );
        assert_eq!(clean.status, ParseStatus::Ok);
        assert!(clean.payload.unwrap().vector().is_zero());

        let blur = parse_detection(
            r#"{"quality_score": 40, "has_blur": true, "has_noise": false, "has_low_res": false, "has_compression": false, "has_bad_lighting": false}"#,
        );
        assert_eq!(blur.payload.unwrap().vector().to_array(), [1, 0, 0, 0, 0]);

        let yes = parse_detection(
            r#"{"quality_score": 40, "has_blur": true, "has_noise": "yes", "has_low_res": false, "has_compression": false, "has_bad_lighting": false}"#,
        );
        assert!(yes.is_failed());
    }

    #[test]
    fn detection_string_booleans_are_recovered() {
        let out = parse_detection(
            r#"{"quality_score": 60, "has_blur": "true", "has_noise": "false", "has_low_res": false, "has_compression": false, "has_bad_lighting": false}"#,
        );
        assert_eq!(out.status, ParseStatus::Recovered);
        assert_eq!(out.payload.unwrap().vector().to_array(), [1, 0, 0, 0, 0]);
    }

    fn detection_json(flags: [bool; 5], score: u8) -> String {
        let mut obj = Map::new();
        obj.insert("quality_score".into(), Value::from(score));
        for (k, b) in DetectionFlags::FLAG_KEYS.iter().zip(flags) {
            obj.insert((*k).into(), Value::Bool(b));
        }
        Value::Object(obj).to_string()
    }

    proptest! {
        #[test]
        fn recover_is_idempotent(prefix in "[a-zA-Z .:\n`]{0,20}", score in 0u8..=100, suffix in "[a-zA-Z .\n`]{0,20}") {
            let raw = format!("{prefix}{{\"Quality Score\": {score}}}{suffix}");
            let first = recover_json(&raw).unwrap();
            let second = recover_json(first.json).unwrap();
            prop_assert_eq!(second.json, first.json);
            prop_assert!(!second.recovered);
        }

        #[test]
        fn conformant_scalar_always_parses(score in 0.0f64..=100.0, v in 0usize..3) {
            let variant = [PromptVariant::Simple, PromptVariant::Utility, PromptVariant::Reliability][v];
            let raw = serde_json::json!({ variant.expected_key(): score }).to_string();
            let out = parse_scalar(&raw, variant.expected_key());
            prop_assert_eq!(out.status, ParseStatus::Ok);
            prop_assert_eq!(out.payload, Some(score));
        }

        #[test]
        fn detection_reserialization_preserves_flags(bits in proptest::array::uniform5(any::<bool>()), score in 0u8..=100) {
            let raw = detection_json(bits, score);
            let parsed = parse_detection(&raw).payload.unwrap();
            let again = parse_detection(&serde_json::to_string(&parsed).unwrap()).payload.unwrap();
            prop_assert_eq!(parsed, again);
            prop_assert_eq!(parsed.flags(), bits);
        }
    }
}
