//! Scenario records, run configuration, canonical JSON serialization, and
//! field-level validation.
//!
//! Canonical serialization is the hashing wire format: object keys sorted
//! lexicographically, floats rendered with 17 significant digits, integers as
//! plain decimals, no insignificant whitespace. Distinct field values always
//! produce distinct bytes, and the scenario digest covers every field except
//! `scenario_hash` itself.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::provenance::sha256_hex;

/// Tickers anchoring the three-factor decomposition, in factor-sign order:
/// the first component must load positively on SPY, the second on GLD, the
/// third on IEF.
pub const ANCHOR_TICKERS: [&str; 3] = ["SPY", "IEF", "GLD"];

/// Sector sleeve universe for the equal-weight portfolio.
pub const SECTOR_TICKERS: [&str; 10] =
    ["XLE", "XLF", "XLK", "XLY", "XLI", "XLU", "XLV", "XLP", "XLB", "XLRE"];

/// Rectified macro shock (or raw scenario values, before baseline handling):
/// GDP growth, inflation, and policy-rate fields in percentage points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroShock {
    pub gdp_growth: f64,
    pub inflation: f64,
    pub interest_rate: f64,
}

impl MacroShock {
    pub fn new(gdp_growth: f64, inflation: f64, interest_rate: f64) -> Self {
        MacroShock { gdp_growth, inflation, interest_rate }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.gdp_growth, self.inflation, self.interest_rate]
    }

    /// Euclidean norm of the shock vector in percentage points.
    pub fn norm(&self) -> f64 {
        self.as_array().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeLabel {
    #[default]
    Normal,
    Stress,
    Crisis,
}

impl RegimeLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegimeLabel::Normal => "normal",
            RegimeLabel::Stress => "stress",
            RegimeLabel::Crisis => "crisis",
        }
    }
}

fn default_regime_p_normal() -> f64 {
    1.0
}

fn de_flag01<'de, D: Deserializer<'de>>(de: D) -> Result<u8, D::Error> {
    struct V;
    impl serde::de::Visitor<'_> for V {
        type Value = u8;
        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("0, 1, or a boolean")
        }
        fn visit_bool<E: serde::de::Error>(self, b: bool) -> Result<u8, E> {
            Ok(u8::from(b))
        }
        fn visit_u64<E: serde::de::Error>(self, n: u64) -> Result<u8, E> {
            match n {
                0 | 1 => Ok(n as u8),
                _ => Err(E::custom("flag must be 0 or 1")),
            }
        }
        fn visit_i64<E: serde::de::Error>(self, n: i64) -> Result<u8, E> {
            match n {
                0 | 1 => Ok(n as u8),
                _ => Err(E::custom("flag must be 0 or 1")),
            }
        }
    }
    de.deserialize_any(V)
}

/// A fully annotated stress scenario: the generated macro fields plus the
/// provenance and audit trail stamped by the pipeline.
///
/// `shock` holds the raw scenario values exactly as generated; whether they are
/// levels or deltas relative to the country baseline is resolved downstream by
/// the audit stage (`rates_are_levels`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub country: String,
    pub title: String,
    #[serde(flatten)]
    pub shock: MacroShock,
    pub rationale: String,
    pub risk_sectors: Vec<String>,
    #[serde(default)]
    pub rag: bool,
    #[serde(default)]
    pub use_news: bool,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub model_version: String,
    #[serde(default)]
    pub provider: String,
    #[serde(default)]
    pub prompt_variant: String,
    #[serde(default)]
    pub prompt_hash: String,
    #[serde(default)]
    pub ctx_hash: String,
    #[serde(default)]
    pub seed: u64,
    /// Epoch milliseconds; fixed by configuration, never wall clock, so replays
    /// hash identically.
    #[serde(default)]
    pub timestamp_utc: i64,
    #[serde(default)]
    pub scenario_hash: String,
    #[serde(default, deserialize_with = "de_flag01")]
    pub plausibility_ok: u8,
    #[serde(default)]
    pub plausibility_score: f64,
    #[serde(rename = "regime_label_text", alias = "regime_label", default)]
    pub regime_label: RegimeLabel,
    #[serde(rename = "regime_score_text", alias = "regime_score", default)]
    pub regime_score: f64,
    #[serde(default = "default_regime_p_normal")]
    pub regime_p_normal: f64,
    #[serde(default)]
    pub regime_p_stress: f64,
    #[serde(default)]
    pub regime_p_crisis: f64,
    #[serde(default)]
    pub lambda: f64,
}

impl Scenario {
    /// Minimal scenario with generation fields only; provenance and audit fields
    /// start at their defaults and are stamped by the pipeline.
    pub fn draft(country: &str, title: &str, shock: MacroShock, rationale: &str, sectors: &[&str]) -> Self {
        Scenario {
            country: country.to_string(),
            title: title.to_string(),
            shock,
            rationale: rationale.to_string(),
            risk_sectors: sectors.iter().map(|s| s.to_string()).collect(),
            rag: false,
            use_news: false,
            model: String::new(),
            model_version: String::new(),
            provider: String::new(),
            prompt_variant: String::new(),
            prompt_hash: String::new(),
            ctx_hash: String::new(),
            seed: 0,
            timestamp_utc: 0,
            scenario_hash: String::new(),
            plausibility_ok: 0,
            plausibility_score: 0.0,
            regime_label: RegimeLabel::Normal,
            regime_score: 0.0,
            regime_p_normal: 1.0,
            regime_p_stress: 0.0,
            regime_p_crisis: 0.0,
            lambda: 0.0,
        }
    }

    pub fn regime_probs(&self) -> [f64; 3] {
        [self.regime_p_normal, self.regime_p_stress, self.regime_p_crisis]
    }

    /// Canonical bytes over every field except `scenario_hash`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut value = serde_json::to_value(self).expect("scenario fields are finite and serializable");
        value
            .as_object_mut()
            .expect("scenario serializes to an object")
            .remove("scenario_hash");
        canonical_json_bytes(&value).expect("scenario value is canonicalizable")
    }

    /// SHA-256 digest (lowercase hex) of the canonical bytes.
    pub fn digest(&self) -> String {
        sha256_hex(&self.canonical_bytes())
    }

    /// Stamp `scenario_hash` from the current field values.
    pub fn seal(mut self) -> Self {
        self.scenario_hash = self.digest();
        self
    }
}

#[derive(Debug, Error)]
pub enum CanonicalJsonError {
    #[error("non-finite number cannot be canonicalized")]
    NonFinite,
}

fn write_canonical(out: &mut Vec<u8>, value: &serde_json::Value) -> Result<(), CanonicalJsonError> {
    use serde_json::Value;
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                write!(out, "{i}").expect("write to vec");
            } else if let Some(u) = n.as_u64() {
                write!(out, "{u}").expect("write to vec");
            } else {
                let f = n.as_f64().ok_or(CanonicalJsonError::NonFinite)?;
                if !f.is_finite() {
                    return Err(CanonicalJsonError::NonFinite);
                }
                // 17 significant digits: exact f64 round trip.
                write!(out, "{f:.16e}").expect("write to vec");
            }
        }
        Value::String(s) => {
            out.extend_from_slice(serde_json::to_string(s).expect("string escaping").as_bytes())
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(out, item)?;
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                out.extend_from_slice(serde_json::to_string(key).expect("string escaping").as_bytes());
                out.push(b':');
                write_canonical(out, &map[*key])?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

/// Canonical JSON byte encoding: lexicographically sorted keys, floats at 17
/// significant digits, integers as plain decimals, no insignificant whitespace.
/// The output is valid JSON and parses back to an equal value.
pub fn canonical_json_bytes(value: &serde_json::Value) -> Result<Vec<u8>, CanonicalJsonError> {
    let mut out = Vec::with_capacity(256);
    write_canonical(&mut out, value)?;
    Ok(out)
}

/// One field-level problem found while validating a raw scenario object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldViolation {
    Missing { field: String },
    WrongType { field: String, expected: &'static str },
    OutOfRange { field: String, detail: String },
}

impl std::fmt::Display for FieldViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        match self {
            FieldViolation::Missing { field } => write!(f, "missing field `{field}`"),
            FieldViolation::WrongType { field, expected } => {
                write!(f, "field `{field}` must be {expected}")
            }
            FieldViolation::OutOfRange { field, detail } => write!(f, "field `{field}` {detail}"),
        }
    }
}

struct FieldCheck<'a> {
    obj: &'a serde_json::Map<String, serde_json::Value>,
    violations: Vec<FieldViolation>,
}

impl<'a> FieldCheck<'a> {
    fn require_string(&mut self, field: &str) {
        match self.obj.get(field) {
            None => self.violations.push(FieldViolation::Missing { field: field.into() }),
            Some(v) if !v.is_string() => {
                self.violations.push(FieldViolation::WrongType { field: field.into(), expected: "a string" })
            }
            _ => {}
        }
    }

    fn require_number(&mut self, field: &str) -> Option<f64> {
        match self.obj.get(field) {
            None => {
                self.violations.push(FieldViolation::Missing { field: field.into() });
                None
            }
            Some(v) => match v.as_f64() {
                Some(x) => Some(x),
                None => {
                    self.violations.push(FieldViolation::WrongType { field: field.into(), expected: "a number" });
                    None
                }
            },
        }
    }

    fn optional_string(&mut self, field: &str) {
        if let Some(v) = self.obj.get(field) {
            if !v.is_string() {
                self.violations.push(FieldViolation::WrongType { field: field.into(), expected: "a string" });
            }
        }
    }

    fn optional_bool(&mut self, field: &str) {
        if let Some(v) = self.obj.get(field) {
            if !v.is_boolean() {
                self.violations.push(FieldViolation::WrongType { field: field.into(), expected: "a boolean" });
            }
        }
    }

    fn optional_integer(&mut self, field: &str) {
        if let Some(v) = self.obj.get(field) {
            if v.as_i64().is_none() && v.as_u64().is_none() {
                self.violations.push(FieldViolation::WrongType { field: field.into(), expected: "an integer" });
            }
        }
    }

    fn optional_number_in(&mut self, field: &str, lo: f64, hi: f64) -> Option<f64> {
        let v = self.obj.get(field)?;
        match v.as_f64() {
            None => {
                self.violations.push(FieldViolation::WrongType { field: field.into(), expected: "a number" });
                None
            }
            Some(x) if !(lo..=hi).contains(&x) => {
                self.violations.push(FieldViolation::OutOfRange {
                    field: field.into(),
                    detail: format!("must lie in [{lo}, {hi}], got {x}"),
                });
                Some(x)
            }
            Some(x) => Some(x),
        }
    }
}

/// Validate a raw JSON object against the scenario schema, collecting every
/// violation rather than stopping at the first. Generation fields (country,
/// title, the three macro fields, rationale, risk_sectors) are required;
/// provenance and audit fields are optional and default when absent. Regime
/// probabilities, when present, must sum to 1 within 1e-9 and agree with the
/// label's argmax.
pub fn validate_scenario(raw: &serde_json::Value) -> Result<Scenario, Vec<FieldViolation>> {
    let Some(obj) = raw.as_object() else {
        return Err(vec![FieldViolation::WrongType { field: "$".into(), expected: "an object" }]);
    };
    let mut check = FieldCheck { obj, violations: Vec::new() };

    check.require_string("country");
    check.require_string("title");
    check.require_string("rationale");
    for field in ["gdp_growth", "inflation", "interest_rate"] {
        check.require_number(field);
    }
    match obj.get("risk_sectors") {
        None => check.violations.push(FieldViolation::Missing { field: "risk_sectors".into() }),
        Some(serde_json::Value::Array(items)) => {
            if items.iter().any(|v| !v.is_string()) {
                check.violations.push(FieldViolation::WrongType {
                    field: "risk_sectors".into(),
                    expected: "an array of strings",
                });
            }
        }
        Some(_) => check.violations.push(FieldViolation::WrongType {
            field: "risk_sectors".into(),
            expected: "an array of strings",
        }),
    }

    for field in ["model", "model_version", "provider", "prompt_variant", "prompt_hash", "ctx_hash", "scenario_hash"] {
        check.optional_string(field);
    }
    for field in ["rag", "use_news"] {
        check.optional_bool(field);
    }
    for field in ["seed", "timestamp_utc"] {
        check.optional_integer(field);
    }
    if let Some(v) = obj.get("plausibility_ok") {
        let ok = matches!(v.as_u64(), Some(0) | Some(1)) || v.is_boolean();
        if !ok {
            check.violations.push(FieldViolation::OutOfRange {
                field: "plausibility_ok".into(),
                detail: "must be 0, 1, or a boolean".into(),
            });
        }
    }
    check.optional_number_in("plausibility_score", 0.0, 5.0);
    check.optional_number_in("lambda", 0.0, 1.0);
    for field in ["regime_score_text", "regime_score"] {
        check.optional_number_in(field, 0.0, 1.0);
    }

    let label = obj
        .get("regime_label_text")
        .or_else(|| obj.get("regime_label"))
        .and_then(|v| v.as_str())
        .map(str::to_string);
    if let Some(ref l) = label {
        if !matches!(l.as_str(), "normal" | "stress" | "crisis") {
            check.violations.push(FieldViolation::OutOfRange {
                field: "regime_label_text".into(),
                detail: format!("must be one of normal/stress/crisis, got `{l}`"),
            });
        }
    }

    let prob_fields = ["regime_p_normal", "regime_p_stress", "regime_p_crisis"];
    let any_prob = prob_fields.iter().any(|f| obj.contains_key(*f));
    if any_prob {
        let mut probs = [0.0f64; 3];
        let mut complete = true;
        for (slot, field) in probs.iter_mut().zip(prob_fields) {
            match check.optional_number_in(field, 0.0, 1.0) {
                Some(x) => *slot = x,
                None => {
                    if !obj.contains_key(field) {
                        check.violations.push(FieldViolation::Missing { field: field.into() });
                    }
                    complete = false;
                }
            }
        }
        if complete {
            let total: f64 = probs.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                check.violations.push(FieldViolation::OutOfRange {
                    field: "regime_p_normal".into(),
                    detail: format!("regime probabilities must sum to 1 within 1e-9, got {total:.12}"),
                });
            } else if let Some(l) = label.as_deref() {
                let argmax = ["normal", "stress", "crisis"][probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap_or(0)];
                if matches!(l, "normal" | "stress" | "crisis") && l != argmax {
                    check.violations.push(FieldViolation::OutOfRange {
                        field: "regime_label_text".into(),
                        detail: format!("label `{l}` disagrees with probability argmax `{argmax}`"),
                    });
                }
            }
        }
    }

    if !check.violations.is_empty() {
        return Err(check.violations);
    }
    serde_json::from_value(raw.clone())
        .map_err(|e| vec![FieldViolation::WrongType { field: "$".into(), expected: Box::leak(e.to_string().into_boxed_str()) }])
}

/// Per-channel transmission parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    /// Covariance inflation per percentage point of positive inflation shock.
    pub vol_kappa: f64,
    /// Geometric decay of daily drift across the horizon.
    pub drift_decay: f64,
    /// Nonlinear amplification slope in the scenario severity weight.
    pub amp_lambda: f64,
    /// Nonlinear amplification increment when retrieval context was used.
    pub amp_rag: f64,
    /// Nonlinear amplification increment when headline context was used.
    pub amp_news: f64,
    /// Per-asset per-day cap on the nonlinear drift magnitude (pre-amplification).
    pub drift_cap_daily: f64,
    /// Hard clamp on simulated daily asset returns.
    pub return_clip: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            vol_kappa: 0.25,
            drift_decay: 0.97,
            amp_lambda: 0.10,
            amp_rag: 0.02,
            amp_news: 0.02,
            drift_cap_daily: 0.005,
            return_clip: 0.20,
        }
    }
}

impl ChannelParams {
    /// Text-channel amplification factor: 1 + a_l*lambda + a_r*rag + a_n*news.
    pub fn amplification(&self, lambda: f64, rag: bool, use_news: bool) -> f64 {
        1.0 + self.amp_lambda * lambda
            + if rag { self.amp_rag } else { 0.0 }
            + if use_news { self.amp_news } else { 0.0 }
    }
}

/// Inclusive date window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        DateWindow { start, end }
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

fn window(sy: i32, sm: u32, sd: u32, ey: i32, em: u32, ed: u32) -> DateWindow {
    DateWindow {
        start: NaiveDate::from_ymd_opt(sy, sm, sd).expect("valid date"),
        end: NaiveDate::from_ymd_opt(ey, em, ed).expect("valid date"),
    }
}

/// Estimation and evaluation windows for the factor and baseline fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Windows {
    pub pca: DateWindow,
    pub calm: DateWindow,
    pub crisis_gfc: DateWindow,
    pub crisis_covid: DateWindow,
    pub bootstrap: DateWindow,
}

impl Default for Windows {
    fn default() -> Self {
        Windows {
            pca: window(2015, 1, 1, 2025, 6, 30),
            calm: window(2012, 1, 1, 2019, 12, 31),
            crisis_gfc: window(2008, 1, 1, 2009, 12, 31),
            crisis_covid: window(2020, 1, 1, 2020, 12, 31),
            bootstrap: window(2000, 1, 1, 2025, 6, 30),
        }
    }
}

/// Input artifact locations; relative paths resolve against the config file's
/// directory when loaded via [`load_config`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputPaths {
    pub prices_csv: PathBuf,
    pub weo_json: PathBuf,
    pub headlines_dir: PathBuf,
    /// Frozen generation responses for fixture replay.
    pub responses_jsonl: Option<PathBuf>,
    /// Optional bundled per-episode tail metrics for envelope arithmetic.
    pub envelope_metrics_json: Option<PathBuf>,
}

fn default_horizon() -> usize {
    63
}
fn default_n_paths() -> usize {
    20_000
}
fn default_seed() -> u64 {
    42
}
fn default_true() -> bool {
    true
}
fn default_accept_threshold() -> f64 {
    2.0
}
fn default_lambda_theta() -> f64 {
    8.0
}
fn default_min_history_days() -> usize {
    2500
}
fn default_bootstrap_resamples() -> usize {
    50_000
}
fn default_ci_resamples() -> usize {
    10_000
}
fn default_baseline_id() -> String {
    "bootstrap".to_string()
}
fn default_workspace_tag() -> String {
    "stresslab".to_string()
}
fn default_retrieval_date() -> String {
    "2025-09-30".to_string()
}
fn default_top_k() -> usize {
    3
}
fn default_run_timestamp() -> i64 {
    1_758_240_000_000
}

/// One run's configuration; a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub countries: Vec<String>,
    pub model_id: String,
    #[serde(default)]
    pub model_version: String,
    /// Enables the retrieval dimension of the grid: true runs {off, on}.
    pub rag: bool,
    /// Enables the headline dimension of the grid: true runs {off, on}.
    pub use_news: bool,
    pub prompt_variants: Vec<String>,
    #[serde(default = "default_horizon")]
    pub horizon_days: usize,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub channel_params: ChannelParams,
    /// When true, scenario macro fields are levels and the country baseline is
    /// subtracted to form shocks; when false they are shocks verbatim.
    #[serde(default = "default_true")]
    pub rates_are_levels: bool,
    #[serde(default = "default_accept_threshold")]
    pub accept_threshold: f64,
    /// Norm scale (percentage points) saturating the severity half of lambda.
    #[serde(default = "default_lambda_theta")]
    pub lambda_theta: f64,
    /// Constant daily base drift added to scenario drifts.
    #[serde(default)]
    pub mu_base_daily: f64,
    #[serde(default = "default_min_history_days")]
    pub min_history_days: usize,
    #[serde(default = "default_bootstrap_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default = "default_ci_resamples")]
    pub ci_resamples: usize,
    /// Which baseline method normalizes scenario tail metrics.
    #[serde(default = "default_baseline_id")]
    pub baseline_id: String,
    #[serde(default = "default_workspace_tag")]
    pub workspace_tag: String,
    /// UTC date string keyed into the per-country retrieval seed.
    #[serde(default = "default_retrieval_date")]
    pub retrieval_date: String,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Fixed epoch-millisecond timestamp stamped on generated scenarios.
    #[serde(default = "default_run_timestamp")]
    pub run_timestamp_utc: i64,
    #[serde(default)]
    pub windows: Windows,
    #[serde(default)]
    pub inputs: InputPaths,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.countries.is_empty() {
            return fail("countries must be non-empty".into());
        }
        if self.prompt_variants.is_empty() {
            return fail("prompt_variants must be non-empty".into());
        }
        if self.horizon_days == 0 {
            return fail("horizon_days must be positive".into());
        }
        if self.n_paths == 0 {
            return fail("n_paths must be positive".into());
        }
        if !(self.accept_threshold >= 0.0 && self.accept_threshold <= 5.0) {
            return fail(format!("accept_threshold {} outside [0, 5]", self.accept_threshold));
        }
        if !(self.lambda_theta > 0.0) {
            return fail("lambda_theta must be positive".into());
        }
        let p = &self.channel_params;
        for (name, x) in [
            ("vol_kappa", p.vol_kappa),
            ("drift_decay", p.drift_decay),
            ("drift_cap_daily", p.drift_cap_daily),
            ("return_clip", p.return_clip),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return fail(format!("channel_params.{name} must be a finite non-negative number"));
            }
        }
        if p.drift_decay > 1.0 {
            return fail("channel_params.drift_decay must not exceed 1".into());
        }
        Ok(())
    }

    /// Canonical JSON snapshot for manifests.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Load a run configuration from a JSON file, resolving relative input paths
/// against the config file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let mut cfg: RunConfig = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &mut PathBuf| {
        if !p.as_os_str().is_empty() && p.is_relative() {
            *p = base.join(&p);
        }
    };
    resolve(&mut cfg.inputs.prices_csv);
    resolve(&mut cfg.inputs.weo_json);
    resolve(&mut cfg.inputs.headlines_dir);
    if let Some(p) = cfg.inputs.responses_jsonl.as_mut() {
        resolve(p);
    }
    if let Some(p) = cfg.inputs.envelope_metrics_json.as_mut() {
        resolve(p);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Static portfolio: normalized long-only weights over named tickers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Portfolio {
    pub id: String,
    pub weights: BTreeMap<String, f64>,
}

impl Portfolio {
    /// Build a portfolio, normalizing weights to sum to 1.
    pub fn new(id: &str, weights: &[(&str, f64)]) -> Self {
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        assert!(total > 0.0, "portfolio weights must have positive sum");
        Portfolio {
            id: id.to_string(),
            weights: weights.iter().map(|(t, w)| (t.to_string(), w / total)).collect(),
        }
    }

    /// 60/30/10 core allocation over the factor anchor tickers.
    pub fn core_60_30_10() -> Self {
        Portfolio::new("A", &[("SPY", 0.6), ("IEF", 0.3), ("GLD", 0.1)])
    }

    /// Equal weight across the given sector tickers.
    pub fn equal_weight(id: &str, tickers: &[String]) -> Self {
        assert!(!tickers.is_empty(), "equal-weight portfolio needs tickers");
        let w = 1.0 / tickers.len() as f64;
        Portfolio {
            id: id.to_string(),
            weights: tickers.iter().map(|t| (t.clone(), w)).collect(),
        }
    }

    /// Weight vector aligned to `tickers` (zero for absent names).
    pub fn weight_vector(&self, tickers: &[String]) -> Vec<f64> {
        tickers.iter().map(|t| self.weights.get(t).copied().unwrap_or(0.0)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn appendix_style_object() -> serde_json::Value {
        serde_json::json!({
            "country": "Canada",
            "title": "Credit tightening tips growth into contraction",
            "gdp_growth": -0.8,
            "inflation": 1.6,
            "interest_rate": 5.75,
            "rationale": "A sharp credit tightening reduces investment and export receipts, tipping GDP into contraction and lowering headline inflation; the policy rate stays elevated briefly.",
            "risk_sectors": ["banks", "real estate", "energy exporters"],
            "rag": false,
            "use_news": false,
            "model": "fixture-model",
            "model_version": "2026-01",
            "provider": "fixture",
            "prompt_variant": "v10_contagion",
            "prompt_hash": "abc",
            "ctx_hash": "def",
            "seed": 42,
            "timestamp_utc": 1763141778000i64,
            "scenario_hash": "",
            "plausibility_ok": 1,
            "plausibility_score": 3.0,
            "regime_label_text": "stress",
            "regime_score_text": 0.5332708434,
            "regime_p_normal": 0.0016932811,
            "regime_p_stress": 0.9300717115,
            "regime_p_crisis": 0.0682350074,
            "lambda": 0.55
        })
    }

    #[test]
    fn full_object_validates_and_round_trips() {
        let raw = appendix_style_object();
        let s = validate_scenario(&raw).expect("valid scenario");
        assert_eq!(s.country, "Canada");
        assert_eq!(s.shock.gdp_growth, -0.8);
        assert_eq!(s.regime_label, RegimeLabel::Stress);
        assert_eq!(s.plausibility_score, 3.0);

        let bytes = s.canonical_bytes();
        let re: serde_json::Value = serde_json::from_slice(&bytes).expect("canonical bytes are valid JSON");
        let s2 = validate_scenario(&re).expect("round trip validates");
        assert_eq!(s.shock, s2.shock);
        assert_eq!(s.digest(), s2.digest());
    }

    #[test]
    fn unsuffixed_regime_spellings_are_accepted_on_input() {
        let mut raw = appendix_style_object();
        let obj = raw.as_object_mut().unwrap();
        let label = obj.remove("regime_label_text").unwrap();
        let score = obj.remove("regime_score_text").unwrap();
        obj.insert("regime_label".into(), label);
        obj.insert("regime_score".into(), score);
        let s = validate_scenario(&raw).expect("aliases accepted");
        assert_eq!(s.regime_label, RegimeLabel::Stress);
        // Output always uses the suffixed spelling.
        let out = serde_json::to_value(&s).unwrap();
        assert!(out.get("regime_label_text").is_some());
        assert!(out.get("regime_label").is_none());
    }

    #[test]
    fn missing_risk_sectors_is_exactly_one_violation() {
        let mut raw = appendix_style_object();
        raw.as_object_mut().unwrap().remove("risk_sectors");
        let errs = validate_scenario(&raw).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0], FieldViolation::Missing { field: "risk_sectors".into() });
    }

    #[test]
    fn string_inflation_is_a_type_violation() {
        let mut raw = appendix_style_object();
        raw.as_object_mut().unwrap().insert("inflation".into(), serde_json::json!("3%"));
        let errs = validate_scenario(&raw).unwrap_err();
        assert!(errs.iter().any(|e| matches!(e, FieldViolation::WrongType { field, .. } if field == "inflation")));
    }

    #[test]
    fn probability_sum_and_label_argmax_are_enforced() {
        let mut raw = appendix_style_object();
        raw.as_object_mut().unwrap().insert("regime_p_crisis".into(), serde_json::json!(0.5));
        assert!(validate_scenario(&raw).is_err());

        let mut raw = appendix_style_object();
        raw.as_object_mut().unwrap().insert("regime_label_text".into(), serde_json::json!("crisis"));
        let errs = validate_scenario(&raw).unwrap_err();
        assert!(errs.iter().any(|e| matches!(e, FieldViolation::OutOfRange { field, .. } if field == "regime_label_text")));
    }

    #[test]
    fn digest_skips_scenario_hash_and_depends_on_every_other_field() {
        let s = validate_scenario(&appendix_style_object()).unwrap();
        let sealed = s.clone().seal();
        assert_eq!(s.digest(), sealed.digest(), "digest ignores the hash field itself");
        assert_eq!(sealed.scenario_hash, sealed.digest());

        let mut t = s.clone();
        t.shock.inflation += 1e-12;
        assert_ne!(s.digest(), t.digest(), "tiny field change must alter the digest");
    }

    #[test]
    fn canonical_bytes_sort_keys_and_fix_float_format() {
        let v = serde_json::json!({"b": 1.5, "a": {"z": true, "m": [1, 2.0]}, "s": "x\"y"});
        let bytes = canonical_json_bytes(&v).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(
            text,
            r#"{"a":{"m":[1,2.0000000000000000e0],"z":true},"b":1.5000000000000000e0,"s":"x\"y"}"#
        );
    }

    #[test]
    fn channel_amplification_matches_closed_form() {
        let p = ChannelParams::default();
        assert_eq!(p.amplification(0.0, false, false), 1.0);
        let a = p.amplification(1.0, true, true);
        assert!((a - 1.14).abs() < 1e-12);
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg: RunConfig = serde_json::from_value(serde_json::json!({
            "countries": ["Canada"],
            "model_id": "m",
            "rag": true,
            "use_news": true,
            "prompt_variants": ["v01_base"]
        }))
        .unwrap();
        assert_eq!(cfg.horizon_days, 63);
        assert_eq!(cfg.n_paths, 20_000);
        assert!(cfg.rates_are_levels);
        assert_eq!(cfg.channel_params, ChannelParams::default());
        cfg.validate().unwrap();

        let mut bad = cfg.clone();
        bad.horizon_days = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn portfolio_weights_normalize() {
        let p = Portfolio::new("A", &[("SPY", 6.0), ("IEF", 3.0), ("GLD", 1.0)]);
        let tickers: Vec<String> = ["SPY", "IEF", "GLD", "XLE"].iter().map(|s| s.to_string()).collect();
        let w = p.weight_vector(&tickers);
        assert_eq!(w, vec![0.6, 0.3, 0.1, 0.0]);
    }
}
