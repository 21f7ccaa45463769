//! Generation gateway: deterministic prompt assembly, provider abstraction
//! (frozen fixture replay or live HTTP), tolerant JSON extraction, and the
//! country x retrieval x news x variant generation grid.
//!
//! Prompt identity is two digests: `prompt_hash` covers the instruction side
//! (system text, directive, variant id) and `ctx_hash` covers the ordered
//! context blocks, so swapping one retrieved document or headline changes
//! `ctx_hash` while `prompt_hash` stays fixed.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::CountryBaseline;
use crate::model::{validate_scenario, RunConfig, Scenario};
use crate::provenance::sha256_hex;

/// Fixed system preamble for every generation call.
pub const SYSTEM_TEXT: &str = "You are a macro-financial scenario analyst. You design severe but plausible \
country-level stress scenarios grounded in the supplied context. Respond with a single JSON object and no \
other commentary.";

/// The thirty prompt-variant identifiers in canonical order.
pub const PROMPT_VARIANTS: [&str; 30] = [
    "v01_baseline_severe",
    "v02_energy_shock",
    "v03_housing_correction",
    "v04_labor_market_break",
    "v05_credit_crunch",
    "v06_fx_depreciation",
    "v07_trade_fragmentation",
    "v08_fiscal_slippage",
    "v09_banking_stress",
    "v10_contagion",
    "v11_supply_chain_snap",
    "v12_policy_constraint",
    "v13_sovereign_spiral",
    "v14_demand_collapse",
    "v15_inflation_persistence",
    "v16_wage_price_loop",
    "v17_productivity_stall",
    "v18_external_deficit",
    "v19_asset_bubble_burst",
    "v20_bigtech_disruption",
    "v21_geopolitical_escalation",
    "v22_cyber_disruption",
    "v23_climate_transition",
    "v24_food_price_spike",
    "v25_commodity_price_crash",
    "v26_tourism_collapse",
    "v27_public_health_resurgence",
    "v28_pension_outflows",
    "v29_shadow_banking",
    "v30_stagflation_redux",
];

/// Thematic directive clause for a variant id; unknown ids get a generic clause
/// so the grid never fails on configuration alone.
pub fn variant_theme(variant: &str) -> String {
    let theme = match variant {
        "v01_baseline_severe" => "a broad severe downturn with no single dominant trigger",
        "v02_energy_shock" => "an abrupt energy price and supply disruption",
        "v03_housing_correction" => "a disorderly housing market correction",
        "v04_labor_market_break" => "a sudden deterioration in the labor market",
        "v05_credit_crunch" => "a sharp tightening of bank credit supply",
        "v06_fx_depreciation" => "a rapid exchange-rate depreciation episode",
        "v07_trade_fragmentation" => "escalating trade barriers and supply reorientation",
        "v08_fiscal_slippage" => "loss of confidence in the fiscal trajectory",
        "v09_banking_stress" => "funding stress in the domestic banking system",
        "v10_contagion" => "financial contagion spilling over from a foreign banking shock",
        "v11_supply_chain_snap" => "a sudden break in critical supply chains",
        "v12_policy_constraint" => "a central bank constrained from easing by its mandate",
        "v13_sovereign_spiral" => "an adverse sovereign-yield and rating spiral",
        "v14_demand_collapse" => "a collapse in private domestic demand",
        "v15_inflation_persistence" => "inflation proving far more persistent than projected",
        "v16_wage_price_loop" => "an entrenched wage-price feedback loop",
        "v17_productivity_stall" => "a multi-year stall in productivity growth",
        "v18_external_deficit" => "sudden-stop pressure on external financing",
        "v19_asset_bubble_burst" => "the bursting of a leveraged asset bubble",
        "v20_bigtech_disruption" => "an abrupt repricing of large technology firms",
        "v21_geopolitical_escalation" => "a geopolitical escalation disrupting trade and energy",
        "v22_cyber_disruption" => "a systemic cyber incident in financial infrastructure",
        "v23_climate_transition" => "a disorderly climate-policy transition shock",
        "v24_food_price_spike" => "a severe food price spike pressuring households",
        "v25_commodity_price_crash" => "a crash in the country's key commodity exports",
        "v26_tourism_collapse" => "a collapse in tourism and travel receipts",
        "v27_public_health_resurgence" => "a resurgent public-health emergency",
        "v28_pension_outflows" => "forced deleveraging by pension and insurance funds",
        "v29_shadow_banking" => "stress emerging from non-bank financial intermediaries",
        "v30_stagflation_redux" => "a stagflationary mix of weak growth and high inflation",
        other => return format!("Emphasize the scenario theme `{other}`."),
    };
    format!("Emphasize {theme}.")
}

/// One fully assembled prompt plus its identity digests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    /// Ordered context: target country profile, retrieved peer profiles,
    /// optionally a headline block.
    pub context_blocks: Vec<String>,
    pub directive_text: String,
    pub prompt_variant: String,
    pub prompt_hash: String,
    pub ctx_hash: String,
}

impl PromptBundle {
    pub fn assemble(system_text: &str, context_blocks: Vec<String>, directive_text: &str, variant: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(system_text.as_bytes());
        hasher.update(b"\n");
        hasher.update(directive_text.as_bytes());
        hasher.update(b"\n");
        hasher.update(variant.as_bytes());
        let prompt_hash = hex::encode(hasher.finalize());

        let mut ctx = Sha256::new();
        for block in &context_blocks {
            ctx.update((block.len() as u64).to_le_bytes());
            ctx.update(block.as_bytes());
        }
        let ctx_hash = hex::encode(ctx.finalize());

        PromptBundle {
            system_text: system_text.to_string(),
            context_blocks,
            directive_text: directive_text.to_string(),
            prompt_variant: variant.to_string(),
            prompt_hash,
            ctx_hash,
        }
    }

    /// Single user-message rendering for live providers.
    pub fn user_text(&self) -> String {
        let mut out = String::new();
        for block in &self.context_blocks {
            out.push_str(block);
            out.push_str("\n\n");
        }
        out.push_str(&self.directive_text);
        out
    }
}

/// Render a country's macro profile block from its frozen baseline.
pub fn country_profile(baseline: &CountryBaseline) -> String {
    format!(
        "Country profile: {}\nReal GDP growth projection (% y/y): {:.2}\nHeadline inflation projection (% y/y): {:.2}\nShort-term policy rate (%): {:.2}\nVintage: {}",
        baseline.country, baseline.gdp_growth, baseline.inflation, baseline.interest_rate, baseline.vintage
    )
}

/// Inputs to prompt assembly for one grid cell.
#[derive(Debug, Clone)]
pub struct PromptInputs<'a> {
    pub country: &'a str,
    pub baseline: &'a CountryBaseline,
    /// Peer profile blocks, already retrieved; used only when `rag` is set.
    pub peer_profiles: &'a [String],
    /// Selected exemplar headlines; used only when `use_news` is set.
    pub headlines: &'a [String],
    pub variant: &'a str,
    pub rag: bool,
    pub use_news: bool,
}

/// Deterministic prompt assembly: context is the target profile, then peer
/// profiles (retrieval on), then one headline block (news on and non-empty).
pub fn build_prompt(inputs: &PromptInputs) -> PromptBundle {
    let mut blocks = vec![country_profile(inputs.baseline)];
    if inputs.rag {
        blocks.extend(inputs.peer_profiles.iter().cloned());
    }
    if inputs.use_news && !inputs.headlines.is_empty() {
        let mut block = String::from("Recent headlines:");
        for title in inputs.headlines {
            block.push_str("\n- ");
            block.push_str(title);
        }
        blocks.push(block);
    }
    let directive = format!(
        "Generate a severe but plausible macroeconomic stress scenario for {} over the coming year. {} \
Return only a single JSON object with exactly these fields: country, title, gdp_growth, inflation, \
interest_rate, rationale, risk_sectors. gdp_growth and inflation are % year-on-year levels, interest_rate \
is the policy-rate level in percent, and risk_sectors is an array of sector names.",
        inputs.country,
        variant_theme(inputs.variant)
    );
    PromptBundle::assemble(SYSTEM_TEXT, blocks, &directive, inputs.variant)
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no fixture response for prompt {prompt_hash} ctx {ctx_hash}")]
    FixtureMiss { prompt_hash: String, ctx_hash: String },
    #[error("fixture file {path}: {msg}")]
    BadFixture { path: PathBuf, msg: String },
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("http provider: {0}")]
    Http(String),
    #[error("network access disabled by --offline")]
    Offline,
}

/// A scenario text generator. Implementations must be deterministic for a
/// fixed (prompt_hash, ctx_hash, seed) or the replay guarantees break.
pub trait GenerationProvider {
    fn generate(&self, bundle: &PromptBundle, seed: u64) -> Result<String, ProviderError>;
    fn provider_name(&self) -> &'static str;
}

/// Frozen responses keyed by (prompt_hash, ctx_hash), one JSON object per line.
pub struct FixtureProvider {
    responses: BTreeMap<(String, String), String>,
}

#[derive(Deserialize)]
struct FixtureLine {
    prompt_hash: String,
    ctx_hash: String,
    response: String,
}

impl FixtureProvider {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let file = std::fs::File::open(path)
            .map_err(|source| ProviderError::Io { path: path.to_path_buf(), source })?;
        let mut responses = BTreeMap::new();
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| ProviderError::Io { path: path.to_path_buf(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let row: FixtureLine = serde_json::from_str(&line).map_err(|e| ProviderError::BadFixture {
                path: path.to_path_buf(),
                msg: format!("line {}: {e}", lineno + 1),
            })?;
            responses.insert((row.prompt_hash, row.ctx_hash), row.response);
        }
        Ok(FixtureProvider { responses })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl GenerationProvider for FixtureProvider {
    fn generate(&self, bundle: &PromptBundle, _seed: u64) -> Result<String, ProviderError> {
        self.responses
            .get(&(bundle.prompt_hash.clone(), bundle.ctx_hash.clone()))
            .cloned()
            .ok_or_else(|| ProviderError::FixtureMiss {
                prompt_hash: bundle.prompt_hash.clone(),
                ctx_hash: bundle.ctx_hash.clone(),
            })
    }

    fn provider_name(&self) -> &'static str {
        "fixture"
    }
}

/// Endpoint description for the live HTTP provider (OpenAI-style chat shape).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpEndpointConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub temperature: f64,
}

fn default_timeout_secs() -> u64 {
    60
}

#[cfg(feature = "http")]
pub use http_provider::HttpProvider;

#[cfg(feature = "http")]
mod http_provider {
    use super::*;

    /// Live chat-completion provider: one retry, fixed timeout, temperature 0
    /// by default. Never constructed in offline mode.
    pub struct HttpProvider {
        cfg: HttpEndpointConfig,
        client: reqwest::blocking::Client,
    }

    impl HttpProvider {
        pub fn new(cfg: HttpEndpointConfig) -> Result<Self, ProviderError> {
            let client = reqwest::blocking::Client::builder()
                .timeout(std::time::Duration::from_secs(cfg.timeout_secs))
                .build()
                .map_err(|e| ProviderError::Http(e.to_string()))?;
            Ok(HttpProvider { cfg, client })
        }

        fn call_once(&self, bundle: &PromptBundle, seed: u64) -> Result<String, ProviderError> {
            let body = serde_json::json!({
                "model": self.cfg.model,
                "temperature": self.cfg.temperature,
                "seed": seed,
                "messages": [
                    {"role": "system", "content": bundle.system_text},
                    {"role": "user", "content": bundle.user_text()},
                ],
            });
            let mut req = self.client.post(&self.cfg.endpoint).json(&body);
            if let Some(var) = &self.cfg.api_key_env {
                let key = std::env::var(var)
                    .map_err(|_| ProviderError::Http(format!("api key env `{var}` not set")))?;
                req = req.bearer_auth(key);
            }
            let resp = req.send().map_err(|e| ProviderError::Http(e.to_string()))?;
            if !resp.status().is_success() {
                return Err(ProviderError::Http(format!("status {}", resp.status())));
            }
            let value: serde_json::Value = resp.json().map_err(|e| ProviderError::Http(e.to_string()))?;
            value
                .pointer("/choices/0/message/content")
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .ok_or_else(|| ProviderError::Http("response missing choices[0].message.content".into()))
        }
    }

    impl GenerationProvider for HttpProvider {
        fn generate(&self, bundle: &PromptBundle, seed: u64) -> Result<String, ProviderError> {
            self.call_once(bundle, seed).or_else(|_| self.call_once(bundle, seed))
        }

        fn provider_name(&self) -> &'static str {
            "http"
        }
    }
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("no JSON object found in response text")]
    NoJsonObject,
}

/// Byte range of the matching close brace for the `{` at `start`, tracking
/// string literals and escapes; `None` when unbalanced to end of input.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(start + offset);
                }
            }
            _ => {}
        }
    }
    None
}

/// Scan the raw text for the earliest balanced `{...}` span that parses as a
/// JSON object; prose, code fences, and leading broken objects are skipped.
pub fn extract_first_json(raw: &str) -> Result<serde_json::Value, ExtractError> {
    let bytes = raw.as_bytes();
    for start in 0..bytes.len() {
        if bytes[start] != b'{' {
            continue;
        }
        if let Some(end) = balanced_end(bytes, start) {
            if let Ok(value) = serde_json::from_slice::<serde_json::Value>(&bytes[start..=end]) {
                if value.is_object() {
                    return Ok(value);
                }
            }
        }
    }
    Err(ExtractError::NoJsonObject)
}

/// Identity of one generation-grid cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub country: String,
    pub rag: bool,
    pub use_news: bool,
    pub variant: String,
}

/// What happened in a cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Parsed,
    Malformed { reason: String },
    ProviderFailed { reason: String },
}

/// One generation attempt: digests, status, and the candidate scenario when
/// the response parsed and validated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellOutcome {
    pub key: CellKey,
    pub prompt_hash: String,
    pub ctx_hash: String,
    /// SHA-256 of the raw response text, when a response arrived.
    pub response_hash: Option<String>,
    /// SHA-256 of the canonical bytes of the parsed draft object.
    pub parsed_json_hash: Option<String>,
    pub status: CellStatus,
    pub scenario: Option<Scenario>,
    pub raw_response: Option<String>,
}

/// Attempt tallies over a grid run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GridSummary {
    pub attempts: usize,
    pub parsed: usize,
    pub malformed: usize,
    pub provider_failed: usize,
}

pub fn grid_summary(outcomes: &[CellOutcome]) -> GridSummary {
    let mut s = GridSummary { attempts: outcomes.len(), parsed: 0, malformed: 0, provider_failed: 0 };
    for o in outcomes {
        match o.status {
            CellStatus::Parsed => s.parsed += 1,
            CellStatus::Malformed { .. } => s.malformed += 1,
            CellStatus::ProviderFailed { .. } => s.provider_failed += 1,
        }
    }
    s
}

/// Precomputed per-country context for the grid.
#[derive(Debug, Clone, Default)]
pub struct GridContext {
    /// Retrieved peer profile blocks per country (retrieval dimension on).
    pub peer_profiles: BTreeMap<String, Vec<String>>,
    /// Selected exemplar headlines per country (news dimension on).
    pub headlines: BTreeMap<String, Vec<String>>,
}

fn dimension_values(enabled: bool) -> &'static [bool] {
    if enabled {
        &[false, true]
    } else {
        &[false]
    }
}

/// Run one generation attempt per (country, rag, news, variant) cell in
/// canonical order. Countries and variants iterate sorted; the retrieval and
/// news dimensions run {off, on} when enabled in config, {off} otherwise.
/// Failures are recorded as outcomes, never early exits, so the attempt count
/// equals the full cell count.
pub fn run_grid(
    cfg: &RunConfig,
    baselines: &[CountryBaseline],
    provider: &dyn GenerationProvider,
    ctx: &GridContext,
) -> Vec<CellOutcome> {
    let mut countries = cfg.countries.clone();
    countries.sort();
    let mut variants = cfg.prompt_variants.clone();
    variants.sort();

    let mut outcomes = Vec::with_capacity(
        countries.len() * variants.len() * dimension_values(cfg.rag).len() * dimension_values(cfg.use_news).len(),
    );
    let empty: Vec<String> = Vec::new();

    for country in &countries {
        for &rag in dimension_values(cfg.rag) {
            for &use_news in dimension_values(cfg.use_news) {
                for variant in &variants {
                    let key = CellKey { country: country.clone(), rag, use_news, variant: variant.clone() };
                    let baseline = match crate::ingest::baseline_for(baselines, country) {
                        Ok(b) => b,
                        Err(e) => {
                            outcomes.push(CellOutcome {
                                key,
                                prompt_hash: String::new(),
                                ctx_hash: String::new(),
                                response_hash: None,
                                parsed_json_hash: None,
                                status: CellStatus::ProviderFailed { reason: e.to_string() },
                                scenario: None,
                                raw_response: None,
                            });
                            continue;
                        }
                    };
                    let bundle = build_prompt(&PromptInputs {
                        country,
                        baseline,
                        peer_profiles: ctx.peer_profiles.get(country).unwrap_or(&empty),
                        headlines: ctx.headlines.get(country).unwrap_or(&empty),
                        variant,
                        rag,
                        use_news,
                    });
                    outcomes.push(run_cell(cfg, provider, key, &bundle));
                }
            }
        }
    }
    outcomes
}

fn run_cell(cfg: &RunConfig, provider: &dyn GenerationProvider, key: CellKey, bundle: &PromptBundle) -> CellOutcome {
    let mut outcome = CellOutcome {
        key,
        prompt_hash: bundle.prompt_hash.clone(),
        ctx_hash: bundle.ctx_hash.clone(),
        response_hash: None,
        parsed_json_hash: None,
        status: CellStatus::Parsed,
        scenario: None,
        raw_response: None,
    };
    let raw = match provider.generate(bundle, cfg.seed) {
        Ok(raw) => raw,
        Err(e) => {
            outcome.status = CellStatus::ProviderFailed { reason: e.to_string() };
            return outcome;
        }
    };
    outcome.response_hash = Some(sha256_hex(raw.as_bytes()));
    outcome.raw_response = Some(raw.clone());

    let parsed = match extract_first_json(&raw) {
        Ok(v) => v,
        Err(e) => {
            outcome.status = CellStatus::Malformed { reason: e.to_string() };
            return outcome;
        }
    };
    outcome.parsed_json_hash = crate::model::canonical_json_bytes(&parsed)
        .ok()
        .map(|b| sha256_hex(&b));

    match validate_scenario(&parsed) {
        Ok(mut scenario) => {
            scenario.country = outcome.key.country.clone();
            scenario.rag = outcome.key.rag;
            scenario.use_news = outcome.key.use_news;
            scenario.model = cfg.model_id.clone();
            scenario.model_version = cfg.model_version.clone();
            scenario.provider = provider.provider_name().to_string();
            scenario.prompt_variant = outcome.key.variant.clone();
            scenario.prompt_hash = outcome.prompt_hash.clone();
            scenario.ctx_hash = outcome.ctx_hash.clone();
            scenario.seed = cfg.seed;
            scenario.timestamp_utc = cfg.run_timestamp_utc;
            outcome.scenario = Some(scenario);
            outcome.status = CellStatus::Parsed;
        }
        Err(violations) => {
            let reasons: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            outcome.status = CellStatus::Malformed { reason: reasons.join("; ") };
        }
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline() -> CountryBaseline {
        CountryBaseline {
            country: "Canada".into(),
            gdp_growth: 1.1,
            inflation: 1.9,
            interest_rate: 4.25,
            vintage: "test-vintage".into(),
        }
    }

    fn inputs<'a>(
        b: &'a CountryBaseline,
        peers: &'a [String],
        heads: &'a [String],
        rag: bool,
        news: bool,
    ) -> PromptInputs<'a> {
        PromptInputs {
            country: "Canada",
            baseline: b,
            peer_profiles: peers,
            headlines: heads,
            variant: "v10_contagion",
            rag,
            use_news: news,
        }
    }

    #[test]
    fn identical_inputs_give_identical_hashes() {
        let b = baseline();
        let peers = vec!["peer profile".to_string()];
        let heads = vec!["headline one".to_string()];
        let p1 = build_prompt(&inputs(&b, &peers, &heads, true, true));
        let p2 = build_prompt(&inputs(&b, &peers, &heads, true, true));
        assert_eq!(p1.prompt_hash, p2.prompt_hash);
        assert_eq!(p1.ctx_hash, p2.ctx_hash);
        assert_eq!(p1, p2);
    }

    #[test]
    fn toggling_a_headline_changes_ctx_hash_only() {
        let b = baseline();
        let peers = vec!["peer profile".to_string()];
        let heads1 = vec!["headline one".to_string()];
        let heads2 = vec!["headline two".to_string()];
        let p1 = build_prompt(&inputs(&b, &peers, &heads1, true, true));
        let p2 = build_prompt(&inputs(&b, &peers, &heads2, true, true));
        assert_eq!(p1.prompt_hash, p2.prompt_hash);
        assert_ne!(p1.ctx_hash, p2.ctx_hash);
    }

    #[test]
    fn rag_off_context_is_target_profile_only() {
        let b = baseline();
        let peers = vec!["peer profile".to_string()];
        let p = build_prompt(&inputs(&b, &peers, &[], false, false));
        assert_eq!(p.context_blocks.len(), 1);
        assert!(p.context_blocks[0].starts_with("Country profile: Canada"));
    }

    #[test]
    fn extraction_takes_earliest_parsing_object() {
        let v = extract_first_json(r#"{"bad": } {"a": 2}"#).unwrap();
        assert_eq!(v, serde_json::json!({"a": 2}));

        let fenced = "Here is the scenario:\n```json\n{\"a\": {\"b\": 1}}\n```\ntrailing prose";
        assert_eq!(extract_first_json(fenced).unwrap(), serde_json::json!({"a": {"b": 1}}));

        let nested_recovery = r#"prefix {broken {"inner": true} } suffix"#;
        assert_eq!(extract_first_json(nested_recovery).unwrap(), serde_json::json!({"inner": true}));

        let braces_in_strings = r#"{"text": "a } b { c", "n": 1}"#;
        assert_eq!(
            extract_first_json(braces_in_strings).unwrap(),
            serde_json::json!({"text": "a } b { c", "n": 1})
        );

        assert!(extract_first_json("no json here").is_err());
        assert!(extract_first_json(r#"{"truncated": tru"#).is_err());
    }

    fn grid_config(countries: &[&str], variants: &[&str], rag: bool, news: bool) -> RunConfig {
        serde_json::from_value(serde_json::json!({
            "countries": countries,
            "model_id": "fixture-model",
            "model_version": "1",
            "rag": rag,
            "use_news": news,
            "prompt_variants": variants,
        }))
        .unwrap()
    }

    struct CannedProvider {
        good: String,
        bad_for_variant: String,
    }

    impl GenerationProvider for CannedProvider {
        fn generate(&self, bundle: &PromptBundle, _seed: u64) -> Result<String, ProviderError> {
            if bundle.prompt_variant == self.bad_for_variant {
                Ok("sorry, no JSON today".to_string())
            } else {
                Ok(self.good.clone())
            }
        }
        fn provider_name(&self) -> &'static str {
            "fixture"
        }
    }

    #[test]
    fn grid_counts_every_cell_and_records_malformed() {
        let cfg = grid_config(&["Canada", "Japan"], &["v01_baseline_severe", "v02_energy_shock"], true, false);
        let baselines = vec![
            baseline(),
            CountryBaseline { country: "Japan".into(), gdp_growth: 0.6, inflation: 1.8, interest_rate: 0.75, vintage: "v".into() },
        ];
        let provider = CannedProvider {
            good: r#"{"country":"X","title":"t","gdp_growth":-1.0,"inflation":3.0,"interest_rate":5.0,"rationale":"r","risk_sectors":["banks"]}"#.into(),
            bad_for_variant: "v02_energy_shock".into(),
        };
        let outcomes = run_grid(&cfg, &baselines, &provider, &GridContext::default());
        // 2 countries x rag {off,on} x news {off} x 2 variants
        assert_eq!(outcomes.len(), 8);
        let summary = grid_summary(&outcomes);
        assert_eq!(summary.attempts, 8);
        assert_eq!(summary.parsed, 4);
        assert_eq!(summary.malformed, 4);
        assert_eq!(summary.provider_failed, 0);

        // canonical ordering: (country, rag, news, variant)
        let keys: Vec<(String, bool, bool, String)> =
            outcomes.iter().map(|o| (o.key.country.clone(), o.key.rag, o.key.use_news, o.key.variant.clone())).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);

        // parsed cells get stamped provenance and the requested country
        let parsed = outcomes.iter().find(|o| matches!(o.status, CellStatus::Parsed)).unwrap();
        let s = parsed.scenario.as_ref().unwrap();
        assert_eq!(s.country, parsed.key.country);
        assert_eq!(s.model, "fixture-model");
        assert_eq!(s.prompt_hash, parsed.prompt_hash);
        assert!(s.scenario_hash.is_empty(), "hash is sealed at audit time");
    }

    #[test]
    fn fixture_provider_replays_exact_bytes_and_reports_misses() {
        let b = baseline();
        let bundle = build_prompt(&inputs(&b, &[], &[], false, false));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("responses.jsonl");
        let line = serde_json::json!({
            "prompt_hash": bundle.prompt_hash,
            "ctx_hash": bundle.ctx_hash,
            "response": "prose {\"country\":\"Canada\"} more prose",
        });
        std::fs::write(&path, format!("{line}\n")).unwrap();
        let provider = FixtureProvider::load(&path).unwrap();
        assert_eq!(provider.len(), 1);
        let got = provider.generate(&bundle, 42).unwrap();
        assert_eq!(got, "prose {\"country\":\"Canada\"} more prose");
        assert_eq!(provider.generate(&bundle, 42).unwrap(), got, "byte-identical on repeat");

        let peers = vec!["peer profile".to_string()];
        let other = build_prompt(&inputs(&b, &peers, &[], true, false));
        assert!(matches!(
            provider.generate(&other, 42),
            Err(ProviderError::FixtureMiss { .. })
        ));
    }
}
