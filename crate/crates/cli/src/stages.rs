//! The eleven pipeline stages. Each stage reads frozen inputs and upstream
//! artifacts, writes its outputs under the run directory, and registers every
//! file it produced in the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::Serialize;

use stresslab::baselines::{
    bootstrap_var, deterministic_benchmarks, envelope, envelopes_from_metrics, ewma_var,
    fit_garch_t, garch_var, window_block_metrics, BaselineResult, CrisisEnvelope,
    EnvelopeMetricsFixture, WindowBlockMetrics,
};
use stresslab::diagnostics::{
    anova_eta2, bootstrap_ci, dispersion, fairness_card, qc_filter, AnovaObservation,
    DispersionStat, FairnessCell,
};
use stresslab::factor::{fit_betas, fit_pca, BetaSet, ANCHOR_ORDER};
use stresslab::ingest::{
    baseline_for, load_prices_csv, load_weo_baselines, read_headlines_csv, write_headlines_csv,
    CountryBaseline, HeadlineSnapshot, PricePanel,
};
use stresslab::llm::{
    country_profile, grid_summary, run_grid, CellOutcome, CellStatus, FixtureProvider,
    GridContext,
};
use stresslab::model::{DateWindow, Portfolio, RunConfig};
use stresslab::plausibility::{audit_scenario, AuditConfig, AuditedScenario, LexicalRegimeClassifier};
use stresslab::provenance::{hash_artifact, RunManifest};
use stresslab::retrieval::{
    retrieval_seed, select_diverse_headlines, EmbeddingProvider, FlatIndex, HashEmbedder,
};
use stresslab::risk::{covariance_pair, run_channels, CovariancePair, PortfolioRiskSpec, RiskReport};

use crate::layout::{slug, Layout, MANIFEST};
use crate::{CliError, StageCtx};

/// Number of exemplar headlines selected from each 50-row snapshot.
pub const HEADLINE_K: usize = 20;
/// RiskMetrics decay factor for the EWMA baseline.
pub const EWMA_LAMBDA: f64 = 0.94;
/// Days of headline history in a snapshot window.
const SNAPSHOT_WINDOW_DAYS: i64 = 45;

// ---------------------------------------------------------------------------
// small shared IO helpers

fn create_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("creating {}: {e}", dir.display()))?;
    }
    Ok(())
}

fn missing(path: &Path, produced_by: &str) -> CliError {
    CliError::MissingArtifact(format!("{} (produced by `{produced_by}`)", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path, produced_by: &str) -> Result<T, CliError> {
    let file = fs::File::open(path).map_err(|_| missing(path, produced_by))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()).into())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    create_parent(path)?;
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| anyhow::anyhow!("{e}"))?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()).into())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path, produced_by: &str) -> Result<Vec<T>, CliError> {
    let file = fs::File::open(path).map_err(|_| missing(path, produced_by))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| anyhow::anyhow!("{} line {}: {e}", path.display(), i + 1))?;
        out.push(item);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    create_parent(path)?;
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| anyhow::anyhow!("{e}"))?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()).into())
}

fn load_manifest(layout: &Layout) -> Result<RunManifest, CliError> {
    let path = layout.manifest();
    if !path.exists() {
        return Err(missing(&path, "ingest"));
    }
    RunManifest::load(&path).map_err(|e| anyhow::anyhow!("loading manifest: {e}").into())
}

fn save_manifest(manifest: &RunManifest, layout: &Layout) -> Result<(), CliError> {
    manifest
        .save(&layout.manifest())
        .map_err(|e| anyhow::anyhow!("saving manifest: {e}").into())
}

fn record(manifest: &mut RunManifest, layout: &Layout, paths: &[&Path]) -> Result<(), CliError> {
    for path in paths {
        manifest
            .record_file(layout.root(), path)
            .map_err(|e| anyhow::anyhow!("hashing {}: {e}", path.display()))?;
    }
    Ok(())
}

fn audit_config(cfg: &RunConfig) -> AuditConfig {
    AuditConfig {
        rates_are_levels: cfg.rates_are_levels,
        accept_threshold: cfg.accept_threshold,
        lambda_theta: cfg.lambda_theta,
    }
}

fn load_prices(cfg: &RunConfig) -> Result<PricePanel, CliError> {
    let path = &cfg.inputs.prices_csv;
    if !path.exists() {
        return Err(CliError::MissingArtifact(format!("price CSV {}", path.display())));
    }
    load_prices_csv(path).map_err(|e| CliError::Config(format!("prices: {e}")))
}

fn parse_date(s: &str, what: &str) -> Result<NaiveDate, CliError> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| CliError::Config(format!("{what} '{s}': {e}")))
}

// ---------------------------------------------------------------------------
// shared construction used by both the pipeline and the fixture builder

/// Snapshot window and query derivation shared by ingest and fixture builds.
pub fn build_snapshot(
    country: &str,
    retrieval_date: &str,
    raw: &[(i64, String)],
) -> Result<HeadlineSnapshot, CliError> {
    let end = parse_date(retrieval_date, "retrieval_date")?;
    let start = end - chrono::Days::new(SNAPSHOT_WINDOW_DAYS as u64);
    Ok(HeadlineSnapshot::build(
        country,
        &start.format("%Y-%m-%d").to_string(),
        &end.format("%Y-%m-%d").to_string(),
        &format!("{country} macroeconomic stress headlines"),
        raw.len() as u32,
        raw,
    ))
}

/// Embed each country profile and build the exact inner-product index.
pub fn build_profile_index(
    baselines: &[CountryBaseline],
    embedder: &HashEmbedder,
    tie_seed: u64,
) -> Result<FlatIndex, CliError> {
    let entries: Vec<(String, Vec<f64>)> = baselines
        .iter()
        .map(|b| (b.country.clone(), embedder.embed(&country_profile(b))))
        .collect();
    FlatIndex::build(&entries, tie_seed, &embedder.weights_hash())
        .map_err(|e| CliError::Config(format!("index build: {e}")))
}

/// Retrieve peer profiles and exemplar headlines for every configured country.
/// This is the single construction point for generation context, shared with
/// the fixture builder so frozen responses key to identical hashes.
pub fn build_grid_context(
    cfg: &RunConfig,
    baselines: &[CountryBaseline],
    index: &FlatIndex,
    snapshots: &BTreeMap<String, HeadlineSnapshot>,
    embedder: &HashEmbedder,
) -> Result<GridContext, CliError> {
    let mut ctx = GridContext::default();
    for country in &cfg.countries {
        let baseline = baseline_for(baselines, country)
            .map_err(|e| CliError::Config(format!("grid context: {e}")))?;
        let query = embedder.embed(&country_profile(baseline));
        let top = index.top_k_filtered(&query, cfg.top_k, |key| key != country.as_str());
        let peers: Vec<String> = top
            .hits
            .iter()
            .filter_map(|h| baseline_for(baselines, &h.key).ok().map(country_profile))
            .collect();
        ctx.peer_profiles.insert(country.clone(), peers);
        if let Some(snapshot) = snapshots.get(country) {
            let seed = retrieval_seed(country, &cfg.retrieval_date);
            ctx.headlines.insert(
                country.clone(),
                select_diverse_headlines(snapshot, embedder, HEADLINE_K, seed),
            );
        }
    }
    Ok(ctx)
}

/// Tickers with enough history to participate in the factor fit and
/// portfolios, in sorted order.
pub fn active_tickers(panel: &PricePanel, min_history_days: usize) -> Vec<String> {
    let mut active: Vec<String> = panel
        .tickers()
        .iter()
        .filter(|t| panel.active_days(t).map(|d| d >= min_history_days).unwrap_or(false))
        .cloned()
        .collect();
    active.sort();
    active
}

/// Portfolio definitions: a 60/30/10 core allocation over the factor anchors
/// and an equal-weight basket of the remaining (non-anchor) tickers with
/// sufficient history.
pub fn build_portfolios(panel: &PricePanel, min_history_days: usize) -> Result<Vec<Portfolio>, CliError> {
    let active = active_tickers(panel, min_history_days);
    for anchor in ANCHOR_ORDER {
        if !active.iter().any(|t| t == anchor) {
            return Err(CliError::Config(format!("anchor ticker {anchor} missing or too short in panel")));
        }
    }
    let sectors: Vec<String> =
        active.iter().filter(|t| !ANCHOR_ORDER.contains(&t.as_str())).cloned().collect();
    if sectors.is_empty() {
        return Err(CliError::Config("no sector tickers with sufficient history".into()));
    }
    Ok(vec![Portfolio::core_60_30_10(), Portfolio::equal_weight("B", &sectors)])
}

// ---------------------------------------------------------------------------
// stage: ingest

#[derive(Debug, serde::Deserialize)]
struct RawHeadline {
    published_at: i64,
    title: String,
}

#[derive(Serialize)]
struct PricesSummary {
    n_dates: usize,
    n_tickers: usize,
    first_date: String,
    last_date: String,
    tickers: Vec<String>,
    active_days: BTreeMap<String, usize>,
}

pub fn cmd_ingest(ctx: &StageCtx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let layout = Layout::new(&ctx.out);
    fs::create_dir_all(layout.root()).map_err(|e| anyhow::anyhow!("{e}"))?;

    let mut manifest = RunManifest::new(&cfg.workspace_tag, cfg.snapshot());
    manifest.volatile.run_id = format!(
        "{:x}-{:x}",
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or(0),
        std::process::id()
    );
    manifest.volatile.created_utc = chrono::Utc::now().to_rfc3339();
    manifest.set_flag("rag", cfg.rag);
    manifest.set_flag("use_news", cfg.use_news);

    // macro baselines
    let weo_path = &cfg.inputs.weo_json;
    if !weo_path.exists() {
        return Err(CliError::MissingArtifact(format!("macro baseline file {}", weo_path.display())));
    }
    let mut baselines =
        load_weo_baselines(weo_path).map_err(|e| CliError::Config(format!("macro baselines: {e}")))?;
    baselines.sort_by(|a, b| a.country.cmp(&b.country));
    for country in &cfg.countries {
        baseline_for(&baselines, country).map_err(|e| CliError::Config(e.to_string()))?;
    }
    write_json(&layout.weo_baselines(), &baselines)?;
    let weo_hash = hash_artifact(weo_path).map_err(|e| anyhow::anyhow!("{e}"))?;
    manifest.set_meta("weo_hash", serde_json::json!(weo_hash.sha256));

    // price panel: validate and summarize
    let panel = load_prices(cfg)?;
    let dates = panel.dates();
    let summary = PricesSummary {
        n_dates: dates.len(),
        n_tickers: panel.tickers().len(),
        first_date: dates.first().map(|d| d.to_string()).unwrap_or_default(),
        last_date: dates.last().map(|d| d.to_string()).unwrap_or_default(),
        tickers: panel.tickers().to_vec(),
        active_days: panel
            .tickers()
            .iter()
            .map(|t| (t.clone(), panel.active_days(t).unwrap_or(0)))
            .collect(),
    };
    write_json(&layout.prices_summary(), &summary)?;
    let prices_hash = hash_artifact(&cfg.inputs.prices_csv).map_err(|e| anyhow::anyhow!("{e}"))?;
    manifest.set_meta("prices_hash", serde_json::json!(prices_hash.sha256));

    // headline snapshots: fixed 50-row tables per country
    let mut headline_hashes = BTreeMap::new();
    for country in &cfg.countries {
        let raw_path = cfg.inputs.headlines_dir.join(format!("{}.json", slug(country)));
        let raw: Vec<RawHeadline> = if raw_path.exists() {
            read_json(&raw_path, "fixture inputs")?
        } else {
            Vec::new()
        };
        let pairs: Vec<(i64, String)> = raw.into_iter().map(|h| (h.published_at, h.title)).collect();
        let snapshot = build_snapshot(country, &cfg.retrieval_date, &pairs)?;
        let csv_path = layout.headlines_csv(country);
        let meta_path = layout.headlines_meta(country);
        create_parent(&csv_path)?;
        write_headlines_csv(&csv_path, &meta_path, &snapshot)
            .map_err(|e| anyhow::anyhow!("headline snapshot for {country}: {e}"))?;
        let entry = manifest
            .record_file(layout.root(), &csv_path)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        headline_hashes.insert(slug(country), entry.sha256.clone());
        record(&mut manifest, &layout, &[&meta_path])?;
    }
    manifest.set_meta("headline_csv_hash", serde_json::json!(headline_hashes));

    record(&mut manifest, &layout, &[&layout.weo_baselines(), &layout.prices_summary()])?;
    save_manifest(&manifest, &layout)?;
    println!(
        "ingest: {} countries, {} trading dates, snapshots written to {}",
        cfg.countries.len(),
        summary.n_dates,
        layout.root().display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// stage: index

pub fn cmd_index(ctx: &StageCtx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let layout = Layout::new(&ctx.out);
    let mut manifest = load_manifest(&layout)?;

    let baselines: Vec<CountryBaseline> = read_json(&layout.weo_baselines(), "ingest")?;
    let embedder = HashEmbedder::default();
    let index = build_profile_index(&baselines, &embedder, cfg.seed)?;
    create_parent(&layout.flat_index())?;
    index
        .save(&layout.flat_index())
        .map_err(|e| anyhow::anyhow!("saving index: {e}"))?;

    let entry = manifest
        .record_file(layout.root(), &layout.flat_index())
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let index_hash = entry.sha256.clone();
    manifest.set_meta("flat_index_hash", serde_json::json!(index_hash));
    manifest.set_meta("embedding_weights_hash", serde_json::json!(embedder.weights_hash()));
    let seeds: BTreeMap<String, u64> = cfg
        .countries
        .iter()
        .map(|c| (c.clone(), retrieval_seed(c, &cfg.retrieval_date)))
        .collect();
    manifest.set_meta("retrieval_seed", serde_json::json!(seeds));
    save_manifest(&manifest, &layout)?;
    println!("index: {} profiles embedded (dim {})", index.len(), index.dim());
    Ok(())
}

// ---------------------------------------------------------------------------
// stage: generate

enum ProviderChoice {
    Fixture(PathBuf),
    Http(String),
}

fn resolve_provider(ctx: &StageCtx) -> Result<ProviderChoice, CliError> {
    let spec = ctx.provider_spec.as_str();
    if spec == "fixture" {
        let path = ctx.cfg.inputs.responses_jsonl.clone().ok_or_else(|| {
            CliError::Config("provider 'fixture' needs inputs.responses_jsonl in the config".into())
        })?;
        return Ok(ProviderChoice::Fixture(path));
    }
    if let Some(path) = spec.strip_prefix("fixture:") {
        return Ok(ProviderChoice::Fixture(PathBuf::from(path)));
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        if ctx.offline {
            return Err(CliError::Config(
                "a live endpoint provider needs --offline=false (offline is the default)".into(),
            ));
        }
        return Ok(ProviderChoice::Http(spec.to_string()));
    }
    Err(CliError::Config(format!(
        "unknown provider spec '{spec}' (fixture | fixture:<path> | http(s)://<endpoint>)"
    )))
}

fn load_snapshots(
    layout: &Layout,
    countries: &[String],
) -> Result<BTreeMap<String, HeadlineSnapshot>, CliError> {
    let mut out = BTreeMap::new();
    for country in countries {
        let csv = layout.headlines_csv(country);
        if !csv.exists() {
            return Err(missing(&csv, "ingest"));
        }
        let snapshot = read_headlines_csv(&csv, &layout.headlines_meta(country))
            .map_err(|e| anyhow::anyhow!("reading snapshot for {country}: {e}"))?;
        out.insert(country.clone(), snapshot);
    }
    Ok(out)
}

pub fn cmd_generate(ctx: &StageCtx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let layout = Layout::new(&ctx.out);
    let mut manifest = load_manifest(&layout)?;

    let baselines: Vec<CountryBaseline> = read_json(&layout.weo_baselines(), "ingest")?;
    let index_path = layout.flat_index();
    if !index_path.exists() {
        return Err(missing(&index_path, "index"));
    }
    let index = FlatIndex::load(&index_path).map_err(|e| anyhow::anyhow!("loading index: {e}"))?;
    let embedder = HashEmbedder::default();
    let snapshots = load_snapshots(&layout, &cfg.countries)?;
    let grid_ctx = build_grid_context(cfg, &baselines, &index, &snapshots, &embedder)?;

    let outcomes = match resolve_provider(ctx)? {
        ProviderChoice::Fixture(path) => {
            if !path.exists() {
                return Err(CliError::MissingArtifact(format!("response fixture {}", path.display())));
            }
            let provider = FixtureProvider::load(&path)
                .map_err(|e| CliError::Config(format!("response fixture: {e}")))?;
            run_grid(cfg, &baselines, &provider, &grid_ctx)
        }
        ProviderChoice::Http(endpoint) => {
            let http_cfg = stresslab::llm::HttpEndpointConfig {
                endpoint,
                model: cfg.model_id.clone(),
                api_key_env: Some("STRESSLAB_API_KEY".to_string()),
                timeout_secs: 60,
                temperature: 0.0,
            };
            let provider = stresslab::llm::HttpProvider::new(http_cfg)
                .map_err(|e| CliError::Config(format!("endpoint client: {e}")))?;
            run_grid(cfg, &baselines, &provider, &grid_ctx)
        }
    };

    let summary = grid_summary(&outcomes);
    write_jsonl(&layout.scenarios_raw(), &outcomes)?;
    write_json(&layout.grid_summary(), &summary)?;
    manifest.set_meta("grid_summary", serde_json::to_value(&summary).map_err(|e| anyhow::anyhow!("{e}"))?);
    record(&mut manifest, &layout, &[&layout.scenarios_raw(), &layout.grid_summary()])?;
    save_manifest(&manifest, &layout)?;
    println!(
        "generate: {} attempts, {} parsed, {} malformed, {} provider failures",
        summary.attempts, summary.parsed, summary.malformed, summary.provider_failed
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// stage: audit

#[derive(Serialize)]
struct AuditSummary {
    parsed: usize,
    accepted: usize,
    rejected: usize,
    benchmark_scenarios: usize,
    mean_score_accepted: f64,
}

pub fn cmd_audit(ctx: &StageCtx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let layout = Layout::new(&ctx.out);
    let mut manifest = load_manifest(&layout)?;

    let outcomes: Vec<CellOutcome> = read_jsonl(&layout.scenarios_raw(), "generate")?;
    let baselines: Vec<CountryBaseline> = read_json(&layout.weo_baselines(), "ingest")?;
    let classifier = LexicalRegimeClassifier;
    let audit_cfg = audit_config(cfg);

    let mut audited: Vec<AuditedScenario> = Vec::new();
    for outcome in &outcomes {
        if !matches!(outcome.status, CellStatus::Parsed) {
            continue;
        }
        let Some(scenario) = &outcome.scenario else { continue };
        let baseline = baseline_for(&baselines, &scenario.country)
            .map_err(|e| CliError::Config(e.to_string()))?;
        audited.push(audit_scenario(scenario, baseline, &classifier, &audit_cfg));
    }
    let parsed = audited.len();

    // fixed macro benchmarks flow through the same audit and engine
    let mut countries = cfg.countries.clone();
    countries.sort();
    let benches = deterministic_benchmarks(&countries, cfg.run_timestamp_utc);
    for bench in &benches {
        let baseline = baseline_for(&baselines, &bench.country)
            .map_err(|e| CliError::Config(e.to_string()))?;
        audited.push(audit_scenario(bench, baseline, &classifier, &audit_cfg));
    }

    let accepted = audited.iter().filter(|a| a.accepted).count();
    let scores: Vec<f64> =
        audited.iter().filter(|a| a.accepted).map(|a| a.soft.total).collect();
    let summary = AuditSummary {
        parsed,
        accepted,
        rejected: audited.len() - accepted,
        benchmark_scenarios: benches.len(),
        mean_score_accepted: if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        },
    };
    write_jsonl(&layout.scenarios_audited(), &audited)?;
    write_json(&layout.audit_summary(), &summary)?;
    manifest.set_meta(
        "audit_summary",
        serde_json::to_value(&summary).map_err(|e| anyhow::anyhow!("{e}"))?,
    );
    record(&mut manifest, &layout, &[&layout.scenarios_audited(), &layout.audit_summary()])?;
    save_manifest(&manifest, &layout)?;
    println!(
        "audit: {} parsed candidates, {} accepted, {} rejected ({} benchmarks included)",
        summary.parsed, summary.accepted, summary.rejected, summary.benchmark_scenarios
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// stage: fit-factors

pub fn cmd_fit_factors(ctx: &StageCtx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let layout = Layout::new(&ctx.out);
    let mut manifest = load_manifest(&layout)?;

    let panel = load_prices(cfg)?;
    let anchors: Vec<String> = ANCHOR_ORDER.iter().map(|s| s.to_string()).collect();
    let anchor_window = panel
        .log_returns_window(&anchors, cfg.windows.pca)
        .map_err(|e| CliError::Numerical(format!("anchor returns: {e}")))?;
    let factors = fit_pca(&anchor_window, cfg.seed)
        .map_err(|e| CliError::Numerical(format!("factor fit: {e}")))?;

    let active = active_tickers(&panel, cfg.min_history_days);
    let asset_window = panel
        .log_returns_window(&active, cfg.windows.pca)
        .map_err(|e| CliError::Numerical(format!("asset returns: {e}")))?;
    let betas = fit_betas(&asset_window, &factors, cfg.channel_params.drift_cap_daily)
        .map_err(|e| CliError::Numerical(format!("beta fit: {e}")))?;

    let calm = panel
        .log_returns_window(&active, cfg.windows.calm)
        .map_err(|e| CliError::Numerical(format!("calm window: {e}")))?;
    let crisis = panel
        .log_returns_window(&active, cfg.windows.crisis_gfc)
        .map_err(|e| CliError::Numerical(format!("crisis window: {e}")))?;
    let covpair =
        covariance_pair(&calm, &crisis).map_err(|e| CliError::Numerical(format!("covariance: {e}")))?;

    write_json(&layout.pca_factors(), &factors)?;
    write_json(&layout.betas(), &betas)?;
    write_json(&layout.covariance(), &covpair)?;

    let cov_hash = |m: &stresslab::nalgebra::DMatrix<f64>| -> Result<String, CliError> {
        let value = serde_json::to_value(m).map_err(|e| anyhow::anyhow!("{e}"))?;
        let bytes = stresslab::model::canonical_json_bytes(&value)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(stresslab::provenance::sha256_hex(&bytes))
    };
    record(
        &mut manifest,
        &layout,
        &[&layout.pca_factors(), &layout.betas(), &layout.covariance()],
    )?;
    let pca_entry = hash_artifact(&layout.pca_factors()).map_err(|e| anyhow::anyhow!("{e}"))?;
    manifest.set_meta("pca_factors_hash", serde_json::json!(pca_entry.sha256));
    manifest.set_meta("cov_calm_hash", serde_json::json!(cov_hash(&covpair.calm)?));
    manifest.set_meta("cov_crisis_hash", serde_json::json!(cov_hash(&covpair.crisis)?));
    if !betas.ridge_fallback.is_empty() {
        manifest.set_meta("beta_ridge_fallback", serde_json::json!(betas.ridge_fallback));
    }
    save_manifest(&manifest, &layout)?;
    println!(
        "fit-factors: eigenvalues [{:.3e}, {:.3e}, {:.3e}], {} assets, {} covariance tickers",
        factors.eigenvalues[0],
        factors.eigenvalues[1],
        factors.eigenvalues[2],
        betas.tickers.len(),
        covpair.tickers.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// stage: simulate

/// One flat row of the risk-report table, used for CSV writing and reading.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct RiskRow {
    pub scenario_hash: String,
    pub portfolio_id: String,
    pub channel: String,
    pub var95: f64,
    pub cvar95: f64,
    pub mdd: f64,
    pub mdd_p95: f64,
    pub var_mult: f64,
    pub cvar_mult: f64,
    pub dvar_pct: f64,
    pub baseline_id: String,
    pub eps_jitter: f64,
    pub seed: u64,
}

impl RiskRow {
    fn from_report(r: &RiskReport) -> Self {
        RiskRow {
            scenario_hash: r.scenario_hash.clone(),
            portfolio_id: r.portfolio_id.clone(),
            channel: r.channel.to_string(),
            var95: r.metrics.var95,
            cvar95: r.metrics.cvar95,
            mdd: r.metrics.mdd,
            mdd_p95: r.metrics.mdd_p95,
            var_mult: r.multiples.var_mult,
            cvar_mult: r.multiples.cvar_mult,
            dvar_pct: r.multiples.dvar_pct,
            baseline_id: r.baseline_id.clone(),
            eps_jitter: r.eps_jitter,
            seed: r.seed,
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    create_parent(path)?;
    let mut writer = csv::Writer::from_path(path).map_err(|e| anyhow::anyhow!("{e}"))?;
    for row in rows {
        writer.serialize(row).map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    writer.flush().map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(())
}

/// csv::Writer emits no header for an empty Vec<T>, so empty tables write
/// their header explicitly to keep the schema visible.
fn write_csv_or_header<T: Serialize>(path: &Path, rows: &[T], header: &str) -> Result<(), CliError> {
    if rows.is_empty() {
        create_parent(path)?;
        let mut f = fs::File::create(path).map_err(|e| anyhow::anyhow!("{e}"))?;
        writeln!(f, "{header}").map_err(|e| anyhow::anyhow!("{e}"))?;
        return Ok(());
    }
    write_csv(path, rows)
}

const RISK_HEADER: &str = "scenario_hash,portfolio_id,channel,var95,cvar95,mdd,mdd_p95,var_mult,cvar_mult,dvar_pct,baseline_id,eps_jitter,seed";

pub fn build_risk_specs(
    panel: &PricePanel,
    cfg: &RunConfig,
    cov_tickers: &[String],
    portfolios: &[Portfolio],
) -> Result<Vec<PortfolioRiskSpec>, CliError> {
    let mut specs = Vec::with_capacity(portfolios.len());
    let cov_ticker_vec = cov_tickers.to_vec();
    for p in portfolios {
        for ticker in p.weights.keys() {
            if !cov_tickers.iter().any(|t| t == ticker) {
                return Err(CliError::Config(format!(
                    "portfolio {} holds {ticker}, absent from the covariance asset set",
                    p.id
                )));
            }
        }
        let returns = panel
            .portfolio_returns(&p.weights, cfg.windows.bootstrap)
            .map_err(|e| CliError::Numerical(format!("portfolio {} returns: {e}", p.id)))?;
        let base = bootstrap_var(&returns, cfg.horizon_days, cfg.bootstrap_resamples, cfg.seed)
            .map_err(|e| CliError::Numerical(format!("portfolio {} baseline: {e}", p.id)))?;
        specs.push(PortfolioRiskSpec {
            portfolio_id: p.id.clone(),
            weights: p.weight_vector(&cov_ticker_vec),
            base_var95: base.var95,
            base_cvar95: base.cvar95,
        });
    }
    Ok(specs)
}

#[derive(Serialize)]
struct CrossrunRow {
    model: String,
    rag: bool,
    news: bool,
    var_vol_mean: f64,
    var_vol_std: f64,
    cvar_vol_mean: f64,
    cvar_vol_std: f64,
    var_linear_mean: f64,
    var_linear_std: f64,
    cvar_linear_mean: f64,
    cvar_linear_std: f64,
    var_nonlinear_mean: f64,
    var_nonlinear_std: f64,
    cvar_nonlinear_mean: f64,
    cvar_nonlinear_std: f64,
    n: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = stresslab::stats::mean(values);
    let std = if values.len() > 1 { stresslab::stats::std_dev(values, 1) } else { 0.0 };
    (mean, std)
}

pub fn cmd_simulate(ctx: &StageCtx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let layout = Layout::new(&ctx.out);
    let mut manifest = load_manifest(&layout)?;

    let audited: Vec<AuditedScenario> = read_jsonl(&layout.scenarios_audited(), "audit")?;
    let betas: BetaSet = read_json(&layout.betas(), "fit-factors")?;
    let covpair: CovariancePair = read_json(&layout.covariance(), "fit-factors")?;
    let panel = load_prices(cfg)?;

    let portfolios: Vec<Portfolio> = build_portfolios(&panel, cfg.min_history_days)?
        .into_iter()
        .filter(|p| ctx.portfolios.keeps(&p.id))
        .collect();
    let specs = build_risk_specs(&panel, cfg, &covpair.tickers, &portfolios)?;

    let accepted: Vec<&AuditedScenario> = audited.iter().filter(|a| a.accepted).collect();
    if accepted.is_empty() {
        eprintln!("simulate: warning: no accepted scenarios; writing empty tables");
    }
    let mut rows: Vec<RiskRow> = Vec::new();
    let mut scenario_meta: BTreeMap<String, (String, bool, bool)> = BTreeMap::new();
    for a in &accepted {
        let reports = run_channels(a, &betas, &covpair, &specs, cfg)
            .map_err(|e| CliError::Numerical(format!("scenario {}: {e}", a.scenario.scenario_hash)))?;
        scenario_meta.insert(
            a.scenario.scenario_hash.clone(),
            (a.scenario.model.clone(), a.scenario.rag, a.scenario.use_news),
        );
        rows.extend(
            reports
                .iter()
                .filter(|r| ctx.channels.keeps(r.channel.as_str()))
                .map(RiskRow::from_report),
        );
    }
    write_csv_or_header(&layout.risk_reports(), &rows, RISK_HEADER)?;

    // cross-run aggregate: moments of each channel multiple per (model, rag, news)
    let mut groups: BTreeMap<(String, bool, bool), Vec<&RiskRow>> = BTreeMap::new();
    for row in &rows {
        if let Some((model, rag, news)) = scenario_meta.get(&row.scenario_hash) {
            groups.entry((model.clone(), *rag, *news)).or_default().push(row);
        }
    }
    let mut crossrun: Vec<CrossrunRow> = Vec::new();
    for ((model, rag, news), group) in &groups {
        let pick = |channel: &str, cvar: bool| -> Vec<f64> {
            group
                .iter()
                .filter(|r| r.channel == channel)
                .map(|r| if cvar { r.cvar_mult } else { r.var_mult })
                .collect()
        };
        let n = group.iter().filter(|r| r.channel == "linear").count();
        let (vv_m, vv_s) = mean_std(&pick("vol", false));
        let (cv_m, cv_s) = mean_std(&pick("vol", true));
        let (vl_m, vl_s) = mean_std(&pick("linear", false));
        let (cl_m, cl_s) = mean_std(&pick("linear", true));
        let (vn_m, vn_s) = mean_std(&pick("nonlinear", false));
        let (cn_m, cn_s) = mean_std(&pick("nonlinear", true));
        crossrun.push(CrossrunRow {
            model: model.clone(),
            rag: *rag,
            news: *news,
            var_vol_mean: vv_m,
            var_vol_std: vv_s,
            cvar_vol_mean: cv_m,
            cvar_vol_std: cv_s,
            var_linear_mean: vl_m,
            var_linear_std: vl_s,
            cvar_linear_mean: cl_m,
            cvar_linear_std: cl_s,
            var_nonlinear_mean: vn_m,
            var_nonlinear_std: vn_s,
            cvar_nonlinear_mean: cn_m,
            cvar_nonlinear_std: cn_s,
            n,
        });
    }
    write_csv_or_header(
        &layout.risk_crossrun(),
        &crossrun,
        "model,rag,news,var_vol_mean,var_vol_std,cvar_vol_mean,cvar_vol_std,var_linear_mean,var_linear_std,cvar_linear_mean,cvar_linear_std,var_nonlinear_mean,var_nonlinear_std,cvar_nonlinear_mean,cvar_nonlinear_std,n",
    )?;

    record(&mut manifest, &layout, &[&layout.risk_reports(), &layout.risk_crossrun()])?;
    manifest.set_meta(
        "simulate_summary",
        serde_json::json!({
            "accepted_scenarios": accepted.len(),
            "risk_rows": rows.len(),
            "portfolios": portfolios.iter().map(|p| p.id.clone()).collect::<Vec<_>>(),
            "n_paths": cfg.n_paths,
        }),
    );
    save_manifest(&manifest, &layout)?;
    println!(
        "simulate: {} accepted scenarios x {} portfolios -> {} risk rows",
        accepted.len(),
        specs.len(),
        rows.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// stage: baselines

#[derive(Serialize)]
struct BaselineCsvRow {
    portfolio_id: String,
    method: String,
    var95: f64,
    cvar95: f64,
    params: String,
}

pub fn cmd_baselines(ctx: &StageCtx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let layout = Layout::new(&ctx.out);
    let mut manifest = load_manifest(&layout)?;
    let panel = load_prices(cfg)?;
    let portfolios: Vec<Portfolio> = build_portfolios(&panel, cfg.min_history_days)?
        .into_iter()
        .filter(|p| ctx.portfolios.keeps(&p.id))
        .collect();

    let mut rows: Vec<BaselineCsvRow> = Vec::new();
    for p in &portfolios {
        let returns = panel
            .portfolio_returns(&p.weights, cfg.windows.bootstrap)
            .map_err(|e| CliError::Numerical(format!("portfolio {}: {e}", p.id)))?;
        let mut push = |result: BaselineResult| {
            rows.push(BaselineCsvRow {
                portfolio_id: p.id.clone(),
                method: result.method,
                var95: result.var95,
                cvar95: result.cvar95,
                params: result.params.to_string(),
            });
        };
        push(
            bootstrap_var(&returns, cfg.horizon_days, cfg.bootstrap_resamples, cfg.seed)
                .map_err(|e| CliError::Numerical(format!("bootstrap {}: {e}", p.id)))?,
        );
        push(
            ewma_var(&returns, EWMA_LAMBDA, cfg.horizon_days)
                .map_err(|e| CliError::Numerical(format!("ewma {}: {e}", p.id)))?,
        );
        let fit = fit_garch_t(&returns)
            .map_err(|e| CliError::Numerical(format!("garch fit {}: {e}", p.id)))?;
        push(garch_var(&fit, cfg.horizon_days, cfg.n_paths.max(4000), cfg.seed));
    }
    write_csv_or_header(&layout.baselines_csv(), &rows, "portfolio_id,method,var95,cvar95,params")?;
    record(&mut manifest, &layout, &[&layout.baselines_csv()])?;
    save_manifest(&manifest, &layout)?;
    println!("baselines: {} rows over {} portfolios", rows.len(), portfolios.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// stage: envelopes

#[derive(Serialize)]
struct EnvelopeCsvRow {
    source: String,
    portfolio_id: String,
    episode: String,
    baseline_id: String,
    episode_var95: f64,
    episode_cvar95: f64,
    episode_max_block: Option<f64>,
    base_var95: f64,
    base_cvar95: f64,
    var_mult: f64,
    cvar_mult: f64,
    /// Worst single block of the episode over the baseline VaR.
    max_block_mult: Option<f64>,
}

const ENVELOPE_HEADER: &str = "source,portfolio_id,episode,baseline_id,episode_var95,episode_cvar95,episode_max_block,base_var95,base_cvar95,var_mult,cvar_mult,max_block_mult";

pub fn cmd_envelopes(ctx: &StageCtx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let layout = Layout::new(&ctx.out);
    let mut manifest = load_manifest(&layout)?;
    let panel = load_prices(cfg)?;
    let portfolios: Vec<Portfolio> = build_portfolios(&panel, cfg.min_history_days)?
        .into_iter()
        .filter(|p| ctx.portfolios.keeps(&p.id))
        .collect();

    let episodes: [(&str, DateWindow); 2] =
        [("gfc", cfg.windows.crisis_gfc), ("covid", cfg.windows.crisis_covid)];
    let baselines_w: [(&str, DateWindow); 2] =
        [("calm", cfg.windows.calm), ("unconditional", cfg.windows.bootstrap)];

    let mut rows: Vec<EnvelopeCsvRow> = Vec::new();
    for p in &portfolios {
        // full-panel daily returns; block metrics subset by window
        let full = DateWindow {
            start: *panel.dates().first().expect("panel is non-empty"),
            end: *panel.dates().last().expect("panel is non-empty"),
        };
        let returns = panel
            .portfolio_returns(&p.weights, full)
            .map_err(|e| CliError::Numerical(format!("portfolio {}: {e}", p.id)))?;
        let dates: Vec<NaiveDate> = panel.dates()[1..].to_vec(); // returns start on day 2

        let metrics_for = |name: &str, w: &DateWindow| -> Result<WindowBlockMetrics, CliError> {
            window_block_metrics(&dates, &returns, w, cfg.horizon_days)
                .map_err(|e| CliError::Numerical(format!("{name} window for {}: {e}", p.id)))
        };
        let base_metrics: Vec<(&str, WindowBlockMetrics)> = baselines_w
            .iter()
            .map(|(n, w)| metrics_for(n, w).map(|m| (*n, m)))
            .collect::<Result<_, _>>()?;
        for (episode, ew) in &episodes {
            let em = metrics_for(episode, ew)?;
            for (baseline_id, bm) in &base_metrics {
                let env: CrisisEnvelope =
                    envelope(episode, baseline_id, em.var95, em.cvar95, bm.var95, bm.cvar95)
                        .map_err(|e| CliError::Numerical(e.to_string()))?;
                rows.push(EnvelopeCsvRow {
                    source: "panel".into(),
                    portfolio_id: p.id.clone(),
                    episode: env.episode,
                    baseline_id: env.baseline_id,
                    episode_var95: em.var95,
                    episode_cvar95: em.cvar95,
                    episode_max_block: Some(em.max_block_loss),
                    base_var95: bm.var95,
                    base_cvar95: bm.cvar95,
                    var_mult: env.var_mult,
                    cvar_mult: env.cvar_mult,
                    max_block_mult: Some(em.max_block_loss / bm.var95),
                });
            }
        }
    }

    // arithmetic mode over bundled per-window metrics, when provided
    if let Some(path) = &cfg.inputs.envelope_metrics_json {
        if !path.exists() {
            return Err(CliError::MissingArtifact(format!("envelope metrics {}", path.display())));
        }
        let fixture: EnvelopeMetricsFixture = read_json(path, "fixture inputs")?;
        for env in envelopes_from_metrics(&fixture).map_err(|e| CliError::Numerical(e.to_string()))? {
            let em = fixture.episodes[&env.episode];
            let bm = fixture.baselines[&env.baseline_id];
            rows.push(EnvelopeCsvRow {
                source: "bundled_metrics".into(),
                portfolio_id: "(bundled)".into(),
                episode: env.episode,
                baseline_id: env.baseline_id,
                episode_var95: em.var95,
                episode_cvar95: em.cvar95,
                episode_max_block: None,
                base_var95: bm.var95,
                base_cvar95: bm.cvar95,
                var_mult: env.var_mult,
                cvar_mult: env.cvar_mult,
                max_block_mult: None,
            });
        }
    }

    write_csv_or_header(&layout.envelopes_csv(), &rows, ENVELOPE_HEADER)?;
    record(&mut manifest, &layout, &[&layout.envelopes_csv()])?;
    save_manifest(&manifest, &layout)?;
    println!("envelopes: {} rows", rows.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// stage: diagnostics

#[derive(Serialize)]
struct DispersionByPromptRow {
    model: String,
    rag: bool,
    news: bool,
    mean_dispersion: f64,
    std_dispersion: f64,
    min_dispersion: f64,
    max_dispersion: f64,
    n_prompts: usize,
}

#[derive(Serialize)]
struct StabilityRow {
    country: String,
    rag: bool,
    news: bool,
    dispersion: f64,
    ci_low: f64,
    ci_high: f64,
    n_scenarios: usize,
}

#[derive(Serialize)]
struct AnovaCsvRow {
    effect: String,
    p_value_var: f64,
    partial_eta2_var: f64,
    p_value_cvar: f64,
    partial_eta2_cvar: f64,
}

#[derive(Serialize)]
struct BootCiRow {
    model: String,
    rag: bool,
    news: bool,
    mean_var_mult: f64,
    var_ci_low: f64,
    var_ci_high: f64,
    mean_cvar_mult: f64,
    cvar_ci_low: f64,
    cvar_ci_high: f64,
    n: usize,
}

#[derive(Serialize)]
struct MacroByCountryRow {
    country: String,
    gdp_mean: f64,
    gdp_std: f64,
    gdp_min: f64,
    gdp_max: f64,
    infl_mean: f64,
    infl_std: f64,
    infl_min: f64,
    infl_max: f64,
    rate_mean: f64,
    rate_std: f64,
    rate_min: f64,
    rate_max: f64,
    n: usize,
}

#[derive(Serialize)]
struct HeatmapRow {
    portfolio_id: String,
    country: String,
    rag: bool,
    news: bool,
    mean_var_mult_linear: f64,
    n: usize,
}

#[derive(Serialize)]
struct SeverityRow {
    scenario_hash: String,
    model: String,
    country: String,
    rag: bool,
    news: bool,
    prompt_variant: String,
    shock_l2: f64,
    lambda: f64,
    var_mult_linear: f64,
}

fn pairwise_distances(shocks: &[stresslab::model::MacroShock]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..shocks.len() {
        for j in i + 1..shocks.len() {
            let dg = shocks[i].gdp_growth - shocks[j].gdp_growth;
            let di = shocks[i].inflation - shocks[j].inflation;
            let dr = shocks[i].interest_rate - shocks[j].interest_rate;
            out.push((dg * dg + di * di + dr * dr).sqrt());
        }
    }
    out
}

fn bool_values(enabled: bool) -> &'static [bool] {
    if enabled {
        &[false, true]
    } else {
        &[false]
    }
}

pub fn cmd_diagnostics(ctx: &StageCtx) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let layout = Layout::new(&ctx.out);
    let mut manifest = load_manifest(&layout)?;

    let audited: Vec<AuditedScenario> = read_jsonl(&layout.scenarios_audited(), "audit")?;
    let reports_path = layout.risk_reports();
    if !reports_path.exists() {
        return Err(missing(&reports_path, "simulate"));
    }
    let mut reader = csv::Reader::from_path(&reports_path).map_err(|e| anyhow::anyhow!("{e}"))?;
    let risk_rows: Vec<RiskRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| anyhow::anyhow!("parsing {}: {e}", reports_path.display()))?;

    // LLM-generated accepted scenarios drive the scenario diagnostics;
    // deterministic benchmarks are pipeline anchors, not model output.
    let llm_accepted: Vec<&AuditedScenario> = audited
        .iter()
        .filter(|a| a.accepted && a.scenario.provider != "deterministic")
        .collect();
    let by_hash: BTreeMap<&str, &AuditedScenario> =
        audited.iter().map(|a| (a.scenario.scenario_hash.as_str(), a)).collect();

    // --- dispersion by prompt, aggregated per (model, rag, news)
    let mut dispersion_rows: Vec<DispersionByPromptRow> = Vec::new();
    let mut models: Vec<String> =
        llm_accepted.iter().map(|a| a.scenario.model.clone()).collect();
    models.sort();
    models.dedup();
    for model in &models {
        for &rag in bool_values(cfg.rag) {
            for &news in bool_values(cfg.use_news) {
                let mut per_variant: Vec<f64> = Vec::new();
                let mut variants: Vec<&str> = llm_accepted
                    .iter()
                    .filter(|a| {
                        a.scenario.model == *model
                            && a.scenario.rag == rag
                            && a.scenario.use_news == news
                    })
                    .map(|a| a.scenario.prompt_variant.as_str())
                    .collect();
                variants.sort_unstable();
                variants.dedup();
                for variant in variants {
                    let shocks: Vec<stresslab::model::MacroShock> = llm_accepted
                        .iter()
                        .filter(|a| {
                            a.scenario.model == *model
                                && a.scenario.rag == rag
                                && a.scenario.use_news == news
                                && a.scenario.prompt_variant == variant
                        })
                        .map(|a| a.shock)
                        .collect();
                    if shocks.len() >= 2 {
                        per_variant
                            .push(dispersion(&shocks).map_err(|e| CliError::Numerical(e.to_string()))?);
                    }
                }
                if per_variant.is_empty() {
                    continue;
                }
                let (mean, std) = mean_std(&per_variant);
                dispersion_rows.push(DispersionByPromptRow {
                    model: model.clone(),
                    rag,
                    news,
                    mean_dispersion: mean,
                    std_dispersion: std,
                    min_dispersion: per_variant.iter().cloned().fold(f64::INFINITY, f64::min),
                    max_dispersion: per_variant.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    n_prompts: per_variant.len(),
                });
            }
        }
    }
    write_csv_or_header(
        &layout.dispersion_by_prompt(),
        &dispersion_rows,
        "model,rag,news,mean_dispersion,std_dispersion,min_dispersion,max_dispersion,n_prompts",
    )?;

    // --- stability per (country, rag, news), QC-filtered
    let mut stability_stats: Vec<DispersionStat> = Vec::new();
    let mut stability_n: BTreeMap<String, usize> = BTreeMap::new();
    for country in {
        let mut c = cfg.countries.clone();
        c.sort();
        c
    } {
        for &rag in bool_values(cfg.rag) {
            for &news in bool_values(cfg.use_news) {
                let shocks: Vec<stresslab::model::MacroShock> = llm_accepted
                    .iter()
                    .filter(|a| {
                        a.scenario.country == country
                            && a.scenario.rag == rag
                            && a.scenario.use_news == news
                    })
                    .map(|a| a.shock)
                    .collect();
                if shocks.len() < 2 {
                    continue;
                }
                let value = dispersion(&shocks).map_err(|e| CliError::Numerical(e.to_string()))?;
                let distances = pairwise_distances(&shocks);
                let (ci_low, ci_high) = if distances.len() >= 2 {
                    let (_, lo, hi) = bootstrap_ci(&distances, cfg.ci_resamples, 0.95, cfg.seed)
                        .map_err(|e| CliError::Numerical(e.to_string()))?;
                    (lo, hi)
                } else {
                    (value, value)
                };
                let key = format!("{country}|rag={}|news={}", u8::from(rag), u8::from(news));
                stability_n.insert(key.clone(), shocks.len());
                stability_stats.push(DispersionStat { key, value, ci_low, ci_high, n: shocks.len() });
            }
        }
    }
    let (kept, removed) = qc_filter(stability_stats, 20.0);
    let stability_rows: Vec<StabilityRow> = kept
        .iter()
        .map(|s| {
            let parts: Vec<&str> = s.key.split('|').collect();
            StabilityRow {
                country: parts[0].to_string(),
                rag: parts[1] == "rag=1",
                news: parts[2] == "news=1",
                dispersion: s.value,
                ci_low: s.ci_low,
                ci_high: s.ci_high,
                n_scenarios: s.n,
            }
        })
        .collect();
    write_csv_or_header(
        &layout.stability_by_country_config(),
        &stability_rows,
        "country,rag,news,dispersion,ci_low,ci_high,n_scenarios",
    )?;
    write_json(&layout.qc_removed(), &removed)?;

    // --- ANOVA over linear-channel multiples
    let linear_rows: Vec<&RiskRow> = risk_rows.iter().filter(|r| r.channel == "linear").collect();
    let mut var_obs: Vec<AnovaObservation> = Vec::new();
    let mut cvar_obs: Vec<AnovaObservation> = Vec::new();
    for row in &linear_rows {
        let Some(a) = by_hash.get(row.scenario_hash.as_str()) else { continue };
        if a.scenario.provider == "deterministic" {
            continue;
        }
        let levels = vec![
            a.scenario.country.clone(),
            row.portfolio_id.clone(),
            a.scenario.prompt_variant.clone(),
            a.scenario.rag.to_string(),
            a.scenario.use_news.to_string(),
        ];
        var_obs.push(AnovaObservation { value: row.var_mult, levels: levels.clone() });
        cvar_obs.push(AnovaObservation { value: row.cvar_mult, levels });
    }
    let factor_names = ["country", "portfolio_id", "prompt_variant", "rag", "use_news"];
    let mut anova_rows: Vec<AnovaCsvRow> = Vec::new();
    if var_obs.len() >= 8 {
        let var_result = anova_eta2("var_mult", &factor_names, &var_obs)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let cvar_result = anova_eta2("cvar_mult", &factor_names, &cvar_obs)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        for (v, c) in var_result.iter().zip(&cvar_result) {
            anova_rows.push(AnovaCsvRow {
                effect: v.effect.clone(),
                p_value_var: v.p_value,
                partial_eta2_var: v.partial_eta2,
                p_value_cvar: c.p_value,
                partial_eta2_cvar: c.partial_eta2,
            });
        }
    } else {
        eprintln!("diagnostics: warning: too few linear-channel rows for ANOVA; writing header only");
    }
    write_csv_or_header(
        &layout.anova(),
        &anova_rows,
        "effect,p_value_var,partial_eta2_var,p_value_cvar,partial_eta2_cvar",
    )?;

    // --- fairness cards over the full factorial cell grid
    let portfolio_ids: Vec<String> = {
        let mut ids: Vec<String> = risk_rows.iter().map(|r| r.portfolio_id.clone()).collect();
        ids.sort();
        ids.dedup();
        if ids.is_empty() {
            vec!["A".to_string(), "B".to_string()]
        } else {
            ids
        }
    };
    let cells = build_fairness_cells(cfg, &llm_accepted, &risk_rows, &portfolio_ids);
    let cards: Vec<_> = portfolio_ids.iter().map(|p| fairness_card(p, &cells)).collect();
    write_csv_or_header(
        &layout.fairness(),
        &cards,
        "portfolio,cells_total,rows_with_outcome,flips,outliers_z,outliers_mad,gap_var_linear,gap_var_nonlinear",
    )?;

    // --- bootstrap CIs for linear multiples per (model, rag, news)
    let mut ci_rows: Vec<BootCiRow> = Vec::new();
    let mut groups: BTreeMap<(String, bool, bool), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in &linear_rows {
        let Some(a) = by_hash.get(row.scenario_hash.as_str()) else { continue };
        if a.scenario.provider == "deterministic" {
            continue;
        }
        let entry = groups
            .entry((a.scenario.model.clone(), a.scenario.rag, a.scenario.use_news))
            .or_default();
        entry.0.push(row.var_mult);
        entry.1.push(row.cvar_mult);
    }
    for ((model, rag, news), (vars, cvars)) in &groups {
        if vars.len() < 2 {
            continue;
        }
        let (mv, vlo, vhi) = bootstrap_ci(vars, cfg.ci_resamples, 0.95, cfg.seed)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let (mc, clo, chi) = bootstrap_ci(cvars, cfg.ci_resamples, 0.95, cfg.seed)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        ci_rows.push(BootCiRow {
            model: model.clone(),
            rag: *rag,
            news: *news,
            mean_var_mult: mv,
            var_ci_low: vlo,
            var_ci_high: vhi,
            mean_cvar_mult: mc,
            cvar_ci_low: clo,
            cvar_ci_high: chi,
            n: vars.len(),
        });
    }
    write_csv_or_header(
        &layout.bootstrap_cis(),
        &ci_rows,
        "model,rag,news,mean_var_mult,var_ci_low,var_ci_high,mean_cvar_mult,cvar_ci_low,cvar_ci_high,n",
    )?;

    // --- macro shock summary per country
    let mut macro_rows: Vec<MacroByCountryRow> = Vec::new();
    for country in {
        let mut c = cfg.countries.clone();
        c.sort();
        c
    } {
        let shocks: Vec<stresslab::model::MacroShock> = llm_accepted
            .iter()
            .filter(|a| a.scenario.country == country)
            .map(|a| a.shock)
            .collect();
        if shocks.is_empty() {
            continue;
        }
        let col = |f: fn(&stresslab::model::MacroShock) -> f64| -> Vec<f64> {
            shocks.iter().map(f).collect()
        };
        let stats_of = |v: &[f64]| -> (f64, f64, f64, f64) {
            let (mean, std) = mean_std(v);
            (
                mean,
                std,
                v.iter().cloned().fold(f64::INFINITY, f64::min),
                v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            )
        };
        let (gm, gs, gmin, gmax) = stats_of(&col(|s| s.gdp_growth));
        let (im, is, imin, imax) = stats_of(&col(|s| s.inflation));
        let (rm, rs, rmin, rmax) = stats_of(&col(|s| s.interest_rate));
        macro_rows.push(MacroByCountryRow {
            country,
            gdp_mean: gm,
            gdp_std: gs,
            gdp_min: gmin,
            gdp_max: gmax,
            infl_mean: im,
            infl_std: is,
            infl_min: imin,
            infl_max: imax,
            rate_mean: rm,
            rate_std: rs,
            rate_min: rmin,
            rate_max: rmax,
            n: shocks.len(),
        });
    }
    write_csv_or_header(
        &layout.macro_by_country(),
        &macro_rows,
        "country,gdp_mean,gdp_std,gdp_min,gdp_max,infl_mean,infl_std,infl_min,infl_max,rate_mean,rate_std,rate_min,rate_max,n",
    )?;

    // --- heatmap table: mean linear VaR multiple per (portfolio, country, config)
    let mut heatmap_rows: Vec<HeatmapRow> = Vec::new();
    for pid in &portfolio_ids {
        for country in {
            let mut c = cfg.countries.clone();
            c.sort();
            c
        } {
            for &rag in bool_values(cfg.rag) {
                for &news in bool_values(cfg.use_news) {
                    let values: Vec<f64> = linear_rows
                        .iter()
                        .filter(|r| {
                            r.portfolio_id == *pid
                                && by_hash.get(r.scenario_hash.as_str()).is_some_and(|a| {
                                    a.scenario.provider != "deterministic"
                                        && a.scenario.country == country
                                        && a.scenario.rag == rag
                                        && a.scenario.use_news == news
                                })
                        })
                        .map(|r| r.var_mult)
                        .collect();
                    if values.is_empty() {
                        continue;
                    }
                    heatmap_rows.push(HeatmapRow {
                        portfolio_id: pid.clone(),
                        country: country.clone(),
                        rag,
                        news,
                        mean_var_mult_linear: stresslab::stats::mean(&values),
                        n: values.len(),
                    });
                }
            }
        }
    }
    write_csv_or_header(
        &layout.heatmap_csv(),
        &heatmap_rows,
        "portfolio_id,country,rag,news,mean_var_mult_linear,n",
    )?;

    // --- per-scenario severity vs linear multiple (portfolio A)
    let mut severity_rows: Vec<SeverityRow> = Vec::new();
    for row in &linear_rows {
        if row.portfolio_id != portfolio_ids[0] {
            continue;
        }
        let Some(a) = by_hash.get(row.scenario_hash.as_str()) else { continue };
        if a.scenario.provider == "deterministic" {
            continue;
        }
        let s = &a.shock;
        severity_rows.push(SeverityRow {
            scenario_hash: row.scenario_hash.chars().take(12).collect(),
            model: a.scenario.model.clone(),
            country: a.scenario.country.clone(),
            rag: a.scenario.rag,
            news: a.scenario.use_news,
            prompt_variant: a.scenario.prompt_variant.clone(),
            shock_l2: (s.gdp_growth * s.gdp_growth
                + s.inflation * s.inflation
                + s.interest_rate * s.interest_rate)
                .sqrt(),
            lambda: a.scenario.lambda,
            var_mult_linear: row.var_mult,
        });
    }
    write_csv_or_header(
        &layout.severity_scatter_csv(),
        &severity_rows,
        "scenario_hash,model,country,rag,news,prompt_variant,shock_l2,lambda,var_mult_linear",
    )?;

    record(
        &mut manifest,
        &layout,
        &[
            &layout.dispersion_by_prompt(),
            &layout.stability_by_country_config(),
            &layout.qc_removed(),
            &layout.anova(),
            &layout.fairness(),
            &layout.bootstrap_cis(),
            &layout.macro_by_country(),
            &layout.heatmap_csv(),
            &layout.severity_scatter_csv(),
        ],
    )?;
    save_manifest(&manifest, &layout)?;
    println!(
        "diagnostics: {} dispersion rows, {} stability rows ({} removed by QC), {} ANOVA effects, {} fairness cards",
        dispersion_rows.len(),
        stability_rows.len(),
        removed.len(),
        anova_rows.len(),
        cards.len()
    );
    Ok(())
}

/// Build the full factorial (country x variant x rag x news) cell grid per
/// portfolio, averaging linear/nonlinear VaR multiples where outcomes exist.
/// Cells with no accepted scenario stay in the grid with empty metrics.
pub fn build_fairness_cells(
    cfg: &RunConfig,
    llm_accepted: &[&AuditedScenario],
    risk_rows: &[RiskRow],
    portfolio_ids: &[String],
) -> Vec<FairnessCell> {
    let mut countries = cfg.countries.clone();
    countries.sort();
    let mut variants = cfg.prompt_variants.clone();
    variants.sort();

    // (portfolio, country, variant, rag, news) -> per-channel multiples
    let mut lin: BTreeMap<(String, String, String, bool, bool), Vec<f64>> = BTreeMap::new();
    let mut nonlin: BTreeMap<(String, String, String, bool, bool), Vec<f64>> = BTreeMap::new();
    let by_hash: BTreeMap<&str, &&AuditedScenario> =
        llm_accepted.iter().map(|a| (a.scenario.scenario_hash.as_str(), a)).collect();
    for row in risk_rows {
        let Some(a) = by_hash.get(row.scenario_hash.as_str()) else { continue };
        let key = (
            row.portfolio_id.clone(),
            a.scenario.country.clone(),
            a.scenario.prompt_variant.clone(),
            a.scenario.rag,
            a.scenario.use_news,
        );
        match row.channel.as_str() {
            "linear" => lin.entry(key).or_default().push(row.var_mult),
            "nonlinear" => nonlin.entry(key).or_default().push(row.var_mult),
            _ => {}
        }
    }

    let mut cells = Vec::new();
    for pid in portfolio_ids {
        for country in &countries {
            for variant in &variants {
                for &rag in bool_values(cfg.rag) {
                    for &news in bool_values(cfg.use_news) {
                        let key =
                            (pid.clone(), country.clone(), variant.clone(), rag, news);
                        let mean_of = |m: &BTreeMap<_, Vec<f64>>| {
                            m.get(&key).map(|v: &Vec<f64>| stresslab::stats::mean(v))
                        };
                        cells.push(FairnessCell {
                            portfolio_id: pid.clone(),
                            country: country.clone(),
                            prompt_variant: variant.clone(),
                            rag,
                            use_news: news,
                            var_mult_linear: mean_of(&lin),
                            var_mult_nonlinear: mean_of(&nonlin),
                        });
                    }
                }
            }
        }
    }
    cells
}

// ---------------------------------------------------------------------------
// stage: report

pub fn cmd_report(ctx: &StageCtx) -> Result<(), CliError> {
    let layout = Layout::new(&ctx.out);
    let mut manifest = load_manifest(&layout)?;
    // Render what exists and register it before reporting missing inputs, so a
    // partial report still leaves a consistent manifest behind.
    let outcome = crate::figures::render_report(&layout, &mut manifest);
    save_manifest(&manifest, &layout)?;
    outcome
}

// ---------------------------------------------------------------------------
// stage: verify

pub fn cmd_verify(ctx: &StageCtx, against: Option<&Path>) -> Result<(), CliError> {
    let layout = Layout::new(&ctx.out);
    let manifest = load_manifest(&layout)?;

    if let Some(other_path) = against {
        if !other_path.exists() {
            return Err(CliError::MissingArtifact(format!("manifest {}", other_path.display())));
        }
        let other = RunManifest::load(other_path)
            .map_err(|e| anyhow::anyhow!("loading {}: {e}", other_path.display()))?;
        let report = stresslab::provenance::verify_replay(&manifest, &other)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        for m in &report.mismatched {
            eprintln!("verify: MISMATCH {} left={} right={}", m.key, m.left, m.right);
        }
        for k in &report.only_left {
            eprintln!("verify: only in this run: {k}");
        }
        for k in &report.only_right {
            eprintln!("verify: only in other run: {k}");
        }
        if report.all_match() {
            println!("verify: all {} entries match (volatile section excluded)", report.matched.len());
            Ok(())
        } else {
            Err(CliError::Numerical(format!(
                "replay mismatch: {} mismatched, {} missing here, {} missing there",
                report.mismatched.len(),
                report.only_left.len(),
                report.only_right.len()
            )))
        }
    } else {
        // disk mode: recompute every registered digest
        let mut mismatches = Vec::new();
        for (key, entry) in &manifest.stable.entries {
            let path = layout.root().join(key);
            if !path.exists() {
                return Err(CliError::MissingArtifact(format!("{key} (registered in manifest)")));
            }
            let on_disk = hash_artifact(&path).map_err(|e| anyhow::anyhow!("{e}"))?;
            if on_disk.sha256 != entry.sha256 || on_disk.row_count != entry.row_count {
                mismatches.push(key.clone());
                eprintln!("verify: DIGEST CHANGED {key}");
            }
        }
        let unregistered = manifest.unregistered_outputs(layout.root(), MANIFEST);
        for path in &unregistered {
            eprintln!("verify: UNREGISTERED output {}", path.display());
        }
        if mismatches.is_empty() && unregistered.is_empty() {
            println!("verify: all {} entries match the files on disk", manifest.stable.entries.len());
            Ok(())
        } else {
            Err(CliError::Numerical(format!(
                "disk verification failed: {} changed digests, {} unregistered outputs",
                mismatches.len(),
                unregistered.len()
            )))
        }
    }
}
