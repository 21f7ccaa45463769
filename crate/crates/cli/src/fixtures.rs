//! Deterministic fixture builder. Produces the complete frozen input set the
//! pipeline replays offline: a synthetic multi-asset price panel with two
//! crisis episodes, a G7 macro-baseline vintage, raw headline feeds, bundled
//! crisis-window metrics, run configs, and a frozen generation-response file
//! keyed by the same (prompt_hash, ctx_hash) pairs the live pipeline computes.
//!
//! Everything is a pure function of hard-coded seeds: rebuilding the fixtures
//! reproduces every file byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use sha_seed::seed_from_text;

use stresslab::ingest::{baseline_for, load_weo_baselines, CountryBaseline};
use stresslab::llm::{build_prompt, PromptInputs, PROMPT_VARIANTS};
use stresslab::model::load_config;
use stresslab::retrieval::HashEmbedder;

use crate::stages::{build_grid_context, build_profile_index, build_snapshot};
use crate::CliError;

/// Tiny local helper module so the seed derivation is obvious in one place.
mod sha_seed {
    use sha2::{Digest, Sha256};

    /// Stable 64-bit seed from a label: first 8 bytes of SHA-256, big-endian.
    pub fn seed_from_text(label: &str) -> u64 {
        let digest = Sha256::digest(label.as_bytes());
        u64::from_be_bytes(digest[0..8].try_into().expect("8 bytes"))
    }
}

pub const G7: [&str; 7] = [
    "Canada",
    "France",
    "Germany",
    "Italy",
    "Japan",
    "United Kingdom",
    "United States",
];

/// What was written, for the builder's log line.
#[derive(Debug, Default)]
pub struct FixtureSummary {
    pub price_rows: usize,
    pub headline_files: usize,
    pub response_lines: usize,
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("{e}"))?;
    }
    fs::write(path, text).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()).into())
}

// ---------------------------------------------------------------------------
// macro baselines

fn weo_json() -> String {
    // Alphabetical country order, matching the sorted order the ingest stage
    // writes, so index construction sees the same entry order either way.
    let rows = [
        ("Canada", 1.1, 1.9, 4.25),
        ("France", 0.8, 2.1, 3.65),
        ("Germany", 0.6, 2.3, 3.65),
        ("Italy", 0.7, 1.8, 3.65),
        ("Japan", 0.9, 2.2, 0.50),
        ("United Kingdom", 1.0, 2.6, 4.75),
        ("United States", 1.8, 2.4, 4.50),
    ];
    let mut out = String::from("[\n");
    for (i, (country, gdp, infl, rate)) in rows.iter().enumerate() {
        let _ = write!(
            out,
            "  {{\"country\": \"{country}\", \"gdp_growth\": {gdp}, \"inflation\": {infl}, \
             \"interest_rate\": {rate}, \"vintage\": \"fixture-2025-04\"}}"
        );
        out.push_str(if i + 1 < rows.len() { ",\n" } else { "\n" });
    }
    out.push_str("]\n");
    out
}

// ---------------------------------------------------------------------------
// price panel

struct TickerSpec {
    name: &'static str,
    start: NaiveDate,
    first_price: f64,
    /// Loadings on the three latent factors (equity, rates, gold).
    beta: [f64; 3],
    idio_vol: f64,
    drift: f64,
}

fn d(y: i32, m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, day).expect("valid fixture date")
}

fn ticker_specs() -> Vec<TickerSpec> {
    let start = d(2000, 1, 3);
    let spec = |name, start, first_price, beta, idio_vol, drift| TickerSpec {
        name,
        start,
        first_price,
        beta,
        idio_vol,
        drift,
    };
    vec![
        spec("SPY", start, 140.0, [1.00, -0.08, 0.00], 0.0015, 0.00030),
        spec("IEF", start, 80.0, [-0.06, 1.00, 0.00], 0.0012, 0.00012),
        spec("GLD", start, 27.0, [0.02, 0.10, 1.00], 0.0020, 0.00020),
        spec("XLB", start, 22.0, [1.05, -0.05, 0.08], 0.0060, 0.00024),
        spec("XLE", start, 28.0, [0.95, -0.02, 0.22], 0.0070, 0.00022),
        spec("XLF", start, 24.0, [1.25, -0.10, -0.02], 0.0062, 0.00020),
        spec("XLI", start, 26.0, [1.05, -0.06, 0.02], 0.0055, 0.00026),
        spec("XLK", start, 48.0, [1.20, -0.08, -0.04], 0.0068, 0.00034),
        spec("XLP", start, 25.0, [0.62, 0.08, 0.02], 0.0045, 0.00022),
        spec("XLU", start, 30.0, [0.55, 0.30, 0.03], 0.0050, 0.00020),
        spec("XLV", start, 29.0, [0.70, 0.04, 0.00], 0.0048, 0.00026),
        spec("XLY", start, 27.0, [1.10, -0.07, -0.02], 0.0058, 0.00028),
        // Late listing: too little history for the factor fit, so the loader
        // keeps it in the panel but the active-history rule excludes it.
        spec("XLRE", d(2018, 1, 2), 30.0, [0.85, 0.35, 0.04], 0.0055, 0.00020),
    ]
}

/// Volatility multiplier and extra equity-factor drift for a date: two crisis
/// episodes with shoulders, one calm stretch, one moderate 2022 selloff.
fn regime(date: NaiveDate) -> (f64, f64, f64) {
    let in_range = |a: NaiveDate, b: NaiveDate| date >= a && date <= b;
    // (vol multiplier, equity drift shift, rates drift shift)
    if in_range(d(2008, 9, 2), d(2009, 3, 31)) {
        (3.2, -0.0045, 0.0004)
    } else if in_range(d(2008, 1, 2), d(2008, 9, 1)) {
        (1.8, -0.0010, 0.0002)
    } else if in_range(d(2009, 4, 1), d(2009, 12, 31)) {
        (1.5, 0.0012, 0.0)
    } else if in_range(d(2020, 2, 20), d(2020, 4, 15)) {
        (3.8, -0.0060, 0.0006)
    } else if in_range(d(2020, 4, 16), d(2020, 12, 31)) {
        (1.6, 0.0014, 0.0)
    } else if in_range(d(2012, 1, 2), d(2019, 12, 31)) {
        (0.85, 0.0, 0.0)
    } else if in_range(d(2022, 1, 3), d(2022, 12, 30)) {
        (1.35, -0.0008, -0.0006)
    } else {
        (1.0, 0.0, 0.0)
    }
}

fn weekdays(from: NaiveDate, to: NaiveDate) -> Vec<NaiveDate> {
    let mut out = Vec::new();
    let mut day = from;
    while day <= to {
        if !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(day);
        }
        day = day.succ_opt().expect("date range is bounded");
    }
    out
}

fn prices_csv() -> (String, usize) {
    let specs = ticker_specs();
    let dates = weekdays(d(2000, 1, 3), d(2025, 6, 30));
    let mut rng = ChaCha12Rng::seed_from_u64(seed_from_text("fixture-prices-v1"));
    let normal = StandardNormal;
    const FACTOR_VOL: [f64; 3] = [0.0105, 0.0042, 0.0092];

    let mut prices: Vec<f64> = specs.iter().map(|s| s.first_price).collect();
    let mut out = String::with_capacity(2 << 21);
    out.push_str("date,ticker,adj_close\n");
    let mut rows = 0usize;

    for (di, date) in dates.iter().enumerate() {
        let (mult, eq_shift, rt_shift) = regime(*date);
        // Rates and gold react to crises much less than equities do.
        let scale = [
            mult,
            1.0 + 0.35 * (mult - 1.0),
            1.0 + 0.25 * (mult - 1.0),
        ];
        let mut factors = [0.0f64; 3];
        for k in 0..3 {
            let z: f64 = normal.sample(&mut rng);
            factors[k] = FACTOR_VOL[k] * scale[k] * z;
        }
        factors[0] += eq_shift;
        factors[1] += rt_shift;
        if mult >= 2.5 {
            factors[2] += 0.0008; // flight to safety
        }

        for (ti, spec) in specs.iter().enumerate() {
            // Draw idiosyncratic noise unconditionally so the random stream
            // does not depend on listing dates.
            let z: f64 = normal.sample(&mut rng);
            if *date < spec.start {
                continue;
            }
            if *date > spec.start && di > 0 {
                let mut r = spec.drift + spec.idio_vol * z;
                for k in 0..3 {
                    r += spec.beta[k] * factors[k];
                }
                prices[ti] *= 1.0 + r.max(-0.45);
            }
            let _ = writeln!(out, "{},{},{:.4}", date.format("%Y-%m-%d"), spec.name, prices[ti]);
            rows += 1;
        }
    }
    (out, rows)
}

// ---------------------------------------------------------------------------
// headlines

const HEADLINE_THEMES: [&str; 20] = [
    "factory orders pull back as credit conditions tighten",
    "housing starts slide for a third straight month",
    "central bank survey flags rising refinancing stress",
    "exporters warn of shrinking overseas order books",
    "bank lending standards tighten on commercial property",
    "services activity slows as households cut spending",
    "wage settlements outpace productivity gains",
    "energy import bill widens the trade deficit",
    "small business insolvencies climb to a decade high",
    "bond yields jump on heavy government issuance",
    "consumer confidence drops to a two-year low",
    "manufacturers report longer supplier delivery delays",
    "retail sales stall despite holiday discounting",
    "construction backlog thins as projects are shelved",
    "labor market cools with vacancies falling sharply",
    "food prices accelerate on poor harvest yields",
    "equity volatility gauge spikes on growth fears",
    "regulator reviews leverage at nonbank lenders",
    "pension funds trim allocations to illiquid assets",
    "current account gap draws rating agency scrutiny",
];

fn headline_count(country: &str) -> usize {
    match country {
        "Canada" => 58,
        "France" => 63,
        "Germany" => 55,
        // Deliberately thin feed: the snapshot pads it to its fixed row count.
        "Italy" => 12,
        "Japan" => 70,
        "United Kingdom" => 52,
        "United States" => 66,
        _ => 40,
    }
}

/// Raw feed for one country: epoch-second timestamps spread across the weeks
/// before the retrieval date, a couple of exact duplicates, titles cycling
/// through the theme list.
pub fn raw_headlines(country: &str) -> Vec<(i64, String)> {
    let n = headline_count(country);
    let base = 1_755_475_200i64; // 2025-08-18T00:00:00Z
    let mut out = Vec::with_capacity(n + 2);
    for i in 0..n {
        let theme = HEADLINE_THEMES[i % HEADLINE_THEMES.len()];
        let title = if i < HEADLINE_THEMES.len() {
            format!("{country} {theme}")
        } else {
            format!("{country} {theme}, week {}", i / HEADLINE_THEMES.len() + 1)
        };
        out.push((base + i as i64 * 50_000, title));
    }
    // Exact duplicates exercise snapshot deduplication.
    if n >= 2 {
        out.push((base + 1_000_000, format!("{country} {}", HEADLINE_THEMES[0])));
        out.push((base + 2_000_000, format!("{country} {}", HEADLINE_THEMES[1])));
    }
    out
}

fn headlines_json(country: &str) -> String {
    let mut out = String::from("[\n");
    let rows = raw_headlines(country);
    for (i, (ts, title)) in rows.iter().enumerate() {
        let _ = write!(
            out,
            "  {{\"published_at\": {ts}, \"title\": {}}}",
            serde_json::to_string(title).expect("title escapes")
        );
        out.push_str(if i + 1 < rows.len() { ",\n" } else { "\n" });
    }
    out.push_str("]\n");
    out
}

// ---------------------------------------------------------------------------
// bundled crisis-window metrics

fn envelope_metrics_json() -> String {
    concat!(
        "{\n",
        "  \"episodes\": {\n",
        "    \"gfc\": {\"var95\": 0.1698, \"cvar95\": 0.19313},\n",
        "    \"covid\": {\"var95\": 0.048393, \"cvar95\": 0.048608}\n",
        "  },\n",
        "  \"baselines\": {\n",
        "    \"calm_2012_2019\": {\"var95\": 0.0283, \"cvar95\": 0.0434},\n",
        "    \"unconditional_2000_2025\": {\"var95\": 0.0491, \"cvar95\": 0.0932}\n",
        "  }\n",
        "}\n"
    )
    .to_string()
}

// ---------------------------------------------------------------------------
// run configs

fn config_json(countries: &[&str], variants: &[&str], n_paths: usize, resamples: (usize, usize)) -> String {
    let countries_json = serde_json::to_string(countries).expect("countries");
    let variants_json = serde_json::to_string(variants).expect("variants");
    format!(
        "{{\n  \"countries\": {countries_json},\n  \"model_id\": \"fixture-scenario-writer\",\n  \
         \"model_version\": \"2025-09\",\n  \"rag\": true,\n  \"use_news\": true,\n  \
         \"prompt_variants\": {variants_json},\n  \"n_paths\": {n_paths},\n  \"seed\": 42,\n  \
         \"bootstrap_resamples\": {},\n  \"ci_resamples\": {},\n  \
         \"inputs\": {{\n    \"prices_csv\": \"prices.csv\",\n    \"weo_json\": \"weo.json\",\n    \
         \"headlines_dir\": \"headlines\",\n    \"responses_jsonl\": \"responses.jsonl\",\n    \
         \"envelope_metrics_json\": \"envelope_metrics.json\"\n  }}\n}}\n",
        resamples.0, resamples.1
    )
}

// ---------------------------------------------------------------------------
// frozen generation responses

/// Variant families steer the sign pattern of the generated shock.
fn variant_family(variant: &str) -> &'static str {
    const INFLATIONARY: [&str; 7] = [
        "v02_energy_shock",
        "v06_fx_depreciation",
        "v11_supply_chain_snap",
        "v15_inflation_persistence",
        "v16_wage_price_loop",
        "v24_food_price_spike",
        "v30_stagflation_redux",
    ];
    const DEFLATIONARY: [&str; 4] = [
        "v03_housing_correction",
        "v14_demand_collapse",
        "v26_tourism_collapse",
        "v07_trade_fragmentation",
    ];
    if INFLATIONARY.contains(&variant) {
        "inflationary"
    } else if DEFLATIONARY.contains(&variant) {
        "deflationary"
    } else {
        "mixed"
    }
}

fn sectors_for(family: &str, pick: usize) -> [&'static str; 3] {
    const TABLES: [[&'static str; 3]; 6] = [
        ["banks", "real estate", "consumer durables"],
        ["manufacturing", "transport", "retail"],
        ["energy-intensive industry", "utilities", "households"],
        ["construction", "regional lenders", "auto finance"],
        ["exporters", "capital goods", "logistics"],
        ["insurance", "pension funds", "small business lending"],
    ];
    let offset = match family {
        "inflationary" => 2,
        "deflationary" => 0,
        _ => 4,
    };
    TABLES[(offset + pick) % TABLES.len()]
}

/// The one grid cell whose frozen response is deliberately unparseable.
pub const MALFORMED_CELL: (&str, bool, bool, &str) = ("Italy", true, true, "v13_sovereign_spiral");

/// Cells frozen with out-of-band or incoherent scenarios; the audit stage is
/// expected to reject every one of them.
pub const REJECT_CELLS: [(&str, bool, bool, &str); 4] = [
    ("Japan", false, false, "v07_trade_fragmentation"),
    ("France", true, false, "v19_asset_bubble_burst"),
    ("United States", false, true, "v22_cyber_disruption"),
    ("Germany", true, true, "v25_commodity_price_crash"),
];

fn scenario_json(
    country: &str,
    title: &str,
    gdp_level: f64,
    infl_level: f64,
    rate_level: f64,
    rationale: &str,
    sectors: &[&str],
) -> String {
    let sectors_json = serde_json::to_string(sectors).expect("sectors");
    format!(
        "{{\"country\": {}, \"title\": {}, \"gdp_growth\": {gdp_level:.2}, \"inflation\": {infl_level:.2}, \
         \"interest_rate\": {rate_level:.2}, \"rationale\": {}, \"risk_sectors\": {sectors_json}}}",
        serde_json::to_string(country).expect("country"),
        serde_json::to_string(title).expect("title"),
        serde_json::to_string(rationale).expect("rationale"),
    )
}

/// Compose the frozen response text for one grid cell.
pub fn respond(
    country: &str,
    baseline: &CountryBaseline,
    variant: &str,
    rag: bool,
    news: bool,
) -> String {
    let cell = (country, rag, news, variant);
    if cell == MALFORMED_CELL {
        return format!(
            "The sovereign refinancing picture for {country} is severe.\n\
             {{\"country\": \"{country}\", \"title\": \"Unterminated object"
        );
    }
    if cell == REJECT_CELLS[0] {
        // GDP shock beyond the +-10pp sanity bound.
        let body = scenario_json(
            country,
            "Total trade rupture collapses output",
            baseline.gdp_growth - 11.0,
            baseline.inflation + 0.8,
            baseline.interest_rate + 0.5,
            "A complete rupture of trade relationships halts export production outright, and the \
             resulting contraction cascades through supplier networks, employment, and investment \
             until activity across the economy falls at a pace without any historical precedent, \
             overwhelming every fiscal and monetary stabilizer available to the authorities.",
            &["exporters", "shipping", "machinery"],
        );
        return format!("Scenario follows.\n```json\n{body}\n```");
    }
    if cell == REJECT_CELLS[1] {
        // Implied policy-rate level above the 15% ceiling.
        let body = scenario_json(
            country,
            "Bubble burst forces emergency rate spiral",
            baseline.gdp_growth - 3.0,
            baseline.inflation + 1.2,
            16.5,
            "The bursting asset bubble triggers capital flight, and policymakers respond with \
             successive emergency hikes that push the policy rate to levels never observed in the \
             euro era, compounding the downturn as refinancing costs crush leveraged balance \
             sheets across property, banking, and corporate credit markets alike.",
            &["banks", "real estate", "levered funds"],
        );
        return format!("```json\n{body}\n```");
    }
    if cell == REJECT_CELLS[2] {
        // Mild, incoherent drift: positive growth with opposite-signed
        // inflation and rates, a thin rationale, one sector. Scores below the
        // acceptance threshold without tripping the hard gate.
        let body = scenario_json(
            country,
            "Brief outage, quick recovery",
            baseline.gdp_growth + 0.5,
            baseline.inflation - 0.8,
            baseline.interest_rate + 0.6,
            "A short outage dents activity briefly before systems recover within weeks.",
            &["software"],
        );
        return format!("{body}");
    }
    if cell == REJECT_CELLS[3] {
        // Deep contraction with disinflation yet hikes, with no recognized
        // justification wording: the contradiction rule rejects it.
        let body = scenario_json(
            country,
            "Commodity crash with procyclical hikes",
            baseline.gdp_growth - 3.5,
            baseline.inflation - 1.0,
            baseline.interest_rate + 1.5,
            "Collapsing commodity receipts drag industrial output into a deep contraction while \
             price pressures fade quickly, yet the central bank nonetheless raises rates into the \
             slump, tightening financial conditions further and deepening losses across mining \
             supply chains, freight operators, and the regional banks that finance them.",
            &["mining", "freight", "regional banks"],
        );
        return format!("Here is the stress case.\n```json\n{body}\n```");
    }

    // Regular cell: a plausible severe scenario with deterministic variety.
    let mut rng = ChaCha12Rng::seed_from_u64(seed_from_text(&format!(
        "fixture-cell|{country}|{variant}|rag={}|news={}",
        u8::from(rag),
        u8::from(news)
    )));
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);

    let family = variant_family(variant);
    let severe = variant == "v01_baseline_severe" || variant == "v10_contagion" || variant == "v13_sovereign_spiral";
    let gdp_base = if severe { 3.4 + u(0.0, 1.8) } else { 1.8 + u(0.0, 2.4) };
    // Configuration nudges: retrieval context deepens the contraction a touch,
    // headlines push the inflation read up a touch. These give the grid
    // dimensions real, measurable effects.
    let gdp_delta = -(gdp_base + if rag { 0.30 } else { 0.0 });
    let news_shift = if news { 0.25 } else { 0.0 };
    let (infl_delta, rate_delta) = match family {
        "inflationary" => (1.2 + u(0.0, 2.0) + news_shift, 0.75 + u(0.0, 1.5)),
        "deflationary" => (-(0.6 + u(0.0, 1.2)) + news_shift, -(0.75 + u(0.0, 1.2))),
        _ => (0.3 + u(0.0, 1.2) + news_shift, 0.25 + u(0.0, 1.5)),
    };

    let gdp_level = baseline.gdp_growth + gdp_delta;
    let infl_level = baseline.inflation + infl_delta;
    let rate_level = (baseline.interest_rate + rate_delta).clamp(-0.4, 14.5);

    let theme_words: String = variant[4..].replace('_', " ");
    let title = format!("{theme_words} squeeze drives a {country} downturn");
    let sectors = sectors_for(family, usize::from(rag) * 2 + usize::from(news));
    let crisis_word = if severe { "crisis dynamics and contagion across funding markets" } else { "broad financial stress" };
    let direction = match family {
        "inflationary" => "price pressures stay stubbornly high, forcing policy to tighten even as demand weakens",
        "deflationary" => "demand collapses faster than supply, dragging prices down and pulling policy toward deep cuts",
        _ => "activity contracts while price pressures drift up moderately, leaving policy tighter for longer",
    };
    let rationale = format!(
        "A {theme_words} shock hits {country} over the coming quarters: {direction}. Output slides \
         into recession as tightening credit conditions, weaker hiring, and deteriorating sentiment \
         reinforce the downturn, and {crisis_word} amplifies losses. The pressure concentrates in \
         {}, {}, and {}, where leverage and refinancing needs are largest.",
        sectors[0], sectors[1], sectors[2]
    );

    let body = scenario_json(country, &title, gdp_level, infl_level, rate_level, &rationale, &sectors);
    if rng.random_range(0..2) == 0 {
        format!("Given the configured macro baseline, a coherent severe-but-plausible case:\n```json\n{body}\n```\nEnd of scenario.")
    } else {
        body
    }
}

// ---------------------------------------------------------------------------
// assembly

fn dims(enabled: bool) -> Vec<bool> {
    if enabled {
        vec![false, true]
    } else {
        vec![false]
    }
}

/// Build every fixture file under `dir`.
pub fn build_all(dir: &Path) -> Result<FixtureSummary, CliError> {
    let mut summary = FixtureSummary::default();

    write_text(&dir.join("weo.json"), &weo_json())?;
    let (prices, price_rows) = prices_csv();
    write_text(&dir.join("prices.csv"), &prices)?;
    summary.price_rows = price_rows;

    for country in G7 {
        let slug = crate::layout::slug(country);
        write_text(&dir.join("headlines").join(format!("{slug}.json")), &headlines_json(country))?;
        summary.headline_files += 1;
    }

    write_text(&dir.join("envelope_metrics.json"), &envelope_metrics_json())?;

    let all_variants: Vec<&str> = PROMPT_VARIANTS.to_vec();
    write_text(&dir.join("config_g7.json"), &config_json(&G7, &all_variants, 2000, (50_000, 10_000)))?;
    write_text(
        &dir.join("config_desk.json"),
        &config_json(
            &["Canada", "Japan"],
            &PROMPT_VARIANTS[0..5],
            2000,
            (20_000, 2_000),
        ),
    )?;

    // Frozen responses: compute the exact (prompt_hash, ctx_hash) pairs the
    // pipeline will request, using the just-written inputs end to end.
    let cfg = load_config(&dir.join("config_g7.json")).map_err(CliError::from)?;
    let baselines = load_weo_baselines(&cfg.inputs.weo_json)
        .map_err(|e| CliError::Config(format!("fixture weo: {e}")))?;
    let embedder = HashEmbedder::default();
    let index = build_profile_index(&baselines, &embedder, cfg.seed)?;
    let mut snapshots = BTreeMap::new();
    for country in &cfg.countries {
        let raw = raw_headlines(country);
        snapshots.insert(country.clone(), build_snapshot(country, &cfg.retrieval_date, &raw)?);
    }
    let ctx = build_grid_context(&cfg, &baselines, &index, &snapshots, &embedder)?;

    let mut countries = cfg.countries.clone();
    countries.sort();
    let mut variants = cfg.prompt_variants.clone();
    variants.sort();
    let empty: Vec<String> = Vec::new();

    let mut lines = String::new();
    for country in &countries {
        let baseline = baseline_for(&baselines, country)
            .map_err(|e| CliError::Config(e.to_string()))?;
        for &rag in &dims(cfg.rag) {
            for &news in &dims(cfg.use_news) {
                for variant in &variants {
                    let bundle = build_prompt(&PromptInputs {
                        country,
                        baseline,
                        peer_profiles: ctx.peer_profiles.get(country).unwrap_or(&empty),
                        headlines: ctx.headlines.get(country).unwrap_or(&empty),
                        variant,
                        rag,
                        use_news: news,
                    });
                    let response = respond(country, baseline, variant, rag, news);
                    let line = serde_json::json!({
                        "prompt_hash": bundle.prompt_hash,
                        "ctx_hash": bundle.ctx_hash,
                        "response": response,
                    });
                    lines.push_str(&serde_json::to_string(&line).expect("fixture line"));
                    lines.push('\n');
                    summary.response_lines += 1;
                }
            }
        }
    }
    write_text(&dir.join("responses.jsonl"), &lines)?;
    Ok(summary)
}

/// Convenience for tests: the fixtures directory at the workspace root.
pub fn default_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}
