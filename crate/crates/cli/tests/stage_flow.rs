//! Stage orchestration checks: error taxonomy (config vs missing artifact),
//! stage ordering, and the exit-code contract the shell sees.

use std::fs;

use stresslab_cli::{stages, ChannelFilter, CliError, PortfolioFilter, StageCtx};

fn ctx_for(config: &std::path::Path, out: &std::path::Path) -> Result<StageCtx, CliError> {
    StageCtx::load(config, out, None, true, None, PortfolioFilter::Both, ChannelFilter::All)
}

#[test]
fn malformed_config_is_a_config_error_with_exit_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("config.json");
    fs::write(&bad, "{ \"countries\": []").unwrap();
    let err = ctx_for(&bad, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2, "parse failure: {err}");

    // parseable but invalid: an empty country list cannot drive a grid
    fs::write(
        &bad,
        serde_json::json!({
            "countries": [],
            "model_id": "m",
            "rag": true,
            "use_news": true,
            "prompt_variants": ["v01_baseline_severe"],
        })
        .to_string(),
    )
    .unwrap();
    let err = ctx_for(&bad, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2, "validation failure: {err}");
}

#[test]
fn running_a_stage_before_its_inputs_exist_exits_3() {
    let dir = stresslab_cli::fixtures::default_dir();
    if !dir.join("config_desk.json").exists() {
        stresslab_cli::fixtures::build_all(&dir).unwrap();
    }
    let out = tempfile::tempdir().unwrap();
    let ctx = ctx_for(&dir.join("config_desk.json"), out.path()).unwrap();

    // simulate needs audited scenarios, betas, and covariance; none exist yet
    let err = stages::cmd_simulate(&ctx).unwrap_err();
    assert_eq!(err.exit_code(), 3, "premature simulate: {err}");
    let err = stages::cmd_diagnostics(&ctx).unwrap_err();
    assert_eq!(err.exit_code(), 3, "premature diagnostics: {err}");
}

#[test]
fn ingest_then_index_round_trip_writes_declared_artifacts() {
    let dir = stresslab_cli::fixtures::default_dir();
    if !dir.join("config_desk.json").exists() {
        stresslab_cli::fixtures::build_all(&dir).unwrap();
    }
    let out = tempfile::tempdir().unwrap();
    let ctx = ctx_for(&dir.join("config_desk.json"), out.path()).unwrap();

    stages::cmd_ingest(&ctx).unwrap();
    stages::cmd_index(&ctx).unwrap();

    for rel in [
        "ingest/weo_baselines.json",
        "ingest/prices_summary.json",
        "index/flat_index.json",
        stresslab_cli::layout::MANIFEST,
    ] {
        assert!(out.path().join(rel).exists(), "{rel} missing after ingest+index");
    }

    // the manifest is valid JSON and already tracks the written artifacts
    let manifest = stresslab::provenance::RunManifest::load(
        &out.path().join(stresslab_cli::layout::MANIFEST),
    )
    .unwrap();
    assert!(!manifest.stable_bytes().unwrap().is_empty());
}
