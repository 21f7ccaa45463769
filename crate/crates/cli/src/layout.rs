//! Canonical artifact layout under the output directory. Every stage writes
//! through these paths so the manifest, the verify command, and the report
//! renderer agree on names.

use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "run_artifacts_index.json";

/// Lowercase country slug used in per-country file names.
pub fn slug(country: &str) -> String {
    country
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST)
    }

    pub fn weo_baselines(&self) -> PathBuf {
        self.root.join("ingest/weo_baselines.json")
    }

    pub fn prices_summary(&self) -> PathBuf {
        self.root.join("ingest/prices_summary.json")
    }

    pub fn headlines_csv(&self, country: &str) -> PathBuf {
        self.root.join(format!("ingest/headlines_{}.csv", slug(country)))
    }

    pub fn headlines_meta(&self, country: &str) -> PathBuf {
        self.root.join(format!("ingest/headlines_{}.meta.json", slug(country)))
    }

    pub fn flat_index(&self) -> PathBuf {
        self.root.join("index/flat_index.json")
    }

    pub fn scenarios_raw(&self) -> PathBuf {
        self.root.join("generate/scenarios_raw.jsonl")
    }

    pub fn grid_summary(&self) -> PathBuf {
        self.root.join("generate/grid_summary.json")
    }

    pub fn scenarios_audited(&self) -> PathBuf {
        self.root.join("audit/scenarios_audited.jsonl")
    }

    pub fn audit_summary(&self) -> PathBuf {
        self.root.join("audit/audit_summary.json")
    }

    pub fn pca_factors(&self) -> PathBuf {
        self.root.join("factors/pca_factors.json")
    }

    pub fn betas(&self) -> PathBuf {
        self.root.join("factors/betas.json")
    }

    pub fn covariance(&self) -> PathBuf {
        self.root.join("factors/covariance.json")
    }

    pub fn risk_reports(&self) -> PathBuf {
        self.root.join("simulate/risk_reports.csv")
    }

    pub fn risk_crossrun(&self) -> PathBuf {
        self.root.join("simulate/risk_crossrun.csv")
    }

    pub fn baselines_csv(&self) -> PathBuf {
        self.root.join("baselines/baselines.csv")
    }

    pub fn envelopes_csv(&self) -> PathBuf {
        self.root.join("envelopes/envelopes.csv")
    }

    pub fn dispersion_by_prompt(&self) -> PathBuf {
        self.root.join("diagnostics/dispersion_by_prompt.csv")
    }

    pub fn stability_by_country_config(&self) -> PathBuf {
        self.root.join("diagnostics/stability_by_country_config.csv")
    }

    pub fn qc_removed(&self) -> PathBuf {
        self.root.join("diagnostics/qc_removed.json")
    }

    pub fn anova(&self) -> PathBuf {
        self.root.join("diagnostics/anova_decomposition.csv")
    }

    pub fn fairness(&self) -> PathBuf {
        self.root.join("diagnostics/fairness_cards.csv")
    }

    pub fn bootstrap_cis(&self) -> PathBuf {
        self.root.join("diagnostics/bootstrap_cis.csv")
    }

    pub fn macro_by_country(&self) -> PathBuf {
        self.root.join("diagnostics/macro_shocks_by_country.csv")
    }

    pub fn heatmap_csv(&self) -> PathBuf {
        self.root.join("diagnostics/var_mult_by_country_config.csv")
    }

    pub fn severity_scatter_csv(&self) -> PathBuf {
        self.root.join("diagnostics/scenario_severity.csv")
    }

    pub fn figure(&self, name: &str) -> PathBuf {
        self.root.join(format!("report/{name}.svg"))
    }

    pub fn summary_md(&self) -> PathBuf {
        self.root.join("report/summary.md")
    }
}
