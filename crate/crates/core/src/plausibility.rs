//! Scenario audit: shock derivation, hard sanity gate, soft plausibility
//! rubric, lexical regime read, and the crisis-mixing weight lambda.
//!
//! The audit is the only stage allowed to fill a scenario's assessment fields
//! (`plausibility_ok`, `plausibility_score`, regime probabilities, `lambda`)
//! and seal its content hash. Everything here is pure and deterministic: the
//! same candidate, baseline, and config always produce the same audited
//! scenario byte for byte.

use serde::{Deserialize, Serialize};

use crate::ingest::CountryBaseline;
use crate::model::{MacroShock, RegimeLabel, Scenario};

/// Phrases whose presence in a rationale legitimizes the
/// "deep contraction + falling inflation + hiking rates" combination
/// (defending a currency or re-anchoring expectations).
pub const CONTRADICTION_OVERRIDES: [&str; 5] = [
    "currency defence",
    "defend the currency",
    "credibility",
    "anchoring",
    "imported",
];

/// Regime probabilities over (normal, stress, crisis) plus the scalar score
/// `0.5 * p_stress + 1.0 * p_crisis` used in the lambda blend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeAssessment {
    pub p_normal: f64,
    pub p_stress: f64,
    pub p_crisis: f64,
    pub score: f64,
}

impl RegimeAssessment {
    pub fn label(&self) -> RegimeLabel {
        let probs = [self.p_normal, self.p_stress, self.p_crisis];
        let mut best = 0usize;
        for (i, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = i;
            }
        }
        match best {
            0 => RegimeLabel::Normal,
            1 => RegimeLabel::Stress,
            _ => RegimeLabel::Crisis,
        }
    }
}

/// Maps free text to regime probabilities. Must be deterministic.
pub trait RegimeClassifier {
    fn classify(&self, text: &str) -> RegimeAssessment;
    fn classifier_id(&self) -> &'static str;
}

const CRISIS_TERMS: [&str; 12] = [
    "crisis",
    "collapse",
    "contagion",
    "meltdown",
    "panic",
    "crash",
    "default",
    "insolvency",
    "systemic",
    "bank run",
    "spiral",
    "freefall",
];

const STRESS_TERMS: [&str; 13] = [
    "stress",
    "recession",
    "downturn",
    "contraction",
    "tightening",
    "squeeze",
    "slump",
    "shock",
    "turmoil",
    "volatility",
    "drawdown",
    "sell-off",
    "selloff",
];

const NORMAL_TERMS: [&str; 9] = [
    "stable",
    "steady",
    "moderate",
    "gradual",
    "orderly",
    "resilient",
    "soft landing",
    "balanced",
    "normal",
];

fn count_occurrences(haystack: &str, needle: &str) -> usize {
    let mut count = 0;
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        count += 1;
        from += pos + needle.len();
    }
    count
}

/// Keyword-count classifier with Dirichlet-style priors biased toward the
/// normal regime, so sparse or empty text reads as calm.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalRegimeClassifier;

impl LexicalRegimeClassifier {
    const PRIORS: [f64; 3] = [1.2, 0.5, 0.3];
}

impl RegimeClassifier for LexicalRegimeClassifier {
    fn classify(&self, text: &str) -> RegimeAssessment {
        let lower = text.to_lowercase();
        let tally = |terms: &[&str]| -> f64 {
            terms.iter().map(|t| count_occurrences(&lower, t) as f64).sum()
        };
        let raw = [
            Self::PRIORS[0] + tally(&NORMAL_TERMS),
            Self::PRIORS[1] + tally(&STRESS_TERMS),
            Self::PRIORS[2] + tally(&CRISIS_TERMS),
        ];
        let total: f64 = raw.iter().sum();
        let p = [raw[0] / total, raw[1] / total, raw[2] / total];
        RegimeAssessment {
            p_normal: p[0],
            p_stress: p[1],
            p_crisis: p[2],
            score: 0.5 * p[1] + 1.0 * p[2],
        }
    }

    fn classifier_id(&self) -> &'static str {
        "lexical-regime-v1"
    }
}

/// Turn a scenario's macro fields into baseline-relative shocks. When
/// `rates_are_levels` is set, the country baseline is subtracted; otherwise
/// the fields are already deltas and pass through verbatim.
pub fn derive_shock(scenario: &Scenario, baseline: &CountryBaseline, rates_are_levels: bool) -> MacroShock {
    if rates_are_levels {
        MacroShock::new(
            scenario.shock.gdp_growth - baseline.gdp_growth,
            scenario.shock.inflation - baseline.inflation,
            scenario.shock.interest_rate - baseline.interest_rate,
        )
    } else {
        scenario.shock
    }
}

/// A single hard-gate failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum GateViolation {
    /// |GDP-growth shock| above 10 percentage points.
    GdpShockTooLarge { value: f64 },
    /// Implied inflation level above 20%.
    InflationLevelTooHigh { level: f64 },
    /// Implied policy-rate level above 15%.
    RateLevelTooHigh { level: f64 },
    /// Implied policy-rate level below -1%.
    RateLevelTooLow { level: f64 },
    /// Deep contraction with falling inflation yet hiking rates, and no
    /// recognized justification in the rationale.
    Contradiction,
}

impl std::fmt::Display for GateViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GateViolation::GdpShockTooLarge { value } => {
                write!(f, "gdp shock magnitude {value:.2}pp exceeds 10pp")
            }
            GateViolation::InflationLevelTooHigh { level } => {
                write!(f, "implied inflation level {level:.2}% exceeds 20%")
            }
            GateViolation::RateLevelTooHigh { level } => {
                write!(f, "implied rate level {level:.2}% exceeds 15%")
            }
            GateViolation::RateLevelTooLow { level } => {
                write!(f, "implied rate level {level:.2}% below -1%")
            }
            GateViolation::Contradiction => {
                write!(f, "contraction with disinflation yet rate hikes, no stated justification")
            }
        }
    }
}

/// Outcome of the hard gate: all violations, not just the first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub passed: bool,
    pub violations: Vec<GateViolation>,
}

/// Reject-only sanity bounds on the derived shock and the levels it implies.
/// The contradiction rule is waived when the rationale contains any override
/// phrase (case-insensitive).
pub fn hard_gate(shock: &MacroShock, baseline: &CountryBaseline, rationale: &str) -> GateOutcome {
    let mut violations = Vec::new();
    if shock.gdp_growth.abs() > 10.0 {
        violations.push(GateViolation::GdpShockTooLarge { value: shock.gdp_growth });
    }
    let inflation_level = baseline.inflation + shock.inflation;
    if inflation_level > 20.0 {
        violations.push(GateViolation::InflationLevelTooHigh { level: inflation_level });
    }
    let rate_level = baseline.interest_rate + shock.interest_rate;
    if rate_level > 15.0 {
        violations.push(GateViolation::RateLevelTooHigh { level: rate_level });
    }
    if rate_level < -1.0 {
        violations.push(GateViolation::RateLevelTooLow { level: rate_level });
    }
    let contradiction = shock.gdp_growth <= -2.0 && shock.inflation < 0.0 && shock.interest_rate > 0.0;
    if contradiction {
        let lower = rationale.to_lowercase();
        let justified = CONTRADICTION_OVERRIDES.iter().any(|kw| lower.contains(kw));
        if !justified {
            violations.push(GateViolation::Contradiction);
        }
    }
    GateOutcome { passed: violations.is_empty(), violations }
}

/// Soft rubric breakdown; `total` is the 0-5 plausibility score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftScore {
    pub magnitude: f64,
    pub coherence: f64,
    pub structure: f64,
    pub total: f64,
}

/// Weighted rubric: 0.4 magnitude + 0.4 coherence + 0.2 structure, each
/// component in [0, 5].
///
/// Magnitude rewards shock norms in the severe-but-plausible band [4, 8] pp,
/// ramping linearly up below and decaying linearly above (zero at norm 16).
/// Coherence starts at 5 and loses 2 points per suspicious sign pattern:
/// growth rising under stress, inflation and rates pulling opposite ways both
/// materially, or deep contraction paired with materially falling inflation.
/// Structure rewards a substantive rationale (40+ words saturates) and
/// concrete sector attribution (3+ sectors saturates).
pub fn soft_score(shock: &MacroShock, rationale: &str, risk_sectors: &[String]) -> SoftScore {
    let n = shock.norm();
    let magnitude = if n < 4.0 {
        5.0 * n / 4.0
    } else if n <= 8.0 {
        5.0
    } else {
        5.0 * (1.0 - (n - 8.0) / 8.0).max(0.0)
    };

    let mut coherence: f64 = 5.0;
    if shock.gdp_growth > 0.25 {
        coherence -= 2.0;
    }
    if shock.inflation * shock.interest_rate < 0.0 && shock.inflation.abs() > 0.25 && shock.interest_rate.abs() > 0.25 {
        coherence -= 2.0;
    }
    if shock.gdp_growth <= -2.0 && shock.inflation < -0.25 {
        coherence -= 2.0;
    }
    let coherence = coherence.max(0.0);

    let words = rationale.split_whitespace().count() as f64;
    let sectors = risk_sectors.len() as f64;
    let structure = 2.5 * (words / 40.0).min(1.0) + 2.5 * (sectors / 3.0).min(1.0);

    let total = 0.4 * magnitude + 0.4 * coherence + 0.2 * structure;
    SoftScore { magnitude, coherence, structure, total }
}

/// Crisis-mixing weight: half saturating shock severity, half regime read,
/// clipped to [0, 1]. `theta` is the norm (pp) at which severity saturates.
pub fn build_lambda(shock: &MacroShock, regime_score: f64, theta: f64) -> f64 {
    let severity = (shock.norm() / theta).min(1.0);
    (0.5 * severity + 0.5 * regime_score).clamp(0.0, 1.0)
}

/// Audit-stage knobs lifted from the run config.
#[derive(Debug, Clone, Copy)]
pub struct AuditConfig {
    pub rates_are_levels: bool,
    pub accept_threshold: f64,
    pub lambda_theta: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig { rates_are_levels: true, accept_threshold: 2.0, lambda_theta: 8.0 }
    }
}

/// A candidate scenario after the full audit, with the sealed scenario and
/// every intermediate the downstream risk engine or diagnostics need.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditedScenario {
    pub scenario: Scenario,
    pub shock: MacroShock,
    pub gate: GateOutcome,
    pub soft: SoftScore,
    pub regime: RegimeAssessment,
    pub accepted: bool,
}

/// Run the complete audit on a parsed candidate: derive the shock, apply the
/// hard gate and soft rubric, read the regime from the rationale, build
/// lambda, then fill the assessment fields and seal the content hash.
///
/// Deterministic benchmark scenarios (provider "deterministic") carry shocks
/// verbatim regardless of the levels convention, since they are specified as
/// deltas by construction.
pub fn audit_scenario(
    candidate: &Scenario,
    baseline: &CountryBaseline,
    classifier: &dyn RegimeClassifier,
    cfg: &AuditConfig,
) -> AuditedScenario {
    let levels = cfg.rates_are_levels && candidate.provider != "deterministic";
    let shock = derive_shock(candidate, baseline, levels);
    let gate = hard_gate(&shock, baseline, &candidate.rationale);
    let soft = soft_score(&shock, &candidate.rationale, &candidate.risk_sectors);
    let regime = classifier.classify(&candidate.rationale);
    let lambda = build_lambda(&shock, regime.score, cfg.lambda_theta);
    let accepted = gate.passed && soft.total >= cfg.accept_threshold;

    let mut scenario = candidate.clone();
    scenario.plausibility_ok = accepted as u8;
    scenario.plausibility_score = soft.total;
    scenario.regime_label = regime.label();
    scenario.regime_score = regime.score;
    scenario.regime_p_normal = regime.p_normal;
    scenario.regime_p_stress = regime.p_stress;
    scenario.regime_p_crisis = regime.p_crisis;
    scenario.lambda = lambda;
    let scenario = scenario.seal();

    AuditedScenario { scenario, shock, gate, soft, regime, accepted }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn baseline() -> CountryBaseline {
        CountryBaseline {
            country: "Canada".into(),
            gdp_growth: 1.1,
            inflation: 1.9,
            interest_rate: 4.25,
            vintage: "test".into(),
        }
    }

    #[test]
    fn empty_text_reads_as_calm() {
        let c = LexicalRegimeClassifier;
        let a = c.classify("");
        assert_eq!(a.label(), RegimeLabel::Normal);
        assert!(a.score < 0.3, "score {}", a.score);
        assert_abs_diff_eq!(a.p_normal + a.p_stress + a.p_crisis, 1.0, epsilon = 1e-12);
        // priors 1.2/0.5/0.3 normalize to 0.6/0.25/0.15 -> score 0.275
        assert_abs_diff_eq!(a.score, 0.275, epsilon = 1e-12);
    }

    #[test]
    fn crisis_dense_text_peaks_at_crisis() {
        let c = LexicalRegimeClassifier;
        let text = "Bank run contagion triggers a systemic crisis; markets crash and defaults spiral.";
        let a = c.classify(text);
        assert_eq!(a.label(), RegimeLabel::Crisis);
        // oracle: raw counts from the lexicons over the lowercased text
        let lower = text.to_lowercase();
        let count = |terms: &[&str]| terms.iter().map(|t| count_occurrences(&lower, t) as f64).sum::<f64>();
        let raw = [1.2 + count(&NORMAL_TERMS), 0.5 + count(&STRESS_TERMS), 0.3 + count(&CRISIS_TERMS)];
        let total: f64 = raw.iter().sum();
        assert_abs_diff_eq!(a.p_crisis, raw[2] / total, epsilon = 1e-12);
        assert!(a.score > 0.5);
    }

    #[test]
    fn shock_derivation_honors_levels_convention() {
        let s = Scenario::draft("Canada", "t", MacroShock::new(-0.8, 4.9, 8.25), "r", &["banks"]);
        let b = baseline();
        let as_levels = derive_shock(&s, &b, true);
        assert_abs_diff_eq!(as_levels.gdp_growth, -1.9, epsilon = 1e-12);
        assert_abs_diff_eq!(as_levels.inflation, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(as_levels.interest_rate, 4.0, epsilon = 1e-12);
        let verbatim = derive_shock(&s, &b, false);
        assert_abs_diff_eq!(verbatim.gdp_growth, -0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(verbatim.interest_rate, 8.25, epsilon = 1e-12);
    }

    #[test]
    fn gate_rejects_each_bound() {
        let b = baseline();
        let g = hard_gate(&MacroShock::new(-10.5, 0.0, 0.0), &b, "");
        assert!(!g.passed);
        assert!(matches!(g.violations[0], GateViolation::GdpShockTooLarge { .. }));

        let g = hard_gate(&MacroShock::new(-1.0, 18.5, 0.0), &b, "");
        assert!(matches!(g.violations[0], GateViolation::InflationLevelTooHigh { level } if (level - 20.4).abs() < 1e-12));

        let g = hard_gate(&MacroShock::new(-1.0, 1.0, 11.0), &b, "");
        assert!(matches!(g.violations[0], GateViolation::RateLevelTooHigh { .. }));

        let g = hard_gate(&MacroShock::new(-1.0, 1.0, -5.5), &b, "");
        assert!(matches!(g.violations[0], GateViolation::RateLevelTooLow { .. }));

        let g = hard_gate(&MacroShock::new(-1.0, 1.0, 1.0), &b, "");
        assert!(g.passed);
    }

    #[test]
    fn contradiction_needs_justification() {
        let b = baseline();
        let shock = MacroShock::new(-3.0, -1.0, 2.0);
        let g = hard_gate(&shock, &b, "Growth collapses while the central bank hikes anyway.");
        assert_eq!(g.violations, vec![GateViolation::Contradiction]);

        let g = hard_gate(&shock, &b, "Rates rise to defend the currency despite the contraction.");
        assert!(g.passed, "override phrase waives the contradiction");

        let g = hard_gate(&shock, &b, "Hikes protect policy CREDIBILITY as the economy shrinks.");
        assert!(g.passed, "override match is case-insensitive");
    }

    #[test]
    fn rubric_component_shapes() {
        let calm = soft_score(&MacroShock::new(0.0, 0.0, 0.0), "", &[]);
        assert_abs_diff_eq!(calm.magnitude, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(calm.coherence, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(calm.structure, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(calm.total, 2.0, epsilon = 1e-12);

        // norm 5 sits inside the severe band
        let band = soft_score(&MacroShock::new(-3.0, 4.0, 0.0), "", &[]);
        assert_abs_diff_eq!(band.magnitude, 5.0, epsilon = 1e-12);

        // extreme norms decay toward zero
        let wild = soft_score(&MacroShock::new(-9.9, 15.0, 9.0), "", &[]);
        assert!(wild.magnitude < 1.0, "magnitude {}", wild.magnitude);

        // structure saturates at 40 words and 3 sectors
        let words40 = vec!["w"; 40].join(" ");
        let sectors3: Vec<String> = ["banks", "energy", "households"].iter().map(|s| s.to_string()).collect();
        let full = soft_score(&MacroShock::new(-2.0, 4.0, 2.0), &words40, &sectors3);
        assert_abs_diff_eq!(full.structure, 5.0, epsilon = 1e-12);
        assert!((0.0..=5.0).contains(&full.total));
    }

    #[test]
    fn rubric_matches_worked_examples() {
        // Moderate contraction with mild disinflation and defensive hikes:
        // norm ~2.44 undershoots the severe band and the opposing
        // inflation/rate signs cost coherence -> lands near 3.
        let shock = MacroShock::new(-1.9, -0.3, 1.5);
        let rationale_words = vec!["w"; 45].join(" ");
        let sectors: Vec<String> = ["banks", "exporters", "construction"].iter().map(|s| s.to_string()).collect();
        let s = soft_score(&shock, &rationale_words, &sectors);
        assert!((s.total - 3.0).abs() <= 0.5, "total {}", s.total);

        // A zero shock with a substantive writeup stays acceptable.
        let neutral = soft_score(&MacroShock::new(0.0, 0.0, 0.0), &rationale_words, &sectors);
        assert!(neutral.total >= 2.5, "total {}", neutral.total);

        // Canonical stagflation-style shock scores a full 5 on the rubric's
        // magnitude and coherence axes.
        let canonical = soft_score(&MacroShock::new(-1.4, 3.0, 4.0), &rationale_words, &sectors);
        assert_abs_diff_eq!(canonical.total, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn lambda_blend_and_bounds() {
        let shock = MacroShock::new(-1.4, 3.0, 4.0);
        let lambda = build_lambda(&shock, 0.5332708434, 8.0);
        assert!((lambda - 0.591).abs() < 1e-3, "lambda {lambda}");
        assert_abs_diff_eq!(lambda, 0.5 * (26.96f64.sqrt() / 8.0) + 0.5 * 0.5332708434, epsilon = 1e-12);

        assert_abs_diff_eq!(build_lambda(&MacroShock::new(0.0, 0.0, 0.0), 0.0, 8.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(build_lambda(&MacroShock::new(-50.0, 0.0, 0.0), 1.0, 8.0), 1.0, epsilon = 1e-15);

        // severity saturates at theta
        let at_theta = build_lambda(&MacroShock::new(-8.0, 0.0, 0.0), 0.0, 8.0);
        let past_theta = build_lambda(&MacroShock::new(-12.0, 0.0, 0.0), 0.0, 8.0);
        assert_abs_diff_eq!(at_theta, past_theta, epsilon = 1e-15);
        assert_abs_diff_eq!(at_theta, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn audit_fills_assessment_fields_and_seals() {
        // macro fields are levels: vs the Canada baseline they imply shocks
        // (-1.4, +3.0, +4.0)
        let mut candidate = Scenario::draft(
            "Canada",
            "Imported inflation squeeze",
            MacroShock::new(-0.3, 4.9, 8.25),
            "A severe imported-cost shock forces aggressive tightening; the downturn deepens as credit conditions squeeze households and volatility rises across markets.",
            &["banks", "housing", "retail"],
        );
        candidate.provider = "fixture".into();

        let audited = audit_scenario(&candidate, &baseline(), &LexicalRegimeClassifier, &AuditConfig::default());
        assert!(audited.accepted);
        assert_eq!(audited.scenario.plausibility_ok, 1);
        assert_abs_diff_eq!(audited.shock.gdp_growth, -1.4, epsilon = 1e-12);
        assert_abs_diff_eq!(audited.shock.inflation, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(audited.shock.interest_rate, 4.0, epsilon = 1e-12);
        assert!((0.0..=5.0).contains(&audited.scenario.plausibility_score));
        assert!((0.0..=1.0).contains(&audited.scenario.lambda));
        assert_eq!(audited.scenario.scenario_hash.len(), 64);
        assert_eq!(audited.scenario.digest(), audited.scenario.scenario_hash);

        // determinism: auditing the same candidate twice gives identical bytes
        let again = audit_scenario(&candidate, &baseline(), &LexicalRegimeClassifier, &AuditConfig::default());
        assert_eq!(again.scenario.scenario_hash, audited.scenario.scenario_hash);
        assert_eq!(again.scenario.canonical_bytes(), audited.scenario.canonical_bytes());
    }

    #[test]
    fn gated_scenario_is_rejected_regardless_of_rubric() {
        // level -14.0 vs baseline 1.1 implies a -15.1pp growth shock, beyond
        // the 10pp bound
        let rationale = vec!["w"; 50].join(" ");
        let candidate = Scenario::draft(
            "Canada",
            "Impossible",
            MacroShock::new(-14.0, 4.0, 5.0),
            &rationale,
            &["banks", "energy", "retail"],
        );

        let audited = audit_scenario(&candidate, &baseline(), &LexicalRegimeClassifier, &AuditConfig::default());
        assert!(!audited.accepted);
        assert_eq!(audited.scenario.plausibility_ok, 0);
        assert!(!audited.gate.passed);
    }
}
