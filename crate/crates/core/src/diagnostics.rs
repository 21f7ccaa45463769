//! Statistical diagnostics over the scenario and risk tables: shock
//! dispersion, QC filtering, bootstrap confidence intervals, main-effects
//! ANOVA with partial eta-squared, and fairness/robustness cards.
//!
//! Every function here is a pure function of its input table (plus an
//! explicit seed where resampling is involved), so reruns are byte-identical.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use thiserror::Error;

use crate::model::MacroShock;
use crate::stats;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("dispersion needs at least 2 scenarios, got {got}")]
    TooFewScenarios { got: usize },
    #[error("bootstrap CI needs at least 2 values, got {got}")]
    TooFewValues { got: usize },
    #[error("design matrix is singular; aliased factors: {}", aliased.join(", "))]
    SingularDesign { aliased: Vec<String> },
}

/// Mean pairwise distance for one grouping cell, with bootstrap bounds.
#[derive(Debug, Clone, Serialize)]
pub struct DispersionStat {
    /// Grouping key, e.g. "Canada|rag=1|news=0|model".
    pub key: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

/// Mean pairwise Euclidean distance between shock triples, over raw
/// percentage-point vectors with no scaling: 2/(S(S-1)) sum_{i<j} ||x_i-x_j||.
pub fn dispersion(shocks: &[MacroShock]) -> Result<f64, DiagnosticsError> {
    let s = shocks.len();
    if s < 2 {
        return Err(DiagnosticsError::TooFewScenarios { got: s });
    }
    let mut total = 0.0;
    for i in 0..s {
        for j in i + 1..s {
            let dg = shocks[i].gdp_growth - shocks[j].gdp_growth;
            let di = shocks[i].inflation - shocks[j].inflation;
            let dr = shocks[i].interest_rate - shocks[j].interest_rate;
            total += (dg * dg + di * di + dr * dr).sqrt();
        }
    }
    Ok(2.0 * total / (s as f64 * (s as f64 - 1.0)))
}

/// One QC removal, kept for the audit log.
#[derive(Debug, Clone, Serialize)]
pub struct QcRemoval {
    pub key: String,
    pub value: f64,
    pub threshold: f64,
}

/// Drop dispersion cells whose value exceeds the threshold (strictly; a value
/// of exactly `threshold` is retained) and log what was removed.
pub fn qc_filter(stats: Vec<DispersionStat>, threshold: f64) -> (Vec<DispersionStat>, Vec<QcRemoval>) {
    let mut kept = Vec::with_capacity(stats.len());
    let mut removed = Vec::new();
    for s in stats {
        if s.value > threshold {
            removed.push(QcRemoval { key: s.key.clone(), value: s.value, threshold });
        } else {
            kept.push(s);
        }
    }
    (kept, removed)
}

fn substream_rng(seed: u64, label: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let bytes: [u8; 32] = hasher.finalize().into();
    ChaCha12Rng::from_seed(bytes)
}

/// Percentile-method bootstrap CI over resampled means. Returns
/// (sample mean, lower bound, upper bound) at the given coverage level.
pub fn bootstrap_ci(
    values: &[f64],
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64, f64), DiagnosticsError> {
    if values.len() < 2 {
        return Err(DiagnosticsError::TooFewValues { got: values.len() });
    }
    let n = values.len();
    let mut rng = substream_rng(seed, "bootstrap_ci");
    let mut means = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        let mut total = 0.0;
        for _ in 0..n {
            total += values[rng.random_range(0..n)];
        }
        means.push(total / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = (1.0 - level) / 2.0;
    let lo = stats::quantile_sorted(&means, alpha);
    let hi = stats::quantile_sorted(&means, 1.0 - alpha);
    Ok((stats::mean(values), lo, hi))
}

/// One main effect in the variance decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct AnovaRow {
    pub metric: String,
    pub effect: String,
    pub df_effect: usize,
    pub ss_effect: f64,
    pub f_stat: f64,
    pub p_value: f64,
    pub partial_eta2: f64,
}

/// One observation: a response value plus its factor levels, in the same
/// order as the factor-name list passed to [`anova_eta2`].
#[derive(Debug, Clone)]
pub struct AnovaObservation {
    pub value: f64,
    pub levels: Vec<String>,
}

fn design_columns(obs: &[AnovaObservation], factor_idx: usize) -> (Vec<Vec<f64>>, usize) {
    let mut levels: Vec<&str> = obs.iter().map(|o| o.levels[factor_idx].as_str()).collect();
    levels.sort_unstable();
    levels.dedup();
    // treatment coding: drop the first level
    let cols = levels
        .iter()
        .skip(1)
        .map(|lv| obs.iter().map(|o| if o.levels[factor_idx] == *lv { 1.0 } else { 0.0 }).collect())
        .collect();
    (cols, levels.len())
}

fn assemble(n: usize, columns: &[Vec<f64>]) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, 1 + columns.len());
    for r in 0..n {
        x[(r, 0)] = 1.0;
    }
    for (c, col) in columns.iter().enumerate() {
        for r in 0..n {
            x[(r, c + 1)] = col[r];
        }
    }
    x
}

fn rank_of(x: &DMatrix<f64>) -> usize {
    let svd = x.clone().svd(false, false);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = max_sv * (x.nrows().max(x.ncols()) as f64) * f64::EPSILON;
    svd.singular_values.iter().filter(|s| **s > tol).count()
}

fn residual_ss(x: &DMatrix<f64>, y: &nalgebra::DVector<f64>) -> f64 {
    let svd = x.clone().svd(true, true);
    let beta = svd.solve(y, 1e-12).expect("SVD solve is total for eps > 0");
    let resid = y - x * beta;
    resid.dot(&resid)
}

/// Main-effects ANOVA over categorical factors with Type II (drop-one)
/// sums of squares, partial eta^2 = SS_effect / (SS_effect + SS_residual),
/// and F-test p-values. Factors with fewer than 2 observed levels are
/// skipped; a rank-deficient design is an error naming the aliased factors.
pub fn anova_eta2(
    metric: &str,
    factor_names: &[&str],
    obs: &[AnovaObservation],
) -> Result<Vec<AnovaRow>, DiagnosticsError> {
    let n = obs.len();
    assert!(obs.iter().all(|o| o.levels.len() == factor_names.len()), "factor levels must align");
    let y = nalgebra::DVector::from_iterator(n, obs.iter().map(|o| o.value));

    // build per-factor dummy column blocks; skip constant factors
    let mut blocks: Vec<(usize, Vec<Vec<f64>>)> = Vec::new();
    for (idx, _) in factor_names.iter().enumerate() {
        let (cols, n_levels) = design_columns(obs, idx);
        if n_levels >= 2 {
            blocks.push((idx, cols));
        }
    }

    let full_cols: Vec<Vec<f64>> = blocks.iter().flat_map(|(_, c)| c.iter().cloned()).collect();
    let x_full = assemble(n, &full_cols);
    let full_rank = rank_of(&x_full);
    if full_rank < x_full.ncols() {
        // a factor is aliased when removing its columns does not lower the rank
        let aliased: Vec<String> = blocks
            .iter()
            .filter(|(idx, _)| {
                let reduced: Vec<Vec<f64>> = blocks
                    .iter()
                    .filter(|(j, _)| j != idx)
                    .flat_map(|(_, c)| c.iter().cloned())
                    .collect();
                rank_of(&assemble(n, &reduced)) == full_rank
            })
            .map(|(idx, _)| factor_names[*idx].to_string())
            .collect();
        let aliased = if aliased.is_empty() {
            factor_names.iter().map(|s| s.to_string()).collect()
        } else {
            aliased
        };
        return Err(DiagnosticsError::SingularDesign { aliased });
    }

    let ss_res_full = residual_ss(&x_full, &y);
    let df_res = n - x_full.ncols();

    let mut out = Vec::with_capacity(blocks.len());
    for (idx, cols) in &blocks {
        let reduced: Vec<Vec<f64>> = blocks
            .iter()
            .filter(|(j, _)| j != idx)
            .flat_map(|(_, c)| c.iter().cloned())
            .collect();
        let ss_res_reduced = residual_ss(&assemble(n, &reduced), &y);
        let ss_effect = (ss_res_reduced - ss_res_full).max(0.0);
        let df_effect = cols.len();
        let denom = ss_effect + ss_res_full;
        let partial_eta2 = if denom > 0.0 { ss_effect / denom } else { 0.0 };
        let (f_stat, p_value) = if df_res == 0 || ss_res_full <= f64::EPSILON * denom.max(1.0) {
            // saturated fit: the effect absorbs everything it can
            if ss_effect > 0.0 {
                (f64::INFINITY, 0.0)
            } else {
                (0.0, 1.0)
            }
        } else {
            let f = (ss_effect / df_effect as f64) / (ss_res_full / df_res as f64);
            let dist = FisherSnedecor::new(df_effect as f64, df_res as f64)
                .expect("positive degrees of freedom");
            (f, 1.0 - dist.cdf(f))
        };
        out.push(AnovaRow {
            metric: metric.to_string(),
            effect: factor_names[*idx].to_string(),
            df_effect,
            ss_effect,
            f_stat,
            p_value,
            partial_eta2,
        });
    }
    Ok(out)
}

/// One aggregated grid cell (country x prompt variant x rag x news) for one
/// portfolio. Metric fields are None when the cell produced no accepted
/// scenario (empty cells still count toward the factorial total).
#[derive(Debug, Clone, Serialize)]
pub struct FairnessCell {
    pub portfolio_id: String,
    pub country: String,
    pub prompt_variant: String,
    pub rag: bool,
    pub use_news: bool,
    pub var_mult_linear: Option<f64>,
    pub var_mult_nonlinear: Option<f64>,
}

/// Robustness summary over one portfolio's full factorial grid.
#[derive(Debug, Clone, Serialize)]
pub struct FairnessCard {
    pub portfolio: String,
    pub cells_total: usize,
    pub rows_with_outcome: usize,
    /// (news-on - news-off) deltas whose sign is not robust to a +-1% metric
    /// perturbation.
    pub flips: usize,
    /// |z| > 3 outliers among linear VaR multiples.
    pub outliers_z: usize,
    /// Robust outliers: 0.6745 |x - median| / MAD > 3.5.
    pub outliers_mad: usize,
    /// max - min across country means of the linear VaR multiple.
    pub gap_var_linear: f64,
    /// max - min across country means of the nonlinear VaR multiple.
    pub gap_var_nonlinear: f64,
}

fn country_gap(cells: &[&FairnessCell], pick: impl Fn(&FairnessCell) -> Option<f64>) -> f64 {
    let mut by_country: std::collections::BTreeMap<&str, (f64, usize)> = Default::default();
    for c in cells {
        if let Some(v) = pick(c) {
            let e = by_country.entry(c.country.as_str()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    if by_country.is_empty() {
        return 0.0;
    }
    let means: Vec<f64> = by_country.values().map(|(s, n)| s / *n as f64).collect();
    let max = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = means.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// Build the fairness card for one portfolio from its aggregated cells.
pub fn fairness_card(portfolio: &str, cells: &[FairnessCell]) -> FairnessCard {
    let cells: Vec<&FairnessCell> = cells.iter().filter(|c| c.portfolio_id == portfolio).collect();
    let cells_total = cells.len();
    let with_outcome: Vec<&&FairnessCell> =
        cells.iter().filter(|c| c.var_mult_linear.is_some()).collect();
    let rows_with_outcome = with_outcome.len();

    // sign-flip count: pair news-on with news-off within (country, variant, rag)
    let mut flips = 0usize;
    let mut paired: std::collections::BTreeMap<(&str, &str, bool), [Option<f64>; 2]> =
        Default::default();
    for c in &cells {
        if let Some(v) = c.var_mult_linear {
            let slot = paired
                .entry((c.country.as_str(), c.prompt_variant.as_str(), c.rag))
                .or_insert([None, None]);
            slot[usize::from(c.use_news)] = Some(v);
        }
    }
    for [off, on] in paired.values() {
        if let (Some(off), Some(on)) = (off, on) {
            let delta_up = on * 1.01 - off * 0.99;
            let delta_dn = on * 0.99 - off * 1.01;
            if delta_up.signum() != delta_dn.signum() {
                flips += 1;
            }
        }
    }

    // outlier counts over linear VaR multiples
    let values: Vec<f64> = with_outcome.iter().filter_map(|c| c.var_mult_linear).collect();
    let (mut outliers_z, mut outliers_mad) = (0usize, 0usize);
    if values.len() >= 2 {
        let mean = stats::mean(&values);
        let sd = stats::std_dev(&values, 1);
        let median = stats::median(&values);
        let mut abs_dev: Vec<f64> = values.iter().map(|v| (v - median).abs()).collect();
        abs_dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mad = stats::median(&abs_dev);
        for v in &values {
            if sd > 0.0 && ((v - mean) / sd).abs() > 3.0 {
                outliers_z += 1;
            }
            let robust_flag = if mad > 0.0 {
                0.6745 * (v - median).abs() / mad > 3.5
            } else {
                *v != median
            };
            if robust_flag {
                outliers_mad += 1;
            }
        }
    }

    FairnessCard {
        portfolio: portfolio.to_string(),
        cells_total,
        rows_with_outcome,
        flips,
        outliers_z,
        outliers_mad,
        gap_var_linear: country_gap(&cells, |c| c.var_mult_linear),
        gap_var_nonlinear: country_gap(&cells, |c| c.var_mult_nonlinear),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, Normal};

    fn shock(g: f64, i: f64, r: f64) -> MacroShock {
        MacroShock::new(g, i, r)
    }

    #[test]
    fn dispersion_matches_the_345_triangle_and_handles_edges() {
        let d = dispersion(&[shock(0.0, 0.0, 0.0), shock(3.0, 4.0, 0.0)]).unwrap();
        assert_eq!(d, 5.0);
        let same = dispersion(&[shock(1.0, 2.0, 3.0), shock(1.0, 2.0, 3.0)]).unwrap();
        assert_eq!(same, 0.0);
        assert!(matches!(
            dispersion(&[shock(1.0, 2.0, 3.0)]),
            Err(DiagnosticsError::TooFewScenarios { got: 1 })
        ));
    }

    #[test]
    fn dispersion_matches_brute_force_and_is_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let normal = Normal::new(0.0, 3.0).unwrap();
        for _ in 0..200 {
            let n = rng.random_range(2..9usize);
            let shocks: Vec<MacroShock> = (0..n)
                .map(|_| {
                    shock(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng))
                })
                .collect();
            // ordered-pair double loop, normalized by S(S-1)
            let s = shocks.len() as f64;
            let mut total = 0.0;
            for a in &shocks {
                for b in &shocks {
                    let d = [
                        a.gdp_growth - b.gdp_growth,
                        a.inflation - b.inflation,
                        a.interest_rate - b.interest_rate,
                    ];
                    total += d.iter().map(|x| x * x).sum::<f64>().sqrt();
                }
            }
            let oracle = total / (s * (s - 1.0));
            assert_abs_diff_eq!(dispersion(&shocks).unwrap(), oracle, epsilon = 1e-12);

            // permutation invariance
            let mut reversed = shocks.clone();
            reversed.reverse();
            assert_abs_diff_eq!(
                dispersion(&shocks).unwrap(),
                dispersion(&reversed).unwrap(),
                epsilon = 1e-12
            );
            // translation invariance
            let translated: Vec<MacroShock> = shocks
                .iter()
                .map(|x| shock(x.gdp_growth + 7.0, x.inflation - 2.0, x.interest_rate + 0.5))
                .collect();
            assert_abs_diff_eq!(
                dispersion(&shocks).unwrap(),
                dispersion(&translated).unwrap(),
                epsilon = 1e-10
            );
        }
    }

    fn stat(key: &str, value: f64) -> DispersionStat {
        DispersionStat { key: key.into(), value, ci_low: value, ci_high: value, n: 10 }
    }

    #[test]
    fn qc_filter_is_strict_at_the_boundary() {
        let stats = vec![stat("a", 5.0), stat("b", 20.0), stat("c", 25.0)];
        let (kept, removed) = qc_filter(stats, 20.0);
        assert_eq!(kept.len(), 2, "exactly 20 is retained");
        assert_eq!(removed.len(), 1);
        assert_eq!(removed[0].key, "c");
        assert_eq!(removed[0].value, 25.0);

        let (kept, removed) = qc_filter(vec![stat("a", 1.0), stat("b", 19.9)], 20.0);
        assert_eq!(kept.len(), 2);
        assert!(removed.is_empty());
    }

    #[test]
    fn bootstrap_ci_collapses_on_constants_and_is_seeded() {
        let constant = vec![1.5; 40];
        let (mean, lo, hi) = bootstrap_ci(&constant, 2000, 0.95, 1).unwrap();
        assert_eq!((mean, lo, hi), (1.5, 1.5, 1.5));

        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let normal = Normal::new(1.465, 0.06).unwrap();
        let values: Vec<f64> = (0..300).map(|_| normal.sample(&mut rng)).collect();
        let a = bootstrap_ci(&values, 10_000, 0.95, 42).unwrap();
        let b = bootstrap_ci(&values, 10_000, 0.95, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.1 <= a.0 && a.0 <= a.2, "mean inside the interval");
        // CI width for n=300, sd 0.06: about 2*1.96*0.06/sqrt(300) ~ 0.014
        let width = a.2 - a.1;
        assert!(width > 0.005 && width < 0.03, "width {width}");

        // different seeds must give almost identical intervals at n=300
        let c = bootstrap_ci(&values, 10_000, 0.95, 43).unwrap();
        let overlap = a.2.min(c.2) - a.1.max(c.1);
        assert!(overlap >= 0.95 * width, "overlap {overlap} vs width {width}");
        assert!(matches!(bootstrap_ci(&[1.0], 100, 0.95, 1), Err(DiagnosticsError::TooFewValues { .. })));
    }

    fn observations(rows: &[(f64, &[&str])]) -> Vec<AnovaObservation> {
        rows.iter()
            .map(|(v, lv)| AnovaObservation {
                value: *v,
                levels: lv.iter().map(|s| s.to_string()).collect(),
            })
            .collect()
    }

    #[test]
    fn anova_null_and_saturated_cases() {
        // two groups with identical means: no effect
        let obs = observations(&[
            (1.0, &["a"]),
            (2.0, &["a"]),
            (3.0, &["a"]),
            (1.0, &["b"]),
            (2.0, &["b"]),
            (3.0, &["b"]),
        ]);
        let rows = anova_eta2("var_mult", &["group"], &obs).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].partial_eta2 < 1e-12, "eta2 {}", rows[0].partial_eta2);
        assert!(rows[0].p_value > 0.9);

        // factor fully determines the response: eta2 = 1
        let obs = observations(&[
            (1.0, &["a"]),
            (1.0, &["a"]),
            (5.0, &["b"]),
            (5.0, &["b"]),
            (9.0, &["c"]),
            (9.0, &["c"]),
        ]);
        let rows = anova_eta2("var_mult", &["group"], &obs).unwrap();
        assert_abs_diff_eq!(rows[0].partial_eta2, 1.0, epsilon = 1e-9);
        assert_eq!(rows[0].p_value, 0.0);
    }

    #[test]
    fn anova_matches_explicit_sums_of_squares() {
        // balanced 2x3 design with additive effects and fixed noise
        let a_eff = [0.0, 1.2];
        let b_eff = [0.0, 0.4, -0.3];
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut rows: Vec<(f64, Vec<String>)> = Vec::new();
        for (i, a) in a_eff.iter().enumerate() {
            for (j, b) in b_eff.iter().enumerate() {
                for _ in 0..8 {
                    let y = 2.0 + a + b + noise.sample(&mut rng);
                    rows.push((y, vec![format!("a{i}"), format!("b{j}")]));
                }
            }
        }
        let obs: Vec<AnovaObservation> =
            rows.iter().map(|(v, l)| AnovaObservation { value: *v, levels: l.clone() }).collect();
        let result = anova_eta2("var_mult", &["fa", "fb"], &obs).unwrap();
        assert_eq!(result.len(), 2);

        // independent oracle: balanced design, so Type II SS equals the
        // classical between-group decomposition around cell/grand means
        let grand = stats::mean(&rows.iter().map(|(v, _)| *v).collect::<Vec<_>>());
        let mut ss = [0.0f64; 2];
        for (f, ncats) in [(0usize, 2usize), (1, 3)] {
            for cat in 0..ncats {
                let group: Vec<f64> = rows
                    .iter()
                    .filter(|(_, l)| l[f] == format!("{}{}", ["a", "b"][f], cat))
                    .map(|(v, _)| *v)
                    .collect();
                ss[f] += group.len() as f64 * (stats::mean(&group) - grand).powi(2);
            }
        }
        // residual SS around the additive fit, computed from cell means
        let mut ss_res = 0.0;
        for (i, _) in a_eff.iter().enumerate() {
            for (j, _) in b_eff.iter().enumerate() {
                let cell: Vec<f64> = rows
                    .iter()
                    .filter(|(_, l)| l[0] == format!("a{i}") && l[1] == format!("b{j}"))
                    .map(|(v, _)| *v)
                    .collect();
                // additive model prediction for this cell
                let a_mean = stats::mean(
                    &rows.iter().filter(|(_, l)| l[0] == format!("a{i}")).map(|(v, _)| *v).collect::<Vec<_>>(),
                );
                let b_mean = stats::mean(
                    &rows.iter().filter(|(_, l)| l[1] == format!("b{j}")).map(|(v, _)| *v).collect::<Vec<_>>(),
                );
                let fitted = a_mean + b_mean - grand;
                ss_res += cell.iter().map(|v| (v - fitted).powi(2)).sum::<f64>();
            }
        }
        for row in &result {
            let idx = if row.effect == "fa" { 0 } else { 1 };
            let oracle_eta2 = ss[idx] / (ss[idx] + ss_res);
            assert!(
                (row.partial_eta2 - oracle_eta2).abs() < 0.01,
                "{}: {} vs oracle {}",
                row.effect,
                row.partial_eta2,
                oracle_eta2
            );
        }
    }

    #[test]
    fn anova_single_factor_eta2_equals_r_squared() {
        let obs = observations(&[
            (1.0, &["a"]),
            (1.4, &["a"]),
            (2.0, &["b"]),
            (2.5, &["b"]),
            (0.3, &["c"]),
            (0.9, &["c"]),
            (0.5, &["c"]),
        ]);
        let rows = anova_eta2("var_mult", &["group"], &obs).unwrap();
        let values: Vec<f64> = obs.iter().map(|o| o.value).collect();
        let grand = stats::mean(&values);
        let ss_tot: f64 = values.iter().map(|v| (v - grand).powi(2)).sum();
        let r2 = rows[0].ss_effect / ss_tot;
        // with one factor, partial eta2 = SS_eff/(SS_eff+SS_res) = R^2
        assert_abs_diff_eq!(rows[0].partial_eta2, r2, epsilon = 1e-10);
    }

    #[test]
    fn anova_singular_design_names_the_aliased_factors() {
        // factor "copy" repeats factor "orig" exactly, so each is redundant
        // given the other
        let obs = observations(&[
            (1.0, &["a", "x"]),
            (2.0, &["a", "x"]),
            (3.0, &["b", "y"]),
            (4.0, &["b", "y"]),
        ]);
        let err = anova_eta2("var_mult", &["orig", "copy"], &obs).unwrap_err();
        match err {
            DiagnosticsError::SingularDesign { aliased } => {
                assert!(aliased.contains(&"orig".to_string()) && aliased.contains(&"copy".to_string()));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn anova_skips_constant_factors() {
        let obs = observations(&[
            (1.0, &["a", "only"]),
            (2.0, &["a", "only"]),
            (3.0, &["b", "only"]),
            (4.0, &["b", "only"]),
        ]);
        let rows = anova_eta2("var_mult", &["group", "constant"], &obs).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].effect, "group");
    }

    fn cell(
        country: &str,
        variant: &str,
        rag: bool,
        news: bool,
        lin: Option<f64>,
        nonlin: Option<f64>,
    ) -> FairnessCell {
        FairnessCell {
            portfolio_id: "p1".into(),
            country: country.into(),
            prompt_variant: variant.into(),
            rag,
            use_news: news,
            var_mult_linear: lin,
            var_mult_nonlinear: nonlin,
        }
    }

    fn full_grid(value: impl Fn(usize) -> f64) -> Vec<FairnessCell> {
        let countries = ["Canada", "Japan"];
        let variants = ["v01", "v02", "v03"];
        let mut cells = Vec::new();
        let mut i = 0;
        for c in countries {
            for v in variants {
                for rag in [false, true] {
                    for news in [false, true] {
                        let x = value(i);
                        cells.push(cell(c, v, rag, news, Some(x), Some(x + 0.1)));
                        i += 1;
                    }
                }
            }
        }
        cells
    }

    #[test]
    fn fairness_card_counts_cells_and_collapses_when_uniform() {
        let cells = full_grid(|_| 1.5);
        let card = fairness_card("p1", &cells);
        assert_eq!(card.cells_total, 2 * 3 * 4);
        assert_eq!(card.rows_with_outcome, 24);
        assert_eq!(card.outliers_z, 0);
        assert_eq!(card.outliers_mad, 0);
        assert_eq!(card.gap_var_linear, 0.0);
        assert_eq!(card.gap_var_nonlinear, 0.0);
        // identical on/off values: delta 0, perturbation flips the sign
        assert_eq!(card.flips, 12);
        // empty cells still count toward the total
        let mut with_hole = cells;
        with_hole[3].var_mult_linear = None;
        let card = fairness_card("p1", &with_hole);
        assert_eq!(card.cells_total, 24);
        assert_eq!(card.rows_with_outcome, 23);
    }

    #[test]
    fn fairness_card_flags_an_injected_extreme_cell() {
        let mut cells = full_grid(|i| 1.5 + 0.001 * (i % 7) as f64);
        cells[10].var_mult_linear = Some(9.0);
        let card = fairness_card("p1", &cells);
        assert!(card.outliers_z >= 1, "z outliers {}", card.outliers_z);
        assert!(card.outliers_mad >= 1, "mad outliers {}", card.outliers_mad);

        // direct formulas agree on the injected point
        let values: Vec<f64> = cells.iter().filter_map(|c| c.var_mult_linear).collect();
        let mean = stats::mean(&values);
        let sd = stats::std_dev(&values, 1);
        assert!(((9.0 - mean) / sd).abs() > 3.0);
        let median = stats::median(&values);
        let mut devs: Vec<f64> = values.iter().map(|v| (v - median).abs()).collect();
        devs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mad = stats::median(&devs);
        assert!(0.6745 * (9.0 - median).abs() / mad > 3.5);
    }

    #[test]
    fn fairness_gap_reflects_country_mean_difference() {
        let cells: Vec<FairnessCell> = full_grid(|_| 1.0)
            .into_iter()
            .map(|mut c| {
                if c.country == "Japan" {
                    c.var_mult_linear = Some(1.4);
                    c.var_mult_nonlinear = Some(1.9);
                }
                c
            })
            .collect();
        let card = fairness_card("p1", &cells);
        assert_abs_diff_eq!(card.gap_var_linear, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(card.gap_var_nonlinear, 0.8, epsilon = 1e-12);
        // cells from other portfolios are ignored
        let mut mixed = cells;
        mixed.push(FairnessCell { portfolio_id: "p2".into(), ..mixed[0].clone() });
        assert_eq!(fairness_card("p1", &mixed).cells_total, 24);
    }
}
