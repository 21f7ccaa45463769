//! Monte Carlo risk engine: regime-mixed covariance, PSD-tolerant Cholesky
//! with a jitter ladder, three stress-transmission channels, and empirical
//! tail metrics with baseline multiples.
//!
//! Randomness is counter-based: each path draws from a generator seeded by
//! (run seed, digest of the risk-relevant scenario state, channel, path
//! index). The risk-relevant state is exactly the derived shock and lambda,
//! so two scenarios that differ only in text or context flags share identical
//! noise — which is what makes the linear channel bitwise insensitive to
//! retrieval and headline toggles while the nonlinear channel responds
//! through its amplification term.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::factor::{linear_drift, macro_to_factor, nonlinear_drift, BetaSet, FactorError};
use crate::ingest::ReturnsWindow;
use crate::model::{ChannelParams, MacroShock, RunConfig};
use crate::plausibility::AuditedScenario;
use crate::stats;

/// Stress-transmission channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Vol,
    Linear,
    Nonlinear,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Vol, Channel::Linear, Channel::Nonlinear];

    pub fn as_str(&self) -> &'static str {
        match self {
            Channel::Vol => "vol",
            Channel::Linear => "linear",
            Channel::Nonlinear => "nonlinear",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Channel::Vol => 0,
            Channel::Linear => 1,
            Channel::Nonlinear => 2,
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("covariance matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix not positive semidefinite even at maximum jitter {max_jitter:e}")]
    NotPositiveSemidefinite { max_jitter: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("baseline {metric} is zero; multiples undefined")]
    ZeroBaseline { metric: &'static str },
    #[error("need at least 20 paths for a 5% tail, got {got}")]
    TooFewPaths { got: usize },
    #[error("scenario was not accepted by the plausibility audit")]
    NotAccepted,
    #[error(transparent)]
    Factor(#[from] FactorError),
}

/// Calm- and crisis-regime covariance matrices over a shared asset order.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CovariancePair {
    pub tickers: Vec<String>,
    pub calm: DMatrix<f64>,
    pub crisis: DMatrix<f64>,
}

/// Sample covariance (ddof 1) of a dense returns window.
pub fn estimate_covariance(window: &ReturnsWindow) -> DMatrix<f64> {
    let t = window.data.nrows();
    let n = window.data.ncols();
    let mut centered = window.data.clone();
    for j in 0..n {
        let mean = centered.column(j).iter().sum::<f64>() / t as f64;
        for i in 0..t {
            centered[(i, j)] -= mean;
        }
    }
    centered.transpose() * &centered / (t as f64 - 1.0)
}

/// Build the regime pair from calm and crisis return windows.
pub fn covariance_pair(calm: &ReturnsWindow, crisis: &ReturnsWindow) -> Result<CovariancePair, RiskError> {
    if calm.tickers != crisis.tickers {
        return Err(RiskError::Shape("calm and crisis windows cover different tickers".into()));
    }
    Ok(CovariancePair {
        tickers: calm.tickers.clone(),
        calm: estimate_covariance(calm),
        crisis: estimate_covariance(crisis),
    })
}

/// Scenario covariance: (1-lambda) calm + lambda crisis. The endpoints branch
/// to the exact input matrix so lambda in {0, 1} reproduces it bit for bit.
pub fn mix_covariance(pair: &CovariancePair, lambda: f64) -> DMatrix<f64> {
    if lambda == 0.0 {
        pair.calm.clone()
    } else if lambda == 1.0 {
        pair.crisis.clone()
    } else {
        &pair.calm * (1.0 - lambda) + &pair.crisis * lambda
    }
}

/// Volatility-channel covariance: a pure variance multiplier
/// (1 + vol_kappa * max(0, inflation shock))^2 on every element, which leaves
/// the correlation matrix untouched.
pub fn scale_cov_for_vol_channel(cov: &DMatrix<f64>, shock: &MacroShock, params: &ChannelParams) -> DMatrix<f64> {
    let bump = shock.inflation.max(0.0);
    if bump == 0.0 {
        return cov.clone();
    }
    let scale = 1.0 + params.vol_kappa * bump;
    cov * (scale * scale)
}

/// Lower-triangular factor plus the diagonal jitter that was needed.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    pub l: DMatrix<f64>,
    /// Absolute epsilon added to the diagonal (0 when the input factored clean).
    pub jitter: f64,
}

/// Jitter multipliers tried in order, scaled by the mean diagonal.
const JITTER_LADDER: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];

/// Pivot-tolerant Cholesky for positive SEMIdefinite matrices: a pivot within
/// tolerance of zero zeroes its column provided the remaining residuals agree,
/// so rank-deficient but consistent matrices (including the zero matrix)
/// factor exactly. A negative pivot or inconsistent residual fails.
fn psd_cholesky(a: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d > tol {
            let root = d.sqrt();
            l[(j, j)] = root;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / root;
            }
        } else if d >= -tol {
            // zero pivot: the whole column must already be explained
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > tol * n as f64 {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    Some(l)
}

/// Factor sigma (symmetric, PSD up to noise) as L L^T = sigma + eps I, trying
/// eps over the jitter ladder scaled by the mean diagonal and recording the
/// first epsilon that succeeds.
pub fn safe_cholesky(cov: &DMatrix<f64>) -> Result<CholeskyFactor, RiskError> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(RiskError::Shape(format!("covariance is {}x{}", n, cov.ncols())));
    }
    let mut max_abs: f64 = 0.0;
    let mut max_asym: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            max_abs = max_abs.max(cov[(i, j)].abs());
            max_asym = max_asym.max((cov[(i, j)] - cov[(j, i)]).abs());
        }
    }
    if max_asym > 1e-8 * (1.0 + max_abs) {
        return Err(RiskError::NotSymmetric);
    }

    let mean_diag = (0..n).map(|i| cov[(i, i)]).sum::<f64>() / n.max(1) as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let tol = 1e-12 * scale.max(1e-300);

    for mult in JITTER_LADDER {
        let eps = mult * scale;
        let shifted = if eps == 0.0 {
            cov.clone()
        } else {
            let mut m = cov.clone();
            for i in 0..n {
                m[(i, i)] += eps;
            }
            m
        };
        if let Some(l) = psd_cholesky(&shifted, tol) {
            return Ok(CholeskyFactor { l, jitter: eps });
        }
    }
    Err(RiskError::NotPositiveSemidefinite { max_jitter: JITTER_LADDER[4] * scale })
}

/// Identity of one channel's noise stream: run seed plus a digest of exactly
/// the risk-relevant scenario state (derived shock and lambda).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathKey {
    run_seed: u64,
    state_digest: [u8; 32],
    channel: Channel,
}

impl PathKey {
    pub fn new(run_seed: u64, shock: &MacroShock, lambda: f64, channel: Channel) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(shock.gdp_growth.to_le_bytes());
        hasher.update(shock.inflation.to_le_bytes());
        hasher.update(shock.interest_rate.to_le_bytes());
        hasher.update(lambda.to_le_bytes());
        PathKey { run_seed, state_digest: hasher.finalize().into(), channel }
    }
}

/// Counter-based per-path generator: hashing the key with the path index
/// makes path streams independent of evaluation order, so parallel schedules
/// cannot change results.
pub fn path_rng(key: &PathKey, path_index: u64) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(key.run_seed.to_le_bytes());
    hasher.update(key.state_digest);
    hasher.update([key.channel.tag()]);
    hasher.update(path_index.to_le_bytes());
    let seed: [u8; 32] = hasher.finalize().into();
    ChaCha12Rng::from_seed(seed)
}

/// Daily-rebalanced portfolio return paths for one simulation.
#[derive(Debug, Clone)]
pub struct PortfolioPaths {
    pub portfolio_id: String,
    /// n_paths x horizon daily portfolio returns.
    pub returns: DMatrix<f64>,
}

/// All portfolio paths from one channel simulation plus the jitter used.
#[derive(Debug)]
pub struct SimulationOutput {
    pub portfolios: Vec<PortfolioPaths>,
    pub jitter: f64,
}

/// Simulate `n_paths` of daily asset returns r_t = mu_t + L z_t with i.i.d.
/// standard normal z from the counter-based stream, clamp each asset return
/// to +/- `return_clip`, and account portfolio returns with weights
/// renormalized to target after every day (daily rebalancing), so a
/// single-asset portfolio reproduces that asset's path exactly.
pub fn simulate_paths(
    mu: &DMatrix<f64>,
    cov: &DMatrix<f64>,
    n_paths: usize,
    horizon: usize,
    key: &PathKey,
    return_clip: f64,
    portfolios: &[(String, Vec<f64>)],
) -> Result<SimulationOutput, RiskError> {
    let n_assets = cov.nrows();
    if mu.nrows() != n_assets || mu.ncols() != horizon {
        return Err(RiskError::Shape(format!(
            "drift is {}x{}, expected {}x{}",
            mu.nrows(),
            mu.ncols(),
            n_assets,
            horizon
        )));
    }
    if n_paths == 0 {
        return Err(RiskError::Shape("n_paths must be positive".into()));
    }
    for (id, w) in portfolios {
        if w.len() != n_assets {
            return Err(RiskError::Shape(format!("portfolio {id} has {} weights for {n_assets} assets", w.len())));
        }
    }
    let factor = safe_cholesky(cov)?;
    let l = &factor.l;

    // one row of portfolio returns per path, all portfolios interleaved
    let rows: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(key, p as u64);
            let mut z = DVector::zeros(n_assets);
            let mut row = vec![0.0; portfolios.len() * horizon];
            for t in 0..horizon {
                for i in 0..n_assets {
                    z[i] = StandardNormal.sample(&mut rng);
                }
                let mut r = l * &z;
                for i in 0..n_assets {
                    r[i] = (r[i] + mu[(i, t)]).clamp(-return_clip, return_clip);
                }
                for (pi, (_, w)) in portfolios.iter().enumerate() {
                    let pr: f64 = w.iter().zip(r.iter()).map(|(wi, ri)| wi * ri).sum();
                    row[pi * horizon + t] = pr;
                }
            }
            row
        })
        .collect();

    let mut out = Vec::with_capacity(portfolios.len());
    for (pi, (id, _)) in portfolios.iter().enumerate() {
        let mut m = DMatrix::zeros(n_paths, horizon);
        for (p, row) in rows.iter().enumerate() {
            for t in 0..horizon {
                m[(p, t)] = row[pi * horizon + t];
            }
        }
        out.push(PortfolioPaths { portfolio_id: id.clone(), returns: m });
    }
    Ok(SimulationOutput { portfolios: out, jitter: factor.jitter })
}

/// Empirical tail metrics of one portfolio's simulated paths. Losses are
/// positive; drawdowns are reported negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailMetrics {
    /// 95th percentile of horizon losses (linear interpolation).
    pub var95: f64,
    /// Mean of losses at or above var95.
    pub cvar95: f64,
    /// Mean over paths of the per-path maximum peak-to-trough decline.
    pub mdd: f64,
    /// 95th-percentile (most severe 5%) per-path drawdown, secondary stat.
    pub mdd_p95: f64,
}

/// Compute VaR/CVaR on horizon losses -(prod(1+r_t) - 1) and drawdown stats
/// on the cumulative value curve (initial value 1 counts as the first peak).
pub fn tail_metrics(paths: &DMatrix<f64>) -> Result<TailMetrics, RiskError> {
    let n = paths.nrows();
    if n < 20 {
        return Err(RiskError::TooFewPaths { got: n });
    }
    let h = paths.ncols();
    let mut losses = Vec::with_capacity(n);
    let mut drawdowns = Vec::with_capacity(n);
    for p in 0..n {
        let mut value: f64 = 1.0;
        let mut peak: f64 = 1.0;
        let mut dd: f64 = 0.0;
        for t in 0..h {
            value *= 1.0 + paths[(p, t)];
            peak = peak.max(value);
            dd = dd.min(value / peak - 1.0);
        }
        losses.push(-(value - 1.0));
        drawdowns.push(dd);
    }
    let (var95, cvar95) = stats::var_cvar_95(&mut losses);
    let mdd = stats::mean(&drawdowns);
    drawdowns.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mdd_p95 = stats::quantile_sorted(&drawdowns, 0.05);
    Ok(TailMetrics { var95, cvar95, mdd, mdd_p95 })
}

/// Scenario metrics normalized by a baseline: ratios and percent changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multiples {
    pub var_mult: f64,
    pub cvar_mult: f64,
    pub dvar_pct: f64,
    pub dcvar_pct: f64,
}

pub fn multiples(var95: f64, cvar95: f64, base_var95: f64, base_cvar95: f64) -> Result<Multiples, RiskError> {
    if base_var95 == 0.0 {
        return Err(RiskError::ZeroBaseline { metric: "var95" });
    }
    if base_cvar95 == 0.0 {
        return Err(RiskError::ZeroBaseline { metric: "cvar95" });
    }
    Ok(Multiples {
        var_mult: var95 / base_var95,
        cvar_mult: cvar95 / base_cvar95,
        dvar_pct: 100.0 * (var95 - base_var95) / base_var95.abs(),
        dcvar_pct: 100.0 * (cvar95 - base_cvar95) / base_cvar95.abs(),
    })
}

/// One portfolio entering the engine: weights aligned to the covariance asset
/// order plus that portfolio's baseline tail metrics.
#[derive(Debug, Clone)]
pub struct PortfolioRiskSpec {
    pub portfolio_id: String,
    pub weights: Vec<f64>,
    pub base_var95: f64,
    pub base_cvar95: f64,
}

/// Final per-(scenario, portfolio, channel) risk row.
#[derive(Debug, Clone, Serialize)]
pub struct RiskReport {
    pub scenario_hash: String,
    pub portfolio_id: String,
    pub channel: Channel,
    pub metrics: TailMetrics,
    pub multiples: Multiples,
    pub baseline_id: String,
    pub eps_jitter: f64,
    pub seed: u64,
}

/// Run all three channels for one accepted scenario.
///
/// Channel composition: the vol channel simulates zero drift under the
/// inflation-scaled scenario covariance; the linear channel simulates the
/// decayed linear factor drift under the scenario covariance; the nonlinear
/// channel adds the capped, amplified polynomial drift on top of the linear
/// drift. The scenario covariance is the lambda-mix of calm and crisis.
pub fn run_channels(
    audited: &AuditedScenario,
    betas: &BetaSet,
    covpair: &CovariancePair,
    portfolios: &[PortfolioRiskSpec],
    cfg: &RunConfig,
) -> Result<Vec<RiskReport>, RiskError> {
    if audited.scenario.plausibility_ok != 1 {
        return Err(RiskError::NotAccepted);
    }
    if betas.tickers != covpair.tickers {
        return Err(RiskError::Shape("beta set and covariance pair cover different assets".into()));
    }
    let n_assets = covpair.tickers.len();
    let horizon = cfg.horizon_days;
    let params = &cfg.channel_params;
    let shock = &audited.shock;
    let lambda = audited.scenario.lambda;

    let cov_scen = mix_covariance(covpair, lambda);
    let df = macro_to_factor(shock);

    // The linear betas are OLS exposures to the raw factor scores, so the
    // stress intensities enter in score units here (passing unit factor_std;
    // the sigma-normalized form is equivalent only with betas refit on
    // standardized scores, where the sigmas cancel) and the drift is applied
    // in the adverse direction: deeper recessions drag positively exposed
    // assets down rather than up.
    let score_units = [1.0, 1.0, 1.0];
    let mut mu_lin = linear_drift(betas, &df, &score_units, horizon, params.drift_decay)?;
    mu_lin.neg_mut();
    if cfg.mu_base_daily != 0.0 {
        mu_lin.add_scalar_mut(cfg.mu_base_daily);
    }
    let mu_nonlin = nonlinear_drift(
        betas,
        &df,
        lambda,
        audited.scenario.rag,
        audited.scenario.use_news,
        params,
        horizon,
    )?;

    let weight_spec: Vec<(String, Vec<f64>)> =
        portfolios.iter().map(|p| (p.portfolio_id.clone(), p.weights.clone())).collect();

    let mut reports = Vec::with_capacity(portfolios.len() * Channel::ALL.len());
    for channel in Channel::ALL {
        let (mu, cov) = match channel {
            Channel::Vol => (DMatrix::zeros(n_assets, horizon), scale_cov_for_vol_channel(&cov_scen, shock, params)),
            Channel::Linear => (mu_lin.clone(), cov_scen.clone()),
            Channel::Nonlinear => (&mu_lin + &mu_nonlin, cov_scen.clone()),
        };
        let key = PathKey::new(cfg.seed, shock, lambda, channel);
        let sim = simulate_paths(&mu, &cov, cfg.n_paths, horizon, &key, params.return_clip, &weight_spec)?;
        for (spec, paths) in portfolios.iter().zip(&sim.portfolios) {
            let metrics = tail_metrics(&paths.returns)?;
            let mult = multiples(metrics.var95, metrics.cvar95, spec.base_var95, spec.base_cvar95)?;
            reports.push(RiskReport {
                scenario_hash: audited.scenario.scenario_hash.clone(),
                portfolio_id: spec.portfolio_id.clone(),
                channel,
                metrics,
                multiples: mult,
                baseline_id: cfg.baseline_id.clone(),
                eps_jitter: sim.jitter,
                seed: cfg.seed,
            });
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn mat(n: usize, vals: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, vals)
    }

    #[test]
    fn mixing_is_exact_at_endpoints_and_blends_between() {
        let pair = CovariancePair {
            tickers: vec!["A".into()],
            calm: mat(1, &[4.0]),
            crisis: mat(1, &[16.0]),
        };
        assert_eq!(mix_covariance(&pair, 0.0), pair.calm);
        assert_eq!(mix_covariance(&pair, 1.0), pair.crisis);
        assert_abs_diff_eq!(mix_covariance(&pair, 0.5)[(0, 0)], 10.0, epsilon = 1e-15);
    }

    #[test]
    fn mixed_covariance_stays_between_inputs_elementwise() {
        let pair = CovariancePair {
            tickers: vec!["A".into(), "B".into()],
            calm: mat(2, &[1.0, 0.2, 0.2, 2.0]),
            crisis: mat(2, &[3.0, -0.5, -0.5, 5.0]),
        };
        for lambda in [0.1, 0.37, 0.91] {
            let m = mix_covariance(&pair, lambda);
            for i in 0..2 {
                for j in 0..2 {
                    let lo = pair.calm[(i, j)].min(pair.crisis[(i, j)]);
                    let hi = pair.calm[(i, j)].max(pair.crisis[(i, j)]);
                    assert!(m[(i, j)] >= lo - 1e-15 && m[(i, j)] <= hi + 1e-15);
                    assert_abs_diff_eq!(m[(i, j)], m[(j, i)], epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn vol_scaling_is_pure_variance_multiplier() {
        let cov = mat(2, &[0.01, 0.004, 0.004, 0.02]);
        let params = ChannelParams::default();

        let unchanged = scale_cov_for_vol_channel(&cov, &MacroShock::new(-2.0, -1.0, 0.5), &params);
        assert_eq!(unchanged, cov);

        let scaled = scale_cov_for_vol_channel(&cov, &MacroShock::new(-2.0, 3.0, 0.5), &params);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(scaled[(i, j)], cov[(i, j)] * 3.0625, epsilon = 1e-15);
            }
        }
        // correlation is untouched by a uniform variance multiplier
        let corr = |m: &DMatrix<f64>| m[(0, 1)] / (m[(0, 0)] * m[(1, 1)]).sqrt();
        assert_abs_diff_eq!(corr(&scaled), corr(&cov), epsilon = 1e-15);
    }

    #[test]
    fn cholesky_identity_needs_no_jitter() {
        let f = safe_cholesky(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(f.jitter, 0.0);
        assert_eq!(f.l, DMatrix::identity(3, 3));
    }

    #[test]
    fn cholesky_zero_matrix_factors_exactly() {
        let f = safe_cholesky(&DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(f.jitter, 0.0);
        assert!(f.l.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cholesky_rank_one_reconstructs() {
        let v = DVector::from_vec(vec![0.3, -0.7, 0.2, 0.5]);
        let cov = &v * v.transpose();
        let scale = (0..4).map(|i| cov[(i, i)]).sum::<f64>() / 4.0;
        let f = safe_cholesky(&cov).unwrap();
        assert!(f.jitter <= 1e-10 * scale, "jitter {}", f.jitter);
        let recon = &f.l * f.l.transpose();
        let err = (&recon - &cov).abs().max();
        assert!(err <= 1e-8, "reconstruction error {err}");
    }

    #[test]
    fn cholesky_slightly_indefinite_succeeds_via_ladder() {
        // Q diag(1, 0.5, -1e-11) Q^T for a fixed rotation Q
        let theta: f64 = 0.7;
        let (s, c) = theta.sin_cos();
        let q = mat(3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5, -1e-11]));
        let cov = &q * d * q.transpose();
        let f = safe_cholesky(&cov).unwrap();
        assert!(f.jitter > 0.0, "needs some jitter");
        let recon = &f.l * f.l.transpose();
        let err = (&recon - &cov).abs().max();
        assert!(err <= 1e-8, "reconstruction error {err}");
    }

    #[test]
    fn cholesky_rejects_asymmetric_and_strongly_indefinite() {
        let asym = mat(2, &[1.0, 0.5, -0.5, 1.0]);
        assert!(matches!(safe_cholesky(&asym), Err(RiskError::NotSymmetric)));

        let indef = mat(2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(safe_cholesky(&indef), Err(RiskError::NotPositiveSemidefinite { .. })));
    }

    fn solo(id: &str, n: usize, hot: usize) -> (String, Vec<f64>) {
        let mut w = vec![0.0; n];
        w[hot] = 1.0;
        (id.to_string(), w)
    }

    #[test]
    fn degenerate_simulation_is_exactly_zero() {
        let mu = DMatrix::zeros(2, 5);
        let cov = DMatrix::zeros(2, 2);
        let key = PathKey::new(42, &MacroShock::new(0.0, 0.0, 0.0), 0.0, Channel::Vol);
        let sim = simulate_paths(&mu, &cov, 50, 5, &key, 0.2, &[solo("a", 2, 0)]).unwrap();
        assert!(sim.portfolios[0].returns.iter().all(|v| *v == 0.0));
        assert_eq!(sim.jitter, 0.0);
    }

    #[test]
    fn deterministic_drift_compounds_in_closed_form() {
        let c = [0.001, -0.002];
        let mut mu = DMatrix::zeros(2, 63);
        for t in 0..63 {
            mu[(0, t)] = c[0];
            mu[(1, t)] = c[1];
        }
        let cov = DMatrix::zeros(2, 2);
        let key = PathKey::new(7, &MacroShock::new(-1.0, 0.0, 0.0), 0.3, Channel::Linear);
        let w = vec![0.6, 0.4];
        let sim = simulate_paths(&mu, &cov, 30, 63, &key, 0.2, &[("mix".into(), w.clone())]).unwrap();
        let daily = 0.6 * c[0] + 0.4 * c[1];
        for p in 0..30 {
            for t in 0..63 {
                assert_abs_diff_eq!(sim.portfolios[0].returns[(p, t)], daily, epsilon = 1e-15);
            }
        }
        let metrics = tail_metrics(&sim.portfolios[0].returns).unwrap();
        let value = (1.0 + daily).powi(63);
        assert_abs_diff_eq!(metrics.var95, -(value - 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(metrics.cvar95, metrics.var95, epsilon = 1e-15);
    }

    fn small_cov() -> DMatrix<f64> {
        mat(2, &[0.0001, 0.00003, 0.00003, 0.00025])
    }

    #[test]
    fn same_key_reproduces_bit_identical_paths() {
        let mu = DMatrix::zeros(2, 10);
        let cov = small_cov();
        let key = PathKey::new(42, &MacroShock::new(-1.4, 3.0, 4.0), 0.59, Channel::Nonlinear);
        let ports = [solo("a", 2, 0), solo("b", 2, 1)];
        let s1 = simulate_paths(&mu, &cov, 200, 10, &key, 0.2, &ports).unwrap();
        let s2 = simulate_paths(&mu, &cov, 200, 10, &key, 0.2, &ports).unwrap();
        for (a, b) in s1.portfolios.iter().zip(&s2.portfolios) {
            assert_eq!(a.returns, b.returns);
        }
    }

    #[test]
    fn path_streams_differ_by_channel_and_index_not_by_text() {
        let shock = MacroShock::new(-1.4, 3.0, 4.0);
        let k_lin = PathKey::new(42, &shock, 0.59, Channel::Linear);
        let k_non = PathKey::new(42, &shock, 0.59, Channel::Nonlinear);
        let mut a = path_rng(&k_lin, 7);
        let mut b = path_rng(&k_lin, 7);
        let mut c = path_rng(&k_lin, 8);
        let mut d = path_rng(&k_non, 7);
        let draw = |r: &mut ChaCha12Rng| (0..4).map(|_| r.random::<u64>()).collect::<Vec<_>>();
        assert_eq!(draw(&mut a), draw(&mut b), "same key and index");
        assert_ne!(draw(&mut a), draw(&mut c), "different path index");
        assert_ne!(draw(&mut b), draw(&mut d), "different channel");
        // keys carry no text or flags at all: identical state, identical key
        assert_eq!(k_lin, PathKey::new(42, &MacroShock::new(-1.4, 3.0, 4.0), 0.59, Channel::Linear));
    }

    #[test]
    fn portfolio_accounting_is_linear_in_weights() {
        let mut mu = DMatrix::zeros(2, 12);
        for t in 0..12 {
            mu[(0, t)] = 0.0005;
            mu[(1, t)] = -0.0002;
        }
        let key = PathKey::new(11, &MacroShock::new(-2.0, 1.0, 0.5), 0.4, Channel::Linear);
        let ports = [
            solo("a", 2, 0),
            solo("b", 2, 1),
            ("c".to_string(), vec![0.6, 0.4]),
        ];
        let sim = simulate_paths(&mu, &small_cov(), 100, 12, &key, 0.2, &ports).unwrap();
        let (a, b, c) = (&sim.portfolios[0].returns, &sim.portfolios[1].returns, &sim.portfolios[2].returns);
        for p in 0..100 {
            for t in 0..12 {
                assert_abs_diff_eq!(c[(p, t)], 0.6 * a[(p, t)] + 0.4 * b[(p, t)], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn returns_respect_the_clip() {
        let cov = mat(1, &[4.0]); // sd 200% daily, clip must bind often
        let mu = DMatrix::zeros(1, 8);
        let key = PathKey::new(3, &MacroShock::new(0.0, 0.0, 0.0), 0.0, Channel::Vol);
        let sim = simulate_paths(&mu, &cov, 300, 8, &key, 0.2, &[solo("a", 1, 0)]).unwrap();
        let m = &sim.portfolios[0].returns;
        assert!(m.iter().all(|v| v.abs() <= 0.2));
        assert!(m.iter().any(|v| v.abs() == 0.2), "clip should bind somewhere");
    }

    #[test]
    fn tail_metrics_match_sort_oracle_on_synthetic_losses() {
        // single-day paths with returns -1%..-100% -> losses exactly 1..100%
        let mut paths = DMatrix::zeros(100, 1);
        for p in 0..100 {
            paths[(p, 0)] = -((p + 1) as f64) / 100.0;
        }
        let m = tail_metrics(&paths).unwrap();
        assert_abs_diff_eq!(m.var95, 0.9505, epsilon = 1e-12);
        assert_abs_diff_eq!(m.cvar95, 0.98, epsilon = 1e-12);
        // drawdown of a one-step decline is the loss itself, negated
        assert_abs_diff_eq!(m.mdd, -0.505, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mdd_p95, -0.9505, epsilon = 1e-12);
    }

    #[test]
    fn monotone_paths_have_zero_drawdown_and_identical_paths_collapse_tails() {
        let mut up = DMatrix::zeros(25, 6);
        for p in 0..25 {
            for t in 0..6 {
                up[(p, t)] = 0.01;
            }
        }
        let m = tail_metrics(&up).unwrap();
        assert_eq!(m.mdd, 0.0);
        assert_eq!(m.mdd_p95, 0.0);
        assert_abs_diff_eq!(m.cvar95, m.var95, epsilon = 1e-15);
        assert!(m.var95 < 0.0, "gains show as negative losses");
    }

    #[test]
    fn multiples_match_reference_ratios() {
        let m = multiples(0.0716, 0.08, 0.0491, 0.08).unwrap();
        assert_abs_diff_eq!(m.var_mult, 0.0716 / 0.0491, epsilon = 1e-15);
        assert!((m.var_mult - 1.458).abs() < 5e-4);
        assert_abs_diff_eq!(m.cvar_mult, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.dcvar_pct, 0.0, epsilon = 1e-15);

        let six = multiples(0.0283 * 6.0, 0.1, 0.0283, 0.1).unwrap();
        assert_abs_diff_eq!(six.dvar_pct, 500.0, epsilon = 1e-9);

        assert!(matches!(
            multiples(0.1, 0.1, 0.0, 0.1),
            Err(RiskError::ZeroBaseline { metric: "var95" })
        ));
    }

    fn toy_betas() -> BetaSet {
        BetaSet {
            tickers: vec!["A".into(), "B".into()],
            linear: DMatrix::from_row_slice(2, 3, &[-0.4, 0.1, -0.2, 0.2, -0.3, 0.5]),
            poly: DMatrix::from_row_slice(
                2,
                9,
                &[
                    -0.4, 0.1, -0.2, 0.8, -0.7, 0.6, 0.1, -0.2, 0.3, //
                    0.2, -0.3, 0.5, -0.4, 0.3, -0.2, 0.05, 0.1, -0.05,
                ],
            ),
            factor_std: [0.01, 0.004, 0.006],
            drift_cap_daily: 0.005,
            ridge_fallback: vec![],
        }
    }

    fn toy_pair() -> CovariancePair {
        CovariancePair {
            tickers: vec!["A".into(), "B".into()],
            calm: mat(2, &[0.0001, 0.00002, 0.00002, 0.00008]),
            crisis: mat(2, &[0.0009, 0.0004, 0.0004, 0.0007]),
        }
    }

    fn audited_with_flags(rag: bool, use_news: bool) -> AuditedScenario {
        use crate::ingest::CountryBaseline;
        use crate::model::Scenario;
        use crate::plausibility::{audit_scenario, AuditConfig, LexicalRegimeClassifier};

        let b = CountryBaseline {
            country: "Canada".into(),
            gdp_growth: 1.1,
            inflation: 1.9,
            interest_rate: 4.25,
            vintage: "t".into(),
        };
        let mut candidate = Scenario::draft(
            "Canada",
            "Stagflation squeeze",
            MacroShock::new(-0.3, 4.9, 8.25),
            "A sharp imported-cost shock forces tightening into a downturn; volatility and credit stress spread across sectors and the recession deepens.",
            &["banks", "housing", "retail"],
        );
        candidate.rag = rag;
        candidate.use_news = use_news;
        candidate.provider = "fixture".into();
        let audited = audit_scenario(&candidate, &b, &LexicalRegimeClassifier, &AuditConfig::default());
        assert!(audited.accepted);
        audited
    }

    fn engine_cfg(n_paths: usize) -> RunConfig {
        let mut cfg: RunConfig = serde_json::from_value(serde_json::json!({
            "countries": ["Canada"],
            "model_id": "m",
            "rag": true,
            "use_news": true,
            "prompt_variants": ["v01_baseline_severe"],
        }))
        .unwrap();
        cfg.n_paths = n_paths;
        cfg
    }

    fn specs() -> Vec<PortfolioRiskSpec> {
        vec![
            PortfolioRiskSpec { portfolio_id: "A".into(), weights: vec![0.7, 0.3], base_var95: 0.03, base_cvar95: 0.045 },
            PortfolioRiskSpec { portfolio_id: "B".into(), weights: vec![0.5, 0.5], base_var95: 0.028, base_cvar95: 0.041 },
        ]
    }

    #[test]
    fn linear_channel_is_bitwise_blind_to_context_flags() {
        let cfg = engine_cfg(400);
        let betas = toy_betas();
        let pair = toy_pair();
        let ports = specs();

        let r_off = run_channels(&audited_with_flags(false, false), &betas, &pair, &ports, &cfg).unwrap();
        let r_on = run_channels(&audited_with_flags(true, true), &betas, &pair, &ports, &cfg).unwrap();

        let pick = |rs: &[RiskReport], ch: Channel, pid: &str| -> TailMetrics {
            rs.iter().find(|r| r.channel == ch && r.portfolio_id == pid).unwrap().metrics
        };
        for pid in ["A", "B"] {
            let off = pick(&r_off, Channel::Linear, pid);
            let on = pick(&r_on, Channel::Linear, pid);
            assert_eq!(off, on, "linear channel must ignore rag/news flags");

            let voff = pick(&r_off, Channel::Vol, pid);
            let von = pick(&r_on, Channel::Vol, pid);
            assert_eq!(voff, von, "vol channel must ignore rag/news flags");

            let noff = pick(&r_off, Channel::Nonlinear, pid);
            let non = pick(&r_on, Channel::Nonlinear, pid);
            assert_ne!(noff, non, "nonlinear channel must respond to amplification");
        }

        // scenario hashes still differ, because the flags are part of content
        assert_ne!(r_off[0].scenario_hash, r_on[0].scenario_hash);
    }

    #[test]
    fn run_channels_is_deterministic_and_tails_are_ordered() {
        let cfg = engine_cfg(400);
        let betas = toy_betas();
        let pair = toy_pair();
        let ports = specs();
        let audited = audited_with_flags(true, false);

        let r1 = run_channels(&audited, &betas, &pair, &ports, &cfg).unwrap();
        let r2 = run_channels(&audited, &betas, &pair, &ports, &cfg).unwrap();
        assert_eq!(r1.len(), 6);
        for (a, b) in r1.iter().zip(&r2) {
            assert_eq!(a.metrics, b.metrics);
            assert_eq!(a.multiples, b.multiples);
        }
        for r in &r1 {
            assert!(r.metrics.cvar95 >= r.metrics.var95, "cvar >= var on {:?}", r.channel);
            assert!(r.metrics.mdd <= 0.0);
            assert!(r.metrics.mdd_p95 <= r.metrics.mdd, "p95 drawdown at least as severe as mean");
        }
    }

    #[test]
    fn rejected_scenarios_are_refused() {
        let cfg = engine_cfg(50);
        let mut audited = audited_with_flags(false, false);
        audited.scenario.plausibility_ok = 0;
        assert!(matches!(
            run_channels(&audited, &toy_betas(), &toy_pair(), &specs(), &cfg),
            Err(RiskError::NotAccepted)
        ));
    }
}
