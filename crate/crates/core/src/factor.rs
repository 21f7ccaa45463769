//! Three-factor PCA model over the anchor ETFs, macro-shock mapping, OLS
//! betas (linear and capped polynomial), and the two drift builders.
//!
//! Component signs are pinned by an anchor contract so fitted loadings are
//! reproducible across runs: the first component loads positively on equity
//! (SPY), the second on gold (GLD), the third on rates (IEF). The linear
//! drift builder takes only the factor shock and fitted statistics, so its
//! output is structurally independent of retrieval flags, headline flags,
//! lambda, and rationale text.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::ingest::ReturnsWindow;
use crate::model::{ChannelParams, MacroShock};

/// Component-to-ticker sign anchors: PC1 -> SPY, PC2 -> GLD, PC3 -> IEF.
pub const ANCHOR_ORDER: [&str; 3] = ["SPY", "GLD", "IEF"];

/// Number of polynomial drift basis terms.
pub const POLY_TERMS: usize = 9;

const RIDGE_EPS: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("need at least {need} return rows, got {got}")]
    TooFewRows { got: usize, need: usize },
    #[error("factor fit expects exactly the 3 anchor tickers, got {got} columns")]
    WrongColumnCount { got: usize },
    #[error("anchor ticker {0} missing from returns window")]
    MissingAnchor(String),
    #[error("covariance is rank deficient; column {ticker} is degenerate")]
    DegenerateColumn { ticker: String },
    #[error("factor {component} has zero standard deviation")]
    ZeroFactorStd { component: usize },
    #[error("asset returns and factor scores cover different dates")]
    DateMismatch,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Fitted principal components of the anchor-ETF return panel.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PcaFactors {
    /// Trading dates of the fitted window, one per score row.
    pub dates: Vec<chrono::NaiveDate>,
    /// Column order of the fitted window (matches `loadings` columns).
    pub tickers: Vec<String>,
    /// Per-column sample means removed before the eigen-decomposition.
    pub mean: Vec<f64>,
    /// Rows are components PC1..PC3, columns follow `tickers`.
    pub loadings: DMatrix<f64>,
    /// Descending eigenvalues of the sample covariance.
    pub eigenvalues: [f64; 3],
    /// Projected factor scores, one row per input date.
    pub scores: DMatrix<f64>,
    /// Sample standard deviation (ddof 1) of each score column.
    pub factor_std: [f64; 3],
    /// Seed recorded for provenance; the decomposition itself is exact.
    pub seed: u64,
}

fn column_mean(data: &DMatrix<f64>, j: usize) -> f64 {
    data.column(j).iter().sum::<f64>() / data.nrows() as f64
}

fn column_std_ddof1(data: &DMatrix<f64>, j: usize) -> f64 {
    let n = data.nrows();
    let mean = column_mean(data, j);
    let ss: f64 = data.column(j).iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Fit the three principal components of the sample covariance of `window`,
/// order them by descending eigenvalue, and flip signs to satisfy the anchor
/// contract. A rank-deficient covariance is an error naming the ticker with
/// the largest weight in the null direction.
pub fn fit_pca(window: &ReturnsWindow, seed: u64) -> Result<PcaFactors, FactorError> {
    let t = window.data.nrows();
    let n = window.data.ncols();
    if n != 3 {
        return Err(FactorError::WrongColumnCount { got: n });
    }
    if t < 30 {
        return Err(FactorError::TooFewRows { got: t, need: 30 });
    }
    for anchor in ANCHOR_ORDER {
        if !window.tickers.iter().any(|s| s == anchor) {
            return Err(FactorError::MissingAnchor(anchor.to_string()));
        }
    }

    let mean: Vec<f64> = (0..3).map(|j| column_mean(&window.data, j)).collect();
    let mut centered = window.data.clone();
    for j in 0..3 {
        for i in 0..t {
            centered[(i, j)] -= mean[j];
        }
    }
    let cov = centered.transpose() * &centered / (t as f64 - 1.0);

    let eig = cov.symmetric_eigen();
    // sort components by descending eigenvalue
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let eigenvalues = [
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    ];
    if eigenvalues[2] <= 1e-12 * eigenvalues[0].max(f64::MIN_POSITIVE) {
        // the near-null eigenvector points at the redundant direction
        let null_vec = eig.eigenvectors.column(order[2]);
        let mut worst = 0usize;
        for i in 0..3 {
            if null_vec[i].abs() > null_vec[worst].abs() {
                worst = i;
            }
        }
        return Err(FactorError::DegenerateColumn { ticker: window.tickers[worst].clone() });
    }

    let mut loadings = DMatrix::zeros(3, 3);
    for (k, &src) in order.iter().enumerate() {
        let anchor_col = window
            .tickers
            .iter()
            .position(|s| s == ANCHOR_ORDER[k])
            .expect("anchor presence checked above");
        let flip = eig.eigenvectors[(anchor_col, src)] < 0.0;
        for j in 0..3 {
            let v = eig.eigenvectors[(j, src)];
            loadings[(k, j)] = if flip { -v } else { v };
        }
    }

    let scores = &centered * loadings.transpose();
    let mut factor_std = [0.0; 3];
    for k in 0..3 {
        factor_std[k] = column_std_ddof1(&scores, k);
        if !(factor_std[k] > 0.0) {
            return Err(FactorError::ZeroFactorStd { component: k + 1 });
        }
    }

    Ok(PcaFactors {
        dates: window.dates.clone(),
        tickers: window.tickers.clone(),
        mean,
        loadings,
        eigenvalues,
        scores,
        factor_std,
        seed,
    })
}

/// Map a macro shock (percentage points) to the non-negative factor shock:
/// growth enters through its downside, inflation and rates through their
/// upside, all rescaled to decimal units.
pub fn macro_to_factor(shock: &MacroShock) -> [f64; 3] {
    [
        (-shock.gdp_growth / 100.0).max(0.0),
        (shock.inflation / 100.0).max(0.0),
        (shock.interest_rate / 100.0).max(0.0),
    ]
}

/// Polynomial drift basis at a standardized factor shock:
/// linear terms, squares, then cross-terms.
pub fn poly_basis(z: &[f64; 3]) -> [f64; POLY_TERMS] {
    [
        z[0],
        z[1],
        z[2],
        z[0] * z[0],
        z[1] * z[1],
        z[2] * z[2],
        z[0] * z[1],
        z[0] * z[2],
        z[1] * z[2],
    ]
}

/// Per-asset regression coefficients on the factor scores.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BetaSet {
    pub tickers: Vec<String>,
    /// assets x 3, intercept fitted and discarded.
    pub linear: DMatrix<f64>,
    /// assets x 9 polynomial-basis coefficients, intercept discarded.
    pub poly: DMatrix<f64>,
    /// Score standard deviations carried from the factor fit.
    pub factor_std: [f64; 3],
    /// Per-asset per-day cap on nonlinear drift magnitude (pre-amplification).
    pub drift_cap_daily: f64,
    /// Tickers whose normal equations needed the tiny ridge regularizer.
    pub ridge_fallback: Vec<String>,
}

/// Solve X'X b = X'y, falling back to a ridge-regularized system when the
/// Gram matrix is not positive definite. Returns (solution, used_ridge).
fn solve_ols(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> (DVector<f64>, bool) {
    if let Some(chol) = Cholesky::new(gram.clone()) {
        return (chol.solve(rhs), false);
    }
    let p = gram.nrows();
    let ridged = gram + DMatrix::identity(p, p) * RIDGE_EPS;
    let chol = Cholesky::new(ridged).expect("ridge-shifted Gram matrix is positive definite");
    (chol.solve(rhs), true)
}

/// Full-sample OLS of every asset's returns on the factor scores (linear) and
/// on the 9-term polynomial basis, intercepts included in the fit and dropped
/// from the stored coefficients.
pub fn fit_betas(
    asset_returns: &ReturnsWindow,
    factors: &PcaFactors,
    drift_cap_daily: f64,
) -> Result<BetaSet, FactorError> {
    let t = asset_returns.data.nrows();
    if t != factors.scores.nrows() || asset_returns.dates != factors.dates {
        return Err(FactorError::DateMismatch);
    }
    let n = asset_returns.data.ncols();
    if n == 0 {
        return Err(FactorError::Shape("no assets to fit".into()));
    }

    let mut x_lin = DMatrix::zeros(t, 4);
    let mut x_poly = DMatrix::zeros(t, 1 + POLY_TERMS);
    for i in 0..t {
        x_lin[(i, 0)] = 1.0;
        x_poly[(i, 0)] = 1.0;
        let z = [factors.scores[(i, 0)], factors.scores[(i, 1)], factors.scores[(i, 2)]];
        for k in 0..3 {
            x_lin[(i, 1 + k)] = z[k];
        }
        for (k, b) in poly_basis(&z).iter().enumerate() {
            x_poly[(i, 1 + k)] = *b;
        }
    }
    let gram_lin = x_lin.transpose() * &x_lin;
    let gram_poly = x_poly.transpose() * &x_poly;

    let mut linear = DMatrix::zeros(n, 3);
    let mut poly = DMatrix::zeros(n, POLY_TERMS);
    let mut ridge_fallback = Vec::new();
    for a in 0..n {
        let y = DVector::from_iterator(t, asset_returns.data.column(a).iter().copied());
        let (b_lin, r1) = solve_ols(&gram_lin, &(x_lin.transpose() * &y));
        let (b_poly, r2) = solve_ols(&gram_poly, &(x_poly.transpose() * &y));
        if r1 || r2 {
            ridge_fallback.push(asset_returns.tickers[a].clone());
        }
        for k in 0..3 {
            linear[(a, k)] = b_lin[1 + k];
        }
        for k in 0..POLY_TERMS {
            poly[(a, k)] = b_poly[1 + k];
        }
    }

    Ok(BetaSet {
        tickers: asset_returns.tickers.clone(),
        linear,
        poly,
        factor_std: factors.factor_std,
        drift_cap_daily,
        ridge_fallback,
    })
}

fn standardized_shock(df: &[f64; 3], factor_std: &[f64; 3]) -> Result<[f64; 3], FactorError> {
    let mut z = [0.0; 3];
    for k in 0..3 {
        if !(factor_std[k] > 0.0) {
            return Err(FactorError::ZeroFactorStd { component: k + 1 });
        }
        z[k] = df[k] / factor_std[k];
    }
    Ok(z)
}

fn decay_profile(day1: &[f64], horizon_days: usize, decay: f64) -> DMatrix<f64> {
    let n = day1.len();
    let mut drift = DMatrix::zeros(n, horizon_days);
    for i in 0..n {
        let mut level = day1[i];
        for t in 0..horizon_days {
            drift[(i, t)] = level;
            level *= decay;
        }
    }
    drift
}

/// Linear scenario drift: the standardized factor shock maps through the
/// linear betas, is spread evenly over the horizon, and decays geometrically
/// (day-t drift = day-1 drift x decay^(t-1)).
pub fn linear_drift(
    betas: &BetaSet,
    df: &[f64; 3],
    factor_std: &[f64; 3],
    horizon_days: usize,
    decay: f64,
) -> Result<DMatrix<f64>, FactorError> {
    if horizon_days == 0 {
        return Err(FactorError::Shape("horizon must be positive".into()));
    }
    let z = standardized_shock(df, factor_std)?;
    let day1: Vec<f64> = (0..betas.linear.nrows())
        .map(|i| (0..3).map(|k| betas.linear[(i, k)] * z[k]).sum::<f64>() / horizon_days as f64)
        .collect();
    Ok(decay_profile(&day1, horizon_days, decay))
}

/// Nonlinear scenario drift: polynomial basis at the standardized shock,
/// per-asset daily value capped at `drift_cap_daily` BEFORE the amplification
/// term `1 + amp_lambda*lambda + amp_rag*1_rag + amp_news*1_news`, then the
/// same geometric decay as the linear channel.
pub fn nonlinear_drift(
    betas: &BetaSet,
    df: &[f64; 3],
    lambda: f64,
    rag: bool,
    use_news: bool,
    params: &ChannelParams,
    horizon_days: usize,
) -> Result<DMatrix<f64>, FactorError> {
    if horizon_days == 0 {
        return Err(FactorError::Shape("horizon must be positive".into()));
    }
    let z = standardized_shock(df, &betas.factor_std)?;
    let basis = poly_basis(&z);
    let amp = params.amplification(lambda, rag, use_news);
    let cap = betas.drift_cap_daily;
    let day1: Vec<f64> = (0..betas.poly.nrows())
        .map(|i| {
            let raw: f64 =
                (0..POLY_TERMS).map(|k| betas.poly[(i, k)] * basis[k]).sum::<f64>() / horizon_days as f64;
            raw.clamp(-cap, cap) * amp
        })
        .collect();
    Ok(decay_profile(&day1, horizon_days, params.drift_decay))
}
