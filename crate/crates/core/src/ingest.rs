//! Frozen input loaders: adjusted-close price panels, country macro baselines,
//! and fixed-size headline snapshots.
//!
//! A price panel may have tickers that start trading later than others; cells
//! before a ticker's first observation are absent by design, but a gap inside
//! the active range is a hard error. Headline snapshots always carry exactly
//! [`HEADLINE_ROWS`] rows: deduplicated, sorted, truncated, then padded with
//! sentinel rows that never reach a prompt.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::DateWindow;

/// Every headline snapshot is normalized to exactly this many rows.
pub const HEADLINE_ROWS: usize = 50;

/// Title prefix marking padded (synthetic) headline rows.
pub const PAD_PREFIX: &str = "[PAD-";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {msg}")]
    BadRow { path: PathBuf, line: u64, msg: String },
    #[error("duplicate price row for ({date}, {ticker})")]
    DuplicateRow { date: NaiveDate, ticker: String },
    #[error("non-positive price {value} for ({date}, {ticker})")]
    NonPositivePrice { date: NaiveDate, ticker: String, value: f64 },
    #[error("ticker {ticker} is missing {date} inside its active range")]
    GapInActiveRange { ticker: String, date: NaiveDate },
    #[error("price panel is empty")]
    EmptyPanel,
    #[error("unknown ticker {0}")]
    UnknownTicker(String),
    #[error("ticker {ticker} does not cover {start}..={end}")]
    IncompleteWindow { ticker: String, start: NaiveDate, end: NaiveDate },
    #[error("window {start}..={end} holds fewer than two trading days")]
    WindowTooShort { start: NaiveDate, end: NaiveDate },
    #[error("duplicate WEO baseline for {0}")]
    DuplicateCountry(String),
    #[error("no WEO baseline for {0}")]
    MissingCountry(String),
    #[error("headline file {path}: {msg}")]
    BadSnapshot { path: PathBuf, msg: String },
    #[error("json parse on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Macro projections for one country from a frozen WEO-style vintage.
/// `interest_rate` is the short-term policy-rate level in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryBaseline {
    pub country: String,
    pub gdp_growth: f64,
    pub inflation: f64,
    pub interest_rate: f64,
    pub vintage: String,
}

/// Load baselines from a JSON array, rejecting duplicate countries.
pub fn load_weo_baselines(path: &Path) -> Result<Vec<CountryBaseline>, IngestError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let rows: Vec<CountryBaseline> =
        serde_json::from_str(&text).map_err(|source| IngestError::Json { path: path.to_path_buf(), source })?;
    let mut seen = BTreeSet::new();
    for row in &rows {
        if !seen.insert(row.country.clone()) {
            return Err(IngestError::DuplicateCountry(row.country.clone()));
        }
    }
    Ok(rows)
}

/// Find one country's baseline.
pub fn baseline_for<'a>(rows: &'a [CountryBaseline], country: &str) -> Result<&'a CountryBaseline, IngestError> {
    rows.iter()
        .find(|b| b.country == country)
        .ok_or_else(|| IngestError::MissingCountry(country.to_string()))
}

/// Dense daily returns over a window: `data[(t, i)]` is the day-`t` value for
/// `tickers[i]`, with `dates[t]` the date the return accrues to.
#[derive(Debug, Clone)]
pub struct ReturnsWindow {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub data: DMatrix<f64>,
}

/// Adjusted-close panel on a shared trading calendar. Cells outside a ticker's
/// active range are absent; cells inside it are guaranteed present and positive.
#[derive(Debug, Clone)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    tickers: Vec<String>,
    /// Row-major [ticker][date]; NaN marks absent cells outside active ranges.
    cells: Vec<f64>,
    /// Inclusive (first, last) date index per ticker.
    active: Vec<(usize, usize)>,
}

impl PricePanel {
    /// Assemble a panel from (date, ticker, adjusted close) rows in any order.
    pub fn from_rows(rows: &[(NaiveDate, String, f64)]) -> Result<Self, IngestError> {
        if rows.is_empty() {
            return Err(IngestError::EmptyPanel);
        }
        let mut by_key: BTreeMap<(String, NaiveDate), f64> = BTreeMap::new();
        let mut date_set: BTreeSet<NaiveDate> = BTreeSet::new();
        for (date, ticker, price) in rows {
            if !price.is_finite() || *price <= 0.0 {
                return Err(IngestError::NonPositivePrice {
                    date: *date,
                    ticker: ticker.clone(),
                    value: *price,
                });
            }
            match by_key.entry((ticker.clone(), *date)) {
                Entry::Occupied(_) => {
                    return Err(IngestError::DuplicateRow { date: *date, ticker: ticker.clone() })
                }
                Entry::Vacant(slot) => {
                    slot.insert(*price);
                }
            }
            date_set.insert(*date);
        }
        let dates: Vec<NaiveDate> = date_set.into_iter().collect();
        let tickers: Vec<String> = by_key
            .keys()
            .map(|(t, _)| t.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let date_index: BTreeMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();

        let mut cells = vec![f64::NAN; tickers.len() * dates.len()];
        for ((ticker, date), price) in &by_key {
            let ti = tickers.binary_search(ticker).expect("ticker present");
            let di = date_index[date];
            cells[ti * dates.len() + di] = *price;
        }

        let mut active = Vec::with_capacity(tickers.len());
        for (ti, ticker) in tickers.iter().enumerate() {
            let row = &cells[ti * dates.len()..(ti + 1) * dates.len()];
            let first = row.iter().position(|x| !x.is_nan()).expect("ticker has at least one row");
            let last = row.iter().rposition(|x| !x.is_nan()).expect("ticker has at least one row");
            for di in first..=last {
                if row[di].is_nan() {
                    return Err(IngestError::GapInActiveRange { ticker: ticker.clone(), date: dates[di] });
                }
            }
            active.push((first, last));
        }

        Ok(PricePanel { dates, tickers, cells, active })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    /// Number of observed trading days for a ticker.
    pub fn active_days(&self, ticker: &str) -> Result<usize, IngestError> {
        let ti = self.ticker_index(ticker).ok_or_else(|| IngestError::UnknownTicker(ticker.to_string()))?;
        let (first, last) = self.active[ti];
        Ok(last - first + 1)
    }

    fn cell(&self, ti: usize, di: usize) -> f64 {
        self.cells[ti * self.dates.len() + di]
    }

    /// Full-history log returns for one ticker, leading absent cells dropped.
    /// Element `t` is ln(p[t+1] / p[t]) dated at the second day of the pair.
    pub fn log_returns(&self, ticker: &str) -> Result<(Vec<NaiveDate>, Vec<f64>), IngestError> {
        let ti = self.ticker_index(ticker).ok_or_else(|| IngestError::UnknownTicker(ticker.to_string()))?;
        let (first, last) = self.active[ti];
        let mut dates = Vec::with_capacity(last.saturating_sub(first));
        let mut rets = Vec::with_capacity(last.saturating_sub(first));
        for di in first..last {
            dates.push(self.dates[di + 1]);
            rets.push((self.cell(ti, di + 1) / self.cell(ti, di)).ln());
        }
        Ok((dates, rets))
    }

    fn window_indices(&self, window: DateWindow) -> (usize, usize) {
        let start = self.dates.partition_point(|d| *d < window.start);
        let end = self.dates.partition_point(|d| *d <= window.end);
        (start, end)
    }

    /// Dense log returns for several tickers over a date window. Every ticker
    /// must be fully observed on the window's trading days.
    pub fn log_returns_window(&self, tickers: &[String], window: DateWindow) -> Result<ReturnsWindow, IngestError> {
        self.returns_window(tickers, window, |prev, next| (next / prev).ln())
    }

    /// Dense simple returns (next/prev - 1) over a window; same completeness rules.
    pub fn simple_returns_window(&self, tickers: &[String], window: DateWindow) -> Result<ReturnsWindow, IngestError> {
        self.returns_window(tickers, window, |prev, next| next / prev - 1.0)
    }

    fn returns_window(
        &self,
        tickers: &[String],
        window: DateWindow,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ReturnsWindow, IngestError> {
        let (start, end) = self.window_indices(window);
        if end.saturating_sub(start) < 2 {
            return Err(IngestError::WindowTooShort { start: window.start, end: window.end });
        }
        let mut indices = Vec::with_capacity(tickers.len());
        for ticker in tickers {
            let ti = self.ticker_index(ticker).ok_or_else(|| IngestError::UnknownTicker(ticker.clone()))?;
            let (first, last) = self.active[ti];
            if first > start || last < end - 1 {
                return Err(IngestError::IncompleteWindow {
                    ticker: ticker.clone(),
                    start: window.start,
                    end: window.end,
                });
            }
            indices.push(ti);
        }
        let t = end - start - 1;
        let mut data = DMatrix::zeros(t, tickers.len());
        let mut dates = Vec::with_capacity(t);
        for (row, di) in (start..end - 1).enumerate() {
            dates.push(self.dates[di + 1]);
            for (col, &ti) in indices.iter().enumerate() {
                data[(row, col)] = f(self.cell(ti, di), self.cell(ti, di + 1));
            }
        }
        Ok(ReturnsWindow { dates, tickers: tickers.to_vec(), data })
    }

    /// Daily simple returns of a fixed-weight (daily rebalanced) portfolio over
    /// a window: `r_p = sum_i w_i (p_next/p_prev - 1)`.
    pub fn portfolio_returns(
        &self,
        weights: &BTreeMap<String, f64>,
        window: DateWindow,
    ) -> Result<Vec<f64>, IngestError> {
        let tickers: Vec<String> = weights.keys().cloned().collect();
        let rets = self.simple_returns_window(&tickers, window)?;
        let w: Vec<f64> = tickers.iter().map(|t| weights[t]).collect();
        Ok((0..rets.data.nrows())
            .map(|t| (0..w.len()).map(|i| w[i] * rets.data[(t, i)]).sum())
            .collect())
    }
}

/// Parse a `date,ticker,adj_close` CSV into a panel. Unparseable rows fail with
/// the 1-based line number.
pub fn load_prices_csv(path: &Path) -> Result<PricePanel, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, &e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, &e))?.clone();
    let col = |name: &str| -> Result<usize, IngestError> {
        headers.iter().position(|h| h == name).ok_or_else(|| IngestError::BadSnapshot {
            path: path.to_path_buf(),
            msg: format!("missing column `{name}`"),
        })
    };
    let (date_col, ticker_col, price_col) = (col("date")?, col("ticker")?, col("adj_close")?);

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, &e))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |msg: String| IngestError::BadRow { path: path.to_path_buf(), line, msg };
        let date_txt = record.get(date_col).ok_or_else(|| bad("missing date".into()))?;
        let date = NaiveDate::parse_from_str(date_txt, "%Y-%m-%d")
            .map_err(|e| bad(format!("bad date `{date_txt}`: {e}")))?;
        let ticker = record.get(ticker_col).ok_or_else(|| bad("missing ticker".into()))?.to_string();
        let price_txt = record.get(price_col).ok_or_else(|| bad("missing adj_close".into()))?;
        let price: f64 = price_txt.parse().map_err(|e| bad(format!("bad adj_close `{price_txt}`: {e}")))?;
        rows.push((date, ticker, price));
    }
    PricePanel::from_rows(&rows)
}

fn csv_error(path: &Path, e: &csv::Error) -> IngestError {
    let line = match e.position() {
        Some(p) => p.line(),
        None => 0,
    };
    IngestError::BadRow { path: path.to_path_buf(), line, msg: e.to_string() }
}

/// One headline row: epoch-millisecond publication time and title. Pad rows are
/// synthetic fillers and must never be selected into a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Headline {
    pub published_at: i64,
    pub title: String,
    pub is_pad: bool,
}

/// Snapshot metadata persisted alongside the CSV rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub country: String,
    pub window_start: String,
    pub window_end: String,
    pub query: String,
    pub attempts: u32,
    pub real_rows: usize,
}

/// Exactly [`HEADLINE_ROWS`] rows per country: deduplicated on title, sorted by
/// (published_at, title), truncated, and padded at the tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadlineSnapshot {
    pub meta: SnapshotMeta,
    pub rows: Vec<Headline>,
}

impl HeadlineSnapshot {
    /// Normalize raw (published_at, title) pairs into a fixed-size snapshot.
    pub fn build(
        country: &str,
        window_start: &str,
        window_end: &str,
        query: &str,
        attempts: u32,
        raw: &[(i64, String)],
    ) -> Self {
        let mut sorted: Vec<(i64, String)> = raw.to_vec();
        sorted.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut seen = BTreeSet::new();
        let mut rows: Vec<Headline> = sorted
            .into_iter()
            .filter(|(_, title)| seen.insert(title.clone()))
            .take(HEADLINE_ROWS)
            .map(|(published_at, title)| Headline { published_at, title, is_pad: false })
            .collect();
        let real = rows.len();
        for i in real..HEADLINE_ROWS {
            rows.push(Headline {
                published_at: 0,
                title: format!("{PAD_PREFIX}{:02}] No headline available", i - real + 1),
                is_pad: true,
            });
        }
        HeadlineSnapshot {
            meta: SnapshotMeta {
                country: country.to_string(),
                window_start: window_start.to_string(),
                window_end: window_end.to_string(),
                query: query.to_string(),
                attempts,
                real_rows: real,
            },
            rows,
        }
    }

    pub fn real_rows(&self) -> impl Iterator<Item = &Headline> {
        self.rows.iter().filter(|h| !h.is_pad)
    }

    pub fn real_count(&self) -> usize {
        self.meta.real_rows
    }
}

/// Write the snapshot as `published_at,title,is_pad` CSV plus a JSON sidecar
/// holding the query metadata.
pub fn write_headlines_csv(csv_path: &Path, sidecar_path: &Path, snapshot: &HeadlineSnapshot) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_path(csv_path).map_err(|e| csv_error(csv_path, &e))?;
    writer
        .write_record(["published_at", "title", "is_pad"])
        .map_err(|e| csv_error(csv_path, &e))?;
    for row in &snapshot.rows {
        writer
            .write_record([
                row.published_at.to_string(),
                row.title.clone(),
                if row.is_pad { "1".into() } else { "0".into() },
            ])
            .map_err(|e| csv_error(csv_path, &e))?;
    }
    writer.flush().map_err(|source| IngestError::Io { path: csv_path.to_path_buf(), source })?;
    let meta = serde_json::to_string_pretty(&snapshot.meta).expect("meta serializes");
    std::fs::write(sidecar_path, meta)
        .map_err(|source| IngestError::Io { path: sidecar_path.to_path_buf(), source })?;
    Ok(())
}

/// Read a snapshot back, enforcing the fixed row count and flag consistency.
pub fn read_headlines_csv(csv_path: &Path, sidecar_path: &Path) -> Result<HeadlineSnapshot, IngestError> {
    let meta_text = std::fs::read_to_string(sidecar_path)
        .map_err(|source| IngestError::Io { path: sidecar_path.to_path_buf(), source })?;
    let meta: SnapshotMeta = serde_json::from_str(&meta_text)
        .map_err(|source| IngestError::Json { path: sidecar_path.to_path_buf(), source })?;

    let mut reader = csv::Reader::from_path(csv_path).map_err(|e| csv_error(csv_path, &e))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(csv_path, &e))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |msg: String| IngestError::BadRow { path: csv_path.to_path_buf(), line, msg };
        let published_at: i64 = record
            .get(0)
            .ok_or_else(|| bad("missing published_at".into()))?
            .parse()
            .map_err(|e| bad(format!("bad published_at: {e}")))?;
        let title = record.get(1).ok_or_else(|| bad("missing title".into()))?.to_string();
        let is_pad = match record.get(2) {
            Some("0") => false,
            Some("1") => true,
            other => return Err(bad(format!("bad is_pad flag {other:?}"))),
        };
        rows.push(Headline { published_at, title, is_pad });
    }
    if rows.len() != HEADLINE_ROWS {
        return Err(IngestError::BadSnapshot {
            path: csv_path.to_path_buf(),
            msg: format!("expected {HEADLINE_ROWS} rows, found {}", rows.len()),
        });
    }
    let real = rows.iter().filter(|r| !r.is_pad).count();
    if real != meta.real_rows {
        return Err(IngestError::BadSnapshot {
            path: csv_path.to_path_buf(),
            msg: format!("sidecar says {} real rows, csv has {real}", meta.real_rows),
        });
    }
    Ok(HeadlineSnapshot { meta, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn three_day_rows() -> Vec<(NaiveDate, String, f64)> {
        let mut rows = Vec::new();
        for (i, date) in [d(2020, 1, 1), d(2020, 1, 2), d(2020, 1, 3)].into_iter().enumerate() {
            rows.push((date, "AAA".to_string(), 100.0 + i as f64));
            rows.push((date, "BBB".to_string(), 50.0 * (1.1f64).powi(i as i32)));
        }
        rows
    }

    #[test]
    fn log_returns_match_hand_computed_ratios() {
        let panel = PricePanel::from_rows(&three_day_rows()).unwrap();
        let (dates, rets) = panel.log_returns("AAA").unwrap();
        assert_eq!(dates, vec![d(2020, 1, 2), d(2020, 1, 3)]);
        assert!((rets[0] - (101f64 / 100.0).ln()).abs() < 1e-15);
        assert!((rets[1] - (102f64 / 101.0).ln()).abs() < 1e-15);
        let (_, bt) = panel.log_returns("BBB").unwrap();
        assert!((bt[0] - 1.1f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicate_cell_is_rejected() {
        let mut rows = three_day_rows();
        rows.push((d(2020, 1, 2), "AAA".to_string(), 7.0));
        let err = PricePanel::from_rows(&rows).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateRow { .. }));
    }

    #[test]
    fn non_positive_price_is_rejected() {
        let mut rows = three_day_rows();
        rows.push((d(2020, 1, 4), "AAA".to_string(), 0.0));
        assert!(matches!(PricePanel::from_rows(&rows).unwrap_err(), IngestError::NonPositivePrice { .. }));
    }

    #[test]
    fn late_start_is_fine_but_interior_gap_names_ticker_and_date() {
        // CCC starts on day 2: allowed.
        let mut rows = three_day_rows();
        rows.push((d(2020, 1, 2), "CCC".to_string(), 10.0));
        rows.push((d(2020, 1, 3), "CCC".to_string(), 11.0));
        let panel = PricePanel::from_rows(&rows).unwrap();
        assert_eq!(panel.active_days("CCC").unwrap(), 2);

        // DDD skips day 2 inside its range: rejected.
        let mut rows = three_day_rows();
        rows.push((d(2020, 1, 1), "DDD".to_string(), 10.0));
        rows.push((d(2020, 1, 3), "DDD".to_string(), 11.0));
        match PricePanel::from_rows(&rows).unwrap_err() {
            IngestError::GapInActiveRange { ticker, date } => {
                assert_eq!(ticker, "DDD");
                assert_eq!(date, d(2020, 1, 2));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn window_returns_require_full_coverage() {
        let mut rows = three_day_rows();
        rows.push((d(2020, 1, 2), "CCC".to_string(), 10.0));
        rows.push((d(2020, 1, 3), "CCC".to_string(), 11.0));
        let panel = PricePanel::from_rows(&rows).unwrap();
        let win = DateWindow::new(d(2020, 1, 1), d(2020, 1, 3));
        let ok = panel.log_returns_window(&["AAA".into(), "BBB".into()], win).unwrap();
        assert_eq!(ok.data.nrows(), 2);
        assert_eq!(ok.data.ncols(), 2);
        let err = panel.log_returns_window(&["CCC".into()], win).unwrap_err();
        assert!(matches!(err, IngestError::IncompleteWindow { .. }));
    }

    #[test]
    fn unparseable_csv_row_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prices.csv");
        std::fs::write(&path, "date,ticker,adj_close\n2020-01-01,AAA,100\nnot-a-date,AAA,101\n").unwrap();
        match load_prices_csv(&path).unwrap_err() {
            IngestError::BadRow { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn snapshot_dedups_sorts_truncates_and_pads() {
        // 30 distinct titles, one duplicate.
        let mut raw: Vec<(i64, String)> = (0..30).map(|i| (1000 - i as i64, format!("headline {i:02}"))).collect();
        raw.push((5000, "headline 00".to_string()));
        let snap = HeadlineSnapshot::build("Canada", "2025-09-01", "2025-09-30", "canada macro", 31, &raw);
        assert_eq!(snap.rows.len(), HEADLINE_ROWS);
        assert_eq!(snap.real_count(), 30);
        assert_eq!(snap.rows[0].title, "headline 29", "sorted by published_at then title");
        assert!(snap.rows[30].is_pad);
        assert_eq!(snap.rows[30].title, "[PAD-01] No headline available");
        assert_eq!(snap.rows[49].title, "[PAD-20] No headline available");
        // the duplicate kept its earliest timestamp slot
        assert_eq!(snap.real_rows().filter(|h| h.title == "headline 00").count(), 1);
    }

    #[test]
    fn snapshot_truncates_overflow_to_fixed_size() {
        let raw: Vec<(i64, String)> = (0..80).map(|i| (i as i64, format!("headline {i:02}"))).collect();
        let snap = HeadlineSnapshot::build("Japan", "a", "b", "q", 80, &raw);
        assert_eq!(snap.rows.len(), HEADLINE_ROWS);
        assert_eq!(snap.real_count(), HEADLINE_ROWS);
        assert_eq!(snap.rows.last().unwrap().title, "headline 49");
    }

    #[test]
    fn exactly_full_input_gets_no_pads() {
        let raw: Vec<(i64, String)> = (0..50).map(|i| (i as i64, format!("h{i}"))).collect();
        let snap = HeadlineSnapshot::build("Italy", "a", "b", "q", 50, &raw);
        assert_eq!(snap.real_count(), 50);
        assert!(snap.rows.iter().all(|r| !r.is_pad));
    }

    #[test]
    fn csv_round_trip_preserves_snapshot() {
        let raw: Vec<(i64, String)> = (0..12).map(|i| (i as i64, format!("title {i}"))).collect();
        let snap = HeadlineSnapshot::build("France", "2025-09-01", "2025-09-30", "france macro", 12, &raw);
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("france.csv");
        let sidecar = dir.path().join("france.json");
        write_headlines_csv(&csv_path, &sidecar, &snap).unwrap();
        let back = read_headlines_csv(&csv_path, &sidecar).unwrap();
        assert_eq!(back, snap);
    }

    #[test]
    fn weo_loader_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weo.json");
        std::fs::write(
            &path,
            r#"[{"country":"Canada","gdp_growth":1.1,"inflation":1.9,"interest_rate":4.25,"vintage":"v1"},
                {"country":"Canada","gdp_growth":1.2,"inflation":2.0,"interest_rate":4.0,"vintage":"v1"}]"#,
        )
        .unwrap();
        assert!(matches!(load_weo_baselines(&path).unwrap_err(), IngestError::DuplicateCountry(_)));
    }
}
