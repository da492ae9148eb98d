//! Price-panel ingestion, normalized daily features, temporal feature
//! variants, and the time-ordered domain sequence used for training.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use crate::error::{Error, Result};

/// Number of raw daily features per stock (open/high/low/close/volume ratios).
pub const FEATURE_DIM: usize = 5;

/// Per-stock daily OHLCV panel with presence mask and sector metadata.
///
/// Prices are assumed adjusted for corporate actions. Data is stored
/// ticker-major: `close[ticker][date]` is only meaningful where
/// `present[ticker][date]` is true.
#[derive(Debug, Clone)]
pub struct PricePanel {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub open: Vec<Vec<f64>>,
    pub high: Vec<Vec<f64>>,
    pub low: Vec<Vec<f64>>,
    pub close: Vec<Vec<f64>>,
    pub volume: Vec<Vec<f64>>,
    pub present: Vec<Vec<bool>>,
    /// Sector id per ticker, indexing into `sector_names`.
    pub sector: Vec<u32>,
    pub sector_names: Vec<String>,
}

impl PricePanel {
    pub fn ticker_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    pub fn n_sectors(&self) -> usize {
        self.sector_names.len()
    }

    /// Close-to-close simple return series for one ticker over a date range
    /// (inclusive indices). Days where the ticker is absent are skipped.
    pub fn returns_in(&self, ticker_idx: usize, from: usize, to: usize) -> Vec<f64> {
        let mut out = Vec::new();
        let mut prev: Option<f64> = None;
        for t in from..=to {
            if !self.present[ticker_idx][t] {
                continue;
            }
            let c = self.close[ticker_idx][t];
            if let Some(p) = prev {
                out.push(c / p - 1.0);
            }
            prev = Some(c);
        }
        out
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Index of the first calendar date >= `date`.
    pub fn date_index_at_or_after(&self, date: NaiveDate) -> Option<usize> {
        match self.dates.binary_search(&date) {
            Ok(i) => Some(i),
            Err(i) if i < self.dates.len() => Some(i),
            Err(_) => None,
        }
    }

    /// Index of the last calendar date <= `date`.
    pub fn date_index_at_or_before(&self, date: NaiveDate) -> Option<usize> {
        match self.dates.binary_search(&date) {
            Ok(i) => Some(i),
            Err(0) => None,
            Err(i) => Some(i - 1),
        }
    }
}

/// One day of normalized price features (dimensionless ratios).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub z_open: f64,
    pub z_high: f64,
    pub z_low: f64,
    pub z_close: f64,
    pub z_volume: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; FEATURE_DIM] {
        [self.z_open, self.z_high, self.z_low, self.z_close, self.z_volume]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Concatenation of window-averaged feature blocks, length `FEATURE_DIM * windows.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantVector {
    pub values: Vec<f64>,
    pub windows: Vec<usize>,
}

impl VariantVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Feature series for one ticker: `(date index, features)`, in date order.
/// Only days with a defined previous trading day (and non-zero prior volume)
/// are present.
pub type FeatureSeries = Vec<(usize, FeatureVector)>;

/// Variant series for one ticker: `(date index, variant)`, in date order.
pub type VariantSeries = Vec<(usize, VariantVector)>;

/// One training sample: a stock-day with its variant vector and sector.
#[derive(Debug, Clone)]
pub struct Sample {
    pub ticker_idx: usize,
    pub date_idx: usize,
    pub variant: VariantVector,
    pub sector: u32,
}

/// One source domain: a date range and the stock-day samples inside it.
#[derive(Debug, Clone)]
pub struct Domain {
    /// Inclusive date range covered by this domain.
    pub range: (NaiveDate, NaiveDate),
    pub samples: Vec<Sample>,
}

/// Ordered source domains D_1..D_T with disjoint, increasing time ranges.
#[derive(Debug, Clone)]
pub struct DomainSequence {
    pub domains: Vec<Domain>,
}

impl DomainSequence {
    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }
}

/// What to do when a scheduled domain range contains no samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyDomainPolicy {
    Error,
    WarnAndSkip,
}

#[derive(Debug, Deserialize)]
struct PanelRow {
    date: NaiveDate,
    ticker: String,
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    volume: f64,
    #[serde(default)]
    sector: Option<String>,
}

#[derive(Debug, Deserialize)]
struct SectorRow {
    ticker: String,
    sector: String,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

/// Load a headered CSV panel (`date,ticker,open,high,low,close,volume[,sector]`).
///
/// When the panel carries no inline sector column, `sector_path` must point to
/// a two-column `ticker,sector` file. The presence mask is inferred from which
/// ticker-date rows exist; duplicate ticker-dates and non-positive prices are
/// rejected.
pub fn load_panel(path: &Path, sector_path: Option<&Path>) -> Result<PricePanel> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => io_err(
                path,
                std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
            ),
            _ => Error::Parse { line: 0, msg: e.to_string() },
        })?;

    let mut rows: Vec<PanelRow> = Vec::new();
    for result in reader.deserialize() {
        let row: PanelRow = result.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            msg: e.to_string(),
        })?;
        rows.push(row);
    }

    let mut inline_sectors: BTreeMap<String, String> = BTreeMap::new();
    for row in &rows {
        if let Some(s) = &row.sector {
            inline_sectors.insert(row.ticker.clone(), s.clone());
        }
    }
    let sector_by_ticker: BTreeMap<String, String> = if let Some(sp) = sector_path {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(sp)
            .map_err(|e| io_err(sp, std::io::Error::new(std::io::ErrorKind::Other, e.to_string())))?;
        let mut map = BTreeMap::new();
        for result in reader.deserialize() {
            let row: SectorRow = result.map_err(|e| Error::Parse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                msg: e.to_string(),
            })?;
            map.insert(row.ticker, row.sector);
        }
        map
    } else {
        inline_sectors
    };

    build_panel(rows, &sector_by_ticker)
}

fn build_panel(rows: Vec<PanelRow>, sector_by_ticker: &BTreeMap<String, String>) -> Result<PricePanel> {
    // Sorted ticker and date axes keep every downstream ordering deterministic.
    let mut dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect();
    dates.sort_unstable();
    dates.dedup();
    let mut tickers: Vec<String> = rows.iter().map(|r| r.ticker.clone()).collect();
    tickers.sort_unstable();
    tickers.dedup();

    let n_t = tickers.len();
    let n_d = dates.len();
    if n_t == 0 || n_d == 0 {
        return Err(Error::Data("panel contains no rows".into()));
    }

    let ticker_idx: BTreeMap<String, usize> =
        tickers.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();

    let mut sector_names: Vec<String> = sector_by_ticker.values().cloned().collect();
    sector_names.sort_unstable();
    sector_names.dedup();
    if sector_names.is_empty() {
        sector_names.push("UNKNOWN".into());
    }
    let sector_id: BTreeMap<&str, u32> = sector_names
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();

    let mut sector = Vec::with_capacity(n_t);
    for t in &tickers {
        match sector_by_ticker.get(t) {
            Some(name) => sector.push(sector_id[name.as_str()]),
            None if sector_by_ticker.is_empty() => sector.push(0),
            None => return Err(Error::Data(format!("ticker {t} has no sector assignment"))),
        }
    }

    let mut panel = PricePanel {
        tickers,
        dates,
        open: vec![vec![0.0; n_d]; n_t],
        high: vec![vec![0.0; n_d]; n_t],
        low: vec![vec![0.0; n_d]; n_t],
        close: vec![vec![0.0; n_d]; n_t],
        volume: vec![vec![0.0; n_d]; n_t],
        present: vec![vec![false; n_d]; n_t],
        sector,
        sector_names,
    };

    for row in rows {
        let ti = ticker_idx[&row.ticker];
        let di = panel.dates.binary_search(&row.date).expect("date axis covers every row");
        if panel.present[ti][di] {
            return Err(Error::Calendar(format!(
                "duplicate row for {} on {}",
                row.ticker, row.date
            )));
        }
        for (name, v) in [
            ("open", row.open),
            ("high", row.high),
            ("low", row.low),
            ("close", row.close),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Data(format!(
                    "non-positive {name} price for {} on {}: {v}",
                    row.ticker, row.date
                )));
            }
        }
        if !(row.volume >= 0.0) || !row.volume.is_finite() {
            return Err(Error::Data(format!(
                "negative volume for {} on {}: {}",
                row.ticker, row.date, row.volume
            )));
        }
        panel.open[ti][di] = row.open;
        panel.high[ti][di] = row.high;
        panel.low[ti][di] = row.low;
        panel.close[ti][di] = row.close;
        panel.volume[ti][di] = row.volume;
        panel.present[ti][di] = true;
    }

    Ok(panel)
}

/// Normalized features per ticker: intraday ratios against the same day's
/// close, plus close and volume ratios against the previous trading day.
///
/// The first available day of each ticker has no previous day and is dropped;
/// a day whose prior volume is zero is likewise ineligible (the volume ratio
/// is undefined there).
pub fn normalize_features(panel: &PricePanel) -> Vec<FeatureSeries> {
    let mut all = Vec::with_capacity(panel.tickers.len());
    for ti in 0..panel.tickers.len() {
        let mut series = FeatureSeries::new();
        let mut prev: Option<usize> = None;
        for di in 0..panel.dates.len() {
            if !panel.present[ti][di] {
                continue;
            }
            if let Some(pi) = prev {
                let prev_volume = panel.volume[ti][pi];
                if prev_volume > 0.0 {
                    let c = panel.close[ti][di];
                    series.push((
                        di,
                        FeatureVector {
                            z_open: panel.open[ti][di] / c - 1.0,
                            z_high: panel.high[ti][di] / c - 1.0,
                            z_low: panel.low[ti][di] / c - 1.0,
                            z_close: c / panel.close[ti][pi] - 1.0,
                            z_volume: panel.volume[ti][di] / prev_volume - 1.0,
                        },
                    ));
                }
            }
            prev = Some(di);
        }
        all.push(series);
    }
    all
}

/// Trailing-mean temporal variants of a feature series.
///
/// Block `i` at position `p` is the arithmetic mean of the features over the
/// trailing `windows[i]` eligible days ending at `p`; blocks are concatenated
/// in window order. Positions with insufficient history are not emitted.
pub fn temporal_variants(features: &FeatureSeries, windows: &[usize]) -> Result<VariantSeries> {
    if windows.is_empty() {
        return Err(Error::Config("window list must be non-empty".into()));
    }
    if windows.iter().any(|&w| w < 1) {
        return Err(Error::Config("every window must be >= 1".into()));
    }
    let max_w = *windows.iter().max().expect("non-empty");
    let mut out = VariantSeries::new();
    if features.len() < max_w {
        return Ok(out);
    }
    for p in (max_w - 1)..features.len() {
        let mut values = Vec::with_capacity(FEATURE_DIM * windows.len());
        for &w in windows {
            let mut sums = [0.0f64; FEATURE_DIM];
            for q in (p + 1 - w)..=p {
                let f = features[q].1.as_array();
                for (s, v) in sums.iter_mut().zip(f) {
                    *s += v;
                }
            }
            for s in sums {
                values.push(s / w as f64);
            }
        }
        out.push((features[p].0, VariantVector { values, windows: windows.to_vec() }));
    }
    Ok(out)
}

/// Bucket the variant samples of every ticker into the scheduled date ranges.
///
/// Each domain holds all stock-days whose date falls inside its range; a
/// ticker delisted mid-period simply stops producing samples, and new listings
/// appear from their first eligible day.
pub fn build_domains(
    panel: &PricePanel,
    variants: &[VariantSeries],
    schedule: &[(NaiveDate, NaiveDate)],
    empty_policy: EmptyDomainPolicy,
) -> Result<DomainSequence> {
    if schedule.is_empty() {
        return Err(Error::Config("domain schedule must be non-empty".into()));
    }
    for w in schedule.windows(2) {
        if w[0].1 >= w[1].0 {
            return Err(Error::Config(format!(
                "domain ranges must be disjoint and increasing: {:?} then {:?}",
                w[0], w[1]
            )));
        }
    }
    for (lo, hi) in schedule {
        if lo > hi {
            return Err(Error::Config(format!("empty domain range {lo}..{hi}")));
        }
    }

    let mut domains = Vec::with_capacity(schedule.len());
    for &(lo, hi) in schedule {
        let mut samples = Vec::new();
        for (ti, series) in variants.iter().enumerate() {
            for (di, variant) in series {
                let date = panel.dates[*di];
                if date >= lo && date <= hi {
                    samples.push(Sample {
                        ticker_idx: ti,
                        date_idx: *di,
                        variant: variant.clone(),
                        sector: panel.sector[ti],
                    });
                }
            }
        }
        if samples.is_empty() {
            match empty_policy {
                EmptyDomainPolicy::Error => {
                    return Err(Error::Data(format!("domain {lo}..{hi} contains no samples")))
                }
                EmptyDomainPolicy::WarnAndSkip => continue,
            }
        }
        domains.push(Domain { range: (lo, hi), samples });
    }
    Ok(DomainSequence { domains })
}

/// Calendar-quarter schedule covering `[from, to]`, clipped to the span.
pub fn quarterly_schedule(from: NaiveDate, to: NaiveDate) -> Vec<(NaiveDate, NaiveDate)> {
    use chrono::Datelike;
    let mut out = Vec::new();
    let mut year = from.year();
    let mut quarter = (from.month0() / 3) as i32;
    loop {
        let q_start = NaiveDate::from_ymd_opt(year, (quarter * 3 + 1) as u32, 1).expect("valid");
        let (ny, nq) = if quarter == 3 { (year + 1, 0) } else { (year, quarter + 1) };
        let next_start = NaiveDate::from_ymd_opt(ny, (nq * 3 + 1) as u32, 1).expect("valid");
        let q_end = next_start.pred_opt().expect("valid");
        if q_start > to {
            break;
        }
        out.push((q_start.max(from), q_end.min(to)));
        year = ny;
        quarter = nq;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    const WELL_FORMED: &str = "\
date,ticker,open,high,low,close,volume,sector
2020-01-01,AAA,10,11,9,10,100,tech
2020-01-02,AAA,10,11,9,10.2,120,tech
2020-01-03,AAA,10,11,9,10.4,90,tech
2020-01-01,BBB,20,22,19,20,200,fin
2020-01-02,BBB,20,22,19,20.4,210,fin
2020-01-03,BBB,20,22,19,20.8,220,fin
";

    #[test]
    fn loads_well_formed_panel() {
        let f = write_csv(WELL_FORMED);
        let panel = load_panel(f.path(), None).unwrap();
        assert_eq!(panel.tickers, vec!["AAA", "BBB"]);
        assert_eq!(panel.dates.len(), 3);
        assert!(panel.present.iter().flatten().all(|&p| p));
        assert_eq!(panel.sector_names, vec!["fin", "tech"]);
        assert_eq!(panel.sector, vec![1, 0]);
    }

    #[test]
    fn rejects_zero_close() {
        let f = write_csv(
            "date,ticker,open,high,low,close,volume\n2020-01-01,AAA,10,11,9,0,100\n",
        );
        let err = load_panel(f.path(), None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("AAA") && msg.contains("2020-01-01"), "{msg}");
    }

    #[test]
    fn rejects_duplicate_ticker_date() {
        let f = write_csv(
            "date,ticker,open,high,low,close,volume\n\
             2020-01-01,AAA,10,11,9,10,100\n\
             2020-01-01,AAA,10,11,9,10,100\n",
        );
        assert!(matches!(load_panel(f.path(), None), Err(Error::Calendar(_))));
    }

    #[test]
    fn missing_row_masks_absent_day() {
        let f = write_csv(
            "date,ticker,open,high,low,close,volume\n\
             2020-01-01,AAA,10,11,9,10,100\n\
             2020-01-02,AAA,10,11,9,10,100\n\
             2020-01-01,BBB,20,22,19,20,200\n\
             2020-01-02,CCC,5,6,4,5,50\n",
        );
        let panel = load_panel(f.path(), None).unwrap();
        let b = panel.ticker_index("BBB").unwrap();
        assert!(panel.present[b][0]);
        assert!(!panel.present[b][1]);
        let a = panel.ticker_index("AAA").unwrap();
        assert!(panel.present[a][0] && panel.present[a][1]);
    }

    #[test]
    fn sector_file_is_honored() {
        let f = write_csv(
            "date,ticker,open,high,low,close,volume\n2020-01-01,AAA,10,11,9,10,100\n",
        );
        let s = write_csv("ticker,sector\nAAA,energy\n");
        let panel = load_panel(f.path(), Some(s.path())).unwrap();
        assert_eq!(panel.sector_names, vec!["energy"]);
    }

    #[test]
    fn identity_day_has_zero_intraday_features() {
        let f = write_csv(
            "date,ticker,open,high,low,close,volume\n\
             2020-01-01,AAA,10,10,10,10,100\n\
             2020-01-02,AAA,10,10,10,10,100\n",
        );
        let panel = load_panel(f.path(), None).unwrap();
        let feats = normalize_features(&panel);
        let (_, fv) = feats[0][0];
        assert_eq!(fv.z_open, 0.0);
        assert_eq!(fv.z_high, 0.0);
        assert_eq!(fv.z_low, 0.0);
    }

    #[test]
    fn close_and_volume_ratios_match_hand_arithmetic() {
        let f = write_csv(
            "date,ticker,open,high,low,close,volume\n\
             2020-01-01,AAA,100,100,100,100,100\n\
             2020-01-02,AAA,102,102,102,102,150\n",
        );
        let panel = load_panel(f.path(), None).unwrap();
        let feats = normalize_features(&panel);
        let (_, fv) = feats[0][0];
        assert!((fv.z_close - 0.02).abs() < 1e-15);
        assert!((fv.z_volume - 0.5).abs() < 1e-15);
    }

    #[test]
    fn first_day_is_dropped_and_zero_prior_volume_is_ineligible() {
        let f = write_csv(
            "date,ticker,open,high,low,close,volume\n\
             2020-01-01,AAA,10,10,10,10,100\n\
             2020-01-02,AAA,10,10,10,10,0\n\
             2020-01-03,AAA,10,10,10,10,100\n\
             2020-01-04,AAA,10,10,10,10,100\n",
        );
        let panel = load_panel(f.path(), None).unwrap();
        let feats = normalize_features(&panel);
        // day 1 has no previous day; day 3 follows zero volume; days 2 and 4 remain
        let emitted: Vec<usize> = feats[0].iter().map(|(di, _)| *di).collect();
        assert_eq!(emitted, vec![1, 3]);
    }

    fn const_features(n: usize, c: f64) -> FeatureSeries {
        (0..n)
            .map(|i| {
                (i, FeatureVector { z_open: c, z_high: c, z_low: c, z_close: c, z_volume: c })
            })
            .collect()
    }

    #[test]
    fn constant_series_yields_constant_blocks() {
        let feats = const_features(10, 0.25);
        let vs = temporal_variants(&feats, &[2, 3]).unwrap();
        assert!(!vs.is_empty());
        for (_, v) in &vs {
            assert_eq!(v.dim(), FEATURE_DIM * 2);
            assert!(v.values.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn trailing_mean_matches_hand_arithmetic() {
        // series [1,2,3] in every component, window 2, at the last position
        let mut feats = FeatureSeries::new();
        for (i, c) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            feats.push((
                i,
                FeatureVector { z_open: c, z_high: c, z_low: c, z_close: c, z_volume: c },
            ));
        }
        let vs = temporal_variants(&feats, &[2]).unwrap();
        let (_, last) = vs.last().unwrap();
        assert!(last.values.iter().all(|&x| (x - 2.5).abs() < 1e-15));
    }

    #[test]
    fn default_windows_give_dim_25() {
        let feats = const_features(30, 0.0);
        let vs = temporal_variants(&feats, &[5, 10, 15, 20, 25]).unwrap();
        assert_eq!(vs[0].1.dim(), 25);
    }

    #[test]
    fn short_series_yields_empty_output() {
        let feats = const_features(3, 0.0);
        let vs = temporal_variants(&feats, &[5]).unwrap();
        assert!(vs.is_empty());
    }

    fn toy_panel_with_delisting() -> PricePanel {
        // AAA present all 8 days, BBB present only the first 4
        let mut rows = String::from("date,ticker,open,high,low,close,volume\n");
        for d in 1..=8 {
            rows.push_str(&format!("2020-01-{d:02},AAA,10,11,9,10,100\n"));
            if d <= 4 {
                rows.push_str(&format!("2020-01-{d:02},BBB,20,22,19,20,200\n"));
            }
        }
        let f = write_csv(&rows);
        load_panel(f.path(), None).unwrap()
    }

    #[test]
    fn degenerate_single_range_collects_everything() {
        let panel = toy_panel_with_delisting();
        let feats = normalize_features(&panel);
        let variants: Vec<_> =
            feats.iter().map(|f| temporal_variants(f, &[2]).unwrap()).collect();
        let total: usize = variants.iter().map(|v| v.len()).sum();
        let seq = build_domains(
            &panel,
            &variants,
            &[(date("2020-01-01"), date("2020-01-31"))],
            EmptyDomainPolicy::Error,
        )
        .unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.domains[0].samples.len(), total);
    }

    #[test]
    fn delisted_ticker_vanishes_from_later_domain() {
        let panel = toy_panel_with_delisting();
        let feats = normalize_features(&panel);
        let variants: Vec<_> =
            feats.iter().map(|f| temporal_variants(f, &[2]).unwrap()).collect();
        let seq = build_domains(
            &panel,
            &variants,
            &[
                (date("2020-01-01"), date("2020-01-04")),
                (date("2020-01-05"), date("2020-01-08")),
            ],
            EmptyDomainPolicy::Error,
        )
        .unwrap();
        let bbb = panel.ticker_index("BBB").unwrap();
        assert!(seq.domains[0].samples.iter().any(|s| s.ticker_idx == bbb));
        assert!(seq.domains[1].samples.iter().all(|s| s.ticker_idx != bbb));
    }

    #[test]
    fn four_year_quarterly_schedule_has_16_domains() {
        let schedule = quarterly_schedule(date("2018-01-01"), date("2021-12-31"));
        assert_eq!(schedule.len(), 16);
        assert_eq!(schedule[0], (date("2018-01-01"), date("2018-03-31")));
        assert_eq!(schedule[15], (date("2021-10-01"), date("2021-12-31")));
    }

    #[test]
    fn overlapping_schedule_is_rejected() {
        let panel = toy_panel_with_delisting();
        let feats = normalize_features(&panel);
        let variants: Vec<_> =
            feats.iter().map(|f| temporal_variants(f, &[2]).unwrap()).collect();
        let err = build_domains(
            &panel,
            &variants,
            &[
                (date("2020-01-01"), date("2020-01-05")),
                (date("2020-01-05"), date("2020-01-08")),
            ],
            EmptyDomainPolicy::Error,
        );
        assert!(err.is_err());
    }
}
