//! Index tracking with equal-weighted portfolios of similar stocks: tracking
//! error on cumulative return paths and tracking error volatility on the
//! mean-centered difference series.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::eval::cumulative_returns;

/// Which series feeds the TEV difference: the cumulative paths used by the
/// tracking error (the literal reading) or per-period returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TevBasis {
    #[default]
    Cumulative,
    PeriodReturns,
}

/// Equal-weighted buy-and-hold portfolio returns: per period, the arithmetic
/// mean of member returns. Members without a full-length series are dropped
/// and reported.
pub fn equal_weight_returns(
    members: &[String],
    return_panel: &BTreeMap<String, Vec<f64>>,
    n_periods: usize,
) -> Result<(Vec<f64>, Vec<String>)> {
    let usable: Vec<&String> = members
        .iter()
        .filter(|m| return_panel.get(*m).map(|s| s.len() == n_periods).unwrap_or(false))
        .collect();
    let dropped: Vec<String> = members
        .iter()
        .filter(|m| !usable.iter().any(|u| u == m))
        .cloned()
        .collect();
    if usable.is_empty() {
        return Err(Error::Data("no member has a full test-period series".into()));
    }
    let mut out = vec![0.0; n_periods];
    for m in &usable {
        for (t, r) in return_panel[*m].iter().enumerate() {
            out[t] += r;
        }
    }
    let scale = 1.0 / usable.len() as f64;
    for v in &mut out {
        *v *= scale;
    }
    Ok((out, dropped))
}

/// Root-mean-square deviation between the two cumulative return series.
pub fn tracking_error(ri_cum: &[f64], rp_cum: &[f64]) -> Result<f64> {
    if ri_cum.len() != rp_cum.len() {
        return Err(Error::Dimension { expected: ri_cum.len(), got: rp_cum.len() });
    }
    if ri_cum.is_empty() {
        return Err(Error::Data("tracking error needs at least 1 period".into()));
    }
    let n = ri_cum.len() as f64;
    let ss: f64 = ri_cum.iter().zip(rp_cum).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / n).sqrt())
}

/// Population standard deviation of the difference series (mean-centered).
pub fn tracking_error_volatility(ri: &[f64], rp: &[f64]) -> Result<f64> {
    if ri.len() != rp.len() {
        return Err(Error::Dimension { expected: ri.len(), got: rp.len() });
    }
    let n = ri.len();
    if n < 2 {
        return Err(Error::Data("tracking error volatility needs at least 2 periods".into()));
    }
    let diff: Vec<f64> = ri.iter().zip(rp).map(|(a, b)| a - b).collect();
    let mean = diff.iter().sum::<f64>() / n as f64;
    let var = diff.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
    Ok(var.sqrt())
}

/// One (target, method, exchange) case: the ranked similar stocks to build
/// tracking portfolios from.
#[derive(Debug, Clone)]
pub struct TrackCandidates {
    pub target: String,
    pub method: String,
    pub exchange: String,
    /// Ranked best-first; the TOP@k portfolio uses the first k entries.
    pub ranked: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TrackRow {
    pub target: String,
    pub method: String,
    pub exchange: String,
    pub k: usize,
    pub te: f64,
    pub tev: f64,
    pub n_periods: usize,
    pub dropped: Vec<String>,
    /// 1 = best, 2 = second-best within the (target, exchange, k) column.
    pub te_rank: Option<u8>,
    pub tev_rank: Option<u8>,
}

#[derive(Debug, Clone)]
pub struct TrackReport {
    pub rows: Vec<TrackRow>,
}

impl TrackReport {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io { path: "<writer>".into(), source: e };
        writeln!(w, "target,method,exchange,k,te,tev,n_periods,te_rank,tev_rank,dropped")
            .map_err(io)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{:.10},{:.10},{},{},{},{}",
                r.target,
                r.method,
                r.exchange,
                r.k,
                r.te,
                r.tev,
                r.n_periods,
                r.te_rank.map(|v| v.to_string()).unwrap_or_default(),
                r.tev_rank.map(|v| v.to_string()).unwrap_or_default(),
                r.dropped.join(";"),
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

/// Full cross-product report over cases and the TOP@k grid, with best and
/// second-best method flagged per (target, exchange, k) column.
pub fn track_report(
    cases: &[TrackCandidates],
    target_returns: &BTreeMap<String, Vec<f64>>,
    member_returns: &BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    k_grid: &[usize],
    tev_basis: TevBasis,
) -> Result<TrackReport> {
    if k_grid.is_empty() {
        return Err(Error::Config("k grid must be non-empty".into()));
    }
    let mut rows = Vec::new();
    for case in cases {
        let target = target_returns
            .get(&case.target)
            .ok_or_else(|| Error::UnknownTicker(case.target.clone()))?;
        let n = target.len();
        let panel = member_returns
            .get(&case.exchange)
            .ok_or_else(|| Error::Data(format!("no member panel for exchange {}", case.exchange)))?;
        let ri_cum = cumulative_returns(target);
        for &k in k_grid {
            let members: Vec<String> = case.ranked.iter().take(k).cloned().collect();
            let (rp, dropped) = equal_weight_returns(&members, panel, n)?;
            let rp_cum = cumulative_returns(&rp);
            let te = tracking_error(&ri_cum, &rp_cum)?;
            let tev = match tev_basis {
                TevBasis::Cumulative => tracking_error_volatility(&ri_cum, &rp_cum)?,
                TevBasis::PeriodReturns => tracking_error_volatility(target, &rp)?,
            };
            rows.push(TrackRow {
                target: case.target.clone(),
                method: case.method.clone(),
                exchange: case.exchange.clone(),
                k,
                te,
                tev,
                n_periods: n,
                dropped,
                te_rank: None,
                tev_rank: None,
            });
        }
    }

    // flag best / second-best per (target, exchange, k) across methods
    let mut columns: BTreeMap<(String, String, usize), Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        columns
            .entry((r.target.clone(), r.exchange.clone(), r.k))
            .or_default()
            .push(i);
    }
    for idxs in columns.values() {
        let mut by_te: Vec<usize> = idxs.clone();
        by_te.sort_by(|&a, &b| rows[a].te.partial_cmp(&rows[b].te).expect("finite te"));
        for (rank, &i) in by_te.iter().take(2).enumerate() {
            rows[i].te_rank = Some(rank as u8 + 1);
        }
        let mut by_tev: Vec<usize> = idxs.clone();
        by_tev.sort_by(|&a, &b| rows[a].tev.partial_cmp(&rows[b].tev).expect("finite tev"));
        for (rank, &i) in by_tev.iter().take(2).enumerate() {
            rows[i].tev_rank = Some(rank as u8 + 1);
        }
    }

    Ok(TrackReport { rows })
}
