//! Per-stock embeddings for a period, TOP@k similar-stock queries within and
//! across exchanges, and embedding-derived similarity matrices.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{forward_embed, ModelDims, ModelParams};

/// Identifying metadata for an embedding set.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingMeta {
    pub period: String,
    pub model_id: String,
    pub exchange: String,
}

/// Per-ticker representation vectors plus the daily embeddings they were
/// averaged from (kept for CKA, which compares day-by-day matrices).
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub meta: EmbeddingMeta,
    pub d: usize,
    pub vectors: BTreeMap<String, DVector<f64>>,
    /// Per ticker: the date indices and the day-by-day embedding rows.
    pub daily: BTreeMap<String, (Vec<usize>, DMatrix<f64>)>,
}

/// Distance used for TOP@k ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopkMetric {
    L2,
    /// Cosine distance, `1 - cos(query, candidate)`.
    Cosine,
}

/// Similarity-matrix construction method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMethod {
    L2,
    L1,
    Corr,
    Cka,
}

impl SimMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            SimMethod::L2 => "L2",
            SimMethod::L1 => "L1",
            SimMethod::Corr => "CORR",
            SimMethod::Cka => "CKA",
        }
    }
}

/// Square ticker-indexed similarity matrix with unit diagonal.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub tickers: Vec<String>,
    pub values: DMatrix<f64>,
    pub method: SimMethod,
    /// Set when all pairwise distances were equal and the max-min map
    /// degenerated to the constant 1.
    pub degenerate: bool,
}

/// Ranked TOP@k result; `clipped` is set when k exceeded the universe.
#[derive(Debug, Clone)]
pub struct TopkResult {
    pub ranked: Vec<(String, f64)>,
    pub clipped: bool,
}

/// Embed every ticker appearing in `samples`: mean of daily [ST] outputs
/// over the window. Returns the set plus the tickers omitted because they
/// had no eligible day.
pub fn embed_universe(
    samples: &[Sample],
    tickers: &[String],
    theta: &[f64],
    dims: ModelDims,
    meta: EmbeddingMeta,
) -> Result<(EmbeddingSet, Vec<String>)> {
    if samples.is_empty() {
        return Err(Error::Data("empty universe: no samples to embed".into()));
    }
    let params = ModelParams::unflatten(dims, theta)?;
    let mut per_ticker: BTreeMap<usize, Vec<(usize, DVector<f64>)>> = BTreeMap::new();
    for s in samples {
        let z = forward_embed(&s.variant, s.sector, &params)?;
        per_ticker.entry(s.ticker_idx).or_default().push((s.date_idx, z));
    }

    let mut vectors = BTreeMap::new();
    let mut daily = BTreeMap::new();
    for (ti, mut days) in per_ticker {
        days.sort_by_key(|(di, _)| *di);
        let name = tickers
            .get(ti)
            .ok_or_else(|| Error::Data(format!("sample ticker index {ti} out of range")))?
            .clone();
        let mut mean = DVector::zeros(dims.d);
        let mut rows = DMatrix::zeros(days.len(), dims.d);
        for (row, (_, z)) in days.iter().enumerate() {
            mean += z;
            rows.row_mut(row).copy_from(&z.transpose());
        }
        mean /= days.len() as f64;
        let dates: Vec<usize> = days.iter().map(|(di, _)| *di).collect();
        vectors.insert(name.clone(), mean);
        daily.insert(name, (dates, rows));
    }

    let omitted: Vec<String> = tickers
        .iter()
        .filter(|t| !vectors.contains_key(*t))
        .cloned()
        .collect();

    Ok((EmbeddingSet { meta, d: dims.d, vectors, daily }, omitted))
}

fn distance(a: &DVector<f64>, b: &DVector<f64>, metric: TopkMetric) -> f64 {
    match metric {
        TopkMetric::L2 => (a - b).norm(),
        TopkMetric::Cosine => {
            let na = a.norm();
            let nb = b.norm();
            if na == 0.0 || nb == 0.0 {
                return 1.0;
            }
            1.0 - a.dot(b) / (na * nb)
        }
    }
}

/// k nearest set members to `query`, ascending distance, ties broken by
/// ticker name. `exclude` drops the query's own ticker when it lives in the
/// same set.
pub fn topk(
    query: &DVector<f64>,
    set: &EmbeddingSet,
    k: usize,
    metric: TopkMetric,
    exclude: Option<&str>,
) -> Result<TopkResult> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if query.len() != set.d {
        return Err(Error::Dimension { expected: set.d, got: query.len() });
    }
    let mut scored: Vec<(String, f64)> = set
        .vectors
        .iter()
        .filter(|(name, _)| exclude != Some(name.as_str()))
        .map(|(name, v)| (name.clone(), distance(query, v, metric)))
        .collect();
    scored.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    let clipped = k > scored.len();
    scored.truncate(k);
    Ok(TopkResult { ranked: scored, clipped })
}

/// TOP@k for a ticker already present in the set (self excluded).
pub fn topk_ticker(
    set: &EmbeddingSet,
    ticker: &str,
    k: usize,
    metric: TopkMetric,
) -> Result<TopkResult> {
    let query = set
        .vectors
        .get(ticker)
        .ok_or_else(|| Error::UnknownTicker(ticker.to_string()))?;
    topk(query, set, k, metric, Some(ticker))
}

/// Cross-exchange query: embed the query's sample stream with the source
/// model, then rank against the target exchange's set built with the same
/// parameters. Disjoint ticker namespaces mean self-exclusion never fires.
pub fn cross_exchange_topk(
    query_samples: &[Sample],
    theta: &[f64],
    dims: ModelDims,
    target_set: &EmbeddingSet,
    k: usize,
    metric: TopkMetric,
    exclude: Option<&str>,
) -> Result<TopkResult> {
    if dims.d != target_set.d {
        return Err(Error::Dimension { expected: target_set.d, got: dims.d });
    }
    if query_samples.is_empty() {
        return Err(Error::Data("query sample stream is empty".into()));
    }
    let params = ModelParams::unflatten(dims, theta)?;
    let mut mean = DVector::zeros(dims.d);
    for s in query_samples {
        mean += forward_embed(&s.variant, s.sector, &params)?;
    }
    mean /= query_samples.len() as f64;
    topk(&mean, target_set, k, metric, exclude)
}

/// Pearson correlation between two equal-length slices.
fn pearson_raw(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Linear-kernel CKA between two day-by-day embedding matrices restricted to
/// their common dates.
fn linear_cka(
    (dates_x, x): &(Vec<usize>, DMatrix<f64>),
    (dates_y, y): &(Vec<usize>, DMatrix<f64>),
) -> f64 {
    // align on common date indices
    let set_y: BTreeMap<usize, usize> =
        dates_y.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut rows_x = Vec::new();
    let mut rows_y = Vec::new();
    for (i, d) in dates_x.iter().enumerate() {
        if let Some(&j) = set_y.get(d) {
            rows_x.push(i);
            rows_y.push(j);
        }
    }
    let n = rows_x.len();
    if n < 2 {
        return 0.0;
    }
    let d = x.ncols();
    let mut xc = DMatrix::zeros(n, d);
    let mut yc = DMatrix::zeros(n, d);
    for (r, (&ix, &iy)) in rows_x.iter().zip(&rows_y).enumerate() {
        xc.row_mut(r).copy_from(&x.row(ix));
        yc.row_mut(r).copy_from(&y.row(iy));
    }
    for mut m in [xc.column_iter_mut(), yc.column_iter_mut()] {
        for mut col in &mut m {
            let mean = col.sum() / n as f64;
            for v in col.iter_mut() {
                *v -= mean;
            }
        }
    }
    let cross = (xc.transpose() * &yc).norm_squared();
    let nx = (xc.transpose() * &xc).norm();
    let ny = (yc.transpose() * &yc).norm();
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    cross / (nx * ny)
}

/// Build the similarity matrix for an embedding set.
///
/// L2/L1 map pairwise distances affinely onto [-1, 1] so the smallest
/// off-diagonal distance becomes +1 and the largest -1; the diagonal is
/// excluded from the min/max and forced to 1. CORR is the Pearson
/// correlation between mean embedding vectors; CKA compares the two tickers'
/// daily embedding matrices with a linear kernel.
pub fn similarity_matrix(set: &EmbeddingSet, method: SimMethod) -> Result<SimilarityMatrix> {
    let tickers: Vec<String> = set.vectors.keys().cloned().collect();
    let n = tickers.len();
    if n < 2 {
        return Err(Error::Data("similarity matrix needs at least 2 tickers".into()));
    }
    if matches!(method, SimMethod::Corr | SimMethod::Cka) && set.d < 2 {
        return Err(Error::Data(format!("{} needs embedding dimension >= 2", method.tag())));
    }

    let mut values = DMatrix::identity(n, n);
    let mut degenerate = false;

    match method {
        SimMethod::L2 | SimMethod::L1 => {
            let mut dist = DMatrix::zeros(n, n);
            let mut d_min = f64::INFINITY;
            let mut d_max = f64::NEG_INFINITY;
            for i in 0..n {
                for j in (i + 1)..n {
                    let a = &set.vectors[&tickers[i]];
                    let b = &set.vectors[&tickers[j]];
                    let d = match method {
                        SimMethod::L2 => (a - b).norm(),
                        SimMethod::L1 => (a - b).abs().sum(),
                        _ => unreachable!(),
                    };
                    dist[(i, j)] = d;
                    d_min = d_min.min(d);
                    d_max = d_max.max(d);
                }
            }
            if d_max == d_min {
                degenerate = true;
                for i in 0..n {
                    for j in (i + 1)..n {
                        values[(i, j)] = 1.0;
                        values[(j, i)] = 1.0;
                    }
                }
            } else {
                let span = d_max - d_min;
                for i in 0..n {
                    for j in (i + 1)..n {
                        let rho = 1.0 - 2.0 * (dist[(i, j)] - d_min) / span;
                        values[(i, j)] = rho;
                        values[(j, i)] = rho;
                    }
                }
            }
        }
        SimMethod::Corr => {
            for i in 0..n {
                for j in (i + 1)..n {
                    let a = set.vectors[&tickers[i]].as_slice();
                    let b = set.vectors[&tickers[j]].as_slice();
                    let rho = pearson_raw(a, b).unwrap_or_else(|| {
                        degenerate = true;
                        0.0
                    });
                    values[(i, j)] = rho;
                    values[(j, i)] = rho;
                }
            }
        }
        SimMethod::Cka => {
            for i in 0..n {
                for j in (i + 1)..n {
                    let a = set
                        .daily
                        .get(&tickers[i])
                        .ok_or_else(|| Error::Data("missing daily embeddings for CKA".into()))?;
                    let b = set
                        .daily
                        .get(&tickers[j])
                        .ok_or_else(|| Error::Data("missing daily embeddings for CKA".into()))?;
                    let v = linear_cka(a, b);
                    values[(i, j)] = v;
                    values[(j, i)] = v;
                }
            }
        }
    }

    Ok(SimilarityMatrix { tickers, values, method, degenerate })
}

impl EmbeddingSet {
    /// Export: one metadata header line, then `ticker,v1..vd` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io { path: "<writer>".into(), source: e };
        writeln!(
            w,
            "# d={} period={} model={} exchange={}",
            self.d, self.meta.period, self.meta.model_id, self.meta.exchange
        )
        .map_err(io)?;
        let header: Vec<String> = (1..=self.d).map(|i| format!("v{i}")).collect();
        writeln!(w, "ticker,{}", header.join(",")).map_err(io)?;
        for (ticker, v) in &self.vectors {
            let vals: Vec<String> = v.iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(w, "{ticker},{}", vals.join(",")).map_err(io)?;
        }
        Ok(())
    }
}

impl SimilarityMatrix {
    /// Export as a square CSV with ticker header row and column.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io { path: "<writer>".into(), source: e };
        writeln!(w, "ticker,{}", self.tickers.join(",")).map_err(io)?;
        for (i, t) in self.tickers.iter().enumerate() {
            let vals: Vec<String> =
                (0..self.tickers.len()).map(|j| format!("{:.17e}", self.values[(i, j)])).collect();
            writeln!(w, "{t},{}", vals.join(",")).map_err(io)?;
        }
        Ok(())
    }
}
