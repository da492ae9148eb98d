//! Similarity-quality metrics: return correlation, band-constrained dynamic
//! time warping, the TOP@k evaluation protocol, and the mixing-parameter
//! ablation harness.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Sample Pearson correlation of two equal-length series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension { expected: x.len(), got: y.len() });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Data("pearson needs at least 2 points".into()));
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
        return Err(Error::Data("pearson is undefined for zero-variance input".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Band-constrained DTW distance: the square root of the minimum cumulative
/// squared difference over monotone alignment paths whose index pairs stay
/// within the Sakoe-Chiba band `|i - j| <= r`.
pub fn dtw(x: &[f64], y: &[f64], r: usize) -> Result<f64> {
    let m = x.len();
    let n = y.len();
    if m == 0 || n == 0 {
        return Err(Error::Data("dtw needs non-empty series".into()));
    }
    if r < m.abs_diff(n) {
        return Err(Error::InfeasibleBand { r, m, n });
    }
    // dp over 1-based (i, j); cell (i, j) holds the best path cost ending there
    let mut dp = vec![vec![f64::INFINITY; n + 1]; m + 1];
    dp[0][0] = 0.0;
    for i in 1..=m {
        let lo = i.saturating_sub(r).max(1);
        let hi = (i + r).min(n);
        for j in lo..=hi {
            let cost = (x[i - 1] - y[j - 1]) * (x[i - 1] - y[j - 1]);
            let best = dp[i - 1][j - 1].min(dp[i - 1][j]).min(dp[i][j - 1]);
            dp[i][j] = best + cost;
        }
    }
    Ok(dp[m][n].sqrt())
}

/// Default Sakoe-Chiba radius: 10% of the longer series, at least the length
/// difference so a path always exists.
pub fn default_band_radius(m: usize, n: usize) -> usize {
    let tenth = (0.1 * m.max(n) as f64).ceil() as usize;
    tenth.max(m.abs_diff(n))
}

/// Cumulative return path compounded from simple returns.
pub fn cumulative_returns(returns: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(returns.len());
    let mut acc = 1.0;
    for r in returns {
        acc *= 1.0 + r;
        out.push(acc - 1.0);
    }
    out
}

/// TOP@k metric table: for each k, the mean over queries of the mean
/// correlation / DTW between the query and its top-k similar stocks.
#[derive(Debug, Clone)]
pub struct TopkTable {
    pub k_list: Vec<usize>,
    pub correlation: Vec<f64>,
    pub dtw: Vec<f64>,
    /// Queries dropped because a required return series was missing.
    pub dropped: Vec<String>,
}

/// Evaluate ranked similar-stock lists against out-of-sample return series.
///
/// Correlation compares daily simple returns; DTW compares cumulative return
/// paths. A query is dropped (and reported) when its own series or any ranked
/// series needed for the largest k is missing.
pub fn topk_report(
    ranked_by_query: &[(String, Vec<String>)],
    oos_returns: &BTreeMap<String, Vec<f64>>,
    k_list: &[usize],
) -> Result<TopkTable> {
    if k_list.is_empty() {
        return Err(Error::Config("k list must be non-empty".into()));
    }
    let k_max = *k_list.iter().max().expect("non-empty");
    let mut corr_acc = vec![0.0; k_list.len()];
    let mut dtw_acc = vec![0.0; k_list.len()];
    let mut n_used = 0usize;
    let mut dropped = Vec::new();

    for (query, ranked) in ranked_by_query {
        let Some(q_ret) = oos_returns.get(query) else {
            dropped.push(query.clone());
            continue;
        };
        if ranked.len() < k_max || ranked.iter().take(k_max).any(|t| !oos_returns.contains_key(t))
        {
            dropped.push(query.clone());
            continue;
        }
        let q_cum = cumulative_returns(q_ret);
        let r = default_band_radius(q_cum.len(), q_cum.len());
        // per-candidate metrics, reused across k cutoffs
        let mut corr_each = Vec::with_capacity(k_max);
        let mut dtw_each = Vec::with_capacity(k_max);
        for t in ranked.iter().take(k_max) {
            let s_ret = &oos_returns[t];
            corr_each.push(pearson(q_ret, s_ret)?);
            dtw_each.push(dtw(&q_cum, &cumulative_returns(s_ret), r)?);
        }
        for (ki, &k) in k_list.iter().enumerate() {
            corr_acc[ki] += corr_each[..k].iter().sum::<f64>() / k as f64;
            dtw_acc[ki] += dtw_each[..k].iter().sum::<f64>() / k as f64;
        }
        n_used += 1;
    }

    if n_used == 0 {
        return Err(Error::Data("no query had complete out-of-sample series".into()));
    }
    let scale = 1.0 / n_used as f64;
    Ok(TopkTable {
        k_list: k_list.to_vec(),
        correlation: corr_acc.into_iter().map(|v| v * scale).collect(),
        dtw: dtw_acc.into_iter().map(|v| v * scale).collect(),
        dropped,
    })
}

/// Ablation table over the corruption mixing weight: one row per lambda,
/// TOP@k columns per metric, best row flagged per column.
#[derive(Debug, Clone)]
pub struct AblationTable {
    pub lambdas: Vec<f64>,
    pub k_list: Vec<usize>,
    /// correlation[row][col]; NaN rows mark per-lambda failures kept under
    /// keep-going semantics.
    pub correlation: Vec<Vec<f64>>,
    pub dtw: Vec<Vec<f64>>,
    /// Row index of the best (highest) correlation per k column.
    pub best_correlation: Vec<usize>,
    /// Row index of the best (lowest) DTW per k column.
    pub best_dtw: Vec<usize>,
    pub failures: Vec<(f64, String)>,
}

/// Run the supplied pipeline once per lambda and assemble the ablation table.
/// With `keep_going`, a failed lambda becomes a NaN row instead of aborting.
pub fn lambda_ablation(
    lambda_grid: &[f64],
    k_list: &[usize],
    keep_going: bool,
    mut run: impl FnMut(f64) -> Result<TopkTable>,
) -> Result<AblationTable> {
    if lambda_grid.is_empty() {
        return Err(Error::Config("lambda grid must be non-empty".into()));
    }
    let mut correlation = Vec::with_capacity(lambda_grid.len());
    let mut dtw_rows = Vec::with_capacity(lambda_grid.len());
    let mut failures = Vec::new();

    for &lambda in lambda_grid {
        match run(lambda) {
            Ok(table) => {
                if table.k_list != k_list {
                    return Err(Error::Data("pipeline returned mismatched k list".into()));
                }
                correlation.push(table.correlation);
                dtw_rows.push(table.dtw);
            }
            Err(e) if keep_going => {
                failures.push((lambda, e.to_string()));
                correlation.push(vec![f64::NAN; k_list.len()]);
                dtw_rows.push(vec![f64::NAN; k_list.len()]);
            }
            Err(e) => return Err(e),
        }
    }

    let best_correlation = (0..k_list.len())
        .map(|col| {
            (0..lambda_grid.len())
                .filter(|&row| correlation[row][col].is_finite())
                .max_by(|&a, &b| {
                    correlation[a][col].partial_cmp(&correlation[b][col]).expect("finite")
                })
                .unwrap_or(0)
        })
        .collect();
    let best_dtw = (0..k_list.len())
        .map(|col| {
            (0..lambda_grid.len())
                .filter(|&row| dtw_rows[row][col].is_finite())
                .min_by(|&a, &b| dtw_rows[a][col].partial_cmp(&dtw_rows[b][col]).expect("finite"))
                .unwrap_or(0)
        })
        .collect();

    Ok(AblationTable {
        lambdas: lambda_grid.to_vec(),
        k_list: k_list.to_vec(),
        correlation,
        dtw: dtw_rows,
        best_correlation,
        best_dtw,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_self_and_antithetic() {
        let x = vec![0.5, 1.0, -0.25, 2.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_hand_value() {
        let x = vec![1.0, 2.0, 3.0];
        let y = vec![1.0, 2.0, 4.0];
        assert!((pearson(&x, &y).unwrap() - 0.98198).abs() < 1e-5);
    }

    #[test]
    fn pearson_rejects_zero_variance() {
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn pearson_affine_invariance() {
        let x = vec![0.1, -0.3, 0.7, 0.2, -0.5];
        let y = vec![1.0, 0.4, -0.2, 0.9, 0.3];
        let base = pearson(&x, &y).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| 3.5 * v + 10.0).collect();
        assert!((pearson(&scaled, &y).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn dtw_identity_and_single_pair() {
        let x = vec![0.2, 0.4, -0.1];
        assert_eq!(dtw(&x, &x, 2).unwrap(), 0.0);
        assert_eq!(dtw(&[0.0], &[3.0], 0).unwrap(), 3.0);
    }

    #[test]
    fn dtw_absorbs_a_repeated_point() {
        // x=[1,2,3], y=[1,2,2,3]: path (1,1)(2,2)(2,3)(3,4) costs zero
        let x = vec![1.0, 2.0, 3.0];
        let y = vec![1.0, 2.0, 2.0, 3.0];
        assert_eq!(dtw(&x, &y, 2).unwrap(), 0.0);
    }

    #[test]
    fn dtw_is_symmetric() {
        let x = vec![0.3, 1.0, -0.4, 0.2];
        let y = vec![0.1, 0.9, 0.5];
        let a = dtw(&x, &y, 3).unwrap();
        let b = dtw(&y, &x, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_band_is_rejected() {
        assert!(matches!(
            dtw(&[1.0, 2.0, 3.0, 4.0], &[1.0], 1),
            Err(Error::InfeasibleBand { .. })
        ));
    }

    /// Exhaustive path enumeration for small series, accumulating costs in
    /// path order like the DP does.
    pub(crate) fn dtw_brute_force(x: &[f64], y: &[f64], r: usize) -> f64 {
        fn walk(x: &[f64], y: &[f64], i: usize, j: usize, acc: f64, r: usize, best: &mut f64) {
            let cost = acc + (x[i] - y[j]) * (x[i] - y[j]);
            if i + 1 == x.len() && j + 1 == y.len() {
                if cost < *best {
                    *best = cost;
                }
                return;
            }
            let step_ok = |i: usize, j: usize| i.abs_diff(j) <= r;
            if i + 1 < x.len() && step_ok(i + 1, j) {
                walk(x, y, i + 1, j, cost, r, best);
            }
            if j + 1 < y.len() && step_ok(i, j + 1) {
                walk(x, y, i, j + 1, cost, r, best);
            }
            if i + 1 < x.len() && j + 1 < y.len() {
                walk(x, y, i + 1, j + 1, cost, r, best);
            }
        }
        let mut best = f64::INFINITY;
        walk(x, y, 0, 0, 0.0, r, &mut best);
        best.sqrt()
    }

    #[test]
    fn dtw_matches_brute_force_exactly() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..60 {
            let m: usize = rng.random_range(1..=6);
            let n: usize = rng.random_range(1..=6);
            let x: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let r = rng.random_range(m.abs_diff(n)..=6);
            let fast = dtw(&x, &y, r).unwrap();
            let slow = dtw_brute_force(&x, &y, r);
            assert_eq!(fast, slow, "m={m} n={n} r={r}");
        }
    }

    #[test]
    fn wide_band_equals_unbanded() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wide = dtw(&x, &y, 6).unwrap();
        let wider = dtw(&x, &y, 100).unwrap();
        assert_eq!(wide, wider);
    }

    fn returns_map(pairs: &[(&str, &[f64])]) -> BTreeMap<String, Vec<f64>> {
        pairs.iter().map(|(n, v)| (n.to_string(), v.to_vec())).collect()
    }

    #[test]
    fn self_comparison_gives_unit_correlation_and_zero_dtw() {
        let series: Vec<f64> = vec![0.01, -0.02, 0.03, 0.005, -0.01];
        let map = returns_map(&[("Q", &series), ("A", &series), ("B", &series)]);
        let ranked = vec![("Q".to_string(), vec!["A".to_string(), "B".to_string()])];
        let table = topk_report(&ranked, &map, &[1, 2]).unwrap();
        for v in &table.correlation {
            assert!((v - 1.0).abs() < 1e-12);
        }
        for v in &table.dtw {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn k1_row_is_the_single_best_stock_metric() {
        let q = vec![0.01, 0.02, -0.01, 0.03];
        let a = vec![0.02, 0.01, -0.02, 0.025];
        let b = vec![-0.01, 0.04, 0.01, -0.03];
        let map = returns_map(&[("Q", &q), ("A", &a), ("B", &b)]);
        let ranked = vec![("Q".to_string(), vec!["A".to_string(), "B".to_string()])];
        let table = topk_report(&ranked, &map, &[1]).unwrap();
        let expected = pearson(&q, &a).unwrap();
        assert!((table.correlation[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn table_matches_hand_computed_means_over_two_queries() {
        let q1 = vec![0.01, 0.02, -0.01];
        let q2 = vec![-0.02, 0.01, 0.02];
        let a = vec![0.015, 0.018, -0.012];
        let b = vec![0.03, -0.01, 0.02];
        let map = returns_map(&[("Q1", &q1), ("Q2", &q2), ("A", &a), ("B", &b)]);
        let ranked = vec![
            ("Q1".to_string(), vec!["A".to_string(), "B".to_string()]),
            ("Q2".to_string(), vec!["B".to_string(), "A".to_string()]),
        ];
        let table = topk_report(&ranked, &map, &[2]).unwrap();
        let hand = 0.5
            * ((pearson(&q1, &a).unwrap() + pearson(&q1, &b).unwrap()) / 2.0
                + (pearson(&q2, &b).unwrap() + pearson(&q2, &a).unwrap()) / 2.0);
        assert!((table.correlation[0] - hand).abs() < 1e-12);
    }

    #[test]
    fn query_order_does_not_change_the_table() {
        let q1 = vec![0.01, 0.02, -0.01];
        let q2 = vec![-0.02, 0.01, 0.02];
        let a = vec![0.015, 0.018, -0.012];
        let map = returns_map(&[("Q1", &q1), ("Q2", &q2), ("A", &a)]);
        let fwd = vec![
            ("Q1".to_string(), vec!["A".to_string()]),
            ("Q2".to_string(), vec!["A".to_string()]),
        ];
        let rev: Vec<_> = fwd.iter().rev().cloned().collect();
        let t1 = topk_report(&fwd, &map, &[1]).unwrap();
        let t2 = topk_report(&rev, &map, &[1]).unwrap();
        assert_eq!(t1.correlation, t2.correlation);
        assert_eq!(t1.dtw, t2.dtw);
    }

    #[test]
    fn missing_series_drops_the_query() {
        let q = vec![0.01, 0.02, -0.01];
        let map = returns_map(&[("Q", &q)]);
        let ranked = vec![
            ("Q".to_string(), vec!["GHOST".to_string()]),
            ("NOSERIES".to_string(), vec!["Q".to_string()]),
        ];
        let err = topk_report(&ranked, &map, &[1]);
        assert!(err.is_err()); // every query dropped
    }

    #[test]
    fn ablation_single_lambda_gives_single_row() {
        let table = lambda_ablation(&[0.7], &[1, 3], false, |_| {
            Ok(TopkTable {
                k_list: vec![1, 3],
                correlation: vec![0.8, 0.6],
                dtw: vec![10.0, 12.0],
                dropped: vec![],
            })
        })
        .unwrap();
        assert_eq!(table.correlation.len(), 1);
        assert_eq!(table.best_correlation, vec![0, 0]);
    }

    #[test]
    fn ablation_flags_best_per_column() {
        let grid = [0.1, 0.5, 0.9];
        let table = lambda_ablation(&grid, &[1, 3], false, |l| {
            Ok(TopkTable {
                k_list: vec![1, 3],
                // lambda 0.5 best on k=1, lambda 0.9 best on k=3
                correlation: vec![if l == 0.5 { 0.9 } else { 0.5 }, l],
                dtw: vec![if l == 0.5 { 1.0 } else { 2.0 }, 1.0 - l],
                dropped: vec![],
            })
        })
        .unwrap();
        assert_eq!(table.best_correlation, vec![1, 2]);
        assert_eq!(table.best_dtw, vec![1, 2]);
    }

    #[test]
    fn ablation_keep_going_records_failures_as_nan_rows() {
        let grid = [0.1, 0.3];
        let table = lambda_ablation(&grid, &[1], true, |l| {
            if l == 0.1 {
                Err(Error::Data("boom".into()))
            } else {
                Ok(TopkTable {
                    k_list: vec![1],
                    correlation: vec![0.5],
                    dtw: vec![3.0],
                    dropped: vec![],
                })
            }
        })
        .unwrap();
        assert!(table.correlation[0][0].is_nan());
        assert_eq!(table.failures.len(), 1);
        assert_eq!(table.best_correlation, vec![1]);
    }
}
