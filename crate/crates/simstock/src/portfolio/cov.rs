//! Covariance estimators: sample, constant-correlation shrinkage, Gerber
//! comovement, and embedding-similarity based.

use nalgebra::DMatrix;

use super::psd::{min_eigenvalue, nearest_psd};
use crate::error::{Error, Result};
use crate::similarity::SimilarityMatrix;

#[derive(Debug, Clone, PartialEq)]
pub enum CovMethodTag {
    Historical,
    Shrinkage { delta: f64 },
    Gerber { threshold: f64 },
    Embedding { sim_method: &'static str },
}

/// A covariance estimate with provenance and repair bookkeeping.
#[derive(Debug, Clone)]
pub struct CovEstimate {
    pub matrix: DMatrix<f64>,
    pub method: CovMethodTag,
    pub repaired: bool,
    /// Human-readable degeneracy notes (zero-variance columns, all-neutral
    /// Gerber pairs, ...).
    pub flags: Vec<String>,
}

impl CovEstimate {
    pub fn write_csv<W: std::io::Write>(&self, tickers: &[String], mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io { path: "<writer>".into(), source: e };
        writeln!(w, "ticker,{}", tickers.join(",")).map_err(io)?;
        for (i, t) in tickers.iter().enumerate() {
            let vals: Vec<String> =
                (0..tickers.len()).map(|j| format!("{:.17e}", self.matrix[(i, j)])).collect();
            writeln!(w, "{t},{}", vals.join(",")).map_err(io)?;
        }
        Ok(())
    }
}

fn column_means(returns: &DMatrix<f64>) -> Vec<f64> {
    (0..returns.ncols())
        .map(|j| returns.column(j).sum() / returns.nrows() as f64)
        .collect()
}

fn demean(returns: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(returns);
    let mut x = returns.clone();
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            x[(i, j)] -= means[j];
        }
    }
    x
}

/// Sample covariance with 1/(T-1) normalization.
pub fn historical_cov(returns: &DMatrix<f64>) -> Result<CovEstimate> {
    let t = returns.nrows();
    if t < 2 {
        return Err(Error::Data(format!("need at least 2 periods, got {t}")));
    }
    let x = demean(returns);
    let matrix = (x.transpose() * &x) / (t as f64 - 1.0);
    let flags = (0..returns.ncols())
        .filter(|&j| matrix[(j, j)] == 0.0)
        .map(|j| format!("zero-variance column {j}"))
        .collect();
    Ok(CovEstimate { matrix, method: CovMethodTag::Historical, repaired: false, flags })
}

/// Constant-correlation shrinkage: `delta * F + (1 - delta) * S` where F has
/// the sample variances on the diagonal and the average sample correlation
/// elsewhere, and the intensity is the analytic estimate clamped to [0, 1].
///
/// Moments follow the reference construction: the sample covariance used
/// inside the intensity is the 1/T one.
pub fn shrinkage_cov(returns: &DMatrix<f64>) -> Result<CovEstimate> {
    let t = returns.nrows();
    let n = returns.ncols();
    if t < 2 {
        return Err(Error::Data(format!("need at least 2 periods, got {t}")));
    }
    if n < 2 {
        return Err(Error::Data("shrinkage needs at least 2 assets".into()));
    }
    let x = demean(returns);
    let tf = t as f64;
    let sample = (x.transpose() * &x) / tf;

    let var: Vec<f64> = (0..n).map(|i| sample[(i, i)]).collect();
    if var.iter().any(|&v| v <= 0.0) {
        return Err(Error::Data("degenerate variance in shrinkage input".into()));
    }
    let sqrtvar: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();

    let mut r_sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            r_sum += sample[(i, j)] / (sqrtvar[i] * sqrtvar[j]);
        }
    }
    let r_bar = 2.0 * r_sum / (n as f64 * (n as f64 - 1.0));

    let mut prior = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            prior[(i, j)] =
                if i == j { var[i] } else { r_bar * sqrtvar[i] * sqrtvar[j] };
        }
    }

    // pi-hat: asymptotic variance of the sample covariance entries
    let y = x.map(|v| v * v);
    let phi_mat = (y.transpose() * &y) / tf - sample.component_mul(&sample);
    let pi_hat: f64 = phi_mat.iter().sum();

    // rho-hat: covariance between sample entries and the structured target
    let x3 = x.map(|v| v * v * v);
    let term1 = (x3.transpose() * &x) / tf;
    let mut rho_hat: f64 = (0..n).map(|i| phi_mat[(i, i)]).sum();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let theta_ii_ij = term1[(i, j)] - var[i] * sample[(i, j)];
            let theta_jj_ij = term1[(j, i)] - var[j] * sample[(i, j)];
            rho_hat += (r_bar / 2.0)
                * ((sqrtvar[j] / sqrtvar[i]) * theta_ii_ij
                    + (sqrtvar[i] / sqrtvar[j]) * theta_jj_ij);
        }
    }

    let gamma_hat = (&sample - &prior).map(|v| v * v).sum();
    let delta = if gamma_hat > 0.0 {
        let kappa = (pi_hat - rho_hat) / gamma_hat;
        (kappa / tf).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let matrix = &prior * delta + &sample * (1.0 - delta);
    Ok(CovEstimate {
        matrix,
        method: CovMethodTag::Shrinkage { delta },
        repaired: false,
        flags: vec![],
    })
}

/// Gerber comovement covariance: per pair, count periods where both returns
/// exceed their c-sigma thresholds in the same direction (concordant) or in
/// opposite directions (discordant); periods where exactly one leg exceeds
/// count toward the denominator. The statistic scales the sample vols.
pub fn gerber_cov(returns: &DMatrix<f64>, c: f64) -> Result<CovEstimate> {
    let t = returns.nrows();
    let n = returns.ncols();
    if t < 2 {
        return Err(Error::Data(format!("need at least 2 periods, got {t}")));
    }
    if !(c > 0.0) {
        return Err(Error::Config("gerber threshold fraction must be positive".into()));
    }
    let x = demean(returns);
    let vols: Vec<f64> = (0..n)
        .map(|j| (x.column(j).map(|v| v * v).sum() / (t as f64 - 1.0)).sqrt())
        .collect();

    // direction classification per (period, asset): +1, -1 or 0 inside band.
    // thresholds scale with the asset's own volatility, which is what makes
    // the statistic invariant to rescaling a single series.
    let mut dir = DMatrix::<i8>::zeros(t, n);
    for j in 0..n {
        let thr = c * vols[j];
        for i in 0..t {
            let r = returns[(i, j)];
            dir[(i, j)] = if thr > 0.0 && r >= thr {
                1
            } else if thr > 0.0 && r <= -thr {
                -1
            } else {
                0
            };
        }
    }

    let mut g = DMatrix::identity(n, n);
    let mut flags = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let mut conc = 0u32;
            let mut disc = 0u32;
            let mut mixed = 0u32;
            for row in 0..t {
                match (dir[(row, i)], dir[(row, j)]) {
                    (0, 0) => {}
                    (a, b) if a != 0 && b != 0 && a == b => conc += 1,
                    (a, b) if a != 0 && b != 0 => disc += 1,
                    _ => mixed += 1,
                }
            }
            let denom = conc + disc + mixed;
            let value = if denom == 0 {
                flags.push(format!("all-neutral pair ({i}, {j})"));
                0.0
            } else {
                (conc as f64 - disc as f64) / denom as f64
            };
            g[(i, j)] = value;
            g[(j, i)] = value;
        }
    }

    let mut matrix = g.clone();
    for i in 0..n {
        for j in 0..n {
            matrix[(i, j)] *= vols[i] * vols[j];
        }
    }
    let mut repaired = false;
    if min_eigenvalue(&matrix) < -1e-8 {
        matrix = nearest_psd(&matrix)?.matrix;
        repaired = true;
    }
    Ok(CovEstimate {
        matrix,
        method: CovMethodTag::Gerber { threshold: c },
        repaired,
        flags,
    })
}

/// Covariance from an embedding similarity matrix and per-asset vols:
/// `sigma_ij = sim_ij * vol_i * vol_j`, PSD-repaired when needed.
pub fn embedding_cov(sim: &SimilarityMatrix, vols: &[f64]) -> Result<CovEstimate> {
    let n = sim.tickers.len();
    if vols.len() != n {
        return Err(Error::Dimension { expected: n, got: vols.len() });
    }
    if vols.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Data("every volatility must be positive".into()));
    }
    let mut matrix = sim.values.clone();
    for i in 0..n {
        for j in 0..n {
            matrix[(i, j)] *= vols[i] * vols[j];
        }
    }
    let mut repaired = false;
    if min_eigenvalue(&matrix) < -1e-8 {
        matrix = nearest_psd(&matrix)?.matrix;
        repaired = true;
    }
    Ok(CovEstimate {
        matrix,
        method: CovMethodTag::Embedding { sim_method: sim.method.tag() },
        repaired,
        flags: vec![],
    })
}
