//! Portfolio construction: covariance estimators, the risk-capped
//! mean-variance solver, the rolling monthly backtest with performance
//! metrics, and the correlation Frobenius diagnostic.

mod backtest;
mod cov;
mod mvo;
mod psd;

pub use backtest::{
    perf_metrics, rolling_backtest, subuniverse_draws, BacktestConfig, BacktestOutput,
    CovSpec, MonthRecord, PerfReport,
};
pub use cov::{embedding_cov, gerber_cov, historical_cov, shrinkage_cov, CovEstimate, CovMethodTag};
pub use mvo::{solve_min_variance, solve_mvo, MvoProblem, MvoSolution};
pub use psd::{min_eigenvalue, nearest_psd, PsdRepair};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Frobenius tracking ratio between a method's correlation matrix and the
/// realized past/future correlations: values at or below 1 mean the method
/// sits closer to the future correlation than to the past one.
pub fn frobenius_tracking(
    md: &DMatrix<f64>,
    rc_past: &DMatrix<f64>,
    rc_future: &DMatrix<f64>,
) -> Result<f64> {
    if md.shape() != rc_past.shape() || md.shape() != rc_future.shape() {
        return Err(Error::Dimension { expected: md.nrows(), got: rc_past.nrows() });
    }
    let num = (md - rc_future).map(|v| v * v).sum().sqrt();
    let den = (md - rc_past).map(|v| v * v).sum().sqrt();
    if den == 0.0 {
        return Err(Error::Data(
            "zero denominator: method matrix equals the past realized correlation".into(),
        ));
    }
    Ok(num / den)
}
