//! Pairs trading on the price ratio: rolling z-score signals, long-short
//! position management with a stop-loss, proportional transaction costs,
//! lookback grid search, and per-query aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the stop-loss threshold is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopLossMode {
    /// Close when wealth falls more than `stop_loss` below wealth at entry.
    DropFromEntry,
    /// Close when wealth falls below the absolute level `stop_loss`.
    AbsoluteFloor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairConfig {
    /// Short lookback (rolling mean), trading days.
    pub l1: usize,
    /// Long lookback (rolling mean and standard deviation), trading days.
    pub l2: usize,
    /// Entry threshold in standard deviations.
    pub entry_threshold: f64,
    /// Exit band half-width in standard deviations.
    pub exit_band: f64,
    pub stop_loss: f64,
    pub stop_loss_mode: StopLossMode,
    pub initial_capital: f64,
    /// Proportional cost per executed leg, as a fraction of traded notional.
    pub cost_rate: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            l1: 5,
            l2: 20,
            entry_threshold: 1.25,
            exit_band: 0.5,
            stop_loss: 500.0,
            stop_loss_mode: StopLossMode::DropFromEntry,
            initial_capital: 10_000.0,
            cost_rate: 0.001,
        }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l1 < 2 || self.l2 < 2 {
            return Err(Error::Config("lookbacks must be >= 2".into()));
        }
        if !(self.entry_threshold > self.exit_band && self.exit_band > 0.0) {
            return Err(Error::Config(
                "need entry threshold > exit band half-width > 0".into(),
            ));
        }
        if !(self.initial_capital > 0.0) {
            return Err(Error::Config("initial capital must be positive".into()));
        }
        if self.cost_rate < 0.0 {
            return Err(Error::Config("cost rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositionState {
    Flat,
    /// Long the spread: long the query leg, short the similar leg.
    LongSpread,
    /// Short the spread: short the query leg, long the similar leg.
    ShortSpread,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    EnterLong,
    EnterShort,
    Exit,
    StopLoss,
}

#[derive(Debug, Clone, Copy)]
pub struct TradeEvent {
    pub day: usize,
    pub kind: EventKind,
    pub z: f64,
}

/// One mark-to-market row of the ledger.
#[derive(Debug, Clone, Copy)]
pub struct LedgerRow {
    pub day: usize,
    pub z: Option<f64>,
    pub state: PositionState,
    /// Signed units of the query leg (negative = short).
    pub units_q: f64,
    /// Signed units of the similar leg.
    pub units_s: f64,
    pub cash: f64,
    pub cum_costs: f64,
    pub wealth: f64,
}

#[derive(Debug, Clone)]
pub struct TradeLedger {
    pub rows: Vec<LedgerRow>,
    pub events: Vec<TradeEvent>,
    pub config: PairConfig,
}

impl TradeLedger {
    pub fn terminal_wealth(&self) -> f64 {
        self.rows.last().map(|r| r.wealth).unwrap_or(self.config.initial_capital)
    }

    pub fn terminal_pnl(&self) -> f64 {
        self.terminal_wealth() - self.config.initial_capital
    }

    /// Number of entry events (a pair with zero entries never traded).
    pub fn n_entries(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::EnterLong | EventKind::EnterShort))
            .count()
    }

    /// Maximum drawdown of the wealth path in percent (non-positive).
    pub fn max_drawdown_pct(&self) -> f64 {
        max_drawdown_pct(self.rows.iter().map(|r| r.wealth))
    }

    /// Export rows as CSV (after any caller-written header comment).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Io { path: "<writer>".into(), source: e };
        writeln!(w, "day,z,state,units_q,units_s,cash,cum_costs,wealth").map_err(io)?;
        for r in &self.rows {
            let z = r.z.map(|z| format!("{z:.10}")).unwrap_or_default();
            let state = match r.state {
                PositionState::Flat => "flat",
                PositionState::LongSpread => "long",
                PositionState::ShortSpread => "short",
            };
            writeln!(
                w,
                "{},{},{},{:.10},{:.10},{:.10},{:.10},{:.10}",
                r.day, z, state, r.units_q, r.units_s, r.cash, r.cum_costs, r.wealth
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

/// Peak-to-trough decline in percent over a wealth path (<= 0).
pub fn max_drawdown_pct(wealth: impl IntoIterator<Item = f64>) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut mdd = 0.0f64;
    for w in wealth {
        peak = peak.max(w);
        if peak > 0.0 {
            mdd = mdd.min((w - peak) / peak * 100.0);
        }
    }
    mdd
}

/// Rolling z-score of the price ratio: short-lookback mean minus
/// long-lookback mean, over the long-lookback population standard deviation.
/// `None` until both windows fill and wherever the deviation is zero.
pub fn zscore_series(pq: &[f64], ps: &[f64], l1: usize, l2: usize) -> Result<Vec<Option<f64>>> {
    if pq.len() != ps.len() {
        return Err(Error::Dimension { expected: pq.len(), got: ps.len() });
    }
    let n = pq.len();
    let warmup = l1.max(l2);
    if n <= warmup {
        return Err(Error::Data(format!(
            "series length {n} must exceed max lookback {warmup}"
        )));
    }
    let ratio: Vec<f64> = pq
        .iter()
        .zip(ps)
        .map(|(&q, &s)| {
            if s <= 0.0 || q <= 0.0 {
                f64::NAN
            } else {
                q / s
            }
        })
        .collect();
    if ratio.iter().any(|v| v.is_nan()) {
        return Err(Error::Data("non-positive price in ratio".into()));
    }

    let mut out = vec![None; n];
    for t in (warmup - 1)..n {
        let w1 = &ratio[t + 1 - l1..=t];
        let w2 = &ratio[t + 1 - l2..=t];
        let m1 = w1.iter().sum::<f64>() / l1 as f64;
        let m2 = w2.iter().sum::<f64>() / l2 as f64;
        let var = w2.iter().map(|v| (v - m2) * (v - m2)).sum::<f64>() / l2 as f64;
        let sd = var.sqrt();
        if sd > 0.0 {
            out[t] = Some((m1 - m2) / sd);
        }
    }
    Ok(out)
}

/// Pure signal view of the z-score path: entries above/below the threshold
/// while flat, exits when the score re-enters the band. At most one open
/// position; no entry on a day a close executed.
pub fn generate_signals(z: &[Option<f64>], config: &PairConfig) -> Result<Vec<TradeEvent>> {
    config.validate()?;
    let mut events = Vec::new();
    let mut state = PositionState::Flat;
    for (day, z_t) in z.iter().enumerate() {
        let Some(z_t) = *z_t else { continue };
        match state {
            PositionState::Flat => {
                if z_t > config.entry_threshold {
                    events.push(TradeEvent { day, kind: EventKind::EnterShort, z: z_t });
                    state = PositionState::ShortSpread;
                } else if z_t < -config.entry_threshold {
                    events.push(TradeEvent { day, kind: EventKind::EnterLong, z: z_t });
                    state = PositionState::LongSpread;
                }
            }
            PositionState::LongSpread | PositionState::ShortSpread => {
                if z_t.abs() <= config.exit_band {
                    events.push(TradeEvent { day, kind: EventKind::Exit, z: z_t });
                    state = PositionState::Flat;
                    // closed today: next entry check happens tomorrow
                }
            }
        }
    }
    Ok(events)
}

/// Run the full backtest: signals executed at same-day close, equal-notional
/// legs sized from wealth at entry, per-leg proportional costs, and the
/// stop-loss checked on marked wealth before the signal exit.
pub fn backtest_pair(pq: &[f64], ps: &[f64], config: &PairConfig) -> Result<TradeLedger> {
    config.validate()?;
    let z = zscore_series(pq, ps, config.l1, config.l2)?;
    let n = pq.len();

    let mut rows = Vec::with_capacity(n);
    let mut events = Vec::new();
    let mut state = PositionState::Flat;
    let mut units_q = 0.0f64;
    let mut units_s = 0.0f64;
    let mut cash = config.initial_capital;
    let mut cum_costs = 0.0f64;
    let mut entry_wealth = 0.0f64;

    for day in 0..n {
        if pq[day] <= 0.0 || ps[day] <= 0.0 {
            return Err(Error::Data(format!("non-positive price on day {day}")));
        }
        let mark = |cash: f64, uq: f64, us: f64| cash + uq * pq[day] + us * ps[day];
        let mut closed_today = false;

        if state != PositionState::Flat {
            let wealth_now = mark(cash, units_q, units_s);
            let stop_hit = match config.stop_loss_mode {
                StopLossMode::DropFromEntry => wealth_now < entry_wealth - config.stop_loss,
                StopLossMode::AbsoluteFloor => wealth_now < config.stop_loss,
            };
            let exit_signal = z[day].map(|z_t| z_t.abs() <= config.exit_band).unwrap_or(false);
            if stop_hit || exit_signal {
                // unwind both legs at today's close
                let notional_q = (units_q * pq[day]).abs();
                let notional_s = (units_s * ps[day]).abs();
                let cost = config.cost_rate * (notional_q + notional_s);
                cash += units_q * pq[day] + units_s * ps[day] - cost;
                cum_costs += cost;
                units_q = 0.0;
                units_s = 0.0;
                state = PositionState::Flat;
                closed_today = true;
                events.push(TradeEvent {
                    day,
                    kind: if stop_hit { EventKind::StopLoss } else { EventKind::Exit },
                    z: z[day].unwrap_or(f64::NAN),
                });
            }
        }

        if state == PositionState::Flat && !closed_today {
            if let Some(z_t) = z[day] {
                let direction = if z_t > config.entry_threshold {
                    Some(PositionState::ShortSpread)
                } else if z_t < -config.entry_threshold {
                    Some(PositionState::LongSpread)
                } else {
                    None
                };
                if let Some(dir) = direction {
                    let wealth_now = cash;
                    let notional = wealth_now / 2.0;
                    let (uq, us) = match dir {
                        // short spread: ratio too high, sell q, buy s
                        PositionState::ShortSpread => {
                            (-notional / pq[day], notional / ps[day])
                        }
                        PositionState::LongSpread => (notional / pq[day], -notional / ps[day]),
                        PositionState::Flat => unreachable!(),
                    };
                    let cost = config.cost_rate * 2.0 * notional;
                    cash -= uq * pq[day] + us * ps[day];
                    cash -= cost;
                    cum_costs += cost;
                    units_q = uq;
                    units_s = us;
                    entry_wealth = wealth_now;
                    state = dir;
                    events.push(TradeEvent {
                        day,
                        kind: match dir {
                            PositionState::ShortSpread => EventKind::EnterShort,
                            _ => EventKind::EnterLong,
                        },
                        z: z_t,
                    });
                }
            }
        }

        let wealth = mark(cash, units_q, units_s);
        rows.push(LedgerRow {
            day,
            z: z[day],
            state,
            units_q,
            units_s,
            cash,
            cum_costs,
            wealth,
        });
    }

    Ok(TradeLedger { rows, events, config: config.clone() })
}

/// Grid search over lookback pairs on a training slice, maximizing terminal
/// wealth among configurations that actually traded. Ties break toward the
/// smaller short lookback, then the smaller long lookback.
pub fn grid_search(
    pq: &[f64],
    ps: &[f64],
    l1_grid: &[usize],
    l2_grid: &[usize],
    base: &PairConfig,
) -> Result<(usize, usize)> {
    if l1_grid.is_empty() || l2_grid.is_empty() {
        return Err(Error::Config("grids must be non-empty".into()));
    }
    let mut l1_sorted = l1_grid.to_vec();
    l1_sorted.sort_unstable();
    let mut l2_sorted = l2_grid.to_vec();
    l2_sorted.sort_unstable();

    let mut best: Option<(f64, usize, usize)> = None;
    for &l1 in &l1_sorted {
        for &l2 in &l2_sorted {
            let cfg = PairConfig { l1, l2, ..base.clone() };
            if cfg.validate().is_err() || pq.len() <= l1.max(l2) {
                continue;
            }
            let ledger = match backtest_pair(pq, ps, &cfg) {
                Ok(l) => l,
                Err(_) => continue,
            };
            if ledger.n_entries() == 0 {
                continue;
            }
            let wealth = ledger.terminal_wealth();
            // strict improvement keeps the smallest (l1, l2) on ties
            if best.map(|(w, _, _)| wealth > w).unwrap_or(true) {
                best = Some((wealth, l1, l2));
            }
        }
    }
    match best {
        Some((_, l1, l2)) => Ok((l1, l2)),
        None => Err(Error::NoTradableConfig),
    }
}

/// Aggregate over the (up to three) pair ledgers of one query stock.
#[derive(Debug, Clone)]
pub struct AggregateReport {
    /// Mean terminal P&L over pairs that traded; `None` when none did
    /// (the table's NaN** case).
    pub mean_pnl: Option<f64>,
    /// Sample standard deviation of P&L; `None` when fewer than two pairs
    /// traded (the table's NaN* case).
    pub std_pnl: Option<f64>,
    pub mean_mdd_pct: Option<f64>,
    pub n_pairs: usize,
    pub n_signal_free: usize,
}

pub fn aggregate_query(ledgers: &[TradeLedger]) -> Result<AggregateReport> {
    if ledgers.len() > 3 {
        return Err(Error::Config(format!(
            "aggregate expects at most 3 pair ledgers, got {}",
            ledgers.len()
        )));
    }
    let traded: Vec<&TradeLedger> = ledgers.iter().filter(|l| l.n_entries() > 0).collect();
    let n_signal_free = ledgers.len() - traded.len();
    if traded.is_empty() {
        return Ok(AggregateReport {
            mean_pnl: None,
            std_pnl: None,
            mean_mdd_pct: None,
            n_pairs: ledgers.len(),
            n_signal_free,
        });
    }
    let pnls: Vec<f64> = traded.iter().map(|l| l.terminal_pnl()).collect();
    let mean = pnls.iter().sum::<f64>() / pnls.len() as f64;
    let std = if pnls.len() >= 2 {
        let var =
            pnls.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (pnls.len() - 1) as f64;
        Some(var.sqrt())
    } else {
        None
    };
    let mdd =
        traded.iter().map(|l| l.max_drawdown_pct()).sum::<f64>() / traded.len() as f64;
    Ok(AggregateReport {
        mean_pnl: Some(mean),
        std_pnl: std,
        mean_mdd_pct: Some(mdd),
        n_pairs: ledgers.len(),
        n_signal_free,
    })
}
