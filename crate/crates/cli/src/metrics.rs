//! Backtest performance metrics for the rolling portfolio experiment.
//!
//! Conventions, fixed here once so every caller agrees:
//!
//! - **Mean / stdDev** are over the realized daily portfolio returns of
//!   one holding period; stdDev is the sample standard deviation
//!   (divisor n − 1).
//! - **Annualized Sharpe** is √252 · mean / stdDev. A window with zero
//!   return variance has no Sharpe ratio — the division is flagged by
//!   returning `None` rather than ±∞.
//! - **CVaR at level 5%** is computed on losses (negated returns): the
//!   mean of the ⌈0.05·n⌉ largest losses. With 20 observed returns the
//!   tail is ⌈1⌉ = 1 observation, so CVaR is the single worst loss.

/// Trading days per year used for Sharpe annualization.
pub const TRADING_DAYS: f64 = 252.0;

/// CVaR tail level.
pub const CVAR_LEVEL: f64 = 0.05;

/// Arithmetic mean. Empty input yields 0 (callers guard emptiness).
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (divisor n − 1); 0 for fewer than two
/// observations.
pub fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Annualized Sharpe ratio √252·mean/std, or `None` when the return
/// variance is zero (division by zero must be surfaced, not hidden in an
/// infinity).
pub fn sharpe(returns: &[f64]) -> Option<f64> {
    // "Zero variance" means the returns never moved; checking the values
    // directly avoids declaring a spurious ~1e-18 deviation (accumulated
    // rounding in the mean) to be real variance.
    if returns.is_empty() || returns.iter().all(|&r| r == returns[0]) {
        return None;
    }
    let sd = std_dev(returns);
    if sd == 0.0 {
        return None;
    }
    Some(TRADING_DAYS.sqrt() * mean(returns) / sd)
}

/// Conditional value-at-risk of the returns at `CVAR_LEVEL`, in loss
/// convention: the mean of the ⌈0.05·n⌉ largest values of −return.
/// Empty input yields 0.
pub fn cvar_5(returns: &[f64]) -> f64 {
    if returns.is_empty() {
        return 0.0;
    }
    let mut losses: Vec<f64> = returns.iter().map(|r| -r).collect();
    losses.sort_by(|a, b| b.partial_cmp(a).expect("losses must be comparable"));
    let tail = ((CVAR_LEVEL * returns.len() as f64).ceil() as usize).max(1);
    let tail = tail.min(losses.len());
    losses[..tail].iter().sum::<f64>() / tail as f64
}

/// The equal-weighted portfolio: exactly 1/d per asset.
pub fn equal_weights(d: usize) -> Vec<f64> {
    vec![1.0 / d as f64; d]
}
