//! `csdro portfolio` — rolling-horizon mean–variance backtest.
//!
//! Protocol: walk the date-ordered return history; at every rebalance
//! date (each `portfolio.hold` rows, default 60, starting once
//! `portfolio.window` rows of history exist, default 504 ≈ two trading
//! years) sample `portfolio.assets` assets from the universe (fresh,
//! seeded draw per rebalance), train on the trailing window, fix one
//! portfolio from the rebalance-date covariate, and hold it through the
//! holding period.
//!
//! Methods reported per window:
//!
//! - `pt`  — post-hoc optimum of the holding period itself (perfect
//!   foresight; the performance ceiling),
//! - `ew`  — equal weights, exactly 1/d per asset,
//! - `mv`  — unconditional mean–variance weights fit to the trailing
//!   window's return distribution,
//! - `cmv` — conditional mean–variance: the decision rule trained by
//!   plain empirical risk minimization on (covariate, return) pairs,
//! - the configured robust model (default `causal-sdro`) trained from
//!   the *same* initial policy as `cmv` (paired comparison).
//!
//! Outputs: `rolling.csv` with one row per (window, method) holding the
//! daily-return mean, sample stdDev, annualized Sharpe (√252·mean/std;
//! `NA` when the window variance is zero), CVaR at 5% (mean of the
//! ⌈0.05·n⌉ worst losses), and the mean–variance loss; `summary.csv`
//! with per-method averages over windows plus the out-of-sample
//! prescriptiveness of each method against the `cmv` baseline with the
//! `pt` oracle as the 100% anchor.
//!
//! A final holding stub with fewer than two rows cannot support a
//! variance estimate; it is skipped with a warning.

use std::path::Path;

use anyhow::anyhow;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use csdro::data::{prescriptiveness, Dataset, Row};
use csdro::losses::{
    optimize_tradeoff_weights, portfolio_tradeoff_objective, Application, DecisionLoss,
    PortfolioParams,
};
use csdro::policies::DecisionRule;

use crate::config::Config;
use crate::exp::{
    application_name, fresh_policy, gd_params_from, load_data, mix_seed, model_from,
    policy_hyper_from, policy_kind_from, sinkhorn_from, streams, train_cfg_from, train_model,
    GdParams, ModelKind,
};
use crate::metrics::{cvar_5, equal_weights, mean, sharpe, std_dev};
use crate::output::{ensure_dir, fmt_f64, CsvDoc};
use crate::{CliError, CliResult};

/// Per-window, per-method performance record.
struct WindowRow {
    window: usize,
    start_row: usize,
    method_idx: usize,
    method: String,
    days: usize,
    mean: f64,
    std: f64,
    sharpe: Option<f64>,
    cvar: f64,
    loss: f64,
}

pub fn cmd_portfolio(cfg: &Config, out: &Path) -> CliResult<()> {
    let app_name = application_name(cfg)?;
    if app_name != "portfolio" {
        return Err(CliError::validation(anyhow!(
            "the rolling backtest is the portfolio application; set experiment.application = portfolio"
        )));
    }
    let model = model_from(cfg)?;
    let kind = policy_kind_from(cfg)?;
    let seed = cfg.seed()?;

    let src = load_data(cfg, "portfolio", mix_seed(seed, streams::DATA))?;
    let universe = src.ds.d_y;
    let omega = cfg.get_f64("loss.omega", 5.0)?;
    let window = cfg.get_usize("portfolio.window", 504)?;
    let hold = cfg.get_usize("portfolio.hold", 60)?;
    let n_assets = cfg.get_usize("portfolio.assets", 50)?.min(universe);
    if window < 2 || hold < 1 || n_assets < 1 {
        return Err(CliError::validation(anyhow!(
            "need portfolio.window ≥ 2, portfolio.hold ≥ 1, portfolio.assets ≥ 1"
        )));
    }
    if src.ds.len() < window + 2 {
        return Err(CliError::validation(anyhow!(
            "rolling backtest needs at least window + 2 = {} rows, data has {}",
            window + 2,
            src.ds.len()
        )));
    }
    let scfg = sinkhorn_from(cfg, model.is_dro())?;
    let tcfg0 = train_cfg_from(cfg, seed, false)?;
    let gd = gd_params_from(cfg)?;
    let hyper = policy_hyper_from(cfg, kind)?;
    cfg.finish()?;
    let hash = cfg.hash();

    // Rebalance schedule: every `hold` rows once a full window exists.
    let mut starts: Vec<usize> = Vec::new();
    let mut skipped_stub = None;
    let mut t = window;
    while t < src.ds.len() {
        if src.ds.len() - t < 2 {
            skipped_stub = Some(t);
            break;
        }
        starts.push(t);
        t += hold;
    }
    if let Some(t) = skipped_stub {
        eprintln!(
            "portfolio: skipping final holding stub at row {t}: fewer than 2 rows left ({} total)",
            src.ds.len()
        );
    }
    if starts.is_empty() {
        return Err(CliError::validation(anyhow!(
            "no rebalance dates: data has {} rows, the first window needs {}",
            src.ds.len(),
            window + 2
        )));
    }

    let method_count = 5;
    let results: Vec<CliResult<Vec<WindowRow>>> = starts
        .par_iter()
        .enumerate()
        .map(|(w_idx, &start)| {
            run_window(
                &src.ds, w_idx, start, window, hold, universe, n_assets, omega, seed, model, kind,
                &hyper, &scfg, &tcfg0, &gd,
            )
        })
        .collect();
    let mut rows: Vec<WindowRow> = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by_key(|r| (r.window, r.method_idx));

    // Per-window CSV.
    let mut rolling = CsvDoc::new(
        &seed.to_string(),
        &hash,
        "window,start_row,method,days,mean,std,sharpe,cvar,loss",
    );
    for r in &rows {
        rolling.push_row(format!(
            "{},{},{},{},{},{},{},{},{}",
            r.window,
            r.start_row,
            r.method,
            r.days,
            fmt_f64(r.mean),
            fmt_f64(r.std),
            r.sharpe.map(fmt_f64).unwrap_or_else(|| "NA".into()),
            fmt_f64(r.cvar),
            fmt_f64(r.loss)
        ));
    }

    // Per-method averages over windows + prescriptiveness vs cmv/pt.
    let methods: Vec<String> = rows[..method_count].iter().map(|r| r.method.clone()).collect();
    let avg = |f: &dyn Fn(&WindowRow) -> f64, mi: usize| -> f64 {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.method_idx == mi)
            .map(|r| f(r))
            .collect();
        mean(&vals)
    };
    let avg_loss: Vec<f64> = (0..method_count).map(|mi| avg(&|r| r.loss, mi)).collect();
    let pt_loss = avg_loss[0];
    let cmv_loss = avg_loss[3];
    let mut summary = CsvDoc::new(
        &seed.to_string(),
        &hash,
        "method,windows,mean,std,sharpe,cvar,loss,prescriptiveness",
    );
    for (mi, name) in methods.iter().enumerate() {
        let sharpes: Vec<f64> = rows
            .iter()
            .filter(|r| r.method_idx == mi)
            .filter_map(|r| r.sharpe)
            .collect();
        let sharpe_cell = if sharpes.is_empty() {
            "NA".to_string()
        } else {
            fmt_f64(mean(&sharpes))
        };
        let presc_cell = match prescriptiveness(avg_loss[mi], cmv_loss, pt_loss) {
            Ok(v) => fmt_f64(v),
            Err(_) => "NA".to_string(),
        };
        summary.push_row(format!(
            "{},{},{},{},{},{},{},{}",
            name,
            starts.len(),
            fmt_f64(avg(&|r| r.mean, mi)),
            fmt_f64(avg(&|r| r.std, mi)),
            sharpe_cell,
            fmt_f64(avg(&|r| r.cvar, mi)),
            fmt_f64(avg_loss[mi]),
            presc_cell
        ));
    }

    ensure_dir(out).map_err(|e| CliError::runtime(anyhow!("creating {out:?}: {e}")))?;
    for (doc, file) in [(&rolling, "rolling.csv"), (&summary, "summary.csv")] {
        let path = out.join(file);
        doc.write(&path)
            .map_err(|e| CliError::runtime(anyhow!("writing {path:?}: {e}")))?;
    }
    println!(
        "portfolio: {} rebalances × {} methods (window {}, hold {}, {} of {} assets) → {}",
        starts.len(),
        method_count,
        window,
        hold,
        n_assets,
        universe,
        out.join("rolling.csv").display()
    );
    Ok(())
}

/// Restricts rows `[lo, hi)` of `ds` to the outcome columns `cols`.
fn restrict(ds: &Dataset, lo: usize, hi: usize, cols: &[usize]) -> Dataset {
    let rows: Vec<Row> = ds.rows[lo..hi]
        .iter()
        .map(|r| Row {
            x: r.x.clone(),
            y: cols.iter().map(|&c| r.y[c]).collect(),
        })
        .collect();
    Dataset::new(rows, ds.d_x, cols.len()).expect("restricted rows are rectangular")
}

/// Distinct sorted asset indices for one rebalance, drawn from the run
/// seed and the rebalance number.
fn sample_assets(universe: usize, take: usize, seed: u64, rebalance: usize) -> Vec<usize> {
    if take >= universe {
        return (0..universe).collect();
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, streams::ASSETS), rebalance as u64));
    let mut picked = rand::seq::index::sample(&mut rng, universe, take).into_vec();
    picked.sort_unstable();
    picked
}

/// Realized daily returns of holding `weights` over the return rows.
fn daily_returns(ys: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    ys.iter()
        .map(|y| y.iter().zip(weights).map(|(a, b)| a * b).sum())
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_window(
    ds: &Dataset,
    w_idx: usize,
    start: usize,
    window: usize,
    hold: usize,
    universe: usize,
    n_assets: usize,
    omega: f64,
    seed: u64,
    model: ModelKind,
    kind: csdro::policies::PolicyKind,
    hyper: &csdro::policies::PolicyHyper,
    scfg: &csdro::kernels::SinkhornConfig,
    tcfg0: &csdro::optimizer::TrainConfig,
    gd: &GdParams,
) -> CliResult<Vec<WindowRow>> {
    let cols = sample_assets(universe, n_assets, seed, w_idx);
    let d = cols.len();
    let train_ds = restrict(ds, start - window, start, &cols);
    let hold_end = (start + hold).min(ds.len());
    let hold_ds = restrict(ds, start, hold_end, &cols);
    let hold_ys: Vec<Vec<f64>> = hold_ds.rows.iter().map(|r| r.y.clone()).collect();
    let window_ys: Vec<Vec<f64>> = train_ds.rows.iter().map(|r| r.y.clone()).collect();
    let x_t = &ds.rows[start].x;

    let params = PortfolioParams::new(omega, d)
        .map_err(|e| CliError::validation(anyhow!("portfolio parameters: {e}")))?;
    let app = Application::Portfolio(params);

    let solver_err =
        |what: &str, e: csdro::losses::LossError| CliError::runtime(anyhow!("{what}: {e}"));

    // Perfect-foresight ceiling on the holding period.
    let (w_pt, pt_loss) =
        optimize_tradeoff_weights(&hold_ys, omega).map_err(|e| solver_err("pt solve", e))?;
    // Equal weights.
    let w_ew = equal_weights(d);
    // Unconditional mean–variance on the trailing window.
    let (w_mv, _) =
        optimize_tradeoff_weights(&window_ys, omega).map_err(|e| solver_err("mv solve", e))?;

    // Conditional rules: one shared init, trained twice (paired).
    let seed_k = mix_seed(mix_seed(seed, streams::INIT), w_idx as u64);
    let policy0 = fresh_policy(kind, hyper, &app, &train_ds, seed_k)?;
    let mut tcfg = tcfg0.clone();
    tcfg.seed = seed_k;
    let (cmv_policy, _) = train_model(
        ModelKind::Erm,
        &app,
        &train_ds,
        policy0.clone(),
        scfg,
        &tcfg,
        gd,
    )?;
    let (model_policy, _) =
        train_model(model, &app, &train_ds, policy0, scfg, &tcfg, gd)?;

    let decide = |policy: &csdro::policies::Policy| -> (Vec<f64>, Vec<f64>) {
        let raw = policy.forward(x_t);
        let z = DecisionLoss::map_decision(&app, &raw);
        let weights = z[1..].to_vec();
        (z, weights)
    };
    let (z_cmv, w_cmv) = decide(&cmv_policy);
    let (z_model, w_model) = decide(&model_policy);

    // Loss of an anchored decision over the holding period.
    let anchored_loss = |z: &[f64]| -> CliResult<f64> {
        let mut total = 0.0;
        for y in &hold_ys {
            total += DecisionLoss::loss(&app, z, y)
                .map_err(|e| CliError::runtime(anyhow!("holding loss: {e}")))?;
        }
        Ok(total / hold_ys.len() as f64)
    };

    let mut rows = Vec::new();
    let mut push = |method_idx: usize, method: &str, weights: &[f64], loss: f64| {
        let rets = daily_returns(&hold_ys, weights);
        rows.push(WindowRow {
            window: w_idx,
            start_row: start,
            method_idx,
            method: method.to_string(),
            days: rets.len(),
            mean: mean(&rets),
            std: std_dev(&rets),
            sharpe: sharpe(&rets),
            cvar: cvar_5(&rets),
            loss,
        });
    };
    push(0, "pt", &w_pt, pt_loss);
    push(
        1,
        "ew",
        &w_ew,
        portfolio_tradeoff_objective(&hold_ys, &w_ew, omega),
    );
    push(
        2,
        "mv",
        &w_mv,
        portfolio_tradeoff_objective(&hold_ys, &w_mv, omega),
    );
    let cmv_loss = anchored_loss(&z_cmv)?;
    push(3, "cmv", &w_cmv, cmv_loss);
    let model_loss = anchored_loss(&z_model)?;
    push(4, model.name(), &w_model, model_loss);
    Ok(rows)
}
