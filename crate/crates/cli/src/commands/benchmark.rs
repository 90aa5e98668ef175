//! `csdro benchmark` — sweep a (N, d_x, p, λ, ε) grid over seeds.
//!
//! For every grid cell and seed the command draws a fresh train/test
//! split, trains the plain empirical-risk baseline, then each requested
//! robust model *from the same initial policy and seed* (paired
//! comparison), and reports out-of-sample mean loss plus the
//! coefficient of prescriptiveness against that paired baseline.
//!
//! Output is one long-format CSV,
//! `N,d_x,p,lambda,eps,model,policy,seed,test_loss,prescriptiveness`,
//! one row per (cell, seed, model) with the baseline itself as the
//! `erm` row (prescriptiveness 0 by definition). A failing cell is
//! recorded in `errors.log` and skipped; the sweep keeps going.
//!
//! Datasets depend only on (N, d_x, seed), so cells that vary the
//! transport settings compare models on identical data; blocks sharing
//! those coordinates also share one baseline run instead of retraining
//! it per transport cell.

use std::path::Path;

use anyhow::anyhow;
use rayon::prelude::*;

use csdro::data::{
    generate_inventory, generate_newsvendor, prescriptiveness, Dataset, DataError,
    InventoryGenConfig, NewsvendorGenConfig, INVENTORY_PRODUCTS,
};
use csdro::kernels::SinkhornConfig;
use csdro::losses::{Application, DecisionLoss};
use csdro::optimizer::TrainConfig;
use csdro::policies::{PolicyHyper, PolicyKind};

use crate::config::Config;
use crate::exp::{
    application_name, build_application, fresh_policy, gd_params_from, mean_test_loss, mix_seed,
    policy_hyper_from, policy_kind_from, streams, train_cfg_from, train_model, GdParams,
    ModelKind,
};
use crate::output::{ensure_dir, fmt_f64, write_atomic, CsvDoc};
use crate::{CliError, CliResult};

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy)]
struct Cell {
    n: usize,
    d_x: usize,
    p: u8,
    lambda: f64,
    eps: f64,
}

/// A finished (cell, seed, model) evaluation, or its failure note.
struct RowOut {
    cell_idx: usize,
    seed_idx: usize,
    model_idx: usize,
    text: Result<String, String>,
}

/// Everything a block worker needs, read from the config up front
/// (the config itself is not shared across threads).
struct SweepCtx<'a> {
    app_name: &'a str,
    app: &'a Application,
    kind: PolicyKind,
    hyper: &'a PolicyHyper,
    cells: &'a [Cell],
    models: &'a [ModelKind],
    test_n: usize,
    c_amp: f64,
    clip: f64,
    n1: usize,
    n2: usize,
    n3: usize,
    tcfg: &'a TrainConfig,
    gd: &'a GdParams,
}

pub fn cmd_benchmark(cfg: &Config, out: &Path) -> CliResult<()> {
    let app_name = application_name(cfg)?;
    if app_name == "portfolio" {
        return Err(CliError::validation(anyhow!(
            "the grid benchmark covers newsvendor and inventory; use `csdro portfolio` for the rolling backtest"
        )));
    }
    let kind = policy_kind_from(cfg)?;
    let seeds = cfg.seeds()?;
    let test_n = cfg.get_usize("experiment.test_n", 500)?;
    if test_n < 1 {
        return Err(CliError::validation(anyhow!(
            "experiment.test_n must be at least 1"
        )));
    }

    let model_names = cfg.get_str_list("sweep.models", &["causal-sdro"]);
    let mut models: Vec<ModelKind> = Vec::new();
    for name in &model_names {
        let m = ModelKind::parse(name)?;
        if m != ModelKind::Erm && !models.contains(&m) {
            models.push(m);
        }
    }
    let any_dro = !models.is_empty();

    let ns = cfg.get_usize_list("sweep.n", &[200])?;
    let dxs = cfg.get_usize_list("sweep.d_x", &[5])?;
    let ps = cfg.get_usize_list("sweep.p", &[2])?;
    let lambdas = cfg.get_f64_list("sweep.lambda", &[])?;
    if any_dro && lambdas.is_empty() {
        return Err(CliError::validation(anyhow!(
            "sweep.lambda is required when the sweep contains DRO models"
        )));
    }
    let lambdas = if lambdas.is_empty() { vec![1.0] } else { lambdas };
    let epss = cfg.get_f64_list("sweep.eps", &[0.1])?;
    for &p in &ps {
        if p != 1 && p != 2 {
            return Err(CliError::validation(anyhow!(
                "sweep.p entries must be 1 or 2, got {p}"
            )));
        }
    }
    if ns.is_empty() || dxs.is_empty() || ps.is_empty() || epss.is_empty() {
        return Err(CliError::validation(anyhow!("sweep axes must be non-empty")));
    }
    if ns.iter().any(|&n| n < 2) {
        return Err(CliError::validation(anyhow!(
            "sweep.n entries must be at least 2"
        )));
    }
    if lambdas.iter().any(|&l| !(l > 0.0)) || epss.iter().any(|&e| !(e > 0.0)) {
        return Err(CliError::validation(anyhow!(
            "sweep.lambda and sweep.eps entries must be positive"
        )));
    }

    let clip = cfg.get_f64("sinkhorn.clip", 1e3)?;
    let n1 = cfg.get_usize("sinkhorn.n1", 1)?;
    let n2 = cfg.get_usize("sinkhorn.n2", 32)?;
    let n3 = cfg.get_usize("sinkhorn.n3", 32)?;
    if n1 < 1 || n2 < 1 || n3 < 1 {
        return Err(CliError::validation(anyhow!(
            "sinkhorn sample counts must be at least 1"
        )));
    }
    let gd = gd_params_from(cfg)?;
    let c_amp = if app_name == "newsvendor" {
        cfg.get_f64("data.c_amp", 1.7)?
    } else {
        1.7
    };

    let d_y = match app_name.as_str() {
        "inventory" => INVENTORY_PRODUCTS,
        _ => 1,
    };
    let app = build_application(cfg, &app_name, d_y)?;
    let hyper = policy_hyper_from(cfg, kind)?;
    let tcfg = train_cfg_from(cfg, 0, DecisionLoss::nonneg_decisions(&app))?;
    cfg.finish()?;
    let hash = cfg.hash();

    // Grid in declared order: N outermost, then d_x, p, λ, ε.
    let mut cells = Vec::new();
    for &n in &ns {
        for &d_x in &dxs {
            for &p in &ps {
                for &lambda in &lambdas {
                    for &eps in &epss {
                        cells.push(Cell {
                            n,
                            d_x,
                            p: p as u8,
                            lambda,
                            eps,
                        });
                    }
                }
            }
        }
    }

    // Blocks share (N, d_x, seed): one dataset, one policy init, one
    // baseline training.
    struct Block {
        n: usize,
        d_x: usize,
        seed_idx: usize,
        cell_idxs: Vec<usize>,
    }
    let mut blocks: Vec<Block> = Vec::new();
    for (seed_idx, _) in seeds.iter().enumerate() {
        for &n in &ns {
            for &d_x in &dxs {
                let cell_idxs: Vec<usize> = cells
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.n == n && c.d_x == d_x)
                    .map(|(i, _)| i)
                    .collect();
                blocks.push(Block {
                    n,
                    d_x,
                    seed_idx,
                    cell_idxs,
                });
            }
        }
    }

    let ctx = SweepCtx {
        app_name: &app_name,
        app: &app,
        kind,
        hyper: &hyper,
        cells: &cells,
        models: &models,
        test_n,
        c_amp,
        clip,
        n1,
        n2,
        n3,
        tcfg: &tcfg,
        gd: &gd,
    };

    let mut rows: Vec<RowOut> = blocks
        .par_iter()
        .flat_map(|b| run_block(&ctx, b.n, b.d_x, seeds[b.seed_idx], b.seed_idx, &b.cell_idxs))
        .collect();

    // Deterministic order: cell-major, then seed, then model (erm first).
    rows.sort_by_key(|r| (r.cell_idx, r.seed_idx, r.model_idx));

    let seed_label = seeds
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let mut doc = CsvDoc::new(
        &seed_label,
        &hash,
        "N,d_x,p,lambda,eps,model,policy,seed,test_loss,prescriptiveness",
    );
    let mut failures: Vec<String> = Vec::new();
    for row in rows {
        match row.text {
            Ok(text) => doc.push_row(text),
            Err(note) => failures.push(note),
        }
    }

    ensure_dir(out).map_err(|e| CliError::runtime(anyhow!("creating {out:?}: {e}")))?;
    let csv_path = out.join("benchmark.csv");
    doc.write(&csv_path)
        .map_err(|e| CliError::runtime(anyhow!("writing {csv_path:?}: {e}")))?;
    if !failures.is_empty() {
        let log_path = out.join("errors.log");
        let text = failures.join("\n") + "\n";
        write_atomic(&log_path, text.as_bytes())
            .map_err(|e| CliError::runtime(anyhow!("writing {log_path:?}: {e}")))?;
        for note in &failures {
            eprintln!("benchmark: {note}");
        }
    }
    println!(
        "benchmark: {} rows over {} cells × {} seeds ({} failures) → {}",
        doc.row_count(),
        cells.len(),
        seeds.len(),
        failures.len(),
        csv_path.display()
    );
    Ok(())
}

/// Runs one (N, d_x, seed) block: draw data, init the shared policy,
/// train the baseline once, then every (p, λ, ε) cell × model.
fn run_block(
    ctx: &SweepCtx<'_>,
    n: usize,
    d_x: usize,
    seed: u64,
    seed_idx: usize,
    cell_idxs: &[usize],
) -> Vec<RowOut> {
    let fail_all = |err: String| -> Vec<RowOut> {
        cell_idxs
            .iter()
            .map(|&cell_idx| RowOut {
                cell_idx,
                seed_idx,
                model_idx: 0,
                text: Err(format!("cell N={n} d_x={d_x} seed={seed}: {err}")),
            })
            .collect()
    };

    // One data draw of N + test_n rows shared by every transport cell.
    let dseed = mix_seed(mix_seed(mix_seed(seed, streams::DATA), n as u64), d_x as u64);
    let full = match generate_for(ctx.app_name, n + ctx.test_n, d_x, ctx.c_amp, dseed) {
        Ok(ds) => ds,
        Err(e) => return fail_all(format!("generator: {e}")),
    };
    let (train_ds, test_ds) = full.split_at(n);

    let policy0 = match fresh_policy(ctx.kind, ctx.hyper, ctx.app, &train_ds, seed) {
        Ok(p) => p,
        Err(e) => return fail_all(format!("policy init: {e}")),
    };

    let mut tcfg = ctx.tcfg.clone();
    tcfg.seed = seed;

    // The paired baseline: identical data, init, and seed; transport
    // settings are irrelevant to plain empirical risk.
    let base_scfg = SinkhornConfig {
        p: 2,
        eps: 0.1,
        lambda: 1.0,
        clip: ctx.clip,
        n1: ctx.n1,
        n2: ctx.n2,
        n3: ctx.n3,
    };
    let erm = match train_model(
        ModelKind::Erm,
        ctx.app,
        &train_ds,
        policy0.clone(),
        &base_scfg,
        &tcfg,
        ctx.gd,
    )
    .and_then(|(p, _)| mean_test_loss(&p, ctx.app, &test_ds))
    {
        Ok(loss) => loss,
        Err(e) => return fail_all(format!("erm baseline: {e}")),
    };
    let oracle = match ctx.app.oracle_loss(&test_ds) {
        Ok(v) => v,
        Err(e) => return fail_all(format!("oracle: {e}")),
    };

    let policy_name = match ctx.kind {
        PolicyKind::Srf => "srf",
        PolicyKind::Nn2 => "nn2",
    };
    let mut rows = Vec::new();
    for &cell_idx in cell_idxs {
        let cell = ctx.cells[cell_idx];
        // The baseline row repeats per cell so each cell is a complete
        // paired comparison in the long format.
        rows.push(RowOut {
            cell_idx,
            seed_idx,
            model_idx: 0,
            text: Ok(format!(
                "{},{},{},{},{},erm,{},{},{},0",
                cell.n,
                cell.d_x,
                cell.p,
                fmt_f64(cell.lambda),
                fmt_f64(cell.eps),
                policy_name,
                seed,
                fmt_f64(erm)
            )),
        });
        let scfg = SinkhornConfig {
            p: cell.p,
            eps: cell.eps,
            lambda: cell.lambda,
            clip: ctx.clip,
            n1: ctx.n1,
            n2: ctx.n2,
            n3: ctx.n3,
        };
        for (mi, &model) in ctx.models.iter().enumerate() {
            let label = format!(
                "cell N={} d_x={} p={} lambda={} eps={} seed={} model={}",
                cell.n,
                cell.d_x,
                cell.p,
                fmt_f64(cell.lambda),
                fmt_f64(cell.eps),
                seed,
                model.name()
            );
            let outcome = train_model(
                model,
                ctx.app,
                &train_ds,
                policy0.clone(),
                &scfg,
                &tcfg,
                ctx.gd,
            )
            .and_then(|(p, _)| mean_test_loss(&p, ctx.app, &test_ds))
            .and_then(|loss| {
                let presc = prescriptiveness(loss, erm, oracle)
                    .map_err(|e| CliError::runtime(anyhow!("prescriptiveness: {e}")))?;
                Ok((loss, presc))
            });
            rows.push(RowOut {
                cell_idx,
                seed_idx,
                model_idx: mi + 1,
                text: match outcome {
                    Ok((loss, presc)) => Ok(format!(
                        "{},{},{},{},{},{},{},{},{},{}",
                        cell.n,
                        cell.d_x,
                        cell.p,
                        fmt_f64(cell.lambda),
                        fmt_f64(cell.eps),
                        model.name(),
                        policy_name,
                        seed,
                        fmt_f64(loss),
                        fmt_f64(presc)
                    )),
                    Err(e) => Err(format!("{label}: {e}")),
                },
            });
        }
    }
    rows
}

/// Draws the block dataset for the benchmark generators.
fn generate_for(
    app_name: &str,
    n: usize,
    d_x: usize,
    c_amp: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    match app_name {
        "newsvendor" => generate_newsvendor(&NewsvendorGenConfig {
            n,
            d_x,
            c_amp,
            seed,
            ..NewsvendorGenConfig::default()
        }),
        "inventory" => generate_inventory(&InventoryGenConfig { n, d_x, seed }),
        other => Err(DataError::InvalidConfig(format!(
            "no benchmark generator for `{other}`"
        ))),
    }
}
