//! `csdro worstcase` — export the adversary's optimal distribution.
//!
//! Loads a trained policy (`worstcase.policy`), rebuilds the dataset
//! the experiment used, and evaluates the worst-case distribution for
//! the configured model at the given penalty weight λ:
//!
//! - `causal-sdro` / `sdro`: a continuous density on an x–y grid,
//!   written to `density.csv` (`x,y,density`, row-major over the grid)
//!   with trailing `# integral=…` (and coverage warning, if any)
//!   comment lines;
//! - `kl-dro`: a reweighting of the observed sample, written to
//!   `weights.csv` (`index,x,y,weight`).
//!
//! Grid bounds default to the data range padded by six kernel standard
//! deviations, which keeps essentially all of the perturbation mass
//! inside the window; `worstcase.x_lo`/`x_hi`/`y_lo`/`y_hi` override
//! them, and `worstcase.grid_x`/`grid_y` (default 200) set the
//! resolution.

use std::path::{Path, PathBuf};

use anyhow::anyhow;

use csdro::data::group_conditionals;
use csdro::kernels::kernel_std;
use csdro::policies::{load_policy, DecisionRule};
use csdro::worstcase::{
    causal_wc_density, kl_wc_weights, sdro_wc_density, EvalGrid, WorstCaseError, WorstCaseGrid,
};

use crate::config::Config;
use crate::exp::{
    application_name, build_application, load_data, mix_seed, model_from, sinkhorn_from, streams,
    ModelKind,
};
use crate::output::{ensure_dir, fmt_f64, join_semicolon, CsvDoc};
use crate::{CliError, CliResult};

use super::require_file;

fn wc_error(e: WorstCaseError) -> CliError {
    match e {
        WorstCaseError::InvalidInput(_) | WorstCaseError::Config(_) => {
            CliError::validation(anyhow!("{e}"))
        }
        other => CliError::runtime(anyhow!("{other}")),
    }
}

pub fn cmd_worstcase(cfg: &Config, out: &Path) -> CliResult<()> {
    let app_name = application_name(cfg)?;
    let model = model_from(cfg)?;
    if model == ModelKind::Erm {
        return Err(CliError::validation(anyhow!(
            "worst-case export needs a robust model (causal-sdro, sdro, or kl-dro), not erm"
        )));
    }
    let seed = cfg.seed()?;
    let policy_path = PathBuf::from(cfg.require_str("worstcase.policy")?);
    require_file(&policy_path, "policy file")?;

    let src = load_data(cfg, &app_name, mix_seed(seed, streams::DATA))?;
    let app = build_application(cfg, &app_name, src.ds.d_y)?;
    let scfg = sinkhorn_from(cfg, true)?;

    let policy = load_policy(&policy_path).map_err(|e| CliError::validation(anyhow!("{e}")))?;
    if policy.d_x() != src.ds.d_x {
        return Err(CliError::validation(anyhow!(
            "policy expects d_x={}, data has d_x={}",
            policy.d_x(),
            src.ds.d_x
        )));
    }

    ensure_dir(out).map_err(|e| CliError::runtime(anyhow!("creating {out:?}: {e}")))?;

    if model == ModelKind::KlDro {
        cfg.finish()?;
        let hash = cfg.hash();
        let weights =
            kl_wc_weights(scfg.lambda, &policy, &app, &src.ds).map_err(wc_error)?;
        let mut doc = CsvDoc::new(&seed.to_string(), &hash, "index,x,y,weight");
        for (i, (row, w)) in src.ds.rows.iter().zip(&weights).enumerate() {
            doc.push_row(format!(
                "{},{},{},{}",
                i,
                join_semicolon(&row.x),
                join_semicolon(&row.y),
                fmt_f64(*w)
            ));
        }
        let path = out.join("weights.csv");
        doc.write(&path)
            .map_err(|e| CliError::runtime(anyhow!("writing {path:?}: {e}")))?;
        println!(
            "worstcase: kl-dro reweighting of {} rows (λ={}) → {}",
            weights.len(),
            fmt_f64(scfg.lambda),
            path.display()
        );
        return Ok(());
    }

    // Continuous densities are univariate in x and y; pick grid bounds
    // covering the data plus six kernel standard deviations.
    if src.ds.d_x != 1 || src.ds.d_y != 1 {
        return Err(CliError::validation(anyhow!(
            "density export needs univariate data (d_x=1, d_y=1), got d_x={}, d_y={}",
            src.ds.d_x,
            src.ds.d_y
        )));
    }
    let pad = 6.0 * kernel_std(scfg.p, scfg.eps);
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for row in &src.ds.rows {
        x_lo = x_lo.min(row.x[0]);
        x_hi = x_hi.max(row.x[0]);
        y_lo = y_lo.min(row.y[0]);
        y_hi = y_hi.max(row.y[0]);
    }
    let x_lo = cfg.get_f64("worstcase.x_lo", x_lo - pad)?;
    let x_hi = cfg.get_f64("worstcase.x_hi", x_hi + pad)?;
    let y_lo = cfg.get_f64("worstcase.y_lo", y_lo - pad)?;
    let y_hi = cfg.get_f64("worstcase.y_hi", y_hi + pad)?;
    let g_x = cfg.get_usize("worstcase.grid_x", 200)?;
    let g_y = cfg.get_usize("worstcase.grid_y", 200)?;
    cfg.finish()?;
    let hash = cfg.hash();

    let grid = EvalGrid::linspace(x_lo, x_hi, g_x, y_lo, y_hi, g_y).map_err(wc_error)?;
    let wc: WorstCaseGrid = match model {
        ModelKind::CausalSdro => {
            let grouped = group_conditionals(&src.ds)
                .map_err(|e| CliError::validation(anyhow!("grouping: {e}")))?;
            causal_wc_density(scfg.lambda, &policy, &app, &grouped, &grid, &scfg)
                .map_err(wc_error)?
        }
        ModelKind::Sdro => {
            sdro_wc_density(scfg.lambda, &policy, &app, &src.ds, &grid, &scfg)
                .map_err(wc_error)?
        }
        _ => unreachable!("kl-dro handled above, erm rejected above"),
    };

    let mut doc = CsvDoc::new(&seed.to_string(), &hash, "x,y,density");
    for (ix, xv) in wc.x_grid.iter().enumerate() {
        for (iy, yv) in wc.y_grid.iter().enumerate() {
            doc.push_row(format!(
                "{},{},{}",
                fmt_f64(*xv),
                fmt_f64(*yv),
                fmt_f64(wc.density[ix * wc.y_grid.len() + iy])
            ));
        }
    }
    doc.push_footer(format!("integral={}", fmt_f64(wc.integral)));
    if let Some(warning) = &wc.coverage_warning {
        doc.push_footer(format!("coverage-warning={warning}"));
        eprintln!("worstcase: coverage warning: {warning}");
    }
    let path = out.join("density.csv");
    doc.write(&path)
        .map_err(|e| CliError::runtime(anyhow!("writing {path:?}: {e}")))?;
    println!(
        "worstcase: {} density on {}×{} grid (λ={}, integral={:.6}) → {}",
        wc.model.name(),
        wc.x_grid.len(),
        wc.y_grid.len(),
        fmt_f64(scfg.lambda),
        wc.integral,
        path.display()
    );
    Ok(())
}
