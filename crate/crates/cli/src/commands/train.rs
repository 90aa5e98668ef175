//! `csdro train` — train one policy and export it with its trace.
//!
//! Reads the experiment/model/policy selection, the dataset source, and
//! the solver settings; writes `<out>/policy.txt` (bit-exact flat-text
//! serialization) and `<out>/trace.csv` with columns
//! `iter,objective,grad_norm_est,wallclock_ms`.
//!
//! Everything in the trace is deterministic for a fixed config hash
//! except `wallclock_ms`, which records physical time by definition.

use std::path::Path;

use anyhow::anyhow;
use csdro::optimizer::TraceRecord;
use csdro::policies::save_policy;

use crate::config::Config;
use crate::exp::{
    application_name, build_application, fresh_policy, gd_params_from, load_data, mean_test_loss,
    mix_seed, model_from, policy_hyper_from, policy_kind_from, sinkhorn_from, streams,
    train_cfg_from, train_model,
};
use crate::output::{ensure_dir, fmt_f64, CsvDoc};
use crate::{CliError, CliResult};

/// Renders a trace to CSV rows under the provenance header.
pub fn trace_doc(seed_label: &str, hash: &str, trace: &[TraceRecord]) -> CsvDoc {
    let mut doc = CsvDoc::new(seed_label, hash, "iter,objective,grad_norm_est,wallclock_ms");
    for rec in trace {
        doc.push_row(format!(
            "{},{},{},{}",
            rec.iter,
            fmt_f64(rec.objective),
            fmt_f64(rec.grad_norm_est),
            fmt_f64(rec.wallclock_ms)
        ));
    }
    doc
}

pub fn cmd_train(cfg: &Config, out: &Path) -> CliResult<()> {
    let app_name = application_name(cfg)?;
    let model = model_from(cfg)?;
    let kind = policy_kind_from(cfg)?;
    let seed = cfg.seed()?;

    let src = load_data(cfg, &app_name, mix_seed(seed, streams::DATA))?;
    let app = build_application(cfg, &app_name, src.ds.d_y)?;
    let scfg = sinkhorn_from(cfg, model.is_dro())?;
    let tcfg = train_cfg_from(cfg, seed, app.nonneg_decisions())?;
    let gd = gd_params_from(cfg)?;
    let hyper = policy_hyper_from(cfg, kind)?;
    cfg.finish()?;
    let hash = cfg.hash();

    let policy0 = fresh_policy(kind, &hyper, &app, &src.ds, seed)?;
    let (policy, trace) = train_model(model, &app, &src.ds, policy0, &scfg, &tcfg, &gd)?;
    let train_loss = mean_test_loss(&policy, &app, &src.ds)?;

    ensure_dir(out).map_err(|e| CliError::runtime(anyhow!("creating {out:?}: {e}")))?;
    let policy_path = out.join("policy.txt");
    save_policy(&policy, &policy_path).map_err(|e| CliError::runtime(anyhow!("{e}")))?;
    let trace_path = out.join("trace.csv");
    trace_doc(&seed.to_string(), &hash, &trace)
        .write(&trace_path)
        .map_err(|e| CliError::runtime(anyhow!("writing {trace_path:?}: {e}")))?;

    println!(
        "train: {} + {} on {} ({} rows) → mean train loss {:.6}; policy at {}, trace at {}",
        model.name(),
        policy.kind_name(),
        app_name,
        src.ds.len(),
        train_loss,
        policy_path.display(),
        trace_path.display()
    );
    Ok(())
}
