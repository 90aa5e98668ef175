//! `csdro interpret` — feature importance, attributions, and routes.
//!
//! Loads a trained soft-forest policy and the dataset it explains, then
//! writes four reports:
//!
//! - `importance_gradient.csv` and `importance_permutation.csv`
//!   (`feature,score,normalized`): global importance by mean absolute
//!   Jacobian column and by decision change under column shuffling. A
//!   constant decision rule has no meaningful relative importance; the
//!   reports are still written (all-zero scores) with an explicit
//!   `# degenerate=true` flag instead of failing.
//! - `eig.csv` (`feature,contribution`, one extra `output` column for
//!   multi-output decisions): the path-integrated attribution of the
//!   probe input against the mean-decision baseline, with the baseline
//!   and prescription as footer comments.
//! - `routes.csv` (`tree,rank,leaf,probability,leaf_value,path`): the
//!   most probable root-to-leaf routes per tree at the probe input;
//!   `path` spells each gate as `<node><L|R>(<branch prob>)`.
//!
//! The probe input is `interpret.x` (comma-separated), defaulting to
//! the componentwise mean covariate of the dataset.

use std::path::{Path, PathBuf};

use anyhow::anyhow;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use csdro::interpret::{
    eig, global_importance, permutation_importance, trace_routes, ImportanceReport,
    InterpretError, DEFAULT_EIG_POINTS,
};
use csdro::policies::{load_policy, DecisionRule, Policy, SoftForest};

use crate::config::Config;
use crate::exp::{application_name, load_data, mix_seed, streams};
use crate::output::{ensure_dir, fmt_f64, join_semicolon, CsvDoc};
use crate::{CliError, CliResult};

use super::require_file;

fn ie_error(e: InterpretError) -> CliError {
    CliError::validation(anyhow!("{e}"))
}

/// Renders one importance report (or the degenerate all-zero report)
/// to a CSV document.
fn importance_doc(
    seed: u64,
    hash: &str,
    names: &[String],
    report: Result<ImportanceReport, InterpretError>,
) -> CliResult<CsvDoc> {
    let mut doc = CsvDoc::new(&seed.to_string(), hash, "feature,score,normalized");
    match report {
        Ok(rep) => {
            for (j, name) in names.iter().enumerate() {
                doc.push_row(format!(
                    "{},{},{}",
                    name,
                    fmt_f64(rep.raw[j]),
                    fmt_f64(rep.normalized[j])
                ));
            }
        }
        Err(InterpretError::DegenerateImportance) => {
            for name in names {
                doc.push_row(format!("{name},0,0"));
            }
            doc.push_footer(
                "degenerate=true (constant decision rule; relative importance undefined)".into(),
            );
        }
        Err(e) => return Err(ie_error(e)),
    }
    Ok(doc)
}

pub fn cmd_interpret(cfg: &Config, out: &Path) -> CliResult<()> {
    let app_name = application_name(cfg)?;
    let seed = cfg.seed()?;
    let policy_path = PathBuf::from(cfg.require_str("interpret.policy")?);
    require_file(&policy_path, "policy file")?;

    let src = load_data(cfg, &app_name, mix_seed(seed, streams::DATA))?;
    let policy = load_policy(&policy_path).map_err(|e| CliError::validation(anyhow!("{e}")))?;
    let forest: &SoftForest = match &policy {
        Policy::Srf(f) => f,
        Policy::Nn2(_) => {
            return Err(CliError::validation(anyhow!(
                "interpretation reports require a soft-forest policy; `{}` holds an nn2 policy",
                policy_path.display()
            )))
        }
    };
    if forest.d_x() != src.ds.d_x {
        return Err(CliError::validation(anyhow!(
            "policy expects d_x={}, data has d_x={}",
            forest.d_x(),
            src.ds.d_x
        )));
    }

    // Probe input: explicit coordinates or the mean covariate.
    let x = match cfg.opt_str("interpret.x") {
        Some(raw) => {
            let vals: Result<Vec<f64>, _> =
                raw.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|_| {
                CliError::validation(anyhow!("interpret.x: cannot parse `{raw}` as numbers"))
            })?;
            if vals.len() != src.ds.d_x {
                return Err(CliError::validation(anyhow!(
                    "interpret.x has {} coordinates, data has d_x={}",
                    vals.len(),
                    src.ds.d_x
                )));
            }
            vals
        }
        None => {
            let n = src.ds.len() as f64;
            let mut mean = vec![0.0; src.ds.d_x];
            for row in &src.ds.rows {
                for (acc, v) in mean.iter_mut().zip(&row.x) {
                    *acc += v / n;
                }
            }
            mean
        }
    };
    let top_k = cfg.get_usize("interpret.top_k", 3)?;
    let m = cfg.get_usize("interpret.m", DEFAULT_EIG_POINTS)?;
    cfg.finish()?;
    let hash = cfg.hash();

    ensure_dir(out).map_err(|e| CliError::runtime(anyhow!("creating {out:?}: {e}")))?;

    // Global importance, both measures.
    let grad_doc = importance_doc(
        seed,
        &hash,
        &src.feature_names,
        global_importance(forest, &src.ds),
    )?;
    let mut perm_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, streams::PERM));
    let perm_doc = importance_doc(
        seed,
        &hash,
        &src.feature_names,
        permutation_importance(forest, &src.ds, &mut perm_rng),
    )?;

    // Path-integrated attribution at the probe input.
    let attribution = eig(forest, &x, &src.ds, m).map_err(ie_error)?;
    let d_z = forest.d_z();
    let mut eig_doc = CsvDoc::new(
        &seed.to_string(),
        &hash,
        if d_z == 1 {
            "feature,contribution"
        } else {
            "feature,output,contribution"
        },
    );
    for (j, name) in src.feature_names.iter().enumerate() {
        if d_z == 1 {
            eig_doc.push_row(format!("{},{}", name, fmt_f64(attribution.phi.get(j, 0))));
        } else {
            for k in 0..d_z {
                eig_doc.push_row(format!("{},{},{}", name, k, fmt_f64(attribution.phi.get(j, k))));
            }
        }
    }
    eig_doc.push_footer(format!("x={}", join_semicolon(&x)));
    eig_doc.push_footer(format!("baseline={}", join_semicolon(&attribution.baseline)));
    eig_doc.push_footer(format!(
        "prescription={}",
        join_semicolon(&attribution.prescription)
    ));

    // Most probable routes per tree.
    let trace = trace_routes(forest, &x, top_k).map_err(ie_error)?;
    let mut route_doc = CsvDoc::new(
        &seed.to_string(),
        &hash,
        "tree,rank,leaf,probability,leaf_value,path",
    );
    for (t, routes) in trace.trees.iter().enumerate() {
        for (rank, route) in routes.iter().enumerate() {
            let path = route
                .steps
                .iter()
                .map(|s| {
                    format!(
                        "{}{}({})",
                        s.node,
                        if s.went_left { "L" } else { "R" },
                        fmt_f64(s.branch_prob)
                    )
                })
                .collect::<Vec<_>>()
                .join(";");
            route_doc.push_row(format!(
                "{},{},{},{},{},{}",
                t,
                rank + 1,
                route.leaf,
                fmt_f64(route.probability),
                join_semicolon(&route.leaf_value),
                path
            ));
        }
    }

    for (doc, file) in [
        (&grad_doc, "importance_gradient.csv"),
        (&perm_doc, "importance_permutation.csv"),
        (&eig_doc, "eig.csv"),
        (&route_doc, "routes.csv"),
    ] {
        let path = out.join(file);
        doc.write(&path)
            .map_err(|e| CliError::runtime(anyhow!("writing {path:?}: {e}")))?;
    }
    println!(
        "interpret: {} features, {} trees, probe x=[{}] → importance/eig/routes CSVs in {}",
        src.ds.d_x,
        trace.trees.len(),
        join_semicolon(&x),
        out.display()
    );
    Ok(())
}
