//! `csdro generate` — draw a synthetic dataset and write it to CSV.
//!
//! Reads `experiment.application`, `experiment.seed`, and the `[data]`
//! generator keys; writes `<out>/dataset.csv` (features x1.., outcomes
//! y1..) plus a `dataset.provenance.txt` sidecar recording the seed,
//! the resolved generator parameters, and the config hash. The CSV's
//! provenance line is a `#` comment, which the CSV loader skips, so a
//! generated file feeds straight back into `csdro train`.

use std::path::Path;

use crate::config::Config;
use crate::exp::{application_name, load_data};
use crate::output::{ensure_dir, fmt_f64, write_atomic, CsvDoc};
use crate::{CliError, CliResult};

pub fn cmd_generate(cfg: &Config, out: &Path) -> CliResult<()> {
    let app_name = application_name(cfg)?;
    let seed = cfg.seed()?;
    let src = load_data(cfg, &app_name, seed)?;
    cfg.finish()?;
    let hash = cfg.hash();

    let header = src
        .feature_names
        .iter()
        .chain(&src.outcome_names)
        .cloned()
        .collect::<Vec<_>>()
        .join(",");
    let mut doc = CsvDoc::new(&seed.to_string(), &hash, &header);
    for row in &src.ds.rows {
        let cells: Vec<String> = row.x.iter().chain(&row.y).map(|v| fmt_f64(*v)).collect();
        doc.push_row(cells.join(","));
    }

    ensure_dir(out).map_err(|e| CliError::runtime(anyhow::anyhow!("creating {out:?}: {e}")))?;
    let csv_path = out.join("dataset.csv");
    doc.write(&csv_path)
        .map_err(|e| CliError::runtime(anyhow::anyhow!("writing {csv_path:?}: {e}")))?;

    let mut sidecar = String::new();
    sidecar.push_str(&format!("seed={seed}\nconfig-hash={hash}\n"));
    for line in cfg.resolved_lines() {
        sidecar.push_str(&line);
        sidecar.push('\n');
    }
    let sidecar_path = out.join("dataset.provenance.txt");
    write_atomic(&sidecar_path, sidecar.as_bytes())
        .map_err(|e| CliError::runtime(anyhow::anyhow!("writing {sidecar_path:?}: {e}")))?;

    println!(
        "generate: wrote {} rows ({} features, {} outcomes) to {}",
        src.ds.len(),
        src.ds.d_x,
        src.ds.d_y,
        csv_path.display()
    );
    Ok(())
}
