//! CSV emission with provenance and atomic writes.
//!
//! Every CSV this tool writes has the same shape:
//!
//! ```text
//! # seed=7, config-hash=3f2a…            ← provenance comment
//! x,y,density                            ← header row
//! -2,-4,0.00041…                         ← data rows
//! …
//! # integral=0.99999…                    ← optional footer comments
//! ```
//!
//! Files are written atomically: the bytes go to a `.tmp` sibling first
//! and are renamed into place, so readers never observe a half-written
//! table. Floats are formatted with Rust's shortest-roundtrip notation,
//! which is deterministic and parses back to the identical bits.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

/// An in-memory CSV document: provenance line, header, data rows, and
/// optional trailing comment lines.
#[derive(Debug, Clone)]
pub struct CsvDoc {
    provenance: String,
    header: String,
    rows: Vec<String>,
    footers: Vec<String>,
}

impl CsvDoc {
    /// Starts a document. `seed_label` is the seed (or comma-joined seed
    /// list for sweep commands); `hash` the canonical config hash.
    pub fn new(seed_label: &str, hash: &str, header: &str) -> Self {
        CsvDoc {
            provenance: format!("# seed={seed_label}, config-hash={hash}"),
            header: header.to_string(),
            rows: Vec::new(),
            footers: Vec::new(),
        }
    }

    /// Appends one pre-formatted data row (no trailing newline).
    pub fn push_row(&mut self, row: String) {
        self.rows.push(row);
    }

    /// Appends a trailing comment line; the `# ` prefix is added here.
    pub fn push_footer(&mut self, note: String) {
        self.footers.push(format!("# {note}"));
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    /// Renders the document to its exact file bytes.
    pub fn to_text(&self) -> String {
        let mut text = String::new();
        writeln!(text, "{}", self.provenance).unwrap();
        writeln!(text, "{}", self.header).unwrap();
        for row in &self.rows {
            writeln!(text, "{row}").unwrap();
        }
        for footer in &self.footers {
            writeln!(text, "{footer}").unwrap();
        }
        text
    }

    /// Writes the document atomically to `path`.
    pub fn write(&self, path: &Path) -> io::Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

/// Canonical float formatting for CSV cells: shortest representation
/// that round-trips, e.g. `0.1`, `-3`, `1e-7`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Joins floats with `;` for list-valued CSV cells (commas would split
/// the cell).
pub fn join_semicolon(vals: &[f64]) -> String {
    vals.iter()
        .map(|&v| fmt_f64(v))
        .collect::<Vec<_>>()
        .join(";")
}

/// Creates `dir` (and parents) if needed.
pub fn ensure_dir(dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)
}

/// Writes `bytes` to `path` via a temp file in the same directory plus
/// an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = std::path::PathBuf::from(tmp);
    fs::write(&tmp_path, bytes)?;
    match fs::rename(&tmp_path, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp_path);
            Err(e)
        }
    }
}
