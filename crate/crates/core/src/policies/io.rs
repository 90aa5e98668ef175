//! Flat-text policy serialization.
//!
//! The format is self-describing and line-oriented: a header with the
//! policy kind and structure, then the flattened parameter vector. Every
//! float is stored as the 16-hex-digit IEEE-754 bit pattern, so a
//! save/load round trip reproduces parameters bit-exactly (including
//! signed zeros and subnormals).
//!
//! ```text
//! csdro-policy v1
//! kind srf
//! d_x 5
//! d_z 1
//! tau 3FF0000000000000
//! trees 2
//! depths 3 3
//! params 104
//! 3FE0000000000000 BFD3C0CA428C59FB ...
//! ```

use super::{DecisionRule, Policy, PolicyError, SoftForest, TwoLayerNet};
use std::fmt::Write as _;
use std::path::Path;

const MAGIC: &str = "csdro-policy v1";
const VALUES_PER_LINE: usize = 8;

fn hex(v: f64) -> String {
    format!("{:016X}", v.to_bits())
}

/// Serializes a policy to `path`, writing atomically (temp file in the
/// same directory, then rename).
pub fn save_policy(policy: &Policy, path: &Path) -> Result<(), PolicyError> {
    let mut text = String::new();
    text.push_str(MAGIC);
    text.push('\n');
    let io_err = |source: std::io::Error| PolicyError::Io {
        path: path.display().to_string(),
        source,
    };
    match policy {
        Policy::Srf(f) => {
            writeln!(text, "kind srf").unwrap();
            writeln!(text, "d_x {}", f.d_x()).unwrap();
            writeln!(text, "d_z {}", f.d_z()).unwrap();
            writeln!(text, "tau {}", hex(f.tau)).unwrap();
            writeln!(text, "trees {}", f.tree_count()).unwrap();
            let depths: Vec<String> = (0..f.tree_count())
                .map(|t| f.depth(t).to_string())
                .collect();
            writeln!(text, "depths {}", depths.join(" ")).unwrap();
        }
        Policy::Nn2(n) => {
            writeln!(text, "kind nn2").unwrap();
            writeln!(text, "d_x {}", n.d_x()).unwrap();
            writeln!(text, "d_z {}", n.d_z()).unwrap();
            writeln!(text, "hidden {}", n.hidden_width()).unwrap();
        }
    }
    let params = policy.params();
    writeln!(text, "params {}", params.len()).unwrap();
    for chunk in params.chunks(VALUES_PER_LINE) {
        let line: Vec<String> = chunk.iter().map(|&v| hex(v)).collect();
        writeln!(text, "{}", line.join(" ")).unwrap();
    }

    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "policy".into())
    ));
    std::fs::write(&tmp, text).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> LineReader<'a> {
    fn next(&mut self) -> Result<&'a str, PolicyError> {
        loop {
            self.line_no += 1;
            match self.lines.next() {
                Some(l) if l.trim().is_empty() => continue,
                Some(l) => return Ok(l.trim()),
                None => {
                    return Err(PolicyError::Malformed {
                        line: self.line_no,
                        reason: "unexpected end of file".into(),
                    })
                }
            }
        }
    }

    fn field(&mut self, key: &str) -> Result<String, PolicyError> {
        let line_no = self.line_no + 1;
        let line = self.next()?;
        let mut parts = line.splitn(2, ' ');
        let k = parts.next().unwrap_or("");
        if k != key {
            return Err(PolicyError::Malformed {
                line: line_no,
                reason: format!("expected {key:?}, found {k:?}"),
            });
        }
        parts
            .next()
            .map(|s| s.trim().to_string())
            .ok_or(PolicyError::Malformed {
                line: line_no,
                reason: format!("{key} has no value"),
            })
    }

    fn usize_field(&mut self, key: &str) -> Result<usize, PolicyError> {
        let raw = self.field(key)?;
        raw.parse().map_err(|_| PolicyError::Malformed {
            line: self.line_no,
            reason: format!("{key} is not an unsigned integer: {raw:?}"),
        })
    }
}

fn parse_hex(token: &str, line: usize) -> Result<f64, PolicyError> {
    if token.len() != 16 {
        return Err(PolicyError::Malformed {
            line,
            reason: format!("expected 16 hex digits, got {token:?}"),
        });
    }
    u64::from_str_radix(token, 16)
        .map(f64::from_bits)
        .map_err(|_| PolicyError::Malformed {
            line,
            reason: format!("not a hex float: {token:?}"),
        })
}

/// Reads back a policy written by [`save_policy`].
pub fn load_policy(path: &Path) -> Result<Policy, PolicyError> {
    let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut r = LineReader {
        lines: text.lines(),
        line_no: 0,
    };
    let magic = r.next()?;
    if magic != MAGIC {
        return Err(PolicyError::Malformed {
            line: r.line_no,
            reason: format!("bad magic line {magic:?}, expected {MAGIC:?}"),
        });
    }
    let kind = r.field("kind")?;
    let d_x = r.usize_field("d_x")?;
    let d_z = r.usize_field("d_z")?;
    let mut policy = match kind.as_str() {
        "srf" => {
            let tau_raw = r.field("tau")?;
            let tau = parse_hex(&tau_raw, r.line_no)?;
            let trees = r.usize_field("trees")?;
            let depths_raw = r.field("depths")?;
            let depths: Vec<usize> = depths_raw
                .split_whitespace()
                .map(|s| {
                    s.parse().map_err(|_| PolicyError::Malformed {
                        line: r.line_no,
                        reason: format!("bad depth {s:?}"),
                    })
                })
                .collect::<Result<_, _>>()?;
            if depths.len() != trees {
                return Err(PolicyError::Malformed {
                    line: r.line_no,
                    reason: format!("{} depths listed for {trees} trees", depths.len()),
                });
            }
            Policy::Srf(SoftForest::zeros(d_x, d_z, &depths, tau)?)
        }
        "nn2" => {
            let m = r.usize_field("hidden")?;
            Policy::Nn2(TwoLayerNet::zeros(d_x, d_z, m)?)
        }
        other => return Err(PolicyError::UnknownKind(other.to_string())),
    };
    let count = r.usize_field("params")?;
    if count != policy.num_params() {
        return Err(PolicyError::Malformed {
            line: r.line_no,
            reason: format!(
                "header declares {count} parameters but the structure implies {}",
                policy.num_params()
            ),
        });
    }
    let mut read = 0usize;
    {
        let slot = policy.params_mut();
        while read < count {
            let line_no = r.line_no + 1;
            let line = r.next()?;
            for token in line.split_whitespace() {
                if read >= count {
                    return Err(PolicyError::Malformed {
                        line: line_no,
                        reason: "more parameter values than declared".into(),
                    });
                }
                slot[read] = parse_hex(token, line_no)?;
                read += 1;
            }
        }
    }
    Ok(policy)
}
