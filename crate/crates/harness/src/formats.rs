//! On-disk formats: run configurations, graphs and JSON/JSON-lines output.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use audit_core::consensus::VoteConfig;
use audit_core::economics::EconomicParams;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: field `{field}`: {message}")]
    Invalid {
        path: PathBuf,
        field: String,
        message: String,
    },
}

impl FormatError {
    fn parse(path: &Path, line_offset: usize, e: serde_json::Error) -> Self {
        FormatError::Parse {
            path: path.to_path_buf(),
            line: e.line() + line_offset,
            column: e.column(),
            message: e.to_string(),
        }
    }

    pub fn invalid(path: &Path, field: &str, message: impl ToString) -> Self {
        FormatError::Invalid {
            path: path.to_path_buf(),
            field: field.to_string(),
            message: message.to_string(),
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| FormatError::parse(path, 0, e))
}

/// Reads one JSON value per non-blank line.
pub fn read_json_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FormatError> {
    let file = fs::File::open(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| FormatError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| FormatError::parse(path, i, e))?);
    }
    Ok(out)
}

/// Serializes `value` as pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report types serialize");
    v.push(b'\n');
    v
}

pub fn to_json_lines<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("report types serialize");
        out.push(b'\n');
    }
    out
}

fn default_eps_target() -> f64 {
    1e-4
}

fn default_trials() -> u64 {
    10_000
}

/// Parameters shared by the `bounds`, `simulate` and `sweep` commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub vote: VoteConfig,
    pub econ: EconomicParams,
    /// Target total failure probability over the horizon.
    #[serde(default = "default_eps_target")]
    pub eps_target: f64,
    /// Committee sizes for which to report the majority error bound, using
    /// the honest error rate of `econ`.
    #[serde(default)]
    pub committee_sizes: Vec<u32>,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adversarial_sweep: Option<Vec<f64>>,
    #[serde(default)]
    pub error_sweep: Option<Vec<f64>>,
    /// Use exactly `λT` segments per horizon instead of a Poisson count.
    #[serde(default)]
    pub fixed_count: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let cfg: RunConfig = read_json(path)?;
        cfg.check(path)?;
        Ok(cfg)
    }

    pub fn check(&self, path: &Path) -> Result<(), FormatError> {
        self.vote
            .check()
            .map_err(|e| FormatError::invalid(path, "vote", e))?;
        self.econ
            .check()
            .map_err(|e| FormatError::invalid(path, "econ", e))?;
        if !(self.eps_target > 0.0 && self.eps_target < 1.0) {
            return Err(FormatError::invalid(
                path,
                "eps_target",
                "must lie in (0, 1)",
            ));
        }
        if self.trials == 0 {
            return Err(FormatError::invalid(path, "trials", "must be at least 1"));
        }
        for (name, grid) in [
            ("adversarial_sweep", &self.adversarial_sweep),
            ("error_sweep", &self.error_sweep),
        ] {
            if let Some(g) = grid {
                if g.iter().any(|x| !(0.0..=0.4).contains(x)) {
                    return Err(FormatError::invalid(
                        path,
                        name,
                        "grid values must lie in [0, 0.4]",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Writes `bytes` to `dir/name`, creating `dir`, and returns the path.
pub fn write_output(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut f = fs::File::create(&path)?;
    f.write_all(bytes)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        fs::write(&p, "{\n  \"vote\": {\n    \"tau\": oops\n  }\n}\n").unwrap();
        match read_json::<RunConfig>(&p) {
            Err(FormatError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_lines_skip_blanks_and_count_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "1\n\n2\n{\n").unwrap();
        match read_json_lines::<u32>(&p) {
            Err(FormatError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&p, "1\n\n2\n").unwrap();
        assert_eq!(read_json_lines::<u32>(&p).unwrap(), [1, 2]);
    }
}
