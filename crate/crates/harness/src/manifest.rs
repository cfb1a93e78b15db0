//! Run manifests: what was run, on which inputs, and what it produced.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use audit_core::Digest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Path relative to the output directory.
    pub path: PathBuf,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Digest over the contents of every input file, in read order.
    pub config_digest: Digest,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    pub tool_version: String,
    pub exit_code: u8,
    pub outputs: Vec<OutputFile>,
}

/// Length-prefixed digest of a sequence of input file contents.
pub fn inputs_digest<'a>(contents: impl IntoIterator<Item = &'a [u8]>) -> Digest {
    let mut parts: Vec<Vec<u8>> = Vec::new();
    for c in contents {
        parts.push((c.len() as u64).to_be_bytes().to_vec());
        parts.push(c.to_vec());
    }
    let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
    Digest::hash_parts(&refs)
}

impl RunManifest {
    pub fn output(&mut self, out_dir: &Path, path: &Path, bytes: &[u8]) {
        let rel = path.strip_prefix(out_dir).unwrap_or(path).to_path_buf();
        self.outputs.push(OutputFile {
            path: rel,
            digest: Digest::hash(bytes),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn input_boundaries_matter() {
        let a = inputs_digest([b"ab".as_slice(), b"c".as_slice()]);
        let b = inputs_digest([b"a".as_slice(), b"bc".as_slice()]);
        assert_ne!(a, b);
        assert_eq!(a, inputs_digest([b"ab".as_slice(), b"c".as_slice()]));
    }
}
