//! Results files. Every CSV starts with a `# config_hash=` line so that
//! downstream aggregation can refuse to mix runs from different configs,
//! then a header row. The manifest is a nested key-value file echoing the
//! fully resolved configuration.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::config::{Resolved, ARTIFACT_VERSION};
use crate::CliError;

pub fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

pub fn write_csv(
    path: &Path,
    config_hash: &str,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let mut text = format!("# config_hash={config_hash}\n{}\n", header.join(","));
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_text(path, &text)
}

/// First `# config_hash=` line of a results file.
pub fn read_hash_line(path: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    text.lines()
        .next()
        .and_then(|l| l.strip_prefix("# config_hash="))
        .map(str::to_owned)
        .ok_or_else(|| {
            CliError::Config(format!("{} has no config hash line", path.display()))
        })
}

#[derive(Serialize)]
struct RunMeta<'a> {
    artifact_version: &'a str,
    experiment: &'a str,
    config_hash: &'a str,
    seed: u64,
    shots: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    run: RunMeta<'a>,
    /// Scalar results and simulated timing, filled by the experiment.
    summary: &'a BTreeMap<String, String>,
    config: &'a Resolved,
}

pub fn write_manifest(
    dir: &Path,
    resolved: &Resolved,
    summary: &BTreeMap<String, String>,
) -> Result<(), CliError> {
    let hash = resolved.config_hash();
    let manifest = Manifest {
        run: RunMeta {
            artifact_version: ARTIFACT_VERSION,
            experiment: resolved.experiment.name(),
            config_hash: &hash,
            seed: resolved.seed,
            shots: resolved.shots,
        },
        summary,
        config: resolved,
    };
    let text = toml::to_string_pretty(&manifest)
        .map_err(|e| CliError::Io(format!("serializing manifest: {e}")))?;
    write_text(&dir.join("manifest.toml"), &text)
}

/// Deterministic float formatting shared by all tables.
pub fn fmt(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.9}")
    } else {
        "nan".into()
    }
}
