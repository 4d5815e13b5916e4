//! On-disk containers. Every JSON file is an [`Artifact`] envelope and every
//! CSV file starts with a `#` preamble; both carry the schema version and
//! the full configuration echo, so a run can be rebuilt from its outputs.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub schema_version: u32,
    pub kind: String,
    /// TOML of the configuration that produced the payload.
    pub config: String,
    pub data: T,
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, kind: &str, config: &str, data: &T) -> CliResult<()> {
    let artifact = Artifact {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        kind: kind.to_string(),
        config: config.to_string(),
        data,
    };
    let text = serde_json::to_string_pretty(&artifact).map_err(|e| CliError::json(path, e))?;
    write_text(path, &text)
}

/// Reads an envelope and checks its schema version and kind.
pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> CliResult<Artifact<T>> {
    let text = read_text(path)?;
    let artifact: Artifact<T> = serde_json::from_str(&text).map_err(|e| CliError::json(path, e))?;
    if artifact.schema_version != ARTIFACT_SCHEMA_VERSION {
        return Err(tcblran::Error::Schema {
            found: artifact.schema_version,
            expected: ARTIFACT_SCHEMA_VERSION,
        }
        .into());
    }
    if artifact.kind != kind {
        return Err(CliError::Usage(format!(
            "{}: expected a {kind} file, found {}",
            path.display(),
            artifact.kind
        )));
    }
    Ok(artifact)
}

/// `#` comment lines naming the file kind and schema version, followed by
/// the configuration echo.
pub fn csv_preamble(kind: &str, config: &str) -> String {
    let mut out = format!("# tcblran {kind} schema_version={ARTIFACT_SCHEMA_VERSION}\n# config:\n");
    for line in config.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, kind: &str, config: &str, body: &str) -> CliResult<()> {
    write_text(path, &(csv_preamble(kind, config) + body))
}

/// Recovers the configuration echo from a CSV preamble, one trailing
/// newline per line as written by [`csv_preamble`].
pub fn csv_config(text: &str) -> String {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .skip_while(|l| *l != "# config:")
        .skip(1)
        .map(|l| format!("{}\n", l.strip_prefix("# ").unwrap_or("")))
        .collect()
}

/// A CSV reader that skips the preamble.
pub fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}
