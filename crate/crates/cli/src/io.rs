//! Input parsing, atomic output and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracefit_core::DetecteeHistogram;

use crate::CliError;

pub const BUNDLED_PREFIX: &str = "bundled:";
pub const KARNATAKA_CSV: &str = include_str!("../data/karnataka.csv");
/// Digest of the canonical form of the bundled Karnataka histogram.
pub const KARNATAKA_DIGEST: &str = "sha256:4f57bc17d51487f11c15d7a06af838e7d38536c2da1a7647f9f5260edb7f2692";

/// Reads a `detectees,frequency` histogram from `path`, or a bundled dataset
/// named `bundled:karnataka`.
pub fn ingest(path: &str) -> Result<DetecteeHistogram, CliError> {
    if let Some(name) = path.strip_prefix(BUNDLED_PREFIX) {
        return match name {
            "karnataka" => {
                let h = parse_histogram(KARNATAKA_CSV, path)?;
                if h.digest() != KARNATAKA_DIGEST {
                    return Err(CliError::Data(format!("bundled dataset `{name}` fails its checksum")));
                }
                Ok(h)
            }
            other => Err(CliError::Usage(format!("unknown bundled dataset `{other}`"))),
        };
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
    parse_histogram(&text, path)
}

pub fn parse_histogram(text: &str, source: &str) -> Result<DetecteeHistogram, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{source}: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(CliError::Data(format!("{source}: file is empty")));
    }
    if headers.len() != 2 || &headers[0] != "detectees" || &headers[1] != "frequency" {
        return Err(CliError::Data(format!(
            "{source}: line 1: expected header `detectees,frequency`"
        )));
    }
    let mut pairs = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| CliError::Data(format!("{source}: {e}")))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        if row.len() != 2 {
            return Err(CliError::Data(format!("{source}: line {line}: expected 2 fields, got {}", row.len())));
        }
        let field = |j: usize, what: &str| -> Result<u64, CliError> {
            row[j].parse::<u64>().map_err(|_| {
                CliError::Data(format!(
                    "{source}: line {line}: {what} must be a non-negative integer, got `{}`",
                    &row[j]
                ))
            })
        };
        let i = field(0, "detectees")?;
        let n = field(1, "frequency")?;
        let i = u32::try_from(i)
            .map_err(|_| CliError::Data(format!("{source}: line {line}: detectees {i} is too large")))?;
        pairs.push((i, n));
    }
    if pairs.is_empty() {
        return Err(CliError::Data(format!("{source}: no data rows")));
    }
    DetecteeHistogram::from_pairs(pairs).map_err(|e| CliError::Data(format!("{source}: {e}")))
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, exactly as given.
    pub argv: Vec<String>,
    /// Resolved option values, defaults included.
    pub options: BTreeMap<String, String>,
    pub input_digest: Option<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], options: BTreeMap<String, String>) -> Self {
        Self {
            command: command.to_string(),
            argv: argv.to_vec(),
            options,
            input_digest: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.toml");
        output.with_file_name(name)
    }

    pub fn write_next_to(&self, output: &Path) -> Result<(), CliError> {
        let text = toml::to_string(self).map_err(|e| CliError::Io(e.to_string()))?;
        write_atomic(&Self::path_for(output), &text)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}
