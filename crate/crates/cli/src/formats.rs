//! On-disk formats: TOML run configs, JSON scene/report/manifest files.

use std::fs;
use std::path::{Path, PathBuf};

use mvdet::pipeline::{PipelineConfig, SequenceReport};
use mvdet::simworld::{Scene, SceneConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

fn current_schema() -> u32 {
    SCHEMA_VERSION
}

/// Everything a command can be configured with. `pipeline` keys mirror
/// [`PipelineConfig`] one to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub scene: SceneConfig,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            scene: SceneConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn parse_config(text: &str, origin: &Path) -> Result<RunConfig, CliError> {
    let shown = origin.display();
    let de = toml::Deserializer::parse(text).map_err(|e| {
        let at = e.span().map(|s| line_col(text, s.start));
        CliError::Config(match at {
            Some((l, c)) => format!("{shown}:{l}:{c}: {}", one_line(e.message())),
            None => format!("{shown}: {}", one_line(e.message())),
        })
    })?;
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        let at = inner
            .span()
            .map(|s| line_col(text, s.start))
            .map_or(String::new(), |(l, c)| format!(":{l}:{c}"));
        CliError::Config(format!("{shown}{at}: key `{key}`: {}", one_line(inner.message())))
    })?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "{shown}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
            cfg.schema_version
        )));
    }
    cfg.pipeline.validate()?;
    Ok(cfg)
}

/// Reads a config file; no path means all defaults.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            parse_config(&text, p)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default = "current_schema")]
    pub schema_version: u32,
    pub kind: String,
    pub scene: Scene,
}

impl SceneFile {
    pub const KIND: &'static str = "scene";

    pub fn new(scene: Scene) -> Self {
        SceneFile {
            schema_version: SCHEMA_VERSION,
            kind: Self::KIND.into(),
            scene,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub schema_version: u32,
    pub kind: String,
    pub scene_seed: u64,
    pub config: PipelineConfig,
    pub report: SequenceReport,
}

impl ReportFile {
    pub const KIND: &'static str = "run_report";

    pub fn new(scene_seed: u64, config: PipelineConfig, report: SequenceReport) -> Self {
        ReportFile {
            schema_version: SCHEMA_VERSION,
            kind: Self::KIND.into(),
            scene_seed,
            config,
            report,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSeeds {
    pub scene: u64,
    pub weights: u64,
    pub stubs: u64,
    pub queries: u64,
}

/// Provenance record written next to every command's primary output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub kind: String,
    pub tool_version: String,
    pub command: String,
    pub config: RunConfig,
    pub seeds: ManifestSeeds,
    pub inputs: Vec<String>,
    /// Every file the command wrote, this manifest included.
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_checksum: Option<String>,
}

impl RunManifest {
    pub const KIND: &'static str = "manifest";

    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output
            .file_stem()
            .map(|s| s.to_os_string())
            .unwrap_or_else(|| "output".into());
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Invariant(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

/// Reads a JSON document, checking `schema_version` and `kind` before
/// decoding the rest.
pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let shown = path.display();
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{shown}:{}:{}: {e}", e.line(), e.column())))?;
    let version = value.get("schema_version").and_then(serde_json::Value::as_u64);
    if version != Some(SCHEMA_VERSION as u64) {
        let found = version.map_or("missing".to_string(), |v| v.to_string());
        return Err(CliError::Config(format!(
            "{shown}: schema_version {found} is not supported (expected {SCHEMA_VERSION})"
        )));
    }
    let found_kind = value.get("kind").and_then(serde_json::Value::as_str);
    if found_kind != Some(kind) {
        return Err(CliError::Config(format!(
            "{shown}: expected a {kind} file, found {}",
            found_kind.unwrap_or("no kind")
        )));
    }
    serde_path_to_error::deserialize(value)
        .map_err(|e| CliError::Config(format!("{shown}: key `{}`: {}", e.path(), e.inner())))
}
