//! Scenario files: versioned TOML documents that either spell out a full
//! scenario or start from a bundled preset and override selected keys.
//!
//! ```toml
//! format_version = "1"
//! preset_name = "420km"
//!
//! [protocol]
//! n_trials_per_theta = 1000
//! ```

use crate::protocol::Scenario;
use crate::{Error, Result};
use serde::Serialize;
use std::path::Path;
use toml::{Table, Value};

pub const FORMAT_VERSION: &str = "1";

const PRESETS: &str = include_str!("../data/presets.toml");
const TOP_LEVEL_KEYS: [&str; 8] = [
    "format_version",
    "preset_name",
    "name",
    "distance_km",
    "link",
    "protocol",
    "lock",
    "analysis",
];

/// A parsed scenario file with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioFile {
    pub format_version: String,
    pub preset_name: Option<String>,
    pub scenario: Scenario,
}

impl ScenarioFile {
    /// The resolved scenario as a standalone file, with no preset reference.
    pub fn echo(&self) -> Result<String> {
        echo_scenario(&self.scenario)
    }
}

/// Serialize a scenario into a self-contained scenario file.
pub fn echo_scenario(s: &Scenario) -> Result<String> {
    let mut t = match Value::try_from(s).map_err(|e| Error::Io(e.to_string()))? {
        Value::Table(t) => t,
        _ => return Err(Error::InvalidState("scenario did not serialize to a table".into())),
    };
    t.insert("format_version".into(), Value::String(FORMAT_VERSION.into()));
    toml::to_string(&t).map_err(|e| Error::Io(e.to_string()))
}

fn merge(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn preset_source() -> Result<Table> {
    PRESETS
        .parse::<Table>()
        .map_err(|e| Error::InvalidState(format!("bundled presets are malformed: {e}")))
}

/// Names of the bundled presets, shortest link first.
pub fn preset_names() -> Vec<String> {
    preset_source()
        .ok()
        .and_then(|t| t.get("order").and_then(|v| v.as_array()).cloned())
        .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_owned)).collect())
        .unwrap_or_default()
}

fn preset_table(name: &str) -> Result<Table> {
    let src = preset_source()?;
    let presets = src
        .get("presets")
        .and_then(Value::as_table)
        .ok_or_else(|| Error::InvalidState("bundled presets lack a [presets] table".into()))?;
    let over = presets
        .get(name)
        .and_then(Value::as_table)
        .ok_or_else(|| Error::NotFound(format!("preset `{name}`; available: {}", preset_names().join(", "))))?;
    let mut base = src
        .get("defaults")
        .and_then(Value::as_table)
        .cloned()
        .unwrap_or_default();
    merge(&mut base, over);
    base.insert("name".into(), Value::String(name.into()));
    Ok(base)
}

/// A bundled preset, fully resolved.
pub fn preset(name: &str) -> Result<Scenario> {
    let t = preset_table(name)?;
    let s = deserialize(Value::Table(t), None, &format!("preset {name}"))?;
    s.validate()?;
    Ok(s)
}

/// All bundled presets in link-length order.
pub fn bundled_presets() -> Result<Vec<Scenario>> {
    preset_names().iter().map(|n| preset(n)).collect()
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Best-effort line of a dotted key path in a TOML document.
fn find_key_line(text: &str, path: &str) -> Option<usize> {
    let mut parts: Vec<&str> = path.split('.').filter(|p| !p.is_empty()).collect();
    // drop sequence indices such as `segments_a[0]`
    for p in parts.iter_mut() {
        if let Some(i) = p.find('[') {
            *p = &p[..i];
        }
    }
    let key = *parts.last()?;
    let section = parts[..parts.len() - 1].join(".");
    let mut current = String::new();
    let mut fallback = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == path {
                return Some(i + 1);
            }
            continue;
        }
        let lhs = line.split('=').next().unwrap_or("").trim();
        let hit = lhs == key || line.contains(&format!("{key} =")) || line.contains(&format!("{key}="));
        if hit {
            if current == section || lhs == path {
                return Some(i + 1);
            }
            fallback.get_or_insert(i + 1);
        }
    }
    fallback
}

fn location(origin: &str, text: Option<&str>, field: &str) -> String {
    match text.and_then(|t| find_key_line(t, field)) {
        Some(line) => format!("{origin}:{line}: field `{field}`"),
        None => format!("{origin}: field `{field}`"),
    }
}

fn deserialize(v: Value, text: Option<&str>, origin: &str) -> Result<Scenario> {
    serde_path_to_error::deserialize::<_, Scenario>(v).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().to_string();
        // unknown keys are reported against their parent; name the key itself
        let field = match message.split('`').nth(1) {
            Some(k) if message.starts_with("unknown field") => {
                if path == "." || path.is_empty() {
                    k.to_string()
                } else {
                    format!("{path}.{k}")
                }
            }
            _ => path,
        };
        Error::Scenario {
            location: location(origin, text, &field),
            message,
        }
    })
}

/// Parse scenario text; `origin` names the source in diagnostics.
pub fn parse_scenario_str(text: &str, origin: &str) -> Result<ScenarioFile> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| {
        let loc = match e.span() {
            Some(s) => format!("{origin}:{}", line_of(text, s.start)),
            None => origin.to_string(),
        };
        Error::Scenario {
            location: loc,
            message: e.message().to_string(),
        }
    })?;
    for k in table.keys() {
        if !TOP_LEVEL_KEYS.contains(&k.as_str()) {
            return Err(Error::Scenario {
                location: location(origin, Some(text), k),
                message: format!("unknown key `{k}`, expected one of {}", TOP_LEVEL_KEYS.join(", ")),
            });
        }
    }
    let preset_name = match table.get("preset_name") {
        None => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            return Err(Error::Scenario {
                location: location(origin, Some(text), "preset_name"),
                message: "expected a string".into(),
            })
        }
    };
    if preset_name.is_none() {
        for section in ["link", "protocol"] {
            if !table.contains_key(section) {
                return Err(Error::Scenario {
                    location: format!("{origin}: section [{section}]"),
                    message: format!("missing section [{section}] and no preset_name to inherit it from"),
                });
            }
        }
    }
    let format_version = match table.get("format_version") {
        Some(Value::String(v)) if v == FORMAT_VERSION => v.clone(),
        Some(Value::String(v)) => {
            return Err(Error::Scenario {
                location: location(origin, Some(text), "format_version"),
                message: format!("unsupported format_version `{v}`, expected `{FORMAT_VERSION}`"),
            })
        }
        Some(_) => {
            return Err(Error::Scenario {
                location: location(origin, Some(text), "format_version"),
                message: "format_version must be a string".into(),
            })
        }
        None => {
            return Err(Error::Scenario {
                location: format!("{origin}: field `format_version`"),
                message: "missing format_version".into(),
            })
        }
    };
    let mut body = table.clone();
    body.remove("format_version");
    body.remove("preset_name");
    let mut resolved = match &preset_name {
        Some(p) => preset_table(p).map_err(|e| Error::Scenario {
            location: location(origin, Some(text), "preset_name"),
            message: e.to_string(),
        })?,
        None => Table::new(),
    };
    merge(&mut resolved, &body);
    if !resolved.contains_key("name") {
        let stem = Path::new(origin)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("scenario");
        resolved.insert("name".into(), Value::String(stem.to_string()));
    }
    let scenario = deserialize(Value::Table(resolved), Some(text), origin)?;
    scenario.validate().map_err(|e| match e {
        Error::Parameter { name, reason } => Error::Scenario {
            location: location(origin, Some(text), name),
            message: format!("`{name}` {reason}"),
        },
        other => Error::Scenario {
            location: origin.to_string(),
            message: other.to_string(),
        },
    })?;
    Ok(ScenarioFile {
        format_version,
        preset_name,
        scenario,
    })
}

/// Read and parse a scenario file.
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<ScenarioFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_scenario_str(&text, &path.display().to_string())
}
