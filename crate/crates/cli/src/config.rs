//! TOML run configuration with environment overrides.
//!
//! Variables named `TOOLGRAPH__SECTION__KEY` (nested sections joined by
//! `__`) override the file. Values are parsed as TOML literals and fall
//! back to plain strings.

use std::path::Path;

use anyhow::{bail, Context, Result};
use toml::{Table, Value};
use toolgraph_rl::RunConfig;

pub const ENV_PREFIX: &str = "TOOLGRAPH__";

/// Keys whose defaults come from the published hyperparameters; every other
/// key is annotated in the template.
const SOURCED: &[(&str, &str)] = &[
    ("sim", "max_turns"),
    ("sim", "rollout_num"),
    ("retrieval", "alpha"),
    ("retrieval", "top_k"),
    ("sim.runtime", "tool_timeout_ms"),
];

pub fn load(path: Option<&Path>) -> Result<RunConfig> {
    load_with_env(path, std::env::vars())
}

pub fn load_with_env(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            text.parse::<Table>().with_context(|| format!("parsing config {}", p.display()))?
        }
        None => Table::new(),
    };
    let mut overrides: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    overrides.sort();
    for (key, raw) in overrides {
        apply_override(&mut table, &key[ENV_PREFIX.len()..], &raw)
            .with_context(|| format!("environment override {key}"))?;
    }
    let cfg: RunConfig = Value::Table(table).try_into().context("config does not match the expected schema")?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_literal(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()))
}

fn apply_override(table: &mut Table, path: &str, raw: &str) -> Result<()> {
    let parts: Vec<String> = path.split("__").map(str::to_ascii_lowercase).collect();
    if parts.len() < 2 || parts.iter().any(String::is_empty) {
        bail!("expected {ENV_PREFIX}SECTION__KEY");
    }
    let (key, sections) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for s in sections {
        let entry = cur.entry(s.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().with_context(|| format!("{s} is not a section"))?;
    }
    cur.insert(key.clone(), parse_literal(raw));
    Ok(())
}

pub fn to_toml(cfg: &RunConfig) -> Result<String> {
    Ok(toml::to_string(cfg)?)
}

/// Default configuration with every non-sourced key annotated.
pub fn template() -> Result<String> {
    let body = to_toml(&RunConfig::default())?;
    let mut out = String::new();
    let mut section = String::new();
    for line in body.lines() {
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.to_owned();
            out.push_str(line);
            out.push('\n');
            if section == "paths" {
                out.push_str("# dataset = \"tasks.jsonl\"  # generated from [dataset] when unset\n");
                out.push_str("# embedding_url = \"http://localhost:8080/embed\"  # needs the http-embedding feature\n");
            }
            continue;
        }
        out.push_str(line);
        if let Some((key, _)) = line.split_once(" = ") {
            if section != "paths" && !SOURCED.contains(&(section.as_str(), key.trim())) {
                out.push_str("  # non-paper default");
            }
        }
        out.push('\n');
    }
    Ok(out)
}
