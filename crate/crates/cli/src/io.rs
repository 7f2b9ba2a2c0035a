use std::io::{Read, Write};
use std::path::Path;

use anyhow::{Context as _, Result};
use reltag_core::caption::EntityAnnotation;
use reltag_core::pipeline::{read_entities, read_jsonl, Parsed, PipelineError};
use serde::de::DeserializeOwned;

fn is_std(path: &Path) -> bool {
    path.as_os_str() == "-"
}

pub fn read_text(path: &Path) -> Result<String> {
    if is_std(path) {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).context("reading stdin")?;
        return Ok(s);
    }
    std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))
        .map_err(Into::into)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if is_std(path) {
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes())?;
        out.flush()?;
        return Ok(());
    }
    std::fs::write(path, text).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())).into())
}

/// Reports malformed lines on stderr; with `strict` they become an input
/// error.
fn checked<T>(path: &Path, parsed: Parsed<T>, strict: bool) -> Result<Vec<T>> {
    for e in &parsed.errors {
        eprintln!("warning: {}: {e}; skipped", path.display());
    }
    if strict && !parsed.errors.is_empty() {
        return Err(PipelineError::Input(format!(
            "{}: {} malformed line(s)",
            path.display(),
            parsed.errors.len()
        ))
        .into());
    }
    Ok(parsed.records)
}

pub fn read_records<T: DeserializeOwned>(path: &Path, strict: bool) -> Result<Vec<T>> {
    let text = read_text(path)?;
    checked(path, read_jsonl(&text), strict)
}

pub fn read_entity_file(path: &Path, strict: bool) -> Result<Vec<EntityAnnotation>> {
    let text = read_text(path)?;
    let ents = checked(path, read_entities(&text), strict)?;
    reltag_core::caption::validate_entities(&ents).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    Ok(ents)
}
