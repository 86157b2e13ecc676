//! Deterministic output rendering: CSV tables and run manifests.
//!
//! Every number is formatted to 12 significant digits in scientific
//! notation with a '.' separator, so identical runs produce
//! byte-identical files on any platform and thread count. Manifests
//! record the command, tool version, seed, and the resolved
//! configuration with its hash; they carry no timestamps, which keeps
//! reruns diffable.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::Result;

/// 12 significant digits: one leading digit plus 11 fractional ones.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        // Collapse -0.0 so sign noise never reaches a CSV.
        return format!("{:.11e}", 0.0);
    }
    format!("{x:.11e}")
}

/// Level-set count column: exact integer when the table kept one,
/// otherwise a mantissa/exponent rendering of the log count (counts at
/// depth 4096 overflow f64 by thousands of decimal orders).
pub fn fmt_count(count_ln: f64, count_exact: Option<u64>) -> String {
    if let Some(k) = count_exact {
        return k.to_string();
    }
    if count_ln == f64::NEG_INFINITY {
        return "0".into();
    }
    let log10 = count_ln / std::f64::consts::LN_10;
    let mut exp = log10.floor() as i64;
    let mut mantissa = 10f64.powf(log10 - exp as f64);
    // powf rounding can land exactly on 10.0; renormalize.
    if mantissa >= 10.0 {
        mantissa /= 10.0;
        exp += 1;
    }
    format!("{mantissa:.6}e{exp:+}")
}

/// Renders one CSV: header row, then data rows, each newline-terminated.
pub fn render_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len(), "row width must match header");
        text.push_str(&row.join(","));
        text.push('\n');
    }
    text
}

/// Writes `text` at `path`, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Reproducibility record written next to each command's CSV.
pub struct Manifest<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub config: &'a RunConfig,
    /// Command-line overrides and derived scalars of this invocation.
    pub parameters: Value,
    /// Files the command wrote, relative to the output directory.
    pub outputs: Vec<String>,
}

impl Manifest<'_> {
    pub fn render(&self) -> String {
        let value = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "config_hash": self.config.hash(),
            "config": self.config.resolved(),
            "parameters": self.parameters,
            "outputs": self.outputs,
        });
        let mut text = serde_json::to_string_pretty(&value).expect("manifest serializes");
        text.push('\n');
        text
    }

    /// Writes `<command>.manifest.json` into `dir` and returns the path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        write_text(&path, &self.render())?;
        Ok(path)
    }
}
