//! Report envelope and output formatting.
//!
//! Every run emits one report: a versioned envelope wrapping the fully
//! resolved configuration and the result. JSON output is byte-stable for a
//! given config, so a report can be reproduced exactly by feeding its
//! embedded config back through `--config`.

use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Serialize)]
pub struct Report<C: Serialize, R: Serialize> {
    pub schema_version: u32,
    pub command: &'static str,
    pub config: C,
    pub result: R,
}

impl<C: Serialize, R: Serialize> Report<C, R> {
    pub fn new(command: &'static str, config: C, result: R) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            command,
            config,
            result,
        }
    }

    /// Render in the requested format. `text_lines` supplies the
    /// human-readable view; JSON and CSV are derived from the data itself.
    pub fn render(&self, format: Format, text_lines: Vec<String>) -> anyhow::Result<String> {
        match format {
            Format::Json => Ok(format!("{}\n", serde_json::to_string_pretty(self)?)),
            Format::Text => Ok(text_lines.join("\n") + "\n"),
            Format::Csv => {
                let value = serde_json::to_value(self)?;
                let mut rows = vec!["key,value".to_string()];
                flatten("", &value, &mut rows);
                Ok(rows.join("\n") + "\n")
            }
        }
    }
}

fn flatten(prefix: &str, value: &serde_json::Value, rows: &mut Vec<String>) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, rows);
            }
        }
        serde_json::Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), v, rows);
            }
        }
        scalar => {
            let rendered = match scalar {
                serde_json::Value::String(s) => format!("\"{}\"", s.replace('"', "\"\"")),
                other => other.to_string(),
            };
            rows.push(format!("{prefix},{rendered}"));
        }
    }
}
