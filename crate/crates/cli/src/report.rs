//! Plain-text reports: one `key = value` per line, optionally followed by a
//! blank line, a `[criteria]` marker and the criteria table.

use std::fmt::Display;
use std::path::Path;

use crate::error::{CliError, Result};

pub const TABLE_MARKER: &str = "[criteria]";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
    table: Option<String>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        let mut r = Self::default();
        r.put("command", command);
        r
    }

    /// Appends an entry. Keys are expected to be unique and free of `=`.
    pub fn put(&mut self, key: &str, value: impl Display) {
        debug_assert!(!key.contains('='));
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn set_table(&mut self, table: String) {
        self.table = Some(table);
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn table(&self) -> Option<&str> {
        self.table.as_deref()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        if let Some(t) = &self.table {
            out.push('\n');
            out.push_str(TABLE_MARKER);
            out.push('\n');
            out.push_str(t);
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut report = Self::default();
        let mut lines = text.lines().enumerate();
        for (k, line) in lines.by_ref() {
            if line.is_empty() {
                break;
            }
            let (key, value) = line.split_once(" = ").ok_or_else(|| CliError::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: "expected `key = value`".into(),
            })?;
            report.entries.push((key.to_string(), value.to_string()));
        }
        match lines.next() {
            None => {}
            Some((_, TABLE_MARKER)) => {
                let mut table = String::new();
                for (_, line) in lines {
                    table.push_str(line);
                    table.push('\n');
                }
                report.table = Some(table);
            }
            Some((k, _)) => {
                return Err(CliError::Parse {
                    path: path.to_path_buf(),
                    line: k + 1,
                    message: format!("expected `{TABLE_MARKER}` after the blank line"),
                })
            }
        }
        Ok(report)
    }
}
