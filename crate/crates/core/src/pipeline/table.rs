//! Tab-separated artifacts with `# key=value` metadata lines on top.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::PipelineError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Table {
            header,
            ..Table::default()
        }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get_meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k}={v}");
        }
        s.push_str(&self.header.join("\t"));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join("\t"));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        fs::write(path, self.render()).map_err(|e| PipelineError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Table, PipelineError> {
        if !path.exists() {
            return Err(PipelineError::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Table, PipelineError> {
        let mut t = Table::default();
        let mut have_header = false;
        for (i, line) in text.lines().enumerate() {
            if let Some(m) = line.strip_prefix("# ") {
                let (k, v) = m.split_once('=').ok_or_else(|| malformed(path, i, "metadata without '='"))?;
                t.meta.push((k.to_string(), v.to_string()));
            } else if line.is_empty() {
                continue;
            } else if !have_header {
                t.header = line.split('\t').map(str::to_string).collect();
                have_header = true;
            } else {
                let row: Vec<String> = line.split('\t').map(str::to_string).collect();
                if row.len() != t.header.len() {
                    return Err(malformed(path, i, &format!("{} fields, expected {}", row.len(), t.header.len())));
                }
                t.rows.push(row);
            }
        }
        if !have_header {
            return Err(malformed(path, 0, "no header line"));
        }
        Ok(t)
    }
}

pub(crate) fn malformed(path: &Path, line: usize, msg: &str) -> PipelineError {
    PipelineError::Malformed {
        path: PathBuf::from(path),
        line: line + 1,
        msg: msg.to_string(),
    }
}

pub(crate) fn parse_field<T: std::str::FromStr>(path: &Path, row: usize, s: &str) -> Result<T, PipelineError> {
    s.parse().map_err(|_| malformed(path, row, &format!("cannot parse '{s}'")))
}
