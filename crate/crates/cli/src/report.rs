//! Plain-text report tables with a provenance header.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliError;

pub const REPORT_VERSION: u32 = 1;

/// Tab-separated table whose first line names the report kind, the format
/// version and the configuration hash.
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(kind: &str, config_hash: &str) -> Self {
        Self {
            text: format!("# tacstack-{kind} v{REPORT_VERSION} config_sha256={config_hash}\n"),
        }
    }

    pub fn comment(&mut self, line: &str) -> &mut Self {
        let _ = writeln!(self.text, "# {line}");
        self
    }

    pub fn row<S: AsRef<str>>(&mut self, cells: impl IntoIterator<Item = S>) -> &mut Self {
        let cells: Vec<String> = cells.into_iter().map(|c| c.as_ref().to_string()).collect();
        self.text.push_str(&cells.join("\t"));
        self.text.push('\n');
        self
    }

    #[cfg(test)]
    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, &self.text).map_err(|e| CliError::io(path, e))
    }
}

/// A fraction printed as a percentage with one decimal.
pub fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_then_rows() {
        let mut t = Table::new("table1", "abc");
        t.comment("note").row(["a", "b"]).row(vec![String::from("1"), pct(0.4567)]);
        assert_eq!(t.as_str(), "# tacstack-table1 v1 config_sha256=abc\n# note\na\tb\n1\t45.7\n");
    }
}
