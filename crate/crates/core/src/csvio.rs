//! Plain numeric CSV tables with `#` comment rows.

use std::path::Path;

use crate::{Error, Result};

/// A header plus string cells; numeric access goes through [`Table::column`].
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Comment rows without the leading `#`, in file order.
    pub comments: Vec<String>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table { header: header.iter().map(|s| s.as_ref().to_string()).collect(), rows: Vec::new(), comments: Vec::new() }
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    /// Appends a row of numbers in shortest round-trip form.
    pub fn push_numbers(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|v| fmt_f64(*v)).collect());
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| Error::Parse(format!("missing column `{name}` (have {})", self.header.join(","))))
    }

    pub fn column_str(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.column_index(name)?;
        self.rows.iter().map(|r| r.get(i).map(String::as_str).ok_or_else(|| Error::Parse(format!("short row in column `{name}`")))).collect()
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        self.column_str(name)?
            .into_iter()
            .enumerate()
            .map(|(k, s)| s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("row {}: `{s}` in column `{name}` is not a number", k + 1))))
            .collect()
    }

    /// Value of a `key=value` token in the comment rows.
    pub fn comment_value(&self, key: &str) -> Option<&str> {
        self.comments.iter().flat_map(|c| c.split_whitespace()).find_map(|tok| {
            let (k, v) = tok.split_once('=')?;
            (k == key).then_some(v)
        })
    }

    pub fn to_string_pretty(&self) -> Result<String> {
        let mut out = String::new();
        for c in &self.comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        out.push_str(&String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))?);
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let comments = text.lines().filter_map(|l| l.trim_start().strip_prefix('#')).map(|c| c.trim().to_string()).collect();
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.is_empty() || header.iter().all(String::is_empty) {
            return Err(Error::Parse("CSV has no header".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Table { header, rows, comments })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_comments() {
        let mut t = Table::new(&["t_s", "zth_K_per_W"]);
        t.comments.push("config_hash=abc seed=3".into());
        t.push_numbers(&[1e-13, 2.5e4]);
        t.push_numbers(&[0.1 + 0.2, f64::MIN_POSITIVE]);
        let text = t.to_string_pretty().unwrap();
        assert!(text.starts_with("# config_hash=abc seed=3\nt_s,zth_K_per_W\n"));
        let back = Table::parse(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column("t_s").unwrap()[1], 0.1 + 0.2);
        assert_eq!(back.comment_value("seed"), Some("3"));
    }

    #[test]
    fn errors_name_the_problem() {
        let t = Table::parse("a,b\n1,x\n").unwrap();
        assert!(t.column("c").unwrap_err().to_string().contains("missing column"));
        assert!(t.column("b").unwrap_err().to_string().contains("not a number"));
        assert!(Table::parse("").is_err());
    }
}
