//! Minimal reader for the comma-separated reports this tool writes.

use std::path::{Path, PathBuf};

use crate::error::{CliError, IoContext};

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    /// Data rows with their 1-based line numbers.
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        if !path.exists() {
            return Err(CliError::Missing(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).at(path)?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, CliError> {
        let err = |line: usize, msg: String| CliError::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, head) = lines.next().ok_or_else(|| err(1, "missing header row".into()))?;
        let header: Vec<String> = head.split(',').map(|s| s.trim().to_string()).collect();
        if header.iter().any(String::is_empty) {
            return Err(err(1, "empty column name in header".into()));
        }
        let mut rows = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
            if fields.len() != header.len() {
                return Err(err(
                    n,
                    format!("expected {} fields, found {}", header.len(), fields.len()),
                ));
            }
            rows.push((n, fields));
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    pub fn column_index(&self, name: &str) -> Result<usize, CliError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Parse {
                path: self.path.clone(),
                line: 1,
                msg: format!("missing column `{name}`"),
            })
    }

    pub fn f64_at(&self, row: usize, col: usize) -> Result<f64, CliError> {
        let (line, fields) = &self.rows[row];
        fields[col].parse::<f64>().map_err(|_| CliError::Parse {
            path: self.path.clone(),
            line: *line,
            msg: format!("`{}` in column `{}` is not a number", fields[col], self.header[col]),
        })
    }

    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let c = self.column_index(name)?;
        (0..self.rows.len()).map(|r| self.f64_at(r, c)).collect()
    }

    pub fn column_u64(&self, name: &str) -> Result<Vec<u64>, CliError> {
        let c = self.column_index(name)?;
        self.rows
            .iter()
            .map(|(line, f)| {
                f[c].parse::<u64>().map_err(|_| CliError::Parse {
                    path: self.path.clone(),
                    line: *line,
                    msg: format!("`{}` in column `{name}` is not an integer", f[c]),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reports_line_numbers() {
        let t = Table::parse(Path::new("x.csv"), "a,b\n1,2\n\n3,4\n").unwrap();
        assert_eq!(t.column_f64("b").unwrap(), vec![2.0, 4.0]);
        let e = Table::parse(Path::new("x.csv"), "a,b\n1,2\n3\n").unwrap_err();
        assert!(e.to_string().starts_with("x.csv:3:"), "{e}");
        let t = Table::parse(Path::new("x.csv"), "a,b\n1,zz\n").unwrap();
        let e = t.column_f64("b").unwrap_err();
        assert!(e.to_string().starts_with("x.csv:2:"), "{e}");
        assert!(t.column_f64("c").is_err());
        assert!(Table::parse(Path::new("x.csv"), "").is_err());
    }
}
