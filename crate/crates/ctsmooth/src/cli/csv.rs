//! Minimal CSV I/O for the command-line tools: comma separator, `.` decimal
//! point, one mandatory header row, optional `# key = value` metadata lines
//! before the header. Values are written with 17 significant digits so a
//! read-back reproduces them bit for bit.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A fully parsed numeric CSV file.
#[derive(Debug, Clone)]
pub struct CsvTable {
    /// Column names from the header row.
    pub header: Vec<String>,
    /// `metadata["seed"] = "7"` from `# seed = 7` lines.
    pub metadata: Vec<(String, String)>,
    /// Data rows; every row has `header.len()` entries.
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    /// Index of the named column.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Writes metadata comments, a header, and rows of full-precision floats.
pub fn write_csv(
    path: &Path,
    metadata: &[(&str, String)],
    header: &[String],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for (key, value) in metadata {
        writeln!(w, "# {key} = {value}")?;
    }
    writeln!(w, "{}", header.join(","))?;
    let width = header.len();
    for row in rows {
        debug_assert_eq!(row.len(), width);
        let mut first = true;
        for v in &row {
            if !first {
                write!(w, ",")?;
            }
            write!(w, "{v:.16e}")?;
            first = false;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV; parse failures report the 1-based file line.
pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let label = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);

    let mut header: Option<Vec<String>> = None;
    let mut metadata = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if header.is_some() {
                return Err(Error::Parse {
                    path: label,
                    line: lineno,
                    msg: "comment lines are only allowed before the header".into(),
                });
            }
            if let Some((k, v)) = rest.split_once('=') {
                metadata.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        match &header {
            None => {
                header = Some(trimmed.split(',').map(|s| s.trim().to_string()).collect());
            }
            Some(cols) => {
                let row: Vec<f64> = trimmed
                    .split(',')
                    .map(|tok| {
                        tok.trim().parse::<f64>().map_err(|_| Error::Parse {
                            path: label.clone(),
                            line: lineno,
                            msg: format!("expected a number, got {:?}", tok.trim()),
                        })
                    })
                    .collect::<Result<_>>()?;
                if row.len() != cols.len() {
                    return Err(Error::Parse {
                        path: label,
                        line: lineno,
                        msg: format!("expected {} columns, got {}", cols.len(), row.len()),
                    });
                }
                rows.push(row);
            }
        }
    }
    let header = header.ok_or_else(|| Error::Parse {
        path: label.clone(),
        line: 0,
        msg: "missing header row".into(),
    })?;
    Ok(CsvTable {
        header,
        metadata,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("ctsmooth-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trips_full_precision_values() {
        let path = temp_path("round.csv");
        let rows = vec![
            vec![0.1, std::f64::consts::PI],
            vec![-2.5e-17, 1.0 / 3.0],
        ];
        write_csv(
            &path,
            &[("seed", "7".into())],
            &["t".into(), "y".into()],
            rows.clone(),
        )
        .unwrap();
        let table = read_csv(&path).unwrap();
        assert_eq!(table.header, vec!["t", "y"]);
        assert_eq!(table.metadata, vec![("seed".to_string(), "7".to_string())]);
        assert_eq!(table.rows, rows);
        assert_eq!(table.column("y"), Some(1));
        assert_eq!(table.column("nope"), None);
    }

    #[test]
    fn reports_the_failing_line() {
        let path = temp_path("bad.csv");
        std::fs::write(&path, "# seed = 1\nt,y\n0.0,1.0\n0.1,oops\n").unwrap();
        match read_csv(&path) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 4);
                assert!(msg.contains("oops"));
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
        std::fs::write(&path, "t,y\n0.0\n").unwrap();
        match read_csv(&path) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("columns"));
            }
            other => panic!("expected a width error, got {other:?}"),
        }
    }

    #[test]
    fn missing_header_is_an_error() {
        let path = temp_path("empty.csv");
        std::fs::write(&path, "# only = comments\n").unwrap();
        assert!(matches!(read_csv(&path), Err(Error::Parse { .. })));
    }
}
