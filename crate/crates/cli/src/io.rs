//! CSV ingestion and atomic artifact output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};

/// Columns of an estimation data file.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub time: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Option<Vec<f64>>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name))
}

/// Reads `time,y[,u]` with a header row. Lines starting with `#` are skipped.
/// Errors carry the 1-based line number.
pub fn read_data(path: &Path) -> CliResult<DataTable> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_data(&bytes).map_err(|e| match e {
        CliError::Input(msg) => CliError::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_data(bytes: &[u8]) -> CliResult<DataTable> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| CliError::Input(format!("cannot read header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(CliError::Input("data file is empty".into()));
    }
    let (Some(ti), Some(yi)) = (column(&headers, "time"), column(&headers, "y")) else {
        return Err(CliError::Input(format!(
            "header must name `time` and `y` columns, got {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    };
    let ui = column(&headers, "u");
    let mut table = DataTable {
        time: Vec::new(),
        y: Vec::new(),
        u: ui.map(|_| Vec::new()),
    };
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Input(format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize, name: &str| -> CliResult<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Input(format!("line {line}: column `{name}` is not a finite number: {raw:?}")))
        };
        let t = field(ti, "time")?;
        if let Some(&prev) = table.time.last() {
            if t <= prev {
                return Err(CliError::Input(format!(
                    "line {line}: times must be strictly increasing ({t} after {prev})"
                )));
            }
        }
        table.time.push(t);
        table.y.push(field(yi, "y")?);
        if let (Some(idx), Some(u)) = (ui, table.u.as_mut()) {
            u.push(field(idx, "u")?);
        }
    }
    if table.time.is_empty() {
        return Err(CliError::Input("data file has no rows".into()));
    }
    Ok(table)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.flush().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// A numeric table written as CSV under a `# config_hash=...` line.
pub struct CsvArtifact {
    units: String,
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl CsvArtifact {
    pub fn new(columns: &[&'static str], units: impl Into<String>) -> Self {
        Self {
            units: units.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.push(row.iter().map(|v| num(*v)).collect());
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self, config_hash: &str) -> Vec<u8> {
        let mut out = format!("# config_hash={config_hash} units: {}\n", self.units).into_bytes();
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        out.extend(w.into_inner().expect("in-memory flush"));
        out
    }

    pub fn write(&self, dir: &Path, name: &str, config_hash: &str) -> CliResult<PathBuf> {
        let path = dir.join(name);
        write_atomic(&path, &self.render(config_hash))?;
        Ok(path)
    }
}

/// Shortest round-trip representation in exponent form.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    let path = dir.join(name);
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    write_atomic(&path, &bytes)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_and_without_input_column() {
        let t = parse_data(b"time,y,u\n0,1.0,1\n0.5,0.6,0\n").unwrap();
        assert_eq!(t.time, vec![0.0, 0.5]);
        assert_eq!(t.u, Some(vec![1.0, 0.0]));
        let t = parse_data(b"# comment\ny, time\n2.0, 1\n").unwrap();
        assert_eq!((t.time[0], t.y[0], t.u), (1.0, 2.0, None));
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse_data(b"time,y\n0,1\n1,oops\n").unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        let e = parse_data(b"time,y\n0,1\n1,2,3\n").unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        let e = parse_data(b"time,y\n1,1\n1,2\n").unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("increasing"), "{e}");
        assert!(parse_data(b"").is_err());
        assert!(parse_data(b"time,y\n").is_err());
        assert!(parse_data(b"t,y\n0,1\n").is_err());
    }

    #[test]
    fn artifacts_carry_hash_and_header() {
        let mut a = CsvArtifact::new(&["x", "value"], "x [s]");
        a.push_numbers(&[0.5, 1e-20]);
        let text = String::from_utf8(a.render("abc")).unwrap();
        assert_eq!(text, "# config_hash=abc units: x [s]\nx,value\n5e-1,1e-20\n");
        let empty = CsvArtifact::new(&["x"], "-");
        assert_eq!(String::from_utf8(empty.render("h")).unwrap(), "# config_hash=h units: -\nx\n");
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("f.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
