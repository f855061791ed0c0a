//! CSV tables with the resolved configuration as `# ` header comments.

use serde::Serialize;

use crate::CliError;

/// Floats are written with `{:?}`: shortest round-trip form, exponent for
/// very large or small magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// The resolved configuration of one run. Keys are emitted in sorted order
/// so the header does not depend on construction order.
#[derive(Debug, Clone)]
pub struct Header(toml::Table);

impl Header {
    pub fn new(command: &str, seed: Option<u64>) -> Result<Self, CliError> {
        let mut t = toml::Table::new();
        t.insert("command".into(), command.into());
        if let Some(seed) = seed {
            let seed = i64::try_from(seed).map_err(|_| CliError::InvalidParams(format!("seed {seed} exceeds 2^63 - 1")))?;
            t.insert("seed".into(), seed.into());
        }
        Ok(Self(t))
    }

    pub fn section<T: Serialize>(mut self, name: &str, value: &T) -> Result<Self, CliError> {
        let v = toml::Value::try_from(value).map_err(|e| CliError::InvalidParams(format!("cannot record [{name}]: {e}")))?;
        self.0.insert(name.into(), v);
        Ok(self)
    }

    fn render(&self) -> String {
        toml::to_string(&self.0).expect("header tables always serialize")
    }
}

/// Everything a command produces: a CSV document and a short summary for
/// humans.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub header: Header,
    pub table: Table,
    pub summary: Vec<String>,
}

impl RunOutput {
    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut buf = Vec::new();
        for line in self.header.render().lines().filter(|l| !l.is_empty()) {
            buf.extend_from_slice(b"# ");
            buf.extend_from_slice(line.as_bytes());
            buf.push(b'\n');
        }
        let mut w = csv::Writer::from_writer(&mut buf);
        let io = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(&self.table.columns).map_err(io)?;
        for row in &self.table.rows {
            w.write_record(row).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))?;
        drop(w);
        Ok(buf)
    }
}
