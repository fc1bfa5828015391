//! Result tables and their CSV/JSON encodings.

use std::io::Write;

use serde::Serialize;

use crate::error::BenchError;
use crate::spec::{ExperimentSpec, OutputFormat};

/// One table cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    /// CSV rendering; floats use the shortest representation that round-trips.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) if v.is_nan() => "nan".into(),
            Cell::Float(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            _ => None,
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

/// Ordered `(column, value)` pairs.
pub type Row = Vec<(String, Cell)>;

/// Whether a column holds wall-clock timings, which are not reproducible.
pub fn is_timing_column(name: &str) -> bool {
    name.ends_with("wall_ms")
}

/// Build environment recorded with every result.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Environment {
    pub version: String,
    pub seed: u64,
}

/// Output of one experiment: the spec, one row per (grid point, method) and
/// the environment.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    #[serde(serialize_with = "rows_as_objects")]
    pub rows: Vec<Row>,
    pub environment: Environment,
}

fn rows_as_objects<S: serde::Serializer>(rows: &[Row], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::{SerializeMap, SerializeSeq};
    struct Obj<'a>(&'a Row);
    impl Serialize for Obj<'_> {
        fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            let mut m = s.serialize_map(Some(self.0.len()))?;
            for (k, v) in self.0 {
                m.serialize_entry(k, v)?;
            }
            m.end()
        }
    }
    let mut seq = s.serialize_seq(Some(rows.len()))?;
    for r in rows {
        seq.serialize_element(&Obj(r))?;
    }
    seq.end()
}

impl ExperimentResult {
    pub fn new(spec: ExperimentSpec, rows: Vec<Row>) -> Self {
        let environment = Environment { version: env!("CARGO_PKG_VERSION").to_string(), seed: spec.seed };
        Self { spec, rows, environment }
    }

    /// Column names in first-appearance order.
    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = Vec::new();
        for row in &self.rows {
            for (k, _) in row {
                if !cols.contains(k) {
                    cols.push(k.clone());
                }
            }
        }
        cols
    }

    /// Value of `column` in row `i`.
    pub fn get(&self, i: usize, column: &str) -> Option<&Cell> {
        self.rows.get(i)?.iter().find(|(k, _)| k == column).map(|(_, v)| v)
    }

    /// Rows whose `column` renders as `value`.
    pub fn filter<'a>(&'a self, column: &'a str, value: &'a str) -> impl Iterator<Item = &'a Row> + 'a {
        self.rows.iter().filter(move |r| r.iter().any(|(k, v)| k == column && v.render() == value))
    }

    /// CSV with a header row; missing cells are empty.
    pub fn write_csv<W: Write>(&self, w: W, include_timing: bool) -> Result<(), BenchError> {
        let cols: Vec<String> =
            self.columns().into_iter().filter(|c| include_timing || !is_timing_column(c)).collect();
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&cols)?;
        for row in &self.rows {
            let rec = cols.iter().map(|c| row.iter().find(|(k, _)| k == c).map(|(_, v)| v.render()).unwrap_or_default());
            out.write_record(rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self, include_timing: bool) -> Result<String, BenchError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, include_timing)?;
        Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
    }

    pub fn to_json(&self) -> Result<String, BenchError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Encodes the result in `format`.
    pub fn render(&self, format: OutputFormat) -> Result<String, BenchError> {
        match format {
            OutputFormat::Csv => self.to_csv(true),
            OutputFormat::Json => self.to_json(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::ExperimentKind;

    fn sample() -> ExperimentResult {
        let rows = vec![
            vec![("m".into(), 16usize.into()), ("rate".into(), 0.5.into()), ("mean_wall_ms".into(), 1.25.into())],
            vec![("m".into(), 40usize.into()), ("rate".into(), 1.0.into()), ("note".into(), "a,b".into())],
        ];
        ExperimentResult::new(ExperimentSpec::defaults(ExperimentKind::SuccessRate), rows)
    }

    #[test]
    fn csv_has_header_and_quotes() {
        let r = sample();
        assert_eq!(r.to_csv(true).unwrap(), "m,rate,mean_wall_ms,note\n16,0.5,1.25,\n40,1,,\"a,b\"\n");
        assert_eq!(r.to_csv(false).unwrap(), "m,rate,note\n16,0.5,\n40,1,\"a,b\"\n");
    }

    #[test]
    fn json_rows_are_objects() {
        let v: serde_json::Value = serde_json::from_str(&sample().to_json().unwrap()).unwrap();
        assert_eq!(v["rows"][1]["m"], 40);
        assert_eq!(v["environment"]["seed"], 0);
        assert_eq!(v["spec"]["experiment"], "success_rate");
    }
}
