use serde_json::{json, Value};

use super::config::OutputFormat;

/// Shortest decimal text that parses back to the same `f64`. Plain notation for
/// moderate magnitudes, exponent notation otherwise.
pub fn format_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// A rectangular trace. `None` cells are written empty (CSV) or `null` (JSON).
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Table { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Option<f64>>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn push_values(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&x| Some(x)).collect());
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.map(format_f64).unwrap_or_default())).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Array(r.iter().map(|c| c.map_or(Value::Null, |x| json!(x))).collect()))
            .collect();
        let mut s = serde_json::to_string(&json!({ "columns": self.columns, "rows": rows })).expect("json");
        s.push('\n');
        s
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }

    /// Parse CSV produced by [`Table::to_csv`].
    pub fn from_csv(text: &str) -> Result<Table, String> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let columns = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
        let mut t = Table::new(columns);
        for rec in r.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let row = rec
                .iter()
                .map(|c| if c.is_empty() { Ok(None) } else { c.parse::<f64>().map(Some).map_err(|e| format!("{c}: {e}")) })
                .collect::<Result<Vec<_>, _>>()?;
            t.rows.push(row);
        }
        Ok(t)
    }

    /// Parse JSON produced by [`Table::to_json`].
    pub fn from_json(text: &str) -> Result<Table, String> {
        let v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let columns: Vec<String> = serde_json::from_value(v["columns"].clone()).map_err(|e| e.to_string())?;
        let rows: Vec<Vec<Option<f64>>> = serde_json::from_value(v["rows"].clone()).map_err(|e| e.to_string())?;
        if let Some(r) = rows.iter().find(|r| r.len() != columns.len()) {
            return Err(format!("row of length {} under {} columns", r.len(), columns.len()));
        }
        Ok(Table { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formatting_is_canonical() {
        assert_eq!(format_f64(0.1), "0.1");
        assert_eq!(format_f64(3.0), "3");
        assert_eq!(format_f64(-2.5e-12), "-2.5e-12");
        assert_eq!(format_f64(1e20), "1e20");
        assert_eq!(format_f64(0.0), "0");
    }

    #[test]
    fn csv_has_header_and_blanks() {
        let mut t = Table::new(vec!["t".into(), "x".into()]);
        t.push(vec![Some(0.0), None]);
        t.push_values(&[1.0, 0.25]);
        let s = t.to_csv();
        assert_eq!(s, "t,x\n0,\n1,0.25\n");
        assert_eq!(Table::from_csv(&s).unwrap(), t);
        let empty = Table::new(vec!["a".into()]);
        assert_eq!(empty.to_csv(), "a\n");
    }

    proptest! {
        #[test]
        fn text_round_trips_exactly(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            prop_assert_eq!(format_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
