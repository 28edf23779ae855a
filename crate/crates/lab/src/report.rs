//! Run reports: per-replica rows plus aggregate estimates, written as CSV or
//! JSON lines. Nothing time-dependent goes into the output.

use serde_json::{json, Map, Value as Json};
use sha2::{Digest, Sha256};

use sandpile_core::stats::Accumulator;
use sandpile_core::Estimate;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    UInt(u64),
    Float(f64),
    Bool(bool),
    Str(String),
}

impl Value {
    fn text(&self) -> String {
        match self {
            Value::Int(v) => v.to_string(),
            Value::UInt(v) => v.to_string(),
            Value::Float(v) => format_float(*v),
            Value::Bool(v) => v.to_string(),
            Value::Str(s) => s.clone(),
        }
    }

    fn json(&self) -> Json {
        match self {
            Value::Int(v) => json!(v),
            Value::UInt(v) => json!(v),
            Value::Float(v) if v.is_finite() => json!(v),
            Value::Float(v) => json!(format_float(*v)),
            Value::Bool(v) => json!(v),
            Value::Str(s) => json!(s),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::UInt(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            Value::Bool(v) => Some(*v as u8 as f64),
            Value::Str(_) => None,
        }
    }
}

fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        // shortest round-trip form
        format!("{v:?}")
    }
}

macro_rules! from_impl {
    ($t:ty, $v:ident, $conv:expr) => {
        impl From<$t> for Value {
            fn from(x: $t) -> Self {
                let f = $conv;
                Value::$v(f(x))
            }
        }
    };
}

from_impl!(i64, Int, |x| x);
from_impl!(i32, Int, |x: i32| x as i64);
from_impl!(u64, UInt, |x| x);
from_impl!(u32, UInt, |x: u32| x as u64);
from_impl!(usize, UInt, |x: usize| x as u64);
from_impl!(f64, Float, |x| x);
from_impl!(bool, Bool, |x| x);
from_impl!(String, Str, |x| x);
from_impl!(&str, Str, |x: &str| x.to_string());

/// One named row; column order is the insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Row(pub Vec<(String, Value)>);

impl Row {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, v: impl Into<Value>) -> Self {
        self.0.push((key.to_string(), v.into()));
        self
    }

    pub fn push(&mut self, key: &str, v: impl Into<Value>) {
        self.0.push((key.to_string(), v.into()));
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    fn columns(&self) -> Vec<&str> {
        self.0.iter().map(|(k, _)| k.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            _ => Err(format!("unknown format {s:?} (csv or jsonl)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub command: String,
    pub schema: String,
    pub config: Vec<(String, String)>,
    pub rows: Vec<Row>,
    pub estimates: Vec<(String, Estimate)>,
    pub violations: u64,
    /// Failed checks; nonempty means exit code 1.
    pub failures: Vec<String>,
}

impl Report {
    pub fn new(command: &str, schema_version: u32, config: Vec<(String, String)>) -> Self {
        Self {
            command: command.to_string(),
            schema: format!("{command}/{schema_version}"),
            config,
            rows: Vec::new(),
            estimates: Vec::new(),
            violations: 0,
            failures: Vec::new(),
        }
    }

    /// Mean, standard error and 95% interval of a numeric column over the rows.
    pub fn aggregate(&mut self, column: &str) {
        let mut acc = Accumulator::<f64>::default();
        for r in &self.rows {
            if let Some(x) = r.get(column).and_then(Value::as_f64) {
                acc.push(x);
            }
        }
        self.estimates.push((column.to_string(), acc.estimate()));
    }

    pub fn columns(&self) -> Vec<String> {
        self.rows.first().map_or_else(Vec::new, |r| r.columns().iter().map(|s| s.to_string()).collect())
    }

    /// First 16 hex digits of SHA-256 over the schema name and column list.
    pub fn schema_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.schema.as_bytes());
        for c in self.columns() {
            h.update(b"\x1f");
            h.update(c.as_bytes());
        }
        let d = h.finalize();
        d.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn passed(&self) -> bool {
        self.violations == 0 && self.failures.is_empty()
    }

    pub fn render(&self, format: Format) -> Vec<u8> {
        match format {
            Format::Csv => self.csv(),
            Format::Jsonl => self.jsonl(),
        }
    }

    fn csv(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let columns = self.columns();
        out.extend(format!("# schema={} hash={}\n", self.schema, self.schema_hash()).as_bytes());
        let cfg: Vec<String> = self.config.iter().map(|(k, v)| format!("{k}={v}")).collect();
        out.extend(format!("# config {}\n", cfg.join(" ")).as_bytes());
        {
            let mut w = csv::WriterBuilder::new().flexible(true).from_writer(&mut out);
            w.write_record(&columns).expect("in-memory write");
            for r in &self.rows {
                w.write_record(r.0.iter().map(|(_, v)| v.text())).expect("in-memory write");
            }
            w.flush().expect("in-memory write");
        }
        out.extend(b"# aggregate\n");
        {
            let mut w = csv::WriterBuilder::new().flexible(true).from_writer(&mut out);
            w.write_record(["estimate", "n", "mean", "std_err", "lo95", "hi95"]).expect("in-memory write");
            for (name, e) in &self.estimates {
                w.write_record([
                    name.clone(),
                    e.n.to_string(),
                    format_float(e.mean),
                    format_float(e.std_err),
                    format_float(e.lo95),
                    format_float(e.hi95),
                ])
                .expect("in-memory write");
            }
            w.write_record(["violations", &self.violations.to_string(), "", "", "", ""]).expect("in-memory write");
            w.flush().expect("in-memory write");
        }
        out
    }

    fn jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.rows {
            let mut m = Map::new();
            m.insert("record".into(), json!("replica"));
            for (k, v) in &r.0 {
                m.insert(k.clone(), v.json());
            }
            out.extend(serde_json::to_string(&Json::Object(m)).expect("json").as_bytes());
            out.push(b'\n');
        }
        let mut est = Map::new();
        for (name, e) in &self.estimates {
            est.insert(
                name.clone(),
                json!({"n": e.n, "mean": Value::Float(e.mean).json(), "std_err": Value::Float(e.std_err).json(),
                       "lo95": Value::Float(e.lo95).json(), "hi95": Value::Float(e.hi95).json()}),
            );
        }
        let cfg: Map<String, Json> = self.config.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        let agg = json!({
            "record": "aggregate",
            "schema": self.schema,
            "hash": self.schema_hash(),
            "config": cfg,
            "replicas": self.rows.len(),
            "estimates": est,
            "violations": self.violations,
            "failures": self.failures,
        });
        out.extend(serde_json::to_string(&agg).expect("json").as_bytes());
        out.push(b'\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut r = Report::new("demo", 1, vec![("a".into(), "8".into())]);
        r.rows.push(Row::new().with("replica", 0u64).with("x", 1.5).with("tag", "p,q"));
        r.rows.push(Row::new().with("replica", 1u64).with("x", 2.5).with("tag", "r"));
        r.aggregate("x");
        r
    }

    #[test]
    fn csv_layout() {
        let text = String::from_utf8(sample().render(Format::Csv)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# schema=demo/1 hash="));
        assert_eq!(lines[1], "# config a=8");
        assert_eq!(lines[2], "replica,x,tag");
        assert_eq!(lines[3], "0,1.5,\"p,q\"");
        assert_eq!(lines[6], "estimate,n,mean,std_err,lo95,hi95");
        assert!(lines[7].starts_with("x,2,2.0,0.5,"));
    }

    #[test]
    fn jsonl_has_replicas_then_aggregate() {
        let text = String::from_utf8(sample().render(Format::Jsonl)).unwrap();
        let recs: Vec<Json> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0]["record"], "replica");
        assert_eq!(recs[2]["record"], "aggregate");
        assert_eq!(recs[2]["estimates"]["x"]["mean"], 2.0);
    }

    #[test]
    fn hash_tracks_columns() {
        let a = sample();
        let mut b = sample();
        b.rows.iter_mut().for_each(|r| r.push("extra", 1u64));
        assert_ne!(a.schema_hash(), b.schema_hash());
        assert_eq!(a.schema_hash(), sample().schema_hash());
    }
}
