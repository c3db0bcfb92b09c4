//! Experiment reports: JSON with 17 significant digits and optional CSV trial tables.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use serde_json::{Number, Value};

pub const SCHEMA_VERSION: u32 = 1;

/// `x` with 17 significant digits, or `NaN`/`inf` spelled out.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        let s = format!("{x:.16e}");
        match s.split_once('e') {
            Some((m, e)) if !e.starts_with('-') => format!("{m}e+{e}"),
            _ => s,
        }
    } else {
        x.to_string()
    }
}

/// Rewrites every non-integer number in `value` with 17 significant digits.
/// Non-finite values become `null`.
fn widen_floats(value: &mut Value) {
    match value {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            let x: f64 = n.as_f64().unwrap_or(f64::NAN);
            *value = if x.is_finite() {
                Value::Number(fmt17(x).parse::<Number>().expect("valid JSON number"))
            } else {
                Value::Null
            };
        }
        Value::Array(items) => items.iter_mut().for_each(widen_floats),
        Value::Object(map) => map.values_mut().for_each(widen_floats),
        _ => {}
    }
}

/// Pretty JSON with every float at 17 significant digits.
pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut v = serde_json::to_value(value)?;
    widen_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// Serialized form of `value`, for config echoes and metrics.
pub fn value_of<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("report values serialize")
}

/// Counts and frequencies of one categorical outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observable {
    pub name: String,
    pub outcomes: Vec<String>,
    pub counts: Vec<u64>,
    pub total: u64,
    pub frequencies: Vec<f64>,
    /// Binomial standard error of each frequency.
    pub sigma: Vec<f64>,
}

impl Observable {
    pub fn from_counts(name: &str, outcomes: &[&str], counts: &[u64]) -> Self {
        assert_eq!(outcomes.len(), counts.len());
        let total: u64 = counts.iter().sum();
        let n = total.max(1) as f64;
        let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let sigma = frequencies.iter().map(|&p| (p * (1.0 - p) / n).sqrt()).collect();
        Self {
            name: name.to_string(),
            outcomes: outcomes.iter().map(|s| s.to_string()).collect(),
            counts: counts.to_vec(),
            total,
            frequencies,
            sigma,
        }
    }

    pub fn frequency(&self, outcome: &str) -> Option<f64> {
        self.outcomes.iter().position(|o| o == outcome).map(|i| self.frequencies[i])
    }

    pub fn count(&self, outcome: &str) -> Option<u64> {
        self.outcomes.iter().position(|o| o == outcome).map(|i| self.counts[i])
    }
}

/// A pass/fail comparison recorded in the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    /// `"<="` or `">="`.
    pub relation: &'static str,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            bound,
            relation: "<=",
            passed: value <= bound,
        }
    }

    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            bound,
            relation: ">=",
            passed: value >= bound,
        }
    }
}

/// One row per trial.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TrialTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub scenario: String,
    pub master_seed: Option<u64>,
    pub config: Value,
    pub trials: u64,
    pub inconclusive: u64,
    pub observables: Vec<Observable>,
    pub metrics: BTreeMap<String, Value>,
    pub checks: Vec<Check>,
    /// Per-trial rows, written separately as CSV.
    #[serde(skip)]
    pub table: Option<TrialTable>,
    /// Kept out of the JSON so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_time_s: Option<f64>,
}

impl ExperimentReport {
    pub fn new<C: Serialize>(scenario: &str, master_seed: Option<u64>, config: &C) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.to_string(),
            master_seed,
            config: value_of(config),
            trials: 0,
            inconclusive: 0,
            observables: Vec::new(),
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            table: None,
            wall_time_s: None,
        }
    }

    pub fn metric<T: Serialize>(&mut self, name: &str, value: &T) {
        self.metrics.insert(name.to_string(), value_of(value));
    }

    pub fn observable(&self, name: &str) -> Option<&Observable> {
        self.observables.iter().find(|o| o.name == name)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        to_json(self).expect("reports serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_get_seventeen_digits() {
        #[derive(Serialize)]
        struct S {
            a: f64,
            b: u64,
            c: Vec<f64>,
            d: f64,
        }
        let json = to_json(&S { a: 0.1, b: 3, c: vec![2.0, -1e-300], d: f64::NAN }).unwrap();
        assert!(json.contains("\"a\": 1.0000000000000001e-1"), "{json}");
        assert!(json.contains("\"b\": 3"));
        assert!(json.contains("2.0000000000000000e+0"));
        assert!(json.contains("-1.0000000000000000e-300"));
        assert!(json.contains("\"d\": null"));
    }

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, std::f64::consts::PI, 6.02214076e23, -2.5e-17, f64::MIN_POSITIVE] {
            assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn frequencies_sum_to_one() {
        let o = Observable::from_counts("x", &["a", "b", "c"], &[1, 2, 7]);
        assert!((o.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(o.frequency("c"), Some(0.7));
        assert!((o.sigma[2] - (0.7f64 * 0.3 / 10.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn report_has_schema_version_and_no_wall_time() {
        let mut r = ExperimentReport::new("demo", Some(4), &BTreeMap::from([("k", 1.5)]));
        r.wall_time_s = Some(3.0);
        r.table = Some(TrialTable::new(&["trial"]));
        let json = r.to_json();
        let v: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert!(v.get("wall_time_s").is_none());
        assert!(v.get("table").is_none());
    }

    #[test]
    fn csv_round_trip() {
        let mut t = TrialTable::new(&["trial", "value"]);
        t.push(vec!["0".into(), fmt17(0.5)]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "trial,value\n0,5.0000000000000000e-1\n");
    }
}
