//! Experiment specs, the parallel runner, CSV/JSON emission and pooling.

mod params;
mod plan;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde_json::{json, Value};

pub use params::{parse_config, ParamDef, ParamType, Params};
pub use plan::{schema, Plan};

use crate::error::{invalid, Error, Result};

/// Rows produced between two CSV flushes.
const CHUNK: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    Detect,
    Cover,
    Perc,
    Broadcast,
    Sausage,
    Couple,
    Density,
    Calibrate,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Detect,
        ExperimentKind::Cover,
        ExperimentKind::Perc,
        ExperimentKind::Broadcast,
        ExperimentKind::Sausage,
        ExperimentKind::Couple,
        ExperimentKind::Density,
        ExperimentKind::Calibrate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Detect => "detect",
            ExperimentKind::Cover => "cover",
            ExperimentKind::Perc => "perc",
            ExperimentKind::Broadcast => "broadcast",
            ExperimentKind::Sausage => "sausage",
            ExperimentKind::Couple => "couple",
            ExperimentKind::Density => "density",
            ExperimentKind::Calibrate => "calibrate",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
            invalid(format!("unknown experiment kind '{s}' (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub params: Params,
    pub output_path: PathBuf,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl ExperimentSpec {
    pub fn from_config_text(
        kind: ExperimentKind,
        text: &str,
        seed: u64,
        output_path: impl Into<PathBuf>,
    ) -> Result<Self> {
        let raw = parse_config(text)?;
        Ok(Self {
            kind,
            params: Params::validate(&raw, schema(kind))?,
            output_path: output_path.into(),
            seed,
            threads: None,
        })
    }

    pub fn from_config_file(
        kind: ExperimentKind,
        path: &Path,
        seed: u64,
        output_path: impl Into<PathBuf>,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_config_text(kind, &text, seed, output_path)
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }

    /// Runs every precondition check; no simulation happens here.
    pub fn validate(&self) -> Result<Plan> {
        if self.threads == Some(0) {
            return Err(invalid("threads must be at least 1"));
        }
        Plan::build(self.kind, &self.params, self.seed)
    }

    pub fn metadata_path(&self) -> PathBuf {
        let mut s = self.output_path.clone().into_os_string();
        s.push(".meta.json");
        PathBuf::from(s)
    }

    fn echo(&self) -> Value {
        json!({
            "kind": self.kind.name(),
            "params": self.params.values(),
            "seed": self.seed,
            "output_path": self.output_path.display().to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub schema: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub metadata: Value,
}

impl ResultTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c == name)
    }

    /// Numeric values of a column; booleans map to 1/0, empty cells are skipped.
    pub fn numeric(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column(name)?;
        Some(self.rows.iter().filter_map(|r| parse_cell(&r[j])).collect())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let schema = rdr.headers()?.iter().map(String::from).collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()?;
        let meta = PathBuf::from(format!("{}.meta.json", path.display()));
        let metadata = match std::fs::read_to_string(&meta) {
            Ok(s) => serde_json::from_str(&s)?,
            Err(_) => Value::Null,
        };
        Ok(Self { schema, rows, metadata })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.schema)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_cell(s: &str) -> Option<f64> {
    match s {
        "" => None,
        "true" => Some(1.0),
        "false" => Some(0.0),
        _ => s.parse().ok(),
    }
}

/// Validates, runs and writes `<out>` plus `<out>.meta.json`.
///
/// On a mid-run failure the rows finished so far stay in the CSV and the
/// metadata records `"incomplete": true` before the error is returned.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    let plan = spec.validate()?;
    let pool = match spec.threads {
        Some(n) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| invalid(format!("thread pool: {e}")))?,
        ),
        None => None,
    };
    let threads = pool
        .as_ref()
        .map(|p| p.current_num_threads())
        .unwrap_or_else(rayon::current_num_threads);

    let start = Instant::now();
    let mut writer = csv::Writer::from_path(&spec.output_path)?;
    writer.write_record(plan.columns())?;
    writer.flush()?;

    let units = plan.units() as u64;
    let mut rows = Vec::with_capacity(units as usize);
    let mut failure = None;
    let mut lo = 0;
    while lo < units {
        let hi = (lo + CHUNK).min(units);
        let chunk = match &pool {
            Some(p) => p.install(|| plan.rows(lo..hi)),
            None => plan.rows(lo..hi),
        };
        match chunk {
            Ok(chunk) => {
                for r in &chunk {
                    writer.write_record(r)?;
                }
                writer.flush()?;
                rows.extend(chunk);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
        lo = hi;
    }
    drop(writer);

    let metadata = json!({
        "spec": spec.echo(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": spec.seed,
        "threads": threads,
        "wall_time_s": start.elapsed().as_secs_f64(),
        "rows": rows.len(),
        "incomplete": failure.is_some(),
        "error": failure.as_ref().map(|e| e.to_string()),
        "summary": plan.summary(&rows),
    });
    let mut f = File::create(spec.metadata_path())?;
    f.write_all(serde_json::to_string_pretty(&metadata)?.as_bytes())?;
    f.write_all(b"\n")?;

    if let Some(e) = failure {
        return Err(e);
    }
    Ok(ResultTable {
        schema: plan.columns().iter().map(|s| s.to_string()).collect(),
        rows,
        metadata,
    })
}

fn check_schemas(tables: &[ResultTable]) -> Result<&[String]> {
    let first = tables.first().ok_or_else(|| invalid("nothing to aggregate"))?;
    for t in &tables[1..] {
        if t.schema != first.schema {
            let only_a: Vec<&str> = first
                .schema
                .iter()
                .filter(|c| !t.schema.contains(c))
                .map(String::as_str)
                .collect();
            let only_b: Vec<&str> = t
                .schema
                .iter()
                .filter(|c| !first.schema.contains(c))
                .map(String::as_str)
                .collect();
            let msg = if only_a.is_empty() && only_b.is_empty() {
                format!("column order differs: [{}] vs [{}]", first.schema.join(", "), t.schema.join(", "))
            } else {
                format!(
                    "columns only in first table: [{}]; only in other: [{}]",
                    only_a.join(", "),
                    only_b.join(", ")
                )
            };
            return Err(Error::SchemaMismatch(msg));
        }
    }
    Ok(&first.schema)
}

/// Pools every numeric column across tables.
///
/// Output columns: `column, count, missing, mean, std_error`. Statistics are
/// row-weighted over the union of rows; values are sorted before summing, so
/// the result does not depend on input order.
pub fn aggregate(tables: &[ResultTable]) -> Result<ResultTable> {
    let schema = check_schemas(tables)?;
    let mut rows = Vec::new();
    for (j, name) in schema.iter().enumerate() {
        let mut xs = Vec::new();
        let mut missing = 0usize;
        let mut non_numeric = false;
        for t in tables {
            for r in &t.rows {
                match parse_cell(&r[j]) {
                    Some(x) => xs.push(x),
                    None if r[j].is_empty() => missing += 1,
                    None => non_numeric = true,
                }
            }
        }
        if non_numeric {
            continue;
        }
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        let mean = if n == 0 { f64::NAN } else { xs.iter().sum::<f64>() / n as f64 };
        let se = if n < 2 {
            0.0
        } else {
            let mut dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
            dev.sort_by(f64::total_cmp);
            (dev.iter().sum::<f64>() / (n - 1) as f64 / n as f64).sqrt()
        };
        rows.push(vec![name.clone(), n.to_string(), missing.to_string(), mean.to_string(), se.to_string()]);
    }
    let sources: Vec<Value> = tables.iter().map(|t| t.metadata.clone()).collect();
    Ok(ResultTable {
        schema: ["column", "count", "missing", "mean", "std_error"].map(String::from).to_vec(),
        rows,
        metadata: json!({ "aggregated": tables.len(), "sources": sources }),
    })
}

/// Pooled empirical survival `P(T > t)` of an event-time column, where an
/// empty cell means the event did not happen within the horizon.
pub fn pooled_survival(tables: &[ResultTable], column: &str, times: &[f64]) -> Result<Vec<f64>> {
    check_schemas(tables)?;
    let j = tables[0]
        .column(column)
        .ok_or_else(|| Error::SchemaMismatch(format!("no column '{column}'")))?;
    let mut events = Vec::new();
    let mut total = 0usize;
    for t in tables {
        for r in &t.rows {
            total += 1;
            if let Some(x) = parse_cell(&r[j]) {
                events.push(x);
            }
        }
    }
    if total == 0 {
        return Err(invalid("no rows to pool"));
    }
    events.sort_by(f64::total_cmp);
    Ok(times
        .iter()
        .map(|&t| {
            let hit = events.partition_point(|&x| x <= t);
            (total - hit) as f64 / total as f64
        })
        .collect())
}

/// Column name to summary row, for convenient lookups.
pub fn summary_map(summary: &ResultTable) -> BTreeMap<String, (usize, f64, f64)> {
    summary
        .rows
        .iter()
        .map(|r| {
            (
                r[0].clone(),
                (r[1].parse().unwrap_or(0), r[3].parse().unwrap_or(f64::NAN), r[4].parse().unwrap_or(f64::NAN)),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[&str], rows: &[&[&str]]) -> ResultTable {
        ResultTable {
            schema: cols.iter().map(|s| s.to_string()).collect(),
            rows: rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect(),
            metadata: Value::Null,
        }
    }

    #[test]
    fn kinds_round_trip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!("detection".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn validation_rejects_before_running() {
        let spec = ExperimentSpec::from_config_text(ExperimentKind::Detect, "lambda = -1", 1, "/nonexistent/x.csv").unwrap();
        assert!(spec.validate().is_err());
        assert!(run_experiment(&spec).is_err());
        assert!(ExperimentSpec::from_config_text(ExperimentKind::Detect, "lambd = 1", 1, "x.csv").is_err());
        let spec = ExperimentSpec::from_config_text(ExperimentKind::Perc, "lambda = 1\nlambda_c = 1.4", 1, "x.csv").unwrap();
        assert!(matches!(spec.validate(), Err(Error::Subcritical { .. })));
    }

    #[test]
    fn aggregate_pools_and_commutes() {
        let a = table(&["trial", "x", "ok"], &[&["0", "1", "true"], &["1", "3", "false"]]);
        let b = table(&["trial", "x", "ok"], &[&["0", "5", "true"], &["1", "", "true"]]);
        let ab = aggregate(&[a.clone(), b.clone()]).unwrap();
        let ba = aggregate(&[b.clone(), a.clone()]).unwrap();
        assert_eq!(ab.rows, ba.rows);
        let m = summary_map(&ab);
        let (n, mean, se) = m["x"];
        assert_eq!((n, mean), (3, 3.0));
        assert!((se - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(m["ok"].1, 0.75);
        assert_eq!(aggregate(std::slice::from_ref(&a)).unwrap().rows[1][3], "2");
        let c = table(&["trial", "y", "ok"], &[]);
        let err = aggregate(&[a, c]).unwrap_err().to_string();
        assert!(err.contains('x') && err.contains('y'));
    }

    #[test]
    fn pooled_survival_counts_censored() {
        let a = table(&["t"], &[&["0.5"], &[""]]);
        let b = table(&["t"], &[&["1.5"], &["0.2"]]);
        let s = pooled_survival(&[a, b], "t", &[0.0, 0.5, 2.0]).unwrap();
        assert_eq!(s, vec![1.0, 0.5, 0.25]);
    }
}
