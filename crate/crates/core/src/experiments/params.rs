//! Flat `key = value` configuration files and typed parameter schemas.

use std::collections::BTreeMap;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamType {
    Int,
    Float,
    Text,
    FloatList,
}

#[derive(Debug, Clone, Copy)]
pub struct ParamDef {
    pub name: &'static str,
    pub ty: ParamType,
    /// `None` marks an optional parameter without default.
    pub default: Option<&'static str>,
}

pub const fn p(name: &'static str, ty: ParamType, default: &'static str) -> ParamDef {
    ParamDef {
        name,
        ty,
        default: Some(default),
    }
}

pub const fn opt(name: &'static str, ty: ParamType) -> ParamDef {
    ParamDef { name, ty, default: None }
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(invalid(format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(invalid(format!("line {}: duplicate key '{k}'", n + 1)));
        }
    }
    Ok(out)
}

/// Parameters checked against a schema, defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    values: BTreeMap<String, String>,
}

fn check_value(def: &ParamDef, v: &str) -> Result<()> {
    let bad = |what: &str| invalid(format!("parameter '{}': expected {what}, got '{v}'", def.name));
    match def.ty {
        ParamType::Int => v.parse::<u64>().map(|_| ()).map_err(|_| bad("a non-negative integer")),
        ParamType::Float => match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(()),
            _ => Err(bad("a finite number")),
        },
        ParamType::Text => Ok(()),
        ParamType::FloatList => {
            for part in v.split(',') {
                match part.trim().parse::<f64>() {
                    Ok(x) if x.is_finite() => {}
                    _ => return Err(bad("a comma-separated list of numbers")),
                }
            }
            Ok(())
        }
    }
}

impl Params {
    pub fn validate(raw: &BTreeMap<String, String>, schema: &[ParamDef]) -> Result<Self> {
        let unknown: Vec<&str> = raw
            .keys()
            .filter(|k| !schema.iter().any(|d| d.name == k.as_str()))
            .map(|k| k.as_str())
            .collect();
        if !unknown.is_empty() {
            let known: Vec<&str> = schema.iter().map(|d| d.name).collect();
            return Err(Error::InvalidInput(format!(
                "unknown parameter(s) {}; accepted: {}",
                unknown.join(", "),
                known.join(", ")
            )));
        }
        let mut values = BTreeMap::new();
        for def in schema {
            if let Some(v) = raw.get(def.name).map(String::as_str).or(def.default) {
                check_value(def, v)?;
                values.insert(def.name.to_string(), v.to_string());
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    fn raw(&self, k: &str) -> Option<&str> {
        self.values.get(k).map(String::as_str)
    }

    pub fn f64(&self, k: &str) -> f64 {
        self.raw(k).and_then(|v| v.parse().ok()).expect("validated float")
    }

    pub fn opt_f64(&self, k: &str) -> Option<f64> {
        self.raw(k).and_then(|v| v.parse().ok())
    }

    pub fn usize(&self, k: &str) -> usize {
        self.raw(k).and_then(|v| v.parse().ok()).expect("validated integer")
    }

    pub fn text(&self, k: &str) -> &str {
        self.raw(k).expect("validated text")
    }

    pub fn list(&self, k: &str) -> Option<Vec<f64>> {
        self.raw(k)
            .map(|v| v.split(',').map(|x| x.trim().parse().expect("validated list")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &[ParamDef] = &[
        p("d", ParamType::Int, "2"),
        p("lambda", ParamType::Float, "1"),
        opt("velocity", ParamType::FloatList),
    ];

    #[test]
    fn parses_comments_and_defaults() {
        let raw = parse_config("# header\nlambda = 0.5  # half\n\nvelocity=1, 0\n").unwrap();
        let p = Params::validate(&raw, SCHEMA).unwrap();
        assert_eq!(p.usize("d"), 2);
        assert_eq!(p.f64("lambda"), 0.5);
        assert_eq!(p.list("velocity"), Some(vec![1.0, 0.0]));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_config("lambda 1").is_err());
        assert!(parse_config("a=1\na=2").is_err());
        let raw = parse_config("lamda = 1").unwrap();
        let err = Params::validate(&raw, SCHEMA).unwrap_err().to_string();
        assert!(err.contains("lamda"));
        let raw = parse_config("d = -1").unwrap();
        assert!(Params::validate(&raw, SCHEMA).is_err());
        let raw = parse_config("lambda = nan").unwrap();
        assert!(Params::validate(&raw, SCHEMA).is_err());
    }
}
