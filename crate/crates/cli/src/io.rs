//! CSV ingestion, number formatting and JSON output.

use crate::Usage;
use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::Value;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};

/// Header plus raw string cells, with the source line of every row kept for
/// error messages.
pub struct Table {
    pub headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    pub fn read(path: &str) -> Result<Table> {
        let reader: Box<dyn Read> = if path == "-" {
            Box::new(io::stdin())
        } else {
            Box::new(File::open(path).with_context(|| format!("cannot open '{path}'"))?)
        };
        Table::from_reader(reader).with_context(|| format!("reading '{path}'"))
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Table> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            bail!("missing header row");
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| match e.position() {
                Some(p) => anyhow!("line {}: {}", p.line(), e),
                None => anyhow!(e),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec.iter().map(|c| c.trim().to_string()).collect()));
        }
        Ok(Table { headers, rows })
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            anyhow!(Usage(format!(
                "no column named '{name}' (columns: {})",
                self.headers.join(", ")
            )))
        })
    }

    pub fn strings(&self, idx: usize) -> Vec<String> {
        self.rows.iter().map(|(_, r)| r[idx].clone()).collect()
    }

    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self.index(name)?;
        self.numeric_at(idx)
    }

    pub fn numeric_at(&self, idx: usize) -> Result<Vec<f64>> {
        let name = &self.headers[idx];
        self.rows
            .iter()
            .map(|(line, r)| {
                let cell = &r[idx];
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| anyhow!("line {line}: column '{name}': cannot parse '{cell}' as a finite number"))
            })
            .collect()
    }
}

/// `%.9g`: nine significant digits, trailing zeros dropped, exponent form
/// outside `[1e-4, 1e9)`.
pub fn fmt_g(v: f64) -> String {
    const DIGITS: i32 = 9;
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, v);
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= DIGITS {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (DIGITS - 1 - exp) as usize, v)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_g).unwrap_or_default()
}

/// Rounds every number in a JSON tree to nine significant digits.
pub fn round_json(v: Value) -> Value {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            let f = n.as_f64().unwrap_or(f64::NAN);
            fmt_g(f)
                .parse::<f64>()
                .ok()
                .and_then(serde_json::Number::from_f64)
                .map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round_json).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_json(v))).collect()),
        other => other,
    }
}

/// Output sink: a file, or stdout for `None` and `-`.
pub fn sink(path: Option<&str>) -> Result<Box<dyn Write>> {
    Ok(match path {
        None | Some("-") => Box::new(BufWriter::new(io::stdout().lock())),
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create '{p}'"))?,
        )),
    })
}

/// Pretty JSON with sorted keys and rounded numbers.
pub fn write_json<T: Serialize>(path: Option<&str>, value: &T) -> Result<()> {
    let v = round_json(serde_json::to_value(value)?);
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, &v)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn csv_writer(path: Option<&str>) -> Result<csv::Writer<Box<dyn Write>>> {
    Ok(csv::Writer::from_writer(sink(path)?))
}
