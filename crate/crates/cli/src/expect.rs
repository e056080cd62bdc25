//! Declared expectations and the verdict table.
//!
//! An expectation is one of
//!
//! * `"x +- tol"`: measured within `tol` of `x`;
//! * `"< x"`, `"<= x"`, `"> x"`, `">= x"`: a one-sided bound;
//! * any other text: the measured label must equal it.

use serde::{Deserialize, Serialize};
use std::fmt;

/// A measured quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Label(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(x) => write!(f, "{x:.12e}"),
            Value::Label(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Less,
    LessEq,
    Greater,
    GreaterEq,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expectation {
    Within { target: f64, tol: f64 },
    Bound { op: Bound, value: f64 },
    Label(String),
}

impl Expectation {
    pub fn parse(text: &str) -> Result<Self, String> {
        let t = text.trim();
        if t.is_empty() {
            return Err("empty expectation".into());
        }
        for (prefix, op) in [("<=", Bound::LessEq), (">=", Bound::GreaterEq), ("<", Bound::Less), (">", Bound::Greater)] {
            if let Some(rest) = t.strip_prefix(prefix) {
                let value = number(rest)?;
                return Ok(Self::Bound { op, value });
            }
        }
        if let Some((x, tol)) = t.split_once("+-") {
            let (target, tol) = (number(x)?, number(tol)?);
            if !(tol >= 0.0) {
                return Err(format!("tolerance must be non-negative, got {tol}"));
            }
            return Ok(Self::Within { target, tol });
        }
        if t.parse::<f64>().is_ok() {
            return Err(format!("`{t}` needs a tolerance, as in `{t} +- 1e-6`"));
        }
        Ok(Self::Label(t.to_string()))
    }

    /// Tolerances multiplied by `scale` (bounds and labels are unchanged).
    pub fn scaled(&self, scale: f64) -> Self {
        match self {
            Self::Within { target, tol } => Self::Within { target: *target, tol: tol * scale },
            other => other.clone(),
        }
    }

    /// Pass flag and signed deviation from the target or bound. A violated
    /// bound has a deviation of the wrong sign; labels report 0 or NaN.
    pub fn check(&self, measured: &Value) -> (bool, f64) {
        match (self, measured) {
            (Self::Within { target, tol }, Value::Number(x)) => {
                let d = x - target;
                (d.abs() <= *tol, d)
            }
            (Self::Bound { op, value }, Value::Number(x)) => {
                let d = x - value;
                let pass = match op {
                    Bound::Less => d < 0.0,
                    Bound::LessEq => d <= 0.0,
                    Bound::Greater => d > 0.0,
                    Bound::GreaterEq => d >= 0.0,
                };
                (pass, d)
            }
            (Self::Label(want), Value::Label(got)) => (want == got, if want == got { 0.0 } else { f64::NAN }),
            _ => (false, f64::NAN),
        }
    }
}

fn number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    s.parse::<f64>().map_err(|_| format!("`{s}` is not a number"))
}

fn num(x: f64) -> String {
    if x != 0.0 && !(1e-3..1e6).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Within { target, tol } => write!(f, "{} +- {}", num(*target), num(*tol)),
            Self::Bound { op, value } => {
                let s = match op {
                    Bound::Less => "<",
                    Bound::LessEq => "<=",
                    Bound::Greater => ">",
                    Bound::GreaterEq => ">=",
                };
                write!(f, "{s} {}", num(*value))
            }
            Self::Label(s) => f.write_str(s),
        }
    }
}

/// One row of the verdict table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub experiment: String,
    pub quantity: String,
    pub expectation: String,
    pub measured: Value,
    /// Measured minus target (or bound).
    pub deviation: f64,
    pub pass: bool,
}

/// Column order of the verdict table.
pub const VERDICT_HEADER: [&str; 6] = ["experiment", "quantity", "expectation", "measured", "deviation", "verdict"];

/// Delimited verdict table with [`VERDICT_HEADER`] columns.
pub fn verdict_table(rows: &[VerdictRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(VERDICT_HEADER).expect("writing to memory");
    for r in rows {
        w.write_record([
            r.experiment.as_str(),
            r.quantity.as_str(),
            r.expectation.as_str(),
            &r.measured.to_string(),
            &format!("{:+.6e}", r.deviation),
            if r.pass { "pass" } else { "fail" },
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("writing to memory")).expect("csv output is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar() {
        assert_eq!(Expectation::parse("1 +- 1e-6").unwrap(), Expectation::Within { target: 1.0, tol: 1e-6 });
        assert_eq!(Expectation::parse(" < 0").unwrap(), Expectation::Bound { op: Bound::Less, value: 0.0 });
        assert_eq!(Expectation::parse(">= 2.5").unwrap(), Expectation::Bound { op: Bound::GreaterEq, value: 2.5 });
        assert_eq!(Expectation::parse("linearly stable").unwrap(), Expectation::Label("linearly stable".into()));
        assert!(Expectation::parse("1.0").is_err());
        assert!(Expectation::parse("< x").is_err());
        assert!(Expectation::parse("1 +- -1").is_err());
    }

    #[test]
    fn signed_deviation() {
        let e = Expectation::parse("1 +- 1e-6").unwrap();
        assert_eq!(e.check(&Value::Number(1.0 + 5e-7)), (true, 1.0 + 5e-7 - 1.0));
        let (pass, d) = e.check(&Value::Number(0.5));
        assert!(!pass && d == -0.5);
        let (pass, d) = Expectation::parse("< 0").unwrap().check(&Value::Number(0.25));
        assert!(!pass && d == 0.25);
        assert!(!Expectation::parse("stable").unwrap().check(&Value::Number(1.0)).0);
    }
}
