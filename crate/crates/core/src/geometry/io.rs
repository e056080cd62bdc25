//! Plain-text profile exchange.
//!
//! ```text
//! # n M L
//! 2 400 3.1415926535897931e0
//! # r phi [lapse]
//! 3.9269908169872414e-3 3.9269807237...e-3
//! ```
//!
//! Rows are the cell centres. The lapse column is written only when the
//! profile is not in arc-length form. Values carry 17 significant digits so a
//! write/read cycle reproduces every sample bit for bit.

use super::WarpedProfile;
use crate::error::{LabError, Result};
use std::fmt::Write as _;

pub fn write_profile(profile: &WarpedProfile) -> String {
    let mut out = String::new();
    let with_lapse = !profile.is_arc_length();
    let _ = writeln!(out, "# n M L");
    let _ = writeln!(out, "{} {} {:.16e}", profile.dim(), profile.cells(), profile.length());
    let _ = writeln!(out, "{}", if with_lapse { "# r phi lapse" } else { "# r phi" });
    for (i, r) in profile.centres().iter().enumerate() {
        if with_lapse {
            let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", r, profile.phi()[i], profile.lapse()[i]);
        } else {
            let _ = writeln!(out, "{:.16e} {:.16e}", r, profile.phi()[i]);
        }
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> LabError {
    LabError::Parse { line, message: message.into() }
}

pub fn read_profile(text: &str) -> Result<WarpedProfile> {
    let mut rows = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = rows.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(parse_err(hline, "header must be `n M L`"));
    }
    let dim: usize = fields[0].parse().map_err(|_| parse_err(hline, "bad dimension"))?;
    let cells: usize = fields[1].parse().map_err(|_| parse_err(hline, "bad cell count"))?;
    let length: f64 = fields[2].parse().map_err(|_| parse_err(hline, "bad length"))?;
    if cells == 0 {
        return Err(parse_err(hline, "cell count must be positive"));
    }

    let h = length / cells as f64;
    let mut phi = Vec::with_capacity(cells);
    let mut lapse = Vec::with_capacity(cells);
    for (line, row) in rows {
        let cols: Vec<f64> = row
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|_| parse_err(line, format!("bad number `{s}`"))))
            .collect::<Result<_>>()?;
        if cols.len() != 2 && cols.len() != 3 {
            return Err(parse_err(line, "expected `r phi` or `r phi lapse`"));
        }
        let expected_r = (phi.len() as f64 + 0.5) * h;
        if (cols[0] - expected_r).abs() > 1e-9 * length {
            return Err(parse_err(line, format!("r = {} is not cell centre {}", cols[0], expected_r)));
        }
        phi.push(cols[1]);
        lapse.push(cols.get(2).copied().unwrap_or(1.0));
    }
    if phi.len() != cells {
        return Err(LabError::GridMismatch { expected: cells, found: phi.len() });
    }
    WarpedProfile::new(dim, length, phi, lapse)
}
