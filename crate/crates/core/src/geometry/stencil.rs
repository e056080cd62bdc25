//! Fourth-order stencils on the cell-centred radial grid.
//!
//! Cell `i` sits at `x = (i + 1/2) h`. Values beyond either pole are supplied
//! by reflection: cell `-1-k` mirrors cell `k`, cell `M+k` mirrors `M-1-k`,
//! with a sign flip for odd fields.

use serde::{Deserialize, Serialize};

/// Behaviour of a radial field under reflection through a pole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }

    pub fn times(self, other: Parity) -> Parity {
        if self == other {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

/// Reflected index and sign for a (possibly ghost) cell index.
#[inline]
pub fn reflect(m: usize, i: isize) -> (usize, bool) {
    let m = m as isize;
    if i < 0 {
        ((-1 - i) as usize, true)
    } else if i >= m {
        ((2 * m - 1 - i) as usize, true)
    } else {
        (i as usize, false)
    }
}

#[inline]
pub fn ext(u: &[f64], parity: Parity, i: isize) -> f64 {
    let (j, flipped) = reflect(u.len(), i);
    if flipped {
        parity.sign() * u[j]
    } else {
        u[j]
    }
}

pub const D1: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
/// Sixth-order first derivative.
pub const D1_6: [f64; 7] = [-1.0 / 60.0, 9.0 / 60.0, -45.0 / 60.0, 0.0, 45.0 / 60.0, -9.0 / 60.0, 1.0 / 60.0];
pub const D2: [f64; 5] = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];
/// Face value from the four nearest cells.
pub const FACE_VALUE: [f64; 4] = [-1.0 / 16.0, 9.0 / 16.0, 9.0 / 16.0, -1.0 / 16.0];
/// Face derivative from the four nearest cells (times h).
pub const FACE_DIFF: [f64; 4] = [1.0 / 24.0, -27.0 / 24.0, 27.0 / 24.0, -1.0 / 24.0];

fn centred(u: &[f64], parity: Parity, w: &[f64], scale: f64) -> Vec<f64> {
    let half = (w.len() / 2) as isize;
    (0..u.len() as isize)
        .map(|i| {
            let s: f64 = w.iter().enumerate().map(|(k, c)| c * ext(u, parity, i + k as isize - half)).sum();
            s * scale
        })
        .collect()
}

/// First derivative at cell centres.
pub fn d1(u: &[f64], parity: Parity, h: f64) -> Vec<f64> {
    centred(u, parity, &D1, 1.0 / h)
}

/// First derivative at cell centres, sixth order.
pub fn d1_6(u: &[f64], parity: Parity, h: f64) -> Vec<f64> {
    centred(u, parity, &D1_6, 1.0 / h)
}

/// Second derivative at cell centres.
pub fn d2(u: &[f64], parity: Parity, h: f64) -> Vec<f64> {
    centred(u, parity, &D2, 1.0 / (h * h))
}

/// Values on the `M + 1` faces, face `k` sitting at `x = k h`.
pub fn face_values(u: &[f64], parity: Parity) -> Vec<f64> {
    face_stencil(u, parity, &FACE_VALUE, 1.0)
}

/// Derivatives on the `M + 1` faces.
pub fn face_diffs(u: &[f64], parity: Parity, h: f64) -> Vec<f64> {
    face_stencil(u, parity, &FACE_DIFF, 1.0 / h)
}

fn face_stencil(u: &[f64], parity: Parity, w: &[f64; 4], scale: f64) -> Vec<f64> {
    (0..=u.len() as isize)
        .map(|k| {
            let s: f64 = (0..4).map(|j| w[j] * ext(u, parity, k + j as isize - 2)).sum();
            s * scale
        })
        .collect()
}

/// Sparse row of a linear stencil operator after folding ghost cells.
pub type Row = Vec<(usize, f64)>;

/// Folds a centred stencil into explicit rows acting on the real cells.
pub fn centred_rows(m: usize, parity: Parity, w: &[f64; 5], scale: f64) -> Vec<Row> {
    (0..m as isize)
        .map(|i| {
            let mut row: Row = Vec::with_capacity(5);
            for (k, wk) in w.iter().enumerate() {
                if *wk == 0.0 {
                    continue;
                }
                let (j, flipped) = reflect(m, i + k as isize - 2);
                let c = if flipped { parity.sign() * wk } else { *wk } * scale;
                push(&mut row, j, c);
            }
            row
        })
        .collect()
}

/// Folded rows of the face-derivative stencil (one row per face).
pub fn face_diff_rows(m: usize, parity: Parity, h: f64) -> Vec<Row> {
    (0..=m as isize)
        .map(|k| {
            let mut row: Row = Vec::with_capacity(4);
            for (j, wj) in FACE_DIFF.iter().enumerate() {
                let (c, flipped) = reflect(m, k + j as isize - 2);
                let v = if flipped { parity.sign() * wj } else { *wj } / h;
                push(&mut row, c, v);
            }
            row
        })
        .collect()
}

fn push(row: &mut Row, j: usize, c: f64) {
    if let Some(e) = row.iter_mut().find(|e| e.0 == j) {
        e.1 += c;
    } else {
        row.push((j, c));
    }
}

pub fn apply_rows(rows: &[Row], u: &[f64]) -> Vec<f64> {
    rows.iter().map(|r| r.iter().map(|&(j, c)| c * u[j]).sum()).collect()
}
