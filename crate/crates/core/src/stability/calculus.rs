//! Weighted differential operators on rotation-invariant fields.
//!
//! Fields live on cell centres: functions and tensor components are even
//! under pole reflection, radial 1-forms `w ds` are odd. An invariant
//! symmetric 2-tensor is `h = a ds^2 + b phi^2 g_S` in orthonormal
//! components, so `|h|^2 = a^2 + (n-1) b^2`.
//!
//! The symmetrized gradient `gauge(w) = sym(nabla w)` is assembled from
//! stencils; both weighted divergences are then defined as its exact discrete
//! adjoints in the `e^{-f} dV` pairing, so `<div h, w> = <h, gauge w>` holds to
//! rounding. With this normalization `gauge(w) = 1/2 L_{w#} g` and
//! `gauge(du) = Hess u`.

use crate::geometry::stencil::{self, Parity, Row};
use crate::geometry::Geometry;
use crate::linalg::BandMatrix;
use nalgebra::DMatrix;

/// Dirichlet energy of an invariant tensor:
/// `int (a_s^2 + (n-1) b_s^2 + 2 (n-1) kappa^2 (a - b)^2) e^{-f} dV`,
/// given the cell weights `w` and face densities `face_density`.
pub fn tensor_energy(geom: &Geometry, a: &[f64], b: &[f64], w: &[f64], face_density: &[f64]) -> f64 {
    let n1 = (geom.dim - 1) as f64;
    let da = stencil::face_diffs(a, Parity::Even, geom.h);
    let db = stencil::face_diffs(b, Parity::Even, geom.h);
    let faces: f64 = (0..=geom.cells)
        .map(|k| geom.face_weight[k] * face_density[k] * (da[k] * da[k] + n1 * db[k] * db[k]))
        .sum();
    let cells: f64 = (0..geom.cells)
        .map(|i| w[i] * 2.0 * n1 * geom.kappa[i].powi(2) * (a[i] - b[i]).powi(2))
        .sum();
    faces + cells
}

/// Operators of one geometry in the measure `e^{-f} dV`.
///
/// Radial 1-forms `w ds` are stored on the `M + 1` faces, with `w = 0` on the
/// two pole faces.
#[derive(Debug, Clone)]
pub struct WeightedCalculus {
    pub geom: Geometry,
    pub f: Vec<f64>,
    /// Cell-volume weights of `e^{-f} dV`, the pairing of the staggered calculus.
    pub w: Vec<f64>,
    /// Quadrature weights of `e^{-f} dV`, paired with [`Self::function_energy`].
    pub fw: Vec<f64>,
    /// Face weights of the weighted Dirichlet energy.
    pub face_w: Vec<f64>,
    /// Face weights of the 1-form pairing (dual-cell volumes times `e^{-f}`).
    pub form_w: Vec<f64>,
    lapse_face: Vec<f64>,
    // sphere component of sym(nabla w) at cell i is beta_lo[i] w_i + beta_hi[i] w_{i+1}
    beta_lo: Vec<f64>,
    beta_hi: Vec<f64>,
    face_even: Vec<Row>,
}

impl WeightedCalculus {
    pub fn new(geom: Geometry, f: &[f64]) -> Self {
        let m = geom.cells;
        assert_eq!(f.len(), m, "weight length");
        let n1 = (geom.dim - 1) as f64;
        let h = geom.h;
        let w: Vec<f64> = geom.cell_volume.iter().zip(f).map(|(m, f)| m * (-f).exp()).collect();
        let fw = geom.mass.iter().zip(f).map(|(m, f)| m * (-f).exp()).collect();
        let ff = stencil::face_values(f, Parity::Even);
        let face_w = geom.face_weight.iter().zip(&ff).map(|(c, f)| c * (-f).exp()).collect();
        let lapse_face = stencil::face_values(&geom.lapse, Parity::Even);
        let mut form_w = vec![0.0; m + 1];
        for k in 1..m {
            form_w[k] = 0.5 * (geom.cell_volume[k - 1] + geom.cell_volume[k]) * (-ff[k]).exp();
        }
        // Geometric flux jumps; splitting them evenly between the two cells
        // makes the discrete divergence of the metric vanish identically.
        let flux = |i: usize| geom.cell_volume[i] / geom.lapse[i];
        let mut jump = vec![0.0; m + 1];
        for k in 1..m {
            jump[k] = (flux(k) - flux(k - 1)) / h;
        }
        let beta_lo = (0..m).map(|i| jump[i] / (2.0 * n1 * geom.cell_volume[i])).collect();
        let beta_hi = (0..m).map(|i| jump[i + 1] / (2.0 * n1 * geom.cell_volume[i])).collect();
        let face_even = stencil::face_diff_rows(m, Parity::Even, h);
        Self { geom, f: f.to_vec(), w, fw, face_w, form_w, lapse_face, beta_lo, beta_hi, face_even }
    }

    /// Unweighted calculus (`f = 0`).
    pub fn unweighted(geom: Geometry) -> Self {
        let f = vec![0.0; geom.cells];
        Self::new(geom, &f)
    }

    pub fn cells(&self) -> usize {
        self.geom.cells
    }

    pub fn dim(&self) -> usize {
        self.geom.dim
    }

    fn n1(&self) -> f64 {
        (self.geom.dim - 1) as f64
    }

    // ----- pairings -------------------------------------------------------

    pub fn inner_fn(&self, u: &[f64], v: &[f64]) -> f64 {
        crate::linalg::wdot(&self.w, u, v)
    }

    pub fn inner_form(&self, u: &[f64], v: &[f64]) -> f64 {
        crate::linalg::wdot(&self.form_w, u, v)
    }

    pub fn inner_tensor(&self, h: (&[f64], &[f64]), k: (&[f64], &[f64])) -> f64 {
        let n1 = self.n1();
        (0..self.cells())
            .map(|i| self.w[i] * (h.0[i] * k.0[i] + n1 * h.1[i] * k.1[i]))
            .sum()
    }

    // ----- first-order operators -------------------------------------------

    /// `du` for a function, as a radial 1-form on faces.
    pub fn grad(&self, u: &[f64]) -> Vec<f64> {
        let m = self.cells();
        let h = self.geom.h;
        let mut out = vec![0.0; m + 1];
        for k in 1..m {
            out[k] = (u[k] - u[k - 1]) / (h * self.lapse_face[k]);
        }
        out
    }

    /// Weighted divergence of a 1-form, the adjoint of [`Self::grad`].
    pub fn div_form(&self, form: &[f64]) -> Vec<f64> {
        let m = self.cells();
        let h = self.geom.h;
        let flux = |k: usize| {
            if k == 0 || k == m {
                0.0
            } else {
                self.form_w[k] * form[k] / (h * self.lapse_face[k])
            }
        };
        (0..m).map(|i| (flux(i) - flux(i + 1)) / self.w[i]).collect()
    }

    /// `sym(nabla w)` for a radial 1-form: components `(w_s, kappa w)`.
    pub fn gauge(&self, form: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.cells();
        let h = self.geom.h;
        let mut a = vec![0.0; m];
        let mut b = vec![0.0; m];
        for i in 0..m {
            let lo = if i == 0 { 0.0 } else { form[i] };
            let hi = if i + 1 == m { 0.0 } else { form[i + 1] };
            a[i] = (hi - lo) / (h * self.geom.lapse[i]);
            b[i] = self.beta_lo[i] * lo + self.beta_hi[i] * hi;
        }
        (a, b)
    }

    /// Weighted divergence `delta_f h`, the adjoint of [`Self::gauge`].
    pub fn div_tensor(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let m = self.cells();
        let h = self.geom.h;
        let n1 = self.n1();
        let mut out = vec![0.0; m + 1];
        for k in 1..m {
            let (l, r) = (k - 1, k);
            let s = self.w[l] * a[l] / (h * self.geom.lapse[l]) - self.w[r] * a[r] / (h * self.geom.lapse[r])
                + n1 * (self.w[l] * self.beta_hi[l] * b[l] + self.w[r] * self.beta_lo[r] * b[r]);
            out[k] = s / self.form_w[k];
        }
        out
    }

    /// Hessian of a function as `gauge(grad u)`.
    pub fn hessian(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.gauge(&self.grad(u))
    }

    /// Matrix of `delta_f gauge` on the interior faces `1..M` (row/column
    /// `k - 1` is face `k`), the operator inverted when removing gauge parts.
    pub fn gauge_normal_matrix(&self) -> BandMatrix {
        let m = self.cells();
        let mut out = BandMatrix::zeros(m - 1, 2, 2);
        let mut e = vec![0.0; m + 1];
        for k in 1..m {
            e[k] = 1.0;
            let (a, b) = self.gauge(&e);
            let col = self.div_tensor(&a, &b);
            for r in k.saturating_sub(2).max(1)..=(k + 2).min(m - 1) {
                out.set(r - 1, k - 1, col[r]);
            }
            e[k] = 0.0;
        }
        out
    }

    // ----- Laplacians -------------------------------------------------------

    /// Weighted energy matrix of functions, `u^T K u = int |du|^2 e^{-f} dV`.
    pub fn function_energy(&self) -> BandMatrix {
        let m = self.cells();
        let mut k = BandMatrix::zeros(m, 3, 3);
        for (face, row) in self.face_even.iter().enumerate() {
            let c = self.face_w[face];
            if c == 0.0 {
                continue;
            }
            for &(i, ci) in row {
                for &(j, cj) in row {
                    k.add(i, j, c * ci * cj);
                }
            }
        }
        k
    }

    /// `Delta_f u = -div(grad u) + <grad f, grad u>` (non-negative operator).
    pub fn laplacian_fn(&self, u: &[f64]) -> Vec<f64> {
        self.function_energy()
            .mul_vec(u)
            .into_iter()
            .zip(&self.fw)
            .map(|(k, w)| k / w)
            .collect()
    }

    /// Energy matrix of the compact Laplacian `div_form . grad`.
    pub fn compact_energy(&self) -> BandMatrix {
        let m = self.cells();
        let h = self.geom.h;
        let mut k = BandMatrix::zeros(m, 1, 1);
        for face in 1..m {
            let c = self.form_w[face] / (h * self.lapse_face[face]).powi(2);
            k.add(face - 1, face - 1, c);
            k.add(face, face, c);
            k.add(face - 1, face, -c);
            k.add(face, face - 1, -c);
        }
        k
    }

    /// Energy matrix of tensors in `(a_0..a_M, b_0..b_M)` ordering.
    pub fn tensor_energy_matrix(&self) -> DMatrix<f64> {
        let m = self.cells();
        let n1 = self.n1();
        let mut k = DMatrix::zeros(2 * m, 2 * m);
        for (face, row) in self.face_even.iter().enumerate() {
            let c = self.face_w[face];
            if c == 0.0 {
                continue;
            }
            for &(i, ci) in row {
                for &(j, cj) in row {
                    k[(i, j)] += c * ci * cj;
                    k[(m + i, m + j)] += n1 * c * ci * cj;
                }
            }
        }
        for i in 0..m {
            let z = self.w[i] * 2.0 * n1 * self.geom.kappa[i].powi(2);
            k[(i, i)] += z;
            k[(m + i, m + i)] += z;
            k[(i, m + i)] -= z;
            k[(m + i, i)] -= z;
        }
        k
    }

    pub fn tensor_energy(&self, a: &[f64], b: &[f64]) -> f64 {
        let fd: Vec<f64> = self
            .face_w
            .iter()
            .zip(&self.geom.face_weight)
            .map(|(fw, c)| if *c == 0.0 { 0.0 } else { fw / c })
            .collect();
        tensor_energy(&self.geom, a, b, &self.w, &fd)
    }

    /// Diagonal of the tensor Gram matrix in `(a, b)` ordering.
    pub fn tensor_gram(&self) -> Vec<f64> {
        let n1 = self.n1();
        self.w.iter().copied().chain(self.w.iter().map(|w| n1 * w)).collect()
    }

    /// Weighted rough Laplacian of an invariant tensor.
    pub fn laplacian_tensor(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.cells();
        let x: nalgebra::DVector<f64> =
            nalgebra::DVector::from_iterator(2 * m, a.iter().chain(b.iter()).copied());
        let y = self.tensor_energy_matrix() * x;
        let g = self.tensor_gram();
        let out: Vec<f64> = y.iter().zip(&g).map(|(y, g)| y / g).collect();
        (out[..m].to_vec(), out[m..].to_vec())
    }

    /// Curvature term `R h`.
    pub fn curvature_action(&self, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = &self.geom.curvature;
        (0..self.cells()).map(|i| c.curvature_action(i, a[i], b[i])).unzip()
    }

    pub fn ricci(&self) -> (Vec<f64>, Vec<f64>) {
        (self.geom.curvature.ric_rr.clone(), self.geom.curvature.ric_sph.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WarpedProfile;

    fn bumpy(m: usize) -> (WeightedCalculus, Vec<f64>) {
        let p = WarpedProfile::from_fn(3, m, std::f64::consts::PI, |r| r.sin() * (1.0 + 0.05 * (2.0 * r).cos()))
            .unwrap();
        let g = Geometry::new(&p).unwrap();
        let f: Vec<f64> = p.centres().iter().map(|r| 0.3 * r.cos().powi(2) + 0.1 * r.cos()).collect();
        (WeightedCalculus::new(g, &f), p.centres())
    }

    #[test]
    fn divergences_are_adjoint() {
        let (c, x) = bumpy(64);
        let a: Vec<f64> = x.iter().map(|r| (3.0 * r).cos()).collect();
        let b: Vec<f64> = x.iter().map(|r| r.cos().powi(2) - 0.2).collect();
        let h = std::f64::consts::PI / 64.0;
        let mut w: Vec<f64> = (0..=64).map(|k| (k as f64 * h).sin() * (1.0 + (k as f64 * h).cos())).collect();
        w[0] = 0.0;
        w[64] = 0.0;
        let u: Vec<f64> = x.iter().map(|r| (2.0 * r).cos() + r.cos()).collect();
        let lhs = c.inner_form(&c.div_tensor(&a, &b), &w);
        let (ga, gb) = c.gauge(&w);
        let rhs = c.inner_tensor((&a, &b), (&ga, &gb));
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        let lhs = c.inner_fn(&c.div_form(&w), &u);
        let rhs = c.inner_form(&w, &c.grad(&u));
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn tensor_laplacian_is_gram_symmetric() {
        let (c, x) = bumpy(48);
        let h: (Vec<f64>, Vec<f64>) = (x.iter().map(|r| r.cos()).collect(), x.iter().map(|r| (2.0 * r).cos()).collect());
        let k: (Vec<f64>, Vec<f64>) = (x.iter().map(|r| r.sin().powi(2)).collect(), x.iter().map(|r| 1.0 + r.cos()).collect());
        let lh = c.laplacian_tensor(&h.0, &h.1);
        let lk = c.laplacian_tensor(&k.0, &k.1);
        let l = c.inner_tensor((&lh.0, &lh.1), (&k.0, &k.1));
        let r = c.inner_tensor((&h.0, &h.1), (&lk.0, &lk.1));
        assert!((l - r).abs() < 1e-10 * l.abs());
        let e = c.inner_tensor((&lh.0, &lh.1), (&h.0, &h.1));
        assert!((e - c.tensor_energy(&h.0, &h.1)).abs() < 1e-10 * e.abs());
    }

    #[test]
    fn metric_is_divergence_free() {
        for n in [2, 3, 4] {
            let p = WarpedProfile::from_fn(n, 80, 3.0, |r| (r * std::f64::consts::PI / 3.0).sin() * 3.0 / std::f64::consts::PI * (1.0 + 0.1 * (r * 2.0 * std::f64::consts::PI / 3.0).cos().powi(2))).unwrap();
            let g = Geometry::new(&p).unwrap();
            let c = WeightedCalculus::new(g, &vec![0.7; 80]);
            let one = vec![1.0; 80];
            let d = c.div_tensor(&one, &one);
            assert!(d.iter().all(|v| v.abs() < 1e-9), "n={n}: {:?}", &d[..4]);
        }
    }

    #[test]
    fn gauge_of_gradient_is_hessian() {
        let p = WarpedProfile::unit_sphere(2, 200).unwrap();
        let g = Geometry::new(&p).unwrap();
        let c = WeightedCalculus::unweighted(g);
        let v: Vec<f64> = p.centres().iter().map(|r| r.cos()).collect();
        let (a, b) = c.hessian(&v);
        // Hess cos r = -cos r g on the unit sphere
        for i in 0..200 {
            assert!((a[i] + v[i]).abs() < 1e-3, "{i}: {} {}", a[i], v[i]);
            assert!((b[i] + v[i]).abs() < 1e-3, "{i}: {} {}", b[i], v[i]);
        }
        let (ha, hb) = c.geom.hessian(&v);
        for i in 0..200 {
            assert!((ha[i] + v[i]).abs() < 1e-8 && (hb[i] + v[i]).abs() < 1e-8);
        }
    }
}
