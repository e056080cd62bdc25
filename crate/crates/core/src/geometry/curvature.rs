use super::stencil::{self, Parity};
use super::{unit_sphere_volume, WarpedProfile};
use crate::error::Result;
use serde::{Deserialize, Serialize};

/// Curvature of a rotationally symmetric metric, per cell.
///
/// Ricci components are orthonormal-frame eigenvalues: `Ric = ric_rr ds^2 +
/// ric_sph phi^2 g_S`. Curvature follows `R_{X,Y}Z = nabla^2_{X,Y}Z -
/// nabla^2_{Y,X}Z`, so the round unit sphere has all sectional curvatures 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvaturePack {
    pub dim: usize,
    /// Sectional curvature of planes containing the radial direction.
    pub k_rad: Vec<f64>,
    /// Sectional curvature of planes tangent to the orbit spheres.
    pub k_sph: Vec<f64>,
    pub ric_rr: Vec<f64>,
    pub ric_sph: Vec<f64>,
    pub scal: Vec<f64>,
}

impl CurvaturePack {
    /// `(R h)_rr` and `(R h)_sph` for an invariant tensor with orthonormal
    /// components `(a, b)`, where `R h(X,Y) = sum_i h(R_{e_i,X} Y, e_i)`.
    pub fn curvature_action(&self, i: usize, a: f64, b: f64) -> (f64, f64) {
        let n = self.dim as f64;
        (
            (n - 1.0) * self.k_rad[i] * b,
            self.k_rad[i] * a + (n - 2.0) * self.k_sph[i] * b,
        )
    }

    pub fn sup_abs(&self) -> f64 {
        self.k_rad
            .iter()
            .chain(&self.k_sph)
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Everything the solvers need from a profile: curvature, volume weights,
/// face coefficients of the Dirichlet energy and frame quantities.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub dim: usize,
    pub cells: usize,
    /// Coordinate spacing.
    pub h: f64,
    pub phi: Vec<f64>,
    pub lapse: Vec<f64>,
    /// `d phi / ds`.
    pub phi_s: Vec<f64>,
    /// `phi_s / phi`, the mean-curvature factor of the orbit spheres.
    pub kappa: Vec<f64>,
    pub curvature: CurvaturePack,
    /// Volume weights: `sum_i mass_i u_i` approximates `int u dV`.
    pub mass: Vec<f64>,
    /// `int dV` over each cell, to `O(h^5)`. The flux balances of the
    /// staggered tensor calculus are written against these.
    pub cell_volume: Vec<f64>,
    /// Energy weights on the `M + 1` faces: `sum_k face_weight_k (D u)_k^2`
    /// approximates `int |du|^2 dV`, with `D` the face derivative in `x`.
    pub face_weight: Vec<f64>,
}

impl Geometry {
    pub fn new(profile: &WarpedProfile) -> Result<Self> {
        let n = profile.dim();
        let m = profile.cells();
        let h = profile.spacing();
        let phi = profile.phi().to_vec();
        let lapse = profile.lapse().to_vec();
        let omega = unit_sphere_volume(n - 1);
        let nm1 = (n - 1) as i32;

        // (1 - phi_s^2) / phi^2 divides the error of phi_x by h^2 at the poles
        let phi_x = stencil::d1_6(&phi, Parity::Odd, h);
        let phi_xx = stencil::d2(&phi, Parity::Odd, h);
        let lapse_x = stencil::d1(&lapse, Parity::Even, h);

        let mut phi_s = vec![0.0; m];
        let mut kappa = vec![0.0; m];
        let mut k_rad = vec![0.0; m];
        let mut k_sph = vec![0.0; m];
        for i in 0..m {
            let q = lapse[i];
            phi_s[i] = phi_x[i] / q;
            let phi_ss = phi_xx[i] / (q * q) - phi_x[i] * lapse_x[i] / (q * q * q);
            kappa[i] = phi_s[i] / phi[i];
            k_rad[i] = -phi_ss / phi[i];
            k_sph[i] = (1.0 - phi_s[i] * phi_s[i]) / (phi[i] * phi[i]);
        }
        let nf = n as f64;
        let ric_rr: Vec<f64> = k_rad.iter().map(|k| (nf - 1.0) * k).collect();
        let ric_sph: Vec<f64> = k_rad
            .iter()
            .zip(&k_sph)
            .map(|(kr, ks)| kr + (nf - 2.0) * ks)
            .collect();
        let scal = k_rad
            .iter()
            .zip(&k_sph)
            .map(|(kr, ks)| 2.0 * (nf - 1.0) * kr + (nf - 1.0) * (nf - 2.0) * ks)
            .collect();

        // midpoint weights of rho = q phi^{n-1}; by Euler-Maclaurin the only
        // h^2 term is h^2/24 [(rho u)']_0^L, which survives only for n = 2
        let rho: Vec<f64> = lapse.iter().zip(&phi).map(|(q, p)| q * p.powi(nm1)).collect();
        let mut mass: Vec<f64> = rho.iter().map(|r| omega * h * r).collect();
        let rho_parity = if (n - 1) % 2 == 0 { Parity::Even } else { Parity::Odd };
        let rho_xx = stencil::d2(&rho, rho_parity, h);
        let cell_volume = rho.iter().zip(&rho_xx).map(|(r, rxx)| omega * h * (r + h * h / 24.0 * rxx)).collect();
        if n == 2 {
            let slope = stencil::face_diffs(&rho, Parity::Odd, h);
            mass[0] -= omega * h * h / 24.0 * slope[0].abs();
            mass[m - 1] -= omega * h * h / 24.0 * slope[m].abs();
        }

        let phi_face = stencil::face_values(&phi, Parity::Odd);
        let lapse_face = stencil::face_values(&lapse, Parity::Even);
        let face_weight = phi_face
            .iter()
            .zip(&lapse_face)
            .map(|(p, q)| omega * h * p.abs().powi(nm1) / q)
            .collect();

        Ok(Self {
            dim: n,
            cells: m,
            h,
            phi,
            lapse,
            phi_s,
            kappa,
            curvature: CurvaturePack { dim: n, k_rad, k_sph, ric_rr, ric_sph, scal },
            mass,
            cell_volume,
            face_weight,
        })
    }

    pub fn volume(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn scal(&self) -> &[f64] {
        &self.curvature.scal
    }

    /// Derivative `du/ds` at cell centres of an even field.
    pub fn ds(&self, u: &[f64]) -> Vec<f64> {
        stencil::d1(u, Parity::Even, self.h)
            .into_iter()
            .zip(&self.lapse)
            .map(|(d, q)| d / q)
            .collect()
    }

    /// Hessian components `(u_ss, kappa u_s)` of an even function.
    pub fn hessian(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h = self.h;
        let ux = stencil::d1(u, Parity::Even, h);
        let uxx = stencil::d2(u, Parity::Even, h);
        let qx = stencil::d1(&self.lapse, Parity::Even, h);
        let mut rr = vec![0.0; self.cells];
        let mut sph = vec![0.0; self.cells];
        for i in 0..self.cells {
            let q = self.lapse[i];
            rr[i] = uxx[i] / (q * q) - ux[i] * qx[i] / (q * q * q);
            sph[i] = self.kappa[i] * ux[i] / q;
        }
        (rr, sph)
    }
}

/// Curvature fields of a profile.
pub fn curvature(profile: &WarpedProfile) -> Result<CurvaturePack> {
    Ok(Geometry::new(profile)?.curvature)
}
