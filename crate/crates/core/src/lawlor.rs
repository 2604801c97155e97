//! Lawlor necks: the special Lagrangian `S^{m-1} x R -> C^m` asymptotic to a
//! pair of planes whose characterizing angles sum to pi.
//!
//! With `p(x) = prod(1 + a_j x^2)` the neck is built from
//! `P(x) = (p(x) - 1) / x^2`, a polynomial with `P(0) = sum(a_j)`, which is
//! evaluated through elementary symmetric sums to avoid cancellation.

use crate::ambient::{CMat, CVec, FrameData, C64};
use crate::error::{GlueError, Result};
use crate::quadrature::integrate;
use std::f64::consts::{FRAC_PI_2, PI};

pub const PROFILE_FORMAT: &str = "lawlor-profile/1";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LawlorParams {
    pub a: Vec<f64>,
}

impl LawlorParams {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if a.len() < 3 {
            return Err(GlueError::Invalid("Lawlor necks need m >= 3".into()));
        }
        if a.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(GlueError::Invalid(format!("Lawlor parameters must be positive: {a:?}")));
        }
        Ok(LawlorParams { a })
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    /// `e_1, ..., e_m` of the parameters.
    pub fn elementary(&self) -> Vec<f64> {
        let m = self.m();
        let mut e = vec![0.0; m + 1];
        e[0] = 1.0;
        for &aj in &self.a {
            for k in (1..=m).rev() {
                e[k] += aj * e[k - 1];
            }
        }
        e[1..].to_vec()
    }

    /// `P(x) = sum_k e_k x^{2(k-1)}`.
    pub fn big_p(&self, x: f64) -> f64 {
        let e = self.elementary();
        let x2 = x * x;
        e.iter().rev().fold(0.0, |acc, &ek| acc * x2 + ek)
    }

    /// `psi_j'(y) = a_j / ((1 + a_j y^2) sqrt(P(y)))`.
    pub fn dpsi(&self, j: usize, y: f64) -> f64 {
        let aj = self.a[j];
        aj / ((1.0 + aj * y * y) * self.big_p(y).sqrt())
    }

    /// `int_Y^inf P^{-1/2}` by its two-term expansion in `1/Y`.
    pub fn q_tail(&self, y: f64) -> f64 {
        let m = self.m() as f64;
        let em = self.a.iter().product::<f64>();
        let inv_sum: f64 = self.a.iter().map(|a| 1.0 / a).sum();
        (y.powf(2.0 - m) / (m - 2.0) - 0.5 * inv_sum * y.powf(-m) / m) / em.sqrt()
    }

    /// Tail `a_j int_Y^inf` by its two-term expansion in `1/Y`.
    pub fn tail(&self, j: usize, y: f64) -> f64 {
        let m = self.m() as f64;
        let em = self.a.iter().product::<f64>();
        let inv_sum: f64 = self.a.iter().map(|a| 1.0 / a).sum();
        let c = 1.0 / self.a[j] + 0.5 * inv_sum;
        (y.powf(-m) / m - c * y.powf(-m - 2.0) / (m + 2.0)) / em.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AngleData {
    pub phi: Vec<f64>,
    #[serde(rename = "A")]
    pub area: f64,
}

impl AngleData {
    pub fn sum_defect(&self) -> f64 {
        self.phi.iter().sum::<f64>() - PI
    }
}

const PANEL_BUDGET: usize = 4000;

/// `phi_j = 2 a_j int_0^inf dx / ((1 + a_j x^2) sqrt P)` and
/// `A = int_0^inf dx / sqrt P`, both after `x = tan u`.
pub fn angles_from_params(params: &LawlorParams, tol: f64) -> Result<AngleData> {
    if !(tol >= 1e-14) {
        return Err(GlueError::Invalid(format!("tolerance {tol} below 1e-14")));
    }
    let qt = 0.1 * tol;
    let mut phi = Vec::with_capacity(params.m());
    for &aj in &params.a {
        let g = |u: f64| {
            let (s, c) = u.sin_cos();
            2.0 * aj / ((c * c + aj * s * s) * params.big_p(s / c).sqrt())
        };
        phi.push(integrate(g, 0.0, FRAC_PI_2, qt, qt, PANEL_BUDGET)?.value);
    }
    let h = |u: f64| {
        let c = u.cos();
        1.0 / (c * c * params.big_p(u.tan()).sqrt())
    };
    let area = integrate(h, 0.0, FRAC_PI_2, qt, qt, PANEL_BUDGET)?.value;
    Ok(AngleData { phi, area })
}

/// Newton on `b = log a` for `(phi_1, ..., phi_{m-1}, log A)`; the last
/// angle is dependent.
pub fn params_from_angles(target: &AngleData, tol: f64) -> Result<LawlorParams> {
    let m = target.phi.len();
    if m < 3 {
        return Err(GlueError::Invalid("Lawlor necks need m >= 3".into()));
    }
    if target.sum_defect().abs() > 1e-9 || target.phi.iter().any(|&p| !(p > 0.0 && p < PI)) {
        return Err(GlueError::AngleConditionViolated(target.phi.iter().sum()));
    }
    if !(target.area > 0.0) {
        return Err(GlueError::Invalid("A must be positive".into()));
    }
    let qtol = (tol * 1e-3).max(1e-14);
    let eval = |b: &[f64]| -> Result<Vec<f64>> {
        let p = LawlorParams::new(b.iter().map(|x| x.exp()).collect())?;
        let ad = angles_from_params(&p, qtol)?;
        let mut r: Vec<f64> = (0..m - 1).map(|j| ad.phi[j] - target.phi[j]).collect();
        r.push(ad.area.ln() - target.area.ln());
        Ok(r)
    };
    let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>().sqrt();
    // symmetric start, scaled so that A matches (A(k a) = A(a)/k)
    let a1 = angles_from_params(&LawlorParams::new(vec![1.0; m])?, qtol)?;
    let mut b = vec![(a1.area / target.area).ln(); m];
    let mut r = eval(&b)?;
    let mut best = (norm(&r), b.clone());
    for it in 0..50 {
        if best.0 < tol {
            break;
        }
        let h = 1e-5;
        let mut jac = nalgebra::DMatrix::<f64>::zeros(m, m);
        for k in 0..m {
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp[k] += h;
            bm[k] -= h;
            let (rp, rm) = (eval(&bp)?, eval(&bm)?);
            for i in 0..m {
                jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rhs = nalgebra::DVector::from_vec(r.iter().map(|x| -x).collect());
        let step = jac.lu().solve(&rhs).ok_or_else(|| GlueError::InversionFailure {
            iterations: it,
            residual: best.0,
            best_a: best.1.iter().map(|x| x.exp()).collect(),
        })?;
        let mut lam = 1.0;
        let cur = norm(&r);
        loop {
            let trial: Vec<f64> = b.iter().zip(step.iter()).map(|(x, d)| x + lam * d).collect();
            let rt = eval(&trial)?;
            if norm(&rt) < cur || lam < 1e-4 {
                b = trial;
                r = rt;
                break;
            }
            lam *= 0.5;
        }
        if norm(&r) < best.0 {
            best = (norm(&r), b.clone());
        }
    }
    if best.0 < tol {
        LawlorParams::new(best.1.iter().map(|x| x.exp()).collect())
    } else {
        Err(GlueError::InversionFailure {
            iterations: 50,
            residual: best.0,
            best_a: best.1.iter().map(|x| x.exp()).collect(),
        })
    }
}

/// Tabulated `psi_j` on a symmetric sinh-spaced grid, with exact slopes and
/// asymptotic tails.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NeckProfile {
    pub format: String,
    pub params: LawlorParams,
    pub y_grid: Vec<f64>,
    /// `psi_values[j][i] = psi_j(y_grid[i])`.
    pub psi_values: Vec<Vec<f64>>,
    /// `Q(y) = int_{-inf}^y P^{-1/2}` on the grid; `Q(0) = A`.
    pub q_values: Vec<f64>,
    pub angle_data: AngleData,
}

/// Cumulative quadrature for `psi_j` on `n` nodes in `[-y_max, y_max]`.
pub fn psi_profile(params: &LawlorParams, y_max: f64, n: usize) -> Result<NeckProfile> {
    if !(y_max > 0.0) || n < 64 {
        return Err(GlueError::Invalid(format!("need y_max > 0 and n >= 64, got {y_max}, {n}")));
    }
    let angle_data = angles_from_params(params, 1e-13)?;
    let m = params.m();
    // odd n keeps y = 0 on the grid
    let n = if n % 2 == 0 { n + 1 } else { n };
    let half = n / 2;
    let c = 1.0 / params.a.iter().cloned().fold(0.0, f64::max).sqrt();
    let lmax = (y_max / c).asinh();
    let y_grid: Vec<f64> = (0..n)
        .map(|i| {
            if i == half {
                0.0
            } else {
                c * (lmax * (i as f64 - half as f64) / half as f64).sinh()
            }
        })
        .collect();
    let mut psi_values = vec![vec![0.0; n]; m];
    for j in 0..m {
        let f = |x: f64| params.dpsi(j, x);
        psi_values[j][half] = 0.5 * angle_data.phi[j];
        for i in half + 1..n {
            let seg = integrate(f, y_grid[i - 1], y_grid[i], 1e-16, 1e-14, PANEL_BUDGET)?.value;
            psi_values[j][i] = psi_values[j][i - 1] + seg;
        }
        for i in (0..half).rev() {
            let seg = integrate(f, y_grid[i], y_grid[i + 1], 1e-16, 1e-14, PANEL_BUDGET)?.value;
            psi_values[j][i] = psi_values[j][i + 1] - seg;
        }
    }
    let mut q_values = vec![0.0; n];
    let fq = |x: f64| 1.0 / params.big_p(x).sqrt();
    q_values[half] = angle_data.area;
    for i in half + 1..n {
        q_values[i] = q_values[i - 1] + integrate(fq, y_grid[i - 1], y_grid[i], 1e-16, 1e-14, PANEL_BUDGET)?.value;
    }
    for i in (0..half).rev() {
        q_values[i] = q_values[i + 1] - integrate(fq, y_grid[i], y_grid[i + 1], 1e-16, 1e-14, PANEL_BUDGET)?.value;
    }
    Ok(NeckProfile {
        format: PROFILE_FORMAT.into(),
        params: params.clone(),
        y_grid,
        psi_values,
        q_values,
        angle_data,
    })
}

impl NeckProfile {
    pub fn m(&self) -> usize {
        self.params.m()
    }

    pub fn y_max(&self) -> f64 {
        *self.y_grid.last().unwrap()
    }

    pub fn phi(&self) -> &[f64] {
        &self.angle_data.phi
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("profile serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: NeckProfile =
            serde_json::from_str(s).map_err(|e| GlueError::Invalid(format!("profile cache: {e}")))?;
        if p.format != PROFILE_FORMAT {
            return Err(GlueError::Invalid(format!("unknown profile format {}", p.format)));
        }
        Ok(p)
    }

    /// `psi_j(y)`: monotone cubic Hermite inside the grid, tails outside.
    pub fn psi(&self, j: usize, y: f64) -> f64 {
        let ym = self.y_max();
        if y <= -ym {
            return self.params.tail(j, -y);
        }
        if y >= ym {
            return self.angle_data.phi[j] - self.params.tail(j, y);
        }
        self.hermite(&self.psi_values[j], |x| self.params.dpsi(j, x), y)
    }

    /// `Q(y) = int_{-inf}^y P^{-1/2}`, same interpolation scheme as `psi`.
    pub fn q(&self, y: f64) -> f64 {
        let ym = self.y_max();
        if y <= -ym {
            return self.params.q_tail(-y);
        }
        if y >= ym {
            return 2.0 * self.angle_data.area - self.params.q_tail(y);
        }
        self.hermite(&self.q_values, |x| 1.0 / self.params.big_p(x).sqrt(), y)
    }

    fn hermite<D: Fn(f64) -> f64>(&self, values: &[f64], slope: D, y: f64) -> f64 {
        let g = &self.y_grid;
        let i = match g.binary_search_by(|v| v.partial_cmp(&y).unwrap()) {
            Ok(i) => return values[i],
            Err(i) => i - 1,
        };
        let (y0, y1) = (g[i], g[i + 1]);
        let (p0, p1) = (values[i], values[i + 1]);
        let h = y1 - y0;
        let delta = (p1 - p0) / h;
        let mut d0 = slope(y0);
        let mut d1 = slope(y1);
        // Fritsch-Carlson limiter
        if delta > 0.0 {
            let (al, be) = (d0 / delta, d1 / delta);
            let s = al * al + be * be;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                d0 = tau * al * delta;
                d1 = tau * be * delta;
            }
        }
        let s = (y - y0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * p0
            + (s3 - 2.0 * s2 + s) * h * d0
            + (-2.0 * s3 + 3.0 * s2) * p1
            + (s3 - s2) * h * d1
    }

    pub fn dpsi(&self, j: usize, y: f64) -> f64 {
        self.params.dpsi(j, y)
    }

    /// `z_j(y) = e^{i psi_j} sqrt(1/a_j + y^2)` and its derivative.
    pub fn z(&self, j: usize, y: f64) -> (C64, C64) {
        let aj = self.params.a[j];
        let rho = (1.0 / aj + y * y).sqrt();
        let e = C64::from_polar(1.0, self.psi(j, y));
        let d = C64::new(y / rho, self.dpsi(j, y) * rho);
        (e * rho, e * d)
    }
}

/// Orthonormal basis of the tangent space of `S^{m-1}` at `x`, oriented so
/// that `det[e_1, ..., e_{m-1}, x] = +1`.
pub fn sphere_tangent_basis(x: &[f64]) -> Vec<Vec<f64>> {
    let m = x.len();
    let mut basis: Vec<Vec<f64>> = vec![x.to_vec()];
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| x[i].abs().partial_cmp(&x[j].abs()).unwrap());
    for &k in &order {
        if basis.len() == m {
            break;
        }
        let mut v = vec![0.0; m];
        v[k] = 1.0;
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(p, q)| p * q).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= d * bi;
            }
        }
        let n = v.iter().map(|p| p * p).sum::<f64>().sqrt();
        if n > 1e-8 {
            basis.push(v.iter().map(|p| p / n).collect());
        }
    }
    let mut tangent: Vec<Vec<f64>> = basis[1..].to_vec();
    let mut mat = nalgebra::DMatrix::<f64>::zeros(m, m);
    for (c, v) in tangent.iter().chain(std::iter::once(&x.to_vec())).enumerate() {
        for r in 0..m {
            mat[(r, c)] = v[r];
        }
    }
    if mat.determinant() < 0.0 {
        for v in tangent[0].iter_mut() {
            *v = -*v;
        }
    }
    tangent
}

/// `t N(x, y)` with Jacobian columns `(t N_* e_1, ..., t N_* e_{m-1}, t N_y)`
/// for the given tangent basis of the sphere at `x`.
pub fn neck_eval_basis(profile: &NeckProfile, x: &[f64], basis: &[Vec<f64>], y: f64, t: f64) -> FrameData {
    let m = profile.m();
    let zs: Vec<(C64, C64)> = (0..m).map(|j| profile.z(j, y)).collect();
    let point = CVec::from_fn(m, |j, _| zs[j].0 * x[j]);
    let mut jac = CMat::zeros(m, m);
    for (k, e) in basis.iter().enumerate() {
        for j in 0..m {
            jac[(j, k)] = zs[j].0 * e[j];
        }
    }
    for j in 0..m {
        jac[(j, m - 1)] = zs[j].1 * x[j];
    }
    let tc = C64::new(t, 0.0);
    FrameData::new(point.map(|z| z * tc), jac.map(|z| z * tc))
}

pub fn neck_eval(profile: &NeckProfile, x: &[f64], y: f64, t: f64) -> Result<FrameData> {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if x.len() != profile.m() || (n - 1.0).abs() > 1e-12 {
        return Err(GlueError::Invalid("x must be a unit vector in R^m".into()));
    }
    Ok(neck_eval_basis(profile, x, &sphere_tangent_basis(x), y, t))
}
