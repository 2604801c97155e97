//! Complex-linear algebra on C^m and the pointwise functionals of an
//! immersion: induced metric, symplectic defect, Lagrangian angle and the
//! translator residual.
//!
//! Conventions: `<u, v> = Re sum u_j conj(v_j)`, `J` is multiplication by
//! `i`, `omega0(u, v) = <Ju, v> = Im sum conj(u_j) v_j`, and the holomorphic
//! volume form is `dz_1 ^ ... ^ dz_m`, so `F*Omega = det_C(DF) dx`.

use crate::error::{GlueError, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use std::f64::consts::PI;

pub type C64 = Complex64;
pub type CVec = DVector<C64>;
pub type CMat = DMatrix<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Default Lagrangian tolerance separating exact from approximate reports.
pub const LAGRANGIAN_TOL: f64 = 1e-6;

pub fn real_inner(u: &CVec, v: &CVec) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
}

pub fn omega0(u: &CVec, v: &CVec) -> f64 {
    u.iter().zip(v.iter()).map(|(a, b)| a.re * b.im - a.im * b.re).sum()
}

/// Flat ambient data: translation direction `T` and reference phase.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KahlerBackground {
    pub m: usize,
    pub t: Vec<C64>,
    pub phase_ref: f64,
}

impl KahlerBackground {
    /// `T = -e_m`, phase 0.
    pub fn standard(m: usize) -> Self {
        let mut t = vec![C64::new(0.0, 0.0); m];
        t[m - 1] = C64::new(-1.0, 0.0);
        KahlerBackground { m, t, phase_ref: 0.0 }
    }

    pub fn new(t: Vec<C64>, phase_ref: f64) -> Result<Self> {
        let norm: f64 = t.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || t.len() < 2 {
            return Err(GlueError::Invalid("T must be nonzero with m >= 2".into()));
        }
        Ok(KahlerBackground { m: t.len(), t, phase_ref })
    }

    fn t_vec(&self) -> CVec {
        CVec::from_vec(self.t.clone())
    }

    /// f(z) = 2 <z, T>.
    pub fn f(&self, z: &CVec) -> f64 {
        2.0 * real_inner(z, &self.t_vec())
    }

    /// <z, JT>.
    pub fn kappa(&self, z: &CVec) -> f64 {
        real_inner(z, &self.t_vec().map(|c| I * c))
    }

    /// Coefficient of Omega_f against Omega at z.
    pub fn omega_f_factor(&self, z: &CVec) -> C64 {
        (C64::new(-0.5 * self.f(z), -self.kappa(z))).exp()
    }
}

/// Point, first derivatives (columns) and optional second derivatives of an
/// immersion at one parameter value.
#[derive(Debug, Clone)]
pub struct FrameData {
    pub point: CVec,
    pub jacobian: CMat,
    /// `hessian[i * m + j] = d_i d_j F`.
    pub hessian: Option<Vec<CVec>>,
}

impl FrameData {
    pub fn new(point: CVec, jacobian: CMat) -> Self {
        FrameData { point, jacobian, hessian: None }
    }

    pub fn dim(&self) -> usize {
        self.jacobian.ncols()
    }

    pub fn column(&self, i: usize) -> CVec {
        self.jacobian.column(i).into_owned()
    }
}

/// Angles and residual of a frame.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AngleReport {
    pub theta_l: f64,
    pub theta_f: f64,
    pub residual: f64,
    pub defect: f64,
    pub det_ratio: f64,
    /// True when the defect exceeded the Lagrangian tolerance.
    pub approximate: bool,
}

pub fn gram(jac: &CMat) -> DMatrix<f64> {
    let m = jac.ncols();
    DMatrix::from_fn(m, m, |i, j| {
        jac.column(i).iter().zip(jac.column(j).iter()).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
    })
}

pub fn symplectic_defect(jac: &CMat) -> f64 {
    let m = jac.ncols();
    let mut d: f64 = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let w: f64 = jac
                .column(i)
                .iter()
                .zip(jac.column(j).iter())
                .map(|(a, b)| a.re * b.im - a.im * b.re)
                .sum();
            d = d.max(w.abs());
        }
    }
    d
}

/// Induced metric `Re<d_iF, d_jF>` and the largest symplectic pairing.
pub fn induced_metric_and_defect(frame: &FrameData) -> Result<(DMatrix<f64>, f64)> {
    let g = gram(&frame.jacobian);
    let scale = g.diagonal().max().max(f64::MIN_POSITIVE);
    match g.clone().cholesky() {
        Some(ch) => {
            let dmin = ch.l().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
            if dmin * dmin < 1e-28 * scale {
                return Err(GlueError::DegenerateFrame("metric is singular".into()));
            }
        }
        None => return Err(GlueError::DegenerateFrame("metric is not positive definite".into())),
    }
    Ok((g, symplectic_defect(&frame.jacobian)))
}

fn wrap_pi(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Lagrangian angle, translator angle and residual of a frame.
pub fn lagrangian_angles(frame: &FrameData, bg: &KahlerBackground) -> Result<AngleReport> {
    lagrangian_angles_tol(frame, bg, LAGRANGIAN_TOL)
}

pub fn lagrangian_angles_tol(
    frame: &FrameData,
    bg: &KahlerBackground,
    tol: f64,
) -> Result<AngleReport> {
    let (g, defect) = induced_metric_and_defect(frame)?;
    let det = frame.jacobian.clone().determinant();
    if det.norm() == 0.0 {
        return Err(GlueError::DegenerateFrame("complex determinant vanishes".into()));
    }
    let sqrt_g = g.determinant().sqrt();
    let kappa = bg.kappa(&frame.point);
    let f = bg.f(&frame.point);
    let theta_l = det.arg();
    let rotated = det * C64::from_polar(1.0, -kappa - bg.phase_ref);
    Ok(AngleReport {
        theta_l,
        theta_f: wrap_pi(theta_l - kappa),
        residual: (-0.5 * f).exp() * rotated.im / sqrt_g,
        defect,
        det_ratio: det.norm() / sqrt_g,
        approximate: defect > tol,
    })
}

/// Translator residual `*F*Im(e^{-i theta0} Omega_f)`; for Lagrangian frames
/// this is `e^{-f/2} sin(theta_f - theta0)`.
pub fn residual(frame: &FrameData, bg: &KahlerBackground) -> Result<f64> {
    Ok(lagrangian_angles_tol(frame, bg, f64::INFINITY)?.residual)
}

/// Directional derivative of the residual when the point moves by `dp` and
/// the frame by `dv`.
pub fn residual_directional(
    frame: &FrameData,
    bg: &KahlerBackground,
    dp: &CVec,
    dv: &CMat,
) -> Result<f64> {
    let v = &frame.jacobian;
    let g = gram(v);
    let ginv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| GlueError::DegenerateFrame("singular metric".into()))?;
    let vinv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| GlueError::DegenerateFrame("singular complex frame".into()))?;
    let d = v.clone().determinant();
    let s = g.determinant().sqrt();
    let kappa = bg.kappa(&frame.point);
    let f = bg.f(&frame.point);
    let e = (-0.5 * f).exp();
    let rot = C64::from_polar(1.0, -kappa - bg.phase_ref);
    let theta = e * (rot * d).im / s;
    let dd = d * (&vinv * dv).trace();
    let vh_dv = v.adjoint() * dv;
    let mut ds_over_s = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            ds_over_s += ginv[(i, j)] * vh_dv[(j, i)].re;
        }
    }
    let df = bg.f(dp);
    let dk = bg.kappa(dp);
    Ok(-0.5 * theta * df - e * (rot * d).re / s * dk + e * (rot * dd).im / s - theta * ds_over_s)
}

/// Residual with the volume element held fixed at `vol`:
/// `e^{-f/2} Im(e^{-i kappa - i theta0} det DF) / vol`. Used for perturbed
/// frames, where the Hodge star stays that of the unperturbed metric.
pub fn residual_fixed_volume(frame: &FrameData, bg: &KahlerBackground, vol: f64) -> f64 {
    let d = frame.jacobian.clone().determinant();
    let rot = C64::from_polar(1.0, -bg.kappa(&frame.point) - bg.phase_ref);
    (-0.5 * bg.f(&frame.point)).exp() * (rot * d).im / vol
}

/// Directional derivative of [`residual_fixed_volume`].
pub fn residual_fixed_volume_directional(
    frame: &FrameData,
    bg: &KahlerBackground,
    vol: f64,
    dp: &CVec,
    dv: &CMat,
) -> Result<f64> {
    let v = &frame.jacobian;
    let vinv = v
        .clone()
        .try_inverse()
        .ok_or_else(|| GlueError::DegenerateFrame("singular complex frame".into()))?;
    let d = v.clone().determinant();
    let e = (-0.5 * bg.f(&frame.point)).exp();
    let rot = C64::from_polar(1.0, -bg.kappa(&frame.point) - bg.phase_ref);
    let dd = d * (&vinv * dv).trace();
    let theta = e * (rot * d).im / vol;
    Ok(-0.5 * theta * bg.f(dp) - e * (rot * d).re / vol * bg.kappa(dp) + e * (rot * dd).im / vol)
}

/// Continuous unwrapping of a sequence of angles sampled along a path.
pub fn unwrap_angles(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    let mut shift = 0.0;
    for (k, &a) in raw.iter().enumerate() {
        if k > 0 {
            let prev = raw[k - 1];
            let d = a - prev;
            if d > PI {
                shift -= 2.0 * PI;
            } else if d < -PI {
                shift += 2.0 * PI;
            }
        }
        out.push(a + shift);
    }
    out
}

/// Orthonormalize the columns of a frame with respect to the real inner
/// product (modified Gram-Schmidt).
pub fn real_orthonormalize(frame: &CMat) -> Result<CMat> {
    let m = frame.ncols();
    let mut q = frame.clone();
    for j in 0..m {
        for k in 0..j {
            let qk = q.column(k).into_owned();
            let c = real_inner(&q.column(j).into_owned(), &qk);
            let mut col = q.column_mut(j);
            col -= qk * C64::new(c, 0.0);
        }
        let n = real_inner(&q.column(j).into_owned(), &q.column(j).into_owned()).sqrt();
        if n < 1e-300 {
            return Err(GlueError::DegenerateFrame("rank-deficient plane".into()));
        }
        let mut col = q.column_mut(j);
        col /= C64::new(n, 0.0);
    }
    Ok(q)
}

fn plane_defect(plane: &CMat) -> f64 {
    let m = plane.ncols();
    let mut scale: f64 = 0.0;
    for j in 0..m {
        scale = scale.max(plane.column(j).norm_squared());
    }
    symplectic_defect(plane) / scale.max(f64::MIN_POSITIVE)
}

/// Characterizing angles of an ordered pair of Lagrangian planes: the sorted
/// `(phi_1, ..., phi_m)` in `[0, pi)` such that a unitary map sends
/// `plane_a` to `R^m` and `plane_b` to `diag(e^{i phi}) R^m`.
///
/// Swapping the arguments maps each nonzero angle `phi` to `pi - phi`.
pub fn principal_angles(plane_a: &CMat, plane_b: &CMat) -> Result<Vec<f64>> {
    for p in [plane_a, plane_b] {
        let d = plane_defect(p);
        if d > LAGRANGIAN_TOL {
            return Err(GlueError::NotLagrangian(d));
        }
    }
    let a = real_orthonormalize(plane_a)?;
    let b = real_orthonormalize(plane_b)?;
    let mm = a.adjoint() * b;
    let w = &mm * mm.transpose();
    let m = w.nrows();
    let x = w.map(|c| c.re);
    let y = w.map(|c| c.im);
    let x = (&x + x.transpose()) * 0.5;
    let y = (&y + y.transpose()) * 0.5;
    // X and Y commute for a symmetric unitary W; a generic combination
    // diagonalizes both. Retry with another mix if the eigenvectors do not.
    for mix in [std::f64::consts::SQRT_2, 0.577_215_664_901_532_9, -1.913_538_8, 3.141_592_6] {
        let eig = SymmetricEigen::new(&x + &y * mix);
        let q = eig.eigenvectors;
        let mut angles = Vec::with_capacity(m);
        let mut worst: f64 = 0.0;
        for k in 0..m {
            let v = q.column(k).into_owned();
            let xv = &x * &v;
            let yv = &y * &v;
            let re = v.dot(&xv);
            let im = v.dot(&yv);
            worst = worst.max((xv - &v * re).norm()).max((yv - &v * im).norm());
            let mut phi = 0.5 * im.atan2(re);
            if phi < 0.0 {
                phi += PI;
            }
            if phi >= PI - 1e-15 {
                phi = 0.0;
            }
            angles.push(phi);
        }
        if worst < 1e-9 {
            angles.sort_by(|p, q| p.partial_cmp(q).unwrap());
            return Ok(angles);
        }
    }
    Err(GlueError::DegenerateFrame("could not diagonalize the angle matrix".into()))
}

/// The plane `diag(e^{i phi}) R^m` as a frame.
pub fn rotated_plane(phi: &[f64]) -> CMat {
    let m = phi.len();
    CMat::from_fn(m, m, |i, j| if i == j { C64::from_polar(1.0, phi[i]) } else { C64::new(0.0, 0.0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_unitary(seed: &[f64], m: usize) -> CMat {
        let z = CMat::from_fn(m, m, |i, j| {
            let k = (i * m + j) % seed.len();
            C64::new(seed[k] + (i as f64) * 0.3, seed[(k + 1) % seed.len()] - (j as f64) * 0.2)
        });
        // complex Gram-Schmidt
        let mut q = z.clone();
        for j in 0..m {
            for k in 0..j {
                let qk = q.column(k).into_owned();
                let c = qk.dotc(&q.column(j).into_owned());
                let mut col = q.column_mut(j);
                col -= qk * c;
            }
            let n = q.column(j).norm();
            let mut col = q.column_mut(j);
            col /= C64::new(n, 0.0);
        }
        q
    }

    fn random_orthogonal(seed: &[f64], m: usize) -> DMatrix<f64> {
        let z = DMatrix::from_fn(m, m, |i, j| seed[(i * m + j) % seed.len()] + 0.1 * (i as f64) - 0.37 * (j as f64));
        z.qr().q()
    }

    #[test]
    fn flat_plane_metric_is_identity() {
        let fr = FrameData::new(CVec::zeros(3), CMat::identity(3, 3));
        let (g, d) = induced_metric_and_defect(&fr).unwrap();
        assert!((g - DMatrix::identity(3, 3)).norm() < 1e-15);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn diagonal_frame_angle_is_the_sum() {
        let phi = [0.3, 0.5, 1.1];
        let fr = FrameData::new(CVec::zeros(3), rotated_plane(&phi));
        let rep = lagrangian_angles(&fr, &KahlerBackground::standard(3)).unwrap();
        assert!((rep.theta_l - 1.9).abs() < 1e-14);
        assert!((rep.det_ratio - 1.0).abs() < 1e-14);
        assert!((rep.residual - 1.9f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_frame_is_rejected() {
        let mut j = CMat::identity(2, 2);
        j[(1, 1)] = C64::new(0.0, 0.0);
        j[(0, 1)] = C64::new(2.0, 0.0);
        let fr = FrameData::new(CVec::zeros(2), j);
        assert!(matches!(induced_metric_and_defect(&fr), Err(GlueError::DegenerateFrame(_))));
    }

    #[test]
    fn principal_angles_examples() {
        let a = CMat::identity(3, 3);
        let z = principal_angles(&a, &a).unwrap();
        assert!(z.iter().all(|p| p.abs() < 1e-14));
        let b = rotated_plane(&[PI / 3.0; 3]);
        let p = principal_angles(&a, &b).unwrap();
        for v in p {
            assert!((v - PI / 3.0).abs() < 1e-12);
        }
        let not_lag = CMat::from_fn(2, 2, |i, j| if i == j { C64::new(1.0, 0.0) } else if i == 0 { I } else { C64::new(0.0, 0.0) });
        assert!(matches!(principal_angles(&a.view((0, 0), (2, 2)).into_owned(), &not_lag), Err(GlueError::NotLagrangian(_))));
    }

    #[test]
    fn residual_directional_matches_finite_differences() {
        let bg = KahlerBackground::standard(3);
        let p = CVec::from_vec(vec![C64::new(0.2, -0.1), C64::new(0.4, 0.3), C64::new(-0.7, 0.5)]);
        let v = CMat::from_fn(3, 3, |i, j| C64::new(1.0 * ((i == j) as u8 as f64) + 0.1 * (i + 2 * j) as f64, 0.05 * (i as f64 - j as f64)));
        let dp = CVec::from_vec(vec![C64::new(0.3, 0.2), C64::new(-0.1, 0.4), C64::new(0.5, -0.6)]);
        let dv = CMat::from_fn(3, 3, |i, j| C64::new(0.2 * (i as f64) - 0.1 * j as f64, 0.3 * ((i + j) % 2) as f64));
        let fr = FrameData::new(p.clone(), v.clone());
        let an = residual_directional(&fr, &bg, &dp, &dv).unwrap();
        let h = 1e-6;
        let plus = FrameData::new(&p + &dp * C64::new(h, 0.0), &v + &dv * C64::new(h, 0.0));
        let minus = FrameData::new(&p - &dp * C64::new(h, 0.0), &v - &dv * C64::new(h, 0.0));
        let fd = (residual(&plus, &bg).unwrap() - residual(&minus, &bg).unwrap()) / (2.0 * h);
        assert!((an - fd).abs() < 1e-8, "{an} vs {fd}");
        let vol = 1.7;
        let an = residual_fixed_volume_directional(&fr, &bg, vol, &dp, &dv).unwrap();
        let fd = (residual_fixed_volume(&plus, &bg, vol) - residual_fixed_volume(&minus, &bg, vol)) / (2.0 * h);
        assert!((an - fd).abs() < 1e-8, "{an} vs {fd}");
        let own = gram(&v).determinant().sqrt();
        assert!((residual_fixed_volume(&fr, &bg, own) - residual(&fr, &bg).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn unwrap_removes_jumps() {
        let raw = [3.0, -3.1, -2.9, 3.0];
        let u = unwrap_angles(&raw);
        for w in u.windows(2) {
            assert!((w[1] - w[0]).abs() < PI);
        }
    }

    proptest! {
        #[test]
        fn principal_angles_swap_and_unitary_invariance(
            p1 in 0.05f64..3.0, p2 in 0.05f64..3.0, p3 in 0.05f64..3.0,
            s in proptest::collection::vec(-1.0f64..1.0, 9),
        ) {
            let u = random_unitary(&s, 3);
            let o = random_orthogonal(&s, 3).map(|x| C64::new(x, 0.0));
            let a = &u * CMat::identity(3, 3) * &o;
            let b = &u * rotated_plane(&[p1, p2, p3]) * o.transpose();
            let ab = principal_angles(&a, &b).unwrap();
            let mut want = vec![p1, p2, p3];
            want.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for (x, y) in ab.iter().zip(&want) {
                prop_assert!((x - y).abs() < 1e-10);
            }
            let ba = principal_angles(&b, &a).unwrap();
            let mut flipped: Vec<f64> = want.iter().map(|p| PI - p).collect();
            flipped.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for (x, y) in ba.iter().zip(&flipped) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn residual_is_invariant_under_real_rotation_of_the_chart(
            s in proptest::collection::vec(-1.0f64..1.0, 9),
            p1 in 0.1f64..1.0, p2 in 0.1f64..1.0,
        ) {
            let bg = KahlerBackground::standard(3);
            let phi = [p1, p2, 0.4];
            let point = CVec::from_vec(vec![C64::new(s[0], s[1]), C64::new(s[2], s[3]), C64::new(s[4], s[5])]);
            let fr = FrameData::new(point.clone(), rotated_plane(&phi));
            let o = random_orthogonal(&s, 3);
            let o = if o.determinant() < 0.0 { -o } else { o };
            let fr2 = FrameData::new(point, rotated_plane(&phi) * o.map(|x| C64::new(x, 0.0)));
            let r1 = residual(&fr, &bg).unwrap();
            let r2 = residual(&fr2, &bg).unwrap();
            prop_assert!((r1 - r2).abs() < 1e-10);
            let (g, _) = induced_metric_and_defect(&fr2).unwrap();
            let det = fr2.jacobian.clone().determinant().norm();
            prop_assert!((det - g.determinant().sqrt()).abs() < 1e-8 * det);
        }
    }
}
