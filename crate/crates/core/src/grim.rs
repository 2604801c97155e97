//! Grim Reaper cylinders, the affine motions between them and their
//! pairwise intersections.

use crate::ambient::{principal_angles, CMat, CVec, FrameData, C64};
use crate::error::{GlueError, Result};
use std::f64::consts::{FRAC_PI_2, PI};

/// Tolerance on `sum(phi) = pi` for admissible motions.
pub const ADMISSIBLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parametrization {
    Angle,
    Arclength,
}

/// `z -> (e^{i phi_1} z_1, ..., e^{i phi_{m-1}} z_{m-1}, z_m + lambda + i phi_m)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RigidMotionSpec {
    pub phi: Vec<f64>,
    pub lambda: f64,
}

impl RigidMotionSpec {
    pub fn new(phi: Vec<f64>, lambda: f64) -> Self {
        RigidMotionSpec { phi, lambda }
    }

    pub fn identity(m: usize) -> Self {
        RigidMotionSpec { phi: vec![0.0; m], lambda: 0.0 }
    }

    pub fn m(&self) -> usize {
        self.phi.len()
    }

    pub fn angle_sum(&self) -> f64 {
        self.phi.iter().sum()
    }

    pub fn is_admissible(&self) -> bool {
        (self.angle_sum() - PI).abs() <= ADMISSIBLE_TOL
            && self.phi.iter().all(|&p| p > 0.0 && p < PI)
    }

    /// Linear part `diag(e^{i phi_1}, ..., e^{i phi_{m-1}}, 1)`.
    pub fn linear(&self) -> CMat {
        let m = self.m();
        CMat::from_fn(m, m, |i, j| {
            if i != j {
                C64::new(0.0, 0.0)
            } else if i + 1 == m {
                C64::new(1.0, 0.0)
            } else {
                C64::from_polar(1.0, self.phi[i])
            }
        })
    }

    /// Motion of `other` expressed relative to `self`: `self^{-1} o other`.
    pub fn relative(&self, other: &RigidMotionSpec) -> RigidMotionSpec {
        RigidMotionSpec {
            phi: other.phi.iter().zip(&self.phi).map(|(b, a)| b - a).collect(),
            lambda: other.lambda - self.lambda,
        }
    }
}

pub fn apply_motion(spec: &RigidMotionSpec, z: &CVec) -> CVec {
    let m = spec.m();
    CVec::from_fn(m, |j, _| {
        if j + 1 == m {
            z[j] + C64::new(spec.lambda, spec.phi[j])
        } else {
            z[j] * C64::from_polar(1.0, spec.phi[j])
        }
    })
}

/// Gudermannian `gd(s) = 2 atan(e^s) - pi/2`.
pub fn gd(s: f64) -> f64 {
    2.0 * s.exp().atan() - FRAC_PI_2
}

/// Inverse Gudermannian.
pub fn gd_inv(x: f64) -> f64 {
    x.tan().asinh()
}

/// Shifted Grim Reaper curve `gamma_0(x) = -log cos x - i(x - pi/2)` with
/// its first two derivatives, angle parametrization.
pub fn curve_angle(x: f64) -> (C64, C64, C64) {
    let c = x.cos();
    (
        C64::new(-c.ln(), -(x - FRAC_PI_2)),
        C64::new(x.tan(), -1.0),
        C64::new(1.0 / (c * c), 0.0),
    )
}

/// The same curve by arclength.
pub fn curve_arclength(s: f64) -> (C64, C64, C64) {
    let sech = 1.0 / s.cosh();
    let th = s.tanh();
    // log cosh without overflow
    let lc = s.abs() + (-2.0 * s.abs()).exp().ln_1p() - std::f64::consts::LN_2;
    (
        C64::new(lc, -(gd(s) - FRAC_PI_2)),
        C64::new(th, -sech),
        C64::new(sech * sech, sech * th),
    )
}

/// One Grim Reaper cylinder, possibly moved.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GrimChart {
    pub m: usize,
    pub motion: Option<RigidMotionSpec>,
    pub parametrization: Parametrization,
}

impl GrimChart {
    pub fn identity(m: usize, parametrization: Parametrization) -> Self {
        GrimChart { m, motion: None, parametrization }
    }

    pub fn moved(spec: RigidMotionSpec, parametrization: Parametrization) -> Self {
        GrimChart { m: spec.m(), motion: Some(spec), parametrization }
    }

    /// Phase `sum(phi)` of the chart (0 for the identity).
    pub fn phase(&self) -> f64 {
        self.motion.as_ref().map_or(0.0, |s| s.angle_sum())
    }
}

/// Point, analytic Jacobian and Hessian of a Grim Reaper chart.
pub fn chart_eval(chart: &GrimChart, params: &[f64]) -> Result<FrameData> {
    let m = chart.m;
    if params.len() != m {
        return Err(GlueError::Invalid(format!("expected {m} parameters, got {}", params.len())));
    }
    let xm = params[m - 1];
    let (g, dg, ddg) = match chart.parametrization {
        Parametrization::Angle => {
            if !(xm > -FRAC_PI_2 && xm < FRAC_PI_2) {
                return Err(GlueError::OutOfDomain(format!("x_m = {xm} outside (-pi/2, pi/2)")));
            }
            curve_angle(xm)
        }
        Parametrization::Arclength => {
            if !xm.is_finite() {
                return Err(GlueError::OutOfDomain(format!("s = {xm}")));
            }
            curve_arclength(xm)
        }
    };
    let mut point = CVec::from_fn(m, |j, _| C64::new(params[j], 0.0));
    point[m - 1] = g;
    let mut jac = CMat::identity(m, m);
    jac[(m - 1, m - 1)] = dg;
    let mut hess = vec![CVec::zeros(m); m * m];
    hess[m * m - 1][m - 1] = ddg;
    if let Some(spec) = &chart.motion {
        point = apply_motion(spec, &point);
        let lin = spec.linear();
        jac = &lin * jac;
        for h in hess.iter_mut() {
            *h = &lin * &*h;
        }
    }
    Ok(FrameData { point, jacobian: jac, hessian: Some(hess) })
}

/// Intersection of `L_0` with `P_{(phi, lambda)}(L_0)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntersectionRecord {
    pub point: Vec<C64>,
    pub s0: f64,
    pub s1: f64,
    pub cone_angles: Vec<f64>,
    pub rate: u32,
    /// Charts meeting here (indices into the configuration).
    pub charts: (usize, usize),
    /// Whether the charts are adjacent in the input order.
    pub consecutive: bool,
}

/// Root of `log cos(s + phi_m) - log cos(s) = lambda` on `(-pi/2, pi/2 - phi_m)`.
pub fn solve_s0(phi_m: f64, lambda: f64) -> Result<f64> {
    if !(phi_m > 0.0 && phi_m < PI) || !lambda.is_finite() {
        return Err(GlueError::NoIntersection(format!("phi_m = {phi_m}, lambda = {lambda}")));
    }
    let g = |s: f64| (s + phi_m).cos().ln() - s.cos().ln() - lambda;
    let dg = |s: f64| -(s + phi_m).tan() + s.tan();
    let mut lo = -FRAC_PI_2;
    let mut hi = FRAC_PI_2 - phi_m;
    // g decreases from +inf to -inf; open endpoints are never evaluated
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        let v = g(mid);
        if !v.is_finite() {
            return Err(GlueError::NoIntersection("non-finite root function".into()));
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..5 {
        let step = g(s) / dg(s);
        let next = s - step;
        if !(next > -FRAC_PI_2 && next < FRAC_PI_2 - phi_m) {
            break;
        }
        s = next;
        if step.abs() < 1e-16 {
            break;
        }
    }
    Ok(s)
}

fn tangent_plane(chart: &GrimChart, s: f64) -> Result<CMat> {
    let mut params = vec![0.0; chart.m];
    params[chart.m - 1] = s;
    let mut fr = chart_eval(&GrimChart { parametrization: Parametrization::Angle, ..chart.clone() }, &params)?;
    let c = fr.jacobian.column(chart.m - 1).norm();
    let mut last = fr.jacobian.column_mut(chart.m - 1);
    last /= C64::new(c, 0.0);
    Ok(fr.jacobian)
}

/// Intersection point, curve parameters and tangent-cone angles of
/// `L_0 ∩ L_phi^lambda`.
pub fn intersect(spec: &RigidMotionSpec) -> Result<IntersectionRecord> {
    let m = spec.m();
    let phi_m = spec.phi[m - 1];
    let s0 = solve_s0(phi_m, spec.lambda)?;
    let s1 = s0 + phi_m;
    let base = GrimChart::identity(m, Parametrization::Angle);
    let moved = GrimChart::moved(spec.clone(), Parametrization::Angle);
    let mut x = vec![0.0; m];
    x[m - 1] = s0;
    let p = chart_eval(&base, &x)?.point;
    let cone_angles = principal_angles(&tangent_plane(&base, s0)?, &tangent_plane(&moved, s1)?)?;
    Ok(IntersectionRecord {
        point: p.iter().copied().collect(),
        s0,
        s1,
        cone_angles,
        rate: 3,
        charts: (0, 1),
        consecutive: true,
    })
}

/// Union of Grim Reaper charts and their intersections.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CsConfiguration {
    pub m: usize,
    pub charts: Vec<GrimChart>,
    pub intersections: Vec<IntersectionRecord>,
}

/// Assemble `F_0` and the moved charts, and intersect every pair of charts.
///
/// Two moved charts meet iff their relative last-coordinate rotation lies in
/// `(0, pi)` up to sign; parallel translates never meet.
pub fn build_configuration(
    m: usize,
    motions: &[RigidMotionSpec],
    parametrization: Parametrization,
) -> Result<CsConfiguration> {
    let mut specs = vec![RigidMotionSpec::identity(m)];
    for mo in motions {
        if mo.m() != m {
            return Err(GlueError::Invalid(format!("motion has dimension {}, expected {m}", mo.m())));
        }
        if !mo.is_admissible() {
            return Err(GlueError::AngleConditionViolated(mo.angle_sum()));
        }
        specs.push(mo.clone());
    }
    let mut charts = vec![GrimChart::identity(m, parametrization)];
    charts.extend(motions.iter().map(|s| GrimChart::moved(s.clone(), parametrization)));
    let mut intersections = Vec::new();
    for a in 0..specs.len() {
        for b in (a + 1)..specs.len() {
            let mut rel = specs[a].relative(&specs[b]);
            let (lo, hi) = if rel.phi[m - 1] < 0.0 { (b, a) } else { (a, b) };
            if lo != a {
                rel = specs[b].relative(&specs[a]);
            }
            let dphi = rel.phi[m - 1];
            if !(dphi > 1e-12 && dphi < PI) {
                continue;
            }
            let s0 = solve_s0(dphi, rel.lambda)?;
            let s1 = s0 + dphi;
            let mut x = vec![0.0; m];
            x[m - 1] = s0;
            let lo_chart = GrimChart::moved(specs[lo].clone(), Parametrization::Angle);
            let hi_chart = GrimChart::moved(specs[hi].clone(), Parametrization::Angle);
            let p = chart_eval(&lo_chart, &x)?.point;
            let cone_angles =
                principal_angles(&tangent_plane(&lo_chart, s0)?, &tangent_plane(&hi_chart, s1)?)?;
            intersections.push(IntersectionRecord {
                point: p.iter().copied().collect(),
                s0,
                s1,
                cone_angles,
                rate: 3,
                charts: (lo, hi),
                consecutive: b == a + 1,
            });
        }
    }
    Ok(CsConfiguration { m, charts, intersections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::{induced_metric_and_defect, lagrangian_angles, KahlerBackground};
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn demo_spec(lambda: f64) -> RigidMotionSpec {
        RigidMotionSpec::new(vec![FRAC_PI_4, FRAC_PI_4, FRAC_PI_2], lambda)
    }

    #[test]
    fn identity_chart_at_origin() {
        let fr = chart_eval(&GrimChart::identity(3, Parametrization::Angle), &[0.0; 3]).unwrap();
        assert!((fr.point[2] - C64::new(0.0, FRAC_PI_2)).norm() < 1e-15);
        assert_eq!(gd(0.0), 0.0);
    }

    #[test]
    fn angle_chart_rejects_out_of_domain() {
        let c = GrimChart::identity(2, Parametrization::Angle);
        assert!(matches!(chart_eval(&c, &[0.0, 1.6]), Err(GlueError::OutOfDomain(_))));
    }

    #[test]
    fn arclength_metric_matches_finite_differences() {
        let c = GrimChart::moved(demo_spec(0.7), Parametrization::Arclength);
        for &(a, b, s) in &[(0.3, -1.2, 0.4), (2.0, 0.1, -3.5), (-0.5, 0.9, 6.0)] {
            let h = 1e-5;
            let x = [a, b, s];
            let mut cols = Vec::new();
            for k in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let d = (chart_eval(&c, &xp).unwrap().point - chart_eval(&c, &xm).unwrap().point) / C64::new(2.0 * h, 0.0);
                cols.push(d);
            }
            let fd = CMat::from_columns(&cols);
            let (g, _) = induced_metric_and_defect(&FrameData::new(CVec::zeros(3), fd)).unwrap();
            assert!((g - DMatrix::<f64>::identity(3, 3)).norm() < 1e-9);
            let (g, d) = induced_metric_and_defect(&chart_eval(&c, &x).unwrap()).unwrap();
            assert!((g - DMatrix::<f64>::identity(3, 3)).norm() < 1e-12);
            assert!(d < 1e-14);
        }
    }

    #[test]
    fn grim_angle_and_phase() {
        let bg = KahlerBackground::standard(3);
        for &x in &[-1.2, -0.3, 0.0, 0.8, 1.4] {
            let fr = chart_eval(&GrimChart::identity(3, Parametrization::Angle), &[0.1, 0.2, x]).unwrap();
            let r = lagrangian_angles(&fr, &bg).unwrap();
            assert!((r.theta_l - (x - FRAC_PI_2)).abs() < 1e-13);
            assert!(r.theta_f.abs() < 1e-13 && r.residual.abs() < 1e-13);
            let fr = chart_eval(&GrimChart::moved(demo_spec(1.5), Parametrization::Angle), &[0.1, 0.2, x]).unwrap();
            let r = lagrangian_angles(&fr, &bg).unwrap();
            assert!((r.theta_f.abs() - PI).abs() < 1e-12);
            assert!(r.residual.abs() < 1e-12);
        }
    }

    #[test]
    fn motion_examples() {
        let z = CVec::from_vec(vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.3), C64::new(0.2, 0.1)]);
        assert_eq!(apply_motion(&RigidMotionSpec::identity(3), &z), z);
        let o = apply_motion(&demo_spec(2.5), &CVec::zeros(3));
        assert!((o[2] - C64::new(2.5, FRAC_PI_2)).norm() < 1e-15);
        assert!(o[0].norm() == 0.0 && o[1].norm() == 0.0);
    }

    #[test]
    fn symmetric_intersection() {
        for &pm in &[0.3, FRAC_PI_2, 2.5] {
            let s0 = solve_s0(pm, 0.0).unwrap();
            assert!((s0 + pm / 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn intersection_matches_bisection_oracle() {
        // Independent oracle: for phi_m = pi/2 the equation reads
        // log(-sin s) - log(cos s) = 1, i.e. tan s = -e.
        let oracle = -(1f64.exp()).atan();
        assert!((oracle - (-1.218_282_905_017_277_6)).abs() < 1e-15);
        let s0 = solve_s0(FRAC_PI_2, 1.0).unwrap();
        assert!((s0 - oracle).abs() < 1e-13);
        let res = (s0 + FRAC_PI_2).cos().ln() - s0.cos().ln() - 1.0;
        assert!(res.abs() < 1e-12);
    }

    #[test]
    fn cone_angles_do_not_depend_on_lambda() {
        let mut all = Vec::new();
        for &l in &[-2.0, -1.0, 0.0, 1.0, 2.0] {
            let rec = intersect(&demo_spec(l)).unwrap();
            for (a, b) in rec.cone_angles.iter().zip(&[FRAC_PI_4, FRAC_PI_4, FRAC_PI_2]) {
                assert!((a - b).abs() < 1e-9);
            }
            all.push(rec.cone_angles);
        }
        for a in &all {
            for b in &all {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn s0_is_monotone_in_lambda() {
        let mut prev = f64::INFINITY;
        for k in -40..=40 {
            let s0 = solve_s0(1.1, k as f64 * 0.1).unwrap();
            assert!(s0 < prev);
            prev = s0;
        }
    }

    #[test]
    fn f_is_bounded_above_on_the_cylinder() {
        let bg = KahlerBackground::standard(2);
        let c = GrimChart::identity(2, Parametrization::Arclength);
        let fs: Vec<f64> = (-200..=200)
            .map(|k| bg.f(&chart_eval(&c, &[0.0, k as f64 * 0.05]).unwrap().point))
            .collect();
        let max = fs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(max.abs() < 1e-15);
        assert!(fs[0] < -15.0 && fs[400] < -15.0);
    }

    #[test]
    fn configurations() {
        let empty = build_configuration(3, &[], Parametrization::Arclength).unwrap();
        assert_eq!(empty.charts.len(), 1);
        assert!(empty.intersections.is_empty());
        let one = build_configuration(3, &[demo_spec(0.0)], Parametrization::Arclength).unwrap();
        assert_eq!(one.intersections.len(), 1);
        let bad = RigidMotionSpec::new(vec![0.5, 0.5, 0.5], 0.0);
        assert!(matches!(
            build_configuration(3, &[bad], Parametrization::Arclength),
            Err(GlueError::AngleConditionViolated(_))
        ));
        let second = RigidMotionSpec::new(vec![PI / 3.0, PI / 3.0, PI / 3.0], 3.0);
        let two = build_configuration(3, &[demo_spec(0.0), second.clone()], Parametrization::Arclength).unwrap();
        // F_0 meets both moved charts; the two moved charts also meet since
        // their last-coordinate rotations differ.
        assert_eq!(two.intersections.len(), 3);
        for rec in &two.intersections {
            let (a, b) = rec.charts;
            let specs = [RigidMotionSpec::identity(3), demo_spec(0.0), second.clone()];
            let (sa, sb) = (specs[a].clone(), specs[b].clone());
            let direct = intersect(&sa.relative(&sb)).unwrap();
            assert!((direct.s0 - rec.s0).abs() < 1e-12);
            let mut want: Vec<f64> = direct.cone_angles.clone();
            want.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for (x, y) in rec.cone_angles.iter().zip(&want) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        let parallel = build_configuration(
            3,
            &[demo_spec(0.0), demo_spec(3.0)],
            Parametrization::Arclength,
        )
        .unwrap();
        assert_eq!(parallel.intersections.len(), 2);
    }

    proptest! {
        #[test]
        fn intersection_points_coincide(pm in 0.05f64..3.09, lambda in -3.0f64..3.0) {
            let rest = (PI - pm) / 2.0;
            let spec = RigidMotionSpec::new(vec![rest, rest, pm], lambda);
            let rec = intersect(&spec).unwrap();
            let a = chart_eval(&GrimChart::identity(3, Parametrization::Angle), &[0.0, 0.0, rec.s0]).unwrap().point;
            let b = chart_eval(&GrimChart::moved(spec, Parametrization::Angle), &[0.0, 0.0, rec.s1]).unwrap().point;
            prop_assert!((a - b).norm() < 1e-10);
            prop_assert!((rec.s1 - rec.s0 - pm).abs() < 1e-15);
        }

        #[test]
        fn every_chart_frame_is_an_exact_soliton(
            x1 in -5.0f64..5.0, x2 in -5.0f64..5.0, s in -5.0f64..5.0,
            pm in 0.1f64..3.0, lambda in -2.0f64..2.0,
        ) {
            let bg = KahlerBackground::standard(3);
            let rest = (PI - pm) / 2.0;
            let spec = RigidMotionSpec::new(vec![rest, rest, pm], lambda);
            for c in [GrimChart::identity(3, Parametrization::Arclength), GrimChart::moved(spec, Parametrization::Arclength)] {
                let r = lagrangian_angles(&chart_eval(&c, &[x1, x2, s]).unwrap(), &bg).unwrap();
                prop_assert!(r.residual.abs() < 1e-12);
            }
        }
    }
}
