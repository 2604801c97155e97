//! Graphs over the tangent cone at a singular point and the glued
//! approximate solution `F_t`.
//!
//! Everything near the singular point is parametrized by one tube chart
//! `(sigma, y) in S^{m-1} x R`, the Lawlor neck's own domain. Writing the
//! neck as a graph over the cone plane on the side selected by the sign of
//! `y` gives the graph coordinate `x = t X_k(sigma, y)`; the glued map is
//! `p + t V N` for `|x| < t^tau`, the cone graph of `grad w_t` on the
//! transition annulus, and the wing itself beyond `2 t^tau`.

use crate::ambient::{
    gram, lagrangian_angles, principal_angles, CMat, CVec, FrameData, KahlerBackground, C64, I,
};
use crate::error::{GlueError, Result};
use crate::grim::{
    apply_motion, chart_eval, gd, CsConfiguration, GrimChart, IntersectionRecord, Parametrization,
    RigidMotionSpec,
};
use crate::lawlor::{LawlorParams, NeckProfile};
use crate::quadrature::{gauss_legendre, gauss_legendre_on, integrate};
use nalgebra::DMatrix;
use std::f64::consts::{FRAC_PI_2, PI};

/// Smooth step `e^{-1/x} / (e^{-1/x} + e^{-1/(1-x)})` on `[0, 1]` with its
/// first two derivatives.
pub fn smooth_step(x: f64) -> (f64, f64, f64) {
    if x <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if x >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let g = 1.0 / x - 1.0 / (1.0 - x);
    let dg = -1.0 / (x * x) - 1.0 / ((1.0 - x) * (1.0 - x));
    let ddg = 2.0 / (x * x * x) - 2.0 / ((1.0 - x) * (1.0 - x) * (1.0 - x));
    // h = 1 / (1 + e^g), written to avoid overflow
    let h = if g > 0.0 { (-g).exp() / (1.0 + (-g).exp()) } else { 1.0 / (1.0 + g.exp()) };
    let dh = -h * (1.0 - h) * dg;
    let ddh = -dh * (1.0 - 2.0 * h) * dg - h * (1.0 - h) * ddg;
    (h, dh, ddh)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CutoffSpec {
    pub tau: f64,
}

impl CutoffSpec {
    pub fn new(tau: f64, m: usize) -> Result<Self> {
        let lo = m as f64 / (m as f64 + 1.0);
        if !(tau > lo && tau < 1.0) {
            return Err(GlueError::Invalid(format!("tau = {tau} outside ({lo}, 1)")));
        }
        Ok(CutoffSpec { tau })
    }
}

/// `(eta(t^{-tau} r), d/dr, d^2/dr^2)`.
pub fn cutoff_eval(spec: &CutoffSpec, t: f64, r: f64) -> (f64, f64, f64) {
    let k = t.powf(-spec.tau);
    let (h, dh, ddh) = smooth_step(k * r - 1.0);
    (h, dh * k, ddh * k * k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Side {
    Zero,
    Phi,
}

/// Region tags following the radius thresholds `t R`, `t^tau`, `2 t^tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Region {
    /// Compact part of the neck, `r_hat < R`.
    Neck,
    /// `t R <= r < t^tau`, still exactly the scaled neck.
    Inner,
    /// `t^tau <= r <= 2 t^tau`, where the potentials are interpolated.
    Transition,
    /// Exactly the Grim Reaper wings.
    Wing,
}

impl Region {
    pub fn label(&self) -> &'static str {
        match self {
            Region::Neck => "I",
            Region::Inner => "II",
            Region::Transition => "III",
            Region::Wing => "wing",
        }
    }
}

/// Tangent cone at the singular point: vertex and the two unitary frames
/// `U_k` with `U_k R^m` the tangent plane of wing `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeChart {
    pub vertex: CVec,
    pub frames: [CMat; 2],
}

impl ConeChart {
    pub fn frame(&self, side: Side) -> &CMat {
        match side {
            Side::Zero => &self.frames[0],
            Side::Phi => &self.frames[1],
        }
    }

    pub fn angles(&self) -> Result<Vec<f64>> {
        principal_angles(&self.frames[0], &self.frames[1])
    }
}

/// Result of writing a surface point as a graph over a cone plane.
#[derive(Debug, Clone)]
pub struct GraphProjection {
    pub params: Vec<f64>,
    /// `grad u` in the orthonormal frame `J U_k e_j`.
    pub grad: Vec<f64>,
    pub displacement: CVec,
    pub residual: f64,
}

/// Newton-solve for the surface parameter whose tangential projection onto
/// the cone plane is `r sigma`.
pub fn project_to_graph<S>(
    surface: S,
    cone: &ConeChart,
    side: Side,
    sigma: &[f64],
    r: f64,
    guess: &[f64],
) -> Result<GraphProjection>
where
    S: Fn(&[f64]) -> Result<FrameData>,
{
    let u = cone.frame(side);
    let uinv = u.adjoint();
    let m = sigma.len();
    let mut x = guess.to_vec();
    let eval = |x: &[f64]| -> Result<(FrameData, CVec, Vec<f64>, f64)> {
        let fr = surface(x)?;
        let local = &uinv * (&fr.point - &cone.vertex);
        let g: Vec<f64> = (0..m).map(|j| local[j].re - r * sigma[j]).collect();
        let res = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok((fr, local, g, res))
    };
    let mut res = f64::INFINITY;
    let mut cur = eval(&x)?;
    for _ in 0..100 {
        let (fr, local, g, r0) = &cur;
        res = *r0;
        if res < 1e-12 * r.max(1e-3) {
            let grad: Vec<f64> = local.iter().map(|z| z.im).collect();
            let disp = &fr.point - (&cone.vertex + u * CVec::from_fn(m, |j, _| C64::new(r * sigma[j], 0.0)));
            return Ok(GraphProjection { params: x, grad, displacement: disp, residual: res });
        }
        let dj = (&uinv * &fr.jacobian).map(|z| z.re);
        let step = dj
            .lu()
            .solve(&nalgebra::DVector::from_vec(g.clone()))
            .ok_or_else(|| GlueError::ProjectionFailure(format!("singular projection at {x:?}")))?;
        // backtrack until the residual drops
        let mut lam = 1.0;
        let mut accepted = None;
        while lam > 1e-6 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a - lam * b).collect();
            if let Ok(next) = eval(&trial) {
                if next.3 < res {
                    accepted = Some((trial, next));
                    break;
                }
            }
            lam *= 0.5;
        }
        match accepted {
            Some((trial, next)) => {
                x = trial;
                cur = next;
            }
            None => break,
        }
    }
    Err(GlueError::ProjectionFailure(format!("Newton residual {res:e} at {x:?}")))
}

/// Cumulative potential along a ray from radial derivatives sampled on a
/// uniform grid in `log r`, anchored at `r -> 0` (wing) or `r -> inf` (neck).
/// The unresolved end is closed with a power-law tail fitted to the last
/// two samples.
pub fn recover_potential(r: &[f64], dudr: &[f64], anchor_at_zero: bool) -> Vec<f64> {
    let n = r.len();
    assert!(n >= 3 && dudr.len() == n);
    let s: Vec<f64> = r.iter().map(|v| v.ln()).collect();
    let h = s[1] - s[0];
    // integrand in s: du/ds = r du/dr
    let g: Vec<f64> = r.iter().zip(dudr).map(|(a, b)| a * b).collect();
    let seg = |i: usize| -> f64 {
        // int_{s_i}^{s_{i+1}} of the quadratic through three neighbours
        if i + 2 < n {
            h / 12.0 * (5.0 * g[i] + 8.0 * g[i + 1] - g[i + 2])
        } else {
            h / 12.0 * (-g[i - 1] + 8.0 * g[i] + 5.0 * g[i + 1])
        }
    };
    let tail = |a: usize, b: usize| -> f64 {
        // g ~ c e^{k s}; int from the end to the anchor is g_end / k
        let (ga, gb) = (g[a], g[b]);
        if ga == 0.0 || gb == 0.0 || ga.signum() != gb.signum() {
            return 0.0;
        }
        let k = (ga / gb).ln() / (s[a] - s[b]);
        if k.abs() < 1e-12 {
            0.0
        } else {
            ga / k
        }
    };
    let mut u = vec![0.0; n];
    if anchor_at_zero {
        u[0] = tail(0, 1);
        for i in 0..n - 1 {
            u[i + 1] = u[i] + seg(i);
        }
    } else {
        u[n - 1] = tail(n - 1, n - 2);
        for i in (0..n - 1).rev() {
            u[i] = u[i + 1] - seg(i);
        }
    }
    u
}

/// Parameters of the gluing: neck scale, cutoff exponent, outer radius and
/// the neck's inner radius `R`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GlueParams {
    pub t: f64,
    pub tau: f64,
    pub eps: f64,
    pub r_hat: f64,
}

/// Wing curve of one side written as a graph over its tangent line at the
/// singular parameter `s_k` (angle parametrization).
#[derive(Debug, Clone, Copy)]
struct WingCurve {
    s: f64,
}

impl WingCurve {
    fn domain(&self) -> (f64, f64) {
        ((self.s - FRAC_PI_2).max(-FRAC_PI_2), (self.s + FRAC_PI_2).min(FRAC_PI_2))
    }

    /// `(xi, h)` at curve parameter `th`.
    fn xi_h(&self, th: f64) -> (f64, f64) {
        let (ss, cs) = self.s.sin_cos();
        let l = (cs / th.cos()).ln();
        let d = th - self.s;
        (d * cs + l * ss, l * cs - d * ss)
    }

    fn dxi(&self, th: f64) -> f64 {
        (th - self.s).cos() / th.cos()
    }

    /// Curve parameter with `xi = xm`.
    fn solve(&self, xm: f64) -> Result<f64> {
        let (mut lo, mut hi) = self.domain();
        let pad = 1e-14;
        lo += pad;
        hi -= pad;
        if !(self.xi_h(lo).0 < xm && xm < self.xi_h(hi).0) {
            return Err(GlueError::ProjectionFailure(format!("x_m = {xm} outside the wing graph")));
        }
        let mut th = self.s;
        for _ in 0..200 {
            let (xi, _) = self.xi_h(th);
            let g = xi - xm;
            if g > 0.0 {
                hi = th;
            } else {
                lo = th;
            }
            let mut next = th - g / self.dxi(th);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - th).abs() < 1e-15 * (1.0 + th.abs()) {
                return Ok(next);
            }
            th = next;
        }
        Ok(th)
    }

    /// `(h, h', h'')` in the graph variable.
    fn slopes(&self, th: f64) -> (f64, f64, f64) {
        let (_, h) = self.xi_h(th);
        let c = (th - self.s).cos();
        (h, (th - self.s).tan(), th.cos() / (c * c * c))
    }

    /// Potential `int_0^xi h dxi`.
    fn potential(&self, th: f64) -> f64 {
        integrate(|x| self.xi_h(x).1 * self.dxi(x), self.s, th, 1e-17, 1e-14, 2000)
            .map(|q| q.value)
            .unwrap_or(f64::NAN)
    }
}

/// Frame and bookkeeping of one tube-chart evaluation.
#[derive(Debug, Clone)]
pub struct TubePoint {
    pub frame: FrameData,
    pub side: Side,
    /// Graph radius `t |X_k|`.
    pub r: f64,
    pub rhat: f64,
    pub rho: f64,
    pub region: Region,
    /// Operator norm of the Hessian of the graph potential (0 on the pure
    /// neck); `|g_t - g_C|_{g_C} = hess_norm^2` on the graph part.
    pub hess_norm: f64,
}

/// The glued approximate solution around one singular point.
#[derive(Debug, Clone)]
pub struct GluedSurface {
    pub m: usize,
    pub bg: KahlerBackground,
    pub config: CsConfiguration,
    pub intersection: IntersectionRecord,
    /// Motion of the lower chart; internal coordinates are relative to it.
    pub base: RigidMotionSpec,
    /// Motion of the upper chart relative to the lower one.
    pub rel: RigidMotionSpec,
    pub profile: NeckProfile,
    pub params: GlueParams,
    pub cutoff: CutoffSpec,
    pub cone: ConeChart,
    /// +1 or -1: tube-chart frames are reversed relative to the glued
    /// orientation when negative, chosen so that `cos theta_f > 0` on the neck.
    pub orientation: f64,
    /// Same for the two wing charts.
    pub wing_orientation: [f64; 2],
    /// Diagonal phases of `U_0` and `U_phi` (relative frame).
    phases: [Vec<f64>; 2],
    q: C64,
    curves: [WingCurve; 2],
    blend: f64,
}

/// Lawlor parameters with the prescribed angles, scaled so that the widest
/// semi-axis of the waist ellipsoid `{N(sigma, 0)}` projected to either
/// plane equals `waist`.
pub fn neck_for_angles(phi: &[f64], waist: f64) -> Result<LawlorParams> {
    let target = crate::lawlor::AngleData { phi: phi.to_vec(), area: 1.0 };
    let base = crate::lawlor::params_from_angles(&target, 1e-12)?;
    let width = base
        .a
        .iter()
        .zip(phi)
        .map(|(a, p)| (0.5 * p).cos() / a.sqrt())
        .fold(0.0, f64::max);
    let k = (width / waist).powi(2);
    LawlorParams::new(base.a.iter().map(|a| a * k).collect())
}

/// Inverse of [`apply_motion`].
pub fn unapply_motion(spec: &RigidMotionSpec, z: &CVec) -> CVec {
    let m = spec.m();
    CVec::from_fn(m, |j, _| {
        if j + 1 == m {
            z[j] - C64::new(spec.lambda, spec.phi[j])
        } else {
            z[j] * C64::from_polar(1.0, -spec.phi[j])
        }
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl GluedSurface {
    /// Glue `t N` into the intersection `config.intersections[which]`.
    pub fn new(
        config: &CsConfiguration,
        which: usize,
        profile: NeckProfile,
        params: GlueParams,
    ) -> Result<Self> {
        let m = config.m;
        let rec = config
            .intersections
            .get(which)
            .ok_or_else(|| GlueError::Invalid(format!("no intersection #{which}")))?
            .clone();
        let spec_of = |c: &GrimChart| c.motion.clone().unwrap_or_else(|| RigidMotionSpec::identity(m));
        let base = spec_of(&config.charts[rec.charts.0]);
        let upper = spec_of(&config.charts[rec.charts.1]);
        let rel = base.relative(&upper);
        if !rel.is_admissible() {
            return Err(GlueError::AngleConditionViolated(rel.angle_sum()));
        }
        if profile.m() != m {
            return Err(GlueError::Invalid("neck dimension differs from configuration".into()));
        }
        for (a, b) in profile.phi().iter().zip(&rel.phi) {
            if (a - b).abs() > 1e-8 {
                return Err(GlueError::Invalid(format!(
                    "neck angles {:?} do not match the cone angles {:?}",
                    profile.phi(),
                    rel.phi
                )));
            }
        }
        let GlueParams { t, tau, eps, r_hat } = params;
        let cutoff = CutoffSpec::new(tau, m)?;
        if !(0.0 < t * r_hat && t * r_hat < t.powf(tau) && 2.0 * t.powf(tau) < eps && eps < 1.0) {
            return Err(GlueError::Invalid(format!(
                "region radii out of order: tR = {}, t^tau = {}, eps = {eps}",
                t * r_hat,
                t.powf(tau)
            )));
        }
        let waist = profile
            .params
            .a
            .iter()
            .zip(profile.phi())
            .map(|(a, p)| (0.5 * p).cos() / a.sqrt())
            .fold(0.0, f64::max);
        if waist >= r_hat {
            return Err(GlueError::Invalid(format!("neck waist {waist} exceeds R = {r_hat}")));
        }
        let s0 = rec.s0;
        let s1 = rec.s1;
        let alpha0 = s0 - FRAC_PI_2;
        let mut ph0 = vec![0.0; m];
        ph0[m - 1] = alpha0;
        let mut ph1 = rel.phi.clone();
        ph1[m - 1] = alpha0 + rel.phi[m - 1];
        let q = crate::grim::curve_angle(s0).0;
        let lin = base.linear();
        let diag = |ph: &[f64]| CMat::from_fn(m, m, |i, j| if i == j { C64::from_polar(1.0, ph[i]) } else { C64::new(0.0, 0.0) });
        let mut prel = CVec::zeros(m);
        prel[m - 1] = q;
        let cone = ConeChart { vertex: apply_motion(&base, &prel), frames: [&lin * diag(&ph0), &lin * diag(&ph1)] };
        // blend zone for r_hat: both waist projections stay below R inside it
        let mut blend = 0.5 / profile.params.a.iter().cloned().fold(0.0, f64::max).sqrt();
        let widest = |y: f64| {
            (0..m)
                .map(|j| {
                    let (z, _) = profile.z(j, y);
                    (z * C64::from_polar(1.0, -if y < 0.0 { 0.0 } else { rel.phi[j] })).re.abs()
                })
                .fold(0.0, f64::max)
        };
        while widest(blend).max(widest(-blend)) > 0.9 * r_hat {
            blend *= 0.5;
        }
        let mut s = GluedSurface {
            m,
            bg: KahlerBackground::standard(m),
            config: config.clone(),
            intersection: rec,
            base,
            rel,
            profile,
            params,
            cutoff,
            cone,
            orientation: 1.0,
            wing_orientation: [1.0, 1.0],
            phases: [ph0, ph1],
            q,
            curves: [WingCurve { s: s0 }, WingCurve { s: s1 }],
            blend,
        };
        let sigma = vec![1.0 / (m as f64).sqrt(); m];
        let tang = crate::lawlor::sphere_tangent_basis(&sigma);
        let probe = s.tube_eval(&sigma, &tang, 0.0)?;
        let rep = lagrangian_angles(&probe.frame, &s.bg)?;
        if rep.theta_f.cos() < 0.0 {
            s.orientation = -1.0;
        }
        // a wing chart agrees with the glued orientation iff its angle
        // matches the oriented tube angle at a shared point
        for (k, side) in [Side::Zero, Side::Phi].into_iter().enumerate() {
            let r = 0.5 * (2.0 * params.t.powf(tau) + eps);
            let y = s.y_at_radius(side, &sigma, r)?;
            let tp = s.tube_eval(&sigma, &tang, y)?;
            let wp = s.wing_params_from_point(side, &tp.frame.point);
            let w = s.wing_eval(side, &wp)?;
            if (&w.point - &tp.frame.point).norm() > 1e-8 {
                return Err(GlueError::Invalid("wing chart does not match the glued wing".into()));
            }
            let a = lagrangian_angles(&tp.frame, &s.bg)?.theta_f;
            let b = lagrangian_angles(&w, &s.bg)?.theta_f;
            let sign = if (a - b).cos() > 0.0 { 1.0 } else { -1.0 };
            s.wing_orientation[k] = sign * s.orientation;
        }
        Ok(s)
    }

    pub fn t(&self) -> f64 {
        self.params.t
    }

    fn side_phase(&self, side: Side, j: usize) -> f64 {
        match side {
            Side::Zero => 0.0,
            Side::Phi => self.rel.phi[j],
        }
    }

    /// Rotated neck `e^{-i phi^k} N` split into real and imaginary parts,
    /// with derivatives along the tangents and `y`.
    fn neck_graph(&self, side: Side, sigma: &[f64], tangents: &[Vec<f64>], y: f64) -> (Vec<f64>, Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        let m = self.m;
        let mut x = vec![0.0; m];
        let mut yv = vec![0.0; m];
        let mut dx = DMatrix::zeros(m, m);
        let mut dy = DMatrix::zeros(m, m);
        for j in 0..m {
            let (z, dz) = self.profile.z(j, y);
            let rot = C64::from_polar(1.0, -self.side_phase(side, j));
            let (z, dz) = (z * rot, dz * rot);
            x[j] = sigma[j] * z.re;
            yv[j] = sigma[j] * z.im;
            for (k, e) in tangents.iter().enumerate() {
                dx[(j, k)] = e[j] * z.re;
                dy[(j, k)] = e[j] * z.im;
            }
            dx[(j, m - 1)] = sigma[j] * dz.re;
            dy[(j, m - 1)] = sigma[j] * dz.im;
        }
        (x, yv, dx, dy)
    }

    /// Neck potential `v_1` over the plane of `side` (anchored at the far end).
    pub fn neck_potential(&self, side: Side, sigma: &[f64], y: f64) -> f64 {
        let mut v = 0.0;
        for j in 0..self.m {
            let (z, _) = self.profile.z(j, y);
            let w = z * C64::from_polar(1.0, -self.side_phase(side, j));
            v += 0.5 * sigma[j] * sigma[j] * w.re * w.im;
        }
        let q = self.profile.q(y);
        match side {
            Side::Zero => v - 0.5 * q,
            Side::Phi => v + self.profile.angle_data.area - 0.5 * q,
        }
    }

    /// Neck radius `r_hat`: the graph radius on either end, blended across
    /// `y = 0` where both projections have equal length.
    pub fn rhat(&self, sigma: &[f64], y: f64) -> f64 {
        let n0 = norm(&self.neck_graph(Side::Zero, sigma, &[], y).0);
        let n1 = norm(&self.neck_graph(Side::Phi, sigma, &[], y).0);
        let (b, _, _) = smooth_step((y + self.blend) / (2.0 * self.blend));
        (1.0 - b) * n0 + b * n1
    }

    /// Radius field: `t r_hat` on the neck and transition, blended to 1
    /// between `eps` and 1.
    pub fn rho_from_rhat(&self, rhat: f64) -> f64 {
        let r = self.t() * rhat;
        let eps = self.params.eps;
        if r <= eps {
            r
        } else if r >= 1.0 {
            1.0
        } else {
            let (b, _, _) = smooth_step((r - eps) / (1.0 - eps));
            r + (1.0 - r) * b
        }
    }

    pub fn region_of(&self, rhat: f64) -> Region {
        let t = self.t();
        let r = t * rhat;
        if rhat < self.params.r_hat {
            Region::Neck
        } else if r < t.powf(self.params.tau) {
            Region::Inner
        } else if r <= 2.0 * t.powf(self.params.tau) {
            Region::Transition
        } else {
            Region::Wing
        }
    }

    fn to_ambient(&self, point: CVec, jac: CMat) -> FrameData {
        let lin = self.base.linear();
        let jac = lin * jac;
        FrameData::new(apply_motion(&self.base, &point), jac)
    }

    /// Glued map in the tube chart. `tangents` are `m - 1` vectors tangent
    /// to the sphere at `sigma`; the last Jacobian column is `d/dy`.
    pub fn tube_eval(&self, sigma: &[f64], tangents: &[Vec<f64>], y: f64) -> Result<TubePoint> {
        self.eval_tube(sigma, tangents, y, false)
    }

    /// The unglued scaled neck `p + t V N` in the same chart, at any radius.
    pub fn scaled_neck_eval(&self, sigma: &[f64], tangents: &[Vec<f64>], y: f64) -> Result<TubePoint> {
        self.eval_tube(sigma, tangents, y, true)
    }

    fn eval_tube(&self, sigma: &[f64], tangents: &[Vec<f64>], y: f64, pure_neck: bool) -> Result<TubePoint> {
        let m = self.m;
        if sigma.len() != m || tangents.len() != m - 1 {
            return Err(GlueError::Invalid("tube point needs sigma in R^m and m-1 tangents".into()));
        }
        let t = self.t();
        let side = if y < 0.0 { Side::Zero } else { Side::Phi };
        let k = if side == Side::Zero { 0 } else { 1 };
        let (xk, yk, dxk, dyk) = self.neck_graph(side, sigma, tangents, y);
        let r = t * norm(&xk);
        let rhat = self.rhat(sigma, y);
        let rho = self.rho_from_rhat(rhat);
        let region = self.region_of(rhat);
        let uk = |v: C64, j: usize| v * C64::from_polar(1.0, self.phases[k][j]);
        let mut p = CVec::zeros(m);
        p[m - 1] = self.q;
        let tau = self.params.tau;
        if pure_neck || r < t.powf(tau) {
            let point = CVec::from_fn(m, |j, _| p[j] + uk(C64::new(t * xk[j], t * yk[j]), j));
            let jac = CMat::from_fn(m, m, |j, c| uk(C64::new(t * dxk[(j, c)], t * dyk[(j, c)]), j));
            return Ok(TubePoint { frame: self.to_ambient(point, jac), side, r, rhat, rho, region, hess_norm: 0.0 });
        }
        let x: Vec<f64> = xk.iter().map(|v| t * v).collect();
        let dx = &dxk * t;
        // wing potential u(x) = U(x_m)
        let curve = self.curves[k];
        let th = curve.solve(x[m - 1])?;
        let (h, dh, _) = curve.slopes(th);
        let mut grad_w = vec![0.0; m];
        let mut hess_w = DMatrix::<f64>::zeros(m, m);
        grad_w[m - 1] = h;
        hess_w[(m - 1, m - 1)] = dh;
        if r <= 2.0 * t.powf(tau) {
            let (eta, deta, ddeta) = cutoff_eval(&self.cutoff, t, r);
            let u = curve.potential(th);
            let v = t * t * self.neck_potential(side, sigma, y);
            let grad_v: Vec<f64> = yk.iter().map(|a| t * a).collect();
            let inv = dxk
                .clone()
                .try_inverse()
                .ok_or_else(|| GlueError::DegenerateFrame("neck graph map is singular".into()))?;
            let hv = &dyk * inv;
            let hv = (&hv + hv.transpose()) * 0.5;
            let xhat: Vec<f64> = x.iter().map(|a| a / r).collect();
            let diff: Vec<f64> = (0..m).map(|j| grad_w[j] - grad_v[j]).collect();
            let mut hw = &hess_w * eta + &hv * (1.0 - eta);
            for i in 0..m {
                for j in 0..m {
                    let proj = xhat[i] * xhat[j];
                    let heta = ddeta * proj + deta / r * (if i == j { 1.0 } else { 0.0 } - proj);
                    hw[(i, j)] += deta * (diff[i] * xhat[j] + xhat[i] * diff[j]) + (u - v) * heta;
                }
            }
            for j in 0..m {
                grad_w[j] = eta * grad_w[j] + (1.0 - eta) * grad_v[j] + (u - v) * deta * xhat[j];
            }
            hess_w = hw;
        }
        let point = CVec::from_fn(m, |j, _| p[j] + uk(C64::new(x[j], grad_w[j]), j));
        let hdx = &hess_w * &dx;
        let jac = CMat::from_fn(m, m, |j, c| uk(C64::new(dx[(j, c)], hdx[(j, c)]), j));
        let hess_norm = hess_w.symmetric_eigenvalues().amax();
        Ok(TubePoint { frame: self.to_ambient(point, jac), side, r, rhat, rho, region, hess_norm })
    }

    /// A wing chart (arclength) in ambient coordinates. Parameters are
    /// `(x', s)` of the chart's own Grim Reaper; `wing_orientation` says
    /// whether it agrees with the glued orientation.
    pub fn wing_eval(&self, side: Side, params: &[f64]) -> Result<FrameData> {
        let fr = chart_eval(&self.wing_chart(side), params)?;
        Ok(self.to_ambient(fr.point, fr.jacobian))
    }

    fn wing_chart(&self, side: Side) -> GrimChart {
        match side {
            Side::Zero => GrimChart::identity(self.m, Parametrization::Arclength),
            Side::Phi => GrimChart::moved(self.rel.clone(), Parametrization::Arclength),
        }
    }

    /// Arclength parameters `(x', s)` of an ambient point on the wing of `side`.
    pub fn wing_params_from_point(&self, side: Side, point: &CVec) -> Vec<f64> {
        let m = self.m;
        let mut w = unapply_motion(&self.base, point);
        if side == Side::Phi {
            w = unapply_motion(&self.rel, &w);
        }
        let mut p: Vec<f64> = (0..m - 1).map(|j| w[j].re).collect();
        p.push(crate::grim::gd_inv(FRAC_PI_2 - w[m - 1].im));
        p
    }

    /// `orientation * Theta` for a frame from a chart with the given sign.
    pub fn oriented_residual(&self, frame: &FrameData, sign: f64) -> Result<f64> {
        Ok(sign * crate::ambient::residual(frame, &self.bg)?)
    }

    /// Wing curve parameter (angle) at the singular point of `side`.
    pub fn singular_parameter(&self, side: Side) -> f64 {
        match side {
            Side::Zero => self.intersection.s0,
            Side::Phi => self.intersection.s1,
        }
    }

    /// `y` at which the graph radius along `sigma` reaches `r` on `side`.
    pub fn y_at_radius(&self, side: Side, sigma: &[f64], r: f64) -> Result<f64> {
        let t = self.t();
        let sgn = if side == Side::Zero { -1.0 } else { 1.0 };
        let rad = |y: f64| t * norm(&self.neck_graph(side, sigma, &[], sgn * y).0);
        let mut hi = 1.0;
        while rad(hi) < r {
            hi *= 2.0;
            if hi > 1e9 {
                return Err(GlueError::OutOfDomain(format!("radius {r} not reached")));
            }
        }
        let mut lo = 0.0;
        if rad(lo) >= r {
            return Ok(0.0);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rad(mid) < r {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 * hi {
                break;
            }
        }
        Ok(sgn * 0.5 * (lo + hi))
    }

    /// `y` at which `r_hat = R` on `side`.
    pub fn y_neck_end(&self, side: Side, sigma: &[f64]) -> Result<f64> {
        self.y_at_radius(side, sigma, self.t() * self.params.r_hat)
    }
}

/// Hyperspherical coordinates with the polar axis along `e_m`:
/// `sigma_m = cos th_1`, ..., `(sigma_1, sigma_2) = prod(sin) (cos ph, sin ph)`.
/// Returns `sigma` and the coordinate derivatives.
pub fn sphere_point(angles: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = angles.len() + 1;
    // factor[i][k]: 0 -> 1, 1 -> sin, 2 -> cos
    let mut factors = vec![vec![0u8; m - 1]; m];
    let np = m - 2;
    for i in 0..m {
        // coordinate index from the top: sigma_m uses th_1
        let level = m - 1 - i;
        for (k, f) in factors[i].iter_mut().enumerate() {
            if k < np {
                if k < level.min(np) {
                    *f = 1;
                } else if k == level {
                    *f = 2;
                }
            } else if level >= np {
                // azimuth
                *f = if i == 0 { 2 } else { 1 };
            }
        }
    }
    let val = |f: u8, a: f64, d: bool| -> f64 {
        match (f, d) {
            (0, false) => 1.0,
            (0, true) => 0.0,
            (1, false) => a.sin(),
            (1, true) => a.cos(),
            (2, false) => a.cos(),
            _ => -a.sin(),
        }
    };
    let sigma: Vec<f64> = (0..m).map(|i| (0..m - 1).map(|k| val(factors[i][k], angles[k], false)).product()).collect();
    let tangents = (0..m - 1)
        .map(|d| {
            (0..m)
                .map(|i| (0..m - 1).map(|k| val(factors[i][k], angles[k], k == d)).product())
                .collect()
        })
        .collect();
    (sigma, tangents)
}

/// Product rule on `S^{m-1}` in the coordinates of [`sphere_point`]:
/// nodes and weights for the coordinate measure `d th_1 ... d ph` (the
/// volume density comes from the frame). For `m = 3` the polar rule is
/// Gauss-Legendre in `cos th`; otherwise in `th` itself.
pub fn sphere_rule(m: usize, n_polar: usize, n_azimuth: usize) -> Vec<(Vec<f64>, f64)> {
    let mut nodes: Vec<(Vec<f64>, f64)> = vec![(vec![], 1.0)];
    for _ in 0..m - 2 {
        let mut next = Vec::new();
        let polar: Vec<(f64, f64)> = if m == 3 {
            let (u, w) = gauss_legendre(n_polar);
            u.iter().zip(&w).map(|(u, w)| (u.acos(), w / (1.0 - u * u).sqrt())).collect()
        } else {
            let (x, w) = gauss_legendre_on(n_polar, 0.0, PI);
            x.into_iter().zip(w).collect()
        };
        for (a, wa) in &nodes {
            for (th, w) in &polar {
                let mut v = a.clone();
                v.push(*th);
                next.push((v, wa * w));
            }
        }
        nodes = next;
    }
    let mut out = Vec::new();
    for (a, wa) in &nodes {
        for k in 0..n_azimuth {
            let mut v = a.clone();
            v.push(2.0 * PI * (k as f64 + 0.5) / n_azimuth as f64);
            out.push((v, wa * 2.0 * PI / n_azimuth as f64));
        }
    }
    out
}

/// Volume density `sqrt(det g)` of a frame.
pub fn volume_density(frame: &FrameData) -> f64 {
    gram(&frame.jacobian).determinant().max(0.0).sqrt()
}

/// `|g_t - g_C|_{g_C}` at a tube point (zero on the pure neck where the
/// graph form is not used).
pub fn metric_deviation(tp: &TubePoint) -> f64 {
    tp.hess_norm * tp.hess_norm
}

#[doc(hidden)]
pub fn gd_param(x: f64) -> f64 {
    gd(x)
}

#[allow(dead_code)]
fn _i() -> C64 {
    I
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::{induced_metric_and_defect, residual};
    use crate::grim::build_configuration;
    use crate::lawlor::psi_profile;
    use std::f64::consts::FRAC_PI_4;

    pub(crate) fn demo_surface(t: f64) -> GluedSurface {
        let phi = vec![FRAC_PI_4, FRAC_PI_4, FRAC_PI_2];
        let config = build_configuration(3, &[RigidMotionSpec::new(phi.clone(), 0.0)], Parametrization::Arclength).unwrap();
        let params = neck_for_angles(&phi, 0.5).unwrap();
        let profile = psi_profile(&params, 400.0, 2001).unwrap();
        GluedSurface::new(&config, 0, profile, GlueParams { t, tau: 0.9, eps: 0.5, r_hat: 1.0 }).unwrap()
    }

    #[test]
    fn cutoff_values() {
        let spec = CutoffSpec::new(0.9, 3).unwrap();
        let t: f64 = 0.05;
        let tt = t.powf(0.9);
        assert_eq!(cutoff_eval(&spec, t, 0.5 * tt), (0.0, 0.0, 0.0));
        assert_eq!(cutoff_eval(&spec, t, 3.0 * tt), (1.0, 0.0, 0.0));
        assert!((cutoff_eval(&spec, t, 1.5 * tt).0 - 0.5).abs() < 1e-15);
        for &x in &[0.1, 0.37, 0.5, 0.81] {
            let h = 1e-6;
            let (_, d, dd) = smooth_step(x);
            let fd1 = (smooth_step(x + h).0 - smooth_step(x - h).0) / (2.0 * h);
            let fd2 = (smooth_step(x + h).1 - smooth_step(x - h).1) / (2.0 * h);
            assert!((d - fd1).abs() < 1e-7 && (dd - fd2).abs() < 1e-6);
        }
        let mut prev = 0.0;
        for k in 0..=100 {
            let v = smooth_step(k as f64 / 100.0).0;
            assert!(v >= prev);
            prev = v;
        }
        assert!(CutoffSpec::new(0.7, 3).is_err());
    }

    #[test]
    fn sphere_rule_integrates_polynomials() {
        for m in [3usize, 4] {
            let rule = sphere_rule(m, 8, 16);
            let mut vol = 0.0;
            let mut second = 0.0;
            for (a, w) in &rule {
                let (s, tang) = sphere_point(a);
                assert!((norm(&s) - 1.0).abs() < 1e-14);
                let g = DMatrix::from_fn(m - 1, m - 1, |i, j| tang[i].iter().zip(&tang[j]).map(|(p, q)| p * q).sum::<f64>());
                let dens = g.determinant().sqrt();
                vol += w * dens;
                second += w * dens * s[m - 1] * s[m - 1];
                for e in &tang {
                    assert!(e.iter().zip(&s).map(|(p, q)| p * q).sum::<f64>().abs() < 1e-14);
                }
            }
            let exact = if m == 3 { 4.0 * PI } else { 2.0 * PI * PI };
            assert!((vol - exact).abs() < 1e-6 * exact, "m={m} vol={vol}");
            assert!((second - exact / m as f64).abs() < 1e-6 * exact);
        }
    }

    #[test]
    fn flat_annulus_measure() {
        // flat cone r sigma over [R1, R2]
        let (r1, r2) = (0.3, 1.7);
        let (rs, wr) = gauss_legendre_on(12, r1, r2);
        let mut total = 0.0;
        for (a, w) in sphere_rule(3, 8, 8) {
            let (s, tang) = sphere_point(&a);
            for (r, wrr) in rs.iter().zip(&wr) {
                let mut cols: Vec<CVec> = tang.iter().map(|e| CVec::from_fn(3, |j, _| C64::new(r * e[j], 0.0))).collect();
                cols.push(CVec::from_fn(3, |j, _| C64::new(s[j], 0.0)));
                total += w * wrr * volume_density(&FrameData::new(CVec::zeros(3), CMat::from_columns(&cols)));
            }
        }
        let exact = 4.0 * PI * (r2.powi(3) - r1.powi(3)) / 3.0;
        assert!((total - exact).abs() < 1e-6 * exact);
    }

    #[test]
    fn cone_realizes_the_intersection_angles() {
        let s = demo_surface(0.05);
        let a = s.cone.angles().unwrap();
        for (x, y) in a.iter().zip(&[FRAC_PI_4, FRAC_PI_4, FRAC_PI_2]) {
            assert!((x - y).abs() < 1e-12);
        }
        for f in &s.cone.frames {
            assert!(crate::ambient::symplectic_defect(f) < 1e-12);
        }
    }

    #[test]
    fn seams_are_continuous_and_lagrangian() {
        let s = demo_surface(0.05);
        let t = s.t();
        let (sig, tang) = sphere_point(&[1.1, 0.4]);
        for side in [Side::Zero, Side::Phi] {
            for &r in &[t.powf(0.9), 2.0 * t.powf(0.9)] {
                let y = s.y_at_radius(side, &sig, r).unwrap();
                let a = s.tube_eval(&sig, &tang, y * (1.0 - 1e-12)).unwrap();
                let b = s.tube_eval(&sig, &tang, y * (1.0 + 1e-12)).unwrap();
                assert!((&a.frame.point - &b.frame.point).norm() < 1e-8);
            }
        }
        for k in 0..200 {
            let y = -12.0 + 24.0 * k as f64 / 199.0;
            let tp = s.tube_eval(&sig, &tang, y).unwrap();
            let (_, d) = induced_metric_and_defect(&tp.frame).unwrap();
            assert!(d < 1e-6, "defect {d} at y={y}");
        }
    }

    #[test]
    fn wing_region_is_an_exact_soliton_and_matches_the_wing_chart() {
        let s = demo_surface(0.05);
        let (sig, tang) = sphere_point(&[0.7, 2.0]);
        for side in [Side::Zero, Side::Phi] {
            let y0 = s.y_at_radius(side, &sig, 2.2 * 0.05f64.powf(0.9)).unwrap();
            for k in 0..10 {
                let y = y0 * (1.0 + 0.2 * k as f64);
                let tp = s.tube_eval(&sig, &tang, y).unwrap();
                if tp.r > s.params.eps {
                    break;
                }
                assert_eq!(tp.region, Region::Wing);
                assert!(residual(&tp.frame, &s.bg).unwrap().abs() < 1e-10);
            }
        }
        // the tube chart's wing zone lies on the wing charts
        for side in [Side::Zero, Side::Phi] {
            let y = s.y_at_radius(side, &sig, 0.3).unwrap();
            let tp = s.tube_eval(&sig, &tang, y).unwrap();
            let w = s.wing_eval(side, &s.wing_params_from_point(side, &tp.frame.point)).unwrap();
            assert!((&w.point - &tp.frame.point).norm() < 1e-10);
            assert!(residual(&w, &s.bg).unwrap().abs() < 1e-12);
        }
        let wp = s.wing_eval(Side::Phi, &[0.2, -0.3, 0.1]).unwrap();
        assert!(residual(&wp, &s.bg).unwrap().abs() < 1e-12);
    }

    #[test]
    fn neck_residual_scales_with_t() {
        let mut ratios = Vec::new();
        for &t in &[0.02, 0.04, 0.08] {
            let s = demo_surface(t);
            let mut worst: f64 = 0.0;
            for (a, _) in sphere_rule(3, 4, 4) {
                let (sig, tang) = sphere_point(&a);
                for k in 0..9 {
                    let y = -1.0 + 0.25 * k as f64;
                    let tp = s.tube_eval(&sig, &tang, y).unwrap();
                    if tp.region == Region::Neck {
                        worst = worst.max(residual(&tp.frame, &s.bg).unwrap().abs());
                    }
                }
            }
            ratios.push(worst / t);
        }
        let mx = ratios.iter().cloned().fold(0.0, f64::max);
        let mn = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(mx / mn < 10.0, "{ratios:?}");
    }

    #[test]
    fn neck_potential_gradient_matches_the_graph() {
        let s = demo_surface(0.05);
        let (sig, tang) = sphere_point(&[0.9, 1.3]);
        for &y in &[-6.0, -2.5, 2.5, 6.0] {
            let side = if y < 0.0 { Side::Zero } else { Side::Phi };
            let (_, yk, dxk, _) = s.neck_graph(side, &sig, &tang, y);
            // d v / d(coord) = <grad v, dX/d(coord)>
            let h = 1e-5;
            let dv_y = (s.neck_potential(side, &sig, y + h) - s.neck_potential(side, &sig, y - h)) / (2.0 * h);
            let want: f64 = (0..3).map(|j| yk[j] * dxk[(j, 2)]).sum();
            assert!((dv_y - want).abs() < 1e-8, "y={y}: {dv_y} vs {want}");
            for d in 0..2 {
                let mut ap = [0.9, 1.3];
                let mut am = ap;
                ap[d] += h;
                am[d] -= h;
                let dv = (s.neck_potential(side, &sphere_point(&ap).0, y) - s.neck_potential(side, &sphere_point(&am).0, y)) / (2.0 * h);
                let want: f64 = (0..3).map(|j| yk[j] * dxk[(j, d)]).sum();
                assert!((dv - want).abs() < 1e-8, "y={y} d={d}: {dv} vs {want}");
            }
        }
        // both ends decay, so the two anchors agree
        let far = s.neck_potential(Side::Phi, &sig, 400.0).abs();
        let near = s.neck_potential(Side::Phi, &sig, 100.0).abs();
        assert!((near / far).log(4.0) > 0.7);
        // decays like r^{2-m} towards either end
        let far = s.neck_potential(Side::Zero, &sig, -400.0).abs();
        let near = s.neck_potential(Side::Zero, &sig, -100.0).abs();
        assert!((near / far).log(4.0) > 0.7);
    }

    #[test]
    fn recovered_potentials_have_the_expected_rates() {
        let s = demo_surface(0.05);
        // wing: u(r) along x_m
        let c = s.curves[0];
        let recover = |n: usize| {
            let rs: Vec<f64> = (0..n)
                .map(|k| (0.005f64.ln() + k as f64 * (0.2f64.ln() - 0.005f64.ln()) / (n - 1) as f64).exp())
                .collect();
            let grads: Vec<f64> = rs.iter().map(|&r| c.slopes(c.solve(r).unwrap()).0).collect();
            let u = recover_potential(&rs, &grads, true);
            // the power-law closure is leading order only, so compare increments
            let e0 = c.potential(c.solve(rs[0]).unwrap());
            assert!((u[0] - e0).abs() < 1e-3 * e0.abs());
            let err = rs
                .iter()
                .enumerate()
                .map(|(k, &r)| {
                    let exact = c.potential(c.solve(r).unwrap());
                    ((u[k] - u[0]) - (exact - e0)).abs() / exact.abs()
                })
                .fold(0.0, f64::max);
            (rs, u, err)
        };
        let (_, _, coarse) = recover(41);
        let (rs, u, fine) = recover(161);
        assert!(fine < 5e-5, "relative increment error {fine}");
        // third order cumulative rule
        assert!(coarse / fine > 30.0, "{coarse} / {fine}");
        let slope = (u[40].abs().ln() - u[0].abs().ln()) / (rs[40].ln() - rs[0].ln());
        assert!(slope >= 2.7, "wing slope {slope}");
        // neck: v along sigma as y -> -inf, radial derivative from the graph
        let sig = vec![0.0, 0.6, 0.8];
        let ys: Vec<f64> = (0..41).map(|k| -(10f64.ln() + k as f64 * (1000f64.ln() - 10f64.ln()) / 40.0).exp()).collect();
        let mut r = Vec::new();
        let mut g = Vec::new();
        let mut exact = Vec::new();
        for &y in ys.iter() {
            let (xk, yk, dxk, _) = s.neck_graph(Side::Zero, &sig, &[vec![1.0, 0.0, 0.0], vec![0.0, 0.8, -0.6]], y);
            let rr = norm(&xk);
            let drdy: f64 = (0..3).map(|j| xk[j] * dxk[(j, 2)]).sum::<f64>() / rr;
            let dvdy: f64 = (0..3).map(|j| yk[j] * dxk[(j, 2)]).sum();
            r.push(rr);
            g.push(dvdy / drdy);
            exact.push(s.neck_potential(Side::Zero, &sig, y));
        }
        // the r-grid is only approximately log-uniform; resample on a uniform one
        let lr: Vec<f64> = r.iter().map(|v| v.ln()).collect();
        let n = 41;
        let ru: Vec<f64> = (0..n).map(|k| (lr[0] + k as f64 * (lr[n - 1] - lr[0]) / (n - 1) as f64).exp()).collect();
        let interp = |xs: &[f64], ys: &[f64], x: f64| {
            let i = xs.iter().position(|&v| v >= x).unwrap_or(xs.len() - 1).max(1);
            let w = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
            ys[i - 1] * (1.0 - w) + ys[i] * w
        };
        let gu: Vec<f64> = ru.iter().map(|&x| interp(&lr, &g, x.ln())).collect();
        let v = recover_potential(&ru, &gu, false);
        let ex = interp(&lr, &exact, ru[0].ln());
        assert!((v[0] - ex).abs() < 1e-3 * ex.abs(), "{} vs {ex}, last {} vs {}", v[0], v[n - 1], exact[n - 1]);
        let slope = (v[n - 1].abs().ln() - v[n - 11].abs().ln()) / (ru[n - 1].ln() - ru[n - 11].ln());
        assert!(slope <= 2.0 - 3.0 + 0.3, "neck slope {slope}");
        assert!(recover_potential(&ru, &vec![0.0; n], true).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn projections() {
        let s = demo_surface(0.05);
        // the cone itself
        let cone = s.cone.clone();
        let flat = |x: &[f64]| -> Result<FrameData> {
            let u = cone.frame(Side::Zero);
            let p = &cone.vertex + u * CVec::from_fn(3, |j, _| C64::new(x[j], 0.0));
            Ok(FrameData::new(p, u.clone()))
        };
        let pr = project_to_graph(flat, &s.cone, Side::Zero, &[0.0, 0.6, 0.8], 0.2, &[0.0, 0.0, 0.0]).unwrap();
        assert!(pr.grad.iter().all(|g| g.abs() < 1e-14) && pr.displacement.norm() < 1e-14);
        // the lower wing at r = eps / 2, against brute-force sampling along the curve
        let sigma = [0.0, 0.0, -1.0];
        let r = 0.25;
        let s0 = crate::grim::gd_inv(s.intersection.s0);
        let wing = |x: &[f64]| s.wing_eval(Side::Zero, x);
        let pr = project_to_graph(wing, &s.cone, Side::Zero, &sigma, r, &[0.0, 0.0, s0]).unwrap();
        let u = s.cone.frame(Side::Zero).adjoint();
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..200_001 {
            let sa = s0 - 1.0 + 1e-5 * k as f64;
            let f = s.wing_eval(Side::Zero, &[0.0, 0.0, sa]).unwrap().point;
            let loc = &u * (&f - &s.cone.vertex);
            let miss = (loc[2].re - r * sigma[2]).abs();
            if miss < best.0 {
                best = (miss, loc[2].im);
            }
        }
        assert!((pr.grad[2] - best.1).abs() < 1e-4, "{} vs {}", pr.grad[2], best.1);
        assert!(pr.displacement.norm() < 2.0 * r * r);
        // the scaled neck at r = 10 t: |grad| = t^m r^{1-m} up to a constant
        let mut g = Vec::new();
        for &t in &[0.05, 0.1] {
            let st = demo_surface(t);
            let sig = [0.48, 0.6, 0.64];
            let neck = |x: &[f64]| -> Result<FrameData> {
                let (a, b) = (x[0], x[1]);
                let th = a.clamp(0.0, PI);
                let (sg, tang) = sphere_point(&[th, b]);
                st.scaled_neck_eval(&sg, &tang, x[2]).map(|tp| tp.frame)
            };
            let guess_y = st.y_at_radius(Side::Zero, &sig, 10.0 * t).unwrap();
            let th0 = sig[2].acos();
            let ph0 = sig[1].atan2(sig[0]);
            let pr = project_to_graph(neck, &st.cone, Side::Zero, &sig, 10.0 * t, &[th0, ph0, guess_y]).unwrap();
            g.push(norm(&pr.grad) / (t.powi(3) * (10.0 * t).powi(-2)));
        }
        // exact scaling: the prefactor is t-independent
        assert!((g[1] / g[0] - 1.0).abs() < 1e-6, "{g:?}");
    }

    #[test]
    fn metric_converges_to_the_cone_on_the_transition() {
        let mut sups = Vec::new();
        for &t in &[0.08, 0.04, 0.02] {
            let s = demo_surface(t);
            let mut sup: f64 = 0.0;
            for (a, _) in sphere_rule(3, 6, 6) {
                let (sig, tang) = sphere_point(&a);
                for side in [Side::Zero, Side::Phi] {
                    let y0 = s.y_at_radius(side, &sig, t.powf(0.9)).unwrap();
                    let y1 = s.y_at_radius(side, &sig, 2.0 * t.powf(0.9)).unwrap();
                    for k in 0..=10 {
                        let y = y0 + (y1 - y0) * k as f64 / 10.0;
                        sup = sup.max(metric_deviation(&s.tube_eval(&sig, &tang, y).unwrap()));
                    }
                }
            }
            sups.push(sup);
        }
        assert!(sups[0] > sups[1] && sups[1] > sups[2], "{sups:?}");
    }
}
