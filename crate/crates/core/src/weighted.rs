//! Weighted Sobolev norms on the glued surface and the residual scan.
//!
//! The weight of order `j` is `e^{beta f / 2} rho^{-gamma + j}` against the
//! measure `rho^{-m} dV`. Norms are accumulated node by node with a
//! compensated sum in a fixed order, so repeated runs are bit-identical.

use crate::ambient::{gram, induced_metric_and_defect, residual};
use crate::cone::{sphere_point, sphere_rule, volume_density, GluedSurface, Region, Side};
use crate::error::{GlueError, Result};
use crate::quadrature::{gauss_legendre_on, Neumaier};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub k: usize,
    pub p: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl WeightSpec {
    pub fn new(k: usize, p: f64, beta: f64, gamma: f64) -> Result<Self> {
        if k > 3 || !(p > 1.0) {
            return Err(GlueError::Invalid(format!("unsupported weight order k = {k}, p = {p}")));
        }
        Ok(WeightSpec { k, p, beta, gamma })
    }

    /// Checked constructor for analysis runs: `beta in (-1, 0)`,
    /// `gamma in (2 - m, 0)`.
    pub fn analysis(k: usize, p: f64, beta: f64, gamma: f64, m: usize) -> Result<Self> {
        if !(beta > -1.0 && beta < 0.0) {
            return Err(GlueError::Invalid(format!("beta = {beta} outside (-1, 0)")));
        }
        if !(gamma > 2.0 - m as f64 && gamma < 0.0) {
            return Err(GlueError::Invalid(format!("gamma = {gamma} outside ({}, 0)", 2.0 - m as f64)));
        }
        Self::new(k, p, beta, gamma)
    }

    /// The target space of a second-order operator: `(beta + 1, gamma - 2)`.
    pub fn shifted(&self, k: usize) -> Self {
        WeightSpec { k, p: self.p, beta: self.beta + 1.0, gamma: self.gamma - 2.0 }
    }

    /// `tau (2 - gamma) + (1 - tau) m`.
    pub fn predicted_exponent(&self, tau: f64, m: usize) -> f64 {
        tau * (2.0 - self.gamma) + (1.0 - tau) * m as f64
    }
}

/// Value and gradient norm of a scalar field at one quadrature node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub value: f64,
    /// `|grad u|_g`; required when `k >= 1`.
    pub grad: Option<f64>,
    /// Quadrature weight for `dV_g`.
    pub weight: f64,
    pub rho: f64,
    pub f: f64,
    pub region: Region,
}

/// `p`-th powers of the norm split by region.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionPowers {
    pub neck: f64,
    pub inner: f64,
    pub transition: f64,
    pub wing: f64,
}

impl RegionPowers {
    pub fn total(&self) -> f64 {
        self.neck + self.inner + self.transition + self.wing
    }

    pub fn get(&self, r: Region) -> f64 {
        match r {
            Region::Neck => self.neck,
            Region::Inner => self.inner,
            Region::Transition => self.transition,
            Region::Wing => self.wing,
        }
    }
}

fn node_density(s: &FieldSample, spec: &WeightSpec, m: usize) -> Result<f64> {
    let base = (spec.beta * s.f / 2.0).exp() * s.rho.powf(-spec.gamma);
    let mut d = (base * s.value).abs().powf(spec.p);
    if spec.k >= 1 {
        let g = s.grad.ok_or(GlueError::IncompleteField)?;
        d += (base * s.rho * g).abs().powf(spec.p);
    }
    Ok(d * s.rho.powi(-(m as i32)) * s.weight)
}

/// Per-region `p`-th powers of the weighted norm.
pub fn weighted_norm_split(samples: &[FieldSample], spec: &WeightSpec, m: usize) -> Result<RegionPowers> {
    if spec.k > 1 {
        return Err(GlueError::Invalid("field samples carry at most first derivatives".into()));
    }
    let mut acc = [Neumaier::default(); 4];
    for s in samples {
        let idx = match s.region {
            Region::Neck => 0,
            Region::Inner => 1,
            Region::Transition => 2,
            Region::Wing => 3,
        };
        acc[idx].add(node_density(s, spec, m)?);
    }
    Ok(RegionPowers { neck: acc[0].sum(), inner: acc[1].sum(), transition: acc[2].sum(), wing: acc[3].sum() })
}

pub fn weighted_norm(samples: &[FieldSample], spec: &WeightSpec, m: usize) -> Result<f64> {
    let mut acc = Neumaier::default();
    for s in samples {
        acc.add(node_density(s, spec, m)?);
    }
    Ok(acc.sum().powf(1.0 / spec.p))
}

/// `max |e^{beta f/2} rho^{-gamma} u|`.
pub fn weighted_sup(samples: &[FieldSample], spec: &WeightSpec) -> f64 {
    samples
        .iter()
        .map(|s| ((spec.beta * s.f / 2.0).exp() * s.rho.powf(-spec.gamma) * s.value).abs())
        .fold(0.0, f64::max)
}

/// Node counts for [`sample_mesh`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub n_polar: usize,
    pub n_azimuth: usize,
    /// Gauss nodes per dyadic radial annulus (and per unit of the neck core).
    pub per_dyadic: usize,
}

impl Resolution {
    pub fn new(n_polar: usize, n_azimuth: usize, per_dyadic: usize) -> Result<Self> {
        if per_dyadic < 8 || n_polar < 4 || n_azimuth < 8 {
            return Err(GlueError::Invalid(format!(
                "resolution below minimum: {n_polar} x {n_azimuth}, {per_dyadic} per annulus"
            )));
        }
        Ok(Resolution { n_polar, n_azimuth, per_dyadic })
    }

    pub fn scaled(&self, k: usize) -> Self {
        Resolution { n_polar: self.n_polar * k, n_azimuth: self.n_azimuth * k, per_dyadic: self.per_dyadic * k }
    }
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution { n_polar: 8, n_azimuth: 16, per_dyadic: 8 }
    }
}

/// One quadrature node of the tube chart with the residual evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleNode {
    pub angles: Vec<f64>,
    pub y: f64,
    pub side: Side,
    pub region: Region,
    pub r: f64,
    pub rho: f64,
    pub f: f64,
    pub weight: f64,
    pub point: Vec<[f64; 2]>,
    pub theta: f64,
    pub grad_theta: f64,
    pub defect: f64,
}

impl SampleNode {
    pub fn field(&self) -> FieldSample {
        FieldSample {
            value: self.theta,
            grad: Some(self.grad_theta),
            weight: self.weight,
            rho: self.rho,
            f: self.f,
            region: self.region,
        }
    }
}

/// Residual and its gradient norm at a tube-chart point; the gradient is a
/// central difference in the chart coordinates, raised with `g^{-1}`.
fn theta_with_gradient(s: &GluedSurface, angles: &[f64], y: f64) -> Result<(crate::cone::TubePoint, f64, f64)> {
    let m = s.m;
    let eval = |a: &[f64], y: f64| -> Result<(crate::cone::TubePoint, f64)> {
        let (sig, tang) = sphere_point(a);
        let tp = s.tube_eval(&sig, &tang, y)?;
        let th = residual(&tp.frame, &s.bg)?;
        Ok((tp, th))
    };
    let (tp, th) = eval(angles, y)?;
    let mut d = vec![0.0; m];
    for (k, dk) in d.iter_mut().enumerate() {
        let (h, lo, hi) = if k + 1 < m {
            let h = 1e-5;
            let mut a = angles.to_vec();
            let mut b = angles.to_vec();
            a[k] -= h;
            b[k] += h;
            (h, eval(&a, y)?.1, eval(&b, y)?.1)
        } else {
            let h = 1e-5 * (1.0 + y.abs());
            (h, eval(angles, y - h)?.1, eval(angles, y + h)?.1)
        };
        *dk = (hi - lo) / (2.0 * h);
    }
    let g = gram(&tp.frame.jacobian);
    let ginv = g.try_inverse().ok_or_else(|| GlueError::DegenerateFrame("singular induced metric".into()))?;
    let dv = nalgebra::DVector::from_vec(d);
    let grad_sq = (dv.transpose() * ginv * &dv)[(0, 0)];
    Ok((tp, th, grad_sq.max(0.0).sqrt()))
}

/// Samples of the glued surface out to the outer radius `eps` on both
/// sides, with the residual, its gradient and the `dV` weights.
pub fn sample_mesh(s: &GluedSurface, res: &Resolution) -> Result<Vec<SampleNode>> {
    let m = s.m;
    let t = s.t();
    let tt = t.powf(s.params.tau);
    let mut out = Vec::new();
    for (angles, w_sphere) in sphere_rule(m, res.n_polar, res.n_azimuth) {
        let (sig, _) = sphere_point(&angles);
        // breakpoints in y on each side
        let mut segs: Vec<(f64, f64, usize)> = Vec::new();
        let y0 = s.y_neck_end(Side::Zero, &sig)?;
        let y1 = s.y_neck_end(Side::Phi, &sig)?;
        let core = ((y1 - y0).abs().max(1.0)).ceil() as usize;
        segs.push((y0, y1, res.per_dyadic * core.min(4)));
        for side in [Side::Zero, Side::Phi] {
            let radii = [t * s.params.r_hat, tt, 2.0 * tt, s.params.eps];
            let ys: Vec<f64> = radii.iter().map(|&r| s.y_at_radius(side, &sig, r)).collect::<Result<_>>()?;
            for k in 0..3 {
                let dyadic = (radii[k + 1] / radii[k]).log2().max(0.25);
                // the cutoff zone gets extra panels
                let panels = if k == 1 { 4 } else { dyadic.ceil() as usize };
                let (a, b) = (ys[k], ys[k + 1]);
                for j in 0..panels {
                    let pa = a + (b - a) * j as f64 / panels as f64;
                    let pb = a + (b - a) * (j + 1) as f64 / panels as f64;
                    segs.push((pa, pb, res.per_dyadic));
                }
            }
        }
        for (a, b, n) in segs {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (ys, ws) = gauss_legendre_on(n, lo, hi);
            for (y, wy) in ys.into_iter().zip(ws) {
                let (tp, th, gth) = theta_with_gradient(s, &angles, y)?;
                let (_, defect) = induced_metric_and_defect(&tp.frame)?;
                out.push(SampleNode {
                    angles: angles.clone(),
                    y,
                    side: tp.side,
                    region: tp.region,
                    r: tp.r,
                    rho: tp.rho,
                    f: s.bg.f(&tp.frame.point),
                    weight: w_sphere * wy * volume_density(&tp.frame),
                    point: tp.frame.point.iter().map(|z| [z.re, z.im]).collect(),
                    theta: th,
                    grad_theta: gth,
                    defect,
                });
            }
        }
    }
    Ok(out)
}

/// Residual norms of one glued surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub t: f64,
    pub norm_total: f64,
    #[serde(rename = "norm_I")]
    pub norm_neck: f64,
    #[serde(rename = "norm_II")]
    pub norm_inner: f64,
    #[serde(rename = "norm_III")]
    pub norm_transition: f64,
    pub norm_wing: f64,
    pub rho_min: f64,
    pub nodes: usize,
    pub sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub rows: Vec<ScanRow>,
    pub slope: f64,
    pub predicted: f64,
    pub deviation: f64,
    /// Fitted slopes of the neck, inner and transition contributions.
    pub region_slopes: [f64; 3],
    /// Empirical prefactor `norm / t^predicted` at the smallest t.
    pub prefactor: f64,
    /// t values used by the fit.
    pub fit_ts: Vec<f64>,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Residual norm in `W^{1,p}_{beta+1, gamma-2, t}` for one surface.
pub fn residual_row(s: &GluedSurface, spec: &WeightSpec, res: &Resolution) -> Result<ScanRow> {
    let nodes = sample_mesh(s, res)?;
    let fields: Vec<FieldSample> = nodes.iter().map(|n| n.field()).collect();
    let target = spec.shifted(1);
    let split = weighted_norm_split(&fields, &target, s.m)?;
    let p = target.p;
    Ok(ScanRow {
        t: s.t(),
        norm_total: split.total().powf(1.0 / p),
        norm_neck: split.neck.powf(1.0 / p),
        norm_inner: split.inner.powf(1.0 / p),
        norm_transition: split.transition.powf(1.0 / p),
        norm_wing: split.wing.powf(1.0 / p),
        rho_min: nodes.iter().map(|n| n.rho).fold(f64::INFINITY, f64::min),
        nodes: nodes.len(),
        sup: weighted_sup(&fields, &target),
    })
}

/// Norms over a family of glued surfaces and the log-log slope against t.
/// `spec` is the domain weight; the residual is measured in the shifted
/// space. With five or more scales the largest one is left out of the fit.
pub fn error_scan(surfaces: &[GluedSurface], spec: &WeightSpec, res: &Resolution) -> Result<ScanReport> {
    if surfaces.len() < 2 {
        return Err(GlueError::Invalid("error scan needs at least two scales".into()));
    }
    let ts: Vec<f64> = surfaces.iter().map(|s| s.t()).collect();
    let (tmin, tmax) = ts.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &t| (a.min(t), b.max(t)));
    if tmax / tmin < 5.0 - 1e-9 {
        return Err(GlueError::Invalid(format!("t range {tmin}..{tmax} spans less than a factor of 5")));
    }
    let mut rows = Vec::new();
    for s in surfaces {
        rows.push(residual_row(s, spec, res)?);
    }
    let mut fit: Vec<&ScanRow> = rows.iter().collect();
    if fit.len() >= 5 {
        let imax = fit.iter().enumerate().max_by(|a, b| a.1.t.total_cmp(&b.1.t)).map(|(i, _)| i).unwrap();
        fit.remove(imax);
    }
    let fx: Vec<f64> = fit.iter().map(|r| r.t).collect();
    let slope = loglog_slope(&fx, &fit.iter().map(|r| r.norm_total).collect::<Vec<_>>());
    let region_slopes = [
        loglog_slope(&fx, &fit.iter().map(|r| r.norm_neck).collect::<Vec<_>>()),
        loglog_slope(&fx, &fit.iter().map(|r| r.norm_inner).collect::<Vec<_>>()),
        loglog_slope(&fx, &fit.iter().map(|r| r.norm_transition).collect::<Vec<_>>()),
    ];
    let s0 = &surfaces[0];
    let predicted = spec.predicted_exponent(s0.params.tau, s0.m);
    let smallest = rows.iter().min_by(|a, b| a.t.total_cmp(&b.t)).unwrap();
    Ok(ScanReport {
        prefactor: smallest.norm_total / smallest.t.powf(predicted),
        rows,
        slope,
        predicted,
        deviation: (slope - predicted) / predicted,
        region_slopes,
        fit_ts: fx,
    })
}

/// `r^{-2}`-scaled sup of `g_t - g_C` over the transition annulus.
pub fn transition_metric_sup(s: &GluedSurface, n_sphere: usize, n_radial: usize) -> Result<f64> {
    let t = s.t();
    let tt = t.powf(s.params.tau);
    let mut sup: f64 = 0.0;
    for (a, _) in sphere_rule(s.m, n_sphere, 2 * n_sphere) {
        let (sig, tang) = sphere_point(&a);
        for side in [Side::Zero, Side::Phi] {
            let y0 = s.y_at_radius(side, &sig, tt)?;
            let y1 = s.y_at_radius(side, &sig, 2.0 * tt)?;
            for k in 0..=n_radial {
                let y = y0 + (y1 - y0) * k as f64 / n_radial as f64;
                sup = sup.max(crate::cone::metric_deviation(&s.tube_eval(&sig, &tang, y)?));
            }
        }
    }
    Ok(sup)
}
