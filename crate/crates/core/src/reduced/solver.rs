//! Scans and iterations on reduced meshes: smallest singular values of the
//! weighted operator, the frozen-linearization fixed-point iteration and
//! the scaling checks for the quadratic remainder.

use super::mesh::{Boundary, MeshResolution, ReducedMesh};
use super::norms::mesh_norm;
use super::operator::{assemble_l, assemble_plain, sigma_min, OperatorTerms, SparseRows};
use super::perturb::{
    assemble_linearization, linearized_theta, perturbed_theta, quadratic_remainder, relative_gradient, ChartBound,
};
use crate::cone::GluedSurface;
use crate::error::{GlueError, Result};
use crate::weighted::{loglog_slope, WeightSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Tolerance and step budget of the inverse iteration.
pub const SIGMA_TOL: f64 = 1e-10;
pub const SIGMA_MAX_ITER: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaRow {
    pub t: f64,
    pub sigma: f64,
    /// Same mesh with `beta = gamma = 0`, for contrast.
    pub sigma_unweighted: f64,
    pub iterations: usize,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaScan {
    pub rows: Vec<SigmaRow>,
    /// `max sigma / min sigma` over the sweep.
    pub ratio: f64,
    pub all_positive: bool,
    pub r_out: f64,
    pub resolution: MeshResolution,
}

pub fn sigma_of(mesh: &ReducedMesh, spec: &WeightSpec) -> Result<(f64, usize)> {
    let s = sigma_min(&assemble_l(mesh, spec).weighted, SIGMA_TOL, SIGMA_MAX_ITER)?;
    Ok((s.sigma, s.iterations))
}

/// `sigma_min` of the weighted operator at each surface, with one mesh
/// policy for the whole sweep.
pub fn sigma_scan(surfaces: &[GluedSurface], spec: &WeightSpec, res: &MeshResolution, r_out: f64) -> Result<SigmaScan> {
    let plain = WeightSpec::new(spec.k, spec.p, 0.0, 0.0)?;
    let mut rows = Vec::with_capacity(surfaces.len());
    for s in surfaces {
        let mesh = ReducedMesh::glued(s, res, r_out)?;
        let (sigma, iterations) = sigma_of(&mesh, spec)?;
        let (sigma_unweighted, _) = sigma_of(&mesh, &plain)?;
        rows.push(SigmaRow { t: s.t(), sigma, sigma_unweighted, iterations, nodes: mesh.len() });
    }
    let max = rows.iter().map(|r| r.sigma).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.sigma).fold(f64::INFINITY, f64::min);
    Ok(SigmaScan { ratio: max / min, all_positive: min > 0.0, rows, r_out, resolution: *res })
}

/// Smooth random potential built from a few boundary-compatible modes:
/// cosines across an axis, sines vanishing on Dirichlet sides.
pub fn random_field(mesh: &ReducedMesh, rng: &mut ChaCha8Rng, modes: usize) -> Vec<f64> {
    let basis = |x: f64, p: usize, lo: Boundary, hi: Boundary| -> f64 {
        let p = p as f64;
        match (lo, hi) {
            (Boundary::Axis, Boundary::Axis) => (p * PI * x).cos(),
            (Boundary::Axis, Boundary::Dirichlet) => ((p + 0.5) * PI * x).cos(),
            (Boundary::Dirichlet, Boundary::Axis) => ((p + 0.5) * PI * x).sin(),
            (Boundary::Dirichlet, Boundary::Dirichlet) => ((p + 1.0) * PI * x).sin(),
        }
    };
    let coeffs: Vec<f64> = (0..modes * modes)
        .map(|k| {
            let (p, q) = (k / modes, k % modes);
            rng.random_range(-1.0..1.0) / (1.0 + (p + q) as f64).powi(2)
        })
        .collect();
    let (a0, a1) = mesh.a_range;
    let (b0, b1) = mesh.b_range;
    mesh.nodes
        .iter()
        .map(|n| {
            let x = (n.a - a0) / (a1 - a0);
            let y = (n.b - b0) / (b1 - b0);
            let mut v = 0.0;
            for p in 0..modes {
                let bx = basis(x, p, mesh.bc[0], mesh.bc[1]);
                for q in 0..modes {
                    v += coeffs[p * modes + q] * bx * basis(y, q, mesh.bc[2], mesh.bc[3]);
                }
            }
            v
        })
        .collect()
}

/// Rescale `u` so that `max |grad u| / rho` equals `target`.
pub fn scaled_to(mesh: &ReducedMesh, u: &[f64], target: f64) -> Vec<f64> {
    let g = relative_gradient(mesh, u);
    if g == 0.0 {
        return u.to_vec();
    }
    u.iter().map(|x| x * target / g).collect()
}

/// Which frozen operator drives the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linearization {
    /// Exact derivative of the discrete residual at `u = 0`.
    Exact,
    /// The finite-volume operator used for the singular value scans.
    FiniteVolume,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardConfig {
    pub max_iter: usize,
    /// Required reduction factor of the weighted residual.
    pub reduction: f64,
    /// Discretization floor; reaching it also counts as success.
    pub floor: f64,
    pub linearization: Linearization,
    /// Re-linearize at every iterate (Newton) instead of freezing at 0.
    pub relinearize: bool,
    pub chart: ChartBound,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            max_iter: 5,
            reduction: 100.0,
            floor: 0.0,
            linearization: Linearization::Exact,
            relinearize: false,
            chart: ChartBound::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardStep {
    pub iteration: usize,
    /// `||Theta(u_k)||` in `W^{1,2}_{beta+1, gamma-2}`.
    pub residual: f64,
    pub max_defect: f64,
    /// Quadratic part of the defect, compared with `defect_bound`.
    pub max_defect_quadratic: f64,
    pub max_grad: f64,
    pub relative_grad: f64,
    /// `c (max |grad u|)^2` with the calibrated `c`.
    pub defect_bound: f64,
    /// `||u_k||` in `W^{3,2}_{beta, gamma}`.
    pub u_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    pub steps: Vec<PicardStep>,
    pub reduction: f64,
    pub converged: bool,
    pub floor_reached: bool,
    pub defect_constant: f64,
    pub defect_within_bound: bool,
    /// `t^alpha` for `alpha` at the two ends of `(2 - gamma, tau (2 - gamma) + (1 - tau) m)`.
    pub ball_radii: Option<(f64, f64)>,
    pub stop_reason: String,
}

/// `c = max defect / (max |grad u|)^2` over probe fields, using the part of
/// the defect that is quadratic in the increments.
pub fn calibrate_defect(mesh: &ReducedMesh, probes: &[Vec<f64>]) -> Result<f64> {
    let mut c: f64 = 0.0;
    for u in probes {
        let u = scaled_to(mesh, u, 1e-3);
        let p = perturbed_theta(mesh, &u, ChartBound::Unbounded)?;
        if p.max_grad > 0.0 {
            let d = p.defect_quadratic.iter().cloned().fold(0.0, f64::max);
            c = c.max(d / (p.max_grad * p.max_grad));
        }
    }
    Ok(c)
}

fn frozen_operator(mesh: &ReducedMesh, lin: Linearization, base: Option<&[f64]>) -> Result<SparseRows> {
    match lin {
        Linearization::Exact => assemble_linearization(mesh, base),
        Linearization::FiniteVolume => Ok(assemble_plain(mesh, OperatorTerms::Full)),
    }
}

/// `u_{k+1} = u_k - L^{-1} Theta(u_k)` with `L` frozen at `u = 0`.
pub fn picard_iterate(
    mesh: &ReducedMesh,
    spec: &WeightSpec,
    cfg: &PicardConfig,
    tau: Option<f64>,
) -> Result<(PicardReport, Vec<f64>)> {
    let out_spec = spec.shifted(1);
    let u_spec = WeightSpec { k: 3, ..*spec };
    let n = mesh.len();
    let mut u = vec![0.0; n];
    let lu = frozen_operator(mesh, cfg.linearization, None)?.factor()?;
    let theta0 = perturbed_theta(mesh, &u, cfg.chart)?;
    let first = lu.solve(&theta0.theta);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut probes = vec![first];
    for _ in 0..4 {
        probes.push(random_field(mesh, &mut rng, 4));
    }
    let c = calibrate_defect(mesh, &probes)?;
    let r0 = mesh_norm(mesh, &theta0.theta, &out_spec);
    let mut steps = Vec::new();
    let mut history = Vec::new();
    let mut theta = theta0;
    let mut growths = 0;
    let mut stop_reason = format!("iteration budget of {} exhausted", cfg.max_iter);
    let (mut converged, mut floor_reached) = (false, false);
    for it in 0..=cfg.max_iter {
        let r = mesh_norm(mesh, &theta.theta, &out_spec);
        let max_defect = theta.defect.iter().cloned().fold(0.0, f64::max);
        let max_defect_quadratic = theta.defect_quadratic.iter().cloned().fold(0.0, f64::max);
        steps.push(PicardStep {
            iteration: it,
            residual: r,
            max_defect,
            max_defect_quadratic,
            max_grad: theta.max_grad,
            relative_grad: relative_gradient(mesh, &u),
            defect_bound: c * theta.max_grad * theta.max_grad,
            u_norm: mesh_norm(mesh, &u, &u_spec),
        });
        history.push(r);
        if r <= r0 / cfg.reduction || r <= 1e-14 {
            converged = true;
            stop_reason = format!("residual reduced by {:.3e}", r0 / r.max(f64::MIN_POSITIVE));
            break;
        }
        if r <= cfg.floor {
            floor_reached = true;
            stop_reason = format!("discretization floor {:.3e} reached", cfg.floor);
            break;
        }
        if it > 0 && r > history[it - 1] {
            growths += 1;
            if growths >= 2 {
                return Err(GlueError::IterationDiverged { step: it, history });
            }
        } else {
            growths = 0;
        }
        if it == cfg.max_iter {
            break;
        }
        let du = if cfg.relinearize && it > 0 {
            frozen_operator(mesh, cfg.linearization, Some(&u))?.factor()?.solve(&theta.theta)
        } else {
            lu.solve(&theta.theta)
        };
        for (a, b) in u.iter_mut().zip(&du) {
            *a -= b;
        }
        theta = perturbed_theta(mesh, &u, cfg.chart)?;
    }
    let last = steps.last().map_or(r0, |s| s.residual);
    let defect_within_bound = steps.iter().all(|s| s.max_defect_quadratic <= s.defect_bound);
    let ball_radii = match (mesh.t, tau) {
        (Some(t), Some(tau)) => {
            let lo = 2.0 - spec.gamma;
            let hi = spec.predicted_exponent(tau, mesh.m);
            Some((t.powf(hi), t.powf(lo)))
        }
        _ => None,
    };
    let report = PicardReport {
        reduction: r0 / last.max(f64::MIN_POSITIVE),
        steps,
        converged,
        floor_reached,
        defect_constant: c,
        defect_within_bound,
        ball_radii,
        stop_reason,
    };
    Ok((report, u))
}

/// Log-log slope of `||Theta(s u) - Theta(0) - s J u||` against `s`.
pub fn remainder_slope(mesh: &ReducedMesh, u: &[f64], s_values: &[f64], spec: &WeightSpec) -> Result<(f64, Vec<f64>)> {
    let theta0 = mesh.base_residual();
    let out_spec = spec.shifted(1);
    let mut norms = Vec::with_capacity(s_values.len());
    for &s in s_values {
        let us: Vec<f64> = u.iter().map(|x| s * x).collect();
        let q = quadratic_remainder(mesh, &theta0, &us, ChartBound::Unbounded)?;
        norms.push(mesh_norm(mesh, &q, &out_spec));
    }
    Ok((loglog_slope(s_values, &norms), norms))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationCheck {
    pub s_values: Vec<f64>,
    pub slopes: Vec<f64>,
    pub norms: Vec<Vec<f64>>,
}

/// Remainder slopes for `trials` random fields with `max |grad u| / rho =
/// amplitude` at `s = 1`.
pub fn linearization_check(mesh: &ReducedMesh, spec: &WeightSpec, trials: usize, seed: u64, amplitude: f64) -> Result<LinearizationCheck> {
    let s_values: Vec<f64> = (0..5).map(|k| 10f64.powf(-3.0 + 0.5 * k as f64)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = Vec::new();
    let mut norms = Vec::new();
    for _ in 0..trials {
        let u = scaled_to(mesh, &random_field(mesh, &mut rng, 4), amplitude);
        let (slope, n) = remainder_slope(mesh, &u, &s_values, spec)?;
        slopes.push(slope);
        norms.push(n);
    }
    Ok(LinearizationCheck { s_values, slopes, norms })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadTrial {
    pub t: f64,
    pub ratio: f64,
    pub norm_u: f64,
    pub norm_v: f64,
    pub norm_diff: f64,
    pub q_diff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSummary {
    pub t: f64,
    pub max: f64,
    pub median: f64,
    pub max_over_median: f64,
    /// `max ratio / (C t^{gamma - 2})`; at most 1 when inside the envelope.
    pub envelope_use: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadReport {
    pub trials: Vec<QuadTrial>,
    pub summaries: Vec<QuadSummary>,
    /// `C` with `C t_max^{gamma - 2}` equal to the largest ratio at `t_max`.
    pub prefactor: f64,
    pub bounded: bool,
    pub within_envelope: bool,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `||Q(du) - Q(dv)|| / (||u - v|| (||u|| + ||v||))` over random pairs; the
/// remainder in `W^{1,2}_{beta+1, gamma-2}`, potentials in `W^{3,2}_{beta, gamma}`.
pub fn quadratic_scaling_check(
    meshes: &[ReducedMesh],
    spec: &WeightSpec,
    trials: usize,
    seed: u64,
    amplitude: f64,
) -> Result<QuadReport> {
    if meshes.is_empty() || trials == 0 {
        return Err(GlueError::Invalid("quadratic check needs meshes and trials".into()));
    }
    let out_spec = spec.shifted(1);
    let u_spec = WeightSpec { k: 3, ..*spec };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::new();
    for mesh in meshes {
        let t = mesh.t.ok_or_else(|| GlueError::Invalid("quadratic check needs glued meshes".into()))?;
        let theta0 = mesh.base_residual();
        for _ in 0..trials {
            let au = amplitude * rng.random_range(0.2..1.0);
            let av = amplitude * rng.random_range(0.2..1.0);
            let u = scaled_to(mesh, &random_field(mesh, &mut rng, 4), au);
            let v = scaled_to(mesh, &random_field(mesh, &mut rng, 4), av);
            let qu = quadratic_remainder(mesh, &theta0, &u, ChartBound::Unbounded)?;
            let qv = quadratic_remainder(mesh, &theta0, &v, ChartBound::Unbounded)?;
            let dq: Vec<f64> = qu.iter().zip(&qv).map(|(a, b)| a - b).collect();
            let d: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
            let q_diff = mesh_norm(mesh, &dq, &out_spec);
            let norm_u = mesh_norm(mesh, &u, &u_spec);
            let norm_v = mesh_norm(mesh, &v, &u_spec);
            let norm_diff = mesh_norm(mesh, &d, &u_spec);
            all.push(QuadTrial { t, ratio: q_diff / (norm_diff * (norm_u + norm_v)), norm_u, norm_v, norm_diff, q_diff });
        }
    }
    let t_max = all.iter().map(|x| x.t).fold(f64::NEG_INFINITY, f64::max);
    let exponent = spec.gamma - 2.0;
    let top = all.iter().filter(|x| x.t == t_max).map(|x| x.ratio).fold(0.0, f64::max);
    let prefactor = top / t_max.powf(exponent);
    let mut summaries = Vec::new();
    for mesh in meshes {
        let t = mesh.t.unwrap_or(0.0);
        let mut r: Vec<f64> = all.iter().filter(|x| x.t == t).map(|x| x.ratio).collect();
        let max = r.iter().cloned().fold(0.0, f64::max);
        let med = median(&mut r);
        summaries.push(QuadSummary {
            t,
            max,
            median: med,
            max_over_median: max / med,
            envelope_use: max / (prefactor * t.powf(exponent)),
        });
    }
    let bounded = summaries.iter().all(|s| s.max_over_median < 50.0);
    // the calibration point itself sits at 1 up to rounding
    let within_envelope = summaries.iter().all(|s| s.envelope_use <= 1.0 + 1e-12);
    Ok(QuadReport { trials: all, summaries, prefactor, bounded, within_envelope })
}

/// `max |L_fv u - J u|` weighted by `sqrt(dV)` over nodes at least
/// `margin` away from the truncation in the `b` direction.
fn consistency_error(mesh: &ReducedMesh, u: &[f64], margin: f64) -> Result<f64> {
    let fv = assemble_plain(mesh, OperatorTerms::Full).apply(u);
    let lin = linearized_theta(mesh, u)?;
    let mut acc = 0.0;
    for (k, n) in mesh.nodes.iter().enumerate() {
        if n.b - mesh.b_range.0 >= margin && mesh.b_range.1 - n.b >= margin {
            acc += (fv[k] - lin[k]).powi(2) * n.weight;
        }
    }
    Ok(acc.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub h: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
}

/// Agreement of the finite-volume operator with the exact derivative of the
/// perturbed residual under refinement, for a smooth test potential.
pub fn consistency_check(s: &GluedSurface, base: &MeshResolution, levels: &[usize], r_out: f64) -> Result<ConsistencyReport> {
    let mut h = Vec::new();
    let mut errors = Vec::new();
    for &k in levels {
        let mesh = ReducedMesh::glued(s, &base.scaled(k), r_out)?;
        let u: Vec<f64> = mesh.nodes.iter().map(|n| (1.0 + 0.3 * n.a.cos()) * (-(n.b - 0.5).powi(2)).exp()).collect();
        errors.push(consistency_error(&mesh, &u, 1.0)?);
        h.push(mesh.hb());
    }
    let slope = loglog_slope(&h, &errors);
    Ok(ConsistencyReport { h, errors, slope })
}
