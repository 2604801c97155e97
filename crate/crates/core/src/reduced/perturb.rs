//! Perturbation of the immersion by a potential `u`:
//! `F_u = F + J F_*(grad u)`, a Hamiltonian graph that is Lagrangian to
//! first order. Frames of `F_u` are obtained by differencing the
//! displacement over the mesh.

use super::mesh::{Boundary, ReducedMesh};
use super::norms::{first_partials, gradient_norms};
use super::operator::SparseRows;
use crate::ambient::{residual_fixed_volume, residual_fixed_volume_directional, CMat, CVec, FrameData, C64, I};
use crate::error::{GlueError, Result};
use serde::{Deserialize, Serialize};

/// Admissible size of `grad u` for the first-order chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "factor", rename_all = "snake_case")]
pub enum ChartBound {
    /// `max |grad u| <= c * min rho`.
    MinRho(f64),
    /// `|grad u|(x) <= c * rho(x)` at every node.
    Pointwise(f64),
    Unbounded,
}

impl Default for ChartBound {
    fn default() -> Self {
        ChartBound::Pointwise(0.1)
    }
}

/// Residual and Lagrangian defect of a perturbed immersion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedField {
    pub theta: Vec<f64>,
    /// Largest normalized symplectic pairing of the differenced frame.
    pub defect: Vec<f64>,
    /// The part of `defect` quadratic in the increments, `omega(dV_i, dV_j)`.
    /// The linear part vanishes for the continuous chart; on the mesh it is
    /// a second-order discretization error proportional to `u`.
    pub defect_quadratic: Vec<f64>,
    pub max_grad: f64,
}

/// Displacement `i g^{ab} d_b u F_a` at every node.
pub fn displacement(mesh: &ReducedMesh, u: &[f64]) -> Vec<CVec> {
    let [da, db] = first_partials(mesh, u);
    mesh.nodes
        .iter()
        .enumerate()
        .map(|(k, n)| {
            let g = n.ginv;
            let ua = g[0][0] * da[k] + g[0][1] * db[k];
            let ub = g[1][0] * da[k] + g[1][1] * db[k];
            let j = &n.frame.jacobian;
            (j.column(0) * C64::new(ua, 0.0) + j.column(1) * C64::new(ub, 0.0)) * I
        })
        .collect()
}

/// Differences of a vector field along one slice direction. Ghosts across
/// an axis are images under the half-turn in the first two coordinates.
fn vector_partial(mesh: &ReducedMesh, v: &[CVec], dir: usize) -> Vec<CVec> {
    let (n, h, lo, hi) = if dir == 0 {
        (mesh.na, mesh.ha(), mesh.bc[0], mesh.bc[1])
    } else {
        (mesh.nb, mesh.hb(), mesh.bc[2], mesh.bc[3])
    };
    let mut out = Vec::with_capacity(v.len());
    for i in 0..mesh.na {
        for j in 0..mesh.nb {
            let at = |k: usize| if dir == 0 { &v[mesh.idx(k, j)] } else { &v[mesh.idx(i, k)] };
            let k = if dir == 0 { i } else { j };
            let d: CVec = if k == 0 {
                match lo {
                    Boundary::Axis => comb(&[(1.0, at(1)), (-1.0, &mesh.axis_reflection(at(0)))], h),
                    Boundary::Dirichlet => comb(&[(-3.0, at(0)), (4.0, at(1)), (-1.0, at(2))], h),
                }
            } else if k + 1 == n {
                match hi {
                    Boundary::Axis => comb(&[(1.0, &mesh.axis_reflection(at(n - 1))), (-1.0, at(n - 2))], h),
                    Boundary::Dirichlet => comb(&[(3.0, at(n - 1)), (-4.0, at(n - 2)), (1.0, at(n - 3))], h),
                }
            } else {
                comb(&[(1.0, at(k + 1)), (-1.0, at(k - 1))], h)
            };
            out.push(d);
        }
    }
    out
}

/// `sum c_k v_k / (2h)`.
fn comb(terms: &[(f64, &CVec)], h: f64) -> CVec {
    let mut out = CVec::zeros(terms[0].1.len());
    for (c, v) in terms {
        out.axpy(C64::new(c / (2.0 * h), 0.0), v, C64::new(1.0, 0.0));
    }
    out
}

/// Point and frame increments induced by `u`; linear in `u`.
pub fn increments(mesh: &ReducedMesh, u: &[f64]) -> (Vec<CVec>, Vec<CMat>) {
    let v = displacement(mesh, u);
    let va = vector_partial(mesh, &v, 0);
    let vb = vector_partial(mesh, &v, 1);
    let m = mesh.m;
    let dv = (0..v.len())
        .map(|k| {
            let mut cols = vec![va[k].clone(), vb[k].clone()];
            // orbit columns A_j (F + V) = (F + V)_1 e_j on the slice
            for j in 1..m - 1 {
                let mut c = CVec::zeros(m);
                c[j] = v[k][0];
                cols.push(c);
            }
            CMat::from_columns(&cols)
        })
        .collect();
    (v, dv)
}

/// Largest `|omega(p_i, q_j)|` over column pairs, normalized by the
/// column lengths of `jac`.
fn normalized_defect(jac: &CMat, p: &CMat, q: &CMat) -> f64 {
    let m = jac.ncols();
    let norms: Vec<f64> = (0..m).map(|i| jac.column(i).norm()).collect();
    let mut d: f64 = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let w: f64 = p.column(i).iter().zip(q.column(j).iter()).map(|(a, b)| a.re * b.im - a.im * b.re).sum();
            d = d.max(w.abs() / (norms[i] * norms[j]).max(f64::MIN_POSITIVE));
        }
    }
    d
}

/// Check `u` against the chart bound; returns `max |grad u|_g`.
pub fn check_chart(mesh: &ReducedMesh, u: &[f64], bound: ChartBound) -> Result<f64> {
    let grads = gradient_norms(mesh, u);
    let max_grad = grads.iter().cloned().fold(0.0, f64::max);
    match bound {
        ChartBound::MinRho(c) => {
            let rho_min = mesh.nodes.iter().map(|n| n.rho).fold(f64::INFINITY, f64::min);
            if max_grad > c * rho_min {
                return Err(GlueError::ChartOverflow(format!(
                    "max |grad u| = {max_grad:e} exceeds {c} * min rho = {:e}",
                    c * rho_min
                )));
            }
        }
        ChartBound::Pointwise(c) => {
            let (worst, k) = grads
                .iter()
                .zip(&mesh.nodes)
                .enumerate()
                .map(|(k, (g, n))| (g / n.rho, k))
                .fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a });
            if worst > c {
                return Err(GlueError::ChartOverflow(format!(
                    "|grad u| / rho = {worst:e} exceeds {c} at node {k}"
                )));
            }
        }
        ChartBound::Unbounded => {}
    }
    Ok(max_grad)
}

/// `max |grad u|_g / rho`.
pub fn relative_gradient(mesh: &ReducedMesh, u: &[f64]) -> f64 {
    gradient_norms(mesh, u).iter().zip(&mesh.nodes).map(|(g, n)| g / n.rho).fold(0.0, f64::max)
}

fn perturbed_frame(n: &super::mesh::MeshNode, v: &CVec, dv: &CMat) -> FrameData {
    FrameData::new(&n.frame.point + v, &n.frame.jacobian + dv)
}

/// Residual of `F_u` with the volume element of the unperturbed metric,
/// so that its derivative at `u = 0` is the linearized operator.
pub fn perturbed_theta(mesh: &ReducedMesh, u: &[f64], bound: ChartBound) -> Result<PerturbedField> {
    let max_grad = check_chart(mesh, u, bound)?;
    let (v, dv) = increments(mesh, u);
    let mut theta = Vec::with_capacity(u.len());
    let mut defect = Vec::with_capacity(u.len());
    let mut defect_quadratic = Vec::with_capacity(u.len());
    for (k, n) in mesh.nodes.iter().enumerate() {
        let frame = perturbed_frame(n, &v[k], &dv[k]);
        theta.push(mesh.orientation * residual_fixed_volume(&frame, &mesh.bg, n.vol));
        defect.push(normalized_defect(&frame.jacobian, &frame.jacobian, &frame.jacobian));
        defect_quadratic.push(normalized_defect(&frame.jacobian, &dv[k], &dv[k]));
    }
    Ok(PerturbedField { theta, defect, defect_quadratic, max_grad })
}

/// Exact derivative of the discrete [`perturbed_theta`] at `u = 0` in the
/// direction `u`.
pub fn linearized_theta(mesh: &ReducedMesh, u: &[f64]) -> Result<Vec<f64>> {
    linearized_theta_at(mesh, None, u)
}

/// Derivative at `base` (or at 0) in the direction `w`. The increments are
/// linear in the potential, so only the residual is re-linearized.
pub fn linearized_theta_at(mesh: &ReducedMesh, base: Option<&[f64]>, w: &[f64]) -> Result<Vec<f64>> {
    let (v, dv) = increments(mesh, w);
    let shifted = base.map(|b| increments(mesh, b));
    mesh.nodes
        .iter()
        .enumerate()
        .map(|(k, n)| {
            let d = match &shifted {
                None => residual_fixed_volume_directional(&n.frame, &mesh.bg, n.vol, &v[k], &dv[k])?,
                Some((bv, bdv)) => {
                    let frame = perturbed_frame(n, &bv[k], &bdv[k]);
                    residual_fixed_volume_directional(&frame, &mesh.bg, n.vol, &v[k], &dv[k])?
                }
            };
            Ok(mesh.orientation * d)
        })
        .collect()
}

/// Reach of [`linearized_theta`] in index space: the displacement uses
/// first differences of `u`, and frames difference it again (one-sided at
/// Dirichlet sides).
const REACH: usize = 3;

/// Sparse matrix of [`linearized_theta`], assembled by probing with
/// interleaved seeds that cannot interact.
pub fn assemble_linearization(mesh: &ReducedMesh, base: Option<&[f64]>) -> Result<SparseRows> {
    let period = 2 * REACH + 1;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); mesh.len()];
    for ca in 0..period.min(mesh.na) {
        for cb in 0..period.min(mesh.nb) {
            let mut probe = vec![0.0; mesh.len()];
            for i in (ca..mesh.na).step_by(period) {
                for j in (cb..mesh.nb).step_by(period) {
                    probe[mesh.idx(i, j)] = 1.0;
                }
            }
            let resp = linearized_theta_at(mesh, base, &probe)?;
            for i in 0..mesh.na {
                for j in 0..mesh.nb {
                    let r = resp[mesh.idx(i, j)];
                    if r == 0.0 {
                        continue;
                    }
                    let si = seed_near(i, ca, period, mesh.na);
                    let sj = seed_near(j, cb, period, mesh.nb);
                    if let (Some(si), Some(sj)) = (si, sj) {
                        rows[mesh.idx(i, j)].push((mesh.idx(si, sj), r));
                    }
                }
            }
        }
    }
    Ok(SparseRows::from_rows(mesh.len(), rows))
}

/// The unique index `= c (mod period)` within `REACH` of `k`.
fn seed_near(k: usize, c: usize, period: usize, n: usize) -> Option<usize> {
    let lo = k.saturating_sub(REACH);
    let hi = (k + REACH).min(n - 1);
    (lo..=hi).find(|s| s % period == c)
}

/// Quadratic part `Q(du) = Theta(u) - Theta(0) - J u` with the exact
/// discrete linearization `J`.
pub fn quadratic_remainder(mesh: &ReducedMesh, theta0: &[f64], u: &[f64], bound: ChartBound) -> Result<Vec<f64>> {
    let full = perturbed_theta(mesh, u, bound)?;
    let lin = linearized_theta(mesh, u)?;
    Ok(full.theta.iter().zip(theta0).zip(&lin).map(|((a, b), c)| a - b - c).collect())
}
