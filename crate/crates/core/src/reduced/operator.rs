//! Finite-volume discretization of
//! `L u = e^{-f/2} (cos theta_f (Delta u - <grad f, grad u>/2) - sin theta_f <grad theta_f, grad u>)`
//! on a reduced mesh, its weighted conjugate, and sparse factorizations.

use super::mesh::{Boundary, ReducedMesh};
use crate::error::{GlueError, Result};
use crate::weighted::WeightSpec;
use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use serde::{Deserialize, Serialize};

/// Compressed-row matrix with rows sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    pub n: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn from_rows(n: usize, mut rows: Vec<Vec<(usize, f64)>>) -> Self {
        for r in rows.iter_mut() {
            r.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(r.len());
            for &(c, v) in r.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            *r = merged;
        }
        SparseRows { n, rows }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(c, v)| v * x[c]).sum()).collect()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `diag(left) * self * diag(right)`.
    pub fn scaled(&self, left: &[f64], right: &[f64]) -> Self {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().map(|&(c, v)| (c, left[i] * v * right[c])).collect())
            .collect();
        SparseRows { n: self.n, rows }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, r) in self.rows.iter().enumerate() {
            for &(c, v) in r {
                d[i][c] = v;
            }
        }
        d
    }

    pub fn factor(&self) -> Result<Factored> {
        let trip: Vec<Triplet<usize, usize, f64>> = self
            .rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().map(move |&(c, v)| Triplet { row: i, col: c, val: v }))
            .collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &trip)
            .map_err(|e| GlueError::SpectralFailure(format!("sparse assembly: {e:?}")))?;
        let lu = mat.sp_lu().map_err(|e| GlueError::SpectralFailure(format!("sparse LU: {e:?}")))?;
        Ok(Factored { n: self.n, lu })
    }
}

/// Sparse LU factorization.
pub struct Factored {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl Factored {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(x.as_mut());
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_transpose_in_place(x.as_mut());
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

/// Coordinate partials of a geometric node field (even across an axis,
/// one-sided second order at a Dirichlet side).
pub fn field_partials(mesh: &ReducedMesh, field: &[f64], i: usize, j: usize) -> [f64; 2] {
    let d = |k: usize, n: usize, h: f64, lo: Boundary, hi: Boundary, at: &dyn Fn(usize) -> f64| -> f64 {
        if k == 0 {
            match lo {
                Boundary::Axis => (at(1) - at(0)) / (2.0 * h),
                Boundary::Dirichlet => (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h),
            }
        } else if k + 1 == n {
            match hi {
                Boundary::Axis => (at(n - 1) - at(n - 2)) / (2.0 * h),
                Boundary::Dirichlet => (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h),
            }
        } else {
            (at(k + 1) - at(k - 1)) / (2.0 * h)
        }
    };
    let da = d(i, mesh.na, mesh.ha(), mesh.bc[0], mesh.bc[1], &|k| field[mesh.idx(k, j)]);
    let db = d(j, mesh.nb, mesh.hb(), mesh.bc[2], mesh.bc[3], &|k| field[mesh.idx(i, k)]);
    [da, db]
}

/// Stencil of the central-difference partials of `u` at a node, with the
/// ghost rules of the mesh.
pub fn gradient_stencil(mesh: &ReducedMesh, i: usize, j: usize) -> [Vec<(usize, f64)>; 2] {
    let (i, j) = (i as isize, j as isize);
    let mut out = [Vec::new(), Vec::new()];
    let pairs = [((i + 1, j), (i - 1, j), mesh.ha()), ((i, j + 1), (i, j - 1), mesh.hb())];
    for (k, (p, q, h)) in pairs.into_iter().enumerate() {
        for (node, w) in [(p, 1.0), (q, -1.0)] {
            if let Some((idx, s)) = mesh.resolve(node.0, node.1) {
                out[k].push((idx, w * s / (2.0 * h)));
            }
        }
    }
    out
}

fn push(row: &mut Vec<(usize, f64)>, mesh: &ReducedMesh, i: isize, j: isize, w: f64) {
    if let Some((idx, s)) = mesh.resolve(i, j) {
        row.push((idx, w * s));
    }
}

/// Rows of the finite-volume `Delta_g` (no `1/vol` yet): flux balance.
fn flux_row(mesh: &ReducedMesh, i: usize, j: usize) -> Vec<(usize, f64)> {
    let (ha, hb) = (mesh.ha(), mesh.hb());
    let (ii, jj) = (i as isize, j as isize);
    let mut row = Vec::with_capacity(13);
    // a-faces at i - 1/2 (sign -1) and i + 1/2 (sign +1)
    for (face_i, sgn) in [(i, -1.0), (i + 1, 1.0)] {
        let k = mesh.face_a_at(face_i, j);
        if k == [0.0; 3] {
            continue;
        }
        let (lo, hi) = (face_i as isize - 1, face_i as isize);
        // normal derivative
        push(&mut row, mesh, hi, jj, sgn * k[0] / (ha * ha));
        push(&mut row, mesh, lo, jj, -sgn * k[0] / (ha * ha));
        // tangential derivative averaged over both cells
        let c = sgn * k[1] / (4.0 * hb * ha);
        for x in [lo, hi] {
            push(&mut row, mesh, x, jj + 1, c);
            push(&mut row, mesh, x, jj - 1, -c);
        }
    }
    for (face_j, sgn) in [(j, -1.0), (j + 1, 1.0)] {
        let k = mesh.face_b_at(i, face_j);
        if k == [0.0; 3] {
            continue;
        }
        let (lo, hi) = (face_j as isize - 1, face_j as isize);
        push(&mut row, mesh, ii, hi, sgn * k[2] / (hb * hb));
        push(&mut row, mesh, ii, lo, -sgn * k[2] / (hb * hb));
        let c = sgn * k[1] / (4.0 * ha * hb);
        for y in [lo, hi] {
            push(&mut row, mesh, ii + 1, y, c);
            push(&mut row, mesh, ii - 1, y, -c);
        }
    }
    row
}

/// Which terms of the operator to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorTerms {
    /// `Delta_g` only.
    Laplacian,
    /// `Delta_f = Delta_g - <grad f, grad .>/2`.
    Drift,
    /// The full translator linearization.
    Full,
}

/// Assemble the unweighted operator.
pub fn assemble_plain(mesh: &ReducedMesh, terms: OperatorTerms) -> SparseRows {
    let f: Vec<f64> = mesh.nodes.iter().map(|n| n.f).collect();
    let th: Vec<f64> = mesh.nodes.iter().map(|n| n.theta_f).collect();
    let mut rows = Vec::with_capacity(mesh.len());
    for i in 0..mesh.na {
        for j in 0..mesh.nb {
            let node = &mesh.nodes[mesh.idx(i, j)];
            let mut lap: Vec<(usize, f64)> = flux_row(mesh, i, j).into_iter().map(|(c, v)| (c, v / node.vol)).collect();
            let grad = gradient_stencil(mesh, i, j);
            let g = node.ginv;
            let raise = |d: [f64; 2]| [g[0][0] * d[0] + g[0][1] * d[1], g[1][0] * d[0] + g[1][1] * d[1]];
            let row = match terms {
                OperatorTerms::Laplacian => lap,
                OperatorTerms::Drift | OperatorTerms::Full => {
                    let df = raise(field_partials(mesh, &f, i, j));
                    for (k, st) in grad.iter().enumerate() {
                        lap.extend(st.iter().map(|&(c, v)| (c, -0.5 * df[k] * v)));
                    }
                    if terms == OperatorTerms::Drift {
                        lap
                    } else {
                        let dth = raise(field_partials(mesh, &th, i, j));
                        let e = (-0.5 * node.f).exp();
                        let (s, c) = node.theta_f.sin_cos();
                        let mut full: Vec<(usize, f64)> = lap.into_iter().map(|(col, v)| (col, e * c * v)).collect();
                        for (k, st) in grad.iter().enumerate() {
                            full.extend(st.iter().map(|&(col, v)| (col, -e * s * dth[k] * v)));
                        }
                        full
                    }
                }
            };
            rows.push(row);
        }
    }
    SparseRows::from_rows(mesh.len(), rows)
}

/// The weighted operator `W_out L W_in^{-1}` between discrete `L^2` versions of
/// the weighted spaces.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub plain: SparseRows,
    pub weighted: SparseRows,
    pub w_in: Vec<f64>,
    pub w_out: Vec<f64>,
    pub bc: [Boundary; 4],
}

/// Discrete weights `e^{beta f/2} rho^{-gamma} sqrt(rho^{-m} dV)`.
pub fn node_weights(mesh: &ReducedMesh, beta: f64, gamma: f64) -> Vec<f64> {
    let m = mesh.m as i32;
    mesh.nodes
        .iter()
        .map(|n| (0.5 * beta * n.f).exp() * n.rho.powf(-gamma) * (n.rho.powi(-m) * n.weight).sqrt())
        .collect()
}

pub fn assemble_l(mesh: &ReducedMesh, spec: &WeightSpec) -> DiscreteOperator {
    let plain = assemble_plain(mesh, OperatorTerms::Full);
    let w_in = node_weights(mesh, spec.beta, spec.gamma);
    let out = spec.shifted(0);
    let w_out = node_weights(mesh, out.beta, out.gamma);
    let inv: Vec<f64> = w_in.iter().map(|w| 1.0 / w).collect();
    let weighted = plain.scaled(&w_out, &inv);
    DiscreteOperator { plain, weighted, w_in, w_out, bc: mesh.bc }
}

/// Result of inverse iteration on `M^T M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaMin {
    pub sigma: f64,
    pub iterations: usize,
    pub rel_change: f64,
}

/// Smallest singular value by inverse iteration on the normal equations,
/// using one sparse LU of `M`.
pub fn sigma_min(m: &SparseRows, tol: f64, max_iter: usize) -> Result<SigmaMin> {
    let lu = m.factor()?;
    let n = m.n;
    // deterministic start with all modes present
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.618_033_988_749_895).fract()).collect();
    normalize(&mut x)?;
    let mut sigma = f64::NAN;
    let mut change = f64::INFINITY;
    for it in 1..=max_iter {
        let y = lu.solve_transpose(&x);
        let mut z = lu.solve(&y);
        let growth = norm(&z);
        if !growth.is_finite() || growth == 0.0 {
            return Err(GlueError::SpectralFailure(format!("inverse iteration broke down at step {it}")));
        }
        // Rayleigh quotient of (M^T M)^{-1}
        let rq: f64 = x.iter().zip(&z).map(|(a, b)| a * b).sum();
        let next = 1.0 / rq.abs().sqrt();
        change = ((next - sigma) / next).abs();
        sigma = next;
        for v in z.iter_mut() {
            *v /= growth;
        }
        x = z;
        if change < tol {
            return Ok(SigmaMin { sigma, iterations: it, rel_change: change });
        }
    }
    Err(GlueError::SpectralFailure(format!("no convergence after {max_iter} steps (relative change {change:e}, sigma {sigma:e})")))
}

/// Smallest Dirichlet eigenvalue of `-Delta` on the flat unit square with
/// `n x n` cells; the exact value is `2 pi^2`. Since `-Delta` is symmetric
/// in the volume-weighted inner product, this is `sigma_min` of the
/// conjugated matrix.
pub fn flat_laplacian_eigenvalue(n: usize) -> Result<f64> {
    let mesh = ReducedMesh::flat_square(n)?;
    let l = assemble_plain(&mesh, OperatorTerms::Laplacian);
    let w: Vec<f64> = mesh.nodes.iter().map(|n| n.weight.sqrt()).collect();
    let inv: Vec<f64> = w.iter().map(|v| 1.0 / v).collect();
    Ok(sigma_min(&l.scaled(&w, &inv), 1e-12, 200)?.sigma)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn normalize(x: &mut [f64]) -> Result<()> {
    let n = norm(x);
    if n == 0.0 {
        return Err(GlueError::SpectralFailure("zero start vector".into()));
    }
    x.iter_mut().for_each(|v| *v /= n);
    Ok(())
}
