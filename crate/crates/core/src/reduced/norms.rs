//! Discrete weighted norms of node fields on a reduced mesh.
//!
//! Order 1 uses the metric gradient, `rho |grad u|_g`. Orders 2 and 3 use
//! coordinate partials in the slice coordinates; these are logarithmic in
//! the graph radius, so `d^j u` already carries the `rho^j` scaling of the
//! conical weights.

use super::mesh::{Boundary, ReducedMesh};
use super::operator::gradient_stencil;
use crate::quadrature::Neumaier;
use crate::weighted::WeightSpec;

/// Parity of a field across a symmetry axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

/// Central partial along `a` (`dir = 0`) or `b` (`dir = 1`) of a derived
/// field; mirrored with the given parity at an axis and one-sided at a
/// Dirichlet side.
pub fn partial(mesh: &ReducedMesh, field: &[f64], dir: usize, parity: Parity) -> Vec<f64> {
    let (n, h, lo, hi) = if dir == 0 {
        (mesh.na, mesh.ha(), mesh.bc[0], mesh.bc[1])
    } else {
        (mesh.nb, mesh.hb(), mesh.bc[2], mesh.bc[3])
    };
    let sign = if parity == Parity::Even { 1.0 } else { -1.0 };
    let mut out = vec![0.0; field.len()];
    for i in 0..mesh.na {
        for j in 0..mesh.nb {
            let at = |k: usize| if dir == 0 { field[mesh.idx(k, j)] } else { field[mesh.idx(i, k)] };
            let k = if dir == 0 { i } else { j };
            let d = if k == 0 {
                match lo {
                    Boundary::Axis => (at(1) - sign * at(0)) / (2.0 * h),
                    Boundary::Dirichlet => (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h),
                }
            } else if k + 1 == n {
                match hi {
                    Boundary::Axis => (sign * at(n - 1) - at(n - 2)) / (2.0 * h),
                    Boundary::Dirichlet => (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h),
                }
            } else {
                (at(k + 1) - at(k - 1)) / (2.0 * h)
            };
            out[mesh.idx(i, j)] = d;
        }
    }
    out
}

/// First coordinate partials of a potential, with the mesh's ghost rules.
pub fn first_partials(mesh: &ReducedMesh, u: &[f64]) -> [Vec<f64>; 2] {
    let mut da = vec![0.0; u.len()];
    let mut db = vec![0.0; u.len()];
    for i in 0..mesh.na {
        for j in 0..mesh.nb {
            let st = gradient_stencil(mesh, i, j);
            let k = mesh.idx(i, j);
            da[k] = st[0].iter().map(|&(c, w)| w * u[c]).sum();
            db[k] = st[1].iter().map(|&(c, w)| w * u[c]).sum();
        }
    }
    [da, db]
}

/// `|grad u|_g` at every node.
pub fn gradient_norms(mesh: &ReducedMesh, u: &[f64]) -> Vec<f64> {
    let [da, db] = first_partials(mesh, u);
    mesh.nodes
        .iter()
        .enumerate()
        .map(|(k, n)| {
            let g = n.ginv;
            (g[0][0] * da[k] * da[k] + 2.0 * g[0][1] * da[k] * db[k] + g[1][1] * db[k] * db[k]).max(0.0).sqrt()
        })
        .collect()
}

/// Weighted `W^{k,p}` norm of a node field (`k <= 3`).
pub fn mesh_norm(mesh: &ReducedMesh, u: &[f64], spec: &WeightSpec) -> f64 {
    let p = spec.p;
    let m = mesh.m as i32;
    let mut terms: Vec<Vec<f64>> = vec![u.iter().map(|v| v.abs()).collect()];
    if spec.k >= 1 {
        let g = gradient_norms(mesh, u);
        terms.push(mesh.nodes.iter().zip(&g).map(|(n, g)| n.rho * g).collect());
    }
    if spec.k >= 2 {
        // u is even across the axis, so d_a u is odd and d_b u even
        let [da, db] = first_partials(mesh, u);
        let daa = partial(mesh, &da, 0, Parity::Odd);
        let dab = partial(mesh, &db, 0, Parity::Even);
        let dbb = partial(mesh, &db, 1, Parity::Even);
        terms.push((0..u.len()).map(|k| (daa[k] * daa[k] + 2.0 * dab[k] * dab[k] + dbb[k] * dbb[k]).sqrt()).collect());
        if spec.k >= 3 {
            let daaa = partial(mesh, &daa, 0, Parity::Even);
            let daab = partial(mesh, &daa, 1, Parity::Even);
            let dabb = partial(mesh, &dbb, 0, Parity::Odd);
            let dbbb = partial(mesh, &dbb, 1, Parity::Even);
            terms.push(
                (0..u.len())
                    .map(|k| {
                        (daaa[k] * daaa[k] + 3.0 * daab[k] * daab[k] + 3.0 * dabb[k] * dabb[k] + dbbb[k] * dbbb[k]).sqrt()
                    })
                    .collect(),
            );
        }
    }
    let mut acc = Neumaier::default();
    for (k, n) in mesh.nodes.iter().enumerate() {
        let base = (0.5 * spec.beta * n.f).exp() * n.rho.powf(-spec.gamma);
        let d: f64 = terms.iter().map(|t| (base * t[k]).powf(p)).sum();
        acc.add(d * n.rho.powi(-m) * n.weight);
    }
    acc.sum().powf(1.0 / p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn flat_square_norms_match_closed_forms() {
        // on the unit square rho = 1 and f = -2 y
        let mesh = ReducedMesh::flat_square(128).unwrap();
        let u: Vec<f64> = mesh.nodes.iter().map(|n| (PI * n.a).sin() * (PI * n.b).sin()).collect();
        let l2 = mesh_norm(&mesh, &u, &WeightSpec::new(0, 2.0, 0.0, 0.0).unwrap());
        assert!((l2 - 0.5).abs() < 1e-4, "{l2}");
        // |grad u|^2 integrates to pi^2 / 2
        let h1 = mesh_norm(&mesh, &u, &WeightSpec::new(1, 2.0, 0.0, 0.0).unwrap());
        assert!((h1 * h1 - 0.25 - PI * PI / 2.0).abs() < 2e-3 * PI * PI, "{h1}");
        // second partials: pi^4 (1/4 + 2/4 + 1/4) = pi^4
        let h2 = mesh_norm(&mesh, &u, &WeightSpec::new(2, 2.0, 0.0, 0.0).unwrap());
        let exact = 0.25 + PI * PI / 2.0 + PI.powi(4);
        assert!((h2 * h2 - exact).abs() < 1e-2 * exact, "{} vs {exact}", h2 * h2);
        // exponential weight e^{beta f / 2} = e^{-beta y}
        let w = mesh_norm(&mesh, &u, &WeightSpec::new(0, 2.0, 0.5, 0.0).unwrap());
        // int_0^1 sin^2(pi y) e^{-y} dy * 1/2
        let iy = (1.0 - (-1.0f64).exp()) * 2.0 * PI * PI / (1.0 + 4.0 * PI * PI);
        assert!((w * w - 0.5 * iy).abs() < 1e-4, "{} vs {}", w * w, 0.5 * iy);
    }

    #[test]
    fn norms_are_homogeneous() {
        let mesh = ReducedMesh::wing(3, (6, 10), 1.0, 2.0).unwrap();
        let u: Vec<f64> = mesh.nodes.iter().map(|n| (n.a * n.a).cos() * (-n.b * n.b).exp()).collect();
        let spec = WeightSpec::new(3, 2.0, -0.5, -0.5).unwrap();
        let a = mesh_norm(&mesh, &u, &spec);
        let v: Vec<f64> = u.iter().map(|x| -3.0 * x).collect();
        assert!((mesh_norm(&mesh, &v, &spec) - 3.0 * a).abs() < 1e-12 * a);
    }
}
