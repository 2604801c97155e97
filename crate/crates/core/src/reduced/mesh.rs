//! Cell-centred structured meshes on a two-dimensional slice transverse to
//! the `SO(m-1)` orbits.
//!
//! Slice coordinates are `(a, b)`; the first `m - 1` ambient coordinates
//! are rotated by the symmetry group and the slice is the meridian where
//! only the first of them is non-zero. Every node stores a full ambient
//! frame with columns `[F_a, F_b, A_2 F, ..., A_{m-1} F]`, where `A_k`
//! generates the rotation of `e_1` into `e_k`.

use crate::ambient::{gram, residual_fixed_volume, CMat, CVec, FrameData, KahlerBackground, C64};
use crate::cone::{GluedSurface, Region};
use crate::error::{GlueError, Result};
use crate::grim::{chart_eval, GrimChart, Parametrization};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// Symmetry axis: the orbit collapses, no flux, mirrored ghosts.
    Axis,
    /// Zero Dirichlet data on the face.
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeshKind {
    Flat,
    Wing,
    Glued,
}

/// Geometry at a cell centre.
#[derive(Debug, Clone)]
pub struct MeshNode {
    pub a: f64,
    pub b: f64,
    pub frame: FrameData,
    /// Inverse of the slice metric.
    pub ginv: [[f64; 2]; 2],
    /// Volume density of the full metric: slice area element times
    /// `orbit^{m-2}`.
    pub vol: f64,
    /// Quadrature weight for `dV` (includes the orbit sphere volume).
    pub weight: f64,
    pub orbit: f64,
    pub f: f64,
    pub kappa: f64,
    pub theta_f: f64,
    pub rho: f64,
    pub region: Region,
    /// Adjacent to a symmetry-axis face.
    pub axis: bool,
}

/// `vol * g^{-1}` on a face.
pub type FaceCoeff = [f64; 3];

/// One evaluated point of a slice parametrization.
#[derive(Debug, Clone)]
pub struct SliceSample {
    pub frame: FrameData,
    pub rho: f64,
    pub region: Region,
}

#[derive(Debug, Clone)]
pub struct ReducedMesh {
    pub m: usize,
    pub kind: MeshKind,
    pub na: usize,
    pub nb: usize,
    pub a_range: (f64, f64),
    pub b_range: (f64, f64),
    /// `[a_lo, a_hi, b_lo, b_hi]`.
    pub bc: [Boundary; 4],
    pub nodes: Vec<MeshNode>,
    /// Faces normal to `a`, `(na + 1) x nb`, row-major in `a`.
    pub face_a: Vec<FaceCoeff>,
    /// Faces normal to `b`, `na x (nb + 1)`.
    pub face_b: Vec<FaceCoeff>,
    pub bg: KahlerBackground,
    /// Scale of the glued surface, if any.
    pub t: Option<f64>,
    /// Sign applied to residuals so that the wings have phase 0.
    pub orientation: f64,
}

/// Volume of the unit `k`-sphere.
pub fn sphere_volume(k: usize) -> f64 {
    // |S^k| = 2 pi^{(k+1)/2} / Gamma((k+1)/2)
    let n = k + 1;
    let half_gamma = |n: usize| -> f64 {
        // Gamma(n / 2)
        if n % 2 == 0 {
            (1..n / 2).map(|i| i as f64).product()
        } else {
            let mut g = PI.sqrt();
            let mut x = 0.5;
            while x < n as f64 / 2.0 - 0.25 {
                g *= x;
                x += 1.0;
            }
            g
        }
    };
    2.0 * PI.powf(n as f64 / 2.0) / half_gamma(n)
}

fn slice_metric(frame: &FrameData) -> ([[f64; 2]; 2], f64) {
    let g = gram(&frame.jacobian.columns(0, 2).into_owned());
    let det = g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)];
    let ginv = [[g[(1, 1)] / det, -g[(0, 1)] / det], [-g[(1, 0)] / det, g[(0, 0)] / det]];
    (ginv, det.max(0.0).sqrt())
}

fn face_coeff(frame: &FrameData, m: usize) -> FaceCoeff {
    let (ginv, area) = slice_metric(frame);
    let orbit = orbit_radius(frame, m);
    let w = area * orbit.powi(m as i32 - 2);
    [w * ginv[0][0], w * ginv[0][1], w * ginv[1][1]]
}

fn orbit_radius(frame: &FrameData, m: usize) -> f64 {
    if m <= 2 {
        1.0
    } else {
        frame.point[0].norm()
    }
}

impl ReducedMesh {
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.nb + j
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ha(&self) -> f64 {
        (self.a_range.1 - self.a_range.0) / self.na as f64
    }

    pub fn hb(&self) -> f64 {
        (self.b_range.1 - self.b_range.0) / self.nb as f64
    }

    pub fn face_a_at(&self, i: usize, j: usize) -> FaceCoeff {
        self.face_a[i * self.nb + j]
    }

    pub fn face_b_at(&self, i: usize, j: usize) -> FaceCoeff {
        self.face_b[i * (self.nb + 1) + j]
    }

    /// Ghost rule: node index and sign for a possibly out-of-range index.
    pub fn resolve(&self, i: isize, j: isize) -> Option<(usize, f64)> {
        let (na, nb) = (self.na as isize, self.nb as isize);
        let mut sign = 1.0;
        let fold = |k: isize, n: isize, lo: Boundary, hi: Boundary, sign: &mut f64| -> Option<isize> {
            if k < 0 {
                if k < -2 {
                    return None;
                }
                if lo == Boundary::Dirichlet {
                    *sign = -*sign;
                }
                Some(-k - 1)
            } else if k >= n {
                if k > n + 1 {
                    return None;
                }
                if hi == Boundary::Dirichlet {
                    *sign = -*sign;
                }
                Some(2 * n - 1 - k)
            } else {
                Some(k)
            }
        };
        let ii = fold(i, na, self.bc[0], self.bc[1], &mut sign)?;
        let jj = fold(j, nb, self.bc[2], self.bc[3], &mut sign)?;
        Some((self.idx(ii as usize, jj as usize), sign))
    }

    /// Generic builder from a slice parametrization.
    #[allow(clippy::too_many_arguments)]
    pub fn from_slice<S>(
        m: usize,
        kind: MeshKind,
        bg: KahlerBackground,
        t: Option<f64>,
        (na, nb): (usize, usize),
        a_range: (f64, f64),
        b_range: (f64, f64),
        bc: [Boundary; 4],
        eval: S,
    ) -> Result<Self>
    where
        S: Fn(f64, f64) -> Result<SliceSample>,
    {
        if na < 2 || nb < 2 {
            return Err(GlueError::Invalid("mesh needs at least 2 x 2 cells".into()));
        }
        let ha = (a_range.1 - a_range.0) / na as f64;
        let hb = (b_range.1 - b_range.0) / nb as f64;
        let orbit_sphere = if m > 2 { sphere_volume(m - 2) } else { 1.0 };
        let mut nodes = Vec::with_capacity(na * nb);
        for i in 0..na {
            for j in 0..nb {
                let a = a_range.0 + (i as f64 + 0.5) * ha;
                let b = b_range.0 + (j as f64 + 0.5) * hb;
                let s = eval(a, b)?;
                let (ginv, area) = slice_metric(&s.frame);
                let orbit = orbit_radius(&s.frame, m);
                let vol = area * orbit.powi(m as i32 - 2);
                let d = s.frame.jacobian.clone().determinant();
                let kappa = bg.kappa(&s.frame.point);
                let theta_l = d.arg();
                nodes.push(MeshNode {
                    a,
                    b,
                    ginv,
                    vol,
                    weight: vol * ha * hb * orbit_sphere,
                    orbit,
                    f: bg.f(&s.frame.point),
                    kappa,
                    theta_f: theta_l - kappa - bg.phase_ref,
                    rho: s.rho,
                    region: s.region,
                    axis: (i == 0 && bc[0] == Boundary::Axis) || (i + 1 == na && bc[1] == Boundary::Axis),
                    frame: s.frame,
                });
            }
        }
        let mut face_a = Vec::with_capacity((na + 1) * nb);
        for i in 0..=na {
            for j in 0..nb {
                let on_axis = (i == 0 && bc[0] == Boundary::Axis) || (i == na && bc[1] == Boundary::Axis);
                if on_axis {
                    face_a.push([0.0; 3]);
                } else {
                    let a = a_range.0 + i as f64 * ha;
                    let b = b_range.0 + (j as f64 + 0.5) * hb;
                    face_a.push(face_coeff(&eval(a, b)?.frame, m));
                }
            }
        }
        let mut face_b = Vec::with_capacity(na * (nb + 1));
        for i in 0..na {
            for j in 0..=nb {
                let on_axis = (j == 0 && bc[2] == Boundary::Axis) || (j == nb && bc[3] == Boundary::Axis);
                if on_axis {
                    face_b.push([0.0; 3]);
                } else {
                    let a = a_range.0 + (i as f64 + 0.5) * ha;
                    let b = b_range.0 + j as f64 * hb;
                    face_b.push(face_coeff(&eval(a, b)?.frame, m));
                }
            }
        }
        let mut mesh = ReducedMesh { m, kind, na, nb, a_range, b_range, bc, nodes, face_a, face_b, bg, t, orientation: 1.0 };
        mesh.orient();
        Ok(mesh)
    }

    /// Fix the orientation so that `cos theta_f > 0` at the majority of
    /// nodes, and wrap the node angles accordingly.
    fn orient(&mut self) {
        let votes: f64 = self.nodes.iter().map(|n| n.theta_f.cos().signum()).sum();
        self.orientation = if votes < 0.0 { -1.0 } else { 1.0 };
        let shift = if self.orientation < 0.0 { PI } else { 0.0 };
        for n in &mut self.nodes {
            let mut th = (n.theta_f + shift).rem_euclid(2.0 * PI);
            if th > PI {
                th -= 2.0 * PI;
            }
            n.theta_f = th;
        }
    }

    /// Unit square `[0, 1]^2` in `C^2` (no orbit directions), Dirichlet on
    /// every side.
    pub fn flat_square(n: usize) -> Result<Self> {
        Self::from_slice(
            2,
            MeshKind::Flat,
            KahlerBackground::standard(2),
            None,
            (n, n),
            (0.0, 1.0),
            (0.0, 1.0),
            [Boundary::Dirichlet; 4],
            |a, b| {
                let point = CVec::from_vec(vec![C64::new(a, 0.0), C64::new(b, 0.0)]);
                Ok(SliceSample { frame: FrameData::new(point, CMat::identity(2, 2)), rho: 1.0, region: Region::Wing })
            },
        )
    }

    /// A single Grim Reaper cylinder in arclength coordinates:
    /// `a = |x'| in [0, r_flat]`, `b = s in [-s_max, s_max]`.
    pub fn wing(m: usize, (na, nb): (usize, usize), r_flat: f64, s_max: f64) -> Result<Self> {
        if m < 3 {
            return Err(GlueError::Invalid("wing meshes need m >= 3".into()));
        }
        let chart = GrimChart::identity(m, Parametrization::Arclength);
        Self::from_slice(
            m,
            MeshKind::Wing,
            KahlerBackground::standard(m),
            None,
            (na, nb),
            (0.0, r_flat),
            (-s_max, s_max),
            [Boundary::Axis, Boundary::Dirichlet, Boundary::Dirichlet, Boundary::Dirichlet],
            |a, b| {
                let mut p = vec![0.0; m];
                p[0] = a;
                p[m - 1] = b;
                let fr = chart_eval(&chart, &p)?;
                let mut cols = vec![fr.column(0), fr.column(m - 1)];
                for k in 1..m - 1 {
                    cols.push(fr.column(k) * C64::new(a, 0.0));
                }
                Ok(SliceSample { frame: FrameData::new(fr.point.clone(), CMat::from_columns(&cols)), rho: 1.0, region: Region::Wing })
            },
        )
    }

    /// Slice `sigma = (sin th, 0, ..., 0, cos th)` of the glued surface in
    /// the coordinates `(th, l)` with `y = y_s sinh l`, truncated where the
    /// asymptotic graph radius `t |y|` reaches `r_out`.
    pub fn glued(s: &GluedSurface, res: &MeshResolution, r_out: f64) -> Result<Self> {
        let m = s.m;
        let phi = &s.rel.phi;
        if phi[..m - 1].iter().any(|p| (p - phi[0]).abs() > 1e-12) {
            return Err(GlueError::SymmetryRequired);
        }
        let a = &s.profile.params.a;
        if a[..m - 1].iter().any(|x| (x - a[0]).abs() > 1e-9 * a[0]) {
            return Err(GlueError::SymmetryRequired);
        }
        let t = s.t();
        if r_out <= 2.0 * t.powf(s.params.tau) {
            return Err(GlueError::Invalid(format!("truncation radius {r_out} inside the transition region")));
        }
        let ys = res.y_scale;
        let l_end = (r_out / t / ys).asinh();
        let dyadics = 2.0 * l_end / std::f64::consts::LN_2;
        let nb = (dyadics * res.per_dyadic as f64).ceil() as usize;
        let eval = |th: f64, l: f64| -> Result<SliceSample> {
            let (st, ct) = th.sin_cos();
            let mut sigma = vec![0.0; m];
            sigma[0] = st;
            sigma[m - 1] = ct;
            let mut tang = Vec::with_capacity(m - 1);
            let mut d_th = vec![0.0; m];
            d_th[0] = ct;
            d_th[m - 1] = -st;
            tang.push(d_th);
            for k in 1..m - 1 {
                let mut e = vec![0.0; m];
                e[k] = st;
                tang.push(e);
            }
            let y = ys * l.sinh();
            let tp = s.tube_eval(&sigma, &tang, y)?;
            let j = &tp.frame.jacobian;
            let mut cols = vec![j.column(0).into_owned(), j.column(m - 1) * C64::new(ys * l.cosh(), 0.0)];
            for k in 1..m - 1 {
                cols.push(j.column(k).into_owned());
            }
            Ok(SliceSample {
                frame: FrameData::new(tp.frame.point.clone(), CMat::from_columns(&cols)),
                rho: tp.rho,
                region: tp.region,
            })
        };
        Self::from_slice(
            m,
            MeshKind::Glued,
            s.bg.clone(),
            Some(t),
            (res.n_theta, nb),
            (0.0, PI),
            (-l_end, l_end),
            [Boundary::Axis, Boundary::Axis, Boundary::Dirichlet, Boundary::Dirichlet],
            eval,
        )
    }

    /// Residual `Theta` at every node with the mesh orientation.
    pub fn base_residual(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .map(|n| self.orientation * residual_fixed_volume(&n.frame, &self.bg, n.vol))
            .collect()
    }

    /// Rotation by `pi` in the first two coordinates; maps the slice onto
    /// its mirror image across the axis.
    pub fn axis_reflection(&self, v: &CVec) -> CVec {
        let mut w = v.clone();
        if self.m > 2 {
            w[0] = -w[0];
            w[1] = -w[1];
        }
        w
    }
}

/// Resolution policy of the glued slice mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshResolution {
    pub n_theta: usize,
    /// Cells per factor 2 in the graph radius.
    pub per_dyadic: usize,
    /// Neck length scale in `y = y_s sinh l`.
    pub y_scale: f64,
}

impl Default for MeshResolution {
    fn default() -> Self {
        MeshResolution { n_theta: 16, per_dyadic: 6, y_scale: 0.5 }
    }
}

impl MeshResolution {
    pub fn scaled(&self, k: usize) -> Self {
        MeshResolution { n_theta: self.n_theta * k, per_dyadic: self.per_dyadic * k, y_scale: self.y_scale }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_volumes() {
        assert!((sphere_volume(0) - 2.0).abs() < 1e-15);
        assert!((sphere_volume(1) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_volume(2) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_volume(3) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn flat_wing_metric_is_identity() {
        let mesh = ReducedMesh::wing(3, (8, 16), 2.0, 3.0).unwrap();
        for n in &mesh.nodes {
            assert!((n.ginv[0][0] - 1.0).abs() < 1e-10 && (n.ginv[1][1] - 1.0).abs() < 1e-10 && n.ginv[0][1].abs() < 1e-10);
            assert!((n.orbit - n.a).abs() < 1e-12);
            assert!(n.theta_f.abs() < 1e-12);
        }
        assert!(mesh.nodes.iter().filter(|n| n.axis).count() == 16);
        // total measure of the truncated cylinder: pi r^2 * 2 s_max
        let vol: f64 = mesh.nodes.iter().map(|n| n.weight).sum();
        assert!((vol - PI * 4.0 * 6.0).abs() < 1e-9);
    }

    #[test]
    fn node_counts_scale_with_resolution() {
        let a = ReducedMesh::wing(3, (4, 8), 1.0, 1.0).unwrap();
        let b = ReducedMesh::wing(3, (8, 16), 1.0, 1.0).unwrap();
        assert_eq!(b.len(), 4 * a.len());
        assert_eq!(a.face_a.len(), 5 * 8);
        assert_eq!(a.face_b.len(), 4 * 9);
    }

    #[test]
    fn ghosts() {
        let m = ReducedMesh::wing(3, (4, 4), 1.0, 1.0).unwrap();
        assert_eq!(m.resolve(-1, 2), Some((m.idx(0, 2), 1.0)));
        assert_eq!(m.resolve(4, 2), Some((m.idx(3, 2), -1.0)));
        assert_eq!(m.resolve(1, -1), Some((m.idx(1, 0), -1.0)));
        assert_eq!(m.resolve(4, 4), Some((m.idx(3, 3), 1.0)));
        assert_eq!(m.resolve(1, -5), None);
    }
}
