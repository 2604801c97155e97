//! The subcommands. Each writes a JSON summary plus CSV tables and reports
//! whether its tolerance gates passed.

use std::f64::consts::PI;

use glue_core::ambient::{lagrangian_angles, symplectic_defect, KahlerBackground, C64};
use glue_core::cone::{neck_for_angles, GlueParams, GluedSurface, Region};
use glue_core::error::GlueError;
use glue_core::grim::{build_configuration, CsConfiguration, Parametrization, RigidMotionSpec};
use glue_core::lawlor::{angles_from_params, neck_eval, params_from_angles, psi_profile, AngleData, LawlorParams};
use glue_core::reduced::operator::flat_laplacian_eigenvalue;
use glue_core::reduced::solver::{linearization_check, picard_iterate, quadratic_scaling_check, sigma_scan, PicardConfig};
use glue_core::reduced::ReducedMesh;
use glue_core::weighted::{error_scan, residual_row, sample_mesh};
use serde_json::json;

use crate::config::RunConfig;
use crate::output::{num, LogLogPlot, Series, Sink};

#[derive(Debug)]
pub enum CmdError {
    Glue(GlueError),
    Io(std::io::Error),
}

impl From<GlueError> for CmdError {
    fn from(e: GlueError) -> Self {
        CmdError::Glue(e)
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Io(e)
    }
}

pub type CmdResult = Result<bool, CmdError>;

fn nums(xs: &[f64]) -> Vec<String> {
    xs.iter().map(|&x| num(x)).collect()
}

fn max_abs<'a>(xs: impl IntoIterator<Item = &'a f64>) -> f64 {
    xs.into_iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Parameters `a` from the config: given directly, or by inverting angles
/// and area.
fn lawlor_params(cfg: &RunConfig) -> Result<LawlorParams, GlueError> {
    let l = &cfg.lawlor;
    match (&l.params, &l.angles, l.area) {
        (Some(a), _, _) => LawlorParams::new(a.clone()),
        (None, Some(phi), Some(area)) => params_from_angles(&AngleData { phi: phi.clone(), area }, l.tol),
        _ => Err(GlueError::Invalid("lawlor: angles with area or params required".into())),
    }
}

fn relative_error(a: &AngleData, b: &AngleData) -> f64 {
    let phi = a.phi.iter().zip(&b.phi).map(|(x, y)| ((x - y) / x).abs()).fold(0.0, f64::max);
    phi.max(((a.area - b.area) / a.area).abs())
}

pub fn lawlor_solve(cfg: &RunConfig, sink: &mut Sink) -> CmdResult {
    let tol = cfg.lawlor.tol;
    let l = &cfg.lawlor;
    let target = match (&l.params, &l.angles, l.area) {
        (Some(a), _, _) => angles_from_params(&LawlorParams::new(a.clone())?, tol)?,
        (None, Some(phi), Some(area)) => AngleData { phi: phi.clone(), area },
        _ => return Err(GlueError::Invalid("lawlor: angles with area or params required".into()).into()),
    };
    // (phi, A) -> a -> (phi, A)
    let back = params_from_angles(&target, tol)?;
    let again = angles_from_params(&back, tol)?;
    let roundtrip = relative_error(&target, &again);
    let params = match &l.params {
        Some(a) => LawlorParams::new(a.clone())?,
        None => back.clone(),
    };
    let forward = if l.params.is_some() { target.clone() } else { again.clone() };
    let sum_defect = forward.sum_defect();
    let passed = roundtrip < 1e-6 && sum_defect.abs() < 1e-9;
    let rows: Vec<Vec<String>> =
        (0..params.m()).map(|j| vec![(j + 1).to_string(), num(params.a[j]), num(forward.phi[j])]).collect();
    sink.csv("lawlor_solve.csv", &["j", "a", "phi"], &rows)?;
    let result = json!({
        "a": params.a,
        "phi": forward.phi,
        "area": forward.area,
        "sum_defect": sum_defect,
        "roundtrip_a": back.a,
        "roundtrip_relative_error": roundtrip,
    });
    sink.json("lawlor_solve.json", &sink.envelope(cfg, passed, &result))?;
    Ok(passed)
}

pub fn lawlor_profile(cfg: &RunConfig, sink: &mut Sink) -> CmdResult {
    let params = lawlor_params(cfg)?;
    let profile = psi_profile(&params, cfg.lawlor.y_max, cfg.lawlor.nodes)?;
    let m = params.m();
    // special Lagrangian check on a 20 x 20 grid of (x, y)
    let bg = KahlerBackground::standard(m);
    let mut rel = Vec::new();
    let mut defect: f64 = 0.0;
    let mut first = None;
    for i in 0..20 {
        let z = 1.0 - (2.0 * i as f64 + 1.0) / 20.0;
        let az = 2.399_963_229_728_653 * i as f64;
        let s = (1.0 - z * z).sqrt();
        let mut x = vec![0.0; m];
        x[0] = s * az.cos();
        x[1] = s * az.sin();
        x[m - 1] = z;
        for k in 0..20 {
            let y = -5.0 + 10.0 * k as f64 / 19.0;
            let fr = neck_eval(&profile, &x, y, 1.0)?;
            defect = defect.max(symplectic_defect(&fr.jacobian));
            let th = lagrangian_angles(&fr, &bg)?.theta_l;
            let th0 = *first.get_or_insert(th);
            rel.push(C64::from_polar(1.0, th - th0).arg());
        }
    }
    let mean = rel.iter().sum::<f64>() / rel.len() as f64;
    let sd = (rel.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / rel.len() as f64).sqrt();
    let passed = sd < 1e-6 && defect < 1e-8 && profile.angle_data.sum_defect().abs() < 1e-9;
    let mut header = vec!["y".to_string()];
    header.extend((1..=m).map(|j| format!("psi_{j}")));
    header.push("Q".into());
    let rows: Vec<Vec<String>> = (0..profile.y_grid.len())
        .map(|i| {
            let mut r = vec![num(profile.y_grid[i])];
            r.extend((0..m).map(|j| num(profile.psi_values[j][i])));
            r.push(num(profile.q_values[i]));
            r
        })
        .collect();
    let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    sink.csv("lawlor_profile.csv", &header, &rows)?;
    let result = json!({
        "theta_std": sd,
        "symplectic_defect": defect,
        "angle_data": profile.angle_data,
        "profile": profile,
    });
    sink.json("lawlor_profile.json", &sink.envelope(cfg, passed, &result))?;
    Ok(passed)
}

fn chart_spec(config: &CsConfiguration, k: usize) -> RigidMotionSpec {
    config.charts[k].motion.clone().unwrap_or_else(|| RigidMotionSpec::identity(config.m))
}

pub fn grim_intersect(cfg: &RunConfig, sink: &mut Sink) -> CmdResult {
    let config = build_configuration(cfg.m, &cfg.motion_specs(), Parametrization::Arclength)?;
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for rec in &config.intersections {
        let rel = chart_spec(&config, rec.charts.0).relative(&chart_spec(&config, rec.charts.1));
        let mut want = rel.phi.clone();
        want.sort_by(f64::total_cmp);
        let mut got = rec.cone_angles.clone();
        got.sort_by(f64::total_cmp);
        worst = worst.max(want.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let mut r = vec![rec.charts.0.to_string(), rec.charts.1.to_string(), num(rec.s0), num(rec.s1)];
        r.extend(rec.point.iter().flat_map(|z| [num(z.re), num(z.im)]));
        r.push(got.iter().map(|&x| num(x)).collect::<Vec<_>>().join(";"));
        rows.push(r);
    }
    let mut header: Vec<String> = ["chart_a", "chart_b", "s0", "s1"].iter().map(|s| s.to_string()).collect();
    for j in 1..=cfg.m {
        header.push(format!("re_z{j}"));
        header.push(format!("im_z{j}"));
    }
    header.push("cone_angles".into());
    let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    sink.csv("grim_intersect.csv", &header, &rows)?;
    let passed = worst < 1e-9;
    let result = json!({ "intersections": config.intersections, "max_angle_error": worst });
    sink.json("grim_intersect.json", &sink.envelope(cfg, passed, &result))?;
    Ok(passed)
}

/// Glued surfaces at the given scales for the configured intersection.
fn surfaces(cfg: &RunConfig, ts: &[f64]) -> Result<Vec<GluedSurface>, GlueError> {
    let config = build_configuration(cfg.m, &cfg.motion_specs(), Parametrization::Arclength)?;
    let rec = config
        .intersections
        .get(cfg.glue.intersection)
        .ok_or_else(|| GlueError::Invalid(format!("no intersection #{}", cfg.glue.intersection)))?;
    let rel = chart_spec(&config, rec.charts.0).relative(&chart_spec(&config, rec.charts.1));
    let profile = psi_profile(&neck_for_angles(&rel.phi, cfg.glue.waist)?, cfg.lawlor.y_max, cfg.lawlor.nodes)?;
    let g = &cfg.glue;
    ts.iter()
        .map(|&t| {
            let params = GlueParams { t, tau: g.tau, eps: g.eps, r_hat: g.r_hat };
            GluedSurface::new(&config, cfg.glue.intersection, profile.clone(), params)
        })
        .collect()
}

fn reduced_mesh(cfg: &RunConfig, s: &GluedSurface) -> Result<ReducedMesh, GlueError> {
    ReducedMesh::glued(s, &cfg.resolution.reduced, cfg.resolution.r_out)
}

fn region_max(nodes: &[glue_core::weighted::SampleNode], r: Region) -> f64 {
    max_abs(nodes.iter().filter(|n| n.region == r).map(|n| &n.theta))
}

pub fn glue_build(cfg: &RunConfig, sink: &mut Sink) -> CmdResult {
    let s = surfaces(cfg, &[cfg.glue.t])?.remove(0);
    let nodes = sample_mesh(&s, &cfg.resolution.sample)?;
    let outer = region_max(&nodes, Region::Wing);
    let defect = nodes.iter().map(|n| n.defect).fold(0.0, f64::max);
    let finite = nodes.iter().all(|n| n.theta.is_finite() && n.grad_theta.is_finite());
    let passed = outer < 1e-10 && finite;
    let rows: Vec<Vec<String>> = nodes
        .iter()
        .map(|n| {
            let mut r = vec![n.region.label().to_string(), format!("{:?}", n.side).to_lowercase(), num(n.y)];
            r.extend(nums(&[n.r, n.rho, n.f, n.weight, n.theta, n.grad_theta, n.defect]));
            r
        })
        .collect();
    sink.csv(
        "glue_samples.csv",
        &["region", "side", "y", "r", "rho", "f", "weight", "theta", "grad_theta", "defect"],
        &rows,
    )?;
    let t = s.t();
    let result = json!({
        "t": t,
        "nodes": nodes.len(),
        "orientation": s.orientation,
        "radii": { "neck": t * s.params.r_hat, "inner": t.powf(s.params.tau), "transition": 2.0 * t.powf(s.params.tau), "eps": s.params.eps },
        "max_abs_theta": {
            "I": region_max(&nodes, Region::Neck),
            "II": region_max(&nodes, Region::Inner),
            "III": region_max(&nodes, Region::Transition),
            "wing": outer,
        },
        "max_lagrangian_defect": defect,
        "intersection": s.intersection,
    });
    sink.json("glue_build.json", &sink.envelope(cfg, passed, &result))?;
    Ok(passed)
}

pub fn error_scan_cmd(cfg: &RunConfig, sink: &mut Sink) -> CmdResult {
    let ss = surfaces(cfg, &cfg.glue.scan_t)?;
    let rep = error_scan(&ss, &cfg.weight_spec(), &cfg.resolution.sample)?;
    let rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| {
            let mut v = nums(&[r.t, r.norm_total, r.norm_neck, r.norm_inner, r.norm_transition, r.rho_min]);
            v.push(r.nodes.to_string());
            v
        })
        .collect();
    sink.csv("error_scan.csv", &["t", "norm_total", "norm_I", "norm_II", "norm_III", "rho_min", "nodes"], &rows)?;
    sink.csv(
        "error_scan_fit.csv",
        &["slope", "predicted", "deviation", "slope_I", "slope_II", "slope_III", "prefactor"],
        &[nums(&[rep.slope, rep.predicted, rep.deviation, rep.region_slopes[0], rep.region_slopes[1], rep.region_slopes[2], rep.prefactor])],
    )?;
    if cfg.plots {
        let pts: Vec<(f64, f64)> = rep.rows.iter().map(|r| (r.t, r.norm_total)).collect();
        let reference = rep.rows.iter().map(|r| (r.t, rep.prefactor * r.t.powf(rep.predicted))).collect();
        sink.svg(
            "error_scan.svg",
            &LogLogPlot {
                title: format!("residual norm, fitted slope {:.3}", rep.slope),
                x_label: "t".into(),
                y_label: "weighted residual norm".into(),
                series: vec![
                    Series { label: "measured".into(), points: pts },
                    Series { label: format!("t^{:.2}", rep.predicted), points: reference },
                ],
            },
        )?;
    }
    let passed = rep.deviation.abs() <= 0.2;
    sink.json("error_scan.json", &sink.envelope(cfg, passed, &rep))?;
    Ok(passed)
}

pub fn sigma_scan_cmd(cfg: &RunConfig, sink: &mut Sink) -> CmdResult {
    let exact = 2.0 * PI * PI;
    let lam = flat_laplacian_eigenvalue(64)?;
    let flat_error = ((lam - exact) / exact).abs();
    if flat_error >= 0.02 {
        // the operator failed validation; do not scan
        let result = json!({ "flat_eigenvalue": lam, "flat_relative_error": flat_error });
        sink.json("sigma_scan.json", &sink.envelope(cfg, false, &result))?;
        return Ok(false);
    }
    let ss = surfaces(cfg, &cfg.glue.operator_t)?;
    let scan = sigma_scan(&ss, &cfg.weight_spec(), &cfg.resolution.reduced, cfg.resolution.r_out)?;
    let rows: Vec<Vec<String>> = scan
        .rows
        .iter()
        .map(|r| {
            let mut v = nums(&[r.t, r.sigma, r.sigma_unweighted]);
            v.push(r.iterations.to_string());
            v.push(r.nodes.to_string());
            v
        })
        .collect();
    sink.csv("sigma_scan.csv", &["t", "sigma_min", "sigma_min_unweighted", "iterations", "nodes"], &rows)?;
    if cfg.plots {
        sink.svg(
            "sigma_scan.svg",
            &LogLogPlot {
                title: format!("smallest singular value, max/min {:.3}", scan.ratio),
                x_label: "t".into(),
                y_label: "sigma_min".into(),
                series: vec![
                    Series { label: "weighted".into(), points: scan.rows.iter().map(|r| (r.t, r.sigma)).collect() },
                    Series {
                        label: "unweighted".into(),
                        points: scan.rows.iter().map(|r| (r.t, r.sigma_unweighted)).collect(),
                    },
                ],
            },
        )?;
    }
    let passed = scan.all_positive && scan.ratio < 10.0;
    let result = json!({ "flat_eigenvalue": lam, "flat_relative_error": flat_error, "scan": scan });
    sink.json("sigma_scan.json", &sink.envelope(cfg, passed, &result))?;
    Ok(passed)
}

pub fn perturb(cfg: &RunConfig, sink: &mut Sink) -> CmdResult {
    let s = surfaces(cfg, &[cfg.glue.t])?.remove(0);
    let spec = cfg.weight_spec();
    // discretization floor: change of the residual norm under 2x refinement
    let coarse = residual_row(&s, &spec, &cfg.resolution.sample)?.norm_total;
    let fine = residual_row(&s, &spec, &cfg.resolution.sample.scaled(2))?.norm_total;
    let floor = (coarse - fine).abs();
    let mesh = reduced_mesh(cfg, &s)?;
    let p = &cfg.perturb;
    let pc = PicardConfig {
        max_iter: p.max_iter,
        reduction: p.reduction,
        floor,
        linearization: p.linearization,
        relinearize: p.relinearize,
        chart: p.chart,
    };
    let (rep, u) = picard_iterate(&mesh, &spec, &pc, Some(cfg.glue.tau))?;
    let lin = linearization_check(&mesh, &spec, p.remainder_trials, cfg.seed, p.remainder_amplitude)?;
    let rows: Vec<Vec<String>> = rep
        .steps
        .iter()
        .map(|st| {
            let mut v = vec![st.iteration.to_string()];
            v.extend(nums(&[st.residual, st.max_defect, st.max_defect_quadratic, st.defect_bound, st.max_grad, st.relative_grad, st.u_norm]));
            v
        })
        .collect();
    sink.csv(
        "picard.csv",
        &["iteration", "residual", "max_defect", "max_defect_quadratic", "defect_bound", "max_grad", "relative_grad", "u_norm"],
        &rows,
    )?;
    let mut rem = Vec::new();
    for (k, n) in lin.norms.iter().enumerate() {
        for (s, v) in lin.s_values.iter().zip(n) {
            rem.push(vec![k.to_string(), num(*s), num(*v)]);
        }
    }
    sink.csv("remainder.csv", &["trial", "s", "remainder_norm"], &rem)?;
    let u_rows: Vec<Vec<String>> = mesh.nodes.iter().zip(&u).map(|(n, v)| nums(&[n.a, n.b, *v])).collect();
    sink.csv("potential.csv", &["a", "b", "u"], &u_rows)?;
    if cfg.plots {
        let series = lin
            .norms
            .iter()
            .enumerate()
            .map(|(k, n)| Series {
                label: format!("trial {k}, slope {:.3}", lin.slopes[k]),
                points: lin.s_values.iter().cloned().zip(n.iter().cloned()).collect(),
            })
            .collect();
        sink.svg(
            "remainder.svg",
            &LogLogPlot { title: "linearization remainder".into(), x_label: "s".into(), y_label: "remainder norm".into(), series },
        )?;
    }
    let slopes_ok = lin.slopes.iter().all(|s| (s - 2.0).abs() <= 0.05);
    let passed = (rep.converged || rep.floor_reached) && rep.defect_within_bound && slopes_ok;
    let result = json!({ "floor": floor, "picard": rep, "remainder": lin });
    sink.json("perturb.json", &sink.envelope(cfg, passed, &result))?;
    Ok(passed)
}

pub fn quad_check(cfg: &RunConfig, sink: &mut Sink) -> CmdResult {
    let ss = surfaces(cfg, &cfg.glue.operator_t)?;
    let meshes = ss.iter().map(|s| reduced_mesh(cfg, s)).collect::<Result<Vec<_>, _>>()?;
    let p = &cfg.perturb;
    let rep = quadratic_scaling_check(&meshes, &cfg.weight_spec(), p.quad_trials, cfg.seed, p.quad_amplitude)?;
    let rows: Vec<Vec<String>> =
        rep.trials.iter().map(|x| nums(&[x.t, x.ratio, x.norm_u, x.norm_v, x.norm_diff, x.q_diff])).collect();
    sink.csv("quad_check.csv", &["t", "ratio", "norm_u", "norm_v", "norm_diff", "q_diff"], &rows)?;
    let srows: Vec<Vec<String>> =
        rep.summaries.iter().map(|s| nums(&[s.t, s.max, s.median, s.max_over_median, s.envelope_use])).collect();
    sink.csv("quad_summary.csv", &["t", "max", "median", "max_over_median", "envelope_use"], &srows)?;
    let passed = rep.bounded && rep.within_envelope;
    sink.json("quad_check.json", &sink.envelope(cfg, passed, &rep))?;
    Ok(passed)
}

pub fn export_mesh(cfg: &RunConfig, sink: &mut Sink) -> CmdResult {
    let s = surfaces(cfg, &[cfg.glue.t])?.remove(0);
    let mesh = reduced_mesh(cfg, &s)?;
    let [i, j, k] = cfg.export.coords;
    let real = |p: &glue_core::ambient::CVec, c: usize| if c % 2 == 0 { p[c / 2].re } else { p[c / 2].im };
    let vertices: Vec<[f64; 3]> =
        mesh.nodes.iter().map(|n| [real(&n.frame.point, i), real(&n.frame.point, j), real(&n.frame.point, k)]).collect();
    let finite = vertices.iter().all(|v| v.iter().all(|x| x.is_finite()));
    sink.obj("mesh.obj", &format!("reduced mesh, t = {}, {} vertices", cfg.glue.t, vertices.len()), &vertices)?;
    let theta = mesh.base_residual();
    let rows: Vec<Vec<String>> = mesh
        .nodes
        .iter()
        .zip(&theta)
        .map(|(n, th)| {
            let mut r = nums(&[n.a, n.b, n.rho, n.f, n.orbit, n.weight, *th]);
            r.push(n.region.label().to_string());
            r
        })
        .collect();
    sink.csv("mesh_nodes.csv", &["a", "b", "rho", "f", "orbit", "weight", "theta", "region"], &rows)?;
    let passed = finite && vertices.len() == mesh.len();
    let result = json!({
        "t": cfg.glue.t,
        "vertex_count": vertices.len(),
        "node_count": mesh.len(),
        "grid": [mesh.na, mesh.nb],
        "coords": cfg.export.coords,
    });
    sink.json("export_mesh.json", &sink.envelope(cfg, passed, &result))?;
    Ok(passed)
}
