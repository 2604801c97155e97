use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gluelab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gluelab"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("GLUELAB_OUTPUT_ROOT")
        .output()
        .expect("gluelab runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn grim_intersect_symmetric_case() {
    let dir = tempfile::tempdir().unwrap();
    let out = gluelab(dir.path(), &["grim-intersect"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&dir.path().join("grim_intersect.json"));
    let s0 = v["result"]["intersections"][0]["s0"].as_f64().unwrap();
    assert!((s0 + PI / 4.0).abs() < 1e-12, "{s0}");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    assert!(dir.path().join("grim_intersect.csv").exists());
}

#[test]
fn lawlor_solve_recovers_the_symmetric_neck() {
    // A for a = (1, 1, 1): int_0^inf dx / sqrt(x^4 + 3 x^2 + 3), evaluated
    // independently at 30 digits
    let area = "1.2143253239437908";
    let third = format!("{0},{0},{0}", PI / 3.0);
    let dir = tempfile::tempdir().unwrap();
    let out = gluelab(dir.path(), &["lawlor-solve", "--angles", &third, "--area", area]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&dir.path().join("lawlor_solve.json"));
    for a in v["result"]["a"].as_array().unwrap() {
        assert!((a.as_f64().unwrap() - 1.0).abs() < 1e-6, "{a}");
    }
}

#[test]
fn export_mesh_vertex_count_matches_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let out = gluelab(dir.path(), &["export-mesh"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let obj = std::fs::read_to_string(dir.path().join("mesh.obj")).unwrap();
    let mut count = 0;
    for line in obj.lines().filter(|l| !l.starts_with('#')) {
        let parts: Vec<&str> = line.split(' ').collect();
        assert_eq!(parts.len(), 4, "{line}");
        assert_eq!(parts[0], "v");
        assert!(parts[1..].iter().all(|x| x.parse::<f64>().unwrap().is_finite()));
        count += 1;
    }
    let v = read_json(&dir.path().join("export_mesh.json"));
    assert_eq!(count as u64, v["result"]["node_count"].as_u64().unwrap());
    let csv = std::fs::read_to_string(dir.path().join("mesh_nodes.csv")).unwrap();
    assert_eq!(csv.lines().count(), count + 1);
}

#[test]
fn error_scan_reports_slope_and_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let out = gluelab(dir.path(), &["error-scan", "--no-plots"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let fit = std::fs::read_to_string(dir.path().join("error_scan_fit.csv")).unwrap();
    let mut rows = fit.lines();
    assert!(rows.next().unwrap().starts_with("slope,predicted,"));
    let vals: Vec<f64> = rows.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((vals[1] - 2.55).abs() < 1e-12);
    assert!(vals[0] > 0.0);
    let table = std::fs::read_to_string(dir.path().join("error_scan.csv")).unwrap();
    assert!(table.starts_with("t,norm_total,norm_I,norm_II,norm_III,rho_min,nodes\r\n"));
    assert!(!dir.path().join("error_scan.svg").exists());
}

#[test]
fn invalid_config_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = gluelab(dir.path(), &["grim-intersect", "--phi", "0.5,0.5,0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("motions[0].phi"));
    let out = gluelab(dir.path(), &["sigma-scan", "--gamma", "-2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weights"));
    // nothing was written
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn computation_failure_exits_1_with_the_error_serialized() {
    // unequal first angles pass validation but the reduced mesh needs symmetry
    let dir = tempfile::tempdir().unwrap();
    let phi = format!("0.7,0.6,{}", PI - 1.3);
    let out = gluelab(dir.path(), &["export-mesh", "--phi", &phi, "--r-out", "0.4"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(v["error"], "SymmetryRequired");
    let saved = read_json(&dir.path().join("export-mesh.error.json"));
    assert_eq!(saved["result"]["kind"], "computation");
}

#[test]
fn config_file_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"glue": {"t": 0.04}, "seed": 3}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = gluelab(&out_dir, &["glue-build", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&out_dir.join("glue_build.json"));
    assert_eq!(v["result"]["t"], 0.04);
    assert_eq!(v["config"]["seed"], 3);
    let out = gluelab(&out_dir, &["glue-build", "--config", cfg.to_str().unwrap(), "--t", "0.03"]);
    assert_eq!(out.status.code(), Some(0));
    let w = read_json(&out_dir.join("glue_build.json"));
    assert_eq!(w["result"]["t"], 0.03);
    assert_ne!(v["config_hash"], w["config_hash"]);
}

#[test]
fn output_root_and_bit_identical_reruns() {
    let root = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_gluelab"))
            .args(["quad-check", "--out", name])
            .env("GLUELAB_OUTPUT_ROOT", root.path())
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run("a");
    run("b");
    for f in ["quad_check.json", "quad_check.csv", "quad_summary.csv"] {
        let a = std::fs::read(root.path().join("a").join(f)).unwrap();
        let b = std::fs::read(root.path().join("b").join(f)).unwrap();
        if f.ends_with(".json") {
            // the embedded config differs only in the output key
            let mut va: Value = serde_json::from_slice(&a).unwrap();
            let mut vb: Value = serde_json::from_slice(&b).unwrap();
            va["config"]["output"] = Value::Null;
            vb["config"]["output"] = Value::Null;
            assert_eq!(va, vb);
        } else {
            assert_eq!(a, b, "{f}");
        }
    }
}
