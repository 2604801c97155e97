//! Run configuration: a JSON file, defaults for every key, flag overrides
//! and up-front validation.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use glue_core::demo;
use glue_core::grim::RigidMotionSpec;
use glue_core::reduced::perturb::ChartBound;
use glue_core::reduced::solver::Linearization;
use glue_core::reduced::MeshResolution;
use glue_core::weighted::{Resolution, WeightSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable naming the directory relative outputs land in.
pub const OUTPUT_ROOT_VAR: &str = "GLUELAB_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Motion {
    pub phi: Vec<f64>,
    #[serde(default)]
    pub lambda: f64,
}

/// Either target angles with an area, or explicit parameters `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LawlorConfig {
    pub angles: Option<Vec<f64>>,
    pub area: Option<f64>,
    pub params: Option<Vec<f64>>,
    pub tol: f64,
    pub y_max: f64,
    pub nodes: usize,
}

impl Default for LawlorConfig {
    fn default() -> Self {
        LawlorConfig { angles: None, area: None, params: Some(vec![1.0, 2.0, 3.0]), tol: 1e-10, y_max: 400.0, nodes: 2001 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlueConfig {
    pub tau: f64,
    pub eps: f64,
    pub waist: f64,
    pub r_hat: f64,
    /// Scale used by single-surface commands.
    pub t: f64,
    /// Scales of the residual decay scan.
    pub scan_t: Vec<f64>,
    /// Scales of the operator scans.
    pub operator_t: Vec<f64>,
    /// Index into the intersections of the configuration.
    pub intersection: usize,
}

impl Default for GlueConfig {
    fn default() -> Self {
        GlueConfig {
            tau: demo::TAU,
            eps: demo::EPS,
            waist: demo::WAIST,
            r_hat: 1.0,
            t: 0.05,
            scan_t: vec![0.02, 0.03, 0.045, 0.067, 0.1],
            operator_t: vec![0.02, 0.04, 0.08],
            intersection: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    pub k: usize,
    pub p: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig { k: 1, p: 2.0, beta: -0.5, gamma: -0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolutionConfig {
    pub sample: Resolution,
    pub reduced: MeshResolution,
    /// Truncation radius of the reduced mesh.
    pub r_out: f64,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        ResolutionConfig { sample: Resolution::default(), reduced: MeshResolution::default(), r_out: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub max_iter: usize,
    pub reduction: f64,
    pub linearization: Linearization,
    pub relinearize: bool,
    pub chart: ChartBound,
    pub remainder_trials: usize,
    pub remainder_amplitude: f64,
    pub quad_trials: usize,
    pub quad_amplitude: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            max_iter: 5,
            reduction: 100.0,
            linearization: Linearization::Exact,
            relinearize: false,
            chart: ChartBound::default(),
            remainder_trials: 5,
            remainder_amplitude: 0.5,
            quad_trials: 20,
            quad_amplitude: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    /// Real coordinates of `C^m = R^{2m}` (`2j` is `Re z_j`, `2j + 1` is
    /// `Im z_j`) written as OBJ `x y z`.
    pub coords: [usize; 3],
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig { coords: [0, 1, 4] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub m: usize,
    pub motions: Vec<Motion>,
    pub lawlor: LawlorConfig,
    pub glue: GlueConfig,
    pub weights: WeightConfig,
    pub resolution: ResolutionConfig,
    pub perturb: PerturbConfig,
    pub export: ExportConfig,
    pub seed: u64,
    /// Output directory; relative paths resolve against the output root.
    pub output: PathBuf,
    /// Emit SVG plots next to scan tables.
    pub plots: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            m: 3,
            motions: vec![Motion { phi: demo::PHI.to_vec(), lambda: 0.0 }],
            lawlor: LawlorConfig::default(),
            glue: GlueConfig::default(),
            weights: WeightConfig::default(),
            resolution: ResolutionConfig::default(),
            perturb: PerturbConfig::default(),
            export: ExportConfig::default(),
            seed: 0,
            output: PathBuf::from("gluelab-out"),
            plots: true,
        }
    }
}

/// A rejected configuration, naming the first failing key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

fn fail<T>(key: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { key: key.into(), message: message.into() })
}

fn check(ok: bool, key: &str, message: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        fail(key, message)
    }
}

fn finite_positive(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite() && *x > 0.0)
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { key: "config".into(), message: format!("{}: {e}", path.display()) })?;
        serde_json::from_str(&text).map_err(|e| ConfigError { key: "config".into(), message: e.to_string() })
    }

    pub fn motion_specs(&self) -> Vec<RigidMotionSpec> {
        self.motions.iter().map(|mo| RigidMotionSpec::new(mo.phi.clone(), mo.lambda)).collect()
    }

    pub fn weight_spec(&self) -> WeightSpec {
        let w = self.weights;
        WeightSpec { k: w.k, p: w.p, beta: w.beta, gamma: w.gamma }
    }

    /// Hex SHA-256 of the canonical JSON of the resolved configuration,
    /// leaving out where the results are written.
    pub fn hash(&self) -> String {
        let keyed = RunConfig { output: PathBuf::new(), ..self.clone() };
        let text = serde_json::to_string(&keyed).expect("config serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }

    pub fn output_dir(&self) -> PathBuf {
        if self.output.is_absolute() {
            return self.output.clone();
        }
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if !root.is_empty() => PathBuf::from(root).join(&self.output),
            _ => self.output.clone(),
        }
    }

    /// Every module precondition that can be checked without computing.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = self.m;
        check(m >= 3, "m", format!("dimension {m} below 3"))?;
        for (i, mo) in self.motions.iter().enumerate() {
            let key = format!("motions[{i}].phi");
            check(mo.phi.len() == m, &key, format!("{} angles for m = {m}", mo.phi.len()))?;
            check(mo.phi.iter().all(|p| p.is_finite() && *p > 0.0 && *p < PI), &key, "angles must lie in (0, pi)")?;
            let sum: f64 = mo.phi.iter().sum();
            check((sum - PI).abs() <= 1e-12, &key, format!("angles sum to {sum}, expected pi"))?;
            check(mo.lambda.is_finite(), &format!("motions[{i}].lambda"), "must be finite")?;
        }

        let l = &self.lawlor;
        check(l.tol.is_finite() && l.tol >= 1e-14, "lawlor.tol", format!("{} below 1e-14", l.tol))?;
        check(l.y_max.is_finite() && l.y_max > 0.0, "lawlor.y_max", "must be positive")?;
        check(l.nodes >= 64, "lawlor.nodes", format!("{} below 64", l.nodes))?;
        match (&l.angles, l.area, &l.params) {
            (Some(_), _, Some(_)) => return fail("lawlor", "give either angles with area or params, not both"),
            (Some(phi), area, None) => {
                check(phi.len() == m, "lawlor.angles", format!("{} angles for m = {m}", phi.len()))?;
                check(phi.iter().all(|p| p.is_finite() && *p > 0.0 && *p < PI), "lawlor.angles", "angles must lie in (0, pi)")?;
                let sum: f64 = phi.iter().sum();
                check((sum - PI).abs() <= 1e-9, "lawlor.angles", format!("angles sum to {sum}, expected pi"))?;
                check(area.is_some_and(|a| a.is_finite() && a > 0.0), "lawlor.area", "positive area required with angles")?;
            }
            (None, _, Some(a)) => {
                check(a.len() == m, "lawlor.params", format!("{} parameters for m = {m}", a.len()))?;
                check(finite_positive(a), "lawlor.params", "parameters must be positive")?;
            }
            (None, _, None) => return fail("lawlor", "angles with area or params required"),
        }

        let g = &self.glue;
        check(g.tau > 0.0 && g.tau < 1.0, "glue.tau", format!("{} outside (0, 1)", g.tau))?;
        check(g.eps.is_finite() && g.eps > 0.0 && g.eps <= 1.0, "glue.eps", "must lie in (0, 1]")?;
        check(g.waist.is_finite() && g.waist > 0.0, "glue.waist", "must be positive")?;
        check(g.r_hat.is_finite() && g.r_hat > 0.0, "glue.r_hat", "must be positive")?;
        let r_out = self.resolution.r_out;
        check(r_out.is_finite() && r_out > 0.0 && r_out <= g.eps, "resolution.r_out", format!("{r_out} outside (0, glue.eps]"))?;
        for (key, ts) in [("glue.t", std::slice::from_ref(&g.t)), ("glue.scan_t", &g.scan_t[..]), ("glue.operator_t", &g.operator_t[..])] {
            check(!ts.is_empty(), key, "empty list")?;
            check(finite_positive(ts), key, "scales must be positive")?;
            for &t in ts {
                // t R < t^tau < 2 t^tau < eps, and the reduced mesh reaches past the transition
                check(t * g.r_hat < t.powf(g.tau), key, format!("t = {t}: neck core reaches the transition"))?;
                check(2.0 * t.powf(g.tau) < r_out, key, format!("t = {t}: transition reaches resolution.r_out"))?;
            }
        }
        let (lo, hi) = g.scan_t.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &t| (a.min(t), b.max(t)));
        check(hi / lo >= 5.0 - 1e-9, "glue.scan_t", format!("range {lo}..{hi} spans less than a factor of 5"))?;
        check(self.motions.len() > g.intersection || self.motions.is_empty(), "glue.intersection", "index out of range")?;

        let w = self.weights;
        if let Err(e) = WeightSpec::analysis(w.k, w.p, w.beta, w.gamma, m) {
            return fail("weights", e.to_string());
        }
        let s = self.resolution.sample;
        if let Err(e) = Resolution::new(s.n_polar, s.n_azimuth, s.per_dyadic) {
            return fail("resolution.sample", e.to_string());
        }
        let r = self.resolution.reduced;
        check(r.n_theta >= 4 && r.per_dyadic >= 2, "resolution.reduced", "need n_theta >= 4 and per_dyadic >= 2")?;
        check(r.y_scale.is_finite() && r.y_scale > 0.0, "resolution.reduced.y_scale", "must be positive")?;

        let p = &self.perturb;
        check(p.max_iter >= 1, "perturb.max_iter", "at least one iteration")?;
        check(p.reduction > 1.0, "perturb.reduction", "must exceed 1")?;
        if let ChartBound::MinRho(c) | ChartBound::Pointwise(c) = p.chart {
            check(c.is_finite() && c > 0.0, "perturb.chart", "factor must be positive")?;
        }
        check(p.remainder_trials >= 1 && p.quad_trials >= 2, "perturb", "need remainder_trials >= 1 and quad_trials >= 2")?;
        check(p.remainder_amplitude > 0.0 && p.quad_amplitude > 0.0, "perturb", "amplitudes must be positive")?;

        check(self.export.coords.iter().all(|&c| c < 2 * m), "export.coords", format!("indices must be below {}", 2 * m))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_hash_is_stable() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.hash(), RunConfig::default().hash());
        let mut d = c.clone();
        d.output = PathBuf::from("elsewhere");
        assert_eq!(c.hash(), d.hash());
        d.seed = 1;
        assert_ne!(c.hash(), d.hash());
    }

    #[test]
    fn first_failing_key_is_named() {
        let mut c = RunConfig::default();
        c.motions[0].phi[2] = 1.0;
        assert_eq!(c.validate().unwrap_err().key, "motions[0].phi");
        let mut c = RunConfig::default();
        c.weights.gamma = -1.5;
        assert_eq!(c.validate().unwrap_err().key, "weights");
        let mut c = RunConfig::default();
        c.glue.operator_t = vec![0.3];
        assert_eq!(c.validate().unwrap_err().key, "glue.operator_t");
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 7, "glue": {"t": 0.04}}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.glue.t, 0.04);
        assert_eq!(c.glue.tau, 0.9);
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 7}"#).is_err());
    }
}
