//! The reference configuration used by tests, scans and the command line:
//! `m = 3`, motion angles `(pi/4, pi/4, pi/2)`, `lambda = 0`, neck waist 0.5.

use crate::cone::{neck_for_angles, GlueParams, GluedSurface};
use crate::error::Result;
use crate::grim::{build_configuration, CsConfiguration, Parametrization, RigidMotionSpec};
use crate::lawlor::{psi_profile, NeckProfile};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

pub const PHI: [f64; 3] = [FRAC_PI_4, FRAC_PI_4, FRAC_PI_2];
pub const TAU: f64 = 0.9;
pub const EPS: f64 = 0.5;
pub const WAIST: f64 = 0.5;

pub fn configuration() -> Result<CsConfiguration> {
    build_configuration(3, &[RigidMotionSpec::new(PHI.to_vec(), 0.0)], Parametrization::Arclength)
}

pub fn profile() -> Result<NeckProfile> {
    psi_profile(&neck_for_angles(&PHI, WAIST)?, 400.0, 2001)
}

/// Glued surfaces for several scales sharing one configuration and profile.
pub fn surfaces(ts: &[f64]) -> Result<Vec<GluedSurface>> {
    let config = configuration()?;
    let profile = profile()?;
    ts.iter()
        .map(|&t| GluedSurface::new(&config, 0, profile.clone(), GlueParams { t, tau: TAU, eps: EPS, r_hat: 1.0 }))
        .collect()
}

pub fn surface(t: f64) -> Result<GluedSurface> {
    Ok(surfaces(&[t])?.remove(0))
}
