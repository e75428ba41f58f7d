//! Homogeneous-medium fog: `I = J·t + A·(1 − t)` with `t = exp(−β·l)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DepthMap, RgbImage, ScalarMap};

/// Transmittance at the meteorological visibility distance.
pub const VISIBILITY_CONTRAST: f64 = 0.05;

/// Attenuation coefficient and atmospheric light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FogParams {
    /// Attenuation coefficient in 1/m.
    pub beta: f64,
    /// Atmospheric light per channel.
    pub atmo_light: [f64; 3],
}

impl Default for FogParams {
    fn default() -> Self {
        Self {
            beta: 0.0,
            atmo_light: [0.9, 0.9, 0.9],
        }
    }
}

impl FogParams {
    pub fn new(beta: f64, atmo_light: [f64; 3]) -> Result<Self> {
        let p = Self { beta, atmo_light };
        p.validate()?;
        Ok(p)
    }

    pub fn with_beta(beta: f64) -> Result<Self> {
        Self::new(beta, Self::default().atmo_light)
    }

    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if let Some(a) = self.atmo_light.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::invalid(format!("atmospheric light {a} outside [0,1]")));
        }
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::invalid(format!("beta must be finite and >= 0, got {beta}")));
    }
    Ok(())
}

/// Per-pixel transmittance `exp(−β·depth)`.
pub fn transmittance(depth: &DepthMap, beta: f64) -> Result<ScalarMap> {
    check_beta(beta)?;
    let data = depth.data.iter().map(|&l| (-beta * l).exp()).collect();
    ScalarMap::new(depth.height, depth.width, data)
}

/// Blends each pixel toward the atmospheric light according to its depth.
pub fn apply_fog(img: &RgbImage, depth: &DepthMap, params: &FogParams) -> Result<RgbImage> {
    params.validate()?;
    if img.height != depth.height || img.width != depth.width {
        return Err(Error::invalid(format!(
            "image {}x{} and depth {}x{} differ",
            img.height, img.width, depth.height, depth.width
        )));
    }
    if params.beta == 0.0 {
        return Ok(img.clone());
    }
    let t = transmittance(depth, params.beta)?;
    let mut data = img.data.clone();
    for (px, &t) in data.chunks_exact_mut(3).zip(&t.data) {
        for (v, &a) in px.iter_mut().zip(&params.atmo_light) {
            // J·t + A·(1−t), written as A + (J − A)·t so the result stays
            // between J and A.
            *v = (a + (*v - a) * t).clamp(0.0, 1.0);
        }
    }
    Ok(RgbImage {
        height: img.height,
        width: img.width,
        data,
    })
}

/// Attenuation for a meteorological visibility: transmittance at distance
/// `vis` equals [`VISIBILITY_CONTRAST`].
pub fn beta_for_visibility(vis: f64) -> Result<f64> {
    if !(vis > 0.0) {
        return Err(Error::invalid(format!("visibility must be positive, got {vis}")));
    }
    Ok(-VISIBILITY_CONTRAST.ln() / vis)
}
