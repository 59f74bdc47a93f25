//! Geometric multipath channels seen by a base-station planar array.
//!
//! The array response is the Kronecker product `a_z ⊗ a_y ⊗ a_x`, so antenna
//! `(ix, iy, iz)` sits at flat index `iz·n_y·n_x + iy·n_x + ix`. Elevation is
//! measured from the array's z axis and azimuth in the x-y plane.

mod covariance;
mod estimate;
mod scene;

pub use covariance::{collection_blocks, compute_ccm, max_blocks, CovarianceSample, BLOCK_SIDE};
pub use estimate::{
    lmmse_estimate, ls_estimate, observe, signal_power, LmmseForm, PilotConfig,
};
pub use scene::{generate_scene_dataset, ChannelSample, Scene, SceneConfig};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{domain, Result};

/// How the per-element phase of the array response is scaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseConvention {
    /// `2π · d/λ · index · (direction cosine)`.
    #[serde(rename = "standard_2pi")]
    Standard2Pi,
    /// `d/λ · index · (direction cosine)`, without the 2π factor.
    Unscaled,
}

impl PhaseConvention {
    fn factor(self) -> f64 {
        match self {
            PhaseConvention::Standard2Pi => 2.0 * PI,
            PhaseConvention::Unscaled => 1.0,
        }
    }
}

/// Uniform planar (or linear) array layout. Spacings are in carrier
/// wavelengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    pub n_x: usize,
    pub n_y: usize,
    pub n_z: usize,
    pub d_x: f64,
    pub d_y: f64,
    pub d_z: f64,
    pub phase_convention: PhaseConvention,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self::upa(4, 4)
    }
}

impl ArrayGeometry {
    /// `n_x × n_y × 1` array at half-wavelength spacing.
    pub fn upa(n_x: usize, n_y: usize) -> Self {
        Self {
            n_x,
            n_y,
            n_z: 1,
            d_x: 0.5,
            d_y: 0.5,
            d_z: 0.5,
            phase_convention: PhaseConvention::Standard2Pi,
        }
    }

    /// Linear array along x.
    pub fn ula(n: usize) -> Self {
        Self::upa(n, 1)
    }

    pub fn n_t(&self) -> usize {
        self.n_x * self.n_y * self.n_z
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 || self.n_y == 0 || self.n_z == 0 {
            return domain(format!(
                "antenna counts must be positive, got {}x{}x{}",
                self.n_x, self.n_y, self.n_z
            ));
        }
        if !(self.d_x > 0.0 && self.d_y > 0.0 && self.d_z > 0.0) {
            return domain("antenna spacings must be positive");
        }
        Ok(())
    }
}

/// Unit-modulus phasor; exactly `1 + 0j` at zero phase.
fn cis(phase: f64) -> Complex64 {
    Complex64::new(phase.cos(), phase.sin())
}

/// Array response toward (`azimuth`, `elevation`).
pub fn steering_vector(
    azimuth: f64,
    elevation: f64,
    geom: &ArrayGeometry,
) -> Result<Vec<Complex64>> {
    geom.validate()?;
    if !azimuth.is_finite() || !elevation.is_finite() {
        return domain(format!(
            "steering angles must be finite (az={azimuth}, el={elevation})"
        ));
    }
    let c = geom.phase_convention.factor();
    let ux = elevation.sin() * azimuth.cos();
    let uy = elevation.sin() * azimuth.sin();
    let uz = elevation.cos();
    let axis = |n: usize, d: f64, u: f64| -> Vec<Complex64> {
        (0..n).map(|i| cis(c * d * i as f64 * u)).collect()
    };
    let ax = axis(geom.n_x, geom.d_x, ux);
    let ay = axis(geom.n_y, geom.d_y, uy);
    let az = axis(geom.n_z, geom.d_z, uz);

    let mut out = Vec::with_capacity(geom.n_t());
    for z in &az {
        for y in &ay {
            let zy = z * y;
            for x in &ax {
                out.push(zy * x);
            }
        }
    }
    Ok(out)
}

/// One propagation path. Angles are in radians, delay in seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub alpha: f64,
    pub phase: f64,
    pub delay: f64,
    pub aod_azimuth: f64,
    pub aod_elevation: f64,
    pub aoa_azimuth: f64,
    pub aoa_elevation: f64,
}

/// The multipath description of one link.
#[derive(Clone, Debug, PartialEq)]
pub struct PathParams {
    pub paths: Vec<Path>,
    pub bandwidth: f64,
}

/// `h = Σ_l α_l · exp(j(ϑ_l + 2π τ_l B)) · a(departure angles)`.
///
/// The user has a single antenna, so the arrival response reduces to 1.
pub fn generate_channel(params: &PathParams, geom: &ArrayGeometry) -> Result<Vec<Complex64>> {
    if params.paths.is_empty() {
        return domain("a channel needs at least one path");
    }
    let mut h = vec![Complex64::new(0.0, 0.0); geom.n_t()];
    for p in &params.paths {
        if !(p.alpha >= 0.0) {
            return domain(format!("path gain must be non-negative, got {}", p.alpha));
        }
        let a = steering_vector(p.aod_azimuth, p.aod_elevation, geom)?;
        let g = p.alpha * cis(p.phase + 2.0 * PI * p.delay * params.bandwidth);
        for (hi, ai) in h.iter_mut().zip(&a) {
            *hi += g * ai;
        }
    }
    Ok(h)
}
