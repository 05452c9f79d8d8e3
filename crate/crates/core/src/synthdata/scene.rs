use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Body {
    /// closed unit sphere
    Sphere,
    /// flat square `[-1, 1]^2` in the x-y plane, displaced along z
    Sheet,
}

impl std::str::FromStr for Body {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Body::Sphere),
            "sheet" => Ok(Body::Sheet),
            _ => Err(Error::invalid(format!("unknown body {s:?}"))),
        }
    }
}

/// Gaussian bump on the body surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 3],
    pub amplitude: f64,
    pub sigma: f64,
}

pub const MAX_BUMPS: usize = 3;
pub const AMPLITUDE_RANGE: (f64, f64) = (-0.3, 0.3);
pub const SIGMA_RANGE: (f64, f64) = (0.2, 0.6);
pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationParams {
    pub bumps: Vec<Bump>,
    pub scale: [f64; 3],
}

impl DeformationParams {
    pub fn identity() -> Self {
        DeformationParams {
            bumps: Vec::new(),
            scale: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |v: f64, (lo, hi): (f64, f64)| v.is_finite() && v >= lo && v <= hi;
        if self.bumps.len() > MAX_BUMPS {
            return Err(Error::invalid(format!("at most {MAX_BUMPS} bumps")));
        }
        for b in &self.bumps {
            if !inside(b.amplitude, AMPLITUDE_RANGE) || !inside(b.sigma, SIGMA_RANGE) {
                return Err(Error::invalid(format!("bump out of range: {b:?}")));
            }
            if b.center.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite("bump center".into()));
            }
        }
        if !self.scale.iter().all(|&s| inside(s, SCALE_RANGE)) {
            return Err(Error::invalid(format!("scale out of range: {:?}", self.scale)));
        }
        Ok(())
    }

    /// Uniform draw: 0 to 3 bumps, centers uniform on the body, amplitude,
    /// width and per-axis scale uniform over their ranges.
    pub fn sample<R: Rng>(body: Body, rng: &mut R) -> Self {
        let count = rng.gen_range(0..=MAX_BUMPS);
        let bumps = (0..count)
            .map(|_| {
                let center = match body {
                    Body::Sphere => random_unit(rng),
                    Body::Sheet => [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), 0.0],
                };
                Bump {
                    center,
                    amplitude: rng.gen_range(AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1),
                    sigma: rng.gen_range(SIGMA_RANGE.0..=SIGMA_RANGE.1),
                }
            })
            .collect();
        let scale = [0; 3].map(|_| rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1));
        DeformationParams { bumps, scale }
    }

    /// `1 + sum_k a_k exp(-|u - u_k|^2 / (2 sigma_k^2))`.
    pub fn radial_factor(&self, u: [f64; 3]) -> f64 {
        1.0 + self
            .bumps
            .iter()
            .map(|b| {
                let d2: f64 = (0..3).map(|k| (u[k] - b.center[k]).powi(2)).sum();
                b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
            })
            .sum::<f64>()
    }
}

/// Uniform direction on the unit sphere.
pub fn random_unit<R: Rng>(rng: &mut R) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Deformed position of the body point `u` (body units).
///
/// Sphere: `s * u * radial_factor(u)`. Sheet: `s * (u + (radial_factor(u) - 1) e_z)`.
pub fn deform(body: Body, u: [f64; 3], params: &DeformationParams) -> [f64; 3] {
    let f = params.radial_factor(u);
    let p = match body {
        Body::Sphere => u.map(|c| c * f),
        Body::Sheet => [u[0], u[1], u[2] + f - 1.0],
    };
    [0, 1, 2].map(|k| params.scale[k] * p[k])
}

/// Rendering and sampling setup shared by every sample of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub body: Body,
    /// nominal body diameter in meters
    pub diameter: f64,
    pub dots: usize,
    pub dot_seed: u64,
    pub image_height: usize,
    pub image_width: usize,
    /// horizontal field of view in degrees
    pub fov_deg: f64,
    /// camera distance from the body center along the view axis, in body
    /// radii, on the side opposite the observed hemisphere
    pub camera_offset: f64,
    pub splat_radius: f64,
    pub views: usize,
    pub points_per_view: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            body: Body::Sphere,
            diameter: 0.25,
            dots: 300,
            dot_seed: 0,
            image_height: 32,
            image_width: 32,
            fov_deg: 90.0,
            camera_offset: 0.9,
            splat_radius: 2.0,
            views: 1,
            points_per_view: 1024,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.views == 1 || self.views == 2) {
            return Err(Error::invalid(format!("views must be 1 or 2, got {}", self.views)));
        }
        if self.body == Body::Sheet && self.views != 1 {
            return Err(Error::invalid("the sheet body supports a single view"));
        }
        if self.image_height == 0 || self.image_width == 0 || self.dots == 0 || self.points_per_view == 0 {
            return Err(Error::invalid("image size, dot count and points per view must be positive"));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::invalid("field of view must be in (0, 180) degrees"));
        }
        if !(self.diameter > 0.0) || !(self.splat_radius >= 0.0) || !(self.camera_offset >= 0.0) {
            return Err(Error::invalid("diameter, splat radius and camera offset must be non-negative"));
        }
        Ok(())
    }

    /// Channels of the stacked image (RGB per camera).
    pub fn channels(&self) -> usize {
        3 * self.views
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.image_width as f64 / (0.5 * self.fov_deg.to_radians()).tan()
    }

    /// World meters per body unit.
    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }
}
