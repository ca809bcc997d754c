//! Thin-lens camera model shared by the rest of the crate.
//!
//! Lengths are in meters throughout. Blur sizes are signed circle-of-confusion
//! diameters on the sensor; conversion to pixel radii is a separate step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical optics of one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraMeta {
    /// Focal length in meters.
    pub focal_length: f64,
    pub f_number: f64,
    /// Sensor pitch in meters per pixel.
    pub sensor_pitch: f64,
    pub image_width: usize,
    pub image_height: usize,
}

impl CameraMeta {
    pub fn new(
        focal_length: f64,
        f_number: f64,
        sensor_pitch: f64,
        image_width: usize,
        image_height: usize,
    ) -> Result<Self> {
        let meta = CameraMeta {
            focal_length,
            f_number,
            sensor_pitch,
            image_width,
            image_height,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("focal_length", self.focal_length),
            ("f_number", self.f_number),
            ("sensor_pitch", self.sensor_pitch),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Lens aperture diameter, always derived from focal length and f-number.
    pub fn aperture_diameter(&self) -> f64 {
        self.focal_length / self.f_number
    }
}

/// Signed blur diameter on the sensor plane, in meters. Positive when the
/// scene point lies beyond the focal plane.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlurSize(pub f64);

impl BlurSize {
    pub fn meters(self) -> f64 {
        self.0
    }

    /// Converts a signed pixel radius back to a physical diameter.
    pub fn from_pixel_radius(radius_px: f64, pitch: f64) -> Self {
        BlurSize(2.0 * radius_px * pitch)
    }
}

/// Scale-ambiguous depth from reconstruction; the metric depth is `s * z_prime`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct DepthSample(f64);

impl DepthSample {
    pub fn new(z_prime: f64) -> Result<Self> {
        if z_prime.is_finite() && z_prime > 0.0 {
            Ok(DepthSample(z_prime))
        } else {
            Err(Error::Domain(format!(
                "scale-ambiguous depth must be positive and finite, got {z_prime}"
            )))
        }
    }

    pub fn z_prime(self) -> f64 {
        self.0
    }

    pub fn metric(self, scale: f64) -> f64 {
        scale * self.0
    }
}

pub fn aperture_diameter(focal_length: f64, f_number: f64) -> Result<f64> {
    if !(focal_length > 0.0 && f_number > 0.0) || !focal_length.is_finite() || !f_number.is_finite()
    {
        return Err(Error::Domain(format!(
            "focal length and f-number must be positive (got {focal_length}, {f_number})"
        )));
    }
    Ok(focal_length / f_number)
}

fn check_lens(g: f64, f: f64, l: f64) -> Result<()> {
    if !(f > 0.0 && f.is_finite()) {
        return Err(Error::Domain(format!("focal length must be positive, got {f}")));
    }
    if !(g > f && g.is_finite()) {
        return Err(Error::Domain(format!(
            "focus distance {g} must exceed the focal length {f}"
        )));
    }
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::Domain(format!("aperture diameter must be positive, got {l}")));
    }
    Ok(())
}

/// Signed defocus blur diameter of a point at depth `z` for a lens with focal
/// length `f` and aperture `l` focused at `g`.
pub fn thin_lens_blur(z: f64, g: f64, f: f64, l: f64) -> Result<BlurSize> {
    check_lens(g, f, l)?;
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::Domain(format!("depth must be positive, got {z}")));
    }
    Ok(BlurSize(blur_factor(g, f, l) * (1.0 / g - 1.0 / z)))
}

/// `l f / (1 - f/g)`, the gain between inverse-depth offset and blur size.
pub(crate) fn blur_factor(g: f64, f: f64, l: f64) -> f64 {
    l * f / (1.0 - f / g)
}

/// Inverts [`thin_lens_blur`] for the depth. Returns an error when the blur is
/// too large to correspond to any finite positive depth.
pub fn depth_from_blur(b: BlurSize, g: f64, f: f64, l: f64) -> Result<f64> {
    check_lens(g, f, l)?;
    let inv_z = 1.0 / g - b.0 / blur_factor(g, f, l);
    if inv_z > 0.0 {
        Ok(1.0 / inv_z)
    } else {
        Err(Error::Domain(format!(
            "blur {} m exceeds the blur at infinity for g = {g}",
            b.0
        )))
    }
}

/// Signed pixel radius of a blur diameter: half the diameter over the pitch.
pub fn blur_to_pixel_radius(b: BlurSize, pitch: f64) -> Result<f64> {
    if !(pitch > 0.0 && pitch.is_finite()) {
        return Err(Error::Domain(format!("sensor pitch must be positive, got {pitch}")));
    }
    Ok(b.0 / (2.0 * pitch))
}
