//! Measurement noise: small random rotations applied to the measured
//! Manhattan frame and to each measured moment.

use nalgebra::Vector3;
use rand::Rng;

use super::{MeasurementFrame, SimError};
use crate::geometry::{self, ReducedMoment, Rotation};

/// Uniform zero-mean angle with standard deviation `sigma` (radians):
/// uniform on `[-sigma * sqrt(3), sigma * sqrt(3)]`.
fn uniform_angle(rng: &mut impl Rng, sigma: f64) -> f64 {
    let half_width = sigma * 3.0_f64.sqrt();
    rng.gen_range(-half_width..=half_width)
}

/// A small rotation built from three independently drawn Euler angles
/// (x-y-z order), each uniform zero-mean with standard deviation `sigma_deg`.
pub fn small_rotation(rng: &mut impl Rng, sigma_deg: f64) -> Rotation {
    let sigma = sigma_deg.to_radians();
    let ax = uniform_angle(rng, sigma);
    let ay = uniform_angle(rng, sigma);
    let az = uniform_angle(rng, sigma);
    Rotation::from_axis_angle(&Vector3::x(), ax)
        * Rotation::from_axis_angle(&Vector3::y(), ay)
        * Rotation::from_axis_angle(&Vector3::z(), az)
}

/// One step's worth of measurement noise, drawn once and applied to every
/// stage evaluation within that step so the corrupted measurements stay
/// piecewise-smooth in between samples.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub frame: Rotation,
    pub moments: Vec<Rotation>,
}

impl NoiseDraw {
    pub fn sample(rng: &mut impl Rng, sigma_deg: f64, n_lines: usize) -> NoiseDraw {
        NoiseDraw {
            frame: small_rotation(rng, sigma_deg),
            moments: (0..n_lines).map(|_| small_rotation(rng, sigma_deg)).collect(),
        }
    }

    /// Corrupts a frame: the Manhattan frame is pre-rotated, each moment is
    /// rotated independently, and the reduced moments are re-projected onto
    /// the corrupted frame (the projection residual that noise creates on the
    /// dropped component is discarded, as a real measurement pipeline would).
    /// Directions follow the corrupted frame, since that is where a detector
    /// reads them from. Depths, plane data and inputs are left exact.
    pub fn apply(&self, frame: &MeasurementFrame) -> Result<MeasurementFrame, SimError> {
        let mut noisy = frame.clone();
        noisy.mw_frame = self.frame * frame.mw_frame;
        noisy.cayley = geometry::cayley_from_rotation(&noisy.mw_frame)?;
        for (line, rot) in noisy.lines.iter_mut().zip(&self.moments) {
            line.direction = noisy.mw_frame.row(line.axis.index());
            line.moment = *rot * line.moment;
            line.tau = ReducedMoment {
                tau: geometry::drop_axis(&(noisy.mw_frame * line.moment), line.axis),
                axis: line.axis,
            };
        }
        Ok(noisy)
    }
}

/// Returns a corrupted copy of `frame`, or an exact clone when `sigma_deg`
/// is zero (no randomness is consumed in that case).
pub fn perturb(
    frame: &MeasurementFrame,
    sigma_deg: f64,
    rng: &mut impl Rng,
) -> Result<MeasurementFrame, SimError> {
    if sigma_deg == 0.0 {
        return Ok(frame.clone());
    }
    NoiseDraw::sample(rng, sigma_deg, frame.lines.len()).apply(frame)
}
