//! Per-axis sinusoidal velocity profiles with closed-form derivatives.

use nalgebra::Vector3;

/// One sinusoidal channel, `value(t) = amplitude * sin(frequency * t + phase)`.
/// `frequency` is angular (rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl Sinusoid {
    pub fn new(amplitude: f64, frequency: f64, phase: f64) -> Self {
        Sinusoid {
            amplitude,
            frequency,
            phase,
        }
    }

    /// A channel frozen at `value`; its rate is identically zero.
    pub fn constant(value: f64) -> Self {
        Sinusoid {
            amplitude: value,
            frequency: 0.0,
            phase: std::f64::consts::FRAC_PI_2,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.amplitude * (self.frequency * t + self.phase).sin()
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.amplitude * self.frequency * (self.frequency * t + self.phase).cos()
    }
}

/// Linear and angular velocity of the camera as functions of time, one
/// sinusoid per axis.
///
/// Sign convention, used consistently across the crate: the pair `(nu, omega)`
/// is the apparent motion of the static scene in the camera frame, so a fixed
/// scene point `x` evolves as `dx/dt = omega x x + nu`. The camera body itself
/// moves through the world with the opposite twist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityProfile {
    pub nu: [Sinusoid; 3],
    pub omega: [Sinusoid; 3],
}

impl VelocityProfile {
    pub fn constant(nu: Vector3<f64>, omega: Vector3<f64>) -> Self {
        VelocityProfile {
            nu: [
                Sinusoid::constant(nu.x),
                Sinusoid::constant(nu.y),
                Sinusoid::constant(nu.z),
            ],
            omega: [
                Sinusoid::constant(omega.x),
                Sinusoid::constant(omega.y),
                Sinusoid::constant(omega.z),
            ],
        }
    }

    pub fn nu(&self, t: f64) -> Vector3<f64> {
        Vector3::new(
            self.nu[0].value(t),
            self.nu[1].value(t),
            self.nu[2].value(t),
        )
    }

    pub fn nu_rate(&self, t: f64) -> Vector3<f64> {
        Vector3::new(self.nu[0].rate(t), self.nu[1].rate(t), self.nu[2].rate(t))
    }

    pub fn omega(&self, t: f64) -> Vector3<f64> {
        Vector3::new(
            self.omega[0].value(t),
            self.omega[1].value(t),
            self.omega[2].value(t),
        )
    }

    /// Largest value of `f` over `[0, duration]` on a dense grid. Used to
    /// check profiles against excitation targets; not part of any hot path.
    pub fn scan_max(&self, duration: f64, f: impl Fn(&Self, f64) -> f64) -> f64 {
        let steps = 4000;
        (0..=steps)
            .map(|k| f(self, duration * k as f64 / steps as f64))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_profile_has_zero_rate() {
        let p = VelocityProfile::constant(Vector3::new(0.1, -0.2, 0.3), Vector3::zeros());
        assert_eq!(p.nu(0.0), Vector3::new(0.1, -0.2, 0.3));
        assert_eq!(p.nu(12.3), Vector3::new(0.1, -0.2, 0.3));
        assert_eq!(p.nu_rate(5.0), Vector3::zeros());
        assert_eq!(p.omega(5.0), Vector3::zeros());
    }

    #[test]
    fn rate_matches_finite_difference() {
        let s = Sinusoid::new(1.4, 2.3, 0.7);
        let h = 1e-6;
        for &t in &[0.0, 0.4, 1.9] {
            let fd = (s.value(t + h) - s.value(t - h)) / (2.0 * h);
            assert_abs_diff_eq!(s.rate(t), fd, epsilon = 1e-8);
        }
    }
}
