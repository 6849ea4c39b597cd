//! Scalar error metrics used to judge estimates against ground truth.

use nalgebra::Vector3;

/// Angle in radians between an estimated and a true unit direction. The dot
/// product is clamped to [-1, 1] so roundoff past the endpoints cannot
/// produce NaN.
pub fn direction_error(d_hat: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
    debug_assert!((d_hat.norm() - 1.0).abs() < 1e-6);
    debug_assert!((d.norm() - 1.0).abs() < 1e-6);
    d_hat.dot(d).clamp(-1.0, 1.0).acos()
}

/// Absolute difference between an estimated and a true depth.
pub fn depth_error(l_hat: f64, l: f64) -> f64 {
    (l_hat - l).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn direction_error_on_matching_vectors_is_zero() {
        let d = Vector3::new(0.6, 0.0, 0.8);
        assert_eq!(direction_error(&d, &d), 0.0);
    }

    #[test]
    fn direction_error_on_orthogonal_vectors_is_right_angle() {
        assert_eq!(direction_error(&Vector3::x(), &Vector3::y()), FRAC_PI_2);
    }

    #[test]
    fn direction_error_clamps_roundoff_overshoot() {
        // A dot product slightly above 1 from floating-point accumulation
        // must not turn into NaN.
        let d = Vector3::new(1.0 + 5e-13, 0.0, 0.0);
        let e = direction_error(&d, &Vector3::x());
        assert!(e.is_finite());
        assert_eq!(e, 0.0);
    }

    #[test]
    fn depth_error_is_absolute_difference() {
        assert_eq!(depth_error(5.0, 5.0), 0.0);
        assert_eq!(depth_error(4.0, 5.0), 1.0);
        assert_eq!(depth_error(0.1, 5.0), 4.9);
    }
}
