//! The estimator stack: a plane-depth/linear-velocity observer driven by
//! IMU data and a homography-style plane measurement, a multi-line depth
//! observer for Manhattan scenes driven by line moments, and the cascade
//! that feeds the first observer's velocity estimate into the second.
//!
//! All right-hand sides evaluate their regressors at the MEASURED values
//! (`s`, `tau`, `c`), never at the estimates. That choice is what makes the
//! error dynamics linear in the innovation and is load-bearing for the
//! stability tests; see `error_rates_match_the_reduced_error_system`.

use nalgebra::{Matrix3, Matrix3x2, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{self, Axis, ReducedMoment, Rotation};
use crate::world_sim::{velocity_regressor, ImuExtrinsics};

#[derive(Debug, Error, PartialEq)]
pub enum ObserverError {
    /// The plane observer's inverse-depth estimate is too close to zero to
    /// divide by; the cascaded velocity is momentarily unidentifiable.
    #[error("inverse plane depth estimate {psi_hat} is within the division guard")]
    ScaleDegenerate { psi_hat: f64 },
}

/// Gains of the plane-velocity observer. Both must be strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneGains {
    pub k_s: f64,
    pub k_rho: f64,
}

/// State of the plane-velocity observer: scaled velocity `s = nu / rho` and
/// inverse plane depth `psi = 1 / rho`. Also used as its own derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneVelocityState {
    pub s_hat: Vector3<f64>,
    pub psi_hat: f64,
}

/// Derivative of the plane-velocity observer state.
///
/// `s_meas` is the measured scaled velocity and `normal` the measured unit
/// plane normal, both in the camera frame. The motion terms use the measured
/// `s_meas`; only the innovation involves the estimate.
pub fn plane_observer_rhs(
    est: &PlaneVelocityState,
    s_meas: &Vector3<f64>,
    normal: &Vector3<f64>,
    omega: &Vector3<f64>,
    a_imu: &Vector3<f64>,
    ext: &ImuExtrinsics,
    gains: &PlaneGains,
) -> PlaneVelocityState {
    debug_assert!((normal.norm() - 1.0).abs() < 1e-6);
    let g = velocity_regressor(a_imu, omega, ext);
    let innovation = s_meas - est.s_hat;
    PlaneVelocityState {
        s_hat: -omega.cross(s_meas) - s_meas * s_meas.dot(normal)
            + g * est.psi_hat
            + innovation * gains.k_s,
        psi_hat: -est.psi_hat * s_meas.dot(normal) + gains.k_rho * g.dot(&innovation),
    }
}

/// The estimated camera velocity `s_hat / psi_hat`, guarded against a
/// degenerate inverse depth.
pub fn plane_velocity(
    est: &PlaneVelocityState,
    psi_floor: f64,
) -> Result<Vector3<f64>, ObserverError> {
    if est.psi_hat.abs() <= psi_floor {
        return Err(ObserverError::ScaleDegenerate {
            psi_hat: est.psi_hat,
        });
    }
    Ok(est.s_hat / est.psi_hat)
}

/// Per-line state of the Manhattan observer. Also used as its own derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MwLineEstimate {
    pub tau_hat: Vector2<f64>,
    pub chi_hat: f64,
    pub axis: Axis,
}

/// Full state of the Manhattan observer: Cayley parameters of the estimated
/// Manhattan frame plus per-line reduced moments and inverse depths.
#[derive(Debug, Clone, PartialEq)]
pub struct ManhattanEstimate {
    pub c_hat: Vector3<f64>,
    pub lines: Vec<MwLineEstimate>,
}

/// Gains of the Manhattan observer, one `k_tau`/`k_chi` pair per line.
#[derive(Debug, Clone, PartialEq)]
pub struct ManhattanGains {
    pub k_c: f64,
    pub k_tau: Vec<f64>,
    pub k_chi: Vec<f64>,
}

impl ManhattanGains {
    /// The same gain pair replicated for every line.
    pub fn uniform(k_c: f64, k_tau: f64, k_chi: f64, n_lines: usize) -> Self {
        assert!(k_c > 0.0 && k_tau > 0.0 && k_chi > 0.0);
        ManhattanGains {
            k_c,
            k_tau: vec![k_tau; n_lines],
            k_chi: vec![k_chi; n_lines],
        }
    }
}

/// Jacobian of the Cayley parameters: along a frame trajectory driven by the
/// angular rate `omega`, `d(c)/dt = mw_q(c) * omega`.
pub fn mw_q(c: &Vector3<f64>) -> Matrix3<f64> {
    -0.5 * (Matrix3::identity() + c * c.transpose() + geometry::skew(c))
}

fn tangent_matrix(rm: &ReducedMoment, r_cw: &Rotation) -> Matrix3<f64> {
    let n = geometry::reconstruct_moment(rm, r_cw);
    let d = r_cw.row(rm.axis.index());
    (*r_cw.matrix() * n.cross(&d)) * n.transpose()
}

fn mw_t_with_rot(rm: &ReducedMoment, r_cw: &Rotation) -> Matrix3x2<f64> {
    let m = tangent_matrix(rm, r_cw);
    let (a, b) = rm.axis.surviving();
    Matrix3x2::from_columns(&[m.row(a).transpose(), m.row(b).transpose()])
}

fn mw_x_with_rot(rm: &ReducedMoment, r_cw: &Rotation) -> Vector3<f64> {
    let n = geometry::reconstruct_moment(rm, r_cw);
    n.cross(&r_cw.row(rm.axis.index()))
}

/// Translational regressor of the reduced moment: the measured `tau` evolves
/// as `d(tau)/dt = mw_t(tau, c)^T * nu * chi`. Rows of the underlying 3x3
/// matrix are selected per [`Axis::surviving`]; the dropped row is zero by
/// construction.
pub fn mw_t(rm: &ReducedMoment, c: &Vector3<f64>) -> Matrix3x2<f64> {
    mw_t_with_rot(rm, &geometry::rotation_from_cayley(c))
}

/// Translational regressor of the inverse depth: `d(chi)/dt = mw_x(tau, c)^T
/// * nu * chi^2`. Equals `n x d` for the line's reconstructed moment and
/// axis direction, so it is orthogonal to the direction: motion along the
/// line never changes its depth.
pub fn mw_x(rm: &ReducedMoment, c: &Vector3<f64>) -> Vector3<f64> {
    mw_x_with_rot(rm, &geometry::rotation_from_cayley(c))
}

/// Derivative of the Manhattan observer state given measured Cayley
/// parameters, measured reduced moments (aligned with `est.lines` by index),
/// and the camera's scene-relative velocities.
pub fn mw_observer_rhs(
    est: &ManhattanEstimate,
    c_meas: &Vector3<f64>,
    tau_meas: &[ReducedMoment],
    nu: &Vector3<f64>,
    omega: &Vector3<f64>,
    gains: &ManhattanGains,
) -> ManhattanEstimate {
    assert_eq!(est.lines.len(), tau_meas.len());
    assert_eq!(est.lines.len(), gains.k_tau.len());
    assert_eq!(est.lines.len(), gains.k_chi.len());

    let r_cw = geometry::rotation_from_cayley(c_meas);
    let c_dot = mw_q(c_meas) * omega + (c_meas - est.c_hat) * gains.k_c;

    let lines = est
        .lines
        .iter()
        .zip(tau_meas)
        .enumerate()
        .map(|(i, (line, meas))| {
            debug_assert_eq!(line.axis, meas.axis);
            let t_nu = mw_t_with_rot(meas, &r_cw).transpose() * nu;
            let x_nu = mw_x_with_rot(meas, &r_cw).dot(nu);
            let innovation = meas.tau - line.tau_hat;
            MwLineEstimate {
                tau_hat: t_nu * line.chi_hat + innovation * gains.k_tau[i],
                chi_hat: x_nu * line.chi_hat * line.chi_hat
                    + gains.k_chi[i] * t_nu.dot(&innovation),
                axis: line.axis,
            }
        })
        .collect();

    ManhattanEstimate { c_hat: c_dot, lines }
}

/// Derivative of the cascaded observer pair: the plane observer runs on its
/// own measurements and its velocity estimate `s_hat / psi_hat` replaces the
/// true linear velocity in the Manhattan observer.
///
/// Fails with [`ObserverError::ScaleDegenerate`] while `|psi_hat|` is inside
/// the division guard; the caller decides how to ride out such transients.
#[allow(clippy::too_many_arguments)]
pub fn cascade_rhs(
    plane: &PlaneVelocityState,
    mw: &ManhattanEstimate,
    s_meas: &Vector3<f64>,
    normal: &Vector3<f64>,
    c_meas: &Vector3<f64>,
    tau_meas: &[ReducedMoment],
    omega: &Vector3<f64>,
    a_imu: &Vector3<f64>,
    ext: &ImuExtrinsics,
    psi_floor: f64,
    plane_gains: &PlaneGains,
    mw_gains: &ManhattanGains,
) -> Result<(PlaneVelocityState, ManhattanEstimate), ObserverError> {
    let nu_hat = plane_velocity(plane, psi_floor)?;
    let plane_dot = plane_observer_rhs(plane, s_meas, normal, omega, a_imu, ext, plane_gains);
    let mw_dot = mw_observer_rhs(mw, c_meas, tau_meas, &nu_hat, omega, mw_gains);
    Ok((plane_dot, mw_dot))
}

/// Quadratic error energy of the Manhattan observer: half the squared frame
/// error plus, per line, half the squared moment error and the squared
/// inverse-depth error weighted by `1 / k_chi`.
pub fn lyapunov_v(
    c_err: &Vector3<f64>,
    line_errors: &[(Vector2<f64>, f64)],
    gains: &ManhattanGains,
) -> f64 {
    assert_eq!(line_errors.len(), gains.k_chi.len());
    let line_sum: f64 = line_errors
        .iter()
        .zip(&gains.k_chi)
        .map(|((tau_err, chi_err), k_chi)| tau_err.norm_squared() + chi_err * chi_err / k_chi)
        .sum();
    0.5 * (line_sum + c_err.norm_squared())
}

/// Pointwise stability diagnostics for one line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilitySample {
    /// Whether the depth error's own feedback is non-expanding here: the
    /// regressor `mw_x^T nu` must be non-positive while the depth estimate
    /// is positive, and zero otherwise.
    pub decay_ok: bool,
    /// Instantaneous excitation of the depth channel, `|mw_t^T nu|^2`.
    /// Zero means the moment innovation carries no depth information.
    pub excitation: f64,
}

/// Evaluates the pointwise stability conditions at measured values.
pub fn stability_sample(
    rm: &ReducedMoment,
    c: &Vector3<f64>,
    nu: &Vector3<f64>,
    chi_hat: f64,
    tol: f64,
) -> StabilitySample {
    let r_cw = geometry::rotation_from_cayley(c);
    let x_nu = mw_x_with_rot(rm, &r_cw).dot(nu);
    let decay_ok = if chi_hat > 0.0 {
        x_nu <= tol
    } else {
        x_nu.abs() <= tol
    };
    let t_nu = mw_t_with_rot(rm, &r_cw).transpose() * nu;
    StabilitySample {
        decay_ok,
        excitation: t_nu.norm_squared(),
    }
}
