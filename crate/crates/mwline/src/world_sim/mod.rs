//! Ground-truth world simulation.
//!
//! The scene (Manhattan basis, lines, reference plane) is static; only the
//! camera moves. Ground truth is therefore a camera pose integrated over
//! time, with every measured quantity recomputed analytically from that pose
//! at any instant. Nothing feature-like is integrated, so measurements carry
//! no accumulated drift and serve directly as the reference the observers
//! are judged against.
//!
//! Sign convention (see [`profile::VelocityProfile`]): the inputs `(nu,
//! omega)` describe the apparent scene motion in the camera frame. Under
//! that convention the world-to-camera rotation `R` and camera position `p`
//! evolve as `dR/dt = skew(omega) * R` and `dp/dt = -R^T * nu`.

pub mod noise;
pub mod profile;
pub mod scene;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{
    self, Axis, GeometryError, ReducedMoment, Rotation,
};
use crate::integrator::{self, LayoutBuilder, Method, StateVector, StepConfig};

pub use noise::{perturb, small_rotation, NoiseDraw};
pub use profile::{Sinusoid, VelocityProfile};
pub use scene::{random_scene, parse_scene, write_scene, SceneLine, SceneParams, WorldScene};

/// Depth floor below which a feature is considered to collide with the camera.
pub const DEPTH_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    /// A line or the reference plane passed within [`DEPTH_FLOOR`] of the
    /// camera center; measurements are undefined there.
    #[error("feature depth fell below {DEPTH_FLOOR}")]
    DepthSingularity,
    /// Rejection sampling in scene generation exceeded its retry budget.
    #[error("scene generation exhausted its retry budget")]
    RetryExhausted,
    /// A scene file did not parse.
    #[error("bad or missing scene entry '{key}'")]
    SceneFormat { key: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Camera pose: world-to-camera rotation and the camera center in the world
/// frame. The world frame coincides with the camera frame at t = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Rotation,
    pub position: Vector3<f64>,
}

impl CameraPose {
    pub fn identity() -> Self {
        CameraPose {
            rotation: Rotation::identity(),
            position: Vector3::zeros(),
        }
    }

    pub fn point_in_camera(&self, x_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (x_world - self.position)
    }
}

/// Pose kinematics under the crate's sign convention.
pub fn pose_rhs(
    r: &Matrix3<f64>,
    nu: &Vector3<f64>,
    omega: &Vector3<f64>,
) -> (Matrix3<f64>, Vector3<f64>) {
    (geometry::skew(omega) * r, -(r.transpose() * nu))
}

fn pose_step(
    pose: &CameraPose,
    nu_omega_at: impl Fn(f64) -> (Vector3<f64>, Vector3<f64>),
    t: f64,
    dt: f64,
) -> CameraPose {
    let mut b = LayoutBuilder::new();
    let r_id = b.rotation("pose_r");
    let p_id = b.plain("pose_p", 3);
    let layout = b.build();
    let mut state = StateVector::zeros(&layout);
    state.set_mat3(r_id, pose.rotation.matrix());
    state.set_vec3(p_id, &pose.position);

    let rhs = |tau: f64, y: &StateVector| -> Result<StateVector, std::convert::Infallible> {
        let (nu, omega) = nu_omega_at(tau);
        let (dr, dp) = pose_rhs(&y.mat3(r_id), &nu, &omega);
        let mut d = StateVector::zeros(&layout);
        d.set_mat3(r_id, &dr);
        d.set_vec3(p_id, &dp);
        Ok(d)
    };
    let cfg = StepConfig {
        dt,
        method: Method::Rk4,
    };
    let mut next = integrator::step(rhs, &state, t, &cfg).expect("pose kinematics stay finite");
    integrator::renormalize_blocks(&mut next).expect("rotation keeps full rank over one step");
    CameraPose {
        rotation: Rotation::from_matrix_unchecked(next.mat3(r_id)),
        position: next.vec3(p_id),
    }
}

/// One RK4 step of the pose under constant inputs, with the rotation
/// re-orthonormalized afterwards.
pub fn advance_pose(
    pose: &CameraPose,
    nu: &Vector3<f64>,
    omega: &Vector3<f64>,
    dt: f64,
) -> CameraPose {
    pose_step(pose, |_| (*nu, *omega), 0.0, dt)
}

/// One RK4 step of the pose under a time-varying profile, sampling the
/// profile at the stage times.
pub fn advance_pose_profile(
    pose: &CameraPose,
    prof: &VelocityProfile,
    t: f64,
    dt: f64,
) -> CameraPose {
    pose_step(pose, |tau| (prof.nu(tau), prof.omega(tau)), t, dt)
}

/// Rigid mounting of the IMU relative to the camera, plus the local gravity
/// magnitude used when stripping or restoring gravity from raw readings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuExtrinsics {
    /// IMU-to-camera rotation.
    pub r_ic: Rotation,
    /// IMU position in the camera frame.
    pub t_ic: Vector3<f64>,
    pub gravity: f64,
}

impl Default for ImuExtrinsics {
    fn default() -> Self {
        ImuExtrinsics {
            r_ic: Rotation::identity(),
            t_ic: Vector3::zeros(),
            gravity: 9.80665,
        }
    }
}

/// The acceleration term that multiplies the inverse plane depth in the
/// scaled-velocity kinematics: `R_IC * a_imu + skew(omega)^2 * t_IC`.
pub fn velocity_regressor(
    a_imu: &Vector3<f64>,
    omega: &Vector3<f64>,
    ext: &ImuExtrinsics,
) -> Vector3<f64> {
    let w = geometry::skew(omega);
    ext.r_ic * *a_imu + w * w * ext.t_ic
}

/// Gravity-compensated IMU acceleration consistent with the profile: the
/// reading for which [`velocity_regressor`] reproduces `d(nu)/dt + omega x nu`.
/// Returns `(omega, a_imu)`.
pub fn synthesize_imu(
    prof: &VelocityProfile,
    t: f64,
    ext: &ImuExtrinsics,
) -> (Vector3<f64>, Vector3<f64>) {
    let omega = prof.omega(t);
    let nu = prof.nu(t);
    let w = geometry::skew(&omega);
    let a_imu = ext.r_ic.transpose() * (prof.nu_rate(t) + omega.cross(&nu) - w * w * ext.t_ic);
    (omega, a_imu)
}

/// World-to-IMU rotation for the current pose.
pub fn world_to_imu(pose: &CameraPose, ext: &ImuExtrinsics) -> Rotation {
    ext.r_ic.transpose() * pose.rotation
}

/// Removes the gravity contribution from a compensated reading, producing the
/// raw specific force an accelerometer would report.
pub fn strip_gravity(a_imu: &Vector3<f64>, r_wi: &Rotation, gravity: f64) -> Vector3<f64> {
    a_imu - *r_wi * Vector3::new(0.0, 0.0, gravity)
}

/// Adds the gravity contribution back onto a raw specific force.
pub fn compensate_gravity(f_imu: &Vector3<f64>, r_wi: &Rotation, gravity: f64) -> Vector3<f64> {
    f_imu + *r_wi * Vector3::new(0.0, 0.0, gravity)
}

/// Exogenous inputs at one instant: scene-relative velocities and the
/// gravity-compensated IMU acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionInputs {
    pub nu: Vector3<f64>,
    pub omega: Vector3<f64>,
    pub a_imu: Vector3<f64>,
}

impl MotionInputs {
    pub fn from_profile(prof: &VelocityProfile, t: f64, ext: &ImuExtrinsics) -> Self {
        let (omega, a_imu) = synthesize_imu(prof, t, ext);
        MotionInputs {
            nu: prof.nu(t),
            omega,
            a_imu,
        }
    }
}

/// Everything measured about one line at one instant, camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LineMeasurement {
    pub axis: Axis,
    /// Unit direction of the line.
    pub direction: Vector3<f64>,
    /// Unit moment.
    pub moment: Vector3<f64>,
    /// Distance from the camera center. Not observable from a single image;
    /// carried as ground truth for the estimators to be judged against.
    pub depth: f64,
    pub inv_depth: f64,
    /// Moment in the Manhattan frame with the structural zero dropped.
    pub tau: ReducedMoment,
}

/// Reference-plane quantities at one instant, camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneMeasurement {
    /// Unit normal.
    pub normal: Vector3<f64>,
    /// Distance from the camera center along the normal (ground truth).
    pub depth: f64,
    pub inv_depth: f64,
    /// Translational velocity scaled by the inverse plane depth, the quantity
    /// a homography decomposition yields.
    pub scaled_velocity: Vector3<f64>,
}

/// One synthesized measurement instant.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame {
    pub t: f64,
    /// Manhattan basis with rows expressed in the camera frame.
    pub mw_frame: Rotation,
    /// Cayley parameters of `mw_frame`.
    pub cayley: Vector3<f64>,
    pub lines: Vec<LineMeasurement>,
    pub plane: PlaneMeasurement,
    pub inputs: MotionInputs,
}

/// Computes every measured quantity for `scene` seen from `pose`, exactly.
///
/// Fails with [`SimError::DepthSingularity`] if any feature is at the camera
/// center, and propagates [`GeometryError::SingularRotation`] when the
/// Manhattan frame reaches the 180-degree surface of the Cayley chart.
pub fn observe(
    scene: &WorldScene,
    pose: &CameraPose,
    t: f64,
    inputs: &MotionInputs,
) -> Result<MeasurementFrame, SimError> {
    let r = pose.rotation;
    let mw_frame = scene.mw * r.transpose();
    let cayley = geometry::cayley_from_rotation(&mw_frame)?;

    let mut lines = Vec::with_capacity(scene.lines.len());
    for line in &scene.lines {
        let direction = r * scene.mw.row(line.axis.index());
        let in_camera = pose.point_in_camera(&line.anchor);
        let moment_raw = in_camera.cross(&direction);
        let depth = moment_raw.norm();
        if depth <= DEPTH_FLOOR {
            return Err(SimError::DepthSingularity);
        }
        let moment = moment_raw / depth;
        let tau = geometry::project_moment(&mw_frame, &moment, line.axis)?;
        lines.push(LineMeasurement {
            axis: line.axis,
            direction,
            moment,
            depth,
            inv_depth: 1.0 / depth,
            tau,
        });
    }

    let plane_depth = scene.plane_offset - scene.plane_normal.dot(&pose.position);
    if plane_depth <= DEPTH_FLOOR {
        return Err(SimError::DepthSingularity);
    }
    let inv_depth = 1.0 / plane_depth;
    let plane = PlaneMeasurement {
        normal: r * scene.plane_normal,
        depth: plane_depth,
        inv_depth,
        scaled_velocity: inputs.nu * inv_depth,
    };

    Ok(MeasurementFrame {
        t,
        mw_frame,
        cayley,
        lines,
        plane,
        inputs: *inputs,
    })
}
