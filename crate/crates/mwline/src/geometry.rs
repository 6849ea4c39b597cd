//! Rotation and line primitives shared by the simulator and the observers.
//!
//! Lines are kept in binormalized Plücker form: a unit direction, a unit
//! moment orthogonal to it, and a positive depth (distance from the camera
//! center). Rotations between the camera and the Manhattan frame are
//! parameterized by the Cayley transform, which maps the group minus the
//! 180-degree surface onto R^3 and back rationally, with no trigonometry.

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

/// Orthonormality tolerance accepted by [`Rotation::from_matrix`].
pub const ROTATION_TOL: f64 = 1e-9;
/// Determinant guard below which a 3x3 matrix is treated as singular.
const DET_GUARD: f64 = 1e-12;
/// Residual allowed on the dropped component in [`project_moment`].
pub const AXIS_RESIDUAL_TOL: f64 = 1e-6;
/// Moment-norm floor below which a point/direction pair does not define a line.
const MOMENT_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    /// Rotation is on (or numerically at) the 180-degree surface where the
    /// Cayley parameterization blows up: `R + I` is not invertible.
    #[error("rotation too close to 180 degrees for the Cayley chart")]
    SingularRotation,
    /// The component that should vanish when a moment is expressed in the
    /// Manhattan frame did not.
    #[error("moment has residual {residual:.3e} along its own axis")]
    AxisMismatch { residual: f64 },
    /// Inputs do not define a valid binormalized line.
    #[error("degenerate line")]
    DegenerateLine,
}

/// Skew-symmetric matrix of `v`, so that `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Closed-form adjugate inverse with a hard determinant guard.
///
/// All 3x3 inversions in this crate go through here so near-singular input is
/// rejected identically everywhere instead of producing huge entries.
fn adjugate_inverse(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let c00 = m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)];
    let c01 = m[(1, 2)] * m[(2, 0)] - m[(1, 0)] * m[(2, 2)];
    let c02 = m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)];
    let det = m[(0, 0)] * c00 + m[(0, 1)] * c01 + m[(0, 2)] * c02;
    if det.abs() < DET_GUARD {
        return None;
    }
    let c10 = m[(0, 2)] * m[(2, 1)] - m[(0, 1)] * m[(2, 2)];
    let c11 = m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)];
    let c12 = m[(0, 1)] * m[(2, 0)] - m[(0, 0)] * m[(2, 1)];
    let c20 = m[(0, 1)] * m[(1, 2)] - m[(0, 2)] * m[(1, 1)];
    let c21 = m[(0, 2)] * m[(1, 0)] - m[(0, 0)] * m[(1, 2)];
    let c22 = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Some(
        Matrix3::new(
            c00, c10, c20, //
            c01, c11, c21, //
            c02, c12, c22,
        ) / det,
    )
}

/// A 3x3 rotation matrix with checked construction.
///
/// Stored as a plain matrix; the checked constructor enforces orthonormality
/// and positive determinant. Long integrations re-orthonormalize through
/// [`Rotation::orthonormalized`], geometry itself only asserts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Checks `m` is orthonormal with determinant +1 within [`ROTATION_TOL`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let defect = (m.transpose() * m - Matrix3::identity()).norm();
        if defect > ROTATION_TOL || (m.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::DegenerateLine);
        }
        Ok(Rotation(m))
    }

    /// Wraps without checking. Use for matrices that are orthonormal by
    /// construction (products of rotations, Cayley images, fresh Gram-Schmidt).
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Rodrigues formula for a rotation of `angle` about the unit vector `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let k = skew(axis);
        Rotation(Matrix3::identity() + angle.sin() * k + (1.0 - angle.cos()) * k * k)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Row `i` as a column vector.
    pub fn row(&self, i: usize) -> Vector3<f64> {
        self.0.row(i).transpose()
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// Rotation angle in [0, pi].
    pub fn angle(&self) -> f64 {
        (((self.0.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
    }

    /// Nearest-rotation cleanup after numeric drift: Gram-Schmidt on the first
    /// two rows, third row from their cross product (keeps determinant +1).
    pub fn orthonormalized(&self) -> Rotation {
        let r0 = self.row(0).normalize();
        let mut r1 = self.row(1);
        r1 -= r0 * r0.dot(&r1);
        let r1 = r1.normalize();
        let r2 = r0.cross(&r1);
        Rotation(Matrix3::from_rows(&[
            r0.transpose(),
            r1.transpose(),
            r2.transpose(),
        ]))
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, v: Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl std::ops::Mul<Rotation> for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Cayley parameters of `r`, i.e. the vector `c` with `G = skew(c)` where
/// `G = (R - I)(R + I)^-1`.
///
/// Fails with [`GeometryError::SingularRotation`] on the 180-degree surface,
/// where `R + I` loses rank. The parameter grows like `tan(angle / 2)`, so it
/// is large but finite arbitrarily close to that surface.
pub fn cayley_from_rotation(r: &Rotation) -> Result<Vector3<f64>, GeometryError> {
    let m = r.matrix();
    let inv = adjugate_inverse(&(m + Matrix3::identity()))
        .ok_or(GeometryError::SingularRotation)?;
    let g = (m - Matrix3::identity()) * inv;
    // G is the skew matrix of c:
    //     [  0   -c3   c2 ]
    //     [  c3   0   -c1 ]
    //     [ -c2   c1   0  ]
    // so the components are read off the (3,2), (1,3) and (2,1) entries.
    // Flipping any of these three signs breaks the round trip with
    // `rotation_from_cayley` in a way no single test of one function catches.
    Ok(Vector3::new(g[(2, 1)], g[(0, 2)], g[(1, 0)]))
}

/// Inverse Cayley map: `R = (I + G)(I - G)^-1` with `G = skew(c)`.
///
/// Defined for every finite `c`; `det(I - G) = 1 + |c|^2` never vanishes.
pub fn rotation_from_cayley(c: &Vector3<f64>) -> Rotation {
    let g = skew(c);
    let inv = adjugate_inverse(&(Matrix3::identity() - g))
        .expect("det(I - skew(c)) = 1 + |c|^2 >= 1");
    Rotation::from_matrix_unchecked((Matrix3::identity() + g) * inv)
}

/// Index of a Manhattan direction. Lines in the scene run along one of three
/// mutually orthogonal directions; the label selects which one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    D1,
    D2,
    D3,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::D1, Axis::D2, Axis::D3];

    pub fn index(self) -> usize {
        match self {
            Axis::D1 => 0,
            Axis::D2 => 1,
            Axis::D3 => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Axis> {
        match i {
            0 => Some(Axis::D1),
            1 => Some(Axis::D2),
            2 => Some(Axis::D3),
            _ => None,
        }
    }

    /// 1-based label used in scene files and reports.
    pub fn label(self) -> usize {
        self.index() + 1
    }

    /// The two component indices that survive when this axis is dropped,
    /// always in ascending order.
    pub fn surviving(self) -> (usize, usize) {
        match self {
            Axis::D1 => (1, 2),
            Axis::D2 => (0, 2),
            Axis::D3 => (0, 1),
        }
    }
}

/// A moment expressed in the Manhattan frame with its structurally-zero
/// component removed. Ordering of `tau` follows [`Axis::surviving`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedMoment {
    pub tau: Vector2<f64>,
    pub axis: Axis,
}

/// Drops the component of `v` along `axis`, keeping the other two in
/// ascending index order.
pub fn drop_axis(v: &Vector3<f64>, axis: Axis) -> Vector2<f64> {
    let (a, b) = axis.surviving();
    Vector2::new(v[a], v[b])
}

/// Inverse of [`drop_axis`]: zero-pads `tau` back to a full vector.
pub fn pad_axis(tau: &Vector2<f64>, axis: Axis) -> Vector3<f64> {
    let mut v = Vector3::zeros();
    let (a, b) = axis.surviving();
    v[a] = tau.x;
    v[b] = tau.y;
    v
}

/// Expresses a camera-frame moment `n` in the Manhattan frame `r` and drops
/// the component along the line's own axis.
///
/// A line along Manhattan direction `j` has its moment orthogonal to that
/// direction, so the `j`-th component of `r * n` must vanish. A residual
/// above [`AXIS_RESIDUAL_TOL`] means `n` or the frame is inconsistent with
/// the axis label and is reported rather than silently dropped.
pub fn project_moment(
    r: &Rotation,
    n: &Vector3<f64>,
    axis: Axis,
) -> Result<ReducedMoment, GeometryError> {
    let o = *r * *n;
    let residual = o[axis.index()].abs();
    if residual > AXIS_RESIDUAL_TOL {
        return Err(GeometryError::AxisMismatch { residual });
    }
    Ok(ReducedMoment {
        tau: drop_axis(&o, axis),
        axis,
    })
}

/// Rebuilds the camera-frame moment from its reduced Manhattan-frame form:
/// the padded vector recombined along the rows of `r`.
pub fn reconstruct_moment(rm: &ReducedMoment, r: &Rotation) -> Vector3<f64> {
    r.transpose() * pad_axis(&rm.tau, rm.axis)
}

/// A line in binormalized Plücker form: unit direction, unit moment, and the
/// distance from the origin of the frame the coordinates are expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlueckerLine {
    pub direction: Vector3<f64>,
    pub moment: Vector3<f64>,
    pub depth: f64,
}

impl PlueckerLine {
    /// Validates the binormalized form: unit norms, orthogonality, positive
    /// finite depth.
    pub fn new(
        direction: Vector3<f64>,
        moment: Vector3<f64>,
        depth: f64,
    ) -> Result<Self, GeometryError> {
        let ok = (direction.norm() - 1.0).abs() <= ROTATION_TOL
            && (moment.norm() - 1.0).abs() <= ROTATION_TOL
            && direction.dot(&moment).abs() <= ROTATION_TOL
            && depth.is_finite()
            && depth > 0.0;
        if !ok {
            return Err(GeometryError::DegenerateLine);
        }
        Ok(PlueckerLine {
            direction,
            moment,
            depth,
        })
    }

    /// Line through point `p` with unit direction `d`. The depth is the
    /// distance from the origin; `p` on a line through the origin gives no
    /// usable moment and is rejected.
    pub fn from_point_direction(
        p: &Vector3<f64>,
        d: &Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        if (d.norm() - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::DegenerateLine);
        }
        let m = p.cross(d);
        let depth = m.norm();
        if depth <= MOMENT_FLOOR {
            return Err(GeometryError::DegenerateLine);
        }
        Ok(PlueckerLine {
            direction: *d,
            moment: m / depth,
            depth,
        })
    }

    /// Unit vector from the origin to the closest point of the line.
    pub fn foot_direction(&self) -> Vector3<f64> {
        self.direction.cross(&self.moment)
    }
}
