//! Property suites for the rotation chart, the reduced-moment maps, and the
//! gauge freedom of the measurement pipeline.

use mwline::geometry::{
    cayley_from_rotation, drop_axis, pad_axis, project_moment, reconstruct_moment,
    rotation_from_cayley, Axis, Rotation,
};
use mwline::world_sim::{
    observe, parse_scene, random_scene, write_scene, CameraPose, MotionInputs, SceneLine,
    SceneParams, VelocityProfile, WorldScene,
};
use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;

fn unit_axis() -> impl Strategy<Value = Vector3<f64>> {
    ([-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0]).prop_filter_map("axis too short", |a| {
        let v = Vector3::new(a[0], a[1], a[2]);
        (v.norm() > 0.1).then(|| v.normalize())
    })
}

fn rotation_below_pi() -> impl Strategy<Value = Rotation> {
    (unit_axis(), 0.0f64..3.0).prop_map(|(axis, angle)| Rotation::from_axis_angle(&axis, angle))
}

fn manhattan_axis() -> impl Strategy<Value = Axis> {
    prop_oneof![Just(Axis::D1), Just(Axis::D2), Just(Axis::D3)]
}

/// Rewrites the scene in a rotated world basis. Camera-frame measurements
/// cannot depend on this choice.
fn rotate_world(scene: &WorldScene, w: &Rotation) -> WorldScene {
    WorldScene {
        mw: scene.mw * w.transpose(),
        lines: scene
            .lines
            .iter()
            .map(|l| SceneLine {
                anchor: *w * l.anchor,
                axis: l.axis,
            })
            .collect(),
        plane_normal: *w * scene.plane_normal,
        plane_offset: scene.plane_offset,
        seed: scene.seed,
    }
}

proptest! {
    /// The chart inverts itself and agrees with the transform computed by a
    /// third-party matrix inverse.
    #[test]
    fn chart_round_trips_and_matches_reference((r, ) in (rotation_below_pi(), )) {
        let c = cayley_from_rotation(&r).expect("angle stays below the chart edge");
        let back = rotation_from_cayley(&c);
        prop_assert!((back.matrix() - r.matrix()).abs().max() < 1e-9);

        let m = r.matrix();
        let g = (m - Matrix3::identity())
            * (m + Matrix3::identity()).try_inverse().expect("I + R regular below pi");
        prop_assert!((g + g.transpose()).abs().max() < 1e-10);
        let c_ref = Vector3::new(g[(2, 1)], g[(0, 2)], g[(1, 0)]);
        prop_assert!((c - c_ref).norm() < 1e-9 * (1.0 + c.norm()));
    }

    /// Dropping the structural zero and padding it back are mutual inverses,
    /// exactly.
    #[test]
    fn drop_and_pad_are_inverse(
        v in [-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0],
        tau in [-10.0f64..10.0, -10.0f64..10.0],
        axis in manhattan_axis(),
    ) {
        let tau = Vector2::new(tau[0], tau[1]);
        prop_assert_eq!(drop_axis(&pad_axis(&tau, axis), axis), tau);

        let mut v = Vector3::new(v[0], v[1], v[2]);
        v[axis.index()] = 0.0;
        prop_assert_eq!(pad_axis(&drop_axis(&v, axis), axis), v);
    }

    /// A moment consistent with its axis label survives projection and
    /// reconstruction.
    #[test]
    fn projection_round_trips(
        r in rotation_below_pi(),
        raw in [-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0],
        axis in manhattan_axis(),
    ) {
        let mut o = Vector3::new(raw[0], raw[1], raw[2]);
        o[axis.index()] = 0.0;
        prop_assume!(o.norm() > 0.1);
        o.normalize_mut();

        let n = r.transpose() * o;
        let rm = project_moment(&r, &n, axis).expect("constructed moment matches its label");
        prop_assert!((reconstruct_moment(&rm, &r) - n).abs().max() < 1e-12);
    }

    /// Measurements live in the camera frame, so re-expressing the scene in
    /// any rotated world basis must not change them.
    #[test]
    fn measurements_ignore_the_world_basis(
        seed in 0u64..5000,
        w in rotation_below_pi(),
        pose_axis in unit_axis(),
        pose_angle in 0.0f64..0.5,
        offset in [-1.5f64..1.5, -1.5f64..1.5, -1.0f64..1.0],
    ) {
        let scene = match random_scene(seed, &SceneParams::default()) {
            Ok(s) => s,
            Err(_) => return Ok(()),
        };
        let pose = CameraPose {
            rotation: Rotation::from_axis_angle(&pose_axis, pose_angle),
            position: Vector3::new(offset[0], offset[1], offset[2]),
        };
        let gauge_pose = CameraPose {
            rotation: pose.rotation * w.transpose(),
            position: w * pose.position,
        };
        let profile = VelocityProfile::constant(
            Vector3::new(0.4, -0.2, 0.3),
            Vector3::new(0.1, 0.2, -0.1),
        );
        let inputs = MotionInputs::from_profile(&profile, 0.0, &Default::default());

        let plain = observe(&scene, &pose, 0.0, &inputs);
        let rotated = observe(&rotate_world(&scene, &w), &gauge_pose, 0.0, &inputs);
        match (plain, rotated) {
            (Err(a), Err(b)) => {
                prop_assert_eq!(std::mem::discriminant(&a), std::mem::discriminant(&b));
            }
            (Ok(a), Ok(b)) => {
                let tol = 1e-9;
                prop_assert!((a.mw_frame.matrix() - b.mw_frame.matrix()).abs().max() < tol);
                prop_assert!((a.cayley - b.cayley).norm() < tol);
                prop_assert!((a.plane.normal - b.plane.normal).norm() < tol);
                prop_assert!((a.plane.depth - b.plane.depth).abs() < tol);
                prop_assert!((a.plane.scaled_velocity - b.plane.scaled_velocity).norm() < tol);
                for (la, lb) in a.lines.iter().zip(&b.lines) {
                    prop_assert_eq!(la.axis, lb.axis);
                    prop_assert!((la.direction - lb.direction).norm() < tol);
                    prop_assert!((la.moment - lb.moment).norm() < tol);
                    prop_assert!((la.depth - lb.depth).abs() < tol);
                    prop_assert!((la.tau.tau - lb.tau.tau).norm() < tol);
                }
            }
            (a, b) => {
                return Err(TestCaseError::fail(format!(
                    "gauge changed observability: {:?} vs {:?}",
                    a.err(),
                    b.err()
                )));
            }
        }
    }

    /// The scene file format reproduces every field exactly.
    #[test]
    fn scene_files_round_trip(seed in 0u64..5000) {
        let scene = match random_scene(seed, &SceneParams::default()) {
            Ok(s) => s,
            Err(_) => return Ok(()),
        };
        let parsed = parse_scene(&write_scene(&scene)).expect("own output parses");
        prop_assert_eq!(scene, parsed);
    }
}
