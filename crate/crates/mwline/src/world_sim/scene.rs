//! Random scene generation and the plain-text scene file format.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SimError;
use crate::geometry::{Axis, PlueckerLine, Rotation};

/// A static world: a Manhattan basis, lines along its axes, and one textured
/// reference plane. Coordinates are expressed in the initial camera frame
/// (the camera starts at the identity pose).
#[derive(Debug, Clone, PartialEq)]
pub struct WorldScene {
    /// Manhattan basis; row `j` is the world direction lines with axis label
    /// `j+1` run along.
    pub mw: Rotation,
    pub lines: Vec<SceneLine>,
    /// Unit normal of the reference plane, world frame.
    pub plane_normal: Vector3<f64>,
    /// Distance from the initial camera center to the plane along the normal.
    pub plane_offset: f64,
    /// Seed this scene was generated from, kept for replay.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneLine {
    /// A point the line passes through, world frame.
    pub anchor: Vector3<f64>,
    pub axis: Axis,
}

/// Knobs for [`random_scene`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub lines_per_axis: [usize; 3],
    /// Side of the axis-aligned cube anchors are drawn from.
    pub cube_side: f64,
    /// Center of that cube; default puts it in front of the camera.
    pub cube_center: Vector3<f64>,
    /// Lines closer than this to the initial camera center are redrawn.
    pub min_depth: f64,
    /// The plane offset is drawn uniformly from this interval.
    pub plane_offset_range: (f64, f64),
    /// Manhattan bases rotated further than this from the camera are redrawn,
    /// keeping the initial frame clear of the Cayley chart boundary at pi.
    pub max_frame_angle: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            lines_per_axis: [2, 2, 2],
            cube_side: 25.0,
            cube_center: Vector3::new(0.0, 0.0, 17.5),
            min_depth: 0.1,
            plane_offset_range: (2.5, 7.5),
            max_frame_angle: std::f64::consts::PI - 0.1,
        }
    }
}

/// Redraw budget for each rejection-sampled quantity before giving up.
const MAX_ATTEMPTS: usize = 100;

/// Uniformly distributed rotation from three uniform variates
/// (subgroup-algorithm construction via a random unit quaternion).
fn uniform_rotation(rng: &mut impl Rng) -> Rotation {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    let u3: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos());
    // Quaternion to matrix, unit by construction.
    let m = Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    );
    Rotation::from_matrix_unchecked(m)
}

/// Draws a scene: a uniformly random Manhattan basis (bounded away from the
/// 180-degree parameterization singularity), line anchors uniform in a cube in
/// front of the camera with a depth floor, and a reference plane facing the
/// camera with a random offset.
pub fn random_scene(seed: u64, params: &SceneParams) -> Result<WorldScene, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut mw = uniform_rotation(&mut rng);
    let mut attempts = 0;
    while mw.angle() > params.max_frame_angle {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(SimError::RetryExhausted);
        }
        mw = uniform_rotation(&mut rng);
    }

    let half = params.cube_side / 2.0;
    let draw_anchor = |rng: &mut ChaCha8Rng| {
        params.cube_center
            + Vector3::new(
                rng.gen_range(-half..=half),
                rng.gen_range(-half..=half),
                rng.gen_range(-half..=half),
            )
    };

    let mut lines = Vec::new();
    for (i, &count) in params.lines_per_axis.iter().enumerate() {
        let axis = Axis::from_index(i).unwrap();
        let direction = mw.row(i);
        for _ in 0..count {
            let mut attempts = 0;
            let anchor = loop {
                let anchor = draw_anchor(&mut rng);
                // Depth check from the initial pose (identity): the anchor's
                // world coordinates are already camera coordinates here.
                match PlueckerLine::from_point_direction(&anchor, &direction) {
                    Ok(line) if line.depth > params.min_depth => break anchor,
                    _ => {
                        attempts += 1;
                        if attempts > MAX_ATTEMPTS {
                            return Err(SimError::RetryExhausted);
                        }
                    }
                }
            };
            lines.push(SceneLine { anchor, axis });
        }
    }

    let (lo, hi) = params.plane_offset_range;
    Ok(WorldScene {
        mw,
        lines,
        // The camera starts looking along +z; the plane faces it straight on.
        plane_normal: Vector3::z(),
        plane_offset: rng.gen_range(lo..=hi),
        seed,
    })
}

fn write_vec(out: &mut String, name: &str, v: &[f64]) {
    out.push_str(name);
    out.push_str(" =");
    for x in v {
        out.push(' ');
        out.push_str(&x.to_string());
    }
    out.push('\n');
}

/// Serializes a scene to the key-value text format. Floats use the shortest
/// round-trippable form, so parsing the output restores the scene exactly.
pub fn write_scene(scene: &WorldScene) -> String {
    let mut out = String::from("# mwline scene\n");
    out.push_str(&format!("seed = {}\n", scene.seed));
    let m = scene.mw.matrix();
    let rows: Vec<f64> = (0..3)
        .flat_map(|r| (0..3).map(move |c| m[(r, c)]))
        .collect();
    write_vec(&mut out, "mw_rows", &rows);
    write_vec(&mut out, "plane_normal", scene.plane_normal.as_slice());
    write_vec(&mut out, "plane_offset", &[scene.plane_offset]);
    out.push_str(&format!("lines = {}\n", scene.lines.len()));
    for (i, line) in scene.lines.iter().enumerate() {
        write_vec(&mut out, &format!("line_{i}_anchor"), line.anchor.as_slice());
        out.push_str(&format!("line_{i}_axis = {}\n", line.axis.label()));
    }
    out
}

fn parse_floats(value: &str, expect: usize, key: &str) -> Result<Vec<f64>, SimError> {
    let parts: Result<Vec<f64>, _> = value.split_whitespace().map(str::parse).collect();
    match parts {
        Ok(v) if v.len() == expect => Ok(v),
        _ => Err(SimError::SceneFormat {
            key: key.to_string(),
        }),
    }
}

/// Parses the format produced by [`write_scene`].
pub fn parse_scene(text: &str) -> Result<WorldScene, SimError> {
    let mut fields = std::collections::HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| SimError::SceneFormat {
            key: line.to_string(),
        })?;
        fields.insert(key.trim().to_string(), value.trim().to_string());
    }
    let get = |key: &str| {
        fields.get(key).ok_or_else(|| SimError::SceneFormat {
            key: key.to_string(),
        })
    };

    let seed: u64 = get("seed")?
        .parse()
        .map_err(|_| SimError::SceneFormat { key: "seed".into() })?;
    let rows = parse_floats(get("mw_rows")?, 9, "mw_rows")?;
    let mw = Rotation::from_matrix(Matrix3::new(
        rows[0], rows[1], rows[2], rows[3], rows[4], rows[5], rows[6], rows[7], rows[8],
    ))
    .map_err(|_| SimError::SceneFormat {
        key: "mw_rows".into(),
    })?;
    let normal = parse_floats(get("plane_normal")?, 3, "plane_normal")?;
    let offset = parse_floats(get("plane_offset")?, 1, "plane_offset")?[0];
    let count: usize = get("lines")?
        .parse()
        .map_err(|_| SimError::SceneFormat { key: "lines".into() })?;

    let mut lines = Vec::with_capacity(count);
    for i in 0..count {
        let anchor_key = format!("line_{i}_anchor");
        let anchor = parse_floats(get(&anchor_key)?, 3, &anchor_key)?;
        let axis_key = format!("line_{i}_axis");
        let label: usize = get(&axis_key)?
            .parse()
            .map_err(|_| SimError::SceneFormat {
                key: axis_key.clone(),
            })?;
        let axis = label
            .checked_sub(1)
            .and_then(Axis::from_index)
            .ok_or(SimError::SceneFormat { key: axis_key })?;
        lines.push(SceneLine {
            anchor: Vector3::new(anchor[0], anchor[1], anchor[2]),
            axis,
        });
    }

    Ok(WorldScene {
        mw,
        lines,
        plane_normal: Vector3::new(normal[0], normal[1], normal[2]),
        plane_offset: offset,
        seed,
    })
}
