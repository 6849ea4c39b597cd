//! Run configuration: a complete, diff-friendly TOML description of one
//! experiment, the named presets that generate them, and the manifest
//! written next to every run's outputs.
//!
//! A manifest is a config with a `[manifest]` section prepended, so
//! re-running with `--config <out>/manifest.toml` replays the run exactly.

use anyhow::{bail, Context, Result};
use mwline::geometry::Rotation;
use mwline::observers::PlaneGains;
use mwline::trials::{Mode, Thresholds, TrialConfig, UnknownInit};
use mwline::world_sim::{ImuExtrinsics, SceneParams, Sinusoid, VelocityProfile};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<ManifestSection>,
    pub run: RunSection,
    pub scene: SceneSection,
    pub gains: GainsSection,
    pub init: InitSection,
    pub thresholds: ThresholdsSection,
    pub profile: ProfileSection,
    pub imu: ImuSection,
}

/// Provenance stamp for a finished configuration; ignored when the file is
/// read back as a config, so replays may come straight from a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSection {
    pub command: String,
    pub config_source: String,
    pub tool_version: String,
    pub out_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Base seed; every random quantity in the run derives from it.
    pub seed: u64,
    pub trials: usize,
    /// `mw_only`, `cascade`, or `cascade_true_velocity`.
    pub mode: String,
    pub dt: f64,
    pub duration_s: f64,
    pub noise_sigma_deg: f64,
    /// Noise levels visited by the `sweep` command.
    pub sigmas_deg: Vec<f64>,
    pub record_series: bool,
    pub series_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub lines_per_axis: [usize; 3],
    pub cube_side: f64,
    pub cube_center: [f64; 3],
    pub min_depth: f64,
    pub plane_offset_range: [f64; 2],
    pub max_frame_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub k_s: f64,
    pub k_rho: f64,
    pub k_c: f64,
    pub k_tau: f64,
    pub k_chi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    /// `uniform` or `at_truth`.
    pub kind: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsSection {
    pub convergence_fraction: f64,
    pub divergence_factor: f64,
    pub debounce_s: f64,
    pub psi_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub nu_amplitude: [f64; 3],
    pub nu_frequency: [f64; 3],
    pub nu_phase: [f64; 3],
    pub omega_amplitude: [f64; 3],
    pub omega_frequency: [f64; 3],
    pub omega_phase: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuSection {
    /// IMU-to-camera rotation as a rotation vector (axis times angle).
    pub r_ic_rotvec: [f64; 3],
    pub t_ic: [f64; 3],
    pub gravity: f64,
}

pub const PRESETS: &[&str] = &["mwlest-noiseless", "mwlest-noise", "cascade-vib"];

/// Builds the named preset's full configuration.
pub fn preset(name: &str) -> Result<RunConfig> {
    let base = |cfg: &TrialConfig| from_trial_config(cfg);
    match name {
        "mwlest-noiseless" => {
            let mut rc = base(&mwline::trials::presets::mw_survey(1, 0.0));
            rc.run.trials = 200;
            Ok(rc)
        }
        "mwlest-noise" => {
            let mut rc = base(&mwline::trials::presets::mw_survey(1, 2.0));
            rc.run.trials = 200;
            rc.run.sigmas_deg = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
            Ok(rc)
        }
        "cascade-vib" => Ok(base(&mwline::trials::presets::cascade_vib(4))),
        other => bail!(
            "unknown preset '{other}'; available presets: {}",
            PRESETS.join(", ")
        ),
    }
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn to_toml(config: &RunConfig) -> String {
    toml::to_string_pretty(config).expect("config serializes")
}

fn mode_string(mode: Mode) -> &'static str {
    match mode {
        Mode::MwOnly => "mw_only",
        Mode::Cascade {
            force_true_velocity: false,
        } => "cascade",
        Mode::Cascade {
            force_true_velocity: true,
        } => "cascade_true_velocity",
    }
}

fn sinusoid_triplet(s: &[Sinusoid; 3]) -> ([f64; 3], [f64; 3], [f64; 3]) {
    let get = |f: fn(&Sinusoid) -> f64| [f(&s[0]), f(&s[1]), f(&s[2])];
    (
        get(|s| s.amplitude),
        get(|s| s.frequency),
        get(|s| s.phase),
    )
}

fn rotvec(r: &Rotation) -> [f64; 3] {
    let angle = r.angle();
    if angle < 1e-12 {
        return [0.0; 3];
    }
    // Unit axis from the skew part of the rotation matrix.
    let m = r.matrix();
    let axis = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
        .normalize();
    [axis.x * angle, axis.y * angle, axis.z * angle]
}

/// Serializes a trial configuration into the config file schema.
pub fn from_trial_config(cfg: &TrialConfig) -> RunConfig {
    let (nu_amplitude, nu_frequency, nu_phase) = sinusoid_triplet(&cfg.profile.nu);
    let (omega_amplitude, omega_frequency, omega_phase) = sinusoid_triplet(&cfg.profile.omega);
    let (kind, lo, hi) = match cfg.init {
        UnknownInit::AtTruth => ("at_truth", 0.0, 0.0),
        UnknownInit::Uniform { lo, hi } => ("uniform", lo, hi),
    };
    RunConfig {
        manifest: None,
        run: RunSection {
            seed: cfg.seed,
            trials: 1,
            mode: mode_string(cfg.mode).to_string(),
            dt: cfg.dt,
            duration_s: cfg.duration,
            noise_sigma_deg: cfg.noise_sigma_deg,
            sigmas_deg: Vec::new(),
            record_series: cfg.record_series,
            series_stride: cfg.series_stride,
        },
        scene: SceneSection {
            lines_per_axis: cfg.scene.lines_per_axis,
            cube_side: cfg.scene.cube_side,
            cube_center: cfg.scene.cube_center.into(),
            min_depth: cfg.scene.min_depth,
            plane_offset_range: [cfg.scene.plane_offset_range.0, cfg.scene.plane_offset_range.1],
            max_frame_angle: cfg.scene.max_frame_angle,
        },
        gains: GainsSection {
            k_s: cfg.plane_gains.k_s,
            k_rho: cfg.plane_gains.k_rho,
            k_c: cfg.k_c,
            k_tau: cfg.k_tau,
            k_chi: cfg.k_chi,
        },
        init: InitSection {
            kind: kind.to_string(),
            lo,
            hi,
        },
        thresholds: ThresholdsSection {
            convergence_fraction: cfg.thresholds.convergence_fraction,
            divergence_factor: cfg.thresholds.divergence_factor,
            debounce_s: cfg.thresholds.debounce_s,
            psi_floor: cfg.thresholds.psi_floor,
        },
        profile: ProfileSection {
            nu_amplitude,
            nu_frequency,
            nu_phase,
            omega_amplitude,
            omega_frequency,
            omega_phase,
        },
        imu: ImuSection {
            r_ic_rotvec: rotvec(&cfg.ext.r_ic),
            t_ic: cfg.ext.t_ic.into(),
            gravity: cfg.ext.gravity,
        },
    }
}

/// Validates and lowers the config into the trial runner's terms. Errors
/// name the offending key.
pub fn to_trial_config(rc: &RunConfig) -> Result<TrialConfig> {
    let mode = match rc.run.mode.as_str() {
        "mw_only" => Mode::MwOnly,
        "cascade" => Mode::Cascade {
            force_true_velocity: false,
        },
        "cascade_true_velocity" => Mode::Cascade {
            force_true_velocity: true,
        },
        other => bail!("run.mode: unknown mode '{other}'"),
    };
    let init = match rc.init.kind.as_str() {
        "at_truth" => UnknownInit::AtTruth,
        "uniform" => {
            if !(rc.init.lo < rc.init.hi) {
                bail!("init.lo/init.hi: need lo < hi, got [{}, {}]", rc.init.lo, rc.init.hi);
            }
            UnknownInit::Uniform {
                lo: rc.init.lo,
                hi: rc.init.hi,
            }
        }
        other => bail!("init.kind: unknown kind '{other}'"),
    };
    if !(rc.run.dt > 0.0) {
        bail!("run.dt: must be positive, got {}", rc.run.dt);
    }
    if !(rc.run.duration_s > 0.0) {
        bail!("run.duration_s: must be positive, got {}", rc.run.duration_s);
    }
    if rc.run.series_stride == 0 {
        bail!("run.series_stride: must be at least 1");
    }
    if rc.run.noise_sigma_deg < 0.0 {
        bail!("run.noise_sigma_deg: must be non-negative, got {}", rc.run.noise_sigma_deg);
    }
    if rc.scene.lines_per_axis.iter().sum::<usize>() == 0 {
        bail!("scene.lines_per_axis: at least one line required");
    }
    if !(rc.scene.plane_offset_range[0] > 0.0
        && rc.scene.plane_offset_range[0] <= rc.scene.plane_offset_range[1])
    {
        bail!(
            "scene.plane_offset_range: need 0 < lo <= hi, got {:?}",
            rc.scene.plane_offset_range
        );
    }
    for (key, value) in [
        ("gains.k_s", rc.gains.k_s),
        ("gains.k_rho", rc.gains.k_rho),
        ("gains.k_c", rc.gains.k_c),
        ("gains.k_tau", rc.gains.k_tau),
        ("gains.k_chi", rc.gains.k_chi),
    ] {
        if !(value > 0.0) {
            bail!("{key}: must be positive, got {value}");
        }
    }

    let sin3 = |a: &[f64; 3], f: &[f64; 3], p: &[f64; 3]| {
        [
            Sinusoid::new(a[0], f[0], p[0]),
            Sinusoid::new(a[1], f[1], p[1]),
            Sinusoid::new(a[2], f[2], p[2]),
        ]
    };
    let rv = Vector3::from(rc.imu.r_ic_rotvec);
    let r_ic = if rv.norm() < 1e-12 {
        Rotation::identity()
    } else {
        Rotation::from_axis_angle(&rv.normalize(), rv.norm())
    };

    Ok(TrialConfig {
        seed: rc.run.seed,
        scene: SceneParams {
            lines_per_axis: rc.scene.lines_per_axis,
            cube_side: rc.scene.cube_side,
            cube_center: Vector3::from(rc.scene.cube_center),
            min_depth: rc.scene.min_depth,
            plane_offset_range: (rc.scene.plane_offset_range[0], rc.scene.plane_offset_range[1]),
            max_frame_angle: rc.scene.max_frame_angle,
        },
        profile: VelocityProfile {
            nu: sin3(&rc.profile.nu_amplitude, &rc.profile.nu_frequency, &rc.profile.nu_phase),
            omega: sin3(
                &rc.profile.omega_amplitude,
                &rc.profile.omega_frequency,
                &rc.profile.omega_phase,
            ),
        },
        ext: ImuExtrinsics {
            r_ic,
            t_ic: Vector3::from(rc.imu.t_ic),
            gravity: rc.imu.gravity,
        },
        mode,
        plane_gains: PlaneGains {
            k_s: rc.gains.k_s,
            k_rho: rc.gains.k_rho,
        },
        k_c: rc.gains.k_c,
        k_tau: rc.gains.k_tau,
        k_chi: rc.gains.k_chi,
        dt: rc.run.dt,
        duration: rc.run.duration_s,
        noise_sigma_deg: rc.run.noise_sigma_deg,
        init,
        thresholds: Thresholds {
            convergence_fraction: rc.thresholds.convergence_fraction,
            divergence_factor: rc.thresholds.divergence_factor,
            debounce_s: rc.thresholds.debounce_s,
            psi_floor: rc.thresholds.psi_floor,
        },
        record_series: rc.run.record_series,
        series_stride: rc.run.series_stride,
    })
}
