//! Single-trial execution: a camera flown through a random scene while one
//! of the observer configurations estimates line depths, with convergence
//! and divergence verdicts judged against analytic ground truth.
//!
//! Pose and observer state are integrated jointly in one state vector, so
//! every Runge-Kutta stage sees measurements evaluated at the stage's own
//! pose and time rather than values held from the step boundary. The error
//! budget of the acceptance tolerances depends on this.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{self, Axis, GeometryError, ReducedMoment, Rotation};
use crate::integrator::{
    self, BlockId, Layout, LayoutBuilder, Method, StateVector, StepConfig, StepError,
};
use crate::metrics;
use crate::observers::{
    self, ManhattanEstimate, ManhattanGains, MwLineEstimate, ObserverError, PlaneGains,
    PlaneVelocityState,
};
use crate::world_sim::{
    self, observe, pose_rhs, CameraPose, ImuExtrinsics, MeasurementFrame, MotionInputs,
    NoiseDraw, SceneParams, SimError, VelocityProfile, WorldScene,
};
use std::sync::Arc;

/// Tolerance for the pointwise stability diagnostics: a depth regressor
/// inside this band counts as zero, and excitation below it as absent.
pub const CONDITION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Manhattan observer alone, fed the true linear velocity.
    MwOnly,
    /// Plane observer feeding its velocity estimate into the Manhattan
    /// observer. `force_true_velocity` substitutes the true velocity while
    /// still integrating the plane block, which isolates the effect of the
    /// velocity estimate in comparisons.
    Cascade { force_true_velocity: bool },
}

/// How the unobservable initial values (inverse depths) are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnknownInit {
    AtTruth,
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Converged when the state error stays below this fraction of its
    /// initial value for a full debounce window.
    pub convergence_fraction: f64,
    /// Diverged when the state error exceeds this multiple of its initial
    /// value.
    pub divergence_factor: f64,
    /// The error must stay below threshold continuously for this long
    /// before the convergence verdict is fixed.
    pub debounce_s: f64,
    /// Division guard for the cascaded velocity estimate.
    pub psi_floor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            convergence_fraction: 0.01,
            divergence_factor: 1e3,
            debounce_s: 0.2,
            psi_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    /// Seeds the scene, the unknown initial values, and the measurement
    /// noise; two runs with equal configs are bitwise identical.
    pub seed: u64,
    pub scene: SceneParams,
    pub profile: VelocityProfile,
    pub ext: ImuExtrinsics,
    pub mode: Mode,
    pub plane_gains: PlaneGains,
    pub k_c: f64,
    pub k_tau: f64,
    pub k_chi: f64,
    pub dt: f64,
    pub duration: f64,
    pub noise_sigma_deg: f64,
    pub init: UnknownInit,
    pub thresholds: Thresholds,
    /// Keep the per-sample series in the record. Off for large batches.
    pub record_series: bool,
    /// Record every `series_stride`-th step (1 = every step).
    pub series_stride: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureCause {
    /// State error exceeded the divergence factor.
    ErrorGrowth,
    /// Integration produced a non-finite value.
    NonFinite,
    /// A feature reached the camera center.
    DepthSingularity,
    /// The Manhattan frame reached the 180-degree edge of the Cayley chart.
    SingularRotation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    Converged { t: f64 },
    Diverged { t: f64, cause: FailureCause },
    Timeout,
}

impl Verdict {
    /// A trial succeeds when it does not diverge; running out the clock
    /// without converging still counts.
    pub fn is_success(&self) -> bool {
        !matches!(self, Verdict::Diverged { .. })
    }

    pub fn convergence_time(&self) -> Option<f64> {
        match self {
            Verdict::Converged { t } => Some(*t),
            _ => None,
        }
    }
}

/// One decimated sample of the trial's error history.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSample {
    pub t: f64,
    /// Direction error per line (radians).
    pub eps_d: Vec<f64>,
    /// Depth error per line (length units).
    pub eps_l: Vec<f64>,
    /// Estimated inverse depth per line.
    pub chi_hat: Vec<f64>,
    /// Norm of the Manhattan-frame parameter error.
    pub cayley_error: f64,
    /// Quadratic error energy (gain-weighted).
    pub lyapunov: f64,
    /// Norm of the full Manhattan state error; the convergence and
    /// divergence verdicts act on this.
    pub state_error: f64,
    /// Norm of the plane observer's state error; cascade mode only.
    pub plane_error: Option<f64>,
    /// Whether every line satisfied the pointwise decay condition here.
    pub decay_ok: bool,
    /// Smallest per-line excitation at this sample.
    pub min_excitation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    pub n_lines: usize,
    pub verdict: Verdict,
    /// When the plane observer's own error first stayed below threshold;
    /// cascade mode only.
    pub plane_converged_t: Option<f64>,
    /// Initial Manhattan state error the thresholds are relative to.
    pub initial_error: f64,
    pub initial_chi_hat: Vec<f64>,
    pub initial_psi_hat: Option<f64>,
    /// Arc length of the camera path over the whole trial.
    pub distance_total: f64,
    /// Arc length traveled up to the convergence time.
    pub distance_at_convergence: Option<f64>,
    /// Per-line errors at the last recorded instant; infinite for diverged
    /// trials, which never settle on a meaningful final value.
    pub final_eps_d: Vec<f64>,
    pub final_eps_l: Vec<f64>,
    /// Raw Manhattan observer state at the end (c, then tau pairs, then
    /// chi), for bitwise comparisons between runs.
    pub final_mw_state: Vec<f64>,
    /// Line-samples where the pointwise decay condition failed.
    pub decay_violations: u64,
    /// Line-samples with no depth excitation.
    pub unexcited_samples: u64,
    /// Total line-samples inspected for the two counters above.
    pub condition_samples: u64,
    /// Steps where the velocity division guard froze the Manhattan block.
    pub scale_guard_steps: u64,
    pub series: Vec<SeriesSample>,
}

struct Ids {
    r: BlockId,
    p: BlockId,
    plane: Option<(BlockId, BlockId)>,
    c: BlockId,
    tau: BlockId,
    chi: BlockId,
}

enum RhsError {
    Sim(SimError),
    Scale,
}

impl From<SimError> for RhsError {
    fn from(e: SimError) -> Self {
        RhsError::Sim(e)
    }
}

impl From<ObserverError> for RhsError {
    fn from(_: ObserverError) -> Self {
        RhsError::Scale
    }
}

struct Engine<'a> {
    cfg: &'a TrialConfig,
    scene: &'a WorldScene,
    mw_gains: ManhattanGains,
    layout: Arc<Layout>,
    ids: Ids,
    axes: Vec<Axis>,
}

impl Engine<'_> {
    fn pose_of(&self, y: &StateVector) -> CameraPose {
        CameraPose {
            rotation: Rotation::from_matrix_unchecked(y.mat3(self.ids.r)),
            position: y.vec3(self.ids.p),
        }
    }

    fn read_mw(&self, y: &StateVector) -> ManhattanEstimate {
        let tau = y.slice(self.ids.tau);
        let chi = y.slice(self.ids.chi);
        ManhattanEstimate {
            c_hat: y.vec3(self.ids.c),
            lines: self
                .axes
                .iter()
                .enumerate()
                .map(|(i, &axis)| MwLineEstimate {
                    tau_hat: Vector2::new(tau[2 * i], tau[2 * i + 1]),
                    chi_hat: chi[i],
                    axis,
                })
                .collect(),
        }
    }

    fn write_mw(&self, d: &mut StateVector, est: &ManhattanEstimate) {
        d.set_vec3(self.ids.c, &est.c_hat);
        let tau = d.slice_mut(self.ids.tau);
        for (i, line) in est.lines.iter().enumerate() {
            tau[2 * i] = line.tau_hat.x;
            tau[2 * i + 1] = line.tau_hat.y;
        }
        let chi = d.slice_mut(self.ids.chi);
        for (i, line) in est.lines.iter().enumerate() {
            chi[i] = line.chi_hat;
        }
    }

    fn read_plane(&self, y: &StateVector) -> PlaneVelocityState {
        let (s_id, psi_id) = self.ids.plane.expect("plane block exists in cascade mode");
        PlaneVelocityState {
            s_hat: y.vec3(s_id),
            psi_hat: y.scalar(psi_id),
        }
    }

    fn measured(
        &self,
        t: f64,
        pose: &CameraPose,
        noise: Option<&NoiseDraw>,
    ) -> Result<MeasurementFrame, SimError> {
        let inputs = MotionInputs::from_profile(&self.cfg.profile, t, &self.cfg.ext);
        let exact = observe(self.scene, pose, t, &inputs)?;
        match noise {
            Some(draw) => draw.apply(&exact),
            None => Ok(exact),
        }
    }

    /// Joint derivative of pose and observer state. With `freeze_mw` the
    /// Manhattan block's derivative is left at zero, which is how a step is
    /// retried after the velocity division guard trips.
    fn rhs(
        &self,
        t: f64,
        y: &StateVector,
        noise: Option<&NoiseDraw>,
        freeze_mw: bool,
    ) -> Result<StateVector, RhsError> {
        let pose = self.pose_of(y);
        let meas = self.measured(t, &pose, noise)?;
        let inputs = &meas.inputs;

        let mut d = StateVector::zeros(&self.layout);
        let (dr, dp) = pose_rhs(pose.rotation.matrix(), &inputs.nu, &inputs.omega);
        d.set_mat3(self.ids.r, &dr);
        d.set_vec3(self.ids.p, &dp);

        let taus: Vec<ReducedMoment> = meas.lines.iter().map(|l| l.tau).collect();
        let mw = self.read_mw(y);

        match self.cfg.mode {
            Mode::MwOnly => {
                let mw_dot = observers::mw_observer_rhs(
                    &mw,
                    &meas.cayley,
                    &taus,
                    &inputs.nu,
                    &inputs.omega,
                    &self.mw_gains,
                );
                self.write_mw(&mut d, &mw_dot);
            }
            Mode::Cascade {
                force_true_velocity,
            } => {
                let plane = self.read_plane(y);
                if !freeze_mw && !force_true_velocity {
                    let (plane_dot, mw_dot) = observers::cascade_rhs(
                        &plane,
                        &mw,
                        &meas.plane.scaled_velocity,
                        &meas.plane.normal,
                        &meas.cayley,
                        &taus,
                        &inputs.omega,
                        &inputs.a_imu,
                        &self.cfg.ext,
                        self.cfg.thresholds.psi_floor,
                        &self.cfg.plane_gains,
                        &self.mw_gains,
                    )?;
                    self.write_plane_dot(&mut d, &plane_dot);
                    self.write_mw(&mut d, &mw_dot);
                } else {
                    let plane_dot = observers::plane_observer_rhs(
                        &plane,
                        &meas.plane.scaled_velocity,
                        &meas.plane.normal,
                        &inputs.omega,
                        &inputs.a_imu,
                        &self.cfg.ext,
                        &self.cfg.plane_gains,
                    );
                    self.write_plane_dot(&mut d, &plane_dot);
                    if !freeze_mw {
                        let mw_dot = observers::mw_observer_rhs(
                            &mw,
                            &meas.cayley,
                            &taus,
                            &inputs.nu,
                            &inputs.omega,
                            &self.mw_gains,
                        );
                        self.write_mw(&mut d, &mw_dot);
                    }
                }
            }
        }
        Ok(d)
    }

    fn write_plane_dot(&self, d: &mut StateVector, dot: &PlaneVelocityState) {
        let (s_id, psi_id) = self.ids.plane.expect("plane block exists in cascade mode");
        d.set_vec3(s_id, &dot.s_hat);
        d.set_scalar(psi_id, dot.psi_hat);
    }
}

/// Everything evaluated against ground truth at one instant.
struct Evaluation {
    eps_d: Vec<f64>,
    eps_l: Vec<f64>,
    chi_hat: Vec<f64>,
    cayley_error: f64,
    lyapunov: f64,
    state_error: f64,
    plane_error: Option<f64>,
}

fn evaluate(engine: &Engine, y: &StateVector, exact: &MeasurementFrame) -> Evaluation {
    let mw = engine.read_mw(y);
    let r_hat = geometry::rotation_from_cayley(&mw.c_hat);

    let n = mw.lines.len();
    let mut eps_d = Vec::with_capacity(n);
    let mut eps_l = Vec::with_capacity(n);
    let mut chi_hat = Vec::with_capacity(n);
    let mut line_errors = Vec::with_capacity(n);
    let mut sq_sum = 0.0;
    for (est, truth) in mw.lines.iter().zip(&exact.lines) {
        let d_hat = r_hat.row(est.axis.index());
        eps_d.push(metrics::direction_error(&d_hat, &truth.direction));
        eps_l.push(metrics::depth_error(1.0 / est.chi_hat, truth.depth));
        chi_hat.push(est.chi_hat);
        let tau_err = truth.tau.tau - est.tau_hat;
        let chi_err = truth.inv_depth - est.chi_hat;
        sq_sum += tau_err.norm_squared() + chi_err * chi_err;
        line_errors.push((tau_err, chi_err));
    }
    let c_err = exact.cayley - mw.c_hat;
    let plane_error = engine.ids.plane.map(|_| {
        let plane = engine.read_plane(y);
        let s_err = exact.plane.scaled_velocity - plane.s_hat;
        let psi_err = exact.plane.inv_depth - plane.psi_hat;
        (s_err.norm_squared() + psi_err * psi_err).sqrt()
    });

    Evaluation {
        eps_d,
        eps_l,
        chi_hat,
        cayley_error: c_err.norm(),
        lyapunov: observers::lyapunov_v(&c_err, &line_errors, &engine.mw_gains),
        state_error: (sq_sum + c_err.norm_squared()).sqrt(),
        plane_error,
    }
}

/// Debounced threshold detector: fires once the value stays below
/// `fraction * initial` continuously for `debounce_s`, and reports the time
/// the window was entered. A zero initial value fires immediately.
struct ConvergenceDetector {
    threshold: f64,
    debounce_s: f64,
    window: Option<(f64, f64)>,
    fixed: Option<(f64, f64)>,
}

impl ConvergenceDetector {
    fn new(initial: f64, fraction: f64, debounce_s: f64) -> Self {
        ConvergenceDetector {
            threshold: initial * fraction,
            debounce_s,
            window: None,
            fixed: (initial == 0.0).then_some((0.0, 0.0)),
        }
    }

    fn update(&mut self, t: f64, value: f64, distance: f64) {
        if self.fixed.is_some() {
            return;
        }
        if value < self.threshold {
            let (entered, dist) = *self.window.get_or_insert((t, distance));
            if t - entered >= self.debounce_s {
                self.fixed = Some((entered, dist));
            }
        } else {
            self.window = None;
        }
    }

    fn converged(&self) -> Option<(f64, f64)> {
        self.fixed
    }
}

fn cause_of(e: StepError<RhsError>) -> FailureCause {
    match e {
        StepError::NonFiniteState => FailureCause::NonFinite,
        StepError::Rhs(RhsError::Sim(SimError::DepthSingularity)) => FailureCause::DepthSingularity,
        StepError::Rhs(RhsError::Sim(SimError::Geometry(GeometryError::SingularRotation))) => {
            FailureCause::SingularRotation
        }
        // Remaining rhs failures indicate numerics already off the rails.
        StepError::Rhs(_) => FailureCause::NonFinite,
    }
}

/// Runs one trial to completion. Deterministic in `cfg`; errors only when
/// the scene itself cannot be generated — everything that goes wrong during
/// the flight becomes a verdict, not an error.
pub fn run_trial(cfg: &TrialConfig) -> Result<TrialRecord, SimError> {
    let scene = world_sim::random_scene(cfg.seed, &cfg.scene)?;
    run_trial_with_scene(cfg, &scene)
}

/// Like [`run_trial`] but on a caller-supplied scene. `cfg.scene` is ignored;
/// the seed still drives the initial unknowns and the measurement noise.
pub fn run_trial_with_scene(
    cfg: &TrialConfig,
    scene: &WorldScene,
) -> Result<TrialRecord, SimError> {
    assert!(cfg.dt > 0.0 && cfg.duration > 0.0);
    assert!(cfg.series_stride > 0);
    assert!(!scene.lines.is_empty());
    let n = scene.lines.len();
    let axes: Vec<Axis> = scene.lines.iter().map(|l| l.axis).collect();
    let cascade = matches!(cfg.mode, Mode::Cascade { .. });

    let mut builder = LayoutBuilder::new();
    let r = builder.rotation("pose_r");
    let p = builder.plain("pose_p", 3);
    let plane = cascade.then(|| (builder.plain("plane_s", 3), builder.plain("plane_psi", 1)));
    let c = builder.plain("mw_c", 3);
    let tau = builder.plain("mw_tau", 2 * n);
    let chi = builder.plain("mw_chi", n);
    let layout = builder.build();

    let engine = Engine {
        cfg,
        scene,
        mw_gains: ManhattanGains::uniform(cfg.k_c, cfg.k_tau, cfg.k_chi, n),
        layout: Arc::clone(&layout),
        ids: Ids { r, p, plane, c, tau, chi },
        axes,
    };

    let inputs0 = MotionInputs::from_profile(&cfg.profile, 0.0, &cfg.ext);
    let frame0 = observe(scene, &CameraPose::identity(), 0.0, &inputs0)?;

    // The measured quantities start at their true values; only the depths
    // (and the plane scale in cascade mode) are unknown. Depth draws come
    // first so mw-only and cascade runs of the same seed share them.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let chi0: Vec<f64> = match cfg.init {
        UnknownInit::AtTruth => frame0.lines.iter().map(|l| l.inv_depth).collect(),
        UnknownInit::Uniform { lo, hi } => (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    };
    let psi0 = cascade.then(|| match cfg.init {
        UnknownInit::AtTruth => frame0.plane.inv_depth,
        UnknownInit::Uniform { lo, hi } => rng.gen_range(lo..hi),
    });

    let mut state = StateVector::zeros(&layout);
    state.set_mat3(r, Rotation::identity().matrix());
    if let (Some((s_id, psi_id)), Some(psi0)) = (plane, psi0) {
        state.set_vec3(s_id, &frame0.plane.scaled_velocity);
        state.set_scalar(psi_id, psi0);
    }
    state.set_vec3(c, &frame0.cayley);
    {
        let tau_slice = state.slice_mut(tau);
        for (i, line) in frame0.lines.iter().enumerate() {
            tau_slice[2 * i] = line.tau.tau.x;
            tau_slice[2 * i + 1] = line.tau.tau.y;
        }
        state.slice_mut(chi).copy_from_slice(&chi0);
    }

    let eval0 = evaluate(&engine, &state, &frame0);
    let thresholds = cfg.thresholds;
    let mut detector = ConvergenceDetector::new(
        eval0.state_error,
        thresholds.convergence_fraction,
        thresholds.debounce_s,
    );
    let mut plane_detector = eval0
        .plane_error
        .map(|e0| ConvergenceDetector::new(e0, thresholds.convergence_fraction, thresholds.debounce_s));
    let divergence_limit =
        (eval0.state_error > 0.0).then(|| eval0.state_error * thresholds.divergence_factor);

    let mut record = TrialRecord {
        seed: cfg.seed,
        n_lines: n,
        verdict: Verdict::Timeout,
        plane_converged_t: None,
        initial_error: eval0.state_error,
        initial_chi_hat: chi0,
        initial_psi_hat: psi0,
        distance_total: 0.0,
        distance_at_convergence: None,
        final_eps_d: eval0.eps_d.clone(),
        final_eps_l: eval0.eps_l.clone(),
        final_mw_state: Vec::new(),
        decay_violations: 0,
        unexcited_samples: 0,
        condition_samples: 0,
        scale_guard_steps: 0,
        series: Vec::new(),
    };

    let push_sample = |record: &mut TrialRecord, t: f64, ev: &Evaluation, decay_ok, min_exc| {
        record.series.push(SeriesSample {
            t,
            eps_d: ev.eps_d.clone(),
            eps_l: ev.eps_l.clone(),
            chi_hat: ev.chi_hat.clone(),
            cayley_error: ev.cayley_error,
            lyapunov: ev.lyapunov,
            state_error: ev.state_error,
            plane_error: ev.plane_error,
            decay_ok,
            min_excitation: min_exc,
        });
    };

    if cfg.record_series {
        // The stability diagnostics are computed per step, so the initial
        // sample carries vacuous values for them.
        push_sample(&mut record, 0.0, &eval0, true, f64::INFINITY);
    }

    let step_cfg = StepConfig {
        dt: cfg.dt,
        method: Method::Rk4,
    };
    let n_steps = (cfg.duration / cfg.dt).round() as usize;
    let mut diverged: Option<(f64, FailureCause)> = None;
    let mut last_eval = eval0;

    for k in 0..n_steps {
        let t = k as f64 * cfg.dt;
        let noise = (cfg.noise_sigma_deg > 0.0)
            .then(|| NoiseDraw::sample(&mut rng, cfg.noise_sigma_deg, n));

        // Stability diagnostics at the step's measured values, using the
        // velocity the Manhattan observer is about to consume.
        let mut decay_ok = true;
        let mut min_excitation = f64::INFINITY;
        {
            let meas = match engine.measured(t, &engine.pose_of(&state), noise.as_ref()) {
                Ok(m) => m,
                Err(e) => {
                    diverged = Some((t, cause_of(StepError::Rhs(e.into()))));
                    break;
                }
            };
            let nu_used = match cfg.mode {
                Mode::Cascade {
                    force_true_velocity: false,
                } => observers::plane_velocity(&engine.read_plane(&state), thresholds.psi_floor)
                    .ok(),
                _ => Some(meas.inputs.nu),
            };
            if let Some(nu) = nu_used {
                let mw = engine.read_mw(&state);
                for (line, est) in meas.lines.iter().zip(&mw.lines) {
                    let sample = observers::stability_sample(
                        &line.tau,
                        &meas.cayley,
                        &nu,
                        est.chi_hat,
                        CONDITION_TOL,
                    );
                    if !sample.decay_ok {
                        record.decay_violations += 1;
                        decay_ok = false;
                    }
                    if sample.excitation <= CONDITION_TOL {
                        record.unexcited_samples += 1;
                    }
                    min_excitation = min_excitation.min(sample.excitation);
                    record.condition_samples += 1;
                }
            }
        }

        let stepped = integrator::step(
            |tt, y| engine.rhs(tt, y, noise.as_ref(), false),
            &state,
            t,
            &step_cfg,
        );
        let mut next = match stepped {
            Ok(next) => next,
            Err(StepError::Rhs(RhsError::Scale)) => {
                record.scale_guard_steps += 1;
                match integrator::step(
                    |tt, y| engine.rhs(tt, y, noise.as_ref(), true),
                    &state,
                    t,
                    &step_cfg,
                ) {
                    Ok(next) => next,
                    Err(e) => {
                        diverged = Some((t, cause_of(e)));
                        break;
                    }
                }
            }
            Err(e) => {
                diverged = Some((t, cause_of(e)));
                break;
            }
        };
        if integrator::renormalize_blocks(&mut next).is_err() {
            diverged = Some((t, FailureCause::NonFinite));
            break;
        }
        state = next;

        let t_next = (k + 1) as f64 * cfg.dt;
        let pose = engine.pose_of(&state);
        let inputs = MotionInputs::from_profile(&cfg.profile, t_next, &cfg.ext);
        let exact = match observe(scene, &pose, t_next, &inputs) {
            Ok(f) => f,
            Err(e) => {
                diverged = Some((t_next, cause_of(StepError::Rhs(e.into()))));
                break;
            }
        };

        record.distance_total += 0.5
            * (cfg.profile.nu(t).norm() + cfg.profile.nu(t_next).norm())
            * cfg.dt;

        let eval = evaluate(&engine, &state, &exact);
        detector.update(t_next, eval.state_error, record.distance_total);
        if let (Some(det), Some(pe)) = (plane_detector.as_mut(), eval.plane_error) {
            det.update(t_next, pe, record.distance_total);
        }
        if detector.converged().is_none() {
            if let Some(limit) = divergence_limit {
                if eval.state_error > limit {
                    diverged = Some((t_next, FailureCause::ErrorGrowth));
                    last_eval = eval;
                    break;
                }
            }
        }

        if cfg.record_series && (k + 1) % cfg.series_stride == 0 {
            push_sample(&mut record, t_next, &eval, decay_ok, min_excitation);
        }
        last_eval = eval;
    }

    if let Some((entered, dist)) = detector.converged() {
        record.verdict = Verdict::Converged { t: entered };
        record.distance_at_convergence = Some(dist);
    }
    if let Some((t, cause)) = diverged {
        // A verdict fixed by the debounced detector survives a later abort;
        // the record is simply truncated at the failure time.
        if !matches!(record.verdict, Verdict::Converged { .. }) {
            record.verdict = Verdict::Diverged { t, cause };
        }
    }
    record.plane_converged_t = plane_detector
        .and_then(|d| d.converged())
        .map(|(t, _)| t);

    match record.verdict {
        Verdict::Diverged { .. } => {
            record.final_eps_d = vec![f64::INFINITY; n];
            record.final_eps_l = vec![f64::INFINITY; n];
        }
        _ => {
            record.final_eps_d = last_eval.eps_d.clone();
            record.final_eps_l = last_eval.eps_l.clone();
        }
    }
    let mut final_mw = Vec::with_capacity(3 + 3 * n);
    final_mw.extend_from_slice(state.slice(c));
    final_mw.extend_from_slice(state.slice(tau));
    final_mw.extend_from_slice(state.slice(chi));
    record.final_mw_state = final_mw;

    Ok(record)
}

/// Ready-made configurations for the two reference experiments.
pub mod presets {
    use super::*;
    use crate::world_sim::Sinusoid;

    /// Motion used by the randomized multi-line survey: gentle sinusoidal
    /// translation on all axes with mild rotation, incommensurate
    /// frequencies so the excitation keeps rotating through the lines.
    pub fn survey_profile() -> VelocityProfile {
        VelocityProfile {
            nu: [
                Sinusoid::new(1.00, 1.80, 0.0),
                Sinusoid::new(1.05, 1.50, 1.3),
                Sinusoid::new(1.10, 2.20, 2.6),
            ],
            omega: [
                Sinusoid::new(0.34, 1.00, 0.9),
                Sinusoid::new(0.29, 1.30, 2.1),
                Sinusoid::new(0.36, 1.15, 0.4),
            ],
        }
    }

    /// Aggressive oscillatory motion for the cascade experiment, sized so
    /// the compensated acceleration peaks near 2 and the angular rate near
    /// 0.5.
    pub fn vibration_profile() -> VelocityProfile {
        VelocityProfile {
            nu: [
                Sinusoid::new(0.70, 1.55, 0.4),
                Sinusoid::new(0.60, 1.30, 1.7),
                Sinusoid::new(0.80, 1.80, 3.0),
            ],
            omega: [
                Sinusoid::new(0.30, 0.8, 1.1),
                Sinusoid::new(0.25, 0.6, 2.3),
                Sinusoid::new(0.28, 0.9, 0.2),
            ],
        }
    }

    /// Six-line randomized survey of the Manhattan observer with the true
    /// velocity as input: 15 s noiseless flights, randomized scenes and
    /// initial depths.
    pub fn mw_survey(seed: u64, noise_sigma_deg: f64) -> TrialConfig {
        TrialConfig {
            seed,
            scene: SceneParams::default(),
            profile: survey_profile(),
            ext: ImuExtrinsics::default(),
            mode: Mode::MwOnly,
            plane_gains: PlaneGains { k_s: 2.0, k_rho: 20.0 },
            k_c: 20.0,
            k_tau: 20.0,
            k_chi: 100.0,
            dt: 1e-3,
            duration: 15.0,
            noise_sigma_deg,
            init: UnknownInit::Uniform { lo: 0.05, hi: 1.0 },
            thresholds: Thresholds::default(),
            record_series: false,
            series_stride: 10,
        }
    }

    /// Cascaded plane-velocity and Manhattan observers under the vibration
    /// profile: 12 s noiseless flight over a plane facing the camera.
    pub fn cascade_vib(seed: u64) -> TrialConfig {
        TrialConfig {
            seed,
            scene: SceneParams::default(),
            profile: vibration_profile(),
            ext: ImuExtrinsics::default(),
            mode: Mode::Cascade {
                force_true_velocity: false,
            },
            plane_gains: PlaneGains { k_s: 2.0, k_rho: 20.0 },
            k_c: 20.0,
            k_tau: 20.0,
            k_chi: 200.0,
            dt: 1e-3,
            duration: 12.0,
            noise_sigma_deg: 0.0,
            init: UnknownInit::Uniform { lo: 0.05, hi: 1.0 },
            thresholds: Thresholds::default(),
            record_series: true,
            series_stride: 10,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world_sim::Sinusoid;
    use nalgebra::Vector3;
    use std::f64::consts::PI;

    fn quick_survey(seed: u64) -> TrialConfig {
        TrialConfig {
            duration: 1.0,
            ..presets::mw_survey(seed, 0.0)
        }
    }

    #[test]
    fn identical_configs_give_identical_records() {
        let cfg = TrialConfig {
            noise_sigma_deg: 1.0,
            record_series: true,
            series_stride: 100,
            ..quick_survey(42)
        };
        let a = run_trial(&cfg).unwrap();
        let b = run_trial(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truth_initialization_converges_immediately_and_stays() {
        let cfg = TrialConfig {
            init: UnknownInit::AtTruth,
            record_series: true,
            series_stride: 100,
            ..quick_survey(3)
        };
        let record = run_trial(&cfg).unwrap();
        assert_eq!(record.verdict, Verdict::Converged { t: 0.0 });
        assert_eq!(record.initial_error, 0.0);
        for sample in &record.series {
            assert!(sample.state_error < 1e-7, "drift at t={}", sample.t);
        }
    }

    #[test]
    fn pure_rotation_times_out_with_depth_error_frozen() {
        let mut cfg = quick_survey(9);
        cfg.profile = VelocityProfile::constant(Vector3::zeros(), Vector3::new(0.0, 0.0, 0.3));
        cfg.record_series = true;
        cfg.series_stride = 1000;
        let record = run_trial(&cfg).unwrap();
        assert_eq!(record.verdict, Verdict::Timeout);
        assert_eq!(record.distance_total, 0.0);
        let last = record.series.last().unwrap();
        // Without translation the depth error cannot move.
        assert!((last.state_error - record.initial_error).abs() < 1e-9 * record.initial_error);
    }

    #[test]
    fn unstable_gain_is_flagged_as_error_growth() {
        let mut cfg = quick_survey(5);
        cfg.k_chi = 1e8;
        cfg.duration = 5.0;
        let record = run_trial(&cfg).unwrap();
        match record.verdict {
            Verdict::Diverged { cause, .. } => {
                assert!(matches!(
                    cause,
                    FailureCause::ErrorGrowth | FailureCause::NonFinite
                ));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!(record.verdict.convergence_time().is_none());
        assert!(record.distance_at_convergence.is_none());
        assert!(record.final_eps_l.iter().all(|e| e.is_infinite()));
    }

    #[test]
    fn chart_edge_aborts_as_singular_rotation() {
        // A frame 0.05 rad from the 180-degree surface, rotated straight at
        // it, leaves the rotation chart at t = 0.25. No translation, so the
        // trial cannot converge first.
        use crate::world_sim::SceneLine;
        let scene = WorldScene {
            mw: Rotation::from_axis_angle(&Vector3::z(), PI - 0.05),
            lines: vec![
                SceneLine { anchor: Vector3::new(0.0, 0.0, 10.0), axis: Axis::D1 },
                SceneLine { anchor: Vector3::new(0.0, 0.0, 10.0), axis: Axis::D2 },
                SceneLine { anchor: Vector3::new(3.0, 4.0, 10.0), axis: Axis::D3 },
            ],
            plane_normal: Vector3::z(),
            plane_offset: 5.0,
            seed: 0,
        };
        let mut cfg = quick_survey(2);
        cfg.profile = VelocityProfile::constant(Vector3::zeros(), Vector3::new(0.0, 0.0, -0.2));
        let record = run_trial_with_scene(&cfg, &scene).unwrap();
        match record.verdict {
            Verdict::Diverged { t, cause } => {
                assert_eq!(cause, FailureCause::SingularRotation);
                assert!((0.2..0.3).contains(&t), "aborted at t={t}");
            }
            other => panic!("expected a chart-edge abort, got {other:?}"),
        }
    }

    #[test]
    fn distance_matches_closed_form_arc_length() {
        // Single-axis |A sin(wt)| has a closed-form integral; five seconds
        // at w = 2 pi covers exactly ten half-periods.
        let a = 0.1;
        let w = 2.0 * PI;
        let mut cfg = quick_survey(11);
        cfg.duration = 5.0;
        cfg.profile = VelocityProfile {
            nu: [
                Sinusoid::new(0.0, 1.0, 0.0),
                Sinusoid::new(0.0, 1.0, 0.0),
                Sinusoid::new(a, w, 0.0),
            ],
            omega: [Sinusoid::constant(0.0); 3],
        };
        let record = run_trial(&cfg).unwrap();
        let exact = 10.0 * 2.0 * a / w;
        assert!(
            (record.distance_total - exact).abs() / exact < 1e-3,
            "distance {} vs closed form {}",
            record.distance_total,
            exact
        );
    }

    #[test]
    fn scale_guard_freezes_manhattan_block_without_killing_the_trial() {
        let mut cfg = quick_survey(7);
        cfg.mode = Mode::Cascade {
            force_true_velocity: false,
        };
        cfg.profile = presets::vibration_profile();
        // Initial unknowns far below the division guard trip it on step one.
        cfg.init = UnknownInit::Uniform { lo: 2e-5, hi: 5e-5 };
        let record = run_trial(&cfg).unwrap();
        assert!(record.scale_guard_steps > 0);
        assert!(matches!(
            record.verdict,
            Verdict::Timeout | Verdict::Diverged { .. } | Verdict::Converged { .. }
        ));
    }

    #[test]
    fn series_respects_stride_and_line_count() {
        let cfg = TrialConfig {
            record_series: true,
            series_stride: 200,
            ..quick_survey(13)
        };
        let record = run_trial(&cfg).unwrap();
        assert!(record.verdict.is_success());
        assert_eq!(record.series.len(), 6);
        assert_eq!(record.series[0].t, 0.0);
        for s in &record.series {
            assert_eq!(s.eps_d.len(), record.n_lines);
            assert_eq!(s.eps_l.len(), record.n_lines);
            assert_eq!(s.chi_hat.len(), record.n_lines);
            assert!(s.plane_error.is_none());
        }
        assert_eq!(record.n_lines, 6);
    }

    #[test]
    fn cascade_smoke_run_brings_plane_error_down() {
        let mut cfg = presets::cascade_vib(19);
        cfg.duration = 2.5;
        cfg.record_series = true;
        cfg.series_stride = 100;
        let record = run_trial(&cfg).unwrap();
        let first = record.series.first().unwrap().plane_error.unwrap();
        let last = record.series.last().unwrap().plane_error.unwrap();
        assert!(
            last < first / 3.0,
            "plane error {last} did not shrink from {first}"
        );
        assert!(record.initial_psi_hat.is_some());
    }

    #[test]
    fn mw_only_and_forced_cascade_share_depth_initialization() {
        let cfg_a = quick_survey(23);
        let mut cfg_b = quick_survey(23);
        cfg_b.mode = Mode::Cascade {
            force_true_velocity: true,
        };
        let a = run_trial(&cfg_a).unwrap();
        let b = run_trial(&cfg_b).unwrap();
        assert_eq!(a.initial_chi_hat, b.initial_chi_hat);
        assert_eq!(a.final_mw_state, b.final_mw_state);
    }

    #[test]
    fn vibration_profile_meets_its_envelope() {
        let prof = presets::vibration_profile();
        let ext = ImuExtrinsics::default();
        let max_omega = prof.scan_max(12.0, |p, t| p.omega(t).norm());
        let max_accel = prof.scan_max(12.0, |p, t| {
            let (_, a) = world_sim::synthesize_imu(p, t, &ext);
            a.norm()
        });
        assert!(
            (0.4..=0.55).contains(&max_omega),
            "max angular rate {max_omega}"
        );
        assert!((1.6..=2.4).contains(&max_accel), "max acceleration {max_accel}");
    }
}
