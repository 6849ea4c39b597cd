//! Fixed-step ODE integration over flat, block-structured state vectors.
//!
//! Simulator and observers share one driver: state lives in a [`StateVector`]
//! whose [`Layout`] names contiguous blocks (a rotation, unit vectors, plain
//! components). The right-hand side is a closure producing a derivative with
//! the same layout, so a single [`step`] advances pose and estimator state
//! together and stays bit-for-bit deterministic for identical inputs.

use nalgebra::{Matrix3, Vector3};
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

use crate::geometry::Rotation;

/// Norm floor under which a constrained block counts as collapsed.
const NORM_FLOOR: f64 = 1e-12;

/// Constraint attached to a block, applied by [`renormalize_blocks`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// No constraint.
    Plain,
    /// Three components kept at unit norm.
    UnitVec3,
    /// Nine components holding a row-major rotation matrix, kept orthonormal.
    Rotation9,
}

#[derive(Debug, Clone)]
struct Block {
    name: &'static str,
    start: usize,
    len: usize,
    kind: BlockKind,
}

/// Handle to a block within a [`Layout`]. Only valid for state vectors built
/// from the same layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockId(usize);

/// Immutable block map shared by every state vector of one system.
/// Blocks are contiguous and disjoint by construction and cover the whole
/// data array.
#[derive(Debug)]
pub struct Layout {
    blocks: Vec<Block>,
    len: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn block_name(&self, id: BlockId) -> &'static str {
        self.blocks[id.0].name
    }

    pub fn block_len(&self, id: BlockId) -> usize {
        self.blocks[id.0].len
    }
}

#[derive(Debug, Default)]
pub struct LayoutBuilder {
    blocks: Vec<Block>,
    len: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &'static str, len: usize, kind: BlockKind) -> BlockId {
        let id = BlockId(self.blocks.len());
        self.blocks.push(Block {
            name,
            start: self.len,
            len,
            kind,
        });
        self.len += len;
        id
    }

    pub fn plain(&mut self, name: &'static str, len: usize) -> BlockId {
        self.push(name, len, BlockKind::Plain)
    }

    pub fn unit_vec3(&mut self, name: &'static str) -> BlockId {
        self.push(name, 3, BlockKind::UnitVec3)
    }

    pub fn rotation(&mut self, name: &'static str) -> BlockId {
        self.push(name, 9, BlockKind::Rotation9)
    }

    pub fn build(self) -> Arc<Layout> {
        Arc::new(Layout {
            blocks: self.blocks,
            len: self.len,
        })
    }
}

/// Flat state with named blocks. Arithmetic needed by the integrator works on
/// the raw array; typed accessors keep call sites readable.
#[derive(Debug, Clone)]
pub struct StateVector {
    layout: Arc<Layout>,
    data: Vec<f64>,
}

impl StateVector {
    pub fn zeros(layout: &Arc<Layout>) -> Self {
        StateVector {
            layout: Arc::clone(layout),
            data: vec![0.0; layout.len],
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn range(&self, id: BlockId) -> std::ops::Range<usize> {
        let b = &self.layout.blocks[id.0];
        b.start..b.start + b.len
    }

    pub fn slice(&self, id: BlockId) -> &[f64] {
        &self.data[self.range(id)]
    }

    pub fn slice_mut(&mut self, id: BlockId) -> &mut [f64] {
        let r = self.range(id);
        &mut self.data[r]
    }

    pub fn scalar(&self, id: BlockId) -> f64 {
        let s = self.slice(id);
        debug_assert_eq!(s.len(), 1);
        s[0]
    }

    pub fn set_scalar(&mut self, id: BlockId, v: f64) {
        self.slice_mut(id)[0] = v;
    }

    pub fn vec3(&self, id: BlockId) -> Vector3<f64> {
        let s = self.slice(id);
        debug_assert_eq!(s.len(), 3);
        Vector3::new(s[0], s[1], s[2])
    }

    pub fn set_vec3(&mut self, id: BlockId, v: &Vector3<f64>) {
        self.slice_mut(id).copy_from_slice(v.as_slice());
    }

    /// Reads a rotation block (row-major).
    pub fn mat3(&self, id: BlockId) -> Matrix3<f64> {
        let s = self.slice(id);
        debug_assert_eq!(s.len(), 9);
        Matrix3::new(s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7], s[8])
    }

    pub fn set_mat3(&mut self, id: BlockId, m: &Matrix3<f64>) {
        let s = self.slice_mut(id);
        for row in 0..3 {
            for col in 0..3 {
                s[3 * row + col] = m[(row, col)];
            }
        }
    }

    fn same_layout(&self, other: &StateVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout)
    }

    /// `self + a * k`, the only arithmetic the integrator needs.
    fn axpy(&self, k: &StateVector, a: f64) -> StateVector {
        debug_assert!(self.same_layout(k));
        let data = self
            .data
            .iter()
            .zip(&k.data)
            .map(|(y, ky)| y + a * ky)
            .collect();
        StateVector {
            layout: Arc::clone(&self.layout),
            data,
        }
    }

    fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    pub method: Method,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig {
            dt: 1e-3,
            method: Method::Rk4,
        }
    }
}

/// Step failure: either the state went non-finite or the right-hand side
/// itself reported an error at one of the stage evaluations.
#[derive(Debug, PartialEq)]
pub enum StepError<E> {
    NonFiniteState,
    Rhs(E),
}

impl<E: fmt::Display> fmt::Display for StepError<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepError::NonFiniteState => write!(f, "non-finite value after integration step"),
            StepError::Rhs(e) => write!(f, "right-hand side failed: {e}"),
        }
    }
}

impl<E: fmt::Debug + fmt::Display> std::error::Error for StepError<E> {}

/// Advances `state` from `t` to `t + dt` with the configured method.
///
/// `rhs(t, y)` must return the time derivative of `y` in the same layout.
/// The result is checked for finiteness; gains or inputs that blow up within
/// a single step surface as [`StepError::NonFiniteState`] instead of NaN
/// propagating silently through a trial.
pub fn step<E>(
    rhs: impl Fn(f64, &StateVector) -> Result<StateVector, E>,
    state: &StateVector,
    t: f64,
    cfg: &StepConfig,
) -> Result<StateVector, StepError<E>> {
    let h = cfg.dt;
    let call = |t, y: &StateVector| rhs(t, y).map_err(StepError::Rhs);
    let next = match cfg.method {
        Method::Euler => {
            let k1 = call(t, state)?;
            state.axpy(&k1, h)
        }
        Method::Rk4 => {
            let k1 = call(t, state)?;
            let k2 = call(t + h / 2.0, &state.axpy(&k1, h / 2.0))?;
            let k3 = call(t + h / 2.0, &state.axpy(&k2, h / 2.0))?;
            let k4 = call(t + h, &state.axpy(&k3, h))?;
            let sum = k1.axpy(&k2, 2.0).axpy(&k3, 2.0).axpy(&k4, 1.0);
            state.axpy(&sum, h / 6.0)
        }
    };
    if !next.is_finite() {
        return Err(StepError::NonFiniteState);
    }
    Ok(next)
}

/// A constrained block lost its norm entirely; renormalizing would divide by
/// zero, so the caller gets the block name instead.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("state block '{block}' collapsed to zero norm")]
pub struct ZeroNorm {
    pub block: &'static str,
}

/// Restores block constraints after a step: unit blocks are rescaled to unit
/// norm, rotation blocks re-orthonormalized (Gram-Schmidt on the rows).
/// Drift per step is tiny; applying this every step keeps it from compounding
/// over long trials.
pub fn renormalize_blocks(state: &mut StateVector) -> Result<(), ZeroNorm> {
    let layout = Arc::clone(&state.layout);
    for (idx, block) in layout.blocks.iter().enumerate() {
        let id = BlockId(idx);
        match block.kind {
            BlockKind::Plain => {}
            BlockKind::UnitVec3 => {
                let v = state.vec3(id);
                let norm = v.norm();
                if norm < NORM_FLOOR {
                    return Err(ZeroNorm { block: block.name });
                }
                state.set_vec3(id, &(v / norm));
            }
            BlockKind::Rotation9 => {
                let m = state.mat3(id);
                let r0 = m.row(0).transpose();
                let r1 = m.row(1).transpose();
                if r0.norm() < NORM_FLOOR || r0.cross(&r1).norm() < NORM_FLOOR {
                    return Err(ZeroNorm { block: block.name });
                }
                let r = Rotation::from_matrix_unchecked(m).orthonormalized();
                state.set_mat3(id, r.matrix());
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn scalar_layout() -> (Arc<Layout>, BlockId) {
        let mut b = LayoutBuilder::new();
        let x = b.plain("x", 1);
        (b.build(), x)
    }

    fn decay_rhs(
        layout: &Arc<Layout>,
        x: BlockId,
    ) -> impl Fn(f64, &StateVector) -> Result<StateVector, Infallible> + '_ {
        move |_t, y| {
            let mut d = StateVector::zeros(layout);
            d.set_scalar(x, -y.scalar(x));
            Ok(d)
        }
    }

    #[test]
    fn euler_step_matches_hand_value() {
        let (layout, x) = scalar_layout();
        let mut y = StateVector::zeros(&layout);
        y.set_scalar(x, 1.0);
        let cfg = StepConfig {
            dt: 0.1,
            method: Method::Euler,
        };
        let y1 = step(decay_rhs(&layout, x), &y, 0.0, &cfg).unwrap();
        assert_eq!(y1.scalar(x), 0.9);
    }

    #[test]
    fn rk4_step_matches_exponential() {
        let (layout, x) = scalar_layout();
        let mut y = StateVector::zeros(&layout);
        y.set_scalar(x, 1.0);
        let cfg = StepConfig {
            dt: 0.01,
            method: Method::Rk4,
        };
        let y1 = step(decay_rhs(&layout, x), &y, 0.0, &cfg).unwrap();
        assert!((y1.scalar(x) - (-0.01_f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn rk4_halving_dt_shrinks_error_sixteenfold() {
        let (layout, x) = scalar_layout();
        let run = |dt: f64| {
            let cfg = StepConfig {
                dt,
                method: Method::Rk4,
            };
            let mut y = StateVector::zeros(&layout);
            y.set_scalar(x, 1.0);
            let steps = (1.0 / dt).round() as usize;
            let mut t = 0.0;
            for _ in 0..steps {
                y = step(decay_rhs(&layout, x), &y, t, &cfg).unwrap();
                t += dt;
            }
            (y.scalar(x) - (-1.0_f64).exp()).abs()
        };
        let ratio = run(1e-2) / run(5e-3);
        assert!((14.0..=18.0).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn oscillator_round_trip_across_blocks() {
        let mut b = LayoutBuilder::new();
        let pos = b.plain("pos", 1);
        let vel = b.plain("vel", 1);
        let layout = b.build();
        let rhs = |_t: f64, y: &StateVector| -> Result<StateVector, Infallible> {
            let mut d = StateVector::zeros(&layout);
            d.set_scalar(pos, y.scalar(vel));
            d.set_scalar(vel, -y.scalar(pos));
            Ok(d)
        };
        let mut y = StateVector::zeros(&layout);
        y.set_scalar(pos, 1.0);
        let steps = 6283;
        let cfg = StepConfig {
            dt: std::f64::consts::TAU / steps as f64,
            method: Method::Rk4,
        };
        let mut t = 0.0;
        for _ in 0..steps {
            y = step(rhs, &y, t, &cfg).unwrap();
            t += cfg.dt;
        }
        assert!((y.scalar(pos) - 1.0).abs() < 1e-9);
        assert!(y.scalar(vel).abs() < 1e-9);
    }

    #[test]
    fn nan_derivative_is_reported() {
        let (layout, x) = scalar_layout();
        let y = StateVector::zeros(&layout);
        let rhs = |_t: f64, _y: &StateVector| -> Result<StateVector, Infallible> {
            let mut d = StateVector::zeros(&layout);
            d.set_scalar(x, f64::NAN);
            Ok(d)
        };
        let err = step(rhs, &y, 0.0, &StepConfig::default()).unwrap_err();
        assert_eq!(err, StepError::NonFiniteState);
    }

    #[test]
    fn step_is_deterministic() {
        let (layout, x) = scalar_layout();
        let mut y = StateVector::zeros(&layout);
        y.set_scalar(x, 0.37);
        let cfg = StepConfig::default();
        let a = step(decay_rhs(&layout, x), &y, 0.0, &cfg).unwrap();
        let b = step(decay_rhs(&layout, x), &y, 0.0, &cfg).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn renormalize_rescales_unit_block() {
        let mut b = LayoutBuilder::new();
        let d = b.unit_vec3("d");
        let layout = b.build();
        let mut y = StateVector::zeros(&layout);
        y.set_vec3(d, &Vector3::new(2.0, 0.0, 0.0));
        renormalize_blocks(&mut y).unwrap();
        assert_eq!(y.vec3(d), Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn renormalize_reports_collapsed_block() {
        let mut b = LayoutBuilder::new();
        let d = b.unit_vec3("d");
        let layout = b.build();
        let mut y = StateVector::zeros(&layout);
        y.set_vec3(d, &Vector3::new(1e-13, 0.0, 0.0));
        assert_eq!(
            renormalize_blocks(&mut y),
            Err(ZeroNorm { block: "d" })
        );
    }

    #[test]
    fn renormalize_fixes_rotation_drift() {
        let mut b = LayoutBuilder::new();
        let r = b.rotation("pose_r");
        let layout = b.build();
        let mut y = StateVector::zeros(&layout);
        let drifted = Matrix3::identity() * 1.000001;
        y.set_mat3(r, &drifted);
        renormalize_blocks(&mut y).unwrap();
        assert_eq!(y.mat3(r), Matrix3::identity());
    }

    #[test]
    fn layout_blocks_cover_data_contiguously() {
        let mut b = LayoutBuilder::new();
        let ids = [b.rotation("r"), b.plain("p", 3), b.unit_vec3("u"), b.plain("s", 1)];
        let layout = b.build();
        assert_eq!(layout.len(), 16);
        let y = StateVector::zeros(&layout);
        let mut covered = 0;
        for id in ids {
            assert_eq!(y.range(id).start, covered);
            covered = y.range(id).end;
        }
        assert_eq!(covered, layout.len());
    }
}
