//! Asymmetric one-mass body-cover model of the left and right vocal folds.
//!
//! The folds obey the coupled pair
//!
//! ```text
//! x_r'' + beta (1 + x_r^2) x_r' + x_r - (delta / 2) x_r = alpha (x_r' + x_l')
//! x_l'' + beta (1 + x_l^2) x_l' + x_l + (delta / 2) x_l = alpha (x_r' + x_l')
//! ```
//!
//! in dimensionless model time. Integration is classical fixed-step RK4 and the
//! predicted glottal flow is `flow_scale * (2 x0 + x_l + x_r)`, clamped at zero
//! when the glottis closes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::glottal::{GlottalWaveform, WaveformKind};

/// Default state-magnitude bound past which a run is declared divergent.
pub const DEFAULT_BLOWUP_BOUND: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("trajectory diverged at step {step} (|state| > {bound})")]
    BlowUp { step: usize, bound: f64 },
    #[error("invalid integration request: {0}")]
    InvalidArgument(String),
}

/// The estimated triple: coupling `alpha`, aggregate damping `beta` and
/// left/right asymmetry `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
}

impl ModelParams {
    pub const fn new(alpha: f64, beta: f64, delta: f64) -> Self {
        Self { alpha, beta, delta }
    }

    /// Average values reported for adult voices without pathology.
    pub const fn normal_voice() -> Self {
        Self::new(0.25, 0.32, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.beta.is_finite() && self.delta.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.alpha, self.beta, self.delta]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::normal_voice()
    }
}

/// Constants linking fold displacement to glottal volume velocity.
///
/// Only the product `c_tilde * fold_length` enters the flow, and it is
/// absorbed by amplitude normalization downstream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhysicalConstants {
    /// Half-opening of the glottis at rest.
    pub x0: f64,
    /// Air particle velocity at the fold midpoint.
    pub c_tilde: f64,
    /// Fold length.
    pub fold_length: f64,
}

impl PhysicalConstants {
    pub fn flow_scale(&self) -> f64 {
        self.c_tilde * self.fold_length
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.x0 >= 0.0 && self.x0.is_finite()) {
            return Err(format!("x0 must be finite and >= 0, got {}", self.x0));
        }
        let s = self.flow_scale();
        if !(s > 0.0 && s.is_finite()) {
            return Err(format!("flow scale c_tilde * fold_length must be > 0, got {s}"));
        }
        Ok(())
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            x0: 0.1,
            c_tilde: 1.0,
            fold_length: 1.0,
        }
    }
}

/// Initial displacements; initial velocities are always zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub cl: f64,
    pub cr: f64,
}

impl BoundaryConditions {
    pub const fn new(cl: f64, cr: f64) -> Self {
        Self { cl, cr }
    }

    pub fn initial_state(&self) -> FoldState {
        FoldState {
            xl: self.cl,
            vl: 0.0,
            xr: self.cr,
            vr: 0.0,
        }
    }
}

impl Default for BoundaryConditions {
    fn default() -> Self {
        Self::new(0.1, 0.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FoldState {
    pub xl: f64,
    pub vl: f64,
    pub xr: f64,
    pub vr: f64,
}

impl FoldState {
    pub const ZERO: FoldState = FoldState {
        xl: 0.0,
        vl: 0.0,
        xr: 0.0,
        vr: 0.0,
    };

    fn axpy(&self, k: f64, d: &FoldState) -> FoldState {
        FoldState {
            xl: self.xl + k * d.xl,
            vl: self.vl + k * d.vl,
            xr: self.xr + k * d.xr,
            vr: self.vr + k * d.vr,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.xl.abs().max(self.vl.abs()).max(self.xr.abs()).max(self.vr.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.xl.is_finite() && self.vl.is_finite() && self.xr.is_finite() && self.vr.is_finite()
    }
}

/// Fold accelerations `(a_l, a_r)` at `state`.
///
/// The asymmetry term enters with opposite signs: it stiffens the left fold
/// and softens the right one for positive `delta`.
#[inline]
pub fn accel(state: &FoldState, p: &ModelParams) -> (f64, f64) {
    let drive = p.alpha * (state.vr + state.vl);
    let half = p.delta / 2.0;
    let al = drive - p.beta * (1.0 + state.xl * state.xl) * state.vl - state.xl - half * state.xl;
    let ar = drive - p.beta * (1.0 + state.xr * state.xr) * state.vr - state.xr + half * state.xr;
    (al, ar)
}

#[inline]
fn derivative(state: &FoldState, p: &ModelParams) -> FoldState {
    let (al, ar) = accel(state, p);
    FoldState {
        xl: state.vl,
        vl: al,
        xr: state.vr,
        vr: ar,
    }
}

/// One classical RK4 step.
pub fn rk4_step(state: &FoldState, p: &ModelParams, h: f64) -> FoldState {
    let k1 = derivative(state, p);
    let k2 = derivative(&state.axpy(h / 2.0, &k1), p);
    let k3 = derivative(&state.axpy(h / 2.0, &k2), p);
    let k4 = derivative(&state.axpy(h, &k3), p);
    FoldState {
        xl: state.xl + h / 6.0 * (k1.xl + 2.0 * k2.xl + 2.0 * k3.xl + k4.xl),
        vl: state.vl + h / 6.0 * (k1.vl + 2.0 * k2.vl + 2.0 * k3.vl + k4.vl),
        xr: state.xr + h / 6.0 * (k1.xr + 2.0 * k2.xr + 2.0 * k3.xr + k4.xr),
        vr: state.vr + h / 6.0 * (k1.vr + 2.0 * k2.vr + 2.0 * k3.vr + k4.vr),
    }
}

/// Uniformly sampled forward solution starting at model time zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldTrajectory {
    step: f64,
    states: Vec<FoldState>,
}

impl FoldTrajectory {
    pub fn new(step: f64, states: Vec<FoldState>) -> Self {
        assert!(step > 0.0, "trajectory step must be positive");
        Self { step, states }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn states(&self) -> &[FoldState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.states.len()).map(|i| self.time(i)).collect()
    }

    /// Model time of the last sample.
    pub fn horizon(&self) -> f64 {
        self.time(self.states.len().saturating_sub(1))
    }

    /// CSV with header `t, xl, vl, xr, vr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,xl,vl,xr,vr\n");
        for (i, s) in self.states.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", self.time(i), s.xl, s.vl, s.xr, s.vr);
        }
        out
    }
}

/// Integrate from the boundary conditions for `n_steps` steps of size `h`.
pub fn integrate_forward(
    p: &ModelParams,
    bc: &BoundaryConditions,
    n_steps: usize,
    h: f64,
) -> Result<FoldTrajectory, ModelError> {
    integrate_forward_bounded(p, bc, n_steps, h, DEFAULT_BLOWUP_BOUND)
}

pub fn integrate_forward_bounded(
    p: &ModelParams,
    bc: &BoundaryConditions,
    n_steps: usize,
    h: f64,
    bound: f64,
) -> Result<FoldTrajectory, ModelError> {
    if n_steps == 0 {
        return Err(ModelError::InvalidArgument("n_steps must be >= 1".into()));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(ModelError::InvalidArgument(format!("step must be > 0, got {h}")));
    }
    if !p.is_finite() {
        return Err(ModelError::InvalidArgument("parameters must be finite".into()));
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut s = bc.initial_state();
    states.push(s);
    for step in 1..=n_steps {
        s = rk4_step(&s, p, h);
        if !s.is_finite() || s.max_abs() > bound {
            return Err(ModelError::BlowUp { step, bound });
        }
        states.push(s);
    }
    Ok(FoldTrajectory::new(h, states))
}

/// Model-time step for one audio sample: `2 pi f_n / sample_rate`.
pub fn model_step(sample_rate: f64, nominal_hz: f64) -> f64 {
    2.0 * std::f64::consts::PI * nominal_hz / sample_rate
}

/// Unclamped glottal opening `2 x0 + x_l + x_r`.
#[inline]
pub fn opening(state: &FoldState, consts: &PhysicalConstants) -> f64 {
    2.0 * consts.x0 + state.xl + state.xr
}

/// Glottal volume velocity predicted by the trajectory.
pub fn predict_flow(
    traj: &FoldTrajectory,
    consts: &PhysicalConstants,
    sample_rate: f64,
) -> GlottalWaveform {
    let scale = consts.flow_scale();
    let samples = traj
        .states()
        .iter()
        .map(|s| (scale * opening(s, consts)).max(0.0))
        .collect();
    GlottalWaveform::new(samples, sample_rate, WaveformKind::Predicted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Displacement/velocity pairs of one fold in time order.
pub fn phase_portrait(traj: &FoldTrajectory, side: Side) -> Vec<(f64, f64)> {
    traj.states()
        .iter()
        .map(|s| match side {
            Side::Left => (s.xl, s.vl),
            Side::Right => (s.xr, s.vr),
        })
        .collect()
}

pub fn portrait_to_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("x,xdot\n");
    for (x, v) in points {
        let _ = writeln!(out, "{x},{v}");
    }
    out
}

/// Outcome of the closed-orbit test on a phase portrait.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitCheck {
    /// Number of complete cycles found.
    pub cycles: usize,
    /// Largest distance from a final-cycle point to the previous cycle's curve.
    pub max_gap: f64,
    /// Largest pairwise distance between final-cycle points.
    pub diameter: f64,
    pub closed: bool,
}

/// Decide whether the tail of a portrait has settled onto a closed curve.
///
/// Cycles are delimited by upward crossings of the displacement through its
/// mean. Every point of the last cycle must lie within `tolerance * diameter`
/// of the previous cycle, measured against that cycle as a polyline.
/// Returns `None` when fewer than two complete cycles are present.
pub fn closed_orbit(points: &[(f64, f64)], tolerance: f64) -> Option<OrbitCheck> {
    if points.len() < 4 {
        return None;
    }
    let mean = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
    let crossings: Vec<usize> = points
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0].0 < mean && w[1].0 >= mean)
        .map(|(i, _)| i + 1)
        .collect();
    if crossings.len() < 3 {
        return None;
    }
    let n = crossings.len();
    let prev = &points[crossings[n - 3]..=crossings[n - 2]];
    let last = &points[crossings[n - 2]..=crossings[n - 1]];

    let mut diameter: f64 = 0.0;
    for (i, a) in last.iter().enumerate() {
        for b in &last[i + 1..] {
            diameter = diameter.max(dist(*a, *b));
        }
    }
    let max_gap = last
        .iter()
        .map(|&q| {
            prev.windows(2)
                .map(|w| point_segment_distance(q, w[0], w[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    Some(OrbitCheck {
        cycles: n - 1,
        max_gap,
        diameter,
        closed: diameter > 0.0 && max_gap < tolerance * diameter,
    })
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn point_segment_distance(q: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(q, a);
    }
    let t = (((q.0 - a.0) * dx + (q.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    dist(q, (a.0 + t * dx, a.1 + t * dy))
}
