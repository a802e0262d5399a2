//! Adjoint least-squares estimation of the fold parameters.
//!
//! Each iteration integrates the fold model forward, forms the residual
//! against the measured flow, integrates the adjoint system backward from a
//! zero terminal state and assembles the three parameter gradients from it.
//!
//! With `lambda = -p_v` (the negated velocity costates) the adjoint of the
//! model is the second-order pair
//!
//! ```text
//! lambda_l'' = (beta (1 + x_l^2) - alpha) lambda_l' - alpha lambda_r' - (1 + delta/2) lambda_l
//! lambda_r'' = (beta (1 + x_r^2) - alpha) lambda_r' - alpha lambda_l' - (1 - delta/2) lambda_r
//! ```
//!
//! which is what remains of
//! `lambda'' - d/dt[beta (1 + x^2) lambda - alpha (lambda_l + lambda_r)] + (2 beta x x' + 1 -/+ delta/2) lambda`
//! once the `2 beta x x' lambda` terms cancel. The residual energy is a sum
//! over samples, so the forcing `2 c R(t)` arrives as one jump in
//! `lambda'` per sample (`Adjoint::kicks`) rather than as a smooth source.
//! Gradients are
//!
//! ```text
//! dE/dalpha = int -(x_r' + x_l') (lambda_r + lambda_l) dt
//! dE/dbeta  = int (1 + x_r^2) x_r' lambda_r + (1 + x_l^2) x_l' lambda_l dt
//! dE/ddelta = int (x_l lambda_l - x_r lambda_r) / 2 dt
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::glottal::{peak_abs, GlottalWaveform, WaveformKind};
use crate::vfmodel::{
    accel, integrate_forward, integrate_forward_bounded, opening, BoundaryConditions, FoldTrajectory,
    ModelError, ModelParams, PhysicalConstants, DEFAULT_BLOWUP_BOUND,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdlesError {
    #[error("waveform lengths differ: predicted {predicted}, measured {measured}")]
    LengthMismatch { predicted: usize, measured: usize },
    #[error("forward model diverged at the initial parameters: {0}")]
    InitDiverged(ModelError),
    #[error("measured flow is degenerate (empty or identically zero)")]
    DegenerateTarget,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
}

/// `R = u0 - u0m` on the shared grid and its rectangle-rule energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub values: Vec<f64>,
    pub step: f64,
    pub energy: f64,
}

impl ResidualSeries {
    pub fn from_values(values: Vec<f64>, step: f64) -> Self {
        let energy = step * values.iter().map(|v| v * v).sum::<f64>();
        Self { values, step, energy }
    }

    pub fn mean_abs(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        peak_abs(&self.values)
    }
}

/// Residual between predicted and measured flow; `step` is the model-time
/// spacing of the samples.
pub fn residual(
    u0: &GlottalWaveform,
    u0m: &GlottalWaveform,
    step: f64,
) -> Result<ResidualSeries, AdlesError> {
    residual_samples(u0.samples(), u0m.samples(), step)
}

pub fn residual_samples(u0: &[f64], u0m: &[f64], step: f64) -> Result<ResidualSeries, AdlesError> {
    if u0.len() != u0m.len() {
        return Err(AdlesError::LengthMismatch {
            predicted: u0.len(),
            measured: u0m.len(),
        });
    }
    Ok(ResidualSeries::from_values(
        u0.iter().zip(u0m).map(|(a, b)| a - b).collect(),
        step,
    ))
}

/// `(lambda_l, lambda_l', lambda_r, lambda_r')`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AdjointState {
    pub ll: f64,
    pub dl: f64,
    pub lr: f64,
    pub dr: f64,
}

impl AdjointState {
    pub const ZERO: AdjointState = AdjointState {
        ll: 0.0,
        dl: 0.0,
        lr: 0.0,
        dr: 0.0,
    };

    fn axpy(&self, k: f64, d: &AdjointState) -> AdjointState {
        AdjointState {
            ll: self.ll + k * d.ll,
            dl: self.dl + k * d.dl,
            lr: self.lr + k * d.lr,
            dr: self.dr + k * d.dr,
        }
    }

    fn max_abs(&self) -> f64 {
        self.ll.abs().max(self.dl.abs()).max(self.lr.abs()).max(self.dr.abs())
    }
}

/// Backward solution on the forward grid.
///
/// `lambdas[i]` holds the state just after sample `i` (the right limit), so
/// the terminal entry is exactly zero. `kicks[i]` is the jump of both
/// `lambda'` components across sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    pub step: f64,
    pub lambdas: Vec<AdjointState>,
    pub kicks: Vec<f64>,
}

impl AdjointTrajectory {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// `lambda'` just before sample `i` in forward time.
    fn left_limit(&self, i: usize) -> (f64, f64) {
        let s = &self.lambdas[i];
        (s.dl + self.kicks[i], s.dr + self.kicks[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Gradients {
    pub g_alpha: f64,
    pub g_beta: f64,
    pub g_delta: f64,
}

impl Gradients {
    pub fn to_array(self) -> [f64; 3] {
        [self.g_alpha, self.g_beta, self.g_delta]
    }

    pub fn is_zero(&self) -> bool {
        self.g_alpha == 0.0 && self.g_beta == 0.0 && self.g_delta == 0.0
    }

    pub fn norm(&self) -> f64 {
        self.to_array().iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[inline]
fn adjoint_rhs(s: &AdjointState, xl: f64, xr: f64, p: &ModelParams) -> AdjointState {
    let half = p.delta / 2.0;
    AdjointState {
        ll: s.dl,
        dl: (p.beta * (1.0 + xl * xl) - p.alpha) * s.dl - p.alpha * s.dr - (1.0 + half) * s.ll,
        lr: s.dr,
        dr: (p.beta * (1.0 + xr * xr) - p.alpha) * s.dr - p.alpha * s.dl - (1.0 - half) * s.lr,
    }
}

/// Cubic Hermite interpolation of displacement at the interval midpoint.
#[inline]
fn hermite_mid(y0: f64, m0: f64, y1: f64, m1: f64, h: f64) -> f64 {
    0.5 * (y0 + y1) + h * (m0 - m1) / 8.0
}

/// Cubic Hermite interpolation at fraction `tau` of an interval of length `h`.
#[inline]
fn hermite(y0: f64, m0: f64, y1: f64, m1: f64, h: f64, tau: f64) -> f64 {
    let t2 = tau * tau;
    let t3 = t2 * tau;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + tau) * h * m0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * m1
}

/// Per-sample jumps for the raw (unnormalized) residual: `2 h c R_i` where
/// the glottis is open, zero where the flow is clamped.
pub fn residual_kicks(traj: &FoldTrajectory, res: &ResidualSeries, consts: &PhysicalConstants) -> Vec<f64> {
    let scale = consts.flow_scale();
    traj.states()
        .iter()
        .zip(&res.values)
        .map(|(s, r)| {
            if scale * opening(s, consts) > 0.0 {
                2.0 * res.step * scale * r
            } else {
                0.0
            }
        })
        .collect()
}

/// Adjoint of the raw residual `R = predicted - measured` with zero terminal
/// data, integrated backward by RK4 on the forward grid.
pub fn integrate_adjoint(
    traj: &FoldTrajectory,
    res: &ResidualSeries,
    p: &ModelParams,
    consts: &PhysicalConstants,
) -> Result<AdjointTrajectory, AdlesError> {
    if traj.len() != res.values.len() {
        return Err(AdlesError::LengthMismatch {
            predicted: traj.len(),
            measured: res.values.len(),
        });
    }
    let kicks = residual_kicks(traj, res, consts);
    Ok(integrate_adjoint_kicked(traj, kicks, p, DEFAULT_BLOWUP_BOUND)?)
}

/// Backward sweep given the per-sample jumps of `lambda'`.
pub fn integrate_adjoint_kicked(
    traj: &FoldTrajectory,
    kicks: Vec<f64>,
    p: &ModelParams,
    bound: f64,
) -> Result<AdjointTrajectory, ModelError> {
    let states = traj.states();
    let n = states.len();
    assert_eq!(kicks.len(), n, "one kick per sample");
    let h = traj.step();
    let mut lambdas = vec![AdjointState::ZERO; n];
    let mut s = AdjointState::ZERO;
    for j in (0..n.saturating_sub(1)).rev() {
        s.dl += kicks[j + 1];
        s.dr += kicks[j + 1];
        let (a, b) = (&states[j], &states[j + 1]);
        let mid_l = hermite_mid(a.xl, a.vl, b.xl, b.vl, h);
        let mid_r = hermite_mid(a.xr, a.vr, b.xr, b.vr, h);
        let k1 = adjoint_rhs(&s, b.xl, b.xr, p);
        let k2 = adjoint_rhs(&s.axpy(-h / 2.0, &k1), mid_l, mid_r, p);
        let k3 = adjoint_rhs(&s.axpy(-h / 2.0, &k2), mid_l, mid_r, p);
        let k4 = adjoint_rhs(&s.axpy(-h, &k3), a.xl, a.xr, p);
        s = AdjointState {
            ll: s.ll - h / 6.0 * (k1.ll + 2.0 * k2.ll + 2.0 * k3.ll + k4.ll),
            dl: s.dl - h / 6.0 * (k1.dl + 2.0 * k2.dl + 2.0 * k3.dl + k4.dl),
            lr: s.lr - h / 6.0 * (k1.lr + 2.0 * k2.lr + 2.0 * k3.lr + k4.lr),
            dr: s.dr - h / 6.0 * (k1.dr + 2.0 * k2.dr + 2.0 * k3.dr + k4.dr),
        };
        if !(s.max_abs() <= bound) {
            return Err(ModelError::BlowUp { step: j, bound });
        }
        lambdas[j] = s;
    }
    Ok(AdjointTrajectory {
        step: h,
        lambdas,
        kicks,
    })
}

const GAUSS_NODES: [f64; 3] = [0.112_701_665_379_258_3, 0.5, 0.887_298_334_620_741_7];
const GAUSS_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

/// The three gradient integrals. Each interval between samples is
/// integrated by 3-point Gauss-Legendre on cubic Hermite interpolants of the
/// forward and adjoint states, which keeps the quadrature at the same
/// fourth order as the integrators.
pub fn gradients(traj: &FoldTrajectory, adj: &AdjointTrajectory, p: &ModelParams) -> Gradients {
    let states = traj.states();
    assert_eq!(states.len(), adj.len(), "forward and adjoint grids differ");
    let h = traj.step();
    let mut g = Gradients::default();
    let accels: Vec<(f64, f64)> = states.iter().map(|s| accel(s, p)).collect();
    for j in 0..states.len().saturating_sub(1) {
        let (a, b) = (&states[j], &states[j + 1]);
        let (aa, ab) = (accels[j], accels[j + 1]);
        let (la, lb) = (&adj.lambdas[j], &adj.lambdas[j + 1]);
        let (dl1, dr1) = adj.left_limit(j + 1);
        for (tau, w) in GAUSS_NODES.iter().zip(GAUSS_WEIGHTS) {
            let xl = hermite(a.xl, a.vl, b.xl, b.vl, h, *tau);
            let xr = hermite(a.xr, a.vr, b.xr, b.vr, h, *tau);
            let vl = hermite(a.vl, aa.0, b.vl, ab.0, h, *tau);
            let vr = hermite(a.vr, aa.1, b.vr, ab.1, h, *tau);
            let ll = hermite(la.ll, la.dl, lb.ll, dl1, h, *tau);
            let lr = hermite(la.lr, la.dr, lb.lr, dr1, h, *tau);
            let wh = w * h;
            g.g_alpha -= wh * (vr + vl) * (lr + ll);
            g.g_beta += wh * ((1.0 + xr * xr) * vr * lr + (1.0 + xl * xl) * vl * ll);
            g.g_delta += wh * 0.5 * (xl * ll - xr * lr);
        }
    }
    g
}

/// Box the optimizer keeps the parameters in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub delta: (f64, f64),
}

impl ParamBounds {
    pub fn project(&self, p: ModelParams) -> ModelParams {
        ModelParams::new(
            p.alpha.clamp(self.alpha.0, self.alpha.1),
            p.beta.clamp(self.beta.0, self.beta.1),
            p.delta.clamp(self.delta.0, self.delta.1),
        )
    }

    fn validate(&self) -> Result<(), String> {
        for (name, (lo, hi)) in [("alpha", self.alpha), ("beta", self.beta), ("delta", self.delta)] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(format!("{name} bounds [{lo}, {hi}] are not a finite interval"));
            }
        }
        if self.beta.0 <= 0.0 {
            return Err("beta lower bound must be > 0".into());
        }
        Ok(())
    }
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            alpha: (0.0, 2.0),
            beta: (1e-4, 2.0),
            delta: (-2.0, 2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Initial gradient step `delta` of the update `theta <- theta - delta * grad`.
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once `|E_k - E_{k+1}| / E_k` falls below this.
    pub rel_tol: f64,
    pub init: ModelParams,
    /// Halve the step (up to `max_halvings` times) until the energy drops.
    pub backtracking: bool,
    pub max_halvings: u32,
    /// Step multiplier after an accepted step when backtracking; 1 keeps it fixed.
    pub step_growth: f64,
    pub bounds: ParamBounds,
    /// Alignment search half-width in seconds; 0 disables alignment.
    pub max_lag_s: f64,
    /// RK4 steps per audio sample for the forward and adjoint solves.
    pub substeps: usize,
    pub blowup_bound: f64,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), AdlesError> {
        let bad = |m: String| Err(AdlesError::InvalidConfig(m));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step_size must be > 0, got {}", self.step_size));
        }
        if self.max_iters < 1 {
            return bad("max_iters must be >= 1".into());
        }
        if !(self.rel_tol > 0.0) {
            return bad(format!("rel_tol must be > 0, got {}", self.rel_tol));
        }
        if !self.init.is_finite() || !(self.init.beta > 0.0) {
            return bad("init must be finite with beta > 0".into());
        }
        if !(self.step_growth >= 1.0 && self.step_growth.is_finite()) {
            return bad(format!("step_growth must be >= 1, got {}", self.step_growth));
        }
        if !(self.max_lag_s >= 0.0) {
            return bad(format!("max_lag_s must be >= 0, got {}", self.max_lag_s));
        }
        if self.substeps == 0 {
            return bad("substeps must be >= 1".into());
        }
        if !(self.blowup_bound > 0.0) {
            return bad("blowup_bound must be > 0".into());
        }
        self.bounds.validate().map_err(AdlesError::InvalidConfig)
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            max_iters: 100,
            rel_tol: 1e-6,
            init: ModelParams::normal_voice(),
            backtracking: true,
            max_halvings: 20,
            step_growth: 1.0,
            bounds: ParamBounds::default(),
            max_lag_s: 0.005,
            substeps: 4,
            blowup_bound: DEFAULT_BLOWUP_BOUND,
        }
    }
}

/// Index shift of the measured flow maximizing its normalized correlation
/// with the prediction. Ties prefer the smaller shift, zero first.
pub fn best_lag(predicted: &[f64], measured: &[f64], max_lag: usize) -> isize {
    let n = predicted.len().min(measured.len()) as isize;
    let score = |lag: isize| {
        let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
        for i in 0.max(-lag)..n.min(n - lag) {
            let (x, y) = (predicted[i as usize], measured[(i + lag) as usize]);
            xy += x * y;
            xx += x * x;
            yy += y * y;
        }
        if xx > 0.0 && yy > 0.0 {
            xy / (xx * yy).sqrt()
        } else {
            f64::NEG_INFINITY
        }
    };
    let max_lag = (max_lag as isize).min(n - 1).max(0);
    let mut best = (0, score(0));
    for k in 1..=max_lag {
        for lag in [-k, k] {
            let s = score(lag);
            if s > best.1 {
                best = (lag, s);
            }
        }
    }
    best.0
}

/// `measured[i + lag]`, holding the edge values past either end.
pub fn shift_hold(measured: &[f64], lag: isize) -> Vec<f64> {
    let last = measured.len() as isize - 1;
    (0..measured.len() as isize)
        .map(|i| measured[(i + lag).clamp(0, last) as usize])
        .collect()
}

/// The objective for one measured waveform.
///
/// Energy is `E = h * sum (u_i / max u - m_{i+lag})^2` with `u` the clamped
/// predicted flow and `m` the unit-peak measured flow.
#[derive(Debug, Clone)]
pub struct FlowObjective {
    measured: Vec<f64>,
    bc: BoundaryConditions,
    consts: PhysicalConstants,
    step: f64,
    substeps: usize,
    max_lag: usize,
    bound: f64,
}

/// Everything computed at one parameter point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub params: ModelParams,
    /// Forward solution on the integration grid (`substeps` per sample).
    pub trajectory: FoldTrajectory,
    pub substeps: usize,
    /// Unit-peak predicted flow.
    pub predicted: Vec<f64>,
    pub peak: f64,
    pub peak_index: usize,
    pub lag: isize,
    pub residual: ResidualSeries,
}

impl Evaluation {
    pub fn energy(&self) -> f64 {
        self.residual.energy
    }
}

impl FlowObjective {
    /// `measured` is normalized to unit peak here; `step` is the model time
    /// per sample and `max_lag` the alignment half-width in samples.
    pub fn new(
        measured: &[f64],
        bc: BoundaryConditions,
        consts: PhysicalConstants,
        step: f64,
        max_lag: usize,
    ) -> Result<Self, AdlesError> {
        let peak = peak_abs(measured);
        if measured.len() < 2 || !(peak > 0.0) || !peak.is_finite() {
            return Err(AdlesError::DegenerateTarget);
        }
        Ok(Self {
            measured: measured.iter().map(|v| v / peak).collect(),
            bc,
            consts,
            step,
            substeps: 1,
            max_lag,
            bound: DEFAULT_BLOWUP_BOUND,
        })
    }

    /// Integrate with `substeps` RK4 steps per measured sample.
    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps.max(1);
        self
    }

    pub fn with_blowup_bound(mut self, bound: f64) -> Self {
        self.bound = bound;
        self
    }

    pub fn measured(&self) -> &[f64] {
        &self.measured
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn evaluate(&self, p: &ModelParams) -> Result<Evaluation, ModelError> {
        let n = self.measured.len();
        let m = self.substeps;
        let traj = integrate_forward_bounded(p, &self.bc, (n - 1) * m, self.step / m as f64, self.bound)?;
        let scale = self.consts.flow_scale();
        let mut predicted: Vec<f64> = traj
            .states()
            .iter()
            .step_by(m)
            .map(|s| (scale * opening(s, &self.consts)).max(0.0))
            .collect();
        let (peak_index, peak) = predicted
            .iter()
            .enumerate()
            .fold((0, 0.0), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        if peak > 0.0 {
            predicted.iter_mut().for_each(|v| *v /= peak);
        }
        let lag = if self.max_lag > 0 {
            best_lag(&predicted, &self.measured, self.max_lag)
        } else {
            0
        };
        let aligned = if lag == 0 {
            self.measured.clone()
        } else {
            shift_hold(&self.measured, lag)
        };
        let residual = residual_samples(&predicted, &aligned, self.step)
            .expect("prediction and measurement share a length");
        Ok(Evaluation {
            params: *p,
            trajectory: traj,
            substeps: m,
            predicted,
            peak,
            peak_index,
            lag,
            residual,
        })
    }

    /// Jumps of `lambda'`: `dE/dx_i`, including the dependence of the
    /// normalizing peak on the trajectory.
    pub fn kicks(&self, ev: &Evaluation) -> Vec<f64> {
        let n = ev.predicted.len();
        if !(ev.peak > 0.0) {
            return vec![0.0; n];
        }
        let scale = self.consts.flow_scale();
        let h = self.step;
        let m = ev.substeps;
        let mut kicks = vec![0.0; ev.trajectory.len()];
        for (i, (s, r)) in ev
            .trajectory
            .states()
            .iter()
            .step_by(m)
            .zip(&ev.residual.values)
            .enumerate()
        {
            if opening(s, &self.consts) > 0.0 {
                kicks[i * m] = 2.0 * h * scale * r / ev.peak;
            }
        }
        let coupling: f64 = ev
            .residual
            .values
            .iter()
            .zip(&ev.predicted)
            .map(|(r, u)| r * u)
            .sum();
        kicks[ev.peak_index * m] -= 2.0 * h * scale * coupling / ev.peak;
        kicks
    }

    pub fn adjoint(&self, ev: &Evaluation) -> Result<AdjointTrajectory, ModelError> {
        integrate_adjoint_kicked(&ev.trajectory, self.kicks(ev), &ev.params, self.bound)
    }

    pub fn gradient(&self, ev: &Evaluation) -> Result<Gradients, ModelError> {
        let adj = self.adjoint(ev)?;
        Ok(gradients(&ev.trajectory, &adj, &ev.params))
    }

    /// Energy at `p` with the alignment lag held at `lag`.
    pub fn energy_at_lag(&self, p: &ModelParams, lag: isize) -> Result<f64, ModelError> {
        let fixed = FlowObjective {
            measured: shift_hold(&self.measured, lag),
            max_lag: 0,
            ..self.clone()
        };
        Ok(fixed.evaluate(p)?.energy())
    }
}

/// Normalized flow the model produces at `p`, sampled on the same fine grid
/// the objective integrates on; a target the estimator can fit exactly.
pub fn synthetic_flow(
    p: &ModelParams,
    bc: &BoundaryConditions,
    consts: &PhysicalConstants,
    n_samples: usize,
    sample_rate: f64,
    step: f64,
    substeps: usize,
) -> Result<GlottalWaveform, ModelError> {
    if n_samples < 2 || substeps == 0 {
        return Err(ModelError::InvalidArgument("need >= 2 samples and >= 1 substep".into()));
    }
    let traj = integrate_forward(p, bc, (n_samples - 1) * substeps, step / substeps as f64)?;
    let scale = consts.flow_scale();
    let samples = traj
        .states()
        .iter()
        .step_by(substeps)
        .map(|s| (scale * opening(s, consts)).max(0.0))
        .collect();
    Ok(GlottalWaveform::new(samples, sample_rate, WaveformKind::Predicted).normalized())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Relative energy change fell below `rel_tol`.
    Tolerance,
    /// Gradient vanished exactly.
    Stationary,
    MaxIterations,
    /// No trial step decreased the energy.
    LineSearchFailed,
    /// An unguarded step left the stable region.
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub params: ModelParams,
    pub residual: ResidualSeries,
    pub iterations: usize,
    pub converged: bool,
    /// Energy after each iteration.
    pub energy_trace: Vec<f64>,
    pub initial_energy: f64,
    pub lag: isize,
    pub stop: StopReason,
}

impl EstimationResult {
    pub fn energy(&self) -> f64 {
        self.residual.energy
    }
}

/// Estimate `(alpha, beta, delta)` for a measured glottal flow by gradient
/// descent on the residual energy, with gradients from the adjoint.
pub fn estimate(
    u0m: &GlottalWaveform,
    bc: &BoundaryConditions,
    consts: &PhysicalConstants,
    step: f64,
    cfg: &OptimizerConfig,
) -> Result<EstimationResult, AdlesError> {
    cfg.validate()?;
    if u0m.degenerate {
        return Err(AdlesError::DegenerateTarget);
    }
    let max_lag = (cfg.max_lag_s * u0m.sample_rate()).round() as usize;
    let objective = FlowObjective::new(u0m.samples(), *bc, *consts, step, max_lag)?
        .with_substeps(cfg.substeps)
        .with_blowup_bound(cfg.blowup_bound);
    estimate_with(&objective, cfg)
}

pub fn estimate_with(objective: &FlowObjective, cfg: &OptimizerConfig) -> Result<EstimationResult, AdlesError> {
    cfg.validate()?;
    let init = cfg.bounds.project(cfg.init);
    let mut current = objective.evaluate(&init).map_err(AdlesError::InitDiverged)?;
    let initial_energy = current.energy();
    let mut best = current.clone();
    let mut trace = Vec::with_capacity(cfg.max_iters);
    let mut step = cfg.step_size;
    let mut stop = StopReason::MaxIterations;

    for iter in 0..cfg.max_iters {
        let e = current.energy();
        let grad = match objective.gradient(&current) {
            Ok(g) if g.to_array().iter().all(|v| v.is_finite()) => g,
            _ => {
                stop = StopReason::Diverged;
                break;
            }
        };
        if e == 0.0 || grad.is_zero() {
            trace.push(e);
            stop = StopReason::Stationary;
            break;
        }
        let theta = current.params.to_array();
        let g = grad.to_array();
        let attempts = if cfg.backtracking { cfg.max_halvings + 1 } else { 1 };
        let mut accepted = None;
        for _ in 0..attempts {
            let trial = cfg.bounds.project(ModelParams::from_array([
                theta[0] - step * g[0],
                theta[1] - step * g[1],
                theta[2] - step * g[2],
            ]));
            match objective.evaluate(&trial) {
                Ok(ev) if !cfg.backtracking || ev.energy() < e => {
                    accepted = Some(ev);
                    break;
                }
                Ok(_) | Err(_) if cfg.backtracking => step /= 2.0,
                _ => break,
            }
        }
        let Some(next) = accepted else {
            if iter == 0 && cfg.backtracking {
                return Ok(EstimationResult {
                    params: best.params,
                    residual: best.residual,
                    iterations: 0,
                    converged: false,
                    energy_trace: Vec::new(),
                    initial_energy,
                    lag: best.lag,
                    stop: StopReason::LineSearchFailed,
                });
            }
            stop = if cfg.backtracking {
                StopReason::LineSearchFailed
            } else {
                StopReason::Diverged
            };
            break;
        };
        let e_next = next.energy();
        trace.push(e_next);
        if cfg.backtracking {
            step *= cfg.step_growth;
        }
        current = next;
        if current.energy() < best.energy() {
            best = current.clone();
        }
        if (e - e_next).abs() <= cfg.rel_tol * e {
            stop = StopReason::Tolerance;
            break;
        }
    }

    let converged = matches!(stop, StopReason::Tolerance | StopReason::Stationary);
    Ok(EstimationResult {
        params: best.params,
        residual: best.residual,
        iterations: trace.len(),
        converged,
        energy_trace: trace,
        initial_energy,
        lag: best.lag,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vfmodel::{integrate_forward, model_step, predict_flow, FoldState};

    fn h() -> f64 {
        model_step(8000.0, 150.0)
    }

    #[test]
    fn residual_identity_and_arithmetic() {
        let a = GlottalWaveform::new(vec![0.3, -0.2, 0.9], 8000.0, WaveformKind::Predicted);
        let r = residual(&a, &a, 0.1).unwrap();
        assert!(r.values.iter().all(|&v| v == 0.0));
        assert_eq!(r.energy, 0.0);

        let ones = GlottalWaveform::new(vec![1.0; 50], 8000.0, WaveformKind::Predicted);
        let zeros = GlottalWaveform::new(vec![0.0; 50], 8000.0, WaveformKind::Measured);
        let r = residual(&ones, &zeros, 0.25).unwrap();
        assert_eq!(r.energy, 50.0 * 0.25);

        let short = GlottalWaveform::new(vec![0.0; 49], 8000.0, WaveformKind::Measured);
        assert!(matches!(residual(&ones, &short, 0.1), Err(AdlesError::LengthMismatch { .. })));
    }

    #[test]
    fn residual_energy_matches_compensated_sum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = rng.gen_range(10..2000);
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let step = rng.gen_range(0.01..1.0);
            let r = residual_samples(&a, &b, step).unwrap();
            // Kahan summation oracle
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for (x, y) in a.iter().zip(&b) {
                let d = x - y;
                let term = d * d - comp;
                let t = sum + term;
                comp = (t - sum) - term;
                sum = t;
            }
            let oracle = step * sum;
            assert!((r.energy - oracle).abs() <= 1e-12 * oracle);
        }
    }

    #[test]
    fn zero_residual_gives_zero_adjoint_and_gradients() {
        let p = ModelParams::normal_voice();
        let traj = integrate_forward(&p, &BoundaryConditions::default(), 399, h()).unwrap();
        let res = ResidualSeries::from_values(vec![0.0; 400], h());
        let adj = integrate_adjoint(&traj, &res, &p, &PhysicalConstants::default()).unwrap();
        assert!(adj.lambdas.iter().all(|s| *s == AdjointState::ZERO));
        assert!(gradients(&traj, &adj, &p).is_zero());
    }

    #[test]
    fn terminal_adjoint_state_is_zero() {
        let p = ModelParams::new(0.3, 0.2, 0.1);
        let traj = integrate_forward(&p, &BoundaryConditions::new(0.1, 0.05), 300, h()).unwrap();
        let res = ResidualSeries::from_values((0..301).map(|i| (i as f64 * 0.1).sin()).collect(), h());
        let adj = integrate_adjoint(&traj, &res, &p, &PhysicalConstants::default()).unwrap();
        assert_eq!(*adj.lambdas.last().unwrap(), AdjointState::ZERO);
        assert_eq!(adj.len(), traj.len());
        assert!(adj.lambdas[0].ll != 0.0);
    }

    #[test]
    fn gradients_vanish_on_a_zero_trajectory() {
        let p = ModelParams::normal_voice();
        let traj = FoldTrajectory::new(0.1, vec![FoldState::ZERO; 20]);
        let adj = AdjointTrajectory {
            step: 0.1,
            lambdas: vec![
                AdjointState {
                    ll: 1.0,
                    dl: 2.0,
                    lr: -1.0,
                    dr: 0.5
                };
                20
            ],
            kicks: vec![0.3; 20],
        };
        assert!(gradients(&traj, &adj, &p).is_zero());
    }

    #[test]
    fn estimate_converges_at_once_on_its_own_flow() {
        let init = ModelParams::new(0.25, 0.32, 0.05);
        let bc = BoundaryConditions::default();
        let consts = PhysicalConstants::default();
        let traj = integrate_forward(&init, &bc, 399, h()).unwrap();
        let u0m = predict_flow(&traj, &consts, 8000.0).normalized();
        let cfg = OptimizerConfig {
            init,
            substeps: 1,
            ..Default::default()
        };
        let res = estimate(&u0m, &bc, &consts, h(), &cfg).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert_eq!(res.energy_trace, vec![0.0]);
        assert_eq!(res.params, init);
        assert_eq!(res.energy(), 0.0);
    }

    #[test]
    fn degenerate_target_is_rejected() {
        let mut z = GlottalWaveform::new(vec![0.0; 400], 8000.0, WaveformKind::Measured);
        let r = estimate(&z, &BoundaryConditions::default(), &PhysicalConstants::default(), h(), &OptimizerConfig::default());
        assert_eq!(r.unwrap_err(), AdlesError::DegenerateTarget);
        z.degenerate = true;
        let r = estimate(&z, &BoundaryConditions::default(), &PhysicalConstants::default(), h(), &OptimizerConfig::default());
        assert_eq!(r.unwrap_err(), AdlesError::DegenerateTarget);
    }

    #[test]
    fn init_blow_up_is_reported() {
        let u0m = GlottalWaveform::new((0..400).map(|i| (i as f64 * 0.1).sin()).collect(), 8000.0, WaveformKind::Measured);
        let cfg = OptimizerConfig {
            init: ModelParams::new(2.0, 1e-4, 0.0),
            blowup_bound: 5.0,
            ..Default::default()
        };
        let r = estimate(&u0m, &BoundaryConditions::default(), &PhysicalConstants::default(), h(), &cfg);
        assert!(matches!(r, Err(AdlesError::InitDiverged(_))));
    }

    #[test]
    fn config_validation() {
        let ok = OptimizerConfig::default();
        assert!(ok.validate().is_ok());
        assert!(OptimizerConfig { step_size: 0.0, ..ok }.validate().is_err());
        assert!(OptimizerConfig { max_iters: 0, ..ok }.validate().is_err());
        assert!(OptimizerConfig { rel_tol: 0.0, ..ok }.validate().is_err());
        assert!(OptimizerConfig { init: ModelParams::new(0.2, 0.0, 0.0), ..ok }.validate().is_err());
    }

    #[test]
    fn lag_search_finds_a_known_shift() {
        let x: Vec<f64> = (0..400).map(|i| ((i as f64) * 0.13).sin().max(0.0) + 0.01 * i as f64).collect();
        for lag in [-7isize, 0, 5, 12] {
            let shifted = shift_hold(&x, -lag);
            assert_eq!(best_lag(&x, &shifted, 40), lag);
        }
    }

    #[test]
    fn projection_clamps_to_the_box() {
        let b = ParamBounds::default();
        assert_eq!(b.project(ModelParams::new(-1.0, -3.0, 5.0)), ModelParams::new(0.0, 1e-4, 2.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn objective(truth: [f64; 3], gain: f64) -> FlowObjective {
            let consts = PhysicalConstants::default();
            let bc = BoundaryConditions::default();
            let target = synthetic_flow(&ModelParams::from_array(truth), &bc, &consts, 240, 8000.0, h(), 2).unwrap();
            let scaled: Vec<f64> = target.samples().iter().map(|v| gain * v).collect();
            FlowObjective::new(&scaled, bc, consts, h(), 40).unwrap().with_substeps(2)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn energy_is_even_in_delta(
                alpha in 0.1f64..0.6, beta in 0.1f64..0.6, delta in 0.01f64..0.8,
                t_delta in -0.5f64..0.5,
            ) {
                let obj = objective([0.3, 0.3, t_delta], 1.0);
                let plus = obj.evaluate(&ModelParams::new(alpha, beta, delta)).unwrap();
                let minus = obj.evaluate(&ModelParams::new(alpha, beta, -delta)).unwrap();
                prop_assert!((plus.energy() - minus.energy()).abs() <= 1e-12 * plus.energy());
                let gp = obj.gradient(&plus).unwrap();
                let gm = obj.gradient(&minus).unwrap();
                let tol = 1e-9 * gp.norm().max(1e-12);
                prop_assert!((gp.g_alpha - gm.g_alpha).abs() <= tol && (gp.g_beta - gm.g_beta).abs() <= tol);
                prop_assert!((gp.g_delta + gm.g_delta).abs() <= tol);
            }

            #[test]
            fn target_gain_cancels(alpha in 0.1f64..0.6, beta in 0.1f64..0.6, delta in -0.5f64..0.5, gain in 0.01f64..100.0) {
                let p = ModelParams::new(alpha, beta, delta);
                let unit = objective([0.3, 0.3, 0.1], 1.0).evaluate(&p).unwrap();
                let scaled = objective([0.3, 0.3, 0.1], gain).evaluate(&p).unwrap();
                prop_assert!((unit.energy() - scaled.energy()).abs() <= 1e-12 * unit.energy().max(1e-300));
                prop_assert!(unit.energy() >= 0.0);
            }
        }
    }
}
