//! Glottal flow recovery by LPC inverse filtering.
//!
//! A segment is pre-emphasized and tapered, an all-pole vocal tract model is
//! fit by the autocorrelation method, the mean-removed segment is passed
//! through the inverse (FIR) filter, and an integrator followed by linear
//! detrending undoes the lip-radiation derivative.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::Segment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlottalError {
    #[error("singular autocorrelation at order {order}")]
    Singular { order: usize },
    #[error("invalid inverse filter config: {0}")]
    InvalidConfig(String),
    #[error("invalid flow constants: {0}")]
    InvalidConstants(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveformKind {
    Measured,
    Predicted,
}

/// Sampled glottal volume velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct GlottalWaveform {
    samples: Vec<f64>,
    sample_rate: f64,
    kind: WaveformKind,
    /// Set when the source carried no usable signal (e.g. all zeros).
    pub degenerate: bool,
}

impl GlottalWaveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64, kind: WaveformKind) -> Self {
        Self {
            samples,
            sample_rate,
            kind,
            degenerate: false,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn kind(&self) -> WaveformKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn peak(&self) -> f64 {
        peak_abs(&self.samples)
    }

    /// Scale to unit peak absolute amplitude. Identically zero waveforms are
    /// returned unchanged.
    pub fn normalized(mut self) -> Self {
        normalize_in_place(&mut self.samples);
        self
    }

    /// CSV with header `t_s, u0m`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,u0m\n");
        for (i, v) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{},{}", i as f64 / self.sample_rate, v);
        }
        out
    }
}

pub fn peak_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn normalize_in_place(x: &mut [f64]) {
    let peak = peak_abs(x);
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v /= peak);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InverseFilterConfig {
    pub lpc_order: usize,
    pub preemphasis: f64,
    /// Leak of the flow-recovering integrator; 1 integrates exactly.
    pub leak: f64,
    /// Remove the least-squares line from the integrated flow.
    pub detrend: bool,
    pub normalize: bool,
}

impl InverseFilterConfig {
    /// Order by the usual `rate / 1000 + 2` rule.
    pub fn for_rate(sample_rate: u32) -> Self {
        Self {
            lpc_order: (sample_rate / 1000) as usize + 2,
            ..Self::default()
        }
    }

    pub fn validate(&self, segment_len: usize) -> Result<(), GlottalError> {
        if self.lpc_order < 2 || 2 * self.lpc_order >= segment_len {
            return Err(GlottalError::InvalidConfig(format!(
                "lpc_order {} must be >= 2 and below half the segment length {segment_len}",
                self.lpc_order
            )));
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return Err(GlottalError::InvalidConfig(format!(
                "preemphasis {} outside [0, 1)",
                self.preemphasis
            )));
        }
        if !(0.0..=1.0).contains(&self.leak) {
            return Err(GlottalError::InvalidConfig(format!("leak {} outside [0, 1]", self.leak)));
        }
        Ok(())
    }
}

impl Default for InverseFilterConfig {
    fn default() -> Self {
        Self {
            lpc_order: 10,
            preemphasis: 0.97,
            // a leak of 0.99 sags visibly within one pitch period at 8 kHz
            leak: 1.0,
            detrend: true,
            normalize: true,
        }
    }
}

pub fn preemphasize(x: &[f64], coef: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut prev = 0.0;
    for &v in x {
        out.push(v - coef * prev);
        prev = v;
    }
    out
}

/// Periodic-free Hann taper.
pub fn hann(n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![1.0; n];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|k| x.iter().zip(x.iter().skip(k)).map(|(a, b)| a * b).sum())
        .collect()
}

/// Levinson-Durbin recursion. Returns `[1, a_1, .., a_p]` for the inverse
/// filter `A(z) = 1 + sum a_k z^-k` together with the final prediction error.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<(Vec<f64>, f64), GlottalError> {
    assert!(r.len() > order);
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut err = r[0];
    if !(err > 0.0) || !err.is_finite() {
        return Err(GlottalError::Singular { order: 0 });
    }
    let floor = r[0] * 1e-12;
    let mut prev = a.clone();
    for m in 1..=order {
        let acc: f64 = (0..m).map(|i| a[i] * r[m - i]).sum();
        let k = -acc / err;
        prev[..m].copy_from_slice(&a[..m]);
        for i in 1..m {
            a[i] = prev[i] + k * prev[m - i];
        }
        a[m] = k;
        err *= 1.0 - k * k;
        if !(err > floor) || !err.is_finite() {
            return Err(GlottalError::Singular { order: m });
        }
    }
    Ok((a, err))
}

/// Apply the FIR filter `coefs` with zero initial state.
pub fn fir_filter(x: &[f64], coefs: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            coefs
                .iter()
                .enumerate()
                .take(n + 1)
                .map(|(k, c)| c * x[n - k])
                .sum()
        })
        .collect()
}

pub fn leaky_integrate(x: &[f64], leak: f64) -> Vec<f64> {
    let mut acc = 0.0;
    x.iter()
        .map(|&v| {
            acc = v + leak * acc;
            acc
        })
        .collect()
}

/// Subtract the least-squares straight line.
pub fn detrend(x: &mut [f64]) {
    let n = x.len() as f64;
    if x.len() < 2 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let t_mean = (n - 1.0) / 2.0;
    let y_mean = x.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in x.iter().enumerate() {
        let t = i as f64 - t_mean;
        sxy += t * (y - y_mean);
        sxx += t * t;
    }
    let slope = sxy / sxx;
    for (i, y) in x.iter_mut().enumerate() {
        *y -= y_mean + slope * (i as f64 - t_mean);
    }
}

/// Linear-prediction inverse filter of `x` fitted on its pre-emphasized,
/// tapered copy.
pub fn lpc_inverse_filter(x: &[f64], cfg: &InverseFilterConfig) -> Result<Vec<f64>, GlottalError> {
    let pre = preemphasize(x, cfg.preemphasis);
    let tapered: Vec<f64> = pre.iter().zip(hann(pre.len())).map(|(v, w)| v * w).collect();
    let r = autocorrelation(&tapered, cfg.lpc_order);
    let (a, _) = levinson_durbin(&r, cfg.lpc_order)?;
    Ok(a)
}

/// Recover the measured glottal flow `u0m` of a segment.
pub fn inverse_filter(seg: &Segment, cfg: &InverseFilterConfig) -> Result<GlottalWaveform, GlottalError> {
    inverse_filter_samples(&seg.samples, seg.sample_rate() as f64, cfg)
}

pub fn inverse_filter_samples(
    x: &[f64],
    sample_rate: f64,
    cfg: &InverseFilterConfig,
) -> Result<GlottalWaveform, GlottalError> {
    cfg.validate(x.len())?;
    // a DC offset would be integrated into a ramp that swamps the flow
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let x: Vec<f64> = x.iter().map(|v| v - mean).collect();
    // a constant segment leaves only rounding noise after the mean is removed
    if x.iter().all(|v| v.abs() <= 1e-12 * scale) {
        let mut w = GlottalWaveform::new(vec![0.0; x.len()], sample_rate, WaveformKind::Measured);
        w.degenerate = true;
        return Ok(w);
    }
    let a = lpc_inverse_filter(&x, cfg)?;
    let derivative = fir_filter(&x, &a);
    let mut flow = leaky_integrate(&derivative, cfg.leak);
    if cfg.detrend {
        detrend(&mut flow);
    }
    let w = GlottalWaveform::new(flow, sample_rate, WaveformKind::Measured);
    Ok(if cfg.normalize { w.normalized() } else { w })
}

/// Convert glottal pressure to volume velocity: `u = A(0) / (rho c) * p`.
pub fn scale_to_flow(
    p0: &GlottalWaveform,
    area_at_glottis: f64,
    rho: f64,
    c_sound: f64,
) -> Result<GlottalWaveform, GlottalError> {
    for (name, v) in [("area", area_at_glottis), ("rho", rho), ("c", c_sound)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(GlottalError::InvalidConstants(format!("{name} must be > 0, got {v}")));
        }
    }
    let k = area_at_glottis / (rho * c_sound);
    let mut out = GlottalWaveform::new(
        p0.samples.iter().map(|v| v * k).collect(),
        p0.sample_rate,
        WaveformKind::Measured,
    );
    out.degenerate = p0.degenerate;
    Ok(out)
}

/// Spectral flatness (geometric over arithmetic mean of the power spectrum),
/// evaluated on `bins` DFT bins of the Hann-tapered signal.
pub fn spectral_flatness(x: &[f64], bins: usize) -> f64 {
    let w = hann(x.len());
    let n = x.len() as f64;
    let powers: Vec<f64> = (1..bins)
        .map(|k| {
            let omega = std::f64::consts::PI * k as f64 / bins as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (i, (v, wi)) in x.iter().zip(&w).enumerate() {
                let ph = omega * i as f64;
                re += v * wi * ph.cos();
                im -= v * wi * ph.sin();
            }
            (re * re + im * im) / n + 1e-300
        })
        .collect();
    let m = powers.len() as f64;
    let log_mean = powers.iter().map(|p| p.ln()).sum::<f64>() / m;
    let mean = powers.iter().sum::<f64>() / m;
    log_mean.exp() / mean
}
