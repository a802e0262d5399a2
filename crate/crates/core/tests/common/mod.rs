#![allow(dead_code)]

use std::f64::consts::PI;

/// Rosenberg glottal pulse train.
pub fn rosenberg_train(rate: f64, f0: f64, n: usize, open_q: f64, close_q: f64) -> Vec<f64> {
    let period = rate / f0;
    let tp = open_q * period;
    let tn = close_q * period;
    (0..n)
        .map(|i| {
            let t = (i as f64) % period;
            if t < tp {
                0.5 * (1.0 - (PI * t / tp).cos())
            } else if t < tp + tn {
                (PI * (t - tp) / (2.0 * tn)).cos()
            } else {
                0.0
            }
        })
        .collect()
}

/// Denominator `[1, a1, .., a_p]` of a resonator cascade.
pub fn formant_polynomial(rate: f64, formants: &[(f64, f64)]) -> Vec<f64> {
    let mut poly = vec![1.0];
    for &(f, bw) in formants {
        let r = (-PI * bw / rate).exp();
        let theta = 2.0 * PI * f / rate;
        let section = [1.0, -2.0 * r * theta.cos(), r * r];
        let mut next = vec![0.0; poly.len() + 2];
        for (i, a) in poly.iter().enumerate() {
            for (j, b) in section.iter().enumerate() {
                next[i + j] += a * b;
            }
        }
        poly = next;
    }
    poly
}

pub fn all_pole(x: &[f64], a: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for n in 0..x.len() {
        let mut acc = x[n];
        for k in 1..a.len() {
            if n >= k {
                acc -= a[k] * y[n - k];
            }
        }
        y[n] = acc;
    }
    y
}

pub const VOWEL_A: [(f64, f64); 5] = [(730.0, 80.0), (1090.0, 90.0), (2440.0, 120.0), (3300.0, 150.0), (3750.0, 200.0)];
pub const VOWEL_I: [(f64, f64); 5] = [(270.0, 60.0), (2290.0, 100.0), (3010.0, 120.0), (3500.0, 150.0), (3850.0, 200.0)];
pub const VOWEL_U: [(f64, f64); 5] = [(300.0, 60.0), (870.0, 80.0), (2240.0, 120.0), (3300.0, 150.0), (3750.0, 200.0)];

/// Speech pressure for a glottal flow: radiation (first difference) then the
/// vocal tract. Returns the signal peak-scaled to `amp`.
pub fn synth_vowel(flow: &[f64], rate: f64, formants: &[(f64, f64)], amp: f64) -> Vec<f64> {
    let mut d = vec![0.0; flow.len()];
    for i in 1..flow.len() {
        d[i] = flow[i] - flow[i - 1];
    }
    let y = all_pole(&d, &formant_polynomial(rate, formants));
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    y.iter().map(|v| amp * v / peak).collect()
}

/// Peak normalized cross-correlation over lags within `max_lag`.
pub fn best_ncc(a: &[f64], b: &[f64], max_lag: isize) -> (f64, isize) {
    let n = a.len().min(b.len()) as isize;
    let mut best = (f64::NEG_INFINITY, 0);
    for lag in -max_lag..=max_lag {
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        let (ma, mb) = {
            let idx: Vec<isize> = (0..n).filter(|&i| i + lag >= 0 && i + lag < n).collect();
            let k = idx.len() as f64;
            (idx.iter().map(|&i| a[i as usize]).sum::<f64>() / k, idx.iter().map(|&i| b[(i + lag) as usize]).sum::<f64>() / k)
        };
        for i in 0..n {
            let j = i + lag;
            if j < 0 || j >= n {
                continue;
            }
            let x = a[i as usize] - ma;
            let y = b[j as usize] - mb;
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
        let c = ab / (aa * bb).sqrt();
        if c > best.0 {
            best = (c, lag);
        }
    }
    best
}
