//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every function takes the model as `(sigma, lambda, eta, a, b)` and
//! returns a flat `Float64Array`; the layouts are documented per function.
//! Errors are raised as JavaScript exceptions carrying the message.

// exports take flat scalars so the JS side needs no marshalling
#![allow(clippy::too_many_arguments)]

use wasm_bindgen::prelude::*;

use interval_avoid::closed_form::{nu, HarmonicEval};
use interval_avoid::conditioned::{drift_probability, EnsembleConfig, Transform};
use interval_avoid::model::{Interval, ModelParams};
use interval_avoid::path::{sample_crossings, PathConfig};
use interval_avoid::Error;

fn setup(sigma: f64, lambda: f64, eta: f64, a: f64, b: f64) -> Result<(ModelParams, Interval), Error> {
    Ok((ModelParams::new(sigma, lambda, eta, 0.0)?, Interval::new(a, b)?))
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Rows `[x, h₊, h₋, h]` on `n` points per side, spanning distances
/// `(0, span]` below `a` and above `b`, concatenated row-major.
pub fn harmonic_rows(
    sigma: f64,
    lambda: f64,
    eta: f64,
    a: f64,
    b: f64,
    span: f64,
    n: usize,
) -> Result<Vec<f64>, Error> {
    let (model, interval) = setup(sigma, lambda, eta, a, b)?;
    let eval = HarmonicEval::new(&model, &interval)?;
    let n = n.max(1);
    let mut xs: Vec<f64> = (1..=n).rev().map(|i| a - span * i as f64 / n as f64).collect();
    xs.extend((1..=n).map(|i| b + span * i as f64 / n as f64));
    let mut out = Vec::with_capacity(4 * xs.len());
    for x in xs {
        out.extend([x, eval.h_plus(x)?, eval.h_minus(x)?, eval.h(x)?]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn harmonic_curves(
    sigma: f64,
    lambda: f64,
    eta: f64,
    a: f64,
    b: f64,
    span: f64,
    n: usize,
) -> Result<Vec<f64>, JsError> {
    harmonic_rows(sigma, lambda, eta, a, b, span, n).map_err(js)
}

/// Histogram of the first overshoot beyond the far edge from `start`.
///
/// Layout: `[empirical mass, exact mass, stderr, samples, then per bin
/// (left edge, empirical density, exact density)]`. Densities are of the
/// sub-probability law, so they integrate to the mass.
pub fn overshoot_rows(
    sigma: f64,
    lambda: f64,
    eta: f64,
    a: f64,
    b: f64,
    start: f64,
    paths: usize,
    seed: u64,
    bins: usize,
    max_excess: f64,
) -> Result<Vec<f64>, Error> {
    let (model, interval) = setup(sigma, lambda, eta, a, b)?;
    let exact = nu(&model, &interval, start, 1)?;
    let cfg = PathConfig {
        n_paths: paths,
        horizon: 1e6,
        seed,
        ..PathConfig::default()
    };
    let sample = sample_crossings(&model, &interval, start, 1, &cfg)?;
    let mass = sample.mass(1);
    let side = exact.side(&interval);
    let edge = interval.edge(side);
    let bins = bins.max(1);
    let width = max_excess / bins as f64;
    let mut counts = vec![0usize; bins];
    for &y in &sample.positions[0] {
        let u = (y - edge).abs();
        let i = (u / width) as usize;
        if i < bins {
            counts[i] += 1;
        }
    }
    let mut out = vec![mass.mean, exact.mass(), mass.stderr, sample.positions[0].len() as f64];
    for (i, &c) in counts.iter().enumerate() {
        let left = i as f64 * width;
        let empirical = c as f64 / (paths as f64 * width);
        let cdf = |u: f64| exact.conditional_excess_cdf(u);
        let exact_density = exact.mass() * (cdf(left + width) - cdf(left)) / width;
        out.extend([left, empirical, exact_density]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn overshoot_histogram(
    sigma: f64,
    lambda: f64,
    eta: f64,
    a: f64,
    b: f64,
    start: f64,
    paths: usize,
    seed: u64,
    bins: usize,
    max_excess: f64,
) -> Result<Vec<f64>, JsError> {
    overshoot_rows(sigma, lambda, eta, a, b, start, paths, seed, bins, max_excess).map_err(js)
}

/// Layout: `[p_up, stderr_up, p_down, stderr_down, target_up]` where
/// `target_up` is the `t → ∞` limit (`h₊/h` for `updown`, 1 for `plus`,
/// 0 for `minus`).
pub fn drift_rows(
    sigma: f64,
    lambda: f64,
    eta: f64,
    a: f64,
    b: f64,
    transform: &str,
    start: f64,
    horizon: f64,
    particles: usize,
    seed: u64,
) -> Result<Vec<f64>, Error> {
    let (model, interval) = setup(sigma, lambda, eta, a, b)?;
    let transform: Transform = transform.parse()?;
    let cfg = EnsembleConfig {
        particles,
        replicates: 10,
        dt: 1.0,
        horizon,
        seed,
        ..EnsembleConfig::default()
    };
    let d = drift_probability(&model, &interval, transform, start, &cfg)?;
    let eval = HarmonicEval::new(&model, &interval)?;
    let target = match transform {
        Transform::Plus => 1.0,
        Transform::Minus => 0.0,
        Transform::Updown => eval.h_plus(start)? / eval.h(start)?,
    };
    Ok(vec![d.p_up.mean, d.p_up.stderr, d.p_down.mean, d.p_down.stderr, target])
}

#[wasm_bindgen]
pub fn drift_probabilities(
    sigma: f64,
    lambda: f64,
    eta: f64,
    a: f64,
    b: f64,
    transform: &str,
    start: f64,
    horizon: f64,
    particles: usize,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    drift_rows(sigma, lambda, eta, a, b, transform, start, horizon, particles, seed).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    const S: f64 = std::f64::consts::SQRT_2;

    #[test]
    fn curves_layout() {
        let rows = harmonic_rows(S, 1.0, 1.0, 0.0, 1.0, 4.0, 4).unwrap();
        assert_eq!(rows.len(), 4 * 8);
        // x = 2 is the fifth row
        let r = &rows[4 * 4..5 * 4];
        assert_eq!(r[0], 2.0);
        assert!((r[1] - 0.868_143_838_367_911_1).abs() < 1e-14);
        assert!((r[3] - r[1] - r[2]).abs() < 1e-15);
        assert!(harmonic_rows(S, 1.0, 1.0, 1.0, 0.0, 4.0, 4).is_err());
    }

    #[test]
    fn overshoot_layout() {
        let rows = overshoot_rows(S, 1.0, 1.0, 0.0, 1.0, -1.0, 20_000, 1, 10, 5.0).unwrap();
        assert_eq!(rows.len(), 4 + 3 * 10);
        assert!((rows[1] - 0.081_553_712_936_112_57).abs() < 1e-14);
        assert!((rows[0] - rows[1]).abs() < 4.0 * rows[2]);
        // histogram integrates to roughly the empirical mass
        let integral: f64 = rows[4..].chunks(3).map(|c| c[1] * 0.5).sum();
        assert!(integral <= rows[0] + 1e-12);
    }

    #[test]
    fn drift_layout() {
        let rows = drift_rows(S, 1.0, 1.0, 0.0, 1.0, "updown", 2.0, 10.0, 200, 1).unwrap();
        assert_eq!(rows.len(), 5);
        assert!((rows[0] + rows[2] - 1.0).abs() < 1e-12);
        assert!((rows[4] - 0.927_527).abs() < 1e-5);
        assert!(drift_rows(S, 1.0, 1.0, 0.0, 1.0, "sideways", 2.0, 10.0, 200, 1).is_err());
    }
}
