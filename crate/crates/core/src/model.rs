//! The jump-diffusion family `ξ_t = drift·t + σB_t + Σ Y_i` with Poisson(λ)
//! jump times and symmetric Laplace(η) marks, plus its fluctuation-theory
//! quantities: Laplace exponent, Wiener–Hopf factors, κ(q) and the ladder
//! potential functions.
//!
//! The ladder normalization is pinned by `υ(θ) = (σ/√2)·θ(β+θ)/(η+θ)`, which
//! reduces to the textbook factor at `σ = √2, λ = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_positive, Error, Result};

/// Parameters of the two-sided exponential jump-diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub sigma: f64,
    pub lambda: f64,
    pub eta: f64,
    #[serde(default)]
    pub drift: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::reference(1.0)
    }
}

impl ModelParams {
    pub fn new(sigma: f64, lambda: f64, eta: f64, drift: f64) -> Result<Self> {
        let params = Self {
            sigma,
            lambda,
            eta,
            drift,
        };
        params.validate()?;
        Ok(params)
    }

    /// `σ = √2`, `λ = 1`, no drift.
    pub fn reference(eta: f64) -> Self {
        Self {
            sigma: std::f64::consts::SQRT_2,
            lambda: 1.0,
            eta,
            drift: 0.0,
        }
    }

    pub fn with_drift(self, drift: f64) -> Self {
        Self { drift, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("sigma", self.sigma)?;
        check_positive("lambda", self.lambda)?;
        check_positive("eta", self.eta)?;
        check_finite("drift", self.drift)
    }

    pub fn is_centred(&self) -> bool {
        self.drift == 0.0
    }

    pub(crate) fn require_centred(&self) -> Result<()> {
        if self.is_centred() {
            Ok(())
        } else {
            Err(Error::DriftUnsupported(self.drift))
        }
    }

    /// `β = √(η² + 2λ/σ²)`.
    pub fn beta(&self) -> f64 {
        (self.eta * self.eta + 2.0 * self.lambda / (self.sigma * self.sigma)).sqrt()
    }

    /// Variance of `ξ_1`: `σ² + 2λ/η²`.
    pub fn variance_rate(&self) -> f64 {
        self.sigma * self.sigma + 2.0 * self.lambda / (self.eta * self.eta)
    }

    /// `log E[e^{θ ξ_1}]` for `|θ| < η`.
    pub fn log_mgf(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        self.drift * theta
            + 0.5 * self.sigma * self.sigma * t2
            + self.lambda * t2 / (self.eta * self.eta - t2)
    }

    /// Multiplier applied to every ladder potential so that the factor
    /// normalization matches `υ` above.
    pub(crate) fn ladder_scale(&self) -> f64 {
        std::f64::consts::SQRT_2 / self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Below,
    Above,
}

impl Side {
    pub fn flip(self) -> Self {
        match self {
            Side::Below => Side::Above,
            Side::Above => Side::Below,
        }
    }
}

/// The closed interval `[a, b]` the process must avoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Default for Interval {
    fn default() -> Self {
        Self { a: 0.0, b: 1.0 }
    }
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let interval = Self { a, b };
        interval.validate()?;
        Ok(interval)
    }

    pub fn validate(&self) -> Result<()> {
        check_finite("interval.a", self.a)?;
        check_finite("interval.b", self.b)?;
        if self.a < self.b {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "interval.b",
                value: self.b,
                reason: "must be strictly greater than interval.a",
            })
        }
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn contains(&self, x: f64) -> bool {
        self.a <= x && x <= self.b
    }

    /// Which side of the interval `x` is on; `None` inside `[a, b]`.
    pub fn side(&self, x: f64) -> Option<Side> {
        if x > self.b {
            Some(Side::Above)
        } else if x < self.a {
            Some(Side::Below)
        } else {
            None
        }
    }

    pub(crate) fn require_outside(&self, x: f64) -> Result<Side> {
        if !x.is_finite() {
            return Err(Error::Domain(format!("non-finite point {x}")));
        }
        self.side(x).ok_or(Error::InsideInterval {
            x,
            a: self.a,
            b: self.b,
        })
    }

    /// Distance from `x` to the nearest endpoint; zero inside.
    pub fn distance(&self, x: f64) -> f64 {
        if x > self.b {
            x - self.b
        } else if x < self.a {
            self.a - x
        } else {
            0.0
        }
    }

    /// Reflection about the midpoint, `x ↦ a + b − x`.
    pub fn reflect(&self, x: f64) -> f64 {
        self.a + self.b - x
    }

    /// The endpoint adjacent to `side`: `b` above, `a` below.
    pub fn edge(&self, side: Side) -> f64 {
        match side {
            Side::Above => self.b,
            Side::Below => self.a,
        }
    }
}

/// `ψ(θ)` with `E[e^{−θξ_t}] = e^{−tψ(θ)}`, defined for `|θ| < η`.
pub fn laplace_exponent(params: &ModelParams, theta: f64) -> Result<f64> {
    params.validate()?;
    if !(theta.abs() < params.eta) {
        return Err(Error::Domain(format!(
            "Laplace exponent needs |theta| < eta, got theta = {theta}, eta = {}",
            params.eta
        )));
    }
    Ok(-params.log_mgf(-theta))
}

/// Wiener–Hopf data of the centred model. Ascending and descending factors
/// coincide by symmetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WienerHopfData {
    params: ModelParams,
    pub beta: f64,
}

impl WienerHopfData {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Ladder-height Laplace exponent `υ(θ)`, for `θ > −η`.
    pub fn ladder_exponent(&self, theta: f64) -> f64 {
        let p = &self.params;
        (p.sigma / std::f64::consts::SQRT_2) * theta * (self.beta + theta) / (p.eta + theta)
    }

    /// Roots `0 ≤ ρ₁(q) ≤ ρ₂(q)` of `ρ⁴ − ρ²(β² + q') + q'η² = 0` with
    /// `q' = 2q/σ²` (so `q' = q` at `σ = √2`).
    pub fn roots(&self, q: f64) -> (f64, f64) {
        let p = &self.params;
        let qs = 2.0 * q / (p.sigma * p.sigma);
        let b2 = self.beta * self.beta;
        let e2 = p.eta * p.eta;
        // (β² + q')² − 4q'η² rewritten without cancellation.
        let disc = ((b2 - qs).powi(2) + 4.0 * qs * (b2 - e2)).sqrt();
        let big = 0.5 * (b2 + qs + disc);
        let small = qs * e2 / big;
        (small.sqrt(), big.sqrt())
    }

    /// `κ(q) = κ̂(q) = (σ/√2)·ρ₁ρ₂/η`.
    pub fn kappa(&self, q: f64) -> f64 {
        let (r1, r2) = self.roots(q);
        (self.params.sigma / std::f64::consts::SQRT_2) * r1 * r2 / self.params.eta
    }

    /// `U(x) = U₊(x) = U₋(x)`.
    pub fn potential(&self, x: f64) -> f64 {
        let p = &self.params;
        let beta = self.beta;
        p.ladder_scale()
            * (p.eta / beta * x + (beta - p.eta) / (beta * beta) * (-(-beta * x).exp_m1()))
    }

    /// Partial-fraction weights `(A, B)` of the q-potential density
    /// `A e^{−ρ₁x} + B e^{−ρ₂x}` (before the ladder scale).
    pub fn q_density_weights(&self, q: f64) -> (f64, f64, f64, f64) {
        let (r1, r2) = self.roots(q);
        let eta = self.params.eta;
        ((eta - r1) / (r2 - r1), (r2 - eta) / (r2 - r1), r1, r2)
    }

    /// `U^q([0, x])`.
    pub fn q_potential(&self, x: f64, q: f64) -> f64 {
        let (wa, wb, r1, r2) = self.q_density_weights(q);
        let integral = |r: f64| {
            if r == 0.0 {
                x
            } else {
                -(-r * x).exp_m1() / r
            }
        };
        self.params.ladder_scale() * (wa * integral(r1) + wb * integral(r2))
    }

    /// `∫ e^{−θu} U^q(du)`; `q = 0` gives the Laplace transform of `U`.
    pub fn q_potential_transform(&self, theta: f64, q: f64) -> f64 {
        let (r1, r2) = self.roots(q);
        self.params.ladder_scale() * (theta + self.params.eta) / ((theta + r1) * (theta + r2))
    }
}

pub fn wiener_hopf(params: &ModelParams) -> Result<WienerHopfData> {
    params.validate()?;
    params.require_centred()?;
    Ok(WienerHopfData {
        params: *params,
        beta: params.beta(),
    })
}

pub fn kappa(params: &ModelParams, q: f64) -> Result<f64> {
    let wh = wiener_hopf(params)?;
    require_nonnegative("q", q)?;
    Ok(wh.kappa(q))
}

pub fn potential_u(params: &ModelParams, x: f64) -> Result<f64> {
    let wh = wiener_hopf(params)?;
    require_nonnegative("x", x)?;
    Ok(wh.potential(x))
}

pub fn potential_u_q(params: &ModelParams, x: f64, q: f64) -> Result<f64> {
    let wh = wiener_hopf(params)?;
    require_nonnegative("x", x)?;
    check_positive("q", q)?;
    Ok(wh.q_potential(x, q))
}

fn require_nonnegative(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be finite and >= 0",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference() -> ModelParams {
        ModelParams::reference(1.0)
    }

    #[test]
    fn laplace_exponent_examples() {
        let p = ModelParams::reference(2.0);
        assert_relative_eq!(laplace_exponent(&p, 1.0).unwrap(), -4.0 / 3.0, epsilon = 1e-14);
        assert_eq!(laplace_exponent(&p, 0.0).unwrap(), 0.0);
        let v = laplace_exponent(&reference(), 0.5).unwrap();
        assert_relative_eq!(v, -0.25 - 0.25 / 0.75, max_relative = 1e-14);
        // product form with β = √2
        let beta = 2f64.sqrt();
        let t = 0.5;
        let product = t * (beta + t) / (1.0 + t) * (-t) * (beta - t) / (1.0 - t);
        assert_relative_eq!(v, product, max_relative = 1e-12);
    }

    #[test]
    fn laplace_exponent_pole_is_rejected() {
        assert!(laplace_exponent(&reference(), 1.0).is_err());
        assert!(laplace_exponent(&reference(), -1.5).is_err());
    }

    #[test]
    fn drift_rejected_for_closed_forms() {
        let p = reference().with_drift(0.5);
        assert!(matches!(wiener_hopf(&p), Err(Error::DriftUnsupported(_))));
        assert!(potential_u(&p, 1.0).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ModelParams::new(0.0, 1.0, 1.0, 0.0).is_err());
        assert!(ModelParams::new(1.0, -1.0, 1.0, 0.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, 0.0, 0.0).is_err());
        assert!(Interval::new(1.0, 1.0).is_err());
        assert!(Interval::new(2.0, 1.0).is_err());
    }

    #[test]
    fn roots_examples() {
        let wh = wiener_hopf(&reference()).unwrap();
        assert_relative_eq!(wh.beta, 2f64.sqrt(), max_relative = 1e-15);
        let (r1, r2) = wh.roots(0.25);
        // ρ⁴ − 2.25ρ² + 0.25 = 0, evaluated independently at 30 digits
        assert_relative_eq!(r1, 0.342_370_824_491_049_9, max_relative = 1e-14);
        assert_relative_eq!(r2, 1.460_404_813_240_944_7, max_relative = 1e-14);
        assert_relative_eq!(r1 * r2, 0.5, max_relative = 1e-14);
        assert_eq!(wh.roots(0.0), (0.0, wh.beta));
    }

    #[test]
    fn kappa_examples() {
        let p = reference();
        assert_eq!(kappa(&p, 0.0).unwrap(), 0.0);
        assert_relative_eq!(kappa(&p, 0.25).unwrap(), 0.5, max_relative = 1e-14);
        assert_relative_eq!(kappa(&p, 1e-4).unwrap(), 0.01, max_relative = 1e-12);
        // generalized parameters still give √q
        let g = ModelParams::new(0.7, 2.5, 1.3, 0.0).unwrap();
        assert_relative_eq!(kappa(&g, 0.3).unwrap(), 0.3f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn potential_examples() {
        let p = reference();
        assert_eq!(potential_u(&p, 0.0).unwrap(), 0.0);
        assert_relative_eq!(
            potential_u(&p, 1.0).unwrap(),
            0.863_862_438_051_840_3,
            max_relative = 1e-14
        );
        let wh = wiener_hopf(&p).unwrap();
        let x = 60.0;
        let asymptote = (wh.beta - 1.0) / (wh.beta * wh.beta);
        assert_relative_eq!(wh.potential(x) - x / wh.beta, asymptote, epsilon = 1e-12);
        assert!(potential_u(&p, -0.1).is_err());
    }

    #[test]
    fn q_potential_examples() {
        let p = reference();
        let wh = wiener_hopf(&p).unwrap();
        assert_eq!(potential_u_q(&p, 0.0, 0.25).unwrap(), 0.0);
        // small-q limit recovers U
        assert_relative_eq!(
            potential_u_q(&p, 1.0, 1e-12).unwrap(),
            0.863_862_438_051_840_3,
            max_relative = 1e-5
        );
        // total mass 1/κ̂(q)
        assert_relative_eq!(wh.q_potential(1e4, 0.25), 2.0, max_relative = 1e-12);
        assert!(potential_u_q(&p, 1.0, 0.0).is_err());
    }

    /// Composite Simpson on the partial-fraction density, independent of the
    /// closed-form integral.
    fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(lo + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn q_potential_matches_quadrature() {
        let wh = wiener_hopf(&reference()).unwrap();
        let (r1, r2) = wh.roots(0.25);
        let density = |u: f64| {
            ((1.0 - r1) * (-r1 * u).exp() + (r2 - 1.0) * (-r2 * u).exp()) / (r2 - r1)
        };
        let quad = simpson(density, 0.0, 1.0, 2000);
        assert_relative_eq!(wh.q_potential(1.0, 0.25), quad, max_relative = 1e-12);
        // 30-digit reference value
        assert_relative_eq!(quad, 0.714_598_481_137_773_1, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn factorization_holds(frac in -0.99f64..0.99, eta in 0.2f64..4.0) {
            let p = ModelParams::reference(eta);
            let wh = wiener_hopf(&p).unwrap();
            let theta = frac * eta;
            let psi = laplace_exponent(&p, theta).unwrap();
            let prod = wh.ladder_exponent(theta) * wh.ladder_exponent(-theta);
            prop_assert!((psi - prod).abs() <= 1e-10 * (1.0 + psi.abs()));
        }

        #[test]
        fn generalized_factorization_holds(
            frac in -0.99f64..0.99,
            sigma in 0.3f64..3.0,
            lambda in 0.1f64..5.0,
            eta in 0.2f64..4.0,
        ) {
            let p = ModelParams::new(sigma, lambda, eta, 0.0).unwrap();
            let wh = wiener_hopf(&p).unwrap();
            let theta = frac * eta;
            let psi = laplace_exponent(&p, theta).unwrap();
            let prod = wh.ladder_exponent(theta) * wh.ladder_exponent(-theta);
            prop_assert!((psi - prod).abs() <= 1e-10 * (1.0 + psi.abs()));
        }

        #[test]
        fn root_identities(q in 1e-9f64..10.0, eta in 0.2f64..4.0) {
            let wh = wiener_hopf(&ModelParams::reference(eta)).unwrap();
            let (r1, r2) = wh.roots(q);
            prop_assert!(r1 <= r2);
            let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
            prop_assert!(rel(r1 * r2, eta * q.sqrt()) <= 1e-12);
            prop_assert!(rel(r1 * r1 + r2 * r2, wh.beta * wh.beta + q) <= 1e-12);
            prop_assert!(rel(wh.kappa(q), q.sqrt()) <= 1e-12);
        }

        #[test]
        fn q_potential_below_potential_and_monotone(
            x in 0.0f64..20.0,
            q1 in 1e-6f64..5.0,
            dq in 1e-6f64..5.0,
        ) {
            let wh = wiener_hopf(&ModelParams::reference(1.0)).unwrap();
            let lo = wh.q_potential(x, q1);
            let hi_q = wh.q_potential(x, q1 + dq);
            prop_assert!(lo <= wh.potential(x) * (1.0 + 1e-12));
            prop_assert!(hi_q <= lo * (1.0 + 1e-12));
        }
    }
}
