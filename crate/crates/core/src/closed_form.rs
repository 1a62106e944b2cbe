//! Closed forms for the centred two-sided exponential model: overshoot laws,
//! the crossing measures `ν_k`, and the harmonic functions `h₊`, `h₋`, `h`
//! together with their truncated series and q-versions.

use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};
use crate::model::{wiener_hopf, Interval, ModelParams, Side, WienerHopfData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

/// Law of the first-passage position over `boundary`: an atom at the
/// boundary (creeping) plus the density
/// `density_scale · e^{−η·|y − boundary|}` beyond it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OvershootLaw {
    pub boundary: f64,
    pub direction: Direction,
    pub creep_mass: f64,
    pub density_scale: f64,
    pub start: f64,
    pub rate: f64,
}

impl OvershootLaw {
    /// Probability that the passage happens by a jump.
    pub fn jump_mass(&self) -> f64 {
        self.density_scale / self.rate
    }

    fn excess(&self, y: f64) -> f64 {
        match self.direction {
            Direction::Up => y - self.boundary,
            Direction::Down => self.boundary - y,
        }
    }

    /// Density of the jump part at `y`.
    pub fn density(&self, y: f64) -> f64 {
        let e = self.excess(y);
        if e > 0.0 {
            self.density_scale * (-self.rate * e).exp()
        } else {
            0.0
        }
    }

    /// Probability of landing strictly beyond `level` (measured in the
    /// direction of travel, `level` past the boundary).
    pub fn mass_beyond(&self, level: f64) -> f64 {
        let e = self.excess(level).max(0.0);
        self.jump_mass() * (-self.rate * e).exp()
    }
}

pub fn overshoot_law(
    model: &ModelParams,
    interval: &Interval,
    start: f64,
    direction: Direction,
) -> Result<OvershootLaw> {
    let wh = wiener_hopf(model)?;
    interval.validate()?;
    let (boundary, dist) = match direction {
        Direction::Up => (interval.a, interval.a - start),
        Direction::Down => (interval.b, start - interval.b),
    };
    if !(dist > 0.0) {
        return Err(Error::Domain(format!(
            "overshoot {direction:?} needs the start on the near side of {boundary}, got {start}"
        )));
    }
    let eta = model.eta;
    let beta = wh.beta;
    let density_scale = eta * (beta - eta) / beta * (-(-beta * dist).exp_m1());
    Ok(OvershootLaw {
        boundary,
        direction,
        creep_mass: 1.0 - density_scale / eta,
        density_scale,
        start,
        rate: eta,
    })
}

/// `c = e^{−η(b−a)}(β−η)/(β+η)`.
pub fn crossing_factor_c(model: &ModelParams, interval: &Interval) -> Result<f64> {
    let wh = wiener_hopf(model)?;
    interval.validate()?;
    Ok(factor_c(&wh, interval))
}

fn factor_c(wh: &WienerHopfData, interval: &Interval) -> f64 {
    let eta = wh.params().eta;
    (-eta * interval.width()).exp() * (wh.beta - eta) / (wh.beta + eta)
}

/// `γ = sup_{x<a} P^x(first passage over a lands beyond b)
///    = (β−η)/β · e^{−η(b−a)}`, attained as `x → −∞`.
pub fn gamma_bound(model: &ModelParams, interval: &Interval) -> Result<f64> {
    let wh = wiener_hopf(model)?;
    interval.validate()?;
    Ok(gamma(&wh, interval))
}

fn gamma(wh: &WienerHopfData, interval: &Interval) -> f64 {
    let eta = wh.params().eta;
    (wh.beta - eta) / wh.beta * (-eta * interval.width()).exp()
}

/// Law of the position right after the k-th jump across the interval,
/// restricted to `k ≤ K†`.
///
/// For `k ≥ 1` the measure lives beyond the far edge with density
/// `mass · η e^{−η·(distance past edge)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CrossingMeasure {
    Atom {
        position: f64,
    },
    Exponential {
        k: u32,
        side: Side,
        mass: f64,
        edge: f64,
        rate: f64,
    },
}

impl CrossingMeasure {
    pub fn k(&self) -> u32 {
        match *self {
            CrossingMeasure::Atom { .. } => 0,
            CrossingMeasure::Exponential { k, .. } => k,
        }
    }

    pub fn mass(&self) -> f64 {
        match *self {
            CrossingMeasure::Atom { .. } => 1.0,
            CrossingMeasure::Exponential { mass, .. } => mass,
        }
    }

    pub fn side(&self, interval: &Interval) -> Side {
        match *self {
            CrossingMeasure::Atom { position } => {
                interval.side(position).expect("atom lies outside the interval")
            }
            CrossingMeasure::Exponential { side, .. } => side,
        }
    }

    /// Density at `y`; zero for the atom.
    pub fn density(&self, y: f64) -> f64 {
        match *self {
            CrossingMeasure::Atom { .. } => 0.0,
            CrossingMeasure::Exponential {
                side,
                mass,
                edge,
                rate,
                ..
            } => {
                let past = match side {
                    Side::Above => y - edge,
                    Side::Below => edge - y,
                };
                if past > 0.0 {
                    mass * rate * (-rate * past).exp()
                } else {
                    0.0
                }
            }
        }
    }

    /// CDF of the normalized law of `distance past the far edge`.
    pub fn conditional_excess_cdf(&self, u: f64) -> f64 {
        match *self {
            CrossingMeasure::Atom { .. } => {
                if u >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            CrossingMeasure::Exponential { rate, .. } => {
                if u <= 0.0 {
                    0.0
                } else {
                    -(-rate * u).exp_m1()
                }
            }
        }
    }

    /// Mirror image under `x ↦ a + b − x`.
    pub fn reflect(&self, interval: &Interval) -> Self {
        match *self {
            CrossingMeasure::Atom { position } => CrossingMeasure::Atom {
                position: interval.reflect(position),
            },
            CrossingMeasure::Exponential {
                k,
                side,
                mass,
                edge,
                rate,
            } => CrossingMeasure::Exponential {
                k,
                side: side.flip(),
                mass,
                edge: interval.reflect(edge),
                rate,
            },
        }
    }
}

pub fn nu(model: &ModelParams, interval: &Interval, start: f64, k: u32) -> Result<CrossingMeasure> {
    let wh = wiener_hopf(model)?;
    interval.validate()?;
    let side = interval.require_outside(start)?;
    Ok(nu_measure(&wh, interval, start, side, k))
}

fn nu_measure(
    wh: &WienerHopfData,
    interval: &Interval,
    start: f64,
    start_side: Side,
    k: u32,
) -> CrossingMeasure {
    if k == 0 {
        return CrossingMeasure::Atom { position: start };
    }
    let eta = wh.params().eta;
    let dist = interval.distance(start);
    let first = gamma(wh, interval) * (-(-wh.beta * dist).exp_m1());
    // odd crossings land on the far side, even ones back on the start side
    let side = if k % 2 == 1 {
        start_side.flip()
    } else {
        start_side
    };
    let c = factor_c(wh, interval);
    CrossingMeasure::Exponential {
        k,
        side,
        mass: first * c.powi(k as i32 - 1),
        edge: interval.edge(side),
        rate: eta,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HarmonicKind {
    Plus,
    Minus,
    #[serde(alias = "updown")]
    Combined,
}

/// Evaluator for `h₊`, `h₋` and `h = h₊ + C·h₋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicEval {
    pub model: ModelParams,
    pub interval: Interval,
    wh: WienerHopfData,
    pub c: f64,
    /// `C = lim κ(q)/κ̂(q)`; equal to 1 for the symmetric model.
    pub constant: f64,
    /// Coefficient of `(1 − e^{−β·dist})` in `h₊` on the far side (x < a).
    far: f64,
    /// Same coefficient on the near side (x > b), next to `U(x − b)`.
    near: f64,
}

impl HarmonicEval {
    pub fn new(model: &ModelParams, interval: &Interval) -> Result<Self> {
        let wh = wiener_hopf(model)?;
        interval.validate()?;
        let c = factor_c(&wh, interval);
        let beta = wh.beta;
        let scale = model.ladder_scale();
        let geometric = 1.0 - c * c;
        Ok(Self {
            model: *model,
            interval: *interval,
            wh,
            c,
            constant: 1.0,
            far: scale * 2.0 * c / (beta * geometric),
            near: scale * 2.0 * c * c / (beta * geometric),
        })
    }

    pub fn wiener_hopf(&self) -> &WienerHopfData {
        &self.wh
    }

    pub fn beta(&self) -> f64 {
        self.wh.beta
    }

    fn decay(&self, dist: f64) -> f64 {
        -(-self.wh.beta * dist).exp_m1()
    }

    /// `h₊` without the interval check; callers guarantee `x ∉ [a, b]`.
    pub(crate) fn plus_unchecked(&self, x: f64) -> f64 {
        let Interval { a, b } = self.interval;
        if x > b {
            self.wh.potential(x - b) + self.near * self.decay(x - b)
        } else {
            self.far * self.decay(a - x)
        }
    }

    pub(crate) fn minus_unchecked(&self, x: f64) -> f64 {
        self.plus_unchecked(self.interval.reflect(x))
    }

    pub(crate) fn eval_unchecked(&self, kind: HarmonicKind, x: f64) -> f64 {
        match kind {
            HarmonicKind::Plus => self.plus_unchecked(x),
            HarmonicKind::Minus => self.minus_unchecked(x),
            HarmonicKind::Combined => self.plus_unchecked(x) + self.constant * self.minus_unchecked(x),
        }
    }

    pub fn eval(&self, kind: HarmonicKind, x: f64) -> Result<f64> {
        self.interval.require_outside(x)?;
        Ok(self.eval_unchecked(kind, x))
    }

    pub fn h_plus(&self, x: f64) -> Result<f64> {
        self.eval(HarmonicKind::Plus, x)
    }

    pub fn h_minus(&self, x: f64) -> Result<f64> {
        self.eval(HarmonicKind::Minus, x)
    }

    pub fn h(&self, x: f64) -> Result<f64> {
        self.eval(HarmonicKind::Combined, x)
    }

    /// Smallest `K` with `c^{2K} < 1e−12`.
    pub fn default_truncation(&self) -> u32 {
        if self.c <= 0.0 {
            return 0;
        }
        (6.0 * std::f64::consts::LN_10 / self.c.ln().abs()).ceil() as u32
    }

    /// `Σ_{k ≤ K} ∫ U^q(y − b) ν_{·}(dy)` over the crossings that leave the
    /// process above `b`; `q = 0` uses `U` itself.
    fn partial_sum(&self, x: f64, q: f64, terms: u32) -> Result<f64> {
        let side = self.interval.require_outside(x)?;
        let b = self.interval.b;
        let eta = self.model.eta;
        let potential = |u: f64| {
            if q == 0.0 {
                self.wh.potential(u)
            } else {
                self.wh.q_potential(u, q)
            }
        };
        // ∫ U^q(u) η e^{−ηu} du = ∫ e^{−ηu} U^q(du)
        let per_unit_mass = self.wh.q_potential_transform(eta, q);
        let mut total = 0.0;
        for j in 0..=terms {
            let k = match side {
                Side::Above => 2 * j,
                Side::Below => 2 * j + 1,
            };
            total += match nu_measure(&self.wh, &self.interval, x, side, k) {
                CrossingMeasure::Atom { position } => potential(position - b),
                measure => measure.mass() * per_unit_mass,
            };
        }
        Ok(total)
    }

    /// Truncated defining series of `h₊` through index `K`.
    pub fn h_plus_series(&self, x: f64, terms: u32) -> Result<f64> {
        self.partial_sum(x, 0.0, terms)
    }

    /// Truncated series of `h₊^q`, with the q-potential in place of `U`.
    pub fn h_q_plus(&self, x: f64, q: f64, terms: u32) -> Result<f64> {
        check_positive("q", q)?;
        self.partial_sum(x, q, terms)
    }

    /// `κ(q)/κ̂(q)` at small `q`; the limit is the constant `C` in `h`.
    pub fn constant_diagnostic(&self) -> f64 {
        let q = 1e-6;
        // ascending and descending factors share one root pair here
        self.wh.kappa(q) / self.wh.kappa(q)
    }

    /// Bound `h₊(x) ≤ c₁U(x−b)1{x>b} + c₂U(a−x)1{x<a} + c₃` for a given
    /// `α ∈ (γ, 1)`.
    pub fn finiteness_bound(&self, alpha: f64) -> Result<FinitenessBound> {
        let g = gamma(&self.wh, &self.interval);
        if !(alpha > g && alpha < 1.0) {
            return Err(Error::Domain(format!(
                "alpha must lie in (gamma, 1) = ({g}, 1), got {alpha}"
            )));
        }
        // E^x[U(a − ξ_T) 1{ξ_T < a}] = (2c/β)(1 − e^{−β(x−b)})·scale never
        // exceeds its x → ∞ limit, so that limit serves as C(α) for every α.
        let c_alpha = self.model.ladder_scale() * 2.0 * self.c / self.wh.beta;
        let geometric = 1.0 - alpha * alpha;
        Ok(FinitenessBound {
            c1: 1.0 / geometric,
            c2: alpha / geometric,
            c3: c_alpha / (g - alpha) * (1.0 / (1.0 - g) - 1.0 / (1.0 - alpha)),
        })
    }

    pub fn potential(&self, x: f64) -> f64 {
        self.wh.potential(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinitenessBound {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl FinitenessBound {
    pub fn value(&self, eval: &HarmonicEval, x: f64) -> f64 {
        let Interval { a, b } = eval.interval;
        let lead = if x > b {
            self.c1 * eval.potential(x - b)
        } else if x < a {
            self.c2 * eval.potential(a - x)
        } else {
            0.0
        };
        lead + self.c3
    }
}

pub fn h_eval(model: &ModelParams, interval: &Interval, kind: HarmonicKind, x: f64) -> Result<f64> {
    HarmonicEval::new(model, interval)?.eval(kind, x)
}

pub fn h_plus_series(model: &ModelParams, interval: &Interval, x: f64, terms: u32) -> Result<f64> {
    HarmonicEval::new(model, interval)?.h_plus_series(x, terms)
}

pub fn h_q_plus(
    model: &ModelParams,
    interval: &Interval,
    x: f64,
    q: f64,
    terms: u32,
) -> Result<f64> {
    HarmonicEval::new(model, interval)?.h_q_plus(x, q, terms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    // Reference values computed independently at 30 significant digits.
    const C: f64 = 0.063_118_133_468_549_17;
    const H_PLUS_2: f64 = 0.868_143_838_367_911_1;
    const H_MINUS_2: f64 = 0.067_831_541_916_621_95;
    const H_2: f64 = 0.935_975_380_284_533;
    const NU1_MASS: f64 = 0.081_553_712_936_112_57;
    const GAMMA: f64 = 0.107_749_393_659_997_87;

    fn setup() -> (ModelParams, Interval, HarmonicEval) {
        let m = ModelParams::reference(1.0);
        let i = Interval::new(0.0, 1.0).unwrap();
        let e = HarmonicEval::new(&m, &i).unwrap();
        (m, i, e)
    }

    #[test]
    fn crossing_factor_examples() {
        let (m, i, _) = setup();
        assert_relative_eq!(crossing_factor_c(&m, &i).unwrap(), C, max_relative = 1e-14);
        let wide = Interval::new(0.0, 60.0).unwrap();
        assert!(crossing_factor_c(&m, &wide).unwrap() < 1e-25);
        let thin = Interval::new(0.0, 1e-12).unwrap();
        let s = 2f64.sqrt();
        assert_relative_eq!(
            crossing_factor_c(&m, &thin).unwrap(),
            (s - 1.0) / (s + 1.0),
            max_relative = 1e-11
        );
    }

    #[test]
    fn overshoot_examples() {
        let (m, i, _) = setup();
        let law = overshoot_law(&m, &i, -1.0, Direction::Up).unwrap();
        assert_relative_eq!(law.jump_mass(), 0.221_685_975_917_600_16, max_relative = 1e-14);
        assert_relative_eq!(law.creep_mass, 0.778_314_024_082_399_8, max_relative = 1e-14);
        assert_relative_eq!(law.creep_mass + law.density_scale / m.eta, 1.0, epsilon = 1e-15);
        assert_relative_eq!(law.mass_beyond(i.b), NU1_MASS, max_relative = 1e-14);
        let near = overshoot_law(&m, &i, -1e-12, Direction::Up).unwrap();
        assert!(near.density_scale < 1e-11);
        assert!((near.creep_mass - 1.0).abs() < 1e-11);
        assert!(overshoot_law(&m, &i, 2.0, Direction::Up).is_err());
        assert!(overshoot_law(&m, &i, 0.5, Direction::Down).is_err());
        let down = overshoot_law(&m, &i, 2.0, Direction::Down).unwrap();
        assert_relative_eq!(down.jump_mass(), law.jump_mass(), max_relative = 1e-14);
    }

    #[test]
    fn gamma_examples() {
        let (m, i, _) = setup();
        let g = gamma_bound(&m, &i).unwrap();
        assert_relative_eq!(g, GAMMA, max_relative = 1e-14);
        // grid supremum of the jump-over mass approaches γ from below
        let sup = (1..=400)
            .map(|j| {
                let x = -0.1 * j as f64;
                overshoot_law(&m, &i, x, Direction::Up).unwrap().mass_beyond(i.b)
            })
            .fold(0.0, f64::max);
        assert!(sup <= g && g - sup < 1e-12);
        for k in 1..=3 {
            assert!(nu(&m, &i, -1.0, k).unwrap().mass() <= g.powi(k as i32));
        }
        let far = Interval::new(0.0, 80.0).unwrap();
        assert!(gamma_bound(&m, &far).unwrap() < 1e-30);
    }

    #[test]
    fn nu_examples() {
        let (m, i, _) = setup();
        assert_eq!(nu(&m, &i, 2.0, 0).unwrap(), CrossingMeasure::Atom { position: 2.0 });
        let nu1 = nu(&m, &i, -1.0, 1).unwrap();
        let nu3 = nu(&m, &i, -1.0, 3).unwrap();
        assert_relative_eq!(nu1.mass(), NU1_MASS, max_relative = 1e-14);
        assert_relative_eq!(nu3.mass(), 3.249_017_368_633_664_5e-4, max_relative = 1e-13);
        for y in [1.01, 1.5, 3.0, 7.0] {
            assert_relative_eq!(nu3.density(y), C * C * nu1.density(y), max_relative = 1e-13);
        }
        assert!(matches!(nu(&m, &i, 0.5, 1), Err(Error::InsideInterval { .. })));
    }

    #[test]
    fn nu1_density_matches_overshoot_law() {
        let (m, i, _) = setup();
        let law = overshoot_law(&m, &i, -1.3, Direction::Up).unwrap();
        let nu1 = nu(&m, &i, -1.3, 1).unwrap();
        for y in [1.2, 2.0, 4.5] {
            assert_relative_eq!(nu1.density(y), law.density(y), max_relative = 1e-13);
        }
    }

    #[test]
    fn nu_two_by_convolution() {
        // ν₂ from x > b as ∫ ν₁^z(dy) ν₁^x(dz) over z < a, by quadrature
        let (m, i, _) = setup();
        let x = 2.0;
        let nu1 = nu(&m, &i, x, 1).unwrap();
        let y = 1.7;
        let n = 20_000;
        let h = 40.0 / n as f64;
        let mut acc = 0.0;
        for j in 0..n {
            let z = i.a - (j as f64 + 0.5) * h;
            acc += nu(&m, &i, z, 1).unwrap().density(y) * nu1.density(z) * h;
        }
        let nu2 = nu(&m, &i, x, 2).unwrap();
        assert_relative_eq!(nu2.density(y), acc, max_relative = 1e-6);
    }

    #[test]
    fn harmonic_examples() {
        let (_, _, e) = setup();
        assert_relative_eq!(e.h_plus(2.0).unwrap(), H_PLUS_2, max_relative = 1e-14);
        assert_relative_eq!(e.h_minus(2.0).unwrap(), H_MINUS_2, max_relative = 1e-13);
        assert_relative_eq!(e.h(2.0).unwrap(), H_2, max_relative = 1e-14);
        assert_eq!(e.h(2.0).unwrap(), e.h_plus(2.0).unwrap() + e.h_minus(2.0).unwrap());
        assert_relative_eq!(e.h_plus(-1.0).unwrap(), H_MINUS_2, max_relative = 1e-13);
        assert!(e.h_plus(-1e-15).unwrap() < 1e-14);
        assert!(e.h_plus(1.0 + 1e-15).unwrap() < 1e-14);
        assert!(e.h_plus(0.0).is_err());
        assert!(e.h_minus(1.0).is_err());
        assert!(e.h(0.5).is_err());
    }

    #[test]
    fn series_examples() {
        let (_, _, e) = setup();
        assert_relative_eq!(e.h_plus_series(2.0, 0).unwrap(), 0.863_862_438_051_840_3, max_relative = 1e-14);
        assert_relative_eq!(
            e.h_plus_series(-1.0, 0).unwrap(),
            0.067_561_307_920_039_9,
            max_relative = 1e-13
        );
        let mut prev = 0.0;
        for k in 0..8 {
            let s = e.h_plus_series(2.0, k).unwrap();
            assert!(s >= prev);
            assert!(H_PLUS_2 - s <= C.powi(2 * k as i32) * H_PLUS_2 + 1e-15);
            prev = s;
        }
        let k = e.default_truncation();
        assert!(C.powi(2 * k as i32) < 1e-12);
        assert_relative_eq!(e.h_plus_series(2.0, k).unwrap(), H_PLUS_2, max_relative = 1e-13);
    }

    #[test]
    fn q_series_examples() {
        let (_, _, e) = setup();
        assert_relative_eq!(e.h_q_plus(2.0, 0.25, 0).unwrap(), 0.714_598_481_137_773_1, max_relative = 1e-12);
        let q_small = e.h_q_plus(2.0, 1e-12, 3).unwrap();
        assert_relative_eq!(q_small, e.h_plus_series(2.0, 3).unwrap(), max_relative = 1e-5);
        for x in [-3.0, -0.5, 1.5, 4.0] {
            let mut last = f64::INFINITY;
            for q in [1e-4, 1e-2, 0.1, 1.0] {
                let v = e.h_q_plus(x, q, 4).unwrap();
                assert!(v <= e.h_plus_series(x, 4).unwrap());
                assert!(v <= last);
                last = v;
            }
        }
        assert!(e.h_q_plus(2.0, 0.0, 1).is_err());
    }

    #[test]
    fn constant_is_one() {
        let (_, _, e) = setup();
        assert_eq!(e.constant, 1.0);
        assert_relative_eq!(e.constant_diagnostic(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn finiteness_bound_on_grid() {
        let (_, _, e) = setup();
        let bound = e.finiteness_bound(0.5).unwrap();
        for j in 0..50 {
            let x = if j % 2 == 0 { 1.0 + 0.4 * (j + 1) as f64 } else { -0.4 * (j + 1) as f64 };
            assert!(e.h_plus(x).unwrap() <= bound.value(&e, x));
        }
        assert!(e.finiteness_bound(0.05).is_err());
    }

    #[test]
    fn linear_growth_at_infinity() {
        let (m, _, e) = setup();
        let slope = m.eta / e.beta();
        for x in [1e6, -1e6] {
            assert_relative_eq!(e.h(x).unwrap() / x.abs(), slope, max_relative = 1e-5);
        }
        assert_relative_eq!(e.h_plus(1e7).unwrap() / 1e7, slope, max_relative = 1e-6);
    }

    #[test]
    fn generalized_scale_keeps_ratio() {
        // only the ladder normalization changes with σ; the ratio h₊/h does not
        let i = Interval::new(0.0, 1.0).unwrap();
        let a = HarmonicEval::new(&ModelParams::new(1.0, 0.5, 1.0, 0.0).unwrap(), &i).unwrap();
        let b = HarmonicEval::new(&ModelParams::new(2.0, 2.0, 1.0, 0.0).unwrap(), &i).unwrap();
        assert_relative_eq!(a.beta(), b.beta(), max_relative = 1e-15);
        for x in [-2.0, 3.0] {
            let ra = a.h_plus(x).unwrap() / a.h(x).unwrap();
            let rb = b.h_plus(x).unwrap() / b.h(x).unwrap();
            assert_relative_eq!(ra, rb, max_relative = 1e-13);
        }
    }

    proptest! {
        #[test]
        fn series_converges_to_closed_form(u in 0.001f64..20.0, below in any::<bool>()) {
            let (_, i, e) = setup();
            let x = if below { i.a - u } else { i.b + u };
            let closed = e.h_plus(x).unwrap();
            let series = e.h_plus_series(x, 10).unwrap();
            prop_assert!((series - closed).abs() <= C.powi(20) * closed + 1e-12);
        }

        #[test]
        fn geometric_claims(u in 0.001f64..10.0, k in 0u32..4) {
            let (m, i, _) = setup();
            let below = i.a - u;
            let above = i.b + u;
            let n1 = nu(&m, &i, below, 1).unwrap();
            let n2k1 = nu(&m, &i, below, 2 * k + 1).unwrap();
            let a2 = nu(&m, &i, above, 2).unwrap();
            let a2k2 = nu(&m, &i, above, 2 * k + 2).unwrap();
            let f = C.powi(2 * k as i32);
            for y in [1.3, 2.0, 6.0] {
                prop_assert!((n2k1.density(y) - f * n1.density(y)).abs() <= 1e-14 * n1.density(y));
                prop_assert!((a2k2.density(y) - f * a2.density(y)).abs() <= 1e-14 * a2.density(y));
            }
        }

        #[test]
        fn reflection_symmetry(u in 0.001f64..15.0, k in 0u32..5, below in any::<bool>()) {
            let (m, i, e) = setup();
            let x = if below { i.a - u } else { i.b + u };
            let xr = i.reflect(x);
            let plus = e.h_plus(x).unwrap();
            prop_assert!((plus - e.h_minus(xr).unwrap()).abs() <= 1e-10 * plus);
            let lhs = nu(&m, &i, x, k).unwrap().reflect(&i);
            let rhs = nu(&m, &i, xr, k).unwrap();
            prop_assert_eq!(lhs.k(), rhs.k());
            prop_assert_eq!(lhs.side(&i), rhs.side(&i));
            prop_assert!((lhs.mass() - rhs.mass()).abs() <= 1e-10 * rhs.mass());
            for y in [-3.0, -0.2, 1.4, 5.0] {
                prop_assert!((lhs.density(y) - rhs.density(y)).abs() <= 1e-10 * rhs.density(y).max(1e-300));
            }
        }

        #[test]
        fn harmonic_functions_positive(u in 1e-6f64..50.0, below in any::<bool>()) {
            let (_, i, e) = setup();
            let x = if below { i.a - u } else { i.b + u };
            prop_assert!(e.h_plus(x).unwrap() > 0.0);
            prop_assert!(e.h_minus(x).unwrap() > 0.0);
            prop_assert!(e.h(x).unwrap() > 0.0);
        }
    }
}
