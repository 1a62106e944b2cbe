//! Exact simulation of the jump-diffusion killed on entering `[a, b]`.
//!
//! Between jumps the path is Brownian with drift. A segment is simulated
//! exactly at its endpoint and killed by a Bernoulli draw with the
//! Brownian-bridge crossing probability, so hitting of the interval is
//! detected without discretization bias. Jumps landing in `[a, b]` kill
//! immediately; jumps over it are recorded as crossings.
//!
//! Far from the interval the walker may take a single exact Lévy increment
//! ("leap") over a span short enough that a Chernoff bound on the running
//! extremum keeps the chance of reaching the interval below `1e−12`.

use std::io::Write;
use std::ops::ControlFlow;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::closed_form::{nu, CrossingMeasure};
use crate::error::{check_positive, Error, Result};
use crate::model::{Interval, ModelParams, Side};
use crate::rng::{derive_seed, fold_paths, stream, PathRng};
use crate::stats::{ks_critical_value, ks_p_value, ks_statistic, EstimatorResult, Moments};

/// `ln(1/ε)` for the per-leap failure probability `ε = 1e−12`.
const LEAP_LOG_INV_EPS: f64 = 27.631_021_115_928_547;
/// Leap only when it saves at least this many expected jumps.
const LEAP_MIN_JUMPS: f64 = 4.0;
/// Minimum number of conditioned samples for a crossing-law comparison.
pub const MIN_CROSSING_SAMPLES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub n_paths: usize,
    pub bridge_correction: bool,
    pub far_field_leaps: bool,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            horizon: 100.0,
            seed: 1,
            n_paths: 100_000,
            bridge_correction: true,
            far_field_leaps: true,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("dt", self.dt)?;
        check_positive("horizon", self.horizon)?;
        if self.dt > self.horizon {
            return Err(Error::Config(format!(
                "dt = {} exceeds horizon = {}",
                self.dt, self.horizon
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn with_paths(self, n_paths: usize) -> Self {
        Self { n_paths, ..self }
    }

    pub fn with_horizon(self, horizon: f64) -> Self {
        Self { horizon, ..self }
    }
}

/// `P(Brownian bridge from x0 to x1 over dt touches level)` for a bridge
/// with volatility `sigma`, both endpoints on `side` of the level.
pub fn bridge_cross_prob(
    x0: f64,
    x1: f64,
    dt: f64,
    level: f64,
    side: Side,
    sigma: f64,
) -> Result<f64> {
    check_positive("dt", dt)?;
    check_positive("sigma", sigma)?;
    let (d0, d1) = match side {
        Side::Above => (x0 - level, x1 - level),
        Side::Below => (level - x0, level - x1),
    };
    if d0 < 0.0 || d1 < 0.0 {
        return Err(Error::Domain(format!(
            "bridge endpoints ({x0}, {x1}) are not {side:?} level {level}"
        )));
    }
    Ok(bridge_prob(d0, d1, dt, sigma * sigma))
}

#[inline]
fn bridge_prob(d0: f64, d1: f64, dt: f64, sigma_sq: f64) -> f64 {
    (-2.0 * d0 * d1 / (sigma_sq * dt)).exp().min(1.0)
}

#[derive(Debug, Clone)]
struct LeapRule {
    /// `(θ, log E[e^{−θξ₁}])` guarding downward excursions.
    down: Vec<(f64, f64)>,
    /// `(θ, log E[e^{θξ₁}])` guarding upward excursions.
    up: Vec<(f64, f64)>,
    min_span: f64,
}

impl LeapRule {
    fn new(model: &ModelParams) -> Self {
        let thetas = (1..=9).map(|i| 0.1 * i as f64 * model.eta);
        Self {
            down: thetas.clone().map(|t| (t, model.log_mgf(-t))).collect(),
            up: thetas.map(|t| (t, model.log_mgf(t))).collect(),
            min_span: LEAP_MIN_JUMPS / model.lambda,
        }
    }

    /// Longest span over which `P(excursion of size dist toward the
    /// interval) ≤ ε`, via Doob's maximal inequality applied to
    /// `e^{∓θξ}`.
    fn span(&self, dist: f64, side: Side) -> f64 {
        let table = match side {
            Side::Above => &self.down,
            Side::Below => &self.up,
        };
        let mut best = 0.0f64;
        for &(theta, phi) in table {
            let room = theta * dist - LEAP_LOG_INV_EPS;
            if room <= 0.0 {
                continue;
            }
            let span = if phi <= 0.0 { f64::INFINITY } else { room / phi };
            best = best.max(span);
        }
        best
    }
}

/// Shared, immutable simulation context.
#[derive(Debug, Clone)]
pub(crate) struct Engine {
    pub model: ModelParams,
    pub interval: Interval,
    sigma_sq: f64,
    bridge: bool,
    dt: f64,
    leap: Option<LeapRule>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Event {
    /// End of a diffusive segment without a jump.
    Step { t: f64, x: f64 },
    Jump { t: f64, pre: f64, post: f64 },
    Crossing { index: u32, t: f64, pre: f64, post: f64 },
    Killed { t: f64 },
    Leap { t: f64, x: f64 },
}

impl Engine {
    pub fn new(model: &ModelParams, interval: &Interval, config: &PathConfig) -> Result<Self> {
        model.validate()?;
        interval.validate()?;
        config.validate()?;
        Ok(Self {
            model: *model,
            interval: *interval,
            sigma_sq: model.sigma * model.sigma,
            bridge: config.bridge_correction,
            dt: config.dt,
            leap: config.far_field_leaps.then(|| LeapRule::new(model)),
        })
    }

    pub fn without_leaps(mut self) -> Self {
        self.leap = None;
        self
    }

    #[inline]
    fn interarrival<R: Rng>(&self, rng: &mut R) -> f64 {
        let e: f64 = Exp1.sample(rng);
        e / self.model.lambda
    }

    #[inline]
    fn jump<R: Rng>(&self, rng: &mut R) -> f64 {
        let e: f64 = Exp1.sample(rng);
        let mag = e / self.model.eta;
        if rng.random::<bool>() {
            mag
        } else {
            -mag
        }
    }

    /// Exact `ξ_{t+span} − ξ_t`.
    fn increment<R: Rng>(&self, span: f64, rng: &mut R) -> f64 {
        let m = &self.model;
        let z: f64 = StandardNormal.sample(rng);
        let mut inc = m.drift * span + m.sigma * span.sqrt() * z;
        let count: f64 = Poisson::new(m.lambda * span)
            .expect("positive Poisson mean")
            .sample(rng);
        if count > 0.0 {
            // a sum of n Laplace(η) marks is a difference of two Gamma(n, 1/η)
            let g = Gamma::new(count, 1.0 / m.eta).expect("valid gamma");
            inc += g.sample(rng) - g.sample(rng);
        }
        inc
    }

    fn next_grid(&self, t: f64) -> f64 {
        let mut g = ((t / self.dt).floor() + 1.0) * self.dt;
        if g <= t {
            g += self.dt;
        }
        g
    }
}

/// A single killed path, advanced piecewise.
#[derive(Debug, Clone)]
pub(crate) struct Walker {
    pub x: f64,
    pub t: f64,
    pub alive: bool,
    pub side: Side,
    pub crossings: u32,
    next_jump: f64,
}

impl Walker {
    pub fn start<R: Rng>(engine: &Engine, x: f64, rng: &mut R) -> Result<Self> {
        let side = engine.interval.require_outside(x)?;
        Ok(Self::at(engine, x, side, rng))
    }

    pub fn at<R: Rng>(engine: &Engine, x: f64, side: Side, rng: &mut R) -> Self {
        Self {
            x,
            t: 0.0,
            alive: true,
            side,
            crossings: 0,
            next_jump: engine.interarrival(rng),
        }
    }

    /// Run until `target`, death, or until `sink` breaks.
    pub fn advance<R, S>(
        &mut self,
        eng: &Engine,
        target: f64,
        rng: &mut R,
        sink: &mut S,
    ) -> ControlFlow<()>
    where
        R: Rng,
        S: FnMut(&Event) -> ControlFlow<()>,
    {
        let iv = eng.interval;
        while self.alive && self.t < target {
            if let Some(rule) = &eng.leap {
                let span = rule.span(iv.distance(self.x), self.side);
                if span >= rule.min_span {
                    let span = span.min(target - self.t);
                    self.x += eng.increment(span, rng);
                    self.t += span;
                    self.next_jump = self.t + eng.interarrival(rng);
                    if iv.side(self.x) != Some(self.side) {
                        // probability below 1e−12 per leap
                        self.alive = false;
                        return sink(&Event::Killed { t: self.t });
                    }
                    sink(&Event::Leap {
                        t: self.t,
                        x: self.x,
                    })?;
                    continue;
                }
            }

            let jump_due = self.next_jump <= target;
            let mut end = if jump_due { self.next_jump } else { target };
            let mut is_jump = jump_due;
            if !eng.bridge {
                let g = eng.next_grid(self.t);
                if g < end {
                    end = g;
                    is_jump = false;
                }
            }
            let span = end - self.t;
            let z: f64 = StandardNormal.sample(rng);
            let x1 = self.x + eng.model.drift * span + eng.model.sigma * span.sqrt() * z;
            let killed = match iv.side(x1) {
                Some(s) if s == self.side => {
                    eng.bridge && {
                        let level = iv.edge(self.side);
                        let (d0, d1) = match s {
                            Side::Above => (self.x - level, x1 - level),
                            Side::Below => (level - self.x, level - x1),
                        };
                        rng.random::<f64>() < bridge_prob(d0, d1, span, eng.sigma_sq)
                    }
                }
                // a continuous path cannot leave its side without touching [a, b]
                _ => true,
            };
            self.t = end;
            self.x = x1;
            if killed {
                self.alive = false;
                return sink(&Event::Killed { t: end });
            }
            if !is_jump {
                sink(&Event::Step { t: end, x: x1 })?;
                continue;
            }

            let pre = self.x;
            let post = pre + eng.jump(rng);
            self.next_jump = end + eng.interarrival(rng);
            self.x = post;
            match iv.side(post) {
                None => {
                    self.alive = false;
                    sink(&Event::Jump { t: end, pre, post })?;
                    return sink(&Event::Killed { t: end });
                }
                Some(s) if s != self.side => {
                    self.side = s;
                    self.crossings += 1;
                    sink(&Event::Crossing {
                        index: self.crossings,
                        t: end,
                        pre,
                        post,
                    })?;
                }
                Some(_) => sink(&Event::Jump { t: end, pre, post })?,
            }
        }
        ControlFlow::Continue(())
    }

    /// Redraw the pending jump time, e.g. after a particle is duplicated.
    pub fn refresh<R: Rng>(&mut self, engine: &Engine, rng: &mut R) {
        self.next_jump = self.t + engine.interarrival(rng);
    }

    /// Advance without observing events.
    pub fn run_to<R: Rng>(&mut self, eng: &Engine, target: f64, rng: &mut R) {
        let _ = self.advance(eng, target, rng, &mut |_| ControlFlow::Continue(()));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossingRecord {
    pub time: f64,
    pub position: f64,
}

/// A recorded path. `pre_jump_values[i]` holds `ξ_{t−}` when `times[i]` is
/// a jump time. A hit inside a diffusive segment is reported at the end of
/// that segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub pre_jump_values: Vec<Option<f64>>,
    pub hit: bool,
    pub hit_time: Option<f64>,
    pub crossings: Vec<CrossingRecord>,
    pub k_dagger: Option<u32>,
}

pub fn simulate_path(
    model: &ModelParams,
    interval: &Interval,
    start: f64,
    config: &PathConfig,
) -> Result<Trajectory> {
    simulate_path_indexed(model, interval, start, config, 0)
}

/// Simulate path number `index` of the stream family keyed by `config.seed`,
/// recording grid times, jump times and crossings.
pub fn simulate_path_indexed(
    model: &ModelParams,
    interval: &Interval,
    start: f64,
    config: &PathConfig,
    index: u64,
) -> Result<Trajectory> {
    let eng = Engine::new(model, interval, config)?.without_leaps();
    let mut rng = stream(config.seed, index);
    let mut walker = Walker::start(&eng, start, &mut rng)?;
    let mut traj = Trajectory {
        times: vec![0.0],
        values: vec![start],
        pre_jump_values: vec![None],
        hit: false,
        hit_time: None,
        crossings: Vec::new(),
        k_dagger: None,
    };
    let mut sink = |e: &Event| {
        match *e {
            Event::Step { t, x } | Event::Leap { t, x } => {
                traj.times.push(t);
                traj.values.push(x);
                traj.pre_jump_values.push(None);
            }
            Event::Jump { t, pre, post } => {
                traj.times.push(t);
                traj.values.push(post);
                traj.pre_jump_values.push(Some(pre));
            }
            Event::Crossing { t, pre, post, .. } => {
                traj.times.push(t);
                traj.values.push(post);
                traj.pre_jump_values.push(Some(pre));
                traj.crossings.push(CrossingRecord {
                    time: t,
                    position: post,
                });
            }
            Event::Killed { t } => {
                traj.hit = true;
                traj.hit_time = Some(t);
            }
        }
        ControlFlow::Continue(())
    };
    let mut k = 1u64;
    while walker.alive && walker.t < config.horizon {
        let target = (k as f64 * config.dt).min(config.horizon);
        let _ = walker.advance(&eng, target, &mut rng, &mut sink);
        k += 1;
    }
    if traj.hit {
        traj.k_dagger = Some(traj.crossings.len() as u32 + 1);
    }
    Ok(traj)
}

/// CSV dump with columns `path_id,t,value,is_jump,killed`.
pub fn write_paths_csv<W: Write>(mut out: W, paths: &[Trajectory]) -> Result<()> {
    writeln!(out, "path_id,t,value,is_jump,killed")?;
    for (id, p) in paths.iter().enumerate() {
        let last = p.times.len() - 1;
        for i in 0..p.times.len() {
            writeln!(
                out,
                "{id},{},{},{},{}",
                crate::fmt17(p.times[i]),
                crate::fmt17(p.values[i]),
                u8::from(p.pre_jump_values[i].is_some()),
                u8::from(p.hit && i == last),
            )?;
        }
    }
    Ok(())
}

/// Estimates over a partition of the surviving mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SideSplit {
    pub total: EstimatorResult,
    pub above: EstimatorResult,
    pub below: EstimatorResult,
}

#[derive(Default, Clone, Copy)]
struct SplitAcc {
    total: Moments,
    above: Moments,
    below: Moments,
}

impl SplitAcc {
    fn push(&mut self, alive: bool, side: Side) {
        let up = alive && side == Side::Above;
        let down = alive && side == Side::Below;
        self.total.push(f64::from(u8::from(alive)));
        self.above.push(f64::from(u8::from(up)));
        self.below.push(f64::from(u8::from(down)));
    }

    fn merge(&mut self, o: SplitAcc) {
        self.total.merge(o.total);
        self.above.merge(o.above);
        self.below.merge(o.below);
    }

    fn result(&self) -> SideSplit {
        SideSplit {
            total: self.total.result(),
            above: self.above.result(),
            below: self.below.result(),
        }
    }
}

/// `P^x(t < T)`, `P^x(t < T, ξ_t > b)` and `P^x(t < T, ξ_t < a)`.
pub fn estimate_survival(
    model: &ModelParams,
    interval: &Interval,
    start: f64,
    t: f64,
    config: &PathConfig,
) -> Result<SideSplit> {
    let eng = Engine::new(model, interval, config)?;
    let side = interval.require_outside(start)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be finite and >= 0, got {t}")));
    }
    let n = config.n_paths as u64;
    if t == 0.0 {
        let one = EstimatorResult::exact(1.0, n);
        let zero = EstimatorResult::exact(0.0, n);
        return Ok(match side {
            Side::Above => SideSplit {
                total: one,
                above: one,
                below: zero,
            },
            Side::Below => SideSplit {
                total: one,
                above: zero,
                below: one,
            },
        });
    }
    let acc = fold_paths(
        config.n_paths,
        SplitAcc::default,
        |acc, i| {
            let mut rng = stream(config.seed, i);
            let mut w = Walker::at(&eng, start, side, &mut rng);
            w.run_to(&eng, t, &mut rng);
            acc.push(w.alive, w.side);
        },
        SplitAcc::merge,
    );
    Ok(acc.result())
}

/// `P^x(e_q < T)` split by the side of `ξ_{e_q}`, with `e_q ~ Exp(q)`
/// independent of the path.
pub fn estimate_clock_event(
    model: &ModelParams,
    interval: &Interval,
    start: f64,
    q: f64,
    config: &PathConfig,
) -> Result<SideSplit> {
    let eng = Engine::new(model, interval, config)?;
    let side = interval.require_outside(start)?;
    check_positive("q", q)?;
    let acc = fold_paths(
        config.n_paths,
        SplitAcc::default,
        |acc, i| {
            let mut rng = stream(config.seed, i);
            let clock: f64 = Exp1.sample(&mut rng);
            let mut w = Walker::at(&eng, start, side, &mut rng);
            w.run_to(&eng, clock / q, &mut rng);
            acc.push(w.alive, w.side);
        },
        SplitAcc::merge,
    );
    Ok(acc.result())
}

/// `E^x[1{t < T} f(ξ_t)]`.
pub fn expect_killed<F>(
    model: &ModelParams,
    interval: &Interval,
    start: f64,
    t: f64,
    config: &PathConfig,
    f: F,
) -> Result<EstimatorResult>
where
    F: Fn(f64) -> f64 + Sync + Send,
{
    let eng = Engine::new(model, interval, config)?;
    let side = interval.require_outside(start)?;
    let acc = fold_paths(
        config.n_paths,
        Moments::default,
        |acc, i| {
            let mut rng = stream(config.seed, i);
            let mut w = Walker::at(&eng, start, side, &mut rng);
            w.run_to(&eng, t, &mut rng);
            acc.push(if w.alive { f(w.x) } else { 0.0 });
        },
        Moments::merge,
    );
    Ok(acc.result())
}

/// Positions right after the first `max_k` crossings, per path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingSample {
    pub start: f64,
    pub n_paths: u64,
    /// `positions[k − 1]` holds `ξ_{τ_k}` for every path with `K† > k`.
    pub positions: Vec<Vec<f64>>,
    /// Paths still alive at the horizon with fewer than `max_k` crossings.
    pub unresolved: u64,
}

impl CrossingSample {
    /// Empirical `ν_k` mass.
    pub fn mass(&self, k: u32) -> EstimatorResult {
        let hits = self.positions[k as usize - 1].len() as f64;
        let n = self.n_paths as f64;
        let p = hits / n;
        EstimatorResult {
            mean: p,
            stderr: (p * (1.0 - p) / n).sqrt(),
            n: self.n_paths,
        }
    }

    /// `mass(k_hi)/mass(k_lo)` for `k_lo < k_hi`, as the binomial fraction
    /// of paths crossing `k_lo` times that go on to cross `k_hi` times.
    pub fn mass_ratio(&self, k_hi: u32, k_lo: u32) -> EstimatorResult {
        let lo = self.positions[k_lo as usize - 1].len() as f64;
        let hi = self.positions[k_hi as usize - 1].len() as f64;
        let r = if lo > 0.0 { hi / lo } else { f64::NAN };
        EstimatorResult {
            mean: r,
            stderr: (r * (1.0 - r) / lo).sqrt(),
            n: lo as u64,
        }
    }
}

pub fn sample_crossings(
    model: &ModelParams,
    interval: &Interval,
    start: f64,
    max_k: u32,
    config: &PathConfig,
) -> Result<CrossingSample> {
    if max_k == 0 {
        return Err(Error::Domain("crossing index must be >= 1".into()));
    }
    let eng = Engine::new(model, interval, config)?;
    let side = interval.require_outside(start)?;
    let empty = || CrossingSample {
        start,
        n_paths: 0,
        positions: vec![Vec::new(); max_k as usize],
        unresolved: 0,
    };
    Ok(fold_paths(
        config.n_paths,
        empty,
        |acc, i| {
            let mut rng = stream(config.seed, i);
            let mut w = Walker::at(&eng, start, side, &mut rng);
            let _ = w.advance(&eng, config.horizon, &mut rng, &mut |e| match *e {
                Event::Crossing { index, post, .. } => {
                    acc.positions[index as usize - 1].push(post);
                    if index >= max_k {
                        ControlFlow::Break(())
                    } else {
                        ControlFlow::Continue(())
                    }
                }
                _ => ControlFlow::Continue(()),
            });
            acc.n_paths += 1;
            if w.alive && w.crossings < max_k {
                acc.unresolved += 1;
            }
        },
        |acc, part| {
            acc.n_paths += part.n_paths;
            acc.unresolved += part.unresolved;
            for (dst, src) in acc.positions.iter_mut().zip(part.positions) {
                dst.extend(src);
            }
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingLawEstimate {
    pub k: u32,
    pub mass: EstimatorResult,
    pub expected: CrossingMeasure,
    pub samples: usize,
    pub ks_distance: f64,
    /// α = 0.01 critical value for `samples` observations.
    pub ks_critical: f64,
    pub ks_p_value: f64,
    pub unresolved: u64,
}

/// Compare the empirical law of `ξ_{τ_k}` on `{K† > k}` with the
/// parametric `ν_k`: mass, and KS distance of the normalized law.
pub fn empirical_crossing_law(
    model: &ModelParams,
    interval: &Interval,
    start: f64,
    k: u32,
    config: &PathConfig,
) -> Result<CrossingLawEstimate> {
    let sample = sample_crossings(model, interval, start, k, config)?;
    crossing_law_from_sample(model, interval, &sample, k)
}

pub fn crossing_law_from_sample(
    model: &ModelParams,
    interval: &Interval,
    sample: &CrossingSample,
    k: u32,
) -> Result<CrossingLawEstimate> {
    let expected = nu(model, interval, sample.start, k)?;
    let positions = &sample.positions[k as usize - 1];
    if positions.len() < MIN_CROSSING_SAMPLES {
        return Err(Error::InsufficientSamples {
            got: positions.len(),
            need: MIN_CROSSING_SAMPLES,
        });
    }
    let side = expected.side(interval);
    let edge = interval.edge(side);
    let mut excess: Vec<f64> = positions
        .iter()
        .map(|&y| match side {
            Side::Above => y - edge,
            Side::Below => edge - y,
        })
        .collect();
    let d = ks_statistic(&mut excess, |u| expected.conditional_excess_cdf(u));
    let m = excess.len();
    Ok(CrossingLawEstimate {
        k,
        mass: sample.mass(k),
        expected,
        samples: m,
        ks_distance: d,
        ks_critical: ks_critical_value(0.01, m),
        ks_p_value: ks_p_value(d, m),
        unresolved: sample.unresolved,
    })
}

/// Both sides of the strong Markov identity at crossing `j`:
/// `∫ P^y(s < next passage) ν_j(dy)` (fresh paths from each `ξ_{τ_j}`) and
/// `P^x(s < τ_{j+1} − τ_j, K† ≥ j+1)` (the same path continued), on
/// independent seeds.
pub fn markov_identity(
    model: &ModelParams,
    interval: &Interval,
    start: f64,
    j: u32,
    s: f64,
    config: &PathConfig,
) -> Result<(EstimatorResult, EstimatorResult)> {
    let eng = Engine::new(model, interval, config)?;
    let side = interval.require_outside(start)?;
    check_positive("s", s)?;
    let reach = |w: &mut Walker, rng: &mut PathRng| -> bool {
        if j == 0 {
            return true;
        }
        let flow = w.advance(&eng, config.horizon, rng, &mut |e| match *e {
            Event::Crossing { index, .. } if index == j => ControlFlow::Break(()),
            _ => ControlFlow::Continue(()),
        });
        flow.is_break()
    };
    let fresh_seed = derive_seed(config.seed, 0xF8E5);
    let lhs = fold_paths(
        config.n_paths,
        Moments::default,
        |acc, i| {
            let mut rng = stream(fresh_seed, i);
            let mut w = Walker::at(&eng, start, side, &mut rng);
            let ok = reach(&mut w, &mut rng) && {
                let mut fresh = Walker::at(&eng, w.x, w.side, &mut rng);
                let _ = fresh.advance(&eng, s, &mut rng, &mut |e| match e {
                    Event::Crossing { .. } => ControlFlow::Break(()),
                    _ => ControlFlow::Continue(()),
                });
                fresh.alive && fresh.crossings == 0
            };
            acc.push(f64::from(u8::from(ok)));
        },
        Moments::merge,
    );
    let rhs = fold_paths(
        config.n_paths,
        Moments::default,
        |acc, i| {
            let mut rng = stream(config.seed, i);
            let mut w = Walker::at(&eng, start, side, &mut rng);
            let ok = reach(&mut w, &mut rng) && {
                let until = w.t + s;
                let _ = w.advance(&eng, until, &mut rng, &mut |e| match e {
                    Event::Crossing { .. } => ControlFlow::Break(()),
                    _ => ControlFlow::Continue(()),
                });
                w.alive && w.crossings == j
            };
            acc.push(f64::from(u8::from(ok)));
        },
        Moments::merge,
    );
    Ok((lhs.result(), rhs.result()))
}

/// Root `R ∈ (0, η)` of `log E[e^{−Rξ₁}] = 0` for an upward-drifting model;
/// `P^x(ξ ever drops by d) ≤ e^{−Rd}`.
pub fn lundberg_exponent(model: &ModelParams) -> Result<f64> {
    model.validate()?;
    if !(model.drift > 0.0) {
        return Err(Error::Domain(format!(
            "avoidance needs a positive drift, got {}",
            model.drift
        )));
    }
    // log_mgf(−θ)/θ is increasing from −drift to +∞ on (0, η)
    let g = |theta: f64| model.log_mgf(-theta) / theta;
    let (mut lo, mut hi) = (0.0, model.eta);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= 0.0 || g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Horizon with `drift·H ≥ distance + 30·√(Var ξ₁ · H)`.
pub fn avoidance_horizon(model: &ModelParams, interval: &Interval, start: f64) -> f64 {
    let dist = (interval.b - start).max(0.0) + interval.width();
    let s = 30.0 * model.variance_rate().sqrt();
    // drift·r² − s·r − dist = 0 with r = √H
    let r = (s + (s * s + 4.0 * model.drift * dist).sqrt()) / (2.0 * model.drift);
    r * r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AvoidanceEstimate {
    pub survival: EstimatorResult,
    pub lundberg_exponent: f64,
    /// Paths above `b` by this distance are declared survivors.
    pub stop_distance: f64,
    pub horizon: f64,
    /// Paths still undecided at the horizon (counted as survivors).
    pub capped: u64,
    /// Upper bound on `|E[estimate] − ℓ(x)|`.
    pub residual_bound: f64,
}

/// Per-path probability of returning after a path is declared a survivor.
const AVOIDANCE_EPS: f64 = 1e-7;

/// `ℓ(x) = P^x(T_{[a,b]} = ∞)` for an upward-drifting model.
pub fn estimate_avoidance(
    model: &ModelParams,
    interval: &Interval,
    start: f64,
    config: &PathConfig,
) -> Result<AvoidanceEstimate> {
    let r = lundberg_exponent(model)?;
    let eng = Engine::new(model, interval, config)?;
    let side = interval.require_outside(start)?;
    let stop = -AVOIDANCE_EPS.ln() / r;
    let b = interval.b;
    let horizon = config.horizon;
    let (moments, capped) = fold_paths(
        config.n_paths,
        || (Moments::default(), 0u64),
        |acc, i| {
            let mut rng = stream(config.seed, i);
            let mut w = Walker::at(&eng, start, side, &mut rng);
            let decided = w
                .advance(&eng, horizon, &mut rng, &mut |e| match *e {
                    Event::Step { x, .. } | Event::Leap { x, .. } | Event::Jump { post: x, .. }
                    | Event::Crossing { post: x, .. }
                        if x - b >= stop =>
                    {
                        ControlFlow::Break(())
                    }
                    _ => ControlFlow::Continue(()),
                })
                .is_break();
            if w.alive && !decided {
                acc.1 += 1;
            }
            acc.0.push(f64::from(u8::from(w.alive)));
        },
        |acc, part| {
            acc.0.merge(part.0);
            acc.1 += part.1;
        },
    );
    let survival = moments.result();
    Ok(AvoidanceEstimate {
        survival,
        lundberg_exponent: r,
        stop_distance: stop,
        horizon,
        capped,
        residual_bound: AVOIDANCE_EPS + capped as f64 / survival.n as f64,
    })
}

/// `ℓ̂` on a grid, anchored by `ℓ(a) = ℓ(b) = 0` and interpolated linearly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvoidanceProfile {
    pub interval: Interval,
    /// Grid points above `b`, ascending.
    pub above: Vec<(f64, EstimatorResult)>,
    /// Grid points below `a`, descending.
    pub below: Vec<(f64, EstimatorResult)>,
}

impl AvoidanceProfile {
    pub fn len(&self) -> usize {
        self.above.len() + self.below.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Interpolation weights `(node index, weight)`; node indices run over
    /// `above` then `below`. Beyond the outermost node the last value is
    /// held constant.
    fn weights(&self, y: f64) -> [(usize, f64); 2] {
        let (nodes, edge, offset, dist) = if y > self.interval.b {
            (&self.above, self.interval.b, 0, y - self.interval.b)
        } else {
            (&self.below, self.interval.a, self.above.len(), self.interval.a - y)
        };
        let pos = |i: usize| (nodes[i].0 - edge).abs();
        let idx = (0..nodes.len()).find(|&i| pos(i) >= dist);
        match idx {
            None => [(offset + nodes.len() - 1, 1.0), (offset, 0.0)],
            Some(0) => [(offset, dist / pos(0)), (offset, 0.0)],
            Some(i) => {
                let (lo, hi) = (pos(i - 1), pos(i));
                let w = (dist - lo) / (hi - lo);
                [(offset + i - 1, 1.0 - w), (offset + i, w)]
            }
        }
    }

    fn node(&self, i: usize) -> &EstimatorResult {
        if i < self.above.len() {
            &self.above[i].1
        } else {
            &self.below[i - self.above.len()].1
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        if self.interval.contains(y) {
            return 0.0;
        }
        self.weights(y)
            .iter()
            .map(|&(i, w)| w * self.node(i).mean)
            .sum()
    }
}

/// Default profile grid: spacing 0.1 within 2 of the interval, 0.25 to
/// distance 5, 0.5 to distance 12, on both sides.
pub fn avoidance_grid(interval: &Interval) -> Vec<f64> {
    let mut dists = Vec::new();
    let mut d = 0.1;
    while d <= 12.0 + 1e-9 {
        dists.push(d);
        d += if d < 2.0 - 1e-9 {
            0.1
        } else if d < 5.0 - 1e-9 {
            0.25
        } else {
            0.5
        };
    }
    let mut grid: Vec<f64> = dists.iter().map(|d| interval.b + d).collect();
    grid.extend(dists.iter().map(|d| interval.a - d));
    grid
}

pub fn avoidance_profile(
    model: &ModelParams,
    interval: &Interval,
    grid: &[f64],
    config: &PathConfig,
) -> Result<AvoidanceProfile> {
    let mut above = Vec::new();
    let mut below = Vec::new();
    for (j, &x) in grid.iter().enumerate() {
        let cfg = config.with_seed(derive_seed(config.seed, j as u64 + 1));
        let est = estimate_avoidance(model, interval, x, &cfg)?.survival;
        match interval.require_outside(x)? {
            Side::Above => above.push((x, est)),
            Side::Below => below.push((x, est)),
        }
    }
    above.sort_by(|p, q| p.0.total_cmp(&q.0));
    below.sort_by(|p, q| q.0.total_cmp(&p.0));
    Ok(AvoidanceProfile {
        interval: *interval,
        above,
        below,
    })
}

/// Nested check of `E^x[1{t<T} ℓ(ξ_t)] = ℓ(x)` with `ℓ` replaced by an
/// interpolated profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NestedResidual {
    pub propagated: EstimatorResult,
    pub direct: EstimatorResult,
    pub residual: f64,
    /// Outer path noise, profile noise and the direct estimate combined.
    pub combined_stderr: f64,
}

impl NestedResidual {
    pub fn z(&self) -> f64 {
        self.residual.abs() / self.combined_stderr
    }
}

pub fn avoidance_harmonicity(
    model: &ModelParams,
    interval: &Interval,
    start: f64,
    t: f64,
    profile: &AvoidanceProfile,
    config: &PathConfig,
) -> Result<NestedResidual> {
    let eng = Engine::new(model, interval, config)?;
    let side = interval.require_outside(start)?;
    check_positive("t", t)?;
    let nodes = profile.len();
    let (moments, mean_weights) = fold_paths(
        config.n_paths,
        || (Moments::default(), vec![0.0; nodes]),
        |acc, i| {
            let mut rng = stream(config.seed, i);
            let mut w = Walker::at(&eng, start, side, &mut rng);
            w.run_to(&eng, t, &mut rng);
            if w.alive {
                let mut v = 0.0;
                for (node, weight) in profile.weights(w.x) {
                    v += weight * profile.node(node).mean;
                    acc.1[node] += weight;
                }
                acc.0.push(v);
            } else {
                acc.0.push(0.0);
            }
        },
        |acc, part| {
            acc.0.merge(part.0);
            for (d, s) in acc.1.iter_mut().zip(part.1) {
                *d += s;
            }
        },
    );
    let propagated = moments.result();
    let n = propagated.n as f64;
    let profile_var: f64 = mean_weights
        .iter()
        .enumerate()
        .map(|(i, w)| (w / n * profile.node(i).stderr).powi(2))
        .sum();
    let direct_cfg = config.with_seed(derive_seed(config.seed, 0xD1EC7));
    let direct = estimate_avoidance(model, interval, start, &direct_cfg)?.survival;
    Ok(NestedResidual {
        propagated,
        direct,
        residual: propagated.mean - direct.mean,
        combined_stderr: (propagated.stderr.powi(2) + profile_var + direct.stderr.powi(2)).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn setup() -> (ModelParams, Interval) {
        (ModelParams::reference(1.0), Interval::new(0.0, 1.0).unwrap())
    }

    #[test]
    fn bridge_probability_examples() {
        let s = 2f64.sqrt();
        assert_eq!(bridge_cross_prob(1.0, 2.0, 0.1, 1.0, Side::Above, s).unwrap(), 1.0);
        assert_eq!(bridge_cross_prob(0.0, -2.0, 0.1, 0.0, Side::Below, s).unwrap(), 1.0);
        assert_relative_eq!(
            bridge_cross_prob(2.0, 2.0, 0.1, 1.0, Side::Above, s).unwrap(),
            (-10f64).exp(),
            max_relative = 1e-14
        );
        let p = bridge_cross_prob(1.3, 2.9, 0.4, 1.0, Side::Above, s).unwrap();
        let q = bridge_cross_prob(2.9, 1.3, 0.4, 1.0, Side::Above, s).unwrap();
        assert_eq!(p, q);
        assert!(bridge_cross_prob(0.5, 2.0, 0.1, 1.0, Side::Above, s).is_err());
        assert!(bridge_cross_prob(-1.0, -2.0, 0.1, 0.0, Side::Above, s).is_err());
    }

    #[test]
    fn bridge_probability_matches_dense_simulation() {
        // brute-force Brownian bridge on a 1e−4 grid (≈ 1e−5 resolution is
        // not needed for this coarse probability); compare frequencies
        let sigma = 2f64.sqrt();
        let (x0, x1, dt, level) = (1.25, 1.4, 0.1, 1.0);
        let exact = bridge_cross_prob(x0, x1, dt, level, Side::Above, sigma).unwrap();
        let steps = 2000;
        let h = dt / steps as f64;
        let n = 4000;
        let mut rng = stream(99, 0);
        let mut hits = 0;
        for _ in 0..n {
            // Brownian path then pinned: B(s) − (s/dt)(B(dt) − (x1 − x0))
            let mut b = vec![0.0f64; steps + 1];
            for k in 1..=steps {
                let z: f64 = StandardNormal.sample(&mut rng);
                b[k] = b[k - 1] + sigma * h.sqrt() * z;
            }
            let end = b[steps];
            let crossed = (0..=steps).any(|k| {
                let s = k as f64 / steps as f64;
                x0 + b[k] - s * (end - (x1 - x0)) <= level
            });
            hits += usize::from(crossed);
        }
        let freq = hits as f64 / n as f64;
        let se = (exact * (1.0 - exact) / n as f64).sqrt();
        // the discrete monitor misses a little; allow 4 se plus a small bias
        assert!((freq - exact).abs() < 4.0 * se + 0.02, "freq {freq} exact {exact}");
    }

    #[test]
    fn leap_span_is_conservative() {
        let (m, _) = setup();
        let rule = LeapRule::new(&m);
        assert_eq!(rule.span(10.0, Side::Above), 0.0);
        let span = rule.span(200.0, Side::Above);
        assert!(span > 10.0);
        // Chernoff bound at the chosen span stays below ε for the best θ
        let best = rule
            .down
            .iter()
            .map(|&(t, phi)| span * phi - t * 200.0)
            .fold(f64::INFINITY, f64::min);
        assert!(best <= -LEAP_LOG_INV_EPS + 1e-9);
    }

    #[test]
    fn trajectories_are_reproducible() {
        let (m, i) = setup();
        let cfg = PathConfig {
            horizon: 20.0,
            ..PathConfig::default()
        };
        let a = simulate_path(&m, &i, 2.0, &cfg).unwrap();
        let b = simulate_path(&m, &i, 2.0, &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&m, &i, 2.0, &cfg.with_seed(2)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn start_inside_rejected() {
        let (m, i) = setup();
        assert!(simulate_path(&m, &i, 0.5, &PathConfig::default()).is_err());
        assert!(estimate_survival(&m, &i, 1.0, 1.0, &PathConfig::default()).is_err());
    }

    #[test]
    fn trajectory_invariants() {
        let (m, i) = setup();
        let cfg = PathConfig {
            horizon: 50.0,
            dt: 0.25,
            ..PathConfig::default()
        };
        let mut crossings_seen = 0;
        for idx in 0..300 {
            let p = simulate_path_indexed(&m, &i, -0.5, &cfg, idx).unwrap();
            assert!(p.times.windows(2).all(|w| w[0] <= w[1]));
            if let Some(t) = p.hit_time {
                assert!(t <= cfg.horizon);
                assert_eq!(*p.times.last().unwrap(), t.min(*p.times.last().unwrap()));
                assert_eq!(p.k_dagger, Some(p.crossings.len() as u32 + 1));
            } else {
                assert_eq!(*p.times.last().unwrap(), cfg.horizon);
            }
            let mut side = Side::Below;
            for c in &p.crossings {
                // every crossing is a recorded jump from the other side
                let k = p.times.iter().position(|&t| t == c.time).unwrap();
                let pre = p.pre_jump_values[k].expect("crossing at a jump time");
                match side {
                    Side::Below => assert!(pre < i.a && c.position > i.b),
                    Side::Above => assert!(pre > i.b && c.position < i.a),
                }
                side = side.flip();
                crossings_seen += 1;
            }
            // surviving values never sit inside the interval
            let upto = if p.hit { p.values.len() - 1 } else { p.values.len() };
            assert!(p.values[..upto].iter().all(|&v| !i.contains(v)));
        }
        assert!(crossings_seen > 5);
    }

    #[test]
    fn hits_on_boundary_segment() {
        // x₀ = x₁ = b gives crossing probability 1
        let (m, i) = setup();
        let eng = Engine::new(&m, &i, &PathConfig::default()).unwrap();
        let d = eng.interval.distance(1.0);
        assert_eq!(bridge_prob(d, d, 0.3, eng.sigma_sq), 1.0);
    }

    #[test]
    fn far_segment_survives() {
        let (m, i) = setup();
        let s = m.sigma;
        let p = bridge_cross_prob(30.0, 31.0, 0.1, i.b, Side::Above, s).unwrap();
        assert!(p < 1e-300);
    }

    #[test]
    fn free_moments_match() {
        // interval pushed far away: the process is effectively unkilled
        let m = ModelParams::reference(1.0);
        let i = Interval::new(-1e6, -1e6 + 1.0).unwrap();
        let cfg = PathConfig {
            n_paths: 100_000,
            seed: 11,
            ..PathConfig::default()
        };
        let t = 2.0;
        let start = 0.5;
        let mean = expect_killed(&m, &i, start, t, &cfg, |x| x).unwrap();
        let sq = expect_killed(&m, &i, start, t, &cfg, |x| (x - start).powi(2)).unwrap();
        assert!((mean.mean - start).abs() < 3.0 * mean.stderr, "{mean:?}");
        let var = m.variance_rate() * t;
        assert!((sq.mean - var).abs() < 3.0 * sq.stderr, "{sq:?} vs {var}");
    }

    #[test]
    fn leap_increment_moments() {
        let m = ModelParams::reference(1.0).with_drift(0.3);
        let i = Interval::new(0.0, 1.0).unwrap();
        let eng = Engine::new(&m, &i, &PathConfig::default()).unwrap();
        let span = 7.0;
        let mut mo = Moments::default();
        let mut sq = Moments::default();
        let mut rng = stream(5, 0);
        for _ in 0..200_000 {
            let v = eng.increment(span, &mut rng);
            mo.push(v);
            sq.push((v - m.drift * span).powi(2));
        }
        let r = mo.result();
        assert!((r.mean - m.drift * span).abs() < 3.0 * r.stderr);
        let v = sq.result();
        assert!((v.mean - m.variance_rate() * span).abs() < 3.0 * v.stderr);
    }

    #[test]
    fn survival_examples() {
        let (m, i) = setup();
        let cfg = PathConfig {
            n_paths: 20_000,
            ..PathConfig::default()
        };
        let zero = estimate_survival(&m, &i, 2.0, 0.0, &cfg).unwrap();
        assert_eq!(zero.total.mean, 1.0);
        assert_eq!(zero.total.stderr, 0.0);
        let s = estimate_survival(&m, &i, 2.0, 0.5, &cfg).unwrap();
        assert!(s.total.mean > 0.0 && s.total.mean < 1.0);
        assert!((s.total.mean - s.above.mean - s.below.mean).abs() <= 1e-12);
        // stderr scales like 1/√N
        let big = estimate_survival(&m, &i, 2.0, 0.5, &cfg.with_paths(40_000)).unwrap();
        let ratio = s.total.stderr / big.total.stderr;
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn estimates_are_reproducible() {
        let (m, i) = setup();
        let cfg = PathConfig {
            n_paths: 5000,
            ..PathConfig::default()
        };
        let a = estimate_clock_event(&m, &i, 2.0, 0.3, &cfg).unwrap();
        let b = estimate_clock_event(&m, &i, 2.0, 0.3, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clock_examples() {
        let (m, i) = setup();
        let cfg = PathConfig {
            n_paths: 20_000,
            ..PathConfig::default()
        };
        let fast = estimate_clock_event(&m, &i, 2.0, 1e6, &cfg).unwrap();
        assert!(fast.above.mean > 0.995);
        let e = estimate_clock_event(&m, &i, -1.0, 0.2, &cfg).unwrap();
        assert!((e.total.mean - e.above.mean - e.below.mean).abs() < 1e-12);
    }

    #[test]
    fn crossing_sample_reproducible_and_flagged() {
        let (m, i) = setup();
        let cfg = PathConfig {
            n_paths: 2000,
            horizon: 1e5,
            ..PathConfig::default()
        };
        let a = sample_crossings(&m, &i, -1.0, 2, &cfg).unwrap();
        let b = sample_crossings(&m, &i, -1.0, 2, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.positions[0].iter().all(|&y| y > i.b));
        assert!(a.positions[1].iter().all(|&y| y < i.a));
        // too few conditioned samples is an error, not a silent report
        assert!(matches!(
            crossing_law_from_sample(&m, &i, &a, 2),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn lundberg_root() {
        let m = ModelParams::reference(1.0).with_drift(0.5);
        let r = lundberg_exponent(&m).unwrap();
        assert!(m.log_mgf(-r).abs() < 1e-12);
        assert!(r > 0.0 && r < m.eta);
        assert!(lundberg_exponent(&ModelParams::reference(1.0)).is_err());
    }

    #[test]
    fn avoidance_needs_drift() {
        let (m, i) = setup();
        assert!(estimate_avoidance(&m, &i, 2.0, &PathConfig::default()).is_err());
    }

    #[test]
    fn avoidance_far_start_survives() {
        let m = ModelParams::reference(1.0).with_drift(0.5);
        let i = Interval::new(0.0, 1.0).unwrap();
        let cfg = PathConfig {
            n_paths: 20_000,
            horizon: avoidance_horizon(&m, &i, 51.0),
            ..PathConfig::default()
        };
        let far = estimate_avoidance(&m, &i, 51.0, &cfg).unwrap();
        assert!(far.survival.mean >= 1.0 - 3.0 * far.survival.stderr.max(1e-4));
        let near = estimate_avoidance(&m, &i, 2.0, &cfg).unwrap();
        let mid = estimate_avoidance(&m, &i, 4.0, &cfg.with_seed(3)).unwrap();
        assert!(near.survival.mean < mid.survival.mean + 3.0 * mid.survival.stderr);
        assert!(near.capped == 0);
    }

    #[test]
    fn profile_interpolation() {
        let i = Interval::new(0.0, 1.0).unwrap();
        let node = |v: f64| EstimatorResult::exact(v, 1);
        let p = AvoidanceProfile {
            interval: i,
            above: vec![(1.5, node(0.5)), (2.0, node(0.8))],
            below: vec![(-1.0, node(0.2))],
        };
        assert_eq!(p.value(0.5), 0.0);
        assert_relative_eq!(p.value(1.25), 0.25);
        assert_relative_eq!(p.value(1.75), 0.65);
        assert_relative_eq!(p.value(10.0), 0.8);
        assert_relative_eq!(p.value(-0.5), 0.1);
        assert_relative_eq!(p.value(-7.0), 0.2);
        let grid = avoidance_grid(&i);
        assert!(grid.iter().all(|&x| !i.contains(x)));
    }

    #[test]
    fn paths_csv_layout() {
        let (m, i) = setup();
        let cfg = PathConfig {
            horizon: 2.0,
            dt: 0.5,
            ..PathConfig::default()
        };
        let p = simulate_path(&m, &i, 3.0, &cfg).unwrap();
        let mut buf = Vec::new();
        write_paths_csv(&mut buf, std::slice::from_ref(&p)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("path_id,t,value,is_jump,killed"));
        assert_eq!(lines.count(), p.times.len());
    }
}
