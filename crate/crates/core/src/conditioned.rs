//! The h-transformed laws `P₊`, `P₋`, `P↕` realized as weighted particle
//! systems.
//!
//! Particles move under the killed base law. Particle `i` carries weight
//! `m_i · h(ξ_t)/h(x)` where the multiplier `m_i` is 1 until the first
//! resampling. Multinomial resampling fires on an observation grid whenever
//! the effective sample size falls below `n/2`, and resets every weight to
//! the pre-resampling mean so the total mass is preserved.
//!
//! Standard errors come from independent replicate ensembles.

use std::ops::ControlFlow;

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::closed_form::{HarmonicEval, HarmonicKind};
use crate::error::{check_positive, Error, Result};
use crate::model::{Interval, ModelParams, Side};
use crate::path::{expect_killed, Engine, Event, PathConfig, Walker};
use crate::rng::{derive_seed, fold_paths, map_indices, stream, PathRng};
use crate::stats::{EstimatorResult, Moments};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Plus,
    Minus,
    Updown,
}

impl Transform {
    pub fn kind(self) -> HarmonicKind {
        match self {
            Transform::Plus => HarmonicKind::Plus,
            Transform::Minus => HarmonicKind::Minus,
            Transform::Updown => HarmonicKind::Combined,
        }
    }
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" => Ok(Transform::Plus),
            "minus" => Ok(Transform::Minus),
            "updown" => Ok(Transform::Updown),
            other => Err(Error::Config(format!(
                "unknown transform {other:?} (expected plus, minus or updown)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// Particles per replicate.
    pub particles: usize,
    pub replicates: usize,
    /// Observation and resampling grid spacing.
    pub dt: f64,
    /// Grid spacing grows to `relative_dt · t` once that exceeds `dt`.
    pub relative_dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub resample: bool,
    pub far_field_leaps: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            particles: 2000,
            replicates: 20,
            dt: 0.5,
            relative_dt: 0.0,
            horizon: 50.0,
            seed: 1,
            resample: true,
            far_field_leaps: true,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::Config("need at least 2 particles".into()));
        }
        if self.replicates < 2 {
            return Err(Error::Config(
                "need at least 2 replicates for a standard error".into(),
            ));
        }
        check_positive("dt", self.dt)?;
        check_positive("horizon", self.horizon)?;
        if !(self.relative_dt >= 0.0 && self.relative_dt < 1.0) {
            return Err(Error::Config(format!(
                "relative_dt must lie in [0, 1), got {}",
                self.relative_dt
            )));
        }
        Ok(())
    }

    fn path_config(&self) -> PathConfig {
        PathConfig {
            dt: self.dt.min(self.horizon),
            horizon: self.horizon,
            seed: self.seed,
            n_paths: self.particles,
            bridge_correction: true,
            far_field_leaps: self.far_field_leaps,
        }
    }

    /// Observation times from 0 to the horizon.
    fn grid(&self) -> Vec<f64> {
        let mut grid = vec![0.0];
        let mut k = 0u64;
        let mut t = 0.0f64;
        while t < self.horizon {
            t = if self.relative_dt * t > self.dt {
                t * (1.0 + self.relative_dt)
            } else {
                (k + 1) as f64 * self.dt
            };
            k += 1;
            if t > self.horizon - 1e-9 * self.dt {
                t = self.horizon;
            }
            grid.push(t);
        }
        grid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Particle {
    pub state: f64,
    pub weight: f64,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleEnsemble {
    pub particles: Vec<Particle>,
    pub time: f64,
    pub transform: Transform,
    pub ess: f64,
    /// `h(start)`.
    pub normalizer: f64,
}

impl ParticleEnsemble {
    pub fn total_weight(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }

    /// Weighted fraction of the surviving mass on `side`.
    pub fn fraction(&self, interval: &Interval, side: Side) -> f64 {
        let on: f64 = self
            .particles
            .iter()
            .filter(|p| p.alive && interval.side(p.state) == Some(side))
            .map(|p| p.weight)
            .sum();
        on / self.total_weight()
    }
}

/// `(Σw)²/Σw²`; zero when all weights vanish.
pub fn effective_sample_size(weights: impl Iterator<Item = f64> + Clone) -> f64 {
    let s: f64 = weights.clone().sum();
    let s2: f64 = weights.map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// One replicate's weighted summaries at an observation time.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Snapshot {
    mean_weight: f64,
    above: f64,
    below: f64,
    window: f64,
    ess: f64,
}

struct ReplicateTrace {
    snapshots: Vec<Snapshot>,
    resamples: u32,
    last: ParticleEnsemble,
}

struct Member {
    walker: Walker,
    rng: PathRng,
    mult: f64,
}

struct Context<'a> {
    engine: Engine,
    eval: HarmonicEval,
    kind: HarmonicKind,
    transform: Transform,
    start: f64,
    side: Side,
    h0: f64,
    cfg: &'a EnsembleConfig,
    window: Option<(f64, f64)>,
}

impl Context<'_> {
    fn new<'a>(
        model: &ModelParams,
        interval: &Interval,
        transform: Transform,
        start: f64,
        cfg: &'a EnsembleConfig,
        window: Option<(f64, f64)>,
    ) -> Result<Context<'a>> {
        cfg.validate()?;
        let engine = Engine::new(model, interval, &cfg.path_config())?;
        let eval = HarmonicEval::new(model, interval)?;
        let side = interval.require_outside(start)?;
        let kind = transform.kind();
        let h0 = eval.eval(kind, start)?;
        Ok(Context {
            engine,
            eval,
            kind,
            transform,
            start,
            side,
            h0,
            cfg,
            window,
        })
    }

    fn in_window(&self, x: f64) -> bool {
        match self.window {
            None => false,
            Some((d, c)) => {
                let Interval { a, b } = self.engine.interval;
                (d <= x && x < a) || (b < x && x <= c)
            }
        }
    }

    fn weight(&self, m: &Member) -> f64 {
        if m.walker.alive {
            m.mult * self.eval.eval_unchecked(self.kind, m.walker.x) / self.h0
        } else {
            0.0
        }
    }

    fn replicate(&self, rep: u64) -> Result<ReplicateTrace> {
        let n = self.cfg.particles;
        let seed = derive_seed(self.cfg.seed, rep + 1);
        let mut members: Vec<Member> = (0..n as u64)
            .map(|j| {
                let mut rng = stream(seed, j);
                let walker = Walker::at(&self.engine, self.start, self.side, &mut rng);
                Member {
                    walker,
                    rng,
                    mult: 1.0,
                }
            })
            .collect();
        let grid = self.cfg.grid();
        let mut snapshots = Vec::with_capacity(grid.len());
        let mut resamples = 0u32;
        let mut weights = vec![0.0; n];
        for (k, &t) in grid.iter().enumerate() {
            if k > 0 {
                for m in members.iter_mut().filter(|m| m.walker.alive) {
                    m.walker.run_to(&self.engine, t, &mut m.rng);
                }
            }
            let iv = self.engine.interval;
            let (mut total, mut above, mut below, mut window) = (0.0, 0.0, 0.0, 0.0);
            for (w, m) in weights.iter_mut().zip(&members) {
                *w = self.weight(m);
                total += *w;
                if *w > 0.0 {
                    match iv.side(m.walker.x) {
                        Some(Side::Above) => above += *w,
                        Some(Side::Below) => below += *w,
                        None => unreachable!("live particle inside the interval"),
                    }
                    if self.in_window(m.walker.x) {
                        window += *w;
                    }
                }
            }
            if total <= 0.0 {
                return Err(Error::Extinction {
                    time: t,
                    replicate: rep as usize,
                });
            }
            let ess = effective_sample_size(weights.iter().copied());
            snapshots.push(Snapshot {
                mean_weight: total / n as f64,
                above: above / total,
                below: below / total,
                window: window / total,
                ess,
            });
            let more = k + 1 < grid.len();
            if more && self.cfg.resample && ess < 0.5 * n as f64 {
                resamples += 1;
                members = self.resample(members, &weights, total, seed, resamples);
            }
        }
        let particles = members
            .iter()
            .map(|m| Particle {
                state: m.walker.x,
                weight: self.weight(m),
                alive: m.walker.alive,
            })
            .collect::<Vec<_>>();
        let ess = effective_sample_size(particles.iter().map(|p| p.weight));
        Ok(ReplicateTrace {
            snapshots,
            resamples,
            last: ParticleEnsemble {
                particles,
                time: *grid.last().expect("non-empty grid"),
                transform: self.transform,
                ess,
                normalizer: self.h0,
            },
        })
    }

    /// Multinomial resampling by inverse CDF at sorted uniforms (normalized
    /// exponential spacings). Offspring get fresh streams and fresh jump
    /// clocks.
    fn resample(
        &self,
        members: Vec<Member>,
        weights: &[f64],
        total: f64,
        seed: u64,
        generation: u32,
    ) -> Vec<Member> {
        let n = members.len();
        let base = generation as u64 * n as u64;
        let mut rng = stream(derive_seed(seed, 0x5A3F), generation as u64);
        let spacings: Vec<f64> = (0..=n).map(|_| Exp1.sample(&mut rng)).collect();
        let norm: f64 = spacings.iter().sum();
        let mean = total / n as f64;
        let mut out = Vec::with_capacity(n);
        let mut u = 0.0;
        let mut cum = 0.0;
        let mut i = 0;
        for (j, s) in spacings.iter().take(n).enumerate() {
            u += s / norm;
            while i + 1 < n && cum + weights[i] / total < u {
                cum += weights[i] / total;
                i += 1;
            }
            let parent = &members[positive_parent(weights, i)];
            let mut rng = stream(seed, base + j as u64);
            let mut walker = parent.walker.clone();
            walker.refresh(&self.engine, &mut rng);
            let h = self.eval.eval_unchecked(self.kind, walker.x) / self.h0;
            out.push(Member {
                walker,
                rng,
                mult: mean / h,
            });
        }
        out
    }

    fn run(&self) -> Result<Vec<ReplicateTrace>> {
        map_indices(self.cfg.replicates, |r| self.replicate(r as u64))
            .into_iter()
            .collect()
    }
}

/// Nearest index at or before `i` with positive weight (rounding at the top
/// of the cumulative sum can land on a dead particle).
fn positive_parent(weights: &[f64], i: usize) -> usize {
    (0..=i)
        .rev()
        .find(|&p| weights[p] > 0.0)
        .or_else(|| weights.iter().position(|&w| w > 0.0))
        .expect("positive total weight")
}

/// Ensemble summaries at one observation time, across replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub time: f64,
    pub p_up: EstimatorResult,
    pub p_down: EstimatorResult,
    /// `Σw/n`; equals 1 in expectation.
    pub mean_weight: EstimatorResult,
    pub ess_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleRun {
    pub transform: Transform,
    pub start: f64,
    pub series: Vec<SeriesPoint>,
    pub resamples: u32,
    pub ess_min: f64,
    /// Final state of replicate 0.
    pub final_ensemble: ParticleEnsemble,
}

fn across<F: Fn(&Snapshot) -> f64>(traces: &[ReplicateTrace], k: usize, f: F) -> EstimatorResult {
    let mut m = Moments::default();
    for tr in traces {
        m.push(f(&tr.snapshots[k]));
    }
    m.result()
}

fn summarize(ctx: &Context<'_>, traces: Vec<ReplicateTrace>) -> EnsembleRun {
    let grid = ctx.cfg.grid();
    let series = grid
        .iter()
        .enumerate()
        .map(|(k, &time)| SeriesPoint {
            time,
            p_up: across(&traces, k, |s| s.above),
            p_down: across(&traces, k, |s| s.below),
            mean_weight: across(&traces, k, |s| s.mean_weight),
            ess_min: traces
                .iter()
                .map(|t| t.snapshots[k].ess)
                .fold(f64::INFINITY, f64::min),
        })
        .collect::<Vec<_>>();
    let ess_min = series.iter().map(|p| p.ess_min).fold(f64::INFINITY, f64::min);
    let resamples = traces.iter().map(|t| t.resamples).sum();
    let final_ensemble = traces.into_iter().next().expect("replicates >= 2").last;
    EnsembleRun {
        transform: ctx.transform,
        start: ctx.start,
        series,
        resamples,
        ess_min,
        final_ensemble,
    }
}

pub fn propagate_ensemble(
    model: &ModelParams,
    interval: &Interval,
    transform: Transform,
    start: f64,
    config: &EnsembleConfig,
) -> Result<EnsembleRun> {
    let ctx = Context::new(model, interval, transform, start, config, None)?;
    let traces = ctx.run()?;
    Ok(summarize(&ctx, traces))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftEstimate {
    pub p_up: EstimatorResult,
    pub p_down: EstimatorResult,
    pub horizon: f64,
    pub ess_min: f64,
    pub resamples: u32,
}

/// Weighted fractions above `b` and below `a` at the horizon.
pub fn drift_probability(
    model: &ModelParams,
    interval: &Interval,
    transform: Transform,
    start: f64,
    config: &EnsembleConfig,
) -> Result<DriftEstimate> {
    let run = propagate_ensemble(model, interval, transform, start, config)?;
    let last = run.series.last().expect("non-empty series");
    Ok(DriftEstimate {
        p_up: last.p_up,
        p_down: last.p_down,
        horizon: last.time,
        ess_min: run.ess_min,
        resamples: run.resamples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OccupationEstimate {
    pub estimate: EstimatorResult,
    pub horizon: f64,
    pub window: (f64, f64),
}

/// Weighted mean of `∫₀^H 1{ξ_t ∈ [d, a) ∪ (b, c]} dt`, by the trapezoid
/// rule on the observation grid.
pub fn occupation_time(
    model: &ModelParams,
    interval: &Interval,
    transform: Transform,
    start: f64,
    window: (f64, f64),
    config: &EnsembleConfig,
) -> Result<OccupationEstimate> {
    let (d, c) = window;
    if !(d <= interval.a && c >= interval.b) {
        return Err(Error::Domain(format!(
            "window ({d}, {c}) must satisfy d <= a and c >= b"
        )));
    }
    if d == interval.a && c == interval.b {
        config.validate()?;
        return Ok(OccupationEstimate {
            estimate: EstimatorResult::exact(0.0, config.replicates as u64),
            horizon: config.horizon,
            window,
        });
    }
    let ctx = Context::new(model, interval, transform, start, config, Some(window))?;
    let traces = ctx.run()?;
    let grid = config.grid();
    let mut m = Moments::default();
    for tr in &traces {
        let total: f64 = grid
            .windows(2)
            .zip(tr.snapshots.windows(2))
            .map(|(t, s)| 0.5 * (t[1] - t[0]) * (s[0].window + s[1].window))
            .sum();
        m.push(total);
    }
    Ok(OccupationEstimate {
        estimate: m.result(),
        horizon: config.horizon,
        window,
    })
}

/// Closed-form bound on the `P↕` occupation time of `[d, a) ∪ (b, c]`:
/// `(sup_window h / h(x)) · (U(c − b) h₊(x) + U(a − d) h₋(x))`.
pub fn occupation_bound(
    model: &ModelParams,
    interval: &Interval,
    start: f64,
    window: (f64, f64),
) -> Result<f64> {
    let eval = HarmonicEval::new(model, interval)?;
    let (d, c) = window;
    let hx = eval.h(start)?;
    // h grows with the distance to the interval on each side
    let mut sup = 0.0f64;
    if c > interval.b {
        sup = sup.max(eval.h(c)?);
    }
    if d < interval.a {
        sup = sup.max(eval.h(d)?);
    }
    let inner = eval.potential(c - interval.b) * eval.h_plus(start)?
        + eval.potential(interval.a - d) * eval.h_minus(start)?;
    Ok(sup / hx * inner)
}

/// `(Ê^x[1{t<T} h_kind(ξ_t)] − h_kind(x))/h_kind(x)` from plain paths.
pub fn harmonicity_residual(
    model: &ModelParams,
    interval: &Interval,
    kind: HarmonicKind,
    start: f64,
    t: f64,
    config: &PathConfig,
) -> Result<EstimatorResult> {
    let eval = HarmonicEval::new(model, interval)?;
    let h0 = eval.eval(kind, start)?;
    if t == 0.0 {
        return Ok(EstimatorResult::exact(0.0, config.n_paths as u64));
    }
    check_positive("t", t)?;
    let est = expect_killed(model, interval, start, t, config, |y| {
        eval.eval_unchecked(kind, y)
    })?;
    Ok(EstimatorResult {
        mean: (est.mean - h0) / h0,
        stderr: est.stderr / h0,
        n: est.n,
    })
}

/// `P_kind^x(ξ reaches (−∞, level] before the horizon)` two ways on shared
/// paths: weight at the horizon, `1{σ < H < T} h(ξ_H)/h(x)`, and weight
/// frozen at the passage time, `1{σ < H ∧ T} h(ξ_σ)/h(x)`. The passage time
/// `σ` is monitored at grid, jump and leap times, which keeps it a
/// stopping time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EscapeEstimate {
    pub level: f64,
    pub at_horizon: EstimatorResult,
    pub at_stopping_time: EstimatorResult,
    /// Paired per-path difference of the two estimators.
    pub difference: EstimatorResult,
}

pub fn downward_escape(
    model: &ModelParams,
    interval: &Interval,
    kind: HarmonicKind,
    start: f64,
    level: f64,
    config: &PathConfig,
) -> Result<EscapeEstimate> {
    if !(level < interval.a) {
        return Err(Error::Domain(format!(
            "escape level {level} must lie below a = {}",
            interval.a
        )));
    }
    let engine = Engine::new(model, interval, config)?;
    let eval = HarmonicEval::new(model, interval)?;
    let side = interval.require_outside(start)?;
    let h0 = eval.eval(kind, start)?;
    let h = |y: f64| eval.eval_unchecked(kind, y) / h0;
    let steps = (config.horizon / config.dt - 1e-9).ceil().max(1.0) as u64;
    let moments = fold_paths(
        config.n_paths,
        || [Moments::default(); 3],
        |acc, i| {
            let mut rng = stream(config.seed, i);
            let mut w = Walker::at(&engine, start, side, &mut rng);
            let mut frozen: Option<f64> = None;
            if start <= level {
                frozen = Some(h(start));
            }
            let mut watch = |e: &Event| {
                if frozen.is_none() {
                    let x = match *e {
                        Event::Step { x, .. } | Event::Leap { x, .. } => Some(x),
                        Event::Jump { post, .. } | Event::Crossing { post, .. } => Some(post),
                        Event::Killed { .. } => None,
                    };
                    if let Some(x) = x.filter(|&x| x <= level) {
                        frozen = Some(h(x));
                    }
                }
                ControlFlow::Continue(())
            };
            for k in 1..=steps {
                if !w.alive {
                    break;
                }
                let target = (k as f64 * config.dt).min(config.horizon);
                let _ = w.advance(&engine, target, &mut rng, &mut watch);
            }
            let v_stop = frozen.unwrap_or(0.0);
            let v_horizon = if frozen.is_some() && w.alive { h(w.x) } else { 0.0 };
            acc[0].push(v_horizon);
            acc[1].push(v_stop);
            acc[2].push(v_horizon - v_stop);
        },
        |acc, part| {
            for (a, p) in acc.iter_mut().zip(part) {
                a.merge(p);
            }
        },
    );
    let [horizon, stopped, diff] = moments.map(|m| m.result());
    Ok(EscapeEstimate {
        level,
        at_horizon: horizon,
        at_stopping_time: stopped,
        difference: diff,
    })
}
