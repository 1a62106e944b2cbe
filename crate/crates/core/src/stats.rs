//! Estimator summaries and the Kolmogorov–Smirnov machinery.

use serde::Serialize;

/// Sample mean with its standard error `sd/√n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorResult {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

impl EstimatorResult {
    /// A value known without sampling error.
    pub fn exact(mean: f64, n: u64) -> Self {
        Self {
            mean,
            stderr: 0.0,
            n,
        }
    }

    /// |self − other| in units of the combined standard error of two
    /// independent estimates.
    pub fn z_distance(&self, other: &EstimatorResult) -> f64 {
        let se = self.stderr.hypot(other.stderr);
        let diff = (self.mean - other.mean).abs();
        if se == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / se
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mean: self.mean * factor,
            stderr: self.stderr * factor.abs(),
            n: self.n,
        }
    }
}

/// Running first and second moments.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, other: Moments) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    pub fn result(&self) -> EstimatorResult {
        let n = self.n;
        if n == 0 {
            return EstimatorResult {
                mean: f64::NAN,
                stderr: f64::NAN,
                n: 0,
            };
        }
        let mean = self.mean();
        let stderr = if n > 1 {
            let nf = n as f64;
            let var = ((self.sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
            (var / nf).sqrt()
        } else {
            0.0
        };
        EstimatorResult { mean, stderr, n }
    }
}

/// Two-sided KS statistic `sup |F_m − F|` of `samples` against `cdf`.
/// Sorts `samples` in place.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let m = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let above = (i as f64 + 1.0) / m - f;
            let below = f - i as f64 / m;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic critical value `√(−ln(α/2)/2)/√m` of the KS statistic.
pub fn ks_critical_value(alpha: f64, m: usize) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (m as f64).sqrt()
}

/// Asymptotic p-value `P(√m·D > d)` from the Kolmogorov series.
pub fn ks_p_value(d: f64, m: usize) -> f64 {
    let t = d * (m as f64).sqrt();
    if t < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * t * t).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn moments_match_direct_formula() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        let r = m.result();
        assert_relative_eq!(r.mean, 3.75);
        let var = xs.iter().map(|x| (x - 3.75f64).powi(2)).sum::<f64>() / 3.0;
        assert_relative_eq!(r.stderr, (var / 4.0).sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn ks_critical_matches_table() {
        // 1.628 is the tabulated α = 0.01 Kolmogorov quantile
        assert_relative_eq!(ks_critical_value(0.01, 1), 1.6276, max_relative = 1e-4);
        assert_relative_eq!(ks_p_value(1.6276, 1), 0.01, max_relative = 1e-3);
        assert_relative_eq!(ks_p_value(1.3581, 1), 0.05, max_relative = 1e-3);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let m = 1000;
        let mut xs: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
        let d = ks_statistic(&mut xs, |x| x.clamp(0.0, 1.0));
        assert_relative_eq!(d, 0.5 / m as f64, max_relative = 1e-9);
    }
}
