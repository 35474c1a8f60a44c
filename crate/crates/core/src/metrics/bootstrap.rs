use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ContextPolarity, MetricKind, Outcome, PredictionSet};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;

/// Share of undefined resamples above which an interval is flagged.
pub const MAX_DROPPED_SHARE: f64 = 0.01;

pub const MIN_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSettings {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings {
            resamples: 10_000,
            level: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    pub resamples: usize,
    pub dropped: usize,
    /// More than [`MAX_DROPPED_SHARE`] of resamples were undefined.
    pub flagged: bool,
}

/// Per-item values for one stratum. The metric of a resample is the mean of
/// its draws (ambiguous) or a combination of two stratum means.
enum Plan {
    Single(Vec<f64>),
    Pooled(Vec<f64>, Vec<f64>),
    Difference(Vec<f64>, Vec<f64>),
}

fn plan(ps: &PredictionSet, kind: MetricKind) -> Plan {
    let amb = |f: fn(Outcome) -> f64| ps.ambiguous.iter().map(|p| f(p.outcome)).collect::<Vec<_>>();
    let strata = || {
        let pick = |cp: ContextPolarity| {
            ps.disambiguated
                .iter()
                .filter(|p| p.context_polarity == cp)
                .map(|p| p.correct as u8 as f64)
                .collect::<Vec<_>>()
        };
        (pick(ContextPolarity::Stereotyped), pick(ContextPolarity::CounterStereotyped))
    };
    match kind {
        MetricKind::AccA => Plan::Single(amb(|o| (o == Outcome::Unknown) as u8 as f64)),
        MetricKind::DiffBiasA => Plan::Single(amb(|o| match o {
            Outcome::Stereo => 1.0,
            Outcome::Counter => -1.0,
            _ => 0.0,
        })),
        MetricKind::AccD => {
            let (s, c) = strata();
            Plan::Pooled(s, c)
        }
        MetricKind::DiffBiasD => {
            let (s, c) = strata();
            Plan::Difference(s, c)
        }
    }
}

fn resample_sum(values: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let n = values.len();
    (0..n).map(|_| values[rng.random_range(0..n)]).sum()
}

fn resample_value(plan: &Plan, rng: &mut ChaCha8Rng) -> Option<f64> {
    match plan {
        Plan::Single(v) => (!v.is_empty()).then(|| resample_sum(v, rng) / v.len() as f64),
        Plan::Pooled(s, c) => {
            let n = s.len() + c.len();
            let total = resample_sum(s, rng) + resample_sum(c, rng);
            (n > 0).then(|| total / n as f64)
        }
        Plan::Difference(s, c) => {
            if s.is_empty() || c.is_empty() {
                return None;
            }
            Some(resample_sum(s, rng) / s.len() as f64 - resample_sum(c, rng) / c.len() as f64)
        }
    }
}

/// Linear-interpolation quantile of sorted data (the common "type 7").
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval. Items are resampled with replacement;
/// disambiguated items are resampled within their context polarity so both
/// strata keep their size. Each resample draws from its own seed derived from
/// `seed`, so the result does not depend on thread scheduling.
pub fn bootstrap_ci(ps: &PredictionSet, kind: MetricKind, resamples: usize, level: f64, seed: u64) -> Result<BootstrapCi> {
    if resamples < MIN_RESAMPLES {
        return Err(Error::Input(format!("bootstrap needs at least {MIN_RESAMPLES} resamples, got {resamples}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Input(format!("confidence level {level} outside (0, 1)")));
    }
    ps.counts().exact(kind)?;
    let plan = plan(ps, kind);
    let mut values: Vec<f64> = (0..resamples as u64)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i));
            resample_value(&plan, &mut rng)
        })
        .collect();
    let dropped = resamples - values.len();
    if values.is_empty() {
        return Err(Error::UndefinedMetric(format!("{kind}: every bootstrap resample was undefined")));
    }
    values.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok(BootstrapCi {
        low: quantile_sorted(&values, alpha),
        high: quantile_sorted(&values, 1.0 - alpha),
        resamples,
        dropped,
        flagged: dropped as f64 > MAX_DROPPED_SHARE * resamples as f64,
    })
}

/// True when the closed intervals share no point.
pub fn ci_overlap_flag(a: (f64, f64), b: (f64, f64)) -> Result<bool> {
    for (low, high) in [a, b] {
        if !(low <= high) {
            return Err(Error::InvalidInterval { low, high });
        }
    }
    Ok(a.1 < b.0 || b.1 < a.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{AmbiguousPrediction, DisambiguatedPrediction};

    fn bernoulli_amb(n: usize, p: f64, seed: u64) -> PredictionSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PredictionSet {
            ambiguous: (0..n)
                .map(|i| AmbiguousPrediction {
                    instance_id: i.to_string(),
                    outcome: if rng.random_bool(p) { Outcome::Unknown } else { Outcome::Stereo },
                })
                .collect(),
            disambiguated: vec![],
        }
    }

    #[test]
    fn constant_outcomes_give_zero_width() {
        let ps = PredictionSet {
            ambiguous: (0..30)
                .map(|i| AmbiguousPrediction {
                    instance_id: i.to_string(),
                    outcome: Outcome::Unknown,
                })
                .collect(),
            disambiguated: vec![],
        };
        let ci = bootstrap_ci(&ps, MetricKind::AccA, 1000, 0.95, 1).unwrap();
        assert_eq!((ci.low, ci.high), (1.0, 1.0));
        assert_eq!(ci.dropped, 0);
    }

    #[test]
    fn deterministic_under_seed() {
        let ps = bernoulli_amb(200, 0.4, 3);
        let a = bootstrap_ci(&ps, MetricKind::DiffBiasA, 2000, 0.95, 9).unwrap();
        let b = bootstrap_ci(&ps, MetricKind::DiffBiasA, 2000, 0.95, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn half_width_shrinks_like_inverse_sqrt_n() {
        let hw = |n| {
            let ps = bernoulli_amb(n, 0.5, 11);
            let ci = bootstrap_ci(&ps, MetricKind::AccA, 2000, 0.95, 5).unwrap();
            (ci.high - ci.low) / 2.0
        };
        let (h100, h400, h1600) = (hw(100), hw(400), hw(1600));
        for ratio in [h100 / h400, h400 / h1600] {
            assert!((1.6..2.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn strata_sizes_are_preserved() {
        // Every stereotyped item correct and every counter item wrong: any
        // stratified resample has diff_bias_d exactly 1.
        let disambiguated = (0..20)
            .map(|i| DisambiguatedPrediction {
                instance_id: i.to_string(),
                context_polarity: if i < 5 { ContextPolarity::Stereotyped } else { ContextPolarity::CounterStereotyped },
                correct: i < 5,
                outcome: Outcome::Stereo,
            })
            .collect();
        let ps = PredictionSet {
            ambiguous: vec![],
            disambiguated,
        };
        let ci = bootstrap_ci(&ps, MetricKind::DiffBiasD, 1000, 0.95, 0).unwrap();
        assert_eq!((ci.low, ci.high), (1.0, 1.0));
    }

    #[test]
    fn guards() {
        let ps = bernoulli_amb(10, 0.5, 0);
        assert!(bootstrap_ci(&ps, MetricKind::AccA, 999, 0.95, 0).is_err());
        assert!(bootstrap_ci(&ps, MetricKind::AccD, 1000, 0.95, 0).is_err());
    }

    #[test]
    fn overlap_rule() {
        assert!(ci_overlap_flag((0.0, 1.0), (2.0, 3.0)).unwrap());
        assert!(!ci_overlap_flag((0.0, 2.0), (1.0, 3.0)).unwrap());
        assert!(!ci_overlap_flag((0.0, 1.0), (1.0, 2.0)).unwrap());
        assert!(ci_overlap_flag((2.0, 3.0), (0.0, 1.0)).unwrap());
        assert!(matches!(ci_overlap_flag((1.0, 0.0), (0.0, 1.0)), Err(Error::InvalidInterval { .. })));
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile_sorted(&v, 0.5), 1.5);
        assert_eq!(quantile_sorted(&v, 0.0), 0.0);
        assert_eq!(quantile_sorted(&v, 1.0), 3.0);
    }
}
