//! Holding-time distributions for the 1-0 primary-user traffic process.
//!
//! The channel alternates between idle and busy periods. Each period's
//! duration follows one of four laws (exponential, log-normal, gamma,
//! Erlang). The discretized probability that a status change lands on a
//! given sample is a CDF difference over one sample interval.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{erfc, reg_lower_gamma};

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("erlang shape must be a positive integer, got {0}")]
    BadErlangShape(f64),
    #[error("busy prior must lie in [0, 1], got {0}")]
    BadPrior(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HoldingKind {
    Exponential,
    Lognormal,
    Gamma,
    Erlang,
}

impl HoldingKind {
    pub const ALL: [HoldingKind; 4] = [
        HoldingKind::Exponential,
        HoldingKind::Lognormal,
        HoldingKind::Gamma,
        HoldingKind::Erlang,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HoldingKind::Exponential => "exponential",
            HoldingKind::Lognormal => "lognormal",
            HoldingKind::Gamma => "gamma",
            HoldingKind::Erlang => "erlang",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Law {
    /// rate per ms
    Exponential { rate: f64 },
    /// mu, sigma of the underlying normal
    Lognormal { mu: f64, sigma: f64 },
    /// shape k, scale theta in ms
    Gamma { shape: f64, scale: f64 },
    /// integer shape m, rate per ms
    Erlang { shape: u32, rate: f64 },
}

/// A parametric holding-time distribution with evaluable CDF, cached mean
/// and a sampler. Durations are in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldingDist {
    law: Law,
    mean: f64,
}

fn require_positive(name: &'static str, value: f64) -> Result<f64, TrafficError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(TrafficError::NonPositive { name, value })
    }
}

impl HoldingDist {
    pub fn exponential(rate: f64) -> Result<Self, TrafficError> {
        let rate = require_positive("rate", rate)?;
        Ok(HoldingDist { law: Law::Exponential { rate }, mean: 1.0 / rate })
    }

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self, TrafficError> {
        let sigma = require_positive("sigma", sigma)?;
        if !mu.is_finite() {
            return Err(TrafficError::NonPositive { name: "mu", value: mu });
        }
        Ok(HoldingDist {
            law: Law::Lognormal { mu, sigma },
            mean: (mu + 0.5 * sigma * sigma).exp(),
        })
    }

    pub fn gamma(shape: f64, scale: f64) -> Result<Self, TrafficError> {
        let shape = require_positive("shape", shape)?;
        let scale = require_positive("scale", scale)?;
        Ok(HoldingDist { law: Law::Gamma { shape, scale }, mean: shape * scale })
    }

    pub fn erlang(shape: u32, rate: f64) -> Result<Self, TrafficError> {
        if shape == 0 {
            return Err(TrafficError::BadErlangShape(0.0));
        }
        let rate = require_positive("rate", rate)?;
        Ok(HoldingDist { law: Law::Erlang { shape, rate }, mean: shape as f64 / rate })
    }

    /// Builds a distribution of the given kind with the requested mean.
    ///
    /// `shape_hint` carries the second parameter where one exists: sigma for
    /// log-normal, shape k for gamma, integer shape m for Erlang. It is
    /// ignored for exponential.
    pub fn from_mean(
        kind: HoldingKind,
        mean_ms: f64,
        shape_hint: Option<f64>,
    ) -> Result<Self, TrafficError> {
        let mean_ms = require_positive("mean", mean_ms)?;
        match kind {
            HoldingKind::Exponential => Self::exponential(1.0 / mean_ms),
            HoldingKind::Lognormal => {
                let sigma = shape_hint.unwrap_or(0.5);
                let sigma = require_positive("sigma", sigma)?;
                // mean = exp(mu + sigma^2/2)
                Self::lognormal(mean_ms.ln() - 0.5 * sigma * sigma, sigma)
            }
            HoldingKind::Gamma => {
                let shape = shape_hint.unwrap_or(2.0);
                let shape = require_positive("shape", shape)?;
                Self::gamma(shape, mean_ms / shape)
            }
            HoldingKind::Erlang => {
                let shape = shape_hint.unwrap_or(2.0);
                if shape.fract() != 0.0 || shape < 1.0 || shape > u32::MAX as f64 {
                    return Err(TrafficError::BadErlangShape(shape));
                }
                Self::erlang(shape as u32, shape / mean_ms)
            }
        }
    }

    pub fn kind(&self) -> HoldingKind {
        match self.law {
            Law::Exponential { .. } => HoldingKind::Exponential,
            Law::Lognormal { .. } => HoldingKind::Lognormal,
            Law::Gamma { .. } => HoldingKind::Gamma,
            Law::Erlang { .. } => HoldingKind::Erlang,
        }
    }

    /// Analytic mean in ms.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// The shape-like second parameter, if the law has one.
    pub fn shape_param(&self) -> Option<f64> {
        match self.law {
            Law::Exponential { .. } => None,
            Law::Lognormal { sigma, .. } => Some(sigma),
            Law::Gamma { shape, .. } => Some(shape),
            Law::Erlang { shape, .. } => Some(shape as f64),
        }
    }

    /// CDF of the holding duration at time `t_ms`.
    pub fn cdf(&self, t_ms: f64) -> f64 {
        assert!(t_ms >= 0.0, "cdf argument must be nonnegative, got {t_ms}");
        if t_ms == 0.0 {
            return 0.0;
        }
        match self.law {
            Law::Exponential { rate } => -(-rate * t_ms).exp_m1(),
            Law::Lognormal { mu, sigma } => {
                0.5 * erfc(-(t_ms.ln() - mu) / (sigma * std::f64::consts::SQRT_2))
            }
            Law::Gamma { shape, scale } => reg_lower_gamma(shape, t_ms / scale),
            Law::Erlang { shape, rate } => reg_lower_gamma(shape as f64, rate * t_ms),
        }
    }

    /// Probability that the change ending this period lands on sample
    /// `gap` (counted from the period start), i.e. in ((gap-1)t_s, gap*t_s].
    pub fn change_pmf(&self, gap: u32, t_s: f64) -> f64 {
        assert!(gap >= 1, "change sample must be at least 1");
        (self.cdf(gap as f64 * t_s) - self.cdf((gap - 1) as f64 * t_s)).max(0.0)
    }

    /// Probability that the period outlasts `gap` whole samples.
    pub fn survival_beyond(&self, gap: u32, t_s: f64) -> f64 {
        1.0 - self.cdf(gap as f64 * t_s)
    }

    /// Draws one holding duration in ms.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.law {
            Law::Exponential { rate } => exp_variate(rate, rng),
            Law::Lognormal { mu, sigma } => {
                rand_distr::LogNormal::new(mu, sigma).expect("validated params").sample(rng)
            }
            Law::Gamma { shape, scale } => {
                rand_distr::Gamma::new(shape, scale).expect("validated params").sample(rng)
            }
            Law::Erlang { shape, rate } => {
                (0..shape).map(|_| exp_variate(rate, rng)).sum()
            }
        }
    }
}

fn exp_variate<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    // inverse CDF; random::<f64>() is in [0, 1) so the log argument stays positive
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// The alternating idle/busy traffic process: the idle-duration law (each
/// idle period ends in an arrival), the busy-duration law (each busy period
/// ends in a departure) and the prior probability that the channel is busy
/// when sensing starts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficModel {
    pub idle: HoldingDist,
    pub busy: HoldingDist,
    p_b: f64,
}

impl TrafficModel {
    pub fn new(idle: HoldingDist, busy: HoldingDist, p_b: f64) -> Result<Self, TrafficError> {
        if !(0.0..=1.0).contains(&p_b) || !p_b.is_finite() {
            return Err(TrafficError::BadPrior(p_b));
        }
        Ok(TrafficModel { idle, busy, p_b })
    }

    pub fn p_b(&self) -> f64 {
        self.p_b
    }

    pub fn p_e(&self) -> f64 {
        1.0 - self.p_b
    }

    /// The law governing the period the channel is in while `busy`.
    pub fn law(&self, busy: bool) -> &HoldingDist {
        if busy {
            &self.busy
        } else {
            &self.idle
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp5() -> HoldingDist {
        HoldingDist::from_mean(HoldingKind::Exponential, 5.0, None).unwrap()
    }

    #[test]
    fn exponential_cdf_closed_form() {
        let d = exp5();
        assert_eq!(d.cdf(0.0), 0.0);
        let want = 1.0 - (-1.0f64).exp();
        assert!((d.cdf(5.0) - want).abs() < 1e-15);
    }

    #[test]
    fn erlang_cdf_closed_form() {
        // shape 2, mean 5 => rate 0.4; F(5) = 1 - e^{-2}(1 + 2)
        let d = HoldingDist::from_mean(HoldingKind::Erlang, 5.0, Some(2.0)).unwrap();
        let want = 1.0 - (-2.0f64).exp() * 3.0;
        assert!((d.cdf(5.0) - want).abs() < 1e-13);
    }

    #[test]
    fn change_pmf_exponential_values() {
        let d = exp5();
        let p1 = d.change_pmf(1, 1.0);
        let p2 = d.change_pmf(2, 1.0);
        assert!((p1 - 0.181_269_246_922_018_14).abs() < 1e-15);
        assert!((p2 - 0.148_410_707_042_342_56).abs() < 1e-15);
    }

    #[test]
    fn survival_values() {
        let d = exp5();
        assert_eq!(d.survival_beyond(0, 1.0), 1.0);
        assert!((d.survival_beyond(20, 1.0) - 0.018_315_638_888_734_18).abs() < 1e-15);
        let e = HoldingDist::from_mean(HoldingKind::Erlang, 5.0, Some(2.0)).unwrap();
        let want = (-2.0f64).exp() * 3.0;
        assert!((e.survival_beyond(5, 1.0) - want).abs() < 1e-13);
    }

    #[test]
    fn from_mean_round_trips() {
        for kind in HoldingKind::ALL {
            let d = HoldingDist::from_mean(kind, 5.0, Some(2.0)).unwrap();
            assert!((d.mean() - 5.0).abs() < 1e-12, "{kind:?} mean {}", d.mean());
        }
        let ln = HoldingDist::from_mean(HoldingKind::Lognormal, 5.0, Some(0.5)).unwrap();
        if let Law::Lognormal { mu, .. } = ln.law {
            assert!((mu - 1.484_437_912_434_100_4).abs() < 1e-12);
        } else {
            panic!("expected lognormal");
        }
        let er = HoldingDist::from_mean(HoldingKind::Erlang, 5.0, Some(2.0)).unwrap();
        if let Law::Erlang { rate, .. } = er.law {
            assert!((rate - 0.4).abs() < 1e-15);
        } else {
            panic!("expected erlang");
        }
    }

    #[test]
    fn from_mean_rejects_bad_params() {
        assert!(HoldingDist::from_mean(HoldingKind::Exponential, 0.0, None).is_err());
        assert!(HoldingDist::from_mean(HoldingKind::Erlang, 5.0, Some(1.5)).is_err());
        assert!(TrafficModel::new(exp5(), exp5(), 1.5).is_err());
    }

    #[test]
    fn sample_mean_law_of_large_numbers() {
        let d = exp5();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 5.0).abs() < 0.05, "empirical mean {mean}");
    }

    #[test]
    fn sample_matches_cdf_ks_distance() {
        for kind in HoldingKind::ALL {
            let d = HoldingDist::from_mean(kind, 5.0, Some(2.0)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let n = 100_000;
            let mut draws: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
            draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut ks: f64 = 0.0;
            for (i, &t) in draws.iter().enumerate() {
                let emp_hi = (i + 1) as f64 / n as f64;
                let emp_lo = i as f64 / n as f64;
                let th = d.cdf(t);
                ks = ks.max((emp_hi - th).abs()).max((th - emp_lo).abs());
            }
            assert!(ks < 0.01, "{kind:?} KS distance {ks}");
        }
    }

    #[test]
    fn erlang_samples_positive() {
        let d = HoldingDist::from_mean(HoldingKind::Erlang, 5.0, Some(2.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert!(d.sample(&mut rng) > 0.0);
        }
    }

    proptest! {
        #[test]
        fn pmf_telescopes_to_one(kind_idx in 0usize..4, mean in 0.5f64..50.0, horizon in 1u32..200) {
            let kind = HoldingKind::ALL[kind_idx];
            let d = HoldingDist::from_mean(kind, mean, Some(2.0)).unwrap();
            let t_s = 1.0;
            let total: f64 = (1..=horizon).map(|g| d.change_pmf(g, t_s)).sum::<f64>()
                + d.survival_beyond(horizon, t_s);
            prop_assert!((total - 1.0).abs() < 1e-12, "total {} for {:?}", total, kind);
        }

        #[test]
        fn cdf_nondecreasing(kind_idx in 0usize..4, mean in 0.5f64..50.0) {
            let kind = HoldingKind::ALL[kind_idx];
            let d = HoldingDist::from_mean(kind, mean, Some(2.0)).unwrap();
            let mut prev = 0.0;
            for i in 0..1000 {
                let t = i as f64 * 0.1;
                let c = d.cdf(t);
                prop_assert!(c >= prev - 1e-15);
                prop_assert!((0.0..=1.0).contains(&c));
                prev = c;
            }
        }
    }
}
