//! Sample-level simulation of the traffic process and the detector,
//! independent of the closed-form machinery.
//!
//! Each trial draws an initial state, accumulates continuous holding
//! times into status-change samples, then either synthesizes the raw
//! detector samples (full-sample mode) or draws the statistic from its
//! per-class Gaussian (surrogate mode). The surrogate isolates the
//! combinatorial weighting from the Gaussian approximation; the gap
//! between the two modes is the approximation error itself.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{cond_stats, SensingConfig};
use crate::traffic::TrafficModel;

#[derive(Debug, Error)]
pub enum McError {
    #[error("trial count must be at least 1")]
    NoTrials,
    #[error("no usable terminal-{class} trials to estimate from")]
    EmptyClass { class: &'static str },
}

/// Whether a trial synthesizes every raw sample or draws the detector
/// statistic from its class Gaussian directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McMode {
    FullSample,
    GaussianSurrogate,
}

impl McMode {
    pub fn name(self) -> &'static str {
        match self {
            McMode::FullSample => "full_sample",
            McMode::GaussianSurrogate => "gaussian_surrogate",
        }
    }
}

/// One simulated window of the traffic process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub initial_busy: bool,
    /// Samples in [1, window] where the status flipped, in order; may
    /// repeat a sample when two changes landed inside it.
    pub changes: Vec<u32>,
    /// True when two changes mapped to the same sample, which the
    /// discretized model cannot represent.
    pub collided: bool,
    /// Occupancy of each of the window's samples.
    pub busy: Vec<bool>,
}

impl Trace {
    pub fn x(&self) -> u32 {
        self.changes.len() as u32
    }

    pub fn terminal_busy(&self) -> bool {
        self.initial_busy ^ (self.changes.len() % 2 == 1)
    }

    pub fn busy_count(&self) -> u32 {
        self.busy.iter().filter(|&&s| s).count() as u32
    }
}

/// Simulates one window: initial state from the busy prior, a fresh
/// holding time starting at the window start, alternating draws until the
/// accumulated time leaves the window. A change at continuous time t
/// lands on sample ceil(t / t_s); the new state holds from the next
/// sample on.
pub fn gen_trace<R: Rng + ?Sized>(
    model: &TrafficModel,
    config: &SensingConfig,
    rng: &mut R,
) -> Trace {
    let window = config.samples;
    let window_ms = config.window_ms();
    let initial_busy = rng.random::<f64>() < model.p_b();

    let mut changes: Vec<u32> = Vec::new();
    let mut collided = false;
    let mut state = initial_busy;
    let mut t = 0.0;
    loop {
        t += model.law(state).sample(rng);
        if t > window_ms {
            break;
        }
        let g = (t / config.sample_ms).ceil().max(1.0) as u32;
        if g > window {
            break;
        }
        if changes.last() == Some(&g) {
            collided = true;
        }
        changes.push(g);
        state = !state;
        // more changes than samples guarantees a repeat; stop early so a
        // pathological stream of zero-length holdings cannot spin forever
        if changes.len() > window as usize {
            collided = true;
            break;
        }
    }

    let mut busy = Vec::with_capacity(window as usize);
    let mut s = initial_busy;
    let mut next_change = changes.iter().copied().peekable();
    for i in 1..=window {
        while next_change.peek() == Some(&(i - 1)) {
            s = !s;
            next_change.next();
        }
        busy.push(s);
    }

    Trace { initial_busy, changes, collided, busy }
}

/// Empirical estimates over one batch of trials at a single threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub pfa_hat: f64,
    pub pd_hat: f64,
    pub stderr_pfa: f64,
    pub stderr_pd: f64,
    pub trials_used_idle: u64,
    pub trials_used_busy: u64,
    /// Trials whose change count exceeded the configured cap.
    pub trials_discarded: u64,
    /// Trials with two changes inside one sample.
    pub trials_collided: u64,
    pub histogram_idle: BTreeMap<(u32, u32), u64>,
    pub histogram_busy: BTreeMap<(u32, u32), u64>,
}

enum TrialOutcome {
    Collided,
    Excluded,
    Used { terminal_busy: bool, x: u32, b: u32, decided_busy: bool },
}

#[derive(Default)]
struct Tally {
    used_idle: u64,
    used_busy: u64,
    false_alarms: u64,
    detections: u64,
    discarded: u64,
    collided: u64,
    histogram_idle: BTreeMap<(u32, u32), u64>,
    histogram_busy: BTreeMap<(u32, u32), u64>,
}

impl Tally {
    fn add(mut self, outcome: TrialOutcome) -> Self {
        match outcome {
            TrialOutcome::Collided => self.collided += 1,
            TrialOutcome::Excluded => self.discarded += 1,
            TrialOutcome::Used { terminal_busy, x, b, decided_busy } => {
                if terminal_busy {
                    self.used_busy += 1;
                    if decided_busy {
                        self.detections += 1;
                    }
                    *self.histogram_busy.entry((x, b)).or_insert(0) += 1;
                } else {
                    self.used_idle += 1;
                    if decided_busy {
                        self.false_alarms += 1;
                    }
                    *self.histogram_idle.entry((x, b)).or_insert(0) += 1;
                }
            }
        }
        self
    }

    fn merge(mut self, other: Self) -> Self {
        self.used_idle += other.used_idle;
        self.used_busy += other.used_busy;
        self.false_alarms += other.false_alarms;
        self.detections += other.detections;
        self.discarded += other.discarded;
        self.collided += other.collided;
        for (k, v) in other.histogram_idle {
            *self.histogram_idle.entry(k).or_insert(0) += v;
        }
        for (k, v) in other.histogram_busy {
            *self.histogram_busy.entry(k).or_insert(0) += v;
        }
        self
    }
}

fn simulate_one(
    model: &TrafficModel,
    config: &SensingConfig,
    eta: f64,
    mode: McMode,
    seed: u64,
    index: u64,
) -> TrialOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let trace = gen_trace(model, config, &mut rng);
    if trace.collided {
        return TrialOutcome::Collided;
    }
    if trace.x() > config.max_changes {
        return TrialOutcome::Excluded;
    }
    let b = trace.busy_count();
    let energy = match mode {
        McMode::FullSample => {
            let amp = config.gamma_p().sqrt();
            trace
                .busy
                .iter()
                .map(|&s| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let r = if s { amp + noise } else { noise };
                    r * r
                })
                .sum::<f64>()
        }
        McMode::GaussianSurrogate => {
            let (mean, var) = cond_stats(b, config.samples, config.gamma_p());
            Normal::new(mean, var.sqrt()).expect("positive variance").sample(&mut rng)
        }
    };
    TrialOutcome::Used {
        terminal_busy: trace.terminal_busy(),
        x: trace.x(),
        b,
        decided_busy: energy > eta,
    }
}

/// Runs `trials` independent windows at one threshold and tallies both
/// error rates. Trials with more changes than the configured cap are
/// excluded from the estimates and counted, as are trials whose changes
/// collided inside a sample. Each trial consumes its own counter-indexed
/// stream of the seeded generator, so results do not depend on thread
/// count or scheduling.
pub fn run_trials(
    model: &TrafficModel,
    config: &SensingConfig,
    eta: f64,
    trials: u64,
    mode: McMode,
    seed: u64,
) -> Result<McEstimate, McError> {
    if trials == 0 {
        return Err(McError::NoTrials);
    }
    let tally = (0..trials)
        .into_par_iter()
        .fold(Tally::default, |acc, i| acc.add(simulate_one(model, config, eta, mode, seed, i)))
        .reduce(Tally::default, Tally::merge);

    if tally.used_idle == 0 {
        return Err(McError::EmptyClass { class: "idle" });
    }
    if tally.used_busy == 0 {
        return Err(McError::EmptyClass { class: "busy" });
    }
    let pfa_hat = tally.false_alarms as f64 / tally.used_idle as f64;
    let pd_hat = tally.detections as f64 / tally.used_busy as f64;
    Ok(McEstimate {
        pfa_hat,
        pd_hat,
        stderr_pfa: (pfa_hat * (1.0 - pfa_hat) / tally.used_idle as f64).sqrt(),
        stderr_pd: (pd_hat * (1.0 - pd_hat) / tally.used_busy as f64).sqrt(),
        trials_used_idle: tally.used_idle,
        trials_used_busy: tally.used_busy,
        trials_discarded: tally.discarded,
        trials_collided: tally.collided,
        histogram_idle: tally.histogram_idle,
        histogram_busy: tally.histogram_busy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{np_threshold, uncond_pd, uncond_pfa};
    use crate::hypothesis::WeightMode;
    use crate::traffic::{HoldingDist, HoldingKind};

    fn exp_model(mean: f64, p_b: f64) -> TrafficModel {
        TrafficModel::new(
            HoldingDist::from_mean(HoldingKind::Exponential, mean, None).unwrap(),
            HoldingDist::from_mean(HoldingKind::Exponential, mean, None).unwrap(),
            p_b,
        )
        .unwrap()
    }

    fn fig_setup(max_changes: u32) -> (TrafficModel, SensingConfig) {
        let config =
            SensingConfig::new(20, 1.0, -5.0, max_changes, WeightMode::Renewal).unwrap();
        (exp_model(5.0, 0.5), config)
    }

    #[test]
    fn degenerate_prior_fixes_initial_state() {
        let (_, config) = fig_setup(4);
        let model = exp_model(5.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(!gen_trace(&model, &config, &mut rng).initial_busy);
        }
    }

    #[test]
    fn trace_fields_are_consistent() {
        let (model, config) = fig_setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5000 {
            let t = gen_trace(&model, &config, &mut rng);
            assert_eq!(t.busy.len(), 20);
            assert_eq!(t.busy[0], t.initial_busy);
            if !t.collided {
                assert!(t.changes.windows(2).all(|w| w[0] < w[1]));
                let flips =
                    t.busy.windows(2).filter(|w| w[0] != w[1]).count() as u32;
                // changes at the final sample flip nothing observable
                let interior =
                    t.changes.iter().filter(|&&g| g < 20).count() as u32;
                assert_eq!(flips, interior);
            }
        }
    }

    #[test]
    fn first_change_sample_matches_pmf() {
        let (_, config) = fig_setup(4);
        let model = exp_model(5.0, 0.0);
        let n = 100_000u32;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bins = [0u32; 21];
        for _ in 0..n {
            let t = gen_trace(&model, &config, &mut rng);
            match t.changes.first() {
                Some(&g) => bins[g as usize] += 1,
                None => bins[0] += 1,
            }
        }
        let idle = model.law(false);
        for g in 1..=20u32 {
            let p = idle.change_pmf(g, 1.0);
            let obs = bins[g as usize] as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((obs - p).abs() <= 3.0 * se, "sample {g}: obs {obs} vs {p}");
        }
        let p_none = idle.survival_beyond(20, 1.0);
        let obs = bins[0] as f64 / n as f64;
        let se = (p_none * (1.0 - p_none) / n as f64).sqrt();
        assert!((obs - p_none).abs() <= 3.0 * se);
    }

    #[test]
    fn quiet_window_rate_matches_closed_form() {
        let (model, config) = fig_setup(4);
        let n = 1_000_000u32;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut hits = 0u32;
        for _ in 0..n {
            let t = gen_trace(&model, &config, &mut rng);
            if t.x() == 0 && !t.terminal_busy() {
                hits += 1;
            }
        }
        let p = 0.009_157_819_444_367_090_1;
        let obs = hits as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((obs - p).abs() <= 3.0 * se, "obs {obs} vs {p}");
    }

    #[test]
    fn zero_snr_makes_classes_indistinguishable() {
        let model = exp_model(5.0, 0.5);
        let config =
            SensingConfig::new(20, 1.0, f64::NEG_INFINITY, 4, WeightMode::Renewal).unwrap();
        let est =
            run_trials(&model, &config, 20.0, 40_000, McMode::FullSample, 13).unwrap();
        let gap = (est.pfa_hat - est.pd_hat).abs();
        let se = (est.stderr_pfa.powi(2) + est.stderr_pd.powi(2)).sqrt();
        assert!(gap <= 3.0 * se, "gap {gap} vs 3se {}", 3.0 * se);
    }

    #[test]
    fn surrogate_tracks_analytic_averages() {
        let (model, config) = fig_setup(4);
        let (idle, busy) = config.tables(&model).unwrap();
        for eta in [18.0, 21.0, 24.0] {
            let est = run_trials(&model, &config, eta, 50_000, McMode::GaussianSurrogate, 17)
                .unwrap();
            let pfa = uncond_pfa(eta, &idle, &config).unwrap();
            let pd = uncond_pd(eta, &busy, &config).unwrap();
            let tol_fa = (3.0 * est.stderr_pfa).max(0.01);
            let tol_d = (3.0 * est.stderr_pd).max(0.01);
            assert!((est.pfa_hat - pfa).abs() <= tol_fa, "eta {eta}");
            assert!((est.pd_hat - pd).abs() <= tol_d, "eta {eta}");
        }
    }

    #[test]
    fn same_seed_reproduces_everything() {
        let (model, config) = fig_setup(3);
        let a = run_trials(&model, &config, 21.0, 30_000, McMode::FullSample, 99).unwrap();
        let b = run_trials(&model, &config, 21.0, 30_000, McMode::FullSample, 99).unwrap();
        assert_eq!(a, b);
        let c = run_trials(&model, &config, 21.0, 30_000, McMode::FullSample, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn estimates_shrink_like_root_n() {
        let (model, config) = fig_setup(4);
        let (idle, _) = config.tables(&model).unwrap();
        let eta = 21.0;
        let pfa = uncond_pfa(eta, &idle, &config).unwrap();
        let mean_abs_err = |n: u64| {
            let mut acc = 0.0;
            for seed in 200..240 {
                let est =
                    run_trials(&model, &config, eta, n, McMode::GaussianSurrogate, seed)
                        .unwrap();
                acc += (est.pfa_hat - pfa).abs();
            }
            acc / 40.0
        };
        let coarse = mean_abs_err(2_500);
        let fine = mean_abs_err(40_000);
        let ratio = coarse / fine;
        assert!((2.0..8.0).contains(&ratio), "error ratio {ratio} for 16x trials");
    }

    #[test]
    fn empty_class_is_reported() {
        let (_, config) = fig_setup(4);
        // idle forever: no busy-terminal window can ever be observed
        let model = exp_model(1e12, 0.0);
        let err = run_trials(&model, &config, 21.0, 50, McMode::GaussianSurrogate, 1);
        assert!(matches!(err, Err(McError::EmptyClass { class: "busy" })));
        assert!(matches!(
            run_trials(&model, &config, 21.0, 0, McMode::GaussianSurrogate, 1),
            Err(McError::NoTrials)
        ));
    }

    // The analytic weights assume every status change lands in its own
    // sample. Collisions remove multi-change windows preferentially, so
    // the kept-trial class frequencies are tilted against high change
    // counts rather than matching the weights entry-wise.
    #[test]
    fn kept_class_frequencies_match_weight_entries() {
        let (model, config) = fig_setup(4);
        let (idle, busy) = config.tables(&model).unwrap();
        let n = 1_000_000u64;
        let est = run_trials(&model, &config, 21.0, n, McMode::GaussianSurrogate, 23).unwrap();
        for (table, hist, label) in [
            (&idle, &est.histogram_idle, "idle"),
            (&busy, &est.histogram_busy, "busy"),
        ] {
            for (&(x, b), &w) in &table.entries {
                let obs = hist.get(&(x, b)).copied().unwrap_or(0) as f64 / n as f64;
                let se = (w * (1.0 - w) / n as f64).sqrt();
                assert!(
                    (obs - w).abs() <= 4.0 * se,
                    "terminal {label} class ({x},{b}): obs {obs:.6} vs weight {w:.6}, z = {:.1}",
                    (obs - w) / se
                );
            }
        }
    }

    // Windows with more changes than the cap are expected to be rare for
    // this traffic intensity; in fact roughly one window in nine exceeds
    // a cap of 4 when the mean holding time is a quarter of the window.
    #[test]
    fn excluded_fraction_is_small() {
        let (model, config) = fig_setup(4);
        let n = 1_000_000u64;
        let est = run_trials(&model, &config, 21.0, n, McMode::GaussianSurrogate, 29).unwrap();
        let frac = est.trials_discarded as f64 / n as f64;
        assert!(frac < 0.02, "excluded fraction {frac}");
    }

    #[test]
    fn operating_point_smoke_full_sample() {
        let (model, config) = fig_setup(4);
        let point = np_threshold(&model, &config, 0.9).unwrap();
        let est =
            run_trials(&model, &config, point.eta, 100_000, McMode::FullSample, 31).unwrap();
        assert!((est.pd_hat - 0.9).abs() < 0.03, "pd_hat {}", est.pd_hat);
        assert!((est.pfa_hat - point.pfa).abs() < 0.03, "pfa_hat {}", est.pfa_hat);
        let total = est.trials_used_idle
            + est.trials_used_busy
            + est.trials_discarded
            + est.trials_collided;
        assert_eq!(total, 100_000);
    }
}
