//! Energy-detector performance: conditional exceedance probabilities per
//! pattern class, their weighted averages, Neyman-Pearson threshold
//! solving, ROC sweeps and achievable throughput.
//!
//! The detector sums `I` squared samples. Conditioned on the number of
//! busy samples `b`, the statistic is approximately Gaussian with mean
//! `I + b*gamma_p` and variance `2I + 4b*gamma_p` (unit noise power, a
//! constant-power signal while busy), so every probability reduces to a
//! scaled complementary error function averaged over a weight table.

use thiserror::Error;

use crate::hypothesis::{HypothesisError, WeightMode, WeightTable};
use crate::numerics::{bisect, erfc, NumericsError, Tolerance};
use crate::traffic::TrafficModel;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error(transparent)]
    Hypothesis(#[from] HypothesisError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("weight table for the terminal {} state has zero total weight", if *terminal_busy { "busy" } else { "idle" })]
    DegenerateTable { terminal_busy: bool },
    #[error("samples must be at least 1")]
    ZeroSamples,
    #[error("sample duration must be strictly positive, got {0} ms")]
    BadSampleMs(f64),
    #[error("target probability must lie strictly inside (0, 1), got {0}")]
    BadTarget(f64),
    #[error("threshold grid must be nonempty, finite and sorted descending")]
    BadEtaGrid,
    #[error("transmission frame must be positive, got {0} ms")]
    BadFrame(f64),
    #[error("sensing time {tau_ms} ms must lie in (0, {frame_ms}] ms")]
    BadTau { tau_ms: f64, frame_ms: f64 },
    #[error("sensing time {tau_ms} ms does not equal samples x sample duration = {window_ms} ms")]
    TauMismatch { tau_ms: f64, window_ms: f64 },
    #[error("secondary-link SNR must be nonnegative, got {0}")]
    BadGammaS(f64),
}

/// Everything the closed-form side needs to know about the sensing setup:
/// window length in samples, sample duration, primary SNR, the cap on how
/// many status changes are modeled, and the weight mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingConfig {
    pub samples: u32,
    pub sample_ms: f64,
    pub snr_db: f64,
    pub max_changes: u32,
    pub mode: WeightMode,
}

impl SensingConfig {
    pub fn new(
        samples: u32,
        sample_ms: f64,
        snr_db: f64,
        max_changes: u32,
        mode: WeightMode,
    ) -> Result<Self, DetectorError> {
        if samples == 0 {
            return Err(DetectorError::ZeroSamples);
        }
        if !(sample_ms > 0.0) || !sample_ms.is_finite() {
            return Err(DetectorError::BadSampleMs(sample_ms));
        }
        if max_changes > samples {
            return Err(HypothesisError::TooManyChanges { max_changes, window: samples }.into());
        }
        Ok(SensingConfig { samples, sample_ms, snr_db, max_changes, mode })
    }

    /// Linear primary SNR.
    pub fn gamma_p(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }

    /// Sensing window duration in ms.
    pub fn window_ms(&self) -> f64 {
        self.samples as f64 * self.sample_ms
    }

    pub fn with_max_changes(mut self, max_changes: u32) -> Result<Self, DetectorError> {
        if max_changes > self.samples {
            return Err(
                HypothesisError::TooManyChanges { max_changes, window: self.samples }.into()
            );
        }
        self.max_changes = max_changes;
        Ok(self)
    }

    /// Both weight tables (terminal idle, terminal busy) for this setup.
    pub fn tables(&self, model: &TrafficModel) -> Result<(WeightTable, WeightTable), DetectorError> {
        Ok(WeightTable::build_pair(
            model,
            self.samples,
            self.sample_ms,
            self.max_changes,
            self.mode,
        )?)
    }
}

/// One threshold with its induced average false-alarm and detection
/// probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub eta: f64,
    pub pfa: f64,
    pub pd: f64,
}

/// Operating points sorted by descending threshold, so both probabilities
/// are nondecreasing along the curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub config: SensingConfig,
    pub points: Vec<OperatingPoint>,
}

/// Mean and variance of the detector statistic given `b` of the `samples`
/// window samples are busy.
pub fn cond_stats(b: u32, samples: u32, gamma_p: f64) -> (f64, f64) {
    assert!(b <= samples, "busy count {b} exceeds window length {samples}");
    assert!(gamma_p >= 0.0, "linear SNR must be nonnegative, got {gamma_p}");
    let i = samples as f64;
    let s = b as f64 * gamma_p;
    (i + s, 2.0 * i + 4.0 * s)
}

/// P(Y > eta) for a Gaussian with the given moments. This is the
/// conditional false-alarm probability of an idle-terminal class and the
/// conditional detection probability of a busy-terminal class.
pub fn cond_prob_exceed(eta: f64, mean: f64, variance: f64) -> f64 {
    assert!(variance > 0.0, "variance must be strictly positive, got {variance}");
    assert!(eta.is_finite() && mean.is_finite());
    0.5 * erfc((eta - mean) / (2.0 * variance).sqrt())
}

fn uncond_prob(eta: f64, table: &WeightTable, config: &SensingConfig) -> Result<f64, DetectorError> {
    if !(table.total > 0.0) {
        return Err(DetectorError::DegenerateTable { terminal_busy: table.terminal_busy });
    }
    let gamma_p = config.gamma_p();
    let mut acc = 0.0;
    for (&(_x, b), &w) in &table.entries {
        let (mean, var) = cond_stats(b, config.samples, gamma_p);
        acc += w * cond_prob_exceed(eta, mean, var);
    }
    Ok(acc / table.total)
}

/// Average false-alarm probability over the terminal-idle weight table.
pub fn uncond_pfa(
    eta: f64,
    table: &WeightTable,
    config: &SensingConfig,
) -> Result<f64, DetectorError> {
    assert!(!table.terminal_busy, "false-alarm average needs the terminal-idle table");
    uncond_prob(eta, table, config)
}

/// Average detection probability over the terminal-busy weight table.
pub fn uncond_pd(
    eta: f64,
    table: &WeightTable,
    config: &SensingConfig,
) -> Result<f64, DetectorError> {
    assert!(table.terminal_busy, "detection average needs the terminal-busy table");
    uncond_prob(eta, table, config)
}

/// Solves for the threshold at which the average detection probability
/// equals `target_pd`, and reports the operating point it induces.
pub fn np_threshold(
    model: &TrafficModel,
    config: &SensingConfig,
    target_pd: f64,
) -> Result<OperatingPoint, DetectorError> {
    if !(target_pd > 0.0 && target_pd < 1.0) {
        return Err(DetectorError::BadTarget(target_pd));
    }
    let (idle, busy) = config.tables(model)?;
    let gamma_p = config.gamma_p();
    let (mean_lo, _) = cond_stats(0, config.samples, gamma_p);
    let (mean_hi, var_hi) = cond_stats(config.samples, config.samples, gamma_p);
    let lo = mean_lo - 10.0 * var_hi.sqrt();
    let hi = mean_hi + 10.0 * var_hi.sqrt();
    let tol = Tolerance::new(1e-9, 200);
    let mut probe_err = None;
    let eta = bisect(
        |eta| match uncond_pd(eta, &busy, config) {
            Ok(pd) => pd - target_pd,
            Err(e) => {
                probe_err = Some(e);
                f64::NAN
            }
        },
        lo,
        hi,
        &tol,
    );
    if let Some(e) = probe_err {
        return Err(e);
    }
    let eta = eta?;
    let pd = uncond_pd(eta, &busy, config)?;
    let pfa = uncond_pfa(eta, &idle, config)?;
    Ok(OperatingPoint { eta, pfa, pd })
}

/// Default 201-point descending threshold grid spanning six standard
/// deviations past the extreme class means.
pub fn default_eta_grid(config: &SensingConfig) -> Vec<f64> {
    eta_grid(config, 201)
}

/// Descending threshold grid with `points` entries spanning six standard
/// deviations past the extreme class means.
pub fn eta_grid(config: &SensingConfig, points: usize) -> Vec<f64> {
    eta_grid_spanning(config, points, 6.0)
}

/// Descending threshold grid with `points` entries spanning `sigmas`
/// standard deviations past the extreme class means.
pub fn eta_grid_spanning(config: &SensingConfig, points: usize, sigmas: f64) -> Vec<f64> {
    assert!(points >= 2, "grid needs at least two points");
    assert!(sigmas > 0.0);
    let gamma_p = config.gamma_p();
    let (mean_lo, var_lo) = cond_stats(0, config.samples, gamma_p);
    let (mean_hi, var_hi) = cond_stats(config.samples, config.samples, gamma_p);
    let lo = mean_lo - sigmas * var_lo.sqrt();
    let hi = mean_hi + sigmas * var_hi.sqrt();
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|k| hi - k as f64 * step).collect()
}

/// Evaluates the operating point at every threshold of a descending grid.
/// The weight tables are built once and shared across the grid.
pub fn roc(
    model: &TrafficModel,
    config: &SensingConfig,
    eta_grid: &[f64],
) -> Result<RocCurve, DetectorError> {
    if eta_grid.is_empty()
        || eta_grid.iter().any(|e| !e.is_finite())
        || eta_grid.windows(2).any(|w| w[0] <= w[1])
    {
        return Err(DetectorError::BadEtaGrid);
    }
    let (idle, busy) = config.tables(model)?;
    let mut points = Vec::with_capacity(eta_grid.len());
    for &eta in eta_grid {
        points.push(OperatingPoint {
            eta,
            pfa: uncond_pfa(eta, &idle, config)?,
            pd: uncond_pd(eta, &busy, config)?,
        });
    }
    Ok(RocCurve { config: *config, points })
}

/// Achievable throughput in bits/s/Hz of a frame of `frame_ms` whose
/// first `tau_ms` is spent sensing at threshold `eta`: the two
/// correct-decision branches weighted by their table totals, scaled by
/// the fraction of the frame left for transmission.
pub fn throughput(
    model: &TrafficModel,
    config: &SensingConfig,
    frame_ms: f64,
    tau_ms: f64,
    gamma_s: f64,
    eta: f64,
) -> Result<f64, DetectorError> {
    if !(frame_ms > 0.0) || !frame_ms.is_finite() {
        return Err(DetectorError::BadFrame(frame_ms));
    }
    if !(tau_ms > 0.0) || tau_ms > frame_ms {
        return Err(DetectorError::BadTau { tau_ms, frame_ms });
    }
    let window_ms = config.window_ms();
    if (tau_ms - window_ms).abs() > 1e-9 * window_ms.max(1.0) {
        return Err(DetectorError::TauMismatch { tau_ms, window_ms });
    }
    if !(gamma_s >= 0.0) || !gamma_s.is_finite() {
        return Err(DetectorError::BadGammaS(gamma_s));
    }
    let (idle, busy) = config.tables(model)?;
    let pfa = uncond_pfa(eta, &idle, config)?;
    let pd = uncond_pd(eta, &busy, config)?;
    let rate_idle = (1.0 + gamma_s).log2();
    let rate_busy = (1.0 + gamma_s / (1.0 + config.gamma_p())).log2();
    let r = (idle.total * (1.0 - pfa) * rate_idle + busy.total * (1.0 - pd) * rate_busy)
        * (frame_ms - tau_ms)
        / frame_ms;
    Ok(r)
}
