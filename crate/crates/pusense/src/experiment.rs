//! The experiment runner behind the CLI subcommands: it turns a parsed
//! configuration into CSV files whose '#'-prefixed headers record every
//! value needed to recompute the data rows.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, FileConfig};
use crate::detector::{
    self, eta_grid_spanning, np_threshold, uncond_pd, uncond_pfa, DetectorError, SensingConfig,
};
use crate::hypothesis::HypothesisError;
use crate::montecarlo::{run_trials, McError, McMode};
use crate::numerics::NumericsError;
use crate::traffic::{HoldingDist, HoldingKind, TrafficModel};

/// What went wrong, mapped onto the stable exit-code contract: 2 for
/// configuration problems, 3 for convergence failures, 4 for estimation
/// failures.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Convergence(String),
    #[error("{0}")]
    Estimation(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) | RunError::Io { .. } => 2,
            RunError::Convergence(_) => 3,
            RunError::Estimation(_) => 4,
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.to_string())
    }
}

impl From<DetectorError> for RunError {
    fn from(e: DetectorError) -> Self {
        match e {
            DetectorError::Numerics(NumericsError::NoBracket { .. })
            | DetectorError::Numerics(NumericsError::NoConvergence { .. }) => {
                RunError::Convergence(e.to_string())
            }
            other => RunError::Config(other.to_string()),
        }
    }
}

impl From<HypothesisError> for RunError {
    fn from(e: HypothesisError) -> Self {
        RunError::Config(e.to_string())
    }
}

impl From<McError> for RunError {
    fn from(e: McError) -> Self {
        match e {
            McError::EmptyClass { .. } => RunError::Estimation(e.to_string()),
            McError::NoTrials => RunError::Config(e.to_string()),
        }
    }
}

fn config_err(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

/// 17 significant digits, enough to round-trip any f64.
fn f17(x: f64) -> String {
    format!("{x:.16e}")
}

/// The effective traffic parameters a CSV header records: enough to
/// rebuild the exact model.
struct TrafficDesc {
    idle_kind: HoldingKind,
    idle_mean_ms: f64,
    idle_shape: Option<f64>,
    busy_kind: HoldingKind,
    busy_mean_ms: f64,
    busy_shape: Option<f64>,
    p_b: f64,
}

impl TrafficDesc {
    fn new(model: &TrafficModel, idle_mean_ms: f64, busy_mean_ms: f64) -> Self {
        TrafficDesc {
            idle_kind: model.idle.kind(),
            idle_mean_ms,
            idle_shape: model.idle.shape_param(),
            busy_kind: model.busy.kind(),
            busy_mean_ms,
            busy_shape: model.busy.shape_param(),
            p_b: model.p_b(),
        }
    }

    fn from_config(file: &FileConfig, model: &TrafficModel) -> Self {
        Self::new(model, file.traffic.idle.mean_ms, file.traffic.busy.mean_ms)
    }
}

fn render_csv(
    desc: &TrafficDesc,
    config: &SensingConfig,
    extras: &[(&str, String)],
    columns: &str,
    rows: &[String],
) -> String {
    let mut out = String::new();
    let mut line = |key: &str, value: String| {
        out.push_str("# ");
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&value);
        out.push('\n');
    };
    line("traffic.idle.kind", desc.idle_kind.name().to_string());
    line("traffic.idle.mean_ms", desc.idle_mean_ms.to_string());
    if let Some(shape) = desc.idle_shape {
        line("traffic.idle.shape", shape.to_string());
    }
    line("traffic.busy.kind", desc.busy_kind.name().to_string());
    line("traffic.busy.mean_ms", desc.busy_mean_ms.to_string());
    if let Some(shape) = desc.busy_shape {
        line("traffic.busy.shape", shape.to_string());
    }
    line("traffic.p_b", desc.p_b.to_string());
    line("sensing.samples", config.samples.to_string());
    line("sensing.sample_ms", config.sample_ms.to_string());
    line("sensing.snr_db", config.snr_db.to_string());
    line("sensing.max_changes", config.max_changes.to_string());
    line("sensing.mode", config.mode.name().to_string());
    for (key, value) in extras {
        line(key, value.clone());
    }
    out.push_str(columns);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, content: &str) -> Result<(), RunError> {
    std::fs::write(path, content).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })?;
    println!("wrote {}", path.display());
    Ok(())
}

fn ensure_dir(path: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(path).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// An explicit grid must be finite and strictly descending; otherwise a
/// default grid with `points` entries spanning `sigmas` deviations.
fn resolve_grid(
    config: &SensingConfig,
    explicit: Option<&[f64]>,
    points: Option<usize>,
    sigmas: f64,
    section: &str,
) -> Result<Vec<f64>, RunError> {
    if let Some(grid) = explicit {
        if grid.is_empty() {
            return Err(config_err(format!("{section}.eta must not be empty")));
        }
        if grid.iter().any(|e| !e.is_finite()) || grid.windows(2).any(|w| w[0] <= w[1]) {
            return Err(config_err(format!(
                "{section}.eta must be finite and sorted strictly descending"
            )));
        }
        return Ok(grid.to_vec());
    }
    let points = points.unwrap_or(if sigmas < 6.0 { 10 } else { 201 });
    if points < 2 {
        return Err(config_err(format!("{section}.grid_points must be at least 2, got {points}")));
    }
    Ok(eta_grid_spanning(config, points, sigmas))
}

fn curve_rows(
    model: &TrafficModel,
    config: &SensingConfig,
    grid: &[f64],
) -> Result<Vec<String>, RunError> {
    let curve = detector::roc(model, config, grid)?;
    Ok(curve
        .points
        .iter()
        .map(|p| format!("{},{},{},{}", f17(p.eta), f17(p.pfa), f17(p.pd), config.max_changes))
        .collect())
}

/// One ROC file per requested change cap.
pub fn run_roc(file: &FileConfig, out_dir: &Path) -> Result<u8, RunError> {
    let section = file
        .roc
        .as_ref()
        .ok_or_else(|| config_err("missing [roc] section"))?;
    if section.change_caps.is_empty() {
        return Err(config_err("roc.change_caps must not be empty"));
    }
    let model = file.traffic_model()?;
    let base = file.sensing_config()?;
    let desc = TrafficDesc::from_config(file, &model);
    ensure_dir(out_dir)?;
    for &cap in &section.change_caps {
        let config = base
            .with_max_changes(cap)
            .map_err(|e| config_err(format!("roc.change_caps: {e}")))?;
        let grid =
            resolve_grid(&config, section.eta.as_deref(), section.grid_points, 6.0, "roc")?;
        let rows = curve_rows(&model, &config, &grid)?;
        let content = render_csv(&desc, &config, &[], "eta,pfa,pd,N", &rows);
        write_file(&out_dir.join(format!("roc_n{cap}.csv")), &content)?;
    }
    Ok(0)
}

/// Thresholds holding the detection probability at the target, swept over
/// SNR and change cap. A solver failure flags the row as a comment and
/// turns the final exit code into 3.
pub fn run_threshold(file: &FileConfig, out_dir: &Path) -> Result<u8, RunError> {
    let section = file
        .threshold
        .as_ref()
        .ok_or_else(|| config_err("missing [threshold] section"))?;
    if section.snr_db.is_empty() {
        return Err(config_err("threshold.snr_db must not be empty"));
    }
    if section.change_caps.is_empty() {
        return Err(config_err("threshold.change_caps must not be empty"));
    }
    if !(section.target_pd > 0.0 && section.target_pd < 1.0) {
        return Err(config_err(format!(
            "threshold.target_pd must lie strictly inside (0, 1), got {}",
            section.target_pd
        )));
    }
    let model = file.traffic_model()?;
    let base = file.sensing_config()?;
    let desc = TrafficDesc::from_config(file, &model);
    ensure_dir(out_dir)?;
    let mut rows = Vec::new();
    let mut flagged = 0u32;
    for &snr_db in &section.snr_db {
        if !snr_db.is_finite() {
            return Err(config_err(format!("threshold.snr_db contains {snr_db}")));
        }
        for &cap in &section.change_caps {
            let config = SensingConfig::new(
                base.samples,
                base.sample_ms,
                snr_db,
                cap,
                base.mode,
            )
            .map_err(|e| config_err(format!("threshold.change_caps: {e}")))?;
            match np_threshold(&model, &config, section.target_pd) {
                Ok(point) => rows.push(format!(
                    "{},{},{},{}",
                    f17(snr_db),
                    cap,
                    f17(point.eta),
                    f17(point.pfa)
                )),
                Err(DetectorError::Numerics(e)) => {
                    flagged += 1;
                    rows.push(format!(
                        "# solver failed at snr_db = {snr_db}, N = {cap}: {e}"
                    ));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    let extras = [("threshold.target_pd", section.target_pd.to_string())];
    let content = render_csv(&desc, &base, &extras, "snr_db,N,eta,pfa", &rows);
    write_file(&out_dir.join("threshold.csv"), &content)?;
    Ok(if flagged > 0 { 3 } else { 0 })
}

/// One ROC file per holding-time model, all at the traffic section's
/// means and the sensing section's change cap.
pub fn run_models(file: &FileConfig, out_dir: &Path) -> Result<u8, RunError> {
    let section = file
        .models
        .as_ref()
        .ok_or_else(|| config_err("missing [models] section"))?;
    if section.kinds.is_empty() {
        return Err(config_err("models.kinds must not be empty"));
    }
    let mut seen = BTreeSet::new();
    let mut kinds = Vec::new();
    for &kind in &section.kinds {
        if seen.insert(kind.name()) {
            kinds.push(kind);
        } else {
            eprintln!("warning: duplicate model '{}' in models.kinds ignored", kind.name());
        }
    }
    let config = file.sensing_config()?;
    ensure_dir(out_dir)?;
    for kind in kinds {
        let shape = match kind {
            HoldingKind::Exponential => None,
            HoldingKind::Lognormal => section.lognormal_sigma,
            HoldingKind::Gamma => section.gamma_shape,
            HoldingKind::Erlang => section.erlang_shape,
        };
        let idle = HoldingDist::from_mean(kind, file.traffic.idle.mean_ms, shape)
            .map_err(|e| config_err(format!("models ({} idle): {e}", kind.name())))?;
        let busy = HoldingDist::from_mean(kind, file.traffic.busy.mean_ms, shape)
            .map_err(|e| config_err(format!("models ({} busy): {e}", kind.name())))?;
        let model = TrafficModel::new(idle, busy, file.traffic.p_b)
            .map_err(|e| config_err(format!("traffic.p_b: {e}")))?;
        let desc =
            TrafficDesc::new(&model, file.traffic.idle.mean_ms, file.traffic.busy.mean_ms);
        let grid =
            resolve_grid(&config, section.eta.as_deref(), section.grid_points, 6.0, "models")?;
        let rows = curve_rows(&model, &config, &grid)?;
        let content = render_csv(&desc, &config, &[], "eta,pfa,pd,N", &rows);
        write_file(&out_dir.join(format!("model_{}.csv", kind.name())), &content)?;
    }
    Ok(0)
}

/// Monte Carlo check of the closed-form averages at a threshold grid.
/// Exits 0 only when every surrogate deviation stays within three
/// analytic binomial deviations and every full-sample deviation stays
/// within the configured budget.
pub fn run_validate(
    file: &FileConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<u8, RunError> {
    let section = file
        .validate
        .as_ref()
        .ok_or_else(|| config_err("missing [validate] section"))?;
    if section.trials < 10_000 {
        return Err(config_err(format!(
            "validate.trials must be at least 10000, got {}",
            section.trials
        )));
    }
    let seed = seed_override
        .or(section.seed)
        .ok_or_else(|| config_err("validate.seed is required (set it or pass --seed)"))?;
    let budget = section.full_sample_budget.unwrap_or(0.03);
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(config_err(format!(
            "validate.full_sample_budget must be strictly positive, got {budget}"
        )));
    }
    let modes = section
        .modes
        .clone()
        .unwrap_or_else(|| vec![McMode::GaussianSurrogate, McMode::FullSample]);
    if modes.is_empty() {
        return Err(config_err("validate.modes must not be empty"));
    }
    let model = file.traffic_model()?;
    let config = file.sensing_config()?;
    let desc = TrafficDesc::from_config(file, &model);
    let (idle_table, busy_table) = config.tables(&model)?;
    let grid = resolve_grid(
        &config,
        section.eta.as_deref(),
        section.eta_points,
        2.0,
        "validate",
    )?;
    ensure_dir(out_dir)?;

    let mut rows = Vec::new();
    let mut failures = 0u32;
    let mut checks = 0u32;
    for &mode in &modes {
        for &eta in &grid {
            let est = run_trials(&model, &config, eta, section.trials, mode, seed)?;
            let pfa = uncond_pfa(eta, &idle_table, &config)?;
            let pd = uncond_pd(eta, &busy_table, &config)?;
            let (tol_fa, tol_d) = match mode {
                McMode::GaussianSurrogate => (
                    3.0 * (pfa * (1.0 - pfa) / est.trials_used_idle as f64).sqrt(),
                    3.0 * (pd * (1.0 - pd) / est.trials_used_busy as f64).sqrt(),
                ),
                McMode::FullSample => (budget, budget),
            };
            let ok = (est.pfa_hat - pfa).abs() <= tol_fa && (est.pd_hat - pd).abs() <= tol_d;
            checks += 1;
            if !ok {
                failures += 1;
            }
            rows.push(format!(
                "{},{},{},{},{},{},{},{},{}",
                f17(eta),
                mode.name(),
                f17(pfa),
                f17(est.pfa_hat),
                f17(est.stderr_pfa),
                f17(pd),
                f17(est.pd_hat),
                f17(est.stderr_pd),
                u8::from(ok)
            ));
        }
    }
    let extras = [
        ("validate.trials", section.trials.to_string()),
        ("validate.seed", seed.to_string()),
        ("validate.full_sample_budget", budget.to_string()),
    ];
    let content = render_csv(
        &desc,
        &config,
        &extras,
        "eta,mode,pfa,pfa_hat,stderr_pfa,pd,pd_hat,stderr_pd,ok",
        &rows,
    );
    write_file(&out_dir.join("validate.csv"), &content)?;
    if failures == 0 {
        println!("all {checks} checks within tolerance");
        Ok(0)
    } else {
        eprintln!("{failures} of {checks} checks exceeded tolerance");
        Ok(1)
    }
}

/// Achievable throughput over a sensing-time grid; the window length is
/// recomputed from each sensing time and the threshold re-solved to hold
/// the detection target.
pub fn run_throughput(file: &FileConfig, out_dir: &Path) -> Result<u8, RunError> {
    let section = file
        .throughput
        .as_ref()
        .ok_or_else(|| config_err("missing [throughput] section"))?;
    if !(section.frame_ms > 0.0) || !section.frame_ms.is_finite() {
        return Err(config_err(format!(
            "throughput.frame_ms must be strictly positive, got {}",
            section.frame_ms
        )));
    }
    if !(section.gamma_s >= 0.0) || !section.gamma_s.is_finite() {
        return Err(config_err(format!(
            "throughput.gamma_s must be nonnegative, got {}",
            section.gamma_s
        )));
    }
    if !(section.target_pd > 0.0 && section.target_pd < 1.0) {
        return Err(config_err(format!(
            "throughput.target_pd must lie strictly inside (0, 1), got {}",
            section.target_pd
        )));
    }
    if section.tau_ms.is_empty() {
        return Err(config_err("throughput.tau_ms must not be empty"));
    }
    let model = file.traffic_model()?;
    let base = file.sensing_config()?;
    let desc = TrafficDesc::from_config(file, &model);
    ensure_dir(out_dir)?;

    let mut rows = Vec::new();
    for (i, &tau_ms) in section.tau_ms.iter().enumerate() {
        if !(tau_ms > 0.0) || tau_ms > section.frame_ms {
            return Err(config_err(format!(
                "throughput.tau_ms[{i}] = {tau_ms} must lie in (0, frame_ms = {}]",
                section.frame_ms
            )));
        }
        let samples_f = tau_ms / base.sample_ms;
        let samples = samples_f.round();
        if (samples_f - samples).abs() > 1e-9 * samples_f.max(1.0) || samples < 1.0 {
            return Err(config_err(format!(
                "throughput.tau_ms[{i}] = {tau_ms} is not a whole number of samples \
                 (sensing.sample_ms = {})",
                base.sample_ms
            )));
        }
        let config = SensingConfig::new(
            samples as u32,
            base.sample_ms,
            base.snr_db,
            base.max_changes,
            base.mode,
        )
        .map_err(|e| {
            config_err(format!("throughput.tau_ms[{i}] = {tau_ms}: {e}"))
        })?;
        let point = np_threshold(&model, &config, section.target_pd)?;
        let r = detector::throughput(
            &model,
            &config,
            section.frame_ms,
            tau_ms,
            section.gamma_s,
            point.eta,
        )?;
        rows.push(format!("{},{},{}", f17(tau_ms), f17(point.eta), f17(r)));
    }
    let extras = [
        ("throughput.frame_ms", section.frame_ms.to_string()),
        ("throughput.gamma_s", section.gamma_s.to_string()),
        ("throughput.target_pd", section.target_pd.to_string()),
    ];
    let content = render_csv(&desc, &base, &extras, "tau_ms,eta,R", &rows);
    write_file(&out_dir.join("throughput.csv"), &content)?;
    Ok(0)
}

/// Parses the `# key = value` header comments of a CSV produced by this
/// module. Used to replay a file's configuration through the library.
pub fn parse_header(content: &str) -> Vec<(String, String)> {
    content
        .lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| {
            let rest = l.trim_start_matches('#').trim();
            rest.split_once(" = ")
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

pub fn out_path(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypothesis::WeightMode;

    fn fig_config() -> SensingConfig {
        SensingConfig::new(20, 1.0, -5.0, 4, WeightMode::Renewal).unwrap()
    }

    #[test]
    fn grid_resolution_validates_explicit_lists() {
        let config = fig_config();
        let ok = resolve_grid(&config, Some(&[3.0, 2.0, 1.0]), None, 6.0, "roc").unwrap();
        assert_eq!(ok, vec![3.0, 2.0, 1.0]);
        assert!(resolve_grid(&config, Some(&[]), None, 6.0, "roc").is_err());
        assert!(resolve_grid(&config, Some(&[1.0, 2.0]), None, 6.0, "roc").is_err());
        assert!(resolve_grid(&config, Some(&[1.0, 1.0]), None, 6.0, "roc").is_err());
        assert!(resolve_grid(&config, None, Some(1), 6.0, "roc").is_err());
        assert_eq!(resolve_grid(&config, None, None, 6.0, "roc").unwrap().len(), 201);
        assert_eq!(resolve_grid(&config, None, None, 2.0, "validate").unwrap().len(), 10);
    }

    #[test]
    fn rendered_csv_round_trips_through_header_parser() {
        let model = TrafficModel::new(
            HoldingDist::from_mean(HoldingKind::Gamma, 5.0, None).unwrap(),
            HoldingDist::from_mean(HoldingKind::Exponential, 20.0, None).unwrap(),
            0.25,
        )
        .unwrap();
        let desc = TrafficDesc::new(&model, 5.0, 20.0);
        let config = fig_config();
        let content = render_csv(
            &desc,
            &config,
            &[("threshold.target_pd", "0.9".to_string())],
            "a,b",
            &["1,2".to_string()],
        );
        let header = parse_header(&content);
        let get = |k: &str| header.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone());
        assert_eq!(get("traffic.idle.kind").unwrap(), "gamma");
        assert_eq!(get("traffic.idle.shape").unwrap(), "2");
        assert_eq!(get("traffic.busy.kind").unwrap(), "exponential");
        assert_eq!(get("traffic.busy.shape"), None);
        assert_eq!(get("traffic.p_b").unwrap(), "0.25");
        assert_eq!(get("sensing.snr_db").unwrap(), "-5");
        assert_eq!(get("threshold.target_pd").unwrap(), "0.9");
        assert!(content.ends_with("a,b\n1,2\n"));
        assert!(!content.contains('\r'));
    }

    #[test]
    fn row_floats_carry_seventeen_digits() {
        let s = f17(0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
    }
}
