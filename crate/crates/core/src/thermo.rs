//! Information-thermodynamic divergences and the control-quality criteria
//! used by comparison tables and optimizer fitness.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closed_loop::Trajectory;
use crate::plant::LINKS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermoError {
    #[error("absolute continuity violated at support index {0}")]
    AbsoluteContinuity(usize),
    #[error("distributions have different supports ({0} vs {1})")]
    SupportMismatch(usize, usize),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(&'static str),
    #[error("renyi order must be positive and != 1, got {0}")]
    InvalidOrder(f64),
    #[error("temperature kT must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("need at least 2 samples and 2 bins")]
    TooFewSamples,
    #[error("trajectory is truncated ({got} of {expected} iterations)")]
    Truncated { got: usize, expected: usize },
}

/// Nonnegative weights over a finite support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityDistribution {
    weights: Vec<f64>,
    normalized: bool,
}

impl ProbabilityDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self, ThermoError> {
        if weights.is_empty() {
            return Err(ThermoError::InvalidDistribution("empty support"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ThermoError::InvalidDistribution("weights must be finite and nonnegative"));
        }
        Ok(Self { weights, normalized: false })
    }

    /// Normalizes the weights to sum to one.
    pub fn normalized(weights: Vec<f64>) -> Result<Self, ThermoError> {
        let mut d = Self::new(weights)?;
        let total: f64 = d.weights.iter().sum();
        if !(total > 0.0) {
            return Err(ThermoError::InvalidDistribution("total weight is zero"));
        }
        d.weights.iter_mut().for_each(|w| *w /= total);
        d.normalized = true;
        Ok(d)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn check_pair(p: &ProbabilityDistribution, q: &ProbabilityDistribution) -> Result<(), ThermoError> {
    if !(p.normalized && q.normalized) {
        return Err(ThermoError::InvalidDistribution("distributions must be normalized"));
    }
    if p.len() != q.len() {
        return Err(ThermoError::SupportMismatch(p.len(), q.len()));
    }
    Ok(())
}

/// `sum P ln(P/Q)` in nats, with `0 ln(0/q) = 0`.
pub fn kl_divergence(p: &ProbabilityDistribution, q: &ProbabilityDistribution) -> Result<f64, ThermoError> {
    check_pair(p, q)?;
    let mut sum = 0.0;
    for (i, (&pi, &qi)) in p.weights.iter().zip(&q.weights).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(ThermoError::AbsoluteContinuity(i));
        }
        sum += pi * (pi / qi).ln();
    }
    Ok(sum.max(0.0))
}

/// `ln(sum P^a Q^(1-a)) / (a - 1)`.
pub fn renyi_divergence(p: &ProbabilityDistribution, q: &ProbabilityDistribution, alpha: f64) -> Result<f64, ThermoError> {
    if !(alpha > 0.0) || alpha == 1.0 || !alpha.is_finite() {
        return Err(ThermoError::InvalidOrder(alpha));
    }
    check_pair(p, q)?;
    let mut sum = 0.0;
    for (i, (&pi, &qi)) in p.weights.iter().zip(&q.weights).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            if alpha > 1.0 {
                return Err(ThermoError::AbsoluteContinuity(i));
            }
            continue;
        }
        // Ratio form keeps the limit alpha -> 1 well conditioned.
        sum += pi * (pi / qi).powf(alpha - 1.0);
    }
    Ok(sum.ln() / (alpha - 1.0))
}

/// Mean dissipated work `kT * KL(P_F || P_B)`.
pub fn dissipation_work(forward: &ProbabilityDistribution, backward: &ProbabilityDistribution, kt: f64) -> Result<f64, ThermoError> {
    if !(kt > 0.0) || !kt.is_finite() {
        return Err(ThermoError::InvalidTemperature(kt));
    }
    Ok(kt * kl_divergence(forward, backward)?)
}

pub const STEP_HISTOGRAM_BINS: usize = 21;
const LAPLACE_SMOOTHING: f64 = 1e-9;

/// Bin index on symmetric edges over `[-max_abs, max_abs]`; `x` and `-x`
/// always land in mirrored bins.
fn symmetric_bin(x: f64, max_abs: f64, bins: usize) -> usize {
    let half = bins / 2;
    if max_abs == 0.0 {
        return half;
    }
    let width = 2.0 * max_abs / bins as f64;
    if bins % 2 == 1 {
        let k = ((x.abs() / width + 0.5).floor() as usize).min(half);
        if x >= 0.0 { half + k } else { half - k }
    } else {
        let k = ((x.abs() / width).floor() as usize).min(half - 1);
        if x >= 0.0 { half + k } else { half - 1 - k }
    }
}

/// Histograms of forward increments `du` and of time-reversed increments
/// `-du` over identical symmetric bins, Laplace-smoothed so both are strictly
/// positive.
pub fn trajectory_step_distributions(
    signal: &[f64],
    bins: usize,
) -> Result<(ProbabilityDistribution, ProbabilityDistribution), ThermoError> {
    if signal.len() < 2 || bins < 2 {
        return Err(ThermoError::TooFewSamples);
    }
    let increments: Vec<f64> = signal.windows(2).map(|w| w[1] - w[0]).collect();
    let max_abs = increments.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let mut forward = vec![LAPLACE_SMOOTHING; bins];
    let mut backward = vec![LAPLACE_SMOOTHING; bins];
    for d in &increments {
        forward[symmetric_bin(*d, max_abs, bins)] += 1.0;
        backward[symmetric_bin(-*d, max_abs, bins)] += 1.0;
    }
    Ok((ProbabilityDistribution::normalized(forward)?, ProbabilityDistribution::normalized(backward)?))
}

/// KL of the forward/backward increment histograms: an entropy-production
/// proxy for a control signal.
pub fn entropy_production_proxy(signal: &[f64]) -> Result<f64, ThermoError> {
    let (pf, pb) = trajectory_step_distributions(signal, STEP_HISTOGRAM_BINS)?;
    kl_divergence(&pf, &pb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityConfig {
    /// Window length of the local-instability detector (s).
    pub instability_window: f64,
    /// Oscillatory error variation per window that counts as unstable (deg).
    pub instability_threshold_deg: f64,
    /// Settling band as a fraction of each link's step size.
    pub settling_fraction: f64,
    /// Minimum settling band (deg).
    pub settling_floor_deg: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self { instability_window: 0.5, instability_threshold_deg: 5.0, settling_fraction: 0.02, settling_floor_deg: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics {
    /// |target - q| at the end of the run, per link (deg).
    pub final_error_deg: [f64; LINKS],
    /// Sum over links of the integral of t |e| (rad s^2).
    pub itae: f64,
    /// Largest overshoot past the target over all stepped links (%).
    pub overshoot_pct: f64,
    pub settling_time: f64,
    /// Sum over links of the integral of u^2 (N^2 m^2 s).
    pub effort: f64,
    /// Total variation of the control signals (N m).
    pub smoothness: f64,
    /// Forward/backward increment KL of the control signals, summed over links.
    pub entropy_proxy: f64,
    pub unstable_windows: usize,
    pub instability: bool,
    /// Weighted "full control behavior" score in [0, 1], higher is better;
    /// relative to the set of systems it was scored against.
    pub aggregate: f64,
}

impl QualityMetrics {
    pub fn positioning_error(&self) -> f64 {
        self.final_error_deg.iter().sum()
    }

    /// Components entering the aggregate, lower is better, in
    /// [`AGGREGATE_WEIGHTS`] order.
    pub fn components(&self) -> [f64; 5] {
        [self.positioning_error(), self.itae, self.overshoot_pct, self.effort, self.smoothness]
    }
}

/// Weights of positioning error, ITAE, overshoot, effort and smoothness.
pub const AGGREGATE_WEIGHTS: [f64; 5] = [0.35, 0.2, 0.15, 0.15, 0.15];

/// Per-component `[min, max]` across a set of compared systems.
pub type ComponentRanges = [[f64; 2]; 5];

pub fn component_ranges(metrics: &[QualityMetrics]) -> ComponentRanges {
    let mut ranges = [[f64::INFINITY, f64::NEG_INFINITY]; 5];
    for m in metrics {
        for (r, v) in ranges.iter_mut().zip(m.components()) {
            r[0] = r[0].min(v);
            r[1] = r[1].max(v);
        }
    }
    ranges
}

/// `1 - sum w * minmax(component)`; a degenerate range normalizes to 0.
pub fn aggregate_score(metrics: &QualityMetrics, ranges: &ComponentRanges) -> f64 {
    let penalty: f64 = metrics
        .components()
        .iter()
        .zip(ranges)
        .zip(AGGREGATE_WEIGHTS)
        .map(|((v, [lo, hi]), w)| {
            let n = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
            w * n
        })
        .sum();
    1.0 - penalty
}

/// Scores every entry against the min-max ranges of the whole set.
pub fn assign_aggregate_scores(metrics: &mut [QualityMetrics]) {
    let ranges = component_ranges(metrics);
    for m in metrics.iter_mut() {
        m.aggregate = aggregate_score(m, &ranges);
    }
}

/// Weighted sum of each component relative to a baseline run,
/// `sum w * m / max(b, floor)`; 1.0 means "as good as the baseline".
/// Absolute counterpart of the min-max aggregate for scoring one candidate
/// at a time.
pub fn baseline_relative_cost(metrics: &QualityMetrics, baseline: &QualityMetrics) -> f64 {
    const FLOOR: [f64; 5] = [1e-3, 1e-6, 1e-3, 1e-6, 1e-6];
    metrics
        .components()
        .iter()
        .zip(baseline.components())
        .zip(AGGREGATE_WEIGHTS.iter().zip(FLOOR))
        .map(|((m, b), (w, floor))| w * m / b.max(floor))
        .sum()
}

/// Control quality of a completed run.
pub fn control_quality(traj: &Trajectory, config: &QualityConfig) -> Result<QualityMetrics, ThermoError> {
    if !traj.is_complete() {
        return Err(ThermoError::Truncated { got: traj.samples.len(), expected: traj.expected_iterations });
    }
    quality_of_samples(traj, config)
}

/// Metrics over whatever samples exist; aborted runs are always flagged unstable.
pub fn quality_of_samples(traj: &Trajectory, config: &QualityConfig) -> Result<QualityMetrics, ThermoError> {
    if traj.samples.len() < 2 {
        return Err(ThermoError::TooFewSamples);
    }
    let dt = traj.control_period;
    let last = traj.samples.last().expect("non-empty");
    let final_error_deg: [f64; LINKS] = std::array::from_fn(|i| (last.target_deg[i] - traj.final_q_deg[i]).abs());

    let mut itae = 0.0;
    let mut overshoot_pct: f64 = 0.0;
    let mut settling_time: f64 = 0.0;
    let mut effort = 0.0;
    let mut smoothness = 0.0;
    let mut entropy_proxy = 0.0;
    let mut unstable_windows = 0;
    let window = ((config.instability_window / dt).round() as usize).max(2);
    let threshold = config.instability_threshold_deg.to_radians();

    for i in 0..LINKS {
        let errors = traj.task_errors(i);
        let torques = traj.torques(i);
        itae += traj.samples.iter().zip(&errors).map(|(s, e)| s.t * e.abs() * dt).sum::<f64>();
        effort += torques.iter().map(|u| u * u * dt).sum::<f64>();
        smoothness += torques.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>();
        entropy_proxy += entropy_production_proxy(&torques)?;

        let step = last.target_deg[i] - traj.initial_deg[i];
        if step.abs() > 1e-9 {
            let dir = step.signum();
            let excursion = traj
                .samples
                .iter()
                .map(|s| dir * (s.q_deg[i] - s.target_deg[i]))
                .chain(std::iter::once(dir * (traj.final_q_deg[i] - last.target_deg[i])))
                .fold(0.0f64, f64::max);
            overshoot_pct = overshoot_pct.max(100.0 * excursion / step.abs());
        }

        let band = (config.settling_fraction * step.abs()).max(config.settling_floor_deg).to_radians();
        if let Some(k) = errors.iter().rposition(|e| e.abs() > band) {
            settling_time = settling_time.max((k + 1) as f64 * dt);
        }

        for chunk in errors.chunks(window) {
            let tv: f64 = chunk.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
            let net = (chunk[chunk.len() - 1] - chunk[0]).abs();
            if tv - net > threshold {
                unstable_windows += 1;
            }
        }
    }

    Ok(QualityMetrics {
        final_error_deg,
        itae,
        overshoot_pct,
        settling_time,
        effort,
        smoothness,
        entropy_proxy,
        unstable_windows,
        instability: unstable_windows > 0 || traj.aborted.is_some(),
        aggregate: 1.0,
    })
}
