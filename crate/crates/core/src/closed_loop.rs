//! Closed-loop simulation: control loop at 100 Hz over 1 kHz physics, with a
//! pluggable gain scheduler per control iteration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pid::{pid_step, GainTriple, PidConfig, PidError, PidState};
use crate::plant::{
    apply_forced_displacement, integrate_step, rate_limit, DisturbanceEvent, DisturbanceKind,
    ManipulatorParams, PlantError, PlantState, LINKS,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Pid(#[from] PidError),
    #[error("gain scheduler failed: {0}")]
    Scheduler(String),
    #[error("invalid loop configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub control_period: f64,
    pub physics_substeps: usize,
    pub pid: PidConfig,
    /// Initial per-iteration limit on commanded position change (deg).
    pub rate_limit_deg: f64,
    /// Per-link drive gain from controller output to joint torque (N m per
    /// controller unit). Equalizes the links' effective inertias so that one
    /// gain triple suits every joint.
    pub drive_gain: [f64; LINKS],
}

pub const DEFAULT_DRIVE_GAIN: [f64; LINKS] = [2.0, 0.25, 0.05];

impl Default for LoopConfig {
    fn default() -> Self {
        Self { control_period: 0.01, physics_substeps: 10, pid: PidConfig::default(), rate_limit_deg: 3.0, drive_gain: DEFAULT_DRIVE_GAIN }
    }
}

impl LoopConfig {
    pub fn iterations(&self, duration: f64) -> usize {
        (duration / self.control_period).round() as usize
    }
}

/// Per-link reference: a step (or a linear ramp when `ramp_time > 0`) from
/// the initial angles to the targets, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub initial_deg: [f64; LINKS],
    pub target_deg: [f64; LINKS],
    #[serde(default)]
    pub ramp_time: f64,
}

impl Reference {
    pub fn step(initial_deg: [f64; LINKS], target_deg: [f64; LINKS]) -> Self {
        Self { initial_deg, target_deg, ramp_time: 0.0 }
    }

    pub fn at(&self, t: f64) -> [f64; LINKS] {
        let frac = if self.ramp_time > 0.0 { (t / self.ramp_time).clamp(0.0, 1.0) } else { 1.0 };
        std::array::from_fn(|i| self.initial_deg[i] + frac * (self.target_deg[i] - self.initial_deg[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkFeatures {
    /// Setpoint minus joint angle (rad).
    pub error: f64,
    /// Backward difference of the error (rad/s); zero on the first iteration.
    pub error_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduledGains {
    pub applied: [GainTriple; LINKS],
    /// Per-link proposals before fusion, when the scheduler fuses them.
    pub proposed: Option<[GainTriple; LINKS]>,
}

pub trait GainScheduler {
    fn schedule(
        &mut self,
        iteration: usize,
        t: f64,
        features: &[LinkFeatures; LINKS],
    ) -> Result<ScheduledGains, SimError>;
}

impl<F> GainScheduler for F
where
    F: FnMut(usize, f64, &[LinkFeatures; LINKS]) -> [GainTriple; LINKS],
{
    fn schedule(&mut self, iteration: usize, t: f64, features: &[LinkFeatures; LINKS]) -> Result<ScheduledGains, SimError> {
        Ok(ScheduledGains { applied: self(iteration, t, features), proposed: None })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    /// Unlimited reference command (deg).
    pub target_deg: [f64; LINKS],
    /// Rate-limited setpoint seen by the PIDs (deg).
    pub setpoint_deg: [f64; LINKS],
    pub q_deg: [f64; LINKS],
    pub features: [LinkFeatures; LINKS],
    pub proposed: Option<[GainTriple; LINKS]>,
    pub gains: [GainTriple; LINKS],
    /// Applied joint torque (N m).
    pub torque: [f64; LINKS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub control_period: f64,
    pub expected_iterations: usize,
    pub initial_deg: [f64; LINKS],
    pub samples: Vec<Sample>,
    /// Joint angles after the last integrated iteration (deg).
    pub final_q_deg: [f64; LINKS],
    /// Set when the run stopped early on a numerical failure.
    pub aborted: Option<String>,
}

impl Trajectory {
    pub fn is_complete(&self) -> bool {
        self.aborted.is_none() && self.samples.len() == self.expected_iterations
    }

    pub fn torques(&self, link: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.torque[link]).collect()
    }

    /// Task error `target - q` (rad) per sample.
    pub fn task_errors(&self, link: usize) -> Vec<f64> {
        self.samples.iter().map(|s| (s.target_deg[link] - s.q_deg[link]).to_radians()).collect()
    }
}

pub struct Simulation<'a> {
    pub params: &'a ManipulatorParams,
    pub config: &'a LoopConfig,
    pub reference: &'a Reference,
    pub events: &'a [DisturbanceEvent],
    pub duration: f64,
}

impl Simulation<'_> {
    /// Runs the loop to completion. Numerical failures inside the loop end
    /// the run early and are reported through `Trajectory::aborted`.
    pub fn run(&self, scheduler: &mut dyn GainScheduler) -> Result<Trajectory, SimError> {
        let cfg = self.config;
        if !(cfg.control_period > 0.0) || cfg.physics_substeps == 0 || !(self.duration > 0.0) {
            return Err(SimError::Config("control period, substeps and duration must be positive".into()));
        }
        if cfg.drive_gain.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(SimError::Config("drive gains must be positive".into()));
        }
        if !(cfg.rate_limit_deg > 0.0) {
            return Err(SimError::Config("rate limit must be positive".into()));
        }
        for ev in self.events {
            ev.validate()?;
        }
        self.params.validate()?;

        let n = cfg.iterations(self.duration);
        let dt = cfg.control_period / cfg.physics_substeps as f64;
        let mut state = PlantState::at_rest(self.reference.initial_deg.map(f64::to_radians));
        let mut setpoint = self.reference.initial_deg;
        let mut limit = cfg.rate_limit_deg;
        let mut pids = [PidState::default(); LINKS];
        let mut previous_error: Option<[f64; LINKS]> = None;
        let mut samples = Vec::with_capacity(n);
        let mut aborted = None;

        for k in 0..n {
            let t = k as f64 * cfg.control_period;
            state.t = t;
            for ev in self.events.iter().filter(|ev| ev.fires_at(k, t, cfg.control_period)) {
                match ev.kind {
                    DisturbanceKind::ForcedDisplacement { .. } => state = apply_forced_displacement(&state, ev)?,
                    DisturbanceKind::RateLimitChange { limit_deg } => limit = limit_deg,
                }
            }

            let target = self.reference.at(t);
            setpoint = std::array::from_fn(|i| rate_limit(target[i], setpoint[i], limit));
            let error: [f64; LINKS] = std::array::from_fn(|i| setpoint[i].to_radians() - state.q[i]);
            let features = std::array::from_fn(|i| LinkFeatures {
                error: error[i],
                error_rate: previous_error.map_or(0.0, |p| (error[i] - p[i]) / cfg.control_period),
            });
            previous_error = Some(error);

            let scheduled = scheduler.schedule(k, t, &features)?;
            let mut torque = [0.0; LINKS];
            for i in 0..LINKS {
                let (u, next) = pid_step(error[i], &pids[i], &scheduled.applied[i], cfg.control_period, &cfg.pid)?;
                torque[i] = cfg.drive_gain[i] * u;
                pids[i] = next;
            }

            samples.push(Sample {
                t,
                target_deg: target,
                setpoint_deg: setpoint,
                q_deg: state.q.map(f64::to_degrees),
                features,
                proposed: scheduled.proposed,
                gains: scheduled.applied,
                torque,
            });

            let mut failed = None;
            for _ in 0..cfg.physics_substeps {
                match integrate_step(&state, &torque, dt, self.params) {
                    Ok(next) => state = next,
                    Err(e) => {
                        failed = Some(e);
                        break;
                    }
                }
            }
            if let Some(e) = failed {
                aborted = Some(format!("iteration {k}: {e}"));
                break;
            }
        }

        Ok(Trajectory {
            control_period: cfg.control_period,
            expected_iterations: n,
            initial_deg: self.reference.initial_deg,
            samples,
            final_q_deg: state.q.map(f64::to_degrees),
            aborted,
        })
    }
}
