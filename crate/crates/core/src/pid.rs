//! Discrete PID with externally scheduled gains.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PidError {
    #[error("control period must be positive, got dt = {0}")]
    NonPositiveStep(f64),
    #[error("non-finite error signal: {0}")]
    NonFiniteError(f64),
}

/// Proportional, derivative and integral gains of one link's controller.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GainTriple {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
}

impl GainTriple {
    pub const fn new(kp: f64, kd: f64, ki: f64) -> Self {
        Self { kp, kd, ki }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self::new(self.kp * factor, self.kd * factor, self.ki * factor)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.kp, self.kd, self.ki]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// One of the three gain channels of a PID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    P,
    D,
    I,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::P, Channel::D, Channel::I];

    pub fn index(self) -> usize {
        match self {
            Channel::P => 0,
            Channel::D => 1,
            Channel::I => 2,
        }
    }

    /// The partner channel in the cyclic order P -> D -> I -> P.
    pub fn next(self) -> Channel {
        match self {
            Channel::P => Channel::D,
            Channel::D => Channel::I,
            Channel::I => Channel::P,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::P => "kp",
            Channel::D => "kd",
            Channel::I => "ki",
        }
    }

    pub fn parse(s: &str) -> Option<Channel> {
        match s.to_ascii_lowercase().as_str() {
            "p" | "kp" => Some(Channel::P),
            "d" | "kd" => Some(Channel::D),
            "i" | "ki" => Some(Channel::I),
            _ => None,
        }
    }
}

impl GainTriple {
    pub fn get(&self, channel: Channel) -> f64 {
        self.as_array()[channel.index()]
    }
}

/// Per-channel `[min, max]` gain bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainBounds {
    pub kp: [f64; 2],
    pub kd: [f64; 2],
    pub ki: [f64; 2],
}

impl Default for GainBounds {
    fn default() -> Self {
        Self { kp: [0.0, 80.0], kd: [0.0, 6.0], ki: [0.0, 40.0] }
    }
}

impl GainBounds {
    pub fn get(&self, channel: Channel) -> [f64; 2] {
        match channel {
            Channel::P => self.kp,
            Channel::D => self.kd,
            Channel::I => self.ki,
        }
    }

    pub fn is_valid(&self) -> bool {
        Channel::ALL.iter().all(|&c| {
            let [lo, hi] = self.get(c);
            lo.is_finite() && hi.is_finite() && lo < hi
        })
    }

    pub fn midpoint(&self) -> GainTriple {
        GainTriple::from_array(Channel::ALL.map(|c| {
            let [lo, hi] = self.get(c);
            0.5 * (lo + hi)
        }))
    }

    pub fn lower(&self) -> GainTriple {
        GainTriple::from_array(Channel::ALL.map(|c| self.get(c)[0]))
    }

    pub fn upper(&self) -> GainTriple {
        GainTriple::from_array(Channel::ALL.map(|c| self.get(c)[1]))
    }

    pub fn clamp(&self, gains: GainTriple) -> GainTriple {
        GainTriple::from_array(Channel::ALL.map(|c| {
            let [lo, hi] = self.get(c);
            gains.get(c).clamp(lo, hi)
        }))
    }

    pub fn contains(&self, gains: &GainTriple) -> bool {
        Channel::ALL.iter().all(|&c| {
            let [lo, hi] = self.get(c);
            (lo..=hi).contains(&gains.get(c))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidConfig {
    /// Symmetric output saturation (N m).
    pub torque_limit: f64,
    /// Anti-windup bound on the integral accumulator (error s).
    pub integral_bound: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self { torque_limit: 40.0, integral_bound: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    /// `None` until the first step; the first step has no derivative term.
    pub previous_error: Option<f64>,
}

/// Advances the controller by one period and returns the saturated output.
///
/// The integral uses the trapezoid rule with a zero previous error on a fresh
/// state, and the derivative is a backward difference of the error.
pub fn pid_step(
    error: f64,
    state: &PidState,
    gains: &GainTriple,
    dt: f64,
    config: &PidConfig,
) -> Result<(f64, PidState), PidError> {
    if !(dt > 0.0) {
        return Err(PidError::NonPositiveStep(dt));
    }
    if !error.is_finite() {
        return Err(PidError::NonFiniteError(error));
    }
    let previous = state.previous_error.unwrap_or(0.0);
    let integral = (state.integral + 0.5 * (previous + error) * dt)
        .clamp(-config.integral_bound, config.integral_bound);
    let derivative = match state.previous_error {
        Some(prev) => (error - prev) / dt,
        None => 0.0,
    };
    let raw = gains.kp * error + gains.ki * integral + gains.kd * derivative;
    let control = raw.clamp(-config.torque_limit, config.torque_limit);
    Ok((control, PidState { integral, previous_error: Some(error) }))
}
