//! Planar 3-link manipulator: rigid-body dynamics, RK4 integration and the
//! contingency events injected during a run.
//!
//! Joint angles are relative (link `i` is measured from link `i-1`), the first
//! joint is measured from the horizontal and gravity acts along `-y`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LINKS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("mass matrix is not positive definite at q = {q:?} (check link parameters)")]
    SingularMassMatrix { q: [f64; LINKS] },
    #[error("integration step must be positive, got dt = {0}")]
    NonPositiveStep(f64),
    #[error("non-finite state produced by the step starting at t = {t}")]
    NonFinite { t: f64 },
    #[error("link index {0} out of range (expected 1..=3)")]
    LinkOutOfRange(usize),
    #[error("event is not a forced displacement")]
    WrongEventKind,
    #[error("invalid manipulator parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub q: [f64; LINKS],
    pub qdot: [f64; LINKS],
    pub t: f64,
}

impl PlantState {
    pub fn at_rest(q: [f64; LINKS]) -> Self {
        Self { q, qdot: [0.0; LINKS], t: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().chain(&self.qdot).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulatorParams {
    pub masses: [f64; LINKS],
    pub lengths: [f64; LINKS],
    /// Distance from each joint to its link's center of mass.
    pub com: [f64; LINKS],
    pub gravity: f64,
    pub friction: [f64; LINKS],
}

impl Default for ManipulatorParams {
    fn default() -> Self {
        Self {
            masses: [1.0, 0.8, 0.5],
            lengths: [0.5, 0.4, 0.3],
            com: [0.25, 0.2, 0.15],
            gravity: 9.81,
            friction: [0.05; LINKS],
        }
    }
}

impl ManipulatorParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        if self.masses.iter().any(|m| !(*m > 0.0)) {
            return Err(PlantError::InvalidParams("masses must be > 0"));
        }
        if self.lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(PlantError::InvalidParams("lengths must be > 0"));
        }
        if self.friction.iter().any(|f| !(*f >= 0.0)) {
            return Err(PlantError::InvalidParams("friction must be >= 0"));
        }
        if !self.gravity.is_finite() || self.com.iter().any(|c| !c.is_finite()) {
            return Err(PlantError::InvalidParams("gravity and centers of mass must be finite"));
        }
        Ok(())
    }

    /// Rotational inertia of link `i` about its center of mass (slender rod).
    pub fn rod_inertia(&self, i: usize) -> f64 {
        self.masses[i] * self.lengths[i] * self.lengths[i] / 12.0
    }
}

/// Terms of `M(q) qdd + c(q, qd) + g(q) + F qd = tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms {
    pub mass: [[f64; LINKS]; LINKS],
    pub velocity_product: [f64; LINKS],
    pub gravity: [f64; LINKS],
}

fn absolute_angles(q: &[f64; LINKS]) -> [f64; LINKS] {
    [q[0], q[0] + q[1], q[0] + q[1] + q[2]]
}

/// Mass matrix, velocity-product and gravity vectors from the COM Jacobians.
pub fn dynamics_terms(state: &PlantState, params: &ManipulatorParams) -> DynamicsTerms {
    let th = absolute_angles(&state.q);
    let qd = &state.qdot;
    let thd = [qd[0], qd[0] + qd[1], qd[0] + qd[1] + qd[2]];
    let (s, c) = (th.map(f64::sin), th.map(f64::cos));

    let mut mass = [[0.0; LINKS]; LINKS];
    let mut velocity_product = [0.0; LINKS];
    let mut gravity = [0.0; LINKS];

    for i in 0..LINKS {
        // Linear Jacobian of COM i: column j sums the lever arms from joint j on.
        let mut jx = [0.0; LINKS];
        let mut jy = [0.0; LINKS];
        for j in 0..=i {
            for k in j..i {
                jx[j] -= params.lengths[k] * s[k];
                jy[j] += params.lengths[k] * c[k];
            }
            jx[j] -= params.com[i] * s[i];
            jy[j] += params.com[i] * c[i];
        }
        // Centripetal part of the COM acceleration (Jdot * qdot).
        let mut ax = -params.com[i] * c[i] * thd[i] * thd[i];
        let mut ay = -params.com[i] * s[i] * thd[i] * thd[i];
        for k in 0..i {
            ax -= params.lengths[k] * c[k] * thd[k] * thd[k];
            ay -= params.lengths[k] * s[k] * thd[k] * thd[k];
        }

        let m = params.masses[i];
        let inertia = params.rod_inertia(i);
        for a in 0..LINKS {
            for b in 0..LINKS {
                mass[a][b] += m * (jx[a] * jx[b] + jy[a] * jy[b]);
                // Angular Jacobian of a planar chain: ones up to link i.
                if a <= i && b <= i {
                    mass[a][b] += inertia;
                }
            }
            velocity_product[a] += m * (jx[a] * ax + jy[a] * ay);
            gravity[a] += m * params.gravity * jy[a];
        }
    }

    DynamicsTerms { mass, velocity_product, gravity }
}

/// Total mechanical energy (kinetic + potential, zero at y = 0).
pub fn mechanical_energy(state: &PlantState, params: &ManipulatorParams) -> f64 {
    let terms = dynamics_terms(state, params);
    let mut kinetic = 0.0;
    for a in 0..LINKS {
        for b in 0..LINKS {
            kinetic += 0.5 * state.qdot[a] * terms.mass[a][b] * state.qdot[b];
        }
    }
    let th = absolute_angles(&state.q);
    let mut potential = 0.0;
    let mut y = 0.0;
    for i in 0..LINKS {
        potential += params.masses[i] * params.gravity * (y + params.com[i] * th[i].sin());
        y += params.lengths[i] * th[i].sin();
    }
    kinetic + potential
}

/// Solves `m x = rhs` for a symmetric positive definite 3x3 matrix.
fn cholesky_solve(
    m: &[[f64; LINKS]; LINKS],
    rhs: &[f64; LINKS],
) -> Option<[f64; LINKS]> {
    let mut l = [[0.0; LINKS]; LINKS];
    for i in 0..LINKS {
        for j in 0..=i {
            let mut sum = m[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    let mut y = [0.0; LINKS];
    for i in 0..LINKS {
        let mut sum = rhs[i];
        for k in 0..i {
            sum -= l[i][k] * y[k];
        }
        y[i] = sum / l[i][i];
    }
    let mut x = [0.0; LINKS];
    for i in (0..LINKS).rev() {
        let mut sum = y[i];
        for k in i + 1..LINKS {
            sum -= l[k][i] * x[k];
        }
        x[i] = sum / l[i][i];
    }
    Some(x)
}

/// Returns `(qdot, qddot)` for the given joint torques.
pub fn manipulator_dynamics(
    state: &PlantState,
    torque: &[f64; LINKS],
    params: &ManipulatorParams,
) -> Result<([f64; LINKS], [f64; LINKS]), PlantError> {
    let terms = dynamics_terms(state, params);
    let mut rhs = [0.0; LINKS];
    for i in 0..LINKS {
        rhs[i] = torque[i]
            - terms.velocity_product[i]
            - terms.gravity[i]
            - params.friction[i] * state.qdot[i];
    }
    let qddot = cholesky_solve(&terms.mass, &rhs)
        .ok_or(PlantError::SingularMassMatrix { q: state.q })?;
    Ok((state.qdot, qddot))
}

/// One classical Runge-Kutta step with the torque held constant.
pub fn integrate_step(
    state: &PlantState,
    torque: &[f64; LINKS],
    dt: f64,
    params: &ManipulatorParams,
) -> Result<PlantState, PlantError> {
    if !(dt > 0.0) {
        return Err(PlantError::NonPositiveStep(dt));
    }
    let offset = |base: &PlantState, k: &([f64; LINKS], [f64; LINKS]), h: f64| PlantState {
        q: std::array::from_fn(|i| base.q[i] + h * k.0[i]),
        qdot: std::array::from_fn(|i| base.qdot[i] + h * k.1[i]),
        t: base.t + h,
    };

    let k1 = manipulator_dynamics(state, torque, params)?;
    let k2 = manipulator_dynamics(&offset(state, &k1, 0.5 * dt), torque, params)?;
    let k3 = manipulator_dynamics(&offset(state, &k2, 0.5 * dt), torque, params)?;
    let k4 = manipulator_dynamics(&offset(state, &k3, dt), torque, params)?;

    let next = PlantState {
        q: std::array::from_fn(|i| {
            state.q[i] + dt / 6.0 * (k1.0[i] + 2.0 * k2.0[i] + 2.0 * k3.0[i] + k4.0[i])
        }),
        qdot: std::array::from_fn(|i| {
            state.qdot[i] + dt / 6.0 * (k1.1[i] + 2.0 * k2.1[i] + 2.0 * k3.1[i] + k4.1[i])
        }),
        t: state.t + dt,
    };
    if !next.is_finite() {
        return Err(PlantError::NonFinite { t: state.t });
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DisturbanceKind {
    /// Instantaneous jump of the target joint angle (rad).
    ForcedDisplacement { magnitude: f64 },
    /// New per-iteration limit on commanded position change (deg/step).
    RateLimitChange { limit_deg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trigger {
    /// Fires at the first control iteration whose start time is >= this value (s).
    Time(f64),
    /// Fires at this control iteration (1-based: the eleventh iteration is 11).
    Iteration(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceEvent {
    #[serde(flatten)]
    pub kind: DisturbanceKind,
    pub trigger: Trigger,
    /// 1-based link index.
    pub link: usize,
}

impl DisturbanceEvent {
    pub fn validate(&self) -> Result<(), PlantError> {
        if !(1..=LINKS).contains(&self.link) {
            return Err(PlantError::LinkOutOfRange(self.link));
        }
        let finite = match self.kind {
            DisturbanceKind::ForcedDisplacement { magnitude } => magnitude.is_finite(),
            DisturbanceKind::RateLimitChange { limit_deg } => limit_deg.is_finite() && limit_deg > 0.0,
        };
        if !finite {
            return Err(PlantError::InvalidParams("event magnitude must be finite"));
        }
        Ok(())
    }

    /// Whether the event fires at control iteration `index` (0-based) starting at `t`.
    pub fn fires_at(&self, index: usize, t: f64, control_period: f64) -> bool {
        match self.trigger {
            Trigger::Iteration(n) => n >= 1 && index + 1 == n,
            Trigger::Time(at) => {
                let first = (at / control_period - 1e-9).ceil().max(0.0) as usize;
                index == first && t >= at - 1e-9 * control_period
            }
        }
    }
}

pub fn apply_forced_displacement(
    state: &PlantState,
    event: &DisturbanceEvent,
) -> Result<PlantState, PlantError> {
    let DisturbanceKind::ForcedDisplacement { magnitude } = event.kind else {
        return Err(PlantError::WrongEventKind);
    };
    if !(1..=LINKS).contains(&event.link) {
        return Err(PlantError::LinkOutOfRange(event.link));
    }
    let mut next = *state;
    next.q[event.link - 1] += magnitude;
    Ok(next)
}

/// Moves `previous` toward `command` by at most `limit` (all in degrees).
pub fn rate_limit(command: f64, previous: f64, limit: f64) -> f64 {
    debug_assert!(limit > 0.0);
    previous + (command - previous).clamp(-limit, limit)
}
