//! Quantum-inspired genetic selection of the correlation type and its
//! per-channel scaling factors.
//!
//! Each candidate type is searched separately. An individual is a register of
//! Q-bits, each an angle `theta` with `P(1) = sin^2(theta)`. Observation
//! collapses the register into level indices of the scaling grid; rotation
//! gates pull the angles toward the best observation so far and a NOT gate
//! (`theta -> pi/2 - theta`) supplies mutation.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CorrelationSpec, CorrelationType};
use crate::sco::GaConfig;

const ROTATION: f64 = 0.05 * std::f64::consts::PI;
const THETA_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeResult {
    #[serde(rename = "type")]
    pub kind: CorrelationType,
    /// Best spec found for this type; `None` when every observation was unstable.
    pub best: Option<CorrelationSpec>,
    /// Best fitness, `-inf` when unstable.
    pub fitness: f64,
    /// Distinct specs evaluated.
    pub evaluations: usize,
}

#[derive(Debug, Error)]
pub enum QgaError {
    #[error("at least one candidate correlation type required")]
    NoCandidates,
    #[error("invalid scaling search: {0}")]
    InvalidSearch(&'static str),
    #[error("invalid GA configuration: {0}")]
    Config(&'static str),
    #[error("every candidate correlation was unstable")]
    AllUnstable { table: Vec<TypeResult> },
    #[error("candidate evaluation failed: {0}")]
    Evaluation(String),
}

/// Discrete scaling-factor grid searched for each channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingSearch {
    pub bounds: [f64; 2],
    pub levels: usize,
    pub lag: usize,
}

impl Default for ScalingSearch {
    fn default() -> Self {
        Self { bounds: [0.5, 2.0], levels: 5, lag: 1 }
    }
}

impl ScalingSearch {
    fn validate(&self) -> Result<(), QgaError> {
        let [lo, hi] = self.bounds;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(QgaError::InvalidSearch("bounds must satisfy 0 < lo <= hi"));
        }
        if self.levels < 1 {
            return Err(QgaError::InvalidSearch("at least one level"));
        }
        if self.lag < 1 {
            return Err(QgaError::InvalidSearch("lag must be >= 1"));
        }
        Ok(())
    }

    /// Equally spaced levels including both bounds.
    pub fn grid(&self) -> Vec<f64> {
        let [lo, hi] = self.bounds;
        if self.levels == 1 {
            return vec![lo];
        }
        (0..self.levels).map(|k| lo + (hi - lo) * k as f64 / (self.levels - 1) as f64).collect()
    }

    fn bits_per_channel(&self) -> usize {
        (usize::BITS - (self.levels - 1).leading_zeros()) as usize
    }

    fn level_of(&self, bits: &[bool]) -> usize {
        if bits.is_empty() {
            return 0;
        }
        let v = bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        let max = (1usize << bits.len()) - 1;
        ((v * (self.levels - 1)) as f64 / max as f64).round() as usize
    }

    pub fn spec(&self, kind: CorrelationType, levels: [usize; 3]) -> CorrelationSpec {
        let grid = self.grid();
        CorrelationSpec { kind, lag: self.lag, scaling: levels.map(|k| grid[k]) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QgaSelection {
    pub best: CorrelationSpec,
    pub fitness: f64,
    /// One row per candidate type, in candidate order.
    pub table: Vec<TypeResult>,
}

fn observe(thetas: &[f64], rng: &mut ChaCha8Rng) -> Vec<bool> {
    thetas.iter().map(|t| rng.gen::<f64>() < t.sin().powi(2)).collect()
}

/// Selects the correlation type and scaling factors maximizing `evaluate`.
///
/// `evaluate` returns a fitness (larger is better); a non-finite value marks
/// the spec unstable. Uses `population`, `generations`, `mutation_rate` and
/// `seed` of the GA configuration.
pub fn qga_select_correlation<F>(
    candidates: &[CorrelationType],
    search: &ScalingSearch,
    ga: &GaConfig,
    mut evaluate: F,
) -> Result<QgaSelection, QgaError>
where
    F: FnMut(&CorrelationSpec) -> Result<f64, String>,
{
    if candidates.is_empty() {
        return Err(QgaError::NoCandidates);
    }
    search.validate()?;
    if ga.population < 1 {
        return Err(QgaError::Config("population must be >= 1"));
    }
    if !(0.0..=1.0).contains(&ga.mutation_rate) {
        return Err(QgaError::Config("mutation rate must lie in [0, 1]"));
    }

    let bits = search.bits_per_channel();
    let width = 3 * bits;
    let mut table = Vec::with_capacity(candidates.len());

    for (ci, &kind) in candidates.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(ga.seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(ci as u64 + 1)));
        let mut memo: BTreeMap<[usize; 3], f64> = BTreeMap::new();
        let mut thetas = vec![vec![FRAC_PI_2 / 2.0; width]; ga.population];
        let mut best: Option<(Vec<bool>, [usize; 3], f64)> = None;

        for _ in 0..=ga.generations {
            let observed: Vec<Vec<bool>> = thetas.iter().map(|t| observe(t, &mut rng)).collect();
            for obs in &observed {
                let levels: [usize; 3] = std::array::from_fn(|c| search.level_of(&obs[c * bits..(c + 1) * bits]));
                let fitness = match memo.get(&levels) {
                    Some(&f) => f,
                    None => {
                        let f = evaluate(&search.spec(kind, levels)).map_err(QgaError::Evaluation)?;
                        let f = if f.is_finite() { f } else { f64::NEG_INFINITY };
                        memo.insert(levels, f);
                        f
                    }
                };
                let improves = match &best {
                    None => true,
                    Some((_, bl, bf)) => fitness > *bf || (fitness == *bf && levels < *bl),
                };
                if improves {
                    best = Some((obs.clone(), levels, fitness));
                }
            }
            let (best_bits, _, _) = best.as_ref().expect("at least one observation");
            for (theta, obs) in thetas.iter_mut().zip(&observed) {
                for j in 0..width {
                    if obs[j] != best_bits[j] {
                        theta[j] += if best_bits[j] { ROTATION } else { -ROTATION };
                    }
                    theta[j] = theta[j].clamp(THETA_MARGIN, FRAC_PI_2 - THETA_MARGIN);
                }
                if width > 0 && rng.gen::<f64>() < ga.mutation_rate {
                    let j = rng.gen_range(0..width);
                    theta[j] = FRAC_PI_2 - theta[j];
                }
            }
        }

        let (_, levels, fitness) = best.expect("at least one observation");
        table.push(TypeResult {
            kind,
            best: fitness.is_finite().then(|| search.spec(kind, levels)),
            fitness,
            evaluations: memo.len(),
        });
    }

    // First candidate wins ties.
    let winner = table
        .iter()
        .filter(|r| r.best.is_some())
        .fold(None::<&TypeResult>, |acc, r| match acc {
            Some(a) if a.fitness >= r.fitness => Some(a),
            _ => Some(r),
        });
    match winner {
        Some(w) => Ok(QgaSelection { best: w.best.expect("filtered"), fitness: w.fitness, table }),
        None => Err(QgaError::AllUnstable { table }),
    }
}
