//! Soft computing optimizer: a real-coded genetic algorithm, teaching-signal
//! search on the nominal plant and knowledge-base fitting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closed_loop::{LinkFeatures, LoopConfig, Reference, SimError, Simulation, Trajectory};
use crate::fuzzy::{FuzzyError, KnowledgeBase, MembershipFunction};
use crate::pid::{Channel, GainBounds, GainTriple};
use crate::plant::{ManipulatorParams, LINKS};

#[derive(Debug, Error)]
pub enum ScoError {
    #[error("invalid GA configuration: {0}")]
    Config(&'static str),
    #[error("teaching signal search failed: {0}")]
    TeachingSearchFailed(String),
    #[error("teaching signal is empty")]
    EmptyTeachingSignal,
    #[error("teaching signal must come from a standard (disturbance-free) scenario")]
    NotStandard,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
    #[error("malformed teaching signal CSV: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    /// Mutation standard deviation as a fraction of each dimension's range.
    pub mutation_scale: f64,
    pub elite: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 40,
            generations: 100,
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            mutation_scale: 0.1,
            elite: 2,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), ScoError> {
        if self.population < 2 {
            return Err(ScoError::Config("population must be >= 2"));
        }
        if self.elite < 1 || self.elite >= self.population {
            return Err(ScoError::Config("elite count must be in 1..population"));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(ScoError::Config("rates must lie in [0, 1]"));
        }
        if !(self.mutation_scale >= 0.0) {
            return Err(ScoError::Config("mutation scale must be >= 0"));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    /// Best-so-far fitness after the initial population and each generation.
    pub history: Vec<f64>,
}

fn rank_value(f: f64) -> f64 {
    if f.is_nan() { f64::NEG_INFINITY } else { f }
}

/// Maximizes `fitness` over the box `bounds`.
///
/// Tournament selection (size 2), uniform crossover, gaussian mutation
/// clipped to the bounds, elitism. Non-finite fitness ranks last. `seeds`
/// replace the first random individuals of the initial population.
pub fn ga_run<F>(
    mut fitness: F,
    bounds: &[(f64, f64)],
    config: &GaConfig,
    seeds: &[Vec<f64>],
) -> Result<GaOutcome, ScoError>
where
    F: FnMut(&[f64]) -> f64,
{
    config.validate()?;
    if bounds.is_empty() {
        return Err(ScoError::Config("need at least one dimension"));
    }
    if bounds.iter().any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi)) {
        return Err(ScoError::Config("bounds must be finite with lo <= hi"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let clip = |x: f64, d: usize| x.clamp(bounds[d].0, bounds[d].1);

    let mut population: Vec<Vec<f64>> = (0..config.population)
        .map(|i| match seeds.get(i) {
            Some(s) if s.len() == bounds.len() => s.iter().enumerate().map(|(d, &x)| clip(x, d)).collect(),
            _ => bounds.iter().map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo }).collect(),
        })
        .collect();
    let mut scores: Vec<f64> = population.iter().map(|x| rank_value(fitness(x))).collect();

    let best_index = |scores: &[f64]| {
        (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b })
    };
    let mut history = Vec::with_capacity(config.generations + 1);
    history.push(scores[best_index(&scores)]);

    for _ in 0..config.generations {
        let mut order: Vec<usize> = (0..population.len()).collect();
        // Stable sort: equal scores keep population order.
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));

        let mut next: Vec<Vec<f64>> = order[..config.elite].iter().map(|&i| population[i].clone()).collect();
        let mut next_scores: Vec<f64> = order[..config.elite].iter().map(|&i| scores[i]).collect();

        let tournament = |rng: &mut ChaCha8Rng| {
            let a = rng.gen_range(0..population.len());
            let b = rng.gen_range(0..population.len());
            if scores[a] >= scores[b] { a } else { b }
        };
        while next.len() < config.population {
            let pa = tournament(&mut rng);
            let pb = tournament(&mut rng);
            let mut child = population[pa].clone();
            if rng.gen::<f64>() < config.crossover_rate {
                for (d, gene) in child.iter_mut().enumerate() {
                    if rng.gen::<bool>() {
                        *gene = population[pb][d];
                    }
                }
            }
            for (d, gene) in child.iter_mut().enumerate() {
                if rng.gen::<f64>() < config.mutation_rate {
                    let sigma = config.mutation_scale * (bounds[d].1 - bounds[d].0);
                    let z: f64 = rng.sample(StandardNormal);
                    *gene = clip(*gene + sigma * z, d);
                }
            }
            next_scores.push(rank_value(fitness(&child)));
            next.push(child);
        }
        population = next;
        scores = next_scores;
        history.push(scores[best_index(&scores)].max(*history.last().expect("non-empty")));
    }

    let b = best_index(&scores);
    Ok(GaOutcome { best: population[b].clone(), best_fitness: scores[b], history })
}

/// Nominal situation a teaching signal is searched on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachingScenario {
    pub params: ManipulatorParams,
    pub loop_config: LoopConfig,
    pub reference: Reference,
    pub duration: f64,
    pub bounds: GainBounds,
    /// Number of equal time segments of the piecewise-constant schedule.
    pub segments: usize,
    /// Weight of the control-effort term in the cost.
    pub effort_weight: f64,
    /// Search-only penalty on segment-to-segment gain changes, per unit of
    /// normalized change. Not part of the reported cost.
    pub variation_weight: f64,
}

impl TeachingScenario {
    pub fn standard(reference: Reference, duration: f64) -> Self {
        Self {
            params: ManipulatorParams::default(),
            loop_config: LoopConfig::default(),
            reference,
            duration,
            bounds: GainBounds::default(),
            segments: 10,
            effort_weight: 0.01,
            variation_weight: 0.0,
        }
    }

    fn decode(&self, x: &[f64]) -> Vec<[GainTriple; LINKS]> {
        (0..self.segments)
            .map(|s| {
                std::array::from_fn(|i| {
                    let base = (i * self.segments + s) * 3;
                    GainTriple::new(x[base], x[base + 1], x[base + 2])
                })
            })
            .collect()
    }

    fn encode_constant(&self, g: GainTriple) -> Vec<f64> {
        (0..LINKS * self.segments).flat_map(|_| g.as_array()).collect()
    }

    fn gene_bounds(&self) -> Vec<(f64, f64)> {
        (0..LINKS * self.segments)
            .flat_map(|_| Channel::ALL.map(|c| {
                let [lo, hi] = self.bounds.get(c);
                (lo, hi)
            }))
            .collect()
    }

    /// Total normalized gain variation between consecutive segments.
    pub fn schedule_variation(&self, schedule: &[[GainTriple; LINKS]]) -> f64 {
        schedule
            .windows(2)
            .map(|w| {
                (0..LINKS)
                    .map(|i| {
                        Channel::ALL
                            .iter()
                            .map(|&c| {
                                let [lo, hi] = self.bounds.get(c);
                                (w[1][i].get(c) - w[0][i].get(c)).abs() / (hi - lo)
                            })
                            .sum::<f64>()
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    /// Runs the nominal plant under a piecewise-constant schedule.
    pub fn simulate(&self, schedule: &[[GainTriple; LINKS]]) -> Result<Trajectory, SimError> {
        let n = self.loop_config.iterations(self.duration).max(1);
        let segments = schedule.len();
        let sim = Simulation {
            params: &self.params,
            config: &self.loop_config,
            reference: &self.reference,
            events: &[],
            duration: self.duration,
        };
        let mut sched = |k: usize, _t: f64, _f: &[LinkFeatures; LINKS]| schedule[(k * segments / n).min(segments - 1)];
        sim.run(&mut sched)
    }

    /// `J = sum over links of (integral t|e| dt + lambda integral u^2 dt)`.
    pub fn cost(&self, traj: &Trajectory) -> f64 {
        if !traj.is_complete() {
            return f64::INFINITY;
        }
        let dt = traj.control_period;
        traj.samples
            .iter()
            .map(|s| {
                (0..LINKS)
                    .map(|i| {
                        let e = (s.target_deg[i] - s.q_deg[i]).to_radians();
                        s.t * e.abs() * dt + self.effort_weight * s.torque[i] * s.torque[i] * dt
                    })
                    .sum::<f64>()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachingRow {
    pub t: f64,
    pub reference_deg: [f64; LINKS],
    /// Controller error, setpoint minus joint angle (rad).
    pub error: [f64; LINKS],
    pub gains: [GainTriple; LINKS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeachingSignal {
    pub rows: Vec<TeachingRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeachingReport {
    pub cost: f64,
    /// Cost of holding the midpoint gains over the whole run.
    pub baseline_cost: f64,
    pub fitness_history: Vec<f64>,
}

/// One training pair for knowledge-base fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub inputs: [f64; 2],
    pub gains: GainTriple,
}

impl TeachingSignal {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let rows = traj
            .samples
            .iter()
            .map(|s| TeachingRow {
                t: s.t,
                reference_deg: s.target_deg,
                error: s.features.map(|f| f.error),
                gains: s.gains,
            })
            .collect();
        Self { rows }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// (error, error-rate) -> gains pairs for the given 0-based links, the
    /// rate being the same backward difference the control loop uses.
    pub fn samples(&self, links: &[usize]) -> Vec<TrainingSample> {
        let mut out = Vec::with_capacity(self.rows.len() * links.len());
        for &i in links {
            let mut previous: Option<(f64, f64)> = None;
            for row in &self.rows {
                let rate = previous.map_or(0.0, |(t, e)| (row.error[i] - e) / (row.t - t));
                out.push(TrainingSample { inputs: [row.error[i], rate], gains: row.gains[i] });
                previous = Some((row.t, row.error[i]));
            }
        }
        out
    }

    pub fn csv_header() -> String {
        let mut cols = vec!["time".to_string()];
        cols.extend((1..=LINKS).map(|i| format!("reference_{i}")));
        cols.extend((1..=LINKS).map(|i| format!("error_{i}")));
        for i in 1..=LINKS {
            cols.extend(["kp", "kd", "ki"].map(|c| format!("{c}_{i}")));
        }
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header();
        out.push('\n');
        for row in &self.rows {
            let mut cols = vec![row.t.to_string()];
            cols.extend(row.reference_deg.iter().map(|v| v.to_string()));
            cols.extend(row.error.iter().map(|v| v.to_string()));
            for g in &row.gains {
                cols.extend(g.as_array().iter().map(|v| v.to_string()));
            }
            out.push_str(&cols.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses [`TeachingSignal::to_csv`] output; leading `#` lines are skipped.
    pub fn from_csv(text: &str) -> Result<Self, ScoError> {
        let mut lines = text.lines().skip_while(|l| l.starts_with('#'));
        let header = lines.next().ok_or_else(|| ScoError::Csv("missing header".into()))?;
        if header.trim() != Self::csv_header() {
            return Err(ScoError::Csv("unexpected header".into()));
        }
        let width = 1 + 2 * LINKS + 3 * LINKS;
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| ScoError::Csv(format!("row {}: {e}", n + 1)))?;
            if vals.len() != width {
                return Err(ScoError::Csv(format!("row {} has {} columns, expected {width}", n + 1, vals.len())));
            }
            rows.push(TeachingRow {
                t: vals[0],
                reference_deg: [vals[1], vals[2], vals[3]],
                error: [vals[4], vals[5], vals[6]],
                gains: std::array::from_fn(|i| GainTriple::new(vals[7 + 3 * i], vals[8 + 3 * i], vals[9 + 3 * i])),
            });
        }
        if rows.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(ScoError::Csv("time must be strictly increasing".into()));
        }
        Ok(Self { rows })
    }
}

/// Searches piecewise-constant gain schedules minimizing the teaching cost
/// and returns the best schedule with its error trace.
pub fn generate_teaching_signal(
    scenario: &TeachingScenario,
    ga: &GaConfig,
) -> Result<(TeachingSignal, TeachingReport), ScoError> {
    if scenario.segments == 0 {
        return Err(ScoError::Config("at least one schedule segment required"));
    }
    if !scenario.bounds.is_valid() {
        return Err(ScoError::Config("invalid gain bounds"));
    }
    let baseline_schedule = vec![[scenario.bounds.midpoint(); LINKS]; scenario.segments];
    let baseline_cost = scenario.cost(&scenario.simulate(&baseline_schedule)?);

    let seeds = vec![scenario.encode_constant(scenario.bounds.midpoint())];
    let outcome = ga_run(
        |x| {
            let schedule = scenario.decode(x);
            match scenario.simulate(&schedule) {
                Ok(traj) => -scenario.cost(&traj) - scenario.variation_weight * scenario.schedule_variation(&schedule),
                Err(_) => f64::NEG_INFINITY,
            }
        },
        &scenario.gene_bounds(),
        ga,
        &seeds,
    )?;

    let best = scenario.decode(&outcome.best);
    let traj = scenario.simulate(&best)?;
    let cost = scenario.cost(&traj);
    if !cost.is_finite() {
        return Err(ScoError::TeachingSearchFailed(
            traj.aborted.unwrap_or_else(|| "error diverged".to_string()),
        ));
    }
    Ok((
        TeachingSignal::from_trajectory(&traj),
        TeachingReport { cost, baseline_cost, fitness_history: outcome.history },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KbTrainingReport {
    pub rmse: [f64; 3],
    /// RMSE as a fraction of each channel's gain range.
    pub rmse_fraction: [f64; 3],
    pub fitness_history: Vec<f64>,
}

/// How a template's tunable parameters map onto a flat gene vector.
struct KbEncoding<'a> {
    template: &'a KnowledgeBase,
}

impl KbEncoding<'_> {
    fn gene_bounds(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for var in &self.template.inputs {
            let [lo, hi] = var.universe;
            let span = hi - lo;
            let spacing = span / var.mfs.len().max(2).saturating_sub(1) as f64;
            for mf in &var.mfs {
                match mf {
                    MembershipFunction::Gaussian { .. } => {
                        out.push((lo, hi));
                        out.push((0.05 * spacing, 2.0 * spacing));
                    }
                    MembershipFunction::Triangular { .. } => {
                        out.push((lo, hi));
                        out.push((0.05 * spacing, 3.0 * spacing));
                        out.push((0.05 * spacing, 3.0 * spacing));
                    }
                }
            }
        }
        for _ in &self.template.rules {
            for c in Channel::ALL {
                let [lo, hi] = self.template.bounds.get(c);
                out.push((lo, hi));
            }
        }
        out
    }

    fn encode(&self, kb: &KnowledgeBase) -> Vec<f64> {
        let mut out = Vec::new();
        for var in &kb.inputs {
            for mf in &var.mfs {
                match *mf {
                    MembershipFunction::Gaussian { center, width } => out.extend([center, width]),
                    MembershipFunction::Triangular { left, peak, right } => out.extend([peak, peak - left, right - peak]),
                }
            }
        }
        for rule in &kb.rules {
            out.extend(rule.consequent.as_array());
        }
        out
    }

    fn decode(&self, x: &[f64]) -> KnowledgeBase {
        let mut kb = self.template.clone();
        let mut k = 0;
        for var in &mut kb.inputs {
            for mf in &mut var.mfs {
                match mf {
                    MembershipFunction::Gaussian { center, width } => {
                        *center = x[k];
                        *width = x[k + 1];
                        k += 2;
                    }
                    MembershipFunction::Triangular { left, peak, right } => {
                        *peak = x[k];
                        *left = x[k] - x[k + 1];
                        *right = x[k] + x[k + 2];
                        k += 3;
                    }
                }
            }
        }
        for rule in &mut kb.rules {
            rule.consequent = GainTriple::new(x[k], x[k + 1], x[k + 2]);
            k += 3;
        }
        kb
    }
}

fn rmse(kb: &KnowledgeBase, samples: &[TrainingSample]) -> [f64; 3] {
    let mut sq = [0.0; 3];
    for s in samples {
        let out = crate::fuzzy::infer_gains(kb, &s.inputs).map(|i| i.gains).unwrap_or_else(|_| kb.bounds.midpoint());
        for c in Channel::ALL {
            let d = out.get(c) - s.gains.get(c);
            sq[c.index()] += d * d;
        }
    }
    sq.map(|v| (v / samples.len() as f64).sqrt())
}

/// Ridge-regularized least squares of the consequents for fixed membership
/// functions, pulled toward the current consequents where data is thin.
fn refit_consequents(kb: &KnowledgeBase, samples: &[TrainingSample]) -> Option<KnowledgeBase> {
    let r = kb.rules.len();
    let mut gram = vec![vec![0.0; r]; r];
    let mut rhs = vec![[0.0; 3]; r];
    for s in samples {
        let w = kb.firing_strengths(&s.inputs);
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            continue;
        }
        let phi: Vec<f64> = w.iter().map(|v| v / total).collect();
        for a in 0..r {
            if phi[a] == 0.0 {
                continue;
            }
            for b in 0..r {
                gram[a][b] += phi[a] * phi[b];
            }
            for c in Channel::ALL {
                rhs[a][c.index()] += phi[a] * s.gains.get(c);
            }
        }
    }
    let ridge = 1e-9 * (gram.iter().enumerate().map(|(a, row)| row[a]).sum::<f64>() / r as f64) + 1e-12;
    for a in 0..r {
        gram[a][a] += ridge;
        for c in Channel::ALL {
            rhs[a][c.index()] += ridge * kb.rules[a].consequent.get(c);
        }
    }
    let l = cholesky(&gram)?;
    let mut refit = kb.clone();
    for c in Channel::ALL {
        let b: Vec<f64> = rhs.iter().map(|v| v[c.index()]).collect();
        let theta = cholesky_solve(&l, &b);
        let [lo, hi] = kb.bounds.get(c);
        for (rule, v) in refit.rules.iter_mut().zip(theta) {
            let mut g = rule.consequent.as_array();
            g[c.index()] = v.clamp(lo, hi);
            rule.consequent = GainTriple::from_array(g);
        }
    }
    Some(refit)
}

fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let sum = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
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
    Some(l)
}

fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

/// Tunes membership functions and consequents of `template` so that
/// inference reproduces the teaching gains. Consequents are refit by
/// ridge-regularized least squares for every evaluated set of membership
/// functions.
pub fn optimize_kb(
    samples: &[TrainingSample],
    template: &KnowledgeBase,
    ga: &GaConfig,
) -> Result<(KnowledgeBase, KbTrainingReport), ScoError> {
    if samples.is_empty() {
        return Err(ScoError::EmptyTeachingSignal);
    }
    template.validate()?;
    if template.inputs.len() != 2 {
        return Err(ScoError::Config("knowledge base template must have (error, error-rate) inputs"));
    }
    let encoding = KbEncoding { template };
    let ranges = Channel::ALL.map(|c| {
        let [lo, hi] = template.bounds.get(c);
        hi - lo
    });
    let score = |kb: &KnowledgeBase| -> f64 {
        let e = rmse(kb, samples);
        -(0..3).map(|c| (e[c] / ranges[c]).powi(2)).sum::<f64>()
    };
    // Each candidate is scored after a least-squares refit of its consequents
    // (the evolved consequents act as the ridge prior).
    let refit = |kb: KnowledgeBase| refit_consequents(&kb, samples).unwrap_or(kb);
    let outcome = ga_run(
        |x| score(&refit(encoding.decode(x))),
        &encoding.gene_bounds(),
        ga,
        &[encoding.encode(template)],
    )?;
    let kb = refit(encoding.decode(&outcome.best));
    kb.validate()?;
    let e = rmse(&kb, samples);
    Ok((
        kb,
        KbTrainingReport {
            rmse: e,
            rmse_fraction: std::array::from_fn(|c| e[c] / ranges[c]),
            fitness_history: outcome.history,
        },
    ))
}

/// Template with five gaussian sets per input over universes fitted to the
/// samples, every consequent at the gain midpoints.
pub fn template_for(samples: &[TrainingSample], bounds: GainBounds) -> KnowledgeBase {
    let extent = |idx: usize| {
        let m = samples.iter().map(|s| s.inputs[idx].abs()).fold(0.0f64, f64::max);
        let m = if m > 0.0 { 1.1 * m } else { 1.0 };
        [-m, m]
    };
    KnowledgeBase::grid(&[("error", extent(0)), ("error_rate", extent(1))], 5, bounds, bounds.midpoint())
}
