//! Experiment orchestration: controller topologies, the scenario catalog,
//! comparison runs, fuzzy surfaces and the offline training pipeline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::closed_loop::{
    GainScheduler, LinkFeatures, LoopConfig, Reference, ScheduledGains, SimError, Simulation, Trajectory,
};
use crate::fuzzy::{canonical_json, load_kb, save_kb, FuzzyError, KnowledgeBase};
use crate::pid::{Channel, GainBounds, GainTriple};
use crate::plant::{DisturbanceEvent, DisturbanceKind, ManipulatorParams, Trigger, LINKS};
use crate::qfi::qga::{qga_select_correlation, QgaError, QgaSelection, ScalingSearch};
use crate::qfi::{diagnostics_row, qfi_step, CorrelationSpec, CorrelationType, GainHistory, QfiError};
use crate::sco::{
    generate_teaching_signal, optimize_kb, template_for, GaConfig, KbTrainingReport, ScoError, TeachingReport,
    TeachingScenario, TeachingSignal,
};
use crate::thermo::{
    assign_aggregate_scores, baseline_relative_cost, quality_of_samples, QualityConfig, QualityMetrics, ThermoError,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("knowledge base file not found: {}", .0.display())]
    MissingKb(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    BadKb { path: PathBuf, source: FuzzyError },
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
    #[error(transparent)]
    Sco(#[from] ScoError),
    #[error(transparent)]
    Qfi(#[from] QfiError),
    #[error(transparent)]
    Qga(#[from] QgaError),
}

impl HarnessError {
    /// Errors caused by the inputs rather than by the computation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_) | HarnessError::MissingKb(_) | HarnessError::BadKb { .. } | HarnessError::Fuzzy(_)
        ) || matches!(self, HarnessError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Shortest round-trip text of a float.
fn num(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    SeparatedFc,
    SingleFc,
    Qfc,
}

impl Topology {
    pub fn kb_count(self) -> usize {
        match self {
            Topology::SingleFc => 1,
            Topology::SeparatedFc | Topology::Qfc => LINKS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub reference: Reference,
    pub duration: f64,
    #[serde(default)]
    pub events: Vec<DisturbanceEvent>,
    pub topology: Topology,
    /// Required for `qfc`, forbidden otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationSpec>,
    /// One document per link (separated, qfc) or a single one (single-fc).
    pub kb_paths: Vec<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub plant: ManipulatorParams,
    #[serde(default, rename = "loop")]
    pub loop_config: LoopConfig,
    #[serde(default)]
    pub quality: QualityConfig,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(HarnessError::Config("duration must be > 0".into()));
        }
        match (self.topology, &self.correlation) {
            (Topology::Qfc, None) => return Err(HarnessError::Config("qfc topology needs a correlation spec".into())),
            (Topology::Qfc, Some(spec)) => spec.validate()?,
            (_, Some(_)) => return Err(HarnessError::Config("correlation spec is only valid for qfc".into())),
            _ => {}
        }
        if self.kb_paths.len() != self.topology.kb_count() {
            return Err(HarnessError::Config(format!(
                "{:?} topology needs {} knowledge base path(s), got {}",
                self.topology,
                self.topology.kb_count(),
                self.kb_paths.len()
            )));
        }
        for ev in &self.events {
            ev.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        self.plant.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        canonical_json(self)
    }

    pub fn hash(&self) -> String {
        sha256_hex(&self.to_json())
    }
}

pub fn read_kb(path: &Path) -> Result<KnowledgeBase> {
    let text = std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            HarnessError::MissingKb(path.to_path_buf())
        } else {
            HarnessError::Io { path: path.to_path_buf(), source }
        }
    })?;
    load_kb(&text).map_err(|source| HarnessError::BadKb { path: path.to_path_buf(), source })
}

/// Gain scheduler for one of the three topologies.
pub enum Controller<'a> {
    Separated([&'a KnowledgeBase; LINKS]),
    /// One knowledge base driven by the features of the link with the
    /// largest error magnitude; its triple goes to every link.
    Single(&'a KnowledgeBase),
    Qfc {
        kbs: [&'a KnowledgeBase; LINKS],
        spec: CorrelationSpec,
        bounds: GainBounds,
        histories: [GainHistory; LINKS],
        diagnostics: Option<Vec<String>>,
    },
}

impl<'a> Controller<'a> {
    pub fn new(topology: Topology, kbs: &'a [KnowledgeBase], correlation: Option<CorrelationSpec>) -> Result<Self> {
        if kbs.len() != topology.kb_count() {
            return Err(HarnessError::Config(format!("{topology:?} needs {} knowledge base(s)", topology.kb_count())));
        }
        for kb in kbs {
            kb.validate()?;
            if kb.inputs.len() != 2 {
                return Err(HarnessError::Config("knowledge bases must take (error, error-rate)".into()));
            }
        }
        Ok(match topology {
            Topology::SeparatedFc => Controller::Separated([&kbs[0], &kbs[1], &kbs[2]]),
            Topology::SingleFc => Controller::Single(&kbs[0]),
            Topology::Qfc => {
                let spec = correlation.ok_or_else(|| HarnessError::Config("qfc needs a correlation spec".into()))?;
                spec.validate()?;
                let bounds = kbs[0].bounds;
                if kbs.iter().any(|kb| kb.bounds != bounds) {
                    return Err(HarnessError::Config("qfc knowledge bases must share gain bounds".into()));
                }
                Controller::Qfc {
                    kbs: [&kbs[0], &kbs[1], &kbs[2]],
                    spec,
                    bounds,
                    histories: std::array::from_fn(|_| GainHistory::for_lag(spec.lag)),
                    diagnostics: None,
                }
            }
        })
    }

    pub fn record_diagnostics(&mut self) {
        if let Controller::Qfc { diagnostics, .. } = self {
            *diagnostics = Some(Vec::new());
        }
    }

    pub fn take_diagnostics(&mut self) -> Option<Vec<String>> {
        match self {
            Controller::Qfc { diagnostics, .. } => diagnostics.take(),
            _ => None,
        }
    }
}

fn infer(kb: &KnowledgeBase, f: &LinkFeatures) -> Result<GainTriple, SimError> {
    kb.infer(&[f.error, f.error_rate]).map(|i| i.gains).map_err(|e| SimError::Scheduler(e.to_string()))
}

/// Index of the largest error magnitude; ties go to the lowest link.
pub fn dominant_link(features: &[LinkFeatures; LINKS]) -> usize {
    (1..LINKS).fold(0, |b, i| if features[i].error.abs() > features[b].error.abs() { i } else { b })
}

impl GainScheduler for Controller<'_> {
    fn schedule(&mut self, iteration: usize, _t: f64, features: &[LinkFeatures; LINKS]) -> Result<ScheduledGains, SimError> {
        match self {
            Controller::Separated(kbs) => {
                let mut applied = [GainTriple::default(); LINKS];
                for i in 0..LINKS {
                    applied[i] = infer(kbs[i], &features[i])?;
                }
                Ok(ScheduledGains { applied, proposed: None })
            }
            Controller::Single(kb) => {
                let g = infer(kb, &features[dominant_link(features)])?;
                Ok(ScheduledGains { applied: [g; LINKS], proposed: None })
            }
            Controller::Qfc { kbs, spec, bounds, histories, diagnostics } => {
                let mut proposed = [GainTriple::default(); LINKS];
                for i in 0..LINKS {
                    proposed[i] = infer(kbs[i], &features[i])?;
                    histories[i].push(proposed[i]);
                }
                let out = qfi_step(spec, histories, bounds).map_err(|e| SimError::Scheduler(e.to_string()))?;
                if let Some(rows) = diagnostics {
                    rows.extend(out.traces.iter().map(|t| diagnostics_row(iteration, t)));
                }
                Ok(ScheduledGains { applied: [out.gains; LINKS], proposed: Some(proposed) })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// SHA-256 of each knowledge base document used, in path order.
    #[serde(default)]
    pub kb_hashes: Vec<String>,
}

impl Provenance {
    fn csv_preamble(&self) -> String {
        let mut out = format!("# config_hash={}\n# seed={}\n# version={}\n", self.config_hash, self.seed, self.version);
        for (i, h) in self.kb_hashes.iter().enumerate() {
            let _ = writeln!(out, "# kb_hash_{}={h}", i + 1);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub topology: Topology,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationSpec>,
    pub trajectory: Trajectory,
    pub metrics: QualityMetrics,
    pub provenance: Provenance,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        canonical_json(self)
    }

    /// Per-iteration table; pre-fusion proposals appear only for qfc runs.
    pub fn to_csv(&self) -> String {
        let with_proposals = self.topology == Topology::Qfc;
        let mut cols = vec!["time".to_string()];
        for prefix in ["reference", "setpoint", "q", "error"] {
            cols.extend((1..=LINKS).map(|i| format!("{prefix}_{i}")));
        }
        for i in 1..=LINKS {
            cols.extend(["kp", "kd", "ki"].map(|c| format!("{c}_{i}")));
        }
        if with_proposals {
            for i in 1..=LINKS {
                cols.extend(["kp", "kd", "ki"].map(|c| format!("proposed_{c}_{i}")));
            }
        }
        cols.extend((1..=LINKS).map(|i| format!("torque_{i}")));

        let mut out = self.provenance.csv_preamble();
        out.push_str(&cols.join(","));
        out.push('\n');
        for s in &self.trajectory.samples {
            let mut row = vec![num(s.t)];
            row.extend(s.target_deg.iter().map(|v| num(*v)));
            row.extend(s.setpoint_deg.iter().map(|v| num(*v)));
            row.extend(s.q_deg.iter().map(|v| num(*v)));
            row.extend(s.features.iter().map(|f| num(f.error)));
            for g in &s.gains {
                row.extend(g.as_array().iter().map(|v| num(*v)));
            }
            if with_proposals {
                for g in s.proposed.iter().flatten() {
                    row.extend(g.as_array().iter().map(|v| num(*v)));
                }
            }
            row.extend(s.torque.iter().map(|v| num(*v)));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Runs a scenario with already loaded knowledge bases (in `kb_paths` order).
pub fn run_with_kbs(config: &ScenarioConfig, kbs: &[KnowledgeBase]) -> Result<RunRecord> {
    run_inner(config, kbs, false).map(|(r, _)| r)
}

fn run_inner(config: &ScenarioConfig, kbs: &[KnowledgeBase], diagnostics: bool) -> Result<(RunRecord, Option<Vec<String>>)> {
    config.validate()?;
    let mut controller = Controller::new(config.topology, kbs, config.correlation)?;
    if diagnostics {
        controller.record_diagnostics();
    }
    let sim = Simulation {
        params: &config.plant,
        config: &config.loop_config,
        reference: &config.reference,
        events: &config.events,
        duration: config.duration,
    };
    let trajectory = sim.run(&mut controller)?;
    let metrics = quality_of_samples(&trajectory, &config.quality)?;
    let record = RunRecord {
        scenario: config.name.clone(),
        topology: config.topology,
        correlation: config.correlation,
        trajectory,
        metrics,
        provenance: Provenance {
            config_hash: config.hash(),
            seed: config.seed,
            version: VERSION.to_string(),
            kb_hashes: kbs.iter().map(|kb| sha256_hex(&save_kb(kb))).collect(),
        },
    };
    Ok((record, controller.take_diagnostics()))
}

/// Loads the configured knowledge bases and runs the closed loop.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunRecord> {
    config.validate()?;
    let kbs = config.kb_paths.iter().map(|p| read_kb(p)).collect::<Result<Vec<_>>>()?;
    run_with_kbs(config, &kbs)
}

/// Like [`run_scenario`] but also returns the QFI diagnostics stream
/// (empty for non-qfc topologies).
pub fn run_scenario_with_diagnostics(config: &ScenarioConfig) -> Result<(RunRecord, Vec<String>)> {
    config.validate()?;
    let kbs = config.kb_paths.iter().map(|p| read_kb(p)).collect::<Result<Vec<_>>>()?;
    let (record, rows) = run_inner(config, &kbs, true)?;
    Ok((record, rows.unwrap_or_default()))
}

/// A catalog entry: reference, duration and disturbances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub reference: Reference,
    pub duration: f64,
    #[serde(default)]
    pub events: Vec<DisturbanceEvent>,
}

impl Scenario {
    pub fn is_contingency(&self) -> bool {
        !self.events.is_empty()
    }
}

/// Everything the lab needs besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub plant: ManipulatorParams,
    #[serde(rename = "loop")]
    pub loop_config: LoopConfig,
    pub quality: QualityConfig,
    pub bounds: GainBounds,
    /// Nominal step used for teaching and by every catalog scenario.
    pub reference: Reference,
    pub duration: f64,
    pub teaching_duration: f64,
    pub teaching_segments: usize,
    pub effort_weight: f64,
    pub variation_weight: f64,
    /// Forced displacement of the external contingency (rad).
    pub displacement: f64,
    pub displacement_link: usize,
    pub displacement_time: f64,
    /// Magnitudes tried, in order, when calibrating the external contingency
    /// against the trained separated controllers.
    pub displacement_candidates: Vec<f64>,
    /// Link-2 final error (deg) that makes a displacement count as outside
    /// the separated controllers' competence.
    pub contingency_error_deg: f64,
    /// New rate limits of the two internal contingency cases (deg/step).
    pub rate_limit_cases: [f64; 2],
    /// 1-based control iteration at which the rate limit changes.
    pub contingency_iteration: usize,
    pub teaching_ga: GaConfig,
    pub kb_ga: GaConfig,
    pub qga: GaConfig,
    pub scaling: ScalingSearch,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            plant: ManipulatorParams::default(),
            loop_config: LoopConfig::default(),
            quality: QualityConfig::default(),
            bounds: GainBounds::default(),
            reference: Reference::step([-90.0, 0.0, 0.0], [-30.0, 45.0, 30.0]),
            duration: 10.0,
            teaching_duration: 3.0,
            teaching_segments: 10,
            effort_weight: 0.01,
            variation_weight: 0.3,
            displacement: 0.9,
            displacement_link: 2,
            displacement_time: 5.0,
            displacement_candidates: vec![0.9, 1.2, 1.5, 1.8, 2.1, 2.4, 2.7, 3.0, -0.9, -1.2, -1.5, -1.8, -2.1, -2.4, -2.7, -3.0],
            contingency_error_deg: 15.0,
            rate_limit_cases: [5.0, 1.0],
            contingency_iteration: 11,
            teaching_ga: GaConfig { population: 40, generations: 100, ..GaConfig::default() },
            kb_ga: GaConfig { population: 20, generations: 30, ..GaConfig::default() },
            qga: GaConfig { population: 8, generations: 16, mutation_rate: 0.1, ..GaConfig::default() },
            scaling: ScalingSearch::default(),
        }
    }
}

pub const STANDARD: &str = "standard";
pub const FORCED_DISPLACEMENT: &str = "forced-displacement";
pub const RATE_LIMIT_INCREASE: &str = "rate-limit-increase";
pub const RATE_LIMIT_DECREASE: &str = "rate-limit-decrease";

impl LabConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if !(self.duration > 0.0) || !(self.teaching_duration > 0.0) {
            return bad("durations must be > 0");
        }
        if !self.bounds.is_valid() {
            return bad("gain bounds must satisfy lo < hi");
        }
        if !(1..=LINKS).contains(&self.displacement_link) {
            return bad("displacement link must be 1..=3");
        }
        if self.rate_limit_cases.iter().any(|r| !(*r > 0.0)) {
            return bad("rate limits must be > 0");
        }
        self.plant.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    /// Standard step, the forced displacement of one link, and the two
    /// rate-limit changes.
    pub fn catalog(&self) -> Vec<Scenario> {
        let scenario = |name: &str, events: Vec<DisturbanceEvent>| Scenario {
            name: name.to_string(),
            reference: self.reference,
            duration: self.duration,
            events,
        };
        let rate = |limit_deg| {
            vec![DisturbanceEvent {
                kind: DisturbanceKind::RateLimitChange { limit_deg },
                trigger: Trigger::Iteration(self.contingency_iteration),
                link: 1,
            }]
        };
        vec![
            scenario(STANDARD, Vec::new()),
            scenario(
                FORCED_DISPLACEMENT,
                vec![DisturbanceEvent {
                    kind: DisturbanceKind::ForcedDisplacement { magnitude: self.displacement },
                    trigger: Trigger::Time(self.displacement_time),
                    link: self.displacement_link,
                }],
            ),
            scenario(RATE_LIMIT_INCREASE, rate(self.rate_limit_cases[0])),
            scenario(RATE_LIMIT_DECREASE, rate(self.rate_limit_cases[1])),
        ]
    }

    pub fn scenario(&self, name: &str) -> Result<Scenario> {
        self.catalog()
            .into_iter()
            .find(|s| s.name == name)
            .ok_or_else(|| HarnessError::Config(format!("unknown scenario '{name}'")))
    }

    pub fn teaching_scenario(&self) -> TeachingScenario {
        TeachingScenario {
            params: self.plant.clone(),
            loop_config: self.loop_config,
            reference: self.reference,
            duration: self.teaching_duration,
            bounds: self.bounds,
            segments: self.teaching_segments,
            effort_weight: self.effort_weight,
            variation_weight: self.variation_weight,
        }
    }

    pub fn hash(&self) -> String {
        sha256_hex(&canonical_json(self))
    }
}

/// Named controller configuration compared in a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct System {
    pub name: String,
    pub topology: Topology,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationSpec>,
}

impl System {
    pub fn separated() -> Self {
        Self { name: "separated".into(), topology: Topology::SeparatedFc, correlation: None }
    }

    pub fn single() -> Self {
        Self { name: "single-fc".into(), topology: Topology::SingleFc, correlation: None }
    }

    pub fn qfc(spec: CorrelationSpec) -> Self {
        Self { name: format!("qfc-{}", spec.kind.name()), topology: Topology::Qfc, correlation: Some(spec) }
    }

    /// `separated`, `single-fc` or `qfc-<type>` (unit scaling, lag 1).
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "separated" | "separated-fc" => Ok(Self::separated()),
            "single" | "single-fc" => Ok(Self::single()),
            _ => name
                .strip_prefix("qfc-")
                .and_then(CorrelationType::parse)
                .map(|k| Self::qfc(CorrelationSpec::new(k)))
                .ok_or_else(|| HarnessError::Config(format!("unknown system '{name}'"))),
        }
    }

    /// Separated control plus the three correlation types.
    pub fn four_way() -> Vec<Self> {
        let mut out = vec![Self::separated()];
        out.extend(
            [CorrelationType::Temporal, CorrelationType::Spatial, CorrelationType::SpatioTemporal]
                .map(|k| Self::qfc(CorrelationSpec::new(k))),
        );
        out
    }
}

/// The trained knowledge bases of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct KbSet {
    pub links: [KnowledgeBase; LINKS],
    pub single: KnowledgeBase,
}

pub const KB_FILES: [&str; LINKS] = ["kb_link1.json", "kb_link2.json", "kb_link3.json"];
pub const SINGLE_KB_FILE: &str = "kb_single.json";
pub const TEACHING_FILE: &str = "teaching_signal.csv";

impl KbSet {
    pub fn for_topology(&self, topology: Topology) -> Vec<KnowledgeBase> {
        match topology {
            Topology::SingleFc => vec![self.single.clone()],
            _ => self.links.to_vec(),
        }
    }

    pub fn paths(dir: &Path, topology: Topology) -> Vec<PathBuf> {
        match topology {
            Topology::SingleFc => vec![dir.join(SINGLE_KB_FILE)],
            _ => KB_FILES.iter().map(|f| dir.join(f)).collect(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let links = [read_kb(&dir.join(KB_FILES[0]))?, read_kb(&dir.join(KB_FILES[1]))?, read_kb(&dir.join(KB_FILES[2]))?];
        let single = read_kb(&dir.join(SINGLE_KB_FILE))?;
        Ok(Self { links, single })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for (kb, file) in self.links.iter().zip(KB_FILES) {
            write_file(&dir.join(file), &save_kb(kb))?;
        }
        write_file(&dir.join(SINGLE_KB_FILE), &save_kb(&self.single))
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| HarnessError::Io { path: parent.to_path_buf(), source })?;
    }
    std::fs::write(path, contents).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Training {
    pub kbs: KbSet,
    pub teaching: TeachingSignal,
    pub teaching_report: TeachingReport,
    pub link_reports: [KbTrainingReport; LINKS],
    pub single_report: KbTrainingReport,
}

/// Independent, reproducible sub-seed for one pipeline stage.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{stage}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn report_provenance(kb: &mut KnowledgeBase, lab_hash: &str, seed: u64, role: &str, report: &KbTrainingReport) {
    kb.provenance.insert("config_hash".into(), lab_hash.to_string());
    kb.provenance.insert("seed".into(), seed.to_string());
    kb.provenance.insert("role".into(), role.to_string());
    kb.provenance.insert("version".into(), VERSION.to_string());
    for c in Channel::ALL {
        kb.provenance.insert(format!("rmse_fraction_{}", c.name()), num(report.rmse_fraction[c.index()]));
    }
}

fn to_array<T>(v: Vec<T>) -> [T; LINKS] {
    v.try_into().unwrap_or_else(|_| unreachable!("three links"))
}

/// Teaching signal on the nominal step, then one knowledge base per link
/// and one on the concatenated three-link signal.
pub fn train_kbs(lab: &LabConfig, seed: u64) -> Result<Training> {
    lab.validate()?;
    let lab_hash = lab.hash();
    let (teaching, teaching_report) =
        generate_teaching_signal(&lab.teaching_scenario(), &lab.teaching_ga.with_seed(derive_seed(seed, "teaching")))?;

    let fit = |links: &[usize], stage: &str| -> Result<(KnowledgeBase, KbTrainingReport)> {
        let samples = teaching.samples(links);
        let template = template_for(&samples, lab.bounds);
        Ok(optimize_kb(&samples, &template, &lab.kb_ga.with_seed(derive_seed(seed, stage)))?)
    };
    let mut links = Vec::with_capacity(LINKS);
    let mut link_reports = Vec::with_capacity(LINKS);
    for i in 0..LINKS {
        let (mut kb, report) = fit(&[i], &format!("kb-link{}", i + 1))?;
        report_provenance(&mut kb, &lab_hash, seed, &format!("link{}", i + 1), &report);
        links.push(kb);
        link_reports.push(report);
    }
    let (mut single, single_report) = fit(&[0, 1, 2], "kb-single")?;
    report_provenance(&mut single, &lab_hash, seed, "single", &single_report);

    Ok(Training {
        kbs: KbSet { links: to_array(links), single },
        teaching,
        teaching_report,
        link_reports: to_array(link_reports),
        single_report,
    })
}

impl Training {
    /// Knowledge bases, the teaching signal and a JSON training report.
    pub fn save(&self, dir: &Path, lab: &LabConfig, seed: u64) -> Result<()> {
        self.kbs.save(dir)?;
        let provenance = Provenance { config_hash: lab.hash(), seed, version: VERSION.to_string(), kb_hashes: Vec::new() };
        write_file(&dir.join(TEACHING_FILE), &(provenance.csv_preamble() + &self.teaching.to_csv()))?;
        let report = serde_json::json!({
            "provenance": provenance,
            "teaching_cost": self.teaching_report.cost,
            "baseline_cost": self.teaching_report.baseline_cost,
            "teaching_fitness_history": self.teaching_report.fitness_history,
            "rmse_fraction": {
                "link1": self.link_reports[0].rmse_fraction,
                "link2": self.link_reports[1].rmse_fraction,
                "link3": self.link_reports[2].rmse_fraction,
                "single": self.single_report.rmse_fraction,
            },
        });
        write_file(&dir.join("training_report.json"), &canonical_json(&report))
    }
}

/// Config of one (system, scenario) cell.
pub fn cell_config(lab: &LabConfig, system: &System, scenario: &Scenario, kb_dir: &Path, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        name: scenario.name.clone(),
        reference: scenario.reference,
        duration: scenario.duration,
        events: scenario.events.clone(),
        topology: system.topology,
        correlation: system.correlation,
        kb_paths: KbSet::paths(kb_dir, system.topology),
        seed,
        plant: lab.plant.clone(),
        loop_config: lab.loop_config,
        quality: lab.quality,
    }
}

pub fn run_system(lab: &LabConfig, system: &System, scenario: &Scenario, kbs: &KbSet, seed: u64) -> Result<RunRecord> {
    let config = cell_config(lab, system, scenario, Path::new(""), seed);
    run_with_kbs(&config, &kbs.for_topology(system.topology))
}

pub const METRIC_COLUMNS: [&str; 11] = [
    "final_error_1",
    "final_error_2",
    "final_error_3",
    "positioning_error",
    "itae",
    "overshoot_pct",
    "settling_time",
    "effort",
    "smoothness",
    "entropy_proxy",
    "aggregate",
];

/// Metrics eligible for a best flag, lower is better except the aggregate.
const FLAGGED: [&str; 9] = [
    "positioning_error",
    "itae",
    "overshoot_pct",
    "settling_time",
    "effort",
    "smoothness",
    "entropy_proxy",
    "unstable_windows",
    "aggregate",
];

fn metric_value(m: &QualityMetrics, name: &str) -> f64 {
    match name {
        "final_error_1" => m.final_error_deg[0],
        "final_error_2" => m.final_error_deg[1],
        "final_error_3" => m.final_error_deg[2],
        "positioning_error" => m.positioning_error(),
        "itae" => m.itae,
        "overshoot_pct" => m.overshoot_pct,
        "settling_time" => m.settling_time,
        "effort" => m.effort,
        "smoothness" => m.smoothness,
        "entropy_proxy" => m.entropy_proxy,
        "unstable_windows" => m.unstable_windows as f64,
        "aggregate" => m.aggregate,
        _ => f64::NAN,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub system: String,
    pub aborted: bool,
    pub metrics: QualityMetrics,
    /// Metrics on which this row is best within its scenario.
    pub best: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub provenance: Provenance,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, scenario: &str, system: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.scenario == scenario && r.system == system)
    }

    pub fn csv_header() -> String {
        let mut cols = vec!["scenario", "system", "aborted"];
        cols.extend(METRIC_COLUMNS);
        cols.extend(["unstable_windows", "instability", "best"]);
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.provenance.csv_preamble();
        out.push_str(&Self::csv_header());
        out.push('\n');
        for r in &self.rows {
            let mut cells = vec![r.scenario.clone(), r.system.clone(), r.aborted.to_string()];
            cells.extend(METRIC_COLUMNS.iter().map(|c| num(metric_value(&r.metrics, c))));
            cells.push(r.metrics.unstable_windows.to_string());
            cells.push(r.metrics.instability.to_string());
            cells.push(r.best.join(";"));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Rows as flat objects keyed by the CSV column names.
    pub fn to_json(&self) -> String {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut obj = serde_json::Map::new();
                obj.insert("scenario".into(), r.scenario.clone().into());
                obj.insert("system".into(), r.system.clone().into());
                obj.insert("aborted".into(), r.aborted.into());
                for c in METRIC_COLUMNS {
                    obj.insert(c.into(), metric_value(&r.metrics, c).into());
                }
                obj.insert("unstable_windows".into(), r.metrics.unstable_windows.into());
                obj.insert("instability".into(), r.metrics.instability.into());
                obj.insert("best".into(), r.best.join(";").into());
                serde_json::Value::Object(obj)
            })
            .collect();
        canonical_json(&serde_json::json!({ "provenance": self.provenance, "rows": rows }))
    }
}

/// Runs every (system, scenario) cell, scores aggregates within each
/// scenario and flags the best system per metric. Rows are sorted by
/// (scenario, system); aborted runs stay in the table.
pub fn run_comparison(
    lab: &LabConfig,
    systems: &[System],
    scenarios: &[Scenario],
    kbs: &KbSet,
    seed: u64,
) -> Result<ComparisonTable> {
    if systems.len() < 2 {
        return Err(HarnessError::Config("a comparison needs at least two systems".into()));
    }
    if scenarios.is_empty() {
        return Err(HarnessError::Config("a comparison needs at least one scenario".into()));
    }
    let mut rows = Vec::with_capacity(systems.len() * scenarios.len());
    for scenario in scenarios {
        let mut cell = Vec::with_capacity(systems.len());
        for system in systems {
            let record = run_system(lab, system, scenario, kbs, seed)?;
            cell.push((system.name.clone(), record.trajectory.aborted.is_some(), record.metrics));
        }
        let mut metrics: Vec<QualityMetrics> = cell.iter().map(|c| c.2.clone()).collect();
        assign_aggregate_scores(&mut metrics);
        let mut best: Vec<Vec<String>> = vec![Vec::new(); cell.len()];
        for name in FLAGGED {
            let values: Vec<f64> = metrics.iter().map(|m| metric_value(m, name)).collect();
            let target = if name == "aggregate" {
                values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            } else {
                values.iter().copied().fold(f64::INFINITY, f64::min)
            };
            for (k, v) in values.iter().enumerate() {
                if *v == target {
                    best[k].push(name.to_string());
                }
            }
        }
        for (((system, aborted, _), m), b) in cell.into_iter().zip(metrics).zip(best) {
            rows.push(ComparisonRow { scenario: scenario.name.clone(), system, aborted, metrics: m, best: b });
        }
    }
    rows.sort_by(|a, b| (&a.scenario, &a.system).cmp(&(&b.scenario, &b.system)));

    let key = serde_json::json!({
        "lab": lab,
        "systems": systems,
        "scenarios": scenarios,
        "kbs": kbs.links.iter().chain(std::iter::once(&kbs.single)).map(save_kb).collect::<Vec<_>>(),
    });
    Ok(ComparisonTable {
        provenance: Provenance {
            config_hash: sha256_hex(&canonical_json(&key)),
            seed,
            version: VERSION.to_string(),
            kb_hashes: kbs.links.iter().chain(std::iter::once(&kbs.single)).map(|kb| sha256_hex(&save_kb(kb))).collect(),
        },
        rows,
    })
}

/// First candidate magnitude under which the separated controllers end
/// with a displaced-link error above `contingency_error_deg`, or `None`.
pub fn calibrate_displacement(lab: &LabConfig, kbs: &KbSet) -> Result<Option<f64>> {
    let link = lab.displacement_link - 1;
    for &magnitude in &lab.displacement_candidates {
        let trial = LabConfig { displacement: magnitude, ..lab.clone() };
        let record = run_system(&trial, &System::separated(), &trial.scenario(FORCED_DISPLACEMENT)?, kbs, 0)?;
        if record.metrics.final_error_deg[link] > lab.contingency_error_deg || record.trajectory.aborted.is_some() {
            return Ok(Some(magnitude));
        }
    }
    Ok(None)
}

/// Baseline-relative fitness of a qfc spec over a scenario suite: minus the
/// mean [`baseline_relative_cost`] against separated control. Any aborted
/// run makes the spec unstable (NaN).
pub fn suite_fitness(
    lab: &LabConfig,
    kbs: &KbSet,
    scenarios: &[Scenario],
    baselines: &[QualityMetrics],
    spec: &CorrelationSpec,
) -> Result<f64> {
    let system = System::qfc(*spec);
    let mut total = 0.0;
    for (scenario, baseline) in scenarios.iter().zip(baselines) {
        let record = run_system(lab, &system, scenario, kbs, 0)?;
        if record.trajectory.aborted.is_some() {
            return Ok(f64::NAN);
        }
        total += baseline_relative_cost(&record.metrics, baseline);
    }
    Ok(-total / scenarios.len() as f64)
}

/// Separated-control metrics the suite fitness is relative to.
pub fn suite_baselines(lab: &LabConfig, kbs: &KbSet, scenarios: &[Scenario]) -> Result<Vec<QualityMetrics>> {
    scenarios.iter().map(|s| Ok(run_system(lab, &System::separated(), s, kbs, 0)?.metrics)).collect()
}

/// Quantum-genetic choice of the correlation type and scaling factors on
/// the scenario suite.
pub fn select_correlation(
    lab: &LabConfig,
    kbs: &KbSet,
    scenarios: &[Scenario],
    candidates: &[CorrelationType],
    seed: u64,
) -> Result<QgaSelection> {
    let baselines = suite_baselines(lab, kbs, scenarios)?;
    let ga = lab.qga.with_seed(derive_seed(seed, "qga"));
    Ok(qga_select_correlation(candidates, &lab.scaling, &ga, |spec| {
        suite_fitness(lab, kbs, scenarios, &baselines, spec).map_err(|e| e.to_string())
    })?)
}

/// Grid of one channel's inferred gain over both input universes,
/// row-major with the error varying slowest.
pub fn emit_fuzzy_surface(kb: &KnowledgeBase, channel: Channel, resolution: usize) -> Result<String> {
    if kb.inputs.len() != 2 {
        return Err(HarnessError::Config(format!(
            "fuzzy surface needs a 2-input knowledge base, got {} inputs",
            kb.inputs.len()
        )));
    }
    if resolution < 2 {
        return Err(HarnessError::Config("surface resolution must be >= 2".into()));
    }
    kb.validate()?;
    let axis = |k: usize| {
        let [lo, hi] = kb.inputs[k].universe;
        (0..resolution).map(move |j| lo + (hi - lo) * j as f64 / (resolution - 1) as f64)
    };
    let mut out = format!("{},{},{}\n", kb.inputs[0].name, kb.inputs[1].name, channel.name());
    for x in axis(0) {
        for y in axis(1) {
            let g = kb.infer(&[x, y])?.gains.get(channel);
            let _ = writeln!(out, "{},{},{}", num(x), num(y), num(g));
        }
    }
    Ok(out)
}

/// Parses a provenance-prefixed CSV into its header and numeric-or-text cells.
pub fn parse_csv(text: &str) -> (BTreeMap<String, String>, Vec<String>, Vec<Vec<String>>) {
    let mut meta = BTreeMap::new();
    let mut lines = text.lines().filter(|l| !l.is_empty()).peekable();
    while let Some(line) = lines.peek() {
        let Some(rest) = line.strip_prefix("# ") else { break };
        if let Some((k, v)) = rest.split_once('=') {
            meta.insert(k.to_string(), v.to_string());
        }
        lines.next();
    }
    let header = lines.next().map(|h| h.split(',').map(String::from).collect()).unwrap_or_default();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (meta, header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_kb(g: GainTriple) -> KnowledgeBase {
        KnowledgeBase::grid(&[("error", [-1.0, 1.0]), ("error_rate", [-5.0, 5.0])], 3, GainBounds::default(), g)
    }

    fn constant_set(g: GainTriple) -> KbSet {
        KbSet { links: std::array::from_fn(|_| constant_kb(g)), single: constant_kb(g) }
    }

    fn all_systems() -> Vec<System> {
        let mut s = System::four_way();
        s.push(System::single());
        s
    }

    #[test]
    fn equilibrium_stays_at_rest_for_every_topology() {
        let lab = LabConfig::default();
        let pose = [-90.0, 0.0, 0.0];
        let scenario = Scenario { name: "rest".into(), reference: Reference::step(pose, pose), duration: 2.0, events: vec![] };
        let kbs = constant_set(GainTriple::new(40.0, 3.0, 10.0));
        for system in all_systems() {
            let r = run_system(&lab, &system, &scenario, &kbs, 0).unwrap();
            assert!(r.metrics.final_error_deg.iter().all(|e| *e < 1e-6), "{} {:?}", system.name, r.metrics.final_error_deg);
            assert!(r.trajectory.samples.iter().all(|s| (0..LINKS).all(|i| (s.q_deg[i] - pose[i]).abs() < 1e-6)));
        }
    }

    #[test]
    fn config_validation() {
        let lab = LabConfig::default();
        let scenario = lab.scenario(STANDARD).unwrap();
        let mut cfg = cell_config(&lab, &System::separated(), &scenario, Path::new("kbs"), 1);
        assert!(cfg.validate().is_ok());
        cfg.correlation = Some(CorrelationSpec::new(CorrelationType::Spatial));
        assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
        let mut q = cell_config(&lab, &System::qfc(CorrelationSpec::new(CorrelationType::Spatial)), &scenario, Path::new("kbs"), 1);
        assert!(q.validate().is_ok());
        q.correlation = None;
        assert!(q.validate().is_err());
        let mut d = cell_config(&lab, &System::single(), &scenario, Path::new("kbs"), 1);
        d.duration = 0.0;
        assert!(d.validate().is_err());
        let mut k = cell_config(&lab, &System::single(), &scenario, Path::new("kbs"), 1);
        k.kb_paths.push("extra.json".into());
        assert!(k.validate().is_err());
    }

    #[test]
    fn scenario_config_json_round_trip() {
        let lab = LabConfig::default();
        let scenario = lab.scenario(FORCED_DISPLACEMENT).unwrap();
        let cfg = cell_config(&lab, &System::qfc(CorrelationSpec::new(CorrelationType::Temporal)), &scenario, Path::new("kbs"), 7);
        let back = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert!(ScenarioConfig::from_json(r#"{"name": "x"}"#).is_err());
    }

    #[test]
    fn missing_kb_is_a_config_error_naming_the_file() {
        let lab = LabConfig::default();
        let scenario = lab.scenario(STANDARD).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = cell_config(&lab, &System::single(), &scenario, dir.path(), 0);
        let err = run_scenario(&cfg).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains(SINGLE_KB_FILE), "{err}");
    }

    #[test]
    fn run_record_is_deterministic_and_carries_provenance() {
        let lab = LabConfig::default();
        let scenario = Scenario { duration: 1.0, ..lab.scenario(STANDARD).unwrap() };
        let dir = tempfile::tempdir().unwrap();
        constant_set(GainTriple::new(40.0, 4.0, 10.0)).save(dir.path()).unwrap();
        let cfg = cell_config(&lab, &System::qfc(CorrelationSpec::new(CorrelationType::Spatial)), &scenario, dir.path(), 3);
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.trajectory.samples.len(), 100);
        assert_eq!(a.provenance.config_hash, cfg.hash());
        assert_eq!(a.provenance.seed, 3);
        let (meta, header, rows) = parse_csv(&a.to_csv());
        assert_eq!(meta["config_hash"], cfg.hash());
        assert_eq!(rows.len(), 100);
        assert!(rows.iter().all(|r| r.len() == header.len()));
        assert!(header.contains(&"proposed_kp_2".to_string()));
    }

    #[test]
    fn qfc_diagnostics_have_three_rows_per_iteration() {
        let lab = LabConfig::default();
        let scenario = Scenario { duration: 0.2, ..lab.scenario(STANDARD).unwrap() };
        let dir = tempfile::tempdir().unwrap();
        constant_set(GainTriple::new(40.0, 4.0, 10.0)).save(dir.path()).unwrap();
        let cfg = cell_config(&lab, &System::qfc(CorrelationSpec::new(CorrelationType::SpatioTemporal)), &scenario, dir.path(), 0);
        let (_, rows) = run_scenario_with_diagnostics(&cfg).unwrap();
        assert_eq!(rows.len(), 3 * 20);
        let sep = cell_config(&lab, &System::separated(), &scenario, dir.path(), 0);
        assert!(run_scenario_with_diagnostics(&sep).unwrap().1.is_empty());
    }

    #[test]
    fn comparison_layout() {
        let lab = LabConfig { duration: 1.0, ..LabConfig::default() };
        let kbs = constant_set(GainTriple::new(40.0, 4.0, 10.0));
        let scenarios = lab.catalog();
        let names: Vec<&str> = scenarios.iter().map(|s| s.name.as_str()).collect();
        assert!(names.contains(&RATE_LIMIT_INCREASE) && names.contains(&RATE_LIMIT_DECREASE));
        let systems = System::four_way();
        let table = run_comparison(&lab, &systems, &scenarios, &kbs, 0).unwrap();
        assert_eq!(table.rows.len(), systems.len() * scenarios.len());
        let keys: Vec<(String, String)> = table.rows.iter().map(|r| (r.scenario.clone(), r.system.clone())).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        for s in &scenarios {
            assert!(table.rows.iter().filter(|r| r.scenario == s.name).any(|r| r.best.contains(&"aggregate".to_string())));
        }
        assert!(run_comparison(&lab, &systems[..1], &scenarios, &kbs, 0).is_err());
    }

    #[test]
    fn system_against_itself_gives_identical_rows() {
        let lab = LabConfig { duration: 1.0, ..LabConfig::default() };
        let kbs = constant_set(GainTriple::new(40.0, 4.0, 10.0));
        let mut twin = System::separated();
        twin.name = "separated-twin".into();
        let table = run_comparison(&lab, &[System::separated(), twin], &lab.catalog(), &kbs, 0).unwrap();
        for pair in table.rows.chunks(2) {
            assert_eq!(pair[0].metrics, pair[1].metrics);
            assert_eq!(pair[0].metrics.aggregate, 1.0);
            assert_eq!(pair[0].best, pair[1].best);
        }
    }

    #[test]
    fn csv_and_json_encode_the_same_numbers() {
        let lab = LabConfig { duration: 1.0, ..LabConfig::default() };
        let kbs = constant_set(GainTriple::new(30.0, 2.0, 5.0));
        let table = run_comparison(&lab, &System::four_way(), &lab.catalog()[..2], &kbs, 0).unwrap();
        let (_, header, rows) = parse_csv(&table.to_csv());
        let json: serde_json::Value = serde_json::from_str(&table.to_json()).unwrap();
        let jrows = json["rows"].as_array().unwrap();
        assert_eq!(rows.len(), jrows.len());
        for (row, j) in rows.iter().zip(jrows) {
            for c in METRIC_COLUMNS {
                let k = header.iter().position(|h| h == c).unwrap();
                let from_csv: f64 = row[k].parse().unwrap();
                assert_eq!(from_csv.to_bits(), j[c].as_f64().unwrap().to_bits(), "{c}");
            }
        }
    }

    #[test]
    fn surface_shape_and_bounds() {
        let kb = constant_kb(GainTriple::new(12.5, 1.5, 7.0));
        let csv = emit_fuzzy_surface(&kb, Channel::P, 50).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2501);
        assert_eq!(lines[0], "error,error_rate,kp");
        assert!(lines[1..].iter().all(|l| {
            let v: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
            (v - 12.5).abs() < 1e-12
        }));

        let mut varied = constant_kb(GainTriple::default());
        for (k, r) in varied.rules.iter_mut().enumerate() {
            r.consequent = GainTriple::new(10.0 * k as f64, 0.7 * k as f64, 5.0 * k as f64);
        }
        let bounds = varied.bounds;
        for c in Channel::ALL {
            let csv = emit_fuzzy_surface(&varied, c, 20).unwrap();
            let [lo, hi] = bounds.get(c);
            for line in csv.lines().skip(1) {
                let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
                assert!(v >= lo && v <= hi);
            }
        }
    }

    #[test]
    fn surface_rejects_other_arity() {
        let kb = KnowledgeBase::grid(&[("error", [-1.0, 1.0])], 3, GainBounds::default(), GainTriple::default());
        assert!(emit_fuzzy_surface(&kb, Channel::D, 10).is_err());
    }

    #[test]
    fn dominant_link_prefers_lowest_index_on_ties() {
        let f = |e: [f64; 3]| e.map(|error| LinkFeatures { error, error_rate: 0.0 });
        assert_eq!(dominant_link(&f([0.1, -0.3, 0.2])), 1);
        assert_eq!(dominant_link(&f([0.2, -0.2, 0.2])), 0);
    }

    #[test]
    fn system_names_parse() {
        assert_eq!(System::parse("qfc-spatio-temporal").unwrap().correlation.unwrap().kind, CorrelationType::SpatioTemporal);
        assert_eq!(System::parse("separated").unwrap().topology, Topology::SeparatedFc);
        assert!(System::parse("qfc-bogus").is_err());
    }

    #[test]
    fn derived_seeds_differ_by_stage() {
        assert_ne!(derive_seed(7, "teaching"), derive_seed(7, "qga"));
        assert_eq!(derive_seed(7, "qga"), derive_seed(7, "qga"));
    }
}
