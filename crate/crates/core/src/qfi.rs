//! Quantum fuzzy inference: fuses the gain proposals of three per-link fuzzy
//! controllers into one self-organized gain triple.
//!
//! Per output channel the pipeline is
//! coding -> correlation template -> superposition -> entanglement filter ->
//! measurement -> decoding -> denormalization.
//!
//! Six correlated gains form the basis `|a1 a2 a3 a4 a5 a6>`, with `a1` the most
//! significant bit of the basis index. Each gain is coded as a probability `p`
//! and its qubit prepared as `sqrt(1-p)|0> + sqrt(p)|1>`, so every amplitude is
//! real and nonnegative.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pid::{Channel, GainBounds, GainTriple};
use crate::plant::LINKS;

pub mod qga;

pub const QUBITS: usize = 6;
pub const BASIS_STATES: usize = 1 << QUBITS;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QfiError {
    #[error("degenerate gain bounds [{0}, {1}]")]
    DegenerateBounds(f64, f64),
    #[error("gain history for link {0} is empty")]
    EmptyHistory(usize),
    #[error("state vector has no positive amplitude")]
    ZeroState,
    #[error("invalid correlation spec: {0}")]
    InvalidSpec(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationType {
    Spatial,
    SpatioTemporal,
    Temporal,
}

impl CorrelationType {
    pub const ALL: [CorrelationType; 3] =
        [CorrelationType::Spatial, CorrelationType::SpatioTemporal, CorrelationType::Temporal];

    pub fn name(self) -> &'static str {
        match self {
            CorrelationType::Spatial => "spatial",
            CorrelationType::SpatioTemporal => "spatio-temporal",
            CorrelationType::Temporal => "temporal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spatial" => Some(CorrelationType::Spatial),
            "spatio-temporal" | "spatiotemporal" => Some(CorrelationType::SpatioTemporal),
            "temporal" => Some(CorrelationType::Temporal),
            _ => None,
        }
    }

    /// Qubit pairs (0-based) whose values must agree after entanglement.
    pub fn pairing(self) -> [(usize, usize); 3] {
        match self {
            CorrelationType::Spatial | CorrelationType::Temporal => [(0, 3), (1, 4), (2, 5)],
            CorrelationType::SpatioTemporal => [(0, 1), (2, 3), (4, 5)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    #[serde(rename = "type")]
    pub kind: CorrelationType,
    /// Lag in control iterations for the time-shifted terms.
    pub lag: usize,
    /// Scaling factor per output channel (P, D, I).
    pub scaling: [f64; 3],
}

impl CorrelationSpec {
    pub fn new(kind: CorrelationType) -> Self {
        Self { kind, lag: 1, scaling: [1.0; 3] }
    }

    pub fn validate(&self) -> Result<(), QfiError> {
        if self.lag < 1 {
            return Err(QfiError::InvalidSpec("lag must be >= 1"));
        }
        if self.scaling.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(QfiError::InvalidSpec("scaling factors must be positive"));
        }
        Ok(())
    }
}

/// Ring buffer of one link's gain proposals, newest last.
#[derive(Debug, Clone, PartialEq)]
pub struct GainHistory {
    capacity: usize,
    entries: VecDeque<GainTriple>,
}

impl GainHistory {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(2);
        Self { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn for_lag(lag: usize) -> Self {
        Self::new(lag + 1)
    }

    pub fn push(&mut self, gains: GainTriple) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(gains);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn current(&self) -> Option<GainTriple> {
        self.entries.back().copied()
    }

    /// Entry `lag` iterations back; the oldest available entry is held when
    /// the history is shorter, reported through the flag.
    pub fn lagged(&self, lag: usize) -> Option<(GainTriple, bool)> {
        let n = self.entries.len();
        if n == 0 {
            return None;
        }
        if lag < n {
            Some((self.entries[n - 1 - lag], false))
        } else {
            Some((self.entries[0], true))
        }
    }
}

/// Address of one gain in a correlation input set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GainRef {
    pub channel: Channel,
    /// 1-based link index.
    pub link: usize,
    pub lagged: bool,
}

impl GainRef {
    const fn now(channel: Channel, link: usize) -> Self {
        Self { channel, link, lagged: false }
    }

    const fn before(channel: Channel, link: usize) -> Self {
        Self { channel, link, lagged: true }
    }
}

/// Which six gains correlate into the output channel, in basis order.
pub fn input_layout(kind: CorrelationType, channel: Channel) -> [GainRef; QUBITS] {
    let x = channel;
    let y = channel.next();
    match kind {
        CorrelationType::Spatial => [
            GainRef::now(x, 1), GainRef::now(x, 2), GainRef::now(x, 3),
            GainRef::now(y, 1), GainRef::now(y, 2), GainRef::now(y, 3),
        ],
        CorrelationType::SpatioTemporal => [
            GainRef::now(x, 1), GainRef::before(y, 1),
            GainRef::now(x, 2), GainRef::before(y, 2),
            GainRef::now(x, 3), GainRef::before(y, 3),
        ],
        CorrelationType::Temporal => [
            GainRef::now(x, 1), GainRef::now(x, 2), GainRef::now(x, 3),
            GainRef::before(x, 1), GainRef::before(x, 2), GainRef::before(x, 3),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationInputs {
    pub refs: [GainRef; QUBITS],
    pub values: [f64; QUBITS],
    /// A lagged term fell back to the oldest available entry.
    pub held: bool,
}

pub fn build_correlation_inputs(
    spec: &CorrelationSpec,
    histories: &[GainHistory; LINKS],
    channel: Channel,
) -> Result<CorrelationInputs, QfiError> {
    let refs = input_layout(spec.kind, channel);
    let mut values = [0.0; QUBITS];
    let mut held = false;
    for (v, r) in values.iter_mut().zip(&refs) {
        let history = &histories[r.link - 1];
        let gains = if r.lagged {
            let (g, h) = history.lagged(spec.lag).ok_or(QfiError::EmptyHistory(r.link))?;
            held |= h;
            g
        } else {
            history.current().ok_or(QfiError::EmptyHistory(r.link))?
        };
        *v = gains.get(r.channel);
    }
    Ok(CorrelationInputs { refs, values, held })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coded {
    pub p: f64,
    pub clamped: bool,
}

/// Codes a gain as a probability over its bounds.
pub fn normalize_gain(gain: f64, bounds: [f64; 2]) -> Result<Coded, QfiError> {
    let [lo, hi] = bounds;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(QfiError::DegenerateBounds(lo, hi));
    }
    let raw = (gain - lo) / (hi - lo);
    let p = raw.clamp(0.0, 1.0);
    Ok(Coded { p, clamped: p != raw })
}

/// Value of qubit `j` (0-based, `a1` first) in basis state `b`.
pub fn qubit(b: usize, j: usize) -> bool {
    (b >> (QUBITS - 1 - j)) & 1 == 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumStateVector {
    amplitudes: [f64; BASIS_STATES],
    /// Bit `b` set when basis state `b` survived the entanglement filter.
    survivors: u64,
    normalized: bool,
}

impl QuantumStateVector {
    pub fn from_amplitudes(amplitudes: [f64; BASIS_STATES]) -> Self {
        let norm: f64 = amplitudes.iter().map(|a| a * a).sum();
        Self { amplitudes, survivors: u64::MAX, normalized: (norm - 1.0).abs() <= 1e-9 }
    }

    pub fn amplitudes(&self) -> &[f64; BASIS_STATES] {
        &self.amplitudes
    }

    pub fn survivors(&self) -> u64 {
        self.survivors
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm_squared(&self) -> f64 {
        self.amplitudes.iter().map(|a| a * a).sum()
    }
}

/// Tensor product of the six coded qubits.
pub fn build_superposition(p: &[f64; QUBITS]) -> QuantumStateVector {
    let one = p.map(|x| x.clamp(0.0, 1.0).sqrt());
    let zero = p.map(|x| (1.0 - x.clamp(0.0, 1.0)).sqrt());
    let amplitudes = std::array::from_fn(|b| {
        (0..QUBITS).map(|j| if qubit(b, j) { one[j] } else { zero[j] }).product()
    });
    QuantumStateVector { amplitudes, survivors: u64::MAX, normalized: true }
}

/// Basis states in which every paired qubit agrees.
pub fn survivor_mask(kind: CorrelationType) -> u64 {
    let agrees = |b: usize| match kind {
        // a_j == a_{j+3}: upper and lower halves of the index coincide
        CorrelationType::Spatial | CorrelationType::Temporal => (b >> 3) & 0b111 == b & 0b111,
        // a1 == a2, a3 == a4, a5 == a6: each adjacent bit pair is 00 or 11
        CorrelationType::SpatioTemporal => ((b >> 1) ^ b) & 0b010101 == 0,
    };
    (0..BASIS_STATES).filter(|&b| agrees(b)).fold(0u64, |m, b| m | (1 << b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entangled {
    pub state: QuantumStateVector,
    /// Every survivor had zero amplitude; the unfiltered state was kept.
    pub fallback: bool,
}

/// Zeroes the basis states that violate the pairing and renormalizes.
pub fn apply_entanglement(state: &QuantumStateVector, kind: CorrelationType) -> Entangled {
    let mask = survivor_mask(kind);
    let mut amplitudes = state.amplitudes;
    for (b, a) in amplitudes.iter_mut().enumerate() {
        if mask & (1 << b) == 0 {
            *a = 0.0;
        }
    }
    let norm: f64 = amplitudes.iter().map(|a| a * a).sum();
    if !(norm > 0.0) {
        return Entangled { state: state.clone(), fallback: true };
    }
    let scale = norm.sqrt().recip();
    amplitudes.iter_mut().for_each(|a| *a *= scale);
    Entangled { state: QuantumStateVector { amplitudes, survivors: mask, normalized: true }, fallback: false }
}

/// Most probable surviving basis state; ties go to the lowest index.
pub fn measure_max(state: &QuantumStateVector) -> Result<usize, QfiError> {
    let mut best: Option<(usize, f64)> = None;
    for (b, a) in state.amplitudes.iter().enumerate() {
        if state.survivors & (1 << b) == 0 {
            continue;
        }
        let w = a * a;
        if w > 0.0 && best.map_or(true, |(_, bw)| w > bw) {
            best = Some((b, w));
        }
    }
    best.map(|(b, _)| b).ok_or(QfiError::ZeroState)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoded {
    pub p_new: f64,
    /// The measured state was `|000000>`; all inputs were averaged.
    pub fallback: bool,
}

/// Mean of the coded inputs whose qubits measured 1.
pub fn decode_state(b: usize, p: &[f64; QUBITS]) -> Decoded {
    let selected: Vec<f64> = (0..QUBITS).filter(|&j| qubit(b, j)).map(|j| p[j]).collect();
    if selected.is_empty() {
        Decoded { p_new: p.iter().sum::<f64>() / QUBITS as f64, fallback: true }
    } else {
        Decoded { p_new: selected.iter().sum::<f64>() / selected.len() as f64, fallback: false }
    }
}

pub fn denormalize_gain(p_new: f64, bounds: [f64; 2], scaling: f64) -> f64 {
    let [lo, hi] = bounds;
    (lo + scaling * p_new * (hi - lo)).clamp(lo, hi)
}

/// Every intermediate stage of one output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    pub channel: Channel,
    pub inputs: CorrelationInputs,
    pub p: [f64; QUBITS],
    pub clamped: [bool; QUBITS],
    pub survivors: u64,
    pub entanglement_fallback: bool,
    pub measured: usize,
    pub decoded: f64,
    pub decode_fallback: bool,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QfiOutput {
    /// Fused gains, broadcast to every link.
    pub gains: GainTriple,
    pub traces: [ChannelTrace; 3],
}

pub fn qfi_channel(
    spec: &CorrelationSpec,
    histories: &[GainHistory; LINKS],
    bounds: &GainBounds,
    channel: Channel,
) -> Result<ChannelTrace, QfiError> {
    let inputs = build_correlation_inputs(spec, histories, channel)?;
    let mut p = [0.0; QUBITS];
    let mut clamped = [false; QUBITS];
    for j in 0..QUBITS {
        let coded = normalize_gain(inputs.values[j], bounds.get(inputs.refs[j].channel))?;
        p[j] = coded.p;
        clamped[j] = coded.clamped;
    }
    let superposed = build_superposition(&p);
    let entangled = apply_entanglement(&superposed, spec.kind);
    let measured = measure_max(&entangled.state)?;
    let decoded = decode_state(measured, &p);
    let gain = denormalize_gain(decoded.p_new, bounds.get(channel), spec.scaling[channel.index()]);
    Ok(ChannelTrace {
        channel,
        inputs,
        p,
        clamped,
        survivors: entangled.state.survivors,
        entanglement_fallback: entangled.fallback,
        measured,
        decoded: decoded.p_new,
        decode_fallback: decoded.fallback,
        gain,
    })
}

pub fn qfi_step(
    spec: &CorrelationSpec,
    histories: &[GainHistory; LINKS],
    bounds: &GainBounds,
) -> Result<QfiOutput, QfiError> {
    spec.validate()?;
    let traces = [
        qfi_channel(spec, histories, bounds, Channel::P)?,
        qfi_channel(spec, histories, bounds, Channel::D)?,
        qfi_channel(spec, histories, bounds, Channel::I)?,
    ];
    let gains = GainTriple::new(traces[0].gain, traces[1].gain, traces[2].gain);
    Ok(QfiOutput { gains, traces })
}

/// Header of the per-iteration diagnostics stream.
pub fn diagnostics_header() -> String {
    let mut cols = vec!["iteration".to_string(), "channel".to_string()];
    cols.extend((1..=QUBITS).map(|j| format!("in_{j}")));
    cols.extend((1..=QUBITS).map(|j| format!("p_{j}")));
    cols.extend(["survivors", "measured", "decoded", "gain", "flags"].map(String::from));
    cols.join(",")
}

/// One diagnostics row: inputs, coded probabilities, survivor mask (hex),
/// measured basis state (bits), decoded probability, fused gain and flags.
pub fn diagnostics_row(iteration: usize, trace: &ChannelTrace) -> String {
    let mut cols = vec![iteration.to_string(), trace.channel.name().to_string()];
    cols.extend(trace.inputs.values.iter().map(|v| v.to_string()));
    cols.extend(trace.p.iter().map(|v| v.to_string()));
    cols.push(format!("{:#018x}", trace.survivors));
    cols.push(format!("{:06b}", trace.measured));
    cols.push(trace.decoded.to_string());
    cols.push(trace.gain.to_string());
    let mut flags = Vec::new();
    if trace.inputs.held {
        flags.push("held");
    }
    if trace.clamped.iter().any(|&c| c) {
        flags.push("clamped");
    }
    if trace.entanglement_fallback {
        flags.push("unfiltered");
    }
    if trace.decode_fallback {
        flags.push("all-zero");
    }
    cols.push(flags.join("|"));
    cols.join(",")
}
