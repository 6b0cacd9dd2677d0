//! Zero-order Sugeno inference from error features to PID gains, and the
//! canonical JSON form of a knowledge base.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::pid::{Channel, GainBounds, GainTriple};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FuzzyError {
    #[error("{0} required")]
    MissingField(&'static str),
    #[error("invalid knowledge base document: {0}")]
    Schema(String),
    #[error("invalid knowledge base: {0}")]
    Invalid(String),
    #[error("expected {expected} inputs, got {got}")]
    InputArity { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum MembershipFunction {
    Gaussian { center: f64, width: f64 },
    Triangular { left: f64, peak: f64, right: f64 },
}

impl MembershipFunction {
    pub fn is_valid(&self) -> bool {
        match *self {
            MembershipFunction::Gaussian { center, width } => center.is_finite() && width.is_finite() && width > 0.0,
            MembershipFunction::Triangular { left, peak, right } => {
                left.is_finite() && right.is_finite() && left <= peak && peak <= right && left < right
            }
        }
    }

    pub fn degree(&self, x: f64) -> f64 {
        membership_degree(self, x)
    }
}

pub fn membership_degree(mf: &MembershipFunction, x: f64) -> f64 {
    match *mf {
        MembershipFunction::Gaussian { center, width } => {
            let z = (x - center) / width;
            (-0.5 * z * z).exp()
        }
        MembershipFunction::Triangular { left, peak, right } => {
            if x < left || x > right {
                0.0
            } else if x <= peak {
                if peak > left { (x - left) / (peak - left) } else { 1.0 }
            } else if right > peak {
                (right - x) / (right - peak)
            } else {
                1.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputVariable {
    pub name: String,
    pub universe: [f64; 2],
    pub mfs: Vec<MembershipFunction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    /// One membership-function index per input variable.
    pub antecedent: Vec<usize>,
    pub consequent: GainTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub inputs: Vec<InputVariable>,
    pub rules: Vec<Rule>,
    pub bounds: GainBounds,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

/// Result of one inference, with the fallback flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inference {
    pub gains: GainTriple,
    pub no_rule_fired: bool,
}

impl KnowledgeBase {
    /// Full grid of rules over evenly spaced gaussian sets, every consequent
    /// set to `fill`. Neighbouring sets cross at degree 0.5.
    pub fn grid(
        inputs: &[(&str, [f64; 2])],
        sets_per_input: usize,
        bounds: GainBounds,
        fill: GainTriple,
    ) -> Self {
        let n = sets_per_input.max(1);
        let inputs: Vec<InputVariable> = inputs
            .iter()
            .map(|(name, [lo, hi])| {
                let spacing = if n > 1 { (hi - lo) / (n - 1) as f64 } else { hi - lo };
                let width = 0.5 * spacing / (2.0 * std::f64::consts::LN_2).sqrt();
                let mfs = (0..n)
                    .map(|k| MembershipFunction::Gaussian {
                        center: if n > 1 { lo + spacing * k as f64 } else { 0.5 * (lo + hi) },
                        width,
                    })
                    .collect();
                InputVariable { name: name.to_string(), universe: [*lo, *hi], mfs }
            })
            .collect();

        let mut rules = vec![Rule { antecedent: Vec::new(), consequent: fill }];
        for var in &inputs {
            rules = rules
                .into_iter()
                .flat_map(|r| {
                    (0..var.mfs.len()).map(move |k| {
                        let mut antecedent = r.antecedent.clone();
                        antecedent.push(k);
                        Rule { antecedent, consequent: r.consequent }
                    })
                })
                .collect();
        }
        Self { inputs, rules, bounds, provenance: BTreeMap::new() }
    }

    pub fn validate(&self) -> Result<(), FuzzyError> {
        if !self.bounds.is_valid() {
            return Err(FuzzyError::Invalid("gain bounds need finite min < max per channel".into()));
        }
        if self.inputs.is_empty() {
            return Err(FuzzyError::Invalid("at least one input variable required".into()));
        }
        for var in &self.inputs {
            if var.mfs.is_empty() {
                return Err(FuzzyError::Invalid(format!("input '{}' has no membership functions", var.name)));
            }
            if let Some(bad) = var.mfs.iter().position(|mf| !mf.is_valid()) {
                return Err(FuzzyError::Invalid(format!("input '{}' membership function {bad} is malformed", var.name)));
            }
            if !(var.universe[0] < var.universe[1]) {
                return Err(FuzzyError::Invalid(format!("input '{}' has an empty universe", var.name)));
            }
        }
        if self.rules.is_empty() {
            return Err(FuzzyError::Invalid("at least one rule required".into()));
        }
        for (r, rule) in self.rules.iter().enumerate() {
            if rule.antecedent.len() != self.inputs.len() {
                return Err(FuzzyError::Invalid(format!("rule {r} antecedent has wrong arity")));
            }
            for (var, &k) in self.inputs.iter().zip(&rule.antecedent) {
                if k >= var.mfs.len() {
                    return Err(FuzzyError::Invalid(format!("rule {r} references missing set {k} of '{}'", var.name)));
                }
            }
            if !self.bounds.contains(&rule.consequent) {
                return Err(FuzzyError::Invalid(format!("rule {r} consequent outside gain bounds")));
            }
        }
        Ok(())
    }

    /// Product t-norm firing strength of every rule.
    pub fn firing_strengths(&self, inputs: &[f64]) -> Vec<f64> {
        let degrees: Vec<Vec<f64>> = self
            .inputs
            .iter()
            .zip(inputs)
            .map(|(var, &x)| var.mfs.iter().map(|mf| mf.degree(x)).collect())
            .collect();
        self.rules
            .iter()
            .map(|rule| rule.antecedent.iter().enumerate().map(|(v, &k)| degrees[v][k]).product())
            .collect()
    }

    pub fn infer(&self, inputs: &[f64]) -> Result<Inference, FuzzyError> {
        infer_gains(self, inputs)
    }
}

/// Weighted-average defuzzification over rule consequents, clamped to the
/// gain bounds. Falls back to the bound midpoints when nothing fires.
pub fn infer_gains(kb: &KnowledgeBase, inputs: &[f64]) -> Result<Inference, FuzzyError> {
    if inputs.len() != kb.inputs.len() {
        return Err(FuzzyError::InputArity { expected: kb.inputs.len(), got: inputs.len() });
    }
    if inputs.iter().any(|x| !x.is_finite()) {
        return Err(FuzzyError::Invalid("inference inputs must be finite".into()));
    }
    let strengths = kb.firing_strengths(inputs);
    let total: f64 = strengths.iter().sum();
    if !(total > 0.0) {
        return Ok(Inference { gains: kb.bounds.midpoint(), no_rule_fired: true });
    }
    let mut acc = [0.0; 3];
    for (w, rule) in strengths.iter().zip(&kb.rules) {
        for c in Channel::ALL {
            acc[c.index()] += w * rule.consequent.get(c);
        }
    }
    let gains = GainTriple::from_array(acc.map(|a| a / total));
    Ok(Inference { gains: kb.bounds.clamp(gains), no_rule_fired: false })
}

/// Canonical document: sorted keys, shortest round-trip numbers, trailing newline.
pub fn save_kb(kb: &KnowledgeBase) -> String {
    canonical_json(kb)
}

pub fn load_kb(document: &str) -> Result<KnowledgeBase, FuzzyError> {
    let value: Value = serde_json::from_str(document).map_err(|e| FuzzyError::Schema(e.to_string()))?;
    let object = value.as_object().ok_or_else(|| FuzzyError::Schema("top level must be an object".into()))?;
    for field in ["inputs", "rules", "bounds"] {
        if !object.contains_key(field) {
            return Err(FuzzyError::MissingField(field));
        }
    }
    let kb: KnowledgeBase = serde_json::from_value(value).map_err(|e| FuzzyError::Schema(e.to_string()))?;
    kb.validate()?;
    Ok(kb)
}

/// Serializes through `serde_json::Value`, whose maps are key-sorted.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("serializable value");
    let mut out = serde_json::to_string_pretty(&value).expect("serializable value");
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_rule_kb(consequent: GainTriple) -> KnowledgeBase {
        KnowledgeBase {
            inputs: vec![InputVariable {
                name: "error".into(),
                universe: [-1.0, 1.0],
                mfs: vec![MembershipFunction::Gaussian { center: 0.0, width: 1.0 }],
            }],
            rules: vec![Rule { antecedent: vec![0], consequent }],
            bounds: GainBounds::default(),
            provenance: BTreeMap::new(),
        }
    }

    fn nine_rule_kb() -> KnowledgeBase {
        let mut kb = KnowledgeBase::grid(
            &[("error", [-0.7, 0.7]), ("error_rate", [-3.0, 3.0])],
            3,
            GainBounds::default(),
            GainTriple::new(10.0, 1.0, 5.0),
        );
        for (i, rule) in kb.rules.iter_mut().enumerate() {
            rule.consequent = GainTriple::new(0.1 + 7.9 * i as f64, (1.0 / 3.0 + i as f64) / 2.0, 2.0_f64.sqrt() * i as f64);
        }
        kb.inputs[1].mfs[2] = MembershipFunction::Triangular { left: 0.5, peak: 2.0, right: 3.0 };
        kb.provenance.insert("scenario".into(), "standard".into());
        kb
    }

    #[test]
    fn membership_examples() {
        let g = MembershipFunction::Gaussian { center: 0.0, width: 1.0 };
        assert_eq!(g.degree(0.0), 1.0);
        assert!((g.degree(1.0) - 0.60653).abs() < 1e-5);
        let t = MembershipFunction::Triangular { left: -1.0, peak: 0.0, right: 2.0 };
        assert_eq!(t.degree(-1.5), 0.0);
        assert_eq!(t.degree(2.5), 0.0);
        assert_eq!(t.degree(0.0), 1.0);
        assert_eq!(t.degree(1.0), 0.5);
    }

    #[test]
    fn single_rule_returns_its_consequent() {
        let c = GainTriple::new(12.0, 3.0, 4.0);
        let out = single_rule_kb(c).infer(&[0.0]).unwrap();
        assert_eq!(out.gains, c);
        assert!(!out.no_rule_fired);
    }

    #[test]
    fn equal_strengths_average() {
        let mut kb = single_rule_kb(GainTriple::new(2.0, 0.0, 0.0));
        kb.rules.push(Rule { antecedent: vec![0], consequent: GainTriple::new(4.0, 0.0, 0.0) });
        assert_eq!(kb.infer(&[0.3]).unwrap().gains.kp, 3.0);
    }

    #[test]
    fn nothing_fired_falls_back_to_midpoint() {
        let mut kb = single_rule_kb(GainTriple::new(2.0, 0.0, 0.0));
        kb.inputs[0].mfs[0] = MembershipFunction::Triangular { left: -1.0, peak: 0.0, right: 1.0 };
        let out = kb.infer(&[5.0]).unwrap();
        assert!(out.no_rule_fired);
        assert_eq!(out.gains, kb.bounds.midpoint());
    }

    #[test]
    fn wrong_arity_and_non_finite_inputs_are_rejected() {
        let kb = single_rule_kb(GainTriple::new(2.0, 0.0, 0.0));
        assert!(matches!(kb.infer(&[0.0, 1.0]), Err(FuzzyError::InputArity { .. })));
        assert!(kb.infer(&[f64::NAN]).is_err());
    }

    #[test]
    fn round_trip_nine_rule_kb() {
        let kb = nine_rule_kb();
        assert_eq!(kb.rules.len(), 9);
        let doc = save_kb(&kb);
        assert!(doc.ends_with('\n'));
        let back = load_kb(&doc).unwrap();
        assert_eq!(back, kb);
        // Full precision: canonical text identical and every float bit-equal.
        assert_eq!(save_kb(&back), doc);
        for (a, b) in kb.rules.iter().zip(&back.rules) {
            assert_eq!(a.consequent.kd.to_bits(), b.consequent.kd.to_bits());
            assert_eq!(a.consequent.ki.to_bits(), b.consequent.ki.to_bits());
        }
    }

    #[test]
    fn missing_bounds_is_named() {
        let mut value = serde_json::to_value(nine_rule_kb()).unwrap();
        value.as_object_mut().unwrap().remove("bounds");
        let err = load_kb(&value.to_string()).unwrap_err();
        assert_eq!(err.to_string(), "bounds required");
    }

    #[test]
    fn malformed_documents_are_rejected() {
        let mut value = serde_json::to_value(nine_rule_kb()).unwrap();
        value["rules"][0]["antecedent"] = serde_json::json!([0, 7]);
        assert!(matches!(load_kb(&value.to_string()), Err(FuzzyError::Invalid(_))));

        let mut value = serde_json::to_value(nine_rule_kb()).unwrap();
        value["bounds"]["kp"] = serde_json::json!([5.0, 1.0]);
        assert!(load_kb(&value.to_string()).is_err());

        let mut value = serde_json::to_value(nine_rule_kb()).unwrap();
        value["rules"][0]["consequent"].as_object_mut().unwrap().remove("kd");
        let err = load_kb(&value.to_string()).unwrap_err();
        assert!(err.to_string().contains("kd"), "{err}");
    }

    #[test]
    fn keys_are_sorted_in_canonical_form() {
        let doc = save_kb(&nine_rule_kb());
        let b = doc.find("\"bounds\"").unwrap();
        let i = doc.find("\"inputs\"").unwrap();
        let p = doc.find("\"provenance\"").unwrap();
        let r = doc.find("\"rules\"").unwrap();
        assert!(b < i && i < p && p < r);
    }

    #[test]
    fn duplicating_a_rule_moves_output_toward_it() {
        let kb = nine_rule_kb();
        let x = [0.2, -0.4];
        let base = kb.infer(&x).unwrap().gains.kp;
        let target = kb.rules[4].consequent.kp;
        let mut dup = kb.clone();
        dup.rules.push(kb.rules[4].clone());
        let moved = dup.infer(&x).unwrap().gains.kp;
        assert!((target - moved).abs() <= (target - base).abs());
        assert!((moved - base) * (target - base) >= 0.0);
    }

    proptest! {
        #[test]
        fn output_within_consequent_hull_and_bounds(e in -3.0f64..3.0, de in -10.0f64..10.0) {
            let kb = nine_rule_kb();
            let out = kb.infer(&[e, de]).unwrap();
            prop_assume!(!out.no_rule_fired);
            for c in Channel::ALL {
                let lo = kb.rules.iter().map(|r| r.consequent.get(c)).fold(f64::INFINITY, f64::min);
                let hi = kb.rules.iter().map(|r| r.consequent.get(c)).fold(f64::NEG_INFINITY, f64::max);
                let v = out.gains.get(c);
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                let [blo, bhi] = kb.bounds.get(c);
                prop_assert!(v >= blo && v <= bhi);
            }
        }

        #[test]
        fn output_continuous_in_inputs(e in -0.7f64..0.7, de in -3.0f64..3.0) {
            let kb = nine_rule_kb();
            let a = kb.infer(&[e, de]).unwrap().gains;
            let b = kb.infer(&[e + 1e-9, de - 1e-9]).unwrap().gains;
            for c in Channel::ALL {
                prop_assert!((a.get(c) - b.get(c)).abs() < 1e-4);
            }
        }
    }
}
