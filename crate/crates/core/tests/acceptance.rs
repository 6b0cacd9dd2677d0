//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Lines are written straight to the process stdout so they show up in
//! `cargo test` output without `--nocapture`.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qfc_core::fuzzy::{load_kb, save_kb, KnowledgeBase, MembershipFunction};
use qfc_core::harness::{
    calibrate_displacement, run_comparison, run_system, select_correlation, suite_baselines, suite_fitness,
    train_kbs, LabConfig, System, FORCED_DISPLACEMENT, RATE_LIMIT_DECREASE, RATE_LIMIT_INCREASE,
};
use qfc_core::pid::{Channel, GainBounds, GainTriple};
use qfc_core::plant::{integrate_step, ManipulatorParams, PlantState, LINKS};
use qfc_core::qfi::{
    apply_entanglement, build_correlation_inputs, build_superposition, decode_state, measure_max, CorrelationSpec,
    CorrelationType, GainHistory, QuantumStateVector, BASIS_STATES, QUBITS,
};
use qfc_core::thermo::{dissipation_work, kl_divergence, renyi_divergence, ProbabilityDistribution};

const SEED: u64 = 2;
const TYPES: [CorrelationType; 3] = [CorrelationType::Temporal, CorrelationType::Spatial, CorrelationType::SpatioTemporal];

struct Report {
    failures: Vec<String>,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String, elapsed: Duration) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        let text = format!("{id} {verdict} ({:.1} s) {detail}\n", elapsed.as_secs_f64());
        let mut out = std::io::stdout().lock();
        let _ = out.write_all(text.as_bytes());
        let _ = out.flush();
        if !pass {
            self.failures.push(text);
        }
    }
}

fn qubit(b: usize, j: usize) -> bool {
    // a1 is the most significant of the six bits
    b & (1 << (5 - j)) != 0
}

fn invariant_suite() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut notes = Vec::new();

    let mut worst_norm: f64 = 0.0;
    for _ in 0..10_000 {
        let p: [f64; QUBITS] = std::array::from_fn(|_| rng.gen::<f64>());
        let s = build_superposition(&p);
        worst_norm = worst_norm.max((s.amplitudes().iter().map(|a| a * a).sum::<f64>() - 1.0).abs());
    }
    let norm_ok = worst_norm <= 1e-9;
    notes.push(format!("max |norm-1| = {worst_norm:.1e}"));

    // qubit pairs that must agree for a basis state to survive, by type
    let pairs = |t: CorrelationType| match t {
        CorrelationType::Spatial | CorrelationType::Temporal => [(0, 3), (1, 4), (2, 5)],
        CorrelationType::SpatioTemporal => [(0, 1), (2, 3), (4, 5)],
    };
    let mut entangle_ok = true;
    for t in TYPES {
        let expected: Vec<usize> =
            (0..BASIS_STATES).filter(|&b| pairs(t).iter().all(|&(i, k)| qubit(b, i) == qubit(b, k))).collect();
        let p: [f64; QUBITS] = std::array::from_fn(|_| rng.gen_range(0.05..0.95));
        let e = apply_entanglement(&build_superposition(&p), t);
        let got: Vec<usize> = (0..BASIS_STATES).filter(|&b| e.state.amplitudes()[b] > 0.0).collect();
        let mask: Vec<usize> = (0..BASIS_STATES).filter(|&b| e.state.survivors() & (1 << b) != 0).collect();
        entangle_ok &= got == expected && mask == expected && expected.len() == 8;
    }
    notes.push(format!("survivor sets exact: {entangle_ok}"));

    let mut argmax_ok = true;
    for _ in 0..1_000 {
        let amps: [f64; BASIS_STATES] = std::array::from_fn(|_| rng.gen::<f64>());
        let c = rng.gen_range(1e-3..1e3);
        let a = measure_max(&QuantumStateVector::from_amplitudes(amps)).unwrap();
        let b = measure_max(&QuantumStateVector::from_amplitudes(amps.map(|x| x * c))).unwrap();
        argmax_ok &= a == b;
    }
    notes.push(format!("argmax scale-invariant: {argmax_ok}"));

    let mut decode_ok = true;
    for _ in 0..10_000 {
        let p: [f64; QUBITS] = std::array::from_fn(|_| rng.gen::<f64>());
        let d = decode_state(rng.gen_range(0..BASIS_STATES), &p).p_new;
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        decode_ok &= lo <= d && d <= hi;
    }
    notes.push(format!("decode bounded: {decode_ok}"));

    let mut kb = KnowledgeBase::grid(
        &[("error", [-1.2, 1.2]), ("error_rate", [-6.0, 6.0])],
        5,
        GainBounds::default(),
        GainTriple::new(40.0, 3.0, 20.0),
    );
    for (k, r) in kb.rules.iter_mut().enumerate() {
        r.consequent = GainTriple::new(3.1 * k as f64, 0.23 * k as f64, 1.6 * k as f64);
    }
    kb.inputs[1].mfs[2] = MembershipFunction::Triangular { left: -2.0, peak: 0.1, right: 2.5 };
    let doc = save_kb(&kb);
    let back = load_kb(&doc).unwrap();
    let kb_ok = back == kb && save_kb(&back) == doc;
    notes.push(format!("KB round-trip: {kb_ok}"));

    (norm_ok && entangle_ok && argmax_ok && decode_ok && kb_ok, notes.join(", "))
}

/// Golden input sets of the three correlation types, as printed.
const GOLDEN: [(CorrelationType, Channel, &str); 9] = [
    (CorrelationType::Spatial, Channel::P, "P1(t) P2(t) P3(t) D1(t) D2(t) D3(t)"),
    (CorrelationType::Spatial, Channel::D, "D1(t) D2(t) D3(t) I1(t) I2(t) I3(t)"),
    (CorrelationType::Spatial, Channel::I, "I1(t) I2(t) I3(t) P1(t) P2(t) P3(t)"),
    (CorrelationType::SpatioTemporal, Channel::P, "P1(t) D1(t-1) P2(t) D2(t-1) P3(t) D3(t-1)"),
    (CorrelationType::SpatioTemporal, Channel::D, "D1(t) I1(t-1) D2(t) I2(t-1) D3(t) I3(t-1)"),
    (CorrelationType::SpatioTemporal, Channel::I, "I1(t) P1(t-1) I2(t) P2(t-1) I3(t) P3(t-1)"),
    (CorrelationType::Temporal, Channel::P, "P1(t) P2(t) P3(t) P1(t-1) P2(t-1) P3(t-1)"),
    (CorrelationType::Temporal, Channel::D, "D1(t) D2(t) D3(t) D1(t-1) D2(t-1) D3(t-1)"),
    (CorrelationType::Temporal, Channel::I, "I1(t) I2(t) I3(t) I1(t-1) I2(t-1) I3(t-1)"),
];

fn channel_sets() -> (bool, String) {
    // Every gain value encodes its own name: 100 * link + 10 * channel + lag.
    let code = |link: usize, c: usize, lag: usize| (100 * link + 10 * c + lag) as f64;
    let histories: [GainHistory; LINKS] = std::array::from_fn(|i| {
        let mut h = GainHistory::for_lag(1);
        h.push(GainTriple::new(code(i + 1, 0, 1), code(i + 1, 1, 1), code(i + 1, 2, 1)));
        h.push(GainTriple::new(code(i + 1, 0, 0), code(i + 1, 1, 0), code(i + 1, 2, 0)));
        h
    });
    let name = |v: f64| {
        let v = v as usize;
        let ch = ["P", "D", "I"][(v / 10) % 10];
        let time = if v % 10 == 1 { "(t-1)" } else { "(t)" };
        format!("{ch}{}{time}", v / 100)
    };
    let mut matched = 0;
    let mut mismatches = Vec::new();
    for (kind, channel, golden) in GOLDEN {
        let inputs = build_correlation_inputs(&CorrelationSpec::new(kind), &histories, channel).unwrap();
        let got = inputs.values.map(name).join(" ");
        if got == golden {
            matched += 1;
        } else {
            mismatches.push(format!("{}/{}: {got}", kind.name(), channel.name()));
        }
    }
    (matched == 9, format!("{matched}/9 sets exact {}", mismatches.join("; ")))
}

fn thermo_oracles() -> (bool, String) {
    let d = |w: &[f64]| ProbabilityDistribution::normalized(w.to_vec()).unwrap();
    let kl = kl_divergence(&d(&[1.0, 0.0]), &d(&[0.5, 0.5])).unwrap();
    let kl_ok = (kl - 2f64.ln()).abs() <= 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(2..8);
        let p = d(&(0..n).map(|_| rng.gen_range(0.01..1.0)).collect::<Vec<_>>());
        let q = d(&(0..n).map(|_| rng.gen_range(0.01..1.0)).collect::<Vec<_>>());
        let k = kl_divergence(&p, &q).unwrap();
        for alpha in [1.0 - 1e-6, 1.0 + 1e-6] {
            worst = worst.max((renyi_divergence(&p, &q, alpha).unwrap() - k).abs());
        }
    }
    let renyi_ok = worst < 1e-4;

    let (pf, pb) = (d(&[0.7, 0.2, 0.1]), d(&[0.3, 0.3, 0.4]));
    let w1 = dissipation_work(&pf, &pb, 1.3).unwrap();
    let w2 = dissipation_work(&pf, &pb, 2.6).unwrap();
    let linear_ok = w2 == 2.0 * w1;
    (
        kl_ok && renyi_ok && linear_ok,
        format!("KL = {kl:.15}, Renyi limit gap {worst:.1e}, kT linearity exact: {linear_ok}"),
    )
}

/// Kinetic plus potential energy of the rod chain, from absolute link angles.
fn energy(s: &PlantState, p: &ManipulatorParams) -> f64 {
    let (mut y, mut vx, mut vy) = (0.0, 0.0, 0.0);
    let (mut th, mut w) = (0.0, 0.0);
    let mut e = 0.0;
    for i in 0..LINKS {
        th += s.q[i];
        w += s.qdot[i];
        let cy = y + p.com[i] * th.sin();
        let (cvx, cvy) = (vx - p.com[i] * th.sin() * w, vy + p.com[i] * th.cos() * w);
        let inertia = p.masses[i] * p.lengths[i] * p.lengths[i] / 12.0;
        e += 0.5 * p.masses[i] * (cvx * cvx + cvy * cvy) + 0.5 * inertia * w * w + p.masses[i] * p.gravity * cy;
        y += p.lengths[i] * th.sin();
        vx -= p.lengths[i] * th.sin() * w;
        vy += p.lengths[i] * th.cos() * w;
    }
    e
}

fn plant_sanity() -> (bool, String) {
    let params = ManipulatorParams { friction: [0.0; LINKS], ..ManipulatorParams::default() };
    let mut s = PlantState { q: [0.4, -0.7, 1.1], qdot: [0.5, -1.0, 0.8], t: 0.0 };
    let e0 = energy(&s, &params);
    for _ in 0..1000 {
        s = integrate_step(&s, &[0.0; LINKS], 1e-3, &params).unwrap();
    }
    let drift = ((energy(&s, &params) - e0) / e0).abs();

    let pend = ManipulatorParams {
        masses: [1.0, 1e-12, 1e-12],
        friction: [0.0; LINKS],
        ..ManipulatorParams::default()
    };
    let (m, l, c) = (pend.masses[0], pend.lengths[0], pend.com[0]);
    // physical pendulum: rod inertia about the pivot via the parallel-axis rule
    let pivot = m * l * l / 12.0 + m * c * c;
    let analytic = 2.0 * PI * (pivot / (m * pend.gravity * c)).sqrt();
    let hang = -PI / 2.0;
    let mut s = PlantState::at_rest([hang + 0.01, 0.0, 0.0]);
    let dt = 1e-4;
    let mut up = Vec::new();
    let mut prev = s.q[0] - hang;
    while up.len() < 3 {
        s = integrate_step(&s, &[0.0; LINKS], dt, &pend).unwrap();
        let dev = s.q[0] - hang;
        if prev < 0.0 && dev >= 0.0 {
            up.push(s.t - dt * dev / (dev - prev));
        }
        prev = dev;
    }
    let period = (up[2] - up[0]) / 2.0;
    let rel = ((period - analytic) / analytic).abs();
    (drift < 1e-6 && rel < 0.01, format!("energy drift {drift:.1e}, pendulum period {period:.5} s vs {analytic:.5} s ({:.3}%)", 100.0 * rel))
}

fn file_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn cli_pipeline(root: &Path) -> Vec<(String, Vec<u8>)> {
    let bin = env!("CARGO_BIN_EXE_qfc-lab");
    let kb_dir = root.join("kbs");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    let seed = SEED.to_string();
    run(&["--seed", &seed, "--out-dir", kb_dir.to_str().unwrap(), "train-kb"]);
    for format in ["csv", "json"] {
        run(&[
            "--seed", &seed, "--out-dir", root.to_str().unwrap(), "--format", format,
            "compare", "--kb-dir", kb_dir.to_str().unwrap(),
        ]);
    }
    let mut files = file_bytes(&kb_dir);
    files.extend(file_bytes(root));
    files
}

#[test]
fn acceptance_criteria() {
    let suite = Instant::now();
    let mut report = Report { failures: Vec::new() };

    let t = Instant::now();
    let (ok, detail) = invariant_suite();
    let elapsed = t.elapsed();
    report.line("AC1 invariant suite:", ok && elapsed < Duration::from_secs(30), detail, elapsed);

    let t = Instant::now();
    let (ok, detail) = channel_sets();
    report.line("AC2 channel-set fidelity:", ok, detail, t.elapsed());

    let t = Instant::now();
    let (ok, detail) = thermo_oracles();
    report.line("AC3 thermo oracles:", ok, detail, t.elapsed());

    let t = Instant::now();
    let (ok, detail) = plant_sanity();
    report.line("AC4 plant sanity:", ok, detail, t.elapsed());

    // Shared pipeline: knowledge bases, calibrated contingency, QGA choice.
    let t = Instant::now();
    let mut lab = LabConfig::default();
    let training = train_kbs(&lab, SEED).unwrap();
    let kbs = &training.kbs;
    let calibrated = calibrate_displacement(&lab, kbs).unwrap();
    if let Some(d) = calibrated {
        lab.displacement = d;
    }
    let scenarios = lab.catalog();
    let selection = select_correlation(&lab, kbs, &scenarios, &TYPES, SEED).unwrap();
    let qfc = System::qfc(selection.best);
    let setup = t.elapsed();

    let t = Instant::now();
    let forced = lab.scenario(FORCED_DISPLACEMENT).unwrap();
    let sep = run_system(&lab, &System::separated(), &forced, kbs, SEED).unwrap();
    let fused = run_system(&lab, &qfc, &forced, kbs, SEED).unwrap();
    let (e_sep, e_qfc) = (sep.metrics.final_error_deg[1], fused.metrics.final_error_deg[1]);
    let elapsed = setup + t.elapsed();
    report.line(
        "AC5 external contingency:",
        calibrated.is_some() && e_qfc < e_sep && e_qfc < 5.0 && e_sep > 15.0 && elapsed < Duration::from_secs(120),
        format!(
            "displacement {:?} rad on link 2; link-2 final error {} {e_qfc:.2} deg vs separated {e_sep:.2} deg",
            calibrated,
            qfc.name
        ),
        elapsed,
    );

    let t = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for name in [RATE_LIMIT_INCREASE, RATE_LIMIT_DECREASE] {
        let scenario = lab.scenario(name).unwrap();
        let single = run_system(&lab, &System::single(), &scenario, kbs, SEED).unwrap();
        let fusedrun = run_system(&lab, &qfc, &scenario, kbs, SEED).unwrap();
        let complete = single.trajectory.is_complete() && fusedrun.trajectory.is_complete();
        ok &= complete && fusedrun.metrics.unstable_windows <= single.metrics.unstable_windows;
        notes.push(format!(
            "{name}: unstable windows {} {} vs single-fc {}",
            qfc.name, fusedrun.metrics.unstable_windows, single.metrics.unstable_windows
        ));
    }
    let elapsed = setup + t.elapsed();
    report.line("AC6 internal contingencies:", ok && elapsed < Duration::from_secs(120), notes.join("; "), elapsed);

    let t = Instant::now();
    let mut systems = vec![System::separated()];
    systems.extend(selection.table.iter().filter_map(|r| r.best).map(System::qfc));
    let table = run_comparison(&lab, &systems, &scenarios, kbs, SEED).unwrap();
    let mut ok = table.rows.len() == 4 * scenarios.len();
    let mut notes = Vec::new();
    for s in scenarios.iter().filter(|s| s.is_contingency()) {
        let separated = table.row(&s.name, "separated").unwrap().metrics.aggregate;
        let (best_name, best) = systems[1..]
            .iter()
            .map(|sys| (sys.name.as_str(), table.row(&s.name, &sys.name).unwrap().metrics.aggregate))
            .fold(("", f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        ok &= best >= separated;
        notes.push(format!("{}: {best_name} {best:.3} vs separated {separated:.3}", s.name));
    }
    report.line("AC7 four-way comparison:", ok, notes.join("; "), t.elapsed());

    let t = Instant::now();
    let baselines = suite_baselines(&lab, kbs, &scenarios).unwrap();
    let mut brute: Option<(f64, CorrelationSpec)> = None;
    for kind in TYPES {
        for n in 0..125 {
            let spec = lab.scaling.spec(kind, [n / 25, (n / 5) % 5, n % 5]);
            let f = suite_fitness(&lab, kbs, &scenarios, &baselines, &spec).unwrap();
            if f.is_finite() && brute.map_or(true, |(bf, _)| f > bf) {
                brute = Some((f, spec));
            }
        }
    }
    let (bf, bspec) = brute.expect("a stable spec exists");
    report.line(
        "AC8 QGA correctness:",
        bspec == selection.best && bf == selection.fitness,
        format!(
            "QGA {} {:?} fitness {:.6}; brute force {} {:?} fitness {bf:.6}; evaluations {:?}",
            selection.best.kind.name(),
            selection.best.scaling,
            selection.fitness,
            bspec.kind.name(),
            bspec.scaling,
            selection.table.iter().map(|r| r.evaluations).collect::<Vec<_>>()
        ),
        t.elapsed(),
    );

    let t = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = cli_pipeline(a.path());
    let second = cli_pipeline(b.path());
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    let identical = first == second && first.len() >= 9;
    let total = suite.elapsed();
    report.line(
        "AC9 end-to-end determinism:",
        identical && total < Duration::from_secs(300),
        format!("{} files byte-identical ({}); suite wall-clock {:.0} s", names.len(), names.join(" "), total.as_secs_f64()),
        t.elapsed(),
    );

    assert!(report.failures.is_empty(), "failed criteria:\n{}", report.failures.concat());
}
