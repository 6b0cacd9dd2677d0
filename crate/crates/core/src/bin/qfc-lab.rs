use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qfc_core::fuzzy::canonical_json;
use qfc_core::harness::{
    calibrate_displacement, emit_fuzzy_surface, read_kb, run_comparison, run_scenario_with_diagnostics,
    run_with_kbs, select_correlation, train_kbs, write_file, HarnessError, KbSet, LabConfig, ScenarioConfig,
    System,
};
use qfc_core::pid::Channel;
use qfc_core::qfi::CorrelationType;

/// File written by `train-kb` next to the knowledge bases: the lab settings
/// actually used, including the calibrated displacement.
const LAB_FILE: &str = "lab.json";

#[derive(Parser, Debug)]
#[command(name = "qfc-lab", version, about = "Fuzzy and quantum-fuzzy PID experiments on a 3-link manipulator")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Lab configuration (JSON); defaults apply to omitted fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Args, Debug)]
struct KbSource {
    /// Directory written by `train-kb`; without it the knowledge bases are
    /// trained from --seed.
    #[arg(long)]
    kb_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Teaching signal and knowledge bases for every topology.
    TrainKb,
    /// One closed-loop run.
    Run {
        /// Full scenario description (JSON); overrides --scenario/--system.
        #[arg(long, conflicts_with_all = ["scenario", "system"])]
        scenario_file: Option<PathBuf>,
        #[arg(long, default_value = "standard")]
        scenario: String,
        #[arg(long, default_value = "separated")]
        system: String,
        #[command(flatten)]
        kbs: KbSource,
    },
    /// Comparison table over systems and scenarios.
    Compare {
        /// Comma-separated scenario names (default: whole catalog).
        #[arg(long, value_delimiter = ',')]
        scenario: Vec<String>,
        /// Comma-separated system names.
        #[arg(long, value_delimiter = ',', default_value = "separated,qfc-temporal,qfc-spatial,qfc-spatio-temporal")]
        systems: Vec<String>,
        #[command(flatten)]
        kbs: KbSource,
    },
    /// Quantum-genetic choice of correlation type and scaling factors.
    QgaSelect {
        #[arg(long, value_delimiter = ',', default_value = "temporal,spatial,spatio-temporal")]
        types: Vec<String>,
        #[command(flatten)]
        kbs: KbSource,
    },
    /// Inferred-gain grid of one knowledge base channel.
    Surface {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long, default_value = "kp")]
        channel: String,
        #[arg(long, default_value_t = 50)]
        resolution: usize,
    },
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn read_text(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })
}

fn base_lab(cli: &Cli, kb_dir: Option<&Path>) -> Result<LabConfig, HarnessError> {
    if let Some(path) = &cli.config {
        return LabConfig::from_json(&read_text(path)?);
    }
    if let Some(lab) = kb_dir.map(|d| d.join(LAB_FILE)).filter(|p| p.exists()) {
        return LabConfig::from_json(&read_text(&lab)?);
    }
    Ok(LabConfig::default())
}

/// Trains (and calibrates) from the seed, or loads a `train-kb` directory.
fn knowledge(cli: &Cli, source: &KbSource) -> Result<(LabConfig, KbSet), HarnessError> {
    let mut lab = base_lab(cli, source.kb_dir.as_deref())?;
    match &source.kb_dir {
        Some(dir) => Ok((lab, KbSet::load(dir)?)),
        None => {
            let kbs = train_kbs(&lab, cli.seed)?.kbs;
            if let Some(d) = calibrate_displacement(&lab, &kbs)? {
                lab.displacement = d;
            }
            Ok((lab, kbs))
        }
    }
}

fn execute(cli: &Cli) -> Result<Vec<PathBuf>, HarnessError> {
    let out = &cli.out_dir;
    let ext = cli.format.ext();
    let mut written = Vec::new();
    let mut emit = |name: String, contents: String| -> Result<(), HarnessError> {
        let path = out.join(name);
        write_file(&path, &contents)?;
        written.push(path);
        Ok(())
    };
    match &cli.command {
        Command::TrainKb => {
            let mut lab = base_lab(cli, None)?;
            let training = train_kbs(&lab, cli.seed)?;
            if let Some(d) = calibrate_displacement(&lab, &training.kbs)? {
                lab.displacement = d;
            }
            training.save(out, &lab, cli.seed)?;
            emit(LAB_FILE.into(), canonical_json(&lab))?;
        }
        Command::Run { scenario_file, scenario, system, kbs } => {
            let (record, diagnostics) = match scenario_file {
                Some(path) => run_scenario_with_diagnostics(&ScenarioConfig::from_json(&read_text(path)?)?)?,
                None => {
                    let (lab, set) = knowledge(cli, kbs)?;
                    let system = System::parse(system)?;
                    let config = qfc_core::harness::cell_config(
                        &lab,
                        &system,
                        &lab.scenario(scenario)?,
                        kbs.kb_dir.as_deref().unwrap_or(Path::new("")),
                        cli.seed,
                    );
                    (run_with_kbs(&config, &set.for_topology(system.topology))?, Vec::new())
                }
            };
            emit(
                format!("run.{ext}"),
                match cli.format {
                    Format::Csv => record.to_csv(),
                    Format::Json => record.to_json(),
                },
            )?;
            if !diagnostics.is_empty() {
                emit("qfi_diagnostics.csv".into(), diagnostics.join("\n") + "\n")?;
            }
        }
        Command::Compare { scenario, systems, kbs } => {
            let (lab, set) = knowledge(cli, kbs)?;
            let systems = systems.iter().map(|s| System::parse(s)).collect::<Result<Vec<_>, _>>()?;
            let scenarios = if scenario.is_empty() {
                lab.catalog()
            } else {
                scenario.iter().map(|s| lab.scenario(s)).collect::<Result<Vec<_>, _>>()?
            };
            let table = run_comparison(&lab, &systems, &scenarios, &set, cli.seed)?;
            emit(
                format!("comparison.{ext}"),
                match cli.format {
                    Format::Csv => table.to_csv(),
                    Format::Json => table.to_json(),
                },
            )?;
        }
        Command::QgaSelect { types, kbs } => {
            let types = types
                .iter()
                .map(|t| CorrelationType::parse(t).ok_or_else(|| config_err(format!("unknown correlation type '{t}'"))))
                .collect::<Result<Vec<_>, _>>()?;
            let (lab, set) = knowledge(cli, kbs)?;
            let selection = select_correlation(&lab, &set, &lab.catalog(), &types, cli.seed)?;
            let text = match cli.format {
                Format::Json => canonical_json(&serde_json::json!({
                    "seed": cli.seed,
                    "best": selection.best,
                    "fitness": selection.fitness,
                    "table": selection.table,
                })),
                Format::Csv => {
                    let mut s = format!("# seed={}\ntype,fitness,evaluations,scaling_kp,scaling_kd,scaling_ki,lag,best\n", cli.seed);
                    for row in &selection.table {
                        let sc = row.best.map(|b| b.scaling.map(|v| format!("{v:?}"))).unwrap_or_else(|| ["".into(), "".into(), "".into()]);
                        let lag = row.best.map(|b| b.lag.to_string()).unwrap_or_default();
                        s += &format!(
                            "{},{:?},{},{},{},{},{},{}\n",
                            row.kind.name(),
                            row.fitness,
                            row.evaluations,
                            sc[0],
                            sc[1],
                            sc[2],
                            lag,
                            row.best == Some(selection.best)
                        );
                    }
                    s
                }
            };
            emit(format!("qga_selection.{ext}"), text)?;
        }
        Command::Surface { kb, channel, resolution } => {
            let channel = Channel::parse(channel).ok_or_else(|| config_err(format!("unknown channel '{channel}'")))?;
            let kb = read_kb(kb)?;
            let csv = emit_fuzzy_surface(&kb, channel, *resolution)?;
            let text = match cli.format {
                Format::Csv => csv,
                Format::Json => {
                    let (_, header, rows) = qfc_core::harness::parse_csv(&csv);
                    let rows: Vec<Vec<f64>> =
                        rows.iter().map(|r| r.iter().map(|v| v.parse().expect("emitted number")).collect()).collect();
                    canonical_json(&serde_json::json!({ "columns": header, "rows": rows }))
                }
            };
            emit(format!("surface_{}.{ext}", channel.name()), text)?;
        }
    }
    Ok(written)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_config() { 1 } else { 2 })
        }
    }
}
