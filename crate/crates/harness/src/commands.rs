use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use qst_core::measurement::write_atomic;
use qst_core::{MeasurementDataset, State};
use qst_crossbar::{run_network_on_crossbar, CrossbarConfig};
use qst_neural::network::{Architecture, Network};
use qst_neural::{sidecar, NeuralError, TrainTrace};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExperimentConfig, RESOLVED_CONFIG};
use crate::error::{config_err, HarnessError, Result};
use crate::experiment::{build_state, choose_bases, iterations_to, measure, network_seed, train_once};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

/// What a command reports: its exit code and the lines for standard output.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub lines: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable output");
    write_text(path, &text)
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_resolved(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    write_text(&dir.join(RESOLVED_CONFIG), &config.to_json())
}

fn run_extra(config: &ExperimentConfig, architecture: Architecture, repeat: usize) -> serde_json::Value {
    json!({
        "architecture": architecture,
        "state": config.state,
        "repeat": repeat,
        "master_seed": config.seed,
        "network_seed": network_seed(config, repeat),
        "target_fidelity": config.target_fidelity,
        "seed_scheme": "splitmix64(master, tag, index); tags: state, select, acquire, network, discriminator",
    })
}

fn write_trace(dir: &Path, trace: &TrainTrace) -> Result<()> {
    write_text(&dir.join("trace.csv"), &trace.to_csv())?;
    if let Some(rho) = &trace.final_rho {
        write_text(&dir.join("rho.json"), &State::Mixed(rho.clone()).to_json())?;
    }
    Ok(())
}

fn is_converged(trace: &TrainTrace, target: f64) -> bool {
    trace.final_fidelity.is_some_and(|f| f >= target)
}

/// Trains on one state and writes `trace.csv`, `spec.json`, `rho.json`,
/// `network.json` and `dataset.json` (one `repeat-<r>` directory per repeat
/// when there are several).
pub fn reconstruct(config: &ExperimentConfig) -> Result<Outcome> {
    let out = config.output_dir().to_path_buf();
    prepare_dir(&out)?;
    write_resolved(config, &out)?;
    let state = build_state(&config.state)?;
    let bases = choose_bases(config, &state, None)?;
    let dataset = measure(config, &state, &bases)?;
    dataset.write(&out.join("dataset.json"))?;

    let mut lines = Vec::new();
    let mut all_converged = true;
    for r in 0..config.repeats {
        let dir = if config.repeats == 1 {
            out.clone()
        } else {
            let d = out.join(format!("repeat-{r}"));
            prepare_dir(&d)?;
            d
        };
        let run = match train_once(config, config.architecture, &state, &dataset, r) {
            Ok(run) => run,
            Err(HarnessError::Training(aborted)) => {
                write_trace(&dir, &aborted.trace)?;
                return Err(HarnessError::Training(aborted));
            }
            Err(e) => return Err(e),
        };
        write_trace(&dir, &run.trace)?;
        write_json(
            &dir.join("spec.json"),
            &sidecar(&run.network, &config.train, &dataset, run_extra(config, config.architecture, r)),
        )?;
        write_text(&dir.join("network.json"), &run.network.to_json())?;
        let converged = is_converged(&run.trace, config.target_fidelity);
        all_converged &= converged;
        lines.push(format!(
            "final_fidelity={} iterations={} converged={converged}",
            run.trace.final_fidelity.unwrap_or(f64::NAN),
            run.trace.iterations
        ));
    }
    Ok(Outcome {
        code: if all_converged { EXIT_OK } else { EXIT_NOT_CONVERGED },
        lines,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Complete,
    Failed,
    /// Not run because a smaller count already reached the target.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub count: usize,
    pub status: CellStatus,
    pub reason: Option<String>,
    pub bases: Vec<String>,
    pub fidelities: Vec<f64>,
    pub fidelity_mean: Option<f64>,
    pub fidelity_std: Option<f64>,
    /// Per repeat: first logged iteration at or above the target.
    pub iterations_to_target: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub architecture: Architecture,
    pub state: crate::config::StateSpec,
    pub target_fidelity: f64,
    pub repeats: usize,
    pub cells: Vec<SweepCell>,
    /// Smallest count whose mean fidelity reached the target.
    pub minimal_count: Option<usize>,
}

impl SweepResult {
    pub fn minimal_label(&self) -> String {
        self.minimal_count.map_or_else(|| "not found".to_string(), |k| k.to_string())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("count,status,fidelity_mean,fidelity_std,repeats_reaching_target\n");
        for c in &self.cells {
            let status = match c.status {
                CellStatus::Complete => "complete",
                CellStatus::Failed => "failed",
                CellStatus::Skipped => "skipped",
            };
            let f = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
            let reached = c.iterations_to_target.iter().filter(|i| i.is_some()).count();
            let _ = writeln!(
                out,
                "{},{status},{},{},{reached}",
                c.count,
                f(c.fidelity_mean),
                f(c.fidelity_std)
            );
        }
        out
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Reconstructs with the first `|M|` selected bases for every grid value and
/// reports the smallest `|M|` whose mean fidelity reaches the target.
pub fn sweep_bases(config: &ExperimentConfig) -> Result<(Outcome, SweepResult)> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| config_err("sweep", "required by sweep-bases"))?;
    if config.measurement.strategy == Some(crate::config::Strategy::WholePool) {
        return Err(config_err(
            "measurement.strategy",
            "a sweep needs explicit, ranked_magnitude, ranked_information, greedy_information or random_subset",
        ));
    }
    let out = config.output_dir().to_path_buf();
    prepare_dir(&out)?;
    write_resolved(config, &out)?;
    let state = build_state(&config.state)?;

    let mut cells = Vec::new();
    let mut minimal = None;
    for &k in &sweep.grid {
        let mut cell = SweepCell {
            count: k,
            status: CellStatus::Complete,
            reason: None,
            bases: Vec::new(),
            fidelities: Vec::new(),
            fidelity_mean: None,
            fidelity_std: None,
            iterations_to_target: Vec::new(),
        };
        if minimal.is_some() && sweep.stop_at_first_success {
            cell.status = CellStatus::Skipped;
            cell.reason = Some("a smaller basis count reached the target".into());
            cells.push(cell);
            continue;
        }
        let bases = match choose_bases(config, &state, Some(k)) {
            Ok(b) if b.len() == k => b,
            Ok(b) => {
                cell.status = CellStatus::Failed;
                cell.reason = Some(format!("only {} bases available", b.len()));
                cells.push(cell);
                continue;
            }
            Err(HarnessError::Quantum(e)) => {
                cell.status = CellStatus::Failed;
                cell.reason = Some(e.to_string());
                cells.push(cell);
                continue;
            }
            Err(e) => return Err(e),
        };
        cell.bases = bases.strings().iter().map(|s| s.to_string()).collect();
        let dataset = measure(config, &state, &bases)?;
        for r in 0..config.repeats {
            match train_once(config, config.architecture, &state, &dataset, r) {
                Ok(run) => {
                    cell.fidelities.push(run.trace.final_fidelity.unwrap_or(0.0));
                    cell.iterations_to_target.push(iterations_to(&run.trace, config.target_fidelity));
                }
                Err(HarnessError::Training(aborted)) => {
                    cell.status = CellStatus::Failed;
                    cell.reason = Some(format!("repeat {r}: {aborted}"));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if cell.status == CellStatus::Complete {
            let (mean, std) = mean_std(&cell.fidelities);
            cell.fidelity_mean = Some(mean);
            cell.fidelity_std = Some(std);
            if mean >= config.target_fidelity && minimal.is_none() {
                minimal = Some(k);
            }
        }
        cells.push(cell);
    }
    let result = SweepResult {
        architecture: config.architecture,
        state: config.state.clone(),
        target_fidelity: config.target_fidelity,
        repeats: config.repeats,
        cells,
        minimal_count: minimal,
    };
    write_json(&out.join("sweep.json"), &result)?;
    write_text(&out.join("sweep.csv"), &result.to_csv())?;
    let outcome = Outcome {
        code: if minimal.is_some() { EXIT_OK } else { EXIT_NOT_CONVERGED },
        lines: vec![format!("minimal_bases={}", result.minimal_label())],
    };
    Ok((outcome, result))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub architecture: Architecture,
    /// Repeat index, or `None` for the aggregate row.
    pub repeat: Option<usize>,
    pub final_fidelity: f64,
    pub final_infidelity: f64,
    pub iterations: f64,
    pub wall_ms: f64,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("architecture,repeat,final_fidelity,final_infidelity,iterations,wall_ms\n");
    for r in rows {
        let repeat = r.repeat.map_or_else(|| "mean".to_string(), |i| i.to_string());
        let _ = writeln!(
            out,
            "{},{repeat},{:?},{:?},{},{:.3}",
            r.architecture, r.final_fidelity, r.final_infidelity, r.iterations, r.wall_ms
        );
    }
    out
}

/// Same state, dataset and seeds for every architecture; a report only.
pub fn bench_arch(config: &ExperimentConfig) -> Result<(Outcome, Vec<BenchRow>)> {
    let archs = config.bench_architectures()?;
    for a in &archs {
        a.ensure_supported().map_err(|e| config_err("bench.architectures", e))?;
    }
    let out = config.output_dir().to_path_buf();
    prepare_dir(&out)?;
    write_resolved(config, &out)?;
    let state = build_state(&config.state)?;
    let bases = choose_bases(config, &state, None)?;
    let dataset = measure(config, &state, &bases)?;

    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for &arch in &archs {
        let mut per = Vec::new();
        for r in 0..config.repeats {
            let run = train_once(config, arch, &state, &dataset, r)?;
            let f = run.trace.final_fidelity.unwrap_or(0.0);
            per.push(BenchRow {
                architecture: arch,
                repeat: Some(r),
                final_fidelity: f,
                final_infidelity: 1.0 - f,
                iterations: run.trace.iterations as f64,
                wall_ms: run.wall_ms,
            });
        }
        let n = per.len() as f64;
        let agg = BenchRow {
            architecture: arch,
            repeat: None,
            final_fidelity: per.iter().map(|r| r.final_fidelity).sum::<f64>() / n,
            final_infidelity: per.iter().map(|r| r.final_infidelity).sum::<f64>() / n,
            iterations: per.iter().map(|r| r.iterations).sum::<f64>() / n,
            wall_ms: per.iter().map(|r| r.wall_ms).sum::<f64>() / n,
        };
        lines.push(format!(
            "architecture={arch} mean_fidelity={} mean_iterations={}",
            agg.final_fidelity, agg.iterations
        ));
        rows.extend(per);
        rows.push(agg);
    }
    write_text(&out.join("bench.csv"), &bench_csv(&rows))?;
    Ok((Outcome { code: EXIT_OK, lines }, rows))
}

pub const CROSSBAR_REPORT: &str = "crossbar_report.json";

/// Loads the trained network of a reconstruction directory, replays it on
/// simulated arrays and writes the report beside it.
pub fn crossbar_eval(config: &ExperimentConfig) -> Result<(Outcome, qst_crossbar::DegradationReport)> {
    let run_dir: PathBuf = config.run_dir.clone().unwrap_or_else(|| config.output_dir().to_path_buf());
    let read = |name: &str| -> Result<String> {
        let path = run_dir.join(name);
        fs::read_to_string(&path).map_err(|_| HarnessError::MissingArtifact(path.display().to_string()))
    };
    let network = Network::from_json(&read("network.json")?).map_err(|e| match e {
        NeuralError::Config(msg) => config_err("network.json", msg),
        other => other.into(),
    })?;
    let dataset = MeasurementDataset::from_json(&read("dataset.json")?)?;
    let trained_with = ExperimentConfig::from_json(&read(RESOLVED_CONFIG)?)?;
    let state = build_state(&trained_with.state)?;
    let xbar: CrossbarConfig = config.crossbar.unwrap_or_default();
    let report = run_network_on_crossbar(&network, &dataset, &xbar, state.as_ref(), config.repeats)?;
    write_json(&run_dir.join(CROSSBAR_REPORT), &report)?;
    let out = config.output_dir();
    if out != run_dir {
        prepare_dir(out)?;
        write_resolved(config, out)?;
        write_json(&out.join(CROSSBAR_REPORT), &report)?;
    }
    let lines = vec![format!(
        "fidelity_float={} fidelity_mean={} fidelity_std={} delta={} tiles={} mvm_reads={}",
        report.fidelity_float, report.fidelity_mean, report.fidelity_std, report.delta, report.tiles, report.mvm_reads
    )];
    Ok((Outcome { code: EXIT_OK, lines }, report))
}
