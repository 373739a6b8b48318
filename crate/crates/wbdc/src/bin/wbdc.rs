//! Scenario runner and controller benchmark.
//!
//! `run` simulates a scenario and writes one CSV row per control cycle;
//! `bench` times the controller cycle alone (no integration, no I/O) at
//! the scenario's initial state, once per task set.
//!
//! Exit codes: 0 success, 1 controller or simulation failure (the message
//! names the failed check), 2 I/O, parse, or usage error.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use wbdc::controller::wbdc_step;
use wbdc::sim::{controller_config, load_scenario, run_scenario, Scenario, Trace};

#[derive(Parser)]
#[command(name = "wbdc", version, about = "Whole-body dynamic control scenario runner")]
struct Cli {
    /// Seed for randomized fixtures (reserved; bundled scenarios are
    /// deterministic).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a scenario and write the trace as CSV.
    Run {
        /// Scenario JSON file.
        #[arg(long)]
        scenario: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the controller cycle per task set and write a CSV report.
    Bench {
        /// Scenario JSON file.
        #[arg(long)]
        scenario: PathBuf,
        /// Timing iterations per task set (at least 100).
        #[arg(long)]
        iters: usize,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Run { scenario, out } => cmd_run(&scenario, &out),
        Cmd::Bench { scenario, iters, out } => cmd_bench(&scenario, iters, &out),
    };
    ExitCode::from(code)
}

fn load(path: &PathBuf) -> Result<Scenario, u8> {
    load_scenario(path).map_err(|e| {
        eprintln!("parse: {e}");
        2
    })
}

/// `v` with three significant digits.
fn sig3(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    let prec = (2 - exp).max(0) as usize;
    format!("{v:.prec$}")
}

fn cmd_run(scenario_path: &PathBuf, out_path: &PathBuf) -> u8 {
    let scenario = match load(scenario_path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let cfg = controller_config(&scenario);
    let outcome = match run_scenario(&scenario, &cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("sim: {e}");
            return 1;
        }
    };
    let csv = trace_csv(&scenario, &outcome.trace);
    if let Err(e) = std::fs::write(out_path, csv) {
        eprintln!("io: cannot write {}: {e}", out_path.display());
        return 2;
    }
    if let Some((t, e)) = outcome.error {
        eprintln!("controller: at t = {t:.4} s: {e}");
        return 1;
    }
    0
}

fn trace_csv(scenario: &Scenario, trace: &Trace) -> String {
    let model = &scenario.model;
    let (nq, nv, na) = (model.nq(), model.dof(), model.num_actuated());
    let nf = model.floating_dim();
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..nq).map(|i| format!("q{i}")));
    header.extend((0..nv).map(|i| format!("qdot{i}")));
    header.extend((0..na).map(|i| format!("tau{i}")));
    for (frame, dim) in &trace.force_layout {
        header.extend((0..*dim).map(|i| format!("fr_{frame}_{i}")));
    }
    header.extend((0..nf).map(|i| format!("delta{i}")));
    header.extend(trace.task_names.iter().map(|n| format!("residual_{n}")));
    header.push("solve_ms".into());

    let mut out = String::new();
    let _ = writeln!(out, "{}", header.join(","));
    for r in &trace.records {
        let mut row: Vec<String> = vec![format!("{}", r.t)];
        row.extend(r.q.iter().map(|v| format!("{v}")));
        row.extend(r.qdot.iter().map(|v| format!("{v}")));
        row.extend(r.tau.iter().map(|v| format!("{v}")));
        row.extend(r.forces.iter().map(|v| format!("{v}")));
        row.extend(r.delta.iter().map(|v| format!("{v}")));
        row.extend(r.residuals.iter().map(|v| format!("{v}")));
        row.push(sig3(r.solve_ms));
        debug_assert_eq!(row.len(), header.len());
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

fn cmd_bench(scenario_path: &PathBuf, iters: usize, out_path: &PathBuf) -> u8 {
    if iters < 100 {
        eprintln!("usage: --iters must be at least 100 (got {iters})");
        return 2;
    }
    let scenario = match load(scenario_path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let cfg = controller_config(&scenario);

    // One benchmark row per declared task set; the full task list when the
    // scenario declares none.
    let sets: Vec<Vec<String>> = if scenario.task_sets.is_empty() {
        vec![scenario.tasks.iter().map(|t| t.spec.name.clone()).collect()]
    } else {
        scenario.task_sets.clone()
    };

    let mut out = String::from("task_set,iters,mean_ms,sd_ms\n");
    for set in &sets {
        let sub = match scenario.subset(set) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("parse: task set {set:?}: {e}");
                return 2;
            }
        };
        let tasks = sub.tasks_at(0.0);
        let (contacts, _) = sub.contacts_at(0.0);
        let state = sub.initial_state.clone();
        let mut samples = Vec::with_capacity(iters);
        for _ in 0..iters {
            let start = Instant::now();
            let step = wbdc_step(&sub.model, &state, &tasks, &contacts, &sub.internals, &cfg);
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            if let Err(e) = step {
                eprintln!("controller: task set {set:?}: {e}");
                return 1;
            }
            samples.push(elapsed);
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
            / (samples.len() - 1) as f64;
        let _ = writeln!(
            out,
            "{},{},{},{}",
            set.join("+"),
            iters,
            sig3(mean),
            sig3(var.sqrt())
        );
    }
    if let Err(e) = std::fs::write(out_path, out) {
        eprintln!("io: cannot write {}: {e}", out_path.display());
        return 2;
    }
    0
}
