//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1 to 9 run in process; criterion 10 runs the `shk` binary twice.
//! Wall-clock budgets are reported but do not decide the outcome. Runs without
//! the libtest harness so the lines are never captured.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use shk::verify::{criterion, TITLES};

/// Seconds allowed per criterion; criterion 10 is bounded by its own runs.
const BUDGETS: [f64; 9] = [1.0, 90.0, 60.0, 61.0, 605.0, 60.0, 120.0, 5.0, 10.0];

const RUN_CONFIG: &str = r#"
kind = "pulse"
seed = 11

[pulse]
particles = 4000
t_end = 4.0
dt = 0.1
record_every = 5
micro_intervals = 2000
"#;

fn run_binary(config: &Path, out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_shk"))
        .arg("run")
        .arg(config)
        .args(["--workers", "1", "--out"])
        .arg(out)
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    match status.status.code() {
        Some(0) | Some(1) => Ok(()),
        code => Err(format!("exit {code:?}: {}", String::from_utf8_lossy(&status.stderr))),
    }
}

/// Byte comparison of every output file except `timings.json`.
fn reproducibility() -> Result<(bool, Vec<String>), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("pulse.toml");
    std::fs::write(&config, RUN_CONFIG).map_err(|e| e.to_string())?;
    let outs = [dir.path().join("a"), dir.path().join("b")];
    for out in &outs {
        run_binary(&config, out)?;
    }
    let mut names: Vec<String> = std::fs::read_dir(&outs[0])
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    names.sort();
    names.retain(|n| n != "timings.json");
    let mut lines = Vec::new();
    let mut same = !names.is_empty();
    for name in &names {
        let a = std::fs::read(outs[0].join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(outs[1].join(name)).map_err(|e| e.to_string())?;
        same &= a == b;
        lines.push(format!("{} {name} ({} bytes)", if a == b { "same" } else { "DIFFERS" }, a.len()));
    }
    Ok((same, lines))
}

fn main() {
    let mut failed = Vec::new();
    for id in 1..=10u8 {
        let t0 = Instant::now();
        let (passed, details) = if id == 10 {
            reproducibility().unwrap_or_else(|e| (false, vec![format!("error: {e}")]))
        } else {
            match criterion(id) {
                Ok(r) => (r.passed, r.details),
                Err(e) => (false, vec![format!("error: {e}")]),
            }
        };
        let seconds = t0.elapsed().as_secs_f64();
        let budget = match BUDGETS.get(id as usize - 1) {
            Some(&b) if seconds > b => format!(", over the {b} s budget"),
            Some(&b) => format!(", budget {b} s"),
            None => String::new(),
        };
        println!(
            "{} criterion {id} ({}) in {seconds:.1} s{budget}",
            if passed { "PASS" } else { "FAIL" },
            TITLES[id as usize - 1]
        );
        for line in details {
            println!("    {line}");
        }
        if !passed {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        eprintln!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
