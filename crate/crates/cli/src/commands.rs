use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fdlm_core::diagnostics::{
    convergence_study_with, dt_self_convergence, Check, VerificationReport,
};
use fdlm_core::evolution::Trajectory;
use fdlm_core::io::{
    energy_table, fluid_eigen_table, matrices_table, plot_series, recovery_table,
    solid_eigen_table, states_from_table, trajectory_table, write_plotdata, Table, HASH_KEY,
};
use fdlm_core::pipeline::{analyze, max_table_gap, RunAnalysis, Tolerances};
use fdlm_core::scenario::{Problem, Scenario, SharedBases};
use fdlm_core::spectral::{fluid_mode_checks, solid_mode_checks};
use fdlm_core::Error;
use serde_json::json;

pub enum Failure {
    Error(String),
    Checks(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

const SCENARIO_FILE: &str = "scenario.json";
const TRAJECTORY_FILE: &str = "trajectory.csv";
const ENERGY_FILE: &str = "energy.csv";
const RECOVERY_FILE: &str = "recovery.csv";
const REPORT_FILE: &str = "report.json";
const PLOTDATA_FILE: &str = "plotdata.csv";

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text)
        .map_err(|e| Failure::Error(format!("cannot write {}: {e}", path.display())))
}

fn report_json(scenario: &Scenario, report: &VerificationReport) -> String {
    let value = json!({
        "scenario": scenario.name,
        "scenario_sha256": scenario.hash(),
        "pass": report.pass(),
        "checks": report.checks,
    });
    serde_json::to_string_pretty(&value).expect("report serializes") + "\n"
}

fn print_report(report: &VerificationReport) {
    for c in &report.checks {
        let status = if c.pass { "pass" } else { "FAIL" };
        println!(
            "{status} {:<26} measured {:.3e} threshold {:.3e}",
            c.name, c.measured, c.threshold
        );
    }
}

fn outcome(report: &VerificationReport) -> CmdResult {
    if report.pass() {
        Ok(())
    } else {
        Err(Failure::Checks(
            report.failures().map(|c| c.name.clone()).collect(),
        ))
    }
}

fn output_tables(scenario: &Scenario, traj: &Trajectory, analysis: &RunAnalysis) -> [Table; 3] {
    [
        trajectory_table(traj, &scenario.hash()),
        energy_table(&analysis.energy),
        recovery_table(&analysis.recovery),
    ]
}

pub fn run(config: &Path, out: Option<&Path>, tol: &Tolerances) -> CmdResult {
    let scenario = Scenario::load(config)?;
    let dir = match (out, &scenario.output_dir) {
        (Some(dir), _) => dir.to_path_buf(),
        (None, Some(dir)) => PathBuf::from(dir),
        (None, None) => PathBuf::from("runs").join(&scenario.name),
    };
    fs::create_dir_all(&dir)
        .map_err(|e| Failure::Error(format!("cannot create {}: {e}", dir.display())))?;

    let problem = Problem::build(&scenario)?;
    let traj = problem.run()?;
    let analysis = analyze(&problem, &traj, tol)?;

    write_text(&dir.join(SCENARIO_FILE), &(scenario.to_json() + "\n"))?;
    let [traj_t, energy_t, recovery_t] = output_tables(&scenario, &traj, &analysis);
    for (name, table) in [
        (TRAJECTORY_FILE, &traj_t),
        (ENERGY_FILE, &energy_t),
        (RECOVERY_FILE, &recovery_t),
    ] {
        table.write(dir.join(name))?;
    }
    fluid_eigen_table(&fluid_mode_checks(
        &problem.fluid_basis,
        &problem.fluid_ops,
        &problem.subspace,
    ))
    .write(dir.join("fluid_modes.csv"))?;
    solid_eigen_table(&solid_mode_checks(&problem.solid_basis, &problem.solid_ops))
        .write(dir.join("solid_modes.csv"))?;
    matrices_table(&traj.matrices).write(dir.join("matrices.csv"))?;
    write_plotdata(
        dir.join(PLOTDATA_FILE),
        &plot_series(&[&energy_t, &recovery_t]),
    )?;
    write_text(
        &dir.join(REPORT_FILE),
        &report_json(&scenario, &analysis.report),
    )?;

    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let metadata = json!({
        "created_unix_seconds": created,
        "fdlm_version": env!("CARGO_PKG_VERSION"),
        "config": config.display().to_string(),
    });
    write_text(
        &dir.join("metadata.json"),
        &(serde_json::to_string_pretty(&metadata).expect("metadata serializes") + "\n"),
    )?;

    println!("wrote {}", dir.display());
    print_report(&analysis.report);
    outcome(&analysis.report)
}

fn require(dir: &Path, name: &str) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(Failure::Error(format!("missing {}", path.display())))
    }
}

/// Reads a stored table; malformed content is a failed check, unreadable files an error.
fn read_stored(
    path: &Path,
    check: &str,
    report: &mut VerificationReport,
) -> Result<Option<Table>, Failure> {
    match Table::read(path) {
        Ok(t) => Ok(Some(t)),
        Err(Error::Format { message, .. }) => {
            eprintln!("{}: {message}", path.display());
            report.push(Check::at_most(check, 1.0, 0.0));
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

pub fn verify(dir: &Path, tol: &Tolerances) -> CmdResult {
    if !dir.is_dir() {
        return Err(Failure::Error(format!(
            "no run directory {}",
            dir.display()
        )));
    }
    let scenario_path = require(dir, SCENARIO_FILE)?;
    let paths = [TRAJECTORY_FILE, ENERGY_FILE, RECOVERY_FILE].map(|name| require(dir, name));
    let [traj_path, energy_path, recovery_path] = paths;
    let (traj_path, energy_path, recovery_path) = (traj_path?, energy_path?, recovery_path?);
    let scenario = Scenario::load(&scenario_path)?;

    let mut report = VerificationReport::default();
    let stored_traj = read_stored(&traj_path, "trajectory_format", &mut report)?;
    let stored_energy = read_stored(&energy_path, "energy_format", &mut report)?;
    let stored_recovery = read_stored(&recovery_path, "recovery_format", &mut report)?;

    let problem = Problem::build(&scenario)?;
    let fresh = problem.run()?;
    let fresh_table = trajectory_table(&fresh, &scenario.hash());

    let mut traj = fresh.clone();
    if let Some(stored) = &stored_traj {
        let hash_ok = stored.meta(HASH_KEY) == Some(scenario.hash().as_str());
        report.push(Check::at_most(
            "scenario_hash",
            if hash_ok { 0.0 } else { 1.0 },
            0.0,
        ));
        let gap = if stored.header == fresh_table.header {
            max_table_gap(&stored.rows, &fresh_table.rows)
        } else {
            f64::INFINITY
        };
        report.push(Check::at_most(
            "trajectory_reproduction",
            gap,
            tol.reproduction,
        ));
        if gap.is_finite() {
            traj.states = states_from_table(stored, &traj_path.display().to_string())?;
        }
    }

    let analysis = analyze(&problem, &traj, tol)?;
    let [_, energy_t, recovery_t] = output_tables(&scenario, &traj, &analysis);
    for (stored, fresh, name) in [
        (&stored_energy, &energy_t, "energy_reproduction"),
        (&stored_recovery, &recovery_t, "recovery_reproduction"),
    ] {
        if let Some(stored) = stored {
            let gap = if stored.header == fresh.header {
                max_table_gap(&stored.rows, &fresh.rows)
            } else {
                f64::INFINITY
            };
            report.push(Check::at_most(name, gap, tol.reproduction));
        }
    }
    report.checks.extend(analysis.report.checks);

    write_text(
        &dir.join("verification.json"),
        &report_json(&scenario, &report),
    )?;
    print_report(&report);
    outcome(&report)
}

pub fn converge(config: &Path, m_list: &[usize], dt_list: &[f64], out: Option<&Path>) -> CmdResult {
    let scenario = Scenario::load(config)?;
    let d = scenario.discretization;
    let m_list = if m_list.is_empty() {
        vec![d.m]
    } else {
        m_list.to_vec()
    };
    let dt_list = if dt_list.is_empty() {
        vec![d.dt]
    } else {
        dt_list.to_vec()
    };
    if m_list.contains(&0) || dt_list.iter().any(|dt| !(*dt > 0.0)) {
        return Err(Failure::Error("m and dt entries must be positive".into()));
    }
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)
        .map_err(|e| Failure::Error(format!("cannot create {}: {e}", dir.display())))?;

    let max_m = m_list.iter().copied().max().unwrap_or(d.m).max(d.m);
    let bases = SharedBases::build(&scenario, max_m)?;

    let cauchy = convergence_study_with(&scenario, &bases, &m_list)?;
    let mut m_table = Table::new(&["m", "fluid_difference", "elastic_difference"])
        .with_meta(HASH_KEY, &scenario.hash());
    for (k, &m) in m_list.iter().enumerate() {
        let (f, e) = cauchy.get(k).map_or((f64::NAN, f64::NAN), |r| {
            (r.fluid_difference, r.elastic_difference)
        });
        m_table.push(vec![m as f64, f, e]);
    }

    let problem = Problem::from_bases(&scenario, &bases)?;
    let steps = dt_self_convergence(&problem, &dt_list)?;
    let mut dt_table =
        Table::new(&["dt", "difference", "ratio"]).with_meta(HASH_KEY, &scenario.hash());
    for row in &steps {
        dt_table.push(vec![
            row.dt,
            row.difference.unwrap_or(f64::NAN),
            row.ratio.unwrap_or(f64::NAN),
        ]);
    }

    for (name, table) in [
        ("convergence_m.csv", &m_table),
        ("convergence_dt.csv", &dt_table),
    ] {
        let path = dir.join(name);
        table.write(&path)?;
        println!("{}", path.display());
        println!("{}", table.header.join(","));
        for row in &table.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6e}")).collect();
            println!("{}", cells.join(","));
        }
    }
    Ok(())
}

pub fn plotdata(dir: &Path) -> CmdResult {
    if !dir.is_dir() {
        return Err(Failure::Error(format!(
            "no run directory {}",
            dir.display()
        )));
    }
    let energy = Table::read(require(dir, ENERGY_FILE)?)?;
    let recovery = Table::read(require(dir, RECOVERY_FILE)?)?;
    let series = plot_series(&[&energy, &recovery]);
    let path = dir.join(PLOTDATA_FILE);
    write_plotdata(&path, &series)?;
    println!("wrote {} ({} rows)", path.display(), series.len());
    Ok(())
}
