use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fdlm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdlm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

fn small_config(
    dir: &Path,
    name: &str,
    motion: &str,
    velocity: &str,
    displacement: &str,
) -> PathBuf {
    let text = format!(
        r#"{{
  "schema_version": 1,
  "name": "{name}",
  "geometry": {{
    "fluid": {{ "x": [0.0, 1.0], "y": [0.0, 1.0], "nx": 8, "ny": 8 }},
    "solid": {{ "x": [0.4, 0.6], "y": [0.4, 0.6], "nx": 4, "ny": 4 }}
  }},
  "motion": {motion},
  "params": {{ "rho_f": 1.0, "rho_s": 2.0, "nu_f": 1.0, "nu_s": 1.0, "kappa": 1.0 }},
  "discretization": {{ "m": 3, "r": 12, "final_time": 0.1, "dt": 0.002, "dt_out": 0.02 }},
  "initial": {{ "velocity": {velocity}, "displacement": "{displacement}" }}
}}
"#
    );
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, text).unwrap();
    path
}

fn rotation_config(dir: &Path) -> PathBuf {
    small_config(
        dir,
        "rot",
        r#"{ "kind": "rotation", "center": [0.5, 0.5], "omega": 1.0 }"#,
        r#"{ "kind": "first_fluid_mode", "amplitude": 1.0 }"#,
        "reference",
    )
}

fn run_into(config: &Path, out: &Path) -> Output {
    fdlm(&[
        "run",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn run_writes_outputs_and_verify_passes() {
    let tmp = TempDir::new().unwrap();
    let config = rotation_config(tmp.path());
    let out = tmp.path().join("run");
    let result = run_into(&config, &out);
    assert_eq!(
        code(&result),
        0,
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    for f in [
        "scenario.json",
        "trajectory.csv",
        "energy.csv",
        "recovery.csv",
        "report.json",
        "plotdata.csv",
        "metadata.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let text = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(!text.contains('\r'));
    assert!(text.starts_with("# scenario_sha256="));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);

    let verify = fdlm(&["verify", out.to_str().unwrap()]);
    assert_eq!(
        code(&verify),
        0,
        "{}",
        String::from_utf8_lossy(&verify.stdout)
    );
    assert!(out.join("verification.json").is_file());
}

#[test]
fn identical_config_gives_identical_outputs() {
    let tmp = TempDir::new().unwrap();
    let config = rotation_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(code(&run_into(&config, &a)), 0);
    assert_eq!(code(&run_into(&config, &b)), 0);
    for f in [
        "scenario.json",
        "trajectory.csv",
        "energy.csv",
        "recovery.csv",
        "report.json",
        "plotdata.csv",
        "matrices.csv",
        "fluid_modes.csv",
        "solid_modes.csv",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn zero_data_gives_zero_trajectory() {
    let tmp = TempDir::new().unwrap();
    let config = small_config(
        tmp.path(),
        "zero",
        r#"{ "kind": "identity" }"#,
        r#"{ "kind": "zero" }"#,
        "zero",
    );
    let out = tmp.path().join("run");
    assert_eq!(code(&run_into(&config, &out)), 0);
    let rows = read_csv(&out.join("trajectory.csv"));
    assert!(rows.len() > 2);
    for row in &rows[1..] {
        for v in &row[1..] {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0);
        }
    }
    let plot = read_csv(&out.join("plotdata.csv"));
    assert!(plot.len() > 1);
    for row in &plot[1..] {
        let v: f64 = row[2].parse().unwrap();
        assert!(v.abs() <= 1e-14 || row[0] == "beta_h", "{row:?}");
    }
}

#[test]
fn malformed_json_exits_one_with_line() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(&path, "{\n  \"schema_version\": 1,\n  \"name\": \n}\n").unwrap();
    let out = fdlm(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn unknown_key_exits_one() {
    let tmp = TempDir::new().unwrap();
    let config = rotation_config(tmp.path());
    let text =
        fs::read_to_string(&config)
            .unwrap()
            .replacen("\"name\"", "\"colour\": 1,\n  \"name\"", 1);
    fs::write(&config, text).unwrap();
    let out = run_into(&config, &tmp.path().join("o"));
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn failing_check_exits_two_and_names_it() {
    let tmp = TempDir::new().unwrap();
    let config = rotation_config(tmp.path());
    let out = fdlm(&[
        "run",
        config.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
        "--split-tol",
        "0",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("split_residual"));
}

#[test]
fn corrupted_trajectory_fails_verification() {
    let tmp = TempDir::new().unwrap();
    let config = rotation_config(tmp.path());
    let out = tmp.path().join("run");
    assert_eq!(code(&run_into(&config, &out)), 0);
    let path = out.join("trajectory.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let row = lines.len() - 1;
    let mut fields: Vec<String> = lines[row].split(',').map(str::to_string).collect();
    fields[1] = "0.5".into();
    lines[row] = fields.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let verify = fdlm(&["verify", out.to_str().unwrap()]);
    assert_eq!(code(&verify), 2);
    assert!(String::from_utf8_lossy(&verify.stderr).contains("trajectory_reproduction"));

    fs::write(&path, text.replacen("e-1", "e-1x", 1)).unwrap();
    let verify = fdlm(&["verify", out.to_str().unwrap()]);
    assert_eq!(code(&verify), 2);
    assert!(String::from_utf8_lossy(&verify.stderr).contains("trajectory_format"));
}

#[test]
fn verify_tolerances_are_overridable() {
    let tmp = TempDir::new().unwrap();
    let config = rotation_config(tmp.path());
    let out = tmp.path().join("run");
    assert_eq!(code(&run_into(&config, &out)), 0);
    let tight = fdlm(&["verify", out.to_str().unwrap(), "--constraint-tol=-1"]);
    assert_eq!(code(&tight), 2);
    assert!(String::from_utf8_lossy(&tight.stderr).contains("constraint_residual"));
}

#[test]
fn missing_files_exit_one() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nothing");
    assert_eq!(code(&fdlm(&["verify", missing.to_str().unwrap()])), 1);
    assert_eq!(code(&fdlm(&["plotdata", missing.to_str().unwrap()])), 1);
    fs::create_dir(&missing).unwrap();
    assert_eq!(code(&fdlm(&["verify", missing.to_str().unwrap()])), 1);
    assert_eq!(code(&fdlm(&["plotdata", missing.to_str().unwrap()])), 1);
    let config = tmp.path().join("none.json");
    assert_eq!(code(&fdlm(&["run", config.to_str().unwrap()])), 1);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&fdlm(&[])), 1);
    assert_eq!(code(&fdlm(&["run"])), 1);
    assert_eq!(code(&fdlm(&["frobnicate"])), 1);
    assert_eq!(code(&fdlm(&["--help"])), 0);
}

#[test]
fn converge_with_single_entries_gives_one_row() {
    let tmp = TempDir::new().unwrap();
    let config = rotation_config(tmp.path());
    let out = tmp.path().join("conv");
    let result = fdlm(&[
        "converge",
        config.to_str().unwrap(),
        "--m-list",
        "3",
        "--dt-list",
        "0.002",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&result),
        0,
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let m = read_csv(&out.join("convergence_m.csv"));
    assert_eq!(m.len(), 2);
    assert_eq!(m[0], ["m", "fluid_difference", "elastic_difference"]);
    let dt = read_csv(&out.join("convergence_dt.csv"));
    assert_eq!(dt.len(), 2);
    assert_eq!(dt[0], ["dt", "difference", "ratio"]);
}

#[test]
fn converge_tables_have_one_row_per_entry() {
    let tmp = TempDir::new().unwrap();
    let config = rotation_config(tmp.path());
    let out = tmp.path().join("conv");
    let result = fdlm(&[
        "converge",
        config.to_str().unwrap(),
        "--m-list",
        "2,3,4",
        "--dt-list",
        "0.004,0.002,0.001",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&result),
        0,
        "{}",
        String::from_utf8_lossy(&result.stderr)
    );
    let dt = read_csv(&out.join("convergence_dt.csv"));
    assert_eq!(dt.len(), 4);
    let ratio: f64 = dt[1][2].parse().unwrap();
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    let m = read_csv(&out.join("convergence_m.csv"));
    assert_eq!(m.len(), 4);
    assert!(m[1][1].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn shipped_demos_emit_nonempty_series() {
    let tmp = TempDir::new().unwrap();
    for name in ["identity", "rotation", "translation"] {
        let out = tmp.path().join(name);
        let result = run_into(&shipped(name), &out);
        assert_eq!(
            code(&result),
            0,
            "{name}: {}",
            String::from_utf8_lossy(&result.stdout)
        );
        fs::remove_file(out.join("plotdata.csv")).unwrap();
        assert_eq!(code(&fdlm(&["plotdata", out.to_str().unwrap()])), 0);
        let plot = read_csv(&out.join("plotdata.csv"));
        assert!(plot.len() > 100, "{name}");
        let kinetic: Vec<f64> = plot[1..]
            .iter()
            .filter(|r| r[0] == "kinetic")
            .map(|r| r[2].parse().unwrap())
            .collect();
        assert!(kinetic[0] > 0.0 && kinetic.last().unwrap() < &kinetic[0]);
    }
}

#[test]
fn shipped_zero_demo_is_flat() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("zero");
    assert_eq!(code(&run_into(&shipped("zero"), &out)), 0);
    let plot = read_csv(&out.join("plotdata.csv"));
    assert!(plot.len() > 1);
    for name in [
        "kinetic",
        "elastic",
        "total",
        "multiplier_h1_norm",
        "pressure_l2_norm",
    ] {
        let values: Vec<f64> = plot[1..]
            .iter()
            .filter(|r| r[0] == name)
            .map(|r| r[2].parse().unwrap())
            .collect();
        assert!(!values.is_empty());
        assert!(
            values.iter().all(|v| v.abs() <= 1e-14),
            "{name}: {values:?}"
        );
    }
}
