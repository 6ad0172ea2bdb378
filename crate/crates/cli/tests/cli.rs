//! End-to-end tests of the `moran` binary: exit codes, artifact layout,
//! reproducibility, and worker-count independence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn moran(config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moran"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

/// Parses a JSON artifact with every timestamp field zeroed, so byte
/// comparisons see only the run's content.
fn scrubbed_json(path: &Path) -> serde_json::Value {
    let mut value: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    zero_timestamps(&mut value);
    value
}

fn zero_timestamps(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for (key, entry) in map.iter_mut() {
                if key == "timestamp_unix_ms" {
                    *entry = serde_json::Value::from(0u64);
                } else {
                    zero_timestamps(entry);
                }
            }
        }
        serde_json::Value::Array(entries) => {
            for entry in entries {
                zero_timestamps(entry);
            }
        }
        _ => {}
    }
}

const TWO_ALLELIC_MODEL: &str = r#"
[model]
builder = "two_allelic"
params = { a = 1.0, b = 1.0, p = 0.0, q = 1.0 }
"#;

fn small_experiment_config() -> String {
    format!(
        r#"
task = "experiment:poc_rate"
seed = 99
{TWO_ALLELIC_MODEL}
[experiment]
populations = [8, 16, 32]
replicates = 60
horizon = 0.5
grid_points = 4
moments = [2]
"#
    )
}

#[test]
fn validate_reports_admissible_model() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        &format!("task = \"validate\"\n{TWO_ALLELIC_MODEL}"),
    );
    let out = dir.path().join("out");
    let result = moran(&config, &out, &[]);
    assert_eq!(code(&result), 0, "{}", stderr(&result));
    assert!(stdout(&result).contains("admissible"));
    assert!(out.join("validate.json").exists());
    assert!(out.join("summary.json").exists());
}

#[test]
fn missing_task_key_exits_one_and_names_the_key() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "seed = 1\n");
    let result = moran(&config, &dir.path().join("out"), &[]);
    assert_eq!(code(&result), 1);
    assert!(stderr(&result).contains("task"), "{}", stderr(&result));
}

#[test]
fn malformed_toml_exits_one_with_position() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "task = \"eigen\nbroken");
    let result = moran(&config, &dir.path().join("out"), &[]);
    assert_eq!(code(&result), 1);
    let err = stderr(&result);
    assert!(err.contains("line") && err.contains("column"), "{err}");
}

#[test]
fn unknown_builder_and_unknown_task_exit_two() {
    let dir = TempDir::new().unwrap();
    let bad_builder = write_config(
        dir.path(),
        "task = \"eigen\"\n[model]\nbuilder = \"mystery\"\n",
    );
    let result = moran(&bad_builder, &dir.path().join("out"), &[]);
    assert_eq!(code(&result), 2);
    assert!(stderr(&result).contains("mystery"));

    let bad_task = write_config(dir.path(), "task = \"dance\"\n");
    let result = moran(&bad_task, &dir.path().join("out2"), &[]);
    assert_eq!(code(&result), 2);
    assert!(stderr(&result).contains("dance"));
}

#[test]
fn missing_model_block_exits_two() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "task = \"eigen\"\n");
    let result = moran(&config, &dir.path().join("out"), &[]);
    assert_eq!(code(&result), 2);
    assert!(stderr(&result).contains("[model]"));
}

#[test]
fn eigen_task_recovers_the_dominant_eigenvalue() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        &format!("task = \"eigen\"\n{TWO_ALLELIC_MODEL}"),
    );
    let out = dir.path().join("out");
    let result = moran(&config, &out, &[]);
    assert_eq!(code(&result), 0, "{}", stderr(&result));
    let eigen = scrubbed_json(&out.join("eigen.json"));
    let lambda = eigen["payload"]["lambda"].as_f64().unwrap();
    let expected = (-3.0 + 5.0f64.sqrt()) / 2.0;
    assert!((lambda - expected).abs() <= 1e-10, "lambda {lambda}");
}

#[test]
fn expression_kernels_work_end_to_end() {
    // The same model as the builder form, with the death potential written
    // as an expression string instead of per-state values.
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "task = \"eigen\"\n\
         [model]\n\
         mutation = [[-1.0, 1.0], [1.0, -1.0]]\n\
         death = \"pos(x - 1)\"\n",
    );
    let out = dir.path().join("out");
    let result = moran(&config, &out, &[]);
    assert_eq!(code(&result), 0, "{}", stderr(&result));
    let eigen = scrubbed_json(&out.join("eigen.json"));
    let lambda = eigen["payload"]["lambda"].as_f64().unwrap();
    let expected = (-3.0 + 5.0f64.sqrt()) / 2.0;
    assert!((lambda - expected).abs() <= 1e-10, "lambda {lambda}");
}

#[test]
fn flow_task_writes_the_grid_and_checks_both_routes() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        &format!("task = \"flow\"\n{TWO_ALLELIC_MODEL}\n[flow]\nhorizon = 2.0\npoints = 40\n"),
    );
    let out = dir.path().join("out");
    let result = moran(&config, &out, &[]);
    assert_eq!(code(&result), 0, "{}", stderr(&result));
    let flow = fs::read_to_string(out.join("flow.csv")).unwrap();
    // Two stamp lines, one header, 41 grid nodes.
    assert_eq!(flow.lines().count(), 44);
    assert!(flow.starts_with("# config_sha256="));
    let summary = scrubbed_json(&out.join("summary.json"));
    assert!(summary["metrics"]["route_sup_tv"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn simulate_task_records_events_when_asked() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        &format!(
            "task = \"simulate\"\n{TWO_ALLELIC_MODEL}\n\
             [simulate]\npopulation = 16\nhorizon = 1.0\nrecord_events = true\n"
        ),
    );
    let out = dir.path().join("out");
    let result = moran(&config, &out, &[]);
    assert_eq!(code(&result), 0, "{}", stderr(&result));
    assert!(out.join("trajectory.csv").exists());
    assert!(out.join("events.csv").exists());
}

#[test]
fn variance_task_reports_the_reduction() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "task = \"variance\"\n\
         [model]\nbuilder = \"two_allelic\"\nparams = { a = 1.0, b = 1.0, p = 1.0, q = 2.0 }\n\
         [variance]\nt = 2.0\nphi = [1.0, 0.0]\ncompare = true\n",
    );
    let out = dir.path().join("out");
    let result = moran(&config, &out, &[]);
    assert_eq!(code(&result), 0, "{}", stderr(&result));
    let summary = scrubbed_json(&out.join("summary.json"));
    let sigma2 = summary["metrics"]["sigma2"].as_f64().unwrap();
    let reduction = summary["metrics"]["reduction"].as_f64().unwrap();
    assert!(sigma2 > 0.0);
    assert!(reduction >= 0.0);
}

#[test]
fn experiment_artifacts_are_reproducible_and_worker_independent() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &small_experiment_config());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let out_c = dir.path().join("c");
    let first = moran(&config, &out_a, &["--workers", "1"]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let second = moran(&config, &out_b, &["--workers", "3"]);
    assert_eq!(code(&second), 0, "{}", stderr(&second));
    let third = moran(&config, &out_c, &[]);
    assert_eq!(code(&third), 0, "{}", stderr(&third));

    let rows_a = fs::read(out_a.join("rows.csv")).unwrap();
    let rows_b = fs::read(out_b.join("rows.csv")).unwrap();
    let rows_c = fs::read(out_c.join("rows.csv")).unwrap();
    assert_eq!(rows_a, rows_b, "worker count changed the estimates");
    assert_eq!(rows_a, rows_c);
    assert_eq!(
        fs::read(out_a.join("findings.csv")).unwrap(),
        fs::read(out_b.join("findings.csv")).unwrap()
    );
    assert_eq!(
        scrubbed_json(&out_a.join("report.json")),
        scrubbed_json(&out_b.join("report.json"))
    );
    assert_eq!(
        scrubbed_json(&out_a.join("summary.json")),
        scrubbed_json(&out_b.join("summary.json"))
    );
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &small_experiment_config());
    let out = dir.path().join("out");
    let result = moran(&config, &out, &["--seed", "7"]);
    assert_eq!(code(&result), 0, "{}", stderr(&result));
    let summary = scrubbed_json(&out.join("summary.json"));
    assert_eq!(summary["seed"].as_u64().unwrap(), 7);
    let rows = fs::read_to_string(out.join("rows.csv")).unwrap();
    assert!(rows.contains("# seed=7"));
}

#[test]
fn series_expectation_mismatch_exits_three() {
    let dir = TempDir::new().unwrap();
    let config = write_config(
        dir.path(),
        "task = \"zoo-check:series\"\n\
         [series]\ntruncation = 400\nterms = 150\nbirth = 1.0\ndeath = 2.0\nexpect = \"converging\"\n",
    );
    let out = dir.path().join("out");
    let result = moran(&config, &out, &[]);
    assert_eq!(code(&result), 3, "{}", stderr(&result));
    // Artifacts still land for failed checks.
    assert!(out.join("series.json").exists());
    assert!(out.join("summary.json").exists());
    let summary = scrubbed_json(&out.join("summary.json"));
    assert_eq!(summary["passed"].as_bool().unwrap(), false);
}

#[test]
fn shipped_reference_configs_run_clean() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["birth_death.toml", "counterexample.toml"] {
        let dir = TempDir::new().unwrap();
        let result = moran(&root.join(name), &dir.path().join("out"), &[]);
        assert_eq!(code(&result), 0, "{name}: {}", stderr(&result));
    }
    // The error-decay reference writes the slope finding as a CSV row and
    // gates the exit status on it.
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let result = moran(&root.join("two_allelic.toml"), &out, &[]);
    assert_eq!(code(&result), 0, "{}", stderr(&result));
    let findings = fs::read_to_string(out.join("findings.csv")).unwrap();
    assert!(findings.contains("error_vs_population_slope"));
}
