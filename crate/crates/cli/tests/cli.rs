use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "small"
trials = 2
[geometry.layout]
kind = "circular"
n_tx = 2
n_rx = 4
tx_radius = 5000.0
rx_radius = 3000.0
[sweep]
snr_db = [10.0, 20.0]
sampling_rate = [0.5]
[estimation]
position_grid = { x = [1090.0, 1110.0], y = [1090.0, 1110.0], step = 1.0 }
velocity_grid = { x = [8.0, 12.0], y = [8.0, 12.0], step = 1.0 }
"#;

fn wsmimo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsmimo"))
        .current_dir(dir)
        .env_remove("WSMIMO_OUT")
        .env_remove("WSMIMO_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), config).unwrap();
    dir
}

fn stdout_path(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).lines().next().unwrap_or_default().to_string()
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = wsmimo(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["simulate", "complete", "localize", "af", "crlb", "sweep", "run"] {
        assert!(text.contains(cmd), "help lists {cmd}");
    }
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = setup("trials = 0");
    assert_eq!(wsmimo(dir.path(), &["--bogus"]).status.code(), Some(1));
    assert_eq!(wsmimo(dir.path(), &["--config", "missing.toml", "crlb"]).status.code(), Some(1));
    assert_eq!(wsmimo(dir.path(), &["--config", "exp.toml", "crlb"]).status.code(), Some(1));
    assert_eq!(wsmimo(dir.path(), &["--format", "xml", "crlb"]).status.code(), Some(1));
    fs::write(dir.path().join("typo.toml"), "[svt]\nmax_iter = 3").unwrap();
    assert_eq!(wsmimo(dir.path(), &["--config", "typo.toml", "crlb"]).status.code(), Some(1));
}

#[test]
fn runtime_failure_exits_two() {
    let dir = setup(SMALL);
    let out = wsmimo(dir.path(), &["--config", "exp.toml", "--out", "o", "complete", "--input", "no_such_dataset"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_convergence_exits_three_and_still_writes() {
    let dir = setup(&format!("{SMALL}\n[svt]\nmax_iters = 2\n"));
    let out = wsmimo(dir.path(), &["--config", "exp.toml", "--out", "o", "run", "--snr", "20", "--rate", "0.3"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join(stdout_path(&out)).exists());
}

#[test]
fn simulate_complete_localize_chain() {
    let dir = setup(SMALL);
    let base = ["--config", "exp.toml", "--out", "o"];
    let sim = wsmimo(dir.path(), &[&base[..], &["simulate", "--snr", "20", "--rate", "0.5", "--matrix-format", "csv"]].concat());
    assert_eq!(sim.status.code(), Some(0));
    let dataset = Path::new(&stdout_path(&sim)).parent().unwrap().to_path_buf();
    let done = wsmimo(
        dir.path(),
        &[&base[..], &["complete", "--input", dataset.to_str().unwrap(), "--trace"]].concat(),
    );
    assert_eq!(done.status.code(), Some(0), "{}", String::from_utf8_lossy(&done.stderr));
    let recovery = dir.path().join(stdout_path(&done));
    let completed = recovery.parent().unwrap().to_path_buf();
    assert!(completed.join("trace_0_0.csv").exists());
    let text = fs::read_to_string(&recovery).unwrap();
    assert_eq!(text.lines().count(), 1 + 8);
    assert!(text.starts_with("tx,rx,epsilon"));

    let loc = wsmimo(
        dir.path(),
        &[&base[..], &["--format", "json", "localize", "--input", completed.to_str().unwrap()]].concat(),
    );
    assert_eq!(loc.status.code(), Some(0), "{}", String::from_utf8_lossy(&loc.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(stdout_path(&loc))).unwrap()).unwrap();
    let rows = json.as_array().unwrap();
    assert!(rows.iter().any(|r| r["quantity"] == "position" && r["method"] == "ml"));
    assert!(rows.iter().any(|r| r["quantity"] == "velocity"));
}

#[test]
fn sweep_output_is_byte_identical_across_runs_and_threads() {
    let dir = setup(SMALL);
    let run = |out: &str, threads: &str| {
        let o = wsmimo(dir.path(), &["--config", "exp.toml", "--out", out, "--threads", threads, "sweep"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let cells = fs::read(dir.path().join(out).join("small/snr_10_20__rate_0.5.csv")).unwrap();
        let trials = fs::read(dir.path().join(out).join("small/snr_10_20__rate_0.5.trials.csv")).unwrap();
        (cells, trials)
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "3");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let text = String::from_utf8(a.0).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn output_dir_from_environment() {
    let dir = setup(SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_wsmimo"))
        .current_dir(dir.path())
        .env("WSMIMO_OUT", "from_env")
        .args(["--config", "exp.toml", "--format", "json", "crlb", "--snr", "0,10"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let path = dir.path().join("from_env/small/crlb.json");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let rows = json.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let ratio = rows[0]["sigma2_x"].as_f64().unwrap() / rows[1]["sigma2_x"].as_f64().unwrap();
    assert!((ratio - 10.0).abs() < 1e-9);
}

#[test]
fn af_writes_surface_and_summary() {
    let dir = setup(SMALL);
    let out = wsmimo(dir.path(), &["--config", "exp.toml", "--out", "o", "af", "--rate", "1", "--step", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let surface = fs::read_to_string(dir.path().join(stdout_path(&out))).unwrap();
    assert!(surface.starts_with("x,y,value"));
    assert_eq!(surface.lines().count(), 1 + 11 * 11);
    let summary = fs::read_to_string(dir.path().join("o/small/af_position_rate_1.summary.csv")).unwrap();
    assert!(summary.contains("1100.0,1100.0") || summary.contains("1100,1100"), "{summary}");
}

#[test]
fn run_json_report_has_all_sections() {
    let dir = setup(SMALL);
    let out = wsmimo(dir.path(), &["--config", "exp.toml", "--out", "o", "--format", "json", "--seed", "7", "run"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(stdout_path(&out))).unwrap()).unwrap();
    assert_eq!(report["recovery"].as_array().unwrap().len(), 8);
    assert_eq!(report["positions"].as_array().unwrap().len(), 4);
    assert_eq!(report["velocities"].as_array().unwrap().len(), 2);
    assert!(report["crlb"]["sigma2_x"].as_f64().unwrap() > 0.0);
}
