use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn rprl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rprl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    fs::write(&path, body).unwrap();
    path
}

fn run_in(dir: &Path, scenario: &Path, out: &str, extra: &[&str]) -> Output {
    let out = dir.join(out);
    let mut args = vec![
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    rprl(&args)
}

const CORRIDOR: &str =
    "solver = \"vi\"\ngamma = 0.9\n\n[world]\nwidth = 2\nheight = 1\nstart = [0, 0]\n\
                        goals = [{ cell = [1, 0], reward = 1.0 }]\n";

const SMALL_TRAIN: &str = "solver = \"train-dynamics\"\nalpha = 0.6\neta_b = 0.5\ngamma = 0.9\nseed = 3\n\n\
                           [world]\nwidth = 3\nheight = 3\nstart = [0, 0]\ngoals = [{ cell = [2, 2], reward = 1.0 }]\n\
                           traps = [[1, 1]]\n\n[train]\ncycles = 6\nwarmup_cycles = 2\neval_every = 3\n\
                           eval_episodes = 2\nsteps_per_cycle = 50\ngrid_candidates = 4\n";

#[test]
fn corridor_values_use_arrival_rewards() {
    let dir = TempDir::new().unwrap();
    let scenario = write_scenario(dir.path(), CORRIDOR);
    let out = run_in(dir.path(), &scenario, "out", &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("out/vi_values.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 2);
    let v = |row: &[&str]| row[4].parse::<f64>().unwrap();
    assert_eq!(rows[0][3], "0");
    assert!((v(&rows[0]) - 1.0).abs() < 1e-9);
    assert_eq!(rows[1][3], "1");
    assert_eq!(v(&rows[1]), 0.0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("reaches the goal"), "{stdout}");
    for name in [
        "vi_heatmap.pgm",
        "vi_policy.svg",
        "vi_trajectory.csv",
        "summary.txt",
    ] {
        assert!(
            dir.path().join("out").join(name).is_file(),
            "missing {name}"
        );
    }
}

#[test]
fn duplicate_key_exits_with_two_and_names_the_line() {
    let dir = TempDir::new().unwrap();
    let scenario = write_scenario(dir.path(), "solver = \"vi\"\nalpha = 0.3\nalpha = 0.4\n");
    let out = run_in(dir.path(), &scenario, "out", &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "{stderr}");
}

#[test]
fn inverted_budgets_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let body = format!("eta_b = 2.0\neta_b_plus = 1.0\n{CORRIDOR}");
    let scenario = write_scenario(dir.path(), &body);
    let out = run_in(dir.path(), &scenario, "out", &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("eta_b_plus"), "{stderr}");
}

#[test]
fn missing_scenario_file_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &dir.path().join("nope.toml"), "out", &[]);
    assert_eq!(out.status.code(), Some(2));
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let dir = TempDir::new().unwrap();
    let scenario = write_scenario(dir.path(), SMALL_TRAIN);
    for name in ["a", "b"] {
        let out = run_in(dir.path(), &scenario, name, &["--quiet"]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(out.stdout.is_empty());
    }
    let a = read_all(&dir.path().join("a"));
    assert!(a.iter().any(|(n, _)| n == "train-dynamics_log.csv"));
    assert_eq!(a, read_all(&dir.path().join("b")));
}

#[test]
fn seed_flag_overrides_the_scenario_seed() {
    let dir = TempDir::new().unwrap();
    let scenario = write_scenario(dir.path(), SMALL_TRAIN);
    let base = run_in(dir.path(), &scenario, "base", &[]);
    let other = run_in(dir.path(), &scenario, "other", &["--seed", "11"]);
    assert!(base.status.success() && other.status.success());
    assert!(String::from_utf8_lossy(&base.stdout).contains("seed 3"));
    assert!(String::from_utf8_lossy(&other.stdout).contains("seed 11"));
    let log = |d: &str| fs::read(dir.path().join(d).join("train-dynamics_log.csv")).unwrap();
    assert_ne!(log("base"), log("other"));
}

#[test]
fn compare_writes_all_three_solutions() {
    let dir = TempDir::new().unwrap();
    let body = "solver = \"vi\"\nalpha = 0.5\ngamma = 0.9\neta_b = 1.0\n\n[world]\nwidth = 3\nheight = 3\nstart = [0, 0]\n\
                goals = [{ cell = [2, 2], reward = 1.0 }]\n\n[preserving]\niters = 2000\n";
    let scenario = write_scenario(dir.path(), body);
    let out = run_in(dir.path(), &scenario, "out", &["--compare"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in [
        "compare.svg",
        "vi_values.csv",
        "rvi_values.csv",
        "preserving-rvi_values.csv",
    ] {
        assert!(
            dir.path().join("out").join(name).is_file(),
            "missing {name}"
        );
    }
    let svg = fs::read_to_string(dir.path().join("out/compare.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("preserving-rvi"));
    let radii = fs::read_to_string(dir.path().join("out/preserving-rvi_values.csv")).unwrap();
    assert!(radii.lines().next().unwrap().ends_with("eta_right"));
}

#[test]
fn property_checks_pass_on_an_open_world() {
    let dir = TempDir::new().unwrap();
    let body = "solver = \"check-properties\"\nalpha = 0.5\ngamma = 0.9\neta_b = 1.0\n\n[world]\nwidth = 3\n\
                height = 3\nstart = [0, 0]\ngoals = [{ cell = [2, 2], reward = 1.0 }]\ntraps = [[1, 1]]\n\n\
                [preserving]\niters = 3000\n";
    let scenario = write_scenario(dir.path(), body);
    let out = run_in(dir.path(), &scenario, "out", &[]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let report = fs::read_to_string(dir.path().join("out/preference_report.toml")).unwrap();
    assert!(report.contains("holds = true"));
    assert!(
        fs::read_to_string(dir.path().join("out/structure_report.toml"))
            .unwrap()
            .contains("applicable = true")
    );
}

#[test]
fn bundled_scenarios_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut seen = 0;
    for entry in fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            rprl_core::load_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
