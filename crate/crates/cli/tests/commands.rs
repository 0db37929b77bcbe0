use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cellflow"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const BLOW_UP: &str = r#"
kind = "macro"
eta = 0.5
snapshot_times = [0.0, 0.5, 1.0]
[interactions]
alignment = false
attraction_repulsion = false
tumor = false
"#;

/// Small agent run: a 21x21 grid keeps the chemoattractant solve cheap.
const MICRO: &str = r#"
kind = "micro"
agents = 20
t_final = 0.2
snapshot_times = [0.0, 0.1, 0.2]
[grid]
nx = 21
ny = 21
"#;

#[test]
fn pressureless_aggregation_exits_with_the_blow_up_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", BLOW_UP);
    let out = tmp.path().join("out");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m["status"], "blow_up");
    let t = m["diagnostics"]["blow_up"]["time"].as_f64().unwrap();
    assert!(t > 0.0 && t < 1.0);
    // snapshots before the blow-up are kept and listed
    for a in m["artifacts"].as_array().unwrap() {
        assert!(out.join(a.as_str().unwrap()).exists());
    }
    assert!(out.join("rho_0000.csv").exists());
}

#[test]
fn flags_override_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", BLOW_UP);
    let out = tmp.path().join("out");
    let o = run(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--epsilon",
        "1",
        "--limiter",
        "upwind",
        "--seed",
        "3",
        "--snapshots",
        "0.25,0.5",
        "--interactions",
        "none",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m["seed"], 3);
    assert_eq!(m["snapshots"].as_array().unwrap().len(), 2);
    let written = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(written.contains("limiter = \"upwind\"") && written.contains("epsilon = 1.0"), "{written}");
}

#[test]
fn two_population_run_follows_the_snapshot_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/macro2pop_test1.toml");
    let out = tmp.path().join("out");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    let times: Vec<f64> = m["snapshots"].as_array().unwrap().iter().map(|e| e["time"].as_f64().unwrap()).collect();
    assert_eq!(times, vec![0.2, 0.4, 0.6, 0.8, 1.0]);
    assert!(out.join("tumors.csv").exists() && out.join("phi_0004.csv").exists());
}

#[test]
fn invalid_configs_exit_with_the_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write(tmp.path(), "bad.toml", "kind = \"macro\"\n[kernels]\nr_adh = 0.01\n");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("R_adh > R_rep"));
    let cfg = write(tmp.path(), "typo.toml", "kind = \"micro\"\nagentz = 3\n");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    assert!(!out.exists());
    let o = run(&["simulate", "--config", s(&tmp.path().join("missing.toml")), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && p.file_name().unwrap() != "timing.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let micro = write(tmp.path(), "m.toml", MICRO);
    let blow = write(tmp.path(), "b.toml", BLOW_UP);
    for (cmd, cfg) in [("generate-synthetic", &micro), ("simulate", &micro), ("simulate", &blow)] {
        let a = tmp.path().join(format!("{cmd}-a"));
        let b = tmp.path().join(format!("{cmd}-b"));
        run(&[cmd, "--config", s(cfg), "--out", s(&a), "--seed", "5"]);
        run(&[cmd, "--config", s(cfg), "--out", s(&b), "--seed", "5"]);
        let (fa, fb) = (dir_bytes(&a), dir_bytes(&b));
        assert!(fa.len() > 2);
        assert_eq!(fa, fb, "{cmd}");
        std::fs::remove_dir_all(&a).unwrap();
        std::fs::remove_dir_all(&b).unwrap();
    }
}

#[test]
fn manifest_digest_matches_the_written_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "m.toml", MICRO);
    let out = tmp.path().join("out");
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--out", s(&out)])), 0);
    let m = manifest(&out);
    // rerunning from the written config reproduces the digest
    let again = tmp.path().join("again");
    assert_eq!(code(&run(&["simulate", "--config", s(&out.join("config.toml")), "--out", s(&again)])), 0);
    assert_eq!(manifest(&again)["config_digest"], m["config_digest"]);
    let listed: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    assert!(listed.contains(&"trajectories.csv") && listed.contains(&"config.toml") && listed.contains(&"timing.json"));
}

fn estimation_config(dir: &Path, trajectories: &str, extra: &str) -> PathBuf {
    write(
        dir,
        "est.toml",
        &format!(
            r#"
kind = "estimation"
theta0 = [6.0, 500.0, 4.0, 2000.0, 0.0, 1.2]
{extra}
[data]
trajectories = "{trajectories}"
[optimizer]
max_iterations = 1
[forward]
alpha = 100.0
blow_up_factor = 1000.0
[forward.grid]
nx = 21
ny = 21
[forward.interactions]
alignment = true
attraction_repulsion = true
tumor = true
[forward.chemo]
d = 45.0
kappa = 0.2
source = {{ mode = "tumor_convolution" }}
"#
        ),
    )
}

#[test]
fn estimate_and_sensitivity_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let micro = write(tmp.path(), "m.toml", MICRO);
    let data = tmp.path().join("data");
    assert_eq!(code(&run(&["generate-synthetic", "--config", s(&micro), "--out", s(&data)])), 0);
    let cfg = estimation_config(tmp.path(), "data/trajectories.csv", "");
    let out = tmp.path().join("fit");
    let o = run(&["estimate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let e = report["error"].as_f64().unwrap();
    assert!(e.is_finite() && e >= 0.0);
    assert_eq!(report["data_times"], serde_json::json!([0.1, 0.2]));
    assert_eq!(report["upper"][1], 25000.0);
    assert_eq!(report["snapshot_residuals"].as_array().unwrap().len(), 2);
    assert!(out.join("best_fit/rho_0001.csv").exists());
    let m = manifest(&out);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 1);

    let sens = tmp.path().join("sens");
    let o = run(&["sensitivity", "--config", s(&cfg), "--out", s(&sens), "--report", s(&out.join("report.json"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sens.join("sensitivity.json")).unwrap()).unwrap();
    assert_eq!(table["theta"], report["theta_opt"]);
    assert_eq!(table["entries"].as_array().unwrap().len(), 6);
    // w_rep_tum = 0 has no relative perturbation
    assert!(table["entries"][4]["plus"].is_null());
}

#[test]
fn missing_data_fails_without_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = estimation_config(tmp.path(), "nowhere.csv", "");
    let out = tmp.path().join("fit");
    let o = run(&["estimate", "--config", s(&cfg), "--out", s(&out)]);
    assert_ne!(code(&o), 0);
    assert!(!out.exists());
    let o =
        run(&["estimate", "--config", s(&cfg), "--out", s(&out), "--data", s(&tmp.path().join("also-missing.csv"))]);
    assert_ne!(code(&o), 0);
    assert!(!out.exists());
    let bad = write(tmp.path(), "bad.csv", "time,agent_id,x,y\n0.5,0,0.1,0.1\n");
    let o = run(&["estimate", "--config", s(&cfg), "--out", s(&out), "--data", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("first recorded time must be 0"));
    assert!(!out.exists());
}

fn png_ok(p: &Path) {
    let bytes = std::fs::read(p).unwrap();
    assert!(bytes.len() > 100 && bytes.starts_with(b"\x89PNG"), "{}", p.display());
}

#[test]
fn plots_of_every_style() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "b.toml", &BLOW_UP.replace("eta = 0.5", "eta = 0.1"));
    let sim = tmp.path().join("sim");
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--out", s(&sim)])), 0);
    let plots = tmp.path().join("plots");
    let rho = sim.join("rho_0001.csv");
    let o = run(&["plot", s(&rho), s(&sim.join("rho_0002.csv")), "--out", s(&plots)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    png_ok(&plots.join("rho_0001.png"));
    png_ok(&plots.join("rho_0002.png"));
    let o = run(&["plot", s(&rho), "--style", "quiver-overlay", "--out", s(&plots)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    png_ok(&plots.join("rho_0001_quiver.png"));

    // agents at t = 0.1 over the chemoattractant at the same time
    let micro = write(tmp.path(), "m.toml", MICRO);
    let agents = tmp.path().join("agents");
    assert_eq!(code(&run(&["simulate", "--config", s(&micro), "--out", s(&agents)])), 0);
    let o = run(&[
        "plot",
        s(&agents.join("phi_0001.csv")),
        "--style",
        "agents-overlay",
        "--trajectories",
        s(&agents.join("trajectories.csv")),
        "--tumors",
        s(&agents.join("tumors.csv")),
        "--out",
        s(&plots),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    png_ok(&plots.join("phi_0001_agents.png"));
}

#[test]
fn plot_rejects_mismatched_grids_and_missing_times() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let cfg = write(tmp.path(), "b.toml", &BLOW_UP.replace("eta = 0.5", "eta = 0.1"));
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--out", s(&sim)])), 0);
    // replace the momentum file by one on a coarser grid
    let coarse = tmp.path().join("coarse");
    let small = write(
        tmp.path(),
        "small.toml",
        &format!("{}\n[grid]\nnx = 11\nny = 11\n", BLOW_UP.replace("eta = 0.5", "eta = 0.1")),
    );
    assert_eq!(code(&run(&["simulate", "--config", s(&small), "--out", s(&coarse)])), 0);
    std::fs::copy(coarse.join("mx_0001.csv"), sim.join("mx_0001.csv")).unwrap();
    let plots = tmp.path().join("plots");
    let o = run(&["plot", s(&sim.join("rho_0001.csv")), "--style", "quiver-overlay", "--out", s(&plots)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not match"));
    assert!(!plots.exists());

    let traj = write(tmp.path(), "t.csv", "time,agent_id,x,y\n0.3,0,0.5,0.5\n");
    let o = run(&[
        "plot",
        s(&sim.join("rho_0001.csv")),
        "--style",
        "agents-overlay",
        "--trajectories",
        s(&traj),
        "--out",
        s(&plots),
    ]);
    assert_eq!(code(&o), 1);
    let o = run(&["plot", s(&sim.join("rho_0001.csv")), "--style", "agents-overlay", "--out", s(&plots)]);
    assert_eq!(code(&o), 3);
}
