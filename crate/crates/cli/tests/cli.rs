use std::path::Path;
use std::process::{Command, Output};

fn fracmag(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracmag"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("FRACMAG_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn verify_diamagnetic_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = fracmag(
        &["verify", "--suite", "diamagnetic", "--n", "16", "--s", "0.5", "--potential", "constant-field:2"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&dir.path().join("verify.json"));
    assert_eq!(v["pass"], true);
    assert!(v["details"]["report"]["max_violation"].as_f64().unwrap() <= 1e-12);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn minimize_rerun_is_bit_identical() {
    let args = [
        "minimize",
        "--s",
        "0.5",
        "--p",
        "3",
        "--potential",
        "zero",
        "--n",
        "12",
        "--L",
        "8",
        "--max-iter",
        "60",
        "--threads",
        "2",
    ];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (oa, ob) = (fracmag(&args, a.path()), fracmag(&args, b.path()));
    assert_eq!(oa.status.code(), ob.status.code());
    assert!(matches!(oa.status.code(), Some(0) | Some(3)), "{}", stderr(&oa));
    for name in ["result.json", "trace.csv", "minimizer.fmag", "minimizer.json"] {
        let (x, y) = (std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs between reruns");
    }
    let trace = std::fs::read_to_string(a.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("iter,energy,constraint_residual,grad_norm"));
    let manifest = json(&a.path().join("manifest.json"));
    assert_eq!(manifest["threads"], 2);
    assert_eq!(manifest["workflow"], "minimize");
}

#[test]
fn missing_required_flag_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let o = fracmag(&["seminorm", "--n", "8"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--s"), "{}", stderr(&o));
    let o = fracmag(&["split", "--s", "0.5", "--n", "8", "--r-bar", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--r-n"), "{}", stderr(&o));
    // validation happens before anything is written
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn invalid_values_exit_two_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = fracmag(&["seminorm", "--s", "0.5", "--p", "9", "--n", "8"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`p`"), "{}", stderr(&o));
    let o = fracmag(&["critical", "--s", "0.5", "--p", "2.5", "--n", "8"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = fracmag(&["seminorm", "--s", "0.5", "--n", "8", "--potential", "linear:1,2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`potential`"), "{}", stderr(&o));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "s = 0.5\nn = 8\n[minimize]\nmax_iters = 3\n").unwrap();
    let o = fracmag(&["minimize", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("max_iters"), "{}", stderr(&o));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "s = 0.25\nn = 10\nL = 6.0\ngenerator = \"gaussian:1.0\"\n").unwrap();
    let out = dir.path().join("run");
    let o = fracmag(&["seminorm", "--config", cfg.to_str().unwrap(), "--s", "0.5"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["params"]["s"], 0.5);
    assert_eq!(manifest["grid"]["n"], 10);
    let energy = json(&out.join("energy.json"));
    assert!(energy["gagliardo"].as_f64().unwrap() > 0.0);
}

#[test]
fn empty_result_file_exits_three_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("result.json");
    std::fs::write(&input, "").unwrap();
    let out = dir.path().join("plots");
    let o = fracmag(&["plotdata", "--kind", "trace", "--input", input.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(!out.exists());

    std::fs::write(&input, "{\"level\": 1.0,\n \"trace\": [oops]}").unwrap();
    let o = fracmag(&["plotdata", "--kind", "trace", "--input", input.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("byte"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn sigma_curve_and_plotdata_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = fracmag(
        &["sigma-curve", "--s", "0.5", "--n", "10", "--L", "8", "--potential", "constant-field:1", "--sigmas", "1,0.5"],
        &run,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let plots = dir.path().join("plots");
    let input = run.join("sigma_curve.json");
    let o = fracmag(&["plotdata", "--kind", "sigma-curve", "--input", input.to_str().unwrap()], &plots);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(plots.join("sigma_curve.csv")).unwrap();
    assert_eq!(csv, std::fs::read_to_string(run.join("sigma_curve.csv")).unwrap());
    assert_eq!(csv.lines().count(), 3);

    let fmag = run.join("profile");
    let o = fracmag(&["apply", "--s", "0.5", "--n", "10", "--L", "8"], &fmag);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let input = fmag.join("operator.fmag");
    let o = fracmag(&["plotdata", "--kind", "radial-profile", "--input", input.to_str().unwrap()], &plots);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(plots.join("radial_profile.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("radius,modulus,re,im"));
}

#[test]
fn manifest_is_written_before_a_failing_computation() {
    let dir = tempfile::tempdir().unwrap();
    // a calibration box far too small for the fit residual limit
    let o = fracmag(&["calibrate", "--s", "0.5", "--n", "8", "--L", "4", "--tol", "1e-6"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(dir.path().join("manifest.json").exists());
    assert!(!dir.path().join("calibration.json").exists());
}

#[test]
fn split_and_remaining_suites_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = fracmag(
        &[
            "split",
            "--s",
            "0.5",
            "--n",
            "24",
            "--L",
            "12",
            "--generator",
            "two-bumps:7,1",
            "--xi",
            "-3.5,0,0",
            "--r-bar",
            "1",
            "--r-n",
            "4",
        ],
        &dir.path().join("split"),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&dir.path().join("split/split.json"));
    // each bump lies entirely inside one piece
    assert!(r["mass_defect"].as_f64().unwrap() < 1e-12, "{r}");
    assert!(r["remainder"].as_f64().unwrap() < 1e-12, "{r}");
    assert!(dir.path().join("split/u1.fmag").exists());
    for suite in ["gauge", "upsilon", "cutoff"] {
        let o = fracmag(
            &[
                "verify",
                "--suite",
                suite,
                "--s",
                "0.5",
                "--n",
                "16",
                "--L",
                "16",
                "--potential",
                "constant-field:1",
                "--generator",
                "gaussian:1",
            ],
            &dir.path().join(suite),
        );
        assert_eq!(o.status.code(), Some(0), "{suite}: {}", stderr(&o));
    }
}

#[test]
fn thread_env_var_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fracmag"))
        .args(["seminorm", "--s", "0.5", "--n", "8", "--threads", "3", "--out"])
        .arg(dir.path())
        .env("FRACMAG_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(&dir.path().join("manifest.json"))["threads"], 1);
}
