use std::path::Path;
use std::process::{Command, Output};

fn slidereg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slidereg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(slidereg(&[]).status.code(), Some(1));
    assert_eq!(slidereg(&["synth", "triangle", "--out", "x"]).status.code(), Some(1));
    assert_eq!(slidereg(&["tre", "--ref-lms", "a"]).status.code(), Some(1));
    assert_eq!(slidereg(&["run", "--experiment", "/nonexistent/spec.json"]).status.code(), Some(1));
    assert_eq!(slidereg(&["--help"]).status.code(), Some(0));
}

#[test]
fn synth_then_tre() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rect");
    let o = slidereg(&["synth", "rectangle", "--size", "32", "--shift", "3", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["template.pgm", "reference.pgm", "forward_map.json", "inverse_map.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let r = out.join("reference_landmarks.txt");
    let t = out.join("template_landmarks.txt");
    let before = slidereg(&["tre", "--ref-lms", p(&r), "--tpl-lms", p(&t), "--spacing", "1,1"]);
    assert!(before.status.success());
    assert!((json(&before)["tre_mm"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    let inv = out.join("inverse_map.json");
    let after = slidereg(&["tre", "--ref-lms", p(&r), "--tpl-lms", p(&t), "--spacing", "1,1", "--map", p(&inv)]);
    assert!(json(&after)["tre_mm"].as_f64().unwrap() < 1e-12);
    let fwd = out.join("forward_map.json");
    let wrong = slidereg(&["tre", "--ref-lms", p(&r), "--tpl-lms", p(&t), "--spacing", "1,1", "--map", p(&fwd)]);
    assert_eq!(wrong.status.code(), Some(1));
}

#[test]
fn synth_wheel_rejects_large_angle() {
    let dir = tempfile::tempdir().unwrap();
    let o = slidereg(&["synth", "wheel", "--angle", "50", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn demo_writes_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = slidereg(&["demo", "fig1c", "--out", p(dir.path())]);
    assert!(o.status.success());
    assert_eq!(json(&o)["sign_flip"], serde_json::Value::Bool(true));
    assert!(dir.path().join("grid.pgm").exists());
}

#[test]
fn nonsmooth_check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    std::fs::write(
        &good,
        r#"{"boundaries":[{"kind":"moving_hyperplane","normal":[1,0],"offset":0}],
            "field":{"pieces":[{"signs":[-1],"offset":[1,0]},{"signs":[1],"offset":[1,2]}]},
            "x0":[-0.5,0],"t":1,"expected":[[1,0],[2,1]]}"#,
    )
    .unwrap();
    let o = slidereg(&["nonsmooth-check", "--scenario", p(&good)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["pass"], serde_json::Value::Bool(true));

    // velocity tangent to the switching line: no transversal crossing exists
    let tangential = dir.path().join("tangential.json");
    std::fs::write(
        &tangential,
        r#"{"boundaries":[{"kind":"moving_hyperplane","normal":[1,0],"offset":0}],
            "field":{"pieces":[{"signs":[-1],"offset":[1,0]},{"signs":[1],"offset":[-1,0]}]},
            "x0":[-0.5,0],"t":1}"#,
    )
    .unwrap();
    let o = slidereg(&["nonsmooth-check", "--scenario", p(&tangential)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn register_and_run_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let syn = dir.path().join("syn");
    assert!(slidereg(&["synth", "rectangle", "--size", "16", "--shift", "1", "--out", p(&syn)]).status.success());
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"kernel":{"family":"wendland_c0_mult","scale":4.0},"orders":"zeroth_and_first",
            "T":3,"max_iters":5,"reg_weight":0.01,"control_stride":4}"#,
    )
    .unwrap();
    let out = dir.path().join("reg");
    let o = slidereg(&[
        "register",
        "--template",
        p(&syn.join("template.pgm")),
        "--reference",
        p(&syn.join("reference.pgm")),
        "--config",
        p(&cfg),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&o);
    let after = report["methods"]["wendland_both"]["ssd_after"].as_f64().unwrap();
    assert!(after < report["ssd_before"].as_f64().unwrap());
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,E_S,E_R,sparsity,total\n"));
    for f in ["warped.pgm", "magnitude.pgm", "grid.pgm", "report.json", "inverse_map.json"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let spec = dir.path().join("spec.json");
    let exp_out = dir.path().join("exp");
    std::fs::write(
        &spec,
        format!(
            r#"{{"name":"tiny","generator":{{"kind":"rectangle","size":16,"shift":1}},
                "config":{{"kernel":{{"family":"gaussian","scale":4.0}},"orders":"zeroth_only","T":2,"max_iters":3,"control_stride":4}},
                "methods":["gaussian","wendland_both"],"output":{:?}}}"#,
            exp_out
        ),
    )
    .unwrap();
    let o = slidereg(&["run", "--experiment", p(&spec)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&o);
    assert!(report["methods"]["gaussian"].is_object());
    assert!(exp_out.join("wendland_both").join("trace.csv").exists());
    assert!(exp_out.join("report.json").exists());
}
