use std::fs;
use std::process::Command;

fn cubefit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cubefit"))
}

#[test]
fn synth_eval_render_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let ok = cubefit()
        .args(["synth", "--k", "2", "--seed", "5", "--width", "160", "--height", "120", "--out-dir"])
        .arg(&scene)
        .status()
        .unwrap();
    assert!(ok.success());

    let report = dir.path().join("R.json");
    let ok = cubefit()
        .arg("eval")
        .arg("--depth")
        .arg(scene.join("depth.pfm"))
        .arg("--intrinsics")
        .arg(scene.join("intrinsics.json"))
        .arg("--primitives")
        .arg(scene.join("cuboids.json"))
        .arg("--report")
        .arg(&report)
        .status()
        .unwrap();
    assert!(ok.success());
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["coverage_percent"], 100.0);
    assert_eq!(r["num_primitives"], 2);

    let rendered = dir.path().join("D.pfm");
    let ok = cubefit()
        .arg("render")
        .arg("--primitives")
        .arg(scene.join("cuboids.json"))
        .arg("--intrinsics")
        .arg(scene.join("intrinsics.json"))
        .arg("--out")
        .arg(&rendered)
        .status()
        .unwrap();
    assert!(ok.success());
    let a = cubefit::io::load_depth(&rendered).unwrap();
    let b = cubefit::io::load_depth(&scene.join("depth.pfm")).unwrap();
    // cuboids.json holds nine significant digits, so depths agree to about 1e-8 m.
    assert_eq!(a.values.len(), b.values.len());
    let worst = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "depth differs by {worst}");
}

#[test]
fn bad_input_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let depth = dir.path().join("d.csv");
    fs::write(&depth, "1.0,2.0\n3.0\n").unwrap();
    let intr = dir.path().join("k.json");
    fs::write(&intr, r#"{"fx":1,"fy":1,"cx":0.5,"cy":0.5,"width":2,"height":2}"#).unwrap();
    let out = cubefit()
        .arg("fit")
        .arg("--depth")
        .arg(&depth)
        .arg("--intrinsics")
        .arg(&intr)
        .arg("--out")
        .arg(dir.path().join("M.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let missing = cubefit().args(["eval", "--depth", "nope.pfm"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn grad_check_prints_summary() {
    let out = cubefit().args(["grad-check", "--trials", "3", "--seed", "2"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    let summary: serde_json::Value = serde_json::from_str(lines[3]).unwrap();
    assert!(summary["median"].as_f64().unwrap() < 0.05);
}
