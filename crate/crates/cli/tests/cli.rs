use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn occluplan(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occluplan"))
        .args(args)
        .current_dir(cwd)
        .env_remove("OCCLUPLAN_THREADS")
        .output()
        .expect("spawn occluplan")
}

fn synth_small(dir: &Path) {
    let out = occluplan(&["synth", "--kind", "T", "--seed", "4", "--out", "seq", "--frames", "4"], dir);
    assert!(out.status.success(), "{out:?}");
}

#[test]
fn synth_writes_manifest_and_frames() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("seq/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["frames"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["turn_frame"], 3);
    assert!(dir.path().join("seq/gt.ogrd").is_file());
    assert!(dir.path().join("seq/frame_003.json").is_file());
}

#[test]
fn run_render_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    synth_small(dir.path());
    for (name, method) in [("id", r#"{"method": "identity"}"#), ("or", r#"{"method": "oracle", "leak_radius": 40}"#)] {
        fs::write(
            dir.path().join(format!("{name}.json")),
            format!(r#"{{"source": {{"manifest": "seq/manifest.json"}}, "inpaint": {method}, "output_dir": "out_{name}"}}"#),
        )
        .unwrap();
        let out = occluplan(&["run", "--config", &format!("{name}.json")], dir.path());
        assert_eq!(out.status.code(), Some(0), "{out:?}");
        assert!(dir.path().join(format!("out_{name}/metrics.csv")).is_file());
    }
    let out = occluplan(&["compare", "--run", "out_or", "--run", "out_id"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("branch_accuracy\tall")));
    assert!(text.lines().any(|l| l.starts_with("frames_ahead")));

    let out = occluplan(
        &["render", "--frame", "seq/frame_000.ogrd", "--out", "f.svg", "--goal", "20,30"],
        dir.path(),
    );
    assert!(out.status.success(), "{out:?}");
    let svg = fs::read_to_string(dir.path().join("f.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"source": {"manifest": "nope.json"}, "output_dir": "o"}"#).unwrap();
    assert_eq!(occluplan(&["run", "--config", "bad.json"], dir.path()).status.code(), Some(2));
    assert_eq!(occluplan(&["run", "--config", "missing.json"], dir.path()).status.code(), Some(2));
    assert_eq!(
        occluplan(&["synth", "--kind", "Q", "--out", "x"], dir.path()).status.code(),
        Some(2)
    );
    fs::write(
        dir.path().join("ok.json"),
        r#"{"source": {"synth": {"kind": "t_junction", "frames": 2}}, "output_dir": "o"}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_occluplan"))
        .args(["run", "--config", "ok.json"])
        .current_dir(dir.path())
        .env("OCCLUPLAN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_plans_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("starved.json"),
        r#"{"source": {"synth": {"kind": "x_junction", "seed": 2, "frames": 3}},
            "vehicle": {"max_expansions": 1}, "output_dir": "o"}"#,
    )
    .unwrap();
    let out = occluplan(&["run", "--config", "starved.json"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let csv = fs::read_to_string(dir.path().join("o/metrics.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.contains(",true,")));
}
