use std::path::Path;
use std::process::{Command, Output};

use sfdoptics::dataset::{read_report, Manifest, MANIFEST_FILE};
use sfdoptics::io::{load_lut, load_op_map, read_json};

fn sfdoptics(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfdoptics"))
        .env_remove("SFDOPTICS_LUT_CACHE")
        .current_dir(cwd)
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) {
    let out = sfdoptics(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sfdoptics(&[], dir.path()).status.code(), Some(2));
    assert_eq!(sfdoptics(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(sfdoptics(&["lut", "build", "--photons", "many"], dir.path()).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.json"), "{}").unwrap();
    let out = sfdoptics(&["synth", "--scene", "s.json", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("SFDOPTICS_LUT_CACHE"));
    let out =
        sfdoptics(&["sfdi", "process", "--frames", "a", "--cal", "b", "--out", "c", "--lut", "none.sflut"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn scripted_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["--seed", "3", "lut", "build", "--photons", "20000", "--grid-points", "48", "--out", "lut.sflut"], d);
    let lut = load_lut(&d.join("lut.sflut")).unwrap();
    assert_eq!(lut.provenance().seed, 3);
    assert_eq!(load_lut(&d.join("lut.json")).unwrap(), lut);

    std::fs::write(
        d.join("reference.json"),
        r#"{"name": "reference", "width": 96, "height": 96,
            "kind": {"type": "homogeneous", "mua": 0.0239, "musp": 0.957}}"#,
    )
    .unwrap();
    std::fs::write(
        d.join("step.json"),
        r#"{"name": "step", "width": 96, "height": 96,
            "kind": {"type": "two_region", "left": {"mua": 0.02, "musp": 0.8}, "right": {"mua": 0.1, "musp": 1.4}}}"#,
    )
    .unwrap();
    let lut_args = ["--lut", "lut.sflut"];
    let run = |args: &[&str]| ok(&[args, &lut_args[..]].concat(), d);
    run(&["synth", "--scene", "reference.json", "--out", "ref", "--raw"]);
    run(&["sfdi", "calibrate", "--frames", "ref", "--out", "cal"]);
    run(&["synth", "--scene", "step.json", "--out", "step", "--profilometry"]);
    assert!(d.join("step/snapshot.png").exists() && d.join("step/prof_2.png").exists());
    run(&["sfdi", "process", "--frames", "step", "--cal", "cal", "--out", "step_sfdi"]);
    run(&["ssop", "process", "--image", "step/snapshot.png", "--cal", "cal", "--out", "step_ssop"]);
    run(&["sfdi", "height-cal", "--width", "96", "--height", "96", "--heights", "0,10", "--out", "hcal"]);
    run(&["sfdi", "process", "--frames", "step", "--cal", "cal", "--height-cal", "hcal", "--out", "step_pc"]);
    assert!(load_op_map(&d.join("step_pc")).unwrap().profile_corrected);

    let sfdi = load_op_map(&d.join("step_sfdi")).unwrap();
    let truth = load_op_map(&d.join("step/truth")).unwrap();
    let left = (10 * 96 + 20, 0.02);
    let rel = (sfdi.mua.data()[left.0] - left.1).abs() / left.1;
    assert!(rel < 0.1, "{rel}");
    assert_eq!(truth.mua.data()[left.0], 0.02);

    ok(
        &[
            "--seed",
            "5",
            "dataset",
            "--frames",
            "step",
            "--truth",
            "step/truth",
            "--cal",
            "cal",
            "--out",
            "ds",
            "--mode",
            "N1",
            "--patch",
            "64",
            "--count",
            "3",
        ],
        d,
    );
    ok(
        &[
            "dataset",
            "--frames",
            "step",
            "--truth",
            "step/truth",
            "--cal",
            "cal",
            "--out",
            "ds",
            "--mode",
            "N3",
            "--patch",
            "64",
        ],
        d,
    );
    let m: Manifest = read_json(&d.join("ds").join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.entries.len(), 4);
    assert!(d.join("ds/N1/input/step_2.png").exists() && d.join("ds/N3/target/step_0.png").exists());
    let mismatch = sfdoptics(
        &[
            "dataset",
            "--frames",
            "step",
            "--truth",
            "step/truth",
            "--cal",
            "cal",
            "--out",
            "ds",
            "--mode",
            "N2",
            "--patch",
            "64",
        ],
        d,
    );
    assert_eq!(mismatch.status.code(), Some(1));

    ok(
        &[
            "eval",
            "--pred",
            "step_sfdi",
            "--truth",
            "step/truth",
            "--out",
            "report.csv",
            "--scene",
            "step",
            "--method",
            "sfdi",
            "--roi-side",
            "64",
        ],
        d,
    );
    ok(
        &[
            "eval",
            "--pred",
            "step_ssop",
            "--truth",
            "step/truth",
            "--out",
            "report.csv",
            "--scene",
            "step",
            "--method",
            "ssop",
            "--roi-side",
            "64",
            "--diff-dir",
            "diff",
        ],
        d,
    );
    let origin = m.entries.iter().find(|e| e.mode.name() == "N3").unwrap().origin;
    let origin = format!("{},{}", origin.0, origin.1);
    ok(
        &[
            "eval",
            "--pred",
            "ds/N3/target/step_0.png",
            "--truth",
            "step/truth",
            "--out",
            "report.csv",
            "--scene",
            "step",
            "--method",
            "packed",
            "--origin",
            &origin,
        ],
        d,
    );
    let rows = read_report(&d.join("report.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.method.as_str()).collect::<Vec<_>>(), ["sfdi", "ssop", "packed"]);
    assert!(d.join("diff/percent_diff_mua.f64").exists());
    assert!(rows[2].nmae_mua < 0.25 / 510.0 / 0.02 && rows[2].nmae_musp < 0.01, "{:?}", rows[2]);
}
