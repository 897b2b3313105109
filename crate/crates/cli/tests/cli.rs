use std::path::PathBuf;
use std::process::{Command, Output};

use bafpn::io::read_metrics;

fn bafpn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bafpn")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gradcheck_with_seed_7_prints_a_table_and_passes() {
    let o = bafpn(&["gradcheck", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.lines().next().unwrap().contains("max_rel_err"));
    for case in ["conv2d", "deform_conv2d", "block.galm", "block.seam", "block.spam", "neck.bafpn"] {
        assert!(out.lines().any(|l| l.starts_with(case) && l.ends_with("ok")), "{case}\n{out}");
    }
}

#[test]
fn an_impossible_tolerance_exits_1_and_names_the_case() {
    let o = bafpn(&["gradcheck", "--tol", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.lines().any(|l| l.starts_with("FAIL ")), "{err}");
}

#[test]
fn oracle_passes() {
    let o = bafpn(&["oracle", "--trials", "50", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("conv2d_vs_naive"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(bafpn(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bafpn(&["gradcheck", "--seed", "x"]).status.code(), Some(2));
    assert_eq!(bafpn(&["synth-align", "--config", "a.json"]).status.code(), Some(2));
    assert_eq!(bafpn(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_exits_1_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"levels":2,"in_channels":[8,16],"variant":"pafpn"}"#).unwrap();
    let o = bafpn(&["param-count", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("variant"));
}

#[test]
fn param_count_on_defaults_shows_a_small_seam() {
    let o = bafpn(&["param-count", "--config", &config("default_c256.json"), "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let seam = report["comparisons"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["module"] == "seam.1")
        .unwrap();
    assert!(seam["params"].as_u64().unwrap() < 65_792);

    let text = stdout(&bafpn(&["param-count", "--config", &config("default_c256.json")]));
    assert!(text.lines().any(|l| l.starts_with("seam.1") && l.contains("35089")), "{text}");
}

#[test]
fn synth_align_writes_metrics_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.jsonl");
    let ckpt = dir.path().join("n.bafp");
    let o = bafpn(&[
        "synth-align",
        "--config",
        &config("synth_align.json"),
        "--out",
        out.to_str().unwrap(),
        "--steps",
        "5",
        "--seed",
        "1",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let recs = read_metrics(&out).unwrap();
    assert_eq!(recs.len(), 5);
    assert!(recs.windows(2).all(|w| w[0].step < w[1].step));
    let summary = stdout(&o);
    let last = summary.lines().last().unwrap();
    assert!(last.starts_with("summary ") && last.contains("steps=5") && last.contains("ratio="), "{last}");
    assert!(bafpn::io::load_checkpoint(&ckpt).unwrap().entries.len() > 10);
}

#[test]
fn forward_bench_reports_mean_and_spread() {
    let o = bafpn(&["forward-bench", "--config", &config("small_bench.json"), "--repeat", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("mean_ms=") && out.contains("std_ms="), "{out}");
    assert_eq!(bafpn(&["forward-bench", "--config", &config("small_bench.json"), "--repeat", "0"]).status.code(), Some(1));
}
