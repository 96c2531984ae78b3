use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn vsmile(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vsmile"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("VSMILE_THREADS", n),
        None => cmd.env_remove("VSMILE_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vsmile(args, None);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("error line on stderr");
    serde_json::from_str(last).expect("stderr ends with JSON")
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synthetic_round_trip_recovers_one_factor() {
    let tmp = tempfile::tempdir().unwrap();
    let market = tmp.path().join("market");
    let fit = tmp.path().join("fit");
    ok(&["synth", "--model", "one-factor", "--paths", "4096", "--out", s(&market)]);
    let chain = market.join("chain.csv");
    let fvc = market.join("fvc.csv");
    ok(&[
        "calibrate", "--model", "one-factor", "--chain", s(&chain), "--fvc", s(&fvc), "--paths", "4096", "--budget",
        "1600", "--starts", "8", "--out", s(&fit),
    ]);
    let text = std::fs::read_to_string(fit.join("calibration.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let r: Value = serde_json::from_str(lines[0]).unwrap();
    let theta = &r["theta"];
    let (eta, rho, h) = (theta["eta"].as_f64().unwrap(), theta["rho"].as_f64().unwrap(), theta["h"].as_f64().unwrap());
    assert!((eta - 0.756).abs() < 0.05, "eta {eta}");
    assert!((rho + 0.684).abs() < 0.03, "rho {rho}");
    assert!((h + 0.364).abs() < 0.05, "h {h}");
    assert!(r["objective"].as_f64().unwrap() < 1e-3);
    assert!(r["config_hash"].is_string() && r["seed"].as_u64() == Some(20171023));
}

#[test]
fn empty_index_set_fails_with_json() {
    let tmp = tempfile::tempdir().unwrap();
    let chain = tmp.path().join("far.csv");
    let mut text = String::from("date,expiry_years,strike,forward,bid_iv,ask_iv,mid_iv\n");
    for k in [-0.2f64, -0.1, 0.0, 0.1, 0.2] {
        text.push_str(&format!("2017-10-23,1.5,{},100,,,0.2\n", 100.0 * k.exp()));
    }
    std::fs::write(&chain, text).unwrap();
    let out = vsmile(&["calibrate", "--model", "rough", "--chain", s(&chain), "--out", s(&tmp.path().join("o"))], None);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["error"], "empty_index_set");
    assert!(!tmp.path().join("o").exists(), "failed run left artifacts");
}

#[test]
fn malformed_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let bad_header = tmp.path().join("bad.csv");
    std::fs::write(&bad_header, "when,t,k\n2017-10-23,0.1,100\n").unwrap();
    let out = vsmile(&["fvc", "--chain", s(&bad_header), "--out", s(&tmp.path().join("a"))], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("header"));

    let out = vsmile(&["synth", "--model", "sideways"], None);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");

    let out = vsmile(&["fvc", "--chain", s(&tmp.path().join("missing.csv"))], None);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "io");

    // a row with a nonpositive mid is dropped with a diagnostic, the rest runs
    let chain = tmp.path().join("chain.csv");
    let mut text = String::from("date,expiry_years,strike,forward,bid_iv,ask_iv,mid_iv\n");
    for k in [-0.3f64, -0.2, -0.1, -0.05, 0.0, 0.05, 0.1] {
        text.push_str(&format!("2017-10-23,0.25,{},100,,,0.2\n", 100.0 * k.exp()));
    }
    text.push_str("2017-10-23,0.25,130,100,,,-0.1\n");
    std::fs::write(&chain, text).unwrap();
    let out_dir = tmp.path().join("b");
    let out = ok(&["fvc", "--chain", s(&chain), "--out", s(&out_dir)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("rejected_row"));
    let report: Value = serde_json::from_slice(&std::fs::read(out_dir.join("fvc.json")).unwrap()).unwrap();
    assert_eq!(report["rejected_rows"].as_array().unwrap().len(), 1);

    let bad_threads = vsmile(&["fvc", "--chain", s(&chain), "--out", s(&out_dir)], Some("zero"));
    assert_eq!(bad_threads.status.code(), Some(2));
}

#[test]
fn runs_are_byte_reproducible_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str, args: &[&str]| {
        let dir = tmp.path().join(name);
        let mut all: Vec<&str> = args.to_vec();
        all.extend(["--out", s(&dir)]);
        let out = vsmile(&all, Some(threads));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        files(&dir)
    };
    let synth = ["synth", "--model", "two-factor", "--paths", "2048", "--days", "3", "--xi-drift", "0.01"];
    let a = run("s1", "1", &synth);
    let b = run("s4", "4", &synth);
    let c = run("s4b", "4", &synth);
    assert_eq!(a, b);
    assert_eq!(b, c);
    for (name, bytes) in &a {
        assert!(String::from_utf8_lossy(bytes).contains("config_hash"), "{name} lacks the config hash");
    }

    let chain = tmp.path().join("s1").join("chain.csv");
    let cal = ["calibrate", "--model", "rough", "--model", "one-factor", "--chain", s(&chain), "--paths", "1024", "--budget", "64", "--starts", "2"];
    let a = run("c1", "1", &cal);
    let b = run("c4", "4", &cal);
    assert_eq!(a, b);
    let jsonl = String::from_utf8(a["calibration.jsonl"].clone()).unwrap();
    assert_eq!(jsonl.lines().count(), 6);

    let calibration = tmp.path().join("c1").join("calibration.jsonl");
    let bt = ["backtest", "--chain", s(&chain), "--calibration", s(&calibration), "--paths", "1024", "--horizon-days", "2"];
    assert_eq!(run("b1", "1", &bt), run("b4", "4", &bt));

    let skew = ["skew", "--model", "rough", "--mc", "--paths", "2048", "--maturities", "1/52,1/12,0.25"];
    assert_eq!(run("k1", "1", &skew), run("k4", "4", &skew));

    let surface = ["surface", "--model", "path-dependent", "--maturities", "1/12,1", "--ks", "-0.1,0,0.05", "--paths", "2048"];
    assert_eq!(run("u1", "1", &surface), run("u4", "4", &surface));

    let fvc = ["fvc", "--chain", s(&chain)];
    assert_eq!(run("f1", "1", &fvc), run("f4", "4", &fvc));

    let rough = ["roughness", "--model", "one-factor", "--years", "1"];
    assert_eq!(run("r1", "1", &rough), run("r4", "4", &rough));
}

#[test]
fn different_seeds_change_the_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["surface", "--model", "rough", "--maturities", "1/12", "--ks", "0", "--paths", "256", "--out", s(&a)]);
    ok(&["surface", "--model", "rough", "--maturities", "1/12", "--ks", "0", "--paths", "256", "--seed", "7", "--out", s(&b)]);
    let ra: Value = serde_json::from_slice(&std::fs::read(a.join("run.json")).unwrap()).unwrap();
    let rb: Value = serde_json::from_slice(&std::fs::read(b.join("run.json")).unwrap()).unwrap();
    assert_ne!(ra["config_hash"], rb["config_hash"]);
    assert_eq!(rb["seed"], 7);
}
