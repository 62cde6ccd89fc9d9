use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use autfn::density::DensityVerdict;
use autfn::dynamics::{read_walk_csv, SteerResult};
use autfn::nonmixing::{PS2Report, ProbeParams};
use autfn::sl2::{GroupElement, Representation};
use serde_json::Value;

fn autfn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_autfn")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn manifest(out: &Path) -> Value {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    json(Path::new(&name))
}

fn write_rep(dir: &Path, name: &str, rep: &Representation) -> String {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string(rep).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn primitive_exit_codes() {
    let o = autfn(&["primitive", "--rank", "2", "x1"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["status"], "primitive");
    assert_eq!(code(&autfn(&["primitive", "--rank", "2", "x1 x2 x1^-1 x2^-1"])), 1);
    let bad = autfn(&["primitive", "--rank", "2", "x1 y7"]);
    assert_eq!(code(&bad), 2);
    assert!(!bad.stderr.is_empty());
    assert_eq!(code(&autfn(&["primitive", "--rank", "2", "x3"])), 2);
    assert_eq!(code(&autfn(&["primitive"])), 2);
}

#[test]
fn whgraph_summary_and_dot() {
    let o = autfn(&["whgraph", "--rank", "2", "x1 x2 x1^-1 x2^-1"]);
    assert_eq!(code(&o), 0);
    let dot = String::from_utf8(o.stdout).unwrap();
    assert_eq!(dot.matches(" -- ").count(), 4);
    assert!(String::from_utf8(o.stderr).unwrap().starts_with("connected, 0 cutpoints"));
    let empty = autfn(&["whgraph", "--rank", "2"]);
    assert!(String::from_utf8(empty.stdout).unwrap().starts_with("graph whitehead {"));
    assert!(String::from_utf8(empty.stderr).unwrap().starts_with("disconnected"));
}

#[test]
fn density_certify_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let dense = Representation::new(vec![
        GroupElement::rotation(autfn::sl2::Field::Real, 1.0),
        GroupElement::real(2.0, 1.0, 1.0, 1.0).unwrap(),
    ])
    .unwrap();
    let rep = write_rep(dir.path(), "dense.json", &dense);
    let cert = dir.path().join("cert.json");
    let o = autfn(&["density", "certify", &rep, "--seed", "3", "--out", cert.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let verdict: DensityVerdict = serde_json::from_value(json(&cert)).unwrap();
    assert!(verdict.is_dense());
    assert_eq!(manifest(&cert)["seed"], 3);
    assert_eq!(code(&autfn(&["density", "replay", cert.to_str().unwrap()])), 0);

    // a tampered generator must be rejected
    let mut v = json(&cert);
    let text = v["certificate"]["generators"]["entries"][1].to_string().replacen('2', "3", 1);
    v["certificate"]["generators"]["entries"][1] = serde_json::from_str(&text).unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, v.to_string()).unwrap();
    assert_ne!(code(&autfn(&["density", "replay", bad.to_str().unwrap()])), 0);

    let discrete =
        Representation::new(vec![GroupElement::real(1.0, 2.0, 0.0, 1.0).unwrap(), GroupElement::real(1.0, 0.0, 2.0, 1.0).unwrap()])
            .unwrap();
    let rep = write_rep(dir.path(), "discrete.json", &discrete);
    assert_eq!(code(&autfn(&["density", "certify", &rep])), 1);
}

#[test]
fn walk_csv_round_trips_and_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = autfn(&["walk", "--group", "su2", "--n", "3", "--steps", "2000", "--stride", "10", "--seed", "7", "--out", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        let summary = String::from_utf8(o.stdout).unwrap();
        assert_eq!(summary.lines().filter(|l| l.starts_with("ks x")).count(), 3, "{summary}");
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let (labels, samples) = read_walk_csv(fs::File::open(&a).unwrap()).unwrap();
    assert_eq!(labels.len(), 6);
    assert_eq!(samples.len(), 201);
    let m = manifest(&a);
    assert_eq!(m["subcommand"], "walk");
    assert_eq!(m["options"]["steps"], 2000);
    assert_eq!(m["options"]["renormalize"], true);
    assert!(m["finished"].is_string());
}

#[test]
fn steer_output_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("steer.json");
    let o = autfn(&["steer", "--n", "3", "--seed", "4", "--epsilon", "0.15", "--out", out.to_str().unwrap()]);
    let res = SteerResult::from_json(&json(&out)).unwrap();
    assert_eq!(code(&o), if res.complete { 0 } else { 1 });
    assert_eq!(res.distances.len(), 3);
    assert_eq!(manifest(&out)["subcommand"], "steer");

    // a single coordinate never generates a dense subgroup
    assert_eq!(code(&autfn(&["steer", "--n", "2", "--seed", "4"])), 2);
}

#[test]
fn probe_and_demo_reports_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("demo.json");
    let csv = dir.path().join("demo.csv");
    let o = autfn(&["nonmixing", "demo", "--L", "5", "--out", out.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = String::from_utf8(o.stdout).unwrap();
    assert!(summary.contains("m = 2"), "{summary}");
    let report = PS2Report::from_json(&json(&out)).unwrap();
    assert!(report.min_max_ratio > 0.0);
    let params = ProbeParams { max_length: 5, ..ProbeParams::default() };
    assert_eq!(PS2Report::read_csv(fs::File::open(&csv).unwrap(), 3, &params).unwrap(), report);

    let diag = |l: f64| GroupElement::real(l, 0.0, 0.0, 1.0 / l).unwrap();
    let rot = GroupElement::rotation(autfn::sl2::Field::Real, 0.7);
    let rho = Representation::new(vec![diag(30.0), diag(30.0).conjugate_by(&rot), diag(30.0).conjugate_by(&rot.pow(2))]).unwrap();
    let r = write_rep(dir.path(), "rho.json", &rho);
    let out = dir.path().join("probe.json");
    let o = autfn(&["ps2", "probe", &r, &r, "--L", "4", "--k", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = PS2Report::from_json(&json(&out)).unwrap();
    assert_eq!(report.max_length, 4);
    assert!(report.min_max_ratio > 0.0);
    assert_eq!(manifest(&out)["subcommand"], "ps2 probe");
}

#[test]
fn help_documents_every_subcommand() {
    let o = autfn(&["--help"]);
    let text = String::from_utf8(o.stdout).unwrap();
    for sub in ["primitive", "whgraph", "density", "walk", "steer", "nonmixing", "ps2"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    let o = autfn(&["nonmixing", "demo", "--help"]);
    assert!(String::from_utf8(o.stdout).unwrap().contains("--L"));
}
