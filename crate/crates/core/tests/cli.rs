use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use classmc::eval::{generate_synthetic, SyntheticSpec};
use classmc::ingest::write_observations;
use classmc::pipeline::{Manifest, ARTIFACTS};
use serde_json::Value;

fn classmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_classmc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = classmc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    csv: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let spec = SyntheticSpec {
        n_solutes: 10,
        n_solvents: 9,
        occupancy: 0.5,
        seed: 21,
        ..Default::default()
    };
    let corpus = generate_synthetic(&spec).unwrap();
    let csv = root.join("corpus.csv");
    std::fs::write(&csv, write_observations(&corpus.records)).unwrap();
    let config = root.join("fast.conf");
    std::fs::write(&config, "max_iters = 1500\nn_solute_classes = 3\nn_solvent_classes = 3\n").unwrap();
    Fixture {
        _dir: dir,
        root,
        csv,
        config,
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn stages_run_one_by_one_reproduce_the_orchestrated_run() {
    let f = fixture();
    let run_dir = f.root.join("run");
    ok(&["run", "--config", s(&f.config), "--seed", "3", "--input", s(&f.csv), "--out-dir", s(&run_dir)]);
    let manifest: Manifest = serde_json::from_value(json(&run_dir.join("manifest.json"))).unwrap();
    assert_eq!(manifest.failed_stage, None);
    assert_eq!(manifest.base_seed, 3);

    let d = f.root.join("manual");
    std::fs::create_dir_all(&d).unwrap();
    let p = |name: &str| d.join(name);
    let common = ["--config", s(&f.config), "--seed", "3"];
    let with = |args: &[&str]| -> Vec<String> { args.iter().chain(common.iter()).map(|a| a.to_string()).collect() };
    let run = |args: Vec<String>| ok(&args.iter().map(String::as_str).collect::<Vec<_>>());

    run(with(&["ingest", "--input", s(&f.csv), "--output", s(&p("matrix.json"))]));
    run(with(&["fit-smcm", "--matrix", s(&p("matrix.json")), "--out-factors", s(&p("smcm_factors.json"))]));
    run(with(&["complete", "--factors", s(&p("smcm_factors.json")), "--out", s(&p("completed.json"))]));
    run(with(&["cluster", "--completed", s(&p("completed.json")), "--axis", "rows", "--out-linkage", s(&p("solute_linkage.json"))]));
    run(with(&["cluster", "--completed", s(&p("completed.json")), "--axis", "cols", "--out-linkage", s(&p("solvent_linkage.json"))]));
    run(with(&["cut", "--linkage", s(&p("solute_linkage.json")), "--classes", "3", "--out", s(&p("solute_classes.json"))]));
    run(with(&["cut", "--linkage", s(&p("solvent_linkage.json")), "--classes", "3", "--out", s(&p("solvent_classes.json"))]));
    run(with(&[
        "fit-hmcm",
        "--matrix",
        s(&p("matrix.json")),
        "--solute-classes",
        s(&p("solute_classes.json")),
        "--solvent-classes",
        s(&p("solvent_classes.json")),
        "--out",
        s(&p("hmcm_params.json")),
    ]));

    for artifact in ARTIFACTS {
        assert_eq!(
            std::fs::read(p(artifact)).unwrap(),
            std::fs::read(run_dir.join(artifact)).unwrap(),
            "{artifact} differs"
        );
    }

    run(with(&["order", "--linkage", s(&p("solute_linkage.json")), "--out", s(&p("order.json"))]));
    let order = json(&p("order.json"));
    let mut idx: Vec<u64> = order["order"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    idx.sort_unstable();
    assert_eq!(idx, (0..10).collect::<Vec<u64>>());
    assert_eq!(order["keys"].as_array().unwrap().len(), 10);
}

#[test]
fn predict_writes_known_and_cold_rows() {
    let f = fixture();
    let out_dir = f.root.join("run");
    ok(&["run", "--config", s(&f.config), "--input", s(&f.csv), "--out-dir", s(&out_dir)]);
    let params = out_dir.join("hmcm_params.json");
    let fitted = json(&params);
    let (solute, solvent) = (fitted["solutes"][0].as_str().unwrap(), fitted["solvents"][1].as_str().unwrap());
    let pairs = f.root.join("pairs.csv");
    std::fs::write(
        &pairs,
        format!("solute,solvent,solute_class,solvent_class\n{solute},{solvent},,\nNEW,{solvent},1,\n"),
    )
    .unwrap();

    let refused = classmc(&["predict", "--params", s(&params), "--pairs", s(&pairs)]);
    assert_eq!(refused.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("NEW"));

    let out = ok(&["predict", "--params", s(&params), "--pairs", s(&pairs), "--cold-class"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "solute,solvent,prediction,mode");
    assert!(lines[1].starts_with(&format!("{solute},{solvent},")) && lines[1].ends_with(",fitted"));
    assert!(lines[2].ends_with(",cold_solute"));
}

#[test]
fn loo_subset_writes_report_and_histogram() {
    let f = fixture();
    let report = f.root.join("loo.json");
    let hist = f.root.join("hist.csv");
    ok(&[
        "loo",
        "--config",
        s(&f.config),
        "--input",
        s(&f.csv),
        "--folds",
        "0..3",
        "--workers",
        "2",
        "--out",
        s(&report),
        "--histogram",
        s(&hist),
    ]);
    let r = json(&report);
    assert_eq!(r["folds"].as_array().unwrap().len(), 3);
    let predicted = r["folds"].as_array().unwrap().iter().filter(|f| f["status"] == "predicted").count();
    if predicted > 0 {
        assert_eq!(r["hmcm"]["n"].as_u64().unwrap() as usize, predicted);
        let text = std::fs::read_to_string(&hist).unwrap();
        assert!(text.starts_with("bin_center,count\n"));
    }

    let list = f.root.join("folds.txt");
    std::fs::write(&list, "2\n1\n").unwrap();
    ok(&["loo", "--config", s(&f.config), "--input", s(&f.csv), "--folds-list", s(&list), "--out", s(&report)]);
    let folds: Vec<u64> = json(&report)["folds"].as_array().unwrap().iter().map(|f| f["fold"].as_u64().unwrap()).collect();
    assert_eq!(folds, [2, 1]);
}

#[test]
fn trace_flag_writes_elbo_csv() {
    let f = fixture();
    let matrix = f.root.join("m.json");
    let trace = f.root.join("trace.csv");
    ok(&["ingest", "--input", s(&f.csv), "--output", s(&matrix)]);
    ok(&[
        "fit-smcm",
        "--matrix",
        s(&matrix),
        "--out-factors",
        s(&f.root.join("fac.json")),
        "--max-iters",
        "500",
        "--trace",
        s(&trace),
        "--k",
        "2",
    ]);
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iteration,elbo"));
    assert_eq!(lines.count(), 5);
    assert_eq!(json(&f.root.join("fac.json"))["K"], 2);
}

#[test]
fn synth_is_reproducible_and_writes_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, t) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("t.json"));
    ok(&["synth", "--out", s(&a), "--truth", s(&t), "--seed", "4", "--rare-observations", "2"]);
    ok(&["synth", "--out", s(&b), "--seed", "4", "--rare-observations", "2"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let truth = json(&t);
    assert_eq!(truth["truth"].as_array().unwrap().len(), 30);
    assert_eq!(truth["rare_solute"], 29);
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = classmc(&["run", "--input", s(&missing), "--out-dir", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "solute,solvent,ln_gamma,quality\nA,X,oops,ok\n").unwrap();
    let out = classmc(&["ingest", "--input", s(&bad), "--output", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "k = 0\n").unwrap();
    let out = classmc(&["run", "--config", s(&conf), "--input", s(&bad), "--out-dir", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`k`"));

    let out = classmc(&["complete", "--factors", s(&dir.path().join("absent.json")), "--out", s(&dir.path().join("c.json"))]);
    assert_eq!(out.status.code(), Some(4));

    assert_eq!(classmc(&["cluster", "--axis", "diagonal"]).status.code(), Some(2));
}

#[test]
fn failed_stage_is_marked_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let sparse = dir.path().join("sparse.csv");
    std::fs::write(&sparse, "solute,solvent,ln_gamma,quality\nA,X,1.0,ok\nB,Y,2.0,ok\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = classmc(&["run", "--input", s(&sparse), "--out-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    let manifest: Manifest = serde_json::from_value(json(&out_dir.join("manifest.json"))).unwrap();
    assert_eq!(manifest.failed_stage.as_deref(), Some("ingest"));
    assert!(!out_dir.join("smcm_factors.json").exists());
}
