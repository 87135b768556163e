use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aefs(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aefs"))
        .args(args)
        .current_dir(cwd)
        .env_remove("AEFS_OUTPUT_ROOT")
        .output()
        .expect("spawn aefs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Small synthetic dataset in `<dir>/d`.
fn synth(dir: &Path, informative: &str) {
    let o = aefs(
        &["synth", "--out", "d", "--records", "2000", "--fields", "6", "--informative", informative, "--vocab", "6"],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

const SMALL: [&str; 12] = [
    "--data", "d", "--min-freq", "1", "--max-epochs", "1", "--batch-size", "128", "--hidden-dims", "8", "--lr", "0.01",
];

fn train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train"];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    aefs(&args, dir)
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), "3");
    synth(b.path(), "3");
    for f in ["data.csv", "schema.txt", "teacher.json"] {
        assert_eq!(fs::read(a.path().join("d").join(f)).unwrap(), fs::read(b.path().join("d").join(f)).unwrap());
    }
    let rows = fs::read_to_string(a.path().join("d/data.csv")).unwrap().lines().count();
    assert_eq!(rows, 2001);
}

#[test]
fn no_informative_fields_gives_chance_teacher() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "0");
    let t: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("d/teacher.json")).unwrap()).unwrap();
    assert_eq!(t["teacher_auc"].as_f64().unwrap(), 0.5);
    assert_eq!(t["informative"].as_array().unwrap().len(), 0);
}

#[test]
fn train_writes_run_dir_and_reports_delta_pae() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3");
    let o = train(dir.path(), &["--method", "aefs", "--r", "0.5", "--d1", "32", "--d2", "4", "--out", "runs"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("ΔPaE 37.5%"));
    let runs: Vec<_> = fs::read_dir(dir.path().join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let run = runs[0].as_ref().unwrap().path();
    for f in ["manifest.json", "config.txt", "train_report.json", "model.ckpt", "metrics.jsonl", "metrics.txt"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    assert!(run.file_name().unwrap().to_string_lossy().ends_with("-s0"));

    // Append-only unless forced.
    let again = train(dir.path(), &["--method", "aefs", "--r", "0.5", "--d1", "32", "--d2", "4", "--out", "runs"]);
    assert_eq!(code(&again), 1);
    let forced = train(
        dir.path(),
        &["--method", "aefs", "--r", "0.5", "--d1", "32", "--d2", "4", "--out", "runs", "--force"],
    );
    assert_eq!(code(&forced), 0);

    let ev = aefs(&["evaluate", "--checkpoint", run.to_str().unwrap(), "--dump-selections", "sel.jsonl"], dir.path());
    assert_eq!(code(&ev), 0, "{}", String::from_utf8_lossy(&ev.stderr));
    let metrics: serde_json::Value = serde_json::from_str(&stdout(&ev)).unwrap();
    assert_eq!(metrics["lookups_avg"].as_f64().unwrap(), 9.0);
    let first = fs::read_to_string(dir.path().join("sel.jsonl")).unwrap();
    let line: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(line["indices"].as_array().unwrap().len(), 3);
}

#[test]
fn identical_runs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3");
    for root in ["a", "b"] {
        assert_eq!(code(&train(dir.path(), &["--seed", "3", "--out", root])), 0);
    }
    let run = |root: &str| {
        let entry = fs::read_dir(dir.path().join(root)).unwrap().next().unwrap().unwrap();
        entry.path()
    };
    for f in ["metrics.jsonl", "metrics.txt", "model.ckpt", "config.txt"] {
        assert_eq!(fs::read(run("a").join(f)).unwrap(), fs::read(run("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn methods_and_output_root_env() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3");
    for extra in [&["--method", "none"][..], &["--method", "adafs", "--mode", "soft"], &["--method", "random-half"]] {
        let mut args = vec!["train"];
        args.extend_from_slice(&SMALL);
        args.extend_from_slice(extra);
        let o = Command::new(env!("CARGO_BIN_EXE_aefs"))
            .args(&args)
            .current_dir(dir.path())
            .env("AEFS_OUTPUT_ROOT", "envroot")
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{extra:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!stdout(&o).contains("ΔPaE"));
    }
    assert_eq!(fs::read_dir(dir.path().join("envroot")).unwrap().count(), 3);
}

#[test]
fn exit_codes_partition_failures() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3");
    assert_eq!(code(&aefs(&["train", "--bogus"], dir.path())), 1);
    assert_eq!(code(&train(dir.path(), &["--r", "1.5"])), 1);
    assert_eq!(code(&train(dir.path(), &["--method", "sideways"])), 1);
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(code(&train(dir.path(), &["--config", cfg.to_str().unwrap()])), 1);

    assert_eq!(code(&aefs(&["train", "--data", "missing"], dir.path())), 2);
    fs::create_dir_all(dir.path().join("broken")).unwrap();
    fs::write(dir.path().join("broken/schema.txt"), "f0 categorical\n").unwrap();
    fs::write(dir.path().join("broken/data.csv"), "label,f0\n7,a\n").unwrap();
    assert_eq!(code(&aefs(&["train", "--data", "broken"], dir.path())), 2);

    assert_eq!(code(&train(dir.path(), &["--lr", "1e300", "--out", "nan"])), 3);
    assert_eq!(code(&aefs(&["params"], dir.path())), 1);
    assert_eq!(code(&aefs(&["--help"], dir.path())), 0);
}

#[test]
fn params_reproduces_reference_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let o = aefs(&["params", "--vocab-sizes", "2018012", "--d1", "32", "--d2", "4", "--r", "0.5"], dir.path());
    let out = stdout(&o);
    assert!(out.contains("64576384 (64.58M)"), "{out}");
    assert!(out.contains("8072048 (8.07M)"), "{out}");
    let o = aefs(&["params", "--vocab-sizes", "10,20,30,40", "--d2", "4"], dir.path());
    let out = stdout(&o);
    assert!(out.contains("ΔPaE 37.5%") && out.contains("ΔEL 50.0%"), "{out}");
    let o = aefs(&["params", "--vocab-sizes", "10,20,30,40", "--d2", "16"], dir.path());
    assert!(stdout(&o).contains("ΔPaE 0.0%"));
    fs::write(dir.path().join("sizes.txt"), "10\n20\n30 40\n").unwrap();
    let o = aefs(&["params", "--vocab", "sizes.txt", "--d2", "2"], dir.path());
    assert!(stdout(&o).contains("ΔPaE 43.75%"));
    assert_eq!(code(&aefs(&["params", "--vocab", "nope.txt"], dir.path())), 2);
}

#[test]
fn compare_emits_table_and_pvalues() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3");
    let mut args = vec!["compare"];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(&["--methods", "none,aefs,aefs", "--seeds", "0,1", "--out", "cmp"]);
    let o = aefs(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(dir.path().join("cmp/metrics.txt")).unwrap();
    assert_eq!(table.lines().count(), 4);
    let p: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("cmp/pvalues.json")).unwrap()).unwrap();
    let pairs = p.as_array().unwrap();
    assert_eq!(pairs.len(), 3);
    let same = pairs.iter().find(|x| x["a"] == "aefs" && x["b"] == "aefs").unwrap();
    assert!((same["p_value"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(pairs.iter().any(|x| x["a"] == "none" && x["b"] == "aefs"));
    // Rerunning without --force is refused.
    assert_eq!(code(&aefs(&args, dir.path())), 1);
    let mut few = vec!["compare"];
    few.extend_from_slice(&SMALL);
    few.extend_from_slice(&["--methods", "aefs", "--out", "cmp2"]);
    assert_eq!(code(&aefs(&few, dir.path())), 1);
}
