use std::path::Path;
use std::process::{Command, Output};

use flowmine::fixtures::{nondeterministic, nondeterministic_trace};
use flowmine::format::{write_catalog, write_flows, write_traces};
use flowmine::{Catalog, Message};
use flowmine_cli::kv::KvFile;

fn flowmine(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowmine"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_kv(path: &Path) -> KvFile {
    KvFile::parse(&std::fs::read_to_string(path).unwrap(), "test").unwrap()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = flowmine(&["gen", "--seed", "42", "--preset", "case-study", "-o", out], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a/trace.trc")).unwrap();
    let b = std::fs::read(dir.path().join("b/trace.trc")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);

    // The same from flow files, and a different seed gives a different trace.
    for (seed, out) in [("42", "c.trc"), ("42", "d.trc"), ("7", "e.trc")] {
        let o = flowmine(
            &["gen", "--seed", seed, "--flows", "a/truth.flow", "--cores", "4", "--runs", "50", "-o", out],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("c.trc"), read("d.trc"));
    assert_ne!(read("c.trc"), read("e.trc"));
    let m = read_kv(&dir.path().join("manifest.txt"));
    assert_eq!(m.get("subcommand"), Some("gen"));
    assert!(m.entries.keys().any(|k| k.starts_with("input.") && k.ends_with("truth.flow")));
}

#[test]
fn missing_catalog_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.trc"), "1 2 3\n").unwrap();
    std::fs::write(
        dir.path().join("p.cfg"),
        "out_dir = out\n[train]\ncatalog = no-such.cat\ntraces = t.trc\nngram = 2\n",
    )
    .unwrap();
    let o = flowmine(&["pipeline", "p.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("no-such.cat"), "{err}");
    assert!(err.contains("stage `train`"), "{err}");

    let o = flowmine(&["graph", "--catalog", "missing.cat", "-o", "g.dot"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("missing.cat"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = flowmine(&["mine", "--theta"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = flowmine(&["gen", "--preset", "huge-99", "-o", "x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(dir.path().join("p.cfg"), "out_dir = out\n[bogus]\n").unwrap();
    let o = flowmine(&["pipeline", "p.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn case_study_pipeline_recovers_both_flows() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("case.cfg"),
        "out_dir = case\nseed = 42\n[gen]\npreset = case-study\n[train]\nngram = 2\n[mine]\ntheta = 0.75\n[eval]\npolicy = oracle\n[report]\n",
    )
    .unwrap();
    let o = flowmine(&["pipeline", "case.cfg"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("case");

    let report = read_kv(&out.join("eval/report.txt"));
    assert_eq!(report.get("precision"), Some("1"));
    assert_eq!(report.get("recall"), Some("1"));
    assert_eq!(report.get("pair.2-26.precision"), Some("1"));
    assert_eq!(report.get("pair.2-26.recall"), Some("1"));
    assert_eq!(report.get("ratio"), Some("1"));

    let mine = read_kv(&out.join("mine/manifest.txt"));
    assert_eq!(mine.get("config.theta"), Some("0.75"));
    assert_eq!(mine.get("seed"), Some("42"));
    assert!(out.join("mine/flow_2_26.flow").exists());
    assert!(out.join("mine/flow_2_26.dot").exists());
    assert!(!out.join("mine/flow_2_30.flow").exists());
    let removed = std::fs::read_to_string(out.join("mine/removed.txt")).unwrap();
    assert!(removed.contains("pair 2 -> 30 not mined"));

    for stage in ["gen", "train", "mine", "eval", "report"] {
        assert!(out.join(stage).join("manifest.txt").exists(), "{stage} has no manifest");
    }
    let summary = std::fs::read_to_string(out.join("report/summary.txt")).unwrap();
    assert!(summary.contains("msg_2 -> msg_26"));
    let kv = read_kv(&out.join("report/summary.kv"));
    assert_eq!(kv.get("rows"), Some("1"));
    assert_eq!(kv.get("row.0.ratio"), Some("1"));

    // Rerunning from the manifests' inputs reproduces the mined flows bit for bit.
    let o = flowmine(
        &[
            "mine", "--model", "case/train/model.bin", "--catalog", "case/gen/catalog.cat", "--traces",
            "case/gen/trace.trc", "--theta", "0.75", "-o", "again",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["flow_2_26.flow", "flow_20_30.flow", "removed.txt"] {
        assert_eq!(
            std::fs::read(out.join("mine").join(f)).unwrap(),
            std::fs::read(dir.path().join("again").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

fn write_nondet_inputs(dir: &Path) {
    let msgs = (1..=5).map(|i| Message::new(i, format!("A{i}"), format!("B{i}"), "x")).collect();
    let catalog = Catalog::new(msgs, [1].into(), [4].into()).unwrap();
    write_catalog(dir.join("n.cat"), &catalog).unwrap();
    write_flows(dir.join("n.flow"), &nondeterministic()).unwrap();
    write_traces(dir.join("n.trc"), &[nondeterministic_trace()]).unwrap();
}

#[test]
fn eval_reports_rates_and_budget_exhaustion() {
    let dir = tempfile::tempdir().unwrap();
    write_nondet_inputs(dir.path());
    let base = ["eval", "--flows", "n.flow", "--catalog", "n.cat", "--traces", "n.trc"];

    let o = flowmine(&[&base[..], &["--policy", "greedy", "-o", "greedy.txt"]].concat(), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let g = read_kv(&dir.path().join("greedy.txt"));
    assert_eq!(g.get("ratio"), Some("0.7"));
    assert_eq!(g.get("incomplete_instances"), Some("1"));
    assert_eq!(g.get("trace.0.rate"), Some("0.7"));
    assert!(g.get("trace.0.note.0").is_some());
    assert_eq!(g.get("size"), Some("11"));

    let o = flowmine(&[&base[..], &["--policy", "oracle", "-o", "oracle.txt"]].concat(), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_kv(&dir.path().join("oracle.txt")).get("ratio"), Some("1"));

    let o = flowmine(&[&base[..], &["--policy", "oracle", "--budget", "1", "-o", "b.txt"]].concat(), dir.path());
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert_eq!(read_kv(&dir.path().join("b.txt")).get("lower_bound"), Some("true"));
    let o = flowmine(
        &[&base[..], &["--policy", "oracle", "--budget", "1", "--allow-lower-bound", "-o", "b.txt"]].concat(),
        dir.path(),
    );
    assert!(o.status.success());

    let o = flowmine(&["report", "--inputs", "greedy.txt,oracle.txt", "-o", "sum.txt"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let kv = read_kv(&dir.path().join("sum.kv"));
    assert_eq!(kv.get("rows"), Some("2"));
    assert_eq!(kv.get("mean.ratio"), Some("0.85"));
    let table = std::fs::read_to_string(dir.path().join("sum.txt")).unwrap();
    let mean = table.lines().find(|l| l.starts_with("mean")).expect("mean row");
    assert!(mean.contains("0.85"), "{mean}");
}

#[test]
fn divergent_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = flowmine(&["gen", "--preset", "case-study", "--runs", "40", "-o", "cs"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = flowmine(
        &[
            "train", "--traces", "cs/trace.trc", "--catalog", "cs/catalog.cat", "--dim", "8", "--heads", "2",
            "--window", "8", "--layers", "1", "--epochs", "3", "--lr", "1e300", "-o", "m.bin",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(!dir.path().join("m.bin").exists());
}
