use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(rel)
}

fn popmachine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_popmachine")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = popmachine(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn plan_lists_pops_and_sequential_plans() {
    let dom = data("domains/gold-or-gem.dom");
    let text = ok(&["plan", "--domain", s(&dom), "--task", "gold-or-gem"]);
    assert!(text.starts_with("# 3 partial-order plans"));
    assert_eq!(text.lines().filter(|l| l.starts_with("pop ")).count(), 3);
    assert_eq!(text.lines().filter(|l| l.starts_with("seq ")).count(), 7);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plans.txt");
    assert_eq!(ok(&["plan", "--domain", s(&dom), "--task", "gold-or-gem", "--out", s(&out)]), "");
    assert_eq!(std::fs::read_to_string(&out).unwrap(), text);
}

#[test]
fn synth_writes_text_and_dot() {
    let dir = tempfile::tempdir().unwrap();
    let (rm, dot) = (dir.path().join("rm.txt"), dir.path().join("rm.dot"));
    let dom = data("domains/bridge.dom");
    ok(&["synth", "--domain", s(&dom), "--task", "bridge", "--kind", "mprm", "--out", s(&rm), "--dot", s(&dot)]);
    let text = std::fs::read_to_string(&rm).unwrap();
    assert!(text.contains("states: 9"));
    assert!(std::fs::read_to_string(&dot).unwrap().starts_with("digraph"));

    ok(&["synth", "--domain", s(&dom), "--task", "bridge", "--kind", "seq:3", "--out", s(&rm)]);
    assert!(std::fs::read_to_string(&rm).unwrap().contains("states: 4"));
}

#[test]
fn bad_input_fails_with_a_message() {
    let dom = data("domains/bridge.dom");
    let out = popmachine(&["synth", "--domain", s(&dom), "--task", "bridge", "--kind", "pop:7", "--out", "/dev/null"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("pop:7"));

    let out = popmachine(&["plan", "--domain", s(&dom), "--task", "nope"]);
    assert!(!out.status.success());

    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("bad.map");
    std::fs::write(&map, "starts: (0,0)\n..\n.?\n").unwrap();
    let out = popmachine(&["env", "--map", s(&map), "--render"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 3, column 2"));
}

#[test]
fn env_render_marks_the_agent() {
    let map = data("maps/bridge-7.map");
    let text = ok(&["env", "--map", s(&map), "--render", "--at", "2,1"]);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "I.....F");
    assert_eq!(rows[1], "..@....");
    assert!(text.contains("7x7 cells"));
}

#[test]
fn train_writes_run_log_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let (log, traj) = (dir.path().join("run.csv"), dir.path().join("traj.csv"));
    let (dom, map) = (data("domains/bridge.dom"), data("maps/bridge-7.map"));
    let args = [
        "train", "--domain", s(&dom), "--task", "bridge",
        "--map", s(&map), "--rm", "mprm", "--mode", "qrm",
        "--steps", "60000", "--seed", "3", "--out", s(&log), "--dump-trajectory", s(&traj),
    ];
    ok(&args);
    let text = std::fs::read_to_string(&log).unwrap();
    assert!(text.starts_with("train_step,start_index,eval_return\n"));
    assert_eq!(text.lines().count(), 1 + 6 * 5);
    let t = std::fs::read_to_string(&traj).unwrap();
    assert!(t.starts_with("t,x,y,rm_state_id\n0,1,0,0\n"));

    let first = text.clone();
    ok(&args);
    assert_eq!(std::fs::read_to_string(&log).unwrap(), first);
}

#[test]
fn experiment_run_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.exp");
    std::fs::write(
        &cfg,
        format!(
            "experiment tiny\ndomain: {}\ntask: bridge\nmaps: {}\nrms: mprm pop:*\nmode: qrm\nseeds: 0 1\nsteps: 20000\neval-every: 10000\n",
            s(&data("domains/bridge.dom")),
            s(&data("maps/bridge-7.map")),
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(&["experiment", "run", "--config", s(&cfg), "--out", s(&out), "--workers", "2"]);
    assert_eq!(std::fs::read_dir(out.join("runs")).unwrap().count(), 6);
    assert!(out.join("aggregate-mprm.csv").exists());
    assert!(out.join("aggregate-pop.csv").exists());
    assert!(!out.join("aggregate-seq.csv").exists());

    let agg = dir.path().join("agg.csv");
    ok(&["experiment", "aggregate", "--in", s(&out), "--out", s(&agg)]);
    let text = std::fs::read_to_string(&agg).unwrap();
    assert!(text.starts_with("train_step,family,p25,p50,p75\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 2);

    let mprm = std::fs::read_to_string(out.join("aggregate-mprm.csv")).unwrap();
    for line in mprm.lines().skip(1) {
        assert!(text.contains(line), "{line} missing from the recomputed aggregate");
    }
}
