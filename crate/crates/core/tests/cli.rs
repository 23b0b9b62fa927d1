use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sbtrain::data::{read_csv, synth_blobs, write_csv};
use sbtrain::metrics::RunLog;

fn sbtrain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbtrain")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn config(dir: &Path, name: &str, strategy: &str) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    let (tr, _) = synth_blobs(600, 4, 2, 0.35, 42).unwrap();
    let tracked: Vec<String> = tr.ids()[..5].iter().map(|i| i.to_string()).collect();
    let tracked = tracked.join(", ");
    let text = format!(
        r#"seed = 5
epochs = 3
batch_size = 32
hidden = [16]
tracked_ids = [{tracked}]

[schedule]
initial_lr = 0.1

[dataset.synthetic]
n = 600
classes = 4
dim = 2
spread = 0.35
seed = 42

{strategy}
"#
    );
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_a_log_with_one_record_per_epoch_plus_initial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "sb", "[strategy]\nkind = \"sb\"\nselectivity = 0.33");
    let log = dir.path().join("runs/sb.log");
    let out = sbtrain(&["train", "--config", s(&cfg), "--out", s(&log)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let parsed = RunLog::read(&log).unwrap();
    assert_eq!(parsed.records.len(), 4);
    assert_eq!(parsed.label, "sb-s0.33");
    assert_eq!(parsed.fingerprint.len(), 16);
    let text = fs::read_to_string(&log).unwrap();
    assert_eq!(
        text.lines().nth(1).unwrap(),
        "epoch,sel_fwd,train_fwd,bwd,test_err,t_sel,t_train_fwd,t_bwd,t_other"
    );
    assert!(stdout(&out).contains("final test error"));
}

fn counters(path: &Path) -> Vec<(u64, u64, u64, f64)> {
    RunLog::read(path)
        .unwrap()
        .records
        .iter()
        .map(|r| (r.sel_fwd, r.train_fwd, r.bwd, r.test_err))
        .collect()
}

#[test]
fn seed_flag_is_deterministic_and_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "sb", "[strategy]\nkind = \"sb\"\nselectivity = 0.5");
    let logs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| dir.path().join(format!("{n}.log"))).collect();
    for (log, seed) in logs.iter().zip(["9", "9", "10"]) {
        let out = sbtrain(&["train", "--config", s(&cfg), "--seed", seed, "--out", s(log)]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    assert_eq!(counters(&logs[0]), counters(&logs[1]));
    assert_ne!(counters(&logs[0]), counters(&logs[2]));
}

#[test]
fn missing_strategy_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "bad", "");
    let out = sbtrain(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("x.log"))]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("strategy"), "{}", stderr(&out));

    let cfg = config(dir.path(), "bad2", "[strategy]\nkind = \"sb\"\nselectivity = 1.5");
    let out = sbtrain(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("y.log"))]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("strategy.selectivity"), "{}", stderr(&out));
}

#[test]
fn trace_file_is_written_for_tracked_ids() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let cfg = config(
        dir.path(),
        "trad",
        &format!("[strategy]\nkind = \"traditional\"\n\n[trace]\nout = \"{}\"", s(&trace)),
    );
    let out = sbtrain(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("t.log"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&trace).unwrap();
    // header plus one row per tracked example per epoch
    assert_eq!(text.lines().count(), 1 + 5 * 3);
}

#[test]
fn compare_and_pareto_over_trained_logs() {
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for (name, strat) in [
        ("trad", "[strategy]\nkind = \"traditional\""),
        ("sb", "[strategy]\nkind = \"sb\"\nselectivity = 0.33"),
        ("stale", "[strategy]\nkind = \"stale-sb\"\nselectivity = 0.33\nstaleness = 2"),
    ] {
        let cfg = config(dir.path(), name, strat);
        let log = dir.path().join(format!("{name}.log"));
        let out = sbtrain(&["train", "--config", s(&cfg), "--out", s(&log)]);
        assert!(out.status.success(), "{}", stderr(&out));
        logs.push(log);
    }
    let csv = dir.path().join("cmp.csv");
    let out = sbtrain(&[
        "compare",
        s(&logs[0]),
        s(&logs[0]),
        s(&logs[1]),
        s(&logs[2]),
        "--multipliers",
        "1.1,1.5",
        "--out",
        s(&csv),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = rows.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].contains("backprops_x1.5"));
    assert!(lines[1].starts_with("traditional,"));
    assert!(lines[1].ends_with(",1.00,1.00,1.00,1.00"), "{}", lines[1]);

    let pareto = dir.path().join("pareto.csv");
    let out = sbtrain(&["pareto", s(&logs[0]), s(&logs[1]), s(&logs[2]), "--out", s(&pareto)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&pareto).unwrap();
    assert_eq!(text.lines().next().unwrap(), "config,time,error,frontier");
    // at most one point per trained epoch; levels the untrained net already meets cost nothing and are dropped
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!((3..=9).contains(&rows.len()), "{text}");
    assert!(rows.iter().all(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap() > 0.0));
    assert!(text.lines().skip(1).any(|l| l.ends_with(",1")));
    assert!(stdout(&out).contains("% of frontier points"));

    let out = sbtrain(&["pareto", s(&logs[0]), "--measure", "wallclock"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("config,time,error,frontier"));
}

#[test]
fn compare_reports_malformed_logs_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.log");
    fs::write(
        &bad,
        "# fingerprint=0000000000000000 label=x\nepoch,sel_fwd,train_fwd,bwd,test_err,t_sel,t_train_fwd,t_bwd,t_other\n0,0,0,0,0.5,0,0,0,0\n1,0,x,0,0.5,0,0,0,0\n",
    )
    .unwrap();
    let out = sbtrain(&["compare", s(&bad), s(&bad)]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("line 4"), "{}", stderr(&out));
}

#[test]
fn corrupt_flips_the_requested_count() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, _) = synth_blobs(6250, 10, 3, 0.5, 3).unwrap();
    let input = dir.path().join("in.csv");
    let output = dir.path().join("out.csv");
    write_csv(&tr, &input).unwrap();
    let out = sbtrain(&[
        "corrupt",
        s(&input),
        "--fraction",
        "0.1",
        "--seed",
        "4",
        "--classes",
        "10",
        "--out",
        s(&output),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out).trim(), "500 labels flipped");
    let a = read_csv(&input, Some(10)).unwrap();
    let b = read_csv(&output, Some(10)).unwrap();
    assert_eq!(a.ids(), b.ids());
    let changed = a.labels().iter().zip(b.labels()).filter(|(x, y)| x != y).count();
    assert_eq!(changed, 500);
}

#[test]
fn gradsim_writes_one_row_per_batch_fraction_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "g", "[strategy]\nkind = \"traditional\"");
    let csv = dir.path().join("g.csv");
    let out = sbtrain(&[
        "gradsim",
        "--config",
        s(&cfg),
        "--fractions",
        "0.1,1.0",
        "--modes",
        "top-loss,random",
        "--batches",
        "6",
        "--out",
        s(&csv),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "batch_index,fraction,mode,cosine,sign_fraction");
    assert_eq!(lines.len(), 1 + 6 * 2 * 2);
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').collect();
        if f[1] == "1" {
            assert_eq!(f[3], "1.000000", "{l}");
            assert_eq!(f[4], "1.000000", "{l}");
        }
    }
    let bad = sbtrain(&["gradsim", "--config", s(&cfg), "--modes", "biggest", "--out", s(&csv)]);
    assert!(!bad.status.success());
}
