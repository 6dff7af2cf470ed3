use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vesselclip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vesselclip")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vesselclip(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, n: usize) {
    ok(&["synth", "--out", p(dir), "--n", &n.to_string(), "--seed", "3"]);
}

#[test]
fn extracted_graphs_match_the_synth_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = tmp.path().join("c");
    synth(&cohort, 60);
    let again = tmp.path().join("g");
    ok(&["--threads", "1", "extract-graph", "--in", p(&cohort.join("masks")), "--out", p(&again)]);
    let mut names: Vec<_> = fs::read_dir(cohort.join("graphs")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 60);
    for name in names {
        assert_eq!(fs::read(cohort.join("graphs").join(&name)).unwrap(), fs::read(again.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    synth(&tmp.path().join("a"), 50);
    synth(&tmp.path().join("b"), 50);
    let read = |d: &str| fs::read(tmp.path().join(d).join("cohort.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn pretrain_finetune_evaluate_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cohort = tmp.path().join("c");
    synth(&cohort, 300);
    let pre = tmp.path().join("pre");
    ok(&["pretrain", "--cohort", p(&cohort), "--modality", "graph", "--out", p(&pre), "--epochs", "1", "--batch-size", "32"]);
    assert!(pre.join("towers.ckpt").is_file());
    assert_eq!(fs::read_to_string(pre.join("train_log.jsonl")).unwrap().lines().count(), 1);

    let ft = tmp.path().join("ft");
    let ckpt = pre.join("towers.ckpt");
    ok(&["finetune", "--cohort", p(&cohort), "--method", "cl-graph", "--checkpoint", p(&ckpt), "--out", p(&ft), "--epochs", "2"]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(ft.join("report.json")).unwrap()).unwrap();
    let auc = report["auroc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert_eq!(report["method"], "cl-graph");
    assert!(fs::read_to_string(ft.join("roc.csv")).unwrap().starts_with("fpr,tpr\n"));

    let ev = tmp.path().join("ev");
    ok(&["evaluate", "--cohort", p(&cohort), "--model", p(&ft.join("model.ckpt")), "--out", p(&ev)]);
    let again: serde_json::Value = serde_json::from_slice(&fs::read(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(again["auroc"], report["auroc"]);

    let table = ok(&["report", p(tmp.path())]);
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.contains("Multimodal-CL-graph"), "{text}");
}

#[test]
fn config_files_fill_in_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, format!("out = {}\nn = 80\nseed = 5\n", p(&tmp.path().join("c")))).unwrap();
    ok(&["synth", "--config", p(&cfg), "--n", "55"]);
    let rows = fs::read_to_string(tmp.path().join("c/cohort.csv")).unwrap().lines().count();
    assert_eq!(rows, 56);

    fs::write(&cfg, "colour = blue\n").unwrap();
    let out = vesselclip(&["synth", "--config", p(&cfg), "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key \"colour\""));
}

#[test]
fn exit_codes_separate_usage_from_data_errors() {
    assert_eq!(vesselclip(&["synth"]).status.code(), Some(1));
    assert_eq!(vesselclip(&["finetune", "--method", "nope", "--cohort", "x", "--out", "y"]).status.code(), Some(1));
    assert_eq!(vesselclip(&["--threads", "0", "count-params"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let out = vesselclip(&["pretrain", "--cohort", p(&tmp.path().join("missing")), "--modality", "graph", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("vesselclip: error: "));
    assert_eq!(vesselclip(&["--help"]).status.code(), Some(0));
}

#[test]
fn count_params_reports_each_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("params.csv");
    let out = ok(&["count-params", "--tab-dim", "69", "--csv", p(&csv)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("CL-graph") && text.contains("CL-raw/prob"), "{text}");
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 3);
}
