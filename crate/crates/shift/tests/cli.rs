use std::fs;
use std::path::Path;

use shift::cli::run;
use shift::formats::{read_params, read_posteriors, DocumentKind, Method};

fn sh(args: &[&str]) -> i32 {
    let mut argv = vec!["shift"];
    argv.extend_from_slice(args);
    run(argv)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(out: &Path, n: &str, seed: &str, workers: &str) {
    assert_eq!(
        sh(&[
            "simulate",
            "--preset",
            "setting1",
            "--n",
            n,
            "--seed",
            seed,
            "--workers",
            workers,
            "--out",
            p(out)
        ]),
        0
    );
}

fn quick_config(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("quick.json");
    fs::write(
        &cfg,
        r#"{"fit": {"max_iterations": 4, "restarts": 1, "quadrature_nodes": 2, "subject_max_iter": 10, "ddm_max_iter": 30}}"#,
    )
    .unwrap();
    cfg
}

fn fit(data_dir: &Path, out: &Path, method: &str, config: &Path, workers: &str) -> i32 {
    sh(&[
        "fit",
        "--method",
        method,
        "--config",
        p(config),
        "--data",
        p(&data_dir.join("dataset.csv")),
        "--covariates",
        p(&data_dir.join("covariates.csv")),
        "--workers",
        workers,
        "--out",
        p(out),
    ])
}

#[test]
fn selfcheck_passes() {
    assert_eq!(sh(&["selfcheck"]), 0);
}

#[test]
fn simulate_is_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    simulate(&a, "12", "3", "1");
    simulate(&b, "12", "3", "3");
    for f in ["dataset.csv", "covariates.csv", "truth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let truth = read_params(&a.join("truth.json")).unwrap();
    assert_eq!(truth.kind, DocumentKind::Truth);
    assert_eq!(truth.subjects.len(), 12);
}

#[test]
fn fits_are_identical_across_worker_counts_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let study = dir.path().join("study");
    let rep = study.join("rep01");
    simulate(&rep, "6", "9", "2");
    let cfg = quick_config(dir.path());
    for method in ["split", "shift"] {
        let a = rep.join(format!("fit-{method}"));
        let b = dir.path().join(format!("again-{method}"));
        assert_eq!(fit(&rep, &a, method, &cfg, "1"), 0);
        assert_eq!(fit(&rep, &b, method, &cfg, "4"), 0);
        for f in ["estimates.json", "posteriors.csv"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{method}/{f}");
        }
        let est = read_params(&a.join("estimates.json")).unwrap();
        assert_eq!(
            est.method,
            Some(if method == "shift" { Method::Shift } else { Method::Split })
        );
        let post = read_posteriors(&a.join("posteriors.csv")).unwrap();
        assert_eq!(post.len(), 12);
    }
    assert_eq!(sh(&["evaluate", "--dir", p(&study)]), 0);
    let table = fs::read_to_string(study.join("table.csv")).unwrap();
    assert!(table.lines().any(|l| l.contains(",shift,prt.learn_rate,")));
    assert!(table.lines().any(|l| l.contains(",split,flanker.attenuation,")));
    let scores = fs::read_to_string(study.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 1 + 2 * 2);

    let report = dir.path().join("report.csv");
    assert_eq!(
        sh(&["report", "--tables", p(&study.join("table.csv")), "--out", p(&report)]),
        0
    );
    let header = fs::read_to_string(&report).unwrap();
    assert!(header.starts_with("parameter,setting1/N=6/shift/rb"));
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"fit": {"n_factor": 2}}"#).unwrap();
    let out = dir.path().join("o");
    assert_eq!(sh(&["simulate", "--config", p(&bad), "--out", p(&out)]), 2);
    assert_eq!(sh(&["simulate", "--out", p(&out)]), 2);
    assert_eq!(sh(&["frobnicate"]), 2);
    assert_eq!(
        sh(&["fit", "--data", p(&dir.path().join("missing.csv")), "--out", p(&out)]),
        4
    );

    let rep = dir.path().join("rep");
    simulate(&rep, "4", "1", "1");
    let garbled = dir.path().join("garbled.csv");
    fs::write(
        &garbled,
        "subject_id,task_id,trial,stimulus,action,rt_seconds,reward\n1,1,1,0,7,0.5,1\n",
    )
    .unwrap();
    assert_eq!(sh(&["fit", "--data", p(&garbled), "--out", p(&out)]), 4);
    assert_eq!(sh(&["evaluate", "--dir", p(&dir.path().join("empty"))]), 4);
}

#[test]
fn millisecond_input_with_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let rep = dir.path().join("rep");
    simulate(&rep, "4", "2", "1");
    let text = fs::read_to_string(rep.join("dataset.csv")).unwrap();
    let mut lines = text.lines();
    let mut ms = String::from(lines.next().unwrap());
    ms.push('\n');
    for l in lines {
        let mut cols: Vec<String> = l.split(',').map(String::from).collect();
        let rt: f64 = cols[5].parse().unwrap();
        cols[5] = format!("{}", rt * 1000.0);
        ms.push_str(&cols.join(","));
        ms.push('\n');
    }
    let ms_path = dir.path().join("ms.csv");
    fs::write(&ms_path, ms).unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("fit");
    let code = sh(&[
        "fit",
        "--method",
        "split",
        "--config",
        p(&cfg),
        "--data",
        p(&ms_path),
        "--covariates",
        p(&rep.join("covariates.csv")),
        "--rt-unit",
        "ms",
        "--truncate",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 0);
    let log = fs::read_to_string(out.join("log.jsonl")).unwrap();
    assert!(log.lines().next().unwrap().contains("\"truncated\""));
}
