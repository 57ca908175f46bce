use std::path::Path;
use std::process::{Command, Output};

fn adakv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adakv"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn gen_small(dir: &Path, name: &str, extra: &[&str]) -> String {
    let path = dir.join(name).to_str().unwrap().to_string();
    let mut args = vec![
        "gen",
        "--samples",
        "4",
        "--heads",
        "4",
        "--n",
        "40",
        "--head-dim",
        "4",
        "--model-dim",
        "12",
        "--window",
        "4",
        "--seed",
        "11",
        "--out",
        &path,
    ];
    args.extend_from_slice(extra);
    let out = adakv(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn gen_compare_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let trace = gen_small(dir.path(), "t.json", &[]);
    assert!(dir.path().join("t.bin").exists());

    let csv = dir.path().join("c.csv");
    let out = adakv(&[
        "compare",
        "--trace",
        &trace,
        "--budgets",
        "0.3,1.0",
        "--policies",
        "snapkv,ada_snapkv,streaming_llm",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("sample,budget_fraction,budget,policy,l1_loss"));
    assert_eq!(lines.count(), 4 * 2 * 3);

    let out = adakv(&["inspect", "--trace", &trace, "--format", "json"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn compare_is_the_same_on_any_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let trace = gen_small(dir.path(), "t.json", &["--inline"]);
    assert!(!dir.path().join("t.bin").exists());
    let run = |w: &str| {
        adakv(&[
            "compare",
            "--trace",
            &trace,
            "--workers",
            w,
            "--format",
            "json",
        ])
        .stdout
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn verify_exit_codes() {
    let out = adakv(&["verify", "--trials", "50", "--seed", "2"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("bound_soundness,50,0,"));
    let out = adakv(&["verify", "--trials", "200", "--epsilon-offset", "0.1"]);
    assert_eq!(code(&out), 2);
    let out = adakv(&["verify", "--trials", "0"]);
    assert_eq!(code(&out), 0);
    let run = |w: &str| adakv(&["verify", "--trials", "40", "--workers", w]).stdout;
    assert_eq!(run("1"), run("3"));
}

#[test]
fn usage_and_io_errors() {
    assert_eq!(code(&adakv(&[])), 1);
    assert_eq!(code(&adakv(&["frobnicate"])), 1);
    assert_eq!(code(&adakv(&["--help"])), 0);
    assert_eq!(code(&adakv(&["verify", "--caps", "topk_len=30"])), 1);
    assert_eq!(
        code(&adakv(&["compare", "--trace", "/nonexistent/t.json"])),
        3
    );
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "not json").unwrap();
    assert_eq!(
        code(&adakv(&["inspect", "--trace", junk.to_str().unwrap()])),
        3
    );
    let weights = gen_small(dir.path(), "w.json", &["--kind", "weights-only"]);
    assert_eq!(code(&adakv(&["compare", "--trace", &weights])), 1);
    assert_eq!(code(&adakv(&["inspect", "--trace", &weights])), 0);
}
