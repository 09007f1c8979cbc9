use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn statrag(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_statrag"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(o),
        String::from_utf8_lossy(&o.stderr)
    );
}

const SMALL: &str = r#"
seed = 3

[dataset]
test_fraction = 0.25
validation_fraction = 0.2

[dataset.synthetic]
n_classes = 3
windows_per_class = 20
channels = 3
window_len = 24
seed = 1

[retrieval]
q = 5

[embed]
dim = 64

[optimizer]
population = 4
select = 2
max_iterations = 3
patience = 2
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn small(dir: &TempDir) -> String {
    write_config(dir.path(), "small.toml", SMALL)
        .to_string_lossy()
        .into_owned()
}

fn field(text: &str, key: &str) -> usize {
    text.lines()
        .find_map(|l| l.strip_prefix(key))
        .and_then(|rest| rest.trim().parse().ok())
        .unwrap_or_else(|| panic!("no `{key}` in:\n{text}"))
}

#[test]
fn index_reports_four_records_per_segment() {
    let dir = TempDir::new().unwrap();
    let cfg = small(&dir);
    let o = statrag(dir.path(), &["--config", &cfg, "index", "--store", "s.bin"]);
    assert_ok(&o);
    let text = stdout(&o);
    // 60 windows, 15 test, then 20% of the remaining 45 held for validation
    let segments = field(&text, "segments");
    assert_eq!(segments, 36);
    assert_eq!(field(&text, "records"), 4 * segments);
    assert!(text.contains("activity_0, activity_1, activity_2"));
    assert!(dir.path().join("s.bin").exists());
    assert!(dir.path().join("s.bin.meta.json").exists());
}

#[test]
fn index_refuses_to_overwrite_without_force() {
    let dir = TempDir::new().unwrap();
    let cfg = small(&dir);
    assert_ok(&statrag(dir.path(), &["--config", &cfg, "index", "--store", "s.bin"]));
    let again = statrag(dir.path(), &["--config", &cfg, "index", "--store", "s.bin"]);
    assert_eq!(again.status.code(), Some(7));
    assert_ok(&statrag(dir.path(), &["--config", &cfg, "--force", "index", "--store", "s.bin"]));
}

#[test]
fn unwritable_store_path_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let cfg = small(&dir);
    let o = statrag(dir.path(), &["--config", &cfg, "index", "--store", "missing/dir/s.bin"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn classify_is_deterministic_jsonl() {
    let dir = TempDir::new().unwrap();
    let cfg = small(&dir);
    assert_ok(&statrag(dir.path(), &["--config", &cfg, "index", "--store", "s.bin"]));
    for out in ["a.jsonl", "b.jsonl"] {
        assert_ok(&statrag(
            dir.path(),
            &["--config", &cfg, "classify", "--store", "s.bin", "--out", out],
        ));
    }
    let a = fs::read_to_string(dir.path().join("a.jsonl")).unwrap();
    let b = fs::read_to_string(dir.path().join("b.jsonl")).unwrap();
    assert_eq!(a, b);
    let lines: Vec<Value> = a.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 15);
    for l in &lines {
        assert!(l["segment_id"].is_u64());
        assert!(l["label"].as_str().unwrap().starts_with("activity_"));
        assert_eq!(l["parse_status"], "exact");
        let scores = l["fused_scores"].as_array().unwrap();
        assert_eq!(scores.len(), 5);
    }
}

#[test]
fn classify_rejects_dimension_mismatch() {
    let dir = TempDir::new().unwrap();
    let cfg = small(&dir);
    assert_ok(&statrag(dir.path(), &["--config", &cfg, "index", "--store", "s.bin"]));
    let other = write_config(dir.path(), "wide.toml", &SMALL.replace("dim = 64", "dim = 96"));
    let o = statrag(
        dir.path(),
        &["--config", other.to_str().unwrap(), "classify", "--store", "s.bin"],
    );
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn classify_with_large_q_uses_every_segment() {
    let dir = TempDir::new().unwrap();
    let cfg = small(&dir);
    assert_ok(&statrag(dir.path(), &["--config", &cfg, "index", "--store", "s.bin"]));
    let wide = write_config(dir.path(), "wide_q.toml", &SMALL.replace("q = 5", "q = 500"));
    let o = statrag(
        dir.path(),
        &["--config", wide.to_str().unwrap(), "classify", "--store", "s.bin"],
    );
    assert_ok(&o);
    let first: Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert_eq!(first["fused_scores"].as_array().unwrap().len(), 36);
    assert!(String::from_utf8_lossy(&o.stderr).contains("q exceeds"));
}

fn without_runtime(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("runtime_ms");
    v
}

#[test]
fn evaluate_twice_gives_identical_reports() {
    let dir = TempDir::new().unwrap();
    let cfg = small(&dir);
    let mut reports = Vec::new();
    for out in ["e1", "e2"] {
        let o = statrag(dir.path(), &["--config", &cfg, "evaluate", "--out-dir", out]);
        assert_ok(&o);
        assert!(stdout(&o).contains("macro F1"));
        let text = fs::read_to_string(dir.path().join(out).join("report.json")).unwrap();
        reports.push(without_runtime(serde_json::from_str(&text).unwrap()));
        for f in ["confusion.csv", "predictions.jsonl", "requests.jsonl", "retrieval_only.json"] {
            assert!(dir.path().join(out).join(f).exists(), "{f}");
        }
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0]["n_samples"], 15);

    // local and mock providers are never billed
    let o = statrag(
        dir.path(),
        &["cost-report", "--log", "e1/requests.jsonl", "--samples", "15", "--json"],
    );
    assert_ok(&o);
    let summary: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["ledger"]["total_cost"], 0.0);
    assert!(summary["ledger"]["llm_requests"].as_u64().unwrap() >= 15);
}

#[test]
fn openset_lists_withheld_classes() {
    let dir = TempDir::new().unwrap();
    let text = SMALL
        .replace("n_classes = 3", "n_classes = 12")
        .replace("windows_per_class = 20", "windows_per_class = 6")
        + "\n[openset]\nopenness = [0.3]\n";
    let cfg = write_config(dir.path(), "open.toml", &text);
    let o = statrag(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "openset", "--out-dir", "open"],
    );
    assert_ok(&o);
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("open/openness_030.json")).unwrap())
            .unwrap();
    let withheld = report["report"]["withheld"]["classes"].as_array().unwrap();
    assert_eq!(withheld.len(), 4);
    assert!(stdout(&o).starts_with("openness_030: withheld ["));
}

#[test]
fn optimize_prompt_logs_non_decreasing_best() {
    let dir = TempDir::new().unwrap();
    let cfg = small(&dir);
    let o = statrag(dir.path(), &["--config", &cfg, "optimize-prompt", "--out-dir", "opt"]);
    assert_ok(&o);
    let log = fs::read_dir(dir.path().join("opt"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .expect("optimizer log written");
    let bests: Vec<f64> = fs::read_to_string(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter_map(|v| v["record"]["best_fitness"].as_f64())
        .collect();
    assert!(!bests.is_empty());
    assert!(bests.windows(2).all(|w| w[1] >= w[0]), "{bests:?}");
    assert!(dir.path().join("opt/best_instruction.txt").exists());
}

#[test]
fn synth_output_indexes_like_the_generator() {
    let dir = TempDir::new().unwrap();
    assert_ok(&statrag(
        dir.path(),
        &["synth", "--out-dir", "data", "--classes", "2", "--windows-per-class", "8", "--channels", "2", "--window-len", "16"],
    ));
    let cfg = dir.path().join("data/config.toml");
    let o = statrag(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "index", "--store", "s.bin"],
    );
    assert_ok(&o);
    // 16 windows, 20% test per class
    assert_eq!(field(&stdout(&o), "segments"), 12);
}

#[test]
fn config_errors_exit_with_config_code() {
    let dir = TempDir::new().unwrap();
    let bad = write_config(dir.path(), "bad.toml", &format!("{SMALL}\nunknown_key = 1\n"));
    let o = statrag(dir.path(), &["--config", bad.to_str().unwrap(), "index", "--store", "s.bin"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("s.bin").exists());
}

#[test]
fn dry_run_checks_without_writing() {
    let dir = TempDir::new().unwrap();
    let cfg = small(&dir);
    let o = statrag(dir.path(), &["--config", &cfg, "--dry-run", "index", "--store", "s.bin"]);
    assert_ok(&o);
    assert!(!dir.path().join("s.bin").exists());

    let remote = SMALL.replace(
        "[embed]\ndim = 64",
        "[embed]\ndim = 64\nkind = \"remote_http\"\napi_key_env_var = \"STATRAG_TEST_KEY\"\n\
         endpoint_url = \"http://127.0.0.1:1/v1/embeddings\"",
    );
    let cfg = write_config(dir.path(), "remote.toml", &remote);
    let run = |key: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_statrag"));
        cmd.current_dir(dir.path())
            .args(["--config", cfg.to_str().unwrap(), "--dry-run", "evaluate"])
            .env_remove("STATRAG_TEST_KEY");
        if let Some(k) = key {
            cmd.env("STATRAG_TEST_KEY", k);
        }
        cmd.output().unwrap()
    };
    // nothing listens on port 1
    let o = run(Some("sk-test"));
    assert_eq!(o.status.code(), Some(6), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(None);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
