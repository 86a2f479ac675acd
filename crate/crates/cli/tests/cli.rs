use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use stallkit::analyzer::{valid_identifiers_at, SourceFile};
use stallkit::config::StrategyConfig;
use stallkit::corpusgen::load_tasks;
use stallkit::evalkit::metrics::extract_identifiers;
use stallkit::lm::NGramModel;
use stallkit::pipeline::{complete, RepoContext};
use stallkit::repo_index::{RepoSnapshot, SymbolIndex};

fn stallkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stallkit"))
        .args(args)
        .env_remove("STALLKIT_BACKEND_URL")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = stallkit(args);
    assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    stdout(&o)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generate a one-repo corpus with index and model in place.
fn prepared(dir: &Path) -> std::path::PathBuf {
    ok(&["gen", "--out", s(dir), "--repos", "1", "--seed", "3"]);
    let repo = dir.join("repos/repo000");
    ok(&["index", s(&repo)]);
    ok(&["train", s(&repo), "--tasks", s(&dir.join("tasks.jsonl"))]);
    repo
}

fn read_tree(root: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read_to_string(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["gen", "--out", s(a.path()), "--repos", "2", "--seed", "1"]);
    ok(&["gen", "--out", s(b.path()), "--repos", "2", "--seed", "1"]);
    assert_eq!(read_tree(a.path()), read_tree(b.path()));
    assert_eq!(load_tasks(&a.path().join("tasks.jsonl")).unwrap().len(), 16);
    let o = stallkit(&["gen", "--out", s(a.path()), "--repos", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn index_is_written_and_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--out", s(dir.path()), "--repos", "1"]);
    let repo = dir.path().join("repos/repo000");
    let out = ok(&["index", s(&repo)]);
    assert!(out.contains("indexed"), "{out}");
    let first = fs::read_to_string(repo.join("index.json")).unwrap();
    assert!(SymbolIndex::from_json(&first).unwrap().len() > 3);
    ok(&["index", s(&repo)]);
    assert_eq!(fs::read_to_string(repo.join("index.json")).unwrap(), first);

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = stallkit(&["index", s(&empty)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no source files"));
}

#[test]
fn complete_matches_library_and_respects_mask() {
    let dir = tempfile::tempdir().unwrap();
    let repo = prepared(dir.path());
    let tasks_path = dir.path().join("tasks.jsonl");
    let tasks = load_tasks(&tasks_path).unwrap();
    let snapshot = RepoSnapshot::load(&repo).unwrap();
    let index = SymbolIndex::from_json(&fs::read_to_string(repo.join("index.json")).unwrap()).unwrap();
    let model = NGramModel::from_json(&fs::read_to_string(repo.join("model.json")).unwrap()).unwrap();
    let ctx = RepoContext::new(snapshot, index, std::sync::Arc::new(model));
    for t in &tasks {
        let baseline = complete(t, &ctx, &StrategyConfig::default(), None).unwrap().prediction;
        let printed = ok(&["complete", "--repo", s(&repo), "--task", s(&tasks_path), "--task-id", &t.task_id]);
        assert_eq!(printed, format!("{baseline}\n"));

        let decoded = ok(&["complete", "--repo", s(&repo), "--task", s(&tasks_path), "--task-id", &t.task_id, "--decode"]);
        let valid = valid_identifiers_at(&SourceFile::new(&t.file, t.prompt.as_str()), t.prompt.len(), &ctx.index).unwrap();
        let first = extract_identifiers(decoded.trim_end()).into_iter().next().unwrap();
        assert!(valid.contains(&first), "{} produced {decoded}", t.task_id);
    }
}

#[test]
fn dump_prompt_lists_segments() {
    let dir = tempfile::tempdir().unwrap();
    let repo = prepared(dir.path());
    let tasks_path = dir.path().join("tasks.jsonl");
    let out = ok(&["complete", "--repo", s(&repo), "--task", s(&tasks_path), "--prompt-f", "--prompt-t", "--rag", "--dump-prompt"]);
    let headers: Vec<&str> = out.lines().filter(|l| l.starts_with("=== ")).collect();
    assert!(headers[0].starts_with("=== FileDeps"));
    assert!(headers[1].starts_with("=== TokenDeps"));
    assert!(headers[2].starts_with("=== Retrieved"));
    assert!(headers[3].starts_with("=== InFile"));
    assert_eq!(headers[4], "=== prediction");
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let repo = prepared(dir.path());
    let tasks_path = dir.path().join("tasks.jsonl");
    let cfg = dir.path().join("s.conf");
    fs::write(&cfg, "prompt_f = true\nin_file_tokens = 5\n").unwrap();
    let out = ok(&["complete", "--repo", s(&repo), "--task", s(&tasks_path), "--config", s(&cfg), "--dump-prompt"]);
    assert!(out.contains("=== FileDeps"));
    assert!(out.contains("=== InFile (5 tokens)"));
    let out = ok(&["complete", "--repo", s(&repo), "--task", s(&tasks_path), "--config", s(&cfg), "--in-file-tokens", "7", "--dump-prompt"]);
    assert!(out.contains("=== InFile (7 tokens)"));
    fs::write(&cfg, "speed = 1\n").unwrap();
    let o = stallkit(&["complete", "--repo", s(&repo), "--task", s(&tasks_path), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_artifacts_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--out", s(dir.path()), "--repos", "1"]);
    let repo = dir.path().join("repos/repo000");
    let tasks = dir.path().join("tasks.jsonl");
    let o = stallkit(&["complete", "--repo", s(&repo), "--task", s(&tasks)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("index.json"));
    let o = stallkit(&["complete", "--repo", s(&repo), "--task", s(&dir.path().join("none.jsonl"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bench_rows_and_gate() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--out", s(dir.path()), "--repos", "1"]);
    let tasks = dir.path().join("tasks.jsonl");
    let repos = dir.path().join("repos");
    let json = dir.path().join("r.json");
    let out = ok(&["bench", "--tasks", s(&tasks), "--repos", s(&repos), "--combo", "in-file", "--combo", "prompt-f", "--json", s(&json)]);
    let metrics: Vec<&str> = out.split("\n\n").next().unwrap().lines().collect();
    assert_eq!(metrics.len(), 4);
    assert!(metrics[2].starts_with("In-file"));
    assert!(metrics[3].starts_with("Prompt-F"));
    assert!(out.contains("Inference s"));
    let runs: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(runs.as_array().unwrap().len(), 2);

    let o = stallkit(&["bench", "--tasks", s(&tasks), "--repos", s(&repos), "--combo", "decode,post"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--allow-slow"));
    ok(&["bench", "--tasks", s(&tasks), "--repos", s(&repos), "--combo", "decode,post", "--allow-slow"]);
}

#[test]
fn full_flag_matrix_has_eighteen_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--out", s(dir.path()), "--repos", "1", "--tasks-per-repo", "2"]);
    let det = dir.path().join("d.json");
    let out = ok(&[
        "bench", "--tasks", s(&dir.path().join("tasks.jsonl")), "--repos", s(&dir.path().join("repos")),
        "--prompt-f", "--prompt-t", "--decode", "--post", "--rag", "--jobs", "2", "--deterministic-json", s(&det),
    ]);
    let table = out.split("\n\n").next().unwrap();
    assert_eq!(table.lines().count(), 2 + 18);
    let runs: serde_json::Value = serde_json::from_str(&fs::read_to_string(&det).unwrap()).unwrap();
    assert!(runs.as_array().unwrap().iter().all(|r| r["report"]["mean_latency_s"] == 0.0));
}

#[test]
fn bench_perturbation_labels() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--out", s(dir.path()), "--repos", "1"]);
    let out = ok(&[
        "bench", "--tasks", s(&dir.path().join("tasks.jsonl")), "--repos", s(&dir.path().join("repos")),
        "--combo", "decode", "--drop-rate", "0.3", "--noise-rate", "0.5", "--perturb-seed", "9",
    ]);
    assert!(out.contains("Decode (perturbed)"));
    let o = stallkit(&["bench", "--tasks", s(&dir.path().join("tasks.jsonl")), "--repos", s(&dir.path().join("repos")), "--drop-rate", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreachable_backend_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let repo = prepared(dir.path());
    let o = Command::new(env!("CARGO_BIN_EXE_stallkit"))
        .args(["complete", "--repo", s(&repo), "--task", s(&dir.path().join("tasks.jsonl"))])
        .env("STALLKIT_BACKEND_URL", "http://127.0.0.1:1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn served_model_gives_same_completion() {
    let dir = tempfile::tempdir().unwrap();
    let repo = prepared(dir.path());
    let tasks = dir.path().join("tasks.jsonl");
    let mut child = Command::new(env!("CARGO_BIN_EXE_stallkit"))
        .args(["serve", "--model", s(&repo.join("model.json")), "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("serving on ").unwrap().to_string();
    let args = ["complete", "--repo", s(&repo), "--task", s(&tasks), "--prompt-f", "--decode"];
    let local = ok(&args);
    let remote = Command::new(env!("CARGO_BIN_EXE_stallkit"))
        .args(args)
        .env("STALLKIT_BACKEND_URL", &url)
        .output()
        .unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(remote.status.success(), "{}", stderr(&remote));
    assert_eq!(stdout(&remote), local);
}
