use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn groundkit() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_groundkit"));
    c.env_remove("GROUNDKIT_LLM_URL")
        .env_remove("GROUNDKIT_LLM_KEY")
        .env_remove("GROUNDKIT_WORKERS")
        .env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    groundkit().args(args).output().expect("spawn groundkit")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_clean_fixture_exits_zero() {
    let o = run(&["validate", "--corpus", p(&fixtures().join("mini"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("0 error(s)"));
}

#[test]
fn validate_reports_bad_boxes_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let src = fixtures().join("mini");
    for f in ["manifest.json", "screenshots.jsonl"] {
        std::fs::copy(src.join(f), dir.path().join(f)).unwrap();
    }
    std::fs::create_dir(dir.path().join("images")).unwrap();
    for f in ["s1.png", "s2.png", "s3.png"] {
        std::fs::copy(src.join("images").join(f), dir.path().join("images").join(f)).unwrap();
    }
    let mut elems = std::fs::read_to_string(src.join("elements.jsonl")).unwrap();
    elems.push_str(r#"{"id":"bad","screenshot_id":"s1","bbox":[50,50,40,60],"label":"Broken","ui_category":"button"}"#);
    elems.push('\n');
    std::fs::write(dir.path().join("elements.jsonl"), elems).unwrap();
    let o = run(&["validate", "--corpus", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_required_flag_names_it() {
    let o = run(&["eval", "--pred", "x.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--benchmark"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 1, "colour": "red"}"#).unwrap();
    let o = run(&["--config", p(&cfg), "validate", "--corpus", p(&fixtures().join("mini"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
}

#[test]
fn every_subcommand_has_help() {
    for sub in [
        "validate",
        "stats",
        "dedup",
        "synth",
        "export-sft",
        "select-rl",
        "reward-server",
        "eval",
    ] {
        let o = run(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn eval_groups_by_platform() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval.json");
    let e = fixtures().join("eval");
    let o = run(&[
        "eval",
        "--benchmark",
        p(&e.join("bench.jsonl")),
        "--pred",
        p(&e.join("preds.jsonl")),
        "--by",
        "platform",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    let row = |v: &str| table.lines().find(|l| l.contains(v)).unwrap().to_string();
    assert!(row("desktop").trim_end().ends_with("75.0"), "{table}");
    assert!(row("mobile").trim_end().ends_with("50.0"), "{table}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert!(v.get("report").is_some() && v.get("table").is_some());
}

#[test]
fn stats_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("stats.json");
    let o = run(&[
        "stats",
        "--corpus",
        p(&fixtures().join("mini")),
        "--table",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("#AvgE"));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert!(v.is_object());
}

fn dedup(dir: &Path, name: &str) -> (PathBuf, Vec<u8>) {
    let out = dir.join(format!("{name}.jsonl"));
    let report = dir.join(format!("{name}.report.json"));
    let o = run(&[
        "dedup",
        "--corpus",
        p(&fixtures().join("mini")),
        "--seed",
        "17",
        "--out",
        p(&out),
        "--report",
        p(&report),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut bytes = std::fs::read(&out).unwrap();
    bytes.extend(std::fs::read(&report).unwrap());
    (out, bytes)
}

#[test]
fn dedup_collapses_repeated_toolbar_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (out, a) = dedup(dir.path(), "a");
    let (_, b) = dedup(dir.path(), "b");
    assert_eq!(a, b);
    let ids: Vec<String> = std::fs::read_to_string(out)
        .unwrap()
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["element_id"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    // Six shared toolbar items collapse pairwise; the two canvases differ by label.
    assert_eq!(ids.len(), 12);
    for item in ["new", "open", "save", "brush", "file", "edit"] {
        let n = ids.iter().filter(|id| id.ends_with(&format!("-{item}"))).count();
        assert_eq!(n, 1, "{item}: {ids:?}");
    }
    assert!(ids.contains(&"s1-canvas".to_string()) && ids.contains(&"s2-canvas".to_string()));
}

#[test]
fn synth_export_select_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (unique, _) = dedup(dir.path(), "u");
    let pool = dir.path().join("pool");
    let o = run(&[
        "synth",
        "--corpus",
        p(&fixtures().join("mini")),
        "--unique",
        p(&unique),
        "--seed",
        "7",
        "--out",
        p(&pool),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(pool.join("manifest.json").is_file() && pool.join("samples.jsonl").is_file());
    assert!(!pool.join("rejected.jsonl").exists());

    let sft = dir.path().join("sft.jsonl");
    let o = run(&[
        "export-sft",
        "--pool",
        p(&pool),
        "--mix",
        "1,0,0",
        "--total",
        "5",
        "--seed",
        "1",
        "--out",
        p(&sft),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&sft)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 5);
    for r in &lines {
        let pt = r["target_point"].as_array().unwrap();
        let b = r["target_box"].as_array().unwrap();
        let (x, y) = (pt[0].as_f64().unwrap(), pt[1].as_f64().unwrap());
        assert!(b[0].as_f64().unwrap() <= x && x <= b[2].as_f64().unwrap());
        assert!(b[1].as_f64().unwrap() <= y && y <= b[3].as_f64().unwrap());
        assert_eq!(r["kind"], "direct");
    }

    // The default mix wants functional samples, which an offline pool lacks.
    let o = run(&[
        "export-sft",
        "--pool",
        p(&pool),
        "--total",
        "10",
        "--out",
        p(&dir.path().join("x.jsonl")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("functional"), "{}", stderr(&o));

    let rl = dir.path().join("rl.jsonl");
    let o = run(&[
        "select-rl",
        "--pool",
        p(&pool),
        "--exclude",
        p(&sft),
        "--k",
        "3",
        "--seed",
        "2",
        "--out",
        p(&rl),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let seen: Vec<String> = lines
        .iter()
        .map(|r| r["element_id"].as_str().unwrap().to_string())
        .collect();
    let picked: Vec<String> = std::fs::read_to_string(&rl)
        .unwrap()
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["element_id"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert_eq!(picked.len(), 3);
    assert!(
        picked.iter().all(|id| !seen.contains(id)),
        "{picked:?} overlaps {seen:?}"
    );

    let o = run(&[
        "select-rl",
        "--pool",
        p(&pool),
        "--exclude",
        p(&sft),
        "--k",
        "1000",
        "--out",
        p(&rl),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn reward_server_over_stdio() {
    let mut child = groundkit()
        .args(["reward-server", "--stdio"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let input = concat!(
        r#"{"id":"a","scheme":"discrete","image":{"width":100,"height":100},"box":[0,0,10,10],"rollouts":[{"point":[5,5]},{"point":[100,100]}],"rloo":true}"#,
        "\n",
        r#"{"id":"b","scheme":"nope","image":{"width":100,"height":100},"box":[0,0,10,10],"rollouts":[]}"#,
        "\n"
    );
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["rewards"], serde_json::json!([1.0, -1.0]));
    assert_eq!(lines[0]["advantages"], serde_json::json!([2.0, -2.0]));
    assert_eq!(lines[1]["id"], "b");
    assert!(lines[1].get("error").is_some());
}
