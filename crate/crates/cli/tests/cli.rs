use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_corpusforge"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn report(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

fn write_docs(path: &Path, rows: &[(&str, &str, &str)]) {
    let body: String = rows
        .iter()
        .map(|(id, text, lang)| {
            serde_json::json!({ "id": id, "text": text, "source": "web", "lang": lang }).to_string()
                + "\n"
        })
        .collect();
    fs::write(path, body).unwrap();
}

#[test]
fn help_and_version_exit_zero() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["tok", "train", "--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));
    assert_eq!(run(d.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn unknown_flag_exits_one_naming_it() {
    let d = tempfile::tempdir().unwrap();
    let o = run(
        d.path(),
        &["normalize", "--in", "x", "--out", "y", "--frobnicate"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--frobnicate"));
    let o = run(d.path(), &["explode"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("explode"));
}

#[test]
fn unknown_config_key_rejected() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("c.toml"),
        "seed = 1\n[dedup]\nradius = 3\nbands = 4\n",
    )
    .unwrap();
    write_docs(&d.path().join("in.jsonl"), &[("a", "hello world", "en")]);
    let o = run(
        d.path(),
        &[
            "--config",
            "c.toml",
            "normalize",
            "--in",
            "in.jsonl",
            "--out",
            "o",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("c.toml") && e.contains("bands"), "{e}");
}

#[test]
fn malformed_input_is_a_data_error() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.jsonl"), "{\"id\": \"a\", \"text\": 3}\n").unwrap();
    let o = run(d.path(), &["normalize", "--in", "bad.jsonl", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = run(
        d.path(),
        &["normalize", "--in", "nothing-*.jsonl", "--out", "o"],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn normalize_echoes_effective_config() {
    let d = tempfile::tempdir().unwrap();
    write_docs(
        &d.path().join("in.jsonl"),
        &[
            ("a", "<p>Hello&nbsp;&nbsp;world</p>", "en"),
            ("b", "ＡＢＣ  １２３", "ja"),
        ],
    );
    let o = run(
        d.path(),
        &[
            "--seed",
            "9",
            "normalize",
            "--in",
            "in.jsonl",
            "--out",
            "o",
            "--report",
            "r.json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(d.path(), "r.json");
    assert_eq!(r["config"]["seed"], 9);
    assert_eq!(r["totals"]["docs_in"], 2);
    assert_eq!(r["totals"]["docs_out"], 2);
    let out = fs::read_to_string(d.path().join("o/part-00000.jsonl")).unwrap();
    assert!(out.contains("Hello world"));
    assert!(out.contains("ABC 123"));
}

#[test]
fn filter_writes_rejects_with_verdicts() {
    let d = tempfile::tempdir().unwrap();
    let long =
        "a reasonably long sentence about rivers and hills that passes every quality check easily";
    write_docs(
        &d.path().join("in.jsonl"),
        &[
            ("ok", long, "en"),
            ("short", "tiny", "en"),
            ("pii", &format!("{long} mail bob@example.com"), "en"),
        ],
    );
    let o = run(
        d.path(),
        &[
            "filter",
            "--in",
            "in.jsonl",
            "--out",
            "o",
            "--rejects",
            "rej",
            "--report",
            "r.json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(d.path(), "r.json");
    assert_eq!(r["stages"][0]["docs_dropped_by_reason"]["too_short"], 1);
    let kept = fs::read_to_string(d.path().join("o/part-00000.jsonl")).unwrap();
    assert!(kept.contains("[EMAIL]") && !kept.contains("bob@example.com"));
    let rej: Value = serde_json::from_str(
        fs::read_to_string(d.path().join("rej/rejects-00000.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(rej["id"], "short");
    assert_eq!(rej["verdict"]["keep"], false);
}

#[test]
fn dedup_and_decontaminate_modes() {
    let d = tempfile::tempdir().unwrap();
    let t = "the committee met on tuesday to review the budget for the new library wing and approved funds";
    write_docs(
        &d.path().join("train.jsonl"),
        &[
            ("a", t, "en"),
            ("b", t, "en"),
            ("c", "completely different words about sailing boats", "en"),
        ],
    );
    write_docs(&d.path().join("exam.jsonl"), &[("q", t, "en")]);
    let o = run(
        d.path(),
        &[
            "dedup",
            "--in",
            "train.jsonl",
            "--out",
            "o",
            "--index",
            "idx",
            "--report",
            "r.json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        report(d.path(), "r.json")["totals"]["docs_dropped_by_reason"]["duplicate:simhash"],
        1
    );
    assert!(d.path().join("idx/index.json").exists());

    let o = run(
        d.path(),
        &[
            "dedup",
            "--in",
            "train.jsonl",
            "--out",
            "o2",
            "--eval",
            "exam.jsonl",
            "--report",
            "r2.json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(d.path(), "r2.json");
    assert_eq!(r["totals"]["docs_out"], 1);
    assert_eq!(r["totals"]["docs_dropped_by_reason"]["eval:exam"], 2);
}

#[test]
fn lm_tok_and_contam_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert!(run(
        p,
        &["--seed", "4", "synth", "--kind", "contam", "--out", "fx"]
    )
    .status
    .success());
    let o = run(
        p,
        &[
            "lm",
            "train",
            "--in",
            "fx/train.jsonl",
            "--order",
            "3",
            "--out",
            "m.lm",
            "--report",
            "lm.json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(
        p,
        &["lm", "score", "--model", "m.lm", "--in", "fx/unseen.jsonl"],
    );
    let first: Value =
        serde_json::from_str(String::from_utf8_lossy(&o.stdout).lines().next().unwrap()).unwrap();
    assert!(first["perplexity"].as_f64().unwrap() > 1.0);

    let o = run(
        p,
        &[
            "contam",
            "--scorer",
            "m.lm",
            "--unseen",
            "fx/unseen.jsonl",
            "--eval",
            "exam=fx/eval.jsonl",
            "--report",
            "c.json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("verdict"));
    let r = report(p, "c.json");
    let rep = &r["details"]["report"];
    let delta = rep["l_unseen"].as_f64().unwrap() - rep["l_eval"].as_f64().unwrap();
    assert!((delta - rep["delta"].as_f64().unwrap()).abs() < 1e-12);

    let o = run(
        p,
        &[
            "tok",
            "train",
            "--in",
            "fx/train.jsonl",
            "--vocab-size",
            "600",
            "--out",
            "v.txt",
            "--report",
            "t.json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(
        p,
        &[
            "tok",
            "encode",
            "--vocab",
            "v.txt",
            "--in",
            "fx/eval.jsonl",
            "--out",
            "ids.jsonl",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(
        p,
        &[
            "tok",
            "cr",
            "--vocab",
            "v.txt",
            "--in",
            "fx/eval.jsonl",
            "--report",
            "cr.json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cr = report(p, "cr.json")["details"]["cr"][0]["cr"]
        .as_f64()
        .unwrap();
    assert!(cr > 0.0 && cr < 1.0);
}

#[test]
fn schedule_subcommands() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let o = run(
        p,
        &[
            "schedule", "lr", "--warmup", "2000", "--total", "10000", "--step", "2000", "6000",
            "10000",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    let pts = r["details"]["points"].as_array().unwrap();
    assert_eq!(pts[0]["lr"].as_f64(), Some(3e-4));
    assert!((pts[1]["lr"].as_f64().unwrap() - 1.65e-4).abs() < 1e-12);
    assert_eq!(pts[2]["lr"].as_f64(), Some(3e-5));
    assert_eq!(r["details"]["tokens_per_step"], 5_767_168);

    assert_eq!(
        run(p, &["schedule", "validate", "--preset", "1e-6"])
            .status
            .code(),
        Some(0)
    );
    fs::write(
        p.join("bad.toml"),
        "[[schedule.stages]]\nname = \"x\"\ntoken_budget = 10\ncomplexity_rank = 1\n\
         mix = { web = 0.5 }\nlang_mix = { en = 1.0 }\n",
    )
    .unwrap();
    let o = run(p, &["--config", "bad.toml", "schedule", "validate"]);
    assert_eq!(o.status.code(), Some(1));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["details"]["violations"][0]["code"], "mix_not_normalized");
}

#[test]
fn sft_clean_writes_outputs() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert!(
        run(p, &["synth", "--kind", "sft", "--n", "300", "--out", "fx"])
            .status
            .success()
    );
    fs::write(
        p.join("c.toml"),
        "[sft]\nrule_patterns = [\"(?i)as of last week\"]\n",
    )
    .unwrap();
    fs::write(
        p.join("human.jsonl"),
        "{\"id\":\"h1\",\"prompt\":\"p\",\"response\":\"r\",\"origin\":\"human\"}\n",
    )
    .unwrap();
    let o = run(
        p,
        &[
            "--config",
            "c.toml",
            "sft",
            "clean",
            "--in",
            "fx/pairs.jsonl",
            "--out",
            "o",
            "--trusted",
            "human.jsonl",
            "--report",
            "r.json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(p, "r.json");
    let s = &r["stages"][0];
    let dropped: u64 = s["docs_dropped_by_reason"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(
        s["docs_in"].as_u64().unwrap(),
        s["docs_out"].as_u64().unwrap() + dropped
    );
    let written = fs::read_to_string(p.join("o/sft-00000.jsonl"))
        .unwrap()
        .lines()
        .count() as u64;
    assert_eq!(written, s["docs_out"].as_u64().unwrap() + 1);
}
