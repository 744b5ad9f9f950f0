mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use common::fixtures_dir;
use policytrace::retrieval::{LexicalScorer, RetrievalConfig};
use policytrace::service::AppState;
use policytrace::workspace::Workspace;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_policytrace"))
        .args(args)
        .env_remove("POLICYTRACE_SCORER_URL")
        .env_remove("POLICYTRACE_LLM_URL")
        .env_remove("POLICYTRACE_LLM_MODEL")
        .output()
        .unwrap()
}

fn fixtures_arg() -> String {
    fixtures_dir().display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn cost_table_value() {
    let o = cli(&["cost", "--per-1k", "3520", "--n", "11000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("$38,720"), "{}", stdout(&o));

    let o = cli(&["--fixtures", &fixtures_arg(), "cost", "--profile", "gpt-4.1-fr", "--n", "11000", "--output", "json"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["total_for_n"], "$9,680.00");
    assert_eq!(v["setup"], "$2,680.32");
}

#[test]
fn retrieve_with_high_tau_yields_only_placeholders() {
    let o = cli(&["--fixtures", &fixtures_arg(), "--tau", "0.999", "--output", "json", "retrieve", "--plan", "synthetic-A"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|r| r["is_placeholder"] == true));
}

#[test]
fn retrieve_csv_default_tau() {
    let o = cli(&["--fixtures", &fixtures_arg(), "retrieve", "--plan", "synthetic-A", "--cpt", "S9212"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), "project_id,cpt,probability,section,subsection_id,text,is_placeholder");
    assert!(lines.next().unwrap().contains("maternity-1"));
}

#[test]
fn run_s9212_is_covered_and_matches_service() {
    let o = cli(&["--fixtures", &fixtures_arg(), "run", "--plan", "synthetic-A", "--cpt", "S9212"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("synthetic-A: covered"));
    assert!(stdout(&o).contains("pregnancy_maternity_services"));

    let o = cli(&["--fixtures", &fixtures_arg(), "--output", "json", "run", "--plan", "synthetic-A", "--cpt", "S9212"]);
    let printed: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(printed["trace"]["final_status"], "covered");

    let ws = Workspace::load(&fixtures_dir()).unwrap();
    let state = AppState::build(ws, &RetrievalConfig::default(), &LexicalScorer).unwrap();
    let served = state.trace_body("synthetic-A", "S9212").unwrap();
    assert_eq!(printed, served);
}

#[test]
fn run_with_override() {
    let o = cli(&["--fixtures", &fixtures_arg(), "--output", "json", "run", "--plan", "synthetic-A", "--cpt", "S9212", "--set", "is_pregnancy=false"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["trace"]["final_status"], "needs_review");
    let o = cli(&["--fixtures", &fixtures_arg(), "run", "--plan", "synthetic-A", "--cpt", "S9212", "--set", "is_pregnancy=maybe"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_is_perfect_on_fixtures() {
    let o = cli(&["--fixtures", &fixtures_arg(), "--output", "json", "eval"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["average_accuracy"], 1.0);
    assert_eq!(v["average_f1"], 1.0);
    let o = cli(&["--fixtures", &fixtures_arg(), "eval"]);
    assert!(stdout(&o).contains("Average          1.00      1.00"), "{}", stdout(&o));
}

#[test]
fn usage_and_operational_errors() {
    assert_eq!(cli(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cli(&["run", "--plan", "x", "--bogus"]).status.code(), Some(2));
    assert_eq!(cli(&[]).status.code(), Some(2));
    let help = cli(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    for sub in ["ingest", "retrieve", "attrs", "rules", "run", "eval", "cost", "serve"] {
        assert!(stdout(&help).contains(sub), "help lacks {sub}");
    }
    let o = cli(&["--fixtures", &fixtures_arg(), "run", "--plan", "no-such-plan", "--cpt", "S9212"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no-such-plan"));
    assert_eq!(cli(&["--tau", "1.5", "--fixtures", &fixtures_arg(), "retrieve", "--plan", "synthetic-A"]).status.code(), Some(1));
    assert_eq!(cli(&["cost", "--per-1k", "10", "--n", "-5"]).status.code(), Some(2));
    let o = cli(&["--fixtures", &fixtures_arg(), "cost", "--profile", "no-such-profile", "--n", "10"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn remote_scorer_is_refused_in_fixture_mode() {
    let o = cli(&[
        "--fixtures", &fixtures_arg(), "--scorer", "remote", "--scorer-url", "http://192.0.2.1:9",
        "retrieve", "--plan", "synthetic-A", "--cpt", "S9212",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("fixture mode forbids network access"), "{}", stderr(&o));
}

#[test]
fn ingest_validates_and_writes() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("p.plan");
    std::fs::write(&plan, "= PLAN new-plan | New\n== SECTION Covered Services\n=== SUB a-1 | A\nText.\n").unwrap();
    let data = dir.path().join("data");
    let data_arg = data.display().to_string();
    let o = cli(&["--fixtures", &data_arg, "ingest", plan.to_str().unwrap(), "--write"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(data.join("plans/new-plan.plan").exists());
    let o = cli(&["--fixtures", &data_arg, "ingest", plan.to_str().unwrap(), "--write"]);
    assert_eq!(o.status.code(), Some(1), "second write must not overwrite");

    std::fs::write(&plan, "= PLAN broken\n=== SUB orphan | x\n").unwrap();
    let o = cli(&["ingest", plan.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn rules_validate_reports_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.rules");
    let bad = dir.path().join("bad.rules");
    std::fs::write(&good, "rule a { when x=true then covered \"r\" cite s }\n").unwrap();
    std::fs::write(&bad, "rule a { when x=true then covered \"r\" cite s }\n\nrule b { when y=yes then covered \"r\" cite s }\n").unwrap();
    let o = cli(&["rules", "validate", good.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = cli(&["rules", "validate", good.to_str().unwrap(), bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains(&format!("{}:3:", bad.display())), "{}", stdout(&o));
    let o = cli(&["--fixtures", &fixtures_arg(), "rules", "validate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().count(), 3);
}

fn copy(from: &Path, to: &Path, rel: &str) {
    let dest = to.join(rel);
    std::fs::create_dir_all(dest.parent().unwrap()).unwrap();
    std::fs::copy(from.join(rel), dest).unwrap();
}

#[test]
fn fixture_mode_authoring_reproduces_shipped_files() {
    let src = fixtures_dir();
    let dir = tempfile::tempdir().unwrap();
    for rel in ["plans/synthetic-A.plan", "plans/synthetic-B.plan", "plans/synthetic-C.plan", "cpts.csv", "completions.json"] {
        copy(&src, dir.path(), rel);
    }
    let data = dir.path().display().to_string();
    let o = cli(&["--fixtures", &data, "rules", "generate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // The store appends in CPT order; the shipped file is sorted.
    let sorted = |p: &Path| {
        let mut lines: Vec<String> = std::fs::read_to_string(p).unwrap().lines().map(String::from).collect();
        lines.sort();
        lines
    };
    assert_eq!(sorted(&dir.path().join("attributes.jsonl")), sorted(&src.join("attributes.jsonl")));
    for rel in ["rules/synthetic-A.rules", "rules/synthetic-B.rules", "rules/synthetic-C.rules"] {
        let want = std::fs::read_to_string(src.join(rel)).unwrap();
        let got = std::fs::read_to_string(dir.path().join(rel)).unwrap();
        assert_eq!(got, want, "{rel}");
    }
    // A second pass reuses every stored attribute set.
    let o = cli(&["--fixtures", &data, "--output", "json", "attrs", "generate"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["attribute_reports"].as_array().unwrap().len(), 0);

    let o = cli(&["--fixtures", &data, "attrs", "list", "--cpt", "S9212"]);
    assert_eq!(stdout(&o).trim(), "S9212: is_maternity=true is_pregnancy=true is_surrogacy=false");
}

#[test]
fn train_then_score_with_linear_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let o = cli(&["train", "--examples", "50", "--epochs", "50", "--out", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = cli(&[
        "--fixtures", &fixtures_arg(), "--scorer", "linear", "--model", model.to_str().unwrap(),
        "--output", "json", "retrieve", "--plan", "synthetic-A", "--cpt", "S9212",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!stdout(&o).is_empty());
}

#[test]
fn shipped_fixtures_are_current() {
    let o = cli(&["fixtures", "--check", "--out", &fixtures_arg()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
}
