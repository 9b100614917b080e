use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use infprop::{solve, Arena, FormulaSet, Verdict};
use infprop_cli::run;
use infprop_cli::session::{self, Status};
use serde_json::Value;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(rel: &str) -> String {
    root().join("fixtures").join(rel).display().to_string()
}

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Out {
    fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

fn cli(args: &[&str], stdin: &str) -> Out {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("infprop").chain(args.iter().copied());
    let code = run(argv, &mut stdin.as_bytes(), &mut out, &mut err);
    Out {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn tmp(name: &str, contents: &str) -> String {
    let dir = std::env::temp_dir().join(format!("infprop-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p.display().to_string()
}

#[test]
fn solve_tautology_writes_certificate() {
    let cert = tmp("taut.cert.json", "");
    let o = cli(
        &["solve", &fixture("formulas/tautology.phi"), "--cert", &cert],
        "",
    );
    assert_eq!(o.code, 0, "{}", o.stderr);
    let doc = o.json();
    assert_eq!(doc["verdict"], "consistent");
    assert_eq!(doc["certificate_path"], cert.as_str());
    let c = cli(&["check", &fixture("formulas/tautology.phi"), &cert], "");
    assert_eq!(c.code, 0);
    assert_eq!(c.json()["accepted"], true);
}

#[test]
fn solve_contradiction_and_check_refutation() {
    let o = cli(&["solve", &fixture("formulas/contradiction.phi")], "");
    assert_eq!(o.code, 1);
    let doc = o.json();
    assert_eq!(doc["verdict"], "inconsistent");
    assert_eq!(doc["certificate"]["kind"], "refutation");
    let path = tmp("contra.json", &o.stdout);
    assert_eq!(
        cli(
            &["check", &fixture("formulas/contradiction.phi"), &path],
            ""
        )
        .code,
        0
    );
    // the same refutation does not refute a different formula
    assert_eq!(
        cli(&["check", &fixture("formulas/tautology.phi"), &path], "").code,
        1
    );
}

#[test]
fn output_keys_are_sorted() {
    let o = cli(&["solve", &fixture("formulas/chain.phi")], "");
    let doc = o.json();
    let keys: Vec<&String> = doc.as_object().unwrap().keys().collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    let c = o.stdout.find("\"certificate\"").unwrap();
    assert!(c < o.stdout.find("\"formula\"").unwrap());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(cli(&["frobnicate"], "").code, 2);
    assert_eq!(cli(&["solve"], "").code, 2);
    assert_eq!(cli(&["solve", "/no/such/file.phi"], "").code, 2);
    let o = cli(&["solve", "-"], "p and and");
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("error"), "{}", o.stderr);
    assert_eq!(cli(&["solve", "--budget", "many", "-"], "p").code, 2);
    assert_eq!(cli(&["--help"], "").code, 0);
}

#[test]
fn unknown_verdict_has_its_own_status() {
    let o = cli(
        &["solve", "--budget", "1", "-"],
        "(p or q) and (not p or q) and not q",
    );
    assert_eq!(o.code, infprop_cli::EXIT_UNKNOWN);
    assert_eq!(o.json()["verdict"], "unknown");
}

#[test]
fn parse_and_nnf() {
    let o = cli(&["parse", "-"], "not (p and q)");
    assert_eq!(o.code, 0);
    let doc = o.json();
    assert_eq!(doc["is_nnf"], false);
    assert_eq!(doc["nnf"], "(not p or not q)");
    let n = cli(&["nnf", "-"], "not (p and q)");
    assert_eq!(n.stdout.trim(), "(not p or not q)");
}

#[test]
fn encode_output_parses() {
    let e = cli(&["encode", "--scenario", &fixture("scenarios/s1.json")], "");
    assert_eq!(e.code, 0, "{}", e.stderr);
    let p = cli(&["parse", "-"], &e.stdout);
    assert_eq!(p.code, 0, "{}", p.stderr);
    assert_eq!(p.json()["is_nnf"], true);
}

fn pipe(args: &[&str], input: &[u8]) -> (i32, Vec<u8>) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_infprop"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input).unwrap();
    let out = child.wait_with_output().unwrap();
    (out.status.code().unwrap(), out.stdout)
}

#[test]
fn encode_solve_decode_pipeline() {
    let s1 = fixture("scenarios/s1.json");
    let (c1, formula) = pipe(&["encode", "--scenario", &s1], b"");
    assert_eq!(c1, 0);
    let (c2, solved) = pipe(&["solve", "-"], &formula);
    assert_eq!(c2, 0);
    let (c3, decoded) = pipe(&["decode", "--scenario", &s1, "-"], &solved);
    assert_eq!(c3, 0, "{}", String::from_utf8_lossy(&decoded));
    let doc: Value = serde_json::from_slice(&decoded).unwrap();
    assert_eq!(doc["decoded"], true);
    assert_eq!(doc["report"]["clean"], true);
}

#[test]
fn model_output_decodes() {
    let s1 = fixture("scenarios/s1.json");
    let e = cli(&["encode", "--scenario", &s1], "");
    let m = cli(&["model", "-", "--seed", "2"], &e.stdout);
    assert_eq!(m.code, 0, "{}", m.stderr);
    assert_eq!(m.json()["chain"]["met_all"], true);
    let d = cli(&["decode", "--scenario", &s1, "-"], &m.stdout);
    assert_eq!(d.code, 0, "{}", d.stdout);
    assert_eq!(d.json()["report"]["clean"], true);
}

#[test]
fn decode_failures_exit_one() {
    let s1 = fixture("scenarios/s1.json");
    let d = cli(&["decode", "--scenario", &s1, "-"], "[]");
    assert_eq!(d.code, 1);
    let doc = d.json();
    assert_eq!(doc["decoded"], false);
    assert!(!doc["issues"].as_array().unwrap().is_empty());
    let m = cli(&["model", &fixture("formulas/contradiction.phi")], "");
    assert_eq!(m.code, 1);
    assert_eq!(cli(&["decode", "--scenario", &s1, "-"], &m.stdout).code, 2);
}

#[test]
fn model_with_extra_dense_set() {
    let dense = tmp(
        "dense.json",
        r#"[{"kind": "custom", "members": [["(p or q)", "q"], ["(p or q)", "p", "q"]]}]"#,
    );
    let m = cli(&["model", "-", "--dense", &dense], "p or q");
    assert_eq!(m.code, 0, "{}", m.stderr);
    assert_eq!(
        m.json()["valuation"],
        serde_json::json!([["p", 1], ["q", 1]])
    );
    // {p or q, p} has no extension in this set
    let bad = tmp(
        "bad-dense.json",
        r#"[{"kind": "custom", "members": [["(p or q)", "q"]]}]"#,
    );
    assert_eq!(cli(&["model", "-", "--dense", &bad], "p or q").code, 2);
}

#[test]
fn poset_level_reports() {
    let o = cli(
        &["poset-level", "--universe", &fixture("universes/u1.json")],
        "",
    );
    assert_eq!(o.code, 0, "{}", o.stderr);
    let doc = o.json();
    assert_eq!(doc["coherence"]["clean"], true);
    let levels = doc["levels"].as_array().unwrap();
    assert_eq!(levels.len(), 4);
    assert_eq!(levels[3]["level"], "top");
    assert_eq!(levels[3]["pre_conditions"], 864);
    let one = cli(
        &[
            "poset-level",
            "--universe",
            &fixture("universes/u2.json"),
            "--level",
            "top",
        ],
        "",
    );
    let doc = one.json();
    assert_eq!(doc["levels"].as_array().unwrap().len(), 1);
    assert_eq!(doc["coherence"]["violations"].as_array().unwrap().len(), 3);
    assert_eq!(
        cli(
            &[
                "poset-level",
                "--universe",
                &fixture("universes/u2.json"),
                "--level",
                "7"
            ],
            ""
        )
        .code,
        2
    );
}

#[test]
fn play_tautology_survives_horizon() {
    let script = tmp(
        "taut.script",
        "// Player I\nmove 0\nrandom\nor (p or not p)\nrandom\nrandom\n",
    );
    let o = cli(
        &[
            "play",
            &fixture("formulas/tautology.phi"),
            "--horizon",
            "5",
            "--script",
            &script,
        ],
        "",
    );
    assert_eq!(o.code, 0, "{}", o.stderr);
    let doc = o.json();
    assert_eq!(doc["status"], "II-survived-horizon");
    assert_eq!(doc["entries"].as_array().unwrap().len(), 5);
    assert_eq!(doc["strikes"], 0);
}

#[test]
fn play_contradiction_engine_drives_clash() {
    let o = cli(&["play", &fixture("formulas/unit_clash.phi")], "1\n");
    assert_eq!(o.code, 1);
    let doc = o.json();
    assert_eq!(doc["human"], "II");
    assert_eq!(doc["status"], "II-clashed");
}

#[test]
fn three_illegal_moves_break_the_rules() {
    let o = cli(
        &["play", &fixture("formulas/chain.phi")],
        "or q\nand 9 p\npass\nmove 0\n",
    );
    assert_eq!(o.json()["status"], "I-broke-rules");
    assert_eq!(o.json()["strikes"], 3);
}

#[test]
fn transcripts_are_deterministic() {
    let args = ["play", "-", "--horizon", "12", "--seed", "7"];
    let script = tmp("det.script", &"random\n".repeat(12));
    let f = fixture("formulas/family.phi");
    let mut a = args.to_vec();
    a[1] = &f;
    a.extend(["--script", &script]);
    let x = cli(&a, "");
    let y = cli(&a, "");
    assert_eq!(x.stdout, y.stdout);
    assert_eq!(x.json()["status"], "II-survived-horizon");
}

#[test]
fn transcripts_replay() {
    let mut arena = Arena::new();
    let f = arena
        .parse_nnf("and(i in 0..3)(or()(P(i), not P(i + 1)))")
        .unwrap();
    let w = FormulaSet::singleton(f);
    let Verdict::Consistent(cert) = solve(&arena, &w, 10_000) else {
        panic!("consistent")
    };
    let mut moves = std::iter::repeat_n("random".to_string(), 20);
    let t = session::play_as_one(
        &mut arena,
        &w,
        &cert,
        20,
        &mut moves,
        &mut std::io::sink(),
        3,
    );
    assert_eq!(t.status, Status::SurvivedHorizon);
    assert_eq!(session::replay(&arena, &t, Some(&cert)), Ok(()));
    assert_eq!(session::replay(&arena, &t, None), Ok(()));
    let mut broken = t.clone();
    broken.entries[4].digest = "0".repeat(64);
    assert_eq!(session::replay(&arena, &broken, Some(&cert)), Err(4));

    let g = arena.parse_nnf("(p or q) and not p and not q").unwrap();
    let Verdict::Inconsistent(tree) = solve(&arena, &FormulaSet::singleton(g), 10_000) else {
        panic!("inconsistent")
    };
    let mut answers = std::iter::repeat("random".to_string());
    let t = session::play_as_two(
        &arena,
        &tree.root,
        50,
        &mut answers,
        &mut std::io::sink(),
        0,
    );
    assert_eq!(t.status, Status::IIClashed);
    assert_eq!(session::replay(&arena, &t, None), Ok(()));
}
