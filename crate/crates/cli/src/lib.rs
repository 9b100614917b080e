//! Command-line front end. [`run`] is the whole program minus process
//! plumbing, so tests drive it in-process.

pub mod session;

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use infprop::codec::{check_decoded, decode_valuation, Compiler, Scenario};
use infprop::forcing::{DenseSet, Forcing, ForcingError};
use infprop::game::DEFAULT_BUDGET;
use infprop::json::{
    certificate_from_json, valuation_from_json, valuation_to_json, verdict_to_json, Certificate,
};
use infprop::side::{display_pre, Level, Tower, Universe, Violation};
use infprop::{solve, Arena, FormulaId, FormulaSet, Verdict};

/// Exit status for a verdict the solver could not reach within its budget.
pub const EXIT_UNKNOWN: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "infprop",
    version,
    about = "Consistency games for infinitary propositional formulas"
)]
pub struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Parse a formula file and report its shape.
    Parse { file: String },
    /// Print the negation normal form.
    Nnf { file: String },
    /// Decide consistency and print the verdict with its certificate.
    Solve {
        file: String,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        /// Also write the certificate document here.
        #[arg(long)]
        cert: Option<PathBuf>,
    },
    /// Check a certificate document against a formula.
    Check { file: String, certificate: String },
    /// Play the game: you are Player I on consistent formulas, Player II otherwise.
    Play {
        file: String,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
        /// Rounds to play; defaults to twice the closure size.
        #[arg(long)]
        horizon: Option<usize>,
        /// Read moves from this file instead of standard input.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a generic chain and print the model it induces.
    Model {
        file: String,
        /// JSON list of extra dense sets.
        #[arg(long)]
        dense: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
    },
    /// Pre-condition spaces, winning subposets and coherence of a universe.
    PosetLevel {
        #[arg(long)]
        universe: PathBuf,
        /// A single level (a number or `top`); all levels by default.
        #[arg(long)]
        level: Option<String>,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: usize,
    },
    /// Compile a scenario into a formula file.
    Encode {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Decode a valuation document against a scenario and verify the result.
    Decode {
        #[arg(long)]
        scenario: PathBuf,
        valuation: String,
        /// Quantifier rank for the elementarity check.
        #[arg(long)]
        q: Option<u32>,
    },
}

enum Failure {
    Usage(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.into())
    }
}

struct Io<'a> {
    stdin: &'a mut dyn Read,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Io<'_> {
    fn read(&mut self, path: &str) -> anyhow::Result<String> {
        if path == "-" {
            let mut s = String::new();
            self.stdin
                .read_to_string(&mut s)
                .context("reading standard input")?;
            Ok(s)
        } else {
            std::fs::read_to_string(path).with_context(|| format!("reading {path}"))
        }
    }

    fn emit(&mut self, v: &Value) -> anyhow::Result<()> {
        writeln!(self.out, "{}", serde_json::to_string_pretty(v)?)?;
        Ok(())
    }
}

fn read_path(p: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

/// Runs one command line. Returns the exit status: 0 success, 1 negative
/// result, 2 usage error, 3 budget exhausted.
pub fn run<I, S>(args: I, stdin: &mut dyn Read, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(out, "{text}")
            } else {
                write!(err, "{text}")
            };
            return code;
        }
    };
    let mut io = Io { stdin, out, err };
    match dispatch(cli.cmd, &mut io) {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            let _ = writeln!(io.err, "error: {e:#}");
            2
        }
    }
}

fn load_formula(arena: &mut Arena, io: &mut Io, file: &str) -> anyhow::Result<FormulaId> {
    let text = io.read(file)?;
    arena.parse_nnf(&text).map_err(|e| anyhow!("{file}: {e}"))
}

fn dispatch(cmd: Cmd, io: &mut Io) -> Result<i32, Failure> {
    let mut arena = Arena::new();
    match cmd {
        Cmd::Parse { file } => {
            let text = io.read(&file)?;
            let f = arena.parse(&text).map_err(|e| anyhow!("{file}: {e}"))?;
            let g = arena.nnf(f);
            let closure = arena.closure(&[g]).len();
            let letters = arena.letters(&[g]).len();
            io.emit(&json!({
                "formula": arena.print(f),
                "nnf": arena.print(g),
                "is_nnf": arena.is_nnf(f),
                "rank": arena.rank(f),
                "closure": closure,
                "letters": letters,
            }))?;
            Ok(0)
        }
        Cmd::Nnf { file } => {
            let f = load_formula(&mut arena, io, &file)?;
            writeln!(io.out, "{}", arena.print(f)).map_err(anyhow::Error::from)?;
            Ok(0)
        }
        Cmd::Solve { file, budget, cert } => {
            let f = load_formula(&mut arena, io, &file)?;
            let w = FormulaSet::singleton(f);
            let v = solve(&arena, &w, budget);
            let mut doc = verdict_to_json(&arena, &w, &v);
            if let (Some(path), Some(c)) = (&cert, doc.get("certificate")) {
                std::fs::write(path, serde_json::to_string_pretty(c)?)
                    .with_context(|| format!("writing {}", path.display()))?;
                doc["certificate_path"] = json!(path.display().to_string());
            }
            doc["formula"] = json!(arena.print(f));
            io.emit(&doc)?;
            Ok(verdict_code(&v))
        }
        Cmd::Check { file, certificate } => {
            let f = load_formula(&mut arena, io, &file)?;
            let doc: Value =
                serde_json::from_str(&io.read(&certificate)?).context("certificate is not JSON")?;
            let cert = certificate_from_json(&mut arena, &doc)?;
            let ok = cert.check(&arena, &FormulaSet::singleton(f));
            let kind = match cert {
                Certificate::Hintikka(_) => "hintikka",
                Certificate::Refutation(_) => "refutation",
            };
            io.emit(&json!({ "accepted": ok, "kind": kind }))?;
            Ok(if ok { 0 } else { 1 })
        }
        Cmd::Play {
            file,
            budget,
            horizon,
            script,
            seed,
        } => play(&mut arena, io, &file, budget, horizon, script, seed),
        Cmd::Model {
            file,
            dense,
            seed,
            budget,
        } => {
            let f = load_formula(&mut arena, io, &file)?;
            let extra = match dense {
                Some(p) => dense_sets(&mut arena, &read_path(&p)?)?,
                None => Vec::new(),
            };
            let h = Forcing::new(&arena, f, budget)?;
            match h.build_generic(&extra, seed) {
                Ok((chain, mu)) => {
                    let log: Vec<Value> = chain
                        .log
                        .iter()
                        .map(|s| json!({ "pass": s.pass, "dense": s.dense, "extended": s.extended, "met_at": s.met_at }))
                        .collect();
                    io.emit(&json!({
                        "seed": seed,
                        "valuation": valuation_to_json(&mu),
                        "chain": {
                            "conditions": chain.conditions.len(),
                            "scheduled": chain.schedule_len,
                            "met_all": chain.met_all(),
                            "log": log,
                        },
                    }))?;
                    Ok(0)
                }
                Err(ForcingError::Inconsistent) => {
                    io.emit(&json!({ "verdict": "inconsistent", "valuation": Value::Null }))?;
                    Ok(1)
                }
                Err(ForcingError::Unknown) => {
                    io.emit(&json!({ "verdict": "unknown", "budget": budget }))?;
                    Ok(EXIT_UNKNOWN)
                }
                Err(e) => Err(e.into()),
            }
        }
        Cmd::PosetLevel {
            universe,
            level,
            budget,
        } => {
            let u = Universe::from_json(&mut arena, &read_path(&universe)?)?;
            let levels = match level {
                Some(l) => vec![l.parse::<Level>().map_err(|_| anyhow!("bad level {l:?}"))?],
                None => u.all_levels(),
            };
            let mut tower = Tower::new(&arena, &u, budget);
            tower.compute_all()?;
            let mut out = Vec::new();
            for lam in levels {
                let p = tower.level(lam).ok_or_else(|| anyhow!("no level {lam}"))?;
                let members: Vec<Value> = p
                    .members
                    .iter()
                    .zip(&p.winning)
                    .map(|(q, &win)| json!({ "pre": display_pre(&arena, &u, q), "wins": win }))
                    .collect();
                out.push(json!({
                    "level": lam.to_string(),
                    "pre_conditions": p.members.len(),
                    "winning": p.winner_count(),
                    "members": members,
                }));
            }
            let report = tower.check_coherence()?;
            let violations: Vec<String> = report
                .violations
                .iter()
                .map(|v| violation_text(&arena, &u, v))
                .collect();
            io.emit(&json!({
                "levels": out,
                "coherence": { "clean": report.is_clean(), "violations": violations },
            }))?;
            Ok(0)
        }
        Cmd::Encode { scenario } => {
            let sc = Scenario::from_json(&read_path(&scenario)?)?;
            let goal = Compiler::new(&mut arena, sc.domain).compile_goal(&sc)?;
            writeln!(io.out, "{}", arena.print(goal)).map_err(anyhow::Error::from)?;
            Ok(0)
        }
        Cmd::Decode {
            scenario,
            valuation,
            q,
        } => {
            let mut sc = Scenario::from_json(&read_path(&scenario)?)?;
            if let Some(q) = q {
                sc.q = q;
            }
            let doc: Value =
                serde_json::from_str(&io.read(&valuation)?).context("valuation is not JSON")?;
            if doc.get("valuation").is_some_and(Value::is_null) {
                return Err(
                    anyhow!("document carries no valuation (verdict {})", doc["verdict"]).into(),
                );
            }
            let mu = valuation_from_json(&doc)?;
            match decode_valuation(&mu, &sc) {
                Ok(sys) => {
                    let report = check_decoded(&sys, &sc);
                    io.emit(&json!({
                        "decoded": true,
                        "system": sys.to_json(&sc),
                        "report": report.to_json(),
                    }))?;
                    Ok(if report.is_clean() { 0 } else { 1 })
                }
                Err(issues) => {
                    let issues: Vec<String> = issues.iter().map(ToString::to_string).collect();
                    io.emit(&json!({ "decoded": false, "issues": issues }))?;
                    Ok(1)
                }
            }
        }
    }
}

fn verdict_code(v: &Verdict) -> i32 {
    match v {
        Verdict::Consistent(_) => 0,
        Verdict::Inconsistent(_) => 1,
        Verdict::Unknown { .. } => EXIT_UNKNOWN,
    }
}

fn violation_text(arena: &Arena, u: &Universe, v: &Violation) -> String {
    match v {
        Violation::Coherence {
            upper,
            lower,
            pre,
            in_upper,
        } => format!(
            "coherence: {} is {} at level {upper} but not at level {lower}",
            display_pre(arena, u, pre),
            if *in_upper { "winning" } else { "losing" }
        ),
        Violation::UpwardClosure { level, p, q } => format!(
            "upward closure at level {level}: {} wins, weaker {} loses",
            display_pre(arena, u, p),
            display_pre(arena, u, q)
        ),
        Violation::HullGate { token, q, value } => format!(
            "hull gate: token {} with {} has hull delta {value} below its delta {}",
            u.tokens[*token].id,
            display_pre(arena, u, q),
            u.tokens[*token].delta
        ),
    }
}

/// `[{"kind": "decide_or", "formula": F}, {"kind": "add_conjunct", "formula":
/// F, "index": i}, {"kind": "custom", "members": [[F, ..], ..]}]`.
fn dense_sets(arena: &mut Arena, text: &str) -> anyhow::Result<Vec<DenseSet>> {
    let doc: Value = serde_json::from_str(text).context("dense-set file is not JSON")?;
    let items = doc
        .as_array()
        .ok_or_else(|| anyhow!("dense-set file must be a list"))?;
    let mut out = Vec::new();
    for item in items {
        let formula = |arena: &mut Arena, v: &Value| -> anyhow::Result<FormulaId> {
            let s = v
                .as_str()
                .ok_or_else(|| anyhow!("formula must be a string in {item}"))?;
            Ok(arena.parse_nnf(s)?)
        };
        let d = match item.get("kind").and_then(Value::as_str) {
            Some("decide_or") => DenseSet::DecideOr(formula(arena, &item["formula"])?),
            Some("add_conjunct") => {
                let i = item["index"]
                    .as_u64()
                    .ok_or_else(|| anyhow!("add_conjunct needs an index"))?;
                DenseSet::AddConjunct(formula(arena, &item["formula"])?, i as usize)
            }
            Some("custom") => {
                let sets = item["members"]
                    .as_array()
                    .ok_or_else(|| anyhow!("custom needs members"))?;
                let mut members = Vec::new();
                for s in sets {
                    let fs = s
                        .as_array()
                        .ok_or_else(|| anyhow!("custom members are lists"))?;
                    members.push(
                        fs.iter()
                            .map(|f| formula(arena, f))
                            .collect::<anyhow::Result<FormulaSet>>()?,
                    );
                }
                DenseSet::Custom(members)
            }
            _ => bail!("unknown dense-set kind in {item}"),
        };
        out.push(d);
    }
    Ok(out)
}

fn play(
    arena: &mut Arena,
    io: &mut Io,
    file: &str,
    budget: usize,
    horizon: Option<usize>,
    script: Option<PathBuf>,
    seed: u64,
) -> Result<i32, Failure> {
    let f = load_formula(arena, io, file)?;
    let w = FormulaSet::singleton(f);
    let horizon = horizon.unwrap_or_else(|| session::default_horizon(arena, &w));
    let verdict = solve(arena, &w, budget);
    let mut lines: Box<dyn Iterator<Item = String>> = match script {
        Some(p) => {
            let text = read_path(&p)?;
            Box::new(
                text.lines()
                    .map(str::to_owned)
                    .collect::<Vec<_>>()
                    .into_iter(),
            )
        }
        None => {
            let mut buf = String::new();
            io.stdin.read_to_string(&mut buf).context("reading moves")?;
            Box::new(
                BufReader::new(buf.as_bytes())
                    .lines()
                    .map_while(Result::ok)
                    .collect::<Vec<_>>()
                    .into_iter(),
            )
        }
    };
    let mut lines = lines
        .by_ref()
        .filter(|l| !l.trim_start().starts_with("//") && !l.trim().is_empty());
    let (t, code) = match verdict {
        Verdict::Consistent(cert) => (
            session::play_as_one(arena, &w, &cert, horizon, &mut lines, io.err, seed),
            0,
        ),
        Verdict::Inconsistent(tree) => {
            let _ = writeln!(io.err, "formula is inconsistent; the engine plays Player I");
            (
                session::play_as_two(arena, &tree.root, horizon, &mut lines, io.err, seed),
                1,
            )
        }
        Verdict::Unknown { budget } => {
            io.emit(&json!({ "verdict": "unknown", "budget": budget }))?;
            return Ok(EXIT_UNKNOWN);
        }
    };
    let _ = writeln!(io.err, "status: {}", t.status.name());
    io.emit(&t.to_json(arena))?;
    Ok(code)
}
