//! Line-based play of the consistency game.
//!
//! On a consistent formula the human is Player I and the engine answers from
//! its Hintikka certificate. On an inconsistent one the engine is Player I,
//! follows its refutation tree, and the human picks disjuncts as Player II.

use std::io::Write;

use infprop::game::{legal_moves, respond, HintikkaCert, RefutationNode};
use infprop::json::move_to_json;
use infprop::{Arena, FormulaSet, Move, Position};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const STRIKES: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ongoing,
    SurvivedHorizon,
    IBrokeRules,
    IIClashed,
    IIBrokeRules,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ongoing => "ongoing",
            Status::SurvivedHorizon => "II-survived-horizon",
            Status::IBrokeRules => "I-broke-rules",
            Status::IIClashed => "II-clashed",
            Status::IIBrokeRules => "II-broke-rules",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub mv: Move,
    /// The formula II added, if any.
    pub answer: Option<infprop::FormulaId>,
    pub digest: String,
}

#[derive(Clone, Debug)]
pub struct Transcript {
    pub human: &'static str,
    pub horizon: usize,
    pub start: Position,
    pub entries: Vec<Entry>,
    pub status: Status,
    pub strikes: u32,
}

impl Transcript {
    pub fn to_json(&self, arena: &Arena) -> Value {
        let entries: Vec<Value> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                json!({
                    "round": i + 1,
                    "move": move_to_json(arena, Some(e.mv)),
                    "answer": e.answer.map(|f| arena.print(f)),
                    "digest": e.digest,
                })
            })
            .collect();
        json!({
            "human": self.human,
            "horizon": self.horizon,
            "start": self.start.w.printed(arena),
            "start_digest": digest(arena, &self.start),
            "entries": entries,
            "status": self.status.name(),
            "strikes": self.strikes,
        })
    }
}

/// SHA-256 over the round number and the sorted printed members.
pub fn digest(arena: &Arena, pos: &Position) -> String {
    let mut h = Sha256::new();
    h.update(pos.round.to_string());
    for f in pos.w.printed(arena) {
        h.update(b"\n");
        h.update(f);
    }
    hex::encode(h.finalize())
}

/// Parses a Player-I line: `pass`, `or F`, `and K F`, `move N` (index into
/// the legal-move listing) or `random`.
fn parse_move(
    arena: &mut Arena,
    pos: &Position,
    line: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Move, String> {
    let line = line.trim();
    let moves = legal_moves(arena, pos);
    let mv = if line == "pass" {
        Move::Pass
    } else if line == "random" {
        *moves.choose(rng).expect("there is always a legal move")
    } else if let Some(n) = line.strip_prefix("move ") {
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| format!("bad move number {n:?}"))?;
        *moves
            .get(n)
            .ok_or_else(|| format!("no move numbered {n}"))?
    } else if let Some(f) = line.strip_prefix("or ") {
        Move::ChallengeOr(arena.parse(f).map_err(|e| e.to_string())?)
    } else if let Some(rest) = line.strip_prefix("and ") {
        let (k, f) = rest
            .trim()
            .split_once(' ')
            .ok_or("expected `and K FORMULA`")?;
        let k: usize = k.parse().map_err(|_| format!("bad conjunct index {k:?}"))?;
        Move::ChallengeAnd(arena.parse(f).map_err(|e| e.to_string())?, k)
    } else {
        return Err(format!("unrecognised move {line:?}"));
    };
    if mv.is_legal(arena, pos) {
        Ok(mv)
    } else {
        Err(format!("illegal move {}", move_to_json(arena, Some(mv))))
    }
}

fn show(arena: &Arena, pos: &Position, ui: &mut dyn Write) {
    let _ = writeln!(
        ui,
        "round {}: {{{}}}",
        pos.round,
        pos.w.printed(arena).join(", ")
    );
}

/// Human as Player I against the certified strategy in `cert`.
pub fn play_as_one(
    arena: &mut Arena,
    w: &FormulaSet,
    cert: &HintikkaCert,
    horizon: usize,
    input: &mut dyn Iterator<Item = String>,
    ui: &mut dyn Write,
    seed: u64,
) -> Transcript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Transcript {
        human: "I",
        horizon,
        start: Position::start(w.clone()),
        entries: Vec::new(),
        status: Status::Ongoing,
        strikes: 0,
    };
    let mut pos = t.start.clone();
    while t.entries.len() < horizon {
        show(arena, &pos, ui);
        for (i, m) in legal_moves(arena, &pos).iter().enumerate() {
            let _ = writeln!(ui, "  move {i}: {}", move_to_json(arena, Some(*m)));
        }
        let _ = write!(ui, "I> ");
        let Some(line) = input.next() else {
            return t;
        };
        let mv = match parse_move(arena, &pos, &line, &mut rng) {
            Ok(mv) => mv,
            Err(e) => {
                t.strikes += 1;
                let _ = writeln!(ui, "rejected: {e} (strike {})", t.strikes);
                if t.strikes >= STRIKES {
                    t.status = Status::IBrokeRules;
                    return t;
                }
                continue;
            }
        };
        let next =
            respond(arena, &pos, mv, cert).expect("certificate covers every reachable position");
        let answer = match mv {
            Move::Pass => None,
            Move::ChallengeAnd(..) => mv.mandated(arena, 0),
            Move::ChallengeOr(f) => arena
                .node(f)
                .children()
                .iter()
                .copied()
                .find(|&d| next.w.contains(d)),
        };
        pos = next;
        t.entries.push(Entry {
            mv,
            answer,
            digest: digest(arena, &pos),
        });
        if pos.has_clash(arena) {
            t.status = Status::IIClashed;
            return t;
        }
    }
    show(arena, &pos, ui);
    t.status = Status::SurvivedHorizon;
    t
}

/// Engine as Player I following a refutation tree; the human answers
/// disjunction challenges with a disjunct index (or `random`).
pub fn play_as_two(
    arena: &Arena,
    tree: &RefutationNode,
    horizon: usize,
    input: &mut dyn Iterator<Item = String>,
    ui: &mut dyn Write,
    seed: u64,
) -> Transcript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Transcript {
        human: "II",
        horizon,
        start: tree.position.clone(),
        entries: Vec::new(),
        status: Status::Ongoing,
        strikes: 0,
    };
    let mut node = tree;
    while t.entries.len() < horizon {
        show(arena, &node.position, ui);
        let Some(mv) = node.mv else {
            t.status = Status::IIClashed;
            return t;
        };
        let _ = writeln!(ui, "I plays {}", move_to_json(arena, Some(mv)));
        let choice = match mv {
            Move::ChallengeOr(_) if node.children.is_empty() => {
                // An empty disjunction admits no answer.
                t.status = Status::IIClashed;
                return t;
            }
            Move::ChallengeOr(_) => loop {
                let n = node.children.len();
                let _ = write!(ui, "II (0..{n})> ");
                let Some(line) = input.next() else {
                    return t;
                };
                let line = line.trim();
                let pick = if line == "random" {
                    Ok(*(0..n)
                        .collect::<Vec<_>>()
                        .choose(&mut rng)
                        .expect("disjunctions in trees are nonempty"))
                } else {
                    line.parse::<usize>().ok().filter(|&k| k < n).ok_or(line)
                };
                match pick {
                    Ok(k) => break k,
                    Err(bad) => {
                        t.strikes += 1;
                        let _ = writeln!(ui, "rejected: {bad:?} (strike {})", t.strikes);
                        if t.strikes >= STRIKES {
                            t.status = Status::IIBrokeRules;
                            return t;
                        }
                    }
                }
            },
            _ => 0,
        };
        let answer = mv.mandated(arena, choice);
        node = &node.children[choice];
        t.entries.push(Entry {
            mv,
            answer,
            digest: digest(arena, &node.position),
        });
    }
    if node.mv.is_none() {
        t.status = Status::IIClashed;
    }
    t
}

/// Re-plays a transcript from its start. With a certificate the answers are
/// recomputed by `respond`; otherwise the recorded answers are checked for
/// legality. Fails at the first entry whose digest differs.
pub fn replay(arena: &Arena, t: &Transcript, cert: Option<&HintikkaCert>) -> Result<(), usize> {
    let mut pos = t.start.clone();
    for (i, e) in t.entries.iter().enumerate() {
        if !e.mv.is_legal(arena, &pos) {
            return Err(i);
        }
        pos = match cert {
            Some(c) => respond(arena, &pos, e.mv, c).map_err(|_| i)?,
            None => {
                let legal = match (e.mv, e.answer) {
                    (Move::Pass, None) => true,
                    (Move::ChallengeOr(f), Some(a)) => arena.node(f).children().contains(&a),
                    (Move::ChallengeAnd(..), Some(a)) => e.mv.mandated(arena, 0) == Some(a),
                    _ => false,
                };
                if !legal {
                    return Err(i);
                }
                let mut w = pos.w.clone();
                if let Some(a) = e.answer {
                    w.insert(a);
                }
                Position {
                    w,
                    round: pos.round + 1,
                }
            }
        };
        if digest(arena, &pos) != e.digest {
            return Err(i);
        }
    }
    Ok(())
}

/// Horizon used when none is given.
pub fn default_horizon(arena: &Arena, w: &FormulaSet) -> usize {
    let v: Vec<infprop::FormulaId> = w.iter().collect();
    2 * arena.closure(&v).len()
}
