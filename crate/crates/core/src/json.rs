//! JSON documents for verdicts, certificates and valuations.
//!
//! Formulas travel as printed strings and are re-interned on the way back, so
//! a document is only meaningful relative to the arena that reads it. Object
//! keys come out sorted.

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::forcing::Valuation;
use crate::formula::{Arena, FormulaId, FormulaSet, LetterId};
use crate::game::{self, HintikkaCert, Move, Position, RefutationNode, RefutationTree, Verdict};
use crate::parse::ParseError;

#[derive(Debug, Error)]
pub enum DocError {
    #[error("malformed document: {0}")]
    Shape(String),
    #[error("formula in document: {0}")]
    Formula(#[from] ParseError),
}

fn shape<T>(msg: impl Into<String>) -> Result<T, DocError> {
    Err(DocError::Shape(msg.into()))
}

/// A certificate read back from a document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Certificate {
    Hintikka(HintikkaCert),
    Refutation(RefutationTree),
}

impl Certificate {
    pub fn check(&self, arena: &Arena, w: &FormulaSet) -> bool {
        match self {
            Certificate::Hintikka(c) => game::check_hintikka(arena, &c.set, w),
            Certificate::Refutation(t) => game::check_refutation(arena, t, w),
        }
    }
}

pub fn set_to_json(arena: &Arena, w: &FormulaSet) -> Value {
    json!(w.printed(arena))
}

pub fn move_to_json(arena: &Arena, mv: Option<Move>) -> Value {
    match mv {
        None => Value::Null,
        Some(Move::Pass) => json!("pass"),
        Some(Move::ChallengeOr(f)) => json!({ "or": arena.print(f) }),
        Some(Move::ChallengeAnd(f, i)) => json!({ "and": arena.print(f), "index": i }),
    }
}

fn node_to_json(arena: &Arena, n: &RefutationNode) -> Value {
    json!({
        "position": set_to_json(arena, &n.position.w),
        "round": n.position.round,
        "move": move_to_json(arena, n.mv),
        "children": n.children.iter().map(|c| node_to_json(arena, c)).collect::<Vec<_>>(),
    })
}

pub fn certificate_to_json(arena: &Arena, cert: &Certificate) -> Value {
    match cert {
        Certificate::Hintikka(c) => {
            json!({ "kind": "hintikka", "set": set_to_json(arena, &c.set) })
        }
        Certificate::Refutation(t) => {
            json!({ "kind": "refutation", "tree": node_to_json(arena, &t.root) })
        }
    }
}

/// The solve output document. Consistent verdicts also carry the valuation
/// read off the certificate over the letters of `w`.
pub fn verdict_to_json(arena: &Arena, w: &FormulaSet, v: &Verdict) -> Value {
    match v {
        Verdict::Consistent(c) => {
            let pos = game::hintikka_valuation(arena, c);
            let mu: Valuation = arena
                .letters(w)
                .into_iter()
                .map(|k| (arena.letter(k).clone(), pos.contains(&k)))
                .collect();
            json!({
                "verdict": v.name(),
                "certificate": certificate_to_json(arena, &Certificate::Hintikka(c.clone())),
                "valuation": valuation_to_json(&mu),
            })
        }
        Verdict::Inconsistent(t) => json!({
            "verdict": v.name(),
            "certificate": certificate_to_json(arena, &Certificate::Refutation(t.clone())),
        }),
        Verdict::Unknown { budget } => json!({ "verdict": v.name(), "budget": budget }),
    }
}

/// Sorted list of `[letter, bit]` pairs.
pub fn valuation_to_json(mu: &Valuation) -> Value {
    Value::Array(
        mu.iter()
            .map(|(l, &b)| json!([l.to_string(), u8::from(b)]))
            .collect(),
    )
}

/// Accepts a bare pair list or any object with a `valuation` field.
pub fn valuation_from_json(v: &Value) -> Result<Valuation, DocError> {
    let list = match v {
        Value::Object(m) => m
            .get("valuation")
            .ok_or_else(|| DocError::Shape("no valuation field".into()))?,
        other => other,
    };
    let Value::Array(items) = list else {
        return shape("valuation must be a list");
    };
    let mut mu = Valuation::new();
    for item in items {
        let (Some(name), Some(bit)) = (
            item.get(0).and_then(Value::as_str),
            item.get(1).and_then(Value::as_u64),
        ) else {
            return shape(format!("bad valuation entry {item}"));
        };
        if bit > 1 {
            return shape(format!("bit out of range in {item}"));
        }
        let letter: LetterId = name
            .parse()
            .map_err(|_| DocError::Shape(format!("bad letter {name:?}")))?;
        if mu.insert(letter, bit == 1).is_some() {
            return shape(format!("letter {name} listed twice"));
        }
    }
    Ok(mu)
}

pub fn set_from_json(arena: &mut Arena, v: &Value) -> Result<FormulaSet, DocError> {
    let Value::Array(items) = v else {
        return shape("formula set must be a list");
    };
    let mut out = FormulaSet::new();
    for item in items {
        let Some(src) = item.as_str() else {
            return shape("formula set members must be strings");
        };
        if !out.insert(formula_from_str(arena, src)?) {
            return shape(format!("duplicate member {src:?}"));
        }
    }
    Ok(out)
}

fn formula_from_str(arena: &mut Arena, src: &str) -> Result<FormulaId, DocError> {
    Ok(arena.parse(src)?)
}

pub fn move_from_json(arena: &mut Arena, v: &Value) -> Result<Option<Move>, DocError> {
    match v {
        Value::Null => Ok(None),
        Value::String(s) if s == "pass" => Ok(Some(Move::Pass)),
        Value::Object(m) => {
            if let Some(f) = m.get("or") {
                only_keys(m, &["or"])?;
                let f = f
                    .as_str()
                    .ok_or_else(|| DocError::Shape("or target must be a string".into()))?;
                Ok(Some(Move::ChallengeOr(formula_from_str(arena, f)?)))
            } else if let Some(f) = m.get("and") {
                only_keys(m, &["and", "index"])?;
                let f = f
                    .as_str()
                    .ok_or_else(|| DocError::Shape("and target must be a string".into()))?;
                let Some(i) = m.get("index").and_then(Value::as_u64) else {
                    return shape("and move needs an index");
                };
                Ok(Some(Move::ChallengeAnd(
                    formula_from_str(arena, f)?,
                    i as usize,
                )))
            } else {
                shape(format!("unknown move {v}"))
            }
        }
        _ => shape(format!("unknown move {v}")),
    }
}

fn only_keys(m: &Map<String, Value>, keys: &[&str]) -> Result<(), DocError> {
    match m.keys().find(|k| !keys.contains(&k.as_str())) {
        Some(k) => shape(format!("unexpected key {k:?}")),
        None => Ok(()),
    }
}

fn node_from_json(arena: &mut Arena, v: &Value) -> Result<RefutationNode, DocError> {
    let Value::Object(m) = v else {
        return shape("tree node must be an object");
    };
    only_keys(m, &["position", "round", "move", "children"])?;
    let w = set_from_json(arena, m.get("position").unwrap_or(&Value::Null))?;
    let Some(round) = m.get("round").and_then(Value::as_u64) else {
        return shape("tree node needs a round");
    };
    let mv = move_from_json(arena, m.get("move").unwrap_or(&Value::Null))?;
    let Some(Value::Array(kids)) = m.get("children") else {
        return shape("tree node needs a children list");
    };
    let children = kids
        .iter()
        .map(|k| node_from_json(arena, k))
        .collect::<Result<_, _>>()?;
    Ok(RefutationNode {
        position: Position {
            w,
            round: round as usize,
        },
        mv,
        children,
    })
}

/// Reads a certificate object, or the `certificate` field of a solve document.
pub fn certificate_from_json(arena: &mut Arena, v: &Value) -> Result<Certificate, DocError> {
    let v = v.get("certificate").unwrap_or(v);
    match v.get("kind").and_then(Value::as_str) {
        Some("hintikka") => Ok(Certificate::Hintikka(HintikkaCert {
            set: set_from_json(arena, v.get("set").unwrap_or(&Value::Null))?,
        })),
        Some("refutation") => Ok(Certificate::Refutation(RefutationTree {
            root: node_from_json(arena, v.get("tree").unwrap_or(&Value::Null))?,
        })),
        _ => shape("certificate needs kind hintikka or refutation"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{solve, DEFAULT_BUDGET};

    fn roundtrip(src: &str) {
        let mut a = Arena::new();
        let f = a.parse_nnf(src).unwrap();
        let w = FormulaSet::singleton(f);
        let v = solve(&a, &w, DEFAULT_BUDGET);
        let doc = verdict_to_json(&a, &w, &v);
        let text = serde_json::to_string(&doc).unwrap();

        let mut b = Arena::new();
        let g = b.parse_nnf(src).unwrap();
        let wb = FormulaSet::singleton(g);
        let cert = certificate_from_json(&mut b, &serde_json::from_str(&text).unwrap()).unwrap();
        assert!(cert.check(&b, &wb), "{text}");
        let again = serde_json::to_string(&certificate_to_json(&b, &cert)).unwrap();
        assert_eq!(again, serde_json::to_string(&doc["certificate"]).unwrap());
    }

    #[test]
    fn certificates_roundtrip_bit_exactly() {
        roundtrip("p or not p");
        roundtrip("p and not p");
        roundtrip("and(i in 0..3)(or(j in 0..2)(P(i + j)))");
        roundtrip("(p or q) and (not p) and (not q)");
    }

    #[test]
    fn keys_are_sorted() {
        let mut a = Arena::new();
        let f = a.parse_nnf("p and not p").unwrap();
        let w = FormulaSet::singleton(f);
        let text = serde_json::to_string(&verdict_to_json(&a, &w, &solve(&a, &w, 100))).unwrap();
        let c = text.find("\"certificate\"").unwrap();
        let v = text.find("\"verdict\"").unwrap();
        assert!(c < v);
        assert!(text.find("\"children\"").unwrap() < text.find("\"move\"").unwrap());
    }

    #[test]
    fn valuation_roundtrip() {
        let mu: Valuation = [
            (LetterId::new("p", [0]), true),
            (LetterId::new("p", [1]), false),
            (LetterId::bare("q"), true),
        ]
        .into_iter()
        .collect();
        let doc = valuation_to_json(&mu);
        assert_eq!(doc.to_string(), r#"[["p(0)",1],["p(1)",0],["q",1]]"#);
        assert_eq!(valuation_from_json(&doc).unwrap(), mu);
        assert_eq!(
            valuation_from_json(&json!({ "valuation": doc })).unwrap(),
            mu
        );
        assert!(valuation_from_json(&json!([["p", 2]])).is_err());
        assert!(valuation_from_json(&json!([["p", 1], ["p", 0]])).is_err());
    }

    #[test]
    fn consistent_document_carries_valuation() {
        let mut a = Arena::new();
        let f = a.parse_nnf("p and not q").unwrap();
        let w = FormulaSet::singleton(f);
        let doc = verdict_to_json(&a, &w, &solve(&a, &w, 100));
        assert_eq!(doc["valuation"], json!([["p", 1], ["q", 0]]));
    }

    #[test]
    fn malformed_certificates_are_errors() {
        let mut a = Arena::new();
        assert!(certificate_from_json(&mut a, &json!({ "kind": "proof" })).is_err());
        assert!(
            certificate_from_json(&mut a, &json!({ "kind": "hintikka", "set": ["p", "p"] }))
                .is_err()
        );
        assert!(
            certificate_from_json(&mut a, &json!({ "kind": "hintikka", "set": ["p and"] }))
                .is_err()
        );
        let bad_move = json!({ "kind": "refutation", "tree": {
            "position": ["p"], "round": 0, "move": {"xor": "p"}, "children": [] } });
        assert!(certificate_from_json(&mut a, &bad_move).is_err());
    }
}
