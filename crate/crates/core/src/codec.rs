//! Truth codes of finite structures, compilation of structural requirements
//! into formulas, and decoding of valuations back into structures and maps.
//!
//! # Sentence numbering
//!
//! Sentences use element constants `0..n` and variables named by binder
//! depth: the quantifier at depth `d` binds `x{d}`. Sizes count one per node
//! (atoms and equalities are size 1). Codes list all sentences by size; inside
//! one size the order is
//!
//! 1. size 1: relation atoms in signature order, argument tuples
//!    lexicographic (constants before variables), then equalities;
//! 2. larger sizes: negations, then conjunctions, then disjunctions (each by
//!    left size, then left code, then right code), then existentials, then
//!    universals.
//!
//! This is a bijection between the naturals and canonically named sentences,
//! and the first `sum n^arity` codes are exactly the atomic sentences, so a
//! truth code of that length determines the structure.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::forcing::Valuation;
use crate::formula::{Arena, FormulaId, LetterId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("constant {0} is outside the domain")]
    ConstantOutOfRange(u32),
    #[error("variable x{0} is not bound")]
    UnboundVariable(u32),
    #[error("relation symbol #{0} is not in the signature")]
    UnknownSymbol(usize),
    #[error("relation {0} applied to {1} arguments")]
    Arity(String, usize),
    #[error("code bound {have} does not cover the {need} atomic sentences")]
    ShortCode { have: usize, need: usize },
    #[error("inconsistent scenario: {0}")]
    Scenario(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Symbol {
    pub name: String,
    pub arity: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signature {
    pub symbols: Vec<Symbol>,
}

impl Default for Signature {
    /// Binary `E`, unary `I`, unary `a`.
    fn default() -> Self {
        let s = |name: &str, arity| Symbol {
            name: name.into(),
            arity,
        };
        Signature {
            symbols: vec![s("E", 2), s("I", 1), s("a", 1)],
        }
    }
}

impl Signature {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s.name == name)
    }
}

/// A finite structure on `0..n`, one relation table per signature symbol.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FinStructure {
    pub n: u32,
    pub rels: Vec<BTreeSet<Vec<u32>>>,
}

impl FinStructure {
    pub fn empty(sig: &Signature, n: u32) -> Self {
        FinStructure {
            n,
            rels: vec![BTreeSet::new(); sig.symbols.len()],
        }
    }

    pub fn holds(&self, sym: usize, args: &[u32]) -> bool {
        self.rels[sym].contains(args)
    }

    pub fn to_json(&self, sig: &Signature) -> Value {
        let rels: serde_json::Map<String, Value> = sig
            .symbols
            .iter()
            .zip(&self.rels)
            .map(|(s, r)| (s.name.clone(), json!(r.iter().collect::<Vec<_>>())))
            .collect();
        json!({ "domain": self.n, "relations": rels })
    }

    /// Every structure on `0..n`, in the order of the atomic truth codes.
    pub fn all(sig: &Signature, n: u32) -> impl Iterator<Item = FinStructure> + '_ {
        let atoms = atom_tuples(sig, n);
        assert!(atoms.len() < 64, "too many atoms to enumerate");
        (0u64..(1u64 << atoms.len())).map(move |bits| {
            let mut m = FinStructure::empty(sig, n);
            for (i, (sym, args)) in atoms.iter().enumerate() {
                if bits >> i & 1 == 1 {
                    m.rels[*sym].insert(args.clone());
                }
            }
            m
        })
    }
}

/// `(symbol, tuple)` for every atomic sentence, in code order.
pub fn atom_tuples(sig: &Signature, n: u32) -> Vec<(usize, Vec<u32>)> {
    let mut out = Vec::new();
    for (i, s) in sig.symbols.iter().enumerate() {
        for t in tuples(n, s.arity) {
            out.push((i, t));
        }
    }
    out
}

fn tuples(n: u32, arity: usize) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for _ in 0..arity {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..n).map(move |x| {
                    let mut t = t.clone();
                    t.push(x);
                    t
                })
            })
            .collect();
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Const(u32),
    /// Bound by the quantifier at this depth.
    Var(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fo {
    Atom(usize, Vec<Term>),
    Eq(Term, Term),
    Not(Box<Fo>),
    And(Box<Fo>, Box<Fo>),
    Or(Box<Fo>, Box<Fo>),
    /// Binds the variable named by its depth.
    Exists(Box<Fo>),
    Forall(Box<Fo>),
}

impl Fo {
    pub fn atom(sym: usize, args: impl IntoIterator<Item = Term>) -> Fo {
        Fo::Atom(sym, args.into_iter().collect())
    }

    pub fn not(f: Fo) -> Fo {
        Fo::Not(Box::new(f))
    }

    pub fn and(a: Fo, b: Fo) -> Fo {
        Fo::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Fo, b: Fo) -> Fo {
        Fo::Or(Box::new(a), Box::new(b))
    }

    pub fn exists(f: Fo) -> Fo {
        Fo::Exists(Box::new(f))
    }

    pub fn forall(f: Fo) -> Fo {
        Fo::Forall(Box::new(f))
    }

    pub fn size(&self) -> u32 {
        match self {
            Fo::Atom(..) | Fo::Eq(..) => 1,
            Fo::Not(a) | Fo::Exists(a) | Fo::Forall(a) => 1 + a.size(),
            Fo::And(a, b) | Fo::Or(a, b) => 1 + a.size() + b.size(),
        }
    }

    pub fn quantifier_rank(&self) -> u32 {
        match self {
            Fo::Atom(..) | Fo::Eq(..) => 0,
            Fo::Not(a) => a.quantifier_rank(),
            Fo::And(a, b) | Fo::Or(a, b) => a.quantifier_rank().max(b.quantifier_rank()),
            Fo::Exists(a) | Fo::Forall(a) => 1 + a.quantifier_rank(),
        }
    }

    pub fn display<'a>(&'a self, sig: &'a Signature) -> FoDisplay<'a> {
        FoDisplay {
            f: self,
            sig,
            depth: 0,
        }
    }
}

pub struct FoDisplay<'a> {
    f: &'a Fo,
    sig: &'a Signature,
    depth: u32,
}

impl<'a> fmt::Display for FoDisplay<'a> {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let term = |t: &Term| match t {
            Term::Const(c) => c.to_string(),
            Term::Var(v) => format!("x{v}"),
        };
        let sig = self.sig;
        let sub = |f: &'a Fo, depth| FoDisplay { f, sig, depth };
        match self.f {
            Fo::Atom(s, args) => {
                let name = self.sig.symbols.get(*s).map_or("?", |s| s.name.as_str());
                let args: Vec<String> = args.iter().map(term).collect();
                write!(out, "{name}({})", args.join(","))
            }
            Fo::Eq(a, b) => write!(out, "{} = {}", term(a), term(b)),
            Fo::Not(a) => write!(out, "~{}", sub(a, self.depth)),
            Fo::And(a, b) => write!(out, "({} & {})", sub(a, self.depth), sub(b, self.depth)),
            Fo::Or(a, b) => write!(out, "({} | {})", sub(a, self.depth), sub(b, self.depth)),
            Fo::Exists(a) => write!(out, "Ex{} {}", self.depth, sub(a, self.depth + 1)),
            Fo::Forall(a) => write!(out, "Ax{} {}", self.depth, sub(a, self.depth + 1)),
        }
    }
}

/// Numbering of canonically named sentences over a signature and a domain.
pub struct GodelCoder {
    sig: Signature,
    n: u32,
    memo: RefCell<HashMap<(u32, u32), u128>>,
}

impl GodelCoder {
    pub fn new(sig: Signature, n: u32) -> Self {
        GodelCoder {
            sig,
            n,
            memo: RefCell::new(HashMap::new()),
        }
    }

    pub fn signature(&self) -> &Signature {
        &self.sig
    }

    /// Number of atomic relation sentences; these take codes `0..` this.
    pub fn atomic_codes(&self) -> usize {
        self.sig
            .symbols
            .iter()
            .map(|s| (self.n as usize).pow(s.arity as u32))
            .sum()
    }

    fn terms(&self, depth: u32) -> u128 {
        (self.n + depth) as u128
    }

    /// Formulas of the given size whose free variables are bound at depths
    /// below `depth`.
    pub fn count(&self, size: u32, depth: u32) -> u128 {
        if size == 0 {
            return 0;
        }
        if let Some(&c) = self.memo.borrow().get(&(size, depth)) {
            return c;
        }
        let k = self.terms(depth);
        let c = if size == 1 {
            self.sig
                .symbols
                .iter()
                .fold(0u128, |acc, s| {
                    acc.saturating_add(k.saturating_pow(s.arity as u32))
                })
                .saturating_add(k * k)
        } else {
            let mut c = self.count(size - 1, depth);
            let mut bin = 0u128;
            for l in 1..size - 1 {
                bin = bin.saturating_add(
                    self.count(l, depth)
                        .saturating_mul(self.count(size - 1 - l, depth)),
                );
            }
            c = c.saturating_add(bin.saturating_mul(2));
            c.saturating_add(self.count(size - 1, depth + 1).saturating_mul(2))
        };
        self.memo.borrow_mut().insert((size, depth), c);
        c
    }

    pub fn decode(&self, mut code: u128) -> Fo {
        let mut size = 1;
        loop {
            let c = self.count(size, 0);
            if code < c {
                return self.unrank(size, 0, code);
            }
            code -= c;
            size += 1;
        }
    }

    fn term_of(&self, i: u128) -> Term {
        let i = i as u32;
        if i < self.n {
            Term::Const(i)
        } else {
            Term::Var(i - self.n)
        }
    }

    fn term_index(&self, t: Term, depth: u32) -> Result<u128, CodecError> {
        match t {
            Term::Const(c) if c < self.n => Ok(c as u128),
            Term::Const(c) => Err(CodecError::ConstantOutOfRange(c)),
            Term::Var(v) if v < depth => Ok((self.n + v) as u128),
            Term::Var(v) => Err(CodecError::UnboundVariable(v)),
        }
    }

    fn unrank(&self, size: u32, depth: u32, mut r: u128) -> Fo {
        let k = self.terms(depth);
        if size == 1 {
            for (s, sym) in self.sig.symbols.iter().enumerate() {
                let block = k.pow(sym.arity as u32);
                if r < block {
                    let mut args = vec![Term::Const(0); sym.arity];
                    for slot in args.iter_mut().rev() {
                        *slot = self.term_of(r % k);
                        r /= k;
                    }
                    return Fo::Atom(s, args);
                }
                r -= block;
            }
            return Fo::Eq(self.term_of(r / k), self.term_of(r % k));
        }
        let c = self.count(size - 1, depth);
        if r < c {
            return Fo::not(self.unrank(size - 1, depth, r));
        }
        r -= c;
        for conj in [true, false] {
            for l in 1..size - 1 {
                let right = self.count(size - 1 - l, depth);
                let c = self.count(l, depth) * right;
                if r < c {
                    let a = self.unrank(l, depth, r / right);
                    let b = self.unrank(size - 1 - l, depth, r % right);
                    return if conj { Fo::and(a, b) } else { Fo::or(a, b) };
                }
                r -= c;
            }
        }
        let c = self.count(size - 1, depth + 1);
        if r < c {
            return Fo::exists(self.unrank(size - 1, depth + 1, r));
        }
        Fo::forall(self.unrank(size - 1, depth + 1, r - c))
    }

    /// The code of a canonically named sentence.
    pub fn encode(&self, f: &Fo) -> Result<u128, CodecError> {
        let size = f.size();
        let r = self.rank(f, 0)?;
        Ok((1..size).map(|s| self.count(s, 0)).sum::<u128>() + r)
    }

    fn rank(&self, f: &Fo, depth: u32) -> Result<u128, CodecError> {
        let k = self.terms(depth);
        let size = f.size();
        Ok(match f {
            Fo::Atom(s, args) => {
                let sym = self
                    .sig
                    .symbols
                    .get(*s)
                    .ok_or(CodecError::UnknownSymbol(*s))?;
                if args.len() != sym.arity {
                    return Err(CodecError::Arity(sym.name.clone(), args.len()));
                }
                let before: u128 = self.sig.symbols[..*s]
                    .iter()
                    .map(|s| k.pow(s.arity as u32))
                    .sum();
                let mut r = 0;
                for &t in args {
                    r = r * k + self.term_index(t, depth)?;
                }
                before + r
            }
            Fo::Eq(a, b) => {
                let before: u128 = self.sig.symbols.iter().map(|s| k.pow(s.arity as u32)).sum();
                before + self.term_index(*a, depth)? * k + self.term_index(*b, depth)?
            }
            Fo::Not(a) => self.rank(a, depth)?,
            Fo::And(a, b) | Fo::Or(a, b) => {
                let mut r = self.count(size - 1, depth);
                if matches!(f, Fo::Or(..)) {
                    for l in 1..size - 1 {
                        r += self.count(l, depth) * self.count(size - 1 - l, depth);
                    }
                }
                let la = a.size();
                for l in 1..la {
                    r += self.count(l, depth) * self.count(size - 1 - l, depth);
                }
                r + self.rank(a, depth)? * self.count(b.size(), depth) + self.rank(b, depth)?
            }
            Fo::Exists(a) | Fo::Forall(a) => {
                let mut r = self.count(size - 1, depth);
                for l in 1..size - 1 {
                    r += 2 * self.count(l, depth) * self.count(size - 1 - l, depth);
                }
                if matches!(f, Fo::Forall(_)) {
                    r += self.count(size - 1, depth + 1);
                }
                r + self.rank(a, depth + 1)?
            }
        })
    }
}

/// Finite-model satisfaction of a sentence.
pub fn model_check(m: &FinStructure, f: &Fo) -> Result<bool, CodecError> {
    fn go(m: &FinStructure, f: &Fo, env: &mut Vec<u32>) -> Result<bool, CodecError> {
        let val = |t: &Term, env: &Vec<u32>| match *t {
            Term::Const(c) if c < m.n => Ok(c),
            Term::Const(c) => Err(CodecError::ConstantOutOfRange(c)),
            Term::Var(v) => env
                .get(v as usize)
                .copied()
                .ok_or(CodecError::UnboundVariable(v)),
        };
        Ok(match f {
            Fo::Atom(s, args) => {
                if *s >= m.rels.len() {
                    return Err(CodecError::UnknownSymbol(*s));
                }
                let vals = args
                    .iter()
                    .map(|t| val(t, env))
                    .collect::<Result<Vec<_>, _>>()?;
                m.holds(*s, &vals)
            }
            Fo::Eq(a, b) => val(a, env)? == val(b, env)?,
            Fo::Not(a) => !go(m, a, env)?,
            Fo::And(a, b) => go(m, a, env)? && go(m, b, env)?,
            Fo::Or(a, b) => go(m, a, env)? || go(m, b, env)?,
            Fo::Exists(a) | Fo::Forall(a) => {
                let want = matches!(f, Fo::Exists(_));
                let mut found = !want;
                for x in 0..m.n {
                    env.push(x);
                    let r = go(m, a, env);
                    env.pop();
                    if r? == want {
                        found = want;
                        break;
                    }
                }
                found
            }
        })
    }
    go(m, f, &mut Vec::new())
}

/// Truth values of the sentences with codes `0..bound`.
pub fn truth_code(coder: &GodelCoder, m: &FinStructure, bound: usize) -> Vec<bool> {
    (0..bound)
        .map(|code| {
            let f = coder.decode(code as u128);
            model_check(m, &f).unwrap_or_else(|e| {
                log::warn!("code {code} is not decidable in this structure ({e}); bit set to 0");
                false
            })
        })
        .collect()
}

/// Reads relation tables back off the atomic bits of a truth code.
pub fn decode_structure(
    coder: &GodelCoder,
    code: &[bool],
    n: u32,
) -> Result<FinStructure, CodecError> {
    let atoms = atom_tuples(&coder.sig, n);
    if code.len() < atoms.len() {
        return Err(CodecError::ShortCode {
            have: code.len(),
            need: atoms.len(),
        });
    }
    let mut m = FinStructure::empty(&coder.sig, n);
    for ((sym, args), &bit) in atoms.into_iter().zip(code) {
        if bit {
            m.rels[sym].insert(args);
        }
    }
    Ok(m)
}

/// Prefix-closed finite set of sequences of `(bit, ordinal)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeTree {
    pub depth: u32,
    pub nodes: BTreeSet<Vec<(bool, u32)>>,
}

impl CodeTree {
    /// Closes `nodes` under prefixes; the empty sequence is always present.
    pub fn new(
        depth: u32,
        nodes: impl IntoIterator<Item = Vec<(bool, u32)>>,
    ) -> Result<Self, CodecError> {
        let mut all = BTreeSet::new();
        all.insert(Vec::new());
        for s in nodes {
            if s.len() > depth as usize {
                return Err(CodecError::Scenario(format!(
                    "tree node longer than depth {depth}"
                )));
            }
            for l in 1..=s.len() {
                all.insert(s[..l].to_vec());
            }
        }
        Ok(CodeTree { depth, nodes: all })
    }

    pub fn level(&self, n: usize) -> impl Iterator<Item = &Vec<(bool, u32)>> {
        self.nodes.iter().filter(move |s| s.len() == n)
    }
}

/// The two structure systems of a goal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum System {
    /// Stages `(E, I, a)`, maps `pi`, branch `u`.
    Primary,
    /// Stages `(F, J, b)`, maps `sigma`, branch `v`, ranked by `r`.
    Secondary,
}

impl System {
    pub const BOTH: [System; 2] = [System::Primary, System::Secondary];

    /// Letter family for signature symbol `sym`.
    pub fn relation_letter(self, sym: usize) -> &'static str {
        match (self, sym) {
            (System::Primary, 0) => "E",
            (System::Primary, 1) => "I",
            (System::Primary, _) => "a",
            (System::Secondary, 0) => "F",
            (System::Secondary, 1) => "J",
            (System::Secondary, _) => "b",
        }
    }

    pub fn map_letter(self) -> &'static str {
        match self {
            System::Primary => "pi",
            System::Secondary => "sigma",
        }
    }

    pub fn branch_letter(self) -> &'static str {
        match self {
            System::Primary => "u",
            System::Secondary => "v",
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            System::Primary => "primary",
            System::Secondary => "secondary",
        })
    }
}

pub const ZETA: &str = "zeta";
pub const RANK: &str = "r";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    /// Stage-0 codes follow a branch of the tree; `u`, `v` are functions.
    Branch,
    /// Maps between stages are isomorphisms.
    Maps,
    Composition,
    /// Successor stages pick generic filters of the previous stage.
    Genericity,
    /// Designated limit stages are covered by earlier stages.
    Limits,
    /// Labelling maps commute with the stage maps and cover every label.
    Zeta,
    /// `r` is the rank function of each secondary stage.
    Ranking,
}

impl Part {
    pub const ALL: [Part; 7] = [
        Part::Branch,
        Part::Maps,
        Part::Composition,
        Part::Genericity,
        Part::Limits,
        Part::Zeta,
        Part::Ranking,
    ];
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeFile {
    depth: u32,
    #[serde(default)]
    nodes: Vec<Vec<(u8, u32)>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    omega: u32,
    omega2: u32,
    domain: u32,
    #[serde(default = "default_q")]
    q: u32,
    #[serde(default)]
    limits: Vec<u32>,
    #[serde(default)]
    labels: Vec<String>,
    tree_t: TreeFile,
    tree_u: TreeFile,
    #[serde(default)]
    parts: Option<Vec<Part>>,
}

fn default_q() -> u32 {
    2
}

/// Bounds and trees of one coding instance. Stages run over `0..omega`,
/// tree ordinals and ranks over `0..omega2` and `0..omega` respectively.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub omega: u32,
    pub omega2: u32,
    pub domain: u32,
    pub q: u32,
    pub limits: Vec<u32>,
    pub labels: Vec<String>,
    pub tree_t: CodeTree,
    pub tree_u: CodeTree,
    pub parts: BTreeSet<Part>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, CodecError> {
        let f: ScenarioFile =
            serde_json::from_str(text).map_err(|e| CodecError::Scenario(e.to_string()))?;
        let tree = |t: TreeFile| {
            let mut nodes = Vec::new();
            for s in t.nodes {
                let mut v = Vec::new();
                for (bit, xi) in s {
                    if bit > 1 || xi >= f.omega2 {
                        return Err(CodecError::Scenario(format!("bad tree entry ({bit},{xi})")));
                    }
                    v.push((bit == 1, xi));
                }
                nodes.push(v);
            }
            CodeTree::new(t.depth, nodes)
        };
        let s = Scenario {
            omega: f.omega,
            omega2: f.omega2,
            domain: f.domain,
            q: f.q,
            limits: f.limits,
            labels: f.labels,
            tree_t: tree(f.tree_t)?,
            tree_u: tree(f.tree_u)?,
            parts: f.parts.map_or_else(
                || Part::ALL.into_iter().collect(),
                |p| p.into_iter().collect(),
            ),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |m: &str| Err(CodecError::Scenario(m.into()));
        if self.omega == 0 || self.omega2 == 0 || self.domain == 0 {
            return bad("omega, omega2 and domain must be positive");
        }
        if self.limits.iter().any(|&g| g == 0 || g >= self.omega) {
            return bad("limit stages must lie in 1..omega");
        }
        let labels: BTreeSet<&String> = self.labels.iter().collect();
        if labels.len() != self.labels.len() {
            return bad("duplicate label");
        }
        for t in [&self.tree_t, &self.tree_u] {
            if t.nodes.iter().flatten().any(|&(_, xi)| xi >= self.omega2) {
                return bad("tree ordinal at or above omega2");
            }
        }
        Ok(())
    }

    pub fn has(&self, p: Part) -> bool {
        self.parts.contains(&p)
    }

    fn tree(&self, sys: System) -> &CodeTree {
        match sys {
            System::Primary => &self.tree_t,
            System::Secondary => &self.tree_u,
        }
    }

    fn stage_pairs(&self) -> Vec<(u32, u32)> {
        let mut v = Vec::new();
        for a in 0..self.omega {
            for b in a..self.omega {
                v.push((a, b));
            }
        }
        v
    }

    fn needs_maps(&self) -> bool {
        [
            Part::Maps,
            Part::Composition,
            Part::Genericity,
            Part::Limits,
            Part::Zeta,
        ]
        .iter()
        .any(|&p| self.has(p))
    }
}

/// Builds formulas over the letter families of one scenario.
pub struct Compiler<'a> {
    pub arena: &'a mut Arena,
    pub sig: Signature,
    pub n: u32,
}

impl<'a> Compiler<'a> {
    pub fn new(arena: &'a mut Arena, n: u32) -> Self {
        Compiler {
            arena,
            sig: Signature::default(),
            n,
        }
    }

    fn lit(&mut self, name: &str, args: Vec<u32>, positive: bool) -> FormulaId {
        let l = LetterId::new(name, args);
        if positive {
            self.arena.letter_formula(l)
        } else {
            self.arena.neg_letter_formula(l)
        }
    }

    fn and(&mut self, mut v: Vec<FormulaId>) -> FormulaId {
        if v.len() == 1 {
            v.pop().unwrap()
        } else {
            self.arena.and(v)
        }
    }

    fn or(&mut self, mut v: Vec<FormulaId>) -> FormulaId {
        if v.len() == 1 {
            v.pop().unwrap()
        } else {
            self.arena.or(v)
        }
    }

    /// The relation letter of stage `alpha`.
    pub fn rel(
        &mut self,
        sys: System,
        sym: usize,
        alpha: u32,
        args: &[u32],
        positive: bool,
    ) -> FormulaId {
        let mut a = vec![alpha];
        a.extend_from_slice(args);
        self.lit(sys.relation_letter(sym), a, positive)
    }

    fn map(&mut self, sys: System, a: u32, b: u32, m: u32, k: u32, positive: bool) -> FormulaId {
        self.lit(sys.map_letter(), vec![a, b, m, k], positive)
    }

    /// Satisfaction of `f` in stage `alpha` of `sys`, in negation normal
    /// form, with quantifiers expanded over the domain.
    pub fn compile_sat(
        &mut self,
        sys: System,
        alpha: u32,
        f: &Fo,
    ) -> Result<FormulaId, CodecError> {
        self.sat(sys, alpha, f, true, &mut Vec::new())
    }

    fn sat(
        &mut self,
        sys: System,
        alpha: u32,
        f: &Fo,
        pos: bool,
        env: &mut Vec<u32>,
    ) -> Result<FormulaId, CodecError> {
        let n = self.n;
        let val = |t: &Term, env: &Vec<u32>| match *t {
            Term::Const(c) if c < n => Ok(c),
            Term::Const(c) => Err(CodecError::ConstantOutOfRange(c)),
            Term::Var(v) => env
                .get(v as usize)
                .copied()
                .ok_or(CodecError::UnboundVariable(v)),
        };
        Ok(match f {
            Fo::Atom(s, args) => {
                let sym = self
                    .sig
                    .symbols
                    .get(*s)
                    .ok_or(CodecError::UnknownSymbol(*s))?;
                if sym.arity != args.len() {
                    return Err(CodecError::Arity(sym.name.clone(), args.len()));
                }
                let vals = args
                    .iter()
                    .map(|t| val(t, env))
                    .collect::<Result<Vec<_>, _>>()?;
                self.rel(sys, *s, alpha, &vals, pos)
            }
            Fo::Eq(a, b) => {
                if (val(a, env)? == val(b, env)?) == pos {
                    self.arena.top()
                } else {
                    self.arena.bottom()
                }
            }
            Fo::Not(a) => self.sat(sys, alpha, a, !pos, env)?,
            Fo::And(a, b) | Fo::Or(a, b) => {
                let x = self.sat(sys, alpha, a, pos, env)?;
                let y = self.sat(sys, alpha, b, pos, env)?;
                if matches!(f, Fo::And(..)) == pos {
                    self.arena.and([x, y])
                } else {
                    self.arena.or([x, y])
                }
            }
            Fo::Exists(a) | Fo::Forall(a) => {
                let mut kids = Vec::new();
                for x in 0..n {
                    env.push(x);
                    let r = self.sat(sys, alpha, a, pos, env);
                    env.pop();
                    kids.push(r?);
                }
                if matches!(f, Fo::Exists(_)) == pos {
                    self.arena.or(kids)
                } else {
                    self.arena.and(kids)
                }
            }
        })
    }

    /// Conjunction over `1 <= n <= depth` of the disjunction over nodes `s`
    /// of length `n` of the conjunction of `theta(s, i)` for `i < n`, where
    /// `theta(s, i)` asserts sentence `i` (or its negation, per the node's
    /// bit) at stage 0 together with the branch letter `(i, xi)`.
    pub fn compile_branch(
        &mut self,
        coder: &GodelCoder,
        tree: &CodeTree,
        sys: System,
    ) -> Result<FormulaId, CodecError> {
        let sentences: Vec<Fo> = (0..tree.depth).map(|i| coder.decode(i as u128)).collect();
        let mut levels = Vec::new();
        for n in 1..=tree.depth as usize {
            let nodes: Vec<Vec<(bool, u32)>> = tree.level(n).cloned().collect();
            let mut alts = Vec::new();
            for s in nodes {
                let mut thetas = Vec::new();
                for (i, &(bit, xi)) in s.iter().enumerate() {
                    let psi = if bit {
                        sentences[i].clone()
                    } else {
                        Fo::not(sentences[i].clone())
                    };
                    let sat = self.compile_sat(sys, 0, &psi)?;
                    let u = self.lit(sys.branch_letter(), vec![i as u32, xi], true);
                    thetas.push(self.arena.and([sat, u]));
                }
                let t = self.and(thetas);
                alts.push(t);
            }
            let d = self.or(alts);
            levels.push(d);
        }
        Ok(self.and(levels))
    }

    /// `name(prefix.., m, k)` is a total function of `m` into `0..range`.
    fn function(
        &mut self,
        name: &str,
        prefix: &[u32],
        dom: u32,
        range: u32,
        out: &mut Vec<FormulaId>,
    ) {
        let key = |m: u32, k: u32| {
            let mut a = prefix.to_vec();
            a.extend([m, k]);
            a
        };
        for m in 0..dom {
            let some: Vec<FormulaId> = (0..range)
                .map(|k| self.lit(name, key(m, k), true))
                .collect();
            out.push(self.arena.or(some));
            for k in 0..range {
                for k2 in k + 1..range {
                    let x = self.lit(name, key(m, k), false);
                    let y = self.lit(name, key(m, k2), false);
                    out.push(self.arena.or([x, y]));
                }
            }
        }
    }

    fn le(&mut self, sys: System, alpha: u32, d: u32, p: u32, positive: bool) -> FormulaId {
        if d == p {
            if positive {
                self.arena.top()
            } else {
                self.arena.bottom()
            }
        } else {
            self.rel(sys, 0, alpha, &[d, p], positive)
        }
    }

    /// `w` lies in the filter picked at stage `alpha` by element `k`: it is
    /// a positive element whose image under the successor map is an
    /// `E`-successor of `k` at the next stage.
    fn in_filter(&mut self, sys: System, alpha: u32, k: u32, w: u32, positive: bool) -> FormulaId {
        let n = self.n;
        let pos_w = self.rel(sys, 1, alpha, &[w], positive);
        let mut via = Vec::new();
        for m in 0..n {
            let p = self.map(sys, alpha, alpha + 1, w, m, positive);
            let e = self.rel(sys, 0, alpha + 1, &[k, m], positive);
            via.push(if positive {
                self.arena.and([p, e])
            } else {
                self.arena.or([p, e])
            });
        }
        if positive {
            let v = self.arena.or(via);
            self.arena.and([pos_w, v])
        } else {
            let v = self.arena.and(via);
            self.arena.or([pos_w, v])
        }
    }

    fn genericity(&mut self, sys: System, alpha: u32) -> FormulaId {
        let n = self.n;
        let mut per_k = Vec::new();
        for k in 0..n {
            let mut cl = Vec::new();
            for w in 0..n {
                for w2 in 0..n {
                    // upward closed inside the positive elements
                    let a = self.in_filter(sys, alpha, k, w, false);
                    let b = self.rel(sys, 1, alpha, &[w2], false);
                    let c = self.le(sys, alpha, w, w2, false);
                    let d = self.in_filter(sys, alpha, k, w2, true);
                    cl.push(self.arena.or([a, b, c, d]));
                    // directed
                    let a = self.in_filter(sys, alpha, k, w, false);
                    let b = self.in_filter(sys, alpha, k, w2, false);
                    let mut below = Vec::new();
                    for z in 0..n {
                        let g = self.in_filter(sys, alpha, k, z, true);
                        let l1 = self.le(sys, alpha, z, w, true);
                        let l2 = self.le(sys, alpha, z, w2, true);
                        below.push(self.arena.and([g, l1, l2]));
                    }
                    let c = self.arena.or(below);
                    cl.push(self.arena.or([a, b, c]));
                }
            }
            // meets every nonempty dense set of positive elements
            for mask in 1u32..(1 << n) {
                let d: Vec<u32> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                let mut not_dense = Vec::new();
                for &x in &d {
                    not_dense.push(self.rel(sys, 1, alpha, &[x], false));
                }
                for p in 0..n {
                    let ip = self.rel(sys, 1, alpha, &[p], true);
                    let mut none_below = vec![ip];
                    for &x in &d {
                        none_below.push(self.le(sys, alpha, x, p, false));
                    }
                    not_dense.push(self.arena.and(none_below));
                }
                for &x in &d {
                    not_dense.push(self.in_filter(sys, alpha, k, x, true));
                }
                cl.push(self.arena.or(not_dense));
            }
            per_k.push(self.arena.and(cl));
        }
        self.arena.or(per_k)
    }

    /// The conjunction of every enabled requirement of the scenario.
    pub fn compile_goal(&mut self, sc: &Scenario) -> Result<FormulaId, CodecError> {
        sc.validate()?;
        if sc.domain != self.n {
            return Err(CodecError::Scenario(
                "compiler domain differs from the scenario".into(),
            ));
        }
        let coder = GodelCoder::new(self.sig.clone(), self.n);
        let n = self.n;
        let mut clauses = Vec::new();
        for sys in System::BOTH {
            if sc.has(Part::Branch) {
                let t = sc.tree(sys).clone();
                clauses.push(self.compile_branch(&coder, &t, sys)?);
                self.function(sys.branch_letter(), &[], t.depth, sc.omega2, &mut clauses);
            }
            if sc.needs_maps() {
                for (a, b) in sc.stage_pairs() {
                    self.function(sys.map_letter(), &[a, b], n, n, &mut clauses);
                }
            }
            if sc.has(Part::Maps) {
                for (a, b) in sc.stage_pairs() {
                    self.isomorphism(sys, a, b, &mut clauses);
                }
            }
            if sc.has(Part::Composition) {
                for (a, b) in sc.stage_pairs() {
                    for c in b..sc.omega {
                        for m in 0..n {
                            for k in 0..n {
                                for t in 0..n {
                                    let x = self.map(sys, a, b, m, k, false);
                                    let y = self.map(sys, b, c, k, t, false);
                                    let z = self.map(sys, a, c, m, t, true);
                                    clauses.push(self.arena.or([x, y, z]));
                                }
                            }
                        }
                    }
                }
            }
            if sc.has(Part::Genericity) {
                for a in 0..sc.omega.saturating_sub(1) {
                    clauses.push(self.genericity(sys, a));
                }
            }
            if sc.has(Part::Limits) {
                for &g in &sc.limits {
                    for t in 0..n {
                        let mut pre = Vec::new();
                        for a in 0..g {
                            for m in 0..n {
                                pre.push(self.map(sys, a, g, m, t, true));
                            }
                        }
                        clauses.push(self.arena.or(pre));
                    }
                }
            }
        }
        if sc.has(Part::Zeta) && !sc.labels.is_empty() {
            let labels = sc.labels.len() as u32;
            for a in 0..sc.omega {
                self.function(ZETA, &[a], n, labels, &mut clauses);
            }
            for (a, b) in sc.stage_pairs() {
                for m in 0..n {
                    for k in 0..n {
                        for x in 0..labels {
                            let p = self.map(System::Primary, a, b, m, k, false);
                            let zb = self.lit(ZETA, vec![b, k, x], false);
                            let za = self.lit(ZETA, vec![a, m, x], true);
                            clauses.push(self.arena.or([p, zb, za]));
                        }
                    }
                }
            }
            for x in 0..labels {
                let mut hits = Vec::new();
                for a in 0..sc.omega {
                    for m in 0..n {
                        hits.push(self.lit(ZETA, vec![a, m, x], true));
                    }
                }
                clauses.push(self.arena.or(hits));
            }
        }
        if sc.has(Part::Ranking) {
            for a in 0..sc.omega {
                self.function(RANK, &[a], n, sc.omega, &mut clauses);
                for m in 0..n {
                    for g in 0..sc.omega {
                        // r(m) = g forces every F-predecessor below g and,
                        // for g > 0, some predecessor at g - 1.
                        let mut body = Vec::new();
                        for k in 0..n {
                            for g2 in g..sc.omega {
                                let f = self.rel(System::Secondary, 0, a, &[k, m], false);
                                let r = self.lit(RANK, vec![a, k, g2], false);
                                body.push(self.arena.or([f, r]));
                            }
                        }
                        if g > 0 {
                            let mut witness = Vec::new();
                            for k in 0..n {
                                let f = self.rel(System::Secondary, 0, a, &[k, m], true);
                                let r = self.lit(RANK, vec![a, k, g - 1], true);
                                witness.push(self.arena.and([f, r]));
                            }
                            body.push(self.arena.or(witness));
                        }
                        let not_r = self.lit(RANK, vec![a, m, g], false);
                        let b = self.arena.and(body);
                        clauses.push(self.arena.or([not_r, b]));
                    }
                }
            }
        }
        Ok(self.arena.and(clauses))
    }

    /// Injective, and atoms hold at `m` iff they hold at the image.
    fn isomorphism(&mut self, sys: System, a: u32, b: u32, out: &mut Vec<FormulaId>) {
        let n = self.n;
        for m in 0..n {
            for m2 in m + 1..n {
                for k in 0..n {
                    let x = self.map(sys, a, b, m, k, false);
                    let y = self.map(sys, a, b, m2, k, false);
                    out.push(self.arena.or([x, y]));
                }
            }
        }
        for (sym, args) in atom_tuples(&self.sig, n) {
            for image in tuples(n, args.len()) {
                for dir in [true, false] {
                    let mut c: Vec<FormulaId> = args
                        .iter()
                        .zip(&image)
                        .map(|(&m, &k)| self.map(sys, a, b, m, k, false))
                        .collect();
                    c.push(self.rel(sys, sym, a, &args, !dir));
                    c.push(self.rel(sys, sym, b, &image, dir));
                    out.push(self.arena.or(c));
                }
            }
        }
    }
}

/// One structure system read off a valuation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageSystem {
    pub stages: Vec<FinStructure>,
    /// `(alpha, beta)` to the image list of the map.
    pub maps: BTreeMap<(u32, u32), Vec<u32>>,
    /// The branch sequence (`u` or `v`).
    pub branch: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedSystem {
    pub primary: StageSystem,
    pub secondary: StageSystem,
    /// `zeta[alpha][m]` is a label index.
    pub zeta: Vec<Vec<u32>>,
    /// `ranks[alpha][m]`.
    pub ranks: Vec<Vec<u32>>,
}

impl DecodedSystem {
    pub fn system(&self, sys: System) -> &StageSystem {
        match sys {
            System::Primary => &self.primary,
            System::Secondary => &self.secondary,
        }
    }

    pub fn system_mut(&mut self, sys: System) -> &mut StageSystem {
        match sys {
            System::Primary => &mut self.primary,
            System::Secondary => &mut self.secondary,
        }
    }

    pub fn to_json(&self, sc: &Scenario) -> Value {
        let sig = Signature::default();
        let sys = |s: &StageSystem| {
            let maps: serde_json::Map<String, Value> = s
                .maps
                .iter()
                .map(|((a, b), v)| (format!("{a},{b}"), json!(v)))
                .collect();
            json!({
                "stages": s.stages.iter().map(|m| m.to_json(&sig)).collect::<Vec<_>>(),
                "maps": maps,
                "branch": s.branch,
            })
        };
        let zeta: Vec<Vec<&str>> = self
            .zeta
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&x| sc.labels[x as usize].as_str())
                    .collect()
            })
            .collect();
        json!({
            "primary": sys(&self.primary),
            "secondary": sys(&self.secondary),
            "zeta": zeta,
            "ranks": self.ranks,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DecodeIssue {
    /// A letter family that should be a function has no value, or several,
    /// at the given arguments.
    NotFunctional {
        family: String,
        at: Vec<u32>,
        values: Vec<u32>,
    },
}

impl fmt::Display for DecodeIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeIssue::NotFunctional { family, at, values } => {
                write!(
                    f,
                    "{family} at {at:?} has values {values:?} (expected exactly one)"
                )
            }
        }
    }
}

/// Reads stage structures, maps, branches, labels and ranks off `mu`.
/// Letters missing from `mu` read as 0.
pub fn decode_valuation(mu: &Valuation, sc: &Scenario) -> Result<DecodedSystem, Vec<DecodeIssue>> {
    let sig = Signature::default();
    let n = sc.domain;
    let bit =
        |name: &str, args: Vec<u32>| mu.get(&LetterId::new(name, args)).copied().unwrap_or(false);
    let mut issues = Vec::new();
    let mut func = |name: &str, prefix: &[u32], m: u32, range: u32| -> u32 {
        let values: Vec<u32> = (0..range)
            .filter(|&k| {
                let mut a = prefix.to_vec();
                a.extend([m, k]);
                bit(name, a)
            })
            .collect();
        if values.len() == 1 {
            values[0]
        } else {
            let mut at = prefix.to_vec();
            at.push(m);
            issues.push(DecodeIssue::NotFunctional {
                family: name.into(),
                at,
                values,
            });
            0
        }
    };
    let mut systems = Vec::new();
    for sys in System::BOTH {
        let mut stages = Vec::new();
        for a in 0..sc.omega {
            let mut m = FinStructure::empty(&sig, n);
            for (sym, args) in atom_tuples(&sig, n) {
                let mut la = vec![a];
                la.extend(&args);
                if bit(sys.relation_letter(sym), la) {
                    m.rels[sym].insert(args);
                }
            }
            stages.push(m);
        }
        let mut maps = BTreeMap::new();
        if sc.needs_maps() {
            for (a, b) in sc.stage_pairs() {
                let v = (0..n)
                    .map(|m| func(sys.map_letter(), &[a, b], m, n))
                    .collect();
                maps.insert((a, b), v);
            }
        }
        let branch = if sc.has(Part::Branch) {
            (0..sc.tree(sys).depth)
                .map(|i| func(sys.branch_letter(), &[], i, sc.omega2))
                .collect()
        } else {
            Vec::new()
        };
        systems.push(StageSystem {
            stages,
            maps,
            branch,
        });
    }
    let zeta = if sc.has(Part::Zeta) && !sc.labels.is_empty() {
        (0..sc.omega)
            .map(|a| {
                (0..n)
                    .map(|m| func(ZETA, &[a], m, sc.labels.len() as u32))
                    .collect()
            })
            .collect()
    } else {
        Vec::new()
    };
    let ranks = if sc.has(Part::Ranking) {
        (0..sc.omega)
            .map(|a| (0..n).map(|m| func(RANK, &[a], m, sc.omega)).collect())
            .collect()
    } else {
        Vec::new()
    };
    if !issues.is_empty() {
        issues.sort();
        return Err(issues);
    }
    let secondary = systems.pop().unwrap();
    let primary = systems.pop().unwrap();
    Ok(DecodedSystem {
        primary,
        secondary,
        zeta,
        ranks,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum CheckViolation {
    /// Stage-0 code and branch prefix of length `n` is not a tree node.
    Branch {
        system: System,
        n: u32,
    },
    /// The map fails to preserve some formula of bounded quantifier rank.
    Elementarity {
        system: System,
        alpha: u32,
        beta: u32,
    },
    Composition {
        system: System,
        alpha: u32,
        beta: u32,
        gamma: u32,
    },
    /// No element picks a generic filter at this successor step.
    Genericity {
        system: System,
        alpha: u32,
    },
    /// Element `target` of limit stage `gamma` is not an image.
    LimitSurjectivity {
        system: System,
        gamma: u32,
        target: u32,
    },
    ZetaCommutation {
        alpha: u32,
        beta: u32,
    },
    ZetaSurjectivity {
        label: String,
    },
    /// The secondary stage is ill-founded or `r` is not its rank function.
    Ranking {
        alpha: u32,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CheckReport {
    pub violations: Vec<CheckViolation>,
    /// Names of the checks that ran.
    pub checks: Vec<&'static str>,
}

impl CheckReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "clean": self.is_clean(),
            "checks": self.checks,
            "violations": self.violations.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>(),
        })
    }
}

/// Duplicator wins the `rounds`-round Ehrenfeucht-Fraisse game from the
/// position pairing `xs` with `ys`.
pub fn ef_game(
    a: &FinStructure,
    b: &FinStructure,
    xs: &mut Vec<u32>,
    ys: &mut Vec<u32>,
    rounds: u32,
) -> bool {
    let k = xs.len();
    for i in 0..k {
        for j in 0..k {
            if (xs[i] == xs[j]) != (ys[i] == ys[j]) {
                return false;
            }
        }
    }
    for (sym, rel) in a.rels.iter().enumerate() {
        let arity = rel
            .iter()
            .next()
            .or_else(|| b.rels[sym].iter().next())
            .map(Vec::len);
        let Some(arity) = arity else { continue };
        for idx in tuples(k as u32, arity) {
            let ta: Vec<u32> = idx.iter().map(|&i| xs[i as usize]).collect();
            let tb: Vec<u32> = idx.iter().map(|&i| ys[i as usize]).collect();
            if a.holds(sym, &ta) != b.holds(sym, &tb) {
                return false;
            }
        }
    }
    if rounds == 0 {
        return true;
    }
    let step = |from_a: bool, xs: &mut Vec<u32>, ys: &mut Vec<u32>| {
        let (n1, n2) = if from_a { (a.n, b.n) } else { (b.n, a.n) };
        (0..n1).all(|x| {
            (0..n2).any(|y| {
                let (px, py) = if from_a { (x, y) } else { (y, x) };
                xs.push(px);
                ys.push(py);
                let ok = ef_game(a, b, xs, ys, rounds - 1);
                xs.pop();
                ys.pop();
                ok
            })
        })
    };
    step(true, xs, ys) && step(false, xs, ys)
}

/// Rank function of a binary relation by well-founded recursion, or `None`
/// if the relation has a cycle.
pub fn rank_function(n: u32, rel: &BTreeSet<Vec<u32>>) -> Option<Vec<u32>> {
    let mut rank: Vec<Option<u32>> = vec![None; n as usize];
    for _ in 0..=n {
        let mut changed = false;
        for m in 0..n {
            if rank[m as usize].is_some() {
                continue;
            }
            let preds: Vec<u32> = (0..n).filter(|&k| rel.contains(&vec![k, m])).collect();
            if preds.iter().all(|&k| rank[k as usize].is_some()) {
                rank[m as usize] = Some(
                    preds
                        .iter()
                        .map(|&k| rank[k as usize].unwrap() + 1)
                        .max()
                        .unwrap_or(0),
                );
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    rank.into_iter().collect()
}

fn le_holds(m: &FinStructure, d: u32, p: u32) -> bool {
    d == p || m.holds(0, &[d, p])
}

/// Is `g` a filter of the positive elements of `m` meeting every nonempty
/// dense subset?
pub fn is_generic_filter(m: &FinStructure, g: &BTreeSet<u32>) -> bool {
    let pos: Vec<u32> = (0..m.n).filter(|&w| m.holds(1, &[w])).collect();
    if !g.iter().all(|w| pos.contains(w)) {
        return false;
    }
    for &w in g {
        for &w2 in &pos {
            if le_holds(m, w, w2) && !g.contains(&w2) {
                return false;
            }
        }
        for &w2 in g {
            if !g.iter().any(|&z| le_holds(m, z, w) && le_holds(m, z, w2)) {
                return false;
            }
        }
    }
    for mask in 1u32..(1 << pos.len()) {
        let d: Vec<u32> = pos
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, &x)| x)
            .collect();
        let dense = pos.iter().all(|&p| d.iter().any(|&x| le_holds(m, x, p)));
        if dense && !d.iter().any(|x| g.contains(x)) {
            return false;
        }
    }
    true
}

/// Re-verifies a decoded system semantically, without the compiled clauses.
pub fn check_decoded(sys: &DecodedSystem, sc: &Scenario) -> CheckReport {
    let sig = Signature::default();
    let coder = GodelCoder::new(sig.clone(), sc.domain);
    let n = sc.domain;
    let mut r = CheckReport::default();
    for s in System::BOTH {
        let st = sys.system(s);
        if sc.has(Part::Branch) {
            r.checks.push("branch");
            let tree = sc.tree(s);
            let code = truth_code(&coder, &st.stages[0], tree.depth as usize);
            for len in 1..=tree.depth {
                let node: Vec<(bool, u32)> =
                    (0..len as usize).map(|i| (code[i], st.branch[i])).collect();
                if !tree.nodes.contains(&node) {
                    r.violations
                        .push(CheckViolation::Branch { system: s, n: len });
                }
            }
        }
        if sc.has(Part::Maps) {
            r.checks.push("bounded elementarity");
            for (&(a, b), map) in &st.maps {
                let mut xs: Vec<u32> = (0..n).collect();
                let mut ys = map.clone();
                if !ef_game(
                    &st.stages[a as usize],
                    &st.stages[b as usize],
                    &mut xs,
                    &mut ys,
                    sc.q,
                ) {
                    r.violations.push(CheckViolation::Elementarity {
                        system: s,
                        alpha: a,
                        beta: b,
                    });
                }
            }
        }
        if sc.has(Part::Composition) {
            r.checks.push("commutation");
            for (a, b) in sc.stage_pairs() {
                for c in b..sc.omega {
                    let (f, g, h) = (&st.maps[&(a, b)], &st.maps[&(b, c)], &st.maps[&(a, c)]);
                    if (0..n as usize).any(|m| g[f[m] as usize] != h[m]) {
                        r.violations.push(CheckViolation::Composition {
                            system: s,
                            alpha: a,
                            beta: b,
                            gamma: c,
                        });
                    }
                }
            }
        }
        if sc.has(Part::Genericity) {
            r.checks.push("genericity");
            for a in 0..sc.omega.saturating_sub(1) {
                let (cur, next) = (&st.stages[a as usize], &st.stages[a as usize + 1]);
                let map = &st.maps[&(a, a + 1)];
                let ok = (0..n).any(|k| {
                    let g: BTreeSet<u32> = (0..n)
                        .filter(|&w| cur.holds(1, &[w]) && next.holds(0, &[k, map[w as usize]]))
                        .collect();
                    is_generic_filter(cur, &g)
                });
                if !ok {
                    r.violations.push(CheckViolation::Genericity {
                        system: s,
                        alpha: a,
                    });
                }
            }
        }
        if sc.has(Part::Limits) {
            r.checks.push("limit surjectivity");
            for &g in &sc.limits {
                for t in 0..n {
                    if !(0..g).any(|a| st.maps[&(a, g)].contains(&t)) {
                        r.violations.push(CheckViolation::LimitSurjectivity {
                            system: s,
                            gamma: g,
                            target: t,
                        });
                    }
                }
            }
        }
    }
    if sc.has(Part::Zeta) && !sc.labels.is_empty() {
        r.checks.push("zeta commutation");
        r.checks.push("zeta surjectivity");
        for (a, b) in sc.stage_pairs() {
            let p = &sys.primary.maps[&(a, b)];
            if (0..n as usize)
                .any(|m| sys.zeta[a as usize][m] != sys.zeta[b as usize][p[m] as usize])
            {
                r.violations
                    .push(CheckViolation::ZetaCommutation { alpha: a, beta: b });
            }
        }
        for (x, label) in sc.labels.iter().enumerate() {
            if !sys.zeta.iter().any(|row| row.contains(&(x as u32))) {
                r.violations.push(CheckViolation::ZetaSurjectivity {
                    label: label.clone(),
                });
            }
        }
    }
    if sc.has(Part::Ranking) {
        r.checks.push("ranking");
        for a in 0..sc.omega {
            let rel = &sys.secondary.stages[a as usize].rels[0];
            if rank_function(n, rel).as_ref() != Some(&sys.ranks[a as usize]) {
                r.violations.push(CheckViolation::Ranking { alpha: a });
            }
        }
    }
    r.checks.sort_unstable();
    r.checks.dedup();
    r.violations.sort();
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::{FormulaSet, Node};
    use crate::game::{solve, Verdict, DEFAULT_BUDGET};

    const E: usize = 0;
    const I: usize = 1;
    use Term::{Const as C, Var as V};

    fn structure(n: u32, e: &[[u32; 2]]) -> FinStructure {
        let sig = Signature::default();
        let mut m = FinStructure::empty(&sig, n);
        for t in e {
            m.rels[E].insert(t.to_vec());
        }
        m
    }

    #[test]
    fn atoms_come_first() {
        let coder = GodelCoder::new(Signature::default(), 2);
        assert_eq!(coder.decode(0), Fo::atom(E, [C(0), C(0)]));
        assert_eq!(coder.decode(1), Fo::atom(E, [C(0), C(1)]));
        assert_eq!(coder.decode(4), Fo::atom(I, [C(0)]));
        assert_eq!(coder.decode(8), Fo::Eq(C(0), C(0)));
        assert_eq!(coder.atomic_codes(), 8);
        let one = GodelCoder::new(Signature::default(), 1);
        assert_eq!(one.decode(1), Fo::atom(I, [C(0)]));
    }

    #[test]
    fn coder_roundtrips_over_a_prefix() {
        for n in 1..=3 {
            let coder = GodelCoder::new(Signature::default(), n);
            for code in 0..3000u128 {
                let f = coder.decode(code);
                assert_eq!(coder.encode(&f).unwrap(), code, "{}", f.display(&coder.sig));
            }
        }
    }

    #[test]
    fn truth_code_examples() {
        let sig = Signature::default();
        let coder1 = GodelCoder::new(sig.clone(), 1);
        let empty = FinStructure::empty(&sig, 1);
        let i0 = coder1.encode(&Fo::atom(I, [C(0)])).unwrap() as usize;
        assert!(!truth_code(&coder1, &empty, 10)[i0]);

        let coder = GodelCoder::new(sig, 2);
        let m = structure(2, &[[0, 1]]);
        let e01 = coder.encode(&Fo::atom(E, [C(0), C(1)])).unwrap() as usize;
        let ex = coder
            .encode(&Fo::exists(Fo::atom(E, [C(0), V(0)])))
            .unwrap() as usize;
        let code = truth_code(&coder, &m, ex + 1);
        assert!(code[e01]);
        assert!(code[ex]);
    }

    #[test]
    fn model_check_examples() {
        let m = structure(3, &[[0, 1], [1, 2], [2, 0]]);
        assert!(model_check(&m, &Fo::Eq(C(1), C(1))).unwrap());
        assert!(!model_check(&m, &Fo::atom(E, [C(0), C(0)])).unwrap());
        let total = Fo::forall(Fo::exists(Fo::atom(E, [V(0), V(1)])));
        assert!(model_check(&m, &total).unwrap());
        assert_eq!(
            model_check(&m, &Fo::atom(E, [C(0), C(5)])),
            Err(CodecError::ConstantOutOfRange(5))
        );
    }

    #[test]
    fn decode_structure_examples() {
        let coder = GodelCoder::new(Signature::default(), 3);
        let cycle = structure(3, &[[0, 1], [1, 2], [2, 0]]);
        let code = truth_code(&coder, &cycle, coder.atomic_codes());
        assert_eq!(decode_structure(&coder, &code, 3).unwrap(), cycle);
        let zero = vec![false; coder.atomic_codes()];
        assert_eq!(
            decode_structure(&coder, &zero, 3).unwrap(),
            FinStructure::empty(&Signature::default(), 3)
        );
        assert!(matches!(
            decode_structure(&coder, &zero[..4], 3),
            Err(CodecError::ShortCode { .. })
        ));
    }

    #[test]
    fn compile_sat_examples() {
        let mut a = Arena::new();
        let mut c = Compiler::new(&mut a, 3);
        let f = c
            .compile_sat(System::Primary, 0, &Fo::atom(E, [C(0), C(1)]))
            .unwrap();
        assert_eq!(c.arena.print(f), "E(0,0,1)");
        let f = c
            .compile_sat(System::Primary, 1, &Fo::not(Fo::atom(I, [C(2)])))
            .unwrap();
        assert_eq!(c.arena.print(f), "not I(1,2)");
        let f = c
            .compile_sat(System::Primary, 0, &Fo::exists(Fo::atom(E, [C(0), V(0)])))
            .unwrap();
        assert_eq!(c.arena.print(f), "or()(E(0,0,0), E(0,0,1), E(0,0,2))");
        assert!(c.compile_sat(System::Primary, 0, &Fo::atom(7, [])).is_err());
        let f = c
            .compile_sat(System::Secondary, 2, &Fo::atom(E, [C(1), C(1)]))
            .unwrap();
        assert_eq!(c.arena.print(f), "F(2,1,1)");
    }

    #[test]
    fn compile_branch_examples() {
        let mut a = Arena::new();
        let coder = GodelCoder::new(Signature::default(), 2);
        let mut c = Compiler::new(&mut a, 2);
        let t0 = CodeTree::new(0, []).unwrap();
        let f = c.compile_branch(&coder, &t0, System::Primary).unwrap();
        assert_eq!(c.arena.print(f), "and()()");
        let t1 = CodeTree::new(1, [vec![(true, 0)]]).unwrap();
        let f = c.compile_branch(&coder, &t1, System::Primary).unwrap();
        assert_eq!(c.arena.print(f), "(E(0,0,0) and u(0,0))");
        let t2 = CodeTree::new(1, [vec![(true, 0)], vec![(false, 1)]]).unwrap();
        let f = c.compile_branch(&coder, &t2, System::Primary).unwrap();
        let Node::Or(kids) = c.arena.node(f).clone() else {
            panic!("two nodes of length one should give a disjunction");
        };
        let printed: BTreeSet<String> = kids.iter().map(|&k| c.arena.print(k)).collect();
        let expect: BTreeSet<String> = ["(E(0,0,0) and u(0,0))", "(not E(0,0,0) and u(0,1))"]
            .into_iter()
            .map(String::from)
            .collect();
        assert_eq!(printed, expect);
    }

    fn scenario(extra: &str) -> Scenario {
        Scenario::from_json(&format!(
            r#"{{"omega": 3, "omega2": 1, "domain": 2,
                "tree_t": {{"depth": 0}}, "tree_u": {{"depth": 0}} {extra}}}"#
        ))
        .unwrap()
    }

    fn valuation_of_maps(maps: &[((u32, u32), [u32; 2])]) -> Valuation {
        let mut mu = Valuation::new();
        for &((a, b), img) in maps {
            for m in 0..2 {
                for k in 0..2 {
                    for name in ["pi", "sigma"] {
                        mu.insert(LetterId::new(name, [a, b, m, k]), img[m as usize] == k);
                    }
                }
            }
        }
        mu
    }

    #[test]
    fn commutation_only_goal_matches_brute_force() {
        let sc = scenario(r#", "parts": ["composition"]"#);
        let mut a = Arena::new();
        let goal = Compiler::new(&mut a, 2).compile_goal(&sc).unwrap();
        let maps: Vec<[u32; 2]> = vec![[0, 0], [0, 1], [1, 0], [1, 1]];
        let id = [0, 1];
        for &p01 in &maps {
            for &p12 in &maps {
                for &p02 in &maps {
                    let mu = valuation_of_maps(&[
                        ((0, 0), id),
                        ((1, 1), id),
                        ((2, 2), id),
                        ((0, 1), p01),
                        ((1, 2), p12),
                        ((0, 2), p02),
                    ]);
                    let expect = (0..2).all(|m| p12[p01[m] as usize] == p02[m]);
                    let got = crate::forcing::verify_model(&a, &mu, goal);
                    assert_eq!(got, expect, "{p01:?} {p12:?} {p02:?}");
                }
            }
        }
    }

    #[test]
    fn degenerate_goal_is_solved_and_decodes() {
        let sc = Scenario::from_json(
            r#"{"omega": 1, "omega2": 1, "domain": 2, "tree_t": {"depth": 0}, "tree_u": {"depth": 0}}"#,
        )
        .unwrap();
        let mut a = Arena::new();
        let goal = Compiler::new(&mut a, 2).compile_goal(&sc).unwrap();
        let w = FormulaSet::singleton(goal);
        let Verdict::Consistent(cert) = solve(&a, &w, DEFAULT_BUDGET) else {
            panic!("degenerate goal should be consistent");
        };
        let pos = crate::game::hintikka_valuation(&a, &cert);
        let mu: Valuation = a
            .letters(&[goal])
            .into_iter()
            .map(|k| (a.letter(k).clone(), pos.contains(&k)))
            .collect();
        let sys = decode_valuation(&mu, &sc).unwrap();
        let report = check_decoded(&sys, &sc);
        assert!(report.is_clean(), "{report:?}");
    }

    #[test]
    fn decode_examples() {
        let sc = scenario("");
        let issues = decode_valuation(&Valuation::new(), &sc).unwrap_err();
        assert!(issues
            .iter()
            .all(|i| matches!(i, DecodeIssue::NotFunctional { .. })));
        assert!(issues
            .iter()
            .any(|DecodeIssue::NotFunctional { family, .. }| family == "pi"));

        let sc = scenario(r#", "parts": ["branch"]"#);
        let mu: Valuation = [(LetterId::new("E", [0, 0, 1]), true)]
            .into_iter()
            .collect();
        let sys = decode_valuation(&mu, &sc).unwrap();
        assert_eq!(sys.primary.stages[0], structure(2, &[[0, 1]]));
        assert!(sys.primary.stages[1..]
            .iter()
            .all(|m| m.rels.iter().all(BTreeSet::is_empty)));
    }

    fn identity_system(sc: &Scenario) -> DecodedSystem {
        let sig = Signature::default();
        let st = || StageSystem {
            stages: vec![FinStructure::empty(&sig, 2); 3],
            maps: sc
                .stage_pairs()
                .into_iter()
                .map(|p| (p, vec![0, 1]))
                .collect(),
            branch: Vec::new(),
        };
        DecodedSystem {
            primary: st(),
            secondary: st(),
            zeta: vec![vec![0, 0]; 3],
            ranks: vec![vec![0, 0]; 3],
        }
    }

    #[test]
    fn identity_system_is_clean_and_faults_are_pinpointed() {
        let sc = scenario(r#", "labels": ["x"], "limits": [2]"#);
        let sys = identity_system(&sc);
        assert!(
            check_decoded(&sys, &sc).is_clean(),
            "{:?}",
            check_decoded(&sys, &sc)
        );

        let mut bad = sys.clone();
        bad.primary.maps.insert((0, 2), vec![1, 0]);
        assert_eq!(
            check_decoded(&bad, &sc).violations,
            vec![CheckViolation::Composition {
                system: System::Primary,
                alpha: 0,
                beta: 1,
                gamma: 2
            }]
        );
    }

    #[test]
    fn ef_game_separates_by_rank() {
        // Seeing an edge takes two pebbles.
        let a = structure(2, &[[0, 1], [1, 0]]);
        let b = structure(2, &[]);
        assert!(ef_game(&a, &b, &mut vec![], &mut vec![], 1));
        assert!(!ef_game(&a, &b, &mut vec![], &mut vec![], 2));
        assert!(ef_game(&a, &a, &mut vec![0, 1], &mut vec![1, 0], 2));
        assert!(!ef_game(&a, &a, &mut vec![0, 1], &mut vec![0, 0], 0));
    }

    #[test]
    fn rank_function_examples() {
        let chain: BTreeSet<Vec<u32>> = [vec![0, 1], vec![1, 2]].into_iter().collect();
        assert_eq!(rank_function(3, &chain), Some(vec![0, 1, 2]));
        let cycle: BTreeSet<Vec<u32>> = [vec![0, 1], vec![1, 0]].into_iter().collect();
        assert_eq!(rank_function(2, &cycle), None);
    }
}
