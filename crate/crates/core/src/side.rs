//! Pre-condition posets with finite model tokens as side conditions.
//!
//! A pre-condition pairs a condition of the formula poset with a finite chain
//! of tokens. Each token stands in for a countable elementary submodel: it has
//! a `delta` rank, a `level`, a set of objects it knows about, and a set of
//! countable ordinals. The universe supplies membership and extension
//! relations between tokens, a projection table and a hull-delta oracle.
//!
//! Levels are solved bottom-up. At each level the extended game is a safety
//! game for Player II over the finite pre-condition space (every answer keeps
//! the formula part consistent, so II can only lose by having no legal
//! answer), and the winning region is computed as a greatest fixpoint.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use fixedbitset::FixedBitSet;
use serde::Deserialize;
use thiserror::Error;

use crate::forcing::{Forcing, ForcingError};
use crate::formula::{Arena, FormulaId, FormulaSet, Node};
use crate::game::{self, HintikkaCert, RefutationTree, Verdict};
use crate::parse::ParseError;

/// Tokens below a level beyond which chain enumeration is refused.
pub const MAX_TOKENS_PER_LEVEL: usize = 20;
/// Largest pre-condition space a level may have.
pub const MAX_SPACE: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Finite(u32),
    /// Above every finite level.
    Top,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Finite(n) => write!(f, "{n}"),
            Level::Top => f.write_str("top"),
        }
    }
}

impl std::str::FromStr for Level {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "top" {
            Ok(Level::Top)
        } else {
            s.parse().map(Level::Finite)
        }
    }
}

#[derive(Debug, Error)]
pub enum SideError {
    #[error("universe file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("formula in universe: {0}")]
    Formula(#[from] ParseError),
    #[error("invalid universe: {0}")]
    Invalid(String),
    #[error("unknown id {0:?}")]
    Dangling(String),
    #[error("level {0} must be computed first")]
    LowerLevelMissing(Level),
    #[error("level {0} is not in the universe")]
    NoSuchLevel(Level),
    #[error("combinatorial budget exceeded: {0}")]
    Budget(String),
    #[error(transparent)]
    Forcing(#[from] ForcingError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, SideError> {
    Err(SideError::Invalid(msg.into()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: String,
    pub delta: u32,
    pub level: u32,
    pub known: Vec<String>,
    pub ords: BTreeSet<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DenseKind {
    /// Pre-conditions that omit the disjunction or hold one of its disjuncts.
    DecideOr(FormulaId),
    /// Pre-conditions that omit the conjunction or hold the given conjunct.
    AddConjunct(FormulaId, usize),
    /// Pre-conditions holding some disjunct of the disjunction.
    Decided(FormulaId),
    Explicit(Vec<PreCondition>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenseSpec {
    pub id: String,
    pub kind: DenseKind,
}

/// A formula set together with a finite set of token indices.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PreCondition {
    pub w: FormulaSet,
    pub models: BTreeSet<usize>,
}

impl PreCondition {
    pub fn bare(w: FormulaSet) -> Self {
        PreCondition {
            w,
            models: BTreeSet::new(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UniverseFile {
    formula: String,
    omega: u32,
    levels: Vec<u32>,
    #[serde(default)]
    tokens: Vec<TokenFile>,
    #[serde(default)]
    membership: Vec<(String, String)>,
    #[serde(default)]
    extension: Vec<(String, String)>,
    #[serde(default)]
    projection: Vec<ProjectionFile>,
    #[serde(default)]
    dense_sets: Vec<DenseFile>,
    #[serde(default)]
    conditions: Vec<ConditionFile>,
    #[serde(default)]
    formula_ords: Vec<FormulaOrdsFile>,
    #[serde(default)]
    hull_overrides: Vec<HullOverrideFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenFile {
    id: String,
    delta: u32,
    level: u32,
    #[serde(default)]
    known: Vec<String>,
    #[serde(default)]
    ords: Vec<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectionFile {
    token: String,
    level: u32,
    to: String,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DenseKindFile {
    DecideOr { formula: String },
    AddConjunct { formula: String, index: usize },
    Decided { formula: String },
    Explicit { members: Vec<PreFile> },
}

#[derive(Deserialize)]
struct DenseFile {
    id: String,
    #[serde(flatten)]
    kind: DenseKindFile,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PreFile {
    set: Vec<String>,
    #[serde(default)]
    models: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConditionFile {
    id: String,
    set: Vec<String>,
    #[serde(default)]
    models: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FormulaOrdsFile {
    formula: String,
    ords: Vec<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HullOverrideFile {
    token: String,
    set: Vec<String>,
    #[serde(default)]
    models: Vec<String>,
    delta: u32,
}

/// A loaded and validated token universe.
#[derive(Clone, Debug)]
pub struct Universe {
    pub phi: FormulaId,
    pub omega: u32,
    /// Sorted finite levels; [`Level::Top`] sits above them.
    pub levels: Vec<u32>,
    pub tokens: Vec<Token>,
    pub dense: Vec<DenseSpec>,
    /// Named pre-conditions that tokens may know.
    pub conditions: Vec<(String, PreCondition)>,
    member: Vec<FixedBitSet>,
    extends: Vec<FixedBitSet>,
    projection: BTreeMap<(usize, u32), usize>,
    formula_ords: HashMap<FormulaId, BTreeSet<u32>>,
    hull_overrides: HashMap<(usize, PreCondition), u32>,
    known_dense: Vec<Vec<usize>>,
    known_levels: Vec<BTreeSet<u32>>,
    known_conditions: Vec<Vec<usize>>,
}

impl Universe {
    pub fn from_json(arena: &mut Arena, text: &str) -> Result<Self, SideError> {
        let file: UniverseFile = serde_json::from_str(text)?;
        Self::build(arena, file)
    }

    /// A universe with no tokens, dense sets or ords over `phi`, with one
    /// finite level.
    pub fn empty(phi: FormulaId) -> Self {
        Universe {
            phi,
            omega: 1,
            levels: vec![0],
            tokens: Vec::new(),
            dense: Vec::new(),
            conditions: Vec::new(),
            member: Vec::new(),
            extends: Vec::new(),
            projection: BTreeMap::new(),
            formula_ords: HashMap::new(),
            hull_overrides: HashMap::new(),
            known_dense: Vec::new(),
            known_levels: Vec::new(),
            known_conditions: Vec::new(),
        }
    }

    fn build(arena: &mut Arena, f: UniverseFile) -> Result<Self, SideError> {
        let phi = arena.parse(&f.formula)?;
        if !arena.is_nnf(phi) {
            return invalid("formula must be in negation normal form");
        }
        let mut levels = f.levels.clone();
        levels.sort_unstable();
        levels.dedup();
        if levels.len() != f.levels.len() {
            return invalid("duplicate level");
        }

        let mut ids: HashMap<String, ()> = HashMap::new();
        let mut fresh = |id: &str| {
            if ids.insert(id.to_string(), ()).is_some() {
                invalid(format!("duplicate id {id:?}"))
            } else {
                Ok(())
            }
        };
        let mut token_index = HashMap::new();
        for (i, t) in f.tokens.iter().enumerate() {
            fresh(&t.id)?;
            token_index.insert(t.id.clone(), i);
        }
        let dense_ids: Vec<String> = f.dense_sets.iter().map(|d| d.id.clone()).collect();
        for id in &dense_ids {
            fresh(id)?;
        }
        for c in &f.conditions {
            fresh(&c.id)?;
        }
        let tok = |id: &str| {
            token_index
                .get(id)
                .copied()
                .ok_or_else(|| SideError::Dangling(id.into()))
        };

        let mut tokens = Vec::new();
        for t in &f.tokens {
            if !levels.contains(&t.level) {
                return invalid(format!(
                    "token {} has level {} outside the level list",
                    t.id, t.level
                ));
            }
            if t.delta >= f.omega || t.ords.iter().any(|&o| o >= f.omega) {
                return invalid(format!("token {} has an ordinal at or above omega", t.id));
            }
            tokens.push(Token {
                id: t.id.clone(),
                delta: t.delta,
                level: t.level,
                known: t.known.clone(),
                ords: t.ords.iter().copied().collect(),
            });
        }
        let n = tokens.len();

        let mut member = vec![FixedBitSet::with_capacity(n); n];
        for (a, b) in &f.membership {
            member[tok(a)?].insert(tok(b)?);
        }
        transitive_closure(&mut member);
        for i in 0..n {
            if member[i].contains(i) {
                return invalid(format!("membership is not irreflexive at {}", tokens[i].id));
            }
            for j in member[i].ones() {
                if tokens[i].delta >= tokens[j].delta {
                    return invalid(format!(
                        "delta does not increase along membership {} -> {}",
                        tokens[i].id, tokens[j].id
                    ));
                }
            }
        }

        let mut extends = vec![FixedBitSet::with_capacity(n); n];
        for (i, e) in extends.iter_mut().enumerate() {
            e.insert(i);
        }
        for (a, b) in &f.extension {
            extends[tok(a)?].insert(tok(b)?);
        }
        transitive_closure(&mut extends);
        for i in 0..n {
            for j in extends[i].ones() {
                let (m, k) = (&tokens[i], &tokens[j]);
                let known: BTreeSet<&String> = m.known.iter().collect();
                if m.delta != k.delta
                    || m.level != k.level
                    || !k.known.iter().all(|x| known.contains(x))
                    || !k.ords.is_subset(&m.ords)
                {
                    return invalid(format!(
                        "extension {} over {} must keep delta and level and grow known and ords",
                        m.id, k.id
                    ));
                }
            }
        }

        let mut projection = BTreeMap::new();
        for p in &f.projection {
            if !levels.contains(&p.level) {
                return invalid(format!("projection at unknown level {}", p.level));
            }
            projection.insert((tok(&p.token)?, p.level), tok(&p.to)?);
        }

        let parse_set = |arena: &mut Arena, srcs: &[String]| -> Result<FormulaSet, SideError> {
            srcs.iter()
                .map(|s| arena.parse(s).map_err(SideError::from))
                .collect()
        };
        let parse_models = |srcs: &[String]| -> Result<BTreeSet<usize>, SideError> {
            srcs.iter().map(|s| tok(s)).collect()
        };

        let mut dense = Vec::new();
        for d in f.dense_sets {
            let kind = match d.kind {
                DenseKindFile::DecideOr { formula } => {
                    DenseKind::DecideOr(or_node(arena, &formula)?)
                }
                DenseKindFile::Decided { formula } => DenseKind::Decided(or_node(arena, &formula)?),
                DenseKindFile::AddConjunct { formula, index } => {
                    let g = arena.parse(&formula)?;
                    match arena.node(g) {
                        Node::And(cs) if index < cs.len() => DenseKind::AddConjunct(g, index),
                        _ => return invalid(format!("dense set {}: bad conjunct index", d.id)),
                    }
                }
                DenseKindFile::Explicit { members } => DenseKind::Explicit(
                    members
                        .iter()
                        .map(|m| {
                            Ok(PreCondition {
                                w: parse_set(arena, &m.set)?,
                                models: parse_models(&m.models)?,
                            })
                        })
                        .collect::<Result<_, SideError>>()?,
                ),
            };
            dense.push(DenseSpec { id: d.id, kind });
        }

        let mut conditions = Vec::new();
        for c in &f.conditions {
            conditions.push((
                c.id.clone(),
                PreCondition {
                    w: parse_set(arena, &c.set)?,
                    models: parse_models(&c.models)?,
                },
            ));
        }

        let mut formula_ords: HashMap<FormulaId, BTreeSet<u32>> = HashMap::new();
        for fo in &f.formula_ords {
            let g = arena.parse(&fo.formula)?;
            formula_ords
                .entry(g)
                .or_default()
                .extend(fo.ords.iter().copied());
        }

        let mut hull_overrides = HashMap::new();
        for h in &f.hull_overrides {
            let q = PreCondition {
                w: parse_set(arena, &h.set)?,
                models: parse_models(&h.models)?,
            };
            hull_overrides.insert((tok(&h.token)?, q), h.delta);
        }

        let dense_index: HashMap<&str, usize> = dense
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.as_str(), i))
            .collect();
        let cond_index: HashMap<&str, usize> = conditions
            .iter()
            .enumerate()
            .map(|(i, c)| (c.0.as_str(), i))
            .collect();
        let mut known_dense = vec![Vec::new(); n];
        let mut known_levels = vec![BTreeSet::new(); n];
        let mut known_conditions = vec![Vec::new(); n];
        for (i, t) in tokens.iter().enumerate() {
            for k in &t.known {
                if let Some(&d) = dense_index.get(k.as_str()) {
                    known_dense[i].push(d);
                } else if let Some(&c) = cond_index.get(k.as_str()) {
                    known_conditions[i].push(c);
                    known_levels[i].extend(conditions[c].1.models.iter().map(|&m| tokens[m].level));
                } else if let Some(&m) = token_index.get(k.as_str()) {
                    known_levels[i].insert(tokens[m].level);
                } else {
                    return Err(SideError::Dangling(k.clone()));
                }
            }
        }

        let u = Universe {
            phi,
            omega: f.omega,
            levels,
            tokens,
            dense,
            conditions,
            member,
            extends,
            projection,
            formula_ords,
            hull_overrides,
            known_dense,
            known_levels,
            known_conditions,
        };
        for (&(m, lam), &to) in &u.projection {
            if u.tokens[to].level > lam {
                return invalid(format!(
                    "projection of {} at {lam} lies above the level",
                    u.tokens[m].id
                ));
            }
            if u.project(to, lam) != Some(to) {
                return invalid(format!(
                    "projection at {lam} is not idempotent on {}",
                    u.tokens[to].id
                ));
            }
        }
        Ok(u)
    }

    pub fn token_index(&self, id: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t.id == id)
    }

    pub fn dense_index(&self, id: &str) -> Option<usize> {
        self.dense.iter().position(|d| d.id == id)
    }

    pub fn condition(&self, id: &str) -> Option<&PreCondition> {
        self.conditions.iter().find(|c| c.0 == id).map(|c| &c.1)
    }

    /// Finite levels followed by the top level.
    pub fn all_levels(&self) -> Vec<Level> {
        self.levels
            .iter()
            .map(|&l| Level::Finite(l))
            .chain([Level::Top])
            .collect()
    }

    /// `m` belongs to `n` (transitively closed).
    pub fn is_member(&self, m: usize, n: usize) -> bool {
        self.member[m].contains(n)
    }

    /// `m` extends `n` (reflexive and transitive).
    pub fn extends(&self, m: usize, n: usize) -> bool {
        self.extends[m].contains(n)
    }

    /// The projection of `m` to a finite level: the table entry, else `m`
    /// itself when its level is at most `lam`, else undefined.
    pub fn project(&self, m: usize, lam: u32) -> Option<usize> {
        match self.projection.get(&(m, lam)) {
            Some(&to) => Some(to),
            None if self.tokens[m].level <= lam => Some(m),
            None => None,
        }
    }

    fn level_of(&self, m: usize) -> Level {
        Level::Finite(self.tokens[m].level)
    }

    /// Countable ordinals carried by `q`: those of its tokens plus the ords
    /// declared for its formulas.
    pub fn ords_of(&self, q: &PreCondition) -> BTreeSet<u32> {
        let mut out: BTreeSet<u32> = q
            .models
            .iter()
            .flat_map(|&m| self.tokens[m].ords.iter().copied())
            .collect();
        for f in q.w.iter() {
            if let Some(os) = self.formula_ords.get(&f) {
                out.extend(os.iter().copied());
            }
        }
        out
    }

    /// The delta of the hull of token `m` with `q`: an override if the
    /// universe declares one, else the largest of `delta(m)` and `o + 1` for
    /// ords `o` of `q` with `delta(m) <= o < omega`.
    pub fn hull_delta(&self, m: usize, q: &PreCondition) -> u32 {
        if let Some(&d) = self.hull_overrides.get(&(m, q.clone())) {
            return d;
        }
        self.reference_hull_delta(m, q)
    }

    pub fn reference_hull_delta(&self, m: usize, q: &PreCondition) -> u32 {
        let d = self.tokens[m].delta;
        self.ords_of(q)
            .range(d..self.omega)
            .map(|o| o + 1)
            .max()
            .unwrap_or(d)
            .max(d)
    }

    /// Token clauses of pre-conditions at `lam`: levels below `lam`,
    /// distinct deltas, and delta order implying membership and level order.
    pub fn tokens_valid(&self, models: &BTreeSet<usize>, lam: Level) -> bool {
        for &m in models {
            if self.level_of(m) >= lam {
                return false;
            }
        }
        for &m in models {
            for &n in models {
                let (a, b) = (&self.tokens[m], &self.tokens[n]);
                if m != n && a.delta == b.delta {
                    return false;
                }
                if a.delta < b.delta && !(self.is_member(m, n) && a.level < b.level) {
                    return false;
                }
            }
        }
        true
    }

    /// Drops the tokens whose level is not below `lam`.
    pub fn restrict(&self, p: &PreCondition, lam: Level) -> PreCondition {
        PreCondition {
            w: p.w.clone(),
            models: p
                .models
                .iter()
                .copied()
                .filter(|&m| self.level_of(m) < lam)
                .collect(),
        }
    }

    /// `p <= q`: `p` holds more formulas and every token of `q` is extended
    /// by a token of `p` with the same delta and level.
    pub fn leq_pre(&self, p: &PreCondition, q: &PreCondition) -> bool {
        q.w.is_subset(&p.w)
            && q.models.iter().all(|&n| {
                p.models.iter().any(|&m| {
                    let (a, b) = (&self.tokens[m], &self.tokens[n]);
                    a.delta == b.delta && a.level == b.level && self.extends(m, n)
                })
            })
    }
}

fn or_node(arena: &mut Arena, src: &str) -> Result<FormulaId, SideError> {
    let g = arena.parse(src)?;
    match arena.node(g) {
        Node::Or(_) => Ok(g),
        _ => invalid(format!("{src:?} is not a disjunction")),
    }
}

fn transitive_closure(rel: &mut [FixedBitSet]) {
    let n = rel.len();
    for k in 0..n {
        for i in 0..n {
            if rel[i].contains(k) {
                let row = rel[k].clone();
                rel[i].union_with(&row);
            }
        }
    }
}

/// A move of Player I in the extended game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Challenge {
    Or(FormulaId),
    And(FormulaId, usize),
    /// Token index and dense-set index.
    Dense(usize, usize),
}

/// Player II's strategy on a closed region of pre-conditions. A tokenless
/// start may carry a one-element region and no answers, meaning II plays
/// from the Hintikka set alone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtendedCert {
    /// Winning set for the formula part alone.
    pub hintikka: HintikkaCert,
    /// Pre-conditions below the start from which II keeps winning.
    pub region: Vec<PreCondition>,
    /// For each region member and each admissible challenge there: the
    /// answer (an index into `region`) and, for dense challenges, the
    /// witness `q` from the dense set.
    pub answers: BTreeMap<(usize, Challenge), (usize, Option<PreCondition>)>,
}

/// Player I's strategy: for each losing pre-condition below the start, the
/// stage at which it loses and a challenge all of whose legal answers lose
/// at earlier stages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExtendedRefutation {
    /// The formula part alone is inconsistent.
    Formula(RefutationTree),
    Stages(Vec<(PreCondition, usize, Challenge)>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExtendedVerdict {
    Consistent(ExtendedCert),
    Inconsistent(ExtendedRefutation),
    Unknown { budget: usize },
}

impl ExtendedVerdict {
    pub fn is_consistent(&self) -> bool {
        matches!(self, ExtendedVerdict::Consistent(_))
    }

    pub fn is_inconsistent(&self) -> bool {
        matches!(self, ExtendedVerdict::Inconsistent(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMode {
    /// Tokenless pre-conditions go straight to the formula game.
    Auto,
    /// Always solve the extended game over the enumerated space.
    Enumerate,
}

/// The pre-condition space of one level and its winning subset.
#[derive(Clone, Debug)]
pub struct LevelPoset {
    pub level: Level,
    pub members: Vec<PreCondition>,
    pub winning: Vec<bool>,
    index: HashMap<PreCondition, usize>,
}

impl LevelPoset {
    pub fn contains_pre(&self, p: &PreCondition) -> bool {
        self.index.contains_key(p)
    }

    /// Membership in the game-defined subposet.
    pub fn wins(&self, p: &PreCondition) -> bool {
        self.index.get(p).is_some_and(|&i| self.winning[i])
    }

    pub fn winners(&self) -> impl Iterator<Item = &PreCondition> {
        self.members
            .iter()
            .zip(&self.winning)
            .filter(|(_, &w)| w)
            .map(|(p, _)| p)
    }

    pub fn winner_count(&self) -> usize {
        self.winning.iter().filter(|&&w| w).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    /// A pre-condition of the lower level whose membership differs between
    /// the two levels.
    Coherence {
        upper: Level,
        lower: Level,
        pre: PreCondition,
        in_upper: bool,
    },
    /// `p` wins at `level`, `q` is weaker but loses.
    UpwardClosure {
        level: Level,
        p: PreCondition,
        q: PreCondition,
    },
    /// The hull oracle returned less than the token's delta.
    HullGate {
        token: usize,
        q: PreCondition,
        value: u32,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoherenceReport {
    pub violations: Vec<Violation>,
}

impl CoherenceReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

struct Solution {
    win: Vec<bool>,
    stage: Vec<Option<(usize, Challenge)>>,
    answers: BTreeMap<(usize, Challenge), (usize, Option<PreCondition>)>,
}

/// The level tower over one universe.
pub struct Tower<'a> {
    pub arena: &'a Arena,
    pub universe: &'a Universe,
    budget: usize,
    conditions: Option<Vec<FormulaSet>>,
    levels: BTreeMap<Level, LevelPoset>,
    admissible: HashMap<(usize, usize), Option<Vec<PreCondition>>>,
}

impl<'a> Tower<'a> {
    pub fn new(arena: &'a Arena, universe: &'a Universe, budget: usize) -> Self {
        Tower {
            arena,
            universe,
            budget,
            conditions: None,
            levels: BTreeMap::new(),
            admissible: HashMap::new(),
        }
    }

    pub fn level(&self, lam: Level) -> Option<&LevelPoset> {
        self.levels.get(&lam)
    }

    /// Every formula-poset condition, enumerated once.
    fn formula_conditions(&mut self) -> Result<&[FormulaSet], SideError> {
        if self.conditions.is_none() {
            let h = Forcing::new(self.arena, self.universe.phi, self.budget)?;
            self.conditions = Some(h.conditions()?.into_iter().map(|c| c.w).collect());
        }
        Ok(self.conditions.as_deref().unwrap())
    }

    fn check_level(&self, lam: Level) -> Result<(), SideError> {
        match lam {
            Level::Top => Ok(()),
            Level::Finite(l) if self.universe.levels.contains(&l) => Ok(()),
            _ => Err(SideError::NoSuchLevel(lam)),
        }
    }

    fn token_chains(&self, lam: Level) -> Result<Vec<BTreeSet<usize>>, SideError> {
        let below: Vec<usize> = (0..self.universe.tokens.len())
            .filter(|&m| self.universe.level_of(m) < lam)
            .collect();
        if below.len() > MAX_TOKENS_PER_LEVEL {
            return Err(SideError::Budget(format!(
                "{} tokens below level {lam}",
                below.len()
            )));
        }
        let mut out = Vec::new();
        for mask in 0u32..(1u32 << below.len()) {
            let s: BTreeSet<usize> = below
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &m)| m)
                .collect();
            if self.universe.tokens_valid(&s, lam) {
                out.push(s);
            }
        }
        out.sort();
        Ok(out)
    }

    /// Full validity at `lam`: token clauses, resolvable ids and a formula
    /// part that is a condition of the formula poset.
    pub fn validate_pre(&mut self, p: &PreCondition, lam: Level) -> Result<bool, SideError> {
        if let Some(&m) = p.models.iter().find(|&&m| m >= self.universe.tokens.len()) {
            return Err(SideError::Dangling(format!("token #{m}")));
        }
        if !self.universe.tokens_valid(&p.models, lam) {
            return Ok(false);
        }
        let w = p.w.clone();
        Ok(self.formula_conditions()?.contains(&w))
    }

    /// Members of dense set `d` inside the winning part of `lam`, if `d` is
    /// dense there; `None` if it is not.
    fn dense_members(&self, d: usize, lam: Level) -> Result<Option<Vec<PreCondition>>, SideError> {
        let poset = self
            .levels
            .get(&lam)
            .ok_or(SideError::LowerLevelMissing(lam))?;
        let arena = self.arena;
        let spec = &self.universe.dense[d];
        let in_d = |q: &PreCondition| match &spec.kind {
            DenseKind::DecideOr(f) => {
                !q.w.contains(*f) || arena.node(*f).children().iter().any(|&c| q.w.contains(c))
            }
            DenseKind::AddConjunct(f, i) => {
                !q.w.contains(*f) || q.w.contains(arena.node(*f).children()[*i])
            }
            DenseKind::Decided(f) => arena.node(*f).children().iter().any(|&c| q.w.contains(c)),
            DenseKind::Explicit(list) => list.contains(q),
        };
        if let DenseKind::Explicit(list) = &spec.kind {
            if list.iter().any(|q| !poset.wins(q)) {
                return Ok(None);
            }
        }
        let members: Vec<PreCondition> = poset.winners().filter(|q| in_d(q)).cloned().collect();
        let dense = poset
            .winners()
            .all(|s| members.iter().any(|t| self.universe.leq_pre(t, s)));
        Ok(dense.then_some(members))
    }

    /// Members of `d` that token `m` may answer with: dense-set members
    /// whose hull keeps the token's delta. `None` when the challenge is not
    /// admissible.
    fn safe_members(&mut self, m: usize, d: usize) -> Result<Option<Vec<PreCondition>>, SideError> {
        if let Some(v) = self.admissible.get(&(m, d)) {
            return Ok(v.clone());
        }
        let lam = self.universe.level_of(m);
        let v = self.dense_members(d, lam)?.map(|members| {
            members
                .into_iter()
                .filter(|q| self.universe.hull_delta(m, q) == self.universe.tokens[m].delta)
                .collect::<Vec<_>>()
        });
        self.admissible.insert((m, d), v.clone());
        Ok(v)
    }

    fn challenges(&mut self, p: &PreCondition) -> Result<Vec<Challenge>, SideError> {
        let mut out = Vec::new();
        for f in p.w.iter() {
            match self.arena.node(f) {
                Node::Or(_) => out.push(Challenge::Or(f)),
                Node::And(cs) => out.extend((0..cs.len()).map(|i| Challenge::And(f, i))),
                _ => {}
            }
        }
        for &m in &p.models {
            for d in self.universe.known_dense[m].clone() {
                if self.safe_members(m, d)?.is_some() {
                    out.push(Challenge::Dense(m, d));
                }
            }
        }
        Ok(out)
    }

    /// Greatest-fixpoint solve over `space`, which must be closed downward
    /// inside the pre-condition space of its level.
    fn solve_space(&mut self, space: &[PreCondition]) -> Result<Solution, SideError> {
        let n = space.len();
        let u = self.universe;
        let down: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                // The state itself first so stable answers are preferred.
                std::iter::once(i)
                    .chain((0..n).filter(|&j| j != i && u.leq_pre(&space[j], &space[i])))
                    .collect()
            })
            .collect();
        let mut challenges = Vec::with_capacity(n);
        for p in space {
            challenges.push(self.challenges(p)?);
        }
        let mut sat: HashMap<Challenge, FixedBitSet> = HashMap::new();
        let mut witness: HashMap<(Challenge, usize), PreCondition> = HashMap::new();
        for cs in &challenges {
            for &c in cs {
                if sat.contains_key(&c) {
                    continue;
                }
                let mut bits = FixedBitSet::with_capacity(n);
                match c {
                    Challenge::Or(f) => {
                        let kids = self.arena.node(f).children();
                        for (j, t) in space.iter().enumerate() {
                            bits.set(j, kids.iter().any(|&k| t.w.contains(k)));
                        }
                    }
                    Challenge::And(f, i) => {
                        let k = self.arena.node(f).children()[i];
                        for (j, t) in space.iter().enumerate() {
                            bits.set(j, t.w.contains(k));
                        }
                    }
                    Challenge::Dense(m, d) => {
                        let safe = self.safe_members(m, d)?.unwrap_or_default();
                        for (j, t) in space.iter().enumerate() {
                            if let Some(q) = safe.iter().find(|q| u.leq_pre(t, q)) {
                                bits.insert(j);
                                witness.insert((c, j), q.clone());
                            }
                        }
                    }
                }
                sat.insert(c, bits);
            }
        }

        let mut win = vec![true; n];
        let mut stage = vec![None; n];
        for k in 0.. {
            let mut killed = Vec::new();
            for i in (0..n).filter(|&i| win[i]) {
                let blocking = challenges[i]
                    .iter()
                    .find(|c| !down[i].iter().any(|&j| win[j] && sat[c].contains(j)));
                if let Some(&c) = blocking {
                    killed.push((i, c));
                }
            }
            if killed.is_empty() {
                break;
            }
            for (i, c) in killed {
                win[i] = false;
                stage[i] = Some((k, c));
            }
        }

        let mut answers = BTreeMap::new();
        for i in (0..n).filter(|&i| win[i]) {
            for &c in &challenges[i] {
                let j = *down[i]
                    .iter()
                    .find(|&&j| win[j] && sat[&c].contains(j))
                    .expect("winning states answer every challenge");
                answers.insert((i, c), (j, witness.get(&(c, j)).cloned()));
            }
        }
        Ok(Solution {
            win,
            stage,
            answers,
        })
    }

    /// Enumerates the pre-condition space of `lam` and solves its game.
    /// Every finite level below `lam` must already be computed.
    pub fn compute_level(&mut self, lam: Level) -> Result<&LevelPoset, SideError> {
        self.check_level(lam)?;
        for &l in &self.universe.levels {
            if Level::Finite(l) < lam && !self.levels.contains_key(&Level::Finite(l)) {
                return Err(SideError::LowerLevelMissing(Level::Finite(l)));
            }
        }
        let chains = self.token_chains(lam)?;
        let conds = self.formula_conditions()?.to_vec();
        if conds.len() * chains.len() > MAX_SPACE {
            return Err(SideError::Budget(format!(
                "{} pre-conditions at level {lam}",
                conds.len() * chains.len()
            )));
        }
        let members: Vec<PreCondition> = conds
            .iter()
            .flat_map(|w| {
                chains.iter().map(move |c| PreCondition {
                    w: w.clone(),
                    models: c.clone(),
                })
            })
            .collect();
        let sol = self.solve_space(&members)?;
        log::debug!(
            "level {lam}: {} pre-conditions, {} winning",
            members.len(),
            sol.win.iter().filter(|&&w| w).count()
        );
        let index = members
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, p)| (p, i))
            .collect();
        self.levels.insert(
            lam,
            LevelPoset {
                level: lam,
                members,
                winning: sol.win,
                index,
            },
        );
        Ok(&self.levels[&lam])
    }

    /// Computes every level in ascending order.
    pub fn compute_all(&mut self) -> Result<(), SideError> {
        for lam in self.universe.all_levels() {
            self.compute_level(lam)?;
        }
        Ok(())
    }

    /// Decides the extended game from `p` at `lam`. Lower levels carrying
    /// tokens of `p` must be computed; `lam` itself need not be.
    pub fn solve_extended(
        &mut self,
        p: &PreCondition,
        lam: Level,
        mode: SolveMode,
    ) -> Result<ExtendedVerdict, SideError> {
        self.check_level(lam)?;
        let hintikka = match game::solve(self.arena, &p.w, self.budget) {
            Verdict::Consistent(c) => c,
            Verdict::Inconsistent(t) => {
                return Ok(ExtendedVerdict::Inconsistent(ExtendedRefutation::Formula(
                    t,
                )))
            }
            Verdict::Unknown { budget } => return Ok(ExtendedVerdict::Unknown { budget }),
        };
        if mode == SolveMode::Auto && p.models.is_empty() {
            // Player II never has to add a token, and I can only challenge
            // tokens already present.
            if !self.rooted(&p.w) {
                return Err(SideError::Invalid(
                    "start is not a pre-condition at this level".into(),
                ));
            }
            return Ok(ExtendedVerdict::Consistent(ExtendedCert {
                hintikka,
                region: vec![p.clone()],
                answers: BTreeMap::new(),
            }));
        }
        if !self.validate_pre(p, lam)? {
            return Err(SideError::Invalid(
                "start is not a pre-condition at this level".into(),
            ));
        }
        let space: Vec<PreCondition> = match self.levels.get(&lam) {
            Some(poset) => poset
                .members
                .iter()
                .filter(|t| self.universe.leq_pre(t, p))
                .cloned()
                .collect(),
            None => {
                let chains = self.token_chains(lam)?;
                let conds = self.formula_conditions()?.to_vec();
                let mut v = Vec::new();
                for w in conds.iter().filter(|w| p.w.is_subset(w)) {
                    for c in &chains {
                        let t = PreCondition {
                            w: w.clone(),
                            models: c.clone(),
                        };
                        if self.universe.leq_pre(&t, p) {
                            v.push(t);
                        }
                    }
                }
                v
            }
        };
        let start = space
            .iter()
            .position(|t| t == p)
            .expect("p is below itself");
        let sol = self.solve_space(&space)?;
        if sol.win[start] {
            // Keep only what is reachable from the start under the answers.
            let mut keep = vec![false; space.len()];
            let mut stack = vec![start];
            keep[start] = true;
            while let Some(i) = stack.pop() {
                for (_, (j, _)) in sol
                    .answers
                    .range((i, Challenge::Or(FormulaId(0)))..)
                    .take_while(|((k, _), _)| *k == i)
                {
                    if !std::mem::replace(&mut keep[*j], true) {
                        stack.push(*j);
                    }
                }
            }
            let renumber: HashMap<usize, usize> = (0..space.len())
                .filter(|&i| keep[i])
                .enumerate()
                .map(|(new, old)| (old, new))
                .collect();
            let mut region = vec![PreCondition::bare(FormulaSet::new()); renumber.len()];
            for (&old, &new) in &renumber {
                region[new] = space[old].clone();
            }
            let answers = sol
                .answers
                .into_iter()
                .filter(|((i, _), _)| keep[*i])
                .map(|((i, c), (j, q))| ((renumber[&i], c), (renumber[&j], q)))
                .collect();
            Ok(ExtendedVerdict::Consistent(ExtendedCert {
                hintikka,
                region,
                answers,
            }))
        } else {
            let mut stages: Vec<(PreCondition, usize, Challenge)> = space
                .iter()
                .zip(&sol.stage)
                .filter_map(|(t, s)| s.map(|(k, c)| (t.clone(), k, c)))
                .collect();
            stages.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
            Ok(ExtendedVerdict::Inconsistent(ExtendedRefutation::Stages(
                stages,
            )))
        }
    }

    /// Contains the root and lies inside its closure.
    fn rooted(&self, w: &FormulaSet) -> bool {
        let closure: FormulaSet = self
            .arena
            .closure(&[self.universe.phi])
            .into_iter()
            .collect();
        w.contains(self.universe.phi) && w.is_subset(&closure)
    }

    fn answer_ok(
        &mut self,
        s: &PreCondition,
        c: Challenge,
        t: &PreCondition,
        q: Option<&PreCondition>,
    ) -> Result<bool, SideError> {
        if !self.universe.leq_pre(t, s) {
            return Ok(false);
        }
        Ok(match c {
            Challenge::Or(f) => self
                .arena
                .node(f)
                .children()
                .iter()
                .any(|&k| t.w.contains(k)),
            Challenge::And(f, i) => t.w.contains(self.arena.node(f).children()[i]),
            Challenge::Dense(m, d) => {
                let Some(q) = q else { return Ok(false) };
                let safe = self.safe_members(m, d)?.unwrap_or_default();
                safe.contains(q) && self.universe.leq_pre(t, q)
            }
        })
    }

    /// Checks a certificate for the extended game from `p` at `lam`.
    pub fn check_extended(
        &mut self,
        p: &PreCondition,
        lam: Level,
        v: &ExtendedVerdict,
    ) -> Result<bool, SideError> {
        match v {
            ExtendedVerdict::Unknown { .. } => Ok(false),
            ExtendedVerdict::Inconsistent(ExtendedRefutation::Formula(t)) => {
                Ok(game::check_refutation(self.arena, t, &p.w))
            }
            ExtendedVerdict::Consistent(cert) => {
                if !game::check_hintikka(self.arena, &cert.hintikka.set, &p.w)
                    || cert.region.first() != Some(p)
                {
                    return Ok(false);
                }
                if p.models.is_empty() && cert.region.len() == 1 && cert.answers.is_empty() {
                    // II answers from the Hintikka set and never adds tokens.
                    return Ok(self.rooted(&p.w));
                }
                for (i, s) in cert.region.iter().enumerate() {
                    if !self.validate_pre(s, lam)? {
                        return Ok(false);
                    }
                    for c in self.challenges(s)? {
                        let Some((j, q)) = cert.answers.get(&(i, c)) else {
                            return Ok(false);
                        };
                        let Some(t) = cert.region.get(*j) else {
                            return Ok(false);
                        };
                        if !self.answer_ok(s, c, t, q.as_ref())? {
                            return Ok(false);
                        }
                    }
                }
                Ok(true)
            }
            ExtendedVerdict::Inconsistent(ExtendedRefutation::Stages(stages)) => {
                let stage_of: HashMap<&PreCondition, usize> =
                    stages.iter().map(|(t, k, _)| (t, *k)).collect();
                if !stage_of.contains_key(p) {
                    return Ok(false);
                }
                let chains = self.token_chains(lam)?;
                let conds = self.formula_conditions()?.to_vec();
                for (s, k, c) in stages {
                    if !self.universe.leq_pre(s, p)
                        || !self.validate_pre(s, lam)?
                        || !self.challenges(s)?.contains(c)
                    {
                        return Ok(false);
                    }
                    // Every legal answer must die strictly earlier.
                    for w in conds.iter().filter(|w| s.w.is_subset(w)) {
                        for ch in &chains {
                            let t = PreCondition {
                                w: w.clone(),
                                models: ch.clone(),
                            };
                            if !self.universe.leq_pre(&t, s) {
                                continue;
                            }
                            let legal = match *c {
                                Challenge::Dense(m, d) => self
                                    .safe_members(m, d)?
                                    .unwrap_or_default()
                                    .iter()
                                    .any(|q| self.universe.leq_pre(&t, q)),
                                _ => self.answer_ok(s, *c, &t, None)?,
                            };
                            if legal && stage_of.get(&t).is_none_or(|&kt| kt >= *k) {
                                return Ok(false);
                            }
                        }
                    }
                }
                Ok(true)
            }
        }
    }

    /// Coherence between levels, upward closure inside each level, and the
    /// hull gate over the top space. Every level must be computed.
    pub fn check_coherence(&self) -> Result<CoherenceReport, SideError> {
        let levels = self.universe.all_levels();
        for &l in &levels {
            if !self.levels.contains_key(&l) {
                return Err(SideError::LowerLevelMissing(l));
            }
        }
        let u = self.universe;
        let mut violations = Vec::new();
        for (a, &upper) in levels.iter().enumerate() {
            let up = &self.levels[&upper];
            for &lower in &levels[..a] {
                let lo = &self.levels[&lower];
                for (i, pre) in up.members.iter().enumerate() {
                    if lo.contains_pre(pre) && up.winning[i] != lo.wins(pre) {
                        violations.push(Violation::Coherence {
                            upper,
                            lower,
                            pre: pre.clone(),
                            in_upper: up.winning[i],
                        });
                    }
                }
            }
            for p in up.winners() {
                for (j, q) in up.members.iter().enumerate() {
                    if !up.winning[j] && u.leq_pre(p, q) {
                        violations.push(Violation::UpwardClosure {
                            level: upper,
                            p: p.clone(),
                            q: q.clone(),
                        });
                    }
                }
            }
        }
        for q in &self.levels[&Level::Top].members {
            for m in 0..u.tokens.len() {
                let value = u.hull_delta(m, q);
                if value < u.tokens[m].delta {
                    violations.push(Violation::HullGate {
                        token: m,
                        q: q.clone(),
                        value,
                    });
                }
            }
        }
        violations.sort();
        Ok(CoherenceReport { violations })
    }

    /// A token is good if for every winning top-level condition it knows,
    /// some stronger winning condition holds its projection to a level above
    /// every level it knows.
    pub fn is_good(&self, m: usize) -> Result<bool, SideError> {
        let top = self
            .levels
            .get(&Level::Top)
            .ok_or(SideError::LowerLevelMissing(Level::Top))?;
        let u = self.universe;
        for &c in &u.known_conditions[m] {
            let p = &u.conditions[c].1;
            if !top.wins(p) {
                continue;
            }
            let found = u
                .levels
                .iter()
                .filter(|&&lam| u.known_levels[m].iter().all(|&k| k < lam))
                .filter_map(|&lam| u.project(m, lam))
                .any(|n| {
                    top.winners()
                        .any(|q| q.models.contains(&n) && u.leq_pre(q, p))
                });
            if !found {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Renders a pre-condition as `{formulas | tokens}`.
pub fn display_pre(arena: &Arena, u: &Universe, p: &PreCondition) -> String {
    let ms: Vec<&str> = p.models.iter().map(|&m| u.tokens[m].id.as_str()).collect();
    format!("{{{} | {}}}", p.w.printed(arena).join(", "), ms.join(", "))
}
