//! The consistency game on a set of NNF formulas.
//!
//! Player I challenges a disjunction (II must add one disjunct) or a
//! conjunction together with an index (II must add that conjunct). II wins
//! every infinite play whose union stays clash-free. On finite closures II
//! wins exactly when a Hintikka set containing `w` exists inside the closure,
//! and I wins exactly when a finite refutation tree exists.

use std::collections::HashMap;
use std::rc::Rc;

use thiserror::Error;

use crate::formula::{Arena, FormulaId, FormulaSet, Node};

/// Default node budget for [`solve`].
pub const DEFAULT_BUDGET: usize = 2_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Position {
    pub w: FormulaSet,
    /// Number of rounds played to reach this position.
    pub round: usize,
}

impl Position {
    pub fn start(w: FormulaSet) -> Self {
        Position { w, round: 0 }
    }

    pub fn has_clash(&self, arena: &Arena) -> bool {
        self.w.has_clash(arena)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Move {
    ChallengeOr(FormulaId),
    ChallengeAnd(FormulaId, usize),
    Pass,
}

impl Move {
    /// The formula II is obliged to add for the given answer, where `choice`
    /// picks the disjunct for an `Or` challenge.
    pub fn mandated(&self, arena: &Arena, choice: usize) -> Option<FormulaId> {
        match *self {
            Move::ChallengeOr(f) => match arena.node(f) {
                Node::Or(cs) => cs.get(choice).copied(),
                _ => None,
            },
            Move::ChallengeAnd(f, i) => match arena.node(f) {
                Node::And(cs) => cs.get(i).copied(),
                _ => None,
            },
            Move::Pass => None,
        }
    }

    /// True iff the move is legal at `pos` (Pass is legal only when nothing
    /// can be challenged).
    pub fn is_legal(&self, arena: &Arena, pos: &Position) -> bool {
        match *self {
            Move::ChallengeOr(f) => pos.w.contains(f) && matches!(arena.node(f), Node::Or(_)),
            Move::ChallengeAnd(f, i) => {
                pos.w.contains(f) && matches!(arena.node(f), Node::And(cs) if i < cs.len())
            }
            Move::Pass => legal_moves(arena, pos) == [Move::Pass],
        }
    }
}

/// Positional winning strategy for Player II: a Hintikka set over `w`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HintikkaCert {
    pub set: FormulaSet,
}

/// Winning strategy for Player I: a finite tree of challenges whose every
/// leaf position contains a clash.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefutationTree {
    pub root: RefutationNode,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefutationNode {
    pub position: Position,
    /// `None` at leaves.
    pub mv: Option<Move>,
    pub children: Vec<RefutationNode>,
}

impl RefutationTree {
    pub fn size(&self) -> usize {
        fn go(n: &RefutationNode) -> usize {
            1 + n.children.iter().map(go).sum::<usize>()
        }
        go(&self.root)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Consistent(HintikkaCert),
    Inconsistent(RefutationTree),
    /// The closure or the search outgrew the node budget.
    Unknown {
        budget: usize,
    },
}

impl Verdict {
    pub fn is_consistent(&self) -> bool {
        matches!(self, Verdict::Consistent(_))
    }

    pub fn is_inconsistent(&self) -> bool {
        matches!(self, Verdict::Inconsistent(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Consistent(_) => "consistent",
            Verdict::Inconsistent(_) => "inconsistent",
            Verdict::Unknown { .. } => "unknown",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GameError {
    #[error("move {0:?} is not legal in the current position")]
    IllegalMove(Move),
    #[error("certificate is not a Hintikka set over the current position")]
    InvalidCertificate,
}

/// All challenges available to Player I, or `[Pass]` if there are none.
pub fn legal_moves(arena: &Arena, pos: &Position) -> Vec<Move> {
    let mut out = Vec::new();
    for f in pos.w.iter() {
        match arena.node(f) {
            Node::Or(_) => out.push(Move::ChallengeOr(f)),
            Node::And(cs) => out.extend((0..cs.len()).map(|i| Move::ChallengeAnd(f, i))),
            _ => {}
        }
    }
    if out.is_empty() {
        out.push(Move::Pass);
    }
    out
}

/// Player II's certified answer: conjuncts as demanded, the least-index
/// disjunct that lies in the certificate.
pub fn respond(
    arena: &Arena,
    pos: &Position,
    mv: Move,
    cert: &HintikkaCert,
) -> Result<Position, GameError> {
    if !mv.is_legal(arena, pos) {
        return Err(GameError::IllegalMove(mv));
    }
    if !pos.w.is_subset(&cert.set) {
        return Err(GameError::InvalidCertificate);
    }
    let added = match mv {
        Move::Pass => None,
        Move::ChallengeAnd(..) => mv.mandated(arena, 0),
        Move::ChallengeOr(f) => Some(
            arena
                .node(f)
                .children()
                .iter()
                .copied()
                .find(|&d| cert.set.contains(d))
                .ok_or(GameError::InvalidCertificate)?,
        ),
    };
    let mut w = pos.w.clone();
    if let Some(f) = added {
        w.insert(f);
    }
    Ok(Position {
        w,
        round: pos.round + 1,
    })
}

/// Checks that `h` is a Hintikka set over `w`: it contains `w`, lies inside
/// the closure of `w`, has no clash, holds every conjunct of its conjunctions
/// and some disjunct of each of its disjunctions.
pub fn check_hintikka(arena: &Arena, h: &FormulaSet, w: &FormulaSet) -> bool {
    if !w.is_subset(h) || h.has_clash(arena) {
        return false;
    }
    let closure: FormulaSet = arena.closure(w).into_iter().collect();
    if !h.is_subset(&closure) {
        return false;
    }
    h.iter().all(|f| match arena.node(f) {
        Node::Letter(_) | Node::NegLetter(_) => true,
        Node::Neg(_) => false,
        Node::And(cs) => cs.iter().all(|&c| h.contains(c)),
        Node::Or(cs) => cs.iter().any(|&c| h.contains(c)),
    })
}

/// Checks a refutation tree against `w`: the root is `(w, 0)`, every edge
/// adds exactly the formula its challenge mandates, `Or` nodes branch on
/// every disjunct, `And` nodes have one child, and every leaf clashes.
pub fn check_refutation(arena: &Arena, t: &RefutationTree, w: &FormulaSet) -> bool {
    t.root.position.w == *w && t.root.position.round == 0 && check_node(arena, &t.root)
}

fn check_node(arena: &Arena, n: &RefutationNode) -> bool {
    let pos = &n.position;
    let Some(mv) = n.mv else {
        return n.children.is_empty() && pos.has_clash(arena);
    };
    let arity = match mv {
        Move::ChallengeOr(f) if pos.w.contains(f) => match arena.node(f) {
            Node::Or(cs) => cs.len(),
            _ => return false,
        },
        Move::ChallengeAnd(f, i) if pos.w.contains(f) => match arena.node(f) {
            Node::And(cs) if i < cs.len() => 1,
            _ => return false,
        },
        _ => return false,
    };
    if n.children.len() != arity {
        return false;
    }
    n.children.iter().enumerate().all(|(k, child)| {
        let Some(added) = mv.mandated(arena, k) else {
            return false;
        };
        child.position.round == pos.round + 1
            && child.position.w == pos.w.with(added)
            && check_node(arena, child)
    })
}

/// Decides the game on `w` exactly when the closure and the search fit in
/// `budget` nodes; otherwise returns [`Verdict::Unknown`]. Inputs with `Neg`
/// nodes are rejected as `Unknown` with budget 0; normalize first.
pub fn solve(arena: &Arena, w: &FormulaSet, budget: usize) -> Verdict {
    if w.iter().any(|f| !arena.is_nnf(f)) {
        return Verdict::Unknown { budget: 0 };
    }
    let closure = arena.closure_bounded(w, budget);
    if !closure.complete {
        return Verdict::Unknown { budget };
    }
    if closure.members.len() > 4096 {
        // Deep searches recurse once per disjunction choice.
        std::thread::scope(|s| {
            std::thread::Builder::new()
                .stack_size(1 << 29)
                .spawn_scoped(s, || run_search(arena, w, &closure.members, budget))
                .expect("spawn solver thread")
                .join()
                .expect("solver thread panicked")
        })
    } else {
        run_search(arena, w, &closure.members, budget)
    }
}

fn run_search(arena: &Arena, w: &FormulaSet, closure: &[FormulaId], budget: usize) -> Verdict {
    let mut s = Search::new(arena, closure, budget);
    for f in w.iter() {
        let i = s.index[&f];
        s.add(i);
    }
    match s.search() {
        Ok(h) => Verdict::Consistent(HintikkaCert {
            set: h.into_iter().map(|i| s.ids[i as usize]).collect(),
        }),
        Err(Fail::Budget) => Verdict::Unknown { budget },
        Err(Fail::Refuted(t)) => Verdict::Inconsistent(RefutationTree {
            root: materialize(arena, &t, Position::start(w.clone())),
        }),
    }
}

fn materialize(arena: &Arena, t: &MoveTree, position: Position) -> RefutationNode {
    let children = match t.mv {
        None => Vec::new(),
        Some(mv) => t
            .children
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let added = mv
                    .mandated(arena, k)
                    .expect("search emits well-formed moves");
                materialize(
                    arena,
                    c,
                    Position {
                        w: position.w.with(added),
                        round: position.round + 1,
                    },
                )
            })
            .collect(),
    };
    RefutationNode {
        position,
        mv: t.mv,
        children,
    }
}

/// A refutation found by the search, with the closure indices it needs in
/// its root position.
#[derive(Debug)]
struct MoveTree {
    mv: Option<Move>,
    children: Vec<Rc<MoveTree>>,
    needs: Vec<u32>,
}

enum Fail {
    Budget,
    Refuted(Rc<MoveTree>),
}

/// Prefixes the conjunction challenges `chain` (move, conjunction, added
/// conjunct). Challenges whose conjunct the refutation never uses are dropped.
fn wrap(chain: Vec<(Move, u32, u32)>, inner: Rc<MoveTree>) -> Rc<MoveTree> {
    chain.into_iter().rev().fold(inner, |acc, (mv, f, c)| {
        if acc.needs.binary_search(&c).is_err() {
            return acc;
        }
        let mut needs: Vec<u32> = acc.needs.iter().copied().filter(|&x| x != c).collect();
        if let Err(at) = needs.binary_search(&f) {
            needs.insert(at, f);
        }
        Rc::new(MoveTree {
            mv: Some(mv),
            children: vec![acc],
            needs,
        })
    })
}

#[derive(Clone, Debug)]
enum Kind {
    Lit { letter: u32, positive: bool },
    And(Vec<u32>),
    Or(Vec<u32>),
}

/// Tableau search over the closure, with an undo trail.
struct Search {
    ids: Vec<FormulaId>,
    index: HashMap<FormulaId, u32>,
    kinds: Vec<Kind>,
    member: Vec<bool>,
    pos_count: Vec<u32>,
    neg_count: Vec<u32>,
    clashes: u32,
    trail: Vec<u32>,
    /// Every conjunction on the trail before this point has all its conjuncts.
    and_cursor: usize,
    steps: usize,
    budget: usize,
    failed: HashMap<Vec<u64>, Rc<MoveTree>>,
    /// Closure indices of the positive and negative literal of each letter.
    lit_ids: Vec<[u32; 2]>,
}

impl Search {
    fn new(arena: &Arena, closure: &[FormulaId], budget: usize) -> Self {
        let index: HashMap<FormulaId, u32> = closure
            .iter()
            .enumerate()
            .map(|(i, &f)| (f, i as u32))
            .collect();
        let mut letters = HashMap::new();
        let kinds: Vec<Kind> = closure
            .iter()
            .map(|&f| match arena.node(f) {
                Node::Letter(k) | Node::NegLetter(k) => {
                    let n = letters.len() as u32;
                    Kind::Lit {
                        letter: *letters.entry(*k).or_insert(n),
                        positive: matches!(arena.node(f), Node::Letter(_)),
                    }
                }
                Node::And(cs) => Kind::And(cs.iter().map(|c| index[c]).collect()),
                Node::Or(cs) => Kind::Or(cs.iter().map(|c| index[c]).collect()),
                Node::Neg(_) => unreachable!("solve rejects non-NNF input"),
            })
            .collect();
        let nl = letters.len();
        let mut lit_ids = vec![[u32::MAX; 2]; nl];
        for (i, k) in kinds.iter().enumerate() {
            if let &Kind::Lit { letter, positive } = k {
                lit_ids[letter as usize][usize::from(!positive)] = i as u32;
            }
        }
        Search {
            ids: closure.to_vec(),
            index,
            kinds,
            member: vec![false; closure.len()],
            pos_count: vec![0; nl],
            neg_count: vec![0; nl],
            clashes: 0,
            trail: Vec::new(),
            and_cursor: 0,
            steps: 0,
            budget,
            failed: HashMap::new(),
            lit_ids,
        }
    }

    fn clash_pair(&self) -> Vec<u32> {
        for &i in &self.trail {
            if let Kind::Lit { letter, .. } = self.kinds[i as usize] {
                let l = letter as usize;
                if self.pos_count[l] > 0 && self.neg_count[l] > 0 {
                    let mut v = self.lit_ids[l].to_vec();
                    v.sort_unstable();
                    return v;
                }
            }
        }
        unreachable!("clash counter out of sync")
    }

    fn add(&mut self, i: u32) {
        if self.member[i as usize] {
            return;
        }
        self.member[i as usize] = true;
        self.trail.push(i);
        if let Kind::Lit { letter, positive } = self.kinds[i as usize] {
            let l = letter as usize;
            let (same, other) = if positive {
                (&mut self.pos_count, &self.neg_count)
            } else {
                (&mut self.neg_count, &self.pos_count)
            };
            same[l] += 1;
            if same[l] == 1 && other[l] > 0 {
                self.clashes += 1;
            }
        }
    }

    fn undo_to(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let i = self.trail.pop().unwrap();
            self.member[i as usize] = false;
            if let Kind::Lit { letter, positive } = self.kinds[i as usize] {
                let l = letter as usize;
                let (same, other) = if positive {
                    (&mut self.pos_count, &self.neg_count)
                } else {
                    (&mut self.neg_count, &self.pos_count)
                };
                same[l] -= 1;
                if same[l] == 0 && other[l] > 0 {
                    self.clashes -= 1;
                }
            }
        }
    }

    fn tick(&mut self) -> Result<(), Fail> {
        self.steps += 1;
        if self.steps > self.budget {
            Err(Fail::Budget)
        } else {
            Ok(())
        }
    }

    fn next_and(&mut self) -> Option<(u32, usize, u32)> {
        while self.and_cursor < self.trail.len() {
            let f = self.trail[self.and_cursor];
            if let Kind::And(cs) = &self.kinds[f as usize] {
                if let Some(k) = cs.iter().position(|&c| !self.member[c as usize]) {
                    return Some((f, k, cs[k]));
                }
            }
            self.and_cursor += 1;
        }
        None
    }

    fn refuted_now(&self, d: u32) -> bool {
        let lit_blocked = |i: u32| match self.kinds[i as usize] {
            Kind::Lit { letter, positive } => {
                let other = if positive {
                    &self.neg_count
                } else {
                    &self.pos_count
                };
                other[letter as usize] > 0
            }
            _ => false,
        };
        match &self.kinds[d as usize] {
            Kind::Lit { .. } => lit_blocked(d),
            Kind::And(cs) => cs.iter().any(|&c| lit_blocked(c)),
            Kind::Or(cs) => cs.iter().all(|&c| lit_blocked(c)),
        }
    }

    /// Unsatisfied disjunction with the fewest viable disjuncts.
    fn pick_or(&self) -> Option<u32> {
        let mut best: Option<(usize, u32)> = None;
        for &f in &self.trail {
            if let Kind::Or(cs) = &self.kinds[f as usize] {
                if cs.iter().any(|&c| self.member[c as usize]) {
                    continue;
                }
                let viable = cs.iter().filter(|&&c| !self.refuted_now(c)).count();
                if best.is_none_or(|(v, _)| viable < v) {
                    best = Some((viable, f));
                    if viable == 0 {
                        break;
                    }
                }
            }
        }
        best.map(|(_, f)| f)
    }

    fn key(&self) -> Vec<u64> {
        let mut k = vec![0u64; self.member.len().div_ceil(64)];
        for &i in &self.trail {
            k[i as usize / 64] |= 1 << (i % 64);
        }
        k
    }

    fn search(&mut self) -> Result<Vec<u32>, Fail> {
        let mark = self.trail.len();
        let cursor = self.and_cursor;
        let result = self.search_inner();
        self.undo_to(mark);
        self.and_cursor = cursor;
        result
    }

    fn search_inner(&mut self) -> Result<Vec<u32>, Fail> {
        let mut chain = Vec::new();
        loop {
            self.tick()?;
            if self.clashes > 0 {
                let leaf = Rc::new(MoveTree {
                    mv: None,
                    children: Vec::new(),
                    needs: self.clash_pair(),
                });
                return Err(Fail::Refuted(wrap(chain, leaf)));
            }
            match self.next_and() {
                Some((f, k, c)) => {
                    chain.push((Move::ChallengeAnd(self.ids[f as usize], k), f, c));
                    self.add(c);
                }
                None => break,
            }
        }
        let Some(f) = self.pick_or() else {
            let mut h = self.trail.clone();
            h.sort_unstable();
            return Ok(h);
        };
        let key = self.key();
        if let Some(t) = self.failed.get(&key) {
            return Err(Fail::Refuted(wrap(chain, t.clone())));
        }
        let Kind::Or(ds) = self.kinds[f as usize].clone() else {
            unreachable!()
        };
        let mut children = Vec::with_capacity(ds.len());
        let mut needs = vec![f];
        let mut skipped = None;
        for d in ds {
            let mark = self.trail.len();
            let cursor = self.and_cursor;
            self.add(d);
            let r = self.search();
            self.undo_to(mark);
            self.and_cursor = cursor;
            match r {
                Ok(h) => return Ok(h),
                Err(Fail::Budget) => return Err(Fail::Budget),
                Err(Fail::Refuted(t)) => {
                    if t.needs.binary_search(&d).is_err() {
                        // The disjunct played no part: this refutation
                        // already works one level up.
                        skipped = Some(t);
                        break;
                    }
                    needs.extend(t.needs.iter().copied().filter(|&x| x != d));
                    children.push(t);
                }
            }
        }
        let node = match skipped {
            Some(t) => t,
            None => {
                needs.sort_unstable();
                needs.dedup();
                Rc::new(MoveTree {
                    mv: Some(Move::ChallengeOr(self.ids[f as usize])),
                    children,
                    needs,
                })
            }
        };
        self.failed.insert(key, node.clone());
        Err(Fail::Refuted(wrap(chain, node)))
    }
}

/// A valuation read off a Hintikka set: a letter is true iff it occurs
/// positively in the set.
pub fn hintikka_valuation(
    arena: &Arena,
    cert: &HintikkaCert,
) -> std::collections::BTreeSet<crate::formula::LetterKey> {
    cert.set
        .iter()
        .filter_map(|f| match arena.node(f) {
            Node::Letter(k) => Some(*k),
            _ => None,
        })
        .collect()
}
