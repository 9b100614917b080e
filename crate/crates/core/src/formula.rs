//! Interned infinitary propositional formulas.
//!
//! Every formula lives in an [`Arena`]. Structurally equal nodes are stored
//! once, so [`FormulaId`] equality is syntactic equality. Children are always
//! interned before their parents, which makes ids strictly increase from child
//! to parent and keeps the subformula graph acyclic by construction.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

/// A propositional letter: a symbol name with a (possibly empty) tuple of
/// natural-number indices, e.g. `E(0,1,2)` or `p`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LetterId {
    pub name: String,
    pub args: Vec<u32>,
}

impl LetterId {
    pub fn new(name: impl Into<String>, args: impl Into<Vec<u32>>) -> Self {
        LetterId {
            name: name.into(),
            args: args.into(),
        }
    }

    pub fn bare(name: impl Into<String>) -> Self {
        LetterId::new(name, Vec::new())
    }
}

impl fmt::Display for LetterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for LetterId {
    type Err = String;

    /// Parses `name` or `name(i,j,...)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            None => (s, Vec::new()),
            Some(open) => {
                let inner = s[open + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| format!("unterminated letter {s:?}"))?;
                let args = inner
                    .split(',')
                    .map(|a| a.trim().parse::<u32>().map_err(|e| format!("{s:?}: {e}")))
                    .collect::<Result<Vec<_>, _>>()?;
                (&s[..open], args)
            }
        };
        let ok = name
            .chars()
            .next()
            .is_some_and(|c| c.is_alphabetic() || c == '_')
            && name.chars().all(|c| c.is_alphanumeric() || c == '_');
        if !ok {
            return Err(format!("bad letter name in {s:?}"));
        }
        Ok(LetterId::new(name, args))
    }
}

/// Interned handle of a [`LetterId`] inside an [`Arena`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LetterKey(pub(crate) u32);

impl LetterKey {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Interned handle of a formula node inside an [`Arena`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FormulaId(pub(crate) u32);

impl FormulaId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Letter(LetterKey),
    NegLetter(LetterKey),
    /// Negation of a compound formula. Never produced by [`Arena::nnf`].
    Neg(FormulaId),
    And(Box<[FormulaId]>),
    Or(Box<[FormulaId]>),
}

impl Node {
    /// Immediate subformulas in family order.
    pub fn children(&self) -> &[FormulaId] {
        match self {
            Node::Letter(_) | Node::NegLetter(_) => &[],
            Node::Neg(c) => std::slice::from_ref(c),
            Node::And(cs) | Node::Or(cs) => cs,
        }
    }

    pub fn is_literal(&self) -> bool {
        matches!(self, Node::Letter(_) | Node::NegLetter(_))
    }
}

/// Intern table for letters and formulas.
///
/// Building formulas needs `&mut Arena`; every query takes `&Arena`, so a
/// finished arena can be shared freely between threads.
#[derive(Default, Debug, Clone)]
pub struct Arena {
    letters: Vec<LetterId>,
    letter_index: HashMap<LetterId, LetterKey>,
    nodes: Vec<Node>,
    node_index: HashMap<Node, FormulaId>,
    ranks: Vec<u32>,
    nnf_flags: Vec<bool>,
    nnf_memo: HashMap<FormulaId, FormulaId>,
}

impl Arena {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn intern_letter(&mut self, letter: LetterId) -> LetterKey {
        if let Some(&k) = self.letter_index.get(&letter) {
            return k;
        }
        let k = LetterKey(self.letters.len() as u32);
        self.letters.push(letter.clone());
        self.letter_index.insert(letter, k);
        k
    }

    /// Looks a letter up without interning it.
    pub fn find_letter(&self, letter: &LetterId) -> Option<LetterKey> {
        self.letter_index.get(letter).copied()
    }

    pub fn letter(&self, key: LetterKey) -> &LetterId {
        &self.letters[key.index()]
    }

    pub fn node(&self, id: FormulaId) -> &Node {
        &self.nodes[id.index()]
    }

    /// The id of `node` if it has already been interned.
    pub fn find_node(&self, node: &Node) -> Option<FormulaId> {
        self.node_index.get(node).copied()
    }

    fn intern(&mut self, node: Node) -> FormulaId {
        if let Some(&id) = self.node_index.get(&node) {
            return id;
        }
        let children = node.children();
        let rank = if node.is_literal() {
            0
        } else {
            1 + children
                .iter()
                .map(|c| self.ranks[c.index()])
                .max()
                .unwrap_or(0)
        };
        let nnf = match &node {
            Node::Neg(_) => false,
            _ => children.iter().all(|c| self.nnf_flags[c.index()]),
        };
        let id = FormulaId(self.nodes.len() as u32);
        self.nodes.push(node.clone());
        self.ranks.push(rank);
        self.nnf_flags.push(nnf);
        self.node_index.insert(node, id);
        id
    }

    pub fn letter_formula(&mut self, letter: LetterId) -> FormulaId {
        let k = self.intern_letter(letter);
        self.intern(Node::Letter(k))
    }

    pub fn neg_letter_formula(&mut self, letter: LetterId) -> FormulaId {
        let k = self.intern_letter(letter);
        self.intern(Node::NegLetter(k))
    }

    pub fn lit(&mut self, key: LetterKey, positive: bool) -> FormulaId {
        if positive {
            self.intern(Node::Letter(key))
        } else {
            self.intern(Node::NegLetter(key))
        }
    }

    /// Surface negation. A negated letter becomes a `NegLetter` literal; any
    /// other operand is wrapped in a `Neg` node (use [`Arena::nnf`] to push it in).
    pub fn neg(&mut self, f: FormulaId) -> FormulaId {
        match *self.node(f) {
            Node::Letter(k) => self.intern(Node::NegLetter(k)),
            _ => self.intern(Node::Neg(f)),
        }
    }

    pub fn and(&mut self, children: impl Into<Vec<FormulaId>>) -> FormulaId {
        self.intern(Node::And(children.into().into_boxed_slice()))
    }

    pub fn or(&mut self, children: impl Into<Vec<FormulaId>>) -> FormulaId {
        self.intern(Node::Or(children.into().into_boxed_slice()))
    }

    /// The empty conjunction.
    pub fn top(&mut self) -> FormulaId {
        self.and(Vec::new())
    }

    /// The empty disjunction.
    pub fn bottom(&mut self) -> FormulaId {
        self.or(Vec::new())
    }

    /// Structural height: literals have rank 0, a connective one more than its
    /// highest child.
    pub fn rank(&self, f: FormulaId) -> u32 {
        self.ranks[f.index()]
    }

    /// True iff `f` contains no `Neg` node.
    pub fn is_nnf(&self, f: FormulaId) -> bool {
        self.nnf_flags[f.index()]
    }

    /// Negation normal form: negations pushed onto letters through families
    /// of any arity.
    pub fn nnf(&mut self, f: FormulaId) -> FormulaId {
        self.nnf_polar(f, true)
    }

    /// NNF of the negation of `f`.
    pub fn complement(&mut self, f: FormulaId) -> FormulaId {
        self.nnf_polar(f, false)
    }

    fn nnf_polar(&mut self, f: FormulaId, positive: bool) -> FormulaId {
        if positive && self.is_nnf(f) {
            return f;
        }
        if positive {
            if let Some(&r) = self.nnf_memo.get(&f) {
                return r;
            }
        }
        let node = self.node(f).clone();
        let out = match (node, positive) {
            (Node::Letter(k), true) => self.intern(Node::Letter(k)),
            (Node::Letter(k), false) => self.intern(Node::NegLetter(k)),
            (Node::NegLetter(k), true) => self.intern(Node::NegLetter(k)),
            (Node::NegLetter(k), false) => self.intern(Node::Letter(k)),
            (Node::Neg(c), pol) => self.nnf_polar(c, !pol),
            (Node::And(cs), pol) => {
                let kids: Vec<_> = cs.iter().map(|&c| self.nnf_polar(c, pol)).collect();
                if pol {
                    self.and(kids)
                } else {
                    self.or(kids)
                }
            }
            (Node::Or(cs), pol) => {
                let kids: Vec<_> = cs.iter().map(|&c| self.nnf_polar(c, pol)).collect();
                if pol {
                    self.or(kids)
                } else {
                    self.and(kids)
                }
            }
        };
        if positive {
            self.nnf_memo.insert(f, out);
        }
        out
    }

    /// Letters occurring in any member of `w`.
    pub fn letters<'a>(&self, w: impl IntoIterator<Item = &'a FormulaId>) -> BTreeSet<LetterKey> {
        let mut seen = vec![false; 0];
        let mut out = BTreeSet::new();
        let mut stack: Vec<FormulaId> = w.into_iter().copied().collect();
        while let Some(f) = stack.pop() {
            if seen.len() <= f.index() {
                seen.resize(f.index() + 1, false);
            }
            if std::mem::replace(&mut seen[f.index()], true) {
                continue;
            }
            match self.node(f) {
                Node::Letter(k) | Node::NegLetter(k) => {
                    out.insert(*k);
                }
                n => stack.extend_from_slice(n.children()),
            }
        }
        out
    }

    /// The subformula closure of `w` with no size limit.
    pub fn closure<'a>(&self, w: impl IntoIterator<Item = &'a FormulaId>) -> Vec<FormulaId> {
        self.closure_bounded(w, usize::MAX).members
    }

    /// The least superset of `w` closed under immediate subformulas, stopping
    /// once `budget` members have been found.
    pub fn closure_bounded<'a>(
        &self,
        w: impl IntoIterator<Item = &'a FormulaId>,
        budget: usize,
    ) -> Closure {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<FormulaId> = VecDeque::new();
        for &f in w {
            if seen.insert(f) {
                queue.push_back(f);
            }
        }
        let mut complete = seen.len() <= budget;
        while complete {
            let Some(f) = queue.pop_front() else { break };
            for &c in self.node(f).children() {
                if seen.insert(c) {
                    if seen.len() > budget {
                        complete = false;
                        break;
                    }
                    queue.push_back(c);
                }
            }
        }
        let mut members: Vec<FormulaId> = seen.into_iter().collect();
        members.truncate(budget);
        Closure { members, complete }
    }

    /// Evaluates `f` under a letter valuation.
    pub fn eval(&self, f: FormulaId, valuation: &dyn Fn(LetterKey) -> bool) -> bool {
        let mut memo = HashMap::new();
        self.eval_memo(f, valuation, &mut memo)
    }

    fn eval_memo(
        &self,
        f: FormulaId,
        valuation: &dyn Fn(LetterKey) -> bool,
        memo: &mut HashMap<FormulaId, bool>,
    ) -> bool {
        if let Some(&v) = memo.get(&f) {
            return v;
        }
        let v = match self.node(f) {
            Node::Letter(k) => valuation(*k),
            Node::NegLetter(k) => !valuation(*k),
            Node::Neg(c) => !self.eval_memo(*c, valuation, memo),
            Node::And(cs) => cs.iter().all(|&c| self.eval_memo(c, valuation, memo)),
            Node::Or(cs) => cs.iter().any(|&c| self.eval_memo(c, valuation, memo)),
        };
        memo.insert(f, v);
        v
    }

    pub fn display(&self, f: FormulaId) -> Display<'_> {
        Display { arena: self, f }
    }

    /// Canonical printed form, parseable by [`Arena::parse`].
    pub fn print(&self, f: FormulaId) -> String {
        self.display(f).to_string()
    }

    fn write(&self, f: FormulaId, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node(f) {
            Node::Letter(k) => write!(out, "{}", self.letter(*k)),
            Node::NegLetter(k) => write!(out, "not {}", self.letter(*k)),
            Node::Neg(c) => {
                out.write_str("not ")?;
                self.write(*c, out)
            }
            Node::And(cs) | Node::Or(cs) => {
                let word = if matches!(self.node(f), Node::And(_)) {
                    "and"
                } else {
                    "or"
                };
                if cs.len() == 2 {
                    out.write_str("(")?;
                    self.write(cs[0], out)?;
                    write!(out, " {word} ")?;
                    self.write(cs[1], out)?;
                    out.write_str(")")
                } else {
                    write!(out, "{word}()(")?;
                    for (i, &c) in cs.iter().enumerate() {
                        if i > 0 {
                            out.write_str(", ")?;
                        }
                        self.write(c, out)?;
                    }
                    out.write_str(")")
                }
            }
        }
    }
}

pub struct Display<'a> {
    arena: &'a Arena,
    f: FormulaId,
}

impl fmt::Display for Display<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.arena.write(self.f, f)
    }
}

/// Result of a bounded closure enumeration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Closure {
    /// Members sorted by id, so subformulas precede the formulas containing them.
    pub members: Vec<FormulaId>,
    /// False if the budget cut the enumeration short.
    pub complete: bool,
}

/// A finite, canonically sorted set of formulas.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FormulaSet(BTreeSet<FormulaId>);

impl FormulaSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn singleton(f: FormulaId) -> Self {
        let mut s = Self::new();
        s.insert(f);
        s
    }

    pub fn insert(&mut self, f: FormulaId) -> bool {
        self.0.insert(f)
    }

    pub fn remove(&mut self, f: FormulaId) -> bool {
        self.0.remove(&f)
    }

    pub fn contains(&self, f: FormulaId) -> bool {
        self.0.contains(&f)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = FormulaId> + '_ {
        self.0.iter().copied()
    }

    pub fn is_subset(&self, other: &FormulaSet) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn union(&self, other: &FormulaSet) -> FormulaSet {
        FormulaSet(self.0.union(&other.0).copied().collect())
    }

    pub fn with(&self, f: FormulaId) -> FormulaSet {
        let mut s = self.clone();
        s.insert(f);
        s
    }

    /// True iff some letter occurs both positively and negatively.
    pub fn has_clash(&self, arena: &Arena) -> bool {
        self.clash(arena).is_some()
    }

    /// A letter occurring both positively and negatively, if any.
    pub fn clash(&self, arena: &Arena) -> Option<LetterKey> {
        let mut pos = BTreeSet::new();
        let mut neg = BTreeSet::new();
        for f in self.iter() {
            match arena.node(f) {
                Node::Letter(k) => {
                    if neg.contains(k) {
                        return Some(*k);
                    }
                    pos.insert(*k);
                }
                Node::NegLetter(k) => {
                    if pos.contains(k) {
                        return Some(*k);
                    }
                    neg.insert(*k);
                }
                _ => {}
            }
        }
        None
    }

    /// Printed members, sorted as strings.
    pub fn printed(&self, arena: &Arena) -> Vec<String> {
        let mut v: Vec<String> = self.iter().map(|f| arena.print(f)).collect();
        v.sort();
        v
    }
}

impl FromIterator<FormulaId> for FormulaSet {
    fn from_iter<I: IntoIterator<Item = FormulaId>>(iter: I) -> Self {
        FormulaSet(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a FormulaSet {
    type Item = &'a FormulaId;
    type IntoIter = std::collections::btree_set::Iter<'a, FormulaId>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(a: &mut Arena, name: &str) -> FormulaId {
        a.letter_formula(LetterId::bare(name))
    }

    #[test]
    fn interning_shares_ids() {
        let mut a = Arena::new();
        let x = p(&mut a, "p");
        let y = p(&mut a, "q");
        let f1 = a.and(vec![x, y]);
        let f2 = a.and(vec![x, y]);
        assert_eq!(f1, f2);
        assert_ne!(f1, a.and(vec![y, x]));
    }

    #[test]
    fn nnf_de_morgan() {
        let mut a = Arena::new();
        let x = p(&mut a, "p");
        let y = p(&mut a, "q");
        let conj = a.and(vec![x, y]);
        let n = a.neg(conj);
        let got = a.nnf(n);
        let nx = a.neg(x);
        let ny = a.neg(y);
        assert_eq!(got, a.or(vec![nx, ny]));
        assert_eq!(a.nnf(x), x);
        assert_eq!(a.nnf(got), got);
    }

    #[test]
    fn nnf_arity_three() {
        let mut a = Arena::new();
        let ps: Vec<_> = (0..3)
            .map(|i| a.letter_formula(LetterId::new("p", [i])))
            .collect();
        let c = a.and(ps.clone());
        let n = a.neg(c);
        let got = a.nnf(n);
        let negs: Vec<_> = ps.iter().map(|&f| a.neg(f)).collect();
        assert_eq!(got, a.or(negs));
    }

    #[test]
    fn double_negation_of_compound() {
        let mut a = Arena::new();
        let x = p(&mut a, "p");
        let y = p(&mut a, "q");
        let d = a.or(vec![x, y]);
        let n1 = a.neg(d);
        let n2 = a.neg(n1);
        assert!(!a.is_nnf(n2));
        assert_eq!(a.nnf(n2), d);
    }

    #[test]
    fn closure_examples() {
        let mut a = Arena::new();
        let x = p(&mut a, "p");
        let y = p(&mut a, "q");
        let c = a.and(vec![x, y]);
        assert_eq!(a.closure(&[c]), vec![x, y, c]);
        assert_eq!(a.closure(&[x]), vec![x]);
        // or over i<2 of and over j<2 of P(i,j): root, 2 conjunctions, 4 letters.
        let mut conj = Vec::new();
        for i in 0..2 {
            let ls: Vec<_> = (0..2)
                .map(|j| a.letter_formula(LetterId::new("P", [i, j])))
                .collect();
            conj.push(a.and(ls));
        }
        let root = a.or(conj);
        assert_eq!(a.closure(&[root]).len(), 7);
        let bounded = a.closure_bounded(&[root], 4);
        assert!(!bounded.complete);
        assert_eq!(bounded.members.len(), 4);
        assert!(a.closure_bounded(&[root], 7).complete);
    }

    #[test]
    fn letters_and_rank() {
        let mut a = Arena::new();
        let x = p(&mut a, "p");
        let y = p(&mut a, "q");
        let d = a.or(vec![x, y]);
        let ls: Vec<_> = a
            .letters(&[d])
            .into_iter()
            .map(|k| a.letter(k).clone())
            .collect();
        assert_eq!(ls, vec![LetterId::bare("p"), LetterId::bare("q")]);
        assert!(a.letters(&[]).is_empty());
        assert_eq!(a.rank(x), 0);
        assert_eq!(a.rank(d), 1);
        let nd = a.neg(d);
        assert_eq!(a.rank(nd), 2);
    }

    #[test]
    fn clash_detection() {
        let mut a = Arena::new();
        let x = p(&mut a, "p");
        let nx = a.neg(x);
        let s: FormulaSet = [x].into_iter().collect();
        assert!(!s.has_clash(&a));
        assert!(s.with(nx).has_clash(&a));
    }
}
