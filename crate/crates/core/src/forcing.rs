//! The poset of finite consistent subformula sets of a formula, ordered by
//! reverse inclusion, and a generic-chain builder over it.
//!
//! A chain that meets the built-in dense sets ("decide every disjunction you
//! hold", "add every conjunct of every conjunction you hold") ends in a
//! condition that is closed like a Hintikka set, so the letters it contains
//! define a model of the root formula. Letters never forced true read as 0.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::formula::{Arena, FormulaId, FormulaSet, LetterId, Node};
use crate::game::{self, HintikkaCert, Verdict};

/// Largest condition space [`Forcing::conditions`] will enumerate.
pub const MAX_ENUMERATION: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ForcingError {
    #[error("formula is not in negation normal form")]
    NotNnf,
    #[error("set is not contained in the closure of the root formula")]
    NotInClosure,
    #[error("set does not contain the root formula")]
    MissingRoot,
    #[error("set is inconsistent")]
    Inconsistent,
    #[error("consistency undecided within the solver budget")]
    Unknown,
    #[error("condition space too large to enumerate ({0} candidate sets)")]
    EnumerationBudget(usize),
    #[error("dense set #{0} has no member below the current condition")]
    NotDense(usize),
    #[error("generic valuation fails the root formula")]
    ModelCheckFailed,
}

/// A member of the poset: a finite consistent set containing the root, with
/// the Hintikka certificate that witnesses its consistency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Condition {
    pub w: FormulaSet,
    pub cert: HintikkaCert,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Comparison {
    /// The left condition is stronger (a proper superset).
    Below,
    Above,
    Equal,
    Incomparable,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DenseSet {
    /// Conditions that either omit the disjunction or hold one of its disjuncts.
    DecideOr(FormulaId),
    /// Conditions that either omit the conjunction or hold the given conjunct.
    AddConjunct(FormulaId, usize),
    /// An explicit list of condition sets.
    Custom(Vec<FormulaSet>),
}

impl DenseSet {
    pub fn contains(&self, arena: &Arena, w: &FormulaSet) -> bool {
        match self {
            DenseSet::DecideOr(f) => {
                !w.contains(*f) || arena.node(*f).children().iter().any(|&d| w.contains(d))
            }
            DenseSet::AddConjunct(f, i) => {
                !w.contains(*f)
                    || arena
                        .node(*f)
                        .children()
                        .get(*i)
                        .is_some_and(|&c| w.contains(c))
            }
            DenseSet::Custom(members) => members.contains(w),
        }
    }

    fn rank_key(&self) -> u8 {
        match self {
            DenseSet::DecideOr(_) => 0,
            DenseSet::AddConjunct(..) => 1,
            DenseSet::Custom(_) => 2,
        }
    }
}

/// Total valuation over a letter universe.
pub type Valuation = BTreeMap<LetterId, bool>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainStep {
    pub pass: usize,
    /// Index into the schedule (built-ins first, then the extra sets).
    pub dense: usize,
    /// True if the chain had to be extended to meet the set.
    pub extended: bool,
    /// Index of the chain condition that lies in the set.
    pub met_at: usize,
}

/// Descending sequence of conditions and the log of which set each step met.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenericChain {
    pub conditions: Vec<Condition>,
    pub log: Vec<ChainStep>,
    pub schedule_len: usize,
}

impl GenericChain {
    pub fn last(&self) -> &Condition {
        self.conditions.last().expect("chains are never empty")
    }

    /// True iff the final pass met every scheduled set without extending.
    pub fn met_all(&self) -> bool {
        let Some(last_pass) = self.log.last().map(|s| s.pass) else {
            return self.schedule_len == 0;
        };
        let final_steps: Vec<_> = self.log.iter().filter(|s| s.pass == last_pass).collect();
        final_steps.len() == self.schedule_len && final_steps.iter().all(|s| !s.extended)
    }
}

/// The poset of a fixed NNF root formula.
pub struct Forcing<'a> {
    arena: &'a Arena,
    root: FormulaId,
    closure: Vec<FormulaId>,
    closure_set: FormulaSet,
    budget: usize,
}

impl<'a> Forcing<'a> {
    pub fn new(arena: &'a Arena, root: FormulaId, budget: usize) -> Result<Self, ForcingError> {
        if !arena.is_nnf(root) {
            return Err(ForcingError::NotNnf);
        }
        let closure = arena.closure(&[root]);
        Ok(Forcing {
            arena,
            root,
            closure_set: closure.iter().copied().collect(),
            closure,
            budget,
        })
    }

    pub fn root(&self) -> FormulaId {
        self.root
    }

    pub fn closure(&self) -> &[FormulaId] {
        &self.closure
    }

    pub fn is_condition(&self, w: &FormulaSet) -> Result<Condition, ForcingError> {
        if !w.contains(self.root) {
            return Err(ForcingError::MissingRoot);
        }
        if !w.is_subset(&self.closure_set) {
            return Err(ForcingError::NotInClosure);
        }
        match game::solve(self.arena, w, self.budget) {
            Verdict::Consistent(cert) => Ok(Condition { w: w.clone(), cert }),
            Verdict::Inconsistent(_) => Err(ForcingError::Inconsistent),
            Verdict::Unknown { .. } => Err(ForcingError::Unknown),
        }
    }

    pub fn compare(&self, p: &Condition, q: &Condition) -> Comparison {
        compare_sets(&p.w, &q.w)
    }

    /// The union as a common extension, if it is consistent.
    pub fn compatible(&self, p: &Condition, q: &Condition) -> Option<Condition> {
        self.is_condition(&p.w.union(&q.w)).ok()
    }

    /// One `DecideOr` per disjunction and one `AddConjunct` per conjunct
    /// position in the closure, ordered by kind and then closure index. When
    /// the condition space is small enough each set is also checked dense by
    /// exhaustive enumeration.
    pub fn builtin_dense_sets(&self) -> Result<Vec<DenseSet>, ForcingError> {
        let mut ors = Vec::new();
        let mut ands = Vec::new();
        for &f in &self.closure {
            match self.arena.node(f) {
                Node::Or(_) => ors.push(DenseSet::DecideOr(f)),
                Node::And(cs) => ands.extend((0..cs.len()).map(|i| DenseSet::AddConjunct(f, i))),
                _ => {}
            }
        }
        ors.extend(ands);
        if self.closure.len() <= 10 {
            let conds = self.conditions()?;
            for d in &ors {
                assert!(
                    dense_in(self.arena, d, &conds),
                    "built-in dense set {d:?} is not dense"
                );
            }
        }
        Ok(ors)
    }

    /// Every condition, in order of the bitmask over the closure.
    pub fn conditions(&self) -> Result<Vec<Condition>, ForcingError> {
        let others: Vec<FormulaId> = self
            .closure
            .iter()
            .copied()
            .filter(|&f| f != self.root)
            .collect();
        if others.len() >= 16 || (1usize << others.len()) > MAX_ENUMERATION {
            return Err(ForcingError::EnumerationBudget(
                1usize << others.len().min(60),
            ));
        }
        let mut out = Vec::new();
        for mask in 0u64..(1u64 << others.len()) {
            let mut w = FormulaSet::singleton(self.root);
            for (i, &f) in others.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    w.insert(f);
                }
            }
            match self.is_condition(&w) {
                Ok(c) => out.push(c),
                Err(ForcingError::Inconsistent) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    /// True iff every condition has an extension inside `d`.
    pub fn is_dense(&self, d: &DenseSet) -> Result<bool, ForcingError> {
        Ok(dense_in(self.arena, d, &self.conditions()?))
    }

    /// Builds a descending chain meeting the built-in dense sets and `extra`
    /// under round-robin scheduling, repeating passes until one pass needs no
    /// extension. `seed` rotates the choice among equally valid extensions;
    /// seed 0 always takes the least-index one.
    pub fn build_generic(
        &self,
        extra: &[DenseSet],
        seed: u64,
    ) -> Result<(GenericChain, Valuation), ForcingError> {
        let start = self.is_condition(&FormulaSet::singleton(self.root))?;
        let mut schedule = self.builtin_dense_sets()?;
        let mut extra_sorted: Vec<DenseSet> = extra.to_vec();
        extra_sorted.sort_by_key(|d| d.rank_key());
        schedule.extend(extra_sorted);

        let mut chain = GenericChain {
            conditions: vec![start],
            log: Vec::new(),
            schedule_len: schedule.len(),
        };
        let mut choice_counter = 0u64;
        for pass in 0.. {
            let mut extended_any = false;
            for (k, d) in schedule.iter().enumerate() {
                let current = chain.last().clone();
                if d.contains(self.arena, &current.w) {
                    chain.log.push(ChainStep {
                        pass,
                        dense: k,
                        extended: false,
                        met_at: chain.conditions.len() - 1,
                    });
                    continue;
                }
                let candidates = self.extensions_into(d, &current)?;
                if candidates.is_empty() {
                    return Err(ForcingError::NotDense(k));
                }
                let pick = if seed == 0 {
                    0
                } else {
                    (seed.wrapping_add(choice_counter) % candidates.len() as u64) as usize
                };
                choice_counter += 1;
                chain
                    .conditions
                    .push(candidates.into_iter().nth(pick).unwrap());
                chain.log.push(ChainStep {
                    pass,
                    dense: k,
                    extended: true,
                    met_at: chain.conditions.len() - 1,
                });
                extended_any = true;
            }
            if !extended_any {
                break;
            }
        }

        let final_w = &chain.last().w;
        let valuation: Valuation = self
            .arena
            .letters(&[self.root])
            .into_iter()
            .map(|k| {
                let pos = self.arena.find_node(&Node::Letter(k));
                (
                    self.arena.letter(k).clone(),
                    pos.is_some_and(|f| final_w.contains(f)),
                )
            })
            .collect();
        if !verify_model(self.arena, &valuation, self.root) {
            return Err(ForcingError::ModelCheckFailed);
        }
        Ok((chain, valuation))
    }

    /// Valid conditions below `p` that lie in `d`, in deterministic order.
    fn extensions_into(&self, d: &DenseSet, p: &Condition) -> Result<Vec<Condition>, ForcingError> {
        let mut out = Vec::new();
        match d {
            DenseSet::DecideOr(f) => {
                for &c in self.arena.node(*f).children() {
                    match self.is_condition(&p.w.with(c)) {
                        Ok(cond) => out.push(cond),
                        Err(ForcingError::Inconsistent) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
            DenseSet::AddConjunct(f, i) => {
                let c = self.arena.node(*f).children()[*i];
                out.push(self.is_condition(&p.w.with(c))?);
            }
            DenseSet::Custom(members) => {
                let mut sorted: Vec<&FormulaSet> =
                    members.iter().filter(|m| p.w.is_subset(m)).collect();
                sorted.sort();
                sorted.dedup();
                for m in sorted {
                    if let Ok(cond) = self.is_condition(m) {
                        out.push(cond);
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn compare_sets(p: &FormulaSet, q: &FormulaSet) -> Comparison {
    match (q.is_subset(p), p.is_subset(q)) {
        (true, true) => Comparison::Equal,
        (true, false) => Comparison::Below,
        (false, true) => Comparison::Above,
        (false, false) => Comparison::Incomparable,
    }
}

fn dense_in(arena: &Arena, d: &DenseSet, conds: &[Condition]) -> bool {
    conds.iter().all(|p| {
        conds
            .iter()
            .any(|q| p.w.is_subset(&q.w) && d.contains(arena, &q.w))
    })
}

/// Recursive truth evaluation. Letters missing from `valuation` read as 0.
pub fn verify_model(arena: &Arena, valuation: &Valuation, f: FormulaId) -> bool {
    arena.eval(f, &|k| {
        valuation.get(arena.letter(k)).copied().unwrap_or(false)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::DEFAULT_BUDGET;

    fn set(a: &mut Arena, srcs: &[&str]) -> FormulaSet {
        srcs.iter().map(|s| a.parse_nnf(s).unwrap()).collect()
    }

    #[test]
    fn condition_examples() {
        let mut a = Arena::new();
        let p = a.parse("p").unwrap();
        let w = set(&mut a, &["p"]);
        assert!(Forcing::new(&a, p, 100).unwrap().is_condition(&w).is_ok());

        let c = a.parse_nnf("p and not p").unwrap();
        let w = FormulaSet::singleton(c);
        assert_eq!(
            Forcing::new(&a, c, 100).unwrap().is_condition(&w),
            Err(ForcingError::Inconsistent)
        );

        let phi = a.parse("or(i in 0..2)(p(i))").unwrap();
        let good = set(&mut a, &["or(i in 0..2)(p(i))", "p(0)"]);
        let rootless = set(&mut a, &["p(0)"]);
        let outside = set(&mut a, &["or(i in 0..2)(p(i))", "q"]);
        let h = Forcing::new(&a, phi, 100).unwrap();
        assert!(h.is_condition(&good).is_ok());
        assert_eq!(h.is_condition(&rootless), Err(ForcingError::MissingRoot));
        assert_eq!(h.is_condition(&outside), Err(ForcingError::NotInClosure));
    }

    #[test]
    fn order_and_compatibility() {
        let mut a = Arena::new();
        let phi = a.parse("p or not p").unwrap();
        let s_base = set(&mut a, &["p or not p"]);
        let s_p = set(&mut a, &["p or not p", "p"]);
        let s_np = set(&mut a, &["p or not p", "not p"]);
        let h = Forcing::new(&a, phi, 100).unwrap();
        let base = h.is_condition(&s_base).unwrap();
        let with_p = h.is_condition(&s_p).unwrap();
        let with_np = h.is_condition(&s_np).unwrap();
        assert_eq!(h.compare(&with_p, &base), Comparison::Below);
        assert_eq!(h.compare(&base, &with_p), Comparison::Above);
        assert_eq!(h.compare(&base, &base), Comparison::Equal);
        assert_eq!(h.compare(&with_p, &with_np), Comparison::Incomparable);
        assert!(h.compatible(&with_p, &with_np).is_none());

        let phi = a.parse("or(i in 0..2)(p(i))").unwrap();
        let s0 = set(&mut a, &["or(i in 0..2)(p(i))", "p(0)"]);
        let s1 = set(&mut a, &["or(i in 0..2)(p(i))", "p(1)"]);
        let h = Forcing::new(&a, phi, 100).unwrap();
        let p0 = h.is_condition(&s0).unwrap();
        let p1 = h.is_condition(&s1).unwrap();
        let u = h.compatible(&p0, &p1).unwrap();
        assert_eq!(u.w, p0.w.union(&p1.w));
    }

    #[test]
    fn builtin_dense_set_examples() {
        let mut a = Arena::new();
        let p = a.parse("p").unwrap();
        assert!(Forcing::new(&a, p, 100)
            .unwrap()
            .builtin_dense_sets()
            .unwrap()
            .is_empty());
        let d = a.parse("p or q").unwrap();
        assert_eq!(
            Forcing::new(&a, d, 100)
                .unwrap()
                .builtin_dense_sets()
                .unwrap(),
            vec![DenseSet::DecideOr(d)]
        );
        let phi = a.parse("(p or q) and r").unwrap();
        assert_eq!(
            Forcing::new(&a, phi, 100)
                .unwrap()
                .builtin_dense_sets()
                .unwrap(),
            vec![
                DenseSet::DecideOr(d),
                DenseSet::AddConjunct(phi, 0),
                DenseSet::AddConjunct(phi, 1)
            ]
        );
    }

    #[test]
    fn density_examples() {
        let mut a = Arena::new();
        let phi = a.parse("p or q").unwrap();
        let only_p = DenseSet::Custom(vec![set(&mut a, &["p or q", "p"])]);
        let h = Forcing::new(&a, phi, 100).unwrap();
        // {phi}, {phi,p}, {phi,q}, {phi,p,q}
        let conds = h.conditions().unwrap();
        assert_eq!(conds.len(), 4);
        assert!(h.is_dense(&DenseSet::DecideOr(phi)).unwrap());
        assert!(!h.is_dense(&only_p).unwrap());
        let all = DenseSet::Custom(conds.iter().map(|c| c.w.clone()).collect());
        assert!(h.is_dense(&all).unwrap());
    }

    #[test]
    fn generic_examples() {
        let mut a = Arena::new();
        let p = a.parse("p").unwrap();
        let (_, mu) = Forcing::new(&a, p, 100)
            .unwrap()
            .build_generic(&[], 0)
            .unwrap();
        assert!(mu[&LetterId::bare("p")]);

        let np = a.parse("not p").unwrap();
        let (_, mu) = Forcing::new(&a, np, 100)
            .unwrap()
            .build_generic(&[], 0)
            .unwrap();
        assert!(!mu[&LetterId::bare("p")]);

        let phi = a.parse("or(i in 0..2)(p(i))").unwrap();
        let (chain, mu) = Forcing::new(&a, phi, 100)
            .unwrap()
            .build_generic(&[], 0)
            .unwrap();
        assert!(mu[&LetterId::new("p", [0])]);
        assert!(!mu[&LetterId::new("p", [1])]);
        assert!(chain.met_all());
        for pair in chain.conditions.windows(2) {
            assert_eq!(compare_sets(&pair[1].w, &pair[0].w), Comparison::Below);
        }

        let (_, mu) = Forcing::new(&a, phi, 100)
            .unwrap()
            .build_generic(&[], 1)
            .unwrap();
        assert!(mu[&LetterId::new("p", [1])]);
    }

    #[test]
    fn custom_dense_sets_are_scheduled() {
        let mut a = Arena::new();
        let phi = a.parse("p or q").unwrap();
        let top = set(&mut a, &["p or q", "p", "q"]);
        let h = Forcing::new(&a, phi, 100).unwrap();
        let d = DenseSet::Custom(vec![top.clone()]);
        assert!(h.is_dense(&d).unwrap());
        let (chain, mu) = h.build_generic(&[d], 0).unwrap();
        assert_eq!(chain.last().w, top);
        assert!(mu.values().all(|&b| b));
        assert!(chain.met_all());

        let bad = DenseSet::Custom(vec![]);
        assert!(matches!(
            h.build_generic(&[bad], 0),
            Err(ForcingError::NotDense(1))
        ));
    }

    #[test]
    fn inconsistent_root_is_rejected() {
        let mut a = Arena::new();
        let c = a.parse_nnf("p and not p").unwrap();
        let h = Forcing::new(&a, c, DEFAULT_BUDGET).unwrap();
        assert_eq!(
            h.build_generic(&[], 0).unwrap_err(),
            ForcingError::Inconsistent
        );
    }

    #[test]
    fn verify_model_examples() {
        let mut a = Arena::new();
        let mu: Valuation = [(LetterId::bare("p"), true)].into_iter().collect();
        let p = a.parse("p").unwrap();
        let np = a.parse("not p").unwrap();
        assert!(verify_model(&a, &mu, p));
        assert!(!verify_model(&a, &mu, np));
        let f = a.parse("and(i in 0..2)(p(i) or not p(0))").unwrap();
        let mu: Valuation = [
            (LetterId::new("p", [0]), false),
            (LetterId::new("p", [1]), true),
        ]
        .into_iter()
        .collect();
        assert!(verify_model(&a, &mu, f));
    }
}
