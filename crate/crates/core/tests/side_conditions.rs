use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use infprop::side::{
    Challenge, DenseKind, ExtendedVerdict, Level, PreCondition, SolveMode, Tower, Universe,
    Violation,
};
use infprop::{Arena, FormulaSet, Node};

fn fixture(name: &str) -> String {
    let path = format!(
        "{}/../../fixtures/universes/{name}",
        env!("CARGO_MANIFEST_DIR")
    );
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn load(name: &str) -> (Arena, Universe) {
    let mut a = Arena::new();
    let u = Universe::from_json(&mut a, &fixture(name)).unwrap();
    (a, u)
}

fn pre(a: &mut Arena, u: &Universe, set: &[&str], models: &[&str]) -> PreCondition {
    PreCondition {
        w: set.iter().map(|s| a.parse(s).unwrap()).collect(),
        models: models.iter().map(|m| u.token_index(m).unwrap()).collect(),
    }
}

/// Subsets of the closure that contain the root and have a model, found by
/// brute force over valuations.
fn satisfiable_conditions(a: &Arena, u: &Universe) -> Vec<FormulaSet> {
    let closure = a.closure(&[u.phi]);
    let letters: Vec<_> = a.letters(&[u.phi]).into_iter().collect();
    let others: Vec<_> = closure.iter().copied().filter(|&f| f != u.phi).collect();
    let mut out = Vec::new();
    for mask in 0u32..(1 << others.len()) {
        let w: FormulaSet = std::iter::once(u.phi)
            .chain(
                others
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask >> i & 1 == 1)
                    .map(|(_, &f)| f),
            )
            .collect();
        let sat = (0u32..(1 << letters.len())).any(|bits| {
            w.iter().all(|f| {
                a.eval(f, &|k| {
                    let i = letters.iter().position(|&l| l == k).unwrap();
                    bits >> i & 1 == 1
                })
            })
        });
        if sat {
            out.push(w);
        }
    }
    out
}

/// Least fixpoint of Player I's attractor, level by level.
fn oracle(a: &Arena, u: &Universe) -> BTreeMap<Level, (Vec<PreCondition>, BTreeSet<PreCondition>)> {
    let conds = satisfiable_conditions(a, u);
    let mut done: BTreeMap<Level, (Vec<PreCondition>, BTreeSet<PreCondition>)> = BTreeMap::new();
    for lam in u.all_levels() {
        let below: Vec<usize> = (0..u.tokens.len())
            .filter(|&m| Level::Finite(u.tokens[m].level) < lam)
            .collect();
        let mut space = Vec::new();
        for w in &conds {
            for mask in 0u32..(1 << below.len()) {
                let models: BTreeSet<usize> = below
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask >> i & 1 == 1)
                    .map(|(_, &m)| m)
                    .collect();
                if u.tokens_valid(&models, lam) {
                    space.push(PreCondition {
                        w: w.clone(),
                        models,
                    });
                }
            }
        }
        // Safe answers for each admissible token challenge.
        let mut safe: BTreeMap<(usize, usize), Vec<PreCondition>> = BTreeMap::new();
        for m in 0..u.tokens.len() {
            let lm = Level::Finite(u.tokens[m].level);
            let Some((_, lower)) = done.get(&lm) else {
                continue;
            };
            for k in &u.tokens[m].known {
                let Some(d) = u.dense_index(k) else { continue };
                let in_d = |q: &PreCondition| match &u.dense[d].kind {
                    DenseKind::DecideOr(f) => {
                        !q.w.contains(*f) || a.node(*f).children().iter().any(|&c| q.w.contains(c))
                    }
                    DenseKind::AddConjunct(f, i) => {
                        !q.w.contains(*f) || q.w.contains(a.node(*f).children()[*i])
                    }
                    DenseKind::Decided(f) => a.node(*f).children().iter().any(|&c| q.w.contains(c)),
                    DenseKind::Explicit(list) => list.contains(q),
                };
                if let DenseKind::Explicit(list) = &u.dense[d].kind {
                    if !list.iter().all(|q| lower.contains(q)) {
                        continue;
                    }
                }
                let members: Vec<_> = lower.iter().filter(|q| in_d(q)).cloned().collect();
                if lower
                    .iter()
                    .all(|s| members.iter().any(|t| u.leq_pre(t, s)))
                {
                    let ok = members
                        .into_iter()
                        .filter(|q| u.hull_delta(m, q) == u.tokens[m].delta)
                        .collect();
                    safe.insert((m, d), ok);
                }
            }
        }
        let answers_ok = |s: &PreCondition, t: &PreCondition, c: &Challenge| -> bool {
            u.leq_pre(t, s)
                && match *c {
                    Challenge::Or(f) => a.node(f).children().iter().any(|&k| t.w.contains(k)),
                    Challenge::And(f, i) => t.w.contains(a.node(f).children()[i]),
                    Challenge::Dense(m, d) => safe[&(m, d)].iter().any(|q| u.leq_pre(t, q)),
                }
        };
        let challenges = |s: &PreCondition| -> Vec<Challenge> {
            let mut out = Vec::new();
            for f in s.w.iter() {
                match a.node(f) {
                    Node::Or(_) => out.push(Challenge::Or(f)),
                    Node::And(cs) => out.extend((0..cs.len()).map(|i| Challenge::And(f, i))),
                    _ => {}
                }
            }
            for &m in &s.models {
                for &(mm, d) in safe.keys() {
                    if mm == m {
                        out.push(Challenge::Dense(m, d));
                    }
                }
            }
            out
        };
        let mut lose: BTreeSet<PreCondition> = BTreeSet::new();
        loop {
            let grown: Vec<PreCondition> = space
                .iter()
                .filter(|s| !lose.contains(*s))
                .filter(|s| {
                    challenges(s).iter().any(|c| {
                        space
                            .iter()
                            .filter(|t| answers_ok(s, t, c))
                            .all(|t| lose.contains(t))
                    })
                })
                .cloned()
                .collect();
            if grown.is_empty() {
                break;
            }
            lose.extend(grown);
        }
        let win = space
            .iter()
            .filter(|s| !lose.contains(*s))
            .cloned()
            .collect();
        done.insert(lam, (space, win));
    }
    done
}

fn computed(a: &Arena, u: &Universe) -> Tower<'static> {
    // Leaked so the tower can outlive the helper; fine in tests.
    let a: &'static Arena = Box::leak(Box::new(a.clone()));
    let u: &'static Universe = Box::leak(Box::new(u.clone()));
    let mut t = Tower::new(a, u, 100_000);
    t.compute_all().unwrap();
    t
}

#[test]
fn u1_shape() {
    let (a, u) = load("u1.json");
    assert!(u.levels.len() >= 3);
    assert!(u.tokens.len() >= 4);
    let t = computed(&a, &u);
    let top = t.level(Level::Top).unwrap();
    assert!(top.members.len() <= 10_000);
    assert_eq!(top.members.len(), 48 * 18);
}

#[test]
fn u1_levels_match_attractor_oracle() {
    let (a, u) = load("u1.json");
    let t = computed(&a, &u);
    for (lam, (space, win)) in oracle(&a, &u) {
        let level = t.level(lam).unwrap();
        let ours: BTreeSet<_> = level.members.iter().cloned().collect();
        assert_eq!(
            ours,
            space.iter().cloned().collect::<BTreeSet<_>>(),
            "space at {lam}"
        );
        let ours_win: BTreeSet<_> = level.winners().cloned().collect();
        assert_eq!(ours_win, win, "winners at {lam}");
    }
}

#[test]
fn u1_announced_members() {
    let (mut a, u) = load("u1.json");
    let phi = "(p or not p) and (q or r)";
    let cases = [
        (&["not p"][..], &["B"][..], Level::Finite(3), false),
        (&["not p"], &["B"], Level::Top, false),
        (&["not p"], &["B2", "C"], Level::Top, false),
        (&["p"], &["B"], Level::Finite(3), true),
        (&[], &["B"], Level::Top, true),
        (&["not p"], &["C"], Level::Top, true),
        (&["not p"], &["A", "C"], Level::Top, true),
        (&["not p"], &["A"], Level::Finite(2), true),
        (&["not p", "q"], &["A", "Y", "C"], Level::Top, true),
        (&[], &["A", "X"], Level::Top, true),
    ];
    let pres: Vec<_> = cases
        .iter()
        .map(|(extra, models, lam, expect)| {
            let set: Vec<&str> = std::iter::once(phi).chain(extra.iter().copied()).collect();
            (pre(&mut a, &u, &set, models), *lam, *expect)
        })
        .collect();
    let t = computed(&a, &u);
    for (p, lam, expect) in pres {
        let level = t.level(lam).unwrap();
        assert!(level.contains_pre(&p));
        assert_eq!(level.wins(&p), expect, "{p:?} at {lam}");
    }
}

#[test]
fn u1_is_coherent_and_goodness() {
    let (a, u) = load("u1.json");
    let start = Instant::now();
    let t = computed(&a, &u);
    let report = t.check_coherence().unwrap();
    assert!(report.is_clean(), "{:?}", report.violations);
    assert!(start.elapsed().as_secs() < 120);
    let idx = |id: &str| u.token_index(id).unwrap();
    assert!(t.is_good(idx("A")).unwrap());
    assert!(t.is_good(idx("C")).unwrap());
    assert!(!t.is_good(idx("X")).unwrap());
}

#[test]
fn u2_reports_exactly_the_planted_violations() {
    let (mut a, u) = load("u2.json");
    let bare = pre(&mut a, &u, &["p"], &[]);
    let with_n = pre(&mut a, &u, &["p"], &["N"]);
    let with_m = pre(&mut a, &u, &["p"], &["M"]);
    let t = computed(&a, &u);
    let report = t.check_coherence().unwrap();
    let mut expected = vec![
        Violation::HullGate {
            token: u.token_index("N").unwrap(),
            q: bare,
            value: 1,
        },
        Violation::UpwardClosure {
            level: Level::Finite(2),
            p: with_m.clone(),
            q: with_n.clone(),
        },
        Violation::UpwardClosure {
            level: Level::Top,
            p: with_m,
            q: with_n,
        },
    ];
    expected.sort();
    assert_eq!(report.violations, expected);
}

#[test]
fn solve_extended_examples() {
    let (mut a, u) = load("u1.json");
    let phi = "(p or not p) and (q or r)";
    let empty = pre(&mut a, &u, &[phi], &[]);
    let clash = pre(&mut a, &u, &[phi, "not p"], &["B"]);
    let safe = pre(&mut a, &u, &[phi, "not p"], &["C"]);
    let t = computed(&a, &u);
    let a: &Arena = t.arena;
    let u: &Universe = t.universe;
    let mut t = Tower::new(a, u, 100_000);
    for lam in [Level::Finite(1), Level::Finite(2), Level::Finite(3)] {
        t.compute_level(lam).unwrap();
    }
    for mode in [SolveMode::Auto, SolveMode::Enumerate] {
        let v = t.solve_extended(&empty, Level::Top, mode).unwrap();
        assert!(v.is_consistent());
        assert!(t.check_extended(&empty, Level::Top, &v).unwrap());
    }
    let v = t
        .solve_extended(&clash, Level::Top, SolveMode::Auto)
        .unwrap();
    assert!(v.is_inconsistent());
    assert!(t.check_extended(&clash, Level::Top, &v).unwrap());
    let v = t
        .solve_extended(&safe, Level::Top, SolveMode::Auto)
        .unwrap();
    assert!(v.is_consistent());
    assert!(t.check_extended(&safe, Level::Top, &v).unwrap());
}

#[test]
fn extended_certificates_check_everywhere_and_agree_with_levels() {
    let (a, u) = load("u1.json");
    let full = computed(&a, &u);
    let mut t = Tower::new(full.arena, full.universe, 100_000);
    for lam in [Level::Finite(1), Level::Finite(2), Level::Finite(3)] {
        t.compute_level(lam).unwrap();
    }
    let top = full.level(Level::Top).unwrap();
    for (i, p) in top.members.iter().enumerate().step_by(7) {
        let v = t
            .solve_extended(p, Level::Top, SolveMode::Enumerate)
            .unwrap();
        assert_eq!(v.is_consistent(), top.winning[i], "{p:?}");
        assert!(t.check_extended(p, Level::Top, &v).unwrap(), "{p:?}");
        if let ExtendedVerdict::Consistent(mut cert) = v {
            // Dropping any answer breaks the certificate.
            if let Some(&k) = cert.answers.keys().next() {
                cert.answers.remove(&k);
                assert!(!t
                    .check_extended(p, Level::Top, &ExtendedVerdict::Consistent(cert))
                    .unwrap());
            }
        }
    }
}

#[test]
fn restriction_and_order_laws_on_u1() {
    let (a, u) = load("u1.json");
    let t = computed(&a, &u);
    let top = &t.level(Level::Top).unwrap().members;
    let levels = u.all_levels();
    for p in top {
        for &lam in &levels {
            let r = u.restrict(p, lam);
            assert!(u.tokens_valid(&r.models, lam));
        }
        for m in 0..u.tokens.len() {
            assert!(u.hull_delta(m, p) >= u.tokens[m].delta);
        }
    }
    // Pairs on a stride keep the cubic transitivity check quick.
    let sample: Vec<_> = top.iter().step_by(5).collect();
    for p in &sample {
        assert!(u.leq_pre(p, p));
        for q in &sample {
            if u.leq_pre(p, q) {
                for &lam in &levels {
                    assert!(u.leq_pre(&u.restrict(p, lam), &u.restrict(q, lam)));
                }
                for m in 0..u.tokens.len() {
                    assert!(u.hull_delta(m, p) >= u.hull_delta(m, q));
                }
                for r in &sample {
                    if u.leq_pre(q, r) {
                        assert!(u.leq_pre(p, r));
                    }
                }
            }
        }
    }
}

#[test]
fn empty_universe_agrees_with_the_formula_game() {
    let mut a = Arena::new();
    let srcs = [
        "p or q",
        "p and not p",
        "(p or q) and not p and not q",
        "and(i in 0..3)(P(i) or not P(i + 1))",
    ];
    let ids: Vec<_> = srcs.iter().map(|s| a.parse_nnf(s).unwrap()).collect();
    for f in ids {
        let u = Universe::empty(f);
        let w = FormulaSet::singleton(f);
        let expected = infprop::solve(&a, &w, 100_000).is_consistent();
        let mut t = Tower::new(&a, &u, 100_000);
        for mode in [SolveMode::Auto, SolveMode::Enumerate] {
            let v = t
                .solve_extended(&PreCondition::bare(w.clone()), Level::Top, mode)
                .unwrap();
            assert_eq!(v.is_consistent(), expected);
            assert!(t
                .check_extended(&PreCondition::bare(w.clone()), Level::Top, &v)
                .unwrap());
        }
    }
}
