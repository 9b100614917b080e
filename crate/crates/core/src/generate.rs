//! Seeded random NNF formulas for sweeps and fuzzing.

use rand::Rng;

use crate::formula::{Arena, FormulaId, LetterId};

/// Shape limits for [`FormulaGen::generate`].
#[derive(Clone, Debug)]
pub struct FormulaGen {
    /// Letters are drawn from `P(0)..P(letters-1)`.
    pub letters: u32,
    pub max_depth: u32,
    pub max_arity: usize,
    /// Formulas whose subformula closure exceeds this are redrawn.
    pub max_closure: usize,
}

impl Default for FormulaGen {
    fn default() -> Self {
        FormulaGen {
            letters: 10,
            max_depth: 4,
            max_arity: 4,
            max_closure: 40,
        }
    }
}

impl FormulaGen {
    pub fn generate<R: Rng>(&self, arena: &mut Arena, rng: &mut R) -> FormulaId {
        loop {
            let f = self.node(arena, rng, self.max_depth);
            if arena.closure_bounded(&[f], self.max_closure).complete {
                return f;
            }
        }
    }

    fn node<R: Rng>(&self, arena: &mut Arena, rng: &mut R, depth: u32) -> FormulaId {
        if depth == 0 || rng.gen_bool(0.3) {
            let l = LetterId::new("P", [rng.gen_range(0..self.letters)]);
            return if rng.gen_bool(0.5) {
                arena.letter_formula(l)
            } else {
                arena.neg_letter_formula(l)
            };
        }
        // Arity 0 is rare but exercised: it yields the constants.
        let arity = if rng.gen_bool(0.03) {
            0
        } else {
            rng.gen_range(1..=self.max_arity)
        };
        let kids: Vec<_> = (0..arity)
            .map(|_| self.node(arena, rng, depth - 1))
            .collect();
        if rng.gen_bool(0.5) {
            arena.and(kids)
        } else {
            arena.or(kids)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn respects_bounds_and_is_reproducible() {
        let gen = FormulaGen::default();
        let mut a = Arena::new();
        let mut b = Arena::new();
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let f = gen.generate(&mut a, &mut r1);
            let g = gen.generate(&mut b, &mut r2);
            assert_eq!(a.print(f), b.print(g));
            assert!(a.closure(&[f]).len() <= 40);
            assert!(a.letters(&[f]).len() <= 10);
            assert!(a.is_nnf(f));
        }
    }
}
