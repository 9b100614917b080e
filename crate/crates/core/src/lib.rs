//! Consistency games, forcing posets and structure coding for infinitary
//! propositional formulas, at finite ("desk") scale.
//!
//! * [`formula`] and [`parse`]: interned formulas with arbitrary-arity
//!   connectives and the surface grammar.
//! * [`game`]: the consistency game, its exact solver and certificates.
//! * [`forcing`]: the poset of finite consistent subformula sets and a
//!   generic-chain builder that reads off a model.
//! * [`side`]: pre-condition posets with finite model tokens as side
//!   conditions, the extended games and the level tower.
//! * [`codec`]: truth codes of finite structures and compilation of
//!   structural requirements into formulas, plus decoding back.

pub mod codec;
pub mod forcing;
pub mod formula;
pub mod game;
pub mod generate;
pub mod json;
pub mod parse;
pub mod side;

pub use formula::{Arena, FormulaId, FormulaSet, LetterId, LetterKey, Node};
pub use game::{solve, HintikkaCert, Move, Position, RefutationTree, Verdict};
pub use parse::ParseError;
