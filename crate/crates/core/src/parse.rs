//! Surface grammar for formulas.
//!
//! ```text
//! formula  := disj
//! disj     := conj ("or" conj)*
//! conj     := unary ("and" unary)*
//! unary    := "not" unary | primary
//! primary  := "(" formula ")"
//!           | ("and" | "or") "(" binders ")" "(" items ")"
//!           | NAME [ "(" expr ("," expr)* ")" ]
//! binders  := [ NAME "in" expr ".." expr ("," NAME "in" expr ".." expr)* ]
//! items    := [ formula ("," formula)* ]
//! expr     := term (("+" | "-") term)*
//! term     := INT | NAME | "(" expr ")"
//! ```
//!
//! Ranges `a..b` are half-open and must be nonempty. A family with binders
//! elaborates its items once per parameter assignment, with the parameters
//! varying in lexicographic order (first binder outermost). `#` starts a
//! comment that runs to the end of the line.

use std::collections::HashMap;

use thiserror::Error;

use crate::formula::{Arena, FormulaId, LetterId};

/// Largest number of members a single comprehension may elaborate to.
pub const MAX_FAMILY: u64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("range error at {line}:{col}: {msg}")]
    Range {
        line: usize,
        col: usize,
        msg: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(u64),
    LParen,
    RParen,
    Comma,
    DotDot,
    Plus,
    Minus,
    Eof,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let step = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => step(1, &mut i, &mut col),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '(' | ')' | ',' | '+' | '-' => {
                let tok = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    ',' => Tok::Comma,
                    '+' => Tok::Plus,
                    _ => Tok::Minus,
                };
                out.push(Spanned {
                    tok,
                    line: l0,
                    col: c0,
                });
                step(1, &mut i, &mut col);
            }
            '.' if chars.get(i + 1) == Some(&'.') => {
                out.push(Spanned {
                    tok: Tok::DotDot,
                    line: l0,
                    col: c0,
                });
                step(2, &mut i, &mut col);
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                col += i - start;
                let n = text.parse::<u64>().map_err(|_| ParseError::Range {
                    line: l0,
                    col: c0,
                    msg: format!("integer literal {text} out of range"),
                })?;
                out.push(Spanned {
                    tok: Tok::Int(n),
                    line: l0,
                    col: c0,
                });
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                col += i - start;
                out.push(Spanned {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    line: l0,
                    col: c0,
                });
            }
            other => {
                return Err(ParseError::Syntax {
                    line: l0,
                    col: c0,
                    msg: format!("unexpected character {other:?}"),
                })
            }
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

#[derive(Clone, Debug)]
enum Expr {
    Int(u64),
    Var(String, usize, usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>, usize, usize),
}

#[derive(Clone, Debug)]
struct Binder {
    name: String,
    lo: Expr,
    hi: Expr,
    line: usize,
    col: usize,
}

#[derive(Clone, Debug)]
enum Surface {
    Letter(String, Vec<Expr>),
    Not(Box<Surface>),
    Family {
        conj: bool,
        binders: Vec<Binder>,
        items: Vec<Surface>,
    },
}

const KEYWORDS: [&str; 4] = ["and", "or", "not", "in"];

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let (line, col) = self.here();
        Err(ParseError::Syntax {
            line,
            col,
            msg: msg.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected {what}, found {:?}", self.peek()))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    /// True if the keyword under the cursor opens a family, which needs
    /// `(` followed by `)(` or by `NAME in`.
    fn family_ahead(&self) -> bool {
        if *self.peek_at(1) != Tok::LParen {
            return false;
        }
        match (self.peek_at(2), self.peek_at(3)) {
            (Tok::RParen, Tok::LParen) => true,
            (Tok::Ident(_), Tok::Ident(kw)) => kw == "in",
            _ => false,
        }
    }

    fn formula(&mut self) -> Result<Surface, ParseError> {
        let mut lhs = self.conj()?;
        while self.is_kw("or") && !self.family_ahead() {
            self.bump();
            let rhs = self.conj()?;
            lhs = Surface::Family {
                conj: false,
                binders: Vec::new(),
                items: vec![lhs, rhs],
            };
        }
        Ok(lhs)
    }

    fn conj(&mut self) -> Result<Surface, ParseError> {
        let mut lhs = self.unary()?;
        while self.is_kw("and") && !self.family_ahead() {
            self.bump();
            let rhs = self.unary()?;
            lhs = Surface::Family {
                conj: true,
                binders: Vec::new(),
                items: vec![lhs, rhs],
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Surface, ParseError> {
        if self.is_kw("not") {
            self.bump();
            return Ok(Surface::Not(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Surface, ParseError> {
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let f = self.formula()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(f)
            }
            Tok::Ident(name) if name == "and" || name == "or" => {
                self.bump();
                let conj = name == "and";
                self.expect(Tok::LParen, "'(' opening the binder list")?;
                let mut binders = Vec::new();
                if *self.peek() != Tok::RParen {
                    loop {
                        binders.push(self.binder()?);
                        if *self.peek() == Tok::Comma {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RParen, "')' closing the binder list")?;
                self.expect(Tok::LParen, "'(' opening the family members")?;
                let mut items = Vec::new();
                if *self.peek() != Tok::RParen {
                    loop {
                        items.push(self.formula()?);
                        if *self.peek() == Tok::Comma {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RParen, "')' closing the family members")?;
                Ok(Surface::Family {
                    conj,
                    binders,
                    items,
                })
            }
            Tok::Ident(name) if KEYWORDS.contains(&name.as_str()) => {
                self.err(format!("unexpected keyword '{name}'"))
            }
            Tok::Ident(name) => {
                self.bump();
                let mut args = Vec::new();
                if *self.peek() == Tok::LParen {
                    self.bump();
                    loop {
                        args.push(self.expr()?);
                        if *self.peek() == Tok::Comma {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    self.expect(Tok::RParen, "')' closing the letter arguments")?;
                }
                Ok(Surface::Letter(name, args))
            }
            other => self.err(format!("expected a formula, found {other:?}")),
        }
    }

    fn binder(&mut self) -> Result<Binder, ParseError> {
        let (line, col) = self.here();
        let name = match self.bump() {
            Tok::Ident(n) if !KEYWORDS.contains(&n.as_str()) => n,
            other => {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    msg: format!("expected a parameter name, found {other:?}"),
                })
            }
        };
        if !self.is_kw("in") {
            return self.err("expected 'in'");
        }
        self.bump();
        let lo = self.expr()?;
        self.expect(Tok::DotDot, "'..'")?;
        let hi = self.expr()?;
        Ok(Binder {
            name,
            lo,
            hi,
            line,
            col,
        })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    let (l, c) = self.here();
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?), l, c);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let (line, col) = self.here();
        match self.bump() {
            Tok::Int(n) => Ok(Expr::Int(n)),
            Tok::Ident(n) if !KEYWORDS.contains(&n.as_str()) => Ok(Expr::Var(n, line, col)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            other => Err(ParseError::Syntax {
                line,
                col,
                msg: format!("expected an index expression, found {other:?}"),
            }),
        }
    }
}

type Env = HashMap<String, u64>;

fn eval_expr(e: &Expr, env: &Env) -> Result<u64, ParseError> {
    match e {
        Expr::Int(n) => Ok(*n),
        Expr::Var(name, line, col) => env.get(name).copied().ok_or_else(|| ParseError::Syntax {
            line: *line,
            col: *col,
            msg: format!("unbound parameter '{name}'"),
        }),
        Expr::Add(a, b) => {
            let (x, y) = (eval_expr(a, env)?, eval_expr(b, env)?);
            x.checked_add(y).ok_or(ParseError::Range {
                line: 0,
                col: 0,
                msg: "index overflow".into(),
            })
        }
        Expr::Sub(a, b, line, col) => {
            let (x, y) = (eval_expr(a, env)?, eval_expr(b, env)?);
            x.checked_sub(y).ok_or_else(|| ParseError::Range {
                line: *line,
                col: *col,
                msg: format!("index {x} - {y} is negative"),
            })
        }
    }
}

fn elaborate(arena: &mut Arena, s: &Surface, env: &mut Env) -> Result<FormulaId, ParseError> {
    match s {
        Surface::Letter(name, args) => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                let v = eval_expr(a, env)?;
                vals.push(u32::try_from(v).map_err(|_| ParseError::Range {
                    line: 0,
                    col: 0,
                    msg: format!("letter index {v} exceeds the 32-bit instance bound"),
                })?);
            }
            Ok(arena.letter_formula(LetterId::new(name.clone(), vals)))
        }
        Surface::Not(inner) => {
            let f = elaborate(arena, inner, env)?;
            Ok(arena.neg(f))
        }
        Surface::Family {
            conj,
            binders,
            items,
        } => {
            let mut members = Vec::new();
            let mut count = 0u64;
            expand(arena, binders, items, env, &mut members, &mut count)?;
            Ok(if *conj {
                arena.and(members)
            } else {
                arena.or(members)
            })
        }
    }
}

fn expand(
    arena: &mut Arena,
    binders: &[Binder],
    items: &[Surface],
    env: &mut Env,
    out: &mut Vec<FormulaId>,
    count: &mut u64,
) -> Result<(), ParseError> {
    let Some((b, rest)) = binders.split_first() else {
        for it in items {
            out.push(elaborate(arena, it, env)?);
        }
        return Ok(());
    };
    let lo = eval_expr(&b.lo, env)?;
    let hi = eval_expr(&b.hi, env)?;
    if hi <= lo {
        return Err(ParseError::Range {
            line: b.line,
            col: b.col,
            msg: format!("range {lo}..{hi} of '{}' is empty", b.name),
        });
    }
    *count = count.saturating_mul(1).saturating_add(hi - lo);
    if hi - lo > MAX_FAMILY || *count > MAX_FAMILY {
        return Err(ParseError::Range {
            line: b.line,
            col: b.col,
            msg: format!(
                "comprehension over '{}' exceeds {MAX_FAMILY} members",
                b.name
            ),
        });
    }
    let shadowed = env.get(&b.name).copied();
    for v in lo..hi {
        env.insert(b.name.clone(), v);
        expand(arena, rest, items, env, out, count)?;
    }
    match shadowed {
        Some(v) => env.insert(b.name.clone(), v),
        None => env.remove(&b.name),
    };
    Ok(())
}

impl Arena {
    /// Parses one formula in the surface grammar and interns it. Surface
    /// negation is kept; call [`Arena::nnf`] before handing it to an engine.
    pub fn parse(&mut self, src: &str) -> Result<FormulaId, ParseError> {
        let mut p = Parser {
            toks: lex(src)?,
            pos: 0,
        };
        let surface = p.formula()?;
        if *p.peek() != Tok::Eof {
            return p.err(format!("trailing input starting at {:?}", p.peek()));
        }
        elaborate(self, &surface, &mut Env::new())
    }

    /// Parses and normalizes in one step.
    pub fn parse_nnf(&mut self, src: &str) -> Result<FormulaId, ParseError> {
        let f = self.parse(src)?;
        Ok(self.nnf(f))
    }
}
