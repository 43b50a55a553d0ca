//! Terms in named and nameless (de Bruijn) form: parsing, printing,
//! conversion between the two, and free-variable shifting.
//!
//! The nameless [`Term`] is the currency of the whole crate; named terms
//! exist only as a front-end convenience and never reach an evaluator.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Shared handle to a term node. Terms are immutable and freely shared
/// between machine states, stack frames and threads.
pub type TermRef = Arc<Term>;

/// A nameless λ-term. A variable is a lexical address: `Var(n)` refers to
/// the binder `n` λs outward from the occurrence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Var(u64),
    Lam(TermRef),
    App(TermRef, TermRef),
}

impl Term {
    pub fn var(n: u64) -> TermRef {
        Arc::new(Term::Var(n))
    }

    pub fn lam(body: TermRef) -> TermRef {
        Arc::new(Term::Lam(body))
    }

    pub fn app(fun: TermRef, arg: TermRef) -> TermRef {
        Arc::new(Term::App(fun, arg))
    }

    /// Values are exactly the abstractions.
    pub fn is_value(&self) -> bool {
        matches!(self, Term::Lam(_))
    }

    /// Number of AST nodes.
    pub fn size(&self) -> usize {
        match self {
            Term::Var(_) => 1,
            Term::Lam(b) => 1 + b.size(),
            Term::App(f, a) => 1 + f.size() + a.size(),
        }
    }

    /// Indices free at top level: `{ n − d : Var(n) under d binders, n ≥ d }`.
    pub fn free_indices(&self) -> BTreeSet<u64> {
        fn go(t: &Term, depth: u64, out: &mut BTreeSet<u64>) {
            match t {
                Term::Var(n) => {
                    if *n >= depth {
                        out.insert(n - depth);
                    }
                }
                Term::Lam(b) => go(b, depth + 1, out),
                Term::App(f, a) => {
                    go(f, depth, out);
                    go(a, depth, out);
                }
            }
        }
        let mut out = BTreeSet::new();
        go(self, 0, &mut out);
        out
    }

    pub fn is_closed(&self) -> bool {
        fn go(t: &Term, depth: u64) -> bool {
            match t {
                Term::Var(n) => *n < depth,
                Term::Lam(b) => go(b, depth + 1),
                Term::App(f, a) => go(f, depth) && go(a, depth),
            }
        }
        go(self, 0)
    }
}

/// Increment every free variable of `t` by `x`, where an index `n` under
/// `d` extra binders counts as free when `n ≥ cutoff + d`.
pub fn shift(t: &TermRef, x: u64, cutoff: u64) -> TermRef {
    if x == 0 {
        return t.clone();
    }
    fn go(t: &TermRef, x: u64, cutoff: u64) -> TermRef {
        match &**t {
            Term::Var(n) => {
                if *n >= cutoff {
                    Term::var(n.checked_add(x).expect("de Bruijn index overflow"))
                } else {
                    t.clone()
                }
            }
            Term::Lam(b) => Term::lam(go(b, x, cutoff + 1)),
            Term::App(f, a) => Term::app(go(f, x, cutoff), go(a, x, cutoff)),
        }
    }
    go(t, x, cutoff)
}

/// A term with explicit binder names, as written in the named surface
/// syntax.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NamedTerm {
    Var(String),
    Lam(String, Box<NamedTerm>),
    App(Box<NamedTerm>, Box<NamedTerm>),
}

/// Which surface syntax a piece of text is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Syntax {
    Named,
    DeBruijn,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxError {
    #[error("{line}:{col}: {msg}")]
    Parse { line: u32, col: u32, msg: String },
    #[error("{line}:{col}: integer index overflow")]
    IndexOverflow { line: u32, col: u32 },
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("open term: free index {0} cannot be named")]
    OpenTerm(u64),
}

/// Replace names with lexical addresses: each variable becomes the number
/// of binders between its occurrence and its binder.
pub fn to_debruijn(t: &NamedTerm) -> Result<TermRef, SyntaxError> {
    fn go(t: &NamedTerm, scope: &mut Vec<String>) -> Result<TermRef, SyntaxError> {
        match t {
            NamedTerm::Var(x) => match scope.iter().rev().position(|s| s == x) {
                Some(n) => Ok(Term::var(n as u64)),
                None => Err(SyntaxError::UnboundVariable(x.clone())),
            },
            NamedTerm::Lam(x, b) => {
                scope.push(x.clone());
                let body = go(b, scope);
                scope.pop();
                Ok(Term::lam(body?))
            }
            NamedTerm::App(f, a) => Ok(Term::app(go(f, scope)?, go(a, scope)?)),
        }
    }
    go(t, &mut Vec::new())
}

/// Invent binder names for a closed nameless term. The result converts
/// back to the same addresses, so the named form is α-faithful.
pub fn to_named(t: &Term) -> Result<NamedTerm, SyntaxError> {
    fn go(t: &Term, depth: u64) -> Result<NamedTerm, SyntaxError> {
        match t {
            Term::Var(n) => {
                if *n < depth {
                    Ok(NamedTerm::Var(format!("x{}", depth - 1 - n)))
                } else {
                    Err(SyntaxError::OpenTerm(n - depth))
                }
            }
            Term::Lam(b) => Ok(NamedTerm::Lam(
                format!("x{depth}"),
                Box::new(go(b, depth + 1)?),
            )),
            Term::App(f, a) => Ok(NamedTerm::App(
                Box::new(go(f, depth)?),
                Box::new(go(a, depth)?),
            )),
        }
    }
    go(t, 0)
}

// Printing. Application is left-associative and binds tighter than a
// λ-body, so λs in application position and arguments that are themselves
// applications get parentheses.

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(n) => write!(f, "{n}"),
            Term::Lam(b) => write!(f, "\\. {b}"),
            Term::App(fun, arg) => {
                match &**fun {
                    Term::Lam(_) => write!(f, "({fun})")?,
                    _ => write!(f, "{fun}")?,
                }
                match &**arg {
                    Term::Var(_) => write!(f, " {arg}"),
                    _ => write!(f, " ({arg})"),
                }
            }
        }
    }
}

impl fmt::Display for NamedTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NamedTerm::Var(x) => write!(f, "{x}"),
            NamedTerm::Lam(x, b) => write!(f, "\\{x}. {b}"),
            NamedTerm::App(fun, arg) => {
                match &**fun {
                    NamedTerm::Lam(..) => write!(f, "({fun})")?,
                    _ => write!(f, "{fun}")?,
                }
                match &**arg {
                    NamedTerm::Var(_) => write!(f, " {arg}"),
                    _ => write!(f, " ({arg})"),
                }
            }
        }
    }
}

// Lexer shared by both surface syntaxes. `--` comments run to end of line;
// `λ` is accepted as an alias for `\`.

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Lambda,
    Dot,
    LParen,
    RParen,
    Nat(u64),
    Ident(String),
    Eof,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: u32,
    col: u32,
}

struct Lexer<'a> {
    src: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.chars().peekable(),
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.src.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, msg: impl Into<String>) -> SyntaxError {
        SyntaxError::Parse {
            line: self.line,
            col: self.col,
            msg: msg.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, SyntaxError> {
        let mut out = Vec::new();
        loop {
            while let Some(&c) = self.src.peek() {
                if c.is_whitespace() {
                    self.bump();
                } else if c == '-' {
                    // `--` starts a comment; a lone `-` is an error anyway.
                    let mut look = self.src.clone();
                    look.next();
                    if look.peek() == Some(&'-') {
                        while let Some(&c) = self.src.peek() {
                            if c == '\n' {
                                break;
                            }
                            self.bump();
                        }
                    } else {
                        return Err(self.err("unexpected character `-`"));
                    }
                } else {
                    break;
                }
            }
            let (line, col) = (self.line, self.col);
            let tok = match self.src.peek().copied() {
                None => Tok::Eof,
                Some('\\') | Some('λ') => {
                    self.bump();
                    Tok::Lambda
                }
                Some('.') => {
                    self.bump();
                    Tok::Dot
                }
                Some('(') => {
                    self.bump();
                    Tok::LParen
                }
                Some(')') => {
                    self.bump();
                    Tok::RParen
                }
                Some(c) if c.is_ascii_digit() => {
                    let mut digits = String::new();
                    while let Some(&c) = self.src.peek() {
                        if c.is_ascii_digit() {
                            digits.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    match digits.parse::<u64>() {
                        Ok(n) => Tok::Nat(n),
                        Err(_) => return Err(SyntaxError::IndexOverflow { line, col }),
                    }
                }
                Some(c) if c.is_alphabetic() || c == '_' => {
                    let mut name = String::new();
                    while let Some(&c) = self.src.peek() {
                        if c.is_alphanumeric() || c == '_' || c == '\'' {
                            name.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    Tok::Ident(name)
                }
                Some(c) => return Err(self.err(format!("unexpected character `{c}`"))),
            };
            let eof = tok == Tok::Eof;
            out.push(Spanned { tok, line, col });
            if eof {
                return Ok(out);
            }
        }
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    syntax: Syntax,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_at(&self, s: &Spanned, msg: impl Into<String>) -> SyntaxError {
        SyntaxError::Parse {
            line: s.line,
            col: s.col,
            msg: msg.into(),
        }
    }

    // term := atom+ , folded left; atom := nat | ident | λ-form | (term).
    // A λ atom swallows maximally to the right.
    fn term(&mut self) -> Result<NamedTerm, SyntaxError> {
        let first = self.atom()?;
        let mut acc = first;
        loop {
            match self.peek().tok {
                Tok::Nat(_) | Tok::Ident(_) | Tok::Lambda | Tok::LParen => {
                    let next = self.atom()?;
                    acc = NamedTerm::App(Box::new(acc), Box::new(next));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn atom(&mut self) -> Result<NamedTerm, SyntaxError> {
        let s = self.bump();
        match s.tok {
            Tok::Nat(n) => match self.syntax {
                // Indices are smuggled through NamedTerm as synthetic names
                // and resolved by the caller.
                Syntax::DeBruijn => Ok(NamedTerm::Var(format!("#{n}"))),
                Syntax::Named => Err(self.err_at(&s, "numeric literal in named syntax")),
            },
            Tok::Ident(ref x) => match self.syntax {
                Syntax::Named => Ok(NamedTerm::Var(x.clone())),
                Syntax::DeBruijn => {
                    Err(self.err_at(&s, format!("identifier `{x}` in de Bruijn syntax")))
                }
            },
            Tok::Lambda => {
                let name = match self.syntax {
                    Syntax::Named => match self.bump() {
                        Spanned {
                            tok: Tok::Ident(x), ..
                        } => x,
                        other => return Err(self.err_at(&other, "expected binder name after λ")),
                    },
                    Syntax::DeBruijn => String::new(),
                };
                let dot = self.bump();
                if dot.tok != Tok::Dot {
                    return Err(self.err_at(&dot, "expected `.` after binder"));
                }
                let body = self.term()?;
                Ok(NamedTerm::Lam(name, Box::new(body)))
            }
            Tok::LParen => {
                let inner = self.term()?;
                let close = self.bump();
                if close.tok != Tok::RParen {
                    return Err(self.err_at(&close, "expected `)`"));
                }
                Ok(inner)
            }
            Tok::RParen => Err(self.err_at(&s, "unexpected `)`")),
            Tok::Dot => Err(self.err_at(&s, "unexpected `.`")),
            Tok::Eof => Err(self.err_at(&s, "unexpected end of input")),
        }
    }
}

fn parse(src: &str, syntax: Syntax) -> Result<NamedTerm, SyntaxError> {
    let toks = Lexer::new(src).tokens()?;
    let mut p = Parser {
        toks,
        pos: 0,
        syntax,
    };
    let t = p.term()?;
    let last = p.bump();
    if last.tok != Tok::Eof {
        return Err(p.err_at(&last, "trailing input"));
    }
    Ok(t)
}

/// Parse named surface syntax, e.g. `\x. \y. x y`.
pub fn parse_named(src: &str) -> Result<NamedTerm, SyntaxError> {
    parse(src, Syntax::Named)
}

/// Parse de Bruijn surface syntax, e.g. `(\. 0) (\. 0)`.
pub fn parse_debruijn(src: &str) -> Result<TermRef, SyntaxError> {
    fn go(t: &NamedTerm) -> Result<TermRef, SyntaxError> {
        match t {
            NamedTerm::Var(x) => {
                let n: u64 = x[1..].parse().expect("lexer produced the digits");
                Ok(Term::var(n))
            }
            NamedTerm::Lam(_, b) => Ok(Term::lam(go(b)?)),
            NamedTerm::App(f, a) => Ok(Term::app(go(f)?, go(a)?)),
        }
    }
    go(&parse(src, Syntax::DeBruijn)?)
}

/// Parse either syntax into a nameless term; named input is converted and
/// must be closed.
pub fn parse_term(src: &str, syntax: Syntax) -> Result<TermRef, SyntaxError> {
    match syntax {
        Syntax::DeBruijn => parse_debruijn(src),
        Syntax::Named => to_debruijn(&parse_named(src)?),
    }
}

/// Render a nameless term in the requested syntax. Named rendering invents
/// binder names and requires a closed term.
pub fn print_term(t: &Term, syntax: Syntax) -> Result<String, SyntaxError> {
    match syntax {
        Syntax::DeBruijn => Ok(t.to_string()),
        Syntax::Named => Ok(to_named(t)?.to_string()),
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    fn db(src: &str) -> TermRef {
        parse_debruijn(src).unwrap()
    }

    #[test]
    fn parse_named_identity() {
        assert_eq!(
            parse_named("\\x. x").unwrap(),
            NamedTerm::Lam("x".into(), Box::new(NamedTerm::Var("x".into())))
        );
    }

    #[test]
    fn parse_debruijn_self_application_under_lambda() {
        assert_eq!(
            db("\\. 0 0"),
            Term::lam(Term::app(Term::var(0), Term::var(0)))
        );
    }

    #[test]
    fn parse_debruijn_application_of_values() {
        assert_eq!(
            db("(\\. 0) (\\. 0)"),
            Term::app(Term::lam(Term::var(0)), Term::lam(Term::var(0)))
        );
    }

    #[test]
    fn application_is_left_associative() {
        assert_eq!(
            db("\\. 0 0 0"),
            Term::lam(Term::app(
                Term::app(Term::var(0), Term::var(0)),
                Term::var(0)
            ))
        );
    }

    #[test]
    fn lambda_body_extends_right() {
        // \. 0 (\. 0 1) — the inner λ swallows the application.
        let t = db("\\. 0 \\. 0 1");
        assert_eq!(
            t,
            Term::lam(Term::app(
                Term::var(0),
                Term::lam(Term::app(Term::var(0), Term::var(1)))
            ))
        );
    }

    #[test]
    fn comments_and_unicode_lambda() {
        assert_eq!(db("-- a comment\nλ. 0 -- another"), Term::lam(Term::var(0)));
    }

    #[test]
    fn parse_errors_carry_position() {
        match parse_debruijn("\\. (0").unwrap_err() {
            SyntaxError::Parse { line: 1, col, .. } => assert_eq!(col, 6),
            e => panic!("unexpected error {e:?}"),
        }
        match parse_debruijn("99999999999999999999999") {
            Err(SyntaxError::IndexOverflow { .. }) => {}
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn to_debruijn_examples() {
        let t = parse_named("\\x. \\y. x").unwrap();
        assert_eq!(to_debruijn(&t).unwrap(), Term::lam(Term::lam(Term::var(1))));
        let t = parse_named("\\x. x").unwrap();
        assert_eq!(to_debruijn(&t).unwrap(), Term::lam(Term::var(0)));
        let t = parse_named("\\x. y").unwrap();
        assert_eq!(
            to_debruijn(&t).unwrap_err(),
            SyntaxError::UnboundVariable("y".into())
        );
    }

    #[test]
    fn shift_examples() {
        assert_eq!(shift(&Term::var(0), 2, 0), Term::var(2));
        assert_eq!(shift(&Term::var(0), 2, 1), Term::var(0));
        assert_eq!(
            shift(&Term::lam(Term::var(1)), 1, 0),
            Term::lam(Term::var(2))
        );
    }

    #[test]
    fn print_examples() {
        assert_eq!(db("\\. 0").to_string(), "\\. 0");
        assert_eq!(db("(\\. 0) (\\. 0)").to_string(), "(\\. 0) (\\. 0)");
        assert_eq!(db("\\. \\. 1").to_string(), "\\. \\. 1");
    }

    #[test]
    fn free_indices_examples() {
        assert!(db("\\. 0").free_indices().is_empty());
        assert_eq!(
            Term::var(3).free_indices(),
            BTreeSet::from([3u64]),
        );
        assert_eq!(
            Term::lam(Term::var(2)).free_indices(),
            BTreeSet::from([1u64]),
        );
    }

    // Generator for arbitrary (possibly open) small terms.
    pub(crate) fn arb_term() -> impl Strategy<Value = TermRef> {
        let leaf = (0u64..4).prop_map(Term::var);
        leaf.prop_recursive(6, 24, 4, |inner| {
            prop_oneof![
                inner.clone().prop_map(Term::lam),
                (inner.clone(), inner).prop_map(|(f, a)| Term::app(f, a)),
            ]
        })
    }

    proptest! {
        #[test]
        fn shift_zero_is_identity(t in arb_term(), m in 0u64..4) {
            prop_assert_eq!(shift(&t, 0, m), t);
        }

        #[test]
        fn shift_adds(t in arb_term(), a in 0u64..5, b in 0u64..5, m in 0u64..4) {
            prop_assert_eq!(shift(&shift(&t, a, m), b, m), shift(&t, a + b, m));
        }

        #[test]
        fn closed_terms_ignore_shift(t in arb_term(), x in 0u64..5) {
            if t.is_closed() {
                prop_assert_eq!(shift(&t, x, 0), t);
            }
        }

        #[test]
        fn debruijn_print_parse_roundtrip(t in arb_term()) {
            let printed = t.to_string();
            prop_assert_eq!(parse_debruijn(&printed).unwrap(), t);
        }

        #[test]
        fn named_roundtrip_alpha_faithful(t in arb_term()) {
            if t.is_closed() {
                let named = to_named(&t).unwrap();
                prop_assert_eq!(to_debruijn(&named).unwrap(), t.clone());
                let printed = named.to_string();
                let reparsed = parse_named(&printed).unwrap();
                prop_assert_eq!(to_debruijn(&reparsed).unwrap(), t);
            }
        }
    }
}
