//! Concrete syntax: lexer, parser, and pretty-printer.
//!
//! Specification files hold `sig`/`pred`/`fact` declarations with `//`
//! line comments. Operator precedence, tightest first:
//! `~ ^` (unary), `.` and `e2[e1]` (join), `->` (product), `&`, `-`, `+`,
//! then comparisons `in`/`=`/`not in`, `not`, `and`, `or`, `implies`,
//! and quantifiers `all`/`some` loosest. `e2[e1]` desugars to `e1.e2`,
//! `a implies b` to `not a or b`.

use crate::ast::{
    Expr, ExprKind, Fact, FactOrigin, FieldDecl, Formula, Mult, OccTag, Param, Predicate, Quant,
    Signature, Spec,
};
use crate::span::Span;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub msg: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseErrorReport {
    pub errors: Vec<ParseError>,
}

impl fmt::Display for ParseErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{} (at bytes {}..{})", e.msg, e.span.start, e.span.end)?;
        }
        Ok(())
    }
}

fn err<T>(span: Span, msg: impl Into<String>) -> Result<T, ParseErrorReport> {
    Err(ParseErrorReport { errors: vec![ParseError { msg: msg.into(), span }] })
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Str(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBrack,
    RBrack,
    Colon,
    Comma,
    Semi,
    Bar,
    Dot,
    Tilde,
    Caret,
    Plus,
    Minus,
    Amp,
    Eq,
    Arrow,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: Span,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseErrorReport> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
            '/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            '{' | '}' | '(' | ')' | '[' | ']' | ':' | ',' | ';' | '|' | '.' | '~' | '^' | '+'
            | '&' | '=' => {
                let tok = match c {
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '[' => Tok::LBrack,
                    ']' => Tok::RBrack,
                    ':' => Tok::Colon,
                    ',' => Tok::Comma,
                    ';' => Tok::Semi,
                    '|' => Tok::Bar,
                    '.' => Tok::Dot,
                    '~' => Tok::Tilde,
                    '^' => Tok::Caret,
                    '+' => Tok::Plus,
                    '&' => Tok::Amp,
                    '=' => Tok::Eq,
                    _ => unreachable!(),
                };
                i += 1;
                toks.push(Token { tok, span: Span::new(start, i) });
            }
            '-' => {
                if bytes.get(i + 1) == Some(&b'>') {
                    i += 2;
                    toks.push(Token { tok: Tok::Arrow, span: Span::new(start, i) });
                } else {
                    i += 1;
                    toks.push(Token { tok: Tok::Minus, span: Span::new(start, i) });
                }
            }
            '"' => {
                i += 1;
                let s0 = i;
                while i < bytes.len() && bytes[i] != b'"' && bytes[i] != b'\n' {
                    i += 1;
                }
                if i >= bytes.len() || bytes[i] != b'"' {
                    return err(Span::new(start, i), "unterminated string literal");
                }
                let s = text[s0..i].to_string();
                i += 1;
                toks.push(Token { tok: Tok::Str(s), span: Span::new(start, i) });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                i += 1;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                // trailing apostrophes mark primed names
                while i < bytes.len() && bytes[i] == b'\'' {
                    i += 1;
                }
                toks.push(Token {
                    tok: Tok::Ident(text[start..i].to_string()),
                    span: Span::new(start, i),
                });
            }
            _ => return err(Span::new(i, i + 1), format!("unexpected character `{c}`")),
        }
    }
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    end: usize,
    /// Lexical scope for resolving identifiers to variables, with the
    /// fresh name chosen when a binder would shadow an outer one.
    scope: Vec<(String, String)>,
    fresh_counter: u32,
}

impl Parser {
    fn new(toks: Vec<Token>, text_len: usize) -> Self {
        Parser { toks, pos: 0, end: text_len, scope: Vec::new(), fresh_counter: 0 }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|t| &t.tok)
    }

    fn span(&self) -> Span {
        self.toks
            .get(self.pos)
            .map(|t| t.span)
            .unwrap_or_else(|| Span::new(self.end, self.end))
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Span, ParseErrorReport> {
        if self.peek() == Some(&tok) {
            Ok(self.bump().unwrap().span)
        } else {
            err(self.span(), format!("expected {what}"))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, Span), ParseErrorReport> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                let span = self.bump().unwrap().span;
                Ok((s, span))
            }
            _ => err(self.span(), format!("expected {what}")),
        }
    }

    /// Binds `name`, renaming it if it would shadow an in-scope name.
    fn bind(&mut self, name: &str) -> String {
        let taken = self.scope.iter().any(|(_, r)| r == name);
        let bound = if taken {
            loop {
                self.fresh_counter += 1;
                let cand = format!("{}_{}", name.trim_end_matches('\''), self.fresh_counter);
                if !self.scope.iter().any(|(_, r)| r == &cand) {
                    break cand;
                }
            }
        } else {
            name.to_string()
        };
        self.scope.push((name.to_string(), bound.clone()));
        bound
    }

    fn resolve_var(&self, name: &str) -> Option<String> {
        self.scope.iter().rev().find(|(n, _)| n == name).map(|(_, r)| r.clone())
    }

    // -- declarations -------------------------------------------------------

    fn spec(&mut self) -> Result<Spec, ParseErrorReport> {
        let mut spec = Spec::default();
        while self.peek().is_some() {
            if self.eat_kw("sig") {
                spec.sigs.push(self.sig_decl()?);
            } else if self.eat_kw("pred") {
                spec.preds.push(self.pred_decl()?);
            } else if self.eat_kw("fact") {
                spec.facts.push(self.fact_decl()?);
            } else {
                return err(self.span(), "expected `sig`, `pred` or `fact`");
            }
        }
        Ok(spec)
    }

    fn sig_decl(&mut self) -> Result<Signature, ParseErrorReport> {
        let (name, span) = self.expect_ident("signature name")?;
        self.expect(Tok::LBrace, "`{`")?;
        let mut fields = Vec::new();
        while !self.eat(&Tok::RBrace) {
            let (fname, fspan) = self.expect_ident("field name")?;
            self.expect(Tok::Colon, "`:`")?;
            let mut raw_cols = Vec::new();
            let mut mult = Mult::Set;
            loop {
                let m = if self.eat_kw("set") {
                    Some(Mult::Set)
                } else if self.eat_kw("lone") {
                    Some(Mult::Lone)
                } else {
                    None
                };
                let (col, cspan) = self.expect_ident("column type")?;
                raw_cols.push(col);
                if self.eat(&Tok::Arrow) {
                    if m == Some(Mult::Lone) {
                        return err(cspan, "multiplicity is only supported on the last column");
                    }
                    continue;
                }
                if let Some(m) = m {
                    mult = m;
                }
                break;
            }
            let end = self.span();
            fields.push(FieldDecl {
                name: fname,
                raw_cols,
                mult,
                cols: Vec::new(),
                span: fspan.join(end),
            });
            if !self.eat(&Tok::Comma) {
                self.expect(Tok::RBrace, "`,` or `}`")?;
                break;
            }
        }
        Ok(Signature { name, fields, span })
    }

    /// Comma-separated declaration groups: `c, c' : Course, sNew : Student`.
    fn decl_groups(&mut self, terminator: &Tok) -> Result<Vec<Param>, ParseErrorReport> {
        let mut params = Vec::new();
        if self.peek() == Some(terminator) {
            return Ok(params);
        }
        loop {
            let mut names = Vec::new();
            loop {
                let (n, s) = self.expect_ident("parameter name")?;
                names.push((n, s));
                if self.eat(&Tok::Comma) {
                    continue;
                }
                self.expect(Tok::Colon, "`:`")?;
                break;
            }
            let (sig, _) = self.expect_ident("type name")?;
            for (n, s) in names {
                params.push(Param { name: n, sig: sig.clone(), span: s });
            }
            if self.eat(&Tok::Comma) {
                continue;
            }
            break;
        }
        Ok(params)
    }

    fn pred_decl(&mut self) -> Result<Predicate, ParseErrorReport> {
        let (name, span) = self.expect_ident("predicate name")?;
        self.expect(Tok::LParen, "`(`")?;
        let params = self.decl_groups(&Tok::RParen)?;
        self.expect(Tok::RParen, "`)`")?;
        self.expect(Tok::LBrace, "`{`")?;
        let scope_mark = self.scope.len();
        for p in &params {
            self.scope.push((p.name.clone(), p.name.clone()));
        }
        let body = self.formula()?;
        self.scope.truncate(scope_mark);
        self.expect(Tok::RBrace, "`}`")?;
        Ok(Predicate { name, params, body, span })
    }

    fn fact_decl(&mut self) -> Result<Fact, ParseErrorReport> {
        let (name, span) = self.expect_ident("fact name")?;
        self.expect(Tok::LBrace, "`{`")?;
        let body = self.formula()?;
        self.expect(Tok::RBrace, "`}`")?;
        Ok(Fact { name, body, origin: FactOrigin::User, span })
    }

    // -- formulas -----------------------------------------------------------

    fn formula(&mut self) -> Result<Formula, ParseErrorReport> {
        if self.is_kw("all") || self.is_kw("some") {
            return self.quantified();
        }
        self.implies_level()
    }

    fn quantified(&mut self) -> Result<Formula, ParseErrorReport> {
        let universal = self.eat_kw("all");
        if !universal {
            self.eat_kw("some");
        }
        let qspan = self.span();
        // Declaration groups, but the bound is an expression.
        let mut decls: Vec<(String, Span, Expr)> = Vec::new();
        loop {
            let mut names = Vec::new();
            loop {
                let (n, s) = self.expect_ident("bound variable")?;
                names.push((n, s));
                if self.eat(&Tok::Comma) {
                    continue;
                }
                self.expect(Tok::Colon, "`:`")?;
                break;
            }
            let bound = self.expr()?;
            for (n, s) in names {
                decls.push((n, s, bound.clone()));
            }
            if self.eat(&Tok::Comma) {
                continue;
            }
            break;
        }
        let scope_mark = self.scope.len();
        let mut bound_names = Vec::new();
        for (n, _, _) in &decls {
            bound_names.push(self.bind(n));
        }
        let (body, _) = if self.eat(&Tok::Bar) {
            (self.formula()?, false)
        } else {
            self.expect(Tok::LBrace, "`|` or `{`")?;
            let b = self.formula()?;
            self.expect(Tok::RBrace, "`}`")?;
            (b, true)
        };
        self.scope.truncate(scope_mark);
        let mut out = body;
        for (i, (_, s, bound)) in decls.iter().enumerate().rev() {
            let q = Quant {
                var: bound_names[i].clone(),
                bound: bound.clone(),
                body: Box::new(out),
                span: *s,
            };
            out = if universal { Formula::Forall(q) } else { Formula::Exists(q) };
        }
        let _ = qspan;
        Ok(out)
    }

    fn implies_level(&mut self) -> Result<Formula, ParseErrorReport> {
        let lhs = self.or_level()?;
        if self.eat_kw("implies") {
            // right-associative; desugars to `not lhs or rhs`
            let rhs = self.formula()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn or_level(&mut self) -> Result<Formula, ParseErrorReport> {
        let mut f = self.and_level()?;
        while self.eat_kw("or") {
            let rhs = self.and_level()?;
            f = Formula::or(f, rhs);
        }
        Ok(f)
    }

    fn and_level(&mut self) -> Result<Formula, ParseErrorReport> {
        let mut f = self.not_level()?;
        while self.eat_kw("and") {
            let rhs = self.not_level()?;
            f = Formula::and(f, rhs);
        }
        Ok(f)
    }

    fn not_level(&mut self) -> Result<Formula, ParseErrorReport> {
        if self.eat_kw("not") {
            let f = self.not_level()?;
            return Ok(Formula::not(f));
        }
        self.comparison()
    }

    /// True when the parenthesized group starting here contains a
    /// formula-level token at its top nesting level, distinguishing
    /// `(a in b) and c` from `(a + b) in c`.
    fn paren_is_formula(&self) -> bool {
        debug_assert_eq!(self.peek(), Some(&Tok::LParen));
        let mut depth = 0usize;
        for t in &self.toks[self.pos..] {
            match &t.tok {
                Tok::LParen | Tok::LBrack => depth += 1,
                Tok::RParen | Tok::RBrack => {
                    if depth == 0 {
                        return false;
                    }
                    depth -= 1;
                    if depth == 0 {
                        return false;
                    }
                }
                Tok::Eq => return true,
                Tok::Ident(s)
                    if matches!(
                        s.as_str(),
                        "in" | "not" | "and" | "or" | "implies" | "all" | "some"
                    ) =>
                {
                    return true;
                }
                _ => {}
            }
        }
        false
    }

    fn comparison(&mut self) -> Result<Formula, ParseErrorReport> {
        if self.peek() == Some(&Tok::LParen) && self.paren_is_formula() {
            self.bump();
            let f = self.formula()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(f);
        }
        if self.is_kw("all") || self.is_kw("some") {
            return self.quantified();
        }
        let lhs = self.expr()?;
        if self.eat(&Tok::Eq) {
            let rhs = self.expr()?;
            return Ok(Formula::Eq(lhs, rhs));
        }
        if self.eat_kw("in") {
            let rhs = self.expr()?;
            return Ok(Formula::In(lhs, rhs));
        }
        if self.is_kw("not") && matches!(self.peek2(), Some(Tok::Ident(s)) if s == "in") {
            self.bump();
            self.bump();
            let rhs = self.expr()?;
            return Ok(Formula::not(Formula::In(lhs, rhs)));
        }
        err(self.span(), "expected `in`, `not in` or `=`")
    }

    // -- expressions --------------------------------------------------------

    fn expr(&mut self) -> Result<Expr, ParseErrorReport> {
        let mut e = self.diff_level()?;
        while self.eat(&Tok::Plus) {
            let rhs = self.diff_level()?;
            let span = e.span.join(rhs.span);
            e = Expr { kind: ExprKind::Union(Box::new(e), Box::new(rhs)), ty: vec![], span };
        }
        Ok(e)
    }

    fn diff_level(&mut self) -> Result<Expr, ParseErrorReport> {
        let mut e = self.isect_level()?;
        while self.eat(&Tok::Minus) {
            let rhs = self.isect_level()?;
            let span = e.span.join(rhs.span);
            e = Expr { kind: ExprKind::Diff(Box::new(e), Box::new(rhs)), ty: vec![], span };
        }
        Ok(e)
    }

    fn isect_level(&mut self) -> Result<Expr, ParseErrorReport> {
        let mut e = self.product_level()?;
        while self.eat(&Tok::Amp) {
            let rhs = self.product_level()?;
            let span = e.span.join(rhs.span);
            e = Expr { kind: ExprKind::Intersect(Box::new(e), Box::new(rhs)), ty: vec![], span };
        }
        Ok(e)
    }

    fn product_level(&mut self) -> Result<Expr, ParseErrorReport> {
        let first = self.join_level()?;
        if self.peek() != Some(&Tok::Arrow) {
            return Ok(first);
        }
        let mut parts = vec![first];
        while self.eat(&Tok::Arrow) {
            parts.push(self.join_level()?);
        }
        let mut e = parts.pop().unwrap();
        while let Some(lhs) = parts.pop() {
            let span = lhs.span.join(e.span);
            e = Expr { kind: ExprKind::Product(Box::new(lhs), Box::new(e)), ty: vec![], span };
        }
        Ok(e)
    }

    fn join_level(&mut self) -> Result<Expr, ParseErrorReport> {
        let mut e = self.unary_level()?;
        loop {
            if self.eat(&Tok::Dot) {
                let rhs = self.unary_level()?;
                let span = e.span.join(rhs.span);
                e = Expr { kind: ExprKind::Join(Box::new(e), Box::new(rhs)), ty: vec![], span };
            } else if self.eat(&Tok::LBrack) {
                // e[x] is x.e
                let arg = self.expr()?;
                let close = self.expect(Tok::RBrack, "`]`")?;
                let span = e.span.join(close);
                e = Expr { kind: ExprKind::Join(Box::new(arg), Box::new(e)), ty: vec![], span };
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn unary_level(&mut self) -> Result<Expr, ParseErrorReport> {
        if self.peek() == Some(&Tok::Tilde) {
            let s = self.bump().unwrap().span;
            let e = self.unary_level()?;
            let span = s.join(e.span);
            return Ok(Expr { kind: ExprKind::Converse(Box::new(e)), ty: vec![], span });
        }
        if self.peek() == Some(&Tok::Caret) {
            let s = self.bump().unwrap().span;
            let e = self.unary_level()?;
            let span = s.join(e.span);
            return Ok(Expr { kind: ExprKind::Closure(Box::new(e)), ty: vec![], span });
        }
        self.atom_expr()
    }

    fn atom_expr(&mut self) -> Result<Expr, ParseErrorReport> {
        if self.eat(&Tok::LParen) {
            let e = self.expr()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(e);
        }
        match self.peek() {
            Some(Tok::Ident(s)) if s == "none" => {
                let span = self.bump().unwrap().span;
                Ok(Expr { kind: ExprKind::None, ty: vec![], span })
            }
            Some(Tok::Ident(_)) => {
                let (name, span) = self.expect_ident("expression")?;
                let kind = match self.resolve_var(&name) {
                    Some(bound) => ExprKind::Var(bound),
                    None => ExprKind::Rel(name, OccTag::Immutable),
                };
                Ok(Expr { kind, ty: vec![], span })
            }
            _ => err(self.span(), "expected an expression"),
        }
    }
}

/// Parses a specification file.
pub fn parse_spec(text: &str) -> Result<Spec, ParseErrorReport> {
    let toks = lex(text)?;
    let mut p = Parser::new(toks, text.len());
    p.spec()
}

/// Parses a single formula against an ambient variable scope (used by
/// tests and the normalizer's golden fixtures).
pub fn parse_formula(text: &str, vars: &[&str]) -> Result<Formula, ParseErrorReport> {
    let toks = lex(text)?;
    let mut p = Parser::new(toks, text.len());
    for v in vars {
        p.scope.push((v.to_string(), v.to_string()));
    }
    let f = p.formula()?;
    if p.peek().is_some() {
        return err(p.span(), "trailing input after formula");
    }
    Ok(f)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// One REPL or script command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    /// `pete = CreateStudent("Pete")`
    CreateAtom { bind: String, sig: String, label: String },
    /// `Enroll(cs311, pete)`
    Invoke { pred: String, args: Vec<String> },
    /// `show roster`
    Show(String),
    /// `snapshot out.db`
    Snapshot(String),
    Quit,
}

/// Parses one command line; `None` for blank lines and comments.
/// Lines may end with `;` and may carry `//` or `#` comments.
pub fn parse_command(line: &str) -> Result<Option<Command>, ParseErrorReport> {
    // strip comments outside string literals
    let mut cut = line.len();
    let bytes = line.as_bytes();
    let mut in_str = false;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => in_str = !in_str,
            b'#' if !in_str => {
                cut = i;
                break;
            }
            b'/' if !in_str && bytes.get(i + 1) == Some(&b'/') => {
                cut = i;
                break;
            }
            _ => {}
        }
        i += 1;
    }
    let line = &line[..cut];
    if line.trim().is_empty() {
        return Ok(None);
    }

    let toks = lex(line)?;
    let mut p = Parser::new(toks, line.len());

    if p.eat_kw("quit") || p.eat_kw("exit") {
        p.eat(&Tok::Semi);
        return Ok(Some(Command::Quit));
    }
    if p.eat_kw("show") {
        let (name, _) = p.expect_ident("relation name")?;
        p.eat(&Tok::Semi);
        return Ok(Some(Command::Show(name)));
    }
    if p.eat_kw("snapshot") {
        let path = match p.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                p.bump();
                s
            }
            Some(Tok::Ident(_)) => {
                // bare path: take the untokenized remainder of the line
                let start = p.span().start;
                let rest = line[start..].trim().trim_end_matches(';').trim().to_string();
                p.pos = p.toks.len();
                rest
            }
            _ => return err(p.span(), "expected a path"),
        };
        p.eat(&Tok::Semi);
        return Ok(Some(Command::Snapshot(path)));
    }

    let (first, first_span) = p.expect_ident("command")?;
    if p.eat(&Tok::Eq) {
        // bind = CreateSig("label")
        let (callee, cspan) = p.expect_ident("constructor call")?;
        let sig = match callee.strip_prefix("Create") {
            Some(s) if !s.is_empty() => s.to_string(),
            _ => return err(cspan, "expected `Create<Sig>(\"label\")`"),
        };
        p.expect(Tok::LParen, "`(`")?;
        let label = match p.bump() {
            Some(Token { tok: Tok::Str(s), .. }) => s,
            t => {
                return err(
                    t.map(|t| t.span).unwrap_or(cspan),
                    "expected a quoted label",
                )
            }
        };
        p.expect(Tok::RParen, "`)`")?;
        p.eat(&Tok::Semi);
        if p.peek().is_some() {
            return err(p.span(), "trailing input after command");
        }
        return Ok(Some(Command::CreateAtom { bind: first, sig, label }));
    }
    if p.eat(&Tok::LParen) {
        let mut args = Vec::new();
        if !p.eat(&Tok::RParen) {
            loop {
                let (a, _) = p.expect_ident("argument")?;
                args.push(a);
                if p.eat(&Tok::Comma) {
                    continue;
                }
                p.expect(Tok::RParen, "`)`")?;
                break;
            }
        }
        p.eat(&Tok::Semi);
        if p.peek().is_some() {
            return err(p.span(), "trailing input after command");
        }
        return Ok(Some(Command::Invoke { pred: first, args }));
    }
    err(first_span, format!("cannot parse command starting with `{first}`"))
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn expr_prec(e: &ExprKind) -> u8 {
    match e {
        ExprKind::Rel(..) | ExprKind::Var(_) | ExprKind::None => 7,
        ExprKind::Converse(_) | ExprKind::Closure(_) => 6,
        ExprKind::Join(..) => 5,
        ExprKind::Product(..) => 4,
        ExprKind::Intersect(..) => 3,
        ExprKind::Diff(..) => 2,
        ExprKind::Union(..) => 1,
    }
}

fn render_expr_prec(e: &Expr, min: u8, out: &mut String) {
    let prec = expr_prec(&e.kind);
    let parens = prec < min;
    if parens {
        out.push('(');
    }
    match &e.kind {
        ExprKind::Rel(name, _) => out.push_str(name),
        ExprKind::Var(name) => out.push_str(name),
        ExprKind::None => out.push_str("none"),
        ExprKind::Union(a, b) => {
            render_expr_prec(a, 1, out);
            out.push_str(" + ");
            render_expr_prec(b, 2, out);
        }
        ExprKind::Diff(a, b) => {
            render_expr_prec(a, 2, out);
            out.push_str(" - ");
            render_expr_prec(b, 3, out);
        }
        ExprKind::Intersect(a, b) => {
            render_expr_prec(a, 3, out);
            out.push_str(" & ");
            render_expr_prec(b, 4, out);
        }
        ExprKind::Product(a, b) => {
            render_expr_prec(a, 5, out);
            out.push_str(" -> ");
            render_expr_prec(b, 4, out);
        }
        ExprKind::Join(a, b) => {
            render_expr_prec(a, 5, out);
            out.push('.');
            render_expr_prec(b, 6, out);
        }
        ExprKind::Converse(a) => {
            out.push('~');
            render_expr_prec(a, 6, out);
        }
        ExprKind::Closure(a) => {
            out.push('^');
            render_expr_prec(a, 6, out);
        }
    }
    if parens {
        out.push(')');
    }
}

/// Renders an expression in the concrete syntax.
pub fn render_expr(e: &Expr) -> String {
    let mut s = String::new();
    render_expr_prec(e, 0, &mut s);
    s
}

fn formula_prec(f: &Formula) -> u8 {
    match f {
        Formula::In(..) | Formula::Eq(..) => 4,
        Formula::Not(_) => 3,
        Formula::And(..) => 2,
        Formula::Or(..) => 1,
        Formula::Forall(_) | Formula::Exists(_) => 0,
    }
}

fn render_formula_prec(f: &Formula, min: u8, out: &mut String) {
    let prec = formula_prec(f);
    let parens = prec < min;
    if parens {
        out.push('(');
    }
    match f {
        Formula::In(a, b) => {
            render_expr_prec(a, 1, out);
            out.push_str(" in ");
            render_expr_prec(b, 1, out);
        }
        Formula::Eq(a, b) => {
            render_expr_prec(a, 1, out);
            out.push_str(" = ");
            render_expr_prec(b, 1, out);
        }
        Formula::Not(g) => {
            out.push_str("not ");
            render_formula_prec(g, 3, out);
        }
        Formula::And(a, b) => {
            render_formula_prec(a, 2, out);
            out.push_str(" and ");
            render_formula_prec(b, 3, out);
        }
        Formula::Or(a, b) => {
            render_formula_prec(a, 1, out);
            out.push_str(" or ");
            render_formula_prec(b, 2, out);
        }
        Formula::Forall(q) | Formula::Exists(q) => {
            out.push_str(if matches!(f, Formula::Forall(_)) { "all " } else { "some " });
            out.push_str(&q.var);
            out.push_str(": ");
            render_expr_prec(&q.bound, 1, out);
            out.push_str(" | ");
            render_formula_prec(&q.body, 0, out);
        }
    }
    if parens {
        out.push(')');
    }
}

/// Renders a formula in the concrete syntax.
pub fn render_formula(f: &Formula) -> String {
    let mut s = String::new();
    render_formula_prec(f, 0, &mut s);
    s
}

/// Pretty-prints a specification so that it re-parses to a structurally
/// identical AST. Generated facts are internal and not printed.
pub fn render_spec(spec: &Spec) -> String {
    let mut out = String::new();
    for sig in &spec.sigs {
        if sig.fields.is_empty() {
            out.push_str(&format!("sig {} {{}}\n", sig.name));
            continue;
        }
        out.push_str(&format!("sig {} {{\n", sig.name));
        for (i, f) in sig.fields.iter().enumerate() {
            out.push_str(&format!("  {} : ", f.name));
            for (j, c) in f.raw_cols.iter().enumerate() {
                if j > 0 {
                    out.push_str(" -> ");
                }
                if j == f.raw_cols.len() - 1 && f.mult == Mult::Lone {
                    out.push_str("lone ");
                }
                out.push_str(c);
            }
            out.push_str(if i + 1 < sig.fields.len() { ",\n" } else { "\n" });
        }
        out.push_str("}\n");
    }
    for p in &spec.preds {
        out.push_str(&format!("pred {} (", p.name));
        for (i, q) in p.params.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(&format!("{} : {}", q.name, q.sig));
        }
        out.push_str(") {\n  ");
        out.push_str(&render_formula(&p.body));
        out.push_str("\n}\n");
    }
    for f in &spec.facts {
        if f.origin == FactOrigin::Generated {
            continue;
        }
        out.push_str(&format!("fact {} {{\n  ", f.name));
        out.push_str(&render_formula(&f.body));
        out.push_str("\n}\n");
    }
    out
}
