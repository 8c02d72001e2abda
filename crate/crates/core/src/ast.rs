//! Abstract syntax and well-formedness for the kernel specification
//! language.
//!
//! A specification is a set of signatures (each a named atom set with
//! relation-valued fields), predicates over a distinguished pre/post state
//! pair, and facts (closed axioms). Everything denotes a relation; an
//! expression carries its derived column-type sequence after `check_spec`.

use crate::span::Span;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Column-type sequence of an expression: one signature name per column.
pub type ColTypes = Vec<String>;

/// Multiplicity keyword on the last column of a field declaration.
///
/// Both desugar into facts: `set` is a no-op, `lone` generates a
/// uniqueness fact over the last column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mult {
    Set,
    Lone,
}

/// A field declaration inside a signature.
///
/// `raw_cols` is the declaration as written; a column reference may name
/// another field of the same signature (a domain-restricted declaration),
/// which is flattened into signature names in `cols` with the restriction
/// emitted as a generated fact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDecl {
    pub name: String,
    pub raw_cols: Vec<String>,
    pub mult: Mult,
    /// Resolved column types including the owner signature as column 0.
    /// Empty until `check_spec` runs.
    pub cols: ColTypes,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub name: String,
    pub fields: Vec<FieldDecl>,
    pub span: Span,
}

/// How a relation-name occurrence is evaluated during a transaction.
///
/// `Post` occurrences read (and may write) the working post-instance;
/// `Pre` and `Immutable` occurrences read the pre-instance and are never
/// written. Occurrences are `Immutable` until the normalizer resolves the
/// state-variable root of each occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OccTag {
    #[default]
    Immutable,
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprKind {
    /// A relation name: a signature's atom set or a declared field.
    Rel(String, OccTag),
    Var(String),
    /// The empty relation; its column types come from context.
    None,
    Union(Box<Expr>, Box<Expr>),
    Intersect(Box<Expr>, Box<Expr>),
    Diff(Box<Expr>, Box<Expr>),
    Join(Box<Expr>, Box<Expr>),
    Product(Box<Expr>, Box<Expr>),
    Converse(Box<Expr>),
    /// Strict transitive closure of a homogeneous binary expression.
    Closure(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expr {
    pub kind: ExprKind,
    /// Derived column-type sequence; empty until typed.
    pub ty: ColTypes,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quant {
    pub var: String,
    pub bound: Expr,
    pub body: Box<Formula>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Formula {
    In(Expr, Expr),
    Eq(Expr, Expr),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Forall(Quant),
    Exists(Quant),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub sig: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predicate {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Formula,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactOrigin {
    User,
    /// Desugared from a multiplicity keyword or a domain-restricted field.
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fact {
    pub name: String,
    pub body: Formula,
    pub origin: FactOrigin,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Spec {
    pub sigs: Vec<Signature>,
    pub preds: Vec<Predicate>,
    pub facts: Vec<Fact>,
    /// The distinguished state signature, inferred by `check_spec` from
    /// the predicates' primed parameters.
    pub state_sig: Option<String>,
}

/// `true` for the post-state spelling of a variable (`c'`).
pub fn is_primed(name: &str) -> bool {
    name.ends_with('\'')
}

// ---------------------------------------------------------------------------
// Expression constructors
// ---------------------------------------------------------------------------

impl Expr {
    pub fn rel(name: impl Into<String>, tag: OccTag, ty: ColTypes) -> Expr {
        Expr { kind: ExprKind::Rel(name.into(), tag), ty, span: Span::default() }
    }

    pub fn var(name: impl Into<String>, sig: impl Into<String>) -> Expr {
        Expr { kind: ExprKind::Var(name.into()), ty: vec![sig.into()], span: Span::default() }
    }

    pub fn none(ty: ColTypes) -> Expr {
        Expr { kind: ExprKind::None, ty, span: Span::default() }
    }

    pub fn union(a: Expr, b: Expr) -> Expr {
        debug_assert_eq!(a.ty, b.ty);
        let ty = a.ty.clone();
        Expr { kind: ExprKind::Union(Box::new(a), Box::new(b)), ty, span: Span::default() }
    }

    pub fn intersect(a: Expr, b: Expr) -> Expr {
        debug_assert_eq!(a.ty, b.ty);
        let ty = a.ty.clone();
        Expr { kind: ExprKind::Intersect(Box::new(a), Box::new(b)), ty, span: Span::default() }
    }

    pub fn diff(a: Expr, b: Expr) -> Expr {
        debug_assert_eq!(a.ty, b.ty);
        let ty = a.ty.clone();
        Expr { kind: ExprKind::Diff(Box::new(a), Box::new(b)), ty, span: Span::default() }
    }

    pub fn join(a: Expr, b: Expr) -> Expr {
        debug_assert!(!a.ty.is_empty() && !b.ty.is_empty());
        debug_assert_eq!(a.ty.last(), b.ty.first());
        let mut ty = a.ty[..a.ty.len() - 1].to_vec();
        ty.extend_from_slice(&b.ty[1..]);
        debug_assert!(!ty.is_empty());
        Expr { kind: ExprKind::Join(Box::new(a), Box::new(b)), ty, span: Span::default() }
    }

    pub fn product(a: Expr, b: Expr) -> Expr {
        let mut ty = a.ty.clone();
        ty.extend_from_slice(&b.ty);
        Expr { kind: ExprKind::Product(Box::new(a), Box::new(b)), ty, span: Span::default() }
    }

    pub fn converse(a: Expr) -> Expr {
        debug_assert_eq!(a.ty.len(), 2);
        let ty = vec![a.ty[1].clone(), a.ty[0].clone()];
        Expr { kind: ExprKind::Converse(Box::new(a)), ty, span: Span::default() }
    }

    pub fn closure(a: Expr) -> Expr {
        debug_assert_eq!(a.ty.len(), 2);
        debug_assert_eq!(a.ty[0], a.ty[1]);
        let ty = a.ty.clone();
        Expr { kind: ExprKind::Closure(Box::new(a)), ty, span: Span::default() }
    }

    pub fn arity(&self) -> usize {
        self.ty.len()
    }

    /// The variable name if this is a variable occurrence.
    pub fn as_var(&self) -> Option<&str> {
        match &self.kind {
            ExprKind::Var(v) => Some(v),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Formula utilities
// ---------------------------------------------------------------------------

impl Formula {
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    /// `a implies b` as the kernel has no implication connective.
    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::or(Formula::not(a), b)
    }

    pub fn forall(var: impl Into<String>, bound: Expr, body: Formula) -> Formula {
        Formula::Forall(Quant {
            var: var.into(),
            bound,
            body: Box::new(body),
            span: Span::default(),
        })
    }

    pub fn exists(var: impl Into<String>, bound: Expr, body: Formula) -> Formula {
        Formula::Exists(Quant {
            var: var.into(),
            bound,
            body: Box::new(body),
            span: Span::default(),
        })
    }
}

/// Free variables of a formula, bound by `Forall`/`Exists` only.
pub fn free_vars(f: &Formula) -> BTreeSet<String> {
    fn expr_vars(e: &Expr, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match &e.kind {
            ExprKind::Var(v) => {
                if !bound.iter().any(|b| b == v) {
                    out.insert(v.clone());
                }
            }
            ExprKind::Rel(..) | ExprKind::None => {}
            ExprKind::Union(a, b)
            | ExprKind::Intersect(a, b)
            | ExprKind::Diff(a, b)
            | ExprKind::Join(a, b)
            | ExprKind::Product(a, b) => {
                expr_vars(a, bound, out);
                expr_vars(b, bound, out);
            }
            ExprKind::Converse(a) | ExprKind::Closure(a) => expr_vars(a, bound, out),
        }
    }
    fn walk(f: &Formula, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match f {
            Formula::In(a, b) | Formula::Eq(a, b) => {
                expr_vars(a, bound, out);
                expr_vars(b, bound, out);
            }
            Formula::Not(g) => walk(g, bound, out),
            Formula::And(a, b) | Formula::Or(a, b) => {
                walk(a, bound, out);
                walk(b, bound, out);
            }
            Formula::Forall(q) | Formula::Exists(q) => {
                expr_vars(&q.bound, bound, out);
                bound.push(q.var.clone());
                walk(&q.body, bound, out);
                bound.pop();
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(f, &mut Vec::new(), &mut out);
    out
}

/// Replaces every occurrence of variable `target` with `replacement`.
///
/// Callers must ensure no capture can occur; bound variable names are
/// fresh within a formula, so substituting a parameter or a fresh term is
/// always safe.
pub fn substitute_var(f: &mut Formula, target: &str, replacement: &Expr) {
    fn in_expr(e: &mut Expr, target: &str, replacement: &Expr) {
        if e.as_var() == Some(target) {
            let span = e.span;
            *e = replacement.clone();
            e.span = span;
            return;
        }
        match &mut e.kind {
            ExprKind::Rel(..) | ExprKind::Var(_) | ExprKind::None => {}
            ExprKind::Union(a, b)
            | ExprKind::Intersect(a, b)
            | ExprKind::Diff(a, b)
            | ExprKind::Join(a, b)
            | ExprKind::Product(a, b) => {
                in_expr(a, target, replacement);
                in_expr(b, target, replacement);
            }
            ExprKind::Converse(a) | ExprKind::Closure(a) => in_expr(a, target, replacement),
        }
    }
    match f {
        Formula::In(a, b) | Formula::Eq(a, b) => {
            in_expr(a, target, replacement);
            in_expr(b, target, replacement);
        }
        Formula::Not(g) => substitute_var(g, target, replacement),
        Formula::And(a, b) | Formula::Or(a, b) => {
            substitute_var(a, target, replacement);
            substitute_var(b, target, replacement);
        }
        Formula::Forall(q) | Formula::Exists(q) => {
            in_expr(&mut q.bound, target, replacement);
            if q.var != target {
                substitute_var(&mut q.body, target, replacement);
            }
        }
    }
}

/// Renames every bound variable using `fresh`, leaving free variables
/// untouched. Used when conjoining fact bodies onto a predicate body.
pub fn refresh_bound_vars(f: &mut Formula, fresh: &mut impl FnMut(&str) -> String) {
    match f {
        Formula::In(..) | Formula::Eq(..) => {}
        Formula::Not(g) => refresh_bound_vars(g, fresh),
        Formula::And(a, b) | Formula::Or(a, b) => {
            refresh_bound_vars(a, fresh);
            refresh_bound_vars(b, fresh);
        }
        Formula::Forall(q) | Formula::Exists(q) => {
            let new_name = fresh(&q.var);
            if new_name != q.var {
                let replacement = Expr::var(new_name.clone(), q.bound.ty.first().cloned().unwrap_or_default());
                substitute_var(&mut q.body, &q.var, &replacement);
                q.var = new_name;
            }
            refresh_bound_vars(&mut q.body, fresh);
        }
    }
}

// ---------------------------------------------------------------------------
// State-occurrence resolution
// ---------------------------------------------------------------------------

/// Tags relation occurrences by the state variable that roots them.
///
/// In `s.r` the occurrence of `r` is joined, at its first column, to the
/// state variable `s`, so it reads the instance that `s` designates. The
/// root survives set operators and the left operands of joins and
/// products; converse and closure reorder columns, so rooting does not
/// pass through them. Occurrences with no state-variable root keep the
/// `Immutable` tag and read the pre-instance.
pub fn tag_state_occurrences(e: &mut Expr, side_of: &dyn Fn(&str) -> Option<OccTag>) {
    fn apply(e: &mut Expr, tag: OccTag) {
        match &mut e.kind {
            ExprKind::Rel(_, t) => *t = tag,
            ExprKind::Var(_) | ExprKind::None => {}
            ExprKind::Union(a, b) | ExprKind::Intersect(a, b) | ExprKind::Diff(a, b) => {
                apply(a, tag);
                apply(b, tag);
            }
            ExprKind::Join(a, _) | ExprKind::Product(a, _) => apply(a, tag),
            ExprKind::Converse(_) | ExprKind::Closure(_) => {}
        }
    }
    // Walk every node; a join whose left operand is a state variable
    // roots its right operand.
    match &mut e.kind {
        ExprKind::Join(a, b) => {
            if let Some(tag) = a.as_var().and_then(side_of) {
                apply(b, tag);
            }
            tag_state_occurrences(a, side_of);
            tag_state_occurrences(b, side_of);
        }
        ExprKind::Union(a, b)
        | ExprKind::Intersect(a, b)
        | ExprKind::Diff(a, b)
        | ExprKind::Product(a, b) => {
            tag_state_occurrences(a, side_of);
            tag_state_occurrences(b, side_of);
        }
        ExprKind::Converse(a) | ExprKind::Closure(a) => tag_state_occurrences(a, side_of),
        ExprKind::Rel(..) | ExprKind::Var(_) | ExprKind::None => {}
    }
}

/// Applies `tag_state_occurrences` to every expression of a formula.
pub fn tag_formula_occurrences(f: &mut Formula, side_of: &dyn Fn(&str) -> Option<OccTag>) {
    match f {
        Formula::In(a, b) | Formula::Eq(a, b) => {
            tag_state_occurrences(a, side_of);
            tag_state_occurrences(b, side_of);
        }
        Formula::Not(g) => tag_formula_occurrences(g, side_of),
        Formula::And(a, b) | Formula::Or(a, b) => {
            tag_formula_occurrences(a, side_of);
            tag_formula_occurrences(b, side_of);
        }
        Formula::Forall(q) | Formula::Exists(q) => {
            tag_state_occurrences(&mut q.bound, side_of);
            tag_formula_occurrences(&mut q.body, side_of);
        }
    }
}

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelKind {
    SigUniverse,
    Field { owner: String, mult: Mult },
    Skolem,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelInfo {
    pub cols: ColTypes,
    pub mutable: bool,
    pub kind: RelKind,
}

/// Relation namespace of a checked specification: signature atom sets and
/// field relations. A relation is mutable iff it is a field of the state
/// signature (Skolem relations added by the normalizer are also mutable).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schema {
    pub rels: BTreeMap<String, RelInfo>,
}

impl Schema {
    pub fn rel(&self, name: &str) -> Option<&RelInfo> {
        self.rels.get(name)
    }

    pub fn is_mutable(&self, name: &str) -> bool {
        self.rels.get(name).map(|r| r.mutable).unwrap_or(false)
    }

    /// Field relations (relations with stored tuples), in name order.
    pub fn field_rels(&self) -> impl Iterator<Item = (&String, &RelInfo)> {
        self.rels.iter().filter(|(_, i)| !matches!(i.kind, RelKind::SigUniverse))
    }

    pub fn mutable_rels(&self) -> impl Iterator<Item = (&String, &RelInfo)> {
        self.rels.iter().filter(|(_, i)| i.mutable)
    }
}

/// A specification that passed `check_spec`: every expression is typed,
/// multiplicities and domain restrictions are desugared into facts, and
/// the state signature is resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckedSpec {
    pub spec: Spec,
    pub schema: Schema,
}

impl CheckedSpec {
    pub fn state_sig(&self) -> Option<&str> {
        self.spec.state_sig.as_deref()
    }

    pub fn sig(&self, name: &str) -> Option<&Signature> {
        self.spec.sigs.iter().find(|s| s.name == name)
    }

    pub fn predicate(&self, name: &str) -> Option<&Predicate> {
        self.spec.preds.iter().find(|p| p.name == name)
    }

    /// The unprimed and primed state parameters of a predicate.
    pub fn state_params<'p>(&self, p: &'p Predicate) -> Option<(&'p str, &'p str)> {
        let state = self.state_sig()?;
        let unprimed = p.params.iter().find(|q| q.sig == state && !is_primed(&q.name))?;
        let primed = p.params.iter().find(|q| q.sig == state && is_primed(&q.name))?;
        Some((&unprimed.name, &primed.name))
    }
}

// ---------------------------------------------------------------------------
// Type errors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeError {
    pub msg: String,
    pub span: Span,
}

impl fmt::Display for TypeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (at bytes {}..{})", self.msg, self.span.start, self.span.end)
    }
}

/// All well-formedness violations found in one pass over a specification.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct TypeErrorReport {
    pub errors: Vec<TypeError>,
}

impl fmt::Display for TypeErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

struct Checker {
    errors: Vec<TypeError>,
    sig_names: BTreeSet<String>,
    schema: Schema,
    state_sig: Option<String>,
}

impl Checker {
    fn err(&mut self, span: Span, msg: impl Into<String>) {
        self.errors.push(TypeError { msg: msg.into(), span });
    }
}

/// Validates and annotates a parsed specification.
///
/// On success every expression carries its column-type sequence, the state
/// signature is resolved, and multiplicity/domain desugarings appear as
/// generated facts. Idempotent: checking a checked spec is the identity.
pub fn check_spec(raw: Spec) -> Result<CheckedSpec, TypeErrorReport> {
    let mut spec = raw;
    let mut ck = Checker {
        errors: Vec::new(),
        sig_names: BTreeSet::new(),
        schema: Schema::default(),
        state_sig: None,
    };

    // Signature names.
    for sig in &spec.sigs {
        if !ck.sig_names.insert(sig.name.clone()) {
            ck.err(sig.span, format!("duplicate signature name `{}`", sig.name));
        }
    }
    for sig in &spec.sigs {
        ck.schema.rels.insert(
            sig.name.clone(),
            RelInfo { cols: vec![sig.name.clone()], mutable: false, kind: RelKind::SigUniverse },
        );
    }

    // Resolve fields. A raw column may reference a sig or an
    // earlier-declared field of the same signature (spliced to its
    // column tail, with the domain restriction emitted as a fact below).
    let mut field_names: BTreeSet<String> = BTreeSet::new();
    for si in 0..spec.sigs.len() {
        for fi in 0..spec.sigs[si].fields.len() {
            let owner = spec.sigs[si].name.clone();
            let field = spec.sigs[si].fields[fi].clone();
            if ck.sig_names.contains(&field.name) || !field_names.insert(field.name.clone()) {
                ck.err(field.span, format!("duplicate relation name `{}`", field.name));
                continue;
            }
            let mut cols: ColTypes = vec![owner.clone()];
            let mut ok = true;
            for rc in &field.raw_cols {
                if ck.sig_names.contains(rc) {
                    cols.push(rc.clone());
                } else if let Some(prev) = spec.sigs[si].fields[..fi].iter().find(|f| &f.name == rc)
                {
                    if prev.cols.is_empty() {
                        ok = false; // previous field failed to resolve
                    } else {
                        cols.extend_from_slice(&prev.cols[1..]);
                    }
                } else {
                    ck.err(field.span, format!("unknown type `{rc}` in field `{}`", field.name));
                    ok = false;
                }
            }
            if ok {
                spec.sigs[si].fields[fi].cols = cols.clone();
                ck.schema.rels.insert(
                    field.name.clone(),
                    RelInfo {
                        cols,
                        mutable: false, // fixed up once the state sig is known
                        kind: RelKind::Field { owner, mult: field.mult },
                    },
                );
            }
        }
    }

    // Predicate headers: resolve the state signature from the primed
    // parameter of each predicate; all predicates must agree.
    let mut pred_names = BTreeSet::new();
    for p in &spec.preds {
        if !pred_names.insert(p.name.clone()) {
            ck.err(p.span, format!("duplicate predicate name `{}`", p.name));
        }
        let mut seen = BTreeSet::new();
        for q in &p.params {
            if !seen.insert(q.name.clone()) {
                ck.err(q.span, format!("duplicate parameter `{}` in `{}`", q.name, p.name));
            }
            if !ck.sig_names.contains(&q.sig) {
                ck.err(q.span, format!("unknown type `{}` for parameter `{}`", q.sig, q.name));
            }
        }
        let primed: Vec<&Param> = p.params.iter().filter(|q| is_primed(&q.name)).collect();
        match primed.as_slice() {
            [post] => {
                let base = post.name.trim_end_matches('\'');
                let pre = p.params.iter().find(|q| q.name == base && q.sig == post.sig);
                if pre.is_none() {
                    ck.err(
                        post.span,
                        format!("primed parameter `{}` has no unprimed counterpart", post.name),
                    );
                }
                match &ck.state_sig {
                    None => ck.state_sig = Some(post.sig.clone()),
                    Some(s) if *s == post.sig => {}
                    Some(s) => ck.err(
                        p.span,
                        format!(
                            "state signature mismatch: `{}` uses `{}` but `{}` was inferred",
                            p.name, post.sig, s
                        ),
                    ),
                }
            }
            [] => ck.err(p.span, format!("predicate `{}` has no primed state parameter", p.name)),
            _ => ck.err(p.span, format!("predicate `{}` has several primed parameters", p.name)),
        }
    }
    if ck.state_sig.is_none() {
        // No predicates to infer from; fall back to a sig literally
        // named State when present.
        if ck.sig_names.contains("State") {
            ck.state_sig = Some("State".to_string());
        }
    }
    if let Some(state) = ck.state_sig.clone() {
        for p in &spec.preds {
            let of_state = p.params.iter().filter(|q| q.sig == state).count();
            if of_state != 2 {
                ck.err(
                    p.span,
                    format!(
                        "predicate `{}` must have exactly two `{state}` parameters, found {of_state}",
                        p.name
                    ),
                );
            }
            for q in &p.params {
                if is_primed(&q.name) && q.sig != state {
                    ck.err(q.span, format!("primed parameter `{}` is not state-typed", q.name));
                }
            }
        }
        for name in ck.schema.rels.values_mut() {
            if let RelKind::Field { owner, .. } = &name.kind {
                name.mutable = *owner == state;
            }
        }
    }
    spec.state_sig = ck.state_sig.clone();

    // Desugar multiplicities and dependent fields into facts, unless this
    // spec was already checked (generated facts present).
    let already_desugared = spec.facts.iter().any(|f| f.origin == FactOrigin::Generated);
    if !already_desugared {
        let generated = generate_field_facts(&spec, &mut ck);
        spec.facts.extend(generated);
    }

    // Type predicate bodies.
    for p in &mut spec.preds {
        let mut vars: BTreeMap<String, String> = BTreeMap::new();
        for q in &p.params {
            vars.insert(q.name.clone(), q.sig.clone());
        }
        check_fresh_bound_names(&p.body, &mut vars.keys().cloned().collect(), &mut ck);
        type_formula(&mut p.body, &mut vars, &mut ck);
    }

    // Type facts and enforce the state-variable restriction: at most one
    // state-typed variable, universally quantified (in positive position)
    // and unprimed.
    for f in &mut spec.facts {
        let mut vars: BTreeMap<String, String> = BTreeMap::new();
        check_fresh_bound_names(&f.body, &mut BTreeSet::new(), &mut ck);
        type_formula(&mut f.body, &mut vars, &mut ck);
        let fv = free_vars(&f.body);
        if !fv.is_empty() {
            ck.err(f.span, format!("fact `{}` has free variables: {:?}", f.name, fv));
        }
        if let Some(state) = ck.state_sig.clone() {
            let mut count = 0usize;
            check_fact_state_vars(&f.body, &state, true, &mut count, f.span, &mut ck, &f.name);
        }
    }

    if ck.errors.is_empty() {
        Ok(CheckedSpec { spec, schema: ck.schema })
    } else {
        Err(TypeErrorReport { errors: ck.errors })
    }
}

fn check_fact_state_vars(
    f: &Formula,
    state: &str,
    positive: bool,
    count: &mut usize,
    span: Span,
    ck: &mut Checker,
    fact_name: &str,
) {
    match f {
        Formula::In(..) | Formula::Eq(..) => {}
        Formula::Not(g) => check_fact_state_vars(g, state, !positive, count, span, ck, fact_name),
        Formula::And(a, b) | Formula::Or(a, b) => {
            check_fact_state_vars(a, state, positive, count, span, ck, fact_name);
            check_fact_state_vars(b, state, positive, count, span, ck, fact_name);
        }
        Formula::Forall(q) | Formula::Exists(q) => {
            let is_state = q.bound.ty.first().map(|s| s == state).unwrap_or(false);
            if is_state {
                let universal = matches!(f, Formula::Forall(_)) == positive;
                if !universal {
                    ck.err(
                        q.span,
                        format!("fact `{fact_name}`: state variable `{}` must be universally quantified", q.var),
                    );
                }
                if is_primed(&q.var) {
                    ck.err(
                        q.span,
                        format!("fact `{fact_name}`: state variable `{}` must be unprimed", q.var),
                    );
                }
                *count += 1;
                if *count > 1 {
                    ck.err(
                        q.span,
                        format!("fact `{fact_name}` quantifies more than one state variable"),
                    );
                }
            }
            check_fact_state_vars(&q.body, state, positive, count, span, ck, fact_name);
        }
    }
}

fn check_fresh_bound_names(f: &Formula, in_scope: &mut BTreeSet<String>, ck: &mut Checker) {
    match f {
        Formula::In(..) | Formula::Eq(..) => {}
        Formula::Not(g) => check_fresh_bound_names(g, in_scope, ck),
        Formula::And(a, b) | Formula::Or(a, b) => {
            check_fresh_bound_names(a, in_scope, ck);
            check_fresh_bound_names(b, in_scope, ck);
        }
        Formula::Forall(q) | Formula::Exists(q) => {
            if !in_scope.insert(q.var.clone()) {
                ck.err(q.span, format!("bound variable `{}` shadows an existing name", q.var));
            }
            check_fresh_bound_names(&q.body, in_scope, ck);
        }
    }
}

/// Generated facts for `lone` multiplicities and domain-restricted fields.
fn generate_field_facts(spec: &Spec, ck: &mut Checker) -> Vec<Fact> {
    let mut out = Vec::new();
    for sig in &spec.sigs {
        for (fi, field) in sig.fields.iter().enumerate() {
            if field.cols.is_empty() {
                continue; // resolution failed, already reported
            }
            // Domain restriction per field-name reference in the raw
            // declaration: the spliced segment of this field, together
            // with the owner column, must lie inside the referenced field.
            let mut pos = 1usize; // column index past the owner
            for rc in &field.raw_cols {
                if ck.sig_names.contains(rc) {
                    pos += 1;
                    continue;
                }
                let Some(dep) = sig.fields[..fi].iter().find(|f| &f.name == rc) else {
                    continue;
                };
                let seg_len = dep.cols.len() - 1;
                let v = "v".to_string();
                // v.field, then join away trailing and leading columns
                // until only the spliced segment remains.
                let mut e = Expr::join(
                    Expr::var(v.clone(), sig.name.clone()),
                    Expr::rel(field.name.clone(), OccTag::Immutable, field.cols.clone()),
                );
                let keep_from = pos - 1; // segment start within v.field
                let keep_to = keep_from + seg_len;
                while e.ty.len() > keep_to {
                    let last = e.ty.last().unwrap().clone();
                    e = Expr::join(e, Expr::rel(last.clone(), OccTag::Immutable, vec![last]));
                }
                for _ in 0..keep_from {
                    let first = e.ty.first().unwrap().clone();
                    e = Expr::join(Expr::rel(first.clone(), OccTag::Immutable, vec![first]), e);
                }
                let dep_e = Expr::join(
                    Expr::var(v.clone(), sig.name.clone()),
                    Expr::rel(dep.name.clone(), OccTag::Immutable, dep.cols.clone()),
                );
                let body = Formula::forall(
                    v,
                    Expr::rel(sig.name.clone(), OccTag::Immutable, vec![sig.name.clone()]),
                    Formula::In(e, dep_e),
                );
                out.push(Fact {
                    name: format!("{}_{}_domain", field.name, rc),
                    body,
                    origin: FactOrigin::Generated,
                    span: field.span,
                });
                pos += seg_len;
            }
            // Uniqueness over the last column for `lone` fields.
            if field.mult == Mult::Lone {
                if field.cols[1..field.cols.len() - 1]
                    .iter()
                    .chain(field.cols.last())
                    .any(|c| Some(c.as_str()) == ck.state_sig.as_deref())
                {
                    ck.err(
                        field.span,
                        format!(
                            "`lone` on field `{}` is unsupported: a non-owner column is state-typed",
                            field.name
                        ),
                    );
                    continue;
                }
                let n = field.cols.len();
                let mut chain = Expr::join(
                    Expr::var("v0", field.cols[0].clone()),
                    Expr::rel(field.name.clone(), OccTag::Immutable, field.cols.clone()),
                );
                for (i, col) in field.cols[1..n - 1].iter().enumerate() {
                    chain = Expr::join(Expr::var(format!("v{}", i + 1), col.clone()), chain);
                }
                let last = field.cols[n - 1].clone();
                let y = Expr::var("y0", last.clone());
                let z = Expr::var("z0", last.clone());
                let body = Formula::implies(
                    Formula::and(
                        Formula::In(y.clone(), chain.clone()),
                        Formula::In(z.clone(), chain),
                    ),
                    Formula::Eq(y, z),
                );
                let mut wrapped = Formula::forall(
                    "z0",
                    Expr::rel(last.clone(), OccTag::Immutable, vec![last.clone()]),
                    body,
                );
                wrapped = Formula::forall(
                    "y0",
                    Expr::rel(last.clone(), OccTag::Immutable, vec![last]),
                    wrapped,
                );
                for (i, col) in field.cols[1..n - 1].iter().enumerate().rev() {
                    wrapped = Formula::forall(
                        format!("v{}", i + 1),
                        Expr::rel(col.clone(), OccTag::Immutable, vec![col.clone()]),
                        wrapped,
                    );
                }
                wrapped = Formula::forall(
                    "v0",
                    Expr::rel(field.cols[0].clone(), OccTag::Immutable, vec![field.cols[0].clone()]),
                    wrapped,
                );
                out.push(Fact {
                    name: format!("{}_lone", field.name),
                    body: wrapped,
                    origin: FactOrigin::Generated,
                    span: field.span,
                });
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Typing
// ---------------------------------------------------------------------------

fn type_formula(f: &mut Formula, vars: &mut BTreeMap<String, String>, ck: &mut Checker) {
    match f {
        Formula::In(a, b) | Formula::Eq(a, b) => {
            let (first, second) = if matches!(a.kind, ExprKind::None) { (b, a) } else { (a, b) };
            let ta = type_expr(first, vars, None, ck);
            let tb = type_expr(second, vars, ta.as_deref(), ck);
            if let (Some(ta), Some(tb)) = (ta, tb) {
                if ta != tb {
                    ck.err(
                        second.span.join(first.span),
                        format!("column-type mismatch: {} vs {}", fmt_ty(&ta), fmt_ty(&tb)),
                    );
                }
            }
        }
        Formula::Not(g) => type_formula(g, vars, ck),
        Formula::And(a, b) | Formula::Or(a, b) => {
            type_formula(a, vars, ck);
            type_formula(b, vars, ck);
        }
        Formula::Forall(q) | Formula::Exists(q) => {
            let tb = type_expr(&mut q.bound, vars, None, ck);
            let sig = match tb {
                Some(t) if t.len() == 1 => t[0].clone(),
                Some(t) => {
                    ck.err(
                        q.bound.span,
                        format!("quantifier bound must be unary, got {}", fmt_ty(&t)),
                    );
                    return;
                }
                None => return,
            };
            let prev = vars.insert(q.var.clone(), sig);
            type_formula(&mut q.body, vars, ck);
            match prev {
                Some(p) => {
                    vars.insert(q.var.clone(), p);
                }
                None => {
                    vars.remove(&q.var);
                }
            }
        }
    }
}

fn fmt_ty(t: &[String]) -> String {
    t.join("->")
}

fn type_expr(
    e: &mut Expr,
    vars: &BTreeMap<String, String>,
    expect: Option<&[String]>,
    ck: &mut Checker,
) -> Option<ColTypes> {
    let ty = match &mut e.kind {
        ExprKind::Rel(name, _) => match ck.schema.rels.get(name.as_str()) {
            Some(info) => Some(info.cols.clone()),
            None => {
                ck.err(e.span, format!("unknown relation or signature `{name}`"));
                None
            }
        },
        ExprKind::Var(v) => match vars.get(v.as_str()) {
            Some(sig) => Some(vec![sig.clone()]),
            None => {
                ck.err(e.span, format!("unbound variable `{v}`"));
                None
            }
        },
        ExprKind::None => {
            if !e.ty.is_empty() {
                Some(e.ty.clone())
            } else if let Some(t) = expect {
                Some(t.to_vec())
            } else {
                ck.err(e.span, "cannot infer the column types of `none` here".to_string());
                None
            }
        }
        ExprKind::Union(a, b) | ExprKind::Intersect(a, b) | ExprKind::Diff(a, b) => {
            let (first, second) = if matches!(a.kind, ExprKind::None) { (b, a) } else { (a, b) };
            let ta = type_expr(first, vars, expect, ck)?;
            let tb = type_expr(second, vars, Some(&ta), ck)?;
            if ta != tb {
                ck.err(
                    e.span,
                    format!("operand column types differ: {} vs {}", fmt_ty(&ta), fmt_ty(&tb)),
                );
                return None;
            }
            Some(ta)
        }
        ExprKind::Join(a, b) => {
            let ta = type_expr(a, vars, None, ck)?;
            let tb = type_expr(b, vars, None, ck)?;
            if ta.last() != tb.first() {
                ck.err(
                    e.span,
                    format!(
                        "join columns do not match: {} . {}",
                        fmt_ty(&ta),
                        fmt_ty(&tb)
                    ),
                );
                return None;
            }
            if ta.len() + tb.len() < 3 {
                ck.err(e.span, "join of two unary expressions has no columns".to_string());
                return None;
            }
            let mut t = ta[..ta.len() - 1].to_vec();
            t.extend_from_slice(&tb[1..]);
            Some(t)
        }
        ExprKind::Product(a, b) => {
            let ta = type_expr(a, vars, None, ck)?;
            let tb = type_expr(b, vars, None, ck)?;
            let mut t = ta;
            t.extend(tb);
            Some(t)
        }
        ExprKind::Converse(a) => {
            let ta = type_expr(a, vars, None, ck)?;
            if ta.len() != 2 {
                ck.err(e.span, format!("converse needs a binary expression, got {}", fmt_ty(&ta)));
                return None;
            }
            Some(vec![ta[1].clone(), ta[0].clone()])
        }
        ExprKind::Closure(a) => {
            let ta = type_expr(a, vars, None, ck)?;
            if ta.len() != 2 || ta[0] != ta[1] {
                ck.err(
                    e.span,
                    format!("closure needs a homogeneous binary expression, got {}", fmt_ty(&ta)),
                );
                return None;
            }
            Some(ta)
        }
    };
    if let Some(t) = &ty {
        e.ty = t.clone();
    }
    ty
}

/// Derives the column-type sequence of an expression in a given variable
/// typing, without mutating anything.
pub fn type_of(
    e: &Expr,
    cs: &CheckedSpec,
    vars: &BTreeMap<String, String>,
) -> Result<ColTypes, TypeErrorReport> {
    let mut ck = Checker {
        errors: Vec::new(),
        sig_names: cs.spec.sigs.iter().map(|s| s.name.clone()).collect(),
        schema: cs.schema.clone(),
        state_sig: cs.spec.state_sig.clone(),
    };
    let mut copy = e.clone();
    match type_expr(&mut copy, vars, None, &mut ck) {
        Some(t) if ck.errors.is_empty() => Ok(t),
        _ => Err(TypeErrorReport { errors: ck.errors }),
    }
}
