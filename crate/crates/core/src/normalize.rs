//! Rewrites predicate bodies into the executable normal form: a
//! universally quantified conjunction of disjunctions of special
//! formulas.
//!
//! A special formula is `(e1 & … & ek) = none` or `!= none` where no
//! operand contains union or `none` and converse applies only to names
//! and variables. The pipeline: conjoin the facts with their state
//! variable primed, rewrite quantifier bounds to signature bounds with
//! guards, negation normal form, prenex, Skolemize existentials into
//! fresh mutable relations (kept functional and total by generated
//! constraints), then rewrite each literal to special formulas:
//! converse is pushed inward, `none` is eliminated, unions are
//! distributed to the top, equalities split into two containments, and
//! the containment forms become difference formulas.
//!
//! Two departures from the ideal shape are kept deliberately: union does
//! not distribute out of transitive closure, so closure operands may
//! retain unions, and converse cannot be pushed through a join whose
//! operands are not both binary; the tuple procedures handle both forms.

use crate::ast::{
    self, CheckedSpec, ColTypes, Expr, ExprKind, Fact, Formula, OccTag, Param, Predicate, Quant,
    RelKind,
};
use crate::store::{eval, Env, Instance, TupleSet};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Empty,
    NonEmpty,
}

/// `(e1 & … & ek) = none` (Empty) or `!= none` (NonEmpty); the operands
/// share one column-type sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecialFormula {
    pub exprs: Vec<Expr>,
    pub polarity: Polarity,
}

impl SpecialFormula {
    pub fn col_types(&self) -> &ColTypes {
        &self.exprs[0].ty
    }

    /// The operands folded into one intersection expression.
    pub fn folded(&self) -> Expr {
        let mut it = self.exprs.iter().cloned();
        let first = it.next().expect("special formula has at least one operand");
        it.fold(first, Expr::intersect)
    }

    pub fn eval(&self, pre: &Instance, post: &Instance, env: &Env) -> TupleSet {
        let mut it = self.exprs.iter();
        let mut acc = eval(it.next().unwrap(), pre, post, env);
        for e in it {
            if acc.is_empty() {
                break;
            }
            let s = eval(e, pre, post, env);
            acc = acc.intersection(&s).cloned().collect();
        }
        acc
    }

    pub fn holds(&self, pre: &Instance, post: &Instance, env: &Env) -> bool {
        let empty = self.eval(pre, post, env).is_empty();
        match self.polarity {
            Polarity::Empty => empty,
            Polarity::NonEmpty => !empty,
        }
    }
}

/// One disjunct of a clause. Disjuncts that stem from negated literals of
/// a fact are check-only: the engine may observe them true but never
/// takes actions to make them true, so fact repair cannot silently undo
/// the work a fact presupposes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Disjunct {
    pub sf: SpecialFormula,
    pub realizable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Body,
    Fact(String),
}

/// A conjunct of the matrix: a nonempty disjunction of special formulas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clause {
    pub disjuncts: Vec<Disjunct>,
    pub provenance: Provenance,
    /// Universal variables that actually occur in the disjuncts.
    pub used_universals: Vec<String>,
}

impl Clause {
    pub fn holds(&self, pre: &Instance, post: &Instance, env: &Env) -> bool {
        self.disjuncts.iter().any(|d| d.sf.holds(pre, post, env))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkolemDecl {
    pub name: String,
    pub cols: ColTypes,
}

/// A predicate in Definition-3 shape: parameters, a universal prefix,
/// and a conjunction of disjunctions of special formulas, plus the fresh
/// Skolem relations the post-instance is searched over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedPredicate {
    pub name: String,
    pub params: Vec<Param>,
    pub universals: Vec<(String, String)>,
    pub clauses: Vec<Clause>,
    pub skolems: Vec<SkolemDecl>,
}

// ---------------------------------------------------------------------------
// Fresh names
// ---------------------------------------------------------------------------

struct Fresh {
    used: BTreeSet<String>,
}

impl Fresh {
    fn new(cs: &CheckedSpec, p: &Predicate) -> Fresh {
        let mut used: BTreeSet<String> = cs.schema.rels.keys().cloned().collect();
        for q in &p.params {
            used.insert(q.name.clone());
        }
        fn collect(f: &Formula, used: &mut BTreeSet<String>) {
            match f {
                Formula::In(..) | Formula::Eq(..) => {}
                Formula::Not(g) => collect(g, used),
                Formula::And(a, b) | Formula::Or(a, b) => {
                    collect(a, used);
                    collect(b, used);
                }
                Formula::Forall(q) | Formula::Exists(q) => {
                    used.insert(q.var.clone());
                    collect(&q.body, used);
                }
            }
        }
        collect(&p.body, &mut used);
        Fresh { used }
    }

    fn pick(&mut self, base: &str) -> String {
        let base = base.trim_end_matches('\'');
        if !self.used.contains(base) {
            self.used.insert(base.to_string());
            return base.to_string();
        }
        let mut i = 1;
        loop {
            let cand = format!("{base}_{i}");
            if !self.used.contains(&cand) {
                self.used.insert(cand.clone());
                return cand;
            }
            i += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Fact priming
// ---------------------------------------------------------------------------

fn sig_universe(cs: &CheckedSpec, sig: &str) -> Expr {
    debug_assert!(cs.schema.rel(sig).is_some(), "unknown sig {sig}");
    Expr::rel(sig, OccTag::Immutable, vec![sig.to_string()])
}

/// Rewrites expression-bounded quantifiers onto signature bounds:
/// `all y: e | f` becomes `all y: SigOf(e) | y in e implies f`, and
/// `some y: e | f` becomes `some y: SigOf(e) | y in e and f`. Bounds that
/// already are a signature atom set stay as they are.
fn bound_rewrite_f(f: Formula, cs: &CheckedSpec) -> Formula {
    match f {
        Formula::In(..) | Formula::Eq(..) => f,
        Formula::Not(g) => Formula::not(bound_rewrite_f(*g, cs)),
        Formula::And(a, b) => Formula::and(bound_rewrite_f(*a, cs), bound_rewrite_f(*b, cs)),
        Formula::Or(a, b) => Formula::or(bound_rewrite_f(*a, cs), bound_rewrite_f(*b, cs)),
        Formula::Forall(q) => {
            let sig = q.bound.ty[0].clone();
            let is_sig_bound = matches!(&q.bound.kind, ExprKind::Rel(n, _)
                if matches!(cs.schema.rel(n).map(|i| &i.kind), Some(RelKind::SigUniverse)));
            let body = bound_rewrite_f(*q.body, cs);
            let body = if is_sig_bound {
                body
            } else {
                let guard = Formula::In(Expr::var(q.var.clone(), sig.clone()), q.bound.clone());
                Formula::implies(guard, body)
            };
            Formula::forall(q.var, sig_universe(cs, &sig), body)
        }
        Formula::Exists(q) => {
            let sig = q.bound.ty[0].clone();
            let is_sig_bound = matches!(&q.bound.kind, ExprKind::Rel(n, _)
                if matches!(cs.schema.rel(n).map(|i| &i.kind), Some(RelKind::SigUniverse)));
            let body = bound_rewrite_f(*q.body, cs);
            let body = if is_sig_bound {
                body
            } else {
                let guard = Formula::In(Expr::var(q.var.clone(), sig.clone()), q.bound.clone());
                Formula::and(guard, body)
            };
            Formula::exists(q.var, sig_universe(cs, &sig), body)
        }
    }
}

/// Negation normal form: negation pushed onto the elementary formulas.
fn nnf(f: Formula, positive: bool) -> Formula {
    match f {
        Formula::In(..) | Formula::Eq(..) => {
            if positive {
                f
            } else {
                Formula::not(f)
            }
        }
        Formula::Not(g) => nnf(*g, !positive),
        Formula::And(a, b) => {
            let (a, b) = (nnf(*a, positive), nnf(*b, positive));
            if positive {
                Formula::and(a, b)
            } else {
                Formula::or(a, b)
            }
        }
        Formula::Or(a, b) => {
            let (a, b) = (nnf(*a, positive), nnf(*b, positive));
            if positive {
                Formula::or(a, b)
            } else {
                Formula::and(a, b)
            }
        }
        Formula::Forall(q) => {
            let body = nnf(*q.body, positive);
            let q = Quant { var: q.var, bound: q.bound, body: Box::new(body), span: q.span };
            if positive {
                Formula::Forall(q)
            } else {
                Formula::Exists(q)
            }
        }
        Formula::Exists(q) => {
            let body = nnf(*q.body, positive);
            let q = Quant { var: q.var, bound: q.bound, body: Box::new(body), span: q.span };
            if positive {
                Formula::Exists(q)
            } else {
                Formula::Forall(q)
            }
        }
    }
}

/// Conjoins each fact onto the predicate body with the fact's state
/// variable bound to the primed state parameter, so the fact acts as a
/// post-condition. The fact's own state quantifier is dropped.
pub fn prime_facts(cs: &CheckedSpec, p: &Predicate, facts: &[Fact]) -> Predicate {
    let parts = primed_fact_parts(cs, p, facts, &mut Fresh::new(cs, p));
    let mut body = p.body.clone();
    for (f, _) in parts {
        body = Formula::and(body, f);
    }
    Predicate { name: p.name.clone(), params: p.params.clone(), body, span: p.span }
}

fn primed_fact_parts(
    cs: &CheckedSpec,
    p: &Predicate,
    facts: &[Fact],
    fresh: &mut Fresh,
) -> Vec<(Formula, Provenance)> {
    let Some((_, post_param)) = cs.state_params(p) else {
        return Vec::new();
    };
    let state = cs.state_sig().expect("state sig known when state params exist").to_string();
    let post_param = post_param.to_string();
    let mut out = Vec::new();
    for fact in facts {
        let mut body = fact.body.clone();
        ast::refresh_bound_vars(&mut body, &mut |name| fresh.pick(name));
        let body = bound_rewrite_f(body, cs);
        let body = nnf(body, true);
        let body = drop_state_quantifier(body, &state, &post_param);
        out.push((body, Provenance::Fact(fact.name.clone())));
    }
    out
}

/// Removes the (unique, positive, universal) state quantifier of a primed
/// fact, binding its variable to the predicate's post-state parameter.
fn drop_state_quantifier(f: Formula, state: &str, post_param: &str) -> Formula {
    match f {
        Formula::Forall(q) if q.bound.ty.first().map(String::as_str) == Some(state) => {
            let mut body = *q.body;
            let replacement = Expr::var(post_param, state);
            ast::substitute_var(&mut body, &q.var, &replacement);
            body
        }
        Formula::Forall(q) => Formula::Forall(Quant {
            var: q.var,
            bound: q.bound,
            body: Box::new(drop_state_quantifier(*q.body, state, post_param)),
            span: q.span,
        }),
        Formula::Exists(q) => Formula::Exists(Quant {
            var: q.var,
            bound: q.bound,
            body: Box::new(drop_state_quantifier(*q.body, state, post_param)),
            span: q.span,
        }),
        Formula::And(a, b) => Formula::and(
            drop_state_quantifier(*a, state, post_param),
            drop_state_quantifier(*b, state, post_param),
        ),
        Formula::Or(a, b) => Formula::or(
            drop_state_quantifier(*a, state, post_param),
            drop_state_quantifier(*b, state, post_param),
        ),
        Formula::Not(g) => Formula::not(drop_state_quantifier(*g, state, post_param)),
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Prenexing and Skolemization
// ---------------------------------------------------------------------------

fn prenex(f: Formula) -> (Vec<(bool, String, String)>, Formula) {
    match f {
        Formula::Forall(q) => {
            let sig = q.bound.ty[0].clone();
            let (mut prefix, matrix) = prenex(*q.body);
            prefix.insert(0, (true, q.var, sig));
            (prefix, matrix)
        }
        Formula::Exists(q) => {
            let sig = q.bound.ty[0].clone();
            let (mut prefix, matrix) = prenex(*q.body);
            prefix.insert(0, (false, q.var, sig));
            (prefix, matrix)
        }
        Formula::And(a, b) => {
            let (mut pa, ma) = prenex(*a);
            let (pb, mb) = prenex(*b);
            pa.extend(pb);
            (pa, Formula::and(ma, mb))
        }
        Formula::Or(a, b) => {
            let (mut pa, ma) = prenex(*a);
            let (pb, mb) = prenex(*b);
            pa.extend(pb);
            (pa, Formula::or(ma, mb))
        }
        other => (Vec::new(), other),
    }
}

struct SkolemOut {
    universals: Vec<(String, String)>,
    extra_universals: Vec<(String, String)>,
    matrix: Formula,
    decls: Vec<SkolemDecl>,
}

/// Replaces each existential by a fresh mutable relation applied to the
/// universals in scope, with generated constraints keeping the relation
/// total and functional on those universals (so the Skolem term always
/// denotes one atom, and satisfiability is preserved both ways).
fn skolemize_prefix(
    prefix: Vec<(bool, String, String)>,
    matrix: Formula,
    fresh: &mut Fresh,
) -> SkolemOut {
    let mut universals: Vec<(String, String)> = Vec::new();
    let mut extra: Vec<(String, String)> = Vec::new();
    let mut decls = Vec::new();
    let mut body = matrix;
    let mut constraints: Vec<Formula> = Vec::new();
    for (is_forall, var, sig) in prefix {
        if is_forall {
            universals.push((var, sig));
            continue;
        }
        let rel_name = fresh.pick(&format!("sk_{var}"));
        let mut cols: ColTypes = universals.iter().map(|(_, s)| s.clone()).collect();
        cols.push(sig.clone());
        let mut term = Expr::rel(rel_name.clone(), OccTag::Post, cols.clone());
        for (u, us) in universals.iter().rev() {
            term = Expr::join(Expr::var(u.clone(), us.clone()), term);
        }
        decls.push(SkolemDecl { name: rel_name, cols });
        ast::substitute_var(&mut body, &var, &term);
        // total: the term denotes at least one atom per binding
        constraints.push(Formula::not(Formula::In(term.clone(), Expr::none(vec![sig.clone()]))));
        // functional: at most one atom per binding
        let y1 = fresh.pick(&format!("{var}_a"));
        let y2 = fresh.pick(&format!("{var}_b"));
        extra.push((y1.clone(), sig.clone()));
        extra.push((y2.clone(), sig.clone()));
        let vy1 = Expr::var(y1, sig.clone());
        let vy2 = Expr::var(y2, sig.clone());
        constraints.push(nnf(
            Formula::implies(
                Formula::and(
                    Formula::In(vy1.clone(), term.clone()),
                    Formula::In(vy2.clone(), term),
                ),
                Formula::Eq(vy1, vy2),
            ),
            true,
        ));
    }
    for c in constraints {
        body = Formula::and(body, c);
    }
    SkolemOut { universals, extra_universals: extra, matrix: body, decls }
}

/// The spec-level Skolemization entry point: returns the predicate with
/// an all-universal body over the extended schema, plus the fresh
/// relation declarations.
pub fn skolemize(cs: &CheckedSpec, p: &Predicate) -> (Predicate, Vec<SkolemDecl>) {
    let mut fresh = Fresh::new(cs, p);
    let body = bound_rewrite_f(p.body.clone(), cs);
    let body = nnf(body, true);
    let (prefix, matrix) = prenex(body);
    let out = skolemize_prefix(prefix, matrix, &mut fresh);
    let mut rebuilt = out.matrix;
    for (v, s) in out.universals.iter().chain(out.extra_universals.iter()).rev() {
        rebuilt = Formula::forall(v.clone(), sig_universe(cs, s), rebuilt);
    }
    (
        Predicate { name: p.name.clone(), params: p.params.clone(), body: rebuilt, span: p.span },
        out.decls,
    )
}

// ---------------------------------------------------------------------------
// Special-formula rewriting
// ---------------------------------------------------------------------------

/// Converse pushed inward onto relation names and variables. Joins whose
/// operands are not both binary cannot absorb a converse; it stays on the
/// join node and tuple reversal at evaluation handles it.
fn push_converse(e: Expr) -> Expr {
    match e.kind {
        ExprKind::Rel(..) | ExprKind::Var(_) | ExprKind::None => e,
        ExprKind::Union(a, b) => Expr::union(push_converse(*a), push_converse(*b)),
        ExprKind::Intersect(a, b) => Expr::intersect(push_converse(*a), push_converse(*b)),
        ExprKind::Diff(a, b) => Expr::diff(push_converse(*a), push_converse(*b)),
        ExprKind::Join(a, b) => Expr::join(push_converse(*a), push_converse(*b)),
        ExprKind::Product(a, b) => Expr::product(push_converse(*a), push_converse(*b)),
        ExprKind::Closure(a) => Expr::closure(push_converse(*a)),
        ExprKind::Converse(inner) => {
            let inner = *inner;
            match inner.kind {
                ExprKind::Converse(x) => push_converse(*x),
                ExprKind::Union(a, b) => {
                    Expr::union(push_converse(Expr::converse(*a)), push_converse(Expr::converse(*b)))
                }
                ExprKind::Intersect(a, b) => Expr::intersect(
                    push_converse(Expr::converse(*a)),
                    push_converse(Expr::converse(*b)),
                ),
                ExprKind::Diff(a, b) => {
                    Expr::diff(push_converse(Expr::converse(*a)), push_converse(Expr::converse(*b)))
                }
                ExprKind::Product(a, b) => {
                    // a binary product has two unary operands
                    Expr::product(push_converse(*b), push_converse(*a))
                }
                ExprKind::Join(a, b) if a.ty.len() == 2 && b.ty.len() == 2 => Expr::join(
                    push_converse(Expr::converse(*b)),
                    push_converse(Expr::converse(*a)),
                ),
                ExprKind::Closure(a) => Expr::closure(push_converse(Expr::converse(*a))),
                ExprKind::None => Expr::none(vec![inner.ty[1].clone(), inner.ty[0].clone()]),
                ExprKind::Rel(..) | ExprKind::Var(_) => Expr::converse(inner),
                ExprKind::Join(a, b) => Expr::converse(Expr::join(push_converse(*a), push_converse(*b))),
            }
        }
    }
}

/// Eliminates the empty relation: `None` when the whole expression is
/// empty, otherwise an equivalent `none`-free expression.
fn elim_none(e: Expr) -> Option<Expr> {
    match e.kind {
        ExprKind::None => None,
        ExprKind::Rel(..) | ExprKind::Var(_) => Some(e),
        ExprKind::Union(a, b) => match (elim_none(*a), elim_none(*b)) {
            (Some(a), Some(b)) => Some(Expr::union(a, b)),
            (Some(x), None) | (None, Some(x)) => Some(x),
            (None, None) => None,
        },
        ExprKind::Intersect(a, b) => {
            let a = elim_none(*a)?;
            let b = elim_none(*b)?;
            Some(Expr::intersect(a, b))
        }
        ExprKind::Diff(a, b) => {
            let a = elim_none(*a)?;
            match elim_none(*b) {
                Some(b) => Some(Expr::diff(a, b)),
                None => Some(a),
            }
        }
        ExprKind::Join(a, b) => {
            let a = elim_none(*a)?;
            let b = elim_none(*b)?;
            Some(Expr::join(a, b))
        }
        ExprKind::Product(a, b) => {
            let a = elim_none(*a)?;
            let b = elim_none(*b)?;
            Some(Expr::product(a, b))
        }
        ExprKind::Converse(a) => Some(Expr::converse(elim_none(*a)?)),
        ExprKind::Closure(a) => Some(Expr::closure(elim_none(*a)?)),
    }
}

/// Distributes union to the top: the parts of the returned vector are
/// union-free and their union is equivalent to the input. Closure is
/// opaque to this distribution.
fn distribute(e: Expr) -> Vec<Expr> {
    match e.kind {
        ExprKind::Rel(..) | ExprKind::Var(_) | ExprKind::None => vec![e],
        ExprKind::Union(a, b) => {
            let mut v = distribute(*a);
            v.extend(distribute(*b));
            v
        }
        ExprKind::Intersect(a, b) => {
            let pa = distribute(*a);
            let pb = distribute(*b);
            let mut out = Vec::new();
            for x in &pa {
                for y in &pb {
                    out.push(Expr::intersect(x.clone(), y.clone()));
                }
            }
            out
        }
        ExprKind::Diff(a, b) => {
            // (a1 + a2) - (b1 + b2)  =  (a1 - b1 - b2) + (a2 - b1 - b2)
            let pa = distribute(*a);
            let pb = distribute(*b);
            pa.into_iter()
                .map(|x| pb.iter().fold(x, |acc, y| Expr::diff(acc, y.clone())))
                .collect()
        }
        ExprKind::Join(a, b) => {
            let pa = distribute(*a);
            let pb = distribute(*b);
            let mut out = Vec::new();
            for x in &pa {
                for y in &pb {
                    out.push(Expr::join(x.clone(), y.clone()));
                }
            }
            out
        }
        ExprKind::Product(a, b) => {
            let pa = distribute(*a);
            let pb = distribute(*b);
            let mut out = Vec::new();
            for x in &pa {
                for y in &pb {
                    out.push(Expr::product(x.clone(), y.clone()));
                }
            }
            out
        }
        ExprKind::Converse(a) => {
            distribute(*a).into_iter().map(|p| push_converse(Expr::converse(p))).collect()
        }
        ExprKind::Closure(_) => vec![e],
    }
}

/// Union-free parts of an expression, or `None` when it denotes the
/// empty relation on every instance.
fn parts_of(e: &Expr) -> Option<Vec<Expr>> {
    let e = elim_none(e.clone())?;
    Some(distribute(push_converse(e)))
}

/// CNF over special formulas, with true/false short-circuits.
enum Cnf {
    True,
    False,
    Clauses(Vec<Vec<(SpecialFormula, bool)>>),
}

fn cnf_and(a: Cnf, b: Cnf) -> Cnf {
    match (a, b) {
        (Cnf::False, _) | (_, Cnf::False) => Cnf::False,
        (Cnf::True, x) | (x, Cnf::True) => x,
        (Cnf::Clauses(mut ca), Cnf::Clauses(cb)) => {
            ca.extend(cb);
            Cnf::Clauses(ca)
        }
    }
}

fn cnf_or(a: Cnf, b: Cnf) -> Cnf {
    match (a, b) {
        (Cnf::True, _) | (_, Cnf::True) => Cnf::True,
        (Cnf::False, x) | (x, Cnf::False) => x,
        (Cnf::Clauses(ca), Cnf::Clauses(cb)) => {
            let mut out = Vec::new();
            for x in &ca {
                for y in &cb {
                    let mut c = x.clone();
                    c.extend(y.iter().cloned());
                    out.push(c);
                }
            }
            Cnf::Clauses(out)
        }
    }
}

/// `d in (f1 + … + fn)` as one special formula:
/// `(d - f1) & … & (d - fn) = none` (or `d = none` when n = 0).
fn containment_special(d: &Expr, fs: &[Expr], neg: bool) -> SpecialFormula {
    let exprs = if fs.is_empty() {
        vec![d.clone()]
    } else {
        fs.iter().map(|f| Expr::diff(d.clone(), f.clone())).collect()
    };
    SpecialFormula { exprs, polarity: if neg { Polarity::NonEmpty } else { Polarity::Empty } }
}

/// `d not in (f1 + … + fn)` as `((d - f1) - …) - fn != none`.
fn non_containment_special(d: &Expr, fs: &[Expr]) -> SpecialFormula {
    let folded = fs.iter().fold(d.clone(), |acc, f| Expr::diff(acc, f.clone()));
    SpecialFormula { exprs: vec![folded], polarity: Polarity::NonEmpty }
}

fn literal_in(a: &Expr, b: &Expr) -> Cnf {
    let Some(parts_a) = parts_of(a) else {
        return Cnf::True; // none in anything
    };
    let parts_b = parts_of(b).unwrap_or_default();
    let clauses = parts_a
        .iter()
        .map(|d| vec![(containment_special(d, &parts_b, false), false)])
        .collect();
    Cnf::Clauses(clauses)
}

fn literal_not_in(a: &Expr, b: &Expr) -> Cnf {
    let Some(parts_a) = parts_of(a) else {
        return Cnf::False; // not (none in e) is false
    };
    let parts_b = parts_of(b).unwrap_or_default();
    // An atom variable is a singleton, so `x not in f` is equivalent to
    // the disjointness form `x & f = none`, which the engine realizes by
    // deleting the obstacles rather than guessing a tuple.
    if matches!(a.kind, ExprKind::Var(_)) {
        if parts_b.is_empty() {
            return Cnf::False; // x not in none never fails... it always holds
        }
        let clauses = parts_b
            .iter()
            .map(|f| {
                vec![(
                    SpecialFormula {
                        exprs: vec![a.clone(), f.clone()],
                        polarity: Polarity::Empty,
                    },
                    true,
                )]
            })
            .collect();
        return Cnf::Clauses(clauses);
    }
    if parts_b.is_empty() && parts_a.iter().any(|d| matches!(d.kind, ExprKind::Var(_))) {
        return Cnf::True; // a variable is never empty
    }
    let clause: Vec<(SpecialFormula, bool)> =
        parts_a.iter().map(|d| (non_containment_special(d, &parts_b), true)).collect();
    Cnf::Clauses(vec![clause])
}

fn literal_cnf(f: &Formula) -> Cnf {
    match f {
        Formula::In(a, b) => literal_in(a, b),
        Formula::Eq(a, b) => {
            match (elim_none(a.clone()), elim_none(b.clone())) {
                (None, None) => Cnf::True,
                (Some(_), None) => literal_in(a, b), // a in none pins a empty
                (None, Some(_)) => literal_in(b, a),
                (Some(_), Some(_)) => cnf_and(literal_in(a, b), literal_in(b, a)),
            }
        }
        Formula::Not(inner) => match inner.as_ref() {
            Formula::In(a, b) => literal_not_in(a, b),
            Formula::Eq(a, b) => match (elim_none(a.clone()), elim_none(b.clone())) {
                (None, None) => Cnf::False,
                (Some(_), None) => literal_not_in(a, b),
                (None, Some(_)) => literal_not_in(b, a),
                (Some(_), Some(_)) => cnf_or(literal_not_in(a, b), literal_not_in(b, a)),
            },
            other => unreachable!("negation not in NNF: {other:?}"),
        },
        Formula::And(a, b) => cnf_and(literal_cnf(a), literal_cnf(b)),
        Formula::Or(a, b) => cnf_or(literal_cnf(a), literal_cnf(b)),
        Formula::Forall(_) | Formula::Exists(_) => {
            unreachable!("quantifier reached special-form rewriting")
        }
    }
}

fn canonical_true(cs: &CheckedSpec) -> SpecialFormula {
    let s = cs.state_sig().unwrap_or_else(|| &cs.spec.sigs[0].name);
    let u = sig_universe(cs, s);
    SpecialFormula { exprs: vec![Expr::diff(u.clone(), u)], polarity: Polarity::Empty }
}

fn canonical_false(cs: &CheckedSpec) -> SpecialFormula {
    let sf = canonical_true(cs);
    SpecialFormula { exprs: sf.exprs, polarity: Polarity::NonEmpty }
}

fn expr_vars(e: &Expr, out: &mut BTreeSet<String>) {
    match &e.kind {
        ExprKind::Var(v) => {
            out.insert(v.clone());
        }
        ExprKind::Rel(..) | ExprKind::None => {}
        ExprKind::Union(a, b)
        | ExprKind::Intersect(a, b)
        | ExprKind::Diff(a, b)
        | ExprKind::Join(a, b)
        | ExprKind::Product(a, b) => {
            expr_vars(a, out);
            expr_vars(b, out);
        }
        ExprKind::Converse(a) | ExprKind::Closure(a) => expr_vars(a, out),
    }
}

/// Rewrites a quantifier-free NNF formula into the clause matrix. The
/// result is logically equivalent on every instance; a trivially true
/// (resp. false) formula yields one canonical always-true (always-false)
/// clause so the matrix is never empty.
pub fn to_special_form(cs: &CheckedSpec, f: &Formula, provenance: Provenance) -> Vec<Clause> {
    let cnf = literal_cnf(f);
    let raw = match cnf {
        Cnf::True => vec![vec![(canonical_true(cs), false)]],
        Cnf::False => vec![vec![(canonical_false(cs), false)]],
        Cnf::Clauses(cl) if cl.is_empty() => vec![vec![(canonical_true(cs), false)]],
        Cnf::Clauses(cl) => cl,
    };
    let mut clauses = Vec::new();
    for disjuncts in raw {
        let mut seen = Vec::new();
        let mut ds = Vec::new();
        for (sf, neg_origin) in disjuncts {
            if seen.contains(&sf) {
                continue;
            }
            seen.push(sf.clone());
            let realizable = matches!(provenance, Provenance::Body) || !neg_origin;
            ds.push(Disjunct { sf, realizable });
        }
        let mut used = BTreeSet::new();
        for d in &ds {
            for e in &d.sf.exprs {
                expr_vars(e, &mut used);
            }
        }
        let clause =
            Clause { disjuncts: ds, provenance: provenance.clone(), used_universals: Vec::new() };
        let clause = Clause { used_universals: used.into_iter().collect(), ..clause };
        if !clauses.contains(&clause) {
            clauses.push(clause);
        }
    }
    clauses
}

// ---------------------------------------------------------------------------
// The pipeline
// ---------------------------------------------------------------------------

/// Normalizes a predicate against an explicit fact list (the engine uses
/// the spec's own facts; tests pass variants).
pub fn normalize_predicate_with_facts(
    cs: &CheckedSpec,
    p: &Predicate,
    facts: &[Fact],
) -> NormalizedPredicate {
    let mut fresh = Fresh::new(cs, p);
    let mut parts: Vec<(Formula, Provenance)> = vec![(p.body.clone(), Provenance::Body)];
    parts.extend(primed_fact_parts(cs, p, facts, &mut fresh));

    let mut universals: Vec<(String, String)> = Vec::new();
    let mut clauses: Vec<Clause> = Vec::new();
    let mut skolems: Vec<SkolemDecl> = Vec::new();

    for (formula, provenance) in parts {
        let f = bound_rewrite_f(formula, cs);
        let f = nnf(f, true);
        let (prefix, matrix) = prenex(f);
        let out = skolemize_prefix(prefix, matrix, &mut fresh);
        universals.extend(out.universals);
        universals.extend(out.extra_universals);
        skolems.extend(out.decls);
        for c in to_special_form(cs, &out.matrix, provenance.clone()) {
            if !clauses.contains(&c) {
                clauses.push(c);
            }
        }
    }

    // Resolve each relation occurrence against its state-variable root.
    if let Some((s, sp)) = cs.state_params(p) {
        let (s, sp) = (s.to_string(), sp.to_string());
        let skolem_names: BTreeSet<String> = skolems.iter().map(|d| d.name.clone()).collect();
        let side = move |v: &str| {
            if v == s {
                Some(OccTag::Pre)
            } else if v == sp {
                Some(OccTag::Post)
            } else {
                None
            }
        };
        for c in &mut clauses {
            for d in &mut c.disjuncts {
                for e in &mut d.sf.exprs {
                    ast::tag_state_occurrences(e, &side);
                    retag_skolems(e, &skolem_names);
                }
            }
        }
    }

    // Keep only universals that some clause mentions; the rest are
    // vacuous binding dimensions.
    let used: BTreeSet<&String> =
        clauses.iter().flat_map(|c| c.used_universals.iter()).collect();
    let universals: Vec<(String, String)> =
        universals.into_iter().filter(|(v, _)| used.contains(v)).collect();

    NormalizedPredicate {
        name: p.name.clone(),
        params: p.params.clone(),
        universals,
        clauses,
        skolems,
    }
}

/// Normalizes a predicate with the specification's facts incorporated as
/// primed post-conditions.
pub fn normalize_predicate(cs: &CheckedSpec, p: &Predicate) -> NormalizedPredicate {
    normalize_predicate_with_facts(cs, p, &cs.spec.facts)
}

/// Skolem relations are part of the searched-for post-instance whatever
/// their syntactic position.
fn retag_skolems(e: &mut Expr, skolems: &BTreeSet<String>) {
    match &mut e.kind {
        ExprKind::Rel(name, tag) => {
            if skolems.contains(name) {
                *tag = OccTag::Post;
            }
        }
        ExprKind::Var(_) | ExprKind::None => {}
        ExprKind::Union(a, b)
        | ExprKind::Intersect(a, b)
        | ExprKind::Diff(a, b)
        | ExprKind::Join(a, b)
        | ExprKind::Product(a, b) => {
            retag_skolems(a, skolems);
            retag_skolems(b, skolems);
        }
        ExprKind::Converse(a) | ExprKind::Closure(a) => retag_skolems(a, skolems),
    }
}

impl NormalizedPredicate {
    /// Semantic check of the matrix on a concrete instance pair: every
    /// clause holds under every binding of its universals.
    pub fn matrix_holds(&self, pre: &Instance, post: &Instance, env: &Env) -> bool {
        for clause in &self.clauses {
            let vars: Vec<(String, String)> = self
                .universals
                .iter()
                .filter(|(v, _)| clause.used_universals.contains(v))
                .cloned()
                .collect();
            let mut ok = true;
            for_each_binding(pre, &vars, &mut env.clone(), &mut |env2| {
                if !clause.holds(pre, post, env2) {
                    ok = false;
                }
                ok
            });
            if !ok {
                return false;
            }
        }
        true
    }
}

/// Iterates all bindings of `vars` over the universe atoms of their
/// signatures (lexicographic in declaration order), invoking `f` with the
/// extended environment; `f` returns false to stop early.
pub fn for_each_binding(
    inst: &Instance,
    vars: &[(String, String)],
    env: &mut Env,
    f: &mut impl FnMut(&Env) -> bool,
) -> bool {
    fn rec(
        inst: &Instance,
        vars: &[(String, String)],
        i: usize,
        env: &mut Env,
        f: &mut impl FnMut(&Env) -> bool,
    ) -> bool {
        if i == vars.len() {
            return f(env);
        }
        let (name, sig) = &vars[i];
        let atoms = inst.atoms_of(sig).to_vec();
        for a in atoms {
            let prev = env.insert(name.clone(), a);
            let go_on = rec(inst, vars, i + 1, env, f);
            match prev {
                Some(p) => {
                    env.insert(name.clone(), p);
                }
                None => {
                    env.remove(name);
                }
            }
            if !go_on {
                return false;
            }
        }
        true
    }
    rec(inst, vars, 0, env, f)
}

// ---------------------------------------------------------------------------
// Rendering (for --dump-normal and golden tests)
// ---------------------------------------------------------------------------

pub fn render_special(sf: &SpecialFormula) -> String {
    let body = crate::parser::render_expr(&sf.folded());
    match sf.polarity {
        Polarity::Empty => format!("{body} = none"),
        Polarity::NonEmpty => format!("{body} != none"),
    }
}

/// The matrix in concrete syntax, one clause per line.
pub fn render_normalized(np: &NormalizedPredicate) -> String {
    let mut out = String::new();
    out.push_str(&format!("pred {}\n", np.name));
    if !np.universals.is_empty() {
        let us: Vec<String> = np.universals.iter().map(|(v, s)| format!("{v}: {s}")).collect();
        out.push_str(&format!("  all {}\n", us.join(", ")));
    }
    for sk in &np.skolems {
        out.push_str(&format!("  skolem {} : {}\n", sk.name, sk.cols.join(" -> ")));
    }
    for c in &np.clauses {
        let ds: Vec<String> = c.disjuncts.iter().map(|d| render_special(&d.sf)).collect();
        out.push_str(&format!("  {}\n", ds.join("  or  ")));
    }
    out
}

/// Structural well-formedness of a produced special formula: no union or
/// `none` outside closure operands, no converse over converse, converse
/// pushed to names and variables except over non-binary joins.
pub fn validate_special(sf: &SpecialFormula) -> Result<(), String> {
    fn walk(e: &Expr, under_closure: bool, under_converse: bool) -> Result<(), String> {
        match &e.kind {
            ExprKind::None => Err("operand contains `none`".into()),
            ExprKind::Union(..) if !under_closure => Err("operand contains union".into()),
            ExprKind::Rel(..) | ExprKind::Var(_) => Ok(()),
            ExprKind::Union(a, b)
            | ExprKind::Intersect(a, b)
            | ExprKind::Diff(a, b)
            | ExprKind::Product(a, b) => {
                walk(a, under_closure, false)?;
                walk(b, under_closure, false)
            }
            ExprKind::Join(a, b) => {
                if under_converse && a.ty.len() == 2 && b.ty.len() == 2 {
                    return Err("converse over a reducible join".into());
                }
                walk(a, under_closure, false)?;
                walk(b, under_closure, false)
            }
            ExprKind::Converse(a) => {
                if under_converse {
                    return Err("nested converse".into());
                }
                match &a.kind {
                    ExprKind::Rel(..) | ExprKind::Var(_) | ExprKind::Join(..) => {
                        walk(a, under_closure, true)
                    }
                    _ => Err("converse not pushed to a name, variable or join".into()),
                }
            }
            ExprKind::Closure(a) => walk(a, true, false),
        }
    }
    if sf.exprs.is_empty() {
        return Err("special formula with no operands".into());
    }
    let ty = &sf.exprs[0].ty;
    for e in &sf.exprs {
        if &e.ty != ty {
            return Err("operand column types differ".into());
        }
        walk(e, false, false)?;
    }
    Ok(())
}
