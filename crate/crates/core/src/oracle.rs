//! Independent reference semantics: a direct truth evaluator for
//! predicate bodies over an instance pair, and a brute-force enumerator
//! of post-instances.
//!
//! This module deliberately re-implements expression denotation rather
//! than reusing the engine's evaluator, and checks facts separately on
//! the post-instance rather than through the primed-conjunction rewrite,
//! so the normalizer and executor are validated against genuinely
//! independent semantics. Only small universes are in scope.

use crate::ast::{CheckedSpec, ColTypes, Expr, ExprKind, Fact, Formula, Predicate};
use crate::store::{Env, Instance, Tuple, TupleSet, UpdateAction};
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct OracleConfig {
    /// Refuse to enumerate when any signature exceeds this many atoms.
    pub max_atoms_per_sig: usize,
    /// Hard cap on the number of candidate post-instances.
    pub enumeration_cap: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { max_atoms_per_sig: 4, enumeration_cap: 1 << 22 }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("universe too large for enumeration: signature `{sig}` has {found} atoms (cap {cap})")]
    UniverseTooLarge { sig: String, found: usize, cap: usize },
    #[error("enumeration needs {needed} candidates, cap is {cap}")]
    CapExceeded { needed: u128, cap: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Pre,
    Post,
}

struct EvalCtx<'a> {
    pre: &'a Instance,
    post: &'a Instance,
    /// Pre/post designation of the predicate's state parameters.
    sides: BTreeMap<String, Side>,
}

/// Expression denotation with per-occurrence instance selection: an
/// occurrence rooted (through joins at its first column, set operators
/// and product left operands) at the unprimed state parameter reads the
/// pre-instance, one rooted at the primed parameter reads the
/// post-instance, and anything else reads the pre-instance. Converse and
/// closure reorder columns and do not transmit a root.
fn denote(e: &Expr, ctx: Option<Side>, cx: &EvalCtx, env: &Env) -> TupleSet {
    match &e.kind {
        ExprKind::Rel(name, _) => {
            let inst = match ctx {
                Some(Side::Post) => cx.post,
                _ => cx.pre,
            };
            let atoms = inst.atoms_of(name);
            if !atoms.is_empty() || inst.sigs().any(|(s, _)| s == name) {
                atoms.iter().map(|a| Tuple::unary(*a)).collect()
            } else {
                inst.tuples(name)
            }
        }
        ExprKind::Var(v) => {
            let a = env.get(v).unwrap_or_else(|| panic!("oracle: unbound variable `{v}`"));
            std::iter::once(Tuple::unary(*a)).collect()
        }
        ExprKind::None => TupleSet::new(),
        ExprKind::Union(a, b) => {
            let mut s = denote(a, ctx, cx, env);
            s.extend(denote(b, ctx, cx, env));
            s
        }
        ExprKind::Intersect(a, b) => {
            let sa = denote(a, ctx, cx, env);
            let sb = denote(b, ctx, cx, env);
            sa.into_iter().filter(|t| sb.contains(t)).collect()
        }
        ExprKind::Diff(a, b) => {
            let sa = denote(a, ctx, cx, env);
            let sb = denote(b, ctx, cx, env);
            sa.into_iter().filter(|t| !sb.contains(t)).collect()
        }
        ExprKind::Join(a, b) => {
            let b_ctx = match a.as_var() {
                Some(v) => cx.sides.get(v).copied().or(None),
                None => None,
            };
            let sa = denote(a, ctx, cx, env);
            let sb = denote(b, b_ctx, cx, env);
            let mut out = TupleSet::new();
            for ta in &sa {
                for tb in &sb {
                    if ta.0.last() == tb.0.first() && ta.arity() + tb.arity() > 2 {
                        let mut v = ta.0[..ta.arity() - 1].to_vec();
                        v.extend_from_slice(&tb.0[1..]);
                        out.insert(Tuple(v));
                    }
                }
            }
            out
        }
        ExprKind::Product(a, b) => {
            let sa = denote(a, ctx, cx, env);
            let sb = denote(b, None, cx, env);
            let mut out = TupleSet::new();
            for ta in &sa {
                for tb in &sb {
                    out.insert(ta.concat(tb));
                }
            }
            out
        }
        ExprKind::Converse(a) => denote(a, None, cx, env).iter().map(Tuple::reversed).collect(),
        ExprKind::Closure(a) => {
            // path-existence route, independent of the engine's iterated
            // squaring
            let edges = denote(a, None, cx, env);
            let mut adj: BTreeMap<crate::store::AtomId, Vec<crate::store::AtomId>> =
                BTreeMap::new();
            for t in &edges {
                adj.entry(t.0[0]).or_default().push(t.0[1]);
            }
            let mut out = TupleSet::new();
            for src in adj.keys().copied().collect::<Vec<_>>() {
                let mut stack: Vec<crate::store::AtomId> =
                    adj.get(&src).cloned().unwrap_or_default();
                let mut seen = std::collections::BTreeSet::new();
                while let Some(n) = stack.pop() {
                    if !seen.insert(n) {
                        continue;
                    }
                    out.insert(Tuple(vec![src, n]));
                    if let Some(next) = adj.get(&n) {
                        stack.extend(next.iter().copied());
                    }
                }
            }
            out
        }
    }
}

fn truth(f: &Formula, cx: &EvalCtx, env: &mut Env) -> bool {
    match f {
        Formula::In(a, b) => {
            let sa = denote(a, None, cx, env);
            let sb = denote(b, None, cx, env);
            sa.iter().all(|t| sb.contains(t))
        }
        Formula::Eq(a, b) => denote(a, None, cx, env) == denote(b, None, cx, env),
        Formula::Not(g) => !truth(g, cx, env),
        Formula::And(a, b) => truth(a, cx, env) && truth(b, cx, env),
        Formula::Or(a, b) => truth(a, cx, env) || truth(b, cx, env),
        Formula::Forall(q) => {
            let dom = denote(&q.bound, None, cx, env);
            dom.iter().all(|t| {
                let prev = env.insert(q.var.clone(), t.0[0]);
                let r = truth(&q.body, cx, env);
                match prev {
                    Some(p) => env.insert(q.var.clone(), p),
                    None => env.remove(&q.var),
                };
                r
            })
        }
        Formula::Exists(q) => {
            let dom = denote(&q.bound, None, cx, env);
            dom.iter().any(|t| {
                let prev = env.insert(q.var.clone(), t.0[0]);
                let r = truth(&q.body, cx, env);
                match prev {
                    Some(p) => env.insert(q.var.clone(), p),
                    None => env.remove(&q.var),
                };
                r
            })
        }
    }
}

/// Direct truth of a predicate body over an instance pair under an
/// environment: occurrences rooted at the unprimed state parameter are
/// interpreted in `pre`, those rooted at the primed parameter in `post`.
pub fn satisfies(
    cs: &CheckedSpec,
    p: &Predicate,
    pre: &Instance,
    post: &Instance,
    env: &Env,
) -> bool {
    let mut sides = BTreeMap::new();
    if let Some((s, sp)) = cs.state_params(p) {
        sides.insert(s.to_string(), Side::Pre);
        sides.insert(sp.to_string(), Side::Post);
    }
    let cx = EvalCtx { pre, post, sides };
    truth(&p.body, &cx, &mut env.clone())
}

/// Truth of an arbitrary formula over an instance pair; `pre_var` and
/// `post_var` name the state variables when the formula has them free.
pub fn formula_satisfies(
    f: &Formula,
    pre: &Instance,
    post: &Instance,
    env: &Env,
    pre_var: Option<&str>,
    post_var: Option<&str>,
) -> bool {
    let mut sides = BTreeMap::new();
    if let Some(v) = pre_var {
        sides.insert(v.to_string(), Side::Pre);
    }
    if let Some(v) = post_var {
        sides.insert(v.to_string(), Side::Post);
    }
    let cx = EvalCtx { pre, post, sides };
    truth(f, &cx, &mut env.clone())
}

/// A fact holds on a single instance (facts are evaluated on the
/// committed or candidate post state, not through the priming rewrite).
pub fn fact_holds(fact: &Fact, inst: &Instance) -> bool {
    let cx = EvalCtx { pre: inst, post: inst, sides: BTreeMap::new() };
    truth(&fact.body, &cx, &mut Env::new())
}

/// Body truth plus every fact on the post-instance.
pub fn transition_satisfies(
    cs: &CheckedSpec,
    p: &Predicate,
    pre: &Instance,
    post: &Instance,
    env: &Env,
) -> bool {
    satisfies(cs, p, pre, post, env) && cs.spec.facts.iter().all(|f| fact_holds(f, post))
}

// ---------------------------------------------------------------------------
// Brute-force enumeration
// ---------------------------------------------------------------------------

/// All type-correct tuples of a column sequence, lexicographic by ids.
pub fn tuple_space(inst: &Instance, cols: &ColTypes) -> Vec<Tuple> {
    let mut out = vec![Tuple::default()];
    for col in cols {
        let atoms = inst.atoms_of(col);
        let mut next = Vec::with_capacity(out.len() * atoms.len());
        for t in &out {
            for a in atoms {
                let mut v = t.0.clone();
                v.push(*a);
                next.push(Tuple(v));
            }
        }
        out = next;
    }
    out
}

fn check_universe(cs: &CheckedSpec, inst: &Instance, cfg: &OracleConfig) -> Result<(), OracleError> {
    for sig in &cs.spec.sigs {
        let n = inst.atoms_of(&sig.name).len();
        if n > cfg.max_atoms_per_sig {
            return Err(OracleError::UniverseTooLarge {
                sig: sig.name.clone(),
                found: n,
                cap: cfg.max_atoms_per_sig,
            });
        }
    }
    Ok(())
}

/// Drives `f` over every assignment of the given relations across the
/// fixed universe, in deterministic order (relations as listed, each
/// ranging over subsets of its tuple space by increasing bitmask).
/// Stops early when `f` returns false.
pub fn for_each_assignment(
    base: &Instance,
    rels: &[(String, ColTypes)],
    cap: u64,
    f: &mut impl FnMut(&Instance) -> bool,
) -> Result<(), OracleError> {
    let spaces: Vec<Vec<Tuple>> =
        rels.iter().map(|(_, cols)| tuple_space(base, cols)).collect();
    let mut total: u128 = 1;
    for s in &spaces {
        if s.len() >= 64 {
            return Err(OracleError::CapExceeded { needed: u128::MAX, cap });
        }
        total = total.saturating_mul(1u128 << s.len());
        if total > cap as u128 {
            return Err(OracleError::CapExceeded { needed: total, cap });
        }
    }
    fn rec(
        base: &Instance,
        rels: &[(String, ColTypes)],
        spaces: &[Vec<Tuple>],
        i: usize,
        work: &mut Instance,
        f: &mut impl FnMut(&Instance) -> bool,
    ) -> bool {
        if i == rels.len() {
            return f(work);
        }
        let space = &spaces[i];
        for mask in 0u64..(1u64 << space.len()) {
            let tuples: TupleSet = space
                .iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, t)| t.clone())
                .collect();
            work.rels.insert(rels[i].0.clone(), tuples);
            if !rec(base, rels, spaces, i + 1, work, f) {
                return false;
            }
        }
        work.rels.remove(&rels[i].0);
        true
    }
    let mut work = base.clone();
    rec(base, rels, &spaces, 0, &mut work, f);
    Ok(())
}

/// The relations a post-instance may differ on: mutable fields of the
/// schema plus any extra (Skolem) relations supplied.
fn search_rels(cs: &CheckedSpec, extra: &[(String, ColTypes)]) -> Vec<(String, ColTypes)> {
    let mut rels: Vec<(String, ColTypes)> =
        cs.schema.mutable_rels().map(|(n, i)| (n.clone(), i.cols.clone())).collect();
    rels.extend(extra.iter().cloned());
    rels
}

/// Enumerates every post-instance over the pre-instance's universe that
/// satisfies the predicate body (and, when `include_facts`, all facts on
/// the post-instance); deterministic order.
pub fn for_each_poststate(
    cs: &CheckedSpec,
    p: &Predicate,
    pre: &Instance,
    env: &Env,
    include_facts: bool,
    extra_rels: &[(String, ColTypes)],
    cfg: &OracleConfig,
    f: &mut impl FnMut(&Instance) -> bool,
) -> Result<(), OracleError> {
    check_universe(cs, pre, cfg)?;
    let rels = search_rels(cs, extra_rels);
    for_each_assignment(pre, &rels, cfg.enumeration_cap, &mut |cand| {
        let ok = if include_facts {
            transition_satisfies(cs, p, pre, cand, env)
        } else {
            satisfies(cs, p, pre, cand, env)
        };
        if ok {
            return f(cand);
        }
        true
    })
}

/// All satisfying post-instances (body plus facts), materialized.
pub fn enumerate_poststates(
    cs: &CheckedSpec,
    p: &Predicate,
    pre: &Instance,
    env: &Env,
    cfg: &OracleConfig,
) -> Result<Vec<Instance>, OracleError> {
    let mut out = Vec::new();
    for_each_poststate(cs, p, pre, env, true, &[], cfg, &mut |inst| {
        out.push(inst.clone());
        true
    })?;
    Ok(out)
}

/// First satisfying post-instance, if any.
pub fn find_poststate(
    cs: &CheckedSpec,
    p: &Predicate,
    pre: &Instance,
    env: &Env,
    cfg: &OracleConfig,
) -> Result<Option<Instance>, OracleError> {
    let mut found = None;
    for_each_poststate(cs, p, pre, env, true, &[], cfg, &mut |inst| {
        found = Some(inst.clone());
        false
    })?;
    Ok(found)
}

/// Body-only satisfiability over an optionally extended schema; used by
/// the Skolemization equisatisfiability checks.
pub fn find_poststate_body_only(
    cs: &CheckedSpec,
    p: &Predicate,
    pre: &Instance,
    env: &Env,
    extra_rels: &[(String, ColTypes)],
    cfg: &OracleConfig,
) -> Result<Option<Instance>, OracleError> {
    let mut found = None;
    for_each_poststate(cs, p, pre, env, false, extra_rels, cfg, &mut |inst| {
        found = Some(inst.clone());
        false
    })?;
    Ok(found)
}

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    /// The engine returned a post-instance the oracle rejects.
    SoundViolation,
    /// The engine failed although a satisfying post-instance exists.
    CompleteViolation,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Ok => write!(f, "OK"),
            Verdict::SoundViolation => write!(f, "SOUND-VIOLATION"),
            Verdict::CompleteViolation => write!(f, "COMPLETE-VIOLATION"),
        }
    }
}

/// Checks an execution outcome against the reference semantics:
/// a successful run must satisfy body and facts; a failed run must mean
/// no satisfying post-instance exists.
pub fn oracle_check(
    cs: &CheckedSpec,
    p: &Predicate,
    pre: &Instance,
    env: &Env,
    outcome: Option<&Instance>,
    cfg: &OracleConfig,
) -> Result<Verdict, OracleError> {
    match outcome {
        Some(post) => {
            if transition_satisfies(cs, p, pre, post, env) {
                Ok(Verdict::Ok)
            } else {
                Ok(Verdict::SoundViolation)
            }
        }
        None => {
            if find_poststate(cs, p, pre, env, cfg)?.is_some() {
                Ok(Verdict::CompleteViolation)
            } else {
                Ok(Verdict::Ok)
            }
        }
    }
}

/// The instance with the given relations removed (the reduct to the
/// original schema after a Skolemized run).
pub fn reduct(inst: &Instance, drop: &[String]) -> Instance {
    let mut out = inst.clone();
    for r in drop {
        out.rels.remove(r);
    }
    out
}

/// Replays sanity helper used in tests: `post = pre + log`.
pub fn apply_log(pre: &Instance, log: &crate::store::UpdateLog) -> Instance {
    let mut inst = pre.clone();
    for e in log.entries() {
        inst.apply(&e.rel, &e.tuple, e.action);
    }
    inst
}

/// Convenience: did an insert/delete pair for the same tuple sneak into
/// a log? (Used by property tests over random logs.)
pub fn log_conflict_free(log: &crate::store::UpdateLog) -> bool {
    let mut seen: BTreeMap<(String, Tuple), UpdateAction> = BTreeMap::new();
    for e in log.entries() {
        if let Some(prev) = seen.insert((e.rel.clone(), e.tuple.clone()), e.action) {
            if prev != e.action {
                return false;
            }
        }
    }
    true
}
