//! The backtracking transaction engine.
//!
//! A normalized predicate runs as a depth-first search over the
//! nondeterministic choices of the fixed-point procedure: the working
//! post-instance starts as a copy of the pre-instance, and passes realize
//! every clause under every binding of its universal variables until a
//! pass records no update. Realizing an empty-polarity formula deletes
//! the tuples currently denoted by its expression; realizing a
//! nonempty-polarity formula chooses a type-correct tuple and inserts it.
//! Insertion and deletion through compound expressions recurse
//! structurally (the view update problem); failed branches roll the
//! working copy back to the last choice point via the update log itself.
//!
//! The conflict rule — no tuple is both inserted into and deleted from
//! the same relation within one transaction — bounds the log by the
//! mutable tuple space and with it the number of fixed-point rounds, so
//! every run terminates.

use crate::ast::{CheckedSpec, ColTypes, Expr, ExprKind, OccTag, RelKind};
use crate::normalize::{NormalizedPredicate, Polarity, SpecialFormula};
use crate::store::{eval, AtomId, Env, Instance, Tuple, UpdateAction, UpdateLog};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Fixed deterministic exploration order.
    Default,
    /// Alternatives shuffled per choice point from a seeded generator;
    /// still deterministic for a given seed.
    Random(u64),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub strategy: Strategy,
    pub max_choices: u64,
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { strategy: Strategy::Default, max_choices: 1_000_000, trace: false }
    }
}

/// Transaction failure. `Exhausted` is definitive: every branch of the
/// search failed. `Budget` is a diagnostic only.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecFailure {
    #[error("no update satisfies the predicate and the facts")]
    Exhausted,
    #[error("step budget exceeded: {0}")]
    Budget(String),
}

#[derive(Debug, Clone, Default)]
pub struct RunStats {
    /// Deepest fixed-point round entered.
    pub rounds: u32,
    /// Entries in the final update log (post-reduct).
    pub updates: usize,
    /// Largest update-log length observed during the search.
    pub peak_updates: usize,
    pub choice_points: u64,
    /// Total type-correct tuples over all mutable relations (incl. Skolems).
    pub mutable_tuple_space: usize,
    /// Derived round bound: 2 × mutable_tuple_space + 2.
    pub round_limit: u32,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// The post-instance, reduced to the original schema.
    pub post: Instance,
    /// Effective updates on the original schema, in execution order.
    pub log: UpdateLog,
    pub stats: RunStats,
    pub trace: Vec<String>,
}

enum Stop {
    Fail,
    Abort(String),
}

type Step = Result<(), Stop>;

struct PlanItem {
    clause: usize,
    binding: Vec<(String, AtomId)>,
}

struct Search<'a> {
    np: &'a NormalizedPredicate,
    pre: &'a Instance,
    post: Instance,
    env: Env,
    log: UpdateLog,
    plan: Vec<PlanItem>,
    writable: BTreeSet<String>,
    sig_names: BTreeSet<String>,
    choices: u64,
    max_choices: u64,
    site: u64,
    round_limit: u32,
    rounds_seen: u32,
    peak_updates: usize,
    rng: Option<ChaCha8Rng>,
    trace: Option<Vec<String>>,
}

impl<'a> Search<'a> {
    fn tr(&mut self, line: String) {
        if let Some(t) = &mut self.trace {
            t.push(line);
        }
    }

    fn next_site(&mut self) -> Result<u64, Stop> {
        self.choices += 1;
        if self.choices > self.max_choices {
            return Err(Stop::Abort(format!("more than {} choice points", self.max_choices)));
        }
        self.site += 1;
        Ok(self.site)
    }

    fn rollback(&mut self, mark: usize) {
        while self.log.len() > mark {
            let e = self.log.pop().expect("mark within log");
            let inverse = match e.action {
                UpdateAction::Insert => UpdateAction::Delete,
                UpdateAction::Delete => UpdateAction::Insert,
            };
            self.post.apply(&e.rel, &e.tuple, inverse);
        }
    }

    fn shuffle<T>(&mut self, items: &mut Vec<T>) {
        if let Some(rng) = &mut self.rng {
            items.shuffle(rng);
        }
    }

    // -- the fixed-point driver (algorithm A) -------------------------------

    fn alg_a(&mut self, round: u32, k: &mut dyn FnMut(&mut Search<'a>) -> Step) -> Step {
        if round > self.round_limit {
            return Err(Stop::Abort(format!(
                "fixed-point rounds exceeded the derived bound {}",
                self.round_limit
            )));
        }
        self.rounds_seen = self.rounds_seen.max(round);
        self.tr(format!("ROUND {round}"));
        let before = self.log.len();
        self.pass(0, &mut |s: &mut Search<'a>| {
            if s.log.len() == before {
                // no change in the updates: fixed point; accept only if
                // the matrix indeed holds (it does by construction, since
                // a no-op pass re-verified every clause)
                if s.np.matrix_holds(s.pre, &s.post, &s.env) {
                    k(s)
                } else {
                    Err(Stop::Fail)
                }
            } else {
                s.alg_a(round + 1, k)
            }
        })
    }

    // -- one pass over all clause instantiations (algorithm B) --------------

    fn pass(&mut self, item: usize, k: &mut dyn FnMut(&mut Search<'a>) -> Step) -> Step {
        if item == self.plan.len() {
            return k(self);
        }
        let (clause_idx, binding) =
            (self.plan[item].clause, self.plan[item].binding.clone());
        for (var, atom) in binding {
            self.env.insert(var, atom);
        }
        self.realize_clause(clause_idx, &mut |s: &mut Search<'a>| s.pass(item + 1, k))
    }

    /// Chooses a disjunct and realizes it. Disjuncts already true in the
    /// current state come first and are realized as no-ops; the rest are
    /// attempted in clause order, skipping check-only disjuncts.
    fn realize_clause(
        &mut self,
        clause_idx: usize,
        k: &mut dyn FnMut(&mut Search<'a>) -> Step,
    ) -> Step {
        let np = self.np;
        let clause = &np.clauses[clause_idx];
        let mut sat = Vec::new();
        let mut work = Vec::new();
        for (i, d) in clause.disjuncts.iter().enumerate() {
            if d.sf.holds(self.pre, &self.post, &self.env) {
                sat.push(i);
            } else if d.realizable {
                work.push(i);
            }
        }
        self.shuffle(&mut sat);
        self.shuffle(&mut work);
        let alts: Vec<(usize, bool)> = sat
            .into_iter()
            .map(|i| (i, true))
            .chain(work.into_iter().map(|i| (i, false)))
            .collect();
        if alts.is_empty() {
            return Err(Stop::Fail);
        }
        if alts.len() == 1 && alts[0].1 {
            // satisfied clause, nothing to choose
            return k(self);
        }
        let site = self.next_site()?;
        let mark = self.log.len();
        let n = alts.len();
        for (no, (di, already)) in alts.into_iter().enumerate() {
            self.tr(format!("CHOOSE site={site} alt={}/{n}", no + 1));
            let r = if already {
                k(self)
            } else {
                self.realize_sf(&np.clauses[clause_idx].disjuncts[di].sf, k)
            };
            match r {
                Ok(()) => return Ok(()),
                Err(Stop::Fail) => {
                    self.tr(format!("BACKTRACK site={site}"));
                    self.rollback(mark);
                }
                abort => return abort,
            }
        }
        Err(Stop::Fail)
    }

    fn realize_sf(
        &mut self,
        sf: &SpecialFormula,
        k: &mut dyn FnMut(&mut Search<'a>) -> Step,
    ) -> Step {
        let folded = sf.folded();
        match sf.polarity {
            Polarity::Empty => {
                // every tuple currently denoted is an obstacle
                let obstacles: Vec<Tuple> =
                    sf.eval(self.pre, &self.post, &self.env).into_iter().collect();
                self.delete_each(&obstacles, 0, &folded, k)
            }
            Polarity::NonEmpty => {
                let current = sf.eval(self.pre, &self.post, &self.env);
                let mut candidates: Vec<Tuple> = current.iter().cloned().collect();
                let mut rest: Vec<Tuple> = self
                    .tuple_space(&folded.ty)
                    .into_iter()
                    .filter(|t| !current.contains(t))
                    .collect();
                self.shuffle(&mut rest);
                candidates.extend(rest);
                if candidates.is_empty() {
                    return Err(Stop::Fail);
                }
                let site = self.next_site()?;
                let mark = self.log.len();
                let n = candidates.len();
                for (no, t) in candidates.iter().enumerate() {
                    self.tr(format!("CHOOSE site={site} alt={}/{n}", no + 1));
                    match self.insert_tuple(t, &folded, k) {
                        Ok(()) => return Ok(()),
                        Err(Stop::Fail) => {
                            self.tr(format!("BACKTRACK site={site}"));
                            self.rollback(mark);
                        }
                        abort => return abort,
                    }
                }
                Err(Stop::Fail)
            }
        }
    }

    fn tuple_space(&self, cols: &ColTypes) -> Vec<Tuple> {
        let mut out = vec![Tuple::default()];
        for col in cols {
            let atoms = self.pre.atoms_of(col);
            let mut next = Vec::with_capacity(out.len() * atoms.len().max(1));
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

    // -- view updates --------------------------------------------------------

    fn delete_each(
        &mut self,
        tuples: &[Tuple],
        i: usize,
        e: &Expr,
        k: &mut dyn FnMut(&mut Search<'a>) -> Step,
    ) -> Step {
        if i == tuples.len() {
            return k(self);
        }
        let t = tuples[i].clone();
        self.delete_tuple(&t, e, &mut |s: &mut Search<'a>| s.delete_each(tuples, i + 1, e, k))
    }

    fn is_sig(&self, name: &str) -> bool {
        self.sig_names.contains(name)
    }

    fn pre_contains(&self, name: &str, t: &Tuple) -> bool {
        if self.is_sig(name) {
            t.arity() == 1 && self.pre.atoms_of(name).contains(&t.0[0])
        } else {
            self.pre.contains(name, t)
        }
    }

    fn insert_tuple(
        &mut self,
        t: &Tuple,
        e: &Expr,
        k: &mut dyn FnMut(&mut Search<'a>) -> Step,
    ) -> Step {
        match &e.kind {
            ExprKind::Var(v) => {
                let atom = *self.env.get(v).expect("typed expression has bound variables");
                if t.0.as_slice() == [atom] {
                    k(self)
                } else {
                    Err(Stop::Fail)
                }
            }
            ExprKind::None => Err(Stop::Fail),
            ExprKind::Rel(name, tag) => {
                if *tag == OccTag::Post && self.writable.contains(name) {
                    if self.log.recorded(name, t) == Some(UpdateAction::Delete) {
                        return Err(Stop::Fail); // previously deleted
                    }
                    if self.post.contains(name, t) {
                        return k(self);
                    }
                    self.post.apply(name, t, UpdateAction::Insert);
                    self.log.push(name, t, UpdateAction::Insert);
                    self.peak_updates = self.peak_updates.max(self.log.len());
                    let line = format!("INS {name} {}", self.post.show_tuple(t));
                    self.tr(line);
                    k(self)
                } else {
                    // immutable or pre-state occurrence: a membership test
                    if self.pre_contains(name, t) {
                        k(self)
                    } else {
                        Err(Stop::Fail)
                    }
                }
            }
            ExprKind::Union(a, b) => {
                let site = self.next_site()?;
                let mark = self.log.len();
                let mut sides = vec![a.as_ref(), b.as_ref()];
                self.shuffle(&mut sides);
                for (no, side) in sides.into_iter().enumerate() {
                    self.tr(format!("CHOOSE site={site} alt={}/2", no + 1));
                    match self.insert_tuple(t, side, k) {
                        Ok(()) => return Ok(()),
                        Err(Stop::Fail) => {
                            self.tr(format!("BACKTRACK site={site}"));
                            self.rollback(mark);
                        }
                        abort => return abort,
                    }
                }
                Err(Stop::Fail)
            }
            ExprKind::Intersect(a, b) => {
                let t2 = t.clone();
                self.insert_tuple(t, a, &mut |s: &mut Search<'a>| s.insert_tuple(&t2, b, k))
            }
            ExprKind::Diff(a, b) => {
                let t2 = t.clone();
                self.insert_tuple(t, a, &mut |s: &mut Search<'a>| s.delete_tuple(&t2, b, k))
            }
            ExprKind::Converse(a) => self.insert_tuple(&t.reversed(), a, k),
            ExprKind::Product(a, b) => {
                let (tl, tr) = t.split(a.ty.len());
                self.insert_tuple(&tl, a, &mut |s: &mut Search<'a>| s.insert_tuple(&tr, b, k))
            }
            ExprKind::Closure(a) => self.insert_tuple(t, a, k),
            ExprKind::Join(a, b) => self.insert_join(t, e, a, b, k),
        }
    }

    /// Join insertion: witnesses from the current denotation of the
    /// endpoint side first; when none works, a witness atom is chosen
    /// freely and inserted into both sides.
    fn insert_join(
        &mut self,
        t: &Tuple,
        _e: &Expr,
        a: &Expr,
        b: &Expr,
        k: &mut dyn FnMut(&mut Search<'a>) -> Step,
    ) -> Step {
        let na = a.ty.len();
        let nb = b.ty.len();
        enum Alt {
            Known(AtomId),
            Fresh(AtomId),
        }
        let (join_sig, members): (&str, BTreeSet<AtomId>) = if na == 1 {
            let m = eval(a, self.pre, &self.post, &self.env).iter().map(|w| w.0[0]).collect();
            (&a.ty[0], m)
        } else if nb == 1 {
            let m = eval(b, self.pre, &self.post, &self.env).iter().map(|w| w.0[0]).collect();
            (&b.ty[0], m)
        } else {
            (&a.ty[na - 1], BTreeSet::new())
        };
        let mut alts: Vec<Alt> = members.iter().map(|w| Alt::Known(*w)).collect();
        let mut fresh: Vec<Alt> = self
            .pre
            .atoms_of(join_sig)
            .iter()
            .filter(|w| !members.contains(w))
            .map(|w| Alt::Fresh(*w))
            .collect();
        self.shuffle(&mut fresh);
        alts.extend(fresh);
        if alts.is_empty() {
            return Err(Stop::Fail);
        }
        let site = self.next_site()?;
        let mark = self.log.len();
        let n = alts.len();
        for (no, alt) in alts.into_iter().enumerate() {
            self.tr(format!("CHOOSE site={site} alt={}/{n}", no + 1));
            let r = match alt {
                Alt::Known(w) if na == 1 => {
                    let wt = Tuple::unary(w).concat(t);
                    self.insert_tuple(&wt, b, k)
                }
                Alt::Fresh(w) if na == 1 => {
                    let wt = Tuple::unary(w);
                    let rest = wt.concat(t);
                    self.insert_tuple(&wt, a, &mut |s: &mut Search<'a>| {
                        s.insert_tuple(&rest, b, k)
                    })
                }
                Alt::Known(w) if nb == 1 => {
                    let tw = t.concat(&Tuple::unary(w));
                    self.insert_tuple(&tw, a, k)
                }
                Alt::Fresh(w) if nb == 1 => {
                    let wt = Tuple::unary(w);
                    let tw = t.concat(&wt);
                    self.insert_tuple(&wt, b, &mut |s: &mut Search<'a>| {
                        s.insert_tuple(&tw, a, k)
                    })
                }
                Alt::Known(w) | Alt::Fresh(w) => {
                    // interior join column: split t and seed both sides
                    let (tl, tr) = t.split(na - 1);
                    let left = tl.concat(&Tuple::unary(w));
                    let right = Tuple::unary(w).concat(&tr);
                    self.insert_tuple(&left, a, &mut |s: &mut Search<'a>| {
                        s.insert_tuple(&right, b, k)
                    })
                }
            };
            match r {
                Ok(()) => return Ok(()),
                Err(Stop::Fail) => {
                    self.tr(format!("BACKTRACK site={site}"));
                    self.rollback(mark);
                }
                abort => return abort,
            }
        }
        Err(Stop::Fail)
    }

    fn delete_tuple(
        &mut self,
        t: &Tuple,
        e: &Expr,
        k: &mut dyn FnMut(&mut Search<'a>) -> Step,
    ) -> Step {
        match &e.kind {
            ExprKind::Var(v) => {
                let atom = *self.env.get(v).expect("typed expression has bound variables");
                if t.0.as_slice() == [atom] {
                    Err(Stop::Fail)
                } else {
                    k(self)
                }
            }
            ExprKind::None => k(self),
            ExprKind::Rel(name, tag) => {
                if *tag == OccTag::Post && self.writable.contains(name) {
                    if self.log.recorded(name, t) == Some(UpdateAction::Insert) {
                        return Err(Stop::Fail); // previously inserted
                    }
                    if !self.post.contains(name, t) {
                        return k(self);
                    }
                    self.post.apply(name, t, UpdateAction::Delete);
                    self.log.push(name, t, UpdateAction::Delete);
                    self.peak_updates = self.peak_updates.max(self.log.len());
                    let line = format!("DEL {name} {}", self.post.show_tuple(t));
                    self.tr(line);
                    k(self)
                } else {
                    if self.pre_contains(name, t) {
                        Err(Stop::Fail)
                    } else {
                        k(self)
                    }
                }
            }
            ExprKind::Union(a, b) => {
                let t2 = t.clone();
                self.delete_tuple(t, a, &mut |s: &mut Search<'a>| s.delete_tuple(&t2, b, k))
            }
            ExprKind::Intersect(a, b) => {
                let site = self.next_site()?;
                let mark = self.log.len();
                let mut sides = vec![a.as_ref(), b.as_ref()];
                self.shuffle(&mut sides);
                for (no, side) in sides.into_iter().enumerate() {
                    self.tr(format!("CHOOSE site={site} alt={}/2", no + 1));
                    match self.delete_tuple(t, side, k) {
                        Ok(()) => return Ok(()),
                        Err(Stop::Fail) => {
                            self.tr(format!("BACKTRACK site={site}"));
                            self.rollback(mark);
                        }
                        abort => return abort,
                    }
                }
                Err(Stop::Fail)
            }
            ExprKind::Diff(a, b) => {
                // delete from the left or insert into the subtrahend
                let site = self.next_site()?;
                let mark = self.log.len();
                let mut order = vec![true, false];
                self.shuffle(&mut order);
                for (no, del_side) in order.into_iter().enumerate() {
                    self.tr(format!("CHOOSE site={site} alt={}/2", no + 1));
                    let r = if del_side {
                        self.delete_tuple(t, a, k)
                    } else {
                        self.insert_tuple(t, b, k)
                    };
                    match r {
                        Ok(()) => return Ok(()),
                        Err(Stop::Fail) => {
                            self.tr(format!("BACKTRACK site={site}"));
                            self.rollback(mark);
                        }
                        abort => return abort,
                    }
                }
                Err(Stop::Fail)
            }
            ExprKind::Converse(a) => self.delete_tuple(&t.reversed(), a, k),
            ExprKind::Product(a, b) => {
                let (tl, tr) = t.split(a.ty.len());
                let site = self.next_site()?;
                let mark = self.log.len();
                let mut order = vec![true, false];
                self.shuffle(&mut order);
                for (no, left) in order.into_iter().enumerate() {
                    self.tr(format!("CHOOSE site={site} alt={}/2", no + 1));
                    let r = if left {
                        self.delete_tuple(&tl, a, k)
                    } else {
                        self.delete_tuple(&tr, b, k)
                    };
                    match r {
                        Ok(()) => return Ok(()),
                        Err(Stop::Fail) => {
                            self.tr(format!("BACKTRACK site={site}"));
                            self.rollback(mark);
                        }
                        abort => return abort,
                    }
                }
                Err(Stop::Fail)
            }
            ExprKind::Join(a, b) => {
                let na = a.ty.len();
                let nb = b.ty.len();
                // every current witness decomposition must be broken
                let witnesses: Vec<(Tuple, Tuple)> = if na == 1 {
                    eval(a, self.pre, &self.post, &self.env)
                        .into_iter()
                        .map(|w| {
                            let wt = w.concat(t);
                            (w, wt)
                        })
                        .collect()
                } else if nb == 1 {
                    eval(b, self.pre, &self.post, &self.env)
                        .into_iter()
                        .map(|w| (t.concat(&w), w))
                        .collect()
                } else {
                    let (tl, tr) = t.split(na - 1);
                    let sa = eval(a, self.pre, &self.post, &self.env);
                    let sb = eval(b, self.pre, &self.post, &self.env);
                    self.pre
                        .atoms_of(&a.ty[na - 1])
                        .iter()
                        .map(|w| {
                            let left = tl.concat(&Tuple::unary(*w));
                            let right = Tuple::unary(*w).concat(&tr);
                            (left, right)
                        })
                        .filter(|(l, r)| sa.contains(l) && sb.contains(r))
                        .collect()
                };
                self.break_witnesses(&witnesses, 0, a, b, na == 1, nb == 1, k)
            }
            ExprKind::Closure(a) => {
                let edges = eval(a, self.pre, &self.post, &self.env);
                debug_assert_eq!(t.arity(), 2);
                let paths = simple_paths(&edges, t.0[0], t.0[1]);
                self.break_paths(&paths, 0, a, k)
            }
        }
    }

    /// For each witness decomposition of a join tuple, chooses a side to
    /// break. For an endpoint witness the unary side holds the witness
    /// atom itself.
    #[allow(clippy::too_many_arguments)]
    fn break_witnesses(
        &mut self,
        ws: &[(Tuple, Tuple)],
        i: usize,
        a: &Expr,
        b: &Expr,
        a_unary: bool,
        b_unary: bool,
        k: &mut dyn FnMut(&mut Search<'a>) -> Step,
    ) -> Step {
        if i == ws.len() {
            return k(self);
        }
        let (left, right) = ws[i].clone();
        let site = self.next_site()?;
        let mark = self.log.len();
        // the paper breaks via the non-endpoint side; keep that first
        let mut order = if a_unary { vec![false, true] } else { vec![true, false] };
        let _ = b_unary;
        self.shuffle(&mut order);
        for (no, break_left) in order.into_iter().enumerate() {
            self.tr(format!("CHOOSE site={site} alt={}/2", no + 1));
            let r = if break_left {
                self.delete_tuple(&left, a, &mut |s: &mut Search<'a>| {
                    s.break_witnesses(ws, i + 1, a, b, a_unary, b_unary, k)
                })
            } else {
                self.delete_tuple(&right, b, &mut |s: &mut Search<'a>| {
                    s.break_witnesses(ws, i + 1, a, b, a_unary, b_unary, k)
                })
            };
            match r {
                Ok(()) => return Ok(()),
                Err(Stop::Fail) => {
                    self.tr(format!("BACKTRACK site={site}"));
                    self.rollback(mark);
                }
                abort => return abort,
            }
        }
        Err(Stop::Fail)
    }

    /// For each witness path of a closure membership, chooses one edge to
    /// delete; remaining paths re-derive next round on the updated state.
    fn break_paths(
        &mut self,
        paths: &[Vec<Tuple>],
        i: usize,
        edge_expr: &Expr,
        k: &mut dyn FnMut(&mut Search<'a>) -> Step,
    ) -> Step {
        if i == paths.len() {
            return k(self);
        }
        let path = paths[i].clone();
        let site = self.next_site()?;
        let mark = self.log.len();
        let mut order: Vec<usize> = (0..path.len()).collect();
        self.shuffle(&mut order);
        let n = order.len();
        for (no, ei) in order.into_iter().enumerate() {
            self.tr(format!("CHOOSE site={site} alt={}/{n}", no + 1));
            let edge = path[ei].clone();
            match self.delete_tuple(&edge, edge_expr, &mut |s: &mut Search<'a>| {
                s.break_paths(paths, i + 1, edge_expr, k)
            }) {
                Ok(()) => return Ok(()),
                Err(Stop::Fail) => {
                    self.tr(format!("BACKTRACK site={site}"));
                    self.rollback(mark);
                }
                abort => return abort,
            }
        }
        Err(Stop::Fail)
    }
}

/// All simple paths from `from` to `to` through the edge set, as edge
/// sequences (intermediate nodes never repeat; a cycle back to `from`
/// counts when `from == to`). Deterministic order.
fn simple_paths(edges: &crate::store::TupleSet, from: AtomId, to: AtomId) -> Vec<Vec<Tuple>> {
    let mut adj: std::collections::BTreeMap<AtomId, Vec<AtomId>> = Default::default();
    for e in edges {
        adj.entry(e.0[0]).or_default().push(e.0[1]);
    }
    let mut out = Vec::new();
    let mut path: Vec<Tuple> = Vec::new();
    let mut visited: BTreeSet<AtomId> = BTreeSet::new();
    fn rec(
        adj: &std::collections::BTreeMap<AtomId, Vec<AtomId>>,
        at: AtomId,
        to: AtomId,
        visited: &mut BTreeSet<AtomId>,
        path: &mut Vec<Tuple>,
        out: &mut Vec<Vec<Tuple>>,
    ) {
        let Some(nexts) = adj.get(&at) else { return };
        for n in nexts {
            let edge = Tuple(vec![at, *n]);
            if *n == to {
                let mut p = path.clone();
                p.push(edge.clone());
                out.push(p);
                if *n == at {
                    continue;
                }
            }
            if visited.contains(n) || *n == to {
                continue;
            }
            visited.insert(*n);
            path.push(edge);
            rec(adj, *n, to, visited, path, out);
            path.pop();
            visited.remove(n);
        }
    }
    visited.insert(from);
    rec(&adj, from, to, &mut visited, &mut path, &mut out);
    out
}

/// Total number of type-correct tuples over the mutable relations
/// (schema mutables plus the predicate's Skolem relations).
pub fn mutable_tuple_space(
    cs: &CheckedSpec,
    np: &NormalizedPredicate,
    inst: &Instance,
) -> usize {
    let mut total = 0usize;
    let count = |cols: &ColTypes| -> usize {
        cols.iter().map(|c| inst.atoms_of(c).len()).product::<usize>()
    };
    for (_, info) in cs.schema.mutable_rels() {
        total += count(&info.cols);
    }
    for sk in &np.skolems {
        total += count(&sk.cols);
    }
    total
}

/// Executes a normalized predicate as an all-or-nothing transaction.
///
/// On success the returned post-instance differs from `pre` only on
/// mutable relations, is reduced to the original schema, and satisfies
/// the predicate body and all facts. On failure `pre` is untouched
/// (the search worked on a private copy).
pub fn run_predicate(
    cs: &CheckedSpec,
    np: &NormalizedPredicate,
    env: &Env,
    pre: &Instance,
    cfg: &RunConfig,
) -> Result<RunOutcome, (ExecFailure, RunStats)> {
    for p in &np.params {
        debug_assert!(env.contains_key(&p.name), "parameter `{}` unbound", p.name);
    }
    let space = mutable_tuple_space(cs, np, pre);
    let round_limit = (2 * space + 2) as u32;

    // one pass = every clause under every binding of the universals it
    // mentions (bindings of unused universals would realize identically)
    let mut plan = Vec::new();
    for (ci, clause) in np.clauses.iter().enumerate() {
        let vars: Vec<(String, String)> = np
            .universals
            .iter()
            .filter(|(v, _)| clause.used_universals.contains(v))
            .cloned()
            .collect();
        let mut bindings: Vec<Vec<(String, AtomId)>> = vec![Vec::new()];
        for (v, sig) in &vars {
            let atoms = pre.atoms_of(sig);
            let mut next = Vec::with_capacity(bindings.len() * atoms.len());
            for b in &bindings {
                for a in atoms {
                    let mut nb = b.clone();
                    nb.push((v.clone(), *a));
                    next.push(nb);
                }
            }
            bindings = next;
        }
        for b in bindings {
            plan.push(PlanItem { clause: ci, binding: b });
        }
    }

    let mut writable: BTreeSet<String> =
        cs.schema.mutable_rels().map(|(n, _)| n.clone()).collect();
    let skolem_names: BTreeSet<String> = np.skolems.iter().map(|d| d.name.clone()).collect();
    writable.extend(skolem_names.iter().cloned());
    let sig_names: BTreeSet<String> = cs
        .schema
        .rels
        .iter()
        .filter(|(_, i)| i.kind == RelKind::SigUniverse)
        .map(|(n, _)| n.clone())
        .collect();

    let mut search = Search {
        np,
        pre,
        post: pre.clone(),
        env: env.clone(),
        log: UpdateLog::new(),
        plan,
        writable,
        sig_names,
        choices: 0,
        max_choices: cfg.max_choices,
        site: 0,
        round_limit,
        rounds_seen: 0,
        peak_updates: 0,
        rng: match cfg.strategy {
            Strategy::Default => None,
            Strategy::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        },
        trace: if cfg.trace { Some(Vec::new()) } else { None },
    };

    let result = search.alg_a(1, &mut |_s: &mut Search| Ok(()));
    let stats = RunStats {
        rounds: search.rounds_seen,
        updates: search.log.len(),
        peak_updates: search.peak_updates,
        choice_points: search.choices,
        mutable_tuple_space: space,
        round_limit,
    };
    match result {
        Ok(()) => {
            let mut post = search.post;
            for sk in &skolem_names {
                post.rels.remove(sk);
            }
            let log = search.log.without_rels(&skolem_names);
            let stats = RunStats { updates: log.len(), ..stats };
            Ok(RunOutcome { post, log, stats, trace: search.trace.unwrap_or_default() })
        }
        Err(Stop::Fail) => Err((ExecFailure::Exhausted, stats)),
        Err(Stop::Abort(msg)) => Err((ExecFailure::Budget(msg), stats)),
    }
}
