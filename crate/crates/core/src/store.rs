//! The relational store: atom universes, typed relations with pre/post
//! occurrence evaluation, update logs, and snapshot persistence.
//!
//! An `Instance` is a value; transactions work on a private copy and the
//! committed instance is replaced wholesale. Atoms are ordered by
//! creation index and tuples lexicographically by atom ids, so every
//! iteration order in the engine is deterministic.

use crate::ast::{CheckedSpec, Expr, ExprKind, OccTag, RelKind, Schema};
use crate::span::Span;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

/// Opaque atom identifier; ids are assigned in creation order and double
/// as the deterministic iteration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AtomId(pub u32);

impl fmt::Display for AtomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomData {
    pub sig: String,
    pub label: String,
}

/// An ordered sequence of atoms; the element of a relation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Tuple(pub Vec<AtomId>);

impl Tuple {
    pub fn unary(a: AtomId) -> Tuple {
        Tuple(vec![a])
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn reversed(&self) -> Tuple {
        let mut v = self.0.clone();
        v.reverse();
        Tuple(v)
    }

    pub fn concat(&self, other: &Tuple) -> Tuple {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Tuple(v)
    }

    /// Splits into a prefix of `left` atoms and the remainder.
    pub fn split(&self, left: usize) -> (Tuple, Tuple) {
        (Tuple(self.0[..left].to_vec()), Tuple(self.0[left..].to_vec()))
    }
}

/// Environment: a typed binding of variables to atoms.
pub type Env = BTreeMap<String, AtomId>;

pub type TupleSet = BTreeSet<Tuple>;

/// A relational structure over fixed per-signature atom universes.
///
/// Signature atom sets are implied by the universe; `rels` stores tuples
/// for field (and Skolem) relations only. `state_atom` designates the
/// state atom read by transactions; live databases keep exactly one atom
/// of the state signature.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Instance {
    atoms: Vec<AtomData>,
    universe: BTreeMap<String, Vec<AtomId>>,
    pub rels: BTreeMap<String, TupleSet>,
    pub state_atom: Option<AtomId>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("snapshot does not match the specification: {0}")]
    SchemaMismatch(String),
    #[error("database must have exactly one `{sig}` atom, found {found}")]
    StateAtoms { sig: String, found: usize },
}

impl Instance {
    /// Creates an empty instance with every field relation of the schema
    /// present (and empty).
    pub fn empty(schema: &Schema) -> Instance {
        let mut inst = Instance::default();
        for (name, info) in schema.rels.iter() {
            match info.kind {
                RelKind::SigUniverse => {
                    inst.universe.insert(name.clone(), Vec::new());
                }
                RelKind::Field { .. } => {
                    inst.rels.insert(name.clone(), TupleSet::new());
                }
                RelKind::Skolem => {}
            }
        }
        inst
    }

    /// Adds an atom of `sig`, returning its id. Updates the designated
    /// state atom when `sig` is the state signature and none exists yet.
    pub fn create_atom(&mut self, sig: &str, label: &str, state_sig: Option<&str>) -> AtomId {
        let id = AtomId(self.atoms.len() as u32);
        self.atoms.push(AtomData { sig: sig.to_string(), label: label.to_string() });
        self.universe.entry(sig.to_string()).or_default().push(id);
        if state_sig == Some(sig) && self.state_atom.is_none() {
            self.state_atom = Some(id);
        }
        id
    }

    pub fn atom(&self, id: AtomId) -> &AtomData {
        &self.atoms[id.0 as usize]
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn atoms_of(&self, sig: &str) -> &[AtomId] {
        self.universe.get(sig).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn sigs(&self) -> impl Iterator<Item = (&String, &Vec<AtomId>)> {
        self.universe.iter()
    }

    /// Looks up an atom by display label; `None` unless exactly one matches.
    pub fn atom_by_label(&self, label: &str) -> Option<AtomId> {
        let mut found = None;
        for (i, a) in self.atoms.iter().enumerate() {
            if a.label == label {
                if found.is_some() {
                    return None;
                }
                found = Some(AtomId(i as u32));
            }
        }
        found
    }

    pub fn set_label(&mut self, id: AtomId, label: &str) {
        self.atoms[id.0 as usize].label = label.to_string();
    }

    pub fn tuples(&self, rel: &str) -> TupleSet {
        self.rels.get(rel).cloned().unwrap_or_default()
    }

    pub fn contains(&self, rel: &str, t: &Tuple) -> bool {
        self.rels.get(rel).map(|s| s.contains(t)).unwrap_or(false)
    }

    /// Set-semantics insert or delete; returns whether anything changed.
    pub fn apply(&mut self, rel: &str, t: &Tuple, action: UpdateAction) -> bool {
        let set = self.rels.entry(rel.to_string()).or_default();
        match action {
            UpdateAction::Insert => set.insert(t.clone()),
            UpdateAction::Delete => set.remove(t),
        }
    }

    /// The universes of two instances agree (constant-domain assumption).
    pub fn same_universe(&self, other: &Instance) -> bool {
        self.atoms == other.atoms
    }

    /// Errors unless the state signature has exactly one atom; returns it.
    pub fn require_single_state(&self, state_sig: &str) -> Result<AtomId, StoreError> {
        let atoms = self.atoms_of(state_sig);
        if atoms.len() != 1 {
            return Err(StoreError::StateAtoms { sig: state_sig.to_string(), found: atoms.len() });
        }
        Ok(atoms[0])
    }

    /// Human-readable tuple rendering, labels in parentheses.
    pub fn show_tuple(&self, t: &Tuple) -> String {
        let labels: Vec<&str> = t.0.iter().map(|a| self.atom(*a).label.as_str()).collect();
        format!("({})", labels.join(", "))
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Evaluates a typed expression to a tuple set.
///
/// Relation occurrences tagged `Post` read `post`; `Pre` and `Immutable`
/// occurrences read `pre`. A variable denotes its singleton unary tuple.
/// Closure is the strict transitive closure, computed by iterated
/// squaring to a fixed point.
pub fn eval(e: &Expr, pre: &Instance, post: &Instance, env: &Env) -> TupleSet {
    match &e.kind {
        ExprKind::Rel(name, tag) => {
            let inst = if *tag == OccTag::Post { post } else { pre };
            if let Some(atoms) = inst.universe.get(name) {
                atoms.iter().map(|a| Tuple::unary(*a)).collect()
            } else {
                inst.tuples(name)
            }
        }
        ExprKind::Var(v) => {
            let atom = env.get(v).unwrap_or_else(|| panic!("unbound variable `{v}` in eval"));
            std::iter::once(Tuple::unary(*atom)).collect()
        }
        ExprKind::None => TupleSet::new(),
        ExprKind::Union(a, b) => {
            let mut s = eval(a, pre, post, env);
            s.extend(eval(b, pre, post, env));
            s
        }
        ExprKind::Intersect(a, b) => {
            let sa = eval(a, pre, post, env);
            let sb = eval(b, pre, post, env);
            sa.intersection(&sb).cloned().collect()
        }
        ExprKind::Diff(a, b) => {
            let sa = eval(a, pre, post, env);
            let sb = eval(b, pre, post, env);
            sa.difference(&sb).cloned().collect()
        }
        ExprKind::Join(a, b) => {
            let sa = eval(a, pre, post, env);
            let sb = eval(b, pre, post, env);
            join_sets(&sa, &sb)
        }
        ExprKind::Product(a, b) => {
            let sa = eval(a, pre, post, env);
            let sb = eval(b, pre, post, env);
            let mut out = TupleSet::new();
            for ta in &sa {
                for tb in &sb {
                    out.insert(ta.concat(tb));
                }
            }
            out
        }
        ExprKind::Converse(a) => eval(a, pre, post, env).iter().map(Tuple::reversed).collect(),
        ExprKind::Closure(a) => transitive_closure(&eval(a, pre, post, env)),
    }
}

/// Relational join: last atom of the left tuple matches the first atom of
/// the right tuple; both matched columns are dropped.
pub fn join_sets(sa: &TupleSet, sb: &TupleSet) -> TupleSet {
    let mut out = TupleSet::new();
    for ta in sa {
        let Some(last) = ta.0.last() else { continue };
        for tb in sb {
            let Some(first) = tb.0.first() else { continue };
            if last == first {
                let mut v = ta.0[..ta.0.len() - 1].to_vec();
                v.extend_from_slice(&tb.0[1..]);
                out.insert(Tuple(v));
            }
        }
    }
    out
}

/// Strict transitive closure of a set of pairs by iterated squaring.
pub fn transitive_closure(edges: &TupleSet) -> TupleSet {
    let mut closure = edges.clone();
    loop {
        let step = join_sets(&closure, &closure);
        let before = closure.len();
        closure.extend(step);
        if closure.len() == before {
            return closure;
        }
    }
}

// ---------------------------------------------------------------------------
// Update log
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateAction {
    Insert,
    Delete,
}

impl fmt::Display for UpdateAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpdateAction::Insert => write!(f, "ins"),
            UpdateAction::Delete => write!(f, "del"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateEntry {
    pub rel: String,
    pub tuple: Tuple,
    pub action: UpdateAction,
}

/// The ordered record of effective insertions and deletions of a
/// transaction. No (relation, tuple) pair may carry both actions — the
/// conflict rule that bounds the fixed-point iteration.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UpdateLog {
    entries: Vec<UpdateEntry>,
    seen: BTreeMap<(String, Tuple), UpdateAction>,
}

impl UpdateLog {
    pub fn new() -> UpdateLog {
        UpdateLog::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[UpdateEntry] {
        &self.entries
    }

    /// The action already recorded for (rel, tuple), if any.
    pub fn recorded(&self, rel: &str, t: &Tuple) -> Option<UpdateAction> {
        self.seen.get(&(rel.to_string(), t.clone())).copied()
    }

    /// Appends an entry; the conflict-freedom invariant is checked.
    pub fn push(&mut self, rel: &str, t: &Tuple, action: UpdateAction) {
        let key = (rel.to_string(), t.clone());
        if let Some(prev) = self.seen.get(&key) {
            assert_eq!(*prev, action, "conflicting update recorded for {rel} {t:?}");
        }
        self.seen.insert(key, action);
        self.entries.push(UpdateEntry { rel: rel.to_string(), tuple: t.clone(), action });
    }

    /// Removes and returns the latest entry (backtracking support).
    pub fn pop(&mut self) -> Option<UpdateEntry> {
        let e = self.entries.pop()?;
        self.seen.remove(&(e.rel.clone(), e.tuple.clone()));
        Some(e)
    }

    /// Applies the log in order to an instance.
    pub fn replay(&self, inst: &mut Instance) {
        for e in &self.entries {
            inst.apply(&e.rel, &e.tuple, e.action);
        }
    }

    /// Drops entries touching any of the given relations, preserving order.
    pub fn without_rels(&self, rels: &BTreeSet<String>) -> UpdateLog {
        let mut out = UpdateLog::new();
        for e in &self.entries {
            if !rels.contains(&e.rel) {
                out.push(&e.rel, &e.tuple, e.action);
            }
        }
        out
    }
}

/// Per-relation symmetric difference of two instances over the same
/// universe, as a minimal log (deletes then inserts, relations in name
/// order, tuples in lexicographic order).
pub fn diff(pre: &Instance, post: &Instance) -> UpdateLog {
    assert!(pre.same_universe(post), "diff requires equal universes");
    let mut log = UpdateLog::new();
    let names: BTreeSet<&String> = pre.rels.keys().chain(post.rels.keys()).collect();
    for name in names {
        let a = pre.tuples(name);
        let b = post.tuples(name);
        for t in a.difference(&b) {
            log.push(name, t, UpdateAction::Delete);
        }
        for t in b.difference(&a) {
            log.push(name, t, UpdateAction::Insert);
        }
    }
    log
}

/// Whether `j` can be obtained from `i` by a subset of the inserts and
/// deletes transforming `i` into `iprime`: per relation,
/// `i − j ⊆ i − i'` and `j − i ⊆ i' − i`.
pub fn is_approximation(j: &Instance, i: &Instance, iprime: &Instance) -> bool {
    let names: BTreeSet<&String> =
        j.rels.keys().chain(i.rels.keys()).chain(iprime.rels.keys()).collect();
    for name in names {
        let sj = j.tuples(name);
        let si = i.tuples(name);
        let sp = iprime.tuples(name);
        for t in si.difference(&sj) {
            if sp.contains(t) {
                return false; // deleted something i' keeps
            }
        }
        for t in sj.difference(&si) {
            if !sp.contains(t) {
                return false; // added something outside i' − i
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Snapshots
// ---------------------------------------------------------------------------

/// How strictly `read_snapshot` validates the state signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotMode {
    /// A live database: exactly one state atom required.
    Database,
    /// An arbitrary relational structure (oracle instances may designate
    /// distinct pre/post state atoms within a shared universe).
    Structure,
}

/// Serializes an instance to the snapshot text format:
/// line 1 `SPECDB 1`, then `atom <sig> <id> <label>` lines in id order,
/// then per relation `rel <name>` followed by tab-separated id tuples in
/// lexicographic order. `#` starts a comment line.
pub fn write_snapshot_string(inst: &Instance) -> String {
    let mut out = String::from("SPECDB 1\n");
    for (i, a) in inst.atoms.iter().enumerate() {
        out.push_str(&format!("atom {} {} {}\n", a.sig, i, a.label));
    }
    for (name, tuples) in &inst.rels {
        out.push_str(&format!("rel {name}\n"));
        for t in tuples {
            let ids: Vec<String> = t.0.iter().map(|a| a.0.to_string()).collect();
            out.push_str(&ids.join("\t"));
            out.push('\n');
        }
    }
    out
}

/// Atomically writes a snapshot: temp file in the same directory, then
/// rename over the target.
pub fn write_snapshot(inst: &Instance, path: &Path) -> Result<(), StoreError> {
    let text = write_snapshot_string(inst);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("snapshot"),
        std::process::id()
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_snapshot(
    path: &Path,
    cs: &CheckedSpec,
    mode: SnapshotMode,
) -> Result<Instance, StoreError> {
    let text = std::fs::read_to_string(path)?;
    read_snapshot_string(&text, cs, mode)
}

pub fn read_snapshot_string(
    text: &str,
    cs: &CheckedSpec,
    mode: SnapshotMode,
) -> Result<Instance, StoreError> {
    let fail = |line: usize, msg: &str| StoreError::Format { line, msg: msg.to_string() };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim_end() == "SPECDB 1" => {}
        _ => return Err(fail(1, "missing `SPECDB 1` header")),
    }
    let mut inst = Instance::empty(&cs.schema);
    let mut current_rel: Option<(String, usize)> = None;
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("atom ") {
            let mut parts = rest.splitn(3, ' ');
            let sig = parts.next().ok_or_else(|| fail(line_no, "missing signature"))?;
            let id: u32 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| fail(line_no, "bad atom id"))?;
            let label = parts.next().unwrap_or("").to_string();
            if !matches!(cs.schema.rel(sig), Some(i) if i.kind == RelKind::SigUniverse) {
                return Err(StoreError::SchemaMismatch(format!("unknown signature `{sig}`")));
            }
            if id as usize != inst.atoms.len() {
                return Err(fail(line_no, "atom ids must be contiguous and in order"));
            }
            inst.create_atom(sig, &label, cs.state_sig());
            continue;
        }
        if let Some(name) = line.strip_prefix("rel ") {
            let name = name.trim();
            let Some(info) = cs.schema.rel(name) else {
                return Err(StoreError::SchemaMismatch(format!("unknown relation `{name}`")));
            };
            if info.kind == RelKind::SigUniverse {
                return Err(StoreError::SchemaMismatch(format!(
                    "`{name}` is a signature, not a stored relation"
                )));
            }
            current_rel = Some((name.to_string(), info.cols.len()));
            continue;
        }
        let Some((rel, arity)) = &current_rel else {
            return Err(fail(line_no, "tuple line outside a `rel` section"));
        };
        let mut ids = Vec::new();
        for part in line.split('\t') {
            let id: u32 = part.trim().parse().map_err(|_| fail(line_no, "bad atom id in tuple"))?;
            if id as usize >= inst.atoms.len() {
                return Err(fail(line_no, "tuple references an undeclared atom"));
            }
            ids.push(AtomId(id));
        }
        if ids.len() != *arity {
            return Err(StoreError::SchemaMismatch(format!(
                "relation `{rel}` expects arity {arity}, tuple has {}",
                ids.len()
            )));
        }
        let cols = cs.schema.rel(rel).unwrap().cols.clone();
        for (a, col) in ids.iter().zip(&cols) {
            if &inst.atom(*a).sig != col {
                return Err(StoreError::SchemaMismatch(format!(
                    "tuple in `{rel}` has a `{}` atom in a `{col}` column",
                    inst.atom(*a).sig
                )));
            }
        }
        inst.apply(&rel.clone(), &Tuple(ids), UpdateAction::Insert);
    }
    if let Some(state) = cs.state_sig() {
        match mode {
            SnapshotMode::Database => {
                inst.state_atom = Some(inst.require_single_state(state)?);
            }
            SnapshotMode::Structure => {
                inst.state_atom = inst.atoms_of(state).first().copied();
            }
        }
    }
    Ok(inst)
}

// ---------------------------------------------------------------------------
// Journal
// ---------------------------------------------------------------------------

/// Appends one committed transaction to a journal file, in the snapshot
/// style: a `txn` header, `ins`/`del` lines with tab-separated atom ids,
/// and a blank line.
pub fn append_journal(
    path: &Path,
    pred: &str,
    args: &[AtomId],
    log: &UpdateLog,
) -> Result<(), StoreError> {
    let mut out = String::new();
    let ids: Vec<String> = args.iter().map(|a| a.0.to_string()).collect();
    out.push_str(&format!("txn {pred} {}\n", ids.join(" ")));
    for e in log.entries() {
        let ids: Vec<String> = e.tuple.0.iter().map(|a| a.0.to_string()).collect();
        out.push_str(&format!("{} {}\t{}\n", e.action, e.rel, ids.join("\t")));
    }
    out.push('\n');
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Builds an environment for a predicate call per the operational
/// convention: the unprimed state parameter maps to the pre-state atom,
/// the primed one to the post-state atom.
pub fn bind_params(
    cs: &CheckedSpec,
    pred: &crate::ast::Predicate,
    args: &[(String, AtomId)],
    pre_state: AtomId,
    post_state: AtomId,
) -> Result<Env, crate::ast::TypeErrorReport> {
    let mut env = Env::new();
    let (s, sp) = cs.state_params(pred).ok_or_else(|| crate::ast::TypeErrorReport {
        errors: vec![crate::ast::TypeError {
            msg: format!("predicate `{}` lacks state parameters", pred.name),
            span: Span::default(),
        }],
    })?;
    env.insert(s.to_string(), pre_state);
    env.insert(sp.to_string(), post_state);
    for (name, atom) in args {
        env.insert(name.clone(), *atom);
    }
    Ok(env)
}
