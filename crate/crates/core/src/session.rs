//! A live database session: a checked spec, its normalized predicates,
//! the committed instance, and label bindings from atom creation.
//!
//! Commands run one at a time. Predicate invocation is an all-or-nothing
//! transaction on a working copy; only a successful run replaces the
//! committed instance and rewrites the snapshot (atomically), so a crash
//! mid-transaction leaves the last commit on disk. One session per
//! database path, enforced by a lock file.

use crate::ast::{is_primed, CheckedSpec, Predicate, RelKind, TypeErrorReport};
use crate::exec::{run_predicate, ExecFailure, RunConfig, RunStats};
use crate::normalize::{normalize_predicate, NormalizedPredicate};
use crate::oracle;
use crate::parser::{Command, ParseErrorReport};
use crate::store::{
    append_journal, bind_params, read_snapshot, write_snapshot, AtomId, Instance, SnapshotMode,
    StoreError, UpdateLog,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("{0}")]
    Parse(#[from] ParseErrorReport),
    #[error("{0}")]
    Type(#[from] TypeErrorReport),
    #[error("{0}")]
    Store(#[from] StoreError),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("unknown signature `{0}`")]
    UnknownSignature(String),
    #[error("unknown name `{0}`")]
    UnknownLabel(String),
    #[error("`{pred}` expects {expected} arguments, got {got}")]
    ArityMismatch { pred: String, expected: usize, got: usize },
    #[error("argument `{arg}` is a {got}, `{pred}` expects a {expected}")]
    ArgType { pred: String, arg: String, expected: String, got: String },
    #[error("transaction failed: {0}")]
    Txn(ExecFailure),
    #[error("commit would violate fact `{0}`")]
    FactViolation(String),
    #[error("database `{0}` is locked by another session (remove the .lock file if stale)")]
    Locked(PathBuf),
    #[error("specification has no state signature; nothing to execute")]
    NoStateSig,
    #[error("atom labels may not contain newlines")]
    BadLabel,
}

#[derive(Debug)]
struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Default)]
pub struct TxnReport {
    pub pred: String,
    pub stats: RunStats,
    pub trace: Vec<String>,
    pub log: UpdateLog,
}

/// What a command produced: printable lines, an optional transaction
/// report, and whether the session should end.
#[derive(Debug, Clone, Default)]
pub struct CmdOutput {
    pub lines: Vec<String>,
    pub txn: Option<TxnReport>,
    pub quit: bool,
}

pub struct Session {
    cs: CheckedSpec,
    norm: BTreeMap<String, NormalizedPredicate>,
    committed: Instance,
    db_path: Option<PathBuf>,
    journal: Option<PathBuf>,
    bindings: BTreeMap<String, AtomId>,
    pub run_config: RunConfig,
    _lock: Option<LockGuard>,
}

impl Session {
    /// Opens a session: loads the snapshot when it exists, otherwise
    /// initializes a fresh database with the single live state atom.
    pub fn open(
        cs: CheckedSpec,
        db_path: Option<&Path>,
        run_config: RunConfig,
        journal: Option<PathBuf>,
    ) -> Result<Session, SessionError> {
        let lock = match db_path {
            Some(p) => {
                let lock_path = PathBuf::from(format!("{}.lock", p.display()));
                match std::fs::OpenOptions::new()
                    .write(true)
                    .create_new(true)
                    .open(&lock_path)
                {
                    Ok(_) => Some(LockGuard { path: lock_path }),
                    Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                        return Err(SessionError::Locked(p.to_path_buf()));
                    }
                    Err(e) => return Err(SessionError::Store(StoreError::Io(e))),
                }
            }
            None => None,
        };

        let committed = match db_path {
            Some(p) if p.exists() => {
                let inst = read_snapshot(p, &cs, SnapshotMode::Database)?;
                for fact in &cs.spec.facts {
                    if !oracle::fact_holds(fact, &inst) {
                        return Err(SessionError::FactViolation(fact.name.clone()));
                    }
                }
                inst
            }
            _ => {
                let mut inst = Instance::empty(&cs.schema);
                if let Some(state) = cs.state_sig() {
                    let label = format!("{}0", state.to_lowercase());
                    inst.create_atom(state, &label, Some(state));
                }
                if let Some(p) = db_path {
                    write_snapshot(&inst, p)?;
                }
                inst
            }
        };

        let norm = cs
            .spec
            .preds
            .iter()
            .map(|p| (p.name.clone(), normalize_predicate(&cs, p)))
            .collect();

        Ok(Session {
            cs,
            norm,
            committed,
            db_path: db_path.map(|p| p.to_path_buf()),
            journal,
            bindings: BTreeMap::new(),
            run_config,
            _lock: lock,
        })
    }

    pub fn checked_spec(&self) -> &CheckedSpec {
        &self.cs
    }

    pub fn committed(&self) -> &Instance {
        &self.committed
    }

    pub fn normalized(&self, pred: &str) -> Option<&NormalizedPredicate> {
        self.norm.get(pred)
    }

    fn commit(&mut self, inst: Instance) -> Result<(), SessionError> {
        if let Some(p) = &self.db_path {
            write_snapshot(&inst, p)?;
        }
        self.committed = inst;
        Ok(())
    }

    /// Resolves a script identifier to an atom: session bindings first,
    /// then a unique atom label.
    fn resolve(&self, name: &str) -> Result<AtomId, SessionError> {
        if let Some(a) = self.bindings.get(name) {
            return Ok(*a);
        }
        self.committed.atom_by_label(name).ok_or_else(|| SessionError::UnknownLabel(name.into()))
    }

    fn invoke(&mut self, pred_name: &str, args: &[String]) -> Result<CmdOutput, SessionError> {
        let pred: &Predicate = self
            .cs
            .predicate(pred_name)
            .ok_or_else(|| SessionError::UnknownPredicate(pred_name.to_string()))?;
        let state = self.cs.state_sig().ok_or(SessionError::NoStateSig)?.to_string();
        let state_atom = self.committed.require_single_state(&state)?;

        // the call omits the primed state parameter
        let visible: Vec<_> = pred.params.iter().filter(|p| !is_primed(&p.name)).collect();
        if visible.len() != args.len() {
            return Err(SessionError::ArityMismatch {
                pred: pred_name.to_string(),
                expected: visible.len(),
                got: args.len(),
            });
        }
        let mut bound = Vec::new();
        for (param, arg) in visible.iter().zip(args) {
            let atom = self.resolve(arg)?;
            let got = self.committed.atom(atom).sig.clone();
            if got != param.sig {
                return Err(SessionError::ArgType {
                    pred: pred_name.to_string(),
                    arg: arg.clone(),
                    expected: param.sig.clone(),
                    got,
                });
            }
            bound.push((param.name.clone(), atom));
        }
        let env = bind_params(&self.cs, pred, &bound, state_atom, state_atom)?;
        let np = self.norm.get(pred_name).expect("normalized at open");

        match run_predicate(&self.cs, np, &env, &self.committed, &self.run_config) {
            Ok(outcome) => {
                for fact in &self.cs.spec.facts {
                    if !oracle::fact_holds(fact, &outcome.post) {
                        return Err(SessionError::FactViolation(fact.name.clone()));
                    }
                }
                if let Some(j) = &self.journal {
                    let arg_atoms: Vec<AtomId> = bound.iter().map(|(_, a)| *a).collect();
                    append_journal(j, pred_name, &arg_atoms, &outcome.log)?;
                }
                self.commit(outcome.post)?;
                let report = TxnReport {
                    pred: pred_name.to_string(),
                    stats: outcome.stats,
                    trace: outcome.trace,
                    log: outcome.log,
                };
                Ok(CmdOutput {
                    lines: vec![format!("{pred_name}: ok ({} updates)", report.log.len())],
                    txn: Some(report),
                    quit: false,
                })
            }
            Err((failure, _stats)) => Err(SessionError::Txn(failure)),
        }
    }

    pub fn execute(&mut self, cmd: &Command) -> Result<CmdOutput, SessionError> {
        match cmd {
            Command::Quit => Ok(CmdOutput { quit: true, ..Default::default() }),
            Command::Show(rel) => {
                let mut lines = Vec::new();
                match self.cs.schema.rel(rel) {
                    Some(info) if info.kind == RelKind::SigUniverse => {
                        for a in self.committed.atoms_of(rel) {
                            lines.push(format!("({})", self.committed.atom(*a).label));
                        }
                    }
                    Some(_) => {
                        for t in self.committed.tuples(rel) {
                            lines.push(self.committed.show_tuple(&t));
                        }
                    }
                    None => return Err(SessionError::UnknownRelation(rel.clone())),
                }
                Ok(CmdOutput { lines, ..Default::default() })
            }
            Command::Snapshot(path) => {
                write_snapshot(&self.committed, Path::new(path))?;
                Ok(CmdOutput { lines: vec![format!("snapshot written to {path}")], ..Default::default() })
            }
            Command::CreateAtom { bind, sig, label } => {
                if label.contains('\n') {
                    return Err(SessionError::BadLabel);
                }
                if !matches!(self.cs.schema.rel(sig).map(|i| &i.kind), Some(RelKind::SigUniverse))
                {
                    return Err(SessionError::UnknownSignature(sig.clone()));
                }
                let mut inst = self.committed.clone();
                let atom = if self.cs.state_sig() == Some(sig.as_str()) {
                    // the single live state atom exists from initialization;
                    // creating "another" names and relabels it
                    let a = inst.require_single_state(sig)?;
                    inst.set_label(a, label);
                    a
                } else {
                    inst.create_atom(sig, label, self.cs.state_sig())
                };
                self.commit(inst)?;
                self.bindings.insert(bind.clone(), atom);
                Ok(CmdOutput {
                    lines: vec![format!("{bind} = {sig}({label})")],
                    ..Default::default()
                })
            }
            Command::Invoke { pred, args } => self.invoke(pred, args),
        }
    }

    /// Runs a script (one command per line); stops at the first error,
    /// reporting its line number.
    pub fn run_script(&mut self, text: &str) -> Result<Vec<CmdOutput>, (usize, SessionError)> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let cmd = match crate::parser::parse_command(line) {
                Ok(Some(c)) => c,
                Ok(None) => continue,
                Err(e) => return Err((i + 1, SessionError::Parse(e))),
            };
            let res = self.execute(&cmd).map_err(|e| (i + 1, e))?;
            let quit = res.quit;
            out.push(res);
            if quit {
                break;
            }
        }
        Ok(out)
    }
}
