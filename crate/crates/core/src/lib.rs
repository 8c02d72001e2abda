//! An engine that runs relational specifications as database transactions.
//!
//! A specification declares signatures (atom sets with relation-valued
//! fields), predicates over a pre/post state pair, and facts (integrity
//! constraints). Predicates execute as all-or-nothing transactions: the
//! body plus the primed facts are rewritten to a universal normal form of
//! special formulas, and a backtracking search realizes the normal form by
//! inserting and deleting tuples through relational expressions (a view
//! update problem). A brute-force oracle provides the reference semantics
//! for soundness and completeness checks on small universes.

pub mod ast;
pub mod corpus;
pub mod exec;
pub mod normalize;
pub mod oracle;
pub mod parser;
pub mod session;
pub mod span;
pub mod store;

pub use ast::{check_spec, CheckedSpec, Expr, ExprKind, Fact, Formula, Predicate, Signature, Spec};
pub use exec::{run_predicate, ExecFailure, RunConfig, RunOutcome, Strategy};
pub use normalize::{normalize_predicate, NormalizedPredicate, Polarity, SpecialFormula};
pub use oracle::{enumerate_poststates, oracle_check, satisfies, OracleConfig, Verdict};
pub use parser::{parse_command, parse_spec, render_spec, Command};
pub use session::Session;
pub use span::Span;
pub use store::{eval, AtomId, Env, Instance, Tuple, UpdateAction, UpdateLog};
