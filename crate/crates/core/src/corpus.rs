//! Randomized test corpus: small specifications, instances and
//! environments for the soundness/completeness suites, plus raw random
//! ASTs for parser round-trips. Everything is seed-deterministic.

use crate::ast::{
    check_spec, CheckedSpec, ColTypes, Expr, ExprKind, Fact, FactOrigin, FieldDecl, Formula, Mult,
    OccTag, Param, Predicate, Signature, Spec,
};
use crate::span::Span;
use crate::store::{Env, Instance, Tuple, UpdateAction};
use rand::prelude::*;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct CorpusCfg {
    pub max_depth: usize,
    pub allow_closure: bool,
    pub allow_exists: bool,
    pub with_fact: bool,
    /// Atoms per non-state signature, 1..=this.
    pub max_universe: usize,
    pub rel_density: f64,
}

impl Default for CorpusCfg {
    fn default() -> Self {
        CorpusCfg {
            max_depth: 3,
            allow_closure: true,
            allow_exists: true,
            with_fact: false,
            max_universe: 3,
            rel_density: 0.4,
        }
    }
}

/// The corpus schema: a state signature `S` with mutable fields
/// `f : S->A`, `g : S->A->B`, `w : S->A->A`, and immutable fields
/// `m : A->B`, `r : A->A` for converse/closure coverage.
fn skeleton() -> Spec {
    let field = |name: &str, raw: &[&str]| FieldDecl {
        name: name.into(),
        raw_cols: raw.iter().map(|s| s.to_string()).collect(),
        mult: Mult::Set,
        cols: Vec::new(),
        span: Span::default(),
    };
    let sig = |name: &str, fields: Vec<FieldDecl>| Signature {
        name: name.into(),
        fields,
        span: Span::default(),
    };
    Spec {
        sigs: vec![
            sig("S", vec![field("f", &["A"]), field("g", &["A", "B"]), field("w", &["A", "A"])]),
            sig("A", vec![field("m", &["B"]), field("r", &["A"])]),
            sig("B", vec![]),
        ],
        preds: Vec::new(),
        facts: Vec::new(),
        state_sig: None,
    }
}

struct Gen<'r, R: Rng> {
    rng: &'r mut R,
    cfg: CorpusCfg,
    params: Vec<(String, String)>,
    quants: Vec<(String, String)>,
    quant_count: usize,
}

impl<'r, R: Rng> Gen<'r, R> {
    fn pick_sig(&mut self) -> String {
        ["A", "B"][self.rng.gen_range(0..2)].to_string()
    }

    fn pick_ty(&mut self) -> ColTypes {
        let arity = [1, 1, 2, 2, 3][self.rng.gen_range(0..5)];
        (0..arity).map(|_| self.pick_sig()).collect()
    }

    fn state_field_expr(&mut self, rel: &str, cols: &[&str]) -> Expr {
        let side = if self.rng.gen_bool(0.5) { "s" } else { "s'" };
        let mut full: ColTypes = vec!["S".into()];
        full.extend(cols.iter().map(|c| c.to_string()));
        Expr::join(Expr::var(side, "S"), Expr::rel(rel, OccTag::Immutable, full))
    }

    fn leaf(&mut self, ty: &ColTypes) -> Expr {
        let mut options: Vec<Expr> = Vec::new();
        match ty.as_slice() {
            [x] => {
                options.push(Expr::rel(x.clone(), OccTag::Immutable, vec![x.clone()]));
                for (v, s) in self.params.iter().chain(self.quants.iter()) {
                    if s == x {
                        options.push(Expr::var(v.clone(), s.clone()));
                    }
                }
                if x == "A" {
                    options.push(self.state_field_expr("f", &["A"]));
                }
            }
            [x, y] => {
                if x == "A" && y == "B" {
                    options.push(self.state_field_expr("g", &["A", "B"]));
                    options.push(Expr::rel("m", OccTag::Immutable, vec!["A".into(), "B".into()]));
                }
                if x == "A" && y == "A" {
                    options.push(self.state_field_expr("w", &["A", "A"]));
                    options.push(Expr::rel("r", OccTag::Immutable, vec!["A".into(), "A".into()]));
                }
            }
            _ => {}
        }
        if options.is_empty() || self.rng.gen_bool(0.05) {
            // product of unary leaves reaches every column type
            if ty.len() >= 2 {
                let left = self.leaf(&ty[..1].to_vec());
                let right = self.leaf(&ty[1..].to_vec());
                return Expr::product(left, right);
            }
            return Expr::none(ty.clone());
        }
        let i = self.rng.gen_range(0..options.len());
        options.swap_remove(i)
    }

    fn expr(&mut self, ty: &ColTypes, depth: usize) -> Expr {
        if depth == 0 || self.rng.gen_bool(0.3) {
            return self.leaf(ty);
        }
        let mut choices: Vec<u8> = vec![0, 1, 2, 3, 4];
        if ty.len() == 2 {
            choices.push(5);
            if self.cfg.allow_closure && ty[0] == ty[1] {
                choices.push(6);
            }
        }
        if ty.len() >= 2 {
            choices.push(7);
        }
        match choices[self.rng.gen_range(0..choices.len())] {
            0 => Expr::union(self.expr(ty, depth - 1), self.expr(ty, depth - 1)),
            1 => Expr::intersect(self.expr(ty, depth - 1), self.expr(ty, depth - 1)),
            2 => Expr::diff(self.expr(ty, depth - 1), self.expr(ty, depth - 1)),
            3 => {
                // join through a fresh middle signature
                let mid = self.pick_sig();
                let cut = self.rng.gen_range(0..ty.len());
                let mut lt: ColTypes = ty[..cut].to_vec();
                lt.push(mid.clone());
                let mut rt: ColTypes = vec![mid];
                rt.extend_from_slice(&ty[cut..]);
                if lt.len() > 3 || rt.len() > 3 {
                    return self.leaf(ty);
                }
                Expr::join(self.expr(&lt, depth - 1), self.expr(&rt, depth - 1))
            }
            4 => {
                if ty.len() < 2 {
                    self.leaf(ty)
                } else {
                    let cut = self.rng.gen_range(1..ty.len());
                    Expr::product(
                        self.expr(&ty[..cut].to_vec(), depth - 1),
                        self.expr(&ty[cut..].to_vec(), depth - 1),
                    )
                }
            }
            5 => Expr::converse(self.expr(&vec![ty[1].clone(), ty[0].clone()], depth - 1)),
            6 => Expr::closure(self.expr(ty, depth - 1)),
            _ => {
                let left = self.leaf(&ty[..1].to_vec());
                let right = self.expr(&ty[1..].to_vec(), depth - 1);
                Expr::product(left, right)
            }
        }
    }

    fn formula(&mut self, depth: usize) -> Formula {
        if depth == 0 || self.rng.gen_bool(0.25) {
            let ty = self.pick_ty();
            let a = self.expr(&ty, 1);
            let b = self.expr(&ty, 1);
            return if self.rng.gen_bool(0.5) { Formula::In(a, b) } else { Formula::Eq(a, b) };
        }
        match self.rng.gen_range(0..6) {
            0 => Formula::not(self.formula(depth - 1)),
            1 => Formula::and(self.formula(depth - 1), self.formula(depth - 1)),
            2 => Formula::or(self.formula(depth - 1), self.formula(depth - 1)),
            3 | 4 if self.quant_count < 2 => {
                let sig = self.pick_sig();
                let var = format!("q{}", self.quant_count);
                self.quant_count += 1;
                let existential = self.cfg.allow_exists && self.rng.gen_bool(0.4);
                self.quants.push((var.clone(), sig.clone()));
                let body = self.formula(depth - 1);
                self.quants.pop();
                let bound = Expr::rel(sig.clone(), OccTag::Immutable, vec![sig]);
                if existential {
                    Formula::exists(var, bound, body)
                } else {
                    Formula::forall(var, bound, body)
                }
            }
            _ => {
                let ty = self.pick_ty();
                let a = self.expr(&ty, depth - 1);
                let b = self.expr(&ty, depth - 1);
                if self.rng.gen_bool(0.5) {
                    Formula::In(a, b)
                } else {
                    Formula::Eq(a, b)
                }
            }
        }
    }
}

/// A random one-predicate specification over the corpus schema.
pub fn gen_spec<R: Rng>(rng: &mut R, cfg: &CorpusCfg) -> CheckedSpec {
    let mut spec = skeleton();
    let n_params = rng.gen_range(0..=2);
    let mut params = vec![
        Param { name: "s".into(), sig: "S".into(), span: Span::default() },
        Param { name: "s'".into(), sig: "S".into(), span: Span::default() },
    ];
    let mut param_vars = Vec::new();
    for i in 0..n_params {
        let sig = ["A", "B"][rng.gen_range(0..2)].to_string();
        let name = format!("p{i}");
        param_vars.push((name.clone(), sig.clone()));
        params.push(Param { name, sig, span: Span::default() });
    }
    let body = {
        let mut g = Gen { rng, cfg: cfg.clone(), params: param_vars, quants: Vec::new(), quant_count: 0 };
        g.formula(cfg.max_depth)
    };
    spec.preds.push(Predicate { name: "P0".into(), params, body, span: Span::default() });

    if cfg.with_fact {
        let st = || Expr::var("st", "S");
        let sf = |name: &str, cols: ColTypes| Expr::rel(name, OccTag::Immutable, cols);
        let f_e = Expr::join(st(), sf("f", vec!["S".into(), "A".into()]));
        let g_e = Expr::join(st(), sf("g", vec!["S".into(), "A".into(), "B".into()]));
        let g_dom = Expr::join(g_e, sf("B", vec!["B".into()]));
        let body = match rng.gen_range(0..2) {
            0 => Formula::In(f_e, g_dom),
            _ => Formula::forall(
                "qa",
                sf("A", vec!["A".into()]),
                Formula::implies(
                    Formula::In(Expr::var("qa", "A"), f_e),
                    Formula::In(Expr::var("qa", "A"), g_dom),
                ),
            ),
        };
        let body = Formula::forall("st", sf("S", vec!["S".into()]), body);
        spec.facts.push(Fact {
            name: "F0".into(),
            body,
            origin: FactOrigin::User,
            span: Span::default(),
        });
    }

    check_spec(spec).expect("generated spec is well-formed")
}

/// A random instance over the spec's schema: one state atom, 1..=max
/// atoms for the other signatures, random relation contents.
pub fn gen_instance<R: Rng>(rng: &mut R, cs: &CheckedSpec, cfg: &CorpusCfg) -> Instance {
    let mut inst = Instance::empty(&cs.schema);
    let state = cs.state_sig().expect("corpus spec has a state sig").to_string();
    inst.create_atom(&state, "st0", Some(&state));
    for sig in &cs.spec.sigs {
        if sig.name == state {
            continue;
        }
        let n = rng.gen_range(1..=cfg.max_universe);
        for i in 0..n {
            inst.create_atom(&sig.name, &format!("{}{}", sig.name.to_lowercase(), i), Some(&state));
        }
    }
    for (name, info) in cs.schema.field_rels() {
        let space = crate::oracle::tuple_space(&inst, &info.cols);
        for t in space {
            if rng.gen_bool(cfg.rel_density) {
                inst.apply(name, &t, UpdateAction::Insert);
            }
        }
    }
    inst
}

/// Binds the predicate's parameters: state params to the state atom,
/// atom params to random atoms of their signatures.
pub fn gen_env<R: Rng>(rng: &mut R, cs: &CheckedSpec, p: &Predicate, inst: &Instance) -> Env {
    let state_atom = inst.state_atom.expect("instance has a state atom");
    let mut env = Env::new();
    for param in &p.params {
        if Some(param.sig.as_str()) == cs.state_sig() {
            env.insert(param.name.clone(), state_atom);
        } else {
            let atoms = inst.atoms_of(&param.sig);
            let a = atoms[rng.gen_range(0..atoms.len())];
            env.insert(param.name.clone(), a);
        }
    }
    env
}

/// One corpus case: spec, pre-instance and environment for `P0`.
pub fn gen_case<R: Rng>(rng: &mut R, cfg: &CorpusCfg) -> (CheckedSpec, Instance, Env) {
    let cs = gen_spec(rng, cfg);
    let inst = gen_instance(rng, &cs, cfg);
    let env = gen_env(rng, &cs, &cs.spec.preds[0], &inst);
    (cs, inst, env)
}

// ---------------------------------------------------------------------------
// Raw random ASTs (parser round-trips)
// ---------------------------------------------------------------------------

struct RawGen<'r, R: Rng> {
    rng: &'r mut R,
    scope: Vec<String>,
    next_var: usize,
}

impl<'r, R: Rng> RawGen<'r, R> {
    fn name(&mut self, prefix: &str, n: usize) -> String {
        format!("{prefix}{}", self.rng.gen_range(0..n))
    }

    fn expr(&mut self, depth: usize) -> Expr {
        let untyped = |kind| Expr { kind, ty: vec![], span: Span::default() };
        if depth == 0 {
            return match self.rng.gen_range(0..4) {
                0 if !self.scope.is_empty() => {
                    let v = self.scope[self.rng.gen_range(0..self.scope.len())].clone();
                    untyped(ExprKind::Var(v))
                }
                1 => untyped(ExprKind::None),
                _ => untyped(ExprKind::Rel(self.name("r", 6), OccTag::Immutable)),
            };
        }
        let a = self.expr(depth - 1);
        let b = self.expr(depth - 1);
        match self.rng.gen_range(0..8) {
            0 => untyped(ExprKind::Union(Box::new(a), Box::new(b))),
            1 => untyped(ExprKind::Intersect(Box::new(a), Box::new(b))),
            2 => untyped(ExprKind::Diff(Box::new(a), Box::new(b))),
            3 => untyped(ExprKind::Join(Box::new(a), Box::new(b))),
            4 => untyped(ExprKind::Product(Box::new(a), Box::new(b))),
            5 => untyped(ExprKind::Converse(Box::new(a))),
            6 => untyped(ExprKind::Closure(Box::new(a))),
            _ => a,
        }
    }

    fn formula(&mut self, depth: usize) -> Formula {
        if depth == 0 {
            let a = self.expr(1);
            let b = self.expr(1);
            return if self.rng.gen_bool(0.5) { Formula::In(a, b) } else { Formula::Eq(a, b) };
        }
        match self.rng.gen_range(0..6) {
            0 => Formula::not(self.formula(depth - 1)),
            1 => Formula::and(self.formula(depth - 1), self.formula(depth - 1)),
            2 => Formula::or(self.formula(depth - 1), self.formula(depth - 1)),
            3 | 4 => {
                let var = format!("v{}", self.next_var);
                self.next_var += 1;
                let bound = self.expr(1);
                self.scope.push(var.clone());
                let body = self.formula(depth - 1);
                self.scope.pop();
                if self.rng.gen_bool(0.5) {
                    Formula::forall(var, bound, body)
                } else {
                    Formula::exists(var, bound, body)
                }
            }
            _ => {
                let a = self.expr(depth - 1);
                let b = self.expr(depth - 1);
                Formula::In(a, b)
            }
        }
    }
}

/// A random untyped specification AST for parse/render round-trips. The
/// AST need not typecheck; it only has to be printable and re-parsable.
pub fn gen_raw_spec<R: Rng>(rng: &mut R, max_depth: usize) -> Spec {
    let mut spec = Spec::default();
    let n_sigs = rng.gen_range(1..=3);
    for i in 0..n_sigs {
        let mut fields = Vec::new();
        for j in 0..rng.gen_range(0..3usize) {
            let n_cols = rng.gen_range(1..=3usize);
            fields.push(FieldDecl {
                name: format!("fld{i}_{j}"),
                raw_cols: (0..n_cols).map(|_| format!("Sig{}", rng.gen_range(0..n_sigs))).collect(),
                mult: if rng.gen_bool(0.3) { Mult::Lone } else { Mult::Set },
                cols: Vec::new(),
                span: Span::default(),
            });
        }
        spec.sigs.push(Signature { name: format!("Sig{i}"), fields, span: Span::default() });
    }
    let n_preds = rng.gen_range(0..=2);
    for i in 0..n_preds {
        let mut g = RawGen { rng, scope: Vec::new(), next_var: 0 };
        let params = vec![
            Param { name: "s".into(), sig: "Sig0".into(), span: Span::default() },
            Param { name: "s'".into(), sig: "Sig0".into(), span: Span::default() },
        ];
        g.scope.push("s".into());
        g.scope.push("s'".into());
        let body = g.formula(max_depth);
        spec.preds.push(Predicate { name: format!("Pred{i}"), params, body, span: Span::default() });
    }
    if rng.gen_bool(0.5) {
        let mut g = RawGen { rng, scope: Vec::new(), next_var: 0 };
        let body = g.formula(max_depth);
        spec.facts.push(Fact {
            name: "Fact0".into(),
            body,
            origin: FactOrigin::User,
            span: Span::default(),
        });
    }
    spec
}

/// A random quantifier-free typed formula over the corpus schema plus an
/// exhaustive-instance harness would use; exposed for the equivalence
/// suites.
pub fn gen_qf_formula<R: Rng>(rng: &mut R, cfg: &CorpusCfg, vars: &[(String, String)]) -> Formula {
    let mut g = Gen {
        rng,
        cfg: CorpusCfg { allow_exists: false, ..cfg.clone() },
        params: vars.to_vec(),
        quants: Vec::new(),
        quant_count: 2, // suppress quantifier generation
    };
    g.formula(cfg.max_depth)
}

/// Seeded RNG for reproducible corpora.
pub fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
