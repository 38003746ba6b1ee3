//! Conjecture input: S-expression parsing, translation of arithmetic to
//! polynomials, and negation/normalization into refutation form.
//!
//! A conjecture `hyp_1 ∧ … ∧ hyp_n ⇒ concl` is refuted by showing that
//! `hyp_1 ∧ … ∧ hyp_n ∧ ¬concl` has no real solution. Every atom of that
//! conjunction is rewritten as `poly REL 0` with `REL ∈ {=, ≥, >, ≠}`.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::poly::{format_rational, parse_rational, Polynomial, Rational, VarId, Variables};
use crate::sexpr::{self, Pos, SExp, SExpKind};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("arity error at {pos}: {msg}")]
    Arity { pos: Pos, msg: String },
    #[error("unknown operator `{op}` at {pos}")]
    UnknownOperator { pos: Pos, op: String },
    #[error("boolean form `{op}` at {pos} used where an arithmetic term is expected")]
    BooleanInArithmetic { pos: Pos, op: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NormalizeError {
    #[error("expected an arithmetic term, found a boolean form")]
    BooleanInArithmetic,
    #[error("unsupported boolean structure: {0}")]
    UnsupportedBoolean(String),
    #[error("expected a relation, found an arithmetic term")]
    NotARelation,
}

/// Relation symbols accepted in input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelOp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
    Ne,
}

impl RelOp {
    pub fn symbol(self) -> &'static str {
        match self {
            RelOp::Eq => "=",
            RelOp::Lt => "<",
            RelOp::Le => "<=",
            RelOp::Gt => ">",
            RelOp::Ge => ">=",
            RelOp::Ne => "/=",
        }
    }

    fn from_symbol(s: &str) -> Option<RelOp> {
        Some(match s {
            "=" => RelOp::Eq,
            "<" => RelOp::Lt,
            "<=" => RelOp::Le,
            ">" => RelOp::Gt,
            ">=" => RelOp::Ge,
            "/=" => RelOp::Ne,
            _ => return None,
        })
    }

    pub fn holds(self, lhs: &Rational, rhs: &Rational) -> bool {
        match self {
            RelOp::Eq => lhs == rhs,
            RelOp::Lt => lhs < rhs,
            RelOp::Le => lhs <= rhs,
            RelOp::Gt => lhs > rhs,
            RelOp::Ge => lhs >= rhs,
            RelOp::Ne => lhs != rhs,
        }
    }
}

/// Conjecture syntax tree. Variable names are stored upper-cased.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Var(String),
    Lit(Rational),
    Add(Vec<Expr>),
    Sub(Vec<Expr>),
    Mul(Vec<Expr>),
    Expt(Box<Expr>, u32),
    Rel(RelOp, Box<Expr>, Box<Expr>),
    And(Vec<Expr>),
    Implies(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn is_boolean(&self) -> bool {
        matches!(self, Expr::Rel(..) | Expr::And(_) | Expr::Implies(..))
    }

    pub fn lit(n: i64) -> Expr {
        Expr::Lit(Rational::from_integer(n.into()))
    }

    /// Renders the tree as an S-expression, exactly as it would be written
    /// in an input file.
    pub fn to_sexp(&self) -> SExp {
        match self {
            Expr::Var(v) => SExp::atom(v.clone()),
            Expr::Lit(r) => SExp::atom(format_rational(r)),
            Expr::Add(xs) => SExp::call("+", xs.iter().map(Expr::to_sexp).collect()),
            Expr::Sub(xs) => SExp::call("-", xs.iter().map(Expr::to_sexp).collect()),
            Expr::Mul(xs) => SExp::call("*", xs.iter().map(Expr::to_sexp).collect()),
            Expr::Expt(b, e) => SExp::call("EXPT", vec![b.to_sexp(), SExp::atom(e.to_string())]),
            Expr::Rel(op, l, r) => SExp::call(op.symbol(), vec![l.to_sexp(), r.to_sexp()]),
            Expr::And(xs) => SExp::call("AND", xs.iter().map(Expr::to_sexp).collect()),
            Expr::Implies(h, c) => SExp::call("IMPLIES", vec![h.to_sexp(), c.to_sexp()]),
        }
    }

    /// Variables in order of first occurrence (left to right).
    pub fn variables(&self) -> Variables {
        let mut vars = Variables::new();
        self.collect_vars(&mut vars);
        vars
    }

    fn collect_vars(&self, vars: &mut Variables) {
        match self {
            Expr::Var(v) => {
                vars.intern(v);
            }
            Expr::Lit(_) => {}
            Expr::Add(xs) | Expr::Sub(xs) | Expr::Mul(xs) | Expr::And(xs) => {
                xs.iter().for_each(|x| x.collect_vars(vars))
            }
            Expr::Expt(b, _) => b.collect_vars(vars),
            Expr::Rel(_, l, r) | Expr::Implies(l, r) => {
                l.collect_vars(vars);
                r.collect_vars(vars);
            }
        }
    }

    /// Exact value of an arithmetic term at `point` (indexed through `vars`).
    pub fn eval_arith(
        &self,
        vars: &Variables,
        point: &BTreeMap<VarId, Rational>,
    ) -> Result<Rational, NormalizeError> {
        Ok(match self {
            Expr::Var(v) => vars
                .get(v)
                .and_then(|id| point.get(&id))
                .cloned()
                .unwrap_or_else(Rational::zero),
            Expr::Lit(r) => r.clone(),
            Expr::Add(xs) => {
                let mut acc = Rational::zero();
                for x in xs {
                    acc += x.eval_arith(vars, point)?;
                }
                acc
            }
            Expr::Mul(xs) => {
                let mut acc = Rational::one();
                for x in xs {
                    acc *= x.eval_arith(vars, point)?;
                }
                acc
            }
            Expr::Sub(xs) => match xs.split_first() {
                None => Rational::zero(),
                Some((first, [])) => -first.eval_arith(vars, point)?,
                Some((first, rest)) => {
                    let mut acc = first.eval_arith(vars, point)?;
                    for x in rest {
                        acc -= x.eval_arith(vars, point)?;
                    }
                    acc
                }
            },
            Expr::Expt(b, e) => num_traits::pow(b.eval_arith(vars, point)?, *e as usize),
            _ => return Err(NormalizeError::BooleanInArithmetic),
        })
    }

    /// Truth value of a boolean form at `point`.
    pub fn holds(
        &self,
        vars: &Variables,
        point: &BTreeMap<VarId, Rational>,
    ) -> Result<bool, NormalizeError> {
        match self {
            Expr::Rel(op, l, r) => Ok(op.holds(&l.eval_arith(vars, point)?, &r.eval_arith(vars, point)?)),
            Expr::And(xs) => {
                for x in xs {
                    if !x.holds(vars, point)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Expr::Implies(h, c) => Ok(!h.holds(vars, point)? || c.holds(vars, point)?),
            _ => Err(NormalizeError::NotARelation),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_sexp().flat())
    }
}

/// Parses one conjecture (or a bare arithmetic term). Operator symbols are
/// case-insensitive; `;` comments are allowed.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let forms = sexpr::read_all(text).map_err(|e| ParseError::Syntax {
        pos: e.pos,
        msg: e.msg,
    })?;
    match forms.as_slice() {
        [form] => from_sexp(form),
        [] => Err(ParseError::Syntax {
            pos: Pos { line: 1, col: 1 },
            msg: "empty input".into(),
        }),
        [_, second, ..] => Err(ParseError::Syntax {
            pos: second.pos,
            msg: "expected a single conjecture form".into(),
        }),
    }
}

/// Converts an already-read S-expression into an [`Expr`].
pub fn from_sexp(form: &SExp) -> Result<Expr, ParseError> {
    convert(form, None)
}

/// `ctx` is `Some(op)` when the form sits under the arithmetic operator `op`.
fn convert(form: &SExp, ctx: Option<&str>) -> Result<Expr, ParseError> {
    let pos = form.pos;
    let items = match &form.kind {
        SExpKind::Atom(a) => return atom(a, pos),
        SExpKind::Str(_) | SExpKind::Prefixed(..) => {
            return Err(ParseError::Syntax {
                pos,
                msg: format!("unexpected `{}`", form.flat()),
            })
        }
        SExpKind::List(items) => items,
    };
    let Some((head, args)) = items.split_first() else {
        return Err(ParseError::Syntax {
            pos,
            msg: "empty list".into(),
        });
    };
    let op = match head.as_atom() {
        Some(a) => a.to_ascii_uppercase(),
        None => {
            return Err(ParseError::Syntax {
                pos: head.pos,
                msg: "operator position must hold a symbol".into(),
            })
        }
    };
    let arity = |want: &str, ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(ParseError::Arity {
                pos,
                msg: format!("`{op}` expects {want}, got {}", args.len()),
            })
        }
    };
    let boolean = matches!(op.as_str(), "IMPLIES" | "AND") || RelOp::from_symbol(&op).is_some();
    if boolean && ctx.is_some() {
        return Err(ParseError::BooleanInArithmetic { pos, op });
    }
    let arith_args = |args: &[SExp]| -> Result<Vec<Expr>, ParseError> {
        args.iter().map(|a| convert(a, Some(&op))).collect()
    };
    Ok(match op.as_str() {
        "IMPLIES" => {
            arity("2 arguments", args.len() == 2)?;
            Expr::Implies(
                Box::new(boolean_arg(&args[0])?),
                Box::new(boolean_arg(&args[1])?),
            )
        }
        "AND" => {
            arity("at least 1 argument", !args.is_empty())?;
            Expr::And(args.iter().map(boolean_arg).collect::<Result<_, _>>()?)
        }
        "+" => Expr::Add(arith_args(args)?),
        "*" => Expr::Mul(arith_args(args)?),
        "-" => {
            arity("at least 1 argument", !args.is_empty())?;
            Expr::Sub(arith_args(args)?)
        }
        "EXPT" => {
            arity("2 arguments", args.len() == 2)?;
            let base = convert(&args[0], Some(&op))?;
            let exp = args[1]
                .as_atom()
                .filter(|a| !a.is_empty() && a.bytes().all(|b| b.is_ascii_digit()))
                .and_then(|a| a.parse::<u32>().ok())
                .ok_or_else(|| ParseError::Arity {
                    pos: args[1].pos,
                    msg: "`EXPT` exponent must be a literal natural number".into(),
                })?;
            Expr::Expt(Box::new(base), exp)
        }
        _ => match RelOp::from_symbol(&op) {
            Some(rel) => {
                arity("2 arguments", args.len() == 2)?;
                Expr::Rel(
                    rel,
                    Box::new(convert(&args[0], Some(&op))?),
                    Box::new(convert(&args[1], Some(&op))?),
                )
            }
            None => return Err(ParseError::UnknownOperator { pos: head.pos, op }),
        },
    })
}

fn boolean_arg(form: &SExp) -> Result<Expr, ParseError> {
    let e = convert(form, None)?;
    if e.is_boolean() {
        Ok(e)
    } else {
        Err(ParseError::Syntax {
            pos: form.pos,
            msg: format!("expected a relation, found `{}`", form.flat()),
        })
    }
}

fn atom(a: &str, pos: Pos) -> Result<Expr, ParseError> {
    let first = a.chars().next().unwrap_or(' ');
    if first.is_ascii_digit() || ((first == '-' || first == '+') && a.len() > 1) {
        return parse_rational(a).map(Expr::Lit).ok_or_else(|| ParseError::Syntax {
            pos,
            msg: format!("bad numeric literal `{a}` (integers and ratios only)"),
        });
    }
    if first.is_ascii_alphabetic() && a.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Ok(Expr::Var(a.to_ascii_uppercase()));
    }
    Err(ParseError::Syntax {
        pos,
        msg: format!("unsupported symbol `{a}`"),
    })
}

/// Expands an arithmetic term into a canonical polynomial over `vars`.
/// Variables missing from `vars` are appended.
pub fn to_polynomial(e: &Expr, vars: &mut Variables) -> Result<Polynomial, NormalizeError> {
    Ok(match e {
        Expr::Var(v) => Polynomial::var(vars.intern(v)),
        Expr::Lit(r) => Polynomial::constant(r.clone()),
        Expr::Add(xs) => {
            let mut acc = Polynomial::zero();
            for x in xs {
                acc = &acc + &to_polynomial(x, vars)?;
            }
            acc
        }
        Expr::Mul(xs) => {
            let mut acc = Polynomial::one();
            for x in xs {
                acc = &acc * &to_polynomial(x, vars)?;
            }
            acc
        }
        Expr::Sub(xs) => match xs.split_first() {
            None => Polynomial::zero(),
            Some((first, [])) => -to_polynomial(first, vars)?,
            Some((first, rest)) => {
                let mut acc = to_polynomial(first, vars)?;
                for x in rest {
                    acc = &acc - &to_polynomial(x, vars)?;
                }
                acc
            }
        },
        Expr::Expt(b, k) => to_polynomial(b, vars)?.pow(*k),
        _ => return Err(NormalizeError::BooleanInArithmetic),
    })
}

/// Relation of a normalized atom `poly REL 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelKind {
    Eq,
    Geq,
    Gt,
    Neq,
}

/// One normalized atom `poly kind 0`. `expr` is the same quantity kept as a
/// term tree, which is what proof scripts print.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub poly: Polynomial,
    pub kind: RelKind,
    pub expr: Expr,
}

impl Constraint {
    pub fn holds_at(&self, point: &BTreeMap<VarId, Rational>) -> bool {
        let v = self
            .poly
            .eval(point)
            .expect("constraint variables are always assigned");
        match self.kind {
            RelKind::Eq => v.is_zero(),
            RelKind::Geq => !v.is_negative(),
            RelKind::Gt => v.is_positive(),
            RelKind::Neq => !v.is_zero(),
        }
    }
}

/// A monoid-eligible constraint: strictly positive (`Gt` nonneg) or nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MonoidSource {
    /// Index into `nonnegs`; the constraint has kind `Gt`.
    Strict(usize),
    /// Index into `nonzeros`.
    Nonzero(usize),
}

/// The negated, normalized conjecture: `⋀ eq = 0 ∧ ⋀ q ≥/> 0 ∧ ⋀ r ≠ 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedSystem {
    pub equations: Vec<Constraint>,
    pub nonnegs: Vec<Constraint>,
    pub nonzeros: Vec<Constraint>,
    pub vars: Variables,
    pub source: Expr,
}

impl NormalizedSystem {
    /// Strict nonnegs followed by nonzeros, in order.
    pub fn monoid_eligible(&self) -> Vec<MonoidSource> {
        let strict = self
            .nonnegs
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == RelKind::Gt)
            .map(|(i, _)| MonoidSource::Strict(i));
        let nonzero = (0..self.nonzeros.len()).map(MonoidSource::Nonzero);
        strict.chain(nonzero).collect()
    }

    pub fn monoid_constraint(&self, src: MonoidSource) -> Option<&Constraint> {
        match src {
            MonoidSource::Strict(i) => self.nonnegs.get(i).filter(|c| c.kind == RelKind::Gt),
            MonoidSource::Nonzero(i) => self.nonzeros.get(i),
        }
    }

    /// Constraints in script order: equations, nonnegs, nonzeros.
    pub fn all_constraints(&self) -> impl Iterator<Item = &Constraint> {
        self.equations
            .iter()
            .chain(&self.nonnegs)
            .chain(&self.nonzeros)
    }

    pub fn max_degree(&self) -> u32 {
        self.all_constraints()
            .map(|c| c.poly.degree())
            .max()
            .unwrap_or(0)
    }

    pub fn holds_at(&self, point: &BTreeMap<VarId, Rational>) -> bool {
        self.all_constraints().all(|c| c.holds_at(point))
    }
}

impl fmt::Display for NormalizedSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variables: {}", self.vars.names().join(" "))?;
        for c in self.all_constraints() {
            let rel = match c.kind {
                RelKind::Eq => "=",
                RelKind::Geq => ">=",
                RelKind::Gt => ">",
                RelKind::Neq => "/=",
            };
            writeln!(f, "  {} {rel} 0", c.poly.display(&self.vars))?;
        }
        Ok(())
    }
}

fn is_zero_lit(e: &Expr) -> bool {
    matches!(e, Expr::Lit(r) if r.is_zero())
}

/// `a - b` as a term, dropping a literal zero subtrahend.
fn difference(a: &Expr, b: &Expr) -> Expr {
    if is_zero_lit(b) {
        a.clone()
    } else {
        Expr::Sub(vec![a.clone(), b.clone()])
    }
}

fn negated(e: Expr) -> Expr {
    Expr::Sub(vec![Expr::lit(0), e])
}

/// Normalizes one atom to `expr kind 0`.
fn normalize_atom(atom: &Expr) -> Result<(Expr, RelKind), NormalizeError> {
    let Expr::Rel(op, l, r) = atom else {
        return Err(match atom {
            Expr::And(_) | Expr::Implies(..) => {
                NormalizeError::UnsupportedBoolean(format!("nested boolean form `{atom}`"))
            }
            _ => NormalizeError::NotARelation,
        });
    };
    Ok(match op {
        RelOp::Lt => (difference(r, l), RelKind::Gt),
        RelOp::Le => (difference(r, l), RelKind::Geq),
        RelOp::Gt => (difference(l, r), RelKind::Gt),
        RelOp::Ge => (difference(l, r), RelKind::Geq),
        RelOp::Eq => (difference(l, r), RelKind::Eq),
        RelOp::Ne => (difference(l, r), RelKind::Neq),
    })
}

fn negate_atom(expr: Expr, kind: RelKind) -> (Expr, RelKind) {
    match kind {
        RelKind::Geq => (negated(expr), RelKind::Gt),
        RelKind::Gt => (negated(expr), RelKind::Geq),
        RelKind::Eq => (expr, RelKind::Neq),
        RelKind::Neq => (expr, RelKind::Eq),
    }
}

fn flatten_hyps<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) -> Result<(), NormalizeError> {
    match e {
        Expr::And(xs) => {
            for x in xs {
                flatten_hyps(x, out)?;
            }
            Ok(())
        }
        Expr::Rel(..) => {
            out.push(e);
            Ok(())
        }
        Expr::Implies(..) => Err(NormalizeError::UnsupportedBoolean(
            "implication inside a hypothesis".into(),
        )),
        _ => Err(NormalizeError::NotARelation),
    }
}

/// Negates the conjecture and normalizes every atom.
pub fn negate_normalize(e: &Expr) -> Result<NormalizedSystem, NormalizeError> {
    let (hyps, concl) = match e {
        Expr::Implies(h, c) => {
            let mut hyps = Vec::new();
            flatten_hyps(h, &mut hyps)?;
            (hyps, c.as_ref())
        }
        Expr::Rel(..) => (Vec::new(), e),
        Expr::And(_) => {
            return Err(NormalizeError::UnsupportedBoolean(
                "a conjunction as conclusion negates to a disjunction".into(),
            ))
        }
        _ => return Err(NormalizeError::NotARelation),
    };
    match concl {
        Expr::Rel(..) => {}
        Expr::And(_) => {
            return Err(NormalizeError::UnsupportedBoolean(
                "a conjunction as conclusion negates to a disjunction".into(),
            ))
        }
        Expr::Implies(..) => {
            return Err(NormalizeError::UnsupportedBoolean("nested implication".into()))
        }
        _ => return Err(NormalizeError::NotARelation),
    }

    // sorted by name, which gives the (A B C X) formals of the reference script
    let mut names = e.variables().names().to_vec();
    names.sort();
    let mut vars = Variables::from_names(names);
    let mut atoms = Vec::with_capacity(hyps.len() + 1);
    for h in hyps {
        atoms.push(normalize_atom(h)?);
    }
    let (ce, ck) = normalize_atom(concl)?;
    atoms.push(negate_atom(ce, ck));

    let mut sys = NormalizedSystem {
        equations: Vec::new(),
        nonnegs: Vec::new(),
        nonzeros: Vec::new(),
        vars: Variables::new(),
        source: e.clone(),
    };
    for (expr, kind) in atoms {
        let poly = to_polynomial(&expr, &mut vars)?;
        let c = Constraint { poly, kind, expr };
        match kind {
            RelKind::Eq => sys.equations.push(c),
            RelKind::Geq | RelKind::Gt => sys.nonnegs.push(c),
            RelKind::Neq => sys.nonzeros.push(c),
        }
    }
    sys.vars = vars;
    Ok(sys)
}

/// Parses and normalizes in one step.
pub fn load(text: &str) -> Result<NormalizedSystem, FrontendError> {
    let e = parse(text)?;
    Ok(negate_normalize(&e)?)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrontendError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Normalize(#[from] NormalizeError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::int;

    const QUADRATIC: &str =
        "(IMPLIES (= (+ (* A X X) (* B X) C) 0) (>= (- (* B B) (* 4 A C)) 0))";

    fn var(n: &str) -> Expr {
        Expr::Var(n.into())
    }

    fn poly(text: &str, vars: &Variables) -> Polynomial {
        Polynomial::parse(text, vars).unwrap()
    }

    #[test]
    fn parses_quadratic_conjecture() {
        let e = parse(QUADRATIC).unwrap();
        let Expr::Implies(h, c) = &e else { panic!("{e:?}") };
        assert!(matches!(h.as_ref(), Expr::Rel(RelOp::Eq, _, _)));
        assert!(matches!(c.as_ref(), Expr::Rel(RelOp::Ge, _, _)));
        assert_eq!(e.to_string(), QUADRATIC);
        assert_eq!(e.variables().names(), ["A", "X", "B", "C"]);
    }

    #[test]
    fn parses_single_atom_and_expt() {
        assert_eq!(
            parse("(> X 0)").unwrap(),
            Expr::Rel(RelOp::Gt, Box::new(var("X")), Box::new(Expr::lit(0)))
        );
        let e = parse("(<= (* X Y (EXPT (+ X Y) 2)) 1)").unwrap();
        let Expr::Rel(_, lhs, _) = e else { panic!() };
        let Expr::Mul(xs) = *lhs else { panic!() };
        assert_eq!(
            xs[2],
            Expr::Expt(Box::new(Expr::Add(vec![var("X"), var("Y")])), 2)
        );
    }

    #[test]
    fn operators_are_case_insensitive() {
        assert_eq!(
            parse("(implies (and (>= x 1)) (expt x 2))").unwrap_err(),
            ParseError::Syntax {
                pos: Pos { line: 1, col: 25 },
                msg: "expected a relation, found `(expt x 2)`".into()
            }
        );
        let e = parse("(implies (and (>= x 1) (>= y 1)) (>= (* x y) 1))").unwrap();
        assert_eq!(e.variables().names(), ["X", "Y"]);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse("(+ X 1"), Err(ParseError::Syntax { .. })));
        assert!(matches!(
            parse("(EXPT X Y)"),
            Err(ParseError::Arity { .. })
        ));
        assert!(matches!(
            parse("(> X)"),
            Err(ParseError::Arity { .. })
        ));
        assert!(matches!(
            parse("(SIN X)"),
            Err(ParseError::UnknownOperator { ref op, .. }) if op == "SIN"
        ));
        assert!(matches!(
            parse("(OR (> X 0) (< X 0))"),
            Err(ParseError::UnknownOperator { .. })
        ));
        assert!(matches!(
            parse("(> (+ X (= Y 0)) 0)"),
            Err(ParseError::BooleanInArithmetic { .. })
        ));
        assert!(matches!(parse("(> X 1.5)"), Err(ParseError::Syntax { .. })));
        let err = parse("(> X 0)\n(> Y 0)").unwrap_err();
        assert!(matches!(err, ParseError::Syntax { pos: Pos { line: 2, col: 1 }, .. }));
    }

    #[test]
    fn to_polynomial_examples() {
        let mut vars = Variables::from_names(["A", "B", "C", "X", "Y"]);
        let p = to_polynomial(&parse("(- (* B B) (* 4 A C))").unwrap(), &mut vars).unwrap();
        assert_eq!(p, poly("B^2 - 4*A*C", &vars));
        let p = to_polynomial(&parse("(- X)").unwrap(), &mut vars).unwrap();
        assert_eq!(p, poly("-X", &vars));
        let p = to_polynomial(&parse("(EXPT (+ (* X X) (* Y Y)) 2)").unwrap(), &mut vars).unwrap();
        assert_eq!(p, poly("X^4 + 2*X^2*Y^2 + Y^4", &vars));
        let p = to_polynomial(&parse("(- X 1 Y)").unwrap(), &mut vars).unwrap();
        assert_eq!(p, poly("X - Y - 1", &vars));
        let p = to_polynomial(&parse("(* 1/2 X)").unwrap(), &mut vars).unwrap();
        assert_eq!(p, poly("1/2*X", &vars));
    }

    #[test]
    fn to_polynomial_rejects_boolean() {
        let mut vars = Variables::new();
        let e = Expr::Add(vec![parse("(> X 0)").unwrap()]);
        assert_eq!(
            to_polynomial(&e, &mut vars),
            Err(NormalizeError::BooleanInArithmetic)
        );
    }

    #[test]
    fn normalizes_quadratic() {
        let sys = load(QUADRATIC).unwrap();
        assert_eq!(sys.vars.names(), ["A", "B", "C", "X"]);
        assert_eq!(sys.equations.len(), 1);
        assert_eq!(sys.equations[0].poly, poly("A*X^2 + B*X + C", &sys.vars));
        assert_eq!(sys.nonnegs.len(), 1);
        assert_eq!(sys.nonnegs[0].kind, RelKind::Gt);
        assert_eq!(sys.nonnegs[0].poly, poly("4*A*C - B^2", &sys.vars));
        assert_eq!(
            sys.nonnegs[0].expr.to_string(),
            "(- 0 (- (* B B) (* 4 A C)))"
        );
        assert!(sys.nonzeros.is_empty());
        assert_eq!(sys.monoid_eligible(), vec![MonoidSource::Strict(0)]);
    }

    #[test]
    fn normalizes_square_atom() {
        let sys = load("(>= (* X X) 0)").unwrap();
        assert!(sys.equations.is_empty());
        assert_eq!(sys.nonnegs.len(), 1);
        assert_eq!(sys.nonnegs[0].kind, RelKind::Gt);
        assert_eq!(sys.nonnegs[0].poly, poly("-X^2", &sys.vars));
    }

    #[test]
    fn normalizes_xy_example() {
        let sys = load(
            "(IMPLIES (AND (<= 0 X) (<= 0 Y) (= (* X Y) 1)) (<= (+ X Y) (+ (* X X) (* Y Y))))",
        )
        .unwrap();
        let v = &sys.vars;
        assert_eq!(sys.equations.len(), 1);
        assert_eq!(sys.equations[0].poly, poly("X*Y - 1", v));
        let nn: Vec<_> = sys.nonnegs.iter().map(|c| (c.poly.clone(), c.kind)).collect();
        assert_eq!(
            nn,
            vec![
                (poly("X", v), RelKind::Geq),
                (poly("Y", v), RelKind::Geq),
                (poly("X + Y - X^2 - Y^2", v), RelKind::Gt),
            ]
        );
        assert_eq!(sys.nonnegs[0].expr, var("X"));
    }

    #[test]
    fn negation_of_equalities() {
        let sys = load("(IMPLIES (/= X 1) (= X Y))").unwrap();
        assert_eq!(sys.nonzeros.len(), 2);
        assert_eq!(sys.nonzeros[1].poly, poly("X - Y", &sys.vars));
        let sys = load("(/= X 1)").unwrap();
        assert_eq!(sys.equations.len(), 1);
        assert_eq!(
            sys.monoid_eligible(),
            Vec::<MonoidSource>::new()
        );
    }

    #[test]
    fn unsupported_structure() {
        assert!(matches!(
            load("(IMPLIES (> X 0) (AND (> X 0) (> Y 0)))"),
            Err(FrontendError::Normalize(NormalizeError::UnsupportedBoolean(_)))
        ));
        assert!(matches!(
            load("(IMPLIES (IMPLIES (> X 0) (> Y 0)) (> Y 0))"),
            Err(FrontendError::Normalize(NormalizeError::UnsupportedBoolean(_)))
        ));
        assert!(matches!(
            load("(IMPLIES (> X 0) (IMPLIES (> X 0) (> Y 0)))"),
            Err(FrontendError::Normalize(NormalizeError::UnsupportedBoolean(_)))
        ));
        assert!(matches!(
            load("(+ X 1)"),
            Err(FrontendError::Normalize(NormalizeError::NotARelation))
        ));
    }

    #[test]
    fn semantic_spot_check() {
        let e = parse(QUADRATIC).unwrap();
        let sys = negate_normalize(&e).unwrap();
        // a=1, b=0, c=1 has no real root; x=0 falsifies the hypothesis
        for vals in [[1, 0, 0, 1], [1, 0, 2, -1], [0, 0, 0, 0], [1, 2, 3, 4]] {
            let point: BTreeMap<_, _> = sys.vars.ids().zip(vals).map(|(v, n)| (v, int(n))).collect();
            let conj = e.holds(&sys.vars, &point).unwrap();
            assert_eq!(!conj, sys.holds_at(&point));
        }
    }
}
