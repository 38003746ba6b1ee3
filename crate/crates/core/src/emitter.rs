//! ACL2 proof scripts for verified certificates, a structural linter for
//! such scripts and a small interpreter that reads them back as polynomials.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::certificate::{verify, Certificate};
use crate::frontend::{Expr, MonoidSource, NormalizedSystem, RelKind};
use crate::poly::{format_rational, parse_rational, Monomial, Polynomial, Rational, Variables};
use crate::sexpr::{read_all, SExp};

const PREAMBLE: &str = r#" (SET-IGNORE-OK T)
 (SET-IRRELEVANT-FORMALS-OK T)

 (LOCAL (DEFMACRO NEQ (X Y)
          `(OR (< ,X ,Y) (> ,X ,Y))))

 (LOCAL (DEFUN SQUARE (X)
          (* X X)))

 (LOCAL (DEFTHM SQUARE-PSD
          (IMPLIES (RATIONALP X)
                   (>= (SQUARE X) 0))
          :RULE-CLASSES (:LINEAR)))

 (LOCAL (DEFTHM SQUARE-TYPE
          (IMPLIES (RATIONALP X)
                   (RATIONALP (SQUARE X)))
          :RULE-CLASSES (:TYPE-PRESCRIPTION)))

 (LOCAL (IN-THEORY (DISABLE SQUARE)))

 (LOCAL (include-book "arithmetic-5/top" :dir :system))
"#;

/// Names the preamble introduces; the linter never reports them.
const PREAMBLE_NAMES: [&str; 4] = ["NEQ", "SQUARE", "SQUARE-PSD", "SQUARE-TYPE"];

const WIDTH: usize = 78;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    ProbDef(usize),
    GoalDef,
    IdealCofDef(usize),
    IdealCofType(usize),
    ConeCofDef(usize),
    ConeCofType(usize),
    ConeCofPsd(usize),
    MonoidCofDef(usize),
    CertDef,
    CertKey,
    ContraMonoid(usize),
    ContraCone(usize),
    ContraIdeal(usize),
    Contra,
    Main,
    Final,
}

#[derive(Debug, Clone)]
pub struct Event {
    pub kind: EventKind,
    /// Whether the form is wrapped in `LOCAL`.
    pub local: bool,
    pub form: SExp,
}

/// A complete script: the preamble followed by `sections`, each a comment
/// header and its events.
#[derive(Debug, Clone)]
pub struct ProofScript {
    pub sections: Vec<(&'static str, Vec<Event>)>,
}

impl ProofScript {
    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.sections.iter().flat_map(|(_, evs)| evs)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("(ENCAPSULATE ()\n\n;; Preamble\n\n");
        out.push_str(PREAMBLE);
        for (title, events) in &self.sections {
            out.push_str(&format!("\n;; {title}\n"));
            for ev in events {
                let form = if ev.local {
                    SExp::call("LOCAL", vec![ev.form.clone()])
                } else {
                    ev.form.clone()
                };
                out.push_str("\n ");
                out.push_str(&form.pretty(1, WIDTH));
                out.push('\n');
            }
        }
        out.pop();
        out.push_str(")\n");
        out
    }
}

impl fmt::Display for ProofScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmitError {
    #[error("certificate does not verify: {0}")]
    Unverified(String),
}

fn atom(s: impl Into<String>) -> SExp {
    SExp::atom(s)
}

fn call(head: &str, args: Vec<SExp>) -> SExp {
    SExp::call(head, args)
}

/// Right-nested binary application; `unit` for no arguments.
fn nest(op: &str, mut args: Vec<SExp>, unit: &str) -> SExp {
    match args.len() {
        0 => atom(unit),
        1 => args.pop().unwrap(),
        _ => {
            let first = args.remove(0);
            call(op, vec![first, nest(op, args, unit)])
        }
    }
}

/// `(AND ...)` only when there are at least two conjuncts.
fn conj(mut xs: Vec<SExp>) -> SExp {
    match xs.len() {
        0 => atom("T"),
        1 => xs.pop().unwrap(),
        _ => call("AND", xs),
    }
}

/// A term tree with `+` and `*` binarized to the right and `-` folded to the
/// left, the shape the theorem prover's rewriter expects.
pub fn binarize(e: &Expr) -> SExp {
    match e {
        Expr::Var(v) => atom(v.clone()),
        Expr::Lit(r) => atom(format_rational(r)),
        Expr::Add(xs) => nest("+", xs.iter().map(binarize).collect(), "0"),
        Expr::Mul(xs) => nest("*", xs.iter().map(binarize).collect(), "1"),
        Expr::Sub(xs) => {
            let mut it = xs.iter().map(binarize);
            let first = it.next().unwrap_or_else(|| atom("0"));
            if xs.len() == 1 {
                return call("-", vec![first]);
            }
            it.fold(first, |acc, x| call("-", vec![acc, x]))
        }
        Expr::Expt(b, k) => call("EXPT", vec![binarize(b), atom(k.to_string())]),
        other => other.to_sexp(),
    }
}

fn monomial_sexp(m: &Monomial, vars: &Variables) -> Option<SExp> {
    let factors: Vec<SExp> = m
        .factors()
        .iter()
        .flat_map(|&(v, e)| std::iter::repeat(atom(vars.name(v))).take(e as usize))
        .collect();
    (!factors.is_empty()).then(|| nest("*", factors, "1"))
}

/// `c·m` terms, leading term first, as a right-nested sum.
pub fn polynomial_sexp(p: &Polynomial, vars: &Variables) -> SExp {
    let terms = p
        .terms()
        .map(|(m, c)| match monomial_sexp(m, vars) {
            None => atom(format_rational(c)),
            Some(ms) if c.is_one() => ms,
            Some(ms) => call("*", vec![atom(format_rational(c)), ms]),
        })
        .collect();
    nest("+", terms, "0")
}

fn exact_sqrt(n: &num_bigint::BigInt) -> Option<num_bigint::BigInt> {
    let s = n.sqrt();
    (&s * &s == *n).then_some(s)
}

/// `w·p²`, folding the weight into the square where that keeps it exact.
fn weighted_square(w: &Rational, p: &Polynomial, vars: &Variables) -> SExp {
    if p.degree() == 0 {
        let c = p.coeff(&Monomial::one());
        return atom(format_rational(&(w * &c * &c)));
    }
    if w.is_one() {
        return call("SQUARE", vec![polynomial_sexp(p, vars)]);
    }
    match exact_sqrt(w.denom()) {
        Some(s) => {
            let folded = p.scale(&Rational::new(One::one(), s));
            let sq = call("SQUARE", vec![polynomial_sexp(&folded, vars)]);
            if w.numer().is_one() {
                sq
            } else {
                call("*", vec![atom(w.numer().to_string()), sq])
            }
        }
        None => call(
            "*",
            vec![
                call("/", vec![atom(w.numer().to_string()), atom(w.denom().to_string())]),
                call("SQUARE", vec![polynomial_sexp(p, vars)]),
            ],
        ),
    }
}

struct Ctx<'a> {
    sys: &'a NormalizedSystem,
    formals: Vec<SExp>,
}

impl Ctx<'_> {
    fn app(&self, name: &str) -> SExp {
        let mut items = vec![atom(name)];
        items.extend(self.formals.iter().cloned());
        SExp::list(items)
    }

    fn guards(&self) -> Vec<SExp> {
        self.formals
            .iter()
            .map(|v| call("RATIONALP", vec![v.clone()]))
            .collect()
    }

    fn guard(&self) -> SExp {
        conj(self.guards())
    }

    /// `(AND (NOT (GOAL ...)) guards...)`
    fn refuted_guard(&self) -> SExp {
        let mut xs = vec![call("NOT", vec![self.app("GOAL")])];
        xs.extend(self.guards());
        conj(xs)
    }

    fn defun(&self, definer: &str, name: &str, body: SExp) -> SExp {
        call(definer, vec![atom(name), SExp::list(self.formals.clone()), body])
    }

    fn prob_names(&self) -> Vec<String> {
        (0..self.sys.all_constraints().count())
            .map(|i| format!("PROB-{i}"))
            .collect()
    }
}

fn thm(name: &str, body: SExp, hints: Option<SExp>, rule_classes: Option<SExp>) -> SExp {
    let mut items = vec![atom("DEFTHM"), atom(name), body];
    if let Some(h) = hints {
        items.push(atom(":hints"));
        items.push(h);
    }
    if let Some(r) = rule_classes {
        items.push(atom(":rule-classes"));
        items.push(r);
    }
    SExp::list(items)
}

fn enable_hint(names: &[String]) -> SExp {
    let mut en = vec![atom("enable")];
    en.extend(names.iter().map(atom));
    goal_hint(vec![atom(":in-theory"), SExp::list(en)])
}

fn goal_hint(mut body: Vec<SExp>) -> SExp {
    body.insert(0, SExp::string("Goal"));
    SExp::list(vec![SExp::list(body)])
}

fn linear() -> SExp {
    SExp::list(vec![atom(":linear")])
}

fn ev(kind: EventKind, form: SExp) -> Event {
    Event {
        kind,
        local: kind != EventKind::Final,
        form,
    }
}

/// Builds the proof script for `conjecture` from a certificate that refutes
/// its negation `sys`. Certificates that do not verify are refused.
pub fn emit(conjecture: &Expr, sys: &NormalizedSystem, cert: &Certificate) -> Result<ProofScript, EmitError> {
    let report = verify(sys, cert);
    if !report.ok() {
        return Err(EmitError::Unverified(report.to_string()));
    }
    let vars = &sys.vars;
    let cx = Ctx {
        sys,
        formals: vars.names().iter().map(atom).collect(),
    };
    let mut sections: Vec<(&'static str, Vec<Event>)> = Vec::new();

    let probs: Vec<Event> = sys
        .all_constraints()
        .enumerate()
        .map(|(i, c)| ev(EventKind::ProbDef(i), cx.defun("DEFUND", &format!("PROB-{i}"), binarize(&c.expr))))
        .collect();
    let prob_atoms: Vec<SExp> = sys
        .all_constraints()
        .enumerate()
        .map(|(i, c)| {
            let p = cx.app(&format!("PROB-{i}"));
            let zero = atom("0");
            match c.kind {
                RelKind::Eq => call("=", vec![p, zero]),
                RelKind::Geq => call(">=", vec![p, zero]),
                RelKind::Gt => call(">", vec![p, zero]),
                RelKind::Neq => call("NEQ", vec![p, zero]),
            }
        })
        .collect();
    sections.push(("Normalized problem polynomials", probs));
    let goal_body = call("IMPLIES", vec![cx.guard(), call("NOT", vec![conj(prob_atoms)])]);
    sections.push((
        "Normalized goal expressed using problem polynomials",
        vec![ev(EventKind::GoalDef, cx.defun("DEFUN", "GOAL", goal_body))],
    ));

    let typed = |name: &str| {
        let body = call("IMPLIES", vec![cx.guard(), call("RATIONALP", vec![cx.app(name)])]);
        thm(&format!("{name}-TYPE"), body, Some(enable_hint(&[name.to_string()])), None)
    };

    let mut ideal_names = Vec::new();
    let mut ideal_events = Vec::new();
    for (i, c) in cert.ideal_cofactors.iter().enumerate() {
        let name = format!("IDEAL-CF-{i}");
        ideal_events.push(ev(EventKind::IdealCofDef(i), cx.defun("DEFUND", &name, polynomial_sexp(&c.cofactor, vars))));
        ideal_events.push(ev(EventKind::IdealCofType(i), typed(&name)));
        ideal_names.push(name);
    }
    if !ideal_events.is_empty() {
        sections.push(("Ideal cofactors", ideal_events));
    }

    let mut psd_enable = Vec::new();
    let mut cone_names = Vec::new();
    let mut cone_events = Vec::new();
    let prob_names = cx.prob_names();
    for t in &cert.cone_terms {
        for (w, p) in &t.sos.squares {
            let i = cone_names.len();
            let name = format!("CONE-CF-{i}");
            let mut factors = vec![weighted_square(w, p, vars)];
            factors.extend(t.product.iter().map(|&j| cx.app(&prob_names[sys.equations.len() + j])));
            cone_events.push(ev(EventKind::ConeCofDef(i), cx.defun("DEFUND", &name, nest("*", factors, "1"))));
            cone_events.push(ev(EventKind::ConeCofType(i), typed(&name)));
            psd_enable.clear();
            psd_enable.push(name.clone());
            psd_enable.extend(prob_names.iter().cloned());
            let body = call("IMPLIES", vec![cx.refuted_guard(), call(">=", vec![cx.app(&name), atom("0")])]);
            cone_events.push(ev(
                EventKind::ConeCofPsd(i),
                thm(&format!("{name}-PSD"), body, Some(enable_hint(&psd_enable)), Some(linear())),
            ));
            cone_names.push(name);
        }
    }
    if !cone_events.is_empty() {
        sections.push(("Cone cofactors", cone_events));
    }

    let mut monoid_names = Vec::new();
    let mut monoid_events = Vec::new();
    for (i, f) in cert.monoid.iter().enumerate() {
        let name = format!("MONOID-CF-{i}");
        let c = sys
            .monoid_constraint(f.source)
            .expect("verified certificates reference existing constraints");
        let body = nest("*", (0..f.power).map(|_| binarize(&c.expr)).collect(), "1");
        monoid_events.push(ev(EventKind::MonoidCofDef(i), cx.defun("DEFUND", &name, body)));
        monoid_names.push(name);
    }
    if !monoid_events.is_empty() {
        sections.push(("Monoid cofactors", monoid_events));
    }

    let monoid_term = {
        let m = nest("*", monoid_names.iter().map(|n| cx.app(n)).collect(), "1");
        if cert.monoid_exponent() == 2 {
            call("SQUARE", vec![m])
        } else {
            m
        }
    };
    let mut summands = vec![monoid_term];
    summands.extend(cone_names.iter().map(|n| cx.app(n)));
    let ideal_products: Vec<SExp> = cert
        .ideal_cofactors
        .iter()
        .zip(&ideal_names)
        .map(|(c, n)| call("*", vec![cx.app(n), cx.app(&prob_names[c.equation])]))
        .collect();
    summands.extend(ideal_products.iter().cloned());
    let cert_body = if summands.len() == 1 {
        summands.pop().unwrap()
    } else {
        call("+", summands)
    };
    sections.push((
        "Positivstellensatz certificate",
        vec![ev(EventKind::CertDef, cx.defun("DEFUN", "CERT", cert_body))],
    ));

    let mut key_enable = vec!["SQUARE".to_string(), "CERT".to_string()];
    key_enable.extend(prob_names.iter().cloned());
    key_enable.extend(ideal_names.iter().cloned());
    key_enable.extend(cone_names.iter().cloned());
    key_enable.extend(monoid_names.iter().cloned());
    let key_hint = || Some(enable_hint(&key_enable));

    let mut contra = Vec::new();
    let key_body = call("IMPLIES", vec![cx.guard(), call("=", vec![cx.app("CERT"), atom("0")])]);
    let mut key = thm("CERT-KEY", key_body, key_hint(), None);
    if let Some(items) = key.as_list() {
        let mut items = items.to_vec();
        items[0] = atom("DEFTHMD");
        key = SExp::list(items);
    }
    contra.push(ev(EventKind::CertKey, key));
    for (i, (n, f)) in monoid_names.iter().zip(&cert.monoid).enumerate() {
        let val = match f.source {
            MonoidSource::Strict(_) => cx.app(n),
            MonoidSource::Nonzero(_) => call("SQUARE", vec![cx.app(n)]),
        };
        let body = call("IMPLIES", vec![cx.refuted_guard(), call(">", vec![val, atom("0")])]);
        contra.push(ev(
            EventKind::ContraMonoid(i),
            thm(&format!("CERT-CONTRA-M-{i}"), body, key_hint(), Some(linear())),
        ));
    }
    for (i, n) in cone_names.iter().enumerate() {
        let body = call("IMPLIES", vec![cx.refuted_guard(), call(">=", vec![cx.app(n), atom("0")])]);
        contra.push(ev(
            EventKind::ContraCone(i),
            thm(&format!("CERT-CONTRA-C-{i}"), body, None, Some(linear())),
        ));
    }
    for (i, prod) in ideal_products.into_iter().enumerate() {
        let body = call("IMPLIES", vec![cx.refuted_guard(), call("=", vec![prod, atom("0")])]);
        contra.push(ev(
            EventKind::ContraIdeal(i),
            thm(&format!("CERT-CONTRA-I-{i}"), body, key_hint(), Some(linear())),
        ));
    }
    let body = call("IMPLIES", vec![cx.refuted_guard(), call("NEQ", vec![cx.app("CERT"), atom("0")])]);
    contra.push(ev(EventKind::Contra, thm("CERT-CONTRA", body, None, Some(atom("nil")))));
    sections.push(("Contradictory results on the sign of the certificate", contra));

    let main_hint = goal_hint(vec![
        atom(":in-theory"),
        call("disable", vec![atom("GOAL")]),
        atom(":use"),
        SExp::list(vec![atom("CERT-KEY"), atom("CERT-CONTRA")]),
    ]);
    let body = call("IMPLIES", vec![cx.guard(), cx.app("GOAL")]);
    sections.push((
        "Main lemma",
        vec![ev(EventKind::Main, thm("MAIN", body, Some(main_hint), Some(atom("nil"))))],
    ));

    let (hyps, concl) = match conjecture {
        Expr::Implies(h, c) => {
            let hyps = match h.as_ref() {
                Expr::And(xs) => xs.iter().map(Expr::to_sexp).collect(),
                other => vec![other.to_sexp()],
            };
            (hyps, c.to_sexp())
        }
        other => (Vec::new(), other.to_sexp()),
    };
    let mut final_hyps = cx.guards();
    final_hyps.extend(hyps);
    let mut en = vec![atom("enable"), atom("GOAL")];
    en.extend(prob_names.iter().map(atom));
    let final_hint = goal_hint(vec![
        atom(":in-theory"),
        SExp::list(en),
        atom(":use"),
        SExp::list(vec![atom("MAIN")]),
    ]);
    let body = call("IMPLIES", vec![conj(final_hyps), concl]);
    sections.push((
        "Final theorem",
        vec![ev(EventKind::Final, thm("FINAL", body, Some(final_hint), Some(atom("nil"))))],
    ));

    Ok(ProofScript { sections })
}

/// Collapses whitespace runs, drops spaces just inside parentheses and trims.
/// Two scripts are considered identical when their canonical forms match.
pub fn canonicalize(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.replace("( ", "(").replace(" )", ")")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    Syntax,
    Structure,
    Ordering,
    UndefinedName,
    VariableList,
    RationalityGuard,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

/// Names the emitter generates; only these are checked for definitions.
fn is_generated_name(n: &str) -> bool {
    let indexed = |prefix: &str| {
        n.strip_prefix(prefix)
            .and_then(|rest| rest.split('-').next())
            .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
    };
    matches!(n, "GOAL" | "CERT" | "CERT-KEY" | "CERT-CONTRA" | "MAIN" | "FINAL")
        || ["PROB-", "IDEAL-CF-", "CONE-CF-", "MONOID-CF-", "CERT-CONTRA-M-", "CERT-CONTRA-C-", "CERT-CONTRA-I-"]
            .iter()
            .any(|p| indexed(p))
}

struct TopEvent {
    local: bool,
    definer: String,
    name: String,
    form: SExp,
}

fn unwrap_event(form: &SExp) -> Option<TopEvent> {
    let (local, inner) = if form.head().as_deref() == Some("LOCAL") {
        (true, form.as_list()?.get(1)?)
    } else {
        (false, form)
    };
    let items = inner.as_list()?;
    Some(TopEvent {
        local,
        definer: inner.head()?,
        name: items.get(1).and_then(|s| s.as_atom()).unwrap_or("").to_ascii_uppercase(),
        form: inner.clone(),
    })
}

fn upper_atoms(s: &SExp, out: &mut Vec<String>) {
    if let Some(a) = s.as_atom() {
        out.push(a.to_ascii_uppercase());
    } else if let Some(items) = s.as_list() {
        items.iter().for_each(|i| upper_atoms(i, out));
    }
}

/// Call sites `(NAME args...)` of generated functions inside `s`.
fn calls<'a>(s: &'a SExp, out: &mut Vec<(String, &'a [SExp])>) {
    if let Some(items) = s.as_list() {
        if let Some(h) = items.first().and_then(|h| h.as_atom()) {
            let h = h.to_ascii_uppercase();
            if is_generated_name(&h) {
                out.push((h, &items[1..]));
            }
        }
        items.iter().for_each(|i| calls(i, out));
    }
}

/// Symbols named in `:in-theory (enable|disable ...)` and `:use (...)`.
fn hint_names(items: &[SExp]) -> Vec<String> {
    let mut names = Vec::new();
    let mut visit_hint = |hint: &SExp| {
        let Some(xs) = hint.as_list() else { return };
        for pair in xs.windows(2) {
            let kw = pair[0].as_atom().map(|a| a.to_ascii_lowercase());
            match kw.as_deref() {
                Some(":in-theory") => {
                    if let Some(l) = pair[1].as_list() {
                        l.iter().skip(1).for_each(|x| upper_atoms(x, &mut names));
                    }
                }
                Some(":use") => upper_atoms(&pair[1], &mut names),
                _ => {}
            }
        }
    };
    for pair in items.windows(2) {
        if pair[0].as_atom().map(|a| a.to_ascii_lowercase()).as_deref() == Some(":hints") {
            if let Some(hs) = pair[1].as_list() {
                hs.iter().for_each(&mut visit_hint);
            }
        }
    }
    names
}

/// Hypothesis conjuncts of `(IMPLIES hyp concl)`.
fn hypotheses(body: &SExp) -> Vec<SExp> {
    let Some(items) = body.as_list().filter(|_| body.head().as_deref() == Some("IMPLIES")) else {
        return Vec::new();
    };
    match items.get(1) {
        Some(h) if h.head().as_deref() == Some("AND") => h.as_list().unwrap()[1..].to_vec(),
        Some(h) => vec![h.clone()],
        None => Vec::new(),
    }
}

fn collect_vars(s: &SExp, out: &mut BTreeSet<String>) {
    match s.as_list() {
        Some(items) => {
            let start = usize::from(items.first().and_then(|h| h.as_atom()).is_some());
            items[start..].iter().for_each(|i| collect_vars(i, out));
        }
        None => {
            if let Some(a) = s.as_atom() {
                if parse_rational(a).is_none() {
                    out.insert(a.to_ascii_uppercase());
                }
            }
        }
    }
}

/// Checks a script for the mistakes that would make the prover reject it
/// for reasons unrelated to the mathematics.
pub fn lint(text: &str) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut diag = |kind, message: String| diags.push(Diagnostic { kind, message });
    let forms = match read_all(text) {
        Ok(f) => f,
        Err(e) => {
            diag(DiagnosticKind::Syntax, e.to_string());
            return diags;
        }
    };
    let body = match forms.as_slice() {
        [f] if f.head().as_deref() == Some("ENCAPSULATE") => &f.as_list().unwrap()[2.min(f.as_list().unwrap().len())..],
        _ => {
            diag(DiagnosticKind::Structure, "expected a single ENCAPSULATE form".into());
            return diags;
        }
    };

    let mut defined: BTreeSet<String> = BTreeSet::new();
    let mut formals: Option<Vec<String>> = None;
    let mut seen_final = false;
    let mut final_form = None;
    for form in body {
        let Some(ev) = unwrap_event(form) else {
            diag(DiagnosticKind::Structure, format!("not an event: {}", form.flat()));
            continue;
        };
        if PREAMBLE_NAMES.contains(&ev.name.as_str()) {
            defined.insert(ev.name.clone());
            continue;
        }
        if seen_final {
            diag(DiagnosticKind::Ordering, format!("{} appears after FINAL", ev.name));
        }
        if ev.name == "FINAL" {
            if ev.local {
                diag(DiagnosticKind::Structure, "FINAL must not be LOCAL".into());
            }
            if !defined.contains("MAIN") {
                diag(DiagnosticKind::Ordering, "FINAL precedes MAIN".into());
            }
            seen_final = true;
            final_form = Some(ev.form.clone());
        } else if is_generated_name(&ev.name) && !ev.local && ev.definer != "IN-THEORY" {
            diag(DiagnosticKind::Structure, format!("{} should be LOCAL", ev.name));
        }
        let items = ev.form.as_list().unwrap_or(&[]);
        let is_fn = matches!(ev.definer.as_str(), "DEFUN" | "DEFUND");
        let is_thm = matches!(ev.definer.as_str(), "DEFTHM" | "DEFTHMD");

        // definitions may be recursive in principle, so the name is
        // visible in its own body; theorems are not
        if is_fn {
            defined.insert(ev.name.clone());
        }
        let body_at = if is_fn { 3 } else { 2 };
        let mut sites = Vec::new();
        if is_fn || is_thm {
            if let Some(b) = items.get(body_at) {
                calls(b, &mut sites);
            }
        }
        let mut referenced: Vec<String> = sites.iter().map(|(n, _)| n.clone()).collect();
        referenced.extend(hint_names(items));
        for n in referenced.iter().filter(|n| is_generated_name(n) || PREAMBLE_NAMES.contains(&n.as_str())) {
            if !defined.contains(n) {
                diag(DiagnosticKind::UndefinedName, format!("{} refers to undefined {n}", ev.name));
            }
        }

        if is_fn {
            let f: Vec<String> = items
                .get(2)
                .and_then(|s| s.as_list())
                .map(|l| l.iter().filter_map(|a| a.as_atom()).map(|a| a.to_ascii_uppercase()).collect())
                .unwrap_or_default();
            match &formals {
                None => formals = Some(f),
                Some(expected) if *expected != f => diag(
                    DiagnosticKind::VariableList,
                    format!("{} takes ({}), expected ({})", ev.name, f.join(" "), expected.join(" ")),
                ),
                Some(_) => {}
            }
        }
        if let Some(expected) = &formals {
            for (n, args) in &sites {
                let got: Vec<String> = args.iter().map(|a| a.flat().to_ascii_uppercase()).collect();
                if got != *expected {
                    diag(
                        DiagnosticKind::VariableList,
                        format!("call ({n} {}) in {} does not pass ({})", got.join(" "), ev.name, expected.join(" ")),
                    );
                }
            }
        }

        let guarded_body = match ev.definer.as_str() {
            _ if is_thm => items.get(2),
            _ if ev.name == "GOAL" => items.get(3),
            _ => None,
        };
        if let (Some(b), Some(vs)) = (guarded_body, &formals) {
            let hyps: Vec<String> = hypotheses(b).iter().map(|h| h.flat().to_ascii_uppercase()).collect();
            for v in vs {
                if !hyps.contains(&format!("(RATIONALP {v})")) {
                    diag(DiagnosticKind::RationalityGuard, format!("{} lacks (RATIONALP {v})", ev.name));
                }
            }
        }
        if is_thm {
            defined.insert(ev.name.clone());
        }
    }
    if !seen_final {
        diag(DiagnosticKind::Structure, "no FINAL theorem".into());
    }
    if let (Some(f), Some(vs)) = (final_form, &formals) {
        if let Some(b) = f.as_list().and_then(|l| l.get(2)) {
            let mut stripped = hypotheses(b);
            stripped.retain(|h| h.head().as_deref() != Some("RATIONALP"));
            if let Some(c) = b.as_list().and_then(|l| l.get(2)) {
                stripped.push(c.clone());
            }
            let mut names = BTreeSet::new();
            stripped.iter().for_each(|s| collect_vars(s, &mut names));
            let order: Vec<String> = names.into_iter().collect();
            if order != *vs {
                diag(
                    DiagnosticKind::VariableList,
                    format!("formals ({}) are not the conjecture's variables in sorted order ({})", vs.join(" "), order.join(" ")),
                );
            }
        }
    }
    diags
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InterpretError {
    #[error("read error: {0}")]
    Read(String),
    #[error("cannot evaluate `{0}`")]
    Unsupported(String),
    #[error("{0} is not defined")]
    Undefined(String),
}

/// Definitions found in a script, read back as polynomials.
#[derive(Debug, Clone)]
pub struct Interpretation {
    pub vars: Variables,
    /// `PROB-i` bodies in index order.
    pub problems: Vec<Polynomial>,
    /// The `CERT` body, fully expanded.
    pub cert: Polynomial,
}

struct Interp {
    defs: HashMap<String, (Vec<String>, SExp)>,
    vars: Variables,
}

impl Interp {
    fn eval(&self, s: &SExp, env: &HashMap<String, Polynomial>) -> Result<Polynomial, InterpretError> {
        let bad = || InterpretError::Unsupported(s.flat());
        if let Some(a) = s.as_atom() {
            let up = a.to_ascii_uppercase();
            if let Some(r) = parse_rational(a) {
                return Ok(Polynomial::constant(r));
            }
            return env.get(&up).cloned().ok_or_else(|| InterpretError::Undefined(up));
        }
        let items = s.as_list().ok_or_else(bad)?;
        let head = s.head().ok_or_else(bad)?;
        let args = items[1..]
            .iter()
            .map(|a| self.eval(a, env))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(match head.as_str() {
            "+" => args.into_iter().sum(),
            "*" => args.into_iter().product(),
            "-" if args.len() == 1 => -&args[0],
            "-" => {
                let mut it = args.into_iter();
                let first = it.next().ok_or_else(bad)?;
                it.fold(first, |acc, x| &acc - &x)
            }
            "/" if args.len() == 2 && args[1].degree() == 0 => {
                let d = args[1].coeff(&Monomial::one());
                if d.is_zero() {
                    return Err(bad());
                }
                args[0].scale(&d.recip())
            }
            "SQUARE" if args.len() == 1 => &args[0] * &args[0],
            "EXPT" if args.len() == 2 && args[1].degree() == 0 => {
                let k = args[1].coeff(&Monomial::one());
                if !k.is_integer() || k.is_negative() {
                    return Err(bad());
                }
                let k: u32 = k.to_integer().try_into().map_err(|_| bad())?;
                args[0].pow(k)
            }
            name => {
                let (formals, body) = self
                    .defs
                    .get(name)
                    .ok_or_else(|| InterpretError::Undefined(name.to_string()))?;
                if formals.len() != args.len() {
                    return Err(bad());
                }
                let inner = formals.iter().cloned().zip(args).collect();
                self.eval(body, &inner)?
            }
        })
    }
}

/// Reads the function definitions of `text` and expands `PROB-i` and `CERT`
/// into polynomials over the formals of the first definition.
pub fn interpret(text: &str) -> Result<Interpretation, InterpretError> {
    let forms = read_all(text).map_err(|e| InterpretError::Read(e.to_string()))?;
    let mut defs = HashMap::new();
    let mut order = Vec::new();
    let mut stack: Vec<&SExp> = forms.iter().collect();
    stack.reverse();
    while let Some(f) = stack.pop() {
        match f.head().as_deref() {
            Some("ENCAPSULATE") | Some("LOCAL") => {
                let items = f.as_list().unwrap();
                let skip = if f.head().as_deref() == Some("ENCAPSULATE") { 2 } else { 1 };
                items.iter().skip(skip).rev().for_each(|x| stack.push(x));
            }
            Some("DEFUN") | Some("DEFUND") => {
                let items = f.as_list().unwrap();
                let (Some(name), Some(formals), Some(body)) =
                    (items.get(1).and_then(|n| n.as_atom()), items.get(2).and_then(|l| l.as_list()), items.get(3))
                else {
                    return Err(InterpretError::Unsupported(f.flat()));
                };
                let formals: Vec<String> = formals.iter().filter_map(|a| a.as_atom()).map(|a| a.to_ascii_uppercase()).collect();
                let name = name.to_ascii_uppercase();
                if name != "SQUARE" {
                    order.push(name.clone());
                }
                defs.insert(name, (formals, body.clone()));
            }
            _ => {}
        }
    }
    let formals = order
        .first()
        .and_then(|n| defs.get(n))
        .map(|(f, _)| f.clone())
        .unwrap_or_default();
    let vars = Variables::from_names(formals.iter());
    let interp = Interp { defs, vars };
    let env: HashMap<String, Polynomial> = interp
        .vars
        .ids()
        .map(|v| (interp.vars.name(v).to_string(), Polynomial::var(v)))
        .collect();
    let mut problems = Vec::new();
    while let Some((_, body)) = interp.defs.get(&format!("PROB-{}", problems.len())) {
        problems.push(interp.eval(body, &env)?);
    }
    let (_, cert_body) = interp.defs.get("CERT").ok_or_else(|| InterpretError::Undefined("CERT".into()))?;
    let cert = interp.eval(cert_body, &env)?;
    Ok(Interpretation {
        vars: interp.vars,
        problems,
        cert,
    })
}
